//! The causal side: task models, DAS mediator search, gradient subspaces.

mod das;
mod gradient;
mod model;

pub use das::{
    das_fit, das_fit_seeds, plateaued, DasConfig, DasFitResult, DasMultiFit, CONVERGENCE_LOOKBACK,
    CONVERGENCE_WINDOW,
};
pub use gradient::{
    gradient_matrix, gradient_subspace, perturbation_response, slope_through_origin,
    subspace_cca, subspace_of_gradients, GradientSubspace, PerturbationResponse,
};
pub use model::{
    model_from_cache, Evaluation, LinearSoftmaxModel, SyntheticMediatorModel, TaskModel,
};
