//! Readout-mediator subspace diagnostics.
//!
//! Tools for checking whether the subspace where a linear probe reads a
//! variable coincides with the subspace whose ablation breaks the task:
//! principal angles and Haar nulls, ridge probes, DAS mediator search,
//! erasure baselines, specificity ratios, attention-head offset scans,
//! manifold-deviation scoring and probe-monitoring stress tests.

pub mod deviation;
pub mod diagnostics;
pub mod erasure;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod mediator;
pub mod null;
pub mod probes;
pub mod qk;
pub mod rng;
pub mod safety;
pub mod tensor_io;

pub use error::{MscError, Result};
pub use geometry::{PrincipalAngleSet, Subspace};
