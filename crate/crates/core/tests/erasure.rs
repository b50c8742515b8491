use msc_core::erasure::{inlp_basis, project_out, Concept, LeaceEraser};
use msc_core::geometry::principal_angles;
use msc_core::null::monte_carlo_null;
use msc_core::null::Statistic;
use msc_core::probes::fit_circular_probe;
use msc_core::tensor_io::{generate_synthetic_suite, names, SyntheticSuiteSpec};

#[test]
fn inlp_and_leace_erase_the_day_signal() {
    let cache = generate_synthetic_suite(&SyntheticSuiteSpec::default()).unwrap();
    let x = cache.activations().unwrap();
    let doy = cache.usizes(names::DOY).unwrap();
    let concept = Concept::Circular { doys: doy.clone(), harmonics: 1 };
    let before = fit_circular_probe(&x, &doy, 1.0, 5, 1, 2).unwrap().score;
    assert!(before > 0.5, "{before}");

    let inlp = inlp_basis(&x, &concept, 4, 1.0).unwrap();
    let after_inlp = fit_circular_probe(&project_out(&x, &inlp.subspace), &doy, 1.0, 5, 1, 2).unwrap().score;
    assert!(after_inlp < 0.05, "post-INLP R² {after_inlp}");

    let leace = LeaceEraser::fit(&x, &concept).unwrap();
    let after_leace = fit_circular_probe(&leace.erase(&x).unwrap(), &doy, 1.0, 5, 1, 2).unwrap().score;
    assert!(after_leace < 0.05, "post-LEACE R² {after_leace}");
}

#[test]
fn inlp_basis_is_not_aligned_with_the_mediator() {
    let cache = generate_synthetic_suite(&SyntheticSuiteSpec::default()).unwrap();
    let x = cache.activations().unwrap();
    let doy = cache.usizes(names::DOY).unwrap();
    let mediator = cache.subspace("mediator").unwrap();
    let inlp = inlp_basis(&x, &Concept::Circular { doys: doy, harmonics: 1 }, 4, 1.0).unwrap();
    let theta = principal_angles(&inlp.subspace, &mediator).unwrap().mean_angle;
    let null = monte_carlo_null(256, 4, 4, 500, 1, Some(&mediator)).unwrap();
    // Never closer to the mediator than a random frame would be.
    assert!(theta >= null.quantile(Statistic::MeanAngle, 0.05));
}
