use msc_core::geometry::{haar_sample, Subspace};
use msc_core::linalg::Mat;
use msc_core::mediator::SyntheticMediatorModel;
use msc_core::probes::CircularProbe;
use msc_core::rng;
use msc_core::safety::{
    ablation_invisibility, adversarial_inject, adversarial_sweep, evenly_spaced_days, ksg_mutual_information,
    opposite_day, phase_shuffle_pvalue, run_safety_battery, AdversarialSpec, SafetyConfig,
};
use msc_core::tensor_io::{generate_synthetic_suite, names, ActivationCache, SyntheticSuiteSpec};
use statrs::distribution::{ContinuousCDF, Uniform};

struct Suite {
    cache: ActivationCache,
    x: Mat,
    means: Mat,
    probe: CircularProbe,
    mediator: Subspace,
}

fn suite() -> Suite {
    let cache = generate_synthetic_suite(&SyntheticSuiteSpec::default()).unwrap();
    let x = cache.activations().unwrap();
    let doy = cache.usizes(names::DOY).unwrap();
    let probe = CircularProbe::fit(&x, &doy, 1.0, 1).unwrap();
    Suite {
        means: cache.matrix(names::DOY_MEANS).unwrap(),
        mediator: cache.subspace("mediator").unwrap(),
        cache,
        x,
        probe,
    }
}

fn row(m: &Mat, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

#[test]
fn zero_scales_leave_the_input_alone() {
    let s = suite();
    let spec = AdversarialSpec::new(0.0, 0.0, s.mediator.clone(), &s.probe).unwrap();
    let x = row(&s.means, 40);
    let adv = adversarial_inject(&x, &spec, 41, opposite_day(41), &s.means, &s.probe).unwrap();
    assert_eq!(adv, x);
}

#[test]
fn the_two_components_act_on_separate_coordinates() {
    let s = suite();
    let base = AdversarialSpec::new(1.0, 1.0, s.mediator.clone(), &s.probe).unwrap();
    let x = row(&s.means, 99);
    let inject = |a: f64, b: f64| {
        adversarial_inject(&x, &base.with_scales(a, b), 100, opposite_day(100), &s.means, &s.probe).unwrap()
    };
    let med = |v: &[f64]| s.mediator.coords(v);
    let comp = |v: &[f64]| base.probe_complement.coords(v);
    for (p, q) in med(&inject(2.0, 0.0)).iter().zip(med(&inject(2.0, 5.0))) {
        assert!((p - q).abs() < 1e-9);
    }
    for (p, q) in comp(&inject(0.0, 1.5)).iter().zip(comp(&inject(4.0, 1.5))) {
        assert!((p - q).abs() < 1e-9);
    }
}

#[test]
fn mechanism_moves_while_the_probe_holds() {
    let s = suite();
    let spec = AdversarialSpec::new(1.0, 1.0, s.mediator.clone(), &s.probe).unwrap();
    let cells = adversarial_sweep(&s.means, &spec, &s.probe, &[0.0, 1.0], &[0.0, 1.0], &evenly_spaced_days(7)).unwrap();
    assert_eq!(cells.len(), 4);
    let clean = &cells[0];
    assert!(clean.mediator_shift_days < 1.0 && clean.relative_norm == 0.0);
    let full = cells.iter().find(|c| c.alpha == 1.0 && c.beta == 1.0).unwrap();
    assert!(full.mediator_shift_days > 30.0, "{full:?}");
    assert!(full.probe_rmse_days < full.mediator_shift_days, "{full:?}");
}

#[test]
fn ablating_nothing_shifts_nothing_and_the_probe_frame_shifts_most() {
    let s = suite();
    let xs = s.x.rows(0, 730).into_owned();
    let zero = Subspace::from_orthonormal(Mat::zeros(0, 256)).unwrap();
    let none = msc_core::safety::probe_shift(&s.probe, &xs, &zero).unwrap();
    assert_eq!(none, 0.0);

    let probe_frame = s.cache.subspace("probe_signal").unwrap();
    let inv = ablation_invisibility(&s.probe, &probe_frame, None, &xs, 20, 3).unwrap();
    assert!(inv.probe_shift_days > inv.random_median, "{inv:?}");
    assert_eq!(inv.random_shifts.len(), 20);
}

#[test]
fn mediator_ablation_damages_the_task_but_not_the_probe() {
    let s = suite();
    let model = SyntheticMediatorModel::from_cache(&s.cache).unwrap();
    let labels = s.cache.usizes(names::LABELS).unwrap();
    let xs = s.x.rows(0, 730).into_owned();
    let inv = ablation_invisibility(&s.probe, &s.mediator, Some((&model, &labels[..730])), &xs, 20, 4).unwrap();
    assert!(inv.delta_nll.unwrap() > 0.1, "{inv:?}");
    assert!(inv.probe_shift_days <= inv.random_mean + 3.0 * inv.random_sd, "{inv:?}");
}

fn white_pair(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng::stream(seed);
    (rng::gaussian_vec(&mut r, n), rng::gaussian_vec(&mut r, n))
}

#[test]
fn phase_shuffle_pvalues_are_uniform_under_independence() {
    let pvals: Vec<f64> = (0..40)
        .map(|rep| {
            let (a, b) = white_pair(128, 1000 + rep);
            phase_shuffle_pvalue(&a, &b, 5, 50, rep).unwrap().p_phase_shuffle.unwrap()
        })
        .collect();
    let mut sorted = pvals.clone();
    sorted.sort_by(f64::total_cmp);
    let u = Uniform::new(0.0, 1.0).unwrap();
    let n = sorted.len() as f64;
    let ks = sorted
        .iter()
        .enumerate()
        .map(|(i, &p)| ((i + 1) as f64 / n - u.cdf(p)).max(u.cdf(p) - i as f64 / n))
        .fold(0.0, f64::max);
    // 1% critical value for n = 40.
    assert!(ks < 1.63 / n.sqrt(), "KS {ks:.3}");
}

#[test]
fn processing_one_side_does_not_add_information() {
    let n = 2000;
    let (a, e) = white_pair(n, 9);
    let b: Vec<f64> = a.iter().zip(&e).map(|(x, z)| x + 0.5 * z).collect();
    let noisy: Vec<f64> = {
        let mut r = rng::stream(10);
        b.iter().map(|v| v + 2.0 * rng::gaussian(&mut r)).collect()
    };
    let direct = ksg_mutual_information(&a, &b, 5).unwrap().mi_nats;
    let processed = ksg_mutual_information(&a, &noisy, 5).unwrap().mi_nats;
    assert!(processed < direct, "{processed} vs {direct}");
}

#[test]
fn battery_reports_four_experiments() {
    let s = suite();
    let model = SyntheticMediatorModel::from_cache(&s.cache).unwrap();
    let labels = s.cache.usizes(names::LABELS).unwrap();
    let n = 730;
    let xs = s.x.rows(0, n).into_owned();
    let mut cfg = SafetyConfig::new(11);
    cfg.n_shuffles = 50;
    cfg.null_draws = 200;
    cfg.n_random = 10;
    let b = run_safety_battery(&model, &xs, &labels[..n], &s.means, &s.probe, &s.mediator, &cfg).unwrap();
    assert_eq!(b.table.len(), 4);
    assert_eq!(b.injection.len(), cfg.alphas.len() * cfg.betas.len());
    assert_eq!(b.table[0].verdict, "PASS");
    let again = run_safety_battery(&model, &xs, &labels[..n], &s.means, &s.probe, &s.mediator, &cfg).unwrap();
    assert_eq!(serde_json::to_string(&b).unwrap(), serde_json::to_string(&again).unwrap());
}

#[test]
fn a_random_frame_is_neither_mediator_nor_complement() {
    let u = haar_sample(256, 4, 77).unwrap();
    let s = suite();
    assert!(AdversarialSpec::with_complement(1.0, 1.0, s.mediator.clone(), u).is_err());
}
