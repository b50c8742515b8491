use msc_core::diagnostics::{run_diagnostic, subset_ablation_sweep, DiagnosticConfig};
use msc_core::erasure::{inlp_basis, leace_basis, pca_basis, Concept};
use msc_core::geometry::{haar_sample, Subspace};
use msc_core::linalg::{mean, Mat};
use msc_core::mediator::{das_fit, DasConfig, LinearSoftmaxModel, SyntheticMediatorModel, TaskModel};
use msc_core::probes::fit_circular_probe;
use msc_core::rng;
use msc_core::tensor_io::{generate_synthetic_suite, names, SyntheticSuiteSpec};

fn load(spec: &SyntheticSuiteSpec) -> (SyntheticMediatorModel, Mat, Vec<usize>, Vec<usize>) {
    let cache = generate_synthetic_suite(spec).unwrap();
    (
        SyntheticMediatorModel::from_cache(&cache).unwrap(),
        cache.activations().unwrap(),
        cache.usizes(names::LABELS).unwrap(),
        cache.usizes(names::DOY).unwrap(),
    )
}

#[test]
fn planted_suite_dissociates_probe_and_mediator() {
    let (model, x, y, doy) = load(&SyntheticSuiteSpec::default());
    let report = run_diagnostic(&model, &x, &y, &doy, &DiagnosticConfig::new(4, 7)).unwrap();

    let planted = model.evaluate(&x, &y, Some(&model.mediator)).unwrap().accuracy(&y);
    let ceiling = 100.0 * (report.clean_accuracy - planted);
    assert!(report.delta_m >= 0.4 * ceiling, "{} of {ceiling}", report.delta_m);
    assert!(report.delta_p.abs() < 2.0);
    assert!(report.random_drops.iter().all(|d| d.abs() < 2.0));
    assert_eq!(report.random_drops.len(), 25);
    // The probe drop sits inside the random-control envelope.
    assert!(report.delta_p >= report.random_envelope.0 - 1e-9 && report.delta_p <= report.random_envelope.1 + 1e-9);
    // Not closer than chance: the probe is orthogonal to the planted mediator.
    assert!(report.theta_bar > report.null_band.0);
    if let Some(rho) = report.rho_k {
        assert!((rho * report.random_mean - report.delta_m).abs() < 1e-9);
    }
    assert!((report.delta_add - (report.delta_m - report.random_mean)).abs() < 1e-12);
    assert!(report.random_envelope.0 <= report.random_envelope.1);
}

#[test]
fn diagnostic_is_deterministic() {
    let spec = SyntheticSuiteSpec {
        d: 64,
        n_prompts: 730,
        ..Default::default()
    };
    let (model, x, y, doy) = load(&spec);
    let mut cfg = DiagnosticConfig::new(4, 3);
    cfg.das_steps = 60;
    cfg.angle_null_draws = 200;
    let a = run_diagnostic(&model, &x, &y, &doy, &cfg).unwrap();
    let b = run_diagnostic(&model, &x, &y, &doy, &cfg).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    cfg.n_null = 4;
    assert!(run_diagnostic(&model, &x, &y, &doy, &cfg).is_err());
}

#[test]
fn constant_model_is_flagged_zero_signal() {
    let spec = SyntheticSuiteSpec {
        d: 32,
        n_prompts: 730,
        ..Default::default()
    };
    let (_, x, y, doy) = load(&spec);
    let flat = LinearSoftmaxModel::new(Mat::zeros(8, 32), vec![0.0; 8]).unwrap();
    let mut cfg = DiagnosticConfig::new(2, 1);
    cfg.das_steps = 60;
    cfg.angle_null_draws = 100;
    let r = run_diagnostic(&flat, &x, &y, &doy, &cfg).unwrap();
    assert_eq!(r.delta_m, 0.0);
    assert_eq!(r.delta_p, 0.0);
    assert!(r.rho_k.is_none());
    assert!(r.flags.iter().any(|f| f == "zero-signal"));
}

/// NLL = Σ_j w_j (c_j − 1)² in the frame coordinates `c`; each channel acts alone.
struct AdditiveModel {
    frame: Subspace,
    weights: Vec<f64>,
}

impl TaskModel for AdditiveModel {
    fn dim(&self) -> usize {
        self.frame.dim()
    }
    fn evaluate_one(&self, x: &[f64], _label: usize) -> (f64, usize) {
        let c = self.frame.coords(x);
        (c.iter().zip(&self.weights).map(|(c, w)| w * (c - 1.0).powi(2)).sum(), 0)
    }
    fn gradient(&self, x: &[f64], _label: usize) -> Vec<f64> {
        let c = self.frame.coords(x);
        let mut g = vec![0.0; self.dim()];
        for (j, (cj, w)) in c.iter().zip(&self.weights).enumerate() {
            for (gi, b) in g.iter_mut().zip(self.frame.basis().row(j).iter()) {
                *gi += 2.0 * w * (cj - 1.0) * b;
            }
        }
        g
    }
}

/// NLL = softplus(−4·max_j c_j): the signal survives while any channel does.
struct CooperativeModel {
    frame: Subspace,
}

impl TaskModel for CooperativeModel {
    fn dim(&self) -> usize {
        self.frame.dim()
    }
    fn evaluate_one(&self, x: &[f64], _label: usize) -> (f64, usize) {
        let m = self.frame.coords(x).into_iter().fold(f64::NEG_INFINITY, f64::max);
        ((1.0 + (-4.0 * m).exp()).ln(), 0)
    }
    fn gradient(&self, x: &[f64], _label: usize) -> Vec<f64> {
        let c = self.frame.coords(x);
        let (j, m) = c.iter().enumerate().fold((0, f64::NEG_INFINITY), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
        let s = -4.0 / (1.0 + (4.0 * m).exp());
        self.frame.basis().row(j).iter().map(|b| s * b).collect()
    }
}

fn channel_data(frame: &Subspace, n: usize, seed: u64) -> Mat {
    let mut g = rng::stream(seed);
    let d = frame.dim();
    Mat::from_fn(n, d, |_, _| 0.1 * rng::gaussian(&mut g)) + Mat::from_fn(n, frame.rank(), |_, _| 1.0) * frame.basis()
}

#[test]
fn additive_model_pairs_sum_singles() {
    let frame = haar_sample(16, 3, 1).unwrap();
    let model = AdditiveModel {
        frame: frame.clone(),
        weights: vec![1.0, 2.0, 0.5],
    };
    let x = channel_data(&frame, 500, 2);
    let y = vec![0; 500];
    let sweep = subset_ablation_sweep(&model, &x, &y, &frame, None).unwrap();
    for pair in [[0, 1], [0, 2], [1, 2]] {
        let expected = sweep.singles[pair[0]] + sweep.singles[pair[1]];
        let observed = sweep.effect(&pair).unwrap();
        assert!((observed - expected).abs() < 1e-9 * expected.max(1.0));
    }
    assert!((sweep.cooperation_ratio.unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn cooperative_model_has_large_ratio() {
    let frame = haar_sample(16, 4, 3).unwrap();
    let model = CooperativeModel { frame: frame.clone() };
    let x = channel_data(&frame, 500, 4);
    let y = vec![0; 500];
    let sweep = subset_ablation_sweep(&model, &x, &y, &frame, None).unwrap();
    assert!(sweep.cooperation_ratio.unwrap() > 2.0, "{:?}", sweep.cooperation_ratio);
    assert_eq!(sweep.subsets.len(), 15);
}

#[test]
fn rank_one_ratio_is_one() {
    let frame = haar_sample(16, 1, 5).unwrap();
    let model = AdditiveModel {
        frame: frame.clone(),
        weights: vec![1.0],
    };
    let x = channel_data(&frame, 50, 6);
    let sweep = subset_ablation_sweep(&model, &x, &vec![0; 50], &frame, None).unwrap();
    assert_eq!(sweep.cooperation_ratio, Some(1.0));
}

/// DAS ≫ PCA ≥ probe / INLP / LEACE ≈ random, in mean ablation ΔNLL.
#[test]
fn baselines_order_along_the_spectrum() {
    let spec = SyntheticSuiteSpec {
        nuisance_rank: 2,
        snr_nuisance: 12.0,
        ..Default::default()
    };
    let (model, x, y, doy) = load(&spec);
    let clean = model.evaluate(&x, &y, None).unwrap().mean_nll();
    let damage = |u: &Subspace| model.evaluate(&x, &y, Some(u)).unwrap().mean_nll() - clean;

    let das = das_fit(&model, &x, &y, &DasConfig::new(4, 1).with_steps(1500)).unwrap().subspace;
    let pca = pca_basis(&x, 4).unwrap().subspace;
    let probe = fit_circular_probe(&x, &doy, 1.0, 5, 2, 4).unwrap().subspace;
    let concept = Concept::Circular { doys: doy.clone(), harmonics: 1 };
    let inlp = inlp_basis(&x, &concept, 4, 1.0).unwrap().subspace;
    let leace = leace_basis(&x, &concept, 2).unwrap().subspace;
    let random: Vec<f64> = (0..20).map(|j| damage(&haar_sample(256, 4, 1000 + j).unwrap())).collect();
    let random_max = random.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let (d_das, d_pca) = (damage(&das), damage(&pca));
    let readers = [damage(&probe), damage(&inlp), damage(&leace)];
    assert!(d_das > d_pca, "DAS {d_das} vs PCA {d_pca}");
    for r in readers {
        assert!(d_pca >= r, "PCA {d_pca} vs reader {r}");
        assert!(r <= random_max + 1e-3, "reader {r} vs random max {random_max}");
    }
    assert!(d_das > 10.0 * mean(&random).abs().max(1e-6));
}
