//! Subcommand parameters and implementations.

use std::path::{Path, PathBuf};

use clap::Args;
use msc_core::deviation::{
    calibration_report, manifold_deviation, reference_basis, spearman, write_query_csv, CalibrationReport,
    QueryRecord,
};
use msc_core::diagnostics::{run_diagnostic, subset_ablation_sweep, DiagnosticConfig, MAX_SWEEP_RANK};
use msc_core::geometry::{principal_angles, tfa_split, Subspace};
use msc_core::linalg::{mean, Mat};
use msc_core::mediator::{
    das_fit_seeds, gradient_subspace, model_from_cache, subspace_cca, DasConfig,
};
use msc_core::null::{monte_carlo_null, monte_carlo_null_whitened, whiten, Statistic};
use msc_core::probes::{
    bootstrap_angle_ci, circular_day_distance, fit_circular_probe, ProbeRecipe, DEFAULT_FOLDS, DEFAULT_RIDGE_ALPHA,
};
use msc_core::qk::{
    offset_modes, scan_heads, write_scan_csv, HeadTensors, ScanConfig, DEFAULT_FDR_LEVEL, DEFAULT_PERMUTATIONS,
};
use msc_core::rng;
use msc_core::safety::{run_safety_battery, SafetyConfig};
use msc_core::tensor_io::{generate_synthetic_suite, names, ActivationCache, SyntheticSuiteSpec, TensorRecord};
use msc_core::MscError;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};
use crate::report::{merge_config, write_text, Report};

const DEFAULT_SEED: u64 = 7;
const TAG_HEADS: u64 = 0x4845_4144;

/// Input cache and report destination.
#[derive(Args, Debug)]
pub struct Io {
    /// Cache directory to read.
    #[arg(long)]
    pub cache: PathBuf,
    /// Report path; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn open(io: &Io) -> CliResult<ActivationCache> {
    Ok(ActivationCache::open(&io.cache)?)
}

fn basis_rows(u: &Subspace) -> Vec<Vec<f64>> {
    (0..u.rank()).map(|i| u.basis().row(i).iter().copied().collect()).collect()
}

fn planted_mediator(cache: &ActivationCache) -> Option<Subspace> {
    cache.contains(names::MEDIATOR).then(|| cache.subspace("mediator").ok()).flatten()
}

fn angle_summary(a: &Subspace, b: &Subspace) -> CliResult<Value> {
    let angles = principal_angles(a, b)?;
    Ok(json!({
        "mean_angle_deg": angles.mean_angle_deg(),
        "angles_deg": angles.degrees(),
        "sum_cos2": angles.sum_cos2,
    }))
}

fn positive(name: &str, v: usize) -> CliResult<usize> {
    if v == 0 {
        return Err(CliError::Usage(format!("--{name} must be at least 1")));
    }
    Ok(v)
}

// ---------------------------------------------------------------- synth-gen

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub k_med: Option<usize>,
    #[arg(long)]
    pub n_classes: Option<usize>,
    #[arg(long)]
    pub n_prompts: Option<usize>,
    #[arg(long)]
    pub snr_med: Option<f64>,
    #[arg(long)]
    pub snr_probe: Option<f64>,
    #[arg(long)]
    pub nuisance_rank: Option<usize>,
    #[arg(long)]
    pub snr_nuisance: Option<f64>,
    #[arg(long)]
    pub prior_logit: Option<f64>,
    /// Random attention heads to store for `qk-scan`.
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub d_head: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Cache directory to create.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub params: SynthParams,
}

pub fn synth_gen(args: SynthArgs, config: Option<&Path>) -> CliResult<()> {
    let p = merge_config(args.params, config)?;
    let def = SyntheticSuiteSpec::default();
    let spec = SyntheticSuiteSpec {
        d: p.d.unwrap_or(def.d),
        k_med: p.k_med.unwrap_or(def.k_med),
        n_classes: p.n_classes.unwrap_or(def.n_classes),
        n_prompts: p.n_prompts.unwrap_or(def.n_prompts),
        snr_med: p.snr_med.unwrap_or(def.snr_med),
        snr_probe: p.snr_probe.unwrap_or(def.snr_probe),
        seed: p.seed.unwrap_or(def.seed),
        nuisance_rank: p.nuisance_rank.unwrap_or(def.nuisance_rank),
        snr_nuisance: p.snr_nuisance.unwrap_or(def.snr_nuisance),
        prior_logit: p.prior_logit.unwrap_or(def.prior_logit),
    };
    let mut cache = generate_synthetic_suite(&spec)?;
    let n_heads = p.n_heads.unwrap_or(8);
    if n_heads > 0 {
        add_random_heads(&mut cache, spec.d, n_heads, positive("d-head", p.d_head.unwrap_or(8))?, spec.seed)?;
    }
    cache.save(&args.out)?;
    let saved = ActivationCache::open(&args.out)?;
    let report = Report::new("synth-gen", Some(spec.seed), Some(&saved), &p)?;
    let names: Vec<&str> = saved.names().collect();
    report.emit(&json!({ "spec": spec, "tensors": names }), None)
}

/// Gaussian `W_q`, `W_k` with entries of variance `1/d`, stored as `[H, d_head, d]`.
fn add_random_heads(cache: &mut ActivationCache, d: usize, n_heads: usize, d_head: usize, seed: u64) -> CliResult<()> {
    let mut r = rng::stream(rng::mix(seed, TAG_HEADS));
    let scale = 1.0 / (d as f64).sqrt();
    let len = n_heads * d_head * d;
    let wq: Vec<f64> = (0..len).map(|_| scale * rng::gaussian(&mut r)).collect();
    let wk: Vec<f64> = (0..len).map(|_| scale * rng::gaussian(&mut r)).collect();
    let index: Vec<i64> = (0..n_heads).flat_map(|h| [0, h as i64]).collect();
    cache.insert(TensorRecord::f64(names::HEADS_WQ, vec![n_heads, d_head, d], wq)?)?;
    cache.insert(TensorRecord::f64(names::HEADS_WK, vec![n_heads, d_head, d], wk)?)?;
    cache.insert(TensorRecord::i64(names::HEADS_INDEX, vec![n_heads, 2], index)?)?;
    Ok(())
}

// ---------------------------------------------------------------- probe-fit

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeParams {
    /// Rank of the extracted probe span.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub ridge_alpha: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub harmonics: Option<usize>,
    /// Bootstrap resamples for the angle to the cached mediator (0 disables).
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn probe_fit(io: Io, p: ProbeParams, config: Option<&Path>) -> CliResult<()> {
    let p = merge_config(p, config)?;
    let cache = open(&io)?;
    let x = cache.activations()?;
    let doy = cache.usizes(names::DOY)?;
    let harmonics = p.harmonics.unwrap_or(1);
    let k = p.k.unwrap_or(2 * harmonics);
    let alpha = p.ridge_alpha.unwrap_or(DEFAULT_RIDGE_ALPHA);
    let seed = p.seed.unwrap_or(DEFAULT_SEED);
    let fit = fit_circular_probe(&x, &doy, alpha, p.folds.unwrap_or(DEFAULT_FOLDS), harmonics, k)?;
    let mut body = json!({
        "n": x.nrows(),
        "d": x.ncols(),
        "k": k,
        "cv_r2": fit.score,
        "folds": fit.folds,
        "basis": basis_rows(&fit.subspace),
    });
    if let Some(m) = planted_mediator(&cache) {
        body["angle_to_mediator"] = angle_summary(&fit.subspace, &m)?;
        let b = p.bootstrap.unwrap_or(0);
        if b > 0 {
            let recipe = ProbeRecipe::Circular { ridge_alpha: alpha, harmonics, k };
            let ci = bootstrap_angle_ci(&x, &doy, &recipe, &m, b, seed)?;
            body["bootstrap"] = json!({ "b": b, "mean": ci.mean, "sd": ci.sd, "lo": ci.lo, "hi": ci.hi });
        }
    }
    Report::new("probe-fit", Some(seed), Some(&cache), &p)?.emit(&body, io.out.as_ref())
}

// ---------------------------------------------------------------- das-fit

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DasParams {
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Independent restarts; the run with the highest ablated NLL is kept.
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn das_fit(io: Io, p: DasParams, config: Option<&Path>) -> CliResult<()> {
    let p = merge_config(p, config)?;
    let cache = open(&io)?;
    let model = model_from_cache(&cache)?;
    let x = cache.activations()?;
    let y = cache.usizes(names::LABELS)?;
    let seed = p.seed.unwrap_or(DEFAULT_SEED);
    let k = p.k.unwrap_or(4);
    let mut cfg = DasConfig::new(k, seed).with_steps(p.steps.unwrap_or(400));
    cfg.lr = p.lr.unwrap_or(cfg.lr);
    cfg.batch_size = p.batch_size.unwrap_or(cfg.batch_size);
    let seeds: Vec<u64> = (0..positive("restarts", p.restarts.unwrap_or(1))? as u64)
        .map(|i| rng::mix(seed, i))
        .collect();
    let multi = das_fit_seeds(model.as_ref(), &x, &y, &cfg, &seeds)?;
    let best = multi.best_run();
    let runs: Vec<Value> = multi
        .runs
        .iter()
        .map(|r| {
            json!({
                "seed": r.seed,
                "final_nll": r.final_nll,
                "clean_nll": r.clean_nll,
                "converged": r.converged,
                "final_orth_residual": r.final_orth_residual,
            })
        })
        .collect();
    let cca: Vec<f64> = multi
        .runs
        .iter()
        .skip(1)
        .map(|r| subspace_cca(&multi.runs[0].subspace, &r.subspace).map(|c| mean(&c)))
        .collect::<Result<_, _>>()?;
    let grad = gradient_subspace(model.as_ref(), &x, &y, k)?;
    let mut body = json!({
        "k": k,
        "steps": cfg.steps,
        "best": multi.best,
        "runs": runs,
        "seed_mean_cca": cca,
        "clean_accuracy": model.evaluate(&x, &y, None)?.accuracy(&y),
        "ablated_accuracy": model.evaluate(&x, &y, Some(&best.subspace))?.accuracy(&y),
        "gradient_participation_ratio": grad.participation_ratio,
        "angle_to_gradient_subspace": angle_summary(&best.subspace, &grad.subspace)?,
        "basis": basis_rows(&best.subspace),
    });
    if let Some(m) = planted_mediator(&cache) {
        body["angle_to_mediator"] = angle_summary(&best.subspace, &m)?;
    }
    Report::new("das-fit", Some(seed), Some(&cache), &p)?.emit(&body, io.out.as_ref())
}

// ---------------------------------------------------------------- diagnose

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseParams {
    #[arg(long)]
    pub k: Option<usize>,
    /// Random-ablation controls.
    #[arg(long)]
    pub n_null: Option<usize>,
    #[arg(long)]
    pub das_steps: Option<usize>,
    #[arg(long)]
    pub das_seeds: Option<usize>,
    #[arg(long)]
    pub ridge_alpha: Option<f64>,
    #[arg(long)]
    pub harmonics: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub angle_null_draws: Option<usize>,
    /// Also ablate every subset of the DAS frame's directions.
    #[arg(long)]
    pub subsets: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn diagnose(io: Io, p: DiagnoseParams, config: Option<&Path>) -> CliResult<()> {
    let p = merge_config(p, config)?;
    let cache = open(&io)?;
    let model = model_from_cache(&cache)?;
    let x = cache.activations()?;
    let y = cache.usizes(names::LABELS)?;
    let doy = cache.usizes(names::DOY)?;
    let seed = p.seed.unwrap_or(DEFAULT_SEED);
    let mut cfg = DiagnosticConfig::new(p.k.unwrap_or(4), seed);
    cfg.n_null = p.n_null.unwrap_or(cfg.n_null);
    cfg.das_steps = p.das_steps.unwrap_or(cfg.das_steps);
    cfg.das_seeds = p.das_seeds.unwrap_or(cfg.das_seeds);
    cfg.ridge_alpha = p.ridge_alpha.unwrap_or(cfg.ridge_alpha);
    cfg.harmonics = p.harmonics.unwrap_or(cfg.harmonics);
    cfg.folds = p.folds.unwrap_or(cfg.folds);
    cfg.angle_null_draws = p.angle_null_draws.unwrap_or(cfg.angle_null_draws);
    let report = run_diagnostic(model.as_ref(), &x, &y, &doy, &cfg)?;
    let mut body = serde_json::to_value(&report)?;
    if p.subsets {
        let das = report.das_subspace.as_ref().expect("diagnostic keeps the DAS frame");
        if das.rank() > MAX_SWEEP_RANK {
            return Err(CliError::Usage(format!("--subsets needs k <= {MAX_SWEEP_RANK}")));
        }
        body["subsets"] = serde_json::to_value(subset_ablation_sweep(model.as_ref(), &x, &y, das, None)?)?;
    }
    if let Some(m) = planted_mediator(&cache) {
        if let Some(das) = &report.das_subspace {
            body["das_angle_to_mediator"] = angle_summary(das, &m)?;
        }
    }
    Report::new("diagnose", Some(seed), Some(&cache), &p)?.emit(&body, io.out.as_ref())
}

// ---------------------------------------------------------------- calibrate-null

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NullParams {
    /// Ambient dimension; taken from the cache when omitted.
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub k1: Option<usize>,
    #[arg(long)]
    pub k2: Option<usize>,
    #[arg(long)]
    pub n_draws: Option<usize>,
    /// Map Haar draws through the cache's activation whitening.
    #[arg(long)]
    pub whiten: bool,
    /// Compare against the cache's mediator frame instead of a second Haar draw.
    #[arg(long)]
    pub against_mediator: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct NullIo {
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn calibrate_null(io: NullIo, p: NullParams, config: Option<&Path>) -> CliResult<()> {
    let p = merge_config(p, config)?;
    let cache = io.cache.as_deref().map(ActivationCache::open).transpose()?;
    let need_cache = |what: &str| {
        cache
            .as_ref()
            .ok_or_else(|| CliError::Usage(format!("{what} needs --cache")))
    };
    let seed = p.seed.unwrap_or(DEFAULT_SEED);
    let k1 = p.k1.unwrap_or(2);
    let fixed = if p.against_mediator {
        Some(need_cache("--against-mediator")?.subspace("mediator")?)
    } else {
        None
    };
    let k2 = match &fixed {
        Some(m) => m.rank(),
        None => p.k2.unwrap_or(k1),
    };
    let n_draws = p.n_draws.unwrap_or(10_000);
    let cal = if p.whiten {
        let x = need_cache("--whiten")?.activations()?;
        monte_carlo_null_whitened(&whiten(&x)?, k1, k2, n_draws, seed, fixed.as_ref())?
    } else {
        let d = match (p.d, &cache) {
            (Some(d), _) => d,
            (None, Some(c)) => c.activations()?.ncols(),
            (None, None) => return Err(CliError::Usage("give --d or --cache".into())),
        };
        monte_carlo_null(d, k1, k2, n_draws, seed, fixed.as_ref())?
    };
    let deg = |v: f64| v.to_degrees();
    let angle = Statistic::MeanAngle;
    let cos2 = Statistic::SumCos2;
    let quantiles: Vec<Value> = [0.01, 0.05, 0.5, 0.95, 0.99]
        .iter()
        .map(|&q| json!({ "q": q, "mean_angle_deg": deg(cal.quantile(angle, q)), "sum_cos2": cal.quantile(cos2, q) }))
        .collect();
    let body = json!({
        "d": cal.d,
        "k1": cal.k1,
        "k2": cal.k2,
        "n_draws": cal.n_draws,
        "whitened": p.whiten,
        "analytic_mean_angle_deg": deg(cal.analytic_mean_angle),
        "mean_angle_deg": deg(cal.mean(angle)),
        "sd_angle_deg": deg(cal.sd(angle)),
        "se_angle_deg": deg(cal.se(angle)),
        "band_deg": [deg(cal.band(angle).0), deg(cal.band(angle).1)],
        "analytic_sum_cos2": cal.analytic_sum_cos2,
        "sum_cos2_mean": cal.mean(cos2),
        "sum_cos2_se": cal.se(cos2),
        "quantiles": quantiles,
    });
    Report::new("calibrate-null", Some(seed), cache.as_ref(), &p)?.emit(&body, io.out.as_ref())
}

// ---------------------------------------------------------------- qk-scan

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QkParams {
    #[arg(long)]
    pub n_perm: Option<usize>,
    /// BH false-discovery level.
    #[arg(long)]
    pub fdr: Option<f64>,
    /// Use circular day differences instead of wrap-free ones.
    #[arg(long)]
    pub circular: bool,
    /// Largest mixture size tried for the offset modes.
    #[arg(long)]
    pub max_modes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct QkIo {
    #[command(flatten)]
    pub io: Io,
    /// JSON summary with per-head profiles' peaks and offset modes.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn load_heads(cache: &ActivationCache) -> CliResult<Vec<HeadTensors>> {
    let wq = cache.get(names::HEADS_WQ)?;
    let wk = cache.get(names::HEADS_WK)?;
    if wq.dims.len() != 3 || wq.dims != wk.dims {
        return Err(MscError::DimensionMismatch(format!(
            "head tensors must be [H, d_head, d], got {:?} and {:?}",
            wq.dims, wk.dims
        ))
        .into());
    }
    let (h, dh, d) = (wq.dims[0], wq.dims[1], wq.dims[2]);
    let index = if cache.contains(names::HEADS_INDEX) {
        cache.i64s(names::HEADS_INDEX)?
    } else {
        (0..h).flat_map(|i| [0, i as i64]).collect()
    };
    if index.len() != 2 * h || index.iter().any(|&v| v < 0) {
        return Err(MscError::DimensionMismatch("heads.index must be [H, 2] nonnegative".into()).into());
    }
    let (q, k) = (wq.to_f64_vec(), wk.to_f64_vec());
    (0..h)
        .map(|i| {
            let block = |v: &[f64]| Mat::from_row_slice(dh, d, &v[i * dh * d..(i + 1) * dh * d]);
            Ok(HeadTensors::new(index[2 * i] as usize, index[2 * i + 1] as usize, block(&q), block(&k))?)
        })
        .collect()
}

pub fn qk_scan(io: QkIo, p: QkParams, config: Option<&Path>) -> CliResult<()> {
    let p = merge_config(p, config)?;
    let cache = open(&io.io)?;
    let means = cache.matrix(names::DOY_MEANS)?;
    let heads = load_heads(&cache)?;
    let seed = p.seed.unwrap_or(DEFAULT_SEED);
    let cfg = ScanConfig {
        n_perm: p.n_perm.unwrap_or(DEFAULT_PERMUTATIONS),
        fdr_level: p.fdr.unwrap_or(DEFAULT_FDR_LEVEL),
        seed,
        circular: p.circular,
    };
    let results = scan_heads(&means, &heads, &cfg)?;
    let mut csv = Vec::new();
    write_scan_csv(&mut csv, &results)?;
    write_text(&String::from_utf8(csv).expect("CSV is ASCII"), io.io.out.as_ref())?;
    if let Some(path) = &io.report {
        let significant: Vec<f64> = results
            .iter()
            .filter(|r| r.significant)
            .filter_map(|r| r.c_star.map(f64::from))
            .collect();
        let modes = if significant.len() >= 4 {
            Some(offset_modes(&significant, p.max_modes.unwrap_or(4), seed)?)
        } else {
            None
        };
        let heads: Vec<Value> = results
            .iter()
            .map(|r| json!({"layer": r.layer, "head": r.head, "c_star": r.c_star, "z": r.peak_z, "p": r.p_perm, "q": r.q_bh}))
            .collect();
        let body = json!({
            "n_heads": results.len(),
            "n_significant": results.iter().filter(|r| r.significant).count(),
            "heads": heads,
            "modes": modes,
        });
        Report::new("qk-scan", Some(seed), Some(&cache), &p)?.emit(&body, Some(path))?;
    }
    Ok(())
}

// ---------------------------------------------------------------- deviation

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviationParams {
    /// Rank of the reference manifold.
    #[arg(long)]
    pub k: Option<usize>,
    /// Project raw activations instead of centered ones.
    #[arg(long)]
    pub uncentered: bool,
    /// Date error (days) above which a query counts as wrong when the cache
    /// carries no error labels.
    #[arg(long)]
    pub wrong_days: Option<f64>,
    #[arg(long)]
    pub ridge_alpha: Option<f64>,
}

#[derive(Args, Debug)]
pub struct DeviationIo {
    #[command(flatten)]
    pub io: Io,
    /// JSON calibration report.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn deviation(io: DeviationIo, p: DeviationParams, config: Option<&Path>) -> CliResult<()> {
    let p = merge_config(p, config)?;
    let cache = open(&io.io)?;
    let x = cache.activations()?;
    let means = cache.matrix(names::DOY_MEANS)?;
    let k = p.k.unwrap_or(2);
    let manifold = reference_basis(&means, k)?;
    let wrong_days = p.wrong_days.unwrap_or(15.0);
    let n = x.nrows();
    let (errors, wrong, source): (Vec<f64>, Vec<bool>, &str) = if cache.contains("error_days") {
        let e = cache.get("error_days")?.to_f64_vec();
        let w = if cache.contains("wrong_flag") {
            cache.i64s("wrong_flag")?.iter().map(|&v| v != 0).collect()
        } else {
            e.iter().map(|&v| v > wrong_days).collect()
        };
        (e, w, "cache")
    } else {
        let doy = cache.usizes(names::DOY)?;
        let probe = msc_core::probes::CircularProbe::fit(&x, &doy, p.ridge_alpha.unwrap_or(DEFAULT_RIDGE_ALPHA), 1)?;
        let e: Vec<f64> = (0..n)
            .map(|i| {
                let row: Vec<f64> = x.row(i).iter().copied().collect();
                circular_day_distance(probe.predict_doy(&row), doy[i] as f64)
            })
            .collect();
        let w = e.iter().map(|&v| v > wrong_days).collect();
        (e, w, "probe")
    };
    if errors.len() != n || wrong.len() != n {
        return Err(MscError::DimensionMismatch(format!("{n} queries but {} error labels", errors.len())).into());
    }
    let deltas: Vec<f64> = (0..n)
        .map(|i| Ok(manifold_deviation(&x.rows(i, 1).into_owned(), &[0], &manifold, !p.uncentered)?.delta))
        .collect::<CliResult<_>>()?;
    let rows: Vec<QueryRecord> = (0..n)
        .map(|i| QueryRecord {
            query_id: i.to_string(),
            delta: deltas[i],
            k,
            error_days: errors[i],
            wrong: wrong[i],
        })
        .collect();
    let mut csv = Vec::new();
    write_query_csv(&mut csv, &rows)?;
    write_text(&String::from_utf8(csv).expect("CSV is ASCII"), io.io.out.as_ref())?;
    if let Some(path) = &io.report {
        let n_wrong = wrong.iter().filter(|&&w| w).count();
        let calibration: Option<CalibrationReport> = if n_wrong >= 2 && n - n_wrong >= 2 {
            Some(calibration_report(&deltas, &wrong)?)
        } else {
            None
        };
        let body = json!({
            "n": n,
            "k": k,
            "centered": !p.uncentered,
            "error_source": source,
            "n_wrong": n_wrong,
            "mean_delta": mean(&deltas),
            "spearman_delta_error": spearman(&deltas, &errors),
            "calibration": calibration,
        });
        Report::new("deviation", None, Some(&cache), &p)?.emit(&body, Some(path))?;
    }
    Ok(())
}

// ---------------------------------------------------------------- safety-battery

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafetyParams {
    /// Mechanism-injection scales (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    /// Probe-reassurance scales (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub betas: Option<Vec<f64>>,
    #[arg(long)]
    pub day_step: Option<usize>,
    #[arg(long)]
    pub k_neighbors: Option<usize>,
    #[arg(long)]
    pub shuffles: Option<usize>,
    #[arg(long)]
    pub monitor_l2: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub n_random: Option<usize>,
    #[arg(long)]
    pub null_draws: Option<usize>,
    /// Use only the first N prompts for NLL, monitor and ablation.
    #[arg(long)]
    pub max_prompts: Option<usize>,
    #[arg(long)]
    pub ridge_alpha: Option<f64>,
    /// Rank of the DAS frame fitted when the cache has no mediator.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub das_steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn safety_battery(io: Io, p: SafetyParams, config: Option<&Path>) -> CliResult<()> {
    let p = merge_config(p, config)?;
    let cache = open(&io)?;
    let model = model_from_cache(&cache)?;
    let x_all = cache.activations()?;
    let y_all = cache.usizes(names::LABELS)?;
    let doy = cache.usizes(names::DOY)?;
    let means = cache.matrix(names::DOY_MEANS)?;
    let seed = p.seed.unwrap_or(DEFAULT_SEED);
    let n = p.max_prompts.unwrap_or(x_all.nrows()).min(x_all.nrows());
    let x = x_all.rows(0, n).into_owned();
    let y = &y_all[..n];
    let probe = msc_core::probes::CircularProbe::fit(&x_all, &doy, p.ridge_alpha.unwrap_or(DEFAULT_RIDGE_ALPHA), 1)?;
    let (mediator, mediator_source) = match planted_mediator(&cache) {
        Some(m) => (m, "cache"),
        None => {
            let cfg = DasConfig::new(p.k.unwrap_or(4), rng::mix(seed, 1)).with_steps(p.das_steps.unwrap_or(400));
            let fit = das_fit_seeds(model.as_ref(), &x, y, &cfg, &[cfg.seed])?;
            (fit.best_run().subspace.clone(), "das")
        }
    };
    let mut cfg = SafetyConfig::new(seed);
    if let Some(a) = &p.alphas {
        cfg.alphas = a.clone();
    }
    if let Some(b) = &p.betas {
        cfg.betas = b.clone();
    }
    cfg.test_day_step = positive("day-step", p.day_step.unwrap_or(cfg.test_day_step))?;
    cfg.k_neighbors = p.k_neighbors.unwrap_or(cfg.k_neighbors);
    cfg.n_shuffles = p.shuffles.unwrap_or(cfg.n_shuffles);
    cfg.monitor_l2 = p.monitor_l2.unwrap_or(cfg.monitor_l2);
    cfg.folds = p.folds.unwrap_or(cfg.folds);
    cfg.n_random = p.n_random.unwrap_or(cfg.n_random);
    cfg.null_draws = p.null_draws.unwrap_or(cfg.null_draws);
    let battery = run_safety_battery(model.as_ref(), &x, y, &means, &probe, &mediator, &cfg)?;
    let mut body = serde_json::to_value(&battery)?;
    body["mediator_source"] = json!(mediator_source);
    body["n_prompts"] = json!(n);
    Report::new("safety-battery", Some(seed), Some(&cache), &p)?.emit(&body, io.out.as_ref())
}

// ---------------------------------------------------------------- tfa-split

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TfaParams {
    /// Sequence tensor `[T, d]` to decompose; rows are positions in order.
    #[arg(long)]
    pub tensor: Option<String>,
    /// 1-based positions (comma separated); all positions when omitted.
    #[arg(long, value_delimiter = ',')]
    pub positions: Option<Vec<usize>>,
}

pub fn tfa(io: Io, p: TfaParams, config: Option<&Path>) -> CliResult<()> {
    let p = merge_config(p, config)?;
    let cache = open(&io)?;
    let name = p.tensor.clone().unwrap_or_else(|| names::DOY_MEANS.to_string());
    let seq = cache.matrix(&name)?;
    let positions = p.positions.clone().unwrap_or_else(|| (1..=seq.nrows()).collect());
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let rows: Vec<Value> = positions
        .iter()
        .map(|&t| {
            let s = tfa_split(&seq, t)?;
            let (pn, nn) = (norm(&s.predictable), norm(&s.novel));
            let total = (pn * pn + nn * nn).sqrt();
            Ok(json!({
                "t": t,
                "predictable_norm": pn,
                "novel_norm": nn,
                "novel_fraction": if total > 0.0 { nn / total } else { 0.0 },
            }))
        })
        .collect::<CliResult<_>>()?;
    let body = json!({ "tensor": name, "length": seq.nrows(), "d": seq.ncols(), "positions": rows });
    Report::new("tfa-split", None, Some(&cache), &p)?.emit(&body, io.out.as_ref())
}
