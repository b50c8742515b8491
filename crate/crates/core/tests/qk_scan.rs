use msc_core::linalg::Mat;
use msc_core::qk::{
    mode_coincidence_test, offset_modes, offset_profile, scan_heads, write_scan_csv, HeadTensors, ScanConfig,
};
use msc_core::rng;
use statrs::distribution::{ContinuousCDF, Uniform};

const D: usize = 48;
const D_HEAD: usize = 4;

/// Per-day means whose dims 16..20 carry a delayed copy (lag 30, gain `amp`)
/// of dims 0..4, on top of unit Gaussian noise.
fn planted_means(amp: f64, seed: u64) -> Mat {
    let mut g = rng::stream(seed);
    let src = Mat::from_fn(365 + 30, D_HEAD, |_, _| rng::gaussian(&mut g));
    Mat::from_fn(365, D, |d, j| {
        let base = rng::gaussian(&mut g);
        if j < D_HEAD {
            base + src[(d + 30, j)]
        } else if (16..16 + D_HEAD).contains(&j) {
            base + amp * src[(d, j - 16)]
        } else {
            base
        }
    })
}

fn random_head(layer: usize, head: usize, seed: u64) -> HeadTensors {
    let mut g = rng::stream(seed);
    let wq = Mat::from_fn(D_HEAD, D, |_, _| rng::gaussian(&mut g) / (D as f64).sqrt());
    let wk = Mat::from_fn(D_HEAD, D, |_, _| rng::gaussian(&mut g) / (D as f64).sqrt());
    HeadTensors::new(layer, head, wq, wk).unwrap()
}

/// Reads the delayed copy with its queries and the source with its keys.
fn planted_head(layer: usize, head: usize) -> HeadTensors {
    let wq = Mat::from_fn(D_HEAD, D, |i, j| if j == 16 + i { 1.0 } else { 0.0 });
    let wk = Mat::from_fn(D_HEAD, D, |i, j| if j == i { 1.0 } else { 0.0 });
    HeadTensors::new(layer, head, wq, wk).unwrap()
}

/// Gain of the delayed copy that puts the planted peak near z = 5.
const RIDGE_GAIN: f64 = 0.25;

fn null_heads(n: usize, seed: u64) -> Vec<HeadTensors> {
    (0..n).map(|h| random_head(0, h, rng::mix(seed, h as u64))).collect()
}

fn scan_config(n_perm: usize, seed: u64) -> ScanConfig {
    ScanConfig {
        n_perm,
        ..ScanConfig::new(seed)
    }
}

#[test]
fn planted_ridge_is_found_at_thirty() {
    let p = offset_profile(&planted_means(RIDGE_GAIN, 1), &planted_head(0, 0), false).unwrap();
    assert_eq!(p.c_star, Some(30));
    assert!(p.peak_z.unwrap() > 4.5);
}

#[test]
fn planted_head_survives_bh_among_noise_heads() {
    let means = planted_means(RIDGE_GAIN, 2);
    let mut heads = null_heads(63, 3);
    heads.insert(17, planted_head(0, 63));
    let results = scan_heads(&means, &heads, &scan_config(3000, 4)).unwrap();
    let planted = &results[17];
    assert_eq!(planted.head, 63);
    assert_eq!(planted.c_star, Some(30));
    assert!(planted.q_bh < 0.05, "q = {}", planted.q_bh);
    assert!(planted.significant);
    let false_hits = results.iter().filter(|r| r.significant && r.head != 63).count();
    assert!(false_hits <= 3);

    let mut csv = Vec::new();
    write_scan_csv(&mut csv, &results).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("L,h,c_star,z,p,q\n"));
    assert_eq!(text.lines().count(), 65);
}

#[test]
fn scans_are_deterministic() {
    let means = planted_means(0.0, 5);
    let heads = null_heads(3, 6);
    let a = scan_heads(&means, &heads, &scan_config(60, 7)).unwrap();
    let b = scan_heads(&means, &heads, &scan_config(60, 7)).unwrap();
    assert_eq!(a, b);
}

/// All-null scans: empirical FDR (= chance of any rejection) stays below 2q,
/// and the permutation p-values are uniform.
#[test]
fn null_scans_control_fdr_and_give_uniform_p() {
    let repeats = 50;
    let mut any_rejection = 0;
    let mut pvals = Vec::new();
    for r in 0..repeats {
        let means = planted_means(0.0, 100 + r);
        let heads = null_heads(16, 200 + r);
        let res = scan_heads(&means, &heads, &scan_config(200, 300 + r)).unwrap();
        if res.iter().any(|h| h.significant) {
            any_rejection += 1;
        }
        pvals.extend(res.iter().map(|h| h.p_perm));
    }
    let fdr = any_rejection as f64 / repeats as f64;
    assert!(fdr <= 0.10, "empirical FDR {fdr}");

    pvals.sort_by(f64::total_cmp);
    let n = pvals.len() as f64;
    let u = Uniform::new(0.0, 1.0).unwrap();
    let ks = pvals
        .iter()
        .enumerate()
        .map(|(i, &p)| (u.cdf(p) - i as f64 / n).abs().max(((i + 1) as f64 / n - u.cdf(p)).abs()))
        .fold(0.0, f64::max);
    // Asymptotic KS critical value at alpha = 0.01, plus the p-value grid step.
    assert!(ks < 1.628 / n.sqrt() + 1.0 / 201.0, "KS distance {ks}");
}

#[test]
fn detection_power_grows_with_gain() {
    let gains = [0.0, 0.1, 0.2, 0.3];
    let reps = 20;
    let rates: Vec<f64> = gains
        .iter()
        .map(|&a| {
            let hits = (0..reps)
                .filter(|&r| {
                    let res = scan_heads(&planted_means(a, 500 + r), &[planted_head(0, 0)], &scan_config(100, r)).unwrap();
                    res[0].p_perm <= 0.05
                })
                .count();
            hits as f64 / reps as f64
        })
        .collect();
    for w in rates.windows(2) {
        assert!(w[1] >= w[0] - 0.1, "{rates:?}");
    }
    assert!(rates[3] > rates[0] + 0.5, "{rates:?}");
}

#[test]
fn offset_modes_of_scanned_peaks() {
    let mut g = rng::stream(9);
    let mut offsets = Vec::new();
    for &c in &[-61.0, -30.0, 30.0, 61.0] {
        for _ in 0..6 {
            offsets.push(c + rng::gaussian(&mut g));
        }
    }
    let fit = offset_modes(&offsets, 4, 1).unwrap();
    assert_eq!(fit.centers.len(), 4);
    let mags = fit.magnitudes(3.0);
    assert_eq!(mags.len(), 2);
    assert!((mags[0] - 30.0).abs() < 2.0 && (mags[1] - 61.0).abs() < 2.0, "{mags:?}");
}

#[test]
fn shared_modes_across_populations_are_unlikely_by_chance() {
    let t = mode_coincidence_test(&[30.0, 61.0], &[30.0, 61.0], 3.0, 100_000, 39).unwrap();
    assert_eq!(t.observed, 2);
    assert!((t.p_value - 0.009).abs() < 0.004, "p = {}", t.p_value);
}
