//! Specificity ratios with Fieller confidence sets and the additive baseline.

use serde::{Deserialize, Serialize};

use crate::error::{MscError, Result};
use crate::linalg::{mean, std_dev};

/// Two-sided 95% standard-normal critical value.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// Fieller confidence set for `a / b` with `a` fixed and `b` estimated with standard error `s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum FiellerSet {
    /// `[lo, hi]`.
    Interval { lo: f64, hi: f64 },
    /// `(−∞, lo] ∪ [hi, ∞)`.
    Exterior { lo: f64, hi: f64 },
    /// The whole real line.
    Unbounded,
}

impl FiellerSet {
    pub fn contains(&self, rho: f64) -> bool {
        match *self {
            FiellerSet::Interval { lo, hi } => rho >= lo && rho <= hi,
            FiellerSet::Exterior { lo, hi } => rho <= lo || rho >= hi,
            FiellerSet::Unbounded => true,
        }
    }
}

/// Solves `ρ²(b² − z²s²) − 2abρ + a² ≤ 0`.
pub fn fieller(a: f64, b: f64, s: f64, z: f64) -> FiellerSet {
    let lead = b * b - z * z * s * s;
    let half_width = a.abs() * z * s;
    if lead > 0.0 {
        FiellerSet::Interval {
            lo: (a * b - half_width) / lead,
            hi: (a * b + half_width) / lead,
        }
    } else if lead < 0.0 && half_width > 0.0 {
        let r1 = (a * b - half_width) / lead;
        let r2 = (a * b + half_width) / lead;
        FiellerSet::Exterior {
            lo: r1.min(r2),
            hi: r1.max(r2),
        }
    } else {
        FiellerSet::Unbounded
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Specificity {
    /// `das_drop / mean(random_drops)`; absent when the mean is zero.
    pub rho: Option<f64>,
    pub fieller: FiellerSet,
    /// `das_drop − mean(random_drops)`.
    pub delta_add: f64,
    pub random_mean: f64,
    pub random_se: f64,
}

/// Specificity ratio, its Fieller 95% set, and the additive baseline.
pub fn specificity_interval(das_drop: f64, random_drops: &[f64]) -> Result<Specificity> {
    if random_drops.len() < 5 {
        return Err(MscError::InvalidArgument(format!(
            "need at least 5 random drops, got {}",
            random_drops.len()
        )));
    }
    let m = mean(random_drops);
    let se = std_dev(random_drops) / (random_drops.len() as f64).sqrt();
    Ok(specificity_from_summary(das_drop, m, se))
}

/// [`specificity_interval`] from a summarized denominator.
pub fn specificity_from_summary(das_drop: f64, random_mean: f64, random_se: f64) -> Specificity {
    Specificity {
        rho: (random_mean != 0.0).then(|| das_drop / random_mean),
        fieller: fieller(das_drop, random_mean, random_se, Z_95),
        delta_add: das_drop - random_mean,
        random_mean,
        random_se,
    }
}
