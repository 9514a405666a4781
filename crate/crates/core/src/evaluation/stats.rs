//! Symbol–cloze gap, its significance across models, and routing gain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

/// Largest sample for which the sign-flip test enumerates all 2^n patterns.
pub const EXACT_PERMUTATION_LIMIT: usize = 24;
/// Draws used by the Monte Carlo sign-flip test above the exact limit.
pub const MONTE_CARLO_DRAWS: usize = 200_000;
const MONTE_CARLO_SEED: u64 = 0x5eed;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("significance test needs at least two values, got {0}")]
    TooFewValues(usize),
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
}

/// Symbol accuracy minus cloze accuracy, in percentage points.
pub fn compute_delta(symbol_acc: f64, cloze_acc: f64) -> f64 {
    symbol_acc - cloze_acc
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaSignificance {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    /// `None` when the sample has zero variance.
    pub t_statistic: Option<f64>,
    /// Two-sided one-sample t-test against zero.
    pub p_value: f64,
    /// Two-sided sign-flip permutation test against zero.
    pub permutation_p: f64,
    pub permutation_exact: bool,
    /// Zero variance with a nonzero mean; the t-test is not meaningful.
    pub degenerate: bool,
}

/// Tests whether the mean of `deltas` differs from zero.
pub fn test_delta_significance(deltas: &[f64]) -> Result<DeltaSignificance, StatsError> {
    let n = deltas.len();
    if n < 2 {
        return Err(StatsError::TooFewValues(n));
    }
    if let Some(i) = deltas.iter().position(|d| !d.is_finite()) {
        return Err(StatsError::NonFinite(i));
    }
    let mean = deltas.iter().sum::<f64>() / n as f64;
    let var = deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std_dev = var.sqrt();
    let (t_statistic, p_value, degenerate) = if std_dev == 0.0 {
        if mean == 0.0 {
            (None, 1.0, false)
        } else {
            (None, 0.0, true)
        }
    } else {
        let t = mean / (std_dev / (n as f64).sqrt());
        let dist =
            StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("degrees of freedom are positive");
        (Some(t), (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0), false)
    };
    let (permutation_p, permutation_exact) = sign_flip_p_value(deltas);
    Ok(DeltaSignificance {
        n,
        mean,
        std_dev,
        t_statistic,
        p_value,
        permutation_p,
        permutation_exact,
        degenerate,
    })
}

/// Two-sided sign-flip p-value for a zero mean: the share of sign patterns
/// whose absolute sum reaches the observed one. Exact up to
/// [`EXACT_PERMUTATION_LIMIT`] values, seeded Monte Carlo beyond.
pub fn sign_flip_p_value(values: &[f64]) -> (f64, bool) {
    let observed: f64 = values.iter().sum::<f64>().abs();
    let scale: f64 = values.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
    let threshold = observed - 1e-12 * scale;
    if values.len() <= EXACT_PERMUTATION_LIMIT {
        (exact_sign_flip(values, threshold), true)
    } else {
        (monte_carlo_sign_flip(values, threshold), false)
    }
}

/// Walks all sign patterns in Gray-code order so each step flips one sign.
fn exact_sign_flip(values: &[f64], threshold: f64) -> f64 {
    let n = values.len();
    let total = 1u64 << n;
    let mut signs = vec![1.0; n];
    let mut sum: f64 = values.iter().sum();
    let mut hits = u64::from(sum.abs() >= threshold);
    for step in 1..total {
        let bit = step.trailing_zeros() as usize;
        signs[bit] = -signs[bit];
        sum += 2.0 * signs[bit] * values[bit];
        if sum.abs() >= threshold {
            hits += 1;
        }
    }
    hits as f64 / total as f64
}

fn monte_carlo_sign_flip(values: &[f64], threshold: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(MONTE_CARLO_SEED);
    let mut hits = 1usize;
    for _ in 0..MONTE_CARLO_DRAWS {
        let s: f64 = values
            .iter()
            .map(|v| if rng.random::<bool>() { *v } else { -*v })
            .sum();
        if s.abs() >= threshold {
            hits += 1;
        }
    }
    hits as f64 / (MONTE_CARLO_DRAWS + 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainStat {
    pub routed_accuracy: f64,
    /// The better of the two single-format baselines.
    pub preferred_baseline: f64,
    pub gain: f64,
}

pub fn gain_vs_preferred(routed_acc: f64, symbol_acc: f64, cloze_acc: f64) -> GainStat {
    let preferred_baseline = symbol_acc.max(cloze_acc);
    GainStat {
        routed_accuracy: routed_acc,
        preferred_baseline,
        gain: routed_acc - preferred_baseline,
    }
}

/// Rounds to `decimals` places, half away from zero.
pub fn round_to(x: f64, decimals: i32) -> f64 {
    let f = 10f64.powi(decimals);
    (x * f).round() / f
}
