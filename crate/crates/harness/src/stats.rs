//! Aggregate statistics over runs: interquartile mean and stratified
//! bootstrap confidence intervals.

use prl_core::RngStream;

use crate::error::{HarnessError, Result};

pub const DEFAULT_RESAMPLES: usize = 2000;

/// Mean of the middle half: sort, drop `⌊m/4⌋` values from each end.
pub fn iqm(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(HarnessError::Invalid("IQM of an empty sample".into()));
    }
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    let cut = v.len() / 4;
    let mid = &v[cut..v.len() - cut];
    Ok(mid.iter().sum::<f64>() / mid.len() as f64)
}

/// Inverse empirical CDF: the smallest sample `x` with `F(x) ≥ q`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let k = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

/// Percentile interval of the IQM under resampling seeds with replacement
/// inside each stratum (one stratum per environment).
pub fn stratified_bootstrap_ci(
    strata: &[Vec<f64>],
    level: f64,
    resamples: usize,
    rng: &mut RngStream,
) -> Result<(f64, f64)> {
    if strata.is_empty() || strata.iter().any(|s| s.len() < 2) {
        return Err(HarnessError::Invalid(
            "stratified bootstrap needs at least 2 seeds per environment".into(),
        ));
    }
    if !(0.0 < level && level < 1.0) || resamples == 0 {
        return Err(HarnessError::Invalid(format!(
            "bad bootstrap setup: level {level}, {resamples} resamples"
        )));
    }
    let total: usize = strata.iter().map(Vec::len).sum();
    let mut pooled = Vec::with_capacity(total);
    let mut stats = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        pooled.clear();
        for s in strata {
            for _ in 0..s.len() {
                pooled.push(s[rng.below(s.len())]);
            }
        }
        stats.push(iqm(&pooled)?);
    }
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile(&stats, tail), quantile(&stats, 1.0 - tail)))
}
