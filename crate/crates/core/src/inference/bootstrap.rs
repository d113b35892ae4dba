//! Parametric bootstrap with overdraw and erratic-fit filtering.

use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit, Estimator, FitResult, OptimOptions, ParamSpace, TableModel};
use crate::error::{invalid, Result};
use crate::simulate::stream_rng;

/// Nominal coverage of the reported percentile intervals.
pub const CONFIDENCE: f64 = 0.95;
/// Default fraction of extra replicates drawn to absorb erratic fits.
pub const DEFAULT_OVERDRAW: f64 = 0.045;

/// Retained bootstrap estimates and percentile intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub names: Vec<String>,
    /// Natural-scale estimates, one row per retained replicate.
    pub samples: Vec<Vec<f64>>,
    /// Stream index of each retained replicate.
    pub replicates: Vec<u64>,
    /// Percentile interval per parameter; absent when nothing was retained.
    pub intervals: Vec<Option<[f64; 2]>>,
    pub confidence: f64,
    pub n_requested: usize,
    pub n_attempted: usize,
    pub n_retained: usize,
    pub n_erratic: usize,
    pub n_failed: usize,
    /// Set when fewer than half of the requested replicates were retained.
    pub warning: Option<String>,
}

/// Empirical quantile by the inverse empirical cdf: the `⌈n·p⌉`-th order statistic.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((sorted.len() as f64 * p).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Runs replicate refits in stream order until `n` non-erratic fits are
/// retained or `⌈n (1 + overdraw)⌉` replicates have been tried.
pub fn bootstrap_replicates(
    fit: &FitResult,
    n: usize,
    overdraw: f64,
    seed: u64,
    replicate: &(dyn Fn(&mut ChaCha20Rng) -> Result<FitResult> + Sync),
) -> Result<BootstrapResult> {
    if fit.erratic {
        return Err(invalid("the bootstrap needs a non-erratic fit"));
    }
    if !(overdraw >= 0.0) {
        return Err(invalid(format!("overdraw must be non-negative, got {overdraw}")));
    }
    let p = fit.names.len();
    let budget = (n as f64 * (1.0 + overdraw)).ceil() as usize;
    let batch = (rayon::current_num_threads() * 2).max(4);
    let mut samples = Vec::new();
    let mut ids = Vec::new();
    let (mut attempted, mut erratic, mut failed) = (0, 0, 0);
    let mut next = 0usize;
    while samples.len() < n && next < budget {
        let end = (next + batch).min(budget);
        let results: Vec<Result<FitResult>> = (next..end)
            .into_par_iter()
            .map(|r| replicate(&mut stream_rng(seed, r as u64)))
            .collect();
        for (r, res) in (next..end).zip(results) {
            if samples.len() >= n {
                break;
            }
            attempted += 1;
            match res {
                Ok(f) if !f.erratic => {
                    samples.push(f.natural);
                    ids.push(r as u64);
                }
                Ok(_) => erratic += 1,
                Err(_) => failed += 1,
            }
        }
        next = end;
    }
    let alpha = 1.0 - CONFIDENCE;
    let intervals = (0..p)
        .map(|j| {
            if samples.is_empty() {
                return None;
            }
            let mut col: Vec<f64> = samples.iter().map(|s| s[j]).collect();
            col.sort_by(f64::total_cmp);
            Some([percentile(&col, alpha / 2.0), percentile(&col, 1.0 - alpha / 2.0)])
        })
        .collect();
    let retained = samples.len();
    let warning = (2 * retained < n).then(|| {
        format!("only {retained} of {n} requested bootstrap replicates were retained")
    });
    Ok(BootstrapResult {
        names: fit.names.clone(),
        samples,
        replicates: ids,
        intervals,
        confidence: CONFIDENCE,
        n_requested: n,
        n_attempted: attempted,
        n_retained: retained,
        n_erratic: erratic,
        n_failed: failed,
        warning,
    })
}

/// Parametric bootstrap of a family fit: simulate at the estimate, refit, filter.
#[allow(clippy::too_many_arguments)]
pub fn parametric_bootstrap(
    estimate: &FitResult,
    estimator: Estimator,
    model: &dyn TableModel,
    space: &ParamSpace,
    n: usize,
    overdraw: f64,
    seed: u64,
    opts: &OptimOptions,
) -> Result<BootstrapResult> {
    let refit = |rng: &mut ChaCha20Rng| {
        let counts = model.simulate(&estimate.natural, rng)?;
        fit(estimator, &counts, model, space, opts)
    };
    bootstrap_replicates(estimate, n, overdraw, seed, &refit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecm::{CountArrangement, PopulationSize};
    use crate::inference::ProbabilityFamily;

    #[test]
    fn type_one_quantiles() {
        let v = [1.0, 2.0];
        assert_eq!(percentile(&v, 0.025), 1.0);
        assert_eq!(percentile(&v, 0.975), 2.0);
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.025), 25.0);
        assert_eq!(percentile(&v, 0.975), 975.0);
    }

    fn base_fit(n: u64) -> (ProbabilityFamily, ParamSpace, FitResult) {
        let fam = ProbabilityFamily {
            cells: 2,
            size: PopulationSize::Known(n),
        };
        let space = fam.space(vec![vec![0.3, 0.3]]).unwrap();
        let counts = CountArrangement::new(vec![vec![n / 5, 2 * n / 5]]).unwrap();
        let f = fit(Estimator::Mgle, &counts, &fam, &space, &OptimOptions::default()).unwrap();
        (fam, space, f)
    }

    #[test]
    fn zero_replicates_and_determinism() {
        let (fam, space, f) = base_fit(1000);
        let b = parametric_bootstrap(&f, Estimator::Mgle, &fam, &space, 0, DEFAULT_OVERDRAW, 1, &OptimOptions::default()).unwrap();
        assert_eq!(b.n_attempted, 0);
        assert!(b.samples.is_empty() && b.intervals.iter().all(Option::is_none));
        let b2 = parametric_bootstrap(&f, Estimator::Mgle, &fam, &space, 2, 0.0, 7, &OptimOptions::default()).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = b2.samples.iter().map(|s| s[j]).collect();
            let [lo, hi] = b2.intervals[j].unwrap();
            assert_eq!(lo, col.iter().copied().fold(f64::INFINITY, f64::min));
            assert_eq!(hi, col.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
        let again = parametric_bootstrap(&f, Estimator::Mgle, &fam, &space, 2, 0.0, 7, &OptimOptions::default()).unwrap();
        assert_eq!(b2, again);
    }

    #[test]
    fn interval_width_shrinks_like_root_n() {
        let width = |n: u64| {
            let (fam, space, f) = base_fit(n);
            let b = parametric_bootstrap(&f, Estimator::Mgle, &fam, &space, 200, DEFAULT_OVERDRAW, 3, &OptimOptions::default()).unwrap();
            let [lo, hi] = b.intervals[0].unwrap();
            hi - lo
        };
        let ratio = width(1_000) / width(10_000);
        let expect = 10f64.sqrt();
        assert!(ratio > expect / 2.0 && ratio < expect * 2.0, "ratio {ratio}");
    }

    #[test]
    fn erratic_fit_is_rejected() {
        let (fam, space, mut f) = base_fit(1000);
        f.erratic = true;
        assert!(parametric_bootstrap(&f, Estimator::Mgle, &fam, &space, 5, 0.0, 1, &OptimOptions::default()).is_err());
    }
}
