//! Per-replicate records and tabular summaries of simulation studies.

use serde::{Deserialize, Serialize};

use super::{fit, Estimator, FitResult, OptimOptions, ParamSpace, TableModel};
use crate::simulate::stream_rng;

/// Outcome of one simulate-and-fit replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: u64,
    pub estimator: Estimator,
    /// Estimates on the estimation scale; empty when the fit failed.
    pub transformed: Vec<f64>,
    #[serde(with = "super::nullable")]
    pub objective: f64,
    #[serde(with = "super::nullable")]
    pub min_hessian_eigenvalue: f64,
    pub erratic: bool,
    pub error: Option<String>,
}

impl ReplicateRecord {
    pub fn from_fit(replicate: u64, estimator: Estimator, result: crate::error::Result<FitResult>) -> Self {
        match result {
            Ok(f) => Self {
                replicate,
                estimator,
                transformed: f.transformed,
                objective: f.objective,
                min_hessian_eigenvalue: f.min_hessian_eigenvalue,
                erratic: f.erratic,
                error: None,
            },
            Err(e) => Self {
                replicate,
                estimator,
                transformed: Vec::new(),
                objective: f64::NAN,
                min_hessian_eigenvalue: f64::NAN,
                erratic: false,
                error: Some(e.to_string()),
            },
        }
    }

    pub fn usable(&self) -> bool {
        self.error.is_none() && !self.erratic
    }

    /// Simulates replicate `replicate` from `seed` at `truth` and fits it.
    #[allow(clippy::too_many_arguments)]
    pub fn run(
        model: &dyn TableModel,
        truth: &[f64],
        estimator: Estimator,
        space: &ParamSpace,
        seed: u64,
        replicate: u64,
        opts: &OptimOptions,
    ) -> Self {
        let mut rng = stream_rng(seed, replicate);
        let result = model
            .simulate(truth, &mut rng)
            .and_then(|counts| fit(estimator, &counts, model, space, opts));
        Self::from_fit(replicate, estimator, result)
    }
}

/// Mean, bias and RMSE of one parameter over the usable replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub parameter: String,
    pub n: usize,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub rows: Vec<SummaryRow>,
    pub n_replicates: usize,
    pub n_erratic: usize,
    pub n_failed: usize,
}

/// Summary on the estimation scale against `truth` (same scale), skipping erratic and failed fits.
pub fn summarize(records: &[ReplicateRecord], names: &[String], truth: &[f64]) -> StudySummary {
    let usable: Vec<&ReplicateRecord> = records.iter().filter(|r| r.usable()).collect();
    let rows = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let vals: Vec<f64> = usable.iter().map(|r| r.transformed[j]).collect();
            let n = vals.len();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let mse = vals.iter().map(|v| (v - truth[j]).powi(2)).sum::<f64>() / n as f64;
            SummaryRow {
                parameter: name.clone(),
                n,
                truth: truth[j],
                mean,
                bias: mean - truth[j],
                rmse: mse.sqrt(),
            }
        })
        .collect();
    StudySummary {
        rows,
        n_replicates: records.len(),
        n_erratic: records.iter().filter(|r| r.error.is_none() && r.erratic).count(),
        n_failed: records.iter().filter(|r| r.error.is_some()).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(r: u64, v: f64, erratic: bool) -> ReplicateRecord {
        ReplicateRecord {
            replicate: r,
            estimator: Estimator::Mcle,
            transformed: vec![v],
            objective: 1.0,
            min_hessian_eigenvalue: 1.0,
            erratic,
            error: None,
        }
    }

    #[test]
    fn summary_statistics() {
        let recs = vec![rec(0, 1.0, false), rec(1, 3.0, false), rec(2, 100.0, true)];
        let s = summarize(&recs, &["a".to_string()], &[1.5]);
        assert_eq!(s.n_erratic, 1);
        let row = &s.rows[0];
        assert_eq!(row.n, 2);
        assert_eq!(row.mean, 2.0);
        assert_eq!(row.bias, 0.5);
        assert!((row.rmse - (0.25f64 + 2.25) .sqrt() / 2f64.sqrt()).abs() < 1e-15);
    }
}
