//! Parameter estimation from count arrangements.
//!
//! Two estimating functions are provided: the Gaussian pseudo-likelihood
//! (MGLE), which replaces the intractable likelihood by a Gaussian with the
//! exact ECM mean and covariance, and the pairwise composite likelihood
//! (MCLE), which multiplies the exact laws of every pair of counts. Both are
//! maximized by multistart box-constrained quasi-Newton search on a
//! transformed parameter scale.

mod bootstrap;
mod families;
mod objective;
mod optim;
mod study;

use nalgebra::{DMatrix, SymmetricEigen};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ecm::{CountArrangement, PathProbabilityTable, PopulationSize};
use crate::error::{invalid, Error, Result};

pub use bootstrap::{
    bootstrap_replicates, parametric_bootstrap, percentile, BootstrapResult, CONFIDENCE, DEFAULT_OVERDRAW,
};
pub use families::{
    LambdaRange, MixtureFamily, OuFamily, ProbabilityFamily, SizeMode,
};
pub use objective::{
    composite_pair_terms, gaussian_logpdf, gaussian_pseudo_loglik, pairwise_composite_loglik, PairTerm,
    JITTER_MAX, JITTER_START,
};
pub use optim::{finite_difference_hessian, minimize_box, OptimOptions, OptimOutcome, StopReason};
pub use study::{summarize, ReplicateRecord, StudySummary, SummaryRow};

/// Minimum Hessian eigenvalue below which a fit is flagged erratic.
pub const ERRATIC_EIGENVALUE: f64 = 1e-12;
/// Relative step of the finite-difference Hessian.
pub const HESSIAN_STEP: f64 = 1e-4;

/// Map from the optimization scale to the natural scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    /// natural = e^x
    Log,
    /// natural = 1 / (1 + e^{−x})
    Logit,
    /// natural = c − e^x, for parameters bounded above by `c`
    LogBelow(f64),
}

impl Transform {
    pub fn to_natural(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Log => x.exp(),
            Transform::Logit => 1.0 / (1.0 + (-x).exp()),
            Transform::LogBelow(c) => c - x.exp(),
        }
    }

    pub fn from_natural(self, v: f64) -> Result<f64> {
        let x = match self {
            Transform::Identity => v,
            Transform::Log if v > 0.0 => v.ln(),
            Transform::Logit if v > 0.0 && v < 1.0 => (v / (1.0 - v)).ln(),
            Transform::LogBelow(c) if v < c => (c - v).ln(),
            _ => return Err(invalid(format!("{v} is outside the domain of {self:?}"))),
        };
        if x.is_finite() {
            Ok(x)
        } else {
            Err(invalid(format!("{v} maps to a non-finite value under {self:?}")))
        }
    }
}

/// Named parameters with transforms, a box on the transformed scale and start points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpace {
    pub names: Vec<String>,
    pub transforms: Vec<Transform>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Start points on the transformed scale.
    pub starts: Vec<Vec<f64>>,
}

impl ParamSpace {
    pub fn new(
        names: Vec<String>,
        transforms: Vec<Transform>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        starts: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let s = Self {
            names,
            transforms,
            lower,
            upper,
            starts,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.names.len();
        if self.transforms.len() != p || self.lower.len() != p || self.upper.len() != p {
            return Err(Error::DimensionMismatch(
                "names, transforms and bounds must have equal lengths".into(),
            ));
        }
        for i in 0..p {
            let (lo, hi) = (self.lower[i], self.upper[i]);
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(invalid(format!("invalid bounds [{lo}, {hi}] for {}", self.names[i])));
            }
        }
        if self.starts.is_empty() {
            return Err(invalid("at least one start point is required"));
        }
        for (s, start) in self.starts.iter().enumerate() {
            if start.len() != p {
                return Err(Error::DimensionMismatch(format!("start {s} has {} values", start.len())));
            }
            for i in 0..p {
                if !(start[i] >= self.lower[i] && start[i] <= self.upper[i]) {
                    return Err(invalid(format!(
                        "start {s}: {} = {} lies outside [{}, {}]",
                        self.names[i], start[i], self.lower[i], self.upper[i]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn to_natural(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.transforms).map(|(&v, t)| t.to_natural(v)).collect()
    }

    pub fn from_natural(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!("{} values for {} parameters", v.len(), self.dim())));
        }
        v.iter().zip(&self.transforms).map(|(&v, t)| t.from_natural(v)).collect()
    }

    /// Same space with different start points (transformed scale), clamped into the box.
    pub fn with_starts(&self, starts: Vec<Vec<f64>>) -> Result<Self> {
        let starts = starts
            .into_iter()
            .map(|s| {
                s.iter()
                    .enumerate()
                    .map(|(i, v)| v.clamp(self.lower[i], self.upper[i]))
                    .collect()
            })
            .collect();
        Self::new(
            self.names.clone(),
            self.transforms.clone(),
            self.lower.clone(),
            self.upper.clone(),
            starts,
        )
    }
}

/// The two estimating functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Mgle,
    Mcle,
}

impl Estimator {
    /// Log estimating function of the counts under `table`.
    pub fn loglik(
        self,
        counts: &CountArrangement,
        table: &PathProbabilityTable,
        size: PopulationSize,
    ) -> Result<f64> {
        match self {
            Estimator::Mgle => gaussian_pseudo_loglik(counts, table, size),
            Estimator::Mcle => pairwise_composite_loglik(counts, table, size),
        }
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Estimator::Mgle => "MGLE",
            Estimator::Mcle => "MCLE",
        })
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mgle" => Ok(Estimator::Mgle),
            "mcle" => Ok(Estimator::Mcle),
            _ => Err(invalid(format!("unknown estimator {s:?}"))),
        }
    }
}

/// A parametric family of path probability tables that can also simulate data.
pub trait TableModel: Sync {
    /// Table and population size at natural-scale parameters.
    fn evaluate(&self, natural: &[f64]) -> Result<(PathProbabilityTable, PopulationSize)>;

    /// Simulated counts at natural-scale parameters.
    fn simulate(&self, natural: &[f64], rng: &mut ChaCha20Rng) -> Result<CountArrangement>;
}

/// Final point of one start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalOptimum {
    pub start_index: usize,
    pub transformed: Vec<f64>,
    #[serde(with = "nullable")]
    pub objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub stop: StopReason,
}

/// Outcome of a multistart fit. The objective is minimized (negated log estimating function).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub transformed: Vec<f64>,
    pub natural: Vec<f64>,
    pub objective: f64,
    #[serde(with = "nullable_matrix")]
    pub hessian: Vec<Vec<f64>>,
    #[serde(with = "nullable")]
    pub min_hessian_eigenvalue: f64,
    pub erratic: bool,
    pub start_index: usize,
    pub iterations: usize,
    pub evaluations: usize,
    /// Whether each coordinate ended on a bound of the box.
    pub at_bound: Vec<bool>,
    /// Final points of every start, in start order.
    pub local_optima: Vec<LocalOptimum>,
}

impl FitResult {
    /// Value of the log estimating function at the estimate.
    pub fn loglik(&self) -> f64 {
        -self.objective
    }
}

/// Smallest eigenvalue of a symmetric matrix; NaN when any entry is non-finite.
pub fn min_eigenvalue(h: &DMatrix<f64>) -> f64 {
    if h.iter().any(|v| !v.is_finite()) || h.nrows() == 0 {
        return f64::NAN;
    }
    let sym = (h + h.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// Erratic-fit rule: the minimum Hessian eigenvalue is below 1e−12 (or undefined).
pub fn is_erratic(min_eigenvalue: f64) -> bool {
    !(min_eigenvalue >= ERRATIC_EIGENVALUE)
}

/// Minimizes `objective` from every start of `space`, keeps the best final
/// value (ties to the lowest start index) and computes Hessian diagnostics.
pub fn fit_objective(
    objective: &(dyn Fn(&[f64]) -> f64 + Sync),
    space: &ParamSpace,
    opts: &OptimOptions,
) -> Result<FitResult> {
    space.validate()?;
    let runs: Vec<OptimOutcome> = space
        .starts
        .par_iter()
        .map(|s| minimize_box(objective, s, &space.lower, &space.upper, opts))
        .collect();
    let mut best: Option<usize> = None;
    for (i, r) in runs.iter().enumerate() {
        if r.value.is_finite() && best.is_none_or(|b| r.value < runs[b].value) {
            best = Some(i);
        }
    }
    let Some(b) = best else {
        return Err(Error::FitFailed("no start produced a finite objective".into()));
    };
    let win = &runs[b];
    let hess = finite_difference_hessian(objective, &win.x, HESSIAN_STEP);
    let min_eig = min_eigenvalue(&hess);
    Ok(FitResult {
        names: space.names.clone(),
        transformed: win.x.clone(),
        natural: space.to_natural(&win.x),
        objective: win.value,
        hessian: (0..hess.nrows()).map(|i| hess.row(i).iter().copied().collect()).collect(),
        min_hessian_eigenvalue: min_eig,
        erratic: is_erratic(min_eig),
        start_index: b,
        iterations: runs.iter().map(|r| r.iterations).sum(),
        evaluations: runs.iter().map(|r| r.evaluations).sum::<usize>() + 2 * space.dim() * space.dim() + 1,
        at_bound: (0..space.dim())
            .map(|i| win.x[i] <= space.lower[i] || win.x[i] >= space.upper[i])
            .collect(),
        local_optima: runs
            .iter()
            .enumerate()
            .map(|(i, r)| LocalOptimum {
                start_index: i,
                transformed: r.x.clone(),
                objective: r.value,
                iterations: r.iterations,
                evaluations: r.evaluations,
                stop: r.stop,
            })
            .collect(),
    })
}

/// Negated estimating function of `counts` over a parametric family, on the transformed scale.
pub fn family_objective<'a>(
    estimator: Estimator,
    counts: &'a CountArrangement,
    model: &'a dyn TableModel,
    space: &'a ParamSpace,
) -> impl Fn(&[f64]) -> f64 + Sync + 'a {
    move |x: &[f64]| {
        let natural = space.to_natural(x);
        match model
            .evaluate(&natural)
            .and_then(|(table, size)| estimator.loglik(counts, &table, size))
        {
            Ok(v) if !v.is_nan() => -v,
            _ => f64::INFINITY,
        }
    }
}

/// Fits a parametric family to counts with the chosen estimating function.
pub fn fit(
    estimator: Estimator,
    counts: &CountArrangement,
    model: &dyn TableModel,
    space: &ParamSpace,
    opts: &OptimOptions,
) -> Result<FitResult> {
    let f = family_objective(estimator, counts, model, space);
    fit_objective(&f, space, opts)
}

/// Serializes non-finite floats as `null` and reads `null` back as NaN.
pub(crate) mod nullable {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

pub(crate) mod nullable_matrix {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<Option<f64>>> = m
            .iter()
            .map(|r| r.iter().map(|v| v.is_finite().then_some(*v)).collect())
            .collect();
        serde::Serialize::serialize(&rows, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        let rows = Vec::<Vec<Option<f64>>>::deserialize(d)?;
        Ok(rows
            .into_iter()
            .map(|r| r.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect())
            .collect())
    }
}
