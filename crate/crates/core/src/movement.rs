//! Gaussian trajectory models and their cell path probabilities.
//!
//! Every model here is isotropic with independent coordinates, so rectangle
//! probabilities factor into per-axis interval (one time) and bivariate
//! interval (two times) probabilities.
//!
//! Steady OU with home-range scale τ, speed σ and centre z has θ = σ²/(2τ²),
//! mean z, variance τ² and `Cov(X(t), X(s)) = τ² e^{−θ|t−s|}` per axis.
//!
//! Conditioning the stationary process on `X(t0) = x0` is ordinary Gaussian
//! conditioning on one coordinate of the Gaussian vector
//! `(X(t0), X(t), X(s))`. With `c(u, v) = τ² e^{−θ|u−v|}` and `t, s ≥ t0`:
//!
//! ```text
//! E[X(t) | x0]        = z + c(t, t0)/c(t0, t0) (x0 − z) = z + (x0 − z) e^{−θ(t−t0)}
//! Cov(X(t), X(s) | x0) = c(t, s) − c(t, t0) c(s, t0) / c(t0, t0)
//!                      = τ² (e^{−θ|t−s|} − e^{−θ(t+s−2t0)})
//! ```
//!
//! which at `t = s` gives the variance `τ² (1 − e^{−2θ(t−t0)})`.
//!
//! Brownian motion started at `x0` at `t0` has mean x0 and
//! `Cov(X(t), X(s)) = σ² (min(t, s) − t0)`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ecm::PathProbabilityTable;
use crate::error::{invalid, Result};
use crate::gauss::{
    bvn_rect_unchecked, conditional_gap, normal_interval, Interval, Rect2D, GAP_CUTOFF, RHO_DEGENERATE,
};

/// Steady-state OU parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuParams {
    pub tau: f64,
    pub sigma: f64,
    pub z: [f64; 2],
}

impl OuParams {
    pub fn new(tau: f64, sigma: f64, z: [f64; 2]) -> Result<Self> {
        let p = Self { tau, sigma, z };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(invalid(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(invalid(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.z[0].is_finite() && self.z[1].is_finite()) {
            return Err(invalid("activity centre must be finite"));
        }
        Ok(())
    }

    /// Mean-reversion rate θ = σ²/(2τ²).
    pub fn theta(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.tau * self.tau)
    }
}

/// Steady OU conditioned on `X(t0) = x0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionedOuParams {
    pub base: OuParams,
    pub t0: f64,
    pub x0: [f64; 2],
}

impl ConditionedOuParams {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if !self.t0.is_finite() || !(self.x0[0].is_finite() && self.x0[1].is_finite()) {
            return Err(invalid("conditioning time and point must be finite"));
        }
        Ok(())
    }
}

/// Brownian motion with speed σ started at `x0` at time `t0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrownianParams {
    pub sigma: f64,
    pub t0: f64,
    pub x0: [f64; 2],
}

impl BrownianParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(invalid(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !self.t0.is_finite() || !(self.x0[0].is_finite() && self.x0[1].is_finite()) {
            return Err(invalid("start time and point must be finite"));
        }
        Ok(())
    }
}

/// Explorer/sedentary mixture: Brownian with probability α, conditioned OU otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureParams {
    pub alpha: f64,
    pub brownian: BrownianParams,
    pub ou: ConditionedOuParams,
}

impl MixtureParams {
    /// Mixture whose components share σ, t0 and x0, with the OU part centred at x0.
    pub fn centred(alpha: f64, tau: f64, sigma: f64, t0: f64, x0: [f64; 2]) -> Result<Self> {
        let p = Self {
            alpha,
            brownian: BrownianParams { sigma, t0, x0 },
            ou: ConditionedOuParams {
                base: OuParams { tau, sigma, z: x0 },
                t0,
                x0,
            },
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        self.brownian.validate()?;
        self.ou.validate()?;
        if self.brownian.sigma != self.ou.base.sigma
            || self.brownian.t0 != self.ou.t0
            || self.brownian.x0 != self.ou.x0
        {
            return Err(invalid("mixture components must share sigma, t0 and x0"));
        }
        Ok(())
    }
}

/// Supported trajectory laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MovementModel {
    SteadyOu(OuParams),
    ConditionedOu(ConditionedOuParams),
    Brownian(BrownianParams),
    Mixture(MixtureParams),
}

/// A single Gaussian process component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GaussianProcess {
    SteadyOu(OuParams),
    ConditionedOu(ConditionedOuParams),
    Brownian(BrownianParams),
}

/// Per-axis marginal law at one time (isotropic: one sd for both axes).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Marginal {
    pub mean: [f64; 2],
    pub sd: f64,
}

/// Per-axis joint law at two times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLaw {
    pub first: Marginal,
    pub second: Marginal,
    /// Correlation between the two times; 0 when either sd is 0.
    pub rho: f64,
}

fn check_after(t: f64, t0: f64) -> Result<f64> {
    if !t.is_finite() {
        return Err(invalid(format!("time {t} is not finite")));
    }
    if t < t0 {
        return Err(invalid(format!("time {t} precedes start time {t0}")));
    }
    Ok(t - t0)
}

impl GaussianProcess {
    pub fn validate(&self) -> Result<()> {
        match self {
            GaussianProcess::SteadyOu(p) => p.validate(),
            GaussianProcess::ConditionedOu(p) => p.validate(),
            GaussianProcess::Brownian(p) => p.validate(),
        }
    }

    pub fn marginal(&self, t: f64) -> Result<Marginal> {
        match self {
            GaussianProcess::SteadyOu(p) => Ok(Marginal {
                mean: p.z,
                sd: p.tau,
            }),
            GaussianProcess::ConditionedOu(p) => {
                let u = check_after(t, p.t0)?;
                let th = p.base.theta();
                // x0 + (z − x0)(1 − e^{−θu}), exact at u = 0
                let grow = -(-th * u).exp_m1();
                let (z, x0) = (p.base.z, p.x0);
                Ok(Marginal {
                    mean: [x0[0] + (z[0] - x0[0]) * grow, x0[1] + (z[1] - x0[1]) * grow],
                    sd: p.base.tau * (-(-2.0 * th * u).exp_m1()).sqrt(),
                })
            }
            GaussianProcess::Brownian(p) => {
                let u = check_after(t, p.t0)?;
                Ok(Marginal {
                    mean: p.x0,
                    sd: p.sigma * u.sqrt(),
                })
            }
        }
    }

    /// Per-axis covariance `Cov(X_j(t), X_j(s))`.
    pub fn covariance(&self, t: f64, s: f64) -> Result<f64> {
        match self {
            GaussianProcess::SteadyOu(p) => {
                if !(t.is_finite() && s.is_finite()) {
                    return Err(invalid("times must be finite"));
                }
                Ok(p.tau * p.tau * (-p.theta() * (t - s).abs()).exp())
            }
            GaussianProcess::ConditionedOu(p) => {
                let ut = check_after(t, p.t0)?;
                let us = check_after(s, p.t0)?;
                let th = p.base.theta();
                let lo = ut.min(us);
                Ok(p.base.tau * p.base.tau
                    * (-th * (t - s).abs()).exp()
                    * -(-2.0 * th * lo).exp_m1())
            }
            GaussianProcess::Brownian(p) => {
                let ut = check_after(t, p.t0)?;
                let us = check_after(s, p.t0)?;
                Ok(p.sigma * p.sigma * ut.min(us))
            }
        }
    }

    /// Per-axis correlation between the two times (0 when a marginal is degenerate).
    pub fn correlation(&self, t: f64, s: f64) -> Result<f64> {
        Ok(self.pair(t, s)?.rho)
    }

    pub fn pair(&self, t: f64, s: f64) -> Result<PairLaw> {
        let first = self.marginal(t)?;
        let second = self.marginal(s)?;
        let rho = match self {
            GaussianProcess::SteadyOu(p) => (-p.theta() * (t - s).abs()).exp(),
            GaussianProcess::ConditionedOu(p) => {
                if first.sd == 0.0 || second.sd == 0.0 {
                    0.0
                } else {
                    // e^{−θ|t−s|} √((1−e^{−2θ u_min}) / (1−e^{−2θ u_max}))
                    let th = p.base.theta();
                    let (ut, us) = (t - p.t0, s - p.t0);
                    let num = -(-2.0 * th * ut.min(us)).exp_m1();
                    let den = -(-2.0 * th * ut.max(us)).exp_m1();
                    ((-th * (t - s).abs()).exp() * (num / den).sqrt()).min(1.0)
                }
            }
            GaussianProcess::Brownian(p) => {
                if first.sd == 0.0 || second.sd == 0.0 {
                    0.0
                } else {
                    let (ut, us) = (t - p.t0, s - p.t0);
                    (ut.min(us) / ut.max(us)).sqrt()
                }
            }
        };
        Ok(PairLaw { first, second, rho })
    }
}

/// Steady or conditioned OU marginal at `t`.
pub fn ou_marginal(process: &GaussianProcess, t: f64) -> Result<Marginal> {
    process.marginal(t)
}

/// Per-axis OU correlation between times `t` and `s`.
pub fn ou_pair_correlation(process: &GaussianProcess, t: f64, s: f64) -> Result<f64> {
    process.correlation(t, s)
}

/// Brownian marginal at `t`.
pub fn brownian_marginal(p: &BrownianParams, t: f64) -> Result<Marginal> {
    GaussianProcess::Brownian(*p).marginal(t)
}

/// Brownian joint law at `t` and `s`.
pub fn brownian_pair(p: &BrownianParams, t: f64, s: f64) -> Result<PairLaw> {
    GaussianProcess::Brownian(*p).pair(t, s)
}

impl MovementModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            MovementModel::SteadyOu(p) => p.validate(),
            MovementModel::ConditionedOu(p) => p.validate(),
            MovementModel::Brownian(p) => p.validate(),
            MovementModel::Mixture(p) => p.validate(),
        }
    }

    /// Weighted Gaussian components; weights sum to 1.
    pub fn components(&self) -> Vec<(f64, GaussianProcess)> {
        match *self {
            MovementModel::SteadyOu(p) => vec![(1.0, GaussianProcess::SteadyOu(p))],
            MovementModel::ConditionedOu(p) => vec![(1.0, GaussianProcess::ConditionedOu(p))],
            MovementModel::Brownian(p) => vec![(1.0, GaussianProcess::Brownian(p))],
            MovementModel::Mixture(m) => vec![
                (m.alpha, GaussianProcess::Brownian(m.brownian)),
                (1.0 - m.alpha, GaussianProcess::ConditionedOu(m.ou)),
            ],
        }
    }

    /// Earliest time at which the model is defined.
    pub fn start_time(&self) -> f64 {
        match self {
            MovementModel::SteadyOu(_) => f64::NEG_INFINITY,
            MovementModel::ConditionedOu(p) => p.t0,
            MovementModel::Brownian(p) => p.t0,
            MovementModel::Mixture(p) => p.ou.t0,
        }
    }
}

/// Survey times and the disjoint cells counted at each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDesign")]
pub struct SurveyDesign {
    times: Vec<f64>,
    cells: Vec<Vec<Rect2D>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDesign {
    times: Vec<f64>,
    cells: Vec<Vec<Rect2D>>,
}

impl TryFrom<RawDesign> for SurveyDesign {
    type Error = crate::error::Error;

    fn try_from(r: RawDesign) -> Result<Self> {
        Self::new(r.times, r.cells)
    }
}

impl SurveyDesign {
    pub fn new(times: Vec<f64>, cells: Vec<Vec<Rect2D>>) -> Result<Self> {
        if times.len() != cells.len() {
            return Err(invalid(format!(
                "{} times but {} cell lists",
                times.len(),
                cells.len()
            )));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(invalid("survey times must be finite"));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("survey times must be strictly increasing"));
        }
        for (k, row) in cells.iter().enumerate() {
            for i in 0..row.len() {
                for j in i + 1..row.len() {
                    if row[i].overlaps(&row[j]) {
                        return Err(invalid(format!("cells {i} and {j} overlap at time {k}")));
                    }
                }
            }
        }
        Ok(Self { times, cells })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn cells(&self) -> &[Vec<Rect2D>] {
        &self.cells
    }

    pub fn n(&self) -> usize {
        self.times.len()
    }

    pub fn cell_counts(&self) -> Vec<usize> {
        self.cells.iter().map(Vec::len).collect()
    }

    fn check_model(&self, model: &MovementModel) -> Result<()> {
        model.validate()?;
        if let Some(&t) = self.times.first() {
            if t < model.start_time() {
                return Err(invalid(format!(
                    "first survey time {t} precedes the model start {}",
                    model.start_time()
                )));
            }
        }
        Ok(())
    }
}

fn rect_prob(m: &Marginal, cell: &Rect2D) -> f64 {
    normal_interval(cell.x, m.mean[0], m.sd) * normal_interval(cell.y, m.mean[1], m.sd)
}

fn axis_pair_prob(a: Interval, b: Interval, law: &PairLaw, j: usize) -> f64 {
    let (f, s) = (&law.first, &law.second);
    if f.sd == 0.0 || s.sd == 0.0 {
        return normal_interval(a, f.mean[j], f.sd) * normal_interval(b, s.mean[j], s.sd);
    }
    bvn_rect_unchecked(
        a.standardize(f.mean[j], f.sd),
        b.standardize(s.mean[j], s.sd),
        law.rho,
    )
}

fn axis_negligible(a: Interval, b: Interval, law: &PairLaw, j: usize) -> bool {
    let (f, s) = (&law.first, &law.second);
    f.sd > 0.0
        && s.sd > 0.0
        && law.rho.abs() <= RHO_DEGENERATE
        && conditional_gap(
            a.standardize(f.mean[j], f.sd),
            b.standardize(s.mean[j], s.sd),
            law.rho,
        ) > GAP_CUTOFF
}

fn rect_pair_prob(a: &Rect2D, b: &Rect2D, law: &PairLaw) -> f64 {
    if axis_negligible(a.x, b.x, law, 0) || axis_negligible(a.y, b.y, law, 1) {
        return 0.0;
    }
    let px = axis_pair_prob(a.x, b.x, law, 0);
    if px == 0.0 {
        return 0.0;
    }
    px * axis_pair_prob(a.y, b.y, law, 1)
}

/// `P(X(t) ∈ cell)`.
pub fn cell_probability(model: &MovementModel, t: f64, cell: &Rect2D) -> Result<f64> {
    model.validate()?;
    let mut p = 0.0;
    for (w, g) in model.components() {
        if w > 0.0 {
            p += w * rect_prob(&g.marginal(t)?, cell);
        }
    }
    Ok(p.clamp(0.0, 1.0))
}

/// `P(X(t) ∈ a, X(s) ∈ b)` for `t ≠ s`.
pub fn pair_cell_probability(
    model: &MovementModel,
    t: f64,
    a: &Rect2D,
    s: f64,
    b: &Rect2D,
) -> Result<f64> {
    if t == s {
        return Err(invalid("pair probability needs two distinct times"));
    }
    model.validate()?;
    let mut p = 0.0;
    for (w, g) in model.components() {
        if w > 0.0 {
            p += w * rect_pair_prob(a, b, &g.pair(t, s)?);
        }
    }
    Ok(p.clamp(0.0, 1.0))
}

/// Which two-times blocks to fill.
#[derive(Debug, Clone, PartialEq)]
pub enum PairSelection {
    All,
    Listed(Vec<(usize, usize)>),
}

/// Per-time one-time probabilities.
pub fn one_time_probabilities(model: &MovementModel, design: &SurveyDesign) -> Result<Vec<Vec<f64>>> {
    design.check_model(model)?;
    let comps = model.components();
    design
        .times
        .iter()
        .zip(&design.cells)
        .map(|(&t, cells)| {
            let margs = comps
                .iter()
                .map(|(w, g)| Ok((*w, g.marginal(t)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(cells
                .iter()
                .map(|c| {
                    margs
                        .iter()
                        .filter(|(w, _)| *w > 0.0)
                        .map(|(w, m)| w * rect_prob(m, c))
                        .sum::<f64>()
                        .clamp(0.0, 1.0)
                })
                .collect())
        })
        .collect()
}

/// Two-times block for times `k < k2`.
pub fn two_times_block(
    model: &MovementModel,
    design: &SurveyDesign,
    k: usize,
    k2: usize,
) -> Result<DMatrix<f64>> {
    let (t, s) = (design.times[k], design.times[k2]);
    let laws = model
        .components()
        .into_iter()
        .filter(|(w, _)| *w > 0.0)
        .map(|(w, g)| Ok((w, g.pair(t, s)?)))
        .collect::<Result<Vec<_>>>()?;
    let (ca, cb) = (&design.cells[k], &design.cells[k2]);
    Ok(DMatrix::from_fn(ca.len(), cb.len(), |i, j| {
        laws.iter()
            .map(|(w, law)| w * rect_pair_prob(&ca[i], &cb[j], law))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }))
}

/// Path probability table of `model` over `design`.
pub fn build_path_table(
    model: &MovementModel,
    design: &SurveyDesign,
    pairs: &PairSelection,
) -> Result<PathProbabilityTable> {
    let one_time = one_time_probabilities(model, design)?;
    let n = design.n();
    let keys: Vec<(usize, usize)> = match pairs {
        PairSelection::All => (0..n)
            .flat_map(|k| (k + 1..n).map(move |k2| (k, k2)))
            .collect(),
        PairSelection::Listed(list) => {
            let mut v = Vec::with_capacity(list.len());
            for &(a, b) in list {
                if a == b || a.max(b) >= n {
                    return Err(invalid(format!("invalid time pair ({a}, {b})")));
                }
                v.push((a.min(b), a.max(b)));
            }
            v.sort_unstable();
            v.dedup();
            v
        }
    };
    let mut two_times = BTreeMap::new();
    for (k, k2) in keys {
        two_times.insert((k, k2), two_times_block(model, design, k, k2)?);
    }
    PathProbabilityTable::new(one_time, two_times)
}
