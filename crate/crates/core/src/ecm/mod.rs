//! Distribution kernel for ECM and ECM-Poisson count arrangements.
//!
//! An arrangement holds, for each time `k`, a vector of counts over the `m_k`
//! categories observed at that time. The law of an arrangement is described
//! here only through its one-time probabilities `p[k][l]` and two-times
//! probabilities `p[(k,k')][l][l']`, which is all the moment formulas and pair
//! likelihoods need. Per-time probabilities may sum to less than one: the
//! missing mass is an implicit, unobserved complement category.

mod math;
mod moments;
pub mod oracle;
mod pmf;
mod sample;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub use math::{ln_factorial, log_sum_exp};
pub use moments::{ecm_mean_cov, Moments};
pub use pmf::{
    binomial_logpmf, bivariate_binomial_logpmf, bivariate_binomial_pmf, bivariate_poisson_logpmf,
    bivariate_poisson_pmf, multinomial_logpmf, multinomial_pair_logpmf, multinomial_pair_pmf,
    poisson_logpmf,
};
pub use sample::{sample_conditional_next, sample_conditional_next_poisson, sample_multinomial};
pub(crate) use pmf::{
    bernoulli_pair_cells, bivariate_binomial_from_cells, bivariate_poisson_from_rates, poisson_pair_rates,
    trinomial,
};

/// Absolute tolerance for probability consistency checks.
pub const PROB_TOL: f64 = 1e-9;
/// Negative probabilities above this value are treated as rounding noise and clamped to zero.
pub const NEG_CLAMP: f64 = -1e-12;

/// Number of categories observed at each time step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySchedule {
    m: Vec<usize>,
}

impl CategorySchedule {
    pub fn new(m: Vec<usize>) -> Result<Self> {
        if m.is_empty() {
            return Err(invalid("schedule needs at least one time step"));
        }
        if let Some(k) = m.iter().position(|&mk| mk == 0) {
            return Err(invalid(format!("time {k} has no categories")));
        }
        Ok(Self { m })
    }

    /// Number of time steps.
    pub fn n(&self) -> usize {
        self.m.len()
    }

    pub fn m(&self, k: usize) -> usize {
        self.m[k]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.m
    }

    pub fn total_cells(&self) -> usize {
        self.m.iter().sum()
    }

    /// Offset of time `k` in the flattened (k, l) ordering.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.m
            .iter()
            .map(|&mk| {
                let o = acc;
                acc += mk;
                o
            })
            .collect()
    }

    /// All cross-time pairs `(k, k')` with `k < k'`.
    pub fn cross_time_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        (0..n)
            .flat_map(|k| (k + 1..n).map(move |k2| (k, k2)))
            .collect()
    }
}

/// Observed counts: `counts[k][l]` individuals in category `l` at time `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountArrangement {
    schedule: CategorySchedule,
    counts: Vec<Vec<u64>>,
}

impl CountArrangement {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        let schedule = CategorySchedule::new(counts.iter().map(Vec::len).collect())?;
        Ok(Self { schedule, counts })
    }

    pub fn zeros(schedule: &CategorySchedule) -> Self {
        Self {
            counts: schedule.sizes().iter().map(|&m| vec![0; m]).collect(),
            schedule: schedule.clone(),
        }
    }

    pub fn schedule(&self) -> &CategorySchedule {
        &self.schedule
    }

    pub fn get(&self, k: usize, l: usize) -> u64 {
        self.counts[k][l]
    }

    pub fn row(&self, k: usize) -> &[u64] {
        &self.counts[k]
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    /// Counts in flattened (k, l) order.
    pub fn flat(&self) -> Vec<u64> {
        self.counts.iter().flatten().copied().collect()
    }

    pub fn total_at(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }

    /// Checks that no time step holds more than `n` individuals.
    pub fn check_known_size(&self, n: u64) -> Result<()> {
        for k in 0..self.schedule.n() {
            let total = self.total_at(k);
            if total > n {
                return Err(invalid(format!(
                    "time {k} holds {total} individuals, more than N = {n}"
                )));
            }
        }
        Ok(())
    }
}

/// Total population: a known count (ECM) or a Poisson rate (ECM-Poisson).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationSize {
    Known(u64),
    PoissonRate(f64),
}

impl PopulationSize {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PopulationSize::Known(0) => Err(invalid("population size must be at least 1")),
            PopulationSize::PoissonRate(l) if !(l > 0.0 && l.is_finite()) => {
                Err(invalid(format!("size rate must be positive, got {l}")))
            }
            _ => Ok(()),
        }
    }

    /// `N` or `λ` as a real number.
    pub fn scale(&self) -> f64 {
        match *self {
            PopulationSize::Known(n) => n as f64,
            PopulationSize::PoissonRate(l) => l,
        }
    }
}

/// One-time and two-times path probabilities.
///
/// `two_times` is keyed by `(k, k')` with `k < k'`; the matrix has shape
/// `m_k × m_k'`. Only the pairs an estimator needs have to be present.
#[derive(Debug, Clone, PartialEq)]
pub struct PathProbabilityTable {
    schedule: CategorySchedule,
    one_time: Vec<Vec<f64>>,
    two_times: BTreeMap<(usize, usize), DMatrix<f64>>,
}

fn clamp_prob(v: f64, what: impl Fn() -> String) -> Result<f64> {
    if v.is_nan() {
        return Err(Error::InconsistentTable(format!("{} is NaN", what())));
    }
    if v < 0.0 {
        if v >= NEG_CLAMP {
            return Ok(0.0);
        }
        return Err(Error::InconsistentTable(format!("{} = {v} < 0", what())));
    }
    if v > 1.0 {
        if v <= 1.0 + PROB_TOL {
            return Ok(1.0);
        }
        return Err(Error::InconsistentTable(format!("{} = {v} > 1", what())));
    }
    Ok(v)
}

impl PathProbabilityTable {
    /// Builds a table, clamping rounding noise and rejecting inconsistent entries.
    pub fn new(
        one_time: Vec<Vec<f64>>,
        two_times: BTreeMap<(usize, usize), DMatrix<f64>>,
    ) -> Result<Self> {
        let schedule = CategorySchedule::new(one_time.iter().map(Vec::len).collect())?;
        let mut one_time = one_time;
        for (k, row) in one_time.iter_mut().enumerate() {
            for (l, p) in row.iter_mut().enumerate() {
                *p = clamp_prob(*p, || format!("p[{k}][{l}]"))?;
            }
            let s: f64 = row.iter().sum();
            if s > 1.0 + PROB_TOL {
                return Err(Error::InconsistentTable(format!(
                    "one-time probabilities at time {k} sum to {s}"
                )));
            }
        }
        let mut two_times = two_times;
        for (&(k, k2), mat) in two_times.iter_mut() {
            if k >= k2 || k2 >= schedule.n() {
                return Err(Error::DimensionMismatch(format!(
                    "two-times key ({k}, {k2}) must satisfy k < k' < {}",
                    schedule.n()
                )));
            }
            if mat.nrows() != schedule.m(k) || mat.ncols() != schedule.m(k2) {
                return Err(Error::DimensionMismatch(format!(
                    "two-times ({k}, {k2}) is {}x{}, expected {}x{}",
                    mat.nrows(),
                    mat.ncols(),
                    schedule.m(k),
                    schedule.m(k2)
                )));
            }
            for l in 0..mat.nrows() {
                for l2 in 0..mat.ncols() {
                    let cap = one_time[k][l].min(one_time[k2][l2]);
                    let mut v = clamp_prob(mat[(l, l2)], || format!("p[({k},{k2})][{l}][{l2}]"))?;
                    if v > cap {
                        if v > cap + PROB_TOL {
                            return Err(Error::InconsistentTable(format!(
                                "p[({k},{k2})][{l}][{l2}] = {v} exceeds its margins ({cap})"
                            )));
                        }
                        v = cap;
                    }
                    mat[(l, l2)] = v;
                }
            }
            for l in 0..mat.nrows() {
                let s = mat.row(l).sum();
                if s > one_time[k][l] + PROB_TOL {
                    return Err(Error::InconsistentTable(format!(
                        "row {l} of ({k},{k2}) sums to {s} > p[{k}][{l}] = {}",
                        one_time[k][l]
                    )));
                }
            }
            for l2 in 0..mat.ncols() {
                let s = mat.column(l2).sum();
                if s > one_time[k2][l2] + PROB_TOL {
                    return Err(Error::InconsistentTable(format!(
                        "column {l2} of ({k},{k2}) sums to {s} > p[{k2}][{l2}] = {}",
                        one_time[k2][l2]
                    )));
                }
            }
        }
        Ok(Self {
            schedule,
            one_time,
            two_times,
        })
    }

    /// Table with one-time probabilities only.
    pub fn one_time_only(one_time: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(one_time, BTreeMap::new())
    }

    pub fn schedule(&self) -> &CategorySchedule {
        &self.schedule
    }

    pub fn one_time(&self, k: usize, l: usize) -> f64 {
        self.one_time[k][l]
    }

    pub fn one_time_row(&self, k: usize) -> &[f64] {
        &self.one_time[k]
    }

    pub fn two_times(&self, k: usize, k2: usize) -> Option<&DMatrix<f64>> {
        self.two_times.get(&(k, k2))
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.two_times.keys().copied()
    }

    pub fn has_all_pairs(&self) -> bool {
        self.schedule
            .cross_time_pairs()
            .iter()
            .all(|p| self.two_times.contains_key(p))
    }

    /// `p[(k,k')][l][l']` for `k != k'` in either order.
    pub fn pair(&self, k: usize, l: usize, k2: usize, l2: usize) -> Result<f64> {
        if k < k2 {
            self.two_times
                .get(&(k, k2))
                .map(|m| m[(l, l2)])
                .ok_or(Error::MissingPair(k, k2))
        } else if k2 < k {
            self.two_times
                .get(&(k2, k))
                .map(|m| m[(l2, l)])
                .ok_or(Error::MissingPair(k2, k))
        } else {
            Err(invalid("pair() needs two distinct times"))
        }
    }

    /// Conditional transition matrix `p_{l'|l}^{(k'|k)}` (rows indexed by time `k`).
    ///
    /// Rows whose source probability is zero are left at zero; such a source
    /// can only hold zero individuals and contributes nothing.
    pub fn conditional(&self, k: usize, k2: usize) -> Result<DMatrix<f64>> {
        let (m1, m2) = (self.schedule.m(k), self.schedule.m(k2));
        let mut out = DMatrix::zeros(m1, m2);
        for l in 0..m1 {
            let p = self.one_time[k][l];
            if p <= 0.0 {
                continue;
            }
            for l2 in 0..m2 {
                out[(l, l2)] = self.pair(k, l, k2, l2)? / p;
            }
        }
        Ok(out)
    }

    /// Applies `perm[k]` (new position → old index) to the cells of each time.
    pub fn permute_cells(&self, perm: &[Vec<usize>]) -> Result<Self> {
        let one_time = self
            .one_time
            .iter()
            .zip(perm)
            .map(|(row, p)| p.iter().map(|&i| row[i]).collect())
            .collect();
        let two_times = self
            .two_times
            .iter()
            .map(|(&(k, k2), m)| {
                let pk = &perm[k];
                let pk2 = &perm[k2];
                ((k, k2), DMatrix::from_fn(pk.len(), pk2.len(), |i, j| m[(pk[i], pk2[j])]))
            })
            .collect();
        Self::new(one_time, two_times)
    }

    /// Reorders time steps: new time `i` is old time `order[i]`.
    pub fn permute_times(&self, order: &[usize]) -> Result<Self> {
        let one_time = order.iter().map(|&k| self.one_time[k].clone()).collect();
        let mut two_times = BTreeMap::new();
        for i in 0..order.len() {
            for j in i + 1..order.len() {
                let (a, b) = (order[i], order[j]);
                let key = (a.min(b), a.max(b));
                if let Some(m) = self.two_times.get(&key) {
                    let m = if a < b { m.clone() } else { m.transpose() };
                    two_times.insert((i, j), m);
                }
            }
        }
        Self::new(one_time, two_times)
    }
}

impl CountArrangement {
    /// Applies `perm[k]` (new position → old index) to the cells of each time.
    pub fn permute_cells(&self, perm: &[Vec<usize>]) -> Result<Self> {
        Self::new(
            self.counts
                .iter()
                .zip(perm)
                .map(|(row, p)| p.iter().map(|&i| row[i]).collect())
                .collect(),
        )
    }

    /// Reorders time steps: new time `i` is old time `order[i]`.
    pub fn permute_times(&self, order: &[usize]) -> Result<Self> {
        Self::new(order.iter().map(|&k| self.counts[k].clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_rejects_empty_time() {
        assert!(CategorySchedule::new(vec![2, 0]).is_err());
        assert!(CategorySchedule::new(vec![]).is_err());
        let s = CategorySchedule::new(vec![2, 3, 1]).unwrap();
        assert_eq!(s.offsets(), vec![0, 2, 5]);
        assert_eq!(s.cross_time_pairs(), vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn table_clamps_noise_and_rejects_violations() {
        let mut tt = BTreeMap::new();
        tt.insert((0, 1), DMatrix::from_row_slice(1, 1, &[-5e-13]));
        let t = PathProbabilityTable::new(vec![vec![0.5], vec![0.4]], tt).unwrap();
        assert_eq!(t.pair(0, 0, 1, 0).unwrap(), 0.0);

        let mut tt = BTreeMap::new();
        tt.insert((0, 1), DMatrix::from_row_slice(1, 1, &[0.45]));
        assert!(PathProbabilityTable::new(vec![vec![0.5], vec![0.4]], tt).is_err());

        assert!(PathProbabilityTable::one_time_only(vec![vec![0.7, 0.4]]).is_err());
        // complement mass is allowed
        assert!(PathProbabilityTable::one_time_only(vec![vec![0.2, 0.3]]).is_ok());
    }

    #[test]
    fn conditional_rows_with_zero_source_stay_zero() {
        let mut tt = BTreeMap::new();
        tt.insert((0, 1), DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.25, 0.75]));
        let t = PathProbabilityTable::new(vec![vec![0.0, 1.0], vec![0.25, 0.75]], tt).unwrap();
        let c = t.conditional(0, 1).unwrap();
        assert_eq!(c.row(0).sum(), 0.0);
        assert!((c[(1, 0)] - 0.25).abs() < 1e-15);
        let back = t.conditional(1, 0).unwrap();
        assert!((back[(0, 1)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn known_size_check() {
        let q = CountArrangement::new(vec![vec![3, 4], vec![8]]).unwrap();
        assert!(q.check_known_size(8).is_ok());
        assert!(q.check_known_size(7).is_err());
    }
}
