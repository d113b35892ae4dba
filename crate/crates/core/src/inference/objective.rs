//! Gaussian pseudo-log-likelihood and pairwise composite log-likelihood.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::ecm::{
    bernoulli_pair_cells, bivariate_binomial_from_cells, bivariate_poisson_from_rates, ecm_mean_cov,
    poisson_logpmf, poisson_pair_rates, trinomial, CountArrangement, PathProbabilityTable,
    PopulationSize,
};
use crate::error::{Error, Result};

/// Initial diagonal jitter, relative to `trace / dim`.
pub const JITTER_START: f64 = 1e-10;
/// Largest diagonal jitter tried before the objective is declared non-finite.
pub const JITTER_MAX: f64 = 1e-6;

fn check_shapes(counts: &CountArrangement, table: &PathProbabilityTable) -> Result<()> {
    if counts.schedule() != table.schedule() {
        return Err(Error::DimensionMismatch(format!(
            "counts have cells {:?} but the table has {:?}",
            counts.schedule().sizes(),
            table.schedule().sizes()
        )));
    }
    Ok(())
}

/// Log-density of `x` under `N(mean, cov)` with the jitter policy applied;
/// `-∞` when even the largest jitter leaves `cov` indefinite.
pub fn gaussian_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let d = x.len();
    if d == 0 {
        return 0.0;
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let base = sym.trace() / d as f64;
    let mut chol = Cholesky::new(sym.clone());
    let mut jitter = JITTER_START * base;
    while chol.is_none() && base > 0.0 && jitter <= JITTER_MAX * base * (1.0 + 1e-9) {
        let mut c = sym.clone();
        for i in 0..d {
            c[(i, i)] += jitter;
        }
        chol = Cholesky::new(c);
        jitter *= 10.0;
    }
    let Some(chol) = chol else {
        return f64::NEG_INFINITY;
    };
    let l = chol.l_dirty();
    let mut log_det = 0.0;
    for i in 0..d {
        log_det += 2.0 * l[(i, i)].ln();
    }
    let r = x - mean;
    let z = chol
        .l_dirty()
        .solve_lower_triangular(&r)
        .expect("Cholesky factor has a positive diagonal");
    let v = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + z.norm_squared());
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Gaussian pseudo-log-likelihood of the counts under the table's exact mean and covariance.
pub fn gaussian_pseudo_loglik(
    counts: &CountArrangement,
    table: &PathProbabilityTable,
    size: PopulationSize,
) -> Result<f64> {
    check_shapes(counts, table)?;
    let m = ecm_mean_cov(table, size)?;
    let x = DVector::from_iterator(m.cov.nrows(), counts.flat().into_iter().map(|q| q as f64));
    let mean = DVector::from_vec(m.mean_flat());
    Ok(gaussian_logpdf(&x, &mean, &m.cov))
}

/// One term of the pairwise composite log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTerm {
    /// `(time, cell)` of the first count.
    pub first: (usize, usize),
    /// `(time, cell)` of the second count; same time implies a larger cell index.
    pub second: (usize, usize),
    pub loglik: f64,
}

/// Visits every pair term in a fixed order: same-time pairs of each time,
/// then cross-time blocks in `(k, k')` order.
fn for_each_pair(
    counts: &CountArrangement,
    table: &PathProbabilityTable,
    size: PopulationSize,
    mut visit: impl FnMut(PairTerm),
) -> Result<()> {
    check_shapes(counts, table)?;
    size.validate()?;
    let schedule = table.schedule();
    let n = schedule.n();
    let ln_p: Vec<Vec<f64>> = (0..n)
        .map(|k| table.one_time_row(k).iter().map(|p| p.ln()).collect())
        .collect();
    match size {
        PopulationSize::Known(big_n) => {
            let feasible = (0..n).all(|k| counts.total_at(k) <= big_n);
            for k in 0..n {
                let (q, p) = (counts.row(k), table.one_time_row(k));
                for l in 0..q.len() {
                    for l2 in l + 1..q.len() {
                        let ll = if feasible {
                            let rest = (1.0 - p[l] - p[l2]).max(0.0);
                            trinomial(q[l], q[l2], big_n, ln_p[k][l], ln_p[k][l2], rest.ln())
                        } else {
                            f64::NEG_INFINITY
                        };
                        visit(PairTerm {
                            first: (k, l),
                            second: (k, l2),
                            loglik: ll,
                        });
                    }
                }
            }
            for (k, k2) in schedule.cross_time_pairs() {
                let joint = table.two_times(k, k2).ok_or(Error::MissingPair(k, k2))?;
                let (q, q2) = (counts.row(k), counts.row(k2));
                let (p, p2) = (table.one_time_row(k), table.one_time_row(k2));
                for l in 0..q.len() {
                    for l2 in 0..q2.len() {
                        let cells = bernoulli_pair_cells(joint[(l, l2)], p[l], p2[l2])?;
                        visit(PairTerm {
                            first: (k, l),
                            second: (k2, l2),
                            loglik: bivariate_binomial_from_cells(q[l], q2[l2], big_n, &cells),
                        });
                    }
                }
            }
        }
        PopulationSize::PoissonRate(rate) => {
            let single: Vec<Vec<f64>> = (0..n)
                .map(|k| {
                    counts
                        .row(k)
                        .iter()
                        .zip(table.one_time_row(k))
                        .map(|(&q, &p)| poisson_logpmf(q, rate * p))
                        .collect()
                })
                .collect();
            for k in 0..n {
                let s = &single[k];
                for l in 0..s.len() {
                    for l2 in l + 1..s.len() {
                        visit(PairTerm {
                            first: (k, l),
                            second: (k, l2),
                            loglik: s[l] + s[l2],
                        });
                    }
                }
            }
            for (k, k2) in schedule.cross_time_pairs() {
                let joint = table.two_times(k, k2).ok_or(Error::MissingPair(k, k2))?;
                let (q, q2) = (counts.row(k), counts.row(k2));
                let (p, p2) = (table.one_time_row(k), table.one_time_row(k2));
                for l in 0..q.len() {
                    for l2 in 0..q2.len() {
                        let (lr, total) =
                            poisson_pair_rates(rate * joint[(l, l2)], rate * p[l], rate * p2[l2])?;
                        visit(PairTerm {
                            first: (k, l),
                            second: (k2, l2),
                            loglik: bivariate_poisson_from_rates(q[l], q2[l2], &lr, total),
                        });
                    }
                }
            }
        }
    }
    Ok(())
}

/// Pairwise composite log-likelihood: all same-time cell pairs plus all
/// cross-time cell pairs.
pub fn pairwise_composite_loglik(
    counts: &CountArrangement,
    table: &PathProbabilityTable,
    size: PopulationSize,
) -> Result<f64> {
    let mut total = 0.0;
    for_each_pair(counts, table, size, |t| total += t.loglik)?;
    Ok(if total.is_nan() { f64::NEG_INFINITY } else { total })
}

/// Every pair term, in summation order.
pub fn composite_pair_terms(
    counts: &CountArrangement,
    table: &PathProbabilityTable,
    size: PopulationSize,
) -> Result<Vec<PairTerm>> {
    let mut out = Vec::new();
    for_each_pair(counts, table, size, |t| out.push(t))?;
    Ok(out)
}
