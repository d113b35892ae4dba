use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};

use crate::error::{invalid, Error, Result};

const ROW_TOL: f64 = 1e-12;

/// Draws `Multinomial(n, probs)` by sequential conditional binomials.
///
/// `probs` must sum to one up to rounding; the last category absorbs the remainder.
pub fn sample_multinomial<R: Rng + ?Sized>(n: u64, probs: &[f64], rng: &mut R) -> Vec<u64> {
    let mut out = vec![0u64; probs.len()];
    let mut left = n;
    let mut mass = 1.0f64;
    for (i, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if i + 1 == probs.len() {
            out[i] = left;
            break;
        }
        let share = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
        let draw = if share >= 1.0 {
            left
        } else if share <= 0.0 {
            0
        } else {
            Binomial::new(left, share)
                .expect("valid binomial parameters")
                .sample(rng)
        };
        out[i] = draw;
        left -= draw;
        mass -= p;
    }
    out
}

fn check_rows(counts: &[u64], cond: &DMatrix<f64>) -> Result<()> {
    if counts.len() != cond.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} source counts for {} conditional rows",
            counts.len(),
            cond.nrows()
        )));
    }
    for (row, &c) in counts.iter().enumerate() {
        let r = cond.row(row);
        if r.iter().any(|&v| !(v >= 0.0)) {
            return Err(invalid(format!("conditional row {row} has a negative entry")));
        }
        let sum = r.sum();
        // An all-zero row is an undefined conditional; it may only carry zero individuals.
        if sum == 0.0 && c == 0 {
            continue;
        }
        if (sum - 1.0).abs() > ROW_TOL {
            return Err(Error::RowSum { row, sum });
        }
    }
    Ok(())
}

fn add_transitions<R: Rng + ?Sized>(
    counts: &[u64],
    cond: &DMatrix<f64>,
    out: &mut [u64],
    rng: &mut R,
) {
    let mut row = vec![0.0; cond.ncols()];
    for (l, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        for (j, r) in row.iter_mut().enumerate() {
            *r = cond[(l, j)];
        }
        for (o, d) in out.iter_mut().zip(sample_multinomial(c, &row, rng)) {
            *o += d;
        }
    }
}

/// Counts at a later time given the counts at an earlier one: an independent
/// sum of `Multinomial(counts_k[l], cond[l, ·])` vectors.
pub fn sample_conditional_next<R: Rng + ?Sized>(
    counts_k: &[u64],
    cond: &DMatrix<f64>,
    rng: &mut R,
) -> Result<Vec<u64>> {
    check_rows(counts_k, cond)?;
    let mut out = vec![0u64; cond.ncols()];
    add_transitions(counts_k, cond, &mut out, rng);
    Ok(out)
}

/// ECM-Poisson analogue: multinomial transitions of the observed categories plus
/// independent Poisson counts generated by the unobserved complement category.
pub fn sample_conditional_next_poisson<R: Rng + ?Sized>(
    observed_counts: &[u64],
    cond: &DMatrix<f64>,
    complement_rates: &[f64],
    rng: &mut R,
) -> Result<Vec<u64>> {
    check_rows(observed_counts, cond)?;
    if complement_rates.len() != cond.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{} complement rates for {} target categories",
            complement_rates.len(),
            cond.ncols()
        )));
    }
    if let Some(r) = complement_rates.iter().find(|r| !(**r >= 0.0 && r.is_finite())) {
        return Err(invalid(format!("complement rate {r} must be non-negative")));
    }
    let mut out = vec![0u64; cond.ncols()];
    add_transitions(observed_counts, cond, &mut out, rng);
    for (o, &rate) in out.iter_mut().zip(complement_rates) {
        if rate > 0.0 {
            *o += Poisson::new(rate).expect("positive rate").sample(rng) as u64;
        }
    }
    Ok(out)
}
