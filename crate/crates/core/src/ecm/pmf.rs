//! Closed-form pmfs for single counts and count pairs, all in log space.

use super::math::{ln_factorial, xlny};
use super::{NEG_CLAMP, PROB_TOL};
use crate::error::{invalid, Result};

/// Running `ln Σ exp` accumulator.
#[derive(Default)]
struct LogSum {
    max: f64,
    acc: f64,
    any: bool,
}

impl LogSum {
    fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            acc: 0.0,
            any: false,
        }
    }

    #[inline]
    fn push(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if !self.any {
            self.max = x;
            self.acc = 1.0;
            self.any = true;
        } else if x <= self.max {
            self.acc += (x - self.max).exp();
        } else {
            self.acc = self.acc * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    fn value(&self) -> f64 {
        if self.any {
            self.max + self.acc.ln()
        } else {
            f64::NEG_INFINITY
        }
    }
}

fn check_prob(p: f64, name: &str) -> Result<f64> {
    if !(p >= NEG_CLAMP && p <= 1.0 + PROB_TOL) {
        return Err(invalid(format!("{name} = {p} is not a probability")));
    }
    Ok(p.clamp(0.0, 1.0))
}

/// Clamps a derived cell probability that should be non-negative.
fn derived_cell(v: f64, what: &str) -> Result<f64> {
    if v < -PROB_TOL {
        return Err(invalid(format!("{what} = {v} is negative")));
    }
    Ok(v.max(0.0))
}

/// `ln P(X = q)` for `X ~ Binomial(n, p)`.
pub fn binomial_logpmf(q: u64, n: u64, p: f64) -> f64 {
    if q > n {
        return f64::NEG_INFINITY;
    }
    ln_factorial(n) - ln_factorial(q) - ln_factorial(n - q)
        + xlny(q, p.ln())
        + xlny(n - q, (1.0 - p).ln())
}

/// `ln P(X = q)` for `X ~ Poisson(rate)`.
pub fn poisson_logpmf(q: u64, rate: f64) -> f64 {
    if rate == 0.0 {
        return if q == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -rate + q as f64 * rate.ln() - ln_factorial(q)
}

/// `ln P(Q = counts)` for a multinomial with size `Σ counts`.
pub fn multinomial_logpmf(counts: &[u64], probs: &[f64]) -> Result<f64> {
    if counts.len() != probs.len() {
        return Err(invalid("counts and probabilities differ in length"));
    }
    let s: f64 = probs.iter().sum();
    if (s - 1.0).abs() > PROB_TOL {
        return Err(invalid(format!("multinomial probabilities sum to {s}")));
    }
    let n: u64 = counts.iter().sum();
    let mut out = ln_factorial(n);
    for (&q, &p) in counts.iter().zip(probs) {
        out += xlny(q, p.ln()) - ln_factorial(q);
    }
    Ok(out)
}

/// `ln P(Q_l = q, Q_l' = q2)` for two distinct cells of one multinomial vector
/// of size `n` (trinomial over the two cells and everything else).
pub fn multinomial_pair_logpmf(q: u64, q2: u64, n: u64, p1: f64, p2: f64) -> Result<f64> {
    let p1 = check_prob(p1, "p1")?;
    let p2 = check_prob(p2, "p2")?;
    let rest = derived_cell(1.0 - p1 - p2, "1 - p1 - p2")?;
    if q + q2 > n {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(trinomial(q, q2, n, p1.ln(), p2.ln(), rest.ln()))
}

#[inline]
pub(crate) fn trinomial(q: u64, q2: u64, n: u64, ln_p1: f64, ln_p2: f64, ln_rest: f64) -> f64 {
    let r = n - q - q2;
    ln_factorial(n) - ln_factorial(q) - ln_factorial(q2) - ln_factorial(r)
        + xlny(q, ln_p1)
        + xlny(q2, ln_p2)
        + xlny(r, ln_rest)
}

pub fn multinomial_pair_pmf(q: u64, q2: u64, n: u64, p1: f64, p2: f64) -> Result<f64> {
    multinomial_pair_logpmf(q, q2, n, p1, p2).map(f64::exp)
}

/// Log cell probabilities `(both, first only, second only, neither)` of the
/// bivariate Bernoulli with joint probability `p_joint` and margins `p1`, `p2`.
pub(crate) fn bernoulli_pair_cells(p_joint: f64, p1: f64, p2: f64) -> Result<[f64; 4]> {
    let p1 = check_prob(p1, "p1")?;
    let p2 = check_prob(p2, "p2")?;
    let pj = check_prob(p_joint, "p_joint")?;
    if pj > p1.min(p2) + PROB_TOL {
        return Err(invalid(format!(
            "joint probability {pj} exceeds min(p1, p2) = {}",
            p1.min(p2)
        )));
    }
    let pj = pj.min(p1).min(p2);
    let neither = derived_cell(1.0 - p1 - p2 + pj, "1 - p1 - p2 + p_joint")?;
    Ok([pj.ln(), (p1 - pj).ln(), (p2 - pj).ln(), neither.ln()])
}

#[inline]
pub(crate) fn bivariate_binomial_from_cells(q: u64, q2: u64, n: u64, ln_cells: &[f64; 4]) -> f64 {
    if q > n || q2 > n {
        return f64::NEG_INFINITY;
    }
    let lo = (q + q2).saturating_sub(n);
    let hi = q.min(q2);
    if lo > hi {
        return f64::NEG_INFINITY;
    }
    let [l11, l10, l01, l00] = *ln_cells;
    let base = ln_factorial(n);
    let mut acc = LogSum::new();
    for j in lo..=hi {
        let a = q - j;
        let b = q2 - j;
        let r = n + j - q - q2;
        let t = base
            - ln_factorial(r)
            - ln_factorial(a)
            - ln_factorial(b)
            - ln_factorial(j)
            + xlny(j, l11)
            + xlny(a, l10)
            + xlny(b, l01)
            + xlny(r, l00);
        acc.push(t);
    }
    acc.value()
}

/// `ln P(X = q, Y = q2)` for the bivariate binomial of size `n` with joint
/// success probability `p_joint` and marginal success probabilities `p1`, `p2`.
///
/// The pmf is the sum over the number `j` of joint successes,
/// `j = max(0, q + q2 - n) ..= min(q, q2)`, of four-cell multinomial terms.
pub fn bivariate_binomial_logpmf(
    q: u64,
    q2: u64,
    n: u64,
    p_joint: f64,
    p1: f64,
    p2: f64,
) -> Result<f64> {
    if q > n || q2 > n {
        return Err(invalid(format!("counts ({q}, {q2}) exceed size {n}")));
    }
    let cells = bernoulli_pair_cells(p_joint, p1, p2)?;
    Ok(bivariate_binomial_from_cells(q, q2, n, &cells))
}

pub fn bivariate_binomial_pmf(
    q: u64,
    q2: u64,
    n: u64,
    p_joint: f64,
    p1: f64,
    p2: f64,
) -> Result<f64> {
    bivariate_binomial_logpmf(q, q2, n, p_joint, p1, p2).map(f64::exp)
}

/// Log rates `(joint, first only, second only)` and the total rate of a bivariate Poisson.
pub(crate) fn poisson_pair_rates(rate_joint: f64, rate1: f64, rate2: f64) -> Result<([f64; 3], f64)> {
    for (r, name) in [(rate_joint, "rate_joint"), (rate1, "rate1"), (rate2, "rate2")] {
        if !(r.is_finite() && r >= 0.0) {
            return Err(invalid(format!("{name} = {r} must be a non-negative rate")));
        }
    }
    let tol = PROB_TOL * rate1.max(rate2).max(1.0);
    if rate_joint > rate1.min(rate2) + tol {
        return Err(invalid(format!(
            "joint rate {rate_joint} exceeds a marginal rate ({rate1}, {rate2})"
        )));
    }
    let rj = rate_joint.min(rate1).min(rate2);
    Ok((
        [rj.ln(), (rate1 - rj).ln(), (rate2 - rj).ln()],
        rate1 + rate2 - rj,
    ))
}

#[inline]
pub(crate) fn bivariate_poisson_from_rates(q: u64, q2: u64, ln_rates: &[f64; 3], total: f64) -> f64 {
    let [lj, l1, l2] = *ln_rates;
    let mut acc = LogSum::new();
    for j in 0..=q.min(q2) {
        let a = q - j;
        let b = q2 - j;
        let t = xlny(a, l1) - ln_factorial(a) + xlny(b, l2) - ln_factorial(b) + xlny(j, lj)
            - ln_factorial(j);
        acc.push(t);
    }
    acc.value() - total
}

/// `ln P(X = q, Y = q2)` for the bivariate Poisson `X = W + U`, `Y = W + V`
/// with `E W = rate_joint`, `E X = rate1`, `E Y = rate2`.
pub fn bivariate_poisson_logpmf(
    q: u64,
    q2: u64,
    rate_joint: f64,
    rate1: f64,
    rate2: f64,
) -> Result<f64> {
    let (lr, total) = poisson_pair_rates(rate_joint, rate1, rate2)?;
    Ok(bivariate_poisson_from_rates(q, q2, &lr, total))
}

pub fn bivariate_poisson_pmf(q: u64, q2: u64, rate_joint: f64, rate1: f64, rate2: f64) -> Result<f64> {
    bivariate_poisson_logpmf(q, q2, rate_joint, rate1, rate2).map(f64::exp)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct enumeration of all 4^n assignments of n individuals to the
    /// bivariate Bernoulli cells (both, first only, second only, neither).
    fn latent_enumeration(n: u32, cells: [f64; 4]) -> Vec<Vec<f64>> {
        let n_us = n as usize;
        let mut out = vec![vec![0.0; n_us + 1]; n_us + 1];
        for code in 0..4usize.pow(n) {
            let (mut c, mut x, mut y, mut prob) = (code, 0, 0, 1.0);
            for _ in 0..n {
                let cell = c % 4;
                c /= 4;
                prob *= cells[cell];
                if cell == 0 || cell == 1 {
                    x += 1;
                }
                if cell == 0 || cell == 2 {
                    y += 1;
                }
            }
            out[x][y] += prob;
        }
        out
    }

    fn binom_direct(q: u64, n: u64, p: f64) -> f64 {
        let mut c = 1.0;
        for i in 0..q {
            c *= (n - i) as f64 / (i + 1) as f64;
        }
        c * p.powi(q as i32) * (1.0 - p).powi((n - q) as i32)
    }

    #[test]
    fn bivariate_binomial_small_case_matches_enumeration() {
        // cells (0.2, 0.3, 0.2, 0.3); P(1,1) = 2·0.2·0.3 + 2·0.3·0.2
        let lp = bivariate_binomial_logpmf(1, 1, 2, 0.2, 0.5, 0.4).unwrap();
        assert!((lp - 0.24f64.ln()).abs() < 1e-14);
        let oracle = latent_enumeration(2, [0.2, 0.3, 0.2, 0.3]);
        assert!((oracle[1][1] - 0.24).abs() < 1e-15);
    }

    #[test]
    fn bivariate_binomial_single_trial_is_bernoulli_pair() {
        let (pj, p1, p2) = (0.1, 0.35, 0.25);
        let cells = [[1.0 - p1 - p2 + pj, p2 - pj], [p1 - pj, pj]];
        for q in 0..2u64 {
            for q2 in 0..2u64 {
                let v = bivariate_binomial_pmf(q, q2, 1, pj, p1, p2).unwrap();
                assert!((v - cells[q as usize][q2 as usize]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn bivariate_binomial_independent_case_factorizes() {
        let (n, p1, p2) = (12u64, 0.3, 0.55);
        for q in 0..=n {
            for q2 in 0..=n {
                let v = bivariate_binomial_pmf(q, q2, n, p1 * p2, p1, p2).unwrap();
                let w = binom_direct(q, n, p1) * binom_direct(q2, n, p2);
                assert!((v - w).abs() < 1e-14, "{q},{q2}: {v} vs {w}");
            }
        }
    }

    #[test]
    fn bivariate_binomial_impossible_outcomes() {
        // disjoint events: q + q2 > n is impossible
        assert_eq!(
            bivariate_binomial_logpmf(2, 2, 3, 0.0, 0.4, 0.4).unwrap(),
            f64::NEG_INFINITY
        );
        assert!(bivariate_binomial_logpmf(4, 0, 3, 0.1, 0.4, 0.4).is_err());
        assert!(bivariate_binomial_logpmf(1, 0, 3, 0.5, 0.4, 0.4).is_err());
        assert!(bivariate_binomial_logpmf(1, 0, 3, 0.0, 0.7, 0.7).is_err());
    }

    #[test]
    fn bivariate_poisson_origin() {
        let lp = bivariate_poisson_logpmf(0, 0, 1.0, 2.0, 1.5).unwrap();
        assert!((lp + 2.5).abs() < 1e-15);
    }

    #[test]
    fn bivariate_poisson_zero_joint_factorizes() {
        for q in 0..15 {
            for q2 in 0..15 {
                let v = bivariate_poisson_logpmf(q, q2, 0.0, 2.5, 4.0).unwrap();
                let w = poisson_logpmf(q, 2.5) + poisson_logpmf(q2, 4.0);
                assert!((v - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bivariate_poisson_rejects_bad_rates() {
        assert!(bivariate_poisson_logpmf(0, 0, -1.0, 2.0, 1.5).is_err());
        assert!(bivariate_poisson_logpmf(0, 0, 1.6, 2.0, 1.5).is_err());
    }

    #[test]
    fn multinomial_pair_examples() {
        let lp = multinomial_pair_logpmf(1, 1, 2, 0.25, 0.25).unwrap();
        assert!((lp - 0.125f64.ln()).abs() < 1e-15);
        let lp = multinomial_pair_logpmf(7, 0, 7, 0.3, 0.2).unwrap();
        assert!((lp - 7.0 * 0.3f64.ln()).abs() < 1e-13);
        for q in 0..=9 {
            let lp = multinomial_pair_logpmf(q, 0, 9, 0.4, 0.0).unwrap();
            assert!((lp - binom_direct(q, 9, 0.4).ln()).abs() < 1e-12);
        }
        assert_eq!(
            multinomial_pair_logpmf(1, 1, 9, 0.4, 0.0).unwrap(),
            f64::NEG_INFINITY
        );
        assert_eq!(
            multinomial_pair_logpmf(5, 5, 9, 0.4, 0.1).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn bivariate_binomial_sums_to_one_and_has_binomial_margins() {
        for &(n, pj, p1, p2) in &[(50u64, 0.05, 0.3, 0.2), (17, 0.0, 0.5, 0.5), (33, 0.4, 0.4, 0.9)] {
            let mut total = 0.0;
            let mut rows = vec![0.0; n as usize + 1];
            let mut cols = vec![0.0; n as usize + 1];
            let mut cov = 0.0;
            for q in 0..=n {
                for q2 in 0..=n {
                    let v = bivariate_binomial_pmf(q, q2, n, pj, p1, p2).unwrap();
                    total += v;
                    rows[q as usize] += v;
                    cols[q2 as usize] += v;
                    cov += v * (q as f64 - n as f64 * p1) * (q2 as f64 - n as f64 * p2);
                }
            }
            assert!((total - 1.0).abs() < 1e-12);
            for q in 0..=n {
                assert!((rows[q as usize] - binom_direct(q, n, p1)).abs() < 1e-12);
                assert!((cols[q as usize] - binom_direct(q, n, p2)).abs() < 1e-12);
            }
            assert!((cov - n as f64 * (pj - p1 * p2)).abs() < 1e-10);
        }
    }

    #[test]
    fn bivariate_poisson_covariance_is_joint_rate() {
        let (rj, r1, r2) = (1.2, 3.0, 2.0);
        let (mut total, mut cov) = (0.0, 0.0);
        for q in 0..80 {
            for q2 in 0..80 {
                let v = bivariate_poisson_pmf(q, q2, rj, r1, r2).unwrap();
                total += v;
                cov += v * (q as f64 - r1) * (q2 as f64 - r2);
            }
        }
        assert!((total - 1.0).abs() < 1e-12);
        assert!((cov - rj).abs() < 1e-10);
    }

    #[test]
    fn large_counts_do_not_underflow() {
        let lp = bivariate_binomial_logpmf(3000, 2500, 10_000, 0.2, 0.3, 0.25).unwrap();
        assert!(lp.is_finite());
        let lp = bivariate_poisson_logpmf(900, 1100, 800.0, 1000.0, 1000.0).unwrap();
        assert!(lp.is_finite());
    }
}
