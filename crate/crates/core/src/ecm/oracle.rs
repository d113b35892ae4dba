//! Exact small-instance computations used to cross-check the closed forms.
//!
//! Everything here scales exponentially and refuses inputs beyond toy size.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::math::ln_factorial;
use super::{PathProbabilityTable, PopulationSize};
use crate::error::{invalid, Error, Result};

/// Dense full-path probabilities `p_{l_1..l_n}` in row-major order over `dims`.
#[derive(Debug, Clone)]
pub struct FullPathProbs {
    dims: Vec<usize>,
    probs: Vec<f64>,
}

impl FullPathProbs {
    pub fn new(dims: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&d| d == 0) {
            return Err(invalid("full-path dimensions must be positive"));
        }
        let len: usize = dims.iter().product();
        if len != probs.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} probabilities for {len} paths",
                probs.len()
            )));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(invalid("full-path probabilities must be non-negative"));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-10 {
            return Err(invalid(format!("full-path probabilities sum to {s}")));
        }
        Ok(Self { dims, probs })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Category index per time of the path with flat index `idx`.
    pub fn path(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims.len()];
        for k in (0..self.dims.len()).rev() {
            out[k] = idx % self.dims[k];
            idx /= self.dims[k];
        }
        out
    }

    /// One-time and all two-times marginals.
    pub fn table(&self) -> PathProbabilityTable {
        let n = self.dims.len();
        let mut one: Vec<Vec<f64>> = self.dims.iter().map(|&m| vec![0.0; m]).collect();
        let mut two = BTreeMap::new();
        for k in 0..n {
            for k2 in k + 1..n {
                two.insert((k, k2), DMatrix::zeros(self.dims[k], self.dims[k2]));
            }
        }
        for (idx, &p) in self.probs.iter().enumerate() {
            let path = self.path(idx);
            for k in 0..n {
                one[k][path[k]] += p;
                for k2 in k + 1..n {
                    let m: &mut DMatrix<f64> = two.get_mut(&(k, k2)).unwrap();
                    m[(path[k], path[k2])] += p;
                }
            }
        }
        PathProbabilityTable::new(one, two).expect("marginals of a valid full-path law")
    }

    /// Exact distribution of the flattened arrangement for `N = n` individuals,
    /// by enumerating every allocation of individuals to full paths.
    pub fn enumerate_arrangements(&self, n: u64) -> Vec<(Vec<u64>, f64)> {
        let paths = self.probs.len();
        let total_cells: usize = self.dims.iter().sum();
        let offsets: Vec<usize> = self
            .dims
            .iter()
            .scan(0, |acc, &m| {
                let o = *acc;
                *acc += m;
                Some(o)
            })
            .collect();
        let mut dist: HashMap<Vec<u64>, f64> = HashMap::new();
        let mut alloc = vec![0u64; paths];
        fn rec(
            i: usize,
            left: u64,
            alloc: &mut Vec<u64>,
            f: &mut dyn FnMut(&[u64]),
        ) {
            if i + 1 == alloc.len() {
                alloc[i] = left;
                f(alloc);
                return;
            }
            for c in 0..=left {
                alloc[i] = c;
                rec(i + 1, left - c, alloc, f);
            }
        }
        rec(0, n, &mut alloc, &mut |a: &[u64]| {
            let mut lp = ln_factorial(n);
            for (&c, &p) in a.iter().zip(&self.probs) {
                if c > 0 {
                    lp += c as f64 * p.ln() - ln_factorial(c);
                }
            }
            let prob = lp.exp();
            if prob == 0.0 {
                return;
            }
            let mut q = vec![0u64; total_cells];
            for (idx, &c) in a.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                for (k, l) in self.path(idx).into_iter().enumerate() {
                    q[offsets[k] + l] += c;
                }
            }
            *dist.entry(q).or_insert(0.0) += prob;
        });
        let mut out: Vec<_> = dist.into_iter().collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }
}

/// Characteristic function of an ECM (power form) or ECM-Poisson (exponential
/// form) arrangement at `xi` (ragged, one frequency per cell).
pub fn ecm_char_function(
    full: &FullPathProbs,
    size: PopulationSize,
    xi: &[Vec<f64>],
) -> Result<Complex64> {
    size.validate()?;
    if full.dims.len() > 3 || full.dims.iter().any(|&m| m > 4) {
        return Err(Error::OracleScale(
            "characteristic function limited to n <= 3, m_k <= 4".into(),
        ));
    }
    if xi.len() != full.dims.len() || xi.iter().zip(&full.dims).any(|(x, &m)| x.len() != m) {
        return Err(Error::DimensionMismatch("frequency arrangement shape".into()));
    }
    let mut inner = Complex64::new(0.0, 0.0);
    for (idx, &p) in full.probs.iter().enumerate() {
        let phase: f64 = full
            .path(idx)
            .iter()
            .enumerate()
            .map(|(k, &l)| xi[k][l])
            .sum();
        inner += p * Complex64::from_polar(1.0, phase);
    }
    Ok(match size {
        PopulationSize::Known(n) => inner.powu(n as u32),
        PopulationSize::PoissonRate(lambda) => ((inner - 1.0) * lambda).exp(),
    })
}

const MAX_TOTAL: u64 = 1000;
const MAX_TARGET_DIM: usize = 4;
const MAX_STATES: usize = 2_000_000;

/// Exact `ln P(Σ_l Multinomial(sizes[l], probs[l, ·]) = target)` by dynamic
/// programming over individuals (oracle scale only).
pub fn poisson_multinomial_logpmf_bruteforce(
    sizes: &[u64],
    probs: &DMatrix<f64>,
    target: &[u64],
) -> Result<f64> {
    let m2 = target.len();
    if probs.nrows() != sizes.len() || probs.ncols() != m2 {
        return Err(Error::DimensionMismatch(format!(
            "probabilities {}x{} for {} sources and {m2} targets",
            probs.nrows(),
            probs.ncols(),
            sizes.len()
        )));
    }
    let total: u64 = sizes.iter().sum();
    if total > MAX_TOTAL || m2 > MAX_TARGET_DIM {
        return Err(Error::OracleScale(format!(
            "total {total} (max {MAX_TOTAL}), dimension {m2} (max {MAX_TARGET_DIM})"
        )));
    }
    for (l, &s) in sizes.iter().enumerate() {
        let sum = probs.row(l).sum();
        if s > 0 && (sum - 1.0).abs() > 1e-12 {
            return Err(Error::RowSum { row: l, sum });
        }
    }
    if target.iter().sum::<u64>() != total {
        return Ok(f64::NEG_INFINITY);
    }
    let radix: Vec<usize> = target.iter().map(|&t| t as usize + 1).collect();
    let states: usize = radix.iter().product();
    if states > MAX_STATES {
        return Err(Error::OracleScale(format!("{states} DP states")));
    }
    let mut stride = vec![1usize; m2];
    for j in (0..m2.saturating_sub(1)).rev() {
        stride[j] = stride[j + 1] * radix[j + 1];
    }
    let decode = |mut idx: usize| {
        let mut v = vec![0usize; m2];
        for j in 0..m2 {
            v[j] = idx / stride[j];
            idx %= stride[j];
        }
        v
    };
    let mut cur = vec![0.0f64; states];
    cur[0] = 1.0;
    for (l, &s) in sizes.iter().enumerate() {
        for _ in 0..s {
            let mut next = vec![0.0f64; states];
            for (idx, &w) in cur.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let v = decode(idx);
                for j in 0..m2 {
                    if v[j] + 1 < radix[j] {
                        next[idx + stride[j]] += w * probs[(l, j)];
                    }
                }
            }
            cur = next;
        }
    }
    Ok(cur[states - 1].ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecm::multinomial_logpmf;

    #[test]
    fn char_function_at_origin_is_one() {
        let fp = FullPathProbs::new(vec![2, 3], vec![0.1, 0.2, 0.1, 0.25, 0.05, 0.3]).unwrap();
        let xi = vec![vec![0.0; 2], vec![0.0; 3]];
        for size in [PopulationSize::Known(4), PopulationSize::PoissonRate(3.5)] {
            let v = ecm_char_function(&fp, size, &xi).unwrap();
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn char_function_single_individual() {
        let fp = FullPathProbs::new(vec![2], vec![0.35, 0.65]).unwrap();
        let xi = vec![vec![0.7, -1.3]];
        let v = ecm_char_function(&fp, PopulationSize::Known(1), &xi).unwrap();
        let w = 0.35 * Complex64::from_polar(1.0, 0.7) + 0.65 * Complex64::from_polar(1.0, -1.3);
        assert!((v - w).norm() < 1e-15);
    }

    #[test]
    fn char_function_refuses_large_instances() {
        let fp = FullPathProbs::new(vec![5], vec![0.2; 5]).unwrap();
        assert!(ecm_char_function(&fp, PopulationSize::Known(1), &[vec![0.0; 5]]).is_err());
    }

    #[test]
    fn dft_inversion_recovers_enumerated_pmf() {
        // n = 2 times, 2 categories each, N = 3; each count lives on 0..=3,
        // so a 4-point DFT per coordinate inverts the characteristic function exactly.
        let fp = FullPathProbs::new(vec![2, 2], vec![0.15, 0.35, 0.3, 0.2]).unwrap();
        let n = 3u64;
        let g = (n + 1) as usize;
        let dist: HashMap<Vec<u64>, f64> = fp.enumerate_arrangements(n).into_iter().collect();
        let w = 2.0 * std::f64::consts::PI / g as f64;
        let mut inv: HashMap<Vec<u64>, f64> = HashMap::new();
        let total = g.pow(4);
        let mut cf = vec![Complex64::new(0.0, 0.0); total];
        for (f, c) in cf.iter_mut().enumerate() {
            let fr = [f / g.pow(3), (f / g.pow(2)) % g, (f / g) % g, f % g];
            let xi = vec![
                vec![w * fr[0] as f64, w * fr[1] as f64],
                vec![w * fr[2] as f64, w * fr[3] as f64],
            ];
            *c = ecm_char_function(&fp, PopulationSize::Known(n), &xi).unwrap();
        }
        for a in 0..total {
            let q = [a / g.pow(3), (a / g.pow(2)) % g, (a / g) % g, a % g];
            let mut s = Complex64::new(0.0, 0.0);
            for (f, c) in cf.iter().enumerate() {
                let fr = [f / g.pow(3), (f / g.pow(2)) % g, (f / g) % g, f % g];
                let phase: f64 = (0..4).map(|i| (fr[i] * q[i]) as f64).sum::<f64>() * w;
                s += c * Complex64::from_polar(1.0, -phase);
            }
            let v = s.re / total as f64;
            inv.insert(q.iter().map(|&x| x as u64).collect(), v);
        }
        for (q, v) in &inv {
            let expect = dist.get(q).copied().unwrap_or(0.0);
            assert!((v - expect).abs() < 1e-8, "{q:?}: {v} vs {expect}");
        }
    }

    #[test]
    fn single_source_is_multinomial() {
        let probs = DMatrix::from_row_slice(1, 3, &[0.2, 0.5, 0.3]);
        let lp = poisson_multinomial_logpmf_bruteforce(&[6], &probs, &[1, 3, 2]).unwrap();
        let w = multinomial_logpmf(&[1, 3, 2], &[0.2, 0.5, 0.3]).unwrap();
        assert!((lp - w).abs() < 1e-12);
    }

    #[test]
    fn two_fair_sources() {
        let probs = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let lp = poisson_multinomial_logpmf_bruteforce(&[1, 1], &probs, &[1, 1]).unwrap();
        assert!((lp - 0.5f64.ln()).abs() < 1e-15);
        let lp = poisson_multinomial_logpmf_bruteforce(&[1, 1], &probs, &[2, 1]).unwrap();
        assert_eq!(lp, f64::NEG_INFINITY);
    }

    #[test]
    fn refuses_oracle_overflow() {
        let probs = DMatrix::from_row_slice(1, 5, &[0.2; 5]);
        assert!(matches!(
            poisson_multinomial_logpmf_bruteforce(&[3], &probs, &[1, 1, 1, 0, 0]),
            Err(Error::OracleScale(_))
        ));
    }
}
