use nalgebra::DMatrix;

use super::{PathProbabilityTable, PopulationSize};
use crate::error::{Error, Result};

/// Mean (ragged, per time) and covariance (flattened `(k, l)` order) of an arrangement.
#[derive(Debug, Clone)]
pub struct Moments {
    pub mean: Vec<Vec<f64>>,
    pub cov: DMatrix<f64>,
}

impl Moments {
    pub fn mean_flat(&self) -> Vec<f64> {
        self.mean.iter().flatten().copied().collect()
    }
}

/// Mean and covariance of ECM (`Known(N)`) or ECM-Poisson (`PoissonRate(λ)`) counts.
///
/// ECM: `E Q = N p`, `Cov = N(δ p - p p')` within a time and `N(p_joint - p p')`
/// across times. ECM-Poisson: `E Q = λ p`, `Cov = λ δ p` within a time and
/// `λ p_joint` across times.
pub fn ecm_mean_cov(table: &PathProbabilityTable, size: PopulationSize) -> Result<Moments> {
    size.validate()?;
    let schedule = table.schedule();
    let offsets = schedule.offsets();
    let dim = schedule.total_cells();
    let scale = size.scale();
    let poisson = matches!(size, PopulationSize::PoissonRate(_));

    let mean: Vec<Vec<f64>> = (0..schedule.n())
        .map(|k| table.one_time_row(k).iter().map(|p| scale * p).collect())
        .collect();

    let mut cov = DMatrix::zeros(dim, dim);
    for k in 0..schedule.n() {
        let p = table.one_time_row(k);
        let o = offsets[k];
        for l in 0..p.len() {
            for l2 in l..p.len() {
                let delta = if l == l2 { p[l] } else { 0.0 };
                let v = if poisson {
                    scale * delta
                } else {
                    scale * (delta - p[l] * p[l2])
                };
                cov[(o + l, o + l2)] = v;
                cov[(o + l2, o + l)] = v;
            }
        }
    }
    for (k, k2) in schedule.cross_time_pairs() {
        let joint = table.two_times(k, k2).ok_or(Error::MissingPair(k, k2))?;
        let (p, p2) = (table.one_time_row(k), table.one_time_row(k2));
        let (o, o2) = (offsets[k], offsets[k2]);
        for l in 0..p.len() {
            for l2 in 0..p2.len() {
                let v = if poisson {
                    scale * joint[(l, l2)]
                } else {
                    scale * (joint[(l, l2)] - p[l] * p2[l2])
                };
                cov[(o + l, o2 + l2)] = v;
                cov[(o2 + l2, o + l)] = v;
            }
        }
    }
    Ok(Moments { mean, cov })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecm::oracle::FullPathProbs;
    use std::collections::BTreeMap;

    #[test]
    fn single_time_multinomial_moments() {
        let t = PathProbabilityTable::one_time_only(vec![vec![0.3, 0.7]]).unwrap();
        let m = ecm_mean_cov(&t, PopulationSize::Known(10)).unwrap();
        assert!((m.mean[0][0] - 3.0).abs() < 1e-12 && (m.mean[0][1] - 7.0).abs() < 1e-12);
        assert!((m.cov[(0, 0)] - 2.1).abs() < 1e-12);
        assert!((m.cov[(0, 1)] + 2.1).abs() < 1e-12);
    }

    #[test]
    fn poisson_single_time_is_diagonal() {
        let t = PathProbabilityTable::one_time_only(vec![vec![0.3, 0.7]]).unwrap();
        let m = ecm_mean_cov(&t, PopulationSize::PoissonRate(5.0)).unwrap();
        assert!((m.mean[0][0] - 1.5).abs() < 1e-12 && (m.mean[0][1] - 3.5).abs() < 1e-12);
        assert!((m.cov[(0, 0)] - 1.5).abs() < 1e-12);
        assert!((m.cov[(1, 1)] - 3.5).abs() < 1e-12);
        assert_eq!(m.cov[(0, 1)], 0.0);
    }

    #[test]
    fn factorized_pairs_give_zero_cross_covariance() {
        let p = vec![vec![0.2, 0.5], vec![0.1, 0.3, 0.4]];
        let mut tt = BTreeMap::new();
        tt.insert((0, 1), DMatrix::from_fn(2, 3, |i, j| p[0][i] * p[1][j]));
        let t = PathProbabilityTable::new(p, tt).unwrap();
        let m = ecm_mean_cov(&t, PopulationSize::Known(40)).unwrap();
        for i in 0..2 {
            for j in 2..5 {
                assert!(m.cov[(i, j)].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn missing_pair_is_an_error() {
        let t = PathProbabilityTable::one_time_only(vec![vec![0.5], vec![0.5]]).unwrap();
        assert!(matches!(
            ecm_mean_cov(&t, PopulationSize::Known(3)),
            Err(Error::MissingPair(0, 1))
        ));
    }

    #[test]
    fn covariance_matches_enumeration_for_tiny_ecm() {
        // all arrangements of N = 3 individuals over 2x2 paths
        let fp = FullPathProbs::new(vec![2, 2], vec![0.1, 0.3, 0.4, 0.2]).unwrap();
        let table = fp.table();
        let n = 3u64;
        let m = ecm_mean_cov(&table, PopulationSize::Known(n)).unwrap();
        let dist = fp.enumerate_arrangements(n);
        let mut mean = [0.0; 4];
        for (q, p) in &dist {
            for i in 0..4 {
                mean[i] += p * q[i] as f64;
            }
        }
        for i in 0..4 {
            for j in 0..4 {
                let c: f64 = dist
                    .iter()
                    .map(|(q, p)| p * (q[i] as f64 - mean[i]) * (q[j] as f64 - mean[j]))
                    .sum();
                assert!((c - m.cov[(i, j)]).abs() < 1e-12, "({i},{j})");
            }
        }
    }

    #[test]
    fn covariance_is_psd() {
        let fp = FullPathProbs::new(
            vec![3, 2, 2],
            vec![0.05, 0.1, 0.02, 0.08, 0.1, 0.05, 0.1, 0.1, 0.03, 0.07, 0.2, 0.1],
        )
        .unwrap();
        let table = fp.table();
        for size in [PopulationSize::Known(25), PopulationSize::PoissonRate(25.0)] {
            let m = ecm_mean_cov(&table, size).unwrap();
            let eig = m.cov.clone().symmetric_eigen();
            let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            assert!(min > -1e-8 * m.cov.trace());
        }
    }
}
