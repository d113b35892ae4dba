//! Parametric families mapping parameters to path probability tables.

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{ParamSpace, TableModel, Transform};
use crate::ecm::{sample_multinomial, CountArrangement, PathProbabilityTable, PopulationSize};
use crate::error::{invalid, Result};
use crate::movement::{build_path_table, MixtureParams, MovementModel, OuParams, PairSelection, SurveyDesign};
use crate::simulate::{locators, simulate_counts, CellLocator};

/// Whether the number of individuals is known or Poisson with an estimated rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeMode {
    Known(u64),
    /// ECM-Poisson with λ as the last parameter.
    PoissonEstimated,
}

/// Box for log λ as multiples of a reference rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaRange {
    pub lower_factor: f64,
    pub upper_factor: f64,
}

impl LambdaRange {
    /// `[λ/10, 10λ]`.
    pub const DEFAULT: LambdaRange = LambdaRange {
        lower_factor: 0.1,
        upper_factor: 10.0,
    };
    /// `[λ/5, 6λ]`, used for MGLE at small rates.
    pub const NARROW: LambdaRange = LambdaRange {
        lower_factor: 0.2,
        upper_factor: 6.0,
    };
}

impl Default for LambdaRange {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Steady-state OU over a fixed design: parameters `(τ, σ, z1, z2[, λ])`,
/// estimated as `(log τ, log σ, z1, z2[, log λ])`.
#[derive(Debug, Clone)]
pub struct OuFamily {
    design: SurveyDesign,
    size: SizeMode,
    locators: Vec<CellLocator>,
}

impl OuFamily {
    pub fn new(design: SurveyDesign, size: SizeMode) -> Self {
        let locators = locators(&design);
        Self {
            design,
            size,
            locators,
        }
    }

    pub fn design(&self) -> &SurveyDesign {
        &self.design
    }

    pub fn size_mode(&self) -> SizeMode {
        self.size
    }

    pub fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = ["tau", "sigma", "z1", "z2"].map(String::from).to_vec();
        if self.size == SizeMode::PoissonEstimated {
            v.push("lambda".into());
        }
        v
    }

    pub fn transforms(&self) -> Vec<Transform> {
        let mut v = vec![Transform::Log, Transform::Log, Transform::Identity, Transform::Identity];
        if self.size == SizeMode::PoissonEstimated {
            v.push(Transform::Log);
        }
        v
    }

    fn check_len(&self, natural: &[f64]) -> Result<()> {
        let want = self.names().len();
        if natural.len() != want {
            return Err(invalid(format!("expected {want} parameters, got {}", natural.len())));
        }
        Ok(())
    }

    pub fn model_at(&self, natural: &[f64]) -> Result<MovementModel> {
        self.check_len(natural)?;
        Ok(MovementModel::SteadyOu(OuParams::new(
            natural[0],
            natural[1],
            [natural[2], natural[3]],
        )?))
    }

    pub fn size_at(&self, natural: &[f64]) -> Result<PopulationSize> {
        self.check_len(natural)?;
        let size = match self.size {
            SizeMode::Known(n) => PopulationSize::Known(n),
            SizeMode::PoissonEstimated => PopulationSize::PoissonRate(natural[4]),
        };
        size.validate()?;
        Ok(size)
    }

    /// Natural-scale parameter vector for a model (and rate, in Poisson mode).
    pub fn natural_of(&self, ou: &OuParams, lambda: Option<f64>) -> Result<Vec<f64>> {
        let mut v = vec![ou.tau, ou.sigma, ou.z[0], ou.z[1]];
        match (self.size, lambda) {
            (SizeMode::PoissonEstimated, Some(l)) => v.push(l),
            (SizeMode::PoissonEstimated, None) => return Err(invalid("a rate is required in Poisson mode")),
            (SizeMode::Known(_), _) => {}
        }
        Ok(v)
    }

    /// Box `[−8, 6] × [−8, 10] × [−1, 1]²` for `(log τ, log σ, z1, z2)`, log λ
    /// within `range` of the reference rate, and starts at `τ/2`, `z = 0`,
    /// `θ0 ∈ {θ/20, θ/2, 5θ}` (plus `50θ` in Poisson mode), `σ0 = τ0 √(2θ0)`, `λ0 = λ/2`.
    pub fn default_space(&self, reference: &OuParams, lambda: Option<f64>, range: LambdaRange) -> Result<ParamSpace> {
        reference.validate()?;
        let mut lower = vec![-8.0, -8.0, -1.0, -1.0];
        let mut upper = vec![6.0, 10.0, 1.0, 1.0];
        let theta = reference.theta();
        let mut thetas = vec![theta / 20.0, theta / 2.0, 5.0 * theta];
        let tau0 = reference.tau / 2.0;
        let mut lambda0 = None;
        if self.size == SizeMode::PoissonEstimated {
            let l = lambda.ok_or_else(|| invalid("a reference rate is required in Poisson mode"))?;
            if !(l > 0.0 && l.is_finite()) || !(range.lower_factor > 0.0 && range.lower_factor <= range.upper_factor) {
                return Err(invalid(format!("invalid rate {l} or range {range:?}")));
            }
            lower.push((l * range.lower_factor).ln());
            upper.push((l * range.upper_factor).ln());
            thetas.push(50.0 * theta);
            lambda0 = Some((l / 2.0).ln().clamp((l * range.lower_factor).ln(), (l * range.upper_factor).ln()));
        }
        let starts = thetas
            .iter()
            .map(|&th| {
                let sigma0 = tau0 * (2.0 * th).sqrt();
                let mut s = vec![tau0.ln().clamp(lower[0], upper[0]), sigma0.ln().clamp(lower[1], upper[1]), 0.0, 0.0];
                if let Some(l0) = lambda0 {
                    s.push(l0);
                }
                s
            })
            .collect();
        ParamSpace::new(self.names(), self.transforms(), lower, upper, starts)
    }
}

impl TableModel for OuFamily {
    fn evaluate(&self, natural: &[f64]) -> Result<(PathProbabilityTable, PopulationSize)> {
        let model = self.model_at(natural)?;
        let size = self.size_at(natural)?;
        Ok((build_path_table(&model, &self.design, &PairSelection::All)?, size))
    }

    fn simulate(&self, natural: &[f64], rng: &mut ChaCha20Rng) -> Result<CountArrangement> {
        let model = self.model_at(natural)?;
        let size = self.size_at(natural)?;
        Ok(simulate_counts(&model, &self.design, &self.locators, size, rng)?.counts)
    }
}

/// Explorer/sedentary mixture released at `x0`: parameters `(τ, σ, t0, α)`,
/// estimated as `(log τ, log σ, log(t1 − t0), logit α)` with `t1` the first survey time.
#[derive(Debug, Clone)]
pub struct MixtureFamily {
    design: SurveyDesign,
    n: u64,
    x0: [f64; 2],
    locators: Vec<CellLocator>,
}

impl MixtureFamily {
    pub fn new(design: SurveyDesign, n: u64, x0: [f64; 2]) -> Result<Self> {
        if design.n() == 0 {
            return Err(invalid("the design has no survey times"));
        }
        let locators = locators(&design);
        Ok(Self { design, n, x0, locators })
    }

    pub fn design(&self) -> &SurveyDesign {
        &self.design
    }

    pub fn first_time(&self) -> f64 {
        self.design.times()[0]
    }

    pub fn names(&self) -> Vec<String> {
        ["tau", "sigma", "t0", "alpha"].map(String::from).to_vec()
    }

    pub fn transforms(&self) -> Vec<Transform> {
        vec![
            Transform::Log,
            Transform::Log,
            Transform::LogBelow(self.first_time()),
            Transform::Logit,
        ]
    }

    pub fn params_at(&self, natural: &[f64]) -> Result<MixtureParams> {
        if natural.len() != 4 {
            return Err(invalid(format!("expected 4 parameters, got {}", natural.len())));
        }
        MixtureParams::centred(natural[3], natural[0], natural[1], natural[2], self.x0)
    }

    /// Box `[−8, 6] × [−8, 10] × [−8, 3] × [−8, 8]` on the estimation scale
    /// with the given natural-scale starts.
    pub fn default_space(&self, starts: &[Vec<f64>]) -> Result<ParamSpace> {
        let transforms = self.transforms();
        let lower = vec![-8.0, -8.0, -8.0, -8.0];
        let upper = vec![6.0, 10.0, 3.0, 8.0];
        let starts = starts
            .iter()
            .map(|s| {
                if s.len() != 4 {
                    return Err(invalid("mixture starts need 4 values"));
                }
                s.iter()
                    .zip(&transforms)
                    .enumerate()
                    .map(|(i, (&v, t))| Ok(t.from_natural(v)?.clamp(lower[i], upper[i])))
                    .collect()
            })
            .collect::<Result<Vec<_>>>()?;
        ParamSpace::new(self.names(), transforms, lower, upper, starts)
    }
}

impl TableModel for MixtureFamily {
    fn evaluate(&self, natural: &[f64]) -> Result<(PathProbabilityTable, PopulationSize)> {
        let model = MovementModel::Mixture(self.params_at(natural)?);
        Ok((
            build_path_table(&model, &self.design, &PairSelection::All)?,
            PopulationSize::Known(self.n),
        ))
    }

    fn simulate(&self, natural: &[f64], rng: &mut ChaCha20Rng) -> Result<CountArrangement> {
        let model = MovementModel::Mixture(self.params_at(natural)?);
        Ok(simulate_counts(&model, &self.design, &self.locators, PopulationSize::Known(self.n), rng)?.counts)
    }
}

/// One survey time whose cell probabilities are the parameters themselves;
/// the uncovered remainder is the complement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbabilityFamily {
    pub cells: usize,
    pub size: PopulationSize,
}

impl ProbabilityFamily {
    pub fn space(&self, starts: Vec<Vec<f64>>) -> Result<ParamSpace> {
        ParamSpace::new(
            (1..=self.cells).map(|l| format!("p{l}")).collect(),
            vec![Transform::Identity; self.cells],
            vec![1e-9; self.cells],
            vec![1.0 - 1e-9; self.cells],
            starts,
        )
    }
}

impl TableModel for ProbabilityFamily {
    fn evaluate(&self, natural: &[f64]) -> Result<(PathProbabilityTable, PopulationSize)> {
        if natural.len() != self.cells || natural.iter().any(|p| !(*p >= 0.0)) || natural.iter().sum::<f64>() > 1.0 {
            return Err(invalid("cell probabilities must be non-negative with sum at most 1"));
        }
        Ok((PathProbabilityTable::one_time_only(vec![natural.to_vec()])?, self.size))
    }

    fn simulate(&self, natural: &[f64], rng: &mut ChaCha20Rng) -> Result<CountArrangement> {
        let (table, size) = self.evaluate(natural)?;
        let mut probs = table.one_time_row(0).to_vec();
        probs.push((1.0 - probs.iter().sum::<f64>()).max(0.0));
        let counts = match size {
            PopulationSize::Known(n) => sample_multinomial(n, &probs, rng),
            PopulationSize::PoissonRate(rate) => {
                use rand_distr::{Distribution, Poisson};
                probs
                    .iter()
                    .map(|&p| if p > 0.0 { Poisson::new(rate * p).map(|d| d.sample(rng) as u64).unwrap_or(0) } else { 0 })
                    .collect()
            }
        };
        CountArrangement::new(vec![counts[..self.cells].to_vec()])
    }
}
