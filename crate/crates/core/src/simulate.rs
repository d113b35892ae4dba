//! Survey designs, exact trajectory sampling and count simulation.
//!
//! Trajectories are sampled from exact Gaussian transitions, so simulated
//! counts follow the model's path probabilities with no discretization bias.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ecm::{CountArrangement, PopulationSize};
use crate::error::{invalid, Error, Result};
use crate::gauss::{Interval, Rect2D};
use crate::movement::{GaussianProcess, MovementModel, SurveyDesign};

/// Default number of rejected placements tolerated per survey time.
pub const DEFAULT_MAX_REJECTIONS: usize = 100_000;

/// Generator for random survey designs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub n_times: usize,
    pub time_window: Interval,
    /// Inclusive range for the number of cells at each time.
    pub cells_per_time: (usize, usize),
    pub cell_side: f64,
    pub placement_domain: Rect2D,
    #[serde(default = "default_rejections")]
    pub max_rejections: usize,
}

fn default_rejections() -> usize {
    DEFAULT_MAX_REJECTIONS
}

impl DesignSpec {
    /// Ten times on [0, 10], 10 to 50 squares of side 0.1 in [−1, 1]².
    pub fn standard() -> Self {
        Self {
            n_times: 10,
            time_window: Interval::new(0.0, 10.0).expect("valid window"),
            cells_per_time: (10, 50),
            cell_side: 0.1,
            placement_domain: Rect2D::new(
                Interval::new(-1.0, 1.0).expect("valid"),
                Interval::new(-1.0, 1.0).expect("valid"),
            ),
            max_rejections: DEFAULT_MAX_REJECTIONS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_side > 0.0 && self.cell_side.is_finite()) {
            return Err(invalid(format!("cell side must be positive, got {}", self.cell_side)));
        }
        let (lo, hi) = self.cells_per_time;
        if lo > hi {
            return Err(invalid(format!("empty cell-count range {lo}..={hi}")));
        }
        if !self.time_window.is_bounded() {
            return Err(invalid("time window must be bounded"));
        }
        let d = &self.placement_domain;
        if !d.x.is_bounded() || !d.y.is_bounded() {
            return Err(invalid("placement domain must be bounded"));
        }
        if hi > 0 && (d.x.width() < self.cell_side || d.y.width() < self.cell_side) {
            return Err(invalid("cells do not fit in the placement domain"));
        }
        Ok(())
    }
}

/// Random design: sorted uniform times, uniformly placed disjoint squares.
pub fn generate_design<R: Rng + ?Sized>(spec: &DesignSpec, rng: &mut R) -> Result<SurveyDesign> {
    spec.validate()?;
    let w = spec.time_window;
    let mut times: Vec<f64> = (0..spec.n_times)
        .map(|_| w.lo() + rng.random::<f64>() * w.width())
        .collect();
    times.sort_by(f64::total_cmp);
    let d = spec.placement_domain;
    let side = spec.cell_side;
    let mut cells = Vec::with_capacity(spec.n_times);
    for _ in 0..spec.n_times {
        let (lo, hi) = spec.cells_per_time;
        let m = rng.random_range(lo..=hi);
        let mut row: Vec<Rect2D> = Vec::with_capacity(m);
        let mut rejections = 0usize;
        while row.len() < m {
            let x = d.x.lo() + rng.random::<f64>() * (d.x.width() - side);
            let y = d.y.lo() + rng.random::<f64>() * (d.y.width() - side);
            let cand = Rect2D::square(x, y, side)?;
            if row.iter().any(|c| c.overlaps(&cand)) {
                rejections += 1;
                if rejections > spec.max_rejections {
                    return Err(Error::PlacementFailed {
                        needed: m,
                        attempts: rejections,
                    });
                }
            } else {
                row.push(cand);
            }
        }
        cells.push(row);
    }
    SurveyDesign::new(times, cells)
}

/// Positions of each individual at each requested time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectories {
    /// `positions[i][k]` is individual `i` at time `k`.
    pub positions: Vec<Vec<[f64; 2]>>,
    /// Explorer flags for mixtures; empty for single-component models.
    pub explorer: Vec<bool>,
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Samples one path of `process` at `times` into `out`.
fn sample_path<R: Rng + ?Sized>(process: &GaussianProcess, times: &[f64], rng: &mut R, out: &mut Vec<[f64; 2]>) {
    out.clear();
    match *process {
        GaussianProcess::SteadyOu(p) => {
            let th = p.theta();
            let mut x = [0.0; 2];
            for (k, &t) in times.iter().enumerate() {
                if k == 0 {
                    for j in 0..2 {
                        x[j] = p.z[j] + p.tau * normal(rng);
                    }
                } else {
                    ou_step(&mut x, p.z, p.tau, th, t - times[k - 1], rng);
                }
                out.push(x);
            }
        }
        GaussianProcess::ConditionedOu(p) => {
            let th = p.base.theta();
            let mut x = p.x0;
            let mut prev = p.t0;
            for &t in times {
                ou_step(&mut x, p.base.z, p.base.tau, th, t - prev, rng);
                prev = t;
                out.push(x);
            }
        }
        GaussianProcess::Brownian(p) => {
            let mut x = p.x0;
            let mut prev = p.t0;
            for &t in times {
                let sd = p.sigma * (t - prev).sqrt();
                if sd > 0.0 {
                    for xj in x.iter_mut() {
                        *xj += sd * normal(rng);
                    }
                }
                prev = t;
                out.push(x);
            }
        }
    }
}

fn ou_step<R: Rng + ?Sized>(x: &mut [f64; 2], z: [f64; 2], tau: f64, theta: f64, dt: f64, rng: &mut R) {
    if dt == 0.0 {
        return;
    }
    let decay = (-theta * dt).exp();
    let sd = tau * (-(-2.0 * theta * dt).exp_m1()).sqrt();
    for j in 0..2 {
        x[j] = z[j] + (x[j] - z[j]) * decay + sd * normal(rng);
    }
}

fn check_times(model: &MovementModel, times: &[f64]) -> Result<()> {
    if times.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid("sampling times must be strictly increasing"));
    }
    if let Some(&t) = times.first() {
        if !(t >= model.start_time()) {
            return Err(invalid(format!("time {t} precedes the model start")));
        }
    }
    Ok(())
}

/// Independent trajectories of `count` individuals.
pub fn sample_trajectories<R: Rng + ?Sized>(
    model: &MovementModel,
    times: &[f64],
    count: usize,
    rng: &mut R,
) -> Result<Trajectories> {
    model.validate()?;
    check_times(model, times)?;
    let mut positions = Vec::with_capacity(count);
    let mut explorer = Vec::new();
    let mut buf = Vec::with_capacity(times.len());
    for _ in 0..count {
        let (g, flag) = pick_component(model, rng);
        if let Some(f) = flag {
            explorer.push(f);
        }
        sample_path(&g, times, rng, &mut buf);
        positions.push(buf.clone());
    }
    Ok(Trajectories { positions, explorer })
}

fn pick_component<R: Rng + ?Sized>(model: &MovementModel, rng: &mut R) -> (GaussianProcess, Option<bool>) {
    match *model {
        MovementModel::SteadyOu(p) => (GaussianProcess::SteadyOu(p), None),
        MovementModel::ConditionedOu(p) => (GaussianProcess::ConditionedOu(p), None),
        MovementModel::Brownian(p) => (GaussianProcess::Brownian(p), None),
        MovementModel::Mixture(m) => {
            let explorer = rng.random::<f64>() < m.alpha;
            if explorer {
                (GaussianProcess::Brownian(m.brownian), Some(true))
            } else {
                (GaussianProcess::ConditionedOu(m.ou), Some(false))
            }
        }
    }
}

/// Point-in-cell lookup for one survey time using a uniform bucket grid.
#[derive(Debug, Clone)]
pub struct CellLocator {
    cells: Vec<Rect2D>,
    origin: [f64; 2],
    step: [f64; 2],
    dims: [usize; 2],
    buckets: Vec<Vec<u32>>,
    unbounded: Vec<u32>,
}

impl CellLocator {
    pub fn new(cells: &[Rect2D]) -> Self {
        let bounded: Vec<usize> = (0..cells.len())
            .filter(|&i| cells[i].x.is_bounded() && cells[i].y.is_bounded())
            .collect();
        let unbounded = (0..cells.len())
            .filter(|i| !bounded.contains(i))
            .map(|i| i as u32)
            .collect();
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for &i in &bounded {
            for j in 0..2 {
                lo[j] = lo[j].min(cells[i].axis(j).lo());
                hi[j] = hi[j].max(cells[i].axis(j).hi());
            }
        }
        let g = ((bounded.len() as f64).sqrt().ceil() as usize * 2).clamp(1, 256);
        let mut step = [1.0; 2];
        for j in 0..2 {
            if hi[j] > lo[j] {
                step[j] = (hi[j] - lo[j]) / g as f64;
            } else {
                lo[j] = 0.0;
            }
        }
        let dims = [g, g];
        let mut buckets = vec![Vec::new(); g * g];
        for &i in &bounded {
            let c = &cells[i];
            let span = |j: usize| {
                let a = ((c.axis(j).lo() - lo[j]) / step[j]).floor().max(0.0) as usize;
                let b = ((c.axis(j).hi() - lo[j]) / step[j]).floor().max(0.0) as usize;
                (a.min(g - 1), b.min(g - 1))
            };
            let (x0, x1) = span(0);
            let (y0, y1) = span(1);
            for bx in x0..=x1 {
                for by in y0..=y1 {
                    buckets[bx * g + by].push(i as u32);
                }
            }
        }
        Self {
            cells: cells.to_vec(),
            origin: lo,
            step,
            dims,
            buckets,
            unbounded,
        }
    }

    /// Index of the cell containing `p` under half-open membership.
    pub fn locate(&self, p: [f64; 2]) -> Option<usize> {
        let fx = (p[0] - self.origin[0]) / self.step[0];
        let fy = (p[1] - self.origin[1]) / self.step[1];
        if fx >= 0.0 && fy >= 0.0 && fx < self.dims[0] as f64 + 1.0 && fy < self.dims[1] as f64 + 1.0 {
            let bx = (fx as usize).min(self.dims[0] - 1);
            let by = (fy as usize).min(self.dims[1] - 1);
            for &i in &self.buckets[bx * self.dims[1] + by] {
                if self.cells[i as usize].contains(p) {
                    return Some(i as usize);
                }
            }
        }
        self.unbounded
            .iter()
            .map(|&i| i as usize)
            .find(|&i| self.cells[i].contains(p))
    }
}

/// Counts of individuals per cell and time.
pub fn count_arrangement(trajectories: &Trajectories, design: &SurveyDesign) -> Result<CountArrangement> {
    let locators: Vec<CellLocator> = design.cells().iter().map(|c| CellLocator::new(c)).collect();
    let mut counts: Vec<Vec<u64>> = design.cells().iter().map(|c| vec![0; c.len()]).collect();
    for path in &trajectories.positions {
        if path.len() != design.n() {
            return Err(Error::DimensionMismatch(format!(
                "trajectory has {} positions for {} survey times",
                path.len(),
                design.n()
            )));
        }
        for (k, p) in path.iter().enumerate() {
            if let Some(l) = locators[k].locate(*p) {
                counts[k][l] += 1;
            }
        }
    }
    CountArrangement::new(counts)
}

/// A movement model observed over a design with a given population size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationScenario {
    pub model: MovementModel,
    pub design: SurveyDesign,
    pub size: PopulationSize,
    pub seed: u64,
}

/// Simulated counts with diagnostics that estimators never read.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    pub counts: CountArrangement,
    pub realized_n: u64,
    /// Number of explorers for mixtures.
    pub explorers: Option<u64>,
    /// Explorer flag per individual for mixtures; empty otherwise.
    pub explorer_flags: Vec<bool>,
}

/// Generator for stream `stream` derived from `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Streams counts directly without storing trajectories.
pub fn simulate_counts<R: Rng + ?Sized>(
    model: &MovementModel,
    design: &SurveyDesign,
    locators: &[CellLocator],
    size: PopulationSize,
    rng: &mut R,
) -> Result<SimulationOutput> {
    model.validate()?;
    size.validate()?;
    check_times(model, design.times())?;
    let n = match size {
        PopulationSize::Known(n) => n,
        PopulationSize::PoissonRate(rate) => {
            Poisson::new(rate)
                .map_err(|e| invalid(format!("Poisson rate {rate}: {e}")))?
                .sample(rng) as u64
        }
    };
    let mut counts: Vec<Vec<u64>> = design.cells().iter().map(|c| vec![0; c.len()]).collect();
    let mut flags = Vec::new();
    let mut buf = Vec::with_capacity(design.n());
    for _ in 0..n {
        let (g, flag) = pick_component(model, rng);
        if let Some(f) = flag {
            flags.push(f);
        }
        sample_path(&g, design.times(), rng, &mut buf);
        for (k, p) in buf.iter().enumerate() {
            if let Some(l) = locators[k].locate(*p) {
                counts[k][l] += 1;
            }
        }
    }
    let explorers = matches!(model, MovementModel::Mixture(_))
        .then(|| flags.iter().filter(|&&f| f).count() as u64);
    Ok(SimulationOutput {
        counts: CountArrangement::new(counts)?,
        realized_n: n,
        explorers,
        explorer_flags: flags,
    })
}

/// Locators for every survey time of `design`.
pub fn locators(design: &SurveyDesign) -> Vec<CellLocator> {
    design.cells().iter().map(|c| CellLocator::new(c)).collect()
}

/// Simulates the scenario with its own seed.
pub fn simulate_scenario(scenario: &SimulationScenario) -> Result<SimulationOutput> {
    let mut rng = ChaCha20Rng::seed_from_u64(scenario.seed);
    simulate_counts(
        &scenario.model,
        &scenario.design,
        &locators(&scenario.design),
        scenario.size,
        &mut rng,
    )
}

/// Replicate `r` of the scenario, drawn from its own derived stream.
pub fn simulate_replicate(scenario: &SimulationScenario, replicate: u64) -> Result<SimulationOutput> {
    let mut rng = stream_rng(scenario.seed, replicate);
    simulate_counts(
        &scenario.model,
        &scenario.design,
        &locators(&scenario.design),
        scenario.size,
        &mut rng,
    )
}
