//! Two-round vote-transfer estimation from district counts.
//!
//! In each district the second-round counts are modelled as an independent
//! sum of multinomials, one per first-round option, sharing a transition
//! matrix across districts. The fit maximizes a Gaussian pseudo-likelihood
//! with the exact conditional mean and covariance. Only the two candidate
//! coordinates of the second round enter the likelihood: given the first
//! round, the abstention count is their complement.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, Matrix2, Matrix3, Vector2};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ecm::{sample_conditional_next, sample_multinomial};
use crate::error::{invalid, Error, Result};
use crate::inference::{
    bootstrap_replicates, fit_objective, min_eigenvalue, is_erratic, BootstrapResult, FitResult,
    OptimOptions, ParamSpace, Transform, JITTER_MAX, JITTER_START,
};

/// Number of second-round options: two candidates and abstention (last).
pub const M2: usize = 3;
/// Box half-width of the multinomial-logit coordinates.
pub const LOGIT_BOUND: f64 = 20.0;
const ROW_TOL: f64 = 1e-12;

/// First- and second-round counts of one district.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistrictData {
    pub id: String,
    /// Candidates then abstention.
    pub first_round: Vec<u64>,
    /// Two candidates then abstention.
    pub second_round: [u64; M2],
}

impl DistrictData {
    /// Rejects districts whose rounds do not have the same number of voters.
    pub fn new(id: impl Into<String>, first_round: Vec<u64>, second_round: [u64; M2]) -> Result<Self> {
        let d = Self {
            id: id.into(),
            first_round,
            second_round,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.first_round.is_empty() {
            return Err(invalid(format!("district {}: no first-round options", self.id)));
        }
        let (a, b) = (self.first_round.iter().sum::<u64>(), self.second_round.iter().sum::<u64>());
        if a != b {
            return Err(invalid(format!(
                "district {}: first round has {a} voters but second round has {b}",
                self.id
            )));
        }
        Ok(())
    }

    pub fn voters(&self) -> u64 {
        self.first_round.iter().sum()
    }

    /// Same district with every count multiplied by `factor`.
    pub fn scaled(&self, factor: u64) -> Self {
        Self {
            id: self.id.clone(),
            first_round: self.first_round.iter().map(|q| q * factor).collect(),
            second_round: self.second_round.map(|q| q * factor),
        }
    }
}

/// Row-stochastic matrix of second-round choice probabilities given the first-round option.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; M2]>", into = "Vec<[f64; M2]>")]
pub struct TransitionMatrix {
    rows: Vec<[f64; M2]>,
}

impl TryFrom<Vec<[f64; M2]>> for TransitionMatrix {
    type Error = Error;

    fn try_from(rows: Vec<[f64; M2]>) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<TransitionMatrix> for Vec<[f64; M2]> {
    fn from(t: TransitionMatrix) -> Self {
        t.rows
    }
}

impl TransitionMatrix {
    pub fn new(rows: Vec<[f64; M2]>) -> Result<Self> {
        if rows.is_empty() {
            return Err(invalid("a transition matrix needs at least one row"));
        }
        for (row, r) in rows.iter().enumerate() {
            if r.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(invalid(format!("transition row {row} has an entry outside [0, 1]")));
            }
            let sum: f64 = r.iter().sum();
            if (sum - 1.0).abs() > ROW_TOL {
                return Err(Error::RowSum { row, sum });
            }
        }
        Ok(Self { rows })
    }

    /// Rows from multinomial-logit coordinates `(η₁, η₂)` per row, abstention as reference.
    pub fn from_logits(x: &[f64]) -> Result<Self> {
        if x.is_empty() || x.len() % (M2 - 1) != 0 {
            return Err(Error::DimensionMismatch(format!("{} logit coordinates", x.len())));
        }
        let rows = x
            .chunks(M2 - 1)
            .map(|eta| {
                // shift by the largest score so the exponentials cannot overflow
                let top = eta[0].max(eta[1]).max(0.0);
                let w = [(eta[0] - top).exp(), (eta[1] - top).exp(), (-top).exp()];
                normalize_row(w)
            })
            .collect();
        Self::new(rows)
    }

    /// Logit coordinates of every row, clamped to the fitting box.
    pub fn to_logits(&self) -> Vec<f64> {
        self.rows
            .iter()
            .flat_map(|r| {
                let base = r[2].max(f64::MIN_POSITIVE);
                [0, 1].map(|j| (r[j].max(f64::MIN_POSITIVE) / base).ln().clamp(-LOGIT_BOUND, LOGIT_BOUND))
            })
            .collect()
    }

    pub fn rows(&self) -> &[[f64; M2]] {
        &self.rows
    }

    pub fn n_sources(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, source: usize, dest: usize) -> f64 {
        self.rows[source][dest]
    }

    /// Entries in row-major order.
    pub fn flat(&self) -> Vec<f64> {
        self.rows.iter().flatten().copied().collect()
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows.len(), M2, |i, j| self.rows[i][j])
    }
}

fn normalize_row(w: [f64; M2]) -> [f64; M2] {
    let s: f64 = w.iter().sum();
    let mut r = w.map(|v| v / s);
    // make the row sum exactly one in floating point
    r[2] = (1.0 - r[0] - r[1]).max(0.0);
    let s2: f64 = r.iter().sum();
    if s2 != 1.0 {
        r = r.map(|v| v / s2);
    }
    r
}

/// Names of the transition entries in row-major order, `dest|source`.
pub fn entry_names(sources: &[String], dests: &[String]) -> Vec<String> {
    sources
        .iter()
        .flat_map(|s| dests.iter().map(move |d| format!("{d}|{s}")))
        .collect()
}

/// Default option labels: `opt_1..opt_m1` and `res_1..res_3`.
pub fn default_labels(m1: usize) -> (Vec<String>, Vec<String>) {
    (
        (1..=m1).map(|i| format!("opt_{i}")).collect(),
        (1..=M2).map(|i| format!("res_{i}")).collect(),
    )
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads districts from a CSV with header `district,opt_1..opt_m1,res_1,res_2,res_3`.
pub fn load_districts(path: &Path) -> Result<Vec<DistrictData>> {
    let file = std::fs::File::open(path)?;
    read_districts(file, path)
}

/// As [`load_districts`], reading from any source; `path` only labels error messages.
pub fn read_districts<R: Read>(reader: R, path: &Path) -> Result<Vec<DistrictData>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    let m1 = cols.iter().filter(|c| c.starts_with("opt_")).count();
    let mut expected = vec!["district".to_string()];
    expected.extend((1..=m1).map(|i| format!("opt_{i}")));
    expected.extend((1..=M2).map(|i| format!("res_{i}")));
    if m1 == 0 || cols != expected {
        return Err(parse_error(
            path,
            1,
            format!("expected header {}, found {}", expected.join(","), cols.join(",")),
        ));
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != expected.len() {
            return Err(parse_error(path, line, format!("expected {} fields, found {}", expected.len(), rec.len())));
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(parse_error(path, line, "empty district id"));
        }
        let mut counts = Vec::with_capacity(m1 + M2);
        for (j, f) in rec.iter().enumerate().skip(1) {
            let v: u64 = f
                .parse()
                .map_err(|_| parse_error(path, line, format!("{}: '{f}' is not a count", expected[j])))?;
            counts.push(v);
        }
        let second = [counts[m1], counts[m1 + 1], counts[m1 + 2]];
        counts.truncate(m1);
        let d = DistrictData::new(id.clone(), counts, second).map_err(|e| parse_error(path, line, e.to_string()))?;
        if !seen.insert(id.clone()) {
            return Err(parse_error(path, line, format!("duplicate district id '{id}'")));
        }
        out.push(d);
    }
    if out.is_empty() {
        return Err(parse_error(path, 1, "no districts"));
    }
    Ok(out)
}

fn check_shapes(d: &DistrictData, t: &TransitionMatrix) -> Result<()> {
    if d.first_round.len() != t.n_sources() {
        return Err(Error::DimensionMismatch(format!(
            "district {} has {} first-round options but the matrix has {} rows",
            d.id,
            d.first_round.len(),
            t.n_sources()
        )));
    }
    Ok(())
}

/// Mean and covariance of the second-round counts given the first round.
pub fn district_conditional_moments(d: &DistrictData, t: &TransitionMatrix) -> Result<([f64; M2], Matrix3<f64>)> {
    check_shapes(d, t)?;
    let mut mean = [0.0; M2];
    let mut cov = Matrix3::zeros();
    for (&q, row) in d.first_round.iter().zip(t.rows()) {
        let q = q as f64;
        for a in 0..M2 {
            mean[a] += q * row[a];
            for b in 0..M2 {
                let delta = if a == b { row[a] } else { 0.0 };
                cov[(a, b)] += q * (delta - row[a] * row[b]);
            }
        }
    }
    Ok((mean, cov))
}

/// District-summed Gaussian pseudo-log-likelihood and the districts left out of it.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferLoglik {
    pub value: f64,
    /// Districts whose covariance stayed singular after jitter.
    pub skipped: Vec<String>,
}

enum Term {
    Value(f64),
    Skipped,
}

fn district_term(d: &DistrictData, t: &TransitionMatrix) -> Term {
    let (mean, cov3) = district_conditional_moments(d, t).expect("shapes checked by the caller");
    let r = Vector2::new(d.second_round[0] as f64 - mean[0], d.second_round[1] as f64 - mean[1]);
    let cov = Matrix2::new(cov3[(0, 0)], cov3[(0, 1)], cov3[(1, 0)], cov3[(1, 1)]);
    let base = cov.trace() / 2.0;
    if base <= 0.0 {
        // deterministic transfer: exact match carries no information, anything else is unexplained
        return if r.iter().all(|v| v.abs() < 0.5) {
            Term::Value(0.0)
        } else {
            Term::Skipped
        };
    }
    let mut jitter = 0.0;
    loop {
        let c = cov + Matrix2::identity() * jitter;
        if let Some(ch) = c.cholesky() {
            let l = ch.l();
            let z = l.solve_lower_triangular(&r).expect("positive diagonal");
            let log_det = 2.0 * (l[(0, 0)].ln() + l[(1, 1)].ln());
            let v = -0.5 * (2.0 * (2.0 * std::f64::consts::PI).ln() + log_det + z.norm_squared());
            return if v.is_finite() { Term::Value(v) } else { Term::Skipped };
        }
        jitter = if jitter == 0.0 { JITTER_START * base } else { jitter * 10.0 };
        if jitter > JITTER_MAX * base * (1.0 + 1e-9) {
            return Term::Skipped;
        }
    }
}

/// Sum over districts of the Gaussian log-density of the two candidate counts.
pub fn transfer_loglik_detailed(districts: &[DistrictData], t: &TransitionMatrix) -> Result<TransferLoglik> {
    for d in districts {
        check_shapes(d, t)?;
    }
    let terms: Vec<Term> = districts.par_iter().map(|d| district_term(d, t)).collect();
    let mut value = 0.0;
    let mut skipped = Vec::new();
    for (d, term) in districts.iter().zip(terms) {
        match term {
            Term::Value(v) => value += v,
            Term::Skipped => skipped.push(d.id.clone()),
        }
    }
    Ok(TransferLoglik { value, skipped })
}

/// Value of [`transfer_loglik_detailed`].
pub fn transfer_loglik(districts: &[DistrictData], t: &TransitionMatrix) -> Result<f64> {
    transfer_loglik_detailed(districts, t).map(|l| l.value)
}

/// Fitted transition matrix with the optimizer record on the logit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferFit {
    pub matrix: TransitionMatrix,
    /// Logit-scale fit. The erratic flag uses the Hessian restricted to
    /// coordinates off the box boundary, since entries at a corner of the
    /// simplex pin their logits to a bound.
    pub fit: FitResult,
    pub skipped_districts: Vec<String>,
}

impl TransferFit {
    /// The fit expressed over transition entries, as consumed by the bootstrap.
    pub fn entries(&self) -> FitResult {
        let m1 = self.matrix.n_sources();
        let (s, d) = default_labels(m1);
        FitResult {
            names: entry_names(&s, &d),
            natural: self.matrix.flat(),
            ..self.fit.clone()
        }
    }
}

fn check_districts(districts: &[DistrictData]) -> Result<usize> {
    if districts.len() < 2 {
        return Err(invalid("the transfer fit needs at least two districts"));
    }
    let m1 = districts[0].first_round.len();
    for d in districts {
        d.validate()?;
        if d.first_round.len() != m1 {
            return Err(Error::DimensionMismatch(format!(
                "district {} has {} first-round options, expected {m1}",
                d.id,
                d.first_round.len()
            )));
        }
    }
    Ok(m1)
}

/// Pooled second-round shares used as every row of the first start.
fn pooled_start(districts: &[DistrictData], m1: usize) -> Vec<f64> {
    let mut tot = [0.5f64; M2];
    for d in districts {
        for (t, &q) in tot.iter_mut().zip(&d.second_round) {
            *t += q as f64;
        }
    }
    let eta = [(tot[0] / tot[2]).ln(), (tot[1] / tot[2]).ln()];
    (0..m1).flat_map(|_| eta).map(|v| v.clamp(-LOGIT_BOUND, LOGIT_BOUND)).collect()
}

/// Maximizes the transfer pseudo-likelihood over multinomial-logit rows.
///
/// Start 0 puts the pooled second-round shares in every row; the other
/// `starts − 1` draw logits uniformly in `[−3, 3]`.
pub fn fit_transfer<R: Rng + ?Sized>(
    districts: &[DistrictData],
    starts: usize,
    rng: &mut R,
    opts: &OptimOptions,
) -> Result<TransferFit> {
    let m1 = check_districts(districts)?;
    let p = m1 * (M2 - 1);
    let mut pts = vec![pooled_start(districts, m1)];
    for _ in 1..starts.max(1) {
        pts.push((0..p).map(|_| rng.random_range(-3.0..3.0)).collect());
    }
    let fit = fit_logits(districts, m1, pts, opts)?;
    let skipped = transfer_loglik_detailed(districts, &fit.matrix)?.skipped;
    Ok(TransferFit {
        skipped_districts: skipped,
        ..fit
    })
}

fn fit_logits(districts: &[DistrictData], m1: usize, starts: Vec<Vec<f64>>, opts: &OptimOptions) -> Result<TransferFit> {
    let p = m1 * (M2 - 1);
    let names = (1..=m1)
        .flat_map(|l| (1..M2).map(move |j| format!("eta[{l},{j}]")))
        .collect();
    let space = ParamSpace::new(
        names,
        vec![Transform::Identity; p],
        vec![-LOGIT_BOUND; p],
        vec![LOGIT_BOUND; p],
        starts,
    )?;
    let objective = |x: &[f64]| match TransitionMatrix::from_logits(x).and_then(|t| transfer_loglik(districts, &t)) {
        Ok(v) if !v.is_nan() => -v,
        _ => f64::INFINITY,
    };
    let mut fit = fit_objective(&objective, &space, opts)?;
    let free: Vec<usize> = (0..p).filter(|&i| !fit.at_bound[i]).collect();
    let reduced = DMatrix::from_fn(free.len(), free.len(), |a, b| fit.hessian[free[a]][free[b]]);
    fit.min_hessian_eigenvalue = if free.is_empty() { f64::INFINITY } else { min_eigenvalue(&reduced) };
    fit.erratic = is_erratic(fit.min_hessian_eigenvalue);
    Ok(TransferFit {
        matrix: TransitionMatrix::from_logits(&fit.transformed)?,
        fit,
        skipped_districts: Vec::new(),
    })
}

/// Parametric bootstrap: resample each district's second round from its
/// observed first round under the fitted matrix, refit, and take percentile
/// intervals of the transition entries.
pub fn transfer_bootstrap(
    fit: &TransferFit,
    districts: &[DistrictData],
    n: usize,
    overdraw: f64,
    seed: u64,
    opts: &OptimOptions,
) -> Result<BootstrapResult> {
    check_districts(districts)?;
    let cond = fit.matrix.to_dmatrix();
    let start = fit.fit.transformed.clone();
    let refit = |rng: &mut ChaCha20Rng| {
        let resampled = districts
            .iter()
            .map(|d| {
                let next = sample_conditional_next(&d.first_round, &cond, rng)?;
                DistrictData::new(d.id.clone(), d.first_round.clone(), [next[0], next[1], next[2]])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(fit_logits(&resampled, fit.matrix.n_sources(), vec![start.clone()], opts)?.entries())
    };
    bootstrap_replicates(&fit.entries(), n, overdraw, seed, &refit)
}

/// Generator of synthetic two-round elections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticElection {
    pub n_districts: usize,
    /// District sizes are log-uniform on this range.
    pub min_voters: u64,
    pub max_voters: u64,
    /// Expected first-round shares, candidates then abstention.
    pub shares: Vec<f64>,
    /// Dirichlet concentration of district shares around `shares`.
    pub concentration: f64,
}

impl SyntheticElection {
    /// 347 districts of 233 to 403 129 voters with the 2021 Chilean first-round shares
    /// (Kast, Boric, Parisi, Sichel, Provoste, ME-O, Artés, abstention).
    pub fn chile_like() -> Self {
        Self {
            n_districts: 347,
            min_voters: 233,
            max_voters: 403_129,
            shares: vec![0.1305, 0.1208, 0.0599, 0.0598, 0.0543, 0.0356, 0.0068, 0.5323],
            concentration: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_districts == 0 || self.min_voters == 0 || self.min_voters > self.max_voters {
            return Err(invalid("need districts and 0 < min_voters ≤ max_voters"));
        }
        if self.shares.is_empty() || self.shares.iter().any(|&s| !(s > 0.0)) {
            return Err(invalid("shares must be positive"));
        }
        if (self.shares.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid("shares must sum to 1"));
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return Err(invalid("concentration must be positive"));
        }
        Ok(())
    }

    /// Draws districts whose second rounds follow `t`.
    pub fn generate<R: Rng + ?Sized>(&self, t: &TransitionMatrix, rng: &mut R) -> Result<Vec<DistrictData>> {
        self.validate()?;
        if t.n_sources() != self.shares.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} shares for {} transition rows",
                self.shares.len(),
                t.n_sources()
            )));
        }
        let cond = t.to_dmatrix();
        let (lo, hi) = ((self.min_voters as f64).ln(), (self.max_voters as f64).ln());
        let gammas: Vec<Gamma<f64>> = self
            .shares
            .iter()
            .map(|&s| Gamma::new(self.concentration * s, 1.0).map_err(|e| invalid(e.to_string())))
            .collect::<Result<_>>()?;
        (0..self.n_districts)
            .map(|j| {
                let size = if lo == hi { self.min_voters } else { rng.random_range(lo..hi).exp().round() as u64 };
                let size = size.clamp(self.min_voters, self.max_voters);
                let w: Vec<f64> = gammas.iter().map(|g| g.sample(rng).max(1e-300)).collect();
                let s: f64 = w.iter().sum();
                let probs: Vec<f64> = w.iter().map(|v| v / s).collect();
                let first = sample_multinomial(size, &probs, rng);
                let next = sample_conditional_next(&first, &cond, rng)?;
                DistrictData::new(format!("d{:03}", j + 1), first, [next[0], next[1], next[2]])
            })
            .collect()
    }
}

/// Percentage display in the style of the published transfer table.
pub fn format_percent(p: f64) -> String {
    let v = 100.0 * p;
    if format!("{v:.2}") == "0.00" {
        "≈ 0 %".into()
    } else if format!("{v:.2}") == "100.00" {
        "≈ 100 %".into()
    } else {
        format!("{v:.2} %")
    }
}

/// Markdown table with second-round options in rows and first-round options
/// in columns; each cell holds the estimate and, when available, its interval.
pub fn markdown_table(
    t: &TransitionMatrix,
    intervals: Option<&[Option<[f64; 2]>]>,
    sources: &[String],
    dests: &[String],
) -> Result<String> {
    if sources.len() != t.n_sources() || dests.len() != M2 {
        return Err(Error::DimensionMismatch("labels do not match the matrix".into()));
    }
    if let Some(iv) = intervals {
        if iv.len() != t.n_sources() * M2 {
            return Err(Error::DimensionMismatch("one interval per entry is required".into()));
        }
    }
    let mut s = String::from("| |");
    for src in sources {
        s.push_str(&format!(" {src} |"));
    }
    s.push_str("\n|---|");
    s.push_str(&"---|".repeat(sources.len()));
    s.push('\n');
    for (j, dest) in dests.iter().enumerate() {
        s.push_str(&format!("| {dest} |"));
        for l in 0..sources.len() {
            let mut cell = format_percent(t.get(l, j));
            if let Some(Some([a, b])) = intervals.map(|iv| iv[l * M2 + j]) {
                cell.push_str(&format!(" [{:.2}, {:.2}]", 100.0 * a, 100.0 * b));
            }
            s.push_str(&format!(" {cell} |"));
        }
        s.push('\n');
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn planted() -> TransitionMatrix {
        TransitionMatrix::new(vec![
            [0.70, 0.10, 0.20],
            [0.15, 0.60, 0.25],
            [0.30, 0.30, 0.40],
            [0.10, 0.05, 0.85],
        ])
        .unwrap()
    }

    fn election(n: usize, lo: u64, hi: u64) -> SyntheticElection {
        SyntheticElection {
            n_districts: n,
            min_voters: lo,
            max_voters: hi,
            shares: vec![0.25, 0.2, 0.15, 0.4],
            concentration: 10.0,
        }
    }

    #[test]
    fn district_closure() {
        assert!(DistrictData::new("a", vec![5, 5], [3, 3, 4]).is_ok());
        assert!(DistrictData::new("a", vec![5, 5], [3, 3, 3]).is_err());
    }

    #[test]
    fn reads_districts_and_reports_lines() {
        let p = Path::new("in.csv");
        let ok = "district,opt_1,opt_2,res_1,res_2,res_3\na,5,5,3,3,4\nb,1,2,0,0,3\n";
        let ds = read_districts(ok.as_bytes(), p).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds[1].second_round, [0, 0, 3]);

        let bad = "district,opt_1,opt_2,res_1,res_2,res_3\na,5,5,3,3,4\nb,5,5,3,3,3\n";
        match read_districts(bad.as_bytes(), p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let dup = "district,opt_1,opt_2,res_1,res_2,res_3\na,5,5,3,3,4\na,5,5,3,3,4\n";
        assert!(matches!(read_districts(dup.as_bytes(), p), Err(Error::Parse { line: 3, .. })));
        let empty = "district,opt_1,opt_2,res_1,res_2,res_3\n";
        assert!(read_districts(empty.as_bytes(), p).is_err());
        let malformed = "district,opt_1,opt_2,res_1,res_2,res_3\na,5,x,3,3,4\n";
        assert!(matches!(read_districts(malformed.as_bytes(), p), Err(Error::Parse { line: 2, .. })));
        let header = "district,res_1,res_2,res_3\na,3,3,4\n";
        assert!(read_districts(header.as_bytes(), p).is_err());
    }

    #[test]
    fn logits_round_trip() {
        let t = planted();
        let back = TransitionMatrix::from_logits(&t.to_logits()).unwrap();
        for (a, b) in t.flat().iter().zip(back.flat()) {
            assert!((a - b).abs() < 1e-14);
        }
        let extreme = TransitionMatrix::from_logits(&[700.0, -700.0, 0.0, 0.0]).unwrap();
        assert_eq!(extreme.rows()[0].iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn deterministic_transfer_moments() {
        let d = DistrictData::new("a", vec![4, 6], [10, 0, 0]).unwrap();
        let t = TransitionMatrix::new(vec![[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        let (mean, cov) = district_conditional_moments(&d, &t).unwrap();
        assert_eq!(mean, [10.0, 0.0, 0.0]);
        assert_eq!(cov, Matrix3::zeros());
        assert_eq!(transfer_loglik(&[d], &t).unwrap(), 0.0);
    }

    #[test]
    fn single_source_is_multinomial() {
        let d = DistrictData::new("a", vec![20], [6, 4, 10]).unwrap();
        let t = TransitionMatrix::new(vec![[0.3, 0.2, 0.5]]).unwrap();
        let (mean, cov) = district_conditional_moments(&d, &t).unwrap();
        assert!((mean[0] - 6.0).abs() < 1e-12 && (mean[2] - 10.0).abs() < 1e-12);
        assert!((cov[(0, 0)] - 20.0 * 0.3 * 0.7).abs() < 1e-12);
        assert!((cov[(0, 1)] + 20.0 * 0.3 * 0.2).abs() < 1e-12);
    }

    #[test]
    fn moments_match_sampler() {
        let d = DistrictData::new("a", vec![30, 50, 20, 0], [0, 0, 100]).unwrap();
        let t = planted();
        let (mean, cov) = district_conditional_moments(&d, &t).unwrap();
        let cond = t.to_dmatrix();
        let mut rng = stream_rng(3, 0);
        let n = 1_000_000;
        let (mut s, mut ss) = ([0.0; M2], [[0.0; M2]; M2]);
        for _ in 0..n {
            let x = sample_conditional_next(&d.first_round, &cond, &mut rng).unwrap();
            for a in 0..M2 {
                s[a] += x[a] as f64;
                for b in 0..M2 {
                    ss[a][b] += x[a] as f64 * x[b] as f64;
                }
            }
        }
        let nf = n as f64;
        for a in 0..M2 {
            let m = s[a] / nf;
            assert!((m - mean[a]).abs() < 4.0 * (cov[(a, a)] / nf).sqrt(), "mean {a}");
            for b in 0..M2 {
                let c = ss[a][b] / nf - m * s[b] / nf;
                // sd of a sample covariance ≈ sqrt((σ_aa σ_bb + σ_ab²) / n)
                let se = ((cov[(a, a)] * cov[(b, b)] + cov[(a, b)].powi(2)) / nf).sqrt();
                assert!((c - cov[(a, b)]).abs() < 4.0 * se, "cov {a}{b}");
            }
        }
    }

    #[test]
    fn duplicated_districts_double_the_objective() {
        let ds = election(20, 100, 1000).generate(&planted(), &mut stream_rng(1, 0)).unwrap();
        let mut twice = ds.clone();
        twice.extend(ds.iter().map(|d| DistrictData { id: format!("{}b", d.id), ..d.clone() }));
        let t = TransitionMatrix::new(vec![[0.5, 0.2, 0.3]; 4]).unwrap();
        assert_eq!(transfer_loglik(&twice, &t).unwrap(), 2.0 * transfer_loglik(&ds, &t).unwrap());
    }

    #[test]
    fn truth_beats_perturbations() {
        let t = planted();
        let ds = election(300, 1000, 100_000).generate(&t, &mut stream_rng(2, 0)).unwrap();
        let best = transfer_loglik(&ds, &t).unwrap();
        let mut rng = stream_rng(2, 1);
        for _ in 0..100 {
            let rows = t
                .rows()
                .iter()
                .map(|r| normalize_row(r.map(|v| (v + rng.random_range(-0.05..0.05)).max(1e-3))))
                .collect();
            let p = TransitionMatrix::new(rows).unwrap();
            assert!(transfer_loglik(&ds, &p).unwrap() < best);
        }
    }

    #[test]
    fn recovers_planted_matrix() {
        let t = TransitionMatrix::new(vec![
            [0.70, 0.10, 0.20],
            [0.15, 0.60, 0.25],
            [0.30, 0.30, 0.40],
            [0.10, 0.05, 0.85],
        ])
        .unwrap();
        let ds = election(300, 1000, 100_000).generate(&t, &mut stream_rng(4, 0)).unwrap();
        let f = fit_transfer(&ds, 2, &mut stream_rng(4, 1), &OptimOptions::default()).unwrap();
        assert!(!f.fit.erratic);
        for (a, b) in f.matrix.flat().iter().zip(t.flat()) {
            assert!((a - b).abs() < 0.01, "{a} vs {b}");
        }
        for r in f.matrix.rows() {
            assert_eq!(r.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn maximizer_is_stable_under_count_scaling() {
        let t = planted();
        let ds = election(150, 1000, 1000).generate(&t, &mut stream_rng(5, 0)).unwrap();
        let big: Vec<DistrictData> = ds.iter().map(|d| d.scaled(100)).collect();
        let opts = OptimOptions::default();
        let a = fit_transfer(&ds, 1, &mut stream_rng(5, 1), &opts).unwrap();
        let b = fit_transfer(&big, 1, &mut stream_rng(5, 1), &opts).unwrap();
        for (x, y) in a.matrix.flat().iter().zip(b.matrix.flat()) {
            assert!((x - y).abs() < 0.005, "{x} vs {y}");
        }
    }

    #[test]
    fn bootstrap_with_two_replicates_gives_min_max() {
        let t = planted();
        let ds = election(40, 1000, 10_000).generate(&t, &mut stream_rng(6, 0)).unwrap();
        let opts = OptimOptions::default();
        let f = fit_transfer(&ds, 1, &mut stream_rng(6, 1), &opts).unwrap();
        let b = transfer_bootstrap(&f, &ds, 2, 0.0, 9, &opts).unwrap();
        assert_eq!(b.n_retained, 2);
        for (j, iv) in b.intervals.iter().enumerate() {
            let [lo, hi] = iv.unwrap();
            assert_eq!(lo, b.samples[0][j].min(b.samples[1][j]));
            assert_eq!(hi, b.samples[0][j].max(b.samples[1][j]));
        }
        assert_eq!(b, transfer_bootstrap(&f, &ds, 2, 0.0, 9, &opts).unwrap());
    }

    #[test]
    fn percent_display() {
        assert_eq!(format_percent(0.00001), "≈ 0 %");
        assert_eq!(format_percent(0.99999), "≈ 100 %");
        assert_eq!(format_percent(0.3104), "31.04 %");
        let t = planted();
        let (s, d) = default_labels(4);
        let md = markdown_table(&t, None, &s, &d).unwrap();
        assert_eq!(md.lines().count(), 2 + M2);
        assert!(md.lines().nth(2).unwrap().starts_with("| res_1 | 70.00 %"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn conditional_covariance_is_psd(
            q in prop::collection::vec(0u64..10_000, 4),
            w in prop::collection::vec(0.01f64..1.0, 12),
        ) {
            let rows = w.chunks(3).map(|c| normalize_row([c[0], c[1], c[2]])).collect();
            let t = TransitionMatrix::new(rows).unwrap();
            let total: u64 = q.iter().sum();
            let d = DistrictData::new("a", q, [0, 0, total]).unwrap();
            let (_, cov) = district_conditional_moments(&d, &t).unwrap();
            let min = cov.symmetric_eigen().eigenvalues.min();
            prop_assert!(min >= -1e-8 * cov.trace().max(1.0));
        }

        #[test]
        fn objective_ignores_district_order(seed in 0u64..1000, shift in 1usize..19) {
            let ds = election(20, 50, 500).generate(&planted(), &mut stream_rng(seed, 0)).unwrap();
            let mut rotated = ds.clone();
            rotated.rotate_left(shift);
            let t = TransitionMatrix::new(vec![[0.4, 0.3, 0.3]; 4]).unwrap();
            let a = transfer_loglik(&ds, &t).unwrap();
            let b = transfer_loglik(&rotated, &t).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.abs());
        }
    }
}
