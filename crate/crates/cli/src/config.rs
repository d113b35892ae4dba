//! Configuration files: a TOML key tree with `--set key=value` overrides,
//! deserialized into a per-command schema that rejects unknown keys.

use std::path::{Path, PathBuf};

use ecm::inference::{Estimator, LambdaRange, OptimOptions};
use ecm::movement::{MovementModel, OuParams, SurveyDesign};
use ecm::simulate::{generate_design, stream_rng, DesignSpec};
use ecm::ecm::PopulationSize;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

/// Stream reserved for survey design generation.
pub const DESIGN_STREAM: u64 = u64::MAX;

/// Reads `path` (if any), applies overrides in order, and validates against `T`.
pub fn load<T: DeserializeOwned>(path: Option<&Path>, overrides: &[String]) -> Result<T, CliError> {
    let mut root = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            toml::from_str::<Table>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => Table::new(),
    };
    for o in overrides {
        apply_override(&mut root, o)?;
    }
    T::deserialize(Value::Table(root)).map_err(|e| CliError::Config(format!("invalid configuration: {e}")))
}

fn parse_scalar(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies `a.b.c=value`; the value is read as a TOML literal, else as a bare string.
pub fn apply_override(root: &mut Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override '{spec}' is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override '{spec}' has an empty key segment")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override '{spec}': '{p}' is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_scalar(raw.trim()));
    Ok(())
}

/// Where the survey design comes from: exactly one of the three keys.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSource {
    /// `"standard"` for the random design of the OU simulation study.
    pub preset: Option<String>,
    pub generate: Option<DesignSpec>,
    /// A `design.json` written by `simulate`.
    pub file: Option<PathBuf>,
}

impl DesignSource {
    pub fn resolve(&self, seed: u64) -> Result<SurveyDesign, CliError> {
        let spec = match (&self.preset, &self.generate, &self.file) {
            (Some(p), None, None) if p == "standard" => DesignSpec::standard(),
            (Some(p), None, None) => return Err(CliError::Config(format!("unknown design preset '{p}'"))),
            (None, Some(s), None) => s.clone(),
            (None, None, Some(f)) => return Ok(ecm::io::read_json(f)?),
            _ => {
                return Err(CliError::Config(
                    "design needs exactly one of preset, generate or file".into(),
                ))
            }
        };
        Ok(generate_design(&spec, &mut stream_rng(seed, DESIGN_STREAM))?)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputDir {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub seed: u64,
    pub model: MovementModel,
    pub design: DesignSource,
    pub size: PopulationSize,
    #[serde(default = "one")]
    pub replicates: usize,
    pub output: OutputDir,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub counts: PathBuf,
    pub times: PathBuf,
}

/// Population size of the OU family: known, or Poisson with a reference rate
/// that centres the λ box and the start.
#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum OuSize {
    Known(u64),
    Poisson(f64),
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyConfig {
    /// Steady-state OU; `reference` places the box and the default starts.
    Ou {
        size: OuSize,
        reference: OuParams,
        #[serde(default)]
        lambda_range: Option<LambdaRange>,
        /// Natural-scale starts replacing the default ones.
        #[serde(default)]
        starts: Option<Vec<Vec<f64>>>,
    },
    /// Explorer/sedentary mixture released at `x0` among `n` individuals;
    /// starts are natural-scale `(τ, σ, t0, α)`.
    Mixture { n: u64, x0: [f64; 2], starts: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOutput {
    pub fit: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub estimator: Estimator,
    pub data: DataPaths,
    pub family: FamilyConfig,
    #[serde(default)]
    pub optimizer: OptimOptions,
    pub output: FitOutput,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableOutput {
    pub json: PathBuf,
    pub markdown: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    /// A fit report written by `fit`.
    pub fit: PathBuf,
    pub n: usize,
    pub overdraw: Option<f64>,
    pub seed: u64,
    #[serde(default)]
    pub optimizer: OptimOptions,
    pub output: TableOutput,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Labels {
    pub sources: Vec<String>,
    pub destinations: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoteConfig {
    pub districts: PathBuf,
    pub labels: Option<Labels>,
    #[serde(default = "three")]
    pub starts: usize,
    pub seed: u64,
    #[serde(default)]
    pub bootstrap: usize,
    pub overdraw: Option<f64>,
    #[serde(default)]
    pub optimizer: OptimOptions,
    pub output: TableOutput,
}

fn three() -> usize {
    3
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub seed: u64,
    /// Steady-state OU parameters generating every replicate.
    pub truth: OuParams,
    pub design: DesignSource,
    /// One setting per size and estimator.
    #[serde(default)]
    pub sizes: Vec<PopulationSize>,
    #[serde(default)]
    pub estimators: Vec<Estimator>,
    #[serde(default = "hundred")]
    pub replicates: usize,
    #[serde(default)]
    pub lambda_range: Option<LambdaRange>,
    #[serde(default)]
    pub optimizer: OptimOptions,
    pub output: OutputDir,
}

fn hundred() -> usize {
    100
}

/// Shorthand used in error messages and tables.
pub fn size_label(size: &PopulationSize) -> String {
    match size {
        PopulationSize::Known(n) => format!("N={n}"),
        PopulationSize::PoissonRate(l) => format!("lambda={l}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_build_nested_tables() {
        let mut t: Table = toml::from_str("[a]\nb = 1\n").unwrap();
        apply_override(&mut t, "a.b=2").unwrap();
        apply_override(&mut t, "a.c.d=\"x\"").unwrap();
        apply_override(&mut t, "e=bare").unwrap();
        apply_override(&mut t, "f=[1, 2.5]").unwrap();
        assert_eq!(t["a"]["b"].as_integer(), Some(2));
        assert_eq!(t["a"]["c"]["d"].as_str(), Some("x"));
        assert_eq!(t["e"].as_str(), Some("bare"));
        assert_eq!(t["f"].as_array().unwrap().len(), 2);
        assert!(apply_override(&mut t, "a.b.c=1").is_err());
        assert!(apply_override(&mut t, "novalue").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "seed = 1\nsize = { known = 10 }\nbogus = 2\n[model]\nkind = \"steady_ou\"\ntau = 1\nsigma = 1\nz = [0, 0]\n[design]\npreset = \"standard\"\n[output]\ndir = \"o\"\n";
        let t: Table = toml::from_str(text).unwrap();
        assert!(SimulateConfig::deserialize(Value::Table(t.clone())).is_err());
        let mut ok = t;
        ok.remove("bogus");
        let c = SimulateConfig::deserialize(Value::Table(ok)).unwrap();
        assert_eq!(c.size, PopulationSize::Known(10));
        assert_eq!(c.replicates, 1);
    }

    #[test]
    fn family_config_is_tagged() {
        let t: Table = toml::from_str(
            "kind = \"ou\"\nsize = { poisson = 100.0 }\nreference = { tau = 0.4, sigma = 0.018, z = [-0.2, 0.1] }\n",
        )
        .unwrap();
        let f = FamilyConfig::deserialize(Value::Table(t)).unwrap();
        assert!(matches!(f, FamilyConfig::Ou { size: OuSize::Poisson(_), .. }));
    }
}
