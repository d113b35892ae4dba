use ecm::ecm::CountArrangement;
use ecm::inference::{
    fit, Estimator, FitResult, LambdaRange, MixtureFamily, OuFamily, ParamSpace, SizeMode, TableModel,
};
use ecm::io::{read_counts, write_json};
use ecm::movement::SurveyDesign;
use serde::{Deserialize, Serialize};

use crate::config::{FamilyConfig, FitConfig, OuSize};
use crate::CliError;

/// Mean total count per survey time below which MGLE estimates are unreliable.
pub const MGLE_MIN_MEAN_COUNT: f64 = 1e3;

/// Everything needed to re-create the fitted model, plus the fit itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub estimator: Estimator,
    pub family: FamilyConfig,
    pub design: SurveyDesign,
    pub mean_total_count: f64,
    pub space: ParamSpace,
    pub warnings: Vec<String>,
    pub result: FitResult,
}

pub enum Family {
    Ou(OuFamily),
    Mixture(MixtureFamily),
}

impl Family {
    pub fn model(&self) -> &dyn TableModel {
        match self {
            Family::Ou(f) => f,
            Family::Mixture(f) => f,
        }
    }
}

/// The family and its parameter space over `design`.
pub fn build_family(cfg: &FamilyConfig, design: SurveyDesign) -> Result<(Family, ParamSpace), CliError> {
    match cfg {
        FamilyConfig::Ou {
            size,
            reference,
            lambda_range,
            starts,
        } => {
            let (mode, lambda) = match *size {
                OuSize::Known(n) => (SizeMode::Known(n), None),
                OuSize::Poisson(l) => (SizeMode::PoissonEstimated, Some(l)),
            };
            let fam = OuFamily::new(design, mode);
            let mut space = fam.default_space(reference, lambda, lambda_range.unwrap_or(LambdaRange::DEFAULT))?;
            if let Some(st) = starts {
                let transformed = st
                    .iter()
                    .map(|s| space.from_natural(s))
                    .collect::<ecm::Result<Vec<_>>>()?;
                space = space.with_starts(transformed)?;
            }
            Ok((Family::Ou(fam), space))
        }
        FamilyConfig::Mixture { n, x0, starts } => {
            let fam = MixtureFamily::new(design, *n, *x0)?;
            let space = fam.default_space(starts)?;
            Ok((Family::Mixture(fam), space))
        }
    }
}

pub fn mean_total_count(counts: &CountArrangement) -> f64 {
    let n = counts.schedule().n();
    (0..n).map(|k| counts.total_at(k) as f64).sum::<f64>() / n as f64
}

/// Warning for MGLE on small counts.
pub fn mgle_warning(estimator: Estimator, mean_total: f64) -> Option<String> {
    (estimator == Estimator::Mgle && mean_total < MGLE_MIN_MEAN_COUNT).then(|| {
        format!(
            "MGLE is unreliable when the mean total count per survey time is below {MGLE_MIN_MEAN_COUNT} \
             (here {mean_total:.1}); prefer MCLE"
        )
    })
}

pub fn run(cfg: &FitConfig) -> Result<(), CliError> {
    let (design, counts) = read_counts(&cfg.data.counts, &cfg.data.times)?;
    let known = match &cfg.family {
        FamilyConfig::Ou { size: OuSize::Known(n), .. } | FamilyConfig::Mixture { n, .. } => Some(*n),
        _ => None,
    };
    if let Some(n) = known {
        counts.check_known_size(n)?;
    }
    let (family, space) = build_family(&cfg.family, design.clone())?;
    let mean_total = mean_total_count(&counts);
    let warnings: Vec<String> = mgle_warning(cfg.estimator, mean_total).into_iter().collect();
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let result = fit(cfg.estimator, &counts, family.model(), &space, &cfg.optimizer)?;
    let report = FitReport {
        estimator: cfg.estimator,
        family: cfg.family.clone(),
        design,
        mean_total_count: mean_total,
        space,
        warnings,
        result,
    };
    if let Some(parent) = cfg.output.fit.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_json(&cfg.output.fit, &report)?;
    let r = &report.result;
    for (name, v) in r.names.iter().zip(&r.natural) {
        println!("{name} = {v}");
    }
    if r.erratic {
        eprintln!(
            "warning: erratic fit (minimum Hessian eigenvalue {:e}); the bootstrap will refuse it",
            r.min_hessian_eigenvalue
        );
    }
    println!("wrote {}", cfg.output.fit.display());
    Ok(())
}
