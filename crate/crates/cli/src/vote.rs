use ecm::inference::{BootstrapResult, FitResult, DEFAULT_OVERDRAW};
use ecm::io::{atomic_write, read_district_file, write_json};
use ecm::simulate::stream_rng;
use ecm::vote::{default_labels, fit_transfer, markdown_table, transfer_bootstrap, TransitionMatrix, M2};
use serde::Serialize;

use crate::config::{Labels, VoteConfig};
use crate::tables::{csv_string, exact};
use crate::CliError;

/// Stream of the random fit starts; bootstrap replicates use streams from 0.
const START_STREAM: u64 = u64::MAX;

#[derive(Serialize)]
struct VoteReport<'a> {
    sources: &'a [String],
    destinations: &'a [String],
    /// Rows are first-round options, columns second-round options.
    matrix: &'a TransitionMatrix,
    /// Row-major intervals matching `matrix`; absent without bootstrap.
    intervals: Option<&'a [Option<[f64; 2]>]>,
    fit: &'a FitResult,
    skipped_districts: &'a [String],
    bootstrap: Option<&'a BootstrapResult>,
}

pub fn run(cfg: &VoteConfig) -> Result<(), CliError> {
    let districts = read_district_file(&cfg.districts)?;
    let m1 = districts[0].first_round.len();
    let Labels { sources, destinations } = cfg.labels.clone().unwrap_or_else(|| {
        let (s, d) = default_labels(m1);
        Labels {
            sources: s,
            destinations: d,
        }
    });
    if sources.len() != m1 || destinations.len() != M2 {
        return Err(CliError::Config(format!(
            "labels need {m1} sources and {M2} destinations, got {} and {}",
            sources.len(),
            destinations.len()
        )));
    }
    let fit = fit_transfer(&districts, cfg.starts, &mut stream_rng(cfg.seed, START_STREAM), &cfg.optimizer)?;
    for id in &fit.skipped_districts {
        eprintln!("warning: district {id} has a singular covariance at the estimate and was left out");
    }
    let boot = if cfg.bootstrap > 0 {
        if fit.fit.erratic {
            return Err(CliError::Numerical(format!(
                "erratic transfer fit (minimum Hessian eigenvalue {:e}); no bootstrap",
                fit.fit.min_hessian_eigenvalue
            )));
        }
        let b = transfer_bootstrap(
            &fit,
            &districts,
            cfg.bootstrap,
            cfg.overdraw.unwrap_or(DEFAULT_OVERDRAW),
            cfg.seed,
            &cfg.optimizer,
        )?;
        if let Some(w) = &b.warning {
            eprintln!("warning: {w}");
        }
        Some(b)
    } else {
        None
    };
    let intervals = boot.as_ref().map(|b| b.intervals.as_slice());
    let report = VoteReport {
        sources: &sources,
        destinations: &destinations,
        matrix: &fit.matrix,
        intervals,
        fit: &fit.fit,
        skipped_districts: &fit.skipped_districts,
        bootstrap: boot.as_ref(),
    };
    if let Some(parent) = cfg.output.json.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_json(&cfg.output.json, &report)?;
    let md = markdown_table(&fit.matrix, intervals, &sources, &destinations)?;
    if let Some(path) = &cfg.output.markdown {
        atomic_write(path, md.as_bytes())?;
    }
    if let Some(path) = &cfg.output.csv {
        let mut rows = Vec::new();
        for (l, s) in sources.iter().enumerate() {
            for (j, d) in destinations.iter().enumerate() {
                let [lo, hi] = intervals.and_then(|iv| iv[l * M2 + j]).unwrap_or([f64::NAN; 2]);
                rows.push(vec![s.clone(), d.clone(), exact(fit.matrix.get(l, j)), exact(lo), exact(hi)]);
            }
        }
        atomic_write(path, csv_string(&["source", "destination", "estimate", "lower", "upper"], &rows)?.as_bytes())?;
    }
    print!("{md}");
    Ok(())
}
