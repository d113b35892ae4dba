use ecm::inference::{parametric_bootstrap, DEFAULT_OVERDRAW};
use ecm::io::{atomic_write, read_json, write_json};

use crate::config::BootstrapConfig;
use crate::fit::{build_family, FitReport};
use crate::tables::{csv_string, exact, markdown, num};
use crate::CliError;

pub fn run(cfg: &BootstrapConfig) -> Result<(), CliError> {
    let report: FitReport = read_json(&cfg.fit)?;
    if report.result.erratic {
        return Err(CliError::Numerical(format!(
            "{} holds an erratic fit (minimum Hessian eigenvalue {:e})",
            cfg.fit.display(),
            report.result.min_hessian_eigenvalue
        )));
    }
    let (family, _) = build_family(&report.family, report.design.clone())?;
    let res = parametric_bootstrap(
        &report.result,
        report.estimator,
        family.model(),
        &report.space,
        cfg.n,
        cfg.overdraw.unwrap_or(DEFAULT_OVERDRAW),
        cfg.seed,
        &cfg.optimizer,
    )?;
    if let Some(w) = &res.warning {
        eprintln!("warning: {w}");
    }
    if let Some(parent) = cfg.output.json.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_json(&cfg.output.json, &res)?;

    let rows: Vec<(String, f64, Option<[f64; 2]>)> = res
        .names
        .iter()
        .zip(&report.result.natural)
        .zip(&res.intervals)
        .map(|((n, &v), iv)| (n.clone(), v, *iv))
        .collect();
    if let Some(path) = &cfg.output.csv {
        let body: Vec<Vec<String>> = rows
            .iter()
            .map(|(n, v, iv)| {
                let [lo, hi] = iv.map_or([f64::NAN; 2], |x| x);
                vec![n.clone(), exact(*v), exact(lo), exact(hi)]
            })
            .collect();
        atomic_write(path, csv_string(&["parameter", "estimate", "lower", "upper"], &body)?.as_bytes())?;
    }
    if let Some(path) = &cfg.output.markdown {
        let body: Vec<Vec<String>> = rows
            .iter()
            .map(|(n, v, iv)| {
                let ci = iv.map_or(String::from("n/a"), |[lo, hi]| format!("[{}, {}]", num(lo), num(hi)));
                vec![n.clone(), num(*v), ci]
            })
            .collect();
        let title = format!("{:.0}% bootstrap CI", 100.0 * res.confidence);
        let mut md = markdown(&["parameter", "estimate", &title], &body);
        md.push_str(&format!(
            "\n{} of {} requested replicates retained ({} attempted, {} erratic, {} failed).\n",
            res.n_retained, res.n_requested, res.n_attempted, res.n_erratic, res.n_failed
        ));
        atomic_write(path, md.as_bytes())?;
    }
    println!(
        "retained {} of {} bootstrap replicates; wrote {}",
        res.n_retained,
        res.n_requested,
        cfg.output.json.display()
    );
    Ok(())
}
