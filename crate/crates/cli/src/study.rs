//! Replicated simulate-and-fit studies of the steady-state OU family.
//!
//! Every setting is a (size, estimator) pair. Replicate `r` of a size draws
//! the same counts for every estimator, so estimators are compared on common
//! data. Results are rewritten atomically after each batch; `--resume` keeps
//! the replicates already present, which reproduces a fresh run exactly.

use std::collections::BTreeMap;
use std::path::Path;

use ecm::ecm::PopulationSize;
use ecm::inference::{
    summarize, Estimator, LambdaRange, OuFamily, ParamSpace, ReplicateRecord, SizeMode, StudySummary, Transform,
};
use ecm::io::atomic_write;
use ecm::simulate::stream_rng;
use rand::RngCore;
use rayon::prelude::*;

use crate::config::{size_label, StudyConfig};
use crate::tables::{csv_string, exact, markdown};
use crate::CliError;

pub const RESULTS_HEADER: [&str; 10] = [
    "size",
    "estimator",
    "replicate",
    "parameter",
    "estimate",
    "truth",
    "objective",
    "min_hessian_eigenvalue",
    "erratic",
    "error",
];

struct SizeSetup {
    label: String,
    family: OuFamily,
    space: ParamSpace,
    truth_natural: Vec<f64>,
    truth_transformed: Vec<f64>,
    names: Vec<String>,
    seed: u64,
}

struct Setting {
    size: usize,
    estimator: Estimator,
}

/// Lower-case estimator name, as spelled in configuration files.
fn estimator_key(e: Estimator) -> String {
    e.to_string().to_lowercase()
}

fn estimation_names(space: &ParamSpace) -> Vec<String> {
    space
        .names
        .iter()
        .zip(&space.transforms)
        .map(|(n, t)| match t {
            Transform::Log => format!("log_{n}"),
            Transform::Logit => format!("logit_{n}"),
            _ => n.clone(),
        })
        .collect()
}

fn setup(cfg: &StudyConfig, design: &ecm::movement::SurveyDesign) -> Result<Vec<SizeSetup>, CliError> {
    let range = cfg.lambda_range.unwrap_or(LambdaRange::DEFAULT);
    cfg.sizes
        .iter()
        .enumerate()
        .map(|(i, size)| {
            size.validate()?;
            let (mode, lambda) = match *size {
                PopulationSize::Known(n) => (SizeMode::Known(n), None),
                PopulationSize::PoissonRate(l) => (SizeMode::PoissonEstimated, Some(l)),
            };
            let family = OuFamily::new(design.clone(), mode);
            let space = family.default_space(&cfg.truth, lambda, range)?;
            let truth_natural = family.natural_of(&cfg.truth, lambda)?;
            let truth_transformed = space.from_natural(&truth_natural)?;
            let names = estimation_names(&space);
            // independent data streams per size
            let seed = stream_rng(cfg.seed, u64::MAX - 1 - i as u64).next_u64();
            Ok(SizeSetup {
                label: size_label(size),
                family,
                space,
                truth_natural,
                truth_transformed,
                names,
                seed,
            })
        })
        .collect()
}

fn result_rows(setups: &[SizeSetup], settings: &[Setting], done: &BTreeMap<(usize, u64), ReplicateRecord>) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for ((s, r), rec) in done {
        let st = &settings[*s];
        let su = &setups[st.size];
        for (j, name) in su.names.iter().enumerate() {
            rows.push(vec![
                su.label.clone(),
                estimator_key(st.estimator),
                r.to_string(),
                name.clone(),
                rec.transformed.get(j).map_or(String::new(), |v| exact(*v)),
                exact(su.truth_transformed[j]),
                exact(rec.objective),
                exact(rec.min_hessian_eigenvalue),
                rec.erratic.to_string(),
                rec.error.clone().unwrap_or_default(),
            ]);
        }
    }
    rows
}

/// Records of complete replicates in an existing results file.
fn read_previous(
    path: &Path,
    setups: &[SizeSetup],
    settings: &[Setting],
) -> Result<BTreeMap<(usize, u64), ReplicateRecord>, CliError> {
    let mut out = BTreeMap::new();
    if !path.exists() {
        return Ok(out);
    }
    let mut rdr = csv::Reader::from_path(path)?;
    if rdr.headers()?.iter().collect::<Vec<_>>() != RESULTS_HEADER {
        return Err(CliError::Config(format!("{}: unexpected header, cannot resume", path.display())));
    }
    let parse = |s: &str| -> f64 { if s.is_empty() { f64::NAN } else { s.parse().unwrap_or(f64::NAN) } };
    let mut groups: BTreeMap<(usize, u64), Vec<csv::StringRecord>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let setting = settings.iter().position(|st| {
            setups[st.size].label == rec[0] && estimator_key(st.estimator) == rec[1]
        });
        let (Some(s), Ok(r)) = (setting, rec[2].parse::<u64>()) else {
            continue;
        };
        groups.entry((s, r)).or_default().push(rec);
    }
    for ((s, r), recs) in groups {
        let su = &setups[settings[s].size];
        if recs.len() != su.names.len() || recs.iter().zip(&su.names).any(|(x, n)| &x[3] != n) {
            continue;
        }
        let error = (!recs[0][9].is_empty()).then(|| recs[0][9].to_string());
        out.insert(
            (s, r),
            ReplicateRecord {
                replicate: r,
                estimator: settings[s].estimator,
                transformed: if error.is_some() { Vec::new() } else { recs.iter().map(|x| parse(&x[4])).collect() },
                objective: parse(&recs[0][6]),
                min_hessian_eigenvalue: parse(&recs[0][7]),
                erratic: &recs[0][8] == "true",
                error,
            },
        );
    }
    Ok(out)
}

fn fmt3(v: f64) -> String {
    if v.is_nan() {
        "n/a".into()
    } else {
        format!("{v:.3}")
    }
}

fn write_summaries(
    dir: &Path,
    setups: &[SizeSetup],
    settings: &[Setting],
    done: &BTreeMap<(usize, u64), ReplicateRecord>,
) -> Result<(), CliError> {
    let mut csv_rows = Vec::new();
    let mut summaries: Vec<StudySummary> = Vec::new();
    for (s, st) in settings.iter().enumerate() {
        let su = &setups[st.size];
        let recs: Vec<ReplicateRecord> = done.range((s, 0)..=(s, u64::MAX)).map(|(_, r)| r.clone()).collect();
        let sum = summarize(&recs, &su.names, &su.truth_transformed);
        for row in &sum.rows {
            csv_rows.push(vec![
                su.label.clone(),
                estimator_key(st.estimator),
                row.parameter.clone(),
                row.n.to_string(),
                exact(row.truth),
                exact(row.mean),
                exact(row.bias),
                exact(row.rmse),
                sum.n_replicates.to_string(),
                sum.n_erratic.to_string(),
                sum.n_failed.to_string(),
            ]);
        }
        summaries.push(sum);
    }
    let header = [
        "size", "estimator", "parameter", "n", "truth", "mean", "bias", "rmse", "replicates", "erratic", "failed",
    ];
    atomic_write(&dir.join("summary.csv"), csv_string(&header, &csv_rows)?.as_bytes())?;

    // one column per setting, "mean (bias) / rmse" cells
    let titles: Vec<String> = settings
        .iter()
        .map(|st| format!("{} {}", st.estimator.to_string().to_uppercase(), setups[st.size].label))
        .collect();
    let mut header: Vec<&str> = vec!["parameter"];
    header.extend(titles.iter().map(String::as_str));
    let mut params: Vec<String> = Vec::new();
    for su in setups {
        for n in &su.names {
            if !params.contains(n) {
                params.push(n.clone());
            }
        }
    }
    let mut rows: Vec<Vec<String>> = params
        .iter()
        .map(|p| {
            let mut row = vec![p.clone()];
            for sum in &summaries {
                row.push(sum.rows.iter().find(|r| &r.parameter == p).map_or(String::new(), |r| {
                    format!("{} ({}) / {}", fmt3(r.mean), fmt3(r.bias), fmt3(r.rmse))
                }));
            }
            row
        })
        .collect();
    let mut counts = vec!["erratic / failed / replicates".to_string()];
    counts.extend(summaries.iter().map(|s| format!("{} / {} / {}", s.n_erratic, s.n_failed, s.n_replicates)));
    rows.push(counts);
    let mut md = markdown(&header, &rows);
    md.push_str("\nCells: mean (bias) / RMSE on the estimation scale over non-erratic, successful fits.\n");
    atomic_write(&dir.join("summary.md"), md.as_bytes())?;
    Ok(())
}

pub fn run(cfg: &StudyConfig, jobs: Option<usize>, resume: bool) -> Result<(), CliError> {
    cfg.truth.validate()?;
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir)?;
    let results = dir.join("results.csv");
    let settings: Vec<Setting> = (0..cfg.sizes.len())
        .flat_map(|size| cfg.estimators.iter().map(move |&estimator| Setting { size, estimator }))
        .collect();
    let setups = if settings.is_empty() {
        Vec::new()
    } else {
        let design = cfg.design.resolve(cfg.seed)?;
        ecm::io::write_json(&dir.join("design.json"), &design)?;
        setup(cfg, &design)?
    };
    let mut done = if resume {
        read_previous(&results, &setups, &settings)?
    } else {
        BTreeMap::new()
    };
    done.retain(|(_, r), _| (*r as usize) < cfg.replicates);
    let todo: Vec<(usize, u64)> = (0..settings.len())
        .flat_map(|s| (0..cfg.replicates as u64).map(move |r| (s, r)))
        .filter(|k| !done.contains_key(k))
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder.build().map_err(|e| CliError::Config(e.to_string()))?;
    let batch = 2 * pool.current_num_threads().max(2);
    let write = |done: &BTreeMap<(usize, u64), ReplicateRecord>| -> Result<(), CliError> {
        atomic_write(&results, csv_string(&RESULTS_HEADER, &result_rows(&setups, &settings, done))?.as_bytes())?;
        Ok(())
    };
    write(&done)?;
    for chunk in todo.chunks(batch) {
        let recs: Vec<((usize, u64), ReplicateRecord)> = pool.install(|| {
            chunk
                .par_iter()
                .map(|&(s, r)| {
                    let st = &settings[s];
                    let su = &setups[st.size];
                    let rec = ReplicateRecord::run(
                        &su.family,
                        &su.truth_natural,
                        st.estimator,
                        &su.space,
                        su.seed,
                        r,
                        &cfg.optimizer,
                    );
                    ((s, r), rec)
                })
                .collect()
        });
        for (k, rec) in recs {
            if let Some(e) = &rec.error {
                eprintln!("warning: replicate {} of {} failed: {e}", k.1, setups[settings[k.0].size].label);
            }
            done.insert(k, rec);
        }
        write(&done)?;
    }
    write_summaries(dir, &setups, &settings, &done)?;
    println!(
        "{} settings x {} replicates; results in {}",
        settings.len(),
        cfg.replicates,
        dir.display()
    );
    Ok(())
}
