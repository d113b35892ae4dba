use std::path::PathBuf;

use ecm::ecm::PopulationSize;
use ecm::io::{atomic_write, times_csv, counts_csv, write_json};
use ecm::movement::MovementModel;
use ecm::simulate::{locators, simulate_counts, stream_rng};
use serde::Serialize;

use crate::config::SimulateConfig;
use crate::CliError;

#[derive(Serialize)]
struct Metadata<'a> {
    command: &'static str,
    seed: u64,
    model: &'a MovementModel,
    size: PopulationSize,
    replicates: usize,
    design: &'static str,
    times: &'static str,
    counts: Vec<String>,
    realized_n: Vec<u64>,
    explorers: Vec<Option<u64>>,
}

/// Counts file name of replicate `r`; replicate `r` uses random stream `r`.
pub fn counts_name(r: usize) -> String {
    format!("counts_{r:04}.csv")
}

pub fn run(cfg: &SimulateConfig) -> Result<(), CliError> {
    cfg.model.validate()?;
    cfg.size.validate()?;
    let design = cfg.design.resolve(cfg.seed)?;
    let dir: &PathBuf = &cfg.output.dir;
    std::fs::create_dir_all(dir)?;
    write_json(&dir.join("design.json"), &design)?;
    atomic_write(&dir.join("times.csv"), times_csv(&design).as_bytes())?;
    let locs = locators(&design);
    let mut meta = Metadata {
        command: "simulate",
        seed: cfg.seed,
        model: &cfg.model,
        size: cfg.size,
        replicates: cfg.replicates,
        design: "design.json",
        times: "times.csv",
        counts: Vec::new(),
        realized_n: Vec::new(),
        explorers: Vec::new(),
    };
    for r in 0..cfg.replicates {
        let out = simulate_counts(&cfg.model, &design, &locs, cfg.size, &mut stream_rng(cfg.seed, r as u64))?;
        let name = counts_name(r);
        atomic_write(&dir.join(&name), counts_csv(&design, &out.counts)?.as_bytes())?;
        meta.counts.push(name);
        meta.realized_n.push(out.realized_n);
        meta.explorers.push(out.explorers);
    }
    write_json(&dir.join("metadata.json"), &meta)?;
    println!(
        "wrote {} arrangement(s) over {} survey times to {}",
        cfg.replicates,
        design.n(),
        dir.display()
    );
    Ok(())
}
