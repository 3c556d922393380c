//! `poetry-dp converge`: the planted-view simulator's convergence study.
//! For each master seed it measures the median L1 distance between J-expert
//! aggregates and the infinite-ensemble limit across the J grid, and fits
//! the log-log slope (≈ −1/2 when the ensemble error shrinks as 1/√J).

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use poetry_dp_core::evaluation::convergence_experiment;
use poetry_dp_core::experts::planted::DEFAULT_LIMIT_MC;
use poetry_dp_core::experts::PlantedModel;

use crate::config::{ExperimentKind, ProviderConfig};
use crate::output::{csv_path, jsonl_path, to_jsonl, write_atomic};

use super::{io_run_err, load_config, resolve_out, CliError};

#[derive(Debug, Serialize)]
struct ConvergeRecord {
    config_hash: String,
    master_seed: u64,
    j: usize,
    median_l1: f64,
    /// Log-log slope fitted across the whole grid; repeated on each of the
    /// seed's rows (None when the fit is undefined).
    #[serde(skip_serializing_if = "Option::is_none")]
    slope: Option<f64>,
}

pub fn cmd_converge(config_path: &Path, out_flag: Option<&Path>) -> Result<(), CliError> {
    let cfg = load_config(config_path, &[ExperimentKind::Converge], "converge")?;
    let out = resolve_out(out_flag, &cfg);
    let model_seed = match cfg.provider {
        ProviderConfig::Planted { seed } => seed,
        _ => unreachable!("validated: converge uses the planted provider"),
    };
    let hash = cfg.content_hash();
    let model = PlantedModel::default_model(model_seed);

    let reports: Vec<(u64, poetry_dp_core::evaluation::ConvergenceReport)> = cfg
        .seeds
        .par_iter()
        .map(|&master| {
            let report = convergence_experiment(
                &model,
                &cfg.j,
                cfg.queries_per_seed,
                DEFAULT_LIMIT_MC,
                master,
            );
            report.map(|r| (master, r)).map_err(|e| CliError::Usage(e.to_string()))
        })
        .collect::<Result<_, _>>()?;

    let mut records = Vec::new();
    for (master, report) in &reports {
        for &(j, median_l1) in &report.points {
            records.push(ConvergeRecord {
                config_hash: hash.clone(),
                master_seed: *master,
                j,
                median_l1,
                slope: report.slope,
            });
        }
    }
    records.sort_by(|a, b| (a.master_seed, a.j).cmp(&(b.master_seed, b.j)));

    let jsonl = to_jsonl(&records).map_err(|e| io_run_err("encoding records", e))?;
    write_atomic(&jsonl_path(&out), &jsonl).map_err(|e| io_run_err("writing records", e))?;

    let mut csv = String::from("master_seed,j,median_l1,slope\n");
    for r in &records {
        let slope = r.slope.map(|s| format!("{s}")).unwrap_or_default();
        csv.push_str(&format!("{},{},{},{}\n", r.master_seed, r.j, r.median_l1, slope));
    }
    write_atomic(&csv_path(&out), csv.as_bytes())
        .map_err(|e| io_run_err("writing summary", e))?;

    for (master, report) in &reports {
        match report.slope {
            Some(s) => println!("seed {master}: fitted log-log slope {s:.4}"),
            None => println!("seed {master}: slope undefined for this grid"),
        }
    }
    println!(
        "wrote {} points to {} and summary to {}",
        records.len(),
        jsonl_path(&out).display(),
        csv_path(&out).display()
    );
    Ok(())
}
