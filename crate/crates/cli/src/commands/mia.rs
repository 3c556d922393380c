//! `poetry-dp mia`: the membership-inference evaluation. For each master
//! seed it mounts the utility-threshold attack against the noiseless
//! aggregate and against the private release path, and reports AUROC for
//! both (≈0.5 means the attacker does no better than guessing).

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use poetry_dp_core::evaluation::{mean_stderr, run_membership_attack, MiaConfig};
use poetry_dp_core::experts::{SyntheticTask, SyntheticTaskParams};

use crate::config::{ExperimentKind, ProviderConfig};
use crate::output::{csv_path, jsonl_path, to_jsonl, write_atomic};

use super::{io_run_err, load_config, resolve_out, CliError};

#[derive(Debug, Serialize)]
struct MiaRecord {
    config_hash: String,
    master_seed: u64,
    auroc_no_dp: f64,
    auroc_dp: f64,
    scores_no_dp: usize,
    scores_dp: usize,
}

pub fn cmd_mia(config_path: &Path, out_flag: Option<&Path>) -> Result<(), CliError> {
    let cfg = load_config(config_path, &[ExperimentKind::Mia], "mia")?;
    let out = resolve_out(out_flag, &cfg);
    let params = match &cfg.provider {
        ProviderConfig::Evidence { params } => {
            params.clone().unwrap_or_else(SyntheticTaskParams::membership)
        }
        _ => unreachable!("validated: mia uses the evidence provider"),
    };
    let task = SyntheticTask::new(params).map_err(|e| CliError::Usage(e.to_string()))?;
    let hash = cfg.content_hash();
    let mia_cfg = MiaConfig {
        seeds: cfg.queries_per_seed as u64,
        epsilon: cfg.epsilon,
        gamma: cfg.gamma,
        ..MiaConfig::default()
    };

    let mut records: Vec<MiaRecord> = cfg
        .seeds
        .par_iter()
        .map(|&master| {
            run_membership_attack(&task, &mia_cfg, master)
                .map(|o| MiaRecord {
                    config_hash: hash.clone(),
                    master_seed: master,
                    auroc_no_dp: o.auroc_no_dp,
                    auroc_dp: o.auroc_dp,
                    scores_no_dp: o.scores_no_dp,
                    scores_dp: o.scores_dp,
                })
                .map_err(|e| CliError::Run(e.to_string()))
        })
        .collect::<Result<_, _>>()?;
    records.sort_by_key(|r| r.master_seed);

    let jsonl = to_jsonl(&records).map_err(|e| io_run_err("encoding records", e))?;
    write_atomic(&jsonl_path(&out), &jsonl).map_err(|e| io_run_err("writing records", e))?;

    let no_dp: Vec<f64> = records.iter().map(|r| r.auroc_no_dp).collect();
    let dp: Vec<f64> = records.iter().map(|r| r.auroc_dp).collect();
    let mut csv = String::from("mechanism,mean_auroc,stderr\n");
    for (name, values) in [("no_dp", &no_dp), ("poe_dp", &dp)] {
        let (mean, se) = aggregate(values);
        csv.push_str(&format!("{name},{mean},{se}\n"));
    }
    write_atomic(&csv_path(&out), csv.as_bytes())
        .map_err(|e| io_run_err("writing summary", e))?;

    for r in &records {
        println!(
            "seed {}: attack AUROC {:.4} without noise, {:.4} under the private release",
            r.master_seed, r.auroc_no_dp, r.auroc_dp
        );
    }
    println!(
        "wrote {} runs to {} and summary to {}",
        records.len(),
        jsonl_path(&out).display(),
        csv_path(&out).display()
    );
    Ok(())
}

fn aggregate(values: &[f64]) -> (f64, f64) {
    if values.len() < 2 {
        return (values.first().copied().unwrap_or(f64::NAN), 0.0);
    }
    mean_stderr(values).expect("two or more values")
}
