//! `poetry-dp run`: the classify/generate/pbs experiment sweep. Produces one
//! result record per (mode, J, seed, query), a JSONL dump of all of them,
//! and a CSV accuracy summary.

use std::path::Path;

use rayon::prelude::*;

use poetry_dp_core::engine::{classify, generate, pbs_classify, GenerateOptions, InferenceMode};
use poetry_dp_core::mechanisms::ClipMode;
use poetry_dp_core::rng::{derive_stream, RngStream};
use poetry_dp_core::types::{ExpertSet, PrivacyBudget};

use crate::config::{ExperimentKind, RunConfig};
use crate::output::{
    csv_path, jsonl_path, summarize, summary_csv, to_jsonl, write_atomic, ResultRecord,
};
use crate::providers::{mode_tag, BuiltProvider, TAG_MECHANISM, TAG_PBS};

use super::{io_run_err, load_config, resolve_out, CliError};

pub fn cmd_run(config_path: &Path, out_flag: Option<&Path>) -> Result<(), CliError> {
    let cfg = load_config(
        config_path,
        &[ExperimentKind::Classify, ExperimentKind::Generate, ExperimentKind::Pbs],
        "run",
    )?;
    let out = resolve_out(out_flag, &cfg);
    let provider = BuiltProvider::build(&cfg, std::env::var("POETRY_DP_ENDPOINT").ok())
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let records = execute(&cfg, &provider)?;

    let jsonl = to_jsonl(&records).map_err(|e| io_run_err("encoding records", e))?;
    write_atomic(&jsonl_path(&out), &jsonl).map_err(|e| io_run_err("writing records", e))?;
    let summary = summary_csv(&summarize(&records))
        .map_err(|e| io_run_err("encoding summary", e))?;
    write_atomic(&csv_path(&out), &summary).map_err(|e| io_run_err("writing summary", e))?;

    let failed = records.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        eprintln!("warning: {failed}/{} records failed", records.len());
    }
    if failed as f64 > 0.05 * records.len() as f64 {
        return Err(CliError::Run(format!(
            "{failed}/{} records failed (more than 5%)",
            records.len()
        )));
    }
    println!(
        "wrote {} records to {} and summary to {}",
        records.len(),
        jsonl_path(&out).display(),
        csv_path(&out).display()
    );
    Ok(())
}

/// Runs the full sweep; parallel over seeds, deterministic regardless of
/// worker count because every random stream is addressed by
/// (seed, tag, j, mode, query) and records are sorted before writing.
pub fn execute(cfg: &RunConfig, provider: &BuiltProvider) -> Result<Vec<ResultRecord>, CliError> {
    let hash = cfg.content_hash();
    let max_j = *cfg.j.iter().max().expect("validated: j non-empty");

    // Calibrate once up front: infeasible budgets are config errors, not
    // per-record failures.
    let dp_budget = budget_for(cfg, true)?;
    let free_budget = PrivacyBudget::nonprivate(cfg.gamma);
    let pbs_budget = budget_for(cfg, false)?;

    let modes: Vec<InferenceMode> = match cfg.kind {
        ExperimentKind::Pbs => vec![InferenceMode::PbsDp],
        _ => cfg.modes.clone(),
    };

    let mut records: Vec<ResultRecord> = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, provider, &hash, seed, max_j, &modes, &dp_budget, &free_budget, &pbs_budget))
        .collect::<Result<Vec<Vec<ResultRecord>>, CliError>>()?
        .into_iter()
        .flatten()
        .collect();

    records.sort_by(|a, b| {
        (a.mode.as_str(), a.j, a.seed, a.query_id).cmp(&(b.mode.as_str(), b.j, b.seed, b.query_id))
    });
    Ok(records)
}

#[allow(clippy::too_many_arguments)]
fn run_seed(
    cfg: &RunConfig,
    provider: &BuiltProvider,
    hash: &str,
    seed: u64,
    max_j: usize,
    modes: &[InferenceMode],
    dp_budget: &PrivacyBudget,
    free_budget: &PrivacyBudget,
    pbs_budget: &PrivacyBudget,
) -> Result<Vec<ResultRecord>, CliError> {
    let examples = provider.sample_context(seed, max_j);
    let expert = provider.expert();
    let opts = GenerateOptions { clip_mode: ClipMode::Clamp, audit: cfg.audit };
    let mut out = Vec::with_capacity(cfg.j.len() * cfg.queries_per_seed * modes.len());

    for &j in &cfg.j {
        let set = ExpertSet::new(examples[..j].to_vec(), cfg.group_size)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        for query_id in 0..cfg.queries_per_seed {
            let (query, truth) = provider.sample_query(seed, query_id);
            for &mode in modes {
                let mut rec = base_record(cfg, hash, seed, query_id, mode, j);
                if mode == InferenceMode::PbsDp {
                    let pbs = cfg.pbs.clone().unwrap_or_default();
                    let mut rng = RngStream::new(
                        seed,
                        derive_stream(&[TAG_PBS, j as u64, query_id as u64]),
                    );
                    match pbs_classify(&query, &set, expert, pbs_budget, &pbs, &opts, &mut rng)
                    {
                        Ok(o) => {
                            rec.tokens = vec![o.token];
                            rec.surfaces = vec![surface(provider, o.token)];
                            rec.correct = truth.map(|t| o.token == t);
                            rec.expert_calls = o.expert_calls;
                            rec.sigma = Some(o.calibration.round_epsilon);
                            rec.epsilon_spent = Some(o.calibration.achieved_epsilon);
                        }
                        Err(e) => rec.error = Some(e.to_string()),
                    }
                } else {
                    let budget = if mode.is_dp() { dp_budget } else { free_budget };
                    let stream =
                        derive_stream(&[TAG_MECHANISM, j as u64, mode_tag(mode), query_id as u64]);
                    let mut rng = RngStream::new(seed, stream);
                    let result = if cfg.kind == ExperimentKind::Classify {
                        classify(&query, &set, expert, budget, mode, &opts, &mut rng)
                    } else {
                        generate(&query, &set, expert, budget, mode, cfg.t_max, &opts, &mut rng)
                    };
                    match result {
                        Ok(g) => {
                            rec.surfaces =
                                g.tokens.iter().map(|&t| surface(provider, t)).collect();
                            rec.correct = match truth {
                                Some(t) if cfg.t_max == 1 && !g.tokens.is_empty() => {
                                    Some(g.tokens[0] == t)
                                }
                                _ => None,
                            };
                            rec.tokens = g.tokens;
                            rec.expert_calls = g.expert_calls;
                            rec.sigma = if mode.is_dp() { budget.sigma } else { None };
                            rec.epsilon_spent = g.epsilon_spent;
                            rec.audit = g.audit_utilities.map(|us| {
                                us.into_iter().map(|u| u.values).collect()
                            });
                        }
                        Err(e) => rec.error = Some(e.to_string()),
                    }
                }
                out.push(rec);
            }
        }
    }
    Ok(out)
}

fn base_record(
    cfg: &RunConfig,
    hash: &str,
    seed: u64,
    query_id: usize,
    mode: InferenceMode,
    j: usize,
) -> ResultRecord {
    ResultRecord {
        config_hash: hash.to_string(),
        seed,
        query_id,
        mode: mode.as_str().to_string(),
        j,
        tokens: Vec::new(),
        surfaces: Vec::new(),
        correct: None,
        expert_calls: 0,
        epsilon: cfg.epsilon,
        delta: cfg.delta,
        sigma: None,
        epsilon_spent: None,
        audit: None,
        error: None,
    }
}

/// Builds the run's DP budget. `calibrate` picks per-token σ for the
/// exponential-mechanism modes; the subsampled-voting mode calibrates its
/// own per-round split later and only needs the raw (ε, δ) envelope.
fn budget_for(cfg: &RunConfig, calibrate: bool) -> Result<PrivacyBudget, CliError> {
    let budget = PrivacyBudget::new(
        cfg.epsilon,
        cfg.delta,
        cfg.t_max,
        cfg.gamma,
        cfg.composition_mode(),
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    if calibrate {
        budget.calibrated().map_err(|e| CliError::Usage(e.to_string()))
    } else {
        Ok(budget)
    }
}

fn surface(provider: &BuiltProvider, token: usize) -> String {
    provider
        .expert()
        .vocabulary()
        .surface(token)
        .map(str::to_owned)
        .unwrap_or_else(|_| format!("<token {token}>"))
}
