//! `poetry-dp calibrate`: flag-driven noise calibration. Prints the largest
//! per-token σ whose composed total stays inside the requested (ε, δ) over T
//! tokens, plus the accountant's own audit trail.

use poetry_dp_core::accounting::{calibrate_sigma, CompositionMode, ADVANCED_COMPOSITION_FORMULA};

use super::CliError;

pub fn cmd_calibrate(
    epsilon: f64,
    delta: f64,
    tokens: usize,
    mode: &str,
) -> Result<(), CliError> {
    let composition = match mode {
        "naive" => CompositionMode::Naive,
        "advanced" => CompositionMode::Advanced,
        other => {
            return Err(CliError::Usage(format!(
                "unknown composition mode `{other}` (expected `naive` or `advanced`)"
            )))
        }
    };
    if tokens == 0 {
        return Err(CliError::Usage("--tokens must be at least 1".into()));
    }
    if composition == CompositionMode::Advanced && !(delta > 0.0 && delta < 1.0) {
        return Err(CliError::Usage(format!(
            "advanced composition needs delta in (0, 1), got {delta}"
        )));
    }
    if !(delta >= 0.0 && delta < 1.0) {
        return Err(CliError::Usage(format!("delta must be in [0, 1), got {delta}")));
    }
    let result = calibrate_sigma(epsilon, delta, tokens, composition)
        .map_err(|e| CliError::Usage(e.to_string()))?;

    println!("sigma = {:.15}", result.sigma);
    println!("achieved_epsilon = {:.15}", result.achieved_epsilon);
    println!("residual = {:.3e}", result.residual);
    println!("iterations = {}", result.iterations);
    match composition {
        CompositionMode::Advanced => println!("bound: {ADVANCED_COMPOSITION_FORMULA}"),
        CompositionMode::Naive => println!("bound: ε = Tσ"),
    }
    Ok(())
}
