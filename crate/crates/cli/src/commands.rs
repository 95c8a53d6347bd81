//! Implementations of the `analytic`, `solve`, and `simulate`
//! subcommands: load the experiment file, call into the library, and
//! present the results as text, CSV, or JSON.

use std::fs::File;
use std::io::Write as IoWrite;
use std::path::Path;

use serde::Serialize;

use ontime_core::analytics::{
    expected_on_time_count, prob_mth_on_time, prob_on_time_with_repeats, repeat_ccdf,
};
use ontime_core::montecarlo::{replicate, SimResult, TransmissionMode};
use ontime_core::solver::{
    expected_reward_scheduled, value_iteration, Policy, PolicyIoError, SolveError,
};
use ontime_core::Action;

use crate::config::{AnalyticSection, ExperimentConfig};
use crate::CliError;

/// Schema tag for analytic CSV output.
pub const ANALYTIC_SCHEMA: &str = "analytic/v1";

fn io_err(context: &str, e: std::io::Error) -> CliError {
    CliError::Io(format!("{context}: {e}"))
}

fn create(path: &Path) -> Result<File, CliError> {
    File::create(path).map_err(|e| io_err(&format!("creating {}", path.display()), e))
}

fn map_solve_error(e: SolveError) -> CliError {
    match e {
        SolveError::NotConverged { .. } => CliError::Convergence(e.to_string()),
        other => CliError::Validation(format!("solver: {other}")),
    }
}

fn map_policy_error(context: &str, e: PolicyIoError) -> CliError {
    match e {
        PolicyIoError::Io(inner) => CliError::Io(format!("{context}: {inner}")),
        other => CliError::Config(format!("{context}: {other}")),
    }
}

/// One computed analytic value.
#[derive(Debug, Clone, Serialize)]
pub struct AnalyticRow {
    /// Value of the swept variable, when a sweep is active.
    pub sweep_value: Option<f64>,
    /// Series name: `per_packet`, `expected_count`, `rate`, or `ccdf`.
    pub series: String,
    /// Retransmission budget for `ccdf` rows.
    pub budget: Option<u32>,
    /// Packet index or deadline offset.
    pub x: i64,
    /// The computed probability or count.
    pub value: f64,
}

/// Full `analytic` output.
#[derive(Debug, Clone, Serialize)]
pub struct AnalyticReport {
    /// Which quantity was computed.
    pub quantity: String,
    /// All computed rows, sweep-major.
    pub rows: Vec<AnalyticRow>,
}

fn analytic_rows(
    config: &ExperimentConfig,
    section: &AnalyticSection,
    sweep_value: Option<f64>,
) -> Result<Vec<AnalyticRow>, CliError> {
    let p = config.success_probability()?;
    let spec = config.spec()?;
    let mut rows = Vec::new();
    match section.quantity.as_str() {
        "per_packet" => {
            for m in 1..=section.packets {
                rows.push(AnalyticRow {
                    sweep_value,
                    series: "per_packet".into(),
                    budget: None,
                    x: m as i64,
                    value: prob_mth_on_time(p, spec, m),
                });
            }
            let count = expected_on_time_count(p, spec, section.packets);
            rows.push(AnalyticRow {
                sweep_value,
                series: "expected_count".into(),
                budget: None,
                x: section.packets as i64,
                value: count,
            });
            rows.push(AnalyticRow {
                sweep_value,
                series: "rate".into(),
                budget: None,
                x: section.packets as i64,
                value: count / section.packets as f64,
            });
        }
        "expected_count" => {
            for m in 1..=section.packets {
                rows.push(AnalyticRow {
                    sweep_value,
                    series: "expected_count".into(),
                    budget: None,
                    x: m as i64,
                    value: expected_on_time_count(p, spec, m),
                });
            }
        }
        "repeat_ccdf" => {
            for &budget in &section.repeat_budgets {
                for j in section.deviation_min..=section.deviation_max {
                    rows.push(AnalyticRow {
                        sweep_value,
                        series: "ccdf".into(),
                        budget: Some(budget),
                        x: j,
                        value: repeat_ccdf(p, spec, budget, j),
                    });
                }
            }
        }
        other => unreachable!("validated quantity '{other}'"),
    }
    Ok(rows)
}

/// The `analytic` subcommand.
pub fn analytic(config_path: &Path, out: Option<&Path>, json: bool) -> Result<(), CliError> {
    let config = ExperimentConfig::from_path(config_path)?;
    let section = config.analytic.clone().unwrap_or(AnalyticSection {
        quantity: "per_packet".into(),
        packets: 30,
        repeat_budgets: vec![0, 1, 5, 20],
        deviation_min: -20,
        deviation_max: 20,
    });

    let mut rows = Vec::new();
    match &config.sweep {
        Some(sweep) => {
            for &value in &sweep.values {
                let derived = config.with_sweep_value(&sweep.variable, value)?;
                rows.extend(analytic_rows(&derived, &section, Some(value))?);
            }
        }
        None => rows.extend(analytic_rows(&config, &section, None)?),
    }
    let report = AnalyticReport { quantity: section.quantity.clone(), rows };

    if let Some(path) = out {
        let mut file = create(path)?;
        let ctx = || format!("writing {}", path.display());
        writeln!(file, "# schema={ANALYTIC_SCHEMA}").map_err(|e| io_err(&ctx(), e))?;
        writeln!(file, "sweep_value,series,budget,x,value").map_err(|e| io_err(&ctx(), e))?;
        for row in &report.rows {
            let sweep = row.sweep_value.map(|v| v.to_string()).unwrap_or_default();
            let budget = row.budget.map(|b| b.to_string()).unwrap_or_default();
            writeln!(file, "{sweep},{},{budget},{},{}", row.series, row.x, row.value)
                .map_err(|e| io_err(&ctx(), e))?;
        }
    }

    if json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        let p = config.success_probability()?;
        let spec = config.spec()?;
        println!(
            "analytic {} at p = {:.6}, T = {}, δ = {}",
            report.quantity,
            p.value(),
            spec.target_interval(),
            spec.delta()
        );
        match section.quantity.as_str() {
            "repeat_ccdf" => {
                for &budget in &section.repeat_budgets {
                    println!(
                        "  budget {budget:>3}: on-time probability {:.6}",
                        prob_on_time_with_repeats(p, spec, budget)
                    );
                }
            }
            _ => {
                let count = expected_on_time_count(p, spec, section.packets);
                println!(
                    "  first packet {:.6}, expected on-time {:.4} of {} (rate {:.6})",
                    prob_mth_on_time(p, spec, 1),
                    count,
                    section.packets,
                    count / section.packets as f64
                );
            }
        }
        println!("  {} rows computed", report.rows.len());
    }
    Ok(())
}

/// Solver diagnostics for text/JSON presentation.
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    /// Channel success probability used.
    pub success_probability: f64,
    /// Generation interval.
    pub target_interval: u32,
    /// On-time slack.
    pub delta: u32,
    /// State interval.
    pub states: (i64, i64),
    /// Sweeps until convergence.
    pub iterations: u32,
    /// Final sup-norm residual.
    pub residual: f64,
    /// Long-run average miss-rate estimate `(1 − α)·V(s₁)`.
    pub gain_estimate: f64,
    /// Cost-to-go at the start state.
    pub start_value: f64,
    /// How many states each action kind covers in the policy.
    pub policy_counts: PolicyCounts,
}

/// Per-kind state counts of a policy.
#[derive(Debug, Clone, Serialize)]
pub struct PolicyCounts {
    /// States that discard the packet.
    pub drop: usize,
    /// States that wait (including zero wait).
    pub delay: usize,
    /// States with a positive retransmission budget.
    pub repeat: usize,
}

/// The `solve` subcommand.
pub fn solve(
    config_path: &Path,
    policy_out: Option<&Path>,
    dump_model: Option<&Path>,
    json: bool,
) -> Result<(), CliError> {
    let config = ExperimentConfig::from_path(config_path)?;
    let model = config.build_model()?;
    if let Some(path) = dump_model {
        let file = create(path)?;
        model
            .write_debug_dump(file)
            .map_err(|e| io_err(&format!("writing {}", path.display()), e))?;
    }
    let solution = value_iteration(&model, &config.solver_config()).map_err(map_solve_error)?;

    if let Some(path) = policy_out {
        let file = create(path)?;
        solution
            .policy
            .write_csv(file)
            .map_err(|e| map_policy_error(&format!("writing {}", path.display()), e))?;
    }

    let mut counts = PolicyCounts { drop: 0, delay: 0, repeat: 0 };
    for action in solution.policy.actions() {
        match action {
            Action::Drop => counts.drop += 1,
            Action::Delay(_) => counts.delay += 1,
            Action::Repeat(_) => counts.repeat += 1,
        }
    }
    let start = model.states().clamp(model.spec().target_interval() as i64);
    let report = SolveReport {
        success_probability: model.success_probability().value(),
        target_interval: model.spec().target_interval(),
        delta: model.spec().delta(),
        states: (model.states().lower(), model.states().upper()),
        iterations: solution.iterations,
        residual: solution.residual,
        gain_estimate: solution.gain_estimate,
        start_value: solution.values.value(start),
        policy_counts: counts,
    };

    if json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        println!(
            "solved p = {:.6}, T = {}, δ = {}, states {}..={}",
            report.success_probability,
            report.target_interval,
            report.delta,
            report.states.0,
            report.states.1
        );
        println!(
            "  {} sweeps, residual {:.3e}, average miss-rate estimate {:.6}",
            report.iterations, report.residual, report.gain_estimate
        );
        println!(
            "  policy: {} drop, {} delay, {} repeat states",
            report.policy_counts.drop, report.policy_counts.delay, report.policy_counts.repeat
        );
        if let Some(path) = policy_out {
            println!("  policy written to {}", path.display());
        }
    }
    Ok(())
}

/// Closed-form/recursion prediction attached to a simulation report.
#[derive(Debug, Clone, Serialize)]
pub struct TheoryComparison {
    /// Predicted on-time rate for the simulated horizon.
    pub predicted_rate: f64,
    /// Simulated mean minus prediction.
    pub gap: f64,
    /// Gap measured in standard errors, when a standard error exists.
    pub gap_in_std_errors: Option<f64>,
}

/// Full `simulate` output for JSON presentation.
#[derive(Debug, Clone, Serialize)]
pub struct SimulateReport {
    /// Whether the stream was scheduled by a policy.
    pub scheduled: bool,
    /// Pooled simulation results.
    pub result: SimResult,
    /// Prediction, when `--theory` was requested.
    pub theory: Option<TheoryComparison>,
}

/// The `simulate` subcommand.
pub fn simulate(
    config_path: &Path,
    policy_path: Option<&Path>,
    out: Option<&Path>,
    theory: bool,
    json: bool,
) -> Result<(), CliError> {
    let config = ExperimentConfig::from_path(config_path)?;
    let mode = match policy_path {
        Some(path) => {
            let file = File::open(path)
                .map_err(|e| io_err(&format!("opening {}", path.display()), e))?;
            let policy = Policy::read_csv(file)
                .map_err(|e| map_policy_error(&format!("reading {}", path.display()), e))?;
            TransmissionMode::Scheduled(policy)
        }
        None => TransmissionMode::Random,
    };
    let scheduled = matches!(mode, TransmissionMode::Scheduled(_));
    let sim_config = config.sim_config(mode)?;
    let result = replicate(&sim_config);

    let theory = if theory {
        let packets_u32 = u32::try_from(config.sim.packets).map_err(|_| {
            CliError::Validation("sim.packets too large for the theory recursion".into())
        })?;
        let predicted_rate = if scheduled {
            let model = config.build_model()?;
            expected_reward_scheduled(&model, packets_u32).final_rate()
        } else {
            expected_on_time_count(sim_config.p, sim_config.spec, packets_u32)
                / config.sim.packets as f64
        };
        let gap = result.rate_mean - predicted_rate;
        Some(TheoryComparison {
            predicted_rate,
            gap,
            gap_in_std_errors: result.rate_std_error.map(|se| gap / se),
        })
    } else {
        None
    };

    if let Some(path) = out {
        let file = create(path)?;
        result.write_csv(file).map_err(|e| io_err(&format!("writing {}", path.display()), e))?;
    }

    let report = SimulateReport { scheduled, result, theory };
    if json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        let result = &report.result;
        println!(
            "simulated {} packets × {} replications ({} mode)",
            result.packets,
            result.replications,
            if report.scheduled { "scheduled" } else { "uncontrolled" }
        );
        match result.rate_std_error {
            Some(se) => println!("  on-time rate {:.6} ± {:.6}", result.rate_mean, se),
            None => println!("  on-time rate {:.6}", result.rate_mean),
        }
        println!(
            "  slots: {} total = {} waiting + {} transmitting",
            result.total_slots, result.delay_slots, result.transmission_slots
        );
        if let Some(theory) = &report.theory {
            match theory.gap_in_std_errors {
                Some(z) => println!(
                    "  prediction {:.6} (gap {:+.6}, {:+.2} standard errors)",
                    theory.predicted_rate, theory.gap, z
                ),
                None => println!(
                    "  prediction {:.6} (gap {:+.6})",
                    theory.predicted_rate, theory.gap
                ),
            }
        }
        if let Some(path) = out {
            println!("  results written to {}", path.display());
        }
    }
    Ok(())
}
