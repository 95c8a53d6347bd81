//! Canned experiment recipes that regenerate the library's reference
//! result sets as CSV files.
//!
//! Each recipe pins its own operating point (channel, timing, spaces) and
//! accepts overrides for the master seed, replication count, packet
//! horizon, and — where a recipe sweeps a grid — the grid itself.  The
//! solve-bearing recipes share one pipeline: build the model, optimize
//! the policy, simulate both transmission modes, and put the closed-form
//! or recursion predictions next to the simulated rates.

use std::fs::File;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};

use ontime_core::analytics::{
    expected_on_time_count, prob_mth_on_time, prob_on_time_with_repeats, repeat_ccdf, OnTimeSpec,
};
use ontime_core::channel::{RngSeed, SuccessProbability};
use ontime_core::mdp::{build_model, ActionSpace, StateSpace};
use ontime_core::montecarlo::{replicate, ActionUsage, SimConfig, SimResult, TransmissionMode};
use ontime_core::solver::{expected_reward_scheduled, value_iteration, SolverConfig};

use crate::CliError;

/// Overrides and output location for a recipe run.
#[derive(Debug, Clone)]
pub struct FigureOptions {
    /// Directory the CSV files are written into.
    pub outdir: PathBuf,
    /// Master seed override.
    pub seed: Option<u64>,
    /// Replication-count override.
    pub replications: Option<u32>,
    /// Packet-horizon override.
    pub packets: Option<u64>,
    /// Grid override for recipes that sweep a parameter.
    pub grid: Option<Vec<f64>>,
}

impl FigureOptions {
    fn master_seed(&self, figure: u64) -> RngSeed {
        // Offset by the figure number so recipes never share streams.
        RngSeed(self.seed.unwrap_or(42).wrapping_add(figure))
    }
}

/// Parses a comma-separated numeric grid.
pub fn parse_grid(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Validation(format!("grid entry '{part}': {e}")))
        })
        .collect()
}

fn grid_as_u32(grid: &[f64], name: &str) -> Result<Vec<u32>, CliError> {
    grid.iter()
        .map(|v| {
            if *v >= 0.0 && v.fract() == 0.0 && *v <= u32::MAX as f64 {
                Ok(*v as u32)
            } else {
                Err(CliError::Validation(format!("{name} grid entry {v} is not a whole number")))
            }
        })
        .collect()
}

fn create_output(dir: &Path, name: &str) -> Result<(PathBuf, File), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", dir.display())))?;
    let path = dir.join(name);
    let file = File::create(&path)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", path.display())))?;
    Ok((path, file))
}

fn wio(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("writing {}: {e}", path.display()))
}

/// Dispatches a recipe by its reference number.
pub fn reproduce(figure: u8, options: &FigureOptions) -> Result<(), CliError> {
    match figure {
        3 => per_packet_curves(options),
        4 => repeat_tail_curves(options),
        7 => rate_versus_slack(options),
        8 => rate_versus_interval(options),
        9 => rate_versus_success(options),
        10 => rate_versus_horizon(options),
        11 => action_usage_profile(options),
        other => Err(CliError::Validation(format!(
            "no recipe for figure {other}; available: 3, 4, 7, 8, 9, 10, 11"
        ))),
    }
}

fn reference_probability() -> SuccessProbability {
    SuccessProbability::new(0.2).expect("reference p is valid")
}

fn reference_spaces() -> (StateSpace, ActionSpace) {
    (StateSpace::new(-500, 500).expect("reference bounds"), ActionSpace::new(20, 20))
}

/// Solves a model and simulates both transmission modes side by side.
struct RatePair {
    random_theory: f64,
    random: SimResult,
    optimal_theory: f64,
    optimal: SimResult,
}

fn solved_rate_pair(
    p: SuccessProbability,
    spec: OnTimeSpec,
    packets: u64,
    replications: u32,
    seed: RngSeed,
) -> Result<RatePair, CliError> {
    let (states, actions) = reference_spaces();
    let model = build_model(p, spec, states, actions)
        .map_err(|e| CliError::Validation(format!("model: {e}")))?;
    let solution = value_iteration(&model, &SolverConfig::default())
        .map_err(|e| CliError::Convergence(e.to_string()))?;
    let horizon = u32::try_from(packets)
        .map_err(|_| CliError::Validation("packet horizon too large for the recursion".into()))?;
    let optimal_theory = expected_reward_scheduled(&model, horizon).final_rate();
    let random_theory = expected_on_time_count(p, spec, horizon) / packets as f64;

    let base = SimConfig {
        p,
        spec,
        packets,
        mode: TransmissionMode::Random,
        master_seed: seed,
        replications,
    };
    let random = replicate(&base);
    let optimal = replicate(&SimConfig {
        mode: TransmissionMode::Scheduled(solution.policy),
        ..base
    });
    Ok(RatePair { random_theory, random, optimal_theory, optimal })
}

fn se_text(result: &SimResult) -> String {
    result.rate_std_error.map(|se| se.to_string()).unwrap_or_default()
}

/// Recipe 3: per-packet on-time probability of the uncontrolled stream
/// over the first packets, one curve per slack value.
fn per_packet_curves(options: &FigureOptions) -> Result<(), CliError> {
    let p = reference_probability();
    let deltas = match &options.grid {
        Some(grid) => grid_as_u32(grid, "delta")?,
        None => vec![0, 1, 2, 3],
    };
    let m_max = options.packets.unwrap_or(30) as u32;
    let (path, mut file) = create_output(&options.outdir, "fig3_per_packet.csv")?;
    writeln!(file, "# schema=figure3/v1").map_err(|e| wio(&path, e))?;
    writeln!(file, "delta,m,probability").map_err(|e| wio(&path, e))?;
    for &delta in &deltas {
        let spec = OnTimeSpec::new(5, delta).map_err(|e| CliError::Validation(e.to_string()))?;
        for m in 1..=m_max {
            writeln!(file, "{delta},{m},{}", prob_mth_on_time(p, spec, m))
                .map_err(|e| wio(&path, e))?;
        }
        println!(
            "figure 3: δ = {delta}: packet 1 at {:.4}, packet {m_max} at {:.4}",
            prob_mth_on_time(p, spec, 1),
            prob_mth_on_time(p, spec, m_max)
        );
    }
    println!("figure 3 written to {}", path.display());
    Ok(())
}

/// Recipe 4: repeat-protocol tail probabilities around the deadline, one
/// curve per retransmission budget.
fn repeat_tail_curves(options: &FigureOptions) -> Result<(), CliError> {
    let p = reference_probability();
    let spec = OnTimeSpec::new(20, 1).expect("reference timing");
    let budgets = match &options.grid {
        Some(grid) => grid_as_u32(grid, "budget")?,
        None => vec![0, 1, 5, 20],
    };
    let (path, mut file) = create_output(&options.outdir, "fig4_repeat_tail.csv")?;
    writeln!(file, "# schema=figure4/v1").map_err(|e| wio(&path, e))?;
    writeln!(file, "budget,offset,ccdf").map_err(|e| wio(&path, e))?;
    for &budget in &budgets {
        for j in -20i64..=20 {
            writeln!(file, "{budget},{j},{}", repeat_ccdf(p, spec, budget, j))
                .map_err(|e| wio(&path, e))?;
        }
        println!(
            "figure 4: budget {budget}: on-time probability {:.6}",
            prob_on_time_with_repeats(p, spec, budget)
        );
    }
    println!("figure 4 written to {}", path.display());
    Ok(())
}

/// Recipe 7: on-time rate against the slack δ, uncontrolled and
/// scheduled, simulated and predicted.
fn rate_versus_slack(options: &FigureOptions) -> Result<(), CliError> {
    let p = reference_probability();
    let deltas = match &options.grid {
        Some(grid) => grid_as_u32(grid, "delta")?,
        None => vec![0, 1, 2, 3],
    };
    let packets = options.packets.unwrap_or(10_000);
    let replications = options.replications.unwrap_or(30);
    let (path, mut file) = create_output(&options.outdir, "fig7_rate_vs_slack.csv")?;
    writeln!(file, "# schema=figure7/v1").map_err(|e| wio(&path, e))?;
    writeln!(
        file,
        "delta,random_theory,random_sim,random_se,optimal_theory,optimal_sim,optimal_se"
    )
    .map_err(|e| wio(&path, e))?;
    for &delta in &deltas {
        let spec = OnTimeSpec::new(5, delta).map_err(|e| CliError::Validation(e.to_string()))?;
        let pair = solved_rate_pair(p, spec, packets, replications, options.master_seed(7))?;
        writeln!(
            file,
            "{delta},{},{},{},{},{},{}",
            pair.random_theory,
            pair.random.rate_mean,
            se_text(&pair.random),
            pair.optimal_theory,
            pair.optimal.rate_mean,
            se_text(&pair.optimal)
        )
        .map_err(|e| wio(&path, e))?;
        println!(
            "figure 7: δ = {delta}: uncontrolled {:.4} (predicted {:.4}), scheduled {:.4} \
             (predicted {:.4})",
            pair.random.rate_mean, pair.random_theory, pair.optimal.rate_mean, pair.optimal_theory
        );
    }
    println!("figure 7 written to {}", path.display());
    Ok(())
}

/// Recipe 8: uncontrolled on-time rate against the generation interval.
fn rate_versus_interval(options: &FigureOptions) -> Result<(), CliError> {
    let p = reference_probability();
    let intervals = match &options.grid {
        Some(grid) => grid_as_u32(grid, "target_interval")?,
        None => (2..=10).collect(),
    };
    let packets = options.packets.unwrap_or(10_000);
    let replications = options.replications.unwrap_or(30);
    let horizon = u32::try_from(packets)
        .map_err(|_| CliError::Validation("packet horizon too large for the closed form".into()))?;
    let (path, mut file) = create_output(&options.outdir, "fig8_rate_vs_interval.csv")?;
    writeln!(file, "# schema=figure8/v1").map_err(|e| wio(&path, e))?;
    writeln!(file, "target_interval,theory,sim,se").map_err(|e| wio(&path, e))?;
    let mut best = (0u32, f64::MIN);
    for &t in &intervals {
        let spec = OnTimeSpec::new(t, 2).map_err(|e| CliError::Validation(e.to_string()))?;
        let theory = expected_on_time_count(p, spec, horizon) / packets as f64;
        let result = replicate(&SimConfig {
            p,
            spec,
            packets,
            mode: TransmissionMode::Random,
            master_seed: options.master_seed(8),
            replications,
        });
        if theory > best.1 {
            best = (t, theory);
        }
        writeln!(file, "{t},{theory},{},{}", result.rate_mean, se_text(&result))
            .map_err(|e| wio(&path, e))?;
        println!("figure 8: T = {t}: rate {:.5} (predicted {theory:.5})", result.rate_mean);
    }
    println!("figure 8: predicted rate peaks at T = {} ({:.5})", best.0, best.1);
    println!("figure 8 written to {}", path.display());
    Ok(())
}

/// Recipe 9: on-time rate against the channel success probability, both
/// modes, at a short generation interval.
fn rate_versus_success(options: &FigureOptions) -> Result<(), CliError> {
    let probabilities = match &options.grid {
        Some(grid) => grid.clone(),
        None => vec![0.1, 0.2, 0.3, 0.4, 0.5],
    };
    let spec = OnTimeSpec::new(4, 2).expect("reference timing");
    let packets = options.packets.unwrap_or(10_000);
    let replications = options.replications.unwrap_or(30);
    let (path, mut file) = create_output(&options.outdir, "fig9_rate_vs_success.csv")?;
    writeln!(file, "# schema=figure9/v1").map_err(|e| wio(&path, e))?;
    writeln!(
        file,
        "success_probability,random_theory,random_sim,random_se,optimal_theory,optimal_sim,\
         optimal_se"
    )
    .map_err(|e| wio(&path, e))?;
    for &p_value in &probabilities {
        let p = SuccessProbability::new(p_value)
            .map_err(|e| CliError::Validation(format!("grid probability {p_value}: {e}")))?;
        let pair = solved_rate_pair(p, spec, packets, replications, options.master_seed(9))?;
        writeln!(
            file,
            "{p_value},{},{},{},{},{},{}",
            pair.random_theory,
            pair.random.rate_mean,
            se_text(&pair.random),
            pair.optimal_theory,
            pair.optimal.rate_mean,
            se_text(&pair.optimal)
        )
        .map_err(|e| wio(&path, e))?;
        println!(
            "figure 9: p = {p_value}: uncontrolled {:.4}, scheduled {:.4}",
            pair.random.rate_mean, pair.optimal.rate_mean
        );
    }
    println!("figure 9 written to {}", path.display());
    Ok(())
}

/// Recipe 10: on-time rate against the packet horizon — uncontrolled
/// simulations with both prediction curves.
fn rate_versus_horizon(options: &FigureOptions) -> Result<(), CliError> {
    let p = reference_probability();
    let spec = OnTimeSpec::new(5, 1).expect("reference timing");
    let horizons = match &options.grid {
        Some(grid) => {
            let values = grid_as_u32(grid, "packets")?;
            values.into_iter().map(u64::from).collect()
        }
        None => vec![100, 1_000, 10_000],
    };
    let replications = options.replications.unwrap_or(30);
    let max_horizon = *horizons.iter().max().expect("non-empty grid") as u32;

    // One recursion at the largest horizon prices every grid point.
    let (states, actions) = reference_spaces();
    let model = build_model(p, spec, states, actions)
        .map_err(|e| CliError::Validation(format!("model: {e}")))?;
    let scheduled = expected_reward_scheduled(&model, max_horizon);

    let (path, mut file) = create_output(&options.outdir, "fig10_rate_vs_horizon.csv")?;
    writeln!(file, "# schema=figure10/v1").map_err(|e| wio(&path, e))?;
    writeln!(file, "packets,random_theory,optimal_theory,random_sim,random_se")
        .map_err(|e| wio(&path, e))?;
    for &m in &horizons {
        let random_theory = expected_on_time_count(p, spec, m as u32) / m as f64;
        let optimal_theory = scheduled.per_stage[m as usize - 1] / m as f64;
        let result = replicate(&SimConfig {
            p,
            spec,
            packets: m,
            mode: TransmissionMode::Random,
            master_seed: options.master_seed(10),
            replications,
        });
        writeln!(
            file,
            "{m},{random_theory},{optimal_theory},{},{}",
            result.rate_mean,
            se_text(&result)
        )
        .map_err(|e| wio(&path, e))?;
        println!(
            "figure 10: M = {m}: uncontrolled {:.5} (predicted {random_theory:.5}), \
             scheduled prediction {optimal_theory:.5}",
            result.rate_mean
        );
    }
    println!("figure 10 written to {}", path.display());
    Ok(())
}

/// Recipe 11: action-usage profile of the optimized policy on a long
/// stream at a stretched generation interval.
fn action_usage_profile(options: &FigureOptions) -> Result<(), CliError> {
    let p = reference_probability();
    let spec = OnTimeSpec::new(33, 3).expect("reference timing");
    let packets = options.packets.unwrap_or(1_000_000);
    let replications = options.replications.unwrap_or(1);
    let (states, actions) = reference_spaces();
    let model = build_model(p, spec, states, actions)
        .map_err(|e| CliError::Validation(format!("model: {e}")))?;
    let solution = value_iteration(&model, &SolverConfig::default())
        .map_err(|e| CliError::Convergence(e.to_string()))?;
    let result = replicate(&SimConfig {
        p,
        spec,
        packets,
        mode: TransmissionMode::Scheduled(solution.policy),
        master_seed: options.master_seed(11),
        replications,
    });

    let usage = &result.action_usage;
    let total = packets * replications as u64;
    let (path, mut file) = create_output(&options.outdir, "fig11_action_usage.csv")?;
    writeln!(file, "# schema=figure11/v1").map_err(|e| wio(&path, e))?;
    writeln!(file, "section,key,value").map_err(|e| wio(&path, e))?;
    writeln!(file, "summary,packets,{total}").map_err(|e| wio(&path, e))?;
    writeln!(file, "summary,rate_mean,{}", result.rate_mean).map_err(|e| wio(&path, e))?;
    writeln!(file, "fraction,dropped,{}", usage.drop_fraction(total))
        .map_err(|e| wio(&path, e))?;
    writeln!(file, "fraction,delayed,{}", usage.delayed_fraction(total))
        .map_err(|e| wio(&path, e))?;
    writeln!(file, "fraction,repeated,{}", usage.repeat_fraction(total))
        .map_err(|e| wio(&path, e))?;
    for (n_d, count) in usage.delays.iter().enumerate() {
        writeln!(file, "delay,{n_d},{count}").map_err(|e| wio(&path, e))?;
    }
    for (n_r, count) in usage.repeats.iter().enumerate() {
        writeln!(file, "repeat,{n_r},{count}").map_err(|e| wio(&path, e))?;
    }
    for (used, count) in usage.retransmissions_used.iter().enumerate() {
        writeln!(file, "retransmissions,{used},{count}").map_err(|e| wio(&path, e))?;
    }
    println!(
        "figure 11: dropped {:.4}, delayed {:.4}, repeated {:.4} of {total} packets \
         (on-time rate {:.4})",
        usage.drop_fraction(total),
        usage.delayed_fraction(total),
        usage.repeat_fraction(total),
        result.rate_mean
    );
    if let Some(modal) = ActionUsage::modal_positive(&usage.delays) {
        println!("figure 11: most common positive delay: {modal} slots");
    }
    if let Some(modal) = ActionUsage::modal_positive(&usage.repeats) {
        println!("figure 11: most common positive repeat budget: {modal}");
    }
    println!("figure 11 written to {}", path.display());
    Ok(())
}
