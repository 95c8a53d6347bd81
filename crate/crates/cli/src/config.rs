//! Experiment configuration: a TOML schema covering channel, timing,
//! state/action spaces, solver and simulation settings, with optional
//! sweep and analytic sections.
//!
//! Every section is optional; omitted fields fall back to the library's
//! reference operating point (`p = 0.2`, `T = 5`, `δ = 1`, states
//! −500..=500, budgets up to 20, discount 0.999).  The channel is
//! specified either directly by `success_probability` or through the
//! physical link parameters — never both.

use serde::{Deserialize, Serialize};
use std::path::Path;

use ontime_core::analytics::OnTimeSpec;
use ontime_core::channel::{ChannelParams, GainModel, RngSeed, SuccessProbability};
use ontime_core::mdp::{build_model_truncated, ActionSpace, MdpModel, StateSpace, Truncation};
use ontime_core::montecarlo::{SimConfig, TransmissionMode};
use ontime_core::solver::SolverConfig;

use crate::CliError;

/// Schema tag expected in experiment files.
pub const EXPERIMENT_SCHEMA: &str = "experiment/v1";

/// Top-level experiment file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Optional schema tag; when present it must equal
    /// [`EXPERIMENT_SCHEMA`].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    /// Channel specification.
    #[serde(default)]
    pub channel: ChannelSection,
    /// Generation interval and slack.
    #[serde(default)]
    pub timing: TimingSection,
    /// State interval and truncation scheme.
    #[serde(default)]
    pub states: StatesSection,
    /// Action budgets.
    #[serde(default)]
    pub actions: ActionsSection,
    /// Value-iteration tunables.
    #[serde(default)]
    pub solver: SolverSection,
    /// Simulation size and seeding.
    #[serde(default)]
    pub sim: SimSection,
    /// Optional one-variable parameter sweep.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    /// Optional analytic-quantity request.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analytic: Option<AnalyticSection>,
}

/// Channel: direct probability or physical link budget.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    /// Per-slot success probability in `(0, 1]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub success_probability: Option<f64>,
    /// Physical link parameters; mutually exclusive with
    /// `success_probability`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub physical: Option<PhysicalChannel>,
}

/// Physical link budget from which the success probability is derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalChannel {
    /// Rate of the exponential channel-gain distribution.
    pub gain_rate: f64,
    /// Transmit power in watts.
    pub transmit_power_w: f64,
    /// Link distance in meters.
    pub distance_m: f64,
    /// Path-loss exponent.
    pub path_loss_exponent: f64,
    /// Noise power in watts.
    pub noise_power_w: f64,
    /// SNR decoding threshold.
    pub snr_threshold: f64,
}

/// Generation interval and on-time slack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSection {
    /// Slots between packet generations (`T ≥ 1`).
    pub target_interval: u32,
    /// On-time slack `δ` in slots.
    pub delta: u32,
}

impl Default for TimingSection {
    fn default() -> Self {
        Self { target_interval: 5, delta: 1 }
    }
}

/// State interval and truncation scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatesSection {
    /// Lowest tracked state.
    pub min: i64,
    /// Highest tracked state.
    pub max: i64,
    /// How out-of-range transition mass is handled.
    #[serde(default)]
    pub truncation: Truncation,
}

impl Default for StatesSection {
    fn default() -> Self {
        Self { min: -500, max: 500, truncation: Truncation::default() }
    }
}

/// Action budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionsSection {
    /// Largest delay in slots.
    pub max_delay_slots: u32,
    /// Largest retransmission budget.
    pub max_retransmissions: u32,
}

impl Default for ActionsSection {
    fn default() -> Self {
        Self { max_delay_slots: 20, max_retransmissions: 20 }
    }
}

/// Value-iteration tunables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    /// Discount factor.
    pub discount: f64,
    /// Sup-norm stopping threshold.
    pub epsilon: f64,
    /// Sweep cap.
    pub max_iterations: u32,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self { discount: d.discount, epsilon: d.epsilon, max_iterations: d.max_iterations }
    }
}

/// Simulation size and seeding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    /// Packets per replication.
    pub packets: u64,
    /// Independent replications.
    pub replications: u32,
    /// Master seed for the replication streams.
    pub seed: u64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self { packets: 10_000, replications: 30, seed: 42 }
    }
}

/// A sweep over exactly one scalar variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Which variable to sweep: `delta`, `target_interval`, or
    /// `success_probability`.
    pub variable: String,
    /// The values to visit, in order.
    pub values: Vec<f64>,
}

/// Which closed-form quantity `analytic` should produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticSection {
    /// `per_packet`, `expected_count`, or `repeat_ccdf`.
    pub quantity: String,
    /// Packets to cover for the per-packet/expected-count quantities.
    #[serde(default = "default_analytic_packets")]
    pub packets: u32,
    /// Retransmission budgets for `repeat_ccdf`.
    #[serde(default = "default_budgets")]
    pub repeat_budgets: Vec<u32>,
    /// Lowest deadline offset for `repeat_ccdf`.
    #[serde(default = "default_deviation_min")]
    pub deviation_min: i64,
    /// Highest deadline offset for `repeat_ccdf`.
    #[serde(default = "default_deviation_max")]
    pub deviation_max: i64,
}

fn default_analytic_packets() -> u32 {
    30
}
fn default_budgets() -> Vec<u32> {
    vec![0, 1, 5, 20]
}
fn default_deviation_min() -> i64 {
    -20
}
fn default_deviation_max() -> i64 {
    20
}

impl ExperimentConfig {
    /// Parses and validates an experiment file.
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Parses and validates experiment TOML.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let config: Self =
            toml::from_str(text).map_err(|e| CliError::Config(format!("parsing TOML: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Serializes back to TOML (used for templating and tests).
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("experiment config serializes")
    }

    fn validate(&self) -> Result<(), CliError> {
        if let Some(schema) = &self.schema {
            if schema != EXPERIMENT_SCHEMA {
                return Err(CliError::Config(format!(
                    "unsupported schema '{schema}', expected '{EXPERIMENT_SCHEMA}'"
                )));
            }
        }
        if self.channel.success_probability.is_some() && self.channel.physical.is_some() {
            return Err(CliError::Config(
                "channel: give either success_probability or physical parameters, not both"
                    .into(),
            ));
        }
        if self.timing.target_interval == 0 {
            return Err(CliError::Validation("timing.target_interval must be at least 1".into()));
        }
        if self.sim.packets == 0 {
            return Err(CliError::Validation("sim.packets must be at least 1".into()));
        }
        if self.sim.replications == 0 {
            return Err(CliError::Validation("sim.replications must be at least 1".into()));
        }
        if let Some(sweep) = &self.sweep {
            match sweep.variable.as_str() {
                "delta" | "target_interval" | "success_probability" => {}
                other => {
                    return Err(CliError::Validation(format!(
                        "sweep.variable '{other}' is not one of delta, target_interval, \
                         success_probability"
                    )))
                }
            }
            if sweep.values.is_empty() {
                return Err(CliError::Validation("sweep.values must not be empty".into()));
            }
        }
        if let Some(analytic) = &self.analytic {
            match analytic.quantity.as_str() {
                "per_packet" | "expected_count" | "repeat_ccdf" => {}
                other => {
                    return Err(CliError::Validation(format!(
                        "analytic.quantity '{other}' is not one of per_packet, \
                         expected_count, repeat_ccdf"
                    )))
                }
            }
            if analytic.packets == 0 {
                return Err(CliError::Validation("analytic.packets must be at least 1".into()));
            }
            if analytic.deviation_min > analytic.deviation_max {
                return Err(CliError::Validation(
                    "analytic.deviation_min must not exceed deviation_max".into(),
                ));
            }
        }
        Ok(())
    }

    /// The per-slot success probability, direct or derived.
    pub fn success_probability(&self) -> Result<SuccessProbability, CliError> {
        match (&self.channel.success_probability, &self.channel.physical) {
            (Some(p), None) => SuccessProbability::new(*p)
                .map_err(|e| CliError::Validation(format!("channel.success_probability: {e}"))),
            (None, Some(physical)) => {
                let params = ChannelParams {
                    gain: GainModel::Exponential { rate: physical.gain_rate },
                    transmit_power_w: physical.transmit_power_w,
                    distance_m: physical.distance_m,
                    path_loss_exponent: physical.path_loss_exponent,
                    noise_power_w: physical.noise_power_w,
                    snr_threshold: physical.snr_threshold,
                };
                ontime_core::channel::success_probability(&params)
                    .map_err(|e| CliError::Validation(format!("channel.physical: {e}")))
            }
            (None, None) => Ok(SuccessProbability::new(0.2).expect("default p is valid")),
            (Some(_), Some(_)) => unreachable!("rejected by validate()"),
        }
    }

    /// The on-time specification.
    pub fn spec(&self) -> Result<OnTimeSpec, CliError> {
        OnTimeSpec::new(self.timing.target_interval, self.timing.delta)
            .map_err(|e| CliError::Validation(format!("timing: {e}")))
    }

    /// Builds the decision-process model this configuration describes.
    pub fn build_model(&self) -> Result<MdpModel, CliError> {
        let states = StateSpace::new(self.states.min, self.states.max)
            .map_err(|e| CliError::Validation(format!("states: {e}")))?;
        let actions =
            ActionSpace::new(self.actions.max_delay_slots, self.actions.max_retransmissions);
        build_model_truncated(
            self.success_probability()?,
            self.spec()?,
            states,
            actions,
            self.states.truncation,
        )
        .map_err(|e| CliError::Validation(format!("model: {e}")))
    }

    /// The solver tunables.
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            discount: self.solver.discount,
            epsilon: self.solver.epsilon,
            max_iterations: self.solver.max_iterations,
        }
    }

    /// A simulation request in the given mode.
    pub fn sim_config(&self, mode: TransmissionMode) -> Result<SimConfig, CliError> {
        Ok(SimConfig {
            p: self.success_probability()?,
            spec: self.spec()?,
            packets: self.sim.packets,
            mode,
            master_seed: RngSeed(self.sim.seed),
            replications: self.sim.replications,
        })
    }

    /// A copy with the swept variable set to `value`.
    pub fn with_sweep_value(&self, variable: &str, value: f64) -> Result<Self, CliError> {
        let mut copy = self.clone();
        copy.sweep = None;
        match variable {
            "delta" => copy.timing.delta = value as u32,
            "target_interval" => {
                if value < 1.0 {
                    return Err(CliError::Validation(format!(
                        "sweep value {value} is not a valid target_interval"
                    )));
                }
                copy.timing.target_interval = value as u32;
            }
            "success_probability" => {
                copy.channel.physical = None;
                copy.channel.success_probability = Some(value);
            }
            other => {
                return Err(CliError::Validation(format!("unknown sweep variable '{other}'")))
            }
        }
        Ok(copy)
    }
}
