//! δ-on-time packet delivery over fading channels: closed-form analytics,
//! MDP-based transmission scheduling, and Monte Carlo validation.
//!
//! A source emits packets that are each due `target_interval` slots after
//! the previous one, and a delivery counts when it lands within `delta`
//! slots of its target.  Over a fading channel each transmission slot
//! succeeds independently with probability `p`, so completions drift; the
//! crate quantifies that drift and schedules against it:
//!
//! * [`channel`] — physical-layer model: from transmit power, distance and
//!   fading rate to the per-slot success probability, plus geometric
//!   transmission-time sampling.
//! * [`analytics`] — exact closed forms: per-packet on-time probabilities,
//!   expected on-time counts and rates, and the deviation law of the
//!   early-repeat protocol.
//! * [`mdp`] — the scheduling decision process over delivery-deviation
//!   states with drop / delay / repeat actions: transition laws, rewards,
//!   and a banded truncated model.
//! * [`solver`] — discounted value iteration for the stationary policy and
//!   finite-horizon recursions for expected on-time trajectories.
//! * [`montecarlo`] — a slot-accurate simulator for both the uncontrolled
//!   stream and policy-driven scheduling, with reproducible parallel
//!   replication.

pub mod analytics;
pub mod channel;
pub mod mdp;
pub mod montecarlo;
pub mod solver;

pub use analytics::{AnalyticResult, OnTimeSpec};
pub use channel::{ChannelParams, GainModel, RngSeed, SuccessProbability};
pub use mdp::{Action, ActionSpace, MdpModel, StateSpace, Truncation};
pub use montecarlo::{SimConfig, SimResult, TransmissionMode};
pub use solver::{Policy, RewardTrajectory, Solution, SolverConfig, ValueVector};
