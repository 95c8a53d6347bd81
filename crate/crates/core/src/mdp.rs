//! Scheduling MDP over delivery-deviation states.
//!
//! When the transmitter may *drop*, *delay*, or *repeat* packets, the
//! stream becomes a controlled Markov chain.  The state for packet `m` is
//!
//! ```text
//!     s_m = m·T − n + 1,
//! ```
//!
//! the signed slack between packet `m`'s target slot `m·T` and the slot `n`
//! in which its transmission begins: `s_m` slots remain until the target
//! (negative values mean the target is already missed).  Packet `m` is
//! received δ-on-time exactly when its transmission consumes
//! `S ∈ [s_m − δ, s_m + δ]` slots, and the next state is
//! `s_{m+1} = s_m − S + T` for a transmission that takes `S` slots in
//! total.  The chain starts at `s_1 = T`.
//!
//! Actions, in the pinned enumeration order that also serves as the
//! tie-breaking order everywhere:
//!
//! * `Drop` — skip the packet entirely (zero slots): `s_{m+1} = s_m + T`,
//!   reward 0.
//! * `Delay(n_d)` — idle `n_d` slots, then transmit until first success.
//! * `Repeat(n_r)` — transmit immediately, but retransmit receptions that
//!   land *early* (before `s_m − δ`), up to `n_r` retransmissions.
//!
//! The per-packet reward of an action is the probability that this packet
//! lands in its window; the cost is one minus that.  Rewards and the
//! untruncated transition laws are exposed as free functions
//! ([`transition_random`], [`reward_repeat`], …) for direct inspection,
//! and [`build_model`] assembles them into a finite model on a state
//! interval `[ι_min, ι_max]` for the solver.
//!
//! ## Truncation
//!
//! Transitions that would leave the interval are folded back onto its
//! edges.  The default [`Truncation::ClampAndSum`] assigns the overshoot
//! mass above `ι_max` to the `ι_max` column in closed form and gives the
//! `ι_min` column the exact deficit `1 − (everything else)`, so every row
//! sums to one by construction; [`Truncation::Renormalize`] instead keeps
//! only in-range mass and rescales the row.  With the interval wide enough
//! the choice is immaterial (the folded mass is astronomically small), but
//! both are kept so the insensitivity is something tests can demonstrate
//! rather than assume.
//!
//! ## Repeat transition law
//!
//! Writing `y = s_m − s_{m+1} + T` for the slots a repeat-mode
//! transmission consumes, three regimes arise for `Repeat(n_r)` in state
//! `i`:
//!
//! 1. `i ≤ 1 + δ`: no reception can be early, the law is the plain
//!    geometric one;
//! 2. `1 + δ < i ≤ 1 + δ + n_r`: the budget covers the whole early region
//!    and can never run out, so the final success is the first one at or
//!    after slot `i − δ` of the transmission: `p·q^{i−δ−…}`, an
//!    `i`-independent shifted geometric — exactly the `Delay(i − 1 − δ)`
//!    law, and computed through the same code so the equivalence holds
//!    bit for bit;
//! 3. `i > 1 + δ + n_r`: either the budget is spent early — `y` is the
//!    slot of success `n_r + 1`, negative-binomial — or at most `n_r`
//!    successes happen up to slot `i − 1 − δ` (probability `D_i`, a
//!    binomial head) and the geometric tail `p·D_i·q^{y−(i−δ)}` follows.
//!
//! At the regime seams the adjacent formulas agree exactly, which the
//! tests pin down.

use std::io::Write as IoWrite;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{binomial_head, ln_choose, OnTimeSpec};
use crate::channel::SuccessProbability;

/// Contiguous interval of deviation states `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StateSpace {
    lower: i64,
    upper: i64,
}

/// Validation failures when assembling a model.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum MdpError {
    /// State bounds must satisfy `lower < upper`.
    #[error("state bounds must satisfy lower < upper, got [{lower}, {upper}]")]
    InvalidBounds {
        /// Rejected lower bound.
        lower: i64,
        /// Rejected upper bound.
        upper: i64,
    },
    /// The on-time window must fit inside the state interval.
    #[error("upper state bound {upper} is below target_interval + delta = {needed}; the on-time window must fit inside the state interval")]
    WindowOutsideBounds {
        /// Current upper bound.
        upper: i64,
        /// Minimum admissible upper bound.
        needed: i64,
    },
    /// The lower bound must not be positive (late states must exist).
    #[error("lower state bound must be at most 0, got {lower}")]
    PositiveLowerBound {
        /// Rejected lower bound.
        lower: i64,
    },
}

impl StateSpace {
    /// Builds the interval `[lower, upper]`, requiring `lower < upper`.
    pub fn new(lower: i64, upper: i64) -> Result<Self, MdpError> {
        if lower >= upper {
            return Err(MdpError::InvalidBounds { lower, upper });
        }
        Ok(Self { lower, upper })
    }

    /// Lowest state.
    pub fn lower(self) -> i64 {
        self.lower
    }

    /// Highest state.
    pub fn upper(self) -> i64 {
        self.upper
    }

    /// Number of states.
    pub fn len(self) -> usize {
        (self.upper - self.lower + 1) as usize
    }

    /// True when the interval is empty (never, by construction).
    pub fn is_empty(self) -> bool {
        false
    }

    /// Whether `state` lies inside the interval.
    pub fn contains(self, state: i64) -> bool {
        (self.lower..=self.upper).contains(&state)
    }

    /// Index of `state` within the interval; `state` must be contained.
    pub fn index(self, state: i64) -> usize {
        debug_assert!(self.contains(state), "state {state} outside {self:?}");
        (state - self.lower) as usize
    }

    /// State at `index`.
    pub fn state(self, index: usize) -> i64 {
        debug_assert!(index < self.len());
        self.lower + index as i64
    }

    /// Nearest in-range state.
    pub fn clamp(self, state: i64) -> i64 {
        state.clamp(self.lower, self.upper)
    }

    /// Iterates the states in ascending order.
    pub fn iter(self) -> impl Iterator<Item = i64> {
        self.lower..=self.upper
    }
}

/// A scheduling decision for one packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    /// Skip the packet; consumes no slots.
    Drop,
    /// Idle the given number of slots, then transmit until first success.
    Delay(u32),
    /// Transmit immediately, retransmitting early receptions up to the
    /// given budget.
    Repeat(u32),
}

impl Action {
    /// Machine-readable kind tag: `drop`, `delay`, or `repeat`.
    pub fn kind(self) -> &'static str {
        match self {
            Action::Drop => "drop",
            Action::Delay(_) => "delay",
            Action::Repeat(_) => "repeat",
        }
    }

    /// The action parameter (`n_d`, `n_r`, or 0 for drop).
    pub fn param(self) -> u32 {
        match self {
            Action::Drop => 0,
            Action::Delay(n) | Action::Repeat(n) => n,
        }
    }

    /// Rebuilds an action from its kind tag and parameter.
    pub fn from_kind(kind: &str, param: u32) -> Option<Self> {
        match kind {
            "drop" => Some(Action::Drop),
            "delay" => Some(Action::Delay(param)),
            "repeat" => Some(Action::Repeat(param)),
            _ => None,
        }
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Action::Drop => write!(f, "drop"),
            Action::Delay(n) => write!(f, "delay({n})"),
            Action::Repeat(n) => write!(f, "repeat({n})"),
        }
    }
}

/// The admissible actions: `Drop`, `Delay(0..=max_delay)`,
/// `Repeat(0..=max_repeats)`, enumerated in exactly that order.
///
/// The order is part of the contract: ties in the solver resolve to the
/// earliest index, and `Repeat(0)` (same law as `Delay(0)`) can therefore
/// never shadow `Delay(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ActionSpace {
    /// Largest admissible delay `n_d`.
    pub max_delay: u32,
    /// Largest admissible retransmission budget `n_r`.
    pub max_repeats: u32,
}

impl ActionSpace {
    /// Builds the action set with the given parameter caps.
    pub fn new(max_delay: u32, max_repeats: u32) -> Self {
        Self { max_delay, max_repeats }
    }

    /// Number of actions: `1 + (max_delay + 1) + (max_repeats + 1)`.
    pub fn len(self) -> usize {
        (3 + self.max_delay + self.max_repeats) as usize
    }

    /// Always false; there is at least `Drop`.
    pub fn is_empty(self) -> bool {
        false
    }

    /// Action at enumeration index `idx`.
    pub fn at(self, idx: usize) -> Action {
        let idx = idx as u32;
        if idx == 0 {
            Action::Drop
        } else if idx <= 1 + self.max_delay {
            Action::Delay(idx - 1)
        } else {
            let r = idx - 2 - self.max_delay;
            debug_assert!(r <= self.max_repeats, "action index out of range");
            Action::Repeat(r)
        }
    }

    /// Enumeration index of `action`, if admissible.
    pub fn index_of(self, action: Action) -> Option<usize> {
        match action {
            Action::Drop => Some(0),
            Action::Delay(n) if n <= self.max_delay => Some(1 + n as usize),
            Action::Repeat(n) if n <= self.max_repeats => {
                Some(2 + self.max_delay as usize + n as usize)
            }
            _ => None,
        }
    }

    /// Iterates the actions in enumeration order.
    pub fn iter(self) -> impl Iterator<Item = Action> {
        (0..self.len()).map(move |i| self.at(i))
    }
}

/// How out-of-range transition mass is handled; see the module docs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Truncation {
    /// Fold overshoot onto the nearest edge state (default).
    #[default]
    #[serde(rename = "clamp")]
    ClampAndSum,
    /// Drop out-of-range mass and rescale the row to sum to one.
    #[serde(rename = "renormalize")]
    Renormalize,
}

/// `q^n` for `n ≥ 0`, with `0⁰ = 1` and large exponents flushed to zero.
#[inline]
fn qpow(q: f64, n: i64) -> f64 {
    debug_assert!(n >= 0, "qpow exponent must be non-negative, got {n}");
    if n == 0 {
        1.0
    } else if n > i32::MAX as i64 {
        0.0
    } else {
        q.powi(n as i32)
    }
}

/// Untruncated law of the plain transmission: probability of moving from
/// state `i` to state `j`, i.e. of consuming `y = i − j + T` slots.
pub fn transition_random(p: SuccessProbability, spec: OnTimeSpec, i: i64, j: i64) -> f64 {
    let y = i - j + spec.target_interval() as i64;
    if y < 1 {
        0.0
    } else {
        p.value() * qpow(p.complement(), y - 1)
    }
}

/// Untruncated law of `Delay(n_d)`: the plain law shifted `n_d` slots.
pub fn transition_delay(
    p: SuccessProbability,
    spec: OnTimeSpec,
    n_d: u32,
    i: i64,
    j: i64,
) -> f64 {
    let y = i - j + spec.target_interval() as i64 - n_d as i64;
    if y < 1 {
        0.0
    } else {
        p.value() * qpow(p.complement(), y - 1)
    }
}

/// Law of `Drop`: deterministically `j = i + T`.
pub fn transition_drop(spec: OnTimeSpec, i: i64, j: i64) -> f64 {
    if j == i + spec.target_interval() as i64 {
        1.0
    } else {
        0.0
    }
}

/// Untruncated law of `Repeat(n_r)`; see the module docs for the three
/// regimes.
pub fn transition_repeat(
    p: SuccessProbability,
    spec: OnTimeSpec,
    n_r: u32,
    i: i64,
    j: i64,
) -> f64 {
    if n_r == 0 {
        // A zero budget never retransmits: same law, same code path.
        return transition_random(p, spec, i, j);
    }
    let t = spec.target_interval() as i64;
    let d = spec.delta() as i64;
    let pv = p.value();
    let q = p.complement();
    let n_r = n_r as i64;

    if i <= 1 + d {
        return transition_random(p, spec, i, j);
    }
    if i <= 1 + d + n_r {
        // Budget covers every pre-window slot (i − 1 − δ ≤ n_r), so it can
        // never run out: the packet completes on the first success at or
        // after transmission slot i − δ, i.e. y ≥ i − δ and j ≤ δ + T.
        // This is exactly the law of Delay(i − 1 − δ), and it is computed
        // by the same arithmetic so an optimizer sees the tie exactly and
        // resolves it by action order.
        return if j <= d + t { pv * qpow(q, d + t - j) } else { 0.0 };
    }
    // i > 1 + δ + n_r: the budget can genuinely be exhausted early.
    let y = i - j + t;
    if y <= n_r {
        0.0
    } else if y <= i - 1 - d {
        // Budget exhausted early: y is the slot of success n_r + 1.
        (ln_choose((y - 1) as u64, n_r as u64) + ((n_r + 1) as f64) * pv.ln()
            + ((y - 1 - n_r) as f64) * q.ln())
        .exp()
    } else {
        // At most n_r successes before slot i − δ (probability D_i), then
        // a fresh geometric wait.
        let d_i = binomial_head(pv, q, (i - 1 - d) as u64, n_r as u64);
        pv * d_i * qpow(q, t + d - j)
    }
}

/// Probability that the packet sent from state `i` with a plain
/// transmission lands in its window `[i − δ, i + δ]`.
pub fn reward_random(p: SuccessProbability, spec: OnTimeSpec, i: i64) -> f64 {
    let d = spec.delta() as i64;
    let q = p.complement();
    if i <= -d {
        0.0
    } else if i <= d {
        1.0 - qpow(q, i + d)
    } else {
        qpow(q, i - 1 - d) * (1.0 - qpow(q, 1 + 2 * d))
    }
}

/// On-time probability under `Delay(n_d)`: the plain reward from the
/// shifted state `i − n_d`.
pub fn reward_delay(p: SuccessProbability, spec: OnTimeSpec, n_d: u32, i: i64) -> f64 {
    reward_random(p, spec, i - n_d as i64)
}

/// A dropped packet is never on time.
pub fn reward_drop(_i: i64) -> f64 {
    0.0
}

/// On-time probability under `Repeat(n_r)`.
pub fn reward_repeat(p: SuccessProbability, spec: OnTimeSpec, n_r: u32, i: i64) -> f64 {
    if n_r == 0 {
        // A zero budget never retransmits: same value, same code path.
        return reward_random(p, spec, i);
    }
    let d = spec.delta() as i64;
    let q = p.complement();
    let n_r = n_r as i64;
    if i <= -d {
        0.0
    } else if i <= 1 + d {
        // Window reaches back to the first transmission slot (or repeats
        // cover the gap trivially): only overshooting past i + δ misses.
        1.0 - qpow(q, i + d)
    } else if i <= 1 + d + n_r {
        // Repeats bridge the whole early region; the final success falls
        // in the window unless all of its 1 + 2δ slots fail.
        1.0 - qpow(q, 1 + 2 * d)
    } else {
        // Reaching the window requires at most n_r successes before slot
        // i − δ; then the same window argument applies.
        let d_i = binomial_head(p.value(), q, (i - 1 - d) as u64, n_r as u64);
        d_i * (1.0 - qpow(q, 1 + 2 * d))
    }
}

/// One banded row of the truncated transition matrix: dense probabilities
/// for consecutive states starting at `first_state`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRow {
    /// State of the first entry in `probs`.
    pub first_state: i64,
    /// Probabilities for `first_state, first_state + 1, …`.
    pub probs: Box<[f64]>,
}

impl TransitionRow {
    /// Probability of landing on `state` (zero outside the band).
    pub fn prob_at(&self, state: i64) -> f64 {
        let off = state - self.first_state;
        if off < 0 || off >= self.probs.len() as i64 {
            0.0
        } else {
            self.probs[off as usize]
        }
    }

    /// Sum of the row (≈ 1 for a stochastic row).
    pub fn sum(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Expected value of `values` (indexed by state index) under this row.
    pub fn dot(&self, space: StateSpace, values: &[f64]) -> f64 {
        let base = space.index(self.first_state);
        self.probs
            .iter()
            .zip(&values[base..base + self.probs.len()])
            .map(|(p, v)| p * v)
            .sum()
    }

    fn atom(state: i64) -> Self {
        Self { first_state: state, probs: vec![1.0].into() }
    }
}

/// Builds the clamped row of a shifted-geometric law with top support `e`:
/// untruncated entries `p·q^{e−j}` for `j ≤ e`.
fn geometric_row(p: f64, q: f64, e: i64, space: StateSpace) -> TransitionRow {
    let lo = space.lower();
    let hi = space.upper();
    if e <= lo {
        return TransitionRow::atom(lo);
    }
    let top = e.min(hi);
    let mut probs = vec![0.0; (top - lo + 1) as usize];
    let mut acc = 0.0;
    if e > hi {
        // Mass above the interval, folded onto ι_max in closed form.
        let above = 1.0 - qpow(q, e - hi);
        probs[(hi - lo) as usize] += above;
        acc += above;
    }
    let mut term = if e > hi { p * qpow(q, e - hi) } else { p };
    for j in (lo + 1..=top).rev() {
        probs[(j - lo) as usize] += term;
        acc += term;
        term *= q;
    }
    // ι_min takes the exact deficit: below-range tail plus rounding.
    probs[0] += (1.0 - acc).max(0.0);
    TransitionRow { first_state: lo, probs: probs.into() }
}

/// Builds the clamped `Repeat(n_r)` row for regime 3 (`i > 1 + δ + n_r`),
/// given the precomputed tail coefficient `p·D_i`.
fn repeat_regime3_row(
    p: f64,
    q: f64,
    spec: OnTimeSpec,
    n_r: u32,
    i: i64,
    tail_scale: f64,
    space: StateSpace,
) -> TransitionRow {
    let t = spec.target_interval() as i64;
    let d = spec.delta() as i64;
    let lo = space.lower();
    let hi = space.upper();
    let n = n_r as i64;
    let e3 = i + t - n - 1; // top support, y = n_r + 1
    debug_assert!(e3 > t + d, "regime 3 requires i > 1 + δ + n_r");
    let top = e3.min(hi);
    let mut probs = vec![0.0; (top - lo + 1) as usize];
    let mut acc = 0.0;

    // Negative-binomial piece: j ∈ [T+δ+1, e3], y = i + T − j the slot of
    // success n_r + 1.
    let nb_bottom = (t + d + 1).max(lo + 1);
    if top >= nb_bottom {
        let y_top = (i + t - top) as u64;
        let mut term = if y_top == n_r as u64 + 1 {
            p.powi(n_r as i32 + 1)
        } else {
            (ln_choose(y_top - 1, n_r as u64)
                + ((n_r + 1) as f64) * p.ln()
                + ((y_top - 1 - n_r as u64) as f64) * q.ln())
            .exp()
        };
        let mut y = y_top;
        for j in (nb_bottom..=top).rev() {
            probs[(j - lo) as usize] += term;
            acc += term;
            if j > nb_bottom {
                y += 1;
                term *= ((y - 1) as f64) / ((y - 1 - n_r as u64) as f64) * q;
            }
        }
    }
    if e3 > hi {
        // Overshoot: at least n_r + 1 successes within the first
        // i + T − ι_max − 1 slots.
        let y0 = (i + t - hi - 1) as u64;
        let above = 1.0 - binomial_head(p, q, y0, n_r as u64);
        probs[(hi - lo) as usize] += above;
        acc += above;
    }

    // Geometric tail piece: j ≤ T + δ with coefficient p·D_i.
    let mut term = tail_scale;
    for j in (lo + 1..=(t + d)).rev() {
        probs[(j - lo) as usize] += term;
        acc += term;
        term *= q;
    }
    probs[0] += (1.0 - acc).max(0.0);
    TransitionRow { first_state: lo, probs: probs.into() }
}

/// Renormalized variant of a row: in-range untruncated mass rescaled to 1.
fn renormalize_row(
    p: SuccessProbability,
    spec: OnTimeSpec,
    action: Action,
    i: i64,
    space: StateSpace,
) -> TransitionRow {
    let law = |j: i64| -> f64 {
        match action {
            Action::Drop => transition_drop(spec, i, j),
            Action::Delay(n_d) => transition_delay(p, spec, n_d, i, j),
            Action::Repeat(n_r) => transition_repeat(p, spec, n_r, i, j),
        }
    };
    let lo = space.lower();
    let hi = space.upper();
    let mut probs: Vec<f64> = (lo..=hi).map(law).collect();
    let total: f64 = probs.iter().sum();
    if total > 0.0 {
        for v in &mut probs {
            *v /= total;
        }
    } else {
        // All untruncated mass lies outside: collapse onto the edge the
        // support sits beyond.
        let t = spec.target_interval() as i64;
        let top_support = match action {
            Action::Drop => i + t,
            Action::Delay(n_d) => i + t - 1 - n_d as i64,
            // Only regime 1 can end up here (regimes 2 and 3 always put
            // mass inside the validated window).
            Action::Repeat(_) => i + t - 1,
        };
        let edge = if top_support < lo { 0 } else { probs.len() - 1 };
        probs[edge] = 1.0;
    }
    // Trim leading/trailing zeros to keep the band tight.
    let first_nz = probs.iter().position(|v| *v > 0.0).unwrap_or(0);
    let last_nz = probs.iter().rposition(|v| *v > 0.0).unwrap_or(0);
    TransitionRow {
        first_state: lo + first_nz as i64,
        probs: probs[first_nz..=last_nz].to_vec().into(),
    }
}

/// A fully materialized finite MDP: banded transition rows and per-packet
/// rewards for every (state, action) pair.
#[derive(Debug, Clone)]
pub struct MdpModel {
    p: SuccessProbability,
    spec: OnTimeSpec,
    states: StateSpace,
    actions: ActionSpace,
    truncation: Truncation,
    /// `rows[action_index][state_index]`.
    rows: Vec<Vec<TransitionRow>>,
    /// `rewards[action_index][state_index]`.
    rewards: Vec<Vec<f64>>,
    /// `tail_scale[n_r][state_index] = p·D_i` for regime-3 states of
    /// `Repeat(n_r)`; entry 0 is unused (kept for direct indexing).
    tail_scale: Vec<Vec<f64>>,
}

impl MdpModel {
    /// Success probability the model was built for.
    pub fn success_probability(&self) -> SuccessProbability {
        self.p
    }

    /// Timing contract the model was built for.
    pub fn spec(&self) -> OnTimeSpec {
        self.spec
    }

    /// The truncated state interval.
    pub fn states(&self) -> StateSpace {
        self.states
    }

    /// The admissible actions.
    pub fn actions(&self) -> ActionSpace {
        self.actions
    }

    /// Truncation mode the rows were built with.
    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    /// Transition row for (`state`, `action`); `action` must be admissible
    /// and `state` in range.
    pub fn row(&self, state: i64, action: Action) -> &TransitionRow {
        let a = self.actions.index_of(action).expect("action not in the model's action space");
        &self.rows[a][self.states.index(state)]
    }

    /// Row by enumeration indices.
    pub fn row_by_index(&self, state_index: usize, action_index: usize) -> &TransitionRow {
        &self.rows[action_index][state_index]
    }

    /// Per-packet reward (on-time probability) for (`state`, `action`).
    pub fn reward(&self, state: i64, action: Action) -> f64 {
        let a = self.actions.index_of(action).expect("action not in the model's action space");
        self.rewards[a][self.states.index(state)]
    }

    /// Per-packet cost `1 − reward`.
    pub fn cost(&self, state: i64, action: Action) -> f64 {
        1.0 - self.reward(state, action)
    }

    /// Reward vector of one action over all states.
    pub fn rewards_for(&self, action_index: usize) -> &[f64] {
        &self.rewards[action_index]
    }

    /// Truncated transition probability `Pr{s' = j | s = i, action}`.
    pub fn transition_prob(&self, i: i64, action: Action, j: i64) -> f64 {
        self.row(i, action).prob_at(j)
    }

    /// Regime-3 tail coefficients `p·D_i` for `Repeat(n_r)`; used by the
    /// solver's closed-form sweep.
    pub(crate) fn tail_scales(&self, n_r: u32) -> &[f64] {
        &self.tail_scale[n_r as usize]
    }

    /// Writes every (state, action, next_state) probability plus the
    /// per-pair reward as CSV — intended for small state spaces.
    pub fn write_debug_dump<W: IoWrite>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# schema=model/v1")?;
        writeln!(w, "state,action_kind,param,reward,next_state,prob")?;
        for (a_idx, action) in self.actions.iter().enumerate() {
            for (s_idx, i) in self.states.iter().enumerate() {
                let row = &self.rows[a_idx][s_idx];
                let reward = self.rewards[a_idx][s_idx];
                for (k, prob) in row.probs.iter().enumerate() {
                    if *prob > 0.0 {
                        let j = row.first_state + k as i64;
                        writeln!(
                            w,
                            "{},{},{},{reward},{j},{prob}",
                            i,
                            action.kind(),
                            action.param()
                        )?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Builds the truncated model with the default clamp-and-sum truncation.
pub fn build_model(
    p: SuccessProbability,
    spec: OnTimeSpec,
    states: StateSpace,
    actions: ActionSpace,
) -> Result<MdpModel, MdpError> {
    build_model_truncated(p, spec, states, actions, Truncation::ClampAndSum)
}

/// Builds the truncated model with an explicit truncation mode.
pub fn build_model_truncated(
    p: SuccessProbability,
    spec: OnTimeSpec,
    states: StateSpace,
    actions: ActionSpace,
    truncation: Truncation,
) -> Result<MdpModel, MdpError> {
    let t = spec.target_interval() as i64;
    let d = spec.delta() as i64;
    if states.upper() < t + d {
        return Err(MdpError::WindowOutsideBounds { upper: states.upper(), needed: t + d });
    }
    if states.lower() > 0 {
        return Err(MdpError::PositiveLowerBound { lower: states.lower() });
    }
    let pv = p.value();
    let q = p.complement();
    let n_states = states.len();
    let n_actions = actions.len();

    // Regime-3 tail coefficients p·D_i, reused by rows, rewards and solver.
    let mut tail_scale = vec![Vec::new(); actions.max_repeats as usize + 1];
    for n_r in 1..=actions.max_repeats {
        let mut v = vec![0.0; n_states];
        for (s_idx, i) in states.iter().enumerate() {
            if i > 1 + d + n_r as i64 {
                v[s_idx] = pv * binomial_head(pv, q, (i - 1 - d) as u64, n_r as u64);
            }
        }
        tail_scale[n_r as usize] = v;
    }

    let mut rows: Vec<Vec<TransitionRow>> = Vec::with_capacity(n_actions);
    let mut rewards: Vec<Vec<f64>> = Vec::with_capacity(n_actions);
    for action in actions.iter() {
        let mut a_rows = Vec::with_capacity(n_states);
        let mut a_rewards = Vec::with_capacity(n_states);
        for (s_idx, i) in states.iter().enumerate() {
            let row = match (truncation, action) {
                (Truncation::Renormalize, _) => renormalize_row(p, spec, action, i, states),
                (_, Action::Drop) => TransitionRow::atom(states.clamp(i + t)),
                (_, Action::Delay(n_d)) => geometric_row(pv, q, i + t - 1 - n_d as i64, states),
                (_, Action::Repeat(n_r)) => {
                    if n_r == 0 || i <= 1 + d {
                        // Same law as Delay(0), built by the same code so
                        // the rows are bit-identical.
                        geometric_row(pv, q, i + t - 1, states)
                    } else if i <= 1 + d + n_r as i64 {
                        // A budget that covers the whole pre-window gap acts
                        // as a pure wait: the row is the one Delay(i − 1 − δ)
                        // builds, bit for bit, so exact ties between the two
                        // actions resolve by action order.
                        geometric_row(pv, q, d + t, states)
                    } else {
                        repeat_regime3_row(
                            pv,
                            q,
                            spec,
                            n_r,
                            i,
                            tail_scale[n_r as usize][s_idx],
                            states,
                        )
                    }
                }
            };
            a_rows.push(row);
            a_rewards.push(match action {
                Action::Drop => reward_drop(i),
                Action::Delay(n_d) => reward_delay(p, spec, n_d, i),
                Action::Repeat(n_r) => reward_repeat(p, spec, n_r, i),
            });
        }
        rows.push(a_rows);
        rewards.push(a_rewards);
    }

    Ok(MdpModel { p, spec, states, actions, truncation, rows, rewards, tail_scale })
}
