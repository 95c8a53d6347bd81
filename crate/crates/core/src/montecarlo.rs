//! Monte Carlo simulation of packet streams at the slot level.
//!
//! The simulator is the empirical check on everything else in this crate:
//! it runs the actual protocol — generate packet `m`, consult the
//! transmission mode, spend slots on waiting and transmission attempts,
//! record whether the completion slot landed within `±δ` of the deadline
//! `m·T` — and reports on-time rates with replication-based standard
//! errors.  Agreement with [`crate::analytics`] and with the value
//! recursions of [`crate::solver`] is asserted in the test suites rather
//! than assumed.
//!
//! ## Determinism
//!
//! Every replication derives its own stream seed from the master seed via
//! a SplitMix64 scramble, so replication `r` produces the same sequence
//! regardless of how many worker threads run or which one picks it up.
//! Results are merged in replication order; reruns with the same
//! configuration are bit-identical.
//!
//! ## The repeat protocol
//!
//! A packet scheduled with `Repeat(n_r)` is transmitted every slot; each
//! slot succeeds independently with probability `p`.  A success before
//! the on-time window opens is discarded and the packet retransmitted —
//! at most `n_r` times; a success once the window is open (or the first
//! success after the budget is spent) completes the packet.  Early
//! completions therefore get pushed toward the window, which is exactly
//! the distribution [`crate::analytics::repeat_ccdf`] describes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write as IoWrite;

use crate::analytics::OnTimeSpec;
use crate::channel::{sample_transmission_time, RngSeed, SuccessProbability};
use crate::mdp::Action;
use crate::solver::Policy;

/// Schema tag written at the top of simulation CSV output.
pub const SIMULATE_SCHEMA: &str = "simulate/v1";

/// Deviation histogram coverage: completion-slot offsets from the deadline
/// in `[-50, 50]` get their own bin; everything else lands in the
/// underflow/overflow counters.
pub const DEVIATION_MIN: i64 = -50;
/// Upper edge of the binned deviation range.
pub const DEVIATION_MAX: i64 = 50;

/// How the stream chooses per-packet actions.
#[derive(Debug, Clone, PartialEq)]
pub enum TransmissionMode {
    /// Every packet is transmitted immediately (equivalently `Delay(0)`).
    Random,
    /// Per-state actions from a stationary policy; lookups outside the
    /// policy's interval clamp to its edges.
    Scheduled(Policy),
}

/// A complete simulation request.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Per-slot success probability of the channel.
    pub p: SuccessProbability,
    /// Generation interval and on-time slack.
    pub spec: OnTimeSpec,
    /// Packets per replication (`M`).
    pub packets: u64,
    /// Action selection.
    pub mode: TransmissionMode,
    /// Master seed; replication streams derive from it.
    pub master_seed: RngSeed,
    /// Independent replications to run and pool.
    pub replications: u32,
}

/// Histogram of completion-slot deviations from the deadline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationHistogram {
    /// Count of deviations below [`DEVIATION_MIN`].
    pub underflow: u64,
    /// Count of deviations above [`DEVIATION_MAX`].
    pub overflow: u64,
    /// One bin per deviation in `[DEVIATION_MIN, DEVIATION_MAX]`.
    pub bins: Vec<u64>,
}

impl Default for DeviationHistogram {
    fn default() -> Self {
        Self {
            underflow: 0,
            overflow: 0,
            bins: vec![0; (DEVIATION_MAX - DEVIATION_MIN + 1) as usize],
        }
    }
}

impl DeviationHistogram {
    /// Records one completion deviation.
    pub fn record(&mut self, deviation: i64) {
        if deviation < DEVIATION_MIN {
            self.underflow += 1;
        } else if deviation > DEVIATION_MAX {
            self.overflow += 1;
        } else {
            self.bins[(deviation - DEVIATION_MIN) as usize] += 1;
        }
    }

    /// Count in the bin for `deviation`, which must lie in the binned range.
    pub fn count(&self, deviation: i64) -> u64 {
        assert!(
            (DEVIATION_MIN..=DEVIATION_MAX).contains(&deviation),
            "deviation {deviation} outside the binned range"
        );
        self.bins[(deviation - DEVIATION_MIN) as usize]
    }

    /// All recorded completions, including both tails.
    pub fn total(&self) -> u64 {
        self.underflow + self.overflow + self.bins.iter().sum::<u64>()
    }

    /// `(deviation, count)` pairs over the binned range.
    pub fn iter(&self) -> impl Iterator<Item = (i64, u64)> + '_ {
        self.bins.iter().enumerate().map(|(i, c)| (DEVIATION_MIN + i as i64, *c))
    }

    fn merge(&mut self, other: &Self) {
        self.underflow += other.underflow;
        self.overflow += other.overflow;
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            *a += b;
        }
    }
}

/// Tally of which actions the stream used.
///
/// `delays` and `repeats` are indexed by the *chosen* parameter (`n_d`
/// resp. `n_r`); `retransmissions_used` is indexed by how many
/// retransmissions a repeat-scheduled packet actually consumed.  The
/// uncontrolled stream counts every packet under `delays[0]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionUsage {
    /// Packets discarded without transmission.
    pub dropped: u64,
    /// Packets scheduled as `Delay(n_d)`, indexed by `n_d`.
    pub delays: Vec<u64>,
    /// Packets scheduled as `Repeat(n_r)`, indexed by `n_r`.
    pub repeats: Vec<u64>,
    /// Retransmissions actually consumed by repeat-scheduled packets.
    pub retransmissions_used: Vec<u64>,
}

fn bump(v: &mut Vec<u64>, idx: usize) {
    if v.len() <= idx {
        v.resize(idx + 1, 0);
    }
    v[idx] += 1;
}

fn merge_counts(a: &mut Vec<u64>, b: &[u64]) {
    if a.len() < b.len() {
        a.resize(b.len(), 0);
    }
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

impl ActionUsage {
    /// Packets that were transmitted (not dropped).
    pub fn transmitted(&self) -> u64 {
        self.delays.iter().sum::<u64>() + self.repeats.iter().sum::<u64>()
    }

    /// Fraction helpers over a packet total.
    pub fn drop_fraction(&self, packets: u64) -> f64 {
        self.dropped as f64 / packets as f64
    }

    /// Fraction of packets scheduled with a strictly positive delay.
    pub fn delayed_fraction(&self, packets: u64) -> f64 {
        self.delays.iter().skip(1).sum::<u64>() as f64 / packets as f64
    }

    /// Fraction of packets scheduled with a strictly positive repeat budget.
    pub fn repeat_fraction(&self, packets: u64) -> f64 {
        self.repeats.iter().skip(1).sum::<u64>() as f64 / packets as f64
    }

    /// The most frequently chosen strictly positive parameter, if any.
    pub fn modal_positive(counts: &[u64]) -> Option<usize> {
        counts
            .iter()
            .enumerate()
            .skip(1)
            .max_by(|(i, a), (j, b)| a.cmp(b).then(j.cmp(i)))
            .filter(|(_, c)| **c > 0)
            .map(|(i, _)| i)
    }

    fn merge(&mut self, other: &Self) {
        self.dropped += other.dropped;
        merge_counts(&mut self.delays, &other.delays);
        merge_counts(&mut self.repeats, &other.repeats);
        merge_counts(&mut self.retransmissions_used, &other.retransmissions_used);
    }
}

/// Everything one replication produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceOutcome {
    /// On-time packets in this replication.
    pub on_time: u64,
    /// Per-packet on-time flags, index `m − 1`.
    pub per_packet: Vec<bool>,
    /// Completion deviations.
    pub deviations: DeviationHistogram,
    /// Actions used.
    pub usage: ActionUsage,
    /// Slots consumed altogether.
    pub total_slots: u64,
    /// Slots spent waiting before transmission.
    pub delay_slots: u64,
    /// Slots spent transmitting.
    pub transmission_slots: u64,
}

/// Pooled results over all replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    /// Packets per replication.
    pub packets: u64,
    /// Replications pooled.
    pub replications: u32,
    /// Mean on-time count per replication.
    pub kappa_mean: f64,
    /// Mean on-time rate (`kappa_mean / packets`).
    pub rate_mean: f64,
    /// Standard error of the per-replication rates; `None` for a single
    /// replication.
    pub rate_std_error: Option<f64>,
    /// On-time rate of each replication, in replication order.
    pub per_replication_rates: Vec<f64>,
    /// For each packet index, in how many replications it was on time.
    pub per_packet_on_time: Vec<u64>,
    /// Completion deviations pooled over replications.
    pub deviation_histogram: DeviationHistogram,
    /// Action usage pooled over replications.
    pub action_usage: ActionUsage,
    /// Total slots consumed, pooled.
    pub total_slots: u64,
    /// Waiting slots, pooled.
    pub delay_slots: u64,
    /// Transmission slots, pooled.
    pub transmission_slots: u64,
}

impl SimResult {
    /// Empirical on-time probability of packet `m` (1-based).
    pub fn per_packet_rate(&self, m: u64) -> f64 {
        self.per_packet_on_time[m as usize - 1] as f64 / self.replications as f64
    }

    /// Writes the pooled result as sectioned CSV under
    /// [`SIMULATE_SCHEMA`].
    pub fn write_csv<W: IoWrite>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# schema={SIMULATE_SCHEMA}")?;
        writeln!(w, "section,key,value")?;
        writeln!(w, "summary,packets,{}", self.packets)?;
        writeln!(w, "summary,replications,{}", self.replications)?;
        writeln!(w, "summary,kappa_mean,{}", self.kappa_mean)?;
        writeln!(w, "summary,rate_mean,{}", self.rate_mean)?;
        match self.rate_std_error {
            Some(se) => writeln!(w, "summary,rate_std_error,{se}")?,
            None => writeln!(w, "summary,rate_std_error,")?,
        }
        writeln!(w, "summary,total_slots,{}", self.total_slots)?;
        writeln!(w, "summary,delay_slots,{}", self.delay_slots)?;
        writeln!(w, "summary,transmission_slots,{}", self.transmission_slots)?;
        for (r, rate) in self.per_replication_rates.iter().enumerate() {
            writeln!(w, "replication,{r},{rate}")?;
        }
        for (m, count) in self.per_packet_on_time.iter().enumerate() {
            writeln!(w, "packet,{},{count}", m + 1)?;
        }
        writeln!(w, "deviation,underflow,{}", self.deviation_histogram.underflow)?;
        for (dev, count) in self.deviation_histogram.iter() {
            writeln!(w, "deviation,{dev},{count}")?;
        }
        writeln!(w, "deviation,overflow,{}", self.deviation_histogram.overflow)?;
        writeln!(w, "usage,drop,{}", self.action_usage.dropped)?;
        for (n_d, count) in self.action_usage.delays.iter().enumerate() {
            writeln!(w, "usage,delay:{n_d},{count}")?;
        }
        for (n_r, count) in self.action_usage.repeats.iter().enumerate() {
            writeln!(w, "usage,repeat:{n_r},{count}")?;
        }
        for (used, count) in self.action_usage.retransmissions_used.iter().enumerate() {
            writeln!(w, "usage,retransmissions:{used},{count}")?;
        }
        Ok(())
    }
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 scramble, the standard one-shot mixer.
fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream seed for replication `r`: the `(r+1)`-th output of the
/// SplitMix64 sequence started at the master seed.  Distinct replications
/// get decorrelated ChaCha streams regardless of thread scheduling.
pub fn replication_seed(master: RngSeed, replication: u32) -> u64 {
    splitmix64(master.0.wrapping_add((replication as u64).wrapping_mul(GOLDEN)))
}

/// One packet under the repeat protocol, counting elapsed slots.
///
/// `window_start` is the elapsed slot count at which the on-time window
/// opens; a success at or after it — or any success once `budget`
/// retransmissions are spent — completes the packet.
fn repeat_trial<R: Rng + ?Sized>(
    p: f64,
    window_start: i64,
    budget: u32,
    rng: &mut R,
) -> (u64, u32) {
    let mut used = 0u32;
    let mut elapsed: u64 = 0;
    loop {
        elapsed += 1;
        if rng.random::<f64>() < p {
            if elapsed as i64 >= window_start || used == budget {
                return (elapsed, used);
            }
            used += 1;
        }
    }
}

/// Slots consumed by a single packet scheduled as `Repeat(n_r)` from the
/// start state (deadline `T` slots after generation).  This is the
/// protocol-level twin of [`crate::analytics::repeat_ccdf`]: the returned
/// `Y` satisfies `Pr{Y − T > j} = repeat_ccdf(p, spec, n_r, j)`.
pub fn single_packet_repeat_trial<R: Rng + ?Sized>(
    p: SuccessProbability,
    spec: OnTimeSpec,
    n_r: u32,
    rng: &mut R,
) -> u64 {
    let window_start = spec.target_interval() as i64 - spec.delta() as i64;
    repeat_trial(p.value(), window_start, n_r, rng).0
}

/// Runs replication `replication` of `config` on its derived stream.
pub fn simulate_sequence(config: &SimConfig, replication: u32) -> SequenceOutcome {
    assert!(config.packets >= 1, "at least one packet per replication");
    let mut rng = ChaCha12Rng::seed_from_u64(replication_seed(config.master_seed, replication));
    let p = config.p;
    let t = config.spec.target_interval() as i64;
    let d = config.spec.delta() as i64;

    let mut outcome = SequenceOutcome {
        on_time: 0,
        per_packet: Vec::with_capacity(config.packets as usize),
        deviations: DeviationHistogram::default(),
        usage: ActionUsage::default(),
        total_slots: 0,
        delay_slots: 0,
        transmission_slots: 0,
    };

    // Packet m is generated at slot g (g = 1 for the first) and due at
    // slot m·T; its scheduling state is s = m·T − g + 1.
    let mut g: i64 = 1;
    for m in 1..=config.packets as i64 {
        let deadline = m * t;
        let state = deadline - g + 1;
        let action = match &config.mode {
            TransmissionMode::Random => Action::Delay(0),
            TransmissionMode::Scheduled(policy) => policy.action(state),
        };
        match action {
            Action::Drop => {
                outcome.usage.dropped += 1;
                outcome.per_packet.push(false);
                // No slots consumed; the next packet keeps this generation
                // slot.
            }
            Action::Delay(n_d) => {
                bump(&mut outcome.usage.delays, n_d as usize);
                let s_slots = sample_transmission_time(p, &mut rng);
                let consumed = n_d as u64 + s_slots;
                let completion = g + consumed as i64 - 1;
                let deviation = completion - deadline;
                outcome.deviations.record(deviation);
                let on_time = deviation.abs() <= d;
                outcome.per_packet.push(on_time);
                outcome.on_time += on_time as u64;
                outcome.total_slots += consumed;
                outcome.delay_slots += n_d as u64;
                outcome.transmission_slots += s_slots;
                g = completion + 1;
            }
            Action::Repeat(n_r) => {
                bump(&mut outcome.usage.repeats, n_r as usize);
                let window_start = state - d;
                let (y, used) = repeat_trial(p.value(), window_start, n_r, &mut rng);
                bump(&mut outcome.usage.retransmissions_used, used as usize);
                let completion = g + y as i64 - 1;
                let deviation = completion - deadline;
                outcome.deviations.record(deviation);
                let on_time = deviation.abs() <= d;
                outcome.per_packet.push(on_time);
                outcome.on_time += on_time as u64;
                outcome.total_slots += y;
                outcome.transmission_slots += y;
                g = completion + 1;
            }
        }
    }
    outcome
}

/// Runs all replications (in parallel when threads are available) and
/// pools them.  Replication streams are seed-derived, and the merge walks
/// replication order, so the result does not depend on thread count.
pub fn replicate(config: &SimConfig) -> SimResult {
    assert!(config.replications >= 1, "at least one replication");
    let outcomes: Vec<SequenceOutcome> = (0..config.replications)
        .into_par_iter()
        .map(|r| simulate_sequence(config, r))
        .collect();

    let packets = config.packets;
    let mut per_packet_on_time = vec![0u64; packets as usize];
    let mut deviation_histogram = DeviationHistogram::default();
    let mut action_usage = ActionUsage::default();
    let mut total_slots = 0u64;
    let mut delay_slots = 0u64;
    let mut transmission_slots = 0u64;
    let mut per_replication_rates = Vec::with_capacity(outcomes.len());
    let mut kappa_sum = 0.0f64;
    for outcome in &outcomes {
        for (slot, flag) in per_packet_on_time.iter_mut().zip(&outcome.per_packet) {
            *slot += *flag as u64;
        }
        deviation_histogram.merge(&outcome.deviations);
        action_usage.merge(&outcome.usage);
        total_slots += outcome.total_slots;
        delay_slots += outcome.delay_slots;
        transmission_slots += outcome.transmission_slots;
        per_replication_rates.push(outcome.on_time as f64 / packets as f64);
        kappa_sum += outcome.on_time as f64;
    }
    let r = config.replications as f64;
    let kappa_mean = kappa_sum / r;
    let rate_mean = kappa_mean / packets as f64;
    let rate_std_error = (config.replications > 1).then(|| {
        let var = per_replication_rates
            .iter()
            .map(|x| (x - rate_mean).powi(2))
            .sum::<f64>()
            / (r - 1.0);
        (var / r).sqrt()
    });
    SimResult {
        packets,
        replications: config.replications,
        kappa_mean,
        rate_mean,
        rate_std_error,
        per_replication_rates,
        per_packet_on_time,
        deviation_histogram,
        action_usage,
        total_slots,
        delay_slots,
        transmission_slots,
    }
}
