//! Closed-form on-time reception probabilities.
//!
//! A source generates packet `m` and hands it to the transmitter as soon as
//! packet `m−1` is through (packet 1 starts in slot 1).  Packet `m` counts
//! as *δ-on-time* when its reception slot lands inside the window
//! `[m·T − δ, m·T + δ]` around its target `m·T`, where `T` is the target
//! inter-delivery interval and `δ` the tolerance.  Over `M` packets the
//! on-time rate is `κ_M / M`, with `κ_M` the expected number of on-time
//! packets.
//!
//! With per-slot success probability `p` (see [`crate::channel`]) and
//! back-to-back transmissions, packet `m` completes at slot
//! `S_1 + … + S_m`, a negative-binomial sum of geometric times, which gives
//! every quantity here in closed form:
//!
//! * [`prob_first_on_time`] — the first packet alone,
//! * [`prob_mth_on_time`] — packet `m` in the uncontrolled stream,
//! * [`expected_on_time_count`] / [`AnalyticResult`] — `κ_M` and the rate,
//! * [`repeat_ccdf`] / [`prob_on_time_with_repeats`] — a single packet
//!   under the early-repeat protocol with a retransmission budget,
//! * [`nested_sum_identity`] — the combinatorial count behind the
//!   negative-binomial window sums, kept as a literal nested summation so
//!   tests can pit it against the closed form.
//!
//! ## Numerics
//!
//! Window sums are evaluated from an anchor term computed in log space
//! (`lgamma`-based binomial coefficients) and extended by exact term
//! ratios, so no intermediate factorial or power over- or underflows even
//! for packet indices in the millions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::SuccessProbability;

/// Timing contract for a packet stream: deliveries are due every
/// `target_interval` slots, with `delta` slots of slack on each side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OnTimeSpec {
    target_interval: u32,
    delta: u32,
}

/// Validation failures for [`OnTimeSpec`].
#[derive(Debug, Error, PartialEq, Eq)]
pub enum SpecError {
    /// The target interval must span at least one slot.
    #[error("target interval must be at least 1 slot, got 0")]
    ZeroTargetInterval,
}

impl OnTimeSpec {
    /// Builds a spec, rejecting a zero target interval.
    pub fn new(target_interval: u32, delta: u32) -> Result<Self, SpecError> {
        if target_interval == 0 {
            return Err(SpecError::ZeroTargetInterval);
        }
        Ok(Self { target_interval, delta })
    }

    /// Target inter-delivery interval `T` in slots.
    pub fn target_interval(self) -> u32 {
        self.target_interval
    }

    /// On-time tolerance `δ` in slots.
    pub fn delta(self) -> u32 {
        self.delta
    }
}

/// `ln C(n, k)` for `k ≤ n`, via `lgamma`.
pub(crate) fn ln_choose(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    libm::lgamma((n + 1) as f64) - libm::lgamma((k + 1) as f64) - libm::lgamma((n - k + 1) as f64)
}

/// Head of a binomial distribution: `Σ_{m=0}^{min(cap, n)} C(n,m) p^m q^{n−m}`.
///
/// Anchored at the in-range mode and extended with exact term ratios in
/// both directions, so the result stays accurate even when `q^n` alone
/// would underflow.  `cap ≥ n` short-circuits to 1 (the full sum).
pub(crate) fn binomial_head(p: f64, q: f64, n: u64, cap: u64) -> f64 {
    if cap >= n {
        return 1.0;
    }
    if q <= 0.0 {
        // p = 1: all mass sits at m = n, which cap < n excludes.
        return 0.0;
    }
    let mode = (((n + 1) as f64) * p).floor() as u64;
    let m0 = mode.min(cap);
    let t0 = (ln_choose(n, m0) + (m0 as f64) * p.ln() + ((n - m0) as f64) * q.ln()).exp();
    let mut sum = t0;
    // Downward leg m0 → 0: t(m−1) = t(m) · m/(n−m+1) · q/p.
    let mut t = t0;
    for m in (1..=m0).rev() {
        t *= (m as f64) / ((n - m + 1) as f64) * (q / p);
        sum += t;
    }
    // Upward leg m0 → cap: t(m+1) = t(m) · (n−m)/(m+1) · p/q.
    let mut t = t0;
    for m in m0..cap {
        t *= ((n - m) as f64) / ((m + 1) as f64) * (p / q);
        sum += t;
    }
    sum.min(1.0)
}

/// Probability that the very first packet arrives δ-on-time.
///
/// The first packet completes at slot `S ~ Geometric(p)`, so this is
/// `Pr{T − δ ≤ S ≤ T + δ}`: `1 − q^{T+δ}` when the window already starts
/// at slot 1 (`T ≤ 1 + δ`), and `q^{T−δ−1} − q^{T+δ}` otherwise.
pub fn prob_first_on_time(p: SuccessProbability, spec: OnTimeSpec) -> f64 {
    let q = p.complement();
    let t = spec.target_interval() as i32;
    let d = spec.delta() as i32;
    if t <= 1 + d {
        1.0 - q.powi(t + d)
    } else {
        q.powi(t - d - 1) - q.powi(t + d)
    }
}

/// Probability that packet `m ≥ 1` of the uncontrolled stream is δ-on-time.
///
/// Packet `m` completes at a negative-binomial slot `k` (the `m`-th
/// success), so this sums `C(k−1, m−1) p^m q^{k−m}` over the window slots
/// `k ∈ [max(m, mT−δ), mT+δ]`.
pub fn prob_mth_on_time(p: SuccessProbability, spec: OnTimeSpec, m: u32) -> f64 {
    assert!(m >= 1, "packet index is 1-based");
    let m = m as u64;
    let t = spec.target_interval() as u64;
    let d = spec.delta() as u64;
    let lo = m.max((m * t).saturating_sub(d));
    let hi = m * t + d;
    let pv = p.value();
    let q = p.complement();
    if q <= 0.0 {
        // Deterministic link: completion at slot m exactly.
        return if lo <= m && m <= hi { 1.0 } else { 0.0 };
    }
    // Anchor at k = lo in log space, then step with the exact ratio
    // term(k+1)/term(k) = k/(k+1−m) · q.
    let mut term = (ln_choose(lo - 1, m - 1) + (m as f64) * pv.ln() + ((lo - m) as f64) * q.ln()).exp();
    let mut sum = term;
    for k in lo..hi {
        term *= (k as f64) / ((k + 1 - m) as f64) * q;
        sum += term;
    }
    sum
}

/// Expected number of δ-on-time packets among the first `m_packets`,
/// `κ_M = Σ_{m=1}^{M} Pr{packet m on time}`.
pub fn expected_on_time_count(p: SuccessProbability, spec: OnTimeSpec, m_packets: u32) -> f64 {
    (1..=m_packets).map(|m| prob_mth_on_time(p, spec, m)).sum()
}

/// Per-packet probabilities together with their aggregate count and rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticResult {
    /// `Pr{packet m on time}` for `m = 1..=M`.
    pub per_packet: Vec<f64>,
    /// Expected on-time count `κ_M` (sum of the above).
    pub expected_count: f64,
    /// Expected on-time rate `κ_M / M`.
    pub rate: f64,
}

impl AnalyticResult {
    /// Evaluates the closed forms for every packet up to `m_packets ≥ 1`.
    pub fn compute(p: SuccessProbability, spec: OnTimeSpec, m_packets: u32) -> Self {
        assert!(m_packets >= 1, "need at least one packet");
        let per_packet: Vec<f64> =
            (1..=m_packets).map(|m| prob_mth_on_time(p, spec, m)).collect();
        let expected_count = per_packet.iter().sum();
        Self { per_packet, expected_count, rate: expected_count / m_packets as f64 }
    }
}

/// Complementary CDF `Pr{Ψ > j}` of the deviation `Ψ = Y − T` for a single
/// packet sent under the early-repeat protocol.
///
/// The transmitter keeps retransmitting a packet that got through *early*
/// (before slot `T − δ`) as long as budget remains, up to `n_r` repeats;
/// `Y` is the slot of the last reception.  A budget beyond `T − 1 − δ`
/// can never be spent, so only the effective budget
/// `r = min(n_r, T − 1 − δ)` enters.  Writing `B(n, c)` for the binomial
/// head `Σ_{m=0}^{min(c,n)} C(n,m) p^m q^{n−m}`:
///
/// * `j ≥ −1−δ`: `q^{j+1+δ} · B(T−δ−1, r)` — the final reception must
///   still be pending after slot `j + T`, having spent at most `r`
///   successes during the forced-repeat slots;
/// * `−T < j < −1−δ`: `B(j+T, r)` — at most `r` successes may have
///   occurred in the first `j + T` slots (fewer than `r + 1` successes
///   means transmission is still ongoing);
/// * `j ≤ −T`: 1, since `Y ≥ 1 > j + T`.
///
/// At `j = −1−δ` the first two branches are the same expression, so the
/// boundary assignment is immaterial.  When `T ≤ 1 + δ` no completion can
/// ever be early and the CCDF is that of the plain geometric time.
pub fn repeat_ccdf(p: SuccessProbability, spec: OnTimeSpec, n_r: u32, j: i64) -> f64 {
    let t = spec.target_interval() as i64;
    let d = spec.delta() as i64;
    let pv = p.value();
    let q = p.complement();

    if q <= 0.0 {
        // Deterministic link: every attempt takes one slot, so repeats are
        // spent back-to-back until the window opens or the budget is gone.
        let y = if t <= 1 + d { 1 } else { 1 + (n_r as i64).min(t - 1 - d) };
        return if y - t > j { 1.0 } else { 0.0 };
    }

    if t <= 1 + d {
        // No repeat can ever fire: Ψ = S − T with S geometric.
        return if j + t <= 0 { 1.0 } else { q.powi((j + t) as i32) };
    }

    let r = (n_r as i64).min(t - 1 - d) as u64;
    if j >= -1 - d {
        q.powi((j + 1 + d) as i32) * binomial_head(pv, q, (t - 1 - d) as u64, r)
    } else if j + t <= 0 {
        1.0
    } else {
        binomial_head(pv, q, (j + t) as u64, r)
    }
}

/// Probability that a single packet under the early-repeat protocol lands
/// δ-on-time: `Pr{−δ ≤ Ψ ≤ δ}` via [`repeat_ccdf`].
pub fn prob_on_time_with_repeats(p: SuccessProbability, spec: OnTimeSpec, n_r: u32) -> f64 {
    let d = spec.delta() as i64;
    repeat_ccdf(p, spec, n_r, -d - 1) - repeat_ccdf(p, spec, n_r, d)
}

/// Number of `m`-tuples of positive integers with sum at most `z − 1`,
/// evaluated as the literal nested summation
/// `Σ_{i_1 ≥ 1} Σ_{i_2 ≥ 1} … Σ_{i_m ≥ 1} [i_1 + … + i_m ≤ z−1] 1`.
///
/// This count is the number of ways `m` earlier successes can fall before
/// a final one at slot `z`, i.e. the coefficient `C(z−1, m)` — but the
/// point of this function is to *not* use the closed form, so equality is
/// something a test can assert rather than a restatement.
pub fn nested_sum_identity(z: u32, m: u32) -> u64 {
    fn count(m: u32, budget: u32) -> u64 {
        if m == 0 {
            return 1;
        }
        let mut total = 0u64;
        let mut i = 1u32;
        // Leave room for the remaining m−1 summands, each at least 1.
        while i + (m - 1) <= budget {
            total += count(m - 1, budget - i);
            i += 1;
        }
        total
    }
    count(m, z.saturating_sub(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p(v: f64) -> SuccessProbability {
        SuccessProbability::new(v).unwrap()
    }

    fn spec(t: u32, d: u32) -> OnTimeSpec {
        OnTimeSpec::new(t, d).unwrap()
    }

    #[test]
    fn spec_rejects_zero_interval() {
        assert_eq!(OnTimeSpec::new(0, 3), Err(SpecError::ZeroTargetInterval));
        let s = spec(5, 1);
        assert_eq!((s.target_interval(), s.delta()), (5, 1));
    }

    #[test]
    fn first_packet_probability_matches_hand_computation() {
        // Window [4, 6] for a geometric time: q³ − q⁶ = 0.8³ − 0.8⁶.
        assert_relative_eq!(
            prob_first_on_time(p(0.2), spec(5, 1)),
            0.249856,
            epsilon = 1e-12
        );
        // Window reaches slot 1 (T ≤ 1 + δ): 1 − q^{T+δ}.
        assert_relative_eq!(prob_first_on_time(p(0.2), spec(1, 1)), 0.36, epsilon = 1e-12);
        assert_relative_eq!(
            prob_first_on_time(p(0.2), spec(2, 1)),
            1.0 - 0.8f64.powi(3),
            epsilon = 1e-12
        );
    }

    #[test]
    fn second_packet_probability_matches_hand_computation() {
        // Window [9, 11], terms C(k−1,1) p² q^{k−2} for k = 9, 10, 11.
        assert_relative_eq!(
            prob_mth_on_time(p(0.2), spec(5, 1), 2),
            0.1811939328,
            epsilon = 1e-12
        );
    }

    #[test]
    fn first_packet_agrees_with_general_formula() {
        for (pv, t, d) in [(0.2, 5, 1), (0.2, 1, 0), (0.5, 4, 2), (0.9, 3, 3), (0.35, 10, 0)] {
            assert_relative_eq!(
                prob_first_on_time(p(pv), spec(t, d)),
                prob_mth_on_time(p(pv), spec(t, d), 1),
                epsilon = 1e-13
            );
        }
    }

    #[test]
    fn deterministic_link_is_on_time_only_when_window_reaches_its_slot() {
        // With p = 1 packet m completes at slot m; on time iff m ≥ mT − δ.
        assert_eq!(prob_mth_on_time(p(1.0), spec(1, 0), 7), 1.0);
        assert_eq!(prob_mth_on_time(p(1.0), spec(5, 1), 1), 0.0);
        assert_eq!(prob_mth_on_time(p(1.0), spec(2, 1), 1), 1.0);
        assert_eq!(prob_mth_on_time(p(1.0), spec(2, 1), 2), 0.0);
    }

    #[test]
    fn analytic_result_aggregates_per_packet_terms() {
        let r = AnalyticResult::compute(p(0.2), spec(5, 1), 20);
        assert_eq!(r.per_packet.len(), 20);
        let kappa: f64 = r.per_packet.iter().sum();
        assert_relative_eq!(r.expected_count, kappa, epsilon = 1e-12);
        assert_relative_eq!(r.rate, kappa / 20.0, epsilon = 1e-12);
        assert_relative_eq!(
            r.expected_count,
            expected_on_time_count(p(0.2), spec(5, 1), 20),
            epsilon = 1e-12
        );
    }

    #[test]
    fn repeat_ccdf_matches_hand_computed_window_sums() {
        // Effective budget r = 5 < T−1−δ = 18.
        let s = spec(20, 1);
        let head18: f64 = (0..=5u64)
            .map(|m| ln_choose(18, m).exp() * 0.2f64.powi(m as i32) * 0.8f64.powi(18 - m as i32))
            .sum();
        assert_relative_eq!(repeat_ccdf(p(0.2), s, 5, -2), head18, epsilon = 1e-12);

        let head14: f64 = (0..=5u64)
            .map(|m| ln_choose(14, m).exp() * 0.2f64.powi(m as i32) * 0.8f64.powi(14 - m as i32))
            .sum();
        assert_relative_eq!(repeat_ccdf(p(0.2), s, 5, -6), head14, epsilon = 1e-12);
    }

    #[test]
    fn repeat_ccdf_with_zero_budget_is_plain_geometric() {
        for (pv, t, d) in [(0.2f64, 20u32, 1u32), (0.5, 4, 2), (0.2, 5, 1), (0.7, 3, 0)] {
            for j in -25..=25i64 {
                let plain = {
                    let jt = j + t as i64;
                    if jt <= 0 { 1.0 } else { (1.0 - pv).powi(jt as i32) }
                };
                assert_relative_eq!(
                    repeat_ccdf(p(pv), spec(t, d), 0, j),
                    plain,
                    epsilon = 1e-12,
                    max_relative = 1e-12
                );
            }
        }
    }

    #[test]
    fn repeat_ccdf_boundary_branches_coincide() {
        // At j = −1−δ the pending-after branch and the head branch are the
        // same expression; check the seam is smooth numerically.
        let s = spec(20, 3);
        let j = -4i64;
        let upper = repeat_ccdf(p(0.2), s, 7, j);
        let q = 0.8f64;
        let head = binomial_head(0.2, q, 16, 7);
        assert_relative_eq!(upper, q.powi((j + 4) as i32) * head, epsilon = 1e-15);
        assert_relative_eq!(upper, binomial_head(0.2, q, (j + 20) as u64, 7), epsilon = 1e-12);
    }

    #[test]
    fn deterministic_link_spends_repeats_back_to_back() {
        // p = 1, T = 3, δ = 0: repeats at slots 1, 2, final success at 3.
        let s = spec(3, 0);
        assert_eq!(repeat_ccdf(p(1.0), s, 5, -1), 1.0);
        assert_eq!(repeat_ccdf(p(1.0), s, 5, 0), 0.0);
        assert_relative_eq!(prob_on_time_with_repeats(p(1.0), s, 5), 1.0);
        // Budget too small to reach the window: lands at slot 2, early.
        assert_relative_eq!(prob_on_time_with_repeats(p(1.0), s, 1), 0.0);
    }

    #[test]
    fn on_time_probability_with_repeats_sums_ccdf_increments() {
        let s = spec(20, 1);
        let got = prob_on_time_with_repeats(p(0.2), s, 5);
        let direct = repeat_ccdf(p(0.2), s, 5, -2) - repeat_ccdf(p(0.2), s, 5, 1);
        assert_relative_eq!(got, direct, epsilon = 1e-15);
        assert!(got > 0.0 && got < 1.0);
    }

    #[test]
    fn nested_sum_identity_matches_small_hand_counts() {
        // Tuples of positive integers with sum ≤ z − 1.
        assert_eq!(nested_sum_identity(5, 2), 6);
        assert_eq!(nested_sum_identity(5, 3), 4);
        assert_eq!(nested_sum_identity(7, 3), 20);
        assert_eq!(nested_sum_identity(6, 2), 10);
        assert_eq!(nested_sum_identity(1, 1), 0);
        assert_eq!(nested_sum_identity(2, 1), 1);
        assert_eq!(nested_sum_identity(10, 0), 1);
    }

    #[test]
    fn binomial_head_survives_exponent_ranges_that_underflow_naively() {
        // q^n underflows (0.1^400 = 0) but the head is an ordinary number.
        let got = binomial_head(0.9, 0.1, 400, 350);
        // Oracle: complement of the upper tail, anchored the same way but
        // summed from the top; the two share no terms.
        let mut tail = 0.0;
        let mut term =
            (ln_choose(400, 351) + 351.0 * 0.9f64.ln() + 49.0 * 0.1f64.ln()).exp();
        for m in 351..=400u64 {
            tail += term;
            term *= ((400 - m) as f64) / ((m + 1) as f64) * (0.9 / 0.1);
        }
        assert_relative_eq!(got, 1.0 - tail, epsilon = 1e-9, max_relative = 1e-9);
        assert!(got > 0.0 && got < 1.0);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_p() -> impl Strategy<Value = f64> {
            0.02f64..0.98
        }

        proptest! {
            #[test]
            fn per_packet_probabilities_stay_in_unit_interval(
                pv in arb_p(), t in 1u32..25, d in 0u32..6, m in 1u32..40,
            ) {
                let v = prob_mth_on_time(p(pv), spec(t, d), m);
                prop_assert!((0.0..=1.0).contains(&v), "P = {v}");
            }

            #[test]
            fn widening_the_window_never_hurts(
                pv in arb_p(), t in 1u32..25, d in 0u32..5, m in 1u32..40,
            ) {
                let narrow = prob_mth_on_time(p(pv), spec(t, d), m);
                let wide = prob_mth_on_time(p(pv), spec(t, d + 1), m);
                prop_assert!(wide >= narrow - 1e-12);
            }

            #[test]
            fn repeat_ccdf_is_monotone_in_deviation_and_budget(
                pv in arb_p(), t in 1u32..30, d in 0u32..5, n_r in 0u32..12, j in -35i64..35,
            ) {
                let s = spec(t, d);
                let here = repeat_ccdf(p(pv), s, n_r, j);
                prop_assert!((0.0..=1.0).contains(&here), "ccdf = {here}");
                let next = repeat_ccdf(p(pv), s, n_r, j + 1);
                prop_assert!(next <= here + 1e-12, "ccdf must not increase in j");
                // A bigger budget can only push completions later.
                let more = repeat_ccdf(p(pv), s, n_r + 1, j);
                prop_assert!(more >= here - 1e-12, "ccdf must not decrease in n_r");
            }

            #[test]
            fn repeats_never_reduce_on_time_probability(
                pv in arb_p(), t in 2u32..30, d in 0u32..5, n_r in 0u32..15,
            ) {
                let s = spec(t, d);
                let without = prob_on_time_with_repeats(p(pv), s, 0);
                let with = prob_on_time_with_repeats(p(pv), s, n_r);
                prop_assert!(with >= without - 1e-12);
                prop_assert!((0.0..=1.0).contains(&with));
                // Zero budget reduces to the single-shot closed form.
                prop_assert!((without - prob_first_on_time(p(pv), s)).abs() < 1e-12);
            }

            #[test]
            fn binomial_head_is_a_probability_and_monotone_in_cap(
                pv in arb_p(), n in 0u64..60, cap in 0u64..60,
            ) {
                let q = 1.0 - pv;
                let h = binomial_head(pv, q, n, cap);
                prop_assert!((0.0..=1.0).contains(&h));
                prop_assert!(binomial_head(pv, q, n, cap + 1) >= h - 1e-12);
            }
        }
    }
}
