//! Block-fading channel model and per-slot transmission outcomes.
//!
//! Time is slotted.  In every slot the transmitter sends at fixed power
//! `P_t` over a distance `d` with path-loss exponent `α`, and the receiver
//! decodes successfully when the instantaneous SNR
//!
//! ```text
//!     SNR = v · P_t · d^{-α} / σ²
//! ```
//!
//! clears a threshold `V_T`, where `v` is the fading gain drawn fresh each
//! slot (block fading).  For an exponential gain with rate `λ` the success
//! event has the slot-independent probability
//!
//! ```text
//!     p = Pr{ v ≥ V_T · d^α · σ² / P_t } = exp(−λ · V_T · d^α · σ² / P_t),
//! ```
//!
//! and the number of slots `S` until a packet first gets through is
//! geometric: `Pr{S = j} = p (1−p)^{j−1}` for `j ≥ 1`.
//!
//! Everything downstream (closed-form on-time probabilities, the scheduling
//! MDP, the simulator) consumes only `p`, so [`SuccessProbability`] is the
//! boundary type: build it from physics via [`success_probability`] or
//! directly from a known value, and the rest of the crate never touches
//! watts or meters again.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Distribution of the per-slot fading gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GainModel {
    /// Exponentially distributed gain with the given rate parameter
    /// (mean `1/rate`).  Models Rayleigh-faded signal power.
    Exponential {
        /// Rate `λ` of the exponential gain distribution; must be > 0.
        rate: f64,
    },
}

/// Physical-layer parameters that determine the per-slot success probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Fading gain distribution.
    pub gain: GainModel,
    /// Transmit power `P_t` in watts; must be > 0.
    pub transmit_power_w: f64,
    /// Transmitter–receiver distance `d` in meters; must be > 0.
    pub distance_m: f64,
    /// Path-loss exponent `α`; must be ≥ 1.
    pub path_loss_exponent: f64,
    /// Noise power `σ²` in watts; must be > 0.
    pub noise_power_w: f64,
    /// SNR decoding threshold `V_T`; must be ≥ 0.
    pub snr_threshold: f64,
}

/// Validation failures for channel parameters.
#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    /// A physical quantity that must be finite and strictly positive was not.
    #[error("{name} must be finite and strictly positive, got {value}")]
    NonPositive {
        /// Name of the offending parameter.
        name: &'static str,
        /// The rejected value.
        value: f64,
    },
    /// Path-loss exponents below 1 do not describe a radio link.
    #[error("path loss exponent must be finite and at least 1, got {value}")]
    PathLossExponent {
        /// The rejected value.
        value: f64,
    },
    /// The SNR threshold must be finite and non-negative.
    #[error("SNR threshold must be finite and non-negative, got {value}")]
    SnrThreshold {
        /// The rejected value.
        value: f64,
    },
    /// A success probability outside `(0, 1]`.
    #[error("success probability must lie in (0, 1], got {value}")]
    ProbabilityRange {
        /// The rejected value.
        value: f64,
    },
    /// Parameters so harsh that `p = exp(−λ·required_gain)` underflows to
    /// zero: the link never delivers and no downstream quantity is defined.
    #[error("link parameters give a success probability that underflows to zero (exponent {exponent:.3e})")]
    DegenerateLink {
        /// The doomed exponent `−λ·required_gain`.
        exponent: f64,
    },
}

/// Per-slot decoding success probability `p ∈ (0, 1]`.
///
/// `p = 0` is rejected: a link that never delivers has no geometric
/// transmission time and every downstream quantity degenerates.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SuccessProbability(f64);

impl SuccessProbability {
    /// Wraps a raw probability, rejecting values outside `(0, 1]`.
    pub fn new(p: f64) -> Result<Self, ChannelError> {
        if p.is_finite() && p > 0.0 && p <= 1.0 {
            Ok(Self(p))
        } else {
            Err(ChannelError::ProbabilityRange { value: p })
        }
    }

    /// The success probability `p`.
    pub fn value(self) -> f64 {
        self.0
    }

    /// The failure probability `q = 1 − p`.
    pub fn complement(self) -> f64 {
        1.0 - self.0
    }
}

/// Master seed for reproducible simulation runs.
///
/// Replications derive their own independent streams from this value; see
/// [`crate::montecarlo::replication_seed`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

/// Computes the per-slot success probability from physical parameters.
///
/// For the exponential gain model this is
/// `exp(−λ · V_T · d^α · σ² / P_t)`.
pub fn success_probability(params: &ChannelParams) -> Result<SuccessProbability, ChannelError> {
    let positive = |name: &'static str, value: f64| -> Result<f64, ChannelError> {
        if value.is_finite() && value > 0.0 {
            Ok(value)
        } else {
            Err(ChannelError::NonPositive { name, value })
        }
    };
    let power = positive("transmit power", params.transmit_power_w)?;
    let distance = positive("distance", params.distance_m)?;
    let noise = positive("noise power", params.noise_power_w)?;
    let alpha = params.path_loss_exponent;
    if !(alpha.is_finite() && alpha >= 1.0) {
        return Err(ChannelError::PathLossExponent { value: alpha });
    }
    let threshold = params.snr_threshold;
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(ChannelError::SnrThreshold { value: threshold });
    }
    let GainModel::Exponential { rate } = params.gain;
    let rate = positive("gain rate", rate)?;

    // Required gain for decoding, v ≥ V_T d^α σ² / P_t, hit the exponential
    // tail exp(−λ v).  V_T = 0 gives p = 1 (every slot decodes).
    let required_gain = threshold * distance.powf(alpha) * noise / power;
    let exponent = -rate * required_gain;
    let p = exponent.exp();
    if p <= 0.0 {
        return Err(ChannelError::DegenerateLink { exponent });
    }
    SuccessProbability::new(p)
}

/// Draws a geometric transmission time `S ≥ 1` (slots until first success).
///
/// Uses inversion on a `(0, 1]` uniform: `S = max(1, ⌈ln u / ln q⌉)`, which
/// reproduces `Pr{S = j} = p q^{j−1}` exactly and costs one uniform draw
/// regardless of how long the failure run is.
pub fn sample_transmission_time<R: Rng + ?Sized>(p: SuccessProbability, rng: &mut R) -> u64 {
    let q = p.complement();
    if q <= 0.0 {
        return 1; // deterministic link: first attempt always decodes
    }
    let u: f64 = rng.sample(rand::distr::OpenClosed01);
    // ln u ≤ 0 and ln q < 0; u = 1 maps to S = 1 via the max.
    let s = (u.ln() / q.ln()).ceil();
    if s < 1.0 {
        1
    } else {
        s as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn reference_params() -> ChannelParams {
        ChannelParams {
            gain: GainModel::Exponential { rate: 2.0 },
            transmit_power_w: 1.0,
            distance_m: 100.0,
            path_loss_exponent: 2.0,
            noise_power_w: 1e-4,
            snr_threshold: 0.8047,
        }
    }

    #[test]
    fn reference_link_gives_one_fifth_success() {
        let p = success_probability(&reference_params()).unwrap();
        assert_relative_eq!(p.value(), 0.2, epsilon = 1e-4);
    }

    #[test]
    fn halved_threshold_variant_gives_one_half_success() {
        let mut params = reference_params();
        params.snr_threshold = 0.346574;
        let p = success_probability(&params).unwrap();
        assert_relative_eq!(p.value(), 0.5, epsilon = 1e-5);
    }

    #[test]
    fn zero_threshold_means_certain_decoding() {
        let mut params = reference_params();
        params.snr_threshold = 0.0;
        let p = success_probability(&params).unwrap();
        assert_eq!(p.value(), 1.0);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let mut params = reference_params();
        params.transmit_power_w = 0.0;
        assert_eq!(
            success_probability(&params),
            Err(ChannelError::NonPositive { name: "transmit power", value: 0.0 })
        );

        let mut params = reference_params();
        params.path_loss_exponent = 0.5;
        assert!(matches!(
            success_probability(&params),
            Err(ChannelError::PathLossExponent { .. })
        ));

        let mut params = reference_params();
        params.snr_threshold = -1.0;
        assert!(matches!(
            success_probability(&params),
            Err(ChannelError::SnrThreshold { .. })
        ));

        let mut params = reference_params();
        params.noise_power_w = f64::NAN;
        assert!(matches!(
            success_probability(&params),
            Err(ChannelError::NonPositive { .. })
        ));
    }

    #[test]
    fn probability_newtype_enforces_half_open_unit_interval() {
        assert!(SuccessProbability::new(0.0).is_err());
        assert!(SuccessProbability::new(-0.1).is_err());
        assert!(SuccessProbability::new(1.0 + 1e-12).is_err());
        assert!(SuccessProbability::new(f64::NAN).is_err());
        let p = SuccessProbability::new(1.0).unwrap();
        assert_eq!(p.complement(), 0.0);
        let p = SuccessProbability::new(0.25).unwrap();
        assert_relative_eq!(p.complement(), 0.75);
    }

    #[test]
    fn deterministic_link_always_takes_one_slot() {
        let p = SuccessProbability::new(1.0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..100 {
            assert_eq!(sample_transmission_time(p, &mut rng), 1);
        }
    }

    #[test]
    fn sampler_mean_matches_geometric_expectation() {
        let p = SuccessProbability::new(0.2).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(424242);
        let n = 200_000;
        let mut sum = 0u64;
        for _ in 0..n {
            let s = sample_transmission_time(p, &mut rng);
            assert!(s >= 1);
            sum += s;
        }
        let mean = sum as f64 / n as f64;
        // E[S] = 1/p = 5, sd of the mean ≈ sqrt(q)/p/sqrt(n) ≈ 0.01.
        assert!((mean - 5.0).abs() < 0.05, "sample mean {mean} too far from 5");
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn success_probability_lands_in_unit_interval(
                rate in 0.01f64..10.0,
                power in 0.01f64..10.0,
                distance in 1.0f64..1000.0,
                alpha in 1.0f64..4.0,
                noise in 1e-6f64..1e-2,
                threshold in 0.0f64..10.0,
            ) {
                let params = ChannelParams {
                    gain: GainModel::Exponential { rate },
                    transmit_power_w: power,
                    distance_m: distance,
                    path_loss_exponent: alpha,
                    noise_power_w: noise,
                    snr_threshold: threshold,
                };
                match success_probability(&params) {
                    Ok(p) => prop_assert!(p.value() > 0.0 && p.value() <= 1.0),
                    // Extreme but valid physics can push exp(−λv) below the
                    // smallest positive double; that must be reported, not
                    // smuggled through as p = 0.
                    Err(ChannelError::DegenerateLink { exponent }) => {
                        prop_assert!(exponent < -700.0, "premature underflow at {exponent}");
                    }
                    Err(other) => prop_assert!(false, "unexpected error: {other}"),
                }
            }

            #[test]
            fn harsher_links_never_decode_more_often(
                threshold in 0.1f64..5.0,
                distance in 10.0f64..500.0,
            ) {
                let base = ChannelParams {
                    gain: GainModel::Exponential { rate: 2.0 },
                    transmit_power_w: 1.0,
                    distance_m: distance,
                    path_loss_exponent: 2.0,
                    noise_power_w: 1e-4,
                    snr_threshold: threshold,
                };
                let p0 = success_probability(&base).unwrap().value();

                let mut farther = base;
                farther.distance_m = distance * 1.5;
                let mut stricter = base;
                stricter.snr_threshold = threshold * 1.5;
                let mut weaker = base;
                weaker.transmit_power_w = 0.5;

                prop_assert!(success_probability(&farther).unwrap().value() <= p0);
                prop_assert!(success_probability(&stricter).unwrap().value() <= p0);
                prop_assert!(success_probability(&weaker).unwrap().value() <= p0);
            }

            #[test]
            fn sampled_times_are_positive_and_finite(seed in any::<u64>(), p in 0.05f64..1.0) {
                let p = SuccessProbability::new(p).unwrap();
                let mut rng = ChaCha12Rng::seed_from_u64(seed);
                let s = sample_transmission_time(p, &mut rng);
                prop_assert!(s >= 1);
                prop_assert!(s < 10_000); // astronomically unlikely above this for p ≥ 0.05
            }
        }
    }
}
