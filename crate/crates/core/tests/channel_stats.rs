//! Distributional check on the transmission-time sampler.
//!
//! The sampler inverts a uniform draw through the geometric quantile
//! function; a chi-square goodness-of-fit test over the first thirty
//! slot counts (plus the pooled tail) guards the inversion against
//! off-by-one and boundary mistakes that a mean check would miss.

use ontime_core::channel::{sample_transmission_time, SuccessProbability};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn sampled_transmission_times_pass_a_chi_square_fit() {
    let p = SuccessProbability::new(0.3).unwrap();
    let q = p.complement();
    let draws = 200_000u64;
    let cells = 20usize; // slots 1..=20, then one pooled tail cell
    let mut rng = ChaCha12Rng::seed_from_u64(0x5EED_CAFE);

    let mut observed = vec![0u64; cells + 1];
    for _ in 0..draws {
        let s = sample_transmission_time(p, &mut rng) as usize;
        observed[(s - 1).min(cells)] += 1;
    }

    let mut statistic = 0.0;
    for (cell, &count) in observed.iter().enumerate() {
        let prob = if cell < cells {
            p.value() * q.powi(cell as i32)
        } else {
            q.powi(cells as i32)
        };
        let expected = draws as f64 * prob;
        assert!(expected > 20.0, "cell {cell} too thin for the chi-square approximation");
        statistic += (count as f64 - expected).powi(2) / expected;
    }

    // cells + 1 categories, no fitted parameters → cells degrees of freedom.
    let critical = ChiSquared::new(cells as f64).unwrap().inverse_cdf(0.999);
    assert!(
        statistic < critical,
        "chi-square statistic {statistic:.2} exceeds the 99.9% critical value {critical:.2}"
    );
}

#[test]
fn sampled_moments_match_the_geometric_law() {
    let p = SuccessProbability::new(0.2).unwrap();
    let draws = 200_000u64;
    let mut rng = ChaCha12Rng::seed_from_u64(41);
    let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
    for _ in 0..draws {
        let s = sample_transmission_time(p, &mut rng) as f64;
        sum += s;
        sum_sq += s * s;
    }
    let mean = sum / draws as f64;
    let var = sum_sq / draws as f64 - mean * mean;
    let expected_mean = 1.0 / p.value();
    let expected_var = p.complement() / (p.value() * p.value());
    // Four standard errors of the respective estimators.
    let mean_se = (expected_var / draws as f64).sqrt();
    assert!(
        (mean - expected_mean).abs() < 4.0 * mean_se,
        "sample mean {mean} vs 1/p = {expected_mean}"
    );
    assert!(
        (var - expected_var).abs() < 0.05 * expected_var,
        "sample variance {var} vs q/p² = {expected_var}"
    );
}
