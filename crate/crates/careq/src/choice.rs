//! Expected-maximum-utility functions and their gradients (choice
//! probabilities), plus Monte-Carlo verification estimators.
//!
//! For a utility vector `u` with i.i.d. additive noise, the expected maximum
//! `Phi(u) = E[max_j (u_j + eps_j)]` is convex and its partial derivatives are
//! the choice probabilities `P(alternative j attains the max)`. With Gumbel
//! noise at scale `beta` (location chosen so the noise has mean zero) the
//! closed forms are
//!
//! ```text
//! Phi(u) = (1/beta) * ln( sum_j exp(beta * u_j) )
//! P(j)   = exp(beta * u_j) / sum_l exp(beta * u_l)
//! ```
//!
//! Every evaluation max-shifts the exponents, so utilities anywhere within
//! `|u| <= 700/beta` cannot overflow. Generic noise (e.g. Gaussian) has no
//! closed form here and is supported through the Monte-Carlo estimator only.
//!
//! All functions are pure and callable concurrently without coordination.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, Normal};
use thiserror::Error;

/// Euler-Mascheroni constant; the mean of a standard Gumbel distribution.
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Deterministic utilities over the alternatives of one patient class,
/// together with the Gumbel noise scale.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityVector {
    /// Utility per alternative, ordered as `{opt-out} + levels` where an
    /// opt-out is present.
    pub values: Vec<f64>,
    /// Gumbel scale `beta > 0`.
    pub scale: f64,
}

impl UtilityVector {
    /// Builds a utility vector, rejecting non-finite entries, an empty
    /// alternative set, and non-positive scales.
    pub fn new(values: Vec<f64>, scale: f64) -> Result<Self, ChoiceError> {
        if values.is_empty() {
            return Err(ChoiceError::Empty);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ChoiceError::NonFinite);
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(ChoiceError::BadScale(scale));
        }
        Ok(Self { values, scale })
    }
}

/// Choice probabilities over the alternatives of a [`UtilityVector`]:
/// nonnegative, summing to 1 within 1e-12.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceDistribution {
    /// Probability per alternative, same order as the utilities.
    pub probabilities: Vec<f64>,
}

/// Noise specifications accepted by the Monte-Carlo estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    /// Gumbel noise with the given scale parameter, shifted to mean zero
    /// (location `-gamma * scale`). Matching the closed forms for a
    /// [`UtilityVector`] with scale `beta` requires `scale = 1/beta`.
    Gumbel {
        /// Gumbel scale parameter (utils).
        scale: f64,
    },
    /// Zero-mean Gaussian noise with standard deviation `sigma`.
    Normal {
        /// Standard deviation (utils).
        sigma: f64,
    },
}

/// Errors from constructing choice inputs.
#[derive(Debug, Error, PartialEq)]
pub enum ChoiceError {
    /// No alternatives were supplied.
    #[error("utility vector must contain at least one alternative")]
    Empty,
    /// A utility entry was NaN or infinite.
    #[error("utility entries must be finite")]
    NonFinite,
    /// The Gumbel scale was non-positive or non-finite.
    #[error("gumbel scale must be positive and finite, got {0}")]
    BadScale(f64),
    /// The Monte-Carlo noise specification had a non-positive parameter.
    #[error("noise parameter must be positive and finite, got {0}")]
    BadNoise(f64),
}

/// Expected maximum utility under mean-zero Gumbel noise: a max-shifted
/// log-sum-exp at scale `beta`.
pub fn mnl_phi(u: &UtilityVector) -> f64 {
    let beta = u.scale;
    let max = u.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = u.values.iter().map(|&v| ((v - max) * beta).exp()).sum();
    max + sum.ln() / beta
}

/// Choice probabilities under mean-zero Gumbel noise: the gradient of
/// [`mnl_phi`], i.e. a softmax at scale `beta`. The result is renormalized
/// after the softmax division so the row-sum invariant holds exactly to
/// floating-point addition.
pub fn mnl_probabilities(u: &UtilityVector) -> ChoiceDistribution {
    let beta = u.scale;
    let max = u.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = u.values.iter().map(|&v| ((v - max) * beta).exp()).collect();
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    // Softmax division alone can leave the sum a few ulps off 1; renormalize
    // so downstream flow conservation is exact to summation order.
    let sum2: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum2;
    }
    ChoiceDistribution {
        probabilities: weights,
    }
}

/// Monte-Carlo estimate of the expected maximum utility and the argmax
/// frequencies under the given noise, using `samples` independent draws.
/// Deterministic for a fixed `seed`.
pub fn mc_phi_and_probabilities(
    u: &UtilityVector,
    noise: NoiseModel,
    samples: u64,
    seed: u64,
) -> Result<(f64, ChoiceDistribution), ChoiceError> {
    assert!(samples >= 1, "at least one sample is required");
    enum Sampler {
        Gumbel(Gumbel<f64>),
        Normal(Normal<f64>),
    }
    let sampler = match noise {
        NoiseModel::Gumbel { scale } => {
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(ChoiceError::BadNoise(scale));
            }
            // Location -gamma*scale centers the noise at zero, so the
            // estimate targets the same Phi as the closed form.
            Sampler::Gumbel(Gumbel::new(-EULER_GAMMA * scale, scale).expect("valid gumbel"))
        }
        NoiseModel::Normal { sigma } => {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(ChoiceError::BadNoise(sigma));
            }
            Sampler::Normal(Normal::new(0.0, sigma).expect("valid normal"))
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = u.values.len();
    let mut counts = vec![0u64; n];
    let mut sum_max = 0.0;
    for _ in 0..samples {
        let mut best = f64::NEG_INFINITY;
        let mut best_idx = 0;
        for (j, &v) in u.values.iter().enumerate() {
            let eps = match &sampler {
                Sampler::Gumbel(d) => d.sample(&mut rng),
                Sampler::Normal(d) => d.sample(&mut rng),
            };
            let total = v + eps;
            if total > best {
                best = total;
                best_idx = j;
            }
        }
        sum_max += best;
        counts[best_idx] += 1;
    }

    let probabilities = counts.iter().map(|&c| c as f64 / samples as f64).collect();
    Ok((
        sum_max / samples as f64,
        ChoiceDistribution { probabilities },
    ))
}

/// Largest absolute deviation between a central finite difference of
/// [`mnl_phi`] and [`mnl_probabilities`], over all coordinates.
pub fn phi_gradient_check(u: &UtilityVector, h: f64) -> f64 {
    assert!(h > 0.0 && h <= 1e-3, "step must lie in (0, 1e-3]");
    let probs = mnl_probabilities(u);
    let mut worst = 0.0f64;
    for i in 0..u.values.len() {
        let mut up = u.clone();
        up.values[i] += h;
        let mut down = u.clone();
        down.values[i] -= h;
        let fd = (mnl_phi(&up) - mnl_phi(&down)) / (2.0 * h);
        worst = worst.max((fd - probs.probabilities[i]).abs());
    }
    worst
}
