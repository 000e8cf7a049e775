//! Scalar posterior-moment computations.
//!
//! The output-side denoisers condition `z ~ N(m, v)` on one observation, the
//! input-side denoiser conditions `x ~ N(m, v)` on the spike-and-slab prior,
//! [`extrinsic`] divides a posterior by its cavity message, and
//! [`llr_messages`] runs the sum-product update on the group indicators.

use crate::error::{Error, Result};
use crate::model::GroupStructure;
use crate::special::{ln_normal_pdf, logit, sigmoid, truncated_std_normal};

/// Cell probabilities below this (1e-300) are reported as degenerate.
pub const MIN_LOG_CELL_MASS: f64 = -690.775_527_898_213_7;

/// Saturation floor for indicator messages; `rho_hat` stays in `[1e-15, 1 - 1e-15]`.
pub const RHO_HAT_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub var: f64,
}

impl Moments {
    pub fn new(mean: f64, var: f64) -> Self {
        Self { mean, var }
    }

    /// Moments of the normalized product `N(.|self) N(.|other)`.
    pub fn product(self, other: Moments) -> Moments {
        let precision = 1.0 / self.var + 1.0 / other.var;
        let var = 1.0 / precision;
        Moments { mean: var * (self.mean / self.var + other.mean / other.var), var }
    }
}

/// Posterior of `z ~ N(m, v)` given `y = z + w`, `w ~ N(0, noise_var)`.
pub fn z_posterior_awgn(y: f64, m: f64, v: f64, noise_var: f64) -> Moments {
    let total = v + noise_var;
    Moments { mean: (v * y + noise_var * m) / total, var: v * noise_var / total }
}

/// Posterior of `z ~ N(m, v)` given that `z + w` fell in `[lower, upper]`,
/// `w ~ N(0, noise_var)`.
///
/// With `u = z + w ~ N(m, v + noise_var)` the posterior splits as
/// `z = m + g (u - m) + e`, `g = v / (v + noise_var)`, `e` independent of `u`,
/// so only the truncated moments of `u` are needed.
pub fn z_posterior_quantized(lower: f64, upper: f64, m: f64, v: f64, noise_var: f64) -> Result<Moments> {
    let total = v + noise_var;
    let sd = total.sqrt();
    let t = truncated_std_normal((lower - m) / sd, (upper - m) / sd);
    if !(t.log_mass >= MIN_LOG_CELL_MASS) {
        return Err(Error::DegenerateCell { log_mass: t.log_mass });
    }
    Ok(Moments {
        mean: m + v / sd * t.mean,
        var: v * noise_var / total + v * v / total * t.var,
    })
}

/// `ln N(0 | m, v + sigma_x_sq) - ln N(0 | m, v)`: the evidence one element
/// contributes for its group being active.
pub fn activity_llr(m: f64, v: f64, sigma_x_sq: f64) -> f64 {
    ln_normal_pdf(0.0, m, v + sigma_x_sq) - ln_normal_pdf(0.0, m, v)
}

/// Spike-and-slab posterior of `x` under the message `N(x | m, v)`.
///
/// Returns the posterior moments and the posterior activity probability.
pub fn x_posterior_spike_slab(m: f64, v: f64, rho_hat: f64, sigma_x_sq: f64) -> (Moments, f64) {
    let slab_var = sigma_x_sq * v / (sigma_x_sq + v);
    let slab_mean = m * sigma_x_sq / (sigma_x_sq + v);
    let pi = if rho_hat <= 0.0 {
        0.0
    } else if rho_hat >= 1.0 {
        1.0
    } else {
        sigmoid(logit(rho_hat) + activity_llr(m, v, sigma_x_sq))
    };
    let mean = pi * slab_mean;
    // pi (v_s + mu_s^2) - (pi mu_s)^2, written without the cancellation
    let var = pi * slab_var + pi * (1.0 - pi) * slab_mean * slab_mean;
    (Moments { mean, var }, pi)
}

/// Gaussian division `pos / cav`, with the resulting variance clamped to
/// `[v_min, v_max]`. A non-positive precision difference maps to `v_max`.
pub fn extrinsic(pos: Moments, cav: Moments, v_min: f64, v_max: f64) -> Moments {
    let precision = 1.0 / pos.var - 1.0 / cav.var;
    let var = if precision > 0.0 { (1.0 / precision).clamp(v_min, v_max) } else { v_max };
    Moments { mean: var * (pos.mean / pos.var - cav.mean / cav.var), var }
}

/// Extrinsic activity probabilities `rho_hat_kj` for every element.
///
/// Each element receives the group prior plus the evidence of every other
/// element of its group; its own evidence is excluded.
pub fn llr_messages(m_lik: &[f64], v_lik: &[f64], rho: f64, sigma_x_sq: f64, groups: &GroupStructure) -> Vec<f64> {
    debug_assert_eq!(m_lik.len(), groups.len());
    let prior = logit(rho);
    let mut out = vec![0.0; groups.len()];
    let mut prefix = Vec::new();
    for range in groups.ranges() {
        let llr: Vec<f64> = range.clone().map(|i| activity_llr(m_lik[i], v_lik[i], sigma_x_sq)).collect();
        // leave-one-out sums from prefix and suffix partials
        prefix.clear();
        prefix.push(0.0);
        for l in &llr {
            prefix.push(prefix.last().unwrap() + l);
        }
        let mut suffix = 0.0;
        for j in (0..llr.len()).rev() {
            let to_element = prior + prefix[j] + suffix;
            out[range.start + j] = sigmoid(to_element).clamp(RHO_HAT_FLOOR, 1.0 - RHO_HAT_FLOOR);
            suffix += llr[j];
        }
    }
    out
}

/// Posterior probability that each group is active: the sigmoid of the prior
/// log-odds plus every member's activity LLR.
pub fn group_posteriors(m_lik: &[f64], v_lik: &[f64], rho: f64, sigma_x_sq: f64, groups: &GroupStructure) -> Vec<f64> {
    debug_assert_eq!(m_lik.len(), groups.len());
    let prior = logit(rho);
    groups
        .ranges()
        .map(|r| sigmoid(prior + r.map(|i| activity_llr(m_lik[i], v_lik[i], sigma_x_sq)).sum::<f64>()))
        .collect()
}
