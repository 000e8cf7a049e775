//! Brute-force references: quadrature denoisers, exact small-instance
//! posteriors by indicator enumeration, a dense Gauss-Jordan inverse and
//! the NMSE metric.
//!
//! Nothing here shares code with the closed forms it is meant to check,
//! beyond `statrs`'s `erfc`.

use std::f64::consts::{LN_2, PI};

use nalgebra::{DMatrix, DVector};
use statrs::function::erf::erfc;

use crate::denoisers::Moments;
use crate::error::{Error, Result};
use crate::model::{Observations, ProblemInstance};

/// Trapezoid grid for the passes of [`quad_z_posterior`] that locate the posterior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadGrid {
    /// Half-width of the integration window in posterior standard deviations.
    pub half_width_sigmas: f64,
    /// Number of grid intervals per pass.
    pub points: usize,
}

impl Default for QuadGrid {
    fn default() -> Self {
        Self { half_width_sigmas: 10.0, points: 4_000 }
    }
}

const MAX_PASSES: usize = 12;

fn ln_gauss(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * d * d / var - 0.5 * (2.0 * PI * var).ln()
}

/// Posterior moments of `z ~ N(m, v)` under the likelihood `exp(log_lik(z))`.
///
/// The first pass covers the prior; every further pass re-centres the window
/// on the current posterior mean with a half-width of `half_width_sigmas`
/// posterior standard deviations, until the window stops moving. All sums
/// are taken relative to the largest log-integrand on the grid. The moments
/// are then recomputed on the settled window by adaptive Simpson, which
/// resolves likelihood features far narrower than the grid step (a
/// quantizer edge under very small noise).
pub fn quad_z_posterior(log_lik: impl Fn(f64) -> f64, m: f64, v: f64, grid: QuadGrid) -> Result<Moments> {
    if grid.points < 1_000 || grid.half_width_sigmas < 8.0 {
        return Err(Error::InvalidParameter("quadrature needs >= 1000 points and half-width >= 8".into()));
    }
    if !(v > 0.0 && v.is_finite() && m.is_finite()) {
        return Err(Error::InvalidParameter(format!("prior N({m}, {v}) is not proper")));
    }
    let mut center = m;
    let mut half = grid.half_width_sigmas * v.sqrt();
    let mut peak = f64::NEG_INFINITY;
    for _ in 0..MAX_PASSES {
        let step = 2.0 * half / grid.points as f64;
        let offsets: Vec<f64> = (0..=grid.points).map(|i| -half + i as f64 * step).collect();
        let log_f: Vec<f64> = offsets.iter().map(|&d| log_lik(center + d) + ln_gauss(center + d, m, v)).collect();
        peak = log_f.iter().copied().filter(|x| !x.is_nan()).fold(f64::NEG_INFINITY, f64::max);
        if peak == f64::NEG_INFINITY {
            return Err(Error::ZeroMass);
        }
        let weights: Vec<f64> = log_f
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let end = if i == 0 || i == grid.points { 0.5 } else { 1.0 };
                end * (l - peak).exp()
            })
            .collect();
        let mass: f64 = weights.iter().sum();
        let shift: f64 = weights.iter().zip(&offsets).map(|(w, d)| w * d).sum::<f64>() / mass;
        let var: f64 = weights.iter().zip(&offsets).map(|(w, d)| w * (d - shift).powi(2)).sum::<f64>() / mass;

        // never narrower than a few cells, so a posterior that fell between
        // grid points is zoomed into rather than lost
        let new_half = (grid.half_width_sigmas * var.sqrt()).max(4.0 * step).min(half);
        let settled = (new_half - half).abs() <= 1e-3 * half && shift.abs() <= 1e-3 * half;
        center += shift;
        half = new_half;
        if settled {
            break;
        }
    }
    let f = |z: f64| {
        let w = (log_lik(z) + ln_gauss(z, m, v) - peak).exp();
        let w = if w.is_nan() { 0.0 } else { w };
        let d = (z - center) / half;
        [w, w * d, w * d * d]
    };
    // the window is sized by the posterior spread, but a posterior that is a
    // truncated prior keeps the prior's heavier tail; widen until the ends
    // carry nothing
    let (mut lo, mut hi) = (center - half, center + half);
    for _ in 0..MAX_PASSES {
        if f(lo)[0] <= TAIL_WEIGHT {
            break;
        }
        lo -= half;
    }
    for _ in 0..MAX_PASSES {
        if f(hi)[0] <= TAIL_WEIGHT {
            break;
        }
        hi += half;
    }
    let [mass, first, second] = adaptive_simpson(&f, lo, hi, ADAPTIVE_PANELS);
    if !(mass > 0.0) {
        return Err(Error::ZeroMass);
    }
    let mean = first / mass;
    Ok(Moments::new(center + half * mean, half * half * (second / mass - mean * mean)))
}

const ADAPTIVE_PANELS: usize = 256;
/// Integrand weight, relative to the peak, below which a window end counts as empty.
const TAIL_WEIGHT: f64 = 1e-24;
const ADAPTIVE_TOL: f64 = 1e-12;
const ADAPTIVE_DEPTH: u32 = 48;

type Triple = [f64; 3];

fn simpson(fa: Triple, fm: Triple, fb: Triple, h: f64) -> Triple {
    std::array::from_fn(|c| h / 6.0 * (fa[c] + 4.0 * fm[c] + fb[c]))
}

/// Integrates the three components of `f` over `[a, b]`, split into
/// `panels` equal panels that are each refined until the two-level Simpson
/// estimates agree to a tolerance proportional to the panel's share.
fn adaptive_simpson(f: &impl Fn(f64) -> Triple, a: f64, b: f64, panels: usize) -> Triple {
    let h = (b - a) / panels as f64;
    let ends: Vec<Triple> = (0..=panels).map(|i| f(a + i as f64 * h)).collect();
    let mids: Vec<Triple> = (0..panels).map(|i| f(a + (i as f64 + 0.5) * h)).collect();
    // scale for the tolerance: a coarse estimate of the total mass
    let scale: f64 = mids.iter().map(|t| t[0]).sum::<f64>() * h;
    let mut total = [0.0; 3];
    for i in 0..panels {
        let (lo, hi) = (a + i as f64 * h, a + (i + 1) as f64 * h);
        let whole = simpson(ends[i], mids[i], ends[i + 1], h);
        let part = refine(f, lo, hi, ends[i], mids[i], ends[i + 1], whole, ADAPTIVE_TOL * scale / panels as f64, ADAPTIVE_DEPTH);
        for c in 0..3 {
            total[c] += part[c];
        }
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn refine(f: &impl Fn(f64) -> Triple, a: f64, b: f64, fa: Triple, fm: Triple, fb: Triple, whole: Triple, tol: f64, depth: u32) -> Triple {
    let m = 0.5 * (a + b);
    let (flm, frm) = (f(0.5 * (a + m)), f(0.5 * (m + b)));
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let err = (0..3).map(|c| (left[c] + right[c] - whole[c]).abs()).fold(0.0, f64::max);
    if depth == 0 || err <= 15.0 * tol {
        return std::array::from_fn(|c| left[c] + right[c] + (left[c] + right[c] - whole[c]) / 15.0);
    }
    let l = refine(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1);
    let r = refine(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
    std::array::from_fn(|c| l[c] + r[c])
}

/// `ln Phi(x)`, using the asymptotic series deep in the lower tail.
pub fn ln_std_normal_cdf(x: f64) -> f64 {
    if x > -20.0 {
        (0.5 * erfc(-x / 2f64.sqrt())).ln()
    } else {
        let r = 1.0 / (x * x);
        let series = 1.0 - r + 3.0 * r * r - 15.0 * r.powi(3) + 105.0 * r.powi(4) - 945.0 * r.powi(5);
        -0.5 * x * x - 0.5 * (2.0 * PI).ln() - (-x).ln() + series.ln()
    }
}

/// `ln(1 - exp(x))` for `x <= 0`.
fn ln_one_minus_exp(x: f64) -> f64 {
    if x > -LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// `ln P(lower <= z + w < upper)`, `w ~ N(0, noise_var)`: the quantized
/// channel's log-likelihood as a function of `z`.
pub fn ln_cell_likelihood(z: f64, lower: f64, upper: f64, noise_var: f64) -> f64 {
    let sd = noise_var.sqrt();
    let (a, b) = ((lower - z) / sd, (upper - z) / sd);
    if b <= 0.0 {
        let hi = ln_std_normal_cdf(b);
        hi + ln_one_minus_exp(ln_std_normal_cdf(a) - hi)
    } else if a >= 0.0 {
        let hi = ln_std_normal_cdf(-a);
        hi + ln_one_minus_exp(ln_std_normal_cdf(-b) - hi)
    } else {
        (1.0 - ln_std_normal_cdf(a).exp() - ln_std_normal_cdf(-b).exp()).ln()
    }
}

/// Spike-and-slab posterior written as an explicit two-branch mixture:
/// returns the moments and the weight of the slab branch.
pub fn spike_slab_two_branch(m: f64, v: f64, rho: f64, sigma_x_sq: f64) -> (Moments, f64) {
    // branch evidences: int delta(x) N(x|m,v) and int N(x|0,s) N(x|m,v)
    let log_spike = (1.0 - rho).ln() + ln_gauss(0.0, m, v);
    let log_slab = rho.ln() + ln_gauss(m, 0.0, v + sigma_x_sq);
    let top = log_spike.max(log_slab);
    let (w_spike, w_slab) = ((log_spike - top).exp(), (log_slab - top).exp());
    let p_slab = w_slab / (w_spike + w_slab);
    let slab_var = 1.0 / (1.0 / sigma_x_sq + 1.0 / v);
    let slab_mean = slab_var * m / v;
    let mean = p_slab * slab_mean;
    let second = p_slab * (slab_var + slab_mean * slab_mean);
    (Moments::new(mean, second - mean * mean), p_slab)
}

/// Exact marginal posterior of a small linear-AWGN instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactPosterior {
    pub x_mean: DVector<f64>,
    pub x_var: DVector<f64>,
    /// Posterior activity probability of each group.
    pub xi_post: Vec<f64>,
    /// Sum of the normalized pattern weights; 1 up to rounding.
    pub weight_sum: f64,
}

/// Largest group count [`exact_posterior_small`] will enumerate.
pub const MAX_ENUMERATED_GROUPS: usize = 12;

/// Enumerates all `2^K` indicator patterns. Given a pattern the active
/// entries are jointly Gaussian with `y`, so each pattern contributes its
/// evidence `N(y | 0, noise I + s H_A H_A^T)` and a Gaussian conditional.
pub fn exact_posterior_small(inst: &ProblemInstance, rho: f64, sigma_x_sq: f64) -> Result<ExactPosterior> {
    let Observations::Real(y) = &inst.y else {
        return Err(Error::Unsupported("exact posterior needs the linear channel".into()));
    };
    let k = inst.groups.num_groups();
    if k > MAX_ENUMERATED_GROUPS {
        return Err(Error::Unsupported(format!("{k} groups exceed the enumeration limit")));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!("sparse rate {rho} outside (0, 1)")));
    }
    let (m, n) = inst.h.shape();
    let noise = inst.channel.noise_var();

    struct Pattern {
        log_weight: f64,
        mean: DVector<f64>,
        var: DVector<f64>,
    }
    let mut patterns = Vec::with_capacity(1 << k);
    for mask in 0u32..(1 << k) {
        let active: Vec<usize> = (0..k)
            .filter(|g| mask & (1 << g) != 0)
            .flat_map(|g| inst.groups.range(g))
            .collect();
        let h_a = inst.h.select_columns(&active);
        let cov = DMatrix::identity(m, m) * noise + &h_a * h_a.transpose() * sigma_x_sq;
        let chol = cov.cholesky().ok_or(Error::FactorizationFailure)?;
        let alpha = chol.solve(y);
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let log_evidence = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * m as f64 * (2.0 * PI).ln();
        let n_active = mask.count_ones() as f64;
        let log_prior = n_active * rho.ln() + (k as f64 - n_active) * (1.0 - rho).ln();

        let mut mean = DVector::zeros(n);
        let mut var = DVector::zeros(n);
        if !active.is_empty() {
            let mean_a = h_a.tr_mul(&alpha) * sigma_x_sq;
            let solved = chol.solve(&h_a);
            for (c, &i) in active.iter().enumerate() {
                mean[i] = mean_a[c];
                var[i] = sigma_x_sq - sigma_x_sq * sigma_x_sq * h_a.column(c).dot(&solved.column(c));
            }
        }
        patterns.push(Pattern { log_weight: log_evidence + log_prior, mean, var });
    }

    let top = patterns.iter().map(|p| p.log_weight).fold(f64::NEG_INFINITY, f64::max);
    let log_norm = top + patterns.iter().map(|p| (p.log_weight - top).exp()).sum::<f64>().ln();
    let mut x_mean = DVector::zeros(n);
    let mut second = DVector::zeros(n);
    let mut xi_post = vec![0.0; k];
    let mut weight_sum = 0.0;
    for (mask, p) in patterns.iter().enumerate() {
        let w = (p.log_weight - log_norm).exp();
        weight_sum += w;
        x_mean += &p.mean * w;
        second += (p.var.clone() + p.mean.component_mul(&p.mean)) * w;
        for (g, post) in xi_post.iter_mut().enumerate() {
            if mask & (1 << g) != 0 {
                *post += w;
            }
        }
    }
    let x_var = second - x_mean.component_mul(&x_mean);
    Ok(ExactPosterior { x_mean, x_var, xi_post, weight_sum })
}

/// Linear NMSE `||x_hat - x||^2 / ||x||^2`.
pub fn nmse_linear(x_hat: &DVector<f64>, x_true: &DVector<f64>) -> Result<f64> {
    if x_hat.len() != x_true.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} entries", x_hat.len(), x_true.len())));
    }
    let energy = x_true.norm_squared();
    if energy == 0.0 {
        return Err(Error::AllZeroTruth);
    }
    Ok((x_hat - x_true).norm_squared() / energy)
}

/// Floor returned by [`to_db`] for an exact reconstruction.
pub const NMSE_FLOOR_DB: f64 = -300.0;

/// Converts to dB, flooring exact zeros at [`NMSE_FLOOR_DB`]; NaN (an
/// undefined NMSE) passes through.
pub fn to_db(linear: f64) -> f64 {
    if linear.is_nan() {
        return f64::NAN;
    }
    (10.0 * linear.log10()).max(NMSE_FLOOR_DB)
}

/// NMSE in dB, floored at -300 dB.
pub fn nmse_db(x_hat: &DVector<f64>, x_true: &DVector<f64>) -> Result<f64> {
    nmse_linear(x_hat, x_true).map(to_db)
}

/// Dense inverse by Gauss-Jordan elimination with partial pivoting;
/// `None` for a numerically singular matrix.
pub fn gauss_jordan_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return None;
    }
    let mut work = a.clone();
    let mut inv = DMatrix::identity(n, n);
    let scale = a.amax();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| work[(i, col)].abs().total_cmp(&work[(j, col)].abs()))?;
        if work[(pivot, col)].abs() <= 1e-14 * scale {
            return None;
        }
        work.swap_rows(pivot, col);
        inv.swap_rows(pivot, col);
        let p = work[(col, col)];
        for j in 0..n {
            work[(col, j)] /= p;
            inv[(col, j)] /= p;
        }
        for i in 0..n {
            if i != col {
                let f = work[(i, col)];
                if f != 0.0 {
                    for j in 0..n {
                        work[(i, j)] -= f * work[(col, j)];
                        inv[(i, j)] -= f * inv[(col, j)];
                    }
                }
            }
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoisers::{x_posterior_spike_slab, z_posterior_awgn, z_posterior_quantized};
    use crate::model::{Channel, GroupStructure};

    #[test]
    fn flat_likelihood_returns_prior() {
        let p = quad_z_posterior(|_| 0.0, 1.5, 0.7, QuadGrid::default()).unwrap();
        assert!((p.mean - 1.5).abs() < 1e-10);
        assert!((p.var - 0.7).abs() < 1e-10);
    }

    #[test]
    fn gaussian_likelihood_matches_closed_form() {
        let (y, m, v, s) = (0.8, -0.4, 2.0, 0.3);
        let q = quad_z_posterior(|z| ln_gauss(y, z, s), m, v, QuadGrid::default()).unwrap();
        let c = z_posterior_awgn(y, m, v, s);
        assert!((q.mean - c.mean).abs() < 1e-8);
        assert!((q.var - c.var).abs() < 1e-8);
    }

    #[test]
    fn interval_likelihood_matches_closed_form() {
        let (lo, hi, m, v, s) = (0.5, 1.25, -0.2, 1.1, 0.05);
        let q = quad_z_posterior(|z| ln_cell_likelihood(z, lo, hi, s), m, v, QuadGrid::default()).unwrap();
        let c = z_posterior_quantized(lo, hi, m, v, s).unwrap();
        assert!((q.mean - c.mean).abs() < 1e-7);
        assert!((q.var / c.var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn narrow_posterior_is_found_from_wide_prior() {
        let (y, m, v, s) = (3.0, 0.0, 1e4, 1e-6);
        let q = quad_z_posterior(|z| ln_gauss(y, z, s), m, v, QuadGrid::default()).unwrap();
        let c = z_posterior_awgn(y, m, v, s);
        assert!((q.mean - c.mean).abs() < 1e-9);
        assert!((q.var / c.var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn doubling_points_changes_nothing() {
        let ll = |z: f64| ln_cell_likelihood(z, -0.3, f64::INFINITY, 0.2);
        let a = quad_z_posterior(ll, 0.4, 0.9, QuadGrid::default()).unwrap();
        let b = quad_z_posterior(ll, 0.4, 0.9, QuadGrid { points: 8_000, ..QuadGrid::default() }).unwrap();
        assert!((a.mean - b.mean).abs() < 1e-9);
        assert!((a.var - b.var).abs() < 1e-9);
    }

    #[test]
    fn impossible_likelihood_has_zero_mass() {
        let r = quad_z_posterior(|_| f64::NEG_INFINITY, 0.0, 1.0, QuadGrid::default());
        assert_eq!(r, Err(Error::ZeroMass));
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let r = quad_z_posterior(|_| 0.0, 0.0, 1.0, QuadGrid { points: 100, half_width_sigmas: 10.0 });
        assert!(matches!(r, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn tail_cdf_is_continuous_at_switch() {
        let below = ln_std_normal_cdf(-20.0 - 1e-9);
        let above = ln_std_normal_cdf(-20.0 + 1e-9);
        assert!((below - above).abs() < 1e-7);
    }

    #[test]
    fn two_branch_oracle_agrees_with_denoiser() {
        let (o, pi_o) = spike_slab_two_branch(0.5, 0.2, 0.1, 1.0);
        let (d, pi_d) = x_posterior_spike_slab(0.5, 0.2, 0.1, 1.0);
        assert!((o.mean - d.mean).abs() < 1e-10);
        assert!((o.var - d.var).abs() < 1e-10);
        assert!((pi_o - pi_d).abs() < 1e-10);
    }

    fn tiny_instance(noise_var: f64) -> ProblemInstance {
        let h = DMatrix::from_fn(3, 4, |i, j| ((i + 2 * j) as f64 * 0.9).cos());
        let x = DVector::from_vec(vec![1.0, -0.5, 0.0, 0.0]);
        ProblemInstance {
            y: Observations::Real(&h * &x + DVector::from_vec(vec![0.05, -0.02, 0.01])),
            h,
            groups: GroupStructure::uniform(2, 2).unwrap(),
            channel: Channel::linear(noise_var).unwrap(),
            sigma_x_sq: 1.0,
            x_true: Some(x),
            xi_true: Some(vec![true, false]),
            true_rho: None,
        }
    }

    #[test]
    fn near_certain_activity_is_ridge_regression() {
        let inst = tiny_instance(0.1);
        let post = exact_posterior_small(&inst, 1.0 - 1e-12, 1.0).unwrap();
        let Observations::Real(y) = &inst.y else { unreachable!() };
        let a = inst.h.transpose() * &inst.h / 0.1 + DMatrix::identity(4, 4);
        let cov = gauss_jordan_inverse(&a).unwrap();
        let mean = &cov * inst.h.tr_mul(y) / 0.1;
        assert!((post.x_mean - mean).amax() < 1e-9);
        assert!((post.x_var - cov.diagonal()).amax() < 1e-9);
        assert!((post.weight_sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uninformative_data_returns_prior() {
        let inst = tiny_instance(1e12);
        let post = exact_posterior_small(&inst, 0.3, 1.0).unwrap();
        assert!(post.x_mean.amax() < 1e-5);
        for p in post.xi_post {
            assert!((p - 0.3).abs() < 1e-6);
        }
        assert!((post.x_var[0] - 0.3).abs() < 1e-6);
    }

    #[test]
    fn quantized_instance_is_unsupported() {
        let mut inst = tiny_instance(0.1);
        inst.channel = Channel::quantized(2, 1.0, 0.1).unwrap();
        inst.y = Observations::Cells(vec![0, 1, 2]);
        assert!(matches!(exact_posterior_small(&inst, 0.5, 1.0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn nmse_reference_points() {
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        assert_eq!(nmse_db(&x, &x).unwrap(), NMSE_FLOOR_DB);
        assert!(nmse_db(&DVector::zeros(3), &x).unwrap().abs() < 1e-12);
        assert!(nmse_db(&(&x * 2.0), &x).unwrap().abs() < 1e-12);
        assert_eq!(nmse_db(&x, &DVector::zeros(3)), Err(Error::AllZeroTruth));
    }

    #[test]
    fn gauss_jordan_inverts() {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0]);
        let inv = gauss_jordan_inverse(&a).unwrap();
        assert!((&a * inv - DMatrix::identity(3, 3)).amax() < 1e-14);
        assert!(gauss_jordan_inverse(&DMatrix::from_element(2, 2, 1.0)).is_none());
    }
}
