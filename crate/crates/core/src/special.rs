//! Scalar Gaussian helpers: log densities, the normal CDF, and moments of a
//! standard normal truncated to an interval.
//!
//! Truncated moments are evaluated along one of three paths:
//!
//! * narrow intervals use Gauss-Legendre quadrature on the interval itself,
//!   which avoids the cancellation in the closed form when the interval is
//!   much shorter than the Gaussian scale;
//! * intervals whose nearer edge lies within 8 standard deviations use the
//!   closed form with `erf`/`erfc` differences (`libm`, accurate to about
//!   one ulp, which the variance formula needs: it amplifies relative errors
//!   in the tail mass by roughly `x^4`);
//! * deeper tails are handled with the continued fraction of the Mills ratio,
//!   which expresses the centred moments without subtracting large numbers.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::OnceLock;

use libm::{erf, erfc};

/// `ln(sqrt(2 pi))`.
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Beyond this many standard deviations the continued-fraction tail path is used.
pub const TAIL_SWITCH: f64 = 8.0;

pub fn ln_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * d * d / var - 0.5 * var.ln() - LN_SQRT_2PI
}

pub fn std_normal_pdf(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        (-0.5 * x * x - LN_SQRT_2PI).exp()
    }
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Numerically safe logistic function.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(t))` without overflow for large negative `t`.
pub fn ln_sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        -(-t).exp().ln_1p()
    } else {
        t - t.exp().ln_1p()
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// First two tails of the Mills-ratio continued fraction
/// `R(x) = 1/(x + 1/(x + 2/(x + 3/(x + ...))))`.
///
/// Returns `(t, s)` with `R = 1/(x + t)` and `t = 1/(x + s)`; both are
/// accurate for `x >= TAIL_SWITCH`.
fn mills_tails(x: f64) -> (f64, f64) {
    const DEPTH: usize = 120;
    let mut r = 0.0;
    for k in (2..=DEPTH).rev() {
        r = k as f64 / (x + r);
    }
    let s = r;
    (1.0 / (x + s), s)
}

/// Positive Gauss-Legendre nodes on `[-1, 1]` with their weights; the
/// rule is exactly symmetric, each node `x` standing for the pair `±x`.
fn gauss_legendre() -> &'static [(f64, f64)] {
    static NODES: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    NODES.get_or_init(|| gauss_legendre_nodes(24))
}

/// Newton iteration on the Legendre recurrence for the `n / 2` positive
/// roots of `P_n`, `n` even.
fn gauss_legendre_nodes(n: usize) -> Vec<(f64, f64)> {
    debug_assert!(n % 2 == 0);
    let mut out = Vec::with_capacity(n / 2);
    for i in 0..n / 2 {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Moments of a standard normal restricted to `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedMoments {
    pub mean: f64,
    pub var: f64,
    /// `ln P(lower <= U <= upper)` for `U ~ N(0, 1)`.
    pub log_mass: f64,
}

/// Mean, variance and log-probability of `U ~ N(0,1)` conditioned on
/// `lower <= U <= upper`. Edges may be infinite; `lower < upper` is required.
pub fn truncated_std_normal(lower: f64, upper: f64) -> TruncatedMoments {
    debug_assert!(lower < upper, "empty interval [{lower}, {upper}]");
    if lower == f64::NEG_INFINITY && upper == f64::INFINITY {
        return TruncatedMoments { mean: 0.0, var: 1.0, log_mass: 0.0 };
    }
    // Reflect so that the bulk of the interval sits at or below zero.
    if lower + upper > 0.0 {
        let t = truncated_std_normal(-upper, -lower);
        return TruncatedMoments { mean: -t.mean, ..t };
    }
    let width = upper - lower;
    if width.is_finite() && width <= 2.0 && width * lower.abs().max(upper.abs()) <= 2.0 {
        return narrow_interval(lower, upper);
    }
    if upper >= -TAIL_SWITCH {
        closed_form(lower, upper)
    } else {
        deep_tail(lower, upper)
    }
}

fn narrow_interval(lower: f64, upper: f64) -> TruncatedMoments {
    let mode = 0.0f64.clamp(lower, upper);
    let half = 0.5 * (upper - lower);
    let mid = 0.5 * (upper + lower);
    let density = |u: f64| (-0.5 * (u - mode) * (u + mode)).exp();
    // node pairs are summed together so a symmetric interval gives a mean of exactly 0
    let pairs: Vec<(f64, f64, f64, f64)> = gauss_legendre()
        .iter()
        .map(|&(t, w)| {
            let (du_hi, du_lo) = (half * t, -half * t);
            (du_hi, w * density(mid + du_hi), du_lo, w * density(mid + du_lo))
        })
        .collect();
    let mass: f64 = pairs.iter().map(|p| p.1 + p.3).sum();
    let offset = pairs.iter().map(|p| p.1 * p.0 + p.3 * p.2).sum::<f64>() / mass;
    let second: f64 = pairs.iter().map(|p| p.1 * (p.0 - offset).powi(2) + p.3 * (p.2 - offset).powi(2)).sum();
    TruncatedMoments {
        mean: mid + offset,
        var: second / mass,
        log_mass: (half * mass).ln() - 0.5 * mode * mode - LN_SQRT_2PI,
    }
}

fn closed_form(lower: f64, upper: f64) -> TruncatedMoments {
    let mass = if upper <= 0.0 {
        0.5 * (erfc(-upper * FRAC_1_SQRT_2) - erfc(-lower * FRAC_1_SQRT_2))
    } else {
        0.5 * (erf(upper * FRAC_1_SQRT_2) - erf(lower * FRAC_1_SQRT_2))
    };
    let pdf_lo = std_normal_pdf(lower);
    let pdf_hi = std_normal_pdf(upper);
    let lo_term = if lower.is_finite() { lower * pdf_lo } else { 0.0 };
    let hi_term = if upper.is_finite() { upper * pdf_hi } else { 0.0 };
    let mean = (pdf_lo - pdf_hi) / mass;
    let var = 1.0 + (lo_term - hi_term) / mass - mean * mean;
    TruncatedMoments { mean, var: var.max(0.0), log_mass: mass.ln() }
}

/// Both edges below `-TAIL_SWITCH`. Works in `y = upper - u >= 0`, where the
/// density is proportional to `exp(-x y - y^2/2)` with `x = -upper`.
fn deep_tail(lower: f64, upper: f64) -> TruncatedMoments {
    let xb = -upper;
    // integrals of y^k exp(-x y - y^2/2) over [0, inf) in stable form
    let moments = |x: f64| {
        let (t, s) = mills_tails(x);
        let r = 1.0 / (x + t);
        (r, t * r, s * t * r)
    };
    let (mut j0, mut j1, mut j2) = moments(xb);
    if lower.is_finite() {
        let w = upper - lower;
        let decay = (-(w * xb + 0.5 * w * w)).exp();
        if decay > 0.0 {
            let (a0, a1, a2) = moments(-lower);
            j0 -= decay * a0;
            j1 -= decay * (w * a0 + a1);
            j2 -= decay * (w * w * a0 + 2.0 * w * a1 + a2);
        }
    }
    let mean_y = j1 / j0;
    let var = j2 / j0 - mean_y * mean_y;
    TruncatedMoments {
        mean: upper - mean_y,
        var: var.max(0.0),
        log_mass: -0.5 * xb * xb - LN_SQRT_2PI + j0.ln(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Simpson reference over `[lower, upper]` clipped to a window around the mass.
    fn reference(lower: f64, upper: f64) -> (f64, f64) {
        let lo = lower.max(-60.0);
        let hi = upper.min(60.0);
        let n = 400_000;
        let h = (hi - lo) / n as f64;
        let peak = 0.0f64.clamp(lo, hi);
        let pts: Vec<(f64, f64)> = (0..=n)
            .map(|i| {
                let u = lo + i as f64 * h;
                let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                (u, w * (-0.5 * (u * u - peak * peak)).exp())
            })
            .collect();
        let m0: f64 = pts.iter().map(|p| p.1).sum();
        let mean = pts.iter().map(|&(u, g)| g * u).sum::<f64>() / m0;
        let var = pts.iter().map(|&(u, g)| g * (u - mean) * (u - mean)).sum::<f64>() / m0;
        (mean, var)
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let nodes = gauss_legendre();
        let weight_sum: f64 = nodes.iter().map(|&(_, w)| 2.0 * w).sum();
        assert!((weight_sum - 2.0).abs() < 1e-14);
        let x10: f64 = nodes.iter().map(|&(x, w)| 2.0 * w * x.powi(10)).sum();
        assert!((x10 - 2.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn full_line_is_untruncated() {
        let t = truncated_std_normal(f64::NEG_INFINITY, f64::INFINITY);
        assert_eq!((t.mean, t.var, t.log_mass), (0.0, 1.0, 0.0));
    }

    #[test]
    fn half_line_matches_known_moments() {
        let t = truncated_std_normal(0.0, f64::INFINITY);
        let mean = (2.0 / PI).sqrt();
        assert!((t.mean - mean).abs() < 1e-14);
        assert!((t.var - (1.0 - 2.0 / PI)).abs() < 1e-14);
        assert!((t.log_mass - 0.5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn paths_agree_with_trapezoid_reference() {
        let cases = [
            (-1.0, 1.0),
            (-0.3, 0.1),
            (0.5, 0.5001),
            (-3.0, -1.5),
            (-7.9, -7.0),
            (2.0, f64::INFINITY),
            (f64::NEG_INFINITY, -7.5),
            (f64::NEG_INFINITY, -8.5),
            (-12.0, -9.0),
            (-9.1, -8.9),
            (f64::NEG_INFINITY, -30.0),
            (15.0, 15.3),
            (-4.0, 6.0),
        ];
        for (lo, hi) in cases {
            let t = truncated_std_normal(lo, hi);
            let (mean, var) = reference(lo, hi);
            assert!((t.mean - mean).abs() < 1e-9 * (1.0 + mean.abs()), "{lo}..{hi}: mean {} vs {mean}", t.mean);
            assert!((t.var - var).abs() < 1e-7 * var, "{lo}..{hi}: var {} vs {var}", t.var);
        }
    }

    #[test]
    fn tail_paths_meet_continuously_at_switch() {
        let below = truncated_std_normal(f64::NEG_INFINITY, -TAIL_SWITCH - 1e-12);
        let above = truncated_std_normal(f64::NEG_INFINITY, -TAIL_SWITCH + 1e-12);
        assert!((below.var / above.var - 1.0).abs() < 1e-10);
        assert!((below.mean - above.mean).abs() < 1e-8);
        assert!((below.log_mass - above.log_mass).abs() < 1e-8);
    }

    #[test]
    fn far_tail_stays_finite() {
        let t = truncated_std_normal(f64::NEG_INFINITY, -1e4);
        assert!(t.mean.is_finite() && t.var > 0.0 && t.log_mass.is_finite());
        // exponential tail: variance ~ 1/x^2
        assert!((t.var * 1e8 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn logistic_helpers_are_stable() {
        assert_eq!(sigmoid(800.0), 1.0);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!((ln_sigmoid(-800.0) + 800.0).abs() < 1e-12);
        assert!((logit(sigmoid(0.3)) - 0.3).abs() < 1e-15);
    }
}
