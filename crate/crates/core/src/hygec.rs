//! The HyGEC inner engine: EP messages on the linear-mixing part of the
//! factor graph, sum-product LLR messages on the group indicators.

use faer::linalg::solvers::DenseSolveCore;
use faer::{Mat, MatRef, Side};
use nalgebra::{DMatrix, DVector};

use crate::denoisers::{extrinsic, llr_messages, x_posterior_spike_slab, z_posterior_awgn, z_posterior_quantized, Moments};
use crate::error::{Error, Result};
use crate::model::{validate_instance, GecState, Observations, ProblemInstance, RecoveryReport, Termination};
use crate::oracle::nmse_linear;

/// Initial output-side prior variance `P_z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PzInit {
    /// `rho sigma_x^2 ||H||_F^2 / M + noise_var`, the prior variance of `z + w`.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HygecConfig {
    /// Maximum number of sweeps `T`.
    pub max_iter: usize,
    /// Stop once `||x_pos(t+1) - x_pos(t)||^2 < tol * N`.
    pub tol: f64,
    /// Weight on the freshly computed extrinsic message; 1 disables damping.
    pub damping: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub p_z_init: PzInit,
    /// Initialize `v_x_pri` to `rho` instead of the prior variance `rho sigma_x^2`.
    pub literal_x_prior_init: bool,
    /// Keep the previous message whenever the posterior is no more precise
    /// than the cavity, instead of sending the clamped `(v_max * dh, v_max)`.
    pub keep_on_nonpositive_precision: bool,
}

impl Default for HygecConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-8,
            damping: 0.7,
            v_min: 1e-11,
            v_max: 1e11,
            p_z_init: PzInit::Auto,
            literal_x_prior_init: false,
            keep_on_nonpositive_precision: true,
        }
    }
}

impl HygecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tolerance {} must be positive", self.tol)));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidParameter(format!("damping {} outside (0, 1]", self.damping)));
        }
        if !(self.v_min > 0.0 && self.v_min < self.v_max && self.v_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "clamp bounds [{}, {}] are not an interval of positive reals",
                self.v_min, self.v_max
            )));
        }
        if let PzInit::Fixed(p) = self.p_z_init {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::InvalidParameter(format!("P_z {p} must be positive")));
            }
        }
        Ok(())
    }
}

/// Outputs of one LMMSE solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LmmseOutput {
    pub x_mean: DVector<f64>,
    pub x_var: DVector<f64>,
    pub z_mean: DVector<f64>,
    pub z_var: DVector<f64>,
}

/// Gaussian posterior of `x` under the likelihood messages on `z = Hx` and
/// the prior messages on `x`.
///
/// Factors `A = H^T Diag(1/v_z) H + Diag(1/v_x)` once by Cholesky and
/// forms `Q = A^{-1}` explicitly, so both `diag(Q)` and `diag(H Q H^T)` are
/// exact up to rounding even when some prior variances sit at the upper
/// clamp (where the M x M Woodbury form cancels catastrophically).
pub fn lmmse_block(
    h: &DMatrix<f64>,
    m_z_lik: &DVector<f64>,
    v_z_lik: &DVector<f64>,
    m_x_pri: &DVector<f64>,
    v_x_pri: &DVector<f64>,
) -> Result<LmmseOutput> {
    let (m, n) = h.shape();
    if m_z_lik.len() != m || v_z_lik.len() != m || m_x_pri.len() != n || v_x_pri.len() != n {
        return Err(Error::DimensionMismatch("LMMSE inputs do not match H".into()));
    }
    let hf = MatRef::from_column_major_slice(h.as_slice(), m, n);
    let row_scale: Vec<f64> = v_z_lik.iter().map(|v| v.recip().sqrt()).collect();
    let scaled = Mat::from_fn(m, n, |i, j| hf[(i, j)] * row_scale[i]);
    let mut a = scaled.transpose() * &scaled;
    for j in 0..n {
        a[(j, j)] += v_x_pri[j].recip();
    }
    let llt = a.llt(Side::Lower).map_err(|_| Error::FactorizationFailure)?;
    let q = llt.inverse();

    let rhs = h.tr_mul(&m_z_lik.component_div(v_z_lik)) + m_x_pri.component_div(v_x_pri);
    let x_mean = DVector::from_fn(n, |i, _| (0..n).map(|j| q[(i, j)] * rhs[j]).sum());
    let x_var = DVector::from_fn(n, |i, _| q[(i, i)]);
    let z_mean = h * &x_mean;
    let hq = hf * &q;
    let z_var = DVector::from_fn(m, |i, _| (0..n).map(|j| hq[(i, j)] * hf[(i, j)]).sum());
    if x_mean.iter().chain(x_var.iter()).chain(z_mean.iter()).chain(z_var.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("LMMSE block"));
    }
    Ok(LmmseOutput { x_mean, x_var, z_mean, z_var })
}

fn resolve_p_z(inst: &ProblemInstance, rho: f64, cfg: &HygecConfig) -> f64 {
    match cfg.p_z_init {
        PzInit::Fixed(p) => p,
        PzInit::Auto => {
            rho * inst.sigma_x_sq * inst.h.norm_squared() / inst.num_measurements() as f64 + inst.channel.noise_var()
        }
    }
}

/// The Algorithm-2 init block. Likelihood-side messages start
/// uninformative `(0, v_max)`; the indicator messages start at `rho`.
pub fn initial_state(inst: &ProblemInstance, rho: f64, cfg: &HygecConfig) -> GecState {
    let (m, n) = inst.h.shape();
    let p_z = resolve_p_z(inst, rho, cfg).clamp(cfg.v_min, cfg.v_max);
    let v_x = if cfg.literal_x_prior_init { rho } else { rho * inst.sigma_x_sq }.clamp(cfg.v_min, cfg.v_max);
    GecState {
        m_z_pri: DVector::zeros(m),
        v_z_pri: DVector::from_element(m, p_z),
        m_z_lik: DVector::zeros(m),
        v_z_lik: DVector::from_element(m, cfg.v_max),
        m_x_pri: DVector::zeros(n),
        v_x_pri: DVector::from_element(n, v_x),
        m_x_lik: DVector::zeros(n),
        v_x_lik: DVector::from_element(n, cfg.v_max),
        rho_hat: DVector::from_element(n, rho),
        x_pos: DVector::zeros(n),
        v_x_pos: DVector::from_element(n, rho * inst.sigma_x_sq),
        sweeps: 0,
    }
}

/// `new = damping * computed + (1 - damping) * old`, applied to means and
/// variances alike.
fn damp_into(mean: &mut DVector<f64>, var: &mut DVector<f64>, computed: &[Moments], damping: f64, replace: bool) {
    for (i, c) in computed.iter().enumerate() {
        if replace {
            mean[i] = c.mean;
            var[i] = c.var;
        } else {
            mean[i] = damping * c.mean + (1.0 - damping) * mean[i];
            var[i] = damping * c.var + (1.0 - damping) * var[i];
        }
    }
}

/// Extrinsic message with the non-positive-precision rule. The clamped
/// message keeps a nonzero mean at near-zero precision; on an
/// underdetermined `H` that drives the LMMSE mean along the null space, so
/// by default the previous message is kept instead.
fn message(pos: Moments, cav: Moments, old: Moments, cfg: &HygecConfig) -> Moments {
    if cfg.keep_on_nonpositive_precision && 1.0 / pos.var - 1.0 / cav.var <= 0.0 {
        return old;
    }
    extrinsic(pos, cav, cfg.v_min, cfg.v_max)
}

fn check_state(state: &GecState) -> Result<()> {
    match state.first_non_finite() {
        Some(name) => Err(Error::NonFinite(name)),
        None => Ok(()),
    }
}

/// One full Algorithm-2 sweep, in place.
///
/// Order: output denoiser, LMMSE -> `x` likelihood, spike-and-slab denoiser
/// -> `x` prior, LMMSE -> `z` prior, LLR messages. Likelihood-side messages
/// carry no history on the first sweep and are written undamped.
pub fn hygec_sweep(state: &mut GecState, inst: &ProblemInstance, rho: f64, cfg: &HygecConfig) -> Result<()> {
    let vmin = cfg.v_min;
    let first = state.sweeps == 0;
    let noise_var = inst.channel.noise_var();

    // (a) output denoiser
    let z_lik: Vec<Moments> = (0..inst.num_measurements())
        .map(|i| {
            let cav = Moments::new(state.m_z_pri[i], state.v_z_pri[i]);
            let pos = match &inst.y {
                Observations::Real(y) => Ok(z_posterior_awgn(y[i], cav.mean, cav.var, noise_var)),
                Observations::Cells(cells) => {
                    let (lo, hi) = inst.channel.cell_edges(cells[i]).ok_or(Error::DimensionMismatch(format!(
                        "cell index {} outside the quantizer",
                        cells[i]
                    )))?;
                    z_posterior_quantized(lo, hi, cav.mean, cav.var, noise_var)
                }
            };
            match pos {
                Ok(mut pos) => {
                    pos.var = pos.var.max(vmin);
                    Ok(message(pos, cav, Moments::new(state.m_z_lik[i], state.v_z_lik[i]), cfg))
                }
                // an unreachable cell carries no usable evidence this sweep
                Err(Error::DegenerateCell { .. }) => Ok(Moments::new(state.m_z_lik[i], state.v_z_lik[i])),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    damp_into(&mut state.m_z_lik, &mut state.v_z_lik, &z_lik, cfg.damping, first);

    // (b) LMMSE -> x likelihood
    let lin = lmmse_block(&inst.h, &state.m_z_lik, &state.v_z_lik, &state.m_x_pri, &state.v_x_pri)?;
    let x_lik: Vec<Moments> = (0..inst.signal_len())
        .map(|j| {
            let pos = Moments::new(lin.x_mean[j], lin.x_var[j].max(vmin));
            message(pos, Moments::new(state.m_x_pri[j], state.v_x_pri[j]), Moments::new(state.m_x_lik[j], state.v_x_lik[j]), cfg)
        })
        .collect();
    damp_into(&mut state.m_x_lik, &mut state.v_x_lik, &x_lik, cfg.damping, first);

    // (c) spike-and-slab denoiser -> x prior
    let x_pri: Vec<Moments> = (0..inst.signal_len())
        .map(|j| {
            let cav = Moments::new(state.m_x_lik[j], state.v_x_lik[j]);
            let (pos, _) = x_posterior_spike_slab(cav.mean, cav.var, state.rho_hat[j], inst.sigma_x_sq);
            state.x_pos[j] = pos.mean;
            state.v_x_pos[j] = pos.var;
            message(Moments::new(pos.mean, pos.var.max(vmin)), cav, Moments::new(state.m_x_pri[j], state.v_x_pri[j]), cfg)
        })
        .collect();
    damp_into(&mut state.m_x_pri, &mut state.v_x_pri, &x_pri, cfg.damping, false);

    // (d) LMMSE -> z prior
    let lin = lmmse_block(&inst.h, &state.m_z_lik, &state.v_z_lik, &state.m_x_pri, &state.v_x_pri)?;
    let z_pri: Vec<Moments> = (0..inst.num_measurements())
        .map(|i| {
            let pos = Moments::new(lin.z_mean[i], lin.z_var[i].max(vmin));
            message(pos, Moments::new(state.m_z_lik[i], state.v_z_lik[i]), Moments::new(state.m_z_pri[i], state.v_z_pri[i]), cfg)
        })
        .collect();
    damp_into(&mut state.m_z_pri, &mut state.v_z_pri, &z_pri, cfg.damping, false);

    // (e) indicator messages
    let rho_hat = llr_messages(
        state.m_x_lik.as_slice(),
        state.v_x_lik.as_slice(),
        rho,
        inst.sigma_x_sq,
        &inst.groups,
    );
    state.rho_hat = DVector::from_vec(rho_hat);
    state.sweeps += 1;
    check_state(state)
}

/// Final state and report of one inner run.
#[derive(Debug, Clone, PartialEq)]
pub struct HygecOutput {
    /// Carries the Algorithm-2 outputs `m_x_lik`, `v_x_lik`, `rho_hat`, `x_pos`.
    pub state: GecState,
    pub report: RecoveryReport,
}

fn check_run_inputs(inst: &ProblemInstance, rho: f64, cfg: &HygecConfig) -> Result<()> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!("sparse rate {rho} outside (0, 1)")));
    }
    cfg.validate()?;
    validate_instance(inst)
}

/// Runs HyGEC from the Algorithm-2 init block.
///
/// Numerical breakdowns end the run with
/// [`Termination::NumericalFailure`] in the report rather than an error, so
/// that a sweep over many configurations survives divergent ones.
pub fn hygec_run(inst: &ProblemInstance, rho: f64, cfg: &HygecConfig) -> Result<HygecOutput> {
    check_run_inputs(inst, rho, cfg)?;
    iterate(initial_state(inst, rho, cfg), inst, rho, cfg)
}

/// Runs HyGEC starting from an earlier state instead of the init block;
/// the indicator messages are reset to `rho`.
pub fn hygec_run_warm(inst: &ProblemInstance, rho: f64, cfg: &HygecConfig, mut state: GecState) -> Result<HygecOutput> {
    check_run_inputs(inst, rho, cfg)?;
    if state.x_pos.len() != inst.signal_len() || state.m_z_pri.len() != inst.num_measurements() {
        return Err(Error::DimensionMismatch("warm-start state does not match the instance".into()));
    }
    state.rho_hat.fill(rho);
    iterate(state, inst, rho, cfg)
}

fn iterate(mut state: GecState, inst: &ProblemInstance, rho: f64, cfg: &HygecConfig) -> Result<HygecOutput> {
    let n = inst.signal_len();
    let mut nmse_trace = Vec::new();
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    for _ in 0..cfg.max_iter {
        let previous = state.x_pos.clone();
        let last_good = state.clone();
        if hygec_sweep(&mut state, inst, rho, cfg).is_err() {
            state = last_good;
            termination = Termination::NumericalFailure;
            break;
        }
        iterations += 1;
        if let Some(x) = &inst.x_true {
            nmse_trace.push(nmse_linear(&state.x_pos, x).unwrap_or(f64::NAN));
        }
        if (&state.x_pos - previous).norm_squared() < cfg.tol * n as f64 {
            termination = Termination::Converged;
            break;
        }
    }
    let report = RecoveryReport {
        x_hat: state.x_pos.clone(),
        nmse_trace,
        rho_trace: Vec::new(),
        inner_iterations: iterations,
        outer_iterations: 0,
        termination,
    };
    Ok(HygecOutput { state, report })
}

/// Outcome of [`gaussian_reproduction`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reproduction {
    /// Elements whose messages stayed clear of the clamps.
    pub checked: usize,
    /// Largest `|mean - x_pos| / max(1, |x_pos|)`.
    pub max_mean_err: f64,
    /// Largest `|var - v_x_pos| / v_x_pos`.
    pub max_var_rel_err: f64,
}

/// Fixed-point consistency: the product of the `x` prior and likelihood
/// messages should reproduce the spike-and-slab posterior `(x_pos, v_x_pos)`.
/// Elements where a clamp or the non-positive-precision rule shaped either
/// message are skipped, since the identity does not hold there. A clamp
/// counts as active for any variance within a factor `margin` of it:
/// precisions near `1 / v_min` make the LMMSE solve ill-conditioned, so
/// those variances jitter at the 1e-6 level from sweep to sweep and the
/// damped messages lag the posterior by a fraction of that jitter.
pub fn gaussian_reproduction(state: &GecState, cfg: &HygecConfig, margin: f64) -> Reproduction {
    let inside = |v: f64| v > cfg.v_min * margin && v < cfg.v_max / margin;
    let mut out = Reproduction { checked: 0, max_mean_err: 0.0, max_var_rel_err: 0.0 };
    for j in 0..state.x_pos.len() {
        let (pri, lik) = (Moments::new(state.m_x_pri[j], state.v_x_pri[j]), Moments::new(state.m_x_lik[j], state.v_x_lik[j]));
        let pos = Moments::new(state.x_pos[j], state.v_x_pos[j]);
        if !(inside(pri.var) && inside(lik.var) && inside(pos.var) && 1.0 / pos.var > 1.0 / lik.var) {
            continue;
        }
        let prod = pri.product(lik);
        out.checked += 1;
        out.max_mean_err = out.max_mean_err.max((prod.mean - pos.mean).abs() / pos.mean.abs().max(1.0));
        out.max_var_rel_err = out.max_var_rel_err.max((prod.var - pos.var).abs() / pos.var);
    }
    out
}
