//! EM outer loop learning the sparse rate: each E-step is a full HyGEC run,
//! each M-step averages the group activity probabilities.

use nalgebra::DVector;

use crate::denoisers::activity_llr;
use crate::error::{Error, Result};
use crate::hygec::{hygec_run, hygec_run_warm, HygecConfig};
use crate::model::{GecState, GroupStructure, ProblemInstance, RecoveryReport, Termination};
use crate::oracle::nmse_linear;
use crate::special::{ln_sigmoid, logit};

/// Clip applied to every learned rate, keeping the LLR prior finite.
pub const RHO_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    /// Maximum number of outer iterations `T`.
    pub max_outer: usize,
    /// Stop once `||x_pos(t+1) - x_pos(t)|| < tol * sqrt(N)`.
    pub tol: f64,
    /// Start each E-step from the previous E-step's final state.
    pub warm_start: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { max_outer: 30, tol: 1e-4, warm_start: false }
    }
}

/// Probability that group `k` is active given its likelihood messages and
/// the indicator messages `rho_hat_k`: the product over the group of each
/// element's posterior activity, accumulated as a sum of log-sigmoids.
pub fn group_activity(m_lik: &[f64], v_lik: &[f64], rho_hat: &[f64], sigma_x_sq: f64) -> f64 {
    debug_assert!(m_lik.len() == v_lik.len() && v_lik.len() == rho_hat.len());
    let log_pi: f64 = m_lik
        .iter()
        .zip(v_lik)
        .zip(rho_hat)
        .map(|((&m, &v), &r)| ln_sigmoid(logit(r) + activity_llr(m, v, sigma_x_sq)))
        .sum();
    log_pi.exp()
}

/// M-step: mean of the group activities, clipped to `[RHO_FLOOR, 1 - RHO_FLOOR]`.
pub fn em_update_rho(state: &GecState, groups: &GroupStructure, sigma_x_sq: f64) -> f64 {
    let total: f64 = groups
        .ranges()
        .map(|r| {
            group_activity(
                &state.m_x_lik.as_slice()[r.clone()],
                &state.v_x_lik.as_slice()[r.clone()],
                &state.rho_hat.as_slice()[r],
                sigma_x_sq,
            )
        })
        .sum();
    (total / groups.num_groups() as f64).clamp(RHO_FLOOR, 1.0 - RHO_FLOOR)
}

/// What one E-step did, for per-sweep traces across the whole EM run.
#[derive(Debug, Clone, PartialEq)]
pub struct EStep {
    /// Rate the inner run was given.
    pub rho: f64,
    /// Linear NMSE after each inner sweep; empty without ground truth.
    pub nmse_trace: Vec<f64>,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmOutput {
    pub x_pos: DVector<f64>,
    pub rho_final: f64,
    /// `nmse_trace` and `rho_trace` hold one entry per outer iteration.
    pub report: RecoveryReport,
    pub e_steps: Vec<EStep>,
}

/// Alternates HyGEC E-steps with the rate update until successive estimates
/// settle or `max_outer` E-steps have run.
pub fn em_hygec_run(inst: &ProblemInstance, rho_init: f64, cfg: &HygecConfig, em_cfg: &EmConfig) -> Result<EmOutput> {
    if !(rho_init > 0.0 && rho_init < 1.0) {
        return Err(Error::InvalidParameter(format!("initial sparse rate {rho_init} outside (0, 1)")));
    }
    if em_cfg.max_outer == 0 || !(em_cfg.tol > 0.0) {
        return Err(Error::InvalidParameter("EM needs max_outer >= 1 and a positive tolerance".into()));
    }
    let n = inst.signal_len();
    let mut rho = rho_init;
    let mut previous: Option<GecState> = None;
    let mut e_steps = Vec::new();
    let mut report = RecoveryReport {
        x_hat: DVector::zeros(n),
        nmse_trace: Vec::new(),
        rho_trace: Vec::new(),
        inner_iterations: 0,
        outer_iterations: 0,
        termination: Termination::MaxIterations,
    };
    for _ in 0..em_cfg.max_outer {
        let e_step = match (&previous, em_cfg.warm_start) {
            (Some(state), true) => hygec_run_warm(inst, rho, cfg, state.clone())?,
            _ => hygec_run(inst, rho, cfg)?,
        };
        report.inner_iterations += e_step.report.inner_iterations;
        report.outer_iterations += 1;
        report.x_hat = e_step.state.x_pos.clone();
        e_steps.push(EStep {
            rho,
            nmse_trace: e_step.report.nmse_trace.clone(),
            termination: e_step.report.termination,
        });
        if e_step.report.termination == Termination::NumericalFailure {
            report.termination = Termination::NumericalFailure;
            break;
        }
        rho = em_update_rho(&e_step.state, &inst.groups, inst.sigma_x_sq);
        report.rho_trace.push(rho);
        if let Some(x) = &inst.x_true {
            report.nmse_trace.push(nmse_linear(&e_step.state.x_pos, x).unwrap_or(f64::NAN));
        }
        let settled = previous
            .as_ref()
            .is_some_and(|p| (&e_step.state.x_pos - &p.x_pos).norm() < em_cfg.tol * (n as f64).sqrt());
        previous = Some(e_step.state);
        if settled {
            report.termination = Termination::Converged;
            break;
        }
    }
    Ok(EmOutput { x_pos: report.x_hat.clone(), rho_final: rho, report, e_steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::{generate_instance, InstanceSpec, MatrixKind};
    use crate::oracle::spike_slab_two_branch;

    #[test]
    fn single_element_density_ratio() {
        let s = 1.3;
        let pi = group_activity(&[0.0], &[s], &[0.5], s);
        assert!((pi - 1.0 / (1.0 + 2f64.sqrt())).abs() < 1e-14);
    }

    #[test]
    fn overwhelming_evidence_gives_certain_activity() {
        let pi = group_activity(&[40.0, -35.0, 50.0], &[0.01; 3], &[0.1; 3], 1.0);
        assert!((pi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn three_element_group_matches_mixture_oracle() {
        let m = [0.4, -1.2, 2.5];
        let v = [0.3, 0.05, 1.7];
        let r = [0.2, 0.6, 0.35];
        let s = 0.8;
        let pi = group_activity(&m, &v, &r, s);
        let expect: f64 = (0..3).map(|j| spike_slab_two_branch(m[j], v[j], r[j], s).1).product();
        assert!((pi - expect).abs() < 1e-12, "{pi} vs {expect}");
    }

    fn state_with_activities(groups: &GroupStructure, pis: &[f64]) -> GecState {
        // one-element groups with m = 0, v = sigma: each factor is
        // sigmoid(logit r - ln sqrt 2); solve for r
        let n = groups.len();
        let rho_hat: Vec<f64> = pis
            .iter()
            .map(|&p| crate::special::sigmoid(logit(p) + 0.5 * 2f64.ln()).clamp(1e-300, 1.0))
            .collect();
        GecState {
            m_z_pri: DVector::zeros(1),
            v_z_pri: DVector::zeros(1),
            m_z_lik: DVector::zeros(1),
            v_z_lik: DVector::zeros(1),
            m_x_pri: DVector::zeros(n),
            v_x_pri: DVector::zeros(n),
            m_x_lik: DVector::zeros(n),
            v_x_lik: DVector::from_element(n, 1.0),
            rho_hat: DVector::from_vec(rho_hat),
            x_pos: DVector::zeros(n),
            v_x_pos: DVector::zeros(n),
            sweeps: 1,
        }
    }

    #[test]
    fn rate_update_is_mean_of_activities() {
        let groups = GroupStructure::uniform(3, 1).unwrap();
        let state = state_with_activities(&groups, &[0.2, 0.4, 0.6]);
        assert!((em_update_rho(&state, &groups, 1.0) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn rate_update_clips_at_one() {
        let groups = GroupStructure::uniform(2, 1).unwrap();
        let mut state = state_with_activities(&groups, &[0.5, 0.5]);
        state.m_x_lik.fill(1e3);
        state.v_x_lik.fill(1e-6);
        assert_eq!(em_update_rho(&state, &groups, 1.0), 1.0 - RHO_FLOOR);
    }

    fn spec(snr_db: f64) -> InstanceSpec {
        InstanceSpec {
            m: 100,
            n: 200,
            k: 40,
            rho: 0.1,
            sigma_x_sq: 1.0,
            snr_db,
            matrix: MatrixKind::IidGaussian { mean: 0.0 },
            bits: None,
            clip_range: None,
        }
    }

    #[test]
    fn single_outer_iteration() {
        let inst = generate_instance(&spec(15.0), 2).unwrap();
        let em_cfg = EmConfig { max_outer: 1, ..EmConfig::default() };
        let out = em_hygec_run(&inst, 0.05, &HygecConfig::default(), &em_cfg).unwrap();
        assert_eq!(out.report.outer_iterations, 1);
        assert_eq!(out.report.rho_trace.len(), 1);
        assert_eq!(out.rho_final, out.report.rho_trace[0]);
    }

    #[test]
    fn planted_rate_is_recovered_at_high_snr() {
        let inst = generate_instance(&spec(25.0), 4).unwrap();
        let cfg = HygecConfig::default();
        let e_step = hygec_run(&inst, 0.1, &cfg).unwrap();
        let rho = em_update_rho(&e_step.state, &inst.groups, 1.0);
        let bound = 3.0 * (0.1f64 * 0.9 / 40.0).sqrt();
        assert!((rho - 0.1).abs() < bound, "{rho}");
    }

    #[test]
    fn em_learns_rate_from_low_start() {
        let inst = generate_instance(&spec(20.0), 6).unwrap();
        let out = em_hygec_run(&inst, 0.01, &HygecConfig::default(), &EmConfig::default()).unwrap();
        let realized = inst.xi_true.as_ref().unwrap().iter().filter(|&&a| a).count() as f64 / 40.0;
        assert!((out.rho_final - realized).abs() < 0.03, "{} vs {realized}", out.rho_final);
        assert!(out.report.rho_trace.iter().all(|&r| r > 0.0 && r < 1.0));
        assert_eq!(out.report.nmse_trace.len(), out.report.outer_iterations);
        assert_eq!(out.e_steps.len(), out.report.outer_iterations);
        assert_eq!(out.e_steps[0].rho, 0.01);
        let sweeps: usize = out.e_steps.iter().map(|e| e.nmse_trace.len()).sum();
        assert_eq!(sweeps, out.report.inner_iterations);
    }

    #[test]
    fn invalid_initial_rate_is_rejected() {
        let inst = generate_instance(&spec(10.0), 0).unwrap();
        assert!(em_hygec_run(&inst, 0.0, &HygecConfig::default(), &EmConfig::default()).is_err());
    }
}
