//! Oracle parity checks: closed-form denoisers against quadrature, HyGEC
//! against exact enumeration, and the EP message algebra. Shared by the
//! `check` subcommand and the acceptance suite.

use hygec::denoisers::{extrinsic, group_posteriors, x_posterior_spike_slab, z_posterior_awgn, z_posterior_quantized, Moments};
use hygec::hygec::{gaussian_reproduction, Reproduction};
use hygec::oracle::{exact_posterior_small, ln_cell_likelihood, quad_z_posterior, spike_slab_two_branch, QuadGrid};
use hygec::{generate_instance, hygec_run, Channel, HygecConfig, InstanceSpec, Termination};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;

/// Largest deviations seen by [`denoiser_parity`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DenoiserParity {
    pub draws: usize,
    pub awgn_mean_err: f64,
    pub awgn_var_rel_err: f64,
    pub quantized_mean_err: f64,
    pub quantized_var_rel_err: f64,
    /// Quantized draws whose observed cell was numerically impossible.
    pub degenerate_cells: usize,
    /// Largest of the mean, variance and activity deviations, each scaled
    /// by `max(1, |reference|)`.
    pub spike_slab_err: f64,
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    10f64.powf(rng.random_range(lo.log10()..hi.log10()))
}

/// Draws `draws` parameter sets with `v` log-uniform on `[1e-6, 1e4]`,
/// `|m| <= 50` and noise variance log-uniform on `[1e-4, 1e2]`; observations
/// are sampled from the model itself so every likelihood is plausible.
pub fn denoiser_parity(draws: usize, seed: u64) -> Result<DenoiserParity> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = QuadGrid::default();
    let mut out = DenoiserParity { draws, ..DenoiserParity::default() };
    for _ in 0..draws {
        let m = rng.random_range(-50.0..=50.0);
        let v = log_uniform(&mut rng, 1e-6, 1e4);
        let noise = log_uniform(&mut rng, 1e-4, 1e2);
        let u = m + (v + noise).sqrt() * rng.sample::<f64, _>(StandardNormal);

        let closed = z_posterior_awgn(u, m, v, noise);
        let quad = quad_z_posterior(|z| -0.5 * (u - z) * (u - z) / noise, m, v, grid)?;
        out.awgn_mean_err = out.awgn_mean_err.max((closed.mean - quad.mean).abs());
        out.awgn_var_rel_err = out.awgn_var_rel_err.max((closed.var - quad.var).abs() / quad.var);

        let bits = rng.random_range(1..=4);
        let clip = log_uniform(&mut rng, 0.1, 30.0);
        let channel = Channel::quantized(bits, clip, noise)?;
        let (lo, hi) = channel.cell_edges(channel.quantize(u).expect("quantized channel")).expect("valid cell");
        match z_posterior_quantized(lo, hi, m, v, noise) {
            Ok(closed) => {
                let quad = quad_z_posterior(|z| ln_cell_likelihood(z, lo, hi, noise), m, v, grid)?;
                out.quantized_mean_err = out.quantized_mean_err.max((closed.mean - quad.mean).abs());
                out.quantized_var_rel_err = out.quantized_var_rel_err.max((closed.var - quad.var).abs() / quad.var);
            }
            Err(hygec::Error::DegenerateCell { .. }) => out.degenerate_cells += 1,
            Err(e) => return Err(e.into()),
        }

        let rho = rng.random_range(1e-3..1.0 - 1e-3);
        let sigma_x_sq = log_uniform(&mut rng, 1e-2, 1e2);
        let (a, pa) = x_posterior_spike_slab(m, v, rho, sigma_x_sq);
        let (b, pb) = spike_slab_two_branch(m, v, rho, sigma_x_sq);
        let scaled = |x: f64, r: f64| (x - r).abs() / r.abs().max(1.0);
        out.spike_slab_err = out.spike_slab_err.max(scaled(a.mean, b.mean)).max(scaled(a.var, b.var)).max((pa - pb).abs());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PosteriorParity {
    pub instances: usize,
    /// Root mean square of `x_pos - exact mean` pooled over all instances.
    pub pooled_rms: f64,
    /// Largest per-instance RMS deviation.
    pub worst_rms: f64,
    /// Mean absolute error of the group activities against the exact ones.
    pub xi_mae: f64,
    /// Runs that stopped without meeting the stopping rule.
    pub unconverged: usize,
}

/// Runs HyGEC with the true rate on `seeds` draws of `spec` (which must be
/// unquantized) and compares against exact enumeration.
pub fn posterior_parity(spec: &InstanceSpec, seeds: impl IntoIterator<Item = u64>, cfg: &HygecConfig) -> Result<PosteriorParity> {
    let mut out = PosteriorParity::default();
    let (mut sq, mut xi_abs, mut xi_count) = (0.0, 0.0, 0usize);
    for seed in seeds {
        let inst = generate_instance(spec, seed)?;
        let exact = exact_posterior_small(&inst, spec.rho, spec.sigma_x_sq)?;
        let run = hygec_run(&inst, spec.rho, cfg)?;
        if run.report.termination != Termination::Converged {
            out.unconverged += 1;
        }
        let d = (&run.state.x_pos - &exact.x_mean).norm_squared();
        sq += d;
        out.worst_rms = out.worst_rms.max((d / spec.n as f64).sqrt());
        let post = group_posteriors(
            run.state.m_x_lik.as_slice(),
            run.state.v_x_lik.as_slice(),
            spec.rho,
            spec.sigma_x_sq,
            &inst.groups,
        );
        xi_abs += post.iter().zip(&exact.xi_post).map(|(a, b)| (a - b).abs()).sum::<f64>();
        xi_count += post.len();
        out.instances += 1;
    }
    if out.instances > 0 {
        out.pooled_rms = (sq / (out.instances * spec.n) as f64).sqrt();
        out.xi_mae = xi_abs / xi_count as f64;
    }
    Ok(out)
}

/// Largest deviations of `extrinsic(pos, cav) * cav` from `pos` over random
/// pairs with `cav` strictly less precise than `pos`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RoundTrip {
    pub pairs: usize,
    pub var_rel_err: f64,
    /// `|mean error| / max(1, |pos.mean|)`.
    pub mean_err: f64,
}

pub fn extrinsic_round_trip(pairs: usize, seed: u64) -> RoundTrip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = RoundTrip { pairs, ..RoundTrip::default() };
    for _ in 0..pairs {
        let pos = Moments::new(rng.random_range(-50.0..50.0), log_uniform(&mut rng, 1e-6, 1e4));
        let cav = Moments::new(rng.random_range(-50.0..50.0), pos.var * log_uniform(&mut rng, 2.0, 1e4));
        let back = extrinsic(pos, cav, 1e-11, 1e11).product(cav);
        out.var_rel_err = out.var_rel_err.max((back.var - pos.var).abs() / pos.var);
        out.mean_err = out.mean_err.max((back.mean - pos.mean).abs() / pos.mean.abs().max(1.0));
    }
    out
}

/// Gaussian-reproduction residuals over a set of runs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ReproductionSummary {
    pub runs: usize,
    /// Runs that reached the stopping rule; only these are checked.
    pub converged: usize,
    pub elements_checked: usize,
    pub max_mean_err: f64,
    pub max_var_rel_err: f64,
}

impl ReproductionSummary {
    pub fn absorb(&mut self, r: &Reproduction) {
        self.converged += 1;
        self.elements_checked += r.checked;
        self.max_mean_err = self.max_mean_err.max(r.max_mean_err);
        self.max_var_rel_err = self.max_var_rel_err.max(r.max_var_rel_err);
    }
}

/// Runs HyGEC with the true rate to a tight tolerance on every
/// `(spec, seed)` pair and checks the fixed-point identity on converged runs,
/// skipping variances within a factor `margin` of either clamp.
pub fn reproduction_check(specs: &[InstanceSpec], seeds: &[u64], cfg: &HygecConfig, margin: f64) -> Result<ReproductionSummary> {
    let mut out = ReproductionSummary::default();
    for spec in specs {
        for &seed in seeds {
            let inst = generate_instance(spec, seed)?;
            let run = hygec_run(&inst, spec.rho, cfg)?;
            out.runs += 1;
            if run.report.termination == Termination::Converged {
                out.absorb(&gaussian_reproduction(&run.state, cfg, margin));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use hygec::MatrixKind;

    #[test]
    fn denoisers_agree_with_quadrature_on_a_few_draws() {
        let p = denoiser_parity(25, 3).unwrap();
        assert!(p.awgn_mean_err < 1e-7 && p.awgn_var_rel_err < 1e-6, "{p:?}");
        assert!(p.quantized_mean_err < 1e-7 && p.quantized_var_rel_err < 1e-6, "{p:?}");
        assert!(p.spike_slab_err < 1e-10, "{p:?}");
    }

    #[test]
    fn round_trip_holds() {
        let r = extrinsic_round_trip(1000, 1);
        assert!(r.var_rel_err < 1e-10 && r.mean_err < 1e-10, "{r:?}");
    }

    #[test]
    fn overdetermined_instance_matches_enumeration() {
        let spec = InstanceSpec {
            m: 10,
            n: 4,
            k: 2,
            rho: 0.2,
            sigma_x_sq: 1.0,
            snr_db: 15.0,
            matrix: MatrixKind::IidGaussian { mean: 0.0 },
            bits: None,
            clip_range: None,
        };
        let p = posterior_parity(&spec, 0..5, &HygecConfig::default()).unwrap();
        assert_eq!(p.instances, 5);
        assert!(p.pooled_rms < 1e-2 && p.xi_mae < 5e-2, "{p:?}");
    }
}
