//! Central-difference verification of analytic gradients.

use super::denoiser::{DenoiserInputs, DenoiserParams};
use super::feature::FeatureMap;
use super::ParamSet;
use crate::diffusion::{add_noise, dual_loss, dual_loss_with_grad, NoiseSchedule};
use crate::error::Result;

/// Denominator floor so that near-zero gradients are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter tensor and element index with the largest error.
    pub worst: (String, usize),
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

/// `(f(x + h) - f(x - h)) / 2h` for every scalar of `params`, in
/// [`ParamSet::flatten`] order. Parameters are restored afterwards.
pub fn central_difference<P: ParamSet>(params: &mut P, step: f64, loss: impl Fn(&P) -> f64) -> Vec<f64> {
    let sizes: Vec<usize> = params.tensors().iter().map(|(_, t)| t.len()).collect();
    let mut out = Vec::with_capacity(sizes.iter().sum());
    for (ti, &n) in sizes.iter().enumerate() {
        for k in 0..n {
            let orig = params.tensors_mut()[ti].1[k];
            params.tensors_mut()[ti].1[k] = orig + step;
            let up = loss(params);
            params.tensors_mut()[ti].1[k] = orig - step;
            let down = loss(params);
            params.tensors_mut()[ti].1[k] = orig;
            out.push((up - down) / (2.0 * step));
        }
    }
    out
}

/// Compares a flattened analytic gradient against central differences.
pub fn check_gradients<P: ParamSet>(
    params: &mut P,
    analytic: &[f64],
    step: f64,
    tol: f64,
    loss: impl Fn(&P) -> f64,
) -> GradCheckReport {
    let numeric = central_difference(params, step, loss);
    assert_eq!(numeric.len(), analytic.len(), "gradient length mismatch");
    let mut worst = (String::new(), 0);
    let mut max_rel_error = 0.0f64;
    let mut flat = 0;
    for (name, t) in params.tensors() {
        for k in 0..t.len() {
            let e = relative_error(analytic[flat], numeric[flat]);
            if e > max_rel_error || worst.0.is_empty() {
                max_rel_error = max_rel_error.max(e);
                worst = (name.to_string(), k);
            }
            flat += 1;
        }
    }
    GradCheckReport {
        max_rel_error,
        worst,
        checked: flat,
        tol,
        passed: max_rel_error < tol,
    }
}

/// A single training example small enough for an exhaustive sweep.
#[derive(Debug, Clone)]
pub struct GradProbe {
    pub z0: FeatureMap,
    pub eps: FeatureMap,
    pub t: usize,
    pub cond_warp: FeatureMap,
    pub cond_embed: FeatureMap,
    pub ref_image: FeatureMap,
    pub ref_embed: FeatureMap,
    pub schedule: NoiseSchedule,
    pub alpha: f64,
}

impl GradProbe {
    fn z_t(&self) -> FeatureMap {
        add_noise(&self.z0, &self.eps, self.t, &self.schedule).expect("probe shapes are consistent")
    }

    fn inputs<'a>(&'a self, z_t: &'a FeatureMap) -> DenoiserInputs<'a> {
        DenoiserInputs {
            z_t,
            t: self.t,
            num_steps: self.schedule.steps(),
            cond_warp: &self.cond_warp,
            cond_embed: &self.cond_embed,
            ref_image: &self.ref_image,
            ref_embed: &self.ref_embed,
        }
    }

    pub fn loss(&self, theta: &DenoiserParams) -> Result<f64> {
        let z_t = self.z_t();
        let eps_hat = theta.predict(&self.inputs(&z_t))?;
        Ok(dual_loss(&self.eps, &eps_hat, &self.z0, &z_t, self.t, &self.schedule, self.alpha)?.total)
    }

    /// Flattened analytic gradient of the total loss.
    pub fn analytic_gradient(&self, theta: &DenoiserParams) -> Result<Vec<f64>> {
        let z_t = self.z_t();
        let (eps_hat, cache) = theta.forward(&self.inputs(&z_t))?;
        let (_, d_eps) =
            dual_loss_with_grad(&self.eps, &eps_hat, &self.z0, &z_t, self.t, &self.schedule, self.alpha)?;
        let mut grads = theta.zero_grads();
        theta.backward(&cache, &d_eps, &mut grads);
        Ok(grads.flatten())
    }
}

/// Analytic vs central-difference gradients of the total loss for every
/// denoiser parameter, with step `1e-3`.
pub fn grad_check(theta: &DenoiserParams, probe: &GradProbe, tol: f64) -> Result<GradCheckReport> {
    let analytic = probe.analytic_gradient(theta)?;
    let mut params = theta.clone();
    Ok(check_gradients(&mut params, &analytic, 1e-3, tol, |p| {
        probe.loss(p).expect("probe evaluated once already")
    }))
}
