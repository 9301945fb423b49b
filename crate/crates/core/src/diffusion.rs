//! Fixed toy latent codec, linear DDPM schedule, the latent + pixel
//! training objective and a deterministic DDIM sampler.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ImagePlane;
use crate::nn::{DenoiserInputs, DenoiserParams, FeatureMap};
use crate::rng;

/// Latent array `h/f x w/f x c`.
pub type LatentTensor = FeatureMap;

/// Average-pool encoder with affine `2x - 1`; decoder inverts the affine,
/// upsamples by nearest neighbour and clamps to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codec {
    pub factor: usize,
}

impl Default for Codec {
    fn default() -> Self {
        Self { factor: 2 }
    }
}

#[inline]
pub fn latent_to_pixel(z: f64) -> f64 {
    ((z + 1.0) * 0.5).clamp(0.0, 1.0)
}

impl Codec {
    pub fn new(factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::invalid("codec factor must be positive"));
        }
        Ok(Self { factor })
    }

    pub fn latent_dims(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let f = self.factor;
        if f == 0 || !height.is_multiple_of(f) || !width.is_multiple_of(f) {
            return Err(Error::shape(format!(
                "{height}x{width} not divisible by codec factor {f}"
            )));
        }
        Ok((height / f, width / f))
    }

    pub fn encode(&self, img: &ImagePlane) -> Result<LatentTensor> {
        let (lh, lw) = self.latent_dims(img.height(), img.width())?;
        let (f, c) = (self.factor, img.channels());
        let norm = 1.0 / (f * f) as f64;
        let mut data = Vec::with_capacity(lh * lw * c);
        for by in 0..lh {
            for bx in 0..lw {
                for ch in 0..c {
                    let mut sum = 0.0;
                    for y in by * f..(by + 1) * f {
                        for x in bx * f..(bx + 1) * f {
                            sum += img.get(y, x, ch) as f64;
                        }
                    }
                    data.push(2.0 * sum * norm - 1.0);
                }
            }
        }
        FeatureMap::new(lh, lw, c, data)
    }

    pub fn decode(&self, z: &LatentTensor) -> Result<ImagePlane> {
        let f = self.factor;
        let (h, w, c) = (z.height * f, z.width * f, z.channels);
        let mut data = Vec::with_capacity(h * w * c);
        for y in 0..h {
            for x in 0..w {
                let at = ((y / f) * z.width + x / f) * c;
                data.extend(z.data[at..at + c].iter().map(|&v| latent_to_pixel(v) as f32));
            }
        }
        ImagePlane::new(h, w, c, data)
    }
}

/// Linear-beta DDPM schedule over steps `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::invalid("schedule needs at least one step"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::invalid(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|s| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * s as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for b in &betas {
        acc *= 1.0 - b;
        alpha_bar.push(acc);
    }
    Ok(NoiseSchedule { betas, alpha_bar })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// `alpha_bar_t` for `t` in `1..=T`; `t = 0` is the clean endpoint with value 1.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        match t {
            0 => Ok(1.0),
            t if t <= self.steps() => Ok(self.alpha_bar[t - 1]),
            t => Err(Error::invalid(format!("timestep {t} outside 1..={}", self.steps()))),
        }
    }

    fn step_alpha(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Err(Error::invalid(format!("timestep 0 outside 1..={}", self.steps())));
        }
        self.alpha_bar(t)
    }
}

fn check_same(a: &FeatureMap, b: &FeatureMap, what: &str) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::shape(format!(
            "{what}: {}x{}x{} vs {}x{}x{}",
            a.height, a.width, a.channels, b.height, b.width, b.channels
        )))
    }
}

/// `z_t = sqrt(ab) z0 + sqrt(1 - ab) eps`.
pub fn add_noise(z0: &LatentTensor, eps: &LatentTensor, t: usize, s: &NoiseSchedule) -> Result<LatentTensor> {
    check_same(z0, eps, "add_noise")?;
    let ab = s.step_alpha(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = z0.data.iter().zip(&eps.data).map(|(z, e)| a * z + b * e).collect();
    FeatureMap::new(z0.height, z0.width, z0.channels, data)
}

/// Clean-latent estimate `(z_t - sqrt(1 - ab) eps_hat) / sqrt(ab)`.
pub fn predict_z0(z_t: &LatentTensor, eps_hat: &LatentTensor, t: usize, s: &NoiseSchedule) -> Result<LatentTensor> {
    check_same(z_t, eps_hat, "predict_z0")?;
    let ab = s.step_alpha(t)?;
    if ab <= 0.0 {
        return Err(Error::Degenerate(format!("alpha_bar at step {t} is zero")));
    }
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = z_t.data.iter().zip(&eps_hat.data).map(|(z, e)| (z - b * e) / a).collect();
    FeatureMap::new(z_t.height, z_t.width, z_t.channels, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub latent: f64,
    pub pixel: f64,
    pub total: f64,
    pub alpha: f64,
}

impl LossReport {
    fn new(latent: f64, pixel: f64, alpha: f64) -> Self {
        Self {
            latent,
            pixel,
            total: latent + alpha * pixel,
            alpha,
        }
    }
}

/// Noise-prediction MSE plus `alpha` times the MSE between the decoded
/// clean-latent estimate and the decoded target.
///
/// The pixel term is evaluated per latent element: nearest-neighbour
/// decoding replicates each latent value over an `f x f` block, so the mean
/// over decoded pixels equals the mean over latent elements.
pub fn dual_loss(
    eps: &LatentTensor,
    eps_hat: &LatentTensor,
    z_target: &LatentTensor,
    z_t: &LatentTensor,
    t: usize,
    s: &NoiseSchedule,
    alpha: f64,
) -> Result<LossReport> {
    dual_loss_with_grad(eps, eps_hat, z_target, z_t, t, s, alpha).map(|(r, _)| r)
}

/// [`dual_loss`] and its gradient with respect to `eps_hat`.
pub fn dual_loss_with_grad(
    eps: &LatentTensor,
    eps_hat: &LatentTensor,
    z_target: &LatentTensor,
    z_t: &LatentTensor,
    t: usize,
    s: &NoiseSchedule,
    alpha: f64,
) -> Result<(LossReport, LatentTensor)> {
    check_same(eps, eps_hat, "dual_loss eps")?;
    check_same(eps, z_target, "dual_loss target")?;
    check_same(eps, z_t, "dual_loss z_t")?;
    let ab = s.step_alpha(t)?;
    let z0_hat = predict_z0(z_t, eps_hat, t, s)?;
    let dz0_deps = -(1.0 - ab).sqrt() / ab.sqrt();
    let n = eps.len() as f64;

    let mut latent = 0.0;
    let mut pixel = 0.0;
    let mut grad = FeatureMap::zeros(eps.height, eps.width, eps.channels);
    for k in 0..eps.len() {
        let diff = eps_hat.data[k] - eps.data[k];
        latent += diff * diff;
        let u = (z0_hat.data[k] + 1.0) * 0.5;
        let p = u.clamp(0.0, 1.0);
        let q = latent_to_pixel(z_target.data[k]);
        pixel += (p - q) * (p - q);
        let dp_dz = if u > 0.0 && u < 1.0 { 0.5 } else { 0.0 };
        grad.data[k] = 2.0 * diff / n + alpha * 2.0 * (p - q) / n * dp_dz * dz0_deps;
    }
    Ok((LossReport::new(latent / n, pixel / n, alpha), grad))
}

/// Conditioning maps at latent resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditions {
    pub cond_warp: FeatureMap,
    pub cond_embed: FeatureMap,
    pub ref_image: FeatureMap,
    pub ref_embed: FeatureMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub steps: usize,
    /// Clip each clean-latent estimate to the codec range `[-1, 1]`.
    pub clip_latent: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 20,
            clip_latent: true,
        }
    }
}

/// `K` evenly spaced timesteps in descending order: `i * T / K` for `i = K..1`.
pub fn sampling_timesteps(total: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > total {
        return Err(Error::invalid(format!("sampler steps {k} must be in 1..={total}")));
    }
    Ok((1..=k).rev().map(|i| i * total / k).collect())
}

pub fn initial_noise(height: usize, width: usize, channels: usize, seed: u64) -> LatentTensor {
    let mut r = rng::seeded(seed);
    let data = (0..height * width * channels)
        .map(|_| StandardNormal.sample(&mut r))
        .collect();
    FeatureMap {
        height,
        width,
        channels,
        data,
    }
}

/// Deterministic DDIM (eta = 0) from seeded Gaussian noise.
/// One deterministic DDIM update from `t` to `t_prev` (0 means the clean
/// latent). With `clip` the clean-latent estimate is clamped to `[-1, 1]`
/// and the noise estimate re-derived from it.
pub fn ddim_step(
    z_t: &LatentTensor,
    eps_hat: &LatentTensor,
    t: usize,
    t_prev: usize,
    s: &NoiseSchedule,
    clip: bool,
) -> Result<LatentTensor> {
    let mut z0 = predict_z0(z_t, eps_hat, t, s)?;
    let mut eps = eps_hat.clone();
    if clip {
        z0 = z0.map(|v| v.clamp(-1.0, 1.0));
        let ab = s.alpha_bar(t)?;
        let (a_t, b_t) = (ab.sqrt(), (1.0 - ab).sqrt());
        for ((e, &zt), &x0) in eps.data.iter_mut().zip(&z_t.data).zip(&z0.data) {
            *e = (zt - a_t * x0) / b_t;
        }
    }
    let ab_prev = s.alpha_bar(t_prev)?;
    let (a, b) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    let data = z0.data.iter().zip(&eps.data).map(|(x0, e)| a * x0 + b * e).collect();
    FeatureMap::new(z_t.height, z_t.width, z_t.channels, data)
}

pub fn ddim_sample(
    theta: &DenoiserParams,
    cond: &Conditions,
    sampler: SamplerConfig,
    s: &NoiseSchedule,
    seed: u64,
) -> Result<LatentTensor> {
    let timesteps = sampling_timesteps(s.steps(), sampler.steps)?;
    let (h, w) = (cond.cond_warp.height, cond.cond_warp.width);
    let mut z = initial_noise(h, w, theta.config.latent_channels, seed);
    let reference = theta.reference_features(&cond.ref_image, &cond.ref_embed)?;
    for (i, &t) in timesteps.iter().enumerate() {
        let inputs = DenoiserInputs {
            z_t: &z,
            t,
            num_steps: s.steps(),
            cond_warp: &cond.cond_warp,
            cond_embed: &cond.cond_embed,
            ref_image: &cond.ref_image,
            ref_embed: &cond.ref_embed,
        };
        let (eps_hat, _) = theta.forward_with_reference(&inputs, reference.clone())?;
        let t_prev = timesteps.get(i + 1).copied().unwrap_or(0);
        z = ddim_step(&z, &eps_hat, t, t_prev, s, sampler.clip_latent)?;
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_latent(h: usize, w: usize, c: usize, seed: u64) -> LatentTensor {
        initial_noise(h, w, c, seed)
    }

    #[test]
    fn codec_fixed_points() {
        let codec = Codec::new(2).unwrap();
        let gray = ImagePlane::filled(4, 4, 3, 0.5).unwrap();
        let z = codec.encode(&gray).unwrap();
        assert_eq!((z.height, z.width, z.channels), (2, 2, 3));
        assert!(z.data.iter().all(|&v| v == 0.0));
        assert_eq!(codec.decode(&z).unwrap(), gray);

        let checker = ImagePlane::new(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(codec.encode(&checker).unwrap().data, vec![0.0]);

        let blocks = ImagePlane::from_fn(4, 6, 3, |y, x, c| ((y / 2 * 3 + x / 2) * 3 + c) as f32 / 32.0).unwrap();
        assert_eq!(codec.decode(&codec.encode(&blocks).unwrap()).unwrap(), blocks);
        assert!(codec.encode(&ImagePlane::filled(3, 4, 1, 0.0).unwrap()).is_err());
        assert!(Codec::new(0).is_err());
    }

    #[test]
    fn schedule_properties() {
        let one = make_schedule(1, 0.01, 0.02).unwrap();
        assert_eq!(one.alpha_bar(1).unwrap(), 1.0 - 0.01);
        let s = make_schedule(100, 1e-4, 0.02).unwrap();
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bars().iter().all(|&a| a > 0.0 && a < 1.0));
        assert!(s.betas().windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(s.betas()[0], 1e-4);
        assert!((s.betas()[99] - 0.02).abs() < 1e-15);
        assert!(make_schedule(0, 0.1, 0.2).is_err());
        assert!(make_schedule(10, 0.2, 0.1).is_err());
        assert!(make_schedule(10, 0.0, 0.1).is_err());
        assert!(make_schedule(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn noise_roundtrip_and_limits() {
        let s = make_schedule(50, 1e-4, 0.02).unwrap();
        let z0 = random_latent(3, 3, 3, 1);
        let eps = random_latent(3, 3, 3, 2);
        for t in [1, 17, 50] {
            let zt = add_noise(&z0, &eps, t, &s).unwrap();
            let back = predict_z0(&zt, &eps, t, &s).unwrap();
            assert!(back.data.iter().zip(&z0.data).all(|(a, b)| (a - b).abs() < 1e-12));
        }
        let zero = FeatureMap::zeros(3, 3, 3);
        let zt = add_noise(&z0, &zero, 10, &s).unwrap();
        let a = s.alpha_bar(10).unwrap().sqrt();
        assert!(zt.data.iter().zip(&z0.data).all(|(x, y)| (x - a * y).abs() < 1e-15));
        let z1 = add_noise(&z0, &eps, 1, &s).unwrap();
        let bound = 1e-4f64.sqrt();
        for ((x, y), e) in z1.data.iter().zip(&z0.data).zip(&eps.data) {
            assert!((x - y).abs() <= bound * (y.abs() + e.abs()) + 1e-12);
        }
        let from_zero = predict_z0(&zt, &zero, 10, &s).unwrap();
        assert!(from_zero.data.iter().zip(&zt.data).all(|(x, y)| (x - y / a).abs() < 1e-12));
        assert!(add_noise(&z0, &eps, 0, &s).is_err());
        assert!(add_noise(&z0, &eps, 51, &s).is_err());
        assert!(add_noise(&z0, &FeatureMap::zeros(3, 3, 2), 1, &s).is_err());
    }

    #[test]
    fn loss_cases() {
        let s = make_schedule(20, 1e-4, 0.02).unwrap();
        let z0 = random_latent(2, 2, 3, 3).map(|v| (v * 0.3).clamp(-0.9, 0.9));
        let eps = random_latent(2, 2, 3, 4);
        let zt = add_noise(&z0, &eps, 12, &s).unwrap();
        let perfect = dual_loss(&eps, &eps, &z0, &zt, 12, &s, 1.0).unwrap();
        assert!(perfect.latent == 0.0 && perfect.pixel < 1e-24);

        let eps_hat = random_latent(2, 2, 3, 5);
        let off = dual_loss(&eps, &eps_hat, &z0, &zt, 12, &s, 0.0).unwrap();
        assert_eq!(off.total, off.latent);
        let on = dual_loss(&eps, &eps_hat, &z0, &zt, 12, &s, 1.0).unwrap();
        assert_eq!(on.total, on.latent + on.alpha * on.pixel);
        assert!(dual_loss(&eps, &FeatureMap::zeros(1, 1, 3), &z0, &zt, 12, &s, 1.0).is_err());
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let s = make_schedule(20, 1e-4, 0.02).unwrap();
        let z0 = random_latent(2, 3, 2, 6).map(|v| (v * 0.2).clamp(-0.5, 0.5));
        let eps = random_latent(2, 3, 2, 7);
        let zt = add_noise(&z0, &eps, 6, &s).unwrap();
        let eps_hat = eps.map(|v| v * 0.8 + 0.05);
        let (_, grad) = dual_loss_with_grad(&eps, &eps_hat, &z0, &zt, 6, &s, 1.0).unwrap();
        let h = 1e-6;
        for k in 0..eps_hat.len() {
            let mut up = eps_hat.clone();
            up.data[k] += h;
            let mut dn = eps_hat.clone();
            dn.data[k] -= h;
            let fd = (dual_loss(&eps, &up, &z0, &zt, 6, &s, 1.0).unwrap().total
                - dual_loss(&eps, &dn, &z0, &zt, 6, &s, 1.0).unwrap().total)
                / (2.0 * h);
            assert!((fd - grad.data[k]).abs() < 1e-8, "{k}: {fd} vs {}", grad.data[k]);
        }
    }

    #[test]
    fn timesteps_are_even_and_descending() {
        assert_eq!(sampling_timesteps(100, 1).unwrap(), vec![100]);
        let ts = sampling_timesteps(100, 20).unwrap();
        assert_eq!(ts.len(), 20);
        assert_eq!((ts[0], ts[19]), (100, 5));
        assert!(ts.windows(2).all(|w| w[0] - w[1] == 5));
        assert_eq!(sampling_timesteps(7, 7).unwrap(), vec![7, 6, 5, 4, 3, 2, 1]);
        assert!(sampling_timesteps(10, 11).is_err());
        assert!(sampling_timesteps(10, 0).is_err());
    }

    #[test]
    fn ddim_step_with_true_noise_lands_on_forward_process() {
        let s = make_schedule(50, 1e-4, 0.02).unwrap();
        let z0 = random_latent(3, 4, 3, 1).map(|v| (v * 0.3).clamp(-1.0, 1.0));
        let eps = random_latent(3, 4, 3, 2);
        for (t, t_prev) in [(50, 30), (30, 1), (7, 0)] {
            let z_t = add_noise(&z0, &eps, t, &s).unwrap();
            let want = if t_prev == 0 { z0.clone() } else { add_noise(&z0, &eps, t_prev, &s).unwrap() };
            for clip in [false, true] {
                let got = ddim_step(&z_t, &eps, t, t_prev, &s, clip).unwrap();
                for (a, b) in got.data.iter().zip(&want.data) {
                    assert!((a - b).abs() < 1e-12, "t={t} t_prev={t_prev} clip={clip}");
                }
            }
        }
    }

    #[test]
    fn clipped_step_rederives_noise() {
        let s = make_schedule(20, 1e-4, 0.05).unwrap();
        let z0 = FeatureMap::new(1, 2, 1, vec![2.5, -0.5]).unwrap();
        let eps = FeatureMap::new(1, 2, 1, vec![0.3, -1.2]).unwrap();
        let z_t = add_noise(&z0, &eps, 12, &s).unwrap();
        let (a, b) = (s.alpha_bar(12).unwrap().sqrt(), (1.0 - s.alpha_bar(12).unwrap()).sqrt());
        let (ap, bp) = (s.alpha_bar(4).unwrap().sqrt(), (1.0 - s.alpha_bar(4).unwrap()).sqrt());
        let got = ddim_step(&z_t, &eps, 12, 4, &s, true).unwrap();
        let want0 = ap * 1.0 + bp * (z_t.data[0] - a * 1.0) / b;
        assert!((got.data[0] - want0).abs() < 1e-12);
        let want1 = ap * -0.5 + bp * -1.2;
        assert!((got.data[1] - want1).abs() < 1e-12);
        let end = ddim_step(&z_t, &eps, 12, 0, &s, true).unwrap();
        assert_eq!(end.data[0], 1.0);
        assert!((end.data[1] + 0.5).abs() < 1e-12);
    }
}
