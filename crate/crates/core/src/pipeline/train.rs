use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{add_noise, dual_loss_with_grad, initial_noise, predict_z0, Conditions, LossReport};
use crate::error::{Error, Result, StageExt};
use crate::fusion::{fusion_loss_with_grad, train_fusion, FusionParams, FusionSample};
use crate::grid::{DisparityMap, ImagePlane, ValidityMask};
use crate::nn::optim::{sgd_step, Adam};
use crate::nn::{DenoiserInputs, DenoiserParams, FeatureMap};
use crate::rng;
use crate::warp::{combine_masks, dropout_draw, warp_image};

use super::config::{GenConfig, PipelineConfig};
use super::dataset::Dataset;
use super::generate::{build_conditions, generate_with_disparity, mask_image};
use super::plan::SamplePlan;
use super::sample::{crop_and_resize, crop_and_resize_disparity, CropWindow};

/// Base samples used to fit the fusion weights after denoiser training.
pub const FUSION_FIT_SAMPLES: usize = 4;

/// Everything drawn for one optimizer step. Depends only on the data, the
/// config and the step index.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInputs {
    pub dataset: usize,
    pub sample: usize,
    pub left: ImagePlane,
    pub right: ImagePlane,
    pub disparity: DisparityMap,
    pub warped: ImagePlane,
    pub warp_mask: ValidityMask,
    /// Mask after optional dropout; the warped condition is zeroed outside it.
    pub mask: ValidityMask,
    pub dropout: bool,
    pub t: usize,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    pub losses: Vec<LossReport>,
    pub fusion_losses: Vec<f64>,
    pub dropout_steps: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub denoiser: DenoiserParams,
    pub fusion: FusionParams,
    pub log: TrainLog,
}

impl TrainOutcome {
    pub fn dropout_count(&self) -> usize {
        self.log.dropout_steps.len()
    }
}

/// Replicated `(dataset, sample)` index pool.
pub fn sample_pool(datasets: &[Dataset], plan: &SamplePlan) -> Result<Vec<(usize, usize)>> {
    if datasets.is_empty() || datasets.iter().all(Dataset::is_empty) {
        return Err(Error::invalid("training needs at least one sample"));
    }
    if plan.replication.len() != datasets.len() {
        return Err(Error::invalid(format!(
            "plan covers {} datasets, got {}",
            plan.replication.len(),
            datasets.len()
        )));
    }
    let mut pool = Vec::new();
    for (k, ds) in datasets.iter().enumerate() {
        for s in &ds.samples {
            if s.right.is_none() {
                return Err(Error::invalid(format!("{}/{} has no right view", ds.name, s.id)));
            }
        }
        for _ in 0..plan.replication[k] {
            pool.extend((0..ds.len()).map(|i| (k, i)));
        }
    }
    Ok(pool)
}

fn crop_window(cfg: &PipelineConfig, h: usize, w: usize, seed: u64) -> Result<CropWindow> {
    if cfg.random_crop {
        CropWindow::random(h, w, seed)
    } else {
        CropWindow::center(h, w)
    }
}

pub fn draw_step(
    datasets: &[Dataset],
    pool: &[(usize, usize)],
    cfg: &PipelineConfig,
    step: usize,
) -> Result<StepInputs> {
    let mut r = rng::seeded(rng::derive_seed(cfg.seed, step as u64));
    let pick = r.random_range(0..pool.len());
    let crop_seed: u64 = r.random();
    let dropout_u: f64 = r.random();
    let dropout_seed: u64 = r.random();
    let t = r.random_range(1..=cfg.schedule.steps);
    let noise_seed: u64 = r.random();

    let (k, i) = pool[pick];
    let s = &datasets[k].samples[i];
    let right = s.right.as_ref().expect("pool checks right views");
    let win = crop_window(cfg, s.left.height(), s.left.width(), crop_seed)?;
    let size = cfg.crop_size;
    let left = crop_and_resize(&s.left, win, size)?;
    let right = crop_and_resize(right, win, size)?;
    let disparity = crop_and_resize_disparity(&s.disparity, win, size)?;
    let (warped, warp_mask) = warp_image(&left, &disparity)?;
    let dropout = dropout_u < cfg.dropout.fraction;
    let mask = if dropout {
        let draw = dropout_draw(size, size, dropout_seed);
        combine_masks(&warp_mask, &draw.mask, cfg.dropout.mode)?
    } else {
        warp_mask.clone()
    };
    Ok(StepInputs {
        dataset: k,
        sample: i,
        left,
        right,
        disparity,
        warped,
        warp_mask,
        mask,
        dropout,
        t,
        noise_seed,
    })
}

fn step_conditions(x: &StepInputs, cfg: &PipelineConfig) -> Result<Conditions> {
    let cond_image = mask_image(&x.warped, &x.mask)?;
    build_conditions(&x.left, &cond_image, &x.disparity, cfg.codec()?, cfg.encoding(), cfg.conditions)
}

/// Trains the denoiser with Adam on the latent + pixel objective, then fits
/// the fusion weights on generated views (or alongside, in joint mode).
pub fn train_toy(datasets: &[Dataset], plan: &SamplePlan, cfg: &PipelineConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let pool = sample_pool(datasets, plan)?;
    let codec = cfg.codec()?;
    let schedule = cfg.schedule.build()?;
    let mut theta = DenoiserParams::init(cfg.denoiser_config(), rng::derive_seed(cfg.seed, u64::MAX - 1));
    let mut phi = FusionParams::init(cfg.fusion_training().seed);
    let mut adam = Adam::new(cfg.learning_rate);
    let mut log = TrainLog {
        losses: Vec::with_capacity(cfg.steps),
        fusion_losses: Vec::new(),
        dropout_steps: Vec::new(),
    };

    for step in 0..cfg.steps {
        let x = draw_step(datasets, &pool, cfg, step).stage("prepare")?;
        if x.dropout {
            log.dropout_steps.push(step);
        }
        let cond = step_conditions(&x, cfg).stage("conditions")?;
        let z0 = codec.encode(&x.right)?;
        let eps = initial_noise(z0.height, z0.width, z0.channels, x.noise_seed);
        let z_t = add_noise(&z0, &eps, x.t, &schedule)?;
        let inputs = DenoiserInputs {
            z_t: &z_t,
            t: x.t,
            num_steps: schedule.steps(),
            cond_warp: &cond.cond_warp,
            cond_embed: &cond.cond_embed,
            ref_image: &cond.ref_image,
            ref_embed: &cond.ref_embed,
        };
        let (eps_hat, cache) = theta.forward(&inputs).stage("denoiser")?;
        let (report, d_eps) = dual_loss_with_grad(&eps, &eps_hat, &z0, &z_t, x.t, &schedule, cfg.alpha)?;
        if !report.total.is_finite() {
            return Err(Error::Degenerate(format!("loss diverged at step {step}")));
        }
        let mut grads = theta.zero_grads();
        theta.backward(&cache, &d_eps, &mut grads);
        adam.lr = cfg.lr_schedule.rate(cfg.learning_rate, step, cfg.steps);
        adam.step(&mut theta, &grads);
        log.losses.push(report);

        if cfg.fusion.enabled && cfg.fusion.joint {
            let z0_hat = predict_z0(&z_t, &eps_hat, x.t, &schedule)?.map(|v| v.clamp(-1.0, 1.0));
            let sample = FusionSample::new(codec.decode(&z0_hat)?, x.warped.clone(), x.mask.clone(), x.right.clone())?;
            let (loss, g) = fusion_loss_with_grad(std::slice::from_ref(&sample), &phi)?;
            sgd_step(&mut phi, &g, cfg.fusion.lr);
            log.fusion_losses.push(loss);
        }
    }

    if cfg.fusion.enabled && !cfg.fusion.joint {
        let samples = fusion_fit_samples(datasets, cfg, &theta)?;
        let (p, curve) = train_fusion(&samples, cfg.fusion_training()).stage("fusion")?;
        phi = p;
        log.fusion_losses = curve;
    }

    Ok(TrainOutcome {
        denoiser: theta,
        fusion: phi,
        log,
    })
}

/// Generated views of the first few samples paired with their warps and
/// ground truth, at the center crop.
fn fusion_fit_samples(datasets: &[Dataset], cfg: &PipelineConfig, theta: &DenoiserParams) -> Result<Vec<FusionSample>> {
    let gen = GenConfig {
        fusion: false,
        ..cfg.gen_config()?
    };
    datasets
        .iter()
        .flat_map(|ds| ds.samples.iter())
        .take(FUSION_FIT_SAMPLES)
        .enumerate()
        .map(|(i, s)| {
            let win = CropWindow::center(s.left.height(), s.left.width())?;
            let left = crop_and_resize(&s.left, win, cfg.crop_size)?;
            let right = crop_and_resize(s.right.as_ref().expect("pool checks right views"), win, cfg.crop_size)?;
            let d = crop_and_resize_disparity(&s.disparity, win, cfg.crop_size)?;
            let g = GenConfig {
                seed: rng::derive_seed(cfg.seed, (u64::MAX - 2).wrapping_sub(i as u64)),
                ..gen
            };
            let out = generate_with_disparity(&left, &d, &g, theta, &FusionParams::zeros())?;
            FusionSample::new(out.generated, out.warped, out.mask, right)
        })
        .collect()
}

/// Decoded-pixel MSE of the clean-latent estimate on a fixed set of draws.
pub fn pixel_mse_probe(
    theta: &DenoiserParams,
    datasets: &[Dataset],
    plan: &SamplePlan,
    cfg: &PipelineConfig,
    draws: usize,
) -> Result<f64> {
    let pool = sample_pool(datasets, plan)?;
    let codec = cfg.codec()?;
    let schedule = cfg.schedule.build()?;
    let probe_cfg = PipelineConfig {
        seed: rng::derive_seed(cfg.seed, 0xE7A1),
        dropout: super::config::DropoutConfig {
            fraction: 0.0,
            ..cfg.dropout
        },
        ..cfg.clone()
    };
    let mut total = 0.0;
    for k in 0..draws {
        let x = draw_step(datasets, &pool, &probe_cfg, k)?;
        let cond = step_conditions(&x, cfg)?;
        let z0 = codec.encode(&x.right)?;
        let eps = initial_noise(z0.height, z0.width, z0.channels, x.noise_seed);
        let z_t = add_noise(&z0, &eps, x.t, &schedule)?;
        let eps_hat = theta.predict(&DenoiserInputs {
            z_t: &z_t,
            t: x.t,
            num_steps: schedule.steps(),
            cond_warp: &cond.cond_warp,
            cond_embed: &cond.cond_embed,
            ref_image: &cond.ref_image,
            ref_embed: &cond.ref_embed,
        })?;
        let z0_hat: FeatureMap = predict_z0(&z_t, &eps_hat, x.t, &schedule)?;
        let decoded = codec.decode(&z0_hat)?;
        total += crate::metrics::mse(&decoded, &codec.decode(&z0)?)?;
    }
    Ok(total / draws.max(1) as f64)
}
