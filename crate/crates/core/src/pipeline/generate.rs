use std::path::Path;

use crate::diffusion::{ddim_sample, Codec, Conditions};
use crate::embed::{canonical_embedding, EncodingConfig, FourierEmbedding};
use crate::error::{Result, StageExt};
use crate::fusion::{fuse_with, FusionParams};
use crate::grid::{disparity_rescale, normalize_and_scale, DisparityMap, ImagePlane, ValidityMask};
use crate::nn::{DenoiserParams, FeatureMap};
use crate::warp::{warp_embedding, warp_image};

use super::config::{ConditionSwitches, GenConfig, PipelineConfig};

pub const DENOISER_DIR: &str = "denoiser";
pub const FUSION_DIR: &str = "fusion";
pub const CONFIG_FILE: &str = "config.json";

fn embedding_map(e: &FourierEmbedding) -> Result<FeatureMap> {
    FeatureMap::from_f32(e.height(), e.width(), e.channels(), e.data())
}

/// Zeroes pixels outside `mask`.
pub fn mask_image(img: &ImagePlane, mask: &ValidityMask) -> Result<ImagePlane> {
    let c = img.channels();
    let data = img
        .data()
        .iter()
        .enumerate()
        .map(|(k, &v)| if mask.data()[k / c] == 1 { v } else { 0.0 })
        .collect();
    ImagePlane::new(img.height(), img.width(), c, data)
}

/// Latent-resolution conditioning: the encoded warped image, the coordinate
/// embedding warped by the latent-scale disparity, and the reference stream
/// inputs for the left view.
pub fn build_conditions(
    left: &ImagePlane,
    warped: &ImagePlane,
    d: &DisparityMap,
    codec: Codec,
    encoding: EncodingConfig,
    switches: ConditionSwitches,
) -> Result<Conditions> {
    let (lh, lw) = codec.latent_dims(left.height(), left.width())?;
    let c_l = canonical_embedding(lh, lw, encoding)?;
    let d_latent = disparity_rescale(d, lh, lw)?;
    let (c_r, _) = warp_embedding(&c_l, &d_latent)?;
    let mut cond_warp = codec.encode(warped)?;
    let mut cond_embed = embedding_map(&c_r)?;
    if !switches.warp {
        cond_warp.data.fill(0.0);
    }
    if !switches.embed {
        cond_embed.data.fill(0.0);
    }
    Ok(Conditions {
        cond_warp,
        cond_embed,
        ref_image: codec.encode(left)?,
        ref_embed: embedding_map(&c_l)?,
    })
}

/// Normalized and gamma-scaled disparity. An all-zero map stays zero.
pub fn scale_disparity(d: &DisparityMap, gamma: f32) -> Result<DisparityMap> {
    if d.max_valid() == Some(0.0) {
        return Ok(d.clone());
    }
    normalize_and_scale(d, gamma, d.width())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub right: ImagePlane,
    pub mask: ValidityMask,
    pub warped: ImagePlane,
    pub generated: ImagePlane,
}

/// Generation from an already scaled pixel disparity.
pub fn generate_with_disparity(
    left: &ImagePlane,
    d: &DisparityMap,
    cfg: &GenConfig,
    theta: &DenoiserParams,
    phi: &FusionParams,
) -> Result<Generated> {
    let left = left.to_rgb();
    cfg.codec.latent_dims(left.height(), left.width()).stage("codec")?;
    let (warped, mask) = warp_image(&left, d).stage("warp")?;
    let cond = build_conditions(&left, &warped, d, cfg.codec, cfg.encoding, cfg.conditions).stage("conditions")?;
    let schedule = cfg.schedule.build().stage("schedule")?;
    let z = ddim_sample(theta, &cond, cfg.sampler, &schedule, cfg.seed).stage("sample")?;
    let generated = cfg.codec.decode(&z).stage("decode")?;
    let right = if cfg.fusion {
        fuse_with(&generated, &warped, &mask, phi).stage("fuse")?
    } else {
        generated.clone()
    };
    Ok(Generated {
        right,
        mask,
        warped,
        generated,
    })
}

pub fn generate_right_view(
    left: &ImagePlane,
    d: &DisparityMap,
    cfg: &GenConfig,
    theta: &DenoiserParams,
    phi: &FusionParams,
) -> Result<Generated> {
    let scaled = scale_disparity(d, cfg.gamma).stage("normalize")?;
    generate_with_disparity(left, &scaled, cfg, theta, phi)
}

/// Trained weights plus the configuration they were trained with.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: PipelineConfig,
    pub denoiser: DenoiserParams,
    pub fusion: FusionParams,
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.denoiser.save(&dir.join(DENOISER_DIR)).stage("save denoiser")?;
        self.fusion.save(&dir.join(FUSION_DIR)).stage("save fusion")?;
        self.config.save(&dir.join(CONFIG_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config_path = dir.join(CONFIG_FILE);
        let config = if config_path.exists() {
            PipelineConfig::load(&config_path)?
        } else {
            PipelineConfig::default()
        };
        Ok(Self {
            config,
            denoiser: DenoiserParams::load(&dir.join(DENOISER_DIR)).stage("load denoiser")?,
            fusion: FusionParams::load(&dir.join(FUSION_DIR)).stage("load fusion")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::metrics::psnr;
    use crate::pipeline::scene::Scene;

    fn small_config() -> PipelineConfig {
        PipelineConfig {
            gamma: Some(0.1),
            sampler_steps: 3,
            schedule: crate::diffusion::ScheduleConfig {
                steps: 12,
                ..Default::default()
            },
            model: super::super::config::ModelConfig {
                hidden: 4,
                ..Default::default()
            },
            frequencies: 2,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn zero_disparity_with_saturated_fusion_returns_left() {
        let cfg = small_config();
        let pair = Scene::two_rectangles(32).unwrap().render().unwrap();
        let theta = DenoiserParams::init(cfg.denoiser_config(), 1);
        let zero = DisparityMap::constant(32, 32, 0.0).unwrap();
        let out = generate_right_view(
            &pair.left,
            &zero,
            &cfg.gen_config().unwrap(),
            &theta,
            &FusionParams::constant(40.0),
        )
        .unwrap();
        assert_eq!(out.mask, ValidityMask::ones(32, 32));
        assert_eq!(out.warped, pair.left);
        assert!(out.right.data().iter().zip(pair.left.data()).all(|(a, b)| (a - b).abs() < 1e-6));
        assert!(psnr(&out.right, &pair.left, 1.0).unwrap() > 40.0);
    }

    #[test]
    fn mask_and_determinism() {
        let cfg = small_config();
        let pair = Scene::two_rectangles(32).unwrap().render().unwrap();
        let theta = DenoiserParams::init(cfg.denoiser_config(), 2);
        let phi = FusionParams::init(3);
        let gen = cfg.gen_config().unwrap();
        let a = generate_right_view(&pair.left, &pair.disparity, &gen, &theta, &phi).unwrap();
        let b = generate_right_view(&pair.left, &pair.disparity, &gen, &theta, &phi).unwrap();
        assert_eq!(a, b);
        let scaled = scale_disparity(&pair.disparity, gen.gamma).unwrap();
        let (warped, mask) = warp_image(&pair.left, &scaled).unwrap();
        assert_eq!(a.mask, mask);
        assert_eq!(a.warped, warped);
        let other = GenConfig { seed: 99, ..gen };
        let c = generate_right_view(&pair.left, &pair.disparity, &other, &theta, &phi).unwrap();
        assert_ne!(a.generated, c.generated);
    }

    #[test]
    fn stage_errors() {
        let cfg = small_config();
        let theta = DenoiserParams::init(cfg.denoiser_config(), 2);
        let odd = ImagePlane::filled(33, 32, 3, 0.5).unwrap();
        let d = DisparityMap::constant(33, 32, 1.0).unwrap();
        let err = generate_right_view(&odd, &d, &cfg.gen_config().unwrap(), &theta, &FusionParams::zeros()).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "codec", .. }));
        let invalid = DisparityMap::sparse(32, 32, vec![0.0; 1024], ValidityMask::zeros(32, 32)).unwrap();
        let img = ImagePlane::filled(32, 32, 3, 0.5).unwrap();
        let err = generate_right_view(&img, &invalid, &cfg.gen_config().unwrap(), &theta, &FusionParams::zeros())
            .unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "normalize", .. }));
    }

    #[test]
    fn condition_switches_zero_inputs() {
        let pair = Scene::two_rectangles(32).unwrap().render().unwrap();
        let (warped, _) = warp_image(&pair.left, &pair.disparity).unwrap();
        let enc = EncodingConfig { frequencies: 2, include_raw: false };
        let codec = Codec::new(2).unwrap();
        let on = build_conditions(&pair.left, &warped, &pair.disparity, codec, enc, ConditionSwitches::default()).unwrap();
        assert_eq!((on.cond_embed.height, on.cond_embed.channels), (16, 8));
        assert!(on.cond_warp.data.iter().any(|&v| v != 0.0));
        let off = build_conditions(
            &pair.left,
            &warped,
            &pair.disparity,
            codec,
            enc,
            ConditionSwitches { warp: false, embed: false },
        )
        .unwrap();
        assert!(off.cond_warp.data.iter().all(|&v| v == 0.0));
        assert!(off.cond_embed.data.iter().all(|&v| v == 0.0));
        assert_eq!(off.ref_image, on.ref_image);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        let ck = Checkpoint {
            denoiser: DenoiserParams::init(cfg.denoiser_config(), 5),
            fusion: FusionParams::init(6),
            config: cfg,
        };
        ck.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back.config, ck.config);
        assert_eq!(back.denoiser.config, ck.denoiser.config);
    }
}
