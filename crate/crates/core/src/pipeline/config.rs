use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{Codec, SamplerConfig, ScheduleConfig};
use crate::embed::{EncodingConfig, DEFAULT_FREQUENCIES};
use crate::error::{Error, Result};
use crate::fusion::FusionTrainConfig;
use crate::nn::{Activation, DenoiserConfig};
use crate::warp::CombineMode;

use super::dataset::DatasetSpec;

pub const DEFAULT_GAMMA: f32 = 0.15;
pub const FINETUNE_GAMMAS: [f32; 5] = [0.05, 0.1, 0.15, 0.2, 0.25];
pub const GENERALIZATION_GAMMA_RANGE: [f32; 2] = [0.0, 0.35];
pub const MAX_DISPARITY: f32 = 256.0;

#[derive(Debug, Clone, PartialEq)]
pub enum GammaSpec {
    Fixed(f32),
    Set(Vec<f32>),
    Range(f32, f32),
}

impl GammaSpec {
    pub fn sample(&self, rng: &mut crate::rng::Rng) -> f32 {
        match self {
            GammaSpec::Fixed(g) => *g,
            GammaSpec::Set(v) => v[rng.random_range(0..v.len())],
            GammaSpec::Range(lo, hi) => {
                if lo == hi {
                    *lo
                } else {
                    rng.random_range(*lo..=*hi)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DropoutConfig {
    /// Probability that a training sample gets a random dropout mask.
    pub fraction: f64,
    pub mode: CombineMode,
}

impl Default for DropoutConfig {
    fn default() -> Self {
        Self {
            fraction: 0.1,
            mode: CombineMode::And,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub enabled: bool,
    /// Update the fusion weights alongside the denoiser at every step.
    pub joint: bool,
    pub steps: usize,
    pub lr: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            joint: false,
            steps: 200,
            lr: 0.05,
        }
    }
}

/// Conditioning inputs of the denoising stream; disabled ones are zeroed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConditionSwitches {
    pub warp: bool,
    pub embed: bool,
}

impl Default for ConditionSwitches {
    fn default() -> Self {
        Self { warp: true, embed: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub activation: Activation,
    pub attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = DenoiserConfig::default();
        Self {
            hidden: d.hidden,
            activation: d.activation,
            attention: d.attention,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from the base rate to zero over the run.
    Cosine,
}

impl LrSchedule {
    pub fn rate(self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let frac = step as f64 / total.max(1) as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

/// JSON configuration shared by training, generation and dataset building.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_set: Option<Vec<f32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_range: Option<[f32; 2]>,
    pub crop_size: usize,
    pub random_crop: bool,
    pub codec_factor: usize,
    pub schedule: ScheduleConfig,
    pub sampler_steps: usize,
    pub clip_latent: bool,
    pub alpha: f64,
    pub dropout: DropoutConfig,
    pub fusion: FusionConfig,
    pub seed: u64,
    pub steps: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub conditions: ConditionSwitches,
    pub frequencies: usize,
    pub model: ModelConfig,
    pub max_disparity: f32,
    pub fraction: f64,
    pub datasets: Vec<DatasetSpec>,
    pub synthetic_scenes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            gamma: None,
            gamma_set: None,
            gamma_range: None,
            crop_size: 64,
            random_crop: true,
            codec_factor: 2,
            schedule: ScheduleConfig::default(),
            sampler_steps: SamplerConfig::default().steps,
            clip_latent: true,
            alpha: 1.0,
            dropout: DropoutConfig::default(),
            fusion: FusionConfig::default(),
            seed: 0,
            steps: 500,
            learning_rate: 2e-3,
            lr_schedule: LrSchedule::Constant,
            conditions: ConditionSwitches::default(),
            frequencies: DEFAULT_FREQUENCIES,
            model: ModelConfig::default(),
            max_disparity: MAX_DISPARITY,
            fraction: 0.1,
            datasets: Vec::new(),
            synthetic_scenes: 0,
            checkpoint: None,
        }
    }
}

fn check_gamma(g: f32) -> Result<f32> {
    if (0.0..=1.0).contains(&g) {
        Ok(g)
    } else {
        Err(Error::invalid(format!("gamma {g} outside [0,1]")))
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.gamma_spec()?;
        self.codec()?;
        self.schedule.build()?;
        crate::diffusion::sampling_timesteps(self.schedule.steps, self.sampler_steps)?;
        if self.crop_size == 0 || !self.crop_size.is_multiple_of(self.codec_factor) {
            return Err(Error::invalid(format!(
                "crop size {} must be a positive multiple of the codec factor {}",
                self.crop_size, self.codec_factor
            )));
        }
        if self.crop_size / self.codec_factor < 2 {
            return Err(Error::invalid("latent side must be at least 2"));
        }
        if !(0.0..=1.0).contains(&self.dropout.fraction) {
            return Err(Error::invalid(format!(
                "dropout fraction {} outside [0,1]",
                self.dropout.fraction
            )));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::invalid(format!("resample fraction {} outside (0,1]", self.fraction)));
        }
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(Error::invalid("alpha must be finite and non-negative"));
        }
        if self.frequencies == 0 || self.model.hidden == 0 {
            return Err(Error::invalid("frequencies and hidden width must be positive"));
        }
        if self.max_disparity.is_nan() || self.max_disparity <= 0.0 {
            return Err(Error::invalid("max_disparity must be positive"));
        }
        Ok(())
    }

    pub fn gamma_spec(&self) -> Result<GammaSpec> {
        let given = [
            self.gamma.is_some(),
            self.gamma_set.is_some(),
            self.gamma_range.is_some(),
        ];
        if given.iter().filter(|&&g| g).count() > 1 {
            return Err(Error::invalid("give only one of gamma, gamma_set, gamma_range"));
        }
        if let Some(g) = self.gamma {
            return Ok(GammaSpec::Fixed(check_gamma(g)?));
        }
        if let Some(set) = &self.gamma_set {
            if set.is_empty() {
                return Err(Error::invalid("gamma_set is empty"));
            }
            for &g in set {
                check_gamma(g)?;
            }
            return Ok(GammaSpec::Set(set.clone()));
        }
        if let Some([lo, hi]) = self.gamma_range {
            check_gamma(lo)?;
            check_gamma(hi)?;
            if lo > hi {
                return Err(Error::invalid(format!("gamma_range [{lo}, {hi}] is reversed")));
            }
            return Ok(GammaSpec::Range(lo, hi));
        }
        Ok(GammaSpec::Fixed(DEFAULT_GAMMA))
    }

    pub fn codec(&self) -> Result<Codec> {
        Codec::new(self.codec_factor)
    }

    pub fn encoding(&self) -> EncodingConfig {
        EncodingConfig {
            frequencies: self.frequencies,
            include_raw: false,
        }
    }

    pub fn denoiser_config(&self) -> DenoiserConfig {
        DenoiserConfig {
            embed_channels: self.encoding().channels(),
            hidden: self.model.hidden,
            activation: self.model.activation,
            attention: self.model.attention,
            ..DenoiserConfig::default()
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            steps: self.sampler_steps,
            clip_latent: self.clip_latent,
        }
    }

    pub fn fusion_training(&self) -> FusionTrainConfig {
        FusionTrainConfig {
            steps: self.fusion.steps,
            lr: self.fusion.lr,
            seed: crate::rng::derive_seed(self.seed, u64::MAX),
        }
    }

    /// Inference settings; a gamma set or range is sampled with the seed.
    pub fn gen_config(&self) -> Result<GenConfig> {
        let gamma = self.gamma_spec()?.sample(&mut crate::rng::seeded(self.seed));
        Ok(GenConfig {
            gamma,
            sampler: self.sampler(),
            seed: self.seed,
            fusion: self.fusion.enabled,
            codec: self.codec()?,
            schedule: self.schedule,
            encoding: self.encoding(),
            conditions: self.conditions,
        })
    }
}

/// Settings for one right-view generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    pub gamma: f32,
    pub sampler: SamplerConfig,
    pub seed: u64,
    pub fusion: bool,
    pub codec: Codec,
    pub schedule: ScheduleConfig,
    pub encoding: EncodingConfig,
    pub conditions: ConditionSwitches,
}

impl Default for GenConfig {
    fn default() -> Self {
        PipelineConfig::default().gen_config().expect("defaults are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_decay_endpoints() {
        let c = LrSchedule::Cosine;
        assert_eq!(c.rate(0.1, 0, 100), 0.1);
        assert!((c.rate(0.1, 50, 100) - 0.05).abs() < 1e-15);
        assert!(c.rate(0.1, 100, 100).abs() < 1e-15);
        assert!((1..100).all(|k| c.rate(0.1, k, 100) < c.rate(0.1, k - 1, 100)));
        assert_eq!(LrSchedule::Constant.rate(0.1, 70, 100), 0.1);
    }

    #[test]
    fn schema_parses() {
        let cfg: PipelineConfig = serde_json::from_str(
            r#"{"gamma": 0.2, "crop_size": 32, "codec_factor": 4,
                "schedule": {"T": 50, "beta_start": 0.0001, "beta_end": 0.02},
                "sampler_steps": 10, "alpha": 0.5,
                "dropout": {"fraction": 0.0, "mode": "or"},
                "fusion": {"enabled": false}, "seed": 9}"#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.gamma_spec().unwrap(), GammaSpec::Fixed(0.2));
        assert_eq!(cfg.schedule.steps, 50);
        assert_eq!(cfg.dropout.mode, CombineMode::Or);
        assert!(!cfg.fusion.enabled);
        assert_eq!(cfg.fusion.steps, 200);
        let back: PipelineConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn gamma_variants() {
        let mut cfg = PipelineConfig::default();
        assert_eq!(cfg.gamma_spec().unwrap(), GammaSpec::Fixed(DEFAULT_GAMMA));
        cfg.gamma_set = Some(FINETUNE_GAMMAS.to_vec());
        let spec = cfg.gamma_spec().unwrap();
        let mut r = crate::rng::seeded(1);
        for _ in 0..50 {
            assert!(FINETUNE_GAMMAS.contains(&spec.sample(&mut r)));
        }
        cfg.gamma = Some(0.1);
        assert!(cfg.gamma_spec().is_err());
        cfg.gamma = None;
        cfg.gamma_set = None;
        cfg.gamma_range = Some(GENERALIZATION_GAMMA_RANGE);
        let spec = cfg.gamma_spec().unwrap();
        for _ in 0..50 {
            let g = spec.sample(&mut r);
            assert!((0.0..=0.35).contains(&g));
        }
        cfg.gamma_range = Some([0.3, 0.1]);
        assert!(cfg.gamma_spec().is_err());
        cfg.gamma_range = None;
        cfg.gamma = Some(1.5);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_bad_geometry() {
        let cfg = PipelineConfig {
            crop_size: 30,
            codec_factor: 4,
            ..PipelineConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = PipelineConfig {
            sampler_steps: 500,
            ..PipelineConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
