//! Toy two-stream noise predictor.
//!
//! Reference stream: `(I_l, C_l) -> conv -> act -> conv -> act = F_l`.
//! Denoising stream: `(z_t, warped image, C_r, t/T) -> conv -> act -> conv -> act = F_r`,
//! then `H = F_r + attn(F_l, F_r)`, `eps = conv(act(conv(H)))`.
//! All spatial operands live at latent resolution.

use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::attention::{AttentionCache, AttentionGrads, AttentionParams};
use super::conv::{Conv3x3, ConvGrads};
use super::feature::FeatureMap;
use super::{checkpoint, ParamSet};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Silu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Identity => 1.0,
        }
    }

    fn map(self, x: &FeatureMap) -> FeatureMap {
        x.map(|v| self.apply(v))
    }

    /// `d_out * act'(pre)`, in place on `d_out`.
    fn backprop(self, pre: &FeatureMap, d_out: &mut FeatureMap) {
        for (g, &p) in d_out.data.iter_mut().zip(&pre.data) {
            *g *= self.derivative(p);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub latent_channels: usize,
    /// Channels of the warped-image condition.
    pub cond_channels: usize,
    /// Channels of the coordinate embeddings `C_l`, `C_r`.
    pub embed_channels: usize,
    /// Channels of the reference image.
    pub ref_channels: usize,
    pub hidden: usize,
    pub activation: Activation,
    /// Routes the target features through cross-view attention; when off,
    /// the reference stream is unused.
    pub attention: bool,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            latent_channels: 3,
            cond_channels: 3,
            embed_channels: 16,
            ref_channels: 3,
            hidden: 16,
            activation: Activation::Silu,
            attention: true,
        }
    }
}

impl DenoiserConfig {
    /// Latent + warped condition + embedding + timestep channel.
    pub fn denoise_in_channels(&self) -> usize {
        self.latent_channels + self.cond_channels + self.embed_channels + 1
    }

    pub fn ref_in_channels(&self) -> usize {
        self.ref_channels + self.embed_channels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub config: DenoiserConfig,
    pub ref_in: Conv3x3,
    pub ref_mid: Conv3x3,
    pub den_in: Conv3x3,
    pub den_mid: Conv3x3,
    pub attn: AttentionParams,
    pub den_post: Conv3x3,
    pub den_out: Conv3x3,
}

/// Gradient buffers mirroring [`DenoiserParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserGrads {
    pub ref_in: ConvGrads,
    pub ref_mid: ConvGrads,
    pub den_in: ConvGrads,
    pub den_mid: ConvGrads,
    pub attn: AttentionGrads,
    pub den_post: ConvGrads,
    pub den_out: ConvGrads,
}

/// Inputs at latent resolution. `t` is the diffusion step in `1..=num_steps`
/// and enters the network as a constant channel `t / num_steps`.
#[derive(Debug, Clone, Copy)]
pub struct DenoiserInputs<'a> {
    pub z_t: &'a FeatureMap,
    pub t: usize,
    pub num_steps: usize,
    pub cond_warp: &'a FeatureMap,
    pub cond_embed: &'a FeatureMap,
    pub ref_image: &'a FeatureMap,
    pub ref_embed: &'a FeatureMap,
}

/// Reference-stream activations; independent of `z_t` and `t`, so they can
/// be reused across sampling steps.
#[derive(Debug, Clone)]
pub struct RefFeatures {
    input: FeatureMap,
    pre0: FeatureMap,
    act0: FeatureMap,
    pre1: FeatureMap,
    pub features: FeatureMap,
}

#[derive(Debug, Clone)]
pub struct DenoiserCache {
    reference: RefFeatures,
    input: FeatureMap,
    pre0: FeatureMap,
    act0: FeatureMap,
    pre1: FeatureMap,
    f_tgt: FeatureMap,
    attn: Option<AttentionCache>,
    merged: FeatureMap,
    pre2: FeatureMap,
    act2: FeatureMap,
}

fn random_conv(in_ch: usize, out_ch: usize, gain: f64, rng: &mut rng::Rng) -> Conv3x3 {
    let std = gain / ((9 * in_ch) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let weight = (0..9 * in_ch * out_ch).map(|_| normal.sample(rng)).collect();
    Conv3x3::new(in_ch, out_ch, weight, vec![0.0; out_ch]).expect("consistent sizes")
}

fn random_square(dim: usize, gain: f64, rng: &mut rng::Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, gain / (dim as f64).sqrt()).expect("positive std");
    (0..dim * dim).map(|_| normal.sample(rng)).collect()
}

impl DenoiserParams {
    pub fn zeros(config: DenoiserConfig) -> Self {
        let d = config.hidden;
        Self {
            config,
            ref_in: Conv3x3::zeros(config.ref_in_channels(), d),
            ref_mid: Conv3x3::zeros(d, d),
            den_in: Conv3x3::zeros(config.denoise_in_channels(), d),
            den_mid: Conv3x3::zeros(d, d),
            attn: AttentionParams::zeros(d),
            den_post: Conv3x3::zeros(d, d),
            den_out: Conv3x3::zeros(d, config.latent_channels),
        }
    }

    /// Gaussian fan-in initialization, reproducible from `seed`.
    pub fn init(config: DenoiserConfig, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let d = config.hidden;
        Self {
            config,
            ref_in: random_conv(config.ref_in_channels(), d, 1.0, &mut rng),
            ref_mid: random_conv(d, d, 1.0, &mut rng),
            den_in: random_conv(config.denoise_in_channels(), d, 1.0, &mut rng),
            den_mid: random_conv(d, d, 1.0, &mut rng),
            attn: AttentionParams {
                dim: d,
                wq: random_square(d, 1.0, &mut rng),
                wk: random_square(d, 1.0, &mut rng),
                wv: random_square(d, 1.0, &mut rng),
                wo: random_square(d, 0.5, &mut rng),
            },
            den_post: random_conv(d, d, 1.0, &mut rng),
            den_out: random_conv(d, config.latent_channels, 0.1, &mut rng),
        }
    }

    pub fn zero_grads(&self) -> DenoiserGrads {
        DenoiserGrads {
            ref_in: ConvGrads::zeros_like(&self.ref_in),
            ref_mid: ConvGrads::zeros_like(&self.ref_mid),
            den_in: ConvGrads::zeros_like(&self.den_in),
            den_mid: ConvGrads::zeros_like(&self.den_mid),
            attn: AttentionGrads::zeros(self.config.hidden),
            den_post: ConvGrads::zeros_like(&self.den_post),
            den_out: ConvGrads::zeros_like(&self.den_out),
        }
    }

    fn check_inputs(&self, x: &DenoiserInputs<'_>) -> Result<()> {
        let c = &self.config;
        let z = x.z_t;
        let spatial = [x.cond_warp, x.cond_embed, x.ref_image, x.ref_embed];
        if spatial.iter().any(|m| !m.same_spatial(z)) {
            return Err(Error::shape(format!(
                "denoiser operands must share the latent resolution {}x{}",
                z.height, z.width
            )));
        }
        let channels = [
            (z.channels, c.latent_channels, "latent"),
            (x.cond_warp.channels, c.cond_channels, "warped condition"),
            (x.cond_embed.channels, c.embed_channels, "target embedding"),
            (x.ref_image.channels, c.ref_channels, "reference image"),
            (x.ref_embed.channels, c.embed_channels, "reference embedding"),
        ];
        for (got, want, what) in channels {
            if got != want {
                return Err(Error::shape(format!("{what}: expected {want} channels, got {got}")));
            }
        }
        if x.num_steps == 0 {
            return Err(Error::invalid("num_steps must be positive"));
        }
        Ok(())
    }

    pub fn reference_features(&self, ref_image: &FeatureMap, ref_embed: &FeatureMap) -> Result<RefFeatures> {
        let act = self.config.activation;
        let input = FeatureMap::concat(&[ref_image, ref_embed])?;
        let pre0 = self.ref_in.forward(&input)?;
        let act0 = act.map(&pre0);
        let pre1 = self.ref_mid.forward(&act0)?;
        let features = act.map(&pre1);
        Ok(RefFeatures {
            input,
            pre0,
            act0,
            pre1,
            features,
        })
    }

    /// Forward pass reusing precomputed reference features.
    pub fn forward_with_reference(
        &self,
        x: &DenoiserInputs<'_>,
        reference: RefFeatures,
    ) -> Result<(FeatureMap, DenoiserCache)> {
        self.check_inputs(x)?;
        let act = self.config.activation;
        let t_channel = FeatureMap::filled(x.z_t.height, x.z_t.width, 1, x.t as f64 / x.num_steps as f64);
        let input = FeatureMap::concat(&[x.z_t, x.cond_warp, x.cond_embed, &t_channel])?;
        let pre0 = self.den_in.forward(&input)?;
        let act0 = act.map(&pre0);
        let pre1 = self.den_mid.forward(&act0)?;
        let f_tgt = act.map(&pre1);
        let (merged, attn) = if self.config.attention {
            let (a, cache) = self.attn.forward(&reference.features, &f_tgt)?;
            let mut merged = f_tgt.clone();
            for (m, v) in merged.data.iter_mut().zip(&a.data) {
                *m += v;
            }
            (merged, Some(cache))
        } else {
            (f_tgt.clone(), None)
        };
        let pre2 = self.den_post.forward(&merged)?;
        let act2 = act.map(&pre2);
        let eps = self.den_out.forward(&act2)?;
        let cache = DenoiserCache {
            reference,
            input,
            pre0,
            act0,
            pre1,
            f_tgt,
            attn,
            merged,
            pre2,
            act2,
        };
        Ok((eps, cache))
    }

    pub fn forward(&self, x: &DenoiserInputs<'_>) -> Result<(FeatureMap, DenoiserCache)> {
        self.check_inputs(x)?;
        let reference = self.reference_features(x.ref_image, x.ref_embed)?;
        self.forward_with_reference(x, reference)
    }

    /// Predicted noise only.
    pub fn predict(&self, x: &DenoiserInputs<'_>) -> Result<FeatureMap> {
        self.forward(x).map(|(eps, _)| eps)
    }

    /// Accumulates `dL/dtheta` into `grads` given `dL/d eps_hat`.
    pub fn backward(&self, cache: &DenoiserCache, d_eps: &FeatureMap, grads: &mut DenoiserGrads) {
        let act = self.config.activation;
        let mut d_act2 = self
            .den_out
            .backward(&cache.act2, d_eps, &mut grads.den_out, true)
            .expect("input gradient requested");
        act.backprop(&cache.pre2, &mut d_act2);
        let d_merged = self
            .den_post
            .backward(&cache.merged, &d_act2, &mut grads.den_post, true)
            .expect("input gradient requested");

        let mut d_tgt = d_merged.clone();
        if let Some(attn_cache) = &cache.attn {
            let (d_ref, d_tgt_attn) = self.attn.backward(attn_cache, &cache.f_tgt, &d_merged, &mut grads.attn);
            for (g, v) in d_tgt.data.iter_mut().zip(d_tgt_attn) {
                *g += v;
            }
            let r = &cache.reference;
            let mut d_ref = FeatureMap::new(r.features.height, r.features.width, r.features.channels, d_ref)
                .expect("reference gradient matches features");
            act.backprop(&r.pre1, &mut d_ref);
            let mut d_ref0 = self
                .ref_mid
                .backward(&r.act0, &d_ref, &mut grads.ref_mid, true)
                .expect("input gradient requested");
            act.backprop(&r.pre0, &mut d_ref0);
            self.ref_in.backward(&r.input, &d_ref0, &mut grads.ref_in, false);
        }

        act.backprop(&cache.pre1, &mut d_tgt);
        let mut d_act0 = self
            .den_mid
            .backward(&cache.act0, &d_tgt, &mut grads.den_mid, true)
            .expect("input gradient requested");
        act.backprop(&cache.pre0, &mut d_act0);
        self.den_in.backward(&cache.input, &d_act0, &mut grads.den_in, false);
    }
}

fn conv_shapes(c: &Conv3x3, out: &mut Vec<Vec<usize>>) {
    out.push(vec![3, 3, c.in_ch, c.out_ch]);
    out.push(vec![c.out_ch]);
}

impl DenoiserParams {
    /// Tensor extents in [`ParamSet::tensors`] order.
    pub fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        let d = self.config.hidden;
        let mut v = Vec::with_capacity(16);
        conv_shapes(&self.ref_in, &mut v);
        conv_shapes(&self.ref_mid, &mut v);
        conv_shapes(&self.den_in, &mut v);
        conv_shapes(&self.den_mid, &mut v);
        v.extend(std::iter::repeat_n(vec![d, d], 4));
        conv_shapes(&self.den_post, &mut v);
        conv_shapes(&self.den_out, &mut v);
        v
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let tensors = checkpoint::save_tensors(dir, "", self, &self.tensor_shapes())?;
        let manifest = checkpoint::Manifest {
            kind: MANIFEST_KIND.into(),
            config: serde_json::to_value(self.config)?,
            tensors,
        };
        checkpoint::write_manifest(dir, checkpoint::MANIFEST, &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = checkpoint::read_manifest(dir, checkpoint::MANIFEST)?;
        if manifest.kind != MANIFEST_KIND {
            return Err(Error::Format(format!(
                "expected a {MANIFEST_KIND} checkpoint, found {:?}",
                manifest.kind
            )));
        }
        let config: DenoiserConfig = serde_json::from_value(manifest.config)?;
        let mut params = DenoiserParams::zeros(config);
        checkpoint::load_tensors(dir, &manifest.tensors, &mut params)?;
        Ok(params)
    }
}

const MANIFEST_KIND: &str = "denoiser";

fn conv_tensors<'a>(name: [&'static str; 2], c: &'a Conv3x3, out: &mut Vec<(&'static str, &'a [f64])>) {
    out.push((name[0], &c.weight));
    out.push((name[1], &c.bias));
}

impl ParamSet for DenoiserParams {
    fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let mut v = Vec::with_capacity(16);
        conv_tensors(["ref_in.weight", "ref_in.bias"], &self.ref_in, &mut v);
        conv_tensors(["ref_mid.weight", "ref_mid.bias"], &self.ref_mid, &mut v);
        conv_tensors(["den_in.weight", "den_in.bias"], &self.den_in, &mut v);
        conv_tensors(["den_mid.weight", "den_mid.bias"], &self.den_mid, &mut v);
        v.push(("attn.wq", &self.attn.wq));
        v.push(("attn.wk", &self.attn.wk));
        v.push(("attn.wv", &self.attn.wv));
        v.push(("attn.wo", &self.attn.wo));
        conv_tensors(["den_post.weight", "den_post.bias"], &self.den_post, &mut v);
        conv_tensors(["den_out.weight", "den_out.bias"], &self.den_out, &mut v);
        v
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("ref_in.weight", &mut self.ref_in.weight),
            ("ref_in.bias", &mut self.ref_in.bias),
            ("ref_mid.weight", &mut self.ref_mid.weight),
            ("ref_mid.bias", &mut self.ref_mid.bias),
            ("den_in.weight", &mut self.den_in.weight),
            ("den_in.bias", &mut self.den_in.bias),
            ("den_mid.weight", &mut self.den_mid.weight),
            ("den_mid.bias", &mut self.den_mid.bias),
            ("attn.wq", &mut self.attn.wq),
            ("attn.wk", &mut self.attn.wk),
            ("attn.wv", &mut self.attn.wv),
            ("attn.wo", &mut self.attn.wo),
            ("den_post.weight", &mut self.den_post.weight),
            ("den_post.bias", &mut self.den_post.bias),
            ("den_out.weight", &mut self.den_out.weight),
            ("den_out.bias", &mut self.den_out.bias),
        ]
    }
}

impl ParamSet for DenoiserGrads {
    fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("ref_in.weight", &self.ref_in.weight),
            ("ref_in.bias", &self.ref_in.bias),
            ("ref_mid.weight", &self.ref_mid.weight),
            ("ref_mid.bias", &self.ref_mid.bias),
            ("den_in.weight", &self.den_in.weight),
            ("den_in.bias", &self.den_in.bias),
            ("den_mid.weight", &self.den_mid.weight),
            ("den_mid.bias", &self.den_mid.bias),
            ("attn.wq", &self.attn.wq),
            ("attn.wk", &self.attn.wk),
            ("attn.wv", &self.attn.wv),
            ("attn.wo", &self.attn.wo),
            ("den_post.weight", &self.den_post.weight),
            ("den_post.bias", &self.den_post.bias),
            ("den_out.weight", &self.den_out.weight),
            ("den_out.bias", &self.den_out.bias),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("ref_in.weight", &mut self.ref_in.weight),
            ("ref_in.bias", &mut self.ref_in.bias),
            ("ref_mid.weight", &mut self.ref_mid.weight),
            ("ref_mid.bias", &mut self.ref_mid.bias),
            ("den_in.weight", &mut self.den_in.weight),
            ("den_in.bias", &mut self.den_in.bias),
            ("den_mid.weight", &mut self.den_mid.weight),
            ("den_mid.bias", &mut self.den_mid.bias),
            ("attn.wq", &mut self.attn.wq),
            ("attn.wk", &mut self.attn.wk),
            ("attn.wv", &mut self.attn.wv),
            ("attn.wo", &mut self.attn.wo),
            ("den_post.weight", &mut self.den_post.weight),
            ("den_post.bias", &mut self.den_post.bias),
            ("den_out.weight", &mut self.den_out.weight),
            ("den_out.bias", &mut self.den_out.bias),
        ]
    }
}
