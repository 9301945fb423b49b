//! Adaptive fusion of generated and warped right views.
//!
//! `W = sigmoid(conv3x3(concat(I_gen, I_warp, M)))` and
//! `out = M W I_warp + (1 - M W) I_gen`, with the mask broadcast over
//! channels.

use std::path::Path;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::{ImagePlane, ValidityMask};
use crate::nn::checkpoint;
use crate::nn::{Conv3x3, ConvGrads, FeatureMap, ParamSet};
use crate::rng;

/// Input channels of the weight predictor: generated RGB, warped RGB, mask.
pub const FUSION_INPUTS: usize = 7;

const MANIFEST_KIND: &str = "fusion";

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub conv: Conv3x3,
}

/// Per-pixel blend weights in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl FusionWeights {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Mean weight over pixels where `mask` is set; `None` if it is empty.
    pub fn mean_where(&self, mask: &ValidityMask) -> Option<f64> {
        let (sum, n) = self
            .values
            .iter()
            .zip(mask.data())
            .filter(|(_, &m)| m == 1)
            .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
        (n > 0).then(|| sum / n as f64)
    }
}

impl FusionParams {
    pub fn zeros() -> Self {
        Self {
            conv: Conv3x3::zeros(FUSION_INPUTS, 1),
        }
    }

    /// Zero kernel with a constant bias; large biases saturate `W` toward 1.
    pub fn constant(bias: f64) -> Self {
        let mut p = Self::zeros();
        p.conv.bias[0] = bias;
        p
    }

    pub fn init(seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let normal = Normal::new(0.0, 0.01).expect("positive std");
        let mut p = Self::zeros();
        for w in &mut p.conv.weight {
            *w = normal.sample(&mut r);
        }
        p
    }

    pub fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        vec![vec![3, 3, FUSION_INPUTS, 1], vec![1]]
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let tensors = checkpoint::save_tensors(dir, "", self, &self.tensor_shapes())?;
        let manifest = checkpoint::Manifest {
            kind: MANIFEST_KIND.into(),
            config: serde_json::json!({ "inputs": FUSION_INPUTS, "kernel": 3 }),
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
        let mut p = Self::zeros();
        checkpoint::load_tensors(dir, &manifest.tensors, &mut p)?;
        Ok(p)
    }
}

impl ParamSet for FusionParams {
    fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![("kernel", &self.conv.weight), ("bias", &self.conv.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![("kernel", &mut self.conv.weight), ("bias", &mut self.conv.bias)]
    }
}

impl ParamSet for ConvGrads {
    fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![("kernel", &self.weight), ("bias", &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![("kernel", &mut self.weight), ("bias", &mut self.bias)]
    }
}

fn check_operands(i_gen: &ImagePlane, i_warp: &ImagePlane, m: &ValidityMask) -> Result<()> {
    if i_gen.channels() != 3 || i_warp.channels() != 3 {
        return Err(Error::shape("fusion needs 3-channel images"));
    }
    if !i_gen.same_shape(i_warp) || m.height() != i_gen.height() || m.width() != i_gen.width() {
        return Err(Error::shape(format!(
            "fusion operands differ: gen {}x{}, warp {}x{}, mask {}x{}",
            i_gen.height(),
            i_gen.width(),
            i_warp.height(),
            i_warp.width(),
            m.height(),
            m.width()
        )));
    }
    Ok(())
}

fn stack_inputs(i_gen: &ImagePlane, i_warp: &ImagePlane, m: &ValidityMask) -> FeatureMap {
    let (h, w) = (i_gen.height(), i_gen.width());
    let mut data = Vec::with_capacity(h * w * FUSION_INPUTS);
    for ((g, wp), &mv) in i_gen
        .data()
        .chunks_exact(3)
        .zip(i_warp.data().chunks_exact(3))
        .zip(m.data())
    {
        data.extend(g.iter().map(|&v| v as f64));
        data.extend(wp.iter().map(|&v| v as f64));
        data.push(mv as f64);
    }
    FeatureMap {
        height: h,
        width: w,
        channels: FUSION_INPUTS,
        data,
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn fusion_weights(
    i_gen: &ImagePlane,
    i_warp: &ImagePlane,
    m: &ValidityMask,
    p: &FusionParams,
) -> Result<FusionWeights> {
    check_operands(i_gen, i_warp, m)?;
    let pre = p.conv.forward(&stack_inputs(i_gen, i_warp, m))?;
    Ok(FusionWeights {
        height: i_gen.height(),
        width: i_gen.width(),
        values: pre.data.iter().map(|&v| sigmoid(v)).collect(),
    })
}

pub fn fuse(i_gen: &ImagePlane, i_warp: &ImagePlane, m: &ValidityMask, w: &FusionWeights) -> Result<ImagePlane> {
    if !i_gen.same_shape(i_warp)
        || m.height() != i_gen.height()
        || m.width() != i_gen.width()
        || w.height != i_gen.height()
        || w.width != i_gen.width()
    {
        return Err(Error::shape("fuse operands differ in size"));
    }
    let c = i_gen.channels();
    let data = i_gen
        .data()
        .iter()
        .zip(i_warp.data())
        .enumerate()
        .map(|(k, (&g, &wp))| {
            let px = k / c;
            let mw = m.data()[px] as f64 * w.values[px];
            (mw * wp as f64 + (1.0 - mw) * g as f64) as f32
        })
        .collect();
    ImagePlane::new(i_gen.height(), i_gen.width(), c, data)
}

/// Weights then blend.
pub fn fuse_with(i_gen: &ImagePlane, i_warp: &ImagePlane, m: &ValidityMask, p: &FusionParams) -> Result<ImagePlane> {
    let w = fusion_weights(i_gen, i_warp, m, p)?;
    fuse(i_gen, i_warp, m, &w)
}

/// One supervised example for the fusion module.
#[derive(Debug, Clone)]
pub struct FusionSample {
    pub i_gen: ImagePlane,
    pub i_warp: ImagePlane,
    pub mask: ValidityMask,
    pub target: ImagePlane,
}

impl FusionSample {
    pub fn new(i_gen: ImagePlane, i_warp: ImagePlane, mask: ValidityMask, target: ImagePlane) -> Result<Self> {
        check_operands(&i_gen, &i_warp, &mask)?;
        if !target.same_shape(&i_gen) {
            return Err(Error::shape("fusion target differs from inputs"));
        }
        Ok(Self {
            i_gen,
            i_warp,
            mask,
            target,
        })
    }
}

/// Mean squared error of the fused image, averaged over samples.
pub fn fusion_loss(samples: &[FusionSample], p: &FusionParams) -> Result<f64> {
    fusion_loss_with_grad(samples, p).map(|(l, _)| l)
}

pub fn fusion_loss_with_grad(samples: &[FusionSample], p: &FusionParams) -> Result<(f64, ConvGrads)> {
    if samples.is_empty() {
        return Err(Error::invalid("no fusion samples"));
    }
    let mut grads = ConvGrads::zeros_like(&p.conv);
    let mut total = 0.0;
    let scale = 1.0 / samples.len() as f64;
    for s in samples {
        let input = stack_inputs(&s.i_gen, &s.i_warp, &s.mask);
        let pre = p.conv.forward(&input)?;
        let n = s.i_gen.data().len() as f64;
        let mut d_pre = FeatureMap::zeros(pre.height, pre.width, 1);
        let mut sse = 0.0;
        for px in 0..pre.data.len() {
            let w = sigmoid(pre.data[px]);
            let m = s.mask.data()[px] as f64;
            let mut d_w = 0.0;
            for c in 0..3 {
                let k = px * 3 + c;
                let (g, wp, t) = (s.i_gen.data()[k] as f64, s.i_warp.data()[k] as f64, s.target.data()[k] as f64);
                let out = m * w * wp + (1.0 - m * w) * g;
                sse += (out - t) * (out - t);
                d_w += 2.0 * (out - t) / n * m * (wp - g);
            }
            d_pre.data[px] = d_w * w * (1.0 - w) * scale;
        }
        total += sse / n * scale;
        p.conv.backward(&input, &d_pre, &mut grads, false);
    }
    Ok((total, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for FusionTrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            lr: 0.05,
            seed: 0,
        }
    }
}

/// Full-batch gradient descent on the fusion MSE. Returns the final
/// parameters and the loss before each step plus the final loss.
pub fn train_fusion(samples: &[FusionSample], cfg: FusionTrainConfig) -> Result<(FusionParams, Vec<f64>)> {
    train_fusion_from(FusionParams::init(cfg.seed), samples, cfg)
}

pub fn train_fusion_from(
    mut p: FusionParams,
    samples: &[FusionSample],
    cfg: FusionTrainConfig,
) -> Result<(FusionParams, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::invalid("no fusion samples"));
    }
    let mut curve = Vec::with_capacity(cfg.steps + 1);
    for _ in 0..cfg.steps {
        let (loss, grads) = fusion_loss_with_grad(samples, &p)?;
        curve.push(loss);
        crate::nn::optim::sgd_step(&mut p, &grads, cfg.lr);
    }
    curve.push(fusion_loss(samples, &p)?);
    Ok((p, curve))
}
