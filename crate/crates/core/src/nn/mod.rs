//! Toy two-stream denoiser with cross-view attention and hand-written
//! backpropagation.
//!
//! Model-side arithmetic runs in `f64` so that analytic gradients can be
//! checked against central differences at tight tolerances; parameters are
//! persisted as `f32` GST1 tensors.

mod attention;
pub mod checkpoint;
mod conv;
mod denoiser;
mod feature;
mod gradcheck;
pub mod optim;

/// Dot product with four independent accumulators, summed in fixed order.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub use attention::{cross_view_attention, AttentionCache, AttentionGrads, AttentionParams};
pub use conv::{Conv3x3, ConvGrads};
pub use denoiser::{
    Activation, DenoiserCache, DenoiserConfig, DenoiserGrads, DenoiserInputs, DenoiserParams,
    RefFeatures,
};
pub use feature::FeatureMap;
pub use gradcheck::{
    central_difference, check_gradients, grad_check, relative_error, GradCheckReport, GradProbe,
};

/// Named flat views over every trainable tensor of a model.
pub trait ParamSet {
    fn tensors(&self) -> Vec<(&'static str, &[f64])>;
    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}
