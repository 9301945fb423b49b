use crate::error::{Error, Result};
use crate::grid::TensorF32;

/// `h x w x c` map of `f64` features; rows of the flattened `[h*w, c]`
/// matrix are the attention tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "{height}x{width}x{channels} feature map needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_f32(height: usize, width: usize, channels: usize, data: &[f32]) -> Result<Self> {
        Self::new(height, width, channels, data.iter().map(|&v| v as f64).collect())
    }

    pub fn from_tensor(t: &TensorF32) -> Result<Self> {
        match *t.dims() {
            [h, w, c] => Self::from_f32(h, w, c, t.data()),
            [h, w] => Self::from_f32(h, w, 1, t.data()),
            ref d => Err(Error::shape(format!("feature tensor needs rank 2 or 3, got {d:?}"))),
        }
    }

    pub fn to_tensor(&self) -> Result<TensorF32> {
        TensorF32::from_f64(vec![self.height, self.width, self.channels], &self.data)
    }

    pub fn tokens(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_spatial(&self, other: &FeatureMap) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.same_spatial(other) && self.channels == other.channels
    }

    pub fn token(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.channels..(idx + 1) * self.channels]
    }

    /// Channel-wise concatenation of maps sharing a spatial extent.
    pub fn concat(parts: &[&FeatureMap]) -> Result<FeatureMap> {
        let first = parts.first().ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        if parts.iter().any(|p| !p.same_spatial(first)) {
            return Err(Error::shape("concatenated maps differ in spatial extent"));
        }
        let channels: usize = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(first.tokens() * channels);
        for t in 0..first.tokens() {
            for p in parts {
                data.extend_from_slice(p.token(t));
            }
        }
        Ok(FeatureMap {
            height: first.height,
            width: first.width,
            channels,
            data,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FeatureMap {
        FeatureMap {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn mse(&self, other: &FeatureMap) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / self.data.len() as f64
    }
}
