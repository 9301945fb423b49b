use super::tensor::TensorF32;
use crate::error::{Error, Result};

/// Interleaved `h x w x c` image with intensities in `[0, 1]`, `c` in {1, 3}.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImagePlane {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::shape(format!("image needs 1 or 3 channels, got {channels}")));
        }
        if height == 0 || width == 0 {
            return Err(Error::shape("image with zero extent"));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("intensity {v} outside [0,1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image from arbitrary values, clamping into `[0, 1]`
    /// (NaN maps to 0).
    pub fn from_clamped(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        let data = data
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Self::new(height, width, channels, data)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::from_clamped(height, width, channels, data)
    }

    pub fn from_tensor(t: &TensorF32) -> Result<Self> {
        match *t.dims() {
            [h, w] => Self::new(h, w, 1, t.data().to_vec()),
            [h, w, c] => Self::new(h, w, c, t.data().to_vec()),
            ref d => Err(Error::shape(format!("image tensor needs rank 2 or 3, got {d:?}"))),
        }
    }

    pub fn to_tensor(&self) -> TensorF32 {
        TensorF32::new(vec![self.height, self.width, self.channels], self.data.clone())
            .expect("image invariants imply a valid tensor")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &ImagePlane) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Replicates a gray image to three channels; color images are cloned.
    pub fn to_rgb(&self) -> ImagePlane {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        ImagePlane {
            height: self.height,
            width: self.width,
            channels: 3,
            data,
        }
    }

    /// Channel mean, as used for grayscale metrics.
    pub fn to_gray(&self) -> Vec<f64> {
        self.data
            .chunks_exact(self.channels)
            .map(|px| px.iter().map(|&v| v as f64).sum::<f64>() / self.channels as f64)
            .collect()
    }

    pub fn flip_horizontal(&self) -> ImagePlane {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                let at = (y * self.width + x) * self.channels;
                data.extend_from_slice(&self.data[at..at + self.channels]);
            }
        }
        ImagePlane { data, ..*self }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<ImagePlane> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::shape(format!(
                "crop {height}x{width}@({top},{left}) outside {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for y in top..top + height {
            let at = (y * self.width + left) * self.channels;
            data.extend_from_slice(&self.data[at..at + width * self.channels]);
        }
        Ok(ImagePlane {
            height,
            width,
            channels: self.channels,
            data,
        })
    }
}

/// Binary per-pixel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl ValidityMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "{height}x{width} mask needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::invalid("mask values must be 0 or 1"));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_bools(height: usize, width: usize, values: &[bool]) -> Result<Self> {
        Self::new(height, width, values.iter().map(|&b| b as u8).collect())
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn mean(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    pub fn same_shape(&self, other: &ValidityMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn to_image(&self) -> ImagePlane {
        ImagePlane::new(
            self.height,
            self.width,
            1,
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .expect("mask values lie in [0,1]")
    }

    /// Thresholds a single-channel image at 0.5.
    pub fn from_image(img: &ImagePlane) -> Result<Self> {
        if img.channels() != 1 {
            return Err(Error::shape("mask image must be single-channel"));
        }
        Self::new(
            img.height(),
            img.width(),
            img.data().iter().map(|&v| (v >= 0.5) as u8).collect(),
        )
    }
}

/// Horizontal disparities in pixels with a validity mask for sparse ground
/// truth. Invalid pixels always hold the value 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
    valid: ValidityMask,
}

impl DisparityMap {
    pub fn dense(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        Self::sparse(height, width, values, ValidityMask::ones(height, width))
    }

    /// Builds a sparse map; values at invalid pixels are replaced by 0.
    pub fn sparse(height: usize, width: usize, mut values: Vec<f32>, valid: ValidityMask) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape("disparity map with zero extent"));
        }
        if values.len() != height * width || valid.height() != height || valid.width() != width {
            return Err(Error::shape(format!(
                "disparity {height}x{width}: {} values, mask {}x{}",
                values.len(),
                valid.height(),
                valid.width()
            )));
        }
        for (v, &m) in values.iter_mut().zip(valid.data()) {
            if m == 0 {
                *v = 0.0;
            } else if !v.is_finite() || *v < 0.0 {
                return Err(Error::invalid(format!("disparity {v} must be finite and >= 0")));
            }
        }
        Ok(Self {
            height,
            width,
            values,
            valid,
        })
    }

    pub fn constant(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::dense(height, width, vec![value; height * width])
    }

    pub fn from_tensor(t: &TensorF32) -> Result<Self> {
        match *t.dims() {
            [h, w] | [h, w, 1] => Self::dense(h, w, t.data().to_vec()),
            ref d => Err(Error::shape(format!("disparity tensor needs [h,w], got {d:?}"))),
        }
    }

    pub fn to_tensor(&self) -> TensorF32 {
        TensorF32::new(vec![self.height, self.width], self.values.clone())
            .expect("disparity invariants imply a valid tensor")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn valid(&self) -> &ValidityMask {
        &self.valid
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.valid.get(y, x)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.count()
    }

    /// Largest valid disparity, `None` when no pixel is valid.
    pub fn max_valid(&self) -> Option<f32> {
        self.values
            .iter()
            .zip(self.valid.data())
            .filter(|(_, &m)| m == 1)
            .map(|(&v, _)| v)
            .fold(None, |acc: Option<f32>, v| Some(acc.map_or(v, |a| a.max(v))))
    }

    /// Multiplies every valid value by `factor` (must be finite and >= 0).
    pub fn scaled(&self, factor: f32) -> Result<Self> {
        Self::sparse(
            self.height,
            self.width,
            self.values.iter().map(|&v| v * factor).collect(),
            self.valid.clone(),
        )
    }

    pub fn flip_horizontal(&self) -> DisparityMap {
        let (h, w) = (self.height, self.width);
        let mut values = Vec::with_capacity(h * w);
        let mut valid = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in (0..w).rev() {
                values.push(self.get(y, x));
                valid.push(self.valid.data()[y * w + x]);
            }
        }
        DisparityMap {
            height: h,
            width: w,
            values,
            valid: ValidityMask {
                height: h,
                width: w,
                data: valid,
            },
        }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<DisparityMap> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::shape("disparity crop outside map"));
        }
        let mut values = Vec::with_capacity(height * width);
        let mut valid = Vec::with_capacity(height * width);
        for y in top..top + height {
            let at = y * self.width + left;
            values.extend_from_slice(&self.values[at..at + width]);
            valid.extend_from_slice(&self.valid.data()[at..at + width]);
        }
        Self::sparse(height, width, values, ValidityMask::new(height, width, valid)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_out_of_range() {
        assert!(ImagePlane::new(1, 1, 1, vec![1.5]).is_err());
        assert!(ImagePlane::new(1, 1, 2, vec![0.0, 0.0]).is_err());
        assert!(ImagePlane::new(1, 2, 1, vec![0.0]).is_err());
        let img = ImagePlane::from_clamped(1, 2, 1, vec![-1.0, 2.0]).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn sparse_map_zeroes_invalid() {
        let m = ValidityMask::new(1, 3, vec![1, 0, 1]).unwrap();
        let d = DisparityMap::sparse(1, 3, vec![2.0, -5.0, 3.0], m).unwrap();
        assert_eq!(d.values(), &[2.0, 0.0, 3.0]);
        assert_eq!(d.max_valid(), Some(3.0));
        assert!(DisparityMap::dense(1, 2, vec![1.0, -0.5]).is_err());
        assert!(ValidityMask::new(1, 2, vec![0, 2]).is_err());
    }

    #[test]
    fn crop_and_flip() {
        let img = ImagePlane::from_fn(2, 3, 1, |y, x, _| (y * 3 + x) as f32 / 10.0).unwrap();
        let c = img.crop(1, 1, 1, 2).unwrap();
        assert_eq!(c.data(), &[0.4, 0.5]);
        assert_eq!(img.flip_horizontal().data()[..3], [0.2, 0.1, 0.0]);
        assert!(img.crop(1, 2, 1, 2).is_err());
    }
}
