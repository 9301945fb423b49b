use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{disparity_rescale, resize_bilinear, DisparityMap, ImagePlane};
use crate::rng;

pub const MIN_SAMPLE_SIDE: usize = 32;

/// Square crop window in source pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropWindow {
    pub top: usize,
    pub left: usize,
    pub side: usize,
}

impl CropWindow {
    /// Side uniform in `[min/2, min]`, position uniform.
    pub fn random(height: usize, width: usize, seed: u64) -> Result<Self> {
        let min = check_size(height, width)?;
        let mut r = rng::seeded(seed);
        let side = r.random_range(min / 2..=min);
        Ok(Self {
            top: r.random_range(0..=height - side),
            left: r.random_range(0..=width - side),
            side,
        })
    }

    /// Largest centered square.
    pub fn center(height: usize, width: usize) -> Result<Self> {
        let side = check_size(height, width)?;
        Ok(Self {
            top: (height - side) / 2,
            left: (width - side) / 2,
            side,
        })
    }
}

fn check_size(height: usize, width: usize) -> Result<usize> {
    let min = height.min(width);
    if min < MIN_SAMPLE_SIDE {
        return Err(Error::shape(format!(
            "sample {height}x{width} is smaller than {MIN_SAMPLE_SIDE} px"
        )));
    }
    Ok(min)
}

pub fn crop_and_resize(img: &ImagePlane, win: CropWindow, size: usize) -> Result<ImagePlane> {
    let c = img.crop(win.top, win.left, win.side, win.side)?;
    if win.side == size {
        Ok(c)
    } else {
        resize_bilinear(&c, size, size)
    }
}

/// Disparity values follow the horizontal scale `size / side`.
pub fn crop_and_resize_disparity(d: &DisparityMap, win: CropWindow, size: usize) -> Result<DisparityMap> {
    let c = d.crop(win.top, win.left, win.side, win.side)?;
    if win.side == size {
        Ok(c)
    } else {
        disparity_rescale(&c, size, size)
    }
}

/// Random square crop resized to `size x size`.
pub fn prepare_sample(img: &ImagePlane, d: &DisparityMap, size: usize, seed: u64) -> Result<(ImagePlane, DisparityMap)> {
    if img.height() != d.height() || img.width() != d.width() {
        return Err(Error::shape("image and disparity sizes differ"));
    }
    let win = CropWindow::random(img.height(), img.width(), seed)?;
    Ok((crop_and_resize(img, win, size)?, crop_and_resize_disparity(d, win, size)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> ImagePlane {
        ImagePlane::from_fn(h, w, 3, |y, x, c| ((y * w + x) * 3 + c) as f32 / (h * w * 3) as f32).unwrap()
    }

    #[test]
    fn full_crop_is_identity() {
        let img = ramp(40, 40);
        let d = DisparityMap::constant(40, 40, 3.0).unwrap();
        let win = CropWindow::center(40, 40).unwrap();
        assert_eq!(win, CropWindow { top: 0, left: 0, side: 40 });
        assert_eq!(crop_and_resize(&img, win, 40).unwrap(), img);
        assert_eq!(crop_and_resize_disparity(&d, win, 40).unwrap(), d);
    }

    #[test]
    fn disparity_scales_with_resize() {
        let d = DisparityMap::constant(300, 300, 5.0).unwrap();
        let win = CropWindow { top: 10, left: 20, side: 256 };
        let out = crop_and_resize_disparity(&d, win, 512).unwrap();
        assert!(out.values().iter().all(|&v| v == 10.0));
    }

    #[test]
    fn random_crops() {
        let img = ramp(48, 64);
        let d = DisparityMap::constant(48, 64, 4.0).unwrap();
        for seed in 0..50 {
            let w = CropWindow::random(48, 64, seed).unwrap();
            assert!((24..=48).contains(&w.side));
            assert!(w.top + w.side <= 48 && w.left + w.side <= 64);
            let (a, da) = prepare_sample(&img, &d, 32, seed).unwrap();
            let (b, db) = prepare_sample(&img, &d, 32, seed).unwrap();
            assert_eq!((a.height(), a.width()), (32, 32));
            assert_eq!(a, b);
            assert_eq!(da, db);
            let expect = 4.0 * 32.0 / w.side as f64;
            assert!(da.values().iter().all(|&v| (v as f64 - expect).abs() < 1e-5));
        }
        let small = ramp(31, 64);
        assert!(prepare_sample(&small, &DisparityMap::constant(31, 64, 1.0).unwrap(), 32, 0).is_err());
    }
}
