use super::plane::{DisparityMap, ImagePlane, ValidityMask};
use crate::error::{Error, Result};

/// Source coordinate for output index `i` under pixel-center alignment,
/// clamped to the valid range.
#[inline]
fn center_sample(i: usize, src: usize, dst: usize) -> f64 {
    let pos = (i as f64 + 0.5) * (src as f64 / dst as f64) - 0.5;
    pos.clamp(0.0, (src - 1) as f64)
}

#[inline]
fn nearest_index(i: usize, src: usize, dst: usize) -> usize {
    let pos = ((i as f64 + 0.5) * src as f64 / dst as f64).floor() as usize;
    pos.min(src - 1)
}

/// Bilinear resize with pixel-center alignment and edge clamping.
pub fn resize_bilinear(img: &ImagePlane, height: usize, width: usize) -> Result<ImagePlane> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("resize target must be at least 1x1"));
    }
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let cols: Vec<(usize, usize, f64)> = (0..width)
        .map(|x| {
            let sx = center_sample(x, w, width);
            let x0 = sx.floor() as usize;
            (x0, (x0 + 1).min(w - 1), sx - x0 as f64)
        })
        .collect();
    let mut out = Vec::with_capacity(height * width * c);
    for y in 0..height {
        let sy = center_sample(y, h, height);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for &(x0, x1, fx) in &cols {
            for ch in 0..c {
                let top = img.get(y0, x0, ch) as f64 * (1.0 - fx) + img.get(y0, x1, ch) as f64 * fx;
                let bot = img.get(y1, x0, ch) as f64 * (1.0 - fx) + img.get(y1, x1, ch) as f64 * fx;
                out.push((top * (1.0 - fy) + bot * fy) as f32);
            }
        }
    }
    ImagePlane::from_clamped(height, width, c, out)
}

/// Nearest-neighbour spatial resampling; valid disparities are multiplied
/// by `width2 / width` since they are horizontal offsets.
pub fn disparity_rescale(d: &DisparityMap, height: usize, width: usize) -> Result<DisparityMap> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("rescale target must be at least 1x1"));
    }
    let factor = width as f64 / d.width() as f64;
    let mut values = Vec::with_capacity(height * width);
    let mut valid = Vec::with_capacity(height * width);
    for y in 0..height {
        let sy = nearest_index(y, d.height(), height);
        for x in 0..width {
            let sx = nearest_index(x, d.width(), width);
            let ok = d.is_valid(sy, sx);
            valid.push(ok as u8);
            values.push(if ok { (d.get(sy, sx) as f64 * factor) as f32 } else { 0.0 });
        }
    }
    DisparityMap::sparse(height, width, values, ValidityMask::new(height, width, valid)?)
}

/// Normalizes valid disparities by their maximum and rescales so the largest
/// becomes `gamma * width` pixels.
pub fn normalize_and_scale(d: &DisparityMap, gamma: f32, width: usize) -> Result<DisparityMap> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma {gamma} outside [0,1]")));
    }
    let max = d
        .max_valid()
        .ok_or_else(|| Error::Degenerate("disparity map has no valid pixel".into()))?;
    if max <= 0.0 {
        return Err(Error::Degenerate("maximum disparity is zero".into()));
    }
    let target = gamma as f64 * width as f64;
    let values = d
        .values()
        .iter()
        .map(|&v| (v as f64 / max as f64 * target) as f32)
        .collect();
    DisparityMap::sparse(d.height(), d.width(), values, d.valid().clone())
}
