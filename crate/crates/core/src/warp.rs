//! Disparity forward warping (left view to right view) and random
//! disparity dropout.
//!
//! Rectified convention: a left pixel at column `j` with disparity `d` lands
//! at right-view column `round(j - d)` on the same row.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::embed::FourierEmbedding;
use crate::error::{Error, Result};
use crate::grid::{DisparityMap, ImagePlane, TensorF32, ValidityMask};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct WarpResult {
    pub warped: TensorF32,
    pub mask: ValidityMask,
}

/// Target column of a source pixel, `None` when it leaves the image.
#[inline]
pub fn target_column(col: usize, disparity: f32, width: usize) -> Option<usize> {
    let t = (col as f64 - disparity as f64).round();
    (t >= 0.0 && t < width as f64).then_some(t as usize)
}

/// For each target pixel, the source column that wins the splat, if any.
///
/// The nearest surface (largest disparity) wins; equal disparities go to the
/// smaller source column.
pub fn splat_sources(d: &DisparityMap) -> Vec<Option<usize>> {
    let (h, w) = (d.height(), d.width());
    let mut winner: Vec<Option<usize>> = vec![None; h * w];
    for row in 0..h {
        for col in 0..w {
            if !d.is_valid(row, col) {
                continue;
            }
            let disp = d.get(row, col);
            let Some(t) = target_column(col, disp, w) else {
                continue;
            };
            let slot = &mut winner[row * w + t];
            let take = match *slot {
                None => true,
                Some(prev) => {
                    let pd = d.get(row, prev);
                    disp > pd || (disp == pd && col < prev)
                }
            };
            if take {
                *slot = Some(col);
            }
        }
    }
    winner
}

/// Forward-warps an `[h, w]` or `[h, w, c]` tensor. Unhit targets are zero
/// in every channel and zero in the mask.
pub fn forward_warp(src: &TensorF32, d: &DisparityMap) -> Result<WarpResult> {
    let (h, w, c) = match *src.dims() {
        [h, w] => (h, w, 1),
        [h, w, c] => (h, w, c),
        ref dims => return Err(Error::shape(format!("warp source needs rank 2 or 3, got {dims:?}"))),
    };
    if h != d.height() || w != d.width() {
        return Err(Error::shape(format!(
            "source {h}x{w} vs disparity {}x{}",
            d.height(),
            d.width()
        )));
    }
    if d.values().iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("negative disparity"));
    }
    let sources = splat_sources(d);
    let data = src.data();
    let mut out = vec![0f32; h * w * c];
    let mut mask = vec![0u8; h * w];
    for row in 0..h {
        for t in 0..w {
            if let Some(s) = sources[row * w + t] {
                let (dst, from) = ((row * w + t) * c, (row * w + s) * c);
                out[dst..dst + c].copy_from_slice(&data[from..from + c]);
                mask[row * w + t] = 1;
            }
        }
    }
    Ok(WarpResult {
        warped: TensorF32::new(src.dims().to_vec(), out)?,
        mask: ValidityMask::new(h, w, mask)?,
    })
}

pub fn warp_image(img: &ImagePlane, d: &DisparityMap) -> Result<(ImagePlane, ValidityMask)> {
    let res = forward_warp(&img.to_tensor(), d)?;
    Ok((ImagePlane::from_tensor(&res.warped)?, res.mask))
}

pub fn warp_embedding(e: &FourierEmbedding, d: &DisparityMap) -> Result<(FourierEmbedding, ValidityMask)> {
    let res = forward_warp(&e.to_tensor(), d)?;
    Ok((FourierEmbedding::from_tensor(&res.warped)?, res.mask))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropoutDraw {
    pub ratio: f64,
    pub mask: ValidityMask,
}

/// Drops each pixel independently with probability `ratio`.
pub fn dropout_with_ratio(height: usize, width: usize, ratio: f64, rng: &mut rng::Rng) -> Result<DropoutDraw> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("dropout ratio {ratio} outside [0,1]")));
    }
    let data = (0..height * width)
        .map(|_| (rng.random::<f64>() >= ratio) as u8)
        .collect();
    Ok(DropoutDraw {
        ratio,
        mask: ValidityMask::new(height, width, data)?,
    })
}

/// Draws `r ~ U(0,1)` then a dropout mask with that ratio, reproducibly from `seed`.
pub fn dropout_draw(height: usize, width: usize, seed: u64) -> DropoutDraw {
    let mut rng = rng::seeded(seed);
    let ratio = rng.random::<f64>();
    dropout_with_ratio(height, width, ratio, &mut rng).expect("ratio drawn from [0,1)")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineMode {
    /// Elementwise OR of warp and dropout masks.
    Or,
    /// Elementwise AND; sparsifies the warp mask.
    #[default]
    And,
}

impl std::str::FromStr for CombineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "or" => Ok(CombineMode::Or),
            "and" => Ok(CombineMode::And),
            _ => Err(Error::invalid(format!("unknown mask mode {s:?}"))),
        }
    }
}

pub fn combine_masks(m_warp: &ValidityMask, m_rand: &ValidityMask, mode: CombineMode) -> Result<ValidityMask> {
    if !m_warp.same_shape(m_rand) {
        return Err(Error::shape("mask dims differ"));
    }
    let data = m_warp
        .data()
        .iter()
        .zip(m_rand.data())
        .map(|(&a, &b)| match mode {
            CombineMode::Or => a | b,
            CombineMode::And => a & b,
        })
        .collect();
    ValidityMask::new(m_warp.height(), m_warp.width(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(values: &[f32]) -> TensorF32 {
        TensorF32::new(vec![1, values.len()], values.to_vec()).unwrap()
    }

    #[test]
    fn zero_disparity_is_identity() {
        let src = TensorF32::new(vec![2, 3, 2], (0..12).map(|v| v as f32).collect()).unwrap();
        let d = DisparityMap::constant(2, 3, 0.0).unwrap();
        let r = forward_warp(&src, &d).unwrap();
        assert_eq!(r.warped, src);
        assert_eq!(r.mask, ValidityMask::ones(2, 3));
    }

    #[test]
    fn collisions_follow_nearest_surface() {
        let d = DisparityMap::dense(1, 4, vec![0.0, 1.0, 1.0, 2.0]).unwrap();
        let r = forward_warp(&row(&[10.0, 20.0, 30.0, 40.0]), &d).unwrap();
        assert_eq!(r.warped.data(), &[20.0, 40.0, 0.0, 0.0]);
        assert_eq!(r.mask.data(), &[1, 1, 0, 0]);

        let d = DisparityMap::dense(1, 3, vec![0.0, 0.0, 0.6]).unwrap();
        let r = forward_warp(&row(&[1.0, 2.0, 3.0]), &d).unwrap();
        assert_eq!(r.warped.data(), &[1.0, 3.0, 0.0]);
        assert_eq!(r.mask.data(), &[1, 1, 0]);
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(target_column(2, 0.5, 4), Some(2)); // 1.5 -> 2
        assert_eq!(target_column(1, 1.5, 4), None); // -0.5 -> -1
        assert_eq!(target_column(3, 0.4, 4), Some(3));
        assert_eq!(target_column(0, 0.6, 4), None);
    }

    #[test]
    fn invalid_sources_do_not_splat() {
        let mask = ValidityMask::new(1, 3, vec![1, 0, 1]).unwrap();
        let d = DisparityMap::sparse(1, 3, vec![0.0, 0.0, 0.0], mask).unwrap();
        let r = forward_warp(&row(&[0.5, 0.6, 0.7]), &d).unwrap();
        assert_eq!(r.warped.data(), &[0.5, 0.0, 0.7]);
        assert_eq!(r.mask.data(), &[1, 0, 1]);
    }

    #[test]
    fn shape_mismatch() {
        let d = DisparityMap::constant(1, 3, 0.0).unwrap();
        assert!(matches!(forward_warp(&row(&[0.0; 4]), &d), Err(Error::Shape(_))));
    }

    #[test]
    fn dropout_extremes_and_concentration() {
        let mut r = rng::seeded(3);
        assert_eq!(dropout_with_ratio(8, 8, 0.0, &mut r).unwrap().mask, ValidityMask::ones(8, 8));
        assert_eq!(dropout_with_ratio(8, 8, 1.0, &mut r).unwrap().mask, ValidityMask::zeros(8, 8));
        let draw = dropout_with_ratio(256, 256, 0.3, &mut r).unwrap();
        assert!((draw.mask.mean() - 0.7).abs() < 0.02, "{}", draw.mask.mean());
        assert!(dropout_with_ratio(2, 2, 1.5, &mut r).is_err());
    }

    #[test]
    fn dropout_is_seeded() {
        let a = dropout_draw(16, 16, 99);
        let b = dropout_draw(16, 16, 99);
        assert_eq!(a, b);
        assert!((0.0..1.0).contains(&a.ratio));
        assert_ne!(dropout_draw(16, 16, 100).mask, a.mask);
    }

    #[test]
    fn mask_truth_table() {
        let w = ValidityMask::new(1, 2, vec![1, 0]).unwrap();
        let r = ValidityMask::new(1, 2, vec![0, 1]).unwrap();
        assert_eq!(combine_masks(&w, &r, CombineMode::Or).unwrap().data(), &[1, 1]);
        assert_eq!(combine_masks(&w, &r, CombineMode::And).unwrap().data(), &[0, 0]);
        let ones = ValidityMask::ones(1, 2);
        assert_eq!(combine_masks(&w, &ones, CombineMode::Or).unwrap(), ones);
        assert_eq!(combine_masks(&w, &ones, CombineMode::And).unwrap(), w);
        assert!(combine_masks(&w, &ValidityMask::ones(2, 1), CombineMode::Or).is_err());
    }

    proptest! {
        #[test]
        fn mask_ignores_channel_contents(
            w in 1usize..8,
            disp in proptest::collection::vec(0.0f32..6.0, 8),
            a in proptest::collection::vec(0.0f32..1.0, 16),
            b in proptest::collection::vec(0.0f32..1.0, 16),
        ) {
            let d = DisparityMap::dense(1, w, disp[..w].to_vec()).unwrap();
            let ra = forward_warp(&TensorF32::new(vec![1, w, 2], a[..2 * w].to_vec()).unwrap(), &d).unwrap();
            let rb = forward_warp(&TensorF32::new(vec![1, w, 2], b[..2 * w].to_vec()).unwrap(), &d).unwrap();
            prop_assert_eq!(ra.mask, rb.mask);
        }

        #[test]
        fn combine_bounds(bits_a in proptest::collection::vec(0u8..2, 12), bits_b in proptest::collection::vec(0u8..2, 12)) {
            let a = ValidityMask::new(3, 4, bits_a).unwrap();
            let b = ValidityMask::new(3, 4, bits_b).unwrap();
            let or = combine_masks(&a, &b, CombineMode::Or).unwrap();
            let and = combine_masks(&a, &b, CombineMode::And).unwrap();
            for k in 0..12 {
                prop_assert!(or.data()[k] >= a.data()[k]);
                prop_assert!(and.data()[k] <= a.data()[k]);
            }
        }
    }
}
