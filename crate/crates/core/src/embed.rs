//! Canonical coordinate grids and their Fourier positional encoding.
//!
//! Channel layout of an encoding with `F` frequencies: the `x` block
//! `[sin_0, cos_0, sin_1, cos_1, .., cos_{F-1}]` followed by the same block
//! for `y`, where `sin_k = sin(2^k * pi * u)`. With raw coordinates enabled
//! the two channels `[x, y]` are appended after the Fourier blocks.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::TensorF32;

pub const DEFAULT_FREQUENCIES: usize = 4;

/// Two-channel `(x, y)` coordinate map.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordGrid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl CoordGrid {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn x(&self, row: usize, col: usize) -> f64 {
        self.data[(row * self.width + col) * 2]
    }

    #[inline]
    pub fn y(&self, row: usize, col: usize) -> f64 {
        self.data[(row * self.width + col) * 2 + 1]
    }

    pub fn flip_horizontal(&self) -> CoordGrid {
        let mut data = Vec::with_capacity(self.data.len());
        for r in 0..self.height {
            for c in (0..self.width).rev() {
                data.push(self.x(r, c));
                data.push(self.y(r, c));
            }
        }
        CoordGrid { data, ..*self }
    }
}

/// Grid with `x = 2j/(w-1) - 1` along columns and `y = 2i/(h-1) - 1` along rows.
pub fn canonical_grid(height: usize, width: usize) -> Result<CoordGrid> {
    if height < 2 || width < 2 {
        return Err(Error::invalid(format!(
            "coordinate grid needs at least 2x2, got {height}x{width}"
        )));
    }
    let mut data = Vec::with_capacity(height * width * 2);
    for i in 0..height {
        let y = 2.0 * i as f64 / (height - 1) as f64 - 1.0;
        for j in 0..width {
            data.push(2.0 * j as f64 / (width - 1) as f64 - 1.0);
            data.push(y);
        }
    }
    Ok(CoordGrid {
        height,
        width,
        data,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodingConfig {
    pub frequencies: usize,
    pub include_raw: bool,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            frequencies: DEFAULT_FREQUENCIES,
            include_raw: false,
        }
    }
}

impl EncodingConfig {
    pub fn channels(&self) -> usize {
        4 * self.frequencies + if self.include_raw { 2 } else { 0 }
    }
}

/// `h x w x channels` positional encoding, values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierEmbedding {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FourierEmbedding {
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

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let at = (row * self.width + col) * self.channels;
        &self.data[at..at + self.channels]
    }

    pub fn to_tensor(&self) -> TensorF32 {
        TensorF32::new(vec![self.height, self.width, self.channels], self.data.clone())
            .expect("embedding values are finite")
    }

    pub fn from_tensor(t: &TensorF32) -> Result<Self> {
        match *t.dims() {
            [h, w, c] => {
                if t.data().iter().any(|v| v.abs() > 1.0) {
                    return Err(Error::invalid("embedding values must lie in [-1,1]"));
                }
                Ok(Self {
                    height: h,
                    width: w,
                    channels: c,
                    data: t.data().to_vec(),
                })
            }
            ref d => Err(Error::shape(format!("embedding tensor needs [h,w,c], got {d:?}"))),
        }
    }

    pub fn flip_horizontal(&self) -> FourierEmbedding {
        let mut data = Vec::with_capacity(self.data.len());
        for r in 0..self.height {
            for c in (0..self.width).rev() {
                data.extend_from_slice(self.pixel(r, c));
            }
        }
        FourierEmbedding { data, ..*self }
    }
}

fn push_block(out: &mut Vec<f32>, u: f64, frequencies: usize) {
    let mut scale = PI;
    for _ in 0..frequencies {
        let (s, c) = (scale * u).sin_cos();
        out.push(s as f32);
        out.push(c as f32);
        scale *= 2.0;
    }
}

pub fn fourier_encode(grid: &CoordGrid, cfg: EncodingConfig) -> Result<FourierEmbedding> {
    if cfg.frequencies == 0 {
        return Err(Error::invalid("Fourier encoding needs at least one frequency"));
    }
    let channels = cfg.channels();
    let mut data = Vec::with_capacity(grid.height * grid.width * channels);
    for r in 0..grid.height {
        for c in 0..grid.width {
            let (x, y) = (grid.x(r, c), grid.y(r, c));
            push_block(&mut data, x, cfg.frequencies);
            push_block(&mut data, y, cfg.frequencies);
            if cfg.include_raw {
                data.push(x.clamp(-1.0, 1.0) as f32);
                data.push(y.clamp(-1.0, 1.0) as f32);
            }
        }
    }
    Ok(FourierEmbedding {
        height: grid.height,
        width: grid.width,
        channels,
        data,
    })
}

/// Canonical grid followed by its encoding.
pub fn canonical_embedding(height: usize, width: usize, cfg: EncodingConfig) -> Result<FourierEmbedding> {
    fourier_encode(&canonical_grid(height, width)?, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn f(k: usize) -> EncodingConfig {
        EncodingConfig {
            frequencies: k,
            include_raw: false,
        }
    }

    #[test]
    fn grid_endpoints() {
        let g = canonical_grid(2, 3).unwrap();
        assert_eq!([g.x(0, 0), g.x(0, 1), g.x(0, 2)], [-1.0, 0.0, 1.0]);
        assert_eq!([g.y(0, 0), g.y(1, 0)], [-1.0, 1.0]);
        assert!(canonical_grid(1, 5).is_err());
        assert!(canonical_grid(5, 1).is_err());
    }

    #[test]
    fn flipped_grid_negates_x() {
        let g = canonical_grid(3, 5).unwrap();
        let flipped = g.flip_horizontal();
        for r in 0..3 {
            for c in 0..5 {
                assert_eq!(flipped.x(r, c), -g.x(r, c));
                assert_eq!(flipped.y(r, c), g.y(r, c));
            }
        }
    }

    #[test]
    fn analytic_values() {
        let e = canonical_embedding(3, 5, f(3)).unwrap();
        assert_eq!(e.channels(), 12);
        // center pixel: u = 0 for both coordinates
        for (k, v) in e.pixel(1, 2).iter().enumerate() {
            assert_eq!(*v, if k % 2 == 0 { 0.0 } else { 1.0 });
        }
        // right edge x = 1, k = 0
        let px = e.pixel(0, 4);
        assert!(px[0].abs() < 1e-6);
        assert!((px[1] + 1.0).abs() < 1e-6);
        // x = 0.5 at k = 1: direct evaluation of 2 * pi * 0.5
        let px = e.pixel(0, 3);
        let arg = 2.0f64 * PI * 0.5;
        assert!((px[2] as f64 - arg.sin()).abs() < 1e-6 && px[2].abs() < 1e-6);
        assert!((px[3] as f64 - arg.cos()).abs() < 1e-6 && (px[3] + 1.0).abs() < 1e-6);
        assert!(fourier_encode(&canonical_grid(2, 2).unwrap(), f(0)).is_err());
    }

    #[test]
    fn raw_channels_appended() {
        let cfg = EncodingConfig {
            frequencies: 2,
            include_raw: true,
        };
        let e = canonical_embedding(2, 3, cfg).unwrap();
        assert_eq!(e.channels(), 10);
        assert_eq!(&e.pixel(1, 0)[8..], &[-1.0, 1.0]);
    }

    /// Pixels whose coordinates coincide modulo the period-2 aliasing of the
    /// lowest frequency (u = -1 and u = 1 encode identically).
    fn aliased(a: f64, b: f64) -> bool {
        a == b || (a.abs() == 1.0 && b.abs() == 1.0)
    }

    fn max_diff(a: &[f32], b: &[f32]) -> f32 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
    }

    #[test]
    fn injective_up_to_endpoint_aliasing() {
        for frequencies in 1..=3usize {
            let limit = (1usize << frequencies) + 1;
            for h in 2..=limit {
                for w in 2..=limit {
                    let g = canonical_grid(h, w).unwrap();
                    let plain = fourier_encode(&g, f(frequencies)).unwrap();
                    let raw = fourier_encode(
                        &g,
                        EncodingConfig {
                            frequencies,
                            include_raw: true,
                        },
                    )
                    .unwrap();
                    let pixels: Vec<(usize, usize)> =
                        (0..h).flat_map(|r| (0..w).map(move |c| (r, c))).collect();
                    for (i, &(r1, c1)) in pixels.iter().enumerate() {
                        for &(r2, c2) in &pixels[i + 1..] {
                            let same = max_diff(plain.pixel(r1, c1), plain.pixel(r2, c2)) < 1e-6;
                            let expect = aliased(g.x(r1, c1), g.x(r2, c2))
                                && aliased(g.y(r1, c1), g.y(r2, c2));
                            assert_eq!(same, expect, "F={frequencies} {h}x{w} ({r1},{c1}) ({r2},{c2})");
                            assert!(max_diff(raw.pixel(r1, c1), raw.pixel(r2, c2)) > 1e-3);
                        }
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn unit_circle_and_range(h in 2usize..12, w in 2usize..12, k in 1usize..6) {
            let e = canonical_embedding(h, w, f(k)).unwrap();
            prop_assert_eq!(e.channels(), 4 * k);
            for px in e.data().chunks_exact(2) {
                prop_assert!(px[0].abs() <= 1.0 && px[1].abs() <= 1.0);
                let norm = (px[0] as f64).powi(2) + (px[1] as f64).powi(2);
                prop_assert!((norm - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn encoding_commutes_with_flip(h in 2usize..10, w in 2usize..10, k in 1usize..5) {
            let g = canonical_grid(h, w).unwrap();
            let a = fourier_encode(&g.flip_horizontal(), f(k)).unwrap();
            let b = fourier_encode(&g, f(k)).unwrap().flip_horizontal();
            prop_assert_eq!(a, b);
        }
    }
}
