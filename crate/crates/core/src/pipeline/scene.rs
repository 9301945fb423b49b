//! Layered synthetic stereo scenes with analytically rendered right views.

use std::f64::consts::TAU;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{DisparityMap, ImagePlane};
use crate::rng;

/// Fronto-parallel textured rectangle in left-view pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layer {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
    pub disparity: usize,
    pub tint: [f64; 3],
}

impl Layer {
    fn contains(&self, y: usize, x: f64) -> bool {
        y >= self.top
            && y < self.top + self.height
            && x >= self.left as f64
            && x < (self.left + self.width) as f64
    }

    fn color(&self, y: usize, x: f64) -> [f64; 3] {
        let ly = (y - self.top) as f64 / self.height as f64;
        let lx = (x - self.left as f64) / self.width as f64;
        let wave = 0.08 * (TAU * ly * 2.0).sin();
        [
            (self.tint[0] + 0.2 * lx + wave).clamp(0.0, 1.0),
            (self.tint[1] + 0.2 * ly).clamp(0.0, 1.0),
            (self.tint[2] - 0.15 * lx - wave).clamp(0.0, 1.0),
        ]
    }
}

/// Textured gradient background plus non-overlapping rectangles, each at a
/// constant integer disparity.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub size: usize,
    pub background_disparity: usize,
    pub layers: Vec<Layer>,
}

/// Rendered stereo pair and the left-view disparity.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoPair {
    pub left: ImagePlane,
    pub right: ImagePlane,
    pub disparity: DisparityMap,
}

fn background(size: usize, y: usize, x: f64) -> [f64; 3] {
    let (u, v) = (x / size as f64, y as f64 / size as f64);
    [
        0.2 + 0.5 * u + 0.06 * (TAU * v * 3.0).sin(),
        0.25 + 0.45 * v,
        0.65 - 0.35 * u + 0.06 * (TAU * u * 2.5).cos(),
    ]
}

impl Scene {
    /// Disparities `size/32` (background), `3 size/32` and `5 size/32`.
    pub fn two_rectangles(size: usize) -> Result<Self> {
        if size < 32 || !size.is_multiple_of(32) {
            return Err(Error::invalid(format!("scene size {size} must be a multiple of 32")));
        }
        let u = size / 32;
        Ok(Self {
            size,
            background_disparity: u,
            layers: vec![
                Layer {
                    top: 6 * u,
                    left: 7 * u,
                    height: 8 * u,
                    width: 8 * u,
                    disparity: 3 * u,
                    tint: [0.75, 0.2, 0.25],
                },
                Layer {
                    top: 18 * u,
                    left: 18 * u,
                    height: 9 * u,
                    width: 9 * u,
                    disparity: 5 * u,
                    tint: [0.15, 0.35, 0.85],
                },
            ],
        })
    }

    /// Same structure with jittered placement and colors.
    pub fn random(size: usize, seed: u64) -> Result<Self> {
        let mut s = Self::two_rectangles(size)?;
        let mut r = rng::seeded(seed);
        let u = size / 32;
        let jitter = 2 * u;
        for layer in &mut s.layers {
            layer.top = layer.top + r.random_range(0..=jitter) - u;
            layer.left = layer.left + r.random_range(0..=jitter) - u;
            for t in &mut layer.tint {
                *t = (*t + r.random_range(-0.1..0.1)).clamp(0.05, 0.95);
            }
        }
        Ok(s)
    }

    /// Layer index visible at left-view column `x` of row `y`, nearest first.
    fn visible(&self, y: usize, x: f64) -> Option<&Layer> {
        self.layers
            .iter()
            .filter(|l| l.contains(y, x))
            .max_by_key(|l| l.disparity)
    }

    pub fn render(&self) -> Result<StereoPair> {
        let n = self.size;
        let mut left = Vec::with_capacity(n * n * 3);
        let mut right = Vec::with_capacity(n * n * 3);
        let mut disp = Vec::with_capacity(n * n);
        for y in 0..n {
            for x in 0..n {
                let xf = x as f64;
                let (c, d) = match self.visible(y, xf) {
                    Some(l) => (l.color(y, xf), l.disparity),
                    None => (background(n, y, xf), self.background_disparity),
                };
                left.extend(c.iter().map(|&v| v as f32));
                disp.push(d as f32);
            }
            for x in 0..n {
                // a right-view pixel shows the nearest surface whose left
                // coordinate maps onto it
                let hit = self
                    .layers
                    .iter()
                    .filter(|l| l.contains(y, (x + l.disparity) as f64))
                    .max_by_key(|l| l.disparity);
                let c = match hit {
                    Some(l) => l.color(y, (x + l.disparity) as f64),
                    None => background(n, y, (x + self.background_disparity) as f64),
                };
                right.extend(c.iter().map(|&v| v as f32));
            }
        }
        Ok(StereoPair {
            left: ImagePlane::from_clamped(n, n, 3, left)?,
            right: ImagePlane::from_clamped(n, n, 3, right)?,
            disparity: DisparityMap::dense(n, n, disp)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warp::warp_image;

    #[test]
    fn warp_is_exact_on_visible_pixels() {
        for scene in [Scene::two_rectangles(64).unwrap(), Scene::random(64, 3).unwrap()] {
            let pair = scene.render().unwrap();
            let (warped, mask) = warp_image(&pair.left, &pair.disparity).unwrap();
            let holes = mask.data().iter().filter(|&&m| m == 0).count();
            assert!(holes > 0);
            for y in 0..64 {
                for x in 0..64 {
                    if mask.get(y, x) {
                        for c in 0..3 {
                            assert_eq!(warped.get(y, x, c), pair.right.get(y, x, c), "({y},{x})");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn disparities_and_holes() {
        let pair = Scene::two_rectangles(64).unwrap().render().unwrap();
        let mut values: Vec<f32> = pair.disparity.values().to_vec();
        values.sort_by(f32::total_cmp);
        values.dedup();
        assert_eq!(values, vec![2.0, 6.0, 10.0]);
        let (_, mask) = warp_image(&pair.left, &pair.disparity).unwrap();
        // right border strip plus the disocclusions beside each rectangle
        assert_eq!(mask.data().len() - mask.count(), 2 * 64 + 4 * 16 + 8 * 18);
        assert!(Scene::two_rectangles(48).is_err());
    }
}
