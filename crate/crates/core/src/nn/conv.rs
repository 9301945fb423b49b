use super::feature::FeatureMap;
use crate::error::{Error, Result};

/// 3x3 convolution with zero padding and stride 1.
///
/// The kernel is stored as `[ky][kx][in][out]` so the innermost loops run
/// over output channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3 {
    pub in_ch: usize,
    pub out_ch: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvGrads {
    pub fn zeros_like(conv: &Conv3x3) -> Self {
        Self {
            weight: vec![0.0; conv.weight.len()],
            bias: vec![0.0; conv.bias.len()],
        }
    }
}

/// Visits `(output index, input index, tap)` for every in-bounds tap.
#[inline]
fn for_each_tap(h: usize, w: usize, mut f: impl FnMut(usize, usize, usize)) {
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            for ky in 0..3 {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let sx = x as isize + kx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    f(p, sy as usize * w + sx as usize, ky * 3 + kx);
                }
            }
        }
    }
}

impl Conv3x3 {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            weight: vec![0.0; 9 * in_ch * out_ch],
            bias: vec![0.0; out_ch],
        }
    }

    pub fn new(in_ch: usize, out_ch: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != 9 * in_ch * out_ch || bias.len() != out_ch {
            return Err(Error::shape(format!(
                "conv {in_ch}->{out_ch}: {} weights, {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Self {
            in_ch,
            out_ch,
            weight,
            bias,
        })
    }

    #[inline]
    pub fn weight_at(&self, ky: usize, kx: usize, i: usize, o: usize) -> f64 {
        self.weight[((ky * 3 + kx) * self.in_ch + i) * self.out_ch + o]
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        if x.channels != self.in_ch {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                self.in_ch, x.channels
            )));
        }
        let (ci, co) = (self.in_ch, self.out_ch);
        let mut out = FeatureMap::zeros(x.height, x.width, co);
        for p in 0..x.tokens() {
            out.data[p * co..(p + 1) * co].copy_from_slice(&self.bias);
        }
        for_each_tap(x.height, x.width, |p, q, tap| {
            let src = &x.data[q * ci..(q + 1) * ci];
            let dst = &mut out.data[p * co..(p + 1) * co];
            let kern = &self.weight[tap * ci * co..(tap + 1) * ci * co];
            for (i, &xv) in src.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let row = &kern[i * co..(i + 1) * co];
                for (d, &k) in dst.iter_mut().zip(row) {
                    *d += xv * k;
                }
            }
        });
        Ok(out)
    }

    /// Accumulates parameter gradients into `grads` and returns the input
    /// gradient when `need_input` is set.
    pub fn backward(
        &self,
        x: &FeatureMap,
        d_out: &FeatureMap,
        grads: &mut ConvGrads,
        need_input: bool,
    ) -> Option<FeatureMap> {
        let (ci, co) = (self.in_ch, self.out_ch);
        for p in 0..d_out.tokens() {
            for (g, &d) in grads.bias.iter_mut().zip(&d_out.data[p * co..(p + 1) * co]) {
                *g += d;
            }
        }
        let mut dx = need_input.then(|| FeatureMap::zeros(x.height, x.width, ci));
        for_each_tap(x.height, x.width, |p, q, tap| {
            let dy = &d_out.data[p * co..(p + 1) * co];
            let base = tap * ci * co;
            for i in 0..ci {
                let xv = x.data[q * ci + i];
                let krow = base + i * co;
                let gw = &mut grads.weight[krow..krow + co];
                for (g, &d) in gw.iter_mut().zip(dy) {
                    *g += xv * d;
                }
                if let Some(dx) = dx.as_mut() {
                    let kern = &self.weight[krow..krow + co];
                    dx.data[q * ci + i] += super::dot(kern, dy);
                }
            }
        });
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct convolution with explicit zero padding.
    fn naive(conv: &Conv3x3, x: &FeatureMap) -> FeatureMap {
        let (h, w) = (x.height, x.width);
        let mut out = FeatureMap::zeros(h, w, conv.out_ch);
        for y in 0..h {
            for xx in 0..w {
                for o in 0..conv.out_ch {
                    let mut acc = conv.bias[o];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let sy = y as isize + ky as isize - 1;
                            let sx = xx as isize + kx as isize - 1;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            for i in 0..conv.in_ch {
                                acc += conv.weight_at(ky, kx, i, o)
                                    * x.data[(sy as usize * w + sx as usize) * conv.in_ch + i];
                            }
                        }
                    }
                    out.data[(y * w + xx) * conv.out_ch + o] = acc;
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        (0..n)
            .map(|i| ((((i as u64 + 1) * 2654435761) ^ seed) % 1000) as f64 / 500.0 - 1.0)
            .collect()
    }

    #[test]
    fn matches_naive_convolution() {
        let conv = Conv3x3::new(3, 2, pseudo(54, 1), pseudo(2, 2)).unwrap();
        let x = FeatureMap::new(4, 5, 3, pseudo(60, 3)).unwrap();
        let a = conv.forward(&x).unwrap();
        let b = naive(&conv, &x);
        for (u, v) in a.data.iter().zip(&b.data) {
            assert!((u - v).abs() < 1e-12);
        }
        assert!(conv.forward(&FeatureMap::zeros(2, 2, 2)).is_err());
    }

    #[test]
    fn backward_is_adjoint() {
        // without bias the conv is linear in x and in w separately, so
        // <conv(x), dy> = <x, dx> = <w, dw>
        let conv = Conv3x3::new(2, 3, pseudo(54, 5), vec![0.0; 3]).unwrap();
        let x = FeatureMap::new(3, 4, 2, pseudo(24, 6)).unwrap();
        let dy = FeatureMap::new(3, 4, 3, pseudo(36, 7)).unwrap();
        let y = conv.forward(&x).unwrap();
        let mut g = ConvGrads::zeros_like(&conv);
        let dx = conv.backward(&x, &dy, &mut g, true).unwrap();
        let lhs: f64 = y.data.iter().zip(&dy.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&dx.data).map(|(a, b)| a * b).sum();
        let rhs_w: f64 = conv.weight.iter().zip(&g.weight).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        assert!((lhs - rhs_w).abs() < 1e-10);
    }
}
