//! Single-head cross-view attention.
//!
//! Queries come from the target-view features; keys and values come from
//! the token-axis concatenation `[reference; target]`:
//!
//! ```text
//! q = F_r Wq,  k = [F_l; F_r] Wk,  v = [F_l; F_r] Wv
//! out = softmax(q k^T / sqrt(d)) v Wo
//! ```

use rayon::prelude::*;

use super::dot;
use super::feature::FeatureMap;
use crate::error::{Error, Result};

/// Query rows per parallel block. Fixed so reductions over blocks happen in
/// the same order regardless of thread count.
const ROW_BLOCK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub dim: usize,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads {
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
}

impl AttentionGrads {
    pub fn zeros(dim: usize) -> Self {
        Self {
            wq: vec![0.0; dim * dim],
            wk: vec![0.0; dim * dim],
            wv: vec![0.0; dim * dim],
            wo: vec![0.0; dim * dim],
        }
    }
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    /// `[F_l; F_r]`, `(n_l + n_r) x d`
    pub kv_input: Vec<f64>,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// Softmax weights, `n_r x (n_l + n_r)`
    pub probs: Vec<f64>,
    /// `probs * v`, before the output projection
    pub mixed: Vec<f64>,
    pub n_ref: usize,
    pub n_tgt: usize,
}

/// `rows x d` times `d x d`.
fn matmul(x: &[f64], w: &[f64], d: usize) -> Vec<f64> {
    let rows = x.len() / d;
    let mut out = vec![0.0; rows * d];
    out.par_chunks_mut(d * ROW_BLOCK)
        .zip(x.par_chunks(d * ROW_BLOCK))
        .for_each(|(o, xb)| {
            for (orow, xrow) in o.chunks_exact_mut(d).zip(xb.chunks_exact(d)) {
                for (i, &xv) in xrow.iter().enumerate() {
                    for (ov, wv) in orow.iter_mut().zip(&w[i * d..(i + 1) * d]) {
                        *ov += xv * wv;
                    }
                }
            }
        });
    out
}

/// `x * w^T` for the backward pass.
fn matmul_t(x: &[f64], w: &[f64], d: usize) -> Vec<f64> {
    let rows = x.len() / d;
    let mut out = vec![0.0; rows * d];
    out.par_chunks_mut(d * ROW_BLOCK)
        .zip(x.par_chunks(d * ROW_BLOCK))
        .for_each(|(o, xb)| {
            for (orow, xrow) in o.chunks_exact_mut(d).zip(xb.chunks_exact(d)) {
                for (i, ov) in orow.iter_mut().enumerate() {
                    *ov = dot(xrow, &w[i * d..(i + 1) * d]);
                }
            }
        });
    out
}

/// Accumulates `a^T b` (`d x d`) into `acc`, blockwise in fixed order.
fn accumulate_at_b(acc: &mut [f64], a: &[f64], b: &[f64], d: usize) {
    let partials: Vec<Vec<f64>> = a
        .par_chunks(d * ROW_BLOCK)
        .zip(b.par_chunks(d * ROW_BLOCK))
        .map(|(ab, bb)| {
            let mut part = vec![0.0; d * d];
            for (arow, brow) in ab.chunks_exact(d).zip(bb.chunks_exact(d)) {
                for (i, &av) in arow.iter().enumerate() {
                    for (p, bv) in part[i * d..(i + 1) * d].iter_mut().zip(brow) {
                        *p += av * bv;
                    }
                }
            }
            part
        })
        .collect();
    for part in partials {
        for (a, p) in acc.iter_mut().zip(part) {
            *a += p;
        }
    }
}

impl AttentionParams {
    pub fn identity(dim: usize) -> Self {
        let eye: Vec<f64> = (0..dim * dim)
            .map(|k| if k / dim == k % dim { 1.0 } else { 0.0 })
            .collect();
        Self {
            dim,
            wq: eye.clone(),
            wk: eye.clone(),
            wv: eye.clone(),
            wo: eye,
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            wq: vec![0.0; dim * dim],
            wk: vec![0.0; dim * dim],
            wv: vec![0.0; dim * dim],
            wo: vec![0.0; dim * dim],
        }
    }

    pub fn forward(&self, f_ref: &FeatureMap, f_tgt: &FeatureMap) -> Result<(FeatureMap, AttentionCache)> {
        let d = self.dim;
        if f_ref.channels != d || f_tgt.channels != d {
            return Err(Error::shape(format!(
                "attention dim {d}, features have {} and {} channels",
                f_ref.channels, f_tgt.channels
            )));
        }
        let (n_ref, n_tgt) = (f_ref.tokens(), f_tgt.tokens());
        let m = n_ref + n_tgt;
        let mut kv_input = Vec::with_capacity(m * d);
        kv_input.extend_from_slice(&f_ref.data);
        kv_input.extend_from_slice(&f_tgt.data);

        let q = matmul(&f_tgt.data, &self.wq, d);
        let k = matmul(&kv_input, &self.wk, d);
        let v = matmul(&kv_input, &self.wv, d);
        let scale = 1.0 / (d as f64).sqrt();

        let mut probs = vec![0.0; n_tgt * m];
        let mut mixed = vec![0.0; n_tgt * d];
        probs
            .par_chunks_mut(m * ROW_BLOCK)
            .zip(mixed.par_chunks_mut(d * ROW_BLOCK))
            .zip(q.par_chunks(d * ROW_BLOCK))
            .for_each(|((pb, mb), qb)| {
                for ((prow, mrow), qrow) in pb.chunks_exact_mut(m).zip(mb.chunks_exact_mut(d)).zip(qb.chunks_exact(d)) {
                    let mut max = f64::NEG_INFINITY;
                    for (p, krow) in prow.iter_mut().zip(k.chunks_exact(d)) {
                        *p = dot(qrow, krow) * scale;
                        max = max.max(*p);
                    }
                    let mut sum = 0.0;
                    for p in prow.iter_mut() {
                        *p = (*p - max).exp();
                        sum += *p;
                    }
                    for (p, vrow) in prow.iter_mut().zip(v.chunks_exact(d)) {
                        *p /= sum;
                        for (mv, vv) in mrow.iter_mut().zip(vrow) {
                            *mv += *p * vv;
                        }
                    }
                }
            });
        let out = matmul(&mixed, &self.wo, d);
        let cache = AttentionCache {
            kv_input,
            q,
            k,
            v,
            probs,
            mixed,
            n_ref,
            n_tgt,
        };
        Ok((FeatureMap::new(f_tgt.height, f_tgt.width, d, out)?, cache))
    }

    /// Returns `(d F_l, d F_r)` and accumulates projection gradients.
    pub fn backward(
        &self,
        cache: &AttentionCache,
        f_tgt: &FeatureMap,
        d_out: &FeatureMap,
        grads: &mut AttentionGrads,
    ) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim;
        let m = cache.n_ref + cache.n_tgt;
        let scale = 1.0 / (d as f64).sqrt();

        accumulate_at_b(&mut grads.wo, &cache.mixed, &d_out.data, d);
        let d_mixed = matmul_t(&d_out.data, &self.wo, d);

        // per query row: dP = dmixed v^T, dS = P (dP - <dP, P>), dq = dS k * scale
        let mut d_q = vec![0.0; cache.n_tgt * d];
        let mut d_scores = vec![0.0; cache.n_tgt * m];
        d_scores
            .par_chunks_mut(m * ROW_BLOCK)
            .zip(d_q.par_chunks_mut(d * ROW_BLOCK))
            .zip(cache.probs.par_chunks(m * ROW_BLOCK))
            .zip(d_mixed.par_chunks(d * ROW_BLOCK))
            .for_each(|(((sb, qb), pb), db)| {
                for (((srow, qrow), prow), drow) in sb
                    .chunks_exact_mut(m)
                    .zip(qb.chunks_exact_mut(d))
                    .zip(pb.chunks_exact(m))
                    .zip(db.chunks_exact(d))
                {
                    let mut pd = 0.0;
                    for (s, vrow) in srow.iter_mut().zip(cache.v.chunks_exact(d)) {
                        *s = dot(drow, vrow);
                    }
                    for (s, p) in srow.iter().zip(prow) {
                        pd += s * p;
                    }
                    for ((s, p), krow) in srow.iter_mut().zip(prow).zip(cache.k.chunks_exact(d)) {
                        *s = p * (*s - pd) * scale;
                        for (qv, kv) in qrow.iter_mut().zip(krow) {
                            *qv += *s * kv;
                        }
                    }
                }
            });

        // dk = dS^T q, dv = P^T dmixed; blockwise partial sums over query rows
        let partials: Vec<(Vec<f64>, Vec<f64>)> = d_scores
            .par_chunks(m * ROW_BLOCK)
            .zip(cache.probs.par_chunks(m * ROW_BLOCK))
            .zip(cache.q.par_chunks(d * ROW_BLOCK))
            .zip(d_mixed.par_chunks(d * ROW_BLOCK))
            .map(|(((sb, pb), qb), db)| {
                let mut dk = vec![0.0; m * d];
                let mut dv = vec![0.0; m * d];
                for (((srow, prow), qrow), drow) in sb
                    .chunks_exact(m)
                    .zip(pb.chunks_exact(m))
                    .zip(qb.chunks_exact(d))
                    .zip(db.chunks_exact(d))
                {
                    for j in 0..m {
                        let (s, p) = (srow[j], prow[j]);
                        let kj = &mut dk[j * d..(j + 1) * d];
                        for (a, qv) in kj.iter_mut().zip(qrow) {
                            *a += s * qv;
                        }
                        let vj = &mut dv[j * d..(j + 1) * d];
                        for (a, dm) in vj.iter_mut().zip(drow) {
                            *a += p * dm;
                        }
                    }
                }
                (dk, dv)
            })
            .collect();
        let mut d_k = vec![0.0; m * d];
        let mut d_v = vec![0.0; m * d];
        for (pk, pv) in partials {
            for (a, b) in d_k.iter_mut().zip(pk) {
                *a += b;
            }
            for (a, b) in d_v.iter_mut().zip(pv) {
                *a += b;
            }
        }

        accumulate_at_b(&mut grads.wq, &f_tgt.data, &d_q, d);
        accumulate_at_b(&mut grads.wk, &cache.kv_input, &d_k, d);
        accumulate_at_b(&mut grads.wv, &cache.kv_input, &d_v, d);

        let mut d_kv = matmul_t(&d_k, &self.wk, d);
        for (a, b) in d_kv.iter_mut().zip(matmul_t(&d_v, &self.wv, d)) {
            *a += b;
        }
        let mut d_tgt = matmul_t(&d_q, &self.wq, d);
        for (a, b) in d_tgt.iter_mut().zip(&d_kv[cache.n_ref * d..]) {
            *a += b;
        }
        d_kv.truncate(cache.n_ref * d);
        (d_kv, d_tgt)
    }
}

/// Cross-view attention output for target tokens `f_tgt` attending over
/// `[f_ref; f_tgt]`.
pub fn cross_view_attention(f_ref: &FeatureMap, f_tgt: &FeatureMap, p: &AttentionParams) -> Result<FeatureMap> {
    p.forward(f_ref, f_tgt).map(|(out, _)| out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn single_token_closed_form() {
        let (a, b) = (0.7f64, -1.3f64);
        let fl = FeatureMap::new(1, 1, 1, vec![a]).unwrap();
        let fr = FeatureMap::new(1, 1, 1, vec![b]).unwrap();
        let out = cross_view_attention(&fl, &fr, &AttentionParams::identity(1)).unwrap();
        let (sa, sb) = ((a * b).exp(), (b * b).exp());
        let expect = (sa * a + sb * b) / (sa + sb);
        assert!((out.data[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn constant_tokens_are_a_fixed_point() {
        let v0 = [0.3, -0.2, 0.9];
        let fl = FeatureMap::new(2, 2, 3, v0.repeat(4)).unwrap();
        let fr = FeatureMap::new(1, 3, 3, v0.repeat(3)).unwrap();
        let out = cross_view_attention(&fl, &fr, &AttentionParams::identity(3)).unwrap();
        assert_eq!((out.height, out.width), (1, 3));
        for tok in out.data.chunks(3) {
            for (x, y) in tok.iter().zip(v0) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rows_are_normalized() {
        let d = 4;
        let p = AttentionParams {
            dim: d,
            wq: lcg(16, 1),
            wk: lcg(16, 2),
            wv: lcg(16, 3),
            wo: lcg(16, 4),
        };
        let fl = FeatureMap::new(3, 5, d, lcg(60, 5)).unwrap();
        let fr = FeatureMap::new(2, 3, d, lcg(24, 6)).unwrap();
        let (_, cache) = p.forward(&fl, &fr).unwrap();
        for row in cache.probs.chunks(15 + 6) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(cross_view_attention(&fl, &FeatureMap::zeros(1, 1, 3), &p).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let d = 3;
        let mut p = AttentionParams {
            dim: d,
            wq: lcg(9, 11),
            wk: lcg(9, 12),
            wv: lcg(9, 13),
            wo: lcg(9, 14),
        };
        let fl = FeatureMap::new(2, 2, d, lcg(12, 15)).unwrap();
        let fr = FeatureMap::new(1, 3, d, lcg(9, 16)).unwrap();
        let target = lcg(9, 17);
        let loss = |p: &AttentionParams, fl: &FeatureMap, fr: &FeatureMap| -> f64 {
            let out = cross_view_attention(fl, fr, p).unwrap();
            out.data.iter().zip(&target).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = p.forward(&fl, &fr).unwrap();
        let mut g = AttentionGrads::zeros(d);
        let dout = FeatureMap::new(1, 3, d, target.clone()).unwrap();
        let (dfl, dfr) = p.backward(&cache, &fr, &dout, &mut g);
        let h = 1e-5;
        for k in 0..9 {
            let orig = p.wk[k];
            p.wk[k] = orig + h;
            let up = loss(&p, &fl, &fr);
            p.wk[k] = orig - h;
            let dn = loss(&p, &fl, &fr);
            p.wk[k] = orig;
            assert!(((up - dn) / (2.0 * h) - g.wk[k]).abs() < 1e-7);
        }
        for (k, &analytic) in dfl.iter().enumerate() {
            let mut a = fl.clone();
            a.data[k] += h;
            let mut b = fl.clone();
            b.data[k] -= h;
            assert!(((loss(&p, &a, &fr) - loss(&p, &b, &fr)) / (2.0 * h) - analytic).abs() < 1e-7);
        }
        for (k, &analytic) in dfr.iter().enumerate() {
            let mut a = fr.clone();
            a.data[k] += h;
            let mut b = fr.clone();
            b.data[k] -= h;
            assert!(((loss(&p, &fl, &a) - loss(&p, &fl, &b)) / (2.0 * h) - analytic).abs() < 1e-7);
        }
    }
}
