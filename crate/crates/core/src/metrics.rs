//! Generation metrics (PSNR, SSIM) and stereo metrics (EPE, D1, bad pixel).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DisparityMap, ImagePlane};
use crate::warp::CombineMode;

pub const PSNR_CAP: f64 = 99.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub count: usize,
    #[serde(default)]
    pub params: BTreeMap<String, serde_json::Value>,
}

impl MetricReport {
    pub fn new(metric: impl Into<String>, value: f64, count: usize) -> Self {
        Self {
            metric: metric.into(),
            value,
            count,
            params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }
}

fn same_dims(a: &ImagePlane, b: &ImagePlane) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::shape(format!(
            "image sizes differ: {}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )))
    }
}

pub fn mse(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    same_dims(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

pub fn psnr(a: &ImagePlane, b: &ImagePlane, peak: f64) -> Result<f64> {
    if peak.is_nan() || peak <= 0.0 {
        return Err(Error::invalid(format!("PSNR peak must be positive, got {peak}")));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / m).log10()).min(PSNR_CAP))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub peak: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            peak: 1.0,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.peak).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.peak).powi(2)
    }
}

/// Normalized 1-D Gaussian; the 2-D window is its outer product.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - center).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable filtering over every fully contained window.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all window positions that fit inside the image.
/// Color inputs are reduced to the channel mean first.
pub fn ssim(a: &ImagePlane, b: &ImagePlane, p: SsimParams) -> Result<f64> {
    same_dims(a, b)?;
    if p.window == 0 || p.sigma.is_nan() || p.sigma <= 0.0 || p.peak.is_nan() || p.peak <= 0.0 {
        return Err(Error::invalid("SSIM window, sigma and peak must be positive"));
    }
    let (h, w) = (a.height(), a.width());
    if h < p.window || w < p.window {
        return Err(Error::shape(format!(
            "image {h}x{w} is smaller than the {0}x{0} SSIM window",
            p.window
        )));
    }
    let (ga, gb) = (a.to_gray(), b.to_gray());
    let k = gaussian_kernel(p.window, p.sigma);
    let aa: Vec<f64> = ga.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = gb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = ga.iter().zip(&gb).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(&ga, h, w, &k);
    let mu_b = filter_valid(&gb, h, w, &k);
    let e_aa = filter_valid(&aa, h, w, &k);
    let e_bb = filter_valid(&bb, h, w, &k);
    let e_ab = filter_valid(&ab, h, w, &k);
    let (c1, c2) = (p.c1(), p.c2());
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

/// Absolute errors at pixels where the ground truth is valid.
fn valid_errors(pred: &DisparityMap, gt: &DisparityMap) -> Result<Vec<(f64, f64)>> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::shape(format!(
            "disparity sizes differ: {}x{} vs {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let errs: Vec<(f64, f64)> = pred
        .values()
        .iter()
        .zip(gt.values())
        .zip(gt.valid().data())
        .filter(|(_, &v)| v == 1)
        .map(|((&p, &g), _)| ((p as f64 - g as f64).abs(), g as f64))
        .collect();
    if errs.is_empty() {
        return Err(Error::Degenerate("ground truth has no valid pixels".into()));
    }
    Ok(errs)
}

pub fn epe(pred: &DisparityMap, gt: &DisparityMap) -> Result<f64> {
    let errs = valid_errors(pred, gt)?;
    Ok(errs.iter().map(|e| e.0).sum::<f64>() / errs.len() as f64)
}

pub const D1_ABS_PX: f64 = 3.0;
pub const D1_REL: f64 = 0.05;

/// Percentage of valid pixels whose error exceeds 3 px and/or 5% of the
/// true disparity.
pub fn d1_all(pred: &DisparityMap, gt: &DisparityMap, mode: CombineMode) -> Result<f64> {
    let errs = valid_errors(pred, gt)?;
    let bad = errs
        .iter()
        .filter(|&&(e, g)| {
            let (abs, rel) = (e > D1_ABS_PX, e > D1_REL * g);
            match mode {
                CombineMode::And => abs && rel,
                CombineMode::Or => abs || rel,
            }
        })
        .count();
    Ok(100.0 * bad as f64 / errs.len() as f64)
}

pub fn bad_pixel(pred: &DisparityMap, gt: &DisparityMap, n: f64) -> Result<f64> {
    let errs = valid_errors(pred, gt)?;
    let bad = errs.iter().filter(|e| e.0 > n).count();
    Ok(100.0 * bad as f64 / errs.len() as f64)
}

/// Reads externally computed LPIPS values: either a JSON array of numbers or
/// an object mapping sample names to numbers.
pub fn ingest_lpips(path: &Path) -> Result<Vec<MetricReport>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let entries: Vec<(Option<String>, &serde_json::Value)> = match &value {
        serde_json::Value::Array(items) => items.iter().map(|v| (None, v)).collect(),
        serde_json::Value::Object(map) => map.iter().map(|(k, v)| (Some(k.clone()), v)).collect(),
        _ => return Err(Error::Format("LPIPS report must be an array or object".into())),
    };
    entries
        .into_iter()
        .map(|(name, v)| {
            let x = v
                .as_f64()
                .ok_or_else(|| Error::Format(format!("non-numeric LPIPS value {v}")))?;
            let r = MetricReport::new("lpips", x, 1).with_param("source", "external");
            Ok(match name {
                Some(n) => r.with_param("sample", n),
                None => r,
            })
        })
        .collect()
}
