use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{io, DisparityMap, ImagePlane};
use crate::metrics::{bad_pixel, d1_all, epe, psnr, ssim, MetricReport, SsimParams};
use crate::warp::CombineMode;

pub const BAD_PIXEL_THRESHOLDS: [f64; 3] = [1.0, 2.0, 3.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub name: String,
    pub metrics: Vec<MetricReport>,
}

/// Mean over pairs, with the min and max as offsets from the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub metric: String,
    pub mean: f64,
    pub min_offset: f64,
    pub max_offset: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pairs: Vec<PairReport>,
    pub aggregate: Vec<Aggregate>,
}

impl EvalReport {
    pub fn aggregate_of(&self, metric: &str) -> Option<&Aggregate> {
        self.aggregate.iter().find(|a| a.metric == metric)
    }

    /// Merges per-pair scores computed elsewhere. Named scores (a `sample`
    /// param) attach to the pair of that name, unnamed ones attach in order.
    pub fn add_external(&mut self, reports: Vec<MetricReport>) -> Result<()> {
        let named = reports.iter().all(|r| r.params.contains_key("sample"));
        if !named && reports.len() != self.pairs.len() {
            return Err(Error::invalid(format!(
                "{} external scores for {} pairs",
                reports.len(),
                self.pairs.len()
            )));
        }
        for (i, r) in reports.into_iter().enumerate() {
            let idx = match r.params.get("sample").and_then(|v| v.as_str()) {
                Some(name) => self
                    .pairs
                    .iter()
                    .position(|p| p.name == name)
                    .ok_or_else(|| Error::invalid(format!("external score for unknown pair {name}")))?,
                None => i,
            };
            self.pairs[idx].metrics.push(r);
        }
        self.aggregate = aggregate(&self.pairs);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

fn aggregate(pairs: &[PairReport]) -> Vec<Aggregate> {
    let mut names: Vec<&str> = Vec::new();
    for m in pairs.iter().flat_map(|p| &p.metrics) {
        if !names.contains(&m.metric.as_str()) {
            names.push(&m.metric);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let values: Vec<f64> = pairs
                .iter()
                .flat_map(|p| p.metrics.iter().filter(|m| m.metric == name).map(|m| m.value))
                .collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Aggregate {
                metric: name.to_string(),
                mean,
                min_offset: min - mean,
                max_offset: max - mean,
                pairs: values.len(),
            }
        })
        .collect()
}

pub fn eval_generation(pairs: &[(String, ImagePlane, ImagePlane)]) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("no image pairs to evaluate"));
    }
    let reports = pairs
        .par_iter()
        .map(|(name, gen, reference)| {
            let n = gen.height() * gen.width();
            let params = SsimParams::default();
            let tag = |e: Error| Error::InvalidArgument(format!("{name}: {e}"));
            Ok(PairReport {
                name: name.clone(),
                metrics: vec![
                    MetricReport::new("psnr", psnr(gen, reference, 1.0).map_err(tag)?, n).with_param("peak", 1.0),
                    MetricReport::new("ssim", ssim(gen, reference, params).map_err(tag)?, n)
                        .with_param("window", params.window)
                        .with_param("sigma", params.sigma),
                ],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        aggregate: aggregate(&reports),
        pairs: reports,
    })
}

pub fn eval_stereo(pairs: &[(String, DisparityMap, DisparityMap)], mode: CombineMode) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("no disparity pairs to evaluate"));
    }
    let mode_name = match mode {
        CombineMode::And => "and",
        CombineMode::Or => "or",
    };
    let reports = pairs
        .par_iter()
        .map(|(name, pred, gt)| {
            let n = gt.valid_count();
            let tag = |e: Error| Error::InvalidArgument(format!("{name}: {e}"));
            let mut metrics = vec![
                MetricReport::new("epe", epe(pred, gt).map_err(tag)?, n),
                MetricReport::new("d1_all", d1_all(pred, gt, mode).map_err(tag)?, n)
                    .with_param("mode", mode_name)
                    .with_param("abs_px", crate::metrics::D1_ABS_PX)
                    .with_param("rel", crate::metrics::D1_REL),
            ];
            for t in BAD_PIXEL_THRESHOLDS {
                metrics.push(
                    MetricReport::new(format!("bad_{t}"), bad_pixel(pred, gt, t).map_err(tag)?, n)
                        .with_param("threshold_px", t),
                );
            }
            Ok(PairReport {
                name: name.clone(),
                metrics,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        aggregate: aggregate(&reports),
        pairs: reports,
    })
}

/// Files in `a` with a same-named counterpart in `b`, sorted.
pub fn matched_files(a: &Path, b: &Path, exts: &[&str]) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(a).map_err(|e| Error::io(a, e))? {
        let path = entry.map_err(|e| Error::io(a, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if !path.is_file() || !exts.contains(&ext) {
            continue;
        }
        let name = path.file_name().expect("file has a name").to_string_lossy().into_owned();
        let other = b.join(&name);
        if !other.exists() {
            return Err(Error::invalid(format!("{} has no counterpart in {}", name, b.display())));
        }
        out.push((name, path, other));
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::invalid(format!("no files to evaluate in {}", a.display())));
    }
    Ok(out)
}

pub fn eval_generation_dirs(pred: &Path, reference: &Path) -> Result<EvalReport> {
    let pairs = matched_files(pred, reference, &["png"])?
        .into_iter()
        .map(|(name, p, r)| Ok((name, io::read_png(&p)?, io::read_png(&r)?)))
        .collect::<Result<Vec<_>>>()?;
    eval_generation(&pairs)
}

pub fn eval_stereo_dirs(pred: &Path, gt: &Path, mode: CombineMode) -> Result<EvalReport> {
    let pairs = matched_files(pred, gt, &["pfm", "png"])?
        .into_iter()
        .map(|(name, p, g)| Ok((name, io::read_disparity(&p)?, io::read_disparity(&g)?)))
        .collect::<Result<Vec<_>>>()?;
    eval_stereo(&pairs, mode)
}
