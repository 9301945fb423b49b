//! Directory-backed datasets and synthetic corpus building.
//!
//! Layout: `<root>/left/<id>.png`, `<root>/right/<id>.png` (optional) and
//! `<root>/disp/<id>.pfm` or `<id>.png` (16-bit, value / 256 px).

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StageExt};
use crate::fusion::FusionParams;
use crate::grid::{io, DisparityMap, ImagePlane};
use crate::nn::DenoiserParams;
use crate::rng;
use crate::warp::warp_image;

use super::config::{GenConfig, PipelineConfig};
use super::generate::{generate_with_disparity, mask_image, scale_disparity};
use super::plan::{resample_plan, SamplePlan};
use super::sample::{crop_and_resize, crop_and_resize_disparity, CropWindow};
use super::scene::Scene;

pub const LEFT_DIR: &str = "left";
pub const RIGHT_DIR: &str = "right";
pub const DISP_DIR: &str = "disp";
pub const MASK_DIR: &str = "mask";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub root: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StereoSample {
    pub id: String,
    pub left: ImagePlane,
    pub right: Option<ImagePlane>,
    pub disparity: DisparityMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub samples: Vec<StereoSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn sorted_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn find_disparity(dir: &Path, id: &str) -> Option<PathBuf> {
    ["pfm", "png"]
        .iter()
        .map(|ext| dir.join(format!("{id}.{ext}")))
        .find(|p| p.exists())
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    let left_dir = spec.root.join(LEFT_DIR);
    let right_dir = spec.root.join(RIGHT_DIR);
    let disp_dir = spec.root.join(DISP_DIR);
    let mut samples = Vec::new();
    for path in sorted_files(&left_dir)? {
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let id = stem(&path);
        let disp_path = find_disparity(&disp_dir, &id)
            .ok_or_else(|| Error::Format(format!("no disparity for sample {id} in {}", disp_dir.display())))?;
        let right_path = right_dir.join(format!("{id}.png"));
        let left = io::read_png(&path)?.to_rgb();
        let disparity = io::read_disparity(&disp_path)?;
        if disparity.height() != left.height() || disparity.width() != left.width() {
            return Err(Error::shape(format!("sample {id}: disparity size differs from image")));
        }
        let right = if right_path.exists() {
            let r = io::read_png(&right_path)?.to_rgb();
            if !r.same_shape(&left) {
                return Err(Error::shape(format!("sample {id}: right view size differs")));
            }
            Some(r)
        } else {
            None
        };
        samples.push(StereoSample {
            id,
            left,
            right,
            disparity,
        });
    }
    if samples.is_empty() {
        return Err(Error::invalid(format!("dataset {} has no samples", spec.name)));
    }
    Ok(Dataset {
        name: spec.name.clone(),
        samples,
    })
}

/// A directory with `left/` is one dataset; otherwise every subdirectory
/// with `left/` is.
pub fn discover_datasets(root: &Path) -> Result<Vec<DatasetSpec>> {
    let name_of = |p: &Path| p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "data".into());
    if root.join(LEFT_DIR).is_dir() {
        return Ok(vec![DatasetSpec {
            name: name_of(root),
            root: root.to_path_buf(),
        }]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(LEFT_DIR).is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::invalid(format!("no datasets under {}", root.display())));
    }
    Ok(dirs
        .into_iter()
        .map(|d| DatasetSpec {
            name: name_of(&d),
            root: d,
        })
        .collect())
}

pub fn write_sample(root: &Path, s: &StereoSample) -> Result<()> {
    for sub in [LEFT_DIR, RIGHT_DIR, DISP_DIR] {
        std::fs::create_dir_all(root.join(sub)).map_err(|e| Error::io(root.join(sub), e))?;
    }
    io::write_png(&root.join(LEFT_DIR).join(format!("{}.png", s.id)), &s.left)?;
    if let Some(r) = &s.right {
        io::write_png(&root.join(RIGHT_DIR).join(format!("{}.png", s.id)), r)?;
    }
    io::write_disparity(&root.join(DISP_DIR).join(format!("{}.pfm", s.id)), &s.disparity)
}

/// Synthetic scenes in the on-disk layout, named `scene_0000`, ...
pub fn synthetic_dataset(count: usize, size: usize, seed: u64) -> Result<Dataset> {
    let samples = (0..count)
        .map(|i| {
            let pair = Scene::random(size, rng::derive_seed(seed, i as u64))?.render()?;
            Ok(StereoSample {
                id: format!("scene_{i:04}"),
                left: pair.left,
                right: Some(pair.right),
                disparity: pair.disparity,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if samples.is_empty() {
        return Err(Error::invalid("synthetic dataset needs at least one scene"));
    }
    Ok(Dataset {
        name: "synthetic".into(),
        samples,
    })
}

/// Record of one built sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuiltEntry {
    pub id: String,
    pub source: String,
    pub source_id: String,
    pub gamma: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildManifest {
    pub datasets: Vec<String>,
    pub plan: SamplePlan,
    pub generated: bool,
    pub entries: Vec<BuiltEntry>,
}

/// Datasets named in the config, or synthetic scenes when none are listed.
pub fn configured_datasets(cfg: &PipelineConfig) -> Result<Vec<Dataset>> {
    if cfg.datasets.is_empty() {
        let count = cfg.synthetic_scenes.max(1);
        let side = cfg.crop_size.max(32).div_ceil(32) * 32;
        return Ok(vec![synthetic_dataset(count, side, cfg.seed)?]);
    }
    cfg.datasets.iter().map(load_dataset).collect()
}

/// Resamples, crops, draws gamma and renders a right view for each planned
/// sample: with a trained model when `models` is given, else the warped view
/// (holes black) and its mask.
pub fn build_dataset(
    datasets: &[Dataset],
    cfg: &PipelineConfig,
    models: Option<(&DenoiserParams, &FusionParams)>,
    out: &Path,
) -> Result<BuildManifest> {
    cfg.validate()?;
    let sizes: Vec<usize> = datasets.iter().map(Dataset::len).collect();
    let plan = resample_plan(&sizes, cfg.fraction)?;
    let gamma = cfg.gamma_spec()?;
    let gen = cfg.gen_config()?;
    let mut jobs = Vec::new();
    for (k, ds) in datasets.iter().enumerate() {
        for _ in 0..plan.replication[k] {
            for sample in &ds.samples {
                jobs.push((ds.name.as_str(), sample));
            }
        }
    }
    std::fs::create_dir_all(out.join(MASK_DIR)).map_err(|e| Error::io(out, e))?;
    let entries = jobs
        .par_iter()
        .enumerate()
        .map(|(i, &(name, sample))| -> Result<BuiltEntry> {
            let seed = rng::derive_seed(cfg.seed, i as u64);
            let mut r = rng::seeded(seed);
            let (h, w) = (sample.left.height(), sample.left.width());
            let win = if cfg.random_crop {
                CropWindow::random(h, w, r.random())?
            } else {
                CropWindow::center(h, w)?
            };
            let left = crop_and_resize(&sample.left, win, cfg.crop_size).stage("crop")?;
            let d = crop_and_resize_disparity(&sample.disparity, win, cfg.crop_size).stage("crop")?;
            let g = gamma.sample(&mut r);
            let mut d = scale_disparity(&d, g).stage("normalize")?;
            if d.max_valid().is_some_and(|m| m > cfg.max_disparity) {
                let values = d.values().iter().map(|v| v.min(cfg.max_disparity)).collect();
                d = DisparityMap::sparse(d.height(), d.width(), values, d.valid().clone())?;
            }
            let (right, mask) = match models {
                Some((theta, phi)) => {
                    let gc = GenConfig {
                        gamma: g,
                        seed: r.random(),
                        ..gen
                    };
                    let o = generate_with_disparity(&left, &d, &gc, theta, phi)?;
                    (o.right, o.mask)
                }
                None => {
                    let (warped, mask) = warp_image(&left, &d).stage("warp")?;
                    (mask_image(&warped, &mask)?, mask)
                }
            };
            let id = format!("{i:06}");
            io::write_mask_png(&out.join(MASK_DIR).join(format!("{id}.png")), &mask)?;
            write_sample(
                out,
                &StereoSample {
                    id: id.clone(),
                    left,
                    right: Some(right),
                    disparity: d,
                },
            )?;
            Ok(BuiltEntry {
                id,
                source: name.to_string(),
                source_id: sample.id.clone(),
                gamma: g,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = BuildManifest {
        datasets: datasets.iter().map(|d| d.name.clone()).collect(),
        plan,
        generated: models.is_some(),
        entries,
    };
    let path = out.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synthetic_dataset(2, 32, 4).unwrap();
        for s in &ds.samples {
            write_sample(dir.path(), s).unwrap();
        }
        let specs = discover_datasets(dir.path()).unwrap();
        assert_eq!(specs.len(), 1);
        let back = load_dataset(&specs[0]).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.samples[0].id, "scene_0000");
        assert_eq!(back.samples[0].disparity, ds.samples[0].disparity);
        let right = back.samples[1].right.as_ref().unwrap();
        let orig = ds.samples[1].right.as_ref().unwrap();
        assert!(right.data().iter().zip(orig.data()).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-6));
        assert!(discover_datasets(&dir.path().join(LEFT_DIR)).is_err());
    }

    #[test]
    fn build_replicates_small_datasets() {
        let dir = tempfile::tempdir().unwrap();
        let big = synthetic_dataset(5, 32, 1).unwrap();
        let mut small = synthetic_dataset(1, 32, 2).unwrap();
        small.name = "small".into();
        let cfg = PipelineConfig {
            crop_size: 32,
            fraction: 0.5,
            gamma_set: Some(vec![0.05, 0.1]),
            ..PipelineConfig::default()
        };
        let m = build_dataset(&[big, small], &cfg, None, dir.path()).unwrap();
        assert_eq!(m.plan.replication, vec![1, 3]);
        assert_eq!(m.entries.len(), 8);
        assert!(m.entries.iter().all(|e| e.gamma == 0.05 || e.gamma == 0.1));
        let back = load_dataset(&DatasetSpec {
            name: "built".into(),
            root: dir.path().to_path_buf(),
        })
        .unwrap();
        assert_eq!(back.len(), 8);
        for (s, e) in back.samples.iter().zip(&m.entries) {
            let max = s.disparity.max_valid().unwrap();
            assert!((max - e.gamma * 32.0).abs() < 1e-4);
        }
        let again = tempfile::tempdir().unwrap();
        let m2 = build_dataset(
            &[synthetic_dataset(5, 32, 1).unwrap(), synthetic_dataset(1, 32, 2).unwrap()],
            &cfg,
            None,
            again.path(),
        )
        .unwrap();
        assert_eq!(
            m.entries.iter().map(|e| e.gamma).collect::<Vec<_>>(),
            m2.entries.iter().map(|e| e.gamma).collect::<Vec<_>>()
        );
        assert_eq!(
            std::fs::read(dir.path().join("right/000007.png")).unwrap(),
            std::fs::read(again.path().join("right/000007.png")).unwrap()
        );
    }
}
