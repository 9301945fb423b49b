//! File helpers: PNG images, PNG/PFM disparity maps and GST1 tensors.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use super::gst::{gst_decode, gst_encode};
use super::plane::{DisparityMap, ImagePlane, ValidityMask};
use super::{pfm, TensorF32};
use crate::error::{Error, Result};

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Decodes an 8- or 16-bit PNG. Gray stays single-channel, everything else
/// is converted to RGB (alpha dropped).
pub fn read_png(path: &Path) -> Result<ImagePlane> {
    let img = image::open(path)?;
    decode_dynamic(img)
}

fn decode_dynamic(img: DynamicImage) -> Result<ImagePlane> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(buf) => {
            ImagePlane::new(h, w, 1, buf.into_raw().into_iter().map(|v| v as f32 / 255.0).collect())
        }
        DynamicImage::ImageLuma16(buf) => {
            ImagePlane::new(h, w, 1, buf.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect())
        }
        DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) => {
            let buf = img.to_rgb16();
            ImagePlane::new(h, w, 3, buf.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect())
        }
        other => {
            let buf = other.to_rgb8();
            ImagePlane::new(h, w, 3, buf.into_raw().into_iter().map(|v| v as f32 / 255.0).collect())
        }
    }
}

fn quantize8(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes an 8-bit PNG.
pub fn write_png(path: &Path, img: &ImagePlane) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let raw: Vec<u8> = img.data().iter().map(|&v| quantize8(v)).collect();
    match img.channels() {
        1 => ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw)
            .expect("buffer size matches image")
            .save(path)?,
        _ => ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, raw)
            .expect("buffer size matches image")
            .save(path)?,
    }
    Ok(())
}

pub fn write_mask_png(path: &Path, mask: &ValidityMask) -> Result<()> {
    let raw = mask.data().iter().map(|&v| v * 255).collect::<Vec<u8>>();
    ImageBuffer::<Luma<u8>, _>::from_raw(mask.width() as u32, mask.height() as u32, raw)
        .expect("buffer size matches mask")
        .save(path)?;
    Ok(())
}

pub fn read_mask_png(path: &Path) -> Result<ValidityMask> {
    let img = read_png(path)?;
    let gray = if img.channels() == 1 {
        img
    } else {
        ImagePlane::new(img.height(), img.width(), 1, img.to_gray().iter().map(|&v| v as f32).collect())?
    };
    ValidityMask::from_image(&gray)
}

/// KITTI convention: 16-bit gray, disparity = value / 256, value 0 = invalid.
pub fn read_disparity_png16(path: &Path) -> Result<DisparityMap> {
    let buf = image::open(path)?.to_luma16();
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let raw = buf.into_raw();
    let valid: Vec<bool> = raw.iter().map(|&v| v > 0).collect();
    let values = raw.iter().map(|&v| v as f32 / 256.0).collect();
    DisparityMap::sparse(h, w, values, ValidityMask::from_bools(h, w, &valid)?)
}

pub fn write_disparity_png16(path: &Path, d: &DisparityMap) -> Result<()> {
    let raw: Vec<u16> = d
        .values()
        .iter()
        .zip(d.valid().data())
        .map(|(&v, &m)| {
            if m == 0 {
                0
            } else {
                (v * 256.0).round().clamp(1.0, 65535.0) as u16
            }
        })
        .collect();
    ImageBuffer::<Luma<u16>, _>::from_raw(d.width() as u32, d.height() as u32, raw)
        .expect("buffer size matches map")
        .save(path)?;
    Ok(())
}

/// Reads a disparity map from `.pfm` or 16-bit `.png` by extension.
pub fn read_disparity(path: &Path) -> Result<DisparityMap> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("pfm") => pfm::read_disparity(&read_bytes(path)?),
        Some("png") => read_disparity_png16(path),
        _ => Err(Error::Format(format!("unknown disparity format: {}", path.display()))),
    }
}

pub fn write_disparity(path: &Path, d: &DisparityMap) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => write_disparity_png16(path, d),
        _ => write_bytes(path, &pfm::write_disparity(d)),
    }
}

pub fn read_gst(path: &Path) -> Result<TensorF32> {
    gst_decode(&read_bytes(path)?)
}

pub fn write_gst(path: &Path, t: &TensorF32) -> Result<()> {
    write_bytes(path, &gst_encode(t))
}
