//! Portable float map (PFM) codec.
//!
//! Rows are stored bottom-up on disk; in memory they are top-down. A negative
//! scale marks a little-endian payload, a positive one big-endian.

use super::plane::{DisparityMap, ValidityMask};
use super::tensor::TensorF32;
use crate::error::{Error, Result};

/// Raw PFM contents. Values may be non-finite (Middlebury marks unknown
/// disparities with `inf`).
#[derive(Debug, Clone)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub scale: f32,
    pub data: Vec<f32>,
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated PFM header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .map(str::to_owned)
        .map_err(|_| Error::Format("non-ASCII PFM header".into()))
}

pub fn decode(bytes: &[u8]) -> Result<PfmImage> {
    let mut pos = 0;
    let channels = match next_token(bytes, &mut pos)?.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(Error::Format(format!("bad PFM magic {other:?}"))),
    };
    let parse_dim = |tok: String| {
        tok.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PFM dimension {tok:?}")))
    };
    let width = parse_dim(next_token(bytes, &mut pos)?)?;
    let height = parse_dim(next_token(bytes, &mut pos)?)?;
    let scale_tok = next_token(bytes, &mut pos)?;
    let scale: f32 = scale_tok
        .parse()
        .map_err(|_| Error::Format(format!("bad PFM scale {scale_tok:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Format(format!("bad PFM scale {scale_tok:?}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Format("PFM with zero extent".into()));
    }
    // exactly one whitespace byte separates the header from the payload
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format("missing PFM header terminator".into())),
    }
    let row_len = width * channels;
    let expected = pos + 4 * row_len * height;
    if bytes.len() != expected {
        return Err(Error::Length {
            expected,
            found: bytes.len(),
        });
    }
    let little = scale < 0.0;
    let mut data = vec![0f32; row_len * height];
    for (k, chunk) in bytes[pos..].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (disk_row, col) = (k / row_len, k % row_len);
        data[(height - 1 - disk_row) * row_len + col] = v;
    }
    Ok(PfmImage {
        width,
        height,
        channels,
        scale,
        data,
    })
}

/// Reads a PFM stream into a tensor of dims `[h, w]` (grayscale) or
/// `[h, w, 3]` (color). Non-finite samples are rejected; use
/// [`read_disparity`] for maps that encode invalid pixels as `inf`.
pub fn pfm_read(bytes: &[u8]) -> Result<TensorF32> {
    let img = decode(bytes)?;
    let dims = if img.channels == 1 {
        vec![img.height, img.width]
    } else {
        vec![img.height, img.width, 3]
    };
    TensorF32::new(dims, img.data)
}

/// Writes the canonical little-endian form (`scale = -1.0`).
pub fn pfm_write(tensor: &TensorF32) -> Result<Vec<u8>> {
    let (height, width, channels) = match *tensor.dims() {
        [h, w] => (h, w, 1),
        [h, w, 1] => (h, w, 1),
        [h, w, 3] => (h, w, 3),
        ref d => return Err(Error::shape(format!("PFM needs [h,w] or [h,w,3], got {d:?}"))),
    };
    let magic = if channels == 1 { "Pf" } else { "PF" };
    let mut out = format!("{magic}\n{width} {height}\n-1.0\n").into_bytes();
    let row_len = width * channels;
    for row in (0..height).rev() {
        for &v in &tensor.data()[row * row_len..(row + 1) * row_len] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Reads a single-channel PFM as a disparity map; non-finite or negative
/// samples become invalid pixels.
pub fn read_disparity(bytes: &[u8]) -> Result<DisparityMap> {
    let img = decode(bytes)?;
    if img.channels != 1 {
        return Err(Error::Format("disparity PFM must be grayscale (Pf)".into()));
    }
    let valid: Vec<bool> = img.data.iter().map(|v| v.is_finite() && *v >= 0.0).collect();
    let values = img
        .data
        .iter()
        .zip(&valid)
        .map(|(&v, &ok)| if ok { v } else { 0.0 })
        .collect();
    DisparityMap::sparse(
        img.height,
        img.width,
        values,
        ValidityMask::from_bools(img.height, img.width, &valid)?,
    )
}

/// Writes a disparity map, encoding invalid pixels as `inf`.
pub fn write_disparity(d: &DisparityMap) -> Vec<u8> {
    let (h, w) = (d.height(), d.width());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    for row in (0..h).rev() {
        for col in 0..w {
            let v = if d.is_valid(row, col) {
                d.get(row, col)
            } else {
                f32::INFINITY
            };
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn le_file(header: &str, values: &[f32]) -> Vec<u8> {
        let mut b = header.as_bytes().to_vec();
        for v in values {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn reads_hand_encoded_file() {
        let bytes = le_file("Pf\n2 1\n-1.0\n", &[1.5, 2.5]);
        let t = pfm_read(&bytes).unwrap();
        assert_eq!(t.dims(), &[1, 2]);
        assert_eq!(t.data(), &[1.5, 2.5]);
        assert_eq!(pfm_write(&t).unwrap(), bytes);
    }

    #[test]
    fn rows_are_flipped() {
        // disk order: bottom row [3,4] first, then top row [1,2]
        let bytes = le_file("Pf\n2 2\n-1.0\n", &[3.0, 4.0, 1.0, 2.0]);
        let t = pfm_read(&bytes).unwrap();
        assert_eq!(t.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(pfm_write(&t).unwrap(), bytes);
    }

    #[test]
    fn big_endian_matches_little_endian() {
        let values = [0.25f32, -7.5, 3.0, 1e-3, 42.0, 0.0];
        let le = le_file("PF\n2 1\n-1.0\n", &values);
        let mut be = b"PF\n2 1\n1.0\n".to_vec();
        for v in values {
            let mut raw = v.to_le_bytes();
            raw.reverse();
            be.extend_from_slice(&raw);
        }
        let a = pfm_read(&le).unwrap();
        let b = pfm_read(&be).unwrap();
        assert_eq!(a.dims(), &[1, 2, 3]);
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn malformed_and_truncated() {
        assert!(matches!(pfm_read(b"P6\n1 1\n-1.0\n\0\0\0\0"), Err(Error::Format(_))));
        assert!(matches!(pfm_read(b"Pf\nx 1\n-1.0\n\0\0\0\0"), Err(Error::Format(_))));
        assert!(matches!(pfm_read(b"Pf\n1 1\n"), Err(Error::Format(_))));
        assert!(matches!(pfm_read(b"Pf\n2 1\n-1.0\n\0\0\0\0"), Err(Error::Length { .. })));
    }

    #[test]
    fn disparity_inf_is_invalid() {
        let bytes = le_file("Pf\n3 1\n-1.0\n", &[1.0, f32::INFINITY, 2.0]);
        assert!(pfm_read(&bytes).is_err());
        let d = read_disparity(&bytes).unwrap();
        assert!(d.is_valid(0, 0) && !d.is_valid(0, 1) && d.is_valid(0, 2));
        assert_eq!(d.get(0, 1), 0.0);
        assert_eq!(write_disparity(&d), bytes);
    }
}
