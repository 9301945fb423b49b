//! `GST1` tensor persistence format.
//!
//! Layout: magic `GST1`, rank as u32 LE, each dim as u32 LE, then the payload
//! as f32 LE in row-major order.

use super::tensor::{TensorF32, MAX_RANK};
use crate::error::{Error, Result};

pub const GST_MAGIC: &[u8; 4] = b"GST1";

pub fn gst_encode(tensor: &TensorF32) -> Vec<u8> {
    let dims = tensor.dims();
    let mut out = Vec::with_capacity(8 + 4 * dims.len() + 4 * tensor.len());
    out.extend_from_slice(GST_MAGIC);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Length {
            expected: at + 4,
            found: bytes.len(),
        })
}

pub fn gst_decode(bytes: &[u8]) -> Result<TensorF32> {
    if bytes.len() < 4 || &bytes[..4] != GST_MAGIC {
        return Err(Error::Format("bad GST magic".into()));
    }
    let rank = read_u32(bytes, 4)? as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Format(format!("unsupported GST rank {rank}")));
    }
    let dims = (0..rank)
        .map(|k| read_u32(bytes, 8 + 4 * k).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 8 + 4 * rank;
    let count: usize = dims.iter().product();
    let expected = header + 4 * count;
    if bytes.len() != expected {
        return Err(Error::Length {
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    TensorF32::new(dims, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_tensor_is_twenty_bytes() {
        let t = TensorF32::new(vec![1, 1], vec![0.0]).unwrap();
        let bytes = gst_encode(&t);
        assert_eq!(bytes.len(), 4 + 4 + 8 + 4);
        assert_eq!(&bytes[..4], b"GST1");
        assert_eq!(&bytes[4..8], &[2, 0, 0, 0]);
        assert_eq!(&bytes[8..16], &[1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[16..], &[0, 0, 0, 0]);
    }

    #[test]
    fn decode_errors() {
        let t = TensorF32::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut bytes = gst_encode(&t);
        assert!(matches!(gst_decode(&bytes[..bytes.len() - 1]), Err(Error::Length { .. })));
        bytes.push(0);
        assert!(matches!(gst_decode(&bytes), Err(Error::Length { .. })));
        bytes.pop();
        bytes[3] = b'2';
        assert!(matches!(gst_decode(&bytes), Err(Error::Format(_))));

        let mut five = b"GST1".to_vec();
        five.extend_from_slice(&5u32.to_le_bytes());
        assert!(matches!(gst_decode(&five), Err(Error::Format(_))));
        assert!(gst_decode(b"GS").is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_is_bitwise(
            dims in proptest::collection::vec(1usize..5, 1..=4),
            seed in any::<u64>(),
        ) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n)
                .map(|i| {
                    let bits = (seed.wrapping_mul(i as u64 + 1) >> 7) as u32 & 0x7F7F_FFFF;
                    let v = f32::from_bits(bits);
                    if i % 2 == 0 { v } else { -v }
                })
                .collect();
            let t = TensorF32::new(dims, data).unwrap();
            let back = gst_decode(&gst_encode(&t)).unwrap();
            prop_assert!(back.bit_eq(&t));
        }
    }
}
