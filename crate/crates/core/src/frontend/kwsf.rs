//! Flat binary feature records.
//!
//! Layout (all little-endian):
//!
//! | bytes      | field                         |
//! |------------|-------------------------------|
//! | 0..4       | magic `KWSF`                  |
//! | 4..8       | version `u32` (= 1)           |
//! | 8..12      | frame count `T` `u32`         |
//! | 12..16     | dim `u32` (= 40)              |
//! | 16..       | `T·dim` `f32` values, row-major |

use std::path::Path;

use super::features::{FeatureSequence, DEFAULT_HOP_MS, LOG_FLOOR, NUM_MEL_BINS};
use crate::error::{Error, Result};

pub const KWSF_MAGIC: &[u8; 4] = b"KWSF";
pub const KWSF_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

fn fmt_err(detail: impl Into<String>) -> Error {
    Error::Format {
        module: "frontend",
        what: "KWSF feature file",
        detail: detail.into(),
    }
}

pub fn encode_features(f: &FeatureSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + f.data().len() * 4);
    out.extend_from_slice(KWSF_MAGIC);
    out.extend_from_slice(&KWSF_VERSION.to_le_bytes());
    out.extend_from_slice(&(f.num_frames() as u32).to_le_bytes());
    out.extend_from_slice(&(f.dim() as u32).to_le_bytes());
    for v in f.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"))
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureSequence> {
    if bytes.len() < HEADER_LEN {
        return Err(fmt_err(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[0..4] != KWSF_MAGIC {
        return Err(fmt_err("bad magic"));
    }
    let version = u32_at(bytes, 4);
    if version != KWSF_VERSION {
        return Err(fmt_err(format!("unsupported version {version}")));
    }
    let frames = u32_at(bytes, 8) as usize;
    let dim = u32_at(bytes, 12) as usize;
    if dim != NUM_MEL_BINS {
        return Err(fmt_err(format!("dim {dim}, expected {NUM_MEL_BINS}")));
    }
    if frames == 0 {
        return Err(fmt_err("zero frames"));
    }
    let expected = frames
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| fmt_err("frame count overflows"))?;
    if bytes.len() != expected {
        return Err(fmt_err(format!("{} bytes, header implies {expected}", bytes.len())));
    }
    let data: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(fmt_err(format!("value {i} is not finite")));
    }
    // f32 rounding can land a hair under the floor.
    let data = data.into_iter().map(|v| v.max(LOG_FLOOR)).collect();
    FeatureSequence::new(data, DEFAULT_HOP_MS)
}

pub fn read_features(path: &Path) -> Result<FeatureSequence> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}

pub fn write_features(path: &Path, f: &FeatureSequence) -> Result<()> {
    std::fs::write(path, encode_features(f)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_fixed() {
        let f = FeatureSequence::new(vec![0.5; 80], 10).unwrap();
        let b = encode_features(&f);
        assert_eq!(&b[0..4], b"KWSF");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[12..16], &40u32.to_le_bytes());
        assert_eq!(b.len(), 16 + 80 * 4);
        assert_eq!(&b[16..20], &0.5f32.to_le_bytes());
    }

    #[test]
    fn truncated_and_mislabeled_records_fail() {
        let f = FeatureSequence::new(vec![0.5; 80], 10).unwrap();
        let mut b = encode_features(&f);
        assert!(decode_features(&b[..b.len() - 1]).is_err());
        b[12] = 41;
        assert!(decode_features(&b).is_err());
        assert!(decode_features(b"KWSX").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_within_f32(vals in prop::collection::vec(-13.0f64..20.0, 40..400)) {
            let n = vals.len() / 40 * 40;
            let f = FeatureSequence::new(vals[..n].to_vec(), 10).unwrap();
            let back = decode_features(&encode_features(&f)).unwrap();
            prop_assert_eq!(back.num_frames(), f.num_frames());
            for (a, b) in back.data().iter().zip(f.data()) {
                prop_assert!((a - b).abs() <= b.abs() * 1e-7 + 1e-7);
            }
        }
    }
}
