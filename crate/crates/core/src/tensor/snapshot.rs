//! Binary tensor snapshots.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SWTN" | u8 precision tag (4 = f32, 8 = f64) | u8 rank | rank x u32 dims | raw elements
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Precision, Real, Shape, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SWTN";

pub fn encode<T: Real>(tensor: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 4 * tensor.dims().len() + tensor.len() * T::PRECISION.tag() as usize);
    out.extend_from_slice(MAGIC);
    out.push(T::PRECISION.tag());
    out.push(tensor.dims().len() as u8);
    for &d in tensor.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in tensor.data() {
        v.write_le(&mut out);
    }
    out
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<Tensor<T>> {
    let bad = |reason: String| Error::Format {
        what: "tensor snapshot",
        reason,
    };
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(bad("missing SWTN magic".into()));
    }
    let precision = Precision::from_tag(bytes[4])
        .ok_or_else(|| bad(format!("unknown precision tag {}", bytes[4])))?;
    if precision != T::PRECISION {
        return Err(bad(format!(
            "snapshot holds {} data but {} was requested",
            precision.name(),
            T::PRECISION.name()
        )));
    }
    let rank = bytes[5] as usize;
    let header = 6 + 4 * rank;
    if bytes.len() < header {
        return Err(bad(format!("truncated header for rank {rank}")));
    }
    let dims: Vec<usize> = bytes[6..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let shape = Shape::new(dims)?;
    let width = precision.tag() as usize;
    let expected = header + shape.numel() * width;
    if bytes.len() != expected {
        return Err(bad(format!(
            "expected {expected} bytes for shape {shape:?}, found {}",
            bytes.len()
        )));
    }
    let data = bytes[header..].chunks_exact(width).map(T::read_le).collect();
    Tensor::from_vec(shape, data)
}

pub fn write<T: Real>(tensor: &Tensor<T>, mut writer: impl Write) -> Result<()> {
    writer.write_all(&encode(tensor))?;
    Ok(())
}

pub fn read<T: Real>(mut reader: impl Read) -> Result<Tensor<T>> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn save<T: Real>(tensor: &Tensor<T>, path: &Path) -> Result<()> {
    fs::write(path, encode(tensor))?;
    Ok(())
}

pub fn load<T: Real>(path: &Path) -> Result<Tensor<T>> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gaussian_init;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let t = Tensor::from_vec([1, 2], vec![1.0f32, -2.0]).unwrap();
        let bytes = encode(&t);
        let mut expected = b"SWTN".to_vec();
        expected.extend_from_slice(&[4, 2, 1, 0, 0, 0, 2, 0, 0, 0]);
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn precision_mismatch_is_rejected() {
        let t = gaussian_init::<f64>(&[3], 1.0, 0).unwrap();
        assert!(matches!(decode::<f32>(&encode(&t)), Err(Error::Format { .. })));
    }

    #[test]
    fn truncation_is_rejected() {
        let t = gaussian_init::<f64>(&[2, 3], 1.0, 0).unwrap();
        let bytes = encode(&t);
        assert!(decode::<f64>(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode::<f64>(b"SWTX\x08\x01").is_err());
    }

    proptest! {
        #[test]
        fn round_trip(dims in prop::collection::vec(1usize..5, 1..5), seed in 0u64..100) {
            let t = gaussian_init::<f64>(&dims, 1.0, seed).unwrap();
            prop_assert_eq!(decode::<f64>(&encode(&t)).unwrap(), t.clone());
            let t32 = t.map(|v| v).data().iter().map(|&v| v as f32).collect::<Vec<_>>();
            let t32 = Tensor::from_vec(dims.as_slice(), t32).unwrap();
            prop_assert_eq!(decode::<f32>(&encode(&t32)).unwrap(), t32);
        }
    }
}
