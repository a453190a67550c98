//! `FDT1` tensor files.
//!
//! Layout: the magic `FDT1`, a little-endian `u32` rank, `rank` little-endian
//! `u32` dimensions, then the row-major payload as little-endian `f64`.

use std::path::Path;

use super::{read_bytes, write_bytes};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FDT_MAGIC: &[u8; 4] = b"FDT1";

pub fn encode_fdt(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + 8 * t.len());
    out.extend_from_slice(FDT_MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses an FDT buffer; `origin` only labels errors.
pub fn decode_fdt(bytes: &[u8], origin: &Path) -> Result<Tensor> {
    let bad = |reason: String| Error::Format {
        path: origin.to_path_buf(),
        reason,
    };
    let u32_at = |off: usize| -> Result<u32> {
        bytes
            .get(off..off + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| bad(format!("truncated header at byte {off}")))
    };
    if bytes.get(..4) != Some(&FDT_MAGIC[..]) {
        return Err(bad("missing FDT1 magic".into()));
    }
    let rank = u32_at(4)? as usize;
    if rank == 0 {
        return Err(bad("rank 0".into()));
    }
    let shape = (0..rank)
        .map(|i| u32_at(8 + 4 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 8 + 4 * rank;
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| bad("dimension product overflows".into()))?;
    let payload = &bytes[start..];
    if Some(payload.len()) != count.checked_mul(8) {
        return Err(bad(format!(
            "payload is {} bytes, shape {shape:?} needs {}",
            payload.len(),
            count * 8
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor::new(shape, data).map_err(|e| bad(e.to_string()))
}

pub fn write_fdt(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    write_bytes(path.as_ref(), &encode_fdt(t))
}

pub fn read_fdt(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    decode_fdt(&read_bytes(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2, 1], vec![1.0, -0.5]).unwrap();
        let b = encode_fdt(&t);
        assert_eq!(&b[..4], b"FDT1");
        assert_eq!(&b[4..8], &[2, 0, 0, 0]);
        assert_eq!(&b[8..16], &[2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&b[16..24], &1.0f64.to_le_bytes());
        assert_eq!(b.len(), 32);
    }

    #[test]
    fn malformed_inputs() {
        let p = Path::new("x.fdt");
        assert!(matches!(decode_fdt(b"FDT2\x01\0\0\0", p), Err(Error::Format { .. })));
        assert!(decode_fdt(b"FDT1\x01\0\0", p).is_err());
        assert!(decode_fdt(b"FDT1\x01\0\0\0\x02\0\0\0\0\0\0\0\0\0\0\0", p).is_err());
        let mut nan = encode_fdt(&Tensor::zeros(&[1]));
        nan[12..20].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode_fdt(&nan, p).is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(read_fdt("/nonexistent/dir/a.fdt"), Err(Error::Io { .. })));
    }

    fn tensor_strategy() -> impl Strategy<Value = Tensor> {
        prop::collection::vec(1usize..5, 1..=4).prop_flat_map(|shape| {
            let n: usize = shape.iter().product();
            prop::collection::vec(
                prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL,
                n,
            )
            .prop_map(move |data| Tensor::new(shape.clone(), data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(t in tensor_strategy()) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("t.fdt");
            write_fdt(&path, &t).unwrap();
            let back = read_fdt(&path).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            let same = back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}
