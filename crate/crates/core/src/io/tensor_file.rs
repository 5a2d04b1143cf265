//! Minimal binary tensor format.
//!
//! ```text
//! offset  size        field
//! 0       8           magic "PSEG0001"
//! 8       1           dtype: 1 = f32, 2 = f64, 3 = u8
//! 9       1           rank r
//! 10      4 * r       dims, u32 little-endian
//! 10+4r   ...         payload, row-major, little-endian
//! ```
//!
//! Payloads are widened to `f64` on load.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"PSEG0001";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    U8,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
            Dtype::U8 => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            3 => Some(Dtype::U8),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
            Dtype::U8 => 1,
        }
    }
}

pub fn encode_tensor(tensor: &Tensor, dtype: Dtype) -> Result<Vec<u8>> {
    if tensor.rank() > u8::MAX as usize {
        return Err(Error::InvalidTensor(format!("rank {} too large", tensor.rank())));
    }
    let mut out = Vec::with_capacity(10 + 4 * tensor.rank() + tensor.data().len() * dtype.size());
    out.extend_from_slice(MAGIC);
    out.push(dtype.code());
    out.push(tensor.rank() as u8);
    for &d in tensor.dims() {
        let d = u32::try_from(d).map_err(|_| Error::InvalidTensor(format!("axis length {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in tensor.data() {
        match dtype {
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
            Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::U8 => {
                if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
                    return Err(Error::InvalidParameter(format!("{v} is not representable as u8")));
                }
                out.push(v as u8);
            }
        }
    }
    Ok(out)
}

/// Parses a tensor; `origin` is only used in error messages.
pub fn decode_tensor(bytes: &[u8], origin: &Path) -> Result<Tensor> {
    let truncated = |expected: usize| Error::TruncatedPayload {
        path: origin.to_path_buf(),
        expected,
        found: bytes.len(),
    };
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic {
            path: origin.to_path_buf(),
        });
    }
    if bytes.len() < 10 {
        return Err(truncated(10));
    }
    let dtype = Dtype::from_code(bytes[8]).ok_or_else(|| Error::UnknownDtype {
        path: origin.to_path_buf(),
        code: bytes[8],
    })?;
    let rank = bytes[9] as usize;
    let header = 10 + 4 * rank;
    if bytes.len() < header {
        return Err(truncated(header));
    }
    let dims: Vec<usize> = bytes[10..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidTensor(format!("dims {dims:?} overflow")))?;
    let expected = count
        .checked_mul(dtype.size())
        .and_then(|p| p.checked_add(header))
        .ok_or_else(|| Error::InvalidTensor(format!("dims {dims:?} overflow")))?;
    if bytes.len() != expected {
        return Err(truncated(expected));
    }
    let payload = &bytes[header..];
    let data: Vec<f64> = match dtype {
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
            .collect(),
        Dtype::U8 => payload.iter().map(|&b| b as f64).collect(),
    };
    Tensor::new(dims, data)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(Error::io(path))?;
    decode_tensor(&bytes, path)
}

/// Saves at full (`f64`) precision.
pub fn save_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    save_tensor_as(path, tensor, Dtype::F64)
}

pub fn save_tensor_as(path: impl AsRef<Path>, tensor: &Tensor, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(tensor, dtype)?;
    fs::write(path, bytes).map_err(Error::io(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn here() -> &'static Path {
        Path::new("<memory>")
    }

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let b = encode_tensor(&t, Dtype::U8).unwrap();
        assert_eq!(&b[..8], b"PSEG0001");
        assert_eq!(b[8], 3);
        assert_eq!(b[9], 2);
        assert_eq!(&b[10..18], &[2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(&b[18..], &[0, 1, 2, 3, 4, 5]);
        assert_eq!(decode_tensor(&b, here()).unwrap(), t);
    }

    #[test]
    fn f32_widened() {
        let t = Tensor::new(vec![3], vec![0.1, -2.5, 1e3]).unwrap();
        let b = encode_tensor(&t, Dtype::F32).unwrap();
        let back = decode_tensor(&b, here()).unwrap();
        assert_eq!(back.data(), &[0.1f32 as f64, -2.5, 1e3]);
    }

    #[test]
    fn rejects_bad_files() {
        let t = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let good = encode_tensor(&t, Dtype::F64).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_tensor(&bad, here()), Err(Error::BadMagic { .. })));
        assert!(matches!(decode_tensor(b"PSE", here()), Err(Error::BadMagic { .. })));

        let short = &good[..good.len() - 8];
        assert!(matches!(
            decode_tensor(short, here()),
            Err(Error::TruncatedPayload { .. })
        ));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(
            decode_tensor(&long, here()),
            Err(Error::TruncatedPayload { .. })
        ));
        assert!(matches!(
            decode_tensor(&good[..12], here()),
            Err(Error::TruncatedPayload { .. })
        ));

        let mut dt = good.clone();
        dt[8] = 9;
        assert!(matches!(
            decode_tensor(&dt, here()),
            Err(Error::UnknownDtype { code: 9, .. })
        ));

        let mut nan = good;
        nan[10 + 4..10 + 4 + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(decode_tensor(&nan, here()), Err(Error::InvalidTensor(_))));
    }

    #[test]
    fn u8_rejects_fractions() {
        let t = Tensor::new(vec![1], vec![0.5]).unwrap();
        assert!(encode_tensor(&t, Dtype::U8).is_err());
    }

    proptest! {
        #[test]
        fn f64_round_trip_is_bit_exact(
            dims in prop::collection::vec(1usize..5, 0..4),
            seed in prop::collection::vec(-1e6..1e6f64, 64),
        ) {
            let n: usize = dims.iter().product();
            let t = Tensor::new(dims, seed.iter().cycle().take(n).cloned().collect()).unwrap();
            let back = decode_tensor(&encode_tensor(&t, Dtype::F64).unwrap(), here()).unwrap();
            prop_assert_eq!(back.dims(), t.dims());
            for (a, b) in back.data().iter().zip(t.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
