//! Portable tensor files: `RFT1`, u32 LE rank, u32 LE extents, u8 dtype
//! tag (0 = f32, 1 = f64), then little-endian values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rfrl_core::{DType, Real, Tensor};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RFT1";

/// A tensor of either precision, as read from a file.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// The tensor if it is stored as `T`.
    pub fn into_dtype<T: Real>(self) -> Option<Tensor<T>> {
        match self {
            AnyTensor::F32(t) if T::DTYPE == DType::F32 => Some(t.cast()),
            AnyTensor::F64(t) if T::DTYPE == DType::F64 => Some(t.cast()),
            _ => None,
        }
    }
}

pub fn encode_tensor<T: Real>(t: &Tensor<T>, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.push(T::DTYPE.tag());
    match T::DTYPE {
        DType::F32 => t.data().iter().for_each(|v| out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes())),
        DType::F64 => t.data().iter().for_each(|v| out.extend_from_slice(&v.as_f64().to_le_bytes())),
    }
}

/// Reads one tensor from the front of `reader`; `what` names the source in errors.
pub fn decode_tensor(reader: &mut impl Read, what: &Path) -> Result<AnyTensor> {
    let fail = |msg: String| Error::format(what, msg);
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic).map_err(|e| fail(format!("reading tensor magic: {}", e)))?;
    if &magic != MAGIC {
        return Err(fail(format!("bad tensor magic {:?}", magic)));
    }
    let mut u32buf = [0u8; 4];
    let mut read_u32 = |r: &mut dyn Read, field: &str| -> Result<u32> {
        r.read_exact(&mut u32buf).map_err(|e| fail(format!("reading {}: {}", field, e)))?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let rank = read_u32(reader, "rank")? as usize;
    if rank > 8 {
        return Err(fail(format!("implausible tensor rank {}", rank)));
    }
    let shape = (0..rank).map(|_| read_u32(reader, "extent").map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let count = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).filter(|&n| n > 0 && n < (1 << 31));
    let count = count.ok_or_else(|| fail(format!("invalid tensor shape {:?}", shape)))?;
    let mut tag = [0u8; 1];
    reader.read_exact(&mut tag).map_err(|e| fail(format!("reading dtype: {}", e)))?;
    let dtype = DType::from_tag(tag[0]).ok_or_else(|| fail(format!("unknown dtype tag {}", tag[0])))?;
    let mut raw = vec![0u8; count * dtype.size_of()];
    reader.read_exact(&mut raw).map_err(|e| fail(format!("reading {} values: {}", count, e)))?;
    Ok(match dtype {
        DType::F32 => {
            let v = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            AnyTensor::F32(Tensor::new(&shape, v)?)
        }
        DType::F64 => {
            let v = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            AnyTensor::F64(Tensor::new(&shape, v)?)
        }
    })
}

pub fn save_tensor<T: Real>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    encode_tensor(t, &mut buf);
    fs::File::create(path).and_then(|mut f| f.write_all(&buf)).map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cursor = bytes.as_slice();
    let t = decode_tensor(&mut cursor, path)?;
    if !cursor.is_empty() {
        return Err(Error::format(path, format!("{} trailing bytes after tensor", cursor.len())));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_as_documented() {
        let t = Tensor::<f32>::from_f64(&[2], &[1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        encode_tensor(&t, &mut buf);
        let mut want = b"RFT1".to_vec();
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&2u32.to_le_bytes());
        want.push(0);
        want.extend_from_slice(&1f32.to_le_bytes());
        want.extend_from_slice(&(-2f32).to_le_bytes());
        assert_eq!(buf, want);
    }

    #[test]
    fn round_trips_both_precisions_and_scalars() {
        let a = Tensor::<f64>::from_f64(&[2, 3], &[0.1, 0.2, 0.3, f64::MIN_POSITIVE, -1e300, 7.0]).unwrap();
        let mut buf = Vec::new();
        encode_tensor(&a, &mut buf);
        let back = decode_tensor(&mut buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back, AnyTensor::F64(a.clone()));
        assert!(back.clone().into_dtype::<f32>().is_none());
        assert_eq!(back.into_dtype::<f64>().unwrap(), a);

        let s = Tensor::<f32>::scalar(3.5);
        buf.clear();
        encode_tensor(&s, &mut buf);
        assert_eq!(decode_tensor(&mut buf.as_slice(), Path::new("mem")).unwrap(), AnyTensor::F32(s));
    }

    #[test]
    fn malformed_input_is_a_format_error() {
        let t = Tensor::<f32>::ones(&[4]);
        let mut buf = Vec::new();
        encode_tensor(&t, &mut buf);
        for cut in [0, 3, 6, 12, buf.len() - 1] {
            assert!(matches!(decode_tensor(&mut &buf[..cut], Path::new("x")), Err(Error::Format { .. })), "{}", cut);
        }
        let mut bad = buf.clone();
        bad[12] = 9;
        assert!(matches!(decode_tensor(&mut bad.as_slice(), Path::new("x")), Err(Error::Format { .. })));
    }
}
