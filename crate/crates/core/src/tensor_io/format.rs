//! The MSCT single-tensor file format.
//!
//! Layout: `"MSCT" | u16 version | u8 dtype | u8 ndim | ndim × u64 dims | payload`,
//! all little-endian, payload row-major.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MscError, Result};
use crate::linalg::Mat;

pub const MAGIC: [u8; 4] = *b"MSCT";
pub const VERSION: u16 = 1;
const HEADER_FIXED: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
    I64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
            Dtype::I64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            2 => Ok(Dtype::I64),
            other => Err(MscError::UnsupportedDtype(other)),
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 | Dtype::I64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I64(Vec<i64>),
}

impl TensorData {
    pub fn dtype(&self) -> Dtype {
        match self {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
            TensorData::I64(_) => Dtype::I64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A named, typed, row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl TensorRecord {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: TensorData) -> Result<Self> {
        let record = TensorRecord {
            name: name.into(),
            dims,
            data,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn f64(name: impl Into<String>, dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        Self::new(name, dims, TensorData::F64(values))
    }

    pub fn i64(name: impl Into<String>, dims: Vec<usize>, values: Vec<i64>) -> Result<Self> {
        Self::new(name, dims, TensorData::I64(values))
    }

    /// Stores a matrix as a 2-D f64 tensor.
    pub fn from_matrix(name: impl Into<String>, m: &Mat) -> Self {
        let (r, c) = m.shape();
        let mut values = Vec::with_capacity(r * c);
        for i in 0..r {
            values.extend(m.row(i).iter());
        }
        TensorRecord {
            name: name.into(),
            dims: vec![r, c],
            data: TensorData::F64(values),
        }
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(MscError::InvalidArgument(format!(
                "invalid tensor name {:?}",
                self.name
            )));
        }
        if self.dims.is_empty() {
            return Err(MscError::InvalidArgument(format!(
                "tensor {} has no dims",
                self.name
            )));
        }
        let expected = self.numel();
        let actual = self.data.len();
        if expected != actual {
            return Err(MscError::PayloadSizeMismatch { expected, actual });
        }
        Ok(())
    }

    /// Values widened to f64 (integers converted exactly where representable).
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
            TensorData::I64(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    /// Integer payload; float tensors are rejected.
    pub fn to_i64_vec(&self) -> Result<Vec<i64>> {
        match &self.data {
            TensorData::I64(v) => Ok(v.clone()),
            _ => Err(MscError::InvalidArgument(format!(
                "tensor {} is not integer-typed",
                self.name
            ))),
        }
    }

    /// Interprets a 2-D tensor (or a 1-D tensor as a single row) as a matrix.
    pub fn to_matrix(&self) -> Result<Mat> {
        let (r, c) = match self.dims.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => {
                return Err(MscError::DimensionMismatch(format!(
                    "tensor {} has {} dims, expected 2",
                    self.name,
                    self.dims.len()
                )))
            }
        };
        Ok(Mat::from_row_slice(r, c, &self.to_f64_vec()))
    }
}

/// Serializes a record into MSCT bytes.
pub fn encode_tensor(record: &TensorRecord) -> Result<Vec<u8>> {
    record.validate()?;
    let dtype = record.dtype();
    let ndim = u8::try_from(record.dims.len())
        .map_err(|_| MscError::InvalidArgument("more than 255 dims".into()))?;
    let mut out =
        Vec::with_capacity(HEADER_FIXED + 8 * record.dims.len() + dtype.width() * record.numel());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype.code());
    out.push(ndim);
    for &d in &record.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match &record.data {
        TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    Ok(out)
}

/// Parses MSCT bytes; `name` is attached to the result.
pub fn decode_tensor(name: impl Into<String>, bytes: &[u8]) -> Result<TensorRecord> {
    if bytes.len() < 4 {
        return Err(MscError::Truncated("missing magic".into()));
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("length checked");
    if magic != MAGIC {
        return Err(MscError::BadMagic(magic));
    }
    if bytes.len() < HEADER_FIXED {
        return Err(MscError::Truncated("header shorter than 8 bytes".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(MscError::UnsupportedVersion(version));
    }
    let dtype = Dtype::from_code(bytes[6])?;
    let ndim = bytes[7] as usize;
    let dims_end = HEADER_FIXED + 8 * ndim;
    if bytes.len() < dims_end {
        return Err(MscError::Truncated(format!(
            "header declares {ndim} dims but file has {} bytes",
            bytes.len()
        )));
    }
    let dims: Vec<usize> = bytes[HEADER_FIXED..dims_end]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("chunk of 8")) as usize)
        .collect();
    let numel = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| MscError::InvalidArgument("dims overflow".into()))?;
    let payload = &bytes[dims_end..];
    let need = numel
        .checked_mul(dtype.width())
        .ok_or_else(|| MscError::InvalidArgument("payload size overflow".into()))?;
    if payload.len() < need {
        return Err(MscError::Truncated(format!(
            "payload has {} bytes, dims need {need}",
            payload.len()
        )));
    }
    if payload.len() > need {
        return Err(MscError::PayloadSizeMismatch {
            expected: numel,
            actual: payload.len() / dtype.width(),
        });
    }
    let data = match dtype {
        Dtype::F32 => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                .collect(),
        ),
        Dtype::F64 => TensorData::F64(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect(),
        ),
        Dtype::I64 => TensorData::I64(
            payload
                .chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect(),
        ),
    };
    TensorRecord::new(name, dims, data)
}

pub fn write_tensor(record: &TensorRecord, path: &Path) -> Result<()> {
    let bytes = encode_tensor(record)?;
    fs::write(path, bytes).map_err(|e| MscError::io(path, e))
}

/// Reads a tensor file; the record name is the file stem.
pub fn read_tensor(path: &Path) -> Result<TensorRecord> {
    let bytes = fs::read(path).map_err(|e| MscError::io(path, e))?;
    let name = path
        .file_name()
        .and_then(|s| s.to_str())
        .map(|s| s.strip_suffix(".msct").unwrap_or(s).to_string())
        .unwrap_or_else(|| "tensor".to_string());
    decode_tensor(name, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scalar_f32_layout() {
        let t = TensorRecord::new("x", vec![1], TensorData::F32(vec![0.0])).unwrap();
        let bytes = encode_tensor(&t).unwrap();
        // 4 magic + 2 version + 1 dtype + 1 ndim + 8 dims + 4 payload
        assert_eq!(bytes.len(), 20);
        assert_eq!(&bytes[..4], b"MSCT");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 1]);
        assert_eq!(&bytes[8..16], &1u64.to_le_bytes());
        assert_eq!(&bytes[16..], &[0, 0, 0, 0]);
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.msct");
        let t = TensorRecord::f64("m", vec![2, 3], vec![1.0, -2.5, 3.0, 0.0, 1e-300, 7.0]).unwrap();
        write_tensor(&t, &path).unwrap();
        assert_eq!(read_tensor(&path).unwrap(), t);
    }

    #[test]
    fn payload_mismatch_is_rejected() {
        let err = TensorRecord::f64("m", vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(err.to_string().contains("payload size mismatch"));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let t = TensorRecord::i64("l", vec![4], vec![1, 2, 3, 4]).unwrap();
        let mut bytes = encode_tensor(&t).unwrap();
        let cut = decode_tensor("l", &bytes[..bytes.len() - 3]).unwrap_err();
        assert!(cut.to_string().contains("truncated"));
        bytes[..4].copy_from_slice(b"XXXX");
        let bad = decode_tensor("l", &bytes).unwrap_err();
        assert!(bad.to_string().contains("bad magic"));
    }

    #[test]
    fn unknown_version_and_dtype() {
        let t = TensorRecord::i64("l", vec![1], vec![9]).unwrap();
        let mut bytes = encode_tensor(&t).unwrap();
        bytes[4] = 2;
        assert!(matches!(
            decode_tensor("l", &bytes),
            Err(MscError::UnsupportedVersion(2))
        ));
        bytes[4] = 1;
        bytes[6] = 7;
        assert!(matches!(
            decode_tensor("l", &bytes),
            Err(MscError::UnsupportedDtype(7))
        ));
    }

    #[test]
    fn matrix_conversion_is_row_major() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let t = TensorRecord::from_matrix("m", &m);
        assert_eq!(t.to_f64_vec(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(t.to_matrix().unwrap(), m);
    }

    fn data_strategy() -> impl Strategy<Value = (Vec<usize>, TensorData)> {
        (1usize..4, 1usize..5).prop_flat_map(|(a, b)| {
            let n = a * b;
            prop_oneof![
                proptest::collection::vec(any::<f32>(), n).prop_map(TensorData::F32),
                proptest::collection::vec(any::<f64>(), n).prop_map(TensorData::F64),
                proptest::collection::vec(any::<i64>(), n).prop_map(TensorData::I64),
            ]
            .prop_map(move |d| (vec![a, b], d))
        })
    }

    proptest! {
        #[test]
        fn bytes_round_trip_bit_exactly((dims, data) in data_strategy()) {
            let t = TensorRecord::new("t", dims, data).unwrap();
            let bytes = encode_tensor(&t).unwrap();
            let back = decode_tensor("t", &bytes).unwrap();
            prop_assert_eq!(encode_tensor(&back).unwrap(), bytes);
        }
    }
}
