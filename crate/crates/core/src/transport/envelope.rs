//! FLUP v1 byte layout (all integers little-endian):
//!
//! ```text
//! "FLUP" | version u16 | msg_type u8 | round u32 | sender u32 | num_samples u64 | tensor_count u32
//! per tensor: name_len u16 | name (UTF-8) | dtype u8 | ndim u8 | dims u32 × ndim | payload
//! crc32 u32 (IEEE, over every preceding byte)
//! ```
//!
//! Payloads are row-major IEEE-754 values (f32 or f64) with no padding.

use std::fs;
use std::path::Path;

use bytes::{BufMut, Bytes};

use crate::nn::ParamSet;
use crate::tensor::{DType, Scalar, Tensor, TensorData};

use super::{DecodeError, EncodeError, TransportError};

pub const FLUP_MAGIC: [u8; 4] = *b"FLUP";
pub const FLUP_VERSION: u16 = 1;
/// Fixed header length before the first tensor.
pub const HEADER_LEN: usize = 4 + 2 + 1 + 4 + 4 + 8 + 4;
pub const SERVER_ID: u32 = 0xFFFF_FFFF;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MsgType {
    GlobalModel = 0,
    ClientUpdate = 1,
    ControlState = 2,
    RoundDone = 3,
    Stop = 4,
}

impl MsgType {
    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => MsgType::GlobalModel,
            1 => MsgType::ClientUpdate,
            2 => MsgType::ControlState,
            3 => MsgType::RoundDone,
            4 => MsgType::Stop,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WireTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: TensorData,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Envelope {
    pub msg_type: MsgType,
    pub round: u32,
    pub sender: u32,
    pub num_samples: u64,
    pub tensors: Vec<WireTensor>,
}

/// Prefix of auxiliary scalar entries that are not model tensors.
const META_PREFIX: &str = "meta.";

impl Envelope {
    pub fn new(msg_type: MsgType, round: u32, sender: u32, num_samples: u64) -> Self {
        Self {
            msg_type,
            round,
            sender,
            num_samples,
            tensors: Vec::new(),
        }
    }

    /// Appends every entry of `params` in its order.
    pub fn push_params<T: Scalar>(&mut self, params: &ParamSet<T>) {
        for (name, t) in params.iter() {
            self.tensors.push(WireTensor {
                name: name.to_string(),
                dims: t.shape().to_vec(),
                data: T::into_data(t.data().to_vec()),
            });
        }
    }

    pub fn with_params<T: Scalar>(mut self, params: &ParamSet<T>) -> Self {
        self.push_params(params);
        self
    }

    /// Appends a rank-0 f64 entry named `meta.<key>`.
    pub fn push_meta(&mut self, key: &str, value: f64) {
        self.tensors.push(WireTensor {
            name: format!("{META_PREFIX}{key}"),
            dims: Vec::new(),
            data: TensorData::F64(vec![value]),
        });
    }

    pub fn meta(&self, key: &str) -> Option<f64> {
        let name = format!("{META_PREFIX}{key}");
        self.tensors.iter().find(|t| t.name == name).and_then(|t| match &t.data {
            TensorData::F64(v) if v.len() == 1 => Some(v[0]),
            TensorData::F32(v) if v.len() == 1 => Some(v[0] as f64),
            _ => None,
        })
    }

    /// Model tensors (everything but `meta.*`) as a parameter set of `T`.
    pub fn params<T: Scalar>(&self) -> Result<ParamSet<T>, TransportError> {
        let mut out = ParamSet::new();
        for t in self.tensors.iter().filter(|t| !t.name.starts_with(META_PREFIX)) {
            let values = T::from_data(t.data.clone()).ok_or_else(|| {
                TransportError::Payload(format!("{}: carried as {:?}, expected {:?}", t.name, t.data.dtype(), T::DTYPE))
            })?;
            let tensor = Tensor::new(&t.dims, values).map_err(|e| TransportError::Payload(format!("{}: {e}", t.name)))?;
            out.push(t.name.clone(), tensor)
                .map_err(|e| TransportError::Payload(e.to_string()))?;
        }
        Ok(out)
    }
}

pub fn encode_envelope(env: &Envelope) -> Result<Bytes, EncodeError> {
    let mut size = HEADER_LEN + 4;
    for t in &env.tensors {
        size += 2 + t.name.len() + 2 + 4 * t.dims.len() + t.data.len() * t.data.dtype().size_bytes();
    }
    let mut buf = Vec::with_capacity(size);
    buf.put_slice(&FLUP_MAGIC);
    buf.put_u16_le(FLUP_VERSION);
    buf.put_u8(env.msg_type as u8);
    buf.put_u32_le(env.round);
    buf.put_u32_le(env.sender);
    buf.put_u64_le(env.num_samples);
    let count = u32::try_from(env.tensors.len()).map_err(|_| EncodeError::BadTensor {
        name: String::new(),
        reason: "more than u32::MAX tensors".into(),
    })?;
    buf.put_u32_le(count);
    for t in &env.tensors {
        let bad = |reason: String| EncodeError::BadTensor {
            name: t.name.clone(),
            reason,
        };
        let name_len = u16::try_from(t.name.len()).map_err(|_| EncodeError::NameTooLong(t.name.len()))?;
        let ndim = u8::try_from(t.dims.len()).map_err(|_| bad(format!("{} dims exceed 255", t.dims.len())))?;
        let elems: usize = t.dims.iter().product();
        if elems != t.data.len() {
            return Err(bad(format!("dims {:?} imply {elems} values, payload has {}", t.dims, t.data.len())));
        }
        buf.put_u16_le(name_len);
        buf.put_slice(t.name.as_bytes());
        buf.put_u8(t.data.dtype().code());
        buf.put_u8(ndim);
        for &d in &t.dims {
            buf.put_u32_le(u32::try_from(d).map_err(|_| bad(format!("dim {d} exceeds u32")))?);
        }
        match &t.data {
            TensorData::F32(v) => v.iter().for_each(|x| buf.put_f32_le(*x)),
            TensorData::F64(v) => v.iter().for_each(|x| buf.put_f64_le(*x)),
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.put_u32_le(crc);
    Ok(Bytes::from(buf))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(DecodeError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Inverse of [`encode_envelope`].
///
/// Checks run in a fixed order: magic, version, structure (truncation and
/// trailing bytes), checksum, then field values. Lengths are validated
/// against the remaining input before any allocation.
pub fn decode_envelope(bytes: &[u8]) -> Result<Envelope, DecodeError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if magic != FLUP_MAGIC {
        return Err(DecodeError::BadMagic(magic));
    }
    let version = r.u16()?;
    if version != FLUP_VERSION {
        return Err(DecodeError::UnsupportedVersion(version));
    }
    let msg_code = r.u8()?;
    let round = r.u32()?;
    let sender = r.u32()?;
    let num_samples = r.u64()?;
    let count = r.u32()?;

    struct Raw<'a> {
        name: &'a [u8],
        dtype: DType,
        dims: Vec<usize>,
        payload: &'a [u8],
    }
    let mut raws = Vec::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = r.take(name_len)?;
        let dtype_code = r.u8()?;
        let dtype = DType::from_code(dtype_code)
            .ok_or_else(|| DecodeError::InvalidField(format!("dtype code {dtype_code}")))?;
        let ndim = r.u8()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32()? as usize);
        }
        // Saturation makes an overflowing product fail the length check.
        let payload_len = dims.iter().fold(dtype.size_bytes(), |acc, &d| acc.saturating_mul(d));
        let payload = r.take(payload_len)?;
        raws.push(Raw {
            name,
            dtype,
            dims,
            payload,
        });
    }
    let body_end = r.pos;
    let stored = r.u32()?;
    if r.pos != bytes.len() {
        return Err(DecodeError::TrailingBytes(bytes.len() - r.pos));
    }
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(DecodeError::Crc { stored, computed });
    }

    let msg_type = MsgType::from_code(msg_code)
        .ok_or_else(|| DecodeError::InvalidField(format!("message type {msg_code}")))?;
    let mut tensors = Vec::with_capacity(raws.len());
    for raw in raws {
        let name = std::str::from_utf8(raw.name)
            .map_err(|_| DecodeError::InvalidField("tensor name is not UTF-8".into()))?
            .to_string();
        let data = match raw.dtype {
            DType::F32 => TensorData::F32(
                raw.payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
            DType::F64 => TensorData::F64(
                raw.payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            ),
        };
        tensors.push(WireTensor {
            name,
            dims: raw.dims,
            data,
        });
    }
    Ok(Envelope {
        msg_type,
        round,
        sender,
        num_samples,
        tensors,
    })
}

/// Writes an envelope as a `.flup` file.
pub fn write_flup(path: &Path, env: &Envelope) -> Result<(), TransportError> {
    fs::write(path, encode_envelope(env)?)?;
    Ok(())
}

pub fn read_flup(path: &Path) -> Result<Envelope, TransportError> {
    Ok(decode_envelope(&fs::read(path)?)?)
}
