//! Binary tensor container shared by every fixture file.
//!
//! Layout: eight little-endian `u32` header fields
//! `(magic, version, T, H, W, C, dtype, reserved)` followed by the flat
//! little-endian payload. `dtype` is 0 for `f32` and 1 for `f64`.

use std::io::{Read, Write};

use crate::error::{MfmError, Result};
use crate::latents::{LatentGrid, VideoTensor};

pub const MAGIC: u32 = u32::from_le_bytes(*b"MFMT");
pub const VERSION: u32 = 1;
pub const HEADER_FIELDS: usize = 8;
pub const HEADER_BYTES: usize = HEADER_FIELDS * 4;

const CHECKPOINT_MAGIC: u32 = u32::from_le_bytes(*b"MFMC");

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            other => Err(MfmError::Format(format!("unknown dtype tag {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            Payload::F32(_) => DType::F32,
            Payload::F64(_) => DType::F64,
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            Payload::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Payload::F64(v) => v.clone(),
        }
    }
}

/// One decoded container: four dimensions plus a payload.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTensor {
    pub dims: [usize; 4],
    pub payload: Payload,
}

impl RawTensor {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn into_video(self) -> Result<VideoTensor> {
        let [t, h, w, c] = self.dims;
        match self.payload {
            Payload::F32(data) => VideoTensor::new(t, h, w, c, data),
            Payload::F64(_) => Err(MfmError::Format("video containers hold f32 data".into())),
        }
    }

    pub fn into_latent(self) -> Result<LatentGrid> {
        let [t, h, w, c] = self.dims;
        LatentGrid::from_vec(t, h, w, c, self.payload.to_f64())
    }
}

impl From<&VideoTensor> for RawTensor {
    fn from(v: &VideoTensor) -> Self {
        RawTensor {
            dims: [v.frames, v.height, v.width, v.channels],
            payload: Payload::F32(v.data.clone()),
        }
    }
}

impl From<&LatentGrid> for RawTensor {
    fn from(l: &LatentGrid) -> Self {
        RawTensor {
            dims: [l.t, l.h, l.w, l.c],
            payload: Payload::F64(l.data.clone()),
        }
    }
}

fn put_u32(out: &mut impl Write, v: u32) -> Result<()> {
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(input: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn dim_u32(d: usize) -> Result<u32> {
    u32::try_from(d).map_err(|_| MfmError::Format(format!("dimension {d} exceeds u32")))
}

pub fn write_tensor(out: &mut impl Write, tensor: &RawTensor) -> Result<()> {
    if tensor.payload.len() != tensor.numel() {
        return Err(MfmError::shape(
            format!("{:?}", tensor.dims),
            format!("{} values", tensor.payload.len()),
        ));
    }
    put_u32(out, MAGIC)?;
    put_u32(out, VERSION)?;
    for d in tensor.dims {
        put_u32(out, dim_u32(d)?)?;
    }
    put_u32(out, tensor.payload.dtype() as u32)?;
    put_u32(out, 0)?;
    let mut buf = Vec::new();
    match &tensor.payload {
        Payload::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        Payload::F64(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Header fields without the payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub version: u32,
    pub dims: [usize; 4],
    pub dtype: DType,
}

pub fn read_header(input: &mut impl Read) -> Result<Header> {
    let magic = get_u32(input)?;
    if magic != MAGIC {
        return Err(MfmError::Format(format!("bad magic {magic:#010x}")));
    }
    let version = get_u32(input)?;
    if version != VERSION {
        return Err(MfmError::Format(format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = get_u32(input)? as usize;
    }
    let dtype = DType::from_tag(get_u32(input)?)?;
    let _reserved = get_u32(input)?;
    Ok(Header {
        version,
        dims,
        dtype,
    })
}

pub fn read_tensor(input: &mut impl Read) -> Result<RawTensor> {
    let header = read_header(input)?;
    let n: usize = header.dims.iter().product();
    let payload = match header.dtype {
        DType::F32 => {
            let mut bytes = vec![0u8; n * 4];
            input.read_exact(&mut bytes)?;
            Payload::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        }
        DType::F64 => {
            let mut bytes = vec![0u8; n * 8];
            input.read_exact(&mut bytes)?;
            Payload::F64(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        }
    };
    Ok(RawTensor {
        dims: header.dims,
        payload,
    })
}

pub fn video_to_bytes(v: &VideoTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_BYTES + v.data.len() * 4);
    write_tensor(&mut out, &RawTensor::from(v)).expect("in-memory write");
    out
}

pub fn latent_to_bytes(l: &LatentGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_BYTES + l.data.len() * 8);
    write_tensor(&mut out, &RawTensor::from(l)).expect("in-memory write");
    out
}

pub fn save_video(path: impl AsRef<std::path::Path>, v: &VideoTensor) -> Result<()> {
    std::fs::write(path, video_to_bytes(v))?;
    Ok(())
}

pub fn load_video(path: impl AsRef<std::path::Path>) -> Result<VideoTensor> {
    let bytes = std::fs::read(path)?;
    read_tensor(&mut bytes.as_slice())?.into_video()
}

pub fn save_latent(path: impl AsRef<std::path::Path>, l: &LatentGrid) -> Result<()> {
    std::fs::write(path, latent_to_bytes(l))?;
    Ok(())
}

pub fn load_latent(path: impl AsRef<std::path::Path>) -> Result<LatentGrid> {
    let bytes = std::fs::read(path)?;
    read_tensor(&mut bytes.as_slice())?.into_latent()
}

/// A named parameter with an arbitrary-rank shape.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Writes a checkpoint: a count followed by `(name, shape, container)` entries.
/// Each payload is an f64 container with dims `[numel, 1, 1, 1]`.
pub fn write_checkpoint(out: &mut impl Write, entries: &[NamedTensor]) -> Result<()> {
    put_u32(out, CHECKPOINT_MAGIC)?;
    put_u32(out, VERSION)?;
    put_u32(out, dim_u32(entries.len())?)?;
    for e in entries {
        let name = e.name.as_bytes();
        put_u32(out, dim_u32(name.len())?)?;
        out.write_all(name)?;
        put_u32(out, dim_u32(e.shape.len())?)?;
        for &d in &e.shape {
            put_u32(out, dim_u32(d)?)?;
        }
        write_tensor(
            out,
            &RawTensor {
                dims: [e.data.len(), 1, 1, 1],
                payload: Payload::F64(e.data.clone()),
            },
        )?;
    }
    Ok(())
}

pub fn read_checkpoint(input: &mut impl Read) -> Result<Vec<NamedTensor>> {
    if get_u32(input)? != CHECKPOINT_MAGIC {
        return Err(MfmError::Format("not a checkpoint".into()));
    }
    if get_u32(input)? != VERSION {
        return Err(MfmError::Format("unsupported checkpoint version".into()));
    }
    let count = get_u32(input)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let len = get_u32(input)? as usize;
        let mut name = vec![0u8; len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| MfmError::Format("checkpoint name is not UTF-8".into()))?;
        let rank = get_u32(input)? as usize;
        let shape = (0..rank)
            .map(|_| get_u32(input).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let raw = read_tensor(input)?;
        let data = raw.payload.to_f64();
        if data.len() != shape.iter().product::<usize>() {
            return Err(MfmError::Format(format!("entry {name} has inconsistent shape")));
        }
        entries.push(NamedTensor { name, shape, data });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_eight_fields() {
        let v = VideoTensor::filled(1, 8, 8, 3, 0.5);
        let bytes = video_to_bytes(&v);
        assert_eq!(bytes.len(), HEADER_BYTES + 8 * 8 * 3 * 4);
        assert_eq!(&bytes[..4], b"MFMT");
        let header = read_header(&mut bytes.as_slice()).unwrap();
        assert_eq!(header.dims, [1, 8, 8, 3]);
        assert_eq!(header.dtype, DType::F32);
    }

    #[test]
    fn rejects_garbage() {
        let bytes = [0u8; 40];
        assert!(read_tensor(&mut bytes.as_slice()).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let entries = vec![
            NamedTensor {
                name: "blocks.0.attn.q.weight".into(),
                shape: vec![2, 3],
                data: vec![1.0, -2.0, 3.5, 0.0, f64::MIN_POSITIVE, 7.0],
            },
            NamedTensor {
                name: "adapter.conv0.weight".into(),
                shape: vec![3, 3, 3, 5, 1],
                data: (0..135).map(|i| i as f64 * 0.1).collect(),
            },
        ];
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &entries).unwrap();
        assert_eq!(read_checkpoint(&mut buf.as_slice()).unwrap(), entries);
    }

    proptest! {
        #[test]
        fn video_bytes_round_trip(t in 1usize..4, h in 1usize..5, w in 1usize..5, c in 1usize..4, seed in any::<u64>()) {
            let mut s = seed;
            let v = VideoTensor::from_fn(t, h, w, c, |_, _, _, _| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
            });
            let back = read_tensor(&mut video_to_bytes(&v).as_slice()).unwrap().into_video().unwrap();
            prop_assert_eq!(back, v);
        }
    }
}
