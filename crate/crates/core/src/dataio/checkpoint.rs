use std::fs;
use std::path::Path;

use crate::dataio::bytes::{put_f32s, put_u32, Reader};
use crate::error::{Error, Result};
use crate::nn::params::{ModelParams, NamedTensors};
use crate::nn::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"TGAC";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_RANK: u8 = 8;

/// Serializes arbitrary named tensors.
pub fn encode_tensors(tensors: &[(&str, &Tensor<f32>)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_u32(&mut out, tensors.len() as u32);
    for (name, t) in tensors {
        if !t.is_finite() {
            return Err(Error::NonFinite(format!("tensor {name}")));
        }
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len())
            .map_err(|_| Error::InvalidInput(format!("tensor name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(bytes);
        out.push(t.dims().len() as u8);
        for &d in t.dims() {
            put_u32(&mut out, d as u32);
        }
        put_f32s(&mut out, t.data());
    }
    Ok(out)
}

pub fn decode_tensors(buf: &[u8], path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = Reader::new(buf, path);
    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::format(path, format!("bad magic {magic:?}, expected TGAC")));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path,
            format!("checkpoint version {version}, this build reads {CHECKPOINT_VERSION}"),
        ));
    }
    let count = r.u32("tensor count")?;
    let mut out = Vec::new();
    for k in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| Error::format(path, format!("tensor {k}: name is not UTF-8")))?
            .to_string();
        let rank = r.u8("rank")?;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::format(
                path,
                format!("shape table corrupt: tensor {name} has rank {rank}"),
            ));
        }
        let mut dims = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            dims.push(r.u32("dims")? as usize);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= r.remaining() / 4)
            .ok_or_else(|| {
                Error::format(
                    path,
                    format!(
                        "truncated or corrupt shape table: tensor {name} {dims:?} exceeds the {} remaining bytes",
                        r.remaining()
                    ),
                )
            })?;
        let data = r.f32s(numel, &format!("tensor {name}"))?;
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::format(path, format!("tensor {name} has non-finite values")));
        }
        if out.iter().any(|(n, _)| n == &name) {
            return Err(Error::format(path, format!("duplicate tensor {name}")));
        }
        out.push((name, Tensor::from_vec(&dims, data)?));
    }
    if r.remaining() != 0 {
        return Err(Error::format(
            path,
            format!("{} trailing bytes after last tensor", r.remaining()),
        ));
    }
    Ok(out)
}

pub fn save_checkpoint(params: &ModelParams<f32>, path: &Path) -> Result<()> {
    let tensors = params.tensors();
    let bytes = encode_tensors(&tensors)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Every tensor stored in a checkpoint, in file order.
pub fn load_checkpoint_tensors(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensors(&buf, path)
}

/// Loads the 14 model tensors. Additional tensors (for instance a
/// pretrained `emb.pretrained` table) are permitted and ignored here.
pub fn load_checkpoint(path: &Path) -> Result<ModelParams<f32>> {
    let tensors = load_checkpoint_tensors(path)?;
    ModelParams::from_named(tensors).map_err(|e| Error::format(path, e.to_string()))
}
