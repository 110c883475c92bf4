use std::fs::{self, File};
use std::io::Read;
use std::path::Path;

use crate::dataio::bytes::{put_f32s, put_u32, Reader};
use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

pub const FEATURE_MAGIC: [u8; 4] = *b"TGAF";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Per-video matrix of temporal-unit features (`num_units × feature_dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct VideoFeatures {
    pub video_id: String,
    pub units: Tensor<f32>,
    /// Frames covered by one unit (16 for C3D clips).
    pub unit_duration_frames: u32,
}

impl VideoFeatures {
    pub fn num_units(&self) -> usize {
        self.units.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.units.cols()
    }
}

/// Writes a `num_units × feature_dim` matrix.
pub fn write_features(units: &Tensor<f32>, path: &Path) -> Result<()> {
    if units.dims().len() != 2 || units.rows() == 0 || units.cols() == 0 {
        return Err(Error::InvalidInput(format!(
            "feature matrix must be non-empty rank 2, got {:?}",
            units.dims()
        )));
    }
    if !units.is_finite() {
        return Err(Error::NonFinite(format!("features for {}", path.display())));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + units.numel() * 4);
    out.extend_from_slice(&FEATURE_MAGIC);
    put_u32(&mut out, FEATURE_VERSION);
    put_u32(&mut out, units.rows() as u32);
    put_u32(&mut out, units.cols() as u32);
    put_f32s(&mut out, units.data());
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn parse_header(r: &mut Reader<'_>, path: &Path) -> Result<(usize, usize)> {
    let magic = r.take(4, "magic")?;
    if magic != FEATURE_MAGIC {
        return Err(Error::format(path, format!("bad magic {magic:?}, expected TGAF")));
    }
    let version = r.u32("version")?;
    if version != FEATURE_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported feature version {version}"),
        ));
    }
    let n = r.u32("num_units")? as usize;
    let d = r.u32("feature_dim")? as usize;
    if n == 0 || d == 0 {
        return Err(Error::format(path, format!("empty feature matrix {n}x{d}")));
    }
    Ok((n, d))
}

/// Reads only the header: `(num_units, feature_dim)`.
pub fn read_feature_header(path: &Path) -> Result<(usize, usize)> {
    let mut buf = [0u8; HEADER_LEN];
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut got = 0;
    while got < HEADER_LEN {
        match f.read(&mut buf[got..]).map_err(|e| Error::io(path, e))? {
            0 => break,
            k => got += k,
        }
    }
    parse_header(&mut Reader::new(&buf[..got], path), path)
}

pub fn read_features(path: &Path) -> Result<Tensor<f32>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&buf, path);
    let (n, d) = parse_header(&mut r, path)?;
    let data = r.f32s(n * d, "feature payload")?;
    if r.remaining() != 0 {
        return Err(Error::format(
            path,
            format!("{} trailing bytes after payload", r.remaining()),
        ));
    }
    if let Some(i) = data.iter().position(|x| !x.is_finite()) {
        return Err(Error::format(
            path,
            format!("non-finite value at unit {}, dim {}", i / d, i % d),
        ));
    }
    Tensor::from_vec(&[n, d], data)
}
