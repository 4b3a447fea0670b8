//! Volume container: `<name>.json` header plus `<name>.raw` payload of
//! little-endian `f32`, x-fastest, channel-major for multi-channel files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dims, Mask, Volume3};

pub const DTYPE: &str = "float32";
pub const BYTE_ORDER: &str = "little-endian";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub dims: [usize; 3],
    pub voxel_size: [f64; 3],
    #[serde(default = "one")]
    pub channels: usize,
    pub dtype: String,
    pub byte_order: String,
}

fn one() -> usize {
    1
}

/// Header and payload paths for a container base name. A trailing `.json`
/// or `.raw` on `base` is ignored.
pub fn container_paths(base: impl AsRef<Path>) -> (PathBuf, PathBuf) {
    let base = base.as_ref();
    let stem = match base.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("raw") => base.with_extension(""),
        _ => base.to_path_buf(),
    };
    let s = stem.into_os_string();
    let mut json = s.clone();
    json.push(".json");
    let mut raw = s;
    raw.push(".raw");
    (json.into(), raw.into())
}

pub fn container_exists(base: impl AsRef<Path>) -> bool {
    let (json, raw) = container_paths(base);
    json.is_file() && raw.is_file()
}

pub fn save_volume(vol: &Volume3, path: impl AsRef<Path>) -> Result<()> {
    save_channels(std::slice::from_ref(vol), path)
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume3> {
    let (header, mut vols) = load_container(path.as_ref())?;
    if header.channels != 1 {
        return Err(Error::InvalidData(format!(
            "expected a single-channel volume, found {} channels",
            header.channels
        )));
    }
    Ok(vols.remove(0))
}

/// Writes several same-sized volumes as one multi-channel container.
pub fn save_channels(vols: &[Volume3], path: impl AsRef<Path>) -> Result<()> {
    let Some(first) = vols.first() else {
        return Err(Error::InvalidArgument("no channels to save".into()));
    };
    let dims = first.dims();
    if vols.iter().any(|v| v.dims() != dims) {
        return Err(Error::DimsMismatch("channels differ in dims".into()));
    }
    let header = Header {
        dims: dims.as_array(),
        voxel_size: first.voxel_size(),
        channels: vols.len(),
        dtype: DTYPE.into(),
        byte_order: BYTE_ORDER.into(),
    };
    let (json_path, raw_path) = container_paths(path);
    if let Some(parent) = json_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(&header).map_err(|e| Error::json(&json_path, e))?;
    text.push('\n');
    std::fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;

    let mut bytes = Vec::with_capacity(dims.len() * vols.len() * 4);
    for v in vols {
        for &x in v.as_slice() {
            bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    std::fs::write(&raw_path, bytes).map_err(|e| Error::io(&raw_path, e))
}

pub fn load_channels(path: impl AsRef<Path>) -> Result<Vec<Volume3>> {
    Ok(load_container(path.as_ref())?.1)
}

pub fn read_header(path: impl AsRef<Path>) -> Result<Header> {
    let (json_path, _) = container_paths(path);
    let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let header: Header = serde_json::from_str(&text).map_err(|e| Error::json(&json_path, e))?;
    if header.dtype != DTYPE {
        return Err(Error::InvalidData(format!("unsupported dtype '{}'", header.dtype)));
    }
    if header.byte_order != BYTE_ORDER {
        return Err(Error::InvalidData(format!(
            "unsupported byte order '{}'",
            header.byte_order
        )));
    }
    if header.channels == 0 {
        return Err(Error::InvalidData("zero channels".into()));
    }
    Ok(header)
}

fn load_container(path: &Path) -> Result<(Header, Vec<Volume3>)> {
    let header = read_header(path)?;
    let (_, raw_path) = container_paths(path);
    let [nx, ny, nz] = header.dims;
    let dims = Dims::new(nx, ny, nz)?;
    let bytes = std::fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let expected = dims.len() * header.channels * 4;
    if bytes.len() < expected {
        return Err(Error::TruncatedPayload {
            path: raw_path,
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::DimsMismatch(format!(
            "{}: payload holds {} bytes but header {dims} x {} channels implies {expected}",
            raw_path.display(),
            bytes.len(),
            header.channels
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let vols = values
        .chunks_exact(dims.len())
        .map(|c| Ok(Volume3::new(dims, c.to_vec())?.with_voxel_size(header.voxel_size)))
        .collect::<Result<Vec<_>>>()?;
    Ok((header, vols))
}

pub fn save_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    save_volume(&mask.to_volume(), path)
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    Ok(Mask::from_volume(&load_volume(path)?))
}
