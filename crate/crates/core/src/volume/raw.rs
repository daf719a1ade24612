//! `<name>.f32` little-endian float32 volumes with a `<name>.hdr.txt` sidecar.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};

use super::Volume;
use crate::error::{Error, Result};

/// Sidecar header path for a raw volume file: `a/b.f32` -> `a/b.hdr.txt`.
pub fn header_path(path: &Path) -> PathBuf {
    path.with_extension("hdr.txt")
}

pub fn load_raw(path: impl AsRef<Path>, dims: [usize; 3], spacing: [f32; 3]) -> Result<Volume> {
    let bytes = fs::read(path.as_ref())?;
    let voxels = dims[0] * dims[1] * dims[2];
    if bytes.len() != voxels * 4 {
        return Err(Error::format(format!(
            "{}: {} bytes, expected {} for dims {:?}",
            path.as_ref().display(),
            bytes.len(),
            voxels * 4,
            dims
        )));
    }
    let mut data = vec![0f32; voxels];
    LittleEndian::read_f32_into(&bytes, &mut data);
    Volume::new(dims, spacing, data)
}

/// Loads a raw volume using the geometry recorded in its sidecar header.
pub fn load_raw_with_header(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let text = fs::read_to_string(header_path(path))?;
    let (dims, spacing) = parse_header(&text)?;
    load_raw(path, dims, spacing)
}

pub fn save_raw(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = vec![0u8; volume.len() * 4];
    LittleEndian::write_f32_into(volume.data(), &mut bytes);
    fs::write(path, bytes)?;
    let [nx, ny, nz] = volume.dims();
    let [sx, sy, sz] = volume.spacing();
    let mut hdr = fs::File::create(header_path(path))?;
    writeln!(hdr, "dims: {nx} {ny} {nz}")?;
    writeln!(hdr, "spacing: {sx} {sy} {sz}")?;
    Ok(())
}

fn parse_header(text: &str) -> Result<([usize; 3], [f32; 3])> {
    let mut dims = None;
    let mut spacing = None;
    for line in text.lines() {
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        match key.trim() {
            "dims" => dims = Some(parse_triple::<usize>(rest, "dims")?),
            "spacing" => spacing = Some(parse_triple::<f32>(rest, "spacing")?),
            _ => {}
        }
    }
    match (dims, spacing) {
        (Some(d), Some(s)) => Ok((d, s)),
        _ => Err(Error::format("raw header needs `dims:` and `spacing:` lines")),
    }
}

fn parse_triple<T: std::str::FromStr>(s: &str, what: &str) -> Result<[T; 3]> {
    let parts: Vec<T> = s
        .split_whitespace()
        .map(|t| t.parse::<T>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::format(format!("bad {what} value in raw header: {s:?}")))?;
    <[T; 3]>::try_from(parts).map_err(|_| Error::format(format!("{what} needs exactly 3 values")))
}
