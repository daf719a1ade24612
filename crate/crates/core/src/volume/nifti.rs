//! Minimal NIfTI-1 reader: one 3D frame of uint8, int16 or float32 voxels,
//! optionally gzip-compressed.

use std::fs;
use std::io::Read;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::GzDecoder;

use super::Volume;
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

#[derive(Debug)]
struct Header {
    dims: [usize; 3],
    datatype: i16,
    pixdim: [f32; 3],
    vox_offset: usize,
    scl_slope: f32,
    scl_inter: f32,
    little_endian: bool,
}

pub fn load_nifti_subset(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let raw = fs::read(path)?;
    let bytes = if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        out
    } else {
        raw
    };
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<Volume> {
    let hdr = parse_header(bytes)?;
    let n = hdr.dims[0] * hdr.dims[1] * hdr.dims[2];
    let width = match hdr.datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        _ => unreachable!("datatype checked in parse_header"),
    };
    let start = hdr.vox_offset;
    let end = start + n * width;
    if bytes.len() < end {
        return Err(Error::format(format!(
            "nifti payload truncated: need {end} bytes, have {}",
            bytes.len()
        )));
    }
    let payload = &bytes[start..end];
    let mut data: Vec<f32> = match hdr.datatype {
        DT_UINT8 => payload.iter().map(|&b| b as f32).collect(),
        DT_INT16 => payload
            .chunks_exact(2)
            .map(|c| {
                let v = if hdr.little_endian {
                    LittleEndian::read_i16(c)
                } else {
                    BigEndian::read_i16(c)
                };
                v as f32
            })
            .collect(),
        _ => payload
            .chunks_exact(4)
            .map(|c| {
                if hdr.little_endian {
                    LittleEndian::read_f32(c)
                } else {
                    BigEndian::read_f32(c)
                }
            })
            .collect(),
    };
    if hdr.scl_slope != 0.0 && hdr.scl_slope.is_finite() {
        for v in &mut data {
            *v = *v * hdr.scl_slope + hdr.scl_inter;
        }
    }
    Volume::new(hdr.dims, hdr.pixdim, data)
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::format("file shorter than a NIfTI-1 header"));
    }
    let little_endian = if LittleEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
        true
    } else if BigEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
        false
    } else {
        return Err(Error::format("sizeof_hdr is not 348; not a NIfTI-1 file"));
    };
    let i16_at = |off: usize| {
        if little_endian {
            LittleEndian::read_i16(&bytes[off..off + 2])
        } else {
            BigEndian::read_i16(&bytes[off..off + 2])
        }
    };
    let f32_at = |off: usize| {
        if little_endian {
            LittleEndian::read_f32(&bytes[off..off + 4])
        } else {
            BigEndian::read_f32(&bytes[off..off + 4])
        }
    };

    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = i16_at(40 + 2 * i);
    }
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::format(format!("invalid dim[0] = {ndim}")));
    }
    if dim[4..=ndim as usize].iter().any(|&d| d > 1) {
        return Err(Error::format(format!(
            "only single 3D frames are supported, got dim = {:?}",
            &dim[..=ndim as usize]
        )));
    }
    let mut dims = [1usize; 3];
    for a in 0..3usize.min(ndim as usize) {
        let d = dim[a + 1];
        if d < 1 {
            return Err(Error::format(format!("dim[{}] = {d} is not positive", a + 1)));
        }
        dims[a] = d as usize;
    }

    let datatype = i16_at(70);
    if !matches!(datatype, DT_UINT8 | DT_INT16 | DT_FLOAT32) {
        return Err(Error::format(format!(
            "unsupported datatype code {datatype} (supported: uint8, int16, float32)"
        )));
    }

    let mut pixdim = [1f32; 3];
    for (a, p) in pixdim.iter_mut().enumerate() {
        let v = f32_at(80 + 4 * a).abs();
        if v.is_finite() && v > 0.0 {
            *p = v;
        }
    }

    let vox_offset = f32_at(108);
    // 352 = header plus the 4-byte extension flag of single-file .nii
    let vox_offset = if vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f32 {
        vox_offset as usize
    } else {
        352
    };

    Ok(Header {
        dims,
        datatype,
        pixdim,
        vox_offset,
        scl_slope: f32_at(112),
        scl_inter: f32_at(116),
        little_endian,
    })
}
