//! Dense 3D scalar volumes stored x-fastest.

mod nifti;
mod raw;

use crate::error::{Error, Result};

pub use nifti::load_nifti_subset;
pub use raw::{load_raw, load_raw_with_header, save_raw};

/// Integer lattice coordinate into a [`Volume`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelIndex {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl VoxelIndex {
    pub fn new(x: usize, y: usize, z: usize) -> Self {
        VoxelIndex { x, y, z }
    }
}

/// A dense `nx × ny × nz` grid of finite `f32` intensities with voxel spacing
/// in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f32; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f32; 3], data: Vec<f32>) -> Result<Self> {
        validate_geometry(dims, spacing)?;
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(Error::Size(format!(
                "data length {} does not match dims {:?} ({} voxels)",
                data.len(),
                dims,
                expected
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite intensity at linear index {i}")));
        }
        Ok(Volume {
            dims,
            spacing,
            data,
        })
    }

    pub fn filled(dims: [usize; 3], value: f32) -> Result<Self> {
        Self::new(dims, [1.0; 3], vec![value; dims[0] * dims[1] * dims[2]])
    }

    /// Builds a unit-spacing volume by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, [1.0; 3], data)
    }

    /// Internal constructor for stage outputs that are finite by construction.
    pub(crate) fn from_parts(dims: [usize; 3], spacing: [f32; 3], data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), dims[0] * dims[1] * dims[2]);
        Volume {
            dims,
            spacing,
            data,
        }
    }

    pub fn with_spacing(mut self, spacing: [f32; 3]) -> Result<Self> {
        validate_geometry(self.dims, spacing)?;
        self.spacing = spacing;
        Ok(self)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn linear_index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.linear_index(x, y, z)]
    }

    /// Voxel lookup with replicate padding outside the grid.
    #[inline]
    pub fn get_clamped(&self, x: i64, y: i64, z: i64) -> f32 {
        let cx = x.clamp(0, self.dims[0] as i64 - 1) as usize;
        let cy = y.clamp(0, self.dims[1] as i64 - 1) as usize;
        let cz = z.clamp(0, self.dims[2] as i64 - 1) as usize;
        self.get(cx, cy, cz)
    }

    pub fn contains(&self, idx: VoxelIndex) -> bool {
        idx.x < self.dims[0] && idx.y < self.dims[1] && idx.z < self.dims[2]
    }

    /// Applies `f` voxelwise, keeping geometry.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Self::new(self.dims, self.spacing, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Trilinear interpolation at a continuous point in voxel units.
    /// Coordinates outside the grid clamp to the border.
    pub fn trilinear_sample(&self, p: [f64; 3]) -> f32 {
        let mut base = [0usize; 3];
        let mut next = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let hi = (self.dims[a] - 1) as f64;
            let c = p[a].clamp(0.0, hi);
            let f = c.floor();
            base[a] = f as usize;
            next[a] = (base[a] + 1).min(self.dims[a] - 1);
            frac[a] = c - f;
        }
        let [fx, fy, fz] = frac;
        let v = |x: usize, y: usize, z: usize| self.get(x, y, z) as f64;
        let c00 = v(base[0], base[1], base[2]) * (1.0 - fx) + v(next[0], base[1], base[2]) * fx;
        let c10 = v(base[0], next[1], base[2]) * (1.0 - fx) + v(next[0], next[1], base[2]) * fx;
        let c01 = v(base[0], base[1], next[2]) * (1.0 - fx) + v(next[0], base[1], next[2]) * fx;
        let c11 = v(base[0], next[1], next[2]) * (1.0 - fx) + v(next[0], next[1], next[2]) * fx;
        let c0 = c00 * (1.0 - fy) + c10 * fy;
        let c1 = c01 * (1.0 - fy) + c11 * fy;
        (c0 * (1.0 - fz) + c1 * fz) as f32
    }

    /// Finite-difference gradient in intensity per voxel: central differences
    /// in the interior, one-sided on the border, zero along singleton axes.
    pub fn central_gradient(&self, idx: VoxelIndex) -> [f32; 3] {
        let pos = [idx.x, idx.y, idx.z];
        let mut g = [0f32; 3];
        for a in 0..3 {
            let n = self.dims[a];
            if n < 2 {
                continue;
            }
            let at = |c: usize| {
                let mut q = pos;
                q[a] = c;
                self.get(q[0], q[1], q[2])
            };
            let c = pos[a];
            g[a] = if c == 0 {
                at(1) - at(0)
            } else if c == n - 1 {
                at(n - 1) - at(n - 2)
            } else {
                (at(c + 1) - at(c - 1)) * 0.5
            };
        }
        g
    }
}

fn validate_geometry(dims: [usize; 3], spacing: [f32; 3]) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Size(format!("all dims must be >= 1, got {dims:?}")));
    }
    if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::param(format!("spacing must be finite and > 0, got {spacing:?}")));
    }
    Ok(())
}
