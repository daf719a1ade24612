//! Gaussian scale-space: kernels, separable convolution, octave
//! sub-sampling and difference-of-Gaussian volumes.

use std::path::Path;

use rayon::prelude::*;

use crate::bench::{Recorder, Stage};
use crate::error::{Error, Result};
use crate::parallel::Exec;
use crate::volume::{save_raw, Volume};

/// Octaves stop once any dimension would drop below this.
pub const MIN_OCTAVE_DIM: usize = 16;

pub const DEFAULT_BASE_SIGMA: f64 = 1.6;
pub const DEFAULT_LEVELS_PER_OCTAVE: usize = 6;
pub const DEFAULT_NUM_OCTAVES: usize = 6;

/// Sampled, normalised 1D Gaussian with radius `ceil(3σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel1D {
    sigma: f64,
    radius: usize,
    weights: Vec<f32>,
}

impl GaussianKernel1D {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::param(format!("gaussian sigma must be > 0, got {sigma}")));
        }
        let radius = ((3.0 * sigma).ceil() as usize).max(1);
        let raw: Vec<f64> = (0..=2 * radius)
            .map(|i| {
                let k = i as f64 - radius as f64;
                (-k * k / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        let weights = raw.iter().map(|w| (w / total) as f32).collect();
        Ok(GaussianKernel1D {
            sigma,
            radius,
            weights,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    /// Weight at signed tap offset `k`, zero outside the support.
    pub fn weight_at(&self, k: i64) -> f32 {
        let i = k + self.radius as i64;
        if i < 0 || i as usize >= self.weights.len() {
            0.0
        } else {
            self.weights[i as usize]
        }
    }
}

pub fn gaussian_kernel(sigma: f64) -> Result<GaussianKernel1D> {
    GaussianKernel1D::new(sigma)
}

fn axis_stride(dims: [usize; 3], axis: usize) -> usize {
    match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    }
}

/// Convolves the output voxels `start..start + block.len()` along `axis`
/// with replicate padding. Taps are summed in ascending order whatever the
/// partition, so results are independent of how the volume is split.
fn convolve_block(src: &[f32], dims: [usize; 3], axis: usize, kernel: &GaussianKernel1D, start: usize, block: &mut [f32]) {
    let stride = axis_stride(dims, axis);
    let n = dims[axis];
    let r = kernel.radius;
    let w = kernel.weights.as_slice();
    for (j, o) in block.iter_mut().enumerate() {
        let i = start + j;
        let c = (i / stride) % n;
        let mut acc = 0f32;
        if c >= r && c + r < n {
            let base = i - r * stride;
            for (t, &wt) in w.iter().enumerate() {
                acc += wt * src[base + t * stride];
            }
        } else {
            let line = i - c * stride;
            for (t, &wt) in w.iter().enumerate() {
                let cc = (c as i64 + t as i64 - r as i64).clamp(0, n as i64 - 1) as usize;
                acc += wt * src[line + cc * stride];
            }
        }
        *o = acc;
    }
}

fn convolve_axis(src: &[f32], dims: [usize; 3], axis: usize, kernel: &GaussianKernel1D, exec: &Exec) -> Vec<f32> {
    let chunk = exec.chunk_voxels();
    let mut out = vec![0f32; src.len()];
    exec.install(|| {
        out.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(ci, block)| convolve_block(src, dims, axis, kernel, ci * chunk, block))
    });
    out
}

/// Single-threaded separable blur of a small buffer, used for descriptor
/// patches that are already processed in parallel.
pub(crate) fn convolve_separable_serial(data: &[f32], dims: [usize; 3], kernel: &GaussianKernel1D) -> Vec<f32> {
    let mut a = data.to_vec();
    let mut b = vec![0f32; data.len()];
    for axis in 0..3 {
        convolve_block(&a, dims, axis, kernel, 0, &mut b);
        std::mem::swap(&mut a, &mut b);
    }
    a
}

/// Blurs along x, then y, then z with the same kernel.
pub fn convolve_separable(v: &Volume, kernel: &GaussianKernel1D, exec: &Exec) -> Volume {
    let dims = v.dims();
    let x = convolve_axis(v.data(), dims, 0, kernel, exec);
    let y = convolve_axis(&x, dims, 1, kernel, exec);
    let z = convolve_axis(&y, dims, 2, kernel, exec);
    Volume::from_parts(dims, v.spacing(), z)
}

/// Halves every dimension; each output voxel is the mean of its 2×2×2 block.
pub fn subsample_half(v: &Volume, exec: &Exec) -> Result<Volume> {
    let [nx, ny, nz] = v.dims();
    if nx < 2 || ny < 2 || nz < 2 {
        return Err(Error::Size(format!("cannot subsample dims {:?}: every dim must be >= 2", v.dims())));
    }
    let out_dims = [nx / 2, ny / 2, nz / 2];
    let [ox, oy, _] = out_dims;
    let src = v.data();
    let chunk = exec.chunk_voxels();
    let mut out = vec![0f32; out_dims.iter().product()];
    exec.install(|| {
        out.par_chunks_mut(chunk).enumerate().for_each(|(ci, block)| {
            let start = ci * chunk;
            for (j, o) in block.iter_mut().enumerate() {
                let i = start + j;
                let x = 2 * (i % ox);
                let y = 2 * ((i / ox) % oy);
                let z = 2 * (i / (ox * oy));
                let mut acc = 0f32;
                for dz in 0..2 {
                    for dy in 0..2 {
                        let row = nx * ((y + dy) + ny * (z + dz));
                        acc += src[row + x] + src[row + x + 1];
                    }
                }
                *o = acc * 0.125;
            }
        })
    });
    let s = v.spacing();
    Ok(Volume::from_parts(out_dims, [s[0] * 2.0, s[1] * 2.0, s[2] * 2.0], out))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PyramidParams {
    pub base_sigma: f64,
    pub levels_per_octave: usize,
    pub num_octaves: usize,
}

impl Default for PyramidParams {
    fn default() -> Self {
        PyramidParams {
            base_sigma: DEFAULT_BASE_SIGMA,
            levels_per_octave: DEFAULT_LEVELS_PER_OCTAVE,
            num_octaves: DEFAULT_NUM_OCTAVES,
        }
    }
}

impl PyramidParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_sigma > 0.0) || !self.base_sigma.is_finite() {
            return Err(Error::param(format!("base_sigma must be > 0, got {}", self.base_sigma)));
        }
        // kappa = 2^(1/(L-3)) needs L > 3, and detection needs 3 DoG levels
        if self.levels_per_octave < 4 {
            return Err(Error::param(format!(
                "levels_per_octave must be >= 4, got {}",
                self.levels_per_octave
            )));
        }
        if self.num_octaves < 1 {
            return Err(Error::param("num_octaves must be >= 1"));
        }
        Ok(())
    }

    /// Multiplicative σ step between adjacent levels.
    pub fn kappa(&self) -> f64 {
        2f64.powf(1.0 / (self.levels_per_octave as f64 - 3.0))
    }

    /// Octave-local σ of every level: `base · κ^i`.
    pub fn level_sigmas(&self) -> Vec<f64> {
        let k = self.kappa();
        (0..self.levels_per_octave)
            .map(|i| self.base_sigma * k.powi(i as i32))
            .collect()
    }

    /// Level whose σ is `2 · base`, the source of the next octave.
    pub fn handoff_level(&self) -> usize {
        self.levels_per_octave - 3
    }
}

#[derive(Debug, Clone)]
pub struct Octave {
    pub index: usize,
    pub dims: [usize; 3],
    /// Blurred volumes in increasing σ.
    pub levels: Vec<Volume>,
    /// Octave-local σ of each level (voxel units of this octave).
    pub sigmas: Vec<f64>,
}

impl Octave {
    pub fn scale(&self) -> f64 {
        (1u64 << self.index) as f64
    }

    /// σ of `level` in base-volume voxel units.
    pub fn absolute_sigma(&self, level: usize) -> f64 {
        self.sigmas[level] * self.scale()
    }
}

#[derive(Debug, Clone)]
pub struct GaussianPyramid {
    pub params: PyramidParams,
    pub octaves: Vec<Octave>,
}

impl GaussianPyramid {
    pub fn num_octaves(&self) -> usize {
        self.octaves.len()
    }

    /// Dumps every level as `oct<o>_lvl<i>_sigma<σ>.f32` under `dir`.
    pub fn dump(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for oct in &self.octaves {
            for (i, level) in oct.levels.iter().enumerate() {
                let name = format!("oct{}_lvl{}_sigma{:.3}.f32", oct.index, i, oct.absolute_sigma(i));
                save_raw(level, dir.join(name))?;
            }
        }
        Ok(())
    }
}

/// Octaves that fit `dims` given the minimum octave size, capped at `requested`.
pub fn octaves_for(dims: [usize; 3], requested: usize) -> usize {
    let mut d = dims;
    let mut count = 0;
    while count < requested && d.iter().all(|&n| n >= MIN_OCTAVE_DIM) {
        count += 1;
        d = [d[0] / 2, d[1] / 2, d[2] / 2];
    }
    count
}

pub fn build_gaussian_pyramid(v: &Volume, params: PyramidParams, exec: &Exec) -> Result<GaussianPyramid> {
    build_gaussian_pyramid_recorded(v, params, exec, &mut Recorder::disabled())
}

pub(crate) fn build_gaussian_pyramid_recorded(
    v: &Volume,
    params: PyramidParams,
    exec: &Exec,
    rec: &mut Recorder,
) -> Result<GaussianPyramid> {
    params.validate()?;
    let count = octaves_for(v.dims(), params.num_octaves);
    if count == 0 {
        return Err(Error::Size(format!(
            "volume dims {:?} below the minimum octave size {MIN_OCTAVE_DIM}",
            v.dims()
        )));
    }
    let sigmas = params.level_sigmas();
    let mut octaves: Vec<Octave> = Vec::with_capacity(count);
    for o in 0..count {
        let first = match octaves.last() {
            None => {
                let k = GaussianKernel1D::new(params.base_sigma)?;
                rec.time(Stage::Convolution, o, 0, || convolve_separable(v, &k, exec))
            }
            Some(prev) => {
                let src = &prev.levels[params.handoff_level()];
                rec.time(Stage::Subsample, o, 0, || subsample_half(src, exec))?
            }
        };
        let mut levels = Vec::with_capacity(params.levels_per_octave);
        levels.push(first);
        for i in 1..params.levels_per_octave {
            let inc = (sigmas[i] * sigmas[i] - sigmas[i - 1] * sigmas[i - 1]).sqrt();
            let k = GaussianKernel1D::new(inc)?;
            let next = rec.time(Stage::Convolution, o, i, || convolve_separable(&levels[i - 1], &k, exec));
            levels.push(next);
        }
        octaves.push(Octave {
            index: o,
            dims: levels[0].dims(),
            levels,
            sigmas: sigmas.clone(),
        });
    }
    Ok(GaussianPyramid { params, octaves })
}

#[derive(Debug, Clone)]
pub struct DogOctave {
    pub index: usize,
    pub dims: [usize; 3],
    /// `levels[i] = gauss[i] − gauss[i+1]`.
    pub levels: Vec<Volume>,
    /// Octave-local σ of the finer Gaussian of each difference.
    pub sigmas: Vec<f64>,
}

impl DogOctave {
    pub fn scale(&self) -> f64 {
        (1u64 << self.index) as f64
    }
}

#[derive(Debug, Clone)]
pub struct DogPyramid {
    pub octaves: Vec<DogOctave>,
}

/// Voxelwise `a − b`.
pub fn difference(a: &Volume, b: &Volume, exec: &Exec) -> Result<Volume> {
    if a.dims() != b.dims() {
        return Err(Error::param(format!("dims differ: {:?} vs {:?}", a.dims(), b.dims())));
    }
    let (x, y) = (a.data(), b.data());
    let chunk = exec.chunk_voxels();
    let mut out = vec![0f32; x.len()];
    exec.install(|| {
        out.par_chunks_mut(chunk).enumerate().for_each(|(ci, block)| {
            let start = ci * chunk;
            for (j, o) in block.iter_mut().enumerate() {
                *o = x[start + j] - y[start + j];
            }
        })
    });
    Ok(Volume::from_parts(a.dims(), a.spacing(), out))
}

pub fn build_dog_pyramid(g: &GaussianPyramid, exec: &Exec) -> Result<DogPyramid> {
    build_dog_pyramid_recorded(g, exec, &mut Recorder::disabled())
}

pub(crate) fn build_dog_pyramid_recorded(g: &GaussianPyramid, exec: &Exec, rec: &mut Recorder) -> Result<DogPyramid> {
    let mut octaves = Vec::with_capacity(g.octaves.len());
    for oct in &g.octaves {
        if oct.levels.len() < 2 {
            return Err(Error::param("DoG needs at least 2 Gaussian levels per octave"));
        }
        let mut levels = Vec::with_capacity(oct.levels.len() - 1);
        for i in 0..oct.levels.len() - 1 {
            let d = rec.time(Stage::Dog, oct.index, i, || difference(&oct.levels[i], &oct.levels[i + 1], exec))?;
            levels.push(d);
        }
        octaves.push(DogOctave {
            index: oct.index,
            dims: oct.dims,
            levels,
            sigmas: oct.sigmas[..oct.sigmas.len() - 1].to_vec(),
        });
    }
    Ok(DogPyramid { octaves })
}
