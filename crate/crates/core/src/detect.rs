//! 4D extrema of the DoG pyramid via the sum-of-signs extremum map.

use rayon::prelude::*;

use crate::bench::{Recorder, Stage};
use crate::error::{Error, Result};
use crate::parallel::Exec;
use crate::scalespace::DogPyramid;
use crate::volume::Volume;

/// Neighbours of a voxel across space and scale: 26 + 27 + 27.
pub const NEIGHBOURS: i32 = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Peak,
    Valley,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Peak => "peak",
            Polarity::Valley => "valley",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "peak" => Some(Polarity::Peak),
            "valley" => Some(Polarity::Valley),
            _ => None,
        }
    }
}

/// A scale-space extremum in base-volume voxel coordinates.
///
/// `sigma` is the characteristic scale: the σ of a Gaussian blob whose DoG
/// response peaks at this keypoint's level (see [`blob_scale_factor`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    pub position: [f64; 3],
    pub sigma: f64,
    pub octave: usize,
    pub level: usize,
    pub dog_value: f32,
    pub polarity: Polarity,
}

impl Keypoint {
    pub fn octave_scale(&self) -> f64 {
        (1u64 << self.octave) as f64
    }

    /// Position in the voxel grid of this keypoint's octave.
    pub fn local_position(&self) -> [f64; 3] {
        let s = self.octave_scale();
        self.position.map(|p| octave_local(p, s))
    }

    pub fn local_sigma(&self) -> f64 {
        self.sigma / self.octave_scale()
    }
}

/// Octave voxel `i` is the mean of base voxels `2i, 2i+1` (per level of
/// sub-sampling), so its centre sits at `(i + 0.5)·s − 0.5` in the base grid.
pub fn to_base(local: f64, scale: f64) -> f64 {
    (local + 0.5) * scale - 0.5
}

pub fn octave_local(base: f64, scale: f64) -> f64 {
    (base + 0.5) / scale - 0.5
}

/// Ratio between the σ of a Gaussian blob and the σ of the DoG level
/// (`G(σ) − G(κσ)`) whose centre response to that blob is maximal in 3D.
///
/// With `A(s) = (1 + s²/σ_b²)^(-3/2)` the centre response is
/// `A(σ) − A(κσ)`; it peaks at `σ²/σ_b² = (κ^0.8 − 1)/(κ² − κ^0.8)`.
pub fn blob_scale_factor(kappa: f64) -> f64 {
    let k08 = kappa.powf(0.8);
    ((kappa * kappa - k08) / (k08 - 1.0)).sqrt()
}

/// Sum-of-signs values of one interior DoG level; border voxels hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtremumMap {
    pub octave: usize,
    pub level: usize,
    pub dims: [usize; 3],
    pub values: Vec<i8>,
}

impl ExtremumMap {
    pub fn get(&self, x: usize, y: usize, z: usize) -> i8 {
        self.values[x + self.dims[0] * (y + self.dims[1] * z)]
    }
}

#[inline]
fn sign(d: f32) -> i32 {
    if d > 0.0 {
        1
    } else if d < 0.0 {
        -1
    } else {
        0
    }
}

/// For every interior voxel of `cur`, sums `sign(centre − neighbour)` over
/// its 26 spatial neighbours in `cur` and 27 in each of `prev` and `next`.
pub fn sum_of_signs_map(prev: &Volume, cur: &Volume, next: &Volume, exec: &Exec) -> Result<ExtremumMap> {
    let dims = cur.dims();
    if prev.dims() != dims || next.dims() != dims {
        return Err(Error::param(format!(
            "DoG triple dims differ: {:?} / {:?} / {:?}",
            prev.dims(),
            dims,
            next.dims()
        )));
    }
    let [nx, ny, nz] = dims;
    let sy = nx as isize;
    let sz = (nx * ny) as isize;
    let (p, c, n) = (prev.data(), cur.data(), next.data());
    let chunk = exec.chunk_voxels();
    let mut values = vec![0i8; nx * ny * nz];
    exec.install(|| {
        values.par_chunks_mut(chunk).enumerate().for_each(|(ci, block)| {
            let start = ci * chunk;
            for (j, out) in block.iter_mut().enumerate() {
                let i = start + j;
                let x = i % nx;
                let y = (i / nx) % ny;
                let z = i / (nx * ny);
                if x == 0 || y == 0 || z == 0 || x + 1 >= nx || y + 1 >= ny || z + 1 >= nz {
                    continue;
                }
                let centre = c[i];
                let mut acc = 0i32;
                for dz in -1isize..=1 {
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            let k = (i as isize + dx + dy * sy + dz * sz) as usize;
                            acc += sign(centre - p[k]) + sign(centre - n[k]);
                            if k != i {
                                acc += sign(centre - c[k]);
                            }
                        }
                    }
                }
                *out = acc as i8;
            }
        })
    });
    Ok(ExtremumMap {
        octave: 0,
        level: 0,
        dims,
        values,
    })
}

/// Where a DoG level sits in the pyramid, for coordinate rescaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelInfo {
    pub octave: usize,
    pub level: usize,
    /// Octave-local σ of the level.
    pub sigma: f64,
    /// Characteristic-scale multiplier, see [`blob_scale_factor`].
    pub scale_factor: f64,
}

/// Keypoints where the map is within `threshold_band` of ±80 and the DoG
/// magnitude reaches `contrast_min`. Emitted in (z, y, x) scan order.
pub fn extract_extrema(
    map: &ExtremumMap,
    dog_cur: &Volume,
    info: LevelInfo,
    threshold_band: i32,
    contrast_min: f32,
) -> Result<Vec<Keypoint>> {
    if !(0..=NEIGHBOURS).contains(&threshold_band) {
        return Err(Error::param(format!("threshold_band must be in 0..=80, got {threshold_band}")));
    }
    if map.dims != dog_cur.dims() {
        return Err(Error::param("extremum map and DoG dims differ"));
    }
    let scale = (1u64 << info.octave) as f64;
    let [nx, ny, _] = map.dims;
    let mut out = Vec::new();
    for (i, &m) in map.values.iter().enumerate() {
        let m = m as i32;
        let polarity = if m >= NEIGHBOURS - threshold_band {
            Polarity::Peak
        } else if m <= threshold_band - NEIGHBOURS {
            Polarity::Valley
        } else {
            continue;
        };
        // a band this wide admits voxels with a zero score, which are not
        // extrema of anything
        if m == 0 {
            continue;
        }
        let dog = dog_cur.data()[i];
        if dog.abs() < contrast_min {
            continue;
        }
        let local = [(i % nx) as f64, ((i / nx) % ny) as f64, (i / (nx * ny)) as f64];
        out.push(Keypoint {
            position: local.map(|c| to_base(c, scale)),
            sigma: info.sigma * info.scale_factor * scale,
            octave: info.octave,
            level: info.level,
            dog_value: dog,
            polarity,
        });
    }
    Ok(out)
}

pub fn detect_keypoints(dog: &DogPyramid, kappa: f64, threshold_band: i32, contrast_min: f32, exec: &Exec) -> Result<Vec<Keypoint>> {
    detect_keypoints_recorded(dog, kappa, threshold_band, contrast_min, exec, &mut Recorder::disabled())
}

pub(crate) fn detect_keypoints_recorded(
    dog: &DogPyramid,
    kappa: f64,
    threshold_band: i32,
    contrast_min: f32,
    exec: &Exec,
    rec: &mut Recorder,
) -> Result<Vec<Keypoint>> {
    let factor = blob_scale_factor(kappa);
    let mut keypoints = Vec::new();
    for oct in &dog.octaves {
        if oct.levels.len() < 3 {
            return Err(Error::param(format!(
                "octave {} has {} DoG levels, need at least 3",
                oct.index,
                oct.levels.len()
            )));
        }
        for level in 1..oct.levels.len() - 1 {
            let found = rec.time(Stage::PeakDetect, oct.index, level, || -> Result<Vec<Keypoint>> {
                let mut map = sum_of_signs_map(&oct.levels[level - 1], &oct.levels[level], &oct.levels[level + 1], exec)?;
                map.octave = oct.index;
                map.level = level;
                let info = LevelInfo {
                    octave: oct.index,
                    level,
                    sigma: oct.sigmas[level],
                    scale_factor: factor,
                };
                extract_extrema(&map, &oct.levels[level], info, threshold_band, contrast_min)
            })?;
            keypoints.extend(found);
        }
    }
    Ok(keypoints)
}
