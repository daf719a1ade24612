//! Dominant 3D orientation frames from a discrete spherical histogram of
//! scale-space gradients.

use std::sync::OnceLock;

use nalgebra::{Matrix3, Vector3};

use crate::detect::Keypoint;
use crate::error::{Error, Result};
use crate::scalespace::GaussianPyramid;
use crate::volume::{Volume, VoxelIndex};

pub const DEFAULT_RADIUS_FACTOR: f64 = 4.0;
pub const DEFAULT_SECONDARY_RATIO: f64 = 0.8;
pub const DEFAULT_MAX_FRAMES: usize = 4;

/// Vertices of a once-subdivided icosahedron: 12 vertices plus 30 edge
/// midpoints, projected to the unit sphere. Contains ±x, ±y, ±z.
pub fn sphere_directions() -> &'static [Vector3<f64>] {
    static DIRS: OnceLock<Vec<Vector3<f64>>> = OnceLock::new();
    DIRS.get_or_init(|| {
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let mut verts = Vec::with_capacity(12);
        for &a in &[-1.0, 1.0] {
            for &b in &[-phi, phi] {
                verts.push(Vector3::new(0.0, a, b));
                verts.push(Vector3::new(a, b, 0.0));
                verts.push(Vector3::new(b, 0.0, a));
            }
        }
        let mut dirs: Vec<Vector3<f64>> = verts.iter().map(|v| v.normalize()).collect();
        for i in 0..verts.len() {
            for j in i + 1..verts.len() {
                // icosahedron edges have length 2 with these coordinates
                if ((verts[i] - verts[j]).norm() - 2.0).abs() < 1e-9 {
                    dirs.push((verts[i] + verts[j]).normalize());
                }
            }
        }
        debug_assert_eq!(dirs.len(), 42);
        dirs
    })
}

/// Index of the direction with the largest dot product (lowest index on ties).
pub fn nearest_direction(v: &Vector3<f64>) -> usize {
    let mut best = 0;
    let mut best_dot = f64::NEG_INFINITY;
    for (i, d) in sphere_directions().iter().enumerate() {
        let dot = d.dot(v);
        if dot > best_dot {
            best_dot = dot;
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct SphericalHistogram {
    pub weights: Vec<f64>,
}

impl SphericalHistogram {
    pub fn zeros() -> Self {
        SphericalHistogram {
            weights: vec![0.0; sphere_directions().len()],
        }
    }

    pub fn directions(&self) -> &'static [Vector3<f64>] {
        sphere_directions()
    }

    pub fn max_weight(&self) -> f64 {
        self.weights.iter().cloned().fold(0.0, f64::max)
    }
}

/// Right-handed orthonormal frame; columns are the local x, y, z axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientationFrame {
    pub rotation: Matrix3<f64>,
}

impl OrientationFrame {
    pub fn identity() -> Self {
        OrientationFrame {
            rotation: Matrix3::identity(),
        }
    }

    pub fn from_axes(primary: Vector3<f64>, secondary: Vector3<f64>) -> Self {
        let third = primary.cross(&secondary);
        OrientationFrame {
            rotation: Matrix3::from_columns(&[primary, secondary, third]),
        }
    }

    pub fn is_rotation(&self, tol: f64) -> bool {
        let r = &self.rotation;
        (r.transpose() * r - Matrix3::identity()).abs().max() <= tol && (r.determinant() - 1.0).abs() <= tol
    }

    /// Row-major entries.
    pub fn to_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]]
    }

    pub fn from_row_major(m: [f64; 9]) -> Self {
        OrientationFrame {
            rotation: Matrix3::from_row_slice(&m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientationParams {
    pub radius_factor: f64,
    pub secondary_ratio: f64,
    pub max_frames: usize,
    /// Refine axes off the histogram directions ([`refine_frame`]).
    pub refine: bool,
}

impl Default for OrientationParams {
    fn default() -> Self {
        OrientationParams {
            radius_factor: DEFAULT_RADIUS_FACTOR,
            secondary_ratio: DEFAULT_SECONDARY_RATIO,
            max_frames: DEFAULT_MAX_FRAMES,
            refine: true,
        }
    }
}

impl OrientationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius_factor > 0.0) || !self.radius_factor.is_finite() {
            return Err(Error::param(format!("radius_factor must be > 0, got {}", self.radius_factor)));
        }
        if !(self.secondary_ratio > 0.0 && self.secondary_ratio <= 1.0) {
            return Err(Error::param(format!(
                "secondary_ratio must be in (0, 1], got {}",
                self.secondary_ratio
            )));
        }
        if self.max_frames == 0 {
            return Err(Error::param("max_frames must be >= 1"));
        }
        Ok(())
    }
}

/// The Gaussian level a keypoint was detected on.
pub fn keypoint_level<'a>(pyr: &'a GaussianPyramid, kp: &Keypoint) -> Result<&'a Volume> {
    pyr.octaves
        .get(kp.octave)
        .and_then(|o| o.levels.get(kp.level))
        .ok_or_else(|| Error::param(format!("keypoint octave {} level {} not in pyramid", kp.octave, kp.level)))
}

/// Lattice voxels within `radius` of `centre`, clipped to the volume.
pub(crate) fn ball_voxels(v: &Volume, centre: [f64; 3], radius: f64) -> impl Iterator<Item = (VoxelIndex, Vector3<f64>)> + '_ {
    let dims = v.dims();
    let lo: [i64; 3] = std::array::from_fn(|a| (centre[a] - radius).ceil().max(0.0) as i64);
    let hi: [i64; 3] = std::array::from_fn(|a| ((centre[a] + radius).floor() as i64).min(dims[a] as i64 - 1));
    let r2 = radius * radius;
    (lo[2]..=hi[2]).flat_map(move |z| {
        (lo[1]..=hi[1]).flat_map(move |y| {
            (lo[0]..=hi[0]).filter_map(move |x| {
                let d = Vector3::new(x as f64 - centre[0], y as f64 - centre[1], z as f64 - centre[2]);
                (d.norm_squared() <= r2).then(|| (VoxelIndex::new(x as usize, y as usize, z as usize), d))
            })
        })
    })
}

pub(crate) fn gradient(v: &Volume, idx: VoxelIndex) -> Vector3<f64> {
    let g = v.central_gradient(idx);
    Vector3::new(g[0] as f64, g[1] as f64, g[2] as f64)
}

/// Gradient vectors within `radius_factor·σ` of the keypoint, each with its
/// Gaussian window weight (sd half the radius), in z, y, x voxel order.
pub(crate) fn gradient_samples(pyr: &GaussianPyramid, kp: &Keypoint, radius_factor: f64) -> Result<Vec<(Vector3<f64>, f64)>> {
    let level = keypoint_level(pyr, kp)?;
    let centre = kp.local_position();
    let radius = radius_factor * kp.local_sigma();
    let window = radius / 2.0;
    let mut visited = 0usize;
    let mut out = Vec::new();
    for (idx, d) in ball_voxels(level, centre, radius) {
        visited += 1;
        let g = gradient(level, idx);
        if g.norm() == 0.0 {
            continue;
        }
        out.push((g, (-d.norm_squared() / (2.0 * window * window)).exp()));
    }
    if visited == 0 {
        return Err(Error::EmptyHistogram(format!(
            "neighbourhood of keypoint at {:?} lies outside the volume",
            kp.position
        )));
    }
    Ok(out)
}

fn histogram_of(samples: &[(Vector3<f64>, f64)]) -> SphericalHistogram {
    let mut hist = SphericalHistogram::zeros();
    for (g, w) in samples {
        hist.weights[nearest_direction(g)] += g.norm() * w;
    }
    hist
}

/// Magnitude-weighted histogram of gradient directions within
/// `radius_factor·σ` of the keypoint, under a Gaussian window of half that
/// radius.
pub fn gradient_histogram(pyr: &GaussianPyramid, kp: &Keypoint, radius_factor: f64) -> Result<SphericalHistogram> {
    Ok(histogram_of(&gradient_samples(pyr, kp, radius_factor)?))
}

/// One frame per direction whose weight reaches `secondary_ratio × max`,
/// strongest first, at most `max_frames`. Each frame's second axis is the
/// heaviest other direction projected orthogonal to the first.
pub fn dominant_orientations(h: &SphericalHistogram, secondary_ratio: f64, max_frames: usize) -> Result<Vec<OrientationFrame>> {
    if !(secondary_ratio > 0.0 && secondary_ratio <= 1.0) {
        return Err(Error::param(format!("secondary_ratio must be in (0, 1], got {secondary_ratio}")));
    }
    let dirs = sphere_directions();
    let max = h.max_weight();
    if !(max > 0.0) {
        return Ok(Vec::new());
    }
    let mut primaries: Vec<usize> = (0..dirs.len())
        .filter(|&i| h.weights[i] >= secondary_ratio * max)
        .collect();
    primaries.sort_by(|&a, &b| h.weights[b].total_cmp(&h.weights[a]).then(a.cmp(&b)));
    primaries.truncate(max_frames);

    Ok(primaries
        .into_iter()
        .map(|p| {
            let axis = dirs[p];
            let mut best: Option<(usize, Vector3<f64>)> = None;
            for (j, d) in dirs.iter().enumerate() {
                let proj = d - axis * axis.dot(d);
                if proj.norm() < 1e-6 {
                    continue;
                }
                if best.is_none_or(|(b, _)| h.weights[j] > h.weights[b]) {
                    best = Some((j, proj.normalize()));
                }
            }
            let (_, secondary) = best.expect("42 directions always include a non-parallel one");
            OrientationFrame::from_axes(axis, secondary)
        })
        .collect())
}

/// Half-angle of the cone of gradients averaged when refining an axis.
pub const REFINE_CONE_DEG: f64 = 25.0;
const REFINE_ROUNDS: usize = 3;

/// Weighted mean of the vectors within [`REFINE_CONE_DEG`] of `start`,
/// repeated a few times; `start` if the cone is empty.
fn cone_mean(vectors: impl Iterator<Item = (Vector3<f64>, f64)> + Clone, start: Vector3<f64>) -> Vector3<f64> {
    let cos = REFINE_CONE_DEG.to_radians().cos();
    let mut axis = start;
    for _ in 0..REFINE_ROUNDS {
        let mut sum = Vector3::zeros();
        for (v, w) in vectors.clone() {
            let len = v.norm();
            if len > 0.0 && v.dot(&axis) >= len * cos {
                sum += v * w;
            }
        }
        let n = sum.norm();
        if n == 0.0 {
            break;
        }
        axis = sum / n;
    }
    axis
}

/// Moves a histogram frame off the direction lattice: the primary axis to
/// the mean gradient near it, then the secondary to the mean of the
/// gradients' components orthogonal to the new primary near the old one.
pub fn refine_frame(samples: &[(Vector3<f64>, f64)], frame: &OrientationFrame) -> OrientationFrame {
    let r = frame.rotation;
    let primary = cone_mean(samples.iter().copied(), r.column(0).into_owned());
    let orth = samples.iter().map(|&(g, w)| (g - primary * primary.dot(&g), w));
    let s0 = r.column(1).into_owned();
    let s0 = s0 - primary * primary.dot(&s0);
    if s0.norm() < 1e-6 {
        return *frame;
    }
    let secondary = cone_mean(orth, s0.normalize());
    let secondary = secondary - primary * primary.dot(&secondary);
    if secondary.norm() < 1e-6 {
        return *frame;
    }
    OrientationFrame::from_axes(primary, secondary.normalize())
}

/// Histogram plus peak selection for one keypoint, optionally refined.
pub fn assign_orientations(pyr: &GaussianPyramid, kp: &Keypoint, params: &OrientationParams) -> Result<Vec<OrientationFrame>> {
    let samples = gradient_samples(pyr, kp, params.radius_factor)?;
    let frames = dominant_orientations(&histogram_of(&samples), params.secondary_ratio, params.max_frames)?;
    if !params.refine {
        return Ok(frames);
    }
    Ok(frames.iter().map(|f| refine_frame(&samples, f)).collect())
}
