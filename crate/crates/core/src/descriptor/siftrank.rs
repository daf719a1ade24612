use crate::detect::Keypoint;
use crate::error::Result;
use crate::orient::{ball_voxels, gradient, keypoint_level, OrientationFrame};
use crate::scalespace::GaussianPyramid;

use super::rank::rank_order;

pub const SIFT_RANK_LEN: usize = 64;

/// Neighbourhood radius in units of the keypoint σ.
pub const SIFT_RANK_RADIUS_FACTOR: f64 = 4.0;

/// 64 ranks of a 2×2×2 spatial × 8 orientation gradient histogram.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SiftRankDescriptor {
    pub ranks: [u8; SIFT_RANK_LEN],
}

/// Octant index from the signs of `v` (bit a set when component a ≥ 0).
#[inline]
fn octant(v: [f64; 3]) -> usize {
    (v[0] >= 0.0) as usize | ((v[1] >= 0.0) as usize) << 1 | ((v[2] >= 0.0) as usize) << 2
}

/// Raw 64-bin histogram: bin `8·spatial + orientation`, where both are sign
/// octants in the keypoint frame and votes carry gradient magnitude.
pub fn sift_rank_histogram(pyr: &GaussianPyramid, kp: &Keypoint, frame: &OrientationFrame) -> Result<[f64; SIFT_RANK_LEN]> {
    let level = keypoint_level(pyr, kp)?;
    let radius = SIFT_RANK_RADIUS_FACTOR * kp.local_sigma();
    let rt = frame.rotation.transpose();
    let mut bins = [0f64; SIFT_RANK_LEN];
    for (idx, d) in ball_voxels(level, kp.local_position(), radius) {
        let g = gradient(level, idx);
        let mag = g.norm();
        if mag == 0.0 {
            continue;
        }
        let dl = rt * d;
        let gl = rt * g;
        let spatial = octant([dl.x, dl.y, dl.z]);
        let orientation = octant([gl.x, gl.y, gl.z]);
        bins[spatial * 8 + orientation] += mag;
    }
    Ok(bins)
}

pub fn rank_histogram(bins: &[f64; SIFT_RANK_LEN]) -> SiftRankDescriptor {
    let mut ranks = [0u8; SIFT_RANK_LEN];
    for (r, v) in ranks.iter_mut().zip(rank_order(bins)) {
        *r = v as u8;
    }
    SiftRankDescriptor { ranks }
}

pub fn sift_rank_descriptor(pyr: &GaussianPyramid, kp: &Keypoint, frame: &OrientationFrame) -> Result<SiftRankDescriptor> {
    Ok(rank_histogram(&sift_rank_histogram(pyr, kp, frame)?))
}
