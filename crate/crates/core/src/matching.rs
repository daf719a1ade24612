//! Nearest-neighbour descriptor matching and Hough consensus on a 7-DOF
//! similarity transform (isotropic scale, rotation, translation).

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::descriptor::{Descriptor, Feature};
use crate::error::{Error, Result};
use crate::orient::{nearest_direction, sphere_directions};
use crate::parallel::Exec;

pub const DEFAULT_RATIO_MAX: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub index_a: usize,
    pub index_b: usize,
    pub distance: f64,
    pub second_distance: f64,
}

/// Hamming distance for BRIEF, Euclidean distance between rank vectors
/// otherwise. Errors on mismatched kinds or lengths.
pub fn descriptor_distance(a: &Descriptor, b: &Descriptor) -> Result<f64> {
    match (a, b) {
        (Descriptor::Brief(x), Descriptor::Brief(y)) if x.n == y.n => Ok(x.hamming(y) as f64),
        (Descriptor::SiftRank(x), Descriptor::SiftRank(y)) => Ok(rank_distance(
            x.ranks.iter().map(|&r| r as i64),
            y.ranks.iter().map(|&r| r as i64),
        )),
        (Descriptor::Rrief(x), Descriptor::Rrief(y)) if x.ranks.len() == y.ranks.len() => Ok(rank_distance(
            x.ranks.iter().map(|&r| r as i64),
            y.ranks.iter().map(|&r| r as i64),
        )),
        _ => Err(Error::param(format!(
            "cannot compare {} ({} elements) with {} ({} elements)",
            a.kind(),
            a.len(),
            b.kind(),
            b.len()
        ))),
    }
}

fn rank_distance(a: impl Iterator<Item = i64>, b: impl Iterator<Item = i64>) -> f64 {
    let ss: i64 = a.zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (ss as f64).sqrt()
}

/// For each query, its nearest and second-nearest targets under `dist`
/// (lower index wins ties); kept when `nearest ≤ ratio_max · second`.
pub fn match_by_distance(
    num_a: usize,
    num_b: usize,
    dist: impl Fn(usize, usize) -> f64 + Sync,
    ratio_max: f64,
    exec: &Exec,
) -> Result<Vec<Match>> {
    if num_b < 2 {
        return Err(Error::param(format!("need at least 2 target descriptors, got {num_b}")));
    }
    if !(ratio_max > 0.0) {
        return Err(Error::param(format!("ratio_max must be > 0, got {ratio_max}")));
    }
    let found: Vec<Option<Match>> = exec.install(|| {
        (0..num_a)
            .into_par_iter()
            .map(|i| {
                let (mut best, mut best_d) = (usize::MAX, f64::INFINITY);
                let mut second_d = f64::INFINITY;
                for j in 0..num_b {
                    let d = dist(i, j);
                    if d < best_d {
                        second_d = best_d;
                        best_d = d;
                        best = j;
                    } else if d < second_d {
                        second_d = d;
                    }
                }
                (best_d <= ratio_max * second_d).then_some(Match {
                    index_a: i,
                    index_b: best,
                    distance: best_d,
                    second_distance: second_d,
                })
            })
            .collect()
    });
    Ok(found.into_iter().flatten().collect())
}

pub fn nearest_neighbor_matches(a: &[Descriptor], b: &[Descriptor], ratio_max: f64, exec: &Exec) -> Result<Vec<Match>> {
    if let Some(first) = a.first().or(b.first()) {
        let (kind, len) = (first.kind(), first.len());
        if let Some(bad) = a.iter().chain(b).find(|d| d.kind() != kind || d.len() != len) {
            return Err(Error::param(format!(
                "descriptor sets mix {kind}/{len} with {}/{}",
                bad.kind(),
                bad.len()
            )));
        }
    }
    match_by_distance(
        a.len(),
        b.len(),
        |i, j| descriptor_distance(&a[i], &b[j]).expect("kinds checked"),
        ratio_max,
        exec,
    )
}

/// `x ↦ scale · rotation · x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        SimilarityTransform {
            scale: 1.0 / self.scale,
            rotation: rt,
            translation: -(rt * self.translation) / self.scale,
        }
    }

    /// Rotation angle of this transform's rotation, in degrees.
    pub fn rotation_degrees(&self) -> f64 {
        rotation_angle(&self.rotation).to_degrees()
    }
}

/// Angle of a rotation matrix in radians.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    // ‖R − I‖_F = 2√2·sin(θ/2), better conditioned near 0 than the trace form
    let chord = (r - Matrix3::identity()).norm() / (2.0 * std::f64::consts::SQRT_2);
    2.0 * chord.clamp(0.0, 1.0).asin()
}

/// Angle between two rotations in radians.
pub fn rotation_distance(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    rotation_angle(&(a * b.transpose()))
}

/// The similarity taking keypoint a's frame onto keypoint b's:
/// `s = σ_b/σ_a`, `R = R_b·R_aᵀ`, `t = x_b − s·R·x_a`.
pub fn vote_transform(a: &Feature, b: &Feature) -> SimilarityTransform {
    let scale = b.keypoint.sigma / a.keypoint.sigma;
    let rotation = b.frame.rotation * a.frame.rotation.transpose();
    let xa = Vector3::from(a.keypoint.position);
    let xb = Vector3::from(b.keypoint.position);
    SimilarityTransform {
        scale,
        rotation,
        translation: xb - rotation * xa * scale,
    }
}

/// Closest rotation to `m` in the Frobenius sense.
fn project_to_rotation(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    Some(u * d * vt)
}

/// Least-squares similarity mapping `src[i]` onto `dst[i]` (Umeyama's closed
/// form). `None` when fewer than 3 points or the source is degenerate.
pub fn fit_similarity(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Option<SimilarityTransform> {
    let n = src.len();
    if n < 3 || dst.len() != n {
        return None;
    }
    let inv_n = 1.0 / n as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() * inv_n;
    let mu_d = dst.iter().sum::<Vector3<f64>>() * inv_n;
    let var_s = src.iter().map(|p| (p - mu_s).norm_squared()).sum::<f64>() * inv_n;
    if var_s < 1e-12 {
        return None;
    }
    let mut cov = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        cov += (d - mu_d) * (s - mu_s).transpose();
    }
    cov *= inv_n;
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let sv = svd.singular_values;
    // collinear sources leave the rotation about their axis undetermined
    if sv[1] < 1e-9 * sv[0].max(1e-300) {
        return None;
    }
    let mut d = Vector3::new(1.0, 1.0, 1.0);
    if u.determinant() * vt.determinant() < 0.0 {
        d[2] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&d) * vt;
    let scale = sv.dot(&d) / var_s;
    if !(scale > 0.0) {
        return None;
    }
    Some(SimilarityTransform {
        scale,
        rotation,
        translation: mu_d - rotation * mu_s * scale,
    })
}

/// Mean of per-match votes: geometric-mean scale, chordal-mean rotation,
/// and the translation that best maps the sources given those.
fn mean_vote(votes: &[SimilarityTransform], src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> SimilarityTransform {
    let n = votes.len() as f64;
    let scale = (votes.iter().map(|v| v.scale.ln()).sum::<f64>() / n).exp();
    let sum: Matrix3<f64> = votes.iter().map(|v| v.rotation).sum();
    let rotation = project_to_rotation(&sum).unwrap_or(votes[0].rotation);
    let translation = src
        .iter()
        .zip(dst)
        .map(|(s, d)| d - rotation * s * scale)
        .sum::<Vector3<f64>>()
        / n;
    SimilarityTransform {
        scale,
        rotation,
        translation,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoughParams {
    /// Accumulator bin width in ln(scale).
    pub log_scale_bin: f64,
    /// Accumulator bin width per translation axis, voxels.
    pub translation_bin: f64,
    /// In-plane sectors per rotation-axis direction.
    pub in_plane_sectors: usize,
    pub min_votes: usize,
    pub tol_log_scale: f64,
    pub tol_rotation_deg: f64,
    pub tol_translation: f64,
}

impl Default for HoughParams {
    fn default() -> Self {
        HoughParams {
            log_scale_bin: 0.2,
            translation_bin: 8.0,
            in_plane_sectors: 8,
            min_votes: 3,
            tol_log_scale: 0.25,
            tol_rotation_deg: 15.0,
            tol_translation: 10.0,
        }
    }
}

impl HoughParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("log_scale_bin", self.log_scale_bin),
            ("translation_bin", self.translation_bin),
            ("tol_log_scale", self.tol_log_scale),
            ("tol_rotation_deg", self.tol_rotation_deg),
            ("tol_translation", self.tol_translation),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::param(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.in_plane_sectors == 0 {
            return Err(Error::param("in_plane_sectors must be >= 1"));
        }
        if self.min_votes == 0 {
            return Err(Error::param("min_votes must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Consensus {
    pub transform: SimilarityTransform,
    pub inliers: Vec<Match>,
    /// Votes in the winning accumulator cell.
    pub votes: usize,
}

type Cell = (i64, usize, usize, [i64; 3]);

/// The two bins nearest to `v` on a grid of width `w` (bin k covers
/// `[k·w, (k+1)·w)`).
fn two_bins(v: f64, w: f64) -> [i64; 2] {
    let x = v / w;
    let k = x.floor() as i64;
    if x - k as f64 >= 0.5 {
        [k, k + 1]
    } else {
        [k - 1, k]
    }
}

/// The two sphere directions nearest to `v`.
fn two_directions(v: &Vector3<f64>) -> [usize; 2] {
    let dirs = sphere_directions();
    let first = nearest_direction(v);
    let mut second = if first == 0 { 1 } else { 0 };
    for (i, d) in dirs.iter().enumerate() {
        if i != first && d.dot(v) > dirs[second].dot(v) {
            second = i;
        }
    }
    [first, second]
}

/// The two in-plane sectors nearest to `second` about direction `axis_dir`.
fn two_sectors(axis_dir: usize, second: &Vector3<f64>, sectors: usize) -> [usize; 2] {
    let d = sphere_directions()[axis_dir];
    let helper = if d.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = d.cross(&helper).normalize();
    let v = d.cross(&u);
    let angle = second.dot(&v).atan2(second.dot(&u)).rem_euclid(std::f64::consts::TAU);
    let [a, b] = two_bins(angle, std::f64::consts::TAU / sectors as f64);
    let wrap = |k: i64| k.rem_euclid(sectors as i64) as usize;
    [wrap(a), wrap(b)]
}

/// Whether a match's own transform agrees with `t` within the tolerances.
/// Translation agreement is the residual `‖x_b − t(x_a)‖`.
pub fn agrees(a: &Feature, b: &Feature, t: &SimilarityTransform, params: &HoughParams) -> bool {
    let vote = vote_transform(a, b);
    let residual = (Vector3::from(b.keypoint.position) - t.apply(&Vector3::from(a.keypoint.position))).norm();
    (vote.scale.ln() - t.scale.ln()).abs() <= params.tol_log_scale
        && rotation_distance(&vote.rotation, &t.rotation).to_degrees() <= params.tol_rotation_deg
        && residual <= params.tol_translation
}

fn refine(matches: &[&Match], a: &[Feature], b: &[Feature]) -> SimilarityTransform {
    let src: Vec<Vector3<f64>> = matches.iter().map(|m| Vector3::from(a[m.index_a].keypoint.position)).collect();
    let dst: Vec<Vector3<f64>> = matches.iter().map(|m| Vector3::from(b[m.index_b].keypoint.position)).collect();
    fit_similarity(&src, &dst).unwrap_or_else(|| {
        let votes: Vec<_> = matches.iter().map(|m| vote_transform(&a[m.index_a], &b[m.index_b])).collect();
        mean_vote(&votes, &src, &dst)
    })
}

/// Votes every match's transform into a coarse (ln scale, rotation,
/// translation) accumulator, fits a similarity to the densest cell and
/// returns the matches that agree with it.
///
/// Rotations are binned by the sphere direction of `R·e_x` and the in-plane
/// sector of `R·e_y`; translations by where the transform sends the centroid
/// of the matched `a` keypoints. Each vote lands in the two nearest bins
/// along every accumulator axis.
pub fn hough_consensus(matches: &[Match], a: &[Feature], b: &[Feature], params: &HoughParams) -> Result<Consensus> {
    params.validate()?;
    if matches.is_empty() {
        return Err(Error::NoConsensus {
            votes: 0,
            required: params.min_votes,
        });
    }
    for m in matches {
        if m.index_a >= a.len() || m.index_b >= b.len() {
            return Err(Error::param(format!("match ({}, {}) out of range", m.index_a, m.index_b)));
        }
    }
    let centroid = matches
        .iter()
        .map(|m| Vector3::from(a[m.index_a].keypoint.position))
        .sum::<Vector3<f64>>()
        / matches.len() as f64;

    let mut acc: BTreeMap<Cell, Vec<usize>> = BTreeMap::new();
    for (mi, m) in matches.iter().enumerate() {
        let t = vote_transform(&a[m.index_a], &b[m.index_b]);
        let second = t.rotation.column(1).into_owned();
        let mut rotations: Vec<(usize, usize)> = Vec::with_capacity(4);
        for axis in two_directions(&t.rotation.column(0).into_owned()) {
            for sector in two_sectors(axis, &second, params.in_plane_sectors) {
                if !rotations.contains(&(axis, sector)) {
                    rotations.push((axis, sector));
                }
            }
        }
        let moved = t.apply(&centroid) - centroid;
        for s in two_bins(t.scale.ln(), params.log_scale_bin) {
            for &(axis, sector) in &rotations {
                for tx in two_bins(moved.x, params.translation_bin) {
                    for ty in two_bins(moved.y, params.translation_bin) {
                        for tz in two_bins(moved.z, params.translation_bin) {
                            acc.entry((s, axis, sector, [tx, ty, tz])).or_default().push(mi);
                        }
                    }
                }
            }
        }
    }
    let mut winner: Option<&Vec<usize>> = None;
    for cell in acc.values() {
        if winner.is_none_or(|w| cell.len() > w.len()) {
            winner = Some(cell);
        }
    }
    let winner = winner.expect("at least one vote");
    if winner.len() < params.min_votes {
        return Err(Error::NoConsensus {
            votes: winner.len(),
            required: params.min_votes,
        });
    }

    let seed: Vec<&Match> = winner.iter().map(|&i| &matches[i]).collect();
    let mut transform = refine(&seed, a, b);
    let mut previous: Vec<usize> = Vec::new();
    for _ in 0..10 {
        let ids: Vec<usize> = (0..matches.len())
            .filter(|&i| agrees(&a[matches[i].index_a], &b[matches[i].index_b], &transform, params))
            .collect();
        let next: Vec<&Match> = ids.iter().map(|&i| &matches[i]).collect();
        if next.len() < 3 || ids == previous {
            break;
        }
        previous = ids;
        transform = refine(&next, a, b);
    }
    let inliers: Vec<Match> = matches
        .iter()
        .filter(|m| agrees(&a[m.index_a], &b[m.index_b], &transform, params))
        .copied()
        .collect();
    Ok(Consensus {
        transform,
        inliers,
        votes: winner.len(),
    })
}
