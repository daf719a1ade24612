//! Point-pair layouts for BRIEF-style descriptors, in σ-normalised patch
//! coordinates.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Pair offsets never leave this many `sigma_unit`s from the centre.
pub const SUPPORT_RADIUS: f64 = 2.0;

/// How the point pairs are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairMethod {
    /// `p1`, `p2` uniform in the ball of radius `2σ`.
    UniformBall = 1,
    /// `p1`, `p2` isotropic normal `N(0, σ)`.
    Gaussian = 2,
    /// `p1 ~ N(0, σ)`, `p2 ~ N(p1, σ)`.
    GaussianChained = 3,
    /// `p1` at the centre, `p2 ~ N(0, σ)`.
    CentreGaussian = 4,
    /// `p1` at the centre, `p2` on a regular spherical grid.
    CentreGrid = 5,
}

impl PairMethod {
    pub fn from_index(method: u8) -> Result<Self> {
        Ok(match method {
            1 => PairMethod::UniformBall,
            2 => PairMethod::Gaussian,
            3 => PairMethod::GaussianChained,
            4 => PairMethod::CentreGaussian,
            5 => PairMethod::CentreGrid,
            _ => return Err(Error::param(format!("point selection method must be 1..=5, got {method}"))),
        })
    }

    pub fn index(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointPairSet {
    pub method: PairMethod,
    pub sigma_unit: f64,
    pub seed: u64,
    pub pairs: Vec<(Vector3<f64>, Vector3<f64>)>,
}

impl PointPairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn normal(rng: &mut ChaCha8Rng, mean: Vector3<f64>, sd: f64) -> Vector3<f64> {
    let mut draw = || -> f64 { StandardNormal.sample(rng) };
    mean + Vector3::new(draw(), draw(), draw()) * sd
}

/// Rejection-samples `draw` until the point is inside the support ball.
fn within(limit: f64, mut draw: impl FnMut() -> Vector3<f64>) -> Vector3<f64> {
    loop {
        let p = draw();
        if p.norm() <= limit {
            return p;
        }
    }
}

/// Directions of a once-subdivided octahedron: 6 vertices, 12 edge midpoints.
fn octahedron_directions() -> Vec<Vector3<f64>> {
    let axes: [Vector3<f64>; 6] = [
        Vector3::x(),
        -Vector3::x(),
        Vector3::y(),
        -Vector3::y(),
        Vector3::z(),
        -Vector3::z(),
    ];
    let mut dirs = axes.to_vec();
    for i in 0..axes.len() {
        for j in i + 1..axes.len() {
            if axes[i].dot(&axes[j]).abs() < 0.5 {
                dirs.push((axes[i] + axes[j]).normalize());
            }
        }
    }
    dirs
}

pub fn sample_point_pairs(method: u8, n: usize, sigma_unit: f64, seed: u64) -> Result<PointPairSet> {
    let method = PairMethod::from_index(method)?;
    if n == 0 {
        return Err(Error::param("pair count n must be >= 1"));
    }
    if !(sigma_unit > 0.0) || !sigma_unit.is_finite() {
        return Err(Error::param(format!("sigma_unit must be > 0, got {sigma_unit}")));
    }
    let limit = SUPPORT_RADIUS * sigma_unit;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origin = Vector3::zeros();
    let pairs = match method {
        PairMethod::UniformBall => {
            let uniform = |rng: &mut ChaCha8Rng| {
                within(limit, || {
                    Vector3::new(
                        rng.random_range(-limit..=limit),
                        rng.random_range(-limit..=limit),
                        rng.random_range(-limit..=limit),
                    )
                })
            };
            (0..n).map(|_| (uniform(&mut rng), uniform(&mut rng))).collect()
        }
        PairMethod::Gaussian => (0..n)
            .map(|_| {
                let p1 = within(limit, || normal(&mut rng, origin, sigma_unit));
                let p2 = within(limit, || normal(&mut rng, origin, sigma_unit));
                (p1, p2)
            })
            .collect(),
        PairMethod::GaussianChained => (0..n)
            .map(|_| {
                let p1 = within(limit, || normal(&mut rng, origin, sigma_unit));
                let p2 = within(limit, || normal(&mut rng, p1, sigma_unit));
                (p1, p2)
            })
            .collect(),
        PairMethod::CentreGaussian => (0..n)
            .map(|_| (origin, within(limit, || normal(&mut rng, origin, sigma_unit))))
            .collect(),
        PairMethod::CentreGrid => {
            let dirs = octahedron_directions();
            let grid: Vec<Vector3<f64>> = [0.5, 1.0, 1.5, 2.0]
                .iter()
                .flat_map(|&r| dirs.iter().map(move |d| d * (r * sigma_unit)))
                .collect();
            grid.iter().cycle().take(n).map(|&p| (origin, p)).collect()
        }
    };
    Ok(PointPairSet {
        method,
        sigma_unit,
        seed,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_method_rejected() {
        assert!(matches!(sample_point_pairs(0, 8, 1.0, 1), Err(Error::Parameter(_))));
        assert!(matches!(sample_point_pairs(6, 8, 1.0, 1), Err(Error::Parameter(_))));
        assert!(sample_point_pairs(1, 0, 1.0, 1).is_err());
    }

    #[test]
    fn centre_methods_anchor_p1() {
        for m in [4, 5] {
            let set = sample_point_pairs(m, 100, 1.0, 7).unwrap();
            assert!(set.pairs.iter().all(|(p1, _)| *p1 == Vector3::zeros()));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        for m in 1..=5 {
            let a = sample_point_pairs(m, 64, 1.0, 42).unwrap();
            let b = sample_point_pairs(m, 64, 1.0, 42).unwrap();
            assert_eq!(a, b);
        }
        let a = sample_point_pairs(3, 64, 1.0, 42).unwrap();
        let c = sample_point_pairs(3, 64, 1.0, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn all_offsets_inside_support() {
        for m in 1..=5 {
            let set = sample_point_pairs(m, 500, 1.3, 9).unwrap();
            assert_eq!(set.len(), 500);
            for (p1, p2) in &set.pairs {
                assert!(p1.norm() <= 2.0 * 1.3 + 1e-12);
                assert!(p2.norm() <= 2.0 * 1.3 + 1e-12);
            }
        }
    }

    #[test]
    fn uniform_ball_radial_mean() {
        // uniform ball of radius R: E|p| = 3R/4
        let set = sample_point_pairs(1, 10_000, 1.0, 2024).unwrap();
        let mean: f64 = set.pairs.iter().map(|(p, _)| p.norm()).sum::<f64>() / set.len() as f64;
        let expected = 0.75 * 2.0;
        assert!((mean - expected).abs() / expected < 0.02, "mean {mean}");
    }

    #[test]
    fn grid_layout() {
        assert_eq!(octahedron_directions().len(), 18);
        let set = sample_point_pairs(5, 80, 1.0, 0).unwrap();
        let radii: Vec<f64> = set.pairs.iter().map(|(_, p)| p.norm()).collect();
        assert!(radii[..18].iter().all(|r| (r - 0.5).abs() < 1e-12));
        assert!(radii[54..72].iter().all(|r| (r - 2.0).abs() < 1e-12));
        // cycles after the 72 grid points
        assert_eq!(set.pairs[72], set.pairs[0]);
    }
}
