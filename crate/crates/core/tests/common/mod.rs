//! Synthetic phantoms evaluated analytically, optionally under a known
//! similarity transform.

#![allow(dead_code)]

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use volkey::{SimilarityTransform, Volume};

/// Anisotropic Gaussian: `amp · exp(−½ (x−c)ᵀ P (x−c))`, `P` the precision.
#[derive(Debug, Clone)]
pub struct Blob {
    pub centre: Vector3<f64>,
    pub precision: Matrix3<f64>,
    pub amplitude: f64,
}

impl Blob {
    pub fn isotropic(centre: [f64; 3], sigma: f64, amplitude: f64) -> Self {
        Blob {
            centre: Vector3::from(centre),
            precision: Matrix3::identity() / (sigma * sigma),
            amplitude,
        }
    }

    pub fn eval(&self, p: &Vector3<f64>) -> f64 {
        let d = p - self.centre;
        let q = d.dot(&(self.precision * d));
        if q > 60.0 {
            0.0
        } else {
            self.amplitude * (-0.5 * q).exp()
        }
    }

    /// The blob as seen after mapping space through `t`.
    pub fn transformed(&self, t: &SimilarityTransform) -> Blob {
        let r = t.rotation;
        Blob {
            centre: t.apply(&self.centre),
            precision: r * self.precision * r.transpose() / (t.scale * t.scale),
            amplitude: self.amplitude,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub blobs: Vec<Blob>,
}

impl Phantom {
    /// `count` anisotropic blobs with axis σ in `sigma_range`, centres in a
    /// ball of radius `spread` about `centre`.
    pub fn random(seed: u64, count: usize, centre: [f64; 3], spread: f64, sigma_range: (f64, f64)) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = Vector3::from(centre);
        let blobs = (0..count)
            .map(|_| {
                let offset = loop {
                    let v = Vector3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    );
                    if v.norm() <= 1.0 {
                        break v * spread;
                    }
                };
                let q = UnitQuaternion::from_euler_angles(
                    rng.random_range(-3.1..3.1),
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-3.1..3.1),
                );
                let r = *q.to_rotation_matrix().matrix();
                let s: Vector3<f64> = Vector3::from_fn(|_, _| rng.random_range(sigma_range.0..sigma_range.1));
                let d = Matrix3::from_diagonal(&s.map(|v| 1.0 / (v * v)));
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                Blob {
                    centre: c + offset,
                    precision: r * d * r.transpose(),
                    amplitude: sign * rng.random_range(0.5..1.0),
                }
            })
            .collect();
        Phantom { blobs }
    }

    pub fn transformed(&self, t: &SimilarityTransform) -> Phantom {
        Phantom {
            blobs: self.blobs.iter().map(|b| b.transformed(t)).collect(),
        }
    }

    pub fn eval(&self, p: &Vector3<f64>) -> f64 {
        self.blobs.iter().map(|b| b.eval(p)).sum()
    }

    pub fn render(&self, dims: [usize; 3]) -> Volume {
        Volume::from_fn(dims, |x, y, z| self.eval(&Vector3::new(x as f64, y as f64, z as f64)) as f32).unwrap()
    }
}

/// Adds zero-mean Gaussian noise with sd `fraction` × intensity range.
pub fn add_noise(v: &Volume, fraction: f64, seed: u64) -> Volume {
    let (lo, hi) = v.min_max();
    let normal = Normal::new(0.0, fraction * (hi - lo) as f64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = v.data().iter().map(|&x| x + normal.sample(&mut rng) as f32).collect();
    Volume::new(v.dims(), v.spacing(), data).unwrap()
}

/// Similarity about `pivot`: `x ↦ s·R·(x − pivot) + pivot + t`.
pub fn about(pivot: [f64; 3], scale: f64, rotation: Matrix3<f64>, shift: [f64; 3]) -> SimilarityTransform {
    let p = Vector3::from(pivot);
    SimilarityTransform {
        scale,
        rotation,
        translation: p + Vector3::from(shift) - rotation * p * scale,
    }
}

pub fn axis_rotation(axis: [f64; 3], degrees: f64) -> Matrix3<f64> {
    let a = nalgebra::Unit::new_normalize(Vector3::from(axis));
    *UnitQuaternion::from_axis_angle(&a, degrees.to_radians()).to_rotation_matrix().matrix()
}

/// Random transform with scale in [0.9, 1.1], rotation ≤ `max_deg`,
/// shift ≤ `max_shift` per axis, pivoting about `pivot`.
pub fn random_transform(seed: u64, pivot: [f64; 3], max_deg: f64, max_shift: f64) -> SimilarityTransform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    let deg = rng.random_range(-max_deg..max_deg);
    let shift_dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let shift = shift_dir.normalize() * rng.random_range(0.0..max_shift);
    about(pivot, rng.random_range(0.9..1.1), axis_rotation(axis, deg), [shift.x, shift.y, shift.z])
}
