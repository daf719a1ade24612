use nalgebra::Vector3;

use crate::detect::Keypoint;
use crate::error::{Error, Result};
use crate::orient::{keypoint_level, OrientationFrame};
use crate::scalespace::{convolve_separable_serial, GaussianKernel1D, GaussianPyramid};

pub const DEFAULT_PATCH_SIDE: usize = 15;

/// Half-width of a patch in units of the keypoint σ.
pub const PATCH_HALF_WIDTH: f64 = 2.0;

/// A `side³` cube resampled around a keypoint in its orientation frame,
/// spanning `[-2σ, 2σ]` per axis. Stored x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    side: usize,
    data: Vec<f32>,
}

impl Patch {
    pub fn new(side: usize, data: Vec<f32>) -> Result<Self> {
        if side == 0 || side % 2 == 0 {
            return Err(Error::param(format!("patch side must be odd, got {side}")));
        }
        if data.len() != side * side * side {
            return Err(Error::Size(format!("patch data length {} != {side}³", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite patch sample".into()));
        }
        Ok(Patch { side, data })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[x + self.side * (y + self.side * z)]
    }

    /// Normalised offset (σ units) of sample index `i` along one axis.
    pub fn offset_of(&self, i: usize) -> f64 {
        if self.side == 1 {
            0.0
        } else {
            -PATCH_HALF_WIDTH + i as f64 * (2.0 * PATCH_HALF_WIDTH) / (self.side - 1) as f64
        }
    }

    /// Trilinear sample at a σ-normalised offset from the patch centre,
    /// clamped to the patch.
    pub fn sample(&self, u: &Vector3<f64>) -> f32 {
        let n = self.side;
        if n == 1 {
            return self.data[0];
        }
        let scale = (n - 1) as f64 / (2.0 * PATCH_HALF_WIDTH);
        let mut base = [0usize; 3];
        let mut next = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let c = ((u[a] + PATCH_HALF_WIDTH) * scale).clamp(0.0, (n - 1) as f64);
            let f = c.floor();
            base[a] = f as usize;
            next[a] = (base[a] + 1).min(n - 1);
            frac[a] = c - f;
        }
        let v = |x: usize, y: usize, z: usize| self.get(x, y, z) as f64;
        let [fx, fy, fz] = frac;
        let lerp = |a: f64, b: f64, t: f64| a * (1.0 - t) + b * t;
        let c00 = lerp(v(base[0], base[1], base[2]), v(next[0], base[1], base[2]), fx);
        let c10 = lerp(v(base[0], next[1], base[2]), v(next[0], next[1], base[2]), fx);
        let c01 = lerp(v(base[0], base[1], next[2]), v(next[0], base[1], next[2]), fx);
        let c11 = lerp(v(base[0], next[1], next[2]), v(next[0], next[1], next[2]), fx);
        lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz) as f32
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Patch> {
        Patch::new(self.side, self.data.iter().map(|&v| f(v)).collect())
    }
}

/// Resamples the keypoint's Gaussian level at `position + R·u` for `u` on a
/// `side³` grid over `[-2σ, 2σ]³` (octave-local coordinates).
pub fn extract_patch(pyr: &GaussianPyramid, kp: &Keypoint, frame: &OrientationFrame, side: usize) -> Result<Patch> {
    if side == 0 || side % 2 == 0 {
        return Err(Error::param(format!("patch side must be odd, got {side}")));
    }
    let level = keypoint_level(pyr, kp)?;
    let centre = Vector3::from(kp.local_position());
    let sigma = kp.local_sigma();
    let mut data = Vec::with_capacity(side * side * side);
    let proto = Patch {
        side,
        data: Vec::new(),
    };
    for z in 0..side {
        for y in 0..side {
            for x in 0..side {
                let u = Vector3::new(proto.offset_of(x), proto.offset_of(y), proto.offset_of(z)) * sigma;
                let p = centre + frame.rotation * u;
                data.push(level.trilinear_sample([p.x, p.y, p.z]));
            }
        }
    }
    Patch::new(side, data)
}

/// Separable Gaussian blur of a patch (σ in patch samples, replicate
/// borders). `blur_sigma = 0` returns the patch unchanged.
pub fn preblur_patch(p: &Patch, blur_sigma: f64) -> Result<Patch> {
    if blur_sigma < 0.0 || !blur_sigma.is_finite() {
        return Err(Error::param(format!("blur_sigma must be >= 0, got {blur_sigma}")));
    }
    if blur_sigma == 0.0 {
        return Ok(p.clone());
    }
    let k = GaussianKernel1D::new(blur_sigma)?;
    let data = convolve_separable_serial(&p.data, [p.side; 3], &k);
    Ok(Patch { side: p.side, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::Polarity;
    use crate::scalespace::{Octave, PyramidParams};
    use crate::volume::Volume;
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn single_level(v: Volume) -> GaussianPyramid {
        GaussianPyramid {
            params: PyramidParams::default(),
            octaves: vec![Octave {
                index: 0,
                dims: v.dims(),
                levels: vec![v],
                sigmas: vec![1.6],
            }],
        }
    }

    fn kp(p: [f64; 3], sigma: f64) -> Keypoint {
        Keypoint {
            position: p,
            sigma,
            octave: 0,
            level: 0,
            dog_value: 1.0,
            polarity: Polarity::Peak,
        }
    }

    #[test]
    fn side_one_is_centre_voxel() {
        let v = Volume::from_fn([8; 3], |x, y, z| (x * 100 + y * 10 + z) as f32).unwrap();
        let pyr = single_level(v.clone());
        let p = extract_patch(&pyr, &kp([3.0, 4.0, 5.0], 1.0), &OrientationFrame::identity(), 1).unwrap();
        assert_eq!(p.data(), &[v.get(3, 4, 5)]);
    }

    #[test]
    fn even_side_rejected() {
        let pyr = single_level(Volume::filled([8; 3], 0.0).unwrap());
        assert!(extract_patch(&pyr, &kp([3.0; 3], 1.0), &OrientationFrame::identity(), 4).is_err());
    }

    #[test]
    fn quarter_turn_maps_x_ramp_to_y_ramp() {
        let n = 32;
        let xr = single_level(Volume::from_fn([n; 3], |x, _, _| x as f32).unwrap());
        let yr = single_level(Volume::from_fn([n; 3], |_, y, _| y as f32).unwrap());
        let rz = OrientationFrame {
            rotation: Matrix3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0),
        };
        let k = kp([16.0; 3], 1.5);
        let a = extract_patch(&xr, &k, &rz, 7).unwrap();
        let b = extract_patch(&yr, &k, &OrientationFrame::identity(), 7).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-4);
        }
    }

    #[test]
    fn random_frame_matches_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = Volume::from_fn([20; 3], |_, _, _| rng.random_range(-1.0..1.0)).unwrap();
        let pyr = single_level(v.clone());
        let q = nalgebra::UnitQuaternion::from_euler_angles(0.3, -0.7, 1.1);
        let frame = OrientationFrame {
            rotation: *q.to_rotation_matrix().matrix(),
        };
        let k = kp([9.3, 10.1, 8.7], 1.7);
        let side = 9;
        let patch = extract_patch(&pyr, &k, &frame, side).unwrap();
        let step = 4.0 / (side - 1) as f64;
        let mut i = 0;
        for z in 0..side {
            for y in 0..side {
                for x in 0..side {
                    let u = [x, y, z].map(|c| (-2.0 + c as f64 * step) * 1.7);
                    let mut p = k.position;
                    for r in 0..3 {
                        for c in 0..3 {
                            p[r] += frame.rotation[(r, c)] * u[c];
                        }
                    }
                    assert_eq!(patch.data()[i], v.trilinear_sample(p));
                    i += 1;
                }
            }
        }
    }

    #[test]
    fn blur_zero_and_constant_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Patch::new(5, (0..125).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        assert_eq!(preblur_patch(&p, 0.0).unwrap(), p);
        let c = Patch::new(5, vec![2.0; 125]).unwrap();
        for &s in &[0.65, 0.95, 3.05] {
            let b = preblur_patch(&c, s).unwrap();
            assert!(b.data().iter().all(|&v| (v - 2.0).abs() < 1e-5));
        }
        assert!(preblur_patch(&p, -1.0).is_err());
    }

    #[test]
    fn impulse_blur_is_kernel_product() {
        let side = 15;
        let c = side / 2;
        let mut data = vec![0.0; side * side * side];
        data[c + side * (c + side * c)] = 1.0;
        let p = Patch::new(side, data).unwrap();
        let b = preblur_patch(&p, 0.95).unwrap();
        let k = GaussianKernel1D::new(0.95).unwrap();
        for z in 0..side {
            for y in 0..side {
                for x in 0..side {
                    let o = |a: usize| a as i64 - c as i64;
                    let expected = k.weight_at(o(x)) * k.weight_at(o(y)) * k.weight_at(o(z));
                    assert!((b.get(x, y, z) - expected).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn sample_hits_lattice_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = Patch::new(5, (0..125).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        assert_eq!(p.sample(&Vector3::zeros()), p.get(2, 2, 2));
        assert_eq!(p.sample(&Vector3::new(-2.0, 1.0, 2.0)), p.get(0, 3, 4));
        assert_eq!(p.sample(&Vector3::new(-9.0, 0.0, 0.0)), p.get(0, 2, 2));
    }
}
