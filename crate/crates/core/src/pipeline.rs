//! End-to-end extraction: pyramid, DoG, extrema, orientation, description.

use rayon::prelude::*;

use crate::bench::{Recorder, Stage};
use crate::config::Config;
use crate::descriptor::{describe_all, DescribeOutput, DescriptorParams, Feature};
use crate::detect::{detect_keypoints_recorded, Keypoint};
use crate::error::{Error, Result};
use crate::matching::{hough_consensus, nearest_neighbor_matches, Consensus, HoughParams, Match};
use crate::orient::{assign_orientations, OrientationFrame, OrientationParams};
use crate::parallel::Exec;
use crate::scalespace::{build_dog_pyramid_recorded, build_gaussian_pyramid_recorded, GaussianPyramid, PyramidParams};
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PipelineParams {
    pub pyramid: PyramidParams,
    /// Keep voxels with `|sum of signs| ≥ 80 − threshold_band`.
    pub threshold_band: i32,
    /// Minimum `|DoG|` at a kept extremum.
    pub contrast_min: f32,
    pub orientation: OrientationParams,
    pub descriptor: DescriptorParams,
}

impl PipelineParams {
    pub fn validate(&self) -> Result<()> {
        self.pyramid.validate()?;
        if !(0..=crate::detect::NEIGHBOURS).contains(&self.threshold_band) {
            return Err(Error::param(format!("threshold_band must be in 0..=80, got {}", self.threshold_band)));
        }
        if !(self.contrast_min >= 0.0) || !self.contrast_min.is_finite() {
            return Err(Error::param(format!("contrast_min must be >= 0, got {}", self.contrast_min)));
        }
        self.orientation.validate()?;
        self.descriptor.validate()
    }
}

#[derive(Debug, Clone)]
pub struct Extraction {
    pub pyramid: GaussianPyramid,
    pub keypoints: Vec<Keypoint>,
    /// Every keypoint with its frames (possibly none).
    pub oriented: Vec<(Keypoint, Vec<OrientationFrame>)>,
    /// One feature per (keypoint, frame), in keypoint order.
    pub features: Vec<Feature>,
    /// Keypoints that received no orientation frame.
    pub unoriented: usize,
    /// (keypoint, frame) pairs whose descriptor could not be computed.
    pub dropped: usize,
}

pub fn extract(volume: &Volume, params: &PipelineParams, exec: &Exec) -> Result<Extraction> {
    extract_recorded(volume, params, exec, &mut Recorder::disabled())
}

/// Orientation and description are timed as a whole (octave 0, level 0).
pub fn extract_recorded(volume: &Volume, params: &PipelineParams, exec: &Exec, rec: &mut Recorder) -> Result<Extraction> {
    params.validate()?;
    let pyramid = build_gaussian_pyramid_recorded(volume, params.pyramid, exec, rec)?;
    let dog = build_dog_pyramid_recorded(&pyramid, exec, rec)?;
    let keypoints = detect_keypoints_recorded(
        &dog,
        params.pyramid.kappa(),
        params.threshold_band,
        params.contrast_min,
        exec,
        rec,
    )?;
    drop(dog);

    let oriented: Vec<(Keypoint, Vec<OrientationFrame>)> = rec.time(Stage::Orient, 0, 0, || {
        exec.install(|| {
            keypoints
                .par_iter()
                .map(|kp| {
                    let frames = assign_orientations(&pyramid, kp, &params.orientation).unwrap_or_default();
                    (kp.clone(), frames)
                })
                .collect()
        })
    });
    let unoriented = oriented.iter().filter(|(_, f)| f.is_empty()).count();
    let described = rec.time(Stage::Descriptor, 0, 0, || describe_all(&pyramid, &oriented, &params.descriptor, exec))?;
    Ok(Extraction {
        pyramid,
        keypoints,
        oriented,
        features: described.features,
        unoriented,
        dropped: described.dropped,
    })
}

impl Extraction {
    /// Describes the same oriented keypoints with other descriptor settings.
    pub fn redescribe(&self, params: &DescriptorParams, exec: &Exec) -> Result<DescribeOutput> {
        describe_all(&self.pyramid, &self.oriented, params, exec)
    }
}

/// Outcome of matching two feature sets.
#[derive(Debug, Clone)]
pub struct MatchReport {
    pub features_a: usize,
    pub features_b: usize,
    /// Matches surviving the ratio test.
    pub matches: Vec<Match>,
    pub consensus: Consensus,
}

impl MatchReport {
    pub fn inlier_count(&self) -> usize {
        self.consensus.inliers.len()
    }
}

/// Nearest-neighbour matching of `a` against `b`, then Hough consensus.
pub fn match_features(a: &[Feature], b: &[Feature], ratio_max: f64, hough: &HoughParams, exec: &Exec) -> Result<MatchReport> {
    let da: Vec<_> = a.iter().map(|f| f.descriptor.clone()).collect();
    let db: Vec<_> = b.iter().map(|f| f.descriptor.clone()).collect();
    let matches = nearest_neighbor_matches(&da, &db, ratio_max, exec)?;
    let consensus = hough_consensus(&matches, a, b, hough)?;
    Ok(MatchReport {
        features_a: a.len(),
        features_b: b.len(),
        matches,
        consensus,
    })
}

/// Runs the pipeline on both volumes and matches `a` against `b`; the
/// inlier count is [`MatchReport::inlier_count`].
pub fn count_inlier_matches(a: &Volume, b: &Volume, config: &Config) -> Result<MatchReport> {
    config.validate()?;
    let exec = config.exec()?;
    let params = config.pipeline_params();
    let ea = extract(a, &params, &exec)?;
    let eb = extract(b, &params, &exec)?;
    match_features(&ea.features, &eb.features, config.ratio_max, &config.hough_params(), &exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::DescriptorKind;

    fn blobs(dims: [usize; 3], centres: &[([f64; 3], f64, f32)]) -> Volume {
        Volume::from_fn(dims, |x, y, z| {
            centres
                .iter()
                .map(|&(c, s, a)| {
                    let d2 = (x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (z as f64 - c[2]).powi(2);
                    a * (-d2 / (2.0 * s * s)).exp() as f32
                })
                .sum()
        })
        .unwrap()
    }

    #[test]
    fn constant_volume_has_no_keypoints() {
        let v = Volume::filled([24, 24, 24], 5.0).unwrap();
        let e = extract(&v, &PipelineParams::default(), &Exec::single()).unwrap();
        assert!(e.keypoints.is_empty());
        assert!(e.features.is_empty());
    }

    #[test]
    fn opposite_blobs_give_peak_and_valley() {
        let v = blobs([40, 40, 40], &[([12.0, 20.0, 20.0], 3.0, 1.0), ([28.0, 20.0, 20.0], 3.0, -1.0)]);
        let params = PipelineParams {
            contrast_min: 0.01,
            ..PipelineParams::default()
        };
        let e = extract(&v, &params, &Exec::single()).unwrap();
        use crate::detect::Polarity;
        let near = |p: [f64; 3], c: [f64; 3]| (0..3).all(|k| (p[k] - c[k]).abs() <= 1.0);
        let pol_at = |c| e.keypoints.iter().find(|k| near(k.position, c)).map(|k| k.polarity);
        let (p1, p2) = (pol_at([12.0, 20.0, 20.0]), pol_at([28.0, 20.0, 20.0]));
        assert_eq!((p1, p2), (Some(Polarity::Peak), Some(Polarity::Valley)), "{:?}", e.keypoints);
    }

    #[test]
    fn invalid_params_rejected() {
        let v = Volume::filled([20, 20, 20], 1.0).unwrap();
        let params = PipelineParams {
            threshold_band: 81,
            ..PipelineParams::default()
        };
        assert!(matches!(extract(&v, &params, &Exec::single()), Err(Error::Parameter(_))));
    }

    #[test]
    fn self_match_gives_identity() {
        let v = blobs(
            [40, 40, 40],
            &[
                ([10.0, 12.0, 14.0], 2.5, 1.0),
                ([28.0, 10.0, 25.0], 3.0, 0.8),
                ([15.0, 29.0, 20.0], 2.0, -0.9),
                ([27.0, 27.0, 10.0], 3.5, 0.7),
                ([20.0, 20.0, 30.0], 2.5, -0.6),
            ],
        );
        for kind in DescriptorKind::ALL {
            let mut config = Config::default();
            config.descriptor = kind;
            config.workers = 1;
            let r = count_inlier_matches(&v, &v, &config).unwrap();
            let t = r.consensus.transform;
            assert!((t.scale - 1.0).abs() < 1e-6, "{kind}");
            assert!(t.rotation_degrees() < 1e-3, "{kind}");
            assert!(t.translation.norm() < 1e-4, "{kind}");
            assert!(r.inlier_count() >= 3, "{kind}");
        }
    }

    #[test]
    fn redescribe_matches_fresh_extraction() {
        let v = blobs([32, 32, 32], &[([12.0, 14.0, 16.0], 2.5, 1.0), ([20.0, 18.0, 15.0], 2.0, -0.8)]);
        let exec = Exec::single();
        let base = extract(&v, &PipelineParams::default(), &exec).unwrap();
        let mut params = PipelineParams::default();
        params.descriptor.kind = DescriptorKind::Rrief;
        params.descriptor.blur_sigma = 1.85;
        let fresh = extract(&v, &params, &exec).unwrap();
        let again = base.redescribe(&params.descriptor, &exec).unwrap();
        assert_eq!(again.features, fresh.features);
    }
}
