mod common;

use common::*;
use proptest::prelude::*;
use volkey::descriptor::DescriptorParams;
use volkey::pipeline::{extract, match_features};
use volkey::volume::{load_raw_with_header, save_raw};
use volkey::{Config, DescriptorKind, Exec, PipelineParams, Polarity, Volume};

fn phantom(seed: u64) -> Volume {
    Phantom::random(seed, 12, [15.5; 3], 7.0, (2.5, 4.0)).render([32; 3])
}

fn shifted(v: &Volume, d: [i64; 3]) -> Volume {
    let [nx, ny, nz] = v.dims();
    Volume::from_fn([nx, ny, nz], |x, y, z| {
        v.get_clamped(x as i64 - d[0], y as i64 - d[1], z as i64 - d[2])
    })
    .unwrap()
}

fn single_octave() -> PipelineParams {
    let mut p = PipelineParams::default();
    p.pyramid.num_octaves = 1;
    p.contrast_min = 1e-3;
    p
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 8,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn integer_shifts_move_interior_keypoints(seed in 0u64..1000, d in prop::array::uniform3(-3i64..=3)) {
        let exec = Exec::single();
        let v = phantom(seed);
        let params = single_octave();
        let base = extract(&v, &params, &exec).unwrap();
        let moved = extract(&shifted(&v, d), &params, &exec).unwrap();
        let interior = |p: &[f64; 3]| p.iter().all(|&c| (10.0..=21.0).contains(&c));
        let want: Vec<_> = base
            .keypoints
            .iter()
            .map(|k| ([0, 1, 2].map(|i| k.position[i] + d[i] as f64), k.sigma, k.polarity))
            .filter(|(p, ..)| interior(p))
            .collect();
        let got: Vec<_> = moved
            .keypoints
            .iter()
            .map(|k| (k.position, k.sigma, k.polarity))
            .filter(|(p, ..)| interior(p))
            .collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn negation_swaps_polarity(seed in 0u64..1000) {
        let exec = Exec::single();
        let v = phantom(seed);
        let a = extract(&v, &PipelineParams::default(), &exec).unwrap();
        let b = extract(&v.map(|x| -x).unwrap(), &PipelineParams::default(), &exec).unwrap();
        prop_assert_eq!(a.keypoints.len(), b.keypoints.len());
        for (p, n) in a.keypoints.iter().zip(&b.keypoints) {
            prop_assert_eq!(p.position, n.position);
            prop_assert_eq!(p.sigma, n.sigma);
            prop_assert_eq!(p.polarity == Polarity::Peak, n.polarity == Polarity::Valley);
        }
    }

    #[test]
    fn dyadic_gain_keeps_descriptors(seed in 0u64..1000, e in -3i32..=3, kind in prop::sample::select(DescriptorKind::ALL.to_vec())) {
        let exec = Exec::single();
        let v = phantom(seed);
        let mut params = PipelineParams::default();
        params.descriptor.kind = kind;
        let gain = 2f32.powi(e);
        let a = extract(&v, &params, &exec).unwrap();
        let b = extract(&v.map(|x| gain * x).unwrap(), &params, &exec).unwrap();
        prop_assert_eq!(a.features.len(), b.features.len());
        for (fa, fb) in a.features.iter().zip(&b.features) {
            prop_assert_eq!(fa.keypoint.position, fb.keypoint.position);
            prop_assert_eq!(fa.keypoint.dog_value * gain, fb.keypoint.dog_value);
            prop_assert_eq!(&fa.frame, &fb.frame);
            prop_assert_eq!(&fa.descriptor, &fb.descriptor);
        }
    }

    #[test]
    fn output_is_independent_of_workers_and_chunk(seed in 0u64..1000, workers in 1usize..=4, chunk in 1usize..=12) {
        let v = add_noise(&phantom(seed), 0.02, seed);
        let reference = extract(&v, &PipelineParams::default(), &Exec::single()).unwrap();
        let other = extract(&v, &PipelineParams::default(), &Exec::new(workers, chunk).unwrap()).unwrap();
        prop_assert_eq!(reference.keypoints, other.keypoints);
        prop_assert_eq!(reference.features, other.features);
    }
}

#[test]
fn seeds_select_point_pairs() {
    let exec = Exec::single();
    let v = phantom(3);
    let e = extract(&v, &PipelineParams::default(), &exec).unwrap();
    let with_seed = |seed| {
        let p = DescriptorParams {
            kind: DescriptorKind::Brief,
            seed,
            ..Default::default()
        };
        e.redescribe(&p, &exec).unwrap().features
    };
    assert_eq!(with_seed(5), with_seed(5));
    assert_ne!(with_seed(5), with_seed(6));
}

#[test]
fn raw_round_trip_preserves_matching() {
    let dir = tempfile::tempdir().unwrap();
    let v = phantom(9);
    let path = dir.path().join("v.f32");
    save_raw(&v, &path).unwrap();
    let back = load_raw_with_header(&path).unwrap();
    assert_eq!(back, v);
    let config = Config::default();
    let exec = config.exec().unwrap();
    let e = extract(&back, &config.pipeline_params(), &exec).unwrap();
    let r = match_features(&e.features, &e.features, config.ratio_max, &config.hough_params(), &exec).unwrap();
    assert!((r.consensus.transform.scale - 1.0).abs() < 1e-9);
    assert!(r.consensus.transform.rotation_degrees() < 1e-6);
}
