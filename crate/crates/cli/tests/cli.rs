use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use volkey::volume::save_raw;
use volkey::Volume;

fn volkey(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_volkey")).args(args).output().expect("spawn volkey")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn field(text: &str, name: &str) -> f64 {
    let line = text
        .lines()
        .find(|l| l.starts_with(&format!("{name}:")))
        .unwrap_or_else(|| panic!("no {name} in {text}"));
    line.split(':').nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap()
}

fn two_blobs() -> Volume {
    let blob = |p: [f64; 3], c: [f64; 3], s: f64| {
        let d2: f64 = (0..3).map(|i| (p[i] - c[i]).powi(2)).sum();
        (-d2 / (2.0 * s * s)).exp()
    };
    Volume::from_fn([48; 3], |x, y, z| {
        let p = [x as f64, y as f64, z as f64];
        (blob(p, [14.0, 16.0, 24.0], 3.0) + blob(p, [32.0, 30.0, 22.0], 4.0)) as f32
    })
    .unwrap()
}

fn write_volume(dir: &Path, name: &str, v: &Volume) -> PathBuf {
    let path = dir.join(name);
    save_raw(v, &path).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn constant_volume_extracts_nothing() {
    let dir = TempDir::new().unwrap();
    let input = write_volume(dir.path(), "flat.f32", &Volume::filled([24; 3], 3.0).unwrap());
    let prefix = dir.path().join("flat");
    let out = volkey(&["extract", s(&input), "-o", s(&prefix)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(field(&stdout(&out), "keypoints"), 0.0);
    assert!(dir.path().join("flat.keys.txt").exists());
    assert!(dir.path().join("flat.desc.txt").exists());
}

#[test]
fn two_blob_phantom_writes_keypoints() {
    let dir = TempDir::new().unwrap();
    let input = write_volume(dir.path(), "blobs.f32", &two_blobs());
    let prefix = dir.path().join("blobs");
    let out = volkey(&["extract", s(&input), "-o", s(&prefix), "--contrast-min", "0.01"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(field(&text, "keypoints") >= 2.0, "{text}");
    assert!(text.contains("stage convolution"), "{text}");
    let keys = volkey::formats::read_keypoints(dir.path().join("blobs.keys.txt")).unwrap();
    assert!(keys.len() >= 2);
}

fn extract_kind(dir: &Path, input: &Path, kind: &str) -> PathBuf {
    let prefix = dir.join(kind);
    let out = volkey(&["extract", s(input), "-o", s(&prefix), "--descriptor", kind]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join(format!("{kind}.desc.txt"))
}

fn textured() -> Volume {
    let mut state = 12345u64;
    let mut centres = Vec::new();
    for _ in 0..40 {
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 33) as f64 / (1u64 << 31) as f64
        };
        centres.push(([10.0 + 28.0 * next(), 10.0 + 28.0 * next(), 10.0 + 28.0 * next()], 2.5 + 1.5 * next(), next() - 0.5));
    }
    Volume::from_fn([48; 3], |x, y, z| {
        let p = [x as f64, y as f64, z as f64];
        centres
            .iter()
            .map(|(c, sg, a)| {
                let d2: f64 = (0..3).map(|i| (p[i] - c[i]).powi(2)).sum();
                a * (-d2 / (2.0 * sg * sg)).exp()
            })
            .sum::<f64>() as f32
    })
    .unwrap()
}

#[test]
fn self_match_recovers_identity() {
    let dir = TempDir::new().unwrap();
    let input = write_volume(dir.path(), "tex.f32", &textured());
    let desc = extract_kind(dir.path(), &input, "siftrank");
    let csv = dir.path().join("m.csv");
    let out = volkey(&["match", s(&desc), s(&desc), "--csv", s(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!((field(&text, "scale") - 1.0).abs() < 1e-9, "{text}");
    assert!(field(&text, "rotation_deg") < 1e-6, "{text}");
    let rows = std::fs::read_to_string(&csv).unwrap();
    assert!(rows.starts_with("idx_a,idx_b,distance"));
    assert_eq!(rows.lines().count() - 1, field(&text, "inliers (this pair)") as usize);
}

#[test]
fn mismatched_kinds_are_rejected() {
    let dir = TempDir::new().unwrap();
    let input = write_volume(dir.path(), "tex.f32", &textured());
    let brief = extract_kind(dir.path(), &input, "brief");
    let rrief = extract_kind(dir.path(), &input, "rrief");
    let out = volkey(&["match", s(&brief), s(&rrief)]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kinds differ"));
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing.f32");
    assert_eq!(volkey(&["extract", s(&missing), "-o", "x"]).status.code(), Some(3));

    let input = write_volume(dir.path(), "flat.f32", &Volume::filled([16; 3], 0.0).unwrap());
    let bad = volkey(&["extract", s(&input), "-o", s(&dir.path().join("o")), "--blur-sigma", "-1"]);
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(volkey(&["extract", "--no-such-flag"]).status.code(), Some(2));

    let garbage = dir.path().join("garbage.desc.txt");
    std::fs::write(&garbage, "not a descriptor file\n").unwrap();
    assert_eq!(volkey(&["match", s(&garbage), s(&garbage)]).status.code(), Some(4));
}

#[test]
fn no_consensus_has_its_own_exit_code() {
    let dir = TempDir::new().unwrap();
    let input = write_volume(dir.path(), "tex.f32", &textured());
    let desc = extract_kind(dir.path(), &input, "siftrank");
    let out = volkey(&["match", s(&desc), s(&desc), "--min-votes", "100000"]);
    assert_eq!(out.status.code(), Some(6), "{}", stdout(&out));
}

#[test]
fn config_file_is_applied_and_flags_win() {
    let dir = TempDir::new().unwrap();
    let input = write_volume(dir.path(), "tex.f32", &textured());
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# test config\ndescriptor = brief\nn = 128\n").unwrap();
    let prefix = dir.path().join("cfg");
    let out = volkey(&["extract", s(&input), "-o", s(&prefix), "--config", s(&cfg), "--n", "32"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let file = volkey::formats::read_descriptors(dir.path().join("cfg.desc.txt")).unwrap();
    assert_eq!(file.kind, volkey::DescriptorKind::Brief);
    assert_eq!(file.n, 32);
}

#[test]
fn bench_emits_stage_csv_and_sweep() {
    let dir = TempDir::new().unwrap();
    let input = write_volume(dir.path(), "tex.f32", &textured());
    let out = volkey(&["bench", s(&input), "--repeat", "1", "--chunks", "1,5,10", "--workers", "1", "--workers", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let sections: Vec<&str> = text.split("\n\n").collect();
    assert_eq!(sections.len(), 3, "{text}");
    let stages = volkey::bench::parse_csv(sections[0]).unwrap();
    assert!(stages.iter().any(|t| t.workers == 1) && stages.iter().any(|t| t.workers == 2));
    assert_eq!(sections[1].lines().count(), 3);
    let sweep: Vec<&str> = sections[2].lines().collect();
    assert_eq!(sweep[0], "chunk,workers,mean_micros,median_micros");
    let chunks: Vec<&str> = sweep[1..4].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(chunks, ["1", "5", "10"]);
}

#[test]
fn bench_default_writes_csv_file() {
    let dir = TempDir::new().unwrap();
    let input = write_volume(dir.path(), "tex.f32", &textured());
    let csv = dir.path().join("stages.csv");
    let out = volkey(&["bench", s(&input), "--repeat", "1", "--csv", s(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = volkey::bench::parse_csv(&std::fs::read_to_string(&csv).unwrap()).unwrap();
    assert!(rows.iter().any(|t| t.stage == volkey::bench::Stage::Match));
}

#[test]
fn help_documents_defaults() {
    let out = volkey(&["extract", "--help"]);
    let text = stdout(&out);
    assert!(text.contains("--blur-sigma"));
    assert!(text.contains("[default: 0.95]"));
    assert!(text.contains("[default: 64]"));
}
