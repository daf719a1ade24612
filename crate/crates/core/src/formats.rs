//! Text formats for keypoints, descriptors and match reports.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::descriptor::{Descriptor, DescriptorKind, Feature, RriefDescriptor, SiftRankDescriptor};
use crate::detect::{Keypoint, Polarity};
use crate::error::{Error, Result};
use crate::matching::Match;
use crate::orient::OrientationFrame;
use crate::pipeline::MatchReport;

pub const KEYPOINT_HEADER: &str = "# volkey keypoints v1";
pub const DESCRIPTOR_MAGIC: &str = "# volkey descriptors v1";
pub const MATCH_CSV_HEADER: &str = "idx_a,idx_b,distance";

const KEYPOINT_FIELDS: usize = 8;
const FRAME_FIELDS: usize = 9;

fn push_keypoint(out: &mut String, kp: &Keypoint) {
    let p = kp.position;
    let _ = write!(
        out,
        "{} {} {} {} {} {} {} {}",
        p[0],
        p[1],
        p[2],
        kp.sigma,
        kp.octave,
        kp.level,
        kp.dog_value,
        kp.polarity.as_str()
    );
}

fn push_frame(out: &mut String, frame: &OrientationFrame) {
    for v in frame.to_row_major() {
        let _ = write!(out, " {v}");
    }
}

fn field<T: std::str::FromStr>(tok: &str, what: &str, line: usize) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::format(format!("line {line}: bad {what} {tok:?}")))
}

fn parse_keypoint(t: &[&str], line: usize) -> Result<Keypoint> {
    let kp = Keypoint {
        position: [field(t[0], "x", line)?, field(t[1], "y", line)?, field(t[2], "z", line)?],
        sigma: field(t[3], "sigma", line)?,
        octave: field(t[4], "octave", line)?,
        level: field(t[5], "level", line)?,
        dog_value: field(t[6], "dog_value", line)?,
        polarity: Polarity::parse(t[7]).ok_or_else(|| Error::format(format!("line {line}: bad sign {:?}", t[7])))?,
    };
    if !(kp.position.iter().all(|v| v.is_finite()) && kp.sigma > 0.0 && kp.dog_value.is_finite()) {
        return Err(Error::Data(format!("line {line}: non-finite or non-positive keypoint values")));
    }
    Ok(kp)
}

fn parse_frame(t: &[&str], line: usize) -> Result<OrientationFrame> {
    let mut m = [0.0; 9];
    for (v, tok) in m.iter_mut().zip(t) {
        *v = field(tok, "frame entry", line)?;
    }
    let frame = OrientationFrame::from_row_major(m);
    if !frame.is_rotation(1e-5) {
        return Err(Error::Data(format!("line {line}: frame is not a rotation")));
    }
    Ok(frame)
}

/// Keypoint lines `x y z sigma octave level dog_value sign`, each followed by
/// 9 row-major frame entries when a frame is given.
pub fn keypoints_to_text(entries: &[(Keypoint, Option<OrientationFrame>)]) -> String {
    let mut out = String::from(KEYPOINT_HEADER);
    out.push('\n');
    for (kp, frame) in entries {
        push_keypoint(&mut out, kp);
        if let Some(f) = frame {
            push_frame(&mut out, f);
        }
        out.push('\n');
    }
    out
}

pub fn parse_keypoints(text: &str) -> Result<Vec<(Keypoint, Option<OrientationFrame>)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == KEYPOINT_HEADER => {}
        _ => return Err(Error::format(format!("missing header {KEYPOINT_HEADER:?}"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.is_empty() || t[0].starts_with('#') {
            continue;
        }
        let no = i + 1;
        let frame = match t.len() {
            KEYPOINT_FIELDS => None,
            n if n == KEYPOINT_FIELDS + FRAME_FIELDS => Some(parse_frame(&t[KEYPOINT_FIELDS..], no)?),
            n => return Err(Error::format(format!("line {no}: expected 8 or 17 fields, got {n}"))),
        };
        out.push((parse_keypoint(&t, no)?, frame));
    }
    Ok(out)
}

pub fn write_keypoints(path: impl AsRef<Path>, features: &[Feature]) -> Result<()> {
    let entries: Vec<_> = features.iter().map(|f| (f.keypoint.clone(), Some(f.frame))).collect();
    std::fs::write(path, keypoints_to_text(&entries))?;
    Ok(())
}

pub fn read_keypoints(path: impl AsRef<Path>) -> Result<Vec<(Keypoint, Option<OrientationFrame>)>> {
    parse_keypoints(&std::fs::read_to_string(path)?)
}

/// Contents of a descriptor file.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorFile {
    pub kind: DescriptorKind,
    /// Descriptor length: 64 for SIFT-Rank, the pair count otherwise.
    pub n: usize,
    pub seed: u64,
    pub features: Vec<Feature>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn unhex(s: &str, line: usize) -> Result<Vec<u8>> {
    if s.len() % 2 != 0 || !s.is_ascii() {
        return Err(Error::format(format!("line {line}: bad hex payload")));
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).map_err(|_| Error::format(format!("line {line}: bad hex payload"))))
        .collect()
}

/// Every feature must carry a descriptor of `kind` and length `n`.
pub fn descriptors_to_text(kind: DescriptorKind, n: usize, seed: u64, features: &[Feature]) -> Result<String> {
    let mut out = format!("{DESCRIPTOR_MAGIC} kind={kind} n={n} seed={seed}\n");
    for f in features {
        if f.descriptor.kind() != kind || f.descriptor.len() != n {
            return Err(Error::param(format!(
                "feature has a {}/{} descriptor, file is {kind}/{n}",
                f.descriptor.kind(),
                f.descriptor.len()
            )));
        }
        push_keypoint(&mut out, &f.keypoint);
        push_frame(&mut out, &f.frame);
        match &f.descriptor {
            Descriptor::SiftRank(d) => d.ranks.iter().for_each(|r| {
                let _ = write!(out, " {r}");
            }),
            Descriptor::Brief(_) => {
                let _ = write!(out, " {}", hex(&f.descriptor.to_packed_bytes()));
            }
            Descriptor::Rrief(d) => d.ranks.iter().for_each(|r| {
                let _ = write!(out, " {r}");
            }),
        }
        out.push('\n');
    }
    Ok(out)
}

fn parse_header(line: &str) -> Result<(DescriptorKind, usize, u64)> {
    let rest = line
        .strip_prefix(DESCRIPTOR_MAGIC)
        .ok_or_else(|| Error::format(format!("missing header {DESCRIPTOR_MAGIC:?}")))?;
    let (mut kind, mut n, mut seed) = (None, None, None);
    for tok in rest.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::format(format!("bad header token {tok:?}")))?;
        match k {
            "kind" => kind = Some(v.parse::<DescriptorKind>().map_err(|_| Error::format(format!("bad kind {v:?}")))?),
            "n" => n = Some(v.parse::<usize>().map_err(|_| Error::format(format!("bad n {v:?}")))?),
            "seed" => seed = Some(v.parse::<u64>().map_err(|_| Error::format(format!("bad seed {v:?}")))?),
            _ => return Err(Error::format(format!("unknown header key {k:?}"))),
        }
    }
    match (kind, n, seed) {
        (Some(k), Some(n), Some(s)) if n > 0 => Ok((k, n, s)),
        _ => Err(Error::format("header needs kind, n > 0 and seed")),
    }
}

fn check_ranks(ranks: &[usize], line: usize) -> Result<()> {
    let mut seen = vec![false; ranks.len()];
    for &r in ranks {
        if r >= ranks.len() || std::mem::replace(&mut seen[r], true) {
            return Err(Error::Data(format!("line {line}: ranks are not a permutation")));
        }
    }
    Ok(())
}

pub fn parse_descriptors(text: &str) -> Result<DescriptorFile> {
    let mut lines = text.lines().enumerate();
    let (kind, n, seed) = parse_header(lines.next().map(|(_, l)| l.trim()).unwrap_or(""))?;
    let payload = match kind {
        DescriptorKind::Brief => 1,
        _ => n,
    };
    let mut features = Vec::new();
    for (i, line) in lines {
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.is_empty() || t[0].starts_with('#') {
            continue;
        }
        let no = i + 1;
        let want = KEYPOINT_FIELDS + FRAME_FIELDS + payload;
        if t.len() != want {
            return Err(Error::format(format!("line {no}: expected {want} fields, got {}", t.len())));
        }
        let keypoint = parse_keypoint(&t, no)?;
        let frame = parse_frame(&t[KEYPOINT_FIELDS..KEYPOINT_FIELDS + FRAME_FIELDS], no)?;
        let rest = &t[KEYPOINT_FIELDS + FRAME_FIELDS..];
        let descriptor = match kind {
            DescriptorKind::Brief => {
                let bytes = unhex(rest[0], no)?;
                if bytes.len() != n.div_ceil(8) {
                    return Err(Error::format(format!("line {no}: expected {} hex bytes", n.div_ceil(8))));
                }
                Descriptor::from_packed_bytes(kind, n, &bytes)?
            }
            _ => {
                let ranks: Vec<usize> = rest.iter().map(|tok| field(tok, "rank", no)).collect::<Result<_>>()?;
                check_ranks(&ranks, no)?;
                if kind == DescriptorKind::SiftRank {
                    let ranks = ranks
                        .iter()
                        .map(|&r| r as u8)
                        .collect::<Vec<_>>()
                        .try_into()
                        .map_err(|_| Error::format(format!("line {no}: SIFT-Rank needs 64 ranks")))?;
                    Descriptor::SiftRank(SiftRankDescriptor { ranks })
                } else {
                    Descriptor::Rrief(RriefDescriptor {
                        ranks: ranks.iter().map(|&r| r as u16).collect(),
                    })
                }
            }
        };
        features.push(Feature {
            keypoint,
            frame,
            descriptor,
        });
    }
    Ok(DescriptorFile {
        kind,
        n,
        seed,
        features,
    })
}

pub fn write_descriptors(path: impl AsRef<Path>, file: &DescriptorFile) -> Result<()> {
    std::fs::write(path, descriptors_to_text(file.kind, file.n, file.seed, &file.features)?)?;
    Ok(())
}

pub fn read_descriptors(path: impl AsRef<Path>) -> Result<DescriptorFile> {
    parse_descriptors(&std::fs::read_to_string(path)?)
}

/// Human-readable summary of a match run.
pub fn match_report_text(report: &MatchReport) -> String {
    let t = &report.consensus.transform;
    let r = t.rotation;
    let mut out = String::new();
    let _ = writeln!(out, "features_a: {}", report.features_a);
    let _ = writeln!(out, "features_b: {}", report.features_b);
    let _ = writeln!(out, "ratio_test_matches: {}", report.matches.len());
    let _ = writeln!(out, "consensus_votes: {}", report.consensus.votes);
    let _ = writeln!(out, "inliers (this pair): {}", report.inlier_count());
    let _ = writeln!(out, "scale: {:.6}", t.scale);
    let _ = writeln!(out, "rotation_deg: {:.4}", t.rotation_degrees());
    let _ = writeln!(
        out,
        "rotation: {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
        r[(0, 0)],
        r[(0, 1)],
        r[(0, 2)],
        r[(1, 0)],
        r[(1, 1)],
        r[(1, 2)],
        r[(2, 0)],
        r[(2, 1)],
        r[(2, 2)]
    );
    let _ = writeln!(
        out,
        "translation: {:.4} {:.4} {:.4}",
        t.translation.x, t.translation.y, t.translation.z
    );
    out
}

pub fn write_match_csv(mut w: impl Write, matches: &[Match]) -> Result<()> {
    writeln!(w, "{MATCH_CSV_HEADER}")?;
    for m in matches {
        writeln!(w, "{},{},{}", m.index_a, m.index_b, m.distance)?;
    }
    Ok(())
}
