//! Keypoint appearance descriptors: SIFT-Rank, BRIEF and RRIEF.

mod pairs;
mod patch;
mod rank;
mod siftrank;

use std::fmt;

use rayon::prelude::*;

use crate::detect::Keypoint;
use crate::error::{Error, Result};
use crate::orient::OrientationFrame;
use crate::parallel::Exec;
use crate::scalespace::GaussianPyramid;

pub use pairs::{sample_point_pairs, PairMethod, PointPairSet, SUPPORT_RADIUS};
pub use patch::{extract_patch, preblur_patch, Patch, DEFAULT_PATCH_SIDE, PATCH_HALF_WIDTH};
pub use rank::{is_rank_vector, rank_order};
pub use siftrank::{rank_histogram, sift_rank_descriptor, sift_rank_histogram, SiftRankDescriptor, SIFT_RANK_LEN};

pub const DEFAULT_PAIR_COUNT: usize = 64;
pub const DEFAULT_BLUR_SIGMA: f64 = 0.95;
pub const DEFAULT_PAIR_METHOD: u8 = 3;
pub const DEFAULT_SEED: u64 = 0x5EED;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DescriptorKind {
    SiftRank,
    Brief,
    Rrief,
}

impl DescriptorKind {
    pub const ALL: [DescriptorKind; 3] = [DescriptorKind::SiftRank, DescriptorKind::Brief, DescriptorKind::Rrief];

    pub fn as_str(self) -> &'static str {
        match self {
            DescriptorKind::SiftRank => "siftrank",
            DescriptorKind::Brief => "brief",
            DescriptorKind::Rrief => "rrief",
        }
    }
}

impl fmt::Display for DescriptorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DescriptorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "siftrank" => Ok(DescriptorKind::SiftRank),
            "brief" => Ok(DescriptorKind::Brief),
            "rrief" => Ok(DescriptorKind::Rrief),
            _ => Err(Error::param(format!("unknown descriptor kind {s:?} (siftrank|brief|rrief)"))),
        }
    }
}

/// `n` binarised point-pair differences, packed little-endian into words.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BriefDescriptor {
    pub n: usize,
    pub words: Vec<u64>,
}

impl BriefDescriptor {
    pub fn from_bits(bits: &[bool]) -> Self {
        let mut words = vec![0u64; bits.len().div_ceil(64)];
        for (k, &b) in bits.iter().enumerate() {
            if b {
                words[k / 64] |= 1 << (k % 64);
            }
        }
        BriefDescriptor { n: bits.len(), words }
    }

    pub fn bit(&self, k: usize) -> bool {
        self.words[k / 64] >> (k % 64) & 1 == 1
    }

    pub fn hamming(&self, other: &BriefDescriptor) -> u32 {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }
}

/// Ranks of `n` real point-pair differences.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RriefDescriptor {
    pub ranks: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Descriptor {
    SiftRank(SiftRankDescriptor),
    Brief(BriefDescriptor),
    Rrief(RriefDescriptor),
}

/// Bits needed to store one rank among `n` values.
pub fn rank_bits(n: usize) -> u32 {
    if n <= 2 {
        1
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

fn pack(values: impl Iterator<Item = u64>, width: u32) -> Vec<u8> {
    let mut out = Vec::new();
    let mut acc = 0u128;
    let mut filled = 0u32;
    for v in values {
        acc |= (v as u128) << filled;
        filled += width;
        while filled >= 8 {
            out.push(acc as u8);
            acc >>= 8;
            filled -= 8;
        }
    }
    if filled > 0 {
        out.push(acc as u8);
    }
    out
}

fn unpack(bytes: &[u8], width: u32, count: usize) -> Vec<u64> {
    let mask = (1u128 << width) - 1;
    let mut out = Vec::with_capacity(count);
    let mut acc = 0u128;
    let mut filled = 0u32;
    let mut it = bytes.iter();
    while out.len() < count {
        while filled < width {
            let Some(&b) = it.next() else {
                return out;
            };
            acc |= (b as u128) << filled;
            filled += 8;
        }
        out.push((acc & mask) as u64);
        acc >>= width;
        filled -= width;
    }
    out
}

impl Descriptor {
    pub fn kind(&self) -> DescriptorKind {
        match self {
            Descriptor::SiftRank(_) => DescriptorKind::SiftRank,
            Descriptor::Brief(_) => DescriptorKind::Brief,
            Descriptor::Rrief(_) => DescriptorKind::Rrief,
        }
    }

    /// Number of elements (ranks or bits).
    pub fn len(&self) -> usize {
        match self {
            Descriptor::SiftRank(d) => d.ranks.len(),
            Descriptor::Brief(d) => d.n,
            Descriptor::Rrief(d) => d.ranks.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Compact binary form: 1 bit per BRIEF element, `⌈log2 n⌉` bits per rank.
    pub fn to_packed_bytes(&self) -> Vec<u8> {
        match self {
            Descriptor::SiftRank(d) => pack(d.ranks.iter().map(|&r| r as u64), rank_bits(SIFT_RANK_LEN)),
            Descriptor::Brief(d) => pack((0..d.n).map(|k| d.bit(k) as u64), 1),
            Descriptor::Rrief(d) => pack(d.ranks.iter().map(|&r| r as u64), rank_bits(d.ranks.len())),
        }
    }

    pub fn from_packed_bytes(kind: DescriptorKind, n: usize, bytes: &[u8]) -> Result<Self> {
        let short = || Error::format(format!("packed {kind} descriptor too short"));
        Ok(match kind {
            DescriptorKind::SiftRank => {
                let v = unpack(bytes, rank_bits(SIFT_RANK_LEN), SIFT_RANK_LEN);
                let ranks: [u8; SIFT_RANK_LEN] = v
                    .iter()
                    .map(|&r| r as u8)
                    .collect::<Vec<_>>()
                    .try_into()
                    .map_err(|_| short())?;
                Descriptor::SiftRank(SiftRankDescriptor { ranks })
            }
            DescriptorKind::Brief => {
                let v = unpack(bytes, 1, n);
                if v.len() != n {
                    return Err(short());
                }
                Descriptor::Brief(BriefDescriptor::from_bits(&v.iter().map(|&b| b == 1).collect::<Vec<_>>()))
            }
            DescriptorKind::Rrief => {
                let v = unpack(bytes, rank_bits(n), n);
                if v.len() != n {
                    return Err(short());
                }
                Descriptor::Rrief(RriefDescriptor {
                    ranks: v.iter().map(|&r| r as u16).collect(),
                })
            }
        })
    }
}

/// `sample(p1) − sample(p2)` for every pair.
pub fn pair_differences(p: &Patch, pairs: &PointPairSet) -> Vec<f64> {
    pairs
        .pairs
        .iter()
        .map(|(a, b)| p.sample(a) as f64 - p.sample(b) as f64)
        .collect()
}

/// Bit k is set when the k-th difference is strictly positive.
pub fn brief_descriptor(p: &Patch, pairs: &PointPairSet) -> BriefDescriptor {
    let bits: Vec<bool> = pair_differences(p, pairs).iter().map(|&d| d > 0.0).collect();
    BriefDescriptor::from_bits(&bits)
}

pub fn rrief_descriptor(p: &Patch, pairs: &PointPairSet) -> RriefDescriptor {
    RriefDescriptor {
        ranks: rank_order(&pair_differences(p, pairs)).into_iter().map(|r| r as u16).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescriptorParams {
    pub kind: DescriptorKind,
    /// Point pairs for BRIEF/RRIEF.
    pub n: usize,
    pub method: u8,
    pub blur_sigma: f64,
    pub seed: u64,
    pub patch_side: usize,
}

impl Default for DescriptorParams {
    fn default() -> Self {
        DescriptorParams {
            kind: DescriptorKind::SiftRank,
            n: DEFAULT_PAIR_COUNT,
            method: DEFAULT_PAIR_METHOD,
            blur_sigma: DEFAULT_BLUR_SIGMA,
            seed: DEFAULT_SEED,
            patch_side: DEFAULT_PATCH_SIDE,
        }
    }
}

impl DescriptorParams {
    pub fn validate(&self) -> Result<()> {
        PairMethod::from_index(self.method)?;
        if self.n == 0 || self.n > u16::MAX as usize + 1 {
            return Err(Error::param(format!("pair count n must be in 1..=65536, got {}", self.n)));
        }
        if self.blur_sigma < 0.0 || !self.blur_sigma.is_finite() {
            return Err(Error::param(format!("blur_sigma must be >= 0, got {}", self.blur_sigma)));
        }
        if self.patch_side == 0 || self.patch_side % 2 == 0 {
            return Err(Error::param(format!("patch_side must be odd, got {}", self.patch_side)));
        }
        Ok(())
    }

    /// The shared pair layout (σ-normalised, so one set serves every keypoint).
    pub fn point_pairs(&self) -> Result<PointPairSet> {
        sample_point_pairs(self.method, self.n, 1.0, self.seed)
    }
}

/// A keypoint, one of its frames, and the descriptor computed in that frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub keypoint: Keypoint,
    pub frame: OrientationFrame,
    pub descriptor: Descriptor,
}

#[derive(Debug, Clone, Default)]
pub struct DescribeOutput {
    pub features: Vec<Feature>,
    /// (keypoint, frame) pairs that could not be described.
    pub dropped: usize,
}

/// Descriptor for one (keypoint, frame); `pairs` must be set for BRIEF/RRIEF.
pub fn describe(
    pyr: &GaussianPyramid,
    kp: &Keypoint,
    frame: &OrientationFrame,
    params: &DescriptorParams,
    pairs: Option<&PointPairSet>,
) -> Result<Descriptor> {
    match params.kind {
        DescriptorKind::SiftRank => Ok(Descriptor::SiftRank(sift_rank_descriptor(pyr, kp, frame)?)),
        kind => {
            let pairs = pairs.ok_or_else(|| Error::param("BRIEF/RRIEF need a point-pair set"))?;
            let patch = preblur_patch(&extract_patch(pyr, kp, frame, params.patch_side)?, params.blur_sigma)?;
            Ok(if kind == DescriptorKind::Brief {
                Descriptor::Brief(brief_descriptor(&patch, pairs))
            } else {
                Descriptor::Rrief(rrief_descriptor(&patch, pairs))
            })
        }
    }
}

/// Describes every (keypoint, frame) pair in input order.
pub fn describe_all(
    pyr: &GaussianPyramid,
    oriented: &[(Keypoint, Vec<OrientationFrame>)],
    params: &DescriptorParams,
    exec: &Exec,
) -> Result<DescribeOutput> {
    params.validate()?;
    let pairs = match params.kind {
        DescriptorKind::SiftRank => None,
        _ => Some(params.point_pairs()?),
    };
    let jobs: Vec<(&Keypoint, &OrientationFrame)> = oriented
        .iter()
        .flat_map(|(kp, frames)| frames.iter().map(move |f| (kp, f)))
        .collect();
    let results: Vec<Option<Feature>> = exec.install(|| {
        jobs.par_iter()
            .map(|&(kp, frame)| {
                describe(pyr, kp, frame, params, pairs.as_ref()).ok().map(|descriptor| Feature {
                    keypoint: kp.clone(),
                    frame: *frame,
                    descriptor,
                })
            })
            .collect()
    });
    let dropped = results.iter().filter(|r| r.is_none()).count();
    Ok(DescribeOutput {
        features: results.into_iter().flatten().collect(),
        dropped,
    })
}
