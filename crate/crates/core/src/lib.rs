//! Volumetric SIFT-Rank keypoints.
//!
//! The pipeline builds a Gaussian scale-space pyramid, finds 4D
//! difference-of-Gaussian extrema with a sum-of-signs map, assigns 3D
//! orientation frames, and describes each oriented keypoint with a
//! SIFT-Rank, BRIEF or RRIEF descriptor. Descriptor sets from two volumes
//! are matched and filtered by Hough consensus on a 7-DOF similarity
//! transform.

pub mod bench;
pub mod config;
pub mod descriptor;
pub mod detect;
pub mod error;
pub mod formats;
pub mod matching;
pub mod orient;
pub mod parallel;
pub mod pipeline;
pub mod scalespace;
pub mod volume;

pub use config::Config;
pub use descriptor::{Descriptor, DescriptorKind, DescriptorParams, Feature};
pub use detect::{Keypoint, Polarity};
pub use error::{Error, Result};
pub use matching::{Match, SimilarityTransform};
pub use orient::OrientationFrame;
pub use parallel::Exec;
pub use pipeline::{count_inlier_matches, extract, Extraction, MatchReport, PipelineParams};
pub use volume::Volume;
