//! Flat `key = value` configuration covering every pipeline parameter.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::descriptor::{DescriptorKind, DescriptorParams};
use crate::error::{Error, Result};
use crate::matching::{HoughParams, DEFAULT_RATIO_MAX};
use crate::orient::OrientationParams;
use crate::parallel::{default_workers, Exec, DEFAULT_CHUNK};
use crate::pipeline::PipelineParams;
use crate::scalespace::PyramidParams;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub base_sigma: f64,
    pub levels_per_octave: usize,
    pub num_octaves: usize,
    pub threshold_band: i32,
    pub contrast_min: f32,
    pub radius_factor: f64,
    pub secondary_ratio: f64,
    pub max_frames: usize,
    pub refine_frames: bool,
    pub descriptor: DescriptorKind,
    pub n: usize,
    pub method: u8,
    pub blur_sigma: f64,
    pub seed: u64,
    pub patch_side: usize,
    pub ratio_max: f64,
    pub log_scale_bin: f64,
    pub translation_bin: f64,
    pub in_plane_sectors: usize,
    pub min_votes: usize,
    pub tol_log_scale: f64,
    pub tol_rotation_deg: f64,
    pub tol_translation: f64,
    pub workers: usize,
    pub chunk: usize,
}

impl Default for Config {
    fn default() -> Self {
        let p = PipelineParams::default();
        let h = HoughParams::default();
        Config {
            base_sigma: p.pyramid.base_sigma,
            levels_per_octave: p.pyramid.levels_per_octave,
            num_octaves: p.pyramid.num_octaves,
            threshold_band: p.threshold_band,
            contrast_min: p.contrast_min,
            radius_factor: p.orientation.radius_factor,
            secondary_ratio: p.orientation.secondary_ratio,
            max_frames: p.orientation.max_frames,
            refine_frames: p.orientation.refine,
            descriptor: p.descriptor.kind,
            n: p.descriptor.n,
            method: p.descriptor.method,
            blur_sigma: p.descriptor.blur_sigma,
            seed: p.descriptor.seed,
            patch_side: p.descriptor.patch_side,
            ratio_max: DEFAULT_RATIO_MAX,
            log_scale_bin: h.log_scale_bin,
            translation_bin: h.translation_bin,
            in_plane_sectors: h.in_plane_sectors,
            min_votes: h.min_votes,
            tol_log_scale: h.tol_log_scale,
            tol_rotation_deg: h.tol_rotation_deg,
            tol_translation: h.tol_translation,
            workers: default_workers(),
            chunk: DEFAULT_CHUNK,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::param(format!("invalid value {value:?} for {key}")))
}

impl Config {
    pub const KEYS: [&'static str; 25] = [
        "base_sigma",
        "levels_per_octave",
        "num_octaves",
        "threshold_band",
        "contrast_min",
        "radius_factor",
        "secondary_ratio",
        "max_frames",
        "refine_frames",
        "descriptor",
        "n",
        "method",
        "blur_sigma",
        "seed",
        "patch_side",
        "ratio_max",
        "log_scale_bin",
        "translation_bin",
        "in_plane_sectors",
        "min_votes",
        "tol_log_scale",
        "tol_rotation_deg",
        "tol_translation",
        "workers",
        "chunk",
    ];

    /// Sets one field from its text form. Does not validate ranges.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "base_sigma" => self.base_sigma = parse_value(key, v)?,
            "levels_per_octave" => self.levels_per_octave = parse_value(key, v)?,
            "num_octaves" => self.num_octaves = parse_value(key, v)?,
            "threshold_band" => self.threshold_band = parse_value(key, v)?,
            "contrast_min" => self.contrast_min = parse_value(key, v)?,
            "radius_factor" => self.radius_factor = parse_value(key, v)?,
            "secondary_ratio" => self.secondary_ratio = parse_value(key, v)?,
            "max_frames" => self.max_frames = parse_value(key, v)?,
            "refine_frames" => self.refine_frames = parse_value(key, v)?,
            "descriptor" => self.descriptor = parse_value(key, v)?,
            "n" => self.n = parse_value(key, v)?,
            "method" => self.method = parse_value(key, v)?,
            "blur_sigma" => self.blur_sigma = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "patch_side" => self.patch_side = parse_value(key, v)?,
            "ratio_max" => self.ratio_max = parse_value(key, v)?,
            "log_scale_bin" => self.log_scale_bin = parse_value(key, v)?,
            "translation_bin" => self.translation_bin = parse_value(key, v)?,
            "in_plane_sectors" => self.in_plane_sectors = parse_value(key, v)?,
            "min_votes" => self.min_votes = parse_value(key, v)?,
            "tol_log_scale" => self.tol_log_scale = parse_value(key, v)?,
            "tol_rotation_deg" => self.tol_rotation_deg = parse_value(key, v)?,
            "tol_translation" => self.tol_translation = parse_value(key, v)?,
            "workers" => self.workers = parse_value(key, v)?,
            "chunk" => self.chunk = parse_value(key, v)?,
            _ => return Err(Error::param(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "base_sigma" => self.base_sigma.to_string(),
            "levels_per_octave" => self.levels_per_octave.to_string(),
            "num_octaves" => self.num_octaves.to_string(),
            "threshold_band" => self.threshold_band.to_string(),
            "contrast_min" => self.contrast_min.to_string(),
            "radius_factor" => self.radius_factor.to_string(),
            "secondary_ratio" => self.secondary_ratio.to_string(),
            "max_frames" => self.max_frames.to_string(),
            "refine_frames" => self.refine_frames.to_string(),
            "descriptor" => self.descriptor.to_string(),
            "n" => self.n.to_string(),
            "method" => self.method.to_string(),
            "blur_sigma" => self.blur_sigma.to_string(),
            "seed" => self.seed.to_string(),
            "patch_side" => self.patch_side.to_string(),
            "ratio_max" => self.ratio_max.to_string(),
            "log_scale_bin" => self.log_scale_bin.to_string(),
            "translation_bin" => self.translation_bin.to_string(),
            "in_plane_sectors" => self.in_plane_sectors.to_string(),
            "min_votes" => self.min_votes.to_string(),
            "tol_log_scale" => self.tol_log_scale.to_string(),
            "tol_rotation_deg" => self.tol_rotation_deg.to_string(),
            "tol_translation" => self.tol_translation.to_string(),
            "workers" => self.workers.to_string(),
            "chunk" => self.chunk.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines over `self`. Blank lines and `#` comments
    /// are skipped; later keys win.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::param(format!("config line {}: expected key = value", no + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Defaults overlaid with `text`, then validated.
    pub fn parse(text: &str) -> Result<Config> {
        let mut c = Config::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config> {
        Config::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Config::KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("listed key"));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn pipeline_params(&self) -> PipelineParams {
        PipelineParams {
            pyramid: PyramidParams {
                base_sigma: self.base_sigma,
                levels_per_octave: self.levels_per_octave,
                num_octaves: self.num_octaves,
            },
            threshold_band: self.threshold_band,
            contrast_min: self.contrast_min,
            orientation: OrientationParams {
                radius_factor: self.radius_factor,
                secondary_ratio: self.secondary_ratio,
                max_frames: self.max_frames,
                refine: self.refine_frames,
            },
            descriptor: DescriptorParams {
                kind: self.descriptor,
                n: self.n,
                method: self.method,
                blur_sigma: self.blur_sigma,
                seed: self.seed,
                patch_side: self.patch_side,
            },
        }
    }

    pub fn hough_params(&self) -> HoughParams {
        HoughParams {
            log_scale_bin: self.log_scale_bin,
            translation_bin: self.translation_bin,
            in_plane_sectors: self.in_plane_sectors,
            min_votes: self.min_votes,
            tol_log_scale: self.tol_log_scale,
            tol_rotation_deg: self.tol_rotation_deg,
            tol_translation: self.tol_translation,
        }
    }

    pub fn exec(&self) -> Result<Exec> {
        Exec::new(self.workers, self.chunk)
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline_params().validate()?;
        self.hough_params().validate()?;
        if !(self.ratio_max > 0.0) || !self.ratio_max.is_finite() {
            return Err(Error::param(format!("ratio_max must be > 0, got {}", self.ratio_max)));
        }
        if self.workers == 0 || self.chunk == 0 {
            return Err(Error::param("workers and chunk must be >= 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_validate_and_match_modules() {
        let c = Config::default();
        c.validate().unwrap();
        assert_eq!(c.blur_sigma, 0.95);
        assert_eq!(c.n, 64);
        assert_eq!(c.pipeline_params().pyramid, PyramidParams::default());
        assert_eq!(c.hough_params(), HoughParams::default());
    }

    #[test]
    fn every_key_is_gettable_and_settable() {
        let mut c = Config::default();
        for key in Config::KEYS {
            let v = c.get(key).unwrap();
            c.set(key, &v).unwrap();
        }
        assert_eq!(c, Config::default());
        assert!(c.get("nope").is_none());
        assert!(matches!(c.set("nope", "1"), Err(Error::Parameter(_))));
    }

    #[test]
    fn parse_overlays_and_validates() {
        let c = Config::parse("# comment\n\ndescriptor = rrief\nblur_sigma=1.85  # wider\nn = 128\n").unwrap();
        assert_eq!(c.descriptor, DescriptorKind::Rrief);
        assert_eq!(c.blur_sigma, 1.85);
        assert_eq!(c.n, 128);
        assert!(matches!(Config::parse("levels_per_octave = 3"), Err(Error::Parameter(_))));
        assert!(matches!(Config::parse("workers = 0"), Err(Error::Parameter(_))));
        assert!(matches!(Config::parse("seed = -1"), Err(Error::Parameter(_))));
        assert!(matches!(Config::parse("just words"), Err(Error::Parameter(_))));
        assert!(matches!(Config::parse("method = 6"), Err(Error::Parameter(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("volkey.conf");
        let mut c = Config::default();
        c.seed = 99;
        c.tol_rotation_deg = 12.5;
        c.save(&path).unwrap();
        assert_eq!(Config::load(&path).unwrap(), c);
    }

    proptest! {
        #[test]
        fn text_round_trip(
            base_sigma in 0.5f64..3.0,
            levels in 4usize..9,
            band in 0i32..=80,
            contrast in 0.0f32..1.0,
            kind in 0usize..3,
            n in 1usize..512,
            method in 1u8..=5,
            blur in 0.0f64..4.0,
            seed in any::<u64>(),
            ratio in 0.1f64..1.0,
            tol in 1.0f64..40.0,
            workers in 1usize..16,
            chunk in 1usize..32,
        ) {
            let c = Config {
                base_sigma,
                levels_per_octave: levels,
                threshold_band: band,
                contrast_min: contrast,
                descriptor: DescriptorKind::ALL[kind],
                n,
                method,
                blur_sigma: blur,
                seed,
                ratio_max: ratio,
                tol_rotation_deg: tol,
                workers,
                chunk,
                ..Config::default()
            };
            prop_assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
        }
    }
}
