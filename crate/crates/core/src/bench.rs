//! Per-stage timing and the parallel-granularity sweep.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::matching::{hough_consensus, nearest_neighbor_matches};
use crate::parallel::Exec;
use crate::pipeline::extract_recorded;
use crate::scalespace::{convolve_separable, GaussianKernel1D};
use crate::volume::Volume;

pub const DEFAULT_REPEATS: usize = 5;
pub const DEFAULT_SWEEP_CHUNKS: [usize; 5] = [1, 2, 5, 9, 10];
pub const CSV_HEADER: &str = "stage,octave,level,workers,chunk,wall_micros";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Convolution,
    Subsample,
    Dog,
    PeakDetect,
    Orient,
    Descriptor,
    Match,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Convolution,
        Stage::Subsample,
        Stage::Dog,
        Stage::PeakDetect,
        Stage::Orient,
        Stage::Descriptor,
        Stage::Match,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Convolution => "convolution",
            Stage::Subsample => "subsample",
            Stage::Dog => "dog",
            Stage::PeakDetect => "peak_detect",
            Stage::Orient => "orient",
            Stage::Descriptor => "descriptor",
            Stage::Match => "match",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.as_str() == s)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageTiming {
    pub stage: Stage,
    pub octave: usize,
    pub level: usize,
    pub workers: usize,
    pub chunk: usize,
    pub wall_micros: f64,
}

/// Collects stage timings when enabled; a no-op otherwise.
#[derive(Debug, Default)]
pub struct Recorder {
    entries: Option<Vec<StageTiming>>,
    workers: usize,
    chunk: usize,
}

impl Recorder {
    pub fn disabled() -> Self {
        Recorder::default()
    }

    pub fn enabled(workers: usize, chunk: usize) -> Self {
        Recorder {
            entries: Some(Vec::new()),
            workers,
            chunk,
        }
    }

    pub fn time<R>(&mut self, stage: Stage, octave: usize, level: usize, f: impl FnOnce() -> R) -> R {
        let Some(entries) = self.entries.as_mut() else {
            return f();
        };
        let start = Instant::now();
        let out = f();
        entries.push(StageTiming {
            stage,
            octave,
            level,
            workers: self.workers,
            chunk: self.chunk,
            wall_micros: start.elapsed().as_secs_f64() * 1e6,
        });
        out
    }

    pub fn into_timings(self) -> Vec<StageTiming> {
        self.entries.unwrap_or_default()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        (s[m - 1] + s[m]) / 2.0
    }
}

/// Per-stage timings aggregated over repeats.
#[derive(Debug, Clone)]
pub struct PipelineTiming {
    pub workers: usize,
    pub chunk: usize,
    pub repeats: usize,
    /// One row per (stage, octave, level), in first-recorded order.
    pub mean: Vec<StageTiming>,
    pub median: Vec<StageTiming>,
    pub total_mean_micros: f64,
    pub total_median_micros: f64,
    pub keypoints: usize,
    pub features: usize,
}

/// Runs extraction plus a self-match of the features `repeats` times after
/// one discarded warm-up run. The match stage is timed at octave 0, level 0.
pub fn time_pipeline(volume: &Volume, config: &Config, workers: usize, repeats: usize) -> Result<PipelineTiming> {
    if repeats == 0 {
        return Err(Error::param("repeats must be >= 1"));
    }
    let mut config = config.clone();
    config.workers = workers;
    config.validate()?;
    let exec = config.exec()?;
    let params = config.pipeline_params();
    let hough = config.hough_params();

    let mut order: Vec<(Stage, usize, usize)> = Vec::new();
    let mut samples: BTreeMap<(Stage, usize, usize), Vec<f64>> = BTreeMap::new();
    let mut totals = Vec::with_capacity(repeats);
    let (mut keypoints, mut features) = (0, 0);
    for run in 0..=repeats {
        let mut rec = Recorder::enabled(workers, config.chunk);
        let start = Instant::now();
        let e = extract_recorded(volume, &params, &exec, &mut rec)?;
        if e.features.len() >= 2 {
            let d: Vec<_> = e.features.iter().map(|f| f.descriptor.clone()).collect();
            rec.time(Stage::Match, 0, 0, || -> Result<()> {
                let m = nearest_neighbor_matches(&d, &d, config.ratio_max, &exec)?;
                match hough_consensus(&m, &e.features, &e.features, &hough) {
                    Ok(_) | Err(Error::NoConsensus { .. }) => Ok(()),
                    Err(err) => Err(err),
                }
            })?;
        }
        let total = start.elapsed().as_secs_f64() * 1e6;
        if run == 0 {
            continue;
        }
        (keypoints, features) = (e.keypoints.len(), e.features.len());
        totals.push(total);
        let mut this_run: BTreeMap<(Stage, usize, usize), f64> = BTreeMap::new();
        for t in rec.into_timings() {
            let key = (t.stage, t.octave, t.level);
            if !samples.contains_key(&key) && !this_run.contains_key(&key) {
                order.push(key);
            }
            *this_run.entry(key).or_default() += t.wall_micros;
        }
        for (key, v) in this_run {
            samples.entry(key).or_default().push(v);
        }
    }
    let row = |key: &(Stage, usize, usize), f: fn(&[f64]) -> f64| StageTiming {
        stage: key.0,
        octave: key.1,
        level: key.2,
        workers,
        chunk: config.chunk,
        wall_micros: f(&samples[key]),
    };
    Ok(PipelineTiming {
        workers,
        chunk: config.chunk,
        repeats,
        mean: order.iter().map(|k| row(k, mean)).collect(),
        median: order.iter().map(|k| row(k, median)).collect(),
        total_mean_micros: mean(&totals),
        total_median_micros: median(&totals),
        keypoints,
        features,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub chunk: usize,
    pub mean_micros: f64,
    pub median_micros: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub workers: usize,
    /// One row per distinct candidate, in input order.
    pub rows: Vec<SweepRow>,
    /// Chunk with the lowest mean time (earliest on ties).
    pub fastest: usize,
}

impl SweepResult {
    pub fn slowest(&self) -> usize {
        let mut worst = self.rows[0];
        for r in &self.rows[1..] {
            if r.mean_micros > worst.mean_micros {
                worst = *r;
            }
        }
        worst.chunk
    }
}

/// Times the base-σ separable convolution of `volume` at each partition
/// granularity (`k³` voxels per task), one discarded warm-up per candidate.
pub fn chunk_sweep(volume: &Volume, candidates: &[usize], workers: usize, base_sigma: f64, repeats: usize) -> Result<SweepResult> {
    if candidates.is_empty() {
        return Err(Error::param("chunk candidates must be non-empty"));
    }
    if repeats == 0 {
        return Err(Error::param("repeats must be >= 1"));
    }
    let kernel = GaussianKernel1D::new(base_sigma)?;
    let base = Exec::new(workers, candidates[0].max(1))?;
    let mut rows: Vec<SweepRow> = Vec::new();
    for &k in candidates {
        if rows.iter().any(|r| r.chunk == k) {
            continue;
        }
        let exec = base.with_chunk(k)?;
        let mut times = Vec::with_capacity(repeats);
        for run in 0..=repeats {
            let start = Instant::now();
            std::hint::black_box(convolve_separable(volume, &kernel, &exec));
            if run > 0 {
                times.push(start.elapsed().as_secs_f64() * 1e6);
            }
        }
        rows.push(SweepRow {
            chunk: k,
            mean_micros: mean(&times),
            median_micros: median(&times),
        });
    }
    let mut best = rows[0];
    for r in &rows[1..] {
        if r.mean_micros < best.mean_micros {
            best = *r;
        }
    }
    Ok(SweepResult {
        workers,
        rows,
        fastest: best.chunk,
    })
}

pub fn write_csv(mut w: impl Write, timings: &[StageTiming]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for t in timings {
        writeln!(w, "{},{},{},{},{},{}", t.stage, t.octave, t.level, t.workers, t.chunk, t.wall_micros)?;
    }
    Ok(())
}

pub fn emit_csv(timings: &[StageTiming], path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(&mut buf, timings)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn parse_csv(text: &str) -> Result<Vec<StageTiming>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CSV_HEADER) {
        return Err(Error::format(format!("missing CSV header {CSV_HEADER:?}")));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::format(format!("CSV row {}: {line:?}", i + 1));
            let f: Vec<&str> = line.trim().split(',').collect();
            if f.len() != 6 {
                return Err(bad());
            }
            let wall_micros: f64 = f[5].parse().map_err(|_| bad())?;
            if !(wall_micros >= 0.0) {
                return Err(bad());
            }
            Ok(StageTiming {
                stage: Stage::parse(f[0]).ok_or_else(bad)?,
                octave: f[1].parse().map_err(|_| bad())?,
                level: f[2].parse().map_err(|_| bad())?,
                workers: f[3].parse().map_err(|_| bad())?,
                chunk: f[4].parse().map_err(|_| bad())?,
                wall_micros,
            })
        })
        .collect()
}

pub fn write_sweep_csv(mut w: impl Write, sweep: &SweepResult) -> Result<()> {
    writeln!(w, "chunk,workers,mean_micros,median_micros")?;
    for r in &sweep.rows {
        writeln!(w, "{},{},{},{}", r.chunk, sweep.workers, r.mean_micros, r.median_micros)?;
    }
    Ok(())
}
