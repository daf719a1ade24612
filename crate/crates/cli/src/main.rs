//! `volkey` command-line front end: extract, match, bench.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};
use volkey::bench::{self, Recorder, Stage, DEFAULT_REPEATS};
use volkey::formats::{self, DescriptorFile};
use volkey::pipeline::{extract_recorded, match_features};
use volkey::volume::{load_nifti_subset, load_raw_with_header};
use volkey::{Config, Error, Volume};

const EXIT_OTHER: u8 = 1;
const EXIT_PARAMETER: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_FORMAT: u8 = 4;
const EXIT_DATA: u8 = 5;
const EXIT_NO_CONSENSUS: u8 = 6;

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Parameter(_)) => EXIT_PARAMETER,
        Some(Error::Io(_)) => EXIT_IO,
        Some(Error::Format(_)) => EXIT_FORMAT,
        Some(Error::Data(_) | Error::Size(_) | Error::EmptyHistogram(_)) => EXIT_DATA,
        Some(Error::NoConsensus { .. }) => EXIT_NO_CONSENSUS,
        None if err.downcast_ref::<std::io::Error>().is_some() => EXIT_IO,
        None => EXIT_OTHER,
    }
}

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

/// One `--<key>` override per config field, defaults shown in help.
fn config_args(skip: &[&str]) -> Vec<Arg> {
    let defaults = Config::default();
    let mut args = vec![Arg::new("config")
        .long("config")
        .value_name("FILE")
        .value_parser(value_parser!(PathBuf))
        .help("Key = value config file; flags override it")];
    for key in Config::KEYS.iter().filter(|k| !skip.contains(k)) {
        let default = defaults.get(key).expect("listed key");
        args.push(
            Arg::new(*key)
                .long(flag_name(key))
                .value_name("VALUE")
                .help_heading("Config")
                .help(format!("[default: {default}]")),
        );
    }
    args
}

fn load_config(m: &ArgMatches, skip: &[&str]) -> anyhow::Result<Config> {
    let mut config = match m.get_one::<PathBuf>("config") {
        Some(path) => {
            let mut c = Config::default();
            c.apply_text(&std::fs::read_to_string(path).map_err(Error::Io)?)?;
            c
        }
        None => Config::default(),
    };
    for key in Config::KEYS.iter().filter(|k| !skip.contains(k)) {
        if let Some(v) = m.get_one::<String>(key) {
            config.set(key, v)?;
        }
    }
    config.validate()?;
    Ok(config)
}

/// NIfTI-1 for `.nii`/`.nii.gz`, otherwise raw float32 with a sidecar header.
fn load_volume(path: &Path) -> anyhow::Result<Volume> {
    let name = path.to_string_lossy();
    let v = if name.ends_with(".nii") || name.ends_with(".nii.gz") {
        load_nifti_subset(path)?
    } else {
        load_raw_with_header(path)?
    };
    Ok(v)
}

fn input_arg(help: &'static str) -> Arg {
    Arg::new("input")
        .required(true)
        .value_name("VOLUME")
        .value_parser(value_parser!(PathBuf))
        .help(help)
}

fn cli() -> Command {
    let volume_help = "Input volume (.nii, .nii.gz, or .f32 with .hdr.txt sidecar)";
    Command::new("volkey")
        .about("Volumetric keypoint extraction, description and matching")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            Command::new("extract")
                .about("Detect, orient and describe keypoints")
                .after_help("Descriptor defaults: blur_sigma = 0.95, n = 64 point pairs.")
                .arg(input_arg(volume_help))
                .arg(
                    Arg::new("output")
                        .short('o')
                        .long("output")
                        .required(true)
                        .value_name("PREFIX")
                        .value_parser(value_parser!(PathBuf))
                        .help("Writes <PREFIX>.keys.txt and <PREFIX>.desc.txt"),
                )
                .arg(
                    Arg::new("dump-pyramid")
                        .long("dump-pyramid")
                        .value_name("DIR")
                        .value_parser(value_parser!(PathBuf))
                        .help("Also write every pyramid level as a raw volume"),
                )
                .args(config_args(&[])),
        )
        .subcommand(
            Command::new("match")
                .about("Match two descriptor files and report the consensus transform")
                .arg(
                    Arg::new("a")
                        .required(true)
                        .value_name("DESC_A")
                        .value_parser(value_parser!(PathBuf)),
                )
                .arg(
                    Arg::new("b")
                        .required(true)
                        .value_name("DESC_B")
                        .value_parser(value_parser!(PathBuf)),
                )
                .arg(
                    Arg::new("csv")
                        .long("csv")
                        .value_name("FILE")
                        .value_parser(value_parser!(PathBuf))
                        .help("Write inlier matches as CSV"),
                )
                .args(config_args(&[])),
        )
        .subcommand(
            Command::new("bench")
                .about("Time pipeline stages and sweep the chunk granularity")
                .arg(input_arg(volume_help))
                .arg(
                    Arg::new("repeat")
                        .long("repeat")
                        .value_name("N")
                        .default_value(DEFAULT_REPEATS.to_string())
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("workers")
                        .long("workers")
                        .value_name("N")
                        .action(ArgAction::Append)
                        .value_parser(value_parser!(usize))
                        .help("Worker count to time; repeat for a comparison table"),
                )
                .arg(
                    Arg::new("chunks")
                        .long("chunks")
                        .value_name("K,K,..")
                        .value_delimiter(',')
                        .value_parser(value_parser!(usize))
                        .help("Chunk edge lengths for the convolution sweep"),
                )
                .arg(
                    Arg::new("csv")
                        .long("csv")
                        .value_name("FILE")
                        .value_parser(value_parser!(PathBuf))
                        .help("Write the stage CSV here instead of stdout"),
                )
                .args(config_args(&["workers"])),
        )
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn stage_summary(timings: &[bench::StageTiming]) -> Vec<(Stage, f64)> {
    let mut totals: BTreeMap<Stage, f64> = BTreeMap::new();
    for t in timings {
        *totals.entry(t.stage).or_default() += t.wall_micros;
    }
    totals.into_iter().collect()
}

fn cmd_extract(m: &ArgMatches) -> anyhow::Result<()> {
    let config = load_config(m, &[])?;
    let volume = load_volume(m.get_one::<PathBuf>("input").expect("required"))?;
    let exec = config.exec()?;
    let mut rec = Recorder::enabled(config.workers, config.chunk);
    let start = Instant::now();
    let e = extract_recorded(&volume, &config.pipeline_params(), &exec, &mut rec)?;
    let secs = start.elapsed().as_secs_f64();

    let prefix = m.get_one::<PathBuf>("output").expect("required");
    let keys_path = with_suffix(prefix, ".keys.txt");
    let desc_path = with_suffix(prefix, ".desc.txt");
    formats::write_keypoints(&keys_path, &e.features)?;
    let file = DescriptorFile {
        kind: config.descriptor,
        n: e.features.first().map_or(config.n, |f| f.descriptor.len()),
        seed: config.seed,
        features: e.features.clone(),
    };
    formats::write_descriptors(&desc_path, &file)?;
    if let Some(dir) = m.get_one::<PathBuf>("dump-pyramid") {
        std::fs::create_dir_all(dir).map_err(Error::Io)?;
        e.pyramid.dump(dir)?;
    }

    let [nx, ny, nz] = volume.dims();
    println!("volume: {nx}x{ny}x{nz}");
    println!("keypoints: {}", e.keypoints.len());
    println!("unoriented: {}", e.unoriented);
    println!("features: {} ({})", e.features.len(), config.descriptor);
    println!("dropped: {}", e.dropped);
    for (stage, micros) in stage_summary(&rec.into_timings()) {
        println!("stage {stage}: {:.1} ms", micros / 1e3);
    }
    println!("total: {secs:.3} s");
    println!("wrote {} and {}", keys_path.display(), desc_path.display());
    Ok(())
}

fn cmd_match(m: &ArgMatches) -> anyhow::Result<()> {
    let config = load_config(m, &[])?;
    let a = formats::read_descriptors(m.get_one::<PathBuf>("a").expect("required"))?;
    let b = formats::read_descriptors(m.get_one::<PathBuf>("b").expect("required"))?;
    if a.kind != b.kind {
        return Err(Error::Data(format!("descriptor kinds differ: {} vs {}", a.kind, b.kind)).into());
    }
    if a.n != b.n || (a.kind != volkey::DescriptorKind::SiftRank && a.seed != b.seed) {
        return Err(Error::Data(format!(
            "descriptor files were built with different point pairs (n {} vs {}, seed {} vs {})",
            a.n, b.n, a.seed, b.seed
        ))
        .into());
    }
    let exec = config.exec()?;
    let report = match_features(&a.features, &b.features, config.ratio_max, &config.hough_params(), &exec)?;
    print!("{}", formats::match_report_text(&report));
    if let Some(path) = m.get_one::<PathBuf>("csv") {
        let mut w = BufWriter::new(File::create(path).map_err(Error::Io)?);
        formats::write_match_csv(&mut w, &report.consensus.inliers)?;
        w.flush().map_err(Error::Io)?;
    }
    Ok(())
}

fn cmd_bench(m: &ArgMatches) -> anyhow::Result<()> {
    let config = load_config(m, &["workers"])?;
    let volume = load_volume(m.get_one::<PathBuf>("input").expect("required"))?;
    let repeats = *m.get_one::<usize>("repeat").expect("defaulted");
    let workers: Vec<usize> = match m.get_many::<usize>("workers") {
        Some(w) => w.copied().collect(),
        None => vec![config.workers],
    };

    let mut runs = Vec::new();
    for &w in &workers {
        runs.push(bench::time_pipeline(&volume, &config, w, repeats)?);
    }
    let rows: Vec<_> = runs.iter().flat_map(|r| r.median.iter().cloned()).collect();
    match m.get_one::<PathBuf>("csv") {
        Some(path) => bench::emit_csv(&rows, path)?,
        None => bench::write_csv(std::io::stdout().lock(), &rows)?,
    }

    println!();
    println!("workers,total_median_micros,total_mean_micros,speedup,keypoints,features");
    let base = runs[0].total_median_micros;
    for r in &runs {
        println!(
            "{},{:.0},{:.0},{:.2},{},{}",
            r.workers,
            r.total_median_micros,
            r.total_mean_micros,
            base / r.total_median_micros,
            r.keypoints,
            r.features
        );
    }

    if let Some(chunks) = m.get_many::<usize>("chunks") {
        let chunks: Vec<usize> = chunks.copied().collect();
        let sweep = bench::chunk_sweep(&volume, &chunks, workers[0], config.base_sigma, repeats)?;
        println!();
        bench::write_sweep_csv(std::io::stdout().lock(), &sweep)?;
        println!("fastest chunk: {}, slowest chunk: {}", sweep.fastest, sweep.slowest());
    }
    Ok(())
}

fn main() -> ExitCode {
    let m = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_PARAMETER) } else { ExitCode::SUCCESS };
        }
    };
    let result = match m.subcommand() {
        Some(("extract", sub)) => cmd_extract(sub),
        Some(("match", sub)) => cmd_match(sub),
        Some(("bench", sub)) => cmd_bench(sub),
        _ => unreachable!("subcommand required"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("volkey: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_consistent() {
        cli().debug_assert();
    }

    #[test]
    fn every_config_key_has_a_flag() {
        let cmd = cli();
        let extract = cmd.find_subcommand("extract").unwrap();
        for key in Config::KEYS {
            let arg = extract.get_arguments().find(|a| a.get_id() == key).unwrap();
            assert_eq!(arg.get_long(), Some(flag_name(key).as_str()));
        }
    }

    #[test]
    fn flags_override_config_values() {
        let m = cli()
            .try_get_matches_from(["volkey", "match", "a", "b", "--blur-sigma", "1.85", "--descriptor", "brief"])
            .unwrap();
        let (_, sub) = m.subcommand().unwrap();
        let c = load_config(sub, &[]).unwrap();
        assert_eq!(c.blur_sigma, 1.85);
        assert_eq!(c.descriptor, volkey::DescriptorKind::Brief);
    }

    #[test]
    fn invalid_values_are_parameter_errors() {
        let m = cli().try_get_matches_from(["volkey", "match", "a", "b", "--n", "0"]).unwrap();
        let (_, sub) = m.subcommand().unwrap();
        let err = load_config(sub, &[]).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_PARAMETER);
    }

    #[test]
    fn error_kinds_map_to_distinct_codes() {
        let codes = [
            exit_code(&Error::Parameter(String::new()).into()),
            exit_code(&Error::Io(std::io::Error::other("x")).into()),
            exit_code(&Error::Format(String::new()).into()),
            exit_code(&Error::Data(String::new()).into()),
            exit_code(&Error::NoConsensus { votes: 0, required: 3 }.into()),
            exit_code(&anyhow::anyhow!("other")),
        ];
        let mut unique = codes.to_vec();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), codes.len());
        assert!(codes.iter().all(|&c| c != 0));
    }

    #[test]
    fn bench_chunks_parse_as_a_list() {
        let m = cli()
            .try_get_matches_from(["volkey", "bench", "v.f32", "--chunks", "1,5,10", "--workers", "1", "--workers", "2"])
            .unwrap();
        let (_, sub) = m.subcommand().unwrap();
        assert_eq!(sub.get_many::<usize>("chunks").unwrap().copied().collect::<Vec<_>>(), [1, 5, 10]);
        assert_eq!(sub.get_many::<usize>("workers").unwrap().copied().collect::<Vec<_>>(), [1, 2]);
    }
}
