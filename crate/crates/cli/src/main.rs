use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use iscrc_core::compression::{compress_gallery, DictLearnConfig};
use iscrc_core::harness::bench::{run_benchmark_with_jobs, seed_override, BenchConfig, Method};
use iscrc_core::harness::dataset::{load_dataset, load_gallery, read_set_csv, save_gallery, write_dataset};
use iscrc_core::harness::synth::{generate_synthetic, SyntheticSpec};
use iscrc_core::{Error, ErrorKind, ImageSet, KernelSpec, SolverConfig};

/// Image-set classification with regularized and kernelized hulls.
#[derive(Debug, Parser)]
#[command(name = "iscrc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Learn a compressed gallery from the gallery sets of a manifest.
    Compress {
        #[arg(long)]
        manifest: PathBuf,
        /// Atoms per class.
        #[arg(long, default_value_t = 10)]
        atoms: usize,
        #[arg(long)]
        out: PathBuf,
        /// Keep only the first N frames of every set.
        #[arg(long)]
        frames: Option<usize>,
        /// Dictionary initialization seed (ISCRC_SEED overrides it).
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Classify one query set (CSV, rows = dimensions) against a gallery.
    Classify {
        #[arg(long)]
        gallery: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long, value_parser = parse_method)]
        method: Method,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long, value_enum, default_value_t = KernelArg::Gaussian)]
        kernel: KernelArg,
        /// Gaussian kernel width.
        #[arg(long, default_value_t = 5.0)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(long, default_value_t = 0.001)]
        lambda1: f64,
        #[arg(long, default_value_t = 0.001)]
        lambda2: f64,
    },
    /// Run a benchmark described by a JSON config and print a summary table.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Also write the full report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset (manifest + CSVs) from a JSON spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KernelArg {
    Linear,
    Gaussian,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn read_spec(path: &PathBuf) -> Result<SyntheticSpec, Error> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Data {
        path: path.clone(),
        message: format!("synthetic spec: {e}"),
    })
}

fn write_file(path: &PathBuf, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Compress {
            manifest,
            atoms,
            out,
            frames,
            seed,
        } => {
            let data = load_dataset(&manifest, frames)?;
            let cfg = DictLearnConfig {
                atoms,
                seed: seed_override()?.unwrap_or(seed),
                ..Default::default()
            };
            let gallery = compress_gallery(&data.galleries, &cfg)?;
            save_gallery(&out, &gallery)?;
            println!(
                "{} classes, {} atoms -> {}",
                gallery.num_classes(),
                gallery.total_atoms(),
                out.display()
            );
        }
        Command::Classify {
            gallery,
            query,
            method,
            frames,
            kernel,
            delta,
            tau,
            lambda1,
            lambda2,
        } => {
            let gallery = load_gallery(&gallery)?;
            let mut features = read_set_csv(&query, Some(gallery.dimension()))?;
            if let Some(n) = frames {
                features = features.first_frames(n);
            }
            let cfg = SolverConfig {
                lambda1,
                lambda2,
                tau,
                kernel: match kernel {
                    KernelArg::Linear => KernelSpec::Linear,
                    KernelArg::Gaussian => KernelSpec::Gaussian { delta },
                },
                ..Default::default()
            };
            cfg.validate()?;
            let result = method.classify(&ImageSet::query(features, None), &gallery, &cfg)?;
            let out = serde_json::json!({
                "method": method,
                "predicted": result.predicted,
                "residuals": result.residuals,
                "converged": result.solution.converged,
                "iterations": result.solution.iterations,
                "elapsed_ms": result.elapsed.as_secs_f64() * 1e3,
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::Bench { config, jobs, out } => {
            let cfg = BenchConfig::load(&config)?;
            let report = run_benchmark_with_jobs(&cfg, jobs)?;
            print!("{}", report.table());
            if let Some(path) = out {
                write_file(&path, &serde_json::to_string_pretty(&report)?)?;
            }
        }
        Command::Synth { spec, out } => {
            let mut spec = read_spec(&spec)?;
            if let Some(seed) = seed_override()? {
                spec.seed = seed;
            }
            let data = generate_synthetic(&spec)?;
            let manifest = write_dataset(&out, &data.galleries, &data.queries)?;
            println!(
                "{} gallery and {} query sets -> {}",
                data.galleries.len(),
                data.queries.len(),
                manifest.display()
            );
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 1,
        ErrorKind::Data => 2,
        ErrorKind::Solver => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
