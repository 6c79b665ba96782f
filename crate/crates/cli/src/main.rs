//! `semsplit` command-line driver.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use semsplit::experiments::{
    self, generate_synthetic, read_csv, render_bar_chart, save_dataset, sweep_to_dir, write_plot,
    ExperimentError, ExperimentSpec,
};
use semsplit::metrics::{compute_report, rate_report, Pipeline};

const EXIT_RUNTIME: u8 = 1;
const EXIT_MISSING_FILE: u8 = 3;
const EXIT_INVALID_CONFIG: u8 = 4;

#[derive(Parser)]
#[command(
    name = "semsplit",
    version,
    about = "Split semantic segmentation over a noisy channel"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the SNR sweep and write CSV, sidecar and SVG files per modulation.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory.
        #[arg(long, env = experiments::OUT_DIR_ENV)]
        out: PathBuf,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Print bit-rate and compute reports as JSON.
    Report {
        #[command(flatten)]
        config: ConfigArgs,
        /// Also write a bits-per-image bar chart.
        #[arg(long)]
        bitrate_svg: Option<PathBuf>,
        /// Also write a transmitter-MAC bar chart.
        #[arg(long)]
        compute_svg: Option<PathBuf>,
    },
    /// Plot one or more sweep CSV files into a single SVG.
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Write a synthetic dataset as PPM images with PGM label maps.
    GenData {
        #[arg(long)]
        out: PathBuf,
        /// Take image size, class count, image count and seed from a config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        /// Image size as HxW, or a single number for square images.
        #[arg(long, value_parser = parse_size)]
        size: Option<(usize, usize)>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentSpec, ExperimentError> {
        let mut spec = ExperimentSpec::load(&self.config)?;
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        Ok(spec)
    }
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok((parse(h)?, parse(w)?)),
        None => parse(s).map(|n| (n, n)),
    }
}

fn exit_code(err: &ExperimentError) -> u8 {
    match err {
        ExperimentError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
            EXIT_MISSING_FILE
        }
        ExperimentError::InvalidSpec(_) | ExperimentError::ConfigParse { .. } => {
            EXIT_INVALID_CONFIG
        }
        _ => EXIT_RUNTIME,
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), ExperimentError> {
    std::fs::write(path, text).map_err(|source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Prints a line to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<(), ExperimentError> {
    use std::io::Write;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(ExperimentError::Io {
            path: "<stdout>".into(),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn report(
    spec: &ExperimentSpec,
    bitrate_svg: Option<&Path>,
    compute_svg: Option<&Path>,
) -> Result<(), ExperimentError> {
    let cfg = spec.model_config();
    let rate = rate_report(&cfg, spec.bits()?, spec.fps)?;
    let compute = compute_report(&cfg)?;
    let json = serde_json::json!({ "rate": rate, "compute": compute });
    emit(&serde_json::to_string_pretty(&json).expect("reports serialize"))?;
    if let Some(path) = bitrate_svg {
        let bars: Vec<(String, f64)> = Pipeline::ALL
            .iter()
            .map(|&p| (p.label().to_string(), rate.bits(p) as f64 / 1e6))
            .collect();
        write_file(path, &render_bar_chart("Bits per image", "Mbit", &bars)?)?;
    }
    if let Some(path) = compute_svg {
        let bars: Vec<(String, f64)> = Pipeline::ALL
            .iter()
            .map(|&p| (p.label().to_string(), compute.get(p).tx_macs as f64 / 1e9))
            .collect();
        write_file(
            path,
            &render_bar_chart("Transmitter compute", "GMAC", &bars)?,
        )?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Sweep {
            config,
            out,
            workers,
        } => {
            let spec = config.load()?;
            for path in sweep_to_dir(&spec, &out, workers)? {
                emit(&path.display().to_string())?;
            }
        }
        Command::Report {
            config,
            bitrate_svg,
            compute_svg,
        } => report(
            &config.load()?,
            bitrate_svg.as_deref(),
            compute_svg.as_deref(),
        )?,
        Command::Plot { csv, out } => {
            let results = csv
                .iter()
                .map(|p| read_csv(p))
                .collect::<Result<Vec<_>, _>>()?;
            write_plot(&results, &out)?;
        }
        Command::GenData {
            out,
            config,
            count,
            classes,
            size,
            seed,
        } => {
            let base = match &config {
                Some(path) => ExperimentSpec::load(path)?,
                None => ExperimentSpec::desk_default(),
            };
            let cfg = base.model_config();
            let count = count.unwrap_or(base.num_images);
            let classes = classes.unwrap_or(cfg.num_classes);
            let (h, w) = size.unwrap_or((cfg.input_height, cfg.input_width));
            if classes < 2 || classes > usize::from(u16::MAX) + 1 {
                return Err(ExperimentError::InvalidSpec(format!(
                    "--classes must be in 2..=65536, got {classes}"
                )));
            }
            if h * w < 2 {
                return Err(ExperimentError::InvalidSpec(format!(
                    "--size must cover at least 2 pixels, got {h}x{w}"
                )));
            }
            let samples = generate_synthetic(count, classes, (h, w), seed.unwrap_or(base.seed));
            save_dataset(&samples, &out)?;
            emit(&format!(
                "wrote {count} image/label pairs to {}",
                out.display()
            ))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("semsplit: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
