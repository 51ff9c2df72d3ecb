use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lumasci::color::{LumaSpace, WorkingSpace};
use lumasci::config::RunConfig;
use lumasci::dataset::{scan, DatasetKind, DatasetSplit};
use lumasci::image::load_image;
use lumasci::pipeline::{enhance_path, evaluate_split, inspect, SciEnhancer};
use lumasci::sci::{load_weights, save_weights};
use lumasci::trainer::train;
use lumasci::{Error, Result};

/// Low-light image enhancement with self-calibrated illumination.
#[derive(Debug, Parser)]
#[command(name = "lumasci", version, about)]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train illumination and calibration networks on a paired dataset.
    Train {
        /// JSON run configuration; omitted keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        /// lol or lolv2.
        #[arg(long)]
        kind: DatasetKind,
        /// Overrides train.color_space from the config.
        #[arg(long)]
        space: Option<WorkingSpace>,
        /// Overrides output_dir from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides train.max_epochs from the config.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Enhance one image or every PNG in a directory.
    Enhance {
        #[arg(long)]
        weights: PathBuf,
        /// hsv, ycbcr or rgb; must match the weights.
        #[arg(long)]
        space: WorkingSpace,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score trained weights on a dataset's test pairs (PSNR, SSIM).
    Eval {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        kind: DatasetKind,
        #[arg(long)]
        space: WorkingSpace,
        /// JSON run configuration for metric switches and layout overrides.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for metrics.tsv and metrics.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-channel histograms and luminance statistics of one image.
    Inspect {
        #[arg(long = "in")]
        input: PathBuf,
        /// hsv or ycbcr.
        #[arg(long)]
        space: LumaSpace,
        /// Histogram TSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional SVG bar chart.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Scan a dataset and emit its train/validation/test manifest.
    Split {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "lol")]
        kind: DatasetKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Manifest destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config, dataset, kind, space, out, epochs } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(space) = space {
                cfg.train.color_space = space;
            }
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            if let Some(epochs) = epochs {
                cfg.train.max_epochs = epochs;
            }
            if cfg.train.checkpoint_dir.is_none() {
                cfg.train.checkpoint_dir = Some(cfg.output_dir.clone());
            }
            cfg.train.validate()?;
            let split = scan(&dataset, &cfg.dataset.layout_for(kind), cfg.dataset.split_seed)?;
            let out_dir = cfg.output_dir.clone();
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            write_text(&out_dir.join("config.json"), &(cfg.to_json() + "\n"))?;
            split.write_manifest(out_dir.join("split.json"))?;
            let (train_n, val_n, test_n) = split.counts();
            log::info!("split: {train_n} train, {val_n} validation, {test_n} test");

            let (weights, history) = train(&cfg.train, &split)?;
            save_weights(&weights, out_dir.join("best.sciw"))?;
            write_text(&out_dir.join("history.tsv"), &history.to_tsv())?;
            println!(
                "stopped: {} after {} epochs; best epoch {} (validation loss {:.6}); weights in {}",
                history.stop.as_str(),
                history.epochs.len(),
                history.best_epoch,
                history.best_val_loss,
                out_dir.join("best.sciw").display()
            );
        }
        Command::Enhance { weights, space, input, out } => {
            let enhancer = SciEnhancer::new(load_weights(&weights)?, space)?;
            let written = enhance_path(&input, &out, &enhancer)?;
            for p in written {
                println!("{}", p.display());
            }
        }
        Command::Eval { weights, dataset, kind, space, config, out } => {
            let cfg = load_config(config.as_deref())?;
            let enhancer = SciEnhancer::new(load_weights(&weights)?, space)?;
            let split = scan(&dataset, &cfg.dataset.layout_for(kind), cfg.dataset.split_seed)?;
            let report = evaluate_split(&split, &enhancer, &cfg.metrics)?;
            let out_dir = out.unwrap_or_else(|| cfg.output_dir.join("eval"));
            report.write(&out_dir, "metrics")?;
            print!("{}", report.to_tsv());
        }
        Command::Inspect { input, space, out, svg } => {
            let ins = inspect(&load_image(&input)?, space)?;
            match out {
                Some(p) => write_text(&p, &ins.to_tsv())?,
                None => {
                    let mut stdout = std::io::stdout().lock();
                    stdout
                        .write_all(ins.to_tsv().as_bytes())
                        .map_err(|e| Error::io("<stdout>", e))?;
                }
            }
            if let Some(p) = svg {
                write_text(&p, &ins.to_svg())?;
            }
        }
        Command::Split { dataset, kind, seed, out } => {
            let split: DatasetSplit = scan(&dataset, &lumasci::dataset::DatasetLayout::for_kind(kind), seed)?;
            match out {
                Some(p) => split.write_manifest(&p)?,
                None => println!("{}", serde_json::to_string_pretty(&split).expect("split serializes")),
            }
            let (a, b, c) = split.counts();
            eprintln!("train {a}, validation {b}, test {c}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let default_level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default_level)).init();

    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
