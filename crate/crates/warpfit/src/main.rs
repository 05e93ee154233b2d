use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use warpfit::artifacts::BasisFile;
use warpfit::io::{read_vectors, write_vectors};
use warpfit::simulate::{spec_from_config, write_corpus};
use warpfit::{Error, Pipeline, PipelineConfig, Result};
use warpfit_core::simplex::{clr_forward, clr_inverse};
use warpfit_core::WarpingFunction;

#[derive(Parser)]
#[command(name = "warpfit", version, about = "Joint amplitude, phase and duration modelling of sampled curves")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Config file (flat `key = value`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "warpfit-out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Override a config key, e.g. `--set grid_size=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProcessArg {
    Amplitude,
    Phase,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransformMode {
    Clr,
    ClrInverse,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage (cached stages are reused).
    Run(Common),
    /// Screen and smooth the raw curves onto the common grid.
    Smooth(Common),
    /// Estimate warping functions per registration class.
    Register {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = ["pairwise", "auc"])]
        method: Option<String>,
        /// Penalty value or `auto`.
        #[arg(long)]
        lambda: Option<String>,
        #[arg(long)]
        nstar: Option<usize>,
        #[arg(long)]
        class_column: Option<String>,
    },
    /// Centered log-ratio coordinates of the warps. With a mode, converts
    /// headerless CSV vectors instead.
    Transform {
        mode: Option<TransformMode>,
        #[arg(long, requires = "mode")]
        input: Option<PathBuf>,
        #[arg(long, requires = "mode")]
        output: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Functional principal components and scores of both processes.
    Decompose {
        #[command(flatten)]
        common: Common,
        /// Process whose component table is printed.
        #[arg(long, value_enum, default_value = "both")]
        process: ProcessArg,
        #[arg(long)]
        jnd_amp: Option<f64>,
        #[arg(long)]
        jnd_phase: Option<f64>,
        #[arg(long, value_parser = ["peak", "rms"])]
        metric: Option<String>,
    },
    /// Fit the multivariate mixed-effects model.
    Fit {
        #[command(flatten)]
        common: Common,
        /// File holding the fixed-effects formula.
        #[arg(long)]
        formula: Option<PathBuf>,
        #[arg(long)]
        scalar_residual: bool,
        #[arg(long)]
        max_evals: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Observed vs estimated trajectories on physical time.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        /// Comma-separated curve ids (default: all).
        #[arg(long, value_delimiter = ',')]
        ids: Option<Vec<String>>,
    },
    /// Write a synthetic corpus (curves, covariates, ground truth) and a
    /// config pointing at it.
    Simulate(Common),
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run_stage(cfg: PipelineConfig, common: &Common, last: &str, ids: Option<Vec<String>>) -> Result<()> {
    let mut pipeline = Pipeline::new(cfg, &common.out);
    pipeline.ids = ids;
    let report = pipeline.run_through(last)?;
    for note in &report.notes {
        eprintln!("note: {note}");
    }
    for stage in &report.cached {
        eprintln!("{stage}: cached");
    }
    for stage in &report.executed {
        eprintln!("{stage}: done");
    }
    eprintln!("outputs in {}", common.out.display());
    Ok(())
}

fn print_components(path: &Path) -> Result<()> {
    let b = BasisFile::load(path)?;
    println!("{} ({} selected, metric {}, threshold {})", b.process, b.selected, b.metric, b.threshold);
    println!("component,eigenvalue,percent,deviation");
    for (i, ((l, p), d)) in b.eigenvalues.iter().zip(&b.variance_percent).zip(&b.deviations).enumerate() {
        println!("{},{l:.6e},{p:.2},{d:.4}", i + 1);
    }
    Ok(())
}

fn transform_vectors(mode: TransformMode, input: &Path, output: &Path) -> Result<()> {
    let rows = read_vectors(input)?;
    let out = rows
        .iter()
        .map(|r| match mode {
            TransformMode::Clr => Ok(clr_forward(&WarpingFunction::new(r.clone())?)?.into_vec()),
            TransformMode::ClrInverse => Ok(clr_inverse(r).into_values()),
        })
        .collect::<Result<Vec<_>>>()?;
    write_vectors(output, &out)
}

fn simulate(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let spec = spec_from_config(&cfg);
    let corpus = write_corpus(&spec, cfg.seed, &common.out)?;
    let conf = common.out.join("warpfit.conf");
    let text = format!(
        "# synthetic corpus, seed {}\ncurve_file = curves.csv\ncovariate_file = covariates.csv\ngrid_size = {}\nseed = {}\n",
        cfg.seed, cfg.grid_size, cfg.seed
    );
    std::fs::write(&conf, text).map_err(|e| Error::io(&conf, e))?;
    eprintln!("{} curves written to {}", corpus.curves.len(), common.out.display());
    Ok(())
}

fn main_inner(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(common) => run_stage(load_config(&common)?, &common, "reconstruct", None),
        Command::Smooth(common) => run_stage(load_config(&common)?, &common, "smooth", None),
        Command::Register {
            common,
            method,
            lambda,
            nstar,
            class_column,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(v) = method {
                cfg.set("registration", &v)?;
            }
            if let Some(v) = lambda {
                cfg.set("lambda", &v)?;
            }
            if let Some(v) = nstar {
                cfg.set("nstar", &v.to_string())?;
            }
            if let Some(v) = class_column {
                cfg.set("class_column", &v)?;
            }
            run_stage(cfg, &common, "register", None)
        }
        Command::Transform {
            mode,
            input,
            output,
            common,
        } => match (mode, input, output) {
            (Some(mode), Some(input), Some(output)) => transform_vectors(mode, &input, &output),
            (Some(_), _, _) => Err(Error::Config("transform with a mode needs --input and --output".into())),
            (None, _, _) => run_stage(load_config(&common)?, &common, "transform", None),
        },
        Command::Decompose {
            common,
            process,
            jnd_amp,
            jnd_phase,
            metric,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(v) = jnd_amp {
                cfg.set("jnd_amp", &v.to_string())?;
            }
            if let Some(v) = jnd_phase {
                cfg.set("jnd_phase", &v.to_string())?;
            }
            if let Some(v) = metric {
                cfg.set("metric", &v)?;
            }
            run_stage(cfg, &common, "decompose", None)?;
            let dir = common.out.join("decompose");
            if matches!(process, ProcessArg::Amplitude | ProcessArg::Both) {
                print_components(&dir.join("amplitude_basis.json"))?;
            }
            if matches!(process, ProcessArg::Phase | ProcessArg::Both) {
                print_components(&dir.join("phase_basis.json"))?;
            }
            Ok(())
        }
        Command::Fit {
            common,
            formula,
            scalar_residual,
            max_evals,
            tol,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(path) = formula {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let text: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).collect();
                cfg.set("formula", &text.join(" "))?;
            }
            if scalar_residual {
                cfg.scalar_residual = true;
            }
            if let Some(v) = max_evals {
                cfg.set("max_evals", &v.to_string())?;
            }
            if let Some(v) = tol {
                cfg.set("tol", &v.to_string())?;
            }
            run_stage(cfg, &common, "fit", None)
        }
        Command::Reconstruct { common, ids } => run_stage(load_config(&common)?, &common, "reconstruct", ids),
        Command::Simulate(common) => simulate(&common),
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // messages already embed their sources
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
