use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coarse_rb::config::RunConfig;
use coarse_rb::model_io::load_model;
use coarse_rb::pipeline::{cmd_offline, cmd_online, cmd_sweep, model_summary, sweep_table};
use coarse_rb::{RbError, Result};

/// Coarse-proxy reduced basis solver for parameterized integral equations.
#[derive(Parser)]
#[command(name = "coarse-rb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `run.output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for per-sample work.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Build and save a reduced model for each epsilon.
    Offline(Common),
    /// Solve every sample with a saved model and write online.csv.
    Online {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Also compute fine solutions and report relative errors.
        #[arg(long)]
        with_reference: bool,
    },
    /// Offline and online stages over an epsilon list; writes sweep.csv and
    /// convergence.csv.
    Sweep(Common),
    /// Print a saved model summary or the sweep table from an output directory.
    Report {
        #[arg(long, conflicts_with = "out")]
        model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_path(&c.config)?;
    if let Some(seed) = c.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &c.out {
        cfg.output_dir = out.clone();
    }
    if let Some(j) = c.jobs {
        if j == 0 {
            return Err(RbError::Config("--jobs must be at least 1".into()));
        }
        cfg.jobs = Some(j);
    }
    if let Some(j) = cfg.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| RbError::Config(format!("cannot configure thread pool: {e}")))?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Offline(c) => {
            let cfg = load_config(&c)?;
            for run in cmd_offline(&cfg)? {
                println!("{}", run.summary());
            }
        }
        Command::Online {
            common,
            model,
            with_reference,
        } => {
            let cfg = load_config(&common)?;
            let report = cmd_online(&cfg, &model, with_reference)?;
            let mut line = format!(
                "samples={} failed={} t_online={:.3}",
                report.samples.len(),
                report.failed,
                report.t_online
            );
            if let Some(e) = report.mean_error {
                line.push_str(&format!(" mean_rel_l2={e:e}"));
            }
            if let Some(t) = report.t_fine {
                line.push_str(&format!(" t_fine={t:.3}"));
            }
            println!("{line}");
            println!("wrote {}", cfg.output_dir.join("online.csv").display());
        }
        Command::Sweep(c) => {
            let cfg = load_config(&c)?;
            let report = cmd_sweep(&cfg)?;
            let csv = std::fs::read_to_string(cfg.output_dir.join("sweep.csv"))?;
            print!("{}", sweep_table(&csv)?);
            if let Some(slope) = report.convergence_slope() {
                println!("log-log slope of mean error vs epsilon: {slope:.3}");
            }
        }
        Command::Report { model, out } => match (model, out) {
            (Some(m), _) => print!("{}", model_summary(&load_model(&m)?)),
            (None, Some(dir)) => {
                let path = dir.join("sweep.csv");
                let csv = std::fs::read_to_string(&path)
                    .map_err(|e| RbError::Config(format!("cannot read {}: {e}", path.display())))?;
                print!("{}", sweep_table(&csv)?);
            }
            (None, None) => return Err(RbError::Config("report needs --model or --out".into())),
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
