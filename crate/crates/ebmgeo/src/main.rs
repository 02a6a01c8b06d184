use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ebmgeo::{PipelineError, Run, RunConfig, OUTPUT_ENV};
use ebmgeo_core::density::DatasetVariant;

#[derive(Parser)]
#[command(name = "ebmgeo", version, about = "Geodesics under energy-based Riemannian metrics")]
struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Output root; overrides `output_dir` from the config.
    #[arg(short, long, global = true, env = OUTPUT_ENV)]
    out: Option<PathBuf>,
    /// Worker threads for per-pair solvers.
    #[arg(short, long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    #[command(subcommand)]
    Dataset(DatasetCmd),
    #[command(subcommand)]
    Ebm(EbmCmd),
    #[command(subcommand)]
    Metric(MetricCmd),
    #[command(subcommand)]
    Geodesic(GeodesicCmd),
    #[command(subcommand)]
    Eval(EvalCmd),
    #[command(subcommand)]
    Plot(PlotCmd),
    /// Every stage except shooting, in order.
    Run,
    /// Print the resolved configuration.
    Config,
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Sample the dataset and the evaluation endpoint pairs.
    Gen {
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Ucg,
    Wcg,
}

#[derive(Subcommand)]
enum EbmCmd {
    /// Train the energy model with contrastive divergence.
    Train,
}

#[derive(Subcommand)]
enum MetricCmd {
    /// Fit the RBF and LAND models.
    Fit,
    /// Compute α, β for every selected metric.
    Calibrate,
}

#[derive(Subcommand)]
enum GeodesicCmd {
    /// Train one interpolant network per metric.
    Train,
    /// Optimize waypoints for every evaluation pair.
    Solve,
    /// Shoot the geodesic ODE of the 1/p metric for every evaluation pair.
    Shoot,
}

#[derive(Subcommand)]
enum EvalCmd {
    Run,
}

#[derive(Subcommand)]
enum PlotCmd {
    /// Geodesics over the −log p landscape.
    Fig1,
    /// Step-size profiles along geodesics.
    Fig2,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: Cli) -> Result<(), PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Command::Dataset(DatasetCmd::Gen { variant, seed }) = &cli.command {
        if let Some(v) = variant {
            cfg.dataset.variant = match v {
                Variant::Ucg => DatasetVariant::Ucg,
                Variant::Wcg => DatasetVariant::Wcg,
            };
        }
        if let Some(s) = seed {
            cfg.dataset.seed = *s;
        }
    }
    let root = cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let run = Run::new(cfg, root)?;
    match cli.command {
        Command::Dataset(DatasetCmd::Gen { .. }) => run.dataset_gen(),
        Command::Ebm(EbmCmd::Train) => run.ebm_train(),
        Command::Metric(MetricCmd::Fit) => run.metric_fit(),
        Command::Metric(MetricCmd::Calibrate) => run.metric_calibrate(),
        Command::Geodesic(GeodesicCmd::Train) => run.geodesic_train(),
        Command::Geodesic(GeodesicCmd::Solve) => run.geodesic_solve(),
        Command::Geodesic(GeodesicCmd::Shoot) => run.geodesic_shoot(),
        Command::Eval(EvalCmd::Run) => run.eval_run().map(|r| print!("{}", r.to_table())),
        Command::Plot(PlotCmd::Fig1) => run.plot_fig1(),
        Command::Plot(PlotCmd::Fig2) => run.plot_fig2(),
        Command::Run => run.run_all().map(|r| print!("{}", r.to_table())),
        Command::Config => {
            print!("{}", run.cfg.to_toml());
            Ok(())
        }
    }
}
