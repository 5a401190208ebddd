//! Command-line front end: flag parsing, config resolution, pipeline driver.

mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;

use config::{RunConfig, Settings, SynthKind};

/// Segments and denoises images by a multigrid-solved phase-field model.
#[derive(Debug, Parser)]
#[command(name = "phaseseg", version, about)]
struct Cli {
    /// Input raster (binary PGM/PPM or PNG, 8/16 bit)
    #[arg(long, value_name = "PATH", conflicts_with = "synth")]
    input: Option<PathBuf>,
    /// Generate the input instead: circles|step|composite
    #[arg(long, value_name = "KIND")]
    synth: Option<String>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Number of segmentation components (required)
    #[arg(long, value_name = "N")]
    components: Option<usize>,
    /// Interface width in pixels [default: one coarse-grid cell]
    #[arg(long, value_name = "E")]
    epsilon: Option<f64>,
    /// Fitting weight (mutually exclusive with --sigma)
    #[arg(long, value_name = "L")]
    lambda: Option<f64>,
    /// Fitting scale sigma = lambda * epsilon [default: 30]
    #[arg(long, value_name = "S")]
    sigma: Option<f64>,
    /// Pseudo-time step [default: epsilon^2]
    #[arg(long, value_name = "DT")]
    dt: Option<f64>,
    /// Uniform refinements above the base grid [default: 3]
    #[arg(long, value_name = "K")]
    refine: Option<usize>,
    /// Base-grid cell size in pixels; must divide both dimensions [default: 1]
    #[arg(long, value_name = "F")]
    coarsen: Option<u32>,
    /// Data projection: node|simplex [default: node]
    #[arg(long, value_name = "MODE")]
    projection: Option<String>,
    /// Multigrid schedule: w|v|finest [default: w]
    #[arg(long, value_name = "CYCLE")]
    cycle: Option<String>,
    /// Initialization: quantile|uniform [default: quantile]
    #[arg(long, value_name = "INIT")]
    init: Option<String>,
    /// Sweep visit order: lex|red-black [default: lex]
    #[arg(long, value_name = "ORDER")]
    ordering: Option<String>,
    /// Seed for all randomness [default: 0]
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
    /// Time-step budget [default: 500]
    #[arg(long, value_name = "N")]
    max_steps: Option<usize>,
    /// Steady-state tolerance on the iterate change [default: 1e-4]
    #[arg(long, value_name = "T")]
    tol: Option<f64>,
    /// Per-sweep correction tolerance [default: 3e-5]
    #[arg(long, value_name = "T")]
    sweep_tol: Option<f64>,
    /// Sweep budget per time step [default: 50]
    #[arg(long, value_name = "N")]
    max_sweeps: Option<usize>,
    /// Synthetic input size in pixels [default: 128]
    #[arg(long, value_name = "PX")]
    size: Option<u32>,
    /// Synthetic noise amplitude [default: 0.05]
    #[arg(long, value_name = "A")]
    noise_amp: Option<f64>,
    /// Synthetic intensity levels, comma-separated [default: 0.25,0.95,0.55,0.75]
    #[arg(long, value_name = "LIST")]
    levels: Option<String>,
    /// Synthetic background level [default: 0.1]
    #[arg(long, value_name = "B")]
    background: Option<f64>,
    /// Outputs to write: comma list of components,composite,rounded,remainder,diagnostics or all
    #[arg(long, value_name = "LIST")]
    emit: Option<String>,
    /// Key = value file supplying any option; flags take precedence
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

impl Cli {
    fn into_settings(self) -> Result<(Settings, Option<PathBuf>)> {
        let mut s = Settings::default();
        s.input = self.input;
        s.synth = self.synth.as_deref().map(SynthKind::parse).transpose()?;
        s.out = self.out;
        s.components = self.components;
        s.epsilon = self.epsilon;
        s.lambda = self.lambda;
        s.sigma = self.sigma;
        s.dt = self.dt;
        s.refine = self.refine;
        s.coarsen = self.coarsen;
        s.projection = self.projection.as_deref().map(config::parse_projection).transpose()?;
        s.cycle = self.cycle.as_deref().map(config::parse_cycle).transpose()?;
        s.init = self.init.as_deref().map(config::parse_init).transpose()?;
        s.ordering = self.ordering.as_deref().map(config::parse_ordering).transpose()?;
        s.seed = self.seed;
        s.max_steps = self.max_steps;
        s.tol = self.tol;
        s.sweep_tol = self.sweep_tol;
        s.max_sweeps = self.max_sweeps;
        s.size = self.size;
        s.noise_amp = self.noise_amp;
        s.levels = self
            .levels
            .as_deref()
            .map(|list| {
                list.split(',')
                    .map(|v| {
                        v.trim()
                            .parse::<f64>()
                            .map_err(|_| anyhow::anyhow!("levels entry does not parse: {v}"))
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .transpose()?;
        s.background = self.background;
        s.emit = self
            .emit
            .as_deref()
            .map(|list| config::EmitFlags::parse(list))
            .transpose()?;
        Ok((s, self.config))
    }
}

fn try_main() -> Result<()> {
    let cli = Cli::parse();
    let (flags, config_path) = cli.into_settings()?;
    let layered = match config_path {
        Some(path) => Settings::from_file(&path)?.merged_with(flags),
        None => flags,
    };
    let (cfg, warnings) = RunConfig::resolve(layered)?;
    pipeline::run_pipeline(&cfg, &warnings)
}

fn main() -> ExitCode {
    match try_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
