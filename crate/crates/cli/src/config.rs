//! Run configuration: built-in defaults, overridden by a key = value config
//! file, overridden by command-line flags. The resolved configuration is
//! fully explicit and written next to the outputs, in the same format the
//! `--config` option accepts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use phaseseg::fidelity::ProjectionMode;
use phaseseg::solver::{Cycle, InitStrategy, SweepOrdering};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Circles,
    Step,
    Composite,
}

impl SynthKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "circles" => Ok(Self::Circles),
            "step" => Ok(Self::Step),
            "composite" => Ok(Self::Composite),
            other => bail!("synth must be circles|step|composite, got {other}"),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Circles => "circles",
            Self::Step => "step",
            Self::Composite => "composite",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Input(PathBuf),
    Synth(SynthKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmitFlags {
    pub components: bool,
    pub composite: bool,
    pub rounded: bool,
    pub remainder: bool,
    pub diagnostics: bool,
}

impl Default for EmitFlags {
    fn default() -> Self {
        Self { components: true, composite: true, rounded: true, remainder: true, diagnostics: true }
    }
}

impl EmitFlags {
    pub fn parse(list: &str) -> Result<Self> {
        let mut flags =
            Self { components: false, composite: false, rounded: false, remainder: false, diagnostics: false };
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "components" => flags.components = true,
                "composite" => flags.composite = true,
                "rounded" => flags.rounded = true,
                "remainder" => flags.remainder = true,
                "diagnostics" => flags.diagnostics = true,
                "all" => flags = Self::default(),
                other => bail!(
                    "emit must list components|composite|rounded|remainder|diagnostics|all, got {other}"
                ),
            }
        }
        Ok(flags)
    }

    fn format(&self) -> String {
        let mut parts = Vec::new();
        if self.components {
            parts.push("components");
        }
        if self.composite {
            parts.push("composite");
        }
        if self.rounded {
            parts.push("rounded");
        }
        if self.remainder {
            parts.push("remainder");
        }
        if self.diagnostics {
            parts.push("diagnostics");
        }
        parts.join(",")
    }
}

/// One layer of settings; `None` means "not given here".
#[derive(Debug, Clone, Default)]
pub struct Settings {
    pub input: Option<PathBuf>,
    pub synth: Option<SynthKind>,
    pub out: Option<PathBuf>,
    pub components: Option<usize>,
    pub epsilon: Option<f64>,
    pub lambda: Option<f64>,
    pub sigma: Option<f64>,
    pub dt: Option<f64>,
    pub refine: Option<usize>,
    pub coarsen: Option<u32>,
    pub projection: Option<ProjectionMode>,
    pub cycle: Option<Cycle>,
    pub init: Option<InitStrategy>,
    pub ordering: Option<SweepOrdering>,
    pub seed: Option<u64>,
    pub max_steps: Option<usize>,
    pub tol: Option<f64>,
    pub sweep_tol: Option<f64>,
    pub max_sweeps: Option<usize>,
    pub size: Option<u32>,
    pub noise_amp: Option<f64>,
    pub levels: Option<Vec<f64>>,
    pub background: Option<f64>,
    pub emit: Option<EmitFlags>,
}

impl Settings {
    /// Parses the key = value config-file format; later keys override
    /// earlier ones, unknown keys are rejected by name.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        Self::from_str(&text).with_context(|| format!("in config file {}", path.display()))
    }

    pub fn from_str(text: &str) -> Result<Self> {
        let mut s = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", lineno + 1))?;
            let key = key.trim();
            let value = value.trim();
            s.set(key, value)
                .with_context(|| format!("line {}: key {key}", lineno + 1))?;
        }
        Ok(s)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(value: &str, what: &str) -> Result<T> {
            value.parse().map_err(|_| anyhow!("{what} does not parse: {value}"))
        }
        match key {
            "input" => self.input = Some(PathBuf::from(value)),
            "synth" => self.synth = Some(SynthKind::parse(value)?),
            "out" => self.out = Some(PathBuf::from(value)),
            "components" => self.components = Some(num(value, "components")?),
            "epsilon" => self.epsilon = Some(num(value, "epsilon")?),
            "lambda" => self.lambda = Some(num(value, "lambda")?),
            "sigma" => self.sigma = Some(num(value, "sigma")?),
            "dt" => self.dt = Some(num(value, "dt")?),
            "refine" => self.refine = Some(num(value, "refine")?),
            "coarsen" => self.coarsen = Some(num(value, "coarsen")?),
            "projection" => self.projection = Some(parse_projection(value)?),
            "cycle" => self.cycle = Some(parse_cycle(value)?),
            "init" => self.init = Some(parse_init(value)?),
            "ordering" => self.ordering = Some(parse_ordering(value)?),
            "seed" => self.seed = Some(num(value, "seed")?),
            "max_steps" => self.max_steps = Some(num(value, "max_steps")?),
            "tol" => self.tol = Some(num(value, "tol")?),
            "sweep_tol" => self.sweep_tol = Some(num(value, "sweep_tol")?),
            "max_sweeps" => self.max_sweeps = Some(num(value, "max_sweeps")?),
            "size" => self.size = Some(num(value, "size")?),
            "noise_amp" => self.noise_amp = Some(num(value, "noise_amp")?),
            "levels" => {
                let parsed: Result<Vec<f64>> = value
                    .split(',')
                    .map(|v| num(v.trim(), "levels entry"))
                    .collect();
                self.levels = Some(parsed?);
            }
            "background" => self.background = Some(num(value, "background")?),
            "emit" => self.emit = Some(EmitFlags::parse(value)?),
            other => bail!("unknown key: {other}"),
        }
        Ok(())
    }

    /// Overlays `top` (typically command-line flags) onto `self`.
    pub fn merged_with(mut self, top: Settings) -> Settings {
        // an explicit source choice on top replaces the one below entirely
        if top.input.is_some() || top.synth.is_some() {
            self.input = None;
            self.synth = None;
        }
        macro_rules! take {
            ($($field:ident),*) => {
                $(if top.$field.is_some() { self.$field = top.$field; })*
            };
        }
        take!(
            input, synth, out, components, epsilon, lambda, sigma, dt, refine, coarsen,
            projection, cycle, init, ordering, seed, max_steps, tol, sweep_tol, max_sweeps,
            size, noise_amp, levels, background, emit
        );
        self
    }
}

pub fn parse_projection(s: &str) -> Result<ProjectionMode> {
    match s {
        "node" => Ok(ProjectionMode::ByNode),
        "simplex" => Ok(ProjectionMode::BySimplex),
        other => bail!("projection must be node|simplex, got {other}"),
    }
}

pub fn parse_cycle(s: &str) -> Result<Cycle> {
    match s {
        "w" => Ok(Cycle::W),
        "v" => Ok(Cycle::V),
        "finest" => Ok(Cycle::FinestOnly),
        other => bail!("cycle must be w|v|finest, got {other}"),
    }
}

pub fn parse_init(s: &str) -> Result<InitStrategy> {
    match s {
        "quantile" => Ok(InitStrategy::Quantile),
        "uniform" => Ok(InitStrategy::UniformNoise),
        other => bail!("init must be quantile|uniform, got {other}"),
    }
}

pub fn parse_ordering(s: &str) -> Result<SweepOrdering> {
    match s {
        "lex" => Ok(SweepOrdering::Lexicographic),
        "red-black" => Ok(SweepOrdering::RedBlack),
        other => bail!("ordering must be lex|red-black, got {other}"),
    }
}

/// Fully resolved configuration: every field explicit.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub source: Source,
    pub out: PathBuf,
    pub components: usize,
    pub epsilon: f64,
    pub lambda: f64,
    pub dt: f64,
    pub refine: usize,
    pub coarsen: u32,
    pub projection: ProjectionMode,
    pub cycle: Cycle,
    pub init: InitStrategy,
    pub ordering: SweepOrdering,
    pub seed: u64,
    pub max_steps: usize,
    pub tol: f64,
    pub sweep_tol: f64,
    pub max_sweeps: usize,
    pub size: u32,
    pub noise_amp: f64,
    pub levels: Vec<f64>,
    pub background: f64,
    pub emit: EmitFlags,
}

impl RunConfig {
    /// Materializes defaults and checks cross-field constraints. Returns the
    /// configuration and any warnings to surface.
    pub fn resolve(s: Settings) -> Result<(Self, Vec<String>)> {
        let mut warnings = Vec::new();
        let source = match (s.input, s.synth) {
            (Some(p), None) => Source::Input(p),
            (None, Some(k)) => Source::Synth(k),
            (None, None) => bail!("one of --input or --synth is required"),
            (Some(_), Some(_)) => bail!("--input and --synth are mutually exclusive"),
        };
        let out = s.out.ok_or_else(|| anyhow!("--out is required"))?;
        let components = s.components.ok_or_else(|| anyhow!("--components is required"))?;
        if components < 2 {
            bail!("components must be at least 2, got {components}");
        }
        let coarsen = s.coarsen.unwrap_or(1);
        if coarsen == 0 {
            bail!("coarsen must be at least 1");
        }
        let refine = s.refine.unwrap_or(3);
        // natural scale: the interface width of one coarse-grid cell
        let epsilon = s.epsilon.unwrap_or(coarsen as f64);
        if epsilon <= 0.0 {
            bail!("epsilon must be positive, got {epsilon}");
        }
        let lambda = match (s.lambda, s.sigma) {
            (Some(_), Some(_)) => bail!("--lambda and --sigma are mutually exclusive"),
            (Some(l), None) => l,
            (None, Some(sg)) => sg / epsilon,
            (None, None) => 30.0 / epsilon,
        };
        if lambda < 0.0 {
            bail!("lambda must be nonnegative, got {lambda}");
        }
        let sigma = lambda * epsilon;
        if !(10.0..=100.0).contains(&sigma) {
            warnings.push(format!(
                "sigma = {sigma} is outside the recommended band [10, 100]"
            ));
        }
        let dt = s.dt.unwrap_or(epsilon * epsilon);
        if dt <= 0.0 {
            bail!("dt must be positive, got {dt}");
        }
        let tol = s.tol.unwrap_or(1e-4);
        let sweep_tol = s.sweep_tol.unwrap_or(3e-5);
        if tol <= 0.0 || sweep_tol <= 0.0 {
            bail!("tolerances must be positive");
        }
        let size = s.size.unwrap_or(128);
        if size == 0 {
            bail!("size must be positive");
        }
        let noise_amp = s.noise_amp.unwrap_or(0.05);
        if !(0.0..=1.0).contains(&noise_amp) {
            bail!("noise_amp must lie in [0, 1], got {noise_amp}");
        }
        let levels = s.levels.unwrap_or_else(|| vec![0.25, 0.95, 0.55, 0.75]);
        if levels.is_empty() || levels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            bail!("levels must be a nonempty list of intensities in [0, 1]");
        }
        let background = s.background.unwrap_or(0.1);
        if !(0.0..=1.0).contains(&background) {
            bail!("background must lie in [0, 1], got {background}");
        }
        Ok((
            Self {
                source,
                out,
                components,
                epsilon,
                lambda,
                dt,
                refine,
                coarsen,
                projection: s.projection.unwrap_or(ProjectionMode::ByNode),
                cycle: s.cycle.unwrap_or(Cycle::W),
                init: s.init.unwrap_or(InitStrategy::Quantile),
                ordering: s.ordering.unwrap_or(SweepOrdering::Lexicographic),
                seed: s.seed.unwrap_or(0),
                max_steps: s.max_steps.unwrap_or(500),
                tol,
                sweep_tol,
                max_sweeps: s.max_sweeps.unwrap_or(50),
                size,
                noise_amp,
                levels,
                background,
                emit: s.emit.unwrap_or_default(),
            },
            warnings,
        ))
    }

    /// Serializes in the config-file format; feeding the result back through
    /// `--config` reproduces the run.
    pub fn serialize(&self) -> String {
        let mut map: BTreeMap<&str, String> = BTreeMap::new();
        match &self.source {
            Source::Input(p) => {
                map.insert("input", p.display().to_string());
            }
            Source::Synth(k) => {
                map.insert("synth", k.name().to_string());
            }
        }
        map.insert("out", self.out.display().to_string());
        map.insert("components", self.components.to_string());
        map.insert("epsilon", format!("{:?}", self.epsilon));
        map.insert("lambda", format!("{:?}", self.lambda));
        map.insert("dt", format!("{:?}", self.dt));
        map.insert("refine", self.refine.to_string());
        map.insert("coarsen", self.coarsen.to_string());
        map.insert(
            "projection",
            match self.projection {
                ProjectionMode::ByNode => "node",
                ProjectionMode::BySimplex => "simplex",
            }
            .to_string(),
        );
        map.insert(
            "cycle",
            match self.cycle {
                Cycle::W => "w",
                Cycle::V => "v",
                Cycle::FinestOnly => "finest",
            }
            .to_string(),
        );
        map.insert(
            "init",
            match self.init {
                InitStrategy::Quantile => "quantile",
                InitStrategy::UniformNoise => "uniform",
            }
            .to_string(),
        );
        map.insert(
            "ordering",
            match self.ordering {
                SweepOrdering::Lexicographic => "lex",
                SweepOrdering::RedBlack => "red-black",
            }
            .to_string(),
        );
        map.insert("seed", self.seed.to_string());
        map.insert("max_steps", self.max_steps.to_string());
        map.insert("tol", format!("{:?}", self.tol));
        map.insert("sweep_tol", format!("{:?}", self.sweep_tol));
        map.insert("max_sweeps", self.max_sweeps.to_string());
        map.insert("size", self.size.to_string());
        map.insert("noise_amp", format!("{:?}", self.noise_amp));
        map.insert(
            "levels",
            self.levels.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(","),
        );
        map.insert("background", format!("{:?}", self.background));
        map.insert("emit", self.emit.format());

        let mut out = String::from("# resolved configuration\n");
        for (k, v) in map {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
