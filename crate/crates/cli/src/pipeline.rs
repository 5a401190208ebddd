//! The load -> mesh -> project -> solve -> postprocess -> write pipeline.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use anyhow::{Context, Result};

use phaseseg::fem::DiagonalMatrix;
use phaseseg::fidelity::{project_image, ImageData};
use phaseseg::imageio::{self, BitDepth, CompositeSpec};
use phaseseg::mesh::{GridHierarchy, Triangulation};
use phaseseg::postprocess::{segment, SegmentationResult};
use phaseseg::solver::{Solver, SolverParams, StepDiagnostics};

use crate::config::{RunConfig, Source, SynthKind};

pub fn run_pipeline(cfg: &RunConfig, warnings: &[String]) -> Result<()> {
    for w in warnings {
        eprintln!("warning: {w}");
    }
    fs::create_dir_all(&cfg.out)
        .with_context(|| format!("[write] creating output directory {}", cfg.out.display()))?;
    fs::write(cfg.out.join("config.resolved"), cfg.serialize())
        .context("[write] resolved config")?;

    let img: ImageData<f64> = match &cfg.source {
        Source::Input(path) => imageio::load(path)
            .with_context(|| format!("[input] loading {}", path.display()))?,
        Source::Synth(kind) => synthesize(cfg, *kind),
    };
    println!(
        "input: {}x{} px, {} channel(s)",
        img.width(),
        img.height(),
        img.channels()
    );

    let base = Triangulation::cell_grid(img.width(), img.height(), cfg.coarsen)
        .context("[mesh] base grid")?;
    let hierarchy = GridHierarchy::build(base, cfg.refine).context("[mesh] hierarchy")?;
    let fine = hierarchy.finest();
    println!(
        "hierarchy: {} level(s), finest {} nodes (h = {:.4} px)",
        hierarchy.n_levels(),
        fine.n_nodes(),
        fine.h()
    );

    let mesh_img = project_image(&img, &hierarchy, cfg.projection).context("[project] image")?;

    let params = solver_params(cfg);
    let mut solver = Solver::new(&hierarchy, mesh_img, params).context("[solve] setup")?;

    let mut diag_file = if cfg.emit.diagnostics {
        let f = fs::File::create(cfg.out.join("diagnostics.log"))
            .context("[write] diagnostics stream")?;
        Some(std::io::BufWriter::new(f))
    } else {
        None
    };

    let mut converged = false;
    let mut final_rel = f64::INFINITY;
    while solver.state().step < cfg.max_steps {
        let report = solver.time_step();
        let record = solver.state().diagnostics.last().expect("step just pushed");
        if let Some(f) = diag_file.as_mut() {
            writeln!(f, "{}", format_diagnostics(record)).context("[write] diagnostics line")?;
        }
        if !report.sweeps_converged {
            eprintln!(
                "warning: step {} used all {} sweeps (last correction {:.3e})",
                solver.state().step,
                report.sweeps,
                report.max_correction
            );
        }
        final_rel = report.rel_change;
        if report.rel_change <= cfg.tol {
            converged = true;
            break;
        }
    }
    drop(diag_file);
    println!(
        "solve: {} step(s), {} sweep(s), {}",
        solver.state().step,
        solver.state().sweeps_total,
        if converged { "steady" } else { "step budget exhausted" }
    );
    if !converged {
        eprintln!(
            "warning: no steady state within {} steps (last change {final_rel:.3e})",
            cfg.max_steps
        );
    }

    let result = segment(
        solver.phase_field(),
        solver.averages(),
        solver.image(),
        solver.mass(),
    );
    write_outputs(cfg, &hierarchy, &solver, &result, converged).context("[write] outputs")?;
    println!("outputs written to {}", cfg.out.display());
    Ok(())
}

fn synthesize(cfg: &RunConfig, kind: SynthKind) -> ImageData<f64> {
    match kind {
        SynthKind::Circles => imageio::synth_circles(
            cfg.size,
            &cfg.levels,
            cfg.background,
            cfg.noise_amp,
            cfg.seed,
        ),
        SynthKind::Step => {
            imageio::synth_step_signal(cfg.size, &cfg.levels, cfg.noise_amp, cfg.seed)
        }
        SynthKind::Composite => {
            let mut spec = CompositeSpec::default();
            spec.noise_amp = cfg.noise_amp;
            imageio::synth_composite(cfg.size, &spec, cfg.seed)
        }
    }
}

fn solver_params(cfg: &RunConfig) -> SolverParams<f64> {
    let mut p = SolverParams::new(cfg.components);
    p.epsilon = cfg.epsilon;
    p.lambda = cfg.lambda;
    p.dt = cfg.dt;
    p.max_time_steps = cfg.max_steps;
    p.sweep_tol = cfg.sweep_tol;
    p.max_sweeps_per_step = cfg.max_sweeps;
    p.cycle = cfg.cycle;
    p.ordering = cfg.ordering;
    p.init = cfg.init;
    p.seed = cfg.seed;
    p.steady_tol = cfg.tol;
    p
}

fn format_diagnostics(d: &StepDiagnostics<f64>) -> String {
    let join = |v: &[f64]| {
        v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
    };
    format!(
        "step={} sweeps={} converged={} max_corr={:?} rel_change={:?} energy={:?} mass={} c={} gibbs_skips={} descent_skips={} sum_dev={:?} range_dev={:?}",
        d.step,
        d.sweeps,
        d.sweeps_converged,
        d.max_correction,
        d.rel_change,
        d.energy,
        join(&d.component_mass),
        join(&d.averages),
        d.gibbs_skips,
        d.descent_skips,
        d.worst_sum_dev,
        d.worst_range_dev,
    )
}

/// Repacks a finest-grid nodal field as a raster over the node lattice.
fn nodal_raster(
    fine: &Triangulation,
    lattice: &[usize],
    planes: Vec<&[f64]>,
) -> ImageData<f64> {
    let (nx, ny) = fine.grid_dims().expect("pipeline grids are structured");
    let packed: Vec<Vec<f64>> = planes
        .into_iter()
        .map(|field| {
            lattice
                .iter()
                .map(|&node| field[node].clamp(0.0, 1.0))
                .collect()
        })
        .collect();
    ImageData::new(nx as u32, ny as u32, packed).expect("values clamped to range")
}

fn raster_name(stem: &str, channels: usize) -> String {
    if channels == 3 {
        format!("{stem}.ppm")
    } else {
        format!("{stem}.pgm")
    }
}

fn save_field(
    out_dir: &Path,
    stem: &str,
    fine: &Triangulation,
    lattice: &[usize],
    planes: &[Vec<f64>],
) -> Result<()> {
    let channels = planes.len();
    if channels == 1 || channels == 3 {
        let raster = nodal_raster(fine, lattice, planes.iter().map(|p| p.as_slice()).collect());
        imageio::save(out_dir.join(raster_name(stem, channels)), &raster, BitDepth::Sixteen)?;
    } else {
        for (j, plane) in planes.iter().enumerate() {
            let raster = nodal_raster(fine, lattice, vec![plane.as_slice()]);
            imageio::save(
                out_dir.join(format!("{stem}_ch{j}.pgm")),
                &raster,
                BitDepth::Sixteen,
            )?;
        }
    }
    Ok(())
}

fn write_outputs(
    cfg: &RunConfig,
    hierarchy: &GridHierarchy,
    solver: &Solver<f64>,
    result: &SegmentationResult<f64>,
    converged: bool,
) -> Result<()> {
    let fine = hierarchy.finest();
    let lattice = fine
        .lattice_node_map()
        .expect("pipeline grids are structured");

    if cfg.emit.components {
        for i in 0..result.components.n_components() {
            let plane = result.components.component(i).to_vec();
            save_field(&cfg.out, &format!("component_{i}"), fine, &lattice, &[plane])?;
        }
    }
    if cfg.emit.composite {
        save_field(&cfg.out, "composite", fine, &lattice, &result.composite)?;
    }
    if cfg.emit.rounded {
        save_field(&cfg.out, "rounded_composite", fine, &lattice, &result.rounded_composite)?;
    }
    if cfg.emit.remainder {
        // signed values offset-encoded around mid-gray; true range in metrics
        let encoded: Vec<Vec<f64>> = result
            .remainder
            .iter()
            .map(|plane| plane.iter().map(|v| 0.5 + v / 2.0).collect())
            .collect();
        save_field(&cfg.out, "remainder", fine, &lattice, &encoded)?;
    }

    fs::write(
        cfg.out.join("metrics.txt"),
        format_metrics(cfg, solver, result, converged),
    )?;
    Ok(())
}

fn format_metrics(
    cfg: &RunConfig,
    solver: &Solver<f64>,
    result: &SegmentationResult<f64>,
    converged: bool,
) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let state = solver.state();
    let channels = result.averages.channels();
    let source = match &cfg.source {
        Source::Input(p) => format!("file:{}", p.display()),
        Source::Synth(k) => format!("synth:{}", k.name()),
    };
    let _ = writeln!(out, "source = {source}");
    let _ = writeln!(out, "components = {}", cfg.components);
    let _ = writeln!(out, "channels = {channels}");
    let _ = writeln!(out, "steps = {}", state.step);
    let _ = writeln!(out, "sweeps = {}", state.sweeps_total);
    let _ = writeln!(out, "converged = {converged}");
    let _ = writeln!(out, "energy = {:?}", solver.energy());
    let _ = writeln!(out, "sigma = {:?}", cfg.lambda * cfg.epsilon);
    let _ = writeln!(out, "gibbs_skips = {}", state.gibbs_skips);
    let _ = writeln!(out, "descent_skips = {}", state.descent_skips);
    let _ = writeln!(out, "worst_sum_dev = {:?}", state.worst_sum_dev);
    let _ = writeln!(out, "worst_range_dev = {:?}", state.worst_range_dev);
    for j in 0..channels {
        let m = &result.metrics;
        let _ = writeln!(out, "composite_l2_ch{j} = {:?}", m.composite_l2[j]);
        let _ = writeln!(out, "composite_linf_ch{j} = {:?}", m.composite_linf[j]);
        let _ = writeln!(out, "rounded_l2_ch{j} = {:?}", m.rounded_l2[j]);
        let _ = writeln!(out, "rounded_linf_ch{j} = {:?}", m.rounded_linf[j]);
        let (lo, hi) = result.remainder[j]
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let _ = writeln!(out, "remainder_min_ch{j} = {lo:?}");
        let _ = writeln!(out, "remainder_max_ch{j} = {hi:?}");
    }
    let _ = writeln!(out, "c_rows = {}", cfg.components);
    let _ = writeln!(out, "c_cols = {channels}");
    for i in 0..cfg.components {
        for j in 0..channels {
            let _ = writeln!(out, "c_{i}_{j} = {:?}", result.averages.get(i, j));
        }
    }
    let _ = writeln!(out, "component_mass_total = {:?}", {
        let mass: &DiagonalMatrix<f64> = solver.mass();
        mass.total()
    });
    out
}
