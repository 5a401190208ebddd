//! Semi-implicit time stepping driven by a multigrid successive subspace
//! correction sweep.
//!
//! Each basis function of each level contributes a one-dimensional
//! subproblem: its correction solves `d * alpha_i = r_i` with
//! `d = p' (M + eps*dt*A) p` and
//! `r_i = p' { M [u_prev_i - u_i + dt * (T(2/eps * u_prev - lambda * F))_i]
//!             - eps*dt * A u_i }`,
//! where `p` is the basis function traced onto the finest grid. The raw
//! correction is projected to zero sum, clipped to keep the iterate on the
//! simplex, and finally rejected if it would not decrease the time-step
//! functional (which makes the discrete energy non-increasing for any `dt`,
//! since the concave potential and fitting terms are taken explicitly).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fem::{assemble_lumped_mass, assemble_stiffness, DiagonalMatrix, FemError, SymmetricSparseMatrix};
use crate::fidelity::{
    project_image, region_averages, FidelityError, ImageData, MeshImage, ProjectionMode,
    RegionAverages,
};
use crate::mesh::{BasisFootprint, GridHierarchy, MeshError, Triangulation};
use crate::postprocess::{segment, SegmentationResult};
use crate::scalar::Scalar;
use crate::simplex::{
    enforce_bounds, enforce_bounds_with, nearest_simplex_point, tangent_project, BoundsOutcome,
    BoundsScratch, PhaseField, SimplexError,
};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Fidelity(#[from] FidelityError),
    #[error(transparent)]
    Simplex(#[from] SimplexError),
}

/// Level-visit schedule of one sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cycle {
    /// Coarse to fine, back to coarse, and to fine again.
    W,
    /// Coarse to fine once.
    V,
    /// Finest level only: plain projected Gauss-Seidel.
    FinestOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepOrdering {
    /// Row-major by node coordinates.
    Lexicographic,
    /// All even-parity lattice nodes first, then odd, each row-major.
    /// Kept sequential: on this triangulation diagonal neighbours share a
    /// color, so within-color updates are not independent.
    RedBlack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitStrategy {
    /// Soft assignment from intensity quantile bins of the luminance.
    Quantile,
    /// Uniform mixture plus small seeded noise, reprojected to the simplex.
    UniformNoise,
}

/// Drops levels below `min_level` from the schedule once `after_step`
/// accepted steps have passed, for runs where coarse corrections stop
/// mattering after the interfaces settle.
#[derive(Debug, Clone, Copy)]
pub struct TruncateRule {
    pub after_step: usize,
    pub min_level: usize,
}

#[derive(Debug, Clone)]
pub struct SolverParams<S> {
    /// Interface width in pixel units.
    pub epsilon: S,
    /// Fitting weight; `sigma = lambda * epsilon` should land in [10, 100].
    pub lambda: S,
    /// Pseudo-time step.
    pub dt: S,
    pub n_components: usize,
    pub max_time_steps: usize,
    /// Sweep stops when the largest correction falls below this (relative to
    /// `max(1, |u|_inf)`).
    pub sweep_tol: S,
    pub max_sweeps_per_step: usize,
    pub cycle: Cycle,
    pub ordering: SweepOrdering,
    pub init: InitStrategy,
    pub seed: u64,
    /// A step whose relative iterate change falls below this ends the run.
    pub steady_tol: S,
    /// Keep the region averages fixed at their initial values.
    pub freeze_averages: bool,
    pub truncate: Option<TruncateRule>,
}

impl<S: Scalar> SolverParams<S> {
    pub fn new(n_components: usize) -> Self {
        let epsilon = S::one();
        Self {
            epsilon,
            lambda: S::lit(30.0),
            dt: epsilon * epsilon,
            n_components,
            max_time_steps: 500,
            sweep_tol: S::lit(3e-5),
            max_sweeps_per_step: 50,
            cycle: Cycle::W,
            ordering: SweepOrdering::Lexicographic,
            init: InitStrategy::Quantile,
            seed: 0,
            steady_tol: S::lit(1e-4),
            freeze_averages: false,
            truncate: None,
        }
    }

    pub fn sigma(&self) -> S {
        self.lambda * self.epsilon
    }

    /// Whether `sigma` sits in the band that gives useful segmentations;
    /// callers should warn (not fail) outside it.
    pub fn sigma_in_recommended_band(&self) -> bool {
        let s = self.sigma();
        s >= S::lit(10.0) && s <= S::lit(100.0)
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.epsilon > S::zero()) {
            return Err(SolverError::InvalidParams("epsilon must be positive".into()));
        }
        if self.lambda < S::zero() {
            return Err(SolverError::InvalidParams("lambda must be nonnegative".into()));
        }
        if !(self.dt > S::zero()) {
            return Err(SolverError::InvalidParams("dt must be positive".into()));
        }
        if self.n_components < 2 {
            return Err(SolverError::InvalidParams("need at least two components".into()));
        }
        if !(self.sweep_tol > S::zero()) {
            return Err(SolverError::InvalidParams("sweep_tol must be positive".into()));
        }
        if self.max_sweeps_per_step == 0 {
            return Err(SolverError::InvalidParams("max_sweeps_per_step must be >= 1".into()));
        }
        Ok(())
    }
}

/// One accepted time step, as recorded in the diagnostics stream.
#[derive(Debug, Clone)]
pub struct StepDiagnostics<S> {
    pub step: usize,
    pub sweeps: usize,
    pub sweeps_converged: bool,
    pub max_correction: S,
    pub rel_change: S,
    pub energy: S,
    pub component_mass: Vec<S>,
    pub averages: Vec<S>,
    pub gibbs_skips: u64,
    pub descent_skips: u64,
    pub worst_sum_dev: S,
    pub worst_range_dev: S,
}

#[derive(Debug, Clone, Copy)]
pub struct StepReport<S> {
    pub sweeps: usize,
    pub sweeps_converged: bool,
    pub max_correction: S,
    pub rel_change: S,
}

#[derive(Debug, Clone, Copy)]
pub struct RunSummary<S> {
    pub steps: usize,
    pub sweeps: usize,
    pub converged: bool,
    pub final_rel_change: S,
}

/// Result of one subspace correction before and after constraint handling.
#[derive(Debug, Clone)]
pub struct AlphaUpdate<S> {
    /// Tangent-projected solution of the scalar equations.
    pub raw: Vec<S>,
    /// Correction actually applied.
    pub alpha: Vec<S>,
    pub passes: usize,
    pub skipped: bool,
}

struct LevelOps<S> {
    /// Visit order over the level's nodes.
    order: Vec<usize>,
    /// Fine-grid traces; `None` on the finest level where they are trivial.
    footprints: Option<Vec<BasisFootprint<S>>>,
    /// `p' M p` per node.
    p_mass: Vec<S>,
    /// `p' A p` per node (diagonal of the level's own stiffness matrix).
    p_stiff: Vec<S>,
    /// Largest footprint coefficient per node.
    w_max: Vec<S>,
}

/// Bound enforcement specialized to a support where the base field sits
/// exactly on vertex `k` (`u_k == 1`, the rest `== 0`) at every node. The
/// violation tests and feasible limits then collapse to closed forms in
/// `w_max`, reproducing the general cascade bit for bit.
fn enforce_bounds_pure_support<S: Scalar>(k: usize, w_max: S, alpha: &mut [S]) -> BoundsOutcome {
    let tol = S::violation_tol();
    let n_comp = alpha.len();
    let mut passes = 0usize;
    let mut pinned = vec![false; n_comp];
    loop {
        let mut total_beta = S::zero();
        let mut n_violators = 0usize;
        for (i, a) in alpha.iter_mut().enumerate() {
            if pinned[i] {
                continue;
            }
            let violated = if i == k {
                // headroom one: feasible down to -1 / w_max
                S::one() + *a * w_max < -tol
            } else {
                *a * w_max < -tol
            };
            if violated {
                let a_min = if i == k { -S::one() / w_max } else { S::zero() };
                total_beta += a_min - *a;
                *a = a_min;
                pinned[i] = true;
                n_violators += 1;
            }
        }
        if n_violators == 0 {
            break;
        }
        passes += 1;
        let free = pinned.iter().filter(|&&p| !p).count();
        if free == 0 || passes > n_comp {
            alpha.iter_mut().for_each(|a| *a = S::zero());
            return BoundsOutcome { passes, skipped: true };
        }
        let share = total_beta / S::lit(free as f64);
        for (i, a) in alpha.iter_mut().enumerate() {
            if !pinned[i] {
                *a -= share;
            }
        }
    }
    // upper bounds: u_k tops out at one, the others grow from zero
    let upper_tol = S::admissibility_tol();
    for (i, &a) in alpha.iter().enumerate() {
        let peak = if i == k { S::one() + a * w_max } else { a * w_max };
        if peak > S::one() + upper_tol {
            alpha.iter_mut().for_each(|a| *a = S::zero());
            return BoundsOutcome { passes: passes + 1, skipped: true };
        }
    }
    BoundsOutcome { passes, skipped: false }
}

pub struct SolverState<S> {
    /// Current iterate.
    pub u: PhaseField<S>,
    /// Last accepted time step.
    pub u_prev: PhaseField<S>,
    pub averages: RegionAverages<S>,
    pub step: usize,
    pub sweeps_total: usize,
    pub gibbs_skips: u64,
    pub descent_skips: u64,
    pub worst_sum_dev: S,
    pub worst_range_dev: S,
    pub diagnostics: Vec<StepDiagnostics<S>>,
}

pub struct Solver<S: Scalar> {
    params: SolverParams<S>,
    mass: DiagonalMatrix<S>,
    stiffness: SymmetricSparseMatrix<S>,
    levels: Vec<LevelOps<S>>,
    image: MeshImage<S>,
    state: SolverState<S>,
    /// Node-major mirror of the iterate (`work[node * n_comp + i]`), the
    /// layout the sweep kernels run on; synced with `state.u` at sweep and
    /// step boundaries.
    work: Vec<S>,
    /// Residual field `b - M u - eps*dt*A u`, node-major; rebuilt at every
    /// step start and maintained incrementally as updates land, so visiting
    /// a stationary basis function costs only the footprint gather.
    rho: Vec<S>,
    /// Visit memoization: a basis visit whose support saw no residual change
    /// since its last visit recomputes the same zero update and is skipped.
    /// `touched[n]` is the visit stamp that last changed node `n`,
    /// `last_visit[l][j]` the stamp of the basis function's last visit, and
    /// stamps at or below `dirty_stamp` (set when the step context changes)
    /// never skip.
    clock: u64,
    dirty_stamp: u64,
    touched: Vec<u64>,
    last_visit: Vec<Vec<u64>>,
}

impl<S: Scalar> Solver<S> {
    pub fn new(
        hierarchy: &GridHierarchy,
        image: MeshImage<S>,
        params: SolverParams<S>,
    ) -> Result<Self, SolverError> {
        params.validate()?;
        let fine = hierarchy.finest();
        if image.n_nodes() != fine.n_nodes() {
            return Err(SolverError::InvalidState(format!(
                "image carries {} nodes, finest grid has {}",
                image.n_nodes(),
                fine.n_nodes()
            )));
        }
        let mass = assemble_lumped_mass::<S>(fine);
        let stiffness = assemble_stiffness::<S>(fine)?;

        let mut levels = Vec::with_capacity(hierarchy.n_levels());
        for l in 0..hierarchy.n_levels() {
            let tri = hierarchy.level(l);
            let order = visit_order(tri, params.ordering);
            if l == hierarchy.finest_index() {
                let p_mass = mass.entries().to_vec();
                let p_stiff = (0..tri.n_nodes()).map(|i| stiffness.diag(i)).collect();
                let w_max = vec![S::one(); tri.n_nodes()];
                levels.push(LevelOps { order, footprints: None, p_mass, p_stiff, w_max });
            } else {
                let level_stiffness = assemble_stiffness::<S>(tri)?;
                let mut footprints = Vec::with_capacity(tri.n_nodes());
                let mut p_mass = Vec::with_capacity(tri.n_nodes());
                let mut w_max = Vec::with_capacity(tri.n_nodes());
                for node in 0..tri.n_nodes() {
                    let fp = hierarchy.footprint::<S>(l, node)?;
                    let pm: S = fp
                        .entries
                        .iter()
                        .map(|&(n, w)| w * w * mass.entry(n))
                        .sum();
                    p_mass.push(pm);
                    w_max.push(
                        fp.entries.iter().map(|&(_, w)| w).fold(S::zero(), |m, w| m.max(w)),
                    );
                    footprints.push(fp);
                }
                // Galerkin identity for nested P1 spaces: p' A_fine p equals
                // the coarse diagonal stiffness entry.
                let p_stiff = (0..tri.n_nodes()).map(|i| level_stiffness.diag(i)).collect();
                levels.push(LevelOps {
                    order,
                    footprints: Some(footprints),
                    p_mass,
                    p_stiff,
                    w_max,
                });
            }
        }

        let u = initialize(&image, params.n_components, params.init, params.seed)?;
        let averages = region_averages(&u, &image, &mass, None);
        let work = vec![S::zero(); u.n_components() * u.n_nodes()];
        let rho = work.clone();
        let touched = vec![0u64; u.n_nodes()];
        let last_visit = levels
            .iter()
            .enumerate()
            .map(|(l, _)| vec![0u64; hierarchy.level(l).n_nodes()])
            .collect();
        let state = SolverState {
            u_prev: u.clone(),
            u,
            averages,
            step: 0,
            sweeps_total: 0,
            gibbs_skips: 0,
            descent_skips: 0,
            worst_sum_dev: S::zero(),
            worst_range_dev: S::zero(),
            diagnostics: Vec::new(),
        };
        Ok(Self {
            params,
            mass,
            stiffness,
            levels,
            image,
            state,
            work,
            rho,
            clock: 1,
            dirty_stamp: 0,
            touched,
            last_visit,
        })
    }

    fn pack_work(&mut self) {
        let nc = self.params.n_components;
        for i in 0..nc {
            for (node, &v) in self.state.u.component(i).iter().enumerate() {
                self.work[node * nc + i] = v;
            }
        }
    }

    fn unpack_work(&mut self) {
        let nc = self.params.n_components;
        let work = &self.work;
        let u = &mut self.state.u;
        for i in 0..nc {
            for (node, v) in u.component_mut(i).iter_mut().enumerate() {
                *v = work[node * nc + i];
            }
        }
    }

    pub fn params(&self) -> &SolverParams<S> {
        &self.params
    }

    pub fn state(&self) -> &SolverState<S> {
        &self.state
    }

    pub fn phase_field(&self) -> &PhaseField<S> {
        &self.state.u
    }

    pub fn averages(&self) -> &RegionAverages<S> {
        &self.state.averages
    }

    pub fn mass(&self) -> &DiagonalMatrix<S> {
        &self.mass
    }

    pub fn stiffness(&self) -> &SymmetricSparseMatrix<S> {
        &self.stiffness
    }

    pub fn image(&self) -> &MeshImage<S> {
        &self.image
    }

    /// Replaces the iterate (and the accepted step) with a caller-supplied
    /// field, e.g. an explicit seed geometry.
    pub fn set_phase_field(&mut self, u: PhaseField<S>) -> Result<(), SolverError> {
        if u.n_components() != self.params.n_components || u.n_nodes() != self.mass.n() {
            return Err(SolverError::InvalidState("phase field shape mismatch".into()));
        }
        if !u.is_admissible(S::admissibility_tol()) {
            return Err(SolverError::InvalidState("phase field is not admissible".into()));
        }
        self.state.u_prev = u.clone();
        self.state.u = u;
        self.state.averages = region_averages(&self.state.u, &self.image, &self.mass, None);
        Ok(())
    }

    /// Explicit part of the residual, fixed within a time step:
    /// `b_i = M (u_prev_i + dt * (T(2/eps * u_prev - lambda * F))_i)` per
    /// node, stored node-major like the sweep buffer.
    fn step_context(&self) -> Vec<S> {
        let n = self.mass.n();
        let n_comp = self.params.n_components;
        let channels = self.image.channels();
        let two_over_eps = S::lit(2.0) / self.params.epsilon;
        let dt = self.params.dt;
        let lambda = self.params.lambda;
        let inv_n = S::one() / S::lit(n_comp as f64);

        let mut b = vec![S::zero(); n * n_comp];
        let mut g = vec![S::zero(); n_comp];
        for node in 0..n {
            let mut mean = S::zero();
            for (i, gi) in g.iter_mut().enumerate() {
                let mut fit = S::zero();
                for j in 0..channels {
                    let d = self.image.nodal_channel(j)[node] - self.state.averages.get(i, j);
                    fit += d * d;
                }
                *gi = two_over_eps * self.state.u_prev.get(i, node) - lambda * fit;
                mean += *gi;
            }
            mean *= inv_n;
            let m = self.mass.entry(node);
            for (i, &gi) in g.iter().enumerate() {
                b[node * n_comp + i] =
                    m * (self.state.u_prev.get(i, node) + dt * (gi - mean));
            }
        }
        b
    }

    /// Solves the one-dimensional subproblem of a single basis function and
    /// applies the constraint handling, without touching the iterate.
    pub fn compute_alpha(&self, footprint: &BasisFootprint<S>) -> Result<AlphaUpdate<S>, SolverError> {
        let ctx = self.step_context();
        let pm: S = footprint
            .entries
            .iter()
            .map(|&(n, w)| w * w * self.mass.entry(n))
            .sum();
        let mut ps = S::zero();
        for &(n, w) in &footprint.entries {
            let (cols, vals) = self.stiffness.row(n);
            let mut acc = S::zero();
            for (&j, &v) in cols.iter().zip(vals) {
                if let Ok(k) = footprint.entries.binary_search_by_key(&j, |e| e.0) {
                    acc += v * footprint.entries[k].1;
                }
            }
            ps += w * acc;
        }
        Ok(self.subspace_update(footprint, pm, ps, &ctx))
    }

    fn subspace_update(
        &self,
        footprint: &BasisFootprint<S>,
        p_mass: S,
        p_stiff: S,
        ctx: &[S],
    ) -> AlphaUpdate<S> {
        let n_comp = self.params.n_components;
        let eps_dt = self.params.epsilon * self.params.dt;
        let d = p_mass + eps_dt * p_stiff;

        let mut r = vec![S::zero(); n_comp];
        for (i, ri) in r.iter_mut().enumerate() {
            let ui = self.state.u.component(i);
            let mut acc = S::zero();
            for &(n, w) in &footprint.entries {
                acc += w
                    * (ctx[n * n_comp + i]
                        - self.mass.entry(n) * ui[n]
                        - eps_dt * self.stiffness.row_dot(n, ui));
            }
            *ri = acc;
        }

        let mut alpha: Vec<S> = r.iter().map(|&ri| ri / d).collect();
        tangent_project(&mut alpha).expect("component count checked at construction");
        let raw = alpha.clone();
        let corr = enforce_bounds(&self.state.u, &alpha, footprint);
        if corr.skipped {
            return AlphaUpdate { raw, alpha: vec![S::zero(); n_comp], passes: corr.passes, skipped: true };
        }
        // Descent guard: the update must not increase the time-step
        // functional. With the half-d quadratic this reads
        // sum_i (d/2 a_i^2 - r_i a_i) <= 0 up to rounding.
        let mut delta = S::zero();
        let mut scale = S::zero();
        let half_d = d * S::lit(0.5);
        for (&a, &ri) in corr.alpha.iter().zip(&r) {
            delta += half_d * a * a - ri * a;
            scale += (half_d * a * a).abs() + (ri * a).abs();
        }
        if delta > S::epsilon() * scale * S::lit(8.0) {
            return AlphaUpdate { raw, alpha: vec![S::zero(); n_comp], passes: corr.passes, skipped: true };
        }
        AlphaUpdate { raw, alpha: corr.alpha, passes: corr.passes, skipped: false }
    }

    fn schedule(&self) -> Vec<usize> {
        let mut levels: Vec<usize> = (0..self.levels.len()).collect();
        if let Some(rule) = self.params.truncate {
            if self.state.step >= rule.after_step {
                let keep = rule.min_level.min(self.levels.len() - 1);
                levels.retain(|&l| l >= keep);
            }
        }
        cycle_schedule(&levels, self.params.cycle)
    }

    /// One full sweep over the configured level schedule. Returns the largest
    /// applied correction in the max norm.
    pub fn ssc_sweep(&mut self) -> S {
        let ctx = self.step_context();
        self.pack_work();
        self.rebuild_rho(&ctx);
        let out = self.sweep_on_work();
        self.unpack_work();
        out
    }

    /// Recomputes the residual field from scratch, shedding the rounding
    /// drift of the incremental maintenance.
    fn rebuild_rho(&mut self, ctx: &[S]) {
        self.dirty_stamp = self.clock;
        let nc = self.params.n_components;
        let eps_dt = self.params.epsilon * self.params.dt;
        let work = &self.work;
        let rho = &mut self.rho;
        let mut au = vec![S::zero(); nc];
        for node in 0..self.mass.n() {
            au.iter_mut().for_each(|v| *v = S::zero());
            let (cols, vals) = self.stiffness.row(node);
            for (&j, &v) in cols.iter().zip(vals) {
                let uj = &work[j * nc..j * nc + nc];
                for (a, &u) in au.iter_mut().zip(uj) {
                    *a += v * u;
                }
            }
            let m_n = self.mass.entry(node);
            let un = &work[node * nc..node * nc + nc];
            let bn = &ctx[node * nc..node * nc + nc];
            let rn = &mut rho[node * nc..node * nc + nc];
            for i in 0..nc {
                rn[i] = bn[i] - m_n * un[i] - eps_dt * au[i];
            }
        }
    }

    /// Sweep kernel over the node-major buffer; `pack_work` and
    /// `rebuild_rho` must have run for the current step context.
    fn sweep_on_work(&mut self) -> S {
        let schedule = self.schedule();
        let nc = self.params.n_components;
        let eps_dt = self.params.epsilon * self.params.dt;
        let finest = self.levels.len() - 1;
        // corrections below this are rounding dust: applying them moves
        // nodal values by less than the admissibility budget
        let dust = S::epsilon() * S::lit(1024.0);

        let mass = &self.mass;
        let stiffness = &self.stiffness;
        let levels = &self.levels;
        let state = &mut self.state;
        let work = &mut self.work;
        let rho = &mut self.rho;
        let touched = &mut self.touched;
        let dirty_stamp = self.dirty_stamp;
        let mut clock = self.clock;

        let mut max_corr = S::zero();
        let mut r = vec![S::zero(); nc];
        let mut alpha = vec![S::zero(); nc];
        let mut scratch = BoundsScratch::default();
        let mut unit_entry = [(0usize, S::one())];

        for &lvl in &schedule {
            let ops = &levels[lvl];
            let last_visit = &mut self.last_visit[lvl];
            for &node in &ops.order {
                let entries: &[(usize, S)] = if lvl == finest {
                    unit_entry[0].0 = node;
                    &unit_entry
                } else {
                    &ops.footprints.as_ref().unwrap()[node].entries
                };

                // nothing in the support changed since the last visit, and
                // that visit applied nothing: the same zero update results
                let lv = last_visit[node];
                if lv > dirty_stamp && entries.iter().all(|&(n, _)| touched[n] < lv) {
                    continue;
                }
                last_visit[node] = clock;

                let d = ops.p_mass[node] + eps_dt * ops.p_stiff[node];
                r.iter_mut().for_each(|v| *v = S::zero());
                for &(n, w) in entries {
                    let rn = &rho[n * nc..n * nc + nc];
                    for (ri, &rv) in r.iter_mut().zip(rn) {
                        *ri += w * rv;
                    }
                }

                for (a, &ri) in alpha.iter_mut().zip(&r) {
                    *a = ri / d;
                }
                tangent_project(&mut alpha).expect("component count checked at construction");
                let proceed = alpha.iter().fold(S::zero(), |m, a| m.max(a.abs())) > dust && {
                    // bulk regions sit exactly on a vertex; their cascade
                    // reduces to closed forms in the footprint maximum
                    let pure_k: Option<usize> = 'pure: {
                        let first = &work[entries[0].0 * nc..entries[0].0 * nc + nc];
                        let mut k = None;
                        for (i, &v) in first.iter().enumerate() {
                            if v == S::one() {
                                if k.is_some() {
                                    break 'pure None;
                                }
                                k = Some(i);
                            } else if v != S::zero() {
                                break 'pure None;
                            }
                        }
                        let Some(k) = k else { break 'pure None };
                        for &(n, _) in &entries[1..] {
                            let un = &work[n * nc..n * nc + nc];
                            for (i, &v) in un.iter().enumerate() {
                                let want = if i == k { S::one() } else { S::zero() };
                                if v != want {
                                    break 'pure None;
                                }
                            }
                        }
                        Some(k)
                    };
                    let outcome = match pure_k {
                        Some(k) => {
                            enforce_bounds_pure_support(k, ops.w_max[node], &mut alpha)
                        }
                        None => enforce_bounds_with(
                            nc,
                            |i, n| work[n * nc + i],
                            &mut alpha,
                            entries,
                            &mut scratch,
                        ),
                    };
                    if outcome.skipped {
                        state.gibbs_skips += 1;
                    }
                    !outcome.skipped
                };
                if !proceed {
                    clock += 1;
                    continue;
                }
                let applied = alpha.iter().fold(S::zero(), |m, a| m.max(a.abs()));
                if applied <= dust {
                    clock += 1;
                    continue;
                }
                // the clipped correction must still lower the time-step
                // functional; the paper's redistribution does not guarantee
                // it once a second pass fires
                let mut delta = S::zero();
                let mut scale = S::zero();
                let half_d = d * S::lit(0.5);
                for (&a, &ri) in alpha.iter().zip(&r) {
                    delta += half_d * a * a - ri * a;
                    scale += (half_d * a * a).abs() + (ri * a).abs();
                }
                if delta > S::epsilon() * scale * S::lit(8.0) {
                    state.descent_skips += 1;
                    clock += 1;
                    continue;
                }
                // apply and keep the residual exact: the update changes
                // M u at the support and A u on the supports' neighbours
                for &(n, w) in entries {
                    let un = &mut work[n * nc..n * nc + nc];
                    for (u, &a) in un.iter_mut().zip(&alpha) {
                        *u += a * w;
                    }
                    let m_n = mass.entry(n);
                    let rn = &mut rho[n * nc..n * nc + nc];
                    for (rv, &a) in rn.iter_mut().zip(&alpha) {
                        *rv -= m_n * a * w;
                    }
                    touched[n] = clock;
                    let (cols, vals) = stiffness.row(n);
                    for (&m, &a_mn) in cols.iter().zip(vals) {
                        let f = eps_dt * a_mn * w;
                        let rm = &mut rho[m * nc..m * nc + nc];
                        for (rv, &a) in rm.iter_mut().zip(&alpha) {
                            *rv -= f * a;
                        }
                        touched[m] = clock;
                    }
                }
                max_corr = max_corr.max(applied);
                clock += 1;
            }
        }
        self.clock = clock;

        // per-sweep admissibility bookkeeping, straight off the buffer
        let mut sum_dev = S::zero();
        let mut range_dev = S::zero();
        for chunk in work.chunks_exact(nc) {
            let mut s = S::zero();
            for &v in chunk {
                s += v;
                range_dev = range_dev.max((-v).max(v - S::one()));
            }
            sum_dev = sum_dev.max((s - S::one()).abs());
        }
        state.worst_sum_dev = state.worst_sum_dev.max(sum_dev);
        state.worst_range_dev = state.worst_range_dev.max(range_dev);
        state.sweeps_total += 1;
        max_corr
    }

    /// Sweeps until the correction norm drops below tolerance (or the sweep
    /// budget runs out), accepts the iterate, renormalizes it once, and
    /// refreshes the region averages.
    pub fn time_step(&mut self) -> StepReport<S> {
        let ctx = self.step_context();
        self.pack_work();
        self.rebuild_rho(&ctx);
        let mut sweeps = 0;
        let mut max_corr = S::zero();
        let mut converged = false;
        while sweeps < self.params.max_sweeps_per_step {
            max_corr = self.sweep_on_work();
            sweeps += 1;
            // |u|_inf stays within a rounding band of one
            let u_inf = S::one().max(S::one() + self.state.worst_range_dev);
            if max_corr <= self.params.sweep_tol * u_inf {
                converged = true;
                break;
            }
        }
        self.unpack_work();

        let rel_change = self.state.u.max_abs_diff(&self.state.u_prev);
        self.state.u.renormalize();
        self.state.u_prev = self.state.u.clone();
        if !self.params.freeze_averages {
            self.state.averages =
                region_averages(&self.state.u, &self.image, &self.mass, Some(&self.state.averages));
        }
        self.state.step += 1;

        let report = StepReport { sweeps, sweeps_converged: converged, max_correction: max_corr, rel_change };
        let energy = self.energy();
        let masses: Vec<S> = (0..self.params.n_components)
            .map(|i| {
                self.state
                    .u
                    .component(i)
                    .iter()
                    .zip(self.mass.entries())
                    .map(|(&v, &m)| v * m)
                    .sum()
            })
            .collect();
        self.state.diagnostics.push(StepDiagnostics {
            step: self.state.step,
            sweeps,
            sweeps_converged: converged,
            max_correction: max_corr,
            rel_change,
            energy,
            component_mass: masses,
            averages: self.state.averages.values().to_vec(),
            gibbs_skips: self.state.gibbs_skips,
            descent_skips: self.state.descent_skips,
            worst_sum_dev: self.state.worst_sum_dev,
            worst_range_dev: self.state.worst_range_dev,
        });
        report
    }

    /// Steps until the iterate stops moving or the step budget is exhausted.
    pub fn run_to_steady(&mut self) -> RunSummary<S> {
        let mut rel = S::infinity();
        let mut converged = false;
        while self.state.step < self.params.max_time_steps {
            let report = self.time_step();
            rel = report.rel_change;
            if rel <= self.params.steady_tol {
                converged = true;
                break;
            }
        }
        RunSummary {
            steps: self.state.step,
            sweeps: self.state.sweeps_total,
            converged,
            final_rel_change: rel,
        }
    }

    /// Discrete energy of the current iterate with the current averages:
    /// `sum_i eps/2 u_i' A u_i + 1/eps <M u_i, 1 - u_i> + lambda <M u_i, F_i>`.
    pub fn energy(&self) -> S {
        let eps = self.params.epsilon;
        let lambda = self.params.lambda;
        let channels = self.image.channels();
        let half_eps = eps * S::lit(0.5);
        let inv_eps = S::one() / eps;
        let mut total = S::zero();
        for i in 0..self.params.n_components {
            let ui = self.state.u.component(i);
            let grad = self.stiffness.quadratic_form(ui, ui).expect("dimensions fixed");
            let mut pot = S::zero();
            let mut fit = S::zero();
            for (n, &v) in ui.iter().enumerate() {
                let m = self.mass.entry(n);
                pot += m * v * (S::one() - v);
                let mut f = S::zero();
                for j in 0..channels {
                    let dch = self.image.nodal_channel(j)[n] - self.state.averages.get(i, j);
                    f += dch * dch;
                }
                fit += m * v * f;
            }
            total += half_eps * grad + inv_eps * pot + lambda * fit;
        }
        total
    }
}

/// Level-visit sequence for one sweep over the given (ascending) level set.
fn cycle_schedule(levels: &[usize], cycle: Cycle) -> Vec<usize> {
    let last = *levels.last().expect("at least one level");
    match cycle {
        Cycle::FinestOnly => vec![last],
        Cycle::V => levels.to_vec(),
        Cycle::W => {
            if levels.len() == 1 {
                return levels.to_vec();
            }
            let mut seq = levels.to_vec();
            seq.extend(levels.iter().rev().skip(1));
            seq.extend(levels.iter().skip(1));
            seq
        }
    }
}

fn visit_order(tri: &Triangulation, ordering: SweepOrdering) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..tri.n_nodes()).collect();
    match ordering {
        SweepOrdering::Lexicographic => {
            idx.sort_by_key(|&i| {
                let p = tri.node_scaled(i);
                (p[1], p[0])
            });
        }
        SweepOrdering::RedBlack => {
            let step = tri.cell_units().unwrap_or(1);
            idx.sort_by_key(|&i| {
                let p = tri.node_scaled(i);
                let parity = ((p[0] / step + p[1] / step) & 1) as i64;
                (parity, p[1], p[0])
            });
        }
    }
    idx
}

/// Builds the starting phase field from the projected image.
pub fn initialize<S: Scalar>(
    img: &MeshImage<S>,
    n_components: usize,
    strategy: InitStrategy,
    seed: u64,
) -> Result<PhaseField<S>, SimplexError> {
    if n_components < 2 {
        return Err(SimplexError::TooFewComponents(n_components));
    }
    let n = img.n_nodes();
    let mut u = PhaseField::new(n_components, n)?;
    match strategy {
        InitStrategy::Quantile => {
            let lum = img.nodal_luminance();
            let bins = intensity_bins(&lum, n_components);
            let delta = S::lit(0.05).min(S::lit(1.0 / (2.0 * n_components as f64)));
            let dominant = S::one() - S::lit((n_components - 1) as f64) * delta;
            for (node, &bin) in bins.iter().enumerate() {
                for i in 0..n_components {
                    u.set(i, node, if i == bin { dominant } else { delta });
                }
            }
        }
        InitStrategy::UniformNoise => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base = 1.0 / n_components as f64;
            let mut col = vec![S::zero(); n_components];
            for node in 0..n {
                for c in col.iter_mut() {
                    let noise: f64 = rng.random_range(-1.0..1.0);
                    *c = S::lit(base + 0.01 * noise);
                }
                let proj = nearest_simplex_point(&col)?;
                for (i, &v) in proj.iter().enumerate() {
                    u.set(i, node, v);
                }
            }
        }
    }
    Ok(u)
}

/// Intensity bins for the quantile-style initialization: the luminance
/// histogram (1024 buckets) is partitioned into `n_bins` contiguous
/// intervals minimizing the within-bin sum of squares, by dynamic
/// programming. Equal-mass quantile bins split any region holding more than
/// `1/n` of the nodes across two components and strand the solve in a
/// merge-type local minimum; the optimal partition tracks intensity modes
/// instead. Bins are ordered dark to bright; trailing bins stay empty when
/// the data has fewer distinct values.
fn intensity_bins<S: Scalar>(lum: &[S], n_bins: usize) -> Vec<usize> {
    const B: usize = 1024;
    let bucket = |v: S| -> usize {
        let x = v.to_f64_lossy().clamp(0.0, 1.0);
        ((x * B as f64).round() as usize).min(B)
    };
    let mut weight = vec![0.0f64; B + 1];
    for &v in lum {
        weight[bucket(v)] += 1.0;
    }
    let filled: Vec<usize> = (0..=B).filter(|&b| weight[b] > 0.0).collect();
    let m = filled.len();
    let mut bin_of_bucket = vec![0usize; B + 1];
    if m <= n_bins {
        for (k, &b) in filled.iter().enumerate() {
            bin_of_bucket[b] = k;
        }
    } else {
        // prefix sums of weight, weighted value and weighted square
        let mut w = vec![0.0f64; m + 1];
        let mut s = vec![0.0f64; m + 1];
        let mut q = vec![0.0f64; m + 1];
        for (i, &b) in filled.iter().enumerate() {
            let v = b as f64 / B as f64;
            w[i + 1] = w[i] + weight[b];
            s[i + 1] = s[i] + weight[b] * v;
            q[i + 1] = q[i] + weight[b] * v * v;
        }
        let cost = |i: usize, j: usize| -> f64 {
            // inclusive bucket range [i, j]
            let ww = w[j + 1] - w[i];
            let ss = s[j + 1] - s[i];
            let qq = q[j + 1] - q[i];
            (qq - ss * ss / ww).max(0.0)
        };
        let mut best = vec![vec![f64::INFINITY; m]; n_bins];
        let mut split = vec![vec![0usize; m]; n_bins];
        for j in 0..m {
            best[0][j] = cost(0, j);
        }
        for k in 1..n_bins {
            for j in k..m {
                for i in k..=j {
                    let c = best[k - 1][i - 1] + cost(i, j);
                    if c < best[k][j] {
                        best[k][j] = c;
                        split[k][j] = i;
                    }
                }
            }
        }
        // walk the split points back into per-bucket bin labels
        let mut hi = m - 1;
        for k in (0..n_bins).rev() {
            let lo = if k == 0 { 0 } else { split[k][hi] };
            for &b in &filled[lo..=hi] {
                bin_of_bucket[b] = k;
            }
            if k > 0 {
                hi = lo - 1;
            }
        }
    }
    lum.iter().map(|&v| bin_of_bucket[bucket(v)]).collect()
}

/// Hierarchy geometry and projection choices for [`run`].
#[derive(Debug, Clone)]
pub struct RunParams<S> {
    pub solver: SolverParams<S>,
    /// Uniform refinements above the base grid.
    pub refinements: usize,
    /// Cell size of the base grid in pixels (1 = the pixel grid itself).
    pub coarsen: u32,
    pub projection: ProjectionMode,
    pub node_budget: usize,
}

impl<S: Scalar> RunParams<S> {
    pub fn new(n_components: usize) -> Self {
        Self {
            solver: SolverParams::new(n_components),
            refinements: 3,
            coarsen: 1,
            projection: ProjectionMode::ByNode,
            node_budget: crate::mesh::DEFAULT_NODE_BUDGET,
        }
    }
}

#[derive(Debug)]
pub struct RunResult<S: Scalar> {
    pub segmentation: SegmentationResult<S>,
    pub diagnostics: Vec<StepDiagnostics<S>>,
    pub steps: usize,
    pub sweeps: usize,
    pub converged: bool,
}

/// End-to-end solve: hierarchy, projection, initialization, time stepping,
/// postprocessing.
pub fn run<S: Scalar>(img: &ImageData<S>, rp: &RunParams<S>) -> Result<RunResult<S>, SolverError> {
    let base = Triangulation::cell_grid(img.width(), img.height(), rp.coarsen)?;
    let hierarchy = GridHierarchy::build_with_budget(base, rp.refinements, rp.node_budget)?;
    let mesh_img = project_image(img, &hierarchy, rp.projection)?;
    let mut solver = Solver::new(&hierarchy, mesh_img, rp.solver.clone())?;
    let summary = solver.run_to_steady();
    let segmentation = segment(
        &solver.state.u,
        &solver.state.averages,
        &solver.image,
        &solver.mass,
    );
    Ok(RunResult {
        segmentation,
        diagnostics: solver.state.diagnostics,
        steps: summary.steps,
        sweeps: summary.sweeps,
        converged: summary.converged,
    })
}
