//! Gibbs-simplex geometry: the zero-mean tangent projection, the multi-pass
//! bound-enforcement procedure applied to every basis update, and the
//! Euclidean projection used to sanitize external inputs.

use thiserror::Error;

use crate::mesh::BasisFootprint;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum SimplexError {
    #[error("need at least two components, got {0}")]
    TooFewComponents(usize),
}

/// Removes the mean of `x` in place, mapping it onto the hyperplane of
/// zero-sum vectors. Linear, symmetric and idempotent.
pub fn tangent_project<S: Scalar>(x: &mut [S]) -> Result<(), SimplexError> {
    if x.len() < 2 {
        return Err(SimplexError::TooFewComponents(x.len()));
    }
    let mean = x.iter().copied().sum::<S>() / S::lit(x.len() as f64);
    for v in x.iter_mut() {
        *v -= mean;
    }
    Ok(())
}

/// Euclidean projection onto the probability simplex.
pub fn nearest_simplex_point<S: Scalar>(x: &[S]) -> Result<Vec<S>, SimplexError> {
    let n = x.len();
    if n < 2 {
        return Err(SimplexError::TooFewComponents(n));
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut css = S::zero();
    let mut tau = S::zero();
    for (j, &v) in sorted.iter().enumerate() {
        css += v;
        let cand = (css - S::one()) / S::lit((j + 1) as f64);
        if v - cand > S::zero() {
            tau = cand;
        }
    }
    let mut y: Vec<S> = x.iter().map(|&v| (v - tau).max(S::zero())).collect();
    // push the rounding dust into the largest entry, which stays >= 1/n
    let dust = y.iter().copied().sum::<S>() - S::one();
    let imax = (0..n).max_by(|&a, &b| y[a].partial_cmp(&y[b]).unwrap()).unwrap();
    y[imax] -= dust;
    Ok(y)
}

/// The order parameter: `n_components` nodal fields over the finest grid,
/// stored component-major. Every completed solver update keeps each nodal
/// column on the simplex.
#[derive(Debug, Clone)]
pub struct PhaseField<S> {
    n_components: usize,
    n_nodes: usize,
    data: Vec<S>,
}

impl<S: Scalar> PhaseField<S> {
    pub fn new(n_components: usize, n_nodes: usize) -> Result<Self, SimplexError> {
        if n_components < 2 {
            return Err(SimplexError::TooFewComponents(n_components));
        }
        Ok(Self { n_components, n_nodes, data: vec![S::zero(); n_components * n_nodes] })
    }

    /// Builds from per-component nodal vectors.
    pub fn from_components(components: Vec<Vec<S>>) -> Result<Self, SimplexError> {
        if components.len() < 2 {
            return Err(SimplexError::TooFewComponents(components.len()));
        }
        let n_nodes = components[0].len();
        assert!(components.iter().all(|c| c.len() == n_nodes));
        let mut data = Vec::with_capacity(components.len() * n_nodes);
        for c in &components {
            data.extend_from_slice(c);
        }
        Ok(Self { n_components: components.len(), n_nodes, data })
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn component(&self, i: usize) -> &[S] {
        &self.data[i * self.n_nodes..(i + 1) * self.n_nodes]
    }

    pub fn component_mut(&mut self, i: usize) -> &mut [S] {
        &mut self.data[i * self.n_nodes..(i + 1) * self.n_nodes]
    }

    pub fn get(&self, component: usize, node: usize) -> S {
        self.data[component * self.n_nodes + node]
    }

    pub fn set(&mut self, component: usize, node: usize, v: S) {
        self.data[component * self.n_nodes + node] = v;
    }

    /// Values of all components at one node.
    pub fn node_values(&self, node: usize) -> Vec<S> {
        (0..self.n_components).map(|i| self.get(i, node)).collect()
    }

    /// Worst deviations over all nodes: `(max |sum - 1|, max distance outside [0,1])`.
    pub fn admissibility_deviation(&self) -> (S, S) {
        let mut sum_dev = S::zero();
        let mut range_dev = S::zero();
        for n in 0..self.n_nodes {
            let mut s = S::zero();
            for i in 0..self.n_components {
                let v = self.get(i, n);
                s += v;
                range_dev = range_dev.max((-v).max(v - S::one()));
            }
            sum_dev = sum_dev.max((s - S::one()).abs());
        }
        (sum_dev, range_dev)
    }

    pub fn is_admissible(&self, tol: S) -> bool {
        let (s, r) = self.admissibility_deviation();
        s <= tol && r <= tol
    }

    /// Clamps negatives to zero and rescales each nodal column to sum to one.
    /// Used once per accepted time step to shed rounding dust.
    pub fn renormalize(&mut self) {
        for n in 0..self.n_nodes {
            let mut s = S::zero();
            for i in 0..self.n_components {
                let v = self.get(i, n).max(S::zero());
                self.set(i, n, v);
                s += v;
            }
            if s > S::zero() {
                for i in 0..self.n_components {
                    let v = self.get(i, n) / s;
                    self.set(i, n, v);
                }
            } else {
                let u = S::one() / S::lit(self.n_components as f64);
                for i in 0..self.n_components {
                    self.set(i, n, u);
                }
            }
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> S {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(S::zero(), |m, d| m.max(d))
    }
}

/// Outcome of [`enforce_bounds`].
#[derive(Debug, Clone)]
pub struct BoundsCorrection<S> {
    pub alpha: Vec<S>,
    /// Full iterations of the violation scan; zero when nothing was clipped.
    pub passes: usize,
    /// Set when no admissible correction exists and the update was zeroed.
    pub skipped: bool,
}

/// Reusable workspace for [`enforce_bounds_in_place`], so the sweep does not
/// allocate per node visit.
#[derive(Debug, Default)]
pub struct BoundsScratch {
    active: Vec<bool>,
    violators: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundsOutcome {
    pub passes: usize,
    pub skipped: bool,
}

/// Corrects a zero-sum update so that `u_i + alpha_i * footprint` stays in
/// `[0, 1]` at every affected node.
///
/// Components driven negative are raised so their worst node lands exactly at
/// zero, the balance is spread equally over the still-clean components, and
/// the scan repeats on the restricted set until nothing is negative. Upper
/// bounds follow from the per-node unit sum, with an explicit final check as
/// a safety net. If every component ends up pinned while balance is still
/// owed (reachable only from a corrupted base field), the update is zeroed
/// and flagged.
pub fn enforce_bounds<S: Scalar>(
    u: &PhaseField<S>,
    alpha: &[S],
    footprint: &BasisFootprint<S>,
) -> BoundsCorrection<S> {
    let mut out = alpha.to_vec();
    let outcome =
        enforce_bounds_in_place(u, &mut out, &footprint.entries, &mut BoundsScratch::default());
    BoundsCorrection { alpha: out, passes: outcome.passes, skipped: outcome.skipped }
}

/// In-place core of [`enforce_bounds`]; zeroes `alpha` when it skips.
pub fn enforce_bounds_in_place<S: Scalar>(
    u: &PhaseField<S>,
    alpha: &mut [S],
    entries: &[(usize, S)],
    scratch: &mut BoundsScratch,
) -> BoundsOutcome {
    assert_eq!(alpha.len(), u.n_components());
    enforce_bounds_with(u.n_components(), |i, node| u.get(i, node), alpha, entries, scratch)
}

/// Layout-agnostic core: `value(component, node)` reads the base field.
pub(crate) fn enforce_bounds_with<S: Scalar>(
    n_comp: usize,
    value: impl Fn(usize, usize) -> S,
    alpha: &mut [S],
    entries: &[(usize, S)],
    scratch: &mut BoundsScratch,
) -> BoundsOutcome {
    let tol = S::violation_tol();

    scratch.active.clear();
    scratch.active.resize(n_comp, true);
    let active = &mut scratch.active;
    let violators = &mut scratch.violators;
    let mut passes = 0usize;

    loop {
        violators.clear();
        for i in 0..n_comp {
            if !active[i] {
                continue;
            }
            let mut min_v = S::infinity();
            for &(node, w) in entries {
                min_v = min_v.min(value(i, node) + alpha[i] * w);
            }
            if min_v < -tol {
                violators.push(i);
            }
        }
        if violators.is_empty() {
            break;
        }
        passes += 1;
        let k = active.iter().filter(|&&a| a).count() - violators.len();
        if k == 0 || passes > n_comp {
            alpha.iter_mut().for_each(|a| *a = S::zero());
            return BoundsOutcome { passes, skipped: true };
        }
        let mut total_beta = S::zero();
        for &i in violators.iter() {
            // largest feasible alpha_i over the whole support
            let mut a_min = S::neg_infinity();
            for &(node, w) in entries {
                a_min = a_min.max(-value(i, node) / w);
            }
            let beta = (a_min - alpha[i]).max(S::zero());
            alpha[i] = a_min;
            total_beta += beta;
            active[i] = false;
        }
        let share = total_beta / S::lit(k as f64);
        for i in 0..n_comp {
            if active[i] {
                alpha[i] -= share;
            }
        }
    }

    // Safety net: with an admissible base field the unit sum makes upper
    // violations impossible once lower bounds hold; refuse the update if one
    // shows up anyway.
    let upper = S::one() + S::admissibility_tol();
    for i in 0..n_comp {
        for &(node, w) in entries {
            if value(i, node) + alpha[i] * w > upper {
                alpha.iter_mut().for_each(|a| *a = S::zero());
                return BoundsOutcome { passes: passes + 1, skipped: true };
            }
        }
    }

    BoundsOutcome { passes, skipped: false }
}
