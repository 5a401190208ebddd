//! Turns a converged phase field into segmentation outputs: the composite
//! reconstruction, its rounded (one component per node) counterpart, the
//! remainder against the projected input, and error metrics.

use crate::fem::DiagonalMatrix;
use crate::fidelity::{MeshImage, RegionAverages};
use crate::mesh::Triangulation;
use crate::scalar::Scalar;
use crate::simplex::PhaseField;

/// Per-channel error norms of the reconstructions against the projected
/// input, in the integral (mass-weighted) L2 norm and the max norm.
#[derive(Debug, Clone)]
pub struct ErrorMetrics<S> {
    pub composite_l2: Vec<S>,
    pub composite_linf: Vec<S>,
    pub rounded_l2: Vec<S>,
    pub rounded_linf: Vec<S>,
    /// Fraction of nodes whose label disagrees with the ground truth, when
    /// ground truth labels were supplied.
    pub misclassification: Option<S>,
}

#[derive(Debug, Clone)]
pub struct SegmentationResult<S> {
    pub components: PhaseField<S>,
    pub averages: RegionAverages<S>,
    /// Per-node argmax component, ties to the smallest index.
    pub labels: Vec<usize>,
    /// Per-channel per-node reconstruction `sum_i c[i][j] u_i`.
    pub composite: Vec<Vec<S>>,
    /// Composite of the rounded (one-hot) field.
    pub rounded_composite: Vec<Vec<S>>,
    /// Projected input minus rounded composite, per channel.
    pub remainder: Vec<Vec<S>>,
    pub metrics: ErrorMetrics<S>,
}

/// `sum_i c[i][j] * u_i` per node and channel.
pub fn composite<S: Scalar>(u: &PhaseField<S>, averages: &RegionAverages<S>) -> Vec<Vec<S>> {
    let n = u.n_nodes();
    let mut out = vec![vec![S::zero(); n]; averages.channels()];
    for i in 0..u.n_components() {
        let ui = u.component(i);
        for (j, plane) in out.iter_mut().enumerate() {
            let c_ij = averages.get(i, j);
            for (p, &v) in plane.iter_mut().zip(ui) {
                *p += c_ij * v;
            }
        }
    }
    out
}

/// Argmax labels and the corresponding one-hot field.
pub fn round_components<S: Scalar>(u: &PhaseField<S>) -> (Vec<usize>, PhaseField<S>) {
    let n = u.n_nodes();
    let n_comp = u.n_components();
    let mut labels = Vec::with_capacity(n);
    let mut one_hot = PhaseField::new(n_comp, n).expect("component count from input field");
    for node in 0..n {
        let mut best = 0usize;
        let mut best_v = u.get(0, node);
        for i in 1..n_comp {
            let v = u.get(i, node);
            if v > best_v {
                best = i;
                best_v = v;
            }
        }
        labels.push(best);
        one_hot.set(best, node, S::one());
    }
    (labels, one_hot)
}

/// Pointwise difference `projected input - reconstruction` per channel.
pub fn remainder<S: Scalar>(
    projected_input: &MeshImage<S>,
    reconstruction: &[Vec<S>],
) -> Vec<Vec<S>> {
    assert_eq!(projected_input.channels(), reconstruction.len());
    (0..projected_input.channels())
        .map(|j| {
            let plane = projected_input.nodal_channel(j);
            assert_eq!(plane.len(), reconstruction[j].len());
            plane
                .iter()
                .zip(&reconstruction[j])
                .map(|(&a, &b)| a - b)
                .collect()
        })
        .collect()
}

fn norms<S: Scalar>(diff: &[Vec<S>], mass: &DiagonalMatrix<S>) -> (Vec<S>, Vec<S>) {
    let mut l2 = Vec::with_capacity(diff.len());
    let mut linf = Vec::with_capacity(diff.len());
    for plane in diff {
        let mut sq = S::zero();
        let mut mx = S::zero();
        for (&v, &m) in plane.iter().zip(mass.entries()) {
            sq += m * v * v;
            mx = mx.max(v.abs());
        }
        l2.push(sq.sqrt());
        linf.push(mx);
    }
    (l2, linf)
}

/// Error metrics of both reconstructions, plus the misclassification rate
/// when ground truth labels are given (labels must already be aligned; see
/// [`best_label_matching`]).
pub fn segmentation_errors<S: Scalar>(
    projected_input: &MeshImage<S>,
    composite: &[Vec<S>],
    rounded_composite: &[Vec<S>],
    labels: &[usize],
    mass: &DiagonalMatrix<S>,
    ground_truth: Option<&[usize]>,
) -> ErrorMetrics<S> {
    let comp_diff = remainder(projected_input, composite);
    let round_diff = remainder(projected_input, rounded_composite);
    let (composite_l2, composite_linf) = norms(&comp_diff, mass);
    let (rounded_l2, rounded_linf) = norms(&round_diff, mass);
    let misclassification = ground_truth.map(|gt| {
        assert_eq!(gt.len(), labels.len());
        let wrong = labels.iter().zip(gt).filter(|(a, b)| a != b).count();
        S::lit(wrong as f64 / labels.len() as f64)
    });
    ErrorMetrics { composite_l2, composite_linf, rounded_l2, rounded_linf, misclassification }
}

/// Confusion matrix `counts[result_label][truth_label]`.
pub fn confusion_matrix(labels: &[usize], truth: &[usize], n_labels: usize) -> Vec<Vec<usize>> {
    assert_eq!(labels.len(), truth.len());
    let mut m = vec![vec![0usize; n_labels]; n_labels];
    for (&a, &b) in labels.iter().zip(truth) {
        m[a][b] += 1;
    }
    m
}

/// Permutation `p` (result label -> truth label) maximizing agreement, by
/// exhaustive search; intended for small component counts.
pub fn best_label_matching(confusion: &[Vec<usize>]) -> Vec<usize> {
    let n = confusion.len();
    assert!(n <= 10, "exhaustive matching is for small label counts");
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_score = 0usize;
    permute(&mut perm, 0, &mut |p| {
        let score: usize = (0..n).map(|i| confusion[i][p[i]]).sum();
        if score > best_score {
            best_score = score;
            best = p.to_vec();
        }
    });
    best
}

fn permute(items: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// Evaluates a nodal field at every pixel center of the underlying image,
/// for comparisons against the raw pixel data.
pub fn sample_at_pixel_centers<S: Scalar>(fine: &Triangulation, nodal: &[S]) -> Vec<S> {
    let lattice = fine
        .lattice_node_map()
        .expect("pixel-center sampling requires a structured grid");
    let (w, h) = (fine.width() as i64, fine.height() as i64);
    let denom = fine.denom();
    let mut out = Vec::with_capacity((w * h) as usize);
    for py in 0..h {
        for px in 0..w {
            // pixel center in half-units: (px + 1/2) * 2 * denom
            let x = (2 * px + 1) * denom;
            let y = (2 * py + 1) * denom;
            out.push(fine.eval_nodal_half_units(&lattice, x, y, nodal));
        }
    }
    out
}

/// Assembles the full [`SegmentationResult`] from a converged solve.
pub fn segment<S: Scalar>(
    u: &PhaseField<S>,
    averages: &RegionAverages<S>,
    projected_input: &MeshImage<S>,
    mass: &DiagonalMatrix<S>,
) -> SegmentationResult<S> {
    let comp = composite(u, averages);
    let (labels, one_hot) = round_components(u);
    let rounded = composite(&one_hot, averages);
    let rem = remainder(projected_input, &rounded);
    let metrics = segmentation_errors(projected_input, &comp, &rounded, &labels, mass, None);
    SegmentationResult {
        components: u.clone(),
        averages: averages.clone(),
        labels,
        composite: comp,
        rounded_composite: rounded,
        remainder: rem,
        metrics,
    }
}


impl<S: Scalar> SegmentationResult<S> {
    /// One-hot field matching `labels`, for feeding results back through the
    /// pipeline.
    pub fn components_rounded(&self) -> PhaseField<S> {
        let (_, one_hot) = round_components(&self.components);
        one_hot
    }
}
