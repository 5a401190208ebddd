//! Piecewise-linear element operators: lumped mass, stiffness, and the
//! quadratic-form evaluations the sweep needs.

use thiserror::Error;

use crate::mesh::Triangulation;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("triangle {index} is degenerate (zero area)")]
    DegenerateTriangle { index: usize },
    #[error("dimension mismatch: matrix is {n}, vector is {got}")]
    DimensionMismatch { n: usize, got: usize },
}

/// Diagonal (lumped) mass matrix; entry `i` is the integral of the hat
/// function of node `i`, i.e. one third of the area of its incident triangles.
#[derive(Debug, Clone)]
pub struct DiagonalMatrix<S> {
    entries: Vec<S>,
}

impl<S: Scalar> DiagonalMatrix<S> {
    pub fn n(&self) -> usize {
        self.entries.len()
    }

    pub fn entry(&self, i: usize) -> S {
        self.entries[i]
    }

    pub fn entries(&self) -> &[S] {
        &self.entries
    }

    /// Sum of all entries, which equals the mesh area.
    pub fn total(&self) -> S {
        self.entries.iter().copied().sum()
    }

    /// `x' diag y`.
    pub fn quadratic_form(&self, x: &[S], y: &[S]) -> Result<S, FemError> {
        check_dim(self.entries.len(), x)?;
        check_dim(self.entries.len(), y)?;
        Ok(self
            .entries
            .iter()
            .zip(x.iter().zip(y))
            .map(|(&m, (&a, &b))| m * a * b)
            .sum())
    }

    /// Mass-weighted sum of a nodal field: the integral of its interpolant.
    pub fn weighted_sum(&self, x: &[S]) -> Result<S, FemError> {
        check_dim(self.entries.len(), x)?;
        Ok(self.entries.iter().zip(x).map(|(&m, &v)| m * v).sum())
    }
}

/// Symmetric sparse matrix in CSR form with sorted column indices per row.
/// Both triangles are stored so row access doubles as column access.
#[derive(Debug, Clone)]
pub struct SymmetricSparseMatrix<S> {
    n: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<S>,
}

impl<S: Scalar> SymmetricSparseMatrix<S> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[S]) {
        let r = self.offsets[i]..self.offsets[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn diag(&self, i: usize) -> S {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&i) {
            Ok(k) => vals[k],
            Err(_) => S::zero(),
        }
    }

    /// `(A x)_i`.
    pub fn row_dot(&self, i: usize, x: &[S]) -> S {
        let (cols, vals) = self.row(i);
        cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum()
    }

    pub fn apply(&self, x: &[S]) -> Result<Vec<S>, FemError> {
        check_dim(self.n, x)?;
        Ok((0..self.n).map(|i| self.row_dot(i, x)).collect())
    }

    /// `x' A y` as the sum over stored entries.
    pub fn quadratic_form(&self, x: &[S], y: &[S]) -> Result<S, FemError> {
        check_dim(self.n, x)?;
        check_dim(self.n, y)?;
        let mut acc = S::zero();
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut row_acc = S::zero();
            for (&j, &v) in cols.iter().zip(vals) {
                row_acc += v * y[j];
            }
            acc += x[i] * row_acc;
        }
        Ok(acc)
    }
}

fn check_dim<S>(n: usize, x: &[S]) -> Result<(), FemError> {
    if x.len() != n {
        Err(FemError::DimensionMismatch { n, got: x.len() })
    } else {
        Ok(())
    }
}

/// Row-sum lumping of the P1 mass matrix: each triangle contributes a third
/// of its area to each corner.
pub fn assemble_lumped_mass<S: Scalar>(t: &Triangulation) -> DiagonalMatrix<S> {
    let third = S::lit(1.0 / 3.0);
    let mut entries = vec![S::zero(); t.n_nodes()];
    for ti in 0..t.n_triangles() {
        let share = t.triangle_area::<S>(ti) * third;
        for v in t.triangle(ti) {
            entries[v] += share;
        }
    }
    DiagonalMatrix { entries }
}

/// Standard P1 stiffness matrix `<grad eta_i, grad eta_j>`.
pub fn assemble_stiffness<S: Scalar>(
    t: &Triangulation,
) -> Result<SymmetricSparseMatrix<S>, FemError> {
    let n = t.n_nodes();
    let mut rows: Vec<Vec<(usize, S)>> = vec![Vec::new(); n];
    let quarter = S::lit(0.25);
    for ti in 0..t.n_triangles() {
        let area = t.triangle_area::<S>(ti);
        if area <= S::zero() {
            return Err(FemError::DegenerateTriangle { index: ti });
        }
        let tri = t.triangle(ti);
        let p: Vec<[f64; 2]> = tri.iter().map(|&v| t.node_coord(v)).collect();
        // Gradient of the barycentric function at vertex k is
        // perp(p_{k+2} - p_{k+1}) / (2 area); only the edge vectors enter.
        let mut b = [S::zero(); 3];
        let mut c = [S::zero(); 3];
        for k in 0..3 {
            let pj = p[(k + 1) % 3];
            let pk = p[(k + 2) % 3];
            b[k] = S::lit(pj[1] - pk[1]);
            c[k] = S::lit(pk[0] - pj[0]);
        }
        let scale = quarter / area;
        for i in 0..3 {
            for j in 0..3 {
                let k_ij = (b[i] * b[j] + c[i] * c[j]) * scale;
                rows[tri[i]].push((tri[j], k_ij));
            }
        }
    }

    let mut offsets = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    offsets.push(0);
    for row in rows.iter_mut() {
        row.sort_unstable_by_key(|&(j, _)| j);
        let mut k = 0;
        while k < row.len() {
            let col = row[k].0;
            let mut acc = S::zero();
            while k < row.len() && row[k].0 == col {
                acc += row[k].1;
                k += 1;
            }
            cols.push(col);
            vals.push(acc);
        }
        offsets.push(cols.len());
    }
    Ok(SymmetricSparseMatrix { n, offsets, cols, vals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{GridHierarchy, Triangulation};

    /// Independent per-element oracle: basis planes are fitted by Cramer's
    /// rule and integrated with the three-edge-midpoint rule, which is exact
    /// for quadratics.
    mod oracle {
        pub fn plane_coeffs(p: &[[f64; 2]; 3], k: usize) -> [f64; 3] {
            // solve [1 x_i y_i] * [a0 a1 a2]' = e_k
            let m = [
                [1.0, p[0][0], p[0][1]],
                [1.0, p[1][0], p[1][1]],
                [1.0, p[2][0], p[2][1]],
            ];
            let det = |m: &[[f64; 3]; 3]| {
                m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                    - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                    + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
            };
            let d = det(&m);
            let mut out = [0.0; 3];
            for col in 0..3 {
                let mut mc = m;
                for r in 0..3 {
                    mc[r][col] = if r == k { 1.0 } else { 0.0 };
                }
                out[col] = det(&mc) / d;
            }
            out
        }

        pub fn area(p: &[[f64; 2]; 3]) -> f64 {
            0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
                - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0]))
        }

        /// Integral over the triangle of `eta_i * eta_j` (3-midpoint rule).
        pub fn mass_entry(p: &[[f64; 2]; 3], i: usize, j: usize) -> f64 {
            let ci = plane_coeffs(p, i);
            let cj = plane_coeffs(p, j);
            let eval = |c: &[f64; 3], x: f64, y: f64| c[0] + c[1] * x + c[2] * y;
            let mids = [
                [(p[0][0] + p[1][0]) / 2.0, (p[0][1] + p[1][1]) / 2.0],
                [(p[1][0] + p[2][0]) / 2.0, (p[1][1] + p[2][1]) / 2.0],
                [(p[2][0] + p[0][0]) / 2.0, (p[2][1] + p[0][1]) / 2.0],
            ];
            let a = area(p);
            mids.iter()
                .map(|m| eval(&ci, m[0], m[1]) * eval(&cj, m[0], m[1]))
                .sum::<f64>()
                * a
                / 3.0
        }

        /// Integral over the triangle of `grad eta_i . grad eta_j`.
        pub fn stiffness_entry(p: &[[f64; 2]; 3], i: usize, j: usize) -> f64 {
            let ci = plane_coeffs(p, i);
            let cj = plane_coeffs(p, j);
            (ci[1] * cj[1] + ci[2] * cj[2]) * area(p)
        }
    }

    fn tri_points(t: &Triangulation, ti: usize) -> [[f64; 2]; 3] {
        let tri = t.triangle(ti);
        [t.node_coord(tri[0]), t.node_coord(tri[1]), t.node_coord(tri[2])]
    }

    fn oracle_mass(t: &Triangulation) -> Vec<f64> {
        let mut m = vec![0.0; t.n_nodes()];
        for ti in 0..t.n_triangles() {
            let p = tri_points(t, ti);
            let tri = t.triangle(ti);
            for i in 0..3 {
                for j in 0..3 {
                    m[tri[i]] += oracle::mass_entry(&p, i, j);
                }
            }
        }
        m
    }

    fn oracle_stiffness_dense(t: &Triangulation) -> Vec<Vec<f64>> {
        let n = t.n_nodes();
        let mut a = vec![vec![0.0; n]; n];
        for ti in 0..t.n_triangles() {
            let p = tri_points(t, ti);
            let tri = t.triangle(ti);
            for i in 0..3 {
                for j in 0..3 {
                    a[tri[i]][tri[j]] += oracle::stiffness_entry(&p, i, j);
                }
            }
        }
        a
    }

    fn small_meshes() -> Vec<Triangulation> {
        vec![
            Triangulation::pixel_grid(1, 1).unwrap(),
            Triangulation::pixel_grid(2, 1).unwrap(),
            Triangulation::pixel_grid(2, 2).unwrap(),
            Triangulation::pixel_grid(4, 2).unwrap(),
            Triangulation::pixel_grid(1, 1).unwrap().refine_uniform(),
            Triangulation::pixel_grid(2, 1).unwrap().refine_uniform(),
            Triangulation::cell_grid(4, 4, 2).unwrap(),
        ]
    }

    #[test]
    fn lumped_mass_matches_oracle_on_small_meshes() {
        for t in small_meshes() {
            assert!(t.n_triangles() <= 32);
            let m = assemble_lumped_mass::<f64>(&t);
            let oracle = oracle_mass(&t);
            for i in 0..t.n_nodes() {
                let rel = (m.entry(i) - oracle[i]).abs() / oracle[i].abs();
                assert!(rel <= 1e-12, "node {i}: {} vs {}", m.entry(i), oracle[i]);
            }
        }
    }

    #[test]
    fn lumped_mass_unit_square() {
        let t = Triangulation::pixel_grid(1, 1).unwrap();
        let m = assemble_lumped_mass::<f64>(&t);
        assert!((m.total() - 1.0).abs() <= 1e-15);
        // diagonal corners touch two triangles, the others one each
        let mut entries: Vec<f64> = m.entries().to_vec();
        entries.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(entries, vec![1.0 / 6.0, 1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn lumped_mass_uniform_interior_node() {
        let t = Triangulation::pixel_grid(4, 4).unwrap().refine_uniform();
        let m = assemble_lumped_mass::<f64>(&t);
        let h = 0.5;
        // any strictly interior lattice node touches six triangles
        let interior = (0..t.n_nodes()).find(|&i| t.node_scaled(i) == [4, 4]).unwrap();
        assert!((m.entry(interior) - h * h).abs() <= 1e-15);
    }

    #[test]
    fn stiffness_matches_oracle_on_small_meshes() {
        for t in small_meshes() {
            let a = assemble_stiffness::<f64>(&t).unwrap();
            let dense = oracle_stiffness_dense(&t);
            for i in 0..t.n_nodes() {
                let (cols, vals) = a.row(i);
                for (&j, &v) in cols.iter().zip(vals) {
                    let rel = (v - dense[i][j]).abs() / dense[i][j].abs().max(1.0);
                    assert!(rel <= 1e-12, "({i},{j}): {v} vs {}", dense[i][j]);
                }
                // entries not stored must be zero in the oracle
                for j in 0..t.n_nodes() {
                    if !cols.contains(&j) {
                        assert!(dense[i][j].abs() <= 1e-13);
                    }
                }
            }
        }
    }

    #[test]
    fn stiffness_unit_right_triangle_element() {
        let t = Triangulation::from_parts(
            vec![[0, 0], [1, 0], [0, 1]],
            1,
            vec![[0, 1, 2]],
            1,
            1,
        )
        .unwrap();
        let a = assemble_stiffness::<f64>(&t).unwrap();
        let expect = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                let (cols, vals) = a.row(i);
                let v = cols
                    .iter()
                    .position(|&c| c == j)
                    .map(|k| vals[k])
                    .unwrap_or(0.0);
                assert!((v - expect[i][j]).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn stiffness_row_sums_vanish_and_diag() {
        let t = Triangulation::pixel_grid(3, 3).unwrap();
        let a = assemble_stiffness::<f64>(&t).unwrap();
        for i in 0..t.n_nodes() {
            let (_, vals) = a.row(i);
            let s: f64 = vals.iter().sum();
            assert!(s.abs() <= 1e-13, "row {i} sums to {s}");
        }
        // interior node of the unit criss-cross grid has diagonal 4
        let interior = (0..t.n_nodes()).find(|&i| t.node_scaled(i) == [1, 1]).unwrap();
        assert!((a.diag(interior) - 4.0).abs() <= 1e-13);
    }

    #[test]
    fn stiffness_rejects_degenerate_triangle() {
        let t = Triangulation::from_parts_unvalidated(
            vec![[0, 0], [1, 0], [2, 0]],
            1,
            vec![[0, 1, 2]],
            2,
            1,
        );
        assert!(matches!(
            assemble_stiffness::<f64>(&t),
            Err(FemError::DegenerateTriangle { index: 0 })
        ));
    }

    #[test]
    fn quadratic_form_identities() {
        let t = Triangulation::pixel_grid(3, 2).unwrap();
        let a = assemble_stiffness::<f64>(&t).unwrap();
        let m = assemble_lumped_mass::<f64>(&t);
        let ones = vec![1.0; t.n_nodes()];
        // constants in the stiffness kernel
        let mut y = vec![0.0; t.n_nodes()];
        for (i, v) in y.iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin();
        }
        assert!(a.quadratic_form(&ones, &y).unwrap().abs() <= 1e-12);
        // mass against constants gives the area
        assert!((m.quadratic_form(&ones, &ones).unwrap() - 6.0).abs() <= 1e-12);
        // PSD on a few pseudo-random vectors
        for k in 0..5 {
            let x: Vec<f64> = (0..t.n_nodes())
                .map(|i| ((i * 7 + k * 13) as f64 * 0.61).cos())
                .collect();
            assert!(a.quadratic_form(&x, &x).unwrap() >= -1e-12);
        }
    }

    #[test]
    fn quadratic_form_dimension_mismatch() {
        let t = Triangulation::pixel_grid(2, 2).unwrap();
        let a = assemble_stiffness::<f64>(&t).unwrap();
        let short = vec![1.0; 3];
        let ok = vec![1.0; t.n_nodes()];
        assert!(matches!(
            a.quadratic_form(&short, &ok),
            Err(FemError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn energy_form_matches_elementwise_gradient_integral() {
        // v' A v equals the summed per-element integral of |grad v|^2
        for t in small_meshes() {
            let a = assemble_stiffness::<f64>(&t).unwrap();
            let v: Vec<f64> = (0..t.n_nodes())
                .map(|i| {
                    let p = t.node_coord(i);
                    (1.3 * p[0] - 0.7 * p[1]).sin() + 0.2 * p[0] * p[1]
                })
                .collect();
            let mut exact = 0.0;
            for ti in 0..t.n_triangles() {
                let p = tri_points(&t, ti);
                let tri = t.triangle(ti);
                // gradient of the P1 interpolant of v on this element
                let mut gx = 0.0;
                let mut gy = 0.0;
                for k in 0..3 {
                    let c = oracle::plane_coeffs(&p, k);
                    gx += c[1] * v[tri[k]];
                    gy += c[2] * v[tri[k]];
                }
                exact += (gx * gx + gy * gy) * oracle::area(&p);
            }
            let form = a.quadratic_form(&v, &v).unwrap();
            assert!(
                (form - exact).abs() <= 1e-12 * exact.abs().max(1.0),
                "{form} vs {exact}"
            );
        }
    }

    #[test]
    fn galerkin_footprint_consistency() {
        // For nested P1 spaces, p' A_fine p equals the coarse diagonal entry.
        let h = GridHierarchy::build(Triangulation::pixel_grid(3, 2).unwrap(), 2).unwrap();
        let a_fine = assemble_stiffness::<f64>(h.finest()).unwrap();
        for l in 0..h.n_levels() {
            let a_l = assemble_stiffness::<f64>(h.level(l)).unwrap();
            for node in 0..h.level(l).n_nodes() {
                let fp = h.footprint::<f64>(l, node).unwrap();
                let mut dense = vec![0.0; h.finest().n_nodes()];
                for &(i, w) in &fp.entries {
                    dense[i] = w;
                }
                let fine_form = a_fine.quadratic_form(&dense, &dense).unwrap();
                let coarse = a_l.diag(node);
                assert!(
                    (fine_form - coarse).abs() <= 1e-12 * coarse.max(1.0),
                    "level {l} node {node}: {fine_form} vs {coarse}"
                );
            }
        }
    }
}
