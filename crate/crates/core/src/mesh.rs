//! Pixel-aligned triangulations, uniform refinement, and the nested grid
//! hierarchy with fine-grid basis footprints.
//!
//! Node coordinates are stored as integers scaled by a per-level denominator
//! (a power of two times the base cell size), so nesting and containment
//! checks are exact. Every constructor keeps triangles positively oriented
//! and the mesh conforming (each edge shared by at most two triangles).

use std::collections::BTreeMap;

use thiserror::Error;

use crate::scalar::Scalar;

/// Default cap on finest-level node count when building hierarchies.
pub const DEFAULT_NODE_BUDGET: usize = 1 << 24;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("image dimensions must be positive, got {width}x{height}")]
    InvalidDimensions { width: u32, height: u32 },
    #[error("dimensions {width}x{height} not divisible by coarsening factor {factor}")]
    IndivisibleCoarsening { width: u32, height: u32, factor: u32 },
    #[error("triangle {index} has non-positive signed area")]
    NonPositiveArea { index: usize },
    #[error("edge ({a}, {b}) is shared by more than two triangles")]
    NonConforming { a: usize, b: usize },
    #[error("node {index} is not a corner of any triangle")]
    HangingNode { index: usize },
    #[error("triangle {index} references node {node} out of range")]
    NodeIndexOutOfRange { index: usize, node: usize },
    #[error("hierarchy would need {needed} nodes, budget is {budget}")]
    NodeBudgetExceeded { needed: usize, budget: usize },
    #[error("level {level} out of range (hierarchy has {count} levels)")]
    LevelOutOfRange { level: usize, count: usize },
    #[error("node {node} out of range on level {level}")]
    NodeOutOfRange { level: usize, node: usize },
}

/// A conforming triangulation of the image rectangle.
///
/// Coordinates are `nodes[i] / denom` in pixel units.
#[derive(Debug, Clone)]
pub struct Triangulation {
    nodes: Vec<[i64; 2]>,
    triangles: Vec<[usize; 3]>,
    level: usize,
    denom: i64,
    width: u32,
    height: u32,
    /// Lattice step in scaled units for grids built by the constructors in
    /// this module; `None` for hand-assembled meshes.
    cell_units: Option<i64>,
}

impl Triangulation {
    /// One node per pixel corner, each pixel cell split into two right
    /// triangles by the diagonal from the cell origin to the opposite corner.
    pub fn pixel_grid(width: u32, height: u32) -> Result<Self, MeshError> {
        Self::cell_grid(width, height, 1)
    }

    /// Like [`Triangulation::pixel_grid`] but with square cells of `cell`
    /// pixels, used to coarsen below the pixel grid. Dimensions must divide.
    pub fn cell_grid(width: u32, height: u32, cell: u32) -> Result<Self, MeshError> {
        if width == 0 || height == 0 {
            return Err(MeshError::InvalidDimensions { width, height });
        }
        if cell == 0 || width % cell != 0 || height % cell != 0 {
            return Err(MeshError::IndivisibleCoarsening { width, height, factor: cell });
        }
        let cx = (width / cell) as usize;
        let cy = (height / cell) as usize;
        let c = cell as i64;
        let mut nodes = Vec::with_capacity((cx + 1) * (cy + 1));
        for j in 0..=cy {
            for i in 0..=cx {
                nodes.push([i as i64 * c, j as i64 * c]);
            }
        }
        let at = |i: usize, j: usize| j * (cx + 1) + i;
        let mut triangles = Vec::with_capacity(2 * cx * cy);
        for j in 0..cy {
            for i in 0..cx {
                let (a, b, d, cn) = (at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1));
                triangles.push([a, b, d]);
                triangles.push([a, d, cn]);
            }
        }
        Ok(Self { nodes, triangles, level: 1, denom: 1, width, height, cell_units: Some(c) })
    }

    /// Builds a triangulation from raw parts, validating orientation,
    /// conformity and the absence of hanging nodes. Intended for tests and
    /// non-rectangular experiments; the grid constructors are preferred.
    pub fn from_parts(
        nodes: Vec<[i64; 2]>,
        denom: i64,
        triangles: Vec<[usize; 3]>,
        width: u32,
        height: u32,
    ) -> Result<Self, MeshError> {
        let t = Self { nodes, triangles, level: 1, denom, width, height, cell_units: None };
        t.validate()?;
        Ok(t)
    }

    #[cfg(test)]
    pub(crate) fn from_parts_unvalidated(
        nodes: Vec<[i64; 2]>,
        denom: i64,
        triangles: Vec<[usize; 3]>,
        width: u32,
        height: u32,
    ) -> Self {
        Self { nodes, triangles, level: 1, denom, width, height, cell_units: None }
    }

    /// Checks positive orientation, node index bounds, conformity
    /// (edge use count in {1, 2}) and that no node hangs.
    pub fn validate(&self) -> Result<(), MeshError> {
        let n = self.nodes.len();
        let mut used = vec![false; n];
        let mut edge_use: BTreeMap<(usize, usize), u32> = BTreeMap::new();
        for (ti, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                if v >= n {
                    return Err(MeshError::NodeIndexOutOfRange { index: ti, node: v });
                }
                used[v] = true;
            }
            if self.signed_area2_scaled(ti) <= 0 {
                return Err(MeshError::NonPositiveArea { index: ti });
            }
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let c = edge_use.entry(key).or_insert(0);
                *c += 1;
                if *c > 2 {
                    return Err(MeshError::NonConforming { a: key.0, b: key.1 });
                }
            }
        }
        if let Some(i) = used.iter().position(|&u| !u) {
            return Err(MeshError::HangingNode { index: i });
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// 1-based level index within a hierarchy; stand-alone meshes are level 1.
    pub fn level(&self) -> usize {
        self.level
    }

    /// Denominator of the integer coordinates (scaled units per pixel).
    pub fn denom(&self) -> i64 {
        self.denom
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn node_scaled(&self, i: usize) -> [i64; 2] {
        self.nodes[i]
    }

    /// Node coordinates in pixel units. Exact: scaled integers over a
    /// power-of-two-times-cell denominator.
    pub fn node_coord(&self, i: usize) -> [f64; 2] {
        let d = self.denom as f64;
        [self.nodes[i][0] as f64 / d, self.nodes[i][1] as f64 / d]
    }

    pub fn triangle(&self, t: usize) -> [usize; 3] {
        self.triangles[t]
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// Twice the signed area in scaled units (exact integer arithmetic).
    fn signed_area2_scaled(&self, t: usize) -> i64 {
        let [a, b, c] = self.triangles[t];
        let pa = self.nodes[a];
        let pb = self.nodes[b];
        let pc = self.nodes[c];
        (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0])
    }

    /// Triangle area in pixel units.
    pub fn triangle_area<S: Scalar>(&self, t: usize) -> S {
        let two_a = self.signed_area2_scaled(t) as f64;
        S::lit(two_a / (2.0 * (self.denom * self.denom) as f64))
    }

    /// Total mesh area in pixel units.
    pub fn total_area<S: Scalar>(&self) -> S {
        (0..self.triangles.len()).map(|t| self.triangle_area::<S>(t)).sum()
    }

    /// Max triangle diameter in pixel units.
    pub fn h(&self) -> f64 {
        let mut h2max = 0i64;
        for tri in &self.triangles {
            for k in 0..3 {
                let pa = self.nodes[tri[k]];
                let pb = self.nodes[tri[(k + 1) % 3]];
                let dx = pb[0] - pa[0];
                let dy = pb[1] - pa[1];
                h2max = h2max.max(dx * dx + dy * dy);
            }
        }
        (h2max as f64).sqrt() / self.denom as f64
    }

    /// Structured lattice dimensions `(nx, ny)` in nodes, when this mesh was
    /// produced by the grid constructors (possibly refined).
    pub fn grid_dims(&self) -> Option<(usize, usize)> {
        let cu = self.cell_units?;
        let nx = (self.width as i64 * self.denom) / cu;
        let ny = (self.height as i64 * self.denom) / cu;
        Some((nx as usize + 1, ny as usize + 1))
    }

    /// Lattice step in scaled units for structured grids.
    pub(crate) fn cell_units(&self) -> Option<i64> {
        self.cell_units
    }

    /// Splits every triangle into four congruent children via edge midpoints.
    pub fn refine_uniform(&self) -> Triangulation {
        self.refine_with_parents().0
    }

    fn refine_with_parents(&self) -> (Triangulation, Vec<NodeParent>) {
        let mut nodes: Vec<[i64; 2]> =
            self.nodes.iter().map(|p| [p[0] * 2, p[1] * 2]).collect();
        let mut parents: Vec<NodeParent> =
            (0..self.nodes.len()).map(NodeParent::Vertex).collect();
        let mut midpoint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut triangles = Vec::with_capacity(self.triangles.len() * 4);

        let mut mid = |a: usize, b: usize,
                       nodes: &mut Vec<[i64; 2]>,
                       parents: &mut Vec<NodeParent>|
         -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let pa = self.nodes[a];
                let pb = self.nodes[b];
                nodes.push([pa[0] + pb[0], pa[1] + pb[1]]);
                parents.push(NodeParent::EdgeMidpoint(key.0, key.1));
                nodes.len() - 1
            })
        };

        for &[a, b, c] in &self.triangles {
            let mab = mid(a, b, &mut nodes, &mut parents);
            let mbc = mid(b, c, &mut nodes, &mut parents);
            let mca = mid(c, a, &mut nodes, &mut parents);
            triangles.push([a, mab, mca]);
            triangles.push([mab, b, mbc]);
            triangles.push([mca, mbc, c]);
            triangles.push([mab, mbc, mca]);
        }

        // renumber row-major: midpoints were appended after the copied
        // nodes, and row-major indices keep nodal sweeps and assembled
        // matrices memory-local
        let mut perm: Vec<usize> = (0..nodes.len()).collect();
        perm.sort_by_key(|&i| (nodes[i][1], nodes[i][0]));
        let mut inv = vec![0usize; nodes.len()];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let nodes = perm.iter().map(|&old| nodes[old]).collect();
        let parents = perm.iter().map(|&old| parents[old]).collect();
        for tri in triangles.iter_mut() {
            for v in tri.iter_mut() {
                *v = inv[*v];
            }
        }

        let t = Triangulation {
            nodes,
            triangles,
            level: self.level + 1,
            denom: self.denom * 2,
            width: self.width,
            height: self.height,
            cell_units: self.cell_units,
        };
        (t, parents)
    }

    /// Pixel column/row containing a scaled coordinate, with boundary ties
    /// broken toward the smaller index.
    pub(crate) fn pixel_of_scaled(num: i64, denom: i64, limit: u32) -> u32 {
        let p = if num <= 0 {
            0
        } else if num % denom == 0 {
            num / denom - 1
        } else {
            num / denom
        };
        (p.max(0) as u64).min((limit - 1) as u64) as u32
    }

    /// Row-major lattice position to node index lookup, for structured grids.
    /// Refinement appends midpoint nodes after the copied ones, so node
    /// indices do not follow the lattice layout on their own.
    pub fn lattice_node_map(&self) -> Option<Vec<usize>> {
        let cu = self.cell_units?;
        let (nx, ny) = self.grid_dims()?;
        let mut map = vec![usize::MAX; nx * ny];
        for (i, p) in self.nodes.iter().enumerate() {
            if p[0] % cu != 0 || p[1] % cu != 0 {
                return None;
            }
            let gx = (p[0] / cu) as usize;
            let gy = (p[1] / cu) as usize;
            map[gy * nx + gx] = i;
        }
        if map.iter().any(|&i| i == usize::MAX) {
            return None;
        }
        Some(map)
    }

    /// Evaluates a nodal (P1) field at an arbitrary point of a structured
    /// grid. Coordinates are given in units of `1 / (2 * denom)` pixels so
    /// that pixel centers are representable for any level. `lattice` comes
    /// from [`Triangulation::lattice_node_map`].
    pub(crate) fn eval_nodal_half_units<S: Scalar>(
        &self,
        lattice: &[usize],
        x_half: i64,
        y_half: i64,
        field: &[S],
    ) -> S {
        let cu2 = 2 * self.cell_units.expect("point evaluation requires structured grid");
        let (nx, ny) = self.grid_dims().unwrap();
        let (cells_x, cells_y) = (nx as i64 - 1, ny as i64 - 1);
        let clamp = |v: i64, hi: i64| v.max(0).min(hi);
        let cell_i = clamp(x_half / cu2, cells_x - 1);
        let cell_j = clamp(y_half / cu2, cells_y - 1);
        let fx = x_half - cell_i * cu2;
        let fy = y_half - cell_j * cu2;
        let at = |i: i64, j: i64| lattice[(j as usize) * nx + i as usize];
        let a = at(cell_i, cell_j);
        let b = at(cell_i + 1, cell_j);
        let d = at(cell_i + 1, cell_j + 1);
        let c = at(cell_i, cell_j + 1);
        let cu_s = S::lit(cu2 as f64);
        let fx_s = S::lit(fx as f64) / cu_s;
        let fy_s = S::lit(fy as f64) / cu_s;
        if fx >= fy {
            // triangle [a, b, d]: barycentrics (1-fx, fx-fy, fy)
            (S::one() - fx_s) * field[a] + (fx_s - fy_s) * field[b] + fy_s * field[d]
        } else {
            // triangle [a, d, c]: barycentrics (1-fy, fx, fy-fx)
            (S::one() - fy_s) * field[a] + fx_s * field[d] + (fy_s - fx_s) * field[c]
        }
    }
}

/// Origin of a node under one refinement step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeParent {
    /// Same node on the coarser level.
    Vertex(usize),
    /// Midpoint of a coarser-level edge, endpoints sorted.
    EdgeMidpoint(usize, usize),
}

/// Sparse fine-grid trace of a coarse nodal basis function: the values of the
/// piecewise-linear hat at every finest-level node inside its support.
#[derive(Debug, Clone)]
pub struct BasisFootprint<S> {
    pub level: usize,
    pub node: usize,
    /// `(finest node index, coefficient)`, sorted by index, coefficients in (0, 1].
    pub entries: Vec<(usize, S)>,
}

#[derive(Debug)]
struct ChildMap {
    offsets: Vec<usize>,
    /// `(child node on level l+1, halved)`; `halved` marks edge-midpoint
    /// children, which receive half the parent value from each endpoint.
    entries: Vec<(usize, bool)>,
}

impl ChildMap {
    fn build(n_parent: usize, parents: &[NodeParent]) -> Self {
        let mut counts = vec![0usize; n_parent + 1];
        for p in parents {
            match p {
                NodeParent::Vertex(i) => counts[i + 1] += 1,
                NodeParent::EdgeMidpoint(i, j) => {
                    counts[i + 1] += 1;
                    counts[j + 1] += 1;
                }
            }
        }
        for i in 0..n_parent {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut cursor = offsets.clone();
        let mut entries = vec![(0usize, false); *offsets.last().unwrap()];
        for (child, p) in parents.iter().enumerate() {
            match p {
                NodeParent::Vertex(i) => {
                    entries[cursor[*i]] = (child, false);
                    cursor[*i] += 1;
                }
                NodeParent::EdgeMidpoint(i, j) => {
                    entries[cursor[*i]] = (child, true);
                    cursor[*i] += 1;
                    entries[cursor[*j]] = (child, true);
                    cursor[*j] += 1;
                }
            }
        }
        Self { offsets, entries }
    }

    fn children(&self, parent: usize) -> &[(usize, bool)] {
        &self.entries[self.offsets[parent]..self.offsets[parent + 1]]
    }
}

/// Nested triangulations, coarsest first, with parent maps linking each
/// refined level to the one below it.
#[derive(Debug)]
pub struct GridHierarchy {
    levels: Vec<Triangulation>,
    /// `parents[l]` describes level `l` nodes in terms of level `l-1`;
    /// `parents[0]` is empty.
    parents: Vec<Vec<NodeParent>>,
    child_maps: Vec<ChildMap>,
}

impl GridHierarchy {
    pub fn build(base: Triangulation, extra_levels: usize) -> Result<Self, MeshError> {
        Self::build_with_budget(base, extra_levels, DEFAULT_NODE_BUDGET)
    }

    pub fn build_with_budget(
        base: Triangulation,
        extra_levels: usize,
        node_budget: usize,
    ) -> Result<Self, MeshError> {
        // A refinement adds one node per edge: n' = n + e, e = (3t + b)/2
        // with b boundary edges; bounded above by n + 3t/2 + n.
        let mut levels = vec![base];
        let mut parents: Vec<Vec<NodeParent>> = vec![Vec::new()];
        let mut child_maps = Vec::new();
        for _ in 0..extra_levels {
            let cur = levels.last().unwrap();
            let needed = cur.n_nodes() + count_edges(cur);
            if needed > node_budget {
                return Err(MeshError::NodeBudgetExceeded { needed, budget: node_budget });
            }
            let (next, pmap) = cur.refine_with_parents();
            child_maps.push(ChildMap::build(cur.n_nodes(), &pmap));
            parents.push(pmap);
            levels.push(next);
        }
        Ok(Self { levels, parents, child_maps })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// Level by 0-based index, coarsest first.
    pub fn level(&self, idx: usize) -> &Triangulation {
        &self.levels[idx]
    }

    pub fn finest(&self) -> &Triangulation {
        self.levels.last().unwrap()
    }

    pub fn finest_index(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn parents(&self, level: usize) -> &[NodeParent] {
        &self.parents[level]
    }

    /// The fine-grid trace of the hat function of `node` on `level`
    /// (0-based). On the finest level this is the single entry `(node, 1)`.
    pub fn footprint<S: Scalar>(
        &self,
        level: usize,
        node: usize,
    ) -> Result<BasisFootprint<S>, MeshError> {
        if level >= self.levels.len() {
            return Err(MeshError::LevelOutOfRange { level, count: self.levels.len() });
        }
        if node >= self.levels[level].n_nodes() {
            return Err(MeshError::NodeOutOfRange { level, node });
        }
        // Interpolating a P1 function on a nested refinement is exact: copied
        // nodes keep their value, midpoints average the edge endpoints. All
        // values are dyadic, so the arithmetic below is exact in either
        // scalar type for any practical level count.
        let mut cur: Vec<(usize, S)> = vec![(node, S::one())];
        let mut scratch: Vec<(usize, S)> = Vec::new();
        for l in level..self.finest_index() {
            let cm = &self.child_maps[l];
            scratch.clear();
            for &(i, v) in &cur {
                for &(child, halved) in cm.children(i) {
                    let w = if halved { v * S::lit(0.5) } else { v };
                    scratch.push((child, w));
                }
            }
            scratch.sort_unstable_by_key(|&(i, _)| i);
            cur.clear();
            for &(i, v) in scratch.iter() {
                match cur.last_mut() {
                    Some(last) if last.0 == i => last.1 += v,
                    _ => cur.push((i, v)),
                }
            }
        }
        cur.retain(|&(_, v)| v > S::zero());
        Ok(BasisFootprint { level, node, entries: cur })
    }

    /// Exact nesting check: every node of `level` appears on `level + 1`.
    pub fn is_nested(&self, level: usize) -> bool {
        if level + 1 >= self.levels.len() {
            return true;
        }
        self.parents[level + 1]
            .iter()
            .filter(|p| matches!(p, NodeParent::Vertex(_)))
            .count()
            == self.levels[level].n_nodes()
    }
}

fn count_edges(t: &Triangulation) -> usize {
    let mut edges: BTreeMap<(usize, usize), ()> = BTreeMap::new();
    for tri in t.triangles() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            edges.insert((a.min(b), a.max(b)), ());
        }
    }
    edges.len()
}
