//! Image data, its projection onto the mesh hierarchy, and the region
//! averages and fitting terms that drive the segmentation.
//!
//! Pixel values are treated as piecewise constant over each pixel; carrying
//! them to finer grids copies values and never interpolates, so no spurious
//! gradients are created.

use thiserror::Error;

use crate::fem::DiagonalMatrix;
use crate::mesh::{GridHierarchy, Triangulation};
use crate::scalar::Scalar;
use crate::simplex::PhaseField;

#[derive(Debug, Error)]
pub enum FidelityError {
    #[error("image dimensions must be positive, got {width}x{height}")]
    InvalidDimensions { width: u32, height: u32 },
    #[error("image needs at least one channel")]
    NoChannels,
    #[error("channel {channel} has {got} values, expected {expected}")]
    PlaneSizeMismatch { channel: usize, expected: usize, got: usize },
    #[error("pixel value {value} outside [0, 1] (channel {channel}, index {index})")]
    ValueOutOfRange { channel: usize, index: usize, value: f64 },
    #[error("mesh covers {mesh_width}x{mesh_height} px but image is {width}x{height}")]
    IncompatibleMesh { mesh_width: u32, mesh_height: u32, width: u32, height: u32 },
    #[error("field has {got} components, expected {expected}")]
    ComponentMismatch { expected: usize, got: usize },
}

/// A multi-channel pixel field with values in `[0, 1]`, one plane per channel.
#[derive(Debug, Clone)]
pub struct ImageData<S> {
    width: u32,
    height: u32,
    planes: Vec<Vec<S>>,
}

impl<S: Scalar> ImageData<S> {
    pub fn new(width: u32, height: u32, planes: Vec<Vec<S>>) -> Result<Self, FidelityError> {
        if width == 0 || height == 0 {
            return Err(FidelityError::InvalidDimensions { width, height });
        }
        if planes.is_empty() {
            return Err(FidelityError::NoChannels);
        }
        let expected = (width as usize) * (height as usize);
        for (channel, plane) in planes.iter().enumerate() {
            if plane.len() != expected {
                return Err(FidelityError::PlaneSizeMismatch {
                    channel,
                    expected,
                    got: plane.len(),
                });
            }
            for (index, &v) in plane.iter().enumerate() {
                if !(S::zero()..=S::one()).contains(&v) {
                    return Err(FidelityError::ValueOutOfRange {
                        channel,
                        index,
                        value: v.to_f64_lossy(),
                    });
                }
            }
        }
        Ok(Self { width, height, planes })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    pub fn plane(&self, channel: usize) -> &[S] {
        &self.planes[channel]
    }

    pub fn pixel(&self, channel: usize, x: u32, y: u32) -> S {
        self.planes[channel][(y * self.width + x) as usize]
    }
}

/// How pixel values are attached to the finest mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMode {
    /// Each fine node takes the value of the pixel containing it, boundary
    /// ties broken toward the smaller (row, column).
    ByNode,
    /// Each fine triangle takes the value of the pixel containing its
    /// barycenter; nodal values are then the mass-weighted per-node averages
    /// of the incident triangles (the weak representation of the data).
    BySimplex,
}

/// The image carried onto the finest grid.
#[derive(Debug, Clone)]
pub struct MeshImage<S> {
    mode: ProjectionMode,
    channels: usize,
    node_values: Vec<Vec<S>>,
    tri_values: Option<Vec<Vec<S>>>,
}

impl<S: Scalar> MeshImage<S> {
    pub fn mode(&self) -> ProjectionMode {
        self.mode
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn n_nodes(&self) -> usize {
        self.node_values[0].len()
    }

    /// Per-node values of one channel. In by-simplex mode these are the
    /// weak (lumped-mass-weighted) nodal averages used by the fitting terms.
    pub fn nodal_channel(&self, channel: usize) -> &[S] {
        &self.node_values[channel]
    }

    /// Per-triangle values, present in by-simplex mode only.
    pub fn triangle_channel(&self, channel: usize) -> Option<&[S]> {
        self.tri_values.as_ref().map(|t| t[channel].as_slice())
    }

    /// Mean across channels per node, used for initialization.
    pub fn nodal_luminance(&self) -> Vec<S> {
        let n = self.n_nodes();
        let inv = S::one() / S::lit(self.channels as f64);
        (0..n)
            .map(|i| self.node_values.iter().map(|p| p[i]).sum::<S>() * inv)
            .collect()
    }

    pub fn channel_range(&self, channel: usize) -> (S, S) {
        let mut lo = S::infinity();
        let mut hi = S::neg_infinity();
        for &v in &self.node_values[channel] {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

/// Carries the pixel data onto the finest level of the hierarchy.
pub fn project_image<S: Scalar>(
    img: &ImageData<S>,
    hierarchy: &GridHierarchy,
    mode: ProjectionMode,
) -> Result<MeshImage<S>, FidelityError> {
    let fine = hierarchy.finest();
    if fine.width() != img.width() || fine.height() != img.height() {
        return Err(FidelityError::IncompatibleMesh {
            mesh_width: fine.width(),
            mesh_height: fine.height(),
            width: img.width(),
            height: img.height(),
        });
    }
    let channels = img.channels();
    match mode {
        ProjectionMode::ByNode => {
            let mut node_values = vec![Vec::with_capacity(fine.n_nodes()); channels];
            for i in 0..fine.n_nodes() {
                let p = fine.node_scaled(i);
                let px = Triangulation::pixel_of_scaled(p[0], fine.denom(), img.width());
                let py = Triangulation::pixel_of_scaled(p[1], fine.denom(), img.height());
                for (c, plane) in node_values.iter_mut().enumerate() {
                    plane.push(img.pixel(c, px, py));
                }
            }
            Ok(MeshImage { mode, channels, node_values, tri_values: None })
        }
        ProjectionMode::BySimplex => {
            let denom3 = 3 * fine.denom();
            let mut tri_values = vec![Vec::with_capacity(fine.n_triangles()); channels];
            for t in 0..fine.n_triangles() {
                let tri = fine.triangle(t);
                let mut bx = 0i64;
                let mut by = 0i64;
                for &v in &tri {
                    let p = fine.node_scaled(v);
                    bx += p[0];
                    by += p[1];
                }
                let px = Triangulation::pixel_of_scaled(bx, denom3, img.width());
                let py = Triangulation::pixel_of_scaled(by, denom3, img.height());
                for (c, plane) in tri_values.iter_mut().enumerate() {
                    plane.push(img.pixel(c, px, py));
                }
            }
            // weak nodal representation: per node, the exact integral of the
            // piecewise-constant data against its hat, over the hat mass
            let third = S::lit(1.0 / 3.0);
            let mut num = vec![vec![S::zero(); fine.n_nodes()]; channels];
            let mut mass = vec![S::zero(); fine.n_nodes()];
            for t in 0..fine.n_triangles() {
                let share = fine.triangle_area::<S>(t) * third;
                for &v in &fine.triangle(t) {
                    mass[v] += share;
                    for c in 0..channels {
                        num[c][v] += share * tri_values[c][t];
                    }
                }
            }
            let node_values = num
                .into_iter()
                .map(|plane| {
                    plane
                        .iter()
                        .zip(&mass)
                        .map(|(&n, &m)| n / m)
                        .collect::<Vec<S>>()
                })
                .collect();
            Ok(MeshImage { mode, channels, node_values, tri_values: Some(tri_values) })
        }
    }
}

/// Mass-weighted per-component channel averages.
#[derive(Debug, Clone)]
pub struct RegionAverages<S> {
    n_components: usize,
    channels: usize,
    c: Vec<S>,
}

impl<S: Scalar> RegionAverages<S> {
    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn get(&self, component: usize, channel: usize) -> S {
        self.c[component * self.channels + channel]
    }

    pub fn values(&self) -> &[S] {
        &self.c
    }
}

/// Computes `c[i][j]`, the average of channel `j` over the support of
/// component `i`.
///
/// By-node mode weighs nodal data with the lumped mass; by-simplex mode uses
/// the exact per-triangle integrals of the piecewise-constant data in the
/// numerator. A component whose mass drops below `1e-14 * |domain|` keeps its
/// previous average (or falls back to the global channel mean on the first
/// call).
pub fn region_averages<S: Scalar>(
    u: &PhaseField<S>,
    img: &MeshImage<S>,
    mass: &DiagonalMatrix<S>,
    prev: Option<&RegionAverages<S>>,
) -> RegionAverages<S> {
    let n_comp = u.n_components();
    let channels = img.channels();
    let total_area = mass.total();
    let vanish = S::lit(1e-14) * total_area;

    // global channel means as first-call fallback for vanished components
    let global: Vec<S> = (0..channels)
        .map(|c| {
            let num: S = img
                .nodal_channel(c)
                .iter()
                .zip(mass.entries())
                .map(|(&v, &m)| v * m)
                .sum();
            num / total_area
        })
        .collect();

    let mut out = vec![S::zero(); n_comp * channels];
    for i in 0..n_comp {
        let ui = u.component(i);
        let denom: S = ui.iter().zip(mass.entries()).map(|(&v, &m)| v * m).sum();
        for j in 0..channels {
            let value = if denom < vanish {
                match prev {
                    Some(p) => p.get(i, j),
                    None => global[j],
                }
            } else {
                let num: S = ui
                    .iter()
                    .zip(img.nodal_channel(j).iter().zip(mass.entries()))
                    .map(|(&uv, (&iv, &m))| uv * iv * m)
                    .sum();
                let (lo, hi) = img.channel_range(j);
                (num / denom).max(lo).min(hi)
            };
            out[i * channels + j] = value;
        }
    }
    RegionAverages { n_components: n_comp, channels, c: out }
}

/// Per-node fitting values `F[i](x) = sum_j (I_j(x) - c[i][j])^2`.
pub fn fitting_values<S: Scalar>(
    img: &MeshImage<S>,
    averages: &RegionAverages<S>,
) -> Vec<Vec<S>> {
    let n = img.n_nodes();
    let channels = img.channels();
    let mut out = vec![vec![S::zero(); n]; averages.n_components()];
    for (i, field) in out.iter_mut().enumerate() {
        for j in 0..channels {
            let c_ij = averages.get(i, j);
            for (f, &v) in field.iter_mut().zip(img.nodal_channel(j)) {
                let d = v - c_ij;
                *f += d * d;
            }
        }
    }
    out
}
