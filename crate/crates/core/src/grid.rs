//! Uniform tensor grids on intervals and axis-aligned rectangles.
//!
//! Nodes are numbered in row-major order with axis 0 varying fastest, so in
//! 2D node `(ix, iy)` has index `iy * nx + ix`. Every node on the outer layer
//! is a boundary node; the clamped conditions live there.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum node count per axis. The bilaplacian stencil and the one-sided
/// trace formulas both need three interior layers next to each side.
pub const MIN_NODES_PER_AXIS: usize = 5;

/// A boundary node together with the geometric data the trace quadrature needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryNode {
    /// Node index in the full grid.
    pub node: usize,
    /// Axis of the outward normal.
    pub axis: usize,
    /// `+1.0` on the high side of `axis`, `-1.0` on the low side.
    pub sign: f64,
    /// Surface quadrature weight (length in 2D, counting measure in 1D).
    pub weight: f64,
    /// Corner nodes sit on the boundary of more than one axis.
    pub corner: bool,
}

impl BoundaryNode {
    /// Node index `k` layers inward along the normal (`k = 0` is the node itself).
    pub fn inward(&self, grid: &Grid, k: usize) -> usize {
        let step = grid.strides[self.axis] * k;
        if self.sign > 0.0 {
            self.node - step
        } else {
            self.node + step
        }
    }

    /// Spacing along the normal.
    pub fn normal_spacing(&self, grid: &Grid) -> f64 {
        grid.h[self.axis]
    }

    pub fn normal(&self, dimension: usize) -> Vec<f64> {
        let mut n = vec![0.0; dimension];
        n[self.axis] = self.sign;
        n
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dimension: usize,
    extents: Vec<f64>,
    n_nodes: Vec<usize>,
    h: Vec<f64>,
    strides: Vec<usize>,
    interior: Vec<usize>,
    interior_of: Vec<Option<usize>>,
    boundary: Vec<BoundaryNode>,
    x0: Vec<f64>,
    diam: f64,
    c0: f64,
}

impl Grid {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents
    }

    pub fn n_nodes(&self) -> &[usize] {
        &self.n_nodes
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn len(&self) -> usize {
        self.interior_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interior_of.is_empty()
    }

    /// Interior node indices in increasing order.
    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    /// Position of `node` in the interior ordering, if it is interior.
    pub fn interior_index(&self, node: usize) -> Option<usize> {
        self.interior_of[node]
    }

    pub fn boundary(&self) -> &[BoundaryNode] {
        &self.boundary
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.interior_of[node].is_none()
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn diam(&self) -> f64 {
        self.diam
    }

    /// Star-shape margin `min (x - x0)·n` for the grid's own base point.
    pub fn c0(&self) -> f64 {
        self.c0
    }

    /// Per-axis node indices of `node` (unused axes are zero).
    pub fn multi_index(&self, node: usize) -> [usize; 2] {
        let mut idx = [0usize; 2];
        let mut rem = node;
        for a in (0..self.dimension).rev() {
            idx[a] = rem / self.strides[a];
            rem %= self.strides[a];
        }
        idx
    }

    pub fn node_at(&self, idx: [usize; 2]) -> usize {
        (0..self.dimension).map(|a| idx[a] * self.strides[a]).sum()
    }

    pub fn coord(&self, node: usize, axis: usize) -> f64 {
        self.multi_index(node)[axis] as f64 * self.h[axis]
    }

    pub fn point(&self, node: usize) -> Vec<f64> {
        (0..self.dimension).map(|a| self.coord(node, a)).collect()
    }

    /// Tensor trapezoid weight of `node`: the cell volume, halved once per
    /// axis on which the node sits at an end.
    pub fn volume_weight(&self, node: usize) -> f64 {
        let idx = self.multi_index(node);
        (0..self.dimension)
            .map(|a| if idx[a] == 0 || idx[a] + 1 == self.n_nodes[a] { 0.5 * self.h[a] } else { self.h[a] })
            .product()
    }

    /// Volume weight shared by every interior node.
    pub fn cell_volume(&self) -> f64 {
        self.h.iter().product()
    }

    /// Trapezoid weights for every node.
    pub fn volume_weights(&self) -> Vec<f64> {
        (0..self.len()).map(|n| self.volume_weight(n)).collect()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dimension && point.iter().zip(&self.extents).all(|(&p, &l)| p >= 0.0 && p <= l)
    }

    pub fn contains_strictly(&self, point: &[f64]) -> bool {
        point.len() == self.dimension && point.iter().zip(&self.extents).all(|(&p, &l)| p > 0.0 && p < l)
    }

    /// Grid with the same domain and every spacing halved.
    pub fn refined(&self) -> Result<Grid> {
        let n: Vec<usize> = self.n_nodes.iter().map(|&n| 2 * (n - 1) + 1).collect();
        build_grid(self.dimension, &self.extents, &n, &self.x0)
    }
}

/// Builds a uniform grid on `[0, L_0] x ... ` with base point `x0`.
pub fn build_grid(dimension: usize, extents: &[f64], n_nodes: &[usize], x0: &[f64]) -> Result<Grid> {
    if !(1..=2).contains(&dimension) {
        return Err(Error::InvalidParameter(format!("dimension must be 1 or 2, got {dimension}")));
    }
    if extents.len() != dimension || n_nodes.len() != dimension || x0.len() != dimension {
        return Err(Error::InvalidParameter(format!("extents, n_nodes and x0 must all have {dimension} entries")));
    }
    if let Some(&l) = extents.iter().find(|&&l| !(l > 0.0 && l.is_finite())) {
        return Err(Error::InvalidParameter(format!("extent must be positive, got {l}")));
    }
    for (axis, &nodes) in n_nodes.iter().enumerate() {
        if nodes < MIN_NODES_PER_AXIS {
            return Err(Error::TooFewNodes { axis, nodes, min: MIN_NODES_PER_AXIS });
        }
    }

    let h: Vec<f64> = extents.iter().zip(n_nodes).map(|(&l, &n)| l / (n - 1) as f64).collect();
    let mut strides = vec![1usize; dimension];
    for a in 1..dimension {
        strides[a] = strides[a - 1] * n_nodes[a - 1];
    }
    let total: usize = n_nodes.iter().product();

    let mut grid = Grid {
        dimension,
        extents: extents.to_vec(),
        n_nodes: n_nodes.to_vec(),
        h,
        strides,
        interior: Vec::new(),
        interior_of: vec![None; total],
        boundary: Vec::new(),
        x0: x0.to_vec(),
        diam: extents.iter().map(|l| l * l).sum::<f64>().sqrt(),
        c0: 0.0,
    };
    if !grid.contains_strictly(x0) {
        return Err(Error::PointOutsideDomain { point: x0.to_vec() });
    }

    for node in 0..total {
        let idx = grid.multi_index(node);
        let on_axis: Vec<usize> = (0..dimension).filter(|&a| idx[a] == 0 || idx[a] + 1 == n_nodes[a]).collect();
        if on_axis.is_empty() {
            grid.interior_of[node] = Some(grid.interior.len());
            grid.interior.push(node);
            continue;
        }
        // Corners take the normal of their lowest boundary axis; their
        // weight collects the half trapezoid weights of every adjacent side.
        let axis = on_axis[0];
        let sign = if idx[axis] == 0 { -1.0 } else { 1.0 };
        let weight: f64 = on_axis
            .iter()
            .map(|&a| {
                (0..dimension)
                    .filter(|&b| b != a)
                    .map(|b| if idx[b] == 0 || idx[b] + 1 == n_nodes[b] { 0.5 * grid.h[b] } else { grid.h[b] })
                    .product::<f64>()
            })
            .sum();
        grid.boundary.push(BoundaryNode { node, axis, sign, weight, corner: on_axis.len() > 1 });
    }
    grid.c0 = margin(&grid, x0);
    Ok(grid)
}

fn margin(grid: &Grid, x0: &[f64]) -> f64 {
    grid.boundary.iter().map(|b| b.sign * (grid.coord(b.node, b.axis) - x0[b.axis])).fold(f64::INFINITY, f64::min)
}

/// `min over boundary nodes of (x - x0)·n(x)` for an arbitrary interior `x0`.
pub fn star_shape_margin(grid: &Grid, x0: &[f64]) -> Result<f64> {
    if !grid.contains_strictly(x0) {
        return Err(Error::PointOutsideDomain { point: x0.to_vec() });
    }
    Ok(margin(grid, x0))
}

/// Lower bound `2 diam / sqrt(rho_min)` on the observation horizon; callers
/// must choose a horizon strictly above it.
pub fn min_observation_time(grid: &Grid, rho_min: f64) -> Result<f64> {
    if !(rho_min > 0.0) {
        return Err(Error::NonPositiveDensity(rho_min));
    }
    Ok(2.0 * grid.diam() / rho_min.sqrt())
}
