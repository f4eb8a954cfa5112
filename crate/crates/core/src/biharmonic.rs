//! Discrete Laplacian and clamped bilaplacian, boundary traces, energies and
//! the dense spectrum oracle.
//!
//! The bilaplacian is `L ∘ L`, where the outer application sees Laplacian
//! values on boundary nodes computed with a mirror ghost (`u_{-1} = u_1`,
//! the centered form of `∂u/∂n = 0`). On clamped fields this gives
//!
//! ```text
//! B = D^2 + diag(2 / h_a^4 for each side adjacent to the node)
//! ```
//!
//! with `D` the Dirichlet 5-point (3-point in 1D) Laplacian. Together with
//! the halved trapezoid weights on boundary nodes this makes the discrete
//! Green identity `<B u, v>_h = <L u, L v>_h` hold to round-off.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{DensityField, InitialData};
use crate::grid::Grid;
use crate::linalg::CsrMatrix;

/// Largest interior dimension accepted by the dense eigensolver.
pub const DENSE_EIGEN_LIMIT: usize = 4096;

/// Clamped bilaplacian on a fixed grid. Immutable after assembly.
#[derive(Debug, Clone)]
pub struct ClampedOperator {
    grid: Grid,
    matrix: CsrMatrix,
    weights: Vec<f64>,
}

/// Boundary Cauchy data, ordered like [`Grid::boundary`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Traces {
    /// `Δu` on boundary nodes.
    pub lap: Vec<f64>,
    /// Outward normal derivative of `Δu` on boundary nodes.
    pub nlap: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyValue {
    /// `kinetic + bending`.
    pub e: f64,
    /// `½ ∫ ρ |v|²`.
    pub kinetic: f64,
    /// `½ ∫ |Δu|²`.
    pub bending: f64,
    /// `∥Δ²u∥² + ∥√ρ v∥²`.
    pub h_norm_sq: f64,
}

impl EnergyValue {
    /// `⟨Δ²u, u⟩ + ∥√ρ v∥² = 2E`: the norm in which the discrete generator
    /// is dissipative.
    pub fn energy_norm_sq(&self) -> f64 {
        2.0 * self.e
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub lambda: f64,
    /// Mode on all nodes (zero on the boundary), `∥√ρ φ∥ = 1`.
    pub mode: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormBounds {
    pub c1_est: f64,
    pub c2_est: f64,
    pub ratios: Vec<f64>,
}

impl ClampedOperator {
    pub fn new(grid: &Grid) -> Self {
        let grid = grid.clone();
        let matrix = assemble(&grid);
        let weights = grid.volume_weights();
        Self { grid, matrix, weights }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Assembled interior bilaplacian.
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// Trapezoid weights for every node.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn interior_dim(&self) -> usize {
        self.grid.interior().len()
    }

    pub fn gather(&self, u: &[f64]) -> Vec<f64> {
        self.grid.interior().iter().map(|&n| u[n]).collect()
    }

    pub fn scatter(&self, u_int: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.grid.len()];
        for (k, &n) in self.grid.interior().iter().enumerate() {
            u[n] = u_int[k];
        }
        u
    }

    /// `B u` on interior vectors.
    pub fn apply_interior(&self, u_int: &[f64]) -> Vec<f64> {
        self.matrix.mul(u_int)
    }

    fn check_len(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.grid.len() {
            return Err(Error::ShapeMismatch { expected: self.grid.len(), got: u.len() });
        }
        Ok(())
    }

    /// Centered Laplacian. Interior nodes use boundary values directly;
    /// boundary nodes use the mirror ghost of the clamped closure.
    pub fn laplacian(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u)?;
        let g = &self.grid;
        let mut w = vec![0.0; g.len()];
        for (node, out) in w.iter_mut().enumerate() {
            let idx = g.multi_index(node);
            let mut acc = 0.0;
            for a in 0..g.dimension() {
                let s = g.strides()[a];
                let (lo, hi) = if idx[a] == 0 {
                    (u[node + s], u[node + s])
                } else if idx[a] + 1 == g.n_nodes()[a] {
                    (u[node - s], u[node - s])
                } else {
                    (u[node - s], u[node + s])
                };
                let h = g.h()[a];
                acc += (lo - 2.0 * u[node] + hi) / (h * h);
            }
            *out = acc;
        }
        Ok(w)
    }

    /// `L(L u)` at interior nodes, zero on the boundary.
    pub fn bilaplacian(&self, u: &[f64]) -> Result<Vec<f64>> {
        let w = self.laplacian(u)?;
        let g = &self.grid;
        let mut out = vec![0.0; g.len()];
        for &node in g.interior() {
            let mut acc = 0.0;
            for a in 0..g.dimension() {
                let s = g.strides()[a];
                let h = g.h()[a];
                acc += (w[node - s] - 2.0 * w[node] + w[node + s]) / (h * h);
            }
            out[node] = acc;
        }
        Ok(out)
    }

    /// Boundary traces `Δu` and `∂n Δu` from the interior Laplacian field.
    ///
    /// Along each inward normal line the interior Laplacian values
    /// `w1, w2, w3` are extended quadratically to the boundary, so
    /// `Δu ≈ 3w1 - 3w2 + w3` and `∂_ξ Δu ≈ (-5w1 + 8w2 - 3w3) / 2h` with `ξ`
    /// the inward distance. Corners extrapolate along the adjacent side
    /// whose values were filled first.
    pub fn boundary_traces(&self, u: &[f64]) -> Result<Traces> {
        let w = self.laplacian(u)?;
        Ok(self.traces_from_laplacian(&w))
    }

    pub(crate) fn traces_from_laplacian(&self, w: &[f64]) -> Traces {
        let g = &self.grid;
        let nb = g.boundary().len();
        let mut ext = w.to_vec();
        let mut lap = vec![0.0; nb];
        let mut nlap = vec![0.0; nb];
        for pass_corners in [false, true] {
            for (k, b) in g.boundary().iter().enumerate() {
                if b.corner != pass_corners {
                    continue;
                }
                let w1 = ext[b.inward(g, 1)];
                let w2 = ext[b.inward(g, 2)];
                let w3 = ext[b.inward(g, 3)];
                let h = b.normal_spacing(g);
                lap[k] = 3.0 * w1 - 3.0 * w2 + w3;
                nlap[k] = -(-5.0 * w1 + 8.0 * w2 - 3.0 * w3) / (2.0 * h);
                ext[b.node] = lap[k];
            }
        }
        Traces { lap, nlap }
    }

    /// Trapezoid inner product over all nodes.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weights.iter().zip(a.iter().zip(b)).map(|(w, (x, y))| w * x * y).sum()
    }

    pub fn l2_norm(&self, u: &[f64]) -> f64 {
        self.inner(u, u).sqrt()
    }

    /// `(∫ ρ u²)^{1/2}`.
    pub fn weighted_norm(&self, rho: &DensityField, u: &[f64]) -> f64 {
        self.weights.iter().zip(rho.values().iter().zip(u)).map(|(w, (r, x))| w * r * x * x).sum::<f64>().sqrt()
    }

    /// Discrete `H⁴` proxy `(∥u∥² + ∥Δu∥² + ∥Δ²u∥²)^{1/2}`.
    pub fn h4_norm(&self, u: &[f64]) -> Result<f64> {
        let lap = self.laplacian(u)?;
        let bil = self.bilaplacian(u)?;
        Ok((self.inner(u, u) + self.inner(&lap, &lap) + self.inner(&bil, &bil)).sqrt())
    }
}

fn assemble(grid: &Grid) -> CsrMatrix {
    let dim = grid.dimension();
    let interior = grid.interior();
    // Dirichlet Laplacian on interior nodes.
    let d_rows: Vec<Vec<(usize, f64)>> = interior
        .iter()
        .map(|&node| {
            let mut row = Vec::with_capacity(2 * dim + 1);
            let mut diag = 0.0;
            for a in 0..dim {
                let s = grid.strides()[a];
                let c = 1.0 / (grid.h()[a] * grid.h()[a]);
                diag -= 2.0 * c;
                for nb in [node - s, node + s] {
                    if let Some(j) = grid.interior_index(nb) {
                        row.push((j, c));
                    }
                }
            }
            row.push((grid.interior_index(node).unwrap(), diag));
            row
        })
        .collect();
    let d = CsrMatrix::from_rows(d_rows);

    let rows = interior
        .iter()
        .enumerate()
        .map(|(i, &node)| {
            let mut row: Vec<(usize, f64)> = Vec::new();
            for (k, dik) in d.row(i) {
                for (j, dkj) in d.row(k) {
                    row.push((j, dik * dkj));
                }
            }
            let idx = grid.multi_index(node);
            let mut extra = 0.0;
            for a in 0..dim {
                let h4 = grid.h()[a].powi(4);
                if idx[a] == 1 {
                    extra += 2.0 / h4;
                }
                if idx[a] + 2 == grid.n_nodes()[a] {
                    extra += 2.0 / h4;
                }
            }
            row.push((i, extra));
            row
        })
        .collect();
    CsrMatrix::from_rows(rows)
}

/// Energy `E = ½∫(ρ|v|² + |Δu|²)` with trapezoid quadrature, plus the
/// `∥Δ²u∥² + ∥√ρ v∥²` norm.
pub fn energy(op: &ClampedOperator, rho: &DensityField, u: &[f64], v: &[f64]) -> Result<EnergyValue> {
    op.check_len(v)?;
    let lap = op.laplacian(u)?;
    let bil = op.bilaplacian(u)?;
    let kinetic_sq = op.weighted_norm(rho, v).powi(2);
    let kinetic = 0.5 * kinetic_sq;
    let bending = 0.5 * op.inner(&lap, &lap);
    let h_norm_sq = op.inner(&bil, &bil) + kinetic_sq;
    Ok(EnergyValue { e: kinetic + bending, kinetic, bending, h_norm_sq })
}

/// Empirical norm-equivalence constants over an ensemble:
/// min and max of `∥(f,g)∥_H² / (∥f∥²_{H⁴,h} + ∥g∥²)`.
pub fn norm_equivalence_bounds(
    op: &ClampedOperator,
    rho: &DensityField,
    ensemble: &[InitialData],
) -> Result<NormBounds> {
    let mut ratios = Vec::with_capacity(ensemble.len());
    for d in ensemble {
        let e = energy(op, rho, &d.f, &d.g)?;
        let denom = op.h4_norm(&d.f)?.powi(2) + op.inner(&d.g, &d.g);
        if denom > 0.0 {
            ratios.push(e.h_norm_sq / denom);
        }
    }
    if ratios.is_empty() {
        return Err(Error::EmptyEnsemble("no nonzero member in norm-equivalence ensemble".into()));
    }
    let c1_est = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let c2_est = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(NormBounds { c1_est, c2_est, ratios })
}

/// First `k` eigenpairs of `Δ²_h φ = λ ρ φ`, ascending, `∥√ρ φ∥ = 1`.
///
/// Sign convention: the largest-magnitude entry of each mode is positive.
pub fn spectrum(op: &ClampedOperator, rho: &DensityField, k: usize) -> Result<Vec<EigenPair>> {
    let n = op.interior_dim();
    if n > DENSE_EIGEN_LIMIT {
        return Err(Error::GridTooLarge { interior: n, limit: DENSE_EIGEN_LIMIT });
    }
    if k == 0 || k > n {
        return Err(Error::TooManyModes { requested: k, available: n });
    }
    let r = op.gather(rho.values());
    let s: Vec<f64> = r.iter().map(|x| 1.0 / x.sqrt()).collect();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for (j, b) in op.matrix().row(i) {
            m[(i, j)] = s[i] * b * s[j];
        }
    }
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let cell = op.grid().cell_volume();
    let pairs = order
        .into_iter()
        .take(k)
        .map(|c| {
            let col = eig.eigenvectors.column(c);
            let mut phi: Vec<f64> = (0..n).map(|i| s[i] * col[i]).collect();
            let norm = (cell * phi.iter().zip(&r).map(|(p, r)| r * p * p).sum::<f64>()).sqrt();
            let pivot = phi.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            let scale = pivot.signum() / norm;
            phi.iter_mut().for_each(|p| *p *= scale);
            EigenPair { lambda: eig.eigenvalues[c], mode: op.scatter(&phi) }
        })
        .collect();
    Ok(pairs)
}
