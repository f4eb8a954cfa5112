//! Reaction-bilaplacian solves `(Δ²_h + diag(c)) u = F` and the resolvent
//! of the first-order generator `A(u, v) = (v, -ρ⁻¹(Δ²u + γv))`.

use serde::{Deserialize, Serialize};

use crate::biharmonic::{energy, ClampedOperator};
use crate::error::{Error, Result};
use crate::fields::{DensityField, InitialData};
use crate::linalg::{conjugate_gradient, norm, BandedCholesky, CsrMatrix, DIRECT_SOLVE_LIMIT};

/// Relative residual required from every reaction solve.
pub const SOLVE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    /// Banded Cholesky up to [`DIRECT_SOLVE_LIMIT`] unknowns, CG above.
    #[default]
    Auto,
    Direct,
    Iterative,
}

/// Norm on displacement-velocity pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateNorm {
    /// `∥Δ²u∥² + ∥√ρ v∥²`.
    Bilaplacian,
    /// `⟨Δ²u, u⟩ + ∥√ρ v∥² = ∥Δu∥² + ∥√ρ v∥²`.
    Energy,
}

pub fn state_norm(op: &ClampedOperator, rho: &DensityField, u: &[f64], v: &[f64], which: StateNorm) -> Result<f64> {
    let e = energy(op, rho, u, v)?;
    Ok(match which {
        StateNorm::Bilaplacian => e.h_norm_sq.sqrt(),
        StateNorm::Energy => e.energy_norm_sq().sqrt(),
    })
}

#[derive(Debug, Clone)]
enum Factor {
    Direct(BandedCholesky),
    Iterative,
}

/// Factored `Δ²_h + diag(c)` on interior nodes; reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct ReactionSolver {
    op: ClampedOperator,
    matrix: CsrMatrix,
    factor: Factor,
}

impl ReactionSolver {
    /// `c` holds one coefficient per grid node; boundary entries are ignored.
    pub fn new(op: &ClampedOperator, c: &[f64], choice: SolverChoice) -> Result<Self> {
        let grid = op.grid();
        if c.len() != grid.len() {
            return Err(Error::ShapeMismatch { expected: grid.len(), got: c.len() });
        }
        let c_int = op.gather(c);
        if let Some(bad) = c_int.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "reaction coefficient {bad} is not a finite nonnegative number"
            )));
        }
        let matrix = op.matrix().plus_diagonal(&c_int);
        let direct = match choice {
            SolverChoice::Auto => matrix.dim() <= DIRECT_SOLVE_LIMIT,
            SolverChoice::Direct => true,
            SolverChoice::Iterative => false,
        };
        let factor = if direct { Factor::Direct(BandedCholesky::factor(&matrix)?) } else { Factor::Iterative };
        Ok(Self { op: op.clone(), matrix, factor })
    }

    pub fn operator(&self) -> &ClampedOperator {
        &self.op
    }

    /// Solves on interior vectors and returns the interior solution.
    pub fn solve_interior(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let bnorm = norm(rhs);
        if bnorm == 0.0 {
            return Ok(vec![0.0; rhs.len()]);
        }
        let x = match &self.factor {
            Factor::Direct(chol) => {
                let mut x = rhs.to_vec();
                chol.solve_in_place(&mut x);
                x
            }
            Factor::Iterative => {
                let max_iter = 20 * self.matrix.dim() + 100;
                conjugate_gradient(&self.matrix, rhs, 0.1 * SOLVE_TOLERANCE, max_iter)?.x
            }
        };
        let ax = self.matrix.mul(&x);
        let residual = norm(&ax.iter().zip(rhs).map(|(a, b)| a - b).collect::<Vec<_>>()) / bnorm;
        if !(residual <= SOLVE_TOLERANCE) {
            return Err(Error::SolverBreakdown {
                reason: "reaction solve missed its residual target".into(),
                residual,
            });
        }
        Ok(x)
    }

    /// Solves with `F` given on all nodes; the result vanishes on the boundary.
    pub fn solve(&self, f: &[f64]) -> Result<Vec<f64>> {
        let grid = self.op.grid();
        if f.len() != grid.len() {
            return Err(Error::ShapeMismatch { expected: grid.len(), got: f.len() });
        }
        Ok(self.op.scatter(&self.solve_interior(&self.op.gather(f))?))
    }
}

/// One-shot `(Δ²_h + diag(c)) u = F`.
pub fn solve_reaction_biharmonic(op: &ClampedOperator, c: &[f64], f: &[f64]) -> Result<Vec<f64>> {
    ReactionSolver::new(op, c, SolverChoice::Auto)?.solve(f)
}

#[derive(Debug, Clone)]
pub struct ResolventProblem<'a> {
    pub lambda: f64,
    pub gamma: f64,
    pub rho: &'a DensityField,
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolventSolution {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// `∥(λI - A)(u, v) - y∥_H / ∥y∥_H`.
    pub residual: f64,
}

/// `(λI - A)⁻¹` factored for fixed `λ`, `γ`, `ρ`.
///
/// The reduction eliminates `v = λu - y1` and leaves
/// `(Δ² + λ²ρ + γλ) u = ρ y2 + ρλ y1 + γ y1` with the reaction coefficient
/// assembled per node.
#[derive(Debug, Clone)]
pub struct Resolvent {
    solver: ReactionSolver,
    rho: DensityField,
    lambda: f64,
    gamma: f64,
}

impl Resolvent {
    pub fn new(op: &ClampedOperator, rho: &DensityField, lambda: f64, gamma: f64) -> Result<Self> {
        if !(lambda > 0.0) || !(gamma >= 0.0) {
            return Err(Error::InvalidParameter(format!("resolvent needs λ > 0 and γ ≥ 0, got λ={lambda}, γ={gamma}")));
        }
        let c: Vec<f64> = rho.values().iter().map(|r| lambda * lambda * r + gamma * lambda).collect();
        Ok(Self { solver: ReactionSolver::new(op, &c, SolverChoice::Auto)?, rho: rho.clone(), lambda, gamma })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn apply(&self, y1: &[f64], y2: &[f64]) -> Result<ResolventSolution> {
        let op = self.solver.operator();
        let n = op.grid().len();
        for len in [y1.len(), y2.len()] {
            if len != n {
                return Err(Error::ShapeMismatch { expected: n, got: len });
            }
        }
        let (l, g) = (self.lambda, self.gamma);
        let rho = self.rho.values();
        let f: Vec<f64> = (0..n).map(|i| rho[i] * y2[i] + rho[i] * l * y1[i] + g * y1[i]).collect();
        let u = self.solver.solve(&f)?;
        let v: Vec<f64> = u.iter().zip(y1).map(|(u, y)| l * u - y).collect();

        // (λI - A)(u, v) = (λu - v, λv + ρ⁻¹(Δ²u + γv))
        let bu = op.bilaplacian(&u)?;
        let r1: Vec<f64> = (0..n).map(|i| l * u[i] - v[i] - y1[i]).collect();
        let r2: Vec<f64> = (0..n)
            .map(|i| if op.grid().is_boundary(i) { 0.0 } else { l * v[i] + (bu[i] + g * v[i]) / rho[i] - y2[i] })
            .collect();
        let num = state_norm(op, &self.rho, &r1, &r2, StateNorm::Bilaplacian)?;
        let den = state_norm(op, &self.rho, y1, y2, StateNorm::Bilaplacian)?;
        let residual = if den > 0.0 { num / den } else { num };
        Ok(ResolventSolution { u, v, residual })
    }
}

pub fn solve_resolvent(op: &ClampedOperator, problem: &ResolventProblem<'_>) -> Result<ResolventSolution> {
    Resolvent::new(op, problem.rho, problem.lambda, problem.gamma)?.apply(&problem.y1, &problem.y2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub lambda: f64,
    pub gamma: f64,
    /// `max ∥λ R(λ) y∥ / ∥y∥` in the `∥Δ²u∥² + ∥√ρ v∥²` norm.
    pub resolvent_bound: f64,
    /// Same ratio in the energy norm `∥Δu∥² + ∥√ρ v∥²`.
    pub energy_bound: f64,
    /// Nonzero members actually tested.
    pub tested: usize,
    pub max_residual: f64,
}

/// Largest `∥λ(λI - A)⁻¹ y∥ / ∥y∥` over the nonzero ensemble members.
pub fn contraction_check(
    op: &ClampedOperator,
    rho: &DensityField,
    gamma: f64,
    lambda: f64,
    ensemble: &[InitialData],
) -> Result<ContractionReport> {
    let res = Resolvent::new(op, rho, lambda, gamma)?;
    let mut report =
        ContractionReport { lambda, gamma, resolvent_bound: 0.0, energy_bound: 0.0, tested: 0, max_residual: 0.0 };
    for y in ensemble {
        let yh = state_norm(op, rho, &y.f, &y.g, StateNorm::Bilaplacian)?;
        let ye = state_norm(op, rho, &y.f, &y.g, StateNorm::Energy)?;
        if yh == 0.0 {
            continue;
        }
        let x = res.apply(&y.f, &y.g)?;
        let xh = state_norm(op, rho, &x.u, &x.v, StateNorm::Bilaplacian)?;
        let xe = state_norm(op, rho, &x.u, &x.v, StateNorm::Energy)?;
        report.resolvent_bound = report.resolvent_bound.max(lambda * xh / yh);
        report.energy_bound = report.energy_bound.max(lambda * xe / ye);
        report.max_residual = report.max_residual.max(x.residual);
        report.tested += 1;
    }
    if report.tested == 0 {
        return Err(Error::EmptyEnsemble("contraction check needs a nonzero member".into()));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biharmonic::spectrum;
    use crate::fields::{make_density, make_initial_data, random_ensemble, Family, Inclusion, RandomParts};
    use crate::grid::build_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(n: usize) -> ClampedOperator {
        ClampedOperator::new(&build_grid(2, &[1.0, 1.0], &[n, n], &[0.5, 0.5]).unwrap())
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let op = square(9);
        let n = op.grid().len();
        let u = solve_reaction_biharmonic(&op, &vec![0.0; n], &vec![0.0; n]).unwrap();
        assert!(u.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn eigenmode_is_recovered() {
        let op = square(13);
        let rho = DensityField::constant(op.grid(), 1.0).unwrap();
        let pair = &spectrum(&op, &rho, 1).unwrap()[0];
        let f: Vec<f64> = pair.mode.iter().map(|p| pair.lambda * p).collect();
        let u = solve_reaction_biharmonic(&op, &vec![0.0; f.len()], &f).unwrap();
        assert!(max_diff(&u, &pair.mode) < 1e-9);
    }

    #[test]
    fn random_rhs_residual_direct_and_iterative() {
        let op = square(17);
        let n = op.grid().len();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = vec![1.0; n];
        let direct = ReactionSolver::new(&op, &c, SolverChoice::Direct).unwrap().solve(&f).unwrap();
        let iterative = ReactionSolver::new(&op, &c, SolverChoice::Iterative).unwrap().solve(&f).unwrap();
        let scale = direct.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(max_diff(&direct, &iterative) < 1e-8 * scale);
        let au: Vec<f64> = op.bilaplacian(&direct).unwrap().iter().zip(&direct).map(|(b, u)| b + u).collect();
        let fi = op.gather(&f);
        let r: Vec<f64> = op.gather(&au).iter().zip(&fi).map(|(a, b)| a - b).collect();
        assert!(norm(&r) / norm(&fi) <= 1e-10);
    }

    #[test]
    fn negative_coefficient_rejected() {
        let op = square(9);
        let mut c = vec![0.0; op.grid().len()];
        c[40] = -1.0;
        assert!(matches!(ReactionSolver::new(&op, &c, SolverChoice::Auto), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn resolvent_zero_and_eigenmode() {
        let op = square(13);
        let rho = DensityField::constant(op.grid(), 1.0).unwrap();
        let n = op.grid().len();
        let zero = ResolventProblem { lambda: 1.0, gamma: 0.0, rho: &rho, y1: vec![0.0; n], y2: vec![0.0; n] };
        let s = solve_resolvent(&op, &zero).unwrap();
        assert!(s.u.iter().chain(&s.v).all(|&x| x == 0.0));

        let pair = &spectrum(&op, &rho, 1).unwrap()[0];
        let p = ResolventProblem { lambda: 1.0, gamma: 0.0, rho: &rho, y1: vec![0.0; n], y2: pair.mode.clone() };
        let s = solve_resolvent(&op, &p).unwrap();
        let expect: Vec<f64> = pair.mode.iter().map(|x| x / (1.0 + pair.lambda)).collect();
        assert!(max_diff(&s.u, &expect) < 1e-12);
        assert!(max_diff(&s.v, &expect) < 1e-12);
        assert!(s.residual < 1e-9);
    }

    #[test]
    fn resolvent_residual_with_inclusion() {
        let op = square(17);
        let rho = make_density(op.grid(), 1.0, 2.0, &Inclusion::Disk { center: vec![0.5, 0.5], radius: 0.2 }).unwrap();
        let y = make_initial_data(&op, &rho, &Family::Random { seed: 9, parts: RandomParts::Both }).unwrap();
        let p = ResolventProblem { lambda: 2.0, gamma: 3.0, rho: &rho, y1: y.f.clone(), y2: y.g.clone() };
        let s = solve_resolvent(&op, &p).unwrap();
        assert!(s.residual <= 1e-9, "{}", s.residual);
        let alg: Vec<f64> = s.u.iter().zip(&y.f).map(|(u, y)| 2.0 * u - y).collect();
        assert_eq!(alg, s.v);
    }

    #[test]
    fn resolvent_identity() {
        let op = square(13);
        let rho = make_density(op.grid(), 1.0, 1.5, &Inclusion::Disk { center: vec![0.4, 0.5], radius: 0.2 }).unwrap();
        let y = make_initial_data(&op, &rho, &Family::Random { seed: 2, parts: RandomParts::Both }).unwrap();
        let (l1, l2, gamma) = (0.7, 3.0, 1.0);
        let r1 = Resolvent::new(&op, &rho, l1, gamma).unwrap();
        let r2 = Resolvent::new(&op, &rho, l2, gamma).unwrap();
        let a = r1.apply(&y.f, &y.g).unwrap();
        let b = r2.apply(&y.f, &y.g).unwrap();
        let ab = r2.apply(&a.u, &a.v).unwrap();
        let du: Vec<f64> = a.u.iter().zip(&b.u).map(|(x, y)| x - y).collect();
        let dv: Vec<f64> = a.v.iter().zip(&b.v).map(|(x, y)| x - y).collect();
        let eu: Vec<f64> = du.iter().zip(&ab.u).map(|(d, x)| d - (l2 - l1) * x).collect();
        let ev: Vec<f64> = dv.iter().zip(&ab.v).map(|(d, x)| d - (l2 - l1) * x).collect();
        let err = state_norm(&op, &rho, &eu, &ev, StateNorm::Bilaplacian).unwrap();
        let scale = state_norm(&op, &rho, &du, &dv, StateNorm::Bilaplacian).unwrap();
        assert!(err <= 1e-8 * scale, "{err} vs {scale}");
    }

    #[test]
    fn energy_norm_contraction() {
        let op = square(13);
        let rho = DensityField::constant(op.grid(), 1.0).unwrap();
        let ens = random_ensemble(&op, &rho, 100, 12, RandomParts::Both).unwrap();
        for (gamma, lambda) in [(0.0, 1.0), (10.0, 0.1), (1.0, 10.0)] {
            let r = contraction_check(&op, &rho, gamma, lambda, &ens).unwrap();
            assert!(r.energy_bound <= 1.0 + 1e-8, "{r:?}");
            assert_eq!(r.tested, 12);
        }
    }

    #[test]
    fn zero_members_are_skipped() {
        let op = square(9);
        let rho = DensityField::constant(op.grid(), 1.0).unwrap();
        let zero = vec![InitialData::zero(op.grid())];
        assert!(matches!(contraction_check(&op, &rho, 0.0, 1.0, &zero), Err(Error::EmptyEnsemble(_))));
    }

    #[test]
    fn velocity_only_mode_exceeds_bilaplacian_contraction() {
        let op = square(17);
        let rho = DensityField::constant(op.grid(), 1.0).unwrap();
        let pair = &spectrum(&op, &rho, 1).unwrap()[0];
        let y = InitialData::new(vec![0.0; op.grid().len()], pair.mode.clone(), "velocity mode");
        let lambda = 10.0;
        let r = contraction_check(&op, &rho, 0.0, lambda, &[y]).unwrap();
        let mu = pair.lambda;
        let expected = lambda * ((mu * mu + lambda * lambda).sqrt() / (lambda * lambda + mu));
        let norm = op.l2_norm(&pair.mode);
        assert!(
            (r.resolvent_bound - expected).abs() < 1e-6 * expected,
            "{} vs {expected} (∥φ∥ = {norm})",
            r.resolvent_bound
        );
        assert!(r.resolvent_bound > 1.0);
        assert!(r.energy_bound <= 1.0 + 1e-10);
    }
}
