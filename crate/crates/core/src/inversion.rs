//! Paired-solution stability experiments and reconstruction from boundary
//! traces.
//!
//! The difference `u = u₁ - u₂` is integrated from its own forced system
//! `ρ₁ u'' + Δ²u + γu' = -(ρ₁ - ρ₂) u₂''` alongside `u₂`, with `u₂''` taken
//! from the equation at the step midpoint. Because the midpoint rule is
//! linear, `u + u₂` reproduces a direct run of `u₁` to round-off, which every
//! experiment checks.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::biharmonic::{energy, spectrum, ClampedOperator};
use crate::error::{Error, Result};
use crate::evolution::{acceleration, simulate, BoundaryRecord, RunOptions, Simulation};
use crate::fields::{make_density, DensityField, Inclusion, InitialData};

/// Relative contrast `∥ρ₁ - ρ₂∥∞ / ρ_min` from which rows are flagged as
/// outside the linearization regime.
pub const LARGE_CONTRAST: f64 = 1.0;

/// One parameter triple `(ρ, f, g)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub rho: DensityField,
    pub data: InitialData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub gamma: f64,
    pub t: f64,
    pub dt: f64,
    pub rho_diff_inf: f64,
    pub f_diff_h4: f64,
    pub g_diff_l2: f64,
    pub j: f64,
    /// `max_t ∥u₂''(t)∥` over stored times and step midpoints.
    pub m_observed: f64,
    /// The same maximum over stored times only.
    pub m_observed_nodes: f64,
    pub ratio_thm1: f64,
    /// Present only when `g₁ = g₂`.
    pub ratio_thm2: Option<f64>,
    pub e0_diff: f64,
    /// `max_t ∥(u + u₂) - u₁∥∞ / max_t ∥u₁∥∞`.
    pub consistency_residual: f64,
    /// `max_t E_diff(t) / (2E_diff(0) + M²∥ρ∥∞²T²/(2ρ_min))`; at most 1 when
    /// the uniform bound holds.
    pub uniform_bound_ratio: f64,
    /// `E_diff(0)`.
    pub energy_chain_lhs: f64,
    /// `γ∫∥v∥² + ∥ρ∥∞ M √(2/ρ_min) ∫E^{1/2} + E_diff(T)`.
    pub energy_chain_rhs: f64,
    pub large_contrast: bool,
}

impl StabilityReport {
    pub fn uniform_bound_holds(&self) -> bool {
        self.uniform_bound_ratio <= 1.0
    }

    pub fn energy_chain_holds(&self) -> bool {
        self.energy_chain_lhs <= self.energy_chain_rhs * (1.0 + 1e-12)
    }
}

fn normalized_ratio(num: f64, gamma: f64, j: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if j == 0.0 {
        f64::INFINITY
    } else {
        num / ((1.0 + gamma).sqrt() * j.sqrt())
    }
}

fn sup(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    (1..times.len()).map(|k| 0.5 * (times[k] - times[k - 1]) * (values[k] + values[k - 1])).sum()
}

/// Runs `u₂`, the forced difference system and a direct `u₁` in lockstep.
pub fn difference_experiment(
    op: &ClampedOperator,
    p1: &Params,
    p2: &Params,
    gamma: f64,
    t: f64,
    dt: f64,
) -> Result<StabilityReport> {
    let n = op.grid().len();
    for len in [p1.rho.values().len(), p2.rho.values().len(), p1.data.f.len(), p2.data.f.len()] {
        if len != n {
            return Err(Error::ShapeMismatch { expected: n, got: len });
        }
    }
    let diff = p1.data.combine(1.0, &p2.data, -1.0);
    let rho_diff: Vec<f64> = p1.rho.values().iter().zip(p2.rho.values()).map(|(a, b)| a - b).collect();
    let rho_diff_inf = sup(&rho_diff);
    let rho_min = p1.rho.rho_min().min(p2.rho.rho_min());

    let opts = RunOptions::default();
    let mut sim2 = Simulation::new(op, &p2.rho, gamma, &p2.data, t, dt, opts)?;
    let mut sim = Simulation::new(op, &p1.rho, gamma, &diff, t, dt, opts)?;
    let mut sim1 = Simulation::new(op, &p1.rho, gamma, &p1.data, t, dt, opts)?;

    let accel_norm =
        |u: &[f64], v: &[f64]| -> Result<f64> { Ok(op.l2_norm(&acceleration(op, &p2.rho, gamma, u, v, None)?)) };
    let mut m_nodes = accel_norm(&sim2.state().u, &sim2.state().v)?;
    let mut m_mid = 0.0f64;
    let mismatch = |a: &Simulation, b: &Simulation, c: &Simulation| {
        let (u, u2, u1) = (&a.state().u, &b.state().u, &c.state().u);
        (0..u.len()).map(|i| (u[i] + u2[i] - u1[i]).abs()).fold(0.0, f64::max)
    };
    let mut worst_mismatch = mismatch(&sim, &sim2, &sim1);
    let mut u1_scale = sup(&sim1.state().u);

    while !sim2.is_finished() {
        let mid = sim2.advance(None)?;
        let a2 = acceleration(op, &p2.rho, gamma, &mid.mid_u, &mid.mid_v, None)?;
        m_mid = m_mid.max(op.l2_norm(&a2));
        let source: Vec<f64> = rho_diff.iter().zip(&a2).map(|(r, a)| -r * a).collect();
        sim.advance(Some(&source))?;
        sim1.advance(None)?;
        m_nodes = m_nodes.max(accel_norm(&sim2.state().u, &sim2.state().v)?);
        worst_mismatch = worst_mismatch.max(mismatch(&sim, &sim2, &sim1));
        u1_scale = u1_scale.max(sup(&sim1.state().u));
    }

    let m_observed = m_nodes.max(m_mid);
    let trace = sim.energy();
    let j = sim.record().j;
    let e0_diff = trace.e[0];
    let k_term = m_observed * m_observed / (2.0 * rho_min) * rho_diff_inf * rho_diff_inf * t * t;
    let bound = 2.0 * e0_diff + k_term;
    let e_max = trace.e.iter().copied().fold(0.0, f64::max);
    let uniform_bound_ratio = if bound > 0.0 {
        e_max / bound
    } else if e_max > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let sqrt_e: Vec<f64> = trace.e.iter().map(|e| e.sqrt()).collect();
    let energy_chain_rhs = trace.dissipated.last().copied().unwrap_or(0.0)
        + rho_diff_inf * m_observed * (2.0 / rho_min).sqrt() * trapezoid(&trace.times, &sqrt_e)
        + trace.e.last().copied().unwrap_or(0.0);

    let f_diff_h4 = op.h4_norm(&diff.f)?;
    let g_diff_l2 = op.l2_norm(&diff.g);
    Ok(StabilityReport {
        gamma,
        t,
        dt: sim.dt(),
        rho_diff_inf,
        f_diff_h4,
        g_diff_l2,
        j,
        m_observed,
        m_observed_nodes: m_nodes,
        ratio_thm1: normalized_ratio(rho_diff_inf, gamma, j),
        ratio_thm2: (g_diff_l2 == 0.0).then(|| normalized_ratio(f_diff_h4, gamma, j)),
        e0_diff,
        consistency_residual: if u1_scale > 0.0 { worst_mismatch / u1_scale } else { worst_mismatch },
        uniform_bound_ratio,
        energy_chain_lhs: e0_diff,
        energy_chain_rhs,
        large_contrast: rho_diff_inf >= LARGE_CONTRAST * rho_min,
    })
}

/// One row of a stability scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub contrast: f64,
    pub report: StabilityReport,
}

/// Difference experiments for every `(ρ₁ variant, γ)` pair against a fixed
/// base `(ρ₂, f₂, g₂)`. Every variant starts from `data1`.
pub fn stability_scan(
    op: &ClampedOperator,
    base: &Params,
    data1: &InitialData,
    variants: &[(f64, DensityField)],
    gammas: &[f64],
    t: f64,
    dt: f64,
) -> Result<Vec<ScanRow>> {
    if variants.is_empty() || gammas.is_empty() {
        return Err(Error::InvalidParameter("stability scan needs at least one contrast and one damping value".into()));
    }
    let jobs: Vec<(f64, &DensityField, f64)> =
        variants.iter().flat_map(|(c, r)| gammas.iter().map(move |&g| (*c, r, g))).collect();
    jobs.par_iter()
        .map(|&(contrast, rho1, gamma)| {
            let p1 = Params { rho: rho1.clone(), data: data1.clone() };
            let report = difference_experiment(op, &p1, base, gamma, t, dt)?;
            Ok(ScanRow { contrast, report })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialTimeEstimate {
    /// `∥Δ²f∥`.
    pub lhs: f64,
    /// `∥ρ₁∥∞ ∥u''(0)∥ + ∥ρ∥∞ ∥u₂''(0)∥`.
    pub rhs_pointwise: f64,
    pub g_l2: f64,
    pub rho_diff_inf: f64,
    /// `lhs / (∥g∥ + ∥ρ∥∞)` when the denominator is nonzero.
    pub c1: Option<f64>,
    pub zero_denominator: bool,
}

/// Both sides of the `t = 0` estimate, with accelerations from the equation.
pub fn initial_time_estimates(
    op: &ClampedOperator,
    p1: &Params,
    p2: &Params,
    gamma: f64,
) -> Result<InitialTimeEstimate> {
    let diff = p1.data.combine(1.0, &p2.data, -1.0);
    let rho_diff: Vec<f64> = p1.rho.values().iter().zip(p2.rho.values()).map(|(a, b)| a - b).collect();
    let a2 = acceleration(op, &p2.rho, gamma, &p2.data.f, &p2.data.g, None)?;
    let source: Vec<f64> = rho_diff.iter().zip(&a2).map(|(r, a)| -r * a).collect();
    let a = acceleration(op, &p1.rho, gamma, &diff.f, &diff.g, Some(&source))?;
    let bil = op.bilaplacian(&diff.f)?;
    let lhs = op.l2_norm(&bil);
    let rho_diff_inf = sup(&rho_diff);
    let rhs_pointwise = p1.rho.rho_max() * op.l2_norm(&a) + rho_diff_inf * op.l2_norm(&a2);
    let g_l2 = op.l2_norm(&diff.g);
    let denom = g_l2 + rho_diff_inf;
    Ok(InitialTimeEstimate {
        lhs,
        rhs_pointwise,
        g_l2,
        rho_diff_inf,
        c1: (denom > 0.0).then(|| lhs / denom),
        zero_denominator: denom == 0.0,
    })
}

/// `∫₀ᵀ ∫_∂Ω (|Δa - Δb|² + |∂nΔa - ∂nΔb|²) dS dt`.
pub fn trace_misfit(a: &BoundaryRecord, b: &BoundaryRecord) -> Result<f64> {
    record_inner(a, b, -1.0, a, b, -1.0)
}

fn check_compatible(a: &BoundaryRecord, b: &BoundaryRecord) -> Result<()> {
    if a.times.len() != b.times.len() || a.quadrature.len() != b.quadrature.len() {
        return Err(Error::ShapeMismatch {
            expected: a.times.len() * a.quadrature.len(),
            got: b.times.len() * b.quadrature.len(),
        });
    }
    if a.times.iter().zip(&b.times).any(|(x, y)| (x - y).abs() > 1e-9 * x.abs().max(1.0)) {
        return Err(Error::InvalidParameter("boundary records are sampled at different times".into()));
    }
    Ok(())
}

/// Time-trapezoid, surface-weighted inner product of `(x + sx·y)` and `(p + sp·q)`.
fn record_inner(
    x: &BoundaryRecord,
    y: &BoundaryRecord,
    sx: f64,
    p: &BoundaryRecord,
    q: &BoundaryRecord,
    sp: f64,
) -> Result<f64> {
    check_compatible(x, y)?;
    check_compatible(x, p)?;
    check_compatible(x, q)?;
    let level = |k: usize| -> f64 {
        x.quadrature
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let l = (x.trace_lap[k][i] + sx * y.trace_lap[k][i]) * (p.trace_lap[k][i] + sp * q.trace_lap[k][i]);
                let n = (x.trace_nlap[k][i] + sx * y.trace_nlap[k][i]) * (p.trace_nlap[k][i] + sp * q.trace_nlap[k][i]);
                w * (l + n)
            })
            .sum()
    };
    let values: Vec<f64> = (0..x.times.len()).map(level).collect();
    Ok(trapezoid(&x.times, &values))
}

fn zero_like(r: &BoundaryRecord) -> BoundaryRecord {
    BoundaryRecord {
        times: r.times.clone(),
        trace_lap: r.trace_lap.iter().map(|t| vec![0.0; t.len()]).collect(),
        trace_nlap: r.trace_nlap.iter().map(|t| vec![0.0; t.len()]).collect(),
        quadrature: r.quadrature.clone(),
        j: 0.0,
    }
}

/// Adds `η · rms · N(0, 1)` to every trace value, with separate RMS levels
/// for the two traces and a fixed seed. `J` is recomputed.
pub fn add_trace_noise(record: &BoundaryRecord, eta: f64, seed: u64) -> BoundaryRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rms = |tr: &[Vec<f64>]| {
        let count: usize = tr.iter().map(Vec::len).sum();
        (tr.iter().flatten().map(|x| x * x).sum::<f64>() / count.max(1) as f64).sqrt()
    };
    let (rl, rn) = (rms(&record.trace_lap), rms(&record.trace_nlap));
    let mut out = record.clone();
    for (lap, nlap) in out.trace_lap.iter_mut().zip(out.trace_nlap.iter_mut()) {
        for x in lap.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x += eta * rl * z;
        }
        for x in nlap.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x += eta * rn * z;
        }
    }
    out.j = out.recompute_j();
    out
}

/// Restricts a record computed on the once-refined grid to the boundary
/// nodes of `coarse`.
pub fn restrict_record(
    fine: &BoundaryRecord,
    fine_op: &ClampedOperator,
    coarse_op: &ClampedOperator,
) -> Result<BoundaryRecord> {
    let (fg, cg) = (fine_op.grid(), coarse_op.grid());
    let mut position = vec![usize::MAX; fg.len()];
    for (k, b) in fg.boundary().iter().enumerate() {
        position[b.node] = k;
    }
    let map: Vec<usize> = cg
        .boundary()
        .iter()
        .map(|b| {
            let idx = cg.multi_index(b.node);
            let fine_idx = [2 * idx[0], if cg.dimension() == 2 { 2 * idx[1] } else { 0 }];
            let node = fg.node_at(fine_idx);
            position
                .get(node)
                .copied()
                .filter(|&p| p != usize::MAX)
                .ok_or_else(|| Error::InvalidParameter("fine record does not come from the refined grid".into()))
        })
        .collect::<Result<_>>()?;
    if fine.quadrature.len() != fg.boundary().len() {
        return Err(Error::ShapeMismatch { expected: fg.boundary().len(), got: fine.quadrature.len() });
    }
    let pick = |tr: &Vec<Vec<f64>>| tr.iter().map(|row| map.iter().map(|&k| row[k]).collect()).collect();
    let mut out = BoundaryRecord {
        times: fine.times.clone(),
        trace_lap: pick(&fine.trace_lap),
        trace_nlap: pick(&fine.trace_nlap),
        quadrature: cg.boundary().iter().map(|b| b.weight).collect(),
        j: 0.0,
    };
    out.j = out.recompute_j();
    Ok(out)
}

/// Known quantities for the scalar-contrast density inversion.
#[derive(Debug, Clone)]
pub struct DensityProblem<'a> {
    pub op: &'a ClampedOperator,
    pub rho0: f64,
    pub inclusion: Inclusion,
    pub data: &'a InitialData,
    pub gamma: f64,
    pub t: f64,
    pub dt: f64,
}

impl DensityProblem<'_> {
    pub fn forward(&self, rho1: f64) -> Result<BoundaryRecord> {
        let rho = make_density(self.op.grid(), self.rho0, rho1, &self.inclusion)?;
        Ok(simulate(self.op, &rho, self.gamma, self.data, self.t, self.dt, None, RunOptions::default())?.record)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensitySearch {
    pub lo: f64,
    pub hi: f64,
    pub tol: f64,
    /// Equispaced samples used to bracket the minimum.
    pub samples: usize,
}

impl DensitySearch {
    pub fn new(lo: f64, hi: f64, tol: f64) -> Self {
        Self { lo, hi, tol, samples: 9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub rho1_hat: f64,
    pub misfit: f64,
    /// Every evaluated `(ρ₁, misfit)` pair, sorted by `ρ₁`.
    pub curve: Vec<(f64, f64)>,
    pub unimodal: bool,
    pub warnings: Vec<String>,
}

/// Coarse sampling to bracket the misfit minimum, then golden-section search
/// down to `tol`.
pub fn reconstruct_density(
    observed: &BoundaryRecord,
    problem: &DensityProblem<'_>,
    search: &DensitySearch,
) -> Result<DensityEstimate> {
    let DensitySearch { lo, hi, tol, samples } = *search;
    if !(lo > 0.0 && hi > lo && tol > 0.0) || samples < 3 {
        return Err(Error::InvalidParameter(format!(
            "density search [{lo}, {hi}] with tolerance {tol} and {samples} samples"
        )));
    }
    let misfit = |rho1: f64| -> Result<f64> { trace_misfit(&problem.forward(rho1)?, observed) };
    let xs: Vec<f64> = (0..samples).map(|k| lo + (hi - lo) * k as f64 / (samples - 1) as f64).collect();
    let ys: Vec<f64> = xs.par_iter().map(|&x| misfit(x)).collect::<Result<_>>()?;
    let best = (0..samples).min_by(|&a, &b| ys[a].total_cmp(&ys[b])).unwrap();
    if best == 0 || best == samples - 1 {
        return Err(Error::NonBracketing { lo, hi });
    }
    let descending = ys[..=best].windows(2).all(|w| w[1] <= w[0]);
    let ascending = ys[best..].windows(2).all(|w| w[1] >= w[0]);
    let unimodal = descending && ascending;
    let mut warnings = Vec::new();
    if !unimodal {
        warnings.push("misfit samples are not unimodal; golden-section refines around the best sample".to_string());
    }

    let mut curve: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (xs[best - 1], xs[best + 1]);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (misfit(c)?, misfit(d)?);
    curve.push((c, fc));
    curve.push((d, fd));
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = misfit(c)?;
            curve.push((c, fc));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = misfit(d)?;
            curve.push((d, fd));
        }
    }
    let mid = 0.5 * (a + b);
    let fm = misfit(mid)?;
    curve.push((mid, fm));
    curve.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (rho1_hat, misfit_hat) = if fm <= ys[best] { (mid, fm) } else { (xs[best], ys[best]) };
    Ok(DensityEstimate { rho1_hat, misfit: misfit_hat, curve, unimodal, warnings })
}

/// Known quantities for modal recovery of the initial displacement.
#[derive(Debug, Clone)]
pub struct InitialProblem<'a> {
    pub op: &'a ClampedOperator,
    pub rho: &'a DensityField,
    pub g: &'a [f64],
    pub gamma: f64,
    pub t: f64,
    pub dt: f64,
}

impl InitialProblem<'_> {
    fn forward(&self, f: &[f64], g: &[f64]) -> Result<BoundaryRecord> {
        let data = InitialData::new(f.to_vec(), g.to_vec(), "basis response");
        Ok(simulate(self.op, self.rho, self.gamma, &data, self.t, self.dt, None, RunOptions::default())?.record)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialEstimate {
    pub coefficients: Vec<f64>,
    /// `f̂ = Σ c_j φ_j` on all nodes.
    pub f_hat: Vec<f64>,
    /// Relative misfit of the fitted record.
    pub residual: f64,
    /// Smallest over largest eigenvalue of the Gram matrix.
    pub gram_condition: f64,
    pub rank_deficient: bool,
}

/// Regularized least squares over the first `k` eigenmodes. The forward map
/// is affine in `f`, so the response to `(0, g)` is subtracted first and the
/// normal equations use the `J` inner product of boundary records.
pub fn reconstruct_initial(
    observed: &BoundaryRecord,
    problem: &InitialProblem<'_>,
    k: usize,
    reg: f64,
) -> Result<InitialEstimate> {
    if !(reg >= 0.0) {
        return Err(Error::InvalidParameter(format!("regularization {reg} must be nonnegative")));
    }
    let n = problem.op.grid().len();
    let modes = spectrum(problem.op, problem.rho, k)?;
    let zero = vec![0.0; n];
    let offset =
        if problem.g.iter().any(|&x| x != 0.0) { problem.forward(&zero, problem.g)? } else { zero_like(observed) };
    let responses: Vec<BoundaryRecord> =
        modes.par_iter().map(|p| problem.forward(&p.mode, &zero)).collect::<Result<_>>()?;
    let empty = zero_like(observed);

    let mut gram = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    for i in 0..k {
        for j in 0..=i {
            let v = record_inner(&responses[i], &empty, 0.0, &responses[j], &empty, 0.0)?;
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
        rhs[i] = record_inner(&responses[i], &empty, 0.0, observed, &offset, -1.0)?;
    }
    let eig = SymmetricEigen::new(gram.clone());
    let emax = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
    let emin = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let gram_condition = if emax > 0.0 { emin / emax } else { 0.0 };
    let rank_deficient = gram_condition < 1e-12;

    let mut system = gram.clone();
    for i in 0..k {
        system[(i, i)] += reg;
    }
    let c = match system.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => system
            .svd(true, true)
            .solve(&rhs, 1e-14 * emax.max(f64::MIN_POSITIVE))
            .map_err(|e| Error::SolverBreakdown { reason: e.to_string(), residual: f64::NAN })?,
    };

    // ∥Σ c_j r_j - (obs - offset)∥² = cᵀGc - 2cᵀb + ∥obs - offset∥²
    let data_sq = record_inner(observed, &offset, -1.0, observed, &offset, -1.0)?;
    let fit_sq = (c.transpose() * &gram * &c)[(0, 0)] - 2.0 * c.dot(&rhs) + data_sq;
    let residual = if data_sq > 0.0 { (fit_sq.max(0.0) / data_sq).sqrt() } else { fit_sq.max(0.0).sqrt() };

    let coefficients: Vec<f64> = c.iter().copied().collect();
    let mut f_hat = vec![0.0; n];
    for (cj, p) in coefficients.iter().zip(&modes) {
        f_hat.iter_mut().zip(&p.mode).for_each(|(f, m)| *f += cj * m);
    }
    Ok(InitialEstimate { coefficients, f_hat, residual, gram_condition, rank_deficient })
}

/// Energy of the difference at `t = 0`, for callers building their own tables.
pub fn difference_energy(op: &ClampedOperator, p1: &Params, p2: &Params) -> Result<f64> {
    let d = p1.data.combine(1.0, &p2.data, -1.0);
    Ok(energy(op, &p1.rho, &d.f, &d.g)?.e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{make_initial_data, Family};
    use crate::grid::build_grid;

    fn setup(n: usize) -> ClampedOperator {
        ClampedOperator::new(&build_grid(2, &[1.0, 1.0], &[n, n], &[0.5, 0.5]).unwrap())
    }

    fn disk() -> Inclusion {
        Inclusion::Disk { center: vec![0.5, 0.5], radius: 0.25 }
    }

    fn bump_params(op: &ClampedOperator, rho1: f64) -> Params {
        let rho = make_density(op.grid(), 1.0, rho1, &disk()).unwrap();
        let data = make_initial_data(op, &rho, &Family::Bump { amplitude: 1.0 }).unwrap();
        Params { rho, data }
    }

    #[test]
    fn identical_parameters_give_zero_difference() {
        let op = setup(9);
        let p = bump_params(&op, 1.5);
        let r = difference_experiment(&op, &p, &p, 1.0, 0.2, 5e-3).unwrap();
        assert_eq!(r.rho_diff_inf, 0.0);
        assert_eq!(r.j, 0.0);
        assert_eq!(r.ratio_thm1, 0.0);
        assert_eq!(r.ratio_thm2, Some(0.0));
        assert!(r.uniform_bound_holds());
    }

    #[test]
    fn difference_matches_direct_run_and_satisfies_bounds() {
        let op = setup(9);
        let p1 = bump_params(&op, 1.5);
        let p2 = bump_params(&op, 1.0);
        let r = difference_experiment(&op, &p1, &p2, 1.0, 0.3, 5e-3).unwrap();
        assert!(r.consistency_residual < 1e-10, "{}", r.consistency_residual);
        assert!(r.j > 0.0 && r.ratio_thm1.is_finite());
        assert!(r.uniform_bound_holds(), "{}", r.uniform_bound_ratio);
        assert!(r.energy_chain_holds());
        assert!(r.m_observed >= r.m_observed_nodes);
        assert!(!r.large_contrast);
    }

    #[test]
    fn scan_rejects_empty_lists_and_covers_all_pairs() {
        let op = setup(9);
        let base = bump_params(&op, 1.0);
        let v = vec![(0.5, make_density(op.grid(), 1.0, 1.5, &disk()).unwrap())];
        assert!(stability_scan(&op, &base, &base.data, &[], &[0.0], 0.1, 1e-2).is_err());
        assert!(stability_scan(&op, &base, &base.data, &v, &[], 0.1, 1e-2).is_err());
        let rows = stability_scan(&op, &base, &base.data, &v, &[0.0, 1.0], 0.1, 1e-2).unwrap();
        assert_eq!(rows.len(), 2);
    }

    #[test]
    fn initial_estimate_flags_zero_denominator() {
        let op = setup(9);
        let p = bump_params(&op, 1.0);
        let e = initial_time_estimates(&op, &p, &p, 0.5).unwrap();
        assert!(e.zero_denominator && e.c1.is_none());
        let q = bump_params(&op, 2.0);
        let e = initial_time_estimates(&op, &q, &p, 0.5).unwrap();
        assert!(e.c1.is_some() && e.lhs == 0.0);
    }

    #[test]
    fn misfit_and_noise_behave() {
        let op = setup(9);
        let p = bump_params(&op, 1.0);
        let rec = simulate(&op, &p.rho, 0.5, &p.data, 0.2, 1e-2, None, RunOptions::default()).unwrap().record;
        assert_eq!(trace_misfit(&rec, &rec).unwrap(), 0.0);
        let quiet = add_trace_noise(&rec, 0.0, 3);
        assert_eq!(quiet.trace_lap, rec.trace_lap);
        let a = add_trace_noise(&rec, 0.1, 3);
        let b = add_trace_noise(&rec, 0.1, 3);
        assert_eq!(a, b);
        let m = trace_misfit(&a, &rec).unwrap();
        assert!(m > 0.0 && (m - trace_misfit(&rec, &a).unwrap()).abs() < 1e-15);
        assert!((trace_misfit(&rec, &zero_like(&rec)).unwrap() - rec.j).abs() < 1e-12 * rec.j);
    }

    #[test]
    fn density_is_recovered_from_clean_data() {
        let op = setup(9);
        let truth = bump_params(&op, 1.6);
        let problem =
            DensityProblem { op: &op, rho0: 1.0, inclusion: disk(), data: &truth.data, gamma: 0.5, t: 0.5, dt: 1e-2 };
        let observed = problem.forward(1.6).unwrap();
        let est = reconstruct_density(&observed, &problem, &DensitySearch::new(0.5, 3.0, 1e-4)).unwrap();
        assert!((est.rho1_hat - 1.6).abs() < 1e-3, "{}", est.rho1_hat);
        let err = reconstruct_density(&observed, &problem, &DensitySearch::new(2.0, 3.0, 1e-3));
        assert!(matches!(err, Err(Error::NonBracketing { .. })));
    }

    #[test]
    fn modal_coefficients_are_recovered() {
        let op = setup(9);
        let rho = DensityField::constant(op.grid(), 1.0).unwrap();
        let modes = spectrum(&op, &rho, 3).unwrap();
        let coeffs = [0.7, -0.2, 0.4];
        let mut f = vec![0.0; op.grid().len()];
        for (c, m) in coeffs.iter().zip(&modes) {
            f.iter_mut().zip(&m.mode).for_each(|(x, y)| *x += c * y);
        }
        let g: Vec<f64> = modes[0].mode.iter().map(|x| 0.3 * x).collect();
        let problem = InitialProblem { op: &op, rho: &rho, g: &g, gamma: 0.5, t: 0.5, dt: 1e-2 };
        let observed = problem.forward(&f, &g).unwrap();
        let est = reconstruct_initial(&observed, &problem, 3, 0.0).unwrap();
        for (a, b) in est.coefficients.iter().zip(coeffs) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        assert!(est.residual < 1e-6 && !est.rank_deficient);
    }

    #[test]
    fn restriction_picks_coarse_boundary_nodes() {
        let coarse = setup(5);
        let fine = ClampedOperator::new(&coarse.grid().refined().unwrap());
        let rec = BoundaryRecord {
            times: vec![0.0],
            trace_lap: vec![fine
                .grid()
                .boundary()
                .iter()
                .map(|b| fine.grid().coord(b.node, 0) + 10.0 * fine.grid().coord(b.node, 1))
                .collect()],
            trace_nlap: vec![vec![1.0; fine.grid().boundary().len()]],
            quadrature: fine.grid().boundary().iter().map(|b| b.weight).collect(),
            j: 0.0,
        };
        let r = restrict_record(&rec, &fine, &coarse).unwrap();
        for (k, b) in coarse.grid().boundary().iter().enumerate() {
            let want = coarse.grid().coord(b.node, 0) + 10.0 * coarse.grid().coord(b.node, 1);
            assert!((r.trace_lap[0][k] - want).abs() < 1e-12);
        }
        assert!(restrict_record(&rec, &coarse, &coarse).is_err());
    }
}
