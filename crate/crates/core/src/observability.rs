//! Boundary observation functional, empirical observability constants and
//! the multiplier-identity diagnostics for the radial field `m = x - x0`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::biharmonic::{energy, ClampedOperator};
use crate::error::{Error, Result};
use crate::evolution::{simulate, BoundaryRecord, RunOptions, State};
use crate::fields::{DensityField, InitialData};
use crate::grid::min_observation_time;

/// `J` recomputed from the stored traces.
pub fn boundary_functional(record: &BoundaryRecord) -> f64 {
    record.recompute_j()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityReport {
    pub e0: f64,
    pub j: f64,
    pub gamma: f64,
    pub t: f64,
    /// `E0 / ((1 + γ) J)`; zero for zero data, infinite if only `J` vanishes.
    pub ratio: f64,
    pub t_min: f64,
    pub time_condition_met: bool,
    pub dt: f64,
}

fn ratio(e0: f64, gamma: f64, j: f64) -> f64 {
    if e0 == 0.0 {
        0.0
    } else if j == 0.0 {
        f64::INFINITY
    } else {
        e0 / ((1.0 + gamma) * j)
    }
}

pub fn observability_ratio(
    op: &ClampedOperator,
    rho: &DensityField,
    gamma: f64,
    data: &InitialData,
    t: f64,
    dt: f64,
) -> Result<ObservabilityReport> {
    let e0 = energy(op, rho, &data.f, &data.g)?.e;
    let run = simulate(op, rho, gamma, data, t, dt, None, RunOptions::default())?;
    let t_min = min_observation_time(op.grid(), rho.rho_min())?;
    Ok(ObservabilityReport {
        e0,
        j: run.record.j,
        gamma,
        t,
        ratio: ratio(e0, gamma, run.record.j),
        t_min,
        time_condition_met: t > t_min,
        dt: run.dt,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimate {
    pub gamma: f64,
    pub t: f64,
    /// Largest ratio over members with positive energy.
    pub c_obs: f64,
    pub per_datum: Vec<ObservabilityReport>,
}

/// Observability ratios over an ensemble, evaluated in parallel.
pub fn estimate_constant(
    op: &ClampedOperator,
    rho: &DensityField,
    gamma: f64,
    ensemble: &[InitialData],
    t: f64,
    dt: f64,
) -> Result<ConstantEstimate> {
    let per_datum: Vec<ObservabilityReport> =
        ensemble.par_iter().map(|d| observability_ratio(op, rho, gamma, d, t, dt)).collect::<Result<_>>()?;
    let c_obs = per_datum.iter().filter(|r| r.e0 > 0.0).map(|r| r.ratio).fold(f64::NEG_INFINITY, f64::max);
    if c_obs == f64::NEG_INFINITY {
        return Err(Error::EmptyEnsemble("every ensemble member has zero energy".into()));
    }
    Ok(ConstantEstimate { gamma, t, c_obs, per_datum })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaScan {
    pub estimates: Vec<ConstantEstimate>,
    /// `max C_obs / min C_obs` across damping values.
    pub spread: f64,
}

pub fn gamma_scan(
    op: &ClampedOperator,
    rho: &DensityField,
    gammas: &[f64],
    ensemble: &[InitialData],
    t: f64,
    dt: f64,
) -> Result<GammaScan> {
    let estimates: Vec<ConstantEstimate> =
        gammas.par_iter().map(|&g| estimate_constant(op, rho, g, ensemble, t, dt)).collect::<Result<_>>()?;
    let max = estimates.iter().map(|e| e.c_obs).fold(f64::NEG_INFINITY, f64::max);
    let min = estimates.iter().map(|e| e.c_obs).fold(f64::INFINITY, f64::min);
    Ok(GammaScan { estimates, spread: max / min })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiplierDiagnostics {
    /// `∫∫ ρ ∂t²u (m·∇u)` with `∂t²u` differenced from the stored velocity.
    pub i1: f64,
    /// `∫∫ Δ²u (m·∇u)`.
    pub i2: f64,
    /// `∫∫ γ ∂tu (m·∇u)`.
    pub i3: f64,
    pub closure: f64,
    /// `|I1 + I2 + I3| / (|I1| + |I2| + |I3|)`.
    pub closure_relative: f64,
    /// `(2 - n/2) ∫∫ |Δu|² - ½ ∫∫_∂Ω (m·n)|Δu|²`.
    pub i2_predicted: f64,
    /// `|I2 - i2_predicted| / |I2|`.
    pub i2_identity_residual: f64,
    /// `½ ∫∫_∂Ω (m·n)|Δu|²`.
    pub boundary_term: f64,
    /// `-(γn/2) ∫∫ |∂tu|²`.
    pub i3_predicted: f64,
    /// `|I3 - i3_predicted| / |i3_predicted|`.
    pub i3_identity_residual: f64,
}

/// Per-time-level integrands (spatial quadrature already applied).
#[derive(Debug, Clone, Copy, Default)]
struct Level {
    i1: f64,
    i2: f64,
    i3: f64,
    lap_sq: f64,
    boundary: f64,
    v_sq: f64,
}

impl Level {
    fn add(&mut self, o: &Level, w: f64) {
        self.i1 += w * o.i1;
        self.i2 += w * o.i2;
        self.i3 += w * o.i3;
        self.lap_sq += w * o.lap_sq;
        self.boundary += w * o.boundary;
        self.v_sq += w * o.v_sq;
    }
}

/// Streaming evaluation of the multiplier integrals from consecutive states
/// at a uniform step. `∂t²u` is the centered difference of the velocity
/// (one-sided second order at both ends), so the closure `I1 + I2 + I3`
/// measures the consistency of the trajectory rather than vanishing by
/// construction.
#[derive(Debug, Clone)]
pub struct MultiplierAccumulator {
    op: ClampedOperator,
    rho: Vec<f64>,
    gamma: f64,
    m: Vec<Vec<f64>>,
    m_dot_n: Vec<f64>,
    recent: Vec<(State, Vec<f64>, Level)>,
    count: usize,
    dt: Option<f64>,
    sums: Level,
}

impl MultiplierAccumulator {
    pub fn new(op: &ClampedOperator, rho: &DensityField, gamma: f64) -> Self {
        let grid = op.grid();
        let x0 = grid.x0().to_vec();
        let m = (0..grid.len())
            .map(|n| grid.point(n).iter().zip(&x0).map(|(x, c)| x - c).collect())
            .collect::<Vec<Vec<f64>>>();
        let m_dot_n = grid.boundary().iter().map(|b| b.sign * (grid.coord(b.node, b.axis) - x0[b.axis])).collect();
        Self {
            op: op.clone(),
            rho: rho.values().to_vec(),
            gamma,
            m,
            m_dot_n,
            recent: Vec::with_capacity(4),
            count: 0,
            dt: None,
            sums: Level::default(),
        }
    }

    /// `m·∇u` by centered differences at interior nodes, zero on the boundary.
    fn m_grad(&self, u: &[f64]) -> Vec<f64> {
        let g = self.op.grid();
        let mut out = vec![0.0; u.len()];
        for &n in g.interior() {
            out[n] = (0..g.dimension())
                .map(|a| {
                    let s = g.strides()[a];
                    self.m[n][a] * (u[n + s] - u[n - s]) / (2.0 * g.h()[a])
                })
                .sum();
        }
        out
    }

    fn level(&self, s: &State, mg: &[f64]) -> Result<Level> {
        let op = &self.op;
        let cell = op.grid().cell_volume();
        let bu = op.bilaplacian(&s.u)?;
        let lap = op.laplacian(&s.u)?;
        let traces = op.traces_from_laplacian(&lap);
        let mut lvl = Level::default();
        for &n in op.grid().interior() {
            lvl.i2 += cell * bu[n] * mg[n];
            lvl.i3 += cell * self.gamma * s.v[n] * mg[n];
        }
        lvl.lap_sq = op.inner(&lap, &lap);
        lvl.v_sq = op.inner(&s.v, &s.v);
        lvl.boundary = op
            .grid()
            .boundary()
            .iter()
            .zip(&self.m_dot_n)
            .zip(&traces.lap)
            .map(|((b, mn), l)| b.weight * mn * l * l)
            .sum();
        Ok(lvl)
    }

    fn i1_term(&self, accel: &[f64], mg: &[f64]) -> f64 {
        let cell = self.op.grid().cell_volume();
        self.op.grid().interior().iter().map(|&n| cell * self.rho[n] * accel[n] * mg[n]).sum()
    }

    pub fn push(&mut self, state: &State) -> Result<()> {
        if let Some(last) = self.recent.last() {
            let dt = state.t - last.0.t;
            match self.dt {
                None => self.dt = Some(dt),
                Some(d) if (dt - d).abs() > 1e-9 * d.abs() => {
                    return Err(Error::InvalidParameter("multiplier diagnostics need a uniform time step".into()));
                }
                _ => {}
            }
        }
        let mg = self.m_grad(&state.u);
        let lvl = self.level(state, &mg)?;
        self.recent.push((state.clone(), mg, lvl));
        if self.recent.len() > 3 {
            self.recent.remove(0);
        }
        self.count += 1;
        if self.recent.len() == 3 {
            let dt = self.dt.unwrap();
            let [a, b, c] = [&self.recent[0], &self.recent[1], &self.recent[2]];
            if self.count == 3 {
                let acc = combine(&[(-1.5 / dt, &a.0.v), (2.0 / dt, &b.0.v), (-0.5 / dt, &c.0.v)]);
                let mut l0 = a.2;
                l0.i1 = self.i1_term(&acc, &a.1);
                self.sums.add(&l0, 0.5 * dt);
            }
            let acc = combine(&[(-0.5 / dt, &a.0.v), (0.5 / dt, &c.0.v)]);
            let mut l1 = b.2;
            l1.i1 = self.i1_term(&acc, &b.1);
            self.sums.add(&l1, dt);
        }
        Ok(())
    }

    /// Closes the time quadrature with the one-sided difference at the last level.
    pub fn finish(mut self) -> Result<MultiplierDiagnostics> {
        let dim = self.op.grid().dimension() as f64;
        if self.count == 0 {
            return Ok(diagnostics(&Level::default(), self.gamma, dim));
        }
        if self.count < 3 {
            return Err(Error::InvalidParameter("multiplier diagnostics need at least three time levels".into()));
        }
        let dt = self.dt.unwrap();
        let [a, b, c] = [&self.recent[0], &self.recent[1], &self.recent[2]];
        let acc = combine(&[(0.5 / dt, &a.0.v), (-2.0 / dt, &b.0.v), (1.5 / dt, &c.0.v)]);
        let mut last = c.2;
        last.i1 = self.i1_term(&acc, &c.1);
        self.sums.add(&last, 0.5 * dt);
        Ok(diagnostics(&self.sums, self.gamma, dim))
    }
}

fn combine(terms: &[(f64, &Vec<f64>)]) -> Vec<f64> {
    let n = terms[0].1.len();
    (0..n).map(|i| terms.iter().map(|(c, v)| c * v[i]).sum()).collect()
}

/// Multiplier integrals over a stored trajectory. Every time level must be
/// present, so `stride` has to be 1.
pub fn multiplier_diagnostics(
    op: &ClampedOperator,
    rho: &DensityField,
    gamma: f64,
    trajectory: &[State],
    stride: usize,
) -> Result<MultiplierDiagnostics> {
    if stride != 1 {
        return Err(Error::InvalidParameter(format!(
            "multiplier diagnostics need every step stored, got stride {stride}"
        )));
    }
    let mut acc = MultiplierAccumulator::new(op, rho, gamma);
    for s in trajectory {
        acc.push(s)?;
    }
    acc.finish()
}

fn diagnostics(s: &Level, gamma: f64, dim: f64) -> MultiplierDiagnostics {
    let closure = s.i1 + s.i2 + s.i3;
    let scale = s.i1.abs() + s.i2.abs() + s.i3.abs();
    let boundary_term = 0.5 * s.boundary;
    let i2_predicted = (2.0 - dim / 2.0) * s.lap_sq - boundary_term;
    let i3_predicted = -0.5 * gamma * dim * s.v_sq;
    let rel = |x: f64, scale: f64| if scale > 0.0 { x.abs() / scale } else { x.abs() };
    MultiplierDiagnostics {
        i1: s.i1,
        i2: s.i2,
        i3: s.i3,
        closure,
        closure_relative: rel(closure, scale),
        i2_predicted,
        i2_identity_residual: rel(s.i2 - i2_predicted, s.i2.abs()),
        boundary_term,
        i3_predicted,
        i3_identity_residual: rel(s.i3 - i3_predicted, i3_predicted.abs()),
    }
}
