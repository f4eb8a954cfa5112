//! Implicit-midpoint time integration of `ρ v' = -Δ²u - γv + S`, `u' = v`,
//! with energy bookkeeping and boundary trace records.
//!
//! One step solves a single reaction-bilaplacian system for the midpoint
//! displacement `ū`:
//!
//! ```text
//! (Δ² + c) ū = c u + (2ρ/dt) v + S,   c = 4ρ/dt² + 2γ/dt
//! u⁺ = 2ū - u,   v̄ = 2(ū - u)/dt,   v⁺ = 2v̄ - v
//! ```
//!
//! The discrete energy then satisfies
//! `E⁺ - E = -γ dt ∥v̄∥² + dt ⟨S, v̄⟩` exactly, so the dissipation integral
//! is accumulated with the same midpoint quadrature.

use serde::{Deserialize, Serialize};

use crate::biharmonic::{energy, ClampedOperator, EnergyValue};
use crate::elliptic::{ReactionSolver, SolverChoice};
use crate::error::{Error, Result};
use crate::fields::{check_admissible, DensityField, InitialData};

/// Boundary-condition tolerance applied to initial data before a run.
pub const ADMISSIBILITY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub t: f64,
}

impl State {
    pub fn zero(n: usize) -> Self {
        Self { u: vec![0.0; n], v: vec![0.0; n], t: 0.0 }
    }

    pub fn from_data(data: &InitialData) -> Self {
        Self { u: data.f.clone(), v: data.g.clone(), t: 0.0 }
    }
}

/// Result of one step: the new state and the midpoint pair used by the rule.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub next: State,
    pub mid_u: Vec<f64>,
    pub mid_v: Vec<f64>,
    /// `t + dt/2`.
    pub mid_t: f64,
}

/// `min(1e-3, h²)` with `h` the smallest spacing.
pub fn default_dt(op: &ClampedOperator) -> f64 {
    let h = op.grid().h().iter().copied().fold(f64::INFINITY, f64::min);
    (h * h).min(1e-3)
}

/// `ρ⁻¹(-Δ²u - γv + S)` at interior nodes, zero on the boundary.
pub fn acceleration(
    op: &ClampedOperator,
    rho: &DensityField,
    gamma: f64,
    u: &[f64],
    v: &[f64],
    source: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let bu = op.bilaplacian(u)?;
    let mut a = vec![0.0; u.len()];
    for &n in op.grid().interior() {
        let s = source.map_or(0.0, |s| s[n]);
        a[n] = (-bu[n] - gamma * v[n] + s) / rho.values()[n];
    }
    Ok(a)
}

/// Factored midpoint step for fixed `ρ`, `γ`, `dt`. A negative `dt`
/// integrates backward in time.
#[derive(Debug, Clone)]
pub struct Integrator {
    solver: ReactionSolver,
    rho: Vec<f64>,
    c: Vec<f64>,
    gamma: f64,
    dt: f64,
}

impl Integrator {
    pub fn new(op: &ClampedOperator, rho: &DensityField, gamma: f64, dt: f64) -> Result<Self> {
        if dt == 0.0 || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!("time step {dt}")));
        }
        if !(gamma >= 0.0) {
            return Err(Error::InvalidParameter(format!("damping {gamma} must be nonnegative")));
        }
        let c: Vec<f64> = rho.values().iter().map(|r| 4.0 * r / (dt * dt) + 2.0 * gamma / dt).collect();
        let solver = ReactionSolver::new(op, &c, SolverChoice::Auto)?;
        Ok(Self { solver, rho: rho.values().to_vec(), c, gamma, dt })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn operator(&self) -> &ClampedOperator {
        self.solver.operator()
    }

    pub fn step(&self, state: &State, source: Option<&[f64]>) -> Result<StepOutput> {
        let op = self.solver.operator();
        let n = op.grid().len();
        for len in [state.u.len(), state.v.len()].into_iter().chain(source.map(<[f64]>::len)) {
            if len != n {
                return Err(Error::ShapeMismatch { expected: n, got: len });
            }
        }
        let dt = self.dt;
        let rhs: Vec<f64> = (0..n)
            .map(|i| {
                let s = source.map_or(0.0, |s| s[i]);
                self.c[i] * state.u[i] + 2.0 * self.rho[i] * state.v[i] / dt + s
            })
            .collect();
        let mid_u = self.solver.solve(&rhs)?;
        let mid_v: Vec<f64> = mid_u.iter().zip(&state.u).map(|(m, u)| 2.0 * (m - u) / dt).collect();
        let u: Vec<f64> = mid_u.iter().zip(&state.u).map(|(m, u)| 2.0 * m - u).collect();
        let v: Vec<f64> = mid_v.iter().zip(&state.v).map(|(m, v)| 2.0 * m - v).collect();
        Ok(StepOutput { next: State { u, v, t: state.t + dt }, mid_u, mid_v, mid_t: state.t + 0.5 * dt })
    }
}

/// Energy history of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyTrace {
    pub times: Vec<f64>,
    pub e: Vec<f64>,
    /// Running `γ ∫₀ᵗ ∫ |v|²`.
    pub dissipated: Vec<f64>,
    /// Running `∫₀ᵗ ∫ S v`.
    pub source_work: Vec<f64>,
    /// `∥(u, v)∥_H = (∥Δ²u∥² + ∥√ρ v∥²)^{1/2}`.
    pub h_norm: Vec<f64>,
}

impl EnergyTrace {
    fn push(&mut self, t: f64, value: &EnergyValue, dissipated: f64, source_work: f64) {
        self.times.push(t);
        self.e.push(value.e);
        self.dissipated.push(dissipated);
        self.source_work.push(source_work);
        self.h_norm.push(value.h_norm_sq.sqrt());
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Growth exponent of [`growth_bound_check`] against the initial norm.
    pub fn fitted_k(&self) -> f64 {
        self.h_norm.first().map_or(0.0, |&h0| growth_bound_check(self, h0).fitted_k)
    }
}

/// Boundary traces at every stored time and the observation integral `J`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRecord {
    pub times: Vec<f64>,
    pub trace_lap: Vec<Vec<f64>>,
    pub trace_nlap: Vec<Vec<f64>>,
    /// Surface weights ordered like the grid's boundary list.
    pub quadrature: Vec<f64>,
    /// `∫₀ᵀ ∫_∂Ω (|∂nΔu|² + |Δu|²) dS dt`, trapezoid in time.
    pub j: f64,
}

impl BoundaryRecord {
    pub fn new(op: &ClampedOperator) -> Self {
        Self { quadrature: op.grid().boundary().iter().map(|b| b.weight).collect(), ..Default::default() }
    }

    /// `∫_∂Ω (|∂nΔu|² + |Δu|²) dS` at stored time index `k`.
    pub fn integrand(&self, k: usize) -> f64 {
        self.quadrature
            .iter()
            .zip(self.trace_lap[k].iter().zip(&self.trace_nlap[k]))
            .map(|(w, (l, n))| w * (l * l + n * n))
            .sum()
    }

    pub fn push(&mut self, t: f64, lap: Vec<f64>, nlap: Vec<f64>) {
        self.times.push(t);
        self.trace_lap.push(lap);
        self.trace_nlap.push(nlap);
        let k = self.times.len() - 1;
        if k > 0 {
            let dt = self.times[k] - self.times[k - 1];
            self.j += 0.5 * dt * (self.integrand(k - 1) + self.integrand(k));
        }
    }

    /// `J` recomputed from the stored traces.
    pub fn recompute_j(&self) -> f64 {
        (1..self.times.len())
            .map(|k| 0.5 * (self.times[k] - self.times[k - 1]) * (self.integrand(k - 1) + self.integrand(k)))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub final_state: State,
    pub energy: EnergyTrace,
    pub record: BoundaryRecord,
    pub snapshots: Vec<State>,
    /// Step actually used, `T / ⌈T/dt⌉`.
    pub dt: f64,
    pub steps: usize,
}

/// Run options beyond the physical parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Keep every `k`-th state (including the initial one) in memory.
    pub snapshot_stride: Option<usize>,
}

/// Stepwise driver that fills the energy trace and boundary record as it goes.
///
/// The horizon is divided into `⌈T/dt⌉` equal steps so the run ends exactly
/// at `T`.
#[derive(Debug, Clone)]
pub struct Simulation {
    integrator: Integrator,
    rho: DensityField,
    state: State,
    energy: EnergyTrace,
    record: BoundaryRecord,
    snapshots: Vec<State>,
    options: RunOptions,
    steps_total: usize,
    steps_done: usize,
    dissipated: f64,
    source_work: f64,
}

impl Simulation {
    pub fn new(
        op: &ClampedOperator,
        rho: &DensityField,
        gamma: f64,
        data: &InitialData,
        t_final: f64,
        dt: f64,
        options: RunOptions,
    ) -> Result<Self> {
        if !(t_final > 0.0) || !t_final.is_finite() {
            return Err(Error::InvalidParameter(format!("horizon T = {t_final} must be positive")));
        }
        if !(dt > 0.0) || dt > t_final {
            return Err(Error::InvalidParameter(format!("time step {dt} must lie in (0, T = {t_final}]")));
        }
        let report = check_admissible(op, rho, data, ADMISSIBILITY_TOLERANCE)?;
        if !report.ok {
            return Err(Error::NotAdmissible(report.names().join(", ")));
        }
        let steps_total = (t_final / dt - 1e-9).ceil().max(1.0) as usize;
        let dt_eff = t_final / steps_total as f64;
        let integrator = Integrator::new(op, rho, gamma, dt_eff)?;
        let state = State::from_data(data);
        let mut sim = Self {
            integrator,
            rho: rho.clone(),
            state,
            energy: EnergyTrace::default(),
            record: BoundaryRecord::new(op),
            snapshots: Vec::new(),
            options,
            steps_total,
            steps_done: 0,
            dissipated: 0.0,
            source_work: 0.0,
        };
        sim.observe()?;
        Ok(sim)
    }

    fn observe(&mut self) -> Result<()> {
        let op = self.integrator.operator();
        let e = energy(op, &self.rho, &self.state.u, &self.state.v)?;
        self.energy.push(self.state.t, &e, self.dissipated, self.source_work);
        let traces = op.boundary_traces(&self.state.u)?;
        self.record.push(self.state.t, traces.lap, traces.nlap);
        if let Some(stride) = self.options.snapshot_stride {
            if stride > 0 && self.steps_done.is_multiple_of(stride) {
                self.snapshots.push(self.state.clone());
            }
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.integrator.dt()
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn energy(&self) -> &EnergyTrace {
        &self.energy
    }

    pub fn record(&self) -> &BoundaryRecord {
        &self.record
    }

    pub fn steps_total(&self) -> usize {
        self.steps_total
    }

    pub fn is_finished(&self) -> bool {
        self.steps_done >= self.steps_total
    }

    /// Time at which the next step's source is evaluated.
    pub fn next_mid_time(&self) -> f64 {
        self.state.t + 0.5 * self.dt()
    }

    /// Advances one step; `source` is the forcing at the step midpoint.
    pub fn advance(&mut self, source: Option<&[f64]>) -> Result<StepOutput> {
        let out = self.integrator.step(&self.state, source)?;
        let op = self.integrator.operator();
        let dt = self.dt();
        let vv = op.inner(&out.mid_v, &out.mid_v);
        self.dissipated += self.integrator.gamma() * dt * vv;
        if let Some(s) = source {
            let interior_s: Vec<f64> =
                (0..s.len()).map(|i| if op.grid().is_boundary(i) { 0.0 } else { s[i] }).collect();
            self.source_work += dt * op.inner(&interior_s, &out.mid_v);
        }
        self.state = out.next.clone();
        self.steps_done += 1;
        self.observe()?;
        Ok(out)
    }

    /// Runs to the horizon with `forcing(t)` evaluated at step midpoints.
    pub fn run(&mut self, forcing: Option<&dyn Fn(f64) -> Vec<f64>>) -> Result<()> {
        while !self.is_finished() {
            let s = forcing.map(|f| f(self.next_mid_time()));
            self.advance(s.as_deref())?;
        }
        Ok(())
    }

    pub fn finish(self) -> SimulationResult {
        SimulationResult {
            final_state: self.state,
            energy: self.energy,
            record: self.record,
            snapshots: self.snapshots,
            dt: self.integrator.dt(),
            steps: self.steps_done,
        }
    }
}

/// Integrates from `data` to time `t_final`.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    op: &ClampedOperator,
    rho: &DensityField,
    gamma: f64,
    data: &InitialData,
    t_final: f64,
    dt: f64,
    forcing: Option<&dyn Fn(f64) -> Vec<f64>>,
    options: RunOptions,
) -> Result<SimulationResult> {
    let mut sim = Simulation::new(op, rho, gamma, data, t_final, dt, options)?;
    sim.run(forcing)?;
    Ok(sim.finish())
}

/// `|E(T) - E(0) + dissipated - source work| / max(E(0), ε)`.
pub fn dissipation_residual(trace: &EnergyTrace) -> f64 {
    let (Some(&e0), Some(&e1)) = (trace.e.first(), trace.e.last()) else {
        return 0.0;
    };
    let d = trace.dissipated.last().copied().unwrap_or(0.0);
    let w = trace.source_work.last().copied().unwrap_or(0.0);
    (e1 - e0 + d - w).abs() / e0.max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthCheck {
    pub fitted_k: f64,
    pub violated: bool,
}

/// Fits `log(H(t)/H0) ≈ K t` by least squares through the origin, clamps
/// `K` at zero and flags any `H(t) > H0 e^{Kt} (1 + 1e-6)`.
pub fn growth_bound_check(trace: &EnergyTrace, initial_h: f64) -> GrowthCheck {
    if !(initial_h > 0.0) {
        return GrowthCheck { fitted_k: 0.0, violated: false };
    }
    let t0 = trace.times.first().copied().unwrap_or(0.0);
    let (mut sty, mut stt) = (0.0, 0.0);
    for (&t, &h) in trace.times.iter().zip(&trace.h_norm) {
        if h > 0.0 {
            let s = t - t0;
            sty += s * (h / initial_h).ln();
            stt += s * s;
        }
    }
    let fitted_k = if stt > 0.0 { (sty / stt).max(0.0) } else { 0.0 };
    let violated = trace
        .times
        .iter()
        .zip(&trace.h_norm)
        .any(|(&t, &h)| h > initial_h * (fitted_k * (t - t0)).exp() * (1.0 + 1e-6));
    GrowthCheck { fitted_k, violated }
}
