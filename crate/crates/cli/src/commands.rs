use anyhow::{bail, Context, Result};
use biharm_core::elliptic::contraction_check;
use biharm_core::evolution::{
    dissipation_residual, growth_bound_check, simulate, BoundaryRecord, RunOptions, Simulation, ADMISSIBILITY_TOLERANCE,
};
use biharm_core::fields::{random_ensemble, RandomParts};
use biharm_core::inversion::{
    add_trace_noise, reconstruct_density, reconstruct_initial, restrict_record, stability_scan, DensityProblem,
    DensitySearch, InitialProblem, Params,
};
use biharm_core::observability::{gamma_scan, MultiplierAccumulator};
use biharm_core::snapshot::write_snapshots;
use biharm_core::{
    check_admissible, make_initial_data, min_observation_time, spectrum, ClampedOperator, DensityField, Family,
    InitialData,
};
use serde::Serialize;

use crate::config::{EnsembleKind, ExperimentConfig};
use crate::output::Outputs;

/// Everything a subcommand needs: the resolved config, run flags and the
/// output collector.
pub struct Run<'a> {
    pub config: &'a mut ExperimentConfig,
    pub fine_data: bool,
    pub out: &'a mut Outputs,
}

struct Setup {
    op: ClampedOperator,
    rho: DensityField,
}

impl Run<'_> {
    /// Builds the grid and density, fixing the resolved `x0` in the config.
    fn setup(&mut self) -> Result<Setup> {
        let grid = self.config.grid()?.build()?;
        if let Some(g) = self.config.grid.as_mut() {
            g.x0 = Some(grid.x0().to_vec());
        }
        let rho = self.config.density()?.build(&grid)?;
        Ok(Setup { op: ClampedOperator::new(&grid), rho })
    }

    /// Resolves `dt` into the config and checks the observation time.
    fn horizon(&mut self, s: &Setup) -> Result<(f64, f64, f64)> {
        let dynamics = self.config.dynamics()?.clone();
        let dt = dynamics.dt(&s.op);
        if let Some(d) = self.config.dynamics.as_mut() {
            d.dt = Some(dt);
        }
        self.time_condition(s, dynamics.t_final, s.rho.rho_min())?;
        Ok((dynamics.gamma, dynamics.t_final, dt))
    }

    fn time_condition(&mut self, s: &Setup, t: f64, rho_min: f64) -> Result<()> {
        let t_min = min_observation_time(s.op.grid(), rho_min)?;
        self.out.fact("T_min", t_min)?;
        if t <= t_min {
            self.out.warn(format!("T = {t} does not exceed the minimal observation time {t_min:.6}"));
        }
        Ok(())
    }

    fn initial(&self, s: &Setup) -> Result<InitialData> {
        make_initial_data(&s.op, &s.rho, self.config.initial()?).context("[initial]")
    }

    fn ensemble(&self, s: &Setup, default: EnsembleKind, default_size: usize) -> Result<Vec<InitialData>> {
        let e = &self.config.experiment;
        let size = e.ensemble_size.unwrap_or(default_size);
        let data = match e.ensemble.unwrap_or(default) {
            EnsembleKind::Initial => vec![self.initial(s)?],
            EnsembleKind::Eigenmodes => (1..=size)
                .map(|index| make_initial_data(&s.op, &s.rho, &Family::Eigenmode { index, amplitude: 1.0 }))
                .collect::<biharm_core::Result<_>>()?,
            EnsembleKind::Random => random_ensemble(&s.op, &s.rho, e.seed.unwrap_or(0), size, RandomParts::Both)?,
        };
        Ok(data)
    }

    pub fn simulate(&mut self) -> Result<()> {
        let s = self.setup()?;
        let (gamma, t, dt) = self.horizon(&s)?;
        let data = self.initial(&s)?;
        let admissibility = check_admissible(&s.op, &s.rho, &data, ADMISSIBILITY_TOLERANCE)?;
        let stride = self.config.dynamics()?.snapshot_stride;
        let run = simulate(&s.op, &s.rho, gamma, &data, t, dt, None, RunOptions { snapshot_stride: stride })?;

        #[derive(Serialize)]
        struct EnergyRow {
            t: f64,
            #[serde(rename = "E")]
            e: f64,
            dissipated: f64,
            source_work: f64,
            h_norm: f64,
        }
        let tr = &run.energy;
        let rows: Vec<EnergyRow> = (0..tr.len())
            .map(|k| EnergyRow {
                t: tr.times[k],
                e: tr.e[k],
                dissipated: tr.dissipated[k],
                source_work: tr.source_work[k],
                h_norm: tr.h_norm[k],
            })
            .collect();
        self.out.csv("energy.csv", &rows)?;
        self.out.json("boundary_record.json", &run.record)?;
        if let Some(stride) = stride {
            let dir = self.out.dir().join("snapshots");
            write_snapshots(&dir, s.op.grid(), &run.snapshots, stride)?;
            self.out.record_file("snapshots/index.json");
        }
        let growth = growth_bound_check(tr, tr.h_norm.first().copied().unwrap_or(0.0));
        if growth.violated {
            self.out.warn("the H-norm exceeds its fitted exponential envelope");
        }
        self.out.json(
            "summary.json",
            &serde_json::json!({
                "dt": run.dt,
                "steps": run.steps,
                "E0": tr.e.first(),
                "E_final": tr.e.last(),
                "J": run.record.j,
                "dissipation_residual": dissipation_residual(tr),
                "growth": growth,
                "admissibility": admissibility,
            }),
        )?;
        Ok(())
    }

    pub fn resolvent(&mut self) -> Result<()> {
        let s = self.setup()?;
        let lambdas = self.config.experiment.lambdas.clone().unwrap_or_else(|| vec![0.1, 1.0, 10.0]);
        let gammas = self.config.gammas()?;
        let ensemble = self.ensemble(&s, EnsembleKind::Initial, 10)?;

        #[derive(Serialize)]
        struct Row {
            lambda: f64,
            gamma: f64,
            resolvent_bound: f64,
            energy_bound: f64,
            max_residual: f64,
            tested: usize,
        }
        let mut rows = Vec::new();
        for &lambda in &lambdas {
            for &gamma in &gammas {
                let r = contraction_check(&s.op, &s.rho, gamma, lambda, &ensemble)?;
                if r.resolvent_bound > 1.0 + 1e-8 {
                    self.out.warn(format!("λ={lambda}, γ={gamma}: resolvent bound {:.6} exceeds 1", r.resolvent_bound));
                }
                rows.push(Row {
                    lambda,
                    gamma,
                    resolvent_bound: r.resolvent_bound,
                    energy_bound: r.energy_bound,
                    max_residual: r.max_residual,
                    tested: r.tested,
                });
            }
        }
        self.out.csv("resolvent.csv", &rows)
    }

    pub fn spectrum(&mut self) -> Result<()> {
        let s = self.setup()?;
        let k = self.config.experiment.modes.unwrap_or(6);
        let pairs = spectrum(&s.op, &s.rho, k)?;

        #[derive(Serialize)]
        struct Row {
            index: usize,
            lambda: f64,
            omega: f64,
        }
        let rows: Vec<Row> = pairs
            .iter()
            .enumerate()
            .map(|(i, p)| Row { index: i + 1, lambda: p.lambda, omega: p.lambda.sqrt() })
            .collect();
        self.out.csv("spectrum.csv", &rows)?;
        self.out.fact("T_min", min_observation_time(s.op.grid(), s.rho.rho_min())?)
    }

    pub fn observability(&mut self) -> Result<()> {
        let s = self.setup()?;
        let (_, t, dt) = self.horizon(&s)?;
        let gammas = self.config.gammas()?;
        let ensemble = self.ensemble(&s, EnsembleKind::Eigenmodes, 5)?;
        let scan = gamma_scan(&s.op, &s.rho, &gammas, &ensemble, t, dt)?;

        #[derive(Serialize)]
        struct Row {
            gamma: f64,
            #[serde(rename = "T")]
            t: f64,
            #[serde(rename = "E0")]
            e0: f64,
            #[serde(rename = "J")]
            j: f64,
            ratio: f64,
        }
        let rows: Vec<Row> = scan
            .estimates
            .iter()
            .flat_map(|est| {
                est.per_datum.iter().map(|r| Row { gamma: r.gamma, t: r.t, e0: r.e0, j: r.j, ratio: r.ratio })
            })
            .collect();
        self.out.csv("observability.csv", &rows)?;
        let constants: Vec<_> =
            scan.estimates.iter().map(|e| serde_json::json!({ "gamma": e.gamma, "C_obs": e.c_obs })).collect();
        self.out.json("constants.json", &serde_json::json!({ "constants": constants, "spread": scan.spread }))
    }

    pub fn multiplier(&mut self) -> Result<()> {
        let s = self.setup()?;
        let (gamma, t, dt) = self.horizon(&s)?;
        let data = self.initial(&s)?;
        let mut sim = Simulation::new(&s.op, &s.rho, gamma, &data, t, dt, RunOptions::default())?;
        let mut acc = MultiplierAccumulator::new(&s.op, &s.rho, gamma);
        acc.push(sim.state())?;
        while !sim.is_finished() {
            let step = sim.advance(None)?;
            acc.push(&step.next)?;
        }
        self.out.json("multiplier.json", &acc.finish()?)
    }

    pub fn stability(&mut self) -> Result<()> {
        let s = self.setup()?;
        let (_, t, dt) = self.horizon(&s)?;
        let gammas = self.config.gammas()?;
        let Some(contrasts) = self.config.experiment.contrasts.clone().filter(|c| !c.is_empty()) else {
            bail!("[experiment] contrasts must list at least one value for stability");
        };
        let density = self.config.density()?.clone();
        let base_value = density.inclusion_value();
        let variants = contrasts
            .iter()
            .map(|&c| Ok((c, density.build_with(s.op.grid(), base_value + c)?)))
            .collect::<Result<Vec<_>>>()?;
        let rho_min = variants.iter().map(|(_, r)| r.rho_min()).fold(s.rho.rho_min(), f64::min);
        self.time_condition(&s, t, rho_min)?;
        let base = Params { rho: s.rho.clone(), data: self.initial(&s)? };
        let data1 = match &self.config.initial_alt {
            Some(f) => make_initial_data(&s.op, &s.rho, f).context("[initial_alt]")?,
            None => base.data.clone(),
        };
        let scan = stability_scan(&s.op, &base, &data1, &variants, &gammas, t, dt)?;

        #[derive(Serialize)]
        struct Row {
            contrast: f64,
            gamma: f64,
            #[serde(rename = "T")]
            t: f64,
            rho_diff_inf: f64,
            #[serde(rename = "f_diff_H4")]
            f_diff_h4: f64,
            #[serde(rename = "J")]
            j: f64,
            #[serde(rename = "M_observed")]
            m_observed: f64,
            ratio_thm1: f64,
            ratio_thm2: Option<f64>,
        }
        let mut rows = Vec::with_capacity(scan.len());
        for row in &scan {
            let r = &row.report;
            if r.large_contrast {
                self.out
                    .warn(format!("contrast {} at γ={} is outside the small-contrast regime", row.contrast, r.gamma));
            }
            if !r.uniform_bound_holds() {
                self.out.warn(format!(
                    "contrast {} at γ={}: difference energy exceeds its uniform bound",
                    row.contrast, r.gamma
                ));
            }
            rows.push(Row {
                contrast: row.contrast,
                gamma: r.gamma,
                t: r.t,
                rho_diff_inf: r.rho_diff_inf,
                f_diff_h4: r.f_diff_h4,
                j: r.j,
                m_observed: r.m_observed,
                ratio_thm1: r.ratio_thm1,
                ratio_thm2: r.ratio_thm2,
            });
        }
        self.out.csv("stability.csv", &rows)?;
        self.out.json("stability_reports.json", &scan)
    }

    /// Boundary record of `family` with density built from `[density]` at
    /// `rho1`, together with the true displacement on this grid. With
    /// `--fine-data` both come from the once-refined grid, restricted to the
    /// coarse nodes.
    fn synthetic_record(
        &self,
        s: &Setup,
        rho1: f64,
        family: &Family,
        gamma: f64,
        t: f64,
        dt: f64,
    ) -> Result<(BoundaryRecord, Vec<f64>)> {
        let density = self.config.density()?;
        if !self.fine_data {
            let rho = density.build_with(s.op.grid(), rho1)?;
            let data = make_initial_data(&s.op, &rho, family)?;
            let record = simulate(&s.op, &rho, gamma, &data, t, dt, None, RunOptions::default())?.record;
            return Ok((record, data.f));
        }
        let (coarse, fine_grid) = (s.op.grid(), s.op.grid().refined()?);
        let fine = ClampedOperator::new(&fine_grid);
        let rho = density.build_with(fine.grid(), rho1)?;
        let data = make_initial_data(&fine, &rho, family)?;
        let record = simulate(&fine, &rho, gamma, &data, t, dt, None, RunOptions::default())?.record;
        let f = (0..coarse.len())
            .map(|node| {
                let [i, j] = coarse.multi_index(node);
                data.f[fine_grid.node_at([2 * i, 2 * j])]
            })
            .collect();
        Ok((restrict_record(&record, &fine, &s.op)?, f))
    }

    fn noise_levels(&self) -> Vec<f64> {
        self.config.experiment.noise.clone().unwrap_or_else(|| vec![0.0])
    }

    pub fn invert_density(&mut self) -> Result<()> {
        let s = self.setup()?;
        let (gamma, t, dt) = self.horizon(&s)?;
        let density = self.config.density()?.clone();
        let truth = density.inclusion_value();
        let family = self.config.initial()?.clone();
        let data = self.initial(&s)?;
        let e = &self.config.experiment;
        let mut search = DensitySearch::new(
            e.search_lo.unwrap_or(0.25 * truth),
            e.search_hi.unwrap_or(4.0 * truth),
            e.search_tol.unwrap_or(1e-3),
        );
        if let Some(n) = e.search_samples {
            search.samples = n;
        }
        let seed = e.seed.unwrap_or(0);
        let (observed, _) = self.synthetic_record(&s, truth, &family, gamma, t, dt)?;
        let problem = DensityProblem {
            op: &s.op,
            rho0: density.rho0,
            inclusion: density.inclusion.clone(),
            data: &data,
            gamma,
            t,
            dt,
        };

        let mut results = Vec::new();
        for eta in self.noise_levels() {
            let noisy = if eta > 0.0 { add_trace_noise(&observed, eta, seed) } else { observed.clone() };
            let est = reconstruct_density(&noisy, &problem, &search)?;
            for w in &est.warnings {
                self.out.warn(format!("η={eta}: {w}"));
            }
            results.push(serde_json::json!({
                "eta": eta,
                "rho1_true": truth,
                "rho1_hat": est.rho1_hat,
                "abs_error": (est.rho1_hat - truth).abs(),
                "estimate": est,
            }));
        }
        self.out.json(
            "density_inversion.json",
            &serde_json::json!({ "fine_data": self.fine_data, "search": search, "results": results }),
        )
    }

    pub fn invert_initial(&mut self) -> Result<()> {
        let s = self.setup()?;
        let (gamma, t, dt) = self.horizon(&s)?;
        let family = self.config.initial()?.clone();
        let data = self.initial(&s)?;
        let e = &self.config.experiment;
        let k = e.modes.unwrap_or(6);
        let reg = e.regularization.unwrap_or(0.0);
        let seed = e.seed.unwrap_or(0);
        let (observed, f_true) =
            self.synthetic_record(&s, self.config.density()?.inclusion_value(), &family, gamma, t, dt)?;

        let modes = spectrum(&s.op, &s.rho, k)?;
        let weighted: Vec<f64> = f_true.iter().zip(s.rho.values()).map(|(f, r)| f * r).collect();
        let projection: Vec<f64> = modes.iter().map(|p| s.op.inner(&weighted, &p.mode)).collect();
        let problem = InitialProblem { op: &s.op, rho: &s.rho, g: &data.g, gamma, t, dt };

        let mut results = Vec::new();
        for eta in self.noise_levels() {
            let noisy = if eta > 0.0 { add_trace_noise(&observed, eta, seed) } else { observed.clone() };
            let est = reconstruct_initial(&noisy, &problem, k, reg)?;
            if est.rank_deficient {
                self.out.warn(format!("η={eta}: the modal Gram matrix is numerically rank deficient"));
            }
            let coefficient_error =
                est.coefficients.iter().zip(&projection).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let diff: Vec<f64> = est.f_hat.iter().zip(&f_true).map(|(a, b)| a - b).collect();
            let scale = s.op.l2_norm(&f_true);
            results.push(serde_json::json!({
                "eta": eta,
                "coefficient_error": coefficient_error,
                "f_relative_error": if scale > 0.0 { s.op.l2_norm(&diff) / scale } else { s.op.l2_norm(&diff) },
                "estimate": est,
            }));
        }
        self.out.json(
            "initial_inversion.json",
            &serde_json::json!({
                "fine_data": self.fine_data,
                "modes": k,
                "regularization": reg,
                "true_projection": projection,
                "results": results,
            }),
        )
    }
}
