//! Experiment configuration read from TOML.
//!
//! Units are nondimensional throughout: lengths in the units of `extents`,
//! times in the same units as `T` and `dt`, densities relative to each other.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use biharm_core::{build_grid, make_density, ClampedOperator, DensityField, Family, Grid, Inclusion};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub dimension: usize,
    pub extents: Vec<f64>,
    pub n_nodes: Vec<usize>,
    /// Star-shape center; defaults to the domain midpoint.
    pub x0: Option<Vec<f64>>,
}

impl GridBlock {
    pub fn build(&self) -> Result<Grid> {
        let x0 = self.x0.clone().unwrap_or_else(|| self.extents.iter().map(|l| 0.5 * l).collect());
        build_grid(self.dimension, &self.extents, &self.n_nodes, &x0).context("[grid]")
    }
}

/// `rho0` outside the inclusion, `rho1` inside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityBlock {
    pub rho0: f64,
    pub rho1: Option<f64>,
    #[serde(default = "no_inclusion")]
    pub inclusion: Inclusion,
}

fn no_inclusion() -> Inclusion {
    Inclusion::None
}

impl DensityBlock {
    pub fn inclusion_value(&self) -> f64 {
        self.rho1.unwrap_or(self.rho0)
    }

    pub fn build(&self, grid: &Grid) -> Result<DensityField> {
        self.build_with(grid, self.inclusion_value())
    }

    pub fn build_with(&self, grid: &Grid, rho1: f64) -> Result<DensityField> {
        make_density(grid, self.rho0, rho1, &self.inclusion).context("[density]")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsBlock {
    pub gamma: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    /// Defaults to `min(1e-3, h²)`.
    pub dt: Option<f64>,
    pub snapshot_stride: Option<usize>,
}

impl DynamicsBlock {
    pub fn dt(&self, op: &ClampedOperator) -> f64 {
        self.dt.unwrap_or_else(|| biharm_core::evolution::default_dt(op))
    }
}

/// How an ensemble of initial data is generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    /// The `[initial]` block alone.
    Initial,
    /// The first `ensemble_size` eigenmodes.
    Eigenmodes,
    /// `ensemble_size` random fields seeded from `seed`.
    Random,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    pub ensemble: Option<EnsembleKind>,
    pub ensemble_size: Option<usize>,
    pub seed: Option<u64>,
    pub gammas: Option<Vec<f64>>,
    pub lambdas: Option<Vec<f64>>,
    /// Added to the inclusion value of `[density]` to form `ρ₁` variants.
    pub contrasts: Option<Vec<f64>>,
    pub modes: Option<usize>,
    pub search_lo: Option<f64>,
    pub search_hi: Option<f64>,
    pub search_tol: Option<f64>,
    pub search_samples: Option<usize>,
    /// Relative trace noise levels; `0` is the clean reconstruction.
    pub noise: Option<Vec<f64>>,
    pub regularization: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: Option<GridBlock>,
    pub density: Option<DensityBlock>,
    pub initial: Option<Family>,
    /// Second initial datum for paired stability runs.
    pub initial_alt: Option<Family>,
    pub dynamics: Option<DynamicsBlock>,
    #[serde(default)]
    pub experiment: ExperimentBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

fn missing(name: &str) -> anyhow::Error {
    anyhow!("config is missing the [{name}] block")
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn grid(&self) -> Result<&GridBlock> {
        self.grid.as_ref().ok_or_else(|| missing("grid"))
    }

    pub fn density(&self) -> Result<&DensityBlock> {
        self.density.as_ref().ok_or_else(|| missing("density"))
    }

    pub fn initial(&self) -> Result<&Family> {
        self.initial.as_ref().ok_or_else(|| missing("initial"))
    }

    pub fn dynamics(&self) -> Result<&DynamicsBlock> {
        self.dynamics.as_ref().ok_or_else(|| missing("dynamics"))
    }

    /// Applies `--seed` to the experiment seed and to a random initial family.
    pub fn override_seed(&mut self, seed: u64) {
        self.experiment.seed = Some(seed);
        for family in [&mut self.initial, &mut self.initial_alt].into_iter().flatten() {
            if let Family::Random { seed: s, .. } = family {
                *s = seed;
            }
        }
    }

    pub fn gammas(&self) -> Result<Vec<f64>> {
        match (&self.experiment.gammas, &self.dynamics) {
            (Some(g), _) if !g.is_empty() => Ok(g.clone()),
            (Some(_), _) => bail!("[experiment] gammas must not be empty"),
            (None, Some(d)) => Ok(vec![d.gamma]),
            (None, None) => Err(missing("dynamics")),
        }
    }
}
