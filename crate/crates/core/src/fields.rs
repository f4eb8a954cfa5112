//! Density fields and admissible initial data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::biharmonic::{spectrum, ClampedOperator};
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Safety factor on the truncation estimates used by the boundary checks.
const TRUNCATION_SAFETY: f64 = 8.0;

/// Inclusion `ω` carrying density `rho1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Inclusion {
    /// No inclusion: the field is constant.
    None,
    /// Closed disk `|x - center| <= radius` (2D). A zero radius is empty.
    Disk { center: Vec<f64>, radius: f64 },
    /// Closed subinterval `[lo, hi]` (1D).
    Interval { lo: f64, hi: f64 },
}

impl Inclusion {
    fn contains(&self, p: &[f64]) -> bool {
        match self {
            Inclusion::None => false,
            Inclusion::Disk { center, radius } => {
                let d2: f64 = p.iter().zip(center).map(|(x, c)| (x - c) * (x - c)).sum();
                *radius > 0.0 && d2 <= radius * radius
            }
            Inclusion::Interval { lo, hi } => lo < hi && *lo <= p[0] && p[0] <= *hi,
        }
    }

    fn check_fits(&self, grid: &Grid) -> Result<()> {
        let fail = |msg: String| Err(Error::InclusionOutsideDomain(msg));
        match self {
            Inclusion::None => Ok(()),
            Inclusion::Disk { center, radius } => {
                if grid.dimension() != 2 || center.len() != 2 {
                    return fail("a disk inclusion needs a 2D grid and a 2D center".into());
                }
                if !(*radius >= 0.0) {
                    return fail(format!("radius {radius} is negative"));
                }
                for (a, &c) in center.iter().enumerate() {
                    if c - radius < 0.0 || c + radius > grid.extents()[a] {
                        return fail(format!("disk at {center:?} with radius {radius}"));
                    }
                }
                Ok(())
            }
            Inclusion::Interval { lo, hi } => {
                if grid.dimension() != 1 {
                    return fail("an interval inclusion needs a 1D grid".into());
                }
                if !(0.0 <= *lo && lo <= hi && *hi <= grid.extents()[0]) {
                    return fail(format!("interval [{lo}, {hi}]"));
                }
                Ok(())
            }
        }
    }
}

/// Two-valued density description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricDensity {
    pub rho0: f64,
    pub rho1: f64,
    pub inclusion: Inclusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityField {
    values: Vec<f64>,
    rho_min: f64,
    rho_max: f64,
    parametric: Option<ParametricDensity>,
}

impl DensityField {
    pub fn constant(grid: &Grid, rho: f64) -> Result<Self> {
        make_density(grid, rho, rho, &Inclusion::None)
    }

    /// Wraps arbitrary nodal values without validation; bounds are taken
    /// from the values. [`check_admissible`] reports nonpositive entries.
    pub fn from_values(values: Vec<f64>) -> Self {
        let rho_min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let rho_max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { values, rho_min, rho_max, parametric: None }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rho_min(&self) -> f64 {
        self.rho_min
    }

    pub fn rho_max(&self) -> f64 {
        self.rho_max
    }

    pub fn parametric(&self) -> Option<&ParametricDensity> {
        self.parametric.as_ref()
    }

    /// Nodes where the field takes the inclusion value.
    pub fn inclusion_nodes(&self, grid: &Grid) -> Vec<usize> {
        match &self.parametric {
            Some(p) => (0..grid.len()).filter(|&n| p.inclusion.contains(&grid.point(n))).collect(),
            None => Vec::new(),
        }
    }

    /// `max |ρ_a - ρ_b|` over nodes.
    pub fn sup_distance(&self, other: &DensityField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// `ρ = ρ0 + (ρ1 - ρ0) 1_ω` evaluated at nodes.
pub fn make_density(grid: &Grid, rho0: f64, rho1: f64, inclusion: &Inclusion) -> Result<DensityField> {
    for r in [rho0, rho1] {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::NonPositiveDensity(r));
        }
    }
    inclusion.check_fits(grid)?;
    let values = (0..grid.len()).map(|n| if inclusion.contains(&grid.point(n)) { rho1 } else { rho0 }).collect();
    Ok(DensityField {
        values,
        rho_min: rho0.min(rho1),
        rho_max: rho0.max(rho1),
        parametric: Some(ParametricDensity { rho0, rho1, inclusion: inclusion.clone() }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialData {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub description: String,
    /// Set when `Δ²f = 0` on the boundary holds analytically for the family.
    pub compatible: bool,
}

impl InitialData {
    pub fn new(f: Vec<f64>, g: Vec<f64>, description: impl Into<String>) -> Self {
        Self { f, g, description: description.into(), compatible: false }
    }

    pub fn zero(grid: &Grid) -> Self {
        Self { f: vec![0.0; grid.len()], g: vec![0.0; grid.len()], description: "zero".into(), compatible: true }
    }

    /// `(a f + b f', a g + b g')`.
    pub fn combine(&self, a: f64, other: &InitialData, b: f64) -> InitialData {
        let mix = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(x, y)| a * x + b * y).collect();
        InitialData {
            f: mix(&self.f, &other.f),
            g: mix(&self.g, &other.g),
            description: format!("{a}*({}) + {b}*({})", self.description, other.description),
            compatible: self.compatible && other.compatible,
        }
    }
}

/// Which components of a random member are nonzero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomParts {
    Both,
    DisplacementOnly,
    VelocityOnly,
}

/// Generating families for [`make_initial_data`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Zero,
    /// `f = amplitude · φ_index` (1-based), `g = 0`.
    Eigenmode {
        index: usize,
        amplitude: f64,
    },
    /// `f = Σ c_k φ_k`, `g = Σ d_k φ_k` over the first modes.
    Modal {
        displacement: Vec<f64>,
        velocity: Vec<f64>,
    },
    /// `f = amplitude · Π_a (x_a (L_a - x_a))²`, `g = 0`.
    Bump {
        amplitude: f64,
    },
    /// Smooth random fields multiplied by a squared boundary bump.
    Random {
        seed: u64,
        parts: RandomParts,
    },
}

/// Builds admissible initial data. Eigenmode families use the spectrum of
/// `Δ²_h φ = λ ρ φ` for the given density.
pub fn make_initial_data(op: &ClampedOperator, rho: &DensityField, family: &Family) -> Result<InitialData> {
    let grid = op.grid();
    let n = grid.len();
    let data = match family {
        Family::Zero => InitialData::zero(grid),
        Family::Eigenmode { index, amplitude } => {
            if *index == 0 {
                return Err(Error::InvalidParameter("eigenmode indices start at 1".into()));
            }
            let pairs = spectrum(op, rho, *index)?;
            let f = pairs[index - 1].mode.iter().map(|x| amplitude * x).collect();
            InitialData {
                f,
                g: vec![0.0; n],
                description: format!("eigenmode {index} amplitude {amplitude}"),
                compatible: true,
            }
        }
        Family::Modal { displacement, velocity } => {
            let k = displacement.len().max(velocity.len());
            if k == 0 {
                return Err(Error::InvalidParameter("modal family needs at least one coefficient".into()));
            }
            let pairs = spectrum(op, rho, k)?;
            let sum = |c: &[f64]| {
                let mut out = vec![0.0; n];
                for (ck, p) in c.iter().zip(&pairs) {
                    out.iter_mut().zip(&p.mode).for_each(|(o, m)| *o += ck * m);
                }
                out
            };
            InitialData {
                f: sum(displacement),
                g: sum(velocity),
                description: format!("modal {displacement:?} / {velocity:?}"),
                compatible: true,
            }
        }
        Family::Bump { amplitude } => {
            if !amplitude.is_finite() {
                return Err(Error::InvalidParameter(format!("bump amplitude {amplitude}")));
            }
            let f = (0..n).map(|node| amplitude * squared_bump(grid, node)).collect();
            InitialData {
                f,
                g: vec![0.0; n],
                description: format!("polynomial bump amplitude {amplitude}"),
                compatible: false,
            }
        }
        Family::Random { seed, parts } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let f = random_admissible_field(grid, &mut rng);
            let g = random_admissible_field(grid, &mut rng);
            let zero = vec![0.0; n];
            let (f, g) = match parts {
                RandomParts::Both => (f, g),
                RandomParts::DisplacementOnly => (f, zero),
                RandomParts::VelocityOnly => (zero, g),
            };
            InitialData { f, g, description: format!("random seed {seed}"), compatible: false }
        }
    };
    Ok(data)
}

/// `count` random members with consecutive seeds starting at `seed`.
pub fn random_ensemble(
    op: &ClampedOperator,
    rho: &DensityField,
    seed: u64,
    count: usize,
    parts: RandomParts,
) -> Result<Vec<InitialData>> {
    (0..count as u64)
        .map(|k| make_initial_data(op, rho, &Family::Random { seed: seed.wrapping_add(k), parts }))
        .collect()
}

fn squared_bump(grid: &Grid, node: usize) -> f64 {
    (0..grid.dimension())
        .map(|a| {
            let x = grid.coord(node, a);
            let l = grid.extents()[a];
            (x * (l - x)).powi(2)
        })
        .product()
}

/// `b(x) · Σ c_mn cos(mπx/Lx) cos(nπy/Ly)` with `b` the squared bump
/// normalized to unit maximum and Gaussian coefficients decaying like
/// `(1 + m + n)^-2`. Vanishes with its normal derivative on the boundary.
fn random_admissible_field(grid: &Grid, rng: &mut ChaCha8Rng) -> Vec<f64> {
    const MODES: usize = 4;
    let dim = grid.dimension();
    let n_coef = if dim == 1 { MODES } else { MODES * MODES };
    let coef: Vec<f64> = (0..n_coef)
        .map(|k| {
            let (m, n) = (k % MODES, k / MODES);
            let z: f64 = StandardNormal.sample(rng);
            z / ((1 + m + n) as f64).powi(2)
        })
        .collect();
    let norm: f64 = grid.extents().iter().map(|l| 16.0 / l.powi(4)).product();
    let pi = std::f64::consts::PI;
    (0..grid.len())
        .map(|node| {
            let p = grid.point(node);
            let smooth: f64 = coef
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    let (m, n) = (k % MODES, k / MODES);
                    let cx = (m as f64 * pi * p[0] / grid.extents()[0]).cos();
                    let cy = if dim == 2 { (n as f64 * pi * p[1] / grid.extents()[1]).cos() } else { 1.0 };
                    c * cx * cy
                })
                .sum();
            norm * squared_bump(grid, node) * smooth
        })
        .collect()
}

/// A failed admissibility condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "condition", rename_all = "kebab-case")]
pub enum Violation {
    Positivity { node: usize, value: f64 },
    DensityBounds { node: usize, value: f64 },
    Displacement { node: usize, value: f64 },
    NormalDerivative { node: usize, value: f64, allowed: f64 },
    Velocity { node: usize, value: f64 },
    Compatibility { node: usize, value: f64, allowed: f64 },
}

impl Violation {
    pub fn condition(&self) -> &'static str {
        match self {
            Violation::Positivity { .. } => "positivity",
            Violation::DensityBounds { .. } => "density-bounds",
            Violation::Displacement { .. } => "displacement",
            Violation::NormalDerivative { .. } => "normal-derivative",
            Violation::Velocity { .. } => "velocity",
            Violation::Compatibility { .. } => "compatibility",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
    /// `max |Δ²f|` extrapolated to the boundary, relative to `∥Δ²f∥∞`.
    pub compatibility_defect: f64,
}

impl AdmissibilityReport {
    pub fn names(&self) -> Vec<&'static str> {
        let mut names: Vec<_> = self.violations.iter().map(Violation::condition).collect();
        names.dedup();
        names
    }
}

/// Checks density bounds and the clamped boundary conditions.
///
/// Values are tested against `tol · ∥field∥∞`. The normal derivative uses the
/// one-sided difference `(-3f0 + 4f1 - f2) / 2h`, whose truncation error
/// `h² f'''/3` is estimated from the largest third difference next to the
/// boundary. The allowance also admits slopes below `h|f''|/2`, the
/// resolution limit of the grid, so resolved clamped fields pass on any grid
/// while a genuine slope such as that of `x(1 - x)` is caught. The compatibility condition is enforced only for
/// data flagged as compatible and always reported.
pub fn check_admissible(
    op: &ClampedOperator,
    rho: &DensityField,
    data: &InitialData,
    tol: f64,
) -> Result<AdmissibilityReport> {
    let grid = op.grid();
    for len in [rho.values().len(), data.f.len(), data.g.len()] {
        if len != grid.len() {
            return Err(Error::ShapeMismatch { expected: grid.len(), got: len });
        }
    }
    let mut violations = Vec::new();
    for (node, &r) in rho.values().iter().enumerate() {
        if !(r > 0.0) {
            violations.push(Violation::Positivity { node, value: r });
        } else if r < rho.rho_min() || r > rho.rho_max() {
            violations.push(Violation::DensityBounds { node, value: r });
        }
    }

    let sup = |x: &[f64]| x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let f_sup = sup(&data.f);
    let g_sup = sup(&data.g);
    for b in grid.boundary() {
        let f0 = data.f[b.node];
        if f0.abs() > tol * f_sup {
            violations.push(Violation::Displacement { node: b.node, value: f0 });
        }
        let g0 = data.g[b.node];
        if g0.abs() > tol * g_sup {
            violations.push(Violation::Velocity { node: b.node, value: g0 });
        }
    }
    let f_second = max_boundary_difference(op, &data.f, 0, &[1.0, -2.0, 1.0]);
    let f_third = max_boundary_difference(op, &data.f, 0, &THIRD_DIFFERENCE);
    for b in grid.boundary() {
        let h = b.normal_spacing(grid);
        let f = |k| data.f[b.inward(grid, k)];
        let slope = (-3.0 * f(0) + 4.0 * f(1) - f(2)) / (2.0 * h);
        let length = grid.extents()[b.axis];
        let allowed =
            tol * f_sup / length + f_second[b.axis] / (2.0 * h) + TRUNCATION_SAFETY * f_third[b.axis] / (3.0 * h);
        if slope.abs() > allowed {
            violations.push(Violation::NormalDerivative { node: b.node, value: slope, allowed });
        }
    }

    let bf = op.bilaplacian(&data.f)?;
    let bf_sup = sup(&bf);
    let bf_third = max_boundary_difference(op, &bf, 1, &THIRD_DIFFERENCE);
    let extrap = op.traces_from_laplacian(&bf).lap;
    let mut compatibility_defect = 0.0f64;
    for (k, b) in grid.boundary().iter().enumerate() {
        if bf_sup > 0.0 {
            compatibility_defect = compatibility_defect.max(extrap[k].abs() / bf_sup);
        }
        let allowed = tol * bf_sup + TRUNCATION_SAFETY * bf_third[b.axis];
        if data.compatible && extrap[k].abs() > allowed {
            violations.push(Violation::Compatibility { node: b.node, value: extrap[k], allowed });
        }
    }

    Ok(AdmissibilityReport { ok: violations.is_empty(), violations, compatibility_defect })
}

const THIRD_DIFFERENCE: [f64; 4] = [-1.0, 3.0, -3.0, 1.0];

/// Largest `|Σ_k c_k w_{s+k}|` along inward normal lines starting `s` layers
/// in, per normal axis. With the second and third difference stencils this is
/// `h²|w''|` or `h³|w'''|` next to the boundary, which bounds the truncation
/// of the one-sided boundary formulas.
fn max_boundary_difference(op: &ClampedOperator, w: &[f64], s: usize, stencil: &[f64]) -> Vec<f64> {
    let grid = op.grid();
    let mut out = vec![0.0f64; grid.dimension()];
    for b in grid.boundary() {
        let last = grid.n_nodes()[b.axis] - 1;
        let d: f64 =
            stencil.iter().enumerate().filter(|(k, _)| s + k <= last).map(|(k, c)| c * w[b.inward(grid, s + k)]).sum();
        out[b.axis] = out[b.axis].max(d.abs());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    fn unit_square(n: usize) -> ClampedOperator {
        ClampedOperator::new(&build_grid(2, &[1.0, 1.0], &[n, n], &[0.5, 0.5]).unwrap())
    }

    fn unit_interval(n: usize) -> ClampedOperator {
        ClampedOperator::new(&build_grid(1, &[1.0], &[n], &[0.5]).unwrap())
    }

    #[test]
    fn disk_inclusion_membership() {
        let op = unit_square(33);
        let g = op.grid();
        let disk = Inclusion::Disk { center: vec![0.5, 0.5], radius: 0.2 };
        let rho = make_density(g, 1.0, 2.0, &disk).unwrap();
        assert_eq!(rho.rho_min(), 1.0);
        assert_eq!(rho.rho_max(), 2.0);
        for n in 0..g.len() {
            let p = g.point(n);
            let d = ((p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2)).sqrt();
            let expect = if d <= 0.2 + 1e-15 { 2.0 } else { 1.0 };
            assert_eq!(rho.values()[n], expect, "node {n} at distance {d}");
        }
        assert_eq!(rho.inclusion_nodes(g).len(), rho.values().iter().filter(|&&v| v == 2.0).count());
    }

    #[test]
    fn equal_densities_give_constant_field() {
        let op = unit_square(9);
        let disk = Inclusion::Disk { center: vec![0.5, 0.5], radius: 0.3 };
        let rho = make_density(op.grid(), 1.0, 1.0, &disk).unwrap();
        assert!(rho.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_radius_reproduces_constant_field() {
        let op = unit_square(9);
        let disk = Inclusion::Disk { center: vec![0.5, 0.5], radius: 0.0 };
        let rho = make_density(op.grid(), 1.0, 3.0, &disk).unwrap();
        assert!(rho.values().iter().all(|&v| v == 1.0));
        let interval = unit_interval(9);
        let empty = Inclusion::Interval { lo: 0.5, hi: 0.5 };
        let rho = make_density(interval.grid(), 2.0, 3.0, &empty).unwrap();
        assert!(rho.values().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn density_errors() {
        let op = unit_square(9);
        assert!(matches!(make_density(op.grid(), 1.0, 0.0, &Inclusion::None), Err(Error::NonPositiveDensity(_))));
        let escaping = Inclusion::Disk { center: vec![0.9, 0.5], radius: 0.2 };
        assert!(matches!(make_density(op.grid(), 1.0, 2.0, &escaping), Err(Error::InclusionOutsideDomain(_))));
        let wrong_dim = Inclusion::Interval { lo: 0.1, hi: 0.2 };
        assert!(make_density(op.grid(), 1.0, 2.0, &wrong_dim).is_err());
    }

    #[test]
    fn bump_on_interval() {
        let op = unit_interval(11);
        let rho = DensityField::constant(op.grid(), 1.0).unwrap();
        let d = make_initial_data(&op, &rho, &Family::Bump { amplitude: 1.0 }).unwrap();
        for n in 0..op.grid().len() {
            let x = op.grid().coord(n, 0);
            assert!((d.f[n] - x * x * (1.0 - x) * (1.0 - x)).abs() < 1e-15);
        }
        assert_eq!(d.f[0], 0.0);
        assert_eq!(d.f[10], 0.0);
        let report = check_admissible(&op, &rho, &d, 1e-12).unwrap();
        assert!(report.ok, "{report:?}");
    }

    #[test]
    fn first_eigenmode_family() {
        let op = unit_square(13);
        let rho = DensityField::constant(op.grid(), 1.0).unwrap();
        let d = make_initial_data(&op, &rho, &Family::Eigenmode { index: 1, amplitude: 1.0 }).unwrap();
        let phi = &spectrum(&op, &rho, 1).unwrap()[0].mode;
        assert_eq!(&d.f, phi);
        assert!(d.g.iter().all(|&x| x == 0.0));
        assert!(make_initial_data(&op, &rho, &Family::Eigenmode { index: 0, amplitude: 1.0 }).is_err());
    }

    #[test]
    fn random_family_vanishes_on_boundary() {
        let op = unit_square(17);
        let rho = DensityField::constant(op.grid(), 1.0).unwrap();
        let d = make_initial_data(&op, &rho, &Family::Random { seed: 7, parts: RandomParts::Both }).unwrap();
        for b in op.grid().boundary() {
            assert_eq!(d.f[b.node], 0.0);
            assert_eq!(d.g[b.node], 0.0);
        }
        assert!(d.f.iter().any(|&x| x != 0.0) && d.g.iter().any(|&x| x != 0.0));
        let again = make_initial_data(&op, &rho, &Family::Random { seed: 7, parts: RandomParts::Both }).unwrap();
        assert_eq!(d, again);
    }

    #[test]
    fn generated_families_are_admissible() {
        for op in [unit_square(9), unit_square(17), unit_square(33), unit_interval(9), unit_interval(65)] {
            let rho = DensityField::constant(op.grid(), 1.0).unwrap();
            let mut families = vec![
                Family::Zero,
                Family::Bump { amplitude: 3.0 },
                Family::Eigenmode { index: 1, amplitude: 1.0 },
                Family::Eigenmode { index: 3, amplitude: -2.0 },
                Family::Modal { displacement: vec![1.0, 0.5], velocity: vec![0.0, 0.0, 1.0] },
            ];
            families.extend((0..5).map(|seed| Family::Random { seed, parts: RandomParts::Both }));
            if op.grid().n_nodes()[0] >= 17 {
                families.push(Family::Eigenmode { index: 6, amplitude: 1.0 });
            }
            for fam in &families {
                let d = make_initial_data(&op, &rho, fam).unwrap();
                let report = check_admissible(&op, &rho, &d, 1e-12).unwrap();
                assert!(report.ok, "{fam:?} on {:?}: {:?}", op.grid().n_nodes(), report.violations.first());
            }
        }
    }

    #[test]
    fn slope_at_the_ends_is_flagged() {
        for n in [9, 17, 65] {
            let op = unit_interval(n);
            let rho = DensityField::constant(op.grid(), 1.0).unwrap();
            let f: Vec<f64> = (0..n)
                .map(|k| {
                    let x = op.grid().coord(k, 0);
                    x * (1.0 - x)
                })
                .collect();
            let d = InitialData::new(f, vec![0.0; n], "x(1-x)");
            let report = check_admissible(&op, &rho, &d, 1e-12).unwrap();
            assert!(!report.ok);
            assert_eq!(report.names(), vec!["normal-derivative"]);
        }
    }

    #[test]
    fn zero_density_node_is_flagged() {
        let op = unit_interval(9);
        let mut values = vec![1.0; 9];
        values[4] = 0.0;
        let rho = DensityField::from_values(values);
        let report = check_admissible(&op, &rho, &InitialData::zero(op.grid()), 1e-12).unwrap();
        assert_eq!(report.names(), vec!["positivity"]);
    }

    #[test]
    fn boundary_values_are_flagged() {
        let op = unit_interval(9);
        let rho = DensityField::constant(op.grid(), 1.0).unwrap();
        let mut d = InitialData::zero(op.grid());
        d.g[0] = 1.0;
        d.g[4] = 1.0;
        let report = check_admissible(&op, &rho, &d, 1e-12).unwrap();
        assert_eq!(report.names(), vec!["velocity"]);
    }

    #[test]
    fn bump_is_not_compatible() {
        let op = unit_square(33);
        let rho = DensityField::constant(op.grid(), 1.0).unwrap();
        let bump = make_initial_data(&op, &rho, &Family::Bump { amplitude: 1.0 }).unwrap();
        let mode = make_initial_data(&op, &rho, &Family::Eigenmode { index: 1, amplitude: 1.0 }).unwrap();
        let rb = check_admissible(&op, &rho, &bump, 1e-12).unwrap();
        let rm = check_admissible(&op, &rho, &mode, 1e-12).unwrap();
        assert!(rb.ok && rm.ok);
        assert!(rb.compatibility_defect > 0.1, "{}", rb.compatibility_defect);
        assert!(rm.compatibility_defect < 0.05, "{}", rm.compatibility_defect);
    }

    #[test]
    fn shape_mismatch() {
        let op = unit_interval(9);
        let rho = DensityField::constant(op.grid(), 1.0).unwrap();
        let d = InitialData::new(vec![0.0; 3], vec![0.0; 9], "short");
        assert!(matches!(check_admissible(&op, &rho, &d, 1e-12), Err(Error::ShapeMismatch { .. })));
    }
}
