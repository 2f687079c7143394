//! Residuals of the weak continuity equation and of the renormalization
//! identity along computed flows, plus the sign-preservation probe.
//!
//! Densities off the particle trajectories always come from integrating the
//! time-reversed field back to `t = 0`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, FlowlabError, Result};
use crate::field::FieldSpec;
use crate::flow::{fmt17, integrate_flow, FlowTrajectoryBatch, InitialPoints, IntegratorOptions};
use crate::gaussian::{dot, QuadratureScheme};
use crate::stats::{weighted_sum, McEstimate};

/// Renormalization residual accepted for smooth profiles and fields.
pub const RENORMALIZATION_TOLERANCE: f64 = 5e-3;

/// Maximal total degree of a [`TestFunction`] polynomial.
pub const MAX_TEST_DEGREE: u32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    /// Exponents of `x_1, ..., x_M`.
    pub powers: Vec<u32>,
}

/// `φ(x) = P(x_1, ..., x_M) · m(x)` with a polynomial `P` of degree at most
/// four and, when `bump_radius = Some(R)`, the mollifier
/// `m(x) = exp(-(x_1² + ... + x_M²) / (2R²))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestFunction {
    m: usize,
    monomials: Vec<Monomial>,
    #[serde(default)]
    bump_radius: Option<f64>,
}

impl TestFunction {
    pub fn new(m: usize, monomials: Vec<Monomial>) -> Result<Self> {
        if m == 0 {
            return Err(FlowlabError::Config("test function needs at least one coordinate".into()));
        }
        for mono in &monomials {
            check_dim(m, mono.powers.len())?;
            let degree: u32 = mono.powers.iter().sum();
            if degree > MAX_TEST_DEGREE {
                return Err(FlowlabError::Config(format!("monomial degree {degree} exceeds {MAX_TEST_DEGREE}")));
            }
            if !mono.coeff.is_finite() {
                return Err(FlowlabError::Config("non-finite monomial coefficient".into()));
            }
        }
        Ok(Self { m, monomials, bump_radius: None })
    }

    pub fn with_bump(mut self, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(FlowlabError::Config(format!("bump radius must be positive, got {radius}")));
        }
        self.bump_radius = Some(radius);
        Ok(self)
    }

    pub fn constant(c: f64) -> Self {
        Self { m: 1, monomials: vec![Monomial { coeff: c, powers: vec![0] }], bump_radius: None }
    }

    /// `x_i^k` with `i` zero-based.
    pub fn coordinate_power(i: usize, k: u32) -> Result<Self> {
        let mut powers = vec![0; i + 1];
        powers[i] = k;
        Self::new(i + 1, vec![Monomial { coeff: 1.0, powers }])
    }

    pub fn cylinder_dim(&self) -> usize {
        self.m
    }

    pub fn degree(&self) -> u32 {
        self.monomials.iter().map(|m| m.powers.iter().sum()).max().unwrap_or(0)
    }

    fn polynomial(&self, x: &[f64]) -> f64 {
        self.monomials
            .iter()
            .map(|mono| mono.coeff * mono.powers.iter().zip(x).map(|(&k, xi)| xi.powi(k as i32)).product::<f64>())
            .sum()
    }

    fn bump(&self, x: &[f64]) -> f64 {
        match self.bump_radius {
            Some(r) => (-x[..self.m].iter().map(|v| v * v).sum::<f64>() / (2.0 * r * r)).exp(),
            None => 1.0,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.polynomial(x) * self.bump(x)
    }

    /// Analytic gradient, zero beyond the first `M` coordinates.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for mono in &self.monomials {
            for j in 0..self.m {
                let k = mono.powers[j];
                if k == 0 {
                    continue;
                }
                let mut term = mono.coeff * k as f64;
                for (i, (&p, xi)) in mono.powers.iter().zip(x).enumerate() {
                    term *= if i == j { xi.powi(p as i32 - 1) } else { xi.powi(p as i32) };
                }
                g[j] += term;
            }
        }
        if let Some(r) = self.bump_radius {
            let m = self.bump(x);
            let p = self.polynomial(x);
            for j in 0..self.m {
                g[j] = m * (g[j] - p * x[j] / (r * r));
            }
        }
        g
    }

    /// Largest deviation between [`Self::gradient`] and central differences
    /// over `probes`.
    pub fn gradient_fd_discrepancy(&self, probes: &[Vec<f64>]) -> f64 {
        let mut worst: f64 = 0.0;
        for x in probes {
            let h = f64::EPSILON.cbrt() * crate::gaussian::norm(x).max(1.0);
            let g = self.gradient(x);
            let mut xp = x.clone();
            for j in 0..x.len() {
                xp[j] = x[j] + h;
                let fp = self.eval(&xp);
                xp[j] = x[j] - h;
                let fm = self.eval(&xp);
                xp[j] = x[j];
                worst = worst.max(((fp - fm) / (2.0 * h) - g[j]).abs());
            }
        }
        worst
    }
}

/// Admissible renormalization functions `β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RenormalizationProfile {
    /// `β(z) = z`.
    Identity,
    /// `β(z) = √(1 + z²) - 1`.
    SmoothBeta,
    /// `β_ε(z) = √(z² + ε²) - ε` for `z ≥ 0`, zero for `z ≤ 0`.
    BetaEpsPositivePart { eps: f64 },
}

impl RenormalizationProfile {
    pub fn beta_eps(eps: f64) -> Result<Self> {
        if eps > 0.0 && eps.is_finite() {
            Ok(Self::BetaEpsPositivePart { eps })
        } else {
            Err(FlowlabError::Domain(format!("eps must be positive, got {eps}")))
        }
    }

    pub fn beta(&self, z: f64) -> f64 {
        match *self {
            Self::Identity => z,
            Self::SmoothBeta => z.hypot(1.0) - 1.0,
            Self::BetaEpsPositivePart { eps } => {
                if z <= 0.0 {
                    0.0
                } else {
                    z.hypot(eps) - eps
                }
            }
        }
    }

    pub fn beta_prime(&self, z: f64) -> f64 {
        match *self {
            Self::Identity => 1.0,
            Self::SmoothBeta => z / z.hypot(1.0),
            Self::BetaEpsPositivePart { eps } => {
                if z <= 0.0 {
                    0.0
                } else {
                    z / z.hypot(eps)
                }
            }
        }
    }

    /// `β(z) - zβ'(z)`.
    pub fn defect(&self, z: f64) -> f64 {
        match *self {
            Self::Identity => 0.0,
            Self::SmoothBeta => 1.0 / z.hypot(1.0) - 1.0,
            Self::BetaEpsPositivePart { eps } => {
                if z <= 0.0 {
                    0.0
                } else {
                    let s = z.hypot(eps);
                    eps * (eps / s - 1.0)
                }
            }
        }
    }

    /// Largest violation of `-ε ≤ β_ε(z) - zβ_ε'(z) ≤ 0` over `z_grid`;
    /// `None` for the other profiles.
    pub fn envelope_violation(&self, z_grid: &[f64]) -> Option<f64> {
        let Self::BetaEpsPositivePart { eps } = *self else {
            return None;
        };
        Some(
            z_grid
                .iter()
                .map(|&z| {
                    let d = self.defect(z);
                    (d.max(0.0)).max(-eps - d)
                })
                .fold(0.0, f64::max),
        )
    }
}

/// `u_t(y)` together with the recovered starting point `x = X(t,·)⁻¹(y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackwardDensity {
    pub density: f64,
    pub log_density: f64,
    pub origin: Vec<f64>,
    pub dead: bool,
}

/// The field `s ↦ -b_{t-s}` on `[0, t]`.
pub fn time_reversed(f: &FieldSpec, t: f64) -> FieldSpec {
    let (fv, fj, fd, fg) = (f.clone(), f.clone(), f.clone(), f.clone());
    FieldSpec::new(format!("{}-reversed", f.name()), f.dim(), move |s, x| {
        fv.value(t - s, x).into_iter().map(|v| -v).collect()
    })
    .with_jacobian(move |s, x| -fj.jacobian(t - s, x))
    .with_divergence(move |s, x| -fd.divergence(t - s, x))
    .with_gaussian_divergence(move |s, x| -fg.gaussian_divergence(t - s, x))
}

/// Backward densities at time `grid[k]` for every point of `ys`, integrating
/// the reversed field on the mirrored nodes `grid[k] - grid[k-j]`.
fn backward_on_grid(
    f: &FieldSpec,
    grid: &[f64],
    k: usize,
    ys: &[Vec<f64>],
    opts: &IntegratorOptions,
) -> Result<Vec<BackwardDensity>> {
    if k == 0 {
        return Ok(ys
            .iter()
            .map(|y| BackwardDensity { density: 1.0, log_density: 0.0, origin: y.clone(), dead: false })
            .collect());
    }
    let t = grid[k];
    let mirrored: Vec<f64> = (0..=k).map(|j| if j == 0 { 0.0 } else { t - grid[k - j] }).collect();
    let rev = time_reversed(f, t);
    let batch = integrate_flow(&rev, &InitialPoints::Explicit(ys.to_vec()), &mirrored, opts)?;
    Ok((0..batch.len())
        .map(|i| {
            // the reversed batch accumulates +∫ div_γ b along the forward path
            let dead = batch.died_at[i].is_some();
            let log_density = -batch.log_density[i][k];
            BackwardDensity {
                density: if dead { 0.0 } else { log_density.exp() },
                log_density,
                origin: batch.positions[i][k].clone(),
                dead,
            }
        })
        .collect())
}

/// `u_t(y)` by `steps` RK4 steps of the time-reversed ODE from `(t, y)` to
/// time zero. Blow-up gives density zero with `dead` set.
pub fn backward_density(
    f: &FieldSpec,
    t: f64,
    y: &[f64],
    steps: usize,
    opts: &IntegratorOptions,
) -> Result<BackwardDensity> {
    check_dim(f.dim(), y.len())?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(FlowlabError::Domain(format!("time must be nonnegative, got {t}")));
    }
    if t == 0.0 {
        return Ok(BackwardDensity { density: 1.0, log_density: 0.0, origin: y.to_vec(), dead: false });
    }
    let grid = crate::flow::uniform_grid(0.0, t, steps.max(1));
    let mut out = backward_on_grid(f, &grid, grid.len() - 1, &[y.to_vec()], opts)?;
    Ok(out.remove(0))
}

/// One row of a residual table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub std_error: f64,
}

/// Writes `t,lhs,rhs,residual,std_error` rows.
pub fn write_residual_csv<W: Write>(rows: &[ResidualRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["t", "lhs", "rhs", "residual", "std_error"])?;
    for r in rows {
        w.write_record([fmt17(r.t), fmt17(r.lhs), fmt17(r.rhs), fmt17(r.residual), fmt17(r.std_error)])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakResidual {
    pub row: ResidualRow,
    /// Set when `t_index` sits on the grid boundary.
    pub one_sided: bool,
    pub particles_used: usize,
}

/// `|d/dt E[φ(X_t)] - s(t) - E[⟨b_t(X_t), ∇φ(X_t)⟩]|` at `grid[t_index]`.
///
/// The time derivative is a central difference over the neighbouring nodes
/// (one-sided at the ends). `source`, when given, returns the pairing of the
/// source term with `φ` at time `t`. Particles dead at any node used are
/// excluded.
pub fn weak_residual(
    f: &FieldSpec,
    batch: &FlowTrajectoryBatch,
    phi: &TestFunction,
    t_index: usize,
    source: Option<&dyn Fn(f64) -> f64>,
) -> Result<WeakResidual> {
    check_dim(f.dim(), batch.dim())?;
    let grid = &batch.time_grid;
    if t_index >= grid.len() || grid.len() < 2 {
        return Err(FlowlabError::Domain(format!("time index {t_index} out of range")));
    }
    if phi.cylinder_dim() > f.dim() {
        return Err(FlowlabError::Dimension { expected: f.dim(), got: phi.cylinder_dim() });
    }
    let lo = t_index.saturating_sub(1);
    let hi = (t_index + 1).min(grid.len() - 1);
    let one_sided = lo == t_index || hi == t_index;
    let dt = grid[hi] - grid[lo];
    let t = grid[t_index];
    let src = source.map_or(0.0, |s| s(t));
    let mut diffs = Vec::with_capacity(batch.len());
    let mut lhs_samples = Vec::with_capacity(batch.len());
    let mut rhs_samples = Vec::with_capacity(batch.len());
    for k in 0..batch.len() {
        if !batch.alive_at(k, hi) {
            continue;
        }
        let pos = &batch.positions[k];
        let lhs = (phi.eval(&pos[hi]) - phi.eval(&pos[lo])) / dt;
        let x = &pos[t_index];
        let rhs = dot(&f.value(t, x), &phi.gradient(x));
        diffs.push(lhs - src - rhs);
        lhs_samples.push(lhs);
        rhs_samples.push(rhs);
    }
    if diffs.is_empty() {
        return Err(FlowlabError::EmptyAliveSet(t_index));
    }
    let d = McEstimate::from_samples(&diffs);
    let lhs = McEstimate::from_samples(&lhs_samples).mean;
    let rhs = McEstimate::from_samples(&rhs_samples).mean;
    Ok(WeakResidual {
        row: ResidualRow { t, lhs: lhs - src, rhs, residual: d.mean.abs(), std_error: d.std_error },
        one_sided,
        particles_used: diffs.len(),
    })
}

/// Per-interior-node comparison of both sides of the renormalization
/// identity with `φ ≡ 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenormalizationTable {
    pub profile: RenormalizationProfile,
    pub placement: Placement,
    pub rows: Vec<ResidualRow>,
    /// `ε ∫ [div_γ b_t]^- dγ` per row; empty unless the profile is `β_ε`.
    pub one_sided_bound: Vec<f64>,
    /// Rows where `∫(β_ε(u) - uβ_ε'(u)) div_γ b dγ` exceeds
    /// `ε ∫ [div_γ b]^- dγ` under the same quadrature.
    pub one_sided_violations: usize,
    /// Largest `d/dt ∫β_ε(u_t)dγ - ε ∫ [div_γ b_t]^- dγ` with the
    /// differenced left side.
    pub one_sided_worst_excess: f64,
    pub dead_count: usize,
    /// Quadrature weight carried by dead backward trajectories.
    pub dead_weight: f64,
}

impl RenormalizationTable {
    pub fn max_residual(&self) -> f64 {
        self.rows.iter().map(|r| r.residual).fold(0.0, f64::max)
    }
}

/// Where the `γ`-quadrature nodes of [`renormalization_residual`] live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Nodes are the evaluation points `y`; `u_t(y)` comes from backward
    /// integration at every time node.
    #[default]
    Eulerian,
    /// Nodes are starting points `x`; both integrals are pulled back along
    /// the flow, `∫ g(u_t) dγ = ∫ (g(u_t)/u_t)(X_t x) dγ(x)`, with `u_t`
    /// on the trajectory from the forward log-density.
    Lagrangian,
}

/// Per-node values `(u, weight)` of `u_t` at time `grid[k]` for every `k`,
/// plus the node positions where `div_γ b_t` is evaluated.
struct DensityField {
    /// `u[k][i]`.
    u: Vec<Vec<f64>>,
    /// `at[k][i]`: the point carrying `u[k][i]`.
    at: Vec<Vec<Vec<f64>>>,
    dead: Vec<bool>,
}

fn eulerian_densities(f: &FieldSpec, grid: &[f64], ys: &[Vec<f64>], opts: &IntegratorOptions) -> Result<DensityField> {
    let densities: Vec<Vec<BackwardDensity>> =
        (0..grid.len()).map(|k| backward_on_grid(f, grid, k, ys, opts)).collect::<Result<_>>()?;
    let dead = (0..ys.len()).map(|i| densities.iter().any(|d| d[i].dead)).collect();
    Ok(DensityField {
        u: densities.iter().map(|d| d.iter().map(|b| b.density).collect()).collect(),
        at: vec![ys.to_vec(); grid.len()],
        dead,
    })
}

fn lagrangian_densities(
    f: &FieldSpec,
    grid: &[f64],
    xs: &[Vec<f64>],
    opts: &IntegratorOptions,
) -> Result<DensityField> {
    let batch = integrate_flow(f, &InitialPoints::Explicit(xs.to_vec()), grid, opts)?;
    Ok(DensityField {
        u: (0..grid.len()).map(|k| (0..batch.len()).map(|i| batch.log_density[i][k].exp()).collect()).collect(),
        at: (0..grid.len()).map(|k| (0..batch.len()).map(|i| batch.positions[i][k].clone()).collect()).collect(),
        dead: batch.died_at.iter().map(Option::is_some).collect(),
    })
}

/// Evaluates `d/dt ∫β(u_t)dγ` by central differences of quadrature sums of
/// `β(u_t)` against `∫ [β(u_t) - u_tβ'(u_t)] div_γ b_t dγ` on the interior
/// nodes of `grid`. `source`, when given, is subtracted from the
/// differenced side.
pub fn renormalization_residual(
    f: &FieldSpec,
    beta: RenormalizationProfile,
    grid: &[f64],
    quad: &QuadratureScheme,
    placement: Placement,
    opts: &IntegratorOptions,
    source: Option<&dyn Fn(f64) -> f64>,
) -> Result<RenormalizationTable> {
    check_dim(f.dim(), quad.dim())?;
    if grid.len() < 3 {
        return Err(FlowlabError::Config("renormalization residual needs at least three time nodes".into()));
    }
    let nodes: Vec<Vec<f64>> = quad.nodes().map(<[f64]>::to_vec).collect();
    let w = quad.weights();
    let field = match placement {
        Placement::Eulerian => eulerian_densities(f, grid, &nodes, opts)?,
        Placement::Lagrangian => lagrangian_densities(f, grid, &nodes, opts)?,
    };
    let dead = &field.dead;
    let dead_count = dead.iter().filter(|&&d| d).count();
    let dead_weight: f64 = dead.iter().zip(w).filter(|(d, _)| **d).map(|(_, w)| w).sum();
    // integrand of ∫ g(u_t) dγ at node i
    let pulled = |g: f64, u: f64, i: usize| -> f64 {
        if dead[i] {
            0.0
        } else {
            match placement {
                Placement::Eulerian => g,
                Placement::Lagrangian => g / u,
            }
        }
    };
    let beta_vals: Vec<Vec<f64>> =
        field.u.iter().map(|uk| uk.iter().enumerate().map(|(i, &u)| pulled(beta.beta(u), u, i)).collect()).collect();
    let mut table = RenormalizationTable {
        profile: beta,
        placement,
        rows: Vec::with_capacity(grid.len() - 2),
        one_sided_bound: Vec::new(),
        one_sided_violations: 0,
        one_sided_worst_excess: f64::NEG_INFINITY,
        dead_count,
        dead_weight,
    };
    for k in 1..grid.len() - 1 {
        let t = grid[k];
        let dt = grid[k + 1] - grid[k - 1];
        let lhs_pts: Vec<f64> = beta_vals[k + 1].iter().zip(&beta_vals[k - 1]).map(|(a, b)| (a - b) / dt).collect();
        let rhs_pts: Vec<f64> = field.u[k]
            .iter()
            .zip(&field.at[k])
            .enumerate()
            .map(|(i, (&u, y))| pulled(beta.defect(u) * f.gaussian_divergence(t, y), u, i))
            .collect();
        let src = source.map_or(0.0, |s| s(t));
        let lhs = weighted_sum(w, &lhs_pts) - src;
        let rhs = weighted_sum(w, &rhs_pts);
        let std_error = if quad.is_monte_carlo() {
            let d: Vec<f64> = lhs_pts.iter().zip(&rhs_pts).map(|(a, b)| a - b).collect();
            McEstimate::from_samples(&d).std_error
        } else {
            0.0
        };
        table.rows.push(ResidualRow { t, lhs, rhs, residual: (lhs - rhs).abs(), std_error });
        if let RenormalizationProfile::BetaEpsPositivePart { eps } = beta {
            let neg: Vec<f64> = nodes.iter().map(|y| (-f.gaussian_divergence(t, y)).max(0.0)).collect();
            let bound = eps * weighted_sum(w, &neg);
            // the pointwise inequality (β_ε - uβ_ε') div ≤ ε [div]^- integrated
            // with the same weights as rhs
            let pointwise: Vec<f64> = field.u[k]
                .iter()
                .zip(&field.at[k])
                .enumerate()
                .map(|(i, (&u, y))| pulled(eps * (-f.gaussian_divergence(t, y)).max(0.0), u, i))
                .collect();
            if rhs > weighted_sum(w, &pointwise) * (1.0 + 1e-12) + 1e-15 {
                table.one_sided_violations += 1;
            }
            table.one_sided_worst_excess = table.one_sided_worst_excess.max(lhs - bound);
            table.one_sided_bound.push(bound);
        }
    }
    if table.one_sided_bound.is_empty() {
        table.one_sided_worst_excess = 0.0;
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignProbe {
    /// `max_t ∫ u_t⁺ dγ`.
    pub max_positive_mass: f64,
    pub positive_mass: Vec<f64>,
    pub dead_count: usize,
}

/// Transports the signed density `u₀` by `u_t(y) = u₀(X_t⁻¹ y) · u_t(y)` and
/// records `∫ u_t⁺ dγ` on every grid node.
pub fn sign_preservation_probe<U>(
    f: &FieldSpec,
    u0: U,
    grid: &[f64],
    quad: &QuadratureScheme,
    opts: &IntegratorOptions,
) -> Result<SignProbe>
where
    U: Fn(&[f64]) -> f64,
{
    check_dim(f.dim(), quad.dim())?;
    let ys: Vec<Vec<f64>> = quad.nodes().map(<[f64]>::to_vec).collect();
    let mut probe = SignProbe { max_positive_mass: 0.0, positive_mass: Vec::with_capacity(grid.len()), dead_count: 0 };
    let mut dead = vec![false; ys.len()];
    for k in 0..grid.len() {
        let dens = backward_on_grid(f, grid, k, &ys, opts)?;
        let pos: Vec<f64> = dens
            .iter()
            .zip(dead.iter_mut())
            .map(|(d, flag)| {
                *flag |= d.dead;
                if d.dead {
                    0.0
                } else {
                    (u0(&d.origin) * d.density).max(0.0)
                }
            })
            .collect();
        let mass = weighted_sum(quad.weights(), &pos);
        probe.max_positive_mass = probe.max_positive_mass.max(mass);
        probe.positive_mass.push(mass);
    }
    probe.dead_count = dead.iter().filter(|&&d| d).count();
    Ok(probe)
}
