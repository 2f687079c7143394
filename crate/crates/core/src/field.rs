//! Time-dependent vector fields on R^N with their Gaussian calculus:
//! `div_γ`, symmetric gradient, Hilbert–Schmidt and `LD^q` norms,
//! cylindrical projections, Ornstein–Uhlenbeck smoothing and rotations.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, FlowlabError, Result};
use crate::gaussian::{dot, norm, symmetric_part, QuadratureScheme};
use crate::ou::OuOperator;
use crate::rotation::RotationGroup;

pub use crate::gaussian::hs_norm;

pub type ValueFn = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// A vector field `b_t(x)` on `[0, T] × R^N`.
///
/// Optional callbacks provide the Jacobian `∂_j b^i`, the Euclidean
/// divergence and the Gaussian divergence in closed form; whatever is missing
/// is derived (trace of the Jacobian, central finite differences).
#[derive(Clone)]
pub struct FieldSpec {
    name: String,
    dim: usize,
    horizon: f64,
    value: ValueFn,
    jacobian: Option<JacobianFn>,
    divergence: Option<ScalarFn>,
    gaussian_divergence: Option<ScalarFn>,
    p: f64,
    q: f64,
    fd_step: Option<f64>,
}

impl fmt::Debug for FieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FieldSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("horizon", &self.horizon)
            .field("jacobian", &self.jacobian.is_some())
            .field("divergence", &self.divergence.is_some())
            .field("gaussian_divergence", &self.gaussian_divergence.is_some())
            .field("p", &self.p)
            .field("q", &self.q)
            .finish()
    }
}

impl FieldSpec {
    pub fn new<F>(name: impl Into<String>, dim: usize, value: F) -> Self
    where
        F: Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dim,
            horizon: 1.0,
            value: Arc::new(value),
            jacobian: None,
            divergence: None,
            gaussian_divergence: None,
            p: 2.0,
            q: 2.0,
            fd_step: None,
        }
    }

    pub fn with_jacobian<F>(mut self, jac: F) -> Self
    where
        F: Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    pub fn with_divergence<F>(mut self, div: F) -> Self
    where
        F: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        self.divergence = Some(Arc::new(div));
        self
    }

    pub fn with_gaussian_divergence<F>(mut self, div: F) -> Self
    where
        F: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        self.gaussian_divergence = Some(Arc::new(div));
        self
    }

    /// Sets the integrability exponents; `p > 1` and `q ∈ (1, 2]`.
    pub fn with_exponents(mut self, p: f64, q: f64) -> Result<Self> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(FlowlabError::Config(format!("exponent p must be > 1, got {p}")));
        }
        if !(q > 1.0 && q <= 2.0) {
            return Err(FlowlabError::Config(format!("exponent q must lie in (1, 2], got {q}")));
        }
        self.p = p;
        self.q = q;
        Ok(self)
    }

    pub fn with_horizon(mut self, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(FlowlabError::Config(format!("horizon must be positive, got {horizon}")));
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn with_fd_step(mut self, h: f64) -> Self {
        self.fd_step = Some(h);
        self
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// `r = max{p', q'}`.
    pub fn r_exponent(&self) -> f64 {
        conjugate(self.p).max(conjugate(self.q))
    }

    pub fn has_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn value(&self, t: f64, x: &[f64]) -> Vec<f64> {
        (self.value)(t, x)
    }

    /// Jacobian `J_ij = ∂_j b^i`, analytic when available, else central
    /// finite differences.
    pub fn jacobian(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        match &self.jacobian {
            Some(j) => j(t, x),
            None => self.fd_jacobian(t, x),
        }
    }

    /// Central-difference Jacobian with step `h = ε^{1/3} max(1, |x|)`
    /// unless a fixed step was configured.
    pub fn fd_jacobian(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let h = self.fd_step.unwrap_or_else(|| f64::EPSILON.cbrt() * norm(x).max(1.0));
        let n = self.dim;
        let mut jac = DMatrix::zeros(n, n);
        let mut xp = x.to_vec();
        for j in 0..n {
            xp[j] = x[j] + h;
            let fp = self.value(t, &xp);
            xp[j] = x[j] - h;
            let fm = self.value(t, &xp);
            xp[j] = x[j];
            for i in 0..n {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        jac
    }

    /// Euclidean divergence `div b`.
    pub fn divergence(&self, t: f64, x: &[f64]) -> f64 {
        match &self.divergence {
            Some(d) => d(t, x),
            None => self.jacobian(t, x).trace(),
        }
    }

    /// `div_γ b = div b - ⟨b, x⟩`.
    pub fn gaussian_divergence(&self, t: f64, x: &[f64]) -> f64 {
        match &self.gaussian_divergence {
            Some(d) => d(t, x),
            None => self.divergence(t, x) - dot(&self.value(t, x), x),
        }
    }

    /// `(b_t(x), div b_t(x), div_γ b_t(x))`, evaluating the field once.
    pub fn transport_rates(&self, t: f64, x: &[f64]) -> (Vec<f64>, f64, f64) {
        let b = self.value(t, x);
        let div = self.divergence(t, x);
        let gdiv = match &self.gaussian_divergence {
            Some(d) => d(t, x),
            None => div - dot(&b, x),
        };
        (b, div, gdiv)
    }

    /// `(∇b)^sym`, exactly symmetric.
    pub fn symmetric_gradient(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        symmetric_part(&self.jacobian(t, x))
    }

    /// The field frozen at time `t`.
    pub fn snapshot(&self, t: f64) -> Snapshot<'_> {
        Snapshot { field: self, t }
    }

    /// Largest componentwise discrepancy between the analytic and the
    /// finite-difference Jacobian over `probes`, or `None` without an
    /// analytic Jacobian.
    pub fn jacobian_fd_discrepancy(&self, t: f64, probes: &[Vec<f64>]) -> Option<f64> {
        let jac = self.jacobian.as_ref()?;
        Some(probes.iter().map(|x| (jac(t, x) - self.fd_jacobian(t, x)).amax()).fold(0.0, f64::max))
    }

    /// Largest `|div b - tr ∇b|` over `probes` when both are available.
    pub fn divergence_trace_discrepancy(&self, t: f64, probes: &[Vec<f64>]) -> Option<f64> {
        let div = self.divergence.as_ref()?;
        Some(probes.iter().map(|x| (div(t, x) - self.jacobian(t, x).trace()).abs()).fold(0.0, f64::max))
    }
}

/// `p' = p / (p - 1)`.
pub fn conjugate(p: f64) -> f64 {
    if p.is_infinite() {
        1.0
    } else if p <= 1.0 {
        f64::INFINITY
    } else {
        p / (p - 1.0)
    }
}

/// A field frozen at a fixed time.
#[derive(Clone, Copy)]
pub struct Snapshot<'a> {
    pub field: &'a FieldSpec,
    pub t: f64,
}

impl Snapshot<'_> {
    pub fn dim(&self) -> usize {
        self.field.dim
    }

    pub fn value(&self, x: &[f64]) -> Vec<f64> {
        self.field.value(self.t, x)
    }

    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        self.field.jacobian(self.t, x)
    }

    pub fn gaussian_divergence(&self, x: &[f64]) -> f64 {
        self.field.gaussian_divergence(self.t, x)
    }

    pub fn symmetric_gradient(&self, x: &[f64]) -> DMatrix<f64> {
        self.field.symmetric_gradient(self.t, x)
    }
}

/// `div_γ b(t, x)`.
pub fn gaussian_divergence(f: &FieldSpec, t: f64, x: &[f64]) -> f64 {
    f.gaussian_divergence(t, x)
}

/// `(∇b_t)^sym(x)`.
pub fn symmetric_gradient(f: &FieldSpec, t: f64, x: &[f64]) -> DMatrix<f64> {
    f.symmetric_gradient(t, x)
}

/// `∫₀ᵀ (∫ ‖(∇b_t)^sym‖^q_HS dγ)^{1/q} dt` with the trapezoid rule over
/// `time_nodes` and `quad` in space.
pub fn ld_seminorm(f: &FieldSpec, q: f64, quad: &QuadratureScheme, time_nodes: &[f64]) -> Result<f64> {
    if !(q > 1.0 && q <= 2.0) {
        return Err(FlowlabError::Domain(format!("q must lie in (1, 2], got {q}")));
    }
    check_dim(f.dim(), quad.dim())?;
    let inner: Vec<f64> = time_nodes
        .iter()
        .map(|&t| Ok(quad.expectation(|x| hs_norm(&f.symmetric_gradient(t, x)).powf(q))?.powf(1.0 / q)))
        .collect::<Result<_>>()?;
    if time_nodes.len() == 1 {
        return Ok(inner[0] * f.horizon());
    }
    Ok(time_nodes.windows(2).zip(inner.windows(2)).map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1])).sum())
}

/// Conditional expectation onto the first `m` coordinates: component
/// `i < m` of the result at `(t, x₁..x_m)` is `∫ b^i(t, x, y) dγ_{N-m}(y)`,
/// with the trailing coordinates integrated by `quad_tail`.
pub fn cylindrical_projection(f: &FieldSpec, m: usize, quad_tail: Arc<QuadratureScheme>) -> Result<FieldSpec> {
    let n = f.dim();
    if m == 0 || m >= n {
        return Err(FlowlabError::Domain(format!("projection needs 1 <= M < N, got M={m}, N={n}")));
    }
    check_dim(n - m, quad_tail.dim())?;
    let extend = move |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().chain(y).copied().collect() };

    let (fv, qv) = (f.clone(), quad_tail.clone());
    let value = move |t: f64, x: &[f64]| {
        qv.try_expectation_vec(m, |y| Ok(fv.value(t, &extend(x, y))[..m].to_vec()))
            .unwrap_or_else(|_| vec![f64::NAN; m])
    };
    let (fj, qj) = (f.clone(), quad_tail.clone());
    let jacobian = move |t: f64, x: &[f64]| {
        let flat = qj
            .try_expectation_vec(m * m, |y| {
                let jac = fj.jacobian(t, &extend(x, y));
                Ok((0..m).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| jac[(i, j)]).collect())
            })
            .unwrap_or_else(|_| vec![f64::NAN; m * m]);
        DMatrix::from_row_slice(m, m, &flat)
    };
    let (fg, qg) = (f.clone(), quad_tail);
    let gdiv =
        move |t: f64, x: &[f64]| qg.expectation(|y| fg.gaussian_divergence(t, &extend(x, y))).unwrap_or(f64::NAN);
    let mut out =
        FieldSpec::new(format!("{}|E_{m}", f.name()), m, value).with_jacobian(jacobian).with_gaussian_divergence(gdiv);
    out.horizon = f.horizon;
    out.p = f.p;
    out.q = f.q;
    Ok(out)
}

/// Ornstein–Uhlenbeck smoothing `b_ε^i = T_ε b^i`.
///
/// The smoothed field carries the Mehler-gradient Jacobian and the Gaussian
/// divergence `div_γ b_ε = e^{ε} T_ε(div_γ b)`.
pub fn smooth_field(f: &FieldSpec, eps: f64, inner: Arc<QuadratureScheme>) -> Result<FieldSpec> {
    if !(eps > 0.0) {
        return Err(FlowlabError::Domain(format!("smoothing parameter must be positive, got {eps}")));
    }
    check_dim(f.dim(), inner.dim())?;
    let op = OuOperator::new(eps, inner)?;
    let n = f.dim();
    let growth = eps.exp();

    let (fv, ov) = (f.clone(), op.clone());
    let value = move |t: f64, x: &[f64]| ov.apply_vec(|z| fv.value(t, z), n, x).unwrap_or_else(|_| vec![f64::NAN; n]);
    let (fj, oj) = (f.clone(), op.clone());
    let jacobian = move |t: f64, x: &[f64]| {
        let (a, s) = oj.coefficients();
        let scale = a / s;
        let flat = oj
            .inner()
            .try_expectation_vec(n * n, |y| {
                let z = oj.shifted(x, y);
                let b = fj.value(t, &z);
                Ok((0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| scale * b[i] * y[j]).collect())
            })
            .unwrap_or_else(|_| vec![f64::NAN; n * n]);
        DMatrix::from_row_slice(n, n, &flat)
    };
    let (fg, og) = (f.clone(), op.clone());
    let gdiv = move |t: f64, x: &[f64]| growth * og.apply(|z| fg.gaussian_divergence(t, z), x).unwrap_or(f64::NAN);
    let (fd, od) = (f.clone(), op);
    let div = move |t: f64, x: &[f64]| {
        let g = growth * od.apply(|z| fd.gaussian_divergence(t, z), x).unwrap_or(f64::NAN);
        let b = od.apply_vec(|z| fd.value(t, z), n, x).unwrap_or_else(|_| vec![f64::NAN; n]);
        g + dot(&b, x)
    };
    let mut out = FieldSpec::new(format!("T_{eps}({})", f.name()), n, value)
        .with_jacobian(jacobian)
        .with_divergence(div)
        .with_gaussian_divergence(gdiv);
    out.horizon = f.horizon;
    out.p = f.p;
    out.q = f.q;
    Ok(out)
}

fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (m * DVector::from_column_slice(v)).iter().copied().collect()
}

/// The rotated field `c_t(x) = Q_{-t} b_t(Q_t x)`.
pub fn rotate_field(f: &FieldSpec, group: &RotationGroup) -> Result<FieldSpec> {
    check_dim(f.dim(), group.dim())?;
    let (fv, gv) = (f.clone(), group.clone());
    let value = move |t: f64, x: &[f64]| {
        let q = gv.at(t);
        let b = fv.value(t, &mat_vec(&q, x));
        mat_vec(&q.transpose(), &b)
    };
    let (fj, gj) = (f.clone(), group.clone());
    let jacobian = move |t: f64, x: &[f64]| {
        let q = gj.at(t);
        q.transpose() * fj.jacobian(t, &mat_vec(&q, x)) * &q
    };
    let (fd, gd) = (f.clone(), group.clone());
    let div = move |t: f64, x: &[f64]| fd.divergence(t, &mat_vec(&gd.at(t), x));
    let (fg, gg) = (f.clone(), group.clone());
    let gdiv = move |t: f64, x: &[f64]| fg.gaussian_divergence(t, &mat_vec(&gg.at(t), x));
    let mut out = FieldSpec::new(format!("rot({})", f.name()), f.dim(), value)
        .with_jacobian(jacobian)
        .with_divergence(div)
        .with_gaussian_divergence(gdiv);
    out.horizon = f.horizon;
    out.p = f.p;
    out.q = f.q;
    Ok(out)
}

/// Built-in fields.
pub mod catalogue {
    use super::*;

    pub fn zero(dim: usize) -> FieldSpec {
        constant(vec![0.0; dim])
    }

    /// `b ≡ v`.
    pub fn constant(v: Vec<f64>) -> FieldSpec {
        let n = v.len();
        let vv = v.clone();
        let vg = v;
        FieldSpec::new("constant", n, move |_, _| vv.clone())
            .with_jacobian(move |_, _| DMatrix::zeros(n, n))
            .with_divergence(|_, _| 0.0)
            .with_gaussian_divergence(move |_, x| -dot(&vg, x))
    }

    /// `b(x) = Ax`.
    pub fn linear(a: DMatrix<f64>) -> FieldSpec {
        let n = a.nrows();
        let tr = a.trace();
        let (av, aj, ag) = (a.clone(), a.clone(), a);
        FieldSpec::new("linear", n, move |_, x| mat_vec(&av, x))
            .with_jacobian(move |_, _| aj.clone())
            .with_divergence(move |_, _| tr)
            .with_gaussian_divergence(move |_, x| tr - dot(&mat_vec(&ag, x), x))
    }

    /// `b(x) = ω(-x₂, x₁, 0, …)`; divergence free for both `div` and `div_γ`.
    pub fn rotation(dim: usize, omega: f64) -> FieldSpec {
        assert!(dim >= 2, "rotation field needs dim >= 2");
        FieldSpec::new("rotation", dim, move |_, x| {
            let mut v = vec![0.0; x.len()];
            v[0] = -omega * x[1];
            v[1] = omega * x[0];
            v
        })
        .with_jacobian(move |_, _| {
            let mut j = DMatrix::zeros(dim, dim);
            j[(0, 1)] = -omega;
            j[(1, 0)] = omega;
            j
        })
        .with_divergence(|_, _| 0.0)
        .with_gaussian_divergence(|_, _| 0.0)
    }

    /// `b(x) = -x (1 + a sin x₁)`.
    pub fn gradient_perturbation(dim: usize, a: f64) -> FieldSpec {
        FieldSpec::new("gradient_perturbation", dim, move |_, x| {
            let s = 1.0 + a * x[0].sin();
            x.iter().map(|xi| -xi * s).collect()
        })
        .with_jacobian(move |_, x| {
            let s = 1.0 + a * x[0].sin();
            let c = a * x[0].cos();
            let mut j = DMatrix::zeros(dim, dim);
            for i in 0..dim {
                j[(i, i)] = -s;
                j[(i, 0)] -= x[i] * c;
            }
            j
        })
        .with_divergence(move |_, x| -(dim as f64) * (1.0 + a * x[0].sin()) - a * x[0] * x[0].cos())
    }

    /// `b(x) = x / max(|x|, δ)^{1-α}`: Hölder-type growth near the origin
    /// with Lipschitz constant `δ^{α-1}`.
    pub fn low_regularity(dim: usize, alpha: f64, delta: f64) -> FieldSpec {
        assert!(alpha > 0.0 && alpha < 1.0 && delta > 0.0);
        let scale = move |x: &[f64]| norm(x).max(delta).powf(alpha - 1.0);
        FieldSpec::new("low_regularity", dim, move |_, x| {
            let s = scale(x);
            x.iter().map(|xi| s * xi).collect()
        })
        .with_jacobian(move |_, x| {
            let r = norm(x);
            let s = scale(x);
            let mut j = DMatrix::identity(dim, dim) * s;
            if r > delta {
                for i in 0..dim {
                    for k in 0..dim {
                        j[(i, k)] += s * (alpha - 1.0) * x[i] * x[k] / (r * r);
                    }
                }
            }
            j
        })
        .with_divergence(move |_, x| {
            let s = scale(x);
            if norm(x) > delta {
                s * (dim as f64 + alpha - 1.0)
            } else {
                s * dim as f64
            }
        })
    }

    /// `b^i(x) = sin(x_i) - x_i / 2`: each component depends on its own
    /// coordinate only, so the family over N is exactly consistent.
    pub fn product_sine(dim: usize) -> FieldSpec {
        FieldSpec::new("product_sine", dim, |_, x| x.iter().map(|xi| xi.sin() - 0.5 * xi).collect())
            .with_jacobian(move |_, x| {
                DMatrix::from_diagonal(&DVector::from_iterator(dim, x.iter().map(|xi| xi.cos() - 0.5)))
            })
            .with_divergence(|_, x| x.iter().map(|xi| xi.cos() - 0.5).sum())
    }

    /// `b^i(x) = sin(x_i) - x_i/2 + κ Σ_{j≠i} 2^{-j} x_j` (coordinates counted
    /// from 1). The member in R^N is the conditional expectation of the member
    /// in R^{N+1}, so the family is consistent.
    pub fn weakly_coupled(dim: usize, kappa: f64) -> FieldSpec {
        let weights: Vec<f64> = (1..=dim).map(|j| kappa * 0.5f64.powi(j as i32)).collect();
        let wv = weights.clone();
        FieldSpec::new("weakly_coupled", dim, move |_, x| {
            let total: f64 = wv.iter().zip(x).map(|(w, xj)| w * xj).sum();
            x.iter().zip(&wv).map(|(xi, w)| xi.sin() - 0.5 * xi + total - w * xi).collect()
        })
        .with_jacobian(move |_, x| {
            let mut j = DMatrix::zeros(dim, dim);
            for i in 0..dim {
                for k in 0..dim {
                    j[(i, k)] = if i == k { x[i].cos() - 0.5 } else { weights[k] };
                }
            }
            j
        })
    }

    /// The fixed test-field suite in dimension `dim >= 2`: constant, linear,
    /// rotation, gradient perturbation and low regularity.
    pub fn suite(dim: usize) -> Vec<FieldSpec> {
        let mut v = vec![0.0; dim];
        v[0] = 1.0;
        vec![
            constant(v),
            linear(default_linear_matrix(dim)),
            rotation(dim, 1.0),
            gradient_perturbation(dim, 0.5),
            low_regularity(dim, 0.5, 1e-3),
        ]
    }

    /// A fixed non-symmetric matrix with moderate entries used by the suite.
    pub fn default_linear_matrix(dim: usize) -> DMatrix<f64> {
        DMatrix::from_fn(dim, dim, |i, j| match (i, j) {
            (i, j) if i == j => -0.3 + 0.1 * i as f64,
            (0, 1) => 0.5,
            (1, 0) => -0.2,
            _ => 0.05 * (i as f64 - j as f64),
        })
    }

    /// Names accepted by `custom_named` descriptors.
    pub const NAMED: &[(&str, &str)] = &[
        ("zero", "b ≡ 0"),
        ("gradient_perturbation", "b(x) = -x (1 + a sin x1); params: a (default 0.5)"),
        ("low_regularity", "b(x) = x / max(|x|, delta)^(1 - alpha); params: alpha (0.5), delta (1e-3)"),
        ("product_sine", "b^i(x) = sin(x_i) - x_i/2"),
        ("weakly_coupled", "b^i(x) = sin(x_i) - x_i/2 + kappa sum_{j!=i} 2^-j x_j; params: kappa (0.2)"),
    ];
}

fn default_half() -> f64 {
    0.5
}
fn default_delta() -> f64 {
    1e-3
}
fn default_kappa() -> f64 {
    0.2
}
fn default_omega() -> f64 {
    1.0
}

/// Field catalogue entries addressable from JSON as
/// `{"kind": ..., "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldDescriptor {
    Constant {
        v: Vec<f64>,
    },
    Linear {
        a: Vec<Vec<f64>>,
    },
    Rotation {
        #[serde(default = "default_omega")]
        omega: f64,
    },
    CustomNamed(NamedField),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum NamedField {
    Zero,
    GradientPerturbation {
        #[serde(default = "default_half")]
        a: f64,
    },
    LowRegularity {
        #[serde(default = "default_half")]
        alpha: f64,
        #[serde(default = "default_delta")]
        delta: f64,
    },
    ProductSine,
    WeaklyCoupled {
        #[serde(default = "default_kappa")]
        kappa: f64,
    },
}

impl FieldDescriptor {
    /// Builds the field in dimension `dim`.
    pub fn build(&self, dim: usize) -> Result<FieldSpec> {
        if dim == 0 {
            return Err(FlowlabError::Config("field dimension must be at least 1".into()));
        }
        Ok(match self {
            Self::Constant { v } => {
                check_dim_cfg(dim, v.len(), "constant field vector")?;
                catalogue::constant(v.clone())
            }
            Self::Linear { a } => {
                check_dim_cfg(dim, a.len(), "linear field matrix rows")?;
                for row in a {
                    check_dim_cfg(dim, row.len(), "linear field matrix columns")?;
                }
                catalogue::linear(DMatrix::from_fn(dim, dim, |i, j| a[i][j]))
            }
            Self::Rotation { omega } => {
                if dim < 2 {
                    return Err(FlowlabError::Config("rotation field needs dim >= 2".into()));
                }
                catalogue::rotation(dim, *omega)
            }
            Self::CustomNamed(named) => match named {
                NamedField::Zero => catalogue::zero(dim),
                NamedField::GradientPerturbation { a } => catalogue::gradient_perturbation(dim, *a),
                NamedField::LowRegularity { alpha, delta } => {
                    if !(*alpha > 0.0 && *alpha < 1.0 && *delta > 0.0) {
                        return Err(FlowlabError::Config("low_regularity needs alpha in (0,1) and delta > 0".into()));
                    }
                    catalogue::low_regularity(dim, *alpha, *delta)
                }
                NamedField::ProductSine => catalogue::product_sine(dim),
                NamedField::WeaklyCoupled { kappa } => catalogue::weakly_coupled(dim, *kappa),
            },
        })
    }

    /// Whether the catalogue entry is smooth (excludes the low-regularity field).
    pub fn is_smooth(&self) -> bool {
        !matches!(self, Self::CustomNamed(NamedField::LowRegularity { .. }))
    }
}

fn check_dim_cfg(expected: usize, got: usize, what: &str) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(FlowlabError::Config(format!("{what}: expected length {expected}, got {got}")))
    }
}

#[cfg(test)]
mod tests {
    use super::catalogue::*;
    use super::*;

    #[test]
    fn gaussian_divergence_examples() {
        let c = constant(vec![2.0, -1.0]);
        assert_eq!(c.gaussian_divergence(0.0, &[0.5, 3.0]), -(1.0 - 3.0));
        let id = FieldSpec::new("id", 1, |_, x| x.to_vec());
        assert!((id.gaussian_divergence(0.0, &[1.3]) - (1.0 - 1.69)).abs() < 1e-9);
        let rot = FieldSpec::new("rot-fd", 2, |_, x| vec![-x[1], x[0]]);
        assert!(rot.gaussian_divergence(0.0, &[0.7, -2.1]).abs() < 1e-9);
    }

    #[test]
    fn symmetric_gradient_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -4.0, 3.0]);
        let s = linear(a.clone()).symmetric_gradient(0.0, &[0.1, 0.2]);
        assert_eq!(s, (&a + a.transpose()) * 0.5);
        assert_eq!(rotation(2, 1.0).symmetric_gradient(0.0, &[1.0, 2.0]), DMatrix::zeros(2, 2));
        let fd = FieldSpec::new("fd-lin", 2, move |_, x| vec![x[0] + 2.0 * x[1], -4.0 * x[0] + 3.0 * x[1]]);
        let s_fd = fd.symmetric_gradient(0.0, &[0.3, 0.9]);
        assert_eq!(s_fd, s_fd.transpose());
        assert!((s_fd - s).amax() < 1e-8);
    }

    #[test]
    fn hs_norm_examples() {
        assert!((hs_norm(&DMatrix::identity(3, 3)) - 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(hs_norm(&DMatrix::zeros(2, 2)), 0.0);
        assert_eq!(hs_norm(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0])), 1.0);
    }

    #[test]
    fn ld_seminorm_examples() {
        let quad = QuadratureScheme::gauss_hermite(2, 3).unwrap();
        let times = [0.0, 0.25, 0.5, 0.75, 1.0];
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -4.0, 3.0]);
        let want = hs_norm(&symmetric_part(&a));
        let got = ld_seminorm(&linear(a), 2.0, &quad, &times).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!(ld_seminorm(&rotation(2, 1.0), 2.0, &quad, &times).unwrap().abs() < 1e-15);
        assert_eq!(ld_seminorm(&constant(vec![1.0, 1.0]), 1.5, &quad, &times).unwrap(), 0.0);
        assert!(ld_seminorm(&constant(vec![1.0, 1.0]), 2.5, &quad, &times).is_err());
    }

    #[test]
    fn projection_examples() {
        let tail = Arc::new(QuadratureScheme::gauss_hermite(1, 4).unwrap());
        let f = FieldSpec::new("x1x2", 2, |_, x| vec![x[0] * x[1], 0.0]);
        let p = cylindrical_projection(&f, 1, tail.clone()).unwrap();
        assert!(p.value(0.0, &[1.7])[0].abs() < 1e-14);
        let g = FieldSpec::new("x1x2sq", 2, |_, x| vec![x[0] * x[1] * x[1], 0.0]);
        let p = cylindrical_projection(&g, 1, tail.clone()).unwrap();
        assert!((p.value(0.0, &[1.7])[0] - 1.7).abs() < 1e-13);
        let prod = product_sine(2);
        let p = cylindrical_projection(&prod, 1, tail.clone()).unwrap();
        assert!((p.value(0.0, &[0.4])[0] - (0.4f64.sin() - 0.2)).abs() < 1e-14);
        assert!(cylindrical_projection(&prod, 2, tail).is_err());
    }

    #[test]
    fn weakly_coupled_family_is_consistent() {
        let tail = Arc::new(QuadratureScheme::gauss_hermite(2, 3).unwrap());
        let big = weakly_coupled(5, 0.3);
        let small = weakly_coupled(3, 0.3);
        let proj = cylindrical_projection(&big, 3, tail).unwrap();
        for x in [[0.1, -0.5, 1.2], [2.0, 0.3, -0.7]] {
            let a = proj.value(0.0, &x);
            let b = small.value(0.0, &x);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn smoothing_examples() {
        let inner = Arc::new(QuadratureScheme::gauss_hermite(2, 6).unwrap());
        let eps = 0.25;
        let c = smooth_field(&constant(vec![1.0, -2.0]), eps, inner.clone()).unwrap();
        let v = c.value(0.0, &[0.3, 0.4]);
        assert!((v[0] - 1.0).abs() < 1e-14 && (v[1] + 2.0).abs() < 1e-14);
        let a = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 2.0, 0.1]);
        let s = smooth_field(&linear(a.clone()), eps, inner).unwrap();
        let x = [0.8, -1.1];
        let want = mat_vec(&a, &x);
        let got = s.value(0.0, &x);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - (-eps).exp() * w).abs() < 1e-13);
        }
        // Jacobian of T_ε(Ax) is e^{-ε}A
        assert!((s.jacobian(0.0, &x) - &a * (-eps).exp()).amax() < 1e-13);
        // div_γ(e^{-ε}Ax) = e^{-ε}(tr A - ⟨Ax, x⟩)
        let want = (-eps).exp() * (a.trace() - dot(&mat_vec(&a, &x), &x));
        assert!((s.gaussian_divergence(0.0, &x) - want).abs() < 1e-12);
        let via_trace = s.jacobian(0.0, &x).trace() - dot(&s.value(0.0, &x), &x);
        assert!((s.divergence(0.0, &x) - s.jacobian(0.0, &x).trace()).abs() < 1e-12);
        assert!((via_trace - want).abs() < 1e-12);
        assert!(smooth_field(&linear(a), 0.0, Arc::new(QuadratureScheme::gauss_hermite(2, 2).unwrap())).is_err());
    }

    #[test]
    fn rotation_transform_examples() {
        let g = RotationGroup::planar(2, 1.0).unwrap();
        let id = FieldSpec::new("id", 2, |_, x| x.to_vec());
        let c = rotate_field(&id, &g).unwrap();
        let v = c.value(0.9, &[0.3, -1.4]);
        assert!((v[0] - 0.3).abs() < 1e-14 && (v[1] + 1.4).abs() < 1e-14);
        let k = rotate_field(&constant(vec![3.0, 4.0]), &g).unwrap();
        assert!((norm(&k.value(1.3, &[0.0, 0.0])) - 5.0).abs() < 1e-13);
        let same = rotate_field(&constant(vec![3.0, 4.0]), &RotationGroup::identity(2)).unwrap();
        assert_eq!(same.value(0.4, &[1.0, 1.0]), vec![3.0, 4.0]);
    }

    #[test]
    fn descriptor_parsing() {
        let d: FieldDescriptor = serde_json::from_str(r#"{"kind":"constant","params":{"v":[1.0,2.0]}}"#).unwrap();
        assert_eq!(d.build(2).unwrap().value(0.0, &[0.0, 0.0]), vec![1.0, 2.0]);
        assert!(d.build(3).is_err());
        let d: FieldDescriptor =
            serde_json::from_str(r#"{"kind":"custom_named","params":{"name":"low_regularity","alpha":0.3}}"#).unwrap();
        assert!(!d.is_smooth());
        assert_eq!(d.build(2).unwrap().name(), "low_regularity");
        assert!(serde_json::from_str::<FieldDescriptor>(r#"{"kind":"python","params":{}}"#).is_err());
        let d: FieldDescriptor = serde_json::from_str(r#"{"kind":"rotation","params":{}}"#).unwrap();
        assert!(d.build(1).is_err());
    }

    #[test]
    fn r_exponent_is_max_conjugate() {
        let f = constant(vec![1.0]).with_exponents(4.0, 1.5).unwrap();
        assert!((f.r_exponent() - 3.0).abs() < 1e-15);
        assert!(constant(vec![1.0]).with_exponents(1.0, 2.0).is_err());
        assert!(constant(vec![1.0]).with_exponents(2.0, 2.5).is_err());
    }
}
