//! Standard Gaussian measure in R^N: quadrature, moments `Λ(p)`, the
//! two-copy rotation and the two cancellation identities used by the
//! commutator estimate.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, FlowlabError, Result};
use crate::quad1d::{gauss_hermite, integrate_adaptive, normal_pdf};
use crate::seed::rng_from_seed;
use crate::stats::{pairwise_sum, weighted_sum};

/// Upper bound on the number of tensor nodes.
pub const MAX_NODES: usize = 10_000_000;

/// Absolute tolerance for the exact quadratic cancellation identity.
pub const CANCELLATION_TOLERANCE: f64 = 1e-8;

/// Node count above which evaluation is spread over the rayon pool.
const PAR_THRESHOLD: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuadratureKind {
    GaussHermite { nodes_per_axis: usize },
    MonteCarlo { sample_count: usize, seed: u64 },
}

/// A rule for expectations against the standard Gaussian `γ` on R^N.
///
/// Weights are probabilists' weights: non-negative and summing to one.
#[derive(Debug, Clone)]
pub struct QuadratureScheme {
    kind: QuadratureKind,
    dim: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// Builds a quadrature scheme of the given kind in dimension `dim`.
///
/// Tensor Gauss–Hermite nodes are enumerated in lexicographic order with the
/// last axis varying fastest. Monte Carlo nodes are i.i.d. standard normals
/// drawn from ChaCha8 seeded with `seed`, row by row.
pub fn make_quadrature(kind: QuadratureKind, dim: usize) -> Result<QuadratureScheme> {
    if dim == 0 {
        return Err(FlowlabError::Config("quadrature dimension must be at least 1".into()));
    }
    match kind {
        QuadratureKind::GaussHermite { nodes_per_axis } => {
            if nodes_per_axis == 0 {
                return Err(FlowlabError::Config("nodes_per_axis must be at least 1".into()));
            }
            let total = (nodes_per_axis as u128)
                .checked_pow(dim as u32)
                .filter(|&t| t <= MAX_NODES as u128)
                .ok_or_else(|| {
                    FlowlabError::Config(format!(
                        "tensor Gauss–Hermite with {nodes_per_axis}^{dim} nodes exceeds {MAX_NODES}"
                    ))
                })? as usize;
            let rule = gauss_hermite(nodes_per_axis);
            let mut nodes = Vec::with_capacity(total * dim);
            let mut weights = Vec::with_capacity(total);
            let mut idx = vec![0usize; dim];
            for _ in 0..total {
                let mut w = 1.0;
                for &i in &idx {
                    nodes.push(rule.nodes[i]);
                    w *= rule.weights[i];
                }
                weights.push(w);
                for axis in (0..dim).rev() {
                    idx[axis] += 1;
                    if idx[axis] < nodes_per_axis {
                        break;
                    }
                    idx[axis] = 0;
                }
            }
            Ok(QuadratureScheme { kind, dim, nodes, weights })
        }
        QuadratureKind::MonteCarlo { sample_count, seed } => {
            if sample_count == 0 {
                return Err(FlowlabError::Config("sample_count must be at least 1".into()));
            }
            let nodes = standard_normal_samples(sample_count, dim, seed);
            let weights = vec![1.0 / sample_count as f64; sample_count];
            Ok(QuadratureScheme { kind, dim, nodes, weights })
        }
    }
}

/// `count` points of dimension `dim` drawn from `γ`, flattened row-major.
pub fn standard_normal_samples(count: usize, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..count * dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Same as [`standard_normal_samples`] but as one `Vec` per point.
pub fn sample_points(count: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    standard_normal_samples(count, dim, seed).chunks(dim).map(<[f64]>::to_vec).collect()
}

impl QuadratureScheme {
    pub fn gauss_hermite(dim: usize, nodes_per_axis: usize) -> Result<Self> {
        make_quadrature(QuadratureKind::GaussHermite { nodes_per_axis }, dim)
    }

    pub fn monte_carlo(dim: usize, sample_count: usize, seed: u64) -> Result<Self> {
        make_quadrature(QuadratureKind::MonteCarlo { sample_count, seed }, dim)
    }

    /// Gauss–Hermite up to dimension 4, seeded Monte Carlo above.
    pub fn default_inner(dim: usize, nodes_per_axis: usize, mc_samples: usize, seed: u64) -> Result<Self> {
        if dim <= 4 {
            Self::gauss_hermite(dim, nodes_per_axis)
        } else {
            Self::monte_carlo(dim, mc_samples, seed)
        }
    }

    pub fn kind(&self) -> QuadratureKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_monte_carlo(&self) -> bool {
        matches!(self.kind, QuadratureKind::MonteCarlo { .. })
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &[f64]> {
        self.nodes.chunks(self.dim)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Evaluates `f` at every node, in node order. The work may be spread over
    /// threads but the output order never changes.
    pub fn evaluate<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&[f64]) -> T + Sync,
    {
        if self.len() >= PAR_THRESHOLD {
            self.nodes.par_chunks(self.dim).map(&f).collect()
        } else {
            self.nodes.chunks(self.dim).map(&f).collect()
        }
    }

    /// `∫ f dγ` as the weighted sum over nodes in node order.
    pub fn expectation<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        self.try_expectation(|x| Ok(f(x)))
    }

    /// As [`Self::expectation`] for fallible integrands.
    pub fn try_expectation<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(&[f64]) -> Result<f64> + Sync,
    {
        let values = self.evaluate_checked(f, "expectation integrand")?;
        Ok(weighted_sum(&self.weights, &values))
    }

    /// Expectation together with its Monte Carlo standard error (zero for
    /// Gauss–Hermite).
    pub fn expectation_with_error<F>(&self, f: F) -> Result<(f64, f64)>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let values = self.evaluate_checked(|x| Ok(f(x)), "expectation integrand")?;
        let mean = weighted_sum(&self.weights, &values);
        if !self.is_monte_carlo() || values.len() < 2 {
            return Ok((mean, 0.0));
        }
        let n = values.len() as f64;
        let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = pairwise_sum(&sq) / (n - 1.0);
        Ok((mean, (var / n).sqrt()))
    }

    /// Componentwise `∫ f dγ` for a vector-valued integrand of length `len`.
    pub fn try_expectation_vec<F>(&self, len: usize, f: F) -> Result<Vec<f64>>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
    {
        let rows = self.evaluate(|x| {
            let v = f(x)?;
            check_dim(len, v.len())?;
            if v.iter().all(|c| c.is_finite()) {
                Ok(v)
            } else {
                Err(FlowlabError::NonFinite { context: "vector integrand", point: x.to_vec() })
            }
        });
        let rows: Vec<Vec<f64>> = rows.into_iter().collect::<Result<_>>()?;
        Ok((0..len)
            .map(|j| {
                let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
                weighted_sum(&self.weights, &col)
            })
            .collect())
    }

    fn evaluate_checked<F>(&self, f: F, context: &'static str) -> Result<Vec<f64>>
    where
        F: Fn(&[f64]) -> Result<f64> + Sync,
    {
        self.evaluate(|x| match f(x) {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(_) => Err(FlowlabError::NonFinite { context, point: x.to_vec() }),
            Err(e) => Err(e),
        })
        .into_iter()
        .collect()
    }
}

/// `Λ(p) = (E|x|^p)^{1/p}` for a one-dimensional standard normal `x`.
///
/// Computed by adaptive Gauss–Kronrod on the half line; no Gamma function is
/// involved.
pub fn lambda_moment(p: f64) -> Result<f64> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(FlowlabError::Domain(format!("Λ(p) needs finite p >= 1, got {p}")));
    }
    if p == 2.0 {
        return Ok(1.0);
    }
    let g = |x: f64| x.powf(p) * normal_pdf(x);
    let half = integrate_adaptive(g, 0.0, 1.0, 1e-18, 1e-14) + integrate_adaptive(g, 1.0, 40.0, 1e-18, 1e-14);
    Ok((2.0 * half).powf(1.0 / p))
}

/// The pair `(p, Λ(p))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub p: f64,
    pub lambda_p: f64,
}

impl MomentTable {
    pub fn new(p: f64) -> Result<Self> {
        Ok(Self { p, lambda_p: lambda_moment(p)? })
    }
}

/// The Gaussian rotation of `γ ⊗ γ`:
/// `z = e^{-ε}x + √(1-e^{-2ε}) y`, `w = -√(1-e^{-2ε}) x + e^{-ε} y`.
pub fn gaussian_rotation(x: &[f64], y: &[f64], eps: f64) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(x.len(), y.len(), "rotation needs points of equal dimension");
    let c = (-eps).exp();
    let s = (-(-2.0 * eps).exp_m1()).sqrt();
    let z = x.iter().zip(y).map(|(a, b)| c * a + s * b).collect();
    let w = x.iter().zip(y).map(|(a, b)| -s * a + c * b).collect();
    (z, w)
}

/// Both sides of an identity checked by quadrature, with the quadrature's
/// standard error on the left side (zero for deterministic rules).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub lhs_std_error: f64,
}

impl IdentityCheck {
    pub fn abs_diff(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

/// Compares `(∫|l·w|^p dγ(w))^{1/p}` against `Λ(p)|l|`.
pub fn moment_identity_check(l: &[f64], p: f64, quad: &QuadratureScheme) -> Result<IdentityCheck> {
    check_dim(quad.dim(), l.len())?;
    let rhs = lambda_moment(p)? * l.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (m, se) = quad.expectation_with_error(|w| dot(l, w).abs().powf(p))?;
    if m == 0.0 {
        return Ok(IdentityCheck { lhs: 0.0, rhs, lhs_std_error: 0.0 });
    }
    let lhs = m.powf(1.0 / p);
    // delta method for m ↦ m^{1/p}
    let lhs_std_error = se * lhs / (p * m);
    Ok(IdentityCheck { lhs, rhs, lhs_std_error })
}

fn quadratic_form(a: &DMatrix<f64>, w: &[f64]) -> f64 {
    let n = w.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += a[(i, j)] * w[i] * w[j];
        }
    }
    s
}

/// Symmetric part `(A + Aᵀ)/2`.
pub fn symmetric_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Hilbert–Schmidt (Frobenius) norm.
pub fn hs_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Compares `∫|⟨Aw,w⟩ - c|² dγ` with `2‖A^sym‖²_HS + (tr A - c)²`.
pub fn quadratic_cancellation(a: &DMatrix<f64>, c: f64, quad: &QuadratureScheme) -> Result<IdentityCheck> {
    square_check(a, quad)?;
    let sym = hs_norm(&symmetric_part(a));
    let rhs = 2.0 * sym * sym + (a.trace() - c).powi(2);
    let (lhs, se) = quad.expectation_with_error(|w| (quadratic_form(a, w) - c).powi(2))?;
    Ok(IdentityCheck { lhs, rhs, lhs_std_error: se })
}

/// For `q ∈ [1, 2]`: `(∫|⟨Aw,w⟩ - c|^q dγ)^{1/q}` against the Hölder bound
/// `√2‖A^sym‖_HS + |tr A - c|`.
pub fn quadratic_deviation_norm(a: &DMatrix<f64>, c: f64, q: f64, quad: &QuadratureScheme) -> Result<IdentityCheck> {
    square_check(a, quad)?;
    if !(1.0..=2.0).contains(&q) {
        return Err(FlowlabError::Domain(format!("q must lie in [1, 2], got {q}")));
    }
    let rhs = std::f64::consts::SQRT_2 * hs_norm(&symmetric_part(a)) + (a.trace() - c).abs();
    let (m, se) = quad.expectation_with_error(|w| (quadratic_form(a, w) - c).abs().powf(q))?;
    let lhs = m.powf(1.0 / q);
    let lhs_std_error = if m > 0.0 { se * lhs / (q * m) } else { 0.0 };
    Ok(IdentityCheck { lhs, rhs, lhs_std_error })
}

fn square_check(a: &DMatrix<f64>, quad: &QuadratureScheme) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(FlowlabError::Domain(format!("matrix must be square, got {}x{}", a.nrows(), a.ncols())));
    }
    check_dim(quad.dim(), a.nrows())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
