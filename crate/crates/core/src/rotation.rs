//! One-parameter groups of orthogonal matrices `Q_t = exp(tL)` with `L`
//! skew-symmetric.

use nalgebra::DMatrix;

use crate::error::{FlowlabError, Result};

/// Matrix exponential by scaling and squaring with a degree-18 Taylor
/// polynomial (Horner form).
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "expm needs a square matrix");
    let n = a.nrows();
    let norm1 = (0..n).map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let squarings = if norm1 > 0.5 { (norm1 / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = a / 2f64.powi(squarings);
    let id = DMatrix::<f64>::identity(n, n);
    let mut result = id.clone();
    for k in (1..=18).rev() {
        result = &id + (&scaled * &result) / f64::from(k);
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// The group `t ↦ exp(tL)` generated by a skew-symmetric `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationGroup {
    generator: DMatrix<f64>,
}

impl RotationGroup {
    pub fn new(generator: DMatrix<f64>) -> Result<Self> {
        if !generator.is_square() {
            return Err(FlowlabError::Domain("rotation generator must be square".into()));
        }
        let scale = generator.amax().max(1.0);
        let asym = (&generator + generator.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(FlowlabError::Domain(format!("rotation generator is not skew-symmetric (|L+Lᵀ| = {asym:e})")));
        }
        Ok(Self { generator })
    }

    /// `ω` times the unit rotation in the `(x₁, x₂)` plane, `dim >= 2`.
    pub fn planar(dim: usize, omega: f64) -> Result<Self> {
        if dim < 2 {
            return Err(FlowlabError::Domain("planar rotation needs dim >= 2".into()));
        }
        let mut l = DMatrix::zeros(dim, dim);
        l[(0, 1)] = -omega;
        l[(1, 0)] = omega;
        Self::new(l)
    }

    pub fn identity(dim: usize) -> Self {
        Self { generator: DMatrix::zeros(dim, dim) }
    }

    pub fn dim(&self) -> usize {
        self.generator.nrows()
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    /// `Q_t = exp(tL)`.
    pub fn at(&self, t: f64) -> DMatrix<f64> {
        if t == 0.0 || self.generator.amax() == 0.0 {
            return DMatrix::identity(self.dim(), self.dim());
        }
        expm(&(&self.generator * t))
    }
}
