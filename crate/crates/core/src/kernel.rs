//! Gaussian ARD kernel and the factorized Gram matrix over evaluation points.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::EvaluationInstance;

pub const DEFAULT_JITTER: f64 = 1e-8;
pub const JITTER_CAP: f64 = 1e-2;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("lengthscale entries must be strictly positive and finite")]
    InvalidLengthscale,

    #[error("jitter must be non-negative, got {0}")]
    InvalidJitter(f64),

    #[error("Gram matrix is not positive definite even with jitter {0}")]
    Factorization(f64),
}

/// Diagonal ARD metric plus the diagonal jitter used for factorization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub lengthscale_sq: Vec<f64>,
    pub jitter: f64,
}

impl KernelConfig {
    pub fn new(lengthscale_sq: Vec<f64>, jitter: f64) -> Result<Self, KernelError> {
        let cfg = Self {
            lengthscale_sq,
            jitter,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Unit lengthscales in every dimension with the default jitter.
    pub fn isotropic(dim: usize) -> Self {
        Self {
            lengthscale_sq: vec![1.0; dim],
            jitter: DEFAULT_JITTER,
        }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if self.lengthscale_sq.is_empty()
            || self
                .lengthscale_sq
                .iter()
                .any(|l| !(l.is_finite() && *l > 0.0))
        {
            return Err(KernelError::InvalidLengthscale);
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(KernelError::InvalidJitter(self.jitter));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lengthscale_sq.len()
    }

    fn eval_unchecked(&self, z: &[f64], z_bar: &[f64]) -> f64 {
        let q: f64 = z
            .iter()
            .zip(z_bar)
            .zip(&self.lengthscale_sq)
            .map(|((a, b), l)| (a - b) * (a - b) / l)
            .sum();
        (-q).exp()
    }
}

/// `exp(−(z−z̄)ᵀΣ⁻¹(z−z̄))` with `Σ = diag(lengthscale_sq)`.
pub fn kernel_eval(z: &[f64], z_bar: &[f64], cfg: &KernelConfig) -> Result<f64, KernelError> {
    for v in [z, z_bar] {
        if v.len() != cfg.dim() {
            return Err(KernelError::Dimension {
                expected: cfg.dim(),
                got: v.len(),
            });
        }
    }
    Ok(cfg.eval_unchecked(z, z_bar))
}

/// Kernel matrix over an arbitrary point set (no jitter).
pub fn kernel_matrix(points: &[Vec<f64>], cfg: &KernelConfig) -> Result<DMatrix<f64>, KernelError> {
    cfg.validate()?;
    let m = points.len();
    if let Some(bad) = points.iter().find(|z| z.len() != cfg.dim()) {
        return Err(KernelError::Dimension {
            expected: cfg.dim(),
            got: bad.len(),
        });
    }
    let mut k = DMatrix::zeros(m, m);
    for i in 0..m {
        k[(i, i)] = 1.0;
        for j in 0..i {
            let v = cfg.eval_unchecked(&points[i], &points[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Cholesky of `matrix + jitter·I`, escalating the jitter ×10 until it
/// succeeds or passes [`JITTER_CAP`]. Returns the factor and the jitter used.
pub fn factor_with_jitter(
    matrix: &DMatrix<f64>,
    initial_jitter: f64,
) -> Result<(Cholesky<f64, Dyn>, f64), KernelError> {
    let mut jitter = initial_jitter;
    loop {
        let mut shifted = matrix.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(shifted) {
            if chol.l_dirty().diagonal().iter().all(|d| *d > 0.0) {
                return Ok((chol, jitter));
            }
        }
        let next = if jitter > 0.0 { jitter * 10.0 } else { DEFAULT_JITTER };
        if next > JITTER_CAP * (1.0 + 1e-12) {
            return Err(KernelError::Factorization(jitter));
        }
        jitter = next;
    }
}

/// The `2n×2n` Gram matrix `G` and the Cholesky factor of `G + jitter·I`.
#[derive(Debug, Clone)]
pub struct GramFactorization {
    gram: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl GramFactorization {
    pub fn from_points(points: &[Vec<f64>], cfg: &KernelConfig) -> Result<Self, KernelError> {
        let gram = kernel_matrix(points, cfg)?;
        let (chol, jitter) = factor_with_jitter(&gram, cfg.jitter)?;
        Ok(Self { gram, chol, jitter })
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    /// The bare kernel matrix, without jitter.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// The jitter that made the factorization succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `G + jitter·I`.
    pub fn regularized(&self) -> DMatrix<f64> {
        let mut m = self.gram.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += self.jitter;
        }
        m
    }

    /// Lower-triangular `L` with `L Lᵀ = G + jitter·I`.
    pub fn factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `δᵀ(G + jitter·I)⁻¹δ` through one triangular solve.
    pub fn mahalanobis_sq(&self, delta: &[f64]) -> Result<f64, KernelError> {
        if delta.len() != self.dim() {
            return Err(KernelError::Dimension {
                expected: self.dim(),
                got: delta.len(),
            });
        }
        let mut y = DVector::from_column_slice(delta);
        self.chol.l_dirty().solve_lower_triangular_mut(&mut y);
        Ok(y.norm_squared())
    }

    /// `(G + jitter·I)⁻¹ v`.
    pub fn solve(&self, v: &[f64]) -> Result<Vec<f64>, KernelError> {
        if v.len() != self.dim() {
            return Err(KernelError::Dimension {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(self
            .chol
            .solve(&DVector::from_column_slice(v))
            .as_slice()
            .to_vec())
    }
}

/// Gram factorization over all `2n` evaluation points.
pub fn gram_matrix(
    inst: &EvaluationInstance,
    cfg: &KernelConfig,
) -> Result<GramFactorization, KernelError> {
    if cfg.dim() != inst.point_dim() {
        return Err(KernelError::Dimension {
            expected: inst.point_dim(),
            got: cfg.dim(),
        });
    }
    GramFactorization::from_points(inst.kernel_points(), cfg)
}
