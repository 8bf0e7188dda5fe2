//! Douglas-Rachford envelope of the dual problem, assembled on the server
//! from per-client primal solutions.
//!
//! For `y ∈ ℝ^{md}` split into `m` blocks, each client solves
//! `xᵢ = argmin fᵢ(x) + (yᵢ − 2τŷ)ᵀx + (γ/2)‖x‖²` and reports
//! `vᵢ = −(γ/2)‖xᵢ‖² − fᵢ(xᵢ) − xᵢᵀ(yᵢ − 2τŷ)`. The server then has
//!
//! ```text
//! ∇H(y) = c_grad·ȳ − x + 2τ·x̄
//! H(y)  = c_val·‖ȳ‖² + Σᵢ vᵢ
//! ```
//!
//! where `ŷ` is the block mean and `ȳ` its replication over all blocks.

use nalgebra::{DVectorView, DVectorViewMut};

use crate::error::{check_dim, Error, Result};
use crate::problem::{default_gamma, tau_for};
use crate::Vector;

/// An `md`-vector viewed as `m` consecutive blocks of length `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedVector {
    data: Vector,
    blocks: usize,
    block_dim: usize,
}

impl StackedVector {
    pub fn zeros(blocks: usize, block_dim: usize) -> Self {
        StackedVector {
            data: Vector::zeros(blocks * block_dim),
            blocks,
            block_dim,
        }
    }

    pub fn from_vector(data: Vector, blocks: usize, block_dim: usize) -> Result<Self> {
        check_dim(blocks * block_dim, data.len())?;
        Ok(StackedVector {
            data,
            blocks,
            block_dim,
        })
    }

    pub fn from_blocks(blocks: &[Vector]) -> Result<Self> {
        let d = blocks
            .first()
            .map(|b| b.len())
            .ok_or_else(|| Error::InvalidInput("stacked vector needs at least one block".into()))?;
        let mut out = StackedVector::zeros(blocks.len(), d);
        for (i, b) in blocks.iter().enumerate() {
            check_dim(d, b.len())?;
            out.block_mut(i).copy_from(b);
        }
        Ok(out)
    }

    /// Every block set to `block`.
    pub fn replicate(block: &Vector, blocks: usize) -> Self {
        let d = block.len();
        let mut out = StackedVector::zeros(blocks, d);
        for i in 0..blocks {
            out.block_mut(i).copy_from(block);
        }
        out
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_vector(&self) -> &Vector {
        &self.data
    }

    pub fn into_vector(self) -> Vector {
        self.data
    }

    pub fn block(&self, i: usize) -> DVectorView<'_, f64> {
        self.data.rows(i * self.block_dim, self.block_dim)
    }

    pub fn block_mut(&mut self, i: usize) -> DVectorViewMut<'_, f64> {
        self.data.rows_mut(i * self.block_dim, self.block_dim)
    }

    pub fn block_owned(&self, i: usize) -> Vector {
        self.block(i).into_owned()
    }

    /// `(1/m) Σᵢ vᵢ`, accumulated in block order.
    pub fn block_mean(&self) -> Vector {
        let mut sum = Vector::zeros(self.block_dim);
        for i in 0..self.blocks {
            sum += self.block(i);
        }
        sum / self.blocks as f64
    }

    /// The averaging operator: every block replaced by the block mean.
    pub fn replicated_mean(&self) -> StackedVector {
        StackedVector::replicate(&self.block_mean(), self.blocks)
    }

    pub fn same_layout(&self, other: &StackedVector) -> Result<()> {
        if self.blocks == other.blocks && self.block_dim == other.block_dim {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "stacked layout mismatch: {}x{} vs {}x{}",
                self.blocks, self.block_dim, other.blocks, other.block_dim
            )))
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.norm()
    }

    pub fn norm_squared(&self) -> f64 {
        self.data.norm_squared()
    }

    pub fn dot(&self, other: &StackedVector) -> f64 {
        self.data.dot(&other.data)
    }

    /// `self + alpha·other`, same layout assumed.
    pub fn add_scaled(&self, alpha: f64, other: &StackedVector) -> StackedVector {
        StackedVector {
            data: &self.data + &other.data * alpha,
            blocks: self.blocks,
            block_dim: self.block_dim,
        }
    }

    pub fn scaled(&self, alpha: f64) -> StackedVector {
        StackedVector {
            data: &self.data * alpha,
            blocks: self.blocks,
            block_dim: self.block_dim,
        }
    }
}

/// Scalar coefficients of the envelope formulas for one `(λ, m, γ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeCoefficients {
    pub lambda: f64,
    pub m: usize,
    pub gamma: f64,
    /// `τ = mγ/(mγ+λ)`.
    pub tau: f64,
    /// Coefficient of `ȳ` in the gradient, `τ(1−2τ)/γ`.
    pub c_grad: f64,
    /// Coefficient of `x̄` in the gradient, `2τ`.
    pub c_xbar: f64,
    /// Coefficient of `‖ȳ‖²` in the value, `c_grad/2 = m(λ−mγ)/(2(mγ+λ)²)`.
    pub c_val: f64,
}

impl EnvelopeCoefficients {
    pub fn new(lambda: f64, m: usize, gamma: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
        }
        if m == 0 {
            return Err(Error::InvalidInput("need at least one client".into()));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidInput(format!("gamma must be positive, got {gamma}")));
        }
        let tau = tau_for(lambda, m, gamma);
        let c_grad = tau * (1.0 - 2.0 * tau) / gamma;
        Ok(EnvelopeCoefficients {
            lambda,
            m,
            gamma,
            tau,
            c_grad,
            c_xbar: 2.0 * tau,
            c_val: 0.5 * c_grad,
        })
    }
}

/// Coefficients under the default rule `γ = λ/(3m)` (so `τ = 1/4`).
pub fn derive_hyperparams(lambda: f64, m: usize) -> Result<EnvelopeCoefficients> {
    if m == 0 {
        return Err(Error::InvalidInput("need at least one client".into()));
    }
    EnvelopeCoefficients::new(lambda, m, default_gamma(lambda, m))
}

/// `v − 2τ·v̄`: the client coefficients `yᵢ − 2τŷ` when applied to `y`, and
/// the per-client deltas `pᵢ − 2τp̂` when applied to a direction.
pub fn dual_shift(tau: f64, v: &StackedVector) -> StackedVector {
    v.add_scaled(-2.0 * tau, &v.replicated_mean())
}

/// `∇H(y) = c_grad·ȳ − x + c_xbar·x̄`.
pub fn assemble_gradient(
    coeffs: &EnvelopeCoefficients,
    y: &StackedVector,
    x: &StackedVector,
) -> Result<StackedVector> {
    y.same_layout(x)?;
    check_dim(coeffs.m, y.blocks())?;
    let ybar = y.replicated_mean();
    let xbar = x.replicated_mean();
    let data = ybar.as_vector() * coeffs.c_grad - x.as_vector() + xbar.as_vector() * coeffs.c_xbar;
    StackedVector::from_vector(data, y.blocks(), y.block_dim())
}

/// `H(y) = c_val·‖ȳ‖² + Σᵢ vᵢ`.
pub fn assemble_value(coeffs: &EnvelopeCoefficients, y: &StackedVector, v_sum: f64) -> f64 {
    coeffs.c_val * y.replicated_mean().norm_squared() + v_sum
}

/// `‖Σᵢ(∇fᵢ(xᵢ) + (λ/m)xᵢ)‖² + ‖x − x̄‖²`: the stationarity gap of the
/// primal problem plus the consensus error.
pub fn optimality_residual(x: &StackedVector, local_gradients: &[Vector], lambda: f64) -> Result<f64> {
    let m = x.blocks();
    check_dim(m, local_gradients.len())?;
    let mut total = Vector::zeros(x.block_dim());
    for (i, g) in local_gradients.iter().enumerate() {
        check_dim(x.block_dim(), g.len())?;
        total += g + x.block(i) * (lambda / m as f64);
    }
    let xbar = x.replicated_mean();
    Ok(total.norm_squared() + (x.as_vector() - xbar.as_vector()).norm_squared())
}

/// `γ²/τ² + γ² + 1`, the factor relating the residual to `‖∇H‖²`.
pub fn residual_bound_factor(coeffs: &EnvelopeCoefficients) -> f64 {
    let g2 = coeffs.gamma * coeffs.gamma;
    g2 / (coeffs.tau * coeffs.tau) + g2 + 1.0
}
