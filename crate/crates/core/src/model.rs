//! One-layer, single-head, attention-only Transformer.
//!
//! The key/query product is trained directly as one matrix `W`, and the value
//! projection is fixed to "take the lower half of the token". The output for a
//! positioned prompt is
//!
//! ```text
//! F = Σ_i lower(p̃_i) · softmax_i(p̃_iᵀ W p̃_query)
//! ```
//!
//! where `i` ranges over the context columns only.

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::prompts::PositionedPrompt;
use crate::rng;

pub const DEFAULT_XI: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionModel {
    w: DMatrix<f64>,
    dim: usize,
    xi: f64,
    seed: u64,
    steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Model output in `R^dim`.
    pub output: DVector<f64>,
    /// Attention distribution over the context columns.
    pub attn: DVector<f64>,
    pub logits: DVector<f64>,
}

/// Lower half of a token: the fixed value projection `(0 | I)`.
pub fn value_proj(token: DVectorView<'_, f64>, dim: usize) -> DVector<f64> {
    token.rows(dim, dim).into_owned()
}

/// Numerically stable softmax.
pub fn softmax(logits: &DVector<f64>) -> DVector<f64> {
    let max = logits.max();
    let mut out = logits.map(|v| (v - max).exp());
    let total = out.sum();
    out /= total;
    out
}

impl AttentionModel {
    /// Draw every entry of `W` independently from `N(0, ξ²)`.
    pub fn init(dim: usize, xi: f64, seed: u64) -> Result<Self> {
        if !(xi > 0.0 && xi.is_finite()) {
            return Err(Error::InvalidParameter(format!("xi must be positive, got {xi}")));
        }
        let normal = Normal::new(0.0, xi).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let mut r = rng::seeded(seed);
        let n = 2 * dim;
        let w = DMatrix::from_fn(n, n, |_, _| normal.sample(&mut r));
        Ok(Self {
            w,
            dim,
            xi,
            seed,
            steps: 0,
        })
    }

    /// Model with an explicit `W` (e.g. restored from a checkpoint).
    pub fn from_weights(w: DMatrix<f64>, xi: f64, seed: u64, steps: usize) -> Result<Self> {
        if w.nrows() != w.ncols() || w.nrows() % 2 != 0 || w.nrows() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "W must be square with even size, got {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        let dim = w.nrows() / 2;
        Ok(Self {
            w,
            dim,
            xi,
            seed,
            steps,
        })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            w: DMatrix::zeros(2 * dim, 2 * dim),
            dim,
            xi: 0.0,
            seed: 0,
            steps: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of SGD updates applied since initialization.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub(crate) fn apply_update(&mut self, grad: &DMatrix<f64>, eta: f64) {
        self.w.zip_apply(grad, |w, g| *w -= eta * g);
        self.steps += 1;
    }

    pub fn w_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.w
    }

    fn check(&self, prompt: &PositionedPrompt) -> Result<()> {
        if prompt.tokens.nrows() != 2 * self.dim {
            return Err(Error::ShapeMismatch(format!(
                "tokens have {} rows, model expects {}",
                prompt.tokens.nrows(),
                2 * self.dim
            )));
        }
        if prompt.context_len() == 0 {
            return Err(Error::EmptyContext);
        }
        Ok(())
    }

    /// Raw scores `p̃_iᵀ W p̃_query` for every context column.
    pub fn attention_logits(&self, prompt: &PositionedPrompt) -> Result<DVector<f64>> {
        self.check(prompt)?;
        let l = prompt.context_len();
        let wq = &self.w * prompt.query();
        Ok(prompt.tokens.columns(0, l).tr_mul(&wq))
    }

    pub fn forward(&self, prompt: &PositionedPrompt) -> Result<ForwardOutput> {
        let logits = self.attention_logits(prompt)?;
        let attn = softmax(&logits);
        let l = prompt.context_len();
        let values = prompt.tokens.view((self.dim, 0), (self.dim, l));
        let output = values * &attn;
        Ok(ForwardOutput {
            output,
            attn,
            logits,
        })
    }
}

/// Draw a random model; convenience for tests and tools.
pub fn random_model<R: Rng + ?Sized>(dim: usize, scale: f64, rng: &mut R) -> AttentionModel {
    let normal = Normal::new(0.0, scale).expect("positive scale");
    let w = DMatrix::from_fn(2 * dim, 2 * dim, |_, _| normal.sample(rng));
    AttentionModel::from_weights(w, scale, 0, 0).expect("square")
}
