//! Attention blocks and sparse mixture-of-experts layers.
//!
//! Every layer is pre-norm with a residual: `x + f(LN(x))`. The SMoE layer's
//! router sees `LN(x)` (plus the prior embedding in prior-guided mode); the
//! experts see `LN(x)` only.

mod attention;
mod experts;
mod model;
mod router;

pub use attention::{attention_block, AttentionMode, AttentionOutput, AttentionParams};
pub use experts::{smoe_forward, smoe_forward_counted, ExpertBank, Ffn};
pub use model::{
    encode, BlockOrder, EmbeddingInit, BlockRouting, Encoded, Model, NetConfig, RoutingHistory, RoutingMode, SlotKind,
};
pub use router::{load_stats, route, route_prior_guided, LoadStats, RouterParams, RoutingDecision};

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

/// One row per superpoint, `d` columns.
pub type TokenMatrix = Array2<f64>;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

const LAYER_NORM_EPS: f64 = 1e-5;

/// Row-wise layer norm without affine parameters.
pub fn layer_norm(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * inv);
    }
    out
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

/// `rows × cols` Gaussian matrix with standard deviation `std`, drawn from
/// stream `stream` of `seed`.
pub(crate) fn gaussian_matrix(rows: usize, cols: usize, std: f64, seed: u64, stream: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    if std == 0.0 {
        return Array2::zeros((rows, cols));
    }
    let normal = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_fn((rows, cols), |_| normal.sample(&mut rng))
}

pub(crate) fn check_width(what: &str, m: &Array2<f64>, width: usize) -> Result<(), NetError> {
    if m.ncols() != width {
        return Err(NetError::Shape(format!("{what} has width {} but {width} is required", m.ncols())));
    }
    Ok(())
}
