use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{check_width, gaussian_matrix, layer_norm, softmax_rows, NetError, TokenMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    /// Keys and values come from the queried set.
    #[serde(rename = "self")]
    SelfAttention,
    /// Keys and values come from the other cloud.
    Cross,
}

/// Single-head projections, stored `d × d` and applied as `x · Wᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub query: Array2<f64>,
    pub key: Array2<f64>,
    pub value: Array2<f64>,
    pub output: Array2<f64>,
}

impl AttentionParams {
    /// Gaussian projections with standard deviation `gain / sqrt(d)`.
    pub fn random(width: usize, gain: f64, seed: u64, stream: u64) -> Self {
        let std = gain / (width as f64).sqrt();
        let m = |i: u64| gaussian_matrix(width, width, std, seed, stream + (i << 32));
        AttentionParams { query: m(0), key: m(1), value: m(2), output: m(3) }
    }

    pub fn width(&self) -> usize {
        self.query.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub tokens: TokenMatrix,
    /// `T_a × T_kv` attention weights; rows sum to one.
    pub weights: Array2<f64>,
}

/// `a + softmax(Q Kᵀ / √d) V Woᵀ` with `Q = LN(a) Wqᵀ` and keys/values from
/// `LN(a)` (self) or `LN(b)` (cross).
pub fn attention_block(
    tokens_a: &TokenMatrix,
    tokens_b: &TokenMatrix,
    params: &AttentionParams,
    mode: AttentionMode,
) -> Result<AttentionOutput, NetError> {
    let d = params.width();
    check_width("attention queries", tokens_a, d)?;
    let na = layer_norm(tokens_a);
    let kv_src = match mode {
        AttentionMode::SelfAttention => na.clone(),
        AttentionMode::Cross => {
            check_width("attention keys", tokens_b, d)?;
            if tokens_b.nrows() == 0 {
                return Err(NetError::Shape("cross attention over an empty set".into()));
            }
            layer_norm(tokens_b)
        }
    };
    let q = na.dot(&params.query.t());
    let k = kv_src.dot(&params.key.t());
    let v = kv_src.dot(&params.value.t());
    let weights = softmax_rows(&(q.dot(&k.t()) / (d as f64).sqrt()));
    let update = weights.dot(&v).dot(&params.output.t());
    Ok(AttentionOutput { tokens: tokens_a + &update, weights })
}
