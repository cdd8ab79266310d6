//! Prior correspondence encoding.
//!
//! Code numbers: `0` is shared by every superpoint without a prior match;
//! prior pair number `m` (0-based position in the row-major pair list) gets
//! code `m + 1`. Codes are turned into vectors by a sinusoidal table followed
//! by a two-layer perceptron. A superpoint that appears in several pairs gets
//! the softmax-over-overlap-ratio blend of those pairs' rows.
//!
//! Under binary coding every matched superpoint gets code `1`.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prior::PriorCorrespondences;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum PceError {
    #[error("embedding width must be even, got {0}")]
    OddWidth(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("prior references superpoint {index} but the cloud has {count}")]
    Index { index: usize, count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodingScheme {
    Ordered,
    Binary,
}

impl CodingScheme {
    /// Rows the embedding table needs for `num_pairs` prior pairs.
    pub fn table_rows(self, num_pairs: usize) -> usize {
        match self {
            CodingScheme::Ordered => num_pairs + 1,
            CodingScheme::Binary => 2,
        }
    }

    /// The code-number set: `{0, …, pairs}` or `{0, 1}`.
    pub fn numbers(self, num_pairs: usize) -> Vec<usize> {
        (0..self.table_rows(num_pairs)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Source,
    Target,
}

/// `table[i, 2k] = sin(i / 10000^{2k/d})`, `table[i, 2k+1] = cos(i / 10000^{2k/d})`.
pub fn sinusoidal_table(count: usize, width: usize) -> Result<Array2<f64>, PceError> {
    if width % 2 != 0 {
        return Err(PceError::OddWidth(width));
    }
    let mut table = Array2::zeros((count, width));
    for k in 0..width / 2 {
        let freq = 10000f64.powf(2.0 * k as f64 / width as f64);
        for i in 0..count {
            let angle = i as f64 / freq;
            table[[i, 2 * k]] = angle.sin();
            table[[i, 2 * k + 1]] = angle.cos();
        }
    }
    Ok(table)
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// `d → d → d` perceptron with an ELU in between.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMlp {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl EmbeddingMlp {
    /// Gaussian weights with variance `1/d`, zero biases.
    pub fn random(width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (1.0 / width as f64).sqrt()).expect("finite std");
        let mut draw = || Array2::from_shape_fn((width, width), |_| normal.sample(&mut rng));
        let w1 = draw();
        let w2 = draw();
        EmbeddingMlp { w1, b1: Array1::zeros(width), w2, b2: Array1::zeros(width) }
    }

    /// Exact identity on inputs in `[-1, 1]`: the hidden layer is shifted by
    /// +2 into the ELU's linear region and shifted back on output.
    pub fn identity(width: usize) -> Self {
        EmbeddingMlp {
            w1: Array2::eye(width),
            b1: Array1::from_elem(width, 2.0),
            w2: Array2::eye(width),
            b2: Array1::from_elem(width, -2.0),
        }
    }

    /// Zero weights; every output row equals `bias`.
    pub fn constant(bias: Array1<f64>) -> Self {
        let width = bias.len();
        EmbeddingMlp {
            w1: Array2::zeros((width, width)),
            b1: Array1::zeros(width),
            w2: Array2::zeros((width, width)),
            b2: bias,
        }
    }

    pub fn width(&self) -> usize {
        self.w1.ncols()
    }

    /// Row-wise forward pass.
    pub fn forward(&self, rows: &Array2<f64>) -> Result<Array2<f64>, PceError> {
        if rows.ncols() != self.width() {
            return Err(PceError::Shape(format!("input width {} but mlp expects {}", rows.ncols(), self.width())));
        }
        let hidden = (rows.dot(&self.w1.t()) + &self.b1).mapv(elu);
        Ok(hidden.dot(&self.w2.t()) + &self.b2)
    }
}

pub fn embed_table(raw: &Array2<f64>, mlp: &EmbeddingMlp) -> Result<Array2<f64>, PceError> {
    mlp.forward(raw)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorEmbeddingTable {
    pub raw: Array2<f64>,
    pub projected: Array2<f64>,
}

impl PriorEmbeddingTable {
    pub fn build(rows: usize, mlp: &EmbeddingMlp) -> Result<Self, PceError> {
        let raw = sinusoidal_table(rows, mlp.width())?;
        let projected = embed_table(&raw, mlp)?;
        Ok(PriorEmbeddingTable { raw, projected })
    }

    pub fn for_prior(prior: &PriorCorrespondences, coding: CodingScheme, mlp: &EmbeddingMlp) -> Result<Self, PceError> {
        Self::build(coding.table_rows(prior.len()), mlp)
    }

    pub fn width(&self) -> usize {
        self.projected.ncols()
    }
}

/// Which branch produced a superpoint's embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingBranch {
    NonAnchor,
    Single,
    Multi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodingEntry {
    pub superpoint: usize,
    pub numbers: Vec<usize>,
    pub branch: EmbeddingBranch,
}

/// Code numbers and branch per superpoint, in superpoint order.
pub fn coding_dump(sp_count: usize, side: Side, prior: &PriorCorrespondences, coding: CodingScheme) -> Vec<CodingEntry> {
    let positions = match side {
        Side::Source => &prior.source_positions,
        Side::Target => &prior.target_positions,
    };
    (0..sp_count)
        .map(|i| {
            let list = positions.get(i).map(Vec::as_slice).unwrap_or(&[]);
            let branch = match list.len() {
                0 => EmbeddingBranch::NonAnchor,
                1 => EmbeddingBranch::Single,
                _ => EmbeddingBranch::Multi,
            };
            let numbers = match (coding, list.is_empty()) {
                (_, true) => vec![0],
                (CodingScheme::Binary, false) => vec![1],
                (CodingScheme::Ordered, false) => list.iter().map(|p| p + 1).collect(),
            };
            CodingEntry { superpoint: i, numbers, branch }
        })
        .collect()
}

/// Numerically stable softmax.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// One embedding row per superpoint of one side.
pub fn assign_prior_embeddings(
    sp_count: usize,
    side: Side,
    prior: &PriorCorrespondences,
    table: &PriorEmbeddingTable,
    coding: CodingScheme,
) -> Result<Array2<f64>, PceError> {
    let rows_needed = coding.table_rows(prior.len());
    if table.projected.nrows() < rows_needed {
        return Err(PceError::Shape(format!("table has {} rows, coding needs {rows_needed}", table.projected.nrows())));
    }
    for &(i, j) in &prior.pairs {
        let index = match side {
            Side::Source => i,
            Side::Target => j,
        };
        if index >= sp_count {
            return Err(PceError::Index { index, count: sp_count });
        }
    }
    let positions = match side {
        Side::Source => &prior.source_positions,
        Side::Target => &prior.target_positions,
    };
    let projected = &table.projected;
    let width = table.width();
    let mut out = Array2::zeros((sp_count, width));
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let list = positions.get(i).map(Vec::as_slice).unwrap_or(&[]);
        match (list.len(), coding) {
            (0, _) => row.assign(&projected.row(0)),
            (_, CodingScheme::Binary) => row.assign(&projected.row(1)),
            (1, CodingScheme::Ordered) => row.assign(&projected.row(list[0] + 1)),
            (_, CodingScheme::Ordered) => {
                let ratios: Vec<f64> = list.iter().map(|&p| prior.ratios[p]).collect();
                let weights = softmax(&ratios);
                for (&p, w) in list.iter().zip(weights) {
                    row.scaled_add(w, &projected.row(p + 1));
                }
            }
        }
    }
    Ok(out)
}

/// Row inequality helper used by the injectivity checks.
pub fn rows_differ(a: ArrayView1<f64>, b: ArrayView1<f64>) -> bool {
    a.iter().zip(b.iter()).any(|(x, y)| x != y)
}
