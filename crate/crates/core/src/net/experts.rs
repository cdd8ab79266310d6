use ndarray::{Array1, Array2, ArrayView1};

use super::{gaussian_matrix, gelu, RoutingDecision, TokenMatrix};

/// Feed-forward network `d → 2d → d` with GELU.
#[derive(Debug, Clone, PartialEq)]
pub struct Ffn {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Ffn {
    /// He-style initialisation scaled by `gain`; biases start at zero.
    pub fn random(width: usize, gain: f64, seed: u64, stream: u64) -> Self {
        let hidden = 2 * width;
        Ffn {
            w1: gaussian_matrix(hidden, width, gain * (2.0 / width as f64).sqrt(), seed, stream),
            b1: Array1::zeros(hidden),
            w2: gaussian_matrix(width, hidden, gain * (1.0 / hidden as f64).sqrt(), seed, stream + (1 << 32)),
            b2: Array1::zeros(width),
        }
    }

    pub fn width(&self) -> usize {
        self.w1.ncols()
    }

    pub fn forward_row(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let hidden = (self.w1.dot(&x) + &self.b1).mapv(gelu);
        self.w2.dot(&hidden) + &self.b2
    }

    pub fn forward(&self, x: &TokenMatrix) -> TokenMatrix {
        let hidden = (x.dot(&self.w1.t()) + &self.b1).mapv(gelu);
        hidden.dot(&self.w2.t()) + &self.b2
    }
}

/// `L` experts of identical shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertBank {
    experts: Vec<Ffn>,
}

impl ExpertBank {
    /// # Panics
    /// If `experts` is empty or the widths differ.
    pub fn new(experts: Vec<Ffn>) -> Self {
        assert!(!experts.is_empty(), "expert bank needs at least one expert");
        let d = experts[0].width();
        assert!(experts.iter().all(|e| e.width() == d && e.w1.nrows() == experts[0].w1.nrows()), "expert shapes differ");
        ExpertBank { experts }
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn expert(&self, i: usize) -> &Ffn {
        &self.experts[i]
    }

    pub fn width(&self) -> usize {
        self.experts[0].width()
    }
}

/// Mixture `Σ gate · FFN_expert(token)` over each token's chosen experts.
/// The caller adds the residual.
pub fn smoe_forward(tokens: &TokenMatrix, decision: &RoutingDecision, bank: &ExpertBank) -> TokenMatrix {
    smoe_forward_counted(tokens, decision, bank).0
}

/// [`smoe_forward`] plus the number of token evaluations each expert ran.
///
/// # Panics
/// If the decision and token row counts differ.
pub fn smoe_forward_counted(tokens: &TokenMatrix, decision: &RoutingDecision, bank: &ExpertBank) -> (TokenMatrix, Vec<usize>) {
    assert_eq!(tokens.nrows(), decision.len(), "one routing decision per token");
    let mut out = Array2::zeros(tokens.dim());
    let mut counts = vec![0; bank.len()];
    for (t, (experts, gates)) in decision.expert_of.iter().zip(&decision.gate_of).enumerate() {
        for (&e, &g) in experts.iter().zip(gates) {
            if g == 0.0 {
                continue;
            }
            counts[e] += 1;
            let y = bank.experts[e].forward_row(tokens.row(t));
            out.row_mut(t).scaled_add(g, &y);
        }
    }
    (out, counts)
}
