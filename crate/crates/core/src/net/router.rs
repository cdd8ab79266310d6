use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{check_width, gaussian_matrix, softmax_rows, NetError, TokenMatrix};

/// Gating weights `W_g` (`L × d`) and the number of experts per token.
#[derive(Debug, Clone, PartialEq)]
pub struct RouterParams {
    w_g: Array2<f64>,
    k: usize,
}

impl RouterParams {
    pub fn new(w_g: Array2<f64>, k: usize) -> Result<Self, NetError> {
        if w_g.nrows() == 0 {
            return Err(NetError::Config("router needs at least one expert".into()));
        }
        if k == 0 || k > w_g.nrows() {
            return Err(NetError::Config(format!("top-k must be in [1, {}], got {k}", w_g.nrows())));
        }
        Ok(RouterParams { w_g, k })
    }

    /// Gaussian `W_g` with standard deviation `gain / sqrt(d)`.
    pub fn random(experts: usize, width: usize, k: usize, gain: f64, seed: u64, stream: u64) -> Result<Self, NetError> {
        Self::new(gaussian_matrix(experts, width, gain / (width as f64).sqrt(), seed, stream), k)
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.w_g
    }

    pub fn experts(&self) -> usize {
        self.w_g.nrows()
    }

    pub fn width(&self) -> usize {
        self.w_g.ncols()
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingDecision {
    /// Chosen experts per token, best first.
    pub expert_of: Vec<Vec<usize>>,
    /// Gate values aligned with `expert_of`; equal to the chosen `probs`.
    pub gate_of: Vec<Vec<f64>>,
    /// `T × L` routing probabilities.
    pub probs: Array2<f64>,
}

/// One token's routing, in the shape written to routing dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRoute {
    pub token: usize,
    pub experts: Vec<usize>,
    pub gates: Vec<f64>,
}

impl RoutingDecision {
    pub fn len(&self) -> usize {
        self.expert_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.expert_of.is_empty()
    }

    /// Top-1 expert per token.
    pub fn primary(&self) -> Vec<usize> {
        self.expert_of.iter().map(|e| e[0]).collect()
    }

    pub fn token_routes(&self) -> Vec<TokenRoute> {
        self.expert_of
            .iter()
            .zip(&self.gate_of)
            .enumerate()
            .map(|(token, (e, g))| TokenRoute { token, experts: e.clone(), gates: g.clone() })
            .collect()
    }

    /// Routing that sends every token to `expert` with gate 1.
    pub fn constant(tokens: usize, experts: usize, expert: usize) -> Self {
        let mut probs = Array2::zeros((tokens, experts));
        probs.column_mut(expert).fill(1.0);
        RoutingDecision { expert_of: vec![vec![expert]; tokens], gate_of: vec![vec![1.0]; tokens], probs }
    }
}

/// `probs = softmax(tokens · W_gᵀ)` per row, then the `k` largest
/// probabilities with ties going to the lower expert index.
///
/// # Panics
/// If the token width differs from the router width.
pub fn route(tokens: &TokenMatrix, router: &RouterParams) -> RoutingDecision {
    assert_eq!(tokens.ncols(), router.width(), "token width must match router width");
    let probs = softmax_rows(&tokens.dot(&router.w_g.t()));
    let mut expert_of = Vec::with_capacity(tokens.nrows());
    let mut gate_of = Vec::with_capacity(tokens.nrows());
    for row in probs.rows() {
        let mut order: Vec<usize> = (0..row.len()).collect();
        // stable sort keeps lower indices first among equal probabilities
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
        order.truncate(router.k);
        gate_of.push(order.iter().map(|&e| row[e]).collect());
        expert_of.push(order);
    }
    RoutingDecision { expert_of, gate_of, probs }
}

/// Routes `tokens + prior_embeddings`; the tokens themselves are untouched.
pub fn route_prior_guided(
    tokens: &TokenMatrix,
    prior_embeddings: &Array2<f64>,
    router: &RouterParams,
) -> Result<RoutingDecision, NetError> {
    check_width("tokens", tokens, router.width())?;
    if prior_embeddings.dim() != tokens.dim() {
        return Err(NetError::Shape(format!(
            "prior embeddings {:?} do not match tokens {:?}",
            prior_embeddings.dim(),
            tokens.dim()
        )));
    }
    Ok(route(&(tokens + prior_embeddings), router))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadStats {
    /// Fraction of tokens whose top-1 expert is `i`.
    pub fractions: Vec<f64>,
    /// Mean routing probability of expert `i`.
    pub mean_probs: Vec<f64>,
}

pub fn load_stats(decision: &RoutingDecision, experts: usize) -> LoadStats {
    let mut fractions = vec![0.0; experts];
    let mut mean_probs = vec![0.0; experts];
    let t = decision.len();
    if t == 0 {
        return LoadStats { fractions, mean_probs };
    }
    for e in decision.primary() {
        fractions[e] += 1.0;
    }
    for row in decision.probs.rows() {
        for (i, p) in row.iter().enumerate().take(experts) {
            mean_probs[i] += p;
        }
    }
    for v in fractions.iter_mut().chain(mean_probs.iter_mut()) {
        *v /= t as f64;
    }
    LoadStats { fractions, mean_probs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array1;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tokens(rows: usize, d: usize, seed: u64) -> Array2<f64> {
        gaussian_matrix(rows, d, 1.0, seed, 99)
    }

    #[test]
    fn zero_router_is_uniform_and_picks_expert_zero() {
        let router = RouterParams::new(Array2::zeros((4, 8)), 1).unwrap();
        let d = route(&random_tokens(10, 8, 1), &router);
        for (row, e) in d.probs.rows().into_iter().zip(&d.expert_of) {
            assert!(row.iter().all(|&p| p == 0.25));
            assert_eq!(e, &vec![0]);
        }
        assert!(d.gate_of.iter().all(|g| g == &vec![0.25]));
    }

    #[test]
    fn opposed_experts_split_along_direction() {
        let mut u = Array1::zeros(6);
        u[2] = 1.0;
        let mut w = Array2::zeros((2, 6));
        w.row_mut(0).assign(&u);
        w.row_mut(1).assign(&(-&u));
        let router = RouterParams::new(w, 1).unwrap();
        let token = (&u * 3.0).insert_axis(ndarray::Axis(0));
        let d = route(&token, &router);
        let expected = 1.0 / (1.0 + (-6.0f64).exp());
        assert_abs_diff_eq!(d.probs[[0, 0]], expected, epsilon = 1e-12);
        assert_abs_diff_eq!(d.probs[[0, 0]], 0.9975, epsilon = 1e-4);
        assert_eq!(d.expert_of[0], vec![0]);
    }

    #[test]
    fn identical_rows_route_identically() {
        let router = RouterParams::random(5, 8, 2, 1.0, 3, 0).unwrap();
        let mut x = random_tokens(4, 8, 2);
        let r0 = x.row(0).to_owned();
        x.row_mut(3).assign(&r0);
        let d = route(&x, &router);
        assert_eq!(d.expert_of[0], d.expert_of[3]);
        assert_eq!(d.gate_of[0], d.gate_of[3]);
    }

    #[test]
    fn top_k_gates_are_chosen_probs_in_descending_order() {
        let router = RouterParams::random(6, 8, 3, 2.0, 4, 0).unwrap();
        let d = route(&random_tokens(30, 8, 5), &router);
        for t in 0..30 {
            let mut sorted: Vec<f64> = d.probs.row(t).to_vec();
            sorted.sort_by(|a, b| b.total_cmp(a));
            assert_eq!(d.gate_of[t], sorted[..3].to_vec());
            for (e, g) in d.expert_of[t].iter().zip(&d.gate_of[t]) {
                assert_eq!(d.probs[[t, *e]], *g);
            }
            assert_abs_diff_eq!(d.probs.row(t).sum(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_prior_embedding_matches_plain_routing() {
        let router = RouterParams::random(4, 8, 1, 1.0, 6, 0).unwrap();
        let x = random_tokens(12, 8, 7);
        assert_eq!(route_prior_guided(&x, &Array2::zeros((12, 8)), &router).unwrap(), route(&x, &router));
        assert!(route_prior_guided(&x, &Array2::zeros((12, 6)), &router).is_err());
    }

    #[test]
    fn dominant_embeddings_decide_routing() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let router = RouterParams::random(4, 16, 1, 1.0, 9, 0).unwrap();
        let codes = crate::pce::sinusoidal_table(6, 16).unwrap();
        let numbers: Vec<usize> = (0..50).map(|_| rng.random_range(0..6)).collect();
        let emb = Array2::from_shape_fn((50, 16), |(t, c)| 1e3 * codes[[numbers[t], c]]);
        // unit-norm feature rows
        let mut x = random_tokens(50, 16, 10);
        for mut row in x.rows_mut() {
            let n = row.dot(&row).sqrt();
            row.mapv_inplace(|v| v / n);
        }
        let guided = route_prior_guided(&x, &emb, &router).unwrap();
        assert_eq!(guided.expert_of, route(&emb, &router).expert_of);
    }

    #[test]
    fn load_stats_match_counting_oracle() {
        let router = RouterParams::random(5, 8, 1, 3.0, 11, 0).unwrap();
        let d = route(&random_tokens(100, 8, 12), &router);
        let stats = load_stats(&d, 5);
        for e in 0..5 {
            let mut count = 0;
            let mut psum = 0.0;
            for t in 0..100 {
                let mut best = 0;
                for j in 1..5 {
                    if d.probs[[t, j]] > d.probs[[t, best]] {
                        best = j;
                    }
                }
                if best == e {
                    count += 1;
                }
                psum += d.probs[[t, e]];
            }
            assert_eq!(stats.fractions[e], count as f64 / 100.0);
            assert_abs_diff_eq!(stats.mean_probs[e], psum / 100.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(stats.fractions.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(stats.mean_probs.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn all_to_one_expert_and_uniform_stats() {
        let stats = load_stats(&RoutingDecision::constant(7, 3, 0), 3);
        assert_eq!(stats.fractions, vec![1.0, 0.0, 0.0]);
        let uniform = route(&random_tokens(9, 4, 1), &RouterParams::new(Array2::zeros((4, 4)), 1).unwrap());
        assert_eq!(load_stats(&uniform, 4).mean_probs, vec![0.25; 4]);
    }

    #[test]
    fn invalid_k_is_rejected() {
        assert!(RouterParams::new(Array2::zeros((3, 4)), 0).is_err());
        assert!(RouterParams::new(Array2::zeros((3, 4)), 4).is_err());
    }

    proptest! {
        #[test]
        fn positive_scaling_keeps_argmax(seed in 0u64..1000, scale in 0.01f64..100.0) {
            let router = RouterParams::random(4, 8, 1, 1.0, seed, 0).unwrap();
            let scaled = RouterParams::new(router.weights() * scale, 1).unwrap();
            let x = random_tokens(20, 8, seed + 1);
            prop_assert_eq!(route(&x, &router).expert_of, route(&x, &scaled).expert_of);
        }
    }
}
