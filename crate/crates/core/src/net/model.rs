use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{
    attention_block, check_width, layer_norm, load_stats, route, smoe_forward, AttentionMode, AttentionParams,
    ExpertBank, Ffn, LoadStats, NetError, RouterParams, RoutingDecision, TokenMatrix,
};
use crate::pce::EmbeddingMlp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoutingMode {
    /// Router sees token + prior embedding.
    Prior,
    /// Router sees the token only.
    Vanilla,
    /// Every feed-forward slot is a single dense FFN.
    Dense,
}

/// Starting parameters of the prior embedding perceptron.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingInit {
    /// Passes the sinusoidal code through unchanged.
    Identity,
    /// Seeded Gaussian weights.
    Random,
}

/// Order of layers inside one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockOrder {
    /// self-attention, FFN, cross-attention, FFN
    SelfFfnCrossFfn,
    /// self-attention, cross-attention, FFN
    SelfCrossFfn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub width: usize,
    pub experts: usize,
    pub top_k: usize,
    pub blocks: usize,
    pub routing: RoutingMode,
    /// Whether the FFN after cross-attention is an SMoE layer too.
    pub smoe_in_cross: bool,
    pub order: BlockOrder,
    pub seed: u64,
    /// Scale of the attention projections; small values keep tokens close
    /// to their input descriptors.
    pub attention_gain: f64,
    pub expert_gain: f64,
    pub router_gain: f64,
    /// Multiplier on the prior embedding before it is added for routing.
    pub prior_scale: f64,
    pub embedding_init: EmbeddingInit,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            width: 64,
            experts: 4,
            top_k: 1,
            blocks: 3,
            routing: RoutingMode::Prior,
            smoe_in_cross: true,
            order: BlockOrder::SelfFfnCrossFfn,
            seed: 7,
            attention_gain: 0.5,
            expert_gain: 0.5,
            router_gain: 1.0,
            prior_scale: 3.0,
            embedding_init: EmbeddingInit::Identity,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.width < 2 || self.width % 2 != 0 {
            return Err(NetError::Config(format!("width must be even and at least 2, got {}", self.width)));
        }
        if self.experts == 0 {
            return Err(NetError::Config("at least one expert is required".into()));
        }
        if self.routing != RoutingMode::Dense && self.experts < 2 {
            return Err(NetError::Config(format!("{:?} routing needs at least 2 experts", self.routing)));
        }
        if self.top_k == 0 || self.top_k > self.experts {
            return Err(NetError::Config(format!("top_k must be in [1, {}], got {}", self.experts, self.top_k)));
        }
        for (name, v) in [
            ("attention_gain", self.attention_gain),
            ("expert_gain", self.expert_gain),
            ("router_gain", self.router_gain),
            ("prior_scale", self.prior_scale),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(NetError::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotKind {
    Smoe,
    Dense,
}

#[derive(Debug, Clone, PartialEq)]
enum Layer {
    Attention { params: AttentionParams, mode: AttentionMode },
    FeedForward { kind: SlotKind, router: Option<RouterParams>, bank: ExpertBank },
}

/// Routing of both clouds at one feed-forward slot.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRouting {
    pub block: usize,
    /// Position of the slot among the model's layers.
    pub layer: usize,
    pub kind: SlotKind,
    pub source: RoutingDecision,
    pub target: RoutingDecision,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoutingHistory {
    pub slots: Vec<BlockRouting>,
}

impl RoutingHistory {
    pub fn last(&self) -> Option<&BlockRouting> {
        self.slots.last()
    }

    /// Load statistics of one slot over both clouds' tokens.
    pub fn slot_stats(&self, slot: usize, experts: usize) -> LoadStats {
        let s = &self.slots[slot];
        let (ns, nt) = (s.source.len() as f64, s.target.len() as f64);
        let a = load_stats(&s.source, experts);
        let b = load_stats(&s.target, experts);
        let mix = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p * ns + q * nt) / (ns + nt)).collect();
        LoadStats { fractions: mix(&a.fractions, &b.fractions), mean_probs: mix(&a.mean_probs, &b.mean_probs) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub source: TokenMatrix,
    pub target: TokenMatrix,
    pub history: RoutingHistory,
}

/// Parameters of the whole encoder plus the prior embedding perceptron.
/// Immutable after construction; shared across pairs and threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: NetConfig,
    layers: Vec<Layer>,
    embedding: EmbeddingMlp,
}

// Per-layer random streams; experts are offset inside a layer's range.
const LAYER_STREAMS: u64 = 1 << 16;
const ROUTER_STREAM: u64 = 1;
const EXPERT_STREAM: u64 = 16;

impl Model {
    pub fn new(config: NetConfig) -> Result<Self, NetError> {
        config.validate()?;
        let d = config.width;
        let mut layers = Vec::new();
        let push_ffn = |layers: &mut Vec<Layer>, cross: bool| -> Result<(), NetError> {
            let base = layers.len() as u64 * LAYER_STREAMS;
            let dense = config.routing == RoutingMode::Dense || (cross && !config.smoe_in_cross);
            let expert = |e: usize| Ffn::random(d, config.expert_gain, config.seed, base + EXPERT_STREAM + e as u64);
            let layer = if dense {
                Layer::FeedForward { kind: SlotKind::Dense, router: None, bank: ExpertBank::new(vec![expert(0)]) }
            } else {
                let router = RouterParams::random(config.experts, d, config.top_k, config.router_gain, config.seed, base + ROUTER_STREAM)?;
                Layer::FeedForward {
                    kind: SlotKind::Smoe,
                    router: Some(router),
                    bank: ExpertBank::new((0..config.experts).map(expert).collect()),
                }
            };
            layers.push(layer);
            Ok(())
        };
        for _ in 0..config.blocks {
            let attention = |layers: &Vec<Layer>, mode| Layer::Attention {
                params: AttentionParams::random(d, config.attention_gain, config.seed, layers.len() as u64 * LAYER_STREAMS),
                mode,
            };
            layers.push(attention(&layers, AttentionMode::SelfAttention));
            if config.order == BlockOrder::SelfFfnCrossFfn {
                push_ffn(&mut layers, false)?;
            }
            layers.push(attention(&layers, AttentionMode::Cross));
            push_ffn(&mut layers, true)?;
        }
        let embedding = match config.embedding_init {
            EmbeddingInit::Identity => EmbeddingMlp::identity(d),
            EmbeddingInit::Random => EmbeddingMlp::random(d, config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15)),
        };
        Ok(Model { config, layers, embedding })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn embedding(&self) -> &EmbeddingMlp {
        &self.embedding
    }

    /// Replaces the prior embedding perceptron.
    pub fn with_embedding(mut self, embedding: EmbeddingMlp) -> Result<Self, NetError> {
        if embedding.width() != self.config.width {
            return Err(NetError::Shape(format!("embedding width {} but model width {}", embedding.width(), self.config.width)));
        }
        self.embedding = embedding;
        Ok(self)
    }

    /// Number of feed-forward slots.
    pub fn slots(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, Layer::FeedForward { .. })).count()
    }

    pub fn encode(
        &self,
        source: &TokenMatrix,
        target: &TokenMatrix,
        prior: Option<(&Array2<f64>, &Array2<f64>)>,
    ) -> Result<Encoded, NetError> {
        encode(self, source, target, prior)
    }
}

fn ffn_slot(
    x: &TokenMatrix,
    prior: Option<&Array2<f64>>,
    kind: SlotKind,
    router: Option<&RouterParams>,
    bank: &ExpertBank,
    config: &NetConfig,
) -> (TokenMatrix, RoutingDecision) {
    let normed = layer_norm(x);
    let decision = match (kind, router) {
        (SlotKind::Smoe, Some(r)) => match (config.routing, prior) {
            (RoutingMode::Prior, Some(emb)) => route(&(&normed + &(emb * config.prior_scale)), r),
            _ => route(&normed, r),
        },
        _ => RoutingDecision::constant(x.nrows(), 1, 0),
    };
    let mixed = smoe_forward(&normed, &decision, bank);
    (x + &mixed, decision)
}

/// Runs all blocks on both clouds. `prior` carries the per-superpoint prior
/// embeddings and is required in prior-guided mode.
pub fn encode(
    model: &Model,
    source: &TokenMatrix,
    target: &TokenMatrix,
    prior: Option<(&Array2<f64>, &Array2<f64>)>,
) -> Result<Encoded, NetError> {
    let config = &model.config;
    let d = config.width;
    check_width("source features", source, d)?;
    check_width("target features", target, d)?;
    if source.nrows() == 0 || target.nrows() == 0 {
        return Err(NetError::Shape("both clouds need at least one superpoint".into()));
    }
    if let Some((ps, pt)) = prior {
        if ps.dim() != source.dim() || pt.dim() != target.dim() {
            return Err(NetError::Shape("prior embeddings must match the token matrices".into()));
        }
    } else if config.routing == RoutingMode::Prior && model.slots() > 0 {
        return Err(NetError::Config("prior-guided routing needs prior embeddings".into()));
    }
    let mut src = source.clone();
    let mut dst = target.clone();
    let mut history = RoutingHistory::default();
    let per_block = model.layers.len().checked_div(config.blocks).unwrap_or(1);
    for (index, layer) in model.layers.iter().enumerate() {
        match layer {
            Layer::Attention { params, mode: AttentionMode::SelfAttention } => {
                src = attention_block(&src, &src, params, AttentionMode::SelfAttention)?.tokens;
                dst = attention_block(&dst, &dst, params, AttentionMode::SelfAttention)?.tokens;
            }
            Layer::Attention { params, mode: AttentionMode::Cross } => {
                let new_src = attention_block(&src, &dst, params, AttentionMode::Cross)?.tokens;
                let new_dst = attention_block(&dst, &src, params, AttentionMode::Cross)?.tokens;
                src = new_src;
                dst = new_dst;
            }
            Layer::FeedForward { kind, router, bank } => {
                let (s, sd) = ffn_slot(&src, prior.map(|p| p.0), *kind, router.as_ref(), bank, config);
                let (t, td) = ffn_slot(&dst, prior.map(|p| p.1), *kind, router.as_ref(), bank, config);
                src = s;
                dst = t;
                history.slots.push(BlockRouting { block: index / per_block, layer: index, kind: *kind, source: sd, target: td });
            }
        }
    }
    Ok(Encoded { source: src, target: dst, history })
}
