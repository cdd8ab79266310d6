//! Coarse superpoint matching, fine point matching by optimal transport, and
//! the training losses with their analytic gradients.
//!
//! Losses are here for value and gradient checks; nothing in the crate
//! trains the network.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{PointCloud, RigidTransform};
use crate::net::{route, RouterParams};
use crate::scene::SuperpointSet;
use crate::spatial::{sq_dist, KdTree};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum MatchError {
    #[error("no superpoint pair passed the coarse filter")]
    NoMatches,
    #[error("no anchor has both positive and negative pairs")]
    NoSupervision,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoarseFilter {
    /// Keep entries in the top `k` of both their row and their column.
    MutualTop(usize),
    /// Keep the highest entries without a mutuality test.
    TopC,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub top_c: usize,
    pub coarse_filter: CoarseFilter,
    pub sinkhorn_iterations: usize,
    /// Logit of a point being matched to the slack bin.
    pub slack_logit: f64,
    /// Lower bound on the fine similarity bandwidth.
    pub bandwidth_floor: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            top_c: 80,
            coarse_filter: CoarseFilter::MutualTop(3),
            sinkhorn_iterations: 100,
            slack_logit: -4.0,
            bandwidth_floor: 1e-6,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), MatchError> {
        if self.top_c == 0 {
            return Err(MatchError::Shape("top_c must be at least 1".into()));
        }
        if matches!(self.coarse_filter, CoarseFilter::MutualTop(0)) {
            return Err(MatchError::Shape("mutual top-k needs k ≥ 1".into()));
        }
        if !(self.bandwidth_floor > 0.0) || !self.slack_logit.is_finite() {
            return Err(MatchError::Shape("bandwidth floor must be positive and slack logit finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoarseMatch {
    pub src: usize,
    pub dst: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FineMatch {
    pub src: usize,
    pub dst: usize,
    pub confidence: f64,
    /// Index of the coarse match this pair came from.
    pub group: usize,
}

fn normalized_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row.mapv_inplace(|v| v / n);
        }
    }
    out
}

/// Row-normalised `a · bᵀ`.
pub fn cosine_matrix(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    normalized_rows(a).dot(&normalized_rows(b).t())
}

/// Indices of the `k` largest values, ties to the lower index.
fn top_indices(values: ArrayView1<f64>, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order.truncate(k);
    order
}

/// Superpoint matches between two token sets. Only positive cosine
/// similarities are candidates; survivors of the filter are ranked by
/// similarity and the best `top_c` are kept, scored by a softmax over the
/// kept similarities.
pub fn match_coarse(tok_src: &Array2<f64>, tok_dst: &Array2<f64>, config: &MatchConfig) -> Result<Vec<CoarseMatch>, MatchError> {
    if tok_src.ncols() != tok_dst.ncols() {
        return Err(MatchError::Shape(format!("token widths {} and {}", tok_src.ncols(), tok_dst.ncols())));
    }
    let sim = cosine_matrix(tok_src, tok_dst);
    let (n, m) = sim.dim();
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    match config.coarse_filter {
        CoarseFilter::MutualTop(k) => {
            let row_top: Vec<Vec<usize>> = (0..n).map(|i| top_indices(sim.row(i), k)).collect();
            let col_top: Vec<Vec<usize>> = (0..m).map(|j| top_indices(sim.column(j), k)).collect();
            for (i, tops) in row_top.iter().enumerate() {
                for &j in tops {
                    if sim[[i, j]] > 0.0 && col_top[j].contains(&i) {
                        candidates.push((i, j));
                    }
                }
            }
        }
        CoarseFilter::TopC => {
            candidates = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).filter(|&(i, j)| sim[[i, j]] > 0.0).collect();
        }
    }
    if candidates.is_empty() {
        return Err(MatchError::NoMatches);
    }
    candidates.sort_by(|&(a, b), &(c, d)| sim[[c, d]].total_cmp(&sim[[a, b]]).then((a, b).cmp(&(c, d))));
    candidates.truncate(config.top_c);
    let sims: Vec<f64> = candidates.iter().map(|&(i, j)| sim[[i, j]]).collect();
    let scores = crate::pce::softmax(&sims);
    Ok(candidates.into_iter().zip(scores).map(|((src, dst), score)| CoarseMatch { src, dst, score }).collect())
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Result of an unrolled log-domain Sinkhorn run.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornRun {
    /// `log Π = Z + u + v`.
    pub log_transport: Array2<f64>,
    /// Row potentials after each iteration.
    pub row_potentials: Vec<Array1<f64>>,
    /// Column potentials after each iteration.
    pub col_potentials: Vec<Array1<f64>>,
}

/// Alternating row/column normalisation of `exp(logits)` towards marginals
/// `exp(log_a)` and `exp(log_b)`, which must have equal totals.
pub fn log_sinkhorn(logits: &Array2<f64>, log_a: &[f64], log_b: &[f64], iterations: usize) -> SinkhornRun {
    let (n, m) = logits.dim();
    assert_eq!((log_a.len(), log_b.len()), (n, m), "marginals must match the logits");
    let mut u = Array1::zeros(n);
    let mut v = Array1::zeros(m);
    let mut row_potentials = Vec::with_capacity(iterations);
    let mut col_potentials = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        for i in 0..n {
            u[i] = log_a[i] - log_sum_exp((0..m).map(|j| logits[[i, j]] + v[j]));
        }
        for j in 0..m {
            v[j] = log_b[j] - log_sum_exp((0..n).map(|i| logits[[i, j]] + u[i]));
        }
        row_potentials.push(u.clone());
        col_potentials.push(v.clone());
    }
    let log_transport = Array2::from_shape_fn((n, m), |(i, j)| logits[[i, j]] + u[i] + v[j]);
    SinkhornRun { log_transport, row_potentials, col_potentials }
}

/// Gradient with respect to the logits of a scalar whose gradient with
/// respect to `log Π` is `grad_log_transport`, back through every iteration.
pub fn log_sinkhorn_backward(
    logits: &Array2<f64>,
    log_a: &[f64],
    log_b: &[f64],
    run: &SinkhornRun,
    grad_log_transport: &Array2<f64>,
) -> Array2<f64> {
    let (n, m) = logits.dim();
    let mut grad = grad_log_transport.clone();
    let mut gu: Array1<f64> = grad_log_transport.sum_axis(Axis(1));
    let mut gv: Array1<f64> = grad_log_transport.sum_axis(Axis(0));
    let zero = Array1::zeros(m);
    for t in (0..run.row_potentials.len()).rev() {
        let u = &run.row_potentials[t];
        let v = &run.col_potentials[t];
        let v_prev = if t == 0 { &zero } else { &run.col_potentials[t - 1] };
        // v_j = log b_j − LSE_i(Z_ij + u_i)
        for i in 0..n {
            for j in 0..m {
                let p = (logits[[i, j]] + u[i] + v[j] - log_b[j]).exp();
                grad[[i, j]] -= gv[j] * p;
                gu[i] -= gv[j] * p;
            }
        }
        // u_i = log a_i − LSE_j(Z_ij + v_prev_j)
        let mut gv_prev = Array1::zeros(m);
        for i in 0..n {
            for j in 0..m {
                let p = (logits[[i, j]] + u[i] + v_prev[j] - log_a[i]).exp();
                grad[[i, j]] -= gu[i] * p;
                gv_prev[j] -= gu[i] * p;
            }
        }
        gv = gv_prev;
        gu.fill(0.0);
    }
    grad
}

/// Point-level inputs for one cloud.
#[derive(Debug, Clone, Copy)]
pub struct MatchSide<'a> {
    pub cloud: &'a PointCloud,
    pub superpoints: &'a SuperpointSet,
    /// One descriptor row per raw point.
    pub point_features: &'a Array2<f64>,
}

/// Optimal-transport problem of one coarse match.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTransport {
    pub group: usize,
    pub src_points: Vec<usize>,
    pub dst_points: Vec<usize>,
    pub bandwidth: f64,
    /// `(n+1) × (m+1)`, last row and column are the slack bins.
    pub log_transport: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineOutput {
    pub matches: Vec<FineMatch>,
    pub transports: Vec<PatchTransport>,
}

fn sq_feature_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median over source rows of the nearest target descriptor distance,
/// floored.
pub fn fine_bandwidth(fs: &Array2<f64>, ft: &Array2<f64>, floor: f64) -> f64 {
    let mut mins: Vec<f64> = fs
        .rows()
        .into_iter()
        .map(|a| ft.rows().into_iter().map(|b| sq_feature_dist(a, b)).fold(f64::INFINITY, f64::min).sqrt())
        .collect();
    if mins.is_empty() {
        return floor;
    }
    mins.sort_by(f64::total_cmp);
    mins[(mins.len() - 1) / 2].max(floor)
}

/// Augmented logits: `−‖fᵢ − gⱼ‖² / 2s²` on real cells, `slack` on the
/// slack row and column, zero in the corner.
pub fn augmented_logits(fs: &Array2<f64>, ft: &Array2<f64>, bandwidth: f64, slack: f64) -> Array2<f64> {
    let (n, m) = (fs.nrows(), ft.nrows());
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    Array2::from_shape_fn((n + 1, m + 1), |(i, j)| match (i < n, j < m) {
        (true, true) => -sq_feature_dist(fs.row(i), ft.row(j)) * inv,
        (false, false) => 0.0,
        _ => slack,
    })
}

/// Each real row and column carries unit mass; the slack bins absorb the
/// other side's count so both totals are `n + m`.
pub fn augmented_marginals(n: usize, m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut log_a = vec![0.0; n + 1];
    let mut log_b = vec![0.0; m + 1];
    log_a[n] = (m as f64).ln();
    log_b[m] = (n as f64).ln();
    (log_a, log_b)
}

fn select_rows(features: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    features.select(Axis(0), rows)
}

/// Mutual-max real cells of an augmented transport, with their mass.
pub fn extract_mutual(log_transport: &Array2<f64>) -> Vec<(usize, usize, f64)> {
    let (rows, cols) = log_transport.dim();
    let (n, m) = (rows - 1, cols - 1);
    let row_best: Vec<usize> = (0..n).map(|i| top_indices(log_transport.row(i), 1)[0]).collect();
    let col_best: Vec<usize> = (0..m).map(|j| top_indices(log_transport.column(j), 1)[0]).collect();
    let mut out = Vec::new();
    for (i, &j) in row_best.iter().enumerate() {
        if j < m && col_best[j] == i {
            out.push((i, j, log_transport[[i, j]].exp().min(1.0)));
        }
    }
    out
}

/// Point correspondences inside every coarse match.
pub fn match_fine(src: MatchSide<'_>, dst: MatchSide<'_>, coarse: &[CoarseMatch], config: &MatchConfig) -> FineOutput {
    let mut matches = Vec::new();
    let mut transports = Vec::with_capacity(coarse.len());
    for (group, c) in coarse.iter().enumerate() {
        let src_points = src.superpoints.patch_members[c.src].clone();
        let dst_points = dst.superpoints.patch_members[c.dst].clone();
        if src_points.is_empty() || dst_points.is_empty() {
            continue;
        }
        let fs = select_rows(src.point_features, &src_points);
        let ft = select_rows(dst.point_features, &dst_points);
        let bandwidth = fine_bandwidth(&fs, &ft, config.bandwidth_floor);
        let logits = augmented_logits(&fs, &ft, bandwidth, config.slack_logit);
        let (log_a, log_b) = augmented_marginals(fs.nrows(), ft.nrows());
        let run = log_sinkhorn(&logits, &log_a, &log_b, config.sinkhorn_iterations);
        for (i, j, confidence) in extract_mutual(&run.log_transport) {
            matches.push(FineMatch { src: src_points[i], dst: dst_points[j], confidence, group });
        }
        transports.push(PatchTransport { group, src_points, dst_points, bandwidth, log_transport: run.log_transport });
    }
    FineOutput { matches, transports }
}

/// Ground-truth cells of one patch pair in augmented coordinates: mutual
/// nearest neighbours under `ground_truth` within `radius`, then slack cells
/// for every unmatched source row and target column.
pub fn fine_ground_truth(
    src_cloud: &PointCloud,
    dst_cloud: &PointCloud,
    src_points: &[usize],
    dst_points: &[usize],
    ground_truth: &RigidTransform,
    radius: f64,
) -> Vec<(usize, usize)> {
    let (n, m) = (src_points.len(), dst_points.len());
    let moved: Vec<_> = src_points.iter().map(|&p| ground_truth.apply(&src_cloud.points()[p])).collect();
    let targets: Vec<_> = dst_points.iter().map(|&q| dst_cloud.points()[q]).collect();
    let mut cells = Vec::new();
    let mut row_used = vec![false; n];
    let mut col_used = vec![false; m];
    if !moved.is_empty() && !targets.is_empty() {
        let to_target = KdTree::new(&targets);
        let to_source = KdTree::new(&moved);
        for (i, p) in moved.iter().enumerate() {
            let Some((j, d2)) = to_target.nearest(p) else { continue };
            if d2 <= radius * radius && to_source.nearest(&targets[j]).map(|(back, _)| back) == Some(i) {
                cells.push((i, j));
                row_used[i] = true;
                col_used[j] = true;
            }
        }
    }
    cells.extend((0..n).filter(|&i| !row_used[i]).map(|i| (i, m)));
    cells.extend((0..m).filter(|&j| !col_used[j]).map(|j| (n, j)));
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub positive_margin: f64,
    pub negative_margin: f64,
    pub scale: f64,
    /// Overlap above which a superpoint pair is a positive.
    pub positive_overlap: f64,
    pub balance_alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { positive_margin: 0.1, negative_margin: 1.4, scale: 10.0, positive_overlap: 0.1, balance_alpha: 0.01 }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

struct Anchor {
    /// `(src, dst, overlap)` of every positive.
    positives: Vec<(usize, usize, f64)>,
    negatives: Vec<(usize, usize)>,
}

fn circle_anchors(overlap: &Array2<f64>, config: &LossConfig) -> Vec<Anchor> {
    let (n, m) = overlap.dim();
    let mut anchors = Vec::new();
    let mut push = |cells: &mut dyn Iterator<Item = (usize, usize)>| {
        let mut a = Anchor { positives: Vec::new(), negatives: Vec::new() };
        for (i, j) in cells {
            let o = overlap[[i, j]];
            if o > config.positive_overlap {
                a.positives.push((i, j, o));
            } else if o == 0.0 {
                a.negatives.push((i, j));
            }
        }
        if !a.positives.is_empty() && !a.negatives.is_empty() {
            anchors.push(a);
        }
    };
    for i in 0..n {
        push(&mut (0..m).map(|j| (i, j)));
    }
    for j in 0..m {
        push(&mut (0..n).map(|i| (i, j)));
    }
    anchors
}

fn dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    sq_feature_dist(a, b).sqrt()
}

/// Overlap-aware circle loss with its gradients with respect to both token
/// matrices. Anchors are source rows and target columns of the
/// ground-truth overlap matrix.
pub fn circle_loss_with_grad(
    tok_src: &Array2<f64>,
    tok_dst: &Array2<f64>,
    overlap: &Array2<f64>,
    config: &LossConfig,
) -> Result<(f64, Array2<f64>, Array2<f64>), MatchError> {
    if overlap.dim() != (tok_src.nrows(), tok_dst.nrows()) {
        return Err(MatchError::Shape(format!(
            "overlap {:?} does not match token counts ({}, {})",
            overlap.dim(),
            tok_src.nrows(),
            tok_dst.nrows()
        )));
    }
    let anchors = circle_anchors(overlap, config);
    if anchors.is_empty() {
        return Err(MatchError::NoSupervision);
    }
    let beta = config.scale;
    let mut gs = Array2::zeros(tok_src.dim());
    let mut gt = Array2::zeros(tok_dst.dim());
    let mut total = 0.0;
    let count = anchors.len() as f64;
    for a in &anchors {
        let pos: Vec<f64> = a
            .positives
            .iter()
            .map(|&(i, j, o)| o * beta * (dist(tok_src.row(i), tok_dst.row(j)) - config.positive_margin))
            .collect();
        let neg: Vec<f64> = a
            .negatives
            .iter()
            .map(|&(i, j)| beta * (config.negative_margin - dist(tok_src.row(i), tok_dst.row(j))))
            .collect();
        let lp = log_sum_exp(pos.iter().copied());
        let ln = log_sum_exp(neg.iter().copied());
        let z = lp + ln;
        total += softplus(z);
        let outer = sigmoid(z) / count;
        let mut add = |i: usize, j: usize, coeff: f64| {
            let diff = &tok_src.row(i) - &tok_dst.row(j);
            let d = diff.dot(&diff).sqrt();
            if d > 0.0 {
                gs.row_mut(i).scaled_add(coeff / d, &diff);
                gt.row_mut(j).scaled_add(-coeff / d, &diff);
            }
        };
        for (&(i, j, o), &x) in a.positives.iter().zip(&pos) {
            add(i, j, outer * (x - lp).exp() * o * beta);
        }
        for (&(i, j), &x) in a.negatives.iter().zip(&neg) {
            add(i, j, -outer * (x - ln).exp() * beta);
        }
    }
    Ok((total / count, gs, gt))
}

pub fn circle_loss(tok_src: &Array2<f64>, tok_dst: &Array2<f64>, overlap: &Array2<f64>, config: &LossConfig) -> Result<f64, MatchError> {
    circle_loss_with_grad(tok_src, tok_dst, overlap, config).map(|r| r.0)
}

/// Mean of `−log Π` over the given augmented cells of every transport.
pub fn nll_fine_loss(transports: &[Array2<f64>], cells: &[Vec<(usize, usize)>]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (t, cs) in transports.iter().zip(cells) {
        for &(i, j) in cs {
            sum -= t[[i, j]];
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// One fine-level supervision problem: patch members, ground-truth cells
/// and the bandwidth, held fixed under differentiation.
#[derive(Debug, Clone, PartialEq)]
pub struct FinePatch {
    pub src_points: Vec<usize>,
    pub dst_points: Vec<usize>,
    pub cells: Vec<(usize, usize)>,
    pub bandwidth: f64,
}

/// Fine loss and its gradients with respect to the per-point features.
pub fn nll_fine_loss_with_grad(
    point_src: &Array2<f64>,
    point_dst: &Array2<f64>,
    patches: &[FinePatch],
    config: &MatchConfig,
) -> (f64, Array2<f64>, Array2<f64>) {
    let mut gs = Array2::zeros(point_src.dim());
    let mut gt = Array2::zeros(point_dst.dim());
    let count: usize = patches.iter().map(|p| p.cells.len()).sum();
    if count == 0 {
        return (0.0, gs, gt);
    }
    let mut sum = 0.0;
    for patch in patches {
        let fs = select_rows(point_src, &patch.src_points);
        let ft = select_rows(point_dst, &patch.dst_points);
        let (n, m) = (fs.nrows(), ft.nrows());
        let logits = augmented_logits(&fs, &ft, patch.bandwidth, config.slack_logit);
        let (log_a, log_b) = augmented_marginals(n, m);
        let run = log_sinkhorn(&logits, &log_a, &log_b, config.sinkhorn_iterations);
        let mut seed = Array2::zeros((n + 1, m + 1));
        for &(i, j) in &patch.cells {
            sum -= run.log_transport[[i, j]];
            seed[[i, j]] -= 1.0 / count as f64;
        }
        let gz = log_sinkhorn_backward(&logits, &log_a, &log_b, &run, &seed);
        let inv_s2 = 1.0 / (patch.bandwidth * patch.bandwidth);
        for i in 0..n {
            for j in 0..m {
                let g = gz[[i, j]];
                if g == 0.0 {
                    continue;
                }
                let diff = &fs.row(i) - &ft.row(j);
                gs.row_mut(patch.src_points[i]).scaled_add(-g * inv_s2, &diff);
                gt.row_mut(patch.dst_points[j]).scaled_add(g * inv_s2, &diff);
            }
        }
    }
    (sum / count as f64, gs, gt)
}

/// `alpha · L · Σ fᵢ Pᵢ`.
pub fn balance_loss(fractions: &[f64], mean_probs: &[f64], experts: usize, alpha: f64) -> f64 {
    alpha * experts as f64 * fractions.iter().zip(mean_probs).map(|(f, p)| f * p).sum::<f64>()
}

/// Balance loss of routing `tokens` and its gradient with respect to the
/// tokens. The top-1 fractions are piecewise constant and treated as such.
pub fn balance_loss_with_grad(tokens: &Array2<f64>, router: &RouterParams, alpha: f64) -> (f64, Array2<f64>) {
    let decision = route(tokens, router);
    let l = router.experts();
    let stats = crate::net::load_stats(&decision, l);
    let value = balance_loss(&stats.fractions, &stats.mean_probs, l, alpha);
    let t = tokens.nrows().max(1) as f64;
    let upstream: Vec<f64> = stats.fractions.iter().map(|f| alpha * l as f64 * f / t).collect();
    let mut g_logits = Array2::zeros(decision.probs.dim());
    for (r, p) in decision.probs.rows().into_iter().enumerate() {
        let dot: f64 = p.iter().zip(&upstream).map(|(a, b)| a * b).sum();
        for e in 0..l {
            g_logits[[r, e]] = p[e] * (upstream[e] - dot);
        }
    }
    (value, g_logits.dot(router.weights()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub coarse: f64,
    pub fine: f64,
    pub balance: f64,
    pub total: f64,
}

pub fn total_loss(coarse: f64, fine: f64, balance: f64) -> LossReport {
    LossReport { coarse, fine, balance, total: coarse + fine + balance }
}

/// Everything the three losses read.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub tok_src: &'a Array2<f64>,
    pub tok_dst: &'a Array2<f64>,
    pub overlap: &'a Array2<f64>,
    /// Router whose balance is measured over both clouds' tokens.
    pub router: &'a RouterParams,
    pub point_src: &'a Array2<f64>,
    pub point_dst: &'a Array2<f64>,
    pub patches: &'a [FinePatch],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradients {
    pub tok_src: Array2<f64>,
    pub tok_dst: Array2<f64>,
    pub point_src: Array2<f64>,
    pub point_dst: Array2<f64>,
}

/// All three losses and the gradient of their sum.
pub fn total_loss_with_grad(
    inputs: &LossInputs<'_>,
    loss: &LossConfig,
    matching: &MatchConfig,
) -> Result<(LossReport, LossGradients), MatchError> {
    let (coarse, mut gs, mut gt) = circle_loss_with_grad(inputs.tok_src, inputs.tok_dst, inputs.overlap, loss)?;
    let (fine, ps, pt) = nll_fine_loss_with_grad(inputs.point_src, inputs.point_dst, inputs.patches, matching);
    let stacked = ndarray::concatenate(Axis(0), &[inputs.tok_src.view(), inputs.tok_dst.view()])
        .map_err(|e| MatchError::Shape(e.to_string()))?;
    let (balance, gb) = balance_loss_with_grad(&stacked, inputs.router, loss.balance_alpha);
    let n = inputs.tok_src.nrows();
    gs += &gb.slice(ndarray::s![..n, ..]);
    gt += &gb.slice(ndarray::s![n.., ..]);
    Ok((total_loss(coarse, fine, balance), LossGradients { tok_src: gs, tok_dst: gt, point_src: ps, point_dst: pt }))
}

/// Fraction of correspondences whose source point lands within `radius` of
/// its target point under `ground_truth`.
pub fn inlier_fraction(matches: &[FineMatch], src: &PointCloud, dst: &PointCloud, ground_truth: &RigidTransform, radius: f64) -> f64 {
    if matches.is_empty() {
        return 0.0;
    }
    let hits = matches
        .iter()
        .filter(|m| sq_dist(&ground_truth.apply(&src.points()[m.src]), &dst.points()[m.dst]) < radius * radius)
        .count();
    hits as f64 / matches.len() as f64
}
