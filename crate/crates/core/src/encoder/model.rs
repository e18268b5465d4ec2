use std::collections::HashSet;

use super::linalg::{axpy, dot, log_sum_exp, softmax, Matrix};
use super::params::{HeadParams, LayerParams, TieParams};
use super::{EncoderConfig, ModelError};
use crate::graph::{GraphBundle, RelationGraph, RelationKind};
use crate::html_dom::{DomTree, NodeId, TokenSequence};

/// One row per DOM node.
pub type NodeMatrix = Matrix;

/// Probability of each node being the answer node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeDistribution {
    pub probs: Vec<f64>,
}

impl NodeDistribution {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Node ids ordered by decreasing probability, ties by id.
    pub fn ranked(&self) -> Vec<NodeId> {
        let mut ids: Vec<NodeId> = (0..self.probs.len()).collect();
        ids.sort_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]).then(a.cmp(&b)));
        ids
    }
}

/// Argmax with ties going to the lowest node id.
pub fn locate_node(dist: &NodeDistribution) -> NodeId {
    let mut best = 0;
    for (i, &p) in dist.probs.iter().enumerate() {
        if p > dist.probs[best] {
            best = i;
        }
    }
    best
}

/// Additive attention mask: `0` where attention is allowed, `-inf` elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskMatrix {
    n: usize,
    data: Vec<f64>,
    /// Allowed columns of each row, ascending.
    neighbours: Vec<Vec<usize>>,
}

impl MaskMatrix {
    /// Mask from row-major additive entries; anything other than `0` is
    /// treated as masked.
    pub fn from_additive(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n, "mask data length");
        let neighbours = (0..n)
            .map(|j| (0..n).filter(|&k| data[j * n + k] == 0.0).collect())
            .collect();
        MaskMatrix { n, data, neighbours }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn neighbours(&self, j: usize) -> &[usize] {
        &self.neighbours[j]
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.data[j * self.n + k]
    }

    #[inline]
    pub fn allowed(&self, j: usize, k: usize) -> bool {
        self.get(j, k) == 0.0
    }

    pub fn allowed_count(&self) -> usize {
        self.data.iter().filter(|v| **v == 0.0).count()
    }
}

/// Mask of a relation graph; the diagonal is always allowed so that no row
/// is fully masked.
pub fn build_mask(graph: &RelationGraph, n: usize) -> MaskMatrix {
    let mut data = vec![f64::NEG_INFINITY; n * n];
    for j in 0..n {
        data[j * n + j] = 0.0;
    }
    for &(j, k) in &graph.edges {
        if j < n && k < n {
            data[j * n + k] = 0.0;
        }
    }
    MaskMatrix::from_additive(n, data)
}

/// Masks for the relation kinds a configuration actually uses.
pub(crate) struct MaskSet {
    masks: [Option<MaskMatrix>; 5],
}

impl MaskSet {
    pub(crate) fn new(bundle: &GraphBundle, assignment: &[RelationKind]) -> Self {
        let n = bundle.n();
        let mut masks: [Option<MaskMatrix>; 5] = Default::default();
        for &kind in assignment {
            let slot = &mut masks[kind.code() as usize];
            if slot.is_none() {
                *slot = Some(build_mask(bundle.get(kind), n));
            }
        }
        MaskSet { masks }
    }

    pub(crate) fn get(&self, kind: RelationKind) -> &MaskMatrix {
        self.masks[kind.code() as usize]
            .as_ref()
            .expect("mask built for every assigned kind")
    }
}

/// FNV-1a bucket of the lowercased token text.
pub fn token_bucket(text: &str, buckets: usize) -> usize {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.to_lowercase().bytes() {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    (hash % buckets as u64) as usize
}

pub(crate) fn question_words(question: &TokenSequence) -> HashSet<String> {
    question
        .tokens
        .iter()
        .filter(|t| t.is_word())
        .map(|t| t.text.to_lowercase())
        .collect()
}

/// Per page token: embedding bucket and whether it occurs in the question.
pub(crate) fn token_features(
    question: &TokenSequence,
    page: &TokenSequence,
    buckets: usize,
) -> (Vec<usize>, Vec<bool>) {
    let qwords = question_words(question);
    page.tokens
        .iter()
        .map(|t| {
            let overlap = t.is_word() && qwords.contains(&t.text.to_lowercase());
            (token_bucket(&t.text, buckets), overlap)
        })
        .unzip()
}

/// Token embeddings `|c| × d`: a hashed table row, plus the overlap vector
/// for tokens that appear among the question's words.
pub fn toy_context_encode(
    question: &TokenSequence,
    page: &TokenSequence,
    params: &TieParams,
    config: &EncoderConfig,
) -> Result<Matrix, ModelError> {
    if page.len() > config.max_tokens {
        return Err(ModelError::TooManyTokens {
            len: page.len(),
            max: config.max_tokens,
        });
    }
    let (buckets, overlap) = token_features(question, page, params.buckets);
    Ok(embed(&buckets, &overlap, params))
}

fn embed(buckets: &[usize], overlap: &[bool], params: &TieParams) -> Matrix {
    let mut x = Matrix::zeros(buckets.len(), params.dim);
    for (t, (&b, &o)) in buckets.iter().zip(overlap).enumerate() {
        let row = x.row_mut(t);
        row.copy_from_slice(params.embeddings.row(b));
        if o {
            axpy(row, 1.0, &params.overlap);
        }
    }
    x
}

/// Node representation = mean embedding of the node's direct contents.
pub fn mean_pool(tokens: &Matrix, tree: &DomTree) -> NodeMatrix {
    let mut out = Matrix::zeros(tree.len(), tokens.cols);
    for node in &tree.nodes {
        if node.direct_content.is_empty() {
            continue;
        }
        let row = out.row_mut(node.id);
        for &t in &node.direct_content {
            axpy(row, 1.0, tokens.row(t));
        }
        let inv = 1.0 / node.direct_content.len() as f64;
        row.iter_mut().for_each(|v| *v *= inv);
    }
    out
}

pub(crate) struct HeadCache {
    /// Row-softmaxed attention weights, `n × n`.
    pub attn: Matrix,
}

/// Stacked projection weights of a set of heads, `d × 3·H·dh`, laid out
/// as `[Q_1 .. Q_H | K_1 .. K_H | V_1 .. V_H]`.
pub(crate) fn stack_projections(heads: &[HeadParams]) -> Matrix {
    let dh = heads[0].wq.rows;
    let width = heads.len() * dh;
    let d = heads[0].wq.cols;
    let mut stacked = Matrix::zeros(d, 3 * width);
    for (h, head) in heads.iter().enumerate() {
        for (part, w) in [&head.wq, &head.wk, &head.wv].into_iter().enumerate() {
            for o in 0..dh {
                for (c, &value) in w.row(o).iter().enumerate() {
                    stacked.set(c, part * width + h * dh + o, value);
                }
            }
        }
    }
    stacked
}

/// Where one head's query, key and value columns sit in a stacked
/// projection.
#[derive(Debug, Clone, Copy)]
pub(crate) struct HeadSlot {
    pub q: usize,
    pub k: usize,
    pub v: usize,
    pub dh: usize,
}

impl HeadSlot {
    pub(crate) fn new(h: usize, dh: usize, width: usize) -> Self {
        HeadSlot {
            q: h * dh,
            k: width + h * dh,
            v: 2 * width + h * dh,
            dh,
        }
    }
}

/// `softmax(Q Kᵀ / s + M)` for one head, reading `Q`, `K` from `proj`.
/// `out` receives `A V` in its columns `out_col..out_col + dh`.
fn attend(
    proj: &Matrix,
    slot: HeadSlot,
    mask: &MaskMatrix,
    scale: f64,
    out: &mut Matrix,
    out_col: usize,
) -> Result<HeadCache, ModelError> {
    let n = proj.rows;
    if mask.n != n {
        return Err(ModelError::ShapeMismatch(format!(
            "mask is {}×{}, nodes are {n}",
            mask.n, mask.n
        )));
    }
    let dh = slot.dh;
    let mut attn = Matrix::zeros(n, n);
    for j in 0..n {
        let qj = &proj.row(j)[slot.q..slot.q + dh];
        let row = attn.row_mut(j);
        let mut max = f64::NEG_INFINITY;
        for &kk in &mask.neighbours[j] {
            let s = dot(qj, &proj.row(kk)[slot.k..slot.k + dh]) / scale;
            if s.is_nan() {
                return Err(ModelError::NonFiniteInput);
            }
            row[kk] = s;
            max = max.max(s);
        }
        if !max.is_finite() {
            return Err(ModelError::NonFiniteInput);
        }
        let mut sum = 0.0;
        for &kk in &mask.neighbours[j] {
            let e = (row[kk] - max).exp();
            row[kk] = e;
            sum += e;
        }
        for &kk in &mask.neighbours[j] {
            row[kk] /= sum;
        }
        let out_row = &mut out.row_mut(j)[out_col..out_col + dh];
        for &kk in &mask.neighbours[j] {
            axpy(out_row, row[kk], &proj.row(kk)[slot.v..slot.v + dh]);
        }
    }
    Ok(HeadCache { attn })
}

/// One attention head: `softmax(Q Kᵀ / s + M) V` with a row per node.
pub fn gat_head(
    nodes: &NodeMatrix,
    head: &HeadParams,
    mask: &MaskMatrix,
    config: &EncoderConfig,
) -> Result<Matrix, ModelError> {
    if !nodes.is_finite() {
        return Err(ModelError::NonFiniteInput);
    }
    let dh = head.wq.rows;
    let proj = nodes.mul(&stack_projections(std::slice::from_ref(head)));
    let mut out = Matrix::zeros(nodes.rows, dh);
    attend(
        &proj,
        HeadSlot::new(0, dh, dh),
        mask,
        config.score_scale(),
        &mut out,
        0,
    )?;
    Ok(out)
}

pub(crate) struct LayerCache {
    pub input: Matrix,
    /// `input · stacked`, the queries, keys and values of every head.
    pub proj: Matrix,
    pub stacked: Matrix,
    pub heads: Vec<HeadCache>,
}

pub(crate) fn layer_forward(
    nodes: &Matrix,
    layer: &LayerParams,
    config: &EncoderConfig,
    masks: &MaskSet,
) -> Result<(Matrix, LayerCache), ModelError> {
    if !nodes.is_finite() {
        return Err(ModelError::NonFiniteInput);
    }
    let dh = config.head_dim();
    let scale = config.score_scale();
    let mut out = Matrix::zeros(nodes.rows, config.dim);
    let mut heads = Vec::with_capacity(config.heads);
    let stacked = stack_projections(&layer.heads);
    let proj = nodes.mul(&stacked);
    for (h, &kind) in config.assignment.iter().enumerate() {
        let slot = HeadSlot::new(h, dh, config.dim);
        heads.push(attend(&proj, slot, masks.get(kind), scale, &mut out, h * dh)?);
    }
    if config.residual {
        out.add_assign(nodes);
    }
    Ok((
        out,
        LayerCache {
            input: nodes.clone(),
            proj,
            stacked,
            heads,
        },
    ))
}

/// All heads of one block, concatenated back to width `d`.
pub fn gat_layer(
    nodes: &NodeMatrix,
    layer: &LayerParams,
    config: &EncoderConfig,
    bundle: &GraphBundle,
) -> Result<NodeMatrix, ModelError> {
    let masks = MaskSet::new(bundle, &config.assignment);
    layer_forward(nodes, layer, config, &masks).map(|(out, _)| out)
}

pub(crate) struct ForwardPass {
    pub buckets: Vec<usize>,
    pub overlap: Vec<bool>,
    pub masks: MaskSet,
    pub layers: Vec<LayerCache>,
    pub output: Matrix,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ForwardPass {
    pub fn log_prob(&self, node: NodeId) -> f64 {
        self.logits[node] - log_sum_exp(&self.logits)
    }
}

pub(crate) fn forward_pass(
    question: &TokenSequence,
    page: &TokenSequence,
    tree: &DomTree,
    bundle: &GraphBundle,
    params: &TieParams,
    config: &EncoderConfig,
) -> Result<ForwardPass, ModelError> {
    config.check_params(params)?;
    if page.len() > config.max_tokens {
        return Err(ModelError::TooManyTokens {
            len: page.len(),
            max: config.max_tokens,
        });
    }
    if bundle.n() != tree.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "graphs have {} nodes, tree has {}",
            bundle.n(),
            tree.len()
        )));
    }
    if tree.token_count() != page.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "tree covers {} tokens, page has {}",
            tree.token_count(),
            page.len()
        )));
    }
    let (buckets, overlap) = token_features(question, page, params.buckets);
    let tokens = embed(&buckets, &overlap, params);
    let masks = MaskSet::new(bundle, &config.assignment);

    let mut nodes = mean_pool(&tokens, tree);
    let mut layers = Vec::with_capacity(config.layers);
    for layer in &params.layers {
        let (next, cache) = layer_forward(&nodes, layer, config, &masks)?;
        layers.push(cache);
        nodes = next;
    }
    let logits: Vec<f64> = (0..nodes.rows)
        .map(|i| dot(nodes.row(i), &params.classifier) + params.bias)
        .collect();
    let probs = softmax(&logits)
        .filter(|p| p.iter().all(|v| v.is_finite()))
        .ok_or(ModelError::NonFiniteLogits)?;
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(ModelError::NonFiniteLogits);
    }
    Ok(ForwardPass {
        buckets,
        overlap,
        masks,
        layers,
        output: nodes,
        logits,
        probs,
    })
}

/// Answer-node distribution for one question over one page.
pub fn forward(
    question: &TokenSequence,
    page: &TokenSequence,
    tree: &DomTree,
    bundle: &GraphBundle,
    params: &TieParams,
    config: &EncoderConfig,
) -> Result<NodeDistribution, ModelError> {
    forward_pass(question, page, tree, bundle, params, config).map(|f| NodeDistribution { probs: f.probs })
}

/// Attention weights of every head in every layer, for inspection.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    /// `layers[l][h]` is the `n × n` weight matrix of head `h` in layer `l`.
    pub layers: Vec<Vec<Matrix>>,
    /// Mask used by each head, indexed like `config.assignment`.
    pub masks: Vec<MaskMatrix>,
    pub distribution: NodeDistribution,
}

impl AttentionTrace {
    pub fn capture(
        question: &TokenSequence,
        page: &TokenSequence,
        tree: &DomTree,
        bundle: &GraphBundle,
        params: &TieParams,
        config: &EncoderConfig,
    ) -> Result<Self, ModelError> {
        let pass = forward_pass(question, page, tree, bundle, params, config)?;
        let masks = config
            .assignment
            .iter()
            .map(|&k| build_mask(bundle.get(k), bundle.n()))
            .collect();
        Ok(AttentionTrace {
            layers: pass
                .layers
                .into_iter()
                .map(|l| l.heads.into_iter().map(|h| h.attn).collect())
                .collect(),
            masks,
            distribution: NodeDistribution { probs: pass.probs },
        })
    }
}
