use super::linalg::{axpy, dot, Matrix};
use super::model::{forward_pass, ForwardPass, HeadSlot};
use super::params::{HeadParams, TieParams};
use super::{EncoderConfig, ModelError, NodeExample};
use crate::html_dom::DomTree;

/// Mean negative log-likelihood of the gold nodes and its gradient.
pub fn loss_and_grads(
    batch: &[NodeExample<'_>],
    params: &TieParams,
    config: &EncoderConfig,
) -> Result<(f64, TieParams), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut grads = TieParams::zeros_like(params);
    let weight = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for ex in batch {
        let pass = forward_pass(ex.question, ex.page, ex.tree, ex.bundle, params, config)?;
        loss -= weight * example_log_prob(&pass, ex)?;
        accumulate(&pass, ex, params, config, weight, &mut grads);
    }
    Ok((loss, grads))
}

pub(crate) fn example_log_prob(pass: &ForwardPass, ex: &NodeExample<'_>) -> Result<f64, ModelError> {
    if ex.gold >= pass.probs.len() {
        return Err(ModelError::GoldOutOfRange {
            gold: ex.gold,
            n: pass.probs.len(),
        });
    }
    Ok(pass.log_prob(ex.gold))
}

/// Add `weight · ∂(−log p[gold])/∂θ` of one forward pass into `grads`.
pub(crate) fn accumulate(
    pass: &ForwardPass,
    ex: &NodeExample<'_>,
    params: &TieParams,
    config: &EncoderConfig,
    weight: f64,
    grads: &mut TieParams,
) {
    let n = pass.probs.len();
    let dim = config.dim;

    // softmax + NLL
    let dlogits: Vec<f64> = (0..n)
        .map(|i| weight * (pass.probs[i] - if i == ex.gold { 1.0 } else { 0.0 }))
        .collect();

    // classifier
    grads.bias += dlogits.iter().sum::<f64>();
    let mut d_nodes = Matrix::zeros(n, dim);
    for (i, &g) in dlogits.iter().enumerate() {
        axpy(&mut grads.classifier, g, pass.output.row(i));
        axpy(d_nodes.row_mut(i), g, &params.classifier);
    }

    // attention blocks, last to first
    let dh = config.head_dim();
    let scale = config.score_scale();
    let mut d_attn = vec![0.0; n];
    for (l, cache) in pass.layers.iter().enumerate().rev() {
        let proj = &cache.proj;
        // gradient of the stacked projection, `[dQ | dK | dV]`
        let mut d_proj = Matrix::zeros(n, 3 * dim);
        for (h, head) in cache.heads.iter().enumerate() {
            let slot = HeadSlot::new(h, dh, dim);
            let mask = pass.masks.get(config.assignment[h]);
            for j in 0..n {
                let a = head.attn.row(j);
                let d_out = &d_nodes.row(j)[h * dh..(h + 1) * dh];
                let neighbours = mask.neighbours(j);

                // out = A V
                for &k in neighbours {
                    d_attn[k] = dot(d_out, &proj.row(k)[slot.v..slot.v + dh]);
                    axpy(&mut d_proj.row_mut(k)[slot.v..slot.v + dh], a[k], d_out);
                }

                // row softmax: dS = A ⊙ (dA − Σ_k A dA), then S = Q Kᵀ / s
                let inner: f64 = neighbours.iter().map(|&k| a[k] * d_attn[k]).sum();
                for &k in neighbours {
                    let ds = a[k] * (d_attn[k] - inner) / scale;
                    if ds == 0.0 {
                        continue;
                    }
                    axpy(
                        &mut d_proj.row_mut(j)[slot.q..slot.q + dh],
                        ds,
                        &proj.row(k)[slot.k..slot.k + dh],
                    );
                    axpy(
                        &mut d_proj.row_mut(k)[slot.k..slot.k + dh],
                        ds,
                        &proj.row(j)[slot.q..slot.q + dh],
                    );
                }
            }
        }

        // proj = input · stacked
        let mut d_stacked = Matrix::zeros(dim, 3 * dim);
        d_stacked.add_transposed_product(&cache.input, &d_proj);
        scatter_stacked(&d_stacked, dh, &mut grads.layers[l].heads);
        let mut d_input = d_proj.mul_transposed(&cache.stacked);
        if config.residual {
            d_input.add_assign(&d_nodes);
        }
        d_nodes = d_input;
    }

    pool_backward(&d_nodes, ex.tree, pass, grads);
}

/// Add a stacked `d × 3·H·dh` weight gradient into the per-head arrays.
fn scatter_stacked(d_stacked: &Matrix, dh: usize, heads: &mut [HeadParams]) {
    let width = heads.len() * dh;
    for (h, head) in heads.iter_mut().enumerate() {
        for (part, w) in [&mut head.wq, &mut head.wk, &mut head.wv].into_iter().enumerate() {
            for c in 0..d_stacked.rows {
                let src = &d_stacked.row(c)[part * width + h * dh..part * width + (h + 1) * dh];
                for (o, &g) in src.iter().enumerate() {
                    w.data[o * w.cols + c] += g;
                }
            }
        }
    }
}

/// Mean pooling and the hashed encoder.
fn pool_backward(d_nodes: &Matrix, tree: &DomTree, pass: &ForwardPass, grads: &mut TieParams) {
    for node in &tree.nodes {
        if node.direct_content.is_empty() {
            continue;
        }
        let inv = 1.0 / node.direct_content.len() as f64;
        let d_row = d_nodes.row(node.id);
        for &t in &node.direct_content {
            axpy(grads.embeddings.row_mut(pass.buckets[t]), inv, d_row);
            if pass.overlap[t] {
                axpy(&mut grads.overlap, inv, d_row);
            }
        }
    }
}
