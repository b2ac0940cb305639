//! The contrastive and ranking losses with closed-form gradients.
//!
//! All losses are plain functions of the embedding rows they consume; the
//! trainer is responsible for gathering rows and scattering gradients back.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::propagation::BaseTables;

/// Numerically safe log(sigmoid(x)).
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Numerically safe logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Aligned anchor/positive rows with the in-batch negative pool: candidate
/// `j` is the positive for anchor `j` and a negative for every other anchor.
#[derive(Debug, Clone)]
pub struct ContrastiveBatch {
    pub anchors: Array2<f64>,
    pub positives: Array2<f64>,
    pub temperature: f64,
    /// Restrict the denominator to the in-batch negatives, dropping the
    /// positive term (the literal printed form of the paired objectives).
    pub exclude_positive: bool,
}

#[derive(Debug, Clone)]
pub struct InfoNceResult {
    /// Mean over anchors.
    pub loss: f64,
    pub per_anchor: Vec<f64>,
    pub grad_anchors: Array2<f64>,
    pub grad_positives: Array2<f64>,
}

/// InfoNCE over cosine similarity at temperature tau.
///
/// For anchor i with candidates c_1..c_n (the aligned positives of all
/// anchors): `-log( exp(cos(a_i, c_i)/tau) / sum_j exp(cos(a_i, c_j)/tau) )`,
/// averaged over anchors. With `exclude_positive` the denominator sum skips
/// j = i, which requires at least two entities.
pub fn info_nce(batch: &ContrastiveBatch) -> Result<InfoNceResult> {
    let n = batch.anchors.nrows();
    let d = batch.anchors.ncols();
    if batch.positives.nrows() != n || batch.positives.ncols() != d {
        return Err(Error::Contract("anchor/positive shape mismatch".into()));
    }
    if n == 0 {
        return Err(Error::Contract("empty contrastive batch".into()));
    }
    if batch.exclude_positive && n < 2 {
        return Err(Error::Contract(
            "exclude_positive denominator needs at least two in-batch entities".into(),
        ));
    }
    let tau = batch.temperature;
    assert!(tau > 0.0, "temperature must be positive");

    let anchor_norms = row_norms(&batch.anchors, "anchor")?;
    let cand_norms = row_norms(&batch.positives, "candidate")?;

    // cosine matrix
    let mut cos = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            cos[[i, j]] = batch.anchors.row(i).dot(&batch.positives.row(j)) / (anchor_norms[i] * cand_norms[j]);
        }
    }

    // softmax weights per anchor over the active candidate set
    let mut per_anchor = Vec::with_capacity(n);
    let mut coef = Array2::zeros((n, n)); // d loss_i / d cos[i, j], before the 1/n mean
    for i in 0..n {
        let active = |j: usize| !(batch.exclude_positive && j == i);
        let mut max_logit = f64::NEG_INFINITY;
        for j in 0..n {
            if active(j) {
                max_logit = max_logit.max(cos[[i, j]] / tau);
            }
        }
        let mut denom = 0.0;
        for j in 0..n {
            if active(j) {
                denom += ((cos[[i, j]] / tau) - max_logit).exp();
            }
        }
        let lse = max_logit + denom.ln();
        per_anchor.push(lse - cos[[i, i]] / tau);
        for j in 0..n {
            if active(j) {
                coef[[i, j]] = ((cos[[i, j]] / tau) - lse).exp() / tau;
            }
        }
        coef[[i, i]] -= 1.0 / tau;
    }
    let loss = per_anchor.iter().sum::<f64>() / n as f64;

    // d cos(a, c)/da = (c_hat - cos * a_hat) / |a|, symmetrically for c
    let scale = 1.0 / n as f64;
    let mut grad_anchors = Array2::zeros((n, d));
    let mut grad_positives = Array2::zeros((n, d));
    for i in 0..n {
        for j in 0..n {
            let w = coef[[i, j]] * scale;
            if w == 0.0 {
                continue;
            }
            let s = cos[[i, j]];
            for f in 0..d {
                let a_hat = batch.anchors[[i, f]] / anchor_norms[i];
                let c_hat = batch.positives[[j, f]] / cand_norms[j];
                grad_anchors[[i, f]] += w * (c_hat - s * a_hat) / anchor_norms[i];
                grad_positives[[j, f]] += w * (a_hat - s * c_hat) / cand_norms[j];
            }
        }
    }

    Ok(InfoNceResult { loss, per_anchor, grad_anchors, grad_positives })
}

fn row_norms(m: &Array2<f64>, side: &'static str) -> Result<Vec<f64>> {
    m.rows()
        .into_iter()
        .enumerate()
        .map(|(row, r)| {
            let n = r.dot(&r).sqrt();
            if n == 0.0 {
                Err(Error::DegenerateEmbedding { side, row })
            } else {
                Ok(n)
            }
        })
        .collect()
}

/// Align the two augmented-view representations of each batch item: anchors
/// are the user-view rows, positives the basket-view rows of the same item.
pub fn cross_behavior_loss(
    item_view_u: &Array2<f64>,
    item_view_b: &Array2<f64>,
    items: &[usize],
    temperature: f64,
    exclude_positive: bool,
) -> Result<(InfoNceResult, Vec<usize>)> {
    let batch = ContrastiveBatch {
        anchors: gather(item_view_u, items),
        positives: gather(item_view_b, items),
        temperature,
        exclude_positive,
    };
    Ok((info_nce(&batch)?, items.to_vec()))
}

/// Gather rows `ids` of `table` into a dense batch matrix.
pub fn gather(table: &Array2<f64>, ids: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((ids.len(), table.ncols()));
    for (row, &id) in ids.iter().enumerate() {
        out.row_mut(row).assign(&table.row(id));
    }
    out
}

/// Add each batch-row gradient onto the table row it was gathered from.
pub fn scatter_add(table_grad: &mut Array2<f64>, ids: &[usize], grads: &Array2<f64>) {
    for (row, &id) in ids.iter().enumerate() {
        let mut dst = table_grad.row_mut(id);
        dst += &grads.row(row);
    }
}

/// The four original-vs-augmented alignment terms (users, items on the user
/// view, baskets, items on the basket view). Terms may be absent when the
/// corresponding view is disabled or its batch is empty.
#[derive(Debug, Default)]
pub struct WithinBehaviorTerms {
    pub user: Option<ContrastiveBatch>,
    pub item_user_view: Option<ContrastiveBatch>,
    pub basket: Option<ContrastiveBatch>,
    pub item_basket_view: Option<ContrastiveBatch>,
}

#[derive(Debug, Default)]
pub struct WithinBehaviorResult {
    pub loss: f64,
    pub user: Option<InfoNceResult>,
    pub item_user_view: Option<InfoNceResult>,
    pub basket: Option<InfoNceResult>,
    pub item_basket_view: Option<InfoNceResult>,
}

/// Sum of the per-entity-class InfoNCE terms.
pub fn within_behavior_loss(terms: &WithinBehaviorTerms) -> Result<WithinBehaviorResult> {
    let mut out = WithinBehaviorResult::default();
    for (batch, slot) in [
        (&terms.user, &mut out.user),
        (&terms.item_user_view, &mut out.item_user_view),
        (&terms.basket, &mut out.basket),
        (&terms.item_basket_view, &mut out.item_basket_view),
    ] {
        if let Some(b) = batch {
            let r = info_nce(b)?;
            out.loss += r.loss;
            *slot = Some(r);
        }
    }
    Ok(out)
}

/// Ranking score of a (user, basket, item) triple over the fused item
/// embedding: `(1-r) <e_u, e_i> + r <e_b, e_i>`, or the unweighted sum of
/// both dot products in additive mode.
pub fn score(e_u: ArrayView1<f64>, e_b: ArrayView1<f64>, e_i: ArrayView1<f64>, r: f64, additive: bool) -> f64 {
    let (wu, wb) = score_weights(r, additive);
    wu * e_u.dot(&e_i) + wb * e_b.dot(&e_i)
}

pub fn score_weights(r: f64, additive: bool) -> (f64, f64) {
    if additive {
        (1.0, 1.0)
    } else {
        (1.0 - r, r)
    }
}

/// A pairwise ranking sample: positive item drawn from the owner's current
/// basket, negative item never purchased by the owner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BprTriple {
    pub user: usize,
    pub basket: usize,
    pub pos: usize,
    pub neg: usize,
}

/// Embedding inputs the BPR loss reads. `basket_items` supplies the member
/// list behind each triple's basket embedding.
pub struct BprInputs<'a> {
    pub final_user: &'a Array2<f64>,
    pub fused_item: &'a Array2<f64>,
    pub final_item_b: &'a Array2<f64>,
    pub basket_items: &'a [Vec<usize>],
    pub r: f64,
    pub additive: bool,
}

pub struct BprOutput {
    /// `-sum log sigmoid(y_pos - y_neg) + lambda * |Theta|^2` over the batch.
    pub loss: f64,
    pub grad_final_user: Array2<f64>,
    pub grad_fused_item: Array2<f64>,
    pub grad_final_item_b: Array2<f64>,
    /// Gradients of the regularizer, which acts on base rows directly.
    pub reg_grad_user: Array2<f64>,
    pub reg_grad_item: Array2<f64>,
    pub reg_grad_item_hyper: Option<Array2<f64>>,
}

/// BPR over the dual-view score. Theta is the set of base rows each triple
/// touches (user, positive, negative; plus the hypergraph copies when the
/// views keep separate tables), accumulated per occurrence.
pub fn bpr_loss(inputs: &BprInputs, triples: &[BprTriple], lambda: f64, base: &BaseTables) -> BprOutput {
    let d = inputs.final_user.ncols();
    let (wu, wb) = score_weights(inputs.r, inputs.additive);

    let mut out = BprOutput {
        loss: 0.0,
        grad_final_user: Array2::zeros(inputs.final_user.raw_dim()),
        grad_fused_item: Array2::zeros(inputs.fused_item.raw_dim()),
        grad_final_item_b: Array2::zeros(inputs.final_item_b.raw_dim()),
        reg_grad_user: Array2::zeros(base.user.raw_dim()),
        reg_grad_item: Array2::zeros(base.item.raw_dim()),
        reg_grad_item_hyper: base.item_hyper.as_ref().map(|t| Array2::zeros(t.raw_dim())),
    };

    // basket embeddings are shared within the batch
    let mut basket_emb: std::collections::HashMap<usize, Array1<f64>> = std::collections::HashMap::new();

    for t in triples {
        let members = &inputs.basket_items[t.basket];
        let e_b = basket_emb
            .entry(t.basket)
            .or_insert_with(|| crate::propagation::basket_embedding(inputs.final_item_b, members).expect("train baskets are nonempty"))
            .clone();
        let e_u = inputs.final_user.row(t.user);
        let e_pos = inputs.fused_item.row(t.pos);
        let e_neg = inputs.fused_item.row(t.neg);

        let y_pos = wu * e_u.dot(&e_pos) + wb * e_b.dot(&e_pos);
        let y_neg = wu * e_u.dot(&e_neg) + wb * e_b.dot(&e_neg);
        let diff = y_pos - y_neg;
        out.loss -= log_sigmoid(diff);
        let g = sigmoid(diff) - 1.0; // d(-log sigmoid(diff)) / d diff

        // d diff / d e_u = wu (e_pos - e_neg); d diff / d e_b = wb (e_pos - e_neg)
        // d diff / d e_pos = wu e_u + wb e_b; d diff / d e_neg = -(wu e_u + wb e_b)
        let spread = g * wb / members.len() as f64;
        for f in 0..d {
            let delta = e_pos[f] - e_neg[f];
            out.grad_final_user[[t.user, f]] += g * wu * delta;
            let ctx = wu * e_u[f] + wb * e_b[f];
            out.grad_fused_item[[t.pos, f]] += g * ctx;
            out.grad_fused_item[[t.neg, f]] -= g * ctx;
        }
        for &m in members {
            for f in 0..d {
                out.grad_final_item_b[[m, f]] += spread * (e_pos[f] - e_neg[f]);
            }
        }

        if lambda > 0.0 {
            out.loss += lambda
                * (sq_norm(base.user.row(t.user))
                    + sq_norm(base.item.row(t.pos))
                    + sq_norm(base.item.row(t.neg)));
            for f in 0..d {
                out.reg_grad_user[[t.user, f]] += 2.0 * lambda * base.user[[t.user, f]];
                out.reg_grad_item[[t.pos, f]] += 2.0 * lambda * base.item[[t.pos, f]];
                out.reg_grad_item[[t.neg, f]] += 2.0 * lambda * base.item[[t.neg, f]];
            }
            if let (Some(hyper), Some(reg)) = (&base.item_hyper, &mut out.reg_grad_item_hyper) {
                out.loss += lambda * (sq_norm(hyper.row(t.pos)) + sq_norm(hyper.row(t.neg)));
                for f in 0..d {
                    reg[[t.pos, f]] += 2.0 * lambda * hyper[[t.pos, f]];
                    reg[[t.neg, f]] += 2.0 * lambda * hyper[[t.neg, f]];
                }
            }
        }
    }
    out
}

fn sq_norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v)
}

/// The multi-task combination: `main + alpha1 * cross + alpha2 * within`.
pub fn total_loss(main: f64, cross: f64, within: f64, alpha1: f64, alpha2: f64) -> f64 {
    main + alpha1 * cross + alpha2 * within
}
