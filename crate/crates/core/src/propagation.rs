//! Linear message passing on both views, layer pooling, basket read-out, and
//! the exact adjoint of every forward operator.
//!
//! Both propagators are linear maps of the base tables, so reverse-mode
//! gradients are just the transposed operator chains; the hypergraph operator
//! is symmetric and is its own adjoint. All arithmetic is f64 with a fixed
//! accumulation order (CSR order), so results are bit-reproducible.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::graphs::{clamped, BasketHypergraph, BipartiteGraph};

/// Learnable tables. `item_hyper` is present only when the hypergraph view
/// keeps its own layer-0 input instead of sharing `item`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseTables {
    pub user: Array2<f64>,
    pub item: Array2<f64>,
    pub item_hyper: Option<Array2<f64>>,
}

impl BaseTables {
    pub fn dim(&self) -> usize {
        self.user.ncols()
    }

    pub fn hyper_input(&self) -> &Array2<f64> {
        self.item_hyper.as_ref().unwrap_or(&self.item)
    }
}

/// Per-layer and pooled representations produced by one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub user_layers: Vec<Array2<f64>>,
    pub item_layers_u: Vec<Array2<f64>>,
    /// Empty when the hypergraph view is disabled.
    pub item_layers_b: Vec<Array2<f64>>,
    pub final_user: Array2<f64>,
    pub final_item_u: Array2<f64>,
    /// Zero matrix when the hypergraph view is disabled.
    pub final_item_b: Array2<f64>,
    pub fused_item: Array2<f64>,
}

/// Base tables together with the forward pass on the original graphs.
#[derive(Debug, Clone)]
pub struct EmbeddingState {
    pub base: BaseTables,
    pub fwd: Forward,
}

/// One round of bipartite exchange: users gather from item rows and items
/// gather from user rows, both through the shared per-edge coefficients.
pub fn bipartite_step(
    g: &BipartiteGraph,
    user_in: &Array2<f64>,
    item_in: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let d = user_in.ncols();
    assert_eq!(item_in.ncols(), d);
    let mut user_out = Array2::zeros((g.num_users, d));
    let mut item_out = Array2::zeros((g.num_items, d));
    for u in 0..g.num_users {
        let mut row = user_out.row_mut(u);
        for (i, e) in g.user_neighbors(u) {
            let c = g.norm_coeff[e];
            row.scaled_add(c, &item_in.row(i));
        }
    }
    for i in 0..g.num_items {
        let mut row = item_out.row_mut(i);
        for (u, e) in g.item_neighbors(i) {
            let c = g.norm_coeff[e];
            row.scaled_add(c, &user_in.row(u));
        }
    }
    (user_out, item_out)
}

/// Per-layer user and item matrices for k = 0..=K; layer 0 is the base.
pub fn propagate_bipartite(
    g: &BipartiteGraph,
    base_user: &Array2<f64>,
    base_item: &Array2<f64>,
    k_layers: usize,
) -> Result<(Vec<Array2<f64>>, Vec<Array2<f64>>)> {
    if base_user.nrows() != g.num_users || base_item.nrows() != g.num_items {
        return Err(Error::Contract(format!(
            "bipartite propagation shape mismatch: graph ({}, {}) vs tables ({}, {})",
            g.num_users,
            g.num_items,
            base_user.nrows(),
            base_item.nrows()
        )));
    }
    assert!(k_layers >= 1);
    let mut users = Vec::with_capacity(k_layers + 1);
    let mut items = Vec::with_capacity(k_layers + 1);
    users.push(base_user.clone());
    items.push(base_item.clone());
    for k in 1..=k_layers {
        let (u, i) = bipartite_step(g, &users[k - 1], &items[k - 1]);
        users.push(u);
        items.push(i);
    }
    Ok((users, items))
}

/// One application of the normalized hypergraph operator
/// `D^{-1/2} H B^{-1} H^T D^{-1/2}`, computed as a gather to hyperedges
/// (mean over members, item rows pre-scaled by `D^{-1/2}`) followed by a
/// scatter back with the same item scaling.
pub fn hypergraph_step(hg: &BasketHypergraph, item_in: &Array2<f64>) -> Array2<f64> {
    let d = item_in.ncols();
    let inv_sqrt: Vec<f64> = hg.item_degree.iter().map(|&deg| 1.0 / clamped(deg).sqrt()).collect();

    let mut edge_accum = Array2::zeros((hg.num_hyperedges, d));
    for b in 0..hg.num_hyperedges {
        let mut row = edge_accum.row_mut(b);
        for i in hg.members(b) {
            row.scaled_add(inv_sqrt[i], &item_in.row(i));
        }
        let inv_b = 1.0 / clamped(hg.edge_degree[b]);
        row.mapv_inplace(|v| v * inv_b);
    }

    let mut item_out = Array2::zeros((item_in.nrows(), d));
    for i in 0..hg.num_items {
        let mut row = item_out.row_mut(i);
        for &b in hg.item_edges(i) {
            row.scaled_add(1.0, &edge_accum.row(b));
        }
        row.mapv_inplace(|v| v * inv_sqrt[i]);
    }
    item_out
}

/// Per-layer item matrices for k = 0..=K on the hypergraph view.
pub fn propagate_hypergraph(
    hg: &BasketHypergraph,
    item_base: &Array2<f64>,
    k_layers: usize,
) -> Result<Vec<Array2<f64>>> {
    if item_base.nrows() != hg.num_items {
        return Err(Error::Contract(format!(
            "hypergraph propagation shape mismatch: graph has {} items, table has {} rows",
            hg.num_items,
            item_base.nrows()
        )));
    }
    assert!(k_layers >= 1);
    let mut layers = Vec::with_capacity(k_layers + 1);
    layers.push(item_base.clone());
    for k in 1..=k_layers {
        let next = hypergraph_step(hg, &layers[k - 1]);
        layers.push(next);
    }
    Ok(layers)
}

/// Arithmetic mean of the K+1 layer matrices.
pub fn pool_layers(layers: &[Array2<f64>]) -> Array2<f64> {
    assert!(!layers.is_empty());
    let mut out = layers[0].clone();
    for layer in &layers[1..] {
        out += layer;
    }
    out.mapv_inplace(|v| v / layers.len() as f64);
    out
}

/// Mean of the basket-view item rows over an explicit member list (the train
/// basket during training, the partial basket at evaluation time).
pub fn basket_embedding(final_item_b: &Array2<f64>, members: &[usize]) -> Result<Array1<f64>> {
    if members.is_empty() {
        return Err(Error::Contract("basket embedding over an empty item list".into()));
    }
    let mut out = Array1::zeros(final_item_b.ncols());
    for &i in members {
        out += &final_item_b.row(i);
    }
    out.mapv_inplace(|v| v / members.len() as f64);
    Ok(out)
}

/// Gradient of the bipartite forward pass with respect to the base tables,
/// given gradients of every layer output (index k = gradient w.r.t. layer k).
///
/// Forward is `u_k = A i_{k-1}`, `i_k = A^T u_{k-1}` with A the normalized
/// user×item adjacency, so the reverse pass applies the same two kernels in
/// the opposite data direction.
pub fn adjoint_bipartite(
    g: &BipartiteGraph,
    user_layer_grads: &[Array2<f64>],
    item_layer_grads: &[Array2<f64>],
) -> (Array2<f64>, Array2<f64>) {
    assert_eq!(user_layer_grads.len(), item_layer_grads.len());
    let k_layers = user_layer_grads.len() - 1;
    let d = user_layer_grads[0].ncols();
    let mut gu = Array2::zeros((g.num_users, d));
    let mut gi = Array2::zeros((g.num_items, d));
    for k in (1..=k_layers).rev() {
        gu += &user_layer_grads[k];
        gi += &item_layer_grads[k];
        // u_k = A i_{k-1} and i_k = A^T u_{k-1}, so the reverse exchange is
        // exactly one forward step applied to the gradients.
        let (gu_prev, gi_prev) = bipartite_step(g, &gu, &gi);
        gu = gu_prev;
        gi = gi_prev;
    }
    gu += &user_layer_grads[0];
    gi += &item_layer_grads[0];
    (gu, gi)
}

/// Gradient of the pooled bipartite output w.r.t. the base tables: the pooled
/// matrices distribute `grad/(K+1)` onto every layer.
pub fn adjoint_bipartite_pooled(
    g: &BipartiteGraph,
    grad_final_user: &Array2<f64>,
    grad_final_item: &Array2<f64>,
    k_layers: usize,
) -> (Array2<f64>, Array2<f64>) {
    let scale = 1.0 / (k_layers as f64 + 1.0);
    let per_user = grad_final_user.mapv(|v| v * scale);
    let per_item = grad_final_item.mapv(|v| v * scale);
    let users: Vec<Array2<f64>> = (0..=k_layers).map(|_| per_user.clone()).collect();
    let items: Vec<Array2<f64>> = (0..=k_layers).map(|_| per_item.clone()).collect();
    adjoint_bipartite(g, &users, &items)
}

/// Adjoint of the hypergraph chain; the operator is symmetric, so the reverse
/// pass reuses the forward kernel.
pub fn adjoint_hypergraph(hg: &BasketHypergraph, layer_grads: &[Array2<f64>]) -> Array2<f64> {
    let k_layers = layer_grads.len() - 1;
    let mut g = Array2::zeros(layer_grads[0].raw_dim());
    for k in (1..=k_layers).rev() {
        g += &layer_grads[k];
        g = hypergraph_step(hg, &g);
    }
    g += &layer_grads[0];
    g
}

/// Gradient of the pooled hypergraph output w.r.t. the base table.
pub fn adjoint_hypergraph_pooled(
    hg: &BasketHypergraph,
    grad_final: &Array2<f64>,
    k_layers: usize,
) -> Array2<f64> {
    let scale = 1.0 / (k_layers as f64 + 1.0);
    let per_layer = grad_final.mapv(|v| v * scale);
    let grads: Vec<Array2<f64>> = (0..=k_layers).map(|_| per_layer.clone()).collect();
    adjoint_hypergraph(hg, &grads)
}

/// Full forward pass: propagate both views (hypergraph optional), pool each
/// layer stack, and fuse the two item representations by addition.
pub fn compute_forward(
    base: &BaseTables,
    bipartite: &BipartiteGraph,
    hypergraph: Option<&BasketHypergraph>,
    k_layers: usize,
) -> Result<Forward> {
    let (user_layers, item_layers_u) = propagate_bipartite(bipartite, &base.user, &base.item, k_layers)?;
    let final_user = pool_layers(&user_layers);
    let final_item_u = pool_layers(&item_layers_u);

    let (item_layers_b, final_item_b) = match hypergraph {
        Some(hg) => {
            let layers = propagate_hypergraph(hg, base.hyper_input(), k_layers)?;
            let pooled = pool_layers(&layers);
            (layers, pooled)
        }
        None => (Vec::new(), Array2::zeros(final_item_u.raw_dim())),
    };

    let fused_item = &final_item_u + &final_item_b;
    Ok(Forward {
        user_layers,
        item_layers_u,
        item_layers_b,
        final_user,
        final_item_u,
        final_item_b,
        fused_item,
    })
}
