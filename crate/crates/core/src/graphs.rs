//! Sparse behavioral views: the user-item bipartite graph and the basket
//! hypergraph, with degrees and normalization precomputed.

use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};

/// Symmetric-normalized user-item interaction graph in CSR form.
///
/// `edges` is sorted by (user, item) and deduplicated, so a user's adjacency
/// is the contiguous slice `edges[user_indptr[u]..user_indptr[u + 1]]` and
/// `norm_coeff` aligns with it. The item-side index stores, per adjacency
/// entry, the position of the corresponding edge.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    pub num_users: usize,
    pub num_items: usize,
    pub edges: Vec<(usize, usize)>,
    pub user_indptr: Vec<usize>,
    pub item_indptr: Vec<usize>,
    pub item_indices: Vec<usize>,
    pub item_edge: Vec<usize>,
    pub user_degree: Vec<usize>,
    pub item_degree: Vec<usize>,
    pub norm_coeff: Vec<f64>,
}

/// Divisor for degree normalization; isolated nodes receive no messages, so
/// clamping to 1 only avoids 0/0 without changing any propagated value.
#[inline]
pub fn clamped(degree: usize) -> f64 {
    degree.max(1) as f64
}

impl BipartiteGraph {
    /// Build from an explicit edge list (need not be sorted or unique).
    pub fn from_edges(num_users: usize, num_items: usize, mut edges: Vec<(usize, usize)>) -> Self {
        edges.sort_unstable();
        edges.dedup();

        let mut user_degree = vec![0usize; num_users];
        let mut item_degree = vec![0usize; num_items];
        for &(u, i) in &edges {
            debug_assert!(u < num_users && i < num_items);
            user_degree[u] += 1;
            item_degree[i] += 1;
        }

        let mut user_indptr = vec![0usize; num_users + 1];
        for &(u, _) in &edges {
            user_indptr[u + 1] += 1;
        }
        for u in 0..num_users {
            user_indptr[u + 1] += user_indptr[u];
        }

        let mut item_indptr = vec![0usize; num_items + 1];
        for &(_, i) in &edges {
            item_indptr[i + 1] += 1;
        }
        for i in 0..num_items {
            item_indptr[i + 1] += item_indptr[i];
        }
        let mut cursor = item_indptr.clone();
        let mut item_indices = vec![0usize; edges.len()];
        let mut item_edge = vec![0usize; edges.len()];
        for (e, &(u, i)) in edges.iter().enumerate() {
            item_indices[cursor[i]] = u;
            item_edge[cursor[i]] = e;
            cursor[i] += 1;
        }

        let norm_coeff = edges
            .iter()
            .map(|&(u, i)| 1.0 / (clamped(user_degree[u]) * clamped(item_degree[i])).sqrt())
            .collect();

        BipartiteGraph {
            num_users,
            num_items,
            edges,
            user_indptr,
            item_indptr,
            item_indices,
            item_edge,
            user_degree,
            item_degree,
            norm_coeff,
        }
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Items adjacent to `u`, paired with the edge index.
    pub fn user_neighbors(&self, u: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.user_indptr[u]..self.user_indptr[u + 1]).map(move |e| (self.edges[e].1, e))
    }

    /// Users adjacent to `i`, paired with the edge index.
    pub fn item_neighbors(&self, i: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.item_indptr[i]..self.item_indptr[i + 1]).map(move |k| (self.item_indices[k], self.item_edge[k]))
    }

    pub fn check_invariants(&self) -> Result<()> {
        for w in self.edges.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Contract("duplicate or unsorted edge".into()));
            }
        }
        for (e, &(u, i)) in self.edges.iter().enumerate() {
            let expect = 1.0 / (clamped(self.user_degree[u]) * clamped(self.item_degree[i])).sqrt();
            if self.norm_coeff[e] != expect || !self.norm_coeff[e].is_finite() || self.norm_coeff[e] <= 0.0 {
                return Err(Error::Contract(format!("bad norm_coeff for edge ({u}, {i})")));
            }
        }
        // transpose consistency
        let mut seen = 0usize;
        for i in 0..self.num_items {
            for (u, e) in self.item_neighbors(i) {
                if self.edges[e] != (u, i) {
                    return Err(Error::Contract("item adjacency is not the transpose of user adjacency".into()));
                }
                seen += 1;
            }
        }
        if seen != self.edges.len() {
            return Err(Error::Contract("item adjacency misses edges".into()));
        }
        Ok(())
    }
}

/// Build the bipartite view of a training dataset: edge (u, i) exists iff any
/// of u's baskets contains i (union semantics, deduplicated).
pub fn build_user_item_graph(ds: &InteractionDataset) -> BipartiteGraph {
    assert!(ds.num_baskets > 0, "dataset must be nonempty");
    let mut edges = Vec::new();
    for (b, items) in ds.basket_items.iter().enumerate() {
        let u = ds.basket_owner[b];
        for &i in items {
            edges.push((u, i));
        }
    }
    BipartiteGraph::from_edges(ds.num_users, ds.num_items, edges)
}

/// Basket hypergraph: vertices are items, one hyperedge per basket.
///
/// `pairs` is the (basket, item) membership list sorted by (basket, item);
/// a basket's members are the contiguous slice under `basket_indptr`.
/// Augmented copies may legitimately contain empty hyperedges or isolated
/// items; their degree entries are 0 and they exchange no messages.
#[derive(Debug, Clone, PartialEq)]
pub struct BasketHypergraph {
    pub num_items: usize,
    pub num_hyperedges: usize,
    pub pairs: Vec<(usize, usize)>,
    pub basket_indptr: Vec<usize>,
    pub item_indptr: Vec<usize>,
    pub item_indices: Vec<usize>,
    pub item_degree: Vec<usize>,
    pub edge_degree: Vec<usize>,
}

impl BasketHypergraph {
    pub fn from_pairs(num_items: usize, num_hyperedges: usize, mut pairs: Vec<(usize, usize)>) -> Self {
        pairs.sort_unstable();
        pairs.dedup();

        let mut edge_degree = vec![0usize; num_hyperedges];
        let mut item_degree = vec![0usize; num_items];
        for &(b, i) in &pairs {
            debug_assert!(b < num_hyperedges && i < num_items);
            edge_degree[b] += 1;
            item_degree[i] += 1;
        }

        let mut basket_indptr = vec![0usize; num_hyperedges + 1];
        for &(b, _) in &pairs {
            basket_indptr[b + 1] += 1;
        }
        for b in 0..num_hyperedges {
            basket_indptr[b + 1] += basket_indptr[b];
        }

        let mut item_indptr = vec![0usize; num_items + 1];
        for &(_, i) in &pairs {
            item_indptr[i + 1] += 1;
        }
        for i in 0..num_items {
            item_indptr[i + 1] += item_indptr[i];
        }
        let mut cursor = item_indptr.clone();
        let mut item_indices = vec![0usize; pairs.len()];
        for &(b, i) in pairs.iter() {
            item_indices[cursor[i]] = b;
            cursor[i] += 1;
        }

        BasketHypergraph {
            num_items,
            num_hyperedges,
            pairs,
            basket_indptr,
            item_indptr,
            item_indices,
            item_degree,
            edge_degree,
        }
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// Items of hyperedge `b`.
    pub fn members(&self, b: usize) -> impl Iterator<Item = usize> + '_ {
        self.pairs[self.basket_indptr[b]..self.basket_indptr[b + 1]].iter().map(|&(_, i)| i)
    }

    /// Hyperedges containing item `i`.
    pub fn item_edges(&self, i: usize) -> &[usize] {
        &self.item_indices[self.item_indptr[i]..self.item_indptr[i + 1]]
    }

    /// Entry H(i, b) of the incidence matrix, read from the by-item layout.
    pub fn incidence(&self, item: usize, basket: usize) -> u8 {
        u8::from(self.item_edges(item).binary_search(&basket).is_ok())
    }

    pub fn check_invariants(&self) -> Result<()> {
        let by_item: usize = self.item_degree.iter().sum();
        let by_edge: usize = self.edge_degree.iter().sum();
        if by_item != self.pairs.len() || by_edge != self.pairs.len() {
            return Err(Error::Contract("degree tables disagree with pair count".into()));
        }
        // the two layouts must agree entrywise
        for b in 0..self.num_hyperedges {
            for i in self.members(b) {
                if self.incidence(i, b) != 1 {
                    return Err(Error::Contract(format!("layout mismatch at H({i}, {b})")));
                }
            }
        }
        Ok(())
    }
}

/// One hyperedge per train basket, containing exactly its train items.
pub fn build_basket_hypergraph(ds: &InteractionDataset) -> BasketHypergraph {
    assert!(ds.num_baskets > 0, "dataset must be nonempty");
    let mut pairs = Vec::with_capacity(ds.num_pairs());
    for (b, items) in ds.basket_items.iter().enumerate() {
        for &i in items {
            pairs.push((b, i));
        }
    }
    BasketHypergraph::from_pairs(ds.num_items, ds.num_baskets, pairs)
}
