//! Independent oracles and synthetic instances for the acceptance suite.
//!
//! Everything here recomputes its answers from first principles (edge lists,
//! set definitions) rather than reusing the library's precomputed tables, so
//! agreement is meaningful.

use basketrec::dataset::{InteractionDataset, SplitDataset};
use basketrec::graphs::{BasketHypergraph, BipartiteGraph};
use ndarray::Array2;
use rand::Rng;

/// Dense normalized user-item adjacency, with degrees recounted from the raw
/// edge list.
pub fn dense_bipartite_adjacency(g: &BipartiteGraph) -> Array2<f64> {
    let mut user_deg = vec![0usize; g.num_users];
    let mut item_deg = vec![0usize; g.num_items];
    for &(u, i) in &g.edges {
        user_deg[u] += 1;
        item_deg[i] += 1;
    }
    let mut a = Array2::zeros((g.num_users, g.num_items));
    for &(u, i) in &g.edges {
        a[[u, i]] = 1.0 / ((user_deg[u].max(1) * item_deg[i].max(1)) as f64).sqrt();
    }
    a
}

/// Dense item-item hypergraph operator `D^{-1/2} H B^{-1} H^T D^{-1/2}`,
/// built from the raw incidence pairs.
pub fn dense_hypergraph_operator(hg: &BasketHypergraph) -> Array2<f64> {
    let ni = hg.num_items;
    let nb = hg.num_hyperedges;
    let mut h = Array2::<f64>::zeros((ni, nb));
    let mut item_deg = vec![0usize; ni];
    let mut edge_deg = vec![0usize; nb];
    for &(b, i) in &hg.pairs {
        h[[i, b]] = 1.0;
        item_deg[i] += 1;
        edge_deg[b] += 1;
    }
    let mut m = Array2::zeros((ni, ni));
    for i in 0..ni {
        for j in 0..ni {
            let mut acc = 0.0;
            for b in 0..nb {
                acc += h[[i, b]] * h[[j, b]] / edge_deg[b].max(1) as f64;
            }
            m[[i, j]] = acc / ((item_deg[i].max(1) as f64).sqrt() * (item_deg[j].max(1) as f64).sqrt());
        }
    }
    m
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn rand_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

pub fn random_bipartite(rng: &mut impl Rng, max_side: usize) -> BipartiteGraph {
    let nu = rng.random_range(2..=max_side);
    let ni = rng.random_range(2..=max_side);
    let mut edges = Vec::new();
    for u in 0..nu {
        for i in 0..ni {
            if rng.random_range(0.0..1.0) < 0.35 {
                edges.push((u, i));
            }
        }
    }
    if edges.is_empty() {
        edges.push((0, 0));
    }
    BipartiteGraph::from_edges(nu, ni, edges)
}

pub fn random_hypergraph(rng: &mut impl Rng, max_items: usize, max_baskets: usize) -> BasketHypergraph {
    let ni = rng.random_range(2..=max_items);
    let nb = rng.random_range(1..=max_baskets);
    let mut pairs = Vec::new();
    for b in 0..nb {
        for i in 0..ni {
            if rng.random_range(0.0..1.0) < 0.3 {
                pairs.push((b, i));
            }
        }
    }
    if pairs.is_empty() {
        pairs.push((0, 0));
    }
    BasketHypergraph::from_pairs(ni, nb, pairs)
}

/// Definitional metric implementations over explicit sets and loops.
pub mod brute {
    pub fn hits(ranked: &[usize], gt: &[usize], k: usize) -> usize {
        let mut count = 0;
        for (pos, item) in ranked.iter().enumerate() {
            if pos >= k {
                break;
            }
            if gt.iter().any(|g| g == item) {
                count += 1;
            }
        }
        count
    }

    pub fn recall(ranked: &[usize], gt: &[usize], k: usize) -> f64 {
        hits(ranked, gt, k) as f64 / gt.len() as f64
    }

    pub fn precision(ranked: &[usize], gt: &[usize], k: usize) -> f64 {
        hits(ranked, gt, k) as f64 / k as f64
    }

    pub fn hit_ratio(ranked: &[usize], gt: &[usize], k: usize) -> f64 {
        if hits(ranked, gt, k) > 0 {
            1.0
        } else {
            0.0
        }
    }

    pub fn ndcg(ranked: &[usize], gt: &[usize], k: usize) -> f64 {
        let mut dcg = 0.0;
        for (pos, item) in ranked.iter().enumerate() {
            if pos >= k {
                break;
            }
            if gt.iter().any(|g| g == item) {
                let rank = (pos + 1) as f64; // 1-based
                dcg += 1.0 / (rank + 1.0).log2();
            }
        }
        let mut idcg = 0.0;
        let ideal = gt.len().min(k);
        for pos in 0..ideal {
            idcg += 1.0 / ((pos + 2) as f64).log2();
        }
        dcg / idcg
    }
}

/// Planted block structure: `blocks` blocks of 5 users, 10 items and 15
/// baskets each. Every block's items form two disjoint 5-item groups, and
/// every basket is exactly one of those groups, so baskets are perfectly
/// reconstructable from co-occurrence.
pub fn planted_block_dataset(blocks: usize) -> InteractionDataset {
    let users_per = 5;
    let items_per = 10;
    let baskets_per = 15;
    let mut ds = InteractionDataset {
        num_users: blocks * users_per,
        num_items: blocks * items_per,
        num_baskets: blocks * baskets_per,
        ..Default::default()
    };
    ds.user_baskets = vec![Vec::new(); ds.num_users];
    for block in 0..blocks {
        for slot in 0..baskets_per {
            let owner = block * users_per + slot % users_per;
            let group = slot % 2; // alternate between the block's two groups
            let first_item = block * items_per + group * 5;
            let items: Vec<usize> = (first_item..first_item + 5).collect();
            let b = ds.basket_owner.len();
            ds.basket_owner.push(owner);
            ds.user_baskets[owner].push(b);
            ds.basket_items.push(items);
        }
    }
    ds.ids.users = (0..ds.num_users).map(|u| format!("u{u}")).collect();
    ds.ids.items = (0..ds.num_items).map(|i| format!("i{i}")).collect();
    ds.ids.baskets = (0..ds.num_baskets)
        .map(|b| (format!("u{}", ds.basket_owner[b]), format!("b{b}")))
        .collect();
    ds
}

/// The planted dataset wrapped as an unsplit training set (no held-out
/// items); used when evaluating on the training positives themselves.
pub fn planted_block_split(blocks: usize) -> SplitDataset {
    let ds = planted_block_dataset(blocks);
    SplitDataset { heldout: vec![Vec::new(); ds.num_baskets], train: ds }
}
