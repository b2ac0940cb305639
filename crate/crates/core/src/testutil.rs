//! Helpers shared by the unit tests: tiny datasets and random instances.

use ndarray::Array2;
use rand::Rng;

use crate::dataset::InteractionDataset;
use crate::graphs::{BasketHypergraph, BipartiteGraph};

pub fn tiny_dataset(baskets: &[(usize, &[usize])], num_users: usize, num_items: usize) -> InteractionDataset {
    let mut ds = InteractionDataset {
        num_users,
        num_items,
        num_baskets: baskets.len(),
        ..Default::default()
    };
    ds.user_baskets = vec![Vec::new(); num_users];
    for (b, &(owner, items)) in baskets.iter().enumerate() {
        ds.basket_owner.push(owner);
        ds.user_baskets[owner].push(b);
        ds.basket_items.push(items.to_vec());
    }
    ds.ids.users = (0..num_users).map(|u| format!("u{u}")).collect();
    ds.ids.items = (0..num_items).map(|i| format!("i{i}")).collect();
    ds.ids.baskets = (0..baskets.len()).map(|b| (format!("u{}", baskets[b].0), format!("b{b}"))).collect();
    ds
}

pub fn rand_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

pub fn random_bipartite(rng: &mut impl Rng, max_side: usize) -> BipartiteGraph {
    let nu = rng.random_range(1..=max_side);
    let ni = rng.random_range(1..=max_side);
    let mut edges = Vec::new();
    for u in 0..nu {
        for i in 0..ni {
            if rng.random_range(0.0..1.0) < 0.4 {
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
    let ni = rng.random_range(1..=max_items);
    let nb = rng.random_range(1..=max_baskets);
    let mut pairs = Vec::new();
    for b in 0..nb {
        for i in 0..ni {
            if rng.random_range(0.0..1.0) < 0.35 {
                pairs.push((b, i));
            }
        }
    }
    if pairs.is_empty() {
        pairs.push((0, 0));
    }
    BasketHypergraph::from_pairs(ni, nb, pairs)
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
