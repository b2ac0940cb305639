//! Consistency-aware edge dropping: importance scores combining degrees from
//! both views, score-to-probability normalization, and view sampling; plus
//! the uniform random-perturbation ablation.

use rand::Rng;

use crate::graphs::{BasketHypergraph, BipartiteGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphKind {
    Bipartite,
    Hypergraph,
}

/// Per-edge importance of one graph. `scores` holds the natural-log values;
/// `degree_sums` holds the integer degree sums underneath them, which is what
/// the probability normalization consumes so that the outcome cannot depend
/// on the logarithm base.
#[derive(Debug, Clone)]
pub struct EdgeImportance {
    pub kind: GraphKind,
    pub scores: Vec<f64>,
    pub degree_sums: Vec<u64>,
}

#[inline]
fn clamp1(deg: usize) -> u64 {
    deg.max(1) as u64
}

/// Importance of a user-item interaction: log of the user's interaction
/// degree plus the item's degree on both views.
pub fn edge_importance_ui(g: &BipartiteGraph, hg: &BasketHypergraph, user: usize, item: usize) -> f64 {
    (ui_degree_sum(g, hg, user, item) as f64).ln()
}

fn ui_degree_sum(g: &BipartiteGraph, hg: &BasketHypergraph, user: usize, item: usize) -> u64 {
    clamp1(g.user_degree[user]) + clamp1(g.item_degree[item]) + clamp1(hg.item_degree[item])
}

/// Importance of a basket-item interaction: log of the hyperedge size plus
/// the item's degree on both views.
pub fn edge_importance_bi(g: &BipartiteGraph, hg: &BasketHypergraph, basket: usize, item: usize) -> f64 {
    (bi_degree_sum(g, hg, basket, item) as f64).ln()
}

fn bi_degree_sum(g: &BipartiteGraph, hg: &BasketHypergraph, basket: usize, item: usize) -> u64 {
    clamp1(hg.edge_degree[basket]) + clamp1(hg.item_degree[item]) + clamp1(g.item_degree[item])
}

/// Importance of every bipartite edge, aligned with `g.edges`. Degrees are
/// always taken from the original (unaugmented) training graphs.
pub fn bipartite_importance(g: &BipartiteGraph, hg: &BasketHypergraph) -> EdgeImportance {
    let degree_sums: Vec<u64> = g.edges.iter().map(|&(u, i)| ui_degree_sum(g, hg, u, i)).collect();
    let scores = degree_sums.iter().map(|&k| (k as f64).ln()).collect();
    EdgeImportance { kind: GraphKind::Bipartite, scores, degree_sums }
}

/// Importance of every hypergraph membership pair, aligned with `hg.pairs`.
pub fn hypergraph_importance(g: &BipartiteGraph, hg: &BasketHypergraph) -> EdgeImportance {
    let degree_sums: Vec<u64> = hg.pairs.iter().map(|&(b, i)| bi_degree_sum(g, hg, b, i)).collect();
    let scores = degree_sums.iter().map(|&k| (k as f64).ln()).collect();
    EdgeImportance { kind: GraphKind::Hypergraph, scores, degree_sums }
}

/// Per-edge drop probability `(s_max - s) / (s_max - s_min) * p`.
///
/// Computed from the degree sums as `p * ln(k_max/k) / ln(k_max/k_min)`, the
/// same affine normalization expressed through ratios, so any positive
/// rescaling of the scores (i.e. any log base) yields bit-identical output.
/// When all scores coincide the formula is 0/0; every edge then gets `p/2`.
pub fn drop_probabilities(importance: &EdgeImportance, p: f64) -> Vec<f64> {
    assert!((0.0..1.0).contains(&p), "overall drop rate must be in [0, 1)");
    assert!(!importance.degree_sums.is_empty(), "need at least one edge");
    let k_max = *importance.degree_sums.iter().max().unwrap();
    let k_min = *importance.degree_sums.iter().min().unwrap();
    if k_max == k_min {
        return vec![p / 2.0; importance.degree_sums.len()];
    }
    let denom = (k_max as f64 / k_min as f64).ln();
    importance
        .degree_sums
        .iter()
        .map(|&k| {
            let num = (k_max as f64 / k as f64).ln();
            (p * num / denom).clamp(0.0, p)
        })
        .collect()
}

/// The literal affine normalization on raw score values. Reference route for
/// [`drop_probabilities`]; the two agree to floating-point accuracy.
pub fn drop_probabilities_from_scores(scores: &[f64], p: f64) -> Vec<f64> {
    assert!((0.0..1.0).contains(&p));
    assert!(!scores.is_empty());
    let s_max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s_min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    if s_max == s_min {
        return vec![p / 2.0; scores.len()];
    }
    scores.iter().map(|&s| ((s_max - s) / (s_max - s_min) * p).clamp(0.0, p)).collect()
}

/// An edge-dropped copy of a source graph, with the keep decisions retained.
#[derive(Debug, Clone)]
pub struct AugmentedView<G> {
    pub keep: Vec<bool>,
    pub graph: G,
}

fn sample_keep(probs: &[f64], rng: &mut impl Rng) -> Vec<bool> {
    // one draw per edge, unconditionally, to keep stream consumption fixed
    probs.iter().map(|&p| rng.random_range(0.0..1.0) >= p).collect()
}

/// Keep each bipartite edge independently with probability `1 - p_e` and
/// rebuild the graph (degrees and normalization recomputed) from the
/// survivors. Nodes may end up isolated; that is fine.
pub fn sample_bipartite_view(g: &BipartiteGraph, probs: &[f64], rng: &mut impl Rng) -> AugmentedView<BipartiteGraph> {
    assert_eq!(probs.len(), g.num_edges(), "probabilities must align with the edge list");
    let keep = sample_keep(probs, rng);
    let edges: Vec<(usize, usize)> = g.edges.iter().zip(&keep).filter_map(|(&e, &k)| k.then_some(e)).collect();
    AugmentedView { keep, graph: BipartiteGraph::from_edges(g.num_users, g.num_items, edges) }
}

/// Hypergraph analogue of [`sample_bipartite_view`]; hyperedges may end up
/// empty.
pub fn sample_hypergraph_view(
    hg: &BasketHypergraph,
    probs: &[f64],
    rng: &mut impl Rng,
) -> AugmentedView<BasketHypergraph> {
    assert_eq!(probs.len(), hg.num_pairs(), "probabilities must align with the pair list");
    let keep = sample_keep(probs, rng);
    let pairs: Vec<(usize, usize)> = hg.pairs.iter().zip(&keep).filter_map(|(&e, &k)| k.then_some(e)).collect();
    AugmentedView { keep, graph: BasketHypergraph::from_pairs(hg.num_items, hg.num_hyperedges, pairs) }
}

/// Uniform edge dropping at rate `p`; importance scores are never consulted.
pub fn random_bipartite_view(g: &BipartiteGraph, p: f64, rng: &mut impl Rng) -> AugmentedView<BipartiteGraph> {
    assert!((0.0..1.0).contains(&p));
    let probs = vec![p; g.num_edges()];
    sample_bipartite_view(g, &probs, rng)
}

pub fn random_hypergraph_view(hg: &BasketHypergraph, p: f64, rng: &mut impl Rng) -> AugmentedView<BasketHypergraph> {
    assert!((0.0..1.0).contains(&p));
    let probs = vec![p; hg.num_pairs()];
    sample_hypergraph_view(hg, &probs, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn degree_fixture() -> (BipartiteGraph, BasketHypergraph) {
        // user 0 buys 3 items, item 0 is bought by 2 users and sits in 4 baskets
        let g = BipartiteGraph::from_edges(2, 3, vec![(0, 0), (0, 1), (0, 2), (1, 0)]);
        let hg = BasketHypergraph::from_pairs(3, 4, vec![(0, 0), (1, 0), (2, 0), (3, 0), (0, 1), (0, 2)]);
        (g, hg)
    }

    #[test]
    fn ui_importance_examples() {
        let (g, hg) = degree_fixture();
        // deg(u0)=3, deg(i0)=2, deg_hyper(i0)=4
        assert_eq!(edge_importance_ui(&g, &hg, 0, 0), 9f64.ln());

        let g1 = BipartiteGraph::from_edges(1, 1, vec![(0, 0)]);
        let hg1 = BasketHypergraph::from_pairs(1, 1, vec![(0, 0)]);
        assert_eq!(edge_importance_ui(&g1, &hg1, 0, 0), 3f64.ln());
    }

    #[test]
    fn bi_importance_examples() {
        // basket of 2 items; item 0 in exactly 1 basket with bipartite degree 1
        let g = BipartiteGraph::from_edges(1, 2, vec![(0, 0), (0, 1)]);
        let hg = BasketHypergraph::from_pairs(2, 1, vec![(0, 0), (0, 1)]);
        assert_eq!(edge_importance_bi(&g, &hg, 0, 0), 4f64.ln());

        let g1 = BipartiteGraph::from_edges(1, 1, vec![(0, 0)]);
        let hg1 = BasketHypergraph::from_pairs(1, 1, vec![(0, 0)]);
        assert_eq!(edge_importance_bi(&g1, &hg1, 0, 0), 3f64.ln());
    }

    #[test]
    fn bigger_baskets_score_higher() {
        let g = BipartiteGraph::from_edges(1, 4, vec![(0, 0), (0, 1), (0, 2), (0, 3)]);
        let small = BasketHypergraph::from_pairs(4, 2, vec![(0, 0), (0, 1), (1, 2)]);
        let big = BasketHypergraph::from_pairs(4, 2, vec![(0, 0), (0, 1), (0, 2), (0, 3), (1, 2)]);
        assert!(edge_importance_bi(&g, &big, 0, 0) > edge_importance_bi(&g, &small, 0, 0));
    }

    #[test]
    fn drop_probability_frozen_values() {
        // degree sums 9, 5, 3 carry scores ln 9, ln 5, ln 3
        let imp = EdgeImportance {
            kind: GraphKind::Bipartite,
            scores: vec![9f64.ln(), 5f64.ln(), 3f64.ln()],
            degree_sums: vec![9, 5, 3],
        };
        let probs = drop_probabilities(&imp, 0.5);
        let oracle = {
            let (s_max, s_min) = (9f64.ln(), 3f64.ln());
            vec![
                (s_max - 9f64.ln()) / (s_max - s_min) * 0.5,
                (s_max - 5f64.ln()) / (s_max - s_min) * 0.5,
                (s_max - 3f64.ln()) / (s_max - s_min) * 0.5,
            ]
        };
        assert!((probs[1] - 0.2675).abs() < 5e-5, "sanity on the printed value");
        for (p, o) in probs.iter().zip(&oracle) {
            assert!((p - o).abs() < 1e-12);
        }
        // endpoints are exact
        assert_eq!(probs[0], 0.0);
        assert_eq!(probs[2], 0.5);
    }

    #[test]
    fn equal_scores_fall_back_to_half_p() {
        let imp = EdgeImportance { kind: GraphKind::Hypergraph, scores: vec![3f64.ln(); 4], degree_sums: vec![3; 4] };
        assert_eq!(drop_probabilities(&imp, 0.6), vec![0.3; 4]);
        assert_eq!(drop_probabilities_from_scores(&[1.5, 1.5], 0.6), vec![0.3, 0.3]);
    }

    #[test]
    fn log_base_change_is_bit_identical() {
        let sums: Vec<u64> = vec![9, 5, 3, 17, 4, 4, 100];
        let with_ln = EdgeImportance {
            kind: GraphKind::Bipartite,
            scores: sums.iter().map(|&k| (k as f64).ln()).collect(),
            degree_sums: sums.clone(),
        };
        let with_log10 = EdgeImportance {
            kind: GraphKind::Bipartite,
            scores: sums.iter().map(|&k| (k as f64).log10()).collect(),
            degree_sums: sums.clone(),
        };
        let a = drop_probabilities(&with_ln, 0.37);
        let b = drop_probabilities(&with_log10, 0.37);
        assert_eq!(a, b);
        // and both agree with the literal affine route on either score base
        for scores in [&with_ln.scores, &with_log10.scores] {
            let lit = drop_probabilities_from_scores(scores, 0.37);
            for (x, y) in a.iter().zip(&lit) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_probabilities_reproduce_the_source() {
        let mut rng = crate::rng::stream(40, crate::rng::Stream::Augmentation);
        let (g, hg) = degree_fixture();
        let view = sample_bipartite_view(&g, &vec![0.0; g.num_edges()], &mut rng);
        assert_eq!(view.graph, g);
        assert!(view.keep.iter().all(|&k| k));
        let hview = sample_hypergraph_view(&hg, &vec![0.0; hg.num_pairs()], &mut rng);
        assert_eq!(hview.graph, hg);
    }

    #[test]
    fn single_edge_drop_frequency_within_binomial_bounds() {
        let g = BipartiteGraph::from_edges(1, 1, vec![(0, 0)]);
        let mut rng = crate::rng::stream(41, crate::rng::Stream::Augmentation);
        let p_e = 0.25;
        let n = 10_000;
        let mut dropped = 0;
        for _ in 0..n {
            let view = sample_bipartite_view(&g, &[p_e], &mut rng);
            if !view.keep[0] {
                dropped += 1;
            }
        }
        let sigma = (n as f64 * p_e * (1.0 - p_e)).sqrt();
        assert!((dropped as f64 - n as f64 * p_e).abs() <= 3.0 * sigma, "dropped {dropped} of {n}");
    }

    #[test]
    fn random_view_ignores_structure() {
        let (g, _) = degree_fixture();
        let mut rng = crate::rng::stream(42, crate::rng::Stream::Augmentation);
        let id = random_bipartite_view(&g, 0.0, &mut rng);
        assert_eq!(id.graph, g);

        let n = 4000;
        let mut kept = 0usize;
        for _ in 0..n {
            let v = random_bipartite_view(&g, 0.5, &mut rng);
            kept += v.keep.iter().filter(|&&k| k).count();
        }
        let total = (n * g.num_edges()) as f64;
        let sigma = (total * 0.25).sqrt();
        assert!((kept as f64 - total * 0.5).abs() < 3.0 * sigma);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn probabilities_stay_in_range(sums in prop::collection::vec(1u64..500, 1..40), p in 0.0f64..0.95) {
            let imp = EdgeImportance {
                kind: GraphKind::Bipartite,
                scores: sums.iter().map(|&k| (k as f64).ln()).collect(),
                degree_sums: sums.clone(),
            };
            let probs = drop_probabilities(&imp, p);
            for pe in &probs {
                prop_assert!(*pe >= 0.0 && *pe <= p);
            }
            // the globally most important edge is never dropped
            let arg_max = sums.iter().enumerate().max_by_key(|(_, &k)| k).unwrap().0;
            if sums.iter().min() != sums.iter().max() {
                prop_assert_eq!(probs[arg_max], 0.0);
            }
        }

        #[test]
        fn sampled_views_are_valid_subgraphs(seed in 0u64..200, p in 0.0f64..0.9) {
            let mut rng = crate::rng::stream(seed, crate::rng::Stream::Augmentation);
            let g = crate::testutil::random_bipartite(&mut rng, 8);
            // both views must share the item universe
            let mut pairs = Vec::new();
            for b in 0..5 {
                for i in 0..g.num_items {
                    if rng.random_range(0.0..1.0) < 0.4 {
                        pairs.push((b, i));
                    }
                }
            }
            if pairs.is_empty() {
                pairs.push((0, 0));
            }
            let hg = BasketHypergraph::from_pairs(g.num_items, 5, pairs);
            let probs = drop_probabilities(&bipartite_importance(&g, &hg), p);
            let view = sample_bipartite_view(&g, &probs, &mut rng);
            view.graph.check_invariants().unwrap();
            for e in &view.graph.edges {
                prop_assert!(g.edges.contains(e));
            }
            let hprobs = drop_probabilities(&hypergraph_importance(&g, &hg), p);
            let hview = sample_hypergraph_view(&hg, &hprobs, &mut rng);
            hview.graph.check_invariants().unwrap();
            for pair in &hview.graph.pairs {
                prop_assert!(hg.pairs.contains(pair));
            }
        }
    }
}
