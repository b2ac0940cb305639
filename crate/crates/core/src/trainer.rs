//! Mini-batch multi-task training: triple sampling, forward passes on the
//! original and augmented graphs, gradient accumulation through the linear
//! propagators' adjoints, and parameter updates.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::augmentation::{
    bipartite_importance, drop_probabilities, hypergraph_importance, sample_bipartite_view, sample_hypergraph_view,
};
use crate::config::{Optimizer, TrainConfig};
use crate::dataset::SplitDataset;
use crate::error::{Error, Result};
use crate::graphs::{build_basket_hypergraph, build_user_item_graph, BasketHypergraph, BipartiteGraph};
use crate::objectives::{
    bpr_loss, cross_behavior_loss, gather, scatter_add, total_loss, within_behavior_loss, BprInputs,
    BprTriple, ContrastiveBatch, WithinBehaviorTerms,
};
use crate::propagation::{
    adjoint_bipartite_pooled, adjoint_hypergraph_pooled, basket_embedding, compute_forward, BaseTables, Forward,
};
use crate::rng::{stream, stream_at, Stream};

/// The original (unaugmented) training graphs.
#[derive(Debug, Clone)]
pub struct TrainGraphs {
    pub bipartite: BipartiteGraph,
    pub hypergraph: Option<BasketHypergraph>,
}

impl TrainGraphs {
    pub fn build(split: &SplitDataset, cfg: &TrainConfig) -> Self {
        TrainGraphs {
            bipartite: build_user_item_graph(&split.train),
            hypergraph: cfg.use_hypergraph.then(|| build_basket_hypergraph(&split.train)),
        }
    }
}

/// Per-epoch augmented copies of the graphs the active contrastive terms use.
#[derive(Debug, Clone)]
pub struct AugGraphs {
    pub bipartite: BipartiteGraph,
    pub hypergraph: Option<BasketHypergraph>,
}

/// Loss components of one batch or one epoch (unweighted contrastive values;
/// `total` applies the multi-task weights).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub main: f64,
    pub cross: f64,
    pub within: f64,
    pub total: f64,
}

/// Gradients with respect to the base tables.
#[derive(Debug, Clone)]
pub struct BaseGrads {
    pub user: Array2<f64>,
    pub item: Array2<f64>,
    pub item_hyper: Option<Array2<f64>>,
}

impl BaseGrads {
    fn zeros_like(base: &BaseTables) -> Self {
        BaseGrads {
            user: Array2::zeros(base.user.raw_dim()),
            item: Array2::zeros(base.item.raw_dim()),
            item_hyper: base.item_hyper.as_ref().map(|t| Array2::zeros(t.raw_dim())),
        }
    }
}

/// Xavier-uniform initialization of the base tables: entries are uniform in
/// `(-sqrt(6/(fan_in+fan_out)), +...)` with `fan_in = fan_out = d`.
pub fn init_params(cfg: &TrainConfig, num_users: usize, num_items: usize, rng: &mut ChaCha8Rng) -> BaseTables {
    let d = cfg.embedding_dim;
    let bound = (6.0 / (d + d) as f64).sqrt();
    let mut draw = |rows: usize| Array2::from_shape_fn((rows, d), |_| rng.random_range(-bound..bound));
    let user = draw(num_users);
    let item = draw(num_items);
    let item_hyper = (!cfg.shared_item_base).then(|| draw(num_items));
    BaseTables { user, item, item_hyper }
}

/// Precomputed lookup for triple sampling.
pub struct TripleSampler {
    /// Sorted train item ids per user (union over the user's baskets).
    user_items: Vec<Vec<usize>>,
    num_items: usize,
}

const NEGATIVE_RETRIES: usize = 100;

impl TripleSampler {
    pub fn new(split: &SplitDataset) -> Self {
        let ds = &split.train;
        let mut user_items: Vec<Vec<usize>> = vec![Vec::new(); ds.num_users];
        for (b, items) in ds.basket_items.iter().enumerate() {
            user_items[ds.basket_owner[b]].extend_from_slice(items);
        }
        for items in &mut user_items {
            items.sort_unstable();
            items.dedup();
        }
        TripleSampler { user_items, num_items: ds.num_items }
    }

    /// One uniform basket, one uniform positive from its train items, and a
    /// rejection-sampled negative the owner never purchased.
    pub fn sample(&self, split: &SplitDataset, batch_size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<BprTriple>> {
        let ds = &split.train;
        assert!(ds.num_baskets > 0, "train data must be nonempty");
        let mut triples = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let basket = rng.random_range(0..ds.num_baskets);
            let user = ds.basket_owner[basket];
            let items = &ds.basket_items[basket];
            let pos = items[rng.random_range(0..items.len())];
            let owned = &self.user_items[user];
            let mut neg = None;
            for _ in 0..NEGATIVE_RETRIES {
                let candidate = rng.random_range(0..self.num_items);
                if owned.binary_search(&candidate).is_err() {
                    neg = Some(candidate);
                    break;
                }
            }
            let neg = neg.ok_or_else(|| {
                Error::Sampling(format!(
                    "no negative item found for user {user} after {NEGATIVE_RETRIES} draws (user owns {} of {} items)",
                    owned.len(),
                    self.num_items
                ))
            })?;
            triples.push(BprTriple { user, basket, pos, neg });
        }
        Ok(triples)
    }
}

/// Convenience wrapper matching the one-shot operation shape.
pub fn sample_triples(split: &SplitDataset, batch_size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<BprTriple>> {
    TripleSampler::new(split).sample(split, batch_size, rng)
}

/// Unique users, items (positives and negatives) and baskets of a batch, in
/// first-appearance order. These entity lists feed the contrastive terms.
#[derive(Debug, Clone)]
pub struct BatchEntities {
    pub triples: Vec<BprTriple>,
    pub users: Vec<usize>,
    pub items: Vec<usize>,
    pub baskets: Vec<usize>,
}

impl BatchEntities {
    pub fn from_triples(triples: Vec<BprTriple>) -> Self {
        let mut users = Vec::new();
        let mut items = Vec::new();
        let mut baskets = Vec::new();
        let mut seen_u = std::collections::HashSet::new();
        let mut seen_i = std::collections::HashSet::new();
        let mut seen_b = std::collections::HashSet::new();
        for t in &triples {
            if seen_u.insert(t.user) {
                users.push(t.user);
            }
            for i in [t.pos, t.neg] {
                if seen_i.insert(i) {
                    items.push(i);
                }
            }
            if seen_b.insert(t.basket) {
                baskets.push(t.basket);
            }
        }
        BatchEntities { triples, users, items, baskets }
    }
}

fn usable_batch(len: usize, exclude_positive: bool) -> bool {
    if exclude_positive {
        len >= 2
    } else {
        len >= 1
    }
}

/// Loss and exact base-table gradients of the multi-task objective on one
/// batch, with the augmented views held fixed. Pure in the base tables, which
/// is what the finite-difference checks rely on.
pub fn batch_loss_and_grads(
    base: &BaseTables,
    graphs: &TrainGraphs,
    aug: Option<&AugGraphs>,
    split: &SplitDataset,
    batch: &BatchEntities,
    cfg: &TrainConfig,
) -> Result<(LossParts, BaseGrads)> {
    let k = cfg.num_layers;
    let d = cfg.embedding_dim;
    let fwd = compute_forward(base, &graphs.bipartite, graphs.hypergraph.as_ref(), k)?;
    let aug_fwd = match aug {
        Some(a) if cfg.augmentation_active() => {
            Some(compute_forward(base, &a.bipartite, a.hypergraph.as_ref(), k)?)
        }
        _ => None,
    };

    let mut grads = BaseGrads::zeros_like(base);

    // gradient accumulators on the pooled outputs of each forward pass
    let mut g_user = Array2::zeros((base.user.nrows(), d));
    let mut g_item_u = Array2::zeros((base.item.nrows(), d));
    let mut g_item_b = Array2::zeros((base.item.nrows(), d));
    let mut ga_user = Array2::zeros((base.user.nrows(), d));
    let mut ga_item_u = Array2::zeros((base.item.nrows(), d));
    let mut ga_item_b = Array2::zeros((base.item.nrows(), d));

    // supervised ranking term
    let inputs = BprInputs {
        final_user: &fwd.final_user,
        fused_item: &fwd.fused_item,
        final_item_b: &fwd.final_item_b,
        basket_items: &split.train.basket_items,
        r: cfg.score_balance,
        additive: cfg.additive_score,
    };
    let bpr = bpr_loss(&inputs, &batch.triples, cfg.l2_weight, base);
    g_user += &bpr.grad_final_user;
    // the fused embedding is the sum of both pooled item views
    g_item_u += &bpr.grad_fused_item;
    if cfg.use_hypergraph {
        g_item_b += &bpr.grad_fused_item;
        g_item_b += &bpr.grad_final_item_b;
    }
    grads.user += &bpr.reg_grad_user;
    grads.item += &bpr.reg_grad_item;
    if let (Some(gh), Some(rh)) = (&mut grads.item_hyper, &bpr.reg_grad_item_hyper) {
        *gh += rh;
    }

    // cross-behavior alignment on the augmented views
    let mut cross = 0.0;
    if cfg.cross_active() && usable_batch(batch.items.len(), cfg.exclude_positive_in_denominator) {
        let af = aug_fwd.as_ref().expect("augmented forward exists when CL is active");
        let (res, ids) = cross_behavior_loss(
            &af.final_item_u,
            &af.final_item_b,
            &batch.items,
            cfg.temperature,
            cfg.exclude_positive_in_denominator,
        )?;
        cross = res.loss;
        scatter_add(&mut ga_item_u, &ids, &res.grad_anchors.mapv(|v| v * cfg.alpha_cross));
        scatter_add(&mut ga_item_b, &ids, &res.grad_positives.mapv(|v| v * cfg.alpha_cross));
    }

    // within-behavior alignment between original and augmented views
    let mut within = 0.0;
    if cfg.within_active() {
        let af = aug_fwd.as_ref().expect("augmented forward exists when CL is active");
        let excl = cfg.exclude_positive_in_denominator;
        let tau = cfg.temperature;

        let mut terms = WithinBehaviorTerms::default();
        if usable_batch(batch.users.len(), excl) {
            terms.user = Some(ContrastiveBatch {
                anchors: gather(&fwd.final_user, &batch.users),
                positives: gather(&af.final_user, &batch.users),
                temperature: tau,
                exclude_positive: excl,
            });
        }
        if usable_batch(batch.items.len(), excl) {
            terms.item_user_view = Some(ContrastiveBatch {
                anchors: gather(&fwd.final_item_u, &batch.items),
                positives: gather(&af.final_item_u, &batch.items),
                temperature: tau,
                exclude_positive: excl,
            });
            if cfg.use_hypergraph {
                terms.item_basket_view = Some(ContrastiveBatch {
                    anchors: gather(&fwd.final_item_b, &batch.items),
                    positives: gather(&af.final_item_b, &batch.items),
                    temperature: tau,
                    exclude_positive: excl,
                });
            }
        }
        // baskets read their embedding from each view's own membership; a
        // basket that lost every member in the augmented view is skipped
        let mut cl_baskets = Vec::new();
        if let (true, Some(ahg)) = (cfg.use_hypergraph, aug.and_then(|a| a.hypergraph.as_ref())) {
            cl_baskets = batch.baskets.iter().copied().filter(|&b| ahg.edge_degree[b] >= 1).collect();
            if usable_batch(cl_baskets.len(), excl) {
                let hg = graphs.hypergraph.as_ref().expect("hypergraph view is enabled");
                let mut anchors = Array2::zeros((cl_baskets.len(), d));
                let mut positives = Array2::zeros((cl_baskets.len(), d));
                for (row, &b) in cl_baskets.iter().enumerate() {
                    let orig_members: Vec<usize> = hg.members(b).collect();
                    let aug_members: Vec<usize> = ahg.members(b).collect();
                    anchors.row_mut(row).assign(&basket_embedding(&fwd.final_item_b, &orig_members)?);
                    positives.row_mut(row).assign(&basket_embedding(&af.final_item_b, &aug_members)?);
                }
                terms.basket = Some(ContrastiveBatch {
                    anchors,
                    positives,
                    temperature: tau,
                    exclude_positive: excl,
                });
            }
        }

        let res = within_behavior_loss(&terms)?;
        within = res.loss;
        let a2 = cfg.alpha_within;
        if let Some(r) = &res.user {
            scatter_add(&mut g_user, &batch.users, &r.grad_anchors.mapv(|v| v * a2));
            scatter_add(&mut ga_user, &batch.users, &r.grad_positives.mapv(|v| v * a2));
        }
        if let Some(r) = &res.item_user_view {
            scatter_add(&mut g_item_u, &batch.items, &r.grad_anchors.mapv(|v| v * a2));
            scatter_add(&mut ga_item_u, &batch.items, &r.grad_positives.mapv(|v| v * a2));
        }
        if let Some(r) = &res.item_basket_view {
            scatter_add(&mut g_item_b, &batch.items, &r.grad_anchors.mapv(|v| v * a2));
            scatter_add(&mut ga_item_b, &batch.items, &r.grad_positives.mapv(|v| v * a2));
        }
        if let Some(r) = &res.basket {
            let hg = graphs.hypergraph.as_ref().expect("hypergraph view is enabled");
            let ahg = aug.and_then(|a| a.hypergraph.as_ref()).expect("augmented hypergraph exists");
            for (row, &b) in cl_baskets.iter().enumerate() {
                let orig_members: Vec<usize> = hg.members(b).collect();
                let aug_members: Vec<usize> = ahg.members(b).collect();
                let wo = a2 / orig_members.len() as f64;
                let wa = a2 / aug_members.len() as f64;
                for &m in &orig_members {
                    let mut dst = g_item_b.row_mut(m);
                    dst.scaled_add(wo, &r.grad_anchors.row(row));
                }
                for &m in &aug_members {
                    let mut dst = ga_item_b.row_mut(m);
                    dst.scaled_add(wa, &r.grad_positives.row(row));
                }
            }
        }
    }

    // pull the pooled-output gradients back to the base tables
    let (bu, bi) = adjoint_bipartite_pooled(&graphs.bipartite, &g_user, &g_item_u, k);
    grads.user += &bu;
    grads.item += &bi;
    if let Some(hg) = graphs.hypergraph.as_ref() {
        let gb = adjoint_hypergraph_pooled(hg, &g_item_b, k);
        match &mut grads.item_hyper {
            Some(gh) => *gh += &gb,
            None => grads.item += &gb,
        }
    }
    if let Some(a) = aug {
        if cfg.augmentation_active() {
            let (bu, bi) = adjoint_bipartite_pooled(&a.bipartite, &ga_user, &ga_item_u, k);
            grads.user += &bu;
            grads.item += &bi;
            if let Some(ahg) = a.hypergraph.as_ref() {
                let gb = adjoint_hypergraph_pooled(ahg, &ga_item_b, k);
                match &mut grads.item_hyper {
                    Some(gh) => *gh += &gb,
                    None => grads.item += &gb,
                }
            }
        }
    }

    let parts = LossParts {
        main: bpr.loss,
        cross,
        within,
        total: total_loss(bpr.loss, cross, within, cfg.alpha_cross, cfg.alpha_within),
    };
    Ok((parts, grads))
}

/// First/second-moment state for the adaptive optimizer option.
pub enum OptState {
    Sgd,
    Adam { m: BaseGrads, v: BaseGrads, step: usize },
}

impl OptState {
    pub fn new(cfg: &TrainConfig, base: &BaseTables) -> Self {
        match cfg.optimizer {
            Optimizer::Sgd => OptState::Sgd,
            Optimizer::Adam => OptState::Adam {
                m: BaseGrads::zeros_like(base),
                v: BaseGrads::zeros_like(base),
                step: 0,
            },
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn apply_update(base: &mut BaseTables, grads: &BaseGrads, lr: f64, opt: &mut OptState) {
    match opt {
        OptState::Sgd => {
            base.user.scaled_add(-lr, &grads.user);
            base.item.scaled_add(-lr, &grads.item);
            if let (Some(t), Some(g)) = (&mut base.item_hyper, &grads.item_hyper) {
                t.scaled_add(-lr, g);
            }
        }
        OptState::Adam { m, v, step } => {
            *step += 1;
            let t = *step as f64;
            let correction = (1.0 - ADAM_BETA2.powf(t)).sqrt() / (1.0 - ADAM_BETA1.powf(t));
            let one = |table: &mut Array2<f64>, g: &Array2<f64>, m: &mut Array2<f64>, v: &mut Array2<f64>| {
                for ((x, &gv), (mv, vv)) in table.iter_mut().zip(g.iter()).zip(m.iter_mut().zip(v.iter_mut())) {
                    *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
                    *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
                    *x -= lr * correction * *mv / (vv.sqrt() + ADAM_EPS);
                }
            };
            one(&mut base.user, &grads.user, &mut m.user, &mut v.user);
            one(&mut base.item, &grads.item, &mut m.item, &mut v.item);
            if let (Some(t), Some(g), Some(ms), Some(vs)) =
                (&mut base.item_hyper, &grads.item_hyper, &mut m.item_hyper, &mut v.item_hyper)
            {
                one(t, g, ms, vs);
            }
        }
    }
}

/// Edge-drop probabilities for both graphs, fixed for the whole run since
/// they only depend on the original graphs' degrees.
pub struct AugPlan {
    bipartite_probs: Vec<f64>,
    hypergraph_probs: Option<Vec<f64>>,
}

impl AugPlan {
    pub fn new(graphs: &TrainGraphs, cfg: &TrainConfig) -> Option<Self> {
        if !cfg.augmentation_active() {
            return None;
        }
        let plan = if cfg.use_ca_augmentation {
            let hg = graphs
                .hypergraph
                .as_ref()
                .expect("consistency-aware augmentation needs both views; validated earlier");
            AugPlan {
                bipartite_probs: drop_probabilities(&bipartite_importance(&graphs.bipartite, hg), cfg.drop_rate),
                hypergraph_probs: Some(drop_probabilities(&hypergraph_importance(&graphs.bipartite, hg), cfg.drop_rate)),
            }
        } else {
            AugPlan {
                bipartite_probs: vec![cfg.drop_rate; graphs.bipartite.num_edges()],
                hypergraph_probs: graphs.hypergraph.as_ref().map(|hg| vec![cfg.drop_rate; hg.num_pairs()]),
            }
        };
        Some(plan)
    }

    /// Draw fresh views (one per graph, shared by both contrastive terms).
    pub fn sample(&self, graphs: &TrainGraphs, rng: &mut ChaCha8Rng) -> AugGraphs {
        let bipartite = sample_bipartite_view(&graphs.bipartite, &self.bipartite_probs, rng).graph;
        let hypergraph = match (&self.hypergraph_probs, &graphs.hypergraph) {
            (Some(probs), Some(hg)) => Some(sample_hypergraph_view(hg, probs, rng).graph),
            _ => None,
        };
        AugGraphs { bipartite, hypergraph }
    }
}

/// One pass over the training pairs: resample the augmented views, then run
/// `ceil(pairs / batch_size)` batches of `batch_size` sampled triples each.
/// Returns the mean loss components.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    base: &mut BaseTables,
    graphs: &TrainGraphs,
    plan: Option<&AugPlan>,
    split: &SplitDataset,
    sampler: &TripleSampler,
    cfg: &TrainConfig,
    rng_sampling: &mut ChaCha8Rng,
    rng_aug: &mut ChaCha8Rng,
    opt: &mut OptState,
    epoch: usize,
) -> Result<LossParts> {
    let aug = plan.map(|p| p.sample(graphs, rng_aug));

    let pairs = split.train.num_pairs();
    let num_batches = pairs.div_ceil(cfg.batch_size).max(1);
    let mut mean = LossParts::default();
    for _ in 0..num_batches {
        let triples = sampler.sample(split, cfg.batch_size, rng_sampling)?;
        let batch = BatchEntities::from_triples(triples);
        let (parts, grads) = batch_loss_and_grads(base, graphs, aug.as_ref(), split, &batch, cfg)?;
        for (value, name) in [(parts.main, "main loss"), (parts.cross, "cross-behavior loss"), (parts.within, "within-behavior loss")] {
            if !value.is_finite() {
                return Err(Error::Divergence { component: name.into(), epoch });
            }
        }
        apply_update(base, &grads, cfg.learning_rate, opt);
        mean.main += parts.main;
        mean.cross += parts.cross;
        mean.within += parts.within;
        mean.total += parts.total;
    }
    let n = num_batches as f64;
    mean.main /= n;
    mean.cross /= n;
    mean.within /= n;
    mean.total /= n;
    Ok(mean)
}

/// Resumable snapshot of a training run.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub epoch: usize,
    pub base: BaseTables,
    pub sampling_pos: u128,
    pub augmentation_pos: u128,
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub main: f64,
    pub cross: f64,
    pub within: f64,
    pub total: f64,
    pub wall_secs: f64,
    pub eval_recall: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BestSnapshot {
    pub epoch: usize,
    pub recall: f64,
    pub base: BaseTables,
}

pub struct FitResult {
    /// Final-epoch state; resuming from it continues the exact trajectory.
    pub checkpoint: Checkpoint,
    /// Best tables seen by the periodic evaluation, when it is enabled.
    pub best: Option<BestSnapshot>,
    pub log: Vec<EpochRecord>,
}

/// Train from a fresh Xavier initialization.
pub fn fit(split: &SplitDataset, cfg: &TrainConfig) -> Result<FitResult> {
    fit_from(split, cfg, None)
}

/// Train, optionally continuing from a checkpoint's tables and stream
/// positions.
pub fn fit_from(split: &SplitDataset, cfg: &TrainConfig, start: Option<&Checkpoint>) -> Result<FitResult> {
    cfg.validate()?;
    let graphs = TrainGraphs::build(split, cfg);
    let sampler = TripleSampler::new(split);
    let plan = AugPlan::new(&graphs, cfg);

    let (mut base, first_epoch, mut rng_sampling, mut rng_aug) = match start {
        Some(ck) => (
            ck.base.clone(),
            ck.epoch,
            stream_at(cfg.seed, Stream::Sampling, ck.sampling_pos),
            stream_at(cfg.seed, Stream::Augmentation, ck.augmentation_pos),
        ),
        None => {
            let mut rng_init = stream(cfg.seed, Stream::Init);
            let base = init_params(cfg, split.train.num_users, split.train.num_items, &mut rng_init);
            (base, 0, stream(cfg.seed, Stream::Sampling), stream(cfg.seed, Stream::Augmentation))
        }
    };

    let mut opt = OptState::new(cfg, &base);
    let mut log = Vec::new();
    let mut best: Option<BestSnapshot> = None;

    for epoch in first_epoch..cfg.epochs {
        let t0 = std::time::Instant::now();
        let parts = train_epoch(
            &mut base,
            &graphs,
            plan.as_ref(),
            split,
            &sampler,
            cfg,
            &mut rng_sampling,
            &mut rng_aug,
            &mut opt,
            epoch,
        )?;
        let mut eval_recall = None;
        if cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 && split.num_evaluable() > 0 {
            let fwd = compute_forward(&base, &graphs.bipartite, graphs.hypergraph.as_ref(), cfg.num_layers)?;
            let recall = crate::evaluation::mean_recall_at_k(&fwd, split, cfg.eval_k, cfg.score_balance, cfg.additive_score)?;
            eval_recall = Some(recall);
            if best.as_ref().is_none_or(|b| recall > b.recall) {
                best = Some(BestSnapshot { epoch, recall, base: base.clone() });
            }
        }
        log.push(EpochRecord {
            epoch,
            main: parts.main,
            cross: parts.cross,
            within: parts.within,
            total: parts.total,
            wall_secs: t0.elapsed().as_secs_f64(),
            eval_recall,
        });
    }

    Ok(FitResult {
        checkpoint: Checkpoint {
            config: cfg.clone(),
            epoch: cfg.epochs,
            base,
            sampling_pos: rng_sampling.get_word_pos(),
            augmentation_pos: rng_aug.get_word_pos(),
        },
        best,
        log,
    })
}

/// Full forward pass on the original graphs of a split, as used for
/// evaluation and ranking.
pub fn forward_for_eval(base: &BaseTables, split: &SplitDataset, cfg: &TrainConfig) -> Result<Forward> {
    let graphs = TrainGraphs::build(split, cfg);
    compute_forward(base, &graphs.bipartite, graphs.hypergraph.as_ref(), cfg.num_layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{split_within_basket, SplitDataset};
    use crate::testutil::tiny_dataset;

    fn toy_split() -> SplitDataset {
        // 5 users, 8 items, 4 baskets
        let ds = tiny_dataset(
            &[
                (0, &[0, 1, 2]),
                (1, &[2, 3, 4]),
                (2, &[4, 5, 6, 7]),
                (3, &[0, 6, 7]),
            ],
            5,
            8,
        );
        SplitDataset { heldout: vec![Vec::new(); ds.num_baskets], train: ds }
    }

    fn toy_cfg() -> TrainConfig {
        TrainConfig {
            embedding_dim: 4,
            num_layers: 1,
            learning_rate: 0.01,
            batch_size: 8,
            epochs: 3,
            drop_rate: 0.3,
            score_balance: 0.3,
            alpha_cross: 0.2,
            alpha_within: 0.1,
            l2_weight: 0.01,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn xavier_bounds_determinism_and_variance() {
        let cfg = TrainConfig { embedding_dim: 16, ..TrainConfig::default() };
        let bound = (6.0 / 32.0f64).sqrt();
        let mut rng = stream(3, Stream::Init);
        let base = init_params(&cfg, 2500, 3750, &mut rng);
        for v in base.user.iter().chain(base.item.iter()) {
            assert!(v.abs() < bound);
        }
        let mut rng2 = stream(3, Stream::Init);
        let again = init_params(&cfg, 2500, 3750, &mut rng2);
        assert_eq!(base.user, again.user);
        assert_eq!(base.item, again.item);

        // 1e5 entries: empirical variance of U(-b, b) is b^2/3 = 1/d within 5%
        let n = (base.user.len() + base.item.len()) as f64;
        assert!(n >= 1e5);
        let mean: f64 = base.user.iter().chain(base.item.iter()).sum::<f64>() / n;
        let var: f64 = base.user.iter().chain(base.item.iter()).map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let expect = 1.0 / 16.0;
        assert!((var - expect).abs() / expect < 0.05, "var {var} vs {expect}");
    }

    #[test]
    fn two_item_catalog_forces_the_negative() {
        let ds = tiny_dataset(&[(0, &[0])], 1, 2);
        let split = SplitDataset { heldout: vec![Vec::new()], train: ds };
        let mut rng = stream(5, Stream::Sampling);
        let triples = sample_triples(&split, 50, &mut rng).unwrap();
        for t in triples {
            assert_eq!(t.pos, 0);
            assert_eq!(t.neg, 1);
        }
    }

    #[test]
    fn positives_come_from_the_sampled_basket() {
        let split = toy_split();
        let mut rng = stream(6, Stream::Sampling);
        for t in sample_triples(&split, 300, &mut rng).unwrap() {
            assert!(split.train.basket_items[t.basket].contains(&t.pos));
            assert_eq!(split.train.basket_owner[t.basket], t.user);
            assert!(!split.train.user_baskets[t.user]
                .iter()
                .any(|&b| split.train.basket_items[b].contains(&t.neg)));
        }
    }

    #[test]
    fn basket_selection_is_uniform() {
        let split = toy_split();
        let mut rng = stream(7, Stream::Sampling);
        let n = 10_000;
        let triples = sample_triples(&split, n, &mut rng).unwrap();
        let mut counts = vec![0usize; split.train.num_baskets];
        for t in &triples {
            counts[t.basket] += 1;
        }
        let p = 1.0 / split.train.num_baskets as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for (b, &c) in counts.iter().enumerate() {
            assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sigma, "basket {b}: {c}");
        }
    }

    #[test]
    fn user_owning_everything_is_a_sampling_error() {
        let ds = tiny_dataset(&[(0, &[0, 1])], 1, 2);
        let split = SplitDataset { heldout: vec![Vec::new()], train: ds };
        let mut rng = stream(8, Stream::Sampling);
        assert!(matches!(sample_triples(&split, 4, &mut rng), Err(Error::Sampling(_))));
    }

    #[test]
    fn supervised_only_config_has_zero_cl_components() {
        let split = toy_split();
        let cfg = TrainConfig {
            alpha_cross: 0.0,
            alpha_within: 0.0,
            drop_rate: 0.0,
            epochs: 2,
            ..toy_cfg()
        };
        let result = fit(&split, &cfg).unwrap();
        for rec in &result.log {
            assert_eq!(rec.cross, 0.0);
            assert_eq!(rec.within, 0.0);
            assert_eq!(rec.total, rec.main);
        }
    }

    fn fixed_batch_setup(cfg: &TrainConfig) -> (SplitDataset, TrainGraphs, AugGraphs, BatchEntities, BaseTables) {
        let split = toy_split();
        let graphs = TrainGraphs::build(&split, cfg);
        let plan = AugPlan::new(&graphs, cfg).expect("CL active");
        let mut rng_aug = stream(cfg.seed, Stream::Augmentation);
        let aug = plan.sample(&graphs, &mut rng_aug);
        let mut rng_s = stream(cfg.seed, Stream::Sampling);
        let sampler = TripleSampler::new(&split);
        let triples = sampler.sample(&split, cfg.batch_size, &mut rng_s).unwrap();
        let batch = BatchEntities::from_triples(triples);
        let mut rng_init = stream(cfg.seed, Stream::Init);
        let base = init_params(cfg, split.train.num_users, split.train.num_items, &mut rng_init);
        (split, graphs, aug, batch, base)
    }

    #[test]
    fn one_step_descends_on_a_fixed_batch() {
        let cfg = toy_cfg();
        let (split, graphs, aug, batch, mut base) = fixed_batch_setup(&cfg);
        let (l0, grads) = batch_loss_and_grads(&base, &graphs, Some(&aug), &split, &batch, &cfg).unwrap();
        let mut opt = OptState::Sgd;
        apply_update(&mut base, &grads, 1e-3, &mut opt);
        let (l1, _) = batch_loss_and_grads(&base, &graphs, Some(&aug), &split, &batch, &cfg).unwrap();
        assert!(l1.total < l0.total, "{} !< {}", l1.total, l0.total);
    }

    #[test]
    fn full_gradient_matches_finite_differences_with_separate_tables() {
        let cfg = TrainConfig { shared_item_base: false, exclude_positive_in_denominator: false, ..toy_cfg() };
        let (split, graphs, aug, batch, base) = fixed_batch_setup(&cfg);
        let (_, grads) = batch_loss_and_grads(&base, &graphs, Some(&aug), &split, &batch, &cfg).unwrap();
        let loss_of = |b: &BaseTables| {
            batch_loss_and_grads(b, &graphs, Some(&aug), &split, &batch, &cfg).unwrap().0.total
        };
        let eps = 1e-5;
        let mut check_table = |select: &dyn Fn(&mut BaseTables) -> &mut Array2<f64>, grad: &Array2<f64>, what: &str| {
            let rows = grad.nrows();
            for r in 0..rows {
                for f in 0..cfg.embedding_dim {
                    let mut hi = base.clone();
                    select(&mut hi)[[r, f]] += eps;
                    let mut lo = base.clone();
                    select(&mut lo)[[r, f]] -= eps;
                    let fd = (loss_of(&hi) - loss_of(&lo)) / (2.0 * eps);
                    let g = grad[[r, f]];
                    let denom = g.abs().max(fd.abs()).max(1e-6);
                    assert!((g - fd).abs() / denom < 1e-4, "{what}[{r},{f}]: {g} vs {fd}");
                }
            }
        };
        check_table(&|b| &mut b.user, &grads.user, "base_user");
        check_table(&|b| &mut b.item, &grads.item, "base_item");
        let hyper_grad = grads.item_hyper.as_ref().unwrap().clone();
        check_table(&|b| b.item_hyper.as_mut().unwrap(), &hyper_grad, "base_item_hyper");
    }

    #[test]
    fn fit_is_deterministic() {
        let split = toy_split();
        let cfg = toy_cfg();
        let a = fit(&split, &cfg).unwrap();
        let b = fit(&split, &cfg).unwrap();
        assert_eq!(a.checkpoint.base.user, b.checkpoint.base.user);
        assert_eq!(a.checkpoint.base.item, b.checkpoint.base.item);
        assert_eq!(a.checkpoint.sampling_pos, b.checkpoint.sampling_pos);
        let c = fit(&split, &TrainConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.checkpoint.base.user, c.checkpoint.base.user);
    }

    #[test]
    fn updates_never_reach_a_disconnected_component() {
        // users {0, 1} with items {0, 1, 2}; users {2, 3} with items {3, 4, 5}
        let ds = tiny_dataset(
            &[(0, &[0, 1]), (1, &[1, 2]), (2, &[3, 4]), (3, &[4, 5])],
            4,
            6,
        );
        let split = SplitDataset { heldout: vec![Vec::new(); 4], train: ds };
        let cfg = TrainConfig { embedding_dim: 4, num_layers: 2, ..toy_cfg() };
        let graphs = TrainGraphs::build(&split, &cfg);
        let plan = AugPlan::new(&graphs, &cfg).unwrap();
        let mut rng_aug = stream(1, Stream::Augmentation);
        let aug = plan.sample(&graphs, &mut rng_aug);
        let mut rng_init = stream(1, Stream::Init);
        let mut base = init_params(&cfg, 4, 6, &mut rng_init);
        let before = base.clone();

        // batch touches only the first component (negative item 2 is unowned
        // by user 0 but lives in the same component)
        let batch = BatchEntities::from_triples(vec![BprTriple { user: 0, basket: 0, pos: 0, neg: 2 }]);
        let (_, grads) = batch_loss_and_grads(&base, &graphs, Some(&aug), &split, &batch, &cfg).unwrap();
        let mut opt = OptState::Sgd;
        apply_update(&mut base, &grads, cfg.learning_rate, &mut opt);

        for u in [2usize, 3] {
            assert_eq!(base.user.row(u), before.user.row(u), "user {u} must not change");
        }
        for i in [3usize, 4, 5] {
            assert_eq!(base.item.row(i), before.item.row(i), "item {i} must not change");
        }
        // and something in the touched component did change
        assert_ne!(base.user.row(0), before.user.row(0));
    }

    #[test]
    fn resume_reproduces_the_trajectory() {
        let ds = tiny_dataset(&[(0, &[0, 1, 2, 3, 4]), (1, &[3, 4, 5, 6])], 2, 7);
        let split = split_within_basket(&ds, 0.8, 3);
        let cfg = TrainConfig { epochs: 6, ..toy_cfg() };
        let full = fit(&split, &cfg).unwrap();

        let half_cfg = TrainConfig { epochs: 3, ..cfg.clone() };
        let half = fit(&split, &half_cfg).unwrap();
        let resumed = fit_from(&split, &cfg, Some(&half.checkpoint)).unwrap();

        assert_eq!(full.checkpoint.base.user, resumed.checkpoint.base.user);
        assert_eq!(full.checkpoint.base.item, resumed.checkpoint.base.item);
        assert_eq!(full.checkpoint.sampling_pos, resumed.checkpoint.sampling_pos);
        assert_eq!(full.checkpoint.augmentation_pos, resumed.checkpoint.augmentation_pos);
    }

    #[test]
    fn adam_only_moves_touched_rows_too() {
        let split = toy_split();
        let cfg = TrainConfig { optimizer: crate::config::Optimizer::Adam, epochs: 2, ..toy_cfg() };
        let result = fit(&split, &cfg).unwrap();
        // user 4 owns no basket and is disconnected: untouched by training
        let mut rng_init = stream(cfg.seed, Stream::Init);
        let init = init_params(&cfg, 5, 8, &mut rng_init);
        assert_eq!(result.checkpoint.base.user.row(4), init.user.row(4));
    }
}
