//! Full-ranking top-K evaluation, the four metrics, the noise-injection
//! robustness protocol, and the two-variant sweep used for degradation
//! curves.

use ndarray::Array1;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Preset, TrainConfig};
use crate::dataset::SplitDataset;
use crate::error::{Error, Result};
use crate::objectives::score_weights;
use crate::propagation::{basket_embedding, BaseTables, Forward};

/// One evaluated basket: the top-ranked candidates (partial items excluded,
/// ties broken by ascending item id) and its held-out ground truth.
#[derive(Debug, Clone)]
pub struct RankingResult {
    pub basket: usize,
    pub ranked: Vec<usize>,
    pub ground_truth: Vec<usize>,
}

/// Score every candidate item for (user, partial basket) and return the top
/// `k_max` ids. Candidates are all items except the partial basket itself.
pub fn rank_items(
    fwd: &Forward,
    user: usize,
    partial: &[usize],
    r: f64,
    additive: bool,
    k_max: usize,
) -> Result<Vec<usize>> {
    if partial.is_empty() {
        return Err(Error::Contract("cannot rank for an empty partial basket".into()));
    }
    let (wu, wb) = score_weights(r, additive);
    let e_b = basket_embedding(&fwd.final_item_b, partial)?;
    let e_u = fwd.final_user.row(user);
    let query: Array1<f64> = wu * &e_u.to_owned() + wb * &e_b;

    let excluded: std::collections::HashSet<usize> = partial.iter().copied().collect();
    let mut scored: Vec<(f64, usize)> = (0..fwd.fused_item.nrows())
        .filter(|i| !excluded.contains(i))
        .map(|i| (fwd.fused_item.row(i).dot(&query), i))
        .collect();
    scored.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.truncate(k_max);
    Ok(scored.into_iter().map(|(_, i)| i).collect())
}

fn hits_at_k(result: &RankingResult, k: usize) -> usize {
    let gt: std::collections::HashSet<usize> = result.ground_truth.iter().copied().collect();
    result.ranked.iter().take(k).filter(|i| gt.contains(i)).count()
}

pub fn recall_at_k(result: &RankingResult, k: usize) -> f64 {
    assert!(k >= 1 && !result.ground_truth.is_empty());
    hits_at_k(result, k) as f64 / result.ground_truth.len() as f64
}

pub fn precision_at_k(result: &RankingResult, k: usize) -> f64 {
    assert!(k >= 1 && !result.ground_truth.is_empty());
    hits_at_k(result, k) as f64 / k as f64
}

pub fn hr_at_k(result: &RankingResult, k: usize) -> f64 {
    assert!(k >= 1 && !result.ground_truth.is_empty());
    f64::from(hits_at_k(result, k) >= 1)
}

/// Binary-gain NDCG: rank rho (1-based) contributes `1/log2(rho + 1)`, the
/// ideal ranking fills the first `min(|GT|, K)` positions.
pub fn ndcg_at_k(result: &RankingResult, k: usize) -> f64 {
    assert!(k >= 1 && !result.ground_truth.is_empty());
    let gt: std::collections::HashSet<usize> = result.ground_truth.iter().copied().collect();
    let mut dcg = 0.0;
    for (idx, item) in result.ranked.iter().take(k).enumerate() {
        if gt.contains(item) {
            dcg += 1.0 / ((idx + 2) as f64).log2();
        }
    }
    let ideal = result.ground_truth.len().min(k);
    let idcg: f64 = (0..ideal).map(|idx| 1.0 / ((idx + 2) as f64).log2()).sum();
    dcg / idcg
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MetricsRow {
    pub k: usize,
    pub recall: f64,
    pub precision: f64,
    pub hr: f64,
    pub ndcg: f64,
}

/// Per-K means over all evaluable baskets, plus the run identity needed to
/// reproduce them.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub num_baskets: usize,
    pub seed: u64,
    pub config: String,
}

impl MetricsReport {
    /// One row per K as delimited text.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("k\trecall\tprecision\thr\tndcg\n");
        for row in &self.rows {
            out.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", row.k, row.recall, row.precision, row.hr, row.ndcg));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn row(&self, k: usize) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.k == k)
    }
}

/// Evaluate a forward pass against a split's held-out items. Baskets with an
/// empty held-out set (or an empty partial basket) are skipped, not
/// zero-counted. `queries` supplies the partial baskets and ground truth;
/// the forward pass may come from differently built (e.g. noisy) graphs.
pub fn evaluate_forward(
    fwd: &Forward,
    queries: &SplitDataset,
    ks: &[usize],
    r: f64,
    additive: bool,
) -> Result<MetricsReport> {
    assert!(!ks.is_empty());
    let k_max = *ks.iter().max().unwrap();
    let mut sums = vec![[0.0f64; 4]; ks.len()];
    let mut count = 0usize;
    for b in 0..queries.train.num_baskets {
        let gt = &queries.heldout[b];
        let partial = &queries.train.basket_items[b];
        if gt.is_empty() || partial.is_empty() {
            continue;
        }
        let user = queries.train.basket_owner[b];
        let ranked = rank_items(fwd, user, partial, r, additive, k_max)?;
        let result = RankingResult { basket: b, ranked, ground_truth: gt.clone() };
        for (slot, &k) in ks.iter().enumerate() {
            sums[slot][0] += recall_at_k(&result, k);
            sums[slot][1] += precision_at_k(&result, k);
            sums[slot][2] += hr_at_k(&result, k);
            sums[slot][3] += ndcg_at_k(&result, k);
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyDataset("no evaluable baskets (every held-out set is empty)".into()));
    }
    let rows = ks
        .iter()
        .zip(&sums)
        .map(|(&k, s)| MetricsRow {
            k,
            recall: s[0] / count as f64,
            precision: s[1] / count as f64,
            hr: s[2] / count as f64,
            ndcg: s[3] / count as f64,
        })
        .collect();
    Ok(MetricsReport { rows, num_baskets: count, seed: 0, config: String::new() })
}

/// Rebuild the original graphs of `split`, run the forward pass for `base`,
/// and compute the per-K metric means.
pub fn evaluate(base: &BaseTables, cfg: &TrainConfig, split: &SplitDataset, ks: &[usize]) -> Result<MetricsReport> {
    let fwd = crate::trainer::forward_for_eval(base, split, cfg)?;
    let mut report = evaluate_forward(&fwd, split, ks, cfg.score_balance, cfg.additive_score)?;
    report.seed = cfg.seed;
    report.config = cfg.to_text();
    Ok(report)
}

/// Mean Recall@K only; the cheap path used for in-training evaluation.
pub fn mean_recall_at_k(fwd: &Forward, split: &SplitDataset, k: usize, r: f64, additive: bool) -> Result<f64> {
    let report = evaluate_forward(fwd, split, &[k], r, additive)?;
    Ok(report.rows[0].recall)
}

/// Add `floor(ratio * train_pairs)` fabricated basket-membership records:
/// each picks a uniform train basket and a uniform item that basket has not
/// seen on either side of the split. Both derived graphs degrade together
/// since they are rebuilt from baskets; the held-out sets are untouched.
pub fn inject_noise(split: &SplitDataset, ratio: f64, rng: &mut ChaCha8Rng) -> Result<SplitDataset> {
    assert!(ratio >= 0.0);
    let mut out = split.clone();
    let to_add = (ratio * split.train.num_pairs() as f64).floor() as usize;
    if to_add == 0 {
        return Ok(out);
    }
    let num_items = out.train.num_items;
    let num_baskets = out.train.num_baskets;
    let mut blocked: Vec<std::collections::HashSet<usize>> = (0..num_baskets)
        .map(|b| out.train.basket_items[b].iter().chain(&out.heldout[b]).copied().collect())
        .collect();

    for _ in 0..to_add {
        let mut basket = None;
        for _ in 0..1000 {
            let b = rng.random_range(0..num_baskets);
            if blocked[b].len() < num_items {
                basket = Some(b);
                break;
            }
        }
        let b = basket.ok_or_else(|| Error::Sampling("catalog exhausted: no basket can take another item".into()))?;
        let mut item = None;
        for _ in 0..100 {
            let i = rng.random_range(0..num_items);
            if !blocked[b].contains(&i) {
                item = Some(i);
                break;
            }
        }
        let i = match item {
            Some(i) => i,
            None => {
                // dense basket: enumerate the complement and pick uniformly
                let free: Vec<usize> = (0..num_items).filter(|i| !blocked[b].contains(i)).collect();
                free[rng.random_range(0..free.len())]
            }
        };
        blocked[b].insert(i);
        out.train.basket_items[b].push(i);
    }
    Ok(out)
}

/// One trained-and-evaluated configuration of the robustness sweep.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepRecord {
    pub ratio: f64,
    pub seed: u64,
    pub variant: String,
    pub report: MetricsReport,
}

pub const SWEEP_VARIANTS: [&str; 2] = ["full", "lightgcn-only"];

/// Train and evaluate a fresh model per (ratio, seed, variant). The model
/// trains on (and propagates over) the noisy graphs; queries and ground
/// truth stay clean.
pub fn noise_sweep(
    split: &SplitDataset,
    cfg: &TrainConfig,
    ratios: &[f64],
    seeds: &[u64],
    ks: &[usize],
) -> Result<Vec<SweepRecord>> {
    assert!(!ratios.is_empty());
    let mut records = Vec::new();
    for &ratio in ratios {
        for &seed in seeds {
            let mut noise_rng = crate::rng::stream(seed, crate::rng::Stream::Noise);
            let noisy = inject_noise(split, ratio, &mut noise_rng)?;
            for variant in SWEEP_VARIANTS {
                let mut run_cfg = cfg.clone();
                run_cfg.seed = seed;
                if variant == "lightgcn-only" {
                    Preset::LightgcnOnly.apply(&mut run_cfg);
                }
                let fitted = crate::trainer::fit(&noisy, &run_cfg)?;
                let fwd = crate::trainer::forward_for_eval(&fitted.checkpoint.base, &noisy, &run_cfg)?;
                let mut report =
                    evaluate_forward(&fwd, split, ks, run_cfg.score_balance, run_cfg.additive_score)?;
                report.seed = seed;
                report.config = run_cfg.to_text();
                records.push(SweepRecord { ratio, seed, variant: variant.to_string(), report });
            }
        }
    }
    Ok(records)
}
