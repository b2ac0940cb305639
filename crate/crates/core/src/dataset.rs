//! Transaction-log ingestion, basket filtering, and the within-basket split.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Column-name mapping for a delimited transaction file.
#[derive(Debug, Clone)]
pub struct LoadSchema {
    pub user_col: String,
    pub basket_col: String,
    pub item_col: String,
    /// Field delimiter; `None` sniffs comma vs tab from the header line.
    pub delimiter: Option<u8>,
}

impl Default for LoadSchema {
    fn default() -> Self {
        LoadSchema {
            user_col: "user_id".into(),
            basket_col: "basket_id".into(),
            item_col: "item_id".into(),
            delimiter: None,
        }
    }
}

/// Dense-id → raw-id mappings retained for reporting. A basket's raw identity
/// is the (raw user, raw basket) pair: transaction files may reuse a basket
/// label (e.g. a date) across users.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawIdMaps {
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub baskets: Vec<(String, String)>,
}

/// Users, items, baskets and their relations after ID remapping.
///
/// All ids are dense: users in `[0, num_users)`, items in `[0, num_items)`,
/// baskets in `[0, num_baskets)`. `user_baskets` is the exact inverse of
/// `basket_owner`, and no basket contains a duplicate item.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InteractionDataset {
    pub num_users: usize,
    pub num_items: usize,
    pub num_baskets: usize,
    pub basket_owner: Vec<usize>,
    pub basket_items: Vec<Vec<usize>>,
    pub user_baskets: Vec<Vec<usize>>,
    pub ids: RawIdMaps,
}

impl InteractionDataset {
    /// Total number of (basket, item) membership pairs.
    pub fn num_pairs(&self) -> usize {
        self.basket_items.iter().map(Vec::len).sum()
    }

    pub fn stats(&self) -> DatasetStats {
        let pairs = self.num_pairs();
        DatasetStats {
            num_users: self.num_users,
            num_items: self.num_items,
            num_baskets: self.num_baskets,
            num_pairs: pairs,
            mean_basket_size: pairs as f64 / self.num_baskets.max(1) as f64,
            mean_baskets_per_user: self.num_baskets as f64 / self.num_users.max(1) as f64,
        }
    }

    /// Debug-mode validation of the structural invariants.
    pub fn check_invariants(&self) -> Result<()> {
        if self.basket_owner.len() != self.num_baskets
            || self.basket_items.len() != self.num_baskets
            || self.user_baskets.len() != self.num_users
        {
            return Err(Error::Contract("dataset table lengths disagree with counts".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for (b, items) in self.basket_items.iter().enumerate() {
            if items.is_empty() {
                return Err(Error::Contract(format!("basket {b} has no items")));
            }
            seen.clear();
            for &i in items {
                if i >= self.num_items || !seen.insert(i) {
                    return Err(Error::Contract(format!("basket {b} has bad or duplicate item {i}")));
                }
            }
            if self.basket_owner[b] >= self.num_users {
                return Err(Error::Contract(format!("basket {b} has out-of-range owner")));
            }
        }
        for (u, baskets) in self.user_baskets.iter().enumerate() {
            for &b in baskets {
                if self.basket_owner[b] != u {
                    return Err(Error::Contract(format!("user_baskets[{u}] is not the inverse of basket_owner")));
                }
            }
        }
        let listed: usize = self.user_baskets.iter().map(Vec::len).sum();
        if listed != self.num_baskets {
            return Err(Error::Contract("user_baskets does not cover every basket exactly once".into()));
        }
        Ok(())
    }
}

/// Table-1-style summary counts.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DatasetStats {
    pub num_users: usize,
    pub num_items: usize,
    pub num_baskets: usize,
    pub num_pairs: usize,
    pub mean_basket_size: f64,
    pub mean_baskets_per_user: f64,
}

impl DatasetStats {
    pub fn render(&self) -> String {
        format!(
            "users\t{}\nitems\t{}\nbaskets\t{}\npairs\t{}\nmean_basket_size\t{:.2}\nmean_baskets_per_user\t{:.2}\n",
            self.num_users,
            self.num_items,
            self.num_baskets,
            self.num_pairs,
            self.mean_basket_size,
            self.mean_baskets_per_user
        )
    }
}

/// Training data plus per-basket held-out ground truth.
///
/// `heldout[b]` is empty for baskets that are not evaluated; such baskets
/// still contribute their items to training.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: InteractionDataset,
    pub heldout: Vec<Vec<usize>>,
}

impl SplitDataset {
    pub fn num_evaluable(&self) -> usize {
        self.heldout.iter().filter(|h| !h.is_empty()).count()
    }
}

fn sniff_delimiter(path: &Path) -> Result<u8> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header = content.lines().next().unwrap_or("");
    Ok(if header.contains('\t') { b'\t' } else { b',' })
}

/// Read a delimited transaction log (one row per user/basket/item triple)
/// into a densely remapped dataset. Duplicate (basket, item) rows collapse
/// to one membership. Ids are assigned by first appearance, so the result
/// does not depend on any internal parallelism.
pub fn load_transactions(path: impl AsRef<Path>, schema: &LoadSchema) -> Result<InteractionDataset> {
    let path = path.as_ref();
    let delimiter = match schema.delimiter {
        Some(d) => d,
        None => sniff_delimiter(path)?,
    };

    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(false)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
            _ => Error::Format { path: path.into(), reason: e.to_string() },
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Format { path: path.into(), reason: e.to_string() })?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Schema {
            column: name.to_string(),
            header: headers.iter().collect::<Vec<_>>().join(", "),
        })
    };
    let user_idx = col(&schema.user_col)?;
    let basket_idx = col(&schema.basket_col)?;
    let item_idx = col(&schema.item_col)?;

    let mut user_ids: HashMap<String, usize> = HashMap::new();
    let mut item_ids: HashMap<String, usize> = HashMap::new();
    let mut basket_ids: HashMap<(usize, String), usize> = HashMap::new();

    let mut ds = InteractionDataset::default();
    let mut membership: Vec<std::collections::HashSet<usize>> = Vec::new();

    for record in reader.records() {
        let record = record.map_err(|e| Error::Format { path: path.into(), reason: e.to_string() })?;
        let raw_user = record.get(user_idx).unwrap_or("").trim();
        let raw_basket = record.get(basket_idx).unwrap_or("").trim();
        let raw_item = record.get(item_idx).unwrap_or("").trim();
        if raw_user.is_empty() || raw_basket.is_empty() || raw_item.is_empty() {
            continue;
        }

        let u = *user_ids.entry(raw_user.to_string()).or_insert_with(|| {
            ds.ids.users.push(raw_user.to_string());
            ds.user_baskets.push(Vec::new());
            ds.ids.users.len() - 1
        });
        let i = *item_ids.entry(raw_item.to_string()).or_insert_with(|| {
            ds.ids.items.push(raw_item.to_string());
            ds.ids.items.len() - 1
        });
        let b = *basket_ids.entry((u, raw_basket.to_string())).or_insert_with(|| {
            ds.ids.baskets.push((raw_user.to_string(), raw_basket.to_string()));
            ds.basket_owner.push(u);
            ds.basket_items.push(Vec::new());
            ds.user_baskets[u].push(ds.basket_owner.len() - 1);
            membership.push(std::collections::HashSet::new());
            ds.basket_owner.len() - 1
        });

        if membership[b].insert(i) {
            ds.basket_items[b].push(i);
        }
    }

    ds.num_users = ds.ids.users.len();
    ds.num_items = ds.ids.items.len();
    ds.num_baskets = ds.basket_owner.len();
    if ds.num_baskets == 0 {
        return Err(Error::EmptyDataset(format!("no usable rows in {}", path.display())));
    }
    Ok(ds)
}

/// Keep only baskets of at least `min_size` items, then drop users and items
/// left without any interaction and re-densify all three id spaces
/// (preserving relative order).
pub fn filter_baskets(ds: &InteractionDataset, min_size: usize) -> Result<InteractionDataset> {
    assert!(min_size >= 1, "min_size must be >= 1");

    let kept: Vec<usize> = (0..ds.num_baskets).filter(|&b| ds.basket_items[b].len() >= min_size).collect();
    if kept.is_empty() {
        return Err(Error::EmptyDataset(format!("no baskets of size >= {min_size} remain")));
    }

    let mut user_alive = vec![false; ds.num_users];
    let mut item_alive = vec![false; ds.num_items];
    for &b in &kept {
        user_alive[ds.basket_owner[b]] = true;
        for &i in &ds.basket_items[b] {
            item_alive[i] = true;
        }
    }
    let remap = |alive: &[bool]| -> Vec<Option<usize>> {
        let mut next = 0;
        alive
            .iter()
            .map(|&a| {
                if a {
                    next += 1;
                    Some(next - 1)
                } else {
                    None
                }
            })
            .collect()
    };
    let user_map = remap(&user_alive);
    let item_map = remap(&item_alive);

    let mut out = InteractionDataset {
        num_users: user_alive.iter().filter(|&&a| a).count(),
        num_items: item_alive.iter().filter(|&&a| a).count(),
        num_baskets: kept.len(),
        ..Default::default()
    };
    out.user_baskets = vec![Vec::new(); out.num_users];
    out.ids.users = vec![String::new(); out.num_users];
    out.ids.items = vec![String::new(); out.num_items];
    for (old, new) in user_map.iter().enumerate() {
        if let Some(n) = new {
            out.ids.users[*n] = ds.ids.users[old].clone();
        }
    }
    for (old, new) in item_map.iter().enumerate() {
        if let Some(n) = new {
            out.ids.items[*n] = ds.ids.items[old].clone();
        }
    }
    for (new_b, &old_b) in kept.iter().enumerate() {
        let owner = user_map[ds.basket_owner[old_b]].expect("owner alive");
        out.basket_owner.push(owner);
        out.user_baskets[owner].push(new_b);
        out.basket_items
            .push(ds.basket_items[old_b].iter().map(|&i| item_map[i].expect("item alive")).collect());
        out.ids.baskets.push(ds.ids.baskets[old_b].clone());
    }
    Ok(out)
}

/// Number of items a basket of `size` sends to the train side. The small
/// epsilon guards against the product of inexact decimals rounding up across
/// an integer at exact multiples.
pub fn train_count(size: usize, train_ratio: f64) -> usize {
    let n = (train_ratio * size as f64 - 1e-9).ceil() as usize;
    n.clamp(1, size)
}

/// Split every basket's items into a train part and a held-out part.
///
/// Per basket, a seeded uniformly random subset of `ceil(ratio * size)` items
/// goes to train and the remainder is held out. Baskets whose remainder is
/// empty keep their items in training but are excluded from evaluation.
pub fn split_within_basket(ds: &InteractionDataset, train_ratio: f64, seed: u64) -> SplitDataset {
    assert!(train_ratio > 0.0 && train_ratio < 1.0, "train_ratio must be in (0, 1)");
    let mut rng = crate::rng::stream(seed, crate::rng::Stream::Split);

    let mut train = ds.clone();
    let mut heldout = vec![Vec::new(); ds.num_baskets];

    for b in 0..ds.num_baskets {
        let items = &ds.basket_items[b];
        let n_train = train_count(items.len(), train_ratio);
        if n_train == items.len() {
            continue;
        }
        let chosen = sample_indices(items.len(), n_train, &mut rng);
        let mut take = vec![false; items.len()];
        for c in chosen {
            take[c] = true;
        }
        // Original within-basket order is preserved on both sides.
        train.basket_items[b] = items
            .iter()
            .zip(&take)
            .filter_map(|(&i, &t)| t.then_some(i))
            .collect();
        heldout[b] = items
            .iter()
            .zip(&take)
            .filter_map(|(&i, &t)| (!t).then_some(i))
            .collect();
    }

    SplitDataset { train, heldout }
}

/// Uniform random `k`-subset of `0..n` via partial Fisher-Yates.
fn sample_indices(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    for pos in 0..k {
        let j = rng.random_range(pos..n);
        pool.swap(pos, j);
    }
    pool.truncate(k);
    pool
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_three_rows() {
        let f = write_temp("user_id,basket_id,item_id\nuA,b1,iX\nuA,b1,iY\nuB,b2,iX\n");
        let ds = load_transactions(f.path(), &LoadSchema::default()).unwrap();
        assert_eq!(ds.num_users, 2);
        assert_eq!(ds.num_items, 2);
        assert_eq!(ds.num_baskets, 2);
        assert_eq!(ds.basket_items[0], vec![0, 1]);
        ds.check_invariants().unwrap();
    }

    #[test]
    fn duplicate_rows_dedupe() {
        let f = write_temp("user_id,basket_id,item_id\nuA,b1,iX\nuA,b1,iX\n");
        let ds = load_transactions(f.path(), &LoadSchema::default()).unwrap();
        assert_eq!(ds.basket_items[0], vec![0]);
    }

    #[test]
    fn tab_delimiter_is_sniffed() {
        let f = write_temp("user_id\tbasket_id\titem_id\nuA\tb1\tiX\n");
        let ds = load_transactions(f.path(), &LoadSchema::default()).unwrap();
        assert_eq!(ds.num_pairs(), 1);
    }

    #[test]
    fn same_basket_label_different_users_stays_distinct() {
        let f = write_temp("user_id,basket_id,item_id\nuA,t1,iX\nuB,t1,iY\n");
        let ds = load_transactions(f.path(), &LoadSchema::default()).unwrap();
        assert_eq!(ds.num_baskets, 2);
    }

    #[test]
    fn missing_column_is_schema_error() {
        let f = write_temp("user,basket_id,item_id\nuA,b1,iX\n");
        let err = load_transactions(f.path(), &LoadSchema::default()).unwrap_err();
        match err {
            Error::Schema { column, .. } => assert_eq!(column, "user_id"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_empty_dataset_error() {
        let f = write_temp("user_id,basket_id,item_id\n");
        let err = load_transactions(f.path(), &LoadSchema::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset(_)));
    }

    fn synthetic(sizes: &[usize]) -> InteractionDataset {
        // basket k owned by user k % 2, items are disjoint runs
        let mut ds = InteractionDataset {
            num_users: 2.min(sizes.len()),
            num_baskets: sizes.len(),
            ..Default::default()
        };
        ds.user_baskets = vec![Vec::new(); ds.num_users];
        let mut next_item = 0;
        for (b, &s) in sizes.iter().enumerate() {
            let owner = b % ds.num_users;
            ds.basket_owner.push(owner);
            ds.user_baskets[owner].push(b);
            ds.basket_items.push((next_item..next_item + s).collect());
            ds.ids.baskets.push((format!("u{owner}"), format!("b{b}")));
            next_item += s;
        }
        ds.num_items = next_item;
        ds.ids.users = (0..ds.num_users).map(|u| format!("u{u}")).collect();
        ds.ids.items = (0..ds.num_items).map(|i| format!("i{i}")).collect();
        ds
    }

    #[test]
    fn filter_threshold_is_inclusive() {
        let ds = synthetic(&[5, 30, 31]);
        let out = filter_baskets(&ds, 30).unwrap();
        assert_eq!(out.num_baskets, 2);
        assert_eq!(out.basket_items[0].len(), 30);
        out.check_invariants().unwrap();
    }

    #[test]
    fn filter_min_one_is_identity_up_to_remap() {
        let ds = synthetic(&[3, 4]);
        let out = filter_baskets(&ds, 1).unwrap();
        assert_eq!(out.stats(), ds.stats());
    }

    #[test]
    fn filter_is_idempotent() {
        let ds = synthetic(&[5, 12, 30, 2]);
        let once = filter_baskets(&ds, 5).unwrap();
        let twice = filter_baskets(&once, 5).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn filter_to_nothing_errors() {
        let ds = synthetic(&[3, 4]);
        assert!(matches!(filter_baskets(&ds, 100), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn split_ten_items_at_point_eight() {
        let ds = synthetic(&[10]);
        let split = split_within_basket(&ds, 0.8, 1);
        assert_eq!(split.train.basket_items[0].len(), 8);
        assert_eq!(split.heldout[0].len(), 2);
    }

    #[test]
    fn split_two_items_keeps_both_in_train() {
        let ds = synthetic(&[2]);
        let split = split_within_basket(&ds, 0.8, 1);
        assert_eq!(split.train.basket_items[0].len(), 2);
        assert!(split.heldout[0].is_empty());
        assert_eq!(split.num_evaluable(), 0);
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let ds = synthetic(&[10, 7, 31]);
        let a = split_within_basket(&ds, 0.8, 3);
        let b = split_within_basket(&ds, 0.8, 3);
        assert_eq!(a, b);
        let c = split_within_basket(&ds, 0.8, 4);
        assert_ne!(a, c);
    }

    #[test]
    fn train_count_never_rounds_up_exact_multiples() {
        for size in 1..=2000 {
            let n = train_count(size, 0.8);
            let exact = (0.8f64 * size as f64).ceil();
            // train fraction of 4/5: the exact ceiling is (4*size + 4) / 5 integer-div
            let expected = (4 * size).div_ceil(5);
            assert_eq!(n, expected, "size={size} exact={exact}");
        }
    }

    proptest! {
        #[test]
        fn split_partitions_every_basket(sizes in prop::collection::vec(1usize..40, 1..12), seed in 0u64..500) {
            let ds = synthetic(&sizes);
            let split = split_within_basket(&ds, 0.8, seed);
            for b in 0..ds.num_baskets {
                let mut union: Vec<usize> = split.train.basket_items[b]
                    .iter()
                    .chain(&split.heldout[b])
                    .copied()
                    .collect();
                union.sort_unstable();
                let mut orig = ds.basket_items[b].clone();
                orig.sort_unstable();
                prop_assert_eq!(union, orig);
                for i in &split.train.basket_items[b] {
                    prop_assert!(!split.heldout[b].contains(i));
                }
                prop_assert!(!split.train.basket_items[b].is_empty());
            }
        }

        #[test]
        fn remap_roundtrips_raw_ids(sizes in prop::collection::vec(1usize..20, 1..10), min in 1usize..10) {
            let ds = synthetic(&sizes);
            prop_assume!(sizes.iter().any(|&s| s >= min));
            let out = filter_baskets(&ds, min).unwrap();
            // every surviving dense id maps to a raw id that the original maps back
            for (new_u, raw) in out.ids.users.iter().enumerate() {
                let old_u = ds.ids.users.iter().position(|r| r == raw).unwrap();
                prop_assert_eq!(&ds.ids.users[old_u], &out.ids.users[new_u]);
            }
            for raw in &out.ids.items {
                prop_assert!(ds.ids.items.contains(raw));
            }
            out.check_invariants().unwrap();
        }
    }
}
