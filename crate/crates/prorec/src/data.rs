//! Dataset loading, random splitting, controlled noise injection, popularity
//! marginals, and the bundled synthetic generator.
//!
//! External IDs are strings mapped to dense indices in first-seen order;
//! everything downstream works on indices. Noise is injected by *adding*
//! previously-absent pairs as false positives, because the relabel mechanism
//! operates on positives only — deleted positives could never be flagged.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::InteractionMatrix;
use crate::transport::Marginals;

/// Supported on-disk dataset encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    /// `user<TAB>item[<TAB>value]` per line; value > 0 (or absent) is a
    /// positive, value ≤ 0 is dropped.
    TsvTriplet,
}

/// A named interaction dataset with external-ID ↔ index maps.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub interactions: InteractionMatrix,
    /// External user IDs by dense index.
    pub user_ids: Vec<String>,
    /// External item IDs by dense index.
    pub item_ids: Vec<String>,
    pub user_lookup: HashMap<String, u32>,
    pub item_lookup: HashMap<String, u32>,
}

impl Dataset {
    /// Wraps an index-level matrix, synthesizing `u{i}` / `i{j}` IDs.
    pub fn from_matrix(name: &str, interactions: InteractionMatrix) -> Self {
        let user_ids: Vec<String> = (0..interactions.n_users()).map(|i| format!("u{i}")).collect();
        let item_ids: Vec<String> = (0..interactions.n_items()).map(|j| format!("i{j}")).collect();
        let user_lookup = user_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        let item_lookup = item_ids
            .iter()
            .enumerate()
            .map(|(j, id)| (id.clone(), j as u32))
            .collect();
        Dataset {
            name: name.to_string(),
            interactions,
            user_ids,
            item_ids,
            user_lookup,
            item_lookup,
        }
    }
}

/// Which fold an interaction landed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fold {
    Train,
    Val,
    Test,
}

impl Fold {
    pub fn as_str(&self) -> &'static str {
        match self {
            Fold::Train => "train",
            Fold::Val => "val",
            Fold::Test => "test",
        }
    }
}

/// Random split proportions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitScheme {
    /// 4:1 train/test.
    FourToOne,
    /// 5:2:3 train/val/test.
    FiveTwoThree,
}

impl SplitScheme {
    pub fn fractions(&self) -> Vec<(Fold, f64)> {
        match self {
            SplitScheme::FourToOne => vec![(Fold::Train, 0.8), (Fold::Test, 0.2)],
            SplitScheme::FiveTwoThree => vec![
                (Fold::Train, 0.5),
                (Fold::Val, 0.2),
                (Fold::Test, 0.3),
            ],
        }
    }

    pub fn has_val(&self) -> bool {
        matches!(self, SplitScheme::FiveTwoThree)
    }
}

/// Split output: fold matrices all share the original dimensions.
#[derive(Debug, Clone)]
pub struct SplitResult {
    pub train: InteractionMatrix,
    pub val: Option<InteractionMatrix>,
    pub test: InteractionMatrix,
    /// Users left without a training interaction after the fix-up passes.
    pub trainless_users: Vec<u32>,
}

/// Record of injected false-positive pairs.
#[derive(Debug, Clone)]
pub struct NoiseLedger {
    /// Injected (user, item) pairs, ascending.
    pub injected: Vec<(u32, u32)>,
    /// Requested noise level.
    pub ratio: f64,
}

/// Parses a TSV triplet stream into a dataset.
///
/// Values ≤ 0 are dropped; duplicate pairs collapse to one positive with a
/// single warning counting them. IDs get dense indices in first-seen order.
pub fn read_interactions<R: Read>(reader: R, name: &str) -> Result<Dataset> {
    let mut user_ids: Vec<String> = Vec::new();
    let mut item_ids: Vec<String> = Vec::new();
    let mut user_lookup: HashMap<String, u32> = HashMap::new();
    let mut item_lookup: HashMap<String, u32> = HashMap::new();
    let mut pairs: Vec<(u32, u32)> = Vec::new();
    let mut seen: HashSet<(u32, u32)> = HashSet::new();
    let mut duplicates = 0usize;
    let mut dropped_nonpositive = 0usize;

    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 2 or 3 tab-separated fields, got {}", fields.len()),
            });
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty user or item field".into(),
            });
        }
        let value: f64 = match fields.get(2) {
            Some(raw) => raw.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("value '{}' is not a number", raw),
            })?,
            None => 1.0,
        };
        if !value.is_finite() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("value {value} is not finite"),
            });
        }
        if value <= 0.0 {
            dropped_nonpositive += 1;
            continue;
        }
        let u = *user_lookup.entry(fields[0].to_string()).or_insert_with(|| {
            user_ids.push(fields[0].to_string());
            (user_ids.len() - 1) as u32
        });
        let i = *item_lookup.entry(fields[1].to_string()).or_insert_with(|| {
            item_ids.push(fields[1].to_string());
            (item_ids.len() - 1) as u32
        });
        if seen.insert((u, i)) {
            pairs.push((u, i));
        } else {
            duplicates += 1;
        }
    }

    if duplicates > 0 {
        log::warn!("collapsed {duplicates} duplicate interaction line(s)");
    }
    if dropped_nonpositive > 0 {
        log::warn!("dropped {dropped_nonpositive} non-positive-valued line(s)");
    }
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let interactions = InteractionMatrix::from_pairs(user_ids.len(), item_ids.len(), &pairs)?;
    Ok(Dataset {
        name: name.to_string(),
        interactions,
        user_ids,
        item_ids,
        user_lookup,
        item_lookup,
    })
}

/// Loads a dataset file; see [`read_interactions`] for the format rules.
pub fn load_interactions(path: &Path, _format: DataFormat) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    read_interactions(file, &name)
}

/// Largest-remainder apportionment of `total` into parts proportional to
/// `fractions` (assumed to sum to 1). Ties go to the earlier part.
fn apportion(total: usize, fractions: &[f64]) -> Vec<usize> {
    let mut counts: Vec<usize> = Vec::with_capacity(fractions.len());
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(fractions.len());
    let mut assigned = 0usize;
    for (k, &f) in fractions.iter().enumerate() {
        let exact = f * total as f64;
        let floor = exact.floor() as usize;
        counts.push(floor);
        assigned += floor;
        remainders.push((k, exact - floor as f64));
    }
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for &(k, _) in remainders.iter().take(total - assigned) {
        counts[k] += 1;
    }
    counts
}

/// Randomly partitions interactions into folds with exact global proportions
/// (largest-remainder rounding). After assignment, users with no training
/// interaction are fixed by swapping with users holding ≥ 2 training
/// interactions, up to 10 redraw attempts per user; leftovers are warned and
/// reported in `trainless_users`.
pub fn split_random(ds: &Dataset, scheme: SplitScheme, seed: u64) -> Result<SplitResult> {
    let x = &ds.interactions;
    if x.nnz() == 0 {
        return Err(Error::EmptyDataset);
    }
    let pairs: Vec<(u32, u32)> = x.iter().map(|(u, i, _)| (u, i)).collect();
    let fold_specs = scheme.fractions();
    let fractions: Vec<f64> = fold_specs.iter().map(|&(_, f)| f).collect();
    let counts = apportion(pairs.len(), &fractions);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);

    let mut assignment: Vec<Fold> = vec![Fold::Train; pairs.len()];
    let mut cursor = 0usize;
    for (&(fold, _), &count) in fold_specs.iter().zip(counts.iter()) {
        for &idx in order.iter().skip(cursor).take(count) {
            assignment[idx] = fold;
        }
        cursor += count;
    }

    // Fix-up: every user keeps at least one training interaction when the
    // global train budget allows it.
    let mut train_count: Vec<usize> = vec![0; x.n_users()];
    let mut user_pairs: Vec<Vec<usize>> = vec![Vec::new(); x.n_users()];
    for (idx, &(u, _)) in pairs.iter().enumerate() {
        user_pairs[u as usize].push(idx);
        if assignment[idx] == Fold::Train {
            train_count[u as usize] += 1;
        }
    }
    let mut trainless_users = Vec::new();
    for u in 0..x.n_users() {
        if user_pairs[u].is_empty() || train_count[u] > 0 {
            continue;
        }
        let mut fixed = false;
        for _ in 0..10 {
            let own = user_pairs[u][rng.gen_range(0..user_pairs[u].len())];
            // Partner: a random training interaction of a user who can spare one.
            let donors: Vec<usize> = (0..pairs.len())
                .filter(|&idx| {
                    assignment[idx] == Fold::Train
                        && train_count[pairs[idx].0 as usize] >= 2
                })
                .collect();
            if donors.is_empty() {
                break;
            }
            let donor = donors[rng.gen_range(0..donors.len())];
            let donor_user = pairs[donor].0 as usize;
            assignment.swap(own, donor);
            train_count[u] += 1;
            train_count[donor_user] -= 1;
            fixed = true;
            break;
        }
        if !fixed {
            trainless_users.push(u as u32);
        }
    }
    if !trainless_users.is_empty() {
        log::warn!(
            "{} user(s) kept no training interaction after fix-up",
            trainless_users.len()
        );
    }

    let collect_fold = |fold: Fold| -> Result<InteractionMatrix> {
        let subset: Vec<(u32, u32)> = pairs
            .iter()
            .zip(assignment.iter())
            .filter(|&(_, &a)| a == fold)
            .map(|(&p, _)| p)
            .collect();
        InteractionMatrix::from_pairs(x.n_users(), x.n_items(), &subset)
    };
    let train = collect_fold(Fold::Train)?;
    let val = if scheme.has_val() {
        Some(collect_fold(Fold::Val)?)
    } else {
        None
    };
    let test = collect_fold(Fold::Test)?;
    Ok(SplitResult {
        train,
        val,
        test,
        trainless_users,
    })
}

/// Adds `round(ratio · nnz)` uniformly random absent pairs as positives.
///
/// Sampling is rejection-based while the matrix is sparse; when the combined
/// density would pass 50% (or rejection stalls), it switches to enumerating
/// the absent pairs and sampling without replacement.
pub fn inject_noise(
    train: &InteractionMatrix,
    ratio: f64,
    seed: u64,
) -> Result<(InteractionMatrix, NoiseLedger)> {
    if !ratio.is_finite() || ratio <= 0.0 || ratio >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "noise ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let m = train.n_users();
    let n = train.n_items();
    let total_cells = m * n;
    let k = (ratio * train.nnz() as f64).round() as usize;
    let available = total_cells - train.nnz();
    if k > available {
        return Err(Error::Capacity {
            requested: k,
            available,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: HashSet<(u32, u32)> = HashSet::with_capacity(k);
    let dense_after = (train.nnz() + k) as f64 > 0.5 * total_cells as f64;
    if !dense_after {
        let max_attempts = 100usize.saturating_mul(k.max(1));
        let mut attempts = 0usize;
        while chosen.len() < k && attempts < max_attempts {
            attempts += 1;
            let u = rng.gen_range(0..m) as u32;
            let i = rng.gen_range(0..n) as u32;
            if train.get(u as usize, i as usize) == 0.0 {
                chosen.insert((u, i));
            }
        }
    }
    if chosen.len() < k {
        // Dense regime or stalled rejection: enumerate the complement and
        // take a random sample without replacement.
        chosen.clear();
        let mut absent: Vec<(u32, u32)> = Vec::with_capacity(available);
        for u in 0..m {
            let row = train.row(u);
            let mut it = row.iter().peekable();
            for i in 0..n as u32 {
                if it.peek().map(|&&(j, _)| j) == Some(i) {
                    it.next();
                } else {
                    absent.push((u as u32, i));
                }
            }
        }
        let (sampled, _) = absent.partial_shuffle(&mut rng, k);
        chosen.extend(sampled.iter().copied());
    }

    let mut injected: Vec<(u32, u32)> = chosen.into_iter().collect();
    injected.sort_unstable();
    let mut all_pairs: Vec<(u32, u32)> = train.iter().map(|(u, i, _)| (u, i)).collect();
    all_pairs.extend(injected.iter().copied());
    let noisy = InteractionMatrix::from_pairs(m, n, &all_pairs)?;
    Ok((noisy, NoiseLedger { injected, ratio }))
}

/// Interaction-count marginals: `qᵢ` = user i's positives / total, `pⱼ` =
/// item j's positives / total.
///
/// Zero-interaction users/items receive a small smoothing mass
/// `ε = 1 / (10 · nnz)` before normalization, so downstream solvers never see
/// an exactly-zero marginal; the affected indices are reported on the result.
pub fn popularity_marginals(x: &InteractionMatrix) -> Result<Marginals> {
    if x.nnz() == 0 {
        return Err(Error::EmptyDataset);
    }
    let eps = 1.0 / (10.0 * x.nnz() as f64);
    let mut q = Array1::zeros(x.n_users());
    let mut p = Array1::zeros(x.n_items());
    for (u, i, _) in x.iter() {
        q[u as usize] += 1.0;
        p[i as usize] += 1.0;
    }
    let mut smoothed_users = Vec::new();
    let mut smoothed_items = Vec::new();
    for (idx, v) in q.iter_mut().enumerate() {
        if *v == 0.0 {
            *v = eps;
            smoothed_users.push(idx as u32);
        }
    }
    for (idx, v) in p.iter_mut().enumerate() {
        if *v == 0.0 {
            *v = eps;
            smoothed_items.push(idx as u32);
        }
    }
    let q_sum = q.sum();
    let p_sum = p.sum();
    q.mapv_inplace(|v| v / q_sum);
    p.mapv_inplace(|v| v / p_sum);
    let mut marginals = Marginals::new(p, q)?;
    marginals.smoothed_users = smoothed_users;
    marginals.smoothed_items = smoothed_items;
    Ok(marginals)
}

/// Configuration for the bundled rank-structured synthetic generator.
#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    /// Interactions per user are drawn uniformly from this inclusive range.
    pub min_degree: usize,
    pub max_degree: usize,
    /// Probability that each interaction stays inside the user's cluster.
    pub in_cluster_prob: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_users: 200,
            n_items: 300,
            n_clusters: 3,
            min_degree: 10,
            max_degree: 30,
            in_cluster_prob: 0.9,
            seed: 42,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_items == 0 {
            return Err(Error::InvalidArgument(
                "synthetic dimensions must be positive".into(),
            ));
        }
        if self.n_clusters == 0 || self.n_clusters > self.n_items {
            return Err(Error::InvalidArgument(format!(
                "n_clusters must lie in [1, n_items], got {}",
                self.n_clusters
            )));
        }
        if self.min_degree == 0 || self.min_degree > self.max_degree {
            return Err(Error::InvalidArgument(format!(
                "degree range [{}, {}] is invalid",
                self.min_degree, self.max_degree
            )));
        }
        if self.max_degree > self.n_items {
            return Err(Error::InvalidArgument(format!(
                "max_degree {} exceeds n_items {}",
                self.max_degree, self.n_items
            )));
        }
        if !(0.0..=1.0).contains(&self.in_cluster_prob) {
            return Err(Error::InvalidArgument(format!(
                "in_cluster_prob must lie in [0, 1], got {}",
                self.in_cluster_prob
            )));
        }
        Ok(())
    }
}

/// Generates a low-rank clustered dataset: user `i` belongs to cluster
/// `i mod n_clusters`, items are partitioned into equal cluster blocks, and
/// each of the user's `degree` interactions lands in-cluster with probability
/// `in_cluster_prob` (uniform otherwise).
pub fn synthetic_dataset(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let block = cfg.n_items / cfg.n_clusters;
    let mut pairs: Vec<(u32, u32)> = Vec::new();
    let mut seen: HashSet<(u32, u32)> = HashSet::new();
    for u in 0..cfg.n_users {
        let cluster = u % cfg.n_clusters;
        let lo = cluster * block;
        let hi = if cluster + 1 == cfg.n_clusters {
            cfg.n_items
        } else {
            lo + block
        };
        let degree = rng.gen_range(cfg.min_degree..=cfg.max_degree);
        let mut placed = 0usize;
        let mut attempts = 0usize;
        while placed < degree && attempts < 100 * degree.max(1) {
            attempts += 1;
            let item = if rng.gen_bool(cfg.in_cluster_prob) {
                rng.gen_range(lo..hi)
            } else {
                rng.gen_range(0..cfg.n_items)
            };
            if seen.insert((u as u32, item as u32)) {
                pairs.push((u as u32, item as u32));
                placed += 1;
            }
        }
    }
    let interactions = InteractionMatrix::from_pairs(cfg.n_users, cfg.n_items, &pairs)?;
    Ok(Dataset::from_matrix("synthetic", interactions))
}

/// Writes interactions as `user<TAB>item<TAB>1` using the dataset's external IDs.
pub fn write_interactions_tsv<W: Write>(ds: &Dataset, mut writer: W) -> Result<()> {
    for (u, i, _) in ds.interactions.iter() {
        writeln!(
            writer,
            "{}\t{}\t1",
            ds.user_ids[u as usize], ds.item_ids[i as usize]
        )?;
    }
    Ok(())
}

/// Writes a split manifest: `user<TAB>item<TAB>fold` per interaction.
pub fn write_split_tsv<W: Write>(ds: &Dataset, split: &SplitResult, mut writer: W) -> Result<()> {
    let mut folds: Vec<(&InteractionMatrix, Fold)> = vec![(&split.train, Fold::Train)];
    if let Some(val) = &split.val {
        folds.push((val, Fold::Val));
    }
    folds.push((&split.test, Fold::Test));
    for (matrix, fold) in folds {
        for (u, i, _) in matrix.iter() {
            writeln!(
                writer,
                "{}\t{}\t{}",
                ds.user_ids[u as usize],
                ds.item_ids[i as usize],
                fold.as_str()
            )?;
        }
    }
    Ok(())
}

/// Writes the noise ledger: `user<TAB>item` per injected pair (dense indices).
pub fn write_ledger_tsv<W: Write>(ledger: &NoiseLedger, mut writer: W) -> Result<()> {
    for &(u, i) in &ledger.injected {
        writeln!(writer, "{u}\t{i}")?;
    }
    Ok(())
}
