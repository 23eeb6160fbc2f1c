//! Sampled-negative ranking evaluation.
//!
//! For every repeat and user, `num_negatives` distinct items outside the
//! user's full sequence (and distinct from the target) are drawn from a
//! stream keyed by `(seed, repeat, user)`. The target is ranked among them
//! pessimistically: every negative scoring greater than *or equal to* the
//! target is placed ahead of it.

use std::collections::{BTreeMap, HashSet};

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::{train_frequency, FrequencyTable, SplitCorpus, Target};
use crate::error::{Error, Result};
use crate::net::{relevance_scores, user_representation, ModelParams};
use crate::rng;

/// Number of explicit frequency buckets; the last bucket collects `>= 10`.
pub const BUCKETS: usize = 11;

fn d_k() -> usize {
    10
}
fn d_negatives() -> usize {
    100
}
fn d_repeats() -> usize {
    5
}
fn d_target() -> Target {
    Target::Test
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    #[serde(default = "d_k")]
    pub k: usize,
    #[serde(default = "d_negatives")]
    pub num_negatives: usize,
    #[serde(default = "d_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_target")]
    pub target: Target,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: d_k(),
            num_negatives: d_negatives(),
            repeats: d_repeats(),
            seed: 0,
            target: d_target(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.num_negatives + 1 {
            return Err(Error::config("k must lie in 1..=num_negatives + 1"));
        }
        if self.repeats == 0 {
            return Err(Error::config("repeats must be at least 1"));
        }
        Ok(())
    }
}

/// Scores candidate items given a user's history. Implementations must be
/// pure.
pub trait Scorer: Sync {
    fn score(&self, history: &[u32], candidates: &[u32]) -> Result<Vec<f64>>;

    fn name(&self) -> &str;
}

pub struct ModelScorer<'a> {
    pub params: &'a ModelParams,
}

impl Scorer for ModelScorer<'_> {
    fn score(&self, history: &[u32], candidates: &[u32]) -> Result<Vec<f64>> {
        let f = user_representation(self.params, history)?;
        Ok(relevance_scores(&f, self.params, Some(candidates)))
    }

    fn name(&self) -> &str {
        "model"
    }
}

pub struct TopPopScorer<'a> {
    pub freq: &'a FrequencyTable,
}

impl Scorer for TopPopScorer<'_> {
    fn score(&self, _history: &[u32], candidates: &[u32]) -> Result<Vec<f64>> {
        Ok(toppop_scores(self.freq, candidates))
    }

    fn name(&self) -> &str {
        "toppop"
    }
}

/// Training popularity of each candidate.
pub fn toppop_scores(freq: &FrequencyTable, candidates: &[u32]) -> Vec<f64> {
    candidates.iter().map(|&i| freq.get(i) as f64).collect()
}

/// `1 + #{negatives scoring >= target}`; `scores[0]` is the target.
pub fn pessimistic_rank(scores: &[f64]) -> u32 {
    let target = scores[0];
    1 + scores[1..].iter().filter(|&&s| s >= target).count() as u32
}

pub fn ndcg_at(rank: u32, k: usize) -> f64 {
    if rank as usize <= k {
        1.0 / (rank as f64 + 1.0).log2()
    } else {
        0.0
    }
}

pub fn hit_at(rank: u32, k: usize) -> f64 {
    if rank as usize <= k {
        1.0
    } else {
        0.0
    }
}

/// Draws the evaluation negatives for one `(repeat, user)` pair.
pub fn sample_eval_negatives(
    seed: u64,
    repeat: usize,
    user: usize,
    excluded: &HashSet<u32>,
    vocab_size: usize,
    count: usize,
) -> Option<Vec<u32>> {
    let blocked = excluded
        .iter()
        .filter(|&&i| i >= 1 && i as usize <= vocab_size)
        .count();
    let available = vocab_size - blocked;
    if available < count {
        return None;
    }
    let mut r = rng::stream(seed, rng::TAG_EVAL, repeat as u64, user as u64);
    if available <= 2 * count {
        let legal: Vec<u32> = (1..=vocab_size as u32).filter(|i| !excluded.contains(i)).collect();
        return Some(index::sample(&mut r, legal.len(), count).into_iter().map(|k| legal[k]).collect());
    }
    let mut chosen = Vec::with_capacity(count);
    let mut seen = HashSet::with_capacity(count);
    while chosen.len() < count {
        let item = r.gen_range(1..=vocab_size as u32);
        if !excluded.contains(&item) && seen.insert(item) {
            chosen.push(item);
        }
    }
    Some(chosen)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepeatMetrics {
    pub hr: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketMetrics {
    pub count: usize,
    pub hr: f64,
    pub ndcg: f64,
}

pub fn bucket_label(bucket: usize) -> String {
    if bucket + 1 == BUCKETS {
        format!("{}+", BUCKETS - 1)
    } else {
        bucket.to_string()
    }
}

pub fn bucket_of(frequency: u64) -> usize {
    (frequency as usize).min(BUCKETS - 1)
}

/// Frequency buckets `0..=9, 10+`, serialised as a JSON object in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketTable(pub Vec<BucketMetrics>);

impl Serialize for BucketTable {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (b, m) in self.0.iter().enumerate() {
            map.serialize_entry(&bucket_label(b), m)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for BucketTable {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = BTreeMap::<String, BucketMetrics>::deserialize(d)?;
        let mut out = Vec::with_capacity(BUCKETS);
        for b in 0..BUCKETS {
            let label = bucket_label(b);
            let m = raw
                .get(&label)
                .cloned()
                .ok_or_else(|| serde::de::Error::custom(format!("missing bucket {label}")))?;
            out.push(m);
        }
        Ok(BucketTable(out))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub scorer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_hash: Option<String>,
    pub users: usize,
    pub items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub per_repeat: Vec<RepeatMetrics>,
    pub mean_hr: f64,
    pub mean_ndcg: f64,
    pub buckets: BucketTable,
    /// `[repeat][user]` target ranks.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_user_ranks: Vec<Vec<u32>>,
    /// Internal index of each user's target item.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub targets: Vec<u32>,
    pub metadata: ReportMetadata,
}

impl EvalReport {
    /// Drops the per-user detail before serialisation.
    pub fn without_per_user(mut self) -> Self {
        self.per_user_ranks.clear();
        self.targets.clear();
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn evaluate(scorer: &dyn Scorer, split: &SplitCorpus, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let vocab = split.item_count();
    let corpus = split.corpus();
    let users = split.users();

    let per_user: Vec<Vec<u32>> = users
        .par_iter()
        .enumerate()
        .map(|(u, us)| {
            let target = us.target(cfg.target);
            let history = us.history(cfg.target);
            let mut excluded: HashSet<u32> = corpus.sequence(u).iter().copied().collect();
            excluded.insert(target);
            (0..cfg.repeats)
                .map(|r| {
                    let negatives = sample_eval_negatives(cfg.seed, r, u, &excluded, vocab, cfg.num_negatives)
                        .ok_or_else(|| Error::InsufficientNegatives {
                            user: corpus.user_id(u).to_string(),
                            available: vocab - excluded.len().min(vocab),
                            needed: cfg.num_negatives,
                        })?;
                    debug_assert!(negatives.iter().all(|n| !excluded.contains(n)));
                    let mut candidates = Vec::with_capacity(negatives.len() + 1);
                    candidates.push(target);
                    candidates.extend(negatives);
                    let scores = scorer.score(&history, &candidates)?;
                    if scores.len() != candidates.len() || scores.iter().any(|s| s.is_nan()) {
                        return Err(Error::NumericalFailure { batch_index: u });
                    }
                    Ok(pessimistic_rank(&scores))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let n_users = users.len().max(1) as f64;
    let per_user_ranks: Vec<Vec<u32>> = (0..cfg.repeats)
        .map(|r| per_user.iter().map(|ranks| ranks[r]).collect())
        .collect();
    let per_repeat: Vec<RepeatMetrics> = per_user_ranks
        .iter()
        .map(|ranks| RepeatMetrics {
            hr: ranks.iter().map(|&k| hit_at(k, cfg.k)).sum::<f64>() / n_users,
            ndcg: ranks.iter().map(|&k| ndcg_at(k, cfg.k)).sum::<f64>() / n_users,
        })
        .collect();
    let mean_hr = per_repeat.iter().map(|m| m.hr).sum::<f64>() / cfg.repeats as f64;
    let mean_ndcg = per_repeat.iter().map(|m| m.ndcg).sum::<f64>() / cfg.repeats as f64;
    let targets: Vec<u32> = users.iter().map(|u| u.target(cfg.target)).collect();

    let mut report = EvalReport {
        config: *cfg,
        per_repeat,
        mean_hr,
        mean_ndcg,
        buckets: BucketTable(Vec::new()),
        per_user_ranks,
        targets,
        metadata: ReportMetadata {
            scorer: scorer.name().to_string(),
            model_hash: None,
            users: users.len(),
            items: vocab,
        },
    };
    report.buckets = coldstart_report(&report, &train_frequency(split))?;
    Ok(report)
}

/// Groups users by the training frequency of their target item.
pub fn coldstart_report(report: &EvalReport, freq: &FrequencyTable) -> Result<BucketTable> {
    let users = report.targets.len();
    if report.per_user_ranks.len() != report.config.repeats
        || report.per_user_ranks.iter().any(|r| r.len() != users)
    {
        return Err(Error::format("report carries no per-user ranks"));
    }
    let k = report.config.k;
    let repeats = report.config.repeats as f64;
    let mut acc = vec![(0usize, 0.0f64, 0.0f64); BUCKETS];
    for (u, &target) in report.targets.iter().enumerate() {
        let b = bucket_of(freq.get(target));
        acc[b].0 += 1;
        for ranks in &report.per_user_ranks {
            acc[b].1 += hit_at(ranks[u], k);
            acc[b].2 += ndcg_at(ranks[u], k);
        }
    }
    Ok(BucketTable(
        acc.into_iter()
            .map(|(count, hr, ndcg)| {
                let denom = count as f64 * repeats;
                BucketMetrics {
                    count,
                    hr: if count == 0 { 0.0 } else { hr / denom },
                    ndcg: if count == 0 { 0.0 } else { ndcg / denom },
                }
            })
            .collect(),
    ))
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sided Welch t-test with Welch-Satterthwaite degrees of freedom.
///
/// When both samples have zero variance the p-value is 1 for equal means and
/// 0 otherwise.
pub fn welch_pvalue(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::config("Welch's test needs at least two values per sample"));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Ok(if ma == mb { 1.0 } else { 0.0 });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::config(e.to_string()))?;
    Ok((2.0 * dist.sf(t.abs())).clamp(0.0, 1.0))
}
