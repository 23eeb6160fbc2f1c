//! Twin-pair synthetic dataset for the cold-start experiment.
//!
//! Items come in pairs `(a, b)` that share one title. Pairs are grouped into
//! clusters, and every user walks one cluster cyclically, picking a twin at
//! each step. For a subset of "cold" pairs the `b` twin is never visited
//! except as the final item of some users, so it is unseen in training and
//! only reachable through its title.

use std::collections::HashMap;
use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Interaction, InteractionLog};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub users: usize,
    pub pairs: usize,
    pub clusters: usize,
    pub cold_pairs: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Share of users whose final item is a cold twin.
    pub cold_user_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 2000,
            pairs: 250,
            clusters: 25,
            cold_pairs: 50,
            min_len: 8,
            max_len: 15,
            cold_user_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn pairs_per_cluster(&self) -> usize {
        self.pairs / self.clusters
    }

    fn validate(&self) -> Result<()> {
        if self.clusters == 0 || !self.pairs.is_multiple_of(self.clusters) {
            return Err(Error::config("pairs must be a positive multiple of clusters"));
        }
        if self.cold_pairs == 0 || !self.pairs.is_multiple_of(self.cold_pairs) || self.cold_pairs > self.pairs / 2 {
            return Err(Error::config("cold_pairs must divide pairs and cover at most half of them"));
        }
        if (self.pairs / self.cold_pairs) > self.pairs_per_cluster()
            || !self.pairs_per_cluster().is_multiple_of(self.pairs / self.cold_pairs)
        {
            return Err(Error::config("every cluster must hold the same number of cold pairs"));
        }
        if self.min_len < 3 || self.max_len < self.min_len {
            return Err(Error::config("sequence lengths must satisfy 3 <= min_len <= max_len"));
        }
        if !(0.0..=1.0).contains(&self.cold_user_fraction) {
            return Err(Error::config("cold_user_fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn is_cold(&self, pair: usize) -> bool {
        let stride = self.pairs / self.cold_pairs;
        pair % stride == stride - 1
    }
}

pub fn item_id(pair: usize, twin_b: bool) -> String {
    format!("p{pair:03}{}", if twin_b { 'b' } else { 'a' })
}

fn random_word(r: &mut rng::Rng, len: usize) -> String {
    const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
    (0..len).map(|_| LETTERS[r.gen_range(0..LETTERS.len())] as char).collect()
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub log: InteractionLog,
    pub titles: HashMap<String, String>,
    /// External ids of the cold twins.
    pub cold_items: Vec<String>,
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let per_cluster = cfg.pairs_per_cluster();

    let mut title_rng = rng::stream(cfg.seed, rng::TAG_SYNTH, 0, 0);
    let mut titles = HashMap::new();
    for pair in 0..cfg.pairs {
        let title = (0..3).map(|_| random_word(&mut title_rng, 7)).collect::<Vec<_>>().join(" ");
        titles.insert(item_id(pair, false), title.clone());
        titles.insert(item_id(pair, true), title);
    }
    let cold_items = (0..cfg.pairs).filter(|&p| cfg.is_cold(p)).map(|p| item_id(p, true)).collect();

    let mut records = Vec::new();
    for user in 0..cfg.users {
        let mut r = rng::stream(cfg.seed, rng::TAG_SYNTH, 1, user as u64);
        let len = r.gen_range(cfg.min_len..=cfg.max_len);
        let cluster = r.gen_range(0..cfg.clusters);
        let base = cluster * per_cluster;
        let cold_user = r.gen_bool(cfg.cold_user_fraction);
        let start = if cold_user {
            let cold_slots: Vec<usize> = (0..per_cluster).filter(|&k| cfg.is_cold(base + k)).collect();
            let end = cold_slots[r.gen_range(0..cold_slots.len())];
            (end + per_cluster * len - (len - 1)) % per_cluster
        } else {
            r.gen_range(0..per_cluster)
        };
        for step in 0..len {
            let pair = base + (start + step) % per_cluster;
            let last = step + 1 == len;
            let twin_b = if cfg.is_cold(pair) {
                cold_user && last
            } else {
                r.gen_bool(0.5)
            };
            records.push(Interaction {
                user: format!("u{user:05}"),
                item: item_id(pair, twin_b),
                timestamp: step as i64,
            });
        }
    }
    Ok(SynthData {
        log: InteractionLog { records },
        titles,
        cold_items,
    })
}

impl SynthData {
    pub fn write_interactions<W: Write>(&self, w: &mut W) -> Result<()> {
        for rec in &self.log.records {
            writeln!(w, "{}\t{}\t{}", rec.user, rec.item, rec.timestamp)?;
        }
        Ok(())
    }

    pub fn write_titles<W: Write>(&self, w: &mut W) -> Result<()> {
        let mut ids: Vec<&String> = self.titles.keys().collect();
        ids.sort();
        for id in ids {
            writeln!(w, "{id}\t{}", self.titles[id])?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{preprocess, split_leave_one_out, train_frequency, PreprocessOptions};
    use std::collections::HashSet;

    #[test]
    fn cold_twins_only_appear_as_final_items() {
        let cfg = SynthConfig { users: 300, ..Default::default() };
        let data = generate(&cfg).unwrap();
        assert_eq!(data.cold_items.len(), 50);
        let cold: HashSet<&str> = data.cold_items.iter().map(String::as_str).collect();
        let mut by_user: HashMap<&str, Vec<&str>> = HashMap::new();
        for rec in &data.log.records {
            by_user.entry(&rec.user).or_default().push(&rec.item);
        }
        let mut cold_users = 0;
        for seq in by_user.values() {
            assert!(seq[..seq.len() - 1].iter().all(|i| !cold.contains(i)));
            cold_users += cold.contains(seq[seq.len() - 1]) as usize;
        }
        assert!(cold_users > 30 && cold_users < 90, "{cold_users}");
    }

    #[test]
    fn cold_targets_have_zero_train_frequency() {
        let data = generate(&SynthConfig { users: 400, ..Default::default() }).unwrap();
        let opts = PreprocessOptions { min_item_count: 1, min_user_len: 3, require_title: true };
        let split = split_leave_one_out(preprocess(&data.log, &data.titles, opts).unwrap()).unwrap();
        let freq = train_frequency(&split);
        for id in &data.cold_items {
            if let Some(idx) = split.corpus().item_index(id) {
                assert_eq!(freq.get(idx), 0);
            }
        }
    }

    #[test]
    fn twins_share_titles_and_generation_is_deterministic() {
        let cfg = SynthConfig { users: 50, ..Default::default() };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.titles[&item_id(7, false)], a.titles[&item_id(7, true)]);
        assert_ne!(a.titles[&item_id(7, false)], a.titles[&item_id(8, false)]);
    }

    #[test]
    fn rejects_uneven_layouts() {
        assert!(generate(&SynthConfig { clusters: 7, ..Default::default() }).is_err());
        assert!(generate(&SynthConfig { min_len: 2, ..Default::default() }).is_err());
    }
}
