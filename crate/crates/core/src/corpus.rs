//! Interaction logs, preprocessing, leave-one-out splits and dataset
//! statistics.
//!
//! Binary corpus layout (all integers little-endian):
//!
//! ```text
//! magic        "SIMREC-CORPUS\x01"
//! u32          item count |V|
//! |V| x        str external item id, u8 has_title, [str title]
//! u32          user count
//! users x      str external user id, u32 length, length x u32 item index
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8 bytes. Item `k` of the list
//! has internal index `k + 1`; index 0 is reserved for padding. A split is
//! not stored: it is a pure function of the corpus.

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};

use crate::binio;
use crate::error::{Error, Result};

pub const CORPUS_MAGIC: &[u8] = b"SIMREC-CORPUS\x01";

/// Item index reserved for sequence padding.
pub const PAD: u32 = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub timestamp: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InteractionLog {
    pub records: Vec<Interaction>,
}

impl InteractionLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Parses `user_id<TAB>item_id<TAB>timestamp` lines.
pub fn parse_interactions<R: BufRead>(reader: R) -> Result<InteractionLog> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty user or item id".into(),
            });
        }
        let timestamp = fields[2].trim().parse::<i64>().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("timestamp {:?} is not an integer", fields[2]),
        })?;
        records.push(Interaction {
            user: fields[0].to_string(),
            item: fields[1].to_string(),
            timestamp,
        });
    }
    Ok(InteractionLog { records })
}

/// Parses `item_id<TAB>title` lines. Later duplicates overwrite earlier ones.
pub fn parse_titles<R: BufRead>(reader: R) -> Result<HashMap<String, String>> {
    let mut titles = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        let (item, title) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: "expected item_id<TAB>title".into(),
        })?;
        if item.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                message: "empty item id".into(),
            });
        }
        titles.insert(item.to_string(), title.to_string());
    }
    Ok(titles)
}

/// A processed dataset: vocabulary, titles and per-user item sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    item_ids: Vec<String>,
    titles: Vec<Option<String>>,
    user_ids: Vec<String>,
    sequences: Vec<Vec<u32>>,
    item_lookup: HashMap<String, u32>,
    user_lookup: HashMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus from already-indexed parts. `item_ids[k]` and
    /// `titles[k]` describe internal item `k + 1`.
    pub fn new(
        item_ids: Vec<String>,
        titles: Vec<Option<String>>,
        user_ids: Vec<String>,
        sequences: Vec<Vec<u32>>,
    ) -> Result<Self> {
        if titles.len() != item_ids.len() {
            return Err(Error::format("titles and item ids differ in length"));
        }
        if user_ids.len() != sequences.len() {
            return Err(Error::format("user ids and sequences differ in length"));
        }
        let vocab = item_ids.len();
        for seq in &sequences {
            if let Some(&bad) = seq.iter().find(|&&i| i == PAD || i as usize > vocab) {
                return Err(Error::IndexOutOfRange { index: bad, vocab });
            }
        }
        let mut item_lookup = HashMap::with_capacity(vocab);
        for (k, id) in item_ids.iter().enumerate() {
            if item_lookup.insert(id.clone(), k as u32 + 1).is_some() {
                return Err(Error::format(format!("duplicate item id {id:?}")));
            }
        }
        let mut user_lookup = HashMap::with_capacity(user_ids.len());
        for (k, id) in user_ids.iter().enumerate() {
            if user_lookup.insert(id.clone(), k).is_some() {
                return Err(Error::format(format!("duplicate user id {id:?}")));
            }
        }
        Ok(Corpus {
            item_ids,
            titles,
            user_ids,
            sequences,
            item_lookup,
            user_lookup,
        })
    }

    /// |V|, excluding the padding index.
    pub fn item_count(&self) -> usize {
        self.item_ids.len()
    }

    pub fn user_count(&self) -> usize {
        self.user_ids.len()
    }

    pub fn interaction_count(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    pub fn sequences(&self) -> &[Vec<u32>] {
        &self.sequences
    }

    pub fn sequence(&self, user: usize) -> &[u32] {
        &self.sequences[user]
    }

    pub fn user_id(&self, user: usize) -> &str {
        &self.user_ids[user]
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_id(&self, index: u32) -> &str {
        &self.item_ids[index as usize - 1]
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn title(&self, index: u32) -> Option<&str> {
        self.titles[index as usize - 1].as_deref()
    }

    pub fn item_index(&self, external: &str) -> Option<u32> {
        self.item_lookup.get(external).copied()
    }

    pub fn user_index(&self, external: &str) -> Option<usize> {
        self.user_lookup.get(external).copied()
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_magic(w, CORPUS_MAGIC)?;
        binio::write_len(w, self.item_ids.len())?;
        for (id, title) in self.item_ids.iter().zip(&self.titles) {
            binio::write_str(w, id)?;
            match title {
                Some(t) => {
                    binio::write_u8(w, 1)?;
                    binio::write_str(w, t)?;
                }
                None => binio::write_u8(w, 0)?,
            }
        }
        binio::write_len(w, self.user_ids.len())?;
        for (id, seq) in self.user_ids.iter().zip(&self.sequences) {
            binio::write_str(w, id)?;
            binio::write_len(w, seq.len())?;
            for &item in seq {
                binio::write_u32(w, item)?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_magic(r, CORPUS_MAGIC)?;
        let item_count = binio::read_u32(r)? as usize;
        let mut item_ids = Vec::with_capacity(item_count);
        let mut titles = Vec::with_capacity(item_count);
        for _ in 0..item_count {
            item_ids.push(binio::read_str(r)?);
            titles.push(match binio::read_u8(r)? {
                0 => None,
                1 => Some(binio::read_str(r)?),
                flag => return Err(Error::format(format!("bad title flag {flag}"))),
            });
        }
        let user_count = binio::read_u32(r)? as usize;
        let mut user_ids = Vec::with_capacity(user_count);
        let mut sequences = Vec::with_capacity(user_count);
        for _ in 0..user_count {
            user_ids.push(binio::read_str(r)?);
            let len = binio::read_u32(r)? as usize;
            let mut seq = Vec::with_capacity(len);
            for _ in 0..len {
                seq.push(binio::read_u32(r)?);
            }
            sequences.push(seq);
        }
        binio::expect_eof(r)?;
        Corpus::new(item_ids, titles, user_ids, sequences)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreprocessOptions {
    /// Items with fewer raw occurrences are dropped.
    pub min_item_count: usize,
    /// Users with fewer remaining interactions are dropped.
    pub min_user_len: usize,
    pub require_title: bool,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            min_item_count: 5,
            min_user_len: 5,
            require_title: true,
        }
    }
}

/// Two-stage filter: rare (and, optionally, untitled) items first, then
/// short users. Each filter runs once.
pub fn preprocess(
    log: &InteractionLog,
    titles: &HashMap<String, String>,
    opts: PreprocessOptions,
) -> Result<Corpus> {
    if opts.min_user_len == 0 {
        return Err(Error::config("min_user_len must be at least 1"));
    }

    let mut item_counts: HashMap<&str, usize> = HashMap::new();
    for rec in &log.records {
        *item_counts.entry(rec.item.as_str()).or_default() += 1;
    }
    let item_kept = |item: &str| {
        item_counts[item] >= opts.min_item_count
            && (!opts.require_title || titles.get(item).is_some_and(|t| !t.is_empty()))
    };
    let surviving: Vec<&Interaction> = log.records.iter().filter(|r| item_kept(&r.item)).collect();

    let mut user_lens: HashMap<&str, usize> = HashMap::new();
    for rec in &surviving {
        *user_lens.entry(rec.user.as_str()).or_default() += 1;
    }
    let surviving: Vec<&Interaction> = surviving
        .into_iter()
        .filter(|r| user_lens[r.user.as_str()] >= opts.min_user_len)
        .collect();
    if surviving.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut item_ids = Vec::new();
    let mut item_lookup: HashMap<&str, u32> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut user_lookup: HashMap<&str, usize> = HashMap::new();
    // (timestamp, item) per user, in input order
    let mut events: Vec<Vec<(i64, u32)>> = Vec::new();
    for rec in surviving {
        let item = *item_lookup.entry(rec.item.as_str()).or_insert_with(|| {
            item_ids.push(rec.item.clone());
            item_ids.len() as u32
        });
        let user = *user_lookup.entry(rec.user.as_str()).or_insert_with(|| {
            user_ids.push(rec.user.clone());
            events.push(Vec::new());
            user_ids.len() - 1
        });
        events[user].push((rec.timestamp, item));
    }
    let sequences = events
        .into_iter()
        .map(|mut ev| {
            // stable: equal timestamps keep input order
            ev.sort_by_key(|&(ts, _)| ts);
            ev.into_iter().map(|(_, item)| item).collect()
        })
        .collect();
    let item_titles = item_ids.iter().map(|id| titles.get(id).cloned()).collect();
    Corpus::new(item_ids, item_titles, user_ids, sequences)
}

/// Average number of interactions per item.
pub fn density(corpus: &Corpus) -> Result<f64> {
    if corpus.item_count() == 0 {
        return Err(Error::config("density of a corpus with zero items"));
    }
    Ok(corpus.interaction_count() as f64 / corpus.item_count() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSplit {
    pub train: Vec<u32>,
    pub valid: u32,
    pub test: u32,
}

/// Which held-out item a user is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Valid,
    Test,
}

impl UserSplit {
    pub fn target(&self, target: Target) -> u32 {
        match target {
            Target::Valid => self.valid,
            Target::Test => self.test,
        }
    }

    /// The history a model conditions on when predicting `target`.
    pub fn history(&self, target: Target) -> Vec<u32> {
        let mut h = self.train.clone();
        if target == Target::Test {
            h.push(self.valid);
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitCorpus {
    corpus: Corpus,
    users: Vec<UserSplit>,
}

impl SplitCorpus {
    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn users(&self) -> &[UserSplit] {
        &self.users
    }

    pub fn item_count(&self) -> usize {
        self.corpus.item_count()
    }
}

/// Last item for testing, second-to-last for validation, the rest for
/// training.
pub fn split_leave_one_out(corpus: Corpus) -> Result<SplitCorpus> {
    let users = corpus
        .sequences()
        .iter()
        .enumerate()
        .map(|(u, seq)| {
            let n = seq.len();
            if n < 3 {
                return Err(Error::Split {
                    user: corpus.user_id(u).to_string(),
                    len: n,
                });
            }
            Ok(UserSplit {
                train: seq[..n - 2].to_vec(),
                valid: seq[n - 2],
                test: seq[n - 1],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SplitCorpus { corpus, users })
}

/// Occurrence counts over the training sequences only. Index 0 is padding
/// and always 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    counts: Vec<u64>,
}

impl FrequencyTable {
    pub fn from_sequences<'a>(item_count: usize, seqs: impl IntoIterator<Item = &'a [u32]>) -> Self {
        let mut counts = vec![0u64; item_count + 1];
        for seq in seqs {
            for &i in seq {
                counts[i as usize] += 1;
            }
        }
        FrequencyTable { counts }
    }

    pub fn get(&self, item: u32) -> u64 {
        self.counts.get(item as usize).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn item_count(&self) -> usize {
        self.counts.len() - 1
    }
}

pub fn train_frequency(split: &SplitCorpus) -> FrequencyTable {
    FrequencyTable::from_sequences(
        split.item_count(),
        split.users().iter().map(|u| u.train.as_slice()),
    )
}
