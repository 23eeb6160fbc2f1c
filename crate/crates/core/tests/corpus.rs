mod common;

use std::collections::{HashMap, HashSet};

use common::{check_filter_fixture, filter_fixture};
use proptest::prelude::*;
use simrec::corpus::{
    density, preprocess, split_leave_one_out, train_frequency, Corpus, Interaction, InteractionLog, PreprocessOptions,
};
use simrec::Error;

#[test]
fn filter_fixture_matches_hand_enumeration() {
    check_filter_fixture().unwrap();
}

#[test]
fn each_filter_runs_once() {
    // g survives the item filter with two occurrences, then loses u4, leaving
    // it with a single interaction; a second pass would drop it
    let (log, titles) = filter_fixture();
    let opts = PreprocessOptions { min_item_count: 2, min_user_len: 3, require_title: true };
    let c = preprocess(&log, &titles, opts).unwrap();
    let g = c.item_index("g").unwrap();
    assert_eq!(c.sequences().iter().flatten().filter(|&&i| i == g).count(), 1);
}

#[test]
fn untitled_items_are_dropped_only_when_required() {
    let (log, mut titles) = filter_fixture();
    titles.remove("d");
    let strict = PreprocessOptions { min_item_count: 1, min_user_len: 1, require_title: true };
    assert!(preprocess(&log, &titles, strict).unwrap().item_index("d").is_none());
    let lax = PreprocessOptions { require_title: false, ..strict };
    assert!(preprocess(&log, &HashMap::new(), lax).unwrap().item_index("d").is_some());
}

#[test]
fn corpus_file_round_trip() {
    let (log, titles) = filter_fixture();
    let c = preprocess(&log, &titles, PreprocessOptions { min_item_count: 1, min_user_len: 2, require_title: true })
        .unwrap();
    let mut buf = Vec::new();
    c.write(&mut buf).unwrap();
    assert_eq!(Corpus::read(&mut buf.as_slice()).unwrap(), c);
    assert!(matches!(Corpus::read(&mut &buf[1..]), Err(Error::Format(_))));
}

fn raw_log() -> impl Strategy<Value = InteractionLog> {
    prop::collection::vec((0u8..15, 0u8..25, 0i64..20), 1..200).prop_map(|recs| InteractionLog {
        records: recs
            .into_iter()
            .map(|(u, i, t)| Interaction { user: format!("u{u}"), item: format!("i{i}"), timestamp: t })
            .collect(),
    })
}

proptest! {
    #[test]
    fn preprocessing_invariants(log in raw_log(), n in 1usize..5, m in 1usize..6) {
        let opts = PreprocessOptions { min_item_count: n, min_user_len: m, require_title: false };
        let mut raw_counts: HashMap<&str, usize> = HashMap::new();
        for r in &log.records {
            *raw_counts.entry(&r.item).or_default() += 1;
        }
        match preprocess(&log, &HashMap::new(), opts) {
            Err(Error::EmptyCorpus) => {}
            Err(e) => prop_assert!(false, "{e}"),
            Ok(c) => {
                for s in c.sequences() {
                    prop_assert!(s.len() >= m);
                    prop_assert!(s.iter().all(|&i| i >= 1 && i as usize <= c.item_count()));
                }
                for id in c.item_ids() {
                    prop_assert!(raw_counts[id.as_str()] >= n);
                }
                let used: HashSet<u32> = c.sequences().iter().flatten().copied().collect();
                prop_assert_eq!(used.len(), c.item_count());
                prop_assert_eq!(c.interaction_count(), c.sequences().iter().map(Vec::len).sum::<usize>());
                prop_assert!((density(&c).unwrap() - c.interaction_count() as f64 / c.item_count() as f64).abs() == 0.0);

                if c.sequences().iter().all(|s| s.len() >= 3) {
                    let split = split_leave_one_out(c.clone()).unwrap();
                    for (u, us) in split.users().iter().enumerate() {
                        let mut whole = us.train.clone();
                        whole.push(us.valid);
                        whole.push(us.test);
                        prop_assert_eq!(&whole, &c.sequences()[u]);
                    }
                    let freq = train_frequency(&split);
                    prop_assert_eq!(freq.total() as usize, c.interaction_count() - 2 * c.user_count());
                }
            }
        }
    }
}
