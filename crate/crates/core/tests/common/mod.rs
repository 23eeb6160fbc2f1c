//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use simrec::net::{init_params, ModelParams, NetConfig};
use simrec::simtable::SimilarityConfig;
use simrec::train::TrainBatch;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

type Mat = Vec<Vec<f64>>;

fn mat_of(data: &[f64], rows: usize, cols: usize) -> Mat {
    (0..rows).map(|r| data[r * cols..(r + 1) * cols].to_vec()).collect()
}

fn mul(x: &Mat, w: &Mat) -> Mat {
    x.iter()
        .map(|row| {
            (0..w[0].len())
                .map(|j| row.iter().enumerate().map(|(k, v)| v * w[k][j]).sum())
                .collect()
        })
        .collect()
}

fn ln(x: &Mat, gamma: &[f64], beta: &[f64], eps: f64) -> Mat {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(i, v)| (v - mean) / (var + eps).sqrt() * gamma[i] + beta[i])
                .collect()
        })
        .collect()
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect()).collect()
}

/// Straight-line evaluation of the network without dropout. Returns the
/// final hidden row of each non-padding item, keyed by its position in the
/// left-padded array.
pub fn reference_forward(p: &ModelParams, seq: &[u32]) -> Vec<(usize, Vec<f64>)> {
    let c = &p.config;
    let d = c.hidden_size;
    let f = c.ffn_size.unwrap_or(d);
    let offset = c.max_seq_len - seq.len();
    let toks: Vec<(usize, u32)> = seq
        .iter()
        .enumerate()
        .filter(|(_, &i)| i != 0)
        .map(|(k, &i)| (offset + k, i))
        .collect();
    let emb = mat_of(&p.item_embedding.data, c.vocab_size + 1, d);
    let pos = mat_of(&p.positional_embedding.data, c.max_seq_len, d);
    let mut x: Mat = toks
        .iter()
        .map(|&(q, i)| (0..d).map(|k| emb[i as usize][k] + pos[q][k]).collect())
        .collect();
    let n = x.len();
    let dh = d / c.num_heads;
    for b in &p.blocks {
        let a = ln(&x, &b.ln1_gamma.data, &b.ln1_beta.data, 1e-8);
        let q = mul(&a, &mat_of(&b.w_query.data, d, d));
        let k = mul(&a, &mat_of(&b.w_key.data, d, d));
        let v = mul(&a, &mat_of(&b.w_value.data, d, d));
        let mut ctx = vec![vec![0.0; d]; n];
        for h in 0..c.num_heads {
            for t in 0..n {
                let logits: Vec<f64> = (0..=t)
                    .map(|j| (h * dh..(h + 1) * dh).map(|m| q[t][m] * k[j][m]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let z: f64 = logits.iter().map(|l| l.exp()).sum();
                for j in 0..=t {
                    let w = logits[j].exp() / z;
                    for m in h * dh..(h + 1) * dh {
                        ctx[t][m] += w * v[j][m];
                    }
                }
            }
        }
        let h1 = add(&x, &mul(&ctx, &mat_of(&b.w_out.data, d, d)));
        let c2 = ln(&h1, &b.ln2_gamma.data, &b.ln2_beta.data, 1e-8);
        let mut u = mul(&c2, &mat_of(&b.ffn_w1.data, d, f));
        for row in &mut u {
            for (j, z) in row.iter_mut().enumerate() {
                *z = (*z + b.ffn_b1.data[j]).max(0.0);
            }
        }
        let mut y = mul(&u, &mat_of(&b.ffn_w2.data, f, d));
        for row in &mut y {
            for (j, z) in row.iter_mut().enumerate() {
                *z += b.ffn_b2.data[j];
            }
        }
        x = add(&h1, &y);
    }
    let out = ln(&x, &p.final_gamma.data, &p.final_beta.data, 1e-8);
    toks.iter().map(|t| t.0).zip(out).collect()
}

/// A small model whose layer-norm affines and biases are random too, so no
/// parameter sits at a special value.
pub fn random_model(vocab: usize, d: usize, blocks: usize, heads: usize, max_len: usize, seed: u64) -> ModelParams {
    let cfg = NetConfig {
        hidden_size: d,
        num_blocks: blocks,
        num_heads: heads,
        max_seq_len: max_len,
        dropout_rate: 0.0,
        vocab_size: vocab,
        ffn_size: None,
    };
    let mut p = init_params(&cfg, seed, None).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    for t in p.tensors_mut() {
        for v in t.data.iter_mut() {
            *v += r.gen_range(-0.3..0.3);
        }
    }
    p.zero_padding_row();
    p
}

/// Naive similarity rows: full cosine matrix, full sort, cut, threshold,
/// softmax. Item `k + 1` is `vectors[k]`.
pub fn brute_similarity(vectors: &[Vec<f64>], cfg: &SimilarityConfig) -> Vec<Vec<(u32, f64)>> {
    let n = vectors.len();
    let norm = |v: &Vec<f64>| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut cos = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = vectors[i].iter().zip(&vectors[j]).map(|(a, b)| a * b).sum();
            cos[i][j] = dot / (norm(&vectors[i]) * norm(&vectors[j]));
        }
    }
    (0..n)
        .map(|i| {
            let mut all: Vec<(f64, usize)> = (0..n)
                .filter(|&j| cfg.include_self || j != i)
                .map(|j| (cos[i][j], j))
                .collect();
            all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let kept: Vec<(f64, usize)> =
                all.into_iter().take(cfg.top_k).filter(|&(c, _)| c >= cfg.threshold).collect();
            let z: f64 = kept.iter().map(|&(c, _)| (c / cfg.temperature).exp()).sum();
            kept.iter()
                .map(|&(c, j)| (j as u32 + 1, (c / cfg.temperature).exp() / z))
                .collect()
        })
        .collect()
}

/// Rank of candidate 0 after a full descending sort in which ties are
/// broken against the target.
pub fn brute_rank(scores: &[f64]) -> u32 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then_with(|| (a == 0).cmp(&(b == 0)))
    });
    order.iter().position(|&c| c == 0).unwrap() as u32 + 1
}

/// Left-padded batch with given inputs, positives and negatives; every
/// non-padding input position is supervised.
pub fn batch_of(len: usize, rows: &[(&[u32], &[u32], &[u32])]) -> TrainBatch {
    let pad = |s: &[u32]| {
        let mut v = vec![0; len - s.len()];
        v.extend_from_slice(s);
        v
    };
    TrainBatch {
        inputs: rows.iter().map(|r| pad(r.0)).collect(),
        positives: rows.iter().map(|r| pad(r.1)).collect(),
        negatives: rows.iter().map(|r| pad(r.2)).collect(),
        mask: rows.iter().map(|r| pad(r.0).iter().map(|&i| i != 0).collect()).collect(),
    }
}

/// Largest element-wise relative error `|a - n| / max(|a|, |n|)` between
/// analytic and central finite-difference gradients, with the element that
/// attains it. Pairs that are both exactly zero count as error 0.
pub struct GradCheck {
    pub max_rel: f64,
    pub worst: String,
    pub checked: usize,
}

pub fn tiny_grad_setup() -> (ModelParams, TrainBatch, simrec::simtable::SimilarityTable) {
    let p = random_model(12, 8, 1, 1, 6, 21);
    let batch = batch_of(
        6,
        &[
            (&[3, 7, 1, 12, 5], &[7, 1, 12, 5, 9], &[2, 4, 6, 8, 10]),
            (&[11, 2], &[2, 6], &[1, 3]),
            (&[4, 4, 9, 10, 2, 8], &[4, 9, 10, 2, 8, 1], &[12, 11, 5, 3, 7, 6]),
        ],
    );
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<Vec<(u32, f64)>> = (1..=12u32)
        .map(|i| {
            if i == 6 {
                return Vec::new();
            }
            let k = r.gen_range(1..=5);
            let mut row: Vec<(u32, f64)> = Vec::new();
            while row.len() < k {
                let j = r.gen_range(1..=12u32);
                if !row.iter().any(|e| e.0 == j) {
                    row.push((j, r.gen_range(0.05..1.0)));
                }
            }
            let z: f64 = row.iter().map(|e| e.1).sum();
            row.iter_mut().for_each(|e| e.1 /= z);
            row.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            row
        })
        .collect();
    let table = simrec::simtable::SimilarityTable::from_rows(
        SimilarityConfig { top_k: 12, threshold: -1.0, temperature: 1.0, include_self: true },
        rows,
    )
    .unwrap();
    (p, batch, table)
}

pub fn gradient_check(lambda: f64, h: f64) -> GradCheck {
    use simrec::train::compute_loss;
    let (p, batch, table) = tiny_grad_setup();
    let analytic = compute_loss(&p, &batch, Some(&table), lambda, None).unwrap().grads;
    let names = p.tensor_names();
    let mut out = GradCheck { max_rel: 0.0, worst: String::new(), checked: 0 };
    let n_tensors = p.tensors().len();
    for ti in 0..n_tensors {
        let len = p.tensors()[ti].data.len();
        for e in 0..len {
            let mut plus = p.clone();
            plus.tensors_mut()[ti].data[e] += h;
            let mut minus = p.clone();
            minus.tensors_mut()[ti].data[e] -= h;
            let lp = compute_loss(&plus, &batch, Some(&table), lambda, None).unwrap().total;
            let lm = compute_loss(&minus, &batch, Some(&table), lambda, None).unwrap().total;
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic.tensors()[ti].data[e];
            let rel = if a == 0.0 && numeric == 0.0 {
                0.0
            } else {
                (a - numeric).abs() / a.abs().max(numeric.abs())
            };
            out.checked += 1;
            if !(rel <= out.max_rel) {
                out.max_rel = rel;
                out.worst = format!("{}[{e}] analytic {a:e} numeric {numeric:e}", names[ti]);
            }
        }
    }
    out
}

/// Random corpus of `users` sequences over `items` items.
pub fn random_split(users: usize, items: usize, seed: u64) -> simrec::corpus::SplitCorpus {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let seqs: Vec<Vec<u32>> = (0..users)
        .map(|_| {
            let len = r.gen_range(3..=12);
            // skewed popularity so frequency buckets fill up
            (0..len).map(|_| (r.gen_range(0.0f64..1.0).powi(3) * items as f64) as u32 + 1).collect()
        })
        .collect();
    let corpus = simrec::corpus::Corpus::new(
        (1..=items).map(|i| format!("item{i}")).collect(),
        vec![None; items],
        (0..users).map(|u| format!("user{u}")).collect(),
        seqs,
    )
    .unwrap();
    simrec::corpus::split_leave_one_out(corpus).unwrap()
}

pub struct BruteReport {
    pub ranks: Vec<Vec<u32>>,
    pub per_repeat: Vec<(f64, f64)>,
    pub mean_hr: f64,
    pub mean_ndcg: f64,
}

/// Full-sort ranking of every candidate list. `score(user, history,
/// candidate)` is evaluated one candidate at a time.
pub fn brute_evaluate(
    split: &simrec::corpus::SplitCorpus,
    cfg: &simrec::eval::EvalConfig,
    score: &dyn Fn(usize, &[u32], u32) -> f64,
) -> BruteReport {
    use std::collections::HashSet;
    let vocab = split.item_count();
    let mut ranks = Vec::new();
    let mut per_repeat = Vec::new();
    for rep in 0..cfg.repeats {
        let mut row = Vec::new();
        let (mut hr, mut ndcg) = (0.0, 0.0);
        for (u, us) in split.users().iter().enumerate() {
            let target = us.target(cfg.target);
            let history = us.history(cfg.target);
            let mut excluded: HashSet<u32> = split.corpus().sequence(u).iter().copied().collect();
            excluded.insert(target);
            let negs = simrec::eval::sample_eval_negatives(cfg.seed, rep, u, &excluded, vocab, cfg.num_negatives).unwrap();
            assert_eq!(negs.iter().collect::<HashSet<_>>().len(), negs.len());
            assert!(negs.iter().all(|n| !excluded.contains(n) && *n >= 1 && *n as usize <= vocab));
            let mut scores = vec![score(u, &history, target)];
            scores.extend(negs.iter().map(|&c| score(u, &history, c)));
            let rank = brute_rank(&scores);
            if rank as usize <= cfg.k {
                hr += 1.0;
                ndcg += 1.0 / (1.0 + rank as f64).log2();
            }
            row.push(rank);
        }
        let n = split.users().len() as f64;
        per_repeat.push((hr / n, ndcg / n));
        ranks.push(row);
    }
    let r = cfg.repeats as f64;
    BruteReport {
        ranks,
        mean_hr: per_repeat.iter().map(|p| p.0).sum::<f64>() / r,
        mean_ndcg: per_repeat.iter().map(|p| p.1).sum::<f64>() / r,
        per_repeat,
    }
}

pub fn compare_reports(got: &simrec::eval::EvalReport, want: &BruteReport) -> Result<(), String> {
    if got.per_user_ranks != want.ranks {
        return Err("per-user ranks differ".into());
    }
    for (g, w) in got.per_repeat.iter().zip(&want.per_repeat) {
        if g.hr != w.0 || g.ndcg != w.1 {
            return Err(format!("repeat metrics differ: {g:?} vs {w:?}"));
        }
    }
    if got.mean_hr != want.mean_hr || got.mean_ndcg != want.mean_ndcg {
        return Err("means differ".into());
    }
    Ok(())
}

/// Model and popularity scorers against their brute-force references on a
/// 50-user, 200-item fixture.
pub fn eval_oracle(target: simrec::corpus::Target) -> Result<(), String> {
    use simrec::eval::{evaluate, EvalConfig, ModelScorer, TopPopScorer};
    let split = random_split(50, 200, 17);
    let cfg = EvalConfig { k: 10, num_negatives: 100, repeats: 5, seed: 9, target };

    let p = random_model(200, 8, 2, 1, 8, 4);
    let model_score = |_: usize, history: &[u32], c: u32| {
        let recent = &history[history.len().saturating_sub(8)..];
        let hidden = reference_forward(&p, recent);
        let f = &hidden.last().unwrap().1;
        f.iter().zip(p.item_embedding.row(c as usize)).map(|(a, b)| a * b).sum()
    };
    let got = evaluate(&ModelScorer { params: &p }, &split, &cfg).map_err(|e| e.to_string())?;
    compare_reports(&got, &brute_evaluate(&split, &cfg, &model_score)).map_err(|e| format!("model: {e}"))?;

    let mut counts = vec![0u64; 201];
    for us in split.users() {
        for &i in &us.train {
            counts[i as usize] += 1;
        }
    }
    let pop_score = |_: usize, _: &[u32], c: u32| counts[c as usize] as f64;
    let freq = simrec::corpus::train_frequency(&split);
    let got = evaluate(&TopPopScorer { freq: &freq }, &split, &cfg).map_err(|e| e.to_string())?;
    compare_reports(&got, &brute_evaluate(&split, &cfg, &pop_score)).map_err(|e| format!("toppop: {e}"))?;
    if got.buckets.0.iter().map(|b| b.count).sum::<usize>() != 50 {
        return Err("bucket counts do not sum to the user count".into());
    }
    Ok(())
}

/// Rank of the target under a constant scorer.
pub struct ConstantScorer;

impl simrec::eval::Scorer for ConstantScorer {
    fn score(&self, _: &[u32], candidates: &[u32]) -> simrec::Result<Vec<f64>> {
        Ok(vec![0.5; candidates.len()])
    }

    fn name(&self) -> &str {
        "constant"
    }
}

pub fn filter_fixture() -> (simrec::corpus::InteractionLog, std::collections::HashMap<String, String>) {
    use std::io::BufReader;
    let log = simrec::corpus::parse_interactions(BufReader::new(
        std::fs::File::open(fixture("filter_interactions.tsv")).unwrap(),
    ))
    .unwrap();
    let titles =
        simrec::corpus::parse_titles(BufReader::new(std::fs::File::open(fixture("filter_titles.tsv")).unwrap()))
            .unwrap();
    (log, titles)
}

/// The hand-enumerated outcome of filtering the fixture with an item
/// threshold of 2 and a minimum user length of 3: users u3 and u4 lose
/// all but one item each, and items e, f, h fall below the threshold.
pub fn check_filter_fixture() -> Result<(), String> {
    use simrec::corpus::{density, preprocess, PreprocessOptions};
    let (log, titles) = filter_fixture();
    let opts = PreprocessOptions { min_item_count: 2, min_user_len: 3, require_title: true };
    let c = preprocess(&log, &titles, opts).map_err(|e| e.to_string())?;
    let users: Vec<&str> = c.user_ids().iter().map(String::as_str).collect();
    let items: Vec<&str> = c.item_ids().iter().map(String::as_str).collect();
    if users != ["u1", "u2", "u5", "u6"] || items != ["a", "b", "c", "d", "g"] {
        return Err(format!("surviving users {users:?}, items {items:?}"));
    }
    // u5 has a timestamp tie between c and b that keeps input order
    let want: [&[u32]; 4] = [&[1, 2, 3], &[1, 2, 4], &[1, 3, 2, 4], &[1, 2, 5]];
    if c.sequences().iter().map(Vec::as_slice).collect::<Vec<_>>() != want {
        return Err(format!("sequences {:?}", c.sequences()));
    }
    if c.interaction_count() != 13 {
        return Err(format!("{} interactions, expected 13", c.interaction_count()));
    }
    let d = density(&c).map_err(|e| e.to_string())?;
    if d != 13.0 / 5.0 {
        return Err(format!("density {d}, expected 2.6"));
    }
    Ok(())
}

pub fn simrec(args: &[&str]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_simrec"))
        .args(args)
        .env("SIMREC_THREADS", "1")
        .output()
        .unwrap()
}

pub fn simrec_ok(args: &[&str]) -> String {
    let out = simrec(args);
    assert!(
        out.status.success(),
        "simrec {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub const TRAIN_CONFIG: &str = r#"{
  "lambda0": 0.5,
  "warmup_steps": 4,
  "epochs": 2,
  "batch_size": 64,
  "learning_rate": 0.002,
  "seed": 11,
  "net": {"hidden_size": 16, "num_blocks": 2, "max_seq_len": 12, "dropout_rate": 0.2}
}"#;

/// preprocess, embed, simtable, train, eval and coldstart on the twin
/// fixture inside `dir`. Returns the paths of the model and the report.
pub fn run_pipeline(dir: &std::path::Path) -> (PathBuf, PathBuf) {
    let p = |n: &str| dir.join(n).to_str().unwrap().to_string();
    let inter = fixture("twins_interactions.tsv");
    let titles = fixture("twins_titles.tsv");
    std::fs::write(p("train.json"), TRAIN_CONFIG).unwrap();
    simrec_ok(&[
        "preprocess", "--interactions", inter.to_str().unwrap(), "--titles", titles.to_str().unwrap(),
        "--min-item-count", "5", "--min-user-len", "5", "--out", &p("twins.corpus"),
    ]);
    simrec_ok(&["embed", "--corpus", &p("twins.corpus"), "--dim", "128", "--seed", "0", "--out", &p("emb.bin")]);
    simrec_ok(&[
        "simtable", "--embeddings", &p("emb.bin"), "--corpus", &p("twins.corpus"), "--top-k", "10",
        "--threshold", "0.9", "--temperature", "1.0", "--out", &p("sim.bin"),
    ]);
    simrec_ok(&[
        "train", "--corpus", &p("twins.corpus"), "--simtable", &p("sim.bin"), "--config", &p("train.json"),
        "--out", &p("model.bin"), "--log", &p("train.jsonl"),
    ]);
    simrec_ok(&[
        "eval", "--model", &p("model.bin"), "--corpus", &p("twins.corpus"), "--k", "10", "--negatives", "50",
        "--repeats", "3", "--seed", "4", "--target", "test", "--report", &p("report.json"),
    ]);
    simrec_ok(&["coldstart", "--report", &p("report.json"), "--corpus", &p("twins.corpus"), "--out", &p("buckets.json")]);
    (dir.join("model.bin"), dir.join("report.json"))
}
