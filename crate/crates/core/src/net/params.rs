use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;

use super::NetConfig;
use crate::error::{Error, Result};
use crate::rng;
use crate::simtable::EmbeddingSet;

/// Dense row-major tensor of rank 1 or 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    fn glorot(rows: usize, cols: usize, rng: &mut rng::Rng) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Tensor {
            shape: vec![rows, cols],
            data: (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub w_query: Tensor,
    pub w_key: Tensor,
    pub w_value: Tensor,
    pub w_out: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
    pub ffn_w1: Tensor,
    pub ffn_b1: Tensor,
    pub ffn_w2: Tensor,
    pub ffn_b2: Tensor,
}

impl Block {
    fn tensors(&self) -> [&Tensor; 12] {
        [
            &self.ln1_gamma,
            &self.ln1_beta,
            &self.w_query,
            &self.w_key,
            &self.w_value,
            &self.w_out,
            &self.ln2_gamma,
            &self.ln2_beta,
            &self.ffn_w1,
            &self.ffn_b1,
            &self.ffn_w2,
            &self.ffn_b2,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 12] {
        [
            &mut self.ln1_gamma,
            &mut self.ln1_beta,
            &mut self.w_query,
            &mut self.w_key,
            &mut self.w_value,
            &mut self.w_out,
            &mut self.ln2_gamma,
            &mut self.ln2_beta,
            &mut self.ffn_w1,
            &mut self.ffn_b1,
            &mut self.ffn_w2,
            &mut self.ffn_b2,
        ]
    }

    const NAMES: [&'static str; 12] = [
        "ln1_gamma",
        "ln1_beta",
        "w_query",
        "w_key",
        "w_value",
        "w_out",
        "ln2_gamma",
        "ln2_beta",
        "ffn_w1",
        "ffn_b1",
        "ffn_w2",
        "ffn_b2",
    ];
}

/// All learnable tensors. The same structure doubles as a gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: NetConfig,
    /// `(|V| + 1) x d`, row 0 is padding and stays zero.
    pub item_embedding: Tensor,
    /// `L x d`.
    pub positional_embedding: Tensor,
    pub blocks: Vec<Block>,
    pub final_gamma: Tensor,
    pub final_beta: Tensor,
}

impl ModelParams {
    /// Zero-valued tensors shaped for `config`.
    pub fn zeros(config: &NetConfig) -> Self {
        let d = config.hidden_size;
        let f = config.ffn();
        let block = || Block {
            ln1_gamma: Tensor::zeros(&[d]),
            ln1_beta: Tensor::zeros(&[d]),
            w_query: Tensor::zeros(&[d, d]),
            w_key: Tensor::zeros(&[d, d]),
            w_value: Tensor::zeros(&[d, d]),
            w_out: Tensor::zeros(&[d, d]),
            ln2_gamma: Tensor::zeros(&[d]),
            ln2_beta: Tensor::zeros(&[d]),
            ffn_w1: Tensor::zeros(&[d, f]),
            ffn_b1: Tensor::zeros(&[f]),
            ffn_w2: Tensor::zeros(&[f, d]),
            ffn_b2: Tensor::zeros(&[d]),
        };
        ModelParams {
            config: *config,
            item_embedding: Tensor::zeros(&[config.vocab_size + 1, d]),
            positional_embedding: Tensor::zeros(&[config.max_seq_len, d]),
            blocks: (0..config.num_blocks).map(|_| block()).collect(),
            final_gamma: Tensor::zeros(&[d]),
            final_beta: Tensor::zeros(&[d]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    /// Tensors in checkpoint order: item embedding, positional embedding,
    /// each block's twelve tensors, final layer norm scale and bias.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.item_embedding, &self.positional_embedding];
        for b in &self.blocks {
            out.extend(b.tensors());
        }
        out.push(&self.final_gamma);
        out.push(&self.final_beta);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.item_embedding, &mut self.positional_embedding];
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        out.push(&mut self.final_gamma);
        out.push(&mut self.final_beta);
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = vec!["item_embedding".to_string(), "positional_embedding".to_string()];
        for (i, _) in self.blocks.iter().enumerate() {
            out.extend(Block::NAMES.iter().map(|n| format!("block{i}.{n}")));
        }
        out.push("final_gamma".into());
        out.push("final_beta".into());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|x| x * x)
            .sum()
    }

    pub fn zero_padding_row(&mut self) {
        self.item_embedding.row_mut(0).fill(0.0);
    }
}

/// Glorot-uniform initialisation from a seeded stream; layer norms start at
/// scale 1 and bias 0, all biases at 0.
///
/// With `init_embeddings`, item rows come from the given vectors instead:
/// projected to `hidden_size` dimensions by [`pca_projection`] (identity
/// when the dimensions already agree) and rescaled to the expected Glorot
/// row norm.
pub fn init_params(
    cfg: &NetConfig,
    seed: u64,
    init_embeddings: Option<&EmbeddingSet>,
) -> Result<ModelParams> {
    cfg.validate()?;
    let d = cfg.hidden_size;
    let f = cfg.ffn();
    let v = cfg.vocab_size;
    let mut rng = rng::stream(seed, rng::TAG_INIT, 0, 0);

    let mut item_embedding = Tensor::glorot(v + 1, d, &mut rng);
    let positional_embedding = Tensor::glorot(cfg.max_seq_len, d, &mut rng);
    let blocks = (0..cfg.num_blocks)
        .map(|_| Block {
            ln1_gamma: Tensor::filled(&[d], 1.0),
            ln1_beta: Tensor::zeros(&[d]),
            w_query: Tensor::glorot(d, d, &mut rng),
            w_key: Tensor::glorot(d, d, &mut rng),
            w_value: Tensor::glorot(d, d, &mut rng),
            w_out: Tensor::glorot(d, d, &mut rng),
            ln2_gamma: Tensor::filled(&[d], 1.0),
            ln2_beta: Tensor::zeros(&[d]),
            ffn_w1: Tensor::glorot(d, f, &mut rng),
            ffn_b1: Tensor::zeros(&[f]),
            ffn_w2: Tensor::glorot(f, d, &mut rng),
            ffn_b2: Tensor::zeros(&[d]),
        })
        .collect();

    if let Some(emb) = init_embeddings {
        if emb.len() != v {
            return Err(Error::config(format!(
                "embedding set covers {} items, vocabulary has {v}",
                emb.len()
            )));
        }
        let projected = pca_projection(emb, d);
        let target = (d as f64 * 2.0 / (v + 1 + d) as f64).sqrt();
        for (k, row) in projected.iter().enumerate() {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            let scale = if norm > 0.0 { target / norm } else { 0.0 };
            for (o, &x) in item_embedding.row_mut(k + 1).iter_mut().zip(row) {
                *o = x * scale;
            }
        }
    }
    let mut params = ModelParams {
        config: *cfg,
        item_embedding,
        positional_embedding,
        blocks,
        final_gamma: Tensor::filled(&[d], 1.0),
        final_beta: Tensor::zeros(&[d]),
    };
    params.zero_padding_row();
    Ok(params)
}

/// Reduces embedding vectors to `out_dim` components.
///
/// Equal dimensions pass through unchanged. Otherwise the vectors are
/// centred and projected onto the leading eigenvectors of their covariance
/// (each eigenvector's largest-magnitude component made positive); missing
/// components, when `out_dim` exceeds the input dimension, are zero.
pub fn pca_projection(emb: &EmbeddingSet, out_dim: usize) -> Vec<Vec<f64>> {
    let dim = emb.dim();
    if dim == out_dim {
        return emb.vectors().to_vec();
    }
    let n = emb.len();
    let mut mean = vec![0.0; dim];
    for v in emb.vectors() {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / n as f64;
        }
    }
    let centred = DMatrix::from_fn(n, dim, |i, j| emb.vectors()[i][j] - mean[j]);
    let cov = (centred.transpose() * &centred) / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let keep = out_dim.min(dim);
    let mut basis = DMatrix::zeros(dim, keep);
    for (c, &k) in order.iter().take(keep).enumerate() {
        let col = eig.eigenvectors.column(k);
        let pivot = (0..dim)
            .max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()).then(b.cmp(&a)))
            .unwrap_or(0);
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..dim {
            basis[(r, c)] = sign * col[r];
        }
    }
    let projected = centred * basis;
    (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..keep).map(|c| projected[(i, c)]).collect();
            row.resize(out_dim, 0.0);
            row
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> NetConfig {
        NetConfig {
            hidden_size: 8,
            num_blocks: 2,
            num_heads: 2,
            max_seq_len: 5,
            dropout_rate: 0.0,
            vocab_size: 6,
            ffn_size: None,
        }
    }

    #[test]
    fn init_is_deterministic_and_pads_zero() {
        let a = init_params(&cfg(), 42, None).unwrap();
        let b = init_params(&cfg(), 42, None).unwrap();
        let c = init_params(&cfg(), 43, None).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.item_embedding.row(0).iter().all(|&x| x == 0.0));
        assert!(a.is_finite());
        assert!(a.blocks[1].ln2_gamma.data.iter().all(|&x| x == 1.0));
        assert_eq!(a.tensors().len(), a.tensor_names().len());
    }

    #[test]
    fn glorot_bounds() {
        let p = init_params(&cfg(), 1, None).unwrap();
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(p.blocks[0].w_query.data.iter().all(|x| x.abs() <= limit));
    }

    #[test]
    fn identity_projection_keeps_direction() {
        let vectors: Vec<Vec<f64>> = (0..6)
            .map(|i| (0..8).map(|j| ((i * 8 + j) as f64 * 0.37).sin() + 0.1).collect())
            .collect();
        let emb = EmbeddingSet::new(8, vectors.clone()).unwrap();
        let p = init_params(&cfg(), 1, Some(&emb)).unwrap();
        for (k, v) in vectors.iter().enumerate() {
            let row = p.item_embedding.row(k + 1);
            let ratio = row[0] / v[0];
            assert!(ratio > 0.0);
            for (a, b) in row.iter().zip(v) {
                assert!((a - ratio * b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pca_reduces_and_rejects_mismatch() {
        let vectors: Vec<Vec<f64>> = (0..6)
            .map(|i| (0..12).map(|j| ((i * 12 + j) as f64 * 0.91).cos()).collect())
            .collect();
        let emb = EmbeddingSet::new(12, vectors).unwrap();
        let proj = pca_projection(&emb, 8);
        assert_eq!(proj.len(), 6);
        assert!(proj.iter().all(|r| r.len() == 8));
        assert_eq!(proj, pca_projection(&emb, 8));
        // projected components are centred
        for c in 0..8 {
            let s: f64 = proj.iter().map(|r| r[c]).sum();
            assert!(s.abs() < 1e-9);
        }
        let p = init_params(&cfg(), 1, Some(&emb)).unwrap();
        let target = (8.0 * 2.0 / 15.0f64).sqrt();
        let norm = p.item_embedding.row(3).iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - target).abs() < 1e-12);

        let short = EmbeddingSet::new(12, emb.vectors()[..5].to_vec()).unwrap();
        assert!(init_params(&cfg(), 1, Some(&short)).is_err());
    }
}
