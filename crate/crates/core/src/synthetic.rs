//! Synthetic corpora whose embeddings linearly encode the gold trees.
//!
//! Each word vector concatenates three blocks before a fixed random mixing:
//!
//! * tree coordinates: one dimension per word position, set to 1 for every
//!   word on the path from the root to the word (the root excluded), then
//!   centered over the sentence. Squared Euclidean distances between words
//!   equal tree distances, so tree neighbours are exactly the closest pairs;
//! * a one-hot encoding of the gold relation;
//! * Gaussian noise dimensions.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embstore::{EmbeddingError, EmbeddingFile, EmbeddingMatrix};
use crate::treebank::{GoldSentence, Head, RelationVocab};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub sentences: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub noise_dims: usize,
    /// Standard deviation of the noise dimensions.
    pub noise_scale: f64,
    /// Scale of the tree coordinate block.
    pub tree_scale: f64,
    /// Scale of the relation one-hot block.
    pub relation_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            sentences: 500,
            min_words: 3,
            max_words: 12,
            noise_dims: 3,
            noise_scale: 0.1,
            tree_scale: 1.0,
            relation_scale: 1.6,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    /// Width of the generated embeddings.
    pub fn embedding_dim(&self, vocab: &RelationVocab) -> usize {
        self.max_words + vocab.len() + self.noise_dims
    }
}

/// A uniformly random recursive tree: words are visited in random order and
/// each attaches to a uniformly chosen word visited before it.
pub fn random_heads<R: Rng>(rng: &mut R, n: usize) -> Vec<Head> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut heads = vec![Head::Root; n];
    for k in 1..n {
        let parent = order[rng.random_range(0..k)];
        heads[order[k]] = Head::Word(parent);
    }
    heads
}

/// A random gold tree with random non-root relations.
pub fn random_sentence<R: Rng>(rng: &mut R, id: impl Into<String>, n: usize, vocab: &RelationVocab) -> GoldSentence {
    let heads = random_heads(rng, n);
    let labels: Vec<usize> = (0..vocab.len()).filter(|&r| r != vocab.root()).collect();
    let rels = heads
        .iter()
        .map(|h| match h {
            Head::Root => vocab.root(),
            Head::Word(_) => labels[rng.random_range(0..labels.len())],
        })
        .collect();
    let words = (0..n).map(|i| format!("w{}", i)).collect();
    GoldSentence::new(id, words, heads, rels).expect("random recursive trees are valid")
}

/// A random orthogonal matrix, the Q factor of a Gaussian matrix.
pub fn random_orthogonal<R: Rng>(rng: &mut R, dim: usize) -> Array2<f64> {
    let gaussian = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = gaussian.qr().q();
    Array2::from_shape_fn((dim, dim), |(i, j)| q[(i, j)])
}

/// Unmixed feature vector of every word.
fn features<R: Rng>(rng: &mut R, sentence: &GoldSentence, config: &SyntheticConfig, vocab: &RelationVocab) -> Array2<f64> {
    let n = sentence.len();
    let dim = config.embedding_dim(vocab);
    let mut x = Array2::zeros((n, dim));
    for i in 0..n {
        let mut v = i;
        while let Head::Word(parent) = sentence.heads[v] {
            x[(i, v)] = config.tree_scale;
            v = parent;
        }
        let rel = sentence.rels[i];
        if rel < vocab.len() {
            x[(i, config.max_words + rel)] = config.relation_scale;
        }
        for d in 0..config.noise_dims {
            x[(i, config.max_words + vocab.len() + d)] = config.noise_scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
    for d in 0..config.max_words {
        let mean = x.column(d).mean().unwrap();
        x.column_mut(d).mapv_inplace(|v| v - mean);
    }
    x
}

/// Generated corpus and its embeddings.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub sentences: Vec<GoldSentence>,
    /// `n x e` per sentence, mixed.
    pub embeddings: Vec<Array2<f64>>,
    pub mixing: Array2<f64>,
}

impl SyntheticCorpus {
    pub fn generate(config: &SyntheticConfig, vocab: &RelationVocab) -> Self {
        assert!(config.min_words >= 1 && config.min_words <= config.max_words);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let dim = config.embedding_dim(vocab);
        let mixing = random_orthogonal(&mut rng, dim);
        let mut sentences = Vec::with_capacity(config.sentences);
        let mut embeddings = Vec::with_capacity(config.sentences);
        for s in 0..config.sentences {
            let n = rng.random_range(config.min_words..=config.max_words);
            let sentence = random_sentence(&mut rng, format!("synthetic-{}", s + 1), n, vocab);
            embeddings.push(features(&mut rng, &sentence, config, vocab).dot(&mixing));
            sentences.push(sentence);
        }
        SyntheticCorpus {
            sentences,
            embeddings,
            mixing,
        }
    }

    /// Sentences `range` with their embeddings.
    pub fn slice(&self, range: std::ops::Range<usize>) -> (Vec<GoldSentence>, Vec<Array2<f64>>) {
        (self.sentences[range.clone()].to_vec(), self.embeddings[range].to_vec())
    }
}

/// Package embeddings as a DPE1 file for `layer`, numbering sentences from 0.
pub fn embedding_file(layer: u32, embeddings: &[Array2<f64>]) -> Result<EmbeddingFile, EmbeddingError> {
    let records = embeddings
        .iter()
        .enumerate()
        .map(|(i, e)| EmbeddingMatrix::new(i as u32, e.mapv(|v| v as f32)))
        .collect();
    EmbeddingFile::from_records(layer, records)
}

/// Embeddings for `corpus` that carry no information about it: standard
/// Gaussian noise around a mean vector shared by every word. The shared mean
/// mimics the anisotropy of real encoder layers, and lets a probe without a
/// bias term learn label priors.
pub fn noise_embeddings(corpus: &[GoldSentence], dim: usize, seed: u64) -> Vec<Array2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = gaussian_vector(&mut rng, dim) * NOISE_MEAN_SCALE;
    corpus
        .iter()
        .map(|s| Array2::from_shape_simple_fn((s.len(), dim), || rng.sample::<f64, _>(StandardNormal)) + &mean)
        .collect()
}

/// Scale of the shared mean of [`noise_embeddings`].
pub const NOISE_MEAN_SCALE: f64 = 2.0;

/// Random vector with i.i.d. standard normal entries.
pub fn gaussian_vector<R: Rng>(rng: &mut R, len: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(len, || rng.sample::<f64, _>(StandardNormal))
}
