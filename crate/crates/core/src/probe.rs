//! Linear probe parameters and their forward computations.
//!
//! All maps are stored as `e x k` matrices and applied to row vectors, so a
//! sentence's projection is `H . M` for an `n x e` embedding matrix `H`.
//!
//! The structural loss sums over all `n^2` ordered word pairs and divides by
//! `n^2`, where `n` is the actual word count (the word indices run over
//! `0..n`, not `0..=n`).

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::treebank::RelationVocab;

/// Smoothing inside the square root of the structural distance.
pub const DISTANCE_EPSILON: f64 = 1e-9;

pub const DEFAULT_EMBEDDING_DIM: usize = 768;
pub const DEFAULT_STRUCTURAL_DIM: usize = 128;
pub const DEFAULT_DEPTH_DIM: usize = 128;
pub const DEFAULT_STRUCTURAL_LAYER: u32 = 6;
pub const DEFAULT_RELATIONAL_LAYER: u32 = 7;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

fn check_dim(what: &str, expected: usize, got: usize) -> Result<(), ProbeError> {
    if expected == got {
        Ok(())
    } else {
        Err(ProbeError::Dimension(format!(
            "{}: expected {}, got {}",
            what, expected, got
        )))
    }
}

/// Which probe matrices a model carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    /// Structural and relational maps.
    DepProbe,
    /// Structural and depth maps.
    DirProbe,
}

/// The three probe matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeMatrix {
    Structural,
    Depth,
    Relational,
}

/// Linear probe parameters with their layer assignments.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeModel {
    pub structural: Array2<f64>,
    pub relational: Option<Array2<f64>>,
    pub depth: Option<Array2<f64>>,
    pub structural_layer: u32,
    pub relational_layer: Option<u32>,
    pub depth_layer: Option<u32>,
    pub vocab: RelationVocab,
}

fn uniform_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

impl ProbeModel {
    /// Structural + relational probe with seeded uniform initialization.
    pub fn depprobe(
        embedding_dim: usize,
        structural_dim: usize,
        vocab: RelationVocab,
        structural_layer: u32,
        relational_layer: u32,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let structural = uniform_init(&mut rng, embedding_dim, structural_dim);
        let relational = uniform_init(&mut rng, embedding_dim, vocab.len());
        ProbeModel {
            structural,
            relational: Some(relational),
            depth: None,
            structural_layer,
            relational_layer: Some(relational_layer),
            depth_layer: None,
            vocab,
        }
    }

    /// Structural + depth probe with seeded uniform initialization.
    pub fn dirprobe(
        embedding_dim: usize,
        structural_dim: usize,
        depth_dim: usize,
        structural_layer: u32,
        depth_layer: u32,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let structural = uniform_init(&mut rng, embedding_dim, structural_dim);
        let depth = uniform_init(&mut rng, embedding_dim, depth_dim);
        ProbeModel {
            structural,
            relational: None,
            depth: Some(depth),
            structural_layer,
            relational_layer: None,
            depth_layer: Some(depth_layer),
            vocab: RelationVocab::ud(),
        }
    }

    pub fn kind(&self) -> ProbeKind {
        if self.relational.is_some() {
            ProbeKind::DepProbe
        } else {
            ProbeKind::DirProbe
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.structural.nrows()
    }

    pub fn structural_dim(&self) -> usize {
        self.structural.ncols()
    }

    pub fn depth_dim(&self) -> Option<usize> {
        self.depth.as_ref().map(Array2::ncols)
    }

    pub fn matrix(&self, which: ProbeMatrix) -> Option<&Array2<f64>> {
        match which {
            ProbeMatrix::Structural => Some(&self.structural),
            ProbeMatrix::Relational => self.relational.as_ref(),
            ProbeMatrix::Depth => self.depth.as_ref(),
        }
    }

    pub fn layer(&self, which: ProbeMatrix) -> Option<u32> {
        match which {
            ProbeMatrix::Structural => Some(self.structural_layer),
            ProbeMatrix::Relational => self.relational_layer,
            ProbeMatrix::Depth => self.depth_layer,
        }
    }

    /// Number of trainable parameters across all present matrices.
    pub fn trainable_parameters(&self) -> usize {
        self.structural.len()
            + self.relational.as_ref().map_or(0, Array2::len)
            + self.depth.as_ref().map_or(0, Array2::len)
    }

    pub fn is_finite(&self) -> bool {
        let finite = |m: &Array2<f64>| m.iter().all(|v| v.is_finite());
        finite(&self.structural)
            && self.relational.as_ref().is_none_or(finite)
            && self.depth.as_ref().is_none_or(finite)
    }
}

/// `e * b + e * l`, the size of a structural + relational probe.
pub fn depprobe_parameter_count(embedding_dim: usize, structural_dim: usize, relations: usize) -> usize {
    embedding_dim * structural_dim + embedding_dim * relations
}

/// `e * b + e * c`, the size of a structural + depth probe.
pub fn dirprobe_parameter_count(embedding_dim: usize, structural_dim: usize, depth_dim: usize) -> usize {
    embedding_dim * structural_dim + embedding_dim * depth_dim
}

/// Smoothed Euclidean distance between two embeddings in the structural subspace.
pub fn structural_distance(
    structural: ArrayView2<f64>,
    h_i: ArrayView1<f64>,
    h_j: ArrayView1<f64>,
) -> Result<f64, ProbeError> {
    check_dim("first embedding", structural.nrows(), h_i.len())?;
    check_dim("second embedding", structural.nrows(), h_j.len())?;
    let delta = &h_i - &h_j;
    let projected = delta.dot(&structural);
    Ok((projected.dot(&projected) + DISTANCE_EPSILON).sqrt())
}

/// Pairwise structural distances for one sentence.
pub fn distance_matrix(structural: ArrayView2<f64>, embeddings: ArrayView2<f64>) -> Result<Array2<f64>, ProbeError> {
    check_dim("embedding", structural.nrows(), embeddings.ncols())?;
    Ok(projected_distances(embeddings.dot(&structural).view()))
}

/// Pairwise smoothed distances between the rows of an already projected matrix.
pub(crate) fn projected_distances(projected: ArrayView2<f64>) -> Array2<f64> {
    let n = projected.nrows();
    let mut dist = Array2::zeros((n, n));
    for i in 0..n {
        dist[(i, i)] = DISTANCE_EPSILON.sqrt();
        for j in (i + 1)..n {
            let sq: f64 = projected
                .row(i)
                .iter()
                .zip(projected.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let d = (sq + DISTANCE_EPSILON).sqrt();
            dist[(i, j)] = d;
            dist[(j, i)] = d;
        }
    }
    dist
}

/// Squared norm of an embedding in the depth subspace.
pub fn depth_score(depth: ArrayView2<f64>, h: ArrayView1<f64>) -> Result<f64, ProbeError> {
    check_dim("embedding", depth.nrows(), h.len())?;
    let projected = h.dot(&depth);
    Ok(projected.dot(&projected))
}

/// Depth scores of every word of a sentence.
pub fn depth_scores(depth: ArrayView2<f64>, embeddings: ArrayView2<f64>) -> Result<Array1<f64>, ProbeError> {
    check_dim("embedding", depth.nrows(), embeddings.ncols())?;
    let projected = embeddings.dot(&depth);
    Ok(projected.map_axis(Axis(1), |row| row.dot(&row)))
}

/// Numerically stable softmax of a logit vector.
pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp = logits.mapv(|z| (z - max).exp());
    let total = exp.sum();
    exp / total
}

/// Relation distribution of one word.
pub fn relation_probs(relational: ArrayView2<f64>, h: ArrayView1<f64>) -> Result<Array1<f64>, ProbeError> {
    check_dim("embedding", relational.nrows(), h.len())?;
    Ok(softmax(h.dot(&relational).view()))
}

/// Relation distributions of every word of a sentence, one row per word.
pub fn relation_prob_matrix(
    relational: ArrayView2<f64>,
    embeddings: ArrayView2<f64>,
) -> Result<Array2<f64>, ProbeError> {
    check_dim("embedding", relational.nrows(), embeddings.ncols())?;
    let mut logits = embeddings.dot(&relational);
    for mut row in logits.rows_mut() {
        let p = softmax(row.view());
        row.assign(&p);
    }
    Ok(logits)
}

// Checkpoint container.
//
// A checkpoint is a JSON object:
//
//   format      "depprobe-checkpoint"
//   version     1
//   embedding_dim, structural_dim, relation_count, depth_dim (nullable)
//   layers      { structural, relational (nullable), depth (nullable) }
//   relations   ordered relation labels
//   matrices    { structural, relational (nullable), depth (nullable) }
//
// Every matrix is { rows, cols, data } where data is the base64 encoding of
// rows * cols little-endian f64 values in row-major order.

const CHECKPOINT_FORMAT: &str = "depprobe-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct EncodedMatrix {
    rows: usize,
    cols: usize,
    data: String,
}

impl EncodedMatrix {
    fn encode(m: &Array2<f64>) -> Self {
        let bytes: Vec<u8> = m.iter().flat_map(|v| v.to_le_bytes()).collect();
        EncodedMatrix {
            rows: m.nrows(),
            cols: m.ncols(),
            data: BASE64.encode(bytes),
        }
    }

    fn decode(&self, name: &str) -> Result<Array2<f64>, ProbeError> {
        let bytes = BASE64
            .decode(&self.data)
            .map_err(|e| ProbeError::Checkpoint(format!("{} matrix: {}", name, e)))?;
        if bytes.len() != 8 * self.rows * self.cols {
            return Err(ProbeError::Checkpoint(format!(
                "{} matrix: {} bytes for a {}x{} matrix",
                name,
                bytes.len(),
                self.rows,
                self.cols
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Array2::from_shape_vec((self.rows, self.cols), values).unwrap())
    }
}

#[derive(Serialize, Deserialize)]
struct Layers {
    structural: u32,
    relational: Option<u32>,
    depth: Option<u32>,
}

#[derive(Serialize, Deserialize)]
struct Matrices {
    structural: EncodedMatrix,
    relational: Option<EncodedMatrix>,
    depth: Option<EncodedMatrix>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    embedding_dim: usize,
    structural_dim: usize,
    relation_count: usize,
    depth_dim: Option<usize>,
    layers: Layers,
    relations: Vec<String>,
    matrices: Matrices,
}

impl ProbeModel {
    pub fn write_checkpoint<W: Write>(&self, writer: W) -> Result<(), ProbeError> {
        let checkpoint = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            embedding_dim: self.embedding_dim(),
            structural_dim: self.structural_dim(),
            relation_count: self.vocab.len(),
            depth_dim: self.depth_dim(),
            layers: Layers {
                structural: self.structural_layer,
                relational: self.relational_layer,
                depth: self.depth_layer,
            },
            relations: self.vocab.labels().to_vec(),
            matrices: Matrices {
                structural: EncodedMatrix::encode(&self.structural),
                relational: self.relational.as_ref().map(EncodedMatrix::encode),
                depth: self.depth.as_ref().map(EncodedMatrix::encode),
            },
        };
        serde_json::to_writer_pretty(writer, &checkpoint)
            .map_err(|e| ProbeError::Checkpoint(e.to_string()))
    }

    pub fn read_checkpoint<R: Read>(reader: R) -> Result<Self, ProbeError> {
        let c: Checkpoint =
            serde_json::from_reader(reader).map_err(|e| ProbeError::Checkpoint(e.to_string()))?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(ProbeError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                c.format, c.version
            )));
        }
        let vocab = RelationVocab::new(c.relations)
            .ok_or_else(|| ProbeError::Checkpoint("invalid relation vocabulary".into()))?;

        let structural = c.matrices.structural.decode("structural")?;
        let relational = c.matrices.relational.map(|m| m.decode("relational")).transpose()?;
        let depth = c.matrices.depth.map(|m| m.decode("depth")).transpose()?;

        let mismatch = |what: &str| ProbeError::Checkpoint(format!("{} disagrees with header", what));
        if structural.dim() != (c.embedding_dim, c.structural_dim) {
            return Err(mismatch("structural matrix shape"));
        }
        if let Some(l) = &relational {
            if l.dim() != (c.embedding_dim, c.relation_count) || vocab.len() != c.relation_count {
                return Err(mismatch("relational matrix shape"));
            }
        }
        match (&depth, c.depth_dim) {
            (Some(m), Some(k)) if m.dim() == (c.embedding_dim, k) => {}
            (None, None) => {}
            _ => return Err(mismatch("depth matrix shape")),
        }
        if relational.is_some() != c.layers.relational.is_some() || depth.is_some() != c.layers.depth.is_some() {
            return Err(mismatch("layer assignment"));
        }

        let model = ProbeModel {
            structural,
            relational,
            depth,
            structural_layer: c.layers.structural,
            relational_layer: c.layers.relational,
            depth_layer: c.layers.depth,
            vocab,
        };
        if !model.is_finite() {
            return Err(ProbeError::Checkpoint("non-finite parameters".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ProbeError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProbeError> {
        ProbeModel::read_checkpoint(BufReader::new(File::open(path)?))
    }
}
