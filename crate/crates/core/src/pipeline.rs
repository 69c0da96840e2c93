//! Running a trained probe over examples and decoding trees.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Example;
use crate::decode::{depprobe_decode, dirprobe_decode, mst_tree, DecodeError, DepthGate, PredictedTree};
use crate::probe::{depth_scores, distance_matrix, relation_prob_matrix, ProbeError, ProbeMatrix, ProbeModel};

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("{0}")]
    Incompatible(String),

    #[error(transparent)]
    Probe(#[from] ProbeError),

    #[error(transparent)]
    Decode(#[from] DecodeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoder {
    /// Greedy rooted expansion with relation labels.
    DepProbe,
    /// Undirected minimum spanning tree.
    Mst,
    /// Depth-gated maximum spanning arborescence.
    DirProbe,
}

impl Decoder {
    pub fn name(self) -> &'static str {
        match self {
            Decoder::DepProbe => "depprobe",
            Decoder::Mst => "mst",
            Decoder::DirProbe => "dirprobe",
        }
    }

    /// Whether `model` carries the matrices this decoder reads.
    pub fn check(self, model: &ProbeModel) -> Result<(), PredictError> {
        let needed = match self {
            Decoder::DepProbe => Some(ProbeMatrix::Relational),
            Decoder::Mst => None,
            Decoder::DirProbe => Some(ProbeMatrix::Depth),
        };
        match needed {
            Some(which) if model.matrix(which).is_none() => Err(PredictError::Incompatible(format!(
                "the {} decoder needs a {:?} matrix, which this probe lacks",
                self.name(),
                which
            ))),
            _ => Ok(()),
        }
    }
}

/// Decoded tree of one example, plus words relaxed by the depth gate.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub tree: PredictedTree,
    pub relaxed_words: Vec<usize>,
}

fn embeddings(example: &Example, which: ProbeMatrix) -> Result<ndarray::Array2<f64>, PredictError> {
    example
        .embeddings(which)
        .map(|e| e.mapv(f64::from))
        .ok_or_else(|| PredictError::Incompatible(format!("example has no {:?} embeddings", which)))
}

/// Decode one example.
pub fn predict(model: &ProbeModel, example: &Example, decoder: Decoder, gate: DepthGate) -> Result<Prediction, PredictError> {
    decoder.check(model)?;
    if example.is_empty() {
        return Err(DecodeError::Empty.into());
    }
    let structural = embeddings(example, ProbeMatrix::Structural)?;
    let distances = distance_matrix(model.structural.view(), structural.view())?;

    let (tree, relaxed_words) = match decoder {
        Decoder::DepProbe => {
            let relational = model.relational.as_ref().expect("checked");
            let h = embeddings(example, ProbeMatrix::Relational)?;
            let probs = relation_prob_matrix(relational.view(), h.view())?;
            let tree = depprobe_decode(distances.view(), probs.view(), model.vocab.root())?;
            (tree, Vec::new())
        }
        Decoder::Mst => (mst_tree(distances.view())?, Vec::new()),
        Decoder::DirProbe => {
            let depth = model.depth.as_ref().expect("checked");
            let h = embeddings(example, ProbeMatrix::Depth)?;
            let depths = depth_scores(depth.view(), h.view())?;
            let out = dirprobe_decode(distances.view(), depths.view(), gate)?;
            (out.tree, out.relaxed_words)
        }
    };
    Ok(Prediction { tree, relaxed_words })
}

/// Decode every example, in parallel, preserving order.
pub fn predict_all(
    model: &ProbeModel,
    examples: &[Example],
    decoder: Decoder,
    gate: DepthGate,
) -> Result<Vec<Prediction>, PredictError> {
    use rayon::prelude::*;
    examples
        .par_iter()
        .map(|e| predict(model, e, decoder, gate))
        .collect()
}
