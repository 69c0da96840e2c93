//! Gold sentences paired with the embedding layers a probe reads.

use std::sync::Arc;

use ndarray::Array2;

use crate::embstore::{align, EmbeddingError, EmbeddingFile};
use crate::probe::{ProbeMatrix, ProbeModel};
use crate::treebank::GoldSentence;

/// One sentence with the embeddings for each probe matrix. Matrices on the
/// same layer share storage.
#[derive(Clone, Debug)]
pub struct Example {
    pub sentence: GoldSentence,
    pub structural: Arc<Array2<f32>>,
    pub relational: Option<Arc<Array2<f32>>>,
    pub depth: Option<Arc<Array2<f32>>>,
}

impl Example {
    pub fn len(&self) -> usize {
        self.sentence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentence.is_empty()
    }

    pub fn embeddings(&self, which: ProbeMatrix) -> Option<&Array2<f32>> {
        match which {
            ProbeMatrix::Structural => Some(&self.structural),
            ProbeMatrix::Relational => self.relational.as_deref(),
            ProbeMatrix::Depth => self.depth.as_deref(),
        }
    }
}

/// Embedding files per probe matrix.
#[derive(Clone, Copy, Debug)]
pub struct LayerFiles<'a> {
    pub structural: &'a EmbeddingFile,
    pub relational: Option<&'a EmbeddingFile>,
    pub depth: Option<&'a EmbeddingFile>,
}

impl<'a> LayerFiles<'a> {
    /// Use one file for every matrix.
    pub fn single(file: &'a EmbeddingFile) -> Self {
        LayerFiles {
            structural: file,
            relational: Some(file),
            depth: Some(file),
        }
    }

    /// Check that each file carries the layer the model expects and the
    /// model's embedding dimensionality.
    pub fn check_model(&self, model: &ProbeModel) -> Result<(), EmbeddingError> {
        let pairs = [
            (ProbeMatrix::Structural, Some(self.structural)),
            (ProbeMatrix::Relational, self.relational),
            (ProbeMatrix::Depth, self.depth),
        ];
        for (which, file) in pairs {
            let Some(layer) = model.layer(which) else { continue };
            let file = file.ok_or_else(|| {
                EmbeddingError::Argument(format!("no embeddings given for the {:?} probe", which))
            })?;
            if file.layer != layer {
                return Err(EmbeddingError::Argument(format!(
                    "{:?} probe expects layer {}, embedding file holds layer {}",
                    which, layer, file.layer
                )));
            }
            if file.dim != model.embedding_dim() {
                return Err(EmbeddingError::Argument(format!(
                    "probe expects {}-dimensional embeddings, file has {}",
                    model.embedding_dim(),
                    file.dim
                )));
            }
        }
        Ok(())
    }
}

fn shared(file: &EmbeddingFile) -> Vec<Arc<Array2<f32>>> {
    file.sentences.iter().map(|m| Arc::new(m.values.clone())).collect()
}

/// Build aligned examples. Files passed for several matrices (by identity or
/// by layer) are loaded once.
pub fn build_examples(corpus: &[GoldSentence], files: LayerFiles<'_>) -> Result<Vec<Example>, EmbeddingError> {
    align(corpus, &files.structural.sentences)?;
    let structural = shared(files.structural);

    let reuse = |file: Option<&EmbeddingFile>| -> Result<Option<Vec<Arc<Array2<f32>>>>, EmbeddingError> {
        let Some(file) = file else { return Ok(None) };
        if std::ptr::eq(file, files.structural) || file == files.structural {
            return Ok(Some(structural.clone()));
        }
        align(corpus, &file.sentences)?;
        Ok(Some(shared(file)))
    };
    let relational = reuse(files.relational)?;
    let depth = match (files.depth, files.relational) {
        (Some(d), Some(r)) if std::ptr::eq(d, r) => relational.clone(),
        (d, _) => reuse(d)?,
    };

    Ok(corpus
        .iter()
        .enumerate()
        .map(|(i, sentence)| Example {
            sentence: sentence.clone(),
            structural: structural[i].clone(),
            relational: relational.as_ref().map(|r| r[i].clone()),
            depth: depth.as_ref().map(|d| d[i].clone()),
        })
        .collect())
}
