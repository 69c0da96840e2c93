//! Loading command inputs with path-aware errors.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use depprobe::decode::{read_predictions, PredictedTree};
use depprobe::{read_conllu, read_embeddings, EmbeddingFile, GoldSentence, LayerFiles, ProbeModel, RelationVocab};

use crate::error::{CliError, PathContext};
use crate::manifest::RunDir;

/// Placeholder replaced by the layer index in embedding file patterns.
pub const LAYER_PLACEHOLDER: &str = "{layer}";

/// Path of the embedding file for `layer`.
pub fn layer_path(pattern: &str, layer: u32) -> PathBuf {
    PathBuf::from(pattern.replace(LAYER_PLACEHOLDER, &layer.to_string()))
}

pub fn gold(run: &mut RunDir, path: &Path) -> Result<Vec<GoldSentence>, CliError> {
    let corpus = read_conllu(path, &RelationVocab::ud()).at(path)?;
    run.record_input(path)?;
    Ok(corpus)
}

pub fn predictions(run: &mut RunDir, path: &Path) -> Result<Vec<PredictedTree>, CliError> {
    let file = File::open(path).at(path)?;
    let trees = read_predictions(BufReader::new(file), &RelationVocab::ud()).at(path)?;
    run.record_input(path)?;
    Ok(trees)
}

pub fn checkpoint(run: &mut RunDir, path: &Path) -> Result<ProbeModel, CliError> {
    let model = ProbeModel::load(path).at(path)?;
    run.record_input(path)?;
    Ok(model)
}

/// Read one embedding file and check its layer header.
pub fn embedding_file(run: &mut RunDir, pattern: &str, layer: u32) -> Result<EmbeddingFile, CliError> {
    let path = layer_path(pattern, layer);
    let file = read_embeddings(&path).at(&path)?;
    if file.layer != layer {
        return Err(CliError::compatibility(format!("expected layer {}, file holds layer {}", layer, file.layer)).at(&path));
    }
    run.record_input(&path)?;
    Ok(file)
}

/// Embedding files for every layer a model reads, each loaded once.
pub struct LayerSet {
    files: BTreeMap<u32, EmbeddingFile>,
}

impl LayerSet {
    pub fn load(run: &mut RunDir, pattern: &str, layers: impl IntoIterator<Item = u32>) -> Result<Self, CliError> {
        let mut files = BTreeMap::new();
        for layer in layers {
            if let Entry::Vacant(slot) = files.entry(layer) {
                slot.insert(embedding_file(run, pattern, layer)?);
            }
        }
        Ok(LayerSet { files })
    }

    /// Load the layers `model` reads.
    pub fn for_model(run: &mut RunDir, pattern: &str, model: &ProbeModel) -> Result<Self, CliError> {
        let layers = [Some(model.structural_layer), model.relational_layer, model.depth_layer];
        LayerSet::load(run, pattern, layers.into_iter().flatten())
    }

    /// Embedding width of the loaded files.
    pub fn dim(&self) -> Result<usize, CliError> {
        let mut dims = self.files.values().map(|f| f.dim);
        let first = dims.next().ok_or_else(|| CliError::argument("no embedding layers requested"))?;
        if dims.any(|d| d != first) {
            return Err(CliError::compatibility("embedding files disagree on dimensionality"));
        }
        Ok(first)
    }

    /// Files in the arrangement `model` expects.
    pub fn files_for(&self, model: &ProbeModel) -> Result<LayerFiles<'_>, CliError> {
        let get = |layer: u32| {
            self.files
                .get(&layer)
                .ok_or_else(|| CliError::argument(format!("no embeddings loaded for layer {}", layer)))
        };
        let files = LayerFiles {
            structural: get(model.structural_layer)?,
            relational: model.relational_layer.map(get).transpose()?,
            depth: model.depth_layer.map(get).transpose()?,
        };
        files
            .check_model(model)
            .map_err(|e| CliError::compatibility(e.to_string()))?;
        Ok(files)
    }
}
