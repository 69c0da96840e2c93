//! Linear probes for dependency structure over frozen contextual embeddings.
//!
//! The crate covers reading treebanks and embedding files, training
//! structural, relational and depth probes, decoding trees from their
//! outputs, scoring predictions, and relating probe geometry to
//! cross-lingual parser transfer.

pub mod analysis;
pub mod dataset;
pub mod decode;
pub mod embstore;
pub mod eval;
pub mod pipeline;
pub mod probe;
pub mod synthetic;
pub mod train;
pub mod treebank;

pub use dataset::{build_examples, Example, LayerFiles};
pub use decode::{DepthGate, PredictedTree};
pub use embstore::{read_embeddings, write_embeddings, EmbeddingFile, EmbeddingMatrix};
pub use pipeline::{predict, predict_all, Decoder, Prediction};
pub use probe::{ProbeKind, ProbeMatrix, ProbeModel};
pub use train::{fit, TrainConfig, TrainReport};
pub use treebank::{read_conllu, GoldSentence, Head, RelationVocab};
