//! The DPE1 per-layer word embedding format.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! header   magic "DPE1" | version u32 = 1 | num_sentences u32 | dim u32 | layer u32
//! record   sentence_index u32 | n u32 | n * dim f32 (word-major)
//! ```
//!
//! A file therefore has exactly `20 + sum(8 + 4 * n_i * dim)` bytes.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use crate::treebank::GoldSentence;

pub const MAGIC: &[u8; 4] = b"DPE1";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: u64 = 20;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error at byte offset {offset}: {source}")]
    Io {
        offset: u64,
        #[source]
        source: io::Error,
    },

    #[error("non-finite value in sentence {sentence}, word {word}, dimension {dim}")]
    Data {
        sentence: usize,
        word: usize,
        dim: usize,
    },

    #[error("{0}")]
    Argument(String),

    #[error("alignment error at sentence {index}: {message}")]
    Alignment { index: usize, message: String },
}

/// Word embeddings of one sentence at one encoder layer.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub sentence_index: u32,
    /// `n x dim`, one row per word.
    pub values: Array2<f32>,
}

impl EmbeddingMatrix {
    pub fn new(sentence_index: u32, values: Array2<f32>) -> Self {
        EmbeddingMatrix {
            sentence_index,
            values,
        }
    }

    pub fn n_words(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f32> {
        self.values.view()
    }

    /// The matrix widened to `f64`.
    pub fn to_f64(&self) -> Array2<f64> {
        self.values.mapv(f64::from)
    }
}

/// Contents of one DPE1 file.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingFile {
    pub layer: u32,
    pub dim: usize,
    pub sentences: Vec<EmbeddingMatrix>,
}

impl EmbeddingFile {
    /// Bundle records, checking that every record has dimensionality `dim`.
    pub fn new(layer: u32, dim: usize, sentences: Vec<EmbeddingMatrix>) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::Argument("embedding dimensionality must be positive".into()));
        }
        if let Some((i, m)) = sentences.iter().enumerate().find(|(_, m)| m.dim() != dim) {
            return Err(EmbeddingError::Argument(format!(
                "record {} has dimensionality {}, expected {}",
                i,
                m.dim(),
                dim
            )));
        }
        Ok(EmbeddingFile {
            layer,
            dim,
            sentences,
        })
    }

    /// Bundle records, taking the dimensionality from the first one.
    pub fn from_records(layer: u32, sentences: Vec<EmbeddingMatrix>) -> Result<Self, EmbeddingError> {
        let dim = sentences
            .first()
            .map(EmbeddingMatrix::dim)
            .ok_or_else(|| EmbeddingError::Argument("cannot infer dimensionality of zero records".into()))?;
        EmbeddingFile::new(layer, dim, sentences)
    }

    /// Exact serialized size in bytes.
    pub fn byte_len(&self) -> u64 {
        HEADER_BYTES
            + self
                .sentences
                .iter()
                .map(|m| 8 + 4 * (m.n_words() * self.dim) as u64)
                .sum::<u64>()
    }

    pub fn write<W: Write>(&self, mut writer: W) -> io::Result<()> {
        writer.write_all(MAGIC)?;
        writer.write_all(&VERSION.to_le_bytes())?;
        writer.write_all(&to_u32(self.sentences.len())?.to_le_bytes())?;
        writer.write_all(&to_u32(self.dim)?.to_le_bytes())?;
        writer.write_all(&self.layer.to_le_bytes())?;

        for m in &self.sentences {
            writer.write_all(&m.sentence_index.to_le_bytes())?;
            writer.write_all(&to_u32(m.n_words())?.to_le_bytes())?;
            for v in m.values.iter() {
                writer.write_all(&v.to_le_bytes())?;
            }
        }
        writer.flush()
    }

    pub fn read<R: Read>(reader: R) -> Result<Self, EmbeddingError> {
        let mut reader = OffsetReader { inner: reader, offset: 0 };

        let mut magic = [0u8; 4];
        reader.fill(&mut magic)?;
        if &magic != MAGIC {
            return Err(EmbeddingError::Format(format!("bad magic {:?}", magic)));
        }
        let version = reader.u32()?;
        if version != VERSION {
            return Err(EmbeddingError::Format(format!("unsupported version {}", version)));
        }
        let num_sentences = reader.u32()? as usize;
        let dim = reader.u32()? as usize;
        let layer = reader.u32()?;
        if dim == 0 {
            return Err(EmbeddingError::Format("embedding dimensionality is zero".into()));
        }

        let mut sentences = Vec::with_capacity(num_sentences.min(1 << 16));
        for position in 0..num_sentences {
            let sentence_index = reader.u32()?;
            let n = reader.u32()? as usize;
            let mut buf = vec![0u8; 4 * n * dim];
            reader.fill(&mut buf)?;
            let values: Vec<f32> = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if let Some(k) = values.iter().position(|v| !v.is_finite()) {
                return Err(EmbeddingError::Data {
                    sentence: position,
                    word: k / dim,
                    dim: k % dim,
                });
            }
            let values = Array2::from_shape_vec((n, dim), values).expect("buffer has n * dim values");
            sentences.push(EmbeddingMatrix::new(sentence_index, values));
        }

        Ok(EmbeddingFile {
            layer,
            dim,
            sentences,
        })
    }
}

fn to_u32(v: usize) -> io::Result<u32> {
    u32::try_from(v).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "value exceeds u32"))
}

struct OffsetReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> OffsetReader<R> {
    fn fill(&mut self, buf: &mut [u8]) -> Result<(), EmbeddingError> {
        self.inner.read_exact(buf).map_err(|source| EmbeddingError::Io {
            offset: self.offset,
            source,
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn u32(&mut self) -> Result<u32, EmbeddingError> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
}

/// Read a DPE1 file.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingFile, EmbeddingError> {
    let file = File::open(path).map_err(|source| EmbeddingError::Io { offset: 0, source })?;
    EmbeddingFile::read(BufReader::new(file))
}

/// Write a DPE1 file.
pub fn write_embeddings(path: impl AsRef<Path>, file: &EmbeddingFile) -> Result<(), EmbeddingError> {
    let out = File::create(path).map_err(|source| EmbeddingError::Io { offset: 0, source })?;
    file.write(BufWriter::new(out))
        .map_err(|source| EmbeddingError::Io { offset: 0, source })
}

/// Pair gold sentences with their embeddings, checking word counts.
pub fn align<'a>(
    corpus: &'a [GoldSentence],
    embeddings: &'a [EmbeddingMatrix],
) -> Result<Vec<(&'a GoldSentence, &'a EmbeddingMatrix)>, EmbeddingError> {
    if corpus.len() != embeddings.len() {
        return Err(EmbeddingError::Alignment {
            index: corpus.len().min(embeddings.len()),
            message: format!(
                "corpus has {} sentences, embeddings have {}",
                corpus.len(),
                embeddings.len()
            ),
        });
    }

    corpus
        .iter()
        .zip(embeddings)
        .enumerate()
        .map(|(index, (s, m))| {
            if s.len() == m.n_words() {
                Ok((s, m))
            } else {
                Err(EmbeddingError::Alignment {
                    index,
                    message: format!(
                        "sentence {} has {} words, embedding has {} rows",
                        s.sentence_id,
                        s.len(),
                        m.n_words()
                    ),
                })
            }
        })
        .collect()
}
