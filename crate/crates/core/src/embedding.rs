//! Fixed word vectors aligned to a vocabulary.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::Vocabulary;
use crate::error::{config, Result};
use crate::nn::Init;
use crate::sentence::UNK;
use crate::tensor::Tensor;

/// Default word-vector dimension.
pub const EMBED_DIM: usize = 50;

/// One vector per vocabulary index.
///
/// Words missing from the source vectors share the UNK row, which is the
/// zero vector unless the vectors provide `<unk>` themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    dim: usize,
    rows: Vec<Vec<f64>>,
    known: Vec<bool>,
}

impl Embeddings {
    pub fn from_pretrained(vocab: &Vocabulary, vectors: &[(String, Vec<f64>)]) -> Result<Self> {
        let dim = vectors.first().map_or(EMBED_DIM, |(_, v)| v.len());
        if let Some((w, v)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(config!("vector for `{w}` has dimension {}, expected {dim}", v.len()));
        }
        let mut rows: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
        for (word, v) in vectors {
            if let Some(i) = vocab.index(word) {
                rows[i] = Some(v.clone());
            }
        }
        let unk = rows[UNK].clone().unwrap_or_else(|| vec![0.0; dim]);
        let known = rows.iter().map(Option::is_some).collect();
        let rows = rows.into_iter().map(|r| r.unwrap_or_else(|| unk.clone())).collect();
        Ok(Self { dim, rows, known })
    }

    /// Wraps explicit rows, all marked known.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(config!("embedding rows must share a positive dimension"));
        }
        let known = vec![true; rows.len()];
        Ok(Self { dim, rows, known })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Vector for `index`; out-of-range indices use the UNK row.
    pub fn row(&self, index: usize) -> &[f64] {
        self.rows.get(index).unwrap_or(&self.rows[UNK])
    }

    pub fn is_known(&self, index: usize) -> bool {
        self.known.get(index).copied().unwrap_or(false)
    }

    /// Trainable table initialized from the known rows; the rest use the
    /// seeded uniform initializer.
    pub fn init_table(&self, init: &mut Init<'_>) -> Result<Tensor> {
        let mut table = init.weights(&[self.rows.len(), self.dim])?;
        let dim = self.dim;
        for (i, row) in self.rows.iter().enumerate() {
            if self.known[i] {
                table.values_mut()[i * dim..(i + 1) * dim].copy_from_slice(row);
            }
        }
        Ok(table)
    }
}

/// Embedding table for a model: pre-trained rows when given, otherwise fully
/// random.
pub fn embedding_table(
    vocab_size: usize,
    dim: usize,
    pretrained: Option<&Embeddings>,
    init: &mut Init<'_>,
) -> Result<Tensor> {
    match pretrained {
        Some(e) => {
            if e.len() != vocab_size || e.dim() != dim {
                return Err(config!(
                    "pre-trained table is {}x{}, model needs {vocab_size}x{dim}",
                    e.len(),
                    e.dim()
                ));
            }
            e.init_table(init)
        }
        None => init.weights(&[vocab_size, dim]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn missing_words_share_unk_row() {
        let vocab = Vocabulary::from_entries([("a".to_string(), 2), ("b".to_string(), 1)]);
        let e = Embeddings::from_pretrained(&vocab, &[("a".to_string(), vec![1.0, 2.0])]).unwrap();
        assert_eq!(e.row(vocab.index("a").unwrap()), &[1.0, 2.0]);
        assert_eq!(e.row(vocab.index("b").unwrap()), &[0.0, 0.0]);
        assert!(!e.is_known(vocab.index("b").unwrap()));
        assert!(Embeddings::from_pretrained(&vocab, &[("a".into(), vec![1.0]), ("b".into(), vec![1.0, 2.0])]).is_err());
    }
}
