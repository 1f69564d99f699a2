//! Token-embedding dumps and vocabularies.
//!
//! A dump holds the hidden states of one encoder layer for a list of
//! sentences. Each file is paired with a JSON manifest that records the
//! sentence languages, per-language token counts and section checksums.
//!
//! ```text
//! "EMBD" | version u32 | layer u32 | dim u32 | sentence_count u64 | token_count u64
//! offsets  u64 x sentence_count       (start token of each sentence)
//! ids      u32 x token_count
//! vectors  f32 x token_count x dim    (row-major)
//! payload hash u64                    (xxh64 of every preceding byte)
//! ```
//!
//! All integers and floats are little-endian.

mod dump;
mod manifest;
mod vocab;

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

pub use dump::{decode_dump, encode_dump, load_dump, load_dump_with_manifest, write_dump};
pub use manifest::{manifest_path, Checksums, CorpusManifest, LanguageRun};
pub use vocab::{vocab_stats, VocabSource, VocabStats, Vocabulary};

pub(crate) use dump::checksum;

/// Vocabulary index of a token.
pub type TokenId = u32;

/// One sentence of a dump: token ids plus their hidden states.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceRecord {
    language: String,
    token_ids: Vec<TokenId>,
    vectors: Vec<f32>,
}

impl SentenceRecord {
    /// `vectors` is row-major with one row of `vectors.len() / token_ids.len()`
    /// components per token.
    pub fn new(language: impl Into<String>, token_ids: Vec<TokenId>, vectors: Vec<f32>) -> Self {
        SentenceRecord {
            language: language.into(),
            token_ids,
            vectors,
        }
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn token_ids(&self) -> &[TokenId] {
        &self.token_ids
    }

    /// Flat row-major token vectors.
    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn token_count(&self) -> usize {
        self.token_ids.len()
    }

    pub fn dim(&self) -> usize {
        if self.token_ids.is_empty() {
            0
        } else {
            self.vectors.len() / self.token_ids.len()
        }
    }

    /// Iterates over `(token_id, vector)` pairs.
    pub fn tokens(&self) -> impl Iterator<Item = (TokenId, &[f32])> + '_ {
        let dim = self.dim().max(1);
        self.token_ids
            .iter()
            .copied()
            .zip(self.vectors.chunks_exact(dim))
    }

    pub(crate) fn with_vectors(&self, vectors: Vec<f32>) -> Self {
        SentenceRecord {
            language: self.language.clone(),
            token_ids: self.token_ids.clone(),
            vectors,
        }
    }
}

/// Hidden states of one layer for a list of sentences.
///
/// Construction validates every invariant, so a dataset in hand always has
/// at least one sentence, no empty sentences, consistent row widths and only
/// finite components.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    layer: u32,
    dim: usize,
    sentences: Vec<SentenceRecord>,
    special_token_ids: BTreeSet<TokenId>,
}

impl EmbeddingDataset {
    pub fn new(layer: u32, dim: usize, sentences: Vec<SentenceRecord>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("embedding dimension must be positive".into()));
        }
        if sentences.is_empty() {
            return Err(Error::Validation("dataset has no sentences".into()));
        }
        for (i, s) in sentences.iter().enumerate() {
            if s.token_ids.is_empty() {
                return Err(Error::Validation(format!("sentence {i} has no tokens")));
            }
            if s.language.is_empty() {
                return Err(Error::Validation(format!("sentence {i} has no language code")));
            }
            if s.vectors.len() != s.token_ids.len() * dim {
                return Err(Error::Validation(format!(
                    "sentence {i}: {} vector components for {} tokens of dim {dim}",
                    s.vectors.len(),
                    s.token_ids.len()
                )));
            }
            if let Some(pos) = s.vectors.iter().position(|x| !x.is_finite()) {
                return Err(Error::Data(format!(
                    "sentence {i}, token {}: non-finite component",
                    pos / dim
                )));
            }
        }
        Ok(EmbeddingDataset {
            layer,
            dim,
            sentences,
            special_token_ids: BTreeSet::new(),
        })
    }

    /// Marks token ids (classification/separator markers and the like) that
    /// mean computation may be asked to skip.
    pub fn with_special_tokens(mut self, ids: impl IntoIterator<Item = TokenId>) -> Self {
        self.special_token_ids = ids.into_iter().collect();
        self
    }

    pub fn layer(&self) -> u32 {
        self.layer
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sentences(&self) -> &[SentenceRecord] {
        &self.sentences
    }

    pub fn special_token_ids(&self) -> &BTreeSet<TokenId> {
        &self.special_token_ids
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(SentenceRecord::token_count).sum()
    }

    /// Distinct languages in order of first appearance.
    pub fn languages(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for s in &self.sentences {
            if seen.insert(s.language.as_str()) {
                out.push(s.language.clone());
            }
        }
        out
    }

    pub fn token_counts_by_language(&self) -> BTreeMap<String, u64> {
        let mut counts = BTreeMap::new();
        for s in &self.sentences {
            *counts.entry(s.language.clone()).or_insert(0) += s.token_count() as u64;
        }
        counts
    }

    /// Concatenates two datasets of the same layer and width.
    pub fn concat(&self, other: &EmbeddingDataset) -> Result<Self> {
        if self.layer != other.layer {
            return Err(Error::LayerMismatch {
                expected: self.layer,
                actual: other.layer,
            });
        }
        if self.dim != other.dim {
            return Err(Error::Shape {
                expected: self.dim,
                actual: other.dim,
            });
        }
        let mut sentences = self.sentences.clone();
        sentences.extend(other.sentences.iter().cloned());
        let mut out = EmbeddingDataset::new(self.layer, self.dim, sentences)?;
        out.special_token_ids = self
            .special_token_ids
            .union(&other.special_token_ids)
            .copied()
            .collect();
        Ok(out)
    }

    /// Builds a dataset with the same shape whose vectors are replaced
    /// sentence by sentence. The new vectors are re-validated.
    pub(crate) fn map_sentences<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&SentenceRecord) -> Result<Vec<f32>>,
    {
        let sentences = self
            .sentences
            .iter()
            .map(|s| f(s).map(|v| s.with_vectors(v)))
            .collect::<Result<Vec<_>>>()?;
        let mut out = EmbeddingDataset::new(self.layer, self.dim, sentences)?;
        out.special_token_ids = self.special_token_ids.clone();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_ragged_sentences() {
        assert!(matches!(
            EmbeddingDataset::new(0, 2, vec![]),
            Err(Error::Validation(_))
        ));
        let empty = SentenceRecord::new("en", vec![], vec![]);
        assert!(matches!(
            EmbeddingDataset::new(0, 2, vec![empty]),
            Err(Error::Validation(_))
        ));
        let ragged = SentenceRecord::new("en", vec![1, 2], vec![0.0; 3]);
        assert!(matches!(
            EmbeddingDataset::new(0, 2, vec![ragged]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn rejects_non_finite_components() {
        let s = SentenceRecord::new("en", vec![1], vec![0.0, f32::NAN]);
        assert!(matches!(
            EmbeddingDataset::new(0, 2, vec![s]),
            Err(Error::Data(_))
        ));
        let s = SentenceRecord::new("en", vec![1], vec![f32::INFINITY, 0.0]);
        assert!(matches!(
            EmbeddingDataset::new(0, 2, vec![s]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn languages_keep_first_appearance_order() {
        let ds = EmbeddingDataset::new(
            3,
            1,
            vec![
                SentenceRecord::new("zh", vec![1], vec![0.0]),
                SentenceRecord::new("en", vec![2, 3], vec![0.0, 1.0]),
                SentenceRecord::new("zh", vec![4], vec![2.0]),
            ],
        )
        .unwrap();
        assert_eq!(ds.languages(), vec!["zh".to_string(), "en".to_string()]);
        assert_eq!(ds.token_counts_by_language()["zh"], 2);
        assert_eq!(ds.token_counts_by_language()["en"], 2);
        assert_eq!(ds.token_count(), 4);
    }

    #[test]
    fn concat_requires_same_layer() {
        let a = EmbeddingDataset::new(1, 1, vec![SentenceRecord::new("en", vec![1], vec![0.0])])
            .unwrap();
        let b = EmbeddingDataset::new(2, 1, vec![SentenceRecord::new("en", vec![1], vec![0.0])])
            .unwrap();
        assert!(matches!(a.concat(&b), Err(Error::LayerMismatch { .. })));
        assert_eq!(a.concat(&a).unwrap().sentences().len(), 2);
    }
}
