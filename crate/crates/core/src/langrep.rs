//! Language means and the transforms built on them.
//!
//! The mean of every token vector of a language at one layer serves as that
//! language's representation. Subtracting it moves tokens towards a
//! language-agnostic space (zero-mean); adding a scaled difference of two
//! means moves tokens from one language's region to another's (mean
//! difference shift, MDS):
//!
//! ```text
//! zero_mean(h)          = h - R_src
//! mds_shift(h, alpha)   = h + alpha * (R_tgt - R_src)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedstore::{EmbeddingDataset, SentenceRecord, TokenId};
use crate::error::{Error, Result};

/// Means keyed by language code, all of one layer.
pub type LanguageMeans = BTreeMap<String, LanguageMean>;

/// Mean token vector of one language at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageMean {
    language: String,
    layer: u32,
    vector: Vec<f32>,
    token_count: u64,
}

impl LanguageMean {
    pub fn new(
        language: impl Into<String>,
        layer: u32,
        vector: Vec<f32>,
        token_count: u64,
    ) -> Result<Self> {
        if token_count == 0 {
            return Err(Error::Validation("language mean over zero tokens".into()));
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("language mean has non-finite components".into()));
        }
        Ok(LanguageMean {
            language: language.into(),
            layer,
            vector,
            token_count,
        })
    }

    /// The all-zero mean, useful as the target of a shift that should only
    /// remove the source language.
    pub fn zero(language: impl Into<String>, layer: u32, dim: usize) -> Self {
        LanguageMean {
            language: language.into(),
            layer,
            vector: vec![0.0; dim],
            token_count: 1,
        }
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn layer(&self) -> u32 {
        self.layer
    }

    pub fn vector(&self) -> &[f32] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn token_count(&self) -> u64 {
        self.token_count
    }

    pub fn norm(&self) -> f64 {
        self.vector
            .iter()
            .map(|&x| f64::from(x) * f64::from(x))
            .sum::<f64>()
            .sqrt()
    }

    /// Serializes as one JSON header line followed by the raw f32 LE vector.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = MeanFileHeader {
            language: self.language.clone(),
            layer: self.layer,
            token_count: self.token_count,
            dim: self.vector.len(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        for x in &self.vector {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format(path, "missing mean header line"))?;
        let header: MeanFileHeader = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| Error::format(path, format!("bad mean header: {e}")))?;
        let blob = &bytes[nl + 1..];
        if blob.len() != header.dim * 4 {
            return Err(Error::format(
                path,
                format!("header says dim {}, blob has {} bytes", header.dim, blob.len()),
            ));
        }
        let vector = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        LanguageMean::new(header.language, header.layer, vector, header.token_count)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[derive(Serialize, Deserialize)]
struct MeanFileHeader {
    language: String,
    layer: u32,
    token_count: u64,
    dim: usize,
}

/// Sentences per reduction chunk. Chunks are summed in parallel and then
/// combined in index order, so the result does not depend on thread count.
const MEAN_CHUNK: usize = 256;

/// Mean of every token vector of `language`, special tokens included.
pub fn compute_language_mean(dataset: &EmbeddingDataset, language: &str) -> Result<LanguageMean> {
    mean_over(dataset, language, None)
}

/// Like [`compute_language_mean`] but skips tokens whose id is in `excluded`.
pub fn compute_language_mean_excluding(
    dataset: &EmbeddingDataset,
    language: &str,
    excluded: &BTreeSet<TokenId>,
) -> Result<LanguageMean> {
    mean_over(dataset, language, Some(excluded))
}

fn mean_over(
    dataset: &EmbeddingDataset,
    language: &str,
    excluded: Option<&BTreeSet<TokenId>>,
) -> Result<LanguageMean> {
    let dim = dataset.dim();
    let sentences: Vec<&SentenceRecord> = dataset
        .sentences()
        .iter()
        .filter(|s| s.language() == language)
        .collect();

    let partials: Vec<(Vec<f64>, u64)> = sentences
        .par_chunks(MEAN_CHUNK)
        .map(|chunk| {
            let mut sum = vec![0.0f64; dim];
            let mut count = 0u64;
            for s in chunk {
                for (id, v) in s.tokens() {
                    if excluded.is_some_and(|ex| ex.contains(&id)) {
                        continue;
                    }
                    for (acc, &x) in sum.iter_mut().zip(v) {
                        *acc += f64::from(x);
                    }
                    count += 1;
                }
            }
            (sum, count)
        })
        .collect();

    let mut total = vec![0.0f64; dim];
    let mut count = 0u64;
    for (sum, n) in partials {
        for (acc, x) in total.iter_mut().zip(sum) {
            *acc += x;
        }
        count += n;
    }
    if count == 0 {
        return Err(Error::EmptyLanguage(language.to_string()));
    }
    let n = count as f64;
    let vector = total.iter().map(|&x| (x / n) as f32).collect();
    LanguageMean::new(language, dataset.layer(), vector, count)
}

/// Means for every language present in `dataset`.
pub fn compute_all_means(dataset: &EmbeddingDataset) -> Result<LanguageMeans> {
    dataset
        .languages()
        .into_iter()
        .map(|lang| compute_language_mean(dataset, &lang).map(|m| (lang, m)))
        .collect()
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Shape { expected, actual });
    }
    Ok(())
}

/// `vector - mean`, component-wise.
pub fn zero_mean(vector: &[f64], mean: &LanguageMean) -> Result<Vec<f64>> {
    check_dim(vector.len(), mean.dim())?;
    Ok(vector
        .iter()
        .zip(&mean.vector)
        .map(|(&v, &m)| v - f64::from(m))
        .collect())
}

/// `vector + alpha * (mean_tgt - mean_src)`.
pub fn mds_shift(
    vector: &[f64],
    mean_src: &LanguageMean,
    mean_tgt: &LanguageMean,
    alpha: f64,
) -> Result<Vec<f64>> {
    let offset = shift_offset(mean_src, mean_tgt, alpha)?;
    check_dim(vector.len(), offset.len())?;
    if alpha == 0.0 {
        return Ok(vector.to_vec());
    }
    Ok(vector.iter().zip(&offset).map(|(v, d)| v + d).collect())
}

/// `alpha * (mean_tgt - mean_src)` in double precision.
pub fn shift_offset(mean_src: &LanguageMean, mean_tgt: &LanguageMean, alpha: f64) -> Result<Vec<f64>> {
    if mean_src.layer != mean_tgt.layer {
        return Err(Error::LayerMismatch {
            expected: mean_src.layer,
            actual: mean_tgt.layer,
        });
    }
    check_dim(mean_src.dim(), mean_tgt.dim())?;
    Ok(mean_src
        .vector
        .iter()
        .zip(&mean_tgt.vector)
        .map(|(&s, &t)| alpha * (f64::from(t) - f64::from(s)))
        .collect())
}

/// Source, target, scale and layer of a mean difference shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub source: String,
    pub target: String,
    pub alpha: f64,
    pub layer: u32,
}

impl ShiftSpec {
    pub fn new(
        source: impl Into<String>,
        target: impl Into<String>,
        alpha: f64,
        layer: u32,
    ) -> Result<Self> {
        let spec = ShiftSpec {
            source: source.into(),
            target: target.into(),
            alpha,
            layer,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.source == self.target {
            return Err(Error::Validation(format!(
                "shift source and target are both `{}`",
                self.source
            )));
        }
        if !self.alpha.is_finite() {
            return Err(Error::Validation("shift alpha must be finite".into()));
        }
        Ok(())
    }
}

/// How to transform a dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum Shift {
    /// Subtract each sentence's own language mean.
    ZeroMean,
    /// Apply the mean difference shift to sentences of the source
    /// language; sentences of other languages are copied unchanged.
    Mds(ShiftSpec),
}

fn lookup<'a>(means: &'a LanguageMeans, language: &str, layer: u32) -> Result<&'a LanguageMean> {
    let mean = means
        .get(language)
        .ok_or_else(|| Error::MissingMean(language.to_string()))?;
    if mean.layer != layer {
        return Err(Error::LayerMismatch {
            expected: layer,
            actual: mean.layer,
        });
    }
    Ok(mean)
}

fn add_offset(vectors: &[f32], offset: &[f64]) -> Vec<f32> {
    vectors
        .chunks_exact(offset.len())
        .flat_map(|row| {
            row.iter()
                .zip(offset)
                .map(|(&x, &d)| (f64::from(x) + d) as f32)
        })
        .collect()
}

/// Transforms every token of `dataset`, returning a new dataset of the same
/// shape. Shifted components are computed in double precision and stored
/// as f32.
pub fn apply_shift_dataset(
    dataset: &EmbeddingDataset,
    shift: &Shift,
    means: &LanguageMeans,
) -> Result<EmbeddingDataset> {
    let layer = dataset.layer();
    match shift {
        Shift::ZeroMean => {
            let mut offsets: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for lang in dataset.languages() {
                let mean = lookup(means, &lang, layer)?;
                check_dim(dataset.dim(), mean.dim())?;
                let neg = mean.vector.iter().map(|&m| -f64::from(m)).collect();
                offsets.insert(lang, neg);
            }
            dataset.map_sentences(|s| Ok(add_offset(s.vectors(), &offsets[s.language()])))
        }
        Shift::Mds(spec) => {
            spec.validate()?;
            if spec.layer != layer {
                return Err(Error::LayerMismatch {
                    expected: layer,
                    actual: spec.layer,
                });
            }
            let src = lookup(means, &spec.source, layer)?;
            let tgt = lookup(means, &spec.target, layer)?;
            let offset = shift_offset(src, tgt, spec.alpha)?;
            check_dim(dataset.dim(), offset.len())?;
            dataset.map_sentences(|s| {
                if s.language() != spec.source || spec.alpha == 0.0 {
                    Ok(s.vectors().to_vec())
                } else {
                    Ok(add_offset(s.vectors(), &offset))
                }
            })
        }
    }
}
