use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmbeddingDataset, TokenId};
use crate::error::{Error, Result};

/// Where a vocabulary's token set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocabSource {
    /// Read from an `id<TAB>token` file.
    Tsv,
    /// Collected from the token ids that occur in a dataset.
    Observed,
}

/// The token set of one language with id to string lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    language: String,
    entries: BTreeMap<TokenId, String>,
    source: VocabSource,
}

impl Vocabulary {
    pub fn new(
        language: impl Into<String>,
        entries: BTreeMap<TokenId, String>,
        source: VocabSource,
    ) -> Result<Self> {
        if let Some((id, _)) = entries.iter().find(|(_, s)| s.is_empty()) {
            return Err(Error::Validation(format!("token {id} has an empty string")));
        }
        Ok(Vocabulary {
            language: language.into(),
            entries,
            source,
        })
    }

    /// Vocabulary whose token strings are the decimal ids.
    pub fn from_ids(language: impl Into<String>, ids: impl IntoIterator<Item = TokenId>) -> Self {
        Vocabulary {
            language: language.into(),
            entries: ids.into_iter().map(|id| (id, id.to_string())).collect(),
            source: VocabSource::Observed,
        }
    }

    /// Token set observed for `language` in `dataset`. Strings are taken
    /// from `names` when it knows the id, otherwise the decimal id is used.
    pub fn from_dataset(
        dataset: &EmbeddingDataset,
        language: &str,
        names: Option<&Vocabulary>,
    ) -> Self {
        let entries = dataset
            .sentences()
            .iter()
            .filter(|s| s.language() == language)
            .flat_map(|s| s.token_ids().iter().copied())
            .map(|id| {
                let name = names
                    .and_then(|v| v.token(id))
                    .map(str::to_string)
                    .unwrap_or_else(|| id.to_string());
                (id, name)
            })
            .collect();
        Vocabulary {
            language: language.to_string(),
            entries,
            source: VocabSource::Observed,
        }
    }

    pub fn parse_tsv(language: impl Into<String>, text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.is_empty() {
                continue;
            }
            let (id, token) = line.split_once('\t').ok_or_else(|| {
                Error::Validation(format!("vocabulary line {}: missing tab", lineno + 1))
            })?;
            let id: TokenId = id.trim().parse().map_err(|_| {
                Error::Validation(format!("vocabulary line {}: bad id `{id}`", lineno + 1))
            })?;
            if token.is_empty() {
                return Err(Error::Validation(format!(
                    "vocabulary line {}: empty token",
                    lineno + 1
                )));
            }
            if entries.insert(id, token.to_string()).is_some() {
                return Err(Error::Validation(format!(
                    "vocabulary line {}: duplicate id {id}",
                    lineno + 1
                )));
            }
        }
        Vocabulary::new(language, entries, VocabSource::Tsv)
    }

    pub fn read_tsv(language: impl Into<String>, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(language, &text)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (id, token) in &self.entries {
            let _ = writeln!(out, "{id}\t{token}");
        }
        out
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn source(&self) -> VocabSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.entries.get(&id).map(String::as_str)
    }

    /// Ids in ascending order.
    pub fn ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.entries.keys().copied()
    }

    pub fn id_set(&self) -> BTreeSet<TokenId> {
        self.entries.keys().copied().collect()
    }

    pub fn entries(&self) -> &BTreeMap<TokenId, String> {
        &self.entries
    }

    /// Union of two vocabularies. Strings from `self` win on shared ids.
    pub fn union(&self, other: &Vocabulary, language: impl Into<String>) -> Vocabulary {
        let mut entries = other.entries.clone();
        entries.extend(self.entries.iter().map(|(k, v)| (*k, v.clone())));
        let source = if self.source == VocabSource::Tsv && other.source == VocabSource::Tsv {
            VocabSource::Tsv
        } else {
            VocabSource::Observed
        };
        Vocabulary {
            language: language.into(),
            entries,
            source,
        }
    }
}

/// Token-set sizes of two vocabularies and of their intersection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabStats {
    pub size_a: usize,
    pub size_b: usize,
    pub intersection: usize,
}

pub fn vocab_stats(a: &Vocabulary, b: &Vocabulary) -> VocabStats {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let intersection = small.ids().filter(|id| large.contains(*id)).count();
    VocabStats {
        size_a: a.len(),
        size_b: b.len(),
        intersection,
    }
}
