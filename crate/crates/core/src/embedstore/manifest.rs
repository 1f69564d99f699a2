use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EmbeddingDataset, TokenId};
use crate::error::{Error, Result};

pub const MANIFEST_SUFFIX: &str = ".manifest.json";

/// Path of the manifest that accompanies a dump file.
pub fn manifest_path(dump: &Path) -> PathBuf {
    let mut name = dump.as_os_str().to_os_string();
    name.push(MANIFEST_SUFFIX);
    PathBuf::from(name)
}

/// A run of consecutive sentences sharing one language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageRun {
    pub language: String,
    pub sentences: u64,
}

/// Section hashes, hex-encoded xxh64 (seed 0).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checksums {
    pub offsets: String,
    pub token_ids: String,
    pub vectors: String,
    pub payload: String,
}

/// JSON sidecar describing a dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format_version: u32,
    pub layer: u32,
    pub dim: u32,
    pub sentence_count: u64,
    pub token_count: u64,
    pub languages: Vec<String>,
    pub sentence_languages: Vec<LanguageRun>,
    pub token_counts: BTreeMap<String, u64>,
    pub checksums: Checksums,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub special_token_ids: Vec<TokenId>,
    /// Encoder checkpoint the dump was extracted from, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncated_sentences: Option<u64>,
}

impl CorpusManifest {
    pub(crate) fn describe(dataset: &EmbeddingDataset, checksums: Checksums) -> Self {
        let mut runs: Vec<LanguageRun> = Vec::new();
        for s in dataset.sentences() {
            match runs.last_mut() {
                Some(run) if run.language == s.language() => run.sentences += 1,
                _ => runs.push(LanguageRun {
                    language: s.language().to_string(),
                    sentences: 1,
                }),
            }
        }
        CorpusManifest {
            format_version: super::dump::FORMAT_VERSION,
            layer: dataset.layer(),
            dim: dataset.dim() as u32,
            sentence_count: dataset.sentences().len() as u64,
            token_count: dataset.token_count() as u64,
            languages: dataset.languages(),
            sentence_languages: runs,
            token_counts: dataset.token_counts_by_language(),
            checksums,
            special_token_ids: dataset.special_token_ids().iter().copied().collect(),
            model: None,
            truncated_sentences: None,
        }
    }

    /// Expands the run-length language list into one code per sentence.
    pub fn sentence_language_list(&self) -> Vec<&str> {
        self.sentence_languages
            .iter()
            .flat_map(|run| std::iter::repeat_n(run.language.as_str(), run.sentences as usize))
            .collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
