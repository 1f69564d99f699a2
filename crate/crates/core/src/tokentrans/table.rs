//! Output-embedding tables used to map vectors back to token ids.
//!
//! File layout (little-endian):
//!
//! ```text
//! "DTBL" | version u32 (=1) | dim u32 | flags u32 (bit 0: bias present) | rows u64
//! ids    u32 x rows           (ascending)
//! rows   f32 x rows x dim
//! bias   f32 x rows           (only when flagged)
//! hash   u64                  (xxh64 of every preceding byte)
//! ```

use std::fs;
use std::path::Path;

use crate::embedstore::{checksum, TokenId, Vocabulary};
use crate::error::{Error, Result};

pub const TABLE_MAGIC: [u8; 4] = *b"DTBL";
pub const TABLE_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

/// One vector (and optional bias) per vocabulary entry, in ascending id order.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeTable {
    vocabulary: Vocabulary,
    ids: Vec<TokenId>,
    dim: usize,
    vectors: Vec<f32>,
    bias: Option<Vec<f32>>,
}

impl DecodeTable {
    /// `vectors` holds one row per id of `vocabulary`, ids ascending.
    pub fn new(
        vocabulary: Vocabulary,
        dim: usize,
        vectors: Vec<f32>,
        bias: Option<Vec<f32>>,
    ) -> Result<Self> {
        let ids: Vec<TokenId> = vocabulary.ids().collect();
        if dim == 0 || ids.is_empty() {
            return Err(Error::Validation("decode table needs rows and a positive dim".into()));
        }
        if vectors.len() != ids.len() * dim {
            return Err(Error::Validation(format!(
                "decode table has {} components for {} rows of dim {dim}",
                vectors.len(),
                ids.len()
            )));
        }
        if let Some(b) = &bias {
            if b.len() != ids.len() {
                return Err(Error::Validation(format!(
                    "decode table has {} biases for {} rows",
                    b.len(),
                    ids.len()
                )));
            }
        }
        let finite = vectors.iter().chain(bias.iter().flatten()).all(|x| x.is_finite());
        if !finite {
            return Err(Error::Data("decode table has non-finite entries".into()));
        }
        Ok(DecodeTable {
            vocabulary,
            ids,
            dim,
            vectors,
            bias,
        })
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn bias(&self, i: usize) -> f32 {
        self.bias.as_ref().map_or(0.0, |b| b[i])
    }

    pub fn has_bias(&self) -> bool {
        self.bias.is_some()
    }

    /// Row index of `id`, if the table has it.
    pub fn position(&self, id: TokenId) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    /// Stacks two tables over disjoint or overlapping vocabularies. Rows of
    /// `self` win on shared ids.
    pub fn merge(&self, other: &DecodeTable, language: &str) -> Result<DecodeTable> {
        if self.dim != other.dim {
            return Err(Error::Shape {
                expected: self.dim,
                actual: other.dim,
            });
        }
        let vocabulary = self.vocabulary.union(&other.vocabulary, language);
        let with_bias = self.has_bias() || other.has_bias();
        let mut vectors = Vec::with_capacity(vocabulary.len() * self.dim);
        let mut bias = Vec::with_capacity(vocabulary.len());
        for id in vocabulary.ids() {
            let (table, row) = match self.position(id) {
                Some(r) => (self, r),
                None => (other, other.position(id).unwrap()),
            };
            vectors.extend_from_slice(table.row(row));
            bias.push(table.bias(row));
        }
        DecodeTable::new(vocabulary, self.dim, vectors, with_bias.then_some(bias))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&TABLE_MAGIC);
        out.extend_from_slice(&TABLE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&u32::from(self.bias.is_some()).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        for id in &self.ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        for x in &self.vectors {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for b in self.bias.iter().flatten() {
            out.extend_from_slice(&b.to_le_bytes());
        }
        let h = checksum(&out);
        out.extend_from_slice(&h.to_le_bytes());
        out
    }

    /// Parses table bytes. The token strings come from `vocabulary` when
    /// given (its ids must equal the table's), otherwise ids double as names.
    pub fn from_bytes(
        bytes: &[u8],
        vocabulary: Option<Vocabulary>,
        language: &str,
        path: &Path,
    ) -> Result<Self> {
        if bytes.len() < HEADER_LEN + 8 {
            return Err(Error::format(path, "file shorter than header"));
        }
        if bytes[..4] != TABLE_MAGIC {
            return Err(Error::format(path, "bad magic bytes"));
        }
        let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != TABLE_VERSION {
            return Err(Error::format(path, format!("unsupported version {version}")));
        }
        let dim = u32_at(8) as usize;
        let flags = u32_at(12);
        let rows = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        let has_bias = flags & 1 == 1;
        let expected = rows
            .checked_mul(4 + dim * 4 + if has_bias { 4 } else { 0 })
            .and_then(|n| n.checked_add(HEADER_LEN + 8))
            .ok_or_else(|| Error::format(path, "header counts overflow"))?;
        if bytes.len() != expected {
            return Err(Error::format(
                path,
                format!("expected {expected} bytes from header, file has {}", bytes.len()),
            ));
        }
        let end = expected - 8;
        let h = u64::from_le_bytes(bytes[end..].try_into().unwrap());
        if checksum(&bytes[..end]) != h {
            return Err(Error::integrity(path, "decode table hash mismatch"));
        }
        let floats = |start: usize, n: usize| -> Vec<f32> {
            bytes[start..start + n * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect()
        };
        let ids: Vec<TokenId> = (0..rows).map(|i| u32_at(HEADER_LEN + i * 4)).collect();
        if ids.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::format(path, "table ids not strictly ascending"));
        }
        let vec_start = HEADER_LEN + rows * 4;
        let vectors = floats(vec_start, rows * dim);
        let bias = has_bias.then(|| floats(vec_start + rows * dim * 4, rows));

        let vocabulary = match vocabulary {
            Some(v) => {
                if !v.ids().eq(ids.iter().copied()) {
                    return Err(Error::Validation(format!(
                        "{}: table ids do not match the vocabulary",
                        path.display()
                    )));
                }
                v
            }
            None => Vocabulary::from_ids(language, ids.iter().copied()),
        };
        DecodeTable::new(vocabulary, dim, vectors, bias)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path, vocabulary: Option<Vocabulary>, language: &str) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, vocabulary, language, path)
    }
}
