use std::fs;
use std::path::Path;

use super::manifest::{manifest_path, Checksums, CorpusManifest};
use super::{EmbeddingDataset, SentenceRecord, TokenId};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"EMBD";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 32;

/// xxh64 with seed 0, the hash used for every section and the trailer.
pub(crate) fn checksum(bytes: &[u8]) -> u64 {
    twox_hash::XxHash64::oneshot(0, bytes)
}

fn hex(h: u64) -> String {
    format!("{h:016x}")
}

struct Sections {
    bytes: Vec<u8>,
    offsets: std::ops::Range<usize>,
    ids: std::ops::Range<usize>,
    vectors: std::ops::Range<usize>,
}

impl Sections {
    fn checksums(&self) -> Checksums {
        let payload_end = self.vectors.end;
        Checksums {
            offsets: hex(checksum(&self.bytes[self.offsets.clone()])),
            token_ids: hex(checksum(&self.bytes[self.ids.clone()])),
            vectors: hex(checksum(&self.bytes[self.vectors.clone()])),
            payload: hex(checksum(&self.bytes[..payload_end])),
        }
    }
}

fn encode_sections(dataset: &EmbeddingDataset) -> Sections {
    let sentence_count = dataset.sentences().len();
    let token_count = dataset.token_count();
    let dim = dataset.dim();
    let total = HEADER_LEN + sentence_count * 8 + token_count * 4 + token_count * dim * 4 + 8;
    let mut bytes = Vec::with_capacity(total);

    bytes.extend_from_slice(&MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&dataset.layer().to_le_bytes());
    bytes.extend_from_slice(&(dim as u32).to_le_bytes());
    bytes.extend_from_slice(&(sentence_count as u64).to_le_bytes());
    bytes.extend_from_slice(&(token_count as u64).to_le_bytes());

    let offsets_start = bytes.len();
    let mut offset = 0u64;
    for s in dataset.sentences() {
        bytes.extend_from_slice(&offset.to_le_bytes());
        offset += s.token_count() as u64;
    }
    let ids_start = bytes.len();
    for s in dataset.sentences() {
        for id in s.token_ids() {
            bytes.extend_from_slice(&id.to_le_bytes());
        }
    }
    let vectors_start = bytes.len();
    for s in dataset.sentences() {
        for x in s.vectors() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    let vectors_end = bytes.len();
    let trailer = checksum(&bytes);
    bytes.extend_from_slice(&trailer.to_le_bytes());

    Sections {
        bytes,
        offsets: offsets_start..ids_start,
        ids: ids_start..vectors_start,
        vectors: vectors_start..vectors_end,
    }
}

/// Serializes a dataset into dump bytes and the matching manifest.
pub fn encode_dump(dataset: &EmbeddingDataset) -> (Vec<u8>, CorpusManifest) {
    let sections = encode_sections(dataset);
    let manifest = CorpusManifest::describe(dataset, sections.checksums());
    (sections.bytes, manifest)
}

/// Writes `path` and its manifest sidecar.
pub fn write_dump(dataset: &EmbeddingDataset, path: &Path) -> Result<CorpusManifest> {
    let (bytes, manifest) = encode_dump(dataset);
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    manifest.write(&manifest_path(path))?;
    Ok(manifest)
}

/// Reads a dump and its manifest sidecar.
pub fn load_dump(path: &Path) -> Result<EmbeddingDataset> {
    load_dump_with_manifest(path).map(|(ds, _)| ds)
}

pub fn load_dump_with_manifest(path: &Path) -> Result<(EmbeddingDataset, CorpusManifest)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    let manifest = CorpusManifest::read(&mpath)?;
    let dataset = decode_dump(&bytes, &manifest, path)?;
    Ok((dataset, manifest))
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn u64_at(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
}

/// Parses dump bytes, checking them against `manifest`. `path` only labels errors.
pub fn decode_dump(
    bytes: &[u8],
    manifest: &CorpusManifest,
    path: &Path,
) -> Result<EmbeddingDataset> {
    if bytes.len() < HEADER_LEN + 8 {
        return Err(Error::format(path, "file shorter than header"));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::format(path, "bad magic bytes"));
    }
    let version = u32_at(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let layer = u32_at(bytes, 8);
    let dim = u32_at(bytes, 12) as usize;
    let sentence_count = u64_at(bytes, 16);
    let token_count = u64_at(bytes, 24);

    let expected_len = (|| {
        let s = usize::try_from(sentence_count).ok()?;
        let t = usize::try_from(token_count).ok()?;
        let vec_bytes = t.checked_mul(dim)?.checked_mul(4)?;
        HEADER_LEN
            .checked_add(s.checked_mul(8)?)?
            .checked_add(t.checked_mul(4)?)?
            .checked_add(vec_bytes)?
            .checked_add(8)
    })()
    .ok_or_else(|| Error::format(path, "header counts overflow"))?;
    if bytes.len() != expected_len {
        return Err(Error::format(
            path,
            format!("expected {expected_len} bytes from header, file has {}", bytes.len()),
        ));
    }

    let payload_end = expected_len - 8;
    let trailer = u64_at(bytes, payload_end);
    if checksum(&bytes[..payload_end]) != trailer {
        return Err(Error::integrity(path, "payload hash mismatch"));
    }

    let s = sentence_count as usize;
    let t = token_count as usize;
    let sections = Sections {
        bytes: Vec::new(),
        offsets: HEADER_LEN..HEADER_LEN + s * 8,
        ids: HEADER_LEN + s * 8..HEADER_LEN + s * 8 + t * 4,
        vectors: HEADER_LEN + s * 8 + t * 4..payload_end,
    };
    check_manifest(bytes, &sections, manifest, layer, dim, sentence_count, token_count, path)?;

    let offsets: Vec<usize> = (0..s)
        .map(|i| u64_at(bytes, sections.offsets.start + i * 8) as usize)
        .collect();
    if s > 0 && offsets[0] != 0 {
        return Err(Error::format(path, "first sentence offset is not zero"));
    }
    for w in offsets.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::format(path, "sentence offsets not strictly increasing"));
        }
    }
    if offsets.last().is_some_and(|&o| o >= t) {
        return Err(Error::format(path, "sentence offset beyond token count"));
    }

    let ids: Vec<TokenId> = (0..t)
        .map(|i| u32_at(bytes, sections.ids.start + i * 4))
        .collect();
    let vectors: Vec<f32> = bytes[sections.vectors.clone()]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(pos) = vectors.iter().position(|x| !x.is_finite()) {
        return Err(Error::Data(format!(
            "{}: non-finite component at token {}",
            path.display(),
            pos / dim.max(1)
        )));
    }

    let languages = manifest.sentence_language_list();
    let mut sentences = Vec::with_capacity(s);
    for i in 0..s {
        let start = offsets[i];
        let end = if i + 1 < s { offsets[i + 1] } else { t };
        sentences.push(SentenceRecord::new(
            languages[i],
            ids[start..end].to_vec(),
            vectors[start * dim..end * dim].to_vec(),
        ));
    }
    let dataset = EmbeddingDataset::new(layer, dim, sentences)?
        .with_special_tokens(manifest.special_token_ids.iter().copied());

    if dataset.token_counts_by_language() != manifest.token_counts {
        return Err(Error::integrity(
            path,
            "per-language token counts differ from manifest",
        ));
    }
    Ok(dataset)
}

#[allow(clippy::too_many_arguments)]
fn check_manifest(
    bytes: &[u8],
    sections: &Sections,
    manifest: &CorpusManifest,
    layer: u32,
    dim: usize,
    sentence_count: u64,
    token_count: u64,
    path: &Path,
) -> Result<()> {
    let mismatch = |what: &str| Err(Error::integrity(path, format!("manifest {what} mismatch")));
    if manifest.format_version != FORMAT_VERSION {
        return mismatch("format version");
    }
    if manifest.layer != layer {
        return mismatch("layer");
    }
    if manifest.dim as usize != dim {
        return mismatch("dim");
    }
    if manifest.sentence_count != sentence_count {
        return mismatch("sentence count");
    }
    if manifest.token_count != token_count {
        return mismatch("token count");
    }
    let run_total: u64 = manifest.sentence_languages.iter().map(|r| r.sentences).sum();
    if run_total != sentence_count {
        return mismatch("sentence language runs");
    }
    let c = &manifest.checksums;
    let checks = [
        ("offsets checksum", &c.offsets, &bytes[sections.offsets.clone()]),
        ("token id checksum", &c.token_ids, &bytes[sections.ids.clone()]),
        ("vector checksum", &c.vectors, &bytes[sections.vectors.clone()]),
        ("payload checksum", &c.payload, &bytes[..sections.vectors.end]),
    ];
    for (what, recorded, section) in checks {
        if !recorded.eq_ignore_ascii_case(&hex(checksum(section))) {
            return mismatch(what);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn tiny() -> EmbeddingDataset {
        EmbeddingDataset::new(
            8,
            4,
            vec![SentenceRecord::new(
                "en",
                vec![101, 7],
                vec![0.5, -1.0, 2.0, 0.0, 3.25, -0.0, 1e-30, 7.0],
            )],
        )
        .unwrap()
    }

    #[test]
    fn smallest_valid_file_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("en.l8.embd");
        let manifest = write_dump(&tiny(), &path).unwrap();
        assert_eq!(manifest.sentence_count, 1);
        assert_eq!(manifest.token_counts["en"], 2);
        let loaded = load_dump(&path).unwrap();
        assert_eq!(loaded.sentences().len(), 1);
        assert_eq!(loaded.dim(), 4);
        let bits = |d: &EmbeddingDataset| -> Vec<u32> {
            d.sentences()[0].vectors().iter().map(|x| x.to_bits()).collect()
        };
        assert_eq!(bits(&loaded), bits(&tiny()));
    }

    #[test]
    fn header_layout_is_bit_exact() {
        let (bytes, _) = encode_dump(&tiny());
        assert_eq!(&bytes[..4], b"EMBD");
        assert_eq!(u32_at(&bytes, 4), 1);
        assert_eq!(u32_at(&bytes, 8), 8);
        assert_eq!(u32_at(&bytes, 12), 4);
        assert_eq!(u64_at(&bytes, 16), 1);
        assert_eq!(u64_at(&bytes, 24), 2);
        assert_eq!(u64_at(&bytes, 32), 0);
        assert_eq!(u32_at(&bytes, 40), 101);
        assert_eq!(u32_at(&bytes, 44), 7);
        assert_eq!(f32::from_le_bytes(bytes[48..52].try_into().unwrap()), 0.5);
        assert_eq!(bytes.len(), 32 + 8 + 8 + 32 + 8);
        let trailer = u64_at(&bytes, bytes.len() - 8);
        assert_eq!(trailer, checksum(&bytes[..bytes.len() - 8]));
    }

    #[test]
    fn bad_magic_and_version_are_format_errors() {
        let (mut bytes, manifest) = encode_dump(&tiny());
        let p = Path::new("x.embd");
        bytes[0] = b'X';
        assert!(matches!(
            decode_dump(&bytes, &manifest, p),
            Err(Error::Format { .. })
        ));
        let (mut bytes, _) = encode_dump(&tiny());
        bytes[4] = 2;
        assert!(matches!(
            decode_dump(&bytes, &manifest, p),
            Err(Error::Format { .. })
        ));
        let (bytes, _) = encode_dump(&tiny());
        assert!(matches!(
            decode_dump(&bytes[..bytes.len() - 4], &manifest, p),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn every_flipped_payload_byte_is_detected() {
        let (bytes, manifest) = encode_dump(&tiny());
        for at in HEADER_LEN..bytes.len() {
            let mut corrupt = bytes.clone();
            corrupt[at] ^= 0x10;
            let err = decode_dump(&corrupt, &manifest, Path::new("x.embd")).unwrap_err();
            assert!(matches!(err, Error::Integrity { .. }), "byte {at}: {err}");
        }
    }

    #[test]
    fn nan_payload_with_valid_hash_is_data_error() {
        let ds = tiny();
        let (mut bytes, mut manifest) = encode_dump(&ds);
        let at = bytes.len() - 8 - 4;
        bytes[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        let end = bytes.len() - 8;
        let trailer = checksum(&bytes[..end]);
        bytes[end..].copy_from_slice(&trailer.to_le_bytes());
        let vec_start = 32 + 8 + 8;
        manifest.checksums.vectors = hex(checksum(&bytes[vec_start..end]));
        manifest.checksums.payload = hex(trailer);
        assert!(matches!(
            decode_dump(&bytes, &manifest, Path::new("x.embd")),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn manifest_count_mismatch_is_integrity_error() {
        let (bytes, mut manifest) = encode_dump(&tiny());
        manifest.token_counts.insert("en".into(), 3);
        assert!(matches!(
            decode_dump(&bytes, &manifest, Path::new("x.embd")),
            Err(Error::Integrity { .. })
        ));
        let (bytes, mut manifest) = encode_dump(&tiny());
        manifest.sentence_languages[0].sentences = 2;
        assert!(matches!(
            decode_dump(&bytes, &manifest, Path::new("x.embd")),
            Err(Error::Integrity { .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error_naming_path() {
        let err = load_dump(Path::new("/nonexistent/foo.embd")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("/nonexistent/foo.embd"));
    }

    #[test]
    fn loading_leaves_file_untouched() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.embd");
        write_dump(&tiny(), &path).unwrap();
        let before = fs::read(&path).unwrap();
        let mtime = fs::metadata(&path).unwrap().modified().unwrap();
        load_dump(&path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), before);
        assert_eq!(fs::metadata(&path).unwrap().modified().unwrap(), mtime);
    }

    #[test]
    fn special_tokens_survive_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.embd");
        let ds = tiny().with_special_tokens([101]);
        write_dump(&ds, &path).unwrap();
        let loaded = load_dump(&path).unwrap();
        assert!(loaded.special_token_ids().contains(&101));
        assert_eq!(loaded, ds);
    }
}
