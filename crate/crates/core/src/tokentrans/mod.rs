//! Unsupervised token translation by mean difference shift.
//!
//! Source-language token vectors are shifted towards the target language,
//! mapped back to token ids by an output-embedding table and scored with
//! BLEU-1 (adequacy) and the conversion rate (how many tokens left the
//! source language).

mod table;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedstore::{EmbeddingDataset, TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::langrep::{apply_shift_dataset, LanguageMeans, Shift, ShiftSpec};

pub use table::{DecodeTable, TABLE_MAGIC, TABLE_VERSION};

/// Argmax over table rows of `row . v + bias`; the lowest id wins ties.
/// `rows` lists the candidate row positions in ascending order.
fn decode_vector(v: &[f32], table: &DecodeTable, rows: &[usize]) -> TokenId {
    let mut best_row = rows[0];
    let mut best = f64::NEG_INFINITY;
    for &r in rows {
        let score = table
            .row(r)
            .iter()
            .zip(v)
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum::<f64>()
            + f64::from(table.bias(r));
        if score > best {
            best = score;
            best_row = r;
        }
    }
    table.ids()[best_row]
}

/// Decodes every token of every sentence to its best-scoring table id,
/// optionally searching only the ids in `restrict`.
pub fn decode_tokens(
    shifted: &EmbeddingDataset,
    table: &DecodeTable,
    restrict: Option<&BTreeSet<TokenId>>,
) -> Result<Vec<Vec<TokenId>>> {
    if shifted.dim() != table.dim() {
        return Err(Error::Shape {
            expected: table.dim(),
            actual: shifted.dim(),
        });
    }
    let rows: Vec<usize> = match restrict {
        None => (0..table.len()).collect(),
        Some(set) => {
            let mut rows = Vec::with_capacity(set.len());
            for &id in set {
                let r = table.position(id).ok_or_else(|| {
                    Error::Validation(format!("restricted id {id} is not in the decode table"))
                })?;
                rows.push(r);
            }
            rows
        }
    };
    if rows.is_empty() {
        return Err(Error::Validation("empty decode restriction".into()));
    }
    Ok(shifted
        .sentences()
        .par_iter()
        .map(|s| s.tokens().map(|(_, v)| decode_vector(v, table, &rows)).collect())
        .collect())
}

/// Tokens decoded into the target-only vocabulary, over all tokens not
/// shared by both vocabularies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConversionRate {
    /// Output tokens in `V_t - V_s`.
    pub converted: usize,
    /// Output tokens in `V_s ∩ V_t`.
    pub shared: usize,
    pub total: usize,
    /// `converted / (total - shared)`; `None` when every output token is shared.
    pub rate: Option<f64>,
}

pub fn conversion_rate(output: &[TokenId], v_src: &Vocabulary, v_tgt: &Vocabulary) -> ConversionRate {
    let mut converted = 0;
    let mut shared = 0;
    for &y in output {
        match (v_src.contains(y), v_tgt.contains(y)) {
            (false, true) => converted += 1,
            (true, true) => shared += 1,
            _ => {}
        }
    }
    let denominator = output.len() - shared;
    ConversionRate {
        converted,
        shared,
        total: output.len(),
        rate: (denominator > 0).then(|| converted as f64 / denominator as f64),
    }
}

fn counts(tokens: &[TokenId]) -> HashMap<TokenId, usize> {
    let mut m = HashMap::new();
    for &t in tokens {
        *m.entry(t).or_insert(0) += 1;
    }
    m
}

/// Corpus-level BLEU with unigrams only: clipped unigram precision times
/// the brevity penalty `min(1, exp(1 - r / c))`.
pub fn bleu1(hypotheses: &[Vec<TokenId>], references: &[Vec<TokenId>]) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::Shape {
            expected: references.len(),
            actual: hypotheses.len(),
        });
    }
    let mut clipped = 0usize;
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (h, r) in hypotheses.iter().zip(references) {
        let rc = counts(r);
        for (tok, n) in counts(h) {
            clipped += n.min(rc.get(&tok).copied().unwrap_or(0));
        }
        hyp_len += h.len();
        ref_len += r.len();
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let precision = clipped as f64 / hyp_len as f64;
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(precision * bp)
}

/// Reads one reference per line as whitespace-separated token ids.
pub fn parse_references(text: &str) -> Result<Vec<Vec<TokenId>>> {
    text.lines()
        .enumerate()
        .map(|(lineno, line)| {
            line.split_whitespace()
                .map(|t| {
                    t.parse().map_err(|_| {
                        Error::Validation(format!("reference line {}: bad id `{t}`", lineno + 1))
                    })
                })
                .collect()
        })
        .collect()
}

pub fn read_references(path: &Path) -> Result<Vec<Vec<TokenId>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_references(&text)
}

pub fn format_references(refs: &[Vec<TokenId>]) -> String {
    let mut out = String::new();
    for r in refs {
        let line: Vec<String> = r.iter().map(u32::to_string).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Everything a translation evaluation needs apart from the shift itself.
#[derive(Debug, Clone, Copy)]
pub struct TranslationTask<'a> {
    /// Source-language sentences at the shift layer.
    pub dataset: &'a EmbeddingDataset,
    pub means: &'a LanguageMeans,
    pub table: &'a DecodeTable,
    /// One target-language reference per sentence.
    pub references: &'a [Vec<TokenId>],
    pub source_vocab: &'a Vocabulary,
    pub target_vocab: &'a Vocabulary,
    pub restrict: Option<&'a BTreeSet<TokenId>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationEvalReport {
    pub src: String,
    pub tgt: String,
    pub alpha: f64,
    pub layer: u32,
    pub bleu1: f64,
    /// `None` when every decoded token is shared by both vocabularies.
    pub conversion_rate: Option<f64>,
    pub n_sentences: usize,
    pub n_tokens: usize,
    pub n_converted: usize,
    pub n_shared: usize,
}

/// Shifts, decodes and scores one (alpha, layer) point.
pub fn translate_and_score(task: &TranslationTask<'_>, spec: &ShiftSpec) -> Result<TranslationEvalReport> {
    let ds = task.dataset;
    if spec.layer != ds.layer() {
        return Err(Error::LayerMismatch {
            expected: ds.layer(),
            actual: spec.layer,
        });
    }
    if task.references.len() != ds.sentences().len() {
        return Err(Error::Shape {
            expected: ds.sentences().len(),
            actual: task.references.len(),
        });
    }
    let shifted = apply_shift_dataset(ds, &Shift::Mds(spec.clone()), task.means)?;
    let decoded = decode_tokens(&shifted, task.table, task.restrict)?;
    let flat: Vec<TokenId> = decoded.iter().flatten().copied().collect();
    let conv = conversion_rate(&flat, task.source_vocab, task.target_vocab);
    let bleu = bleu1(&decoded, task.references)?;
    Ok(TranslationEvalReport {
        src: spec.source.clone(),
        tgt: spec.target.clone(),
        alpha: spec.alpha,
        layer: spec.layer,
        bleu1: bleu,
        conversion_rate: conv.rate,
        n_sentences: decoded.len(),
        n_tokens: conv.total,
        n_converted: conv.converted,
        n_shared: conv.shared,
    })
}

/// Per-layer inputs of a sweep.
#[derive(Debug, Clone)]
pub struct LayerInputs {
    pub dataset: EmbeddingDataset,
    pub means: LanguageMeans,
    pub table: DecodeTable,
}

#[derive(Debug, Clone, Copy)]
pub struct SweepInputs<'a> {
    pub layers: &'a BTreeMap<u32, LayerInputs>,
    pub references: &'a [Vec<TokenId>],
    pub source_vocab: &'a Vocabulary,
    pub target_vocab: &'a Vocabulary,
    pub restrict: Option<&'a BTreeSet<TokenId>>,
}

/// One report per (layer, alpha), layers outermost, both in the given order.
pub fn sweep_alpha(
    inputs: &SweepInputs<'_>,
    source: &str,
    target: &str,
    alphas: &[f64],
    layers: &[u32],
) -> Result<Vec<TranslationEvalReport>> {
    if alphas.is_empty() || layers.is_empty() {
        return Err(Error::Validation("sweep grids must be non-empty".into()));
    }
    let grid: Vec<(u32, f64)> = layers
        .iter()
        .flat_map(|&l| alphas.iter().map(move |&a| (l, a)))
        .collect();
    grid.par_iter()
        .map(|&(layer, alpha)| {
            let li = inputs
                .layers
                .get(&layer)
                .ok_or_else(|| Error::Validation(format!("no inputs for layer {layer}")))?;
            let task = TranslationTask {
                dataset: &li.dataset,
                means: &li.means,
                table: &li.table,
                references: inputs.references,
                source_vocab: inputs.source_vocab,
                target_vocab: inputs.target_vocab,
                restrict: inputs.restrict,
            };
            translate_and_score(&task, &ShiftSpec::new(source, target, alpha, layer)?)
        })
        .collect()
}

pub const SWEEP_CSV_HEADER: [&str; 7] =
    ["src", "tgt", "alpha", "layer", "bleu1", "conversion_rate", "n_tokens"];

/// CSV with columns `src,tgt,alpha,layer,bleu1,conversion_rate,n_tokens`.
/// An undefined conversion rate is written as `undefined`.
pub fn reports_to_csv(reports: &[TranslationEvalReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_CSV_HEADER).unwrap();
    for r in reports {
        let rate = r
            .conversion_rate
            .map_or_else(|| "undefined".to_string(), |x| x.to_string());
        w.write_record([
            r.src.clone(),
            r.tgt.clone(),
            r.alpha.to_string(),
            r.layer.to_string(),
            r.bleu1.to_string(),
            rate,
            r.n_tokens.to_string(),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedstore::SentenceRecord;
    use crate::langrep::compute_all_means;
    use proptest::prelude::*;

    fn one_hot_table(n: usize) -> DecodeTable {
        let mut v = vec![0.0f32; n * n];
        for i in 0..n {
            v[i * n + i] = 1.0;
        }
        DecodeTable::new(Vocabulary::from_ids("xx", 0..n as u32), n, v, None).unwrap()
    }

    fn single(dim: usize, ids: Vec<u32>, vectors: Vec<f32>) -> EmbeddingDataset {
        EmbeddingDataset::new(0, dim, vec![SentenceRecord::new("en", ids, vectors)]).unwrap()
    }

    #[test]
    fn exact_row_decodes_to_its_id() {
        let t = one_hot_table(5);
        let ds = single(5, vec![0], t.row(3).to_vec());
        assert_eq!(decode_tokens(&ds, &t, None).unwrap(), vec![vec![3]]);
    }

    #[test]
    fn identical_rows_pick_lower_id() {
        let t = DecodeTable::new(
            Vocabulary::from_ids("xx", [4, 7, 9]),
            2,
            vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0],
            None,
        )
        .unwrap();
        let ds = single(2, vec![0], vec![2.0, 0.5]);
        assert_eq!(decode_tokens(&ds, &t, None).unwrap(), vec![vec![7]]);
    }

    #[test]
    fn restriction_and_bias() {
        let t = one_hot_table(3);
        let ds = single(3, vec![0], vec![0.9, 1.0, 0.0]);
        assert_eq!(decode_tokens(&ds, &t, None).unwrap(), vec![vec![1]]);
        let only: BTreeSet<u32> = [0, 2].into();
        assert_eq!(decode_tokens(&ds, &t, Some(&only)).unwrap(), vec![vec![0]]);
        let bad: BTreeSet<u32> = [0, 8].into();
        assert!(decode_tokens(&ds, &t, Some(&bad)).is_err());
        let biased = DecodeTable::new(
            Vocabulary::from_ids("xx", 0..3),
            3,
            t.row(0).iter().chain(t.row(1)).chain(t.row(2)).copied().collect(),
            Some(vec![0.2, 0.0, 0.0]),
        )
        .unwrap();
        assert_eq!(decode_tokens(&ds, &biased, None).unwrap(), vec![vec![0]]);
        let wide = single(2, vec![0], vec![1.0, 0.0]);
        assert!(matches!(decode_tokens(&wide, &t, None), Err(Error::Shape { .. })));
    }

    #[test]
    fn conversion_rate_examples() {
        let vs = Vocabulary::from_ids("en", [1, 2, 10]);
        let vt = Vocabulary::from_ids("zh", [3, 4, 10]);
        assert_eq!(conversion_rate(&[3, 4, 3], &vs, &vt).rate, Some(1.0));
        let all_shared = conversion_rate(&[10, 10], &vs, &vt);
        assert_eq!(all_shared.rate, None);
        assert_eq!(all_shared.shared, 2);
        let mixed = conversion_rate(&[3, 1, 10], &vs, &vt);
        assert_eq!(mixed.rate, Some(0.5));
        assert_eq!(conversion_rate(&[], &vs, &vt).rate, None);
        // Tokens outside both vocabularies stay in the denominator.
        assert_eq!(conversion_rate(&[3, 99], &vs, &vt).rate, Some(0.5));
    }

    #[test]
    fn bleu1_examples() {
        let a = vec![vec![1, 2, 3], vec![4]];
        assert_eq!(bleu1(&a, &a).unwrap(), 1.0);
        assert_eq!(bleu1(&[vec![1, 2]], &[vec![3, 4]]).unwrap(), 0.0);
        let b = bleu1(&[vec![1, 1, 2]], &[vec![1, 2, 3]]).unwrap();
        assert!((b - 2.0 / 3.0).abs() < 1e-4);
        // Short hypothesis: precision 1, BP = exp(1 - 4/2).
        let short = bleu1(&[vec![1, 2]], &[vec![1, 2, 3, 4]]).unwrap();
        assert!((short - (-1.0f64).exp()).abs() < 1e-12);
        assert_eq!(bleu1(&[vec![]], &[vec![1]]).unwrap(), 0.0);
        assert_eq!(bleu1(&[], &[]).unwrap(), 0.0);
        assert!(bleu1(&[vec![1]], &[]).is_err());
    }

    #[test]
    fn references_round_trip() {
        let refs = vec![vec![1, 2, 3], vec![], vec![42]];
        assert_eq!(parse_references(&format_references(&refs)).unwrap(), refs);
        assert!(parse_references("1 x 3\n").is_err());
    }

    #[test]
    fn alpha_zero_round_trip_recovers_input_ids() {
        // Table = the source token vectors, with bias -|row|^2/2 so the
        // best row is the nearest one.
        let rows: Vec<Vec<f32>> = vec![
            vec![1.0, 0.0, 0.5],
            vec![0.0, 2.0, 0.0],
            vec![-1.0, 0.5, 1.0],
            vec![0.3, 0.3, -2.0],
        ];
        let bias: Vec<f32> = rows
            .iter()
            .map(|r| -0.5 * r.iter().map(|x| x * x).sum::<f32>())
            .collect();
        let src_ids = [10u32, 11, 12, 13];
        let vocab_src = Vocabulary::from_ids("en", src_ids);
        let vocab_tgt = Vocabulary::from_ids("zh", [20u32, 21]);
        let table = DecodeTable::new(vocab_src.clone(), 3, rows.concat(), Some(bias)).unwrap();
        let sentences = vec![
            SentenceRecord::new("en", vec![12, 10], [rows[2].clone(), rows[0].clone()].concat()),
            SentenceRecord::new("en", vec![13, 11, 11], [rows[3].clone(), rows[1].clone(), rows[1].clone()].concat()),
            SentenceRecord::new("zh", vec![20], vec![0.0, 0.0, 1.0]),
        ];
        let ds = EmbeddingDataset::new(7, 3, sentences).unwrap();
        let means = compute_all_means(&ds).unwrap();
        let en_only = EmbeddingDataset::new(7, 3, ds.sentences()[..2].to_vec()).unwrap();
        let refs = vec![vec![20], vec![21]];
        let task = TranslationTask {
            dataset: &en_only,
            means: &means,
            table: &table,
            references: &refs,
            source_vocab: &vocab_src,
            target_vocab: &vocab_tgt,
            restrict: None,
        };
        let spec = ShiftSpec::new("en", "zh", 0.0, 7).unwrap();
        let shifted = apply_shift_dataset(&en_only, &Shift::Mds(spec.clone()), &means).unwrap();
        let decoded = decode_tokens(&shifted, &table, None).unwrap();
        assert_eq!(decoded, vec![vec![12, 10], vec![13, 11, 11]]);
        let report = translate_and_score(&task, &spec).unwrap();
        assert_eq!(report.conversion_rate, Some(0.0));
        assert_eq!(report.n_tokens, 5);
        assert_eq!(report.bleu1, 0.0);

        let wrong_layer = ShiftSpec::new("en", "zh", 1.0, 3).unwrap();
        assert!(matches!(
            translate_and_score(&task, &wrong_layer),
            Err(Error::LayerMismatch { .. })
        ));
        let short_refs = vec![vec![20]];
        let task2 = TranslationTask { references: &short_refs, ..task };
        assert!(matches!(translate_and_score(&task2, &spec), Err(Error::Shape { .. })));
    }

    #[test]
    fn csv_has_expected_columns() {
        let r = TranslationEvalReport {
            src: "en".into(),
            tgt: "zh".into(),
            alpha: 1.5,
            layer: 10,
            bleu1: 0.25,
            conversion_rate: None,
            n_sentences: 1,
            n_tokens: 4,
            n_converted: 0,
            n_shared: 4,
        };
        let csv = reports_to_csv(&[r]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("src,tgt,alpha,layer,bleu1,conversion_rate,n_tokens"));
        assert_eq!(lines.next(), Some("en,zh,1.5,10,0.25,undefined,4"));
    }

    proptest! {
        #[test]
        fn bleu1_bounded_and_permutation_invariant(
            corpus in proptest::collection::vec(
                (proptest::collection::vec(0u32..6, 0..8), proptest::collection::vec(0u32..6, 1..8)),
                1..6,
            ),
            rotate in 0usize..8,
        ) {
            let (hyps, refs): (Vec<_>, Vec<_>) = corpus.into_iter().unzip();
            let b = bleu1(&hyps, &refs).unwrap();
            prop_assert!((0.0..=1.0).contains(&b));
            let rotated: Vec<Vec<u32>> = hyps.iter().map(|h| {
                let mut h = h.clone();
                if !h.is_empty() {
                    let n = rotate % h.len();
                    h.rotate_left(n);
                }
                h
            }).collect();
            prop_assert_eq!(bleu1(&rotated, &refs).unwrap(), b);
            prop_assert_eq!(bleu1(&refs, &refs).unwrap(), 1.0);
        }

        #[test]
        fn conversion_rate_in_unit_interval(
            src in proptest::collection::btree_set(0u32..20, 0..12),
            tgt in proptest::collection::btree_set(0u32..20, 0..12),
            out in proptest::collection::vec(0u32..25, 0..30),
        ) {
            let c = conversion_rate(&out, &Vocabulary::from_ids("s", src), &Vocabulary::from_ids("t", tgt));
            if let Some(r) = c.rate {
                prop_assert!((0.0..=1.0).contains(&r));
            }
            prop_assert!(c.converted + c.shared <= c.total);
        }

        #[test]
        fn dominated_row_never_changes_decoding(
            rows in proptest::collection::vec(proptest::collection::vec(-1.0f32..1.0, 3), 1..6),
            input in proptest::collection::vec(proptest::collection::vec(-2.0f32..2.0, 3), 1..5),
        ) {
            // A row with a very negative bias scores below every other row
            // for inputs of bounded norm.
            let n = rows.len() as u32;
            let table = DecodeTable::new(Vocabulary::from_ids("x", 0..n), 3, rows.concat(), None).unwrap();
            let mut with_extra_rows = rows.concat();
            with_extra_rows.extend_from_slice(&[0.5, 0.5, 0.5]);
            let mut bias = vec![0.0; rows.len()];
            bias.push(-1e3);
            let bigger = DecodeTable::new(Vocabulary::from_ids("x", 0..=n), 3, with_extra_rows, Some(bias)).unwrap();
            let ids = (0..input.len() as u32).collect();
            let ds = EmbeddingDataset::new(0, 3, vec![SentenceRecord::new("en", ids, input.concat())]).unwrap();
            prop_assert_eq!(decode_tokens(&ds, &table, None).unwrap(), decode_tokens(&ds, &bigger, None).unwrap());
        }
    }
}
