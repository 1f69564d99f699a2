//! Synthetic bilingual corpus with known language offsets.
//!
//! Every token is `semantic(concept) + offset(language) + noise`. Both
//! languages share the concept inventory and each parallel pair uses the
//! same concept sequence, so with zero noise
//! `v1 - offset1 == v2 - offset2` holds token by token. Language means are
//! estimated from a separate finite sample per language, which makes the
//! estimation error shrink like `1 / sqrt(sample size)`.
//!
//! Semantic vectors, offsets and noise are rounded to multiples of 2^-16 so
//! that sums of them are exact in f32 for components of magnitude below 256.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedstore::{EmbeddingDataset, SentenceRecord, TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::langrep::{
    apply_shift_dataset, compute_language_mean, LanguageMean, LanguageMeans, Shift, ShiftSpec,
};
use crate::retrieval::{
    cosine_diagnostics, norm, pool_dataset, retrieve, tatoeba_accuracy, DegeneratePolicy,
    GoldPairs, SentenceEmbedding,
};
use crate::tokentrans::{DecodeTable, TranslationTask};

const LATTICE: f64 = 65536.0;

fn snap(x: f64) -> f64 {
    (x * LATTICE).round() / LATTICE
}

/// Language offsets: fixed-norm random directions or explicit vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum OffsetSpec {
    Random { norms: [f64; 2] },
    Explicit { vectors: [Vec<f64>; 2] },
}

impl Default for OffsetSpec {
    fn default() -> Self {
        OffsetSpec::Random { norms: [5.0, 5.0] }
    }
}

/// Where the language means used by the transforms come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MeanSource {
    /// Averaged over `mean_sample_size` freshly drawn tokens per language.
    #[default]
    Estimated,
    /// The true offsets themselves.
    Exact,
    /// True offset minus an explicit error: `mean_i = R*_i - delta_i`.
    Injected { deltas: [Vec<f64>; 2] },
}

fn default_vocab_size() -> usize {
    200
}

fn default_sentence_len() -> [usize; 2] {
    [6, 12]
}

fn default_layer() -> u32 {
    8
}

fn default_languages() -> [String; 2] {
    ["en".to_string(), "de".to_string()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub dim: usize,
    pub n_pairs: usize,
    #[serde(default = "default_languages")]
    pub languages: [String; 2],
    #[serde(default)]
    pub offsets: OffsetSpec,
    pub semantic_sigma: f64,
    pub noise_sigma: f64,
    pub mean_sample_size: usize,
    /// Concepts in the shared inventory, i.e. tokens per language.
    #[serde(default = "default_vocab_size")]
    pub vocab_size: usize,
    /// Inclusive range of sentence lengths in tokens.
    #[serde(default = "default_sentence_len")]
    pub sentence_len: [usize; 2],
    #[serde(default = "default_layer")]
    pub layer: u32,
    #[serde(default)]
    pub mean_source: MeanSource,
    pub seed: u64,
}

impl SynthConfig {
    /// dim 64, 500 pairs, offset norm 5, semantic sigma 1, noise sigma 0.1,
    /// mean sample 100.
    pub fn reference(seed: u64) -> Self {
        SynthConfig {
            dim: 64,
            n_pairs: 500,
            languages: default_languages(),
            offsets: OffsetSpec::default(),
            semantic_sigma: 1.0,
            noise_sigma: 0.1,
            mean_sample_size: 100,
            vocab_size: default_vocab_size(),
            sentence_len: default_sentence_len(),
            layer: default_layer(),
            mean_source: MeanSource::Estimated,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.n_pairs == 0 {
            return bad("n_pairs must be at least 1".into());
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be at least 1".into());
        }
        if self.languages[0] == self.languages[1] || self.languages.iter().any(String::is_empty) {
            return bad("languages must be two distinct non-empty codes".into());
        }
        for (name, s) in [("semantic_sigma", self.semantic_sigma), ("noise_sigma", self.noise_sigma)] {
            if !(s.is_finite() && s >= 0.0) {
                return bad(format!("{name} must be finite and >= 0"));
            }
        }
        let [lo, hi] = self.sentence_len;
        if lo == 0 || lo > hi {
            return bad("sentence_len must be [min, max] with 1 <= min <= max".into());
        }
        if self.vocab_size.checked_mul(2).is_none_or(|n| n > u32::MAX as usize) {
            return bad("vocab_size too large for u32 token ids".into());
        }
        match &self.offsets {
            OffsetSpec::Random { norms } => {
                if norms.iter().any(|n| !(n.is_finite() && *n >= 0.0)) {
                    return bad("offset norms must be finite and >= 0".into());
                }
            }
            OffsetSpec::Explicit { vectors } => {
                if vectors.iter().any(|v| v.len() != self.dim || v.iter().any(|x| !x.is_finite())) {
                    return bad(format!("explicit offsets must be finite vectors of length {}", self.dim));
                }
            }
        }
        match &self.mean_source {
            MeanSource::Estimated if self.mean_sample_size == 0 => {
                bad("mean_sample_size must be at least 1".into())
            }
            MeanSource::Injected { deltas }
                if deltas.iter().any(|d| d.len() != self.dim || d.iter().any(|x| !x.is_finite())) =>
            {
                bad(format!("injected deltas must be finite vectors of length {}", self.dim))
            }
            _ => Ok(()),
        }
    }
}

/// Output of [`generate`].
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    /// Parallel corpora; sentence `p` of one is the translation of sentence `p` of the other.
    pub corpora: [EmbeddingDataset; 2],
    /// Independent draws used to estimate the language means.
    pub mean_samples: [EmbeddingDataset; 2],
    pub gold: GoldPairs,
    /// The ground-truth offsets as means of the generating layer.
    pub true_means: [LanguageMean; 2],
    pub vocabularies: [Vocabulary; 2],
    /// Per-language prototypes `semantic + offset`, without noise.
    pub tables: [DecodeTable; 2],
    /// Semantic vector of each concept.
    pub concepts: Vec<Vec<f64>>,
}

impl SynthCorpus {
    /// Token id of `concept` in language 0 or 1.
    pub fn token_id(&self, language: usize, concept: usize) -> TokenId {
        (language * self.config.vocab_size + concept) as TokenId
    }

    /// Means the transforms should use, per the configured source.
    pub fn means(&self) -> Result<LanguageMeans> {
        let layer = self.config.layer;
        let make = |i: usize| -> Result<LanguageMean> {
            let lang = &self.config.languages[i];
            match &self.config.mean_source {
                MeanSource::Estimated => compute_language_mean(&self.mean_samples[i], lang),
                MeanSource::Exact => Ok(self.true_means[i].clone()),
                MeanSource::Injected { deltas } => {
                    let v = self.true_means[i]
                        .vector()
                        .iter()
                        .zip(&deltas[i])
                        .map(|(&r, d)| (f64::from(r) - d) as f32)
                        .collect();
                    LanguageMean::new(lang.clone(), layer, v, 1)
                }
            }
        };
        Ok([make(0)?, make(1)?]
            .into_iter()
            .map(|m| (m.language().to_string(), m))
            .collect())
    }

    /// Both tables stacked, for decoding into either language.
    pub fn joint_table(&self) -> Result<DecodeTable> {
        let name = format!("{}+{}", self.config.languages[0], self.config.languages[1]);
        self.tables[0].merge(&self.tables[1], &name)
    }

    /// Target-language token ids of every pair, the translation references.
    pub fn references(&self) -> Vec<Vec<TokenId>> {
        self.corpora[1]
            .sentences()
            .iter()
            .map(|s| s.token_ids().to_vec())
            .collect()
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, sigma: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            snap(sigma * z)
        })
        .collect()
}

fn random_offset(rng: &mut ChaCha8Rng, dim: usize, target_norm: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x = snap(*x / n * target_norm));
    }
    v
}

fn token_vector(concept: &[f64], offset: &[f64], noise: &[f64]) -> Vec<f32> {
    concept
        .iter()
        .zip(offset)
        .zip(noise)
        .map(|((s, r), n)| (s + r + n) as f32)
        .collect()
}

/// Draws the corpus. All randomness derives from `config.seed`.
pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let dim = config.dim;
    let vocab = config.vocab_size;
    let seed = config.seed;

    let offsets: [Vec<f64>; 2] = match &config.offsets {
        OffsetSpec::Random { norms } => {
            let mut rng = stream(seed, 0);
            [random_offset(&mut rng, dim, norms[0]), random_offset(&mut rng, dim, norms[1])]
        }
        OffsetSpec::Explicit { vectors } => {
            [vectors[0].iter().map(|&x| snap(x)).collect(), vectors[1].iter().map(|&x| snap(x)).collect()]
        }
    };

    let mut rng = stream(seed, 1);
    let mut concepts: Vec<Vec<f64>> = (0..vocab)
        .map(|_| gaussian(&mut rng, dim, config.semantic_sigma))
        .collect();
    // Centre the inventory so the population mean of a language is its offset.
    for k in 0..dim {
        let m = concepts.iter().map(|c| c[k]).sum::<f64>() / vocab as f64;
        concepts.iter_mut().for_each(|c| c[k] = snap(c[k] - m));
    }

    let [lo, hi] = config.sentence_len;
    let mut rng = stream(seed, 2);
    let pair_concepts: Vec<Vec<usize>> = (0..config.n_pairs)
        .map(|_| {
            let len = rng.random_range(lo..=hi);
            (0..len).map(|_| rng.random_range(0..vocab)).collect()
        })
        .collect();

    let corpora = [0usize, 1].map(|lang| {
        let mut noise_rng = stream(seed, 3 + lang as u64);
        let sentences = pair_concepts
            .iter()
            .map(|seq| {
                let ids = seq.iter().map(|&c| (lang * vocab + c) as TokenId).collect();
                let vectors = seq
                    .iter()
                    .flat_map(|&c| {
                        let noise = gaussian(&mut noise_rng, dim, config.noise_sigma);
                        token_vector(&concepts[c], &offsets[lang], &noise)
                    })
                    .collect();
                SentenceRecord::new(config.languages[lang].clone(), ids, vectors)
            })
            .collect();
        EmbeddingDataset::new(config.layer, dim, sentences)
    });
    let [c0, c1] = corpora;
    let corpora = [c0?, c1?];

    let sample_tokens = config.mean_sample_size.max(1);
    let mean_samples = [0usize, 1].map(|lang| {
        let mut rng = stream(seed, 5 + lang as u64);
        let mut sentences = Vec::new();
        let mut drawn = 0;
        while drawn < sample_tokens {
            let len = rng.random_range(lo..=hi).min(sample_tokens - drawn);
            let seq: Vec<usize> = (0..len).map(|_| rng.random_range(0..vocab)).collect();
            let ids = seq.iter().map(|&c| (lang * vocab + c) as TokenId).collect();
            let vectors = seq
                .iter()
                .flat_map(|&c| {
                    let noise = gaussian(&mut rng, dim, config.noise_sigma);
                    token_vector(&concepts[c], &offsets[lang], &noise)
                })
                .collect();
            sentences.push(SentenceRecord::new(config.languages[lang].clone(), ids, vectors));
            drawn += len;
        }
        EmbeddingDataset::new(config.layer, dim, sentences)
    });
    let [m0, m1] = mean_samples;
    let mean_samples = [m0?, m1?];

    let true_means = [0usize, 1].map(|lang| {
        LanguageMean::new(
            config.languages[lang].clone(),
            config.layer,
            offsets[lang].iter().map(|&x| x as f32).collect(),
            1,
        )
    });
    let [t0, t1] = true_means;
    let true_means = [t0?, t1?];

    let vocabularies = [0usize, 1].map(|lang| {
        let entries: BTreeMap<TokenId, String> = (0..vocab)
            .map(|c| ((lang * vocab + c) as TokenId, format!("{}_{c}", config.languages[lang])))
            .collect();
        Vocabulary::new(config.languages[lang].clone(), entries, crate::embedstore::VocabSource::Tsv)
    });
    let [v0, v1] = vocabularies;
    let vocabularies = [v0?, v1?];

    let zero = vec![0.0; dim];
    let tables = [0usize, 1].map(|lang| {
        let rows = concepts
            .iter()
            .flat_map(|s| token_vector(s, &offsets[lang], &zero))
            .collect();
        DecodeTable::new(vocabularies[lang].clone(), dim, rows, None)
    });
    let [d0, d1] = tables;
    let tables = [d0?, d1?];

    Ok(SynthCorpus {
        config: config.clone(),
        corpora,
        mean_samples,
        gold: GoldPairs::identity(config.n_pairs),
        true_means,
        vocabularies,
        tables,
        concepts,
    })
}

/// Translation task from language 0 into language 1 over the joint table.
pub fn translation_task<'a>(
    corpus: &'a SynthCorpus,
    means: &'a LanguageMeans,
    table: &'a DecodeTable,
    references: &'a [Vec<TokenId>],
) -> TranslationTask<'a> {
    TranslationTask {
        dataset: &corpus.corpora[0],
        means,
        table,
        references,
        source_vocab: &corpus.vocabularies[0],
        target_vocab: &corpus.vocabularies[1],
        restrict: None,
    }
}

/// Retrieval accuracy of each transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    pub original: f64,
    pub zero_mean: f64,
    pub mds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairDiagnostics {
    pub pair: usize,
    pub cos_raw: f64,
    pub cos_mds: f64,
    pub cos_zero_mean: f64,
    /// `|v2| > |v2 - R2| > max(|delta1|, |delta2|, |delta|)` with the
    /// estimated mean `R2`.
    pub condition: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub seed: u64,
    /// `|R*_1 - R_1|`, `|R*_2 - R_2|` and `|delta_1 - delta_2|`.
    pub delta1_norm: f64,
    pub delta2_norm: f64,
    pub delta_norm: f64,
    pub accuracy: MethodScores,
    pub condition_rate: f64,
    pub mean_cosines: MethodScores,
    pub pairs: Vec<PairDiagnostics>,
}

fn to_f64(m: &LanguageMean) -> Vec<f64> {
    m.vector().iter().map(|&x| f64::from(x)).collect()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn accuracy(queries: &[SentenceEmbedding], candidates: &[SentenceEmbedding], gold: &GoldPairs) -> Result<f64> {
    let r = retrieve(queries, candidates, 1)?;
    tatoeba_accuracy(&r, gold, DegeneratePolicy::CountAsMiss)
}

/// Generates the corpus, estimates the means and compares the transforms
/// on every parallel pair.
pub fn run_sensitivity(config: &SynthConfig) -> Result<SensitivityReport> {
    let corpus = generate(config)?;
    let means = corpus.means()?;
    let [l1, l2] = &config.languages;
    let (m1, m2) = (&means[l1], &means[l2]);

    let delta1 = sub(&to_f64(&corpus.true_means[0]), &to_f64(m1));
    let delta2 = sub(&to_f64(&corpus.true_means[1]), &to_f64(m2));
    let delta = sub(&delta1, &delta2);
    let (d1n, d2n, dn) = (norm(&delta1), norm(&delta2), norm(&delta));
    let max_delta = d1n.max(d2n).max(dn);

    let raw1 = pool_dataset(&corpus.corpora[0])?;
    let raw2 = pool_dataset(&corpus.corpora[1])?;
    let zm1 = pool_dataset(&apply_shift_dataset(&corpus.corpora[0], &Shift::ZeroMean, &means)?)?;
    let zm2 = pool_dataset(&apply_shift_dataset(&corpus.corpora[1], &Shift::ZeroMean, &means)?)?;
    let spec = ShiftSpec::new(l1.clone(), l2.clone(), 1.0, config.layer)?;
    let mds1 = pool_dataset(&apply_shift_dataset(&corpus.corpora[0], &Shift::Mds(spec), &means)?)?;

    let accuracy = MethodScores {
        original: accuracy(&raw1, &raw2, &corpus.gold)?,
        zero_mean: accuracy(&zm1, &zm2, &corpus.gold)?,
        mds: accuracy(&mds1, &raw2, &corpus.gold)?,
    };

    let m2v = to_f64(m2);
    let pairs = raw1
        .iter()
        .zip(&raw2)
        .enumerate()
        .map(|(p, (v1, v2))| {
            let d = cosine_diagnostics(v1, v2, m1, m2)?;
            let centered = norm(&sub(&v2.vector, &m2v));
            let condition = norm(&v2.vector) > centered && centered > max_delta;
            Ok(PairDiagnostics {
                pair: p,
                cos_raw: d.cos_raw,
                cos_mds: d.cos_mds,
                cos_zero_mean: d.cos_zero_mean,
                condition,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n = pairs.len() as f64;
    let avg = |f: fn(&PairDiagnostics) -> f64| pairs.iter().map(f).sum::<f64>() / n;
    Ok(SensitivityReport {
        seed: config.seed,
        delta1_norm: d1n,
        delta2_norm: d2n,
        delta_norm: dn,
        accuracy,
        condition_rate: pairs.iter().filter(|p| p.condition).count() as f64 / n,
        mean_cosines: MethodScores {
            original: avg(|p| p.cos_raw),
            zero_mean: avg(|p| p.cos_zero_mean),
            mds: avg(|p| p.cos_mds),
        },
        pairs,
    })
}

/// Per-seed summary without the per-pair table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub delta1_norm: f64,
    pub delta2_norm: f64,
    pub delta_norm: f64,
    pub accuracy: MethodScores,
    pub condition_rate: f64,
    pub mean_cosines: MethodScores,
}

impl From<&SensitivityReport> for SeedSummary {
    fn from(r: &SensitivityReport) -> Self {
        SeedSummary {
            seed: r.seed,
            delta1_norm: r.delta1_norm,
            delta2_norm: r.delta2_norm,
            delta_norm: r.delta_norm,
            accuracy: r.accuracy,
            condition_rate: r.condition_rate,
            mean_cosines: r.mean_cosines,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSeedReport {
    pub config: SynthConfig,
    pub seeds: Vec<SeedSummary>,
    pub mean_accuracy: MethodScores,
    pub mean_condition_rate: f64,
}

/// Runs seeds `config.seed .. config.seed + n_seeds` in parallel.
pub fn run_sensitivity_seeds(config: &SynthConfig, n_seeds: usize) -> Result<MultiSeedReport> {
    if n_seeds == 0 {
        return Err(Error::Config("at least one seed is required".into()));
    }
    config.validate()?;
    let seeds: Vec<SeedSummary> = (0..n_seeds as u64)
        .into_par_iter()
        .map(|i| {
            let cfg = SynthConfig {
                seed: config.seed.wrapping_add(i),
                ..config.clone()
            };
            run_sensitivity(&cfg).map(|r| SeedSummary::from(&r))
        })
        .collect::<Result<_>>()?;
    let n = seeds.len() as f64;
    let mean = |f: fn(&SeedSummary) -> f64| seeds.iter().map(f).sum::<f64>() / n;
    Ok(MultiSeedReport {
        config: config.clone(),
        mean_accuracy: MethodScores {
            original: mean(|s| s.accuracy.original),
            zero_mean: mean(|s| s.accuracy.zero_mean),
            mds: mean(|s| s.accuracy.mds),
        },
        mean_condition_rate: mean(|s| s.condition_rate),
        seeds,
    })
}
