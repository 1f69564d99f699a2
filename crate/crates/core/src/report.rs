//! Report envelopes and the retrieval pipeline shared by the CLI.
//!
//! A report is `{"header": ..., "body": ...}`. Everything that depends on
//! when or where the run happened lives in the header, so two runs with the
//! same inputs produce byte-identical bodies.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::embedstore::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::langrep::{apply_shift_dataset, LanguageMeans, Shift, ShiftSpec};
use crate::retrieval::{
    bucc_f1, mine_pairs, pool_dataset, retrieve, tatoeba_accuracy, tune_threshold,
    DegeneratePolicy, GoldPairs,
};
use crate::synthlab::{generate, SynthConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub tool: String,
    pub version: String,
    pub created_unix: u64,
}

impl ReportHeader {
    pub fn now() -> Self {
        ReportHeader {
            tool: "langshift".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<B> {
    pub header: ReportHeader,
    pub body: B,
}

impl<B: Serialize> Report<B> {
    pub fn new(body: B) -> Self {
        Report {
            header: ReportHeader::now(),
            body,
        }
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        pretty(self)
    }

    /// The body alone, as stored in golden files.
    pub fn body_json(&self) -> String {
        pretty(&self.body)
    }
}

/// Pretty JSON with a trailing newline. Serialising plain data cannot fail.
pub fn pretty<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialise");
    s.push('\n');
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Original,
    ZeroMean,
    Mds,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Original, Method::ZeroMean, Method::Mds];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Original => "original",
            Method::ZeroMean => "zero_mean",
            Method::Mds => "mds",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Top-1 accuracy against a one-to-one gold alignment.
    Tatoeba,
    /// Precision, recall and F1 of thresholded forward nearest neighbours.
    Bucc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRow {
    pub metric: String,
    pub src: String,
    pub tgt: String,
    pub method: Method,
    pub layer: u32,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodDetail {
    pub method: Method,
    pub degenerate_queries: usize,
    pub degenerate_candidates: usize,
    /// Threshold used for BUCC scoring, tuned on the gold pairs when not given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bucc_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalBody {
    pub rows: Vec<RetrievalRow>,
    pub details: Vec<MethodDetail>,
}

pub const RETRIEVAL_CSV_HEADER: &str = "metric,src,tgt,method,layer,score";

impl RetrievalBody {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(RETRIEVAL_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.metric,
                r.src,
                r.tgt,
                r.method.as_str(),
                r.layer,
                r.score
            );
        }
        out
    }
}

/// Inputs of one retrieval experiment. Queries are in `source`, candidates
/// in `target`; MDS moves the queries toward the target language.
#[derive(Debug, Clone, Copy)]
pub struct RetrievalInputs<'a> {
    pub queries: &'a EmbeddingDataset,
    pub candidates: &'a EmbeddingDataset,
    pub gold: &'a GoldPairs,
    pub means: &'a LanguageMeans,
    pub source: &'a str,
    pub target: &'a str,
    pub methods: &'a [Method],
    pub metrics: &'a [Metric],
    /// MDS scale; ignored by the other methods.
    pub alpha: f64,
    /// Fixed BUCC threshold; tuned on `gold` when `None`.
    pub threshold: Option<f64>,
    pub policy: DegeneratePolicy,
}

fn shifted(
    inputs: &RetrievalInputs<'_>,
    method: Method,
) -> Result<(EmbeddingDataset, EmbeddingDataset)> {
    let (q, c) = (inputs.queries, inputs.candidates);
    if q.layer() != c.layer() {
        return Err(Error::LayerMismatch {
            expected: q.layer(),
            actual: c.layer(),
        });
    }
    Ok(match method {
        Method::Original => (q.clone(), c.clone()),
        Method::ZeroMean => (
            apply_shift_dataset(q, &Shift::ZeroMean, inputs.means)?,
            apply_shift_dataset(c, &Shift::ZeroMean, inputs.means)?,
        ),
        Method::Mds => {
            let spec = ShiftSpec::new(inputs.source, inputs.target, inputs.alpha, q.layer())?;
            (apply_shift_dataset(q, &Shift::Mds(spec), inputs.means)?, c.clone())
        }
    })
}

pub fn run_retrieval(inputs: &RetrievalInputs<'_>) -> Result<RetrievalBody> {
    if inputs.methods.is_empty() || inputs.metrics.is_empty() {
        return Err(Error::Config("at least one method and one metric are required".into()));
    }
    let layer = inputs.queries.layer();
    let gold_set: BTreeSet<(usize, usize)> = inputs.gold.pair_set();
    let mut rows = Vec::new();
    let mut details = Vec::new();
    for &method in inputs.methods {
        let (q, c) = shifted(inputs, method)?;
        let result = retrieve(&pool_dataset(&q)?, &pool_dataset(&c)?, 1)?;
        let row = |metric: &str, score: f64| RetrievalRow {
            metric: metric.into(),
            src: inputs.source.into(),
            tgt: inputs.target.into(),
            method,
            layer,
            score,
        };
        let mut bucc_threshold = None;
        for metric in inputs.metrics {
            match metric {
                Metric::Tatoeba => {
                    rows.push(row("tatoeba_accuracy", tatoeba_accuracy(&result, inputs.gold, inputs.policy)?));
                }
                Metric::Bucc => {
                    let pairs = mine_pairs(&result);
                    let t = match inputs.threshold {
                        Some(t) => t,
                        None => tune_threshold(&pairs, &gold_set)?,
                    };
                    let pr = bucc_f1(&pairs, &gold_set, t)?;
                    rows.push(row("bucc_precision", pr.precision));
                    rows.push(row("bucc_recall", pr.recall));
                    rows.push(row("bucc_f1", pr.f1));
                    bucc_threshold = Some(t);
                }
            }
        }
        details.push(MethodDetail {
            method,
            degenerate_queries: result.queries.iter().filter(|q| q.degenerate).count(),
            degenerate_candidates: result.degenerate_candidates.len(),
            bucc_threshold,
        });
    }
    Ok(RetrievalBody { rows, details })
}

/// Body of the end-to-end synthetic run: the configuration echo plus results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineBody {
    pub config: SynthConfig,
    pub alpha: f64,
    pub methods: Vec<Method>,
    pub metrics: Vec<Metric>,
    pub bucc_threshold_rule: String,
    pub retrieval: RetrievalBody,
}

/// Generates a corpus, estimates its means, and scores every method with
/// both metrics at `alpha = 1` and a gold-tuned BUCC threshold.
pub fn run_synthetic_pipeline(config: &SynthConfig) -> Result<PipelineBody> {
    let corpus = generate(config)?;
    let means = corpus.means()?;
    let methods = Method::ALL.to_vec();
    let metrics = vec![Metric::Tatoeba, Metric::Bucc];
    let inputs = RetrievalInputs {
        queries: &corpus.corpora[0],
        candidates: &corpus.corpora[1],
        gold: &corpus.gold,
        means: &means,
        source: &config.languages[0],
        target: &config.languages[1],
        methods: &methods,
        metrics: &metrics,
        alpha: 1.0,
        threshold: None,
        policy: DegeneratePolicy::CountAsMiss,
    };
    let retrieval = run_retrieval(&inputs)?;
    Ok(PipelineBody {
        config: config.clone(),
        alpha: 1.0,
        methods,
        metrics,
        bucc_threshold_rule: "tuned_on_gold".into(),
        retrieval,
    })
}
