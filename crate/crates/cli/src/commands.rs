use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use langshift::embedstore::{load_dump, load_dump_with_manifest, write_dump, EmbeddingDataset, Vocabulary};
use langshift::langrep::{
    apply_shift_dataset, compute_language_mean, compute_language_mean_excluding, LanguageMean,
    LanguageMeans, Shift, ShiftSpec,
};
use langshift::report::{pretty, run_retrieval, Report, RetrievalBody, RetrievalInputs};
use langshift::retrieval::GoldPairs;
use langshift::synthlab::{generate, run_sensitivity, run_sensitivity_seeds, MultiSeedReport, SynthConfig};
use langshift::tokentrans::{
    read_references, reports_to_csv, sweep_alpha, translate_and_score, DecodeTable, LayerInputs,
    SweepInputs, TranslationEvalReport, TranslationTask,
};
use serde::Serialize;

use crate::config::{read_config, resolve, usage, MeanRef, RetrieveConfig};
use crate::grid::fill;
use crate::{
    Format, Globals, MeanArgs, RetrieveArgs, SensitivityArgs, ShiftArgs, ShiftMethod, SweepArgs,
    SynthArgs, TranslateArgs, ValidateArgs,
};

/// How translation quality is aggregated, echoed into every report.
const BLEU_LEVEL: &str = "corpus";

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn json_only(g: &Globals, command: &str) -> Result<()> {
    if g.format == Some(Format::Csv) {
        return Err(usage(format!("{command} has no csv output")));
    }
    Ok(())
}

fn load_means(paths: &[PathBuf]) -> Result<LanguageMeans> {
    let mut means = LanguageMeans::new();
    for p in paths {
        let m = LanguageMean::read(p)?;
        let lang = m.language().to_string();
        if means.insert(lang.clone(), m).is_some() {
            return Err(usage(format!("two mean files for language {lang}")));
        }
    }
    Ok(means)
}

fn dir_of(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

#[derive(Serialize)]
struct MeanSummary<'a> {
    dump: &'a Path,
    out: &'a Path,
    language: &'a str,
    layer: u32,
    dim: usize,
    token_count: u64,
    norm: f64,
    excluded_special: usize,
}

pub fn mean(g: &Globals, a: &MeanArgs) -> Result<()> {
    json_only(g, "mean")?;
    let ds = load_dump(&a.dump)?;
    let (m, excluded) = if a.exclude_special {
        let special = ds.special_token_ids().clone();
        (compute_language_mean_excluding(&ds, &a.language, &special)?, special.len())
    } else {
        (compute_language_mean(&ds, &a.language)?, 0)
    };
    m.write(&a.out)?;
    log::info!("wrote mean of {} over {} tokens to {}", a.language, m.token_count(), a.out.display());
    emit(
        None,
        &pretty(&MeanSummary {
            dump: &a.dump,
            out: &a.out,
            language: &a.language,
            layer: m.layer(),
            dim: m.dim(),
            token_count: m.token_count(),
            norm: m.norm(),
            excluded_special: excluded,
        }),
    )
}

pub fn shift(g: &Globals, a: &ShiftArgs) -> Result<()> {
    json_only(g, "shift")?;
    let ds = load_dump(&a.dump)?;
    let means = load_means(&a.means)?;
    let shift = match a.method {
        ShiftMethod::ZeroMean => Shift::ZeroMean,
        ShiftMethod::Mds => {
            let (src, tgt) = (a.src.clone().unwrap_or_default(), a.tgt.clone().unwrap_or_default());
            Shift::Mds(ShiftSpec::new(src, tgt, a.alpha, ds.layer())?)
        }
    };
    let out = apply_shift_dataset(&ds, &shift, &means)?;
    let manifest = write_dump(&out, &a.out)?;
    emit(None, &pretty(&manifest))
}

fn resolve_mean(base: &Path, lang: &str, r: &MeanRef) -> Result<LanguageMean> {
    let m = match r {
        MeanRef::File(p) => LanguageMean::read(&resolve(base, p))?,
        MeanRef::Dump(p) => compute_language_mean(&load_dump(&resolve(base, p))?, lang)?,
    };
    if m.language() != lang {
        return Err(usage(format!("mean given for {lang} is for language {}", m.language())));
    }
    Ok(m)
}

#[derive(Serialize)]
struct RetrieveBody<'a> {
    config: &'a RetrieveConfig,
    retrieval: RetrievalBody,
}

pub fn retrieve(g: &Globals, a: &RetrieveArgs) -> Result<()> {
    let cfg: RetrieveConfig = read_config(&a.config)?;
    cfg.validate()?;
    let base = dir_of(&a.config);
    let queries = load_dump(&resolve(&base, &cfg.queries))?;
    let candidates = load_dump(&resolve(&base, &cfg.candidates))?;
    let gold = GoldPairs::read_tsv(&resolve(&base, &cfg.gold))?;
    let means = cfg
        .means
        .iter()
        .map(|(lang, r)| Ok((lang.clone(), resolve_mean(&base, lang, r)?)))
        .collect::<Result<LanguageMeans>>()?;
    let inputs = RetrievalInputs {
        queries: &queries,
        candidates: &candidates,
        gold: &gold,
        means: &means,
        source: &cfg.source,
        target: &cfg.target,
        methods: &cfg.methods,
        metrics: &cfg.metrics,
        alpha: cfg.alpha,
        threshold: cfg.threshold,
        policy: cfg.degenerate_policy,
    };
    let retrieval = run_retrieval(&inputs)?;
    let text = match g.format.unwrap_or(Format::Json) {
        Format::Csv => retrieval.to_csv(),
        Format::Json => Report::new(RetrieveBody {
            config: &cfg,
            retrieval,
        })
        .to_json(),
    };
    emit(a.out.as_deref(), &text)
}

fn restrict_set(p: &Option<PathBuf>) -> Result<Option<BTreeSet<u32>>> {
    p.as_ref()
        .map(|p| Ok(Vocabulary::read_tsv("restrict", p)?.id_set()))
        .transpose()
}

#[derive(Serialize)]
struct TranslateBody<'a, A: Serialize> {
    inputs: &'a A,
    bleu_level: &'static str,
    reports: Vec<TranslationEvalReport>,
}

#[derive(Serialize)]
struct TranslateEcho<'a> {
    dump: &'a Path,
    src: &'a str,
    tgt: &'a str,
    alpha: f64,
    layer: u32,
    table: &'a Path,
    refs: &'a Path,
    means: &'a [PathBuf],
    src_vocab: &'a Path,
    tgt_vocab: &'a Path,
    restrict: Option<&'a Path>,
}

fn emit_translation<A: Serialize>(
    g: &Globals,
    default: Format,
    echo: &A,
    reports: Vec<TranslationEvalReport>,
    out: Option<&Path>,
) -> Result<()> {
    let text = match g.format.unwrap_or(default) {
        Format::Csv => reports_to_csv(&reports),
        Format::Json => Report::new(TranslateBody {
            inputs: echo,
            bleu_level: BLEU_LEVEL,
            reports,
        })
        .to_json(),
    };
    emit(out, &text)
}

pub fn translate(g: &Globals, a: &TranslateArgs) -> Result<()> {
    let ds = load_dump(&a.dump)?;
    let means = load_means(&a.means)?;
    let table = DecodeTable::read(&a.table, None, "table")?;
    let refs = read_references(&a.refs)?;
    let src_vocab = Vocabulary::read_tsv(a.src.clone(), &a.src_vocab)?;
    let tgt_vocab = Vocabulary::read_tsv(a.tgt.clone(), &a.tgt_vocab)?;
    let restrict = restrict_set(&a.restrict)?;
    let task = TranslationTask {
        dataset: &ds,
        means: &means,
        table: &table,
        references: &refs,
        source_vocab: &src_vocab,
        target_vocab: &tgt_vocab,
        restrict: restrict.as_ref(),
    };
    let report = translate_and_score(&task, &ShiftSpec::new(a.src.clone(), a.tgt.clone(), a.alpha, a.layer)?)?;
    let echo = TranslateEcho {
        dump: &a.dump,
        src: &a.src,
        tgt: &a.tgt,
        alpha: a.alpha,
        layer: a.layer,
        table: &a.table,
        refs: &a.refs,
        means: &a.means,
        src_vocab: &a.src_vocab,
        tgt_vocab: &a.tgt_vocab,
        restrict: a.restrict.as_deref(),
    };
    emit_translation(g, Format::Json, &echo, vec![report], a.out.as_deref())
}

#[derive(Serialize)]
struct SweepEcho<'a> {
    dump: &'a str,
    src: &'a str,
    tgt: &'a str,
    alphas: &'a [f64],
    layers: &'a [u32],
    table: &'a str,
    refs: &'a Path,
    means: &'a [String],
    src_vocab: &'a Path,
    tgt_vocab: &'a Path,
    restrict: Option<&'a Path>,
}

pub fn sweep(g: &Globals, a: &SweepArgs) -> Result<()> {
    let mut layers = BTreeMap::new();
    for &layer in &a.layers.0 {
        let means_paths: Vec<PathBuf> = a.means.iter().map(|m| fill(m, layer)).collect();
        layers.insert(
            layer,
            LayerInputs {
                dataset: load_dump(&fill(&a.dump, layer))?,
                means: load_means(&means_paths)?,
                table: DecodeTable::read(&fill(&a.table, layer), None, "table")?,
            },
        );
    }
    let refs = read_references(&a.refs)?;
    let src_vocab = Vocabulary::read_tsv(a.src.clone(), &a.src_vocab)?;
    let tgt_vocab = Vocabulary::read_tsv(a.tgt.clone(), &a.tgt_vocab)?;
    let restrict = restrict_set(&a.restrict)?;
    let inputs = SweepInputs {
        layers: &layers,
        references: &refs,
        source_vocab: &src_vocab,
        target_vocab: &tgt_vocab,
        restrict: restrict.as_ref(),
    };
    let reports = sweep_alpha(&inputs, &a.src, &a.tgt, &a.alphas.0, &a.layers.0)?;
    let echo = SweepEcho {
        dump: &a.dump,
        src: &a.src,
        tgt: &a.tgt,
        alphas: &a.alphas.0,
        layers: &a.layers.0,
        table: &a.table,
        refs: &a.refs,
        means: &a.means,
        src_vocab: &a.src_vocab,
        tgt_vocab: &a.tgt_vocab,
        restrict: a.restrict.as_deref(),
    };
    emit_translation(g, Format::Csv, &echo, reports, a.out.as_deref())
}

fn synth_config(g: &Globals, path: &Path) -> Result<SynthConfig> {
    let mut cfg: SynthConfig = read_config(path)?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// File names written by `synth` for the corpus of `lang` at `layer`.
pub struct SynthLayout;

impl SynthLayout {
    pub fn corpus(lang: &str, layer: u32) -> String {
        format!("{lang}.l{layer}.embd")
    }
    pub fn sample(lang: &str, layer: u32) -> String {
        format!("{lang}.sample.l{layer}.embd")
    }
    pub fn table(lang: &str, layer: u32) -> String {
        format!("{lang}.l{layer}.table")
    }
    pub fn true_mean(lang: &str, layer: u32) -> String {
        format!("{lang}.l{layer}.true.mean")
    }
    pub fn vocab(lang: &str) -> String {
        format!("{lang}.vocab.tsv")
    }
}

#[derive(Serialize)]
struct SynthSummary {
    out: PathBuf,
    files: Vec<String>,
    config: SynthConfig,
}

pub fn synth(g: &Globals, a: &SynthArgs) -> Result<()> {
    json_only(g, "synth")?;
    let cfg = synth_config(g, &a.config)?;
    let corpus = generate(&cfg)?;
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    let layer = cfg.layer;
    let mut files = Vec::new();
    let mut put = |name: String| {
        let p = a.out.join(&name);
        files.push(name);
        p
    };
    for (i, lang) in cfg.languages.iter().enumerate() {
        write_dump(&corpus.corpora[i], &put(SynthLayout::corpus(lang, layer)))?;
        write_dump(&corpus.mean_samples[i], &put(SynthLayout::sample(lang, layer)))?;
        corpus.tables[i].write(&put(SynthLayout::table(lang, layer)))?;
        corpus.true_means[i].write(&put(SynthLayout::true_mean(lang, layer)))?;
        corpus.vocabularies[i].write_tsv(&put(SynthLayout::vocab(lang)))?;
    }
    corpus.joint_table()?.write(&put(format!("joint.l{layer}.table")))?;
    let gold = put("gold.tsv".into());
    fs::write(&gold, corpus.gold.to_tsv()).with_context(|| format!("cannot write {}", gold.display()))?;
    let refs = put(format!("refs.{}.txt", cfg.languages[1]));
    fs::write(&refs, langshift::tokentrans::format_references(&corpus.references()))
        .with_context(|| format!("cannot write {}", refs.display()))?;
    let echo = put("synth_config.json".into());
    fs::write(&echo, pretty(&cfg)).with_context(|| format!("cannot write {}", echo.display()))?;
    emit(
        None,
        &pretty(&SynthSummary {
            out: a.out.clone(),
            files,
            config: cfg,
        }),
    )
}

fn sensitivity_csv(r: &MultiSeedReport) -> String {
    let mut out = String::from(
        "seed,delta1_norm,delta2_norm,delta_norm,acc_original,acc_zero_mean,acc_mds,condition_rate\n",
    );
    for s in &r.seeds {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            s.seed,
            s.delta1_norm,
            s.delta2_norm,
            s.delta_norm,
            s.accuracy.original,
            s.accuracy.zero_mean,
            s.accuracy.mds,
            s.condition_rate
        );
    }
    out
}

pub fn sensitivity(g: &Globals, a: &SensitivityArgs) -> Result<()> {
    let cfg = synth_config(g, &a.config)?;
    let report = run_sensitivity_seeds(&cfg, a.seeds)?;
    if let Some(p) = &a.pairs_out {
        let first = run_sensitivity(&cfg)?;
        let mut csv = String::from("pair,cos_raw,cos_mds,cos_zero_mean,condition\n");
        for d in &first.pairs {
            let _ = writeln!(csv, "{},{},{},{},{}", d.pair, d.cos_raw, d.cos_mds, d.cos_zero_mean, d.condition);
        }
        fs::write(p, csv).with_context(|| format!("cannot write {}", p.display()))?;
    }
    let text = match g.format.unwrap_or(Format::Json) {
        Format::Csv => sensitivity_csv(&report),
        Format::Json => Report::new(report).to_json(),
    };
    emit(a.out.as_deref(), &text)
}

#[derive(Serialize)]
struct Checked {
    kind: &'static str,
    path: PathBuf,
    summary: String,
}

pub fn validate(g: &Globals, a: &ValidateArgs) -> Result<()> {
    json_only(g, "validate")?;
    if a.dumps.is_empty() && a.tables.is_empty() && a.means.is_empty() && a.vocabs.is_empty() {
        return Err(usage("nothing to validate; pass --dump, --table, --mean or --vocab"));
    }
    let mut checked = Vec::new();
    for p in &a.dumps {
        let (ds, manifest): (EmbeddingDataset, _) = load_dump_with_manifest(p)?;
        debug_assert_eq!(ds.token_count() as u64, manifest.token_count);
        checked.push(Checked {
            kind: "dump",
            path: p.clone(),
            summary: format!(
                "layer {} dim {}: {} sentences, {} tokens, languages {:?}",
                manifest.layer,
                manifest.dim,
                manifest.sentence_count,
                manifest.token_count,
                manifest.token_counts
            ),
        });
    }
    for p in &a.tables {
        let t = DecodeTable::read(p, None, "table")?;
        checked.push(Checked {
            kind: "table",
            path: p.clone(),
            summary: format!("{} rows, dim {}, bias {}", t.len(), t.dim(), t.has_bias()),
        });
    }
    for p in &a.means {
        let m = LanguageMean::read(p)?;
        checked.push(Checked {
            kind: "mean",
            path: p.clone(),
            summary: format!("{} layer {} dim {} over {} tokens", m.language(), m.layer(), m.dim(), m.token_count()),
        });
    }
    for p in &a.vocabs {
        let v = Vocabulary::read_tsv("vocab", p)?;
        checked.push(Checked {
            kind: "vocab",
            path: p.clone(),
            summary: format!("{} entries", v.len()),
        });
    }
    emit(None, &pretty(&checked))
}
