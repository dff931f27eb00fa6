//! Retrieval and classification metrics, training sweeps and report files.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{class_name, parse_caption, relevance, Corpus, Split};
use crate::encoders::{ClipModel, TextMode};
use crate::error::{Error, Result};
use crate::index::{build_from_corpus, RetrievalIndex};
use crate::probe::{few_shot_curve, shift_gap, FrozenSplit, ShiftGapReport, Shots};
use crate::trainer::{head_tail_means, train, TrainConfig, TrainingSet};
use crate::zeroshot::{accuracy_from_embeddings, build_class_embeddings, PromptTemplate};

/// Mean recall over the queries that have at least one relevant item.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecallResult {
    pub mean: f64,
    pub evaluated: usize,
    /// Queries skipped because their relevant set was empty.
    pub excluded: usize,
}

/// `mean_q |top_k(q) ∩ R_q| / min(k, |R_q|)`.
pub fn recall_at_k(rankings: &[Vec<u64>], relevant: &[HashSet<u64>], k: usize) -> Result<RecallResult> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if rankings.len() != relevant.len() {
        return Err(Error::shape(
            "recall_at_k",
            format!("{} rankings vs {} relevant sets", rankings.len(), relevant.len()),
        ));
    }
    let mut total = 0.0;
    let mut evaluated = 0;
    let mut excluded = 0;
    for (ranked, rel) in rankings.iter().zip(relevant) {
        if rel.is_empty() {
            excluded += 1;
            continue;
        }
        let found = ranked.iter().take(k).filter(|id| rel.contains(id)).count();
        total += found as f64 / k.min(rel.len()) as f64;
        evaluated += 1;
    }
    Ok(RecallResult {
        mean: if evaluated == 0 { 0.0 } else { total / evaluated as f64 },
        evaluated,
        excluded,
    })
}

/// Expected recall@k of a uniformly random ranking over `n` items, averaged
/// over queries with the given (non-empty) relevant-set sizes.
pub fn random_recall_baseline(relevant_sizes: &[usize], n: usize, k: usize) -> f64 {
    let sizes: Vec<usize> = relevant_sizes.iter().copied().filter(|&r| r > 0).collect();
    if sizes.is_empty() || n == 0 {
        return 0.0;
    }
    let shown = k.min(n) as f64;
    sizes
        .iter()
        .map(|&r| shown * r as f64 / n as f64 / k.min(r) as f64)
        .sum::<f64>()
        / sizes.len() as f64
}

/// Frozen embeddings of every split plus the class lists they are labeled with.
#[derive(Clone, Debug)]
pub struct EvalSet {
    /// Shape/color classes seen in training, e.g. `"red circle"`.
    pub classes: Vec<String>,
    /// Classes that only appear in the held-out split.
    pub heldout_classes: Vec<String>,
    pub train: FrozenSplit,
    pub test_iid: FrozenSplit,
    pub test_shifted: FrozenSplit,
    pub test_heldout: FrozenSplit,
}

impl EvalSet {
    pub fn from_corpus(model: &ClipModel, corpus: &Corpus) -> Result<Self> {
        let combos_in = |split: Split| {
            let present: HashSet<_> = corpus
                .entries
                .iter()
                .filter(|e| e.split == split)
                .map(|e| e.spec.combo())
                .collect();
            crate::datagen::all_combos()
                .into_iter()
                .filter(|c| present.contains(c))
                .map(|(s, c)| class_name(s, c))
                .collect::<Vec<_>>()
        };
        let classes = combos_in(Split::Train);
        let heldout_classes = combos_in(Split::TestHeldout);
        let frozen = |split: Split, names: &[String]| -> Result<FrozenSplit> {
            let idx = corpus.split_indices(split);
            let pixels: Vec<_> = idx.iter().map(|&i| corpus.rasters[i].to_pixels()).collect();
            let embs = model.encode_image_batch(&pixels.iter().collect::<Vec<_>>())?;
            let labels = idx
                .iter()
                .map(|&i| {
                    let (s, c) = corpus.entries[i].spec.combo();
                    let name = class_name(s, c);
                    names.iter().position(|n| *n == name).ok_or(Error::UnknownLabel(name))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(FrozenSplit { embs, labels })
        };
        Ok(Self {
            train: frozen(Split::Train, &classes)?,
            test_iid: frozen(Split::TestIid, &classes)?,
            test_shifted: frozen(Split::TestShifted, &classes)?,
            test_heldout: frozen(Split::TestHeldout, &heldout_classes)?,
            classes,
            heldout_classes,
        })
    }
}

/// Zero-shot accuracy on `test_iid` with the given templates.
pub fn zero_shot_iid(model: &ClipModel, set: &EvalSet, templates: &[PromptTemplate]) -> Result<f64> {
    let ce = build_class_embeddings(model, &set.classes, templates)?;
    accuracy_from_embeddings(&set.test_iid.embs, &set.test_iid.labels, &ce, model.params.log_scale)
}

/// Builds an index over `split` and queries it with each item's caption.
/// An item is relevant to a query iff it matches every attribute the
/// caption mentions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetrievalEval {
    pub recall: RecallResult,
    pub random_baseline: f64,
}

pub fn caption_retrieval(model: &ClipModel, corpus: &Corpus, split: Split, k: usize) -> Result<RetrievalEval> {
    let mut index = RetrievalIndex::new(model.dims.d_embed)?;
    build_from_corpus(model, corpus, |e| e.split == split, &mut index)?;
    let items: Vec<_> = corpus.entries.iter().filter(|e| e.split == split).collect();
    let mut rankings = Vec::with_capacity(items.len());
    let mut relevant = Vec::with_capacity(items.len());
    for q in &items {
        let attrs = parse_caption(&q.caption)
            .ok_or_else(|| Error::Format(format!("caption {:?} matches no template", q.caption)))?;
        let rel: HashSet<u64> = items
            .iter()
            .filter(|c| relevance(&attrs, &c.spec))
            .map(|c| c.id)
            .collect();
        let emb = model.encode_text(&q.caption)?;
        rankings.push(index.search(&emb, k)?.into_iter().map(|h| h.id).collect());
        relevant.push(rel);
    }
    let sizes: Vec<usize> = relevant.iter().map(HashSet::len).collect();
    Ok(RetrievalEval {
        recall: recall_at_k(&rankings, &relevant, k)?,
        random_baseline: random_recall_baseline(&sizes, items.len(), k),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EfficiencyRow {
    pub mode: TextMode,
    pub n_samples: usize,
    pub zero_shot_acc: f64,
}

/// Trains one model per (mode, sample count) with the same config and seed
/// and scores each zero-shot on `test_iid`.
pub fn efficiency_curve(
    corpus: &Corpus,
    sample_counts: &[usize],
    modes: &[TextMode],
    base: &TrainConfig,
) -> Result<Vec<EfficiencyRow>> {
    let full = TrainingSet::from_corpus(corpus, base.dims.max_len);
    if let Some(&too_big) = sample_counts.iter().find(|&&n| n > full.len()) {
        return Err(Error::CorpusTooSmall {
            have: full.len(),
            need: too_big,
        });
    }
    let templates = PromptTemplate::defaults();
    let mut rows = Vec::new();
    for &mode in modes {
        for &n in sample_counts {
            let cfg = TrainConfig {
                text_mode: mode,
                ..base.clone()
            };
            let report = train(&cfg, &full.truncated(n))?;
            let set = EvalSet::from_corpus(&report.model, corpus)?;
            rows.push(EfficiencyRow {
                mode,
                n_samples: n,
                zero_shot_acc: zero_shot_iid(&report.model, &set, &templates)?,
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchSweepRow {
    pub batch_size: usize,
    pub steps: usize,
    pub zero_shot_acc: f64,
    pub loss_trace: Vec<f64>,
}

/// Trains at each batch size for `budget / N` steps so that every run sees
/// the same number of pairs (within one batch).
pub fn batch_size_sweep(
    corpus: &Corpus,
    batch_sizes: &[usize],
    budget: usize,
    base: &TrainConfig,
) -> Result<Vec<BatchSweepRow>> {
    let set = TrainingSet::from_corpus(corpus, base.dims.max_len);
    let templates = PromptTemplate::defaults();
    let mut rows = Vec::new();
    for &n in batch_sizes {
        let steps = budget / n;
        if steps == 0 {
            return Err(Error::InvalidConfig(format!(
                "budget {budget} is smaller than batch size {n}"
            )));
        }
        let cfg = TrainConfig {
            batch_size: n,
            steps,
            ..base.clone()
        };
        let report = train(&cfg, &set)?;
        let eval = EvalSet::from_corpus(&report.model, corpus)?;
        rows.push(BatchSweepRow {
            batch_size: n,
            steps,
            zero_shot_acc: zero_shot_iid(&report.model, &eval, &templates)?,
            loss_trace: report.loss_trace,
        });
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PromptVariant {
    Contextless,
    Single,
    Ensemble,
}

impl PromptVariant {
    pub const ALL: [PromptVariant; 3] = [
        PromptVariant::Contextless,
        PromptVariant::Single,
        PromptVariant::Ensemble,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptVariant::Contextless => "contextless",
            PromptVariant::Single => "single",
            PromptVariant::Ensemble => "ensemble",
        }
    }

    pub fn templates(self) -> Vec<PromptTemplate> {
        match self {
            PromptVariant::Contextless => vec![PromptTemplate::contextless()],
            PromptVariant::Single => {
                vec![PromptTemplate::new(crate::zeroshot::DEFAULT_TEMPLATES[0]).expect("valid")]
            }
            PromptVariant::Ensemble => PromptTemplate::defaults(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: PromptVariant,
    pub zero_shot_acc: f64,
}

pub fn prompt_ablation(model: &ClipModel, set: &EvalSet) -> Result<Vec<AblationRow>> {
    PromptVariant::ALL
        .iter()
        .map(|&variant| {
            Ok(AblationRow {
                variant,
                zero_shot_acc: zero_shot_iid(model, set, &variant.templates())?,
            })
        })
        .collect()
}

/// `k` column of a report row: a count or a label such as `all`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KValue {
    Num(u64),
    Label(String),
}

impl From<Shots> for KValue {
    fn from(s: Shots) -> Self {
        match s {
            Shots::Zero => KValue::Num(0),
            Shots::K(k) => KValue::Num(k as u64),
            Shots::All => KValue::Label("all".into()),
        }
    }
}

impl fmt::Display for KValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KValue::Num(n) => write!(f, "{n}"),
            KValue::Label(s) => f.write_str(s),
        }
    }
}

/// Rounds to `digits` significant decimal digits.
pub fn round_sig(v: f64, digits: usize) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{:.*e}", digits - 1, v)
        .parse()
        .expect("formatted float parses")
}

pub const REPORT_SIG_DIGITS: usize = 6;
pub const CSV_HEADER: &str = "metric,k,split,mode,batch_size,value,seed";

/// One self-describing metric value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub k: Option<KValue>,
    pub split: Option<String>,
    pub mode: Option<String>,
    pub batch_size: Option<u64>,
    pub value: f64,
    pub seed: u64,
}

impl MetricRow {
    /// The value is rounded to the report precision on construction.
    pub fn new(metric: &str, value: f64, seed: u64) -> Self {
        Self {
            metric: metric.into(),
            k: None,
            split: None,
            mode: None,
            batch_size: None,
            value: round_sig(value, REPORT_SIG_DIGITS),
            seed,
        }
    }

    pub fn k(mut self, k: impl Into<KValue>) -> Self {
        self.k = Some(k.into());
        self
    }

    pub fn split(mut self, s: impl Into<String>) -> Self {
        self.split = Some(s.into());
        self
    }

    pub fn mode(mut self, m: impl Into<String>) -> Self {
        self.mode = Some(m.into());
        self
    }

    pub fn batch_size(mut self, n: usize) -> Self {
        self.batch_size = Some(n as u64);
        self
    }
}

impl From<usize> for KValue {
    fn from(k: usize) -> Self {
        KValue::Num(k as u64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => ReportFormat::Csv,
            _ => ReportFormat::Json,
        }
    }
}

pub fn report_to_string(rows: &[MetricRow], format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(rows)?),
        ReportFormat::Csv => {
            let mut out = String::from(CSV_HEADER);
            out.push('\n');
            let opt = |o: Option<String>| o.unwrap_or_default();
            for r in rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    r.metric,
                    opt(r.k.as_ref().map(KValue::to_string)),
                    opt(r.split.clone()),
                    opt(r.mode.clone()),
                    opt(r.batch_size.map(|b| b.to_string())),
                    r.value,
                    r.seed
                ));
            }
            Ok(out)
        }
    }
}

pub fn report_from_str(text: &str, format: ReportFormat) -> Result<Vec<MetricRow>> {
    match format {
        ReportFormat::Json => Ok(serde_json::from_str(text)?),
        ReportFormat::Csv => {
            let mut lines = text.lines();
            if lines.next() != Some(CSV_HEADER) {
                return Err(Error::Format("CSV report header mismatch".into()));
            }
            let bad = |l: &str| Error::Format(format!("bad CSV report line {l:?}"));
            let nonempty = |s: &str| (!s.is_empty()).then(|| s.to_owned());
            lines
                .filter(|l| !l.is_empty())
                .map(|l| {
                    let f: Vec<&str> = l.split(',').collect();
                    if f.len() != 7 {
                        return Err(bad(l));
                    }
                    Ok(MetricRow {
                        metric: f[0].to_owned(),
                        k: nonempty(f[1]).map(|k| match k.parse() {
                            Ok(n) => KValue::Num(n),
                            Err(_) => KValue::Label(k),
                        }),
                        split: nonempty(f[2]),
                        mode: nonempty(f[3]),
                        batch_size: match f[4] {
                            "" => None,
                            s => Some(s.parse().map_err(|_| bad(l))?),
                        },
                        value: f[5].parse().map_err(|_| bad(l))?,
                        seed: f[6].parse().map_err(|_| bad(l))?,
                    })
                })
                .collect()
        }
    }
}

pub fn write_report(rows: &[MetricRow], path: &Path, format: ReportFormat) -> Result<()> {
    if let Some(r) = rows.iter().find(|r| !r.value.is_finite()) {
        return Err(Error::NonFinite {
            op: if r.metric.is_empty() { "report" } else { "report value" },
        });
    }
    fs::write(path, report_to_string(rows, format)?).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path, format: ReportFormat) -> Result<Vec<MetricRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    report_from_str(&text, format)
}

/// Sweeps that need their own training runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub sample_counts: Vec<usize>,
    pub modes: Vec<TextMode>,
    pub batch_sizes: Vec<usize>,
    pub budget: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sample_counts: vec![256, 512, 1024, 2048, 4096],
            modes: vec![TextMode::Bow, TextMode::Positional],
            batch_sizes: vec![4, 8, 16, 32, 64],
            budget: 64 * 1500,
        }
    }
}

/// The standard evaluation of a trained model: zero-shot accuracy on every
/// split, the prompt ablation, the few-shot curve, both shift gaps and
/// caption-to-image Recall@10.
pub fn evaluate_model(model: &ClipModel, corpus: &Corpus, seed: u64) -> Result<Vec<MetricRow>> {
    let set = EvalSet::from_corpus(model, corpus)?;
    let templates = PromptTemplate::defaults();
    let log_scale = model.params.log_scale;
    let class_embs = build_class_embeddings(model, &set.classes, &templates)?;
    let mut rows = Vec::new();

    for (split, data) in [(Split::TestIid, &set.test_iid), (Split::TestShifted, &set.test_shifted)] {
        let acc = accuracy_from_embeddings(&data.embs, &data.labels, &class_embs, log_scale)?;
        rows.push(
            MetricRow::new("zero_shot_acc", acc, seed)
                .k(Shots::Zero)
                .split(split.as_str()),
        );
    }
    if !set.test_heldout.is_empty() {
        let held = build_class_embeddings(model, &set.heldout_classes, &templates)?;
        let acc = accuracy_from_embeddings(&set.test_heldout.embs, &set.test_heldout.labels, &held, log_scale)?;
        rows.push(
            MetricRow::new("zero_shot_acc", acc, seed)
                .k(Shots::Zero)
                .split(Split::TestHeldout.as_str()),
        );
    }
    for a in prompt_ablation(model, &set)? {
        rows.push(
            MetricRow::new("prompt_ablation_acc", a.zero_shot_acc, seed)
                .split(Split::TestIid.as_str())
                .mode(a.variant.as_str()),
        );
    }
    let mut ladder = Shots::FEW_SHOT_LADDER.to_vec();
    ladder.push(Shots::All);
    for p in few_shot_curve(&class_embs, log_scale, &set.train, &set.test_iid, &ladder, seed)? {
        let metric = if p.shots == Shots::Zero {
            "zero_shot_acc"
        } else {
            "probe_acc"
        };
        rows.push(
            MetricRow::new(metric, p.accuracy, seed)
                .k(p.shots)
                .split(Split::TestIid.as_str()),
        );
    }
    let gaps = shift_gap(
        &class_embs,
        log_scale,
        &set.train,
        &set.test_iid,
        &set.test_shifted,
        seed,
    )?;
    rows.extend(shift_gap_rows(&gaps, seed));
    let r = caption_retrieval(model, corpus, Split::TestIid, 10)?;
    rows.push(
        MetricRow::new("recall_at_k", r.recall.mean, seed)
            .k(10usize)
            .split(Split::TestIid.as_str()),
    );
    rows.push(
        MetricRow::new("recall_at_k_random_baseline", r.random_baseline, seed)
            .k(10usize)
            .split(Split::TestIid.as_str()),
    );
    Ok(rows)
}

pub fn shift_gap_rows(g: &ShiftGapReport, seed: u64) -> Vec<MetricRow> {
    vec![
        MetricRow::new("shift_gap", g.zero_shot.gap, seed)
            .k(Shots::Zero)
            .mode("zero_shot"),
        MetricRow::new("shift_gap", g.probe.gap, seed)
            .k(Shots::All)
            .mode("probe"),
        MetricRow::new("shift_gap_margin", g.robustness_margin(), seed),
    ]
}

pub fn sweep_rows(corpus: &Corpus, base: &TrainConfig, sweep: &SweepConfig) -> Result<Vec<MetricRow>> {
    let seed = base.seed;
    let mut rows = Vec::new();
    for r in efficiency_curve(corpus, &sweep.sample_counts, &sweep.modes, base)? {
        rows.push(
            MetricRow::new("efficiency_zero_shot_acc", r.zero_shot_acc, seed)
                .k(r.n_samples)
                .split(Split::TestIid.as_str())
                .mode(r.mode.as_str())
                .batch_size(base.batch_size),
        );
    }
    for r in batch_size_sweep(corpus, &sweep.batch_sizes, sweep.budget, base)? {
        rows.push(
            MetricRow::new("batch_sweep_zero_shot_acc", r.zero_shot_acc, seed)
                .split(Split::TestIid.as_str())
                .mode(base.text_mode.as_str())
                .batch_size(r.batch_size),
        );
        let (head, tail) = head_tail_means(&r.loss_trace);
        for (metric, v) in [
            ("batch_sweep_loss_first_tenth", head),
            ("batch_sweep_loss_last_tenth", tail),
        ] {
            rows.push(
                MetricRow::new(metric, v, seed)
                    .mode(base.text_mode.as_str())
                    .batch_size(r.batch_size),
            );
        }
    }
    Ok(rows)
}
