//! Prediction parsing and the evaluation metrics: cardinality-stratified
//! foundation accuracy, judgment accuracy, foundation-wise breakdown,
//! perplexity, seed selection and report rendering.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetStats, Judgment, MicRecord};
use crate::foundations::{parse_foundations, FoundationSet, MoralFoundation, ALL_FOUNDATIONS};
use crate::prompts::{Setting, TaskKind, INFERENCE_MARKER};
use crate::teacher::segment_chain;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("prediction ids do not match gold ids (missing: {missing:?}, unexpected: {unexpected:?})")]
    MismatchedIds { missing: Vec<String>, unexpected: Vec<String> },
    #[error("no items to evaluate")]
    EmptyEvaluation,
    #[error("empty log-probability sequence")]
    EmptySequence,
    #[error("log-probability {0} is positive or not a number")]
    PositiveLogprob(f64),
    #[error("reports belong to different grid cells: {0}")]
    HeterogeneousCell(String),
    #[error("no reports given")]
    NoReports,
}

/// Parsed model output. Fields the parser cannot recover stay `None` and
/// are scored as incorrect.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub raw: String,
    pub foundations: Option<FoundationSet>,
    pub judgment: Option<Judgment>,
}

impl Prediction {
    pub fn is_scorable(&self) -> bool {
        self.foundations.is_some() || self.judgment.is_some()
    }
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPrediction {
    pub id: String,
    pub raw: String,
}

const FOUNDATION_ANCHORS: [&str; 2] = ["underlying the rule-of-thumb are", "underlying this"];
const JUDGMENT_ANCHOR: &str = "the moral judgment of the reply is";

fn judgment_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(agree|neutral|disagree)\b").unwrap())
}

fn first_judgment(text: &str) -> Option<Judgment> {
    judgment_regex().find(text).and_then(|m| m.as_str().parse().ok())
}

/// End of the last occurrence of any anchor (ASCII case-insensitive).
fn after_last_anchor<'a>(text: &'a str, anchors: &[&str]) -> Option<&'a str> {
    let lower = text.to_ascii_lowercase();
    anchors.iter().filter_map(|a| lower.rfind(a).map(|at| at + a.len())).max().map(|end| &text[end..])
}

fn parse_foundation_answer(region: &str, task: TaskKind) -> Option<FoundationSet> {
    if let Some(rest) = after_last_anchor(region, &FOUNDATION_ANCHORS) {
        let sentence = rest.split('.').next().unwrap_or(rest);
        if let Ok(s) = parse_foundations(sentence) {
            return Some(s);
        }
    }
    if task == TaskKind::Joint {
        if let Ok(chain) = segment_chain(region) {
            if let Ok(s) = parse_foundations(&chain.step2) {
                return Some(s);
            }
        }
    }
    parse_foundations(region).ok()
}

fn parse_judgment_answer(region: &str) -> Option<Judgment> {
    after_last_anchor(region, &[JUDGMENT_ANCHOR]).and_then(first_judgment).or_else(|| first_judgment(region))
}

/// Extracts the task's answer from generated text. Foundations come from
/// the sentence after the last foundations anchor, then (joint task) from
/// inference step 2, then from a scan of the whole text after the
/// `###Inference:` marker. Judgments come from the first label after the
/// last judgment anchor, falling back to the first label in the text.
pub fn parse_prediction(id: &str, raw: &str, task: TaskKind) -> Prediction {
    let region = match raw.rfind(INFERENCE_MARKER) {
        Some(at) => &raw[at + INFERENCE_MARKER.len()..],
        None => raw,
    };
    Prediction {
        id: id.to_string(),
        raw: raw.to_string(),
        foundations: task.predicts_foundations().then(|| parse_foundation_answer(region, task)).flatten(),
        judgment: task.predicts_judgment().then(|| parse_judgment_answer(region)).flatten(),
    }
}

/// Pairs predictions with golds by id; both sides must cover the same ids.
pub fn align<'a>(
    preds: &'a [Prediction],
    golds: &'a [MicRecord],
) -> Result<Vec<(&'a Prediction, &'a MicRecord)>, EvalError> {
    let by_id: HashMap<&str, &Prediction> = preds.iter().map(|p| (p.id.as_str(), p)).collect();
    let gold_ids: HashSet<&str> = golds.iter().map(|g| g.id.as_str()).collect();
    let missing: Vec<String> =
        golds.iter().filter(|g| !by_id.contains_key(g.id.as_str())).map(|g| g.id.clone()).collect();
    let mut unexpected: Vec<String> =
        preds.iter().filter(|p| !gold_ids.contains(p.id.as_str())).map(|p| p.id.clone()).collect();
    if by_id.len() != preds.len() {
        let mut seen = HashSet::new();
        unexpected.extend(preds.iter().filter(|p| !seen.insert(p.id.as_str())).map(|p| p.id.clone()));
    }
    if !missing.is_empty() || !unexpected.is_empty() {
        return Err(EvalError::MismatchedIds { missing, unexpected });
    }
    Ok(golds.iter().map(|g| (by_id[g.id.as_str()], g)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    /// Correct iff the predicted set equals the gold set.
    #[default]
    ExactSet,
    /// Credit `|pred ∩ gold| / |pred ∪ gold|` per item.
    PerLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfcAccuracy {
    /// Accuracy for `|y_M| = i` at index `i - 1`; `None` for empty strata.
    pub per_cardinality: [Option<f64>; 6],
    pub counts: [usize; 6],
    /// Unweighted mean over `|y_M|` in 1..=3; `None` if any of those is empty.
    pub average: Option<f64>,
    pub mode: ScoringMode,
}

impl MfcAccuracy {
    pub fn from_strata(per_cardinality: [Option<f64>; 6], counts: [usize; 6], mode: ScoringMode) -> Self {
        let average = match per_cardinality[..3] {
            [Some(a), Some(b), Some(c)] => Some((a + b + c) / 3.0),
            _ => None,
        };
        Self { per_cardinality, counts, average, mode }
    }

    pub fn accuracy(&self, cardinality: usize) -> Option<f64> {
        cardinality.checked_sub(1).and_then(|i| self.per_cardinality.get(i).copied().flatten())
    }
}

pub fn mfc_accuracy(
    preds: &[Prediction],
    golds: &[MicRecord],
    mode: ScoringMode,
) -> Result<MfcAccuracy, EvalError> {
    let pairs = align(preds, golds)?;
    let mut credit = [0.0f64; 6];
    let mut counts = [0usize; 6];
    for (p, g) in pairs {
        let gold = g.gold_foundations;
        let i = gold.len() - 1;
        counts[i] += 1;
        credit[i] += match (p.foundations, mode) {
            (None, _) => 0.0,
            (Some(s), ScoringMode::ExactSet) => f64::from(u8::from(s == gold)),
            (Some(s), ScoringMode::PerLabel) => s.intersection_len(gold) as f64 / s.union_len(gold) as f64,
        };
    }
    let mut per = [None; 6];
    for i in 0..6 {
        if counts[i] > 0 {
            per[i] = Some(credit[i] / counts[i] as f64);
        }
    }
    Ok(MfcAccuracy::from_strata(per, counts, mode))
}

pub fn judgment_accuracy(preds: &[Prediction], golds: &[MicRecord]) -> Result<f64, EvalError> {
    let pairs = align(preds, golds)?;
    if pairs.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    let correct = pairs.iter().filter(|(p, g)| p.judgment == Some(g.gold_judgment)).count();
    Ok(correct as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoundationRow {
    pub foundation: MoralFoundation,
    /// Share of training records involving this foundation.
    pub proportion: f64,
    pub accuracy: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoundationWiseTable {
    /// Ascending by training proportion.
    pub rows: Vec<FoundationRow>,
    /// Foundations with no single-foundation test items.
    pub empty_strata: Vec<MoralFoundation>,
}

/// Judgment accuracy per foundation over test items with exactly one gold
/// foundation, paired with that foundation's training proportion.
pub fn foundation_wise_accuracy(
    preds: &[Prediction],
    golds: &[MicRecord],
    training: &DatasetStats,
) -> Result<FoundationWiseTable, EvalError> {
    let pairs = align(preds, golds)?;
    let mut correct = [0usize; 6];
    let mut n = [0usize; 6];
    for (p, g) in pairs {
        if let Some(f) = g.gold_foundations.as_single() {
            n[f.index()] += 1;
            if p.judgment == Some(g.gold_judgment) {
                correct[f.index()] += 1;
            }
        }
    }
    let mut rows: Vec<FoundationRow> = ALL_FOUNDATIONS
        .iter()
        .filter(|f| n[f.index()] > 0)
        .map(|&f| FoundationRow {
            foundation: f,
            proportion: training.proportion(f),
            accuracy: correct[f.index()] as f64 / n[f.index()] as f64,
            n: n[f.index()],
        })
        .collect();
    rows.sort_by(|a, b| {
        a.proportion.total_cmp(&b.proportion).then(a.foundation.index().cmp(&b.foundation.index()))
    });
    let empty_strata = ALL_FOUNDATIONS.iter().copied().filter(|f| n[f.index()] == 0).collect();
    Ok(FoundationWiseTable { rows, empty_strata })
}

/// `exp(-mean(logprobs))`, weighting every token equally.
pub fn perplexity(logprobs: &[f64]) -> Result<f64, EvalError> {
    if logprobs.is_empty() {
        return Err(EvalError::EmptySequence);
    }
    if let Some(&bad) = logprobs.iter().find(|&&x| x.is_nan() || x > 0.0) {
        return Err(EvalError::PositiveLogprob(bad));
    }
    let nll: f64 = -logprobs.iter().sum::<f64>();
    Ok((nll / logprobs.len() as f64).exp())
}

/// Token-weighted perplexity over several scored windows or documents.
pub fn pooled_perplexity<'a>(windows: impl IntoIterator<Item = &'a [f64]>) -> Result<f64, EvalError> {
    let all: Vec<f64> = windows.into_iter().flatten().copied().collect();
    perplexity(&all)
}

/// One evaluation window over a token sequence: tokens `start..end` are fed
/// to the model and only `score_from..end` contribute to the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
    pub score_from: usize,
}

/// Sliding-window layout: each token is scored exactly once.
pub fn sliding_windows(n_tokens: usize, window: usize, stride: usize) -> Vec<Window> {
    assert!(window > 0 && stride > 0 && stride <= window, "invalid window/stride");
    let mut out = Vec::new();
    let mut scored_until = 0;
    let mut start = 0;
    while scored_until < n_tokens {
        let end = (start + window).min(n_tokens);
        out.push(Window { start, end, score_from: scored_until.max(start) });
        scored_until = end;
        start += stride;
    }
    out
}

/// Identifies one grid cell of the experiment.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub model: String,
    pub task: TaskKind,
    pub setting: Setting,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cell: CellKey,
    pub seed: u64,
    pub n_items: usize,
    pub unparsable: usize,
    pub mfc: Option<MfcAccuracy>,
    pub judgment_accuracy: Option<f64>,
    pub foundation_wise: Option<FoundationWiseTable>,
    pub perplexity: Option<f64>,
    /// Seeds considered when this report was selected.
    pub seeds: Vec<u64>,
    pub aggregation: String,
}

impl EvalReport {
    /// Scores parsed predictions for one cell.
    pub fn evaluate(
        cell: CellKey,
        seed: u64,
        preds: &[Prediction],
        golds: &[MicRecord],
        training: Option<&DatasetStats>,
        mode: ScoringMode,
    ) -> Result<Self, EvalError> {
        let pairs = align(preds, golds)?;
        let task = cell.task;
        let mfc = task.predicts_foundations().then(|| mfc_accuracy(preds, golds, mode)).transpose()?;
        let judgment = task.predicts_judgment().then(|| judgment_accuracy(preds, golds)).transpose()?;
        let foundation_wise = match (task.predicts_judgment(), training) {
            (true, Some(stats)) => Some(foundation_wise_accuracy(preds, golds, stats)?),
            _ => None,
        };
        Ok(Self {
            cell,
            seed,
            n_items: pairs.len(),
            unparsable: preds.iter().filter(|p| !p.is_scorable()).count(),
            mfc,
            judgment_accuracy: judgment,
            foundation_wise,
            perplexity: None,
            seeds: vec![seed],
            aggregation: "single".into(),
        })
    }

    /// Average stratified accuracy for the foundations task, judgment
    /// accuracy otherwise.
    pub fn headline(&self) -> Option<f64> {
        match self.cell.task {
            TaskKind::Mfc => self.mfc.as_ref().and_then(|m| m.average),
            _ => self.judgment_accuracy,
        }
    }
}

/// Picks the seed with the best headline accuracy; ties go to the lowest
/// seed.
pub fn best_of_seeds(reports: &[EvalReport]) -> Result<EvalReport, EvalError> {
    let first = reports.first().ok_or(EvalError::NoReports)?;
    if let Some(other) = reports.iter().find(|r| r.cell != first.cell) {
        return Err(EvalError::HeterogeneousCell(format!("{:?} vs {:?}", first.cell, other.cell)));
    }
    let best = reports
        .iter()
        .max_by(|a, b| {
            let (ha, hb) =
                (a.headline().unwrap_or(f64::NEG_INFINITY), b.headline().unwrap_or(f64::NEG_INFINITY));
            ha.total_cmp(&hb).then(b.seed.cmp(&a.seed))
        })
        .expect("nonempty");
    let mut out = best.clone();
    let mut seeds: Vec<u64> = reports.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    out.seeds = seeds;
    out.aggregation = "best-of-seeds".into();
    Ok(out)
}

/// Rounds half-up to three decimals.
pub fn round3(x: f64) -> f64 {
    ((x * 1000.0) + 0.5 + 1e-9).floor() / 1000.0
}

/// `.433` style: three decimals, leading zero dropped.
pub fn fmt3(x: f64) -> String {
    let s = format!("{:.3}", round3(x));
    if let Some(rest) = s.strip_prefix("0.") {
        format!(".{rest}")
    } else if let Some(rest) = s.strip_prefix("-0.") {
        format!("-.{rest}")
    } else {
        s
    }
}

pub const EMPTY_CELL: &str = "—";

fn cell(x: Option<f64>) -> String {
    x.map(fmt3).unwrap_or_else(|| EMPTY_CELL.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Stratified foundation accuracy, base / base+ / ours per stratum.
    MfcTable,
    /// Judgment accuracy, base / base+ / ours.
    JudgmentTable,
    /// Judgment task vs joint task (both `ours`).
    JudgmentVsJoint,
    /// Perplexity per task and setting.
    Perplexity,
    /// Foundation-wise judgment accuracy of the joint task.
    FoundationWise,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedReport {
    pub text: String,
    pub csv: String,
}

type RowKey = (String, usize);

fn row_keys(reports: &[&EvalReport]) -> Vec<RowKey> {
    let mut keys: Vec<RowKey> = reports.iter().map(|r| (r.cell.model.clone(), r.cell.size)).collect();
    keys.sort();
    keys.dedup();
    keys
}

fn find<'a>(
    reports: &[&'a EvalReport],
    key: &RowKey,
    task: TaskKind,
    setting: Setting,
) -> Option<&'a EvalReport> {
    reports.iter().copied().find(|r| {
        r.cell.model == key.0 && r.cell.size == key.1 && r.cell.task == task && r.cell.setting == setting
    })
}

/// Fixed-width text table; the first two columns are left-aligned, the
/// rest right-aligned.
pub fn render_table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (i, c) in r.iter().enumerate().take(cols) {
            widths[i] = widths[i].max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let pad = widths[i].saturating_sub(c.chars().count());
                if i < 2 {
                    format!("{c}{}", " ".repeat(pad))
                } else {
                    format!("{}{c}", " ".repeat(pad))
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = String::new();
    writeln!(out, "{}", line(header)).unwrap();
    let total: usize = widths.iter().sum::<usize>() + 2 * (cols - 1);
    writeln!(out, "{}", "-".repeat(total)).unwrap();
    for r in rows {
        writeln!(out, "{}", line(r)).unwrap();
    }
    out
}

fn csv_text(header: &[String], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).unwrap();
    for r in rows {
        w.write_record(r).unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

fn raw(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// Renders selected reports as a fixed-width table (values rounded half-up
/// to three decimals) and as CSV with full precision.
pub fn render_report(reports: &[EvalReport], layout: Layout) -> RenderedReport {
    let all: Vec<&EvalReport> = reports.iter().collect();
    let s = |v: &str| v.to_string();
    match layout {
        Layout::MfcTable => {
            let reps: Vec<&EvalReport> =
                all.iter().copied().filter(|r| r.cell.task == TaskKind::Mfc).collect();
            let mut header = vec![s("Model"), s("Size")];
            let mut csv_header = vec![s("model"), s("size"), s("setting")];
            for stratum in ["#MFs=1", "#MFs=2", "#MFs=3", "Average"] {
                for st in Setting::ALL {
                    header.push(format!("{stratum} {}", st.label()));
                }
            }
            csv_header.extend([s("acc_1"), s("acc_2"), s("acc_3"), s("average")]);
            let mut rows = Vec::new();
            let mut csv_rows = Vec::new();
            for key in row_keys(&reps) {
                let mut row = vec![key.0.clone(), key.1.to_string()];
                let get = |st| find(&reps, &key, TaskKind::Mfc, st).and_then(|r| r.mfc.clone());
                for i in 1..=4 {
                    for st in Setting::ALL {
                        let v = get(st).and_then(|m| if i == 4 { m.average } else { m.accuracy(i) });
                        row.push(cell(v));
                    }
                }
                for st in Setting::ALL {
                    if let Some(m) = get(st) {
                        csv_rows.push(vec![
                            key.0.clone(),
                            key.1.to_string(),
                            s(st.label()),
                            raw(m.accuracy(1)),
                            raw(m.accuracy(2)),
                            raw(m.accuracy(3)),
                            raw(m.average),
                        ]);
                    }
                }
                rows.push(row);
            }
            RenderedReport { text: render_table(&header, &rows), csv: csv_text(&csv_header, &csv_rows) }
        }
        Layout::JudgmentTable => {
            let reps: Vec<&EvalReport> =
                all.iter().copied().filter(|r| r.cell.task == TaskKind::Judgment).collect();
            let header = vec![s("Model"), s("Size"), s("base"), s("base+"), s("ours")];
            let mut rows = Vec::new();
            let mut csv_rows = Vec::new();
            for key in row_keys(&reps) {
                let mut row = vec![key.0.clone(), key.1.to_string()];
                for st in Setting::ALL {
                    let v = find(&reps, &key, TaskKind::Judgment, st).and_then(|r| r.judgment_accuracy);
                    row.push(cell(v));
                    if v.is_some() {
                        csv_rows.push(vec![key.0.clone(), key.1.to_string(), s(st.label()), raw(v)]);
                    }
                }
                rows.push(row);
            }
            let csv_header = vec![s("model"), s("size"), s("setting"), s("accuracy")];
            RenderedReport { text: render_table(&header, &rows), csv: csv_text(&csv_header, &csv_rows) }
        }
        Layout::JudgmentVsJoint => {
            let reps: Vec<&EvalReport> = all
                .iter()
                .copied()
                .filter(|r| r.cell.task != TaskKind::Mfc && r.cell.setting == Setting::Ours)
                .collect();
            let header = vec![s("Model"), s("Size"), s("Judgment"), s("MFC-Judgment")];
            let mut rows = Vec::new();
            let mut csv_rows = Vec::new();
            for key in row_keys(&reps) {
                let j =
                    find(&reps, &key, TaskKind::Judgment, Setting::Ours).and_then(|r| r.judgment_accuracy);
                let jj = find(&reps, &key, TaskKind::Joint, Setting::Ours).and_then(|r| r.judgment_accuracy);
                rows.push(vec![key.0.clone(), key.1.to_string(), cell(j), cell(jj)]);
                csv_rows.push(vec![key.0.clone(), key.1.to_string(), raw(j), raw(jj)]);
            }
            let csv_header = vec![s("model"), s("size"), s("judgment"), s("joint")];
            RenderedReport { text: render_table(&header, &rows), csv: csv_text(&csv_header, &csv_rows) }
        }
        Layout::Perplexity => {
            let mut reps: Vec<&EvalReport> = all.iter().copied().filter(|r| r.perplexity.is_some()).collect();
            reps.sort_by(|a, b| {
                (&a.cell.model, a.cell.task, a.cell.size, a.cell.setting).cmp(&(
                    &b.cell.model,
                    b.cell.task,
                    b.cell.size,
                    b.cell.setting,
                ))
            });
            let header = vec![s("Model"), s("Task"), s("Size"), s("Setting"), s("Perplexity")];
            let rows: Vec<Vec<String>> = reps
                .iter()
                .map(|r| {
                    vec![
                        r.cell.model.clone(),
                        s(r.cell.task.name()),
                        r.cell.size.to_string(),
                        s(r.cell.setting.label()),
                        r.perplexity.map(|p| format!("{p:.3}")).unwrap_or_else(|| EMPTY_CELL.into()),
                    ]
                })
                .collect();
            let csv_rows: Vec<Vec<String>> = reps
                .iter()
                .map(|r| {
                    vec![
                        r.cell.model.clone(),
                        s(r.cell.task.name()),
                        r.cell.size.to_string(),
                        s(r.cell.setting.label()),
                        raw(r.perplexity),
                    ]
                })
                .collect();
            let csv_header = vec![s("model"), s("task"), s("size"), s("setting"), s("perplexity")];
            RenderedReport { text: render_table(&header, &rows), csv: csv_text(&csv_header, &csv_rows) }
        }
        Layout::FoundationWise => {
            let reps: Vec<&EvalReport> = all
                .iter()
                .copied()
                .filter(|r| r.cell.task == TaskKind::Joint && r.foundation_wise.is_some())
                .collect();
            let header = vec![
                s("Model"),
                s("Size"),
                s("Setting"),
                s("Foundation"),
                s("Proportion"),
                s("Accuracy"),
                s("N"),
            ];
            let mut rows = Vec::new();
            let mut csv_rows = Vec::new();
            for r in reps {
                let table = r.foundation_wise.as_ref().unwrap();
                for row in &table.rows {
                    rows.push(vec![
                        r.cell.model.clone(),
                        r.cell.size.to_string(),
                        s(r.cell.setting.label()),
                        s(row.foundation.name()),
                        fmt3(row.proportion),
                        fmt3(row.accuracy),
                        row.n.to_string(),
                    ]);
                    csv_rows.push(vec![
                        r.cell.model.clone(),
                        r.cell.size.to_string(),
                        s(r.cell.setting.label()),
                        s(row.foundation.name()),
                        raw(Some(row.proportion)),
                        raw(Some(row.accuracy)),
                        row.n.to_string(),
                    ]);
                }
                for f in &table.empty_strata {
                    rows.push(vec![
                        r.cell.model.clone(),
                        r.cell.size.to_string(),
                        s(r.cell.setting.label()),
                        s(f.name()),
                        EMPTY_CELL.into(),
                        EMPTY_CELL.into(),
                        "0".into(),
                    ]);
                }
            }
            let csv_header = vec![
                s("model"),
                s("size"),
                s("setting"),
                s("foundation"),
                s("proportion"),
                s("accuracy"),
                s("n"),
            ];
            RenderedReport { text: render_table(&header, &rows), csv: csv_text(&csv_header, &csv_rows) }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Agreement;
    use crate::foundations::MoralFoundation::*;

    fn gold(id: &str, set: &[MoralFoundation], j: Judgment) -> MicRecord {
        MicRecord {
            id: id.into(),
            prompt: "p".into(),
            reply: "r".into(),
            rot: "x".into(),
            gold_foundations: FoundationSet::new(set.iter().copied()).unwrap(),
            gold_judgment: j,
            agreement: Agreement::Full,
        }
    }

    fn pred(id: &str, set: Option<&[MoralFoundation]>, j: Option<Judgment>) -> Prediction {
        Prediction {
            id: id.into(),
            raw: String::new(),
            foundations: set.map(|s| FoundationSet::new(s.iter().copied()).unwrap()),
            judgment: j,
        }
    }

    #[test]
    fn parses_anchored_answers() {
        let p = parse_prediction(
            "a",
            "(1) x (2) y (3) z the moral foundations underlying the rule-of-thumb are care, fairness.",
            TaskKind::Mfc,
        );
        assert_eq!(p.foundations, Some(FoundationSet::new([Care, Fairness]).unwrap()));
        assert_eq!(p.judgment, None);
        let p = parse_prediction("a", "blah. The moral judgment of the reply is Agree.", TaskKind::Judgment);
        assert_eq!(p.judgment, Some(Judgment::Agree));
        let p = parse_prediction("a", "no anchors, no labels at all", TaskKind::Joint);
        assert!(!p.is_scorable());
    }

    #[test]
    fn judgment_anchor_wins_over_earlier_mentions() {
        let p = parse_prediction(
            "a",
            "I disagree with many things. The moral judgment of the reply is Neutral.",
            TaskKind::Judgment,
        );
        assert_eq!(p.judgment, Some(Judgment::Neutral));
        let p = parse_prediction("a", "The moral judgment of the reply is disagree.", TaskKind::Judgment);
        assert_eq!(p.judgment, Some(Judgment::Disagree));
    }

    #[test]
    fn joint_foundations_from_step_two() {
        let raw = "(1) The conclusion is x. (2) relevant to moral foundations loyalty because y. (3) It \
                   obeys loyalty and care. The moral judgment of the reply is Agree.";
        let p = parse_prediction("a", raw, TaskKind::Joint);
        assert_eq!(p.foundations, Some(FoundationSet::single(Loyalty)));
        assert_eq!(p.judgment, Some(Judgment::Agree));
    }

    #[test]
    fn parse_ignores_text_before_inference_marker() {
        let raw = "Care: definitions... ###Inference: (1) a (2) b (3) c the moral foundations underlying \
                   the rule-of-thumb are sanctity.";
        assert_eq!(
            parse_prediction("a", raw, TaskKind::Mfc).foundations,
            Some(FoundationSet::single(Sanctity))
        );
    }

    #[test]
    fn table3_averages() {
        let m = MfcAccuracy::from_strata(
            [Some(0.890), Some(0.856), Some(0.806), None, None, None],
            [1, 1, 1, 0, 0, 0],
            ScoringMode::ExactSet,
        );
        assert_eq!(fmt3(m.average.unwrap()), ".851");
        let m = MfcAccuracy::from_strata(
            [Some(0.501), Some(0.402), Some(0.396), None, None, None],
            [1, 1, 1, 0, 0, 0],
            ScoringMode::ExactSet,
        );
        assert_eq!(fmt3(m.average.unwrap()), ".433");
    }

    #[test]
    fn exact_set_counts_superset_wrong() {
        let golds = vec![
            gold("a", &[Care], Judgment::Agree),
            gold("b", &[Fairness], Judgment::Agree),
            gold("c", &[Loyalty], Judgment::Agree),
            gold("d", &[Sanctity], Judgment::Agree),
        ];
        let preds = vec![
            pred("a", Some(&[Care]), None),
            pred("b", Some(&[Fairness]), None),
            pred("c", Some(&[Loyalty, Care]), None),
            pred("d", None, None),
        ];
        let m = mfc_accuracy(&preds, &golds, ScoringMode::ExactSet).unwrap();
        assert_eq!(m.accuracy(1), Some(0.5));
        assert_eq!(m.average, None);
        let m = mfc_accuracy(&preds, &golds, ScoringMode::PerLabel).unwrap();
        assert_eq!(m.accuracy(1), Some(2.5 / 4.0));
    }

    #[test]
    fn mismatched_ids() {
        let golds = vec![gold("a", &[Care], Judgment::Agree)];
        let preds = vec![pred("b", None, None)];
        assert!(matches!(judgment_accuracy(&preds, &golds), Err(EvalError::MismatchedIds { .. })));
        let preds = vec![pred("a", None, None), pred("a", None, None)];
        assert!(matches!(judgment_accuracy(&preds, &golds), Err(EvalError::MismatchedIds { .. })));
    }

    #[test]
    fn perplexity_cases() {
        let p = perplexity(&[(0.25f64).ln(); 7]).unwrap();
        assert!((p - 4.0).abs() / 4.0 < 1e-9);
        assert_eq!(perplexity(&[0.0]).unwrap(), 1.0);
        let p = perplexity(&[(0.5f64).ln(), (0.125f64).ln()]).unwrap();
        assert!((p - 4.0).abs() < 1e-9);
        assert_eq!(perplexity(&[]), Err(EvalError::EmptySequence));
        assert_eq!(perplexity(&[-1.0, 0.5]), Err(EvalError::PositiveLogprob(0.5)));
        assert!(perplexity(&[f64::NAN]).is_err());
    }

    #[test]
    fn windows_score_each_token_once() {
        for (n, w, s) in [(0, 512, 512), (1, 512, 512), (1500, 512, 512), (1000, 512, 256), (10, 4, 1)] {
            let ws = sliding_windows(n, w, s);
            let scored: usize = ws.iter().map(|w| w.end - w.score_from).sum();
            assert_eq!(scored, n);
            assert!(ws.iter().all(|x| x.end - x.start <= w));
        }
    }

    #[test]
    fn rounding_and_formatting() {
        assert_eq!(fmt3(0.7896666), ".790");
        assert_eq!(fmt3(0.8505), ".851");
        assert_eq!(fmt3(1.0), "1.000");
        assert_eq!(fmt3(-0.0121), "-.012");
        assert_eq!(cell(None), "—");
    }
}
