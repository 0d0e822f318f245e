//! Fine-tuning corpora: selection with backfill, JSONL emission with a
//! manifest, and grammar validation of emitted files.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{compute_stats, DatasetStats, MicRecord};
use crate::foundations::{definitions_paragraph, parse_foundations};
use crate::prompts::{build_sft_record, PromptError, Setting, SftRecord, TaskKind, INFERENCE_MARKER};
use crate::teacher::{marker_positions, InferenceChain};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("missing inference chains for {} record(s): {}", .0.len(), .0.join(", "))]
    MissingChain(Vec<String>),
    #[error("I/O failure on {path}: {source}")]
    IoFailure { path: PathBuf, source: io::Error },
    #[error("cannot read {path}: {source}")]
    UnreadableFile { path: PathBuf, source: io::Error },
    #[error("invalid manifest {path}: {reason}")]
    InvalidManifest { path: PathBuf, reason: String },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub task: TaskKind,
    pub setting: Setting,
    pub size_requested: usize,
    pub size_emitted: usize,
    pub seed: u64,
    pub stats: DatasetStats,
    /// SHA-256 hex digest of the corpus file bytes.
    pub digest: String,
    /// Records passed over during selection because chain generation failed.
    pub skipped: usize,
    pub corpus_file: String,
}

/// `<dir>/<stem>.manifest.json` next to `<dir>/<stem>.jsonl`.
pub fn manifest_path(corpus: &Path) -> PathBuf {
    corpus.with_extension("manifest.json")
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Result of walking the sampling order to fill a corpus of a given size.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub records: Vec<MicRecord>,
    pub skipped: Vec<String>,
}

/// Takes records from `ordered` until `size` are selected. For `ours`
/// corpora, records whose chain generation failed (`failed`) are skipped and
/// replaced by the next records in order.
pub fn select_records(
    ordered: &[MicRecord],
    size: usize,
    setting: Setting,
    failed: &HashSet<String>,
) -> Selection {
    let mut records = Vec::with_capacity(size.min(ordered.len()));
    let mut skipped = Vec::new();
    for r in ordered {
        if records.len() == size {
            break;
        }
        if setting == Setting::Ours && failed.contains(&r.id) {
            skipped.push(r.id.clone());
        } else {
            records.push(r.clone());
        }
    }
    Selection { records, skipped }
}

/// Writes `records` as JSONL `{id, input, target}` lines in the given order,
/// followed by a manifest next to the corpus file.
pub fn emit_corpus(
    records: &[MicRecord],
    task: TaskKind,
    setting: Setting,
    chains: &HashMap<String, InferenceChain>,
    out: &Path,
    meta: EmitMeta,
) -> Result<CorpusManifest, CorpusError> {
    if setting == Setting::Ours {
        let missing: Vec<String> =
            records.iter().filter(|r| !chains.contains_key(&r.id)).map(|r| r.id.clone()).collect();
        if !missing.is_empty() {
            return Err(CorpusError::MissingChain(missing));
        }
    }
    let lines = records
        .iter()
        .map(|r| {
            let chain = (setting == Setting::Ours).then(|| &chains[&r.id]);
            build_sft_record(r, task, setting, chain)
        })
        .collect::<Result<Vec<SftRecord>, _>>()?;

    let io_err = |source| CorpusError::IoFailure { path: out.to_path_buf(), source };
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent).map_err(io_err)?;
    }
    let mut w = BufWriter::new(File::create(out).map_err(io_err)?);
    for line in &lines {
        serde_json::to_writer(&mut w, line).map_err(|e| io_err(e.into()))?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    drop(w);

    let manifest = CorpusManifest {
        task,
        setting,
        size_requested: meta.size_requested.unwrap_or(records.len()),
        size_emitted: lines.len(),
        seed: meta.seed,
        stats: compute_stats(records),
        digest: sha256_file(out).map_err(io_err)?,
        skipped: meta.skipped,
        corpus_file: out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
    };
    let mpath = manifest_path(out);
    let body = serde_json::to_vec_pretty(&manifest).map_err(|e| io_err(e.into()))?;
    fs::write(&mpath, body).map_err(|source| CorpusError::IoFailure { path: mpath.clone(), source })?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EmitMeta {
    pub size_requested: Option<usize>,
    pub seed: u64,
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LineFailure {
    InvalidJson,
    EmptyField,
    MissingInferenceMarker,
    UnexpectedInferenceMarker,
    MalformedInference,
    DefinitionsMismatch,
    InputShape,
    TargetShape,
    LeakCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineReport {
    /// 1-based line number.
    pub line: usize,
    pub id: Option<String>,
    pub failures: Vec<LineFailure>,
}

impl LineReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub task: TaskKind,
    pub setting: Setting,
    pub lines: Vec<LineReport>,
}

impl ValidationReport {
    pub fn failures(&self) -> impl Iterator<Item = &LineReport> {
        self.lines.iter().filter(|l| !l.passed())
    }

    pub fn failure_count(&self) -> usize {
        self.failures().count()
    }

    pub fn counts(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for l in &self.lines {
            for f in &l.failures {
                *m.entry(format!("{f:?}")).or_insert(0) += 1;
            }
        }
        m
    }
}

/// Validates a corpus using the task and setting from its manifest.
pub fn validate_corpus(path: &Path) -> Result<ValidationReport, CorpusError> {
    let mpath = manifest_path(path);
    let text = fs::read_to_string(&mpath)
        .map_err(|source| CorpusError::UnreadableFile { path: mpath.clone(), source })?;
    let m: CorpusManifest = serde_json::from_str(&text)
        .map_err(|e| CorpusError::InvalidManifest { path: mpath, reason: e.to_string() })?;
    validate_corpus_as(path, m.task, m.setting)
}

pub fn validate_corpus_as(
    path: &Path,
    task: TaskKind,
    setting: Setting,
) -> Result<ValidationReport, CorpusError> {
    let file = File::open(path)
        .map_err(|source| CorpusError::UnreadableFile { path: path.to_path_buf(), source })?;
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::UnreadableFile { path: path.to_path_buf(), source })?;
        lines.push(validate_line(i + 1, &line, task, setting));
    }
    Ok(ValidationReport { task, setting, lines })
}

fn mfc_target_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)the moral foundations underlying the rule-of-thumb are ([^.]+)\.$").unwrap()
    })
}

fn judgment_target_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"The moral judgment of the reply is (Agree|Neutral|Disagree)\.$").unwrap())
}

fn joint_foundations_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^The moral foundations underlying this Prompt-Reply are ([^.]+)\. ").unwrap()
    })
}

const FOUNDATIONS_ANNOUNCEMENT: &str = "moral foundations underlying";

/// Checks one corpus line against the record grammar of its cell.
pub fn validate_line(line_no: usize, line: &str, task: TaskKind, setting: Setting) -> LineReport {
    let mut failures = Vec::new();
    let rec: SftRecord = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(_) => return LineReport { line: line_no, id: None, failures: vec![LineFailure::InvalidJson] },
    };
    if rec.id.trim().is_empty() || rec.input.trim().is_empty() || rec.target.trim().is_empty() {
        failures.push(LineFailure::EmptyField);
    }

    let text = rec.text();
    let marker_count = text.matches(INFERENCE_MARKER).count();
    let ours = setting == Setting::Ours;
    if ours {
        let at_boundary = rec.input.trim_end().ends_with(INFERENCE_MARKER);
        if marker_count == 0 {
            failures.push(LineFailure::MissingInferenceMarker);
        } else if marker_count > 1 || !at_boundary {
            failures.push(LineFailure::UnexpectedInferenceMarker);
        }
    } else if marker_count > 0 {
        failures.push(LineFailure::UnexpectedInferenceMarker);
    }

    let defs = definitions_paragraph();
    let has_defs = rec.input.starts_with(&format!("{defs} "));
    let needs_defs = setting != Setting::Base;
    if has_defs != needs_defs || rec.input.matches(defs.as_str()).count() > usize::from(needs_defs) {
        failures.push(LineFailure::DefinitionsMismatch);
    }
    let body = rec.input.strip_prefix(&format!("{defs} ")).unwrap_or(&rec.input);
    let input_head = body.split(INFERENCE_MARKER).next().unwrap_or(body);

    let input_ok = match task {
        TaskKind::Mfc => body.starts_with("The rule-of-thumb judgment is "),
        TaskKind::Judgment => {
            let carries_gold =
                input_head.contains(". The moral foundations underlying this Prompt-Reply are ");
            body.starts_with("There is a Prompt-Reply pair: ") && (carries_gold == needs_defs)
        }
        TaskKind::Joint => body.starts_with("There is a Prompt-Reply pair: "),
    };
    if !input_ok {
        failures.push(LineFailure::InputShape);
    }
    if task == TaskKind::Joint && input_head.to_ascii_lowercase().contains(FOUNDATIONS_ANNOUNCEMENT) {
        failures.push(LineFailure::LeakCheck);
    }

    let (inference, answer) =
        if ours { split_inference(&rec.target, task) } else { (None, rec.target.as_str()) };
    if ours {
        let well_formed = inference
            .filter(|inf| marker_positions(inf).is_some_and(|(p, _)| p[0] == 0))
            .and_then(|inf| crate::teacher::segment_chain(inf).ok());
        match well_formed {
            None => failures.push(LineFailure::MalformedInference),
            Some(chain) => {
                if task == TaskKind::Joint && parse_foundations(&chain.step2).is_err() {
                    failures.push(LineFailure::TargetShape);
                }
            }
        }
    }

    let target_ok = match (task, ours) {
        (TaskKind::Mfc, _) => mfc_target_re()
            .captures(answer)
            .is_some_and(|c| parse_foundations(&c[1]).is_ok() && (ours || c.get(0).unwrap().start() == 0)),
        (TaskKind::Judgment, _) | (TaskKind::Joint, true) => {
            judgment_target_re().find(answer).is_some_and(|m| ours || m.start() == 0)
        }
        (TaskKind::Joint, false) => {
            joint_foundations_re().captures(answer).is_some_and(|c| parse_foundations(&c[1]).is_ok())
                && judgment_target_re().is_match(answer)
        }
    };
    if !target_ok {
        failures.push(LineFailure::TargetShape);
    }
    failures.dedup();
    LineReport { line: line_no, id: Some(rec.id), failures }
}

/// Splits an `ours` target into its inference text and the trailing answer
/// sentence(s).
fn split_inference(target: &str, task: TaskKind) -> (Option<&str>, &str) {
    let anchor = match task {
        TaskKind::Mfc => " the moral foundations underlying the rule-of-thumb are ",
        TaskKind::Judgment | TaskKind::Joint => " The moral judgment of the reply is ",
    };
    match target.rfind(anchor) {
        Some(at) => (Some(&target[..at]), &target[at + 1..]),
        None => (None, target),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthetic_dataset;

    fn chains_for(records: &[MicRecord]) -> HashMap<String, InferenceChain> {
        records
            .iter()
            .map(|r| {
                let names = crate::foundations::format_foundation_list(r.gold_foundations);
                let c = InferenceChain::new(
                    "The conclusion is clear.",
                    format!("It is relevant to moral foundations {names} because of it."),
                    format!("It upholds {names}."),
                )
                .unwrap();
                (r.id.clone(), c)
            })
            .collect()
    }

    #[test]
    fn mfc_base_lines_end_with_foundations_sentence() {
        let dir = tempfile::tempdir().unwrap();
        let records = synthetic_dataset(3, 1);
        let out = dir.path().join("c.jsonl");
        let m =
            emit_corpus(&records, TaskKind::Mfc, Setting::Base, &HashMap::new(), &out, EmitMeta::default())
                .unwrap();
        let text = fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().count(), 3);
        for line in text.lines() {
            let r: SftRecord = serde_json::from_str(line).unwrap();
            assert!(r.target.starts_with("The moral foundations underlying the rule-of-thumb are "));
        }
        assert_eq!(m.size_emitted, 3);
        assert_eq!(m.digest, sha256_file(&out).unwrap());
    }

    #[test]
    fn ours_requires_all_chains() {
        let dir = tempfile::tempdir().unwrap();
        let records = synthetic_dataset(3, 1);
        let mut chains = chains_for(&records);
        chains.remove(&records[1].id);
        let err = emit_corpus(
            &records,
            TaskKind::Joint,
            Setting::Ours,
            &chains,
            &dir.path().join("c.jsonl"),
            EmitMeta::default(),
        )
        .unwrap_err();
        match err {
            CorpusError::MissingChain(ids) => assert_eq!(ids, vec![records[1].id.clone()]),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn emitted_corpora_validate_and_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let records = synthetic_dataset(12, 5);
        let chains = chains_for(&records);
        for task in TaskKind::ALL {
            for setting in Setting::ALL {
                let c = if setting == Setting::Ours { chains.clone() } else { HashMap::new() };
                let a = dir.path().join(format!("{task}_{setting}_a.jsonl"));
                let b = dir.path().join(format!("{task}_{setting}_b.jsonl"));
                let ma = emit_corpus(&records, task, setting, &c, &a, EmitMeta::default()).unwrap();
                let mb = emit_corpus(&records, task, setting, &c, &b, EmitMeta::default()).unwrap();
                assert_eq!(ma.digest, mb.digest);
                let report = validate_corpus(&a).unwrap();
                assert_eq!(report.failure_count(), 0, "{task}/{setting}: {:?}", report.counts());
                assert_eq!(report.lines.len(), ma.size_emitted);
            }
        }
    }

    #[test]
    fn selection_backfills_failed_records() {
        let records = synthetic_dataset(10, 2);
        let failed: HashSet<String> = [records[1].id.clone(), records[3].id.clone()].into();
        let s = select_records(&records, 5, Setting::Ours, &failed);
        let ids: Vec<_> = s.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["syn-0000", "syn-0002", "syn-0004", "syn-0005", "syn-0006"]);
        assert_eq!(s.skipped.len(), 2);
        let s = select_records(&records, 5, Setting::Base, &failed);
        assert_eq!(s.records.len(), 5);
        assert!(s.skipped.is_empty());
    }

    #[test]
    fn mutations_are_detected() {
        let records = synthetic_dataset(2, 3);
        let chains = chains_for(&records);
        let r = build_sft_record(&records[0], TaskKind::Mfc, Setting::Ours, Some(&chains[&records[0].id]))
            .unwrap();
        let mut broken = r.clone();
        broken.input = broken.input.replace("###Inference: ", "");
        let rep = validate_line(1, &serde_json::to_string(&broken).unwrap(), TaskKind::Mfc, Setting::Ours);
        assert!(rep.failures.contains(&LineFailure::MissingInferenceMarker));

        let j = build_sft_record(&records[0], TaskKind::Joint, Setting::Ours, Some(&chains[&records[0].id]))
            .unwrap();
        let mut leaked = j.clone();
        leaked.input = leaked.input.replace(
            "###Inference: ",
            "The moral foundations underlying this Prompt-Reply are care. ###Inference: ",
        );
        let rep = validate_line(1, &serde_json::to_string(&leaked).unwrap(), TaskKind::Joint, Setting::Ours);
        assert_eq!(rep.failures, vec![LineFailure::LeakCheck]);

        let rep = validate_line(1, "not json", TaskKind::Joint, Setting::Ours);
        assert_eq!(rep.failures, vec![LineFailure::InvalidJson]);

        let jb = build_sft_record(&records[0], TaskKind::Judgment, Setting::Base, None).unwrap();
        let rep =
            validate_line(1, &serde_json::to_string(&jb).unwrap(), TaskKind::Judgment, Setting::BasePlus);
        assert!(rep.failures.contains(&LineFailure::DefinitionsMismatch));
    }
}
