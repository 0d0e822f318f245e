//! Ground-truth intervention on the joint task: the foundations named in
//! inference step 2 are replaced by the gold set and the model continues
//! from step 3.

use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::MicRecord;
use crate::evalkit::{parse_prediction, Prediction};
use crate::foundations::{format_foundation_list, foundation_name_runs, parse_foundations, FoundationSet};
use crate::prompts::{build_input, Setting, TaskKind};
use crate::teacher::{segment_chain, CompletionClient, DecodingParams, TeacherError};

#[derive(Debug, Error)]
pub enum InterventionError {
    #[error("step 2 names no moral foundation")]
    NoFoundationSpan,
    #[error("item {id}: original output is not a three-step chain: {reason}")]
    MalformedOutput { id: String, reason: String },
    #[error(transparent)]
    Teacher(#[from] TeacherError),
}

/// Replaces every run of foundation names in `step2` with the gold list.
/// Returns the step unchanged when the names already equal `gold`.
pub fn splice_ground_truth(step2: &str, gold: FoundationSet) -> Result<String, InterventionError> {
    let runs = foundation_name_runs(step2);
    if runs.is_empty() {
        return Err(InterventionError::NoFoundationSpan);
    }
    if parse_foundations(step2).ok() == Some(gold) {
        return Ok(step2.to_string());
    }
    let replacement = format_foundation_list(gold);
    let mut out = String::with_capacity(step2.len());
    let mut last = 0;
    for r in runs {
        out.push_str(&step2[last..r.start]);
        out.push_str(&replacement);
        last = r.end;
    }
    out.push_str(&step2[last..]);
    Ok(out)
}

/// Prompt that makes the model resume at step 3 after the given steps.
pub fn continuation_prompt(input: &str, step1: &str, step2: &str) -> String {
    format!("{input}(1) {step1} (2) {step2} (3)")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionOutcome {
    pub id: String,
    pub original: Prediction,
    pub original_step2: String,
    pub spliced_step2: String,
    /// Whether step 2 named a set other than the gold one.
    pub changed: bool,
    pub continuation_prompt: String,
    pub intervened: Prediction,
}

/// Runs one item through the joint `ours` model, splices step 2 and asks
/// for a fresh step 3. Unchanged items keep their original prediction.
pub fn run_intervention(
    client: &CompletionClient,
    record: &MicRecord,
    params: &DecodingParams,
) -> Result<InterventionOutcome, InterventionError> {
    let input = build_input(record, TaskKind::Joint, Setting::Ours);
    let raw = client.complete(&client.request(input.clone(), params.clone()))?;
    let original = parse_prediction(&record.id, &raw, TaskKind::Joint);
    let chain = segment_chain(&raw)
        .map_err(|e| InterventionError::MalformedOutput { id: record.id.clone(), reason: e.to_string() })?;
    let spliced = splice_ground_truth(&chain.step2, record.gold_foundations)?;
    let changed = parse_foundations(&chain.step2).ok() != Some(record.gold_foundations);
    let prompt = continuation_prompt(&input, &chain.step1, &spliced);
    let intervened = if changed {
        let tail = client.complete(&client.request(prompt.clone(), params.clone()))?;
        let text = format!("(1) {} (2) {} (3){}", chain.step1, spliced, tail);
        parse_prediction(&record.id, &text, TaskKind::Joint)
    } else {
        original.clone()
    };
    Ok(InterventionOutcome {
        id: record.id.clone(),
        original,
        original_step2: chain.step2.clone(),
        spliced_step2: spliced,
        changed,
        continuation_prompt: prompt,
        intervened,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionSummary {
    pub n: usize,
    pub changed: usize,
    pub failed: usize,
    pub original_accuracy: f64,
    pub intervened_accuracy: f64,
    /// `intervened_accuracy - original_accuracy` over the same items.
    pub delta: f64,
}

/// Judgment accuracy before and after intervention over the items that
/// produced an outcome. `golds` must contain every outcome id.
pub fn summarize(
    outcomes: &[InterventionOutcome],
    golds: &[MicRecord],
    failed: usize,
) -> InterventionSummary {
    let gold_of = |id: &str| golds.iter().find(|g| g.id == id).map(|g| g.gold_judgment);
    let n = outcomes.len();
    let hits = |pick: fn(&InterventionOutcome) -> &Prediction| {
        outcomes.iter().filter(|o| pick(o).judgment.is_some() && pick(o).judgment == gold_of(&o.id)).count()
    };
    let acc = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let original_accuracy = acc(hits(|o| &o.original));
    let intervened_accuracy = acc(hits(|o| &o.intervened));
    InterventionSummary {
        n,
        changed: outcomes.iter().filter(|o| o.changed).count(),
        failed,
        original_accuracy,
        intervened_accuracy,
        delta: intervened_accuracy - original_accuracy,
    }
}

/// Runs every record, returning outcomes in input order and the errors of
/// items that could not be processed.
pub fn run_batch(
    client: &CompletionClient,
    records: &[MicRecord],
    params: &DecodingParams,
) -> (Vec<InterventionOutcome>, Vec<(String, InterventionError)>) {
    let results = client.map_bounded(records, |r| run_intervention(client, r, params));
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (r, res) in records.iter().zip(results) {
        match res {
            Ok(o) => ok.push(o),
            Err(e) => failed.push((r.id.clone(), e)),
        }
    }
    (ok, failed)
}

pub fn write_outcomes_jsonl(path: &Path, outcomes: &[InterventionOutcome]) -> io::Result<()> {
    let mut w = io::BufWriter::new(std::fs::File::create(path)?);
    for o in outcomes {
        serde_json::to_writer(&mut w, o)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::dataset::synthetic_dataset;
    use crate::foundations::MoralFoundation::*;
    use crate::teacher::stub::{StubCell, StubModel};
    use crate::teacher::{ClientPolicy, ResponseCache};

    #[test]
    fn splice_replaces_runs_only() {
        let gold = FoundationSet::new([Care, Sanctity]).unwrap();
        let s = splice_ground_truth("relevant to loyalty and authority because of duty", gold).unwrap();
        assert_eq!(s, "relevant to care and sanctity because of duty");
        let s = splice_ground_truth("Fairness matters; so does Liberty.", gold).unwrap();
        assert_eq!(s, "care and sanctity matters; so does care and sanctity.");
    }

    #[test]
    fn splice_is_identity_when_already_gold() {
        let gold = FoundationSet::new([Care, Fairness]).unwrap();
        let step = "relates to Fairness, and also care";
        assert_eq!(splice_ground_truth(step, gold).unwrap(), step);
    }

    #[test]
    fn splice_without_names_fails() {
        let gold = FoundationSet::single(Care);
        assert!(matches!(splice_ground_truth("no names", gold), Err(InterventionError::NoFoundationSpan)));
    }

    #[test]
    fn stub_intervention_helps() {
        let records = synthetic_dataset(120, 5);
        let cell = StubCell { task: TaskKind::Joint, setting: Setting::Ours, size: 120, seed: 0 };
        let client = CompletionClient::new(
            Arc::new(StubModel::new(&records, cell)),
            ResponseCache::in_memory(),
            ClientPolicy::default(),
        );
        let (outcomes, failed) = run_batch(&client, &records, &DecodingParams::default());
        assert!(failed.is_empty(), "{failed:?}");
        for o in outcomes.iter().filter(|o| !o.changed) {
            assert_eq!(o.original, o.intervened);
            assert_eq!(o.original_step2, o.spliced_step2);
        }
        let s = summarize(&outcomes, &records, 0);
        assert!(s.changed > 0);
        assert!(s.delta > 0.0, "{s:?}");
    }
}
