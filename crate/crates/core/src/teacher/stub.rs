//! Deterministic in-process endpoints for offline runs and tests.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use super::{CompletionRequest, Endpoint, EndpointError, ScoreRequest};
use crate::dataset::{Judgment, MicRecord};
use crate::foundations::{format_foundation_list, parse_foundations, FoundationSet, ALL_FOUNDATIONS};
use crate::prompts::{Setting, TaskKind, INFERENCE_MARKER};

/// Uniform value in `[0, 1)` derived from the hashed parts.
pub fn unit_hash(parts: &[&str]) -> f64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    let d = h.finalize();
    let x = u64::from_le_bytes(d[..8].try_into().unwrap());
    (x >> 11) as f64 / (1u64 << 53) as f64
}

enum Script {
    Constant(String),
    Echo,
    Failing,
    Sequence(Vec<String>),
}

/// Replays canned answers and counts calls.
pub struct ScriptedEndpoint {
    script: Script,
    calls: AtomicUsize,
    temperatures: Mutex<Vec<f64>>,
}

impl ScriptedEndpoint {
    fn with(script: Script) -> Self {
        Self { script, calls: AtomicUsize::new(0), temperatures: Mutex::default() }
    }

    pub fn constant(text: impl Into<String>) -> Self {
        Self::with(Script::Constant(text.into()))
    }

    /// Returns the prompt unchanged.
    pub fn echo() -> Self {
        Self::with(Script::Echo)
    }

    /// Always fails transiently.
    pub fn failing() -> Self {
        Self::with(Script::Failing)
    }

    /// Returns the answers in turn, repeating the last one.
    pub fn sequence(answers: Vec<String>) -> Self {
        Self::with(Script::Sequence(answers))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn temperatures(&self) -> Vec<f64> {
        self.temperatures.lock().unwrap().clone()
    }
}

impl Endpoint for ScriptedEndpoint {
    fn id(&self) -> String {
        "scripted".into()
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, EndpointError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        self.temperatures.lock().unwrap().push(req.params.temperature);
        match &self.script {
            Script::Constant(t) => Ok(t.clone()),
            Script::Echo => Ok(req.prompt.clone()),
            Script::Failing => Err(EndpointError::Transient("connection refused".into())),
            Script::Sequence(v) => Ok(v[n.min(v.len().saturating_sub(1))].clone()),
        }
    }
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let to = from + text[from..].find(end)?;
    Some(&text[from..to])
}

/// Answers teacher prompts with well-formed three-step chains that name the
/// foundations and judgment the prompt asks about.
#[derive(Debug, Default)]
pub struct StubTeacher;

impl Endpoint for StubTeacher {
    fn id(&self) -> String {
        "stub-teacher".into()
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, EndpointError> {
        let p = &req.prompt;
        let judgment =
            between(p, "The moral judgment of the Reply is ", ".").unwrap_or("Neutral").to_string();
        if p.starts_with("Input: There is a rule of thumb") {
            let mfs = between(p, "relevant to the MFs ", " by referring")
                .ok_or_else(|| EndpointError::Fatal("unrecognized prompt".into()))?;
            let rot = between(p, "(RoT): ", "\n").unwrap_or("the rule");
            Ok(format!(
                "(1) The rule of thumb includes a Judgment to an Action. The Judgment and the \
                 associated Action are stated in \"{rot}\". (2) The consequence of the Action is \
                 that it would affect the people involved. (3) The Action is relevant to the moral \
                 foundations {mfs} because its consequence touches what those foundations protect."
            ))
        } else if p.contains("(1) Explain the definition of moral foundations ") {
            let mfs = between(p, "(1) Explain the definition of moral foundations ", ". (2)")
                .ok_or_else(|| EndpointError::Fatal("unrecognized prompt".into()))?;
            Ok(format!(
                "(1) The moral foundations {mfs} refer to a framework for understanding human \
                 morality. (2) The conclusion of the Reply is that the speaker takes a clear stance. \
                 (3) The moral judgment is {judgment}. The conclusion of the Reply relates to {mfs} \
                 with reference to their definitions."
            ))
        } else if p.contains("associated to the moral foundations ") {
            let mfs = between(p, "associated to the moral foundations ", " by referring")
                .ok_or_else(|| EndpointError::Fatal("unrecognized prompt".into()))?;
            Ok(format!(
                "(1) The conclusion of the Reply is that the speaker takes a clear stance. (2) The \
                 conclusion of the Reply are relevant to moral foundations {mfs} because it bears on \
                 what those foundations protect. (3) The conclusion of the Reply obeys or violates \
                 the moral foundations of {mfs}; the moral judgment is {judgment}."
            ))
        } else {
            Err(EndpointError::Fatal("unrecognized teacher prompt".into()))
        }
    }
}

/// The training cell a stub model pretends to have been fine-tuned on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StubCell {
    pub task: TaskKind,
    pub setting: Setting,
    pub size: usize,
    pub seed: u64,
}

/// Stand-in for a fine-tuned model. It looks up the gold labels of the
/// situation it is prompted with and answers correctly with a probability
/// that grows from `base` to `ours`. For the joint task its judgment is
/// much more likely to be right when its step 2 names the gold foundations,
/// so replacing step 2 with the gold set raises accuracy.
pub struct StubModel {
    cell: StubCell,
    by_rot: HashMap<String, MicRecord>,
    by_situation: HashMap<String, MicRecord>,
}

const SITUATION_PREFIX: &str = "There is a Prompt-Reply pair: ";
const ROT_PREFIX: &str = "The rule-of-thumb judgment is ";

impl StubModel {
    pub fn new(records: &[MicRecord], cell: StubCell) -> Self {
        let mut by_rot = HashMap::new();
        let mut by_situation = HashMap::new();
        for r in records {
            by_rot.entry(r.rot.clone()).or_insert_with(|| r.clone());
            by_situation.entry(format!("{} {}", r.prompt, r.reply)).or_insert_with(|| r.clone());
        }
        Self { cell, by_rot, by_situation }
    }

    fn accuracy(&self) -> f64 {
        match self.cell.setting {
            Setting::Base => 0.45,
            Setting::BasePlus => 0.6,
            Setting::Ours => 0.85,
        }
    }

    fn u(&self, id: &str, what: &str) -> f64 {
        unit_hash(&[
            id,
            what,
            self.cell.task.name(),
            self.cell.setting.name(),
            &self.cell.size.to_string(),
            &self.cell.seed.to_string(),
        ])
    }

    fn lookup(&self, input: &str) -> Option<&MicRecord> {
        let head = input.split(INFERENCE_MARKER).next().unwrap_or(input).trim_end();
        if let Some(at) = head.find(ROT_PREFIX) {
            let rot = head[at + ROT_PREFIX.len()..].strip_suffix('.')?;
            return self.by_rot.get(rot);
        }
        let at = head.find(SITUATION_PREFIX)?;
        let mut situation = &head[at + SITUATION_PREFIX.len()..];
        if let Some(cut) = situation.find(". The moral foundations underlying this Prompt-Reply are") {
            situation = &situation[..cut + 1];
        }
        self.by_situation.get(situation.strip_suffix('.')?)
    }

    fn predicted_foundations(&self, r: &MicRecord) -> FoundationSet {
        if self.u(&r.id, "foundations") < self.accuracy() {
            return r.gold_foundations;
        }
        let flip = ALL_FOUNDATIONS[(self.u(&r.id, "flip") * 6.0) as usize % 6];
        let toggled = r.gold_foundations.bits() ^ (1 << flip.index());
        FoundationSet::from_bits(toggled)
            .unwrap_or_else(|_| FoundationSet::from_bits(r.gold_foundations.bits() ^ 0b11).unwrap())
    }

    fn judgment_given(&self, r: &MicRecord, step2_matches_gold: Option<bool>) -> Judgment {
        let p = match step2_matches_gold {
            Some(true) => 0.9,
            Some(false) => 0.3,
            None => self.accuracy(),
        };
        if self.u(&r.id, "judgment") < p {
            r.gold_judgment
        } else {
            let i = Judgment::ALL.iter().position(|j| *j == r.gold_judgment).unwrap();
            Judgment::ALL[(i + 1) % 3]
        }
    }

    fn answer(&self, prompt: &str) -> Result<String, EndpointError> {
        let r = self
            .lookup(prompt)
            .ok_or_else(|| EndpointError::Fatal("stub model does not know this situation".into()))?;
        let ours = self.cell.setting == Setting::Ours;
        let judgment_sentence =
            |j: Judgment| format!("The moral judgment of the reply is {}.", j.capitalized());

        // Continuation after a spliced step 2.
        if let Some(before) = prompt.strip_suffix("(3)") {
            let step2 = before.rsplit("(2)").next().unwrap_or_default();
            let named = parse_foundations(step2).ok();
            let j = self.judgment_given(r, Some(named == Some(r.gold_foundations)));
            let list = named.map(format_foundation_list).unwrap_or_else(|| "none".into());
            return Ok(format!(
                " The conclusion of the Reply obeys the moral foundation of {list}. {}",
                judgment_sentence(j)
            ));
        }

        let predicted = self.predicted_foundations(r);
        let list = format_foundation_list(predicted);
        let text = match (self.cell.task, ours) {
            (TaskKind::Mfc, false) => {
                format!("The moral foundations underlying the rule-of-thumb are {list}.")
            }
            (TaskKind::Mfc, true) => format!(
                "(1) The rule of thumb includes a Judgment to an Action. (2) The consequence of the \
                 Action affects the people involved. (3) The Action is relevant to the moral \
                 foundations {list}. the moral foundations underlying the rule-of-thumb are {list}."
            ),
            (TaskKind::Judgment, false) => judgment_sentence(self.judgment_given(r, None)),
            (TaskKind::Judgment, true) => format!(
                "(1) The moral foundations refer to a framework of morality. (2) The conclusion of \
                 the Reply is that the speaker takes a stance. (3) The conclusion of the Reply \
                 relates to those foundations. {}",
                judgment_sentence(self.judgment_given(r, None))
            ),
            (TaskKind::Joint, false) => format!(
                "The moral foundations underlying this Prompt-Reply are {list}. {}",
                judgment_sentence(self.judgment_given(r, None))
            ),
            (TaskKind::Joint, true) => {
                let j = self.judgment_given(r, Some(predicted == r.gold_foundations));
                format!(
                    "(1) The conclusion of the Reply is that the speaker takes a stance. (2) The \
                     conclusion of the Reply are relevant to moral foundations {list} because it \
                     bears on what they protect. (3) The conclusion of the Reply obeys the moral \
                     foundation of {list}. {}",
                    judgment_sentence(j)
                )
            }
        };
        Ok(text)
    }
}

impl Endpoint for StubModel {
    fn id(&self) -> String {
        format!("stub-model/{}/{}/{}/{}", self.cell.task, self.cell.setting, self.cell.size, self.cell.seed)
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, EndpointError> {
        self.answer(&req.prompt)
    }

    /// Whitespace tokens, each with a hashed log-probability in `[-6, -1]`;
    /// `ours` cells score tokens somewhat higher than the baselines.
    fn score(&self, req: &ScoreRequest) -> Result<Vec<f64>, EndpointError> {
        let shift = match self.cell.setting {
            Setting::Base => 1.0,
            Setting::BasePlus => 0.8,
            Setting::Ours => 0.3,
        };
        let seed = self.cell.seed.to_string();
        Ok(req
            .text
            .split_whitespace()
            .enumerate()
            .map(|(i, tok)| -(0.7 + shift + 4.0 * unit_hash(&[tok, &seed, &(i % 7).to_string()])).min(6.0))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthetic_dataset;
    use crate::prompts::build_input;
    use crate::teacher::DecodingParams;

    #[test]
    fn stub_model_finds_every_record() {
        let records = synthetic_dataset(50, 1);
        for task in TaskKind::ALL {
            for setting in Setting::ALL {
                let m = StubModel::new(&records, StubCell { task, setting, size: 10, seed: 1 });
                for r in &records {
                    let req =
                        CompletionRequest::new("x", build_input(r, task, setting), DecodingParams::default());
                    let out = m.complete(&req).unwrap();
                    assert!(!out.is_empty());
                    assert_eq!(out, m.complete(&req).unwrap());
                }
            }
        }
    }

    #[test]
    fn unit_hash_in_range() {
        for i in 0..1000 {
            let u = unit_hash(&[&i.to_string()]);
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn stub_scores_are_logprobs() {
        let m =
            StubModel::new(&[], StubCell { task: TaskKind::Mfc, setting: Setting::Ours, size: 1, seed: 1 });
        let lp =
            m.score(&ScoreRequest { text: "a b c d e f g h i j".into(), window: 512, stride: 512 }).unwrap();
        assert_eq!(lp.len(), 10);
        assert!(lp.iter().all(|&x| x <= 0.0));
    }
}
