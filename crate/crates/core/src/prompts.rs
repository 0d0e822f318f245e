//! Teacher prompts and fine-tuning records for the three tasks.
//!
//! All templates live under `templates/` and are compiled into the crate, so
//! rendered text is a pure function of its inputs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::MicRecord;
use crate::foundations::{definitions_list, definitions_paragraph, format_foundation_list};
use crate::teacher::InferenceChain;

pub const INFERENCE_MARKER: &str = "###Inference:";

const MFC_TEACHER: &str = include_str!("../templates/mfc_teacher.txt");
const JUDGMENT_TEACHER: &str = include_str!("../templates/judgment_teacher.txt");
const JOINT_TEACHER: &str = include_str!("../templates/joint_teacher.txt");
const SFT_TEMPLATES: &str = include_str!("../templates/sft.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Mfc,
    Judgment,
    Joint,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Mfc, TaskKind::Judgment, TaskKind::Joint];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mfc => "mfc",
            Self::Judgment => "judgment",
            Self::Joint => "joint",
        }
    }

    /// Whether the task's answer includes a foundation set.
    pub fn predicts_foundations(self) -> bool {
        matches!(self, Self::Mfc | Self::Joint)
    }

    pub fn predicts_judgment(self) -> bool {
        matches!(self, Self::Judgment | Self::Joint)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mfc" => Ok(Self::Mfc),
            "judgment" => Ok(Self::Judgment),
            "joint" | "mfc-judgment" => Ok(Self::Joint),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Base,
    BasePlus,
    Ours,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::Base, Setting::BasePlus, Setting::Ours];

    pub fn name(self) -> &'static str {
        match self {
            Self::Base => "base",
            Self::BasePlus => "base_plus",
            Self::Ours => "ours",
        }
    }

    /// Column label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Self::Base => "base",
            Self::BasePlus => "base+",
            Self::Ours => "ours",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "base" => Ok(Self::Base),
            "base_plus" | "base+" | "base-plus" => Ok(Self::BasePlus),
            "ours" => Ok(Self::Ours),
            other => Err(format!("unknown setting `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("setting `ours` requires an inference chain for record {0}")]
    MissingChain(String),
    #[error("an inference chain was supplied for record {id} in setting {setting}")]
    UnexpectedChain { id: String, setting: Setting },
}

/// One fine-tuning example: the model is trained to continue `input` with
/// `target`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub id: String,
    pub input: String,
    pub target: String,
}

impl SftRecord {
    pub fn text(&self) -> String {
        format!("{}{}", self.input, self.target)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub task: TaskKind,
    pub setting: Setting,
    pub input_text: String,
    /// The teacher prompt whose answers fill the inference slot; only
    /// present for [`Setting::Ours`].
    pub teacher_questions: Option<String>,
    pub target_text: String,
}

#[derive(Debug, Deserialize)]
struct SftTemplate {
    input: String,
    target: String,
}

#[derive(Debug, Deserialize)]
struct SftTemplateFile {
    #[allow(dead_code)]
    version: u32,
    #[serde(flatten)]
    tasks: BTreeMap<TaskKind, BTreeMap<Setting, SftTemplate>>,
}

fn sft_templates() -> &'static SftTemplateFile {
    static FILE: OnceLock<SftTemplateFile> = OnceLock::new();
    FILE.get_or_init(|| toml::from_str(SFT_TEMPLATES).expect("bundled sft.toml is valid"))
}

fn sft_template(task: TaskKind, setting: Setting) -> &'static SftTemplate {
    &sft_templates().tasks[&task][&setting]
}

/// Substitutes `{name}` slots in one left-to-right pass. Substituted values
/// are never rescanned, and unknown `{...}` sequences are kept verbatim.
pub fn render(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let filled = after.find('}').and_then(|close| {
            let name = &after[..close];
            slots.iter().find(|(k, _)| *k == name).map(|(_, v)| (close, *v))
        });
        match filled {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn teacher_template(text: &str) -> &str {
    text.trim_end_matches('\n')
}

/// Teacher prompt for classifying foundations from a rule of thumb.
pub fn build_mfc_teacher_prompt(record: &MicRecord) -> String {
    let foundations = format_foundation_list(record.gold_foundations);
    render(
        teacher_template(MFC_TEACHER),
        &[("rot", &record.rot), ("definitions", &definitions_list()), ("foundations", &foundations)],
    )
}

/// Teacher prompt for explaining a fixed judgment given the gold foundations.
pub fn build_judgment_teacher_prompt(record: &MicRecord) -> String {
    let foundations = format_foundation_list(record.gold_foundations);
    render(
        teacher_template(JUDGMENT_TEACHER),
        &[
            ("prompt", &record.prompt),
            ("reply", &record.reply),
            ("foundations", &foundations),
            ("judgment", record.gold_judgment.capitalized()),
        ],
    )
}

pub fn build_joint_teacher_prompt(record: &MicRecord) -> String {
    let foundations = format_foundation_list(record.gold_foundations);
    render(
        teacher_template(JOINT_TEACHER),
        &[
            ("definitions", &definitions_list()),
            ("prompt", &record.prompt),
            ("reply", &record.reply),
            ("foundations", &foundations),
            ("judgment", record.gold_judgment.capitalized()),
        ],
    )
}

pub fn build_teacher_prompt(record: &MicRecord, task: TaskKind) -> String {
    match task {
        TaskKind::Mfc => build_mfc_teacher_prompt(record),
        TaskKind::Judgment => build_judgment_teacher_prompt(record),
        TaskKind::Joint => build_joint_teacher_prompt(record),
    }
}

/// Model input for a record; this is also what a model under evaluation is
/// prompted with.
pub fn build_input(record: &MicRecord, task: TaskKind, setting: Setting) -> String {
    let foundations = format_foundation_list(record.gold_foundations);
    render(
        &sft_template(task, setting).input,
        &[
            ("definitions", &definitions_paragraph()),
            ("rot", &record.rot),
            ("prompt", &record.prompt),
            ("reply", &record.reply),
            ("foundations", &foundations),
        ],
    )
}

fn build_target(
    record: &MicRecord,
    task: TaskKind,
    setting: Setting,
    chain: Option<&InferenceChain>,
) -> Result<String, PromptError> {
    let inference = match (setting, chain) {
        (Setting::Ours, Some(c)) => c.render(),
        (Setting::Ours, None) => return Err(PromptError::MissingChain(record.id.clone())),
        (_, Some(_)) => return Err(PromptError::UnexpectedChain { id: record.id.clone(), setting }),
        (_, None) => String::new(),
    };
    let foundations = format_foundation_list(record.gold_foundations);
    Ok(render(
        &sft_template(task, setting).target,
        &[
            ("inference", &inference),
            ("foundations", &foundations),
            ("judgment", record.gold_judgment.capitalized()),
        ],
    ))
}

/// Assembles one fine-tuning record. A chain must be supplied exactly when
/// `setting` is [`Setting::Ours`].
pub fn build_sft_record(
    record: &MicRecord,
    task: TaskKind,
    setting: Setting,
    chain: Option<&InferenceChain>,
) -> Result<SftRecord, PromptError> {
    let target = build_target(record, task, setting, chain)?;
    Ok(SftRecord { id: record.id.clone(), input: build_input(record, task, setting), target })
}

pub fn build_bundle(
    record: &MicRecord,
    task: TaskKind,
    setting: Setting,
    chain: Option<&InferenceChain>,
) -> Result<PromptBundle, PromptError> {
    let sft = build_sft_record(record, task, setting, chain)?;
    Ok(PromptBundle {
        task,
        setting,
        input_text: sft.input,
        teacher_questions: (setting == Setting::Ours).then(|| build_teacher_prompt(record, task)),
        target_text: sft.target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Agreement, Judgment};
    use crate::foundations::{FoundationSet, MoralFoundation::*};

    fn table1() -> MicRecord {
        MicRecord {
            id: "t1".into(),
            prompt: "Do people actually shit themselves when they get very scared?".into(),
            reply: "I don't think I've ever heard of that happening, but I guess it's possible.".into(),
            rot: "It is wrong to shit on ourselves.".into(),
            gold_foundations: FoundationSet::single(Care),
            gold_judgment: Judgment::Agree,
            agreement: Agreement::Full,
        }
    }

    fn printing_money() -> MicRecord {
        MicRecord {
            id: "pm".into(),
            prompt: "Why don't we just print a bunch of money to pay off our massive world debt?".into(),
            reply: "Because even if you find a way to print the money, what happens when it's printed?"
                .into(),
            rot: "Don't think that printing money can fix all of your problems.".into(),
            gold_foundations: FoundationSet::new([Care, Fairness, Sanctity]).unwrap(),
            gold_judgment: Judgment::Agree,
            agreement: Agreement::Full,
        }
    }

    fn section<'a>(text: &'a str, from: &str, to: Option<&str>) -> &'a str {
        let start = text.find(from).unwrap();
        let rest = &text[start..];
        match to.and_then(|t| rest.find(t)) {
            Some(end) => &rest[..end],
            None => rest,
        }
    }

    #[test]
    fn render_is_single_pass() {
        assert_eq!(render("a {x} b {y} {z}", &[("x", "{y}"), ("y", "Y")]), "a {y} b Y {z}");
        assert_eq!(render("{unclosed", &[("unclosed", "no")]), "{unclosed");
    }

    #[test]
    fn mfc_teacher_prompt_slots() {
        let p = build_mfc_teacher_prompt(&printing_money());
        assert!(p.contains("Don't think that printing money can fix all of your problems."));
        assert!(p.contains("relevant to the MFs care, fairness, and sanctity"));
        assert!(p.contains(&definitions_list()));
        for m in ["(1)", "(2)", "(3)"] {
            assert_eq!(p.matches(m).count(), 1, "{m}");
        }
        assert_eq!(p, build_mfc_teacher_prompt(&printing_money()));
    }

    #[test]
    fn judgment_teacher_prompt_slots() {
        let p = build_judgment_teacher_prompt(&table1());
        assert!(section(&p, "(3)", None).contains("is Agree"));
        let p = build_judgment_teacher_prompt(&printing_money());
        assert!(section(&p, "(1)", Some("(2)")).contains("care, fairness, and sanctity"));
        for m in ["(1)", "(2)", "(3)"] {
            assert_eq!(p.matches(m).count(), 1);
        }
    }

    #[test]
    fn joint_teacher_prompt_slots() {
        let mut r = table1();
        r.gold_foundations = FoundationSet::single(Loyalty);
        let p = build_joint_teacher_prompt(&r);
        assert!(section(&p, "(2)", Some("(3)")).contains("loyalty"));
        assert!(section(&p, "(3)", None).contains("Agree"));
        for f in crate::foundations::ALL_FOUNDATIONS {
            assert!(p.contains(f.definition()));
        }
        assert_eq!(p, build_joint_teacher_prompt(&r));
    }

    #[test]
    fn mfc_base_record_matches_template() {
        let sft = build_sft_record(&table1(), TaskKind::Mfc, Setting::Base, None).unwrap();
        assert_eq!(
            sft.text(),
            "The rule-of-thumb judgment is It is wrong to shit on ourselves.. The moral \
             foundations underlying the rule-of-thumb are care."
        );
    }

    #[test]
    fn ours_requires_chain_and_rejects_spurious_ones() {
        let r = table1();
        assert_eq!(
            build_sft_record(&r, TaskKind::Judgment, Setting::Ours, None),
            Err(PromptError::MissingChain("t1".into()))
        );
        let chain = InferenceChain::new("a", "b", "c").unwrap();
        assert!(matches!(
            build_sft_record(&r, TaskKind::Mfc, Setting::Base, Some(&chain)),
            Err(PromptError::UnexpectedChain { .. })
        ));
        let sft = build_sft_record(&r, TaskKind::Mfc, Setting::Ours, Some(&chain)).unwrap();
        let text = sft.text();
        assert_eq!(text.matches(INFERENCE_MARKER).count(), 1);
        assert!(
            text.find(INFERENCE_MARKER).unwrap()
                < text.find("the moral foundations underlying the rule-of-thumb are").unwrap()
        );
    }

    #[test]
    fn judgment_inputs_carry_gold_foundations_and_joint_inputs_do_not() {
        let r = printing_money();
        let chain = InferenceChain::new("a", "b", "c").unwrap();
        let bp = build_input(&r, TaskKind::Judgment, Setting::BasePlus);
        assert!(bp.contains("are care, fairness, and sanctity."));
        let joint = build_sft_record(&r, TaskKind::Joint, Setting::Ours, Some(&chain)).unwrap();
        let stripped = joint.input.replace(&definitions_paragraph(), "");
        assert!(crate::foundations::parse_foundations(&stripped).is_err());
        assert!(joint.target.ends_with("The moral judgment of the reply is Agree."));
    }

    #[test]
    fn bundle_has_teacher_questions_only_for_ours() {
        let r = table1();
        let chain = InferenceChain::new("a", "b", "c").unwrap();
        for task in TaskKind::ALL {
            for setting in Setting::ALL {
                let c = (setting == Setting::Ours).then_some(&chain);
                let b = build_bundle(&r, task, setting, c).unwrap();
                assert_eq!(b.teacher_questions.is_some(), setting == Setting::Ours);
            }
        }
    }

    #[test]
    fn labels_parse() {
        assert_eq!("base+".parse::<Setting>().unwrap(), Setting::BasePlus);
        assert_eq!("JOINT".parse::<TaskKind>().unwrap(), TaskKind::Joint);
        assert!("other".parse::<Setting>().is_err());
    }
}
