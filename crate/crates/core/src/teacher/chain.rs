use serde::{Deserialize, Serialize};

use super::TeacherError;

/// The three answered inference steps for one task instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceChain {
    pub step1: String,
    pub step2: String,
    pub step3: String,
    /// Full text as returned by the model.
    pub raw: String,
}

impl InferenceChain {
    /// Builds a chain from its steps; `raw` is the canonical rendering.
    pub fn new(
        step1: impl Into<String>,
        step2: impl Into<String>,
        step3: impl Into<String>,
    ) -> Result<Self, TeacherError> {
        let (step1, step2, step3) = (step1.into(), step2.into(), step3.into());
        if [&step1, &step2, &step3].iter().any(|s| s.trim().is_empty()) {
            return Err(TeacherError::MalformedChain("empty step".into()));
        }
        let raw = render_steps(&step1, &step2, &step3);
        Ok(Self { step1, step2, step3, raw })
    }

    /// `(1) step1 (2) step2 (3) step3`
    pub fn render(&self) -> String {
        render_steps(&self.step1, &self.step2, &self.step3)
    }

    pub fn step(&self, n: usize) -> Option<&str> {
        match n {
            1 => Some(&self.step1),
            2 => Some(&self.step2),
            3 => Some(&self.step3),
            _ => None,
        }
    }
}

fn render_steps(s1: &str, s2: &str, s3: &str) -> String {
    format!("(1) {s1} (2) {s2} (3) {s3}")
}

const MARKER_SETS: [[&str; 3]; 2] = [["(1)", "(2)", "(3)"], ["(a)", "(b)", "(c)"]];

/// Byte offsets of each marker, found in order starting from the previous one.
pub(crate) fn marker_positions(raw: &str) -> Option<([usize; 3], usize)> {
    MARKER_SETS.iter().find_map(|markers| {
        let mut pos = [0usize; 3];
        let mut from = 0;
        for (i, m) in markers.iter().enumerate() {
            let at = from + raw[from..].find(m)?;
            pos[i] = at;
            from = at + m.len();
        }
        Some((pos, markers[0].len()))
    })
}

/// Splits a generated answer at the first in-order occurrences of `(1)`,
/// `(2)`, `(3)`, falling back to `(a)`, `(b)`, `(c)`.
pub fn segment_chain(raw: &str) -> Result<InferenceChain, TeacherError> {
    let ([p1, p2, p3], mlen) = marker_positions(raw)
        .ok_or_else(|| TeacherError::MalformedChain("step markers not found in order".into()))?;
    let steps = [&raw[p1 + mlen..p2], &raw[p2 + mlen..p3], &raw[p3 + mlen..]].map(str::trim);
    if let Some(i) = steps.iter().position(|s| s.is_empty()) {
        return Err(TeacherError::MalformedChain(format!("step {} is empty", i + 1)));
    }
    Ok(InferenceChain {
        step1: steps[0].to_string(),
        step2: steps[1].to_string(),
        step3: steps[2].to_string(),
        raw: raw.to_string(),
    })
}
