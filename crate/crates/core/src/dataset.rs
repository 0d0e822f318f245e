//! MIC-style records: ingestion from delimited text, agreement filtering,
//! nested seeded subsets and distribution statistics.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::foundations::{parse_foundations, FoundationSet, MoralFoundation, ALL_FOUNDATIONS};

/// Verdict on the reply of a prompt/reply situation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Judgment {
    Agree,
    Neutral,
    Disagree,
}

impl Judgment {
    pub const ALL: [Judgment; 3] = [Judgment::Agree, Judgment::Neutral, Judgment::Disagree];

    pub fn name(self) -> &'static str {
        match self {
            Self::Agree => "agree",
            Self::Neutral => "neutral",
            Self::Disagree => "disagree",
        }
    }

    /// Surface form used inside prose targets.
    pub fn capitalized(self) -> &'static str {
        match self {
            Self::Agree => "Agree",
            Self::Neutral => "Neutral",
            Self::Disagree => "Disagree",
        }
    }
}

impl fmt::Display for Judgment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Judgment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "agree" => Ok(Self::Agree),
            "neutral" => Ok(Self::Neutral),
            "disagree" => Ok(Self::Disagree),
            other => Err(format!("unknown judgment `{other}`")),
        }
    }
}

/// Annotator agreement level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Agreement {
    Full,
    Partial,
    Low,
}

impl FromStr for Agreement {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(Self::Full),
            "partial" => Ok(Self::Partial),
            "low" => Ok(Self::Low),
            other => Err(format!("unknown agreement level `{other}`")),
        }
    }
}

/// One benchmark sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MicRecord {
    pub id: String,
    pub prompt: String,
    pub reply: String,
    pub rot: String,
    pub gold_foundations: FoundationSet,
    pub gold_judgment: Judgment,
    pub agreement: Agreement,
}

impl MicRecord {
    /// Checks the text-field invariants.
    pub fn validate(&self) -> Result<(), String> {
        for (name, value) in [("prompt", &self.prompt), ("reply", &self.reply), ("rot", &self.rot)] {
            if value.trim().is_empty() {
                return Err(format!("empty {name}"));
            }
        }
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    UnreadableFile { path: PathBuf, source: io::Error },
    #[error("column `{column}` mapped for field `{field}` is missing from the header")]
    MissingColumn { field: String, column: String },
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
}

/// Maps record fields onto column headers, plus optional raw-value maps for
/// the categorical columns (e.g. MIC's numeric agreement levels).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSchema {
    #[serde(default)]
    pub id: Option<String>,
    pub prompt: String,
    pub reply: String,
    pub rot: String,
    pub foundations: String,
    pub judgment: String,
    #[serde(default)]
    pub agreement: Option<String>,
    /// Field delimiter; inferred from the file extension when absent.
    #[serde(default)]
    pub delimiter: Option<char>,
    #[serde(default)]
    pub judgment_values: BTreeMap<String, Judgment>,
    #[serde(default)]
    pub agreement_values: BTreeMap<String, Agreement>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            id: Some("id".into()),
            prompt: "prompt".into(),
            reply: "reply".into(),
            rot: "rot".into(),
            foundations: "foundations".into(),
            judgment: "judgment".into(),
            agreement: Some("agreement".into()),
            delimiter: None,
            judgment_values: BTreeMap::new(),
            agreement_values: BTreeMap::new(),
        }
    }
}

impl ColumnSchema {
    pub fn from_toml_file(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| DatasetError::UnreadableFile { path: path.to_path_buf(), source })?;
        toml::from_str(&text).map_err(|e| DatasetError::InvalidSchema(e.to_string()))
    }

    fn judgment(&self, raw: &str) -> Result<Judgment, String> {
        match self.judgment_values.get(raw.trim()) {
            Some(j) => Ok(*j),
            None => raw.parse(),
        }
    }

    fn agreement(&self, raw: &str) -> Result<Agreement, String> {
        match self.agreement_values.get(raw.trim()) {
            Some(a) => Ok(*a),
            None => raw.parse(),
        }
    }
}

/// A row that failed validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectEntry {
    /// 1-based data row number (the header is not counted).
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct IngestOutput {
    pub records: Vec<MicRecord>,
    pub rejects: Vec<RejectEntry>,
    pub warnings: Vec<String>,
}

impl IngestOutput {
    pub fn write_rejects(&self, w: &mut impl Write) -> io::Result<()> {
        for r in &self.rejects {
            serde_json::to_writer(&mut *w, r)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

fn infer_delimiter(path: &Path) -> u8 {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("tsv") || ext.eq_ignore_ascii_case("tab") => b'\t',
        _ => b',',
    }
}

/// Reads a delimited file into records. Rows that break a record invariant
/// are reported in [`IngestOutput::rejects`] rather than dropped silently.
pub fn ingest(path: &Path, schema: &ColumnSchema) -> Result<IngestOutput, DatasetError> {
    let file = File::open(path)
        .map_err(|source| DatasetError::UnreadableFile { path: path.to_path_buf(), source })?;
    let delimiter = match schema.delimiter {
        Some(c) if c.is_ascii() => c as u8,
        Some(c) => return Err(DatasetError::InvalidSchema(format!("non-ASCII delimiter {c:?}"))),
        None => infer_delimiter(path),
    };
    let mut reader =
        csv::ReaderBuilder::new().delimiter(delimiter).flexible(true).from_reader(BufReader::new(file));
    let headers = reader
        .headers()
        .map_err(|e| DatasetError::UnreadableFile {
            path: path.to_path_buf(),
            source: io::Error::other(e.to_string()),
        })?
        .clone();
    let column = |field: &str, name: &str| -> Result<usize, DatasetError> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DatasetError::MissingColumn { field: field.into(), column: name.into() })
    };

    let prompt_col = column("prompt", &schema.prompt)?;
    let reply_col = column("reply", &schema.reply)?;
    let rot_col = column("rot", &schema.rot)?;
    let foundations_col = column("foundations", &schema.foundations)?;
    let judgment_col = column("judgment", &schema.judgment)?;
    let id_col = schema.id.as_deref().map(|c| column("id", c)).transpose()?;

    let mut out = IngestOutput::default();
    let agreement_col = match schema.agreement.as_deref() {
        Some(name) => match headers.iter().position(|h| h.trim() == name) {
            Some(i) => Some(i),
            None => {
                out.warnings.push(format!(
                    "agreement column `{name}` not found; treating every row as full agreement"
                ));
                None
            }
        },
        None => {
            out.warnings.push("no agreement column configured; treating every row as full agreement".into());
            None
        }
    };
    for w in &out.warnings {
        log::warn!("{w}");
    }

    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                out.rejects.push(RejectEntry { row: row_no, reason: e.to_string() });
                continue;
            }
        };
        match record_from_row(
            &row,
            row_no,
            schema,
            &RowColumns {
                id: id_col,
                prompt: prompt_col,
                reply: reply_col,
                rot: rot_col,
                foundations: foundations_col,
                judgment: judgment_col,
                agreement: agreement_col,
            },
        ) {
            Ok(rec) => out.records.push(rec),
            Err(DatasetError::MalformedRow { row, reason }) => out.rejects.push(RejectEntry { row, reason }),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

struct RowColumns {
    id: Option<usize>,
    prompt: usize,
    reply: usize,
    rot: usize,
    foundations: usize,
    judgment: usize,
    agreement: Option<usize>,
}

fn record_from_row(
    row: &csv::StringRecord,
    row_no: usize,
    schema: &ColumnSchema,
    cols: &RowColumns,
) -> Result<MicRecord, DatasetError> {
    let malformed = |reason: String| DatasetError::MalformedRow { row: row_no, reason };
    let field = |name: &str, col: usize| -> Result<String, DatasetError> {
        row.get(col)
            .map(|s| s.trim().to_string())
            .ok_or_else(|| malformed(format!("missing value for {name}")))
    };
    let id = match cols.id {
        Some(c) => field("id", c)?,
        None => format!("row-{row_no}"),
    };
    let foundations_raw = field("foundations", cols.foundations)?;
    let gold_foundations = parse_foundations(&foundations_raw)
        .map_err(|_| malformed(format!("no foundation in `{foundations_raw}`")))?;
    let gold_judgment = schema.judgment(&field("judgment", cols.judgment)?).map_err(malformed)?;
    let agreement = match cols.agreement {
        Some(c) => schema.agreement(&field("agreement", c)?).map_err(malformed)?,
        None => Agreement::Full,
    };
    let record = MicRecord {
        id,
        prompt: field("prompt", cols.prompt)?,
        reply: field("reply", cols.reply)?,
        rot: field("rot", cols.rot)?,
        gold_foundations,
        gold_judgment,
        agreement,
    };
    record.validate().map_err(malformed)?;
    Ok(record)
}

/// Reads records previously written with [`write_records_jsonl`].
pub fn read_records_jsonl(path: &Path) -> Result<Vec<MicRecord>, DatasetError> {
    let file = File::open(path)
        .map_err(|source| DatasetError::UnreadableFile { path: path.to_path_buf(), source })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line =
            line.map_err(|source| DatasetError::UnreadableFile { path: path.to_path_buf(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MicRecord = serde_json::from_str(&line)
            .map_err(|e| DatasetError::MalformedRow { row: i + 1, reason: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_records_jsonl(records: &[MicRecord], w: &mut impl Write) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        writeln!(w)?;
    }
    Ok(())
}

/// Records with full annotator agreement, in input order.
pub fn filter_full_agreement(records: &[MicRecord]) -> Vec<MicRecord> {
    records.iter().filter(|r| r.agreement == Agreement::Full).cloned().collect()
}

/// Seeded permutation of `0..len`. Every subset drawn for the same seed is a
/// prefix of this order, which makes subsets nested across sizes.
pub fn shuffled_order(len: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    idx
}

/// Deterministic subset of size `min(n, len)`. When `n` covers the whole
/// input, the input is returned unchanged.
pub fn sample_subset(records: &[MicRecord], n: usize, seed: u64) -> Vec<MicRecord> {
    if n >= records.len() {
        return records.to_vec();
    }
    shuffled_order(records.len(), seed).into_iter().take(n).map(|i| records[i].clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total: usize,
    /// `cardinality_histogram[i - 1]` counts records with `|y_M| = i`.
    pub cardinality_histogram: [usize; 6],
    /// Per-foundation counts over single-foundation records, canonical order.
    pub single_foundation_counts: [usize; 6],
    /// Fraction of all records whose set includes each foundation.
    pub foundation_proportions: [f64; 6],
    /// Fraction of all records that are single-foundation records of each
    /// foundation; sums to at most 1.
    pub single_foundation_proportions: [f64; 6],
    pub judgment_counts: BTreeMap<Judgment, usize>,
}

impl DatasetStats {
    pub fn proportion(&self, f: MoralFoundation) -> f64 {
        self.foundation_proportions[f.index()]
    }

    pub fn histogram_count(&self, cardinality: usize) -> usize {
        cardinality.checked_sub(1).and_then(|i| self.cardinality_histogram.get(i)).copied().unwrap_or(0)
    }
}

pub fn compute_stats(records: &[MicRecord]) -> DatasetStats {
    let mut hist = [0usize; 6];
    let mut single = [0usize; 6];
    let mut including = [0usize; 6];
    let mut judgments = BTreeMap::new();
    for r in records {
        let set = r.gold_foundations;
        hist[set.len() - 1] += 1;
        if let Some(f) = set.as_single() {
            single[f.index()] += 1;
        }
        for f in set.iter() {
            including[f.index()] += 1;
        }
        *judgments.entry(r.gold_judgment).or_insert(0) += 1;
    }
    let total = records.len();
    let frac = |c: usize| if total == 0 { 0.0 } else { c as f64 / total as f64 };
    DatasetStats {
        total,
        cardinality_histogram: hist,
        single_foundation_counts: single,
        foundation_proportions: including.map(frac),
        single_foundation_proportions: single.map(frac),
        judgment_counts: judgments,
    }
}

const SYN_TOPICS: [(&str, &str, &str); 10] = [
    (
        "Is it okay to borrow a friend's car without asking?",
        "Sure, they would probably not even notice.",
        "It is wrong to take other people's things without permission.",
    ),
    (
        "Should I tell my boss that my coworker is stealing supplies?",
        "Yes, you owe it to the company to report it.",
        "It is good to report theft at work.",
    ),
    (
        "Why don't we just print money to pay off debt?",
        "Printing money makes the currency worth less.",
        "Don't think that printing money can fix all of your problems.",
    ),
    (
        "Do you think it's fine to skip a family reunion?",
        "Family comes first, you should go.",
        "It is good to keep in touch with family.",
    ),
    (
        "Can I read my partner's messages while they sleep?",
        "Everyone deserves some privacy.",
        "It is wrong to invade someone's privacy.",
    ),
    (
        "Is it weird to keep a promise to a group you left?",
        "A promise is a promise, even after leaving.",
        "It is good to keep promises to your group.",
    ),
    (
        "Should kids be allowed to pick their own bedtime?",
        "Kids should learn to decide some things themselves.",
        "People should be free to make their own choices.",
    ),
    (
        "What do you think about cutting in line at the store?",
        "Nobody likes people who cut in line.",
        "It is unfair to cut in line.",
    ),
    (
        "Is it gross to eat food that fell on the floor?",
        "A few seconds on the floor is harmless.",
        "It is gross to eat food off the floor.",
    ),
    (
        "Should I help a stranger who fell on the street?",
        "Of course, helping people is the right thing.",
        "It is good to help people who are hurt.",
    ),
];

/// Deterministic synthetic records covering every judgment, every
/// foundation and cardinalities 1 to 3. Every fifth record from index 3 on
/// is marked partial or low agreement.
pub fn synthetic_dataset(n: usize, seed: u64) -> Vec<MicRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (prompt, reply, rot) = SYN_TOPICS[i % SYN_TOPICS.len()];
            let cardinality = [1, 1, 1, 2, 2, 3][i % 6];
            let first = ALL_FOUNDATIONS[(i + i / 6) % 6];
            let mut extra: Vec<MoralFoundation> =
                ALL_FOUNDATIONS.iter().copied().filter(|f| *f != first).collect();
            extra.shuffle(&mut rng);
            let set =
                FoundationSet::new(std::iter::once(first).chain(extra.into_iter().take(cardinality - 1)))
                    .expect("nonempty");
            let agreement = match i % 10 {
                3 => Agreement::Partial,
                8 => Agreement::Low,
                _ => Agreement::Full,
            };
            MicRecord {
                id: format!("syn-{i:04}"),
                prompt: format!("{prompt} (case {i})"),
                reply: reply.to_string(),
                rot: format!("{} (case {i}).", rot.trim_end_matches('.')),
                gold_foundations: set,
                gold_judgment: Judgment::ALL[(i / 2) % 3],
                agreement,
            }
        })
        .collect()
}

/// Writes records as CSV with the default [`ColumnSchema`] headers.
pub fn write_records_csv(records: &[MicRecord], w: impl Write) -> Result<(), csv::Error> {
    let mut writer = csv::Writer::from_writer(w);
    writer.write_record(["id", "prompt", "reply", "rot", "foundations", "judgment", "agreement"])?;
    for r in records {
        let foundations: Vec<&str> = r.gold_foundations.iter().map(MoralFoundation::name).collect();
        let agreement = match r.agreement {
            Agreement::Full => "full",
            Agreement::Partial => "partial",
            Agreement::Low => "low",
        };
        writer.write_record([
            r.id.as_str(),
            &r.prompt,
            &r.reply,
            &r.rot,
            &foundations.join("|"),
            r.gold_judgment.name(),
            agreement,
        ])?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, set: &[MoralFoundation], agreement: Agreement) -> MicRecord {
        MicRecord {
            id: id.into(),
            prompt: "p".into(),
            reply: "r".into(),
            rot: "rot".into(),
            gold_foundations: FoundationSet::new(set.iter().copied()).unwrap(),
            gold_judgment: Judgment::Agree,
            agreement,
        }
    }

    fn write_tmp(contents: &str, ext: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn ingest_reference_row() {
        let csv = "id,prompt,reply,rot,foundations,judgment,agreement\n\
                   t1,Do people actually shit themselves when they get very scared?,\"I don't think I've ever heard of that happening, but I guess it's possible.\",It is wrong to shit on ourselves.,care,agree,full\n";
        let f = write_tmp(csv, ".csv");
        let out = ingest(f.path(), &ColumnSchema::default()).unwrap();
        assert!(out.rejects.is_empty());
        let r = &out.records[0];
        assert_eq!(r.rot, "It is wrong to shit on ourselves.");
        assert_eq!(r.gold_foundations, FoundationSet::single(MoralFoundation::Care));
        assert_eq!(r.gold_judgment, Judgment::Agree);
    }

    #[test]
    fn ingest_collects_rejects() {
        let csv = "id,prompt,reply,rot,foundations,judgment,agreement\n\
                   a,p,r,x,care,agree,full\n\
                   b,p,r,   ,care,agree,full\n\
                   c,p,r,x,fairness|liberty,neutral,partial\n\
                   d,p,r,x,loyalty,disagree,low\n";
        let f = write_tmp(csv, ".csv");
        let out = ingest(f.path(), &ColumnSchema::default()).unwrap();
        assert_eq!(out.records.len(), 3);
        assert_eq!(out.rejects, vec![RejectEntry { row: 2, reason: "empty rot".into() }]);
        let mut buf = Vec::new();
        out.write_rejects(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "{\"row\":2,\"reason\":\"empty rot\"}\n");
    }

    #[test]
    fn ingest_missing_column_and_file() {
        let f = write_tmp("id,prompt,reply\n", ".csv");
        assert!(matches!(
            ingest(f.path(), &ColumnSchema::default()),
            Err(DatasetError::MissingColumn { .. })
        ));
        assert!(matches!(
            ingest(Path::new("/nonexistent/file.csv"), &ColumnSchema::default()),
            Err(DatasetError::UnreadableFile { .. })
        ));
    }

    #[test]
    fn ingest_tsv_with_value_maps_and_no_agreement() {
        let tsv = "Q\tA\trot\tmoral\tA_agrees\n\
                   p\tr\tx\tcare-harm|fairness-cheating\t2\n\
                   p\tr\tx\tsanctity-degradation\t0\n";
        let f = write_tmp(tsv, ".tsv");
        let schema = ColumnSchema {
            id: None,
            prompt: "Q".into(),
            reply: "A".into(),
            rot: "rot".into(),
            foundations: "moral".into(),
            judgment: "A_agrees".into(),
            agreement: None,
            delimiter: None,
            judgment_values: [
                ("0".to_string(), Judgment::Disagree),
                ("1".to_string(), Judgment::Neutral),
                ("2".to_string(), Judgment::Agree),
            ]
            .into_iter()
            .collect(),
            agreement_values: BTreeMap::new(),
        };
        let out = ingest(f.path(), &schema).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.records[0].id, "row-1");
        assert_eq!(out.records[0].gold_foundations.len(), 2);
        assert_eq!(out.records[1].gold_judgment, Judgment::Disagree);
        assert!(out.records.iter().all(|r| r.agreement == Agreement::Full));
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn filter_keeps_full_in_order() {
        let records: Vec<_> = (0..100)
            .map(|i| {
                let a =
                    if i % 4 == 0 && i < 100 && (i / 4) < 26 { Agreement::Full } else { Agreement::Partial };
                rec(&format!("r{i}"), &[MoralFoundation::Care], a)
            })
            .collect();
        let full = filter_full_agreement(&records);
        assert_eq!(full.len(), 25);
        let mut records = records;
        records[1].agreement = Agreement::Full;
        let full = filter_full_agreement(&records);
        assert_eq!(full.len(), 26);
        assert_eq!(full[0].id, "r0");
        assert_eq!(full[1].id, "r1");
        assert_eq!(filter_full_agreement(&full), full);
    }

    #[test]
    fn filter_all_full_is_identity() {
        let records: Vec<_> =
            (0..5).map(|i| rec(&i.to_string(), &[MoralFoundation::Care], Agreement::Full)).collect();
        assert_eq!(filter_full_agreement(&records), records);
    }

    #[test]
    fn sample_covering_size_is_identity() {
        let records = synthetic_dataset(30, 0);
        assert_eq!(sample_subset(&records, 30, 7), records);
        assert_eq!(sample_subset(&records, 1000, 7), records);
    }

    #[test]
    fn stats_histogram_and_proportion() {
        use MoralFoundation::*;
        let records = vec![
            rec("a", &[Care], Agreement::Full),
            rec("b", &[Fairness], Agreement::Full),
            rec("c", &[Care, Loyalty], Agreement::Full),
            rec("d", &[Care, Loyalty, Sanctity], Agreement::Full),
        ];
        let s = compute_stats(&records);
        assert_eq!(s.cardinality_histogram, [2, 1, 1, 0, 0, 0]);
        assert_eq!(s.single_foundation_counts[Care.index()], 1);

        let mut ten: Vec<_> = (0..6).map(|i| rec(&i.to_string(), &[Fairness], Agreement::Full)).collect();
        ten.extend((0..4).map(|i| rec(&format!("c{i}"), &[Care], Agreement::Full)));
        let s = compute_stats(&ten);
        assert!((s.proportion(Care) - 0.4).abs() < 1e-12);
        assert!(s.single_foundation_proportions.iter().sum::<f64>() <= 1.0 + 1e-12);

        let empty = compute_stats(&[]);
        assert_eq!(empty.total, 0);
        assert_eq!(empty.cardinality_histogram, [0; 6]);
        assert_eq!(empty.foundation_proportions, [0.0; 6]);
    }

    #[test]
    fn synthetic_covers_everything() {
        let records = synthetic_dataset(50, 42);
        assert_eq!(records.len(), 50);
        let stats = compute_stats(&records);
        assert!(stats.cardinality_histogram[..3].iter().all(|&c| c > 0));
        assert!(stats.foundation_proportions.iter().all(|&p| p > 0.0));
        assert_eq!(stats.judgment_counts.len(), 3);
        assert!(stats.single_foundation_counts.iter().all(|&c| c > 0));
        assert_eq!(synthetic_dataset(50, 42), records);
        assert!(records.iter().all(|r| r.validate().is_ok()));
    }

    #[test]
    fn csv_round_trip_through_ingest() {
        let records = synthetic_dataset(20, 3);
        let mut buf = Vec::new();
        write_records_csv(&records, &mut buf).unwrap();
        let f = write_tmp(std::str::from_utf8(&buf).unwrap(), ".csv");
        let out = ingest(f.path(), &ColumnSchema::default()).unwrap();
        assert_eq!(out.records, records);
    }

    proptest! {
        #[test]
        fn samples_are_nested_and_deterministic(len in 0usize..200, a in 1usize..200, b in 1usize..200, seed in any::<u64>()) {
            let records = synthetic_dataset(len, 1);
            let (small, large) = (a.min(b), a.max(b));
            let s = sample_subset(&records, small, seed);
            let l = sample_subset(&records, large, seed);
            prop_assert_eq!(s.len(), small.min(len));
            let large_ids: std::collections::HashSet<_> = l.iter().map(|r| &r.id).collect();
            prop_assert!(s.iter().all(|r| large_ids.contains(&r.id)));
            prop_assert_eq!(sample_subset(&records, small, seed), s);
        }

        #[test]
        fn histogram_sums_to_total(len in 0usize..120, seed in any::<u64>()) {
            let records = synthetic_dataset(len, seed);
            let s = compute_stats(&records);
            prop_assert_eq!(s.cardinality_histogram.iter().sum::<usize>(), s.total);
        }
    }
}
