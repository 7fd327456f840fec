//! Dataset ingestion, tokenization, and deterministic splits.
//!
//! Input files are CSV (header row, columns `id,text,cause,inference`,
//! RFC-4180 quoting) or JSONL (one object per line, same keys). `cause` is an
//! integer label in `0..=5`; `inference` is the optional human-written
//! rationale and may be empty. Missing `id` columns get synthesized
//! `row_<n>` ids; duplicate ids are rejected outright since silent dedup
//! would skew per-class counts.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::seeded_rng;
use crate::{Error, Result};

/// The six cause labels, in fixed value order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CauseCategory {
    NoReason = 0,
    BiasOrAbuse = 1,
    JobsAndCareers = 2,
    Medication = 3,
    Relationships = 4,
    Alienation = 5,
}

impl CauseCategory {
    pub const ALL: [CauseCategory; 6] = [
        CauseCategory::NoReason,
        CauseCategory::BiasOrAbuse,
        CauseCategory::JobsAndCareers,
        CauseCategory::Medication,
        CauseCategory::Relationships,
        CauseCategory::Alienation,
    ];

    pub fn value(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            CauseCategory::NoReason => "no reason",
            CauseCategory::BiasOrAbuse => "bias or abuse",
            CauseCategory::JobsAndCareers => "jobs and careers",
            CauseCategory::Medication => "medication",
            CauseCategory::Relationships => "relationships",
            CauseCategory::Alienation => "alienation",
        }
    }

    pub fn from_value(v: i64) -> Option<CauseCategory> {
        match v {
            0 => Some(CauseCategory::NoReason),
            1 => Some(CauseCategory::BiasOrAbuse),
            2 => Some(CauseCategory::JobsAndCareers),
            3 => Some(CauseCategory::Medication),
            4 => Some(CauseCategory::Relationships),
            5 => Some(CauseCategory::Alienation),
            _ => None,
        }
    }
}

impl Serialize for CauseCategory {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u64(self.value() as u64)
    }
}

impl<'de> Deserialize<'de> for CauseCategory {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = i64::deserialize(d)?;
        CauseCategory::from_value(v)
            .ok_or_else(|| serde::de::Error::custom(format!("cause label {v} outside 0..=5")))
    }
}

/// One labeled post. `tokens` is always `tokenize(text)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "DocumentRecord", into = "DocumentRecord")]
pub struct Document {
    pub id: String,
    pub text: String,
    pub tokens: Vec<String>,
    pub label: CauseCategory,
    pub inference: Option<String>,
}

impl Document {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        label: CauseCategory,
        inference: Option<String>,
    ) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Document {
            id: id.into(),
            text,
            tokens,
            label,
            inference: inference.filter(|s| !s.trim().is_empty()),
        }
    }
}

/// On-disk shape of a document; tokens are derived, not stored.
#[derive(Serialize, Deserialize)]
struct DocumentRecord {
    id: String,
    text: String,
    cause: CauseCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inference: Option<String>,
}

impl From<DocumentRecord> for Document {
    fn from(r: DocumentRecord) -> Self {
        Document::new(r.id, r.text, r.cause, r.inference)
    }
}

impl From<Document> for DocumentRecord {
    fn from(d: Document) -> Self {
        DocumentRecord {
            id: d.id,
            text: d.text,
            cause: d.label,
            inference: d.inference,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    Jsonl,
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "jsonl" => Ok(DataFormat::Jsonl),
            other => Err(Error::schema(format!(
                "unknown data format {other:?}, expected csv or jsonl"
            ))),
        }
    }
}

/// Lowercase, split on Unicode whitespace, strip non-alphanumeric characters
/// from both ends of each piece, drop what's left empty. Truncation to the
/// model's max length happens downstream, never here.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Load a dataset, preserving row order. Row numbers in errors are 1-based
/// data rows (the CSV header is row 0).
pub fn load_dataset(path: &Path, format: DataFormat) -> Result<Vec<Document>> {
    let docs = match format {
        DataFormat::Csv => load_csv(path)?,
        DataFormat::Jsonl => load_jsonl(path)?,
    };
    let mut seen = HashSet::new();
    for (i, d) in docs.iter().enumerate() {
        if !seen.insert(d.id.as_str()) {
            return Err(Error::schema_at(i + 1, format!("duplicate id {:?}", d.id)));
        }
    }
    Ok(docs)
}

fn load_csv(path: &Path) -> Result<Vec<Document>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);

    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let id_col = col("id");
    let text_col = col("text")
        .ok_or_else(|| Error::schema(format!("missing required column `text` in {path:?}")))?;
    let cause_col = col("cause")
        .ok_or_else(|| Error::schema(format!("missing required column `cause` in {path:?}")))?;
    let inference_col = col("inference");

    let mut docs = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let text = record
            .get(text_col)
            .ok_or_else(|| Error::schema_at(row, "short record: no text field"))?;
        let cause_raw = record
            .get(cause_col)
            .ok_or_else(|| Error::schema_at(row, "short record: no cause field"))?;
        let label = parse_label(cause_raw, row)?;
        let id = match id_col.and_then(|c| record.get(c)).filter(|s| !s.is_empty()) {
            Some(s) => s.to_owned(),
            None => format!("row_{row}"),
        };
        let inference = inference_col
            .and_then(|c| record.get(c))
            .map(str::to_owned);
        docs.push(Document::new(id, text, label, inference));
    }
    Ok(docs)
}

fn load_jsonl(path: &Path) -> Result<Vec<Document>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let row = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| Error::schema_at(row, format!("invalid JSON: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::schema_at(row, "line is not a JSON object"))?;
        let text = obj
            .get("text")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::schema_at(row, "missing required key `text`"))?;
        let cause = obj
            .get("cause")
            .ok_or_else(|| Error::schema_at(row, "missing required key `cause`"))?;
        let label = match cause.as_i64() {
            Some(v) => CauseCategory::from_value(v)
                .ok_or_else(|| Error::schema_at(row, format!("cause label {v} outside 0..=5")))?,
            None => parse_label(cause.as_str().unwrap_or(""), row)?,
        };
        let id = match obj.get("id").and_then(|v| v.as_str()) {
            Some(s) if !s.is_empty() => s.to_owned(),
            _ => format!("row_{row}"),
        };
        let inference = obj
            .get("inference")
            .and_then(|v| v.as_str())
            .map(str::to_owned);
        docs.push(Document::new(id, text, label, inference));
    }
    Ok(docs)
}

fn parse_label(raw: &str, row: usize) -> Result<CauseCategory> {
    let v: i64 = raw
        .trim()
        .parse()
        .map_err(|_| Error::schema_at(row, format!("cause label {raw:?} is not an integer")))?;
    CauseCategory::from_value(v)
        .ok_or_else(|| Error::schema_at(row, format!("cause label {v} outside 0..=5")))
}

/// Write documents as JSONL (the prepared-split format).
pub fn save_jsonl(docs: &[Document], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in docs {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Train/validation/test partition with the seed that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplit {
    pub train: Vec<Document>,
    pub validation: Vec<Document>,
    pub test: Vec<Document>,
    pub seed: u64,
}

/// Uniform seeded shuffle, then contiguous assignment of the requested
/// counts. Identical `(docs, counts, seed)` always produce identical splits.
pub fn split(
    docs: &[Document],
    counts: (usize, usize, usize),
    seed: u64,
) -> Result<CorpusSplit> {
    let (n_train, n_val, n_test) = counts;
    let total = n_train + n_val + n_test;
    if total > docs.len() {
        return Err(Error::schema(format!(
            "requested counts {n_train}+{n_val}+{n_test}={total} exceed corpus size {}",
            docs.len()
        )));
    }
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut seeded_rng(seed));

    let pick = |range: std::ops::Range<usize>| -> Vec<Document> {
        order[range].iter().map(|&i| docs[i].clone()).collect()
    };
    Ok(CorpusSplit {
        train: pick(0..n_train),
        validation: pick(n_train..n_train + n_val),
        test: pick(n_train + n_val..total),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, text: &str, label: usize) -> Document {
        Document::new(id, text, CauseCategory::from_value(label as i64).unwrap(), None)
    }

    #[test]
    fn tokenize_strips_and_lowercases() {
        assert_eq!(
            tokenize("Five years now and still no job."),
            ["five", "years", "now", "and", "still", "no", "job"]
        );
    }

    #[test]
    fn tokenize_empty_input() {
        assert_eq!(tokenize(""), Vec::<String>::new());
    }

    #[test]
    fn tokenize_drops_punctuation_only_tokens() {
        assert_eq!(tokenize("I am done!!! :("), ["i", "am", "done"]);
    }

    #[test]
    fn tokenize_keeps_interior_punctuation() {
        assert_eq!(tokenize("don't stop"), ["don't", "stop"]);
    }

    #[test]
    fn csv_roundtrip_three_rows() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "id,text,cause,inference").unwrap();
        writeln!(f, "a,\"no job, no hope\",0,").unwrap();
        writeln!(f, "b,lost my job,2,unemployment").unwrap();
        writeln!(f, "c,pills stopped working,4,").unwrap();
        let docs = load_dataset(f.path(), DataFormat::Csv).unwrap();
        assert_eq!(docs.len(), 3);
        assert_eq!(
            docs.iter().map(|d| d.label.value()).collect::<Vec<_>>(),
            [0, 2, 4]
        );
        assert_eq!(docs[1].inference.as_deref(), Some("unemployment"));
        assert_eq!(docs[0].inference, None);
    }

    #[test]
    fn csv_label_out_of_domain_names_row() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "id,text,cause").unwrap();
        writeln!(f, "a,fine,1").unwrap();
        writeln!(f, "b,bad,7").unwrap();
        let err = load_dataset(f.path(), DataFormat::Csv).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("record 2"), "error should name the row: {msg}");
        assert!(msg.contains('7'));
    }

    #[test]
    fn csv_missing_text_column_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "id,body,cause").unwrap();
        writeln!(f, "a,fine,1").unwrap();
        let err = load_dataset(f.path(), DataFormat::Csv).unwrap_err();
        assert!(err.to_string().contains("text"));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "id,text,cause").unwrap();
        writeln!(f, "a,one,1").unwrap();
        writeln!(f, "a,two,2").unwrap();
        let err = load_dataset(f.path(), DataFormat::Csv).unwrap_err();
        assert!(err.to_string().contains("duplicate id"));
    }

    #[test]
    fn jsonl_loads_and_validates() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"x","text":"No Sleep","cause":5,"inference":"isolation"}}"#).unwrap();
        writeln!(f, r#"{{"id":"y","text":"ok","cause":0}}"#).unwrap();
        let docs = load_dataset(f.path(), DataFormat::Jsonl).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0].tokens, ["no", "sleep"]);
        assert_eq!(docs[0].inference.as_deref(), Some("isolation"));
    }

    #[test]
    fn cams_scale_file_loads_every_row() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "id,text,cause,inference").unwrap();
        for i in 0..5051 {
            writeln!(f, "p{i},post number {i},{},", i % 6).unwrap();
        }
        let docs = load_dataset(f.path(), DataFormat::Csv).unwrap();
        assert_eq!(docs.len(), 5051);
    }

    #[test]
    fn split_exact_paper_counts() {
        let docs: Vec<Document> = (0..2186).map(|i| doc(&format!("d{i}"), "text", i % 6)).collect();
        let s = split(&docs, (1699, 117, 370), 42).unwrap();
        assert_eq!(s.train.len(), 1699);
        assert_eq!(s.validation.len(), 117);
        assert_eq!(s.test.len(), 370);
    }

    #[test]
    fn split_all_to_train() {
        let docs: Vec<Document> = (0..10).map(|i| doc(&format!("d{i}"), "text", i % 6)).collect();
        let s = split(&docs, (10, 0, 0), 1234).unwrap();
        assert_eq!(s.train.len(), 10);
        assert!(s.validation.is_empty() && s.test.is_empty());
        let mut ids: Vec<_> = s.train.iter().map(|d| d.id.clone()).collect();
        ids.sort();
        assert_eq!(ids, (0..10).map(|i| format!("d{i}")).collect::<Vec<_>>());
    }

    #[test]
    fn split_counts_exceeding_corpus_rejected() {
        let docs: Vec<Document> = (0..5).map(|i| doc(&format!("d{i}"), "text", 0)).collect();
        assert!(split(&docs, (4, 1, 1), 0).is_err());
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let docs: Vec<Document> = (0..50).map(|i| doc(&format!("d{i}"), "text", i % 6)).collect();
        let a = split(&docs, (30, 10, 10), 7).unwrap();
        let b = split(&docs, (30, 10, 10), 7).unwrap();
        assert_eq!(a, b);

        // At least one differing assignment across 5 seeds.
        let baseline: Vec<_> = a.train.iter().map(|d| d.id.clone()).collect();
        let differs = (8..13).any(|seed| {
            let s = split(&docs, (30, 10, 10), seed).unwrap();
            s.train.iter().map(|d| d.id.clone()).collect::<Vec<_>>() != baseline
        });
        assert!(differs);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn tokenize_idempotent_on_rejoined_output(text in ".{0,200}") {
                let once = tokenize(&text);
                let twice = tokenize(&once.join(" "));
                prop_assert_eq!(once, twice);
            }

            #[test]
            fn document_roundtrips_through_jsonl(
                text in "[a-zA-Z0-9 .,!']{0,80}",
                label in 0usize..6,
                inference in proptest::option::of("[a-z ]{1,30}"),
            ) {
                let d = Document::new("id0", text, CauseCategory::from_value(label as i64).unwrap(), inference);
                let line = serde_json::to_string(&d).unwrap();
                let back: Document = serde_json::from_str(&line).unwrap();
                prop_assert_eq!(d, back);
            }

            #[test]
            fn split_partitions_input(n in 6usize..40, seed in any::<u64>()) {
                let docs: Vec<Document> =
                    (0..n).map(|i| doc(&format!("d{i}"), "text", i % 6)).collect();
                let (a, b) = (n / 3, n / 4);
                let c = n - a - b;
                let s = split(&docs, (a, b, c), seed).unwrap();
                let mut ids: Vec<_> = s.train.iter()
                    .chain(&s.validation)
                    .chain(&s.test)
                    .map(|d| d.id.clone())
                    .collect();
                ids.sort();
                let mut expect: Vec<_> = docs.iter().map(|d| d.id.clone()).collect();
                expect.sort();
                prop_assert_eq!(ids, expect);
            }
        }
    }
}
