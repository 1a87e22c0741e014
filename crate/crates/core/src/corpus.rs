//! Ingestion of the edited-headline task files: apply word edits to original
//! headlines, produce regression examples and Task-2 pairs.

use std::fs::File;
use std::path::Path;

use crate::error::{Error, Result};
use crate::text::{self, Vocab, PAD_ID};

/// One raw task row. `original` contains exactly one `<word/>` span marking
/// the replacement site; `mean_grade` is absent on unlabeled test rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub id: String,
    pub original: String,
    pub edit: String,
    pub mean_grade: Option<f64>,
}

/// A tokenized, padded example ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    /// Token ids, length exactly `seq_len`; positions `>= true_length` are PAD.
    pub tokens: Vec<usize>,
    pub true_length: usize,
    pub target: Option<f64>,
}

/// One Task-2 row: two edited headlines and which one was funnier
/// (0 marks an equally-funny tie).
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub id: String,
    pub record_a: RawRecord,
    pub record_b: RawRecord,
    pub label: Option<u8>,
}

/// Replace the single `<word/>` span in `original` with `edit`. Everything
/// outside the span is preserved byte for byte.
pub fn apply_edit(original: &str, edit: &str) -> Result<String> {
    if edit.is_empty() {
        return Err(Error::MalformedEdit("edit word is empty".into()));
    }
    let open = match exactly_one(original, "<") {
        Some(pos) => pos,
        None => {
            return Err(Error::MalformedEdit(format!(
                "expected exactly one `<` in {original:?}"
            )))
        }
    };
    let close = match exactly_one(original, "/>") {
        Some(pos) => pos,
        None => {
            return Err(Error::MalformedEdit(format!(
                "expected exactly one `/>` in {original:?}"
            )))
        }
    };
    if close < open {
        return Err(Error::MalformedEdit(format!(
            "`/>` precedes `<` in {original:?}"
        )));
    }
    let mut out = String::with_capacity(original.len() + edit.len());
    out.push_str(&original[..open]);
    out.push_str(edit);
    out.push_str(&original[close + 2..]);
    Ok(out)
}

fn exactly_one(haystack: &str, needle: &str) -> Option<usize> {
    let mut it = haystack.match_indices(needle);
    let first = it.next()?;
    if it.next().is_some() {
        return None;
    }
    Some(first.0)
}

fn validate_original(original: &str) -> Result<()> {
    apply_edit(original, "x").map(|_| ())
}

struct Columns {
    id: usize,
    original: usize,
    edit: usize,
    mean_grade: Option<usize>,
}

fn find_column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

fn require_column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    find_column(headers, name).ok_or_else(|| Error::MissingColumn(name.to_string()))
}

fn columns(headers: &csv::StringRecord, suffix: &str) -> Result<Columns> {
    Ok(Columns {
        id: require_column(headers, "id")?,
        original: require_column(headers, &format!("original{suffix}"))?,
        edit: require_column(headers, &format!("edit{suffix}"))?,
        mean_grade: find_column(headers, &format!("meanGrade{suffix}")),
    })
}

fn parse_mean_grade(row: usize, field: &str, name: &str) -> Result<Option<f64>> {
    let trimmed = field.trim();
    if trimmed.is_empty() {
        return Ok(None);
    }
    let value: f64 = trimmed.parse().map_err(|_| Error::Parse {
        row,
        msg: format!("{name}: `{trimmed}` is not a number"),
    })?;
    if !(0.0..=3.0).contains(&value) {
        return Err(Error::Parse {
            row,
            msg: format!("{name}: {value} outside [0, 3]"),
        });
    }
    Ok(Some(value))
}

fn parse_record(
    record: &csv::StringRecord,
    cols: &Columns,
    row: usize,
    side: &str,
) -> Result<RawRecord> {
    let field = |idx: usize| -> Result<&str> {
        record.get(idx).ok_or_else(|| Error::Parse {
            row,
            msg: format!("row has only {} fields", record.len()),
        })
    };
    let id = field(cols.id)?.trim().to_string();
    let original = field(cols.original)?.to_string();
    let edit = field(cols.edit)?.trim().to_string();
    validate_original(&original).map_err(|e| Error::Parse {
        row,
        msg: format!("original{side}: {e}"),
    })?;
    if edit.is_empty() {
        return Err(Error::Parse {
            row,
            msg: format!("edit{side}: empty"),
        });
    }
    let mean_grade = match cols.mean_grade {
        Some(idx) => parse_mean_grade(row, field(idx)?, &format!("meanGrade{side}"))?,
        None => None,
    };
    Ok(RawRecord {
        id,
        original,
        edit,
        mean_grade,
    })
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file))
}

/// Load a Task-1 file (columns id, original, edit, meanGrade; grade columns
/// may be absent on unlabeled test files). Row order is preserved.
pub fn load_task1_csv(path: &Path) -> Result<Vec<RawRecord>> {
    let mut reader = open_csv(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .clone();
    let cols = columns(&headers, "")?;
    let mut records = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let row_no = idx + 1;
        let record = row.map_err(|e| Error::Parse {
            row: row_no,
            msg: e.to_string(),
        })?;
        records.push(parse_record(&record, &cols, row_no, "")?);
    }
    Ok(records)
}

/// Load a Task-2 file: two Task-1 column sets with `1`/`2` suffixes plus a
/// `label` column (absent or empty on unlabeled test rows).
pub fn load_task2_csv(path: &Path) -> Result<Vec<PairRecord>> {
    let mut reader = open_csv(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .clone();
    let cols_a = columns(&headers, "1")?;
    let cols_b = columns(&headers, "2")?;
    let label_col = find_column(&headers, "label");
    let mut pairs = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let row_no = idx + 1;
        let record = row.map_err(|e| Error::Parse {
            row: row_no,
            msg: e.to_string(),
        })?;
        let record_a = parse_record(&record, &cols_a, row_no, "1")?;
        let record_b = parse_record(&record, &cols_b, row_no, "2")?;
        let label = match label_col.and_then(|idx| record.get(idx)) {
            None => None,
            Some(field) if field.trim().is_empty() => None,
            Some(field) => {
                let value: u8 = field.trim().parse().map_err(|_| Error::Parse {
                    row: row_no,
                    msg: format!("label: `{}` is not an integer", field.trim()),
                })?;
                if value > 2 {
                    return Err(Error::Parse {
                        row: row_no,
                        msg: format!("label: {value} outside {{0, 1, 2}}"),
                    });
                }
                Some(value)
            }
        };
        pairs.push(PairRecord {
            id: record_a.id.clone(),
            record_a,
            record_b,
            label,
        });
    }
    Ok(pairs)
}

/// Write records back out in the Task-1 schema. Used for fixtures and to
/// check that a load/serialize round trip preserves every field.
pub fn write_task1_csv(path: &Path, records: &[RawRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    writer
        .write_record(["id", "original", "edit", "meanGrade"])
        .map_err(|e| Error::Format(e.to_string()))?;
    for record in records {
        let grade = record
            .mean_grade
            .map(|g| g.to_string())
            .unwrap_or_default();
        writer
            .write_record([&record.id, &record.original, &record.edit, &grade])
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Tokenize the edited headline and fit it to `seq_len`: truncate, then pad
/// with PAD. The record must satisfy the edit-span invariant (loaders
/// enforce it).
pub fn to_example(record: &RawRecord, vocab: &Vocab, seq_len: usize) -> Example {
    let edited = apply_edit(&record.original, &record.edit)
        .expect("RawRecord invariant: exactly one edit span");
    let tokens = text::tokenize(&edited);
    let mut ids = vocab.encode(&tokens);
    ids.truncate(seq_len);
    let true_length = ids.len();
    ids.resize(seq_len, PAD_ID);
    Example {
        id: record.id.clone(),
        tokens: ids,
        true_length,
        target: record.mean_grade,
    }
}

/// Summary of an ingestion pass.
#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub records: usize,
    /// Ids of headlines that tokenized to nothing (all-PAD examples).
    pub empty_after_tokenize: Vec<String>,
}

pub fn to_examples(
    records: &[RawRecord],
    vocab: &Vocab,
    seq_len: usize,
) -> (Vec<Example>, IngestReport) {
    let mut report = IngestReport {
        records: records.len(),
        ..Default::default()
    };
    let examples = records
        .iter()
        .map(|r| {
            let example = to_example(r, vocab, seq_len);
            if example.true_length == 0 {
                report.empty_after_tokenize.push(example.id.clone());
            }
            example
        })
        .collect();
    (examples, report)
}
