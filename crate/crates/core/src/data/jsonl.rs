use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::Value;

use super::{preprocess_condition, LabeledPair};
use crate::error::{AenError, Result};

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Downgrade malformed lines to warnings instead of aborting.
    pub skip_bad: bool,
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub pairs: Vec<LabeledPair>,
    /// `(line number, message)` for every skipped line.
    pub skipped: Vec<(usize, String)>,
}

/// Loads a JSONL dataset, aborting on the first malformed line.
pub fn load_dataset_jsonl(path: impl AsRef<Path>) -> Result<Vec<LabeledPair>> {
    Ok(load_dataset_jsonl_with(path, LoadOptions::default())?.pairs)
}

pub fn load_dataset_jsonl_with(path: impl AsRef<Path>, opts: LoadOptions) -> Result<LoadReport> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut report = LoadReport::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line) {
            Ok(pair) => report.pairs.push(pair),
            Err(message) if opts.skip_bad => report.skipped.push((line_no, message)),
            Err(message) => {
                return Err(AenError::Schema {
                    path: path.to_path_buf(),
                    line: line_no,
                    message,
                })
            }
        }
    }
    Ok(report)
}

fn parse_line(line: &str) -> std::result::Result<LabeledPair, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = value.as_object().ok_or("expected a JSON object")?;
    let text_field = |key: &str| -> std::result::Result<String, String> {
        match obj.get(key) {
            Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.clone()),
            Some(Value::String(_)) => Err(format!("{key:?} is empty")),
            Some(_) => Err(format!("{key:?} must be a string")),
            None => Err(format!("missing {key:?}")),
        }
    };
    let statement = text_field("statement")?;
    let condition = preprocess_condition(&text_field("condition")?).map_err(|e| e.to_string())?;
    let label = match obj.get("label") {
        Some(v) => match v.as_u64() {
            Some(l @ (0 | 1)) => l as u8,
            _ => return Err(format!("label must be 0 or 1, got {v}")),
        },
        None => return Err("missing \"label\"".to_string()),
    };
    let source = match obj.get("source") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err("\"source\" must be a string".to_string()),
    };
    Ok(LabeledPair {
        statement,
        condition,
        label,
        source,
    })
}

pub fn write_dataset_jsonl(path: impl AsRef<Path>, pairs: &[LabeledPair]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for pair in pairs {
        serde_json::to_writer(&mut w, pair)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
