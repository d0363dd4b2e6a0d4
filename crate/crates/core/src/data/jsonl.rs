use std::collections::HashSet;
use std::path::Path;

use super::{Dataset, Provenance, UtterancePair};
use crate::error::{M3vError, Result};

/// Parses one JSONL line into a validated pair. `line` is 1-based and only
/// used for error context.
pub fn parse_pair(text: &str, line: usize) -> Result<UtterancePair> {
    let pair: UtterancePair = serde_json::from_str(text).map_err(|e| M3vError::Parse {
        line,
        message: e.to_string(),
    })?;
    pair.validate()
        .map_err(|message| M3vError::Parse { line, message })?;
    Ok(pair)
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|e| M3vError::io(path, e))?;
    parse_jsonl(&content)
}

pub(crate) fn parse_jsonl(content: &str) -> Result<Dataset> {
    let mut samples = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    let mut ids = HashSet::new();
    for (i, raw) in content.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let pair = parse_pair(raw, line)?;
        let d = (pair.audio_dim(), pair.text_dim());
        match dims {
            None => dims = Some(d),
            Some(expected) if expected != d => {
                return Err(M3vError::Parse {
                    line,
                    message: format!(
                        "feature dims (audio {}, text {}) differ from earlier lines (audio {}, text {})",
                        d.0, d.1, expected.0, expected.1
                    ),
                })
            }
            Some(_) => {}
        }
        if !ids.insert(pair.id.clone()) {
            return Err(M3vError::Parse {
                line,
                message: format!("duplicate id {}", pair.id),
            });
        }
        samples.push(pair);
    }
    Dataset::new(samples, Provenance::Loaded)
}

pub fn to_jsonl_string(ds: &Dataset) -> String {
    let mut out = String::new();
    for s in ds.samples() {
        out.push_str(&serde_json::to_string(s).expect("pairs always serialize"));
        out.push('\n');
    }
    out
}

pub fn save_jsonl(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    crate::util::write_atomic(path.as_ref(), to_jsonl_string(ds).as_bytes())
}
