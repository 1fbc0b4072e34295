//! Dialogue pairs and the JSONL dataset format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::normalize::normalize;
use crate::error::{Error, Result};

/// Content-token bounds for pretraining ingestion, both exclusive.
pub const MIN_PAIR_TOKENS: usize = 8;
pub const MAX_PAIR_TOKENS: usize = 128;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    #[default]
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DialoguePair {
    pub input: String,
    pub response: String,
    #[serde(default)]
    pub origin: Origin,
}

impl DialoguePair {
    pub fn new(input: impl Into<String>, response: impl Into<String>, origin: Origin) -> Self {
        Self {
            input: input.into(),
            response: response.into(),
            origin,
        }
    }

    /// Both sides keep at least one token after normalization.
    pub fn is_valid(&self) -> bool {
        normalize(&self.input).content_len() > 0 && normalize(&self.response).content_len() > 0
    }
}

/// Pretraining length filter: both sides must have strictly more than 8 and
/// strictly fewer than 128 tokens, boundary tokens excluded.
pub fn filter_pair(pair: &DialoguePair) -> bool {
    let ok = |text: &str| {
        let n = normalize(text).content_len();
        n > MIN_PAIR_TOKENS && n < MAX_PAIR_TOKENS
    };
    ok(&pair.input) && ok(&pair.response)
}

pub fn read_jsonl_from(reader: impl Read) -> Result<Vec<DialoguePair>> {
    let mut pairs = Vec::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: DialoguePair = serde_json::from_str(&line).map_err(|e| {
            Error::format("dataset", format!("line {}: {e}", lineno + 1))
        })?;
        if !pair.is_valid() {
            return Err(Error::format(
                "dataset",
                format!("line {}: empty input or response", lineno + 1),
            ));
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<DialoguePair>> {
    read_jsonl_from(File::open(path)?)
}

pub fn write_jsonl_to<'a>(
    writer: impl Write,
    pairs: impl IntoIterator<Item = &'a DialoguePair>,
) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for pair in pairs {
        serde_json::to_writer(&mut w, pair)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_jsonl<'a>(
    path: impl AsRef<Path>,
    pairs: impl IntoIterator<Item = &'a DialoguePair>,
) -> Result<()> {
    write_jsonl_to(File::create(path)?, pairs)
}
