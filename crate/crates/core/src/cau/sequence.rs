use std::path::Path;

use serde::{Deserialize, Serialize};

use super::catalog::{CauCatalog, TokenKind, EOD, SOD};
use crate::blob;
use crate::error::{Error, Result};

/// One annotated token with its beat span `[start_beat, end_beat)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeqItem {
    pub token: usize,
    pub start_beat: usize,
    pub end_beat: usize,
}

/// Tokens following the implicit SOD, each with its beat span.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CauSequence {
    pub items: Vec<SeqItem>,
}

#[derive(Serialize, Deserialize)]
struct SequenceFile {
    format: String,
    version: u32,
    item: Vec<ItemRecord>,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct ItemRecord {
    pub token: String,
    pub start_beat: usize,
    pub end_beat: usize,
}

const SEQUENCE_FORMAT: &str = "dancegen-sequence";

impl CauSequence {
    /// Lays `tokens` out back to back from beat 0 using catalog lengths.
    pub fn from_tokens(tokens: &[usize], catalog: &CauCatalog) -> Result<Self> {
        let mut beat = 0;
        let mut items = Vec::with_capacity(tokens.len());
        for &t in tokens {
            let len = catalog.beats(t)?;
            items.push(SeqItem {
                token: t,
                start_beat: beat,
                end_beat: beat + len,
            });
            beat += len;
        }
        let seq = Self { items };
        seq.validate(catalog)?;
        Ok(seq)
    }

    pub fn tokens(&self) -> Vec<usize> {
        self.items.iter().map(|i| i.token).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Spans must be ordered, non-overlapping and as long as the catalog says;
    /// SOD never appears and EOD, if present, is last.
    pub fn validate(&self, catalog: &CauCatalog) -> Result<()> {
        let mut prev_end = 0;
        for (i, it) in self.items.iter().enumerate() {
            let kind = catalog.kind(it.token)?;
            if it.token == SOD {
                return Err(Error::Validation(format!("item {i}: SOD cannot appear inside a sequence")));
            }
            if it.token == EOD && i + 1 != self.items.len() {
                return Err(Error::Validation(format!("item {i}: EOD must be the final item")));
            }
            if it.start_beat < prev_end || it.end_beat < it.start_beat {
                return Err(Error::Validation(format!(
                    "item {i}: span [{}, {}) overlaps or runs backwards",
                    it.start_beat, it.end_beat
                )));
            }
            let want = catalog.beats(it.token)?;
            if it.end_beat - it.start_beat != want && kind != TokenKind::Eod {
                return Err(Error::Validation(format!(
                    "item {i}: `{}` spans {} beats, catalog says {want}",
                    catalog.name(it.token)?,
                    it.end_beat - it.start_beat
                )));
            }
            prev_end = it.end_beat;
        }
        Ok(())
    }

    pub(crate) fn to_records(&self, catalog: &CauCatalog) -> Result<Vec<ItemRecord>> {
        self.items
            .iter()
            .map(|it| {
                Ok(ItemRecord {
                    token: catalog.name(it.token)?.to_string(),
                    start_beat: it.start_beat,
                    end_beat: it.end_beat,
                })
            })
            .collect()
    }

    pub(crate) fn from_records(records: &[ItemRecord], catalog: &CauCatalog) -> Result<Self> {
        let items = records
            .iter()
            .map(|r| {
                Ok(SeqItem {
                    token: catalog.id_of(&r.token)?,
                    start_beat: r.start_beat,
                    end_beat: r.end_beat,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let seq = Self { items };
        seq.validate(catalog)?;
        Ok(seq)
    }

    pub fn save(&self, path: &Path, catalog: &CauCatalog) -> Result<()> {
        blob::write_toml(
            path,
            &SequenceFile {
                format: SEQUENCE_FORMAT.into(),
                version: 1,
                item: self.to_records(catalog)?,
            },
        )
    }

    pub fn load(path: &Path, catalog: &CauCatalog) -> Result<Self> {
        let file: SequenceFile = blob::read_toml(path)?;
        if file.format != SEQUENCE_FORMAT {
            return Err(Error::parse(path, format!("unknown format `{}`", file.format)));
        }
        Self::from_records(&file.item, catalog)
    }
}

/// Total beats consumed by CAU and NIL tokens.
pub fn sequence_duration_beats(tokens: &[usize], catalog: &CauCatalog) -> Result<usize> {
    tokens.iter().map(|&t| catalog.beats(t)).sum()
}

/// Drops SOD and EOD, keeping NIL and CAU tokens.
pub fn strip_specials(tokens: &[usize]) -> Vec<usize> {
    tokens.iter().copied().filter(|&t| t != SOD && t != EOD).collect()
}
