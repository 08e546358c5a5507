//! On-disk formats: the versioned ranked-vocabulary JSON file and the
//! token-stream text file.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    Alphabet, ObjectiveKind, Pretokenizer, RankedVocabulary, SubwordId, SubwordString, SymbolMode,
    Tokeniser,
};
use crate::error::{Error, Result};
use crate::fsio;

pub const VOCAB_FILE_VERSION: u32 = 1;

/// A subword's bytes: a JSON string when they are valid UTF-8, an array of
/// byte values otherwise.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SubwordText {
    Text(String),
    Bytes(Vec<u8>),
}

impl SubwordText {
    pub fn from_bytes(b: &[u8]) -> Self {
        match std::str::from_utf8(b) {
            Ok(s) => SubwordText::Text(s.to_owned()),
            Err(_) => SubwordText::Bytes(b.to_vec()),
        }
    }

    pub fn into_bytes(self) -> Vec<u8> {
        match self {
            SubwordText::Text(s) => s.into_bytes(),
            SubwordText::Bytes(b) => b,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub rank: u32,
    pub left: SubwordId,
    pub right: SubwordId,
    pub result: SubwordId,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabFile {
    pub version: u32,
    pub objective_kind: ObjectiveKind,
    pub symbols: SymbolMode,
    pub pretokenizer: Pretokenizer,
    pub truncated: bool,
    pub alphabet: Vec<SubwordText>,
    pub merges: Vec<MergeRecord>,
}

impl From<&RankedVocabulary> for VocabFile {
    fn from(v: &RankedVocabulary) -> Self {
        VocabFile {
            version: VOCAB_FILE_VERSION,
            objective_kind: v.objective(),
            symbols: v.symbol_mode(),
            pretokenizer: v.pretokenizer(),
            truncated: v.is_truncated(),
            alphabet: v
                .alphabet()
                .symbols()
                .iter()
                .map(|s| SubwordText::from_bytes(s))
                .collect(),
            merges: v
                .merges()
                .iter()
                .map(|m| MergeRecord {
                    rank: m.rank,
                    left: m.left,
                    right: m.right,
                    result: m.result,
                    score: m.score,
                })
                .collect(),
        }
    }
}

impl TryFrom<VocabFile> for RankedVocabulary {
    type Error = Error;

    fn try_from(f: VocabFile) -> Result<Self> {
        if f.version != VOCAB_FILE_VERSION {
            return Err(Error::InvalidVocabulary(format!(
                "unsupported version {} (expected {VOCAB_FILE_VERSION})",
                f.version
            )));
        }
        let symbols: Vec<Vec<u8>> = f
            .alphabet
            .into_iter()
            .map(SubwordText::into_bytes)
            .collect();
        let mut sorted = symbols.clone();
        sorted.sort();
        if sorted != symbols {
            return Err(Error::InvalidVocabulary(
                "alphabet is not in byte order".into(),
            ));
        }
        let alphabet = Alphabet::new(f.symbols, symbols)?;
        let base = alphabet.len() as u32;
        for (i, m) in f.merges.iter().enumerate() {
            let expected_rank = i as u32 + 1;
            if m.rank != expected_rank || m.result != base + i as u32 {
                return Err(Error::InvalidVocabulary(format!(
                    "merge #{expected_rank} has rank {} and result {}",
                    m.rank, m.result
                )));
            }
        }
        RankedVocabulary::from_parts(
            alphabet,
            f.objective_kind,
            f.pretokenizer,
            f.merges.iter().map(|m| (m.left, m.right, m.score)),
            f.truncated,
        )
    }
}

impl RankedVocabulary {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&VocabFile::from(self))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(s)?;
        file.try_into()
    }
}

pub fn write_vocab_file(path: &Path, vocab: &RankedVocabulary) -> Result<()> {
    fsio::write_atomic(path, vocab.to_json()?.as_bytes())
}

pub fn read_vocab_file(path: &Path) -> Result<RankedVocabulary> {
    RankedVocabulary::from_json(&fsio::read_to_string(path)?)
}

/// Writes one document per line as space-separated ids.
pub fn write_token_stream(path: &Path, docs: &[SubwordString]) -> Result<()> {
    fsio::write_atomic(path, format_token_stream(docs).as_bytes())
}

pub fn format_token_stream(docs: &[SubwordString]) -> String {
    let mut out = String::new();
    for d in docs {
        let line: Vec<String> = d.iter().map(u32::to_string).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_token_stream(text: &str) -> Result<Vec<SubwordString>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            line.split_ascii_whitespace()
                .map(|t| {
                    t.parse::<SubwordId>().map_err(|e| Error::Parse {
                        line: i + 1,
                        message: format!("bad subword id {t:?}: {e}"),
                    })
                })
                .collect()
        })
        .collect()
}

pub fn read_token_stream(path: &Path) -> Result<Vec<SubwordString>> {
    parse_token_stream(&fsio::read_to_string(path)?)
}

impl Tokeniser {
    /// Sidecar map id → subword string for every id in this vocabulary.
    pub fn id_map_json(&self) -> Result<String> {
        let map: BTreeMap<SubwordId, SubwordText> = (0..self.vocab_len() as SubwordId)
            .map(|id| {
                (
                    id,
                    SubwordText::from_bytes(self.vocab().subword(id).unwrap_or_default()),
                )
            })
            .collect();
        let mut s = serde_json::to_string_pretty(&map)?;
        s.push('\n');
        Ok(s)
    }
}
