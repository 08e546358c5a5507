//! Ranked bottom-up vocabularies and the tokenisers defined by truncating
//! them.
//!
//! Subword ids are dense: the alphabet occupies ids `0..|Σ|` in byte order,
//! and the result of the merge with rank `k` has id `|Σ| + k - 1`. A
//! tokeniser with cutoff `K` therefore owns exactly the ids below `|Σ| + K`.

mod encode;
mod io;
mod pretokenize;
mod train;

use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use encode::{apply_merge, truncate, Tokeniser};
pub use io::{
    format_token_stream, parse_token_stream, read_token_stream, read_vocab_file,
    write_token_stream, write_vocab_file, MergeRecord, SubwordText, VocabFile, VOCAB_FILE_VERSION,
};
pub use pretokenize::Pretokenizer;
pub use train::{
    objective_bpe, objective_wp, train_ranked_vocab, train_ranked_vocab_with, CorpusState,
    TrainerConfig,
};

pub type SubwordId = u32;

/// A sequence of subword ids.
pub type SubwordString = Vec<SubwordId>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymbolMode {
    /// Base symbols are the Unicode scalar values observed in the corpus.
    #[default]
    Char,
    /// Base symbols are all 256 byte values.
    Byte,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectiveKind {
    /// Adjacent-pair frequency.
    #[default]
    #[serde(rename = "bpe")]
    BpeCount,
    /// Pair count over the product of unit counts.
    #[serde(rename = "wp")]
    WpPmi,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokFnKind {
    /// Apply merges one at a time in rank order.
    #[default]
    #[serde(rename = "merge")]
    MergeBased,
    /// Greedy longest-prefix match against the vocabulary.
    LongestPrefix,
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectiveKind::BpeCount => "bpe",
            ObjectiveKind::WpPmi => "wp",
        })
    }
}

/// Base symbols of a vocabulary, sorted by their byte encoding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    mode: SymbolMode,
    symbols: Vec<Vec<u8>>,
}

impl Alphabet {
    pub fn new(mode: SymbolMode, mut symbols: Vec<Vec<u8>>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::InvalidVocabulary("alphabet is empty".into()));
        }
        symbols.sort();
        if symbols.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidVocabulary("alphabet has duplicates".into()));
        }
        for s in &symbols {
            let ok = match mode {
                SymbolMode::Byte => s.len() == 1,
                SymbolMode::Char => std::str::from_utf8(s).is_ok_and(|t| t.chars().count() == 1),
            };
            if !ok {
                return Err(Error::InvalidVocabulary(format!(
                    "{s:?} is not a single {mode:?} symbol"
                )));
            }
        }
        Ok(Self { mode, symbols })
    }

    /// All 256 byte values.
    pub fn bytes() -> Self {
        Self {
            mode: SymbolMode::Byte,
            symbols: (0..=255u8).map(|b| vec![b]).collect(),
        }
    }

    /// Distinct symbols observed in `corpus`, or the byte alphabet in byte mode.
    pub fn from_corpus<S: AsRef<str>>(mode: SymbolMode, corpus: &[S]) -> Result<Self> {
        match mode {
            SymbolMode::Byte => Ok(Self::bytes()),
            SymbolMode::Char => {
                let mut seen: Vec<char> = corpus.iter().flat_map(|d| d.as_ref().chars()).collect();
                seen.sort_unstable();
                seen.dedup();
                let symbols = seen
                    .into_iter()
                    .map(|c| c.to_string().into_bytes())
                    .collect();
                Self::new(mode, symbols)
            }
        }
    }

    pub fn mode(&self) -> SymbolMode {
        self.mode
    }

    pub fn symbols(&self) -> &[Vec<u8>] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// One selected merge: `left ∘ right → result`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Merge {
    pub left: SubwordId,
    pub right: SubwordId,
    pub result: SubwordId,
    /// 1-based selection order.
    pub rank: u32,
    /// Objective value when the merge was selected.
    pub score: f64,
}

/// An alphabet plus the full ordered merge list produced by training.
#[derive(Debug)]
pub struct RankedVocabulary {
    alphabet: Alphabet,
    objective: ObjectiveKind,
    pretokenizer: Pretokenizer,
    merges: Vec<Merge>,
    strings: Vec<Vec<u8>>,
    truncated: bool,
    index: OnceLock<VocabIndex>,
}

impl Clone for RankedVocabulary {
    fn clone(&self) -> Self {
        Self {
            alphabet: self.alphabet.clone(),
            objective: self.objective,
            pretokenizer: self.pretokenizer,
            merges: self.merges.clone(),
            strings: self.strings.clone(),
            truncated: self.truncated,
            index: OnceLock::new(),
        }
    }
}

impl PartialEq for RankedVocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.alphabet == other.alphabet
            && self.objective == other.objective
            && self.pretokenizer == other.pretokenizer
            && self.truncated == other.truncated
            && self.merges.len() == other.merges.len()
            && self.merges.iter().zip(&other.merges).all(|(a, b)| {
                a.left == b.left && a.right == b.right && a.score.to_bits() == b.score.to_bits()
            })
    }
}

impl RankedVocabulary {
    /// Builds a vocabulary from `(left, right, score)` triples in rank order.
    ///
    /// Result ids and ranks are assigned densely; every invariant of the id
    /// layout is checked.
    pub fn from_parts(
        alphabet: Alphabet,
        objective: ObjectiveKind,
        pretokenizer: Pretokenizer,
        merges: impl IntoIterator<Item = (SubwordId, SubwordId, f64)>,
        truncated: bool,
    ) -> Result<Self> {
        let mut strings = alphabet.symbols.clone();
        let mut seen: HashMap<Vec<u8>, SubwordId> = strings
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as SubwordId))
            .collect();
        let mut out = Vec::new();
        for (k, (left, right, score)) in merges.into_iter().enumerate() {
            let n = strings.len() as SubwordId;
            if left >= n || right >= n {
                return Err(Error::InvalidVocabulary(format!(
                    "merge {} refers to id not yet defined",
                    k + 1
                )));
            }
            let mut s = strings[left as usize].clone();
            s.extend_from_slice(&strings[right as usize]);
            if seen.insert(s.clone(), n).is_some() {
                return Err(Error::InvalidVocabulary(format!(
                    "merge {} repeats subword {:?}",
                    k + 1,
                    String::from_utf8_lossy(&s)
                )));
            }
            strings.push(s);
            out.push(Merge {
                left,
                right,
                result: n,
                rank: (k + 1) as u32,
                score,
            });
        }
        Ok(Self {
            alphabet,
            objective,
            pretokenizer,
            merges: out,
            strings,
            truncated,
            index: OnceLock::new(),
        })
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn objective(&self) -> ObjectiveKind {
        self.objective
    }

    pub fn symbol_mode(&self) -> SymbolMode {
        self.alphabet.mode
    }

    pub fn pretokenizer(&self) -> Pretokenizer {
        self.pretokenizer
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    /// K⁺, the number of ranked merges.
    pub fn num_merges(&self) -> usize {
        self.merges.len()
    }

    /// Set when training ran out of mergeable pairs before the requested size.
    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    /// Number of ids in the vocabulary with cutoff `k`.
    pub fn vocab_len_at(&self, k: usize) -> usize {
        self.alphabet.len() + k.min(self.merges.len())
    }

    /// Total number of ids (alphabet plus all merge results).
    pub fn len(&self) -> usize {
        self.strings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strings.is_empty()
    }

    pub fn subword(&self, id: SubwordId) -> Option<&[u8]> {
        self.strings.get(id as usize).map(Vec::as_slice)
    }

    pub fn id_of(&self, s: &[u8]) -> Option<SubwordId> {
        self.index().by_string.get(s).copied()
    }

    /// Selection rank of a subword; 0 for alphabet symbols.
    pub fn rank_of(&self, id: SubwordId) -> Option<usize> {
        let id = id as usize;
        if id >= self.strings.len() {
            None
        } else if id < self.alphabet.len() {
            Some(0)
        } else {
            Some(id - self.alphabet.len() + 1)
        }
    }

    /// The merge with the given 1-based rank.
    pub fn merge_at(&self, rank: usize) -> Option<&Merge> {
        rank.checked_sub(1).and_then(|i| self.merges.get(i))
    }

    /// Subword strings of the vocabulary with cutoff `k`, in id order.
    pub fn items_at(&self, k: usize) -> impl Iterator<Item = &[u8]> {
        self.strings[..self.vocab_len_at(k)]
            .iter()
            .map(Vec::as_slice)
    }

    /// Concatenates the strings of `ids`.
    pub fn detokenise(&self, ids: &[SubwordId]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            out.extend_from_slice(self.subword(id).ok_or(Error::UnknownId(id))?);
        }
        Ok(out)
    }

    /// Splits `piece` into alphabet ids. `offset` is only used for error
    /// reporting.
    pub(crate) fn segment(
        &self,
        piece: &str,
        offset: usize,
        out: &mut Vec<SubwordId>,
    ) -> Result<()> {
        match self.alphabet.mode {
            SymbolMode::Byte => out.extend(piece.bytes().map(SubwordId::from)),
            SymbolMode::Char => {
                let index = self.index();
                let mut buf = [0u8; 4];
                for (i, c) in piece.char_indices() {
                    let key = c.encode_utf8(&mut buf).as_bytes();
                    match index.by_string.get(key) {
                        Some(&id) if (id as usize) < self.alphabet.len() => out.push(id),
                        _ => {
                            return Err(Error::UnknownSymbol {
                                symbol: c.to_string(),
                                offset: offset + i,
                            })
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub(crate) fn index(&self) -> &VocabIndex {
        self.index.get_or_init(|| VocabIndex::build(self))
    }
}

/// Lookup structures shared by every truncation of a vocabulary.
#[derive(Debug)]
pub(crate) struct VocabIndex {
    pub by_string: HashMap<Vec<u8>, SubwordId>,
    /// pair → result id (result ids increase with rank)
    pub pair_result: HashMap<(SubwordId, SubwordId), SubwordId>,
    pub trie: Trie,
}

impl VocabIndex {
    fn build(v: &RankedVocabulary) -> Self {
        let by_string = v
            .strings
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as SubwordId))
            .collect();
        let pair_result = v
            .merges
            .iter()
            .map(|m| ((m.left, m.right), m.result))
            .collect();
        let mut trie = Trie::default();
        for (i, s) in v.strings.iter().enumerate() {
            trie.insert(s, i as SubwordId);
        }
        Self {
            by_string,
            pair_result,
            trie,
        }
    }
}

const NO_ID: SubwordId = SubwordId::MAX;

#[derive(Debug)]
struct TrieNode {
    children: Vec<(u8, u32)>,
    id: SubwordId,
}

#[derive(Debug)]
pub(crate) struct Trie {
    nodes: Vec<TrieNode>,
}

impl Default for Trie {
    fn default() -> Self {
        Self {
            nodes: vec![TrieNode {
                children: Vec::new(),
                id: NO_ID,
            }],
        }
    }
}

impl Trie {
    fn insert(&mut self, s: &[u8], id: SubwordId) {
        let mut node = 0usize;
        for &b in s {
            node = match self.nodes[node].children.binary_search_by_key(&b, |c| c.0) {
                Ok(i) => self.nodes[node].children[i].1 as usize,
                Err(i) => {
                    let next = self.nodes.len();
                    self.nodes.push(TrieNode {
                        children: Vec::new(),
                        id: NO_ID,
                    });
                    self.nodes[node].children.insert(i, (b, next as u32));
                    next
                }
            };
        }
        self.nodes[node].id = id;
    }

    /// Longest prefix of `s` whose id is below `limit`, as `(id, byte length)`.
    pub fn longest_prefix(&self, s: &[u8], limit: SubwordId) -> Option<(SubwordId, usize)> {
        let mut node = 0usize;
        let mut best = None;
        for (i, &b) in s.iter().enumerate() {
            match self.nodes[node].children.binary_search_by_key(&b, |c| c.0) {
                Ok(j) => node = self.nodes[node].children[j].1 as usize,
                Err(_) => break,
            }
            let id = self.nodes[node].id;
            if id != NO_ID && id < limit {
                best = Some((id, i + 1));
            }
        }
        best
    }
}
