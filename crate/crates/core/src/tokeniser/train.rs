//! Greedy sequential merge selection.
//!
//! Pair statistics are maintained incrementally: applying a merge only
//! revisits the words that contain the merged pair. Scores are raw adjacency
//! counts (`"aaa"` holds two `(a, a)` adjacencies) while merges are applied
//! left-to-right without overlap.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Alphabet, ObjectiveKind, Pretokenizer, RankedVocabulary, SubwordId, SymbolMode};
use crate::error::{Error, Result};
use crate::Execution;

type Pair = (SubwordId, SubwordId);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub objective: ObjectiveKind,
    /// Number of merges to rank (K⁺).
    pub k_plus: usize,
    pub symbols: SymbolMode,
    pub pretokenizer: Pretokenizer,
    #[serde(skip)]
    pub execution: Execution,
}

impl TrainerConfig {
    pub fn new(objective: ObjectiveKind, k_plus: usize) -> Self {
        Self {
            objective,
            k_plus,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
struct Word {
    symbols: Vec<SubwordId>,
    count: u64,
}

/// The re-tokenised training corpus `D_k` together with its pair and unit
/// counts.
#[derive(Debug, Clone)]
pub struct CorpusState {
    words: Vec<Word>,
    strings: Vec<Arc<[u8]>>,
    pair_counts: HashMap<Pair, u64>,
    unit_counts: Vec<u64>,
    pair_words: HashMap<Pair, HashSet<u32>>,
}

impl CorpusState {
    pub fn new<S: AsRef<str> + Sync>(
        corpus: &[S],
        alphabet: &Alphabet,
        pretokenizer: Pretokenizer,
        execution: Execution,
    ) -> Result<Self> {
        let symbol_ids: HashMap<&[u8], SubwordId> = alphabet
            .symbols()
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_slice(), i as SubwordId))
            .collect();

        // piece frequencies, counted per chunk and merged
        let partial = execution.map_chunks(corpus, 64, |docs| {
            let mut counts: HashMap<&str, u64> = HashMap::new();
            for d in docs {
                pretokenizer.for_each_piece(d.as_ref(), |p| *counts.entry(p).or_default() += 1);
            }
            counts
        });
        let mut piece_counts: HashMap<&str, u64> = HashMap::new();
        for part in partial {
            for (p, c) in part {
                *piece_counts.entry(p).or_default() += c;
            }
        }
        let mut pieces: Vec<(&str, u64)> = piece_counts.into_iter().collect();
        pieces.sort_unstable();
        if pieces.is_empty() {
            return Err(Error::EmptyCorpus);
        }

        let mut words = Vec::with_capacity(pieces.len());
        let mut buf = [0u8; 4];
        for (piece, count) in pieces {
            let mut symbols = Vec::with_capacity(piece.len());
            match alphabet.mode() {
                SymbolMode::Byte => symbols.extend(piece.bytes().map(SubwordId::from)),
                SymbolMode::Char => {
                    for (i, c) in piece.char_indices() {
                        let key = c.encode_utf8(&mut buf).as_bytes();
                        let id = symbol_ids.get(key).ok_or_else(|| Error::UnknownSymbol {
                            symbol: c.to_string(),
                            offset: i,
                        })?;
                        symbols.push(*id);
                    }
                }
            }
            words.push(Word { symbols, count });
        }

        let strings: Vec<Arc<[u8]>> = alphabet
            .symbols()
            .iter()
            .map(|s| Arc::from(s.as_slice()))
            .collect();
        let mut unit_counts = vec![0u64; strings.len()];
        for w in &words {
            for &s in &w.symbols {
                unit_counts[s as usize] += w.count;
            }
        }

        let partial = execution.map_chunks(&words, 256, |chunk| {
            let mut counts: HashMap<Pair, u64> = HashMap::new();
            for w in chunk {
                for p in w.symbols.windows(2) {
                    *counts.entry((p[0], p[1])).or_default() += w.count;
                }
            }
            counts
        });
        let mut pair_counts: HashMap<Pair, u64> = HashMap::new();
        for part in partial {
            for (p, c) in part {
                *pair_counts.entry(p).or_default() += c;
            }
        }
        let mut pair_words: HashMap<Pair, HashSet<u32>> = HashMap::new();
        for (i, w) in words.iter().enumerate() {
            for p in w.symbols.windows(2) {
                pair_words.entry((p[0], p[1])).or_default().insert(i as u32);
            }
        }

        Ok(Self {
            words,
            strings,
            pair_counts,
            unit_counts,
            pair_words,
        })
    }

    /// `#(⟨left, right⟩, D_k)`, counting every adjacency.
    pub fn pair_count(&self, left: SubwordId, right: SubwordId) -> u64 {
        self.pair_counts.get(&(left, right)).copied().unwrap_or(0)
    }

    /// `#(⟨unit⟩, D_k)`.
    pub fn unit_count(&self, unit: SubwordId) -> u64 {
        self.unit_counts.get(unit as usize).copied().unwrap_or(0)
    }

    /// Id of a base symbol or already-created subword.
    pub fn id_of(&self, s: &[u8]) -> Option<SubwordId> {
        self.strings
            .iter()
            .position(|t| &t[..] == s)
            .map(|i| i as SubwordId)
    }

    /// Current symbol sequences with their piece frequencies.
    pub fn words(&self) -> impl Iterator<Item = (&[SubwordId], u64)> {
        self.words.iter().map(|w| (w.symbols.as_slice(), w.count))
    }

    fn better(&self, a: (Pair, u64), b: (Pair, u64), objective: ObjectiveKind) -> bool {
        let ord = match objective {
            ObjectiveKind::BpeCount => a.1.cmp(&b.1),
            ObjectiveKind::WpPmi => {
                let lhs =
                    a.1 as u128 * self.unit_count(b.0 .0) as u128 * self.unit_count(b.0 .1) as u128;
                let rhs =
                    b.1 as u128 * self.unit_count(a.0 .0) as u128 * self.unit_count(a.0 .1) as u128;
                lhs.cmp(&rhs)
            }
        };
        ord.then_with(|| self.tie_key(a.0).cmp(&self.tie_key(b.0))) == Ordering::Greater
    }

    fn tie_key(&self, p: Pair) -> (&[u8], &[u8]) {
        (&self.strings[p.0 as usize], &self.strings[p.1 as usize])
    }

    fn score(&self, objective: ObjectiveKind, pair: Pair) -> Option<f64> {
        match objective {
            ObjectiveKind::BpeCount => Some(objective_bpe(self, pair)),
            ObjectiveKind::WpPmi => objective_wp(self, pair),
        }
    }

    /// Best eligible pair by full scan.
    fn scan_best(&self, objective: ObjectiveKind) -> Option<Pair> {
        let mut best: Option<(Pair, u64)> = None;
        for (&p, &c) in &self.pair_counts {
            if c == 0 {
                continue;
            }
            if objective == ObjectiveKind::WpPmi && self.score(objective, p).is_none() {
                continue;
            }
            if best.is_none_or(|b| self.better((p, c), b, objective)) {
                best = Some((p, c));
            }
        }
        best.map(|b| b.0)
    }

    /// Replaces every non-overlapping `(left, right)` with a new subword and
    /// updates counts. Returns the new id and the pairs whose counts changed.
    fn apply(&mut self, left: SubwordId, right: SubwordId) -> (SubwordId, Vec<Pair>) {
        let new_id = self.strings.len() as SubwordId;
        let mut s = self.strings[left as usize].to_vec();
        s.extend_from_slice(&self.strings[right as usize]);
        self.strings.push(Arc::from(s));
        self.unit_counts.push(0);

        let mut touched: Vec<u32> = self
            .pair_words
            .remove(&(left, right))
            .map(|s| s.into_iter().collect())
            .unwrap_or_default();
        touched.sort_unstable();

        let mut delta: HashMap<Pair, i64> = HashMap::new();
        for wi in touched {
            let word = &mut self.words[wi as usize];
            let merged = merge_symbols(&word.symbols, left, right, new_id);
            if merged.len() == word.symbols.len() {
                continue;
            }
            let c = word.count as i64;
            for p in word.symbols.windows(2) {
                *delta.entry((p[0], p[1])).or_default() -= c;
            }
            for p in merged.windows(2) {
                *delta.entry((p[0], p[1])).or_default() += c;
                self.pair_words.entry((p[0], p[1])).or_default().insert(wi);
            }
            // each merge removes one left, one right, adds one new unit
            let merges_applied = (word.symbols.len() - merged.len()) as u64;
            self.unit_counts[left as usize] -= merges_applied * word.count;
            self.unit_counts[right as usize] -= merges_applied * word.count;
            self.unit_counts[new_id as usize] += merges_applied * word.count;
            word.symbols = merged;
        }

        let mut changed = Vec::new();
        for (p, d) in delta {
            if d == 0 {
                continue;
            }
            let entry = self.pair_counts.entry(p).or_default();
            *entry = (*entry as i64 + d) as u64;
            if *entry == 0 {
                self.pair_counts.remove(&p);
                self.pair_words.remove(&p);
            }
            changed.push(p);
        }
        (new_id, changed)
    }
}

/// Replaces left-to-right non-overlapping occurrences of `(left, right)`.
pub(crate) fn merge_symbols(
    symbols: &[SubwordId],
    left: SubwordId,
    right: SubwordId,
    result: SubwordId,
) -> Vec<SubwordId> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(result);
            i += 2;
        } else {
            out.push(symbols[i]);
            i += 1;
        }
    }
    out
}

/// BPE objective: the adjacency count of the pair.
pub fn objective_bpe(state: &CorpusState, pair: (SubwordId, SubwordId)) -> f64 {
    state.pair_count(pair.0, pair.1) as f64
}

/// WordPiece objective: pair count over the product of unit counts. `None`
/// when either unit is absent, in which case the pair is not a candidate.
pub fn objective_wp(state: &CorpusState, pair: (SubwordId, SubwordId)) -> Option<f64> {
    let l = state.unit_count(pair.0);
    let r = state.unit_count(pair.1);
    if l == 0 || r == 0 {
        return None;
    }
    Some(state.pair_count(pair.0, pair.1) as f64 / (l as f64 * r as f64))
}

#[derive(PartialEq, Eq)]
struct HeapEntry {
    count: u64,
    left: Arc<[u8]>,
    right: Arc<[u8]>,
    pair: Pair,
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| (&self.left, &self.right).cmp(&(&other.left, &other.right)))
            .then_with(|| self.pair.cmp(&other.pair))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl CorpusState {
    fn heap_entry(&self, pair: Pair) -> Option<HeapEntry> {
        let count = self.pair_count(pair.0, pair.1);
        (count > 0).then(|| HeapEntry {
            count,
            left: self.strings[pair.0 as usize].clone(),
            right: self.strings[pair.1 as usize].clone(),
            pair,
        })
    }
}

/// Trains a ranked vocabulary of up to `config.k_plus` merges.
///
/// At every step the pair maximising the objective over the current corpus
/// is merged. Ties go to the lexicographically greatest
/// `(left string, right string)`. If the corpus runs out of pairs first, the
/// shorter list is returned with [`RankedVocabulary::is_truncated`] set.
pub fn train_ranked_vocab<S: AsRef<str> + Sync>(
    corpus: &[S],
    config: &TrainerConfig,
) -> Result<RankedVocabulary> {
    if corpus.iter().all(|d| d.as_ref().is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    let alphabet = Alphabet::from_corpus(config.symbols, corpus)?;
    train_ranked_vocab_with(corpus, alphabet, config)
}

/// [`train_ranked_vocab`] over a caller-supplied alphabet, which must cover
/// the corpus. Useful when text tokenised later has symbols the training
/// corpus lacks.
pub fn train_ranked_vocab_with<S: AsRef<str> + Sync>(
    corpus: &[S],
    alphabet: Alphabet,
    config: &TrainerConfig,
) -> Result<RankedVocabulary> {
    if corpus.iter().all(|d| d.as_ref().is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    if alphabet.mode() != config.symbols {
        return Err(Error::InvalidArgument(
            "alphabet symbol mode differs from the trainer's".into(),
        ));
    }
    let mut state = CorpusState::new(corpus, &alphabet, config.pretokenizer, config.execution)?;
    let mut merges = Vec::with_capacity(config.k_plus);

    let mut heap: BinaryHeap<HeapEntry> = match config.objective {
        ObjectiveKind::BpeCount => {
            let mut pairs: Vec<Pair> = state.pair_counts.keys().copied().collect();
            pairs.sort_unstable();
            pairs
                .into_iter()
                .filter_map(|p| state.heap_entry(p))
                .collect()
        }
        ObjectiveKind::WpPmi => BinaryHeap::new(),
    };

    let mut truncated = false;
    while merges.len() < config.k_plus {
        let best = match config.objective {
            ObjectiveKind::BpeCount => loop {
                let Some(top) = heap.pop() else { break None };
                if state.pair_count(top.pair.0, top.pair.1) == top.count {
                    break Some(top.pair);
                }
            },
            ObjectiveKind::WpPmi => state.scan_best(config.objective),
        };
        let Some(pair) = best else {
            truncated = true;
            break;
        };
        let score = state
            .score(config.objective, pair)
            .expect("selected pair has a defined score");
        let (_, changed) = state.apply(pair.0, pair.1);
        merges.push((pair.0, pair.1, score));
        if config.objective == ObjectiveKind::BpeCount {
            let mut changed = changed;
            changed.sort_unstable();
            heap.extend(changed.into_iter().filter_map(|p| state.heap_entry(p)));
        }
    }

    RankedVocabulary::from_parts(
        alphabet,
        config.objective,
        config.pretokenizer,
        merges,
        truncated,
    )
}
