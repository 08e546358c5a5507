use std::sync::Arc;

use super::train::merge_symbols;
use super::{Merge, RankedVocabulary, SubwordId, SubwordString, TokFnKind};
use crate::error::{Error, Result};

/// Applies one merge to a subword string: a single left-to-right pass that
/// replaces each non-overlapping `(left, right)` by `result`.
pub fn apply_merge(s: &[SubwordId], m: &Merge) -> SubwordString {
    merge_symbols(s, m.left, m.right, m.result)
}

/// A tokeniser whose vocabulary is the alphabet plus the first `cutoff`
/// merges of a ranked vocabulary. Cheap to clone and safe to share.
#[derive(Clone, Debug)]
pub struct Tokeniser {
    vocab: Arc<RankedVocabulary>,
    cutoff: usize,
    kind: TokFnKind,
}

/// Truncates `vocab` to its first `cutoff` merges.
pub fn truncate(
    vocab: &Arc<RankedVocabulary>,
    cutoff: usize,
    kind: TokFnKind,
) -> Result<Tokeniser> {
    Tokeniser::new(Arc::clone(vocab), cutoff, kind)
}

impl Tokeniser {
    pub fn new(vocab: Arc<RankedVocabulary>, cutoff: usize, kind: TokFnKind) -> Result<Self> {
        if cutoff > vocab.num_merges() {
            return Err(Error::CutoffOutOfRange {
                cutoff,
                available: vocab.num_merges(),
            });
        }
        Ok(Self {
            vocab,
            cutoff,
            kind,
        })
    }

    pub fn vocab(&self) -> &Arc<RankedVocabulary> {
        &self.vocab
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn kind(&self) -> TokFnKind {
        self.kind
    }

    /// |V|: alphabet plus `cutoff` merge results. Ids below this are in the
    /// vocabulary.
    pub fn vocab_len(&self) -> usize {
        self.vocab.vocab_len_at(self.cutoff)
    }

    pub fn contains(&self, id: SubwordId) -> bool {
        (id as usize) < self.vocab_len()
    }

    /// Tokenises a document with this tokeniser's function.
    pub fn tokenise(&self, text: &str) -> Result<SubwordString> {
        match self.kind {
            TokFnKind::MergeBased => self.tokenise_merge(text),
            TokFnKind::LongestPrefix => self.tokenise_longest_prefix(text),
        }
    }

    /// Merge-based tokenisation: merges `1..=cutoff` applied in rank order to
    /// each pre-tokenised piece.
    pub fn tokenise_merge(&self, text: &str) -> Result<SubwordString> {
        let mut out = Vec::with_capacity(text.len());
        let mut offset = 0;
        let mut result = Ok(());
        self.vocab.pretokenizer().for_each_piece(text, |piece| {
            if result.is_ok() {
                result = self.merge_piece(piece, offset, &mut out);
            }
            offset += piece.len();
        });
        result.map(|_| out)
    }

    fn merge_piece(&self, piece: &str, offset: usize, out: &mut Vec<SubwordId>) -> Result<()> {
        let mut symbols = Vec::with_capacity(piece.len());
        self.vocab.segment(piece, offset, &mut symbols)?;
        let index = self.vocab.index();
        let limit = self.vocab_len() as SubwordId;
        // The lowest-ranked applicable merge is always the next one in the
        // fold: merges ranked earlier cannot reappear once absent.
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| index.pair_result.get(&(w[0], w[1])).copied())
                .filter(|&r| r < limit)
                .min();
            let Some(result) = best else { break };
            let m = self.vocab.merges()[result as usize - self.vocab.alphabet().len()];
            symbols = apply_merge(&symbols, &m);
        }
        out.extend_from_slice(&symbols);
        Ok(())
    }

    /// Longest-prefix tokenisation of each pre-tokenised piece.
    pub fn tokenise_longest_prefix(&self, text: &str) -> Result<SubwordString> {
        let index = self.vocab.index();
        let limit = self.vocab_len() as SubwordId;
        let mut out = Vec::with_capacity(text.len());
        let mut offset = 0;
        let mut result = Ok(());
        self.vocab.pretokenizer().for_each_piece(text, |piece| {
            if result.is_err() {
                return;
            }
            let bytes = piece.as_bytes();
            let mut i = 0;
            while i < bytes.len() {
                match index.trie.longest_prefix(&bytes[i..], limit) {
                    Some((id, len)) => {
                        out.push(id);
                        i += len;
                    }
                    None => {
                        let rest = &piece[i..];
                        result = Err(Error::UnknownSymbol {
                            symbol: rest.chars().next().map(String::from).unwrap_or_default(),
                            offset: offset + i,
                        });
                        return;
                    }
                }
            }
            offset += piece.len();
        });
        result.map(|_| out)
    }

    /// Concatenates subword strings; ids outside this vocabulary are errors.
    pub fn detokenise(&self, ids: &[SubwordId]) -> Result<Vec<u8>> {
        if let Some(&bad) = ids.iter().find(|&&id| !self.contains(id)) {
            return Err(Error::UnknownId(bad));
        }
        self.vocab.detokenise(ids)
    }

    /// [`Tokeniser::detokenise`] decoded as UTF-8.
    pub fn detokenise_string(&self, ids: &[SubwordId]) -> Result<String> {
        let bytes = self.detokenise(ids)?;
        String::from_utf8(bytes)
            .map_err(|e| Error::InvalidArgument(format!("detokenised bytes are not UTF-8: {e}")))
    }

    /// Byte length of a subword.
    pub fn subword_len(&self, id: SubwordId) -> usize {
        self.vocab.subword(id).map_or(0, <[u8]>::len)
    }
}
