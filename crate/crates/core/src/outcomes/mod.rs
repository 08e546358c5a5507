//! Per-subword outcomes: where a candidate's characters occur in evaluation
//! text and how much log-probability the model gives them there.

mod io;
mod stats;

use aho_corasick::AhoCorasick;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::ModelBackend;
use crate::tokeniser::{RankedVocabulary, SubwordId, SubwordString, Tokeniser};
use crate::Execution;

pub use io::{outcomes_csv, parse_outcomes_csv, read_outcomes_csv, write_outcomes_csv, OutcomeRow};
pub use stats::{aggregate, Aggregates, OutcomeStat};

/// A subword near the cutoff together with its treatment status.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSubword {
    pub id: SubwordId,
    pub chars: Vec<u8>,
    /// Merge rank, 1-based.
    pub rank: usize,
    /// In the vocabulary at the cutoff, i.e. `rank <= cutoff`.
    pub treated: bool,
}

impl CandidateSubword {
    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.chars).into_owned()
    }
}

/// Candidates with ranks `cutoff - window + 1 ..= cutoff + window`.
pub fn enumerate_candidates(
    vocab: &RankedVocabulary,
    cutoff: usize,
    window: usize,
) -> Result<Vec<CandidateSubword>> {
    let (lo, hi) = window_ranks(vocab.num_merges(), cutoff, window)?;
    Ok((lo..=hi)
        .map(|rank| {
            let m = vocab
                .merge_at(rank)
                .expect("rank checked against merge count");
            CandidateSubword {
                id: m.result,
                chars: vocab
                    .subword(m.result)
                    .expect("merge result exists")
                    .to_vec(),
                rank,
                treated: rank <= cutoff,
            }
        })
        .collect())
}

/// Validates a window and returns its inclusive rank range.
pub fn window_ranks(available: usize, cutoff: usize, window: usize) -> Result<(usize, usize)> {
    if window == 0 {
        return Err(Error::InvalidArgument("window must be positive".into()));
    }
    let lo = cutoff as i64 - window as i64 + 1;
    let hi = cutoff + window;
    if lo < 1 || hi > available {
        return Err(Error::InfeasibleWindow {
            cutoff,
            window,
            lo,
            hi,
            available,
        });
    }
    Ok((lo as usize, hi))
}

/// Drops candidates whose characters are a proper substring of some item in
/// `vocabulary`. A candidate is never excluded by an identical item.
pub fn exclude_nested<I, S>(
    candidates: Vec<CandidateSubword>,
    vocabulary: I,
) -> Vec<CandidateSubword>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    if candidates.is_empty() {
        return candidates;
    }
    let ac =
        AhoCorasick::new(candidates.iter().map(|c| c.chars.as_slice())).expect("automaton builds");
    let mut nested = vec![false; candidates.len()];
    for item in vocabulary {
        let item = item.as_ref();
        for m in ac.find_overlapping_iter(item) {
            if m.len() < item.len() {
                nested[m.pattern().as_usize()] = true;
            }
        }
    }
    candidates
        .into_iter()
        .zip(nested)
        .filter_map(|(c, n)| (!n).then_some(c))
        .collect()
}

/// One accepted occurrence of a candidate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccurrenceSample {
    pub doc: usize,
    /// Byte offset of the occurrence in the document.
    pub char_offset: usize,
    /// First token of the span and its length in tokens.
    pub token_start: usize,
    pub token_len: usize,
    pub logprob: f64,
}

/// A candidate's outcome samples and their aggregates.
#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeRecord {
    pub candidate: CandidateSubword,
    pub samples: Vec<OccurrenceSample>,
    pub aggregates: Aggregates,
    /// Occurrences whose characters did not line up with the document's
    /// tokenisation.
    pub n_dropped_mismatch: usize,
}

impl OutcomeRecord {
    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn row(&self) -> OutcomeRow {
        OutcomeRow {
            rank: self.candidate.rank,
            subword: self.candidate.text(),
            treated: self.candidate.treated,
            n_samples: self.samples.len(),
            mean: self.aggregates.mean,
            std: self.aggregates.std,
            median: self.aggregates.median,
            iqr: self.aggregates.iqr,
            n_dropped_mismatch: self.n_dropped_mismatch,
        }
    }
}

/// Why a candidate produced no outcome record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    TooFewOccurrences,
    NotUtf8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroppedCandidate {
    pub candidate: CandidateSubword,
    pub reason: DropReason,
    pub n_samples: usize,
    pub n_dropped_mismatch: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcomes {
    /// Ordered by rank.
    pub records: Vec<OutcomeRecord>,
    pub dropped: Vec<DroppedCandidate>,
}

impl Outcomes {
    pub fn rows(&self) -> Vec<OutcomeRow> {
        self.records.iter().map(OutcomeRecord::row).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectOptions {
    /// Candidates with fewer accepted occurrences are dropped.
    pub min_occurrences: usize,
    /// Keep occurrences at the very start of a document (empty context).
    pub include_doc_start: bool,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for CollectOptions {
    fn default() -> Self {
        Self {
            min_occurrences: 5,
            include_doc_start: true,
            execution: Execution::default(),
        }
    }
}

#[derive(Default)]
struct DocFindings {
    samples: Vec<(usize, OccurrenceSample)>,
    mismatches: Vec<usize>,
}

/// Finds every occurrence of every candidate in `docs` and scores it.
///
/// An occurrence is kept when its byte range starts and ends on token
/// boundaries of the document's tokenisation and the tokens in between are
/// exactly the candidate's own tokenisation. Its log-probability is the sum
/// of the span's token log-probs, each conditioned on every earlier token of
/// the document. Overlapping occurrences all count.
pub fn collect_outcomes<S: AsRef<str> + Sync>(
    docs: &[S],
    tok: &Tokeniser,
    backend: &ModelBackend,
    candidates: &[CandidateSubword],
    options: &CollectOptions,
) -> Result<Outcomes> {
    if let Some(v) = backend.vocab_size() {
        if v != tok.vocab_len() {
            return Err(Error::InvalidArgument(format!(
                "{} backend predicts over {v} subwords but the tokeniser has {}",
                backend.kind(),
                tok.vocab_len()
            )));
        }
    }

    let mut dropped = Vec::new();
    let mut active = Vec::new();
    let mut canonical = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        match std::str::from_utf8(&c.chars) {
            Ok(s) => {
                canonical.push(tok.tokenise(s)?);
                active.push(i);
            }
            Err(_) => dropped.push(DroppedCandidate {
                candidate: c.clone(),
                reason: DropReason::NotUtf8,
                n_samples: 0,
                n_dropped_mismatch: 0,
            }),
        }
    }
    let ac = AhoCorasick::new(active.iter().map(|&i| candidates[i].chars.as_slice()))
        .expect("automaton builds");

    let per_doc = options.execution.map_indexed(docs, |doc, text| {
        scan_document(doc, text.as_ref(), tok, backend, &ac, &canonical, options)
            .map_err(|e| e.in_document(doc))
    });

    let mut samples: Vec<Vec<OccurrenceSample>> = vec![Vec::new(); active.len()];
    let mut mismatches = vec![0usize; active.len()];
    for findings in per_doc {
        let findings = findings?;
        for (k, s) in findings.samples {
            samples[k].push(s);
        }
        for k in findings.mismatches {
            mismatches[k] += 1;
        }
    }

    let mut records = Vec::new();
    for ((k, samples), n_dropped_mismatch) in samples.into_iter().enumerate().zip(mismatches) {
        let candidate = candidates[active[k]].clone();
        if samples.is_empty() || samples.len() < options.min_occurrences {
            dropped.push(DroppedCandidate {
                candidate,
                reason: DropReason::TooFewOccurrences,
                n_samples: samples.len(),
                n_dropped_mismatch,
            });
            continue;
        }
        let lps: Vec<f64> = samples.iter().map(|s| s.logprob).collect();
        records.push(OutcomeRecord {
            aggregates: Aggregates::of(&lps)?,
            candidate,
            samples,
            n_dropped_mismatch,
        });
    }
    records.sort_by_key(|r| r.candidate.rank);
    dropped.sort_by_key(|d| d.candidate.rank);
    Ok(Outcomes { records, dropped })
}

fn scan_document(
    doc: usize,
    text: &str,
    tok: &Tokeniser,
    backend: &ModelBackend,
    ac: &AhoCorasick,
    canonical: &[SubwordString],
    options: &CollectOptions,
) -> Result<DocFindings> {
    let mut findings = DocFindings::default();
    let tokens = tok.tokenise(text)?;
    let mut bounds = Vec::with_capacity(tokens.len() + 1);
    bounds.push(0);
    for &id in &tokens {
        bounds.push(bounds.last().unwrap() + tok.subword_len(id));
    }

    let mut spans = Vec::new();
    for m in ac.find_overlapping_iter(text.as_bytes()) {
        let k = m.pattern().as_usize();
        let aligned = match (
            bounds.binary_search(&m.start()),
            bounds.binary_search(&m.end()),
        ) {
            (Ok(a), Ok(b)) if tokens[a..b] == canonical[k][..] => Some(a),
            _ => None,
        };
        match aligned {
            None => findings.mismatches.push(k),
            Some(0) if !options.include_doc_start => {}
            Some(a) => spans.push((k, m.start(), a, canonical[k].len())),
        }
    }
    if spans.is_empty() {
        return Ok(findings);
    }

    let lps = backend.score_document(doc, &tokens)?;
    for (k, char_offset, token_start, token_len) in spans {
        let logprob: f64 = lps[token_start..token_start + token_len].iter().sum();
        if !logprob.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "model gives zero probability to the span at byte {char_offset}"
            )));
        }
        findings.samples.push((
            k,
            OccurrenceSample {
                doc,
                char_offset,
                token_start,
                token_len,
                logprob,
            },
        ));
    }
    Ok(findings)
}

/// Vocabulary used to decide nesting for a window: every item with rank at
/// most `cutoff + window`.
pub fn nesting_vocabulary(vocab: &RankedVocabulary, cutoff: usize, window: usize) -> Vec<&[u8]> {
    vocab
        .items_at((cutoff + window).min(vocab.num_merges()))
        .collect()
}
