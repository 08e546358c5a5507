use std::collections::HashMap;

use super::{LanguageModel, Next};
use crate::error::{Error, Result};
use crate::tokeniser::{SubwordId, SubwordString};
use crate::Execution;

const BOS: SubwordId = SubwordId::MAX;

#[derive(Debug, Default, Clone)]
struct ContextCounts {
    total: u64,
    next: HashMap<SubwordId, u64>,
}

/// Add-α smoothed n-gram model over subword ids. Contexts shorter than
/// `order - 1` are left-padded with a begin-of-document marker, and one EOS
/// is counted per document.
#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    alpha: f64,
    vocab_size: usize,
    tables: HashMap<Box<[SubwordId]>, ContextCounts>,
}

/// Counts n-grams of `order` over `docs`.
pub fn train_ngram(
    docs: &[SubwordString],
    vocab_size: usize,
    order: usize,
    alpha: f64,
    execution: Execution,
) -> Result<NGramModel> {
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if order == 0 {
        return Err(Error::InvalidArgument(
            "n-gram order must be at least 1".into(),
        ));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "smoothing alpha must be positive, got {alpha}"
        )));
    }
    if vocab_size == 0 {
        return Err(Error::InvalidArgument(
            "vocabulary size must be positive".into(),
        ));
    }
    if let Some(&bad) = docs.iter().flatten().find(|&&id| id as usize >= vocab_size) {
        return Err(Error::UnknownId(bad));
    }
    let eos = vocab_size as SubwordId;
    let partial = execution.map_chunks(docs, 32, |chunk| {
        let mut tables: HashMap<Box<[SubwordId]>, ContextCounts> = HashMap::new();
        let mut ctx = Vec::with_capacity(order);
        for doc in chunk {
            for t in 0..=doc.len() {
                context_key(&doc[..t], order, &mut ctx);
                let next = doc.get(t).copied().unwrap_or(eos);
                let entry = match tables.get_mut(ctx.as_slice()) {
                    Some(e) => e,
                    None => tables.entry(ctx.clone().into_boxed_slice()).or_default(),
                };
                entry.total += 1;
                *entry.next.entry(next).or_default() += 1;
            }
        }
        tables
    });
    let mut tables: HashMap<Box<[SubwordId]>, ContextCounts> = HashMap::new();
    for part in partial {
        for (k, v) in part {
            let e = tables.entry(k).or_default();
            e.total += v.total;
            for (n, c) in v.next {
                *e.next.entry(n).or_default() += c;
            }
        }
    }
    Ok(NGramModel {
        order,
        alpha,
        vocab_size,
        tables,
    })
}

fn context_key(prefix: &[SubwordId], order: usize, out: &mut Vec<SubwordId>) {
    out.clear();
    let n = order - 1;
    let take = prefix.len().min(n);
    out.extend(std::iter::repeat_n(BOS, n - take));
    out.extend_from_slice(&prefix[prefix.len() - take..]);
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Raw `(count(context, next), count(context))` for the last `order - 1`
    /// tokens of `context`.
    pub fn counts(&self, context: &[SubwordId], next: Next) -> (u64, u64) {
        let mut key = Vec::with_capacity(self.order);
        context_key(context, self.order, &mut key);
        self.lookup(&key, next)
    }

    fn lookup(&self, key: &[SubwordId], next: Next) -> (u64, u64) {
        let id = match next {
            Next::Token(id) => id,
            Next::Eos => self.vocab_size as SubwordId,
        };
        match self.tables.get(key) {
            Some(e) => (e.next.get(&id).copied().unwrap_or(0), e.total),
            None => (0, 0),
        }
    }

    fn smoothed(&self, c: u64, total: u64) -> f64 {
        let events = (self.vocab_size + 1) as f64;
        ((c as f64 + self.alpha) / (total as f64 + self.alpha * events)).ln()
    }
}

impl LanguageModel for NGramModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn logprob(&self, context: &[SubwordId], next: Next) -> Result<f64> {
        self.check_next(next)?;
        let (c, total) = self.counts(context, next);
        Ok(self.smoothed(c, total))
    }

    fn score_tokens(&self, tokens: &[SubwordId]) -> Result<Vec<f64>> {
        let mut key = Vec::with_capacity(self.order);
        let mut out = Vec::with_capacity(tokens.len());
        for t in 0..tokens.len() {
            self.check_next(Next::Token(tokens[t]))?;
            context_key(&tokens[..t], self.order, &mut key);
            let (c, total) = self.lookup(&key, Next::Token(tokens[t]));
            out.push(self.smoothed(c, total));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bigram_by_hand() {
        // a=0 b=1; ⟨a,b,a,b⟩: a→b twice, so count(a)=2
        let m = train_ngram(&[vec![0, 1, 0, 1]], 2, 2, 1.0, Execution::Sequential).unwrap();
        let lp = m.logprob(&[0], Next::Token(1)).unwrap();
        assert!((lp - (3.0f64 / 5.0).ln()).abs() < 1e-15);
        assert_eq!(m.counts(&[0], Next::Token(1)), (2, 2));
        // b is followed by a once and EOS once
        assert_eq!(m.counts(&[1], Next::Eos), (1, 2));
    }

    #[test]
    fn unigram_by_hand() {
        let m = train_ngram(&[vec![0]], 1, 1, 1.0, Execution::Sequential).unwrap();
        let pa = m.logprob(&[], Next::Token(0)).unwrap().exp();
        let pe = m.logprob(&[], Next::Eos).unwrap().exp();
        assert!((pa - 0.5).abs() < 1e-15);
        assert!((pe - 0.5).abs() < 1e-15);
    }

    #[test]
    fn heavy_smoothing_is_nearly_uniform() {
        let docs: Vec<Vec<u32>> = (0..50).map(|i| vec![i % 7, (i * 3) % 7, 2]).collect();
        let m = train_ngram(&docs, 7, 1, 1e9, Execution::Sequential).unwrap();
        for id in 0..7 {
            let p = m.logprob(&[], Next::Token(id)).unwrap().exp();
            assert!((p - 1.0 / 8.0).abs() < 1e-6);
        }
    }

    #[test]
    fn retraining_is_deterministic() {
        let docs: Vec<Vec<u32>> = (0..200)
            .map(|i| vec![i % 5, (i * 7) % 5, (i * 11) % 5])
            .collect();
        let a = train_ngram(&docs, 5, 3, 0.1, Execution::Sequential).unwrap();
        let b = train_ngram(&docs, 5, 3, 0.1, Execution::Parallel).unwrap();
        for ctx in [vec![], vec![1], vec![2, 3], vec![4, 4, 4]] {
            for n in 0..5 {
                assert_eq!(
                    a.logprob(&ctx, Next::Token(n)).unwrap().to_bits(),
                    b.logprob(&ctx, Next::Token(n)).unwrap().to_bits()
                );
            }
        }
    }

    #[test]
    fn argument_errors() {
        assert!(matches!(
            train_ngram(&[], 2, 2, 1.0, Execution::Sequential),
            Err(Error::EmptyCorpus)
        ));
        assert!(train_ngram(&[vec![0]], 2, 0, 1.0, Execution::Sequential).is_err());
        assert!(train_ngram(&[vec![0]], 2, 2, 0.0, Execution::Sequential).is_err());
        assert!(matches!(
            train_ngram(&[vec![5]], 2, 2, 1.0, Execution::Sequential),
            Err(Error::UnknownId(5))
        ));
    }

    #[test]
    fn score_tokens_matches_logprob() {
        let docs = vec![vec![0, 1, 2, 1, 0], vec![2, 2, 1]];
        let m = train_ngram(&docs, 3, 3, 0.1, Execution::Sequential).unwrap();
        let toks = [1, 0, 2, 2, 1];
        let fast = m.score_tokens(&toks).unwrap();
        for t in 0..toks.len() {
            assert_eq!(
                fast[t],
                m.logprob(&toks[..t], Next::Token(toks[t])).unwrap()
            );
        }
    }
}
