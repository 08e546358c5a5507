//! Subword-level conditional log-probabilities.
//!
//! All values are natural-log probabilities (nats). Every contextual backend
//! normalises over the vocabulary plus an end-of-sequence event.

mod external;
mod ngram;
mod oracle;
mod synthetic;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokeniser::SubwordId;

pub use external::{load_external_logprobs, ExternalLogProbRecord, ExternalLogProbs};
pub use ngram::{train_ngram, NGramModel};
pub use oracle::{perfect_oracle, PerfectOracle};
pub use synthetic::{SyntheticLanguage, SyntheticSpec};

/// The event predicted after a context.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Next {
    Token(SubwordId),
    Eos,
}

/// A model answering `log p(next | context)` for arbitrary contexts.
pub trait LanguageModel: Send + Sync + fmt::Debug {
    /// Number of subword ids the model predicts over (EOS excluded).
    fn vocab_size(&self) -> usize;

    fn logprob(&self, context: &[SubwordId], next: Next) -> Result<f64>;

    /// Log-probabilities of every token of a document given its prefix.
    fn score_tokens(&self, tokens: &[SubwordId]) -> Result<Vec<f64>> {
        (0..tokens.len())
            .map(|t| self.logprob(&tokens[..t], Next::Token(tokens[t])))
            .collect()
    }

    fn check_next(&self, next: Next) -> Result<()> {
        match next {
            Next::Token(id) if id as usize >= self.vocab_size() => Err(Error::UnknownId(id)),
            _ => Ok(()),
        }
    }
}

/// Every token gets `1 / (|V| + 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UniformModel {
    vocab_size: usize,
}

impl UniformModel {
    pub fn new(vocab_size: usize) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::InvalidArgument(
                "vocabulary size must be positive".into(),
            ));
        }
        Ok(Self { vocab_size })
    }
}

impl LanguageModel for UniformModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn logprob(&self, _context: &[SubwordId], next: Next) -> Result<f64> {
        self.check_next(next)?;
        Ok(-((self.vocab_size + 1) as f64).ln())
    }

    fn score_tokens(&self, tokens: &[SubwordId]) -> Result<Vec<f64>> {
        let lp = -((self.vocab_size + 1) as f64).ln();
        tokens
            .iter()
            .map(|&id| self.check_next(Next::Token(id)).map(|_| lp))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Uniform,
    Ngram,
    Perfect,
    External,
    Custom,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Uniform => "uniform",
            BackendKind::Ngram => "ngram",
            BackendKind::Perfect => "perfect",
            BackendKind::External => "external",
            BackendKind::Custom => "custom",
        })
    }
}

/// Any of the supported log-probability sources.
#[derive(Clone, Debug)]
pub enum ModelBackend {
    Uniform(UniformModel),
    NGram(Arc<NGramModel>),
    Perfect(Arc<PerfectOracle>),
    /// Precomputed per-position log-probs; answers only positional lookups.
    External(Arc<ExternalLogProbs>),
    Custom(Arc<dyn LanguageModel>),
}

impl ModelBackend {
    pub fn kind(&self) -> BackendKind {
        match self {
            ModelBackend::Uniform(_) => BackendKind::Uniform,
            ModelBackend::NGram(_) => BackendKind::Ngram,
            ModelBackend::Perfect(_) => BackendKind::Perfect,
            ModelBackend::External(_) => BackendKind::External,
            ModelBackend::Custom(_) => BackendKind::Custom,
        }
    }

    fn contextual(&self) -> Option<&dyn LanguageModel> {
        match self {
            ModelBackend::Uniform(m) => Some(m),
            ModelBackend::NGram(m) => Some(m.as_ref()),
            ModelBackend::Perfect(m) => Some(m.as_ref()),
            ModelBackend::Custom(m) => Some(m.as_ref()),
            ModelBackend::External(_) => None,
        }
    }

    pub fn vocab_size(&self) -> Option<usize> {
        self.contextual().map(LanguageModel::vocab_size)
    }

    /// `log p(next | context)`. External backends cannot answer this.
    pub fn logprob(&self, context: &[SubwordId], next: Next) -> Result<f64> {
        match self.contextual() {
            Some(m) => m.logprob(context, next),
            None => Err(Error::ContextQueryUnsupported("external")),
        }
    }

    /// Per-token log-probabilities for document `doc` of the evaluation
    /// corpus, each conditioned on all earlier tokens of the document.
    pub fn score_document(&self, doc: usize, tokens: &[SubwordId]) -> Result<Vec<f64>> {
        match self {
            ModelBackend::External(ext) => ext.score_document(doc as u64, tokens),
            _ => self
                .contextual()
                .expect("contextual backend")
                .score_tokens(tokens),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_257() {
        let m = UniformModel::new(256).unwrap();
        let lp = m.logprob(&[1, 2, 3], Next::Token(7)).unwrap();
        assert!((lp - (1.0f64 / 257.0).ln()).abs() < 1e-15);
        assert!((lp + 5.549).abs() < 1e-3);
        assert_eq!(m.logprob(&[], Next::Eos).unwrap(), lp);
        assert!(matches!(
            m.logprob(&[], Next::Token(256)),
            Err(Error::UnknownId(256))
        ));
        let total: f64 = (0..256)
            .map(|i| m.logprob(&[], Next::Token(i)).unwrap().exp())
            .sum::<f64>()
            + m.logprob(&[], Next::Eos).unwrap().exp();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn external_refuses_context_queries() {
        let ext = ExternalLogProbs::parse("").unwrap();
        let b = ModelBackend::External(Arc::new(ext));
        assert!(matches!(
            b.logprob(&[], Next::Eos),
            Err(Error::ContextQueryUnsupported(_))
        ));
        assert_eq!(b.kind(), BackendKind::External);
        assert_eq!(b.vocab_size(), None);
    }
}
