use std::collections::HashSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite distribution over character strings.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticLanguage {
    support: Vec<(String, f64)>,
}

impl SyntheticLanguage {
    /// Probabilities must be positive and sum to one (within 1e-9); strings
    /// must be distinct.
    pub fn new(support: Vec<(String, f64)>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::InvalidArgument("language has empty support".into()));
        }
        let mut seen = HashSet::new();
        for (s, p) in &support {
            if !(*p > 0.0 && p.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "probability of {s:?} is {p}"
                )));
            }
            if !seen.insert(s.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate string {s:?}")));
            }
        }
        let total: f64 = support.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "probabilities sum to {total}"
            )));
        }
        Ok(Self { support })
    }

    /// Parses `probability<TAB>string` lines.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut support = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (p, s) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: "expected probability<TAB>string".into(),
            })?;
            let p: f64 = p.trim().parse().map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("bad probability: {e}"),
            })?;
            support.push((s.to_string(), p));
        }
        Self::new(support)
    }

    pub fn support(&self) -> &[(String, f64)] {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn prob(&self, s: &str) -> f64 {
        self.support
            .iter()
            .find(|(t, _)| t == s)
            .map_or(0.0, |(_, p)| *p)
    }

    /// Draws `n` independent strings.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<String> {
        let dist =
            WeightedIndex::new(self.support.iter().map(|(_, p)| *p)).expect("positive weights");
        (0..n)
            .map(|_| self.support[dist.sample(rng)].0.clone())
            .collect()
    }

    /// Random multi-word language with Zipfian string probabilities.
    pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<Self> {
        if spec.n_strings == 0 || spec.lexicon_size == 0 || spec.max_words == 0 {
            return Err(Error::InvalidArgument(
                "synthetic language needs positive sizes".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        const ONSETS: &[&str] = &[
            "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "st", "tr",
        ];
        const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
        let mut lexicon = Vec::new();
        let mut seen_words = HashSet::new();
        let mut attempts = 0;
        while lexicon.len() < spec.lexicon_size {
            attempts += 1;
            if attempts > 100 * spec.lexicon_size {
                return Err(Error::InvalidArgument(
                    "cannot draw enough distinct words".into(),
                ));
            }
            let syllables = rng.gen_range(1..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
                w.push_str(VOWELS[rng.gen_range(0..VOWELS.len())]);
            }
            if seen_words.insert(w.clone()) {
                lexicon.push(w);
            }
        }
        // words themselves are Zipfian so that frequent subwords emerge
        let word_dist =
            WeightedIndex::new((1..=lexicon.len()).map(|r| 1.0 / r as f64)).expect("weights");
        let mut strings = Vec::new();
        let mut seen = HashSet::new();
        attempts = 0;
        while strings.len() < spec.n_strings {
            attempts += 1;
            if attempts > 1000 * spec.n_strings {
                return Err(Error::InvalidArgument(
                    "cannot draw enough distinct strings".into(),
                ));
            }
            let n = rng.gen_range(1..=spec.max_words);
            let words: Vec<&str> = (0..n)
                .map(|_| lexicon[word_dist.sample(&mut rng)].as_str())
                .collect();
            let s = words.join(" ");
            if seen.insert(s.clone()) {
                strings.push(s);
            }
        }
        let weights: Vec<f64> = (1..=strings.len())
            .map(|r| (r as f64).powf(-spec.zipf_exponent))
            .collect();
        let total: f64 = weights.iter().sum();
        let support = strings
            .into_iter()
            .zip(weights)
            .map(|(s, w)| (s, w / total))
            .collect();
        Self::new(support)
    }
}

/// Parameters of [`SyntheticLanguage::generate`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_strings: usize,
    pub lexicon_size: usize,
    pub max_words: usize,
    pub zipf_exponent: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_strings: 400,
            lexicon_size: 120,
            max_words: 4,
            zipf_exponent: 1.0,
        }
    }
}
