use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;
use crate::tokeniser::SubwordId;

/// One line of an external log-prob file.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalLogProbRecord {
    pub doc: u64,
    pub pos: u64,
    pub id: SubwordId,
    /// Natural-log probability, at most 0.
    pub lp: f64,
}

/// Log-probabilities produced elsewhere, keyed by (document, token position)
/// of the evaluation token streams.
#[derive(Debug, Default, Clone)]
pub struct ExternalLogProbs {
    records: HashMap<(u64, u64), (SubwordId, f64)>,
}

pub fn load_external_logprobs(path: &Path) -> Result<ExternalLogProbs> {
    ExternalLogProbs::parse(&fsio::read_to_string(path)?)
}

impl ExternalLogProbs {
    /// Parses JSON lines `{"doc":…,"pos":…,"id":…,"lp":…}` sorted by
    /// `(doc, pos)` with no repeated key.
    pub fn parse(text: &str) -> Result<Self> {
        let mut records = HashMap::new();
        let mut last: Option<(u64, u64)> = None;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let r: ExternalLogProbRecord =
                serde_json::from_str(line).map_err(|e| Error::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?;
            if r.lp.is_nan() || r.lp > 0.0 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("log-probability {} is positive or NaN", r.lp),
                });
            }
            let key = (r.doc, r.pos);
            if let Some(prev) = last {
                if key == prev {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("duplicate record for doc {} pos {}", r.doc, r.pos),
                    });
                }
                if key < prev {
                    return Err(Error::Parse {
                        line: line_no,
                        message: "records are not sorted by (doc, pos)".into(),
                    });
                }
            }
            last = Some(key);
            records.insert(key, (r.id, r.lp));
        }
        Ok(Self { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn lookup(&self, doc: u64, pos: u64) -> Result<f64> {
        self.records
            .get(&(doc, pos))
            .map(|r| r.1)
            .ok_or(Error::MissingLogProb { doc, pos })
    }

    /// Per-token log-probs for a document, checking that ids line up.
    pub fn score_document(&self, doc: u64, tokens: &[SubwordId]) -> Result<Vec<f64>> {
        tokens
            .iter()
            .enumerate()
            .map(|(pos, &id)| {
                let pos = pos as u64;
                let &(found, lp) = self
                    .records
                    .get(&(doc, pos))
                    .ok_or(Error::MissingLogProb { doc, pos })?;
                if found != id {
                    return Err(Error::MisalignedLogProb {
                        doc,
                        pos,
                        expected: id,
                        found,
                    });
                }
                Ok(lp)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file() {
        let e = ExternalLogProbs::parse("").unwrap();
        assert!(e.is_empty());
        assert!(matches!(e.lookup(0, 0), Err(Error::MissingLogProb { .. })));
    }

    #[test]
    fn single_record() {
        let e = ExternalLogProbs::parse(r#"{"doc": 0, "pos": 0, "id": 3, "lp": -1.5}"#).unwrap();
        assert_eq!(e.lookup(0, 0).unwrap(), -1.5);
        assert_eq!(e.score_document(0, &[3]).unwrap(), vec![-1.5]);
        assert!(matches!(
            e.score_document(0, &[4]),
            Err(Error::MisalignedLogProb { .. })
        ));
    }

    #[test]
    fn rejects_bad_input() {
        let dup =
            "{\"doc\":0,\"pos\":1,\"id\":1,\"lp\":-1}\n{\"doc\":0,\"pos\":1,\"id\":1,\"lp\":-2}\n";
        assert!(matches!(
            ExternalLogProbs::parse(dup),
            Err(Error::Parse { line: 2, .. })
        ));
        let unsorted =
            "{\"doc\":1,\"pos\":0,\"id\":1,\"lp\":-1}\n{\"doc\":0,\"pos\":5,\"id\":1,\"lp\":-2}\n";
        assert!(matches!(
            ExternalLogProbs::parse(unsorted),
            Err(Error::Parse { line: 2, .. })
        ));
        let malformed = "{\"doc\":0,\"pos\":0,\"id\":1,\"lp\":-1}\n{\"doc\":0\n";
        assert!(matches!(
            ExternalLogProbs::parse(malformed),
            Err(Error::Parse { line: 2, .. })
        ));
        let positive = "{\"doc\":0,\"pos\":0,\"id\":1,\"lp\":0.5}\n";
        assert!(matches!(
            ExternalLogProbs::parse(positive),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
