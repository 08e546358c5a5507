use std::collections::HashMap;

use super::{LanguageModel, Next, SyntheticLanguage};
use crate::error::{Error, Result};
use crate::tokeniser::{SubwordId, Tokeniser};

#[derive(Debug, Default)]
struct Node {
    mass: f64,
    end: f64,
    children: HashMap<SubwordId, usize>,
}

/// The exact subword-level distribution induced by a finite language and a
/// tokeniser, restricted to canonical tokenisations.
///
/// `p(next | context)` is the mass of support strings whose tokenisation
/// extends `context ∘ next`, divided by the mass extending `context`.
#[derive(Debug)]
pub struct PerfectOracle {
    vocab_size: usize,
    nodes: Vec<Node>,
}

/// Builds the oracle by tokenising every support string.
pub fn perfect_oracle(lang: &SyntheticLanguage, tok: &Tokeniser) -> Result<PerfectOracle> {
    if lang.len() > 10_000 {
        return Err(Error::InvalidArgument(format!(
            "support of {} strings is too large for exhaustive enumeration",
            lang.len()
        )));
    }
    let mut nodes = vec![Node::default()];
    for (s, p) in lang.support() {
        let ids = tok.tokenise(s)?;
        let mut cur = 0;
        nodes[0].mass += p;
        for id in ids {
            let next = match nodes[cur].children.get(&id) {
                Some(&n) => n,
                None => {
                    nodes.push(Node::default());
                    let n = nodes.len() - 1;
                    nodes[cur].children.insert(id, n);
                    n
                }
            };
            nodes[next].mass += p;
            cur = next;
        }
        nodes[cur].end += p;
    }
    Ok(PerfectOracle {
        vocab_size: tok.vocab_len(),
        nodes,
    })
}

impl PerfectOracle {
    fn walk(&self, context: &[SubwordId]) -> Result<&Node> {
        let mut cur = 0;
        for id in context {
            cur = *self.nodes[cur]
                .children
                .get(id)
                .ok_or(Error::ZeroMassContext)?;
        }
        let node = &self.nodes[cur];
        if node.mass <= 0.0 {
            return Err(Error::ZeroMassContext);
        }
        Ok(node)
    }
}

impl LanguageModel for PerfectOracle {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Impossible continuations of a possible context give `-inf`.
    fn logprob(&self, context: &[SubwordId], next: Next) -> Result<f64> {
        self.check_next(next)?;
        let node = self.walk(context)?;
        let mass = match next {
            Next::Eos => node.end,
            Next::Token(id) => node.children.get(&id).map_or(0.0, |&c| self.nodes[c].mass),
        };
        Ok((mass / node.mass).ln())
    }

    fn score_tokens(&self, tokens: &[SubwordId]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(tokens.len());
        let mut cur = 0usize;
        for &id in tokens {
            self.check_next(Next::Token(id))?;
            let node = &self.nodes[cur];
            if node.mass <= 0.0 {
                return Err(Error::ZeroMassContext);
            }
            match node.children.get(&id) {
                Some(&c) => {
                    out.push((self.nodes[c].mass / node.mass).ln());
                    cur = c;
                }
                None => {
                    out.push(f64::NEG_INFINITY);
                    // every later context has zero mass
                    if out.len() < tokens.len() {
                        return Err(Error::ZeroMassContext);
                    }
                }
            }
        }
        Ok(out)
    }
}
