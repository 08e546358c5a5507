//! Naive reference implementations used as test oracles. They work on
//! strings rather than ids and recount everything at every step.

use std::collections::BTreeMap;

/// Splits before each whitespace run that follows a non-whitespace char.
pub fn split_leading_space(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut cur = String::new();
    let mut prev: Option<bool> = None;
    for c in text.chars() {
        let ws = c.is_whitespace();
        if ws && prev == Some(false) {
            out.push(std::mem::take(&mut cur));
        }
        cur.push(c);
        prev = Some(ws);
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn merge_pass(piece: &[String], left: &str, right: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < piece.len() {
        if i + 1 < piece.len() && piece[i] == left && piece[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(piece[i].clone());
            i += 1;
        }
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Objective {
    Bpe,
    Wp,
}

/// Exhaustive recount trainer. Returns `(left, right, score)` per merge.
pub fn train(
    corpus: &[String],
    objective: Objective,
    k_plus: usize,
    split: bool,
) -> Vec<(String, String, f64)> {
    let mut pieces: Vec<Vec<String>> = corpus
        .iter()
        .flat_map(|d| {
            if split {
                split_leading_space(d)
            } else {
                vec![d.clone()]
            }
        })
        .filter(|p| !p.is_empty())
        .map(|p| p.chars().map(String::from).collect())
        .collect();
    let mut out = Vec::new();
    for _ in 0..k_plus {
        let mut pairs: BTreeMap<(String, String), u64> = BTreeMap::new();
        let mut units: BTreeMap<String, u64> = BTreeMap::new();
        for p in &pieces {
            for u in p {
                *units.entry(u.clone()).or_default() += 1;
            }
            for w in p.windows(2) {
                *pairs.entry((w[0].clone(), w[1].clone())).or_default() += 1;
            }
        }
        let mut best: Option<((String, String), u64)> = None;
        for (pair, &c) in &pairs {
            let better = match &best {
                None => true,
                Some((bp, bc)) => {
                    let ord = match objective {
                        Objective::Bpe => c.cmp(bc),
                        Objective::Wp => {
                            let lhs = c as u128 * units[&bp.0] as u128 * units[&bp.1] as u128;
                            let rhs = *bc as u128 * units[&pair.0] as u128 * units[&pair.1] as u128;
                            lhs.cmp(&rhs)
                        }
                    };
                    // ties: lexicographically greatest (left, right)
                    ord.then_with(|| pair.cmp(bp)).is_gt()
                }
            };
            if better {
                best = Some((pair.clone(), c));
            }
        }
        let Some(((l, r), c)) = best else { break };
        let score = match objective {
            Objective::Bpe => c as f64,
            Objective::Wp => c as f64 / (units[&l] as f64 * units[&r] as f64),
        };
        for p in &mut pieces {
            *p = merge_pass(p, &l, &r);
        }
        out.push((l, r, score));
    }
    out
}

/// Merge-based tokenisation by folding every merge over every piece.
pub fn tokenise_fold(text: &str, merges: &[(String, String)], split: bool) -> Vec<String> {
    let pieces = if split {
        split_leading_space(text)
    } else {
        vec![text.to_string()]
    };
    let mut out = Vec::new();
    for piece in pieces {
        let mut p: Vec<String> = piece.chars().map(String::from).collect();
        for (l, r) in merges {
            p = merge_pass(&p, l, r);
        }
        out.extend(p);
    }
    out
}

/// Greedy longest-prefix tokenisation against an explicit vocabulary list.
pub fn tokenise_longest(text: &str, vocab: &[String], split: bool) -> Vec<String> {
    let pieces = if split {
        split_leading_space(text)
    } else {
        vec![text.to_string()]
    };
    let mut out = Vec::new();
    for piece in pieces {
        let mut rest = piece.as_str();
        while !rest.is_empty() {
            let best = vocab
                .iter()
                .filter(|v| rest.starts_with(v.as_str()))
                .max_by_key(|v| v.len())
                .expect("alphabet covers input");
            out.push(best.clone());
            rest = &rest[best.len()..];
        }
    }
    out
}
