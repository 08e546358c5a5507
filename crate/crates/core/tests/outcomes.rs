mod common;

use std::sync::Arc;

use common::stats;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokbias::lm::{ModelBackend, UniformModel};
use tokbias::outcomes::{
    aggregate, collect_outcomes, enumerate_candidates, exclude_nested, nesting_vocabulary,
    read_outcomes_csv, write_outcomes_csv, Aggregates, CollectOptions, OutcomeStat,
};
use tokbias::tokeniser::{train_ranked_vocab, truncate, ObjectiveKind, TokFnKind, TrainerConfig};
use tokbias::Execution;

fn eval_docs() -> Vec<String> {
    let text = include_str!("data/eval.txt");
    text.lines().map(str::to_string).collect()
}

#[test]
fn accepted_spans_are_faithful_and_uniform_premise_holds() {
    let docs = eval_docs();
    let vocab = Arc::new(
        train_ranked_vocab(&docs, &TrainerConfig::new(ObjectiveKind::BpeCount, 300)).unwrap(),
    );
    for kind in [TokFnKind::MergeBased, TokFnKind::LongestPrefix] {
        let tok = truncate(&vocab, 150, kind).unwrap();
        let backend = ModelBackend::Uniform(UniformModel::new(tok.vocab_len()).unwrap());
        let cands = enumerate_candidates(&vocab, 150, 100).unwrap();
        let cands = exclude_nested(cands, nesting_vocabulary(&vocab, 150, 100));
        let out =
            collect_outcomes(&docs, &tok, &backend, &cands, &CollectOptions::default()).unwrap();
        assert!(out.records.len() > 20);

        let lp = -((tok.vocab_len() + 1) as f64).ln();
        let mut all = Vec::new();
        for r in &out.records {
            assert_eq!(r.candidate.treated, r.candidate.rank <= 150);
            for s in &r.samples {
                all.push((r.candidate.chars.clone(), r.candidate.treated, *s));
            }
        }
        assert!(all.len() >= 1000);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tokenised: Vec<Vec<u32>> = docs.iter().map(|d| tok.tokenise(d).unwrap()).collect();
        for (chars, treated, s) in all.choose_multiple(&mut rng, 1000) {
            let span = &tokenised[s.doc][s.token_start..s.token_start + s.token_len];
            assert_eq!(&tok.detokenise(span).unwrap(), chars);
            assert_eq!(
                &docs[s.doc].as_bytes()[s.char_offset..s.char_offset + chars.len()],
                &chars[..]
            );
            if *treated {
                assert_eq!(s.token_len, 1);
                assert!((s.logprob - lp).abs() < 1e-12);
            } else {
                assert!(s.token_len >= 2);
                assert!(s.logprob <= 2.0 * lp + 1e-12);
            }
        }
    }
}

#[test]
fn overlapping_occurrences_are_all_examined() {
    let vocab = Arc::new(
        train_ranked_vocab(
            &["aaaa aaaa"],
            &TrainerConfig::new(ObjectiveKind::BpeCount, 3),
        )
        .unwrap(),
    );
    let tok = truncate(&vocab, 1, TokFnKind::MergeBased).unwrap();
    let backend = ModelBackend::Uniform(UniformModel::new(tok.vocab_len()).unwrap());
    let cands = enumerate_candidates(&vocab, 1, 1).unwrap();
    assert_eq!(cands[0].chars, b"aa");
    let opts = CollectOptions {
        min_occurrences: 1,
        execution: Execution::Sequential,
        ..CollectOptions::default()
    };
    let out = collect_outcomes(&["aaaa"], &tok, &backend, &cands[..1], &opts).unwrap();
    // "aaaa" → aa|aa: occurrences at 0 and 2 align, the one at 1 does not
    assert_eq!(out.records[0].n_samples(), 2);
    assert_eq!(out.records[0].n_dropped_mismatch, 1);
}

#[test]
fn sequential_and_parallel_collection_agree() {
    let docs = eval_docs();
    let vocab = Arc::new(
        train_ranked_vocab(&docs, &TrainerConfig::new(ObjectiveKind::BpeCount, 120)).unwrap(),
    );
    let tok = truncate(&vocab, 60, TokFnKind::MergeBased).unwrap();
    let backend = ModelBackend::Uniform(UniformModel::new(tok.vocab_len()).unwrap());
    let cands = enumerate_candidates(&vocab, 60, 60).unwrap();
    let run = |execution| {
        let opts = CollectOptions {
            execution,
            ..CollectOptions::default()
        };
        collect_outcomes(&docs, &tok, &backend, &cands, &opts).unwrap()
    };
    assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
}

#[test]
fn aggregates_match_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let n = rng.gen_range(1..60);
        let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-20.0..0.0)).collect();
        let a = Aggregates::of(&xs).unwrap();
        assert!((a.mean - stats::mean(&xs)).abs() <= 1e-12);
        assert!((a.std - stats::pop_std(&xs)).abs() <= 1e-12);
        assert!((a.median - stats::median(&xs)).abs() <= 1e-12);
        assert!((a.iqr - stats::iqr(&xs)).abs() <= 1e-12);
        assert!(a.std >= 0.0 && a.iqr >= 0.0);
        assert_eq!(aggregate(&xs, OutcomeStat::Iqr).unwrap(), a.iqr);
    }
}

#[test]
fn csv_file_roundtrip() {
    let docs = eval_docs();
    let vocab = Arc::new(
        train_ranked_vocab(&docs, &TrainerConfig::new(ObjectiveKind::BpeCount, 80)).unwrap(),
    );
    let tok = truncate(&vocab, 40, TokFnKind::MergeBased).unwrap();
    let backend = ModelBackend::Uniform(UniformModel::new(tok.vocab_len()).unwrap());
    let cands = enumerate_candidates(&vocab, 40, 40).unwrap();
    let rows = collect_outcomes(&docs, &tok, &backend, &cands, &CollectOptions::default())
        .unwrap()
        .rows();
    let dir = tempfile::TempDir::new().unwrap();
    let path = dir.path().join("outcomes.csv");
    write_outcomes_csv(&path, &rows).unwrap();
    assert_eq!(read_outcomes_csv(&path).unwrap(), rows);
}
