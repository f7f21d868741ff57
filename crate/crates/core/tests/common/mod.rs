//! Shared fixture loading for the integration suites.

use semparse::candexpr::{parse_cand_file, CandidateSet};
use semparse::constrain::Constrainer;
use semparse::grammar::{parse_grammar, Grammar};
use semparse::learn::{parse_dataset, Example, MiniKb};
use semparse::vocab::Vocabulary;
use std::path::PathBuf;
use std::sync::Arc;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture_path(name))
        .unwrap_or_else(|e| panic!("cannot read fixture {name}: {e}"))
}

pub fn g0_vocab() -> Vocabulary {
    Vocabulary::parse(&read_fixture("g0.vocab")).unwrap()
}

pub fn g0_grammar() -> Grammar {
    parse_grammar(&read_fixture("g0.gdsl"), g0_vocab()).unwrap()
}

pub fn g0_candidates() -> Vec<CandidateSet> {
    parse_cand_file(&read_fixture("g0.cand")).unwrap()
}

pub fn g0_constrainer() -> Constrainer {
    Constrainer::new(Arc::new(g0_grammar()), &g0_candidates()).unwrap()
}

pub fn g0_kb() -> MiniKb {
    MiniKb::parse(&read_fixture("g0-kb.sexp")).unwrap()
}

pub fn g0_weak_train() -> Vec<Example> {
    parse_dataset(&read_fixture("g0-weak-train.sexp")).unwrap()
}

pub fn g0_weak_val() -> Vec<Example> {
    parse_dataset(&read_fixture("g0-weak-val.sexp")).unwrap()
}

/// The pre-training examples as (utterance, gold action sequence) pairs.
pub fn g0_pretrain() -> Vec<(String, Vec<semparse::grammar::ActionId>)> {
    parse_dataset(&read_fixture("g0-strong.sexp"))
        .unwrap()
        .into_iter()
        .map(|ex| {
            let actions = ex.gold_actions().expect("strong fixture").to_vec();
            (ex.utterance, actions)
        })
        .collect()
}
