//! Desk-scale mask-construction benchmark.
//!
//! Builds a synthetic grammar whose inventory size matches a real
//! PLM-sized vocabulary, samples a batch of states, and times mask tensor
//! construction under three strategies: the naive per-action membership
//! scan, the type-keyed cache, and the validness-based fill. Wall-clock
//! columns aside, output is deterministic under a fixed seed.

use super::{ConstrainError, Constrainer, ConstraintFn, MaskTensor};
use crate::candexpr::CandidateSet;
use crate::grammar::parse_grammar;
use crate::ir::IrState;
use crate::vocab::Vocabulary;
use rand::prelude::*;
use std::sync::Arc;
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskStrategy {
    Naive,
    Cached,
    Validness,
}

impl MaskStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            MaskStrategy::Naive => "naive",
            MaskStrategy::Cached => "cached",
            MaskStrategy::Validness => "validness",
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    /// Number of vocabulary tokens in the synthetic grammar.
    pub tokens: usize,
    pub batch: usize,
    pub beam: usize,
    pub iters: usize,
    pub seed: u64,
    pub strategies: Vec<MaskStrategy>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            tokens: 50_254,
            batch: 64,
            beam: 1,
            iters: 100,
            seed: 0,
            strategies: vec![
                MaskStrategy::Naive,
                MaskStrategy::Cached,
                MaskStrategy::Validness,
            ],
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchRow {
    pub strategy: &'static str,
    pub batch: usize,
    pub beam: usize,
    pub inventory: usize,
    pub mean_step_us: f64,
    /// Raw per-iteration samples, for median computations.
    pub samples_us: Vec<f64>,
}

impl BenchRow {
    pub fn median_us(&self) -> f64 {
        let mut v = self.samples_us.clone();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if v.is_empty() {
            return 0.0;
        }
        let mid = v.len() / 2;
        if v.len().is_multiple_of(2) {
            (v[mid - 1] + v[mid]) / 2.0
        } else {
            v[mid]
        }
    }
}

/// CSV per the bench interface: `strategy,batch,beam,|A|,mean_step_us`.
pub fn csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("strategy,batch,beam,|A|,mean_step_us\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{:.3}\n",
            r.strategy, r.batch, r.beam, r.inventory, r.mean_step_us
        ));
    }
    out
}

/// Synthetic grammar shaped like the fixture grammar but with an
/// arbitrarily large vocabulary: `|A| = tokens + 6 + 1`.
pub fn synthetic_constrainer(tokens: usize) -> Result<Constrainer, ConstrainError> {
    let dsl = r#"
        (define-types result
          (ent-set result) (num-result result) (str-result result)
          (op-dir) (kp-entity) (vp-string))
        (define-action wrap
          (act-type num-result) (param-types ent-set)
          (expr-dict (default (wrap @0))))
        (define-action pick
          (act-type ent-set) (param-types op-dir ent-set)
          (expr-dict (default (pick @0 @1))))
        (define-action forward (act-type op-dir) (expr-dict (default forward)))
        (define-action backward (act-type op-dir) (expr-dict (default backward)))
        (define-action find
          (act-type ent-set) (param-types &rest kp-entity)
          (expr-dict (default (find #(join " " @*))))
          (arg-candidate true))
        (define-action attr
          (act-type str-result) (param-types vp-string ent-set)
          (expr-dict (default (attr @0 @1))))
        (define-nl-token-typing
          (base vp-string)
          (pattern "^w[0-9]*[02468]$" kp-entity))
    "#;
    let words: Vec<String> = (0..tokens).map(|i| format!("w{i}")).collect();
    let vocab = Vocabulary::from_tokens(words).expect("synthetic tokens are distinct");
    let grammar = parse_grammar(dsl, vocab).expect("synthetic grammar is well-formed");
    let sets = vec![CandidateSet::new(
        "find",
        vec!["w0 w2".into(), "w0 w4".into(), "w2 w6 w8".into()],
    )];
    Constrainer::new(Arc::new(grammar), &sets)
}

/// A batch mixing the interesting row kinds: tiny operator slots, full
/// token slots, small rule slots and candidate-bearing slots.
pub fn sample_batch(c: &Constrainer, size: usize, seed: u64) -> Vec<IrState> {
    let g = c.grammar();
    let mut rng = StdRng::seed_from_u64(seed);
    let class = |name: &str| g.action_for_class(g.class_by_name(name).unwrap());
    let mut out = Vec::with_capacity(size);
    for i in 0..size {
        let s = IrState::initial();
        let s = match i % 4 {
            // lmnt <op-dir>: two valid actions
            0 => s.apply_action(g, class("pick")).unwrap(),
            // lmnt <vp-string>: every token action is valid
            1 => s.apply_action(g, class("attr")).unwrap(),
            // lmnt <ent-set>: a handful of rule actions
            2 => s
                .apply_action(g, class("pick"))
                .unwrap()
                .apply_action(g, class("forward"))
                .unwrap(),
            // candidate-bearing row with a random valid prefix depth
            _ => {
                let mut s = s.apply_action(g, class("find")).unwrap();
                let steps = rng.random_range(0..2);
                for _ in 0..steps {
                    let set = c.act_cand(&s).unwrap();
                    let choices: Vec<_> = set.iter().collect();
                    let pick = choices[rng.random_range(0..choices.len())];
                    if pick == g.reduce_id() {
                        break;
                    }
                    s = s.apply_action(g, pick).unwrap();
                }
                s
            }
        };
        out.push(s);
    }
    out
}

fn build_tensor(
    c: &Constrainer,
    batch: &[IrState],
    strategy: MaskStrategy,
) -> Result<MaskTensor, ConstrainError> {
    match strategy {
        MaskStrategy::Naive => c.naive_mask_tensor(batch, ConstraintFn::Hybr),
        MaskStrategy::Cached => c.mask_tensor(batch),
        MaskStrategy::Validness => c.mask_tensor_with_validness(batch),
    }
}

pub fn run_mask_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>, ConstrainError> {
    let c = synthetic_constrainer(cfg.tokens)?;
    let rows_needed = cfg.batch * cfg.beam;
    let batch = sample_batch(&c, rows_needed, cfg.seed);
    let inventory = c.num_actions();

    let mut rows = Vec::new();
    for &strategy in &cfg.strategies {
        // correctness guard: all strategies must agree before timing
        let reference = build_tensor(&c, &batch, MaskStrategy::Naive)?;
        let got = build_tensor(&c, &batch, strategy)?;
        assert_eq!(reference, got, "strategy {} diverged", strategy.name());

        let mut samples = Vec::with_capacity(cfg.iters);
        for _ in 0..cfg.iters {
            let start = Instant::now();
            let tensor = build_tensor(&c, &batch, strategy)?;
            let elapsed = start.elapsed().as_secs_f64() * 1e6;
            std::hint::black_box(&tensor);
            samples.push(elapsed);
        }
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        rows.push(BenchRow {
            strategy: strategy.name(),
            batch: cfg.batch,
            beam: cfg.beam,
            inventory,
            mean_step_us: mean,
            samples_us: samples,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategies_agree_on_a_small_inventory() {
        let cfg = BenchConfig {
            tokens: 40,
            batch: 8,
            beam: 1,
            iters: 3,
            seed: 11,
            ..BenchConfig::default()
        };
        let rows = run_mask_bench(&cfg).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].inventory, 40 + 6 + 1);
        let text = csv(&rows);
        assert!(text.starts_with("strategy,batch,beam,|A|,mean_step_us\n"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn sampled_batches_are_deterministic_under_a_seed() {
        let c = synthetic_constrainer(40).unwrap();
        let a = sample_batch(&c, 16, 3);
        let b = sample_batch(&c, 16, 3);
        assert_eq!(a, b);
    }
}
