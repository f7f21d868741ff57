//! Scoring and search over action sequences.
//!
//! A scorer assigns a log-probability vector over the full action
//! inventory at each step; constrained decoding adds the mask for the
//! chosen valid-action function and the search picks among the finite
//! entries. Greedy search and beam search are deterministic: ties break
//! toward the lowest action id, and result lists break score ties by
//! lexicographic action-sequence order.

use crate::constrain::{Constrainer, ConstraintFn, MASK_INVALID};
use crate::grammar::ActionId;
use crate::ir::IrState;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("scorer returned {got} scores for an inventory of {expected}")]
    ScorerLength { expected: usize, got: usize },
    #[error(transparent)]
    Constrain(#[from] crate::constrain::ConstrainError),
    #[error("enumeration exceeded the safety bound of {max_states} states")]
    EnumerationBound { max_states: usize },
    #[error("table scorer: {message}")]
    Table { message: String },
}

/// Per-step action distribution: `log p(a | prefix, utterance)` over the
/// full inventory. Every returned vector must be a proper distribution
/// (its log-sum-exp is 0 within 1e-6).
pub trait Scorer {
    fn log_probs(&self, utterance: &str, prefix: &[ActionId]) -> Vec<f64>;
}

pub fn log_softmax(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = raw.iter().map(|s| (s - max).exp()).sum::<f64>().ln() + max;
    raw.iter().map(|s| s - log_z).collect()
}

/// The same log-probability for every action.
pub struct UniformScorer {
    num_actions: usize,
}

impl UniformScorer {
    pub fn new(num_actions: usize) -> UniformScorer {
        UniformScorer { num_actions }
    }
}

impl Scorer for UniformScorer {
    fn log_probs(&self, _utterance: &str, _prefix: &[ActionId]) -> Vec<f64> {
        vec![-(self.num_actions as f64).ln(); self.num_actions]
    }
}

/// Explicit per-(prefix, action) raw scores, normalized per step.
/// Unlisted entries take the default raw score.
pub struct TableScorer {
    num_actions: usize,
    default: f64,
    table: HashMap<Vec<u32>, HashMap<u32, f64>>,
}

impl TableScorer {
    pub fn new(num_actions: usize) -> TableScorer {
        TableScorer {
            num_actions,
            default: 0.0,
            table: HashMap::new(),
        }
    }

    pub fn with_default(mut self, default: f64) -> TableScorer {
        self.default = default;
        self
    }

    /// Sets the raw score of `action` after the exact prefix `prefix`.
    pub fn set(&mut self, prefix: &[u32], action: u32, score: f64) -> &mut Self {
        self.table
            .entry(prefix.to_vec())
            .or_default()
            .insert(action, score);
        self
    }

    /// Parses the table file format: one top-level form
    /// `(table (default <raw>)? (at (<prefix ids>) (<action> <raw>)...)*)`.
    pub fn parse(text: &str, num_actions: usize) -> Result<TableScorer, DecodeError> {
        let form = crate::sexp::parse_one(text).map_err(|e| DecodeError::Table {
            message: e.to_string(),
        })?;
        let err = |message: String| DecodeError::Table { message };
        let items = form
            .as_list()
            .filter(|items| items.first().and_then(|h| h.as_symbol()) == Some("table"))
            .ok_or_else(|| err("expected (table ...)".into()))?;
        let mut scorer = TableScorer::new(num_actions);
        for entry in &items[1..] {
            let parts = entry
                .as_list()
                .ok_or_else(|| err(format!("bad entry {}", entry.print())))?;
            match parts.first().and_then(|h| h.as_symbol()) {
                Some("default") => {
                    let v = parts
                        .get(1)
                        .and_then(|v| v.as_symbol())
                        .and_then(|v| v.parse::<f64>().ok())
                        .ok_or_else(|| err("default: expected a number".into()))?;
                    scorer.default = v;
                }
                Some("at") => {
                    let prefix_list = parts
                        .get(1)
                        .and_then(|p| p.as_list())
                        .ok_or_else(|| err("at: expected a prefix list".into()))?;
                    let mut prefix = Vec::new();
                    for p in prefix_list {
                        let id = p
                            .as_symbol()
                            .and_then(|s| s.parse::<u32>().ok())
                            .ok_or_else(|| err("at: prefix ids must be integers".into()))?;
                        prefix.push(id);
                    }
                    for kv in &parts[2..] {
                        let pair = kv
                            .as_list()
                            .ok_or_else(|| err("at: expected (action score)".into()))?;
                        if pair.len() != 2 {
                            return Err(err("at: expected (action score)".into()));
                        }
                        let action = pair[0]
                            .as_symbol()
                            .and_then(|s| s.parse::<u32>().ok())
                            .ok_or_else(|| err("at: action must be an integer".into()))?;
                        let score = pair[1]
                            .as_symbol()
                            .and_then(|s| s.parse::<f64>().ok())
                            .ok_or_else(|| err("at: score must be a number".into()))?;
                        scorer.set(&prefix, action, score);
                    }
                }
                _ => return Err(err(format!("bad entry {}", entry.print()))),
            }
        }
        Ok(scorer)
    }
}

impl Scorer for TableScorer {
    fn log_probs(&self, _utterance: &str, prefix: &[ActionId]) -> Vec<f64> {
        let key: Vec<u32> = prefix.iter().map(|a| a.0).collect();
        let mut raw = vec![self.default; self.num_actions];
        if let Some(overrides) = self.table.get(&key) {
            for (&a, &s) in overrides {
                if (a as usize) < self.num_actions {
                    raw[a as usize] = s;
                }
            }
        }
        log_softmax(&raw)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Greedy,
    Beam(usize),
}

#[derive(Clone, Copy, Debug)]
pub struct DecodeConfig {
    pub constraint: ConstraintFn,
    pub strategy: Strategy,
    pub max_steps: usize,
}

impl DecodeConfig {
    pub fn greedy(constraint: ConstraintFn, max_steps: usize) -> DecodeConfig {
        DecodeConfig {
            constraint,
            strategy: Strategy::Greedy,
            max_steps,
        }
    }

    pub fn beam(constraint: ConstraintFn, k: usize, max_steps: usize) -> DecodeConfig {
        assert!(k >= 1);
        DecodeConfig {
            constraint,
            strategy: Strategy::Beam(k),
            max_steps,
        }
    }
}

/// A (partial) decode: the state, its cumulative log-probability, and
/// whether the state is complete.
#[derive(Clone, Debug)]
pub struct Hypothesis {
    pub state: IrState,
    pub logprob: f64,
    pub finished: bool,
}

/// Scorer output plus the mask of the configured constraint function.
/// Masked entries are exactly the invalid sentinel regardless of the
/// scorer value.
pub fn constrained_scores(
    c: &Constrainer,
    scorer: &dyn Scorer,
    s: &IrState,
    utterance: &str,
    constraint: ConstraintFn,
) -> Result<Vec<f64>, DecodeError> {
    let mut scores = scorer.log_probs(utterance, &s.actions());
    if scores.len() != c.num_actions() {
        return Err(DecodeError::ScorerLength {
            expected: c.num_actions(),
            got: scores.len(),
        });
    }
    let mask = c.mask_row(s, constraint)?;
    for (v, m) in scores.iter_mut().zip(&mask) {
        if *m == MASK_INVALID {
            *v = MASK_INVALID;
        }
    }
    Ok(scores)
}

/// Argmax action per step until completion or the step budget runs out.
/// Ties break toward the lowest action id. On a dead end the best partial
/// hypothesis is returned flagged unfinished rather than erroring.
pub fn greedy_decode(
    c: &Constrainer,
    scorer: &dyn Scorer,
    utterance: &str,
    cfg: &DecodeConfig,
) -> Result<Hypothesis, DecodeError> {
    let g = c.grammar();
    let mut state = IrState::initial();
    let mut logprob = 0.0;
    for _ in 0..cfg.max_steps {
        if state.is_complete(g) {
            break;
        }
        let scores = constrained_scores(c, scorer, &state, utterance, cfg.constraint)?;
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        let mut advanced = false;
        for i in order {
            if scores[i] == MASK_INVALID {
                break;
            }
            if let Ok(next) = state.apply_action(g, ActionId(i as u32)) {
                logprob += scores[i];
                state = next;
                advanced = true;
                break;
            }
        }
        if !advanced {
            break;
        }
    }
    let finished = state.is_complete(g);
    Ok(Hypothesis {
        state,
        logprob,
        finished,
    })
}

/// Standard beam search over constrained scores. Finished hypotheses are
/// frozen and compete by log-probability; at most `k` finished hypotheses
/// are returned, sorted descending with ties broken by lexicographic
/// action-sequence order. When no hypothesis finishes within the budget,
/// the best unfinished one is returned flagged unfinished.
pub fn beam_search(
    c: &Constrainer,
    scorer: &dyn Scorer,
    utterance: &str,
    cfg: &DecodeConfig,
) -> Result<Vec<Hypothesis>, DecodeError> {
    let k = match cfg.strategy {
        Strategy::Beam(k) => k,
        Strategy::Greedy => 1,
    };
    let g = c.grammar();

    #[derive(Clone)]
    struct Cand {
        state: IrState,
        logprob: f64,
        seq: Vec<u32>,
    }

    let mut active: Vec<Cand> = vec![Cand {
        state: IrState::initial(),
        logprob: 0.0,
        seq: Vec::new(),
    }];
    let mut finished: Vec<Cand> = Vec::new();
    let mut deepest_partial: Option<Cand> = None;

    for _ in 0..cfg.max_steps {
        if active.is_empty() {
            break;
        }
        let mut pool: Vec<Cand> = Vec::new();
        for hyp in &active {
            let scores = constrained_scores(c, scorer, &hyp.state, utterance, cfg.constraint)?;
            for (i, &score) in scores.iter().enumerate() {
                if score == MASK_INVALID {
                    continue;
                }
                if let Ok(next) = hyp.state.apply_action(g, ActionId(i as u32)) {
                    let mut seq = hyp.seq.clone();
                    seq.push(i as u32);
                    pool.push(Cand {
                        state: next,
                        logprob: hyp.logprob + score,
                        seq,
                    });
                }
            }
        }
        pool.sort_by(|a, b| {
            b.logprob
                .partial_cmp(&a.logprob)
                .unwrap()
                .then_with(|| a.seq.cmp(&b.seq))
        });
        if let Some(best) = pool.first() {
            deepest_partial = Some(best.clone());
        }
        // drop branches that cannot complete within the remaining budget,
        // so they never crowd finishable hypotheses out of the beam
        pool.retain(|cand| {
            c.min_remaining(&cand.state, cfg.constraint)
                .is_some_and(|rem| cand.state.len() + rem <= cfg.max_steps)
        });
        pool.truncate(k.saturating_sub(finished.len()).max(1));
        active = Vec::new();
        for cand in pool {
            if cand.state.is_complete(g) {
                finished.push(cand);
            } else {
                active.push(cand);
            }
        }
        if finished.len() >= k {
            break;
        }
    }

    finished.sort_by(|a, b| {
        b.logprob
            .partial_cmp(&a.logprob)
            .unwrap()
            .then_with(|| a.seq.cmp(&b.seq))
    });
    finished.truncate(k);

    if finished.is_empty() {
        // dead end or exhausted budget: surface the deepest best partial
        return Ok(match deepest_partial {
            Some(cand) => vec![Hypothesis {
                state: cand.state,
                logprob: cand.logprob,
                finished: false,
            }],
            None => vec![Hypothesis {
                state: IrState::initial(),
                logprob: 0.0,
                finished: false,
            }],
        });
    }

    Ok(finished
        .into_iter()
        .map(|cand| Hypothesis {
            state: cand.state,
            logprob: cand.logprob,
            finished: true,
        })
        .collect())
}

/// Every complete state reachable within `max_len` actions under the given
/// constraint function, sorted by lexicographic action-sequence order.
/// This powers the enumerate subcommand and the test oracles.
pub fn enumerate_complete(
    c: &Constrainer,
    constraint: ConstraintFn,
    max_len: usize,
    max_states: usize,
) -> Result<Vec<IrState>, DecodeError> {
    let g = c.grammar();
    let mut out = Vec::new();
    let mut frontier = vec![IrState::initial()];
    let mut visited = 0usize;
    while let Some(state) = frontier.pop() {
        visited += 1;
        if visited > max_states {
            return Err(DecodeError::EnumerationBound { max_states });
        }
        if state.is_complete(g) {
            out.push(state);
            continue;
        }
        if state.len() >= max_len {
            continue;
        }
        let set = c.act(constraint, &state)?;
        // depth-first with descending ids so the stack pops ascending
        let ids: Vec<ActionId> = set.iter().collect();
        for &a in ids.iter().rev() {
            if let Ok(next) = state.apply_action(g, a) {
                frontier.push(next);
            }
        }
    }
    out.sort_by_key(|a| a.actions());
    Ok(out)
}

/// Log-probability of one full action sequence under a scorer.
pub fn sequence_logprob(scorer: &dyn Scorer, utterance: &str, actions: &[ActionId]) -> f64 {
    let mut lp = 0.0;
    for (t, &a) in actions.iter().enumerate() {
        let probs = scorer.log_probs(utterance, &actions[..t]);
        lp += probs[a.0 as usize];
    }
    lp
}
