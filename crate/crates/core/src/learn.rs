//! Toy executor, consistency, and weakly-supervised training.
//!
//! The executor evaluates logical forms over a miniature KB to produce
//! denotations. Weak supervision repeats a search step (beam search per
//! utterance, keeping action sequences whose denotation matches the gold
//! one) and a maximization step (gradient ascent on the marginal
//! likelihood of the kept sequences, with the posterior renormalized over
//! the searched set). The model is a small log-linear scorer over
//! utterance n-gram and prefix features; it stands in for a neural
//! parameterization while keeping every gradient exactly checkable.

use crate::constrain::{Constrainer, ConstraintFn};
use crate::decode::{beam_search, greedy_decode, log_softmax, DecodeConfig, DecodeError, Scorer};
use crate::grammar::ActionId;
use crate::ir::{IrState, LogicalForm, TemplateKind};
use crate::sexp::{self, Sexp, SexpKind};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("kb: {message}")]
    Kb { message: String },
    #[error("dataset: {message}")]
    Dataset { message: String },
    #[error("executor: {message}")]
    Exec { message: String },
    #[error("action sequence is incomplete")]
    IncompleteSequence,
    #[error("example {index}: gold action {action} violates the hybrid constraint at step {step}")]
    GoldViolatesConstraint {
        index: usize,
        action: u32,
        step: usize,
    },
    #[error("model file: {message}")]
    Model { message: String },
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Ir(#[from] crate::ir::IrError),
    #[error(transparent)]
    Constrain(#[from] crate::constrain::ConstrainError),
}

fn kb_err(message: impl Into<String>) -> LearnError {
    LearnError::Kb {
        message: message.into(),
    }
}

fn data_err(message: impl Into<String>) -> LearnError {
    LearnError::Dataset {
        message: message.into(),
    }
}

fn exec_err(message: impl Into<String>) -> LearnError {
    LearnError::Exec {
        message: message.into(),
    }
}

/// Value produced by executing a logical form. Set equality is
/// order-insensitive.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Denotation {
    Str(String),
    Num(i64),
    Entities(BTreeSet<String>),
    Bool(bool),
}

impl Denotation {
    pub fn empty_set() -> Denotation {
        Denotation::Entities(BTreeSet::new())
    }

    pub fn to_sexp(&self) -> Sexp {
        match self {
            Denotation::Str(s) => Sexp::list(vec![Sexp::symbol("string"), Sexp::string(s.clone())]),
            Denotation::Num(n) => {
                Sexp::list(vec![Sexp::symbol("number"), Sexp::symbol(n.to_string())])
            }
            Denotation::Entities(es) => {
                let mut items = vec![Sexp::symbol("set")];
                items.extend(es.iter().map(|e| Sexp::string(e.clone())));
                Sexp::list(items)
            }
            Denotation::Bool(b) => {
                Sexp::list(vec![Sexp::symbol("bool"), Sexp::symbol(b.to_string())])
            }
        }
    }

    pub fn from_sexp(e: &Sexp) -> Result<Denotation, LearnError> {
        let items = e
            .as_list()
            .ok_or_else(|| data_err(format!("bad denotation {}", e.print())))?;
        let head = items.first().and_then(|h| h.as_symbol()).unwrap_or("");
        match head {
            "string" => Ok(Denotation::Str(
                items
                    .get(1)
                    .and_then(|s| s.as_str())
                    .ok_or_else(|| data_err("string denotation needs a literal"))?
                    .to_string(),
            )),
            "number" => {
                let n = items
                    .get(1)
                    .and_then(|s| s.as_symbol())
                    .and_then(|s| s.parse::<i64>().ok())
                    .ok_or_else(|| data_err("number denotation needs an integer"))?;
                Ok(Denotation::Num(n))
            }
            "set" => {
                let mut out = BTreeSet::new();
                for item in &items[1..] {
                    out.insert(
                        item.as_str()
                            .ok_or_else(|| data_err("set members must be strings"))?
                            .to_string(),
                    );
                }
                Ok(Denotation::Entities(out))
            }
            "bool" => {
                let b = items
                    .get(1)
                    .and_then(|s| s.as_symbol())
                    .and_then(|s| s.parse::<bool>().ok())
                    .ok_or_else(|| data_err("bool denotation needs true or false"))?;
                Ok(Denotation::Bool(b))
            }
            _ => Err(data_err(format!("bad denotation {}", e.print()))),
        }
    }
}

impl fmt::Display for Denotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_sexp().print())
    }
}

/// Miniature KB: named entity records with string attributes, plus
/// (subject, relation, object) triples whose names must resolve.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MiniKb {
    entities: BTreeMap<String, BTreeMap<String, String>>,
    triples: Vec<(String, String, String)>,
}

impl MiniKb {
    /// Parses records `(entity <name> (attr <key> <value>)...)` and
    /// `(triple <s> <r> <o>)`.
    pub fn parse(text: &str) -> Result<MiniKb, LearnError> {
        let forms = sexp::parse_many(text).map_err(|e| kb_err(e.to_string()))?;
        let mut kb = MiniKb::default();
        for form in &forms {
            let items = form
                .as_list()
                .ok_or_else(|| kb_err(format!("bad record {}", form.print())))?;
            match items.first().and_then(|h| h.as_symbol()) {
                Some("entity") => {
                    let name = items
                        .get(1)
                        .and_then(|n| n.as_str())
                        .ok_or_else(|| kb_err("entity name must be a string"))?;
                    let mut attrs = BTreeMap::new();
                    for attr in &items[2..] {
                        let kv = attr
                            .as_list()
                            .ok_or_else(|| kb_err("expected (attr <key> <value>)"))?;
                        if kv.len() != 3 || kv[0].as_symbol() != Some("attr") {
                            return Err(kb_err("expected (attr <key> <value>)"));
                        }
                        let k = kv[1]
                            .as_str()
                            .ok_or_else(|| kb_err("attr key must be a string"))?;
                        let v = kv[2]
                            .as_str()
                            .ok_or_else(|| kb_err("attr value must be a string"))?;
                        attrs.insert(k.to_string(), v.to_string());
                    }
                    kb.entities.insert(name.to_string(), attrs);
                }
                Some("triple") => {
                    let get = |i: usize| -> Result<String, LearnError> {
                        items
                            .get(i)
                            .and_then(|n| n.as_str())
                            .map(|s| s.to_string())
                            .ok_or_else(|| kb_err("triple parts must be strings"))
                    };
                    kb.triples.push((get(1)?, get(2)?, get(3)?));
                }
                _ => return Err(kb_err(format!("bad record {}", form.print()))),
            }
        }
        for (s, _, o) in &kb.triples {
            if !kb.entities.contains_key(s) || !kb.entities.contains_key(o) {
                return Err(kb_err(format!(
                    "triple references unknown entity: ({s:?} .. {o:?})"
                )));
            }
        }
        Ok(kb)
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn entity_names(&self) -> impl Iterator<Item = &str> {
        self.entities.keys().map(|s| s.as_str())
    }

    pub fn attr(&self, entity: &str, key: &str) -> Option<&str> {
        self.entities.get(entity)?.get(key).map(|s| s.as_str())
    }

    /// Entities whose name contains the query words as a contiguous
    /// sub-sequence. Unknown words simply match nothing.
    fn find(&self, query: &str) -> BTreeSet<String> {
        let q: Vec<&str> = query.split_whitespace().collect();
        if q.is_empty() {
            return BTreeSet::new();
        }
        self.entities
            .keys()
            .filter(|name| {
                let words: Vec<&str> = name.split_whitespace().collect();
                words.len() >= q.len() && words.windows(q.len()).any(|w| w == q.as_slice())
            })
            .cloned()
            .collect()
    }
}

/// Deterministic evaluation of the fixture grammar's primitives. Unknown
/// entity names or attribute keys yield the empty-set denotation, never an
/// exception; malformed expression shapes are errors.
pub fn execute(lf: &LogicalForm, kb: &MiniKb) -> Result<Denotation, LearnError> {
    eval(&lf.0, kb)
}

fn eval(e: &Sexp, kb: &MiniKb) -> Result<Denotation, LearnError> {
    match &e.kind {
        SexpKind::Str(s) => Ok(Denotation::Str(s.clone())),
        SexpKind::Symbol(s) => Err(exec_err(format!("bare symbol {s:?} is not executable"))),
        SexpKind::List(items) => {
            let head = items
                .first()
                .and_then(|h| h.as_symbol())
                .ok_or_else(|| exec_err(format!("bad expression {}", e.print())))?;
            match head {
                "count" => {
                    let arg = items
                        .get(1)
                        .ok_or_else(|| exec_err("count takes one argument"))?;
                    match eval(arg, kb)? {
                        Denotation::Entities(s) => Ok(Denotation::Num(s.len() as i64)),
                        other => Err(exec_err(format!("count over non-set {other}"))),
                    }
                }
                "find" => {
                    let arg = items
                        .get(1)
                        .and_then(|a| a.as_str())
                        .ok_or_else(|| exec_err("find takes one string argument"))?;
                    Ok(Denotation::Entities(kb.find(arg)))
                }
                "filter-color" => {
                    if items.len() != 3 {
                        return Err(exec_err("filter-color takes two arguments"));
                    }
                    let color = items[1]
                        .as_symbol()
                        .or_else(|| items[1].as_str())
                        .ok_or_else(|| exec_err("filter-color: bad color"))?;
                    match eval(&items[2], kb)? {
                        Denotation::Entities(s) => Ok(Denotation::Entities(
                            s.into_iter()
                                .filter(|name| kb.attr(name, "color") == Some(color))
                                .collect(),
                        )),
                        other => Err(exec_err(format!("filter-color over non-set {other}"))),
                    }
                }
                "attr" => {
                    if items.len() != 3 {
                        return Err(exec_err("attr takes two arguments"));
                    }
                    let key = items[1]
                        .as_str()
                        .ok_or_else(|| exec_err("attr: key must be a string"))?;
                    match eval(&items[2], kb)? {
                        Denotation::Entities(s) => {
                            if s.len() == 1 {
                                let name = s.iter().next().unwrap();
                                match kb.attr(name, key) {
                                    Some(v) => Ok(Denotation::Str(v.to_string())),
                                    None => Ok(Denotation::empty_set()),
                                }
                            } else {
                                Ok(Denotation::empty_set())
                            }
                        }
                        other => Err(exec_err(format!("attr over non-set {other}"))),
                    }
                }
                other => Err(exec_err(format!("unknown operator {other:?}"))),
            }
        }
    }
}

/// One training or evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub utterance: String,
    pub gold: Gold,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Gold {
    Actions(Vec<ActionId>),
    Denotation(Denotation),
}

impl Example {
    pub fn gold_denotation(&self) -> Option<&Denotation> {
        match &self.gold {
            Gold::Denotation(d) => Some(d),
            Gold::Actions(_) => None,
        }
    }

    pub fn gold_actions(&self) -> Option<&[ActionId]> {
        match &self.gold {
            Gold::Actions(a) => Some(a),
            Gold::Denotation(_) => None,
        }
    }
}

/// Parses dataset files: one example per line, either
/// `(example "<utterance>" (gold-denotation <d>))` or
/// `(example "<utterance>" (gold-actions <ids...>))`.
pub fn parse_dataset(text: &str) -> Result<Vec<Example>, LearnError> {
    let forms = sexp::parse_many(text).map_err(|e| data_err(e.to_string()))?;
    let mut out = Vec::new();
    for form in &forms {
        let items = form
            .as_list()
            .filter(|items| items.first().and_then(|h| h.as_symbol()) == Some("example"))
            .ok_or_else(|| data_err(format!("bad example {}", form.print())))?;
        let utterance = items
            .get(1)
            .and_then(|u| u.as_str())
            .ok_or_else(|| data_err("example utterance must be a string"))?
            .to_string();
        let gold_form = items
            .get(2)
            .and_then(|g| g.as_list())
            .ok_or_else(|| data_err("example needs a gold form"))?;
        let gold = match gold_form.first().and_then(|h| h.as_symbol()) {
            Some("gold-denotation") => {
                let d = gold_form
                    .get(1)
                    .ok_or_else(|| data_err("gold-denotation needs a value"))?;
                Gold::Denotation(Denotation::from_sexp(d)?)
            }
            Some("gold-actions") => {
                let mut ids = Vec::new();
                for item in &gold_form[1..] {
                    let id = item
                        .as_symbol()
                        .and_then(|s| s.parse::<u32>().ok())
                        .ok_or_else(|| data_err("gold-actions ids must be integers"))?;
                    ids.push(ActionId(id));
                }
                Gold::Actions(ids)
            }
            _ => return Err(data_err(format!("bad gold form {}", form.print()))),
        };
        out.push(Example { utterance, gold });
    }
    Ok(out)
}

/// 1 iff the sequence's denotation equals the gold one, 0 otherwise.
pub fn consistency(
    c: &Constrainer,
    kb: &MiniKb,
    actions: &[ActionId],
    gold: &Denotation,
) -> Result<bool, LearnError> {
    let g = c.grammar();
    let state = IrState::replay(g, actions)?;
    if !state.is_complete(g) {
        return Err(LearnError::IncompleteSequence);
    }
    let lf = state.to_logical_form(g, TemplateKind::Default)?;
    Ok(execute(&lf, kb)? == *gold)
}

/// Sparse weight map over (feature, action) pairs for the toy log-linear
/// scorer. Per-step scores are `log softmax` over the full inventory of
/// `Σ_f w[f, a]` for the active features, so the gradient of a sequence's
/// log-probability is exactly computable.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LogLinearModel {
    num_actions: usize,
    weights: BTreeMap<(String, u32), f64>,
}

pub type Gradient = BTreeMap<(String, u32), f64>;

impl LogLinearModel {
    pub fn new(num_actions: usize) -> LogLinearModel {
        LogLinearModel {
            num_actions,
            weights: BTreeMap::new(),
        }
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_weights(&self) -> usize {
        self.weights.len()
    }

    pub fn weight(&self, feature: &str, action: u32) -> f64 {
        self.weights
            .get(&(feature.to_string(), action))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn set_weight(&mut self, feature: &str, action: u32, value: f64) {
        self.weights.insert((feature.to_string(), action), value);
    }

    pub fn weights(&self) -> &BTreeMap<(String, u32), f64> {
        &self.weights
    }

    /// Active features for one decoding step: utterance unigrams and
    /// bigrams plus the previous action and the (capped) step index, so
    /// the per-step distribution is prefix-sensitive.
    pub fn features(utterance: &str, prefix: &[ActionId]) -> Vec<String> {
        let mut feats = vec!["bias".to_string()];
        let words: Vec<String> = utterance
            .split_whitespace()
            .map(|w| {
                w.trim_matches(|c: char| !c.is_alphanumeric())
                    .to_lowercase()
            })
            .filter(|w| !w.is_empty())
            .collect();
        for w in &words {
            feats.push(format!("u:{w}"));
        }
        for pair in words.windows(2) {
            feats.push(format!("b:{} {}", pair[0], pair[1]));
        }
        match prefix.last() {
            Some(a) => feats.push(format!("last:{}", a.0)),
            None => feats.push("last:BOS".to_string()),
        }
        feats.push(format!("step:{}", prefix.len().min(24)));
        feats
    }

    fn raw_scores(&self, feats: &[String]) -> Vec<f64> {
        let mut raw = vec![0.0; self.num_actions];
        for f in feats {
            for (a, slot) in raw.iter_mut().enumerate() {
                if let Some(w) = self.weights.get(&(f.clone(), a as u32)) {
                    *slot += w;
                }
            }
        }
        raw
    }

    pub fn seq_logprob(&self, utterance: &str, actions: &[ActionId]) -> f64 {
        let mut lp = 0.0;
        for (t, &a) in actions.iter().enumerate() {
            let probs = self.log_probs(utterance, &actions[..t]);
            lp += probs[a.0 as usize];
        }
        lp
    }

    /// Adds `scale · ∇ log p(actions | utterance)` into `grad`.
    pub fn accumulate_seq_grad(
        &self,
        utterance: &str,
        actions: &[ActionId],
        scale: f64,
        grad: &mut Gradient,
    ) {
        for (t, &a) in actions.iter().enumerate() {
            let feats = Self::features(utterance, &actions[..t]);
            let probs: Vec<f64> = log_softmax(&self.raw_scores(&feats))
                .iter()
                .map(|lp| lp.exp())
                .collect();
            for f in &feats {
                *grad.entry((f.clone(), a.0)).or_insert(0.0) += scale;
                for (b, &p) in probs.iter().enumerate() {
                    *grad.entry((f.clone(), b as u32)).or_insert(0.0) -= scale * p;
                }
            }
        }
    }

    pub fn apply_gradient(&mut self, grad: &Gradient, lr: f64) {
        for ((f, a), g) in grad {
            *self.weights.entry((f.clone(), *a)).or_insert(0.0) += lr * g;
        }
    }

    /// Deterministic text serialization: sorted `feature\taction\tweight`
    /// lines after a header carrying the inventory size.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("#loglinear {}\n", self.num_actions);
        for ((f, a), w) in &self.weights {
            out.push_str(&format!("{f}\t{a}\t{w:?}\n"));
        }
        out
    }

    pub fn parse_tsv(text: &str) -> Result<LogLinearModel, LearnError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| LearnError::Model {
            message: "empty model file".into(),
        })?;
        let num_actions = header
            .strip_prefix("#loglinear ")
            .and_then(|n| n.trim().parse::<usize>().ok())
            .ok_or_else(|| LearnError::Model {
                message: format!("bad header {header:?}"),
            })?;
        let mut model = LogLinearModel::new(num_actions);
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let (f, a, w) = (parts.next(), parts.next(), parts.next());
            let parsed = match (f, a, w) {
                (Some(f), Some(a), Some(w)) => a
                    .parse::<u32>()
                    .ok()
                    .zip(w.parse::<f64>().ok())
                    .map(|(a, w)| (f, a, w)),
                _ => None,
            };
            let Some((f, a, w)) = parsed else {
                return Err(LearnError::Model {
                    message: format!("bad line {} in model file", i + 2),
                });
            };
            model.weights.insert((f.to_string(), a), w);
        }
        Ok(model)
    }
}

impl Scorer for LogLinearModel {
    fn log_probs(&self, utterance: &str, prefix: &[ActionId]) -> Vec<f64> {
        log_softmax(&self.raw_scores(&Self::features(utterance, prefix)))
    }
}

/// Marginal log-likelihood of the consistent-sequence sets: per example,
/// `log Σ p(a | x)` over the set. Examples with an empty set contribute 0
/// and are counted as skipped.
pub fn mml_objective(
    model: &LogLinearModel,
    items: &[(String, Vec<Vec<ActionId>>)],
) -> (f64, usize) {
    let mut obj = 0.0;
    let mut skipped = 0usize;
    for (utterance, seqs) in items {
        if seqs.is_empty() {
            skipped += 1;
            continue;
        }
        let lps: Vec<f64> = seqs
            .iter()
            .map(|a| model.seq_logprob(utterance, a))
            .collect();
        obj += logsumexp(&lps);
    }
    (obj, skipped)
}

fn logsumexp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    v.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max
}

/// Posterior over a searched set of consistent sequences: each sequence's
/// probability renormalized over the set.
pub fn posterior(model: &LogLinearModel, utterance: &str, seqs: &[Vec<ActionId>]) -> Vec<f64> {
    let lps: Vec<f64> = seqs
        .iter()
        .map(|a| model.seq_logprob(utterance, a))
        .collect();
    log_softmax(&lps).iter().map(|lp| lp.exp()).collect()
}

/// Gradient of one example's marginal log-likelihood: the
/// posterior-weighted sum of per-sequence log-likelihood gradients.
/// `None` when the set is empty (the objective term is undefined).
pub fn mml_gradient(
    model: &LogLinearModel,
    utterance: &str,
    seqs: &[Vec<ActionId>],
) -> Option<Gradient> {
    if seqs.is_empty() {
        return None;
    }
    let weights = posterior(model, utterance, seqs);
    let mut grad = Gradient::new();
    for (seq, w) in seqs.iter().zip(weights) {
        model.accumulate_seq_grad(utterance, seq, w, &mut grad);
    }
    Some(grad)
}

#[derive(Clone, Debug, Default)]
pub struct SearchOutcome {
    /// Consistent action sequences per example, deduplicated.
    pub sets: Vec<Vec<Vec<ActionId>>>,
    pub hits: usize,
    pub oracle_accuracy: f64,
}

/// Beam search per weak example under the given constraint; keeps the
/// sequences whose denotation matches the gold one. Oracle accuracy is the
/// fraction of examples with at least one consistent sequence.
pub fn search_step(
    c: &Constrainer,
    model: &dyn Scorer,
    kb: &MiniKb,
    examples: &[Example],
    beam: usize,
    constraint: ConstraintFn,
    max_steps: usize,
) -> Result<SearchOutcome, LearnError> {
    let mut outcome = SearchOutcome::default();
    let cfg = DecodeConfig::beam(constraint, beam, max_steps);
    for ex in examples {
        let Some(gold) = ex.gold_denotation() else {
            outcome.sets.push(Vec::new());
            continue;
        };
        let hyps = beam_search(c, model, &ex.utterance, &cfg)?;
        let mut kept: Vec<Vec<ActionId>> = Vec::new();
        let mut seen: BTreeSet<Vec<u32>> = BTreeSet::new();
        for hyp in hyps.iter().filter(|h| h.finished) {
            let actions = hyp.state.actions();
            if !seen.insert(actions.iter().map(|a| a.0).collect()) {
                continue;
            }
            if consistency(c, kb, &actions, gold)? {
                kept.push(actions);
            }
        }
        if !kept.is_empty() {
            outcome.hits += 1;
        }
        outcome.sets.push(kept);
    }
    outcome.oracle_accuracy = if examples.is_empty() {
        0.0
    } else {
        outcome.hits as f64 / examples.len() as f64
    };
    Ok(outcome)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct MaximizeStats {
    pub epochs: usize,
    /// Examples with no consistent sequence, skipped each epoch.
    pub skipped_examples: usize,
    pub final_objective: f64,
}

/// Gradient ascent on the MML objective over merged example sets for a
/// fixed number of epochs with a fixed step size. Examples are visited in
/// their given order; updates are per example.
pub fn maximize_step(
    model: &mut LogLinearModel,
    merged: &[(String, Vec<Vec<ActionId>>)],
    epochs: usize,
    lr: f64,
) -> MaximizeStats {
    let mut skipped = 0usize;
    for epoch in 0..epochs {
        for (utterance, seqs) in merged {
            match mml_gradient(model, utterance, seqs) {
                Some(grad) => model.apply_gradient(&grad, lr),
                None => {
                    if epoch == 0 {
                        skipped += 1;
                    }
                }
            }
        }
    }
    let (obj, _) = mml_objective(model, merged);
    MaximizeStats {
        epochs,
        skipped_examples: skipped,
        final_objective: obj,
    }
}

/// Maximum-likelihood training on gold action sequences. Every gold
/// sequence must be accepted by the hybrid constraint at every step;
/// violations are reported, since gold data must be constraint-consistent.
pub fn train_strong(
    c: &Constrainer,
    model: &mut LogLinearModel,
    examples: &[(String, Vec<ActionId>)],
    epochs: usize,
    lr: f64,
) -> Result<(), LearnError> {
    let g = c.grammar();
    for (index, (_, actions)) in examples.iter().enumerate() {
        let mut s = IrState::initial();
        for (step, &a) in actions.iter().enumerate() {
            if !c.act_hybr(&s)?.contains(a) {
                return Err(LearnError::GoldViolatesConstraint {
                    index,
                    action: a.0,
                    step,
                });
            }
            s = s.apply_action(g, a)?;
        }
    }
    for _ in 0..epochs {
        for (utterance, actions) in examples {
            let mut grad = Gradient::new();
            model.accumulate_seq_grad(utterance, actions, 1.0, &mut grad);
            model.apply_gradient(&grad, lr);
        }
    }
    Ok(())
}

/// Fraction of examples whose greedy decode executes to the gold
/// denotation.
pub fn evaluate_accuracy(
    c: &Constrainer,
    model: &dyn Scorer,
    kb: &MiniKb,
    examples: &[Example],
    constraint: ConstraintFn,
    max_steps: usize,
) -> Result<f64, LearnError> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let cfg = DecodeConfig::greedy(constraint, max_steps);
    let g = c.grammar();
    let mut hits = 0usize;
    for ex in examples {
        let Some(gold) = ex.gold_denotation() else {
            continue;
        };
        let hyp = greedy_decode(c, model, &ex.utterance, &cfg)?;
        if !hyp.finished {
            continue;
        }
        let lf = hyp.state.to_logical_form(g, TemplateKind::Default)?;
        if execute(&lf, kb)? == *gold {
            hits += 1;
        }
    }
    Ok(hits as f64 / examples.len() as f64)
}

#[derive(Clone, Copy, Debug)]
pub struct WeaksupConfig {
    pub cycles: usize,
    pub beam: usize,
    pub epochs: usize,
    pub lr: f64,
    pub constraint: ConstraintFn,
    pub max_steps: usize,
}

#[derive(Clone, Debug)]
pub struct CycleReport {
    pub oracle_accuracy: f64,
    pub val_accuracy: f64,
    pub objective: f64,
}

#[derive(Clone, Debug)]
pub struct WeaksupReport {
    pub initial_val_accuracy: f64,
    pub cycles: Vec<CycleReport>,
}

impl WeaksupReport {
    pub fn final_val_accuracy(&self) -> f64 {
        self.cycles
            .last()
            .map(|c| c.val_accuracy)
            .unwrap_or(self.initial_val_accuracy)
    }
}

/// The weak-supervision loop: repeat search and maximization for a number
/// of cycles, merging the pre-training examples (as singleton sets) with
/// the searched sets each cycle, and track validation accuracy.
pub fn run_weaksup(
    c: &Constrainer,
    model: &mut LogLinearModel,
    kb: &MiniKb,
    train: &[Example],
    val: &[Example],
    pretrain: &[(String, Vec<ActionId>)],
    cfg: &WeaksupConfig,
) -> Result<WeaksupReport, LearnError> {
    let initial_val_accuracy = evaluate_accuracy(c, model, kb, val, cfg.constraint, cfg.max_steps)?;
    let mut cycles = Vec::with_capacity(cfg.cycles);
    for _ in 0..cfg.cycles {
        let outcome = search_step(c, model, kb, train, cfg.beam, cfg.constraint, cfg.max_steps)?;
        let mut merged: Vec<(String, Vec<Vec<ActionId>>)> = pretrain
            .iter()
            .map(|(x, a)| (x.clone(), vec![a.clone()]))
            .collect();
        for (ex, set) in train.iter().zip(&outcome.sets) {
            merged.push((ex.utterance.clone(), set.clone()));
        }
        let stats = maximize_step(model, &merged, cfg.epochs, cfg.lr);
        let val_accuracy = evaluate_accuracy(c, model, kb, val, cfg.constraint, cfg.max_steps)?;
        cycles.push(CycleReport {
            oracle_accuracy: outcome.oracle_accuracy,
            val_accuracy,
            objective: stats.final_objective,
        });
    }
    Ok(WeaksupReport {
        initial_val_accuracy,
        cycles,
    })
}
