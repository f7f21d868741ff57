//! Grammar-driven constrained decoding for semantic parsing.
//!
//! The engine composes well-typed intermediate representations by applying
//! production-rule actions to the leftmost non-terminal, restricts the
//! generation of knowledge-base elements with per-class candidate-expression
//! tries, and accelerates per-step masking with a type-keyed mask cache.
//! On top of that sit a pluggable scorer interface, greedy and beam search,
//! a toy executor over a miniature KB, and a weakly-supervised training loop
//! that maximizes marginal likelihood over consistent action sequences.
//!
//! Pipeline at a glance:
//!
//! ```text
//! grammar DSL + vocabulary ──► Grammar (action inventory A = rules ∪ tokens ∪ reduce)
//! candidate files          ──► Tries (one per candidate-bearing node class)
//! Grammar + Tries          ──► Constrainer (valid-action functions + mask caches)
//! Constrainer + Scorer     ──► greedy / beam search over action sequences
//! complete IR              ──► logical form ──► denotation (toy executor)
//! ```

pub mod candexpr;
pub mod constrain;
pub mod decode;
pub mod grammar;
pub mod ir;
pub mod learn;
pub mod sexp;
pub mod util;
pub mod vocab;

pub use candexpr::{CandidateSet, Trie};
pub use constrain::{ActionSet, Constrainer, ConstraintFn, MaskCache, MaskTensor};
pub use decode::{beam_search, greedy_decode, DecodeConfig, Hypothesis, Scorer, Strategy};
pub use grammar::{Action, ActionId, ActionKind, Grammar, Modifier, NodeClassId, TypeId};
pub use ir::{IrState, LogicalForm, TemplateKind};
pub use learn::{Denotation, MiniKb};
pub use sexp::Sexp;
pub use vocab::Vocabulary;
