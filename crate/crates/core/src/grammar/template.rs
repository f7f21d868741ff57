//! Logical-form templates.
//!
//! A template is an expression skeleton attached to a node class. Holes are
//! written `@i` (the logical form of child `i`), `@*` (the logical forms of
//! all children, spliced), and `#(fn ...)` (evaluate at expansion time).
//! The evaluator is deliberately tiny: `concat` joins stringified arguments
//! with no separator, `join` takes a separator string first, and `quote`
//! emits its argument verbatim without hole substitution.

use crate::sexp::{Sexp, SexpKind, Span};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq)]
pub enum TemplateNode {
    /// Emitted verbatim.
    Lit(Sexp),
    /// Logical form of child `i` (index into the node's actual children).
    Child(usize),
    /// Logical forms of all children, spliced into the surrounding list.
    SpliceChildren,
    List(Vec<TemplateNode>),
    Eval(EvalFn, Vec<TemplateNode>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EvalFn {
    Concat,
    Join,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Template {
    pub root: TemplateNode,
}

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("{span}: invalid template hole {hole:?} (expected @<index> or @*)")]
    BadHole { span: Span, hole: String },
    #[error("{span}: empty evaluation form")]
    EmptyEval { span: Span },
    #[error("{span}: unknown evaluation function {name:?}")]
    UnknownEvalFn { span: Span, name: String },
    #[error("{span}: quote takes exactly one argument")]
    QuoteArity { span: Span },
}

pub fn compile(body: &Sexp) -> Result<Template, TemplateError> {
    Ok(Template {
        root: compile_node(body)?,
    })
}

fn compile_node(expr: &Sexp) -> Result<TemplateNode, TemplateError> {
    match &expr.kind {
        SexpKind::Str(_) => Ok(TemplateNode::Lit(expr.clone())),
        SexpKind::Symbol(name) => {
            if let Some(rest) = name.strip_prefix('@') {
                if rest == "*" {
                    return Ok(TemplateNode::SpliceChildren);
                }
                return match rest.parse::<usize>() {
                    Ok(i) => Ok(TemplateNode::Child(i)),
                    Err(_) => Err(TemplateError::BadHole {
                        span: expr.span,
                        hole: name.clone(),
                    }),
                };
            }
            Ok(TemplateNode::Lit(expr.clone()))
        }
        SexpKind::List(items) => {
            if items.first().is_some_and(|h| h.as_symbol() == Some("#")) {
                return compile_eval(expr.span, &items[1..]);
            }
            let nodes = items
                .iter()
                .map(compile_node)
                .collect::<Result<Vec<_>, _>>()?;
            Ok(TemplateNode::List(nodes))
        }
    }
}

fn compile_eval(span: Span, items: &[Sexp]) -> Result<TemplateNode, TemplateError> {
    let Some(head) = items.first() else {
        return Err(TemplateError::EmptyEval { span });
    };
    let name = head.as_symbol().unwrap_or("");
    match name {
        "concat" => Ok(TemplateNode::Eval(
            EvalFn::Concat,
            compile_args(&items[1..])?,
        )),
        "join" => Ok(TemplateNode::Eval(EvalFn::Join, compile_args(&items[1..])?)),
        "quote" => {
            if items.len() != 2 {
                return Err(TemplateError::QuoteArity { span });
            }
            Ok(TemplateNode::Lit(items[1].clone()))
        }
        _ => Err(TemplateError::UnknownEvalFn {
            span: head.span,
            name: name.to_string(),
        }),
    }
}

fn compile_args(items: &[Sexp]) -> Result<Vec<TemplateNode>, TemplateError> {
    items
        .iter()
        .map(|item| {
            // (quote x) inside an evaluation form shields x from substitution
            if let Some(list) = item.as_list() {
                if list.len() == 2 && list[0].as_symbol() == Some("quote") {
                    return Ok(TemplateNode::Lit(list[1].clone()));
                }
            }
            compile_node(item)
        })
        .collect()
}
