//! Grammar definition language.
//!
//! A grammar file is a sequence of S-expression forms:
//!
//! ```text
//! (define-types <root-type> (<sub> <super>...)* )
//! (define-action <name>
//!   (act-type <type>...)
//!   (param-types <type>... [&optional <type>...] [&rest <type>])
//!   (expr-dict (default <template>) [(visual <template>)])
//!   [(arg-candidate true|false)])
//! (define-nl-token-typing [(base <type>...)] (pattern "<regex>" <type>...)* )
//! ```
//!
//! The byte-level format reference lives in `docs/formats.md`.

use super::template::{self, Template, TemplateError};
use super::{
    Grammar, Modifier, NlTokenPattern, NlTokenTyping, NodeClass, ParamType, TypeHierarchy, TypeId,
};
use crate::sexp::{self, Sexp, SexpError, Span};
use crate::vocab::Vocabulary;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("grammar syntax error: {0}")]
    Syntax(#[from] SexpError),
    #[error("{span}: expected a top-level definition form, found {found}")]
    NotADefinition { span: Span, found: String },
    #[error("{span}: unknown definition keyword {keyword:?}")]
    UnknownKeyword { span: Span, keyword: String },
    #[error("missing define-types form (the grammar must declare its types and root)")]
    MissingDefineTypes,
    #[error("{span}: duplicate define-types form")]
    DuplicateDefineTypes { span: Span },
    #[error("{span}: duplicate define-nl-token-typing form")]
    DuplicateNlTokenTyping { span: Span },
    #[error("{span}: duplicate node-class name {name:?}")]
    DuplicateClass { span: Span, name: String },
    #[error("{span}: unknown type reference {name:?} (types must be declared in define-types)")]
    UnknownType { span: Span, name: String },
    #[error("{span}: &rest must be followed by exactly one type and come last")]
    RestNotLast { span: Span },
    #[error("{span}: &optional parameters must form the suffix of the parameter list")]
    OptionalNotSuffix { span: Span },
    #[error("type hierarchy contains a cycle through {name:?}")]
    CyclicHierarchy { name: String },
    #[error("{span}: malformed {what}")]
    Malformed { span: Span, what: String },
    #[error("{span}: node class {name:?} has no default template")]
    MissingDefaultTemplate { span: Span, name: String },
    #[error("template error: {0}")]
    Template(#[from] TemplateError),
    #[error("{span}: invalid pattern: {message}")]
    BadPattern { span: Span, message: String },
    #[error("{span}: arg-candidate class {name:?} must have exactly one &rest parameter")]
    CandidateClassShape { span: Span, name: String },
}

fn malformed(span: Span, what: impl Into<String>) -> GrammarError {
    GrammarError::Malformed {
        span,
        what: what.into(),
    }
}

fn expect_symbol<'a>(item: &'a Sexp, what: &str) -> Result<&'a str, GrammarError> {
    item.as_symbol()
        .ok_or_else(|| malformed(item.span, format!("{what}: expected a symbol")))
}

struct TypeTable {
    names: Vec<String>,
    index: HashMap<String, TypeId>,
}

impl TypeTable {
    fn declare(&mut self, name: &str) -> TypeId {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = TypeId(self.names.len() as u32);
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    fn lookup(&self, item: &Sexp) -> Result<TypeId, GrammarError> {
        let name = expect_symbol(item, "type reference")?;
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| GrammarError::UnknownType {
                span: item.span,
                name: name.to_string(),
            })
    }
}

/// Parses the grammar DSL against a fixed vocabulary and derives the action
/// inventory: one rule action per node class in declaration order, one
/// nl-token action per vocabulary token in ascending token id, and the
/// reserved `reduce` action last.
pub fn parse_grammar(dsl_text: &str, vocab: Vocabulary) -> Result<Grammar, GrammarError> {
    let forms = sexp::parse_many(dsl_text)?;

    let mut types_form: Option<&Sexp> = None;
    let mut typing_form: Option<&Sexp> = None;
    let mut action_forms: Vec<&Sexp> = Vec::new();

    for form in &forms {
        let items = form.as_list().ok_or_else(|| GrammarError::NotADefinition {
            span: form.span,
            found: form.print(),
        })?;
        let head = items.first().and_then(|h| h.as_symbol()).ok_or_else(|| {
            GrammarError::NotADefinition {
                span: form.span,
                found: form.print(),
            }
        })?;
        match head {
            "define-types" => {
                if types_form.is_some() {
                    return Err(GrammarError::DuplicateDefineTypes { span: form.span });
                }
                types_form = Some(form);
            }
            "define-nl-token-typing" => {
                if typing_form.is_some() {
                    return Err(GrammarError::DuplicateNlTokenTyping { span: form.span });
                }
                typing_form = Some(form);
            }
            "define-action" => action_forms.push(form),
            other => {
                return Err(GrammarError::UnknownKeyword {
                    span: form.span,
                    keyword: other.to_string(),
                })
            }
        }
    }

    let types_form = types_form.ok_or(GrammarError::MissingDefineTypes)?;
    let (table, supers, root) = parse_define_types(types_form)?;

    let hierarchy = TypeHierarchy::build(table.names.clone(), supers)
        .map_err(|name| GrammarError::CyclicHierarchy { name })?;

    let nl_typing = match typing_form {
        Some(form) => parse_nl_typing(form, &table)?,
        None => NlTokenTyping::default(),
    };

    let mut lints = Vec::new();
    let mut classes: Vec<NodeClass> = Vec::new();
    let mut seen = HashMap::new();
    for form in action_forms {
        let class = parse_define_action(form, &table, &mut lints)?;
        if let Some(_prev) = seen.insert(class.name.clone(), ()) {
            return Err(GrammarError::DuplicateClass {
                span: form.span,
                name: class.name,
            });
        }
        classes.push(class);
    }

    Ok(Grammar::assemble(
        hierarchy, classes, vocab, root, nl_typing, true, lints,
    ))
}

/// `(define-types <root> <entry>*)`; an entry is `(<type>)` for a standalone
/// type or `(<sub> <super>...)` for hierarchy edges. Every symbol appearing
/// in the form is declared, in order of first appearance.
fn parse_define_types(form: &Sexp) -> Result<(TypeTable, Vec<Vec<TypeId>>, TypeId), GrammarError> {
    let items = form.as_list().unwrap();
    let mut table = TypeTable {
        names: Vec::new(),
        index: HashMap::new(),
    };
    let root_item = items
        .get(1)
        .ok_or_else(|| malformed(form.span, "define-types: missing root type"))?;
    let root_name = expect_symbol(root_item, "define-types root")?;
    let root = table.declare(root_name);

    let mut supers_by_type: Vec<Vec<TypeId>> = vec![Vec::new()];
    for entry in &items[2..] {
        let parts = entry
            .as_list()
            .ok_or_else(|| malformed(entry.span, "define-types entry: expected a list"))?;
        if parts.is_empty() {
            return Err(malformed(entry.span, "define-types entry: empty"));
        }
        let sub_name = expect_symbol(&parts[0], "define-types entry")?;
        let sub = table.declare(sub_name);
        if supers_by_type.len() <= sub.0 as usize {
            supers_by_type.resize(sub.0 as usize + 1, Vec::new());
        }
        for sup_item in &parts[1..] {
            let sup_name = expect_symbol(sup_item, "define-types supertype")?;
            let sup = table.declare(sup_name);
            if supers_by_type.len() <= sup.0 as usize {
                supers_by_type.resize(sup.0 as usize + 1, Vec::new());
            }
            if !supers_by_type[sub.0 as usize].contains(&sup) {
                supers_by_type[sub.0 as usize].push(sup);
            }
        }
    }
    supers_by_type.resize(table.names.len(), Vec::new());
    Ok((table, supers_by_type, root))
}

fn parse_nl_typing(form: &Sexp, table: &TypeTable) -> Result<NlTokenTyping, GrammarError> {
    let items = form.as_list().unwrap();
    let mut typing = NlTokenTyping::default();
    let mut saw_base = false;
    for entry in &items[1..] {
        let parts = entry
            .as_list()
            .ok_or_else(|| malformed(entry.span, "nl-token-typing entry: expected a list"))?;
        let head = parts
            .first()
            .and_then(|h| h.as_symbol())
            .ok_or_else(|| malformed(entry.span, "nl-token-typing entry"))?;
        match head {
            "base" => {
                if saw_base {
                    return Err(malformed(entry.span, "duplicate base entry"));
                }
                saw_base = true;
                for t in &parts[1..] {
                    typing.base.push(table.lookup(t)?);
                }
            }
            "pattern" => {
                let pat = parts
                    .get(1)
                    .and_then(|p| p.as_str())
                    .ok_or_else(|| malformed(entry.span, "pattern: expected a regex string"))?;
                let regex = regex::Regex::new(pat).map_err(|e| GrammarError::BadPattern {
                    span: parts[1].span,
                    message: e.to_string(),
                })?;
                if parts.len() < 3 {
                    return Err(malformed(entry.span, "pattern: expected at least one type"));
                }
                let mut types = Vec::new();
                for t in &parts[2..] {
                    types.push(table.lookup(t)?);
                }
                typing.patterns.push(NlTokenPattern {
                    source: pat.to_string(),
                    regex,
                    types,
                });
            }
            other => {
                return Err(malformed(
                    entry.span,
                    format!("nl-token-typing entry {other:?}"),
                ))
            }
        }
    }
    Ok(typing)
}

fn parse_define_action(
    form: &Sexp,
    table: &TypeTable,
    lints: &mut Vec<String>,
) -> Result<NodeClass, GrammarError> {
    let items = form.as_list().unwrap();
    let name_item = items
        .get(1)
        .ok_or_else(|| malformed(form.span, "define-action: missing class name"))?;
    let name = expect_symbol(name_item, "define-action name")?.to_string();

    let mut return_types: Option<Vec<TypeId>> = None;
    let mut params: Option<Vec<ParamType>> = None;
    let mut template_default: Option<Template> = None;
    let mut template_visual: Option<Template> = None;
    let mut has_candidates = false;

    for section in &items[2..] {
        let parts = section
            .as_list()
            .ok_or_else(|| malformed(section.span, "define-action section: expected a list"))?;
        let head = parts
            .first()
            .and_then(|h| h.as_symbol())
            .ok_or_else(|| malformed(section.span, "define-action section"))?;
        match head {
            "act-type" => {
                if parts.len() < 2 {
                    return Err(malformed(
                        section.span,
                        "act-type: expected at least one type",
                    ));
                }
                let mut ts = Vec::new();
                for t in &parts[1..] {
                    ts.push(table.lookup(t)?);
                }
                if ts.len() > 1 {
                    lints.push(format!(
                        "node class {name:?} has a union return type; unions are normally reserved for nl-token classes"
                    ));
                }
                return_types = Some(ts);
            }
            "param-types" => {
                params = Some(parse_param_types(section.span, &parts[1..], table)?);
            }
            "expr-dict" => {
                for entry in &parts[1..] {
                    let kv = entry
                        .as_list()
                        .ok_or_else(|| malformed(entry.span, "expr-dict entry"))?;
                    if kv.len() != 2 {
                        return Err(malformed(
                            entry.span,
                            "expr-dict entry: expected (key template)",
                        ));
                    }
                    let key = expect_symbol(&kv[0], "expr-dict key")?;
                    let tmpl = template::compile(&kv[1])?;
                    match key {
                        "default" => {
                            if template_default.replace(tmpl).is_some() {
                                return Err(malformed(entry.span, "duplicate default template"));
                            }
                        }
                        "visual" => {
                            if template_visual.replace(tmpl).is_some() {
                                return Err(malformed(entry.span, "duplicate visual template"));
                            }
                        }
                        other => {
                            return Err(malformed(
                                kv[0].span,
                                format!("expr-dict key {other:?} (expected default or visual)"),
                            ))
                        }
                    }
                }
            }
            "arg-candidate" => {
                let flag = parts.get(1).and_then(|f| f.as_symbol()).ok_or_else(|| {
                    malformed(section.span, "arg-candidate: expected true or false")
                })?;
                has_candidates = match flag {
                    "true" => true,
                    "false" => false,
                    _ => {
                        return Err(malformed(
                            section.span,
                            "arg-candidate: expected true or false",
                        ))
                    }
                };
            }
            other => {
                return Err(malformed(
                    section.span,
                    format!("define-action section {other:?}"),
                ))
            }
        }
    }

    let return_types = return_types.ok_or_else(|| {
        malformed(
            form.span,
            format!("define-action {name:?}: missing act-type"),
        )
    })?;
    let params = params.unwrap_or_default();
    let template_default = template_default.ok_or(GrammarError::MissingDefaultTemplate {
        span: form.span,
        name: name.clone(),
    })?;

    if has_candidates && !(params.len() == 1 && params[0].modifier == Modifier::Repeated) {
        return Err(GrammarError::CandidateClassShape {
            span: form.span,
            name,
        });
    }

    Ok(Grammar::make_class(
        name,
        return_types,
        params,
        template_default,
        template_visual,
        has_candidates,
        table.names.len(),
    ))
}

/// Parses a parameter list in lambda-list style: plain types, then an
/// optional `&optional` section, or a final `&rest <type>`.
fn parse_param_types(
    span: Span,
    items: &[Sexp],
    table: &TypeTable,
) -> Result<Vec<ParamType>, GrammarError> {
    #[derive(PartialEq)]
    enum Mode {
        Plain,
        Optional,
        Rest,
        AfterRest,
    }
    let mut mode = Mode::Plain;
    let mut out = Vec::new();
    for item in items {
        match item.as_symbol() {
            Some("&optional") => {
                if mode != Mode::Plain {
                    return Err(GrammarError::OptionalNotSuffix { span: item.span });
                }
                mode = Mode::Optional;
            }
            Some("&rest") => {
                // optional parameters must be the suffix, so &rest cannot
                // follow them
                if mode == Mode::Optional {
                    return Err(GrammarError::OptionalNotSuffix { span: item.span });
                }
                if mode != Mode::Plain {
                    return Err(GrammarError::RestNotLast { span: item.span });
                }
                mode = Mode::Rest;
            }
            _ => {
                let ty = table.lookup(item)?;
                match mode {
                    Mode::Plain => out.push(ParamType {
                        ty,
                        modifier: Modifier::None,
                    }),
                    Mode::Optional => out.push(ParamType {
                        ty,
                        modifier: Modifier::Optional,
                    }),
                    Mode::Rest => {
                        out.push(ParamType {
                            ty,
                            modifier: Modifier::Repeated,
                        });
                        mode = Mode::AfterRest;
                    }
                    Mode::AfterRest => return Err(GrammarError::RestNotLast { span: item.span }),
                }
            }
        }
    }
    if mode == Mode::Rest {
        return Err(GrammarError::RestNotLast { span });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::ActionKind;

    fn vocab(tokens: &[&str]) -> Vocabulary {
        Vocabulary::from_tokens(tokens.iter().map(|t| t.to_string()).collect()).unwrap()
    }

    const TINY: &str = r#"
        (define-types result (ent-set result) (kp-entity))
        (define-action find
          (act-type ent-set)
          (param-types &rest kp-entity)
          (expr-dict (default (find #(join " " @*))))
          (arg-candidate true))
        (define-nl-token-typing (base kp-entity))
    "#;

    #[test]
    fn builds_inventory_in_declared_order() {
        let g = parse_grammar(TINY, vocab(&["red", "apple"])).unwrap();
        assert_eq!(g.num_rule_actions(), 1);
        assert_eq!(g.num_token_actions(), 2);
        assert_eq!(g.num_actions(), 4);
        assert!(matches!(
            g.action(crate::grammar::ActionId(0)).kind,
            ActionKind::Rule(_)
        ));
        assert!(matches!(
            g.action(crate::grammar::ActionId(1)).kind,
            ActionKind::NlToken(0)
        ));
        assert!(matches!(g.action(g.reduce_id()).kind, ActionKind::Reduce));
    }

    #[test]
    fn zero_parameter_class_displays_as_bare_production() {
        let dsl = r#"
            (define-types t)
            (define-action c (act-type t) (param-types) (expr-dict (default c)))
        "#;
        let g = parse_grammar(dsl, vocab(&[])).unwrap();
        assert_eq!(g.action_display(crate::grammar::ActionId(0)), "<t> -> c");
    }

    #[test]
    fn rejects_duplicate_class() {
        let dsl = r#"
            (define-types t)
            (define-action c (act-type t) (expr-dict (default c)))
            (define-action c (act-type t) (expr-dict (default c)))
        "#;
        assert!(matches!(
            parse_grammar(dsl, vocab(&[])),
            Err(GrammarError::DuplicateClass { .. })
        ));
    }

    #[test]
    fn rejects_unknown_type_with_location() {
        let dsl = "(define-types t)\n(define-action c (act-type nope) (expr-dict (default c)))";
        match parse_grammar(dsl, vocab(&[])) {
            Err(GrammarError::UnknownType { span, name }) => {
                assert_eq!(name, "nope");
                assert_eq!(span.line, 2);
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn rejects_rest_not_last() {
        let dsl = r#"
            (define-types t)
            (define-action c (act-type t) (param-types &rest t t) (expr-dict (default c)))
        "#;
        assert!(matches!(
            parse_grammar(dsl, vocab(&[])),
            Err(GrammarError::RestNotLast { .. })
        ));
    }

    #[test]
    fn rejects_optional_before_plain_or_rest() {
        let dsl = r#"
            (define-types t)
            (define-action c (act-type t) (param-types &optional t &rest t) (expr-dict (default c)))
        "#;
        assert!(matches!(
            parse_grammar(dsl, vocab(&[])),
            Err(GrammarError::OptionalNotSuffix { .. })
        ));
    }

    #[test]
    fn rejects_cyclic_hierarchy() {
        let dsl = "(define-types a (a b) (b c) (c a))";
        assert!(matches!(
            parse_grammar(dsl, vocab(&[])),
            Err(GrammarError::CyclicHierarchy { .. })
        ));
    }

    #[test]
    fn rejects_malformed_sexp() {
        assert!(matches!(
            parse_grammar("(define-types t", vocab(&[])),
            Err(GrammarError::Syntax(_))
        ));
    }

    #[test]
    fn candidate_class_requires_single_rest_param() {
        let dsl = r#"
            (define-types t (u t))
            (define-action c (act-type t) (param-types u u)
              (expr-dict (default (c @0 @1))) (arg-candidate true))
        "#;
        assert!(matches!(
            parse_grammar(dsl, vocab(&[])),
            Err(GrammarError::CandidateClassShape { .. })
        ));
    }

    #[test]
    fn union_return_type_on_rule_class_is_linted_not_rejected() {
        let dsl = r#"
            (define-types t (u) (v))
            (define-action c (act-type u v) (expr-dict (default c)))
        "#;
        let g = parse_grammar(dsl, vocab(&[])).unwrap();
        assert_eq!(g.lints().len(), 1);
        assert!(g.lints()[0].contains("union return type"));
    }

    #[test]
    fn subtype_queries_use_the_closure() {
        let dsl = "(define-types result (mid result) (leaf mid) (other))";
        let g = parse_grammar(dsl, vocab(&[])).unwrap();
        assert!(g.is_subtype_by_name("leaf", "result").unwrap());
        assert!(g.is_subtype_by_name("leaf", "leaf").unwrap());
        assert!(!g.is_subtype_by_name("result", "leaf").unwrap());
        assert!(!g.is_subtype_by_name("other", "result").unwrap());
        assert!(g.is_subtype_by_name("nope", "result").is_err());
    }

    #[test]
    fn query_style_subtype_applies_at_the_supertype_slot() {
        let dsl = r#"
            (define-types result (result-rel-q-value result))
            (define-action query-rel-qualifier
              (act-type result-rel-q-value)
              (expr-dict (default query-rel-qualifier)))
        "#;
        let g = parse_grammar(dsl, vocab(&[])).unwrap();
        assert!(g
            .is_subtype_by_name("result-rel-q-value", "result")
            .unwrap());
        let root = g.root_type();
        assert!(g.compatible(crate::grammar::ActionId(0), root));
    }

    #[test]
    fn multiple_supertypes_are_allowed() {
        let dsl = "(define-types root (a root) (b root) (c a b))";
        let g = parse_grammar(dsl, vocab(&[])).unwrap();
        assert!(g.is_subtype_by_name("c", "a").unwrap());
        assert!(g.is_subtype_by_name("c", "b").unwrap());
        assert!(g.is_subtype_by_name("c", "root").unwrap());
    }

    #[test]
    fn nl_token_typing_assigns_base_plus_pattern_types() {
        let dsl = r#"
            (define-types r (kp) (vq) (vy))
            (define-nl-token-typing
              (base kp)
              (pattern "^[0-9]+$" vq vy)
              (pattern "^\\.$" vq))
        "#;
        let g = parse_grammar(dsl, vocab(&["country", "7", "."])).unwrap();
        let name_set = |tok: u32| -> Vec<String> {
            g.action(g.action_for_token(tok))
                .lhs_types()
                .map(|t| g.type_name(t).to_string())
                .collect()
        };
        assert_eq!(name_set(0), vec!["kp"]);
        assert_eq!(name_set(1), vec!["kp", "vq", "vy"]);
        assert_eq!(name_set(2), vec!["kp", "vq"]);
    }

    #[test]
    fn inventory_is_bit_identical_across_parses() {
        let v = vocab(&["red", "apple"]);
        let g1 = parse_grammar(TINY, v.clone()).unwrap();
        let g2 = parse_grammar(TINY, v).unwrap();
        let dump = |g: &Grammar| -> Vec<String> {
            (0..g.num_actions())
                .map(|i| g.action_display(crate::grammar::ActionId(i as u32)))
                .collect()
        };
        assert_eq!(dump(&g1), dump(&g2));
    }

    #[test]
    fn materialized_conversions_add_one_class_per_edge() {
        let dsl = r#"
            (define-types result (ent-set result) (num-result result))
            (define-action f (act-type ent-set) (expr-dict (default f)))
        "#;
        let g = parse_grammar(dsl, vocab(&[])).unwrap();
        let m = g.with_materialized_conversions();
        assert_eq!(m.num_rule_actions(), g.num_rule_actions() + 2);
        assert!(!m.subtype_inference());
        // under exact matching the original class no longer applies at root
        let root = m.root_type();
        assert!(!m.compatible(crate::grammar::ActionId(0), root));
        let conv = m.class_by_name("result>ent-set").unwrap();
        assert!(m.compatible(m.action_for_class(conv), root));
    }
}
