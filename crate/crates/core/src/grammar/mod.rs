//! Typed production-rule grammar and its derived action inventory.
//!
//! A grammar is a set of node classes over a sub-type hierarchy. Each node
//! class yields one rule action; every vocabulary token yields one nl-token
//! action whose left-hand side is the union type assigned by the nl-token
//! typing rules; the special `reduce` action closes optional and repeated
//! parameter positions. Action ids are dense and deterministic: rule actions
//! in declaration order, then nl-token actions in ascending token id, then
//! `reduce` last.

mod dsl;
mod template;

pub use dsl::parse_grammar;
pub use template::{EvalFn, Template, TemplateError, TemplateNode};

use crate::util::Bitset;
use crate::vocab::{TokenId, Vocabulary};
use std::collections::HashMap;
use std::fmt;

pub use dsl::GrammarError;

/// Index into the grammar's type table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TypeId(pub u32);

/// Index into the grammar's node-class table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeClassId(pub u32);

/// Dense index into the action inventory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActionId(pub u32);

/// Modifier attached to a parameter position, never to a type declaration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modifier {
    None,
    /// Declared after `&optional`: skippable by one `reduce`.
    Optional,
    /// Declared by `&rest`: repeats until `reduce`.
    Repeated,
}

impl Modifier {
    pub fn suffix(&self) -> &'static str {
        match self {
            Modifier::None => "",
            Modifier::Optional => "?",
            Modifier::Repeated => "*",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamType {
    pub ty: TypeId,
    pub modifier: Modifier,
}

/// Sub-type DAG with a precomputed reflexive-transitive closure.
#[derive(Clone, Debug)]
pub struct TypeHierarchy {
    names: Vec<String>,
    index: HashMap<String, TypeId>,
    direct_supers: Vec<Vec<TypeId>>,
    /// `down[t]` = every subtype of `t`, including `t` itself.
    down: Vec<Bitset>,
    roots: Vec<TypeId>,
}

impl TypeHierarchy {
    pub(crate) fn build(
        names: Vec<String>,
        direct_supers: Vec<Vec<TypeId>>,
    ) -> Result<Self, String> {
        let n = names.len();
        let mut index = HashMap::with_capacity(n);
        for (i, name) in names.iter().enumerate() {
            index.insert(name.clone(), TypeId(i as u32));
        }

        // Cycle check: repeatedly peel types with no unresolved supertypes.
        let mut pending: Vec<usize> = direct_supers.iter().map(|s| s.len()).collect();
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (sub, supers) in direct_supers.iter().enumerate() {
            for sup in supers {
                children[sup.0 as usize].push(sub);
            }
        }
        let mut queue: Vec<usize> = (0..n).filter(|&i| pending[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(t) = queue.pop() {
            order.push(t);
            for &c in &children[t] {
                pending[c] -= 1;
                if pending[c] == 0 {
                    queue.push(c);
                }
            }
        }
        if order.len() != n {
            let name = (0..n)
                .find(|&i| pending[i] > 0)
                .map(|i| names[i].clone())
                .unwrap_or_default();
            return Err(name);
        }

        // down[t] = {t} ∪ ⋃ down[sub] for each direct sub; fill in peel order.
        let mut down = vec![Bitset::new(n); n];
        for &t in &order {
            down[t].insert(t);
        }
        // Process subtypes before supertypes: reverse of the peel order is not
        // guaranteed to do that, so iterate to a fixpoint (the DAG is small).
        let mut changed = true;
        while changed {
            changed = false;
            for (sub, supers) in direct_supers.iter().enumerate() {
                for sup in supers {
                    let sub_down = down[sub].clone();
                    let before = down[sup.0 as usize].count();
                    down[sup.0 as usize].union_with(&sub_down);
                    if down[sup.0 as usize].count() != before {
                        changed = true;
                    }
                }
            }
        }

        let roots = (0..n)
            .filter(|&i| direct_supers[i].is_empty())
            .map(|i| TypeId(i as u32))
            .collect();

        Ok(TypeHierarchy {
            names,
            index,
            direct_supers,
            down,
            roots,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, t: TypeId) -> &str {
        &self.names[t.0 as usize]
    }

    pub fn id_of(&self, name: &str) -> Option<TypeId> {
        self.index.get(name).copied()
    }

    /// Types with no declared supertype.
    pub fn roots(&self) -> &[TypeId] {
        &self.roots
    }

    pub fn direct_supers(&self, t: TypeId) -> &[TypeId] {
        &self.direct_supers[t.0 as usize]
    }

    /// Direct (subtype, supertype) edges in declaration order.
    pub fn edges(&self) -> Vec<(TypeId, TypeId)> {
        let mut out = Vec::new();
        for (sub, supers) in self.direct_supers.iter().enumerate() {
            for sup in supers {
                out.push((TypeId(sub as u32), *sup));
            }
        }
        out
    }

    /// True iff `sub` = `sup` or `sub` reaches `sup` via hierarchy edges.
    pub fn is_subtype(&self, sub: TypeId, sup: TypeId) -> bool {
        self.down[sup.0 as usize].contains(sub.0 as usize)
    }

    pub(crate) fn down_closure(&self, t: TypeId) -> &Bitset {
        &self.down[t.0 as usize]
    }
}

#[derive(Clone, Debug)]
pub struct NodeClass {
    pub name: String,
    /// Nonempty; a singleton for ordinary classes. The set form keeps union
    /// return types a plain set/closure query.
    pub return_types: Vec<TypeId>,
    pub params: Vec<ParamType>,
    pub template_default: Template,
    pub template_visual: Option<Template>,
    pub has_candidates: bool,
    return_set: Bitset,
}

impl NodeClass {
    pub fn arity(&self) -> usize {
        self.params.len()
    }

    pub fn template(&self, kind: crate::ir::TemplateKind) -> &Template {
        match kind {
            crate::ir::TemplateKind::Default => &self.template_default,
            crate::ir::TemplateKind::Visual => self
                .template_visual
                .as_ref()
                .unwrap_or(&self.template_default),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionKind {
    /// Expands the leftmost non-terminal with a node-class production.
    Rule(NodeClassId),
    /// Attaches one natural-language token as a leaf child.
    NlToken(TokenId),
    /// Skips an optional position or terminates a repeated position.
    Reduce,
}

#[derive(Clone, Debug)]
pub struct Action {
    pub id: ActionId,
    pub kind: ActionKind,
    /// Left-hand-side type set; empty for `reduce`.
    lhs: Bitset,
}

impl Action {
    pub fn lhs_types(&self) -> impl Iterator<Item = TypeId> + '_ {
        self.lhs.iter().map(|i| TypeId(i as u32))
    }
}

/// Rules mapping tokens to the return types of their nl-token actions:
/// a base set shared by every token plus pattern-triggered additions.
#[derive(Clone, Debug, Default)]
pub struct NlTokenTyping {
    pub base: Vec<TypeId>,
    pub patterns: Vec<NlTokenPattern>,
}

#[derive(Clone, Debug)]
pub struct NlTokenPattern {
    pub source: String,
    pub regex: regex::Regex,
    pub types: Vec<TypeId>,
}

#[derive(Clone, Debug)]
pub struct Grammar {
    hierarchy: TypeHierarchy,
    classes: Vec<NodeClass>,
    class_index: HashMap<String, NodeClassId>,
    vocab: Vocabulary,
    actions: Vec<Action>,
    root_type: TypeId,
    nl_typing: NlTokenTyping,
    /// Union of all nl-token return sets; the single set used by the
    /// weakened-union constraint function.
    nlt_universal: Bitset,
    subtype_inference: bool,
    lints: Vec<String>,
}

impl Grammar {
    pub(crate) fn assemble(
        hierarchy: TypeHierarchy,
        classes: Vec<NodeClass>,
        vocab: Vocabulary,
        root_type: TypeId,
        nl_typing: NlTokenTyping,
        subtype_inference: bool,
        lints: Vec<String>,
    ) -> Grammar {
        let mut class_index = HashMap::with_capacity(classes.len());
        for (i, c) in classes.iter().enumerate() {
            class_index.insert(c.name.clone(), NodeClassId(i as u32));
        }

        let n_types = hierarchy.len();
        let mut actions = Vec::with_capacity(classes.len() + vocab.len() + 1);
        for (i, c) in classes.iter().enumerate() {
            actions.push(Action {
                id: ActionId(i as u32),
                kind: ActionKind::Rule(NodeClassId(i as u32)),
                lhs: c.return_set.clone(),
            });
        }
        let mut universal = Bitset::new(n_types);
        for (tok, text) in vocab.iter() {
            let mut lhs = Bitset::new(n_types);
            for t in &nl_typing.base {
                lhs.insert(t.0 as usize);
            }
            for pat in &nl_typing.patterns {
                if pat.regex.is_match(text) {
                    for t in &pat.types {
                        lhs.insert(t.0 as usize);
                    }
                }
            }
            universal.union_with(&lhs);
            actions.push(Action {
                id: ActionId((classes.len() + tok as usize) as u32),
                kind: ActionKind::NlToken(tok),
                lhs,
            });
        }
        actions.push(Action {
            id: ActionId((classes.len() + vocab.len()) as u32),
            kind: ActionKind::Reduce,
            lhs: Bitset::new(n_types),
        });

        Grammar {
            hierarchy,
            classes,
            class_index,
            vocab,
            actions,
            root_type,
            nl_typing,
            nlt_universal: universal,
            subtype_inference,
            lints,
        }
    }

    pub fn hierarchy(&self) -> &TypeHierarchy {
        &self.hierarchy
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn root_type(&self) -> TypeId {
        self.root_type
    }

    pub fn lints(&self) -> &[String] {
        &self.lints
    }

    pub fn nl_typing(&self) -> &NlTokenTyping {
        &self.nl_typing
    }

    pub fn subtype_inference(&self) -> bool {
        self.subtype_inference
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn num_rule_actions(&self) -> usize {
        self.classes.len()
    }

    pub fn num_token_actions(&self) -> usize {
        self.vocab.len()
    }

    pub fn reduce_id(&self) -> ActionId {
        ActionId((self.actions.len() - 1) as u32)
    }

    pub fn action(&self, id: ActionId) -> &Action {
        &self.actions[id.0 as usize]
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn action_for_class(&self, c: NodeClassId) -> ActionId {
        ActionId(c.0)
    }

    pub fn action_for_token(&self, t: TokenId) -> ActionId {
        ActionId((self.classes.len() + t as usize) as u32)
    }

    pub fn class(&self, id: NodeClassId) -> &NodeClass {
        &self.classes[id.0 as usize]
    }

    pub fn classes(&self) -> &[NodeClass] {
        &self.classes
    }

    pub fn class_by_name(&self, name: &str) -> Option<NodeClassId> {
        self.class_index.get(name).copied()
    }

    pub fn type_name(&self, t: TypeId) -> &str {
        self.hierarchy.name(t)
    }

    pub fn is_subtype(&self, sub: TypeId, sup: TypeId) -> bool {
        self.hierarchy.is_subtype(sub, sup)
    }

    /// Sub-type query by name, with an error for unknown types.
    pub fn is_subtype_by_name(&self, sub: &str, sup: &str) -> Result<bool, String> {
        let a = self
            .hierarchy
            .id_of(sub)
            .ok_or_else(|| format!("unknown type {sub:?}"))?;
        let b = self
            .hierarchy
            .id_of(sup)
            .ok_or_else(|| format!("unknown type {sup:?}"))?;
        Ok(self.is_subtype(a, b))
    }

    /// True iff some member of the action's left-hand-side set is a sub-type
    /// of `nt` (or equals it exactly when sub-type inference is disabled).
    /// `reduce` compatibility is modifier-based and checked by callers at
    /// the IR level, so it is `false` here.
    pub fn compatible(&self, action: ActionId, nt: TypeId) -> bool {
        let a = &self.actions[action.0 as usize];
        match a.kind {
            ActionKind::Reduce => false,
            _ => {
                if self.subtype_inference {
                    a.lhs.intersects(self.hierarchy.down_closure(nt))
                } else {
                    a.lhs.contains(nt.0 as usize)
                }
            }
        }
    }

    /// Like `compatible`, but with every nl-token left-hand side replaced by
    /// the single universal union set.
    pub fn compatible_weak_union(&self, action: ActionId, nt: TypeId) -> bool {
        let a = &self.actions[action.0 as usize];
        match a.kind {
            ActionKind::Reduce => false,
            ActionKind::NlToken(_) => {
                if self.subtype_inference {
                    self.nlt_universal
                        .intersects(self.hierarchy.down_closure(nt))
                } else {
                    self.nlt_universal.contains(nt.0 as usize)
                }
            }
            ActionKind::Rule(_) => self.compatible(action, nt),
        }
    }

    /// Types that can label a node position in some derivation from the
    /// root: the root itself, the usable return types of every applicable
    /// class or nl-token action, and the parameter types those classes open
    /// up as new non-terminals.
    pub fn reachable_types(&self) -> Bitset {
        let n = self.hierarchy.len();
        let mut reach = Bitset::new(n);
        let mut nt_seen = Bitset::new(n);
        let mut nt_stack = vec![self.root_type.0 as usize];
        reach.insert(self.root_type.0 as usize);
        while let Some(nt) = nt_stack.pop() {
            if !nt_seen.insert(nt) {
                continue;
            }
            let down = self.hierarchy.down_closure(TypeId(nt as u32));
            for c in &self.classes {
                if !c.return_set.intersects(down) {
                    continue;
                }
                for t in &c.return_types {
                    if down.contains(t.0 as usize) {
                        reach.insert(t.0 as usize);
                    }
                }
                for p in &c.params {
                    reach.insert(p.ty.0 as usize);
                    nt_stack.push(p.ty.0 as usize);
                }
            }
            for t in self.nlt_universal.iter() {
                if down.contains(t) {
                    reach.insert(t);
                }
            }
        }
        reach
    }

    /// Human-readable production shape, e.g. `<ent-set> -> (find <kp-entity>*)`
    /// or `<op-color> -> red` for a parameterless class.
    pub fn action_display(&self, id: ActionId) -> String {
        let a = &self.actions[id.0 as usize];
        match a.kind {
            ActionKind::Reduce => "reduce".to_string(),
            ActionKind::NlToken(tok) => {
                let lhs = a
                    .lhs_types()
                    .map(|t| self.type_name(t))
                    .collect::<Vec<_>>()
                    .join("|");
                format!("<{}> -> (nl-token {:?})", lhs, self.vocab.token(tok))
            }
            ActionKind::Rule(cid) => {
                let c = self.class(cid);
                let lhs = c
                    .return_types
                    .iter()
                    .map(|t| self.type_name(*t))
                    .collect::<Vec<_>>()
                    .join("|");
                if c.params.is_empty() {
                    format!("<{}> -> {}", lhs, c.name)
                } else {
                    let params = c
                        .params
                        .iter()
                        .map(|p| format!("<{}>{}", self.type_name(p.ty), p.modifier.suffix()))
                        .collect::<Vec<_>>()
                        .join(" ");
                    format!("<{}> -> ({} {})", lhs, c.name, params)
                }
            }
        }
    }

    /// Variant of this grammar with sub-type inference disabled: compatibility
    /// becomes exact type equality and one conversion class per direct
    /// hierarchy edge is appended, producing `<super> -> (<sub-expression>)`
    /// chains explicitly. Logical forms are unchanged because conversion
    /// templates are the identity hole `@0`.
    pub fn with_materialized_conversions(&self) -> Grammar {
        let mut classes = self.classes.clone();
        let identity = Template {
            root: TemplateNode::Child(0),
        };
        let n_types = self.hierarchy.len();
        let mut edges = self.hierarchy.edges();
        edges.sort_by_key(|(sub, sup)| (sup.0, sub.0));
        for (sub, sup) in edges {
            let name = format!("{}>{}", self.hierarchy.name(sup), self.hierarchy.name(sub));
            debug_assert!(!self.class_index.contains_key(&name));
            let mut return_set = Bitset::new(n_types);
            return_set.insert(sup.0 as usize);
            classes.push(NodeClass {
                name,
                return_types: vec![sup],
                params: vec![ParamType {
                    ty: sub,
                    modifier: Modifier::None,
                }],
                template_default: identity.clone(),
                template_visual: Some(identity.clone()),
                has_candidates: false,
                return_set,
            });
        }
        Grammar::assemble(
            self.hierarchy.clone(),
            classes,
            self.vocab.clone(),
            self.root_type,
            self.nl_typing.clone(),
            false,
            self.lints.clone(),
        )
    }

    pub(crate) fn make_class(
        name: String,
        return_types: Vec<TypeId>,
        params: Vec<ParamType>,
        template_default: Template,
        template_visual: Option<Template>,
        has_candidates: bool,
        n_types: usize,
    ) -> NodeClass {
        let mut return_set = Bitset::new(n_types);
        for t in &return_types {
            return_set.insert(t.0 as usize);
        }
        NodeClass {
            name,
            return_types,
            params,
            template_default,
            template_visual,
            has_candidates,
            return_set,
        }
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
