//! Persistent intermediate representations.
//!
//! A partial IR is stored as an immutable linked stack of open nodes and
//! completed sub-expressions. Applying an action never mutates the input
//! state: the successor shares the predecessor's cells, so branching a beam
//! requires no copying. The innermost open node owns the leftmost
//! non-terminal; when a node's parameter list is exhausted it is popped and
//! re-attached as a completed sub-expression, cascading upward.

use crate::grammar::{
    ActionId, ActionKind, EvalFn, Grammar, Modifier, NodeClassId, ParamType, Template,
    TemplateNode, TypeId,
};
use crate::sexp::{self, Sexp};
use crate::vocab::TokenId;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// Which logical-form template family to expand with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TemplateKind {
    Default,
    Visual,
}

/// A completed sub-expression.
#[derive(Debug, PartialEq, Eq)]
pub enum Node {
    Class {
        class: NodeClassId,
        children: Vec<Arc<Node>>,
    },
    Token(TokenId),
}

#[derive(Debug)]
enum CellItem {
    /// Bottom sentinel that owns the root non-terminal.
    Root,
    /// An open node awaiting children.
    Open(NodeClassId),
    /// A completed child of the nearest open node below.
    Done(Arc<Node>),
    /// A reduce skipped one optional position of the open node below.
    Skip,
    /// A reduce terminated the repeated position of the open node below.
    EndRest,
}

#[derive(Debug)]
struct Cell {
    item: CellItem,
    below: Option<Arc<Cell>>,
}

#[derive(Debug)]
struct HistCell {
    action: ActionId,
    prev: Option<Arc<HistCell>>,
}

/// An immutable partial intermediate representation.
///
/// States must be queried with the grammar that produced their actions.
#[derive(Clone, Debug)]
pub struct IrState {
    top: Arc<Cell>,
    len: u32,
    history: Option<Arc<HistCell>>,
}

/// The leftmost non-terminal: the first unexpanded typed placeholder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NonTerminal {
    pub ty: TypeId,
    pub modifier: Modifier,
}

/// View of the open node owning the leftmost non-terminal. `class` is
/// `None` for the synthetic root holder of the initial state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParentView {
    pub class: Option<NodeClassId>,
    pub children: usize,
    /// Token ids of the nl-token children, in order. For candidate-bearing
    /// classes this is the prefix handed to the class trie.
    pub token_prefix: Vec<TokenId>,
}

/// One open node on the path from the root holder to the leftmost
/// non-terminal's owner.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpenFrame {
    /// `None` for the synthetic root holder.
    pub class: Option<NodeClassId>,
    /// Next parameter position of this node.
    pub pos: usize,
    /// Whether an open descendant currently occupies position `pos`.
    pub has_open_child: bool,
    /// Token children accumulated so far, in order.
    pub token_prefix: Vec<TokenId>,
}

#[derive(Debug, Error, PartialEq)]
pub enum IrError {
    #[error("state is already complete")]
    StateComplete,
    #[error("state is not complete")]
    StateIncomplete,
    #[error("action {action} is incompatible with leftmost non-terminal <{nt}>")]
    IncompatibleAction { action: u32, nt: String },
    #[error("reduce applied to a non-optional, non-repeated non-terminal <{nt}>")]
    ReduceAtPlainPosition { nt: String },
    #[error("template hole @{index} out of range for node with {children} children")]
    HoleOutOfRange { index: usize, children: usize },
    #[error("template evaluation failed: {message}")]
    EvalFailure { message: String },
    #[error("template produced {produced} expressions where one was expected")]
    TemplateShape { produced: usize },
}

/// An executable expression: a tree of symbols and string literals that
/// prints to balanced-parenthesis text via the canonical printer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LogicalForm(pub Sexp);

impl LogicalForm {
    pub fn parse(text: &str) -> Result<LogicalForm, sexp::SexpError> {
        sexp::parse_one(text).map(LogicalForm)
    }
}

impl fmt::Display for LogicalForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.print())
    }
}

/// Chronological items sitting above the innermost open cell.
struct OwnerView<'a> {
    owner: &'a Cell,
    region: Vec<&'a CellItem>,
}

impl IrState {
    /// State with a single pending non-terminal of the grammar's root type.
    pub fn initial() -> IrState {
        IrState {
            top: Arc::new(Cell {
                item: CellItem::Root,
                below: None,
            }),
            len: 0,
            history: None,
        }
    }

    /// Applies each action in turn, failing on the first illegal one.
    pub fn replay(g: &Grammar, actions: &[ActionId]) -> Result<IrState, IrError> {
        let mut s = IrState::initial();
        for &a in actions {
            s = s.apply_action(g, a)?;
        }
        Ok(s)
    }

    /// Number of actions applied since the initial state.
    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn last_action(&self) -> Option<ActionId> {
        self.history.as_ref().map(|h| h.action)
    }

    /// The applied action sequence, oldest first.
    pub fn actions(&self) -> Vec<ActionId> {
        let mut out = Vec::with_capacity(self.len as usize);
        let mut cur = self.history.as_deref();
        while let Some(h) = cur {
            out.push(h.action);
            cur = h.prev.as_deref();
        }
        out.reverse();
        out
    }

    /// Number of open nodes, the synthetic root holder excluded.
    pub fn open_depth(&self) -> usize {
        let mut n = 0;
        let mut cur = Some(&self.top);
        while let Some(c) = cur {
            if matches!(c.item, CellItem::Open(_)) {
                n += 1;
            }
            cur = c.below.as_ref();
        }
        n
    }

    fn owner_view(&self) -> OwnerView<'_> {
        let mut region = Vec::new();
        let mut cur: &Cell = &self.top;
        loop {
            match cur.item {
                CellItem::Root | CellItem::Open(_) => {
                    region.reverse();
                    return OwnerView { owner: cur, region };
                }
                _ => {
                    region.push(&cur.item);
                    cur = cur.below.as_ref().expect("root sentinel below every cell");
                }
            }
        }
    }

    fn owner_params<'g>(
        owner: &Cell,
        g: &'g Grammar,
        root_param: &'g [ParamType],
    ) -> &'g [ParamType] {
        match owner.item {
            CellItem::Root => root_param,
            CellItem::Open(c) => &g.class(c).params,
            _ => unreachable!(),
        }
    }

    /// Next parameter position of the given open node, derived from the
    /// items recorded above it. Completed children advance plain and
    /// optional positions but not a repeated one; skip and end-of-rest
    /// markers advance unconditionally.
    fn position(params: &[ParamType], region: &[&CellItem]) -> usize {
        let mut pos = 0;
        for item in region {
            let repeated = params
                .get(pos)
                .is_some_and(|p| p.modifier == Modifier::Repeated);
            match item {
                CellItem::Done(_) => {
                    if !repeated {
                        pos += 1;
                    }
                }
                CellItem::Skip | CellItem::EndRest => pos += 1,
                _ => unreachable!(),
            }
        }
        pos
    }

    fn root_param(g: &Grammar) -> [ParamType; 1] {
        [ParamType {
            ty: g.root_type(),
            modifier: Modifier::None,
        }]
    }

    /// True iff no non-terminal remains.
    pub fn is_complete(&self, g: &Grammar) -> bool {
        self.leftmost_nonterminal(g).is_none()
    }

    /// The first unexpanded non-terminal in left-to-right order.
    pub fn leftmost_nonterminal(&self, g: &Grammar) -> Option<NonTerminal> {
        let view = self.owner_view();
        let root_param = Self::root_param(g);
        let params = Self::owner_params(view.owner, g, &root_param);
        let pos = Self::position(params, &view.region);
        params.get(pos).map(|p| NonTerminal {
            ty: p.ty,
            modifier: p.modifier,
        })
    }

    /// The open node owning the leftmost non-terminal.
    pub fn parent_of_lmnt(&self, g: &Grammar) -> Result<ParentView, IrError> {
        if self.is_complete(g) {
            return Err(IrError::StateComplete);
        }
        let view = self.owner_view();
        let class = match view.owner.item {
            CellItem::Root => None,
            CellItem::Open(c) => Some(c),
            _ => unreachable!(),
        };
        let mut children = 0;
        let mut token_prefix = Vec::new();
        for item in &view.region {
            if let CellItem::Done(node) = item {
                children += 1;
                if let Node::Token(t) = **node {
                    token_prefix.push(t);
                }
            }
        }
        Ok(ParentView {
            class,
            children,
            token_prefix,
        })
    }

    /// The chain of open nodes from outermost to innermost, with each
    /// node's parameter cursor. Only the innermost frame lacks an open
    /// child. Used for minimum-completion-cost bounds during search.
    pub fn open_frames(&self, g: &Grammar) -> Vec<OpenFrame> {
        let mut cells: Vec<&Cell> = Vec::new();
        let mut cur: Option<&Cell> = Some(&self.top);
        while let Some(c) = cur {
            cells.push(c);
            cur = c.below.as_deref();
        }
        cells.reverse();

        let mut frames: Vec<OpenFrame> = Vec::new();
        for cell in cells {
            match &cell.item {
                CellItem::Root => frames.push(OpenFrame {
                    class: None,
                    pos: 0,
                    has_open_child: false,
                    token_prefix: Vec::new(),
                }),
                CellItem::Open(c) => {
                    if let Some(prev) = frames.last_mut() {
                        prev.has_open_child = true;
                    }
                    frames.push(OpenFrame {
                        class: Some(*c),
                        pos: 0,
                        has_open_child: false,
                        token_prefix: Vec::new(),
                    });
                }
                CellItem::Done(node) => {
                    let frame = frames.last_mut().unwrap();
                    let params: &[ParamType] = match frame.class {
                        Some(c) => &g.class(c).params,
                        None => &[],
                    };
                    let repeated = match frame.class {
                        Some(_) => params
                            .get(frame.pos)
                            .is_some_and(|p| p.modifier == Modifier::Repeated),
                        None => false,
                    };
                    if !repeated {
                        frame.pos += 1;
                    }
                    if let Node::Token(t) = **node {
                        frame.token_prefix.push(t);
                    }
                }
                CellItem::Skip | CellItem::EndRest => {
                    frames.last_mut().unwrap().pos += 1;
                }
            }
        }
        frames
    }

    fn push(top: &Arc<Cell>, item: CellItem) -> Arc<Cell> {
        Arc::new(Cell {
            item,
            below: Some(top.clone()),
        })
    }

    /// Applies an action to the leftmost non-terminal, returning the
    /// successor state. The receiver remains valid and shares structure
    /// with the result.
    pub fn apply_action(&self, g: &Grammar, action: ActionId) -> Result<IrState, IrError> {
        let Some(nt) = self.leftmost_nonterminal(g) else {
            return Err(IrError::StateComplete);
        };
        let nt_name = || format!("{}{}", g.type_name(nt.ty), nt.modifier.suffix());

        let mut top = match g.action(action).kind {
            ActionKind::Reduce => match nt.modifier {
                Modifier::Optional => Self::push(&self.top, CellItem::Skip),
                Modifier::Repeated => Self::push(&self.top, CellItem::EndRest),
                Modifier::None => return Err(IrError::ReduceAtPlainPosition { nt: nt_name() }),
            },
            ActionKind::NlToken(tok) => {
                if !g.compatible(action, nt.ty) {
                    return Err(IrError::IncompatibleAction {
                        action: action.0,
                        nt: nt_name(),
                    });
                }
                Self::push(&self.top, CellItem::Done(Arc::new(Node::Token(tok))))
            }
            ActionKind::Rule(class) => {
                if !g.compatible(action, nt.ty) {
                    return Err(IrError::IncompatibleAction {
                        action: action.0,
                        nt: nt_name(),
                    });
                }
                if g.class(class).params.is_empty() {
                    Self::push(
                        &self.top,
                        CellItem::Done(Arc::new(Node::Class {
                            class,
                            children: Vec::new(),
                        })),
                    )
                } else {
                    Self::push(&self.top, CellItem::Open(class))
                }
            }
        };

        top = Self::cascade(top, g);

        Ok(IrState {
            top,
            len: self.len + 1,
            history: Some(Arc::new(HistCell {
                action,
                prev: self.history.clone(),
            })),
        })
    }

    /// Pops every open node whose parameter list is exhausted, re-attaching
    /// it as a completed sub-expression.
    fn cascade(mut top: Arc<Cell>, g: &Grammar) -> Arc<Cell> {
        loop {
            let mut region: Vec<&Cell> = Vec::new();
            let mut cur: &Cell = &top;
            let (class, owner) = loop {
                match cur.item {
                    CellItem::Root => return top,
                    CellItem::Open(c) => break (c, cur),
                    _ => {
                        region.push(cur);
                        cur = cur.below.as_ref().expect("root sentinel below every cell");
                    }
                }
            };
            region.reverse();
            let params = &g.class(class).params;
            let items: Vec<&CellItem> = region.iter().map(|c| &c.item).collect();
            if Self::position(params, &items) < params.len() {
                return top;
            }
            let children: Vec<Arc<Node>> = items
                .iter()
                .filter_map(|item| match item {
                    CellItem::Done(node) => Some(node.clone()),
                    _ => None,
                })
                .collect();
            let below = owner.below.clone().expect("open node sits above the root");
            top = Self::push(
                &below,
                CellItem::Done(Arc::new(Node::Class { class, children })),
            );
        }
    }

    fn root_node(&self, g: &Grammar) -> Option<Arc<Node>> {
        if !self.is_complete(g) {
            return None;
        }
        match &self.top.item {
            CellItem::Done(node) => Some(node.clone()),
            _ => None,
        }
    }

    /// Bottom-up template expansion of a complete state.
    pub fn to_logical_form(&self, g: &Grammar, kind: TemplateKind) -> Result<LogicalForm, IrError> {
        let node = self.root_node(g).ok_or(IrError::StateIncomplete)?;
        Ok(LogicalForm(expand_node(&node, g, kind)?))
    }

    /// Deterministic text rendering of the partial IR, with pending
    /// non-terminals shown as `<type>` placeholders.
    pub fn render(&self, g: &Grammar) -> String {
        let mut cells: Vec<&Cell> = Vec::new();
        let mut cur: Option<&Cell> = Some(&self.top);
        while let Some(c) = cur {
            cells.push(c);
            cur = c.below.as_deref();
        }
        cells.reverse();

        struct Frame<'g> {
            name: Option<&'g str>,
            params: Vec<ParamType>,
            parts: Vec<String>,
            pos: usize,
        }
        let mut frames: Vec<Frame> = Vec::new();
        for cell in cells {
            match &cell.item {
                CellItem::Root => frames.push(Frame {
                    name: None,
                    params: Self::root_param(g).to_vec(),
                    parts: Vec::new(),
                    pos: 0,
                }),
                CellItem::Open(c) => frames.push(Frame {
                    name: Some(&g.class(*c).name),
                    params: g.class(*c).params.clone(),
                    parts: Vec::new(),
                    pos: 0,
                }),
                CellItem::Done(node) => {
                    let f = frames.last_mut().unwrap();
                    f.parts.push(render_node(node, g));
                    let repeated = f
                        .params
                        .get(f.pos)
                        .is_some_and(|p| p.modifier == Modifier::Repeated);
                    if !repeated {
                        f.pos += 1;
                    }
                }
                CellItem::Skip | CellItem::EndRest => {
                    frames.last_mut().unwrap().pos += 1;
                }
            }
        }

        let mut nested: Option<String> = None;
        while let Some(f) = frames.pop() {
            let mut parts = f.parts;
            let mut pos = f.pos;
            if let Some(inner) = nested.take() {
                parts.push(inner);
                // a nested open child occupies the current position; plain
                // and optional positions move past it, a repeated one stays
                if f.params
                    .get(pos)
                    .is_some_and(|p| p.modifier != Modifier::Repeated)
                {
                    pos += 1;
                }
            }
            for p in &f.params[pos.min(f.params.len())..] {
                parts.push(format!("<{}>{}", g.type_name(p.ty), p.modifier.suffix()));
            }
            nested = Some(match f.name {
                Some(name) => format!("({} {})", name, parts.join(" ")),
                None => parts.join(" "),
            });
        }
        nested.unwrap_or_default()
    }
}

impl PartialEq for IrState {
    fn eq(&self, other: &Self) -> bool {
        if self.len != other.len {
            return false;
        }
        let mut a = self.history.as_deref();
        let mut b = other.history.as_deref();
        loop {
            match (a, b) {
                (None, None) => return true,
                (Some(x), Some(y)) => {
                    if x.action != y.action {
                        return false;
                    }
                    a = x.prev.as_deref();
                    b = y.prev.as_deref();
                }
                _ => return false,
            }
        }
    }
}

impl Eq for IrState {}

fn render_node(node: &Node, g: &Grammar) -> String {
    match node {
        Node::Token(t) => format!("{:?}", g.vocab().token(*t)),
        Node::Class { class, children } => {
            let c = g.class(*class);
            if children.is_empty() {
                c.name.clone()
            } else {
                let inner = children
                    .iter()
                    .map(|ch| render_node(ch, g))
                    .collect::<Vec<_>>()
                    .join(" ");
                format!("({} {})", c.name, inner)
            }
        }
    }
}

fn expand_node(node: &Node, g: &Grammar, kind: TemplateKind) -> Result<Sexp, IrError> {
    match node {
        Node::Token(t) => Ok(Sexp::string(g.vocab().token(*t))),
        Node::Class { class, children } => {
            let child_lfs = children
                .iter()
                .map(|c| expand_node(c, g, kind))
                .collect::<Result<Vec<_>, _>>()?;
            let template: &Template = g.class(*class).template(kind);
            let out = instantiate(&template.root, &child_lfs)?;
            if out.len() != 1 {
                return Err(IrError::TemplateShape {
                    produced: out.len(),
                });
            }
            Ok(out.into_iter().next().unwrap())
        }
    }
}

fn instantiate(node: &TemplateNode, children: &[Sexp]) -> Result<Vec<Sexp>, IrError> {
    match node {
        TemplateNode::Lit(s) => Ok(vec![s.clone()]),
        TemplateNode::Child(i) => {
            children
                .get(*i)
                .cloned()
                .map(|s| vec![s])
                .ok_or(IrError::HoleOutOfRange {
                    index: *i,
                    children: children.len(),
                })
        }
        TemplateNode::SpliceChildren => Ok(children.to_vec()),
        TemplateNode::List(items) => {
            let mut out = Vec::new();
            for item in items {
                out.extend(instantiate(item, children)?);
            }
            Ok(vec![Sexp::list(out)])
        }
        TemplateNode::Eval(f, args) => {
            let mut values = Vec::new();
            for arg in args {
                values.extend(instantiate(arg, children)?);
            }
            let stringify = |s: &Sexp| -> Result<String, IrError> {
                match (&s.as_symbol(), &s.as_str()) {
                    (Some(sym), _) => Ok(sym.to_string()),
                    (_, Some(st)) => Ok(st.to_string()),
                    _ => Err(IrError::EvalFailure {
                        message: format!("cannot stringify list {}", s.print()),
                    }),
                }
            };
            match f {
                EvalFn::Concat => {
                    let mut s = String::new();
                    for v in &values {
                        s.push_str(&stringify(v)?);
                    }
                    Ok(vec![Sexp::string(s)])
                }
                EvalFn::Join => {
                    let Some(sep) = values.first() else {
                        return Err(IrError::EvalFailure {
                            message: "join: missing separator".into(),
                        });
                    };
                    let sep = stringify(sep)?;
                    let parts = values[1..]
                        .iter()
                        .map(stringify)
                        .collect::<Result<Vec<_>, _>>()?;
                    Ok(vec![Sexp::string(parts.join(&sep))])
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::parse_grammar;
    use crate::vocab::Vocabulary;

    fn vocab(tokens: &[&str]) -> Vocabulary {
        Vocabulary::from_tokens(tokens.iter().map(|t| t.to_string()).collect()).unwrap()
    }

    /// Minimal grammar with a repeated token slot under a candidate-style
    /// class and a plain wrapper.
    fn find_grammar() -> Grammar {
        let dsl = r#"
            (define-types result (ent-set result) (num-result result) (kp-entity))
            (define-action count
              (act-type num-result) (param-types ent-set)
              (expr-dict (default (count @0))))
            (define-action find
              (act-type ent-set) (param-types &rest kp-entity)
              (expr-dict (default (find #(join " " @*))))
              (arg-candidate true))
            (define-nl-token-typing (base kp-entity))
        "#;
        parse_grammar(dsl, vocab(&["red", "apple"])).unwrap()
    }

    /// Analogue of a date class with trailing optional positions.
    fn date_grammar() -> Grammar {
        let dsl = r#"
            (define-types date (year) (month) (day))
            (define-action constant-date
              (act-type date) (param-types year &optional month day)
              (expr-dict (default (date @*))))
            (define-action y2024 (act-type year) (expr-dict (default "2024")))
            (define-action m01 (act-type month) (expr-dict (default "01")))
            (define-action d15 (act-type day) (expr-dict (default "15")))
        "#;
        parse_grammar(dsl, vocab(&[])).unwrap()
    }

    #[test]
    fn initial_state_has_root_nonterminal_and_is_deterministic() {
        let g = find_grammar();
        let s = IrState::initial();
        assert!(!s.is_complete(&g));
        let nt = s.leftmost_nonterminal(&g).unwrap();
        assert_eq!(g.type_name(nt.ty), "result");
        assert_eq!(nt.modifier, Modifier::None);
        assert_eq!(IrState::initial(), IrState::initial());
        let parent = s.parent_of_lmnt(&g).unwrap();
        assert_eq!(parent.class, None);
    }

    #[test]
    fn full_trace_to_completion() {
        let g = find_grammar();
        let count = g.action_for_class(g.class_by_name("count").unwrap());
        let find = g.action_for_class(g.class_by_name("find").unwrap());
        let red = g.action_for_token(0);
        let apple = g.action_for_token(1);
        let reduce = g.reduce_id();

        let s1 = IrState::initial().apply_action(&g, count).unwrap();
        let s2 = s1.apply_action(&g, find).unwrap();
        let nt = s2.leftmost_nonterminal(&g).unwrap();
        assert_eq!(g.type_name(nt.ty), "kp-entity");
        assert_eq!(nt.modifier, Modifier::Repeated);
        assert_eq!(
            s2.parent_of_lmnt(&g).unwrap().class,
            g.class_by_name("find")
        );

        let s3 = s2.apply_action(&g, red).unwrap();
        let s4 = s3.apply_action(&g, apple).unwrap();
        assert_eq!(s4.parent_of_lmnt(&g).unwrap().token_prefix, vec![0, 1]);
        let s5 = s4.apply_action(&g, reduce).unwrap();
        assert!(s5.is_complete(&g));
        assert_eq!(s5.len(), 5);
        assert_eq!(
            s5.to_logical_form(&g, TemplateKind::Default)
                .unwrap()
                .to_string(),
            r#"(count (find "red apple"))"#
        );
        assert!(s5.apply_action(&g, reduce).is_err());
    }

    #[test]
    fn apply_action_is_persistent() {
        let g = find_grammar();
        let count = g.action_for_class(g.class_by_name("count").unwrap());
        let s = IrState::initial();
        let before = s.render(&g);
        let s2 = s.apply_action(&g, count).unwrap();
        assert_eq!(s.render(&g), before);
        assert_ne!(s2.render(&g), before);
        assert_eq!(s.len(), 0);
        assert_eq!(s2.len(), 1);
    }

    #[test]
    fn reduce_skips_one_optional_position_per_action() {
        let g = date_grammar();
        let date = g.action_for_class(g.class_by_name("constant-date").unwrap());
        let year = g.action_for_class(g.class_by_name("y2024").unwrap());
        let reduce = g.reduce_id();

        let s = IrState::initial()
            .apply_action(&g, date)
            .unwrap()
            .apply_action(&g, year)
            .unwrap();
        let nt = s.leftmost_nonterminal(&g).unwrap();
        assert_eq!(g.type_name(nt.ty), "month");
        assert_eq!(nt.modifier, Modifier::Optional);

        let s = s.apply_action(&g, reduce).unwrap();
        let nt = s.leftmost_nonterminal(&g).unwrap();
        assert_eq!(g.type_name(nt.ty), "day");
        assert_eq!(nt.modifier, Modifier::Optional);

        let s = s.apply_action(&g, reduce).unwrap();
        assert!(s.is_complete(&g));
        assert_eq!(
            s.to_logical_form(&g, TemplateKind::Default)
                .unwrap()
                .to_string(),
            r#"(date "2024")"#
        );
    }

    #[test]
    fn optional_positions_can_also_be_filled() {
        let g = date_grammar();
        let ids: Vec<ActionId> = ["constant-date", "y2024", "m01", "d15"]
            .iter()
            .map(|n| g.action_for_class(g.class_by_name(n).unwrap()))
            .collect();
        let mut s = IrState::initial();
        for a in ids {
            s = s.apply_action(&g, a).unwrap();
        }
        assert!(s.is_complete(&g));
        assert_eq!(
            s.to_logical_form(&g, TemplateKind::Default)
                .unwrap()
                .to_string(),
            r#"(date "2024" "01" "15")"#
        );
    }

    #[test]
    fn reduce_on_plain_position_is_rejected() {
        let g = find_grammar();
        let s = IrState::initial();
        assert_eq!(
            s.apply_action(&g, g.reduce_id()),
            Err(IrError::ReduceAtPlainPosition {
                nt: "result".into()
            })
        );
    }

    #[test]
    fn incompatible_action_is_rejected() {
        let g = find_grammar();
        // a bare token cannot expand the root non-terminal
        let s = IrState::initial();
        assert!(matches!(
            s.apply_action(&g, g.action_for_token(0)),
            Err(IrError::IncompatibleAction { .. })
        ));
    }

    #[test]
    fn to_logical_form_requires_completion() {
        let g = find_grammar();
        let s = IrState::initial();
        assert_eq!(
            s.to_logical_form(&g, TemplateKind::Default),
            Err(IrError::StateIncomplete)
        );
    }

    #[test]
    fn visual_template_falls_back_to_default() {
        let g = find_grammar();
        let find = g.action_for_class(g.class_by_name("find").unwrap());
        let s = IrState::initial()
            .apply_action(&g, find)
            .unwrap()
            .apply_action(&g, g.action_for_token(0))
            .unwrap()
            .apply_action(&g, g.reduce_id())
            .unwrap();
        assert_eq!(
            s.to_logical_form(&g, TemplateKind::Visual).unwrap(),
            s.to_logical_form(&g, TemplateKind::Default).unwrap()
        );
    }

    #[test]
    fn render_shows_pending_placeholders() {
        let g = find_grammar();
        let count = g.action_for_class(g.class_by_name("count").unwrap());
        let find = g.action_for_class(g.class_by_name("find").unwrap());
        let s = IrState::initial().apply_action(&g, count).unwrap();
        assert_eq!(s.render(&g), "(count <ent-set>)");
        let s = s.apply_action(&g, find).unwrap();
        assert_eq!(s.render(&g), "(count (find <kp-entity>*))");
        let s = s.apply_action(&g, g.action_for_token(0)).unwrap();
        assert_eq!(s.render(&g), "(count (find \"red\" <kp-entity>*))");
    }

    #[test]
    fn zero_parameter_class_completes_immediately() {
        let dsl = r#"
            (define-types t)
            (define-action c (act-type t) (expr-dict (default c)))
        "#;
        let g = parse_grammar(dsl, vocab(&[])).unwrap();
        let s = IrState::initial().apply_action(&g, ActionId(0)).unwrap();
        assert!(s.is_complete(&g));
        assert_eq!(
            s.to_logical_form(&g, TemplateKind::Default)
                .unwrap()
                .to_string(),
            "c"
        );
    }
}
