//! S-expression reader and canonical printer.
//!
//! This is the interchange syntax for everything in the engine: the grammar
//! DSL, logical forms, KB records and dataset files. Atoms are symbols or
//! double-quoted strings; `#(...)` reads as a list whose head is the symbol
//! `#` and prints back in the same shape, which is how template evaluation
//! nodes are written.
//!
//! The canonical printer emits single spaces between items and no trailing
//! whitespace, so printed forms are byte-stable and `parse(print(x)) == x`
//! for every tree the printer can emit.

use std::fmt;
use thiserror::Error;

/// Source position of a parsed node, 1-based.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Debug)]
pub enum SexpKind {
    Symbol(String),
    Str(String),
    List(Vec<Sexp>),
}

/// A parsed S-expression node. Equality ignores source spans.
#[derive(Clone, Debug)]
pub struct Sexp {
    pub kind: SexpKind,
    pub span: Span,
}

impl PartialEq for Sexp {
    fn eq(&self, other: &Self) -> bool {
        match (&self.kind, &other.kind) {
            (SexpKind::Symbol(a), SexpKind::Symbol(b)) => a == b,
            (SexpKind::Str(a), SexpKind::Str(b)) => a == b,
            (SexpKind::List(a), SexpKind::List(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Sexp {}

impl Sexp {
    pub fn symbol(name: impl Into<String>) -> Sexp {
        Sexp {
            kind: SexpKind::Symbol(name.into()),
            span: Span::default(),
        }
    }

    pub fn string(value: impl Into<String>) -> Sexp {
        Sexp {
            kind: SexpKind::Str(value.into()),
            span: Span::default(),
        }
    }

    pub fn list(items: Vec<Sexp>) -> Sexp {
        Sexp {
            kind: SexpKind::List(items),
            span: Span::default(),
        }
    }

    pub fn as_symbol(&self) -> Option<&str> {
        match &self.kind {
            SexpKind::Symbol(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match &self.kind {
            SexpKind::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Sexp]> {
        match &self.kind {
            SexpKind::List(items) => Some(items),
            _ => None,
        }
    }

    /// Canonical text form.
    pub fn print(&self) -> String {
        let mut out = String::new();
        self.print_into(&mut out);
        out
    }

    fn print_into(&self, out: &mut String) {
        match &self.kind {
            SexpKind::Symbol(s) => out.push_str(s),
            SexpKind::Str(s) => {
                out.push('"');
                for c in s.chars() {
                    match c {
                        '"' => out.push_str("\\\""),
                        '\\' => out.push_str("\\\\"),
                        '\n' => out.push_str("\\n"),
                        '\t' => out.push_str("\\t"),
                        _ => out.push(c),
                    }
                }
                out.push('"');
            }
            SexpKind::List(items) => {
                // Lists headed by the `#` symbol print in reader shape: #(...)
                let eval_form = items.first().is_some_and(|h| h.as_symbol() == Some("#"));
                if eval_form {
                    out.push_str("#(");
                    for (i, item) in items[1..].iter().enumerate() {
                        if i > 0 {
                            out.push(' ');
                        }
                        item.print_into(out);
                    }
                } else {
                    out.push('(');
                    for (i, item) in items.iter().enumerate() {
                        if i > 0 {
                            out.push(' ');
                        }
                        item.print_into(out);
                    }
                }
                out.push(')');
            }
        }
    }
}

impl fmt::Display for Sexp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.print())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SexpError {
    #[error("{span}: unexpected closing parenthesis")]
    UnexpectedClose { span: Span },
    #[error("{span}: unterminated list")]
    UnterminatedList { span: Span },
    #[error("{span}: unterminated string literal")]
    UnterminatedString { span: Span },
    #[error("{span}: invalid string escape '\\{escape}'")]
    BadEscape { span: Span, escape: char },
    #[error("{span}: expected a single expression, found trailing content")]
    TrailingContent { span: Span },
    #[error("empty input, expected an expression")]
    Empty,
}

struct Reader<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: u32,
    col: u32,
}

impl<'a> Reader<'a> {
    fn new(text: &'a str) -> Self {
        Reader {
            chars: text.chars().peekable(),
            line: 1,
            col: 1,
        }
    }

    fn span(&self) -> Span {
        Span {
            line: self.line,
            col: self.col,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn skip_trivia(&mut self) {
        loop {
            match self.chars.peek() {
                Some(c) if c.is_whitespace() => {
                    self.bump();
                }
                Some(';') => {
                    // line comment
                    while let Some(&c) = self.chars.peek() {
                        self.bump();
                        if c == '\n' {
                            break;
                        }
                    }
                }
                _ => return,
            }
        }
    }

    fn read_string(&mut self, span: Span) -> Result<Sexp, SexpError> {
        self.bump(); // opening quote
        let mut value = String::new();
        loop {
            let Some(c) = self.bump() else {
                return Err(SexpError::UnterminatedString { span });
            };
            match c {
                '"' => {
                    return Ok(Sexp {
                        kind: SexpKind::Str(value),
                        span,
                    })
                }
                '\\' => {
                    let esc_span = self.span();
                    let Some(e) = self.bump() else {
                        return Err(SexpError::UnterminatedString { span });
                    };
                    match e {
                        '"' => value.push('"'),
                        '\\' => value.push('\\'),
                        'n' => value.push('\n'),
                        't' => value.push('\t'),
                        other => {
                            return Err(SexpError::BadEscape {
                                span: esc_span,
                                escape: other,
                            })
                        }
                    }
                }
                other => value.push(other),
            }
        }
    }

    fn read_list(&mut self, span: Span, head: Option<Sexp>) -> Result<Sexp, SexpError> {
        self.bump(); // opening paren
        let mut items = head.map_or_else(Vec::new, |h| vec![h]);
        loop {
            self.skip_trivia();
            match self.chars.peek() {
                None => return Err(SexpError::UnterminatedList { span }),
                Some(')') => {
                    self.bump();
                    return Ok(Sexp {
                        kind: SexpKind::List(items),
                        span,
                    });
                }
                Some(_) => items.push(self.read_expr()?),
            }
        }
    }

    fn read_expr(&mut self) -> Result<Sexp, SexpError> {
        self.skip_trivia();
        let span = self.span();
        match self.chars.peek() {
            None => Err(SexpError::Empty),
            Some('(') => self.read_list(span, None),
            Some(')') => Err(SexpError::UnexpectedClose { span }),
            Some('"') => self.read_string(span),
            Some(_) => {
                let mut name = String::new();
                while let Some(&c) = self.chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == '"' || c == ';' {
                        break;
                    }
                    name.push(c);
                    self.bump();
                }
                // `#(` reads as an evaluation form: a list headed by `#`.
                if name == "#" && self.chars.peek() == Some(&'(') {
                    let head = Sexp {
                        kind: SexpKind::Symbol(name),
                        span,
                    };
                    return self.read_list(span, Some(head));
                }
                Ok(Sexp {
                    kind: SexpKind::Symbol(name),
                    span,
                })
            }
        }
    }
}

/// Parses exactly one expression; trailing non-whitespace is an error.
pub fn parse_one(text: &str) -> Result<Sexp, SexpError> {
    let mut reader = Reader::new(text);
    let expr = reader.read_expr()?;
    reader.skip_trivia();
    if reader.chars.peek().is_some() {
        return Err(SexpError::TrailingContent {
            span: reader.span(),
        });
    }
    Ok(expr)
}

/// Parses a sequence of top-level expressions.
pub fn parse_many(text: &str) -> Result<Vec<Sexp>, SexpError> {
    let mut reader = Reader::new(text);
    let mut out = Vec::new();
    loop {
        reader.skip_trivia();
        if reader.chars.peek().is_none() {
            return Ok(out);
        }
        out.push(reader.read_expr()?);
    }
}
