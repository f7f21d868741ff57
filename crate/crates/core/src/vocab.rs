//! Token vocabulary: an opaque id ↔ string table.
//!
//! The file format is one token per line; the line number (0-based) is the
//! token id. Tokens containing whitespace or backslashes use the escaped
//! form documented in `docs/formats.md`: `\s` for space, `\t` for tab,
//! `\n` for newline and `\\` for a literal backslash.

use std::collections::HashMap;
use thiserror::Error;

pub type TokenId = u32;

#[derive(Debug, Error, PartialEq)]
pub enum VocabError {
    #[error("line {line}: duplicate token {token:?}")]
    DuplicateToken { line: usize, token: String },
    #[error("line {line}: invalid escape '\\{escape}'")]
    BadEscape { line: usize, escape: char },
    #[error("line {line}: dangling backslash at end of token")]
    DanglingEscape { line: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, VocabError> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), i as TokenId).is_some() {
                return Err(VocabError::DuplicateToken {
                    line: i,
                    token: tok.clone(),
                });
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// Parses the one-token-per-line file format.
    pub fn parse(text: &str) -> Result<Self, VocabError> {
        let mut tokens = Vec::new();
        for (i, line) in text.lines().enumerate() {
            tokens.push(unescape(line, i)?);
        }
        Vocabulary::from_tokens(tokens)
    }

    /// Serializes back to the file format, escaping where needed.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for tok in &self.tokens {
            out.push_str(&escape(tok));
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TokenId, &str)> {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (i as TokenId, t.as_str()))
    }
}

fn escape(token: &str) -> String {
    let mut out = String::with_capacity(token.len());
    for c in token.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            ' ' => out.push_str("\\s"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out
}

fn unescape(line: &str, line_no: usize) -> Result<String, VocabError> {
    let mut out = String::with_capacity(line.len());
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('s') => out.push(' '),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some(other) => {
                return Err(VocabError::BadEscape {
                    line: line_no,
                    escape: other,
                })
            }
            None => return Err(VocabError::DanglingEscape { line: line_no }),
        }
    }
    Ok(out)
}
