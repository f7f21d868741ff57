//! Candidate expressions and their per-class tries.
//!
//! A candidate expression is a predefined surface string of a KB element
//! (an entity name, a relation name, ...). Each candidate-bearing node
//! class gets one trie storing the tokenizations of its candidates, shared
//! by every node instantiated from the class. Distinct KBs (domains) get
//! distinct trie sets via the manifest.
//!
//! Tokenization is whitespace splitting against the vocabulary; a word
//! outside the vocabulary is an error, so candidate files stay losslessly
//! checkable.

use crate::vocab::{TokenId, Vocabulary};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CandError {
    #[error(
        "class {class:?}: cannot tokenize {expression:?}: word {word:?} is not in the vocabulary"
    )]
    UntokenizableWord {
        class: String,
        expression: String,
        word: String,
    },
    #[error("class {class:?}: empty candidate expression")]
    EmptyExpression { class: String },
    #[error("line {line}: expected '#class <name>' before the first expression")]
    MissingClassHeader { line: usize },
    #[error("line {line}: malformed class header {header:?}")]
    BadClassHeader { line: usize, header: String },
    #[error("prefix not in trie at token {token}")]
    PrefixNotFound { token: TokenId },
    #[error("manifest: {message}")]
    Manifest { message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

/// Candidate expressions for one node class. Duplicates (after
/// tokenization) are dropped at build time with a warning.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    pub class: String,
    pub expressions: Vec<String>,
}

impl CandidateSet {
    pub fn new(class: impl Into<String>, expressions: Vec<String>) -> CandidateSet {
        CandidateSet {
            class: class.into(),
            expressions,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct TrieNode {
    children: BTreeMap<TokenId, usize>,
    terminal: bool,
}

/// Token-sequence store with end-of-candidate markers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trie {
    nodes: Vec<TrieNode>,
    /// Per-node distance (in tokens) to the nearest terminal at or below it.
    depths: Vec<u32>,
}

/// Options for `build_trie`. Matching is case-sensitive by default; the
/// normalization switch lowercases candidate words before vocabulary lookup.
#[derive(Clone, Copy, Debug, Default)]
pub struct BuildOptions {
    pub lowercase: bool,
}

/// Build report: the trie plus any dropped-duplicate warnings.
#[derive(Clone, Debug)]
pub struct BuiltTrie {
    pub trie: Trie,
    pub warnings: Vec<String>,
}

pub fn build_trie(cs: &CandidateSet, vocab: &Vocabulary) -> Result<BuiltTrie, CandError> {
    build_trie_with(cs, vocab, BuildOptions::default())
}

pub fn build_trie_with(
    cs: &CandidateSet,
    vocab: &Vocabulary,
    opts: BuildOptions,
) -> Result<BuiltTrie, CandError> {
    let mut trie = Trie {
        nodes: vec![TrieNode {
            children: BTreeMap::new(),
            terminal: false,
        }],
        depths: Vec::new(),
    };
    let mut seen: BTreeSet<Vec<TokenId>> = BTreeSet::new();
    let mut warnings = Vec::new();
    for expr in &cs.expressions {
        let tokens = tokenize(expr, vocab, &cs.class, opts)?;
        if tokens.is_empty() {
            return Err(CandError::EmptyExpression {
                class: cs.class.clone(),
            });
        }
        if !seen.insert(tokens.clone()) {
            warnings.push(format!(
                "class {:?}: duplicate candidate expression {:?} dropped",
                cs.class, expr
            ));
            continue;
        }
        trie.insert(&tokens);
    }
    trie.compute_depths();
    Ok(BuiltTrie { trie, warnings })
}

/// Whitespace tokenization of one expression against the vocabulary.
pub fn tokenize(
    expr: &str,
    vocab: &Vocabulary,
    class: &str,
    opts: BuildOptions,
) -> Result<Vec<TokenId>, CandError> {
    expr.split_whitespace()
        .map(|word| {
            let looked_up = if opts.lowercase {
                vocab.id_of(&word.to_lowercase())
            } else {
                vocab.id_of(word)
            };
            looked_up.ok_or_else(|| CandError::UntokenizableWord {
                class: class.to_string(),
                expression: expr.to_string(),
                word: word.to_string(),
            })
        })
        .collect()
}

/// Read-only position inside a trie.
#[derive(Clone, Copy)]
pub struct TrieCursor<'a> {
    trie: &'a Trie,
    node: usize,
}

impl<'a> TrieCursor<'a> {
    pub fn is_terminal(&self) -> bool {
        self.trie.nodes[self.node].terminal
    }

    /// Tokens still needed to reach the nearest stored candidate end, or
    /// `None` when no candidate lies at or below this node (empty trie).
    pub fn min_completion_tokens(&self) -> Option<usize> {
        let d = self.trie.depths[self.node];
        (d != u32::MAX).then_some(d as usize)
    }

    /// Tokens that extend the current prefix, ascending.
    pub fn extensions(&self) -> impl Iterator<Item = TokenId> + 'a {
        self.trie.nodes[self.node].children.keys().copied()
    }

    pub fn step(&self, token: TokenId) -> Option<TrieCursor<'a>> {
        self.trie.nodes[self.node]
            .children
            .get(&token)
            .map(|&node| TrieCursor {
                trie: self.trie,
                node,
            })
    }
}

impl Trie {
    fn insert(&mut self, tokens: &[TokenId]) {
        let mut node = 0usize;
        for &t in tokens {
            let next = match self.nodes[node].children.get(&t) {
                Some(&n) => n,
                None => {
                    let n = self.nodes.len();
                    self.nodes.push(TrieNode {
                        children: BTreeMap::new(),
                        terminal: false,
                    });
                    self.nodes[node].children.insert(t, n);
                    n
                }
            };
            node = next;
        }
        self.nodes[node].terminal = true;
    }

    fn compute_depths(&mut self) {
        // u32::MAX marks "no terminal below"; only the bare root of an
        // empty trie ever keeps it
        fn depth_of(nodes: &[TrieNode], out: &mut [Option<u32>], node: usize) -> u32 {
            if let Some(d) = out[node] {
                return d;
            }
            let d = if nodes[node].terminal {
                0
            } else {
                nodes[node]
                    .children
                    .values()
                    .map(|&c| depth_of(nodes, out, c).saturating_add(1))
                    .min()
                    .unwrap_or(u32::MAX)
            };
            out[node] = Some(d);
            d
        }
        let mut memo = vec![None; self.nodes.len()];
        for i in 0..self.nodes.len() {
            depth_of(&self.nodes, &mut memo, i);
        }
        self.depths = memo.into_iter().map(|d| d.unwrap()).collect();
    }

    pub fn root(&self) -> TrieCursor<'_> {
        TrieCursor {
            trie: self,
            node: 0,
        }
    }

    /// Cursor at the end of `prefix`, or `None` if the prefix is not stored.
    pub fn walk(&self, prefix: &[TokenId]) -> Option<TrieCursor<'_>> {
        let mut cur = self.root();
        for &t in prefix {
            cur = cur.step(t)?;
        }
        Some(cur)
    }

    /// Exactly the child tokens at the prefix's node. The prefix must be
    /// stored; use `walk` for a fallible lookup.
    pub fn valid_next_tokens(&self, prefix: &[TokenId]) -> Result<BTreeSet<TokenId>, CandError> {
        let mut cur = self.root();
        for &t in prefix {
            cur = cur.step(t).ok_or(CandError::PrefixNotFound { token: t })?;
        }
        Ok(cur.extensions().collect())
    }

    /// True iff the prefix is the full tokenization of some candidate.
    pub fn is_complete_candidate(&self, prefix: &[TokenId]) -> Result<bool, CandError> {
        let mut cur = self.root();
        for &t in prefix {
            cur = cur.step(t).ok_or(CandError::PrefixNotFound { token: t })?;
        }
        Ok(cur.is_terminal())
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() == 1 && !self.nodes[0].terminal
    }
}

/// Parses the `.cand` file format: a `#class <name>` header line starts a
/// set, one expression per line follows. Other `#`-prefixed lines are
/// comments; blank lines are skipped. One file may hold several classes.
pub fn parse_cand_file(text: &str) -> Result<Vec<CandidateSet>, CandError> {
    let mut sets: Vec<CandidateSet> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end();
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#class") {
            let name = rest.trim();
            if name.is_empty() || name.split_whitespace().count() != 1 {
                return Err(CandError::BadClassHeader {
                    line: i + 1,
                    header: line.to_string(),
                });
            }
            sets.push(CandidateSet::new(name, Vec::new()));
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        match sets.last_mut() {
            Some(set) => set.expressions.push(line.to_string()),
            None => return Err(CandError::MissingClassHeader { line: i + 1 }),
        }
    }
    Ok(sets)
}

/// Maps (domain, class) to the candidate file holding that class's
/// expressions. The manifest file is an S-expression:
///
/// ```text
/// (manifest
///   (domain default
///     (class find "g0.cand"))
///   (domain relations
///     (class keyword-relation "relations.cand")))
/// ```
///
/// Paths are resolved relative to the manifest file's directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    entries: BTreeMap<(String, String), PathBuf>,
}

impl Manifest {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Manifest, CandError> {
        let form = crate::sexp::parse_one(text).map_err(|e| CandError::Manifest {
            message: e.to_string(),
        })?;
        let items = form.as_list().ok_or_else(|| CandError::Manifest {
            message: "expected (manifest ...)".into(),
        })?;
        if items.first().and_then(|h| h.as_symbol()) != Some("manifest") {
            return Err(CandError::Manifest {
                message: "expected (manifest ...)".into(),
            });
        }
        let mut entries = BTreeMap::new();
        for dom in &items[1..] {
            let parts = dom.as_list().ok_or_else(|| CandError::Manifest {
                message: "expected (domain <name> ...)".into(),
            })?;
            if parts.first().and_then(|h| h.as_symbol()) != Some("domain") || parts.len() < 2 {
                return Err(CandError::Manifest {
                    message: "expected (domain <name> ...)".into(),
                });
            }
            let domain = atom_text(&parts[1]).ok_or_else(|| CandError::Manifest {
                message: "domain name must be an atom".into(),
            })?;
            for cls in &parts[2..] {
                let kv = cls.as_list().ok_or_else(|| CandError::Manifest {
                    message: "expected (class <name> <path>)".into(),
                })?;
                if kv.len() != 3 || kv[0].as_symbol() != Some("class") {
                    return Err(CandError::Manifest {
                        message: "expected (class <name> <path>)".into(),
                    });
                }
                let class = atom_text(&kv[1]).ok_or_else(|| CandError::Manifest {
                    message: "class name must be an atom".into(),
                })?;
                let path = kv[2].as_str().ok_or_else(|| CandError::Manifest {
                    message: "path must be a string".into(),
                })?;
                entries.insert((domain.to_string(), class.to_string()), base_dir.join(path));
            }
        }
        Ok(Manifest { entries })
    }

    pub fn load(path: &Path) -> Result<Manifest, CandError> {
        let text = std::fs::read_to_string(path).map_err(|e| CandError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Manifest::parse(&text, base)
    }

    pub fn domains(&self) -> BTreeSet<&str> {
        self.entries.keys().map(|(d, _)| d.as_str()).collect()
    }

    pub fn file_for(&self, domain: &str, class: &str) -> Option<&Path> {
        self.entries
            .get(&(domain.to_string(), class.to_string()))
            .map(|p| p.as_path())
    }

    /// Loads every candidate set of one domain, keyed by class name.
    pub fn load_domain(&self, domain: &str) -> Result<Vec<CandidateSet>, CandError> {
        let mut out: Vec<CandidateSet> = Vec::new();
        for ((d, class), path) in &self.entries {
            if d != domain {
                continue;
            }
            let text = std::fs::read_to_string(path).map_err(|e| CandError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            let sets = parse_cand_file(&text)?;
            let set = sets
                .into_iter()
                .find(|s| &s.class == class)
                .ok_or_else(|| CandError::Manifest {
                    message: format!("file {} does not define class {:?}", path.display(), class),
                })?;
            out.push(set);
        }
        Ok(out)
    }
}

fn atom_text(s: &crate::sexp::Sexp) -> Option<&str> {
    s.as_symbol().or_else(|| s.as_str())
}
