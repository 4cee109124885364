//! Gazetteer loading and dictionary auto-labeling.
//!
//! Term files are CSV with a header row `name,aliases,code`. `aliases` is a
//! `;`-separated list and `code` (e.g. an ATC class) may be empty or absent.
//! Terms and aliases are normalized once, on insertion: lowercased with runs
//! of whitespace collapsed to one space.
//!
//! Matching is whole-token and longest-match-first, scanning left to right,
//! so matches never overlap.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotations::{LabeledParagraph, Provenance, Span};
use crate::corpus::{tokenize, Paragraph, Token};

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("cannot read term file: {0}")]
    Io(#[from] std::io::Error),
    #[error("term file: {0}")]
    Csv(#[from] csv::Error),
    #[error("term file has no `name` column")]
    MissingNameColumn,
}

pub fn normalize_term(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Token-level key of a normalized term: its tokens joined by single spaces.
fn match_key<'a>(tokens: impl IntoIterator<Item = &'a str>) -> String {
    tokens
        .into_iter()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Which rows of a term file to keep.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum CodeFilter {
    #[default]
    Any,
    HasCode,
    CodePrefix(String),
}

impl CodeFilter {
    pub fn accepts(&self, code: Option<&str>) -> bool {
        match self {
            CodeFilter::Any => true,
            CodeFilter::HasCode => code.is_some(),
            CodeFilter::CodePrefix(prefix) => code.is_some_and(|c| c.starts_with(prefix.as_str())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermEntry {
    pub name: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    #[serde(default)]
    pub code: Option<String>,
}

impl TermEntry {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            aliases: Vec::new(),
            code: None,
        }
    }

    pub fn with_code(mut self, code: impl Into<String>) -> Self {
        self.code = Some(code.into());
        self
    }

    pub fn with_aliases<I: IntoIterator<Item = S>, S: Into<String>>(mut self, aliases: I) -> Self {
        self.aliases.extend(aliases.into_iter().map(Into::into));
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows: usize,
    pub kept: usize,
    pub filtered_out: usize,
    pub duplicates: usize,
    pub malformed: Vec<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct MatchTarget {
    canonical: String,
    via_alias: bool,
}

/// One dictionary hit over tokens `token_start..=token_end`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconMatch {
    pub token_start: usize,
    pub token_end: usize,
    pub canonical: String,
    pub via_alias: bool,
}

#[derive(Serialize, Deserialize)]
struct LexiconData {
    terms: BTreeMap<String, Option<String>>,
    aliases: BTreeMap<String, String>,
}

/// A normalized term list with aliases and optional per-term codes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "LexiconData", into = "LexiconData")]
pub struct Lexicon {
    /// Normalized canonical term → code.
    terms: BTreeMap<String, Option<String>>,
    /// Normalized alias → normalized canonical term.
    aliases: BTreeMap<String, String>,
    index: HashMap<String, MatchTarget>,
    max_tokens: usize,
}

impl From<LexiconData> for Lexicon {
    fn from(data: LexiconData) -> Self {
        let mut lex = Lexicon {
            terms: data.terms,
            aliases: data.aliases,
            ..Default::default()
        };
        lex.rebuild_index();
        lex
    }
}

impl From<Lexicon> for LexiconData {
    fn from(lex: Lexicon) -> Self {
        LexiconData {
            terms: lex.terms,
            aliases: lex.aliases,
        }
    }
}

impl Lexicon {
    pub fn from_entries<I: IntoIterator<Item = TermEntry>>(entries: I) -> Self {
        let mut lex = Lexicon::default();
        for entry in entries {
            lex.insert(entry);
        }
        lex.rebuild_index();
        lex
    }

    /// Adds an entry; returns `false` when its name was already present
    /// (aliases are merged, the first non-empty code is kept).
    fn insert(&mut self, entry: TermEntry) -> bool {
        let name = normalize_term(&entry.name);
        if name.is_empty() {
            return false;
        }
        let code = entry.code.filter(|c| !c.trim().is_empty());
        let fresh = !self.terms.contains_key(&name);
        let slot = self.terms.entry(name.clone()).or_insert(None);
        if slot.is_none() {
            *slot = code;
        }
        for alias in entry.aliases {
            let alias = normalize_term(&alias);
            if !alias.is_empty() && alias != name {
                self.aliases.entry(alias).or_insert_with(|| name.clone());
            }
        }
        fresh
    }

    fn rebuild_index(&mut self) {
        self.index.clear();
        self.max_tokens = 0;
        let add = |index: &mut HashMap<String, MatchTarget>, surface: &str, target: MatchTarget| {
            let tokens = tokenize(surface);
            if tokens.is_empty() {
                return 0;
            }
            let key = match_key(tokens.iter().map(|t| t.text.as_str()));
            // Canonical names win over aliases with the same key.
            match index.get(&key) {
                Some(existing) if !existing.via_alias => {}
                Some(_) if target.via_alias => {}
                _ => {
                    index.insert(key, target);
                }
            }
            tokens.len()
        };
        for name in self.terms.keys() {
            let n = add(
                &mut self.index,
                name,
                MatchTarget {
                    canonical: name.clone(),
                    via_alias: false,
                },
            );
            self.max_tokens = self.max_tokens.max(n);
        }
        for (alias, canonical) in &self.aliases {
            let n = add(
                &mut self.index,
                alias,
                MatchTarget {
                    canonical: canonical.clone(),
                    via_alias: true,
                },
            );
            self.max_tokens = self.max_tokens.max(n);
        }
    }

    pub fn load(path: impl AsRef<Path>, filter: &CodeFilter) -> Result<(Self, LoadReport), LexiconError> {
        Self::load_from(File::open(path)?, filter)
    }

    pub fn load_from<R: std::io::Read>(
        reader: R,
        filter: &CodeFilter,
    ) -> Result<(Self, LoadReport), LexiconError> {
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
        let name_col = col("name").ok_or(LexiconError::MissingNameColumn)?;
        let alias_col = col("aliases");
        let code_col = col("code");

        let mut lex = Lexicon::default();
        let mut report = LoadReport::default();
        for (idx, row) in rdr.records().enumerate() {
            // Header is line 1.
            let line = idx + 2;
            report.rows += 1;
            let row = match row {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("term file line {line}: {e}");
                    report.malformed.push((line, e.to_string()));
                    continue;
                }
            };
            let name = row.get(name_col).unwrap_or("");
            if normalize_term(name).is_empty() {
                log::warn!("term file line {line}: empty name");
                report.malformed.push((line, "empty name".into()));
                continue;
            }
            let code = code_col
                .and_then(|c| row.get(c))
                .filter(|c| !c.is_empty())
                .map(str::to_string);
            if !filter.accepts(code.as_deref()) {
                report.filtered_out += 1;
                continue;
            }
            let aliases = alias_col
                .and_then(|c| row.get(c))
                .map(|a| a.split(';').map(str::to_string).collect())
                .unwrap_or_default();
            if lex.insert(TermEntry {
                name: name.to_string(),
                aliases,
                code,
            }) {
                report.kept += 1;
            } else {
                report.duplicates += 1;
            }
        }
        lex.rebuild_index();
        Ok((lex, report))
    }

    /// Writes the lexicon as a term file; aliases are grouped under their
    /// canonical term.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), LexiconError> {
        let mut by_term: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (alias, canonical) in &self.aliases {
            by_term.entry(canonical).or_default().push(alias);
        }
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["name", "aliases", "code"])?;
        for (name, code) in &self.terms {
            let aliases = by_term.get(name.as_str()).map(|a| a.join(";")).unwrap_or_default();
            w.write_record([name.as_str(), &aliases, code.as_deref().unwrap_or("")])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.terms.keys().map(String::as_str)
    }

    pub fn aliases(&self) -> impl Iterator<Item = (&str, &str)> {
        self.aliases.iter().map(|(a, c)| (a.as_str(), c.as_str()))
    }

    pub fn code(&self, term: &str) -> Option<&str> {
        self.terms.get(&normalize_term(term)).and_then(|c| c.as_deref())
    }

    /// Canonical term for a surface string that equals a name or alias.
    pub fn lookup(&self, surface: &str) -> Option<&str> {
        let key = normalize_term(surface);
        if let Some((name, _)) = self.terms.get_key_value(&key) {
            return Some(name);
        }
        self.aliases.get(&key).map(String::as_str)
    }

    /// Longest-match, left-to-right dictionary hits over `tokens`.
    pub fn find_matches(&self, tokens: &[Token]) -> Vec<LexiconMatch> {
        let lowered: Vec<String> = tokens.iter().map(|t| t.text.to_lowercase()).collect();
        let mut matches = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let longest = self.max_tokens.min(tokens.len() - i);
            let hit = (1..=longest).rev().find_map(|len| {
                let key = lowered[i..i + len].join(" ");
                self.index.get(&key).map(|t| (len, t))
            });
            match hit {
                Some((len, target)) => {
                    matches.push(LexiconMatch {
                        token_start: i,
                        token_end: i + len - 1,
                        canonical: target.canonical.clone(),
                        via_alias: target.via_alias,
                    });
                    i += len;
                }
                None => i += 1,
            }
        }
        matches
    }

    /// Per-token flag: is the token inside a dictionary match.
    pub fn membership(&self, tokens: &[Token]) -> Vec<bool> {
        let mut flags = vec![false; tokens.len()];
        for m in self.find_matches(tokens) {
            flags[m.token_start..=m.token_end].fill(true);
        }
        flags
    }
}

/// Silver-labels a paragraph with every dictionary match.
pub fn auto_label(p: &Paragraph, lex: &Lexicon) -> LabeledParagraph {
    let tokens = tokenize(&p.text);
    let spans = lex
        .find_matches(&tokens)
        .into_iter()
        .map(|m| Span::from_tokens(&tokens, m.token_start, m.token_end))
        .collect();
    LabeledParagraph {
        paragraph: p.clone(),
        tokens,
        spans,
        provenance: Provenance::SilverLexicon,
    }
}
