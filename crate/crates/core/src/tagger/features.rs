//! Feature templates and the feature-string → id table.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{classify_token, Token, TokenClass};
use crate::lexicon::Lexicon;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    Bias,
    Word,
    Lower,
    Shape,
    Prefix(u8),
    Suffix(u8),
    IsNumeric,
    IsPunct,
    /// Token lies inside a lexicon match.
    LexiconFlag,
    /// Lowercased word at a relative offset.
    Neighbor(i8),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub templates: Vec<Template>,
}

impl FeatureConfig {
    /// Every template, with neighbors at offsets -2..=2.
    pub fn full() -> Self {
        use Template::*;
        Self {
            templates: vec![
                Bias,
                Word,
                Lower,
                Shape,
                Prefix(2),
                Prefix(3),
                Prefix(4),
                Suffix(2),
                Suffix(3),
                Suffix(4),
                IsNumeric,
                IsPunct,
                LexiconFlag,
                Neighbor(-2),
                Neighbor(-1),
                Neighbor(1),
                Neighbor(2),
            ],
        }
    }

    /// [`full`](Self::full) without the lexicon flag and the outer
    /// neighbors.
    pub fn reduced() -> Self {
        Self {
            templates: Self::full()
                .templates
                .into_iter()
                .filter(|t| !matches!(t, Template::LexiconFlag | Template::Neighbor(-2 | 2)))
                .collect(),
        }
    }

    pub fn uses_lexicon(&self) -> bool {
        self.templates.contains(&Template::LexiconFlag)
    }
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self::full()
    }
}

/// Word shape: `X` upper, `x` lower, `d` digit, other characters kept;
/// shapes longer than five characters keep the first five and end in `+`.
pub fn word_shape(word: &str) -> String {
    let mapped: Vec<char> = word
        .chars()
        .map(|c| {
            if c.is_uppercase() {
                'X'
            } else if c.is_lowercase() {
                'x'
            } else if c.is_numeric() {
                'd'
            } else {
                c
            }
        })
        .collect();
    if mapped.len() > 5 {
        let mut s: String = mapped[..5].iter().collect();
        s.push('+');
        s
    } else {
        mapped.into_iter().collect()
    }
}

fn affix(word: &[char], n: usize, prefix: bool) -> Option<String> {
    if word.len() < n {
        return None;
    }
    let slice = if prefix {
        &word[..n]
    } else {
        &word[word.len() - n..]
    };
    Some(slice.iter().collect())
}

/// Feature strings for every token. Deterministic in `(tokens, lexicon,
/// config)`.
pub fn extract_features(
    tokens: &[Token],
    lexicon: Option<&Lexicon>,
    config: &FeatureConfig,
) -> Vec<Vec<String>> {
    let lowered: Vec<String> = tokens.iter().map(|t| t.text.to_lowercase()).collect();
    let membership = match lexicon {
        Some(lex) if config.uses_lexicon() => lex.membership(tokens),
        _ => vec![false; tokens.len()],
    };
    tokens
        .iter()
        .enumerate()
        .map(|(i, tok)| {
            let chars: Vec<char> = lowered[i].chars().collect();
            let class = classify_token(&tok.text);
            let mut out = Vec::with_capacity(config.templates.len());
            for template in &config.templates {
                match *template {
                    Template::Bias => out.push("bias".to_string()),
                    Template::Word => out.push(format!("w={}", tok.text)),
                    Template::Lower => out.push(format!("lw={}", lowered[i])),
                    Template::Shape => out.push(format!("shape={}", word_shape(&tok.text))),
                    Template::Prefix(n) => {
                        if let Some(p) = affix(&chars, n as usize, true) {
                            out.push(format!("p{n}={p}"));
                        }
                    }
                    Template::Suffix(n) => {
                        if let Some(s) = affix(&chars, n as usize, false) {
                            out.push(format!("s{n}={s}"));
                        }
                    }
                    Template::IsNumeric => {
                        if class == TokenClass::Numeric {
                            out.push("numeric".to_string());
                        }
                    }
                    Template::IsPunct => {
                        if class == TokenClass::Punct {
                            out.push("punct".to_string());
                        }
                    }
                    Template::LexiconFlag => {
                        if membership[i] {
                            out.push("lexicon".to_string());
                        }
                    }
                    Template::Neighbor(off) => {
                        let j = i as isize + off as isize;
                        let word = if j < 0 {
                            "<s>"
                        } else if j as usize >= tokens.len() {
                            "</s>"
                        } else {
                            lowered[j as usize].as_str()
                        };
                        out.push(format!("w[{off:+}]={word}"));
                    }
                }
            }
            out
        })
        .collect()
}

/// Interned feature strings. Ids are assigned in first-seen order and are
/// stable across save/load.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct FeatureTable {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl From<Vec<String>> for FeatureTable {
    fn from(names: Vec<String>) -> Self {
        let ids = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as u32))
            .collect();
        Self { names, ids }
    }
}

impl From<FeatureTable> for Vec<String> {
    fn from(table: FeatureTable) -> Self {
        table.names
    }
}

impl FeatureTable {
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Known ids per token; unknown features are dropped.
    pub fn lookup_all(&self, features: &[Vec<String>]) -> Vec<Vec<u32>> {
        features
            .iter()
            .map(|fs| fs.iter().filter_map(|f| self.get(f)).collect())
            .collect()
    }

    pub fn intern_all(&mut self, features: &[Vec<String>]) -> Vec<Vec<u32>> {
        features
            .iter()
            .map(|fs| fs.iter().map(|f| self.intern(f)).collect())
            .collect()
    }
}
