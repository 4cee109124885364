//! Corpus ingestion, seeded paragraph streaming, tokenization and token
//! classes.
//!
//! A corpus file holds one JSON document per line:
//!
//! ```text
//! {"doc_id": "pmc123", "paragraphs": ["first paragraph", "second paragraph"]}
//! ```
//!
//! Paragraphs keep the index they have in their document's `paragraphs`
//! array, so blank paragraphs (skipped on load) leave a gap in the numbering
//! instead of shifting later ids.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Default seed of the paragraph permutation (`stream_seed`).
pub const DEFAULT_STREAM_SEED: u64 = 42;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed corpus record at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate doc_id {doc_id:?} at line {line}")]
    DuplicateDocument { line: usize, doc_id: String },
    #[error("corpus contains no non-blank paragraphs")]
    Empty,
}

/// Identity of a paragraph inside a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParagraphId {
    pub doc_id: String,
    pub para_index: usize,
}

impl fmt::Display for ParagraphId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.doc_id, self.para_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paragraph {
    pub doc_id: String,
    pub para_index: usize,
    pub text: String,
}

impl Paragraph {
    pub fn new(doc_id: impl Into<String>, para_index: usize, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            para_index,
            text: text.into(),
        }
    }

    pub fn id(&self) -> ParagraphId {
        ParagraphId {
            doc_id: self.doc_id.clone(),
            para_index: self.para_index,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DocumentRecord {
    doc_id: String,
    paragraphs: Vec<String>,
}

#[derive(Serialize)]
struct DocumentRecordRef<'a> {
    doc_id: &'a str,
    paragraphs: Vec<&'a str>,
}

/// All non-blank paragraphs of a corpus, in file order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    paragraphs: Vec<Paragraph>,
}

impl Corpus {
    /// Builds a corpus from `(doc_id, paragraphs)` pairs, dropping blank
    /// paragraphs.
    pub fn from_documents<I, D, P>(docs: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = (D, Vec<P>)>,
        D: Into<String>,
        P: Into<String>,
    {
        let mut seen = HashSet::new();
        let mut paragraphs = Vec::new();
        for (line, (doc_id, paras)) in docs.into_iter().enumerate() {
            let doc_id = doc_id.into();
            if !seen.insert(doc_id.clone()) {
                return Err(CorpusError::DuplicateDocument {
                    line: line + 1,
                    doc_id,
                });
            }
            for (para_index, text) in paras.into_iter().enumerate() {
                let text = text.into();
                if text.trim().is_empty() {
                    continue;
                }
                paragraphs.push(Paragraph {
                    doc_id: doc_id.clone(),
                    para_index,
                    text,
                });
            }
        }
        if paragraphs.is_empty() {
            return Err(CorpusError::Empty);
        }
        Ok(Self { paragraphs })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let io_err = |source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        };
        let reader = BufReader::new(File::open(path).map_err(io_err)?);
        let mut docs = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(io_err)?;
            if line.trim().is_empty() {
                continue;
            }
            let record: DocumentRecord =
                serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            docs.push((idx + 1, record));
        }
        // Re-number duplicate errors with real file lines.
        let mut seen = HashSet::new();
        for (line, record) in &docs {
            if !seen.insert(record.doc_id.as_str()) {
                return Err(CorpusError::DuplicateDocument {
                    line: *line,
                    doc_id: record.doc_id.clone(),
                });
            }
        }
        Self::from_documents(docs.into_iter().map(|(_, r)| (r.doc_id, r.paragraphs)))
    }

    /// Writes the corpus back in the line-delimited document format. Blank
    /// paragraphs that were dropped on load are re-emitted as empty strings so
    /// paragraph indices survive.
    pub fn write(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(File::create(path)?);
        let mut start = 0;
        while start < self.paragraphs.len() {
            let doc_id = &self.paragraphs[start].doc_id;
            let end = start
                + self.paragraphs[start..]
                    .iter()
                    .take_while(|p| &p.doc_id == doc_id)
                    .count();
            let max_index = self.paragraphs[end - 1].para_index;
            let mut paras = vec![""; max_index + 1];
            for p in &self.paragraphs[start..end] {
                paras[p.para_index] = &p.text;
            }
            let record = DocumentRecordRef {
                doc_id,
                paragraphs: paras,
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
            start = end;
        }
        out.flush()
    }

    pub fn paragraphs(&self) -> &[Paragraph] {
        &self.paragraphs
    }

    pub fn len(&self) -> usize {
        self.paragraphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paragraphs.is_empty()
    }
}

/// Fisher-Yates permutation of `0..n` driven by ChaCha8 seeded with
/// `seed_from_u64(seed)`; index `i` (from `n-1` down to 1) swaps with a
/// uniform draw from `0..=i`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    order
}

/// Single-consumer stream over a corpus in a seeded, fixed permuted order.
///
/// The stream never yields a paragraph twice. Its whole state is
/// `(corpus, seed, cursor)`, so saving the cursor and rebuilding the stream
/// with [`CorpusStream::with_cursor`] resumes exactly where it stopped.
#[derive(Debug, Clone)]
pub struct CorpusStream {
    corpus: Arc<Corpus>,
    seed: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl CorpusStream {
    pub fn new(corpus: Arc<Corpus>, seed: u64) -> Self {
        let order = permutation(corpus.len(), seed);
        Self {
            corpus,
            seed,
            order,
            cursor: 0,
        }
    }

    pub fn with_cursor(corpus: Arc<Corpus>, seed: u64, cursor: usize) -> Self {
        let mut stream = Self::new(corpus, seed);
        stream.cursor = cursor.min(stream.order.len());
        stream
    }

    /// Returns the next unconsumed paragraph, or `None` once exhausted.
    pub fn next_paragraph(&mut self) -> Option<Paragraph> {
        let idx = *self.order.get(self.cursor)?;
        self.cursor += 1;
        Some(self.corpus.paragraphs[idx].clone())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn remaining(&self) -> usize {
        self.order.len() - self.cursor
    }

    pub fn is_exhausted(&self) -> bool {
        self.remaining() == 0
    }

    pub fn corpus(&self) -> &Arc<Corpus> {
        &self.corpus
    }

    /// Ids of every paragraph emitted so far, in emission order.
    pub fn consumed_ids(&self) -> impl Iterator<Item = ParagraphId> + '_ {
        self.order[..self.cursor]
            .iter()
            .map(|&i| self.corpus.paragraphs[i].id())
    }
}

impl Iterator for CorpusStream {
    type Item = Paragraph;

    fn next(&mut self) -> Option<Paragraph> {
        self.next_paragraph()
    }
}

pub fn load_corpus(path: impl AsRef<Path>, seed: u64) -> Result<CorpusStream, CorpusError> {
    Ok(CorpusStream::new(Arc::new(Corpus::load(path)?), seed))
}

/// A token with Unicode scalar-value offsets into its paragraph text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
    pub id: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn is_joiner(c: char) -> bool {
    matches!(c, '-' | '/' | '\'' | '\u{2019}')
}

/// Splits text into word runs and single-character punctuation tokens.
///
/// Word runs are maximal sequences of letters, digits and `_`; a hyphen,
/// slash or apostrophe between two word characters stays inside the run
/// (`once/day`, `co-trimoxazole`). Any other non-whitespace character is a
/// token of its own. Whitespace is skipped.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if is_word_char(c) {
            i += 1;
            while i < chars.len() {
                if is_word_char(chars[i]) {
                    i += 1;
                } else if is_joiner(chars[i])
                    && i + 1 < chars.len()
                    && is_word_char(chars[i + 1])
                {
                    i += 2;
                } else {
                    break;
                }
            }
        } else {
            i += 1;
        }
        tokens.push(Token {
            text: chars[start..i].iter().collect(),
            start,
            end: i,
            id: tokens.len(),
        });
    }
    tokens
}

/// Number of Unicode scalar values in `text`; the unit of all offsets.
pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

/// Substring by Unicode scalar offsets. Out-of-range bounds are clamped.
pub fn char_slice(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end.saturating_sub(start)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TokenClass {
    Word,
    Stopword,
    Punct,
    Numeric,
}

static STOPWORD_DATA: &str = include_str!("../data/stopwords.txt");

fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORD_DATA
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect()
    })
}

pub fn is_stopword(token_text: &str) -> bool {
    stopwords().contains(token_text.to_lowercase().as_str())
}

/// `[+-]?(d+(.d+)?|.d+)%?`
fn is_numeric(s: &str) -> bool {
    let s = s.strip_suffix('%').unwrap_or(s);
    let s = s.strip_prefix(['+', '-']).unwrap_or(s);
    let (int, frac) = match s.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (s, None),
    };
    let digits = |p: &str| !p.is_empty() && p.chars().all(|c| c.is_ascii_digit());
    match frac {
        None => digits(int),
        Some(f) => (int.is_empty() || digits(int)) && digits(f),
    }
}

pub fn classify_token(token_text: &str) -> TokenClass {
    if !token_text.is_empty()
        && token_text
            .chars()
            .all(|c| !c.is_alphanumeric() && !c.is_whitespace())
    {
        TokenClass::Punct
    } else if is_numeric(token_text) {
        TokenClass::Numeric
    } else if is_stopword(token_text) {
        TokenClass::Stopword
    } else {
        TokenClass::Word
    }
}
