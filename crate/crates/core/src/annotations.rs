//! Entity spans, the IOB codec and the two dataset formats.
//!
//! # JSONL dataset
//!
//! One paragraph per line:
//!
//! ```text
//! {"text": "...",
//!  "tokens": [{"text": "Ribavirin", "start": 0, "end": 9, "id": 0}, ...],
//!  "spans":  [{"start": 0, "end": 9, "token_start": 0, "token_end": 0, "label": "drug"}],
//!  "meta":   {"doc_id": "d1", "para_index": 3, "provenance": "gold"}}
//! ```
//!
//! Character offsets count Unicode scalar values, `end` is exclusive and
//! `token_end` is inclusive. `meta` is optional on read; a record without it
//! gets an empty `doc_id`, its 0-based record number as `para_index`, and
//! `gold` provenance. Unknown or renamed fields are rejected.
//!
//! # IOB CSV
//!
//! Header `tokens,labels`, then one sentence per row: the sentence tokens
//! joined by single spaces, and the IOB labels joined the same way. Fields
//! containing commas or quotes use standard CSV quoting.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{char_len, tokenize, Paragraph, Token};

/// The single entity class used throughout the toolkit.
pub const DRUG_LABEL: &str = "drug";

#[derive(Debug, thiserror::Error)]
pub enum AnnotationError {
    #[error("span {span} is not aligned to token boundaries: {reason}")]
    Misaligned { span: String, reason: String },
    #[error("label sequence has {labels} labels for {tokens} tokens")]
    LengthMismatch { tokens: usize, labels: usize },
    #[error("invalid paragraph: {0}")]
    Invalid(String),
    #[error("malformed dataset record at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub token_start: usize,
    /// Inclusive.
    pub token_end: usize,
    pub label: String,
}

impl Span {
    /// Span covering tokens `token_start..=token_end`.
    pub fn from_tokens(tokens: &[Token], token_start: usize, token_end: usize) -> Self {
        Self::from_tokens_labeled(tokens, token_start, token_end, DRUG_LABEL)
    }

    pub fn from_tokens_labeled(
        tokens: &[Token],
        token_start: usize,
        token_end: usize,
        label: &str,
    ) -> Self {
        Self {
            start: tokens[token_start].start,
            end: tokens[token_end].end,
            token_start,
            token_end,
            label: label.to_string(),
        }
    }

    pub fn token_len(&self) -> usize {
        self.token_end + 1 - self.token_start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.token_start <= other.token_end && other.token_start <= self.token_end
    }

    pub fn same_tokens(&self, other: &Span) -> bool {
        self.token_start == other.token_start && self.token_end == other.token_end
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}..{}) tokens {}..={} {:?}",
            self.start, self.end, self.token_start, self.token_end, self.label
        )
    }
}

/// Checks one span against a tokenization.
pub fn check_span(tokens: &[Token], span: &Span) -> Result<(), AnnotationError> {
    let misaligned = |reason: String| AnnotationError::Misaligned {
        span: span.to_string(),
        reason,
    };
    if span.start >= span.end {
        return Err(misaligned("start >= end".into()));
    }
    if span.token_start > span.token_end {
        return Err(misaligned("token_start > token_end".into()));
    }
    if span.token_end >= tokens.len() {
        return Err(misaligned(format!(
            "token_end beyond {} tokens",
            tokens.len()
        )));
    }
    if tokens[span.token_start].start != span.start {
        return Err(misaligned(format!(
            "start {} != token {} start {}",
            span.start, span.token_start, tokens[span.token_start].start
        )));
    }
    if tokens[span.token_end].end != span.end {
        return Err(misaligned(format!(
            "end {} != token {} end {}",
            span.end, span.token_end, tokens[span.token_end].end
        )));
    }
    if span.label.is_empty() {
        return Err(misaligned("empty label".into()));
    }
    Ok(())
}

/// Checks every span and that the list is sorted and non-overlapping.
pub fn check_spans(tokens: &[Token], spans: &[Span]) -> Result<(), AnnotationError> {
    for span in spans {
        check_span(tokens, span)?;
    }
    for pair in spans.windows(2) {
        if pair[1].token_start <= pair[0].token_end {
            return Err(AnnotationError::Invalid(format!(
                "spans {} and {} overlap or are unsorted",
                pair[0], pair[1]
            )));
        }
    }
    Ok(())
}

/// Checks token invariants against the paragraph text.
pub fn check_tokens(text: &str, tokens: &[Token]) -> Result<(), AnnotationError> {
    let chars: Vec<char> = text.chars().collect();
    let mut prev_end = 0;
    for (i, tok) in tokens.iter().enumerate() {
        let bad = |why: &str| AnnotationError::Invalid(format!("token {i} {:?}: {why}", tok.text));
        if tok.id != i {
            return Err(bad("id is not its position"));
        }
        if tok.start >= tok.end {
            return Err(bad("start >= end"));
        }
        if tok.end > chars.len() {
            return Err(bad("end beyond text"));
        }
        if tok.start < prev_end {
            return Err(bad("overlaps previous token"));
        }
        if chars[tok.start..tok.end].iter().copied().ne(tok.text.chars()) {
            return Err(bad("text does not match offsets"));
        }
        prev_end = tok.end;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    SilverLexicon,
    SilverModel,
    Gold,
}

/// A paragraph with its tokenization and entity spans.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledParagraph {
    pub paragraph: Paragraph,
    pub tokens: Vec<Token>,
    pub spans: Vec<Span>,
    pub provenance: Provenance,
}

impl LabeledParagraph {
    /// Tokenizes `paragraph` with [`tokenize`] and attaches `spans`.
    pub fn new(
        paragraph: Paragraph,
        spans: Vec<Span>,
        provenance: Provenance,
    ) -> Result<Self, AnnotationError> {
        let tokens = tokenize(&paragraph.text);
        Self::from_parts(paragraph, tokens, spans, provenance)
    }

    pub fn unlabeled(paragraph: Paragraph, provenance: Provenance) -> Self {
        let tokens = tokenize(&paragraph.text);
        Self {
            paragraph,
            tokens,
            spans: Vec::new(),
            provenance,
        }
    }

    pub fn from_parts(
        paragraph: Paragraph,
        tokens: Vec<Token>,
        spans: Vec<Span>,
        provenance: Provenance,
    ) -> Result<Self, AnnotationError> {
        let lp = Self {
            paragraph,
            tokens,
            spans,
            provenance,
        };
        lp.validate()?;
        Ok(lp)
    }

    pub fn validate(&self) -> Result<(), AnnotationError> {
        check_tokens(&self.paragraph.text, &self.tokens)?;
        check_spans(&self.tokens, &self.spans)
    }

    pub fn text(&self) -> &str {
        &self.paragraph.text
    }

    /// Same paragraph and tokens, new spans and provenance.
    pub fn relabeled(&self, spans: Vec<Span>, provenance: Provenance) -> Self {
        Self {
            paragraph: self.paragraph.clone(),
            tokens: self.tokens.clone(),
            spans,
            provenance,
        }
    }

    /// Surface text of a span.
    pub fn span_text(&self, span: &Span) -> String {
        crate::corpus::char_slice(&self.paragraph.text, span.start, span.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Iob {
    B,
    I,
    O,
}

impl Iob {
    pub const ALL: [Iob; 3] = [Iob::O, Iob::B, Iob::I];

    pub fn index(self) -> usize {
        match self {
            Iob::O => 0,
            Iob::B => 1,
            Iob::I => 2,
        }
    }

    pub fn from_index(i: usize) -> Iob {
        Self::ALL[i]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Iob::B => "B",
            Iob::I => "I",
            Iob::O => "O",
        }
    }

    /// Whether `next` may follow `prev` (`None` = sequence start).
    pub fn transition_allowed(prev: Option<Iob>, next: Iob) -> bool {
        !(next == Iob::I && matches!(prev, None | Some(Iob::O)))
    }
}

impl fmt::Display for Iob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Labels over tokens, one per token.
pub type IobSequence = Vec<Iob>;

/// No `I` at position 0 and no `I` right after `O`.
pub fn is_valid_iob(seq: &[Iob]) -> bool {
    let mut prev = None;
    for &label in seq {
        if !Iob::transition_allowed(prev, label) {
            return false;
        }
        prev = Some(label);
    }
    true
}

/// Promotes every stray `I` to `B`; returns the number of repairs.
pub fn repair_iob(seq: &mut [Iob]) -> usize {
    let mut prev = None;
    let mut repairs = 0;
    for label in seq.iter_mut() {
        if !Iob::transition_allowed(prev, *label) {
            *label = Iob::B;
            repairs += 1;
        }
        prev = Some(*label);
    }
    repairs
}

pub fn spans_to_iob(lp: &LabeledParagraph) -> Result<IobSequence, AnnotationError> {
    spans_to_iob_tokens(&lp.tokens, &lp.spans)
}

pub fn spans_to_iob_tokens(tokens: &[Token], spans: &[Span]) -> Result<IobSequence, AnnotationError> {
    check_spans(tokens, spans)?;
    let mut seq = vec![Iob::O; tokens.len()];
    for span in spans {
        seq[span.token_start] = Iob::B;
        for label in &mut seq[span.token_start + 1..=span.token_end] {
            *label = Iob::I;
        }
    }
    Ok(seq)
}

/// Spans decoded from an IOB sequence, with the number of stray `I`
/// labels that had to be promoted to `B` first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedSpans {
    pub spans: Vec<Span>,
    pub repairs: usize,
}

impl DecodedSpans {
    pub fn repaired(&self) -> bool {
        self.repairs > 0
    }
}

pub fn iob_to_spans(tokens: &[Token], seq: &[Iob]) -> Result<DecodedSpans, AnnotationError> {
    iob_to_spans_labeled(tokens, seq, DRUG_LABEL)
}

pub fn iob_to_spans_labeled(
    tokens: &[Token],
    seq: &[Iob],
    label: &str,
) -> Result<DecodedSpans, AnnotationError> {
    if tokens.len() != seq.len() {
        return Err(AnnotationError::LengthMismatch {
            tokens: tokens.len(),
            labels: seq.len(),
        });
    }
    let mut seq = seq.to_vec();
    let repairs = repair_iob(&mut seq);
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &tag) in seq.iter().enumerate() {
        match tag {
            Iob::B => {
                if let Some(s) = open.take() {
                    spans.push(Span::from_tokens_labeled(tokens, s, i - 1, label));
                }
                open = Some(i);
            }
            Iob::I => {}
            Iob::O => {
                if let Some(s) = open.take() {
                    spans.push(Span::from_tokens_labeled(tokens, s, i - 1, label));
                }
            }
        }
    }
    if let Some(s) = open {
        spans.push(Span::from_tokens_labeled(tokens, s, seq.len() - 1, label));
    }
    Ok(DecodedSpans { spans, repairs })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordMeta {
    doc_id: String,
    para_index: usize,
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetRecord {
    text: String,
    tokens: Vec<Token>,
    spans: Vec<Span>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<RecordMeta>,
}

fn to_record(lp: &LabeledParagraph) -> DatasetRecord {
    DatasetRecord {
        text: lp.paragraph.text.clone(),
        tokens: lp.tokens.clone(),
        spans: lp.spans.clone(),
        meta: Some(RecordMeta {
            doc_id: lp.paragraph.doc_id.clone(),
            para_index: lp.paragraph.para_index,
            provenance: lp.provenance,
        }),
    }
}

/// Serializes one paragraph as a dataset line (no trailing newline).
pub fn to_jsonl_line(lp: &LabeledParagraph) -> String {
    serde_json::to_string(&to_record(lp)).expect("dataset records always serialize")
}

/// Parses one dataset line. `ordinal` is used as `para_index` when the
/// record has no `meta`.
pub fn from_jsonl_line(line: &str, ordinal: usize) -> Result<LabeledParagraph, String> {
    let record: DatasetRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let text_len = char_len(&record.text);
    if let Some(span) = record.spans.iter().find(|s| s.end > text_len) {
        return Err(format!("span {span} ends beyond text length {text_len}"));
    }
    let (doc_id, para_index, provenance) = match record.meta {
        Some(m) => (m.doc_id, m.para_index, m.provenance),
        None => (String::new(), ordinal, Provenance::Gold),
    };
    LabeledParagraph::from_parts(
        Paragraph {
            doc_id,
            para_index,
            text: record.text,
        },
        record.tokens,
        record.spans,
        provenance,
    )
    .map_err(|e| e.to_string())
}

pub fn write_dataset(lps: &[LabeledParagraph], path: impl AsRef<Path>) -> Result<(), AnnotationError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_dataset_to(lps, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_dataset_to<W: Write>(lps: &[LabeledParagraph], mut out: W) -> Result<(), AnnotationError> {
    for lp in lps {
        lp.validate()?;
        out.write_all(to_jsonl_line(lp).as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<LabeledParagraph>, AnnotationError> {
    read_dataset_from(BufReader::new(File::open(path)?))
}

pub fn read_dataset_from<R: BufRead>(reader: R) -> Result<Vec<LabeledParagraph>, AnnotationError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lp = from_jsonl_line(&line, out.len()).map_err(|message| AnnotationError::Malformed {
            line: idx + 1,
            message,
        })?;
        out.push(lp);
    }
    Ok(out)
}

/// Token ranges of the sentences of a paragraph.
///
/// A sentence ends after a `.`, `!` or `?` token that is followed by
/// whitespace and a token starting with an uppercase letter, unless that
/// next token continues an entity.
pub fn sentence_ranges(tokens: &[Token], labels: &[Iob]) -> Vec<Range<usize>> {
    let mut ranges = Vec::new();
    let mut start = 0;
    for i in 0..tokens.len().saturating_sub(1) {
        let tok = &tokens[i];
        let next = &tokens[i + 1];
        let boundary = matches!(tok.text.as_str(), "." | "!" | "?")
            && next.start > tok.end
            && next.text.chars().next().is_some_and(char::is_uppercase)
            && labels.get(i + 1) != Some(&Iob::I);
        if boundary {
            ranges.push(start..i + 1);
            start = i + 1;
        }
    }
    if start < tokens.len() {
        ranges.push(start..tokens.len());
    }
    ranges
}

pub fn export_iob_csv(lps: &[LabeledParagraph], path: impl AsRef<Path>) -> Result<(), AnnotationError> {
    let file = File::create(path)?;
    export_iob_csv_to(lps, file)
}

pub fn export_iob_csv_to<W: Write>(lps: &[LabeledParagraph], out: W) -> Result<(), AnnotationError> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["tokens", "labels"])?;
    for lp in lps {
        let labels = spans_to_iob(lp)?;
        for range in sentence_ranges(&lp.tokens, &labels) {
            let toks = lp.tokens[range.clone()]
                .iter()
                .map(|t| t.text.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            let tags = labels[range]
                .iter()
                .map(|l| l.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            writer.write_record([toks, tags])?;
        }
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(text: &str, spans: &[(usize, usize)]) -> LabeledParagraph {
        let tokens = tokenize(text);
        let spans = spans
            .iter()
            .map(|&(s, e)| Span::from_tokens(&tokens, s, e))
            .collect();
        LabeledParagraph::from_parts(Paragraph::new("d", 0, text), tokens, spans, Provenance::Gold)
            .unwrap()
    }

    #[test]
    fn encodes_single_token_entity() {
        let p = lp("Ribavirin was administered", &[(0, 0)]);
        assert_eq!(spans_to_iob(&p).unwrap(), [Iob::B, Iob::O, Iob::O]);
        let decoded = iob_to_spans(&p.tokens, &[Iob::B, Iob::O, Iob::O]).unwrap();
        assert_eq!(decoded.spans, p.spans);
        assert_eq!((decoded.spans[0].start, decoded.spans[0].end), (0, 9));
        assert!(!decoded.repaired());
    }

    #[test]
    fn encodes_multi_token_entity() {
        let p = lp("we gave the fusidic acid today", &[(3, 4)]);
        use Iob::*;
        assert_eq!(spans_to_iob(&p).unwrap(), [O, O, O, B, I, O]);
        let none = lp("we gave the fusidic acid today", &[]);
        assert_eq!(spans_to_iob(&none).unwrap(), [O; 6]);
    }

    #[test]
    fn stray_inside_is_promoted() {
        let p = lp("Ribavirin was administered", &[]);
        use Iob::*;
        let decoded = iob_to_spans(&p.tokens, &[O, I, O]).unwrap();
        assert_eq!(decoded.repairs, 1);
        assert_eq!(decoded.spans, vec![Span::from_tokens(&p.tokens, 1, 1)]);
        let decoded = iob_to_spans(&p.tokens, &[I, I, O]).unwrap();
        assert_eq!(decoded.repairs, 1);
        assert_eq!(decoded.spans, vec![Span::from_tokens(&p.tokens, 0, 1)]);
        assert!(iob_to_spans(&p.tokens, &[O; 3]).unwrap().spans.is_empty());
        assert!(matches!(
            iob_to_spans(&p.tokens, &[O; 2]),
            Err(AnnotationError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn adjacent_entities_stay_separate() {
        let p = lp("a b c", &[(0, 0), (1, 2)]);
        use Iob::*;
        let seq = spans_to_iob(&p).unwrap();
        assert_eq!(seq, [B, B, I]);
        assert_eq!(iob_to_spans(&p.tokens, &seq).unwrap().spans, p.spans);
    }

    #[test]
    fn misaligned_span_is_reported() {
        let mut p = lp("Ribavirin was administered", &[(0, 0)]);
        p.spans[0].end = 8;
        let err = spans_to_iob(&p).unwrap_err();
        assert!(matches!(err, AnnotationError::Misaligned { .. }), "{err}");
    }

    #[test]
    fn reads_hand_written_record() {
        let line = r#"{"text":"Ribavirin was given","tokens":[{"text":"Ribavirin","start":0,"end":9,"id":0},{"text":"was","start":10,"end":13,"id":1},{"text":"given","start":14,"end":19,"id":2}],"spans":[{"start":0,"end":9,"token_start":0,"token_end":0,"label":"drug"}]}"#;
        let p = from_jsonl_line(line, 4).unwrap();
        assert_eq!(p.spans.len(), 1);
        assert_eq!(p.paragraph.para_index, 4);
        assert_eq!(p.provenance, Provenance::Gold);

        let renamed = line.replace("\"token_start\"", "\"tokenStart\"");
        assert!(from_jsonl_line(&renamed, 0).is_err());
        let too_long = line.replace("\"end\":9,\"token_start\"", "\"end\":99,\"token_start\"");
        let err = from_jsonl_line(&too_long, 0).unwrap_err();
        assert!(err.contains("beyond text length"), "{err}");
    }

    #[test]
    fn dataset_line_numbers_in_errors() {
        let good = to_jsonl_line(&lp("Ribavirin was administered", &[(0, 0)]));
        let data = format!("{good}\n{{\"text\": 1}}\n");
        match read_dataset_from(data.as_bytes()) {
            Err(AnnotationError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sentences_split_on_terminal_punctuation() {
        let p = lp("Ribavirin was given. Arbidol was not! Then x.Y and z. w", &[(0, 0), (4, 4)]);
        let labels = spans_to_iob(&p).unwrap();
        let ranges = sentence_ranges(&p.tokens, &labels);
        assert_eq!(ranges, vec![0..4, 4..8, 8..16]);

        let mut buf = Vec::new();
        export_iob_csv_to(std::slice::from_ref(&p), &mut buf).unwrap();
        let csv = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "tokens,labels");
        assert_eq!(lines[1], "Ribavirin was given .,B O O O");
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn sentence_split_never_inside_entity() {
        let tokens = tokenize("vitamin B. Complex is here");
        use Iob::*;
        let labels = [B, I, I, I, O, O];
        assert_eq!(sentence_ranges(&tokens, &labels), vec![0..6]);
    }

    #[test]
    fn csv_quotes_commas() {
        let p = lp("sofosbuvir, ribavirin", &[(0, 0), (2, 2)]);
        let mut buf = Vec::new();
        export_iob_csv_to(&[p], &mut buf).unwrap();
        let csv = String::from_utf8(buf).unwrap();
        assert_eq!(csv.lines().nth(1).unwrap(), "\"sofosbuvir , ribavirin\",B O B");
    }
}
