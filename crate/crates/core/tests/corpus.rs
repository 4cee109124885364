use std::collections::HashSet;
use std::io::Write;
use std::sync::Arc;

use nerloop_core::corpus::{load_corpus, Corpus, CorpusError, CorpusStream};
use proptest::prelude::*;

fn write_corpus(lines: &[&str]) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    for l in lines {
        writeln!(f, "{l}").unwrap();
    }
    f
}

const TWO_DOCS: &[&str] = &[
    r#"{"doc_id":"a","paragraphs":["a0","a1","a2"]}"#,
    r#"{"doc_id":"b","paragraphs":["b0","b1","b2"]}"#,
];

#[test]
fn stream_emits_every_paragraph_once() {
    let f = write_corpus(TWO_DOCS);
    let mut stream = load_corpus(f.path(), 7).unwrap();
    let ids: HashSet<_> = (0..6).map(|_| stream.next_paragraph().unwrap().id()).collect();
    assert_eq!(ids.len(), 6);
    assert!(stream.next_paragraph().is_none());
    assert!(stream.is_exhausted());
}

#[test]
fn same_seed_same_order() {
    let f = write_corpus(TWO_DOCS);
    let a: Vec<_> = load_corpus(f.path(), 7).unwrap().map(|p| p.text).collect();
    let b: Vec<_> = load_corpus(f.path(), 7).unwrap().map(|p| p.text).collect();
    assert_eq!(a, b);
}

#[test]
fn blank_paragraph_is_skipped() {
    let f = write_corpus(&[
        r#"{"doc_id":"a","paragraphs":["a0","  ","a2"]}"#,
        r#"{"doc_id":"b","paragraphs":["b0","b1","b2"]}"#,
    ]);
    let paragraphs: Vec<_> = load_corpus(f.path(), 7).unwrap().collect();
    assert_eq!(paragraphs.len(), 5);
    assert!(paragraphs.iter().any(|p| p.doc_id == "a" && p.para_index == 2));
}

#[test]
fn cursor_resume_continues_the_order() {
    let f = write_corpus(TWO_DOCS);
    let corpus = Arc::new(Corpus::load(f.path()).unwrap());
    let full: Vec<_> = CorpusStream::new(corpus.clone(), 3).collect();
    let mut first = CorpusStream::new(corpus.clone(), 3);
    for _ in 0..3 {
        first.next_paragraph();
    }
    let mut resumed = CorpusStream::with_cursor(corpus, 3, first.cursor());
    assert_eq!(resumed.next_paragraph().unwrap(), full[3]);
}

#[test]
fn load_errors() {
    assert!(matches!(
        load_corpus("/nonexistent/corpus.jsonl", 1),
        Err(CorpusError::Io { .. })
    ));
    let f = write_corpus(&[TWO_DOCS[0], "{not json"]);
    match load_corpus(f.path(), 1) {
        Err(CorpusError::Malformed { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
    let empty = write_corpus(&[]);
    assert!(matches!(load_corpus(empty.path(), 1), Err(CorpusError::Empty)));
}

proptest! {
    #[test]
    fn streams_are_permutations(n in 1usize..60, seed in any::<u64>()) {
        let corpus = Corpus::from_documents(
            (0..n).map(|i| (format!("d{i}"), vec![format!("text {i}")])),
        ).unwrap();
        let corpus = Arc::new(corpus);
        let stream = CorpusStream::new(corpus.clone(), seed);
        let ids: Vec<_> = stream.map(|p| p.id()).collect();
        let unique: HashSet<_> = ids.iter().cloned().collect();
        prop_assert_eq!(ids.len(), n);
        prop_assert_eq!(unique.len(), n);
        let again: Vec<_> = CorpusStream::new(corpus, seed).map(|p| p.id()).collect();
        prop_assert_eq!(again, ids);
    }
}
