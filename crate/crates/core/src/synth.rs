//! Synthetic drug-mention corpora with known truth, for tests and demos.
//!
//! Drug names are built from random syllable stems and pharmacological
//! suffixes and appear in dosing, treatment and comparison contexts. A
//! lexicon covers part of the drug inventory plus a set of non-drug
//! chemicals and organisms, which also occur in the corpus as non-entities.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::{write_dataset, LabeledParagraph, Provenance, Span};
use crate::corpus::{tokenize, Corpus, Paragraph, ParagraphId};
use crate::lexicon::{Lexicon, TermEntry};

const CONSONANTS: &[&str] = &["b", "d", "f", "g", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr", "cl"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ea", "io"];
const SUFFIXES: &[&str] = &[
    "vir", "mab", "cillin", "mycin", "azole", "statin", "tinib", "floxacin", "cycline", "quine",
    "pril", "sartan", "olol", "dronate", "profen", "vudine", "navir", "tecan", "platin", "oxacin",
];

/// Lexicon terms that are not drugs in this corpus.
pub const NON_DRUG_TERMS: &[&str] = &[
    "rabbit", "calcium", "silver", "sodium", "oxygen", "water", "glucose", "iron", "zinc",
    "potassium", "magnesium", "ethanol", "saline", "nitrogen", "copper", "gold", "honey", "garlic",
    "ginger", "collagen", "albumin", "charcoal", "mouse", "serum", "plasma", "protein", "sugar",
    "salt", "milk", "tea",
];

const PROTEINS: &[&str] = &["ACE2", "TMPRSS2", "IL-6", "TNF", "ferritin", "CD4", "furin", "NF-kB"];
const UNITS: &[&str] = &["mg", "mg/kg", "g", "mL"];

const DRUG_SENTENCES: &[&str] = &[
    "Patients received {D} {N} {U} once daily for {N} days.",
    "Treatment with {D} and {D} reduced viral load.",
    "{D} was administered intravenously at {N} {U}.",
    "The combination of {D} with {D} showed synergistic activity in vitro.",
    "We evaluated the efficacy of {D} against the virus.",
    "In a randomized trial, {D} did not improve survival.",
    "{D} inhibits viral replication with an EC50 of {N} uM.",
    "Compared with placebo, {D} shortened the time to recovery.",
    "Several drugs, including {D}, {D} and {D}, were repurposed.",
    "The half-life of {D} is approximately {N} hours.",
    "A dose of {N} {U} of {D} was well tolerated.",
    "Resistance to {D} emerged after {N} weeks of therapy.",
    "{D} ({N} {U}) was given twice a day.",
    "Adverse events were more frequent with {D} than with {D}.",
];

const OTHER_SENTENCES: &[&str] = &[
    "The samples were stored at {N} degrees.",
    "{C} levels were measured in {N} samples.",
    "Blood was collected from {N} {C} subjects.",
    "The study enrolled {N} patients across {N} hospitals.",
    "Viral RNA was extracted using a commercial kit.",
    "A buffer containing {C} and {C} was used.",
    "Expression of {P} was elevated in infected cells.",
    "{P} binds the spike protein with high affinity.",
    "Cells were washed twice with {C} before imaging.",
    "The mean age of participants was {N} years.",
    "Symptoms resolved within {N} days in most cases.",
    "Supplementation with {C} was recommended by {N} guidelines.",
    "Levels of {P} correlated with disease severity.",
    "The {C} diet group gained {N} g over the study.",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub paragraphs: usize,
    pub paragraphs_per_document: usize,
    /// Size of the drug inventory.
    pub drugs: usize,
    /// Drugs included in the lexicon.
    pub lexicon_drugs: usize,
    /// Non-drug terms included in the lexicon (at most 30).
    pub lexicon_distractors: usize,
    /// Probability that a paragraph mentions at least one drug.
    pub drug_paragraph_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            paragraphs: 5000,
            paragraphs_per_document: 5,
            drugs: 600,
            lexicon_drugs: 270,
            lexicon_distractors: 30,
            drug_paragraph_rate: 0.6,
            seed: 7,
        }
    }
}

/// A generated corpus with its lexicon and true drug spans.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub lexicon: Lexicon,
    /// Gold labeling of every corpus paragraph, in corpus order.
    pub truth: Vec<LabeledParagraph>,
    /// The full drug inventory (lexicon drugs first).
    pub drugs: Vec<String>,
    /// True mentions per lowercase drug name.
    pub mention_counts: BTreeMap<String, usize>,
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn drug_names(rng: &mut ChaCha8Rng, count: usize) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let syllables = rng.random_range(1..=2);
        let mut stem = String::new();
        for _ in 0..syllables {
            stem.push_str(CONSONANTS.choose(rng).unwrap());
            stem.push_str(VOWELS.choose(rng).unwrap());
        }
        stem.push_str(CONSONANTS.choose(rng).unwrap());
        let name = if rng.random_bool(0.05) {
            format!("{stem}ic acid")
        } else {
            format!("{stem}{}", SUFFIXES.choose(rng).unwrap())
        };
        if seen.insert(name.clone()) {
            out.push(name);
        }
    }
    out
}

struct Builder {
    text: String,
    chars: usize,
    entities: Vec<(usize, usize)>,
}

impl Builder {
    fn push(&mut self, s: &str) {
        self.text.push_str(s);
        self.chars += s.chars().count();
    }

    fn push_entity(&mut self, s: &str) {
        let start = self.chars;
        self.push(s);
        self.entities.push((start, self.chars));
    }
}

impl SynthCorpus {
    pub fn generate(config: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let drugs = drug_names(&mut rng, config.drugs.max(1));
        // Zipf-like mention frequencies over a shuffled rank order, so
        // lexicon membership and frequency are independent.
        let mut ranks: Vec<usize> = (0..drugs.len()).collect();
        for i in (1..ranks.len()).rev() {
            ranks.swap(i, rng.random_range(0..=i));
        }
        let weights: Vec<f64> = ranks.iter().map(|&r| 1.0 / (r as f64 + 1.0).powf(0.8)).collect();
        let drug_dist = WeightedIndex::new(&weights).expect("positive weights");

        let n_lex = config.lexicon_drugs.min(drugs.len());
        let distractors = &NON_DRUG_TERMS[..config.lexicon_distractors.min(NON_DRUG_TERMS.len())];
        let lexicon = Lexicon::from_entries(
            drugs[..n_lex]
                .iter()
                .map(|d| TermEntry::new(d.as_str()).with_code("J05"))
                .chain(distractors.iter().map(|t| TermEntry::new(*t))),
        );

        let mut documents: Vec<(String, Vec<String>)> = Vec::new();
        let mut truth = Vec::with_capacity(config.paragraphs);
        let mut mention_counts = BTreeMap::new();
        let per_doc = config.paragraphs_per_document.max(1);
        for i in 0..config.paragraphs {
            let doc_id = format!("doc{:05}", i / per_doc);
            if i % per_doc == 0 {
                documents.push((doc_id.clone(), Vec::new()));
            }
            let mut b = Builder {
                text: String::new(),
                chars: 0,
                entities: Vec::new(),
            };
            let with_drugs = rng.random_bool(config.drug_paragraph_rate);
            let n_sentences = rng.random_range(2..=5);
            let drug_slot = rng.random_range(0..n_sentences);
            for s in 0..n_sentences {
                let drug_sentence =
                    with_drugs && (s == drug_slot || rng.random_bool(0.25));
                let template = if drug_sentence {
                    DRUG_SENTENCES.choose(&mut rng).unwrap()
                } else {
                    OTHER_SENTENCES.choose(&mut rng).unwrap()
                };
                if s > 0 {
                    b.push(" ");
                }
                let mut rest: &str = template;
                let mut at_start = true;
                while let Some(open) = rest.find('{') {
                    b.push(&rest[..open]);
                    at_start &= open == 0;
                    let close = open + rest[open..].find('}').unwrap();
                    let slot = &rest[open + 1..close];
                    let word = match slot {
                        "D" => drugs[drug_dist.sample(&mut rng)].clone(),
                        "N" => rng.random_range(2..500).to_string(),
                        "U" => UNITS.choose(&mut rng).unwrap().to_string(),
                        "C" => NON_DRUG_TERMS.choose(&mut rng).unwrap().to_string(),
                        "P" => PROTEINS.choose(&mut rng).unwrap().to_string(),
                        other => unreachable!("unknown slot {other}"),
                    };
                    let shown = if at_start { capitalize(&word) } else { word.clone() };
                    if slot == "D" {
                        b.push_entity(&shown);
                        *mention_counts.entry(word).or_insert(0) += 1;
                    } else {
                        b.push(&shown);
                    }
                    at_start = false;
                    rest = &rest[close + 1..];
                }
                b.push(rest);
            }
            let para_index = documents.last().unwrap().1.len();
            documents.last_mut().unwrap().1.push(b.text.clone());
            let tokens = tokenize(&b.text);
            let spans = b
                .entities
                .iter()
                .map(|&(start, end)| {
                    let ts = tokens.iter().position(|t| t.start == start).expect("entity starts a token");
                    let te = tokens.iter().position(|t| t.end == end).expect("entity ends a token");
                    Span::from_tokens(&tokens, ts, te)
                })
                .collect();
            truth.push(
                LabeledParagraph::from_parts(
                    Paragraph::new(doc_id, para_index, b.text),
                    tokens,
                    spans,
                    Provenance::Gold,
                )
                .expect("generated spans are valid"),
            );
        }
        let corpus = Corpus::from_documents(documents).expect("generated corpus is well formed");
        Self {
            corpus,
            lexicon,
            truth,
            drugs,
            mention_counts,
        }
    }

    /// True spans keyed by paragraph id.
    pub fn truth_map(&self) -> HashMap<ParagraphId, Vec<Span>> {
        self.truth
            .iter()
            .map(|lp| (lp.paragraph.id(), lp.spans.clone()))
            .collect()
    }

    /// Writes `corpus.jsonl`, `lexicon.csv` and `truth.jsonl` into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> std::io::Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.corpus.write(dir.join("corpus.jsonl"))?;
        self.lexicon
            .write(dir.join("lexicon.csv"))
            .map_err(std::io::Error::other)?;
        write_dataset(&self.truth, dir.join("truth.jsonl")).map_err(std::io::Error::other)?;
        Ok(())
    }
}
