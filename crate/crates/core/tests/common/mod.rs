//! Oracles and generators shared by the integration test targets.
#![allow(dead_code)]

use nerloop_core::annotations::{LabeledParagraph, Provenance, Span};
use nerloop_core::corpus::{tokenize, Paragraph};
use nerloop_core::tagger::CrfParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random CRF with `features` features and weights in `[-scale, scale]`.
pub fn random_params(rng: &mut ChaCha8Rng, features: usize, scale: f64) -> CrfParams {
    let mut p = CrfParams::zeros(features);
    let mut w = || rng.random_range(-scale..=scale);
    for v in p.emission.iter_mut() {
        *v = w();
    }
    for row in p.transition.iter_mut() {
        for v in row.iter_mut() {
            *v = w();
        }
    }
    for v in p.start.iter_mut().chain(p.end.iter_mut()) {
        *v = w();
    }
    p
}

pub fn random_feats(rng: &mut ChaCha8Rng, len: usize, features: usize) -> Vec<Vec<u32>> {
    (0..len)
        .map(|_| {
            let k = rng.random_range(0..=3.min(features));
            (0..k).map(|_| rng.random_range(0..features as u32)).collect()
        })
        .collect()
}

pub fn random_labels(rng: &mut ChaCha8Rng, len: usize) -> Vec<usize> {
    (0..len).map(|_| rng.random_range(0..3)).collect()
}

/// Unnormalized log-score of a labeling, written directly from the model
/// definition (start + emissions + transitions + end).
pub fn brute_score(p: &CrfParams, feats: &[Vec<u32>], y: &[usize]) -> f64 {
    let mut s = p.start[y[0]] + p.end[y[y.len() - 1]];
    for (t, ids) in feats.iter().enumerate() {
        for &f in ids {
            s += p.emission[f as usize * 3 + y[t]];
        }
        if t > 0 {
            s += p.transition[y[t - 1]][y[t]];
        }
    }
    s
}

/// Every labeling of length `n` over {O, B, I}.
pub fn all_labelings(n: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..3).map(move |y| {
                    let mut v = prefix.clone();
                    v.push(y);
                    v
                })
            })
            .collect();
    }
    out
}

/// No `I` (2) at the start or right after `O` (0).
pub fn valid_iob(y: &[usize]) -> bool {
    y.first() != Some(&2) && y.windows(2).all(|w| !(w[0] == 0 && w[1] == 2))
}

pub struct Exhaustive {
    pub log_z: f64,
    pub marginals: Vec<[f64; 3]>,
    pub best_valid_score: f64,
}

pub fn exhaustive(p: &CrfParams, feats: &[Vec<u32>]) -> Exhaustive {
    let n = feats.len();
    let labelings = all_labelings(n);
    let scores: Vec<f64> = labelings.iter().map(|y| brute_score(p, feats, y)).collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    let log_z = max + z.ln();
    let mut marginals = vec![[0.0; 3]; n];
    for (y, s) in labelings.iter().zip(&scores) {
        let prob = (s - log_z).exp();
        for (t, &label) in y.iter().enumerate() {
            marginals[t][label] += prob;
        }
    }
    let best_valid_score = labelings
        .iter()
        .zip(&scores)
        .filter(|(y, _)| valid_iob(y))
        .map(|(_, s)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    Exhaustive {
        log_z,
        marginals,
        best_valid_score,
    }
}

/// `||a - n|| / max(||a||, ||n||)` of the analytic gradient against central
/// differences of the objective with step `h`.
pub fn gradient_relative_error(
    p: &CrfParams,
    data: &[(Vec<Vec<u32>>, Vec<usize>)],
    l2: f64,
    h: f64,
) -> f64 {
    let (_, analytic) = p.objective(data, l2);
    let flat = p.to_flat();
    let mut numeric = vec![0.0; flat.len()];
    for k in 0..flat.len() {
        let mut plus = flat.clone();
        plus[k] += h;
        let mut minus = flat.clone();
        minus[k] -= h;
        let lp = CrfParams::from_flat(p.num_features, &plus).objective(data, l2).0;
        let lm = CrfParams::from_flat(p.num_features, &minus).objective(data, l2).0;
        numeric[k] = (lp - lm) / (2.0 * h);
    }
    let diff: f64 = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let denom = na.max(nn);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

const WORDS: &[&str] = &[
    "ribavirin", "was", "given", "to", "patients", "at", "300", "mg", "once", "daily", ",", "and",
    "the", "dose", "of", "fusidic", "acid", "in", "vitro", "(", ")", "2.5", "%", "N-acetyl", "café",
    "naïve", "β-lactam", "über", "Remdesivir", "x", "mg/kg", ";", "IL-6", "’s", "déjà", "vu",
];

/// A random paragraph of 1 to 30 words with random valid spans.
pub fn random_labeled(rng: &mut ChaCha8Rng, ordinal: usize) -> LabeledParagraph {
    let len = rng.random_range(1..=30);
    let mut text = String::new();
    for i in 0..len {
        if i > 0 {
            let sep = [" ", " ", " ", "  ", "\t", "\n"][rng.random_range(0..6)];
            text.push_str(sep);
        }
        text.push_str(WORDS[rng.random_range(0..WORDS.len())]);
    }
    let tokens = tokenize(&text);
    let mut spans = Vec::new();
    let mut t = 0;
    while t < tokens.len() {
        if rng.random_bool(0.25) {
            let end = (t + rng.random_range(0..3)).min(tokens.len() - 1);
            spans.push(Span::from_tokens(&tokens, t, end));
            t = end + 1 + usize::from(rng.random_bool(0.5));
        } else {
            t += 1;
        }
    }
    let provenance = [Provenance::Gold, Provenance::SilverLexicon, Provenance::SilverModel]
        [rng.random_range(0..3)];
    let doc = format!("doc-{}", rng.random_range(0..50));
    LabeledParagraph::from_parts(Paragraph::new(doc, ordinal, text), tokens, spans, provenance)
        .expect("generated spans are valid")
}
