//! Linear-chain CRF over the three IOB labels.
//!
//! Label indices follow [`Iob::index`]: O = 0, B = 1, I = 2. A labeling
//! `y` of a sequence with per-token feature ids `x` scores
//!
//! ```text
//! start[y0] + sum_t sum_{f in x_t} emission[f][y_t]
//!           + sum_{t>0} transition[y_{t-1}][y_t] + end[y_{n-1}]
//! ```
//!
//! and the model distribution is `exp(score) / Z` over all `3^n` labelings.
//! Invalid IOB sequences are not excluded from `Z`; they are discouraged by
//! learned transitions and hard-masked only at decode time.

use serde::{Deserialize, Serialize};

use crate::annotations::Iob;

pub const NUM_LABELS: usize = 3;
const O: usize = 0;
const I: usize = 2;

pub type Scores = [f64; NUM_LABELS];

/// Per-token feature ids.
pub type FeatureSeq = [Vec<u32>];

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfParams {
    pub num_features: usize,
    /// `emission[f * NUM_LABELS + y]`.
    pub emission: Vec<f64>,
    /// `transition[prev][next]`.
    pub transition: [[f64; NUM_LABELS]; NUM_LABELS],
    pub start: Scores,
    pub end: Scores,
}

impl CrfParams {
    pub fn zeros(num_features: usize) -> Self {
        Self {
            num_features,
            emission: vec![0.0; num_features * NUM_LABELS],
            transition: [[0.0; NUM_LABELS]; NUM_LABELS],
            start: [0.0; NUM_LABELS],
            end: [0.0; NUM_LABELS],
        }
    }

    /// Length of the flat parameter vector: emissions, then the 9
    /// transitions row-major, then start, then end.
    pub fn dim(&self) -> usize {
        self.emission.len() + NUM_LABELS * NUM_LABELS + 2 * NUM_LABELS
    }

    pub fn transition_offset(&self) -> usize {
        self.emission.len()
    }

    pub fn start_offset(&self) -> usize {
        self.emission.len() + NUM_LABELS * NUM_LABELS
    }

    pub fn end_offset(&self) -> usize {
        self.start_offset() + NUM_LABELS
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.emission.clone();
        v.extend(self.transition.iter().flatten());
        v.extend(self.start);
        v.extend(self.end);
        v
    }

    pub fn from_flat(num_features: usize, flat: &[f64]) -> Self {
        let mut p = Self::zeros(num_features);
        assert_eq!(flat.len(), p.dim(), "flat parameter length");
        let e = p.emission.len();
        p.emission.copy_from_slice(&flat[..e]);
        for a in 0..NUM_LABELS {
            for b in 0..NUM_LABELS {
                p.transition[a][b] = flat[e + a * NUM_LABELS + b];
            }
        }
        let s = p.start_offset();
        p.start.copy_from_slice(&flat[s..s + NUM_LABELS]);
        p.end.copy_from_slice(&flat[s + NUM_LABELS..s + 2 * NUM_LABELS]);
        p
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    pub fn squared_norm(&self) -> f64 {
        self.to_flat().iter().map(|v| v * v).sum()
    }

    pub fn emissions(&self, feats: &FeatureSeq) -> Vec<Scores> {
        feats
            .iter()
            .map(|ids| {
                let mut s = [0.0; NUM_LABELS];
                for &f in ids {
                    let base = f as usize * NUM_LABELS;
                    for (y, slot) in s.iter_mut().enumerate() {
                        *slot += self.emission[base + y];
                    }
                }
                s
            })
            .collect()
    }

    pub fn sequence_score(&self, feats: &FeatureSeq, labels: &[usize]) -> f64 {
        if labels.is_empty() {
            return 0.0;
        }
        let emis = self.emissions(feats);
        let mut score = self.start[labels[0]] + self.end[labels[labels.len() - 1]];
        for (t, &y) in labels.iter().enumerate() {
            score += emis[t][y];
            if t > 0 {
                score += self.transition[labels[t - 1]][y];
            }
        }
        score
    }

    /// Log-space forward variables: `alpha[t][y]` sums over prefixes ending
    /// in `y` at `t` (end weights excluded).
    fn forward(&self, emis: &[Scores]) -> Vec<Scores> {
        let mut alpha = Vec::with_capacity(emis.len());
        for (t, e) in emis.iter().enumerate() {
            let mut a = [0.0; NUM_LABELS];
            for y in 0..NUM_LABELS {
                a[y] = if t == 0 {
                    self.start[y] + e[y]
                } else {
                    let prev: &Scores = &alpha[t - 1];
                    let terms: Scores =
                        std::array::from_fn(|p| prev[p] + self.transition[p][y]);
                    log_sum_exp(&terms) + e[y]
                };
            }
            alpha.push(a);
        }
        alpha
    }

    /// `beta[t][y]` sums over suffixes after `t` given `y` at `t`, end
    /// weights included.
    fn backward(&self, emis: &[Scores]) -> Vec<Scores> {
        let n = emis.len();
        let mut beta = vec![[0.0; NUM_LABELS]; n];
        if n == 0 {
            return beta;
        }
        beta[n - 1] = self.end;
        for t in (0..n - 1).rev() {
            for y in 0..NUM_LABELS {
                let terms: Scores = std::array::from_fn(|nx| {
                    self.transition[y][nx] + emis[t + 1][nx] + beta[t + 1][nx]
                });
                beta[t][y] = log_sum_exp(&terms);
            }
        }
        beta
    }

    fn log_z(&self, alpha: &[Scores]) -> f64 {
        match alpha.last() {
            None => 0.0,
            Some(last) => {
                let terms: Scores = std::array::from_fn(|y| last[y] + self.end[y]);
                log_sum_exp(&terms)
            }
        }
    }

    pub fn log_partition(&self, feats: &FeatureSeq) -> f64 {
        let emis = self.emissions(feats);
        self.log_z(&self.forward(&emis))
    }

    /// Per-token label marginals `P(y_t = y)`.
    pub fn marginals(&self, feats: &FeatureSeq) -> Vec<Scores> {
        let emis = self.emissions(feats);
        let alpha = self.forward(&emis);
        let beta = self.backward(&emis);
        let log_z = self.log_z(&alpha);
        alpha
            .iter()
            .zip(&beta)
            .map(|(a, b)| std::array::from_fn(|y| (a[y] + b[y] - log_z).exp()))
            .collect()
    }

    /// Highest-scoring labeling among valid IOB sequences (no `I` first or
    /// after `O`). Ties go to the lower label index.
    pub fn viterbi(&self, feats: &FeatureSeq) -> Vec<usize> {
        let emis = self.emissions(feats);
        let n = emis.len();
        if n == 0 {
            return Vec::new();
        }
        let allowed = |prev: Option<usize>, next: usize| {
            Iob::transition_allowed(prev.map(Iob::from_index), Iob::from_index(next))
        };
        let mut delta = vec![[f64::NEG_INFINITY; NUM_LABELS]; n];
        let mut back = vec![[0usize; NUM_LABELS]; n];
        for y in 0..NUM_LABELS {
            if allowed(None, y) {
                delta[0][y] = self.start[y] + emis[0][y];
            }
        }
        for t in 1..n {
            for y in 0..NUM_LABELS {
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0;
                for p in 0..NUM_LABELS {
                    if !allowed(Some(p), y) || delta[t - 1][p] == f64::NEG_INFINITY {
                        continue;
                    }
                    let s = delta[t - 1][p] + self.transition[p][y];
                    if s > best {
                        best = s;
                        arg = p;
                    }
                }
                delta[t][y] = best + emis[t][y];
                back[t][y] = arg;
            }
        }
        let mut best = f64::NEG_INFINITY;
        let mut last = O;
        for y in 0..NUM_LABELS {
            let s = delta[n - 1][y] + self.end[y];
            if s > best {
                best = s;
                last = y;
            }
        }
        let mut path = vec![last; n];
        for t in (1..n).rev() {
            path[t - 1] = back[t][path[t]];
        }
        debug_assert!(path[0] != I);
        path
    }

    /// Negative log-likelihood of `gold`; adds its gradient into `grad`
    /// (flat layout, see [`CrfParams::dim`]).
    pub fn nll_and_grad(&self, feats: &FeatureSeq, gold: &[usize], grad: &mut [f64]) -> f64 {
        let n = gold.len();
        debug_assert_eq!(feats.len(), n);
        if n == 0 {
            return 0.0;
        }
        let emis = self.emissions(feats);
        let alpha = self.forward(&emis);
        let beta = self.backward(&emis);
        let log_z = self.log_z(&alpha);

        let t_off = self.transition_offset();
        let s_off = self.start_offset();
        let e_off = self.end_offset();
        let mut gold_score = 0.0;

        for t in 0..n {
            let marg: Scores = std::array::from_fn(|y| (alpha[t][y] + beta[t][y] - log_z).exp());
            for &f in &feats[t] {
                let base = f as usize * NUM_LABELS;
                for y in 0..NUM_LABELS {
                    grad[base + y] += marg[y];
                }
                grad[base + gold[t]] -= 1.0;
            }
            gold_score += emis[t][gold[t]];
            if t == 0 {
                for y in 0..NUM_LABELS {
                    grad[s_off + y] += marg[y];
                }
                grad[s_off + gold[0]] -= 1.0;
                gold_score += self.start[gold[0]];
            } else {
                for p in 0..NUM_LABELS {
                    for y in 0..NUM_LABELS {
                        let pair = (alpha[t - 1][p]
                            + self.transition[p][y]
                            + emis[t][y]
                            + beta[t][y]
                            - log_z)
                            .exp();
                        grad[t_off + p * NUM_LABELS + y] += pair;
                    }
                }
                grad[t_off + gold[t - 1] * NUM_LABELS + gold[t]] -= 1.0;
                gold_score += self.transition[gold[t - 1]][gold[t]];
            }
            if t == n - 1 {
                for y in 0..NUM_LABELS {
                    grad[e_off + y] += marg[y];
                }
                grad[e_off + gold[t]] -= 1.0;
                gold_score += self.end[gold[t]];
            }
        }
        log_z - gold_score
    }

    pub fn nll(&self, feats: &FeatureSeq, gold: &[usize]) -> f64 {
        self.log_partition(feats) - self.sequence_score(feats, gold)
    }

    /// Full-batch objective `sum NLL + l2/2 |theta|^2` and its gradient.
    pub fn objective(&self, data: &[(Vec<Vec<u32>>, Vec<usize>)], l2: f64) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.dim()];
        let mut loss = 0.0;
        for (feats, gold) in data {
            loss += self.nll_and_grad(feats, gold, &mut grad);
        }
        let flat = self.to_flat();
        loss += 0.5 * l2 * flat.iter().map(|v| v * v).sum::<f64>();
        for (g, w) in grad.iter_mut().zip(&flat) {
            *g += l2 * w;
        }
        (loss, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_is_uniform() {
        let p = CrfParams::zeros(2);
        let feats = vec![vec![0], vec![1], vec![0, 1]];
        let marg = p.marginals(&feats);
        for m in marg {
            for v in m {
                assert!((v - 1.0 / 3.0).abs() < 1e-12);
            }
        }
        assert!((p.log_partition(&feats) - 27f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_sequence() {
        let p = CrfParams::zeros(1);
        assert!(p.viterbi(&[]).is_empty());
        assert!(p.marginals(&[]).is_empty());
        assert_eq!(p.log_partition(&[]), 0.0);
    }

    #[test]
    fn viterbi_masks_inside_after_outside() {
        let mut p = CrfParams::zeros(1);
        // Feature 0 strongly prefers I everywhere.
        p.emission[I] = 10.0;
        let path = p.viterbi(&[vec![0], vec![0], vec![0]]);
        assert_eq!(path, vec![1, 2, 2]);
    }

    #[test]
    fn flat_round_trip() {
        let mut p = CrfParams::zeros(2);
        p.emission[4] = 1.5;
        p.transition[2][1] = -0.5;
        p.start[2] = 0.25;
        p.end[0] = 3.0;
        assert_eq!(CrfParams::from_flat(2, &p.to_flat()), p);
    }
}
