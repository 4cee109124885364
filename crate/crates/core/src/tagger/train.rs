use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::crf::{CrfParams, NUM_LABELS};
use super::features::{extract_features, FeatureConfig, FeatureTable};
use super::{TaggerError, TaggerModel, TrainingMeta};
use crate::annotations::{spans_to_iob, Iob, LabeledParagraph};
use crate::lexicon::Lexicon;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// L2 penalty `l2/2 |theta|^2` on the full-batch objective.
    pub l2: f64,
    /// AdaGrad base step; each coordinate's step decays as
    /// `learning_rate / sqrt(sum of its squared gradients)`.
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Fraction of the shuffled training set held out for early stopping
    /// when no validation set is given.
    pub validation_split: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 64,
            l2: 1e-3,
            learning_rate: 0.1,
            batch_size: 8,
            seed: 0,
            validation_split: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TaggerError> {
        if self.max_epochs == 0 {
            return Err(TaggerError::Config("max_epochs must be at least 1".into()));
        }
        if !(self.validation_split > 0.0 && self.validation_split < 1.0) {
            return Err(TaggerError::Config("validation_split must be in (0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(TaggerError::Config("batch_size must be at least 1".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(TaggerError::Config("l2 must be a finite non-negative number".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TaggerError::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

type Example = (Vec<Vec<u32>>, Vec<usize>);

/// Trains [`TaggerModel`]s with mini-batch AdaGrad and keeps the epoch with
/// the lowest validation loss.
#[derive(Debug, Clone, Default)]
pub struct Trainer {
    pub config: TrainConfig,
    pub features: FeatureConfig,
    pub lexicon: Option<Lexicon>,
}

impl Trainer {
    pub fn new(config: TrainConfig, features: FeatureConfig) -> Self {
        Self {
            config,
            features,
            lexicon: None,
        }
    }

    pub fn with_lexicon(mut self, lexicon: Option<Lexicon>) -> Self {
        self.lexicon = lexicon;
        self
    }

    fn gold_labels(lp: &LabeledParagraph) -> Result<Vec<usize>, TaggerError> {
        Ok(spans_to_iob(lp)?.into_iter().map(Iob::index).collect())
    }

    /// Trains on `data`. With `validation = None` the last
    /// `validation_split` of the seed-shuffled data is held out (at least
    /// one paragraph when there are two or more).
    pub fn train(
        &self,
        data: &[LabeledParagraph],
        validation: Option<&[LabeledParagraph]>,
    ) -> Result<TaggerModel, TaggerError> {
        self.config.validate()?;
        if data.is_empty() {
            return Err(TaggerError::EmptyData);
        }
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

        let (train_set, valid_set): (Vec<&LabeledParagraph>, Vec<&LabeledParagraph>) =
            match validation {
                Some(v) => (data.iter().collect(), v.iter().collect()),
                None => {
                    let mut shuffled: Vec<&LabeledParagraph> = data.iter().collect();
                    shuffled.shuffle(&mut rng);
                    let held = if shuffled.len() >= 2 {
                        ((shuffled.len() as f64 * cfg.validation_split).floor() as usize).max(1)
                    } else {
                        0
                    };
                    let valid = shuffled.split_off(shuffled.len() - held);
                    (shuffled, valid)
                }
            };

        let mut meta = TrainingMeta {
            seed: cfg.seed,
            train_size: train_set.len(),
            validation_size: valid_set.len(),
            best_validation_loss: f64::INFINITY,
            ..Default::default()
        };
        if train_set.iter().all(|lp| lp.spans.is_empty()) {
            let msg = "every training paragraph is all-O; the model will not find entities";
            log::warn!("{msg}");
            meta.warnings.push(msg.to_string());
        }

        let mut table = FeatureTable::default();
        let mut train_ex: Vec<Example> = Vec::with_capacity(train_set.len());
        for lp in &train_set {
            let strings = extract_features(&lp.tokens, self.lexicon.as_ref(), &self.features);
            train_ex.push((table.intern_all(&strings), Self::gold_labels(lp)?));
        }
        let mut valid_ex: Vec<Example> = Vec::with_capacity(valid_set.len());
        for lp in &valid_set {
            let strings = extract_features(&lp.tokens, self.lexicon.as_ref(), &self.features);
            valid_ex.push((table.lookup_all(&strings), Self::gold_labels(lp)?));
        }

        let mut params = CrfParams::zeros(table.len());
        let mut best = params.clone();
        let dim = params.dim();
        let emission_len = params.emission.len();
        let mut grad = vec![0.0; dim];
        let mut accum = vec![0.0; dim];
        let mut touched = Vec::new();
        let mut mark = vec![false; table.len()];
        let n_train = train_ex.len() as f64;
        let mut order: Vec<usize> = (0..train_ex.len()).collect();

        for epoch in 0..cfg.max_epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size) {
                for &i in batch {
                    let (feats, gold) = &train_ex[i];
                    params.nll_and_grad(feats, gold, &mut grad);
                    for ids in feats {
                        for &f in ids {
                            if !mark[f as usize] {
                                mark[f as usize] = true;
                                touched.push(f);
                            }
                        }
                    }
                }
                let reg = cfg.l2 * batch.len() as f64 / n_train;
                touched.sort_unstable();
                let mut step = |k: usize, params_k: &mut f64, g_k: &mut f64| {
                    let g = *g_k + reg * *params_k;
                    *g_k = 0.0;
                    if g != 0.0 {
                        accum[k] += g * g;
                        *params_k -= cfg.learning_rate * g / accum[k].sqrt();
                    }
                };
                for &f in &touched {
                    mark[f as usize] = false;
                    for y in 0..NUM_LABELS {
                        let k = f as usize * NUM_LABELS + y;
                        step(k, &mut params.emission[k], &mut grad[k]);
                    }
                }
                touched.clear();
                for k in emission_len..dim {
                    let mut flat_val = dense_get(&params, k);
                    step(k, &mut flat_val, &mut grad[k]);
                    dense_set(&mut params, k, flat_val);
                }
            }

            let train_loss = mean_nll(&params, &train_ex);
            let valid_loss = if valid_ex.is_empty() {
                train_loss
            } else {
                mean_nll(&params, &valid_ex)
            };
            meta.train_loss.push(train_loss);
            meta.validation_loss.push(valid_loss);
            meta.epochs_run = epoch + 1;
            if valid_loss < meta.best_validation_loss {
                meta.best_validation_loss = valid_loss;
                meta.best_epoch = epoch + 1;
                best.clone_from(&params);
            }
        }
        if meta.best_epoch == 0 {
            // Every epoch produced a non-finite loss; fall back to the last.
            best = params;
            meta.best_epoch = meta.epochs_run;
        }

        log::debug!(
            "trained on {} paragraphs ({} features), best epoch {} loss {:.4}",
            meta.train_size,
            table.len(),
            meta.best_epoch,
            meta.best_validation_loss
        );
        Ok(TaggerModel {
            feature_config: self.features.clone(),
            features: table,
            params: best,
            lexicon: self.lexicon.clone(),
            training_meta: meta,
        })
    }
}

fn mean_nll(params: &CrfParams, data: &[Example]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    data.iter().map(|(f, g)| params.nll(f, g)).sum::<f64>() / data.len() as f64
}

fn dense_get(p: &CrfParams, k: usize) -> f64 {
    let t = p.transition_offset();
    let s = p.start_offset();
    let e = p.end_offset();
    if k < t {
        p.emission[k]
    } else if k < s {
        let j = k - t;
        p.transition[j / NUM_LABELS][j % NUM_LABELS]
    } else if k < e {
        p.start[k - s]
    } else {
        p.end[k - e]
    }
}

fn dense_set(p: &mut CrfParams, k: usize, v: f64) {
    let t = p.transition_offset();
    let s = p.start_offset();
    let e = p.end_offset();
    if k < t {
        p.emission[k] = v;
    } else if k < s {
        let j = k - t;
        p.transition[j / NUM_LABELS][j % NUM_LABELS] = v;
    } else if k < e {
        p.start[k - s] = v;
    } else {
        p.end[k - e] = v;
    }
}
