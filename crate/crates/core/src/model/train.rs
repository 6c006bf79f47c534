use std::collections::BTreeMap;

use chrono::NaiveDate;
use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::network::{backward, forward, loss, Gradients, Mode};
use super::{Model, ModelConfig, ModelInput, ModelRng};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Share of each company's newest training examples held out for model selection.
    pub validation_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            batch_size: 32,
            epochs: 30,
            learning_rate: 1e-3,
            validation_fraction: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::validation("batch_size must be at least 2"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation(
                "learning_rate must be finite and non-negative",
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::validation("validation_fraction must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::validation("Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub input: ModelInput,
    pub label: bool,
    pub company_id: String,
    pub call_date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub validation_loss: Option<f64>,
    pub validation_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub fit_examples: usize,
    pub validation_examples: usize,
}

/// Per company, the newest `ceil(fraction * n)` examples (never all of them) go to
/// validation. Returns `(fit, validation)` index lists.
fn validation_split(data: &[TrainingExample], fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let mut by_company: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, ex) in data.iter().enumerate() {
        by_company.entry(&ex.company_id).or_default().push(i);
    }
    let mut fit = Vec::new();
    let mut val = Vec::new();
    for idx in by_company.values_mut() {
        idx.sort_by_key(|&i| (data[i].call_date, i));
        let n = idx.len();
        let n_val = ((fraction * n as f64).ceil() as usize).min(n - 1);
        fit.extend_from_slice(&idx[..n - n_val]);
        val.extend_from_slice(&idx[n - n_val..]);
    }
    fit.sort_unstable();
    val.sort_unstable();
    (fit, val)
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(model: &Model) -> Self {
        let zeros: Vec<Vec<f64>> = model
            .parameters()
            .iter()
            .map(|t| vec![0.0; t.data.len()])
            .collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, model: &mut Model, grads: &Gradients, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let grads = grads.tensors();
        for (((param, g), m), v) in model
            .parameters_mut()
            .into_iter()
            .zip(&grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..param.len() {
                let gi = g.data[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                param[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
            }
        }
    }
}

/// Eval-mode mean loss and accuracy over `idx`.
fn score(model: &Model, data: &[TrainingExample], idx: &[usize]) -> Result<(f64, f64)> {
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    for chunk in idx.chunks(256) {
        let inputs: Vec<&ModelInput> = chunk.iter().map(|&i| &data[i].input).collect();
        let labels: Vec<bool> = chunk.iter().map(|&i| data[i].label).collect();
        let cache = forward(model, &inputs, Mode::Eval)?;
        total_loss += loss(cache.logits(), &labels) * chunk.len() as f64;
        correct += cache
            .logits()
            .iter()
            .zip(&labels)
            .filter(|(&z, &y)| (z > 0.0) == y)
            .count();
    }
    let n = idx.len() as f64;
    Ok((total_loss / n, correct as f64 / n))
}

/// Mini-batch Adam on binary cross-entropy, keeping the parameters of the epoch
/// with the best validation accuracy (lower validation loss breaks ties).
///
/// Everything random flows from `train.seed`, so equal inputs give bitwise-equal
/// models. Without validation examples the last epoch is kept.
pub fn train(
    data: &[TrainingExample],
    model_config: ModelConfig,
    train: &TrainConfig,
) -> Result<(Model, TrainingLog)> {
    train.validate()?;
    if data.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    let sentence_dim = data[0].input.sentences.dim();
    if data
        .iter()
        .any(|ex| ex.input.sentences.dim() != sentence_dim)
    {
        return Err(Error::validation("inconsistent sentence vector dimensions"));
    }
    let model_config = ModelConfig {
        sentence_dim,
        ..model_config
    };
    model_config.validate()?;

    let (mut fit, val) = validation_split(data, train.validation_fraction);
    if fit.len() < train.batch_size {
        return Err(Error::validation(format!(
            "{} fitting examples is fewer than batch size {}",
            fit.len(),
            train.batch_size
        )));
    }

    let mut rng = ModelRng::seed_from_u64(train.seed);
    let mut model = Model::init_with(model_config, train.seed, &mut rng);
    let mut adam = Adam::new(&model);
    let mut best: Option<(f64, f64, usize, Model)> = None;
    let mut epochs = Vec::with_capacity(train.epochs);

    for epoch in 1..=train.epochs {
        fit.shuffle(&mut rng);
        for chunk in fit.chunks(train.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let inputs: Vec<&ModelInput> = chunk.iter().map(|&i| &data[i].input).collect();
            let labels: Vec<bool> = chunk.iter().map(|&i| data[i].label).collect();
            let cache = forward(&model, &inputs, Mode::Train(&mut rng))?;
            let grads = backward(&cache, &labels, &model)?;
            adam.step(&mut model, &grads, train);
            model.update_running_stats(&cache)?;
        }
        if !model.is_finite() {
            return Err(Error::Invariant(format!(
                "non-finite parameters after epoch {epoch}"
            )));
        }

        let (train_loss, train_accuracy) = score(&model, data, &fit)?;
        let validation = if val.is_empty() {
            None
        } else {
            Some(score(&model, data, &val)?)
        };
        debug!(
            "epoch {epoch}: train loss {train_loss:.4} acc {train_accuracy:.4} val {validation:?}"
        );
        epochs.push(EpochLog {
            epoch,
            train_loss,
            train_accuracy,
            validation_loss: validation.map(|v| v.0),
            validation_accuracy: validation.map(|v| v.1),
        });

        let (sel_loss, sel_acc) = validation.unwrap_or((0.0, f64::NEG_INFINITY));
        let better = match &best {
            None => true,
            Some(_) if validation.is_none() => true,
            Some((acc, l, _, _)) => sel_acc > *acc || (sel_acc == *acc && sel_loss < *l),
        };
        if better {
            best = Some((sel_acc, sel_loss, epoch, model.clone()));
        }
    }

    let (best_epoch, model) = match best {
        Some((_, _, e, m)) => (e, m),
        None => (0, model),
    };
    Ok((
        model,
        TrainingLog {
            epochs,
            best_epoch,
            fit_examples: fit.len(),
            validation_examples: val.len(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sector;
    use crate::model::{predict, SentenceMatrix};
    use ndarray::Array2;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    /// Labels planted in the sign of the first coordinate of one sentence.
    fn planted(n: usize, seed: u64) -> Vec<TrainingExample> {
        let mut rng = ModelRng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        (0..n)
            .map(|i| {
                let label = i % 2 == 0;
                let mut v = Array2::from_shape_simple_fn((4, 4), || noise.sample(&mut rng));
                let row = rng.random_range(0..4);
                v[[row, 0]] = if label { 2.0 } else { -2.0 };
                v[[row, 2]] = v[[row, 0]];
                TrainingExample {
                    input: ModelInput {
                        sentences: SentenceMatrix::from_rows(v).unwrap(),
                        sector: Sector::new((i % 3) as i64).unwrap(),
                    },
                    label,
                    company_id: format!("c{}", i % 4),
                    call_date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap()
                        + chrono::Days::new(i as u64),
                }
            })
            .collect()
    }

    fn small_config() -> ModelConfig {
        ModelConfig {
            industry_dim: 2,
            hidden: vec![8],
            dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn separable_set_is_fit() {
        let data = planted(20, 1);
        let cfg = TrainConfig {
            seed: 3,
            batch_size: 4,
            epochs: 200,
            learning_rate: 0.02,
            validation_fraction: 0.0,
            ..TrainConfig::default()
        };
        let (model, log) = train(&data, small_config(), &cfg).unwrap();
        let correct = data
            .iter()
            .filter(|ex| predict(&model, &ex.input).unwrap().1 == ex.label)
            .count();
        assert_eq!(correct, 20, "{:?}", log.epochs.last());
    }

    #[test]
    fn identical_seeds_identical_models() {
        let data = planted(24, 2);
        let cfg = TrainConfig {
            seed: 7,
            batch_size: 4,
            epochs: 5,
            ..TrainConfig::default()
        };
        let a = train(&data, small_config(), &cfg).unwrap();
        let b = train(&data, small_config(), &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let data = planted(16, 3);
        let cfg = TrainConfig {
            seed: 5,
            batch_size: 4,
            epochs: 4,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let (trained, _) = train(&data, small_config(), &cfg).unwrap();
        let fresh = Model::init(
            ModelConfig {
                sentence_dim: 4,
                ..small_config()
            },
            5,
        )
        .unwrap();
        let a: Vec<Vec<f64>> = trained
            .parameters()
            .iter()
            .map(|t| t.data.to_vec())
            .collect();
        let b: Vec<Vec<f64>> = fresh.parameters().iter().map(|t| t.data.to_vec()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn dataset_smaller_than_batch() {
        let data = planted(6, 4);
        let cfg = TrainConfig {
            batch_size: 8,
            ..TrainConfig::default()
        };
        assert!(train(&data, small_config(), &cfg).is_err());
    }

    #[test]
    fn validation_takes_newest_per_company() {
        let data = planted(40, 5);
        let (fit, val) = validation_split(&data, 0.1);
        assert_eq!(fit.len() + val.len(), 40);
        // 10 examples per company -> 1 validation example each, the newest.
        assert_eq!(val.len(), 4);
        for &v in &val {
            let c = &data[v].company_id;
            assert!(fit
                .iter()
                .filter(|&&f| &data[f].company_id == c)
                .all(|&f| data[f].call_date < data[v].call_date));
        }
        let (_, none) = validation_split(&data[..4], 0.1);
        assert!(
            none.is_empty(),
            "single-example companies keep their example"
        );
    }
}
