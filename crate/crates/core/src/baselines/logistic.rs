use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::features::SparseFeatureVector;
use crate::error::{Error, Result};
use crate::model::ModelRng;

/// L2-regularized logistic regression fit by per-example SGD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticConfig {
    /// Weight on `λ/2 · ‖w‖²`; the bias is not penalized.
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            lambda: 1e-4,
            learning_rate: 0.05,
            epochs: 20,
            seed: 0,
        }
    }
}

impl LogisticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::validation("lambda must be finite and non-negative"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::validation("epochs must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearBaselineModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearBaselineModel {
    pub fn logit(&self, x: &SparseFeatureVector) -> Result<f64> {
        if x.dim() != self.weights.len() {
            return Err(Error::validation(format!(
                "feature dimension {} does not match model dimension {}",
                x.dim(),
                self.weights.len()
            )));
        }
        Ok(x.dot(&self.weights) + self.bias)
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Step size decays as `lr / (1 + epoch)`. The penalty is applied as the proximal
/// shrink `w / (1 + η λ)` after each gradient step, which stays stable for huge λ.
pub fn baseline_train(
    features: &[SparseFeatureVector],
    labels: &[bool],
    config: &LogisticConfig,
) -> Result<LinearBaselineModel> {
    config.validate()?;
    if features.is_empty() {
        return Err(Error::validation("baseline training set is empty"));
    }
    if features.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} feature rows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    let dim = features[0].dim();
    if let Some(x) = features.iter().find(|x| x.dim() != dim) {
        return Err(Error::validation(format!(
            "feature dimension {} does not match {dim}",
            x.dim()
        )));
    }

    let mut model = LinearBaselineModel {
        weights: vec![0.0; dim],
        bias: 0.0,
    };
    let mut rng = ModelRng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..features.len()).collect();
    for epoch in 0..config.epochs {
        let eta = config.learning_rate / (1.0 + epoch as f64);
        let shrink = 1.0 / (1.0 + eta * config.lambda);
        order.shuffle(&mut rng);
        for &i in &order {
            let x = &features[i];
            let y = if labels[i] { 1.0 } else { 0.0 };
            let g = sigmoid(x.dot(&model.weights) + model.bias) - y;
            for &(id, v) in x.entries() {
                model.weights[id as usize] -= eta * g * v;
            }
            model.bias -= eta * g;
            if config.lambda > 0.0 {
                model.weights.iter_mut().for_each(|w| *w *= shrink);
            }
        }
    }
    Ok(model)
}

/// `true` iff the probability is strictly above one half.
pub fn baseline_predict(model: &LinearBaselineModel, x: &SparseFeatureVector) -> Result<bool> {
    Ok(model.logit(x)? > 0.0)
}
