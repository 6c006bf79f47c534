use super::network::{backward, forward, loss, Mode};
use super::{Model, ModelInput};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `name[index]` of the worst parameter.
    pub worst_parameter: String,
    pub analytic: f64,
    pub numeric: f64,
    pub parameters_checked: usize,
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares [`backward`] against central differences `(f(θ+ε) - f(θ-ε)) / 2ε` for
/// every trainable scalar.
///
/// The loss is evaluated with batch statistics and dropout off, so the function being
/// differentiated is deterministic and identical to the training objective minus
/// dropout noise. Running statistics are never touched.
pub fn grad_check(
    model: &Model,
    batch: &[ModelInput],
    labels: &[bool],
    eps: f64,
) -> Result<GradCheckReport> {
    let cache = forward(model, batch, Mode::TrainNoDropout)?;
    let grads = backward(&cache, labels, model)?;
    let analytic: Vec<(String, Vec<f64>)> = grads
        .tensors()
        .into_iter()
        .map(|t| (t.name, t.data.to_vec()))
        .collect();

    let mut probe = model.clone();
    let objective = |m: &Model| -> Result<f64> {
        let c = forward(m, batch, Mode::TrainNoDropout)?;
        Ok(loss(c.logits(), labels))
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_parameter: String::new(),
        analytic: 0.0,
        numeric: 0.0,
        parameters_checked: 0,
    };
    for (t, (name, values)) in analytic.iter().enumerate() {
        for (i, &a) in values.iter().enumerate() {
            let original = probe.parameters_mut()[t][i];
            probe.parameters_mut()[t][i] = original + eps;
            let plus = objective(&probe)?;
            probe.parameters_mut()[t][i] = original - eps;
            let minus = objective(&probe)?;
            probe.parameters_mut()[t][i] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(a, numeric);
            report.parameters_checked += 1;
            if err > report.max_relative_error || report.worst_parameter.is_empty() {
                report.max_relative_error = err;
                report.worst_parameter = format!("{name}[{i}]");
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sector;
    use crate::model::{ModelConfig, ModelRng, SentenceMatrix};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    fn small(seed: u64) -> (Model, Vec<ModelInput>, Vec<bool>) {
        let config = ModelConfig {
            sentence_dim: 8,
            industry_dim: 3,
            hidden: vec![6, 5],
            dropout: 0.5,
            ..ModelConfig::default()
        };
        let model = Model::init(config, seed).unwrap();
        let mut rng = ModelRng::seed_from_u64(seed ^ 0xabcdef);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let batch = (0..4)
            .map(|_| ModelInput {
                sentences: SentenceMatrix::from_rows(Array2::from_shape_simple_fn((5, 8), || {
                    normal.sample(&mut rng)
                }))
                .unwrap(),
                sector: Sector::new(rng.random_range(0..11)).unwrap(),
            })
            .collect();
        let labels = (0..4).map(|_| rng.random::<bool>()).collect();
        (model, batch, labels)
    }

    #[test]
    fn random_small_model_agrees() {
        let (model, batch, labels) = small(3);
        let report = grad_check(&model, &batch, &labels, 1e-5).unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
        assert_eq!(report.parameters_checked, model.parameter_count());
    }

    #[test]
    fn all_zero_parameters() {
        let (mut model, batch, labels) = small(4);
        for p in model.parameters_mut() {
            p.fill(0.0);
        }
        let report = grad_check(&model, &batch, &labels, 1e-5).unwrap();
        assert!(report.max_relative_error.is_finite());
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn coarse_step_is_worse() {
        let (model, batch, labels) = small(5);
        let fine = grad_check(&model, &batch, &labels, 1e-5).unwrap();
        let coarse = grad_check(&model, &batch, &labels, 1e-2).unwrap();
        assert!(
            coarse.max_relative_error > fine.max_relative_error,
            "{coarse:?} {fine:?}"
        );
    }

    #[test]
    fn bias_direction_is_null_when_sentences_repeat() {
        let (model, mut batch, labels) = small(6);
        for item in &mut batch {
            let row = item.sentences.vectors().row(0).to_owned();
            let rep = Array2::from_shape_fn((5, 8), |(_, j)| row[j]);
            item.sentences = SentenceMatrix::from_rows(rep).unwrap();
        }
        let cache = forward(&model, &batch, Mode::TrainNoDropout).unwrap();
        let grads = backward(&cache, &labels, &model).unwrap();
        assert!(grads.b.abs() < 1e-15, "{}", grads.b);
        assert!(grads.u.iter().all(|g| g.abs() < 1e-15));
        let report = grad_check(&model, &batch, &labels, 1e-5).unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }
}
