use std::borrow::Borrow;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::attention::{aggregate, attention_weights};
use super::{Model, ModelInput, ModelRng, SentenceMatrix, TensorRef};
use crate::corpus::Sector;
use crate::error::{Error, Result};

pub enum Mode<'r> {
    /// Batch statistics and fresh dropout masks.
    Train(&'r mut ModelRng),
    /// Batch statistics with dropout switched off.
    TrainNoDropout,
    /// Running statistics, no dropout.
    Eval,
}

impl Mode<'_> {
    fn uses_batch_stats(&self) -> bool {
        !matches!(self, Mode::Eval)
    }
}

#[derive(Debug, Clone)]
struct AttentionCache<'a> {
    sentences: &'a SentenceMatrix,
    alpha: Array1<f64>,
    sector: Sector,
}

#[derive(Debug, Clone)]
struct BlockCache {
    xhat: Array2<f64>,
    mean: Array1<f64>,
    var: Array1<f64>,
    inv_std: Array1<f64>,
    pre_relu: Array2<f64>,
    dropout_scale: Option<Array2<f64>>,
    activated: Array2<f64>,
}

/// Intermediate values of one forward pass, enough to run [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<'a> {
    batch_stats: bool,
    examples: Vec<AttentionCache<'a>>,
    blocks: Vec<BlockCache>,
    widths: Vec<usize>,
    logits: Array1<f64>,
}

impl ForwardCache<'_> {
    pub fn logits(&self) -> &Array1<f64> {
        &self.logits
    }

    pub fn batch_size(&self) -> usize {
        self.logits.len()
    }

    /// Attention weights of example `i`, with zeros on padded rows.
    pub fn attention(&self, i: usize) -> &Array1<f64> {
        &self.examples[i].alpha
    }

    /// Batch mean and biased variance at the input of each block.
    pub fn batch_statistics(&self) -> Vec<(&Array1<f64>, &Array1<f64>)> {
        self.blocks.iter().map(|b| (&b.mean, &b.var)).collect()
    }

    pub fn dropout_scale(&self, block: usize) -> Option<&Array2<f64>> {
        self.blocks[block].dropout_scale.as_ref()
    }
}

/// Runs a batch through attention, industry lookup and the network.
pub fn forward<'a, B: Borrow<ModelInput>>(
    model: &Model,
    batch: &'a [B],
    mut mode: Mode<'_>,
) -> Result<ForwardCache<'a>> {
    if batch.is_empty() {
        return Err(Error::validation("empty batch"));
    }
    let batch_stats = mode.uses_batch_stats();
    if batch_stats && batch.len() < 2 {
        return Err(Error::validation(
            "batch normalization needs at least 2 examples per training batch",
        ));
    }

    let k = model.industry.dim();
    let d2 = model.config.sentence_dim;
    let mut inputs = Array2::zeros((batch.len(), d2 + k));
    let mut examples = Vec::with_capacity(batch.len());
    for (b, item) in batch.iter().enumerate() {
        let item: &'a ModelInput = item.borrow();
        let v = item.sentences.vectors();
        if v.ncols() != d2 {
            return Err(Error::validation(format!(
                "sentence vectors have dim {}, model expects {d2}",
                v.ncols()
            )));
        }
        let alpha = attention_weights(v.view(), item.sentences.mask(), &model.attention)?;
        let e = aggregate(v.view(), alpha.view());
        let mut row = inputs.row_mut(b);
        row.slice_mut(ndarray::s![..d2]).assign(&e);
        row.slice_mut(ndarray::s![d2..])
            .assign(&model.industry.table.row(item.sector.index()));
        examples.push(AttentionCache {
            sentences: &item.sentences,
            alpha,
            sector: item.sector,
        });
    }

    let net = &model.net;
    let n = batch.len() as f64;
    // Each block sees `pre + bias`; the previous linear bias is kept apart so batch
    // centering cancels it exactly.
    let mut pre = inputs;
    let mut bias: Option<&Array1<f64>> = None;
    let mut blocks = Vec::with_capacity(net.blocks.len());
    for block in &net.blocks {
        let norm = &block.norm;
        let (mean, var, centered) = if batch_stats {
            let pre_mean = pre.mean_axis(Axis(0)).expect("non-empty batch");
            let centered = &pre - &pre_mean;
            let var = (&centered * &centered).sum_axis(Axis(0)) / n;
            let mean = match bias {
                Some(b) => pre_mean + b,
                None => pre_mean,
            };
            (mean, var, centered)
        } else {
            let mut h = pre;
            if let Some(b) = bias {
                h += b;
            }
            let centered = h - &norm.running_mean;
            (
                norm.running_mean.clone(),
                norm.running_var.clone(),
                centered,
            )
        };
        let inv_std = var.mapv(|v| 1.0 / (v + net.eps).sqrt());
        let xhat = centered * &inv_std;
        let pre_relu = &xhat * &norm.gamma + &norm.beta;
        let mut activated = pre_relu.mapv(|y| y.max(0.0));

        let dropout_scale = match &mut mode {
            Mode::Train(rng) if net.dropout > 0.0 => {
                let keep = 1.0 - net.dropout;
                let scale = Array2::from_shape_simple_fn(activated.raw_dim(), || {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                activated *= &scale;
                Some(scale)
            }
            _ => None,
        };

        pre = activated.dot(&block.linear.weight.t());
        bias = Some(&block.linear.bias);
        blocks.push(BlockCache {
            xhat,
            mean,
            var,
            inv_std,
            pre_relu,
            dropout_scale,
            activated,
        });
    }
    if let Some(b) = bias {
        pre += b;
    }

    Ok(ForwardCache {
        batch_stats,
        examples,
        blocks,
        widths: model.config.widths(),
        logits: pre.column(0).to_owned(),
    })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy in the stable logit form
/// `max(z, 0) - z·y + ln(1 + e^{-|z|})`.
pub fn loss(logits: &Array1<f64>, labels: &[bool]) -> f64 {
    assert_eq!(logits.len(), labels.len(), "one label per logit");
    // Compensated sum, so reordering equal terms cannot change the result.
    let mut sum = 0.0;
    let mut carry = 0.0;
    for (&z, &y) in logits.iter().zip(labels) {
        let y = if y { 1.0 } else { 0.0 };
        let term = z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        let t = sum + term;
        carry += if sum.abs() >= term.abs() {
            (sum - t) + term
        } else {
            (term - t) + sum
        };
        sum = t;
    }
    (sum + carry) / logits.len() as f64
}

/// Gradients of the loss for every trainable tensor of a [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub u: Array1<f64>,
    pub b: f64,
    /// `None` when the industry table is frozen.
    pub industry: Option<Array2<f64>>,
    pub blocks: Vec<BlockGradients>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGradients {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Gradients {
    /// Tensors in the order of [`Model::parameters`].
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let contiguous = "gradient arrays are contiguous";
        let mut out = vec![
            TensorRef {
                name: "attention.u".into(),
                shape: vec![self.u.len()],
                data: self.u.as_slice().expect(contiguous),
            },
            TensorRef {
                name: "attention.b".into(),
                shape: vec![],
                data: std::slice::from_ref(&self.b),
            },
        ];
        if let Some(ind) = &self.industry {
            out.push(TensorRef {
                name: "industry.table".into(),
                shape: ind.shape().to_vec(),
                data: ind.as_slice().expect(contiguous),
            });
        }
        for (j, g) in self.blocks.iter().enumerate() {
            out.push(TensorRef {
                name: format!("net.{j}.norm.gamma"),
                shape: vec![g.gamma.len()],
                data: g.gamma.as_slice().expect(contiguous),
            });
            out.push(TensorRef {
                name: format!("net.{j}.norm.beta"),
                shape: vec![g.beta.len()],
                data: g.beta.as_slice().expect(contiguous),
            });
            out.push(TensorRef {
                name: format!("net.{j}.linear.weight"),
                shape: g.weight.shape().to_vec(),
                data: g.weight.as_slice().expect(contiguous),
            });
            out.push(TensorRef {
                name: format!("net.{j}.linear.bias"),
                shape: vec![g.bias.len()],
                data: g.bias.as_slice().expect(contiguous),
            });
        }
        out
    }
}

/// Exact gradients of [`loss`] for a forward pass that used batch statistics.
pub fn backward(cache: &ForwardCache<'_>, labels: &[bool], model: &Model) -> Result<Gradients> {
    if !cache.batch_stats {
        return Err(Error::Invariant(
            "backward needs a cache produced with batch statistics".into(),
        ));
    }
    if cache.widths != model.config.widths() || cache.blocks.len() != model.net.blocks.len() {
        return Err(Error::Invariant(
            "forward cache does not match the model".into(),
        ));
    }
    if labels.len() != cache.batch_size() {
        return Err(Error::validation(format!(
            "{} labels for a batch of {}",
            labels.len(),
            cache.batch_size()
        )));
    }

    let n = cache.batch_size() as f64;
    let mut upstream: Array2<f64> = Array2::from_shape_fn((cache.batch_size(), 1), |(b, _)| {
        let y = if labels[b] { 1.0 } else { 0.0 };
        (sigmoid(cache.logits[b]) - y) / n
    });

    let mut block_grads = Vec::with_capacity(cache.blocks.len());
    for (block, bc) in model.net.blocks.iter().zip(&cache.blocks).rev() {
        let weight = upstream.t().dot(&bc.activated);
        let bias = upstream.sum_axis(Axis(0));
        let mut d_act = upstream.dot(&block.linear.weight);
        if let Some(scale) = &bc.dropout_scale {
            d_act *= scale;
        }
        let d_pre = d_act * &bc.pre_relu.mapv(|y| if y > 0.0 { 1.0 } else { 0.0 });
        let gamma = (&d_pre * &bc.xhat).sum_axis(Axis(0));
        let beta = d_pre.sum_axis(Axis(0));
        let d_xhat = &d_pre * &block.norm.gamma;
        let sum_dx = d_xhat.sum_axis(Axis(0));
        let sum_dx_xhat = (&d_xhat * &bc.xhat).sum_axis(Axis(0));
        upstream = (d_xhat * n - &sum_dx - &bc.xhat * &sum_dx_xhat) * &(&bc.inv_std / n);
        block_grads.push(BlockGradients {
            gamma,
            beta,
            weight,
            bias,
        });
    }
    block_grads.reverse();

    let d2 = model.config.sentence_dim;
    let mut u = Array1::zeros(d2);
    let mut b = 0.0;
    let mut industry = model
        .industry
        .trainable
        .then(|| Array2::zeros(model.industry.table.raw_dim()));
    for (i, ex) in cache.examples.iter().enumerate() {
        let row = upstream.row(i);
        let d_e = row.slice(ndarray::s![..d2]);
        if let Some(ind) = industry.as_mut() {
            let mut target = ind.row_mut(ex.sector.index());
            target += &row.slice(ndarray::s![d2..]);
        }
        let v = ex.sentences.vectors();
        let d_alpha = v.dot(&d_e);
        let mean_d_alpha = ex.alpha.dot(&d_alpha);
        let d_score: Array1<f64> = ndarray::Zip::from(&ex.alpha)
            .and(&d_alpha)
            .and(ex.sentences.mask())
            .map_collect(|&a, &da, &keep| if keep { a * (da - mean_d_alpha) } else { 0.0 });
        u += &d_score.dot(v);
        b += d_score.sum();
    }

    Ok(Gradients {
        u,
        b,
        industry,
        blocks: block_grads,
    })
}

impl Model {
    /// Folds the batch statistics of a training pass into the running estimates,
    /// using the unbiased batch variance.
    pub fn update_running_stats(&mut self, cache: &ForwardCache<'_>) -> Result<()> {
        if !cache.batch_stats || cache.widths != self.config.widths() {
            return Err(Error::Invariant(
                "running stats need a matching training cache".into(),
            ));
        }
        let n = cache.batch_size() as f64;
        let m = self.net.momentum;
        for (block, bc) in self.net.blocks.iter_mut().zip(&cache.blocks) {
            let norm = &mut block.norm;
            norm.running_mean = &norm.running_mean * (1.0 - m) + &bc.mean * m;
            norm.running_var = &norm.running_var * (1.0 - m) + &bc.var * (m * n / (n - 1.0));
        }
        Ok(())
    }
}

/// Eval-mode probability and label; exactly 0.5 maps to label 0.
pub fn predict(model: &Model, input: &ModelInput) -> Result<(f64, bool)> {
    let cache = forward(model, std::slice::from_ref(input), Mode::Eval)?;
    let p = sigmoid(cache.logits[0]);
    Ok((p, p > 0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn cfg(dropout: f64) -> ModelConfig {
        ModelConfig {
            sentence_dim: 6,
            industry_dim: 3,
            hidden: vec![5],
            dropout,
            ..ModelConfig::default()
        }
    }

    fn batch(seed: u64, b: usize, n: usize, dim: usize) -> Vec<ModelInput> {
        let mut rng = ModelRng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        (0..b)
            .map(|i| ModelInput {
                sentences: SentenceMatrix::from_rows(Array2::from_shape_simple_fn(
                    (n, dim),
                    || normal.sample(&mut rng),
                ))
                .unwrap(),
                sector: Sector::new((i % 11) as i64).unwrap(),
            })
            .collect()
    }

    #[test]
    fn loss_closed_forms() {
        let ln2 = std::f64::consts::LN_2;
        assert!((loss(&ndarray::array![0.0], &[true]) - ln2).abs() < 1e-15);
        assert!((loss(&ndarray::array![0.0], &[false]) - ln2).abs() < 1e-15);
        let extreme = loss(&ndarray::array![1e4, -1e4], &[true, false]);
        assert!(extreme.is_finite() && extreme.abs() < 1e-12);
        let wrong = loss(&ndarray::array![1e4], &[false]);
        assert!((wrong - 1e4).abs() < 1e-9);
    }

    #[test]
    fn eval_is_deterministic() {
        let model = Model::init(cfg(0.5), 1).unwrap();
        let xs = batch(2, 3, 4, 6);
        let a = forward(&model, &xs, Mode::Eval).unwrap();
        let b = forward(&model, &xs, Mode::Eval).unwrap();
        assert_eq!(a.logits(), b.logits());
    }

    #[test]
    fn train_without_dropout_matches_eval_at_equal_stats() {
        let mut model = Model::init(cfg(0.0), 3).unwrap();
        let xs = batch(4, 5, 3, 6);
        let mut rng = ModelRng::seed_from_u64(0);
        let train = forward(&model, &xs, Mode::Train(&mut rng)).unwrap();
        let stats: Vec<_> = train
            .batch_statistics()
            .into_iter()
            .map(|(m, v)| (m.clone(), v.clone()))
            .collect();
        for (block, (m, v)) in model.net.blocks.iter_mut().zip(stats) {
            block.norm.running_mean = m;
            block.norm.running_var = v;
        }
        let eval = forward(&model, &xs, Mode::Eval).unwrap();
        for (a, b) in train.logits().iter().zip(eval.logits()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_output_weights_give_bias() {
        let mut model = Model::init(cfg(0.5), 5).unwrap();
        let last = model.net.blocks.last_mut().unwrap();
        last.linear.weight.fill(0.0);
        last.linear.bias.fill(-0.75);
        let xs = batch(6, 4, 3, 6);
        let mut rng = ModelRng::seed_from_u64(1);
        for mode in [Mode::Eval, Mode::Train(&mut rng)] {
            let c = forward(&model, &xs, mode).unwrap();
            assert!(c.logits().iter().all(|&z| z == -0.75));
        }
    }

    #[test]
    fn single_example_train_batch_rejected() {
        let model = Model::init(cfg(0.0), 5).unwrap();
        let xs = batch(6, 1, 3, 6);
        assert!(forward(&model, &xs, Mode::TrainNoDropout).is_err());
        assert!(forward(&model, &xs, Mode::Eval).is_ok());
    }

    #[test]
    fn dropped_units_get_no_incoming_gradient() {
        let model = Model::init(cfg(0.9), 8).unwrap();
        let xs = batch(9, 2, 3, 6);
        let labels = [true, false];
        let mut rng = ModelRng::seed_from_u64(11);
        let cache = forward(&model, &xs, Mode::Train(&mut rng)).unwrap();
        let grads = backward(&cache, &labels, &model).unwrap();
        // Input unit i of block j is zeroed for the whole batch -> column i of
        // that block's weight gradient is exactly zero.
        let mut seen = false;
        for (j, g) in grads.blocks.iter().enumerate() {
            let scale = cache.dropout_scale(j).unwrap();
            for i in 0..scale.ncols() {
                if scale.column(i).iter().all(|&s| s == 0.0) {
                    seen = true;
                    assert!(g.weight.column(i).iter().all(|&w| w == 0.0));
                }
            }
        }
        assert!(
            seen,
            "seed should drop at least one unit for the whole batch"
        );
    }

    #[test]
    fn backward_rejects_mismatched_model() {
        let model = Model::init(cfg(0.0), 1).unwrap();
        let other = Model::init(
            ModelConfig {
                hidden: vec![7],
                ..cfg(0.0)
            },
            1,
        )
        .unwrap();
        let xs = batch(2, 3, 3, 6);
        let cache = forward(&model, &xs, Mode::TrainNoDropout).unwrap();
        assert!(backward(&cache, &[true, false, true], &other).is_err());
        let eval = forward(&model, &xs, Mode::Eval).unwrap();
        assert!(backward(&eval, &[true, false, true], &model).is_err());
    }

    #[test]
    fn predict_threshold() {
        let mut model = Model::init(cfg(0.0), 1).unwrap();
        let last = model.net.blocks.last_mut().unwrap();
        last.linear.weight.fill(0.0);
        let x = &batch(3, 1, 2, 6)[0];
        assert_eq!(predict(&model, x).unwrap(), (0.5, false));
        model.net.blocks.last_mut().unwrap().linear.bias.fill(1e4);
        let (p, y) = predict(&model, x).unwrap();
        assert!(y && (p - 1.0).abs() < 1e-12);
        assert_eq!(predict(&model, x).unwrap(), predict(&model, x).unwrap());
    }

    #[test]
    fn inference_leaves_running_stats_alone() {
        let model = Model::init(cfg(0.3), 1).unwrap();
        let before = model.clone();
        let xs = batch(3, 4, 2, 6);
        let mut rng = ModelRng::seed_from_u64(3);
        forward(&model, &xs, Mode::Train(&mut rng)).unwrap();
        predict(&model, &xs[0]).unwrap();
        assert_eq!(model, before);
    }
}
