//! The trainable movement classifier.
//!
//! A transcript enters as a matrix of sentence vectors. Attention pools it into a
//! single vector `E`, which is concatenated with the sector's industry embedding and
//! fed through a stack of blocks, each `batch-norm -> ReLU -> dropout -> linear`.
//! The last block's linear layer emits one logit.

mod attention;
mod checkpoint;
mod gradcheck;
mod network;
mod train;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::corpus::{Sector, NUM_SECTORS};
use crate::error::{Error, Result};

pub use attention::{aggregate, attention_weights, AttentionParams};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, GradCheckReport};
pub use network::{backward, forward, loss, predict, ForwardCache, Gradients, Mode};
pub use train::{train, EpochLog, TrainConfig, TrainingExample, TrainingLog};

/// Generator used for initialization, dropout and shuffling.
pub type ModelRng = ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Length of a sentence vector, twice the word-vector dimension.
    pub sentence_dim: usize,
    pub industry_dim: usize,
    pub industry_trainable: bool,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub batch_norm_eps: f64,
    pub batch_norm_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            sentence_dim: 600,
            industry_dim: 16,
            industry_trainable: true,
            hidden: vec![64, 64],
            dropout: 0.5,
            batch_norm_eps: 1e-5,
            batch_norm_momentum: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn input_dim(&self) -> usize {
        self.sentence_dim + self.industry_dim
    }

    /// Width of every block boundary, from the network input to the single logit.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim());
        w.extend(&self.hidden);
        w.push(1);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.sentence_dim == 0 || !self.sentence_dim.is_multiple_of(2) {
            return Err(Error::validation(
                "sentence_dim must be a positive even number",
            ));
        }
        if self.industry_dim == 0 {
            return Err(Error::validation("industry_dim must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::validation("hidden widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::validation("dropout must lie in [0, 1)"));
        }
        if !(self.batch_norm_eps > 0.0) {
            return Err(Error::validation("batch_norm_eps must be positive"));
        }
        if !(0.0..=1.0).contains(&self.batch_norm_momentum) {
            return Err(Error::validation("batch_norm_momentum must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// One learnable vector per GICS sector.
#[derive(Debug, Clone, PartialEq)]
pub struct IndustryEmbeddingTable {
    pub table: Array2<f64>,
    pub trainable: bool,
}

impl IndustryEmbeddingTable {
    pub fn dim(&self) -> usize {
        self.table.ncols()
    }
}

/// Row `sector` of the industry table.
pub fn industry_embed(sector: i64, table: &IndustryEmbeddingTable) -> Result<Array1<f64>> {
    let sector = Sector::new(sector)?;
    Ok(table.table.row(sector.index()).to_owned())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out × in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub norm: BatchNorm,
    pub linear: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminativeNet {
    pub blocks: Vec<Block>,
    pub dropout: f64,
    pub eps: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub attention: AttentionParams,
    pub industry: IndustryEmbeddingTable,
    pub net: DiscriminativeNet,
    pub seed: u64,
}

/// Borrowed view of a named tensor.
#[derive(Debug)]
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

fn slice(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("parameter arrays are contiguous")
}

fn slice2(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("parameter arrays are contiguous")
}

fn slice_mut(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter arrays are contiguous")
}

fn slice2_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter arrays are contiguous")
}

impl Model {
    /// Random initialization: Glorot-uniform linear weights, zero biases, unit
    /// batch-norm scale, `u ~ N(0, 1/sqrt(2d))`, `b = 0`, industry rows `~ N(0, 0.1)`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ModelRng::seed_from_u64(seed);
        Ok(Self::init_with(config, seed, &mut rng))
    }

    pub(crate) fn init_with(config: ModelConfig, seed: u64, rng: &mut ModelRng) -> Self {
        let u_dist = Normal::new(0.0, 1.0 / (config.sentence_dim as f64).sqrt()).unwrap();
        let u = Array1::from_shape_simple_fn(config.sentence_dim, || u_dist.sample(rng));

        let ind_dist = Normal::new(0.0, 0.1).unwrap();
        let table = Array2::from_shape_simple_fn((NUM_SECTORS, config.industry_dim), || {
            ind_dist.sample(rng)
        });

        let widths = config.widths();
        let blocks = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).unwrap();
                Block {
                    norm: BatchNorm {
                        gamma: Array1::ones(fan_in),
                        beta: Array1::zeros(fan_in),
                        running_mean: Array1::zeros(fan_in),
                        running_var: Array1::ones(fan_in),
                    },
                    linear: Linear {
                        weight: Array2::from_shape_simple_fn((fan_out, fan_in), || {
                            rng.sample(dist)
                        }),
                        bias: Array1::zeros(fan_out),
                    },
                }
            })
            .collect();

        Model {
            attention: AttentionParams { u, b: 0.0 },
            industry: IndustryEmbeddingTable {
                table,
                trainable: config.industry_trainable,
            },
            net: DiscriminativeNet {
                blocks,
                dropout: config.dropout,
                eps: config.batch_norm_eps,
                momentum: config.batch_norm_momentum,
            },
            config,
            seed,
        }
    }

    /// Trainable tensors in a fixed order shared with [`Gradients::tensors`].
    pub fn parameters(&self) -> Vec<TensorRef<'_>> {
        let mut out = vec![
            TensorRef {
                name: "attention.u".into(),
                shape: vec![self.attention.u.len()],
                data: slice(&self.attention.u),
            },
            TensorRef {
                name: "attention.b".into(),
                shape: vec![],
                data: std::slice::from_ref(&self.attention.b),
            },
        ];
        if self.industry.trainable {
            out.push(TensorRef {
                name: "industry.table".into(),
                shape: self.industry.table.shape().to_vec(),
                data: slice2(&self.industry.table),
            });
        }
        for (j, block) in self.net.blocks.iter().enumerate() {
            out.push(TensorRef {
                name: format!("net.{j}.norm.gamma"),
                shape: vec![block.norm.gamma.len()],
                data: slice(&block.norm.gamma),
            });
            out.push(TensorRef {
                name: format!("net.{j}.norm.beta"),
                shape: vec![block.norm.beta.len()],
                data: slice(&block.norm.beta),
            });
            out.push(TensorRef {
                name: format!("net.{j}.linear.weight"),
                shape: block.linear.weight.shape().to_vec(),
                data: slice2(&block.linear.weight),
            });
            out.push(TensorRef {
                name: format!("net.{j}.linear.bias"),
                shape: vec![block.linear.bias.len()],
                data: slice(&block.linear.bias),
            });
        }
        out
    }

    /// Mutable slices matching [`Model::parameters`] one to one.
    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            slice_mut(&mut self.attention.u),
            std::slice::from_mut(&mut self.attention.b),
        ];
        if self.industry.trainable {
            out.push(slice2_mut(&mut self.industry.table));
        }
        for block in &mut self.net.blocks {
            out.push(slice_mut(&mut block.norm.gamma));
            out.push(slice_mut(&mut block.norm.beta));
            out.push(slice2_mut(&mut block.linear.weight));
            out.push(slice_mut(&mut block.linear.bias));
        }
        out
    }

    /// Every tensor including non-trainable state, in checkpoint order.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = vec![
            TensorRef {
                name: "attention.u".into(),
                shape: vec![self.attention.u.len()],
                data: slice(&self.attention.u),
            },
            TensorRef {
                name: "attention.b".into(),
                shape: vec![],
                data: std::slice::from_ref(&self.attention.b),
            },
            TensorRef {
                name: "industry.table".into(),
                shape: self.industry.table.shape().to_vec(),
                data: slice2(&self.industry.table),
            },
        ];
        for (j, block) in self.net.blocks.iter().enumerate() {
            let norm = &block.norm;
            for (field, a) in [
                ("gamma", &norm.gamma),
                ("beta", &norm.beta),
                ("running_mean", &norm.running_mean),
                ("running_var", &norm.running_var),
            ] {
                out.push(TensorRef {
                    name: format!("net.{j}.norm.{field}"),
                    shape: vec![a.len()],
                    data: slice(a),
                });
            }
            out.push(TensorRef {
                name: format!("net.{j}.linear.weight"),
                shape: block.linear.weight.shape().to_vec(),
                data: slice2(&block.linear.weight),
            });
            out.push(TensorRef {
                name: format!("net.{j}.linear.bias"),
                shape: vec![block.linear.bias.len()],
                data: slice(&block.linear.bias),
            });
        }
        out
    }

    /// Mutable slices matching [`Model::tensors`] one to one.
    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            slice_mut(&mut self.attention.u),
            std::slice::from_mut(&mut self.attention.b),
            slice2_mut(&mut self.industry.table),
        ];
        for block in &mut self.net.blocks {
            let norm = &mut block.norm;
            out.push(slice_mut(&mut norm.gamma));
            out.push(slice_mut(&mut norm.beta));
            out.push(slice_mut(&mut norm.running_mean));
            out.push(slice_mut(&mut norm.running_var));
            out.push(slice2_mut(&mut block.linear.weight));
            out.push(slice_mut(&mut block.linear.bias));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|x| x.is_finite()))
    }
}

/// Sentence vectors of one transcript plus a padding mask (`true` = real sentence).
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceMatrix {
    vectors: Array2<f64>,
    mask: Vec<bool>,
}

impl SentenceMatrix {
    pub fn new(vectors: Array2<f64>, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != vectors.nrows() {
            return Err(Error::validation(
                "mask length must equal the number of sentences",
            ));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::validation(
                "a transcript needs at least one unmasked sentence",
            ));
        }
        Ok(SentenceMatrix { vectors, mask })
    }

    /// All rows real.
    pub fn from_rows(vectors: Array2<f64>) -> Result<Self> {
        let n = vectors.nrows();
        Self::new(vectors, vec![true; n])
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    /// Appends masked rows until there are `n` rows.
    pub fn padded_to(&self, n: usize) -> Self {
        if n <= self.len() {
            return self.clone();
        }
        let mut vectors = Array2::zeros((n, self.dim()));
        vectors
            .slice_mut(ndarray::s![..self.len(), ..])
            .assign(&self.vectors);
        let mut mask = self.mask.clone();
        mask.resize(n, false);
        SentenceMatrix { vectors, mask }
    }
}

/// Network input for one transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub sentences: SentenceMatrix,
    pub sector: Sector,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            sentence_dim: 8,
            industry_dim: 3,
            hidden: vec![5, 4],
            ..ModelConfig::default()
        }
    }

    #[test]
    fn widths_chain_from_input_to_logit() {
        let m = Model::init(cfg(), 1).unwrap();
        assert_eq!(m.config.widths(), vec![11, 5, 4, 1]);
        assert_eq!(m.net.blocks.len(), 3);
        for (block, w) in m.net.blocks.iter().zip(m.config.widths().windows(2)) {
            assert_eq!(block.linear.weight.shape(), &[w[1], w[0]]);
            assert_eq!(block.norm.gamma.len(), w[0]);
        }
        assert_eq!(m.industry.table.shape(), &[11, 3]);
    }

    #[test]
    fn parameter_views_agree() {
        let mut m = Model::init(cfg(), 2).unwrap();
        let shapes: Vec<usize> = m.parameters().iter().map(|t| t.data.len()).collect();
        let mut_shapes: Vec<usize> = m.parameters_mut().iter().map(|s| s.len()).collect();
        assert_eq!(shapes, mut_shapes);
        let all: Vec<usize> = m.tensors().iter().map(|t| t.data.len()).collect();
        let all_mut: Vec<usize> = m.tensors_mut().iter().map(|s| s.len()).collect();
        assert_eq!(all, all_mut);
    }

    #[test]
    fn industry_lookup() {
        let m = Model::init(cfg(), 3).unwrap();
        assert_eq!(
            industry_embed(0, &m.industry).unwrap(),
            m.industry.table.row(0).to_owned()
        );
        assert_ne!(
            industry_embed(2, &m.industry).unwrap(),
            industry_embed(7, &m.industry).unwrap()
        );
        assert!(industry_embed(11, &m.industry).is_err());
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(
            Model::init(cfg(), 9).unwrap(),
            Model::init(cfg(), 9).unwrap()
        );
        assert_ne!(
            Model::init(cfg(), 9).unwrap(),
            Model::init(cfg(), 10).unwrap()
        );
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = ModelConfig {
            dropout: 1.0,
            ..cfg()
        };
        assert!(Model::init(bad, 0).is_err());
        let bad = ModelConfig {
            sentence_dim: 7,
            ..cfg()
        };
        assert!(Model::init(bad, 0).is_err());
    }
}
