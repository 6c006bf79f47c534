//! End-to-end runs driven by a declarative TOML config.
//!
//! Data preparation order: parse, drop transcripts below the sentence floor or
//! without a resolvable label, split by the holdout rule, build the vocabulary on the
//! training side, map every transcript onto it, embed, and drop what falls below
//! the floor afterwards. Split membership is fixed before the vocabulary exists.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{
    self, baseline_predict, baseline_train, build_idf, log1p_vector, tfidf_vector,
    write_feature_matrix, LogisticConfig, SparseFeatureVector,
};
use crate::corpus::write_transcripts;
use crate::corpus::{
    build_vocabulary, parse_transcripts, prepare_answer_sequence, tokenized_sentences,
    AnswerSequence, ComponentKind, Prepared, RawTranscript, Sector, SequenceLimits, SkipReason,
    StopWords, TokenId, Vocabulary,
};
use crate::embeddings::{embed_sentence, EmbeddingTable};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, holdout_split, EvalReport, MetricsFile, Observation, HOLDOUT_PER_COMPANY,
};
use crate::labels::write_prices;
use crate::labels::{
    build_dataset, movement_label, read_prices, Exclusion, ExclusionReason, LabeledExample,
    PriceSeries,
};
use crate::model::{
    forward, grad_check, predict, train, Checkpoint, GradCheckReport, Mode, Model, ModelConfig,
    ModelInput, ModelRng, SentenceMatrix, TrainConfig, TrainingExample, TrainingLog,
};
use crate::synth::{generate, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ComponentSelector {
    #[default]
    Answer,
    Presentation,
}

impl ComponentSelector {
    pub fn kind(self) -> ComponentKind {
        match self {
            ComponentSelector::Answer => ComponentKind::Answer,
            ComponentSelector::Presentation => ComponentKind::PresentationSection,
        }
    }
}

/// Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub transcripts: PathBuf,
    pub prices: PathBuf,
    pub embeddings: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_words: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Preprocess {
    pub max_sentences: usize,
    pub min_sentences: usize,
    pub min_frequency: u64,
    /// Word-vector dimension the embedding file must have, if set.
    pub expected_dim: Option<usize>,
    pub component: ComponentSelector,
}

impl Default for Preprocess {
    fn default() -> Self {
        Preprocess {
            max_sentences: crate::corpus::DEFAULT_MAX_SENTENCES,
            min_sentences: crate::corpus::DEFAULT_MIN_SENTENCES,
            min_frequency: crate::corpus::DEFAULT_MIN_FREQUENCY,
            expected_dim: None,
            component: ComponentSelector::Answer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub industry_dim: usize,
    pub industry_trainable: bool,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub batch_norm_eps: f64,
    pub batch_norm_momentum: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSettings {
            industry_dim: m.industry_dim,
            industry_trainable: m.industry_trainable,
            hidden: m.hidden,
            dropout: m.dropout,
            batch_norm_eps: m.batch_norm_eps,
            batch_norm_momentum: m.batch_norm_momentum,
        }
    }
}

impl ModelSettings {
    pub fn model_config(&self, sentence_dim: usize) -> ModelConfig {
        ModelConfig {
            sentence_dim,
            industry_dim: self.industry_dim,
            industry_trainable: self.industry_trainable,
            hidden: self.hidden.clone(),
            dropout: self.dropout,
            batch_norm_eps: self.batch_norm_eps,
            batch_norm_momentum: self.batch_norm_momentum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub validation_fraction: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSettings {
            batch_size: t.batch_size,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            validation_fraction: t.validation_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSettings {
    pub ma_window: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        let l = LogisticConfig::default();
        BaselineSettings {
            ma_window: baselines::DEFAULT_MA_WINDOW,
            lambda: l.lambda,
            learning_rate: l.learning_rate,
            epochs: l.epochs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckSettings {
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub sentences: usize,
    pub eps: f64,
    pub seeds: usize,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        GradCheckSettings {
            hidden: vec![8, 8],
            batch_size: 4,
            sentences: 5,
            eps: 1e-5,
            seeds: 10,
        }
    }
}

/// Tokens whose sentences count as planted signal in the attention diagnostic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Diagnostics {
    pub signal_tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub preprocess: Preprocess,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub baseline: BaselineSettings,
    #[serde(default)]
    pub gradcheck: GradCheckSettings,
    #[serde(default)]
    pub diagnostics: Diagnostics,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

impl RunConfig {
    pub fn from_toml(text: &str, source_name: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::parse(source_name, line, e.message().to_string())
        })?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_toml(&text, &path.display().to_string(), base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.preprocess;
        if p.min_sentences == 0 || p.max_sentences < p.min_sentences {
            return Err(Error::validation(
                "need 1 <= min_sentences <= max_sentences",
            ));
        }
        if p.min_frequency == 0 {
            return Err(Error::validation("min_frequency must be at least 1"));
        }
        if p.expected_dim == Some(0) {
            return Err(Error::validation("expected_dim must be positive"));
        }
        self.model.model_config(2).validate()?;
        self.train_config().validate()?;
        if self.train.epochs == 0 {
            return Err(Error::validation("epochs must be at least 1"));
        }
        self.logistic_config().validate()?;
        if self.baseline.ma_window == 0 {
            return Err(Error::validation("ma_window must be positive"));
        }
        let g = &self.gradcheck;
        if g.batch_size < 2 || g.sentences == 0 || g.seeds == 0 || !(g.eps > 0.0) {
            return Err(Error::validation(
                "gradcheck needs batch_size >= 2, sentences >= 1, seeds >= 1, eps > 0",
            ));
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.paths.output_dir)
    }

    pub fn limits(&self) -> SequenceLimits {
        SequenceLimits {
            max_sentences: self.preprocess.max_sentences,
            min_sentences: self.preprocess.min_sentences,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            learning_rate: self.train.learning_rate,
            validation_fraction: self.train.validation_fraction,
            ..TrainConfig::default()
        }
    }

    pub fn logistic_config(&self) -> LogisticConfig {
        LogisticConfig {
            lambda: self.baseline.lambda,
            learning_rate: self.baseline.learning_rate,
            epochs: self.baseline.epochs,
            seed: self.seed,
        }
    }

    /// The config as JSON with the output directory blanked, since where results go
    /// does not change them.
    pub fn snapshot(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v["paths"]["output_dir"] = serde_json::Value::Null;
        v
    }

    /// Hash of [`RunConfig::snapshot`]; input paths are hashed as written.
    pub fn hash(&self) -> String {
        sha256_hex(self.snapshot().to_string().as_bytes())
    }
}

/// One example ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub example: LabeledExample,
    pub input: ModelInput,
    /// Token ids behind each row of `input.sentences`.
    pub sentence_ids: Vec<Vec<TokenId>>,
}

impl Observation for Item {
    fn company_id(&self) -> &str {
        &self.example.company_id
    }
    fn date(&self) -> NaiveDate {
        self.example.call_date
    }
    fn sector(&self) -> Sector {
        self.example.sector
    }
    fn label(&self) -> bool {
        self.example.label
    }
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub vocabulary: Vocabulary,
    pub embeddings: EmbeddingTable,
    pub prices: BTreeMap<String, PriceSeries>,
    pub train: Vec<Item>,
    pub test: Vec<Item>,
    pub exclusions: Vec<Exclusion>,
    pub test_only_companies: Vec<String>,
    pub dataset_hash: String,
}

/// Embeds each sentence; sentences with no embedded token are dropped and the
/// floor is applied to what remains.
pub fn embed_sequence(
    sequence: &AnswerSequence,
    table: &EmbeddingTable,
    min_sentences: usize,
) -> std::result::Result<(SentenceMatrix, Vec<Vec<TokenId>>), SkipReason> {
    let mut rows = Vec::new();
    let mut ids = Vec::new();
    for s in &sequence.sentences {
        if let Some(v) = embed_sentence(s, table) {
            rows.push(v.0);
            ids.push(s.clone());
        }
    }
    if rows.len() < min_sentences.max(1) {
        return Err(SkipReason::TooShort {
            sentences: rows.len(),
            required: min_sentences,
        });
    }
    let dim = table.sentence_dim();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let matrix = Array2::from_shape_vec((ids.len(), dim), flat).expect("rows have sentence_dim");
    Ok((SentenceMatrix::from_rows(matrix).expect("non-empty"), ids))
}

struct Candidate {
    index: usize,
    company: String,
    date: NaiveDate,
    sector: Sector,
}

impl Observation for Candidate {
    fn company_id(&self) -> &str {
        &self.company
    }
    fn date(&self) -> NaiveDate {
        self.date
    }
    fn sector(&self) -> Sector {
        self.sector
    }
    fn label(&self) -> bool {
        false
    }
}

fn stop_words(cfg: &RunConfig) -> Result<StopWords> {
    match &cfg.paths.stop_words {
        Some(p) => StopWords::load(&cfg.resolve(p)),
        None => Ok(StopWords::default()),
    }
}

pub fn prepare_data(cfg: &RunConfig) -> Result<PreparedData> {
    let transcripts_path = cfg.resolve(&cfg.paths.transcripts);
    let prices_path = cfg.resolve(&cfg.paths.prices);
    let embeddings_path = cfg.resolve(&cfg.paths.embeddings);
    let transcript_bytes = read_bytes(&transcripts_path)?;
    let price_bytes = read_bytes(&prices_path)?;
    let embedding_bytes = read_bytes(&embeddings_path)?;
    let transcripts = parse_transcripts(
        transcript_bytes.as_slice(),
        &transcripts_path.display().to_string(),
    )?;
    let prices = read_prices(price_bytes.as_slice(), &prices_path.display().to_string())?;
    let stop = stop_words(cfg)?;
    let kind = cfg.preprocess.component.kind();
    let limits = cfg.limits();

    let mut seen = HashSet::new();
    for t in &transcripts {
        if !seen.insert((t.ticker.as_str(), t.call_date)) {
            return Err(Error::validation(format!(
                "duplicate transcript for {} on {}",
                t.ticker, t.call_date
            )));
        }
    }

    // Split on what can possibly be used, before any vocabulary exists.
    let tokens: Vec<Vec<Vec<String>>> = transcripts
        .iter()
        .map(|t| tokenized_sentences(t, kind, &stop))
        .collect();
    let candidates: Vec<Candidate> = transcripts
        .iter()
        .enumerate()
        .filter(|(i, t)| {
            tokens[*i].len() >= limits.min_sentences
                && prices
                    .get(&t.ticker)
                    .is_some_and(|s| movement_label(s, t.call_date).is_ok())
        })
        .map(|(index, t)| Candidate {
            index,
            company: t.company_id.clone(),
            date: t.call_date,
            sector: t.sector,
        })
        .collect();
    let split = holdout_split(candidates, HOLDOUT_PER_COMPANY);
    let train_keys: BTreeSet<(String, NaiveDate)> = split
        .train
        .iter()
        .map(|c| (c.company.clone(), c.date))
        .collect();
    if split.train.is_empty() {
        return Err(Error::validation(
            "no training examples: every company has at most five usable transcripts",
        ));
    }

    let train_docs: Vec<Vec<&str>> = split
        .train
        .iter()
        .map(|c| {
            tokens[c.index]
                .iter()
                .flatten()
                .map(String::as_str)
                .collect()
        })
        .collect();
    let vocabulary = build_vocabulary(&train_docs, cfg.preprocess.min_frequency, &stop)?;
    let embeddings = EmbeddingTable::read(
        embedding_bytes.as_slice(),
        &embeddings_path.display().to_string(),
        &vocabulary,
    )?;
    if let Some(d) = cfg.preprocess.expected_dim {
        if embeddings.dim() != d {
            return Err(Error::validation(format!(
                "embedding dimension {} differs from expected_dim {d}",
                embeddings.dim()
            )));
        }
    }

    let sequences: Vec<Prepared> = transcripts
        .iter()
        .map(|t| prepare_answer_sequence(t, &vocabulary, limits, kind))
        .collect();
    let dataset = build_dataset(&transcripts, &sequences, &prices)?;
    let mut exclusions = dataset.exclusions;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for example in dataset.examples {
        match embed_sequence(&example.sequence, &embeddings, limits.min_sentences) {
            Ok((sentences, sentence_ids)) => {
                let is_train =
                    train_keys.contains(&(example.company_id.clone(), example.call_date));
                let item = Item {
                    input: ModelInput {
                        sentences,
                        sector: example.sector,
                    },
                    example,
                    sentence_ids,
                };
                if is_train {
                    train.push(item);
                } else {
                    test.push(item);
                }
            }
            Err(reason) => exclusions.push(Exclusion {
                company_id: example.company_id.clone(),
                ticker: example.ticker.clone(),
                call_date: example.call_date,
                reason: ExclusionReason::Skipped(reason),
            }),
        }
    }
    for e in &exclusions {
        log::info!("excluded {} {}: {}", e.ticker, e.call_date, e.reason);
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::validation(format!(
            "{} training and {} test examples after preprocessing",
            train.len(),
            test.len()
        )));
    }

    let dataset_hash = sha256_hex(
        format!(
            "{}\n{}\n{}\n{}",
            sha256_hex(&transcript_bytes),
            sha256_hex(&price_bytes),
            embeddings.source_hash(),
            vocabulary.hash()
        )
        .as_bytes(),
    );
    Ok(PreparedData {
        vocabulary,
        embeddings,
        prices,
        train,
        test,
        exclusions,
        test_only_companies: split.test_only_companies,
        dataset_hash,
    })
}

fn training_examples(items: &[Item]) -> Vec<TrainingExample> {
    items
        .iter()
        .map(|it| TrainingExample {
            input: it.input.clone(),
            label: it.example.label,
            company_id: it.example.company_id.clone(),
            call_date: it.example.call_date,
        })
        .collect()
}

/// Eval-mode labels and attention weights for every item.
pub fn predict_items(model: &Model, items: &[Item]) -> Result<(Vec<bool>, Vec<Vec<f64>>)> {
    let mut labels = Vec::with_capacity(items.len());
    let mut attention = Vec::with_capacity(items.len());
    for chunk in items.chunks(256) {
        let inputs: Vec<&ModelInput> = chunk.iter().map(|it| &it.input).collect();
        let cache = forward(model, &inputs, Mode::Eval)?;
        labels.extend(cache.logits().iter().map(|&z| z > 0.0));
        attention.extend((0..chunk.len()).map(|i| cache.attention(i).to_vec()));
    }
    Ok((labels, attention))
}

/// Mean over items of `N · mean α on signal sentences`; 1.0 means uniform attention.
/// Items without a signal sentence are skipped. `None` if no item qualifies.
pub fn attention_signal_ratio(
    items: &[Item],
    attention: &[Vec<f64>],
    signal_ids: &BTreeSet<TokenId>,
) -> Option<f64> {
    let ratios: Vec<f64> = items
        .iter()
        .zip(attention)
        .filter_map(|(it, alpha)| {
            let hits: Vec<usize> = it
                .sentence_ids
                .iter()
                .enumerate()
                .filter(|(_, s)| s.iter().any(|id| signal_ids.contains(id)))
                .map(|(i, _)| i)
                .collect();
            if hits.is_empty() {
                return None;
            }
            let mean = hits.iter().map(|&i| alpha[i]).sum::<f64>() / hits.len() as f64;
            Some(mean * it.sentence_ids.len() as f64)
        })
        .collect();
    (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainingLog,
    pub report: EvalReport,
    pub metrics: MetricsFile,
    pub train_accuracy: f64,
    pub attention_ratio: Option<f64>,
}

fn base_extra(data: &PreparedData) -> BTreeMap<String, serde_json::Value> {
    let mut extra = BTreeMap::new();
    extra.insert("train_examples".into(), data.train.len().into());
    extra.insert("test_examples".into(), data.test.len().into());
    extra.insert("excluded".into(), data.exclusions.len().into());
    extra.insert(
        "test_only_companies".into(),
        data.test_only_companies.len().into(),
    );
    extra
}

fn model_metrics(
    cfg: &RunConfig,
    data: &PreparedData,
    model: &Model,
) -> Result<(EvalReport, MetricsFile, f64, Option<f64>)> {
    let (train_pred, _) = predict_items(model, &data.train)?;
    let train_accuracy = train_pred
        .iter()
        .zip(&data.train)
        .filter(|(p, it)| **p == it.example.label)
        .count() as f64
        / data.train.len() as f64;
    let (test_pred, attention) = predict_items(model, &data.test)?;
    let report = evaluate(&test_pred, &data.test)?;

    let signal_ids: BTreeSet<TokenId> = cfg
        .diagnostics
        .signal_tokens
        .iter()
        .filter_map(|t| data.vocabulary.id(t))
        .collect();
    let ratio = if signal_ids.is_empty() {
        None
    } else {
        attention_signal_ratio(&data.test, &attention, &signal_ids)
    };

    let mut metrics = MetricsFile::new("attention", &report, &cfg.hash(), &data.dataset_hash);
    metrics.extra = base_extra(data);
    metrics
        .extra
        .insert("train_accuracy".into(), train_accuracy.into());
    if let Some(r) = ratio {
        metrics
            .extra
            .insert("attention_signal_ratio".into(), r.into());
    }
    Ok((report, metrics, train_accuracy, ratio))
}

pub fn run_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let data = prepare_data(cfg)?;
    let model_config = cfg.model.model_config(data.embeddings.sentence_dim());
    let (model, log) = train(
        &training_examples(&data.train),
        model_config,
        &cfg.train_config(),
    )?;
    let (report, mut metrics, train_accuracy, attention_ratio) = model_metrics(cfg, &data, &model)?;
    metrics
        .extra
        .insert("best_epoch".into(), log.best_epoch.into());
    let checkpoint = Checkpoint {
        model,
        vocabulary_hash: data.vocabulary.hash(),
        embedding_hash: data.embeddings.source_hash().to_string(),
        run_config: cfg.snapshot(),
    };
    Ok(TrainOutcome {
        checkpoint,
        log,
        report,
        metrics,
        train_accuracy,
        attention_ratio,
    })
}

pub fn run_evaluate(cfg: &RunConfig, checkpoint: &Checkpoint) -> Result<(EvalReport, MetricsFile)> {
    let data = prepare_data(cfg)?;
    checkpoint.verify_inputs(&data.vocabulary.hash(), data.embeddings.source_hash())?;
    let (report, metrics, _, _) = model_metrics(cfg, &data, &checkpoint.model)?;
    Ok((report, metrics))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    MeanReversion,
    Tfidf,
    Log1p,
}

impl BaselineMethod {
    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::MeanReversion => "mr",
            BaselineMethod::Tfidf => "tfidf",
            BaselineMethod::Log1p => "log1p",
        }
    }
}

fn bag(item: &Item) -> Vec<TokenId> {
    item.example.sequence.token_ids().collect()
}

pub fn feature_rows(
    method: BaselineMethod,
    data: &PreparedData,
) -> Result<(Vec<SparseFeatureVector>, Vec<SparseFeatureVector>)> {
    let dim = data.vocabulary.len();
    let train_docs: Vec<Vec<TokenId>> = data.train.iter().map(bag).collect();
    let test_docs: Vec<Vec<TokenId>> = data.test.iter().map(bag).collect();
    match method {
        BaselineMethod::Tfidf => {
            let idf = build_idf(&train_docs, dim)?;
            Ok((
                train_docs.iter().map(|d| tfidf_vector(d, &idf)).collect(),
                test_docs.iter().map(|d| tfidf_vector(d, &idf)).collect(),
            ))
        }
        BaselineMethod::Log1p => Ok((
            train_docs
                .iter()
                .map(|d| log1p_vector(d, dim))
                .collect::<Result<_>>()?,
            test_docs
                .iter()
                .map(|d| log1p_vector(d, dim))
                .collect::<Result<_>>()?,
        )),
        BaselineMethod::MeanReversion => Err(Error::validation(
            "mean reversion uses prices, not text features",
        )),
    }
}

/// Scores a baseline on the holdout split. With `export_dir`, the text methods also
/// write their train and test feature matrices there.
pub fn run_baseline(
    cfg: &RunConfig,
    method: BaselineMethod,
    export_dir: Option<&Path>,
) -> Result<(EvalReport, MetricsFile)> {
    let data = prepare_data(cfg)?;
    let mut extra = base_extra(&data);
    let (predictions, scored): (Vec<bool>, Vec<&Item>) = match method {
        BaselineMethod::MeanReversion => {
            let mut preds = Vec::new();
            let mut scored = Vec::new();
            for it in &data.test {
                let series = &data.prices[&it.example.ticker];
                match baselines::mean_reversion_predict(
                    series,
                    it.example.trade_date,
                    cfg.baseline.ma_window,
                ) {
                    Ok(p) => {
                        preds.push(p);
                        scored.push(it);
                    }
                    Err(e) => log::info!(
                        "mean reversion skips {} {}: {e}",
                        it.example.ticker,
                        it.example.call_date
                    ),
                }
            }
            extra.insert(
                "unresolvable".into(),
                (data.test.len() - scored.len()).into(),
            );
            (preds, scored)
        }
        BaselineMethod::Tfidf | BaselineMethod::Log1p => {
            let (train_x, test_x) = feature_rows(method, &data)?;
            if let Some(dir) = export_dir {
                let dim = data.vocabulary.len();
                for (split, xs, items) in [
                    ("train", &train_x, &data.train),
                    ("test", &test_x, &data.test),
                ] {
                    let rows: Vec<(bool, SparseFeatureVector)> = items
                        .iter()
                        .zip(xs.iter())
                        .map(|(it, x)| (it.example.label, x.clone()))
                        .collect();
                    let path = dir.join(format!("features_{}_{split}.txt", method.name()));
                    let mut buf = Vec::new();
                    write_feature_matrix(&mut buf, dim, &rows).map_err(|e| Error::io(&path, e))?;
                    fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
                }
            }
            let labels: Vec<bool> = data.train.iter().map(|it| it.example.label).collect();
            let model = baseline_train(&train_x, &labels, &cfg.logistic_config())?;
            let preds = test_x
                .iter()
                .map(|x| baseline_predict(&model, x))
                .collect::<Result<Vec<_>>>()?;
            extra.insert(
                "learner".into(),
                "l2 logistic regression (stands in for gradient-boosted trees)".into(),
            );
            (preds, data.test.iter().collect())
        }
    };
    if scored.is_empty() {
        return Err(Error::validation(format!(
            "baseline {} could not score any test example",
            method.name()
        )));
    }
    let report = evaluate(&predictions, &scored)?;
    let mut metrics = MetricsFile::new(method.name(), &report, &cfg.hash(), &data.dataset_hash);
    metrics.extra = extra;
    Ok((report, metrics))
}

/// Gradient check on `seeds` freshly initialized small models, each fed a batch of
/// training examples cut to their first few sentences.
pub fn run_gradcheck(cfg: &RunConfig) -> Result<Vec<GradCheckReport>> {
    let data = prepare_data(cfg)?;
    let g = &cfg.gradcheck;
    if data.train.len() < g.batch_size {
        return Err(Error::validation(
            "fewer training examples than the gradcheck batch",
        ));
    }
    let config = ModelConfig {
        hidden: g.hidden.clone(),
        ..cfg.model.model_config(data.embeddings.sentence_dim())
    };
    (0..g.seeds as u64)
        .map(|s| {
            let seed = cfg.seed.wrapping_add(s);
            let mut rng = ModelRng::seed_from_u64(seed);
            let picks = sample(&mut rng, data.train.len(), g.batch_size);
            let mut batch = Vec::with_capacity(g.batch_size);
            let mut labels = Vec::with_capacity(g.batch_size);
            for i in picks {
                let it = &data.train[i];
                let v = it.input.sentences.vectors();
                let n = v.nrows().min(g.sentences);
                batch.push(ModelInput {
                    sentences: SentenceMatrix::from_rows(v.slice(ndarray::s![..n, ..]).to_owned())?,
                    sector: it.input.sector,
                });
                labels.push(it.example.label);
            }
            let model = Model::init(config.clone(), seed)?;
            grad_check(&model, &batch, &labels, g.eps)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub company_id: String,
    pub call_date: NaiveDate,
    pub probability: f64,
    pub label: bool,
}

/// Scores transcripts with a checkpoint. The vocabulary is rebuilt from the config's
/// corpus and must hash to the checkpoint's. Any transcript below the sentence floor
/// fails the whole call.
pub fn predict_transcripts(
    cfg: &RunConfig,
    checkpoint: &Checkpoint,
    transcripts: &[RawTranscript],
) -> Result<Vec<Prediction>> {
    let data = prepare_data(cfg)?;
    checkpoint.verify_inputs(&data.vocabulary.hash(), data.embeddings.source_hash())?;
    let limits = cfg.limits();
    transcripts
        .iter()
        .map(|t| {
            let reject = |r: SkipReason| {
                Error::validation(format!("transcript {} {}: {r}", t.ticker, t.call_date))
            };
            let sequence = match prepare_answer_sequence(
                t,
                &data.vocabulary,
                limits,
                cfg.preprocess.component.kind(),
            ) {
                Prepared::Ready(s) => s,
                Prepared::Skipped(r) => return Err(reject(r)),
            };
            let (sentences, _) = embed_sequence(&sequence, &data.embeddings, limits.min_sentences)
                .map_err(reject)?;
            let (probability, label) = predict(
                &checkpoint.model,
                &ModelInput {
                    sentences,
                    sector: t.sector,
                },
            )?;
            Ok(Prediction {
                company_id: t.company_id.clone(),
                call_date: t.call_date,
                probability,
                label,
            })
        })
        .collect()
}

/// Writes a generated corpus into `dir` together with the spec it came from and a
/// run config pointing at it.
pub fn write_synthetic(dir: &Path, spec: &SyntheticSpec) -> Result<RunConfig> {
    let corpus = generate(spec)?;
    let mut transcripts = Vec::new();
    write_transcripts(&mut transcripts, &corpus.transcripts)
        .map_err(|e| Error::io(dir.join("transcripts.jsonl"), e))?;
    write_output(dir, "transcripts.jsonl", &transcripts)?;
    let mut prices = Vec::new();
    write_prices(&mut prices, &corpus.prices).map_err(|e| Error::io(dir.join("prices.csv"), e))?;
    write_output(dir, "prices.csv", &prices)?;
    write_output(dir, "embeddings.txt", corpus.embeddings.as_bytes())?;
    write_output(
        dir,
        "synth.toml",
        toml::to_string(spec).expect("spec serializes").as_bytes(),
    )?;

    let cfg = RunConfig {
        seed: spec.seed,
        paths: Paths {
            transcripts: "transcripts.jsonl".into(),
            prices: "prices.csv".into(),
            embeddings: "embeddings.txt".into(),
            stop_words: None,
            output_dir: default_output_dir(),
        },
        preprocess: Preprocess {
            expected_dim: Some(spec.embedding_dim),
            ..Preprocess::default()
        },
        model: ModelSettings::default(),
        train: TrainSettings {
            epochs: 60,
            learning_rate: 3e-3,
            ..TrainSettings::default()
        },
        baseline: BaselineSettings::default(),
        gradcheck: GradCheckSettings::default(),
        diagnostics: Diagnostics {
            signal_tokens: spec
                .up_tokens
                .iter()
                .chain(&spec.down_tokens)
                .cloned()
                .collect(),
        },
        base_dir: dir.to_path_buf(),
    };
    write_output(dir, "config.toml", cfg.to_toml().as_bytes())?;
    Ok(cfg)
}

/// Writes `contents` to `dir/name`, creating `dir`.
pub fn write_output(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
