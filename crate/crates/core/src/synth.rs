//! Planted-signal corpora for end-to-end checks.
//!
//! Every transcript gets a latent label. A handful of its answer sentences each carry
//! one signal token: with probability `signal_strength` from the list matching the
//! label, otherwise from a list picked by a fair coin. The close after the call moves
//! in the latent direction, so the movement label equals the latent label.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    ComponentKind, RawTranscript, Sector, StopWords, TranscriptComponent, NUM_SECTORS,
};
use crate::error::{Error, Result};
use crate::labels::PriceSeries;
use crate::model::ModelRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_companies: usize,
    pub transcripts_per_company: usize,
    /// Inclusive range of answer sentences per transcript.
    pub sentences_per_answer: [usize; 2],
    /// Inclusive range; the count drawn is always odd.
    pub signal_sentences: [usize; 2],
    pub up_tokens: Vec<String>,
    pub down_tokens: Vec<String>,
    pub signal_strength: f64,
    /// Daily moves are `close · (1 ± δ)` with `δ ~ U[min_move, price_noise]`.
    pub price_noise: f64,
    pub min_move: f64,
    pub filler_words: usize,
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let words = |ws: &[&str]| ws.iter().map(|w| w.to_string()).collect();
        SyntheticSpec {
            n_companies: 100,
            transcripts_per_company: 10,
            sentences_per_answer: [20, 40],
            signal_sentences: [5, 7],
            up_tokens: words(&["outperformed", "accelerating", "exceeded", "tailwinds"]),
            down_tokens: words(&["headwinds", "shortfall", "impairment", "deteriorated"]),
            signal_strength: 0.9,
            price_noise: 0.02,
            min_move: 0.001,
            filler_words: 300,
            embedding_dim: 8,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn from_toml(text: &str, source_name: &str) -> Result<Self> {
        let spec: SyntheticSpec = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::parse(source_name, line, e.message().to_string())
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::validation(format!("synthetic spec: {m}")));
        if self.n_companies == 0 || self.transcripts_per_company == 0 {
            return fail("needs at least one company and one transcript per company");
        }
        let [smin, smax] = self.sentences_per_answer;
        let [gmin, gmax] = self.signal_sentences;
        if smin == 0 || smin > smax {
            return fail("sentences_per_answer must be a non-empty positive range");
        }
        if gmin > gmax || !(gmin..=gmax).any(|n| n % 2 == 1) {
            return fail("signal_sentences must contain an odd count");
        }
        if gmax > smin {
            return fail("signal_sentences cannot exceed the answer length");
        }
        if self.up_tokens.is_empty() || self.down_tokens.is_empty() {
            return fail("signal token lists must be non-empty");
        }
        let up: BTreeSet<_> = self.up_tokens.iter().collect();
        if self.down_tokens.iter().any(|t| up.contains(t)) {
            return fail("up and down token lists must be disjoint");
        }
        let stop = StopWords::default();
        for t in self.up_tokens.iter().chain(&self.down_tokens) {
            let lowered = t.to_lowercase();
            if *t != lowered || !t.chars().all(|c| c.is_ascii_alphabetic()) || stop.contains(t) {
                return fail("signal tokens must be lowercase alphabetic non-stop words");
            }
        }
        if !(0.0..=1.0).contains(&self.signal_strength) {
            return fail("signal_strength must lie in [0, 1]");
        }
        if !(self.min_move > 0.0 && self.min_move <= self.price_noise && self.price_noise < 0.5) {
            return fail("need 0 < min_move <= price_noise < 0.5");
        }
        if self.filler_words < 10 {
            return fail("filler_words must be at least 10");
        }
        if self.embedding_dim < 3 {
            return fail("embedding_dim must be at least 3");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub transcripts: Vec<RawTranscript>,
    /// Latent label per transcript, same order.
    pub latent: Vec<bool>,
    pub prices: BTreeMap<String, PriceSeries>,
    /// GloVe-format text.
    pub embeddings: String,
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

fn filler_pool(spec: &SyntheticSpec, rng: &mut ModelRng) -> Vec<String> {
    let stop = StopWords::default();
    let signal: BTreeSet<&String> = spec.up_tokens.iter().chain(&spec.down_tokens).collect();
    let mut seen = BTreeSet::new();
    let mut pool = Vec::with_capacity(spec.filler_words);
    while pool.len() < spec.filler_words {
        let syllables = rng.random_range(2..=3);
        let word: String = (0..syllables)
            .flat_map(|_| {
                [
                    *CONSONANTS.choose(rng).unwrap() as char,
                    *VOWELS.choose(rng).unwrap() as char,
                ]
            })
            .collect();
        if !stop.contains(&word) && !signal.contains(&word) && seen.insert(word.clone()) {
            pool.push(word);
        }
    }
    pool
}

fn sentence(words: Vec<&str>, end: char) -> String {
    let mut s = words.join(" ");
    if let Some(first) = s.get(..1) {
        let upper = first.to_uppercase();
        s.replace_range(..1, &upper);
    }
    s.push(end);
    s
}

fn filler_sentence<'a, R: Rng>(pool: &'a [String], rng: &mut R) -> Vec<&'a str> {
    let n = rng.random_range(6..=12);
    (0..n).map(|_| pool.choose(rng).unwrap().as_str()).collect()
}

fn business_days(start: NaiveDate) -> impl Iterator<Item = NaiveDate> {
    start
        .iter_days()
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ModelRng::seed_from_u64(spec.seed);
    let pool = filler_pool(spec, &mut rng);
    let start = NaiveDate::from_ymd_opt(2010, 1, 4).expect("valid date");
    let odd_counts: Vec<usize> = (spec.signal_sentences[0]..=spec.signal_sentences[1])
        .filter(|n| n % 2 == 1)
        .collect();

    let mut transcripts = Vec::new();
    let mut latent = Vec::new();
    let mut prices = BTreeMap::new();
    for c in 0..spec.n_companies {
        let company_id = format!("c{c:04}");
        let ticker = format!("SYN{c:04}");
        let sector = Sector::new(rng.random_range(0..NUM_SECTORS as i64))?;

        // Trading-day indices of the calls: 60+ observations of history, then quarterly.
        let mut call_idx = Vec::with_capacity(spec.transcripts_per_company);
        let mut idx = 70 + rng.random_range(0..10);
        for _ in 0..spec.transcripts_per_company {
            call_idx.push(idx);
            idx += rng.random_range(60..=66);
        }
        let n_days = call_idx.last().unwrap() + 5;
        let days: Vec<NaiveDate> = business_days(start).take(n_days).collect();

        let labels: Vec<bool> = call_idx.iter().map(|_| rng.random()).collect();
        let mut moves = vec![None; n_days];
        for (&i, &y) in call_idx.iter().zip(&labels) {
            moves[i + 1] = Some(y);
        }
        let mut close: f64 = rng.random_range(20.0..200.0);
        let mut obs = Vec::with_capacity(n_days);
        for (t, &day) in days.iter().enumerate() {
            if t > 0 {
                let up = moves[t].unwrap_or_else(|| rng.random());
                let delta = rng.random_range(spec.min_move..=spec.price_noise);
                close *= if up { 1.0 + delta } else { 1.0 - delta };
            }
            obs.push((day, close));
        }
        prices.insert(ticker.clone(), PriceSeries::new(ticker.clone(), obs)?);

        for (&i, &y) in call_idx.iter().zip(&labels) {
            let components = transcript_components(spec, &pool, y, &odd_counts, &mut rng);
            transcripts.push(RawTranscript {
                company_id: company_id.clone(),
                ticker: ticker.clone(),
                call_date: days[i],
                sector,
                components,
            });
            latent.push(y);
        }
    }

    let embeddings = embedding_text(spec, &pool, &mut rng);
    Ok(SyntheticCorpus {
        transcripts,
        latent,
        prices,
        embeddings,
    })
}

fn transcript_components(
    spec: &SyntheticSpec,
    pool: &[String],
    label: bool,
    odd_counts: &[usize],
    rng: &mut ModelRng,
) -> Vec<TranscriptComponent> {
    let n = rng.random_range(spec.sentences_per_answer[0]..=spec.sentences_per_answer[1]);
    let n_signal = *odd_counts.choose(rng).unwrap();
    let signal_at: BTreeSet<usize> = rand::seq::index::sample(rng, n, n_signal)
        .into_iter()
        .collect();

    let mut answers = Vec::with_capacity(n);
    for s in 0..n {
        let mut words = filler_sentence(pool, rng);
        if signal_at.contains(&s) {
            let up = if rng.random_bool(spec.signal_strength) {
                label
            } else {
                rng.random()
            };
            let list = if up {
                &spec.up_tokens
            } else {
                &spec.down_tokens
            };
            let pos = rng.random_range(0..=words.len());
            words.insert(pos, list.choose(rng).unwrap());
        }
        answers.push(sentence(words, '.'));
    }

    let mut kinds_texts = vec![
        (
            ComponentKind::PresentationOperatorMessage,
            "Good day and welcome to the call.".to_string(),
        ),
        (
            ComponentKind::PresentationSection,
            (0..4)
                .map(|_| sentence(filler_sentence(pool, rng), '.'))
                .collect::<Vec<_>>()
                .join(" "),
        ),
    ];
    let mut rest = answers.as_slice();
    while !rest.is_empty() {
        let take = rng.random_range(3..=8).min(rest.len());
        kinds_texts.push((
            ComponentKind::Question,
            sentence(filler_sentence(pool, rng), '?'),
        ));
        kinds_texts.push((ComponentKind::Answer, rest[..take].join(" ")));
        rest = &rest[take..];
    }
    kinds_texts
        .into_iter()
        .enumerate()
        .map(|(order_index, (kind, text))| TranscriptComponent {
            kind,
            text,
            order_index,
        })
        .collect()
}

/// Up tokens are large on coordinate 0, down tokens on coordinate 1, filler words are
/// noise that stays near zero on both.
fn embedding_text(spec: &SyntheticSpec, pool: &[String], rng: &mut ModelRng) -> String {
    let d = spec.embedding_dim;
    let noise = Normal::new(0.0, 1.0).expect("valid normal");
    let mut out = String::new();
    let mut line = |word: &str, hot: Option<usize>, rng: &mut ModelRng| {
        let v: Vec<f64> = (0..d)
            .map(|j| match (j, hot) {
                (j, Some(h)) if j == h => rng.random_range(2.5..3.5),
                (0 | 1, _) => 0.1 * noise.sample(rng),
                _ => noise.sample(rng),
            })
            .collect();
        let _ = write!(out, "{word}");
        for x in v {
            let _ = write!(out, " {x:.6}");
        }
        out.push('\n');
    };
    for w in &spec.up_tokens {
        line(w, Some(0), rng);
    }
    for w in &spec.down_tokens {
        line(w, Some(1), rng);
    }
    for w in pool {
        line(w, None, rng);
    }
    for extra in ["revenue", "guidance", "margin", "quarter"] {
        line(extra, None, rng);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenized_sentences, write_transcripts};
    use crate::labels::movement_label;

    fn small(strength: f64, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_companies: 6,
            transcripts_per_company: 4,
            signal_strength: strength,
            seed,
            ..SyntheticSpec::default()
        }
    }

    fn signal_counts(spec: &SyntheticSpec, t: &RawTranscript) -> (usize, usize) {
        let stop = StopWords::default();
        let toks: Vec<String> = tokenized_sentences(t, ComponentKind::Answer, &stop)
            .into_iter()
            .flatten()
            .collect();
        let count = |list: &[String]| toks.iter().filter(|w| list.contains(w)).count();
        (count(&spec.up_tokens), count(&spec.down_tokens))
    }

    #[test]
    fn full_strength_is_clean() {
        let spec = small(1.0, 3);
        let corpus = generate(&spec).unwrap();
        for (t, &y) in corpus.transcripts.iter().zip(&corpus.latent) {
            let (up, down) = signal_counts(&spec, t);
            if y {
                assert!(up >= 1 && down == 0);
            } else {
                assert!(down >= 1 && up == 0);
            }
        }
    }

    #[test]
    fn prices_encode_latent_label() {
        let corpus = generate(&small(0.5, 4)).unwrap();
        for (t, &y) in corpus.transcripts.iter().zip(&corpus.latent) {
            let series = &corpus.prices[&t.ticker];
            let m = movement_label(series, t.call_date).unwrap();
            assert_eq!(m.up, y);
            assert_eq!(m.day, t.call_date);
            assert!(series.index_of(t.call_date).unwrap() >= 60);
        }
    }

    #[test]
    fn answer_lengths_in_range() {
        let spec = small(0.9, 5);
        let corpus = generate(&spec).unwrap();
        let stop = StopWords::default();
        for t in &corpus.transcripts {
            let n = tokenized_sentences(t, ComponentKind::Answer, &stop).len();
            assert!((20..=40).contains(&n), "{n}");
        }
    }

    #[test]
    fn deterministic_bytes() {
        let a = generate(&small(0.9, 11)).unwrap();
        let b = generate(&small(0.9, 11)).unwrap();
        let bytes = |c: &SyntheticCorpus| {
            let mut v = Vec::new();
            write_transcripts(&mut v, &c.transcripts).unwrap();
            v
        };
        assert_eq!(bytes(&a), bytes(&b));
        assert_eq!(a.embeddings, b.embeddings);
        assert_eq!(a.prices, b.prices);
        assert_ne!(bytes(&a), bytes(&generate(&small(0.9, 12)).unwrap()));
    }

    #[test]
    fn toml_spec() {
        let s = SyntheticSpec::from_toml("n_companies = 3\nsignal_strength = 0.0\n", "s").unwrap();
        assert_eq!(s.n_companies, 3);
        assert_eq!(s.transcripts_per_company, 10);
        assert!(matches!(
            SyntheticSpec::from_toml("n_companies = \"x\"", "s"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            SyntheticSpec::from_toml("n_companies = 0", "s"),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn invalid_specs() {
        let bad = [
            SyntheticSpec {
                n_companies: 0,
                ..SyntheticSpec::default()
            },
            SyntheticSpec {
                signal_strength: 1.5,
                ..SyntheticSpec::default()
            },
            SyntheticSpec {
                down_tokens: vec!["exceeded".into()],
                ..SyntheticSpec::default()
            },
            SyntheticSpec {
                signal_sentences: [4, 4],
                ..SyntheticSpec::default()
            },
            SyntheticSpec {
                up_tokens: vec!["up".into()],
                ..SyntheticSpec::default()
            },
        ];
        for s in bad {
            assert!(generate(&s).is_err(), "{s:?}");
        }
    }
}
