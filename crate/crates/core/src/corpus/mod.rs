//! Transcript ingestion and answer-sequence preparation.

mod text;
mod vocab;

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use text::{split_sentences, tokenize, StopWords, DEFAULT_STOP_WORDS};
pub use vocab::{build_vocabulary, TokenId, Vocabulary, DEFAULT_MIN_FREQUENCY};

pub const DEFAULT_MAX_SENTENCES: usize = 300;
pub const DEFAULT_MIN_SENTENCES: usize = 10;

/// Number of top-level GICS sectors.
pub const NUM_SECTORS: usize = 11;

/// GICS sector id in `0..11`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct Sector(u8);

impl Sector {
    pub fn new(id: i64) -> Result<Self> {
        if (0..NUM_SECTORS as i64).contains(&id) {
            Ok(Sector(id as u8))
        } else {
            Err(Error::validation(format!(
                "sector {id} out of range 0..{}",
                NUM_SECTORS - 1
            )))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = Sector> {
        (0..NUM_SECTORS as u8).map(Sector)
    }
}

impl TryFrom<i64> for Sector {
    type Error = Error;
    fn try_from(id: i64) -> Result<Self> {
        Sector::new(id)
    }
}

impl From<Sector> for u8 {
    fn from(s: Sector) -> u8 {
        s.0
    }
}

impl fmt::Display for Sector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    #[serde(rename = "presentation_operator_message")]
    PresentationOperatorMessage,
    #[serde(rename = "presentation")]
    PresentationSection,
    Question,
    Answer,
}

impl ComponentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ComponentKind::PresentationOperatorMessage => "presentation_operator_message",
            ComponentKind::PresentationSection => "presentation",
            ComponentKind::Question => "question",
            ComponentKind::Answer => "answer",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "presentation_operator_message" => ComponentKind::PresentationOperatorMessage,
            "presentation" => ComponentKind::PresentationSection,
            "question" => ComponentKind::Question,
            "answer" => ComponentKind::Answer,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptComponent {
    pub kind: ComponentKind,
    pub text: String,
    pub order_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTranscript {
    pub company_id: String,
    pub ticker: String,
    pub call_date: NaiveDate,
    pub sector: Sector,
    pub components: Vec<TranscriptComponent>,
}

#[derive(Serialize, Deserialize)]
struct JsonComponent {
    kind: String,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct JsonTranscript {
    company_id: String,
    ticker: String,
    call_date: String,
    sector: i64,
    components: Vec<JsonComponent>,
}

impl From<&RawTranscript> for JsonTranscript {
    fn from(t: &RawTranscript) -> Self {
        JsonTranscript {
            company_id: t.company_id.clone(),
            ticker: t.ticker.clone(),
            call_date: t.call_date.format("%Y-%m-%d").to_string(),
            sector: t.sector.index() as i64,
            components: t
                .components
                .iter()
                .map(|c| JsonComponent {
                    kind: c.kind.as_str().to_string(),
                    text: c.text.clone(),
                })
                .collect(),
        }
    }
}

/// Writes transcripts as JSONL in the format [`parse_transcripts`] reads.
pub fn write_transcripts<W: Write>(
    mut out: W,
    transcripts: &[RawTranscript],
) -> std::io::Result<()> {
    for t in transcripts {
        serde_json::to_writer(&mut out, &JsonTranscript::from(t))?;
        writeln!(out)?;
    }
    Ok(())
}

/// Parses transcript JSONL, one transcript per non-blank line.
pub fn parse_transcripts<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<RawTranscript>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: JsonTranscript = serde_json::from_str(&line)
            .map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
        let call_date = NaiveDate::parse_from_str(&raw.call_date, "%Y-%m-%d").map_err(|e| {
            Error::parse(
                source_name,
                lineno,
                format!("call_date {:?}: {e}", raw.call_date),
            )
        })?;
        let sector = Sector::new(raw.sector)
            .map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
        let components = raw
            .components
            .into_iter()
            .enumerate()
            .map(|(order_index, c)| {
                let kind = ComponentKind::parse(&c.kind).ok_or_else(|| {
                    Error::parse(
                        source_name,
                        lineno,
                        format!("unknown component kind {:?}", c.kind),
                    )
                })?;
                Ok(TranscriptComponent {
                    kind,
                    text: c.text,
                    order_index,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(RawTranscript {
            company_id: raw.company_id,
            ticker: raw.ticker,
            call_date,
            sector,
            components,
        });
    }
    Ok(out)
}

pub fn parse_transcript_file(path: &Path) -> Result<Vec<RawTranscript>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_transcripts(BufReader::new(file), &path.display().to_string())
}

/// Texts of the components of `kind`, in transcript order.
pub fn extract_component_text(transcript: &RawTranscript, kind: ComponentKind) -> Vec<&str> {
    transcript
        .components
        .iter()
        .filter(|c| c.kind == kind)
        .map(|c| c.text.as_str())
        .collect()
}

/// Sentences of the selected components, tokenized; sentences left empty are dropped.
/// Sentences never span component boundaries.
pub fn tokenized_sentences(
    transcript: &RawTranscript,
    kind: ComponentKind,
    stop_words: &StopWords,
) -> Vec<Vec<String>> {
    extract_component_text(transcript, kind)
        .into_iter()
        .flat_map(split_sentences)
        .map(|s| tokenize(&s, stop_words))
        .filter(|tokens| !tokens.is_empty())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceLimits {
    pub max_sentences: usize,
    pub min_sentences: usize,
}

impl Default for SequenceLimits {
    fn default() -> Self {
        SequenceLimits {
            max_sentences: DEFAULT_MAX_SENTENCES,
            min_sentences: DEFAULT_MIN_SENTENCES,
        }
    }
}

/// Token-id sentences of one transcript, truncated to the first `max_sentences`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerSequence {
    pub company_id: String,
    pub call_date: NaiveDate,
    pub sentences: Vec<Vec<TokenId>>,
    /// Non-empty sentences before truncation.
    pub original_sentence_count: usize,
}

impl AnswerSequence {
    pub fn token_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.sentences.iter().flatten().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SkipReason {
    TooShort { sentences: usize, required: usize },
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkipReason::TooShort {
                sentences,
                required,
            } => write!(f, "too short: {sentences} sentences, need {required}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Prepared {
    Ready(AnswerSequence),
    Skipped(SkipReason),
}

impl Prepared {
    pub fn ready(self) -> Option<AnswerSequence> {
        match self {
            Prepared::Ready(seq) => Some(seq),
            Prepared::Skipped(_) => None,
        }
    }
}

/// Maps the selected component text onto vocabulary ids.
///
/// Sentences that lose every token to stop-word or out-of-vocabulary filtering are
/// dropped before the length floor is applied. Padding is not materialized.
pub fn prepare_answer_sequence(
    transcript: &RawTranscript,
    vocab: &Vocabulary,
    limits: SequenceLimits,
    kind: ComponentKind,
) -> Prepared {
    let sentences: Vec<Vec<TokenId>> = tokenized_sentences(transcript, kind, vocab.stop_words())
        .into_iter()
        .map(|tokens| {
            tokens
                .iter()
                .filter_map(|t| vocab.id(t))
                .collect::<Vec<_>>()
        })
        .filter(|ids| !ids.is_empty())
        .collect();
    sequence_from_ids(transcript, sentences, limits)
}

pub(crate) fn sequence_from_ids(
    transcript: &RawTranscript,
    mut sentences: Vec<Vec<TokenId>>,
    limits: SequenceLimits,
) -> Prepared {
    let original = sentences.len();
    if original < limits.min_sentences.max(1) {
        return Prepared::Skipped(SkipReason::TooShort {
            sentences: original,
            required: limits.min_sentences,
        });
    }
    sentences.truncate(limits.max_sentences);
    Prepared::Ready(AnswerSequence {
        company_id: transcript.company_id.clone(),
        call_date: transcript.call_date,
        sentences,
        original_sentence_count: original,
    })
}
