//! Corpus ingestion and sample preparation.
//!
//! Raw JSONL records are truncated to a token budget at a sentence
//! boundary, then split into a verbatim prefix and a suffix at the sentence
//! boundary nearest the token midpoint.

mod segment;
mod subset;
mod tokenize;

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Result, SmiError};

pub use segment::{ends_with_terminator, segment_sentences, ABBREVIATIONS};
pub use subset::{sample_subsets, CandidateSet, SetRole, SubsetPlan};
pub use tokenize::{TokenSequence, Tokenizer, WordTokenizer};

pub const DEFAULT_BUDGET: usize = 150;
pub const DEFAULT_MIN_SUFFIX_TOKENS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    Text,
    Vqa,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRound {
    pub question: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecordContent {
    Text(String),
    Vqa {
        image_ref: Option<String>,
        rounds: Vec<ChatRound>,
    },
}

/// One input record, either plain text or a visual question-answer chat.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub id: String,
    pub source: String,
    pub content: RecordContent,
}

impl RawRecord {
    pub fn text(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            source: String::new(),
            content: RecordContent::Text(text.into()),
        }
    }

    /// The text that gets truncated and split: the body in text mode, the
    /// first response in VQA mode.
    pub fn body(&self) -> Option<&str> {
        match &self.content {
            RecordContent::Text(t) => Some(t),
            RecordContent::Vqa { rounds, .. } => rounds.first().map(|r| r.response.as_str()),
        }
    }

    pub fn question(&self) -> Option<&str> {
        match &self.content {
            RecordContent::Vqa { rounds, .. } => rounds.first().map(|r| r.question.as_str()),
            RecordContent::Text(_) => None,
        }
    }

    pub fn image_ref(&self) -> Option<&str> {
        match &self.content {
            RecordContent::Vqa { image_ref, .. } => image_ref.as_deref(),
            RecordContent::Text(_) => None,
        }
    }
}

fn required_str(obj: &serde_json::Map<String, Value>, key: &str, line: usize) -> Result<String> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(SmiError::Schema {
            line,
            message: format!("field \"{key}\" must be a string"),
        }),
        None => Err(SmiError::Schema {
            line,
            message: format!("missing required field \"{key}\""),
        }),
    }
}

fn parse_record(line_no: usize, line: &str, mode: InputMode, source: &str) -> Result<RawRecord> {
    let value: Value = serde_json::from_str(line).map_err(|e| SmiError::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    let Value::Object(obj) = value else {
        return Err(SmiError::Schema {
            line: line_no,
            message: "expected a JSON object".into(),
        });
    };
    let id = required_str(&obj, "id", line_no)?;
    if id.is_empty() {
        return Err(SmiError::Schema {
            line: line_no,
            message: "field \"id\" is empty".into(),
        });
    }
    let content = match mode {
        InputMode::Text => RecordContent::Text(required_str(&obj, "text", line_no)?),
        InputMode::Vqa => {
            let image_ref = match obj.get("image_ref") {
                Some(Value::String(s)) => Some(s.clone()),
                Some(Value::Null) | None => None,
                Some(_) => {
                    return Err(SmiError::Schema {
                        line: line_no,
                        message: "field \"image_ref\" must be a string".into(),
                    })
                }
            };
            let rounds = obj.get("rounds").ok_or_else(|| SmiError::Schema {
                line: line_no,
                message: "missing required field \"rounds\"".into(),
            })?;
            let rounds: Vec<ChatRound> =
                serde_json::from_value(rounds.clone()).map_err(|e| SmiError::Schema {
                    line: line_no,
                    message: format!("invalid \"rounds\": {e}"),
                })?;
            RecordContent::Vqa { image_ref, rounds }
        }
    };
    Ok(RawRecord {
        id,
        source: source.to_string(),
        content,
    })
}

/// Reads records from a JSONL reader. Blank lines are skipped; line numbers
/// in errors are 1-based.
pub fn ingest_reader<R: BufRead>(
    reader: R,
    mode: InputMode,
    source: &str,
) -> Result<Vec<RawRecord>> {
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| SmiError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_record(line_no, &line, mode, source)?;
        if !seen.insert(record.id.clone()) {
            return Err(SmiError::Integrity(format!(
                "line {line_no}: duplicate id \"{}\"",
                record.id
            )));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn ingest_jsonl(path: &Path, mode: InputMode) -> Result<Vec<RawRecord>> {
    let file = File::open(path).map_err(|e| SmiError::io(path, e))?;
    let source = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ingest_reader(BufReader::new(file), mode, &source)
}

/// Keeps only the first question/response pair of a VQA record.
pub fn extract_first_round(record: &RawRecord) -> Result<RawRecord> {
    match &record.content {
        RecordContent::Vqa { image_ref, rounds } => {
            let first = rounds.first().ok_or_else(|| SmiError::Schema {
                line: 0,
                message: format!("record \"{}\" has no chat rounds", record.id),
            })?;
            Ok(RawRecord {
                id: record.id.clone(),
                source: record.source.clone(),
                content: RecordContent::Vqa {
                    image_ref: image_ref.clone(),
                    rounds: vec![first.clone()],
                },
            })
        }
        RecordContent::Text(_) => Err(SmiError::Schema {
            line: 0,
            message: format!("record \"{}\" is not a VQA record", record.id),
        }),
    }
}

/// Why a record was dropped during preparation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum DiscardReason {
    EmptyText,
    NoCompleteSentence {
        budget: usize,
    },
    TooFewSentences {
        sentences: usize,
    },
    SuffixTooShort {
        suffix_tokens: usize,
        minimum: usize,
    },
    NoRounds,
}

impl fmt::Display for DiscardReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiscardReason::EmptyText => write!(f, "empty text"),
            DiscardReason::NoCompleteSentence { budget } => {
                write!(f, "no complete sentence fits in {budget} tokens")
            }
            DiscardReason::TooFewSentences { sentences } => {
                write!(f, "{sentences} sentence(s); need at least 2")
            }
            DiscardReason::SuffixTooShort {
                suffix_tokens,
                minimum,
            } => write!(f, "suffix has {suffix_tokens} tokens; minimum is {minimum}"),
            DiscardReason::NoRounds => write!(f, "no chat rounds"),
        }
    }
}

/// Truncates `text` to at most `budget` tokens. If the cut lands inside a
/// sentence, that sentence is dropped whole. Trailing whitespace is
/// removed from the result.
pub fn truncate_to_budget(
    text: &str,
    budget: usize,
    tokenizer: &dyn Tokenizer,
) -> std::result::Result<String, DiscardReason> {
    if text.trim().is_empty() {
        return Err(DiscardReason::EmptyText);
    }
    let mut kept = String::new();
    let mut used = 0usize;
    for sentence in segment_sentences(text) {
        let n = tokenizer.count(&sentence);
        if used + n > budget {
            break;
        }
        used += n;
        kept.push_str(&sentence);
    }
    let kept = kept.trim_end();
    if kept.is_empty() {
        return Err(DiscardReason::NoCompleteSentence { budget });
    }
    Ok(kept.to_string())
}

/// A sample split into a verbatim prefix and a suffix to be paraphrased.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSample {
    pub id: String,
    pub prefix_text: String,
    pub suffix_text: String,
    /// 1-based index of the first suffix token.
    pub split_index: usize,
    pub prefix_token_count: usize,
    pub suffix_token_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paraphrased_suffix: Option<String>,
    /// Whitespace removed between prefix and suffix. Omitted from JSON when
    /// it is a single space.
    #[serde(
        default = "default_separator",
        skip_serializing_if = "is_default_separator"
    )]
    pub separator: String,
}

fn default_separator() -> String {
    " ".to_string()
}

fn is_default_separator(s: &String) -> bool {
    s == " "
}

impl SplitSample {
    /// The truncated sample as it was before splitting.
    pub fn original_text(&self) -> String {
        format!("{}{}{}", self.prefix_text, self.separator, self.suffix_text)
    }

    /// The sample with its suffix replaced by the paraphrase, if present.
    pub fn paraphrased_text(&self) -> Option<String> {
        self.paraphrased_suffix
            .as_ref()
            .map(|p| format!("{}{}{}", self.prefix_text, self.separator, p))
    }
}

/// Splits `text` at the sentence boundary whose prefix token count is
/// closest to half the total. Ties go to the smaller prefix.
pub fn split_half(
    id: &str,
    text: &str,
    tokenizer: &dyn Tokenizer,
    min_suffix_tokens: usize,
) -> std::result::Result<SplitSample, DiscardReason> {
    let sentences = segment_sentences(text);
    if sentences.len() < 2 {
        return Err(DiscardReason::TooFewSentences {
            sentences: sentences.len(),
        });
    }
    let counts: Vec<usize> = sentences.iter().map(|s| tokenizer.count(s)).collect();
    let total: usize = counts.iter().sum();

    // boundary j means the prefix holds sentences[..j]
    let mut best: Option<(usize, usize)> = None;
    let mut prefix = 0usize;
    for (j, &c) in counts.iter().enumerate().take(counts.len() - 1) {
        prefix += c;
        let dist = (2 * prefix).abs_diff(total);
        match best {
            Some((_, d)) if d <= dist => {}
            _ => best = Some((j + 1, dist)),
        }
    }
    let (boundary, _) = best.expect("at least two sentences");

    let joined_prefix: String = sentences[..boundary].concat();
    let prefix_text = joined_prefix.trim_end().to_string();
    let separator = joined_prefix[prefix_text.len()..].to_string();
    let suffix_text: String = sentences[boundary..].concat();

    let prefix_token_count = tokenizer.count(&prefix_text);
    let suffix_token_count = tokenizer.count(&suffix_text);
    if suffix_token_count < min_suffix_tokens {
        return Err(DiscardReason::SuffixTooShort {
            suffix_tokens: suffix_token_count,
            minimum: min_suffix_tokens,
        });
    }
    Ok(SplitSample {
        id: id.to_string(),
        prefix_text,
        suffix_text,
        split_index: prefix_token_count + 1,
        prefix_token_count,
        suffix_token_count,
        image_ref: None,
        question: None,
        paraphrased_suffix: None,
        separator,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct PrepareConfig {
    pub budget: usize,
    pub min_suffix_tokens: usize,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            min_suffix_tokens: DEFAULT_MIN_SUFFIX_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discard {
    pub id: String,
    #[serde(flatten)]
    pub reason: DiscardReason,
}

/// Truncates and splits one record, carrying VQA context over.
pub fn prepare_record(
    record: &RawRecord,
    cfg: &PrepareConfig,
    tokenizer: &dyn Tokenizer,
) -> std::result::Result<SplitSample, DiscardReason> {
    let record = match &record.content {
        RecordContent::Vqa { rounds, .. } if rounds.is_empty() => {
            return Err(DiscardReason::NoRounds)
        }
        RecordContent::Vqa { .. } => {
            extract_first_round(record).map_err(|_| DiscardReason::NoRounds)?
        }
        RecordContent::Text(_) => record.clone(),
    };
    let body = record.body().ok_or(DiscardReason::EmptyText)?;
    let truncated = truncate_to_budget(body, cfg.budget, tokenizer)?;
    let mut sample = split_half(&record.id, &truncated, tokenizer, cfg.min_suffix_tokens)?;
    sample.image_ref = record.image_ref().map(str::to_string);
    sample.question = record.question().map(str::to_string);
    Ok(sample)
}

/// Prepares every record. Kept samples and discards both preserve input order.
pub fn prepare_all(
    records: &[RawRecord],
    cfg: &PrepareConfig,
    tokenizer: &dyn Tokenizer,
) -> (Vec<SplitSample>, Vec<Discard>) {
    let mut kept = Vec::new();
    let mut discarded = Vec::new();
    for record in records {
        match prepare_record(record, cfg, tokenizer) {
            Ok(s) => kept.push(s),
            Err(reason) => {
                log::info!("discarding {}: {reason}", record.id);
                discarded.push(Discard {
                    id: record.id.clone(),
                    reason,
                });
            }
        }
    }
    (kept, discarded)
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| SmiError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n").map_err(|e| SmiError::io(path, e))?;
    }
    out.flush().map_err(|e| SmiError::io(path, e))
}

/// Reads one JSON object per line, failing on the first bad line.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| SmiError::io(path, e))?;
    let mut items = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| SmiError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| SmiError::Schema {
            line: idx + 1,
            message: e.to_string(),
        })?;
        items.push(item);
    }
    Ok(items)
}
