//! Probing an LLM for what it knows about individual facts.
//!
//! Four probes are supported: yes/no generation, the log-probability of the
//! expected yes/no token, a linear probe over hidden activations, and
//! labelled atomic facts from long-form generation. The first two query a
//! chat-completions backend; the last two ingest files.

mod backend;
mod cache;
mod ingest;
mod run;

pub use backend::{
    Backend, BackendError, ChatMessage, ChatRequest, ChatResponse, Choice, ChoiceLogprobs,
    HttpBackend, MockBackend, MockBehavior, TokenLogprob, TopLogprob,
};
pub use cache::ProbeCache;
pub use ingest::{
    activation_probe_scores, ingest_activations, ingest_factscore, ActivationProbeConfig,
    ActivationScores, FactScoreLabel,
};
pub use run::{run_probe, ProbeRun};

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::hash64;
use crate::kg::Polarity;

pub const PROBES_FORMAT: &str = "peekprobes";

/// Instruction line of the binary prompt.
pub const BINARY_INSTRUCTION: &str = "You are only supposed to respond in yes/no.";
/// Chain-of-thought cue appended when reasoning is enabled.
pub const COT_INSTRUCTION: &str = "Think step-by-step.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeKind {
    BinaryGeneration,
    BinaryLogits,
    ActivationPrediction,
    FactGeneration,
}

impl ProbeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProbeKind::BinaryGeneration => "binary-generation",
            ProbeKind::BinaryLogits => "binary-logits",
            ProbeKind::ActivationPrediction => "activation-prediction",
            ProbeKind::FactGeneration => "fact-generation",
        }
    }

    /// Whether the probe yields 0/1 labels (as opposed to real scores).
    pub fn is_binary(self) -> bool {
        matches!(self, ProbeKind::BinaryGeneration | ProbeKind::FactGeneration)
    }

    /// Whether the probe sends prompts to a chat backend.
    pub fn queries_backend(self) -> bool {
        matches!(self, ProbeKind::BinaryGeneration | ProbeKind::BinaryLogits)
    }
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The word placed in "Is the following statement <bool>?".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoolPolarity {
    True,
    False,
}

impl BoolPolarity {
    pub fn as_str(self) -> &'static str {
        match self {
            BoolPolarity::True => "True",
            BoolPolarity::False => "False",
        }
    }

    /// Polarity for a fact under a run seed. Derived from a hash of both,
    /// so it does not depend on probing order and is the same for every
    /// probe kind in the run.
    pub fn for_fact(fact_id: &str, seed: u64) -> Self {
        let mut key = seed.to_le_bytes().to_vec();
        key.extend_from_slice(fact_id.as_bytes());
        if hash64(&key) & 1 == 1 {
            BoolPolarity::True
        } else {
            BoolPolarity::False
        }
    }

    /// Token whose probability signals that the model knows the fact.
    pub fn expected_token(self) -> &'static str {
        match self {
            BoolPolarity::True => "yes",
            BoolPolarity::False => "no",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeStatus {
    Ok,
    Unparsed,
    BackendError,
}

/// One probe outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub fact_id: String,
    pub kind: ProbeKind,
    #[serde(rename = "bool")]
    pub polarity: Option<BoolPolarity>,
    pub prompt: String,
    pub raw: String,
    pub label: Option<u8>,
    pub score: Option<f64>,
    pub status: ProbeStatus,
}

/// Connection and run settings for a chat-completions backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub max_retries: u32,
    pub timeout_secs: u64,
    pub max_parallel: usize,
    pub cot: bool,
    pub cache_path: Option<PathBuf>,
    /// Whether the backend reports token log-probabilities.
    pub logprobs: bool,
    pub top_logprobs: u8,
    /// Score used when the expected token is not among the candidates.
    pub logit_floor: f64,
    /// First retry delay; doubles on every further attempt.
    pub backoff_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o-mini".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            max_retries: 3,
            timeout_secs: 60,
            max_parallel: 8,
            cot: false,
            cache_path: None,
            logprobs: true,
            top_logprobs: 20,
            logit_floor: -20.0,
            backoff_ms: 500,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_parallel == 0 {
            return Err(Error::Invalid("max_parallel must be at least 1".into()));
        }
        if self.model.is_empty() {
            return Err(Error::Invalid("backend model name is empty".into()));
        }
        Ok(())
    }
}

/// The yes/no prompt for a fact.
pub fn build_binary_prompt(fact_text: &str, polarity: BoolPolarity, cot: bool) -> String {
    let mut prompt = format!(
        "{BINARY_INSTRUCTION}\nIs the following statement {}?\nSTATEMENT: {fact_text}\nANSWER:",
        polarity.as_str()
    );
    if cot {
        prompt.push('\n');
        prompt.push_str(COT_INSTRUCTION);
    }
    prompt
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Answer {
    Yes,
    No,
}

fn token_answer(token: &str) -> Option<Answer> {
    let token = token
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    match token.as_str() {
        "yes" => Some(Answer::Yes),
        "no" => Some(Answer::No),
        _ => None,
    }
}

/// First whitespace-separated token of `raw`, lowercased and stripped of
/// surrounding punctuation, read as yes/no.
pub fn normalize_answer(raw: &str) -> Option<Answer> {
    raw.split_whitespace().next().and_then(token_answer)
}

/// Reads a chain-of-thought reply: the `answer` field of a structured JSON
/// object when present, else the last yes/no token in the text.
pub fn cot_answer(raw: &str) -> Option<Answer> {
    if let Ok(serde_json::Value::Object(obj)) = serde_json::from_str(raw.trim()) {
        if let Some(answer) = obj.get("answer").and_then(|a| a.as_str()) {
            return normalize_answer(answer);
        }
    }
    raw.split_whitespace().rev().find_map(token_answer)
}

/// Whether the answer shows the model knows the fact: for a true fact the
/// answer must agree with the asked polarity; for a corrupted fact it must
/// disagree.
pub fn knowledge_label(answer: Answer, polarity: BoolPolarity, fact: Polarity) -> u8 {
    let affirms = matches!(
        (answer, polarity),
        (Answer::Yes, BoolPolarity::True) | (Answer::No, BoolPolarity::False)
    );
    match fact {
        Polarity::Positive => u8::from(affirms),
        Polarity::Negative => u8::from(!affirms),
    }
}

/// Label for a plain (non-reasoning) reply; `None` means unparsed.
pub fn parse_binary_response(raw: &str, polarity: BoolPolarity, fact: Polarity) -> Option<u8> {
    normalize_answer(raw).map(|a| knowledge_label(a, polarity, fact))
}

/// Log-probability of `expected` at the first non-whitespace generated
/// position, matched case-insensitively over the reported candidates.
///
/// Returns `floor` when the token is not among the candidates, and `None`
/// when the response carries no log-probabilities at all.
pub fn expected_token_logprob(response: &ChatResponse, expected: &str, floor: f64) -> Option<f64> {
    let positions = response.choices.first()?.logprobs.as_ref()?.content.as_ref()?;
    let position = positions.iter().find(|p| !p.token.trim().is_empty())?;
    let matches = |tok: &str| tok.trim().eq_ignore_ascii_case(expected);
    let best = position
        .top_logprobs
        .iter()
        .map(|c| (c.token.as_str(), c.logprob))
        .chain(std::iter::once((position.token.as_str(), position.logprob)))
        .filter(|(tok, _)| matches(tok))
        .map(|(_, lp)| lp)
        .fold(None, |acc: Option<f64>, lp| Some(acc.map_or(lp, |a| a.max(lp))));
    Some(best.unwrap_or(floor))
}

#[derive(Serialize, Deserialize)]
struct ProbesHeader {
    format: String,
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

pub fn write_probe_records(
    path: impl AsRef<Path>,
    records: &[ProbeRecord],
    config_hash: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    if let Some(hash) = config_hash {
        let header = ProbesHeader {
            format: PROBES_FORMAT.into(),
            version: 1,
            config_hash: Some(hash.into()),
        };
        writeln!(w, "{}", serde_json::to_string(&header)?).map_err(io)?;
    }
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r)?).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_probe_records(path: impl AsRef<Path>) -> Result<Vec<ProbeRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if idx == 0 && serde_json::from_str::<ProbesHeader>(line).is_ok() {
            continue;
        }
        out.push(
            serde_json::from_str(line).map_err(|e| Error::parse(path, idx + 1, e.to_string()))?,
        );
    }
    Ok(out)
}
