//! Running the yes/no probes against a backend.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde_json::json;

use super::{
    build_binary_prompt, cot_answer, expected_token_logprob, knowledge_label, normalize_answer,
    Backend, BackendConfig, BackendError, BoolPolarity, ChatMessage, ChatRequest, ChatResponse,
    ProbeCache, ProbeKind, ProbeRecord, ProbeStatus,
};
use crate::error::{Error, Result};
use crate::kg::Fact;

/// Outcome of probing a fact set.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRun {
    /// One record per fact, ordered by fact id.
    pub records: Vec<ProbeRecord>,
    /// Backend calls made, retries included. Zero on a fully warm cache.
    pub requests: usize,
    pub backend_errors: usize,
    pub unparsed: usize,
    /// More than a tenth of the records are backend errors.
    pub failed: bool,
}

fn cot_response_format() -> serde_json::Value {
    json!({
        "type": "json_schema",
        "json_schema": {
            "name": "binary_answer",
            "strict": true,
            "schema": {
                "type": "object",
                "properties": {
                    "reasoning": {"type": "string"},
                    "answer": {"type": "string", "enum": ["yes", "no"]}
                },
                "required": ["reasoning", "answer"],
                "additionalProperties": false
            }
        }
    })
}

fn make_request(prompt: &str, kind: ProbeKind, cfg: &BackendConfig) -> ChatRequest {
    let logits = kind == ProbeKind::BinaryLogits;
    let cot = cfg.cot && !logits;
    ChatRequest {
        model: cfg.model.clone(),
        messages: vec![ChatMessage::user(prompt)],
        temperature: Some(0.0),
        max_tokens: if cot { None } else { Some(8) },
        logprobs: logits.then_some(true),
        top_logprobs: logits.then_some(cfg.top_logprobs),
        response_format: cot.then(cot_response_format),
    }
}

fn call_with_retries(
    backend: &dyn Backend,
    request: &ChatRequest,
    cfg: &BackendConfig,
    calls: &AtomicUsize,
) -> std::result::Result<ChatResponse, BackendError> {
    let mut attempt = 0;
    loop {
        calls.fetch_add(1, Ordering::SeqCst);
        match backend.complete(request) {
            Ok(r) => return Ok(r),
            Err(BackendError::Transient(msg)) if attempt < cfg.max_retries => {
                let delay = cfg.backoff_ms.saturating_mul(1 << attempt.min(16));
                log::debug!("transient backend error, retry {}: {msg}", attempt + 1);
                thread::sleep(Duration::from_millis(delay));
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Probes every fact with a yes/no prompt (generation or token
/// log-probability). Each fact's True/False wording is fixed by its id and
/// `seed`. Identical prompts are sent once; cached responses are reused and
/// new ones appended to the cache.
pub fn run_probe(
    facts: &[Fact],
    kind: ProbeKind,
    backend: &dyn Backend,
    cfg: &BackendConfig,
    cache: &ProbeCache,
    seed: u64,
) -> Result<ProbeRun> {
    cfg.validate()?;
    if !kind.queries_backend() {
        return Err(Error::Invalid(format!(
            "{kind} is ingested from files, not probed through a backend"
        )));
    }
    if kind == ProbeKind::BinaryLogits && !backend.supports_logprobs() {
        return Err(Error::Backend(
            "backend does not report token log-probabilities".into(),
        ));
    }
    let cot = cfg.cot && kind == ProbeKind::BinaryGeneration;

    let jobs: Vec<(BoolPolarity, String)> = facts
        .iter()
        .map(|f| {
            let pol = BoolPolarity::for_fact(&f.id, seed);
            (pol, build_binary_prompt(&f.text, pol, cot))
        })
        .collect();

    let mut pending: Vec<&str> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (_, prompt) in &jobs {
        if seen.insert(prompt.as_str()) && cache.get(&cfg.model, kind, prompt).is_none() {
            pending.push(prompt);
        }
    }

    let calls = AtomicUsize::new(0);
    let next = AtomicUsize::new(0);
    let failures: Mutex<HashMap<&str, String>> = Mutex::new(HashMap::new());
    let cache_error: Mutex<Option<Error>> = Mutex::new(None);
    let workers = cfg.max_parallel.min(pending.len());
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&prompt) = pending.get(i) else { break };
                let request = make_request(prompt, kind, cfg);
                match call_with_retries(backend, &request, cfg, &calls) {
                    Ok(resp) => {
                        if let Err(e) = cache.put(&cfg.model, kind, prompt, &resp) {
                            cache_error.lock().unwrap().get_or_insert(e);
                            break;
                        }
                    }
                    Err(e) => {
                        failures.lock().unwrap().insert(prompt, e.to_string());
                    }
                }
            });
        }
    });
    if let Some(e) = cache_error.into_inner().unwrap() {
        return Err(e);
    }
    let failures = failures.into_inner().unwrap();

    let mut records = BTreeMap::new();
    for (fact, (pol, prompt)) in facts.iter().zip(&jobs) {
        let mut record = ProbeRecord {
            fact_id: fact.id.clone(),
            kind,
            polarity: Some(*pol),
            prompt: prompt.clone(),
            raw: String::new(),
            label: None,
            score: None,
            status: ProbeStatus::BackendError,
        };
        if let Some(resp) = cache.get(&cfg.model, kind, prompt) {
            record.raw = resp.content().to_string();
            match kind {
                ProbeKind::BinaryLogits => {
                    record.score =
                        expected_token_logprob(&resp, pol.expected_token(), cfg.logit_floor);
                }
                _ => {
                    let answer = if cot {
                        cot_answer(&record.raw)
                    } else {
                        normalize_answer(&record.raw)
                    };
                    record.label = answer.map(|a| knowledge_label(a, *pol, fact.polarity));
                }
            }
            record.status = if record.label.is_some() || record.score.is_some() {
                ProbeStatus::Ok
            } else {
                ProbeStatus::Unparsed
            };
        } else if let Some(msg) = failures.get(prompt.as_str()) {
            record.raw = msg.clone();
        }
        records.insert(fact.id.clone(), record);
    }

    let records: Vec<ProbeRecord> = records.into_values().collect();
    let count = |s| records.iter().filter(|r| r.status == s).count();
    let backend_errors = count(ProbeStatus::BackendError);
    let unparsed = count(ProbeStatus::Unparsed);
    let failed = backend_errors * 10 > records.len();
    if failed {
        log::error!(
            "{backend_errors} of {} probes failed at the backend",
            records.len()
        );
    }
    Ok(ProbeRun {
        records,
        requests: calls.into_inner(),
        backend_errors,
        unparsed,
        failed,
    })
}
