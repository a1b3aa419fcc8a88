//! File-based probes: hidden-activation vectors and labelled atomic facts.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::embedding::{load_vectors, EmbeddingStore};
use crate::error::{Error, Result};
use crate::head::{self, LossKind, Target, TrainConfig, WeightInit};
use crate::kg::{Fact, Polarity, Triple};

/// Loads activation vectors and checks they cover exactly the given facts.
pub fn ingest_activations(path: impl AsRef<Path>, facts: &[Fact]) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let store = load_vectors(path)?;
    let known: HashSet<&str> = facts.iter().map(|f| f.id.as_str()).collect();
    if let Some((record, (id, _))) = store
        .iter()
        .enumerate()
        .find(|(_, (id, _))| !known.contains(id))
    {
        return Err(Error::UnknownId(format!(
            "{}: record {record} has unknown fact id `{id}`",
            path.display()
        )));
    }
    store
        .coverage_check(facts.iter().map(|f| f.id.as_str()))
        .into_result()?;
    Ok(store)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationProbeConfig {
    pub epochs: usize,
    /// Share of facts the probe is trained on.
    pub train_fraction: f64,
    pub learning_rate: f64,
    pub batch_size: Option<usize>,
}

impl Default for ActivationProbeConfig {
    fn default() -> Self {
        ActivationProbeConfig {
            epochs: 10,
            train_fraction: 0.8,
            learning_rate: 1e-2,
            batch_size: Some(32),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationScores {
    /// Pre-sigmoid logit for every fact.
    pub scores: HashMap<String, f64>,
    /// Facts the probe was fitted on, in training order.
    pub train_ids: Vec<String>,
}

/// Fits a true/false linear probe on hidden activations over a seeded
/// subset of the facts and scores all of them. The scores are the model's
/// internal confidence in each fact.
pub fn activation_probe_scores(
    acts: &EmbeddingStore,
    facts: &[Fact],
    cfg: &ActivationProbeConfig,
    seed: u64,
) -> Result<ActivationScores> {
    if acts.is_empty() {
        return Err(Error::Invalid("activation map is empty".into()));
    }
    if facts.is_empty() {
        return Err(Error::Invalid("no facts to score".into()));
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction <= 1.0) {
        return Err(Error::Invalid(format!(
            "train fraction {} outside (0, 1]",
            cfg.train_fraction
        )));
    }
    acts.coverage_check(facts.iter().map(|f| f.id.as_str()))
        .into_result()?;

    let targets: HashMap<String, Target> = facts
        .iter()
        .map(|f| {
            let y = u8::from(f.polarity == Polarity::Positive);
            (f.id.clone(), Target::Label(y))
        })
        .collect();
    let mut ids: Vec<String> = targets.keys().cloned().collect();
    ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_train = ((ids.len() as f64 * cfg.train_fraction + 1e-9).floor() as usize).max(1);
    ids.truncate(n_train);

    let train_cfg = TrainConfig {
        loss: LossKind::Bce,
        temperature: 1.0,
        learning_rate: cfg.learning_rate,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed,
        init: WeightInit::Zeros,
        bias: true,
    };
    let model = head::fit(acts, &targets, &ids, &train_cfg)?;
    let scores = facts
        .iter()
        .map(|f| Ok((f.id.clone(), model.head.predict_logit(acts.get(&f.id)?)?)))
        .collect::<Result<_>>()?;
    Ok(ActivationScores {
        scores,
        train_ids: ids,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactScoreLabel {
    Supported,
    NotSupported,
    Irrelevant,
}

impl FactScoreLabel {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_lowercase().replace(['_', ' '], "-").as_str() {
            "supported" | "s" => Some(FactScoreLabel::Supported),
            "not-supported" | "ns" | "unsupported" => Some(FactScoreLabel::NotSupported),
            "irrelevant" | "ir" => Some(FactScoreLabel::Irrelevant),
            _ => None,
        }
    }
}

#[derive(Deserialize)]
struct FactScoreRecord {
    topic: String,
    #[serde(alias = "atomic_fact", alias = "text")]
    fact: String,
    label: String,
    #[serde(alias = "generator", alias = "generator_model")]
    model: String,
}

/// Reads labelled atomic facts. Each becomes a positive fact whose triple
/// is (topic, generator model, fact text); supported facts get label 1,
/// unsupported ones 0, and irrelevant ones are dropped. Repeated facts keep
/// their first label.
pub fn ingest_factscore(path: impl AsRef<Path>) -> Result<Vec<(Fact, u8)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    for (record, (idx, line)) in lines.enumerate() {
        let bad = |msg: String| Error::parse(path, idx + 1, format!("record {record}: {msg}"));
        let rec: FactScoreRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let label = match FactScoreLabel::parse(&rec.label) {
            Some(FactScoreLabel::Supported) => 1,
            Some(FactScoreLabel::NotSupported) => 0,
            Some(FactScoreLabel::Irrelevant) => continue,
            None => return Err(bad(format!("unknown label `{}`", rec.label))),
        };
        let statement = rec.fact.split_whitespace().collect::<Vec<_>>().join(" ");
        let triple = Triple::new(rec.topic.trim(), rec.model.trim(), statement.clone())
            .map_err(|e| bad(e.to_string()))?;
        let fact = Fact::new(triple, statement, Polarity::Positive);
        if seen.insert(fact.id.clone()) {
            out.push((fact, label));
        } else {
            log::warn!("{}: record {record} repeats an earlier fact", path.display());
        }
    }
    Ok(out)
}
