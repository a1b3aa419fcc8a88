//! Experiment runs: dataset construction, probing, head training and
//! reports, all written into a run directory named after the config hash.

mod config;
mod sweep;
mod train;

pub use config::{
    apply_override, BackendKind, DatasetConfig, MockConfig, MockMode, ProbeConfig, RunConfig,
    SweepAxis, SweepConfig, TrainGrid, RESERVED_ROWS,
};
pub use sweep::{overall_report, sweep, OverallReport, SweepSummary};
pub use train::{TrainEvalSummary, TABLE_FORMAT};

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::eval::{base_llm_accuracy, BaseAccuracy};
use crate::kg::{
    assign_splits, inductive_stats, load_triples, read_facts, read_templates, sample_negatives,
    stratified_sample, verbalize, write_facts, Fact, InductiveStats, Polarity, Split,
};
use crate::probe::{
    activation_probe_scores, ingest_activations, ingest_factscore, read_probe_records,
    run_probe, write_probe_records, ActivationProbeConfig, Backend, HttpBackend, MockBackend,
    MockBehavior, ProbeCache, ProbeKind, ProbeRecord, ProbeStatus,
};

/// Files of one run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPaths {
    pub root: PathBuf,
    pub config: PathBuf,
    pub facts: PathBuf,
    pub stats: PathBuf,
    pub probes: PathBuf,
    pub models: PathBuf,
    pub reports: PathBuf,
    pub comparison: PathBuf,
}

impl RunPaths {
    fn new(root: PathBuf) -> Self {
        RunPaths {
            config: root.join("config.toml"),
            facts: root.join("facts.jsonl"),
            stats: root.join("stats.json"),
            probes: root.join("probes.jsonl"),
            models: root.join("models"),
            reports: root.join("reports"),
            comparison: root.join("comparison.json"),
            root,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSummary {
    pub facts: usize,
    pub positives: usize,
    pub negatives: usize,
    /// Facts in train, val and test.
    pub splits: (usize, usize, usize),
    pub stats: InductiveStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSummary {
    pub records: usize,
    /// Backend calls made, zero when everything came from the cache or a
    /// file.
    pub requests: usize,
    pub backend_errors: usize,
    pub unparsed: usize,
    /// Only for yes/no generation.
    pub base_accuracy: Option<BaseAccuracy>,
}

/// A configured run bound to its directory.
pub struct Pipeline {
    cfg: RunConfig,
    hash: String,
    paths: RunPaths,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let hash = cfg.hash()?;
        let root = cfg.output_dir().join(format!("run-{}", &hash[..16]));
        Ok(Pipeline {
            paths: RunPaths::new(root),
            cfg,
            hash,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn paths(&self) -> &RunPaths {
        &self.paths
    }

    fn ensure_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
    }

    fn write_config(&self) -> Result<()> {
        self.ensure_dir(&self.paths.root)?;
        // The output directory is left out, as it is of the hash.
        let mut table = toml::Table::try_from(&self.cfg)
            .map_err(|e| Error::Invalid(format!("config: {e}")))?;
        table.remove("output_dir");
        let text = toml::to_string(&table).map_err(|e| Error::Invalid(format!("config: {e}")))?;
        let text = format!("# config_hash = \"{}\"\n{text}", self.hash);
        fs::write(&self.paths.config, text).map_err(|e| Error::io(&self.paths.config, e))
    }

    fn read_facts(&self) -> Result<Vec<Fact>> {
        if !self.paths.facts.is_file() {
            return Err(Error::Invalid(format!(
                "{} not found; run build-dataset first",
                self.paths.facts.display()
            )));
        }
        read_facts(&self.paths.facts)
    }

    /// Builds the fact set: from labelled atomic facts for the
    /// fact-generation probe, otherwise by sampling the knowledge graph.
    pub fn build_dataset(&self) -> Result<DatasetSummary> {
        let spec = self.cfg.sample_spec();
        let facts = if self.cfg.probe.kind == ProbeKind::FactGeneration {
            let path = self.cfg.require_file("factscore", self.cfg.dataset.factscore.as_ref())?;
            let facts = ingest_factscore(path)?.into_iter().map(|(f, _)| f).collect();
            assign_splits(facts, &spec)?
        } else {
            let triples = self.cfg.require_file("triples", self.cfg.dataset.triples.as_ref())?;
            let templates =
                self.cfg.require_file("templates", self.cfg.dataset.templates.as_ref())?;
            let templates = read_templates(templates)?;
            let graph = load_triples(triples)?;
            let sample = stratified_sample(&graph, &spec)?;
            let k = spec.negatives_per_positive;
            let negatives = sample_negatives(&sample, &graph, k, spec.seed)?;
            let mut facts = Vec::with_capacity(sample.len() * (k + 1));
            for (i, triple) in sample.triples().iter().enumerate() {
                let pos = Fact::new(triple.clone(), verbalize(triple, &templates)?, Polarity::Positive);
                let pos_id = pos.id.clone();
                facts.push(pos);
                for neg in &negatives[i * k..(i + 1) * k] {
                    let mut fact =
                        Fact::new(neg.clone(), verbalize(neg, &templates)?, Polarity::Negative);
                    fact.source = Some(pos_id.clone());
                    facts.push(fact);
                }
            }
            assign_splits(facts, &spec)?
        };

        let stats = inductive_stats(&facts);
        let count = |s| facts.iter().filter(|f| f.split == Some(s)).count();
        let positives = facts.iter().filter(|f| f.polarity == Polarity::Positive).count();
        let summary = DatasetSummary {
            facts: facts.len(),
            positives,
            negatives: facts.len() - positives,
            splits: (count(Split::Train), count(Split::Val), count(Split::Test)),
            stats,
        };

        self.write_config()?;
        write_facts(&self.paths.facts, &facts, Some(&self.hash))?;
        let doc = json!({
            "format": "peekstats",
            "version": 1,
            "config_hash": self.hash,
            "dataset": self.cfg.dataset.name,
            "sample_percentage": 100.0 * self.cfg.dataset.fraction,
            "train_entities": stats.train_entities,
            "val_entities": stats.val_entities,
            "test_entities": stats.test_entities,
            "test_minus_train": stats.test_minus_train,
            "facts": {
                "total": summary.facts,
                "positive": summary.positives,
                "negative": summary.negatives,
                "train": summary.splits.0,
                "val": summary.splits.1,
                "test": summary.splits.2,
            },
        });
        let text = serde_json::to_string_pretty(&doc)? + "\n";
        fs::write(&self.paths.stats, text).map_err(|e| Error::io(&self.paths.stats, e))?;
        Ok(summary)
    }

    /// Probes the run's facts with the configured probe and writes the
    /// records file.
    pub fn probe(&self) -> Result<ProbeSummary> {
        let kind = self.cfg.probe.kind;
        match kind {
            ProbeKind::ActivationPrediction => {
                let path =
                    self.cfg.require_file("activations", self.cfg.dataset.activations.as_ref())?;
                let facts = self.read_facts()?;
                let acts = ingest_activations(path, &facts)?;
                let scores = activation_probe_scores(
                    &acts,
                    &facts,
                    &ActivationProbeConfig::default(),
                    self.cfg.seed,
                )?;
                let records = facts
                    .iter()
                    .map(|f| ProbeRecord {
                        fact_id: f.id.clone(),
                        kind,
                        polarity: None,
                        prompt: f.text.clone(),
                        raw: String::new(),
                        label: None,
                        score: Some(scores.scores[&f.id]),
                        status: ProbeStatus::Ok,
                    })
                    .collect();
                self.finish_probe(records, 0)
            }
            ProbeKind::FactGeneration => {
                let path = self.cfg.require_file("factscore", self.cfg.dataset.factscore.as_ref())?;
                let facts = self.read_facts()?;
                let labels: HashMap<String, u8> = ingest_factscore(path)?
                    .into_iter()
                    .map(|(f, y)| (f.id, y))
                    .collect();
                let records = facts
                    .iter()
                    .map(|f| {
                        let y = *labels
                            .get(&f.id)
                            .ok_or_else(|| Error::UnknownId(f.id.clone()))?;
                        Ok(ProbeRecord {
                            fact_id: f.id.clone(),
                            kind,
                            polarity: None,
                            prompt: f.text.clone(),
                            raw: if y == 1 { "supported" } else { "not-supported" }.into(),
                            label: Some(y),
                            score: None,
                            status: ProbeStatus::Ok,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                self.finish_probe(records, 0)
            }
            ProbeKind::BinaryGeneration | ProbeKind::BinaryLogits => {
                let facts = self.read_facts()?;
                let backend = make_backend(&self.cfg)?;
                self.probe_with(&facts, backend.as_ref())
            }
        }
    }

    /// Runs a yes/no probe through `backend`, sharing the configured cache.
    pub fn probe_with(&self, facts: &[Fact], backend: &dyn Backend) -> Result<ProbeSummary> {
        let cache_path = match &self.cfg.backend.cache_path {
            Some(p) => self.cfg.resolve(p),
            None => self.cfg.output_dir().join("probe-cache.jsonl"),
        };
        let cache = ProbeCache::open(cache_path)?;
        let run = run_probe(
            facts,
            self.cfg.probe.kind,
            backend,
            &self.cfg.backend,
            &cache,
            self.cfg.seed,
        )?;
        let total = run.records.len();
        let failed = run.failed;
        let summary = self.finish_probe(run.records, run.requests)?;
        if failed {
            return Err(Error::ProbeRunFailed {
                failed: summary.backend_errors,
                total,
            });
        }
        Ok(summary)
    }

    fn finish_probe(&self, mut records: Vec<ProbeRecord>, requests: usize) -> Result<ProbeSummary> {
        records.sort_by(|a, b| a.fact_id.cmp(&b.fact_id));
        self.write_config()?;
        write_probe_records(&self.paths.probes, &records, Some(&self.hash))?;
        let count = |s| records.iter().filter(|r| r.status == s).count();
        let base_accuracy = if self.cfg.probe.kind == ProbeKind::BinaryGeneration {
            let positive: Vec<ProbeRecord> = {
                let facts = self.read_facts()?;
                let pos: HashSet<&str> = facts
                    .iter()
                    .filter(|f| f.polarity == Polarity::Positive)
                    .map(|f| f.id.as_str())
                    .collect();
                records
                    .iter()
                    .filter(|r| pos.contains(r.fact_id.as_str()))
                    .cloned()
                    .collect()
            };
            base_llm_accuracy(&positive).ok()
        } else {
            None
        };
        Ok(ProbeSummary {
            records: records.len(),
            requests,
            backend_errors: count(ProbeStatus::BackendError),
            unparsed: count(ProbeStatus::Unparsed),
            base_accuracy,
        })
    }

    pub(crate) fn read_probes(&self) -> Result<Vec<ProbeRecord>> {
        if !self.paths.probes.is_file() {
            return Err(Error::Invalid(format!(
                "{} not found; run probe first",
                self.paths.probes.display()
            )));
        }
        read_probe_records(&self.paths.probes)
    }

    /// Builds the dataset, probes it and trains and evaluates every
    /// embedding.
    pub fn run_all(&self) -> Result<(DatasetSummary, ProbeSummary, TrainEvalSummary)> {
        let data = self.build_dataset()?;
        let probe = self.probe()?;
        let eval = self.train_eval()?;
        Ok((data, probe, eval))
    }
}

#[derive(Deserialize)]
struct Belief {
    text: String,
    p: f64,
}

/// Reads a beliefs file: JSON lines `{"text": ..., "p": ...}`.
pub fn read_beliefs(path: &Path) -> Result<HashMap<String, f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let b: Belief =
            serde_json::from_str(line).map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
        if !(0.0..=1.0).contains(&b.p) {
            return Err(Error::parse(path, idx + 1, format!("belief {} outside [0, 1]", b.p)));
        }
        out.insert(b.text, b.p);
    }
    Ok(out)
}

/// The backend a config asks for.
pub fn make_backend(cfg: &RunConfig) -> Result<Box<dyn Backend>> {
    match cfg.probe.backend {
        BackendKind::Http => Ok(Box::new(HttpBackend::new(&cfg.backend)?)),
        BackendKind::Mock => {
            let behavior = match cfg.mock.mode {
                MockMode::Fixed => MockBehavior::Fixed(cfg.mock.response.clone()),
                MockMode::Beliefs => {
                    let beliefs = match &cfg.mock.beliefs {
                        Some(p) => read_beliefs(&cfg.resolve(p))?,
                        None => HashMap::new(),
                    };
                    MockBehavior::Beliefs {
                        beliefs,
                        default: cfg.mock.default_belief,
                    }
                }
            };
            let mock = MockBackend::new(behavior);
            Ok(Box::new(if cfg.mock.logprobs { mock } else { mock.without_logprobs() }))
        }
    }
}
