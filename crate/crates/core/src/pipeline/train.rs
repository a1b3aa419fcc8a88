use std::collections::{BTreeMap, HashMap};
use std::fs;

use serde_json::{json, Value};

use super::Pipeline;
use crate::embedding::load_vectors;
use crate::error::{Error, Result};
use crate::eval::canonical_json;
use crate::eval::{
    accuracy, auc, cmp_metric, comparison_table, emit_report, mae, majority_baseline,
    random_baseline, EvalReport,
};
use crate::head::{predict_all, train, LossKind, ModelFile, Target, TrainConfig, TrainedModel};
use crate::kg::{Fact, Split};
use crate::probe::ProbeStatus;

/// Format tag of the comparison table written by `train_eval`.
pub const TABLE_FORMAT: &str = "peektable";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainEvalSummary {
    /// Baseline reports followed by one report per embedding.
    pub rows: Vec<(String, EvalReport)>,
    pub columns: Vec<&'static str>,
    pub table: String,
}

struct Data<'a> {
    targets: HashMap<String, Target>,
    relation: HashMap<&'a str, &'a str>,
    train: Vec<String>,
    val: Vec<String>,
    test: Vec<String>,
    excluded: usize,
    labels: bool,
}

impl Data<'_> {
    fn label(&self, id: &str) -> u8 {
        match self.targets[id] {
            Target::Label(y) => y,
            Target::Score(_) => 0,
        }
    }

    fn score(&self, id: &str) -> f64 {
        match self.targets[id] {
            Target::Score(s) => s,
            Target::Label(y) => f64::from(y),
        }
    }
}

struct Candidate {
    model: TrainedModel,
    val: BTreeMap<String, Option<f64>>,
}

/// Metrics of `logits` on `ids`: ACC/AUC for labels, MAE for scores.
fn metrics(data: &Data, ids: &[String], logits: &[f64]) -> Result<BTreeMap<String, Option<f64>>> {
    let mut out = BTreeMap::new();
    if ids.is_empty() {
        return Ok(out);
    }
    if data.labels {
        let y: Vec<u8> = ids.iter().map(|id| data.label(id)).collect();
        let pred: Vec<u8> = logits.iter().map(|&l| u8::from(l >= 0.0)).collect();
        out.insert("acc".into(), Some(accuracy(&pred, &y)?));
        let a = match auc(logits, &y) {
            Ok(v) => Some(v),
            Err(Error::AucUndefined) => None,
            Err(e) => return Err(e),
        };
        out.insert("auc".into(), a);
    } else {
        let s: Vec<f64> = ids.iter().map(|id| data.score(id)).collect();
        out.insert("mae".into(), Some(mae(logits, &s)?));
    }
    Ok(out)
}

/// Orders candidates by validation performance: AUC then ACC for labels,
/// lower MAE for scores.
fn better(data: &Data, a: &BTreeMap<String, Option<f64>>, b: &BTreeMap<String, Option<f64>>) -> bool {
    let get = |m: &BTreeMap<String, Option<f64>>, k: &str| m.get(k).copied().flatten();
    let ord = if data.labels {
        cmp_metric(get(a, "auc"), get(b, "auc")).then(cmp_metric(get(a, "acc"), get(b, "acc")))
    } else {
        cmp_metric(get(a, "mae").map(|v| -v), get(b, "mae").map(|v| -v))
    };
    ord.is_gt()
}

fn candidate_json(c: &Candidate) -> Value {
    json!({
        "learning_rate": c.model.config.learning_rate,
        "epochs": c.model.config.epochs,
        "temperature": c.model.config.temperature,
        "val": c.val,
    })
}

impl Pipeline {
    fn load_data<'a>(&self, facts: &'a [Fact]) -> Result<Data<'a>> {
        let kind = self.cfg.probe.kind;
        let records = self.read_probes()?;
        let mut targets = HashMap::new();
        for r in &records {
            if r.kind != kind {
                return Err(Error::Invalid(format!(
                    "probe records are {} but the config asks for {kind}",
                    r.kind
                )));
            }
            if r.status != ProbeStatus::Ok {
                continue;
            }
            let target = match (r.label, r.score) {
                (Some(y), _) if kind.is_binary() => Target::Label(y),
                (_, Some(s)) if !kind.is_binary() => Target::Score(s),
                _ => continue,
            };
            targets.insert(r.fact_id.clone(), target);
        }
        let mut data = Data {
            targets,
            relation: HashMap::new(),
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
            excluded: 0,
            labels: kind.is_binary(),
        };
        for f in facts {
            data.relation.insert(&f.id, &f.triple.relation);
            if !data.targets.contains_key(&f.id) {
                data.excluded += 1;
                continue;
            }
            match f.split {
                Some(Split::Train) => data.train.push(f.id.clone()),
                Some(Split::Val) => data.val.push(f.id.clone()),
                Some(Split::Test) => data.test.push(f.id.clone()),
                None => data.excluded += 1,
            }
        }
        if data.train.is_empty() || data.test.is_empty() {
            return Err(Error::Invalid(
                "no usable probe results in the train or test split".into(),
            ));
        }
        Ok(data)
    }

    fn grid(&self, data: &Data) -> Vec<TrainConfig> {
        let grid = &self.cfg.train;
        let temperatures = if data.labels { vec![1.0] } else { grid.temperatures.clone() };
        let mut out = Vec::new();
        for &learning_rate in &grid.learning_rates {
            for &epochs in &grid.epochs {
                for &temperature in &temperatures {
                    out.push(TrainConfig {
                        loss: if data.labels { LossKind::Bce } else { LossKind::Distill },
                        temperature,
                        learning_rate,
                        epochs,
                        batch_size: grid.batch_size,
                        seed: self.cfg.seed,
                        init: grid.init,
                        bias: grid.bias,
                    });
                }
            }
        }
        out
    }

    fn per_relation(
        &self,
        data: &Data,
        logits: &HashMap<String, f64>,
    ) -> Result<BTreeMap<String, BTreeMap<String, Option<f64>>>> {
        let mut groups: BTreeMap<&str, Vec<String>> = BTreeMap::new();
        for id in &data.test {
            groups.entry(data.relation[id.as_str()]).or_default().push(id.clone());
        }
        groups
            .into_iter()
            .map(|(rel, ids)| {
                let l: Vec<f64> = ids.iter().map(|id| logits[id.as_str()]).collect();
                let mut m = metrics(data, &ids, &l)?;
                m.insert("n".into(), Some(ids.len() as f64));
                Ok((rel.to_string(), m))
            })
            .collect()
    }

    /// Trains every grid candidate for every embedding, keeps the best on
    /// validation, evaluates it on test and writes models, reports and the
    /// comparison table.
    pub fn train_eval(&self) -> Result<TrainEvalSummary> {
        if self.cfg.embeddings.is_empty() {
            return Err(Error::Invalid("no embeddings configured".into()));
        }
        let facts = self.read_facts()?;
        let data = self.load_data(&facts)?;
        let grid = self.grid(&data);
        let usable: Vec<&str> = data
            .train
            .iter()
            .chain(&data.val)
            .chain(&data.test)
            .map(String::as_str)
            .collect();
        self.ensure_dir(&self.paths.models)?;
        self.ensure_dir(&self.paths.reports)?;
        self.write_config()?;

        // Baselines first, then one row per embedding.
        let mut rows = Vec::new();
        for (name, mut report) in self.baselines(&data)? {
            let base = self.base_report(&data);
            for (k, v) in base.meta {
                report.meta.entry(k).or_insert(v);
            }
            report.counts.extend(base.counts);
            emit_report(&report, self.paths.reports.join(format!("{name}.json")))?;
            rows.push((name, report));
        }
        for (name, path) in &self.cfg.embeddings {
            let mut store = load_vectors(self.cfg.resolve(path))?;
            if self.cfg.train.normalize {
                store = store.l2_normalized();
            }
            store.coverage_check(usable.iter().copied()).into_result()?;

            let mut candidates: Vec<Candidate> = Vec::with_capacity(grid.len());
            for cfg in &grid {
                let model = train(&store, &data.targets, &data.train, cfg)?;
                let val = if data.val.is_empty() {
                    BTreeMap::new()
                } else {
                    let preds = predict_all(&model, &store, data.val.iter().map(String::as_str))?;
                    let l: Vec<f64> = data.val.iter().map(|id| preds[id].logit).collect();
                    metrics(&data, &data.val, &l)?
                };
                candidates.push(Candidate { model, val });
            }
            let mut best = 0;
            for i in 1..candidates.len() {
                if better(&data, &candidates[i].val, &candidates[best].val) {
                    best = i;
                }
            }
            // Same learning rate and temperature as the selection, trained
            // for the longest epoch count of the grid.
            let chosen = &candidates[best].model.config;
            let last = candidates
                .iter()
                .enumerate()
                .filter(|(_, c)| {
                    c.model.config.learning_rate == chosen.learning_rate
                        && c.model.config.temperature == chosen.temperature
                })
                .max_by_key(|(i, c)| (c.model.config.epochs, usize::MAX - i))
                .map_or(best, |(i, _)| i);

            let mut test_metrics = Vec::with_capacity(2);
            for &idx in &[best, last] {
                let preds = predict_all(
                    &candidates[idx].model,
                    &store,
                    data.test.iter().map(String::as_str),
                )?;
                let logits: HashMap<String, f64> =
                    preds.into_iter().map(|(id, p)| (id, p.logit)).collect();
                let l: Vec<f64> = data.test.iter().map(|id| logits[id.as_str()]).collect();
                test_metrics.push((metrics(&data, &data.test, &l)?, logits));
            }

            let table: Vec<Value> = candidates.iter().map(candidate_json).collect();
            for (checkpoint, idx, file) in [
                ("best-val", best, format!("{name}.json")),
                ("last", last, format!("{name}.last.json")),
            ] {
                let mut mf = ModelFile::new(&candidates[idx].model);
                mf.meta.insert("config_hash".into(), json!(self.hash));
                mf.meta.insert("embedding".into(), json!(name));
                mf.meta.insert("checkpoint".into(), json!(checkpoint));
                mf.meta.insert("candidate".into(), json!(idx));
                mf.meta.insert("candidates".into(), Value::Array(table.clone()));
                let test = if idx == best { &test_metrics[0].0 } else { &test_metrics[1].0 };
                mf.meta.insert("test".into(), json!(test));
                mf.write(self.paths.models.join(file))?;
            }

            let (test, logits) = &test_metrics[0];
            let selected = &candidates[best].model.config;
            let mut report = self.base_report(&data);
            report.metrics = test.clone();
            report.per_relation = Some(self.per_relation(&data, logits)?);
            report.counts.insert("candidates".into(), candidates.len());
            report.meta.insert("embedding".into(), name.clone());
            report.meta.insert("source".into(), store.source().to_string());
            report.meta.insert("learning_rate".into(), selected.learning_rate.to_string());
            report.meta.insert("epochs".into(), selected.epochs.to_string());
            if !data.labels {
                report.meta.insert("temperature".into(), selected.temperature.to_string());
            }
            emit_report(&report, self.paths.reports.join(format!("{name}.json")))?;
            rows.push((name.clone(), report));
        }

        let columns: Vec<&'static str> = if data.labels { vec!["auc", "acc"] } else { vec!["mae"] };
        let table = format!(
            "{}\n{}",
            self.cfg.setting_name(),
            comparison_table(&rows, &columns)
        );
        let doc = json!({
            "format": TABLE_FORMAT,
            "version": 1,
            "config_hash": self.hash,
            "setting": self.cfg.setting_name(),
            "columns": columns,
            "rows": rows.iter().map(|(name, r)| {
                let mut row = serde_json::Map::new();
                row.insert("name".into(), json!(name));
                for c in &columns {
                    row.insert(c.to_string(), json!(r.metric(c)));
                }
                Value::Object(row)
            }).collect::<Vec<_>>(),
        });
        fs::write(&self.paths.comparison, canonical_json(&doc))
            .map_err(|e| Error::io(&self.paths.comparison, e))?;
        let txt = self.paths.comparison.with_extension("txt");
        fs::write(&txt, &table).map_err(|e| Error::io(&txt, e))?;
        Ok(TrainEvalSummary {
            rows,
            columns,
            table,
        })
    }

    fn base_report(&self, data: &Data) -> EvalReport {
        let mut report = if data.labels {
            let y: Vec<u8> = data.test.iter().map(|id| data.label(id)).collect();
            EvalReport::for_labels(&y)
        } else {
            EvalReport {
                n_test: data.test.len(),
                ..EvalReport::default()
            }
        };
        report.counts.insert("train".into(), data.train.len());
        report.counts.insert("val".into(), data.val.len());
        report.counts.insert("excluded".into(), data.excluded);
        report.meta.insert("config_hash".into(), self.hash.clone());
        report.meta.insert("setting".into(), self.cfg.setting_name());
        report.meta.insert("kind".into(), self.cfg.probe.kind.to_string());
        report.meta.insert("seed".into(), self.cfg.seed.to_string());
        report
    }

    fn baselines(&self, data: &Data) -> Result<Vec<(String, EvalReport)>> {
        if data.labels {
            let train: Vec<u8> = data.train.iter().map(|id| data.label(id)).collect();
            let test: Vec<u8> = data.test.iter().map(|id| data.label(id)).collect();
            Ok(vec![
                ("majority".into(), majority_baseline(&train, &test)?),
                ("random".into(), random_baseline(&test, self.cfg.seed)?),
            ])
        } else {
            let train: Vec<f64> = data.train.iter().map(|id| data.score(id)).collect();
            let mean = train.iter().sum::<f64>() / train.len() as f64;
            let test: Vec<f64> = data.test.iter().map(|id| data.score(id)).collect();
            let mut report = self.base_report(data);
            report.metrics.insert("mae".into(), Some(mae(&vec![mean; test.len()], &test)?));
            report.meta.insert("baseline".into(), format!("mean={mean:.4}"));
            Ok(vec![("mean".into(), report)])
        }
    }
}

