use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const REPORT_FORMAT: &str = "peekreport";

/// Metrics for one evaluated model or baseline.
///
/// A metric mapped to `None` is undefined for this run (for example AUC of
/// a constant baseline) and is written as `null` / `-`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub metrics: BTreeMap<String, Option<f64>>,
    pub n_test: usize,
    /// Fraction of positive labels in the test set; `None` for score
    /// targets.
    pub class_balance: Option<f64>,
    pub counts: BTreeMap<String, usize>,
    pub per_relation: Option<BTreeMap<String, BTreeMap<String, Option<f64>>>>,
    pub meta: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn for_labels(test_labels: &[u8]) -> Self {
        let ones = test_labels.iter().filter(|&&y| y == 1).count();
        EvalReport {
            n_test: test_labels.len(),
            class_balance: (!test_labels.is_empty())
                .then(|| ones as f64 / test_labels.len() as f64),
            ..EvalReport::default()
        }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied().flatten()
    }

    pub fn to_value(&self) -> Value {
        let opt = |v: Option<f64>| v.map_or(Value::Null, Value::from);
        let mut metrics: Map<String, Value> =
            self.metrics.iter().map(|(k, v)| (k.clone(), opt(*v))).collect();
        metrics.insert("class_balance".into(), opt(self.class_balance));
        let mut counts: Map<String, Value> =
            self.counts.iter().map(|(k, v)| (k.clone(), Value::from(*v))).collect();
        counts.insert("n_test".into(), Value::from(self.n_test));
        let meta: Map<String, Value> =
            self.meta.iter().map(|(k, v)| (k.clone(), Value::from(v.clone()))).collect();

        let mut root = Map::new();
        root.insert("format".into(), REPORT_FORMAT.into());
        root.insert("version".into(), 1.into());
        root.insert("metrics".into(), metrics.into());
        root.insert("counts".into(), counts.into());
        root.insert("meta".into(), meta.into());
        if let Some(per) = &self.per_relation {
            let per: Map<String, Value> = per
                .iter()
                .map(|(rel, m)| {
                    let inner: Map<String, Value> =
                        m.iter().map(|(k, v)| (k.clone(), opt(*v))).collect();
                    (rel.clone(), inner.into())
                })
                .collect();
            root.insert("per_relation".into(), per.into());
        }
        root.into()
    }

    /// Canonical JSON: sorted keys, floats with four decimals.
    pub fn to_json(&self) -> String {
        canonical_json(&self.to_value())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text)?;
        if root["format"] != REPORT_FORMAT {
            return Err(Error::Invalid("not a peekreport document".into()));
        }
        let float_map = |v: &Value| -> BTreeMap<String, Option<f64>> {
            v.as_object()
                .map(|m| m.iter().map(|(k, v)| (k.clone(), v.as_f64())).collect())
                .unwrap_or_default()
        };
        let mut metrics = float_map(&root["metrics"]);
        let class_balance = metrics.remove("class_balance").flatten();
        let mut counts: BTreeMap<String, usize> = root["counts"]
            .as_object()
            .map(|m| {
                m.iter()
                    .filter_map(|(k, v)| v.as_u64().map(|n| (k.clone(), n as usize)))
                    .collect()
            })
            .unwrap_or_default();
        let n_test = counts.remove("n_test").unwrap_or(0);
        let meta = root["meta"]
            .as_object()
            .map(|m| {
                m.iter()
                    .map(|(k, v)| (k.clone(), v.as_str().unwrap_or_default().to_string()))
                    .collect()
            })
            .unwrap_or_default();
        let per_relation = root
            .get("per_relation")
            .and_then(Value::as_object)
            .map(|m| m.iter().map(|(k, v)| (k.clone(), float_map(v))).collect());
        Ok(EvalReport {
            metrics,
            n_test,
            class_balance,
            counts,
            per_relation,
            meta,
        })
    }

    /// Two-decimal human-readable table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<16} {:>10}", "metric", "value");
        for (name, value) in &self.metrics {
            let _ = writeln!(out, "{:<16} {:>10}", name, fmt2(*value));
        }
        let _ = writeln!(out, "{:<16} {:>10}", "n_test", self.n_test);
        if let Some(cb) = self.class_balance {
            let _ = writeln!(out, "{:<16} {:>10.2}", "class_balance", cb);
        }
        for (name, n) in &self.counts {
            let _ = writeln!(out, "{:<16} {:>10}", name, n);
        }
        if let Some(per) = &self.per_relation {
            let columns: Vec<&String> = {
                let mut c: Vec<&String> = per.values().flat_map(|m| m.keys()).collect();
                c.sort();
                c.dedup();
                c
            };
            let _ = write!(out, "\n{:<32}", "relation");
            for c in &columns {
                let _ = write!(out, " {:>10}", c);
            }
            out.push('\n');
            for (rel, m) in per {
                let _ = write!(out, "{:<32}", rel);
                for c in &columns {
                    let _ = write!(out, " {:>10}", fmt2(m.get(*c).copied().flatten()));
                }
                out.push('\n');
            }
        }
        out
    }
}

fn fmt2(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

/// Pretty JSON with sorted keys and floats at four decimals.
pub(crate) fn canonical_json(v: &Value) -> String {
    let mut out = String::new();
    write_canonical(v, &mut out, 0);
    out.push('\n');
    out
}

fn write_canonical(v: &Value, out: &mut String, indent: usize) {
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, k) in keys.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                out.push_str(&Value::from(k.as_str()).to_string());
                out.push_str(": ");
                write_canonical(&map[*k], out, indent + 1);
                if i + 1 < keys.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_canonical(item, out, indent);
            }
            out.push(']');
        }
        Value::Number(n) if n.is_f64() => {
            let _ = write!(out, "{:.4}", n.as_f64().unwrap_or(f64::NAN));
        }
        other => out.push_str(&other.to_string()),
    }
}

/// Writes `path` as canonical JSON and a sibling `.txt` table.
pub fn emit_report(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, report.to_json()).map_err(|e| Error::io(path, e))?;
    let table = path.with_extension("txt");
    fs::write(&table, report.to_table()).map_err(|e| Error::io(&table, e))
}

/// A table with one row per named report and one column per metric,
/// two decimals, `-` where a metric is undefined.
pub fn comparison_table(rows: &[(String, EvalReport)], metrics: &[&str]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(9);
    let mut out = String::new();
    let _ = write!(out, "{:<width$}", "embedding");
    for m in metrics {
        let _ = write!(out, " {:>8}", m.to_uppercase());
    }
    out.push('\n');
    for (name, report) in rows {
        let _ = write!(out, "{name:<width$}");
        for m in metrics {
            let _ = write!(out, " {:>8}", fmt2(report.metric(m)));
        }
        out.push('\n');
    }
    out
}
