use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::{Pipeline, RunConfig, SweepAxis, RESERVED_ROWS, TABLE_FORMAT};
use crate::error::{Error, Result};
use crate::eval::{canonical_json, overall_rank};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub csv: PathBuf,
    /// Run directory of every axis value, in order.
    pub runs: Vec<PathBuf>,
    /// Backend calls over the whole sweep.
    pub requests: usize,
    pub rows: usize,
}

fn apply_axis(cfg: &mut RunConfig, axis: SweepAxis, value: f64) -> Result<()> {
    match axis {
        SweepAxis::Negatives => {
            if value < 0.0 || value.fract() != 0.0 {
                return Err(Error::Invalid(format!("negatives must be a whole number, got {value}")));
            }
            cfg.dataset.negatives = value as usize;
        }
        SweepAxis::Fraction => cfg.dataset.fraction = value,
        SweepAxis::Temperature => {
            if cfg.probe.kind.is_binary() {
                return Err(Error::Invalid(
                    "temperature sweeps need a probe with real-valued scores".into(),
                ));
            }
            cfg.train.temperatures = vec![value];
        }
    }
    Ok(())
}

/// Runs the whole pipeline once per axis value and writes a long-format CSV
/// `axis_value,embedding,metric,value` next to the run directories. All
/// runs share the probe cache.
pub fn sweep(base: &RunConfig, axis: SweepAxis, values: &[f64]) -> Result<SweepSummary> {
    if values.is_empty() {
        return Err(Error::Invalid("sweep needs at least one axis value".into()));
    }
    base.validate()?;
    let mut runs = Vec::with_capacity(values.len());
    let mut requests = 0;
    let mut rows = Vec::new();
    for &value in values {
        let mut cfg = base.clone();
        apply_axis(&mut cfg, axis, value)?;
        let pipeline = Pipeline::new(cfg)?;
        log::info!("sweep {axis:?} = {value}: {}", pipeline.paths().root.display());
        let (_, probe, eval) = pipeline.run_all()?;
        requests += probe.requests;
        for (name, report) in &eval.rows {
            for metric in &eval.columns {
                rows.push((value, name.clone(), metric.to_string(), report.metric(metric)));
            }
        }
        runs.push(pipeline.paths().root.clone());
    }

    let out_dir = base.output_dir();
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let axis_name = format!("{axis:?}").to_lowercase();
    let csv_path = out_dir.join(format!("sweep-{axis_name}-{}.csv", &base.hash()?[..16]));
    let io = |e: csv::Error| Error::Invalid(format!("{}: {e}", csv_path.display()));
    let mut w = csv::Writer::from_path(&csv_path).map_err(io)?;
    w.write_record(["axis_value", "embedding", "metric", "value"]).map_err(io)?;
    for (value, name, metric, v) in &rows {
        let v = v.map(|x| format!("{x:.4}")).unwrap_or_default();
        w.write_record([value.to_string(), name.clone(), metric.clone(), v])
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    Ok(SweepSummary {
        csv: csv_path,
        runs,
        requests,
        rows: rows.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverallReport {
    /// Setting -> embedding -> mean of AUC and ACC.
    pub scores: BTreeMap<String, BTreeMap<String, f64>>,
    pub ranks: BTreeMap<String, usize>,
    pub excluded: Vec<String>,
    pub table: String,
    pub json: String,
}

/// Setting name and (AUC, ACC) per embedding row.
type Comparison = (String, BTreeMap<String, (f64, f64)>);

fn read_comparison(dir: &Path) -> Result<Comparison> {
    let path = dir.join("comparison.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let doc: Value = serde_json::from_str(&text)?;
    if doc["format"] != TABLE_FORMAT {
        return Err(Error::Invalid(format!("{} is not a comparison table", path.display())));
    }
    let setting = doc["setting"].as_str().unwrap_or_default().to_string();
    let mut rows = BTreeMap::new();
    for row in doc["rows"].as_array().into_iter().flatten() {
        let name = row["name"].as_str().unwrap_or_default();
        if RESERVED_ROWS.contains(&name) {
            continue;
        }
        if let (Some(auc), Some(acc)) = (row["auc"].as_f64(), row["acc"].as_f64()) {
            rows.insert(name.to_string(), (auc, acc));
        }
    }
    Ok((setting, rows))
}

/// Ranks embeddings across the settings of several finished runs by
/// ½(AUC + ACC), averaging per-setting ranks over the settings not in
/// `exclude`.
pub fn overall_report(run_dirs: &[PathBuf], exclude: &[String]) -> Result<OverallReport> {
    let mut settings: BTreeMap<String, BTreeMap<String, (f64, f64)>> = BTreeMap::new();
    for dir in run_dirs {
        let (setting, rows) = read_comparison(dir)?;
        if rows.is_empty() {
            log::warn!("{}: no rows with both AUC and ACC", dir.display());
            continue;
        }
        if settings.insert(setting.clone(), rows).is_some() {
            return Err(Error::Invalid(format!(
                "setting `{setting}` appears in more than one run"
            )));
        }
    }
    if settings.is_empty() {
        return Err(Error::Invalid("no label-valued comparison tables to rank".into()));
    }
    let ranks = overall_rank(&settings, exclude);
    let scores: BTreeMap<String, BTreeMap<String, f64>> = settings
        .iter()
        .map(|(s, rows)| {
            let m = rows.iter().map(|(e, (auc, acc))| (e.clone(), 0.5 * (auc + acc))).collect();
            (s.clone(), m)
        })
        .collect();

    let names: Vec<&String> = {
        let mut n: Vec<&String> = ranks.keys().collect();
        n.sort_by_key(|e| (ranks[*e], (*e).clone()));
        n
    };
    let width = names.iter().map(|n| n.len()).max().unwrap_or(0).max(9);
    let mut table = String::new();
    for (i, s) in scores.keys().enumerate() {
        let mark = if exclude.contains(s) { " (excluded)" } else { "" };
        let _ = writeln!(table, "[{}] {s}{mark}", i + 1);
    }
    let _ = write!(table, "{:<width$}", "embedding");
    for i in 0..scores.len() {
        let _ = write!(table, " {:>8}", format!("[{}]", i + 1));
    }
    let _ = writeln!(table, " {:>5}", "rank");
    for name in &names {
        let _ = write!(table, "{name:<width$}");
        for rows in scores.values() {
            let cell = rows.get(*name).map_or("-".to_string(), |v| format!("{v:.2}"));
            let _ = write!(table, " {cell:>8}");
        }
        let _ = writeln!(table, " {:>5}", ranks[*name]);
    }
    let json = canonical_json(&json!({
        "format": "peekrank",
        "version": 1,
        "excluded": exclude,
        "ranks": ranks,
        "scores": scores,
    }));
    Ok(OverallReport {
        scores,
        ranks,
        excluded: exclude.to_vec(),
        table,
        json,
    })
}
