//! Metrics, baselines and run reports.
//!
//! ACC and AUC are percentages in `[0, 100]`; MAE is in the units of the
//! probe scores.

mod report;

pub use report::{comparison_table, emit_report, EvalReport, REPORT_FORMAT};
pub(crate) use report::canonical_json;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::probe::{ProbeKind, ProbeRecord, ProbeStatus};

fn check_pair(a: usize, b: usize) -> Result<()> {
    if a == 0 {
        return Err(Error::Invalid("metric over an empty set".into()));
    }
    if a != b {
        return Err(Error::Invalid(format!(
            "metric inputs differ in length ({a} vs {b})"
        )));
    }
    Ok(())
}

/// Percentage of positions where `pred` equals `truth`.
pub fn accuracy(pred: &[u8], truth: &[u8]) -> Result<f64> {
    check_pair(pred.len(), truth.len())?;
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(100.0 * hits as f64 / pred.len() as f64)
}

/// Area under the ROC curve, as a percentage.
///
/// Computed from the Mann-Whitney rank sum of the positives, with tied
/// scores sharing their mean rank (a tied pair counts one half).
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_pair(scores.len(), labels.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Invalid("AUC scores contain NaN".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::AucUndefined);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end share their mean
        let mid = (start + 1 + end) as f64 / 2.0;
        let pos_in_run = order[start..end].iter().filter(|&&i| labels[i] == 1).count();
        pos_rank_sum += mid * pos_in_run as f64;
        start = end;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    let u = pos_rank_sum - p * (p + 1.0) / 2.0;
    Ok(100.0 * u / (p * n))
}

/// Mean absolute error.
pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred.len(), target.len())?;
    let total: f64 = pred.iter().zip(target).map(|(a, b)| (a - b).abs()).sum();
    Ok(total / pred.len() as f64)
}

/// Majority class of `labels`; an exact tie goes to 1.
pub fn majority_class(labels: &[u8]) -> u8 {
    let ones = labels.iter().filter(|&&y| y == 1).count();
    u8::from(2 * ones >= labels.len())
}

/// Predicts the train majority for every test item. AUC is undefined.
pub fn majority_baseline(train_labels: &[u8], test_labels: &[u8]) -> Result<EvalReport> {
    if train_labels.is_empty() {
        return Err(Error::Invalid("majority baseline needs training labels".into()));
    }
    let class = majority_class(train_labels);
    let pred = vec![class; test_labels.len()];
    let mut report = EvalReport::for_labels(test_labels);
    report.metrics.insert("acc".into(), Some(accuracy(&pred, test_labels)?));
    report.metrics.insert("auc".into(), None);
    report.meta.insert("baseline".into(), format!("majority={class}"));
    Ok(report)
}

/// Fair-coin predictions from a seeded RNG.
pub fn random_predictions(n: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| u8::from(rng.random::<bool>())).collect()
}

pub fn random_baseline(test_labels: &[u8], seed: u64) -> Result<EvalReport> {
    let pred = random_predictions(test_labels.len(), seed);
    let mut report = EvalReport::for_labels(test_labels);
    report.metrics.insert("acc".into(), Some(accuracy(&pred, test_labels)?));
    report.metrics.insert("auc".into(), None);
    report.meta.insert("baseline".into(), format!("random seed={seed}"));
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseAccuracy {
    /// Percentage of usable records the model affirmed.
    pub percent: f64,
    pub used: usize,
    pub excluded: usize,
}

/// Share of positive-fact binary-generation probes the model got right.
///
/// Records that are not `ok` (unparsed or backend errors) are excluded and
/// counted.
pub fn base_llm_accuracy(records: &[ProbeRecord]) -> Result<BaseAccuracy> {
    if let Some(r) = records.iter().find(|r| r.kind != ProbeKind::BinaryGeneration) {
        return Err(Error::Invalid(format!(
            "base accuracy expects binary-generation records, got {:?} for {}",
            r.kind, r.fact_id
        )));
    }
    let labels: Vec<u8> = records
        .iter()
        .filter(|r| r.status == ProbeStatus::Ok)
        .filter_map(|r| r.label)
        .collect();
    let excluded = records.len() - labels.len();
    if labels.is_empty() {
        return Err(Error::Invalid("no usable probe records".into()));
    }
    let ones = labels.iter().filter(|&&y| y == 1).count();
    Ok(BaseAccuracy {
        percent: 100.0 * ones as f64 / labels.len() as f64,
        used: labels.len(),
        excluded,
    })
}

/// Overall rank of each embedding across settings, scored by the mean of
/// AUC and ACC.
///
/// Within every non-excluded setting the embeddings are ranked (1 = best,
/// ties share their mean rank); ranks are macro-averaged over settings and
/// the averages are ranked again, ties broken by name.
pub fn overall_rank(
    settings: &BTreeMap<String, BTreeMap<String, (f64, f64)>>,
    exclude: &[String],
) -> BTreeMap<String, usize> {
    let mut rank_sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (setting, rows) in settings {
        if exclude.contains(setting) {
            continue;
        }
        let mut scored: Vec<(&str, f64)> = rows
            .iter()
            .map(|(emb, (auc, acc))| (emb.as_str(), 0.5 * (auc + acc)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut start = 0;
        while start < scored.len() {
            let mut end = start + 1;
            while end < scored.len() && scored[end].1 == scored[start].1 {
                end += 1;
            }
            let rank = (start + 1 + end) as f64 / 2.0;
            for (emb, _) in &scored[start..end] {
                let entry = rank_sums.entry(emb).or_default();
                entry.0 += rank;
                entry.1 += 1;
            }
            start = end;
        }
    }
    let mut means: Vec<(&str, f64)> = rank_sums
        .into_iter()
        .map(|(emb, (sum, n))| (emb, sum / n as f64))
        .collect();
    means.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    means
        .into_iter()
        .enumerate()
        .map(|(i, (emb, _))| (emb.to_string(), i + 1))
        .collect()
}

/// `Ordering` of two optional metric values with `None` last.
pub(crate) fn cmp_metric(a: Option<f64>, b: Option<f64>) -> Ordering {
    match (a, b) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => Ordering::Greater,
        (None, Some(_)) => Ordering::Less,
        (None, None) => Ordering::Equal,
    }
}
