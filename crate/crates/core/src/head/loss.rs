//! Per-batch losses on logits, each returning the batch-mean loss and its
//! gradient with respect to every logit.

use crate::error::{Error, Result};

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Mean binary cross entropy of `sigmoid(logits)` against 0/1 labels.
///
/// Each term is written as `y*softplus(-z) + (1-y)*softplus(z)`, which is
/// `-[y ln s(z) + (1-y) ln(1 - s(z))]` without taking the log of a rounded
/// probability. The gradient is `(s(z) - y) / n`.
pub fn bce_loss(logits: &[f64], labels: &[u8]) -> Result<(f64, Vec<f64>)> {
    check_lengths(logits.len(), labels.len())?;
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::Invalid(format!("label {bad} is not 0 or 1")));
    }
    let targets: Vec<f64> = labels.iter().map(|&y| f64::from(y)).collect();
    Ok(soft_cross_entropy(logits, &targets, 1.0))
}

/// Mean soft-label cross entropy between `q = sigmoid(teacher/T)` and
/// `p = sigmoid(student/T)`: `-(1/n) sum[q ln p + (1-q) ln(1-p)]`.
///
/// The gradient with respect to each student logit is `(p - q) / (n T)`.
pub fn distill_loss(student: &[f64], teacher: &[f64], temperature: f64) -> Result<(f64, Vec<f64>)> {
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(Error::Invalid(format!(
            "distillation temperature must be positive, got {temperature}"
        )));
    }
    check_lengths(student.len(), teacher.len())?;
    let soft: Vec<f64> = teacher.iter().map(|&s| sigmoid(s / temperature)).collect();
    Ok(soft_cross_entropy(student, &soft, temperature))
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a == 0 {
        return Err(Error::Invalid("loss over an empty batch".into()));
    }
    if a != b {
        return Err(Error::Invalid(format!(
            "logits ({a}) and targets ({b}) differ in length"
        )));
    }
    Ok(())
}

/// Shared kernel: targets are probabilities in `[0, 1]`.
pub(crate) fn soft_cross_entropy(logits: &[f64], targets: &[f64], temperature: f64) -> (f64, Vec<f64>) {
    let n = logits.len() as f64;
    let mut total = 0.0;
    let grad = logits
        .iter()
        .zip(targets)
        .map(|(&s, &q)| {
            let z = s / temperature;
            total += q * softplus(-z) + (1.0 - q) * softplus(z);
            (sigmoid(z) - q) / (n * temperature)
        })
        .collect();
    (total / n, grad)
}
