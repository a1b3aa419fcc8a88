//! Linear heads over frozen fact embeddings.
//!
//! A head scores a fact as `w . e + b`. Training is plain gradient descent
//! on either binary cross entropy (0/1 probe labels) or temperature-scaled
//! soft-label cross entropy (real-valued probe scores).

pub mod loss;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingStore;
use crate::error::{Error, Result};
pub use loss::{bce_loss, distill_loss, sigmoid};

pub const MODEL_FORMAT: &str = "peekhead";

/// Learning-rate range the default grid is drawn from.
pub const LR_RANGE: (f64, f64) = (1e-3, 1e-2);
/// Epoch range the default grid is drawn from.
pub const EPOCH_RANGE: (usize, usize) = (20, 40);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub weights: Vec<f64>,
    pub bias: Option<f64>,
}

impl LinearHead {
    pub fn zeros(dim: usize, with_bias: bool) -> Self {
        LinearHead {
            weights: vec![0.0; dim],
            bias: with_bias.then_some(0.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn predict_logit(&self, e: &[f32]) -> Result<f64> {
        if e.len() != self.weights.len() {
            return Err(Error::Invalid(format!(
                "embedding length {} does not match head dimension {}",
                e.len(),
                self.weights.len()
            )));
        }
        Ok(dot(&self.weights, e) + self.bias.unwrap_or(0.0))
    }
}

fn dot(w: &[f64], e: &[f32]) -> f64 {
    w.iter().zip(e).map(|(a, &b)| a * f64::from(b)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Bce,
    Distill,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum WeightInit {
    Zeros,
    Gaussian { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub temperature: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub init: WeightInit,
    pub bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Bce,
            temperature: 1.0,
            learning_rate: 1e-2,
            epochs: 40,
            batch_size: None,
            seed: 0,
            init: WeightInit::Zeros,
            bias: true,
        }
    }
}

impl TrainConfig {
    /// Checks hard constraints and returns soft warnings for settings
    /// outside the usual learning-rate and epoch ranges.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::Invalid(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::Invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Invalid("epochs must be at least 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Invalid("batch size must be positive".into()));
        }
        if let WeightInit::Gaussian { sigma } = self.init {
            if sigma.is_nan() || sigma < 0.0 {
                return Err(Error::Invalid(format!("init sigma {sigma} is negative")));
            }
        }
        let mut warnings = Vec::new();
        if self.learning_rate < LR_RANGE.0 || self.learning_rate > LR_RANGE.1 {
            warnings.push(format!(
                "learning rate {} outside [{}, {}]",
                self.learning_rate, LR_RANGE.0, LR_RANGE.1
            ));
        }
        if self.epochs < EPOCH_RANGE.0 || self.epochs > EPOCH_RANGE.1 {
            warnings.push(format!(
                "epochs {} outside [{}, {}]",
                self.epochs, EPOCH_RANGE.0, EPOCH_RANGE.1
            ));
        }
        Ok(warnings)
    }
}

/// What a probe produced for one fact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Label(u8),
    Score(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub head: LinearHead,
    pub config: TrainConfig,
    /// `(epoch, mean loss)` with epochs counted from 1.
    pub loss_curve: Vec<(usize, f64)>,
    pub source: String,
}

/// Fits a head on the `train_ids` rows of `store`.
///
/// Examples are visited in `train_ids` order (full batch) or in a seeded
/// per-epoch shuffle (mini-batch). The recorded loss of an epoch is the
/// mean per-example loss evaluated before each batch update.
pub fn train(
    store: &EmbeddingStore,
    targets: &HashMap<String, Target>,
    train_ids: &[String],
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    for warning in cfg.validate()? {
        log::warn!("{warning}");
    }
    fit(store, targets, train_ids, cfg)
}

/// `train` without the range warnings, for internal callers whose settings
/// are deliberately outside the usual grid.
pub(crate) fn fit(
    store: &EmbeddingStore,
    targets: &HashMap<String, Target>,
    train_ids: &[String],
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    if store.dim() == 0 {
        return Err(Error::Invalid("zero-dimensional embeddings".into()));
    }
    if train_ids.is_empty() {
        return Err(Error::Invalid("no training examples".into()));
    }
    let missing: Vec<String> = train_ids
        .iter()
        .filter(|id| !store.contains(id) || !targets.contains_key(*id))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::coverage(&missing));
    }

    let dim = store.dim();
    let mut rows: Vec<&[f32]> = Vec::with_capacity(train_ids.len());
    let mut y: Vec<f64> = Vec::with_capacity(train_ids.len());
    for id in train_ids {
        rows.push(store.get(id)?);
        y.push(target_value(cfg, id, targets[id])?);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut head = match cfg.init {
        WeightInit::Zeros => LinearHead::zeros(dim, cfg.bias),
        WeightInit::Gaussian { sigma } => {
            let normal = Normal::new(0.0, sigma)
                .map_err(|e| Error::Invalid(format!("init sigma: {e}")))?;
            LinearHead {
                weights: (0..dim).map(|_| normal.sample(&mut rng)).collect(),
                bias: cfg.bias.then_some(0.0),
            }
        }
    };

    let n = rows.len();
    let batch = cfg.batch_size.unwrap_or(n).min(n);
    let temperature = match cfg.loss {
        LossKind::Bce => 1.0,
        LossKind::Distill => cfg.temperature,
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut grad_w = vec![0.0; dim];
    for epoch in 1..=cfg.epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let logits: Vec<f64> = chunk
                .iter()
                .map(|&i| dot(&head.weights, rows[i]) + head.bias.unwrap_or(0.0))
                .collect();
            let batch_targets: Vec<f64> = chunk.iter().map(|&i| y[i]).collect();
            let (loss, grad) = loss::soft_cross_entropy(&logits, &batch_targets, temperature);
            epoch_loss += loss * chunk.len() as f64;

            grad_w.iter_mut().for_each(|g| *g = 0.0);
            for (&i, &g) in chunk.iter().zip(&grad) {
                for (acc, &x) in grad_w.iter_mut().zip(rows[i]) {
                    *acc += g * f64::from(x);
                }
            }
            for (w, g) in head.weights.iter_mut().zip(&grad_w) {
                *w -= cfg.learning_rate * g;
            }
            if let Some(b) = head.bias.as_mut() {
                *b -= cfg.learning_rate * grad.iter().sum::<f64>();
            }
        }
        loss_curve.push((epoch, epoch_loss / n as f64));
    }

    Ok(TrainedModel {
        head,
        config: cfg.clone(),
        loss_curve,
        source: store.source().to_string(),
    })
}

/// Converts a target into the probability the loss kernel expects.
fn target_value(cfg: &TrainConfig, id: &str, target: Target) -> Result<f64> {
    match (cfg.loss, target) {
        (LossKind::Bce, Target::Label(y)) if y <= 1 => Ok(f64::from(y)),
        (LossKind::Bce, Target::Label(y)) => {
            Err(Error::Invalid(format!("fact `{id}` has label {y}, expected 0 or 1")))
        }
        (LossKind::Distill, Target::Score(s)) if s.is_finite() => Ok(sigmoid(s / cfg.temperature)),
        (LossKind::Bce, Target::Score(_)) => Err(Error::Invalid(format!(
            "fact `{id}` has a real-valued score but the loss is bce"
        ))),
        (LossKind::Distill, Target::Label(_)) => Err(Error::Invalid(format!(
            "fact `{id}` has a binary label but the loss is distill"
        ))),
        (LossKind::Distill, Target::Score(s)) => {
            Err(Error::Invalid(format!("fact `{id}` has non-finite score {s}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub logit: f64,
    pub probability: f64,
}

/// Scores every id; the map is ordered by id.
pub fn predict_all<'a>(
    model: &TrainedModel,
    store: &EmbeddingStore,
    ids: impl IntoIterator<Item = &'a str>,
) -> Result<BTreeMap<String, Prediction>> {
    ids.into_iter()
        .map(|id| {
            let logit = model.head.predict_logit(store.get(id)?)?;
            Ok((
                id.to_string(),
                Prediction {
                    logit,
                    probability: sigmoid(logit),
                },
            ))
        })
        .collect()
}

/// On-disk representation of a trained head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub bias: Option<f64>,
    pub weights: Vec<f64>,
    pub config: TrainConfig,
    pub source: String,
    pub loss_curve: Vec<(usize, f64)>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl ModelFile {
    pub fn new(model: &TrainedModel) -> Self {
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: 1,
            dim: model.head.dim(),
            bias: model.head.bias,
            weights: model.head.weights.clone(),
            config: model.config.clone(),
            source: model.source.clone(),
            loss_curve: model.loss_curve.clone(),
            meta: BTreeMap::new(),
        }
    }

    pub fn into_model(self) -> Result<TrainedModel> {
        if self.format != MODEL_FORMAT || self.weights.len() != self.dim {
            return Err(Error::Invalid(format!(
                "not a {MODEL_FORMAT} v1 model with consistent dimension"
            )));
        }
        Ok(TrainedModel {
            head: LinearHead {
                weights: self.weights,
                bias: self.bias,
            },
            config: self.config,
            loss_curve: self.loss_curve,
            source: self.source,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::auc;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn toy_store(rows: &[(&str, Vec<f32>)]) -> EmbeddingStore {
        let mut s = EmbeddingStore::new(rows[0].1.len(), "toy").unwrap();
        for (id, v) in rows {
            s.insert(*id, v.clone()).unwrap();
        }
        s
    }

    /// Gaussian embeddings with labels drawn as 1[sigmoid(w* . e) > u].
    fn planted(n: usize, dim: usize, scale: f64, seed: u64) -> (EmbeddingStore, HashMap<String, Target>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let teacher: Vec<f64> = (0..dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale / (dim as f64).sqrt())
            .collect();
        let mut store = EmbeddingStore::new(dim, "planted").unwrap();
        let mut targets = HashMap::new();
        for i in 0..n {
            let e: Vec<f32> = (0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
            let z: f64 = teacher.iter().zip(&e).map(|(w, &x)| w * f64::from(x)).sum();
            let u: f64 = rng.random();
            let id = format!("f{i:05}");
            targets.insert(id.clone(), Target::Label(u8::from(sigmoid(z) > u)));
            store.insert(id, e).unwrap();
        }
        (store, targets)
    }

    #[test]
    fn zero_head_predicts_zero() {
        let head = LinearHead::zeros(3, true);
        assert_eq!(head.predict_logit(&[1.0, -2.0, 7.5]).unwrap(), 0.0);
    }

    #[test]
    fn dot_plus_bias() {
        let head = LinearHead {
            weights: vec![1.0, 2.0],
            bias: Some(0.5),
        };
        assert_eq!(head.predict_logit(&[3.0, -1.0]).unwrap(), 1.5);
        assert!(head.predict_logit(&[1.0]).is_err());
    }

    #[test]
    fn logit_matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let d = rng.random_range(1..300);
            let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let e: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: f64 = rng.random_range(-1.0..1.0);
            let mut oracle = b;
            for i in 0..d {
                oracle += w[i] * e[i] as f64;
            }
            let head = LinearHead { weights: w, bias: Some(b) };
            assert!((head.predict_logit(&e).unwrap() - oracle).abs() <= 1e-12);
        }
    }

    #[test]
    fn planted_teacher_is_recovered() {
        let (store, targets) = planted(5000, 64, 16.0, 21);
        let ids: Vec<String> = store.iter().map(|(id, _)| id.to_string()).collect();
        let (train_ids, test_ids) = ids.split_at(4000);
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            epochs: 40,
            ..TrainConfig::default()
        };
        let model = train(&store, &targets, train_ids, &cfg).unwrap();
        let preds = predict_all(&model, &store, test_ids.iter().map(String::as_str)).unwrap();
        let scores: Vec<f64> = test_ids.iter().map(|id| preds[id].logit).collect();
        let labels: Vec<u8> = test_ids
            .iter()
            .map(|id| match targets[id] {
                Target::Label(y) => y,
                Target::Score(_) => unreachable!(),
            })
            .collect();
        let auc = auc(&scores, &labels).unwrap();
        assert!(auc >= 95.0, "held-out AUC {auc}");
    }

    #[test]
    fn full_batch_loss_strictly_decreases() {
        let (store, targets) = planted(500, 16, 16.0, 5);
        let ids: Vec<String> = store.iter().map(|(id, _)| id.to_string()).collect();
        let model = train(&store, &targets, &ids, &TrainConfig::default()).unwrap();
        assert_eq!(model.loss_curve.len(), 40);
        for pair in model.loss_curve.windows(2) {
            assert!(pair[1].1 < pair[0].1, "{pair:?}");
        }
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let (store, targets) = planted(300, 8, 4.0, 6);
        let ids: Vec<String> = store.iter().map(|(id, _)| id.to_string()).collect();
        let cfg = TrainConfig {
            batch_size: Some(32),
            init: WeightInit::Gaussian { sigma: 0.1 },
            seed: 99,
            ..TrainConfig::default()
        };
        let a = train(&store, &targets, &ids, &cfg).unwrap();
        let b = train(&store, &targets, &ids, &cfg).unwrap();
        let bits = |m: &TrainedModel| m.head.weights.iter().map(|w| w.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a, b);
        let c = train(&store, &targets, &ids, &TrainConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn coverage_gap_fails_before_training() {
        let store = toy_store(&[("a", vec![1.0]), ("b", vec![-1.0])]);
        let targets: HashMap<String, Target> = [("a".to_string(), Target::Label(1))].into();
        let err = train(&store, &targets, &["a".into(), "b".into()], &TrainConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::Coverage { count: 1, .. }));
    }

    #[test]
    fn mismatched_target_kind_rejected() {
        let store = toy_store(&[("a", vec![1.0])]);
        let targets: HashMap<String, Target> = [("a".to_string(), Target::Score(2.0))].into();
        assert!(train(&store, &targets, &["a".into()], &TrainConfig::default()).is_err());
    }

    #[test]
    fn hyperparameter_range_warnings() {
        let ok = TrainConfig {
            learning_rate: 1e-3,
            epochs: 20,
            ..TrainConfig::default()
        };
        assert!(ok.validate().unwrap().is_empty());
        let odd = TrainConfig {
            learning_rate: 0.1,
            epochs: 5,
            ..TrainConfig::default()
        };
        assert_eq!(odd.validate().unwrap().len(), 2);
        assert!(TrainConfig { epochs: 0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { temperature: 0.0, ..ok }.validate().is_err());
    }

    #[test]
    fn probabilities_follow_logits() {
        let store = toy_store(&[("a", vec![0.0]), ("b", vec![2.0]), ("c", vec![-1.0])]);
        let model = TrainedModel {
            head: LinearHead { weights: vec![1.5], bias: Some(0.0) },
            config: TrainConfig::default(),
            loss_curve: vec![],
            source: "toy".into(),
        };
        let p = predict_all(&model, &store, ["a", "b", "c"]).unwrap();
        assert_eq!(p["a"].probability, 0.5);
        assert!(p["b"].probability > p["a"].probability && p["a"].probability > p["c"].probability);
        assert!(predict_all(&model, &store, ["zz"]).is_err());
    }

    #[test]
    fn batch_prediction_equals_single_prediction() {
        let (store, targets) = planted(200, 12, 4.0, 8);
        let ids: Vec<String> = store.iter().map(|(id, _)| id.to_string()).collect();
        let model = train(&store, &targets, &ids, &TrainConfig::default()).unwrap();
        let batch = predict_all(&model, &store, ids.iter().map(String::as_str)).unwrap();
        for id in &ids {
            let single = model.head.predict_logit(store.get(id).unwrap()).unwrap();
            assert_eq!(batch[id].logit.to_bits(), single.to_bits());
        }
    }

    #[test]
    fn scaling_embeddings_and_weights_cancels() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = 10.0f64;
        for _ in 0..20 {
            let w: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
            // powers of two keep the float products exact
            let e: Vec<f32> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
            let head = LinearHead { weights: w.clone(), bias: Some(0.3) };
            let scaled_e: Vec<f32> = e.iter().map(|&x| x * 8.0).collect();
            let scaled = LinearHead { weights: w.iter().map(|x| x / 8.0).collect(), bias: Some(0.3) };
            assert_eq!(head.predict_logit(&e).unwrap(), scaled.predict_logit(&scaled_e).unwrap());
            // arbitrary scale: equal up to rounding
            let e_c: Vec<f32> = e.iter().map(|&x| (f64::from(x) * c) as f32).collect();
            let head_c = LinearHead { weights: w.iter().map(|x| x / c).collect(), bias: Some(0.3) };
            let diff = head.predict_logit(&e).unwrap() - head_c.predict_logit(&e_c).unwrap();
            assert!(diff.abs() < 1e-6);
        }
    }

    #[test]
    fn model_file_round_trip() {
        let (store, targets) = planted(100, 4, 4.0, 10);
        let ids: Vec<String> = store.iter().map(|(id, _)| id.to_string()).collect();
        let model = train(&store, &targets, &ids, &TrainConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        ModelFile::new(&model).write(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["format"], "peekhead");
        assert_eq!(v["version"], 1);
        assert_eq!(ModelFile::read(&path).unwrap().into_model().unwrap(), model);
    }
}
