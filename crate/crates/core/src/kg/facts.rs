use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SampleSpec, Triple};
use crate::error::{Error, Result};
use crate::hashing::hash128_hex;

/// `format` tag of the facts file header line.
pub const FACTS_FORMAT: &str = "peekfacts";

const HEAD: &str = "{h}";
const TAIL: &str = "{t}";

/// A sentence pattern for one relation with one `{h}` and one `{t}` slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationTemplate {
    relation: String,
    template: String,
    // literal pieces around the two slots
    pieces: [String; 3],
    head_first: bool,
}

impl RelationTemplate {
    pub fn new(relation: impl Into<String>, template: impl Into<String>) -> Result<Self> {
        let relation = relation.into();
        let template = template.into();
        let (h_count, t_count) = (
            template.matches(HEAD).count(),
            template.matches(TAIL).count(),
        );
        if h_count != 1 || t_count != 1 {
            return Err(Error::Invalid(format!(
                "template for `{relation}` must contain exactly one {HEAD} and one {TAIL}, found {h_count} and {t_count}"
            )));
        }
        let h = template.find(HEAD).unwrap();
        let t = template.find(TAIL).unwrap();
        let head_first = h < t;
        let (first, second) = if head_first { (h, t) } else { (t, h) };
        let pieces = [
            template[..first].to_string(),
            template[first + 3..second].to_string(),
            template[second + 3..].to_string(),
        ];
        Ok(RelationTemplate {
            relation,
            template,
            pieces,
            head_first,
        })
    }

    pub fn relation(&self) -> &str {
        &self.relation
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    /// Substitutes both slots in one pass, so entity names containing `{h}`
    /// or `{t}` are copied literally.
    pub fn render(&self, head: &str, tail: &str) -> String {
        let (a, b) = if self.head_first { (head, tail) } else { (tail, head) };
        let [p0, p1, p2] = &self.pieces;
        let mut out = String::with_capacity(p0.len() + p1.len() + p2.len() + a.len() + b.len());
        out.push_str(p0);
        out.push_str(a);
        out.push_str(p1);
        out.push_str(b);
        out.push_str(p2);
        out
    }
}

/// Reads `relation<TAB>template` lines. Blank lines and `#` comments are
/// skipped.
pub fn read_templates(path: impl AsRef<Path>) -> Result<HashMap<String, RelationTemplate>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (relation, template) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, idx + 1, "expected relation<TAB>template"))?;
        let tpl = RelationTemplate::new(relation, template)
            .map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
        if out.insert(relation.to_string(), tpl).is_some() {
            return Err(Error::parse(
                path,
                idx + 1,
                format!("duplicate template for relation `{relation}`"),
            ));
        }
    }
    Ok(out)
}

/// Renders a triple through its relation's template.
pub fn verbalize(triple: &Triple, templates: &HashMap<String, RelationTemplate>) -> Result<String> {
    templates
        .get(&triple.relation)
        .map(|t| t.render(&triple.head, &triple.tail))
        .ok_or_else(|| Error::MissingTemplate(triple.relation.clone()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// A verbalized fact with a stable id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fact {
    pub id: String,
    #[serde(flatten)]
    pub triple: Triple,
    pub text: String,
    pub polarity: Polarity,
    pub split: Option<Split>,
    /// Id of the positive fact a negative was corrupted from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl Fact {
    pub fn new(triple: Triple, text: String, polarity: Polarity) -> Self {
        Fact {
            id: Fact::id_for(&triple, polarity),
            triple,
            text,
            polarity,
            split: None,
            source: None,
        }
    }

    pub fn id_for(triple: &Triple, polarity: Polarity) -> String {
        hash128_hex(&[
            &triple.head,
            &triple.relation,
            &triple.tail,
            polarity.as_str(),
        ])
    }
}

/// Shuffles the split units with the spec seed and cuts them at
/// `floor(n*train)` and `floor(n*train) + floor(n*val)`; the rest is test.
///
/// Units are the positive facts (plus any negative whose source is not in
/// the list). Negatives take their source's split. Input order is kept.
pub fn assign_splits(mut facts: Vec<Fact>, spec: &SampleSpec) -> Result<Vec<Fact>> {
    spec.validate()?;
    let ids: HashSet<&str> = facts.iter().map(|f| f.id.as_str()).collect();
    let mut units: Vec<usize> = facts
        .iter()
        .enumerate()
        .filter(|(_, f)| match &f.source {
            Some(src) if f.polarity == Polarity::Negative => !ids.contains(src.as_str()),
            _ => true,
        })
        .map(|(i, _)| i)
        .collect();
    if units.len() < 3 {
        return Err(Error::Invalid(format!(
            "need at least 3 facts to populate train/val/test, got {}",
            units.len()
        )));
    }

    let (n_train, n_val) = split_counts(units.len(), spec.splits);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    units.shuffle(&mut rng);

    let mut by_id: HashMap<String, Split> = HashMap::with_capacity(units.len());
    for (rank, &i) in units.iter().enumerate() {
        let split = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        facts[i].split = Some(split);
        by_id.insert(facts[i].id.clone(), split);
    }
    for fact in facts.iter_mut().filter(|f| f.split.is_none()) {
        let src = fact.source.as_deref().unwrap_or_default();
        fact.split = by_id.get(src).copied();
    }
    Ok(facts)
}

/// `(train, val)` counts for `n` units under the floor-floor-remainder rule.
pub fn split_counts(n: usize, splits: (f64, f64, f64)) -> (usize, usize) {
    // the epsilon absorbs products like 10 * 0.7 = 6.999...
    let cut = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
    let train = cut(splits.0).min(n);
    let val = cut(splits.1).min(n - train);
    (train, val)
}

/// Entity counts per split and the number of test entities unseen in train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InductiveStats {
    pub train_entities: usize,
    pub val_entities: usize,
    pub test_entities: usize,
    pub test_minus_train: usize,
}

pub fn inductive_stats(facts: &[Fact]) -> InductiveStats {
    let mut per_split: BTreeMap<Split, HashSet<&str>> = BTreeMap::new();
    for fact in facts {
        if let Some(split) = fact.split {
            let set = per_split.entry(split).or_default();
            set.insert(&fact.triple.head);
            set.insert(&fact.triple.tail);
        }
    }
    let empty = HashSet::new();
    let get = |s| per_split.get(&s).unwrap_or(&empty);
    let (train, val, test) = (get(Split::Train), get(Split::Val), get(Split::Test));
    InductiveStats {
        train_entities: train.len(),
        val_entities: val.len(),
        test_entities: test.len(),
        test_minus_train: test.difference(train).count(),
    }
}

#[derive(Serialize, Deserialize)]
struct FactsHeader {
    format: String,
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

/// Writes facts as JSON lines. When `config_hash` is given, a header line
/// `{"format":"peekfacts",...}` precedes the facts.
pub fn write_facts(path: impl AsRef<Path>, facts: &[Fact], config_hash: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |line: String| writeln!(w, "{line}").map_err(|e| Error::io(path, e));
    if let Some(hash) = config_hash {
        write(serde_json::to_string(&FactsHeader {
            format: FACTS_FORMAT.into(),
            version: 1,
            config_hash: Some(hash.into()),
        })?)?;
    }
    for fact in facts {
        write(serde_json::to_string(fact)?)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_facts(path: impl AsRef<Path>) -> Result<Vec<Fact>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if idx == 0 && line.contains("\"format\"") {
            if let Ok(header) = serde_json::from_str::<FactsHeader>(line) {
                if header.format != FACTS_FORMAT {
                    return Err(Error::parse(path, 1, format!("unexpected format `{}`", header.format)));
                }
                continue;
            }
        }
        let fact: Fact =
            serde_json::from_str(line).map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
        out.push(fact);
    }
    Ok(out)
}
