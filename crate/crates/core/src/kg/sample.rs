use std::collections::HashSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{KnowledgeGraph, Triple};
use crate::error::{Error, Result};
use crate::hashing::hash64;

/// Negative draws allowed per requested negative, as a multiple of the
/// entity count.
pub const NEGATIVE_RETRY_FACTOR: usize = 100;

/// How to downsample a graph and split the resulting facts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub fraction: f64,
    pub negatives_per_positive: usize,
    pub seed: u64,
    /// `(train, val, test)` fractions.
    pub splits: (f64, f64, f64),
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec {
            fraction: 0.001,
            negatives_per_positive: 0,
            seed: 0,
            splits: (0.8, 0.1, 0.1),
        }
    }
}

impl SampleSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Invalid(format!(
                "sample fraction {} outside (0, 1]",
                self.fraction
            )));
        }
        let (a, b, c) = self.splits;
        if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Invalid(format!(
                "split fractions {:?} must each lie in [0, 1]",
                self.splits
            )));
        }
        if (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!(
                "split fractions {:?} must sum to 1",
                self.splits
            )));
        }
        Ok(())
    }
}

/// Number of triples kept for a relation with `n` triples.
///
/// `round(n * fraction)`, but never less than one for a relation that is
/// present.
pub fn per_relation_count(n: usize, fraction: f64) -> usize {
    if n == 0 {
        return 0;
    }
    ((n as f64 * fraction).round() as usize).clamp(1, n)
}

/// Downsamples `g` relation by relation so relation proportions survive.
///
/// Each relation draws its triples uniformly without replacement from an
/// RNG keyed on the seed and the relation id, so one relation's sample does
/// not depend on the others. Output is sorted by relation id, then by
/// original position.
pub fn stratified_sample(g: &KnowledgeGraph, spec: &SampleSpec) -> Result<KnowledgeGraph> {
    if !(spec.fraction > 0.0 && spec.fraction <= 1.0) {
        return Err(Error::Invalid(format!(
            "sample fraction {} outside (0, 1]",
            spec.fraction
        )));
    }
    let mut out = Vec::new();
    for (relation, positions) in g.relations() {
        let n = positions.len();
        let m = per_relation_count(n, spec.fraction);
        let mut rng = relation_rng(spec.seed, relation);
        let mut picked: Vec<usize> = index::sample(&mut rng, n, m).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|i| g.triples()[positions[i]].clone()));
    }
    Ok(KnowledgeGraph::from_triples(out))
}

fn relation_rng(seed: u64, relation: &str) -> ChaCha8Rng {
    let mut key = seed.to_le_bytes().to_vec();
    key.extend_from_slice(relation.as_bytes());
    ChaCha8Rng::seed_from_u64(hash64(&key))
}

/// Draws `k` tail-corrupted negatives `(h, r, t')` for every triple of `g`.
///
/// `t'` is uniform over `full`'s entities and rejected while it equals the
/// true tail, forms an edge of `full`, or was already emitted. Negatives are
/// grouped by source triple: entries `i*k .. (i+1)*k` belong to
/// `g.triples()[i]`.
pub fn sample_negatives(
    g: &KnowledgeGraph,
    full: &KnowledgeGraph,
    k: usize,
    seed: u64,
) -> Result<Vec<Triple>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let entities = full.entities();
    if entities.is_empty() {
        return Err(Error::Invalid("negative sampling needs a non-empty graph".into()));
    }
    let max_attempts = NEGATIVE_RETRY_FACTOR * entities.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut emitted: HashSet<Triple> = HashSet::new();
    let mut out = Vec::with_capacity(g.len() * k);

    for pos in g.triples() {
        for _ in 0..k {
            let mut attempts = 0;
            let negative = loop {
                if attempts == max_attempts {
                    return Err(Error::NegativesExhausted {
                        head: pos.head.clone(),
                        relation: pos.relation.clone(),
                        tail: pos.tail.clone(),
                        attempts,
                    });
                }
                attempts += 1;
                let tail = &entities[rng.random_range(0..entities.len())];
                if *tail == pos.tail {
                    continue;
                }
                let candidate = Triple {
                    head: pos.head.clone(),
                    relation: pos.relation.clone(),
                    tail: tail.clone(),
                };
                if full.contains(&candidate) || emitted.contains(&candidate) {
                    continue;
                }
                break candidate;
            };
            emitted.insert(negative.clone());
            out.push(negative);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn graph_with(counts: &[(&str, usize)]) -> KnowledgeGraph {
        let mut triples = Vec::new();
        for (rel, n) in counts {
            for i in 0..*n {
                triples.push(Triple::new(format!("h{i}"), *rel, format!("t{i}")).unwrap());
            }
        }
        KnowledgeGraph::from_triples(triples)
    }

    fn spec(fraction: f64) -> SampleSpec {
        SampleSpec {
            fraction,
            seed: 11,
            ..SampleSpec::default()
        }
    }

    fn count_by_relation(g: &KnowledgeGraph) -> BTreeMap<String, usize> {
        g.relations()
            .iter()
            .map(|(r, p)| (r.clone(), p.len()))
            .collect()
    }

    #[test]
    fn tiny_fraction_keeps_one_triple() {
        let g = graph_with(&[("r", 1000)]);
        let s = stratified_sample(&g, &spec(0.001)).unwrap();
        assert_eq!(s.len(), 1);
        // below one half still keeps the relation represented
        let g = graph_with(&[("r", 100), ("q", 3)]);
        let s = stratified_sample(&g, &spec(0.001)).unwrap();
        assert_eq!(count_by_relation(&s)["q"], 1);
    }

    #[test]
    fn full_fraction_is_identity_on_sets() {
        let g = graph_with(&[("b", 7), ("a", 5)]);
        let s = stratified_sample(&g, &spec(1.0)).unwrap();
        let a: HashSet<_> = g.triples().iter().collect();
        let b: HashSet<_> = s.triples().iter().collect();
        assert_eq!(a, b);
        // sorted by relation, then original position
        assert_eq!(s.triples()[0].relation, "a");
        assert_eq!(s.triples()[0].head, "h0");
    }

    #[test]
    fn proportions_are_preserved() {
        // enumerate the sampler output and count per relation
        let g = graph_with(&[("big", 900), ("small", 100)]);
        let s = stratified_sample(&g, &spec(0.1)).unwrap();
        let counts = count_by_relation(&s);
        assert_eq!(counts["big"], 90);
        assert_eq!(counts["small"], 10);
        assert!(s.triples().iter().all(|t| g.contains(t)));
    }

    #[test]
    fn invalid_fraction_rejected() {
        let g = graph_with(&[("r", 10)]);
        assert!(stratified_sample(&g, &spec(0.0)).is_err());
        assert!(stratified_sample(&g, &spec(1.5)).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = graph_with(&[("r", 500), ("q", 77)]);
        let a = stratified_sample(&g, &spec(0.05)).unwrap();
        let b = stratified_sample(&g, &spec(0.05)).unwrap();
        assert_eq!(a.triples(), b.triples());
        let c = stratified_sample(&g, &SampleSpec { seed: 12, ..spec(0.05) }).unwrap();
        assert_ne!(a.triples(), c.triples());
    }

    #[test]
    fn zero_negatives_is_empty() {
        let g = graph_with(&[("r", 5)]);
        assert!(sample_negatives(&g, &g, 0, 1).unwrap().is_empty());
    }

    #[test]
    fn single_negative_avoids_true_tail() {
        let mut triples = vec![Triple::new("h", "r", "e0").unwrap()];
        for i in 1..100 {
            triples.push(Triple::new(format!("x{i}"), "s", format!("e{i}")).unwrap());
        }
        let full = KnowledgeGraph::from_triples(triples);
        let pos = KnowledgeGraph::from_triples(vec![Triple::new("h", "r", "e0").unwrap()]);
        let neg = sample_negatives(&pos, &full, 1, 3).unwrap();
        assert_eq!(neg.len(), 1);
        assert!(!full.contains(&neg[0]));
        assert_eq!((neg[0].head.as_str(), neg[0].relation.as_str()), ("h", "r"));
    }

    #[test]
    fn many_negatives_pass_membership_oracle() {
        let mut triples = Vec::new();
        for i in 0..50 {
            triples.push(Triple::new(format!("h{i}"), "r", format!("t{}", i % 7)).unwrap());
            triples.push(Triple::new(format!("h{i}"), "r", format!("t{}", (i + 1) % 7)).unwrap());
        }
        let full = KnowledgeGraph::from_triples(triples);
        let pos = KnowledgeGraph::from_triples(full.triples().iter().step_by(2).cloned());
        assert_eq!(pos.len(), 50);
        let neg = sample_negatives(&pos, &full, 10, 5).unwrap();
        assert_eq!(neg.len(), 500);
        // brute-force membership check over the raw edge list
        for n in &neg {
            assert!(full.triples().iter().all(|t| t != n));
        }
        for (i, p) in pos.triples().iter().enumerate() {
            for n in &neg[i * 10..(i + 1) * 10] {
                assert_eq!((&n.head, &n.relation), (&p.head, &p.relation));
                assert_ne!(n.tail, p.tail);
            }
        }
    }

    #[test]
    fn exhausted_pair_fails_loudly() {
        // every entity is a true tail of (a, r, .)
        let triples = vec![
            Triple::new("a", "r", "a").unwrap(),
            Triple::new("a", "r", "b").unwrap(),
        ];
        let full = KnowledgeGraph::from_triples(triples);
        let err = sample_negatives(&full, &full, 1, 0).unwrap_err();
        match err {
            Error::NegativesExhausted { head, attempts, .. } => {
                assert_eq!(head, "a");
                assert_eq!(attempts, NEGATIVE_RETRY_FACTOR * 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn spec_validation() {
        assert!(SampleSpec::default().validate().is_ok());
        let bad = SampleSpec {
            splits: (0.8, 0.1, 0.2),
            ..SampleSpec::default()
        };
        assert!(bad.validate().is_err());
        let bad = SampleSpec {
            fraction: 0.0,
            ..SampleSpec::default()
        };
        assert!(bad.validate().is_err());
    }
}
