//! Knowledge-graph ingestion and dataset construction.
//!
//! Triples are read from tab-separated dumps, downsampled per relation,
//! extended with tail-corrupted negatives, rendered into sentences through
//! relation templates and split into train/val/test.

mod facts;
mod sample;

pub use facts::{
    split_counts,
    assign_splits, inductive_stats, read_facts, read_templates, verbalize, write_facts, Fact,
    InductiveStats, Polarity, RelationTemplate, Split, FACTS_FORMAT,
};
pub use sample::{
    per_relation_count, sample_negatives, stratified_sample, SampleSpec, NEGATIVE_RETRY_FACTOR,
};

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single `(head, relation, tail)` assertion.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl Triple {
    /// Builds a triple after checking that every field is non-empty and free
    /// of tabs and newlines.
    pub fn new(
        head: impl Into<String>,
        relation: impl Into<String>,
        tail: impl Into<String>,
    ) -> Result<Self> {
        let triple = Triple {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        };
        for (name, field) in [
            ("head", &triple.head),
            ("relation", &triple.relation),
            ("tail", &triple.tail),
        ] {
            if field.is_empty() {
                return Err(Error::Invalid(format!("triple {name} is empty")));
            }
            if field.contains(['\t', '\n', '\r']) {
                return Err(Error::Invalid(format!(
                    "triple {name} `{}` contains a tab or newline",
                    field.escape_debug()
                )));
            }
        }
        Ok(triple)
    }
}

/// An immutable, deduplicated set of triples with relation and entity
/// indexes.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    triples: Vec<Triple>,
    edges: HashSet<Triple>,
    by_relation: BTreeMap<String, Vec<usize>>,
    entities: IndexSet<String>,
}

impl KnowledgeGraph {
    /// Builds a graph from triples, keeping the first occurrence of
    /// duplicates.
    pub fn from_triples(triples: impl IntoIterator<Item = Triple>) -> Self {
        let mut graph = KnowledgeGraph::default();
        for triple in triples {
            graph.push(triple);
        }
        graph
    }

    fn push(&mut self, triple: Triple) -> bool {
        if self.edges.contains(&triple) {
            return false;
        }
        let pos = self.triples.len();
        self.by_relation
            .entry(triple.relation.clone())
            .or_default()
            .push(pos);
        self.entities.insert(triple.head.clone());
        self.entities.insert(triple.tail.clone());
        self.edges.insert(triple.clone());
        self.triples.push(triple);
        true
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.edges.contains(triple)
    }

    /// Positions of the triples of each relation, keyed by relation id.
    pub fn relations(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.by_relation
    }

    /// Entities in first-occurrence order.
    pub fn entities(&self) -> &IndexSet<String> {
        &self.entities
    }
}

/// Reads a tab-separated triples file.
///
/// Blank lines are skipped; any other line must have exactly three
/// non-empty fields.
pub fn load_triples(path: impl AsRef<Path>) -> Result<KnowledgeGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut graph = KnowledgeGraph::default();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let triple = Triple::new(fields[0], fields[1], fields[2])
            .map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        graph.push(triple);
    }
    if graph.is_empty() {
        return Err(Error::parse(path, 0, "no triples in file"));
    }
    Ok(graph)
}
