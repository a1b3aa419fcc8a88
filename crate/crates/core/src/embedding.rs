//! Read-only fact embeddings produced by external encoders.
//!
//! Two on-disk formats are supported. The canonical one is JSON lines: a
//! header `{"format":"peekvec","version":1,"dim":D,"source":NAME,"layer":L?}`
//! followed by one `{"id":ID,"v":[...]}` per record. The binary one starts
//! with the magic `PEEKVEC1` and a little-endian `u32` dimension, then holds
//! records of `u16` id length, id bytes and `D` little-endian `f32`s.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VECTOR_FORMAT: &str = "peekvec";
pub const BINARY_MAGIC: &[u8; 8] = b"PEEKVEC1";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    source: String,
    layer: Option<u32>,
    vectors: IndexMap<String, Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct CoverageReport {
    pub missing: Vec<String>,
}

impl CoverageReport {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.missing.is_empty() {
            Ok(())
        } else {
            Err(Error::coverage(&self.missing))
        }
    }
}

impl EmbeddingStore {
    pub fn new(dim: usize, source: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("embedding dimension must be positive".into()));
        }
        Ok(EmbeddingStore {
            dim,
            source: source.into(),
            layer: None,
            vectors: IndexMap::new(),
        })
    }

    pub fn with_layer(mut self, layer: Option<u32>) -> Self {
        self.layer = layer;
        self
    }

    /// Adds a vector after checking its length, finiteness and id
    /// uniqueness.
    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::Invalid(format!(
                "vector `{id}` has length {}, expected {}",
                vector.len(),
                self.dim
            )));
        }
        if let Some(i) = vector.iter().position(|x| !x.is_finite()) {
            return Err(Error::Invalid(format!(
                "vector `{id}` has a non-finite component at {i}"
            )));
        }
        if self.vectors.contains_key(&id) {
            return Err(Error::Invalid(format!("duplicate vector id `{id}`")));
        }
        self.vectors.insert(id, vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn layer(&self) -> Option<u32> {
        self.layer
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.vectors.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Result<&[f32]> {
        self.vectors
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    /// Records in insertion (file) order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// A copy with every non-zero vector scaled to unit L2 norm.
    pub fn l2_normalized(&self) -> Self {
        let vectors = self
            .vectors
            .iter()
            .map(|(id, v)| {
                let norm = v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
                let scaled = if norm > 0.0 {
                    v.iter().map(|&x| (f64::from(x) / norm) as f32).collect()
                } else {
                    v.clone()
                };
                (id.clone(), scaled)
            })
            .collect();
        EmbeddingStore {
            vectors,
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> Self {
        EmbeddingStore {
            dim: self.dim,
            source: self.source.clone(),
            layer: self.layer,
            vectors: IndexMap::new(),
        }
    }

    /// Ids from `ids` that have no vector, in the order given.
    pub fn coverage_check<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> CoverageReport {
        CoverageReport {
            missing: ids
                .into_iter()
                .filter(|id| !self.contains(id))
                .map(str::to_string)
                .collect(),
        }
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let header = VectorHeader {
            format: VECTOR_FORMAT.into(),
            version: 1,
            dim: self.dim,
            source: self.source.clone(),
            layer: self.layer,
        };
        let io = |e| Error::io(path, e);
        writeln!(w, "{}", serde_json::to_string(&header)?).map_err(io)?;
        for (id, v) in &self.vectors {
            let rec = VectorRecord {
                id: id.clone(),
                v: v.clone(),
            };
            writeln!(w, "{}", serde_json::to_string(&rec)?).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(12 + self.len() * (self.dim * 4 + 34));
        buf.extend_from_slice(BINARY_MAGIC);
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for (id, v) in &self.vectors {
            let len = u16::try_from(id.len())
                .map_err(|_| Error::Invalid(format!("id `{id}` too long for binary format")))?;
            buf.extend_from_slice(&len.to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct VectorHeader {
    format: String,
    version: u32,
    dim: usize,
    source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    layer: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VectorRecord {
    id: String,
    v: Vec<f32>,
}

/// Loads a vector file, detecting the binary format by its magic bytes.
pub fn load_vectors(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(BINARY_MAGIC) {
        load_binary(path, &bytes)
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::parse(path, 0, "vector file is neither PEEKVEC1 nor UTF-8"))?;
        load_jsonl(path, &text)
    }
}

fn load_jsonl(path: &Path, text: &str) -> Result<EmbeddingStore> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 0, "empty vector file"))?;
    let header: VectorHeader = serde_json::from_str(first)
        .map_err(|e| Error::parse(path, 1, format!("bad header: {e}")))?;
    if header.format != VECTOR_FORMAT || header.version != 1 {
        return Err(Error::parse(
            path,
            1,
            format!("unsupported format {} v{}", header.format, header.version),
        ));
    }
    let mut store = EmbeddingStore::new(header.dim, header.source)
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .with_layer(header.layer);
    for (record, (idx, line)) in lines.enumerate() {
        let rec: VectorRecord = serde_json::from_str(line).map_err(|e| {
            Error::parse(path, idx + 1, format!("record {record}: {e}"))
        })?;
        store
            .insert(rec.id, rec.v)
            .map_err(|e| Error::parse(path, idx + 1, format!("record {record}: {e}")))?;
    }
    Ok(store)
}

fn load_binary(path: &Path, bytes: &[u8]) -> Result<EmbeddingStore> {
    let source = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut cursor = &bytes[BINARY_MAGIC.len()..];
    let truncated = |record: usize| Error::parse(path, 0, format!("record {record}: truncated"));
    let dim = take(&mut cursor, 4).ok_or_else(|| truncated(0))?;
    let dim = u32::from_le_bytes(dim.try_into().unwrap()) as usize;
    let mut store = EmbeddingStore::new(dim, source)?;
    let mut record = 0;
    while !cursor.is_empty() {
        let len = take(&mut cursor, 2).ok_or_else(|| truncated(record))?;
        let len = u16::from_le_bytes(len.try_into().unwrap()) as usize;
        let id = take(&mut cursor, len).ok_or_else(|| truncated(record))?;
        let id = std::str::from_utf8(id)
            .map_err(|_| Error::parse(path, 0, format!("record {record}: id is not UTF-8")))?;
        let raw = take(&mut cursor, dim * 4).ok_or_else(|| truncated(record))?;
        let v = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store
            .insert(id, v)
            .map_err(|e| Error::parse(path, 0, format!("record {record}: {e}")))?;
        record += 1;
    }
    Ok(store)
}

fn take<'a>(cursor: &mut &'a [u8], n: usize) -> Option<&'a [u8]> {
    if cursor.len() < n {
        return None;
    }
    let (head, rest) = cursor.split_at(n);
    *cursor = rest;
    Some(head)
}
