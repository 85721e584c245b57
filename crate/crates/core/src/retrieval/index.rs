use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Embedder, EmbeddingVector};
use crate::data::{ColumnUnit, DatabaseSchema, Exemplar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Column(ColumnUnit),
    Exemplar(Exemplar),
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    vector: EmbeddingVector,
    payload: Option<Payload>,
}

/// Exact cosine index. Entries are keyed by id; iteration order is ascending
/// id, which is also the tie-break order of [`VectorIndex::topk`].
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dimension: usize,
    entries: BTreeMap<String, Entry>,
}

#[derive(Serialize, Deserialize)]
struct PersistedEntry {
    id: String,
    vector: EmbeddingVector,
    payload_kind: String,
    #[serde(default)]
    payload: Value,
}

#[derive(Serialize, Deserialize)]
struct Persisted {
    dimension: usize,
    entries: Vec<PersistedEntry>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl VectorIndex {
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Argument("index dimension must be positive".into()));
        }
        Ok(Self { dimension, entries: BTreeMap::new() })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn check_vector(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dimension {
            return Err(Error::Argument(format!("vector has length {}, index dimension is {}", v.len(), self.dimension)));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Argument("vector has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: EmbeddingVector, payload: Option<Payload>) -> Result<()> {
        let id = id.into();
        self.check_vector(&vector)?;
        if self.entries.contains_key(&id) {
            return Err(Error::Argument(format!("duplicate index entry `{id}`")));
        }
        self.entries.insert(id, Entry { vector, payload });
        Ok(())
    }

    pub fn vector(&self, id: &str) -> Option<&EmbeddingVector> {
        self.entries.get(id).map(|e| &e.vector)
    }

    pub fn payload(&self, id: &str) -> Option<&Payload> {
        self.entries.get(id).and_then(|e| e.payload.as_ref())
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// The `k` entries most cosine-similar to `query`, best first; equal
    /// scores are ordered by ascending id. Zero vectors score 0.
    pub fn topk(&self, query: &[f64], k: usize) -> Result<Vec<(String, f64)>> {
        if k == 0 {
            return Err(Error::Argument("k must be positive".into()));
        }
        self.check_vector(query)?;
        let qn = norm(query);
        let mut scored: Vec<(&String, f64)> = self
            .entries
            .iter()
            .map(|(id, e)| {
                let denom = qn * norm(&e.vector);
                let dot: f64 = query.iter().zip(&e.vector).map(|(a, b)| a * b).sum();
                (id, if denom > 0.0 { dot / denom } else { 0.0 })
            })
            .collect();
        // Stable sort over id-ordered input keeps ties in ascending id order.
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        Ok(scored.into_iter().take(k).map(|(id, s)| (id.clone(), s)).collect())
    }

    /// One entry per column, keyed by its `table.column` element.
    pub fn from_schema(schema: &DatabaseSchema, embedder: &dyn Embedder) -> Result<Self> {
        let mut index = Self::new(embedder.dimension())?;
        for col in &schema.columns {
            let v = embedder.embed(&col.retrieval_text())?;
            index.insert(col.element(), v, Some(Payload::Column(col.clone())))?;
        }
        Ok(index)
    }

    /// One entry per exemplar, keyed `ex00000`, `ex00001`, ... in input order.
    pub fn from_exemplars(exemplars: &[Exemplar], embedder: &dyn Embedder) -> Result<Self> {
        let mut index = Self::new(embedder.dimension())?;
        for (i, ex) in exemplars.iter().enumerate() {
            let v = embedder.embed(&ex.question)?;
            index.insert(format!("ex{i:05}"), v, Some(Payload::Exemplar(ex.clone())))?;
        }
        Ok(index)
    }

    pub fn to_json(&self) -> Result<String> {
        let entries = self
            .entries
            .iter()
            .map(|(id, e)| {
                let (payload_kind, payload) = match &e.payload {
                    None => ("none", Value::Null),
                    Some(Payload::Column(c)) => ("column", serde_json::to_value(c).expect("column serializes")),
                    Some(Payload::Exemplar(x)) => ("exemplar", serde_json::to_value(x).expect("exemplar serializes")),
                };
                PersistedEntry { id: id.clone(), vector: e.vector.clone(), payload_kind: payload_kind.into(), payload }
            })
            .collect();
        serde_json::to_string(&Persisted { dimension: self.dimension, entries })
            .map_err(|e| Error::json("vector index", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let persisted: Persisted = serde_json::from_str(text).map_err(|e| Error::json("vector index", e))?;
        let mut index = Self::new(persisted.dimension)?;
        for e in persisted.entries {
            let payload = match e.payload_kind.as_str() {
                "none" => None,
                "column" => Some(Payload::Column(serde_json::from_value(e.payload).map_err(|err| Error::json(&e.id, err))?)),
                "exemplar" => {
                    Some(Payload::Exemplar(serde_json::from_value(e.payload).map_err(|err| Error::json(&e.id, err))?))
                }
                other => return Err(Error::Ingestion(format!("unknown payload_kind `{other}` for `{}`", e.id))),
            };
            index.insert(e.id, e.vector, payload)?;
        }
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub fn topk(index: &VectorIndex, query: &[f64], k: usize) -> Result<Vec<(String, f64)>> {
    index.topk(query, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::HashingEmbedder;

    fn small() -> VectorIndex {
        let mut idx = VectorIndex::new(2).unwrap();
        idx.insert("b", vec![1.0, 0.0], None).unwrap();
        idx.insert("a", vec![2.0, 0.0], None).unwrap();
        idx.insert("c", vec![0.0, 1.0], None).unwrap();
        idx
    }

    #[test]
    fn identical_vector_ranks_first() {
        let idx = small();
        let r = idx.topk(&[0.0, 1.0], 1).unwrap();
        assert_eq!(r[0].0, "c");
        assert!((r[0].1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let r = small().topk(&[1.0, 0.0], 3).unwrap();
        let ids: Vec<_> = r.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn k_larger_than_index_truncates() {
        assert_eq!(small().topk(&[1.0, 1.0], 10).unwrap().len(), 3);
    }

    #[test]
    fn argument_errors() {
        let mut idx = small();
        assert!(idx.topk(&[1.0], 1).is_err());
        assert!(idx.topk(&[1.0, 0.0], 0).is_err());
        assert!(idx.insert("a", vec![0.0, 0.0], None).is_err());
        assert!(idx.insert("z", vec![f64::NAN, 0.0], None).is_err());
    }

    #[test]
    fn persistence_round_trip() {
        let e = HashingEmbedder::new(16, 3).unwrap();
        let ex = vec![Exemplar::new("q one", "r", "SELECT 1").unwrap(), Exemplar::new("q two", "r", "SELECT 2").unwrap()];
        let mut idx = VectorIndex::from_exemplars(&ex, &e).unwrap();
        idx.insert("col", e.embed("t a").unwrap(), Some(Payload::Column(ColumnUnit::new("d", "t", "a", "INT"))))
            .unwrap();
        idx.insert("bare", e.embed("x").unwrap(), None).unwrap();
        let back = VectorIndex::from_json(&idx.to_json().unwrap()).unwrap();
        assert_eq!(back, idx);
    }
}
