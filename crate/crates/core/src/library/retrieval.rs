use std::cmp::Ordering;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{LibraryError, OperatorIndex};
use crate::embedding::{cosine_similarity, EmbeddingVector, Scalar};
use crate::gateway::Gateway;

/// A retrieval hit, detached from the index so it can live in a context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedOperator {
    pub id: String,
    pub sub_category: String,
    pub description: String,
    pub script_path: PathBuf,
    pub similarity: f64,
}

/// Entries with similarity ≥ `threshold`, best first, ties by ascending id,
/// at most `k`. Returns `(entry position, similarity)` pairs.
pub fn rank<F: Scalar>(
    query: &EmbeddingVector<F>,
    index: &OperatorIndex<F>,
    k: usize,
    threshold: F,
) -> Result<Vec<(usize, F)>, LibraryError> {
    let mut hits = Vec::new();
    for (pos, entry) in index.entries().iter().enumerate() {
        let vector = entry
            .embedding
            .as_ref()
            .ok_or_else(|| LibraryError::NotEmbedded(entry.id.clone()))?;
        let sim = cosine_similarity(query, vector)?;
        if sim >= threshold {
            hits.push((pos, sim));
        }
    }
    let entries = index.entries();
    hits.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| entries[a.0].id.cmp(&entries[b.0].id))
    });
    hits.truncate(k);
    Ok(hits)
}

fn detach<F: Scalar>(index: &OperatorIndex<F>, hits: Vec<(usize, F)>) -> Vec<RetrievedOperator> {
    hits.into_iter()
        .map(|(pos, sim)| {
            let e = &index.entries()[pos];
            RetrievedOperator {
                id: e.id.clone(),
                sub_category: e.sub_category.clone(),
                description: e.description.clone(),
                script_path: e.script_path.clone(),
                similarity: sim.to_f64().unwrap_or(0.0),
            }
        })
        .collect()
}

/// Top-`k` operators whose description similarity to `query` reaches `threshold`.
pub fn retrieve_single<F: Scalar>(
    query: &str,
    index: &OperatorIndex<F>,
    k: usize,
    threshold: f64,
    gateway: &Gateway,
) -> Result<Vec<RetrievedOperator>, LibraryError> {
    let embedded = gateway.embed(query)?.cast::<F>();
    let threshold = F::from(threshold).unwrap_or_else(F::zero);
    Ok(detach(index, rank(&embedded, index, k, threshold)?))
}

/// Union of per-step retrievals, de-duplicated by id, ordered by step then rank.
pub fn retrieve_multi<F: Scalar, S: AsRef<str>>(
    step_descriptions: &[S],
    index: &OperatorIndex<F>,
    k: usize,
    threshold: f64,
    gateway: &Gateway,
) -> Result<Vec<RetrievedOperator>, LibraryError> {
    let mut union: Vec<RetrievedOperator> = Vec::new();
    for step in step_descriptions {
        for hit in retrieve_single(step.as_ref(), index, k, threshold, gateway)? {
            if !union.iter().any(|u| u.id == hit.id) {
                union.push(hit);
            }
        }
    }
    Ok(union)
}
