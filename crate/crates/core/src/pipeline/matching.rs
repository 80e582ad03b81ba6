use std::cmp::Ordering;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectra::{ReferenceLibrary, Spectrum};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryMatch {
    pub name: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub candidate_index: usize,
    /// Sorted by similarity, highest first; equal similarities by name.
    pub ranked: Vec<LibraryMatch>,
}

impl MatchResult {
    pub fn best(&self) -> Option<&LibraryMatch> {
        self.ranked.first()
    }
}

/// Cosine of the angle between two vectors; `None` when either has zero norm.
pub fn cosine_similarity<T: Scalar>(a: ArrayView1<T>, b: ArrayView1<T>) -> Option<f64> {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == T::zero() || nb == T::zero() {
        return None;
    }
    let c = (a.dot(&b) / (na * nb)).to_f64_lossy();
    Some(c.clamp(-1.0, 1.0))
}

/// Ranks every library entry by cosine similarity to `candidate` and keeps the top `top_k`.
pub fn match_library<T: Scalar>(
    candidate_index: usize,
    candidate: &Spectrum<T>,
    library: &ReferenceLibrary<T>,
    top_k: usize,
) -> Result<MatchResult> {
    if &candidate.grid != library.grid() {
        return Err(Error::GridMismatch(
            "candidate is not on the library grid".into(),
        ));
    }
    let c = candidate.view();
    if c.iter().all(|v| *v == T::zero()) {
        return Err(Error::ZeroNorm);
    }
    let mut ranked: Vec<LibraryMatch> = library
        .iter()
        .filter_map(|(name, s)| {
            cosine_similarity(c, s.view()).map(|similarity| LibraryMatch {
                name: name.to_string(),
                similarity,
            })
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.similarity
            .partial_cmp(&a.similarity)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.name.cmp(&b.name))
    });
    ranked.truncate(top_k);
    Ok(MatchResult {
        candidate_index,
        ranked,
    })
}
