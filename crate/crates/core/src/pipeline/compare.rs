//! Side-by-side run of cone + Bregman extraction and the NMF baseline.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::cls::ResidualMatrix;
use crate::cone::{extract_mixing, ConeConfig, SourceCount};
use crate::error::{Error, Result};
use crate::nmf::{nmf_factorize, NmfConfig};
use crate::sparse::{recover_sources, BregmanConfig};

use super::matching::cosine_similarity;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub n: usize,
    /// `p × n` sources from the cone + Bregman path.
    pub cone_sources: Array2<f64>,
    /// `p × n` sources from NMF.
    pub nmf_sources: Array2<f64>,
    pub nmf_objective: f64,
    /// Per truth column, the best cosine among the recovered columns.
    pub cone_cosines: Option<Vec<f64>>,
    pub nmf_cosines: Option<Vec<f64>>,
}

/// For each column of `truth`, the largest cosine with any column of `est`
/// (0 when every pairing involves a zero column).
pub fn best_column_cosines(est: ArrayView2<f64>, truth: ArrayView2<f64>) -> Vec<f64> {
    truth
        .columns()
        .into_iter()
        .map(|t| {
            est.columns()
                .into_iter()
                .filter_map(|e| cosine_similarity(e, t))
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Extracts `count` sources from `r` both ways. NMF uses the same `n` the cone
/// step settled on.
pub fn compare_nmf(
    r: &ResidualMatrix<f64>,
    count: SourceCount,
    cone: &ConeConfig,
    bregman: &BregmanConfig<f64>,
    nmf_seed: u64,
    truth: Option<ArrayView2<f64>>,
) -> Result<BaselineComparison> {
    if let Some(t) = &truth {
        if t.nrows() != r.rows() {
            return Err(Error::DimensionMismatch(format!(
                "truth has {} rows, residual has {}",
                t.nrows(),
                r.rows()
            )));
        }
    }
    let ext = extract_mixing(r.view(), count, cone)?;
    let w = recover_sources(r, &ext.mixing, bregman)?;
    let nmf = nmf_factorize(r, &NmfConfig::new(ext.n, nmf_seed))?;
    let nmf_objective = nmf.objective_history.last().copied().unwrap_or(0.0);
    Ok(BaselineComparison {
        n: ext.n,
        cone_cosines: truth.map(|t| best_column_cosines(w.values.view(), t)),
        nmf_cosines: truth.map(|t| best_column_cosines(nmf.w.view(), t)),
        cone_sources: w.values,
        nmf_sources: nmf.w,
        nmf_objective,
    })
}
