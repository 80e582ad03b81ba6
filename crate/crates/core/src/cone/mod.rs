//! Blind identification of the mixing matrix from a nonnegative residual.
//!
//! Under the stand-alone peak condition every row of `R = W M` is a nonnegative
//! combination of the rows of `M`, and each row of `M` appears (scaled) as a row
//! of `R`. Each row is scored by its distance to the cone spanned by the other
//! rows; the highest scoring rows are the cone's extreme rays and form `M`.

mod nnls;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use nnls::{nnls, NnlsSolution, NNLS_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RowScore<T: Scalar> {
    pub row_index: usize,
    pub score: T,
}

/// Selected residual rows forming the mixing matrix `M` (`n × m`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MixingEstimate<T: Scalar> {
    pub rows: Array2<T>,
    pub source_indices: Vec<usize>,
    pub scores: Vec<T>,
}

impl<T: Scalar> MixingEstimate<T> {
    pub fn n(&self) -> usize {
        self.rows.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConeConfig {
    /// Rows with norm below this fraction of the largest row norm score 0 and
    /// are left out of every other row's basis.
    pub min_norm_frac: f64,
    /// Rows whose directions differ by at most this much (`1 − cos`) are one ray;
    /// only the longest row of each ray is scored.
    pub parallel_tol: f64,
    pub nnls_tol: f64,
}

impl Default for ConeConfig {
    fn default() -> Self {
        Self {
            min_norm_frac: 1e-3,
            parallel_tol: 1e-6,
            nnls_tol: NNLS_TOL,
        }
    }
}

impl ConeConfig {
    /// Settings for measured (noisy) residuals: rows below a tenth of the largest
    /// row norm are ignored and rows within `1 − cos ≤ 1e-2` count as one ray.
    /// With the defaults, noise makes every row of a multi-sample peak explain
    /// its neighbours and random noise rows win the scoring instead.
    pub fn noise_tolerant() -> Self {
        Self {
            min_norm_frac: 0.1,
            parallel_tol: 1e-2,
            nnls_tol: NNLS_TOL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceCount {
    Fixed(usize),
    Auto { max: usize },
}

fn row_norms<T: Scalar>(r: ArrayView2<T>) -> Vec<T> {
    r.rows()
        .into_iter()
        .map(|row| row.dot(&row).sqrt())
        .collect()
}

fn check_residual<T: Scalar>(r: ArrayView2<T>) -> Result<()> {
    if r.nrows() < 2 {
        return Err(Error::InvalidParameter(format!(
            "row scoring needs at least 2 rows, got {}",
            r.nrows()
        )));
    }
    if r.ncols() == 0 {
        return Err(Error::DimensionMismatch("residual has no columns".into()));
    }
    if let Some(v) = r.iter().find(|v| !(**v >= T::zero())) {
        return Err(Error::InvalidParameter(format!(
            "row scoring needs a nonnegative (clamped) residual, found {v}"
        )));
    }
    Ok(())
}

/// Indices of rows whose norm exceeds `frac` times the largest row norm.
fn active_rows<T: Scalar>(norms: &[T], frac: f64) -> Vec<usize> {
    let max = norms.iter().copied().fold(T::zero(), T::max);
    if max == T::zero() {
        return Vec::new();
    }
    let cut = max * T::lit(frac);
    (0..norms.len())
        .filter(|&i| norms[i] >= cut && norms[i] > T::zero())
        .collect()
}

/// Scores each row in `candidates` against the other rows in `candidates`.
fn score_among<T: Scalar>(r: ArrayView2<T>, candidates: &[usize], tol: f64) -> Vec<T> {
    let tol = T::lit(tol);
    candidates
        .par_iter()
        .enumerate()
        .map(|(pos, &l)| {
            let others: Vec<usize> = candidates
                .iter()
                .enumerate()
                .filter(|&(q, _)| q != pos)
                .map(|(_, &i)| i)
                .collect();
            nnls::nnls_subset(r, &others, r.row(l), tol).residual_norm
        })
        .collect()
}

/// One score per row: the residual norm of the best nonnegative fit of the row by
/// all other rows. Near-zero rows (see [`ConeConfig::min_norm_frac`]) score 0.
pub fn score_rows<T: Scalar>(r: ArrayView2<T>, cfg: &ConeConfig) -> Result<Vec<RowScore<T>>> {
    check_residual(r)?;
    let active = active_rows(&row_norms(r), cfg.min_norm_frac);
    let mut scores: Vec<RowScore<T>> = (0..r.nrows())
        .map(|row_index| RowScore {
            row_index,
            score: T::zero(),
        })
        .collect();
    for (&i, s) in active.iter().zip(score_among(r, &active, cfg.nnls_tol)) {
        scores[i].score = s;
    }
    Ok(scores)
}

/// Groups rows into rays: walking rows by decreasing norm, a row joins the first
/// representative within `tol` (in `1 − cos`), otherwise it becomes one.
/// Returns the representatives in increasing row order.
pub fn collapse_parallel_rows<T: Scalar>(r: ArrayView2<T>, rows: &[usize], tol: f64) -> Vec<usize> {
    let norms = row_norms(r);
    let mut order: Vec<usize> = rows
        .iter()
        .copied()
        .filter(|&i| norms[i] > T::zero())
        .collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap().then(a.cmp(&b)));
    let tol = T::lit(tol);
    let mut reps: Vec<usize> = Vec::new();
    for i in order {
        let dup = reps.iter().any(|&j| {
            let cos = r.row(i).dot(&r.row(j)) / (norms[i] * norms[j]);
            T::one() - cos <= tol
        });
        if !dup {
            reps.push(i);
        }
    }
    reps.sort_unstable();
    reps
}

/// The `n` highest scoring rows, ties broken by lower row index, copied from `r`.
pub fn select_vertices<T: Scalar>(
    scores: &[RowScore<T>],
    r: ArrayView2<T>,
    n: usize,
) -> Result<MixingEstimate<T>> {
    let p = r.nrows();
    if n == 0 || n > p {
        return Err(Error::InvalidParameter(format!(
            "source count {n} outside 1..={p}"
        )));
    }
    if scores.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "{} scores for {p} rows",
            scores.len()
        )));
    }
    let mut order: Vec<&RowScore<T>> = scores.iter().collect();
    order.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.row_index.cmp(&b.row_index))
    });
    let picked = &order[..n];
    let source_indices: Vec<usize> = picked.iter().map(|s| s.row_index).collect();
    let mut rows = Array2::zeros((n, r.ncols()));
    for (k, &i) in source_indices.iter().enumerate() {
        rows.row_mut(k).assign(&r.row(i));
    }
    Ok(MixingEstimate {
        rows,
        source_indices,
        scores: picked.iter().map(|s| s.score).collect(),
    })
}

/// Scores below this fraction of the top score count as zero when looking for gaps.
const SCORE_FLOOR: f64 = 1e-12;

/// Position of the largest ratio gap in the descending score sequence, capped at `max_n`.
pub fn estimate_source_count<T: Scalar>(scores: &[RowScore<T>], max_n: usize) -> usize {
    let mut s: Vec<T> = scores.iter().map(|s| s.score).collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    if s.len() < 2 || max_n <= 1 || !(s[0] > T::zero()) {
        return 1;
    }
    let floor = s[0] * T::lit(SCORE_FLOOR);
    let mut best = (1usize, T::one());
    for k in 1..s.len().min(max_n + 1) {
        let ratio = s[k - 1].max(floor) / s[k].max(floor);
        if ratio > best.1 {
            best = (k, ratio);
        }
    }
    best.0
}

/// Result of the full extraction step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ConeExtraction<T: Scalar> {
    pub mixing: MixingEstimate<T>,
    /// Per-row scores; rows absorbed into a longer parallel row score 0.
    pub scores: Vec<RowScore<T>>,
    pub representatives: Vec<usize>,
    pub n: usize,
    pub estimated: bool,
}

/// Collapses parallel rows, scores one row per ray and selects `n` vertices.
pub fn extract_mixing<T: Scalar>(
    r: ArrayView2<T>,
    count: SourceCount,
    cfg: &ConeConfig,
) -> Result<ConeExtraction<T>> {
    check_residual(r)?;
    let p = r.nrows();
    if let SourceCount::Fixed(n) = count {
        if n == 0 || n > p {
            return Err(Error::InvalidParameter(format!(
                "source count {n} outside 1..={p}"
            )));
        }
    }
    let active = active_rows(&row_norms(r), cfg.min_norm_frac);
    let reps = collapse_parallel_rows(r, &active, cfg.parallel_tol);
    let mut scores: Vec<RowScore<T>> = (0..p)
        .map(|row_index| RowScore {
            row_index,
            score: T::zero(),
        })
        .collect();
    if reps.len() == 1 {
        // a single ray: nothing else can represent it
        let row = r.row(reps[0]);
        scores[reps[0]].score = row.dot(&row).sqrt();
    } else {
        for (&i, s) in reps.iter().zip(score_among(r, &reps, cfg.nnls_tol)) {
            scores[i].score = s;
        }
    }
    let (n, estimated) = match count {
        SourceCount::Fixed(n) => (n, false),
        SourceCount::Auto { max } => (estimate_source_count(&scores, max.max(1)), true),
    };
    let mixing = select_vertices(&scores, r, n)?;
    Ok(ConeExtraction {
        mixing,
        scores,
        representatives: reps,
        n,
        estimated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

    #[test]
    fn three_row_example() {
        let r = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let s = score_rows(r.view(), &ConeConfig::default()).unwrap();
        assert!((s[0].score - SQRT_HALF).abs() < 1e-12);
        assert!((s[1].score - SQRT_HALF).abs() < 1e-12);
        assert!(s[2].score.abs() < 1e-12);
        let m = select_vertices(&s, r.view(), 2).unwrap();
        assert_eq!(m.source_indices, vec![0, 1]);
        assert_eq!(m.rows, array![[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn duplicates_and_zero_rows_score_zero() {
        let r = array![[1.0, 2.0], [1.0, 2.0], [0.0, 0.0], [3.0, 0.5]];
        let s = score_rows(r.view(), &ConeConfig::default()).unwrap();
        assert!(s[0].score < 1e-12 && s[1].score < 1e-12);
        assert_eq!(s[2].score, 0.0);
        assert!(s[3].score > 0.1);
    }

    #[test]
    fn score_rows_preconditions() {
        assert!(score_rows(array![[1.0, 2.0]].view(), &ConeConfig::default()).is_err());
        assert!(score_rows(
            array![[1.0, -2.0], [1.0, 1.0]].view(),
            &ConeConfig::default()
        )
        .is_err());
    }

    #[test]
    fn select_vertices_rules() {
        let r = array![[1.0], [2.0], [3.0]];
        let eq: Vec<RowScore<f64>> = (0..3)
            .map(|i| RowScore {
                row_index: i,
                score: 0.5,
            })
            .collect();
        assert_eq!(
            select_vertices(&eq, r.view(), 1).unwrap().source_indices,
            vec![0]
        );
        let all = select_vertices(&eq, r.view(), 3).unwrap();
        assert_eq!(all.rows, r);
        assert!(select_vertices(&eq, r.view(), 4).is_err());
        assert!(select_vertices(&eq, r.view(), 0).is_err());
        let s = vec![
            RowScore {
                row_index: 0,
                score: 0.7,
            },
            RowScore {
                row_index: 1,
                score: 0.7,
            },
            RowScore {
                row_index: 2,
                score: 0.0,
            },
        ];
        assert_eq!(
            select_vertices(&s, r.view(), 2).unwrap().source_indices,
            vec![0, 1]
        );
    }

    fn scores(v: &[f64]) -> Vec<RowScore<f64>> {
        v.iter()
            .enumerate()
            .map(|(i, &score)| RowScore {
                row_index: i,
                score,
            })
            .collect()
    }

    #[test]
    fn source_count_from_largest_gap() {
        assert_eq!(
            estimate_source_count(&scores(&[10.0, 9.5, 0.01, 0.009]), 4),
            2
        );
        assert_eq!(
            estimate_source_count(&scores(&[0.009, 10.0, 0.01, 9.5]), 4),
            2
        );
        assert_eq!(estimate_source_count(&scores(&[3.0, 3.0, 3.0]), 3), 1);
        assert_eq!(estimate_source_count(&scores(&[3.0]), 3), 1);
        assert_eq!(estimate_source_count(&scores(&[0.0, 0.0]), 3), 1);
        assert_eq!(
            estimate_source_count(&scores(&[10.0, 9.5, 0.01, 0.009]), 1),
            1
        );
    }

    #[test]
    fn collapse_keeps_longest_row_per_ray() {
        let r = array![[1.0, 1.0], [2.0, 2.0], [1.0, 0.0], [0.5, 0.5]];
        let reps = collapse_parallel_rows(r.view(), &[0, 1, 2, 3], 1e-9);
        assert_eq!(reps, vec![1, 2]);
    }

    #[test]
    fn extraction_on_repeated_witness_rows() {
        // two sources, each with several stand-alone rows at different intensities
        let m = array![[1.0, 0.2, 0.5], [0.1, 1.0, 0.3]];
        let w = array![
            [1.0, 0.0],
            [0.5, 0.0],
            [0.0, 2.0],
            [0.0, 0.3],
            [0.4, 0.6],
            [0.0, 0.0]
        ];
        let r = w.dot(&m);
        let ex = extract_mixing(
            r.view(),
            SourceCount::Auto { max: 3 },
            &ConeConfig::default(),
        )
        .unwrap();
        assert_eq!(ex.n, 2);
        let mut idx = ex.mixing.source_indices.clone();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 2]);
    }
}
