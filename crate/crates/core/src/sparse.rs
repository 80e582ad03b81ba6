//! Recovery of the source matrix `W` from `R ≈ W M`, one row at a time.
//!
//! Rows of `W` are sparse even though its columns are not, so each row solves a
//! nonnegative ℓ1-regularised fit `min μ‖u‖₁ + ½‖f − B u‖²` with `u = (Wⁱ)ᵀ`,
//! `f = (Rⁱ)ᵀ` and `B = Mᵀ`, using the linearized Bregman iteration
//!
//! ```text
//! v ← v − Bᵀ(B u − f)
//! u ← δ · shrink₊(v, μ)
//! ```
//!
//! started from `u = v = 0`. Run to convergence on a consistent system the
//! iteration returns the minimiser of `μ‖u‖₁ + ‖u‖²/(2δ)` subject to `B u = f`,
//! `u ≥ 0`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cls::ResidualMatrix;
use crate::cone::{nnls, MixingEstimate};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, spectral_norm};
use crate::scalar::Scalar;
use crate::spectra::{SpectralGrid, Spectrum};

/// One-sided soft threshold: `v − μ` above `μ`, zero otherwise (including `v = μ`).
#[inline]
pub fn shrink_plus<T: Scalar>(v: T, mu: T) -> T {
    if v > mu {
        v - mu
    } else {
        T::zero()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
#[serde(default)]
pub struct BregmanConfig<T: Scalar> {
    pub mu: T,
    /// Step size; `None` uses `1/‖B‖₂²` from 20 power iterations.
    pub delta: Option<T>,
    pub max_iter: usize,
    /// Stop once `‖B u − f‖₂ / ‖f‖₂ ≤ fit_tol`.
    pub fit_tol: T,
}

impl<T: Scalar> Default for BregmanConfig<T> {
    fn default() -> Self {
        Self {
            mu: T::lit(0.09),
            delta: None,
            max_iter: 20_000,
            fit_tol: T::lit(1e-4),
        }
    }
}

impl<T: Scalar> BregmanConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > T::zero()) {
            return Err(Error::InvalidParameter("mu must be > 0".into()));
        }
        if let Some(d) = self.delta {
            if !(d > T::zero()) {
                return Err(Error::InvalidParameter("delta must be > 0".into()));
            }
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be ≥ 1".into()));
        }
        if !(self.fit_tol >= T::zero()) {
            return Err(Error::InvalidParameter("fit_tol must be ≥ 0".into()));
        }
        Ok(())
    }

    /// The configured step size, or `1/‖B‖₂²`.
    pub fn step_size(&self, b: ArrayView2<T>) -> T {
        self.delta.unwrap_or_else(|| {
            let norm = spectral_norm(b, 20);
            if norm > T::zero() {
                T::one() / (norm * norm)
            } else {
                T::one()
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BregmanSolution<T: Scalar> {
    pub u: Array1<T>,
    pub iterations: usize,
    /// Relative fit `‖B u − f‖ / ‖f‖` at exit.
    pub final_fit: T,
    pub converged: bool,
}

/// Runs the linearized Bregman iteration for `B u ≈ f`, `u ≥ 0`.
pub fn linearized_bregman<T: Scalar>(
    b: ArrayView2<T>,
    f: ArrayView1<T>,
    cfg: &BregmanConfig<T>,
) -> Result<BregmanSolution<T>> {
    cfg.validate()?;
    let delta = cfg.step_size(b);
    bregman_with_step(b, f, cfg, delta)
}

fn bregman_with_step<T: Scalar>(
    b: ArrayView2<T>,
    f: ArrayView1<T>,
    cfg: &BregmanConfig<T>,
    delta: T,
) -> Result<BregmanSolution<T>> {
    let (m, n) = b.dim();
    if f.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "B has {m} rows, f has {}",
            f.len()
        )));
    }
    let f: Vec<T> = f.to_vec();
    let f_norm = f.iter().map(|x| *x * *x).sum::<T>().sqrt();
    let mut u = vec![T::zero(); n];
    if f_norm == T::zero() {
        return Ok(BregmanSolution {
            u: Array1::from(u),
            iterations: 1,
            final_fit: T::zero(),
            converged: true,
        });
    }
    // row-major copy so the two products below are plain slice loops
    let b: Vec<T> = b.iter().copied().collect();
    let mut v = vec![T::zero(); n];
    let mut resid: Vec<T> = f.iter().map(|x| -*x).collect(); // B u − f at u = 0
    let mut best = T::one();
    let ten = T::lit(10.0);
    let mut fit = T::one();
    for it in 1..=cfg.max_iter {
        for (k, (vk, uk)) in v.iter_mut().zip(u.iter_mut()).enumerate() {
            let mut g = T::zero();
            for i in 0..m {
                g += b[i * n + k] * resid[i];
            }
            *vk -= g;
            *uk = delta * shrink_plus(*vk, cfg.mu);
        }
        let mut sq = T::zero();
        for i in 0..m {
            let row = &b[i * n..(i + 1) * n];
            let bu: T = row.iter().zip(&u).map(|(x, y)| *x * *y).sum();
            resid[i] = bu - f[i];
            sq += resid[i] * resid[i];
        }
        fit = sq.sqrt() / f_norm;
        if !fit.is_finite() || (fit > ten * best && fit > T::one()) {
            return Err(Error::Diverged {
                iteration: it,
                fit: fit.to_f64_lossy(),
                best: best.to_f64_lossy(),
            });
        }
        if fit <= cfg.fit_tol {
            return Ok(BregmanSolution {
                u: Array1::from(u),
                iterations: it,
                final_fit: fit,
                converged: true,
            });
        }
        best = best.min(fit);
    }
    Ok(BregmanSolution {
        u: Array1::from(u),
        iterations: cfg.max_iter,
        final_fit: fit,
        converged: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryMethod {
    Bregman,
    Pinv,
    Nnls,
}

impl std::str::FromStr for RecoveryMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bregman" => Ok(Self::Bregman),
            "pinv" => Ok(Self::Pinv),
            "nnls" => Ok(Self::Nnls),
            other => Err(Error::InvalidParameter(format!(
                "unknown recovery method `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryStats {
    pub max_iterations: usize,
    pub unconverged_rows: usize,
    pub worst_fit: f64,
}

/// Recovered source spectra: the columns of `W` (`p × n`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SourceMatrix<T: Scalar> {
    pub grid: SpectralGrid<T>,
    pub values: Array2<T>,
    pub method_tag: RecoveryMethod,
    /// Entries below zero (only the pseudo-inverse can produce them).
    pub negative_count: usize,
    pub stats: Option<RecoveryStats>,
}

impl<T: Scalar> SourceMatrix<T> {
    pub fn n(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, k: usize) -> Spectrum<T> {
        Spectrum {
            grid: self.grid.clone(),
            intensities: self.values.column(k).to_vec(),
            label: format!("source-{k}"),
        }
    }
}

fn check_shapes<T: Scalar>(r: &ResidualMatrix<T>, mix: &MixingEstimate<T>) -> Result<()> {
    if mix.rows.ncols() != r.cols() {
        return Err(Error::DimensionMismatch(format!(
            "mixing rows have length {}, residual has {} columns",
            mix.rows.ncols(),
            r.cols()
        )));
    }
    if mix.n() == 0 {
        return Err(Error::DimensionMismatch("empty mixing estimate".into()));
    }
    Ok(())
}

const ROUNDOFF_ROW: f64 = 1e-12;

/// Solves one Bregman problem per residual row with `B = Mᵀ`.
///
/// Rows of `M` are scaled to unit maximum before building `B`; the scaling is
/// folded back into `W` so that `R ≈ W M` holds for the unscaled `M`.
pub fn recover_sources<T: Scalar>(
    r: &ResidualMatrix<T>,
    mix: &MixingEstimate<T>,
    cfg: &BregmanConfig<T>,
) -> Result<SourceMatrix<T>> {
    cfg.validate()?;
    check_shapes(r, mix)?;
    let scale: Vec<T> = mix
        .rows
        .axis_iter(Axis(0))
        .map(|row| {
            let mx = row.iter().copied().fold(T::zero(), T::max);
            if mx > T::zero() {
                mx
            } else {
                T::one()
            }
        })
        .collect();
    let mut b = mix.rows.t().to_owned();
    for (k, mut col) in b.axis_iter_mut(Axis(1)).enumerate() {
        col.mapv_inplace(|v| v / scale[k]);
    }
    let delta = cfg.step_size(b.view());
    // rows at round-off level of the largest row are treated as exact zeros
    let norms: Vec<T> = r
        .values
        .rows()
        .into_iter()
        .map(|row| row.dot(&row).sqrt())
        .collect();
    let floor = norms.iter().copied().fold(T::zero(), T::max) * T::lit(ROUNDOFF_ROW);
    let zero_row = Array1::<T>::zeros(r.cols());

    let rows: Vec<Result<BregmanSolution<T>>> = (0..r.rows())
        .into_par_iter()
        .map(|i| {
            let f = if norms[i] <= floor {
                zero_row.view()
            } else {
                r.values.row(i)
            };
            bregman_with_step(b.view(), f, cfg, delta).map_err(|e| Error::Row {
                row: i,
                source: Box::new(e),
            })
        })
        .collect();

    let n = mix.n();
    let mut values = Array2::zeros((r.rows(), n));
    let mut stats = RecoveryStats {
        max_iterations: 0,
        unconverged_rows: 0,
        worst_fit: 0.0,
    };
    for (i, sol) in rows.into_iter().enumerate() {
        let sol = sol?;
        for k in 0..n {
            values[[i, k]] = sol.u[k] / scale[k];
        }
        stats.max_iterations = stats.max_iterations.max(sol.iterations);
        if !sol.converged {
            stats.unconverged_rows += 1;
        }
        stats.worst_fit = stats.worst_fit.max(sol.final_fit.to_f64_lossy());
    }
    Ok(SourceMatrix {
        grid: r.grid.clone(),
        values,
        method_tag: RecoveryMethod::Bregman,
        negative_count: 0,
        stats: Some(stats),
    })
}

/// `W = R M⁺` with `M⁺ = Mᵀ (M Mᵀ)⁻¹`; negative entries are kept and counted.
pub fn pinv_recover<T: Scalar>(
    r: &ResidualMatrix<T>,
    mix: &MixingEstimate<T>,
) -> Result<SourceMatrix<T>> {
    check_shapes(r, mix)?;
    let m = &mix.rows;
    let gram = m.dot(&m.t());
    let rm = r.values.dot(&m.t()); // p × n
    let mut values = Array2::zeros(rm.dim());
    for (i, row) in rm.axis_iter(Axis(0)).enumerate() {
        let w = cholesky_solve(gram.view(), row).ok_or(Error::RankDeficient)?;
        values.row_mut(i).assign(&w);
    }
    let negative_count = values.iter().filter(|v| **v < T::zero()).count();
    Ok(SourceMatrix {
        grid: r.grid.clone(),
        values,
        method_tag: RecoveryMethod::Pinv,
        negative_count,
        stats: None,
    })
}

/// Row-wise nonnegative least squares against the rows of `M`.
pub fn nnls_recover<T: Scalar>(
    r: &ResidualMatrix<T>,
    mix: &MixingEstimate<T>,
) -> Result<SourceMatrix<T>> {
    check_shapes(r, mix)?;
    let rows: Vec<Result<Array1<T>>> = (0..r.rows())
        .into_par_iter()
        .map(|i| nnls(mix.rows.view(), r.values.row(i)).map(|s| s.lambda))
        .collect();
    let mut values = Array2::zeros((r.rows(), mix.n()));
    for (i, w) in rows.into_iter().enumerate() {
        values.row_mut(i).assign(&w?);
    }
    Ok(SourceMatrix {
        grid: r.grid.clone(),
        values,
        method_tag: RecoveryMethod::Nnls,
        negative_count: 0,
        stats: None,
    })
}

pub fn recover<T: Scalar>(
    method: RecoveryMethod,
    r: &ResidualMatrix<T>,
    mix: &MixingEstimate<T>,
    cfg: &BregmanConfig<T>,
) -> Result<SourceMatrix<T>> {
    match method {
        RecoveryMethod::Bregman => recover_sources(r, mix, cfg),
        RecoveryMethod::Pinv => pinv_recover(r, mix),
        RecoveryMethod::Nnls => nnls_recover(r, mix),
    }
}
