//! Bounded least-squares fit of known reference spectra to the mixtures.
//!
//! Each mixture column is an independent problem
//! `min ½‖x − A s‖²  s.t.  0 ≤ s ≤ c`, optionally with a cap on the sum of a group
//! of concentrations. The solver is a projected gradient method with
//! Barzilai–Borwein step lengths and an Armijo backtracking line search along
//! the projection arc. Projection onto the box (and the capped box) is exact.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::spectral_norm;
use crate::scalar::Scalar;
use crate::spectra::{
    reference_matrix, ConcentrationBounds, MixtureMatrix, ReferenceLibrary, SpectralGrid,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
#[serde(default)]
pub struct LsOptions<T: Scalar> {
    /// Stop when `‖s − P(s − ∇f)‖∞ ≤ tol`.
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Scalar> Default for LsOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-8),
            max_iter: 10_000,
        }
    }
}

/// Feasible set of one column: `0 ≤ s ≤ upper` and `Σ_{i ∈ group} s_i ≤ total`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxConstraints<T: Scalar> {
    pub upper: Vec<T>,
    pub total: Option<(T, Vec<bool>)>,
}

impl<T: Scalar> BoxConstraints<T> {
    pub fn from_bounds(bounds: &ConcentrationBounds<T>) -> Self {
        let upper = bounds.per_substance().values().copied().collect();
        let total = bounds.total_bound().map(|t| {
            (
                t,
                bounds.names().map(|n| bounds.in_total_group(n)).collect(),
            )
        });
        Self { upper, total }
    }

    pub fn len(&self) -> usize {
        self.upper.len()
    }

    pub fn is_empty(&self) -> bool {
        self.upper.is_empty()
    }

    /// Euclidean projection onto the feasible set.
    pub fn project(&self, y: &mut [T]) {
        let Some((total, group)) = &self.total else {
            for (v, &u) in y.iter_mut().zip(&self.upper) {
                *v = v.max(T::zero()).min(u);
            }
            return;
        };
        let orig: Vec<T> = y.to_vec();
        let clip_shift = |tau: T, i: usize| -> T {
            let t = if group[i] { tau } else { T::zero() };
            (orig[i] - t).max(T::zero()).min(self.upper[i])
        };
        let group_sum = |tau: T| -> T {
            (0..orig.len())
                .filter(|&i| group[i])
                .map(|i| clip_shift(tau, i))
                .sum()
        };
        // s_i = clip(y_i − τ, 0, u_i) on the group, with τ = 0 unless the cap is active
        let mut tau = T::zero();
        if group_sum(T::zero()) > *total {
            let mut lo = T::zero();
            let mut hi = orig.iter().copied().fold(T::zero(), T::max);
            for _ in 0..200 {
                let mid = (lo + hi) * T::lit(0.5);
                if mid <= lo || mid >= hi {
                    break;
                }
                if group_sum(mid) > *total {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            tau = hi;
        }
        for (i, v) in y.iter_mut().enumerate() {
            *v = clip_shift(tau, i);
        }
    }

    pub fn is_feasible(&self, s: &[T], slack: T) -> bool {
        let box_ok = s
            .iter()
            .zip(&self.upper)
            .all(|(&v, &u)| v >= -slack && v <= u + slack);
        let total_ok = match &self.total {
            None => true,
            Some((t, g)) => {
                let sum: T = s.iter().zip(g).filter(|(_, &g)| g).map(|(v, _)| *v).sum();
                sum <= *t + slack
            }
        };
        box_ok && total_ok
    }
}

/// Fitted concentrations `S` (known substances × mixtures).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ConcentrationMatrix<T: Scalar> {
    pub values: Array2<T>,
    pub substance_names: Vec<String>,
    pub bounds: ConcentrationBounds<T>,
    /// False when at least one column hit `max_iter` before reaching `tol`.
    pub converged: bool,
    pub iterations: usize,
    /// Largest per-column stationarity measure at exit.
    pub stationarity: T,
}

/// Solution of the raw matrix problem, without substance bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxLsSolution<T: Scalar> {
    pub values: Array2<T>,
    pub converged: bool,
    pub iterations: usize,
    pub stationarity: T,
}

/// `½ sᵀQs − cᵀs`; the constant `½‖x‖²` is dropped.
fn quad_objective<T: Scalar>(q: &Array2<T>, c: ArrayView1<T>, s: &Array1<T>) -> T {
    let qs = q.dot(s);
    T::lit(0.5) * s.dot(&qs) - c.dot(s)
}

fn stationarity<T: Scalar>(cons: &BoxConstraints<T>, s: &Array1<T>, g: &Array1<T>) -> T {
    let mut trial: Vec<T> = s.iter().zip(g).map(|(&a, &b)| a - b).collect();
    cons.project(&mut trial);
    s.iter()
        .zip(&trial)
        .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()))
}

struct ColumnResult<T> {
    s: Array1<T>,
    converged: bool,
    iterations: usize,
    stationarity: T,
}

fn solve_column<T: Scalar>(
    q: &Array2<T>,
    c: ArrayView1<T>,
    cons: &BoxConstraints<T>,
    init: ArrayView1<T>,
    alpha0: T,
    opts: &LsOptions<T>,
) -> ColumnResult<T> {
    let mut s_vec = init.to_vec();
    cons.project(&mut s_vec);
    let mut s = Array1::from(s_vec);
    let mut g = q.dot(&s) - c;
    let mut f = quad_objective(q, c, &s);
    let mut alpha = alpha0;
    let (alpha_min, alpha_max) = (T::lit(1e-30), T::lit(1e30));
    let armijo = T::lit(1e-4);

    for it in 0..opts.max_iter {
        let pg = stationarity(cons, &s, &g);
        if pg <= opts.tol {
            return ColumnResult {
                s,
                converged: true,
                iterations: it,
                stationarity: pg,
            };
        }
        let mut target: Vec<T> = s.iter().zip(&g).map(|(&a, &b)| a - alpha * b).collect();
        cons.project(&mut target);
        let d = Array1::from(target) - &s;
        let slope = g.dot(&d);
        if slope >= T::zero() {
            // numerically flat: no descent left along the projection arc
            return ColumnResult {
                s,
                converged: pg <= opts.tol,
                iterations: it,
                stationarity: pg,
            };
        }
        let mut lambda = T::one();
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &s + &(&d * lambda);
            let ft = quad_objective(q, c, &trial);
            if ft <= f + armijo * lambda * slope {
                accepted = Some((trial, ft));
                break;
            }
            lambda = lambda * T::lit(0.5);
        }
        let Some((s_new, f_new)) = accepted else {
            return ColumnResult {
                s,
                converged: false,
                iterations: it,
                stationarity: pg,
            };
        };
        let step = &s_new - &s;
        let y = q.dot(&step);
        let sy = step.dot(&y);
        alpha = if sy > T::zero() {
            (step.dot(&step) / sy).max(alpha_min).min(alpha_max)
        } else {
            alpha_max
        };
        g = &g + &y;
        s = s_new;
        f = f_new;
    }
    let pg = stationarity(cons, &s, &g);
    ColumnResult {
        s,
        converged: pg <= opts.tol,
        iterations: opts.max_iter,
        stationarity: pg,
    }
}

/// Solves every column of `min ½‖X − A S‖²` over the feasible set, starting from `init`
/// (projected onto the feasible set first). Columns are solved independently.
pub fn solve_box_ls<T: Scalar>(
    x: ArrayView2<T>,
    a: ArrayView2<T>,
    cons: &BoxConstraints<T>,
    init: Option<ArrayView2<T>>,
    opts: &LsOptions<T>,
) -> Result<BoxLsSolution<T>> {
    let (p, m) = x.dim();
    let (pa, k) = a.dim();
    if pa != p {
        return Err(Error::DimensionMismatch(format!(
            "A has {pa} rows, X has {p}"
        )));
    }
    if k == 0 {
        return Err(Error::DimensionMismatch("A has no columns".into()));
    }
    if cons.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "{} bounds for {k} reference columns",
            cons.len()
        )));
    }
    if let Some(init) = &init {
        if init.dim() != (k, m) {
            return Err(Error::DimensionMismatch(format!(
                "initial point is {:?}, expected {:?}",
                init.dim(),
                (k, m)
            )));
        }
    }
    if !(opts.tol >= T::zero()) || opts.max_iter == 0 {
        return Err(Error::InvalidParameter(
            "tol must be ≥ 0 and max_iter ≥ 1".into(),
        ));
    }

    let q = a.t().dot(&a);
    let c = a.t().dot(&x);
    let lip = spectral_norm(a, 30).powi(2);
    let alpha0 = if lip > T::zero() {
        T::one() / lip
    } else {
        T::one()
    };
    let zeros = Array2::<T>::zeros((k, m));
    let init = init.unwrap_or(zeros.view());

    let columns: Vec<ColumnResult<T>> = (0..m)
        .into_par_iter()
        .map(|j| solve_column(&q, c.column(j), cons, init.column(j), alpha0, opts))
        .collect();

    let mut values = Array2::zeros((k, m));
    let mut converged = true;
    let mut iterations = 0;
    let mut stat = T::zero();
    for (j, col) in columns.into_iter().enumerate() {
        values.column_mut(j).assign(&col.s);
        converged &= col.converged;
        iterations = iterations.max(col.iterations);
        stat = stat.max(col.stationarity);
    }
    if !converged {
        tracing::warn!(stationarity = %stat, "bounded least squares did not reach tolerance");
    }
    Ok(BoxLsSolution {
        values,
        converged,
        iterations,
        stationarity: stat,
    })
}

/// Fits the columns of `a` (ordered as the substances in `bounds`) to every mixture.
pub fn box_constrained_ls<T: Scalar>(
    x: &MixtureMatrix<T>,
    a: ArrayView2<T>,
    bounds: &ConcentrationBounds<T>,
    opts: &LsOptions<T>,
) -> Result<ConcentrationMatrix<T>> {
    box_constrained_ls_from(x, a, bounds, None, opts)
}

pub fn box_constrained_ls_from<T: Scalar>(
    x: &MixtureMatrix<T>,
    a: ArrayView2<T>,
    bounds: &ConcentrationBounds<T>,
    init: Option<ArrayView2<T>>,
    opts: &LsOptions<T>,
) -> Result<ConcentrationMatrix<T>> {
    let cons = BoxConstraints::from_bounds(bounds);
    let sol = solve_box_ls(x.values(), a, &cons, init, opts)?;
    Ok(ConcentrationMatrix {
        values: sol.values,
        substance_names: bounds.names().map(str::to_owned).collect(),
        bounds: bounds.clone(),
        converged: sol.converged,
        iterations: sol.iterations,
        stationarity: sol.stationarity,
    })
}

/// Builds `A` from the library entries named in `bounds` and fits them.
pub fn fit_knowns<T: Scalar>(
    x: &MixtureMatrix<T>,
    library: &ReferenceLibrary<T>,
    bounds: &ConcentrationBounds<T>,
    opts: &LsOptions<T>,
) -> Result<(Array2<T>, ConcentrationMatrix<T>)> {
    if library.grid() != x.grid() {
        return Err(Error::GridMismatch(
            "library is not on the mixture grid".into(),
        ));
    }
    let names: Vec<&str> = bounds.names().collect();
    let a = reference_matrix(library, &names)?;
    let s = box_constrained_ls(x, a.view(), bounds, opts)?;
    Ok((a, s))
}

/// Fitting residual `R = X − A S` with negativity statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ResidualMatrix<T: Scalar> {
    pub grid: SpectralGrid<T>,
    pub values: Array2<T>,
    /// Fraction of entries below zero, measured before any clamping.
    pub negative_fraction: f64,
    /// Most negative entry before clamping (0 when none is negative).
    pub negative_min: T,
    pub clamped: bool,
}

impl<T: Scalar> ResidualMatrix<T> {
    pub fn from_values(grid: SpectralGrid<T>, values: Array2<T>) -> Result<Self> {
        if values.nrows() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} residual rows for a grid of {}",
                values.nrows(),
                grid.len()
            )));
        }
        let total = values.len().max(1);
        let negatives = values.iter().filter(|v| **v < T::zero()).count();
        let negative_min = values.iter().copied().fold(T::zero(), T::min);
        Ok(Self {
            grid,
            values,
            negative_fraction: negatives as f64 / total as f64,
            negative_min,
            clamped: false,
        })
    }

    /// Copy with negative entries set to zero; statistics keep their pre-clamp values.
    pub fn clamped(&self) -> Self {
        let mut out = self.clone();
        out.values.mapv_inplace(|v| v.max(T::zero()));
        out.clamped = true;
        out
    }

    pub fn view(&self) -> ArrayView2<'_, T> {
        self.values.view()
    }

    pub fn frobenius_norm(&self) -> T {
        self.values.iter().map(|v| *v * *v).sum::<T>().sqrt()
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn as_mixture(&self, template: &MixtureMatrix<T>) -> Result<MixtureMatrix<T>> {
        MixtureMatrix::new(
            self.grid.clone(),
            self.values.clone(),
            template.labels().to_vec(),
            template.laser_wavelengths().to_vec(),
        )
    }
}

/// `R = X − A S`; with `clamp`, negatives are zeroed after the statistics are recorded.
pub fn compute_residual<T: Scalar>(
    x: &MixtureMatrix<T>,
    a: ArrayView2<T>,
    s: ArrayView2<T>,
    clamp: bool,
) -> Result<ResidualMatrix<T>> {
    let (p, m) = x.values().dim();
    if a.nrows() != p || a.ncols() != s.nrows() || s.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "X {:?}, A {:?}, S {:?}",
            (p, m),
            a.dim(),
            s.dim()
        )));
    }
    let values = &x.values() - &a.dot(&s);
    let r = ResidualMatrix::from_values(x.grid().clone(), values)?;
    Ok(if clamp { r.clamped() } else { r })
}

/// `½‖X − A S‖²_F`.
pub fn objective<T: Scalar>(x: ArrayView2<T>, a: ArrayView2<T>, s: ArrayView2<T>) -> T {
    let r = &x - &a.dot(&s);
    T::lit(0.5) * r.iter().map(|v| *v * *v).sum::<T>()
}

/// Column sums of `S` restricted to the total-bound group.
pub fn group_sums<T: Scalar>(s: ArrayView2<T>, cons: &BoxConstraints<T>) -> Option<Array1<T>> {
    let (_, group) = cons.total.as_ref()?;
    Some(
        s.axis_iter(Axis(1))
            .map(|col| {
                col.iter()
                    .zip(group)
                    .filter(|(_, &g)| g)
                    .map(|(v, _)| *v)
                    .sum()
            })
            .collect(),
    )
}
