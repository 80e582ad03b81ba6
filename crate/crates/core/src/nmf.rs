//! Multiplicative-update NMF, used as the comparison baseline for the cone
//! extraction + sparse recovery route.

use ndarray::{Array2, ArrayView2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cls::ResidualMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NmfConfig<T: Scalar> {
    pub n: usize,
    pub max_iter: usize,
    pub seed: u64,
    /// Stop when the relative objective decrease of one sweep falls below this.
    pub tol: T,
}

impl<T: Scalar> NmfConfig<T> {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            max_iter: 2000,
            seed,
            tol: T::lit(1e-9),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("nmf rank must be ≥ 1".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be ≥ 1".into()));
        }
        if !(self.tol >= T::zero()) {
            return Err(Error::InvalidParameter("tol must be ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmfResult<T: Scalar> {
    /// `p × n`
    pub w: Array2<T>,
    /// `n × m`
    pub m: Array2<T>,
    /// `‖R − W M‖²_F` at initialisation and after every sweep.
    pub objective_history: Vec<T>,
}

fn objective<T: Scalar>(r: ArrayView2<T>, w: &Array2<T>, m: &Array2<T>) -> T {
    let d = &r - &w.dot(m);
    d.iter().map(|v| *v * *v).sum()
}

fn uniform_init<T: Scalar>(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<T> {
    // 1 − U[0,1) lies in (0, 1]
    Array2::from_shape_simple_fn(shape, || T::lit(1.0 - rng.random::<f64>()))
}

/// Factorises a nonnegative `p × m` matrix as `W M`.
///
/// Negative entries are treated as zero. The initial factors are drawn from a
/// ChaCha8 stream seeded with `cfg.seed`, `W` first, so results are
/// reproducible bit for bit.
pub fn nmf_factorize_matrix<T: Scalar>(
    r: ArrayView2<T>,
    cfg: &NmfConfig<T>,
) -> Result<NmfResult<T>> {
    cfg.validate()?;
    let (p, m_cols) = r.dim();
    let r = r.mapv(|v| v.max(T::zero()));
    if r.iter().all(|v| *v == T::zero()) {
        return Ok(NmfResult {
            w: Array2::zeros((p, cfg.n)),
            m: Array2::zeros((cfg.n, m_cols)),
            objective_history: vec![T::zero()],
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = uniform_init::<T>(&mut rng, (p, cfg.n));
    let mut m = uniform_init::<T>(&mut rng, (cfg.n, m_cols));
    let eps = T::lit(EPS);

    let mut history = vec![objective(r.view(), &w, &m)];
    for _ in 0..cfg.max_iter {
        let num = w.t().dot(&r);
        let den = w.t().dot(&w).dot(&m);
        Zip::from(&mut m)
            .and(&num)
            .and(&den)
            .for_each(|x, &a, &b| *x = *x * a / (b + eps));

        let num = r.dot(&m.t());
        let den = w.dot(&m.dot(&m.t()));
        Zip::from(&mut w)
            .and(&num)
            .and(&den)
            .for_each(|x, &a, &b| *x = *x * a / (b + eps));

        let f = objective(r.view(), &w, &m);
        let prev = *history.last().unwrap();
        history.push(f);
        if prev - f <= cfg.tol * prev {
            break;
        }
    }
    Ok(NmfResult {
        w,
        m,
        objective_history: history,
    })
}

pub fn nmf_factorize<T: Scalar>(r: &ResidualMatrix<T>, cfg: &NmfConfig<T>) -> Result<NmfResult<T>> {
    nmf_factorize_matrix(r.values.view(), cfg)
}
