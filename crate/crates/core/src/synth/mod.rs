//! Synthetic Raman-like spectra with planted ground truth.

mod benchmark;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectra::{SpectralGrid, Spectrum};

pub use benchmark::{
    gen_benchmark, substance_peaks, Benchmark, BenchmarkConfig, GroundTruth, KnownSpec,
    UnknownSpec, DECOY_NAMES, PEAK_CUTOFF,
};

/// One Lorentzian band. With `cutoff = Some(k)` the profile is truncated to
/// `|x − center| < k · width` (shifted down to reach zero there and rescaled so
/// the peak value stays `amplitude`), giving the band a finite support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PeakSpec<T: Scalar> {
    pub center: T,
    pub width: T,
    pub amplitude: T,
    #[serde(default)]
    pub cutoff: Option<T>,
}

impl<T: Scalar> PeakSpec<T> {
    pub fn new(center: T, width: T, amplitude: T) -> Result<Self> {
        if !(width > T::zero()) || !(amplitude > T::zero()) || !center.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "peak at {center}: width {width} and amplitude {amplitude} must be positive"
            )));
        }
        Ok(Self {
            center,
            width,
            amplitude,
            cutoff: None,
        })
    }

    pub fn truncated(mut self, half_widths: T) -> Result<Self> {
        if !(half_widths > T::zero()) {
            return Err(Error::InvalidParameter(
                "peak cutoff must be positive".into(),
            ));
        }
        self.cutoff = Some(half_widths);
        Ok(self)
    }

    /// `[lo, hi]` outside of which the band is zero (infinite when untruncated).
    pub fn support(&self) -> (T, T) {
        match self.cutoff {
            Some(k) => (self.center - k * self.width, self.center + k * self.width),
            None => (T::neg_infinity(), T::infinity()),
        }
    }

    pub fn value_at(&self, x: T) -> T {
        let d = (x - self.center) / self.width;
        let shape = T::one() / (d * d + T::one());
        match self.cutoff {
            None => self.amplitude * shape,
            Some(k) => {
                let floor = T::one() / (k * k + T::one());
                if shape <= floor {
                    T::zero()
                } else {
                    self.amplitude * (shape - floor) / (T::one() - floor)
                }
            }
        }
    }
}

/// Sum of the given bands sampled on `grid`.
pub fn gen_source_spectrum<T: Scalar>(
    peaks: &[PeakSpec<T>],
    grid: &SpectralGrid<T>,
    label: &str,
) -> Result<Spectrum<T>> {
    if peaks.is_empty() {
        return Err(Error::EmptyInput);
    }
    for pk in peaks {
        if !grid.contains(pk.center) {
            return Err(Error::InvalidParameter(format!(
                "peak center {} outside grid [{}, {}]",
                pk.center,
                grid.first(),
                grid.last()
            )));
        }
    }
    let intensities = grid
        .as_slice()
        .iter()
        .map(|&x| peaks.iter().map(|pk| pk.value_at(x)).sum())
        .collect();
    Spectrum::new(grid.clone(), intensities, label)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StandaloneVerdict {
    pub source: usize,
    pub passes: bool,
    /// Qualifying index with the largest value of the source, when one exists.
    pub witness: Option<usize>,
}

/// Checks the stand-alone peak condition on the columns of `w` (`p × n`): column
/// `j` passes when some row has `w[i, j] > threshold` while every other column is
/// at most `threshold · 1e-3` in that row.
pub fn verify_standalone_peaks<T: Scalar>(
    w: ArrayView2<T>,
    threshold: T,
) -> Vec<StandaloneVerdict> {
    let thresholds = vec![threshold; w.ncols()];
    verify_with(w, &thresholds)
}

/// As [`verify_standalone_peaks`] with a per-column threshold of `rel` times the
/// column maximum.
pub fn verify_standalone_peaks_relative<T: Scalar>(
    w: ArrayView2<T>,
    rel: T,
) -> Vec<StandaloneVerdict> {
    let thresholds: Vec<T> = w
        .columns()
        .into_iter()
        .map(|c| rel * c.iter().copied().fold(T::zero(), T::max))
        .collect();
    verify_with(w, &thresholds)
}

fn verify_with<T: Scalar>(w: ArrayView2<T>, thresholds: &[T]) -> Vec<StandaloneVerdict> {
    let others_cut = T::lit(1e-3);
    (0..w.ncols())
        .map(|j| {
            let t = thresholds[j];
            let witness = (0..w.nrows())
                .filter(|&i| {
                    w[[i, j]] > t && (0..w.ncols()).all(|k| k == j || w[[i, k]] <= t * others_cut)
                })
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if w[[b, j]] >= w[[i, j]] => Some(b),
                    _ => Some(i),
                });
            StandaloneVerdict {
                source: j,
                passes: witness.is_some(),
                witness,
            }
        })
        .collect()
}
