//! Spectra, mixtures and reference libraries on a common wavenumber grid.

mod csv_io;
mod library;

use indexmap::IndexMap;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use csv_io::{parse_reference_csv, parse_spectra_csv, reference_to_csv};
pub use library::{read_reference_dir, ReferenceLibrary};

/// Strictly increasing wavenumber axis (cm⁻¹) with at least two samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", try_from = "Vec<T>", into = "Vec<T>")]
pub struct SpectralGrid<T: Scalar> {
    wavenumbers: Vec<T>,
}

impl<T: Scalar> SpectralGrid<T> {
    pub fn new(wavenumbers: Vec<T>) -> Result<Self> {
        if wavenumbers.len() < 2 {
            return Err(Error::GridTooShort(wavenumbers.len()));
        }
        for (i, w) in wavenumbers.iter().enumerate() {
            if !w.is_finite() {
                return Err(Error::NonFinite { index: i });
            }
        }
        if let Some(i) = wavenumbers.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::NonMonotonicGrid { index: i + 1 });
        }
        Ok(Self { wavenumbers })
    }

    /// `p` evenly spaced samples covering `[start, end]`.
    pub fn linspace(start: T, end: T, p: usize) -> Result<Self> {
        if p < 2 {
            return Err(Error::GridTooShort(p));
        }
        let step = (end - start) / T::lit((p - 1) as f64);
        let mut w: Vec<T> = (0..p).map(|i| start + step * T::lit(i as f64)).collect();
        w[p - 1] = end;
        Self::new(w)
    }

    pub fn len(&self) -> usize {
        self.wavenumbers.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[T] {
        &self.wavenumbers
    }

    pub fn first(&self) -> T {
        self.wavenumbers[0]
    }

    pub fn last(&self) -> T {
        self.wavenumbers[self.wavenumbers.len() - 1]
    }

    pub fn contains(&self, x: T) -> bool {
        x >= self.first() && x <= self.last()
    }
}

impl<T: Scalar> TryFrom<Vec<T>> for SpectralGrid<T> {
    type Error = Error;

    fn try_from(v: Vec<T>) -> Result<Self> {
        Self::new(v)
    }
}

impl<T: Scalar> From<SpectralGrid<T>> for Vec<T> {
    fn from(g: SpectralGrid<T>) -> Self {
        g.wavenumbers
    }
}

/// One spectrum sampled on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Spectrum<T: Scalar> {
    pub grid: SpectralGrid<T>,
    pub intensities: Vec<T>,
    pub label: String,
}

impl<T: Scalar> Spectrum<T> {
    pub fn new(
        grid: SpectralGrid<T>,
        intensities: Vec<T>,
        label: impl Into<String>,
    ) -> Result<Self> {
        if intensities.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "spectrum has {} intensities for a grid of {}",
                intensities.len(),
                grid.len()
            )));
        }
        if let Some(i) = intensities.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        Ok(Self {
            grid,
            intensities,
            label: label.into(),
        })
    }

    pub fn view(&self) -> ArrayView1<'_, T> {
        ArrayView1::from(&self.intensities[..])
    }

    pub fn max(&self) -> T {
        self.intensities
            .iter()
            .copied()
            .fold(T::neg_infinity(), T::max)
    }
}

/// Linear interpolation of `spectrum` onto `target`; zero outside the source range.
pub fn resample<T: Scalar>(
    spectrum: &Spectrum<T>,
    target: &SpectralGrid<T>,
) -> Result<Spectrum<T>> {
    let src = spectrum.grid.as_slice();
    let (lo, hi) = (spectrum.grid.first(), spectrum.grid.last());
    if target.last() < lo || target.first() > hi {
        return Err(Error::NoOverlap);
    }
    if spectrum.grid == *target {
        return Ok(spectrum.clone());
    }
    let y = &spectrum.intensities;
    // both grids are sorted, so a single forward cursor suffices
    let mut k = 0usize;
    let out = target
        .as_slice()
        .iter()
        .map(|&x| {
            if x < lo || x > hi {
                return T::zero();
            }
            while k + 1 < src.len() - 1 && src[k + 1] < x {
                k += 1;
            }
            let (x0, x1) = (src[k], src[k + 1]);
            if x == x0 {
                return y[k];
            }
            if x == x1 {
                return y[k + 1];
            }
            let t = (x - x0) / (x1 - x0);
            y[k] + (y[k + 1] - y[k]) * t
        })
        .collect();
    Spectrum::new(target.clone(), out, spectrum.label.clone())
}

/// Measured mixtures: `p` wavenumbers by `m` excitation wavelengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MixtureMatrix<T: Scalar> {
    grid: SpectralGrid<T>,
    values: Array2<T>,
    labels: Vec<String>,
    laser_wavelengths: Vec<Option<T>>,
}

impl<T: Scalar> MixtureMatrix<T> {
    /// Builds a mixture matrix; intensities may be slightly negative (detector noise).
    pub fn new(
        grid: SpectralGrid<T>,
        values: Array2<T>,
        labels: Vec<String>,
        laser_wavelengths: Vec<Option<T>>,
    ) -> Result<Self> {
        let (p, m) = values.dim();
        if p != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "{p} rows for a grid of {}",
                grid.len()
            )));
        }
        if m == 0 {
            return Err(Error::EmptyInput);
        }
        if labels.len() != m || laser_wavelengths.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "{m} columns but {} labels and {} laser wavelengths",
                labels.len(),
                laser_wavelengths.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        Ok(Self {
            grid,
            values,
            labels,
            laser_wavelengths,
        })
    }

    /// Convenience constructor for columns tagged by excitation wavelength (nm).
    pub fn with_wavelengths(
        grid: SpectralGrid<T>,
        values: Array2<T>,
        wavelengths: &[T],
    ) -> Result<Self> {
        let labels = wavelengths.iter().map(|w| w.to_string()).collect();
        let lw = wavelengths.iter().map(|&w| Some(w)).collect();
        Self::new(grid, values, labels, lw)
    }

    pub fn grid(&self) -> &SpectralGrid<T> {
        &self.grid
    }

    pub fn values(&self) -> ArrayView2<'_, T> {
        self.values.view()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn laser_wavelengths(&self) -> &[Option<T>] {
        &self.laser_wavelengths
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, j: usize) -> Spectrum<T> {
        Spectrum {
            grid: self.grid.clone(),
            intensities: self.values.column(j).to_vec(),
            label: self.labels[j].clone(),
        }
    }

    pub fn columns(&self) -> Vec<Spectrum<T>> {
        (0..self.cols()).map(|j| self.column(j)).collect()
    }

    /// Indices of the columns acquired at the given excitation wavelengths.
    pub fn indices_of_wavelengths(&self, wavelengths: &[T]) -> Result<Vec<usize>> {
        wavelengths
            .iter()
            .map(|&w| {
                self.laser_wavelengths
                    .iter()
                    .position(|lw| {
                        lw.is_some_and(|v| (v - w).abs() <= T::lit(1e-9) * w.abs().max(T::one()))
                    })
                    .ok_or_else(|| {
                        Error::InvalidParameter(format!("no column at laser wavelength {w}"))
                    })
            })
            .collect()
    }

    /// Sub-matrix of the given columns, in the given order.
    pub fn select_columns(&self, indices: &[usize]) -> Result<Self> {
        let m = self.cols();
        if indices.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut seen = vec![false; m];
        for &i in indices {
            if i >= m {
                return Err(Error::IndexOutOfRange { index: i, len: m });
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::DuplicateIndex(i));
            }
        }
        Ok(Self {
            grid: self.grid.clone(),
            values: self.values.select(Axis(1), indices),
            labels: indices.iter().map(|&i| self.labels[i].clone()).collect(),
            laser_wavelengths: indices.iter().map(|&i| self.laser_wavelengths[i]).collect(),
        })
    }

    pub fn to_csv(&self) -> String {
        csv_io::mixture_to_csv(self)
    }
}

/// Upper bounds on the concentrations of the known substances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ConcentrationBounds<T: Scalar> {
    per_substance: IndexMap<String, T>,
    total_bound: Option<T>,
    /// Substances covered by `total_bound`; `None` means all of them.
    total_group: Option<Vec<String>>,
}

impl<T: Scalar> ConcentrationBounds<T> {
    pub fn new(per_substance: IndexMap<String, T>, total_bound: Option<T>) -> Result<Self> {
        for (name, &b) in &per_substance {
            if !(b >= T::zero()) || !b.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "bound for `{name}` must be finite and ≥ 0"
                )));
            }
        }
        if let Some(t) = total_bound {
            if !(t > T::zero()) || !t.is_finite() {
                return Err(Error::InvalidParameter("total bound must be > 0".into()));
            }
        }
        Ok(Self {
            per_substance,
            total_bound,
            total_group: None,
        })
    }

    pub fn from_pairs<S: Into<String>>(
        pairs: impl IntoIterator<Item = (S, T)>,
        total: Option<T>,
    ) -> Result<Self> {
        let mut map = IndexMap::new();
        for (name, b) in pairs {
            let name = name.into();
            if map.insert(name.clone(), b).is_some() {
                return Err(Error::DuplicateName(name));
            }
        }
        Self::new(map, total)
    }

    /// Restricts the total cap to a subset of substances.
    pub fn with_total_group(mut self, group: Vec<String>) -> Result<Self> {
        for g in &group {
            if !self.per_substance.contains_key(g) {
                return Err(Error::UnknownSubstance(g.clone()));
            }
        }
        self.total_group = Some(group);
        Ok(self)
    }

    /// Adds a substance that is not part of the total cap group.
    pub fn push(&mut self, name: impl Into<String>, bound: T) -> Result<()> {
        let name = name.into();
        if !(bound >= T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "bound for `{name}` must be ≥ 0"
            )));
        }
        if self.per_substance.contains_key(&name) {
            return Err(Error::DuplicateName(name));
        }
        if self.total_bound.is_some() && self.total_group.is_none() {
            self.total_group = Some(self.per_substance.keys().cloned().collect());
        }
        self.per_substance.insert(name, bound);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.per_substance.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<T> {
        self.per_substance.get(name).copied()
    }

    pub fn per_substance(&self) -> &IndexMap<String, T> {
        &self.per_substance
    }

    pub fn total_bound(&self) -> Option<T> {
        self.total_bound
    }

    pub fn in_total_group(&self, name: &str) -> bool {
        match &self.total_group {
            None => true,
            Some(g) => g.iter().any(|n| n == name),
        }
    }

    pub fn len(&self) -> usize {
        self.per_substance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_substance.is_empty()
    }
}

/// Stacks named library references as the columns of a `p × n` matrix.
pub fn reference_matrix<T: Scalar>(
    library: &ReferenceLibrary<T>,
    names: &[&str],
) -> Result<Array2<T>> {
    let p = library.grid().len();
    let mut a = Array2::zeros((p, names.len()));
    for (j, name) in names.iter().enumerate() {
        let s = library
            .get(name)
            .ok_or_else(|| Error::UnknownSubstance(name.to_string()))?;
        a.column_mut(j).assign(&Array1::from(s.intensities.clone()));
    }
    Ok(a)
}
