use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{parse_reference_csv, reference_to_csv, resample, SpectralGrid, Spectrum};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Named pure-substance spectra, all sampled on one grid. Intensities are nonnegative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ReferenceLibrary<T: Scalar> {
    grid: SpectralGrid<T>,
    entries: BTreeMap<String, Spectrum<T>>,
}

impl<T: Scalar> ReferenceLibrary<T> {
    pub fn new(grid: SpectralGrid<T>) -> Self {
        Self {
            grid,
            entries: BTreeMap::new(),
        }
    }

    /// Adds an entry, resampling it onto the library grid.
    pub fn insert(&mut self, name: impl Into<String>, spectrum: &Spectrum<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::DuplicateName(name));
        }
        let mut s = resample(spectrum, &self.grid)?;
        if let Some(&v) = s.intensities.iter().find(|v| **v < T::zero()) {
            return Err(Error::NegativeReference {
                name,
                value: v.to_f64_lossy(),
            });
        }
        s.label = name.clone();
        self.entries.insert(name, s);
        Ok(())
    }

    pub fn grid(&self) -> &SpectralGrid<T> {
        &self.grid
    }

    pub fn get(&self, name: &str) -> Option<&Spectrum<T>> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Spectrum<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Builds a library on `grid` from spectra labelled with their substance names.
    pub fn from_spectra<'a>(
        grid: &SpectralGrid<T>,
        spectra: impl IntoIterator<Item = &'a Spectrum<T>>,
    ) -> Result<Self> {
        let mut lib = Self::new(grid.clone());
        for s in spectra {
            lib.insert(s.label.clone(), s)?;
        }
        Ok(lib)
    }

    /// Loads every `*.csv` in `dir` (file stem = substance name) onto `grid`.
    pub fn load_dir(dir: impl AsRef<Path>, grid: &SpectralGrid<T>) -> Result<Self> {
        Self::from_spectra(grid, &read_reference_dir(dir)?)
    }

    /// Writes one `<name>.csv` per entry into `dir`, creating it if needed.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for (name, s) in &self.entries {
            fs::write(dir.join(format!("{name}.csv")), reference_to_csv(s))?;
        }
        Ok(())
    }
}

/// Reads every `*.csv` in `dir` on its own grid, labelled by file stem and
/// sorted by name.
pub fn read_reference_dir<T: Scalar>(dir: impl AsRef<Path>) -> Result<Vec<Spectrum<T>>> {
    let mut files: Vec<_> = fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|path| {
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| {
                    Error::InvalidParameter(format!("bad file name {}", path.display()))
                })?
                .to_owned();
            parse_reference_csv(fs::File::open(&path)?, &name).map_err(|e| match e {
                Error::MalformedRow { line, message } => Error::MalformedRow {
                    line,
                    message: format!("{}: {message}", path.display()),
                },
                other => other,
            })
        })
        .collect()
}
