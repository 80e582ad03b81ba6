use std::fmt::Write as _;
use std::io::Read;

use ndarray::Array2;

use super::{MixtureMatrix, SpectralGrid, Spectrum};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn record_line(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::MalformedRow {
        line,
        message: e.to_string(),
    }
}

fn parse_field<T: Scalar>(field: &str, line: usize, what: &str) -> Result<T> {
    field
        .parse::<T>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::MalformedRow {
            line,
            message: format!("cannot parse {what} `{field}` as a finite number"),
        })
}

fn is_blank(rec: &csv::StringRecord) -> bool {
    rec.iter().all(str::is_empty)
}

/// Parses a mixture CSV: column 1 is wavenumber, the header row carries one laser
/// wavelength (nm) or label per mixture column. `#` lines are comments.
pub fn parse_spectra_csv<T: Scalar, R: Read>(input: R) -> Result<MixtureMatrix<T>> {
    let mut rdr = reader(input);
    let mut records = rdr.records();

    let header = loop {
        match records.next() {
            None => return Err(Error::EmptyInput),
            Some(r) => {
                let r = r.map_err(csv_error)?;
                if !is_blank(&r) {
                    break r;
                }
            }
        }
    };
    let header_line = record_line(&header);
    if header.len() < 2 {
        return Err(Error::MalformedRow {
            line: header_line,
            message: "header needs a wavenumber column and at least one mixture column".into(),
        });
    }
    let width = header.len();
    let labels: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let laser_wavelengths: Vec<Option<T>> = labels
        .iter()
        .map(|l| l.parse::<T>().ok().filter(|v| v.is_finite()))
        .collect();

    let mut wavenumbers = Vec::new();
    let mut flat = Vec::new();
    for rec in records {
        let rec = rec.map_err(csv_error)?;
        if is_blank(&rec) {
            continue;
        }
        let line = record_line(&rec);
        if rec.len() != width {
            return Err(Error::InconsistentColumns {
                line,
                expected: width,
                found: rec.len(),
            });
        }
        wavenumbers.push(parse_field::<T>(&rec[0], line, "wavenumber")?);
        for f in rec.iter().skip(1) {
            flat.push(parse_field::<T>(f, line, "intensity")?);
        }
    }
    if wavenumbers.is_empty() {
        return Err(Error::EmptyInput);
    }
    let p = wavenumbers.len();
    let grid = SpectralGrid::new(wavenumbers)?;
    let values = Array2::from_shape_vec((p, width - 1), flat).expect("row-major shape");
    MixtureMatrix::new(grid, values, labels, laser_wavelengths)
}

pub(super) fn mixture_to_csv<T: Scalar>(x: &MixtureMatrix<T>) -> String {
    let mut out = String::from("wavenumber");
    for (label, wl) in x.labels.iter().zip(&x.laser_wavelengths) {
        out.push(',');
        match wl {
            Some(w) => write!(out, "{w}").unwrap(),
            None => out.push_str(label),
        }
    }
    out.push('\n');
    for (i, w) in x.grid.as_slice().iter().enumerate() {
        write!(out, "{w}").unwrap();
        for v in x.values.row(i) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Parses a two-column `wavenumber,intensity` reference file; a non-numeric first row is a header.
pub fn parse_reference_csv<T: Scalar, R: Read>(input: R, label: &str) -> Result<Spectrum<T>> {
    let mut rdr = reader(input);
    let mut wavenumbers = Vec::new();
    let mut intensities = Vec::new();
    let mut first = true;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        if is_blank(&rec) {
            continue;
        }
        let line = record_line(&rec);
        if first {
            first = false;
            if rec.get(0).is_some_and(|f| f.parse::<T>().is_err()) {
                continue;
            }
        }
        if rec.len() != 2 {
            return Err(Error::InconsistentColumns {
                line,
                expected: 2,
                found: rec.len(),
            });
        }
        wavenumbers.push(parse_field::<T>(&rec[0], line, "wavenumber")?);
        intensities.push(parse_field::<T>(&rec[1], line, "intensity")?);
    }
    if wavenumbers.is_empty() {
        return Err(Error::EmptyInput);
    }
    Spectrum::new(SpectralGrid::new(wavenumbers)?, intensities, label)
}

pub fn reference_to_csv<T: Scalar>(s: &Spectrum<T>) -> String {
    let mut out = String::from("wavenumber,intensity\n");
    for (w, v) in s.grid.as_slice().iter().zip(&s.intensities) {
        writeln!(out, "{w},{v}").unwrap();
    }
    out
}
