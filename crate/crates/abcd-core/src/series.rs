//! Ordered sequences of high-dimensional / image observations.
//!
//! A [`SeriesTensor`] holds `n` observations of `d` components each, stored
//! row-major (one row per time step). For image data the `d` components carry
//! a `d1 x d2` grid decomposition; the flat layout is row-major over
//! `(row, col)`, shared by every module that maps flat indices to pixels.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial decomposition of the component axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    OneD(usize),
    TwoD { rows: usize, cols: usize },
}

impl Shape {
    pub fn from_dims(dims: &[usize]) -> Result<Shape> {
        match dims {
            [d] if *d >= 1 => Ok(Shape::OneD(*d)),
            [d1, d2] if *d1 >= 1 && *d2 >= 1 => Ok(Shape::TwoD {
                rows: *d1,
                cols: *d2,
            }),
            _ => Err(Error::invalid(format!(
                "shape must be [d] or [d1, d2] with positive entries, got {dims:?}"
            ))),
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::OneD(d) => vec![d],
            Shape::TwoD { rows, cols } => vec![rows, cols],
        }
    }

    pub fn component_count(&self) -> usize {
        match *self {
            Shape::OneD(d) => d,
            Shape::TwoD { rows, cols } => rows * cols,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Shape::OneD(d) => write!(f, "{d}"),
            Shape::TwoD { rows, cols } => write!(f, "{rows}x{cols}"),
        }
    }
}

/// Flat index of grid cell `(row, col)` under the shared row-major layout.
#[inline]
pub fn flat_index(row: usize, col: usize, cols: usize) -> usize {
    row * cols + col
}

/// Inverse of [`flat_index`].
#[inline]
pub fn grid_coords(flat: usize, cols: usize) -> (usize, usize) {
    (flat / cols, flat % cols)
}

/// An ordered sequence of `n` observations with `d` components each.
///
/// Immutable after construction; values are held at 64-bit precision
/// regardless of the input encoding. Timestamps are opaque labels only --
/// all statistics operate on the integer time index.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesTensor {
    values: Vec<f64>,
    n: usize,
    d: usize,
    shape: Shape,
    timestamps: Option<Vec<String>>,
}

impl SeriesTensor {
    pub fn new(
        values: Vec<f64>,
        n: usize,
        shape: Shape,
        timestamps: Option<Vec<String>>,
    ) -> Result<Self> {
        let d = shape.component_count();
        if n < 2 {
            return Err(Error::invalid(format!("series needs n >= 2, got n = {n}")));
        }
        if values.len() != n * d {
            return Err(Error::invalid(format!(
                "value buffer holds {} entries, expected n*d = {}*{} = {}",
                values.len(),
                n,
                d,
                n * d
            )));
        }
        if let Some(ts) = &timestamps {
            if ts.len() != n {
                return Err(Error::invalid(format!(
                    "{} timestamps for {} observations",
                    ts.len(),
                    n
                )));
            }
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value at row {}, component {}",
                bad / d,
                bad % d
            )));
        }
        Ok(SeriesTensor {
            values,
            n,
            d,
            shape,
            timestamps,
        })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, shape: Shape) -> Result<Self> {
        let n = rows.len();
        let d = shape.component_count();
        let mut values = Vec::with_capacity(n * d);
        for (t, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::invalid(format!(
                    "row {} has {} components, expected {}",
                    t,
                    row.len(),
                    d
                )));
            }
            values.extend_from_slice(row);
        }
        SeriesTensor::new(values, n, shape, None)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.d..(t + 1) * self.d]
    }

    pub fn timestamps(&self) -> Option<&[String]> {
        self.timestamps.as_deref()
    }

    /// Contiguous run of rows `[l, r]` (0-based, inclusive) as a new series.
    pub fn slice_rows(&self, l: usize, r: usize) -> Result<SeriesTensor> {
        if l >= r || r >= self.n {
            return Err(Error::invalid(format!(
                "row slice [{l}, {r}] out of range for n = {}",
                self.n
            )));
        }
        let values = self.values[l * self.d..(r + 1) * self.d].to_vec();
        let timestamps = self.timestamps.as_ref().map(|ts| ts[l..=r].to_vec());
        SeriesTensor::new(values, r - l + 1, self.shape, timestamps)
    }
}

/// A sorted set of component indices (0-based) into `0..d`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComponentSelector {
    indices: Vec<usize>,
}

impl ComponentSelector {
    pub fn new(mut indices: Vec<usize>, d: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("component selector is empty"));
        }
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("component selector has duplicate indices"));
        }
        if *indices.last().unwrap() >= d {
            return Err(Error::invalid(format!(
                "component index {} out of range for d = {}",
                indices.last().unwrap(),
                d
            )));
        }
        Ok(ComponentSelector { indices })
    }

    pub fn all(d: usize) -> Self {
        ComponentSelector {
            indices: (0..d).collect(),
        }
    }

    /// Contiguous selector over `start..end` (half-open, 0-based).
    pub fn contiguous(start: usize, end: usize, d: usize) -> Result<Self> {
        if start >= end {
            return Err(Error::invalid("empty contiguous selector"));
        }
        ComponentSelector::new((start..end).collect(), d)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.indices.binary_search(&idx).is_ok()
    }

    /// `(first, last)` when the selector is one contiguous run.
    pub fn contiguous_range(&self) -> Option<(usize, usize)> {
        let first = *self.indices.first().unwrap();
        let last = *self.indices.last().unwrap();
        (last - first + 1 == self.indices.len()).then_some((first, last))
    }
}

/// Projects a series onto the selected components, preserving time order.
///
/// Selecting every component returns the series unchanged (shape included);
/// any strict subset yields a 1-D series of length `|sel|`.
pub fn slice_components(series: &SeriesTensor, sel: &ComponentSelector) -> Result<SeriesTensor> {
    let d = series.d();
    if let Some(&bad) = sel.indices().iter().find(|&&i| i >= d) {
        return Err(Error::invalid(format!(
            "component index {bad} out of range for d = {d}"
        )));
    }
    if sel.len() == d {
        return Ok(series.clone());
    }
    let n = series.n();
    let mut values = Vec::with_capacity(n * sel.len());
    for t in 0..n {
        let row = series.row(t);
        values.extend(sel.indices().iter().map(|&i| row[i]));
    }
    SeriesTensor::new(
        values,
        n,
        Shape::OneD(sel.len()),
        series.timestamps.clone(),
    )
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

/// On-disk encodings for a series.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeriesFormat {
    /// JSON manifest + raw little-endian payload, time-major and row-major.
    Binary,
    /// `t,c1,...,cd` text table for 1-D series.
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn tag(&self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }

    fn parse(tag: &str) -> Option<Dtype> {
        match tag {
            "f32" => Some(Dtype::F32),
            "f64" => Some(Dtype::F64),
            _ => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SeriesManifest {
    n: usize,
    shape: Vec<usize>,
    dtype: String,
    payload: String,
}

fn payload_path(manifest_path: &Path, payload: &str) -> PathBuf {
    match manifest_path.parent() {
        Some(dir) => dir.join(payload),
        None => PathBuf::from(payload),
    }
}

pub fn load_series(path: &Path, format: SeriesFormat) -> Result<SeriesTensor> {
    match format {
        SeriesFormat::Binary => load_series_binary(path),
        SeriesFormat::Csv => load_series_csv(path),
    }
}

/// Picks the format from the file extension: `.csv` is CSV, anything else is
/// treated as a binary manifest.
pub fn load_series_auto(path: &Path) -> Result<SeriesTensor> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => load_series_csv(path),
        _ => load_series_binary(path),
    }
}

fn load_series_binary(path: &Path) -> Result<SeriesTensor> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
    let manifest: SeriesManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&display, e.to_string()))?;
    let shape = Shape::from_dims(&manifest.shape)?;
    let dtype = Dtype::parse(&manifest.dtype)
        .ok_or_else(|| Error::format(&display, format!("unknown dtype {:?}", manifest.dtype)))?;
    let payload = payload_path(path, &manifest.payload);
    let bytes =
        fs::read(&payload).map_err(|e| Error::io(payload.display().to_string(), e))?;
    let d = shape.component_count();
    let count = manifest.n * d;
    let width = match dtype {
        Dtype::F32 => 4,
        Dtype::F64 => 8,
    };
    if bytes.len() != count * width {
        return Err(Error::format(
            payload.display().to_string(),
            format!(
                "payload holds {} bytes, expected {} ({} values of {})",
                bytes.len(),
                count * width,
                count,
                manifest.dtype
            ),
        ));
    }
    let mut values = Vec::with_capacity(count);
    match dtype {
        Dtype::F32 => {
            for chunk in bytes.chunks_exact(4) {
                values.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
            }
        }
        Dtype::F64 => {
            for chunk in bytes.chunks_exact(8) {
                values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
        }
    }
    SeriesTensor::new(values, manifest.n, shape, None)
}

/// Writes the manifest at `path` and the payload next to it (same stem,
/// `.bin` extension). Save -> load -> save reproduces both files byte for
/// byte.
pub fn save_series_binary(series: &SeriesTensor, path: &Path, dtype: Dtype) -> Result<()> {
    let display = path.display().to_string();
    let payload_name = {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::invalid(format!("bad manifest path {display}")))?;
        format!("{stem}.bin")
    };
    let manifest = SeriesManifest {
        n: series.n(),
        shape: series.shape().dims(),
        dtype: dtype.tag().to_string(),
        payload: payload_name.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialization");
    fs::write(path, json + "\n").map_err(|e| Error::io(&display, e))?;
    let payload = payload_path(path, &payload_name);
    let file =
        fs::File::create(&payload).map_err(|e| Error::io(payload.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let res: std::io::Result<()> = series.values().iter().try_for_each(|&v| match dtype {
        Dtype::F32 => w.write_all(&(v as f32).to_le_bytes()),
        Dtype::F64 => w.write_all(&v.to_le_bytes()),
    });
    res.and_then(|_| w.flush())
        .map_err(|e| Error::io(payload.display().to_string(), e))
}

fn load_series_csv(path: &Path) -> Result<SeriesTensor> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(&display, "empty file"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[0] != "t" {
        return Err(Error::format(
            &display,
            "header must be t,c1,...,cd with at least one component column",
        ));
    }
    let d = cols.len() - 1;
    let mut values = Vec::new();
    let mut timestamps = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 1 {
            return Err(Error::format(
                &display,
                format!("line {} has {} fields, expected {}", lineno + 2, fields.len(), d + 1),
            ));
        }
        timestamps.push(fields[0].to_string());
        for f in &fields[1..] {
            let v: f64 = f.trim().parse().map_err(|_| {
                Error::format(&display, format!("bad number {f:?} on line {}", lineno + 2))
            })?;
            values.push(v);
        }
    }
    let n = timestamps.len();
    SeriesTensor::new(values, n, Shape::OneD(d), Some(timestamps))
}

/// Writes a 1-D series as `t,c1,...,cd`. Values use the shortest exact
/// decimal form, so a CSV round trip reproduces every f64 bit for bit.
pub fn save_series_csv(series: &SeriesTensor, path: &Path) -> Result<()> {
    let display = path.display().to_string();
    let mut out = String::new();
    out.push('t');
    for c in 1..=series.d() {
        out.push_str(&format!(",c{c}"));
    }
    out.push('\n');
    for t in 0..series.n() {
        match series.timestamps() {
            Some(ts) => {
                if ts[t].contains(',') {
                    return Err(Error::invalid(format!(
                        "timestamp {:?} contains a comma and cannot be written as CSV",
                        ts[t]
                    )));
                }
                out.push_str(&ts[t]);
            }
            None => out.push_str(&(t + 1).to_string()),
        }
        for v in series.row(t) {
            out.push(',');
            out.push_str(&format!("{v:?}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(&display, e))
}
