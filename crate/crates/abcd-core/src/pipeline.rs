//! Remote-sensing preprocessing: robust per-image standardization, label
//! arrays, per-pixel logistic-regression fusion into a probability series,
//! and log-heatmap export for localization evidence.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detect::RegionOut;
use crate::error::{Error, Result};
use crate::exec;
use crate::series::{flat_index, SeriesTensor, Shape};

/// `bands x time x rows x cols` stack of co-registered images.
#[derive(Clone, Debug, PartialEq)]
pub struct BandStack {
    bands: Vec<String>,
    d1: usize,
    d2: usize,
    n: usize,
    /// Layout `[band][t][row][col]`; each `(band, t)` image is contiguous.
    values: Vec<f64>,
}

impl BandStack {
    pub fn new(
        bands: Vec<String>,
        d1: usize,
        d2: usize,
        n: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if bands.is_empty() || d1 == 0 || d2 == 0 || n == 0 {
            return Err(Error::invalid("band stack needs positive dimensions"));
        }
        if values.len() != bands.len() * n * d1 * d2 {
            return Err(Error::invalid(format!(
                "band stack holds {} values, expected {}",
                values.len(),
                bands.len() * n * d1 * d2
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("band stack contains non-finite values"));
        }
        Ok(BandStack {
            bands,
            d1,
            d2,
            n,
            values,
        })
    }

    pub fn bands(&self) -> &[String] {
        &self.bands
    }

    pub fn num_bands(&self) -> usize {
        self.bands.len()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.d1, self.d2, self.n)
    }

    fn image_offset(&self, band: usize, t: usize) -> usize {
        (band * self.n + t) * self.d1 * self.d2
    }

    pub fn image(&self, band: usize, t: usize) -> &[f64] {
        let off = self.image_offset(band, t);
        &self.values[off..off + self.d1 * self.d2]
    }

    pub fn value(&self, band: usize, t: usize, row: usize, col: usize) -> f64 {
        self.values[self.image_offset(band, t) + flat_index(row, col, self.d2)]
    }
}

/// Binary construction labels, `time x rows x cols`. Label sequences are
/// taken as given; no monotonicity is imposed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelArray {
    d1: usize,
    d2: usize,
    n: usize,
    values: Vec<u8>,
}

impl LabelArray {
    pub fn new(d1: usize, d2: usize, n: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != n * d1 * d2 {
            return Err(Error::invalid(format!(
                "label array holds {} values, expected {}",
                values.len(),
                n * d1 * d2
            )));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::invalid("labels must be 0 or 1"));
        }
        Ok(LabelArray { d1, d2, n, values })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.d1, self.d2, self.n)
    }

    pub fn value(&self, t: usize, row: usize, col: usize) -> u8 {
        self.values[(t * self.d1 + row) * self.d2 + col]
    }
}

// ---------------------------------------------------------------------------
// Robust standardization
// ---------------------------------------------------------------------------

/// Linear interpolation between order statistics (type-7).
fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

/// Centers every `(band, t)` image by its median and scales it by the
/// 95%-5% empirical quantile range. Images with zero quantile range (cloud
/// masks, dead frames) standardize to all zeros with a warning.
pub fn robust_standardize(stack: &BandStack) -> BandStack {
    let (d1, d2, n) = stack.dims();
    let pixels = d1 * d2;
    let images = exec::map_indexed(
        stack.num_bands() * n,
        cfg!(feature = "parallel"),
        |idx| {
            let (band, t) = (idx / n, idx % n);
            let image = stack.image(band, t);
            let mut sorted = image.to_vec();
            sorted.sort_unstable_by(f64::total_cmp);
            let median = quantile_type7(&sorted, 0.5);
            let range = quantile_type7(&sorted, 0.95) - quantile_type7(&sorted, 0.05);
            if range <= 0.0 {
                log::warn!(
                    "band {band}, t = {}: zero quantile range; image standardized to zeros",
                    t + 1
                );
                return vec![0.0; pixels];
            }
            image.iter().map(|&v| (v - median) / range).collect()
        },
    );
    let mut values = Vec::with_capacity(stack.values.len());
    for image in images {
        values.extend_from_slice(&image);
    }
    BandStack {
        bands: stack.bands.clone(),
        d1,
        d2,
        n,
        values,
    }
}

// ---------------------------------------------------------------------------
// Per-pixel logistic regression
// ---------------------------------------------------------------------------

pub const DEFAULT_RIDGE: f64 = 1e-4;
const IRLS_MAX_ITER: usize = 100;
const IRLS_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PixelFlag {
    Converged { iterations: usize },
    NotConverged,
    /// All labels identical; the fit shortcuts to the constant.
    DegenerateLabels { value: u8 },
}

/// Per-pixel fitted probabilities plus coefficients and diagnostics.
#[derive(Clone, Debug)]
pub struct FusedSeries {
    /// `n x (d1*d2)` probability series, grid shape preserved.
    pub probabilities: SeriesTensor,
    /// One coefficient vector per pixel (row-major), intercept first.
    pub coefficients: Vec<Vec<f64>>,
    pub flags: Vec<PixelFlag>,
}

#[inline]
fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Solves a small symmetric positive system in place by Gaussian
/// elimination with partial pivoting. Returns `None` on a vanishing pivot.
fn solve_dense(a: &mut [Vec<f64>], b: &mut [f64]) -> Option<Vec<f64>> {
    let p = b.len();
    for col in 0..p {
        let (pivot_row, pivot) = (col..p)
            .map(|r| (r, a[r][col].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))?;
        if pivot < 1e-12 {
            return None;
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for r in (col + 1)..p {
            let f = a[r][col] / a[col][col];
            for c in col..p {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; p];
    for col in (0..p).rev() {
        let mut acc = b[col];
        for c in (col + 1)..p {
            acc -= a[col][c] * x[c];
        }
        x[col] = acc / a[col][col];
    }
    Some(x)
}

struct PixelFit {
    beta: Vec<f64>,
    probs: Vec<f64>,
    flag: PixelFlag,
}

/// Ridge-penalized logistic fit for one pixel by iteratively reweighted
/// least squares; the intercept is unpenalized.
fn fit_one_pixel(covariates: &[Vec<f64>], labels: &[u8], ridge: f64) -> PixelFit {
    let n = labels.len();
    let p = covariates[0].len();
    let ones = labels.iter().filter(|&&y| y == 1).count();
    if ones == 0 || ones == n {
        let value = if ones == 0 { 0u8 } else { 1u8 };
        return PixelFit {
            beta: vec![0.0; p],
            probs: vec![value as f64; n],
            flag: PixelFlag::DegenerateLabels { value },
        };
    }

    let ybar = ones as f64 / n as f64;
    let mut beta = vec![0.0; p];
    beta[0] = (ybar / (1.0 - ybar)).ln();
    let mut probs = vec![0.0; n];
    let mut flag = PixelFlag::NotConverged;
    for iter in 0..IRLS_MAX_ITER {
        for (t, x) in covariates.iter().enumerate() {
            let eta: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
            probs[t] = sigmoid(eta);
        }
        let mut hess = vec![vec![0.0; p]; p];
        let mut grad = vec![0.0; p];
        for (t, x) in covariates.iter().enumerate() {
            let w = probs[t] * (1.0 - probs[t]);
            let resid = labels[t] as f64 - probs[t];
            for i in 0..p {
                grad[i] += x[i] * resid;
                for j in i..p {
                    hess[i][j] += w * x[i] * x[j];
                }
            }
        }
        for i in 0..p {
            for j in 0..i {
                hess[i][j] = hess[j][i];
            }
        }
        for i in 1..p {
            grad[i] -= ridge * beta[i];
            hess[i][i] += ridge;
        }
        let Some(step) = solve_dense(&mut hess, &mut grad) else {
            break;
        };
        let mut max_step: f64 = 0.0;
        for (b, s) in beta.iter_mut().zip(&step) {
            *b += s;
            max_step = max_step.max(s.abs());
        }
        if max_step < IRLS_TOL {
            flag = PixelFlag::Converged {
                iterations: iter + 1,
            };
            break;
        }
    }
    for (t, x) in covariates.iter().enumerate() {
        let eta: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
        probs[t] = sigmoid(eta);
    }
    PixelFit { beta, probs, flag }
}

/// Fits one ridge-penalized logistic model per pixel, with the standardized
/// band values as covariates, and returns the fitted probability series.
pub fn fit_pixel_logistic(
    stack: &BandStack,
    labels: &LabelArray,
    ridge: f64,
) -> Result<FusedSeries> {
    let (d1, d2, n) = stack.dims();
    if labels.dims() != (d1, d2, n) {
        return Err(Error::invalid(format!(
            "label array {:?} does not align with stack {:?}",
            labels.dims(),
            stack.dims()
        )));
    }
    if !(ridge >= 0.0) {
        return Err(Error::invalid("ridge penalty must be nonnegative"));
    }
    if n < 2 {
        return Err(Error::invalid("need n >= 2"));
    }
    let pixels = d1 * d2;
    let bands = stack.num_bands();
    let fits = exec::map_indexed(pixels, cfg!(feature = "parallel"), |pix| {
        let (row, col) = crate::series::grid_coords(pix, d2);
        let mut covariates = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for t in 0..n {
            let mut x = Vec::with_capacity(bands + 1);
            x.push(1.0);
            for b in 0..bands {
                x.push(stack.value(b, t, row, col));
            }
            covariates.push(x);
            ys.push(labels.value(t, row, col));
        }
        fit_one_pixel(&covariates, &ys, ridge)
    });

    let mut values = vec![0.0f64; n * pixels];
    let mut coefficients = Vec::with_capacity(pixels);
    let mut flags = Vec::with_capacity(pixels);
    for (pix, fit) in fits.into_iter().enumerate() {
        for t in 0..n {
            values[t * pixels + pix] = fit.probs[t];
        }
        coefficients.push(fit.beta);
        flags.push(fit.flag);
    }
    Ok(FusedSeries {
        probabilities: SeriesTensor::new(
            values,
            n,
            Shape::TwoD { rows: d1, cols: d2 },
            None,
        )?,
        coefficients,
        flags,
    })
}

/// Pixel-wise mean across bands, as an `n x (d1*d2)` series with grid shape.
pub fn mean_band_image(stack: &BandStack) -> SeriesTensor {
    let (d1, d2, n) = stack.dims();
    let pixels = d1 * d2;
    let inv = 1.0 / stack.num_bands() as f64;
    let mut values = vec![0.0f64; n * pixels];
    for b in 0..stack.num_bands() {
        for t in 0..n {
            let image = stack.image(b, t);
            let out = &mut values[t * pixels..(t + 1) * pixels];
            for (o, &v) in out.iter_mut().zip(image) {
                *o += v;
            }
        }
    }
    for v in values.iter_mut() {
        *v *= inv;
    }
    SeriesTensor::new(values, n, Shape::TwoD { rows: d1, cols: d2 }, None)
        .expect("stack dims validated")
}

// ---------------------------------------------------------------------------
// Heatmaps
// ---------------------------------------------------------------------------

/// Rectangle of pixels, 0-based inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridRect {
    pub row_start: usize,
    pub row_end: usize,
    pub col_start: usize,
    pub col_end: usize,
}

impl GridRect {
    /// Converts a reported (1-based) block region; `Range` regions cannot
    /// place a rectangle and are rejected.
    pub fn from_region_out(region: &RegionOut) -> Result<GridRect> {
        match *region {
            RegionOut::Rect {
                row_start,
                row_end,
                col_start,
                col_end,
            } => Ok(GridRect {
                row_start: row_start - 1,
                row_end: row_end - 1,
                col_start: col_start - 1,
                col_end: col_end - 1,
            }),
            RegionOut::Range { .. } => Err(Error::invalid(
                "heatmaps need a 2-D block region; run detection on image-shaped data",
            )),
        }
    }

    pub fn width(&self) -> usize {
        self.col_end - self.col_start + 1
    }

    pub fn height(&self) -> usize {
        self.row_end - self.row_start + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMeta {
    /// 1-based inclusive pixel rectangle the heatmaps cover.
    pub block: RegionOut,
    /// 1-based inclusive time ranges averaged into each image.
    pub range_before: (usize, usize),
    pub range_after: (usize, usize),
    pub floor: f64,
    /// Shared linear gray scale of the emitted images.
    pub vmin: f64,
    pub vmax: f64,
}

/// A pair of log-intensity images around a change-point.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapPair {
    pub width: usize,
    pub height: usize,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
    pub meta: HeatmapMeta,
}

/// Averages `log(max(value, floor))` images over each time range, cropped
/// to `block`. Ranges are 1-based inclusive.
pub fn log_heatmap(
    wtilde: &SeriesTensor,
    block: GridRect,
    range_before: (usize, usize),
    range_after: (usize, usize),
    floor: f64,
) -> Result<HeatmapPair> {
    let Shape::TwoD { rows, cols } = wtilde.shape() else {
        return Err(Error::invalid("heatmaps need an image-shaped series"));
    };
    if block.row_end >= rows || block.col_end >= cols || block.row_start > block.row_end
        || block.col_start > block.col_end
    {
        return Err(Error::invalid("block rectangle outside the image"));
    }
    if !(floor > 0.0) {
        return Err(Error::invalid("pixel floor must be positive"));
    }
    let n = wtilde.n();
    let check_range = |(a, b): (usize, usize)| -> Result<()> {
        if a < 1 || b > n || a > b {
            return Err(Error::invalid(format!(
                "time range [{a}, {b}] outside 1..={n}"
            )));
        }
        Ok(())
    };
    check_range(range_before)?;
    check_range(range_after)?;

    let average = |(a, b): (usize, usize)| -> Vec<f64> {
        let count = (b - a + 1) as f64;
        let mut out = vec![0.0f64; block.height() * block.width()];
        for t in a..=b {
            let row_data = wtilde.row(t - 1);
            let mut i = 0;
            for r in block.row_start..=block.row_end {
                for c in block.col_start..=block.col_end {
                    out[i] += row_data[flat_index(r, c, cols)].max(floor).ln();
                    i += 1;
                }
            }
        }
        for v in out.iter_mut() {
            *v /= count;
        }
        out
    };
    let before = average(range_before);
    let after = average(range_after);
    let vmin = before
        .iter()
        .chain(&after)
        .copied()
        .fold(f64::INFINITY, f64::min);
    let vmax = before
        .iter()
        .chain(&after)
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(HeatmapPair {
        width: block.width(),
        height: block.height(),
        before,
        after,
        meta: HeatmapMeta {
            block: RegionOut::Rect {
                row_start: block.row_start + 1,
                row_end: block.row_end + 1,
                col_start: block.col_start + 1,
                col_end: block.col_end + 1,
            },
            range_before,
            range_after,
            floor,
            vmin,
            vmax,
        },
    })
}

fn to_pgm(image: &[f64], width: usize, height: usize, vmin: f64, vmax: f64) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    let span = vmax - vmin;
    for &v in image {
        let g = if span > 0.0 {
            ((v - vmin) / span * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        };
        out.push(g);
    }
    out
}

/// Writes `<prefix>_before.pgm`, `<prefix>_after.pgm` and a JSON sidecar;
/// returns the created paths.
pub fn write_heatmaps(pair: &HeatmapPair, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let write = |name: String, bytes: Vec<u8>| -> Result<PathBuf> {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(path)
    };
    let before = write(
        format!("{prefix}_before.pgm"),
        to_pgm(&pair.before, pair.width, pair.height, pair.meta.vmin, pair.meta.vmax),
    )?;
    let after = write(
        format!("{prefix}_after.pgm"),
        to_pgm(&pair.after, pair.width, pair.height, pair.meta.vmin, pair.meta.vmax),
    )?;
    let meta = write(format!("{prefix}_meta.json"), {
        let mut s = serde_json::to_string_pretty(&pair.meta).expect("meta serialization");
        s.push('\n');
        s.into_bytes()
    })?;
    Ok(vec![before, after, meta])
}

// ---------------------------------------------------------------------------
// Stack / label formats (core manifest + raw payload, with a `bands` field)
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct StackManifest {
    n: usize,
    shape: Vec<usize>,
    dtype: String,
    bands: Vec<String>,
    payload: String,
}

#[derive(Serialize, Deserialize)]
struct LabelManifest {
    n: usize,
    shape: Vec<usize>,
    dtype: String,
    payload: String,
}

fn sibling(path: &Path, payload: &str) -> PathBuf {
    match path.parent() {
        Some(dir) => dir.join(payload),
        None => PathBuf::from(payload),
    }
}

pub fn load_band_stack(path: &Path) -> Result<BandStack> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
    let manifest: StackManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&display, e.to_string()))?;
    let [d1, d2] = manifest.shape[..] else {
        return Err(Error::format(&display, "stack shape must be [d1, d2]"));
    };
    let payload = sibling(path, &manifest.payload);
    let bytes = fs::read(&payload).map_err(|e| Error::io(payload.display().to_string(), e))?;
    let count = manifest.bands.len() * manifest.n * d1 * d2;
    let values: Vec<f64> = match manifest.dtype.as_str() {
        "f32" => {
            if bytes.len() != count * 4 {
                return Err(Error::format(&display, "payload size mismatch"));
            }
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect()
        }
        "f64" => {
            if bytes.len() != count * 8 {
                return Err(Error::format(&display, "payload size mismatch"));
            }
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect()
        }
        other => return Err(Error::format(&display, format!("unknown dtype {other:?}"))),
    };
    BandStack::new(manifest.bands, d1, d2, manifest.n, values)
}

pub fn save_band_stack(stack: &BandStack, path: &Path) -> Result<()> {
    let display = path.display().to_string();
    let (d1, d2, n) = stack.dims();
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::invalid(format!("bad manifest path {display}")))?;
    let payload_name = format!("{stem}.bin");
    let manifest = StackManifest {
        n,
        shape: vec![d1, d2],
        dtype: "f64".to_string(),
        bands: stack.bands.clone(),
        payload: payload_name.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialization");
    fs::write(path, json + "\n").map_err(|e| Error::io(&display, e))?;
    let payload = sibling(path, &payload_name);
    let mut bytes = Vec::with_capacity(stack.values.len() * 8);
    for v in &stack.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&payload, bytes).map_err(|e| Error::io(payload.display().to_string(), e))
}

pub fn load_labels(path: &Path) -> Result<LabelArray> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
    let manifest: LabelManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&display, e.to_string()))?;
    if manifest.dtype != "u8" {
        return Err(Error::format(&display, "labels need dtype u8"));
    }
    let [d1, d2] = manifest.shape[..] else {
        return Err(Error::format(&display, "label shape must be [d1, d2]"));
    };
    let payload = sibling(path, &manifest.payload);
    let bytes = fs::read(&payload).map_err(|e| Error::io(payload.display().to_string(), e))?;
    if bytes.len() != manifest.n * d1 * d2 {
        return Err(Error::format(&display, "payload size mismatch"));
    }
    LabelArray::new(d1, d2, manifest.n, bytes)
}

pub fn save_labels(labels: &LabelArray, path: &Path) -> Result<()> {
    let display = path.display().to_string();
    let (d1, d2, n) = labels.dims();
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::invalid(format!("bad manifest path {display}")))?;
    let payload_name = format!("{stem}.bin");
    let manifest = LabelManifest {
        n,
        shape: vec![d1, d2],
        dtype: "u8".to_string(),
        payload: payload_name.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialization");
    fs::write(path, json + "\n").map_err(|e| Error::io(&display, e))?;
    let payload = sibling(path, &payload_name);
    fs::write(&payload, &labels.values).map_err(|e| Error::io(payload.display().to_string(), e))
}
