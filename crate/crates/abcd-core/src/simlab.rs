//! Data generators and experiment runners for sparse, spatially clustered
//! change-point scenarios, plus the power-study harness that contrasts the
//! block-based detector with its single-block special case.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::blocking::{BlockingPlan, StructureSpec};
use crate::detect::{abcd_detect, BlockRetention, DetectConfig, GraphConfig, DEFAULT_K};
use crate::edgecount::DEFAULT_BOUNDARY_FRAC;
use crate::error::{Error, Result};
use crate::exec;
use crate::rng::{derive_seed, domain, stream_rng};
use crate::series::{ComponentSelector, SeriesTensor, Shape};
use crate::simgraph::Metric;

/// Marginal noise families for generated sequences.
///
/// On a 2-D grid, `Ar1` correlates pixels by `rho^(Euclidean distance)`,
/// which reduces to `rho^|i-j|` on the line.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum NoiseSpec {
    Gaussian,
    Ar1 { rho: f64 },
    StudentT { df: f64 },
    LogNormal,
}

impl NoiseSpec {
    fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::Ar1 { rho } if !(-1.0 < rho && rho < 1.0) => Err(Error::invalid(format!(
                "ar1 needs rho in (-1, 1), got {rho}"
            ))),
            NoiseSpec::StudentT { df } if !(df > 2.0) => Err(Error::invalid(format!(
                "student_t needs df > 2, got {df}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Size of a mean shift.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum MeanMagnitude {
    /// Total L2 norm of the shift vector; each changed component moves by
    /// `l / sqrt(D)`.
    TotalL2(f64),
    PerComponent(f64),
}

impl MeanMagnitude {
    pub fn per_component(&self, changed: usize) -> f64 {
        match *self {
            MeanMagnitude::TotalL2(l) => l / (changed as f64).sqrt(),
            MeanMagnitude::PerComponent(m) => m,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ChangeKind {
    Mean(MeanMagnitude),
    /// Post-change noise variance of each changed component is multiplied
    /// by `scale` (the standard deviation by its square root).
    Variance { scale: f64 },
}

/// Where, when and how the distribution changes.
#[derive(Clone, Debug, PartialEq)]
pub struct ChangeSpec {
    /// Rows `1..=tau` come from the base distribution, rows `tau+1..=n`
    /// from the changed one; `tau = n` disables the change.
    pub tau: usize,
    /// Number of components that actually change (`D`).
    pub changed: usize,
    /// The change region `C`; the changed set is drawn from it.
    pub region: ComponentSelector,
    /// Freezes the changed set instead of resampling it per generation.
    pub frozen_changed_set: Option<ComponentSelector>,
    pub kind: ChangeKind,
    /// Optional dense noise-scale factor applied to every component after
    /// the change (the classic mean-plus-variance alternative).
    pub post_noise_scale: Option<f64>,
}

impl ChangeSpec {
    /// 1-D region: the first `ceil(changed / prop)` components.
    pub fn prefix_1d(
        tau: usize,
        d: usize,
        changed: usize,
        prop: f64,
        kind: ChangeKind,
    ) -> Result<ChangeSpec> {
        if !(prop > 0.0 && prop <= 1.0) {
            return Err(Error::invalid(format!("need prop in (0, 1], got {prop}")));
        }
        let region_len = (changed as f64 / prop).round() as usize;
        if region_len < changed || region_len > d {
            return Err(Error::invalid(format!(
                "change region of {region_len} components infeasible (D = {changed}, d = {d})"
            )));
        }
        Ok(ChangeSpec {
            tau,
            changed,
            region: ComponentSelector::contiguous(0, region_len, d)?,
            frozen_changed_set: None,
            kind,
            post_noise_scale: None,
        })
    }

    /// 2-D region: a top-left square whose area is `changed / prop`
    /// (which must be a perfect square).
    pub fn square_2d(
        tau: usize,
        rows: usize,
        cols: usize,
        changed: usize,
        prop: f64,
        kind: ChangeKind,
    ) -> Result<ChangeSpec> {
        if !(prop > 0.0 && prop <= 1.0) {
            return Err(Error::invalid(format!("need prop in (0, 1], got {prop}")));
        }
        let area = (changed as f64 / prop).round() as usize;
        let side = (area as f64).sqrt().round() as usize;
        if side * side != area {
            return Err(Error::invalid(format!(
                "change region area {area} is not a perfect square"
            )));
        }
        if side > rows.min(cols) || area < changed {
            return Err(Error::invalid(format!(
                "square of side {side} infeasible for {rows}x{cols} (D = {changed})"
            )));
        }
        let d = rows * cols;
        let mut indices = Vec::with_capacity(area);
        for r in 0..side {
            for c in 0..side {
                indices.push(crate::series::flat_index(r, c, cols));
            }
        }
        Ok(ChangeSpec {
            tau,
            changed,
            region: ComponentSelector::new(indices, d)?,
            frozen_changed_set: None,
            kind,
            post_noise_scale: None,
        })
    }

    fn validate(&self, n: usize, d: usize) -> Result<()> {
        if self.tau < 1 || self.tau > n {
            return Err(Error::invalid(format!(
                "tau = {} out of range 1..={n}",
                self.tau
            )));
        }
        if self.changed == 0 || self.changed > self.region.len() {
            return Err(Error::invalid(format!(
                "changed count {} exceeds region size {}",
                self.changed,
                self.region.len()
            )));
        }
        if self.region.indices().last().copied().unwrap_or(0) >= d {
            return Err(Error::invalid("change region exceeds the component space"));
        }
        if let Some(h) = &self.frozen_changed_set {
            if h.len() != self.changed || h.indices().iter().any(|i| !self.region.contains(*i)) {
                return Err(Error::invalid(
                    "frozen changed set must be a D-subset of the region",
                ));
            }
        }
        if let Some(s) = self.post_noise_scale {
            if !(s > 0.0) {
                return Err(Error::invalid("post_noise_scale must be positive"));
            }
        }
        if let ChangeKind::Variance { scale } = self.kind {
            if !(scale > 0.0) {
                return Err(Error::invalid("variance scale must be positive"));
            }
        }
        Ok(())
    }
}

/// Largest grid allowed for the dense spatial Cholesky factor.
const MAX_CHOLESKY_DIM: usize = 2500;

/// Lower-triangular Cholesky factor, packed row by row.
struct PackedCholesky {
    d: usize,
    values: Vec<f64>,
}

impl PackedCholesky {
    fn factor_spatial(rows: usize, cols: usize, rho: f64) -> Result<PackedCholesky> {
        let d = rows * cols;
        if d > MAX_CHOLESKY_DIM {
            return Err(Error::invalid(format!(
                "spatially correlated generator supports up to {MAX_CHOLESKY_DIM} pixels, got {d}"
            )));
        }
        let coord = |i: usize| ((i / cols) as f64, (i % cols) as f64);
        let cov = |i: usize, j: usize| {
            let (r1, c1) = coord(i);
            let (r2, c2) = coord(j);
            rho.powf(((r1 - r2).powi(2) + (c1 - c2).powi(2)).sqrt())
        };
        let mut l = vec![0.0f64; d * (d + 1) / 2];
        let idx = |i: usize, j: usize| i * (i + 1) / 2 + j;
        for i in 0..d {
            for j in 0..=i {
                let mut sum = cov(i, j);
                for k in 0..j {
                    sum -= l[idx(i, k)] * l[idx(j, k)];
                }
                if i == j {
                    if sum <= 0.0 {
                        return Err(Error::invalid(
                            "spatial covariance lost positive definiteness",
                        ));
                    }
                    l[idx(i, j)] = sum.sqrt();
                } else {
                    l[idx(i, j)] = sum / l[idx(j, j)];
                }
            }
        }
        Ok(PackedCholesky { d, values: l })
    }

    fn apply(&self, z: &[f64], out: &mut [f64]) {
        let idx = |i: usize, j: usize| i * (i + 1) / 2 + j;
        for i in 0..self.d {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += self.values[idx(i, j)] * z[j];
            }
            out[i] = acc;
        }
    }
}

enum NoiseEngine {
    Gaussian,
    Ar1Line { rho: f64, innovation: f64 },
    Ar1Grid(PackedCholesky),
    StudentT { df: f64, chi: ChiSquared<f64> },
    LogNormal,
}

impl NoiseEngine {
    fn build(noise: &NoiseSpec, shape: Shape) -> Result<NoiseEngine> {
        noise.validate()?;
        Ok(match (*noise, shape) {
            (NoiseSpec::Gaussian, _) => NoiseEngine::Gaussian,
            (NoiseSpec::Ar1 { rho }, Shape::OneD(_)) => NoiseEngine::Ar1Line {
                rho,
                innovation: (1.0 - rho * rho).sqrt(),
            },
            (NoiseSpec::Ar1 { rho }, Shape::TwoD { rows, cols }) => {
                NoiseEngine::Ar1Grid(PackedCholesky::factor_spatial(rows, cols, rho)?)
            }
            (NoiseSpec::StudentT { df }, _) => NoiseEngine::StudentT {
                df,
                chi: ChiSquared::new(df).expect("df > 2"),
            },
            (NoiseSpec::LogNormal, _) => NoiseEngine::LogNormal,
        })
    }

    fn fill_row(&self, rng: &mut ChaCha8Rng, z: &mut [f64], out: &mut [f64]) {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        match self {
            NoiseEngine::Gaussian => out.copy_from_slice(z),
            NoiseEngine::Ar1Line { rho, innovation } => {
                let mut prev = z[0];
                out[0] = prev;
                for j in 1..z.len() {
                    prev = rho * prev + innovation * z[j];
                    out[j] = prev;
                }
            }
            NoiseEngine::Ar1Grid(chol) => chol.apply(z, out),
            NoiseEngine::StudentT { df, chi } => {
                let w: f64 = chi.sample(rng);
                let scale = (df / w).sqrt();
                for (o, &v) in out.iter_mut().zip(z.iter()) {
                    *o = v * scale;
                }
            }
            NoiseEngine::LogNormal => {
                for (o, &v) in out.iter_mut().zip(z.iter()) {
                    *o = v.exp();
                }
            }
        }
    }
}

/// A generated trial with the realized changed set.
pub struct GeneratedTrial {
    pub series: SeriesTensor,
    pub changed_set: ComponentSelector,
}

/// Draws a sequence with rows `1..=tau` from the base distribution and rows
/// `tau+1..=n` from the changed one. The changed set is resampled from the
/// region on every call unless the spec freezes it.
pub fn generate(
    n: usize,
    shape: Shape,
    change: &ChangeSpec,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<SeriesTensor> {
    generate_detailed(n, shape, change, noise, seed).map(|g| g.series)
}

pub fn generate_detailed(
    n: usize,
    shape: Shape,
    change: &ChangeSpec,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<GeneratedTrial> {
    let d = shape.component_count();
    if n < 2 {
        return Err(Error::invalid("need n >= 2"));
    }
    change.validate(n, d)?;
    let engine = NoiseEngine::build(noise, shape)?;
    let mut rng = stream_rng(seed, domain::GENERATE, 0);

    let changed_set = match &change.frozen_changed_set {
        Some(h) => h.clone(),
        None => {
            let mut pool: Vec<usize> = change.region.indices().to_vec();
            for i in 0..change.changed {
                let j = rng.gen_range(i..pool.len());
                pool.swap(i, j);
            }
            pool.truncate(change.changed);
            ComponentSelector::new(pool, d)?
        }
    };

    let mean_shift = match change.kind {
        ChangeKind::Mean(mag) => mag.per_component(change.changed),
        ChangeKind::Variance { .. } => 0.0,
    };
    let sd_scale = match change.kind {
        ChangeKind::Variance { scale } => scale.sqrt(),
        ChangeKind::Mean(_) => 1.0,
    };
    let dense_scale = change.post_noise_scale.unwrap_or(1.0);

    let mut values = vec![0.0f64; n * d];
    let mut z = vec![0.0f64; d];
    for t in 0..n {
        let row = &mut values[t * d..(t + 1) * d];
        engine.fill_row(&mut rng, &mut z, row);
        if t >= change.tau {
            if sd_scale != 1.0 {
                for &j in changed_set.indices() {
                    row[j] *= sd_scale;
                }
            }
            if dense_scale != 1.0 {
                for v in row.iter_mut() {
                    *v *= dense_scale;
                }
            }
            if mean_shift != 0.0 {
                for &j in changed_set.indices() {
                    row[j] += mean_shift;
                }
            }
        }
    }
    Ok(GeneratedTrial {
        series: SeriesTensor::new(values, n, shape, None)?,
        changed_set,
    })
}

// ---------------------------------------------------------------------------
// Power studies
// ---------------------------------------------------------------------------

/// A trial counts as accurate when the estimate lands within `radius` time
/// points of the first post-change observation `tau + 1`.
pub fn is_accurate(tau_hat: usize, tau: usize, radius: usize) -> bool {
    (tau_hat as i64 - (tau as i64 + 1)).unsigned_abs() <= radius as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectMethod {
    /// The full multi-structure ensemble.
    Abcd,
    /// Single-block special case (one graph over all components).
    Gseg,
}

impl DetectMethod {
    pub fn label(&self) -> &'static str {
        match self {
            DetectMethod::Abcd => "abcd",
            DetectMethod::Gseg => "gseg",
        }
    }
}

fn default_radius() -> usize {
    10
}

fn default_props() -> Vec<f64> {
    vec![1.0]
}

fn default_alphas() -> Vec<f64> {
    vec![0.05]
}

fn default_methods() -> Vec<DetectMethod> {
    vec![DetectMethod::Abcd, DetectMethod::Gseg]
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_boundary() -> f64 {
    DEFAULT_BOUNDARY_FRAC
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChangeDesign {
    /// `mean` or `variance`.
    pub kind: String,
    pub total_l2: Option<f64>,
    pub per_component: Option<f64>,
    pub var_scale: Option<f64>,
    /// Grid axis: how many components change (`D`).
    pub sparsity: Vec<usize>,
    /// Grid axis: in-region change density `p_C`.
    #[serde(default = "default_props")]
    pub prop_in_region: Vec<f64>,
    /// Dense noise-scale factor applied to all components after the change.
    pub post_noise_scale: Option<f64>,
}

impl ChangeDesign {
    fn kind_for(&self, _changed: usize) -> Result<ChangeKind> {
        match self.kind.as_str() {
            "mean" => match (self.total_l2, self.per_component) {
                (Some(l), None) => Ok(ChangeKind::Mean(MeanMagnitude::TotalL2(l))),
                (None, Some(m)) => Ok(ChangeKind::Mean(MeanMagnitude::PerComponent(m))),
                _ => Err(Error::invalid(
                    "mean change needs exactly one of total_l2 / per_component",
                )),
            },
            "variance" => self
                .var_scale
                .map(|scale| ChangeKind::Variance { scale })
                .ok_or_else(|| Error::invalid("variance change needs var_scale")),
            other => Err(Error::invalid(format!("unknown change kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorDesign {
    /// CLI block grammar, e.g. `1,4,10,20,40` or `1x1,2x2,3x3`.
    pub blocks: String,
    #[serde(default = "default_k")]
    pub k: usize,
    pub permutations: usize,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<DetectMethod>,
    #[serde(default = "default_boundary")]
    pub boundary_frac: f64,
}

/// Full description of one simulation experiment.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerDesign {
    pub n: usize,
    pub shape: Vec<usize>,
    pub tau: usize,
    pub trials: usize,
    #[serde(default = "default_radius")]
    pub accuracy_radius: usize,
    pub noise: NoiseSpec,
    pub change: ChangeDesign,
    pub detector: DetectorDesign,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PowerCell {
    pub method: String,
    pub d_changed: usize,
    pub prop_in_region: f64,
    pub alpha: f64,
    pub trials: usize,
    pub significant: usize,
    pub significant_and_accurate: usize,
    pub base_seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialRecord {
    pub d_changed: usize,
    pub prop_in_region: f64,
    pub trial: usize,
    pub method: String,
    /// Stream index of this trial's data draw under the base seed.
    pub data_stream: u64,
    pub statistic: f64,
    pub tau_hat: usize,
    pub p_value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PowerTable {
    pub schema_version: u32,
    pub base_seed: u64,
    pub design: PowerDesign,
    pub cells: Vec<PowerCell>,
    pub trials: Vec<TrialRecord>,
}

impl PowerTable {
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("table serialization");
        s.push('\n');
        s
    }

    /// Per-cell counts as CSV; every row carries the base seed.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(
            "method,d_changed,prop_in_region,alpha,trials,significant,significant_and_accurate,power,accuracy_rate,base_seed\n",
        );
        for c in &self.cells {
            let power = c.significant as f64 / c.trials as f64;
            let acc = c.significant_and_accurate as f64 / c.trials as f64;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                c.method,
                c.d_changed,
                c.prop_in_region,
                c.alpha,
                c.trials,
                c.significant,
                c.significant_and_accurate,
                power,
                acc,
                c.base_seed
            ));
        }
        out
    }

    pub fn cell(&self, method: &str, d: usize, prop: f64, alpha: f64) -> Option<&PowerCell> {
        self.cells.iter().find(|c| {
            c.method == method && c.d_changed == d && c.prop_in_region == prop && c.alpha == alpha
        })
    }
}

fn single_block_plan(shape: Shape) -> BlockingPlan {
    let spec = match shape {
        Shape::OneD(_) => StructureSpec::OneD { p: 1 },
        Shape::TwoD { .. } => StructureSpec::TwoD { p1: 1, p2: 1 },
    };
    BlockingPlan::new(vec![spec], shape).expect("single block plan")
}

struct TrialOutcome {
    method: DetectMethod,
    statistic: f64,
    tau_hat: usize,
    p_value: f64,
    error: Option<String>,
}

/// Runs the full design grid: for every `(D, p_C)` cell and trial, one data
/// draw shared by all methods, then per-method detection and per-alpha
/// classification. Trials are independent streams merged by index.
pub fn power_study(design: &PowerDesign, seed: u64, parallel: bool) -> Result<PowerTable> {
    let shape = Shape::from_dims(&design.shape)?;
    if design.trials < 1 {
        return Err(Error::invalid("need at least one trial"));
    }
    if design.detector.k * (design.n - 1) > design.n * (design.n - 1) / 2 {
        return Err(Error::invalid(format!(
            "k = {} infeasible for n = {}",
            design.detector.k, design.n
        )));
    }
    let abcd_plan = BlockingPlan::parse(&design.detector.blocks, shape)?;
    let gseg_plan = single_block_plan(shape);

    let mut cells_spec = Vec::new();
    for &d_changed in &design.change.sparsity {
        for &prop in &design.change.prop_in_region {
            let kind = design.change.kind_for(d_changed)?;
            let mut change = match shape {
                Shape::OneD(d) => {
                    ChangeSpec::prefix_1d(design.tau, d, d_changed, prop, kind)?
                }
                Shape::TwoD { rows, cols } => {
                    ChangeSpec::square_2d(design.tau, rows, cols, d_changed, prop, kind)?
                }
            };
            change.post_noise_scale = design.change.post_noise_scale;
            cells_spec.push((d_changed, prop, change));
        }
    }

    let methods = &design.detector.methods;
    let total = cells_spec.len() * design.trials;
    let records = exec::try_map_indexed(total, parallel, |g| {
        let cell_idx = g / design.trials;
        let trial = g % design.trials;
        let (d_changed, prop, change) = &cells_spec[cell_idx];
        let data_stream = g as u64;
        let data_seed = derive_seed(seed, domain::TRIAL_DATA, data_stream);
        let series = generate(design.n, shape, change, &design.noise, data_seed)?;
        let mut outcomes = Vec::with_capacity(methods.len());
        for (mi, &method) in methods.iter().enumerate() {
            let plan = match method {
                DetectMethod::Abcd => abcd_plan.clone(),
                DetectMethod::Gseg => gseg_plan.clone(),
            };
            let mut cfg = DetectConfig::new(plan);
            cfg.graph = GraphConfig {
                metric: Metric::L2,
                k: design.detector.k,
            };
            cfg.boundary_frac = design.detector.boundary_frac;
            cfg.permutations = design.detector.permutations;
            cfg.seed = derive_seed(seed, domain::TRIAL_DETECT, (g * 8 + mi) as u64);
            cfg.retention = BlockRetention::None;
            cfg.parallel = false;
            let outcome = match abcd_detect(&series, &cfg) {
                Ok(res) => TrialOutcome {
                    method,
                    statistic: res.statistic,
                    tau_hat: res.tau_hat,
                    p_value: res.p_value.unwrap_or(1.0),
                    error: None,
                },
                Err(e) => TrialOutcome {
                    method,
                    statistic: 0.0,
                    tau_hat: 0,
                    p_value: 1.0,
                    error: Some(e.to_string()),
                },
            };
            outcomes.push(outcome);
        }
        Ok((*d_changed, *prop, trial, data_stream, outcomes))
    })?;

    let mut trial_records = Vec::new();
    for (d_changed, prop, trial, data_stream, outcomes) in &records {
        for o in outcomes {
            trial_records.push(TrialRecord {
                d_changed: *d_changed,
                prop_in_region: *prop,
                trial: *trial,
                method: o.method.label().to_string(),
                data_stream: *data_stream,
                statistic: o.statistic,
                tau_hat: o.tau_hat,
                p_value: o.p_value,
                error: o.error.clone(),
            });
        }
    }

    let mut cells = Vec::new();
    for (d_changed, prop, _) in &cells_spec {
        for &method in methods {
            for &alpha in &design.detector.alphas {
                let mut significant = 0;
                let mut sig_and_acc = 0;
                for r in trial_records.iter().filter(|r| {
                    r.d_changed == *d_changed
                        && r.prop_in_region == *prop
                        && r.method == method.label()
                        && r.error.is_none()
                }) {
                    if r.p_value <= alpha {
                        significant += 1;
                        if is_accurate(r.tau_hat, design.tau, design.accuracy_radius) {
                            sig_and_acc += 1;
                        }
                    }
                }
                cells.push(PowerCell {
                    method: method.label().to_string(),
                    d_changed: *d_changed,
                    prop_in_region: *prop,
                    alpha,
                    trials: design.trials,
                    significant,
                    significant_and_accurate: sig_and_acc,
                    base_seed: seed,
                });
            }
        }
    }

    Ok(PowerTable {
        schema_version: crate::detect::SCHEMA_VERSION,
        base_seed: seed,
        design: design.clone(),
        cells,
        trials: trial_records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_spec(tau: usize, d: usize, changed: usize, prop: f64, l2: f64) -> ChangeSpec {
        ChangeSpec::prefix_1d(tau, d, changed, prop, ChangeKind::Mean(MeanMagnitude::TotalL2(l2)))
            .unwrap()
    }

    #[test]
    fn region_is_the_first_d_over_p_components() {
        let spec = mean_spec(10, 300, 50, 0.5, 2.0);
        assert_eq!(spec.region.contiguous_range(), Some((0, 99)));
        let trial = generate_detailed(20, Shape::OneD(300), &spec, &NoiseSpec::Gaussian, 5).unwrap();
        assert_eq!(trial.changed_set.len(), 50);
        assert!(trial
            .changed_set
            .indices()
            .iter()
            .all(|&i| spec.region.contains(i)));
    }

    #[test]
    fn infeasible_region_rejected() {
        assert!(ChangeSpec::prefix_1d(
            10,
            40,
            30,
            0.5,
            ChangeKind::Mean(MeanMagnitude::TotalL2(1.0))
        )
        .is_err());
        let t = NoiseSpec::StudentT { df: 2.0 };
        assert!(t.validate().is_err());
    }

    #[test]
    fn column_means_match_the_shift() {
        // strong-law check at n = 5000: post-minus-pre column means sit
        // within 4 standard errors of L / sqrt(D) on the changed set
        let n = 5000;
        let tau = 2500;
        let d = 20;
        let mut spec = mean_spec(tau, d, 5, 0.5, 2.0);
        spec.frozen_changed_set =
            Some(ComponentSelector::new(vec![0, 2, 4, 6, 8], d).unwrap());
        let series = generate(n, Shape::OneD(d), &spec, &NoiseSpec::Gaussian, 11).unwrap();
        let shift = 2.0 / (5.0f64).sqrt();
        let se = (1.0 / tau as f64 + 1.0 / (n - tau) as f64).sqrt();
        for j in 0..d {
            let pre: f64 = (0..tau).map(|t| series.row(t)[j]).sum::<f64>() / tau as f64;
            let post: f64 =
                (tau..n).map(|t| series.row(t)[j]).sum::<f64>() / (n - tau) as f64;
            let expected = if spec.frozen_changed_set.as_ref().unwrap().contains(j) {
                shift
            } else {
                0.0
            };
            assert!(
                (post - pre - expected).abs() < 4.0 * se,
                "component {j}: diff = {}",
                post - pre
            );
        }
    }

    #[test]
    fn variance_change_scales_changed_components() {
        let n = 6000;
        let tau = 3000;
        let d = 8;
        let mut spec = ChangeSpec::prefix_1d(
            tau,
            d,
            4,
            1.0,
            ChangeKind::Variance { scale: 4.0 },
        )
        .unwrap();
        spec.frozen_changed_set = Some(ComponentSelector::new(vec![0, 1, 2, 3], d).unwrap());
        let series = generate(n, Shape::OneD(d), &spec, &NoiseSpec::Gaussian, 3).unwrap();
        let var = |j: usize, from: usize, to: usize| {
            let m: f64 = (from..to).map(|t| series.row(t)[j]).sum::<f64>() / (to - from) as f64;
            (from..to).map(|t| (series.row(t)[j] - m).powi(2)).sum::<f64>() / (to - from) as f64
        };
        assert!((var(0, tau, n) - 4.0).abs() < 0.5);
        assert!((var(5, tau, n) - 1.0).abs() < 0.25);
        assert!((var(0, 0, tau) - 1.0).abs() < 0.25);
    }

    #[test]
    fn ar1_lag_one_correlation() {
        let n = 5000;
        let d = 30;
        let rho = 0.6;
        let spec = mean_spec(n, d, 1, 1.0, 0.0); // tau = n: no change
        let series =
            generate(n, Shape::OneD(d), &spec, &NoiseSpec::Ar1 { rho }, 19).unwrap();
        // pooled adjacent-component correlation
        let mut num = 0.0;
        let mut den_a = 0.0;
        let mut den_b = 0.0;
        for t in 0..n {
            let row = series.row(t);
            for j in 0..d - 1 {
                num += row[j] * row[j + 1];
                den_a += row[j] * row[j];
                den_b += row[j + 1] * row[j + 1];
            }
        }
        let corr = num / (den_a.sqrt() * den_b.sqrt());
        let se = (1.0 - rho * rho) / ((n * (d - 1)) as f64).sqrt();
        assert!((corr - rho).abs() < 4.0 * se, "corr = {corr}");
    }

    #[test]
    fn grid_ar1_matches_pixel_distance_covariance() {
        let n = 4000;
        let rho = 0.6;
        let shape = Shape::TwoD { rows: 3, cols: 3 };
        let spec = ChangeSpec::square_2d(n, 3, 3, 1, 1.0, ChangeKind::Mean(MeanMagnitude::PerComponent(0.0))).unwrap();
        let series = generate(n, shape, &spec, &NoiseSpec::Ar1 { rho }, 23).unwrap();
        // pixels (0,0) and (1,1): distance sqrt(2)
        let (a, b) = (0usize, 4usize);
        let mut cov = 0.0;
        for t in 0..n {
            cov += series.row(t)[a] * series.row(t)[b];
        }
        cov /= n as f64;
        let expected = rho.powf(2f64.sqrt());
        assert!((cov - expected).abs() < 0.06, "cov = {cov}, expected {expected}");
    }

    /// Two-sample Kolmogorov-Smirnov distance between standardized samples.
    fn ks_distance(xs: &[f64], ys: &[f64]) -> f64 {
        let standardize = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
            let mut out: Vec<f64> = v.iter().map(|x| (x - m) / sd).collect();
            out.sort_by(f64::total_cmp);
            out
        };
        let a = standardize(xs);
        let b = standardize(ys);
        let mut max_gap: f64 = 0.0;
        let (mut i, mut j) = (0usize, 0usize);
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            let gap = (i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs();
            max_gap = max_gap.max(gap);
        }
        max_gap
    }

    #[test]
    fn student_t_approaches_gaussian_as_df_grows() {
        let n = 4000;
        let d = 1;
        let no_change = mean_spec(n, d, 1, 1.0, 0.0);
        let draw = |noise: &NoiseSpec, seed| {
            generate(n, Shape::OneD(d), &no_change, noise, seed)
                .unwrap()
                .values()
                .to_vec()
        };
        let gauss = draw(&NoiseSpec::Gaussian, 1);
        let t3 = draw(&NoiseSpec::StudentT { df: 3.0 }, 2);
        let t50 = draw(&NoiseSpec::StudentT { df: 50.0 }, 3);
        let heavy = ks_distance(&t3, &gauss);
        let light = ks_distance(&t50, &gauss);
        assert!(light < heavy, "KS(t50) = {light}, KS(t3) = {heavy}");
    }

    #[test]
    fn log_normal_rows_are_positive() {
        let spec = mean_spec(10, 5, 1, 1.0, 0.0);
        let series = generate(10, Shape::OneD(5), &spec, &NoiseSpec::LogNormal, 4).unwrap();
        assert!(series.values().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn generator_is_seed_deterministic_and_resamples_changed_set() {
        let spec = mean_spec(5, 50, 5, 0.5, 2.0);
        let a = generate_detailed(10, Shape::OneD(50), &spec, &NoiseSpec::Gaussian, 7).unwrap();
        let b = generate_detailed(10, Shape::OneD(50), &spec, &NoiseSpec::Gaussian, 7).unwrap();
        assert_eq!(a.series, b.series);
        assert_eq!(a.changed_set, b.changed_set);
        let c = generate_detailed(10, Shape::OneD(50), &spec, &NoiseSpec::Gaussian, 8).unwrap();
        assert_ne!(a.changed_set, c.changed_set);
    }

    #[test]
    fn accuracy_rule_boundaries() {
        // estimate 131 with change at 120 counts as accurate; at 119 it does not
        assert!(is_accurate(131, 120, 10));
        assert!(!is_accurate(131, 119, 10));
        assert!(is_accurate(111, 120, 10));
        assert!(!is_accurate(110, 120, 10));
    }

    fn tiny_design() -> PowerDesign {
        PowerDesign {
            n: 60,
            shape: vec![10],
            tau: 30,
            trials: 12,
            accuracy_radius: 10,
            noise: NoiseSpec::Gaussian,
            change: ChangeDesign {
                kind: "mean".to_string(),
                total_l2: Some(0.0),
                per_component: None,
                var_scale: None,
                sparsity: vec![5],
                prop_in_region: vec![1.0],
                post_noise_scale: None,
            },
            detector: DetectorDesign {
                blocks: "1,2".to_string(),
                k: 6,
                permutations: 39,
                alphas: vec![0.001, 0.05, 0.1],
                methods: vec![DetectMethod::Abcd],
                boundary_frac: DEFAULT_BOUNDARY_FRAC,
            },
        }
    }

    #[test]
    fn power_study_runs_grid_and_reproduces() {
        let design = tiny_design();
        let a = power_study(&design, 5, true).unwrap();
        let b = power_study(&design, 5, false).unwrap();
        assert_eq!(a.to_csv_string(), b.to_csv_string());
        // one cell per (method, D, prop, alpha): here 3 alphas
        assert_eq!(a.cells.len(), 3);
        assert!(a.cell("abcd", 5, 1.0, 0.05).is_some());
        assert_eq!(a.trials.len(), 12);
        let csv = a.to_csv_string();
        assert!(csv.contains("0.001"));
        assert!(csv.contains("0.1"));
    }

    #[test]
    fn zero_signal_rejections_stay_near_alpha() {
        // null design: total_l2 = 0; rejection rate at each alpha must stay
        // within 3 binomial standard errors of the attainable level
        let mut design = tiny_design();
        design.trials = 60;
        design.detector.alphas = vec![0.1];
        let table = power_study(&design, 9, true).unwrap();
        let cell = table.cell("abcd", 5, 1.0, 0.1).unwrap();
        let rate = cell.significant_and_accurate as f64 / cell.trials as f64;
        let bound = 0.1 + 3.0 * (0.1f64 * 0.9 / 60.0).sqrt();
        assert!(rate <= bound, "rate = {rate}, bound = {bound}");
    }
}
