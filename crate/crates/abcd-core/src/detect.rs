//! Adaptive block-based single change-point detection.
//!
//! Each blocking structure splits the components into blocks; every block
//! gets its own similarity graph (a k-MST on the block's sub-series) and a
//! max-type scan curve `M_j(t)`. Per structure the curves are folded into
//! the pointwise maximum `V_s(t)`, the structures are averaged into
//! `V_avg(t)`, and the test statistic is `T = max_t V_avg(t)` with
//! `tau_hat = argmax_t V_avg(t)`.
//!
//! Significance comes from permutation resampling. Graphs depend only on
//! the unordered set of observations, so replicates permute the time labels
//! and reuse every graph; one replicate costs O(total edges + n).

use serde::{Deserialize, Serialize};

use crate::blocking::{Block, BlockRegion, BlockingPlan, BlockingStructure};
use crate::edgecount::{
    count_curves_into, identity_positions, m_statistic, moment_table, MomentTable, Window,
    DEFAULT_BOUNDARY_FRAC,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::rng::{self, domain};
use crate::series::{slice_components, SeriesTensor};
use crate::simgraph::{k_mst, pairwise_distances_with, Metric, SimilarityGraph};

/// Similarity-graph settings for block scans.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub metric: Metric,
    /// Number of edge-disjoint spanning trees in each block's k-MST.
    pub k: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            metric: Metric::L2,
            k: DEFAULT_K,
        }
    }
}

/// Default spanning-tree count for standalone detection.
pub const DEFAULT_K: usize = 40;

/// How much per-block evidence the result keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockRetention {
    /// Only the ensemble curves and the best block.
    None,
    /// Per-block `M_j(tau_hat)` values (needed by [`localize`]).
    Stats,
    /// Stats plus the full `M_j` curves.
    Curves,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectConfig {
    pub plan: BlockingPlan,
    pub graph: GraphConfig,
    /// Explicit scan window; `None` derives one from `boundary_frac`.
    pub window: Option<Window>,
    pub boundary_frac: f64,
    /// Number of permutation replicates `U`; 0 skips the p-value.
    pub permutations: usize,
    pub seed: u64,
    pub retention: BlockRetention,
    pub parallel: bool,
}

impl DetectConfig {
    pub fn new(plan: BlockingPlan) -> Self {
        DetectConfig {
            plan,
            graph: GraphConfig::default(),
            window: None,
            boundary_frac: DEFAULT_BOUNDARY_FRAC,
            permutations: 0,
            seed: 0,
            retention: BlockRetention::Stats,
            parallel: cfg!(feature = "parallel"),
        }
    }
}

/// Block position in reporting coordinates (1-based, inclusive).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionOut {
    Range {
        start: usize,
        end: usize,
    },
    Rect {
        row_start: usize,
        row_end: usize,
        col_start: usize,
        col_end: usize,
    },
}

impl RegionOut {
    fn from_region(region: &BlockRegion) -> RegionOut {
        match *region {
            BlockRegion::Range { start, end } => RegionOut::Range {
                start: start + 1,
                end: end + 1,
            },
            BlockRegion::Rect {
                row_start,
                row_end,
                col_start,
                col_end,
            } => RegionOut::Rect {
                row_start: row_start + 1,
                row_end: row_end + 1,
                col_start: col_start + 1,
                col_end: col_end + 1,
            },
        }
    }
}

/// The block with the largest scan value at the estimated change-point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestBlock {
    pub structure_id: usize,
    pub block_id: usize,
    pub region: RegionOut,
    pub m_at_tau: f64,
}

/// Per-block evidence retained in the result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    pub structure_id: usize,
    pub block_id: usize,
    pub region: RegionOut,
    pub m_at_tau: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curve: Option<Vec<f64>>,
}

/// Resolved settings echoed into every result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub metric: Metric,
    pub k: usize,
    pub blocks: Vec<String>,
    pub permutations: usize,
    pub seed: u64,
}

/// Full outcome of a single-change-point test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub schema_version: u32,
    pub config: ConfigEcho,
    pub window: Window,
    /// One curve per structure over the window: `V_s(t)`.
    pub v_s: Vec<Vec<f64>>,
    /// Ensemble average of the `V_s` curves.
    pub v_avg: Vec<f64>,
    /// `T = max_t V_avg(t)`.
    pub statistic: f64,
    /// Smallest split attaining `T` (1-based count of pre-change rows).
    pub tau_hat: usize,
    /// Add-one permutation p-value `(1 + #{T* >= T}) / (U + 1)`; `null`
    /// when no permutations were requested.
    pub p_value: Option<f64>,
    pub best_block: BestBlock,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_block: Option<Vec<BlockStats>>,
    /// Extra caller context (the CLI stores its resolved arguments here).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run_config: Option<serde_json::Value>,
}

pub const SCHEMA_VERSION: u32 = 1;

impl ScanResult {
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result serialization");
        s.push('\n');
        s
    }

    pub fn from_json_str(text: &str) -> Result<ScanResult> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("bad result JSON: {e}")))
    }
}

// ---------------------------------------------------------------------------
// Block preparation
// ---------------------------------------------------------------------------

struct PreparedBlock {
    structure_idx: usize,
    block_idx: usize,
    region: BlockRegion,
    edges: Vec<(u32, u32)>,
    /// `None` marks a degenerate (constant) block whose curve is pinned to 0.
    table: Option<MomentTable>,
}

fn build_block_graph(
    series: &SeriesTensor,
    block: &Block,
    graph: GraphConfig,
    parallel: bool,
) -> Result<Option<SimilarityGraph>> {
    let sub = slice_components(series, &block.selector)?;
    let dist = pairwise_distances_with(&sub, graph.metric, parallel)?;
    if dist.is_all_zero() {
        return Ok(None);
    }
    Ok(Some(k_mst(&dist, graph.k)?))
}

fn prepare_blocks(
    series: &SeriesTensor,
    plan: &BlockingPlan,
    graph: GraphConfig,
    window: Window,
    parallel: bool,
) -> Result<Vec<PreparedBlock>> {
    let n = series.n();
    let flat: Vec<(usize, usize)> = plan
        .structures
        .iter()
        .enumerate()
        .flat_map(|(si, s)| (0..s.blocks.len()).map(move |bi| (si, bi)))
        .collect();
    exec::try_map_indexed(flat.len(), parallel, |idx| {
        let (si, bi) = flat[idx];
        let structure = &plan.structures[si];
        let block = &structure.blocks[bi];
        let tag = |e: Error| e.in_block(structure.id, bi + 1);
        let built = build_block_graph(series, block, graph, parallel).map_err(tag)?;
        match built {
            None => {
                log::warn!(
                    "structure {}, block {}: sub-series is constant; its scan curve is pinned to 0",
                    structure.id,
                    bi + 1
                );
                Ok(PreparedBlock {
                    structure_idx: si,
                    block_idx: bi,
                    region: block.region,
                    edges: Vec::new(),
                    table: None,
                })
            }
            Some(g) => {
                let table =
                    moment_table(n, g.num_edges(), g.shared_pairs(), window).map_err(tag)?;
                Ok(PreparedBlock {
                    structure_idx: si,
                    block_idx: bi,
                    region: block.region,
                    edges: g.edges().to_vec(),
                    table: Some(table),
                })
            }
        }
    })
}

/// Scratch buffers for one replicate evaluation.
struct ReplicateBufs {
    hist: Vec<u32>,
    r1: Vec<u32>,
    r2: Vec<u32>,
    v_s: Vec<f64>,
    v_avg: Vec<f64>,
}

impl ReplicateBufs {
    fn new(n: usize, wlen: usize) -> Self {
        ReplicateBufs {
            hist: vec![0; n],
            r1: vec![0; n - 1],
            r2: vec![0; n - 1],
            v_s: vec![0.0; wlen],
            v_avg: vec![0.0; wlen],
        }
    }
}

/// Folds one block's `M_j` into the running `V_s`.
fn fold_block_into_vs(block: &PreparedBlock, window: Window, bufs: &mut ReplicateBufs, positions: &[usize]) {
    match &block.table {
        None => {
            // degenerate block contributes the constant 0 curve
            for v in bufs.v_s.iter_mut() {
                *v = v.max(0.0);
            }
        }
        Some(table) => {
            count_curves_into(&block.edges, positions, &mut bufs.hist, &mut bufs.r1, &mut bufs.r2);
            for (i, t) in window.iter().enumerate() {
                let m = m_statistic(table.rows[i], bufs.r1[t - 1] as f64, bufs.r2[t - 1] as f64);
                bufs.v_s[i] = bufs.v_s[i].max(m);
            }
        }
    }
}

/// `T` for one relabeling, following the exact fold order of the observed
/// statistic so identical inputs give bit-identical outputs.
fn replicate_statistic(
    prepared: &[PreparedBlock],
    structure_ranges: &[(usize, usize)],
    window: Window,
    inv_s: f64,
    positions: &[usize],
    bufs: &mut ReplicateBufs,
) -> f64 {
    bufs.v_avg.fill(0.0);
    for &(start, end) in structure_ranges {
        bufs.v_s.fill(f64::NEG_INFINITY);
        for block in &prepared[start..end] {
            fold_block_into_vs(block, window, bufs, positions);
        }
        for (acc, &v) in bufs.v_avg.iter_mut().zip(bufs.v_s.iter()) {
            *acc += v;
        }
    }
    bufs.v_avg
        .iter()
        .map(|&v| v * inv_s)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn resolve_window(series: &SeriesTensor, cfg: &DetectConfig) -> Result<Window> {
    match cfg.window {
        Some(w) => {
            Window::new(w.lo, w.hi, series.n())?;
            Ok(w)
        }
        None => Window::default_for(series.n(), cfg.boundary_frac),
    }
}

fn validate_plan(series: &SeriesTensor, plan: &BlockingPlan) -> Result<()> {
    for s in &plan.structures {
        let total: usize = s.blocks.iter().map(|b| b.selector.len()).sum();
        if total != series.d() {
            return Err(Error::invalid(format!(
                "blocking structure {} covers {total} components but the series has {}",
                s.spec,
                series.d()
            )));
        }
    }
    Ok(())
}

/// Averages per-structure maxima into the ensemble curve; shared by the
/// observed pass and the permutation replay.
fn ensemble_average(v_s: &[Vec<f64>]) -> Vec<f64> {
    let wlen = v_s[0].len();
    let inv_s = 1.0 / v_s.len() as f64;
    let mut v_avg = vec![0.0; wlen];
    for curve in v_s {
        for (acc, &v) in v_avg.iter_mut().zip(curve.iter()) {
            *acc += v;
        }
    }
    for v in v_avg.iter_mut() {
        *v *= inv_s;
    }
    v_avg
}

/// Pointwise maximum of per-block scan curves over a common window.
pub fn structure_max(block_curves: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = block_curves
        .first()
        .ok_or_else(|| Error::invalid("structure_max needs at least one curve"))?;
    if block_curves.iter().any(|c| c.len() != first.len()) {
        return Err(Error::invalid("scan curves have mismatched windows"));
    }
    let mut out = vec![f64::NEG_INFINITY; first.len()];
    for curve in block_curves {
        for (acc, &v) in out.iter_mut().zip(curve.iter()) {
            *acc = acc.max(v);
        }
    }
    Ok(out)
}

/// Max-type scan curves `M_j(t)`, one per block of `structure`, each from a
/// k-MST on that block's sub-series.
pub fn block_scans(
    series: &SeriesTensor,
    structure: &BlockingStructure,
    graph: GraphConfig,
    window: Window,
) -> Result<Vec<Vec<f64>>> {
    Window::new(window.lo, window.hi, series.n())?;
    let plan = BlockingPlan {
        structures: vec![structure.clone()],
    };
    validate_plan(series, &plan)?;
    let prepared = prepare_blocks(series, &plan, graph, window, cfg!(feature = "parallel"))?;
    let n = series.n();
    let positions = identity_positions(n);
    Ok(prepared
        .iter()
        .map(|b| observed_curve(b, window, n, &positions))
        .collect())
}

fn observed_curve(block: &PreparedBlock, window: Window, n: usize, positions: &[usize]) -> Vec<f64> {
    match &block.table {
        None => vec![0.0; window.len()],
        Some(table) => {
            let mut hist = vec![0u32; n];
            let mut r1 = vec![0u32; n - 1];
            let mut r2 = vec![0u32; n - 1];
            count_curves_into(&block.edges, positions, &mut hist, &mut r1, &mut r2);
            window
                .iter()
                .enumerate()
                .map(|(i, t)| m_statistic(table.rows[i], r1[t - 1] as f64, r2[t - 1] as f64))
                .collect()
        }
    }
}

/// Per-block graphs for a whole plan; debugging hook behind the CLI's graph
/// dump. Constant blocks yield `None`.
pub fn block_graphs(
    series: &SeriesTensor,
    plan: &BlockingPlan,
    graph: GraphConfig,
) -> Result<Vec<(usize, usize, Option<SimilarityGraph>)>> {
    validate_plan(series, plan)?;
    let mut out = Vec::new();
    for structure in &plan.structures {
        for (bi, block) in structure.blocks.iter().enumerate() {
            let g = build_block_graph(series, block, graph, cfg!(feature = "parallel"))?;
            out.push((structure.id, bi + 1, g));
        }
    }
    Ok(out)
}

/// Runs the full adaptive block-based test.
pub fn abcd_detect(series: &SeriesTensor, cfg: &DetectConfig) -> Result<ScanResult> {
    let n = series.n();
    validate_plan(series, &cfg.plan)?;
    let window = resolve_window(series, cfg)?;
    if cfg.graph.k < 1 {
        return Err(Error::invalid("k must be at least 1"));
    }

    let prepared = prepare_blocks(series, &cfg.plan, cfg.graph, window, cfg.parallel)?;

    // contiguous ranges of `prepared` per structure (flattening preserves order)
    let num_structures = cfg.plan.num_structures();
    let mut structure_ranges = Vec::with_capacity(num_structures);
    let mut cursor = 0;
    for s in &cfg.plan.structures {
        structure_ranges.push((cursor, cursor + s.blocks.len()));
        cursor += s.blocks.len();
    }

    // observed pass: full per-block curves
    let positions = identity_positions(n);
    let block_curves: Vec<Vec<f64>> = prepared
        .iter()
        .map(|b| observed_curve(b, window, n, &positions))
        .collect();
    let v_s: Vec<Vec<f64>> = structure_ranges
        .iter()
        .map(|&(start, end)| structure_max(&block_curves[start..end]).expect("nonempty structure"))
        .collect();
    let v_avg = ensemble_average(&v_s);

    let mut statistic = f64::NEG_INFINITY;
    let mut tau_hat = window.lo;
    for (i, &v) in v_avg.iter().enumerate() {
        if v > statistic {
            statistic = v;
            tau_hat = window.lo + i;
        }
    }

    // per-block evidence at tau_hat
    let tau_idx = tau_hat - window.lo;
    let mut best: Option<BestBlock> = None;
    let mut stats = Vec::with_capacity(prepared.len());
    for (block, curve) in prepared.iter().zip(&block_curves) {
        let m_at_tau = curve[tau_idx];
        let structure_id = cfg.plan.structures[block.structure_idx].id;
        let block_id = block.block_idx + 1;
        let region = RegionOut::from_region(&block.region);
        if best.as_ref().map_or(true, |b| m_at_tau > b.m_at_tau) {
            best = Some(BestBlock {
                structure_id,
                block_id,
                region,
                m_at_tau,
            });
        }
        stats.push(BlockStats {
            structure_id,
            block_id,
            region,
            m_at_tau,
            curve: match cfg.retention {
                BlockRetention::Curves => Some(curve.clone()),
                _ => None,
            },
        });
    }
    let best_block = best.expect("plan has at least one block");

    // permutation replay: labels only, graphs reused
    let p_value = if cfg.permutations > 0 {
        let inv_s = 1.0 / num_structures as f64;
        let wlen = window.len();
        let exceed = exec::map_indexed(cfg.permutations, cfg.parallel, |u| {
            let mut rng = rng::stream_rng(cfg.seed, domain::PERMUTATION, u as u64);
            let perm = rng::random_permutation(&mut rng, n);
            let mut bufs = ReplicateBufs::new(n, wlen);
            let t_star =
                replicate_statistic(&prepared, &structure_ranges, window, inv_s, &perm, &mut bufs);
            u32::from(t_star >= statistic)
        });
        let count: u32 = exceed.iter().sum();
        Some((1.0 + count as f64) / (cfg.permutations as f64 + 1.0))
    } else {
        None
    };

    Ok(ScanResult {
        schema_version: SCHEMA_VERSION,
        config: ConfigEcho {
            metric: cfg.graph.metric,
            k: cfg.graph.k,
            blocks: cfg.plan.spec_strings(),
            permutations: cfg.permutations,
            seed: cfg.seed,
        },
        window,
        v_s,
        v_avg,
        statistic,
        tau_hat,
        p_value,
        best_block,
        per_block: match cfg.retention {
            BlockRetention::None => None,
            _ => Some(stats),
        },
        run_config: None,
    })
}

/// A row of the localization ranking.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedBlock {
    pub rank: usize,
    pub structure_id: usize,
    pub block_id: usize,
    pub region: RegionOut,
    pub m_at_tau: f64,
}

/// Blocks ranked by their scan value at `tau_hat`, most evidential first;
/// ties fall back to `(structure, block)` order. `top_m` is clamped to the
/// number of blocks.
pub fn localize(result: &ScanResult, top_m: usize) -> Result<Vec<RankedBlock>> {
    let stats = result.per_block.as_ref().ok_or_else(|| {
        Error::invalid(
            "per-block stats were not retained; re-run detection with block retention enabled",
        )
    })?;
    let mut order: Vec<&BlockStats> = stats.iter().collect();
    order.sort_by(|a, b| {
        b.m_at_tau
            .total_cmp(&a.m_at_tau)
            .then(a.structure_id.cmp(&b.structure_id))
            .then(a.block_id.cmp(&b.block_id))
    });
    Ok(order
        .into_iter()
        .take(top_m.min(stats.len()))
        .enumerate()
        .map(|(i, s)| RankedBlock {
            rank: i + 1,
            structure_id: s.structure_id,
            block_id: s.block_id,
            region: s.region,
            m_at_tau: s.m_at_tau,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocking::{default_plan, make_blocks_1d, StructureSpec};
    use crate::edgecount::scan_curves;
    use crate::rng::stream_rng;
    use crate::series::Shape;
    use crate::simgraph::pairwise_distances;
    use rand::Rng;

    /// Deterministic test series; values land on a dyadic grid so that
    /// translations below stay exact in floating point.
    fn dyadic_series(seed: u64, n: usize, d: usize) -> SeriesTensor {
        let mut rng = stream_rng(seed, 99, 0);
        let values: Vec<f64> = (0..n * d)
            .map(|_| rng.gen_range(0..4096) as f64 / 256.0)
            .collect();
        SeriesTensor::new(values, n, Shape::OneD(d), None).unwrap()
    }

    fn base_cfg(plan: BlockingPlan) -> DetectConfig {
        let mut cfg = DetectConfig::new(plan);
        cfg.graph.k = 3;
        cfg
    }

    #[test]
    fn gseg_mode_matches_direct_scan() {
        let series = dyadic_series(5, 40, 6);
        let plan = BlockingPlan::new(vec![StructureSpec::OneD { p: 1 }], series.shape()).unwrap();
        let cfg = base_cfg(plan);
        let result = abcd_detect(&series, &cfg).unwrap();

        let dist = pairwise_distances(&series, Metric::L2).unwrap();
        let graph = k_mst(&dist, 3).unwrap();
        let direct = scan_curves(&graph, &identity_positions(40), result.window).unwrap();
        assert_eq!(result.v_avg, direct.m);
        assert_eq!(result.statistic, direct.max_m());
        assert_eq!(result.tau_hat, direct.argmax_t());
    }

    #[test]
    fn structure_max_examples() {
        let single = structure_max(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(single, vec![1.0, 2.0]);
        let two = structure_max(&[vec![1.0, 3.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(two, vec![2.0, 3.0]);
        assert!(structure_max(&[]).is_err());
        assert!(structure_max(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn structure_max_matches_naive_loop() {
        let mut rng = stream_rng(3, 99, 1);
        let curves: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..25).map(|_| rng.gen_range(-5.0..5.0)).collect())
            .collect();
        let fast = structure_max(&curves).unwrap();
        for i in 0..25 {
            let naive = curves.iter().map(|c| c[i]).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(fast[i], naive);
        }
    }

    #[test]
    fn ensemble_average_of_identical_curves_is_identity() {
        let curve = vec![0.5, 2.0, 1.25];
        let avg = ensemble_average(&[curve.clone(), curve.clone(), curve.clone()]);
        assert_eq!(avg, curve);
    }

    #[test]
    fn within_block_component_permutation_is_exact() {
        // integer-valued data keeps L2 sums exact under reordering
        let mut rng = stream_rng(11, 99, 2);
        let n = 30;
        let d = 8;
        let values: Vec<f64> = (0..n * d).map(|_| rng.gen_range(0..16) as f64).collect();
        let series = SeriesTensor::new(values.clone(), n, Shape::OneD(d), None).unwrap();

        // swap components 1 and 3 (both inside the first block of P = 2)
        let mut swapped = values;
        for t in 0..n {
            swapped.swap(t * d + 1, t * d + 3);
        }
        let series_swapped = SeriesTensor::new(swapped, n, Shape::OneD(d), None).unwrap();

        let plan = BlockingPlan::new(vec![StructureSpec::OneD { p: 2 }], series.shape()).unwrap();
        let cfg = base_cfg(plan);
        let a = abcd_detect(&series, &cfg).unwrap();
        let b = abcd_detect(&series_swapped, &cfg).unwrap();
        assert_eq!(a.v_avg, b.v_avg);
        assert_eq!(a.statistic, b.statistic);
        assert_eq!(a.tau_hat, b.tau_hat);
    }

    #[test]
    fn global_translation_is_exact_on_dyadic_data() {
        let series = dyadic_series(21, 36, 5);
        let shifted = SeriesTensor::new(
            series.values().iter().map(|v| v + 5.0).collect(),
            36,
            series.shape(),
            None,
        )
        .unwrap();
        let plan = BlockingPlan::new(
            vec![StructureSpec::OneD { p: 1 }, StructureSpec::OneD { p: 5 }],
            series.shape(),
        )
        .unwrap();
        let mut cfg = base_cfg(plan);
        cfg.permutations = 25;
        cfg.seed = 9;
        let a = abcd_detect(&series, &cfg).unwrap();
        let b = abcd_detect(&shifted, &cfg).unwrap();
        assert_eq!(a.to_json_string(), b.to_json_string());
    }

    #[test]
    fn same_seed_gives_identical_json() {
        let series = dyadic_series(8, 32, 4);
        let plan = default_plan(series.shape());
        let mut cfg = base_cfg(plan);
        cfg.permutations = 40;
        cfg.seed = 123;
        let a = abcd_detect(&series, &cfg).unwrap();
        let b = abcd_detect(&series, &cfg).unwrap();
        assert_eq!(a.to_json_string(), b.to_json_string());
    }

    #[test]
    fn parallel_flag_does_not_change_results() {
        let series = dyadic_series(13, 32, 4);
        let plan = default_plan(series.shape());
        let mut cfg = base_cfg(plan);
        cfg.permutations = 40;
        cfg.seed = 7;
        cfg.parallel = false;
        let seq = abcd_detect(&series, &cfg).unwrap();
        cfg.parallel = true;
        let par = abcd_detect(&series, &cfg).unwrap();
        assert_eq!(seq.to_json_string(), par.to_json_string());
    }

    #[test]
    fn no_permutations_means_null_p() {
        let series = dyadic_series(2, 24, 3);
        let plan = default_plan(series.shape());
        let result = abcd_detect(&series, &base_cfg(plan)).unwrap();
        assert_eq!(result.p_value, None);
        assert!(result.to_json_string().contains("\"p_value\": null"));
    }

    #[test]
    fn p_value_has_add_one_floor() {
        let series = dyadic_series(4, 30, 3);
        let plan = default_plan(series.shape());
        let mut cfg = base_cfg(plan);
        cfg.permutations = 19;
        let result = abcd_detect(&series, &cfg).unwrap();
        let p = result.p_value.unwrap();
        assert!(p >= 1.0 / 20.0 && p <= 1.0);
    }

    #[test]
    fn constant_block_is_pinned_to_zero() {
        // components 2..4 are constant; block 2 of P = 2 degenerates
        let mut rng = stream_rng(17, 99, 3);
        let n = 30;
        let values: Vec<f64> = (0..n)
            .flat_map(|_| {
                vec![
                    rng.gen_range(0..512) as f64 / 64.0,
                    rng.gen_range(0..512) as f64 / 64.0,
                    1.5,
                    1.5,
                ]
            })
            .collect();
        let series = SeriesTensor::new(values, n, Shape::OneD(4), None).unwrap();
        let plan = BlockingPlan::new(vec![StructureSpec::OneD { p: 2 }], series.shape()).unwrap();
        let mut cfg = base_cfg(plan);
        cfg.graph.k = 2;
        cfg.retention = BlockRetention::Curves;
        let result = abcd_detect(&series, &cfg).unwrap();
        let stats = result.per_block.as_ref().unwrap();
        assert_eq!(stats[1].m_at_tau, 0.0);
        assert!(stats[1].curve.as_ref().unwrap().iter().all(|&v| v == 0.0));
        assert!(result.statistic.is_finite());
    }

    #[test]
    fn localize_ranks_and_clamps() {
        let series = dyadic_series(6, 40, 8);
        let plan = BlockingPlan::new(
            vec![StructureSpec::OneD { p: 1 }, StructureSpec::OneD { p: 4 }],
            series.shape(),
        )
        .unwrap();
        let mut cfg = base_cfg(plan);
        cfg.graph.k = 2;
        let result = abcd_detect(&series, &cfg).unwrap();
        let ranked = localize(&result, 100).unwrap();
        assert_eq!(ranked.len(), 5); // clamped to the total block count
        for pair in ranked.windows(2) {
            assert!(pair[0].m_at_tau >= pair[1].m_at_tau);
        }
        assert_eq!(ranked[0].m_at_tau, result.best_block.m_at_tau);
        assert_eq!(ranked[0].structure_id, result.best_block.structure_id);
        assert_eq!(ranked[0].block_id, result.best_block.block_id);

        let mut cfg = cfg;
        cfg.retention = BlockRetention::None;
        let bare = abcd_detect(&series, &cfg).unwrap();
        let err = localize(&bare, 3).unwrap_err().to_string();
        assert!(err.contains("re-run"), "got: {err}");
    }

    #[test]
    fn single_block_plan_trivially_ranks_first() {
        let series = dyadic_series(30, 24, 4);
        let plan = BlockingPlan::new(vec![StructureSpec::OneD { p: 1 }], series.shape()).unwrap();
        let mut cfg = base_cfg(plan);
        cfg.graph.k = 2;
        let result = abcd_detect(&series, &cfg).unwrap();
        let ranked = localize(&result, 1).unwrap();
        assert_eq!(ranked.len(), 1);
        assert_eq!((ranked[0].structure_id, ranked[0].block_id), (1, 1));
    }

    #[test]
    fn mismatched_plan_rejected() {
        let series = dyadic_series(1, 20, 6);
        let plan = BlockingPlan::new(vec![StructureSpec::OneD { p: 2 }], Shape::OneD(8)).unwrap();
        assert!(abcd_detect(&series, &base_cfg(plan)).is_err());
    }

    #[test]
    fn block_scans_single_structure_matches_detect() {
        let series = dyadic_series(44, 30, 6);
        let structure = {
            let mut s = make_blocks_1d(6, 3).unwrap();
            s.id = 1;
            s
        };
        let window = Window::default_for(30, DEFAULT_BOUNDARY_FRAC).unwrap();
        let graph = GraphConfig {
            metric: Metric::L2,
            k: 2,
        };
        let curves = block_scans(&series, &structure, graph, window).unwrap();
        assert_eq!(curves.len(), 3);
        let vs = structure_max(&curves).unwrap();

        let plan = BlockingPlan::new(vec![StructureSpec::OneD { p: 3 }], series.shape()).unwrap();
        let mut cfg = DetectConfig::new(plan);
        cfg.graph = graph;
        let result = abcd_detect(&series, &cfg).unwrap();
        assert_eq!(result.v_s[0], vs);
    }
}
