//! Within-sample edge counts, permutation-null moments and the standardized
//! max-type scan statistic for one similarity graph.
//!
//! Every candidate split `t` (1-based count of observations in the first
//! sample) partitions the sequence into `{1..t}` and `{t+1..n}`. `r1(t)`
//! counts edges with both endpoints in the first sample, `r2(t)` edges with
//! both endpoints in the second. Moments under the permutation null (each of
//! the `n!` time relabelings equally likely) have closed forms in `n`, `t`,
//! the edge count and the number of edge pairs sharing a node; they are
//! gated by an exhaustive enumeration oracle in the test suite.

use crate::error::{Error, Result};
use crate::simgraph::SimilarityGraph;

/// Inclusive candidate range for the split `t`, in `1..=n-1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Window {
    pub lo: usize,
    pub hi: usize,
}

impl Window {
    pub fn new(lo: usize, hi: usize, n: usize) -> Result<Window> {
        if lo < 1 || hi > n - 1 || lo > hi {
            return Err(Error::invalid(format!(
                "window [{lo}, {hi}] invalid for n = {n} (need 1 <= lo <= hi <= n-1)"
            )));
        }
        Ok(Window { lo, hi })
    }

    /// Boundary-trimmed default: `n0 = floor(frac * n)` observations are
    /// excluded at each end. The ends are additionally clamped to
    /// `[2, n-2]` because the weighted count is identically zero at
    /// `t = 1` and `t = n-1`, making its null variance vanish there.
    pub fn default_for(n: usize, boundary_frac: f64) -> Result<Window> {
        if n < 4 {
            return Err(Error::invalid(format!(
                "need n >= 4 for a scan window, got n = {n}"
            )));
        }
        if !(0.0..0.5).contains(&boundary_frac) {
            return Err(Error::invalid(format!(
                "boundary fraction must be in [0, 0.5), got {boundary_frac}"
            )));
        }
        let n0 = (boundary_frac * n as f64).floor() as usize;
        let lo = n0.max(2);
        let hi = (n - n0).min(n - 2);
        Window::new(lo, hi, n)
    }

    pub fn len(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> {
        self.lo..=self.hi
    }
}

/// Default boundary-exclusion fraction.
pub const DEFAULT_BOUNDARY_FRAC: f64 = 0.05;

/// Raw within-sample edge counts over every split `t = 1..n-1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeCountCurves {
    pub n: usize,
    pub num_edges: usize,
    /// `sum_i d_i (d_i - 1) / 2` for the graph the counts came from.
    pub shared_pairs: u64,
    /// `r1[t-1]` = edges with both endpoints at time positions `<= t`.
    pub r1: Vec<u32>,
    /// `r2[t-1]` = edges with both endpoints at time positions `> t`.
    pub r2: Vec<u32>,
}

fn check_positions(positions: &[usize], n: usize) -> Result<()> {
    if positions.len() != n {
        return Err(Error::invalid(format!(
            "{} labels for {} nodes",
            positions.len(),
            n
        )));
    }
    let mut seen = vec![false; n];
    for &p in positions {
        if p >= n || seen[p] {
            return Err(Error::invalid("labels are not a permutation of 0..n"));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Fills `r1`/`r2` (length `n-1`) from the graph edges and a node -> time
/// position relabeling. `hist` is scratch of length `n`. O(|G| + n).
pub(crate) fn count_curves_into(
    edges: &[(u32, u32)],
    positions: &[usize],
    hist: &mut [u32],
    r1: &mut [u32],
    r2: &mut [u32],
) {
    let n = positions.len();
    debug_assert_eq!(hist.len(), n);
    debug_assert_eq!(r1.len(), n - 1);
    debug_assert_eq!(r2.len(), n - 1);

    // r1(t) counts edges whose later endpoint sits at position <= t-1
    hist.fill(0);
    for &(a, b) in edges {
        let hi = positions[a as usize].max(positions[b as usize]);
        hist[hi] += 1;
    }
    let mut acc = 0u32;
    for t in 1..n {
        acc += hist[t - 1];
        r1[t - 1] = acc;
    }

    // r2(t) counts edges whose earlier endpoint sits at position >= t
    hist.fill(0);
    for &(a, b) in edges {
        let lo = positions[a as usize].min(positions[b as usize]);
        hist[lo] += 1;
    }
    let mut acc = 0u32;
    for t in (1..n).rev() {
        acc += hist[t];
        r2[t - 1] = acc;
    }
}

/// Within-sample edge counts for a relabeled sequence.
///
/// `positions[node]` is the (0-based) time slot the node is relabeled to;
/// pass the identity for the observed ordering.
pub fn edge_counts(graph: &SimilarityGraph, positions: &[usize]) -> Result<EdgeCountCurves> {
    let n = graph.n();
    if n < 2 {
        return Err(Error::invalid("need n >= 2"));
    }
    check_positions(positions, n)?;
    let mut hist = vec![0u32; n];
    let mut r1 = vec![0u32; n - 1];
    let mut r2 = vec![0u32; n - 1];
    count_curves_into(graph.edges(), positions, &mut hist, &mut r1, &mut r2);
    Ok(EdgeCountCurves {
        n,
        num_edges: graph.num_edges(),
        shared_pairs: graph.shared_pairs(),
        r1,
        r2,
    })
}

/// The identity relabeling for the observed sequence.
pub fn identity_positions(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Mixing weight `p(t)` of the weighted within-sample count
/// `r_w(t) = q(t) r1(t) + p(t) r2(t)`; kept in one place because only this
/// printed form defines it.
#[inline]
pub(crate) fn weight_p(t: usize, n: usize) -> f64 {
    (t as f64 - 1.0) / (n as f64 - 2.0)
}

/// Permutation-null moments of the edge-count statistics at one split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NullMoments {
    pub e_r1: f64,
    pub e_r2: f64,
    pub var_r1: f64,
    pub var_r2: f64,
    pub cov_r1_r2: f64,
    pub e_rw: f64,
    pub var_rw: f64,
    pub e_rdiff: f64,
    pub var_rdiff: f64,
}

/// Closed-form permutation-null moments at split `t`.
///
/// Functions of `n`, `t`, `|G|` and the shared-pair count only. Needs
/// `n >= 4` (the four-node falling factorial appears in every variance).
pub fn null_moments(graph: &SimilarityGraph, t: usize) -> Result<NullMoments> {
    let n = graph.n();
    if n < 4 {
        return Err(Error::invalid(format!(
            "null variances need n >= 4, got n = {n}"
        )));
    }
    if t < 1 || t > n - 1 {
        return Err(Error::invalid(format!(
            "split t = {t} out of range 1..={}",
            n - 1
        )));
    }
    Ok(null_moments_unchecked(
        n,
        graph.num_edges() as f64,
        graph.shared_pairs() as f64,
        t,
    ))
}

fn falling3(x: f64) -> (f64, f64, f64, f64) {
    (x, x * (x - 1.0), x * (x - 1.0) * (x - 2.0), x * (x - 1.0) * (x - 2.0) * (x - 3.0))
}

pub(crate) fn null_moments_unchecked(n: usize, m: f64, c1: f64, t: usize) -> NullMoments {
    let nf = n as f64;
    let (_, n2, n3, n4) = falling3(nf);
    let (_, t2, t3, t4) = falling3(t as f64);
    let (_, u2, u3, u4) = falling3(nf - t as f64);

    // ordered pairs of distinct edges sharing a node / fully disjoint
    let shared_x2 = 2.0 * c1;
    let disjoint_x2 = m * (m - 1.0) - shared_x2;

    let e_r1 = m * t2 / n2;
    let e_r2 = m * u2 / n2;
    let e_r1_sq = m * t2 / n2 + shared_x2 * t3 / n3 + disjoint_x2 * t4 / n4;
    let e_r2_sq = m * u2 / n2 + shared_x2 * u3 / n3 + disjoint_x2 * u4 / n4;
    let var_r1 = e_r1_sq - e_r1 * e_r1;
    let var_r2 = e_r2_sq - e_r2 * e_r2;
    // only fully disjoint pairs can land on opposite sides of the split
    let e_r1_r2 = disjoint_x2 * t2 * u2 / n4;
    let cov_r1_r2 = e_r1_r2 - e_r1 * e_r2;

    let p = weight_p(t, n);
    let q = 1.0 - p;
    let e_rw = q * e_r1 + p * e_r2;
    let var_rw = q * q * var_r1 + p * p * var_r2 + 2.0 * p * q * cov_r1_r2;
    let e_rdiff = e_r1 - e_r2;
    let var_rdiff = var_r1 + var_r2 - 2.0 * cov_r1_r2;

    NullMoments {
        e_r1,
        e_r2,
        var_r1,
        var_r2,
        cov_r1_r2,
        e_rw,
        var_rw,
        e_rdiff,
        var_rdiff,
    }
}

/// Standardized scan curves over a window.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanCurves {
    pub window: Window,
    pub z_w: Vec<f64>,
    pub z_diff: Vec<f64>,
    /// `m[i] = max(z_w[i], |z_diff[i]|)`.
    pub m: Vec<f64>,
}

impl ScanCurves {
    pub fn max_m(&self) -> f64 {
        self.m.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Smallest split attaining the maximum of `m`.
    pub fn argmax_t(&self) -> usize {
        let mut best = f64::NEG_INFINITY;
        let mut best_t = self.window.lo;
        for (i, &v) in self.m.iter().enumerate() {
            if v > best {
                best = v;
                best_t = self.window.lo + i;
            }
        }
        best_t
    }
}

/// Precomputed standardization table for one graph over a window: the hot
/// permutation-replay path turns `(r1, r2)` into `M(t)` with six flops.
#[derive(Clone, Debug)]
pub(crate) struct MomentTable {
    /// Per split in window order: `(p, q, e_rw, inv_sd_w, e_rdiff, inv_sd_diff)`.
    pub rows: Vec<(f64, f64, f64, f64, f64, f64)>,
}

/// Numerical floor below which a closed-form variance is treated as the
/// exact zero of a degenerate graph.
fn variance_floor(m: f64) -> f64 {
    1e-12 * (m * m + 1.0)
}

pub(crate) fn moment_table(
    n: usize,
    num_edges: usize,
    shared_pairs: u64,
    window: Window,
) -> Result<MomentTable> {
    if n < 4 {
        return Err(Error::invalid(format!(
            "null variances need n >= 4, got n = {n}"
        )));
    }
    let m = num_edges as f64;
    let c1 = shared_pairs as f64;
    let floor = variance_floor(m);
    let mut rows = Vec::with_capacity(window.len());
    for t in window.iter() {
        let mom = null_moments_unchecked(n, m, c1, t);
        if mom.var_rw <= floor || mom.var_rdiff <= floor {
            return Err(Error::DegenerateVariance {
                t,
                detail: format!(
                    " (var_rw = {:.3e}, var_rdiff = {:.3e}; |G| = {num_edges})",
                    mom.var_rw, mom.var_rdiff
                ),
            });
        }
        let p = weight_p(t, n);
        rows.push((
            p,
            1.0 - p,
            mom.e_rw,
            1.0 / mom.var_rw.sqrt(),
            mom.e_rdiff,
            1.0 / mom.var_rdiff.sqrt(),
        ));
    }
    Ok(MomentTable { rows })
}

/// `M(t)` at table row `i` given raw counts; the single definition shared by
/// the public scan and the permutation replay.
#[inline]
pub(crate) fn m_statistic(row: (f64, f64, f64, f64, f64, f64), r1: f64, r2: f64) -> f64 {
    let (p, q, e_rw, inv_sd_w, e_rdiff, inv_sd_diff) = row;
    let z_w = (q * r1 + p * r2 - e_rw) * inv_sd_w;
    let z_diff = (r1 - r2 - e_rdiff) * inv_sd_diff;
    z_w.max(z_diff.abs())
}

/// Standardized curves `z_w`, `z_diff` and their pointwise max over the
/// window, for the sequence relabeled by `positions`.
pub fn scan_curves(
    graph: &SimilarityGraph,
    positions: &[usize],
    window: Window,
) -> Result<ScanCurves> {
    let n = graph.n();
    if window.hi > n - 1 {
        return Err(Error::invalid(format!(
            "window [{}, {}] exceeds n-1 = {}",
            window.lo,
            window.hi,
            n - 1
        )));
    }
    let counts = edge_counts(graph, positions)?;
    let table = moment_table(n, counts.num_edges, counts.shared_pairs, window)?;
    let mut z_w = Vec::with_capacity(window.len());
    let mut z_diff = Vec::with_capacity(window.len());
    let mut m = Vec::with_capacity(window.len());
    for (i, t) in window.iter().enumerate() {
        let (p, q, e_rw, inv_sd_w, e_rdiff, inv_sd_diff) = table.rows[i];
        let r1 = counts.r1[t - 1] as f64;
        let r2 = counts.r2[t - 1] as f64;
        let zw = (q * r1 + p * r2 - e_rw) * inv_sd_w;
        let zd = (r1 - r2 - e_rdiff) * inv_sd_diff;
        z_w.push(zw);
        z_diff.push(zd);
        m.push(zw.max(zd.abs()));
    }
    Ok(ScanCurves {
        window,
        z_w,
        z_diff,
        m,
    })
}
