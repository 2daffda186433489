//! Multiple change-point detection: seeded binary segmentation with greedy
//! selection, wrapping the single-change-point test.
//!
//! A deterministic multiscale collection of sub-intervals is tested
//! independently (each with its own permutation stream, permuting only that
//! interval's rows); the greedy pass then repeatedly takes the most
//! evidential significant interval, records its estimate and discards every
//! interval containing it.

use serde::{Deserialize, Serialize};

use crate::blocking::BlockingPlan;
use crate::detect::{abcd_detect, BestBlock, BlockRetention, DetectConfig, GraphConfig};
use crate::edgecount::DEFAULT_BOUNDARY_FRAC;
use crate::error::{Error, Result};
use crate::exec;
use crate::rng::{derive_seed, domain};
use crate::series::SeriesTensor;

/// One candidate sub-interval, 1-based inclusive row bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeededInterval {
    pub l: usize,
    pub r: usize,
    pub layer: usize,
}

impl SeededInterval {
    pub fn len(&self) -> usize {
        self.r - self.l + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Containment rule used by the greedy pass: `l <= tau < r`, so an
    /// interval merely touching `tau` at its right end survives.
    pub fn contains_tau(&self, tau: usize) -> bool {
        self.l <= tau && tau < self.r
    }
}

/// Default decay between layers.
pub const DEFAULT_DECAY: f64 = std::f64::consts::FRAC_1_SQRT_2;
/// Default minimum interval length.
pub const DEFAULT_MIN_LEN: usize = 30;

/// Deterministic layered intervals: layer `k` holds intervals of length
/// `ceil(n * a^(k-1))`, evenly shifted with roughly 50% overlap, down to
/// `min_len`. Duplicates are removed; the result is sorted by
/// `(length desc, l asc)`.
pub fn seeded_intervals(n: usize, decay: f64, min_len: usize) -> Result<Vec<SeededInterval>> {
    if min_len < 4 || n < min_len {
        return Err(Error::invalid(format!(
            "need n >= min_len >= 4, got n = {n}, min_len = {min_len}"
        )));
    }
    if !(0.5..1.0).contains(&decay) {
        return Err(Error::invalid(format!(
            "decay must lie in [0.5, 1), got {decay}"
        )));
    }
    let mut intervals = Vec::new();
    let mut layer = 1usize;
    loop {
        // relative tolerance keeps mathematically integer lengths (e.g.
        // n * (1/sqrt(2))^2) from being inflated by float rounding
        let raw = n as f64 * decay.powi(layer as i32 - 1);
        let len = (raw * (1.0 - 1e-12)).ceil() as usize;
        if len < min_len {
            break;
        }
        if len >= n {
            intervals.push(SeededInterval { l: 1, r: n, layer });
        } else {
            let count = 2 * n.div_ceil(len) - 1;
            let shift = (n - len) as f64 / (count - 1) as f64;
            for i in 0..count {
                let l = (i as f64 * shift + 1e-9).floor() as usize + 1;
                intervals.push(SeededInterval {
                    l,
                    r: l + len - 1,
                    layer,
                });
            }
        }
        layer += 1;
    }
    intervals.sort_by(|a, b| {
        b.len()
            .cmp(&a.len())
            .then(a.l.cmp(&b.l))
            .then(a.r.cmp(&b.r))
    });
    intervals.dedup_by(|a, b| a.l == b.l && a.r == b.r);
    Ok(intervals)
}

/// How each interval's spanning-tree count is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum KRule {
    /// `k = max(1, floor(frac * n_s))`.
    Fraction { frac: f64 },
    Fixed { k: usize },
}

impl KRule {
    pub fn k_for(&self, n_s: usize) -> usize {
        match *self {
            KRule::Fraction { frac } => ((frac * n_s as f64).floor() as usize).max(1),
            KRule::Fixed { k } => k,
        }
    }
}

/// Default per-interval spanning-tree rule.
pub const DEFAULT_K_FRAC: f64 = 0.2;

#[derive(Clone, Debug)]
pub struct SegmentConfig {
    pub plan: BlockingPlan,
    pub metric: crate::simgraph::Metric,
    pub k_rule: KRule,
    pub alpha: f64,
    pub permutations: usize,
    pub min_len: usize,
    pub decay: f64,
    pub boundary_frac: f64,
    pub seed: u64,
    pub parallel: bool,
}

impl SegmentConfig {
    pub fn new(plan: BlockingPlan) -> Self {
        SegmentConfig {
            plan,
            metric: crate::simgraph::Metric::L2,
            k_rule: KRule::Fraction {
                frac: DEFAULT_K_FRAC,
            },
            alpha: 0.01,
            permutations: 1000,
            min_len: DEFAULT_MIN_LEN,
            decay: DEFAULT_DECAY,
            boundary_frac: DEFAULT_BOUNDARY_FRAC,
            seed: 0,
            parallel: cfg!(feature = "parallel"),
        }
    }
}

/// Outcome of testing one seeded interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalTest {
    pub interval: SeededInterval,
    pub n_s: usize,
    pub k: usize,
    /// Change-point estimate in global coordinates.
    pub tau_hat: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub best_block: BestBlock,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One accepted change-point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub tau_hat: usize,
    pub interval: SeededInterval,
    pub statistic: f64,
    pub p_value: f64,
    pub best_block: BestBlock,
    /// 1-based order in which the greedy pass accepted this detection.
    pub selection_order: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentEcho {
    pub alpha: f64,
    pub permutations: usize,
    pub min_len: usize,
    pub decay: f64,
    pub k_rule: KRule,
    pub blocks: Vec<String>,
    pub seed: u64,
    /// Permutation replicates shuffle only the tested interval's rows.
    pub permutation_scope: String,
    /// Boundary trimming is applied per tested sub-interval.
    pub window_scope: String,
}

/// Ordered detections plus the full per-interval test log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationReport {
    pub schema_version: u32,
    pub config: SegmentEcho,
    /// Accepted change-points sorted by `tau_hat` (strictly increasing).
    pub detected: Vec<Detection>,
    pub interval_log: Vec<IntervalTest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run_config: Option<serde_json::Value>,
}

impl SegmentationReport {
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization");
        s.push('\n');
        s
    }
}

enum IntervalOutcome {
    Tested(IntervalTest),
    Failed(SeededInterval, usize, usize, String),
}

/// Greedy selection over cached interval results: repeatedly accept the
/// significant interval with the largest statistic (ties to the earlier
/// start), then drop every interval containing the accepted estimate.
fn greedy_select(tests: &[IntervalTest], alpha: f64) -> Vec<Detection> {
    let mut alive: Vec<&IntervalTest> = tests
        .iter()
        .filter(|t| t.error.is_none() && t.p_value <= alpha)
        .collect();
    let mut detections = Vec::new();
    while !alive.is_empty() {
        let winner = *alive
            .iter()
            .min_by(|a, b| {
                b.statistic
                    .total_cmp(&a.statistic)
                    .then(a.interval.l.cmp(&b.interval.l))
                    .then(a.interval.r.cmp(&b.interval.r))
            })
            .unwrap();
        detections.push(Detection {
            tau_hat: winner.tau_hat,
            interval: winner.interval,
            statistic: winner.statistic,
            p_value: winner.p_value,
            best_block: winner.best_block.clone(),
            selection_order: detections.len() + 1,
        });
        let tau = winner.tau_hat;
        alive.retain(|t| !t.interval.contains_tau(tau));
    }
    detections.sort_by_key(|d| d.tau_hat);
    detections
}

/// Runs the single-change-point test on every seeded interval and applies
/// greedy selection. Interval failures are logged and skipped, not fatal.
pub fn segment(series: &SeriesTensor, cfg: &SegmentConfig) -> Result<SegmentationReport> {
    let n = series.n();
    let intervals = seeded_intervals(n, cfg.decay, cfg.min_len)?;

    let outcomes = exec::map_indexed(intervals.len(), cfg.parallel, |idx| {
        let iv = intervals[idx];
        let n_s = iv.len();
        let k = cfg.k_rule.k_for(n_s);
        let run = || -> Result<IntervalTest> {
            let sub = series.slice_rows(iv.l - 1, iv.r - 1)?;
            let mut dcfg = DetectConfig::new(cfg.plan.clone());
            dcfg.graph = GraphConfig {
                metric: cfg.metric,
                k,
            };
            dcfg.boundary_frac = cfg.boundary_frac;
            dcfg.permutations = cfg.permutations;
            dcfg.seed = derive_seed(cfg.seed, domain::INTERVAL, idx as u64);
            dcfg.retention = BlockRetention::None;
            // the outer loop already spreads intervals across workers
            dcfg.parallel = false;
            let result = abcd_detect(&sub, &dcfg)?;
            Ok(IntervalTest {
                interval: iv,
                n_s,
                k,
                tau_hat: iv.l - 1 + result.tau_hat,
                statistic: result.statistic,
                p_value: result.p_value.expect("permutations > 0"),
                best_block: result.best_block,
                error: None,
            })
        };
        match run() {
            Ok(test) => IntervalOutcome::Tested(test),
            Err(e) => IntervalOutcome::Failed(iv, n_s, k, e.to_string()),
        }
    });

    let mut interval_log = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        match outcome {
            IntervalOutcome::Tested(t) => interval_log.push(t),
            IntervalOutcome::Failed(iv, n_s, k, message) => {
                log::warn!("interval [{}, {}] skipped: {message}", iv.l, iv.r);
                interval_log.push(IntervalTest {
                    interval: iv,
                    n_s,
                    k,
                    tau_hat: 0,
                    statistic: f64::NAN,
                    p_value: 1.0,
                    best_block: BestBlock {
                        structure_id: 0,
                        block_id: 0,
                        region: crate::detect::RegionOut::Range { start: 1, end: 1 },
                        m_at_tau: f64::NAN,
                    },
                    error: Some(message),
                });
            }
        }
    }

    let detected = greedy_select(&interval_log, cfg.alpha);
    // NaN statistics would poison the JSON; failed intervals keep a marker instead
    for t in interval_log.iter_mut() {
        if t.error.is_some() {
            t.statistic = 0.0;
            t.best_block.m_at_tau = 0.0;
        }
    }

    Ok(SegmentationReport {
        schema_version: crate::detect::SCHEMA_VERSION,
        config: SegmentEcho {
            alpha: cfg.alpha,
            permutations: cfg.permutations,
            min_len: cfg.min_len,
            decay: cfg.decay,
            k_rule: cfg.k_rule,
            blocks: cfg.plan.spec_strings(),
            seed: cfg.seed,
            permutation_scope: "within_interval".to_string(),
            window_scope: "per_interval".to_string(),
        },
        detected,
        interval_log,
        run_config: None,
    })
}
