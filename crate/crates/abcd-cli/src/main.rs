//! `abcd` — change-point detection for high-dimensional and image series.
//!
//! Subcommands: `detect` (single change-point test), `segment` (multiple
//! change-points via seeded binary segmentation), `simulate`/`power`
//! (design-file power studies), `preprocess` (robust standardization),
//! `fuse` (per-pixel logistic fusion), `heatmap` (localization evidence).
//!
//! Exit codes: 0 success, 1 error, 2 "no significant change at alpha",
//! 64 usage error. Every output embeds the resolved configuration and seed;
//! identical invocations produce byte-identical artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use abcd_core::blocking::{default_plan, BlockingPlan};
use abcd_core::detect::{abcd_detect, BlockRetention, DetectConfig, GraphConfig, ScanResult};
use abcd_core::edgecount::Window;
use abcd_core::pipeline::{
    fit_pixel_logistic, load_band_stack, load_labels, log_heatmap, mean_band_image,
    robust_standardize, save_band_stack, write_heatmaps, GridRect, DEFAULT_RIDGE,
};
use abcd_core::segment::{
    segment, KRule, SegmentConfig, DEFAULT_DECAY, DEFAULT_K_FRAC, DEFAULT_MIN_LEN,
};
use abcd_core::series::{
    load_series, load_series_auto, save_series_binary, Dtype, SeriesFormat, SeriesTensor,
};
use abcd_core::simgraph::Metric;
use abcd_core::simlab::{power_study, PowerDesign};

#[derive(Parser)]
#[command(name = "abcd", version, about = "Adaptive block-based change-point detection")]
struct Cli {
    /// Worker threads for data-parallel stages (default: all available)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Force single-threaded execution regardless of --threads
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test a series for a single change-point
    Detect(DetectArgs),
    /// Detect multiple change-points via seeded binary segmentation
    Segment(SegmentArgs),
    /// Run a power study from a design file
    #[command(visible_alias = "power")]
    Simulate(SimulateArgs),
    /// Robust-standardize a band stack and emit the mean-band series
    Preprocess(PreprocessArgs),
    /// Fit per-pixel logistic models and emit the fused probability series
    Fuse(FuseArgs),
    /// Render before/after log heatmaps for a detected change-point
    Heatmap(HeatmapArgs),
}

#[derive(Args)]
struct DetectArgs {
    /// Input series: CSV (t,c1,...,cd) or binary manifest JSON
    #[arg(long)]
    input: PathBuf,
    /// Force the input format: csv | binary (default: by extension)
    #[arg(long)]
    format: Option<String>,
    /// Blocking plan, e.g. "1,4,10,20" or "1x1,4x6,8x12" (default: multiscale ladder)
    #[arg(long)]
    blocks: Option<String>,
    /// Spanning trees per block graph
    #[arg(long, default_value_t = 40)]
    k: usize,
    /// Distance metric: l2 | l1
    #[arg(long, default_value = "l2")]
    metric: String,
    /// Fraction of observations excluded at each boundary
    #[arg(long, default_value_t = 0.05)]
    boundary_frac: f64,
    /// Explicit scan window "LO:HI" (overrides --boundary-frac)
    #[arg(long)]
    window: Option<String>,
    /// Permutation replicates for the p-value (0 skips the test)
    #[arg(long, default_value_t = 1000)]
    permutations: usize,
    /// Significance level deciding the exit code
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Result path (default: result.json next to the input)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Retain full per-block scan curves in the result
    #[arg(long)]
    block_curves: bool,
    /// Drop per-block statistics entirely
    #[arg(long)]
    no_block_stats: bool,
    /// Dump each block's similarity graph as an edge list under DIR
    #[arg(long)]
    dump_graphs: Option<PathBuf>,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    blocks: Option<String>,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long, default_value_t = 1000)]
    permutations: usize,
    /// Shortest tested sub-interval
    #[arg(long, default_value_t = DEFAULT_MIN_LEN)]
    min_len: usize,
    /// Layer decay of the seeded intervals
    #[arg(long, default_value_t = DEFAULT_DECAY)]
    decay: f64,
    /// Per-interval spanning trees: k = max(1, floor(k_frac * n_s))
    #[arg(long, default_value_t = DEFAULT_K_FRAC)]
    k_frac: f64,
    /// Fixed spanning-tree count overriding --k-frac
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value = "l2")]
    metric: String,
    #[arg(long, default_value_t = 0.05)]
    boundary_frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML design file describing the experiment grid
    #[arg(long)]
    design: PathBuf,
    /// Override the design's trial count
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Band stack manifest JSON
    #[arg(long)]
    stack: PathBuf,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct FuseArgs {
    /// Standardized band stack manifest JSON
    #[arg(long)]
    stack: PathBuf,
    /// Label array manifest JSON
    #[arg(long)]
    labels: PathBuf,
    /// Ridge penalty on non-intercept coefficients
    #[arg(long, default_value_t = DEFAULT_RIDGE)]
    ridge: f64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct HeatmapArgs {
    /// Detection result JSON (from `detect` on image-shaped data)
    #[arg(long)]
    result: PathBuf,
    /// Mean-band series manifest (from `preprocess`)
    #[arg(long)]
    wtilde: PathBuf,
    /// Images averaged on each side of the change-point
    #[arg(long, default_value_t = 10)]
    window: usize,
    /// Positive floor applied before the log transform
    #[arg(long, default_value_t = 1e-3)]
    floor: f64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Filename prefix of the emitted images
    #[arg(long, default_value = "heatmap")]
    prefix: String,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 64,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: could not size the thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let parallel = !cli.sequential;
    let outcome = match cli.command {
        Command::Detect(args) => cmd_detect(args, parallel),
        Command::Segment(args) => cmd_segment(args, parallel),
        Command::Simulate(args) => cmd_simulate(args, parallel),
        Command::Preprocess(args) => cmd_preprocess(args),
        Command::Fuse(args) => cmd_fuse(args),
        Command::Heatmap(args) => cmd_heatmap(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn read_series(path: &Path, format: &Option<String>) -> Result<SeriesTensor> {
    let series = match format.as_deref() {
        Some("csv") => load_series(path, SeriesFormat::Csv)?,
        Some("binary") => load_series(path, SeriesFormat::Binary)?,
        Some(other) => bail!("unknown format {other:?} (expected csv or binary)"),
        None => load_series_auto(path)?,
    };
    Ok(series)
}

fn parse_metric(name: &str) -> Result<Metric> {
    match name {
        "l2" => Ok(Metric::L2),
        "l1" => Ok(Metric::L1),
        other => bail!("unknown metric {other:?} (expected l2 or l1)"),
    }
}

fn parse_window(text: &str, n: usize) -> Result<Window> {
    let (lo, hi) = text
        .split_once(':')
        .context("window must look like LO:HI")?;
    let lo: usize = lo.trim().parse().context("bad window lower bound")?;
    let hi: usize = hi.trim().parse().context("bad window upper bound")?;
    Ok(Window::new(lo, hi, n)?)
}

fn resolve_plan(blocks: &Option<String>, series: &SeriesTensor) -> Result<BlockingPlan> {
    Ok(match blocks {
        Some(spec) => BlockingPlan::parse(spec, series.shape())?,
        None => default_plan(series.shape()),
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Manifest of produced files, written by every artifact-emitting command.
fn write_manifest(
    out_dir: &Path,
    command: &str,
    config: serde_json::Value,
    files: &[PathBuf],
) -> Result<PathBuf> {
    let manifest = serde_json::json!({
        "command": command,
        "config": config,
        "files": files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    });
    let path = out_dir.join("manifest.json");
    write_text(&path, &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    Ok(path)
}

fn cmd_detect(args: DetectArgs, parallel: bool) -> Result<u8> {
    let series = read_series(&args.input, &args.format)?;
    let plan = resolve_plan(&args.blocks, &series)?;
    let mut cfg = DetectConfig::new(plan);
    cfg.graph = GraphConfig {
        metric: parse_metric(&args.metric)?,
        k: args.k,
    };
    cfg.boundary_frac = args.boundary_frac;
    cfg.window = args
        .window
        .as_deref()
        .map(|w| parse_window(w, series.n()))
        .transpose()?;
    cfg.permutations = args.permutations;
    cfg.seed = args.seed;
    cfg.retention = if args.no_block_stats {
        BlockRetention::None
    } else if args.block_curves {
        BlockRetention::Curves
    } else {
        BlockRetention::Stats
    };
    cfg.parallel = parallel;

    if let Some(dir) = &args.dump_graphs {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (sid, bid, graph) in
            abcd_core::detect::block_graphs(&series, &cfg.plan, cfg.graph)?
        {
            let name = dir.join(format!("s{sid}_b{bid}.edges"));
            let body = match graph {
                Some(g) => g.to_edge_list_text(),
                None => String::new(),
            };
            write_text(&name, &body)?;
        }
    }

    let mut result = abcd_detect(&series, &cfg)?;
    result.run_config = Some(serde_json::json!({
        "command": "detect",
        "input": args.input.display().to_string(),
        "alpha": args.alpha,
        "boundary_frac": args.boundary_frac,
        "threads_independent": true,
    }));
    let out = args
        .out
        .unwrap_or_else(|| args.input.with_file_name("result.json"));
    write_text(&out, &result.to_json_string())?;
    println!(
        "T = {:.6}, tau_hat = {}, p = {}",
        result.statistic,
        result.tau_hat,
        result
            .p_value
            .map_or("n/a (no permutations)".to_string(), |p| format!("{p:.6}")),
    );
    println!("result written to {}", out.display());
    match result.p_value {
        Some(p) if p > args.alpha => Ok(2),
        _ => Ok(0),
    }
}

fn cmd_segment(args: SegmentArgs, parallel: bool) -> Result<u8> {
    let series = read_series(&args.input, &args.format)?;
    let plan = resolve_plan(&args.blocks, &series)?;
    let mut cfg = SegmentConfig::new(plan);
    cfg.metric = parse_metric(&args.metric)?;
    cfg.k_rule = match args.k {
        Some(k) => KRule::Fixed { k },
        None => KRule::Fraction { frac: args.k_frac },
    };
    cfg.alpha = args.alpha;
    cfg.permutations = args.permutations;
    cfg.min_len = args.min_len;
    cfg.decay = args.decay;
    cfg.boundary_frac = args.boundary_frac;
    cfg.seed = args.seed;
    cfg.parallel = parallel;

    let mut report = segment(&series, &cfg)?;
    report.run_config = Some(serde_json::json!({
        "command": "segment",
        "input": args.input.display().to_string(),
    }));
    let out = args
        .out
        .unwrap_or_else(|| args.input.with_file_name("segmentation.json"));
    write_text(&out, &report.to_json_string())?;
    println!(
        "{} change-point(s) over {} tested intervals; report written to {}",
        report.detected.len(),
        report.interval_log.len(),
        out.display()
    );
    for det in &report.detected {
        println!(
            "  tau = {} (interval [{}, {}], T = {:.4}, p = {:.6})",
            det.tau_hat, det.interval.l, det.interval.r, det.statistic, det.p_value
        );
    }
    Ok(if report.detected.is_empty() { 2 } else { 0 })
}

fn cmd_simulate(args: SimulateArgs, parallel: bool) -> Result<u8> {
    let text = fs::read_to_string(&args.design)
        .with_context(|| format!("reading {}", args.design.display()))?;
    let mut design: PowerDesign = toml::from_str(&text)
        .with_context(|| format!("parsing design {}", args.design.display()))?;
    if let Some(trials) = args.trials {
        design.trials = trials;
    }
    let table = power_study(&design, args.seed, parallel)?;
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let csv_path = args.out_dir.join("power.csv");
    let json_path = args.out_dir.join("power.json");
    write_text(&csv_path, &table.to_csv_string())?;
    write_text(&json_path, &table.to_json_string())?;
    let manifest = write_manifest(
        &args.out_dir,
        "simulate",
        serde_json::json!({
            "design": args.design.display().to_string(),
            "trials": design.trials,
            "seed": args.seed,
        }),
        &[csv_path.clone(), json_path],
    )?;
    println!(
        "{} cells over {} trials; power table written to {} (manifest {})",
        table.cells.len(),
        design.trials,
        csv_path.display(),
        manifest.display()
    );
    Ok(0)
}

fn cmd_preprocess(args: PreprocessArgs) -> Result<u8> {
    let stack = load_band_stack(&args.stack)?;
    let standardized = robust_standardize(&stack);
    let wtilde = mean_band_image(&standardized);
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let std_path = args.out_dir.join("std_stack.json");
    save_band_stack(&standardized, &std_path)?;
    let wtilde_path = args.out_dir.join("wtilde.json");
    save_series_binary(&wtilde, &wtilde_path, Dtype::F64)?;
    let manifest = write_manifest(
        &args.out_dir,
        "preprocess",
        serde_json::json!({ "stack": args.stack.display().to_string() }),
        &[std_path.clone(), wtilde_path.clone()],
    )?;
    println!(
        "standardized stack -> {}, mean-band series -> {} (manifest {})",
        std_path.display(),
        wtilde_path.display(),
        manifest.display()
    );
    Ok(0)
}

fn cmd_fuse(args: FuseArgs) -> Result<u8> {
    let stack = load_band_stack(&args.stack)?;
    let labels = load_labels(&args.labels)?;
    let fused = fit_pixel_logistic(&stack, &labels, args.ridge)?;
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let series_path = args.out_dir.join("fused.json");
    save_series_binary(&fused.probabilities, &series_path, Dtype::F64)?;
    let details_path = args.out_dir.join("fuse_details.json");
    let details = serde_json::json!({
        "ridge": args.ridge,
        "coefficients": fused.coefficients,
        "flags": fused.flags,
    });
    write_text(&details_path, &(serde_json::to_string_pretty(&details)? + "\n"))?;
    let manifest = write_manifest(
        &args.out_dir,
        "fuse",
        serde_json::json!({
            "stack": args.stack.display().to_string(),
            "labels": args.labels.display().to_string(),
            "ridge": args.ridge,
        }),
        &[series_path.clone(), details_path],
    )?;
    println!(
        "fused probability series -> {} (manifest {})",
        series_path.display(),
        manifest.display()
    );
    Ok(0)
}

fn cmd_heatmap(args: HeatmapArgs) -> Result<u8> {
    let text = fs::read_to_string(&args.result)
        .with_context(|| format!("reading {}", args.result.display()))?;
    let result = ScanResult::from_json_str(&text)?;
    let wtilde = load_series(&args.wtilde, SeriesFormat::Binary)?;
    let n = wtilde.n();
    let tau = result.tau_hat;
    if tau < 1 || tau >= n {
        bail!("tau_hat = {tau} incompatible with a series of length {n}");
    }
    if args.window < 1 {
        bail!("--window must be at least 1");
    }
    let before = (tau.saturating_sub(args.window - 1).max(1), tau);
    let after = (tau + 1, (tau + args.window).min(n));
    let rect = GridRect::from_region_out(&result.best_block.region)?;
    let pair = log_heatmap(&wtilde, rect, before, after, args.floor)?;
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let files = write_heatmaps(&pair, &args.out_dir, &args.prefix)?;
    let manifest = write_manifest(
        &args.out_dir,
        "heatmap",
        serde_json::json!({
            "result": args.result.display().to_string(),
            "wtilde": args.wtilde.display().to_string(),
            "window": args.window,
            "floor": args.floor,
            "tau_hat": tau,
        }),
        &files,
    )?;
    println!(
        "heatmaps for tau = {tau} (block {:?}) -> {} (manifest {})",
        (result.best_block.structure_id, result.best_block.block_id),
        args.out_dir.display(),
        manifest.display()
    );
    Ok(0)
}
