use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use eqseg_core::diagnostics::{ks_standard_normal, Histogram};
use eqseg_core::io::{self, DcesFile};
use eqseg_core::synth::{self, ChessboardConfig, Phantom11Config};
use eqseg_core::{
    auto_delta, eval, min_margin, normalized_residuals, remove_baseline, segment, segment_stabilized, stabilize,
    wrong_binding_bound, Connectivity, DeltaSelection, Error, Grid, LabelMap, RawSequence, Result, SegmentParams,
    Segmentation, StabilizedSequence,
};

const THREADS_ENV: &str = "EQSEG_THREADS";

#[derive(Parser)]
#[command(name = "eqseg", version, about = "Segment dynamic image sequences by multi-scale equivalence clustering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sequence with its ground truth.
    Synth(SynthArgs),
    /// Segment a DCES sequence.
    Segment(SegmentArgs),
    /// Compare a segmentation with a reference partition.
    Eval(EvalArgs),
    /// Histogram and normality test of normalized residuals.
    Residuals(ResidualArgs),
    /// Margin and wrong-binding guidance for a design.
    Margin(MarginArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Chessboard,
    Phantom11,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Chessboard => "chessboard",
            Kind::Phantom11 => "phantom11",
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Multiplier applied to every true curve.
    #[arg(long, default_value_t = 1.0)]
    snr: f64,
    /// Number of images; defaults to 100 (chessboard) or 120 (phantom11).
    #[arg(long)]
    n: Option<usize>,
    /// Chessboard side length in voxels (default 55).
    #[arg(long)]
    side: Option<usize>,
    /// Write raw intensities under the power-law noise model with this
    /// exponent instead of unit-noise data.
    #[arg(long)]
    raw_exponent: Option<f64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// File name stem; defaults to the phantom kind.
    #[arg(long)]
    prefix: Option<String>,
}

#[derive(Args)]
struct ModelArgs {
    /// Input is already on the unit-noise scale (skip the power transform).
    #[arg(long)]
    stabilized: bool,
    /// Exponent of the variance-stabilizing power transform.
    #[arg(long, default_value_t = 0.45)]
    exponent: f64,
    /// Number of leading baseline images to remove.
    #[arg(long, default_value_t = 0)]
    baseline: usize,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value = "segmentation")]
    prefix: String,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0.001)]
    alpha: f64,
    /// Equivalence tolerance; required unless --auto-delta is given.
    #[arg(long, required_unless_present = "auto_delta", conflicts_with = "auto_delta")]
    delta: Option<f64>,
    /// Select δ by the slope rule over --delta-grid.
    #[arg(long)]
    auto_delta: bool,
    /// `start:stop:step` or a comma-separated list.
    #[arg(long, default_value = "0.2:4:0.2")]
    delta_grid: String,
    #[arg(long, default_value_t = 0.1)]
    slope_threshold: f64,
    /// 4 or 8 in 2D, 6 or 26 in 3D.
    #[arg(long)]
    connectivity: Option<u32>,
    /// Stop after the local phase.
    #[arg(long)]
    no_global: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Reference partition (PGM or 3D text label map).
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    segmentation: PathBuf,
    /// Write the error map as PGM.
    #[arg(long)]
    error_map: Option<PathBuf>,
}

#[derive(Args)]
struct ResidualArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// Histogram CSV output.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MarginArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 11.0)]
    kappa: f64,
    /// Voxel count for the wrong-binding bound.
    #[arg(long)]
    grid_size: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let parts: Vec<&str> =
                msg.lines().map(str::trim).take_while(|l| !l.starts_with("Usage:")).filter(|l| !l.is_empty()).collect();
            eprintln!("E_USAGE: {}", parts.join(" ").trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    if let Err(e) = configure_threads().and_then(|()| run(cli)) {
        eprintln!("{}: {}", e.code(), e.to_string().replace('\n', " "));
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let threads: usize = value
        .parse()
        .map_err(|_| Error::Parameter(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    if threads == 0 {
        return Err(Error::Parameter(format!("{THREADS_ENV} must be positive")));
    }
    // fails only if a pool already exists, which cannot happen here
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Segment(a) => cmd_segment(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Residuals(a) => cmd_residuals(a),
        Command::Margin(a) => cmd_margin(a),
    }
}

fn label_map_path(dir: &Path, stem: &str, grid: &Grid) -> PathBuf {
    let ext = if grid.ndims() == 2 { "pgm" } else { "txt" };
    dir.join(format!("{stem}.{ext}"))
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let (seq, labels, spec) = match a.kind {
        Kind::Chessboard => {
            let mut cfg = ChessboardConfig { seed: a.seed, snr: a.snr, ..Default::default() };
            cfg.n = a.n.unwrap_or(cfg.n);
            cfg.side = a.side.unwrap_or(cfg.side);
            synth::chessboard(&cfg)?
        }
        Kind::Phantom11 => {
            if a.side.is_some() {
                return Err(Error::Parameter("--side applies to the chessboard only".into()));
            }
            let mut cfg = Phantom11Config { seed: a.seed, snr: a.snr, ..Default::default() };
            cfg.n = a.n.unwrap_or(cfg.n);
            synth::phantom11(&cfg)?
        }
    };
    let stem = a.prefix.unwrap_or_else(|| a.kind.name().to_string());
    std::fs::create_dir_all(&a.out)?;
    let file = match a.raw_exponent {
        Some(exp) => {
            let raw = synth::render_raw(&labels, &spec, exp)?;
            DcesFile::from_voxel_major(raw.grid(), raw.times(), raw.data())?
        }
        None => DcesFile::from_voxel_major(seq.grid(), seq.times(), seq.data())?,
    };
    let seq_path = a.out.join(format!("{stem}.dces"));
    let truth_path = label_map_path(&a.out, &format!("{stem}_truth"), labels.grid());
    let spec_path = a.out.join(format!("{stem}_spec.json"));
    io::write_dces(&seq_path, &file)?;
    io::write_atomic(&truth_path, io::label_map_text(&labels).as_bytes())?;
    #[derive(Serialize)]
    struct SpecFile<'a> {
        #[serde(flatten)]
        spec: &'a synth::PhantomSpec,
        /// Scale of the stored intensities.
        scale: &'a str,
        raw_exponent: Option<f64>,
    }
    let scale = if a.raw_exponent.is_some() { "raw" } else { "stabilized" };
    io::write_json(&spec_path, &SpecFile { spec: &spec, scale, raw_exponent: a.raw_exponent })?;
    println!("sequence {}", seq_path.display());
    println!("truth {}", truth_path.display());
    println!("spec {}", spec_path.display());
    Ok(())
}

/// Reads a DCES file and brings it to the unit-noise scale with the
/// baseline removed.
fn load_sequence(path: &Path, model: &ModelArgs) -> Result<StabilizedSequence> {
    let file = io::read_dces(path)?;
    let grid = file.grid()?;
    let seq = if model.stabilized {
        StabilizedSequence::from_stabilized(grid, file.times.clone(), file.to_voxel_major())?
    } else {
        let raw = RawSequence::new(grid, file.times.clone(), file.to_voxel_major())?;
        stabilize(&raw, model.exponent)?
    };
    if model.baseline > 0 {
        remove_baseline(&seq, model.baseline)
    } else {
        Ok(seq)
    }
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::Parameter(format!("invalid delta grid {text:?}"));
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() == 3 {
        let v: Vec<f64> = parts.iter().map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?;
        let (start, stop, step) = (v[0], v[1], v[2]);
        if !(step > 0.0) || !(stop >= start) {
            return Err(bad());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        // snap to 12 decimals so 0.2 + 2·0.2 prints as 0.6
        return Ok((0..count).map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12).collect());
    }
    text.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect()
}

#[derive(Serialize)]
struct SegmentSummary<'a> {
    input: String,
    local_clusters: usize,
    final_clusters: usize,
    runtime_seconds: f64,
    alpha: f64,
    delta: f64,
    exponent: Option<f64>,
    baseline_count: usize,
    stabilized_input: bool,
    connectivity: u32,
    skip_global: bool,
    voxels: usize,
    times: usize,
    cluster_sizes: &'a [usize],
    auto_delta: Option<&'a DeltaSelection>,
    slope_threshold: Option<f64>,
    outputs: Vec<String>,
}

fn cmd_segment(a: SegmentArgs) -> Result<()> {
    let start = Instant::now();
    let file = io::read_dces(&a.input)?;
    let grid = file.grid()?;
    let connectivity = a.connectivity.map(Connectivity::from_count).transpose()?;
    let mut params = SegmentParams {
        alpha: a.alpha,
        delta: a.delta.unwrap_or(0.0),
        exponent: a.model.exponent,
        baseline_count: a.model.baseline,
        connectivity,
        skip_global: a.no_global,
    };
    let seq = if a.model.stabilized {
        let seq = StabilizedSequence::from_stabilized(grid, file.times.clone(), file.to_voxel_major())?;
        if a.model.baseline > 0 {
            remove_baseline(&seq, a.model.baseline)?
        } else {
            seq
        }
    } else {
        let raw = RawSequence::new(grid, file.times.clone(), file.to_voxel_major())?;
        if !a.auto_delta {
            // the library entry point applies the transform itself
            let seg = segment(&raw, &params)?;
            return write_segmentation(&a, &seg, None, start);
        }
        let seq = stabilize(&raw, a.model.exponent)?;
        if a.model.baseline > 0 {
            remove_baseline(&seq, a.model.baseline)?
        } else {
            seq
        }
    };
    let selection = if a.auto_delta {
        let grid = parse_grid(&a.delta_grid)?;
        let sel = auto_delta(&seq, &params, &grid, a.slope_threshold)?;
        if sel.warning {
            eprintln!("warning: no slope fell below {}; using the largest grid value", a.slope_threshold);
        }
        params.delta = sel.delta_star;
        Some(sel)
    } else {
        None
    };
    let seg = segment_stabilized(&seq, &params)?;
    write_segmentation(&a, &seg, selection.as_ref(), start)
}

fn write_segmentation(
    a: &SegmentArgs,
    seg: &Segmentation,
    selection: Option<&DeltaSelection>,
    start: Instant,
) -> Result<()> {
    std::fs::create_dir_all(&a.out)?;
    let labels_path = label_map_path(&a.out, &format!("{}_labels", a.prefix), seg.labels.grid());
    let means_path = a.out.join(format!("{}_means.csv", a.prefix));
    let trace_path = a.out.join(format!("{}_trace.csv", a.prefix));
    let summary_path = a.out.join(format!("{}_summary.json", a.prefix));
    io::write_atomic(&labels_path, io::label_map_text(&seg.labels).as_bytes())?;
    io::write_atomic(&means_path, io::mean_curves_csv(seg).as_bytes())?;
    io::write_atomic(&trace_path, io::trace_csv(&seg.trace).as_bytes())?;
    let summary = SegmentSummary {
        input: a.input.display().to_string(),
        local_clusters: seg.local_clusters,
        final_clusters: seg.final_clusters,
        runtime_seconds: start.elapsed().as_secs_f64(),
        alpha: seg.params.alpha,
        delta: seg.params.delta,
        exponent: seg.provenance.exponent,
        baseline_count: seg.provenance.baseline_count,
        stabilized_input: a.model.stabilized,
        connectivity: seg.connectivity.count(),
        skip_global: seg.params.skip_global,
        voxels: seg.labels.len(),
        times: seg.times.len(),
        cluster_sizes: &seg.sizes,
        auto_delta: selection,
        slope_threshold: selection.map(|_| a.slope_threshold),
        outputs: [&labels_path, &means_path, &trace_path].iter().map(|p| p.display().to_string()).collect(),
    };
    io::write_json(&summary_path, &summary)?;
    println!("local_clusters {}", seg.local_clusters);
    println!("final_clusters {}", seg.final_clusters);
    println!("delta {}", seg.params.delta);
    println!("summary {}", summary_path.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let p = io::read_label_map(&a.truth)?;
    let q = io::read_label_map(&a.segmentation)?;
    let fm = eval::fm_index(&p, &q)?;
    let wfm = eval::weighted_fm(&p, &q)?;
    let errors = eval::error_map(&p, &q)?;
    println!("FM {}", io::sig6(fm.value));
    println!("wFM {}", io::sig6(wfm.value));
    println!("error_voxels {}", errors.iter().filter(|&&e| e).count());
    println!("error_map_tie_break smallest_label");
    if fm.degenerate || wfm.degenerate {
        println!("degenerate true");
    }
    if let Some(path) = &a.error_map {
        write_error_map(path, &p, &errors)?;
    }
    Ok(())
}

fn write_error_map(path: &Path, p: &LabelMap, errors: &[bool]) -> Result<()> {
    let grid = p.grid();
    let text = if grid.ndims() == 2 {
        io::mask_pgm(grid, errors)?
    } else {
        let flags: Vec<u32> = errors.iter().map(|&e| u32::from(e)).collect();
        io::label_map_text(&LabelMap::from_arbitrary(
            grid.clone(),
            &flags.iter().map(|&f| u64::from(f)).collect::<Vec<_>>(),
        )?)
    };
    io::write_atomic(path, text.as_bytes())
}

fn cmd_residuals(a: ResidualArgs) -> Result<()> {
    let seq = load_sequence(&a.input, &a.model)?;
    let labels = io::read_label_map(&a.labels)?;
    let field = normalized_residuals(&seq, &labels)?;
    let hist = Histogram::new(field.values(), -6.0, 6.0, 0.1);
    io::write_atomic(&a.out, io::histogram_csv(&hist).as_bytes())?;
    let ks = ks_standard_normal(field.values());
    println!("samples {}", ks.sample_size);
    println!("ks_statistic {}", io::sig6(ks.statistic));
    println!("ks_p_value {}", io::sig6(ks.p_value));
    println!("normal_at_0.01 {}", if ks.rejects_at(0.01) { "rejected" } else { "accepted" });
    println!("skipped_clusters {}", field.skipped_clusters().len());
    println!("histogram {}", a.out.display());
    Ok(())
}

fn cmd_margin(a: MarginArgs) -> Result<()> {
    let g = min_margin(a.n, a.kappa)?;
    println!("n {}", g.n);
    println!("kappa {}", g.kappa);
    println!("min_margin {}", io::sig6(g.bound));
    println!("delta_min {}", io::sig6(g.delta_min));
    if let Some(size) = a.grid_size {
        let beta = wrong_binding_bound(size, a.n, a.kappa);
        println!("wrong_binding_bound {beta:.1e}");
    }
    Ok(())
}
