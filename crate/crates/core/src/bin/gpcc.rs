//! Command-line front end: encode/decode .gpcc streams, train checkpoints,
//! evaluate corpora (with the five-configuration ablation), run distribution
//! analyses and generate synthetic clouds.
//!
//! Exit codes: 0 success, 2 usage or validation failure, 3 data or stream
//! failure encountered after validation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gpcc::analysis::{density_histogram, fractal_profile, kl_divergence, kl_symmetric, neighbor_counts};
use gpcc::codec::{decode_with_diagnostics, encode, evaluate, run_ablation, EvalRow, EvalTable};
use gpcc::geometry::{build_hierarchy, dequantize, quantize, QuantizedCloud};
use gpcc::io::{generate, read_ply, write_ply, PlyMode, RawCloud, SyntheticSpec};
use gpcc::model::{train_step, AdamState, Fop, FopModel, Grouping, Hyper, ModelConfig};

#[derive(Parser)]
#[command(
    name = "gpcc",
    version,
    about = "Lossless point-cloud geometry codec with a learned occupancy model"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compress a PLY point cloud into a .gpcc stream.
    Encode(EncodeArgs),
    /// Reconstruct the voxelized point cloud from a .gpcc stream.
    Decode(DecodeArgs),
    /// Train a model checkpoint on a corpus and write a loss log.
    Train(TrainArgs),
    /// Encode+decode every corpus cloud and report a bpp table.
    Eval(EvalArgs),
    /// Distribution diagnostics: local density, fractal dimension, KL.
    Analyze(AnalyzeArgs),
    /// Write synthetic clustered clouds as PLY.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct EncodeArgs {
    /// Input .ply file.
    input: PathBuf,
    /// Voxel size in world units.
    #[arg(long, default_value_t = 0.001)]
    step: f64,
    /// Model checkpoint (.gpcm).
    #[arg(long)]
    model: PathBuf,
    /// Output stream path.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    /// Input .gpcc stream.
    input: PathBuf,
    /// Model checkpoint; must match the one used to encode.
    #[arg(long)]
    model: PathBuf,
    /// Output .ply path (voxel centers).
    #[arg(short, long)]
    output: PathBuf,
    /// Write ASCII PLY instead of binary little-endian.
    #[arg(long)]
    ascii: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of training .ply files.
    #[arg(long, conflicts_with = "synthetic")]
    corpus: Option<PathBuf>,
    /// Synthetic corpus spec, e.g. "clusters=8,points=200..400,sigma=2,extent=120,bg=0.1".
    #[arg(long)]
    synthetic: Option<String>,
    /// Number of synthetic clouds to generate.
    #[arg(long, default_value_t = 8)]
    clouds: usize,
    /// Voxel size applied to the corpus.
    #[arg(long, default_value_t = 1.0)]
    step: f64,
    #[command(flatten)]
    model_cfg: ModelFlags,
    /// Adam steps; each step consumes one corpus cloud, cycling.
    #[arg(long, default_value_t = 500)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-3)]
    lr: f32,
    /// Output checkpoint path (.gpcm).
    #[arg(short, long)]
    output: PathBuf,
    /// Loss log CSV path; defaults to the checkpoint path with .loss.csv.
    #[arg(long)]
    loss_log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of .ply files to evaluate.
    #[arg(long)]
    corpus: PathBuf,
    /// Model checkpoint; required unless --ablate trains its own.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Train all five ablation configurations and report a bpp matrix.
    #[arg(long)]
    ablate: bool,
    /// Training corpus for --ablate; defaults to the eval corpus.
    #[arg(long)]
    train_corpus: Option<PathBuf>,
    /// Training budget per ablation configuration.
    #[arg(long, default_value_t = 400)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Voxel size applied to the corpus.
    #[arg(long, default_value_t = 1.0)]
    step: f64,
    #[command(flatten)]
    model_cfg: ModelFlags,
    /// Write the CSV here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AnalyzeMode {
    Density,
    Fractal,
    Kl,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Input .ply file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    mode: AnalyzeMode,
    /// L-infinity neighborhood size (odd).
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Histogram bins over [0, k^3].
    #[arg(long, default_value_t = 50)]
    bins: usize,
    /// Second cloud for --mode kl.
    #[arg(long)]
    against: Option<PathBuf>,
    /// Voxel size applied to the inputs.
    #[arg(long, default_value_t = 1.0)]
    step: f64,
    /// Report file; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Emit JSON instead of CSV.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct GenerateArgs {
    /// Spec, e.g. "clusters=8,points=200..400,sigma=2,extent=120,bg=0.1".
    #[arg(long, default_value = "")]
    spec: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of clouds; more than one writes cloud_NNN.ply under --output.
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Output .ply path, or directory when --count > 1.
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long)]
    ascii: bool,
}

/// Model configuration flags shared by train and eval --ablate.
#[derive(Args)]
struct ModelFlags {
    /// Preset: desk (C=8, k=3) or full (C=32, k=5).
    #[arg(long, default_value = "desk")]
    config: String,
    /// Override channel count C.
    #[arg(long)]
    channels: Option<usize>,
    /// Override kernel size k (odd).
    #[arg(long)]
    kernel: Option<usize>,
    /// Override bit grouping.
    #[arg(long, value_enum)]
    grouping: Option<GroupingFlag>,
    /// Disable the neighbor prior (per-voxel linear stack instead).
    #[arg(long)]
    no_neighbor_prior: bool,
    /// Override Conv-ReLU-Conv blocks per stage.
    #[arg(long)]
    blocks: Option<usize>,
    /// Add decoded-bit embeddings after the convolution instead of before.
    #[arg(long)]
    no_stage_refresh: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GroupingFlag {
    /// 4+4 bits.
    #[value(name = "2stage")]
    TwoStage,
    /// 2+2+2+2 bits.
    #[value(name = "4stage")]
    FourStage,
    /// 1+1+2+4 bits.
    #[value(name = "4stage-ue")]
    FourStageUe,
}

impl ModelFlags {
    fn resolve(&self) -> Result<ModelConfig, CliError> {
        let mut cfg = match self.config.as_str() {
            "desk" => ModelConfig::desk(),
            "full" => ModelConfig::full(),
            other => return Err(CliError::usage(format!("unknown config preset '{}'", other))),
        };
        if let Some(c) = self.channels {
            cfg.channels = c;
        }
        if let Some(k) = self.kernel {
            cfg.kernel_size = k;
        }
        if let Some(g) = self.grouping {
            cfg.grouping = match g {
                GroupingFlag::TwoStage => Grouping::TwoStage,
                GroupingFlag::FourStage => Grouping::FourStageUniform,
                GroupingFlag::FourStageUe => Grouping::FourStageNonUniform,
            };
        }
        if self.no_neighbor_prior {
            cfg.neighbor_prior = false;
        }
        if let Some(b) = self.blocks {
            cfg.conv_blocks_per_stage = b;
        }
        if self.no_stage_refresh {
            cfg.stage_refresh = false;
        }
        cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(cfg)
    }
}

/// Usage/validation problems exit 2; data/stream problems exit 3.
enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) => m,
        }
    }
}

impl From<gpcc::Error> for CliError {
    fn from(e: gpcc::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Encode(a) => cmd_encode(a),
        Cmd::Decode(a) => cmd_decode(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Analyze(a) => cmd_analyze(a),
        Cmd::Generate(a) => cmd_generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn check_step(step: f64) -> Result<(), CliError> {
    if step <= 0.0 || !step.is_finite() {
        return Err(CliError::usage(format!("step must be positive, got {}", step)));
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<FopModel, CliError> {
    Fop::load(path).map_err(CliError::from)
}

fn cmd_encode(a: EncodeArgs) -> Result<(), CliError> {
    check_step(a.step)?;
    let model = load_model(&a.model)?;
    let raw = read_ply(&a.input)?;
    let cloud = quantize(&raw.positions, a.step)?;
    let (stream, report) = encode(&cloud, &model)?;
    std::fs::write(&a.output, &stream).map_err(gpcc::Error::from)?;
    println!("input points: {}", raw.positions.len());
    println!("voxels: {}", report.point_count);
    println!("stream bytes: {} (header {}, payload {})",
        stream.len(), report.header_bytes, report.payload_bytes);
    println!("bpp: {:.6}", report.bpp);
    println!("model bpp: {:.6}", report.model_bpp);
    for (s, stages) in report.scale_stage_bits.iter().enumerate() {
        let total: f64 = stages.iter().sum();
        println!("scale {} bits: {:.1}", s, total);
    }
    println!("encode seconds: {:.3}", report.enc_seconds);
    Ok(())
}

fn cmd_decode(a: DecodeArgs) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let stream = std::fs::read(&a.input).map_err(gpcc::Error::from)?;
    let (cloud, diag) = decode_with_diagnostics(&stream, &model)?;
    let raw = RawCloud {
        positions: dequantize(&cloud),
        source: a.input.display().to_string(),
    };
    let mode = if a.ascii { PlyMode::Ascii } else { PlyMode::BinaryLittleEndian };
    write_ply(&raw, &a.output, mode)?;
    println!("voxels: {}", cloud.coords.len());
    println!("decode seconds: {:.3}", diag.dec_seconds);
    Ok(())
}

/// Key=value synthetic-corpus spec; keys: clusters, points (N or LO..HI),
/// sigma, extent, bg.
fn parse_spec(s: &str, seed: u64) -> Result<SyntheticSpec, CliError> {
    let mut spec = SyntheticSpec {
        clusters: 8,
        points_per_cluster: (200, 400),
        sigma: 2.0,
        extent: 120.0,
        background_fraction: 0.1,
        seed,
    };
    for part in s.split(',').filter(|p| !p.is_empty()) {
        let (key, val) = part
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("spec entry '{}' is not key=value", part)))?;
        let bad = |what: &str| CliError::usage(format!("spec {}: bad value '{}'", what, val));
        match key {
            "clusters" => spec.clusters = val.parse().map_err(|_| bad("clusters"))?,
            "points" => {
                spec.points_per_cluster = match val.split_once("..") {
                    Some((lo, hi)) => (
                        lo.parse().map_err(|_| bad("points"))?,
                        hi.parse().map_err(|_| bad("points"))?,
                    ),
                    None => {
                        let n = val.parse().map_err(|_| bad("points"))?;
                        (n, n)
                    }
                };
            }
            "sigma" => spec.sigma = val.parse().map_err(|_| bad("sigma"))?,
            "extent" => spec.extent = val.parse().map_err(|_| bad("extent"))?,
            "bg" => spec.background_fraction = val.parse().map_err(|_| bad("bg"))?,
            other => return Err(CliError::usage(format!("unknown spec key '{}'", other))),
        }
    }
    spec.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(spec)
}

/// All .ply files under `dir`, sorted by name. Enumeration failures are
/// validation errors; per-file parse failures later are data errors.
fn corpus_paths(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::usage(format!("cannot read corpus '{}': {}", dir.display(), e)))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ply"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::usage(format!(
            "corpus '{}' contains no .ply files",
            dir.display()
        )));
    }
    Ok(paths)
}

fn load_corpus(dir: &Path, step: f64) -> Result<Vec<(String, QuantizedCloud)>, CliError> {
    let mut out = Vec::new();
    for p in corpus_paths(dir)? {
        let name = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| p.display().to_string());
        let raw = read_ply(&p)?;
        out.push((name, quantize(&raw.positions, step)?));
    }
    Ok(out)
}

fn synthetic_corpus(spec: &SyntheticSpec, clouds: usize, step: f64) -> Result<Vec<(String, QuantizedCloud)>, CliError> {
    (0..clouds)
        .map(|i| {
            let s = SyntheticSpec { seed: spec.seed.wrapping_add(i as u64), ..*spec };
            let cloud = quantize(&generate(&s).positions, step)?;
            Ok((format!("synth{:03}", i), cloud))
        })
        .collect()
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    check_step(a.step)?;
    let cfg = a.model_cfg.resolve()?;
    let corpus = match (&a.corpus, &a.synthetic) {
        (Some(dir), None) => load_corpus(dir, a.step)?,
        (None, Some(spec)) => {
            if a.clouds == 0 {
                return Err(CliError::usage("--clouds must be positive"));
            }
            synthetic_corpus(&parse_spec(spec, a.seed)?, a.clouds, a.step)?
        }
        (None, None) => return Err(CliError::usage("one of --corpus or --synthetic is required")),
        (Some(_), Some(_)) => unreachable!("clap rejects the conflict"),
    };
    let batches: Vec<_> = corpus
        .iter()
        .map(|(_, c)| build_hierarchy(c))
        .collect::<gpcc::Result<_>>()?;
    let mut model = Fop::seeded(cfg, a.seed).map_err(CliError::from)?;
    let mut state = AdamState::new(model.params.len());
    let hp = Hyper { lr: a.lr, ..Hyper::default() };
    let mut log = String::from("iter,bpp\n");
    let mut first = f64::NAN;
    let mut last = f64::NAN;
    for it in 0..a.iters {
        let loss = train_step(&mut model, &batches[it % batches.len()], &mut state, &hp)?;
        log.push_str(&format!("{},{:.6}\n", it, loss));
        if it == 0 {
            first = loss;
        }
        last = loss;
        if it % 100 == 0 || it + 1 == a.iters {
            println!("iter {:>6}  bpp {:.4}", it, loss);
        }
    }
    model.save(&a.output)?;
    let log_path = a
        .loss_log
        .unwrap_or_else(|| a.output.with_extension("loss.csv"));
    std::fs::write(&log_path, log).map_err(gpcc::Error::from)?;
    println!("checkpoint: {} (digest {:016x})", a.output.display(), model.digest());
    println!("loss log: {}", log_path.display());
    if a.iters > 0 {
        println!("bpp first {:.4} last {:.4}", first, last);
    }
    Ok(())
}

/// Worker count: GPCC_THREADS if set, else available parallelism.
fn worker_count(jobs: usize) -> usize {
    let cap = std::env::var("GPCC_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    cap.min(jobs).max(1)
}

/// [`evaluate`] with the per-cloud work fanned out over a thread pool.
/// Rows keep corpus order, so the table is identical to the sequential one.
fn evaluate_parallel(
    corpus: &[(String, QuantizedCloud)],
    model: &FopModel,
    workers: usize,
) -> gpcc::Result<EvalTable> {
    if workers <= 1 || corpus.len() <= 1 {
        return evaluate(corpus, model);
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<gpcc::Result<EvalRow>>>> =
        corpus.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= corpus.len() {
                    break;
                }
                let row = evaluate(&corpus[i..i + 1], model)
                    .map(|t| t.rows.into_iter().next().expect("one row"));
                *slots[i].lock().expect("poisoned slot") = Some(row);
            });
        }
    });
    let rows = slots
        .into_iter()
        .map(|m| m.into_inner().expect("poisoned slot").expect("worker filled slot"))
        .collect::<gpcc::Result<Vec<_>>>()?;
    Ok(EvalTable::from_rows(rows))
}

fn emit_report(csv: String, output: Option<&Path>, summary: &str) -> Result<(), CliError> {
    match output {
        Some(path) => {
            std::fs::write(path, csv).map_err(gpcc::Error::from)?;
            println!("{}", summary);
            println!("report: {}", path.display());
        }
        None => print!("{}", csv),
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    check_step(a.step)?;
    let corpus = load_corpus(&a.corpus, a.step)?;
    if a.ablate {
        let base = a.model_cfg.resolve()?;
        let train: Vec<QuantizedCloud> = match &a.train_corpus {
            Some(dir) => load_corpus(dir, a.step)?.into_iter().map(|(_, c)| c).collect(),
            None => corpus.iter().map(|(_, c)| c.clone()).collect(),
        };
        let table = run_ablation(&train, &corpus, base, a.iters, a.seed)?;
        let summary = format!(
            "mean bpp: {}",
            table
                .config_names
                .iter()
                .zip(&table.mean_bpp)
                .map(|(n, b)| format!("{} {:.4}", n, b))
                .collect::<Vec<_>>()
                .join(", ")
        );
        return emit_report(table.to_csv(), a.output.as_deref(), &summary);
    }
    let model_path = a
        .model
        .as_ref()
        .ok_or_else(|| CliError::usage("--model is required without --ablate"))?;
    let model = load_model(model_path)?;
    let table = evaluate_parallel(&corpus, &model, worker_count(corpus.len()))?;
    let summary = format!(
        "clouds: {}  mean bpp: {:.4}  mean enc s: {:.3}  mean dec s: {:.3}",
        table.rows.len(),
        table.mean_bpp,
        table.mean_enc_s,
        table.mean_dec_s
    );
    emit_report(table.to_csv(), a.output.as_deref(), &summary)
}

fn load_quantized(path: &Path, step: f64) -> Result<QuantizedCloud, CliError> {
    let raw = read_ply(path)?;
    Ok(quantize(&raw.positions, step)?)
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<(), CliError> {
    check_step(a.step)?;
    if a.k % 2 == 0 || a.k == 0 {
        return Err(CliError::usage(format!("k must be odd, got {}", a.k)));
    }
    if a.bins == 0 {
        return Err(CliError::usage("bins must be positive"));
    }
    if a.mode == AnalyzeMode::Kl && a.against.is_none() {
        return Err(CliError::usage("--mode kl requires --against"));
    }
    let cloud = load_quantized(&a.input, a.step)?;
    let report = match a.mode {
        AnalyzeMode::Density => {
            let counts = neighbor_counts(&cloud.coords, a.k);
            let hist = density_histogram(&counts, a.k, a.bins)?;
            if a.json { hist.to_json() } else { hist.to_csv() }
        }
        AnalyzeMode::Fractal => {
            let h = build_hierarchy(&cloud)?;
            let profile = fractal_profile(&h);
            if a.json { profile.to_json() } else { profile.to_csv() }
        }
        AnalyzeMode::Kl => {
            let other = load_quantized(a.against.as_ref().expect("checked above"), a.step)?;
            let ha = build_hierarchy(&cloud)?;
            let hb = build_hierarchy(&other)?;
            // Scales pair up by coarsening depth (0 = finest), so both sides
            // of each row describe voxels of the same size.
            let depths = ha.scale_count().min(hb.scale_count()) + 1;
            let mut rows = Vec::with_capacity(depths);
            for d in 0..depths {
                let la = &ha.levels[ha.scale_count() - d];
                let lb = &hb.levels[hb.scale_count() - d];
                let pa = density_histogram(&neighbor_counts(la, a.k), a.k, a.bins)?;
                let pb = density_histogram(&neighbor_counts(lb, a.k), a.k, a.bins)?;
                rows.push((d, kl_divergence(&pa, &pb)?, kl_symmetric(&pa, &pb)?));
            }
            if a.json {
                let body: Vec<String> = rows
                    .iter()
                    .map(|(d, kl, sym)| {
                        format!("{{\"depth\":{},\"kl\":{:.9},\"kl_sym\":{:.9}}}", d, kl, sym)
                    })
                    .collect();
                format!("[{}]", body.join(","))
            } else {
                let mut csv = String::from("depth,kl,kl_sym\n");
                for (d, kl, sym) in rows {
                    csv.push_str(&format!("{},{:.9},{:.9}\n", d, kl, sym));
                }
                csv
            }
        }
    };
    match a.output {
        Some(path) => {
            std::fs::write(&path, report).map_err(gpcc::Error::from)?;
            println!("report: {}", path.display());
        }
        None => print!("{}", report),
    }
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> Result<(), CliError> {
    if a.count == 0 {
        return Err(CliError::usage("--count must be positive"));
    }
    let spec = parse_spec(&a.spec, a.seed)?;
    let mode = if a.ascii { PlyMode::Ascii } else { PlyMode::BinaryLittleEndian };
    if a.count == 1 {
        let cloud = generate(&spec);
        write_ply(&cloud, &a.output, mode)?;
        println!("wrote {} ({} points)", a.output.display(), cloud.positions.len());
        return Ok(());
    }
    std::fs::create_dir_all(&a.output).map_err(gpcc::Error::from)?;
    let mut total = 0usize;
    for i in 0..a.count {
        let s = SyntheticSpec { seed: a.seed.wrapping_add(i as u64), ..spec };
        let cloud = generate(&s);
        total += cloud.positions.len();
        write_ply(&cloud, a.output.join(format!("cloud_{:03}.ply", i)), mode)?;
    }
    println!("wrote {} clouds ({} points) under {}", a.count, total, a.output.display());
    Ok(())
}
