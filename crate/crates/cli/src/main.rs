use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stutterkit_core::dataio::{generate_synthetic, load_manifest, validate_manifest, SynthConfig};
use stutterkit_core::evalharness::{
    layer_sweep, render_report, render_table, run_experiment, write_outputs, write_sweep,
};
use stutterkit_core::fusion::DEFAULT_ALPHA;
use stutterkit_core::{
    build_pipeline, ClassifierKind, DatasetManifest, ExperimentConfig, FusionMode, PipelineSpec, Stream,
};

#[derive(Parser, Debug)]
#[command(name = "stutterkit", version, about = "Stuttering detection from precomputed speech embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a manifest and every embedding it references.
    Validate {
        manifest: PathBuf,
    },
    /// Write a synthetic dataset with a known class structure.
    Synth(SynthArgs),
    /// Cross-validate one pipeline configuration.
    Run(RunArgs),
    /// Cross-validate one classifier on each w2v2 layer 1..13.
    Sweep(SweepArgs),
    /// Render report.txt (and layersweep.svg for sweeps) from a run directory.
    Report {
        #[arg(long = "run")]
        run: PathBuf,
    },
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    podcasts: usize,
    #[arg(long)]
    clips: usize,
    #[arg(long)]
    sep: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// w2v2 layers to emit [default: 1..13]
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<u8>>,
    /// Layers that carry class signal [default: every emitted layer]
    #[arg(long, value_delimiter = ',')]
    signal_layers: Option<Vec<u8>>,
    /// Frame count range per clip, as MIN,MAX
    #[arg(long, value_parser = parse_range)]
    frames: Option<(usize, usize)>,
    /// Skip the ECAPA stream
    #[arg(long)]
    no_ecapa: bool,
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected MIN,MAX")?;
    let num = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((num(lo)?, num(hi)?))
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SourceArg {
    Ecapa,
    W2v2,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum FuseArg {
    None,
    Score,
    Concat,
}

#[derive(Args, Debug)]
struct CommonArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// knn, gnb (alias nbc) or nn
    #[arg(long)]
    clf: ClassifierKind,
    /// LDA components per stream (1..4)
    #[arg(long)]
    lda: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Draw a new fold plan for every repeat
    #[arg(long)]
    reshuffle_folds: bool,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Embedding source(s); repeat or comma-separate for fusion
    #[arg(long, value_enum, value_delimiter = ',', default_value = "w2v2")]
    source: Vec<SourceArg>,
    /// w2v2 layer for a single-layer run
    #[arg(long, default_value_t = 11)]
    layer: u8,
    /// Several w2v2 layers, e.g. 1,7,11 (overrides --layer)
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<u8>>,
    /// Unit-normalize ECAPA vectors
    #[arg(long)]
    normalize: bool,
    #[arg(long, value_enum, default_value = "none")]
    fuse: FuseArg,
    /// w2v2 weight in score fusion
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
}

/// Exit status 1: the request itself is invalid.
/// Exit status 2: a valid request failed while running.
enum Failure {
    Invalid(String),
    Runtime(String),
}

fn invalid(e: impl Display) -> Failure {
    Failure::Invalid(e.to_string())
}

fn runtime(e: impl Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Validate { manifest } => validate(&manifest),
        Command::Synth(args) => synth(&args),
        Command::Run(args) => run(&args),
        Command::Sweep(args) => sweep(&args),
        Command::Report { run } => report(&run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn validate(path: &Path) -> Result<(), Failure> {
    let manifest = load_manifest(path).map_err(invalid)?;
    let summary = validate_manifest(&manifest).map_err(invalid)?;
    let layers: Vec<String> = summary.w2v2_layers.iter().map(ToString::to_string).collect();
    println!(
        "ok: {} rows, {} clips, {} podcasts, {} ecapa vectors, w2v2 layers [{}]",
        summary.rows,
        summary.clips,
        summary.podcasts,
        summary.ecapa_rows,
        layers.join(",")
    );
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<(), Failure> {
    let mut cfg = SynthConfig::new(args.podcasts, args.clips, args.sep, args.seed);
    if let Some(layers) = &args.layers {
        cfg = cfg.with_layers(layers);
    }
    if let Some(signal) = &args.signal_layers {
        cfg.signal_layers = signal.clone();
    }
    if let Some(frames) = args.frames {
        cfg.frames = frames;
    }
    cfg.ecapa = !args.no_ecapa;
    let manifest = generate_synthetic(&cfg, &args.out).map_err(|e| match e {
        stutterkit_core::dataio::DataError::InvalidArgument(_) => invalid(e),
        _ => runtime(e),
    })?;
    println!("wrote {} manifest rows under {}", manifest.len(), args.out.display());
    Ok(())
}

fn experiment_config(c: &CommonArgs) -> ExperimentConfig {
    ExperimentConfig {
        seed: c.seed,
        repeats: c.repeats,
        reshuffle_folds: c.reshuffle_folds,
        jobs: c.jobs,
    }
}

fn check_common(c: &CommonArgs) -> Result<DatasetManifest, Failure> {
    if c.repeats == 0 {
        return Err(invalid("--repeats must be at least 1"));
    }
    if c.jobs == 0 {
        return Err(invalid("--jobs must be at least 1"));
    }
    load_manifest(&c.manifest).map_err(invalid)
}

fn run_spec(args: &RunArgs) -> PipelineSpec {
    let mut streams = Vec::new();
    for source in &args.source {
        match source {
            SourceArg::Ecapa => streams.push(Stream::Ecapa),
            SourceArg::W2v2 => {
                let layers = args.layers.clone().unwrap_or_else(|| vec![args.layer]);
                streams.extend(layers.into_iter().map(Stream::W2v2));
            }
        }
    }
    let mut spec = PipelineSpec::new(streams, args.common.clf);
    spec.normalize = args.normalize;
    spec.lda = args.common.lda;
    spec.fusion = match args.fuse {
        FuseArg::None => FusionMode::None,
        FuseArg::Score => FusionMode::Score { alpha: args.alpha },
        FuseArg::Concat => FusionMode::Concat,
    };
    spec
}

fn run(args: &RunArgs) -> Result<(), Failure> {
    let pipeline = build_pipeline(run_spec(args)).map_err(invalid)?;
    let manifest = check_common(&args.common)?;
    let cfg = experiment_config(&args.common);
    let start = Instant::now();
    eprintln!(
        "running {} folds x {} repeat(s) on {}",
        stutterkit_core::evalharness::NUM_FOLDS,
        cfg.repeats,
        args.common.manifest.display()
    );
    let result = run_experiment(&manifest, &pipeline, &cfg).map_err(runtime)?;
    let meta = vec![
        ("command".to_string(), "run".to_string()),
        ("argv".to_string(), std::env::args().skip(1).collect::<Vec<_>>().join(" ")),
        ("manifest".to_string(), args.common.manifest.display().to_string()),
    ];
    write_outputs(&args.common.out, &result, &pipeline, &cfg, &meta).map_err(runtime)?;
    let rows = [
        ("mean".to_string(), result.table.mean),
        ("std".to_string(), result.table.std),
        ("pooled".to_string(), result.table.pooled),
    ];
    print!("{}", render_table(&rows));
    eprintln!(
        "wrote {} in {:.1}s",
        args.common.out.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<(), Failure> {
    let c = &args.common;
    let mut template = PipelineSpec::new(vec![Stream::W2v2(1)], c.clf);
    template.lda = c.lda;
    build_pipeline(template.clone()).map_err(invalid)?;
    let manifest = check_common(c)?;
    let cfg = experiment_config(c);
    let start = Instant::now();
    let points = layer_sweep(&manifest, &template, &cfg).map_err(|e| match e {
        stutterkit_core::evalharness::HarnessError::MissingLayer(_) => invalid(e),
        _ => runtime(e),
    })?;
    write_sweep(&c.out, &points).map_err(runtime)?;

    let mut meta: Vec<(String, String)> = vec![
        ("command".into(), "sweep".into()),
        ("argv".into(), std::env::args().skip(1).collect::<Vec<_>>().join(" ")),
        ("manifest".into(), c.manifest.display().to_string()),
        ("seed".into(), c.seed.to_string()),
        ("repeats".into(), c.repeats.to_string()),
        ("reshuffle_folds".into(), c.reshuffle_folds.to_string()),
        ("jobs".into(), c.jobs.to_string()),
    ];
    meta.extend(template.describe().into_iter().filter(|(k, _)| k != "streams"));
    meta.push(("streams".into(), "w2v2_L1..w2v2_L13, one run per layer".into()));
    let body: String = meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    let path = c.out.join("run_meta.txt");
    fs::write(&path, body).map_err(|e| runtime(format!("{}: {e}", path.display())))?;

    for p in &points {
        eprintln!("layer {:>2}: TA {}", p.layer, p.table.mean.csv_cells()[5]);
    }
    eprintln!("wrote {} in {:.1}s", c.out.display(), start.elapsed().as_secs_f64());
    Ok(())
}

fn report(dir: &Path) -> Result<(), Failure> {
    if !dir.is_dir() {
        return Err(invalid(format!("{} is not a directory", dir.display())));
    }
    let report = render_report(dir).map_err(invalid)?;
    print!("{}", report.text);
    if let Some(svg) = report.svg {
        eprintln!("wrote {}", svg.display());
    }
    Ok(())
}
