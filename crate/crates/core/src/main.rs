//! Command-line surface tying generation, sampling, calibration, metrics,
//! and evaluation into reproducible pipelines.
//!
//! Randomized subcommands require an explicit --seed; there is no
//! wall-clock default. Given identical inputs and flags, every run
//! produces byte-identical outputs regardless of --threads.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use facenms::error::{Error, Result};
use facenms::eval::{compare, EvalReport};
use facenms::metrics::{
    bin_edges, count_stats, dataset_sparsity, intra_similarity_histogram, DEFAULT_PAIR_BUDGET,
};
use facenms::samplers::{
    calibrate_threshold, run_sampler, SamplerConfig, ScoreOrder, Strategy, DEFAULT_K_CENTER_CAP,
};
use facenms::store::{
    apply_manifest, read_dataset, sniff_format, write_dataset, Dataset, Format, SelectionManifest,
};
use facenms::synth::{generate, SynthConfig};
use facenms::TOOL_VERSION;

#[derive(Parser)]
#[command(
    name = "facenms",
    version,
    about = "Core-set selection for identity-grouped embedding datasets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Worker threads for per-identity parallelism (0 = auto). Outputs do
    /// not depend on this value.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Output format for dataset-writing commands. Inputs are detected by
    /// their magic bytes.
    #[arg(long, global = true)]
    format: Option<String>,

    /// Rescale input vectors to unit norm on ingestion instead of
    /// rejecting non-unit ones.
    #[arg(long, global = true)]
    normalize: bool,

    /// Master seed for randomized subcommands.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic train/holdout datasets from a JSON config.
    Generate(GenerateArgs),
    /// Select a core set and write the manifest.
    Sample(SampleArgs),
    /// Find the suppression threshold that retains a target fraction.
    Calibrate(CalibrateArgs),
    /// Restrict a dataset to the faces retained by a manifest.
    Apply(ApplyArgs),
    /// Sparsity, count, and similarity-distribution statistics.
    Metrics(MetricsArgs),
    /// Compare core sets against the full set on a holdout.
    Eval(EvalArgs),
    /// Transcode a dataset between the binary and jsonl formats.
    Convert(ConvertArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Path to the generator config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_train: PathBuf,
    /// Required when the config holds out faces per identity.
    #[arg(long)]
    out_holdout: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// face_nms, away_center, sim_threshold, global_random,
    /// identity_random, k_center, or score_file.
    #[arg(long)]
    strategy: String,
    /// Similarity threshold in [-1, 1.01] (face_nms, sim_threshold).
    #[arg(long)]
    nt: Option<f64>,
    /// Retained fraction in (0, 1] (budget strategies).
    #[arg(long)]
    ratio: Option<f64>,
    /// Score CSV with header identity_id,face_index,score (score_file).
    #[arg(long)]
    scores: Option<PathBuf>,
    /// higher_score_first or lower_score_first (score_file).
    #[arg(long)]
    order: Option<String>,
    /// Group-size cap for k_center.
    #[arg(long)]
    k_center_cap: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    target_ratio: f64,
    #[arg(long)]
    tol: f64,
    #[arg(long, default_value_t = 48)]
    max_iters: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ApplyArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Restrict to this manifest before measuring.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Histogram bins over [-1, 1].
    #[arg(long)]
    bins: usize,
    /// Cap on scored intra-class pairs before fixed-seed subsampling.
    #[arg(long, default_value_t = DEFAULT_PAIR_BUDGET)]
    pair_budget: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the histogram as CSV (bin_left,bin_right,frequency).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    holdout: PathBuf,
    /// Comma-separated manifest paths.
    #[arg(long, value_delimiter = ',')]
    manifests: Vec<PathBuf>,
    /// Comma-separated FAR levels in (0, 1).
    #[arg(long, value_delimiter = ',')]
    far: Vec<f64>,
    /// Cap on genuine and impostor pairs scored.
    #[arg(long, default_value_t = 100_000)]
    pair_budget: usize,
    /// Output CSV table.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON report alongside the CSV.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Target format; defaults to the opposite of the input's.
    #[arg(long)]
    to: Option<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let out_format = match cli.format.as_deref() {
        Some(s) => Some(s.parse::<Format>()?),
        None => None,
    };

    match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Sample(args) => cmd_sample(args, cli.seed, cli.normalize),
        Command::Calibrate(args) => cmd_calibrate(args, cli.normalize),
        Command::Apply(args) => cmd_apply(args, out_format, cli.normalize),
        Command::Metrics(args) => cmd_metrics(args, cli.normalize),
        Command::Eval(args) => {
            let seed = cli
                .seed
                .ok_or_else(|| Error::Config("eval requires --seed (pair sampling)".into()))?;
            cmd_eval(args, seed, cli.normalize)
        }
        Command::Convert(args) => cmd_convert(args, out_format, cli.normalize),
    }
}

fn read_input(path: &Path, normalize: bool) -> Result<Dataset> {
    let format = sniff_format(path)?;
    read_dataset(path, format, normalize)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("json encoding failed: {e}")))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)?;
    let config: SynthConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", args.config.display())))?;
    let (train, holdout) = generate(&config)?;

    write_dataset(&train, &args.out_train, Format::Binary)?;
    let sidecar = serde_json::to_value(&config)
        .map_err(|e| Error::Config(format!("config encoding failed: {e}")))?;
    let mut sidecar_obj = sidecar;
    if let serde_json::Value::Object(map) = &mut sidecar_obj {
        map.insert("tool_version".into(), TOOL_VERSION.into());
        map.insert(
            "train_fingerprint".into(),
            train.fingerprint_hex().into(),
        );
        if let Some(h) = &holdout {
            map.insert("holdout_fingerprint".into(), h.fingerprint_hex().into());
        }
    }
    let sidecar_path = PathBuf::from(format!("{}.config.json", args.out_train.display()));
    write_json(&sidecar_path, &sidecar_obj)?;

    println!(
        "train: {} identities, {} faces, fingerprint {}",
        train.groups.len(),
        train.total_faces(),
        train.fingerprint_hex()
    );
    match (&holdout, &args.out_holdout) {
        (Some(h), Some(path)) => {
            write_dataset(h, path, Format::Binary)?;
            println!(
                "holdout: {} identities, {} faces, fingerprint {}",
                h.groups.len(),
                h.total_faces(),
                h.fingerprint_hex()
            );
        }
        (Some(_), None) => {
            return Err(Error::Config(
                "config holds out faces per identity; pass --out-holdout".into(),
            ))
        }
        (None, Some(_)) => {
            return Err(Error::Config(
                "config has holdout_per_identity = 0; no holdout to write".into(),
            ))
        }
        (None, None) => {}
    }
    Ok(())
}

fn cmd_sample(args: SampleArgs, seed: Option<u64>, normalize: bool) -> Result<()> {
    let strategy: Strategy = args.strategy.parse()?;
    if strategy.is_randomized() && seed.is_none() {
        return Err(Error::Config(format!(
            "strategy {} requires an explicit --seed",
            strategy.as_str()
        )));
    }
    let mut config = SamplerConfig::new(strategy);
    config.nt = args.nt;
    config.ratio = args.ratio;
    config.seed = seed.unwrap_or(0);
    config.score_path = args.scores;
    config.order = match args.order.as_deref() {
        Some(s) => Some(s.parse::<ScoreOrder>()?),
        None => None,
    };
    config.k_center_cap = match (strategy, args.k_center_cap) {
        (Strategy::KCenter, cap) => Some(cap.unwrap_or(DEFAULT_K_CENTER_CAP)),
        (_, Some(_)) => {
            return Err(Error::Config(format!(
                "strategy {} does not take --k-center-cap",
                strategy.as_str()
            )))
        }
        _ => None,
    };
    config.validate()?;

    let ds = read_input(&args.input, normalize)?;
    let manifest = run_sampler(&ds, &config)?;
    manifest.write(&args.out)?;
    println!(
        "strategy {}: retained {}/{} faces (ratio {:.6})",
        strategy.as_str(),
        manifest.totals.retained,
        manifest.totals.original,
        manifest.totals.ratio
    );
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs, normalize: bool) -> Result<()> {
    let ds = read_input(&args.input, normalize)?;
    let calibration = calibrate_threshold(&ds, args.target_ratio, args.tol, args.max_iters)?;
    let value = serde_json::json!({
        "achieved_ratio": calibration.achieved_ratio,
        "dataset_fingerprint": ds.fingerprint_hex(),
        "evaluations": calibration.evaluations,
        "nt": calibration.nt,
        "target_ratio": args.target_ratio,
        "tol": args.tol,
        "tool_version": TOOL_VERSION,
    });
    write_json(&args.out, &value)?;
    println!(
        "nt {:.9} achieves ratio {:.6} (target {:.6}, {} evaluations)",
        calibration.nt, calibration.achieved_ratio, args.target_ratio, calibration.evaluations
    );
    Ok(())
}

fn cmd_apply(args: ApplyArgs, out_format: Option<Format>, normalize: bool) -> Result<()> {
    let ds = read_input(&args.input, normalize)?;
    let manifest = SelectionManifest::read(&args.manifest)?;
    let restricted = apply_manifest(&ds, &manifest)?;
    write_dataset(
        &restricted,
        &args.out,
        out_format.unwrap_or(Format::Binary),
    )?;
    println!(
        "kept {}/{} faces, fingerprint {}",
        restricted.total_faces(),
        ds.total_faces(),
        restricted.fingerprint_hex()
    );
    Ok(())
}

fn metrics_report(ds: &Dataset, bins: usize, pair_budget: u64) -> Result<serde_json::Value> {
    let sparsity = dataset_sparsity(ds);
    let counts = count_stats(ds);
    let histogram = intra_similarity_histogram(ds, bins, pair_budget)?;
    Ok(serde_json::json!({
        "count_stats": counts,
        "dataset_fingerprint": ds.fingerprint_hex(),
        "identities": ds.groups.len(),
        "intra_similarity": histogram,
        "metadata": {
            // Self-pairs enter the sparsity sums but not the pair histogram.
            "histogram_excludes_self_pairs": true,
            "sparsity_includes_self_pairs": true,
        },
        "sparsity": sparsity,
        "tool_version": TOOL_VERSION,
        "total_faces": ds.total_faces(),
    }))
}

fn cmd_metrics(args: MetricsArgs, normalize: bool) -> Result<()> {
    if args.bins < 2 {
        return Err(Error::Config(format!(
            "bins must be at least 2, got {}",
            args.bins
        )));
    }
    let mut ds = read_input(&args.input, normalize)?;
    if let Some(manifest_path) = &args.manifest {
        let manifest = SelectionManifest::read(manifest_path)?;
        ds = apply_manifest(&ds, &manifest)?;
    }
    let report = metrics_report(&ds, args.bins, args.pair_budget)?;
    write_json(&args.out, &report)?;

    if let Some(csv_path) = &args.csv {
        let hist = intra_similarity_histogram(&ds, args.bins, args.pair_budget)?;
        let mut file = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
        writeln!(file, "bin_left,bin_right,frequency")?;
        for (bin, freq) in hist.frequencies.iter().enumerate() {
            let (left, right) = bin_edges(args.bins, bin);
            writeln!(file, "{left},{right},{freq}")?;
        }
        file.flush()?;
    }

    let counts = count_stats(&ds);
    let sparsity = dataset_sparsity(&ds);
    println!(
        "identities {}, faces {}, faces/identity {:.2} +/- {:.2}, mean sparsity {:.6}",
        ds.groups.len(),
        ds.total_faces(),
        counts.mean,
        counts.std,
        sparsity.mean_s
    );
    Ok(())
}

fn format_far(far: f64) -> String {
    format!("{far:e}")
}

fn cmd_eval(args: EvalArgs, seed: u64, normalize: bool) -> Result<()> {
    if args.far.is_empty() {
        return Err(Error::Config("at least one --far level is required".into()));
    }
    let train = read_input(&args.train, normalize)?;
    let holdout = read_input(&args.holdout, normalize)?;
    let manifests: Vec<SelectionManifest> = args
        .manifests
        .iter()
        .map(|p| SelectionManifest::read(p))
        .collect::<Result<Vec<_>>>()?;
    let reports = compare(&train, &manifests, &holdout, &args.far, args.pair_budget, seed)?;

    let mut file = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    let far_cols: Vec<String> = args
        .far
        .iter()
        .map(|&f| format!("tar@{}", format_far(f)))
        .collect();
    writeln!(file, "strategy,ratio,rank1,{}", far_cols.join(","))?;
    for report in &reports {
        let tars: Vec<String> = report
            .tar_at_far
            .iter()
            .map(|(_, tar)| format!("{tar:.6}"))
            .collect();
        writeln!(
            file,
            "{},{:.6},{:.6},{}",
            report.strategy,
            report.ratio,
            report.rank1_accuracy,
            tars.join(",")
        )?;
    }
    file.flush()?;

    if let Some(json_path) = &args.json {
        let value = serde_json::json!({
            "dataset_fingerprint": train.fingerprint_hex(),
            "holdout_fingerprint": holdout.fingerprint_hex(),
            "metadata": {
                // Rank-1 is nearest class mean over renormalized train
                // centers; verification scores holdout pairs only.
                "identification": "nearest_class_mean",
                "verification": "holdout_cosine_pairs",
            },
            "pair_budget": args.pair_budget,
            "reports": reports,
            "seed": seed,
            "tool_version": TOOL_VERSION,
        });
        write_json(json_path, &value)?;
    }

    print_eval_table(&reports);
    Ok(())
}

fn print_eval_table(reports: &[EvalReport]) {
    for report in reports {
        let tars: Vec<String> = report
            .tar_at_far
            .iter()
            .map(|(far, tar)| format!("tar@{}={tar:.4}", format_far(*far)))
            .collect();
        println!(
            "{:<16} ratio {:.4} rank1 {:.4} {}",
            report.strategy,
            report.ratio,
            report.rank1_accuracy,
            tars.join(" ")
        );
    }
}

fn cmd_convert(args: ConvertArgs, out_format: Option<Format>, normalize: bool) -> Result<()> {
    let in_format = sniff_format(&args.input)?;
    let target = match (args.to.as_deref(), out_format) {
        (Some(s), _) => s.parse::<Format>()?,
        (None, Some(f)) => f,
        (None, None) => match in_format {
            Format::Binary => Format::Jsonl,
            Format::Jsonl => Format::Binary,
        },
    };
    let ds = read_dataset(&args.input, in_format, normalize)?;
    write_dataset(&ds, &args.out, target)?;
    println!(
        "{} -> {}, fingerprint {}",
        in_format.as_str(),
        target.as_str(),
        ds.fingerprint_hex()
    );
    Ok(())
}
