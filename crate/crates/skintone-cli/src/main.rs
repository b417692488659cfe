//! Batch front end: fit models, score manifests, analyze score tables, and
//! generate synthetic datasets.
//!
//! Every run is reproducible: all randomness flows from `--seed`, outputs
//! are emitted in manifest order, and the worker count (SKINTONE_THREADS)
//! cannot change any output byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use skintone::analysis::{
    bin_scores, group_distribution, BinStrategy, Metric, ScoreTable, VariabilityEntry,
    VariabilityReport, DEFAULT_DISTRIBUTION_BINS,
};
use skintone::ingestion::{load_manifest, DatasetManifest, MIN_PATCH_PIXELS_DEFAULT};
use skintone::ita::DEFAULT_SMOOTHING_KERNEL;
use skintone::pipeline::{
    cross_dataset_matrix, fit_rsr_on_manifest, fit_sreds_on_manifest, score_manifest,
    CrossConfig, MetricJob, PatchOptions,
};
use skintone::rsr::RsrModel;
use skintone::sreds::{NnmfOptions, SredsModel, SredsOptions};
use skintone::synth::{generate_dataset, SynthSpec};

#[derive(Parser, Debug)]
#[command(
    name = "skintone",
    about = "Skin-tone metrics (ITA, RSR, SREDS) over face-image datasets",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a trainable metric model on a dataset manifest
    Fit(FitArgs),
    /// Score a manifest with one metric, writing a scores CSV
    Score(ScoreArgs),
    /// Analyses over score CSVs
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Generate a synthetic dichromatic dataset
    Synth(SynthArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum, Debug)]
enum MetricArg {
    Ita,
    Rsr,
    Sreds,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Metric {
        match m {
            MetricArg::Ita => Metric::Ita,
            MetricArg::Rsr => Metric::Rsr,
            MetricArg::Sreds => Metric::Sreds,
        }
    }
}

#[derive(Args, Debug)]
struct CommonFlags {
    /// Root seed for all randomness in this run
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Minimum interior pixels for a usable region
    #[arg(long, default_value_t = MIN_PATCH_PIXELS_DEFAULT)]
    min_patch_pixels: usize,
    /// NNMF iteration cap
    #[arg(long, default_value_t = 500)]
    nnmf_iters: usize,
    /// NNMF relative-decrease stopping tolerance (0 disables)
    #[arg(long, default_value_t = 1e-6)]
    nnmf_tol: f64,
}

impl CommonFlags {
    fn nnmf(&self) -> NnmfOptions {
        NnmfOptions {
            iters: self.nnmf_iters,
            tol: self.nnmf_tol,
            seed: self.seed,
            min_pixels: self.min_patch_pixels,
        }
    }

    fn patch(&self) -> PatchOptions {
        PatchOptions {
            min_patch_pixels: self.min_patch_pixels,
        }
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Metric to fit (rsr or sreds; ita has no training component)
    #[arg(value_enum)]
    metric: MetricArg,
    /// Dataset manifest (JSON Lines)
    #[arg(long)]
    manifest: PathBuf,
    /// Output model file (JSON)
    #[arg(long)]
    model_out: PathBuf,
    /// Override the dataset name recorded in the model (default: file stem)
    #[arg(long)]
    dataset_name: Option<String>,
    /// Kernel-PCA anchor budget
    #[arg(long, default_value_t = 2000)]
    max_anchors: usize,
    /// RBF bandwidth; defaults to the median heuristic
    #[arg(long)]
    gamma: Option<f64>,
    /// Gray-world per-image normalization before RSR fitting
    #[arg(long, default_value_t = false)]
    gray_world: bool,
    #[command(flatten)]
    common: CommonFlags,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    /// Metric to score
    #[arg(value_enum)]
    metric: MetricArg,
    /// Dataset manifest (JSON Lines)
    #[arg(long)]
    manifest: PathBuf,
    /// Model file (required for rsr and sreds)
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output scores CSV
    #[arg(long)]
    out: PathBuf,
    /// Override the dataset name in output rows (default: file stem)
    #[arg(long)]
    dataset_name: Option<String>,
    /// ITA averaging-filter size (odd)
    #[arg(long, default_value_t = DEFAULT_SMOOTHING_KERNEL)]
    ita_kernel: usize,
    /// Abort when more than this many samples fail (default: never)
    #[arg(long)]
    max_failures: Option<usize>,
    #[command(flatten)]
    common: CommonFlags,
}

#[derive(Subcommand, Debug)]
enum AnalyzeCommand {
    /// Per-(dataset, metric) mean intra-subject standard deviation
    Variability(VariabilityArgs),
    /// Cross-dataset variability matrix from prefit models
    Cross(CrossArgs),
    /// Discretize subject-level scores into bins
    Bin(BinArgs),
    /// Per-group score histograms (labels joined from a manifest)
    Dist(DistArgs),
}

#[derive(Args, Debug)]
struct VariabilityArgs {
    /// Input scores CSVs
    #[arg(long, required = true, num_args = 1..)]
    scores: Vec<PathBuf>,
    /// Output report CSV
    #[arg(long)]
    out: PathBuf,
    /// z-normalize each slice before measuring (comparable across metrics)
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    normalize: bool,
}

#[derive(Args, Debug)]
struct CrossArgs {
    /// Test datasets as name=manifest.jsonl
    #[arg(long = "test", required = true, num_args = 1..)]
    tests: Vec<String>,
    /// SREDS models as trainname=model.json
    #[arg(long = "sreds-model")]
    sreds_models: Vec<String>,
    /// RSR models as trainname=model.json
    #[arg(long = "rsr-model")]
    rsr_models: Vec<String>,
    /// Metrics to include
    #[arg(long, value_delimiter = ',', default_values = ["sreds", "rsr", "ita"])]
    metrics: Vec<MetricArg>,
    /// Output report CSV (Table-1-shaped wide layout)
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    normalize: bool,
    #[arg(long, default_value_t = DEFAULT_SMOOTHING_KERNEL)]
    ita_kernel: usize,
    /// Abort a cell when more than this many samples fail
    #[arg(long)]
    max_failures: Option<usize>,
    #[command(flatten)]
    common: CommonFlags,
}

#[derive(Args, Debug)]
struct BinArgs {
    /// Input scores CSV
    #[arg(long)]
    scores: PathBuf,
    /// Binning strategy: median, or quantile:K
    #[arg(long, default_value = "median")]
    strategy: String,
    /// Output CSV (dataset, metric, subject, score, label)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DistArgs {
    /// Input scores CSV
    #[arg(long)]
    scores: PathBuf,
    /// Manifest supplying group labels, joined on (subject_id, sample_id)
    #[arg(long)]
    manifest: PathBuf,
    /// Histogram bin count
    #[arg(long, default_value_t = DEFAULT_DISTRIBUTION_BINS)]
    bins: usize,
    /// Output CSV
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Synth spec JSON; omitted means the built-in default spec
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory for images/ and manifest.jsonl
    #[arg(long)]
    out_dir: PathBuf,
    /// Override the spec's seed
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // usage-shaped errors exit 2, operational errors exit 1
            let usage = e.downcast_ref::<UsageError>().is_some();
            eprintln!("error: {e:#}");
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

fn configure_threads() -> Result<()> {
    if let Ok(raw) = std::env::var("SKINTONE_THREADS") {
        let n: usize = raw
            .parse()
            .map_err(|_| anyhow!("SKINTONE_THREADS must be a positive integer, got {raw:?}"))?;
        if n == 0 {
            bail!("SKINTONE_THREADS must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("building worker pool")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    log::info!("resolved config: {:?}", cli.command);
    match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Score(args) => cmd_score(args),
        Command::Analyze(cmd) => match cmd {
            AnalyzeCommand::Variability(args) => cmd_variability(args),
            AnalyzeCommand::Cross(args) => cmd_cross(args),
            AnalyzeCommand::Bin(args) => cmd_bin(args),
            AnalyzeCommand::Dist(args) => cmd_dist(args),
        },
        Command::Synth(args) => cmd_synth(args),
    }
}

fn load_named_manifest(path: &Path, name_override: Option<&str>) -> Result<DatasetManifest> {
    let mut manifest =
        load_manifest(path).with_context(|| format!("loading manifest {}", path.display()))?;
    if let Some(name) = name_override {
        manifest.dataset_name = name.to_string();
    }
    Ok(manifest)
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let manifest = load_named_manifest(&args.manifest, args.dataset_name.as_deref())?;
    match args.metric {
        MetricArg::Ita => Err(usage("ITA has no training component")),
        MetricArg::Rsr => {
            let model = fit_rsr_on_manifest(&manifest, args.gray_world, &args.common.patch())?;
            model.save(&args.model_out)?;
            println!(
                "fit rsr on {} ({} samples): direction [{:.6}, {:.6}, {:.6}], sign {}, \
                 gray-world {}",
                manifest.dataset_name,
                manifest.samples.len(),
                model.direction[0],
                model.direction[1],
                model.direction[2],
                model.sign,
                model.normalization_applied,
            );
            println!("model written to {}", args.model_out.display());
            Ok(())
        }
        MetricArg::Sreds => {
            let sreds_opts = SredsOptions {
                max_anchors: args.max_anchors,
                gamma: args.gamma,
                seed: args.common.seed,
            };
            let model = fit_sreds_on_manifest(
                &manifest,
                &args.common.nnmf(),
                &sreds_opts,
                &args.common.patch(),
            )?;
            model.save(&args.model_out)?;
            println!(
                "fit sreds on {} ({} samples): {} anchors, gamma {:.6}, sign {}, seed {}",
                manifest.dataset_name,
                manifest.samples.len(),
                model.anchors.len(),
                model.gamma,
                model.sign,
                model.seed,
            );
            println!("model written to {}", args.model_out.display());
            Ok(())
        }
    }
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let manifest = load_named_manifest(&args.manifest, args.dataset_name.as_deref())?;
    let rsr_model;
    let sreds_model;
    let job = match args.metric {
        MetricArg::Ita => {
            if args.model.is_some() {
                return Err(usage("ITA takes no model; drop --model"));
            }
            MetricJob::Ita { kernel: args.ita_kernel }
        }
        MetricArg::Rsr => {
            let path = args
                .model
                .as_ref()
                .ok_or_else(|| usage("scoring rsr requires --model"))?;
            rsr_model = RsrModel::load(path)?;
            MetricJob::Rsr { model: &rsr_model }
        }
        MetricArg::Sreds => {
            let path = args
                .model
                .as_ref()
                .ok_or_else(|| usage("scoring sreds requires --model"))?;
            sreds_model = SredsModel::load(path)?;
            MetricJob::Sreds {
                model: &sreds_model,
                nnmf: args.common.nnmf(),
            }
        }
    };
    let table = score_manifest(&manifest, &job, &args.common.patch(), args.max_failures)?;
    table.save_csv(&args.out)?;
    let failed = table.rows.iter().filter(|r| r.score.is_none()).count();
    println!(
        "scored {} samples of {} with {} ({failed} NA) -> {}",
        table.rows.len(),
        manifest.dataset_name,
        Metric::from(args.metric),
        args.out.display()
    );
    Ok(())
}

fn cmd_variability(args: VariabilityArgs) -> Result<()> {
    let mut report = VariabilityReport::default();
    for path in &args.scores {
        let table = ScoreTable::load_csv(path)
            .with_context(|| format!("reading scores {}", path.display()))?;
        for dataset in table.datasets() {
            for metric in table.metrics() {
                let pairs = table.subject_scores(&dataset, metric);
                if pairs.is_empty() {
                    continue;
                }
                let v = skintone::analysis::intra_subject_variability(&pairs, args.normalize)?;
                report.entries.push(VariabilityEntry {
                    train: dataset.clone(),
                    test: dataset.clone(),
                    metric,
                    value: Some(v.mean_sd),
                    subjects: v.subjects,
                    excluded_singletons: v.excluded_singletons,
                    normalized: args.normalize,
                });
            }
        }
    }
    if report.entries.is_empty() {
        bail!("no scored rows found in the input CSVs");
    }
    let file = std::fs::File::create(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    report.write_long_csv(std::io::BufWriter::new(file))?;
    for e in &report.entries {
        println!(
            "{} {}: mean intra-subject sd {:.6} over {} subjects ({} singletons excluded)",
            e.test,
            e.metric,
            e.value.unwrap(),
            e.subjects,
            e.excluded_singletons
        );
    }
    Ok(())
}

fn parse_pair(raw: &str, what: &str) -> Result<(String, PathBuf)> {
    let (name, path) = raw
        .split_once('=')
        .ok_or_else(|| usage(format!("{what} must be name=path, got {raw:?}")))?;
    if name.is_empty() {
        return Err(usage(format!("{what} has an empty name: {raw:?}")));
    }
    Ok((name.to_string(), PathBuf::from(path)))
}

fn cmd_cross(args: CrossArgs) -> Result<()> {
    let metrics: Vec<Metric> = args.metrics.iter().map(|&m| m.into()).collect();

    let mut tests = Vec::new();
    for raw in &args.tests {
        let (name, path) = parse_pair(raw, "--test")?;
        tests.push(load_named_manifest(&path, Some(&name))?);
    }

    let mut sreds_models: BTreeMap<String, SredsModel> = BTreeMap::new();
    for raw in &args.sreds_models {
        let (name, path) = parse_pair(raw, "--sreds-model")?;
        sreds_models.insert(name, SredsModel::load(&path)?);
    }
    let mut rsr_models: BTreeMap<String, RsrModel> = BTreeMap::new();
    for raw in &args.rsr_models {
        let (name, path) = parse_pair(raw, "--rsr-model")?;
        rsr_models.insert(name, RsrModel::load(&path)?);
    }

    let config = CrossConfig {
        metrics,
        sreds_models,
        rsr_models,
        normalize: args.normalize,
        ita_kernel: args.ita_kernel,
        nnmf: args.common.nnmf(),
        patch: args.common.patch(),
        max_failures: args.max_failures,
    };
    let refs: Vec<&DatasetManifest> = tests.iter().collect();
    let report = cross_dataset_matrix(&config, &refs)?;
    let file = std::fs::File::create(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    report.write_cross_csv(std::io::BufWriter::new(file))?;
    println!(
        "cross matrix with {} cells -> {}",
        report.entries.len(),
        args.out.display()
    );
    Ok(())
}

fn parse_strategy(raw: &str) -> Result<BinStrategy> {
    if raw == "median" {
        return Ok(BinStrategy::Median);
    }
    if let Some(k) = raw.strip_prefix("quantile:") {
        let k: usize = k
            .parse()
            .map_err(|_| usage(format!("bad quantile count in {raw:?}")))?;
        return Ok(BinStrategy::Quantile(k));
    }
    Err(usage(format!(
        "unknown strategy {raw:?}; expected median or quantile:K"
    )))
}

fn cmd_bin(args: BinArgs) -> Result<()> {
    let strategy = parse_strategy(&args.strategy)?;
    let table = ScoreTable::load_csv(&args.scores)?;
    let file = std::fs::File::create(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(["dataset", "metric", "subject_id", "subject_score", "label"])?;
    let mut wrote = false;
    for dataset in table.datasets() {
        for metric in table.metrics() {
            // subject-level score: mean over the subject's samples
            let mut by_subject: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for (subject, score) in table.subject_scores(&dataset, metric) {
                by_subject.entry(subject).or_default().push(score);
            }
            if by_subject.is_empty() {
                continue;
            }
            let subjects: Vec<&str> = by_subject.keys().copied().collect();
            let scores: Vec<f64> = by_subject
                .values()
                .map(|v| v.iter().sum::<f64>() / v.len() as f64)
                .collect();
            let labels = bin_scores(&scores, strategy)?;
            for ((subject, score), label) in
                subjects.iter().zip(scores.iter()).zip(labels.iter())
            {
                w.write_record([
                    dataset.as_str(),
                    metric.name(),
                    subject,
                    &format!("{score:.8e}"),
                    label,
                ])?;
                wrote = true;
            }
        }
    }
    w.flush()?;
    if !wrote {
        bail!("no scored rows to bin");
    }
    println!("bin labels -> {}", args.out.display());
    Ok(())
}

fn cmd_dist(args: DistArgs) -> Result<()> {
    let table = ScoreTable::load_csv(&args.scores)?;
    let manifest = load_manifest(&args.manifest)?;
    let mut labels: std::collections::HashMap<(String, String), String> = Default::default();
    for s in &manifest.samples {
        if let Some(g) = &s.group_label {
            labels.insert((s.subject_id.clone(), s.sample_id.clone()), g.clone());
        }
    }
    let file = std::fs::File::create(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record([
        "dataset", "metric", "group", "bin_index", "bin_start", "bin_end", "count",
    ])?;
    let mut wrote = false;
    for dataset in table.datasets() {
        for metric in table.metrics() {
            let slice: Vec<skintone::analysis::ScoreRecord> = table
                .rows
                .iter()
                .filter(|r| r.dataset == dataset && r.metric == metric)
                .cloned()
                .collect();
            let sub = ScoreTable { rows: slice, ..Default::default() };
            let rows = skintone::analysis::labeled_scores(&sub, &labels);
            if rows.is_empty() {
                continue;
            }
            for h in group_distribution(&rows, args.bins)? {
                for (i, &count) in h.counts.iter().enumerate() {
                    w.write_record([
                        dataset.as_str(),
                        metric.name(),
                        h.group.as_str(),
                        &i.to_string(),
                        &format!("{:.8e}", h.edges[i]),
                        &format!("{:.8e}", h.edges[i + 1]),
                        &count.to_string(),
                    ])?;
                    wrote = true;
                }
            }
        }
    }
    w.flush()?;
    if !wrote {
        bail!("no labeled scored rows; check the manifest's group_label fields");
    }
    println!("distributions -> {}", args.out.display());
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => SynthSpec::load(path)?,
        None => SynthSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let manifest = generate_dataset(&spec, &args.out_dir)?;
    println!(
        "generated {} samples ({} subjects x {}) under {}",
        manifest.samples.len(),
        spec.n_subjects,
        spec.samples_per_subject,
        args.out_dir.display()
    );
    Ok(())
}
