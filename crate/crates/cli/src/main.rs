//! Command-line pipeline: data generation, translation training, dataset
//! adaptation, downstream segmentation, evaluation, the ablation ladder,
//! and plotting.
//!
//! Every subcommand resolves its effective configuration as
//! `defaults <- config file <- flags`, writes it into the run directory
//! before heavy work starts, and exits non-zero with a single
//! machine-parsable `error[category]: message` line on failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use semadapt::data::{load_catalog, load_dataset};
use semadapt::plot::{plot_ablation_bars, plot_loss_curves};
use semadapt::segeval::{
    evaluate, run_ablation, train_segmenter, AblationPlan, SegTrainConfig, TrainedSegmenter,
};
use semadapt::toyworld::{
    default_source_style, default_target_style, generate_dataset, DomainStyle, SceneSpec,
};
use semadapt::trainer::{
    adapt_dataset, read_run_log, train, AblationArm, Direction, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "semadapt",
    about = "Semantics-aware domain translation pipeline",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON config file with data/gan/seg/ablate sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory for all outputs (default: $SEMADAPT_RUN_ROOT/<command>-<time>).
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Seed override applied to the active section.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural toy-world dataset.
    GenerateData(GenerateDataArgs),
    /// Train the translation system.
    TrainGan(TrainGanArgs),
    /// Translate one domain of a dataset through a trained generator.
    Adapt(AdaptArgs),
    /// Train the downstream segmenter on a dataset's source split.
    TrainSeg(TrainSegArgs),
    /// Evaluate a segmenter on a dataset's target_eval split.
    Evaluate(EvaluateArgs),
    /// Run the ablation ladder end to end.
    Ablate(AblateArgs),
    /// Render loss curves and ablation bars from run artifacts.
    Plot(PlotArgs),
}

#[derive(Args)]
struct GenerateDataArgs {
    #[command(flatten)]
    common: Common,
    /// Output dataset root (default: <run-dir>/dataset).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long)]
    n_source: Option<usize>,
    #[arg(long)]
    n_target: Option<usize>,
    #[arg(long)]
    n_eval: Option<usize>,
    #[arg(long)]
    skew: Option<f64>,
}

#[derive(Args)]
struct TrainGanArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset root to train on.
    #[arg(long)]
    dataset: PathBuf,
    /// Resume from an existing snapshot.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    crop_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    arm: Option<String>,
    #[arg(long)]
    lambda_sem: Option<f64>,
    #[arg(long)]
    lambda_rec: Option<f64>,
    /// Use the saturating generator objective.
    #[arg(long)]
    saturating: bool,
    #[arg(long)]
    log_interval: Option<u64>,
    #[arg(long)]
    snapshot_interval: Option<u64>,
    #[arg(long)]
    disc_steps_per_gen: Option<u32>,
    #[arg(long)]
    adam_beta1: Option<f64>,
    #[arg(long)]
    adam_beta2: Option<f64>,
    #[arg(long)]
    gen_base: Option<usize>,
    #[arg(long)]
    gen_res_blocks: Option<usize>,
    #[arg(long)]
    gen_downsamples: Option<usize>,
    #[arg(long)]
    gen_residual_scale: Option<f64>,
    #[arg(long)]
    disc_base: Option<usize>,
    #[arg(long)]
    disc_stages: Option<usize>,
}

#[derive(Args)]
struct AdaptArgs {
    #[command(flatten)]
    common: Common,
    /// Trained system snapshot.
    #[arg(long)]
    snapshot: PathBuf,
    /// Dataset root to translate.
    #[arg(long)]
    dataset: PathBuf,
    /// Output dataset root (default: <run-dir>/adapted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// s2t (source to target) or t2s.
    #[arg(long, default_value = "s2t")]
    direction: String,
}

#[derive(Args)]
struct TrainSegArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset root; the labeled source split is the training set.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    crop_size: Option<usize>,
    #[arg(long)]
    log_interval: Option<u64>,
    #[arg(long)]
    seg_base: Option<usize>,
    #[arg(long)]
    seg_stages: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    /// Trained segmenter snapshot.
    #[arg(long)]
    segmenter: PathBuf,
    /// Dataset root with a target_eval split.
    #[arg(long)]
    dataset: PathBuf,
    /// Label recorded in the report.
    #[arg(long, default_value = "eval")]
    arm: String,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset root with a target_eval split.
    #[arg(long)]
    dataset: PathBuf,
    /// Comma-separated arms, e.g. a,d,e.
    #[arg(long)]
    arms: Option<String>,
    /// Either a count (3 -> seeds 0,1,2) or a comma-separated list.
    #[arg(long)]
    seeds: Option<String>,
    /// Parallel cells.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    gan_steps: Option<u64>,
    #[arg(long)]
    gan_crop_size: Option<usize>,
    #[arg(long)]
    gan_batch_size: Option<usize>,
    #[arg(long)]
    seg_iterations: Option<u64>,
    #[arg(long)]
    seg_crop_size: Option<usize>,
    #[arg(long)]
    seg_batch_size: Option<usize>,
}

#[derive(Args)]
struct PlotArgs {
    #[command(flatten)]
    common: Common,
    /// Training log to plot (default: <run-dir>/logs/train.jsonl if present).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Ablation report to plot (default: <run-dir>/ablation.json if present).
    #[arg(long)]
    report: Option<PathBuf>,
}

// ---- config file ----

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
struct FileConfig {
    data: DataSection,
    gan: TrainConfig,
    seg: SegTrainConfig,
    ablate: AblateSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct DataSection {
    scene: SceneSpec,
    source_style: Option<DomainStyle>,
    target_style: Option<DomainStyle>,
    n_source: usize,
    n_target: usize,
    n_eval: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            scene: SceneSpec::default(),
            source_style: None,
            target_style: None,
            n_source: 200,
            n_target: 200,
            n_eval: 50,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct AblateSection {
    arms: Vec<String>,
    seeds: Vec<u64>,
    jobs: usize,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection { arms: vec!["a".into(), "e".into()], seeds: vec![0, 1, 2], jobs: 1 }
    }
}

struct CliError {
    category: &'static str,
    message: String,
}

impl CliError {
    fn new(category: &'static str, message: impl Into<String>) -> Self {
        CliError { category, message: message.into() }
    }
}

impl From<semadapt::Error> for CliError {
    fn from(e: semadapt::Error) -> Self {
        CliError { category: e.category(), message: e.to_string() }
    }
}

type CliResult<T> = Result<T, CliError>;

fn load_file_config(common: &Common) -> CliResult<FileConfig> {
    match &common.config {
        None => Ok(FileConfig::default()),
        Some(path) => {
            if !path.is_file() {
                return Err(CliError::new(
                    "config-not-found",
                    format!("config file {} does not exist", path.display()),
                ));
            }
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::new("invalid-config", format!("{}: {e}", path.display())))
        }
    }
}

fn resolve_run_dir(common: &Common, command: &str) -> PathBuf {
    if let Some(dir) = &common.run_dir {
        return dir.clone();
    }
    let root = std::env::var("SEMADAPT_RUN_ROOT").unwrap_or_else(|_| "runs".into());
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Path::new(&root).join(format!("{command}-{stamp}"))
}

/// Record the merged effective configuration before any heavy work.
fn write_invocation(run_dir: &Path, command: &str, effective: &serde_json::Value) -> CliResult<()> {
    std::fs::create_dir_all(run_dir)
        .map_err(|e| CliError::new("io", format!("{}: {e}", run_dir.display())))?;
    let doc = serde_json::json!({
        "command": command,
        "package_version": env!("CARGO_PKG_VERSION"),
        "effective_config": effective,
        "unix_ms": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0),
    });
    std::fs::write(
        run_dir.join("invocation.json"),
        serde_json::to_string_pretty(&doc).expect("invocation serializes"),
    )
    .map_err(|e| CliError::new("io", e.to_string()))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    return ExitCode::SUCCESS;
                }
                ErrorKind::UnknownArgument => {
                    eprintln!("error[unknown-flag]: {}", first_line(&e.to_string()));
                    return ExitCode::from(2);
                }
                _ => {
                    eprintln!("error[invalid-args]: {}", first_line(&e.to_string()));
                    return ExitCode::from(2);
                }
            }
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category, first_line(&e.message));
            ExitCode::FAILURE
        }
    }
}

fn first_line(s: &str) -> String {
    s.lines().next().unwrap_or("").to_string()
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenerateData(args) => cmd_generate_data(args),
        Command::TrainGan(args) => cmd_train_gan(args),
        Command::Adapt(args) => cmd_adapt(args),
        Command::TrainSeg(args) => cmd_train_seg(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Plot(args) => cmd_plot(args),
    }
}

fn cmd_generate_data(args: GenerateDataArgs) -> CliResult<()> {
    let mut file = load_file_config(&args.common)?;
    let run_dir = resolve_run_dir(&args.common, "generate-data");
    let section = &mut file.data;
    if let Some(v) = args.image_size {
        section.scene.image_size = v;
    }
    if let Some(v) = args.num_classes {
        section.scene.num_classes = v;
    }
    if let Some(v) = args.skew {
        section.scene.class_frequency_skew = v;
    }
    if let Some(v) = args.common.seed {
        section.scene.seed = v;
    }
    if let Some(v) = args.n_source {
        section.n_source = v;
    }
    if let Some(v) = args.n_target {
        section.n_target = v;
    }
    if let Some(v) = args.n_eval {
        section.n_eval = v;
    }
    let out = args.out.unwrap_or_else(|| run_dir.join("dataset"));
    let source_style = section
        .source_style
        .clone()
        .unwrap_or_else(|| default_source_style(section.scene.num_classes));
    let target_style = section
        .target_style
        .clone()
        .unwrap_or_else(|| default_target_style(section.scene.num_classes));

    write_invocation(
        &run_dir,
        "generate-data",
        &serde_json::json!({
            "data": {
                "scene": section.scene,
                "source_style": source_style,
                "target_style": target_style,
                "n_source": section.n_source,
                "n_target": section.n_target,
                "n_eval": section.n_eval,
            },
            "out": out,
        }),
    )?;

    let dataset = generate_dataset(
        &section.scene,
        &source_style,
        &target_style,
        section.n_source,
        section.n_target,
        section.n_eval,
        &out,
    )?;
    println!(
        "generated {} source / {} target / {} eval samples at {}",
        dataset.source.len(),
        dataset.target.len(),
        dataset.target_eval.as_ref().map(|e| e.len()).unwrap_or(0),
        out.display()
    );
    Ok(())
}

fn merged_gan_config(file: &FileConfig, args: &TrainGanArgs) -> CliResult<TrainConfig> {
    let mut config = file.gan.clone();
    if let Some(v) = args.common.seed {
        config.seed = v;
    }
    if let Some(v) = args.steps {
        config.total_steps = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.crop_size {
        config.crop_size = v;
    }
    if let Some(v) = args.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = &args.arm {
        config.ablation_arm = AblationArm::from_str(v).map_err(CliError::from)?;
    }
    if let Some(v) = args.lambda_sem {
        config.weights.lambda_sem = v;
    }
    if let Some(v) = args.lambda_rec {
        config.weights.lambda_rec = v;
    }
    if args.saturating {
        config.saturating_adv = true;
    }
    if let Some(v) = args.log_interval {
        config.log_interval = v;
    }
    if let Some(v) = args.snapshot_interval {
        config.snapshot_interval = v;
    }
    if let Some(v) = args.disc_steps_per_gen {
        config.disc_steps_per_gen = v;
    }
    if let Some(v) = args.adam_beta1 {
        config.adam_beta1 = v;
    }
    if let Some(v) = args.adam_beta2 {
        config.adam_beta2 = v;
    }
    if let Some(v) = args.gen_base {
        config.generator.base_channels = v;
    }
    if let Some(v) = args.gen_res_blocks {
        config.generator.num_residual_blocks = v;
    }
    if let Some(v) = args.gen_downsamples {
        config.generator.downsampling_stages = v;
    }
    if let Some(v) = args.gen_residual_scale {
        config.generator.residual_scale = v;
    }
    if let Some(v) = args.disc_base {
        config.discriminator.base_channels = v;
    }
    if let Some(v) = args.disc_stages {
        config.discriminator.encoder_stages = v;
    }
    Ok(config)
}

fn cmd_train_gan(args: TrainGanArgs) -> CliResult<()> {
    let file = load_file_config(&args.common)?;
    let run_dir = resolve_run_dir(&args.common, "train-gan");
    if !args.dataset.is_dir() {
        return Err(CliError::new(
            "missing-input",
            format!("dataset root {} does not exist", args.dataset.display()),
        ));
    }
    let catalog = load_catalog(&args.dataset)?;
    let dataset = load_dataset(&args.dataset, &catalog)?;
    let mut config = merged_gan_config(&file, &args)?;
    config.discriminator.num_classes = catalog.num_classes();
    write_invocation(
        &run_dir,
        "train-gan",
        &serde_json::json!({ "gan": config, "dataset": args.dataset }),
    )?;
    let outcome = train::<f32>(&config, &dataset, &run_dir, args.resume.as_deref())?;
    println!(
        "trained {} steps; snapshot at {}",
        outcome.steps_run,
        outcome.snapshot_path.display()
    );
    Ok(())
}

fn cmd_adapt(args: AdaptArgs) -> CliResult<()> {
    let run_dir = resolve_run_dir(&args.common, "adapt");
    let direction = Direction::from_str(&args.direction).map_err(CliError::from)?;
    let out = args.out.unwrap_or_else(|| run_dir.join("adapted"));
    if !args.snapshot.is_file() {
        return Err(CliError::new(
            "missing-input",
            format!("snapshot {} does not exist", args.snapshot.display()),
        ));
    }
    if !args.dataset.is_dir() {
        return Err(CliError::new(
            "missing-input",
            format!("dataset root {} does not exist", args.dataset.display()),
        ));
    }
    write_invocation(
        &run_dir,
        "adapt",
        &serde_json::json!({
            "snapshot": args.snapshot,
            "dataset": args.dataset,
            "out": out,
            "direction": direction.to_string(),
        }),
    )?;
    let n = adapt_dataset(&args.snapshot, &args.dataset, &out, direction)?;
    println!("translated {n} images into {}", out.display());
    Ok(())
}

fn merged_seg_config(file: &FileConfig, args: &TrainSegArgs) -> SegTrainConfig {
    let mut config = file.seg.clone();
    if let Some(v) = args.common.seed {
        config.seed = v;
    }
    if let Some(v) = args.iterations {
        config.iterations = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = args.crop_size {
        config.crop_size = v;
    }
    if let Some(v) = args.log_interval {
        config.log_interval = v;
    }
    if let Some(v) = args.seg_base {
        config.spec.base_channels = v;
    }
    if let Some(v) = args.seg_stages {
        config.spec.encoder_stages = v;
    }
    config
}

fn cmd_train_seg(args: TrainSegArgs) -> CliResult<()> {
    let file = load_file_config(&args.common)?;
    let run_dir = resolve_run_dir(&args.common, "train-seg");
    if !args.dataset.is_dir() {
        return Err(CliError::new(
            "missing-input",
            format!("dataset root {} does not exist", args.dataset.display()),
        ));
    }
    let catalog = load_catalog(&args.dataset)?;
    let dataset = load_dataset(&args.dataset, &catalog)?;
    let mut config = merged_seg_config(&file, &args);
    config.spec.num_classes = catalog.num_classes();
    write_invocation(
        &run_dir,
        "train-seg",
        &serde_json::json!({ "seg": config, "dataset": args.dataset }),
    )?;
    let segmenter = train_segmenter(
        &dataset.source,
        &config,
        Some(&run_dir.join("logs").join("seg_train.jsonl")),
    )?;
    let out = run_dir.join("segmenter.bin");
    segmenter.save(&out, config.seed, config.iterations)?;
    println!("segmenter saved to {}", out.display());
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> CliResult<()> {
    let run_dir = resolve_run_dir(&args.common, "evaluate");
    if !args.segmenter.is_file() {
        return Err(CliError::new(
            "missing-input",
            format!("segmenter {} does not exist", args.segmenter.display()),
        ));
    }
    let catalog = load_catalog(&args.dataset)?;
    let dataset = load_dataset(&args.dataset, &catalog)?;
    let eval = dataset.target_eval.as_ref().ok_or_else(|| {
        CliError::new("structural", "dataset has no target_eval split to evaluate on")
    })?;
    write_invocation(
        &run_dir,
        "evaluate",
        &serde_json::json!({
            "segmenter": args.segmenter,
            "dataset": args.dataset,
            "arm": args.arm,
        }),
    )?;
    let segmenter = TrainedSegmenter::load(&args.segmenter)?;
    let report = evaluate(&segmenter, eval, &args.arm)?;
    let out = run_dir.join("reports");
    std::fs::create_dir_all(&out).map_err(|e| CliError::new("io", e.to_string()))?;
    std::fs::write(
        out.join("metrics.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )
    .map_err(|e| CliError::new("io", e.to_string()))?;
    let names: Vec<String> = catalog.entries.iter().map(|e| e.name.clone()).collect();
    print!("{}", report.render(&names));
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> CliResult<()> {
    let file = load_file_config(&args.common)?;
    let run_dir = resolve_run_dir(&args.common, "ablate");
    if !args.dataset.is_dir() {
        return Err(CliError::new(
            "missing-input",
            format!("dataset root {} does not exist", args.dataset.display()),
        ));
    }
    let mut section = file.ablate.clone();
    if let Some(arms) = &args.arms {
        section.arms = arms.split(',').map(|s| s.trim().to_string()).collect();
    }
    if let Some(seeds) = &args.seeds {
        section.seeds = parse_seeds(seeds)?;
    }
    if let Some(jobs) = args.jobs {
        section.jobs = jobs;
    }
    let arms: Vec<AblationArm> = section
        .arms
        .iter()
        .map(|s| AblationArm::from_str(s).map_err(CliError::from))
        .collect::<CliResult<_>>()?;
    let mut gan = file.gan.clone();
    let mut seg = file.seg.clone();
    if let Some(v) = args.gan_steps {
        gan.total_steps = v;
    }
    if let Some(v) = args.gan_crop_size {
        gan.crop_size = v;
    }
    if let Some(v) = args.gan_batch_size {
        gan.batch_size = v;
    }
    if let Some(v) = args.seg_iterations {
        seg.iterations = v;
    }
    if let Some(v) = args.seg_crop_size {
        seg.crop_size = v;
    }
    if let Some(v) = args.seg_batch_size {
        seg.batch_size = v;
    }
    let catalog = load_catalog(&args.dataset)?;
    gan.discriminator.num_classes = catalog.num_classes();
    seg.spec.num_classes = catalog.num_classes();

    write_invocation(
        &run_dir,
        "ablate",
        &serde_json::json!({
            "dataset": args.dataset,
            "arms": section.arms,
            "seeds": section.seeds,
            "jobs": section.jobs,
            "gan": gan,
            "seg": seg,
        }),
    )?;
    let plan = AblationPlan { arms, seeds: section.seeds.clone(), gan, seg, jobs: section.jobs };
    let report = run_ablation(&args.dataset, &plan, &run_dir)?;
    print!("{}", report.render_table());
    println!("\nreport written under {}", run_dir.display());
    Ok(())
}

fn parse_seeds(input: &str) -> CliResult<Vec<u64>> {
    let trimmed = input.trim();
    if let Ok(count) = trimmed.parse::<u64>() {
        if !trimmed.contains(',') {
            return Ok((0..count).collect());
        }
    }
    trimmed
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| CliError::new("invalid-args", format!("bad seed `{s}`")))
        })
        .collect()
}

fn cmd_plot(args: PlotArgs) -> CliResult<()> {
    let run_dir = resolve_run_dir(&args.common, "plot");
    let log = args.log.clone().or_else(|| {
        let p = run_dir.join("logs").join("train.jsonl");
        p.is_file().then_some(p)
    });
    let report = args.report.clone().or_else(|| {
        let p = run_dir.join("ablation.json");
        p.is_file().then_some(p)
    });
    if log.is_none() && report.is_none() {
        return Err(CliError::new(
            "missing-input",
            "nothing to plot: pass --log or --report, or point --run-dir at a run",
        ));
    }
    write_invocation(&run_dir, "plot", &serde_json::json!({ "log": log, "report": report }))?;
    let plots = run_dir.join("plots");
    if let Some(log_path) = log {
        let records = read_run_log(&log_path)?;
        let out = plots.join("loss_curves.png");
        plot_loss_curves(&records, &out)?;
        println!("wrote {}", out.display());
    }
    if let Some(report_path) = report {
        let text = std::fs::read_to_string(&report_path)
            .map_err(|e| CliError::new("io", format!("{}: {e}", report_path.display())))?;
        let report: semadapt::segeval::AblationReport =
            serde_json::from_str(&text).map_err(|e| {
                CliError::new("invalid-config", format!("{}: {e}", report_path.display()))
            })?;
        let out = plots.join("ablation.png");
        plot_ablation_bars(&report, &out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}
