use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use roomgeo::dataset::{generate, BetaMode, DatasetFile, DatasetSpec, Manifest, RirInput, Split};
use roomgeo::estimator::{train, GeometryModel, TrainConfig, INPUT_LEN};
use roomgeo::metrics::{constant_predictor_mse, evaluate, runtime_bench, write_reports, EvalReport, LearningCheck, RoomGroups};
use roomgeo::nn::AdamConfig;

mod config;

use config::{pick, ModeArg, PresetArg, RunConfig, SplitArg};

/// Room geometry estimation from simulated impulse responses.
#[derive(Parser)]
#[command(name = "roomgeo", version, propagate_version = true)]
struct Cli {
    /// TOML file with [gen], [train], [eval] and [bench] defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset file and its JSON manifest.
    Gen(GenArgs),
    /// Train a model with early stopping.
    Train(TrainArgs),
    /// Evaluate a model and write the CSV reports.
    Eval(EvalArgs),
    /// Estimate room dimensions from a dataset file or raw samples.
    Estimate(EstimateArgs),
    /// Time single-response estimates.
    Bench(BenchArgs),
    /// Generate, train, evaluate and benchmark at desk scale with fixed seeds.
    ReproDesk(ReproArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Size preset for room and response counts.
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// Which split of the preset to size.
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    /// Number of rooms (overrides the preset).
    #[arg(long)]
    rooms: Option<usize>,
    /// Responses per room (overrides the preset).
    #[arg(long)]
    rirs_per_room: Option<usize>,
    /// Shared walls (fixed) or per-room RT60 (varying).
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output dataset path; the manifest goes to PATH.json.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_name = "PATH")]
    train: PathBuf,
    #[arg(long, value_name = "PATH")]
    val: PathBuf,
    /// Maximum number of epochs [default: 2000].
    #[arg(long)]
    epochs: Option<usize>,
    /// Epochs without validation improvement before stopping [default: 30].
    #[arg(long)]
    patience: Option<usize>,
    /// [default: 50]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate [default: 0.001].
    #[arg(long)]
    lr: Option<f64>,
    /// Seeds weight initialization and epoch shuffles [default: 1].
    #[arg(long)]
    seed: Option<u64>,
    /// Output weights file.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Directory for loss_history.csv [default: next to --out].
    #[arg(long, value_name = "DIR")]
    report: Option<PathBuf>,
    /// Print one line per epoch.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Estimates averaged per room; repeatable [default: every size the data allows].
    #[arg(long, value_parser = ["1", "4", "8", "16"])]
    group_size: Vec<String>,
    /// Directory for report_mse.csv, report_hist.csv and report_rooms.csv.
    #[arg(long, value_name = "DIR")]
    report: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    /// Dataset file or 4096 little-endian f32 samples.
    #[arg(long, value_name = "FILE")]
    rir: PathBuf,
    /// Also print the mean over all responses in the file.
    #[arg(long)]
    average: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    /// [default: 3000]
    #[arg(long)]
    iters: Option<usize>,
    /// Seeds the benchmark input [default: 1].
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReproArgs {
    /// Working directory for datasets, weights and reports.
    #[arg(long, value_name = "DIR")]
    work: PathBuf,
    /// Maximum training epochs [default: 2000].
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<roomgeo::Error> for Failure {
    fn from(e: roomgeo::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(Failure::Usage)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Gen(a) => cmd_gen(a, &cfg),
        Command::Train(a) => cmd_train(a, &cfg),
        Command::Eval(a) => cmd_eval(a, &cfg),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Bench(a) => cmd_bench(a, &cfg),
        Command::ReproDesk(a) => cmd_repro(a),
    }
}

fn gen_spec(a: &GenArgs, cfg: &RunConfig) -> DatasetSpec {
    let c = &cfg.gen;
    let mode = match pick(a.mode, c.mode, ModeArg::Varying) {
        ModeArg::Fixed => BetaMode::FixedBeta,
        ModeArg::Varying => BetaMode::VaryingRt60,
    };
    let split = match pick(a.split, c.split, SplitArg::Train) {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
        SplitArg::Test => Split::Test,
    };
    let seed = pick(a.seed, c.seed, 1);
    let mut spec = match pick(a.preset, c.preset, PresetArg::Desk) {
        PresetArg::Desk => DatasetSpec::desk(split, mode, seed),
        PresetArg::Paper => DatasetSpec::paper(split, mode, seed),
    };
    spec.n_rooms = pick(a.rooms, c.rooms, spec.n_rooms);
    spec.rirs_per_room = pick(a.rirs_per_room, c.rirs_per_room, spec.rirs_per_room);
    spec
}

fn write_dataset(spec: &DatasetSpec, out: &Path) -> Result<Manifest, Failure> {
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let file = generate(spec)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(file.save(out, Some(spec))?)
}

fn cmd_gen(a: GenArgs, cfg: &RunConfig) -> CmdResult {
    let spec = gen_spec(&a, cfg);
    let manifest = write_dataset(&spec, &a.out)?;
    println!(
        "wrote {} records to {} (sha256 {})",
        manifest.record_count,
        a.out.display(),
        manifest.sha256
    );
    Ok(())
}

fn load_dataset(path: &Path) -> Result<DatasetFile, Failure> {
    DatasetFile::load(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<GeometryModel, Failure> {
    GeometryModel::load(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn train_config(a: &TrainArgs, cfg: &RunConfig) -> Result<TrainConfig, Failure> {
    let c = &cfg.train;
    let d = TrainConfig::default();
    let out = TrainConfig {
        epochs: pick(a.epochs, c.epochs, d.epochs),
        batch_size: pick(a.batch_size, c.batch_size, d.batch_size),
        patience: pick(a.patience, c.patience, d.patience),
        adam: AdamConfig {
            lr: pick(a.lr, c.lr, d.adam.lr),
            ..d.adam
        },
        seed: pick(a.seed, c.seed, d.seed),
    };
    if out.patience == 0 || out.batch_size == 0 || !(out.adam.lr > 0.0) {
        return Err(Failure::Usage("patience, batch size and learning rate must be positive".into()));
    }
    Ok(out)
}

fn report_dir(report: Option<&Path>, out: &Path) -> PathBuf {
    report.map(Path::to_path_buf).unwrap_or_else(|| match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    })
}

fn cmd_train(a: TrainArgs, cfg: &RunConfig) -> CmdResult {
    let tc = train_config(&a, cfg)?;
    let train_set = load_dataset(&a.train)?;
    let val_set = load_dataset(&a.val)?;
    let dir = report_dir(a.report.as_deref(), &a.out);
    run_training(&train_set, &val_set, &tc, &a.out, &dir, a.verbose)?;
    Ok(())
}

fn run_training(
    train_set: &DatasetFile,
    val_set: &DatasetFile,
    tc: &TrainConfig,
    out: &Path,
    dir: &Path,
    verbose: bool,
) -> Result<GeometryModel, Failure> {
    let mut model = GeometryModel::new(tc.seed);
    let outcome = train(&mut model, train_set, val_set, tc, |r| {
        if verbose {
            println!("epoch {:>4}  train {:.6}  val {:.6}", r.epoch, r.train_mse, r.val_mse);
        }
    })?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("loss_history.csv"), outcome.history_csv())?;
    model.save(out)?;
    println!(
        "stopped at epoch {}{}; best epoch {} with validation mse {:.6}",
        outcome.last_epoch(),
        if outcome.stopped_early { " (early stop)" } else { "" },
        outcome.best_epoch,
        outcome.best_val_mse
    );
    Ok(model)
}

fn print_report(r: &EvalReport) {
    let s = &r.stats;
    println!("N = {} ({} estimates)", r.group_size, s.count);
    println!("  mse        {:.6} {:.6} {:.6}", s.mse[0], s.mse[1], s.mse[2]);
    println!("  bias       {:+.6} {:+.6} {:+.6}", s.bias[0], s.bias[1], s.bias[2]);
    println!("  variance   {:.6} {:.6} {:.6}", s.variance[0], s.variance[1], s.variance[2]);
    println!("  median_abs {:.6} {:.6} {:.6}", s.median_abs[0], s.median_abs[1], s.median_abs[2]);
    if r.unsorted_outputs > 0 {
        let t = &r.sorted_stats;
        println!(
            "  sorted mse {:.6} {:.6} {:.6} ({} outputs were not ascending)",
            t.mse[0], t.mse[1], t.mse[2], r.unsorted_outputs
        );
    }
}

fn cmd_eval(a: EvalArgs, cfg: &RunConfig) -> CmdResult {
    let model = load_model(&a.model)?;
    let data = load_dataset(&a.data)?;
    let sizes: Vec<usize> = if !a.group_size.is_empty() {
        a.group_size.iter().map(|s| s.parse().expect("validated by clap")).collect()
    } else if let Some(sizes) = &cfg.eval.group_sizes {
        sizes.clone()
    } else {
        RoomGroups::from_file(&data).valid_group_sizes()
    };
    let reports = evaluate(&model, &data, &sizes)?;
    write_reports(&a.report, &reports)?;
    for r in &reports {
        print_report(r);
    }
    Ok(())
}

fn cmd_estimate(a: EstimateArgs) -> CmdResult {
    let model = load_model(&a.model)?;
    let bytes = fs::read(&a.rir).map_err(|e| Failure::Runtime(format!("{}: {e}", a.rir.display())))?;
    let responses = RirInput::detect(&bytes, INPUT_LEN)?.responses();
    if responses.is_empty() {
        return Err(Failure::Runtime(format!("{}: no responses", a.rir.display())));
    }
    for rir in &responses {
        let e = model.estimate(rir)?;
        println!("{:.6} {:.6} {:.6}", e[0], e[1], e[2]);
        let mut sorted = e;
        sorted.sort_by(f64::total_cmp);
        if sorted != e {
            println!("sorted: {:.6} {:.6} {:.6}", sorted[0], sorted[1], sorted[2]);
        }
    }
    if a.average {
        let m = model.estimate_averaged(&responses)?;
        println!("average: {:.6} {:.6} {:.6}", m[0], m[1], m[2]);
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs, cfg: &RunConfig) -> CmdResult {
    let model = load_model(&a.model)?;
    let iters = pick(a.iters, cfg.bench.iters, 3000);
    let seed = pick(a.seed, cfg.bench.seed, 1);
    let b = runtime_bench(&model, iters, seed)?;
    println!(
        "{} iterations: mean {:.4} ms, median {:.4} ms, p99 {:.4} ms",
        b.iterations, b.mean_ms, b.median_ms, b.p99_ms
    );
    Ok(())
}

/// Reuses `path` when its manifest records exactly `spec`.
fn dataset_for(spec: &DatasetSpec, path: &Path) -> Result<DatasetFile, Failure> {
    if let Ok(m) = Manifest::load(roomgeo::dataset::manifest_path(path)) {
        if m.spec.as_ref() == Some(spec) {
            if let Ok(f) = DatasetFile::load(path) {
                println!("reusing {}", path.display());
                return Ok(f);
            }
        }
    }
    println!("generating {} ({} records)", path.display(), spec.record_count());
    write_dataset(spec, path)?;
    load_dataset(path)
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn cmd_repro(a: ReproArgs) -> CmdResult {
    let work = &a.work;
    fs::create_dir_all(work)?;
    let mode = BetaMode::VaryingRt60;
    let train_set = dataset_for(&DatasetSpec::desk(Split::Train, mode, a.seed), &work.join("train.rird"))?;
    let val_set = dataset_for(&DatasetSpec::desk(Split::Val, mode, a.seed + 1), &work.join("val.rird"))?;
    let test_set = dataset_for(&DatasetSpec::desk(Split::Test, mode, a.seed + 2), &work.join("test.rird"))?;

    let tc = TrainConfig {
        epochs: a.epochs.unwrap_or(TrainConfig::default().epochs),
        seed: a.seed,
        ..TrainConfig::default()
    };
    let model = run_training(&train_set, &val_set, &tc, &work.join("model.rgwt"), work, true)?;

    let reports = evaluate(&model, &test_set, &[1, 4])?;
    write_reports(work, &reports)?;
    for r in &reports {
        print_report(r);
    }
    let check = LearningCheck::new(constant_predictor_mse(&train_set, &test_set)?, &reports[0], &reports[1]);
    let bench = runtime_bench(&model, 3000, a.seed)?;

    let params = model.count_parameters();
    let r = check.mse_ratio();
    let v = check.variance_ratio();
    let lines = [
        format!("{} parameters: {params} (expected 178413)", verdict(params == 178_413)),
        format!(
            "{} held-out mse / constant predictor: {:.3} {:.3} {:.3} (limit 0.5)",
            verdict(check.beats_baseline(0.5)),
            r[0],
            r[1],
            r[2]
        ),
        format!(
            "{} variance N=4 / N=1: {:.3} {:.3} {:.3} (limit 1.05)",
            verdict(check.variance_reduced(1.05)),
            v[0],
            v[1],
            v[2]
        ),
        format!("{} mean latency {:.4} ms (limit 10 ms)", verdict(bench.mean_ms < 10.0), bench.mean_ms),
    ];
    let text = lines.join("\n") + "\n";
    print!("{text}");
    fs::write(work.join("acceptance.txt"), text)?;
    Ok(())
}
