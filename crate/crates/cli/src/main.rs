use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::parser::ValueSource;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::Serialize;

use fpd::data::{
    load_csv, resample, synth_series, synth_transient, write_csv, DatasetManifest, FaultKind, Normalization,
    Resolution, SeriesBatch, SourceKind,
};
use fpd::disturbances::{ContaminationMode, Disturbance, DisturbanceKind};
use fpd::hierarchy::{ExtractorStack, Pooling, StackConfig};
use fpd::metrics::{config_hash, InputDigest, MetricName, MetricReport, Pairing, Provenance};
use fpd::nn::gradcheck::run_suite;
use fpd::nn::AdamConfig;
use fpd::pipeline::{evaluate, is_monotone, run_benchmark, train_levels, EvalOptions, Sweep};
use fpd::training::{train_transient, EpochRecord, LevelHistory, TrainConfig};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "fpd", version, about = "Feature-space Frechet distance for power time series")]
struct Cli {
    /// JSON object of flag values; flags given on the command line win
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "snake_case")]
enum Command {
    /// Generate a synthetic dataset (CSV plus manifest)
    Synth(SynthArgs),
    /// Train the extractor stack bottom-up and save it
    Train(TrainArgs),
    /// Compare two datasets through a trained stack
    Evaluate(EvaluateArgs),
    /// Apply a disturbance to a dataset
    Disturb(DisturbArgs),
    /// Sweep disturbance levels and tabulate the metrics
    Benchmark(BenchmarkArgs),
    /// Check analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Serialize)]
struct SynthArgs {
    #[arg(long)]
    kind: SourceKind,
    #[arg(long, default_value_t = 30)]
    days: usize,
    #[arg(long, default_value = "5min")]
    resolution: Resolution,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// File stem; defaults to `<kind>_<resolution>`
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    /// Dataset manifests; each needs a label
    #[arg(long, required = true, value_delimiter = ',')]
    data: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "hourly,daily")]
    levels: Vec<Resolution>,
    /// Class names; defaults to the manifest labels in order of appearance
    #[arg(long, value_delimiter = ',')]
    classes: Vec<String>,
    #[arg(long, default_value_t = 8)]
    channels: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 2)]
    blocks: usize,
    #[arg(long, default_value = "global_avg")]
    pooling: Pooling,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also train the transient module on this many synthetic recordings
    #[arg(long, default_value_t = 0)]
    transient_samples: usize,
    /// Model artifact to write
    #[arg(long)]
    out: PathBuf,
    /// Loss history CSV; defaults to the artifact path with `.history.csv`
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    #[arg(long, env = "FPD_MODEL")]
    model: PathBuf,
    /// Reference dataset manifest
    #[arg(long)]
    a: PathBuf,
    /// Compared dataset manifest
    #[arg(long)]
    b: PathBuf,
    /// Resolution at which data enters the stack; defaults to the data's
    #[arg(long)]
    entry: Option<Resolution>,
    #[arg(long, default_value = "daily")]
    target: Resolution,
    #[arg(long, value_delimiter = ',', default_value = "fpd,js,mmd_rbf,mmd_linear")]
    metrics: Vec<MetricName>,
    /// Upsample both datasets to this resolution first
    #[arg(long)]
    resample_to: Option<Resolution>,
    /// `index` or `random` pairing for MAPE
    #[arg(long, default_value = "index")]
    pairing: String,
    #[arg(long)]
    rbf_bandwidth: Option<f64>,
    #[arg(long, default_value_t = 1e-6)]
    mape_eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report file; standard output when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct DisturbArgs {
    #[arg(long)]
    data: PathBuf,
    /// Disturbance kind; with `--preset` and no kind, every preset kind
    #[arg(long)]
    kind: Option<DisturbanceKind>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Named level grid (`fig2`, `solar` or `fabricated`)
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Contaminating dataset manifest
    #[arg(long)]
    aux: Option<PathBuf>,
    /// Contaminate whole windows (`sample`) or single points (`point`)
    #[arg(long, default_value = "sample")]
    mode: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct BenchmarkArgs {
    #[arg(long, env = "FPD_MODEL")]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Contaminating dataset manifest
    #[arg(long)]
    aux: Option<PathBuf>,
    #[arg(long, default_value = "fig2")]
    preset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of consecutive seeds starting at `--seed`
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long, value_delimiter = ',', default_value = "fpd,js,mmd_rbf")]
    metrics: Vec<MetricName>,
    #[arg(long)]
    entry: Option<Resolution>,
    #[arg(long, default_value = "daily")]
    target: Resolution,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Serialize)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, hide = true)]
    corrupt: Option<String>,
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<fpd::Error> for Failure {
    fn from(e: fpd::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    let args: Vec<OsString> = std::env::args_os().collect();
    let cli = match parse(args) {
        Ok(cli) => cli,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let outcome = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_cmd(a, &cli.command),
        Command::Disturb(a) => disturb(a),
        Command::Benchmark(a) => benchmark(a, &cli.command),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Parses the command line, then appends flags from `--config` for every
/// argument the command line left unset and parses again.
fn parse(mut args: Vec<OsString>) -> Result<Cli, Failure> {
    let cli = Cli::try_parse_from(&args).unwrap_or_else(|e| e.exit());
    let Some(path) = cli.config else {
        return Ok(cli);
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
    let json: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    let obj = json
        .as_object()
        .ok_or_else(|| usage(format!("config {} must be a JSON object", path.display())))?;

    let matches = Cli::command().try_get_matches_from(&args).unwrap_or_else(|e| e.exit());
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let command = Cli::command();
    let spec = command.find_subcommand(name).expect("parsed subcommand exists");
    for (key, value) in obj {
        let id = key.replace('-', "_");
        if id == "config" {
            continue;
        }
        let Some(arg) = spec.get_arguments().find(|a| a.get_id() == id.as_str()) else {
            return Err(usage(format!("config key '{key}' is not a flag of '{name}'")));
        };
        if sub.value_source(&id) == Some(ValueSource::CommandLine) {
            continue;
        }
        let flag = format!("--{}", arg.get_long().unwrap_or(&id));
        let text = match value {
            serde_json::Value::Null | serde_json::Value::Bool(false) => continue,
            serde_json::Value::Bool(true) => {
                args.push(flag.into());
                continue;
            }
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Number(n) => n.to_string(),
            serde_json::Value::Array(items) => items
                .iter()
                .map(|v| v.as_str().map_or_else(|| v.to_string(), str::to_string))
                .collect::<Vec<_>>()
                .join(","),
            serde_json::Value::Object(_) => return Err(usage(format!("config key '{key}' cannot be an object"))),
        };
        args.push(flag.into());
        args.push(text.into());
    }
    let matches = Cli::command().try_get_matches_from(&args).unwrap_or_else(|e| e.exit());
    Cli::from_arg_matches(&matches).map_err(|e| usage(e.to_string()))
}

fn manifest_for(stem: &str, batch: &SeriesBatch) -> DatasetManifest {
    let mut m = DatasetManifest::new(format!("{stem}.csv"), batch.resolution);
    m.label = batch.source.clone();
    m.night_window = batch.night_window;
    m.normalization = Normalization::None;
    m
}

fn write_dataset(dir: &Path, stem: &str, batch: &SeriesBatch, start: chrono::NaiveDate, notes: &[(&str, String)]) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    write_csv(batch, &csv_path, start)?;
    let mut manifest = manifest_for(stem, batch);
    for (k, v) in notes {
        manifest.notes.insert(k.to_string(), v.clone());
    }
    let manifest_path = dir.join(format!("{stem}.json"));
    manifest.write(&manifest_path)?;
    Ok(manifest_path)
}

fn synth(a: &SynthArgs) -> Outcome {
    let batch = synth_series(a.kind, a.days, a.resolution, a.seed)
        .map_err(|e| usage(format!("cannot generate: {e}")))?;
    let stem = a.name.clone().unwrap_or_else(|| format!("{}_{}", a.kind, a.resolution));
    let notes = [
        ("generator", a.kind.to_string()),
        ("days", a.days.to_string()),
        ("seed", a.seed.to_string()),
        ("normalization", "per_sample at generation".to_string()),
    ];
    let path = write_dataset(&a.out, &stem, &batch, fpd::data::csv_io::default_start(), &notes)?;
    println!("{}", path.display());
    Ok(())
}

/// Loads a dataset and the digests of its manifest and CSV.
fn load(manifest_path: &Path) -> anyhow::Result<(SeriesBatch, Vec<InputDigest>, Option<String>, Option<chrono::NaiveDate>)> {
    let manifest = DatasetManifest::read(manifest_path)?;
    let (batch, report) = load_csv(&manifest).with_context(|| format!("loading {}", manifest_path.display()))?;
    let digests = vec![InputDigest::of_file(manifest_path)?, InputDigest::of_file(&manifest.path)?];
    let note = (report.rows_dropped > 0 || report.incomplete_windows > 0)
        .then(|| format!("{}: {report}", manifest_path.display()));
    Ok((batch, digests, note, report.first_date))
}

fn write_history(path: &Path, histories: &[LevelHistory]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for h in histories {
        for e in &h.epochs {
            w.serialize(e)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn print_records(history: &LevelHistory) {
    for e in &history.epochs {
        println!("{}", serde_json::to_string::<EpochRecord>(e).expect("record serializes"));
    }
}

fn train(a: &TrainArgs) -> Outcome {
    if a.epochs > 0 && a.batch_size < 2 {
        return Err(usage("--batch-size must be at least 2"));
    }
    let mut data = Vec::new();
    let mut classes = a.classes.clone();
    for path in &a.data {
        let (batch, _, note, _) = load(path)?;
        if let Some(n) = note {
            eprintln!("warning: {n}");
        }
        let label = batch
            .source
            .clone()
            .ok_or_else(|| anyhow!("{} has no label; training needs one per dataset", path.display()))?;
        if a.classes.is_empty() && !classes.contains(&label) {
            classes.push(label);
        }
        data.push(batch);
    }
    let config = StackConfig {
        levels: a.levels.clone(),
        channels: a.channels,
        width: a.width,
        blocks: a.blocks,
        pooling: a.pooling,
        classes,
        ..StackConfig::default()
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
        seed: a.seed,
        val_fraction: a.val_fraction,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;

    let mut stack = ExtractorStack::<f64>::new(config)?;
    let mut histories = train_levels(&mut stack, &data, &cfg)?;
    for h in &histories {
        print_records(h);
    }
    if a.transient_samples > 0 {
        let set = synth_transient(
            a.transient_samples,
            a.seed,
            &[FaultKind::Sag, FaultKind::Swell, FaultKind::FrequencyDip],
        )?;
        let h = train_transient(&mut stack, &set, &cfg)?;
        print_records(&h);
        histories.push(h);
    }
    stack.finalize()?;
    fpd::data::save_stack(&stack, &a.out)?;
    let history = a.history.clone().unwrap_or_else(|| a.out.with_extension("history.csv"));
    write_history(&history, &histories)?;
    eprintln!("saved {} (version {})", a.out.display(), stack.version());
    Ok(())
}

fn parse_pairing(s: &str, seed: u64) -> Result<Pairing, Failure> {
    match s {
        "index" => Ok(Pairing::Index),
        "random" => Ok(Pairing::Random { seed }),
        _ => Err(usage(format!("unknown pairing '{s}' (expected index or random)"))),
    }
}

fn evaluate_cmd(a: &EvaluateArgs, command: &Command) -> Outcome {
    let pairing = parse_pairing(&a.pairing, a.seed)?;
    let stack = fpd::data::load_stack::<f64>(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let (mut xa, mut inputs, note_a, _) = load(&a.a)?;
    let (mut xb, digests_b, note_b, _) = load(&a.b)?;
    inputs.insert(0, InputDigest::of_file(&a.model)?);
    inputs.extend(digests_b);
    if let Some(to) = a.resample_to {
        xa = resample(&xa, xa.resolution, to)?;
        xb = resample(&xb, xb.resolution, to)?;
    }
    if xa.resolution != xb.resolution {
        return Err(usage(format!(
            "datasets are at {} and {} resolution; pass --resample-to",
            xa.resolution, xb.resolution
        )));
    }
    let opts = EvalOptions {
        entry: a.entry.unwrap_or(xa.resolution),
        target: a.target,
        metrics: a.metrics.clone(),
        rbf_bandwidth: a.rbf_bandwidth,
        pairing,
        mape_eps: a.mape_eps,
    };
    let eval = evaluate(&stack, &xa, &xb, &opts)?;
    let mut report = MetricReport::new(Provenance {
        tool_version: VERSION.to_string(),
        config_hash: config_hash(command)?,
        seed: a.seed,
        inputs,
    });
    for (m, v) in eval.values {
        report.insert(m, v)?;
    }
    report.notes.extend(note_a.into_iter().chain(note_b));
    report.notes.extend(eval.notes);
    report.notes.push(format!("model version {}", stack.version()));
    let text = serde_json::to_string_pretty(&report).context("serializing report")?;
    match &a.out {
        Some(path) => fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn alpha_tag(alpha: f64) -> String {
    alpha.to_string().replace('.', "p")
}

fn disturb(a: &DisturbArgs) -> Outcome {
    let mode = match a.mode.as_str() {
        "sample" => ContaminationMode::Sample,
        "point" => ContaminationMode::Point,
        other => return Err(usage(format!("unknown contamination mode '{other}'"))),
    };
    let plan: Vec<(DisturbanceKind, Vec<f64>)> = match (&a.preset, a.kind, a.alpha) {
        (Some(_), _, Some(_)) => return Err(usage("--alpha and --preset are mutually exclusive")),
        (Some(p), kind, None) => Sweep::preset(p)
            .map_err(|e| usage(e.to_string()))?
            .into_iter()
            .filter(|s| kind.is_none_or(|k| k == s.kind))
            .map(|s| (s.kind, s.alphas))
            .collect(),
        (None, Some(k), Some(alpha)) => vec![(k, vec![alpha])],
        (None, _, _) => return Err(usage("need --kind and --alpha, or --preset")),
    };
    if plan.is_empty() {
        return Err(usage("the preset has no levels for that kind"));
    }
    for (kind, alphas) in &plan {
        for &alpha in alphas {
            kind.check_level(alpha).map_err(|e| usage(e.to_string()))?;
        }
        if *kind == DisturbanceKind::Contamination && a.aux.is_none() {
            return Err(usage("contamination needs --aux"));
        }
    }

    let (x, _, note, first) = load(&a.data)?;
    if let Some(n) = note {
        eprintln!("warning: {n}");
    }
    let aux = a.aux.as_deref().map(load).transpose()?.map(|(b, ..)| b);
    let stem = a.data.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    let start = first.unwrap_or_else(fpd::data::csv_io::default_start);
    for (kind, alphas) in plan {
        for alpha in alphas {
            let y = Disturbance::new(kind, alpha, a.seed).apply(&x, aux.as_ref(), mode)?;
            let name = format!("{stem}_{kind}_{}", alpha_tag(alpha));
            let notes = [
                ("disturbance", kind.to_string()),
                ("alpha", alpha.to_string()),
                ("seed", a.seed.to_string()),
                ("source", a.data.display().to_string()),
            ];
            let path = write_dataset(&a.out, &name, &y, start, &notes)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchmarkSummary<'a> {
    provenance: Provenance,
    preset: &'a str,
    seeds: Vec<u64>,
    /// Per disturbance, the fraction of seeds whose fpd never decreases and
    /// ends above its start.
    fpd_monotone_fraction: Vec<(DisturbanceKind, f64)>,
    rows: &'a [fpd::pipeline::BenchmarkRow],
    failures: &'a [String],
    notes: &'a [String],
}

fn benchmark(a: &BenchmarkArgs, command: &Command) -> Outcome {
    let sweeps = Sweep::preset(&a.preset).map_err(|e| usage(e.to_string()))?;
    if a.seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    if sweeps.iter().any(|s| s.kind == DisturbanceKind::Contamination) && a.aux.is_none() {
        return Err(usage("the preset includes contamination; pass --aux"));
    }
    let stack = fpd::data::load_stack::<f64>(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let (x, mut inputs, note, _) = load(&a.data)?;
    inputs.insert(0, InputDigest::of_file(&a.model)?);
    let aux = match &a.aux {
        Some(p) => {
            let (b, d, ..) = load(p)?;
            inputs.extend(d);
            Some(b)
        }
        None => None,
    };
    let opts = EvalOptions {
        entry: a.entry.unwrap_or(x.resolution),
        target: a.target,
        metrics: a.metrics.clone(),
        ..EvalOptions::default()
    };
    let seeds: Vec<u64> = (a.seed..a.seed + a.seeds).collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut notes: Vec<String> = note.into_iter().collect();
    for &seed in &seeds {
        let r = run_benchmark(&stack, &x, aux.as_ref(), &sweeps, &opts, seed)?;
        rows.extend(r.rows);
        failures.extend(r.failures.into_iter().map(|f| format!("seed {seed}: {f}")));
        notes.extend(r.notes);
    }
    rows.sort_by(|p, q| {
        p.disturbance
            .cmp(&q.disturbance)
            .then(p.alpha.total_cmp(&q.alpha))
            .then((p.seed, p.metric).cmp(&(q.seed, q.metric)))
    });

    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let csv_path = a.out_dir.join("benchmark.csv");
    let mut w = csv::Writer::from_path(&csv_path).with_context(|| format!("writing {}", csv_path.display()))?;
    for r in &rows {
        w.serialize(r).context("writing benchmark row")?;
    }
    w.flush().context("writing benchmark table")?;

    let fpd_monotone_fraction = sweeps
        .iter()
        .map(|s| {
            let ok = seeds
                .iter()
                .filter(|&&seed| {
                    let v: Vec<f64> = rows
                        .iter()
                        .filter(|r| r.disturbance == s.kind && r.seed == seed && r.metric == MetricName::Fpd)
                        .map(|r| r.value)
                        .collect();
                    v.len() == s.alphas.len() && is_monotone(&v)
                })
                .count();
            (s.kind, ok as f64 / seeds.len() as f64)
        })
        .collect();
    let summary = BenchmarkSummary {
        provenance: Provenance {
            tool_version: VERSION.to_string(),
            config_hash: config_hash(command)?,
            seed: a.seed,
            inputs,
        },
        preset: &a.preset,
        seeds,
        fpd_monotone_fraction,
        rows: &rows,
        failures: &failures,
        notes: &notes,
    };
    let json_path = a.out_dir.join("benchmark.json");
    let text = serde_json::to_string_pretty(&summary).context("serializing benchmark")?;
    fs::write(&json_path, text + "\n").with_context(|| format!("writing {}", json_path.display()))?;
    println!("{}", csv_path.display());
    if !failures.is_empty() {
        return Err(Failure::Runtime(anyhow!(
            "{} sub-run(s) failed; partial results in {}: {}",
            failures.len(),
            a.out_dir.display(),
            failures.join("; ")
        )));
    }
    Ok(())
}

fn gradcheck(a: &GradcheckArgs) -> Outcome {
    let report = run_suite(a.seed, a.corrupt.as_deref()).map_err(|e| usage(e.to_string()))?;
    println!("{}", serde_json::to_string_pretty(&report).context("serializing report")?);
    if report.passed() {
        eprintln!("gradcheck passed: max relative error {:.3e}", report.max_rel_err());
        return Ok(());
    }
    let failed: Vec<String> = report
        .failures()
        .map(|c| format!("{} {} ({:.3e})", c.case, c.tensor, c.max_rel_err))
        .collect();
    Err(Failure::Runtime(anyhow!(
        "gradcheck failed beyond {:e}: {}",
        report.tolerance,
        failed.join(", ")
    )))
}
