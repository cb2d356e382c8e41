use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use co2stream::config::{ConfigMap, PipelineConfig};
use co2stream::ingest::{parse_frame_line, FrameRecord, StreamValidator};
use co2stream::metrics::{self, curve_csv, EvalOptions, IouKind};
use co2stream::par::Execution;
use co2stream::pipeline::{Pipeline, PipelineError, TrackStage};
use co2stream::registry::{load_fixtures, serve_mock, MockOptions, MockServer, RegistryClient, RegistryConfig, REGISTRY_URL_ENV};
use co2stream::scenario::{Scenario, ScenarioConfig};
use serde_json::json;
use tracing::{info, warn};

#[derive(Parser)]
#[command(name = "co2stream", version, about = "Per-vehicle CO2 estimates from detection streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Box,
    Mask,
}

#[derive(clap::Args)]
struct StreamArgs {
    /// Detection stream (JSONL); `-` reads stdin.
    #[arg(long, default_value = "-")]
    input: String,
    /// Output file; `-` writes stdout.
    #[arg(long, default_value = "-")]
    out: String,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Emit per-frame track assignments as JSONL.
    Track(StreamArgs),
    /// Count distinct vehicles per category.
    Count(StreamArgs),
    /// Plate consensus per finished vehicle, as JSONL.
    Plates(StreamArgs),
    /// Full pipeline: per-vehicle CO2 estimates and window totals.
    Estimate {
        #[command(flatten)]
        stream: StreamArgs,
        #[arg(long, env = REGISTRY_URL_ENV)]
        registry_url: Option<String>,
        /// Serve these fixtures from an embedded mock registry when no URL is given.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long)]
        window_s: Option<f64>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Detection metrics for predictions against ground truth.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        /// Directory for summary.json, curves and confusion matrices.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "box")]
        kind: Kind,
        #[arg(long, default_value_t = 0.25)]
        conf: f64,
        #[arg(long, default_value_t = 0.45)]
        iou: f64,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        #[arg(long)]
        sequential: bool,
    },
    /// Run the mock vehicle registry until interrupted.
    ServeMock {
        #[arg(long)]
        fixtures: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8089")]
        bind: String,
    },
    /// Generate a synthetic stream with ground truth and registry fixtures.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        vehicles: Option<usize>,
        #[arg(long)]
        duration_s: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a stream's syntax, schema and frame ordering.
    Validate {
        #[arg(long, default_value = "-")]
        input: String,
    },
}

enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
}

type Outcome = Result<(), Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn data(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Data(e.into())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::Track(a) => track(&a),
        Command::Count(a) => count(&a),
        Command::Plates(a) => plates(&a),
        Command::Estimate { stream, registry_url, fixtures, window_s, format } => {
            estimate(&stream, registry_url, fixtures.as_deref(), window_s, format)
        }
        Command::Eval { predictions, ground_truth, out, kind, conf, iou, bins, sequential } => {
            let opts = EvalOptions {
                kind: match kind {
                    Kind::Box => IouKind::Box,
                    Kind::Mask => IouKind::Mask,
                },
                confusion_conf_thresh: conf,
                confusion_iou_thresh: iou,
                histogram_bins: bins,
                exec: if sequential { Execution::Sequential } else { Execution::default() },
                ..EvalOptions::default()
            };
            eval(&predictions, &ground_truth, &out, &opts)
        }
        Command::ServeMock { fixtures, bind } => {
            let records = load_fixtures(&fixtures).map_err(usage)?;
            let server = serve_mock(records, &bind, MockOptions::default()).map_err(usage)?;
            println!("{}", server.base_url());
            io::stdout().flush().map_err(data)?;
            server.wait();
            Ok(())
        }
        Command::Gen { config, seed, vehicles, duration_s, out } => {
            let mut cfg = match config {
                Some(p) => ScenarioConfig::from_map(&ConfigMap::load(&p).map_err(usage)?).map_err(usage)?,
                None => ScenarioConfig::default(),
            };
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.n_vehicles = vehicles.unwrap_or(cfg.n_vehicles);
            cfg.duration_s = duration_s.unwrap_or(cfg.duration_s);
            let scenario = Scenario::new(cfg).map_err(usage)?;
            scenario.write_outputs(&out).map_err(data)?;
            let gt = scenario.ground_truth();
            eprintln!("wrote {} frames, {} vehicles to {}", gt.frames, gt.vehicles.len(), out.display());
            Ok(())
        }
        Command::Validate { input } => validate(&input),
    }
}

fn open_input(path: &str) -> Result<Box<dyn BufRead>, Failure> {
    if path == "-" {
        return Ok(Box::new(BufReader::new(io::stdin())));
    }
    let f = File::open(path).with_context(|| format!("cannot open {path}")).map_err(usage)?;
    Ok(Box::new(BufReader::with_capacity(1 << 16, f)))
}

fn open_output(path: &str) -> Result<Box<dyn Write>, Failure> {
    if path == "-" {
        return Ok(Box::new(BufWriter::new(io::stdout())));
    }
    let f = File::create(path).with_context(|| format!("cannot create {path}")).map_err(usage)?;
    Ok(Box::new(BufWriter::new(f)))
}

fn frames(reader: Box<dyn BufRead>) -> impl Iterator<Item = Result<FrameRecord, PipelineError>> {
    reader.lines().enumerate().filter_map(|(i, line)| match line {
        Err(e) => Some(Err(PipelineError::Io(e))),
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(parse_frame_line(&l, i + 1).map_err(PipelineError::from)),
    })
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
    match path {
        Some(p) => PipelineConfig::from_map(&ConfigMap::load(p).map_err(usage)?).map_err(usage),
        None => Ok(PipelineConfig::default()),
    }
}

fn pipeline_failure(e: PipelineError) -> Failure {
    match e {
        PipelineError::Registry(_) => usage(e),
        other => data(other),
    }
}

fn track(a: &StreamArgs) -> Outcome {
    let cfg = load_config(a.config.as_deref())?;
    let mut stage = TrackStage::new(&cfg).map_err(usage)?;
    let mut out = open_output(&a.out)?;
    for frame in frames(open_input(&a.input)?) {
        let frame = frame.map_err(data)?;
        let (emissions, _) = stage.push(&frame).map_err(pipeline_failure)?;
        for e in emissions {
            let line = json!({
                "frame": frame.frame_index,
                "ts_ms": frame.timestamp_ms,
                "track": e.track_id,
                "label": e.detection.label,
                "box": e.detection.bbox.to_array(),
                "conf": e.detection.confidence,
                "plates": e.detection.plate_candidates.iter().map(|p| json!({ "text": p.text, "conf": p.confidence })).collect::<Vec<_>>(),
                "activated": e.activated,
            });
            writeln!(out, "{line}").map_err(data)?;
        }
    }
    out.flush().map_err(data)
}

fn count(a: &StreamArgs) -> Outcome {
    let cfg = load_config(a.config.as_deref())?;
    let mut stage = TrackStage::new(&cfg).map_err(usage)?;
    let mut n_frames = 0u64;
    for frame in frames(open_input(&a.input)?) {
        stage.push(&frame.map_err(data)?).map_err(pipeline_failure)?;
        n_frames += 1;
    }
    let (_, counts) = stage.finish();
    let total: u64 = counts.values().sum();
    let mut out = open_output(&a.out)?;
    let doc = json!({ "frames": n_frames, "unique_counts": counts, "total": total });
    writeln!(out, "{}", serde_json::to_string_pretty(&doc).map_err(data)?).map_err(data)?;
    out.flush().map_err(data)
}

fn plates(a: &StreamArgs) -> Outcome {
    let cfg = load_config(a.config.as_deref())?;
    let mut stage = TrackStage::new(&cfg).map_err(usage)?;
    let mut out = open_output(&a.out)?;
    let write = |vs: Vec<co2stream::pipeline::FinishedVehicle>, out: &mut Box<dyn Write>| -> Outcome {
        for v in vs {
            writeln!(out, "{}", serde_json::to_string(&v).map_err(data)?).map_err(data)?;
        }
        Ok(())
    };
    for frame in frames(open_input(&a.input)?) {
        let (_, done) = stage.push(&frame.map_err(data)?).map_err(pipeline_failure)?;
        write(done, &mut out)?;
    }
    let (done, _) = stage.finish();
    write(done, &mut out)?;
    out.flush().map_err(data)
}

fn estimate(a: &StreamArgs, url: Option<String>, fixtures: Option<&Path>, window_s: Option<f64>, format: Format) -> Outcome {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(w) = window_s {
        if !(w > 0.0) {
            return Err(usage(anyhow!("--window-s must be > 0")));
        }
        cfg.window_s = Some(w);
    }
    let mut _mock: Option<MockServer> = None;
    match (url, fixtures) {
        (Some(u), f) => {
            if f.is_some() {
                warn!("--fixtures ignored because a registry URL is set");
            }
            cfg.registry = Some(RegistryConfig { base_url: u, ..cfg.registry.unwrap_or_default() });
        }
        (None, Some(f)) => {
            let server = serve_mock(load_fixtures(f).map_err(usage)?, "127.0.0.1:0", MockOptions::default()).map_err(usage)?;
            info!(url = %server.base_url(), "embedded mock registry");
            cfg.registry = Some(RegistryConfig { base_url: server.base_url(), ..cfg.registry.unwrap_or_default() });
            _mock = Some(server);
        }
        (None, None) => {}
    }
    let client = match &cfg.registry {
        Some(r) => Some(Arc::new(RegistryClient::new(r.clone()).map_err(usage)?)),
        None => None,
    };
    let input = open_input(&a.input)?;
    let report = Pipeline::run(cfg, client, frames(input)).map_err(pipeline_failure)?;
    if report.stats.lookup_failures > 0 {
        warn!(failures = report.stats.lookup_failures, "some registry lookups failed; category defaults used");
    }
    let mut out = open_output(&a.out)?;
    match format {
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&report).map_err(data)?).map_err(data)?,
        Format::Csv => out.write_all(report.to_csv().as_bytes()).map_err(data)?,
    }
    out.flush().map_err(data)
}

fn eval(predictions: &Path, ground_truth: &Path, out: &Path, opts: &EvalOptions) -> Outcome {
    let read = |p: &Path| std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display())).map_err(usage);
    let preds = metrics::parse_predictions(&read(predictions)?)
        .with_context(|| format!("in {}", predictions.display()))
        .map_err(data)?;
    let gts = metrics::parse_ground_truth(&read(ground_truth)?)
        .with_context(|| format!("in {}", ground_truth.display()))
        .map_err(data)?;
    let res = metrics::evaluate(&preds, &gts, opts);
    std::fs::create_dir_all(out).map_err(data)?;
    let write = |name: &str, body: String| std::fs::write(out.join(name), body).with_context(|| format!("writing {name}")).map_err(data);
    let summary = serde_json::to_string_pretty(&res.summary).map_err(data)?;
    write("summary.json", summary.clone() + "\n")?;
    write("f1_curve.csv", curve_csv(&res.curve.all))?;
    write("curves.json", serde_json::to_string_pretty(&res.curve).map_err(data)?)?;
    write("map_sweep.json", serde_json::to_string_pretty(&res.sweep).map_err(data)?)?;
    write("confusion.csv", res.confusion_raw.to_csv())?;
    write("confusion_normalized.csv", res.confusion_normalized.to_csv())?;
    match &res.label_stats {
        Some(s) => write("label_stats.json", serde_json::to_string_pretty(s).map_err(data)?)?,
        None => warn!("ground truth lacks image sizes; label_stats.json skipped"),
    }
    println!("{summary}");
    Ok(())
}

fn validate(input: &str) -> Outcome {
    let mut v = StreamValidator::new();
    for frame in frames(open_input(input)?) {
        v.push(&frame.map_err(data)?);
    }
    let summary = v.finish();
    println!("{}", serde_json::to_string(&summary).map_err(data)?);
    match summary.first_violation {
        None => Ok(()),
        Some(violation) => Err(data(anyhow!("ordering violation at record {}: {:?}", violation.record_index, violation.kind))),
    }
}
