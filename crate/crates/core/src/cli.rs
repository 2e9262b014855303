//! Command-line entry point.
//!
//! Exit codes: 0 on success, 1 for validation errors, 2 for backend or protocol errors.

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::convert::{convert_instance, ConversionScheme};
use crate::corpus::{
    build_type_constraint_map, check_gold_labels, load_instances, load_templates_with_ontology,
    DataFormat, REInstance, RelationOntology, TemplateSet, TemplateStyle, TypeConstraintMap,
};
use crate::error::{Error, Result};
use crate::inference::{calibrate, CalibrationArtifact, Extractor, Prediction};
use crate::metrics::{macro_f1_directed, micro_f1, EvalReport};
use crate::num::extended_float::parse_extended;
use crate::scoring::{
    protocol, BackendSpec, MockScorer, ScoreMode, ScoreOptions, ScoreVector, ScorerBackend,
};

#[derive(Debug, Parser)]
#[command(
    name = "relsum",
    version,
    about = "Relation extraction by scoring verbalized relation templates"
)]
struct Cli {
    /// key = value file supplying defaults for any flag; explicit flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// More log output on standard error (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write {id, source, target?, relation?} records for a dataset.
    Convert(ConvertArgs),
    /// Search the NA threshold on a development set and write a calibration artifact.
    Calibrate(CalibrateArgs),
    /// Predict relations for a dataset using a calibration artifact.
    Predict(PredictArgs),
    /// Score predictions against gold labels and print the report as JSON.
    Evaluate(EvaluateArgs),
    /// Handshake with a backend and run one tokenize/next round trip.
    ProbeBackend(ProbeArgs),
    /// Serve the mock scorer over the wire protocol (testing aid).
    #[command(hide = true)]
    ServeMock(ServeMockArgs),
}

#[derive(Debug, Clone, Args, Default)]
struct DataArgs {
    /// Input data format: tacred_json or unified_jsonl (default: from the file extension).
    #[arg(long)]
    format: Option<String>,
    /// Template file, or a bundled set: semantic1, semantic2, structural, semeval.
    #[arg(long)]
    templates: Option<String>,
    /// Abstention label (default: detected from the templates).
    #[arg(long)]
    na_label: Option<String>,
    /// Conversion scheme, e.g. verbalize or typed_marker_punct.
    #[arg(long)]
    scheme: Option<String>,
}

#[derive(Debug, Clone, Args, Default)]
struct ScoringArgs {
    /// mock:<seed>, cmd:<command> or tcp:<host:port>.
    #[arg(long)]
    backend: Option<String>,
    /// raw or renorm.
    #[arg(long)]
    mode: Option<String>,
    /// Type map JSON, or training data to derive it from.
    #[arg(long)]
    type_map: Option<PathBuf>,
    /// Parallel workers, each with its own backend connection.
    #[arg(long)]
    workers: Option<usize>,
    /// Seed for `mock` backends given without one.
    #[arg(long)]
    seed: Option<u64>,
    /// Do not clamp tiny probabilities.
    #[arg(long)]
    no_prob_floor: bool,
}

#[derive(Debug, Args)]
struct ConvertArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    scoring: ScoringArgs,
    /// Development set with gold relations.
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Artifact path (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    scoring: ScoringArgs,
    #[arg(long = "in", alias = "test")]
    input: Option<PathBuf>,
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Use this threshold instead of the calibrated one (accepts inf, +inf, -inf).
    #[arg(long, allow_hyphen_values = true)]
    threshold_override: Option<String>,
    /// Predictions JSONL path (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    gold: Option<PathBuf>,
    /// micro (TACRED) or macro (SemEval, direction-sensitive).
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    na_label: Option<String>,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ServeMockArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Listen on host:port instead of standard I/O.
    #[arg(long)]
    tcp: Option<String>,
}

/// Flag defaults read from a `key = value` file.
#[derive(Debug, Default)]
struct Config(HashMap<String, String>);

impl Config {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: toml::Table = toml::from_str(&text)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        let map = table
            .into_iter()
            .map(|(k, v)| {
                let v = match v {
                    toml::Value::String(s) => s,
                    other => other.to_string(),
                };
                (k.replace('_', "-"), v)
            })
            .collect();
        Ok(Config(map))
    }

    fn str(&self, cli: &Option<String>, key: &str) -> Option<String> {
        cli.clone().or_else(|| self.0.get(key).cloned())
    }

    fn path(&self, cli: &Option<PathBuf>, key: &str) -> Option<PathBuf> {
        cli.clone().or_else(|| self.0.get(key).map(PathBuf::from))
    }

    fn parse<T: FromStr>(&self, cli: Option<T>, key: &str) -> Result<Option<T>> {
        if cli.is_some() {
            return Ok(cli);
        }
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Validation(format!("config key {key}: bad value {v:?}"))),
        }
    }

    fn flag(&self, cli: bool, key: &str) -> bool {
        cli || self.0.get(key).is_some_and(|v| v == "true")
    }
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::Validation(format!("missing required --{flag}")))
}

pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            if e.is_backend() {
                2
            } else {
                1
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Convert(a) => cmd_convert(a, &cfg),
        Command::Calibrate(a) => cmd_calibrate(a, &cfg),
        Command::Predict(a) => cmd_predict(a, &cfg),
        Command::Evaluate(a) => cmd_evaluate(a, &cfg),
        Command::ProbeBackend(a) => cmd_probe(a, &cfg),
        Command::ServeMock(a) => cmd_serve_mock(a),
    }
}

struct Data {
    ontology: RelationOntology,
    templates: TemplateSet,
    format: Option<DataFormat>,
}

impl Data {
    fn resolve(args: &DataArgs, cfg: &Config) -> Result<Self> {
        let templates = required(cfg.str(&args.templates, "templates"), "templates")?;
        let na = cfg.str(&args.na_label, "na-label");
        let (ontology, templates) = if Path::new(&templates).exists() {
            load_templates_with_ontology(&templates, na.as_deref())?
        } else {
            let style: TemplateStyle = templates.parse().map_err(|_| {
                Error::Validation(format!(
                    "--templates {templates:?} is neither a file nor a bundled set"
                ))
            })?;
            TemplateSet::bundled(style)?
        };
        let format = cfg.parse(
            args.format
                .as_deref()
                .map(DataFormat::from_str)
                .transpose()?,
            "format",
        )?;
        Ok(Data {
            ontology,
            templates,
            format,
        })
    }

    fn load(&self, path: &Path) -> Result<Vec<REInstance>> {
        let format = self.format.unwrap_or_else(|| DataFormat::from_path(path));
        let instances = load_instances(path, format)?;
        check_gold_labels(&instances, &self.ontology)?;
        Ok(instances)
    }
}

fn scheme_arg(args: &DataArgs, cfg: &Config) -> Result<Option<ConversionScheme>> {
    cfg.str(&args.scheme, "scheme")
        .map(|s| s.parse())
        .transpose()
}

struct Scoring {
    backend: BackendSpec,
    seed: u64,
    mode: Option<ScoreMode>,
    type_map: Option<TypeConstraintMap>,
    workers: usize,
    prob_floor: bool,
}

impl Scoring {
    fn resolve(args: &ScoringArgs, cfg: &Config, data: &Data) -> Result<Self> {
        let backend: BackendSpec =
            required(cfg.str(&args.backend, "backend"), "backend")?.parse()?;
        let mode = cfg.str(&args.mode, "mode").map(|m| m.parse()).transpose()?;
        let type_map = match cfg.path(&args.type_map, "type-map") {
            Some(p) => Some(load_type_map(&p, data)?),
            None => None,
        };
        Ok(Scoring {
            backend,
            seed: cfg.parse(args.seed, "seed")?.unwrap_or(0),
            mode,
            type_map,
            workers: cfg.parse(args.workers, "workers")?.unwrap_or(1).max(1),
            prob_floor: !cfg.flag(args.no_prob_floor, "no-prob-floor"),
        })
    }

    fn options(&self, mode: ScoreMode) -> ScoreOptions {
        let opts = ScoreOptions::new(mode);
        if self.prob_floor {
            opts
        } else {
            opts.without_floor()
        }
    }

    /// Runs `job` over every instance on `workers` threads, keeping input order.
    fn map_instances<T, J>(&self, instances: &[REInstance], job: J) -> Result<Vec<T>>
    where
        T: Send,
        J: Fn(&dyn ScorerBackend, &REInstance) -> Result<T> + Sync,
    {
        let workers = self.workers.min(instances.len()).max(1);
        let results: Vec<Result<Vec<(usize, T)>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let job = &job;
                    scope.spawn(move || -> Result<Vec<(usize, T)>> {
                        let backend = self.backend.connect(self.seed)?;
                        let mut out = Vec::new();
                        for (i, inst) in instances.iter().enumerate().skip(w).step_by(workers) {
                            out.push((i, job(backend.as_ref(), inst)?));
                        }
                        Ok(out)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::Validation("worker panicked".into())))
                })
                .collect()
        });
        let mut slots: Vec<Option<T>> = (0..instances.len()).map(|_| None).collect();
        for r in results {
            for (i, v) in r? {
                slots[i] = Some(v);
            }
        }
        Ok(slots
            .into_iter()
            .map(|s| s.expect("every index processed"))
            .collect())
    }
}

fn load_type_map(path: &Path, data: &Data) -> Result<TypeConstraintMap> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim_start().starts_with('{') && text.contains("\"entries\"") {
        return TypeConstraintMap::from_json(&text, &data.ontology);
    }
    let train = data.load(path)?;
    build_type_constraint_map(&train, &data.ontology)
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            fs::File::create(p).map_err(|e| Error::io(p, e))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn write_line<W: Write + ?Sized>(out: &mut W, line: &str) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<output>", e))
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::Validation(e.to_string()))
}

fn cmd_convert(a: ConvertArgs, cfg: &Config) -> Result<()> {
    let data = Data::resolve(&a.data, cfg)?;
    let scheme = scheme_arg(&a.data, cfg)?.unwrap_or(ConversionScheme::Verbalize);
    let input = required(cfg.path(&a.input, "in"), "in")?;
    let instances = data.load(&input)?;
    let mut out = open_out(cfg.path(&a.out, "out").as_deref())?;
    for inst in &instances {
        let pair = convert_instance(inst, &data.templates, scheme)?;
        write_line(&mut out, &to_json(&pair)?)?;
    }
    out.flush().map_err(|e| Error::io("<output>", e))?;
    log::info!("converted {} instances", instances.len());
    Ok(())
}

fn cmd_calibrate(a: CalibrateArgs, cfg: &Config) -> Result<()> {
    let data = Data::resolve(&a.data, cfg)?;
    let scoring = Scoring::resolve(&a.scoring, cfg, &data)?;
    if scoring.mode == Some(ScoreMode::Raw) {
        return Err(Error::Validation(
            "calibration uses renormalized scores; drop --mode raw".into(),
        ));
    }
    let scheme = scheme_arg(&a.data, cfg)?.unwrap_or(ConversionScheme::Verbalize);
    let dev_path = required(cfg.path(&a.dev, "dev"), "dev")?;
    let dev = data.load(&dev_path)?;
    let mut ex = Extractor::new(&data.ontology, &data.templates, scheme)
        .with_score_options(scoring.options(ScoreMode::Renormalized));
    ex.type_map = scoring.type_map.as_ref();

    let scored: Vec<(ScoreVector<f64>, String)> =
        scoring.map_instances(&dev, |backend, inst| {
            let gold = inst.gold_relation.clone().ok_or_else(|| {
                Error::Validation(format!("dev instance {:?} has no gold relation", inst.id))
            })?;
            Ok((ex.score(backend, inst)?, gold))
        })?;
    let model = calibrate(&scored, data.ontology.na_label())?;
    let artifact = CalibrationArtifact::new(model, data.templates.style, scheme);
    let mut out = open_out(cfg.path(&a.out, "out").as_deref())?;
    write_line(&mut out, &to_json(&artifact)?)?;
    out.flush().map_err(|e| Error::io("<output>", e))?;
    log::info!(
        "threshold {} with dev micro F1 {}",
        artifact.threshold,
        artifact.dev_f1
    );
    Ok(())
}

fn cmd_predict(a: PredictArgs, cfg: &Config) -> Result<()> {
    let data = Data::resolve(&a.data, cfg)?;
    let scoring = Scoring::resolve(&a.scoring, cfg, &data)?;
    let override_threshold = match cfg.str(&a.threshold_override, "threshold-override") {
        Some(t) => Some(
            parse_extended(&t).ok_or_else(|| Error::Validation(format!("bad threshold {t:?}")))?,
        ),
        None => None,
    };
    let artifact: Option<CalibrationArtifact<f64>> = match cfg.path(&a.calibration, "calibration") {
        Some(p) => {
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            Some(
                serde_json::from_str(&text)
                    .map_err(|e| Error::Validation(format!("{}: {e}", p.display())))?,
            )
        }
        None => None,
    };
    let threshold = match (override_threshold, &artifact) {
        (Some(t), _) => t,
        (None, Some(a)) => a.threshold,
        (None, None) => {
            return Err(Error::Validation(
                "need --calibration or --threshold-override".into(),
            ))
        }
    };
    if let Some(a) = &artifact {
        if a.template_style != data.templates.style {
            log::warn!(
                "calibrated with {} templates, predicting with {}",
                a.template_style,
                data.templates.style
            );
        }
    }
    let scheme = match scheme_arg(&a.data, cfg)? {
        Some(s) => s,
        None => artifact
            .as_ref()
            .map_or(ConversionScheme::Verbalize, |a| a.scheme),
    };
    let mode = scoring
        .mode
        .or(artifact.as_ref().map(|a| a.scale))
        .unwrap_or(ScoreMode::Renormalized);
    if mode == ScoreMode::Raw && override_threshold.is_none() {
        log::warn!("raw scores compared against a threshold calibrated on renormalized scores");
    }
    let input = required(cfg.path(&a.input, "in"), "in")?;
    let instances = data.load(&input)?;
    let mut ex = Extractor::new(&data.ontology, &data.templates, scheme)
        .with_score_options(scoring.options(mode));
    ex.type_map = scoring.type_map.as_ref();
    let preds: Vec<Prediction<f64>> = scoring.map_instances(&instances, |backend, inst| {
        ex.predict(backend, inst, threshold)
    })?;
    let mut out = open_out(cfg.path(&a.out, "out").as_deref())?;
    for p in &preds {
        write_line(&mut out, &to_json(p)?)?;
    }
    out.flush().map_err(|e| Error::io("<output>", e))
}

#[derive(Deserialize)]
struct LabelRecord {
    #[serde(default)]
    id: Option<String>,
    relation: String,
}

/// Reads `(id, relation)` pairs from a TACRED JSON array or any JSONL with `id`/`relation` fields.
fn read_labels(path: &Path) -> Result<Vec<(String, String)>> {
    if DataFormat::from_path(path) == DataFormat::TacredJson {
        let instances = load_instances(path, DataFormat::TacredJson)?;
        return instances
            .into_iter()
            .map(|i| {
                let rel = i.gold_relation.ok_or_else(|| {
                    Error::Validation(format!(
                        "{}: instance {:?} has no relation",
                        path.display(),
                        i.id
                    ))
                })?;
                Ok((i.id, rel))
            })
            .collect();
    }
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelRecord = serde_json::from_str(&line).map_err(|e| Error::Record {
            index,
            field: "relation".into(),
            message: e.to_string(),
        })?;
        out.push((rec.id.unwrap_or_else(|| index.to_string()), rec.relation));
    }
    Ok(out)
}

fn cmd_evaluate(a: EvaluateArgs, cfg: &Config) -> Result<()> {
    let preds = read_labels(&required(cfg.path(&a.pred, "pred"), "pred")?)?;
    let golds = read_labels(&required(cfg.path(&a.gold, "gold"), "gold")?)?;
    if preds.len() != golds.len() {
        return Err(Error::LengthMismatch {
            predictions: preds.len(),
            golds: golds.len(),
        });
    }
    let gold_by_id: HashMap<&str, &str> = golds
        .iter()
        .map(|(i, r)| (i.as_str(), r.as_str()))
        .collect();
    let mut aligned = Vec::with_capacity(preds.len());
    for (id, _) in &preds {
        let g = gold_by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Validation(format!("prediction {id:?} has no gold label")))?;
        aligned.push(*g);
    }
    let p: Vec<&str> = preds.iter().map(|(_, r)| r.as_str()).collect();
    let metric = cfg
        .str(&a.metric, "metric")
        .unwrap_or_else(|| "micro".into());
    let report: EvalReport<f64> = match metric.as_str() {
        "micro" => {
            let na = cfg
                .str(&a.na_label, "na-label")
                .unwrap_or_else(|| "no_relation".into());
            micro_f1(&p, &aligned, &na)?
        }
        "macro" => {
            let other = cfg
                .str(&a.na_label, "na-label")
                .unwrap_or_else(|| "Other".into());
            macro_f1_directed(&p, &aligned, &other)?
        }
        other => return Err(Error::Validation(format!("unknown metric {other:?}"))),
    };
    println!("{}", to_json(&report)?);
    Ok(())
}

fn cmd_probe(a: ProbeArgs, cfg: &Config) -> Result<()> {
    let spec: BackendSpec = required(cfg.str(&a.backend, "backend"), "backend")?.parse()?;
    let backend = spec.connect(cfg.parse(a.seed, "seed")?.unwrap_or(0))?;
    let caps = backend.capabilities();
    let text = "The subject entity is probe .";
    let ids = if caps.tokenize {
        backend.tokenize(text)?
    } else {
        Vec::new()
    };
    let mut next_ok = false;
    if caps.next_token {
        let cands: Vec<u32> = ids
            .iter()
            .take(1)
            .copied()
            .chain([backend.eos_id()])
            .collect();
        let probs = backend.next_token_probs(text, &[], &cands)?;
        if probs.len() != cands.len() || probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Protocol(format!(
                "malformed probabilities {probs:?}"
            )));
        }
        next_ok = true;
    }
    let report = serde_json::json!({
        "backend": spec.to_string(),
        "caps": caps.names(),
        "vocab_size": backend.vocab_size(),
        "eos_id": backend.eos_id(),
        "tokenized": ids.len(),
        "next_ok": next_ok,
    });
    println!("{report}");
    Ok(())
}

fn cmd_serve_mock(a: ServeMockArgs) -> Result<()> {
    let mock = MockScorer::seeded(a.seed);
    match a.tcp {
        None => {
            let stdin = io::stdin();
            protocol::serve(&mock, stdin.lock(), io::stdout().lock())
                .map_err(|e| Error::io("<stdio>", e))
        }
        Some(addr) => {
            let listener = std::net::TcpListener::bind(&addr).map_err(|e| Error::io(&addr, e))?;
            eprintln!(
                "listening on {}",
                listener.local_addr().map_err(|e| Error::io(&addr, e))?
            );
            for stream in listener.incoming() {
                let stream = stream.map_err(|e| Error::io(&addr, e))?;
                let reader = BufReader::new(stream.try_clone().map_err(|e| Error::io(&addr, e))?);
                let mock = mock.clone();
                std::thread::spawn(move || {
                    if let Err(e) = protocol::serve(&mock, reader, stream) {
                        log::warn!("connection ended: {e}");
                    }
                });
            }
            Ok(())
        }
    }
}
