//! `coherence`: certify, repair and monitor composed probabilistic quotes.
//!
//! Record-parallel commands read JSONL in batches, process each batch on a
//! bounded worker pool (`--jobs`) and write results in input order. Bad
//! lines are reported with their line number on stderr; any malformed line
//! makes the exit code 2, any record that parses but cannot be processed
//! makes it 1.

use clap::{Args, Parser, Subcommand, ValueEnum};
use coherence_core::composition::{attribute, certify_raw, residual, CompositionSpec};
use coherence_core::decision::{
    brier, diebold_mariano, gate_sweep, murphy, quartile_table, regret, AllocationKind, AllocationRule, BetRecord,
    GateConfig, RegretConfig,
};
use coherence_core::io::{
    ecdf, parse_line, read_lines, to_json_line, to_json_pretty, CertificateOutput, CompositionRecord, LineError,
    PanelRecord, PredictOutput, ProjectOutput, ProjectRecord, ResidualRecord,
};
use coherence_core::manifest::RunManifest;
use coherence_core::monitor::{EProcess, StreamStep, DEFAULT_WATCH};
use coherence_core::polytope::{build_polytope, enumerate_vertices};
use coherence_core::prediction::{generic_bound, observe_magnitude, panel_stats, predict_with, KappaMode};
use coherence_core::projection::{
    project_closed_form, project_dykstra, project_oracle, project_relation, DykstraConfig,
};
use coherence_core::simharness::{run_ensemble, Operator, ScenarioConfig};
use rayon::prelude::*;
use serde::Serialize;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Records per parallel batch.
const BATCH: usize = 4096;

/// Directory searched for scenario files given by relative path.
const CONFIG_DIR_ENV: &str = "COHERENCE_CONFIG_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "coherence",
    version,
    about = "Coherence certificates for composed probabilistic quotes"
)]
struct Cli {
    /// Master seed (overrides the scenario file's seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Convergence tolerance for iterative projections.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Where to write the run manifest (default: `<output>.manifest.json`).
    #[arg(long, global = true)]
    manifest_out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
struct Io {
    /// Input file, `-` for stdin.
    #[arg(default_value = "-")]
    input: PathBuf,
    /// Output file (default: stdout).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Method {
    /// Closed form where one exists, Dykstra otherwise.
    Auto,
    ClosedForm,
    Dykstra,
    /// Minimum-norm point over the enumerated vertices.
    Oracle,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Kappa {
    Half,
    Empirical,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Project clique quotes onto their coherent polytopes.
    Project {
        #[command(flatten)]
        io: Io,
        #[arg(long, value_enum, default_value = "auto")]
        method: Method,
    },
    /// Certify composed quotes: residual, repair, binding constraints.
    Certify {
        #[command(flatten)]
        io: Io,
    },
    /// Run the anytime-valid e-process over a residual stream.
    Monitor {
        #[command(flatten)]
        io: Io,
        /// Significance levels to watch.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_WATCH.to_vec())]
        alpha_list: Vec<f64>,
    },
    /// Run a simulated specialist-panel ensemble.
    Simulate {
        /// Scenario TOML; relative paths also resolve against $COHERENCE_CONFIG_DIR.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Ensemble records (default: stdout).
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Bets JSONL for `regret` and `gate`.
        #[arg(long)]
        bets_out: Option<PathBuf>,
        /// CSV of ECDF points of eps_star per operator.
        #[arg(long)]
        ecdf_out: Option<PathBuf>,
    },
    /// Naive-versus-repaired regret with bootstrap intervals.
    Regret {
        #[command(flatten)]
        io: Io,
        #[arg(long, default_value = "proportional")]
        rule: AllocationKind,
        /// Bins for the Murphy decomposition.
        #[arg(long, default_value_t = 10)]
        bins: usize,
        #[arg(long, default_value_t = 1000)]
        bootstrap: usize,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
    },
    /// Sweep eps_star thresholds as a harm gate.
    Gate {
        #[command(flatten)]
        io: Io,
        #[arg(long, default_value = "proportional")]
        rule: AllocationKind,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.9, 0.75, 0.5])]
        capture_targets: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
    /// Predicted versus observed mean squared residual for routed panels.
    Predict {
        #[command(flatten)]
        io: Io,
        /// Monte Carlo draws when exhaustive enumeration is too large.
        #[arg(long, default_value_t = 20_000)]
        draws: u64,
        #[arg(long, value_enum, default_value = "half")]
        kappa: Kappa,
    },
}

/// A run's failure, mapped to an exit code.
enum Failure {
    /// Malformed input or configuration (exit 2).
    Input(Vec<String>),
    /// Valid input that could not be processed (exit 1).
    Runtime(String),
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<coherence_core::CoherenceError> for Failure {
    fn from(e: coherence_core::CoherenceError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: cannot size the worker pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(problems)) => {
            for p in problems {
                eprintln!("error: {p}");
            }
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn projection_config(cli: &Cli) -> std::result::Result<DykstraConfig, Failure> {
    let mut config = DykstraConfig::default();
    if let Some(tol) = cli.tol {
        config.tol = tol;
    }
    config.validate().map_err(|e| Failure::Input(vec![e.to_string()]))?;
    Ok(config)
}

fn open_input(path: &Path) -> io::Result<Box<dyn BufRead>> {
    if path.as_os_str() == "-" {
        Ok(Box::new(BufReader::new(io::stdin())))
    } else {
        Ok(Box::new(BufReader::new(File::open(path).map_err(|e| {
            io::Error::new(e.kind(), format!("cannot open {}: {e}", path.display()))
        })?)))
    }
}

fn open_output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    match path {
        Some(p) => Ok(Box::new(BufWriter::new(File::create(p).map_err(|e| {
            io::Error::new(e.kind(), format!("cannot create {}: {e}", p.display()))
        })?))),
        None => Ok(Box::new(BufWriter::new(io::stdout()))),
    }
}

/// Writes the manifest sidecar when there is somewhere to put it.
fn finish_manifest(
    cli: &Cli,
    command: &str,
    config: &impl Serialize,
    seed: u64,
    inputs: &[&Path],
    outputs: &[&Path],
) -> Outcome {
    let target = cli.manifest_out.clone().or_else(|| {
        outputs
            .first()
            .map(|p| PathBuf::from(format!("{}.manifest.json", p.display())))
    });
    let Some(target) = target else { return Ok(()) };
    let mut manifest = RunManifest::new(command, config, seed)?;
    for p in inputs.iter().filter(|p| p.as_os_str() != "-") {
        manifest.add_input(p)?;
    }
    for p in outputs {
        manifest.add_output(p)?;
    }
    manifest.write(&target)?;
    Ok(())
}

/// Streams `input` through `process` in order-preserving parallel batches.
///
/// Returns an error listing every bad line, after all good records were written.
fn stream<T, O, F>(input: &Path, out: &mut dyn Write, process: F) -> Outcome
where
    T: serde::de::DeserializeOwned + Send,
    O: Serialize + Send,
    F: Fn(T) -> coherence_core::Result<O> + Sync,
{
    let lines = read_lines(open_input(input)?)?;
    let mut malformed: Vec<LineError> = Vec::new();
    let mut failed: Vec<LineError> = Vec::new();
    for batch in lines.chunks(BATCH) {
        let results: Vec<(usize, Result<String, (bool, String)>)> = batch
            .par_iter()
            .map(|(n, text)| {
                let r = match parse_line::<T>(*n, text) {
                    Err(e) => Err((true, e.message)),
                    Ok(rec) => process(rec)
                        .and_then(|o| to_json_line(&o))
                        .map_err(|e| (false, e.to_string())),
                };
                (*n, r)
            })
            .collect();
        for (n, r) in results {
            match r {
                Ok(line) => writeln!(out, "{line}")?,
                Err((true, message)) => malformed.push(LineError { line: n, message }),
                Err((false, message)) => failed.push(LineError { line: n, message }),
            }
        }
    }
    out.flush()?;
    report_line_errors(malformed, failed)
}

fn report_line_errors(malformed: Vec<LineError>, failed: Vec<LineError>) -> Outcome {
    if !malformed.is_empty() {
        let mut all: Vec<LineError> = malformed.into_iter().chain(failed).collect();
        all.sort_by_key(|e| e.line);
        return Err(Failure::Input(all.iter().map(ToString::to_string).collect()));
    }
    if !failed.is_empty() {
        return Err(Failure::Runtime(
            failed
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("\nerror: "),
        ));
    }
    Ok(())
}

fn run(cli: &Cli) -> Outcome {
    let config = projection_config(cli)?;
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Project { io, method } => {
            let method = *method;
            let mut out = open_output(io.output.as_deref())?;
            let result = stream(&io.input, &mut out, |rec: ProjectRecord| {
                let relation = rec.relation.resolve()?;
                let r = match method {
                    Method::Auto => project_relation(&relation, &rec.quote, &config)?,
                    Method::ClosedForm => project_closed_form(&relation, &rec.quote)?,
                    Method::Dykstra => project_dykstra(&build_polytope(&relation), &rec.quote, &config)?,
                    Method::Oracle => project_oracle(&enumerate_vertices(&relation)?, &rec.quote)?,
                };
                Ok(ProjectOutput {
                    id: rec.id,
                    method: format!("{method:?}").to_lowercase(),
                    projected: r.projected,
                    residual: r.residual,
                    iterations: r.iterations,
                    converged: r.converged,
                    active_constraint: r.active_constraint,
                })
            });
            drop(out);
            let outputs: Vec<&Path> = io.output.as_deref().into_iter().collect();
            finish_manifest(cli, "project", &(method, config), seed, &[&io.input], &outputs)?;
            result
        }
        Command::Certify { io } => {
            let mut out = open_output(io.output.as_deref())?;
            let result = stream(&io.input, &mut out, |rec: CompositionRecord| {
                let comp: CompositionSpec = rec.spec()?;
                let cert = if rec.raw {
                    certify_raw(&comp, &rec.locals, &config)?
                } else {
                    residual(&comp, &rec.locals, &config)?
                };
                let attribution = attribute(&comp, &cert);
                Ok(CertificateOutput {
                    id: rec.id,
                    eps_star: cert.epsilon_star,
                    exposure_bound: cert.exposure_bound,
                    repaired: cert.repaired,
                    binding: cert.binding,
                    inputs_locally_coherent: cert.inputs_locally_coherent,
                    composed: cert.composed,
                    attribution,
                })
            });
            drop(out);
            let outputs: Vec<&Path> = io.output.as_deref().into_iter().collect();
            finish_manifest(cli, "certify", &config, seed, &[&io.input], &outputs)?;
            result
        }
        Command::Monitor { io, alpha_list } => {
            let mut process = EProcess::new(alpha_list.clone()).map_err(|e| Failure::Input(vec![e.to_string()]))?;
            let mut out = open_output(io.output.as_deref())?;
            let mut malformed = Vec::new();
            let mut failed = Vec::new();
            for (n, text) in read_lines(open_input(&io.input)?)? {
                let rec: ResidualRecord = match parse_line(n, &text) {
                    Ok(r) => r,
                    Err(e) => {
                        malformed.push(e);
                        continue;
                    }
                };
                match StreamStep::new(rec.eps_sq, rec.m, rec.k).and_then(|s| process.update(&s)) {
                    Ok(()) => writeln!(out, "{}", to_json_line(&process.report())?)?,
                    Err(e) => failed.push(LineError {
                        line: n,
                        message: e.to_string(),
                    }),
                }
            }
            out.flush()?;
            drop(out);
            let outputs: Vec<&Path> = io.output.as_deref().into_iter().collect();
            finish_manifest(cli, "monitor", alpha_list, seed, &[&io.input], &outputs)?;
            report_line_errors(malformed, failed)
        }
        Command::Simulate {
            config: path,
            output,
            bets_out,
            ecdf_out,
        } => {
            let path = resolve_config(path.as_deref())?;
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Failure::Input(vec![format!("cannot read {}: {e}", path.display())]))?;
            let mut scenario_cfg = ScenarioConfig::from_toml(&text).map_err(|e| Failure::Input(vec![e.to_string()]))?;
            if let Some(s) = cli.seed {
                scenario_cfg.seed = s;
            }
            let mut scenario = scenario_cfg.build().map_err(Failure::Input)?;
            scenario.config.projection = config;
            let records = run_ensemble(&scenario.cliques, &scenario.model, &scenario.config)?;
            let mut out = open_output(output.as_deref())?;
            for r in &records {
                writeln!(out, "{}", to_json_line(r)?)?;
            }
            out.flush()?;
            drop(out);
            if let Some(p) = bets_out {
                let mut w = open_output(Some(p))?;
                for r in &records {
                    writeln!(w, "{}", to_json_line(&r.bet())?)?;
                }
                w.flush()?;
            }
            if let Some(p) = ecdf_out {
                let mut w = open_output(Some(p))?;
                writeln!(w, "operator,eps_star,ecdf")?;
                for op in Operator::ALL {
                    let eps: Vec<f64> = records.iter().map(|r| r.operator(op).eps_star).collect();
                    for (x, f) in ecdf(&eps) {
                        writeln!(
                            w,
                            "{op:?},{},{}",
                            coherence_core::io::format_g17(x),
                            coherence_core::io::format_g17(f)
                        )?;
                    }
                }
                w.flush()?;
            }
            let outputs: Vec<&Path> = [output.as_deref(), bets_out.as_deref(), ecdf_out.as_deref()]
                .into_iter()
                .flatten()
                .collect();
            finish_manifest(
                cli,
                "simulate",
                &(scenario_cfg.clone(), config),
                scenario_cfg.seed,
                &[&path],
                &outputs,
            )
        }
        Command::Regret {
            io,
            rule,
            bins,
            bootstrap,
            level,
        } => {
            let bets = read_bets(&io.input)?;
            let rule = AllocationRule::new(*rule);
            let rc = RegretConfig {
                rule,
                bootstrap: *bootstrap,
                level: *level,
                seed,
            };
            let summary = regret(&bets, &rc)?;
            let flat = |pick: fn(&BetRecord) -> &Vec<f64>| -> (Vec<f64>, Vec<u8>) {
                bets.iter()
                    .flat_map(|b| pick(b).iter().copied().zip(b.labels.iter().copied()))
                    .unzip()
            };
            let (naive_f, labels) = flat(|b| &b.naive);
            let (repaired_f, _) = flat(|b| &b.repaired);
            let naive_loss: Vec<f64> = bets.iter().map(|b| brier(&b.naive, &b.labels)).collect();
            let repaired_loss: Vec<f64> = bets.iter().map(|b| brier(&b.repaired, &b.labels)).collect();
            let report = RegretReport {
                summary,
                murphy_naive: murphy(&naive_f, &labels, *bins)?,
                murphy_repaired: murphy(&repaired_f, &labels, *bins)?,
                diebold_mariano: diebold_mariano(&naive_loss, &repaired_loss).ok(),
                quartiles: quartile_table(&bets, &rule).ok(),
            };
            write_document(io.output.as_deref(), &report)?;
            let outputs: Vec<&Path> = io.output.as_deref().into_iter().collect();
            finish_manifest(cli, "regret", &(rc, bins), seed, &[&io.input], &outputs)
        }
        Command::Gate {
            io,
            rule,
            capture_targets,
            folds,
        } => {
            let problems: Vec<String> = capture_targets
                .iter()
                .filter(|t| !(**t > 0.0 && **t <= 1.0))
                .map(|t| format!("capture target {t} is outside (0, 1]"))
                .collect();
            if !problems.is_empty() {
                return Err(Failure::Input(problems));
            }
            let bets = read_bets(&io.input)?;
            let gc = GateConfig {
                rule: AllocationRule::new(*rule),
                capture_targets: capture_targets.clone(),
                folds: *folds,
                seed,
            };
            let report = gate_sweep(&bets, &gc)?;
            write_document(io.output.as_deref(), &report)?;
            let outputs: Vec<&Path> = io.output.as_deref().into_iter().collect();
            finish_manifest(cli, "gate", &gc, seed, &[&io.input], &outputs)
        }
        Command::Predict { io, draws, kappa } => {
            let (draws, kappa) = (*draws, *kappa);
            let mut out = open_output(io.output.as_deref())?;
            let result = stream(&io.input, &mut out, |rec: PanelRecord| {
                let relation = rec.relation.resolve()?;
                let stats = panel_stats(&rec.panel)?;
                let mode = match kappa {
                    Kappa::Half => KappaMode::Half,
                    Kappa::Empirical => KappaMode::Empirical,
                };
                let prediction = predict_with(&stats, &relation, mode, Some(&rec.panel))?;
                let comp = CompositionSpec::routed_clique(&relation, &vec![0; relation.arity()])?;
                let observed = observe_magnitude(&comp, &rec.panel, draws, seed, &config)?;
                let predicted = prediction.predicted_sq_residual;
                Ok(PredictOutput {
                    id: rec.id,
                    predicted,
                    observed: observed.mean,
                    ratio: (predicted > 0.0).then(|| observed.mean / predicted),
                    regime: prediction.regime.tag().to_string(),
                    kappa: prediction.kappa,
                    generic_bound: generic_bound(&stats).predicted_sq_residual,
                    std_error: observed.std_error,
                    exhaustive: observed.exhaustive,
                    n: observed.n,
                })
            });
            drop(out);
            let outputs: Vec<&Path> = io.output.as_deref().into_iter().collect();
            finish_manifest(cli, "predict", &(draws, kappa, config), seed, &[&io.input], &outputs)?;
            result
        }
    }
}

#[derive(Serialize)]
struct RegretReport {
    summary: coherence_core::decision::RegretSummary,
    murphy_naive: coherence_core::decision::MurphyDecomposition,
    murphy_repaired: coherence_core::decision::MurphyDecomposition,
    /// Brier losses, naive minus repaired; null when there are too few bets.
    diebold_mariano: Option<coherence_core::decision::DieboldMariano>,
    quartiles: Option<Vec<coherence_core::decision::QuartileRow>>,
}

fn resolve_config(path: Option<&Path>) -> std::result::Result<PathBuf, Failure> {
    let dir = std::env::var_os(CONFIG_DIR_ENV).map(PathBuf::from);
    let candidate = match (path, &dir) {
        (Some(p), Some(d)) if p.is_relative() && !p.exists() => d.join(p),
        (Some(p), _) => p.to_path_buf(),
        (None, Some(d)) => d.join("scenario.toml"),
        (None, None) => {
            return Err(Failure::Input(vec![format!(
                "no --config given and ${CONFIG_DIR_ENV} is not set"
            )]))
        }
    };
    if !candidate.exists() {
        return Err(Failure::Input(vec![format!(
            "scenario file {} not found",
            candidate.display()
        )]));
    }
    Ok(candidate)
}

/// Parses every bet, listing all malformed or invalid lines.
fn read_bets(path: &Path) -> std::result::Result<Vec<BetRecord>, Failure> {
    let mut bets = Vec::new();
    let mut problems = Vec::new();
    for (n, text) in read_lines(open_input(path)?)? {
        match parse_line::<BetRecord>(n, &text) {
            Ok(b) => match b.validate() {
                Ok(()) => bets.push(b),
                Err(e) => problems.push(
                    LineError {
                        line: n,
                        message: e.to_string(),
                    }
                    .to_string(),
                ),
            },
            Err(e) => problems.push(e.to_string()),
        }
    }
    if !problems.is_empty() {
        return Err(Failure::Input(problems));
    }
    Ok(bets)
}

fn write_document(path: Option<&Path>, value: &impl Serialize) -> Outcome {
    let mut out = open_output(path)?;
    writeln!(out, "{}", to_json_pretty(value)?)?;
    out.flush()?;
    Ok(())
}
