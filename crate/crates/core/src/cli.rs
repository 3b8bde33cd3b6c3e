//! Command-line front end: JSON-configured solves, rate experiments,
//! verification suites and decoder files.
//!
//! Every sub-seed comes from the master seed through
//! `derive_seed(master, label, i)`. All results are computed before the first
//! file is written, so a failing command leaves no partial artifacts.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{self, CheckReport, ExperimentSetup, ObservationModel, SolverKind};
use crate::error::Error;
use crate::genmodel::{Activation, DecoderFamily, DecoderSpec, GenerativeDecoder};
use crate::measurement::{LinkModel, LinkSpec};
use crate::projection::ProjectionConfig;
use crate::seed::derive_seed;
use crate::sensing::{SensingKind, SensingOperator, SensingSpec};
use crate::solvers::{InitMode, SolverConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INAPPLICABLE: i32 = 3;

/// Environment variable that takes precedence over `--threads`.
pub const THREADS_ENV: &str = "GENPRIOR_THREADS";

/// Frozen constant `C` in `n = ⌈C·k·log(Lr/δ)⌉` for the tsrec and jle suites.
pub const TSREC_C: f64 = 8.0;
/// Frozen constant `C` in `n = ⌈C·(k/ε²)·log(Lr/δ)⌉` for the wnu suite.
pub const WNU_C: f64 = 1.0;

/// Calibrated sample size for the TS-REC and JLE suites.
pub fn tsrec_n(decoder: &GenerativeDecoder, delta: f64) -> usize {
    let k = decoder.latent_dim() as f64;
    let log = (decoder.lipschitz_bound() * decoder.radius() / delta)
        .ln()
        .max(1.0);
    (TSREC_C * k * log).ceil() as usize
}

/// Calibrated sample size for the `W_ν` suite.
pub fn wnu_n(decoder: &GenerativeDecoder, delta: f64, eps: f64) -> usize {
    let k = decoder.latent_dim() as f64;
    let log = (decoder.lipschitz_bound() * decoder.radius() / delta)
        .ln()
        .max(1.0);
    (WNU_C * k / (eps * eps) * log).ceil() as usize
}

/// Tanh decoder `8 → 64 → 256`, radius 3, seed 42.
pub fn default_decoder_spec() -> DecoderSpec {
    DecoderSpec {
        k: 8,
        p: 256,
        r: 3.0,
        activation: Activation::Tanh,
        seed: 42,
        layer_dims: vec![8, 64, 256],
        weight_scale: 1.0,
        family: DecoderFamily::Gaussian,
    }
}

/// Tanh decoder `20 → 500 → 500 → 784` matching an MNIST-sized generator.
pub fn mnist_decoder_spec() -> DecoderSpec {
    DecoderSpec {
        k: 20,
        p: 784,
        r: 3.0,
        activation: Activation::Tanh,
        seed: 42,
        layer_dims: vec![20, 500, 500, 784],
        weight_scale: 1.0,
        family: DecoderFamily::Gaussian,
    }
}

fn default_link() -> LinkSpec {
    LinkSpec {
        kind: "linear".into(),
        sigma_d: None,
        sigma: None,
        tau: 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingConfig {
    #[serde(default = "default_sensing_kind")]
    pub kind: SensingKind,
    /// Required for solves; rate experiments use the grid and checks fall
    /// back to the calibrated size.
    #[serde(default)]
    pub n: Option<usize>,
}

fn default_sensing_kind() -> SensingKind {
    SensingKind::DenseGaussian
}

impl Default for SensingConfig {
    fn default() -> Self {
        Self {
            kind: SensingKind::DenseGaussian,
            n: None,
        }
    }
}

/// Solver choice; unset numeric fields take the solver's defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub kind: SolverKind,
    #[serde(default)]
    pub step_size: Option<f64>,
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub projection: Option<ProjectionConfig>,
    #[serde(default)]
    pub x0_mode: InitMode,
    #[serde(default)]
    pub observation: Option<ObservationModel>,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            kind: SolverKind::PgdGlasso,
            step_size: None,
            iterations: None,
            projection: None,
            x0_mode: InitMode::Zero,
            observation: None,
        }
    }
}

impl SolverSpec {
    pub fn config(&self) -> SolverConfig {
        let base = match self.kind {
            SolverKind::PgdNlasso => SolverConfig::nlasso(),
            _ => SolverConfig::glasso(),
        };
        SolverConfig {
            step_size: self.step_size.unwrap_or(base.step_size),
            iterations: self.iterations.unwrap_or(base.iterations),
            projection: self.projection.unwrap_or(base.projection),
            x0_mode: self.x0_mode.clone(),
            ..base
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CheckSuite {
    Adjoint,
    Tsrec,
    Jle,
    Wnu,
    Mvt,
    Gradients,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    #[serde(default)]
    pub suite: Option<CheckSuite>,
    /// ε; defaults to 0.5 (tsrec, jle) or 0.3 (wnu).
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default = "default_check_delta")]
    pub delta: f64,
    #[serde(default = "default_nu")]
    pub nu: f64,
    /// Pairs, points or triples sampled by the suite.
    #[serde(default = "default_pairs")]
    pub pairs: usize,
}

fn default_check_delta() -> f64 {
    0.01
}

fn default_nu() -> f64 {
    1.0
}

fn default_pairs() -> usize {
    1000
}

impl Default for CheckSpec {
    fn default() -> Self {
        Self {
            suite: None,
            eps: None,
            delta: default_check_delta(),
            nu: default_nu(),
            pairs: default_pairs(),
        }
    }
}

fn default_rate_delta() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExperimentSpec {
    #[default]
    Solve,
    Rate {
        grid: Vec<usize>,
        trials: usize,
        #[serde(default = "default_rate_delta")]
        delta: f64,
    },
    Check(CheckSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_decoder_spec")]
    pub decoder: DecoderSpec,
    #[serde(default)]
    pub sensing: SensingConfig,
    #[serde(default = "default_link")]
    pub link: LinkSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub experiment: ExperimentSpec,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub master_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config deserializes")
    }
}

/// A command failure carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    /// Config error pinned to the line where `section` appears in `text`.
    fn at(text: &str, section: &str, err: impl std::fmt::Display) -> Self {
        let line = line_of(text, section);
        Self::config(format!("config error at line {line} ({section}): {err}"))
    }

    fn from_lib(text: &str, section: &str, err: Error) -> Self {
        match err {
            Error::Unsupported(_) => Self {
                code: EXIT_INAPPLICABLE,
                message: format!("inapplicable method: {err}"),
            },
            other => Self::at(text, section, other),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// 1-based line of the first `"key"` occurrence; 1 when absent.
fn line_of(text: &str, key: &str) -> usize {
    let needle = format!("\"{key}\"");
    text.lines()
        .position(|l| l.contains(&needle))
        .map_or(1, |i| i + 1)
}

/// Parses a config, reporting syntax and schema errors with their line.
pub fn parse_config(text: &str) -> CliResult<RunConfig> {
    serde_json::from_str(text).map_err(|e| {
        CliError::config(format!(
            "config error at line {}, column {}: {e}",
            e.line().max(1),
            e.column()
        ))
    })
}

#[derive(Debug, Parser)]
#[command(
    name = "genprior",
    version,
    about = "Signal recovery under generative priors"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed; overrides `master_seed` in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; `GENPRIOR_THREADS` takes precedence.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Suppress stdout summaries.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one solve and write trajectory, metrics and instance.
    Solve,
    /// Run an error-vs-n experiment and write the rate table.
    Rate,
    /// Run a verification suite; exit 0 iff it passes.
    Check {
        #[arg(value_enum)]
        suite: CheckSuite,
    },
    /// Create or describe decoder files.
    Model {
        #[command(subcommand)]
        action: ModelAction,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// `8 → 64 → 256` tanh decoder.
    Small,
    /// `20 → 500 → 500 → 784` tanh decoder.
    Mnist,
    /// Linear decoder with orthonormal columns, `8 → 256`.
    Linear,
    /// Identity map on `R^8`.
    Identity,
}

#[derive(Debug, Subcommand)]
pub enum ModelAction {
    /// Write a decoder JSON file (spec plus Lipschitz bound).
    New {
        #[arg(long, value_enum, default_value = "small")]
        preset: Preset,
        /// Latent radius override.
        #[arg(long)]
        r: Option<f64>,
        /// Decoder seed override.
        #[arg(long = "model-seed")]
        model_seed: Option<u64>,
        /// Destination file; printed to stdout when absent.
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Print a decoder file with its Lipschitz bound.
    Info { file: PathBuf },
}

/// Decoder file contents: the spec plus its Lipschitz bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(flatten)]
    pub spec: DecoderSpec,
    pub lipschitz_bound: f64,
}

impl ModelFile {
    pub fn from_spec(spec: DecoderSpec) -> crate::Result<Self> {
        let lipschitz_bound = spec.build()?.lipschitz_bound();
        Ok(Self {
            spec,
            lipschitz_bound,
        })
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", e.message);
            e.code
        }
    }
}

fn thread_count(flag: Option<usize>) -> CliResult<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v.trim().parse::<usize>().map(Some).map_err(|_| {
            CliError::config(format!("{THREADS_ENV} must be a thread count, got '{v}'"))
        }),
        _ => Ok(flag),
    }
}

fn execute(cli: &Cli) -> CliResult<i32> {
    if let Some(n) = thread_count(cli.common.threads)? {
        // an already-initialized global pool keeps its size
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    if let Command::Model { action } = &cli.command {
        return cmd_model(action, &cli.common);
    }
    let (text, mut cfg) = match &cli.common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::config(format!("cannot read config {}: {e}", path.display()))
            })?;
            let cfg = parse_config(&text)?;
            (text, cfg)
        }
        None => (String::new(), RunConfig::default()),
    };
    if let Some(s) = cli.common.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = &cli.common.out {
        cfg.output_dir = Some(o.clone());
    }
    let out = cfg.output_dir.clone();
    let quiet = cli.common.quiet;
    match &cli.command {
        Command::Solve => {
            let art = cmd_solve(&cfg, &text)?;
            finish(out.as_deref().unwrap_or(Path::new("out")), &art, quiet)
        }
        Command::Rate => {
            let art = cmd_rate(&cfg, &text)?;
            finish(out.as_deref().unwrap_or(Path::new("out")), &art, quiet)
        }
        Command::Check { suite } => {
            let report = cmd_check(&cfg, &text, *suite)?;
            let art = Artifacts {
                files: vec![(
                    format!("check_{}.json", suite_name(*suite)),
                    to_json(&report)?,
                )],
                summary: report.summary_line(),
            };
            if let Some(dir) = &out {
                write_all(dir, &art)?;
            }
            if !quiet {
                println!("{}", String::from_utf8_lossy(&art.files[0].1));
            }
            Ok(if report.passed {
                EXIT_OK
            } else {
                EXIT_CHECK_FAILED
            })
        }
        Command::Model { .. } => unreachable!("handled above"),
    }
}

/// Named file contents produced by a command, written only on success.
pub struct Artifacts {
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: String,
}

fn finish(dir: &Path, art: &Artifacts, quiet: bool) -> CliResult<i32> {
    write_all(dir, art)?;
    if !quiet {
        println!("{}", art.summary);
    }
    Ok(EXIT_OK)
}

fn write_all(dir: &Path, art: &Artifacts) -> CliResult<()> {
    let io =
        |e: std::io::Error| CliError::config(format!("cannot write to {}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    for (name, bytes) in &art.files {
        fs::write(dir.join(name), bytes).map_err(io)?;
    }
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> CliResult<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(v).map_err(|e| CliError::config(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn suite_name(s: CheckSuite) -> &'static str {
    match s {
        CheckSuite::Adjoint => "adjoint",
        CheckSuite::Tsrec => "tsrec",
        CheckSuite::Jle => "jle",
        CheckSuite::Wnu => "wnu",
        CheckSuite::Mvt => "mvt",
        CheckSuite::Gradients => "gradients",
    }
}

fn build_decoder(cfg: &RunConfig, text: &str) -> CliResult<GenerativeDecoder> {
    cfg.decoder
        .build()
        .map_err(|e| CliError::from_lib(text, "decoder", e))
}

fn build_link(cfg: &RunConfig, text: &str) -> CliResult<LinkModel> {
    cfg.link
        .build()
        .map_err(|e| CliError::from_lib(text, "link", e))
}

fn build_setup(cfg: &RunConfig, text: &str) -> CliResult<ExperimentSetup> {
    let decoder = build_decoder(cfg, text)?;
    let link = build_link(cfg, text)?;
    let solver_config = cfg.solver.config();
    solver_config
        .validate()
        .map_err(|e| CliError::from_lib(text, "solver", e))?;
    let observation = cfg
        .solver
        .observation
        .unwrap_or_else(|| ObservationModel::default_for(cfg.solver.kind));
    let needs_derivative =
        cfg.solver.kind == SolverKind::PgdNlasso || observation == ObservationModel::Known;
    if needs_derivative && !link.is_differentiable() {
        return Err(CliError {
            code: EXIT_INAPPLICABLE,
            message: format!(
                "inapplicable method: {} with {} observations needs a differentiable link, got '{}'",
                cfg.solver.kind.name(),
                match observation {
                    ObservationModel::Sim => "sim",
                    ObservationModel::Known => "known",
                },
                link.kind().name()
            ),
        });
    }
    let delta = match cfg.experiment {
        ExperimentSpec::Rate { delta, .. } => delta,
        _ => default_rate_delta(),
    };
    if delta.is_nan() || delta <= 0.0 {
        return Err(CliError::at(text, "delta", "δ must be positive"));
    }
    Ok(ExperimentSetup {
        decoder,
        sensing: cfg.sensing.kind,
        link,
        solver: cfg.solver.kind,
        solver_config,
        observation,
        delta,
    })
}

#[derive(Debug, Serialize)]
struct SolveMetrics {
    solver: String,
    link: String,
    n: usize,
    p: usize,
    k: usize,
    iterations: usize,
    l2_error: f64,
    cosine_similarity: f64,
    loss: f64,
    master_seed: u64,
}

#[derive(Debug, Serialize)]
struct InstanceDump {
    decoder: DecoderSpec,
    sensing: SensingSpec,
    link: LinkSpec,
    observation: ObservationModel,
    master_seed: u64,
    z_star: Vec<f64>,
    x_star: Vec<f64>,
    target: Vec<f64>,
    x_final: Vec<f64>,
}

/// Draws one instance and solves it. Files: `trajectory.csv`,
/// `metrics.json`, `instance.json`, `observations.csv`.
pub fn cmd_solve(cfg: &RunConfig, text: &str) -> CliResult<Artifacts> {
    if !matches!(cfg.experiment, ExperimentSpec::Solve) {
        return Err(CliError::at(
            text,
            "experiment",
            "solve needs experiment kind 'solve'",
        ));
    }
    let setup = build_setup(cfg, text)?;
    let n = cfg
        .sensing
        .n
        .ok_or_else(|| CliError::at(text, "sensing", "solve needs sensing.n"))?;
    let seed = derive_seed(cfg.master_seed, "instance", 0);
    let inst = setup
        .instance(n, seed)
        .map_err(|e| CliError::from_lib(text, "sensing", e))?;
    let (x, traj) = setup
        .solve(&inst, derive_seed(cfg.master_seed, "solver", 0))
        .map_err(|e| CliError::from_lib(text, "solver", e))?;
    let loss = setup
        .final_loss(&inst, &x)
        .map_err(|e| CliError::from_lib(text, "solver", e))?;
    let l2_error = crate::linalg::dist(&x, &inst.target);
    let cosine_similarity = analysis::cosine_similarity(&x, &inst.x_star).unwrap_or(0.0);
    let metrics = SolveMetrics {
        solver: setup.solver.name().into(),
        link: setup.link.kind().name().into(),
        n,
        p: setup.decoder.ambient_dim(),
        k: setup.decoder.latent_dim(),
        iterations: setup.solver_config.iterations,
        l2_error,
        cosine_similarity,
        loss,
        master_seed: cfg.master_seed,
    };
    let dump = InstanceDump {
        decoder: cfg.decoder.clone(),
        sensing: inst
            .op
            .to_spec()
            .map_err(|e| CliError::from_lib(text, "sensing", e))?,
        link: cfg.link.clone(),
        observation: setup.observation,
        master_seed: cfg.master_seed,
        z_star: inst.z_star.clone(),
        x_star: inst.x_star.clone(),
        target: inst.target.clone(),
        x_final: x,
    };
    let mut traj_csv = Vec::new();
    traj.write_csv(&mut traj_csv)
        .map_err(|e| CliError::config(e.to_string()))?;
    let mut obs_csv = Vec::new();
    write_observations(&inst.y_clean, &inst.y_tilde, &mut obs_csv)?;
    Ok(Artifacts {
        files: vec![
            ("trajectory.csv".into(), traj_csv),
            ("metrics.json".into(), to_json(&metrics)?),
            ("instance.json".into(), to_json(&dump)?),
            ("observations.csv".into(), obs_csv),
        ],
        summary: format!(
            "{} n={n}: l2_error {:.4e}, cosine {:.6}, loss {:.4e}",
            metrics.solver, l2_error, cosine_similarity, loss
        ),
    })
}

fn write_observations(clean: &[f64], tilde: &[f64], out: &mut Vec<u8>) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| CliError::config(e.to_string());
    w.write_record(["i", "y_clean", "y_tilde"]).map_err(err)?;
    for (i, (c, t)) in clean.iter().zip(tilde).enumerate() {
        w.write_record([i.to_string(), format!("{c:e}"), format!("{t:e}")])
            .map_err(err)?;
    }
    w.flush().map_err(|e| CliError::config(e.to_string()))
}

/// Runs the configured grid. Files: `rate.csv`, `rate.json`.
pub fn cmd_rate(cfg: &RunConfig, text: &str) -> CliResult<Artifacts> {
    let ExperimentSpec::Rate { grid, trials, .. } = &cfg.experiment else {
        return Err(CliError::at(
            text,
            "experiment",
            "rate needs experiment kind 'rate'",
        ));
    };
    let setup = build_setup(cfg, text)?;
    let table = analysis::rate_experiment(grid, *trials, &setup, cfg.master_seed)
        .map_err(|e| CliError::from_lib(text, "experiment", e))?;
    let mut csv_bytes = Vec::new();
    table
        .write_csv(&mut csv_bytes)
        .map_err(|e| CliError::config(e.to_string()))?;
    let summary = table
        .rows
        .iter()
        .map(|r| {
            format!(
                "n={} median_error {:.4e} median_cosine {:.4}",
                r.n, r.median_error, r.median_cosine
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    Ok(Artifacts {
        files: vec![
            ("rate.csv".into(), csv_bytes),
            ("rate.json".into(), to_json(&table)?),
        ],
        summary,
    })
}

/// Runs one verification suite on an operator drawn from the config.
/// Without `sensing.n`, tsrec and jle use [`tsrec_n`], wnu uses [`wnu_n`] and
/// the other suites use `n = p/2`.
pub fn cmd_check(cfg: &RunConfig, text: &str, suite: CheckSuite) -> CliResult<CheckReport> {
    let spec = match &cfg.experiment {
        ExperimentSpec::Check(c) => c.clone(),
        _ => CheckSpec::default(),
    };
    if let Some(s) = spec.suite {
        if s != suite {
            return Err(CliError::at(
                text,
                "suite",
                format!("config names suite '{}'", suite_name(s)),
            ));
        }
    }
    let decoder = build_decoder(cfg, text)?;
    let p = decoder.ambient_dim();
    let default_eps = if suite == CheckSuite::Wnu { 0.3 } else { 0.5 };
    let eps = spec.eps.unwrap_or(default_eps);
    if !(eps > 0.0 && eps < 1.0) {
        return Err(CliError::at(text, "eps", "ε must lie in (0, 1)"));
    }
    if spec.delta.is_nan() || spec.delta <= 0.0 {
        return Err(CliError::at(text, "delta", "δ must be positive"));
    }
    if spec.pairs == 0 {
        return Err(CliError::at(text, "pairs", "pairs must be positive"));
    }
    let n = cfg.sensing.n.unwrap_or(match suite {
        CheckSuite::Tsrec | CheckSuite::Jle => tsrec_n(&decoder, spec.delta),
        CheckSuite::Wnu => wnu_n(&decoder, spec.delta, eps),
        _ => (p / 2).max(1),
    });
    let link = if suite == CheckSuite::Mvt || suite == CheckSuite::Gradients {
        Some(build_link(cfg, text)?)
    } else {
        None
    };
    let op = SensingOperator::new(
        cfg.sensing.kind,
        n,
        p,
        derive_seed(cfg.master_seed, "sensing", 0),
    )
    .map_err(|e| CliError::from_lib(text, "sensing", e))?;
    let seed = derive_seed(cfg.master_seed, "check", 0);
    let lib = |e: Error| CliError::from_lib(text, "experiment", e);
    let report = match suite {
        CheckSuite::Adjoint => analysis::adjoint_check(&op, spec.pairs, seed),
        CheckSuite::Tsrec => {
            analysis::tsrec_check(&op, &decoder, eps, spec.delta, spec.pairs, seed).map_err(lib)?
        }
        CheckSuite::Jle => {
            let mut rng = crate::seed::rng_from(seed);
            let points: Vec<Vec<f64>> = (0..spec.pairs)
                .map(|_| {
                    let z = crate::genmodel::sample_in_ball(
                        &mut rng,
                        decoder.latent_dim(),
                        decoder.radius(),
                    );
                    decoder.forward_unchecked(&z)
                })
                .collect();
            analysis::jle_check(&op, &points, eps).map_err(lib)?
        }
        CheckSuite::Wnu => {
            analysis::wnu_check(&op, &decoder, spec.nu, eps, spec.pairs, seed).map_err(lib)?
        }
        CheckSuite::Mvt => {
            analysis::mvt_check(&op, link.as_ref().unwrap(), spec.pairs, seed).map_err(lib)?
        }
        CheckSuite::Gradients => analysis::gradient_check(
            &op,
            link.as_ref().unwrap(),
            &decoder,
            spec.pairs.min(50),
            seed,
        )
        .map_err(lib)?,
    };
    Ok(report)
}

fn cmd_model(action: &ModelAction, common: &CommonArgs) -> CliResult<i32> {
    let model_err = |e: Error| CliError::config(format!("model error: {e}"));
    match action {
        ModelAction::New {
            preset,
            r,
            model_seed,
            file,
        } => {
            let mut spec = match preset {
                Preset::Small => default_decoder_spec(),
                Preset::Mnist => mnist_decoder_spec(),
                Preset::Linear => DecoderSpec {
                    layer_dims: vec![8, 256],
                    activation: Activation::Identity,
                    family: DecoderFamily::OrthonormalLinear,
                    ..default_decoder_spec()
                },
                Preset::Identity => DecoderSpec {
                    k: 8,
                    p: 8,
                    layer_dims: vec![8, 8],
                    activation: Activation::Identity,
                    family: DecoderFamily::Identity,
                    ..default_decoder_spec()
                },
            };
            if let Some(r) = r {
                spec.r = *r;
            }
            if let Some(s) = model_seed.or(common.seed) {
                spec.seed = s;
            }
            let model = ModelFile::from_spec(spec).map_err(model_err)?;
            let bytes = to_json(&model)?;
            match file {
                Some(path) => {
                    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                        fs::create_dir_all(parent).map_err(|e| {
                            CliError::config(format!("cannot create {}: {e}", parent.display()))
                        })?;
                    }
                    fs::write(path, &bytes).map_err(|e| {
                        CliError::config(format!("cannot write {}: {e}", path.display()))
                    })?;
                    if !common.quiet {
                        println!(
                            "wrote {} (L = {:.6e})",
                            path.display(),
                            model.lipschitz_bound
                        );
                    }
                }
                None => print!("{}", String::from_utf8_lossy(&bytes)),
            }
            Ok(EXIT_OK)
        }
        ModelAction::Info { file } => {
            let text = fs::read_to_string(file)
                .map_err(|e| CliError::config(format!("cannot read {}: {e}", file.display())))?;
            let spec: DecoderSpec = serde_json::from_str(&text).map_err(|e| {
                CliError::config(format!(
                    "model error at line {}, column {}: {e}",
                    e.line(),
                    e.column()
                ))
            })?;
            let model = ModelFile::from_spec(spec).map_err(model_err)?;
            if !common.quiet {
                print!("{}", String::from_utf8_lossy(&to_json(&model)?));
            }
            Ok(EXIT_OK)
        }
    }
}
