//! The `otkd` command line: loss evaluation, oracle solves, the synthetic
//! distillation demo, hyperparameter sweeps and gradient checks.
//!
//! Exit codes: 0 success, 1 other failure (including a failed gradient
//! check), 2 schema error or bad usage, 3 prediction kinds that do not fit
//! together, 4 solver non-convergence under `--strict`, 5 instance over an
//! oracle size cap, 6 unwritable output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::distill::{
    distill_loss, gradient_check, DistillLossReport, GradCheckReport, GradCheckSettings, LossKind, LossOptions, Preset,
};
use crate::error::Error;
use crate::harness::{
    random_instance, sweep, train_student, write_scatter_csv, write_sweep_csv, write_trajectory_csv, SweepGrid,
    SyntheticScenario, TrainOptions, TrainingRun, DEFAULT_STEP_SIZE,
};
use crate::io::read_predictions;
use crate::oracle::{exact_balanced_ot, primal_uot_oracle, DEFAULT_PRECISION};
use crate::ot::{Norm, SinkhornConfig};
use crate::points::{WeightMode, WeightedPointSet, DEFAULT_WEIGHT_FLOOR};
use crate::prediction::{pool_dense, PredictionSet};
use crate::threads::configure_threads;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_SCHEMA: i32 = 2;
pub const EXIT_KIND_MISMATCH: i32 = 3;
pub const EXIT_NOT_CONVERGED: i32 = 4;
pub const EXIT_SIZE_CAP: i32 = 5;
pub const EXIT_UNWRITABLE: i32 = 6;

#[derive(Debug, Parser)]
#[command(name = "otkd", version, about = "Optimal-transport distillation losses for pose networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Distillation loss between a student and a teacher prediction file.
    Loss(LossArgs),
    /// Reference transport value and plan between two prediction files.
    Oracle(OracleArgs),
    /// Trains a synthetic student with both losses and writes CSV traces.
    Demo(DemoArgs),
    /// Trains one synthetic student per hyperparameter combination.
    Sweep(SweepArgs),
    /// Compares analytic gradients with central finite differences.
    GradCheck(GradCheckArgs),
}

/// Solver hyperparameters shared by the loss-evaluating commands.
#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Named hyperparameter set (ε, ρ, loss kind and loss weight).
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    /// Entropic blur ε (overrides the preset).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Marginal relaxation ρ (overrides the preset).
    #[arg(long)]
    pub rho: Option<f64>,
    /// Ground-cost norm exponent (1 or 2).
    #[arg(long, default_value_t = 2)]
    pub p: u32,
    /// Plain transport cost instead of the debiased divergence.
    #[arg(long)]
    pub raw: bool,
    /// Dense pooling size.
    #[arg(long, default_value_t = crate::distill::DEFAULT_BLOCK)]
    pub block: usize,
    /// Iteration cap per transport solve.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Convergence tolerance on the potential change, in units of ε².
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    LinemodKp,
    OccKp,
    Zebrapose,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::LinemodKp => Preset::LinemodKp,
            PresetArg::OccKp => Preset::OccKp,
            PresetArg::Zebrapose => Preset::Zebrapose,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Naive,
    OtKeypoint,
    OtDense,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Naive => LossKind::Naive,
            LossArg::OtKeypoint => LossKind::OtKeypoint,
            LossArg::OtDense => LossKind::OtDense,
        }
    }
}

#[derive(Debug, Args)]
pub struct LossArgs {
    pub student: PathBuf,
    pub teacher: PathBuf,
    /// Loss to evaluate (default: the preset's, else the transport loss
    /// matching the file kind).
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Exit with code 4 if any transport solve did not converge.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleMode {
    /// Exact balanced transport (transportation simplex).
    Balanced,
    /// KL-relaxed entropic objective minimized over plans.
    Unbalanced,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    #[arg(long, value_enum, default_value = "balanced")]
    pub mode: OracleMode,
    /// Keypoint whose vote cloud is compared (keypoint files).
    #[arg(long, default_value_t = 0)]
    pub corner: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Relative objective decrease at which the unbalanced oracle stops.
    #[arg(long, default_value_t = DEFAULT_PRECISION)]
    pub precision: f64,
}

/// Synthetic scenario parameters.
#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub n_teacher: usize,
    #[arg(long, default_value_t = 15)]
    pub n_student: usize,
    #[arg(long, default_value_t = 0.005)]
    pub sigma_teacher: f64,
    #[arg(long, default_value_t = 0.05)]
    pub sigma_student: f64,
    #[arg(long, default_value_t = 0.1)]
    pub outlier_fraction: f64,
    /// Fraction of student cells on teacher grid positions.
    #[arg(long, default_value_t = 0.5)]
    pub cell_overlap: f64,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    /// Record wall time per step (outputs are then no longer reproducible).
    #[arg(long)]
    pub wallclock: bool,
}

impl ScenarioArgs {
    fn scenario(&self) -> SyntheticScenario {
        SyntheticScenario {
            seed: self.seed,
            n_teacher: self.n_teacher,
            n_student: self.n_student,
            sigma_teacher: self.sigma_teacher,
            sigma_student_init: self.sigma_student,
            outlier_fraction: self.outlier_fraction,
            cell_overlap: self.cell_overlap,
            ..SyntheticScenario::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, default_value_t = DEFAULT_STEP_SIZE)]
    pub step_size: f64,
    /// Transport loss ε for the OT-trained student.
    #[arg(long, default_value_t = 0.001)]
    pub epsilon: f64,
    /// Transport loss ρ for the OT-trained student.
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["naive", "ot-keypoint"])]
    pub losses: Vec<LossArg>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.001, 0.01])]
    pub epsilons: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.5, 1.0])]
    pub rhos: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [DEFAULT_STEP_SIZE])]
    pub step_sizes: Vec<f64>,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// CSV destination (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Student and teacher prediction files (omit with --random).
    #[arg(num_args = 0..=2)]
    pub files: Vec<PathBuf>,
    /// Check this many seeded random instances instead of files.
    #[arg(long)]
    pub random: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Central-difference half step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub rel_tol: f64,
    #[arg(long, default_value_t = 1e-7)]
    pub abs_floor: f64,
}

/// A failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Schema { .. } => EXIT_SCHEMA,
            Error::UnsupportedSize { .. } => EXIT_SIZE_CAP,
            _ => EXIT_FAILURE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn fail(code: i32, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

type CmdResult = std::result::Result<i32, Failure>;

/// Parses `args` (including the program name) and runs the command,
/// writing results to `out` and diagnostics to `err`. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return e.exit_code();
        }
    };
    if let Err(e) = configure_threads() {
        let _ = writeln!(err, "error: {e}");
        return EXIT_FAILURE;
    }
    let result = match cli.command {
        Command::Loss(a) => cmd_loss(&a, out),
        Command::Oracle(a) => cmd_oracle(&a, out),
        Command::Demo(a) => cmd_demo(&a, out),
        Command::Sweep(a) => cmd_sweep(&a, out),
        Command::GradCheck(a) => cmd_grad_check(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> std::result::Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| fail(EXIT_FAILURE, e.to_string()))?;
    writeln!(out, "{text}").map_err(|e| fail(EXIT_UNWRITABLE, format!("writing output: {e}")))
}

/// Keypoint votes in files are in image pixels; losses work on votes
/// divided by the image size.
fn load(path: &Path) -> std::result::Result<PredictionSet, Failure> {
    Ok(match read_predictions(path)? {
        PredictionSet::Keypoints(s) => PredictionSet::Keypoints(s.normalize_keypoints()?),
        dense => dense,
    })
}

fn load_pair(a: &Path, b: &Path) -> std::result::Result<(PredictionSet, PredictionSet), Failure> {
    let (a_set, b_set) = (load(a)?, load(b)?);
    if a_set.kind_name() != b_set.kind_name() {
        return Err(fail(
            EXIT_KIND_MISMATCH,
            format!(
                "{} holds {} but {} holds {}",
                a.display(),
                a_set.kind_name(),
                b.display(),
                b_set.kind_name()
            ),
        ));
    }
    Ok((a_set, b_set))
}

fn default_kind(set: &PredictionSet) -> LossKind {
    match set {
        PredictionSet::Keypoints(_) => LossKind::OtKeypoint,
        PredictionSet::DenseCodes(_) => LossKind::OtDense,
    }
}

fn kind_fits(kind: LossKind, set: &PredictionSet) -> bool {
    matches!(
        (kind, set),
        (LossKind::Naive | LossKind::OtKeypoint, PredictionSet::Keypoints(_))
            | (LossKind::OtDense, PredictionSet::DenseCodes(_))
    )
}

/// Resolved loss settings of a command.
struct Resolved {
    kind: LossKind,
    cfg: SinkhornConfig,
    options: LossOptions,
    preset: Option<Preset>,
}

fn resolve(
    solver: &SolverArgs,
    loss: Option<LossArg>,
    fallback: LossKind,
) -> std::result::Result<Resolved, Failure> {
    let preset = solver.preset.map(Preset::from);
    let kind = loss
        .map(LossKind::from)
        .or(preset.map(Preset::loss_kind))
        .unwrap_or(fallback);
    let mut cfg = match (preset, kind) {
        (Some(p), _) => p.config(),
        (None, LossKind::OtDense) => SinkhornConfig::dense(),
        (None, _) => SinkhornConfig::keypoint(),
    };
    if let Some(e) = solver.epsilon {
        cfg.epsilon = e;
    }
    if let Some(r) = solver.rho {
        cfg.rho = r;
    }
    if let Some(n) = solver.max_iter {
        cfg.max_iter = n;
    }
    if let Some(t) = solver.tol {
        cfg.tol = t;
    }
    cfg.norm = Norm::from_exponent(solver.p)?;
    cfg.debiased = !solver.raw;
    cfg.validate()?;
    let options = LossOptions {
        block: solver.block,
        ..LossOptions::default()
    };
    Ok(Resolved {
        kind,
        cfg,
        options,
        preset,
    })
}

#[derive(Serialize)]
struct LossOutput<'a> {
    loss: LossKind,
    preset: Option<Preset>,
    epsilon: f64,
    rho: f64,
    p: u32,
    debiased: bool,
    /// Weight of the distillation term under the preset.
    loss_weight: Option<f64>,
    #[serde(flatten)]
    report: &'a DistillLossReport,
}

fn cmd_loss(a: &LossArgs, out: &mut dyn Write) -> CmdResult {
    let (student, teacher) = load_pair(&a.student, &a.teacher)?;
    let r = resolve(&a.solver, a.loss, default_kind(&student))?;
    if !kind_fits(r.kind, &student) {
        return Err(fail(
            EXIT_KIND_MISMATCH,
            format!("loss {} does not apply to {} files", r.kind, student.kind_name()),
        ));
    }
    let report = distill_loss(r.kind, &student, &teacher, &r.cfg, &r.options)?;
    print_json(
        out,
        &LossOutput {
            loss: r.kind,
            preset: r.preset,
            epsilon: r.cfg.epsilon,
            rho: r.cfg.rho,
            p: r.cfg.norm.exponent(),
            debiased: r.cfg.debiased,
            loss_weight: r.preset.map(Preset::loss_weight),
            report: &report,
        },
    )?;
    if a.strict && !report.converged {
        return Err(fail(EXIT_NOT_CONVERGED, "a transport solve did not converge"));
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct OracleOutput {
    mode: &'static str,
    value: f64,
    iterations: usize,
    rows: usize,
    cols: usize,
    plan: Vec<Vec<f64>>,
}

fn oracle_cloud(set: &PredictionSet, corner: usize, block: usize) -> std::result::Result<WeightedPointSet, Failure> {
    let cloud = match set {
        PredictionSet::Keypoints(s) => s.extract_corner_cloud(corner)?,
        PredictionSet::DenseCodes(s) => pool_dense(s, block)?,
    };
    Ok(cloud.normalized(WeightMode::UnitMass, DEFAULT_WEIGHT_FLOOR)?.0)
}

fn cmd_oracle(a: &OracleArgs, out: &mut dyn Write) -> CmdResult {
    let (a_set, b_set) = load_pair(&a.a, &a.b)?;
    let x = oracle_cloud(&a_set, a.corner, a.solver.block)?;
    let y = oracle_cloud(&b_set, a.corner, a.solver.block)?;
    let r = resolve(&a.solver, None, default_kind(&a_set))?;
    let (mode, result) = match a.mode {
        OracleMode::Balanced => ("balanced", exact_balanced_ot(&x, &y, r.cfg.norm)?),
        OracleMode::Unbalanced => ("unbalanced", primal_uot_oracle(&x, &y, &r.cfg, a.precision)?),
    };
    print_json(
        out,
        &OracleOutput {
            mode,
            value: result.value,
            iterations: result.iterations,
            rows: result.plan.nrows(),
            cols: result.plan.ncols(),
            plan: result.plan.rows().into_iter().map(|r| r.to_vec()).collect(),
        },
    )?;
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub loss: LossKind,
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub initial_divergence: f64,
    pub final_divergence: f64,
    pub initial_corner_error: f64,
    pub final_corner_error: f64,
    pub failure: Option<String>,
}

impl RunSummary {
    fn of(run: &TrainingRun) -> Self {
        let records = &run.trajectory.records;
        let first = records.first();
        let last = records.last();
        let pick = |r: Option<&crate::harness::TrajectoryRecord>, f: fn(&crate::harness::TrajectoryRecord) -> f64| {
            r.map_or(f64::NAN, f)
        };
        Self {
            loss: run.loss_kind,
            steps: records.len(),
            initial_loss: pick(first, |r| r.loss),
            final_loss: pick(last, |r| r.loss),
            initial_divergence: pick(first, |r| r.divergence),
            final_divergence: pick(last, |r| r.divergence),
            initial_corner_error: pick(first, |r| r.corner_error),
            final_corner_error: pick(last, |r| r.corner_error),
            failure: run.failure.clone(),
        }
    }
}

#[derive(Serialize)]
struct DemoSummary<'a> {
    scenario: &'a SyntheticScenario,
    epsilon: f64,
    rho: f64,
    step_size: f64,
    naive: RunSummary,
    ot_keypoint: RunSummary,
}

fn create_file(path: &Path) -> std::result::Result<std::io::BufWriter<fs::File>, Failure> {
    fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| fail(EXIT_UNWRITABLE, format!("cannot write {}: {e}", path.display())))
}

fn write_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    fail(EXIT_UNWRITABLE, format!("cannot write {}: {e}", path.display()))
}

fn cmd_demo(a: &DemoArgs, out: &mut dyn Write) -> CmdResult {
    let s = a.scenario.scenario();
    s.validate()?;
    fs::create_dir_all(&a.out).map_err(|e| write_failure(&a.out, e))?;
    let options = TrainOptions {
        steps: a.scenario.steps,
        step_size: a.step_size,
        record_wallclock: a.scenario.wallclock,
        ..TrainOptions::default()
    };
    let ot_cfg = SinkhornConfig::keypoint().with_eps_rho(a.epsilon, a.rho);
    ot_cfg.validate()?;
    let (naive, ot) = rayon::join(
        || train_student(&s, LossKind::Naive, &SinkhornConfig::keypoint(), &options),
        || train_student(&s, LossKind::OtKeypoint, &ot_cfg, &options),
    );
    let (naive, ot) = (naive?, ot?);

    for (run, tag) in [(&naive, "naive"), (&ot, "ot_keypoint")] {
        let path = a.out.join(format!("trajectory_{tag}.csv"));
        write_trajectory_csv(&run.trajectory, create_file(&path)?).map_err(|e| write_failure(&path, e))?;
        let path = a.out.join(format!("scatter_{tag}.csv"));
        write_scatter_csv(&s, run, create_file(&path)?).map_err(|e| write_failure(&path, e))?;
    }
    let summary = DemoSummary {
        scenario: &s,
        epsilon: a.epsilon,
        rho: a.rho,
        step_size: a.step_size,
        naive: RunSummary::of(&naive),
        ot_keypoint: RunSummary::of(&ot),
    };
    let path = a.out.join("summary.json");
    let mut text = serde_json::to_string_pretty(&summary).map_err(|e| fail(EXIT_FAILURE, e.to_string()))?;
    text.push('\n');
    fs::write(&path, &text).map_err(|e| write_failure(&path, e))?;
    out.write_all(text.as_bytes())
        .map_err(|e| fail(EXIT_UNWRITABLE, format!("writing output: {e}")))?;
    Ok(EXIT_OK)
}

fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> CmdResult {
    let s = a.scenario.scenario();
    let grid = SweepGrid {
        losses: a.losses.iter().copied().map(LossKind::from).collect(),
        epsilons: a.epsilons.clone(),
        rhos: a.rhos.clone(),
        step_sizes: a.step_sizes.clone(),
    };
    if grid.losses.contains(&LossKind::OtDense) {
        return Err(fail(
            EXIT_KIND_MISMATCH,
            "the synthetic student predicts keypoints; sweep naive and ot-keypoint",
        ));
    }
    let base = TrainOptions {
        steps: a.scenario.steps,
        record_wallclock: a.scenario.wallclock,
        ..TrainOptions::default()
    };
    let rows = sweep(&s, &grid, &base)?;
    match &a.out {
        Some(path) => write_sweep_csv(&rows, create_file(path)?).map_err(|e| write_failure(path, e))?,
        None => write_sweep_csv(&rows, &mut *out).map_err(|e| fail(EXIT_UNWRITABLE, e.to_string()))?,
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct GradCheckInstance {
    index: usize,
    seed: Option<u64>,
    #[serde(flatten)]
    report: GradCheckReport,
}

#[derive(Serialize)]
struct GradCheckOutput {
    loss: LossKind,
    epsilon: f64,
    rho: f64,
    instances: Vec<GradCheckInstance>,
    max_rel_error: f64,
    passed: bool,
}

fn cmd_grad_check(a: &GradCheckArgs, out: &mut dyn Write) -> CmdResult {
    let settings = GradCheckSettings {
        step: a.step,
        rel_tol: a.rel_tol,
        abs_floor: a.abs_floor,
    };
    let mut pairs = Vec::new();
    let kind;
    let r;
    match (a.random, a.files.as_slice()) {
        (Some(n), []) => {
            r = resolve(&a.solver, a.loss, LossKind::OtKeypoint)?;
            kind = r.kind;
            for i in 0..n {
                let seed = a.seed.wrapping_add(i as u64);
                let (s, t) = random_instance(kind, seed)?;
                pairs.push((Some(seed), s, t));
            }
        }
        (None, [student, teacher]) => {
            let (s, t) = load_pair(student, teacher)?;
            r = resolve(&a.solver, a.loss, default_kind(&s))?;
            kind = r.kind;
            if !kind_fits(kind, &s) {
                return Err(fail(
                    EXIT_KIND_MISMATCH,
                    format!("loss {kind} does not apply to {} files", s.kind_name()),
                ));
            }
            pairs.push((None, s, t));
        }
        _ => {
            return Err(fail(
                EXIT_SCHEMA,
                "give either a student and a teacher file or --random N",
            ))
        }
    }
    let instances = pairs
        .iter()
        .enumerate()
        .map(|(index, (seed, s, t))| {
            gradient_check(kind, s, t, &r.cfg, &r.options, &settings).map(|report| GradCheckInstance {
                index,
                seed: *seed,
                report,
            })
        })
        .collect::<crate::Result<Vec<_>>>()?;
    let max_rel_error = instances.iter().map(|i| i.report.max_rel_error).fold(0.0, f64::max);
    let passed = instances.iter().all(|i| i.report.passed);
    print_json(
        out,
        &GradCheckOutput {
            loss: kind,
            epsilon: r.cfg.epsilon,
            rho: r.cfg.rho,
            instances,
            max_rel_error,
            passed,
        },
    )?;
    Ok(if passed { EXIT_OK } else { EXIT_FAILURE })
}
