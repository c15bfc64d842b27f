//! The `abnbk` experiment harness: instance generation, single runs,
//! benchmark sweeps and hypothesis diagnostics, all writing CSV.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::diagnostics::{self, ContractionAudit, EtaEstimate, EtaFactor, GradientReport};
use crate::generators::{GeneratorKind, GeneratorSpec, ProblemInstance};
use crate::io::{read_instance, write_history_csv, write_instance, write_signal_csv};
use crate::priors::{PriorFunction, SparsePrior};
use crate::selection::{BlockNorm, SelectionRule, StepsizePolicy};
use crate::solver::{initial_dual, run, Method, RunRecord, RunStatus, SolverConfig};
use crate::systems::NonlinearSystem;
use crate::{Error, Result};

/// Largest bench size run without `--allow-large`.
pub const DESK_CAP: (usize, usize) = (400, 200);

/// Upper bound on stored reals `m·n²` for dense quadratic forms.
pub const MAX_DENSE_STORAGE: u128 = 4_000_000_000;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_MAX_ITERS: u8 = 2;
pub const EXIT_DEGENERATE: u8 = 3;
pub const EXIT_VALIDATION: u8 = 4;

pub const TABLE_HEADER: [&str; 12] = [
    "m",
    "n",
    "sp",
    "kind",
    "solver",
    "reps",
    "it_median",
    "it_mean",
    "elapsed_median_ns",
    "converged_frac",
    "failed",
    "status_counts",
];

pub const SUMMARY_HEADER: [&str; 7] = [
    "status",
    "iterations",
    "rel_res_sq",
    "sol_err",
    "fallback_steps",
    "elapsed_ns",
    "message",
];

pub const AUDIT_HEADER: [&str; 7] = ["k", "d_k", "d_next", "bound_factor", "kappa", "satisfied", "monotone"];

pub const DIAGNOSIS_HEADER: [&str; 14] = [
    "eta",
    "eta_samples",
    "eta_protocol",
    "grad_trials",
    "grad_max_rel_dev",
    "sigma",
    "smooth_modulus",
    "stepsize",
    "step_value",
    "block_norm",
    "eta_factor",
    "steps",
    "satisfied_frac",
    "monotone_frac",
];

#[derive(Debug, Parser)]
#[command(name = "abnbk", version, about = "Bregman-Kaczmarz solvers for sparse nonlinear systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a test instance and write it to a file.
    Generate(GenerateArgs),
    /// Solve one instance; writes history.csv, signal.csv and summary.csv.
    Run(RunArgs),
    /// Run a solver comparison over seeded repetitions; writes table.csv.
    Bench(BenchArgs),
    /// Estimate eta along a run and audit the per-step contraction.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ProblemArgs {
    #[arg(long, default_value = "gaussian")]
    pub kind: GeneratorKind,
    #[arg(long, default_value_t = 200)]
    pub m: usize,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Fraction of nonzero entries in the ground truth.
    #[arg(long, default_value_t = 0.05)]
    pub sp: f64,
    /// Permit sizes beyond the desk cap of 400×200.
    #[arg(long)]
    pub allow_large: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BlockNormArg {
    Frobenius,
    Spectral,
}

impl From<BlockNormArg> for BlockNorm {
    fn from(b: BlockNormArg) -> Self {
        match b {
            BlockNormArg::Frobenius => BlockNorm::Frobenius,
            BlockNormArg::Spectral => BlockNorm::Spectral,
        }
    }
}

/// Overrides applied on top of a solver preset.
#[derive(Debug, Clone, Args)]
pub struct TuningArgs {
    /// Constant stepsize (abnbk-c, nbk, mrnbk).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Adaptive stepsize factor (abnbk-a).
    #[arg(long)]
    pub delta: Option<f64>,
    /// Greedy block threshold (abnbk-c, abnbk-a).
    #[arg(long)]
    pub theta: Option<f64>,
    /// Block normalization for constant stepsizes.
    #[arg(long, value_enum)]
    pub block_norm: Option<BlockNormArg>,
    /// Weight of the l1 term in the sparse prior.
    #[arg(long, default_value_t = 2.0)]
    pub lambda: f64,
    /// Threshold on the squared relative residual.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iters: usize,
}

impl TuningArgs {
    pub fn config(&self, method: Method, seed: u64) -> SolverConfig {
        let mut cfg = method.preset(seed);
        match &mut cfg.stepsize {
            StepsizePolicy::Constant { alpha } => {
                if let Some(a) = self.alpha {
                    *alpha = a;
                }
            }
            StepsizePolicy::Adaptive { delta } => {
                if let Some(d) = self.delta {
                    *delta = d;
                }
            }
        }
        if let (SelectionRule::GreedyBlock { theta }, Some(t)) = (&mut cfg.selection, self.theta) {
            *theta = t;
        }
        if let Some(b) = self.block_norm {
            cfg.block_norm = b.into();
        }
        cfg.tol = self.tol;
        cfg.max_iters = self.max_iters;
        cfg
    }

    pub fn prior(&self) -> Result<SparsePrior> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be finite and nonnegative, got {}", self.lambda)));
        }
        Ok(SparsePrior::new(self.lambda))
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Instance file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    /// Read the instance from a file instead of generating it.
    #[arg(long)]
    pub instance: Option<PathBuf>,
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Seed for the generated instance and the run (default: the instance's seed).
    #[arg(long)]
    pub seed: Option<u64>,
}

impl SourceArgs {
    /// The instance and the run seed.
    pub fn load(&self) -> Result<(ProblemInstance, u64)> {
        match &self.instance {
            Some(path) => {
                let inst = read_instance(path)?;
                let seed = self.seed.or(inst.spec.map(|s| s.seed)).unwrap_or(0);
                Ok((inst, seed))
            }
            None => {
                let seed = self.seed.unwrap_or(0);
                let spec = problem_spec(&self.problem, seed)?;
                Ok((ProblemInstance::generate(&spec)?, seed))
            }
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value = "abnbk-a")]
    pub solver: Method,
    #[command(flatten)]
    pub tuning: TuningArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long, default_value = "gaussian")]
    pub kind: GeneratorKind,
    /// Row counts, paired with --n.
    #[arg(long, value_delimiter = ',', default_value = "200")]
    pub m: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "100")]
    pub n: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.05")]
    pub sp: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "nbk,mrnbk,abnbk-c,abnbk-a")]
    pub solver: Vec<Method>,
    /// Repetitions; repetition r uses seed `seed + r` for instance and run.
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[arg(long)]
    pub allow_large: bool,
    /// Also write every run's history under curves/.
    #[arg(long)]
    pub curves: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EtaFactorArg {
    /// (1 + eta)^2
    Squared,
    /// 1 + eta^2
    Sum,
}

#[derive(Debug, Clone, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value = "abnbk-c")]
    pub solver: Method,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[arg(long, value_enum, default_value = "squared")]
    pub eta_factor: EtaFactorArg,
    /// Estimate eta row by row instead of over each block.
    #[arg(long)]
    pub per_row: bool,
    #[arg(long, default_value_t = 100)]
    pub grad_trials: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Validates sizes and the desk cap.
pub fn problem_spec(p: &ProblemArgs, seed: u64) -> Result<GeneratorSpec> {
    let spec = GeneratorSpec::new(p.kind, p.m, p.n, p.sp, seed);
    check_size(&spec, p.allow_large)?;
    Ok(spec)
}

pub fn check_size(spec: &GeneratorSpec, allow_large: bool) -> Result<()> {
    spec.validate()?;
    if !allow_large && (spec.m > DESK_CAP.0 || spec.n > DESK_CAP.1) {
        return Err(Error::InvalidConfig(format!(
            "size {}x{} exceeds the desk cap {}x{}; pass --allow-large",
            spec.m, spec.n, DESK_CAP.0, DESK_CAP.1
        )));
    }
    if spec.kind == GeneratorKind::Gaussian && spec.storage_len() > MAX_DENSE_STORAGE {
        return Err(Error::InvalidConfig(format!(
            "dense forms need m*n^2 = {} reals, above {MAX_DENSE_STORAGE}",
            spec.storage_len()
        )));
    }
    Ok(())
}

pub fn exit_code_for_status(status: RunStatus) -> u8 {
    match status {
        RunStatus::Converged => EXIT_OK,
        RunStatus::MaxIters => EXIT_MAX_ITERS,
        RunStatus::Degenerate | RunStatus::NonFinite => EXIT_DEGENERATE,
    }
}

pub fn exit_code_for_error(err: &Error) -> u8 {
    match err {
        Error::Io { .. } | Error::Csv { .. } => EXIT_FAILURE,
        Error::DegenerateBlock
        | Error::DegenerateDirection { .. }
        | Error::ZeroGradientRow { .. }
        | Error::AllResidualsZero => EXIT_DEGENERATE,
        _ => EXIT_VALIDATION,
    }
}

/// Runs a parsed command and returns the process exit code.
pub fn execute(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a).map(|_| EXIT_OK),
        Command::Run(a) => cmd_run(a).map(|rec| exit_code_for_status(rec.status)),
        Command::Bench(a) => {
            let table = cmd_bench(a)?;
            println!("wrote {} rows to {}", table.rows.len(), a.out.join("table.csv").display());
            Ok(EXIT_OK)
        }
        Command::Diagnose(a) => cmd_diagnose(a).map(|d| {
            println!("{}", d.audit.verdict());
            EXIT_OK
        }),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn opt_str(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<ProblemInstance> {
    let spec = problem_spec(&args.problem, args.seed)?;
    let inst = ProblemInstance::generate(&spec)?;
    write_instance(&args.out, &inst)?;
    Ok(inst)
}

/// Solves with the standard start `x*_0 ~ N(0, I)` from the run seed.
pub fn solve(inst: &ProblemInstance, prior: &SparsePrior, config: &SolverConfig) -> Result<RunRecord> {
    let x0 = initial_dual(inst.system.num_unknowns(), config.seed);
    run(&inst.system, prior, config, x0, inst.truth.as_deref())
}

pub fn cmd_run(args: &RunArgs) -> Result<RunRecord> {
    let prior = args.tuning.prior()?;
    let (inst, seed) = args.source.load()?;
    let config = args.tuning.config(args.solver, seed);
    config.validate()?;
    let record = solve(&inst, &prior, &config)?;

    ensure_dir(&args.out)?;
    let path = args.out.join("history.csv");
    write_history_csv(&record, create(&path)?).map_err(|e| Error::csv(&path, e))?;
    let path = args.out.join("signal.csv");
    write_signal_csv(&record.final_primal, inst.truth.as_deref(), create(&path)?)
        .map_err(|e| Error::csv(&path, e))?;
    let last = record.terminal();
    write_csv(
        &args.out.join("summary.csv"),
        &SUMMARY_HEADER,
        &[vec![
            record.status.label().to_string(),
            record.iterations.to_string(),
            last.rel_res_sq.to_string(),
            opt_str(last.sol_err),
            record.fallback_steps.to_string(),
            last.elapsed_ns.to_string(),
            record.message.clone().unwrap_or_default(),
        ]],
    )?;
    println!(
        "solver={} status={} iterations={} rel_res_sq={:e}{}",
        args.solver,
        record.status.label(),
        record.iterations,
        last.rel_res_sq,
        last.sol_err.map_or(String::new(), |e| format!(" sol_err={e:e}"))
    );
    Ok(record)
}

/// One (instance spec, solver) cell of a sweep; `spec.seed` is the base seed.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanCell {
    pub spec: GeneratorSpec,
    pub label: String,
    pub config: SolverConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub cells: Vec<PlanCell>,
    pub repetitions: usize,
    pub prior: SparsePrior,
    /// Where per-run histories go, if wanted.
    pub curves_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub spec: GeneratorSpec,
    pub solver: String,
    pub reps: usize,
    pub it_median: f64,
    pub it_mean: f64,
    pub elapsed_median_ns: f64,
    pub converged_frac: f64,
    /// Runs that returned an error; excluded from the statistics.
    pub failed: usize,
    pub statuses: Vec<RunStatus>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComparisonTable {
    pub rows: Vec<TableRow>,
}

impl ComparisonTable {
    pub fn row(&self, solver: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.solver == solver)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.spec.m.to_string(),
                    r.spec.n.to_string(),
                    r.spec.sp.to_string(),
                    r.spec.kind.label().to_string(),
                    r.solver.clone(),
                    r.reps.to_string(),
                    r.it_median.to_string(),
                    r.it_mean.to_string(),
                    r.elapsed_median_ns.to_string(),
                    r.converged_frac.to_string(),
                    r.failed.to_string(),
                    status_counts(&r.statuses),
                ]
            })
            .collect();
        write_csv(path, &TABLE_HEADER, &rows)
    }
}

fn status_counts(statuses: &[RunStatus]) -> String {
    let all = [RunStatus::Converged, RunStatus::MaxIters, RunStatus::Degenerate, RunStatus::NonFinite];
    all.iter()
        .filter_map(|s| {
            let c = statuses.iter().filter(|t| *t == s).count();
            (c > 0).then(|| format!("{}:{c}", s.label()))
        })
        .collect::<Vec<_>>()
        .join(";")
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = v.len() / 2;
    if v.len() % 2 == 1 {
        v[h]
    } else {
        0.5 * (v[h - 1] + v[h])
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 1 {
            return Err(Error::InvalidConfig("repetitions must be at least 1".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &self.cells {
            c.spec.validate()?;
            c.config.validate()?;
            let key = (c.spec.kind.label(), c.spec.m, c.spec.n, c.spec.sp.to_bits(), c.spec.seed, c.label.clone());
            if !seen.insert(key) {
                return Err(Error::InvalidConfig(format!("solver label `{}` repeated for one instance spec", c.label)));
            }
        }
        Ok(())
    }

    /// Runs every cell for every repetition. Repetition `r` uses seed
    /// `spec.seed + r` for both the instance and the run, so all solvers of
    /// one spec see the same instances and starting points. The table is
    /// sorted by `(kind, m, n, sp, solver)`.
    pub fn execute(&self) -> Result<ComparisonTable> {
        self.validate()?;
        if let Some(dir) = &self.curves_dir {
            ensure_dir(dir)?;
        }
        // one job per distinct instance; the solvers for it run in sequence
        let mut groups: Vec<(GeneratorSpec, Vec<usize>)> = Vec::new();
        for (idx, cell) in self.cells.iter().enumerate() {
            match groups.iter_mut().find(|(s, _)| *s == cell.spec) {
                Some((_, members)) => members.push(idx),
                None => groups.push((cell.spec, vec![idx])),
            }
        }
        let jobs: Vec<(usize, usize)> = (0..groups.len())
            .flat_map(|g| (0..self.repetitions).map(move |r| (g, r)))
            .collect();
        let outcomes: Vec<Vec<(usize, usize, Result<RunRecord>)>> = jobs
            .par_iter()
            .map(|&(g, rep)| {
                let (base, members) = &groups[g];
                let seed = base.seed.wrapping_add(rep as u64);
                let spec = GeneratorSpec { seed, ..*base };
                match ProblemInstance::generate(&spec) {
                    Ok(inst) => members
                        .iter()
                        .map(|&c| {
                            let config = SolverConfig { seed, ..self.cells[c].config.clone() };
                            let res = solve(&inst, &self.prior, &config).and_then(|rec| {
                                self.write_curve(&self.cells[c], seed, &rec)?;
                                Ok(rec)
                            });
                            (c, rep, res)
                        })
                        .collect(),
                    Err(e) => {
                        let msg = e.to_string();
                        members
                            .iter()
                            .map(|&c| (c, rep, Err(Error::InvalidConfig(msg.clone()))))
                            .collect()
                    }
                }
            })
            .collect();

        let mut per_cell: Vec<Vec<(usize, Result<RunRecord>)>> = (0..self.cells.len()).map(|_| Vec::new()).collect();
        for (c, rep, res) in outcomes.into_iter().flatten() {
            per_cell[c].push((rep, res));
        }
        let mut rows: Vec<TableRow> = per_cell
            .into_iter()
            .enumerate()
            .map(|(c, mut results)| {
                results.sort_by_key(|(rep, _)| *rep);
                let cell = &self.cells[c];
                let mut its = Vec::new();
                let mut times = Vec::new();
                let mut statuses = Vec::new();
                let mut failed = 0;
                for (rep, res) in results {
                    match res {
                        Ok(rec) => {
                            its.push(rec.iterations as f64);
                            times.push(rec.terminal().elapsed_ns as f64);
                            statuses.push(rec.status);
                        }
                        Err(e) => {
                            log::warn!("{} seed {}: {e}", cell.label, cell.spec.seed.wrapping_add(rep as u64));
                            failed += 1;
                        }
                    }
                }
                let converged = statuses.iter().filter(|s| **s == RunStatus::Converged).count();
                TableRow {
                    spec: cell.spec,
                    solver: cell.label.clone(),
                    reps: self.repetitions,
                    it_median: median(&its),
                    it_mean: mean(&its),
                    elapsed_median_ns: median(&times),
                    converged_frac: converged as f64 / self.repetitions as f64,
                    failed,
                    statuses,
                }
            })
            .collect();
        rows.sort_by(|a, b| {
            (a.spec.kind.label(), a.spec.m, a.spec.n)
                .cmp(&(b.spec.kind.label(), b.spec.m, b.spec.n))
                .then(a.spec.sp.total_cmp(&b.spec.sp))
                .then(a.solver.cmp(&b.solver))
        });
        Ok(ComparisonTable { rows })
    }

    fn write_curve(&self, cell: &PlanCell, seed: u64, rec: &RunRecord) -> Result<()> {
        let Some(dir) = &self.curves_dir else {
            return Ok(());
        };
        let s = &cell.spec;
        let path = dir.join(format!("{}_{}x{}_sp{}_{}_seed{}.csv", s.kind.label(), s.m, s.n, s.sp, cell.label, seed));
        write_history_csv(rec, create(&path)?).map_err(|e| Error::csv(&path, e))
    }
}

pub fn cmd_bench(args: &BenchArgs) -> Result<ComparisonTable> {
    if args.m.len() != args.n.len() {
        return Err(Error::InvalidConfig(format!(
            "--m has {} values but --n has {}",
            args.m.len(),
            args.n.len()
        )));
    }
    let prior = args.tuning.prior()?;
    let mut cells = Vec::new();
    for (&m, &n) in args.m.iter().zip(&args.n) {
        for &sp in &args.sp {
            let spec = GeneratorSpec::new(args.kind, m, n, sp, args.seed);
            check_size(&spec, args.allow_large)?;
            for &method in &args.solver {
                cells.push(PlanCell {
                    spec,
                    label: method.label().to_string(),
                    config: args.tuning.config(method, args.seed),
                });
            }
        }
    }
    let plan = ExperimentPlan {
        cells,
        repetitions: args.reps,
        prior,
        curves_dir: args.curves.then(|| args.out.join("curves")),
    };
    ensure_dir(&args.out)?;
    let table = plan.execute()?;
    table.write_csv(&args.out.join("table.csv"))?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnosis {
    pub record: RunRecord,
    pub eta: EtaEstimate,
    pub gradients: GradientReport,
    pub audit: ContractionAudit,
}

/// Runs the solver with its trajectory, estimates `η` over the pairs
/// `(x_k, x̂)` and `(x_k, x_{k+1})` restricted to each step's block, checks
/// gradients and audits the contraction. Writes eta.csv before the
/// hypothesis check, then audit.csv and diagnosis.csv.
pub fn cmd_diagnose(args: &DiagnoseArgs) -> Result<Diagnosis> {
    let prior = args.tuning.prior()?;
    let (inst, seed) = args.source.load()?;
    let truth = inst
        .truth
        .clone()
        .ok_or_else(|| Error::InvalidConfig("diagnose needs an instance with ground truth".into()))?;
    let mut config = args.tuning.config(args.solver, seed);
    config.record_trajectory = true;
    config.validate()?;
    if args.grad_trials < 1 {
        return Err(Error::InvalidConfig("grad-trials must be at least 1".into()));
    }
    ensure_dir(&args.out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gradients = diagnostics::check_gradients(&inst.system, args.grad_trials, &mut rng);
    let record = solve(&inst, &prior, &config)?;
    let trajectory = record.trajectory.as_deref().unwrap_or_default();
    let samples = diagnostics::trajectory_samples(trajectory, &truth);
    let eta = diagnostics::estimate_eta(&inst.system, &samples, args.per_row)?;
    let protocol = if args.per_row { "trajectory-per-row" } else { "trajectory-block" };
    write_csv(
        &args.out.join("eta.csv"),
        &["eta", "sample_count", "protocol", "max_row"],
        &[vec![
            eta.eta.to_string(),
            eta.sample_count.to_string(),
            protocol.to_string(),
            eta.max_pair.row.map_or(String::new(), |r| r.to_string()),
        ]],
    )?;

    let factor = match args.eta_factor {
        EtaFactorArg::Squared => EtaFactor::OnePlusEtaSquared,
        EtaFactorArg::Sum => EtaFactor::OnePlusEtaSq,
    };
    let audit = diagnostics::contraction_audit(&inst.system, &prior, &record, &truth, eta.eta, &config, factor)?;
    let rows: Vec<Vec<String>> = audit
        .rows
        .iter()
        .map(|r| {
            vec![
                r.k.to_string(),
                r.d_k.to_string(),
                r.d_next.to_string(),
                r.bound_factor.to_string(),
                r.kappa.to_string(),
                r.satisfied.to_string(),
                r.monotone.to_string(),
            ]
        })
        .collect();
    write_csv(&args.out.join("audit.csv"), &AUDIT_HEADER, &rows)?;

    let (kind, value) = match config.stepsize {
        StepsizePolicy::Constant { alpha } => ("constant", alpha),
        StepsizePolicy::Adaptive { delta } => ("adaptive", delta),
    };
    write_csv(
        &args.out.join("diagnosis.csv"),
        &DIAGNOSIS_HEADER,
        &[vec![
            eta.eta.to_string(),
            eta.sample_count.to_string(),
            protocol.to_string(),
            gradients.trials.to_string(),
            gradients.max_rel_deviation.to_string(),
            prior.sigma().to_string(),
            audit.hypotheses.smooth_modulus.to_string(),
            kind.to_string(),
            value.to_string(),
            format!("{:?}", config.block_norm).to_lowercase(),
            match factor {
                EtaFactor::OnePlusEtaSquared => "(1+eta)^2",
                EtaFactor::OnePlusEtaSq => "1+eta^2",
            }
            .to_string(),
            audit.rows.len().to_string(),
            audit.satisfied_fraction().to_string(),
            audit.monotone_fraction().to_string(),
        ]],
    )?;
    Ok(Diagnosis {
        record,
        eta,
        gradients,
        audit,
    })
}
