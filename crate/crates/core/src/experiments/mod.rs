//! Batch experiments producing CSV tables: pooling approximation, the
//! stability grid, convergence in `K`, runtimes, and synthetic training.
//!
//! Every `cmd_*` function builds its tables in memory; [`run_command`]
//! writes them (atomically) together with a `manifest.json`.

mod config;
mod report;

use std::fmt;
use std::hint::black_box;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use config::{
    all_runs, ApproxConfig, BenchConfig, ConvergenceConfig, ExperimentConfig, PriorKind, RuleKind,
    SolverRun, StabilityConfig, TrainConfig,
};
pub use report::{fmt_f64, write_atomic, write_json_atomic, CsvReport};

use crate::error::{Error, Result};
use crate::learning::{
    train_with_state, LabelRule, PriorMode, ReparamState, SyntheticTask, TrainOptions,
    WeightSharing, DEFAULT_EPS,
};
use crate::numerics::{DenseMatrix, SimplexVector};
use crate::pooling::{
    argmax_cols, attention_pool, max_pool, mean_pool, mixed_pool, pool_with_plan, presets,
    weighted_pool, AttentionParams, PooledVector,
};
use crate::solver::{uot_objective, Solver, UotParams};

pub const APPROX_PLAN_HEADER: &[&str] = &["row", "col", "truth", "plan"];
pub const APPROX_SUMMARY_HEADER: &[&str] = &[
    "target",
    "solver",
    "plan_max_abs_error",
    "pooled_max_abs_error",
    "total_mass",
    "has_nan",
];
pub const STABILITY_HEADER: &[&str] = &[
    "solver",
    "reg",
    "alpha0",
    "alpha12",
    "has_nan",
    "total_mass",
];
pub const CONVERGENCE_HEADER: &[&str] = &["solver", "reg", "k_iters", "objective"];
pub const BENCH_HEADER: &[&str] = &["method", "k_iters", "mean_ms", "std_ms", "median_ms"];
pub const TRAIN_HEADER: &[&str] = &["epoch", "loss", "status"];

pub const BENCH_OMISSION_NOTE: &str = "only in-scope poolings are timed; learned neural \
     pooling baselines are omitted";

/// CSV schemas, one line per file, as shown by `--help`.
pub const SCHEMA_HELP: &str = "\
approx:      approx_<target>_<solver>.csv  row,col,truth,plan
             approx_summary.csv  target,solver,plan_max_abs_error,pooled_max_abs_error,total_mass,has_nan
stability:   stability.csv  solver,reg,alpha0,alpha12,has_nan,total_mass
convergence: convergence.csv  solver,reg,k_iters,objective
bench:       bench.csv  method,k_iters,mean_ms,std_ms,median_ms
train:       train.csv  epoch,loss,status";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Approx,
    Stability,
    Convergence,
    Bench,
    Train,
}

impl Command {
    pub const ALL: [Command; 5] = [
        Self::Approx,
        Self::Stability,
        Self::Convergence,
        Self::Bench,
        Self::Train,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Approx => "approx",
            Self::Stability => "stability",
            Self::Convergence => "convergence",
            Self::Bench => "bench",
            Self::Train => "train",
        }
    }

    pub fn reports(self, config: &ExperimentConfig) -> Result<Vec<CsvReport>> {
        match self {
            Self::Approx => cmd_approx(config),
            Self::Stability => cmd_stability(config).map(|r| vec![r]),
            Self::Convergence => cmd_convergence(config).map(|r| vec![r]),
            Self::Bench => cmd_bench(config).map(|r| vec![r]),
            Self::Train => cmd_train(config).map(|r| vec![r]),
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub command: Command,
    pub version: &'static str,
    pub seed: u64,
    pub files: Vec<String>,
    pub config: ExperimentConfig,
    pub notes: Vec<String>,
}

/// Runs `command` and writes its CSV files plus `manifest.json` into
/// `out_dir`, creating the directory if needed. Nothing is written unless
/// every table was computed.
pub fn run_command(
    command: Command,
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<Manifest> {
    config.validate()?;
    let reports = command.reports(config)?;
    std::fs::create_dir_all(out_dir)?;
    for report in &reports {
        report.write_atomic(out_dir)?;
    }
    let mut notes = Vec::new();
    if command == Command::Bench {
        notes.push(BENCH_OMISSION_NOTE.to_string());
    }
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: config.seed,
        files: reports.iter().map(|r| r.name().to_string()).collect(),
        config: config.clone(),
        notes,
    };
    write_json_atomic(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Independent stream per subcommand so that changing one experiment does
/// not shift the inputs of another.
fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `rows x cols` matrix with i.i.d. uniform [0, 1) entries.
pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Result<DenseMatrix> {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.gen())
}

fn random_simplex(rng: &mut impl Rng, dim: usize) -> Result<SimplexVector> {
    let raw: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.05..1.0)).collect();
    SimplexVector::from_unnormalized(&raw)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, |m, d| {
            if d.is_nan() || m.is_nan() {
                f64::NAN
            } else {
                m.max(d)
            }
        })
}

/// Ground-truth plans and reference outputs for the approximation targets.
struct Target {
    name: &'static str,
    params: UotParams,
    truth: DenseMatrix,
    pooled: PooledVector,
}

fn approx_targets(x: &DenseMatrix, q0: SimplexVector, k: usize) -> Result<Vec<Target>> {
    let (d, n) = x.shape();
    let cell = 1.0 / (d * n) as f64;
    let argmax = argmax_cols(x);
    let weights = q0.as_slice().to_vec();
    Ok(vec![
        Target {
            name: "mean",
            params: presets::mean(d, n, k)?,
            truth: DenseMatrix::filled(d, n, cell)?,
            pooled: mean_pool(x),
        },
        Target {
            name: "max",
            params: presets::max(d, n, k)?,
            truth: DenseMatrix::from_fn(
                d,
                n,
                |r, c| if argmax[r] == c { 1.0 / d as f64 } else { 0.0 },
            )?,
            pooled: max_pool(x),
        },
        Target {
            name: "attention",
            pooled: weighted_pool(x, &q0)?,
            params: presets::attention(d, q0, k)?,
            truth: DenseMatrix::from_fn(d, n, |_, c| weights[c] / d as f64)?,
        },
    ])
}

/// Plans of the mean, max and attention configurations against their
/// ground truth, for both solvers.
pub fn cmd_approx(config: &ExperimentConfig) -> Result<Vec<CsvReport>> {
    let c = &config.approx;
    let mut rng = rng_for(config.seed, 1);
    let x = random_matrix(&mut rng, c.d, c.n)?;
    let q0 = random_simplex(&mut rng, c.n)?;
    let mut summary = CsvReport::new("approx_summary.csv", APPROX_SUMMARY_HEADER);
    let mut reports = Vec::new();
    for target in approx_targets(&x, q0, c.k_iters)? {
        for solver in [Solver::Sinkhorn, Solver::Badmm] {
            let (plan, diag) = solver.solve(&x, &target.params)?;
            let mut table = CsvReport::new(
                format!("approx_{}_{}.csv", target.name, solver.as_str()),
                APPROX_PLAN_HEADER,
            );
            for r in 0..c.d {
                for col in 0..c.n {
                    table.push(vec![
                        r.to_string(),
                        col.to_string(),
                        fmt_f64(target.truth.get(r, col)),
                        fmt_f64(plan.matrix().get(r, col)),
                    ])?;
                }
            }
            reports.push(table);
            let plan_err = max_abs_diff(plan.matrix().as_slice(), target.truth.as_slice());
            let pooled_err = pool_with_plan(&x, &plan)
                .map(|p| p.max_abs_diff(&target.pooled))
                .unwrap_or(f64::NAN);
            summary.push(vec![
                target.name.to_string(),
                solver.as_str().to_string(),
                fmt_f64(plan_err),
                fmt_f64(pooled_err),
                fmt_f64(diag.total_mass),
                diag.has_nan.to_string(),
            ])?;
        }
    }
    reports.push(summary);
    Ok(reports)
}

/// `has_nan` and total mass over the `(alpha0, alpha1 = alpha2)` grid.
pub fn cmd_stability(config: &ExperimentConfig) -> Result<CsvReport> {
    let c = &config.stability;
    let mut rng = rng_for(config.seed, 2);
    let x = random_matrix(&mut rng, c.d, c.n)?;
    let mut report = CsvReport::new("stability.csv", STABILITY_HEADER);
    for run in all_runs() {
        for &a0 in &c.grid {
            for &a12 in &c.grid {
                let rho = c.rho.unwrap_or(a0);
                let params = UotParams::uniform(c.d, c.n, c.k_iters, [a0, a12, a12], rho, run.reg)?;
                let (_, diag) = run.solver.solve(&x, &params)?;
                report.push(vec![
                    run.solver.as_str().to_string(),
                    run.reg.as_str().to_string(),
                    fmt_f64(a0),
                    fmt_f64(a12),
                    diag.has_nan.to_string(),
                    fmt_f64(diag.total_mass),
                ])?;
            }
        }
    }
    Ok(report)
}

/// Mean UOT objective over a batch at the plan returned after `K` modules.
pub fn cmd_convergence(config: &ExperimentConfig) -> Result<CsvReport> {
    let c = &config.convergence;
    let mut rng = rng_for(config.seed, 3);
    let batch: Vec<DenseMatrix> = (0..c.batch)
        .map(|_| random_matrix(&mut rng, c.d, c.n))
        .collect::<Result<_>>()?;
    let mut report = CsvReport::new("convergence.csv", CONVERGENCE_HEADER);
    let weights = [c.alpha0, c.alpha12, c.alpha12];
    for run in &c.runs {
        for &k in &c.k_list {
            let params = UotParams::uniform(c.d, c.n, k, weights, c.rho, run.reg)?;
            let mut total = 0.0;
            for x in &batch {
                let (plan, _) = run.solver.solve(x, &params)?;
                total += uot_objective(
                    x,
                    &plan,
                    c.alpha0,
                    c.alpha12,
                    c.alpha12,
                    params.p0(),
                    params.q0(),
                    run.reg,
                )
                .unwrap_or(f64::NAN);
            }
            report.push(vec![
                run.solver.as_str().to_string(),
                run.reg.as_str().to_string(),
                k.to_string(),
                fmt_f64(total / c.batch as f64),
            ])?;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub mean_ms: f64,
    pub std_ms: f64,
    pub median_ms: f64,
}

/// Runs `f` `warmups` times untimed, then `trials` times timed.
pub fn time_trials(
    warmups: usize,
    trials: usize,
    mut f: impl FnMut() -> Result<()>,
) -> Result<Timing> {
    for _ in 0..warmups {
        f()?;
    }
    let mut samples = Vec::with_capacity(trials);
    for _ in 0..trials {
        let start = Instant::now();
        f()?;
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let m = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / m;
    let var = if samples.len() > 1 {
        samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    samples.sort_by(f64::total_cmp);
    let mid = samples.len() / 2;
    let median = if samples.len() % 2 == 0 {
        (samples[mid - 1] + samples[mid]) / 2.0
    } else {
        samples[mid]
    };
    Ok(Timing {
        mean_ms: mean,
        std_ms: var.sqrt(),
        median_ms: median,
    })
}

/// Wall-clock time to pool a batch with each method.
pub fn cmd_bench(config: &ExperimentConfig) -> Result<CsvReport> {
    let c = &config.bench;
    let mut rng = rng_for(config.seed, 4);
    let batch: Vec<DenseMatrix> = (0..c.batch)
        .map(|_| random_matrix(&mut rng, c.d, c.n))
        .collect::<Result<_>>()?;
    let attention = AttentionParams {
        v_mat: DenseMatrix::from_fn(c.d, c.d, |_, _| rng.gen_range(-0.1..0.1))?,
        w_vec: (0..c.d).map(|_| rng.gen_range(-0.1..0.1)).collect(),
        u_mat: None,
    };
    let mut report = CsvReport::new("bench.csv", BENCH_HEADER);
    let mut push = |method: &str, k: Option<usize>, t: Timing| {
        report.push(vec![
            method.to_string(),
            k.map(|k| k.to_string()).unwrap_or_default(),
            fmt_f64(t.mean_ms),
            fmt_f64(t.std_ms),
            fmt_f64(t.median_ms),
        ])
    };
    let over_batch = |f: &dyn Fn(&DenseMatrix) -> Result<PooledVector>| {
        time_trials(c.warmups, c.trials, || {
            for x in &batch {
                black_box(f(black_box(x))?);
            }
            Ok(())
        })
    };
    push("mean", None, over_batch(&|x| Ok(mean_pool(x)))?)?;
    push("max", None, over_batch(&|x| Ok(max_pool(x)))?)?;
    push(
        "attention",
        None,
        over_batch(&|x| attention_pool(x, &attention))?,
    )?;
    push("mixed", None, over_batch(&|x| mixed_pool(x, 0.5))?)?;
    for solver in [Solver::Sinkhorn, Solver::Badmm] {
        for &k in &c.k_list {
            let params = presets::mean(c.d, c.n, k)?;
            let t = over_batch(&|x| {
                let (plan, _) = solver.solve(x, &params)?;
                pool_with_plan(x, &plan)
            })?;
            push(&format!("uot_{}", solver.as_str()), Some(k), t)?;
        }
    }
    Ok(report)
}

/// Loss trace of the synthetic training run. A non-finite loss ends the
/// table with a `non_finite` row instead of failing the command.
pub fn cmd_train(config: &ExperimentConfig) -> Result<CsvReport> {
    let c = &config.train;
    let rule = match c.rule {
        RuleKind::Max => LabelRule::max_balanced(0, c.bag_size),
        RuleKind::Mean => LabelRule::mean_balanced(0),
    };
    let task = SyntheticTask {
        n_bags: c.n_bags,
        bag_size: c.bag_size,
        dim: c.dim,
        rule,
        seed: config.seed,
    };
    let sharing = if c.shared_weights {
        WeightSharing::Shared
    } else {
        WeightSharing::PerModule
    };
    let priors = match c.priors {
        PriorKind::FixedUniform => PriorMode::FixedUniform,
        PriorKind::LearnedAttention => PriorMode::LearnedAttention(AttentionParams::zeros(c.dim)?),
    };
    let state = ReparamState::new(c.k_iters, sharing, priors, c.reg)?;
    let options = TrainOptions {
        epochs: c.epochs,
        lr: c.lr,
        eps: DEFAULT_EPS,
        freeze_pooling: c.freeze_pooling,
    };
    let (trace, failed_at) = match train_with_state(&task, state, c.solver, &options) {
        Ok(outcome) => (outcome.loss_trace, None),
        Err(Error::NonFiniteLoss { epoch, trace }) => (trace, Some(epoch)),
        Err(e) => return Err(e),
    };
    let mut report = CsvReport::new("train.csv", TRAIN_HEADER);
    for (epoch, loss) in trace.iter().enumerate() {
        report.push(vec![epoch.to_string(), fmt_f64(*loss), "ok".into()])?;
    }
    if let Some(epoch) = failed_at {
        report.push(vec![
            epoch.to_string(),
            fmt_f64(f64::NAN),
            "non_finite".into(),
        ])?;
    }
    Ok(report)
}
