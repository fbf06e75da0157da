use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::DEFAULT_LR;
use crate::solver::{RegularizerKind, Solver};

fn decades() -> Vec<f64> {
    (-5..=4).map(|e| 10f64.powi(e)).collect()
}

/// Settings for every subcommand. Missing keys take their defaults and
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: String,
    pub approx: ApproxConfig,
    pub stability: StabilityConfig,
    pub convergence: ConvergenceConfig,
    pub bench: BenchConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: "results".into(),
            approx: ApproxConfig::default(),
            stability: StabilityConfig::default(),
            convergence: ConvergenceConfig::default(),
            bench: BenchConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if !value.is_object() {
            return Err(Error::Config("expected a single JSON object".into()));
        }
        let config: Self =
            serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        let dims = [
            ("approx", self.approx.d, self.approx.n),
            ("stability", self.stability.d, self.stability.n),
            ("convergence", self.convergence.d, self.convergence.n),
            ("bench", self.bench.d, self.bench.n),
            ("train", self.train.dim, self.train.bag_size),
        ];
        if let Some((name, _, _)) = dims.iter().find(|(_, d, n)| *d == 0 || *n == 0) {
            return bad(&format!("{name}: dimensions must be positive"));
        }
        if self.approx.k_iters == 0 || self.stability.k_iters == 0 || self.train.k_iters == 0 {
            return bad("k_iters must be at least 1");
        }
        let k_lists = [&self.convergence.k_list, &self.bench.k_list];
        if k_lists.iter().any(|l| l.is_empty() || l.contains(&0)) {
            return bad("K lists must be non-empty and positive");
        }
        if self.convergence.batch == 0 || self.bench.batch == 0 {
            return bad("batch must be at least 1");
        }
        if self.bench.trials == 0 {
            return bad("bench.trials must be at least 1");
        }
        let positive = |v: &f64| v.is_finite() && *v > 0.0;
        if self.stability.grid.is_empty() || !self.stability.grid.iter().all(positive) {
            return bad("stability.grid must hold positive values");
        }
        let c = &self.convergence;
        if ![c.alpha0, c.alpha12, c.rho].iter().all(positive) {
            return bad("convergence weights must be positive");
        }
        if self.stability.rho.is_some_and(|r| !positive(&r)) {
            return bad("stability.rho must be positive");
        }
        if self.convergence.runs.is_empty() {
            return bad("convergence.runs must not be empty");
        }
        if !(self.train.lr.is_finite() && self.train.lr >= 0.0) {
            return bad("train.lr must be nonnegative");
        }
        if self.train.n_bags < 2 {
            return bad("train.n_bags must be at least 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApproxConfig {
    pub d: usize,
    pub n: usize,
    pub k_iters: usize,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        Self {
            d: 5,
            n: 10,
            k_iters: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    pub d: usize,
    pub n: usize,
    pub k_iters: usize,
    /// Values for both `alpha0` and `alpha1 = alpha2`.
    pub grid: Vec<f64>,
    /// BADMM weight; `null` uses the cell's `alpha0`.
    pub rho: Option<f64>,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            d: 5,
            n: 10,
            k_iters: 4,
            grid: decades(),
            rho: None,
        }
    }
}

/// A solver paired with a regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverRun {
    pub solver: Solver,
    pub reg: RegularizerKind,
}

pub fn all_runs() -> Vec<SolverRun> {
    vec![
        SolverRun {
            solver: Solver::Sinkhorn,
            reg: RegularizerKind::Entropic,
        },
        SolverRun {
            solver: Solver::Badmm,
            reg: RegularizerKind::Entropic,
        },
        SolverRun {
            solver: Solver::Badmm,
            reg: RegularizerKind::Quadratic,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub batch: usize,
    pub d: usize,
    pub n: usize,
    pub k_list: Vec<usize>,
    pub alpha0: f64,
    pub alpha12: f64,
    pub rho: f64,
    pub runs: Vec<SolverRun>,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            batch: 50,
            d: 100,
            n: 500,
            k_list: vec![1, 2, 4, 8, 16, 32],
            alpha0: 0.1,
            alpha12: 1e4,
            rho: 0.1,
            runs: all_runs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub batch: usize,
    pub d: usize,
    pub n: usize,
    pub k_list: Vec<usize>,
    pub warmups: usize,
    pub trials: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            batch: 50,
            d: 100,
            n: 500,
            k_list: vec![4, 8],
            warmups: 2,
            trials: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Max,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    FixedUniform,
    LearnedAttention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_bags: usize,
    pub dim: usize,
    pub bag_size: usize,
    pub rule: RuleKind,
    pub epochs: usize,
    pub lr: f64,
    pub k_iters: usize,
    pub solver: Solver,
    pub reg: RegularizerKind,
    pub shared_weights: bool,
    pub priors: PriorKind,
    pub freeze_pooling: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_bags: 200,
            dim: 8,
            bag_size: 16,
            rule: RuleKind::Max,
            epochs: 30,
            lr: DEFAULT_LR,
            k_iters: 4,
            solver: Solver::Badmm,
            reg: RegularizerKind::Entropic,
            shared_weights: false,
            priors: PriorKind::FixedUniform,
            freeze_pooling: false,
        }
    }
}
