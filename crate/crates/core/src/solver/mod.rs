//! Unrolled solvers for the unbalanced optimal transport problem
//!
//! ```text
//! min_P  <-X, P> + a0 R(P) + a1 KL(P 1_N | p0) + a2 KL(P^T 1_D | q0)
//! ```
//!
//! Each solver runs exactly `K` modules with module-specific weights and
//! never stops early. Numerical blow-up is reported through
//! [`SolverDiagnostics`] instead of an error.

mod badmm;
mod sinkhorn;

pub use badmm::{
    badmm_auxiliary_update, badmm_dual_update, badmm_primal_update, badmm_uot, BadmmState,
};
pub use sinkhorn::{
    sinkhorn_step, sinkhorn_uot, sinkhorn_uot_with, SinkhornSchedule, SinkhornState,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{kl_divergence, kl_unchecked, DenseMatrix, SimplexVector};

/// Smoothness regularizer `R(P)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegularizerKind {
    /// `<P, ln P - 1>`
    Entropic,
    /// `<P, P>`
    Quadratic,
}

impl RegularizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Entropic => "entropic",
            Self::Quadratic => "quadratic",
        }
    }
}

/// Which unrolled solver backs a UOT pooling layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Sinkhorn,
    Badmm,
}

impl Solver {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sinkhorn => "sinkhorn",
            Self::Badmm => "badmm",
        }
    }

    pub fn solve(
        self,
        x: &DenseMatrix,
        params: &UotParams,
    ) -> Result<(TransportPlan, SolverDiagnostics)> {
        match self {
            Self::Sinkhorn => sinkhorn_uot(x, params),
            Self::Badmm => badmm_uot(x, params),
        }
    }
}

/// Parameters of one unrolled UOT layer.
///
/// Weights are stored per module: entry `k` of each vector is used by the
/// `k`-th module. `rho` is only read by the BADMM solver.
#[derive(Debug, Clone, PartialEq)]
pub struct UotParams {
    alpha0: Vec<f64>,
    alpha1: Vec<f64>,
    alpha2: Vec<f64>,
    rho: Vec<f64>,
    p0: SimplexVector,
    q0: SimplexVector,
    reg: RegularizerKind,
}

impl UotParams {
    pub fn new(
        alpha0: Vec<f64>,
        alpha1: Vec<f64>,
        alpha2: Vec<f64>,
        rho: Vec<f64>,
        p0: SimplexVector,
        q0: SimplexVector,
        reg: RegularizerKind,
    ) -> Result<Self> {
        let k = alpha0.len();
        if k == 0 {
            return Err(Error::InvalidParams("K must be at least 1".into()));
        }
        for (name, w) in [
            ("alpha0", &alpha0),
            ("alpha1", &alpha1),
            ("alpha2", &alpha2),
            ("rho", &rho),
        ] {
            if w.len() != k {
                return Err(Error::InvalidParams(format!(
                    "{name} has {} entries, expected K = {k}",
                    w.len()
                )));
            }
            if let Some(v) = w.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                return Err(Error::InvalidParams(format!(
                    "{name} entries must be finite and positive, got {v}"
                )));
            }
        }
        Ok(Self {
            alpha0,
            alpha1,
            alpha2,
            rho,
            p0,
            q0,
            reg,
        })
    }

    /// The same weights in every one of the `k` modules.
    pub fn constant(
        k: usize,
        [alpha0, alpha1, alpha2]: [f64; 3],
        rho: f64,
        p0: SimplexVector,
        q0: SimplexVector,
        reg: RegularizerKind,
    ) -> Result<Self> {
        Self::new(
            vec![alpha0; k],
            vec![alpha1; k],
            vec![alpha2; k],
            vec![rho; k],
            p0,
            q0,
            reg,
        )
    }

    /// Constant weights with uniform priors for a `d x n` input.
    pub fn uniform(
        d: usize,
        n: usize,
        k: usize,
        alphas: [f64; 3],
        rho: f64,
        reg: RegularizerKind,
    ) -> Result<Self> {
        Self::constant(
            k,
            alphas,
            rho,
            SimplexVector::uniform(d)?,
            SimplexVector::uniform(n)?,
            reg,
        )
    }

    pub fn k_iters(&self) -> usize {
        self.alpha0.len()
    }

    pub fn alpha0(&self) -> &[f64] {
        &self.alpha0
    }

    pub fn alpha1(&self) -> &[f64] {
        &self.alpha1
    }

    pub fn alpha2(&self) -> &[f64] {
        &self.alpha2
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn p0(&self) -> &SimplexVector {
        &self.p0
    }

    pub fn q0(&self) -> &SimplexVector {
        &self.q0
    }

    pub fn reg(&self) -> RegularizerKind {
        self.reg
    }

    pub fn with_q0(mut self, q0: SimplexVector) -> Self {
        self.q0 = q0;
        self
    }

    pub fn with_reg(mut self, reg: RegularizerKind) -> Self {
        self.reg = reg;
        self
    }

    pub(crate) fn check_dims(&self, x: &DenseMatrix) -> Result<()> {
        if self.p0.dim() != x.rows() || self.q0.dim() != x.cols() {
            return Err(Error::DimensionMismatch(format!(
                "input is {}x{} but priors have dims {} and {}",
                x.rows(),
                x.cols(),
                self.p0.dim(),
                self.q0.dim()
            )));
        }
        Ok(())
    }
}

/// A solved transport plan. Entries are nonnegative, or non-finite when the
/// solve failed (see [`SolverDiagnostics::has_nan`]).
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    plan: DenseMatrix,
}

impl TransportPlan {
    /// Wraps a finite nonnegative matrix.
    pub fn new(plan: DenseMatrix) -> Result<Self> {
        if let Some(index) = plan.as_slice().iter().position(|v| *v < 0.0) {
            return Err(Error::InvalidParams(format!(
                "transport plan entry {index} is negative"
            )));
        }
        Ok(Self { plan })
    }

    pub(crate) fn from_log(log_plan: &DenseMatrix) -> Self {
        Self {
            plan: log_plan.map(f64::exp),
        }
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.plan
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.plan
    }

    pub fn total_mass(&self) -> f64 {
        self.plan.sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverDiagnostics {
    /// Any entry of the final plan or of the objective trace is NaN or infinite.
    pub has_nan: bool,
    /// `||P||_1`
    pub total_mass: f64,
    /// UOT objective after each module, using that module's weights.
    pub objective_trace: Vec<f64>,
    /// `||P 1_N - p0||_1`
    pub marginal_gap_row: f64,
    /// `||P^T 1_D - q0||_1`
    pub marginal_gap_col: f64,
}

impl SolverDiagnostics {
    pub(crate) fn from_plan(plan: &TransportPlan, params: &UotParams, trace: Vec<f64>) -> Self {
        let m = plan.matrix();
        let l1 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
        let has_nan = !m.is_finite() || trace.iter().any(|v| !v.is_finite());
        Self {
            has_nan,
            total_mass: m.sum(),
            marginal_gap_row: l1(&m.row_sums(), params.p0.as_slice()),
            marginal_gap_col: l1(&m.col_sums(), params.q0.as_slice()),
            objective_trace: trace,
        }
    }
}

/// Evaluates the UOT objective at a given plan.
#[allow(clippy::too_many_arguments)]
pub fn uot_objective(
    x: &DenseMatrix,
    plan: &TransportPlan,
    alpha0: f64,
    alpha1: f64,
    alpha2: f64,
    p0: &SimplexVector,
    q0: &SimplexVector,
    reg: RegularizerKind,
) -> Result<f64> {
    let p = plan.matrix();
    if x.shape() != p.shape() {
        return Err(Error::DimensionMismatch(format!(
            "input is {}x{} but plan is {}x{}",
            x.rows(),
            x.cols(),
            p.rows(),
            p.cols()
        )));
    }
    if p0.dim() != p.rows() || q0.dim() != p.cols() {
        return Err(Error::DimensionMismatch(format!(
            "priors have dims {} and {} for a {}x{} plan",
            p0.dim(),
            q0.dim(),
            p.rows(),
            p.cols()
        )));
    }
    if let Some(index) = p.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "plan",
            index,
        });
    }
    for (name, w) in [("alpha0", alpha0), ("alpha1", alpha1), ("alpha2", alpha2)] {
        if !w.is_finite() {
            return Err(Error::InvalidParams(format!("{name} is {w}")));
        }
    }

    let cost: f64 = -x
        .as_slice()
        .iter()
        .zip(p.as_slice())
        .map(|(a, b)| a * b)
        .sum::<f64>();
    let smooth: f64 = match reg {
        RegularizerKind::Entropic => p
            .as_slice()
            .iter()
            .map(|&v| if v == 0.0 { 0.0 } else { v * (v.ln() - 1.0) })
            .sum(),
        RegularizerKind::Quadratic => p.as_slice().iter().map(|v| v * v).sum(),
    };
    let kl_row = kl_divergence(&p.row_sums(), p0.as_slice())?;
    let kl_col = kl_divergence(&p.col_sums(), q0.as_slice())?;
    Ok(cost + alpha0 * smooth + alpha1 * kl_row + alpha2 * kl_col)
}

/// Objective evaluated from `ln P` in one pass. NaN/inf propagate freely.
#[allow(clippy::too_many_arguments)]
pub(crate) fn objective_from_log(
    x: &DenseMatrix,
    log_plan: &DenseMatrix,
    alpha0: f64,
    alpha1: f64,
    alpha2: f64,
    p0: &[f64],
    q0: &[f64],
    reg: RegularizerKind,
) -> f64 {
    let cols = x.cols();
    let mut col_sums = vec![0.0; cols];
    let mut row_sums = Vec::with_capacity(x.rows());
    let mut cost = 0.0;
    let mut smooth = 0.0;
    for (xr, lr) in x.iter_rows().zip(log_plan.iter_rows()) {
        let mut row_sum = 0.0;
        for ((xv, lv), cs) in xr.iter().zip(lr).zip(col_sums.iter_mut()) {
            let pv = lv.exp();
            cost -= xv * pv;
            smooth += match reg {
                RegularizerKind::Entropic if pv == 0.0 => 0.0,
                RegularizerKind::Entropic => pv * (lv - 1.0),
                RegularizerKind::Quadratic => pv * pv,
            };
            row_sum += pv;
            *cs += pv;
        }
        row_sums.push(row_sum);
    }
    cost + alpha0 * smooth
        + alpha1 * kl_unchecked(&row_sums, p0)
        + alpha2 * kl_unchecked(&col_sums, q0)
}
