//! Global pooling operators over a `D x N` input whose columns are samples.
//!
//! Every operator here is an instance of
//! `f(X) = (X ⊙ diag^{-1}(P 1_N) P) 1_N` for some plan `P`: mean pooling uses
//! the uniform plan, max pooling a row-wise one-hot plan, attention pooling
//! a rank-one plan, and UOT pooling the plan returned by a solver.

use crate::error::{Error, Result};
use crate::numerics::{row_conditional, softmax, DenseMatrix, SimplexVector};
use crate::solver::{RegularizerKind, Solver, SolverDiagnostics, TransportPlan, UotParams};

/// Finite stand-in for a weight tending to infinity.
pub const LARGE_WEIGHT: f64 = 1e4;
/// Finite stand-in for a weight tending to zero.
pub const SMALL_WEIGHT: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct PooledVector(Vec<f64>);

impl PooledVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "pooled vector",
                index,
            });
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Attention module `a_X = softmax(w^T tanh(V X))`, plus an optional `U`
/// for the feature prior `p0 = softmax(U X 1_N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub v_mat: DenseMatrix,
    pub w_vec: Vec<f64>,
    pub u_mat: Option<DenseMatrix>,
}

impl AttentionParams {
    /// All-zero parameters; yields uniform weights for any input.
    pub fn zeros(d: usize) -> Result<Self> {
        Ok(Self {
            v_mat: DenseMatrix::zeros(d, d)?,
            w_vec: vec![0.0; d],
            u_mat: Some(DenseMatrix::zeros(d, d)?),
        })
    }

    fn check(&self, d: usize) -> Result<()> {
        let bad = self.v_mat.shape() != (d, d)
            || self.w_vec.len() != d
            || self.u_mat.as_ref().is_some_and(|u| u.shape() != (d, d));
        if bad {
            return Err(Error::DimensionMismatch(format!(
                "attention parameters do not match input dimension {d}"
            )));
        }
        Ok(())
    }

    /// `softmax(U X 1_N)`, or uniform when `U` is absent.
    pub fn feature_prior(&self, x: &DenseMatrix) -> Result<SimplexVector> {
        self.check(x.rows())?;
        match &self.u_mat {
            None => SimplexVector::uniform(x.rows()),
            Some(u) => softmax(&u.mul_vec(&x.row_sums())?),
        }
    }
}

/// Gate for gated mean-max pooling: `omega = sigmoid(u^T mean_pool(X) + c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub u_vec: Vec<f64>,
    pub bias: f64,
}

/// Choice of pooling operator with its configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum PoolingSpec {
    Mean,
    Max,
    Attention(AttentionParams),
    MixedMeanMax { omega: f64 },
    GatedMeanMax(GateParams),
    UotSinkhorn(UotParams),
    UotBadmm(UotParams),
    HierarchicalUot { omega: f64, k_iters: usize },
}

impl PoolingSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Mean => "mean",
            Self::Max => "max",
            Self::Attention(_) => "attention",
            Self::MixedMeanMax { .. } => "mixed",
            Self::GatedMeanMax(_) => "gated",
            Self::UotSinkhorn(_) => "uot_sinkhorn",
            Self::UotBadmm(_) => "uot_badmm",
            Self::HierarchicalUot { .. } => "hierarchical_uot",
        }
    }

    pub fn pool(&self, x: &DenseMatrix) -> Result<PooledVector> {
        match self {
            Self::Mean => Ok(mean_pool(x)),
            Self::Max => Ok(max_pool(x)),
            Self::Attention(params) => attention_pool(x, params),
            Self::MixedMeanMax { omega } => mixed_pool(x, *omega),
            Self::GatedMeanMax(gate) => gated_pool(x, gate),
            Self::UotSinkhorn(params) => uot_pool(x, params, Solver::Sinkhorn).map(|(p, _)| p),
            Self::UotBadmm(params) => uot_pool(x, params, Solver::Badmm).map(|(p, _)| p),
            Self::HierarchicalUot { omega, k_iters } => {
                hierarchical_uot_pool(x, *omega, HierarchySolvers::default(), *k_iters)
            }
        }
    }
}

/// `f(X)[d] = sum_n X[d,n] P[d,n] / sum_m P[d,m]`.
pub fn pool_with_plan(x: &DenseMatrix, plan: &TransportPlan) -> Result<PooledVector> {
    if x.shape() != plan.matrix().shape() {
        return Err(Error::DimensionMismatch(format!(
            "input is {}x{} but plan is {}x{}",
            x.rows(),
            x.cols(),
            plan.matrix().rows(),
            plan.matrix().cols()
        )));
    }
    let conditional = row_conditional(plan.matrix())?;
    let values = x
        .iter_rows()
        .zip(conditional.iter_rows())
        .map(|(xr, cr)| xr.iter().zip(cr).map(|(a, b)| a * b).sum())
        .collect();
    PooledVector::new(values)
}

pub fn mean_pool(x: &DenseMatrix) -> PooledVector {
    let n = x.cols() as f64;
    PooledVector(x.iter_rows().map(|r| r.iter().sum::<f64>() / n).collect())
}

/// Per-row argmax; ties go to the lowest column index.
pub fn argmax_cols(x: &DenseMatrix) -> Vec<usize> {
    x.iter_rows()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect()
}

pub fn max_pool(x: &DenseMatrix) -> PooledVector {
    PooledVector(
        x.iter_rows()
            .zip(argmax_cols(x))
            .map(|(row, i)| row[i])
            .collect(),
    )
}

pub fn attention_weights(x: &DenseMatrix, params: &AttentionParams) -> Result<SimplexVector> {
    params.check(x.rows())?;
    let n = x.cols();
    // w^T tanh(V X), one logit per sample
    let mut logits = vec![0.0; n];
    let mut vx = vec![0.0; n];
    for (vr, w) in params.v_mat.iter_rows().zip(&params.w_vec) {
        if *w == 0.0 {
            continue;
        }
        vx.fill(0.0);
        for (v, xr) in vr.iter().zip(x.iter_rows()) {
            for (acc, xv) in vx.iter_mut().zip(xr) {
                *acc += v * xv;
            }
        }
        for (logit, t) in logits.iter_mut().zip(&vx) {
            *logit += w * t.tanh();
        }
    }
    softmax(&logits)
}

/// `X a` for a weight vector over samples.
pub fn weighted_pool(x: &DenseMatrix, weights: &SimplexVector) -> Result<PooledVector> {
    PooledVector::new(x.mul_vec(weights.as_slice())?)
}

pub fn attention_pool(x: &DenseMatrix, params: &AttentionParams) -> Result<PooledVector> {
    weighted_pool(x, &attention_weights(x, params)?)
}

/// `omega * mean + (1 - omega) * max`.
pub fn mixed_pool(x: &DenseMatrix, omega: f64) -> Result<PooledVector> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::InvalidParams(format!(
            "omega = {omega} is outside [0, 1]"
        )));
    }
    let mean = mean_pool(x);
    let max = max_pool(x);
    Ok(PooledVector(
        mean.0
            .iter()
            .zip(&max.0)
            .map(|(a, b)| omega * a + (1.0 - omega) * b)
            .collect(),
    ))
}

pub fn gated_pool(x: &DenseMatrix, gate: &GateParams) -> Result<PooledVector> {
    let mean = mean_pool(x);
    if gate.u_vec.len() != mean.dim() {
        return Err(Error::LengthMismatch {
            left: mean.dim(),
            right: gate.u_vec.len(),
        });
    }
    let logit: f64 = gate
        .u_vec
        .iter()
        .zip(&mean.0)
        .map(|(u, m)| u * m)
        .sum::<f64>()
        + gate.bias;
    mixed_pool(x, 1.0 / (1.0 + (-logit).exp()))
}

/// Solves for the plan and pools with it. A plan with a zero-mass row is
/// reported as [`Error::DegenerateRow`].
pub fn uot_pool(
    x: &DenseMatrix,
    params: &UotParams,
    solver: Solver,
) -> Result<(PooledVector, SolverDiagnostics)> {
    let (plan, diagnostics) = solver.solve(x, params)?;
    let pooled = pool_with_plan(x, &plan)?;
    Ok((pooled, diagnostics))
}

/// Parameter presets realizing the reference poolings as UOT pooling.
pub mod presets {
    use super::*;

    /// All weights large, uniform priors.
    pub fn mean(d: usize, n: usize, k: usize) -> Result<UotParams> {
        UotParams::uniform(
            d,
            n,
            k,
            [LARGE_WEIGHT; 3],
            LARGE_WEIGHT,
            RegularizerKind::Entropic,
        )
    }

    /// Tiny smoothing and column weight, large row weight. The column prior
    /// is uniform and only matters through the vanishing `alpha2`.
    pub fn max(d: usize, n: usize, k: usize) -> Result<UotParams> {
        UotParams::uniform(
            d,
            n,
            k,
            [SMALL_WEIGHT, LARGE_WEIGHT, SMALL_WEIGHT],
            SMALL_WEIGHT,
            RegularizerKind::Entropic,
        )
    }

    /// Mean configuration with `q0` set to the attention weights.
    pub fn attention(d: usize, weights: SimplexVector, k: usize) -> Result<UotParams> {
        UotParams::constant(
            k,
            [LARGE_WEIGHT; 3],
            LARGE_WEIGHT,
            SimplexVector::uniform(d)?,
            weights,
            RegularizerKind::Entropic,
        )
    }
}

/// Solvers for the three stages of [`hierarchical_uot_pool`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HierarchySolvers {
    pub mean: Solver,
    pub max: Solver,
    pub mix: Solver,
}

impl HierarchySolvers {
    pub fn uniform(solver: Solver) -> Self {
        Self {
            mean: solver,
            max: solver,
            mix: solver,
        }
    }
}

impl Default for HierarchySolvers {
    /// Sinkhorn reproduces max pooling closely; BADMM honours a non-uniform
    /// column prior, which the mixing stage needs.
    fn default() -> Self {
        Self {
            mean: Solver::Badmm,
            max: Solver::Sinkhorn,
            mix: Solver::Badmm,
        }
    }
}

/// Mixed mean-max pooling built from three UOT poolings: a mean-configured
/// and a max-configured pooling of `X`, stacked as a `D x 2` matrix and
/// pooled again with column prior `[omega, 1 - omega]`.
pub fn hierarchical_uot_pool(
    x: &DenseMatrix,
    omega: f64,
    solvers: HierarchySolvers,
    k_iters: usize,
) -> Result<PooledVector> {
    if !(omega > 0.0 && omega < 1.0) {
        return Err(Error::InvalidParams(format!(
            "omega = {omega} is outside (0, 1)"
        )));
    }
    let (d, n) = x.shape();
    let (mean, _) = uot_pool(x, &presets::mean(d, n, k_iters)?, solvers.mean)?;
    let (max, _) = uot_pool(x, &presets::max(d, n, k_iters)?, solvers.max)?;
    let stacked = DenseMatrix::from_fn(d, 2, |r, c| if c == 0 { mean.0[r] } else { max.0[r] })?;
    let mix = SimplexVector::new(vec![omega, 1.0 - omega])?;
    let (pooled, _) = uot_pool(&stacked, &presets::attention(d, mix, k_iters)?, solvers.mix)?;
    Ok(pooled)
}
