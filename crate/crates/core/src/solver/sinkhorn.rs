//! Log-domain Sinkhorn scaling for the entropic UOT problem.
//!
//! The plan is kept implicitly as `Y = X / a0 + a 1^T + 1 b^T` and only
//! exponentiated once at the end. A dual update has the form
//!
//! ```text
//! a <- a1 / (a0 + a1) * (a + ln p0 - ln p),   ln p = LSE_row(Y)
//! b <- a2 / (a0 + a2) * (b + ln q0 - ln q),   ln q = LSE_col(Y)
//! ```

use crate::error::{Error, Result};
use crate::numerics::{logsumexp_cols, logsumexp_rows, DenseMatrix};

use super::{objective_from_log, RegularizerKind, SolverDiagnostics, TransportPlan, UotParams};

/// Order of the two dual updates inside one module.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum SinkhornSchedule {
    /// Update `a`, rescale, then update `b` against the rescaled kernel.
    #[default]
    Alternating,
    /// Both marginals read from the same kernel before either dual moves.
    Simultaneous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornState {
    /// Row dual, length `D`.
    pub a: Vec<f64>,
    /// Column dual, length `N`.
    pub b: Vec<f64>,
    /// Log-domain kernel, `D x N`.
    pub y: DenseMatrix,
}

impl SinkhornState {
    /// `a = 0`, `b = 0`, `Y = X / alpha0`.
    pub fn new(x: &DenseMatrix, alpha0: f64) -> Self {
        Self {
            a: vec![0.0; x.rows()],
            b: vec![0.0; x.cols()],
            y: x.map(|v| v / alpha0),
        }
    }

    fn rescale(&mut self, x: &DenseMatrix, alpha0: f64) {
        let cols = x.cols();
        let out = self.y.as_mut_slice();
        for (d, (yr, xr)) in out.chunks_exact_mut(cols).zip(x.iter_rows()).enumerate() {
            let ad = self.a[d];
            for ((yv, xv), bn) in yr.iter_mut().zip(xr).zip(&self.b) {
                *yv = xv / alpha0 + ad + bn;
            }
        }
    }
}

fn dual_update(
    dual: &mut [f64],
    weight: f64,
    alpha0: f64,
    log_prior: &[f64],
    log_marginal: &[f64],
) {
    let ratio = weight / (alpha0 + weight);
    for ((v, lp0), lp) in dual.iter_mut().zip(log_prior).zip(log_marginal) {
        *v = ratio * (*v + lp0 - lp);
    }
}

/// One Sinkhorn module: both dual updates followed by logarithmic scaling.
#[allow(clippy::too_many_arguments)]
pub fn sinkhorn_step(
    state: &mut SinkhornState,
    x: &DenseMatrix,
    alpha0: f64,
    alpha1: f64,
    alpha2: f64,
    log_p0: &[f64],
    log_q0: &[f64],
    schedule: SinkhornSchedule,
) {
    match schedule {
        SinkhornSchedule::Alternating => {
            let log_p = logsumexp_rows(&state.y);
            dual_update(&mut state.a, alpha1, alpha0, log_p0, &log_p);
            state.rescale(x, alpha0);
            let log_q = logsumexp_cols(&state.y);
            dual_update(&mut state.b, alpha2, alpha0, log_q0, &log_q);
        }
        SinkhornSchedule::Simultaneous => {
            let log_p = logsumexp_rows(&state.y);
            let log_q = logsumexp_cols(&state.y);
            dual_update(&mut state.a, alpha1, alpha0, log_p0, &log_p);
            dual_update(&mut state.b, alpha2, alpha0, log_q0, &log_q);
        }
    }
    state.rescale(x, alpha0);
}

/// Solves the entropic UOT problem with `K` alternating Sinkhorn modules.
pub fn sinkhorn_uot(
    x: &DenseMatrix,
    params: &UotParams,
) -> Result<(TransportPlan, SolverDiagnostics)> {
    sinkhorn_uot_with(x, params, SinkhornSchedule::default())
}

pub fn sinkhorn_uot_with(
    x: &DenseMatrix,
    params: &UotParams,
    schedule: SinkhornSchedule,
) -> Result<(TransportPlan, SolverDiagnostics)> {
    if params.reg() != RegularizerKind::Entropic {
        return Err(Error::UnsupportedRegularizer);
    }
    params.check_dims(x)?;
    let log_p0 = params.p0().ln();
    let log_q0 = params.q0().ln();
    let mut state = SinkhornState::new(x, params.alpha0()[0]);
    let mut trace = Vec::with_capacity(params.k_iters());
    for k in 0..params.k_iters() {
        let (a0, a1, a2) = (params.alpha0()[k], params.alpha1()[k], params.alpha2()[k]);
        sinkhorn_step(&mut state, x, a0, a1, a2, &log_p0, &log_q0, schedule);
        trace.push(objective_from_log(
            x,
            &state.y,
            a0,
            a1,
            a2,
            params.p0().as_slice(),
            params.q0().as_slice(),
            RegularizerKind::Entropic,
        ));
    }
    let plan = TransportPlan::from_log(&state.y);
    let diagnostics = SolverDiagnostics::from_plan(&plan, params, trace);
    Ok((plan, diagnostics))
}
