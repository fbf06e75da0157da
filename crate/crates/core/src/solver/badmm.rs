//! Bregman ADMM for the UOT problem, fully in log domain.
//!
//! The plan `P` is split from an auxiliary copy `S` and the two marginals
//! `mu = P 1_N`, `eta = S^T 1_D`. Each module runs a primal update of `P`
//! (projection onto rows summing to `mu`), an auxiliary update of `S`, `mu`,
//! `eta` (projection of `S` onto columns summing to `eta`), and a dual
//! ascent step on `Z`, `z1`, `z2`.

use crate::error::Result;
use crate::numerics::{logsumexp_cols, logsumexp_rows, DenseMatrix, SimplexVector};

use super::{objective_from_log, RegularizerKind, SolverDiagnostics, TransportPlan, UotParams};

#[derive(Debug, Clone, PartialEq)]
pub struct BadmmState {
    pub log_p: DenseMatrix,
    pub log_s: DenseMatrix,
    pub log_mu: Vec<f64>,
    pub log_eta: Vec<f64>,
    pub z_mat: DenseMatrix,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
}

impl BadmmState {
    /// `ln P = ln S = ln(p0 q0^T)`, `ln mu = ln p0`, `ln eta = ln q0`, duals zero.
    pub fn new(p0: &SimplexVector, q0: &SimplexVector) -> Self {
        let (d, n) = (p0.dim(), q0.dim());
        let log_p0 = p0.ln();
        let log_q0 = q0.ln();
        let log_outer: Vec<f64> = log_p0
            .iter()
            .flat_map(|lp| log_q0.iter().map(move |lq| lp + lq))
            .collect();
        let log_p = DenseMatrix::from_raw(d, n, log_outer);
        Self {
            log_s: log_p.clone(),
            log_p,
            log_mu: log_p0,
            log_eta: log_q0,
            z_mat: DenseMatrix::from_raw(d, n, vec![0.0; d * n]),
            z1: vec![0.0; d],
            z2: vec![0.0; n],
        }
    }
}

/// `ln P <- (ln mu - LSE_row(Y)) 1_N^T + Y`, so that `P 1_N = mu` exactly.
///
/// Entropic: `Y = ln S + (X - Z) / rho`.
/// Quadratic: `Y = ln S + (X - alpha0 S - Z) / rho`.
pub fn badmm_primal_update(
    state: &mut BadmmState,
    x: &DenseMatrix,
    alpha0: f64,
    rho: f64,
    reg: RegularizerKind,
) {
    let (d, n) = x.shape();
    let mut y = Vec::with_capacity(d * n);
    for ((xr, sr), zr) in x
        .iter_rows()
        .zip(state.log_s.iter_rows())
        .zip(state.z_mat.iter_rows())
    {
        for ((xv, ls), zv) in xr.iter().zip(sr).zip(zr) {
            let drive = match reg {
                RegularizerKind::Entropic => xv - zv,
                RegularizerKind::Quadratic => xv - alpha0 * ls.exp() - zv,
            };
            y.push(ls + drive / rho);
        }
    }
    let mut y = DenseMatrix::from_raw(d, n, y);
    let lse = logsumexp_rows(&y);
    for ((row, shift), lm) in y
        .as_mut_slice()
        .chunks_exact_mut(n)
        .zip(&lse)
        .zip(&state.log_mu)
    {
        let offset = lm - shift;
        row.iter_mut().for_each(|v| *v += offset);
    }
    state.log_p = y;
}

/// Updates `S` (columns summing to the current `eta`), then `mu` and `eta`.
///
/// Entropic: `Y = (Z + rho ln P) / (alpha0 + rho)`.
/// Quadratic: `Y = ln P + (Z - alpha0 P) / rho`, with the freshly updated `P`.
#[allow(clippy::too_many_arguments)]
pub fn badmm_auxiliary_update(
    state: &mut BadmmState,
    alpha0: f64,
    alpha1: f64,
    alpha2: f64,
    rho: f64,
    log_p0: &[f64],
    log_q0: &[f64],
    reg: RegularizerKind,
) {
    let (d, n) = state.log_p.shape();
    let y: Vec<f64> = state
        .log_p
        .as_slice()
        .iter()
        .zip(state.z_mat.as_slice())
        .map(|(lp, z)| match reg {
            RegularizerKind::Entropic => (z + rho * lp) / (alpha0 + rho),
            RegularizerKind::Quadratic => lp + (z - alpha0 * lp.exp()) / rho,
        })
        .collect();
    let mut y = DenseMatrix::from_raw(d, n, y);
    let lse = logsumexp_cols(&y);
    let offsets: Vec<f64> = state
        .log_eta
        .iter()
        .zip(&lse)
        .map(|(le, s)| le - s)
        .collect();
    for row in y.as_mut_slice().chunks_exact_mut(n) {
        row.iter_mut().zip(&offsets).for_each(|(v, o)| *v += o);
    }
    state.log_s = y;

    for ((lm, lp0), z) in state.log_mu.iter_mut().zip(log_p0).zip(&state.z1) {
        *lm = (rho * *lm + alpha1 * lp0 - z) / (rho + alpha1);
    }
    for ((le, lq0), z) in state.log_eta.iter_mut().zip(log_q0).zip(&state.z2) {
        *le = (rho * *le + alpha2 * lq0 - z) / (rho + alpha2);
    }
}

/// `Z += alpha0 (P - S)`, `z1 += rho (mu - P 1_N)`, `z2 += rho (eta - S^T 1_D)`.
pub fn badmm_dual_update(state: &mut BadmmState, alpha0: f64, rho: f64) {
    let n = state.log_p.cols();
    let mut row_p = vec![0.0; state.log_p.rows()];
    let mut col_s = vec![0.0; n];
    for (idx, ((z, lp), ls)) in state
        .z_mat
        .as_mut_slice()
        .iter_mut()
        .zip(state.log_p.as_slice())
        .zip(state.log_s.as_slice())
        .enumerate()
    {
        let (p, s) = (lp.exp(), ls.exp());
        *z += alpha0 * (p - s);
        row_p[idx / n] += p;
        col_s[idx % n] += s;
    }
    for ((z, lm), rp) in state.z1.iter_mut().zip(&state.log_mu).zip(&row_p) {
        *z += rho * (lm.exp() - rp);
    }
    for ((z, le), cs) in state.z2.iter_mut().zip(&state.log_eta).zip(&col_s) {
        *z += rho * (le.exp() - cs);
    }
}

/// Solves the UOT problem with `K` Bregman ADMM modules.
pub fn badmm_uot(
    x: &DenseMatrix,
    params: &UotParams,
) -> Result<(TransportPlan, SolverDiagnostics)> {
    params.check_dims(x)?;
    let reg = params.reg();
    let log_p0 = params.p0().ln();
    let log_q0 = params.q0().ln();
    let mut state = BadmmState::new(params.p0(), params.q0());
    let mut trace = Vec::with_capacity(params.k_iters());
    for k in 0..params.k_iters() {
        let (a0, a1, a2, rho) = (
            params.alpha0()[k],
            params.alpha1()[k],
            params.alpha2()[k],
            params.rho()[k],
        );
        badmm_primal_update(&mut state, x, a0, rho, reg);
        badmm_auxiliary_update(&mut state, a0, a1, a2, rho, &log_p0, &log_q0, reg);
        badmm_dual_update(&mut state, a0, rho);
        trace.push(objective_from_log(
            x,
            &state.log_p,
            a0,
            a1,
            a2,
            params.p0().as_slice(),
            params.q0().as_slice(),
            reg,
        ));
    }
    let plan = TransportPlan::from_log(&state.log_p);
    let diagnostics = SolverDiagnostics::from_plan(&plan, params, trace);
    Ok((plan, diagnostics))
}
