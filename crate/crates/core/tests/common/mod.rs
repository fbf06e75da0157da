//! Shared helpers for the integration tests: seeded inputs and a scalar,
//! exponential-domain re-implementation of single solver steps.

#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uotpool::{DenseMatrix, RegularizerKind, SimplexVector};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.gen()).unwrap()
}

pub fn random_simplex(rng: &mut impl Rng, dim: usize) -> SimplexVector {
    let raw: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.05..1.0)).collect();
    SimplexVector::from_unnormalized(&raw).unwrap()
}

pub fn random_permutation(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    perm
}

pub type Grid = Vec<Vec<f64>>;

pub fn to_grid(m: &DenseMatrix) -> Grid {
    m.iter_rows().map(<[f64]>::to_vec).collect()
}

/// BADMM variables in the exponential domain.
#[derive(Debug, Clone)]
pub struct Badmm {
    pub p: Grid,
    pub s: Grid,
    pub mu: Vec<f64>,
    pub eta: Vec<f64>,
    pub z: Grid,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
}

/// `P = diag(mu) softmax_row(Y)` with
/// `Y = ln S + (X - Z) / rho` or `Y = ln S + (X - alpha0 S - Z) / rho`.
pub fn primal(v: &Badmm, x: &Grid, alpha0: f64, rho: f64, reg: RegularizerKind) -> Grid {
    let (d, n) = (x.len(), x[0].len());
    let mut p = vec![vec![0.0; n]; d];
    for i in 0..d {
        let mut row = vec![0.0; n];
        for j in 0..n {
            let quad = if reg == RegularizerKind::Quadratic {
                alpha0 * v.s[i][j]
            } else {
                0.0
            };
            row[j] = v.s[i][j].ln() + (x[i][j] - quad - v.z[i][j]) / rho;
        }
        let total: f64 = row.iter().map(|y| y.exp()).sum();
        for j in 0..n {
            p[i][j] = v.mu[i] * row[j].exp() / total;
        }
    }
    p
}

/// `S = softmax_col(Y) diag(eta)` with `Y = (Z + rho ln P) / (alpha0 + rho)`
/// or `Y = ln P + (Z - alpha0 P) / rho`, followed by the closed-form `mu`
/// and `eta` updates. Reads the old `eta`, `mu`.
#[allow(clippy::too_many_arguments)]
pub fn auxiliary(
    v: &Badmm,
    alpha0: f64,
    alpha1: f64,
    alpha2: f64,
    rho: f64,
    p0: &[f64],
    q0: &[f64],
    reg: RegularizerKind,
) -> (Grid, Vec<f64>, Vec<f64>) {
    let (d, n) = (v.p.len(), v.p[0].len());
    let mut s = vec![vec![0.0; n]; d];
    for j in 0..n {
        let col: Vec<f64> = (0..d)
            .map(|i| match reg {
                RegularizerKind::Entropic => (v.z[i][j] + rho * v.p[i][j].ln()) / (alpha0 + rho),
                RegularizerKind::Quadratic => {
                    v.p[i][j].ln() + (v.z[i][j] - alpha0 * v.p[i][j]) / rho
                }
            })
            .collect();
        let total: f64 = col.iter().map(|y| y.exp()).sum();
        for i in 0..d {
            s[i][j] = v.eta[j] * col[i].exp() / total;
        }
    }
    let mu = (0..d)
        .map(|i| ((alpha1 * p0[i].ln() + rho * v.mu[i].ln() - v.z1[i]) / (alpha1 + rho)).exp())
        .collect();
    let eta = (0..n)
        .map(|j| ((alpha2 * q0[j].ln() + rho * v.eta[j].ln() - v.z2[j]) / (alpha2 + rho)).exp())
        .collect();
    (s, mu, eta)
}

/// `Z += alpha0 (P - S)`, `z1 += rho (mu - P 1)`, `z2 += rho (eta - S^T 1)`.
pub fn dual(v: &Badmm, alpha0: f64, rho: f64) -> (Grid, Vec<f64>, Vec<f64>) {
    let (d, n) = (v.p.len(), v.p[0].len());
    let mut z = v.z.clone();
    let mut z1 = v.z1.clone();
    let mut z2 = v.z2.clone();
    for i in 0..d {
        for j in 0..n {
            z[i][j] += alpha0 * (v.p[i][j] - v.s[i][j]);
        }
        let row: f64 = v.p[i].iter().sum();
        z1[i] += rho * (v.mu[i] - row);
    }
    for j in 0..n {
        let col: f64 = (0..d).map(|i| v.s[i][j]).sum();
        z2[j] += rho * (v.eta[j] - col);
    }
    (z, z1, z2)
}

/// One Sinkhorn module without logarithms: kernel
/// `T = exp(a 1^T + 1 b^T + X / alpha0)`, marginals read from `T`, and
/// `a <- alpha1 / (alpha0 + alpha1) (a + ln p0 - ln p)`; `b` likewise,
/// after `a` has moved when `alternating`.
#[allow(clippy::too_many_arguments)]
pub fn sinkhorn_direct(
    x: &Grid,
    a: &[f64],
    b: &[f64],
    alphas: [f64; 3],
    p0: &[f64],
    q0: &[f64],
    alternating: bool,
) -> (Vec<f64>, Vec<f64>) {
    let (d, n) = (x.len(), x[0].len());
    let kernel = |a: &[f64]| -> Grid {
        (0..d)
            .map(|i| {
                (0..n)
                    .map(|j| (a[i] + b[j] + x[i][j] / alphas[0]).exp())
                    .collect()
            })
            .collect()
    };
    let t = kernel(a);
    let new_a: Vec<f64> = (0..d)
        .map(|i| {
            let p: f64 = t[i].iter().sum();
            alphas[1] / (alphas[0] + alphas[1]) * (a[i] + p0[i].ln() - p.ln())
        })
        .collect();
    let t = if alternating { kernel(&new_a) } else { t };
    let new_b = (0..n)
        .map(|j| {
            let q: f64 = (0..d).map(|i| t[i][j]).sum();
            alphas[2] / (alphas[0] + alphas[2]) * (b[j] + q0[j].ln() - q.ln())
        })
        .collect();
    (new_a, new_b)
}

pub fn max_abs(a: &Grid, b: &Grid) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn max_abs_vec(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn log_grid(g: &Grid) -> DenseMatrix {
    DenseMatrix::from_rows(
        &g.iter()
            .map(|r| r.iter().map(|v| v.ln()).collect::<Vec<_>>())
            .collect::<Vec<_>>(),
    )
    .unwrap()
}

fn exp_grid(m: &DenseMatrix) -> Grid {
    m.iter_rows()
        .map(|r| r.iter().map(|v| v.exp()).collect())
        .collect()
}

fn exp_vec(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.exp()).collect()
}

/// Largest disagreement between the library's BADMM updates and the scalar
/// oracle over `modules` consecutive modules, starting from a random state.
pub fn badmm_oracle_gap(
    seed: u64,
    d: usize,
    n: usize,
    reg: RegularizerKind,
    modules: usize,
) -> f64 {
    use uotpool::solver::{
        badmm_auxiliary_update, badmm_dual_update, badmm_primal_update, BadmmState,
    };

    let mut rng = rng(seed);
    let x = to_grid(&uniform_matrix(&mut rng, d, n));
    let xm = DenseMatrix::from_rows(&x).unwrap();
    let p0 = random_simplex(&mut rng, d);
    let q0 = random_simplex(&mut rng, n);
    let pos = |rng: &mut ChaCha8Rng, len: usize| -> Vec<f64> {
        (0..len).map(|_| rng.gen_range(0.02..0.3)).collect()
    };
    let sym = |rng: &mut ChaCha8Rng, len: usize| -> Vec<f64> {
        (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect()
    };
    let grid = |flat: Vec<f64>| -> Grid { flat.chunks(n).map(<[f64]>::to_vec).collect() };
    let mut oracle = Badmm {
        p: grid(pos(&mut rng, d * n)),
        s: grid(pos(&mut rng, d * n)),
        mu: pos(&mut rng, d),
        eta: pos(&mut rng, n),
        z: grid(sym(&mut rng, d * n)),
        z1: sym(&mut rng, d),
        z2: sym(&mut rng, n),
    };
    let mut state = BadmmState::new(&p0, &q0);
    state.log_p = log_grid(&oracle.p);
    state.log_s = log_grid(&oracle.s);
    state.log_mu = oracle.mu.iter().map(|v| v.ln()).collect();
    state.log_eta = oracle.eta.iter().map(|v| v.ln()).collect();
    state.z_mat = DenseMatrix::from_rows(&oracle.z).unwrap();
    state.z1 = oracle.z1.clone();
    state.z2 = oracle.z2.clone();

    let mut gap: f64 = 0.0;
    for _ in 0..modules {
        let a0 = rng.gen_range(0.3..3.0);
        let a1 = rng.gen_range(0.3..3.0);
        let a2 = rng.gen_range(0.3..3.0);
        let rho = rng.gen_range(0.3..3.0);

        badmm_primal_update(&mut state, &xm, a0, rho, reg);
        oracle.p = primal(&oracle, &x, a0, rho, reg);
        gap = gap.max(max_abs(&exp_grid(&state.log_p), &oracle.p));

        badmm_auxiliary_update(&mut state, a0, a1, a2, rho, &p0.ln(), &q0.ln(), reg);
        let (s, mu, eta) = auxiliary(&oracle, a0, a1, a2, rho, p0.as_slice(), q0.as_slice(), reg);
        (oracle.s, oracle.mu, oracle.eta) = (s, mu, eta);
        gap = gap.max(max_abs(&exp_grid(&state.log_s), &oracle.s));
        gap = gap.max(max_abs_vec(&exp_vec(&state.log_mu), &oracle.mu));
        gap = gap.max(max_abs_vec(&exp_vec(&state.log_eta), &oracle.eta));

        badmm_dual_update(&mut state, a0, rho);
        (oracle.z, oracle.z1, oracle.z2) = dual(&oracle, a0, rho);
        gap = gap.max(max_abs(&to_grid(&state.z_mat), &oracle.z));
        gap = gap.max(max_abs_vec(&state.z1, &oracle.z1));
        gap = gap.max(max_abs_vec(&state.z2, &oracle.z2));
    }
    gap
}

/// Largest disagreement between the library's Sinkhorn duals and the direct
/// exponential-domain form over `modules` modules.
pub fn sinkhorn_oracle_gap(
    seed: u64,
    d: usize,
    n: usize,
    alternating: bool,
    modules: usize,
) -> f64 {
    use uotpool::solver::{sinkhorn_step, SinkhornSchedule, SinkhornState};

    let mut rng = rng(seed);
    let xm = uniform_matrix(&mut rng, d, n);
    let x = to_grid(&xm);
    let p0 = random_simplex(&mut rng, d);
    let q0 = random_simplex(&mut rng, n);
    let alphas = [
        rng.gen_range(0.3..3.0),
        rng.gen_range(0.3..3.0),
        rng.gen_range(0.3..3.0),
    ];
    let schedule = if alternating {
        SinkhornSchedule::Alternating
    } else {
        SinkhornSchedule::Simultaneous
    };
    let mut state = SinkhornState::new(&xm, alphas[0]);
    let (mut a, mut b) = (vec![0.0; d], vec![0.0; n]);
    let mut gap: f64 = 0.0;
    for _ in 0..modules {
        sinkhorn_step(
            &mut state,
            &xm,
            alphas[0],
            alphas[1],
            alphas[2],
            &p0.ln(),
            &q0.ln(),
            schedule,
        );
        (a, b) = sinkhorn_direct(
            &x,
            &a,
            &b,
            alphas,
            p0.as_slice(),
            q0.as_slice(),
            alternating,
        );
        gap = gap
            .max(max_abs_vec(&state.a, &a))
            .max(max_abs_vec(&state.b, &b));
    }
    gap
}
