//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use uotpool::experiments::{
    cmd_bench, cmd_convergence, cmd_stability, CsvReport, ExperimentConfig,
};
use uotpool::learning::{
    fd_gradient, train_synthetic, PriorMode, ReparamState, SyntheticTask, WeightSharing,
    DEFAULT_EPS, DEFAULT_LR,
};
use uotpool::pooling::{
    attention_pool, gated_pool, hierarchical_uot_pool, max_pool, mean_pool, mixed_pool, presets,
    uot_pool, weighted_pool, AttentionParams, GateParams, HierarchySolvers,
};
use uotpool::{DenseMatrix, PoolingSpec, RegularizerKind, Solver, UotParams};

use common::*;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn column(report: &CsvReport, name: &str) -> Vec<String> {
    let idx = report
        .column(name)
        .unwrap_or_else(|| panic!("{} lacks column {name}", report.name()));
    report.rows().iter().map(|r| r[idx].clone()).collect()
}

fn num(s: &str) -> f64 {
    s.parse().unwrap_or(f64::NAN)
}

const SOLVER_RUNS: [(Solver, RegularizerKind); 3] = [
    (Solver::Sinkhorn, RegularizerKind::Entropic),
    (Solver::Badmm, RegularizerKind::Entropic),
    (Solver::Badmm, RegularizerKind::Quadratic),
];

fn mean_equivalence() -> Outcome {
    let start = Instant::now();
    let mut r = rng(101);
    let x = uniform_matrix(&mut r, 5, 10);
    let params = presets::mean(5, 10, 32).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for solver in [Solver::Sinkhorn, Solver::Badmm] {
        let (plan, _) = solver.solve(&x, &params).unwrap();
        let plan_err = plan
            .matrix()
            .as_slice()
            .iter()
            .map(|v| (v - 0.02).abs())
            .fold(0.0, f64::max);
        let (pooled, _) = uot_pool(&x, &params, solver).unwrap();
        let pooled_err = pooled.max_abs_diff(&mean_pool(&x));
        pass &= plan_err <= 1e-3 && pooled_err <= 1e-3;
        parts.push(format!(
            "{} plan err {plan_err:.2e}, pooled err {pooled_err:.2e}",
            solver.as_str()
        ));
    }
    let elapsed = start.elapsed();
    pass &= within(elapsed, 1.0);
    check(
        pass,
        format!("{} ({elapsed:.2?}; limits 1e-3, 1 s)", parts.join("; ")),
    )
}

fn max_equivalence() -> Outcome {
    let start = Instant::now();
    let mut r = rng(202);
    let params = presets::max(5, 10, 32).unwrap();
    let (mut worst_sk, mut worst_bm) = (0.0f64, 0.0f64);
    let mut inputs = 0;
    while inputs < 20 {
        let x = uniform_matrix(&mut r, 5, 10);
        let distinct = x.iter_rows().all(|row| {
            let mut v = row.to_vec();
            v.sort_by(|a, b| b.total_cmp(a));
            v[0] - v[1] > 1e-9
        });
        if !distinct {
            continue;
        }
        inputs += 1;
        let want = max_pool(&x);
        for (solver, worst) in [
            (Solver::Sinkhorn, &mut worst_sk),
            (Solver::Badmm, &mut worst_bm),
        ] {
            let rel = match uot_pool(&x, &params, solver) {
                Ok((got, _)) => got
                    .as_slice()
                    .iter()
                    .zip(want.as_slice())
                    .map(|(g, w)| (g - w).abs() / w.abs())
                    .fold(0.0, f64::max),
                Err(_) => f64::INFINITY,
            };
            *worst = worst.max(rel);
        }
    }
    let elapsed = start.elapsed();
    let pass = worst_sk <= 0.02 && worst_bm <= 0.10 && within(elapsed, 2.0);
    check(
        pass,
        format!(
            "worst relative error sinkhorn {:.2}%, badmm {:.2}% over 20 inputs ({elapsed:.2?}; limits 2%, 10%, 2 s)",
            100.0 * worst_sk,
            100.0 * worst_bm
        ),
    )
}

fn attention_equivalence() -> Outcome {
    let start = Instant::now();
    let mut r = rng(303);
    let (mut badmm_pooled, mut sinkhorn_pooled) = (0.0f64, 0.0f64);
    let mut ordered = true;
    let mut plan_errs = Vec::new();
    for _ in 0..10 {
        let x = uniform_matrix(&mut r, 5, 10);
        let q0 = random_simplex(&mut r, 10);
        let want = weighted_pool(&x, &q0).unwrap();
        let truth: Vec<f64> = (0..5)
            .flat_map(|_| q0.as_slice().iter().map(|q| q / 5.0))
            .collect();
        let params = presets::attention(5, q0, 32).unwrap();
        let mut errs = [0.0; 2];
        for (i, solver) in [Solver::Sinkhorn, Solver::Badmm].into_iter().enumerate() {
            let (plan, _) = solver.solve(&x, &params).unwrap();
            errs[i] = max_abs_vec(plan.matrix().as_slice(), &truth);
            let (pooled, _) = uot_pool(&x, &params, solver).unwrap();
            let err = pooled.max_abs_diff(&want);
            if solver == Solver::Badmm {
                badmm_pooled = badmm_pooled.max(err);
            } else {
                sinkhorn_pooled = sinkhorn_pooled.max(err);
            }
        }
        ordered &= errs[1] <= errs[0];
        plan_errs.push(errs);
    }
    let elapsed = start.elapsed();
    let worst_plan = |i: usize| plan_errs.iter().map(|e| e[i]).fold(0.0, f64::max);
    let pass = badmm_pooled <= 1e-2 && ordered && within(elapsed, 1.0);
    check(
        pass,
        format!(
            "badmm pooled err {badmm_pooled:.2e} (sinkhorn {sinkhorn_pooled:.2e}); plan err badmm {:.2e} <= sinkhorn {:.2e} on all 10: {ordered} ({elapsed:.2?}; limits 1e-2, 1 s)",
            worst_plan(1),
            worst_plan(0)
        ),
    )
}

fn stability_grid() -> Outcome {
    let start = Instant::now();
    let report = cmd_stability(&ExperimentConfig::default()).unwrap();
    let elapsed = start.elapsed();
    let solvers = column(&report, "solver");
    let regs = column(&report, "reg");
    let nans = column(&report, "has_nan");
    let mass = column(&report, "total_mass");
    let a0: std::collections::BTreeSet<String> = column(&report, "alpha0").into_iter().collect();
    let a12: std::collections::BTreeSet<String> = column(&report, "alpha12").into_iter().collect();
    let mut sinkhorn_nan = 0;
    let mut badmm_bad = 0;
    let mut badmm_cells = 0;
    let mut worst_mass: f64 = 0.0;
    for i in 0..report.rows().len() {
        if solvers[i] == "sinkhorn" {
            sinkhorn_nan += usize::from(nans[i] == "true");
        } else {
            badmm_cells += 1;
            let dev = (num(&mass[i]) - 1.0).abs();
            worst_mass = worst_mass.max(dev);
            if nans[i] == "true" || dev.is_nan() || dev > 0.1 {
                badmm_bad += 1;
            }
        }
    }
    let regs_ok = regs.iter().filter(|r| *r == "quadratic").count() == 100;
    let pass = a0.len() == 10
        && a12.len() == 10
        && badmm_cells == 200
        && regs_ok
        && badmm_bad == 0
        && sinkhorn_nan >= 1
        && within(elapsed, 60.0);
    check(
        pass,
        format!(
            "badmm failing cells {badmm_bad}/{badmm_cells} (worst |mass - 1| {worst_mass:.1e}); sinkhorn NaN cells {sinkhorn_nan}/100 ({elapsed:.2?}; limit 60 s)"
        ),
    )
}

fn convergence() -> Outcome {
    let start = Instant::now();
    let mut config = ExperimentConfig::default();
    config.convergence.k_list = vec![1, 2, 4, 8, 16];
    let report = cmd_convergence(&config).unwrap();
    let elapsed = start.elapsed();
    let solvers = column(&report, "solver");
    let regs = column(&report, "reg");
    let objective: Vec<f64> = column(&report, "objective")
        .iter()
        .map(|s| num(s))
        .collect();
    let mut pass = within(elapsed, 30.0);
    let mut parts = Vec::new();
    for chunk in 0..report.rows().len() / 5 {
        let o = &objective[chunk * 5..chunk * 5 + 5];
        let monotone = o.windows(2).all(|w| w[1] <= w[0] + 1e-6);
        let early = (o[1] - o[2]).abs() / o[1].abs();
        let late = (o[3] - o[4]).abs() / o[3].abs();
        pass &= monotone && late < early;
        parts.push(format!(
            "{}-{} monotone {monotone}, rel change 2->4 {early:.1e} vs 8->16 {late:.1e}",
            solvers[chunk * 5],
            regs[chunk * 5]
        ));
    }
    pass &= parts.len() == 3;
    check(
        pass,
        format!("{} ({elapsed:.2?}; limit 30 s)", parts.join("; ")),
    )
}

fn permutation_invariance() -> Outcome {
    let mut r = rng(606);
    let mut worst_uot: f64 = 0.0;
    let mut worst_ref: f64 = 0.0;
    for _ in 0..100 {
        let x = uniform_matrix(&mut r, 5, 10);
        let perm = random_permutation(&mut r, 10);
        let xp = x.permute_columns(&perm).unwrap();
        let mut w = || 10f64.powf(r.gen_range(-1.0..1.0));
        let alphas = [w(), w(), w()];
        let rho = w();
        for (solver, reg) in SOLVER_RUNS {
            let params = UotParams::uniform(5, 10, 8, alphas, rho, reg).unwrap();
            let (a, _) = uot_pool(&x, &params, solver).unwrap();
            let (b, _) = uot_pool(&xp, &params, solver).unwrap();
            worst_uot = worst_uot.max(a.max_abs_diff(&b));
        }
        let att = AttentionParams {
            v_mat: DenseMatrix::from_fn(5, 5, |_, _| r.gen_range(-1.0..1.0)).unwrap(),
            w_vec: (0..5).map(|_| r.gen_range(-1.0..1.0)).collect(),
            u_mat: None,
        };
        let gate = GateParams {
            u_vec: (0..5).map(|_| r.gen_range(-1.0..1.0)).collect(),
            bias: r.gen_range(-1.0..1.0),
        };
        let omega = r.gen_range(0.0..1.0);
        let refs: [&dyn Fn(&DenseMatrix) -> uotpool::PooledVector; 5] = [
            &|m| mean_pool(m),
            &|m| max_pool(m),
            &|m| attention_pool(m, &att).unwrap(),
            &|m| mixed_pool(m, omega).unwrap(),
            &|m| gated_pool(m, &gate).unwrap(),
        ];
        for f in refs {
            worst_ref = worst_ref.max(f(&x).max_abs_diff(&f(&xp)));
        }
    }
    let pass = worst_uot <= 1e-6 && worst_ref <= 1e-12;
    check(
        pass,
        format!("100 pairs: UOT max deviation {worst_uot:.1e}, reference poolings {worst_ref:.1e} (limits 1e-6, 1e-12)"),
    )
}

fn hierarchical_mixed() -> Outcome {
    let mut r = rng(707);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let x = uniform_matrix(&mut r, 5, 10);
        for omega in [0.1, 0.25, 0.5, 0.75, 0.9] {
            let got = hierarchical_uot_pool(&x, omega, HierarchySolvers::default(), 32).unwrap();
            let want = mixed_pool(&x, omega).unwrap();
            for (g, w) in got.as_slice().iter().zip(want.as_slice()) {
                worst = worst.max((g - w).abs() / w.abs());
            }
        }
    }
    check(
        worst <= 0.02,
        format!(
            "worst relative error {:.2}% over 10 inputs x 5 omegas (limit 2%)",
            100.0 * worst
        ),
    )
}

fn step_oracle() -> Outcome {
    let mut badmm: f64 = 0.0;
    let mut sinkhorn: f64 = 0.0;
    for seed in 0..10 {
        for (d, n) in [(2, 2), (3, 4)] {
            for reg in [RegularizerKind::Entropic, RegularizerKind::Quadratic] {
                badmm = badmm.max(badmm_oracle_gap(seed, d, n, reg, 5));
            }
            for alternating in [true, false] {
                sinkhorn = sinkhorn.max(sinkhorn_oracle_gap(seed, d, n, alternating, 5));
            }
        }
    }
    check(
        badmm <= 1e-10 && sinkhorn <= 1e-8,
        format!("badmm step gap {badmm:.1e} (limit 1e-10), sinkhorn step gap {sinkhorn:.1e} (limit 1e-8)"),
    )
}

fn learnability() -> Outcome {
    let start = Instant::now();
    let mut probe = ReparamState::new(
        1,
        WeightSharing::Shared,
        PriorMode::FixedUniform,
        RegularizerKind::Entropic,
    )
    .unwrap();
    probe.beta0[0] = 0.3;
    let g = fd_gradient(|s| s.beta0[0] * s.beta0[0], &probe, DEFAULT_EPS).unwrap();
    let quad_ok = (g.as_slice()[0] - 0.6).abs() <= 1e-6;
    let zero_ok = g.as_slice()[1..].iter().all(|v| v.abs() <= 1e-9);

    let task = SyntheticTask::max_threshold(200, 8, 16, 0);
    let spec = PoolingSpec::UotBadmm(
        UotParams::uniform(8, 16, 4, [1.0; 3], 1.0, RegularizerKind::Entropic).unwrap(),
    );
    let trace = train_synthetic(&task, &spec, 30, DEFAULT_LR)
        .unwrap()
        .loss_trace;
    let ratio = trace[30] / trace[0];
    let elapsed = start.elapsed();
    let pass = quad_ok && zero_ok && ratio <= 0.8 && within(elapsed, 120.0);
    check(
        pass,
        format!(
            "fd checks quadratic {quad_ok}, inactive {zero_ok}; loss {:.4} -> {:.4} (ratio {ratio:.3}, lr {DEFAULT_LR}) ({elapsed:.2?}; limits 0.8, 120 s)",
            trace[0], trace[30]
        ),
    )
}

fn complexity_band() -> Outcome {
    let report = cmd_bench(&ExperimentConfig::default()).unwrap();
    let methods = column(&report, "method");
    let ks = column(&report, "k_iters");
    let median = column(&report, "median_ms");
    let time = |m: &str, k: &str| {
        (0..methods.len())
            .find(|&i| methods[i] == m && ks[i] == k)
            .map(|i| num(&median[i]))
            .unwrap_or(f64::NAN)
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for m in ["uot_sinkhorn", "uot_badmm"] {
        let ratio = time(m, "8") / time(m, "4");
        pass &= (1.5..=2.8).contains(&ratio);
        parts.push(format!("{m} K8/K4 {ratio:.2}"));
    }
    check(
        pass,
        format!(
            "{} (median of 10 trials; band [1.5, 2.8])",
            parts.join(", ")
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("mean-equivalence", mean_equivalence),
        ("max-equivalence", max_equivalence),
        ("attention-equivalence", attention_equivalence),
        ("stability grid", stability_grid),
        ("convergence in K", convergence),
        ("permutation invariance", permutation_invariance),
        ("hierarchical mixed pooling", hierarchical_mixed),
        ("step-level oracle", step_oracle),
        ("gradient and learnability", learnability),
        ("complexity band", complexity_band),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = run();
        let tag = if outcome.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!outcome.pass);
        println!("criterion {:>2} {tag} {name}: {}", i + 1, outcome.detail);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
