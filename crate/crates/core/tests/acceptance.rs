//! End-to-end acceptance run. Every criterion prints one PASS/FAIL line with
//! its measured values and a summary follows. Failed criteria make the run
//! exit nonzero only when `CTXID_ACCEPTANCE_STRICT` is set. Runs without the
//! libtest harness so the lines are never captured.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use ctxid::diffnet::gradcheck::check_random_networks;
use ctxid::diffnet::{init_params, Activation, MlpSpec};
use ctxid::harness::drone::{drone_data, gust_episodes, max_abs_x, run_episodes, tracking_episodes, train_drone, DroneModel};
use ctxid::harness::poly::{budget_curve, poly_data, train_poly, truncated, PolyModel};
use ctxid::harness::spring::{evaluate_spring, spring_data, train_spring};
use ctxid::harness::{mean, median, run_experiment, Experiment, ExperimentConfig, Method};
use ctxid::metalearn::{classical_task_mse, infer_context, MetaSysIdConfig, TrainedModel};
use ctxid::mpc::{MpcConfig, MpcCost};
use ctxid::optim::InnerOptimizer;
use ctxid::rng;
use ctxid::systems::{
    drone_derivative, eog_wind, rk4_step, simulate_spring, spring_derivative, spring_energy, SpringParams, HOVER_ACTION,
};

struct Ledger {
    results: Vec<(usize, bool)>,
}

impl Ledger {
    fn report(&mut self, id: usize, name: &str, pass: bool, detail: String, elapsed: Duration, limit: Option<Duration>) {
        let in_time = limit.map_or(true, |l| elapsed <= l);
        let ok = pass && in_time;
        let limit = limit.map(|l| format!(" (limit {}s)", l.as_secs())).unwrap_or_default();
        println!(
            "criterion {id:>2} {}: {name}: {detail}; {:.1}s{limit}",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
        self.results.push((id, ok));
    }
}

fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

fn gradient_check(l: &mut Ledger) {
    let t = Instant::now();
    let r = check_random_networks(100, 2024).unwrap();
    l.report(
        1,
        "gradient check",
        r.passed() && r.networks == 100 && r.max_rel_error < 1e-4,
        format!(
            "{} networks, {} coordinates, {} failures, max relative error {:.2e}",
            r.networks, r.coordinates, r.failures, r.max_rel_error
        ),
        t.elapsed(),
        secs(10),
    );
}

/// Models linear in `c`: gradient descent must reach the normal-equations
/// solution with a non-increasing loss.
fn convex_inner_loop(l: &mut Ledger) {
    let t = Instant::now();
    let (x_dim, d_c, y_dim, n) = (2, 3, 5, 6);
    let mut worst = 0.0f64;
    let mut monotone = true;
    for case in 0..20u64 {
        let spec = MlpSpec::new(vec![x_dim + d_c, y_dim], Activation::Identity).unwrap();
        let theta = init_params(&spec, case);
        let mut r = rng::stream(case, "acceptance.convex");
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..x_dim).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        let ys: Vec<Vec<f64>> = (0..n).map(|_| (0..y_dim).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        // Independent oracle from the raw weights: W = [Wx Wc], f = Wx x + Wc c + b.
        let (w, b) = theta.layer(0);
        let cols = x_dim + d_c;
        let wx = DMatrix::from_fn(y_dim, x_dim, |i, j| w[i * cols + j]);
        let wc = DMatrix::from_fn(y_dim, d_c, |i, j| w[i * cols + x_dim + j]);
        let bias = DVector::from_column_slice(b);
        let mut rhs = DVector::zeros(y_dim);
        for (x, y) in xs.iter().zip(&ys) {
            rhs += DVector::from_column_slice(y) - &wx * DVector::from_column_slice(x) - &bias;
        }
        rhs /= n as f64;
        let gram = wc.transpose() * &wc;
        let exact = gram.clone().cholesky().unwrap().solve(&(wc.transpose() * rhs));
        // The context loss is a mean over points of the summed squared error.
        let hess = &gram * 2.0;
        let top = hess.symmetric_eigen().eigenvalues.max();
        let cfg = MetaSysIdConfig {
            k: 5000,
            alpha: 1.0 / top,
            d_c,
            inner_optimizer: InnerOptimizer::Gd,
            ..MetaSysIdConfig::polynomial()
        };
        let model = TrainedModel {
            spec,
            theta_bar: theta.clone(),
            theta,
            cfg,
        };
        let (c, trace) = infer_context(&model, &xs, &ys, 5000, false).unwrap();
        let err = c.values.iter().zip(exact.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(err);
        monotone &= trace.windows(2).all(|p| p[1] <= p[0] * (1.0 + 1e-12));
    }
    l.report(
        2,
        "convex inner loop",
        worst < 1e-6 && monotone,
        format!("20 linear models, max |c - c*| {worst:.2e}, monotone trace {monotone}"),
        t.elapsed(),
        secs(5),
    );
}

fn classical_sysid(l: &mut Ledger) {
    let t = Instant::now();
    let cfg = ExperimentConfig::new(Experiment::Polynomial);
    let data = poly_data(&cfg.polynomial, 0);
    let m10 = mean(&classical_task_mse(&truncated(&data.test, 10).unwrap(), 4).unwrap());
    let m5 = mean(&classical_task_mse(&truncated(&data.test, 5).unwrap(), 4).unwrap());
    l.report(
        3,
        "classical system identification",
        m10 < 1e-6 && m5 < 1e-10,
        format!("test MSE {m10:.2e} at N=10, {m5:.2e} at N=5"),
        t.elapsed(),
        secs(1),
    );
}

/// Trains all polynomial methods on five seeds; returns the Meta-SysId models
/// and test sets for the budget sweep.
fn polynomial_ordering(l: &mut Ledger) -> Vec<(TrainedModel, Vec<ctxid::metalearn::Task>)> {
    let t = Instant::now();
    let cfg = ExperimentConfig::new(Experiment::Polynomial);
    let pc = &cfg.polynomial;
    let methods = [Method::MetaSysId, Method::Fomaml, Method::SetEncoder, Method::NoAdapt, Method::ClassicalSysId];
    let mut metas = Vec::new();
    let mut wins_n5 = 0;
    let mut wins_small = 0;
    let mut table: BTreeMap<(Method, usize), Vec<f64>> = BTreeMap::new();
    for seed in 0..5u64 {
        let data = poly_data(pc, seed);
        let mut mse = BTreeMap::new();
        for m in methods {
            let (model, _) = train_poly(m, &data.train, pc, seed).unwrap();
            for n in [1, 3, 5] {
                let v = mean(&model.task_mse(&truncated(&data.test, n).unwrap()).unwrap());
                mse.insert((m, n), v);
                table.entry((m, n)).or_default().push(v);
            }
            if let PolyModel::Meta(meta) = model {
                metas.push((meta, data.test.clone()));
            }
        }
        let meta = |n| mse[&(Method::MetaSysId, n)];
        if [Method::Fomaml, Method::SetEncoder, Method::NoAdapt].iter().all(|m| meta(5) < mse[&(*m, 5)]) {
            wins_n5 += 1;
        }
        if meta(1) < mse[&(Method::ClassicalSysId, 1)] && meta(3) < mse[&(Method::ClassicalSysId, 3)] {
            wins_small += 1;
        }
        println!(
            "  polynomial seed {seed}: N=5 meta {:.4} fomaml {:.4} set_encoder {:.4} no_adapt {:.4}; meta/classical N=1 {:.4}/{:.4} N=3 {:.4}/{:.4}",
            meta(5),
            mse[&(Method::Fomaml, 5)],
            mse[&(Method::SetEncoder, 5)],
            mse[&(Method::NoAdapt, 5)],
            meta(1),
            mse[&(Method::ClassicalSysId, 1)],
            meta(3),
            mse[&(Method::ClassicalSysId, 3)],
        );
    }
    let avg = |m, n| mean(&table[&(m, n)]);
    l.report(
        4,
        "polynomial ordering",
        wins_n5 >= 4 && wins_small >= 4,
        format!(
            "seeds with meta best at N=5: {wins_n5}/5, meta < classical at N=1 and 3: {wins_small}/5; means N=5 meta {:.4} fomaml {:.4} set_encoder {:.4} no_adapt {:.4}",
            avg(Method::MetaSysId, 5),
            avg(Method::Fomaml, 5),
            avg(Method::SetEncoder, 5),
            avg(Method::NoAdapt, 5)
        ),
        t.elapsed(),
        secs(45 * 60),
    );
    metas
}

fn budget_sweep(l: &mut Ledger, metas: &[(TrainedModel, Vec<ctxid::metalearn::Task>)]) {
    let t = Instant::now();
    let steps = [10, 20, 40, 60, 80, 100];
    let mut curves = Vec::new();
    for (model, test) in metas {
        curves.push(budget_curve(model, test, 5, &steps).unwrap());
    }
    let at = |i: usize| mean(&curves.iter().map(|c| c[i]).collect::<Vec<_>>());
    let (m10, m100) = (at(0), at(5));
    l.report(
        5,
        "inference budget sweep",
        !curves.is_empty() && m100 <= 1.10 * m10,
        format!(
            "mean test MSE over {} models: {}",
            curves.len(),
            steps.iter().enumerate().map(|(i, k)| format!("K={k} {:.4}", at(i))).collect::<Vec<_>>().join(", ")
        ),
        t.elapsed(),
        secs(5 * 60),
    );
}

/// Exact flow `exp(A t)` of the linear spring system, with `A` read off the
/// derivative function column by column.
fn exact_spring(p: &SpringParams, s0: &[f64; 4], t: f64) -> DVector<f64> {
    let a = DMatrix::from_fn(4, 4, |i, j| {
        let mut e = [0.0; 4];
        e[j] = 1.0;
        spring_derivative(p, &e)[i]
    });
    (a * t).exp() * DVector::from_column_slice(s0)
}

fn spring_physics(l: &mut Ledger) {
    let t = Instant::now();
    let p = SpringParams {
        m1: 1.1,
        m2: 0.9,
        k1: 1.2,
        k2: 0.8,
        k3: 1.05,
    };
    let s0 = [0.7, -0.4, 0.2, 0.5];
    let traj = simulate_spring(&p, &s0, 10.0, 1e-3).unwrap();
    let e0 = spring_energy(&p, &s0);
    let drift = traj
        .states
        .iter()
        .map(|s| (spring_energy(&p, &[s[0], s[1], s[2], s[3]]) - e0).abs() / e0)
        .fold(0.0, f64::max);
    // Global error at T = 1 for dt and dt / 2.
    let exact = exact_spring(&p, &s0, 1.0);
    let err = |dt: f64| {
        let mut s = s0;
        for _ in 0..(1.0 / dt).round() as usize {
            s = rk4_step(|x| spring_derivative(&p, x), &s, dt).unwrap();
        }
        (DVector::from_column_slice(&s) - &exact).amax()
    };
    let ratio = err(0.1) / err(0.05);
    let ratio2 = err(0.05) / err(0.025);
    let order_ok = [ratio, ratio2].iter().all(|r| *r > 8.0 && *r < 32.0);
    l.report(
        6,
        "mass-spring physics",
        drift < 1e-6 && order_ok,
        format!("max relative energy drift {drift:.2e}; error ratios on halving dt {ratio:.2}, {ratio2:.2} (16 expected)"),
        t.elapsed(),
        secs(30),
    );
}

fn spring_prediction(l: &mut Ledger) {
    let t = Instant::now();
    let cfg = ExperimentConfig::new(Experiment::MassSpring);
    let sc = &cfg.spring;
    let mut ok = true;
    let mut lines = Vec::new();
    for seed in 0..3u64 {
        let data = spring_data(sc, seed).unwrap();
        let mut res = BTreeMap::new();
        for m in [Method::MetaSysId, Method::NoAdapt] {
            let (model, _) = train_spring(m, &data, sc, seed).unwrap();
            let ev = evaluate_spring(&model, &data.test, sc).unwrap();
            let block = median(&ev.iter().map(|e| e.mse_block).collect::<Vec<_>>());
            let roll = median(&ev.iter().map(|e| e.rollout).collect::<Vec<_>>());
            res.insert(m, (block, roll));
        }
        let (mb, mr) = res[&Method::MetaSysId];
        let (nb, nr) = res[&Method::NoAdapt];
        ok &= mb < nb && mr < nr;
        lines.push(format!("seed {seed}: 25-step {mb:.2e} vs {nb:.2e}, 975-step {mr:.2e} vs {nr:.2e}"));
    }
    l.report(
        7,
        "mass-spring prediction (meta vs no-adapt medians)",
        ok,
        lines.join("; "),
        t.elapsed(),
        secs(60 * 60),
    );
}

fn drone_dynamics(l: &mut Ledger) {
    let t = Instant::now();
    let d = drone_derivative(&[0.0; 6], &HOVER_ACTION, 0.0);
    let hover = d.iter().all(|v| *v == 0.0);
    let (w_bar, w_gust, period, t0) = (4.0, 6.0, 3.0, 5.0);
    let start = (eog_wind(t0, w_bar, w_gust, period, t0) - w_bar).abs();
    let end = (eog_wind(t0 + period, w_bar, w_gust, period, t0) - w_bar).abs();
    l.report(
        8,
        "drone dynamics",
        hover && start < 1e-6 && end < 1e-6,
        format!("hover derivative {d:?}; EOG endpoint errors {start:.1e}, {end:.1e}"),
        t.elapsed(),
        None,
    );
}

fn oracle_mpc(l: &mut Ledger) {
    let t = Instant::now();
    let cfg = ExperimentConfig::new(Experiment::DroneMpc);
    let mpc = MpcConfig {
        cost: MpcCost::StabilizeOrigin,
        ..cfg.drone.mpc.clone()
    };
    let eps = run_episodes(&DroneModel::Oracle, &gust_episodes(&cfg.drone, 0), &mpc).unwrap();
    let worst = eps.iter().map(max_abs_x).fold(0.0, f64::max);
    l.report(
        9,
        "oracle MPC under gust",
        eps.len() == 10 && worst < 0.5,
        format!("{} runs, max |x| {worst:.4} m", eps.len()),
        t.elapsed(),
        secs(10 * 60),
    );
}

fn mpc_ordering(l: &mut Ledger) {
    let t = Instant::now();
    let cfg = ExperimentConfig::new(Experiment::DroneMpc);
    let dc = &cfg.drone;
    let data = drone_data(dc, 0).unwrap();
    let specs = tracking_episodes(dc, 0).unwrap();
    let mpc = MpcConfig {
        cost: MpcCost::TrackReference,
        ..dc.mpc.clone()
    };
    let mut cost = BTreeMap::new();
    for m in [Method::MetaSysId, Method::NoAdapt] {
        let (model, _) = train_drone(m, &data, dc, 0).unwrap();
        let eps = run_episodes(&model, &specs, &mpc).unwrap();
        cost.insert(m, mean(&eps.iter().map(|e| e.total_cost).collect::<Vec<_>>()));
    }
    let (meta, base) = (cost[&Method::MetaSysId], cost[&Method::NoAdapt]);
    l.report(
        10,
        "MPC ordering",
        meta < base,
        format!("mean total tracking cost over {} episodes: meta {meta:.4}, no-adapt {base:.4}", specs.len()),
        t.elapsed(),
        secs(30 * 60),
    );
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let key = p.strip_prefix(root).unwrap().display().to_string();
                out.insert(key, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn small_configs() -> Vec<ExperimentConfig> {
    let mut poly = ExperimentConfig::new(Experiment::Polynomial);
    poly.seeds = vec![7];
    poly.polynomial.train_tasks = 64;
    poly.polynomial.test_tasks = 32;
    for e in [&mut poly.polynomial.fomaml.epochs, &mut poly.polynomial.noadapt.epochs, &mut poly.polynomial.set_encoder.epochs] {
        *e = 20;
    }
    poly.polynomial.meta.epochs = 20;
    let mut budget = poly.clone();
    budget.experiment = Experiment::BudgetSweep;
    let mut interp = poly.clone();
    interp.experiment = Experiment::Interpolation;
    let mut spring = ExperimentConfig::new(Experiment::MassSpring);
    spring.seeds = vec![7];
    spring.spring.train_traj = 10;
    spring.spring.test_traj = 5;
    spring.spring.duration = 2.0;
    spring.spring.meta.epochs = 5;
    spring.spring.noadapt.epochs = 5;
    let mut drone = ExperimentConfig::new(Experiment::DroneMpc);
    drone.seeds = vec![7];
    drone.drone.train_traj = 20;
    drone.drone.meta.epochs = 3;
    drone.drone.noadapt.epochs = 3;
    drone.drone.episodes = 2;
    drone.drone.episode_duration = 2.0;
    drone.drone.eog_runs = 1;
    drone.drone.eog_duration = 6.0;
    vec![poly, budget, interp, spring, drone]
}

fn determinism(l: &mut Ledger) {
    let t = Instant::now();
    let mut ok = true;
    let mut files = 0;
    for cfg in small_configs() {
        cfg.validate().unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = run_experiment(&cfg, Some(a.path())).unwrap();
        let rb = run_experiment(&cfg, Some(b.path())).unwrap();
        assert!(ra.error.is_none() && rb.error.is_none());
        let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
        files += ta.len();
        let same = ta == tb && ta.keys().any(|k| k.ends_with(".csv"));
        if !same {
            println!("  {} output differs between runs", cfg.experiment.name());
        }
        ok &= same;
    }
    l.report(
        11,
        "determinism",
        ok,
        format!("5 experiment kinds run twice, {files} files compared byte for byte"),
        t.elapsed(),
        None,
    );
}

fn main() {
    let mut l = Ledger { results: Vec::new() };
    gradient_check(&mut l);
    convex_inner_loop(&mut l);
    classical_sysid(&mut l);
    let metas = polynomial_ordering(&mut l);
    budget_sweep(&mut l, &metas);
    spring_physics(&mut l);
    spring_prediction(&mut l);
    drone_dynamics(&mut l);
    oracle_mpc(&mut l);
    mpc_ordering(&mut l);
    determinism(&mut l);
    let failed: Vec<usize> = l.results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    println!("acceptance: {} of {} criteria passed", l.results.len() - failed.len(), l.results.len());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        // Unmet criteria are reported, not fatal, unless strict mode is asked for.
        if std::env::var_os("CTXID_ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
    }
}
