//! Acceptance criteria, one test each. Every test prints a single
//! `criterion N: PASS|FAIL` line with the measured values, then asserts.
//! Run with `cargo test --test acceptance -- --nocapture --test-threads 1`
//! for a readable report.

use std::path::Path;
use std::time::{Duration, Instant};

use chrono::{Datelike, Days, NaiveDate, Weekday};
use oilcurve::calendar::{expiry_date, TradingCalendar};
use oilcurve::evaluation::{
    build_loss_tensor, mae, mcs, mme, rmse, stationary_indices, McsConfig, MmeMode,
};
use oilcurve::forecast::network::Mlp;
use oilcurve::forecast::{
    fit_ar1_direct, run_backtest, train_ftdnn, Activation, BacktestOptions, BacktestSplit, ModelId,
    NetworkConfig,
};
use oilcurve::lambda_search::{search_lambda_global, LambdaDomain, SearchOptions};
use oilcurve::nelson_siegel::{extract_factors, loadings};
use oilcurve::panel::{build_panel, default_grid, PanelOptions};
use oilcurve::quotes::{ContractCode, FuturesQuote};
use oilcurve::rng::{derive_seed, job_rng, standard_normal, uniform};
use oilcurve::synthetic::{
    generate_factors, generate_panel, hump_map_weights, logistic_map_process, FactorProcess, FactorProcessSpec,
};

fn verdict(n: u32, title: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("criterion {n:>2}: {tag}  {title}  [{detail}]");
    assert!(pass, "criterion {n} failed: {detail}");
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn var1_process() -> FactorProcess {
    FactorProcess::Var1 {
        intercept: [4.0, -0.3, 0.1],
        coef: [[0.95, 0.02, 0.0], [0.0, 0.9, 0.05], [0.01, 0.0, 0.8]],
        start: [80.0, -3.0, 1.0],
    }
}

#[test]
fn c01_factor_round_trip() {
    let start = Instant::now();
    let spec = FactorProcessSpec::new(var1_process(), 289, 1).with_noise([1.0, 0.5, 0.5]);
    let truth = generate_factors(&spec).unwrap().series;
    let grid = default_grid();
    let panel = generate_panel(&truth, 0.0058, &grid, 0.0, 1).unwrap();
    let fitted = extract_factors(&panel, 0.0058).unwrap();
    let err = truth
        .beta
        .iter()
        .zip(&fitted.beta)
        .flat_map(|(a, b)| (0..3).map(move |i| (a[i] - b[i]).abs()))
        .fold(0.0, f64::max);
    let took = start.elapsed();
    verdict(
        1,
        "noiseless factor recovery",
        grid.len() == 24 && err < 1e-8 && took < Duration::from_secs(5),
        &format!("T=289 M={} max|err|={err:.2e} (<1e-8) time={} (<5s)", grid.len(), secs(took)),
    );
}

#[test]
fn c02_lambda_recovery() {
    let spec = FactorProcessSpec::new(var1_process(), 289, 2)
        .with_noise([1.0, 0.5, 0.5])
        .with_lambda(0.005);
    let truth = generate_factors(&spec).unwrap().series;
    let panel = generate_panel(&truth, 0.005, &default_grid(), 0.0, 2).unwrap();
    let opts = SearchOptions::default();
    let start = Instant::now();
    let found = search_lambda_global(&panel, &LambdaDomain::default(), &opts).unwrap();
    let took = start.elapsed();
    let err = (found.lambda_star - 0.005).abs();
    verdict(
        2,
        "global decay search",
        opts.grid_points == 200 && err <= 1e-4 && took < Duration::from_secs(30),
        &format!(
            "lambda*={:.7} |err|={err:.2e} (<=1e-4) grid={} time={} (<30s)",
            found.lambda_star,
            opts.grid_points,
            secs(took)
        ),
    );
}

#[test]
fn c03_curvature_peak_at_reciprocal_lambda() {
    let domain = LambdaDomain::default();
    let mut rng = job_rng(3, &[]);
    let mut worst: f64 = 0.0;
    let mut ratio = Vec::new();
    for _ in 0..20 {
        let lambda = uniform(&mut rng, domain.lambda_min, domain.lambda_max);
        let hi = 3.0 / lambda;
        let steps = (hi / 0.01) as usize;
        let (mut best_tau, mut best) = (0.0, f64::NEG_INFINITY);
        for s in 1..=steps {
            let tau = s as f64 * 0.01;
            let c = loadings(lambda, tau).unwrap().curvature;
            if c > best {
                best = c;
                best_tau = tau;
            }
        }
        worst = worst.max((best_tau - 1.0 / lambda).abs());
        ratio.push(best_tau * lambda);
    }
    let (lo, hi) = ratio.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(*r), b.max(*r)));
    verdict(
        3,
        "curvature loading argmax equals 1/lambda",
        worst <= 0.01,
        &format!(
            "20 lambdas, max|argmax - 1/lambda|={worst:.3} days (<=0.01); argmax*lambda in [{lo:.4}, {hi:.4}], \
             the loading peaks at lambda*tau=1.7933, not 1"
        ),
    );
}

#[test]
fn c04_spline_reproduces_cubics() {
    let opts = PanelOptions::default();
    let mut rng = job_rng(4, &[]);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for trial in 0..100 {
        // Bounded so the cubic stays positive on [0, 800] days.
        let a = uniform(&mut rng, 50.0, 120.0);
        let b = uniform(&mut rng, -0.025, 0.025);
        let c = uniform(&mut rng, -2e-5, 2e-5);
        let d = uniform(&mut rng, -2e-8, 2e-8);
        let f = |t: f64| a + b * t + c * t * t + d * t * t * t;
        let date = NaiveDate::from_ymd_opt(2001, 1, 31).unwrap() + Days::new(trial);
        let n = 6 + (trial as usize % 10);
        let mut taus: Vec<u32> = vec![(uniform(&mut rng, 1.0, 29.0)) as u32, 730 + uniform(&mut rng, 0.0, 60.0) as u32];
        while taus.len() < n {
            let t = uniform(&mut rng, 31.0, 719.0) as u32;
            if !taus.contains(&t) {
                taus.push(t);
            }
        }
        let quotes: Vec<FuturesQuote> = taus
            .iter()
            .enumerate()
            .map(|(k, &t)| FuturesQuote {
                contract: ContractCode {
                    product: "CL".into(),
                    delivery_month: 1 + (k as u32 % 12),
                    delivery_year: 2002 + k as i32 / 12,
                },
                observation_date: date,
                settle: f(t as f64),
                expiry: None,
                tau: Some(t),
            })
            .collect();
        let (panel, _) = build_panel(&quotes, &opts).unwrap();
        for (j, &m) in panel.maturities().iter().enumerate() {
            let want = f(m as f64);
            worst = worst.max(((panel.price(0, j) - want) / want).abs());
            checked += 1;
        }
    }
    verdict(
        4,
        "spline reproduces random cubics",
        worst < 1e-9,
        &format!("100 trials, {checked} grid cells, max rel err={worst:.2e} (<1e-9)"),
    );
}

/// Brute force: 25th of the preceding month, back to a weekday if needed,
/// then back three more weekdays.
fn brute_force_expiry(month: u32, year: i32) -> NaiveDate {
    let (pm, py) = if month == 1 { (12, year - 1) } else { (month - 1, year) };
    let weekday = |d: NaiveDate| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun);
    let mut d = NaiveDate::from_ymd_opt(py, pm, 25).unwrap();
    while !weekday(d) {
        d = d.pred_opt().unwrap();
    }
    let mut k = 0;
    while k < 3 {
        d = d.pred_opt().unwrap();
        if weekday(d) {
            k += 1;
        }
    }
    d
}

#[test]
fn c05_expiry_arithmetic() {
    let cal = TradingCalendar::weekends_only();
    let mut months = 0;
    let mut mismatches = Vec::new();
    for year in 1990..=2016 {
        for month in 1..=12 {
            months += 1;
            let got = expiry_date(month, year, &cal).unwrap();
            if got != brute_force_expiry(month, year) {
                mismatches.push(format!("{year}-{month:02}"));
            }
        }
    }
    let obs = NaiveDate::from_ymd_opt(2001, 2, 28).unwrap();
    let tau = cal.trading_days_between(obs, expiry_date(8, 2003, &cal).unwrap());
    let pass = mismatches.is_empty() && (tau as i64 - 625).abs() <= 2;
    verdict(
        5,
        "expiry dates and a known maturity",
        pass,
        &format!(
            "{months} delivery months, {} mismatches; CLQ2003 on 2001-02-28 tau={tau} (625 +-2)",
            mismatches.len()
        ),
    );
}

#[test]
fn c06_network_jacobian() {
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for k in [1usize, 5, 20] {
        let mlp = Mlp { inputs: 1, hidden: k, activation: Activation::Logistic };
        let mut rng = job_rng(6, &[k as u64]);
        for _ in 0..50 {
            let w: Vec<f64> = (0..mlp.n_params()).map(|_| uniform(&mut rng, -2.0, 2.0)).collect();
            let x = [uniform(&mut rng, -2.0, 2.0)];
            let mut g = vec![0.0; w.len()];
            mlp.output_and_gradient(&w, &x, &mut g);
            for i in 0..w.len() {
                let h = 1e-5;
                let (mut up, mut dn) = (w.clone(), w.clone());
                up[i] += h;
                dn[i] -= h;
                let fd = (mlp.output(&up, &x) - mlp.output(&dn, &x)) / (2.0 * h);
                worst = worst.max((g[i] - fd).abs() / g[i].abs().max(1.0));
            }
            points += 1;
        }
    }
    verdict(
        6,
        "analytic Jacobian vs central differences",
        worst < 1e-6,
        &format!("k in {{1,5,20}}, {points} weight points, max rel err={worst:.2e} (<1e-6)"),
    );
}

fn ar_series(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = job_rng(seed, &[]);
    let mut y = vec![50.0];
    for _ in 1..n {
        let prev = *y.last().unwrap();
        y.push(10.0 + 0.8 * prev + 2.0 * standard_normal(&mut rng));
    }
    y
}

#[test]
fn c07_identity_network_is_ar1() {
    let y = ar_series(289, 7);
    let split = BacktestSplit::default_for(y.len()).unwrap();
    let mut worst: f64 = 0.0;
    for h in [1, 3, 6, 12] {
        // Early stopping off: the network must reach the least-squares fit.
        let cfg = NetworkConfig {
            hidden_neurons: 1,
            activation: Activation::Identity,
            horizon: h,
            early_stop_patience: 0,
            ..Default::default()
        };
        let net = train_ftdnn(&y, &cfg, &split).unwrap();
        let ar = fit_ar1_direct(&y, h, split.train.clone()).unwrap();
        for t in split.test.start..y.len() - h {
            worst = worst.max((net.forecast(&y, t).unwrap() - ar.predict(y[t])).abs());
        }
    }
    verdict(
        7,
        "identity FTDNN with one unit equals direct AR(1)",
        worst < 1e-6,
        &format!("h in {{1,3,6,12}}, max|FTDNN - AR1| over test origins={worst:.2e} (<1e-6)"),
    );
}

#[test]
fn c08_teacher_student() {
    let teacher = Mlp { inputs: 1, hidden: 2, activation: Activation::Logistic };
    let w = hump_map_weights();
    let mut y = vec![0.3];
    for _ in 1..289 {
        let prev = *y.last().unwrap();
        y.push(teacher.output(&w, &[prev]));
    }
    let split = BacktestSplit::default_for(y.len()).unwrap();
    let start = Instant::now();
    let sse: Vec<f64> = (0..10)
        .map(|r| {
            let cfg = NetworkConfig { hidden_neurons: 2, seed: derive_seed(8, &[r]), ..Default::default() };
            train_ftdnn(&y, &cfg, &split).unwrap().diagnostics.train_sse
        })
        .collect();
    let took = start.elapsed();
    let hits = sse.iter().filter(|s| **s < 1e-6).count();
    let best = sse.iter().copied().fold(f64::INFINITY, f64::min);
    verdict(
        8,
        "two-unit teacher recovered",
        hits >= 1 && took < Duration::from_secs(60),
        &format!("{hits}/10 restarts with train SSE<1e-6, best={best:.2e}, time={} (<60s)", secs(took)),
    );
}

#[test]
fn c09_network_beats_ar1_on_logistic_map() {
    let grid = default_grid();
    let mut wins = 0;
    let mut lines = Vec::new();
    let start = Instant::now();
    for seed in 0..20u64 {
        let spec = FactorProcessSpec::new(logistic_map_process(), 289, seed).with_noise([0.5, 0.1, 0.1]);
        let factors = generate_factors(&spec).unwrap().series;
        let panel = generate_panel(&factors, spec.lambda, &grid, 0.0, seed).unwrap();
        let mut opts = BacktestOptions::new(BacktestSplit::default_for(factors.len()).unwrap(), grid.clone());
        opts.models = vec![ModelId::Ftdnn, ModelId::Ar1];
        opts.horizons = vec![1];
        opts.hidden_candidates = (1..=8).collect();
        opts.restarts = 4;
        opts.seed = seed;
        let result = run_backtest(&factors, &opts).unwrap();
        assert!(result.failures.is_empty(), "{:?}", result.failures);
        let tensor = build_loss_tensor(&result.runs, &panel).unwrap();
        let avg = |m: ModelId| {
            grid.iter().map(|&g| tensor.stat(m, 1, g).unwrap().rmse).sum::<f64>() / grid.len() as f64
        };
        let (net, ar) = (avg(ModelId::Ftdnn), avg(ModelId::Ar1));
        if net < ar {
            wins += 1;
        }
        lines.push(format!("{net:.2}/{ar:.2}"));
    }
    verdict(
        9,
        "FTDNN beats AR(1) on a nonlinear factor map",
        wins >= 16,
        &format!(
            "{wins}/20 seeds (>=16), avg price RMSE FTDNN/AR1: {}; time={}",
            lines.join(" "),
            secs(start.elapsed())
        ),
    );
}

fn names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("m{i}")).collect()
}

#[test]
fn c10_model_confidence_set() {
    let start = Instant::now();
    let n = 250;

    // (a) identical losses
    let mut rng = job_rng(10, &[1]);
    let base: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng).powi(2)).collect();
    let cfg = McsConfig { seed: 1, ..Default::default() };
    let same = mcs(&names(3), &vec![base.clone(); 3], &cfg).unwrap();
    let a_ok = same.surviving.len() == 3 && same.p_values.iter().all(|p| *p == 1.0);

    // (b) one model worse by exactly five standard errors of the mean difference
    let mut rng = job_rng(10, &[2]);
    let good: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| 1.0 + standard_normal(&mut rng)).collect()).collect();
    let noise: Vec<f64> = (0..n).map(|_| 1.0 + standard_normal(&mut rng)).collect();
    let diff: Vec<f64> = noise.iter().zip(&good[0]).map(|(a, b)| a - b).collect();
    let mean = diff.iter().sum::<f64>() / n as f64;
    let sd = (diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let shift = 5.0 * sd / (n as f64).sqrt() - mean;
    let bad: Vec<f64> = noise.iter().map(|v| v + shift).collect();
    let mut losses = good.clone();
    losses.push(bad);
    let cfg_b = McsConfig { replications: 2000, seed: 2, ..Default::default() };
    let dominated = mcs(&names(4), &losses, &cfg_b).unwrap();
    let p_bad = dominated.p_value("m3").unwrap();
    let b_ok = p_bad < 0.01 && !dominated.contains("m3");

    // (c) size under exchangeable losses
    let trials = 500;
    let cfg_c = McsConfig { replications: 1000, ..Default::default() };
    let mut rejections = 0;
    for trial in 0..trials {
        let mut rng = job_rng(10, &[3, trial]);
        let common: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let losses: Vec<Vec<f64>> = (0..4)
            .map(|_| common.iter().map(|c| 2.0 + c + standard_normal(&mut rng)).collect())
            .collect();
        let r = mcs(&names(4), &losses, &McsConfig { seed: derive_seed(10, &[trial]), ..cfg_c }).unwrap();
        if r.surviving.len() < 4 {
            rejections += 1;
        }
    }
    let size = rejections as f64 / trials as f64;
    let c_ok = size <= 0.15;
    // Same trials with unit blocks, for diagnosis only: the losses are
    // serially independent, so this isolates the block-length effect.
    let mut unit_rejections = 0;
    for trial in 0..trials {
        let mut rng = job_rng(10, &[3, trial]);
        let common: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let losses: Vec<Vec<f64>> = (0..4)
            .map(|_| common.iter().map(|c| 2.0 + c + standard_normal(&mut rng)).collect())
            .collect();
        let cfg = McsConfig { seed: derive_seed(10, &[trial]), block_length: 1.0, ..cfg_c };
        if mcs(&names(4), &losses, &cfg).unwrap().surviving.len() < 4 {
            unit_rejections += 1;
        }
    }
    let took = start.elapsed();
    verdict(
        10,
        "model confidence set",
        a_ok && b_ok && c_ok && took < Duration::from_secs(600),
        &format!(
            "(a) identical: {} survive, p={:?}; (b) 5 s.e. worse model p={p_bad:.4} (<0.01); \
             (c) n={n} L=20 size {rejections}/{trials}={size:.3} (<=0.15, alpha=0.10, B=1000), \
             same trials with L=1: {:.3}; time={} (<600s)",
            same.surviving.len(),
            same.p_values,
            unit_rejections as f64 / trials as f64,
            secs(took)
        ),
    );
}

#[test]
fn c11_stationary_bootstrap_block_length() {
    let n = 500;
    let resamples = 100_000;
    let mut rng = job_rng(11, &[]);
    let mut buf = Vec::with_capacity(n);
    let (mut steps, mut breaks) = (0u64, 0u64);
    for _ in 0..resamples {
        stationary_indices(&mut rng, n, 20.0, &mut buf);
        for w in buf.windows(2) {
            steps += 1;
            if w[1] != (w[0] + 1) % n {
                breaks += 1;
            }
        }
    }
    // A restart that lands on the successor is invisible, which inflates the
    // estimate by n / (n - 1) = 1.002.
    let mean_block = steps as f64 / breaks as f64;
    verdict(
        11,
        "mean block length at L=20",
        (mean_block - 20.0).abs() <= 0.5,
        &format!("{resamples} resamples of n={n}, steps/breaks={mean_block:.3} (20 +-0.5)"),
    );
}

#[test]
fn c12_loss_arithmetic() {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let mut ok = true;
    ok &= close(rmse(&[3.0, -4.0]).unwrap(), 12.5f64.sqrt());
    ok &= close(mae(&[3.0, -4.0]).unwrap(), 3.5);
    ok &= close(rmse(&[-2.5; 7]).unwrap(), 2.5) && close(mae(&[-2.5; 7]).unwrap(), 2.5);
    ok &= close(mme(&[0.25], MmeMode::O).unwrap(), 0.5) && close(mme(&[0.25], MmeMode::U).unwrap(), 0.25);
    ok &= close(mme(&[1.0, -1.0], MmeMode::O).unwrap(), 1.0) && close(mme(&[1.0, -1.0], MmeMode::U).unwrap(), 1.0);
    ok &= close(mme(&[-4.0], MmeMode::O).unwrap(), 4.0) && close(mme(&[-4.0], MmeMode::U).unwrap(), 2.0);

    let mut rng = job_rng(12, &[]);
    let mut violations = 0;
    for _ in 0..1000 {
        let len = 1 + (uniform(&mut rng, 0.0, 100.0) as usize);
        let e: Vec<f64> = (0..len).map(|_| 10.0 * standard_normal(&mut rng)).collect();
        if rmse(&e).unwrap() < mae(&e).unwrap() {
            violations += 1;
        }
    }
    verdict(
        12,
        "loss arithmetic",
        ok && violations == 0,
        &format!("hand cases match to 1e-12: {ok}; RMSE<MAE in {violations}/1000 random series"),
    );
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn c13_demo_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let start = Instant::now();
    let ca = oilcurve::cli::run(["oilcurve", "demo", "--out", a.to_str().unwrap()]);
    let cb = oilcurve::cli::run(["oilcurve", "demo", "--out", b.to_str().unwrap()]);
    let (ta, tb) = (tree(&a), tree(&b));
    let differing: Vec<&str> = ta
        .iter()
        .zip(&tb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    verdict(
        13,
        "demo bundle is byte-identical on rerun",
        ca == 0 && cb == 0 && ta.len() == tb.len() && ta.len() > 20 && differing.is_empty(),
        &format!(
            "exit codes {ca},{cb}; {} files each, differing: {differing:?}; time={}",
            ta.len(),
            secs(start.elapsed())
        ),
    );
}
