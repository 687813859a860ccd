//! Acceptance suite. Runs as a plain binary so that every criterion prints
//! exactly one PASS/FAIL line; exits nonzero if any criterion fails.

mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};
use superhedge::backtest::{default_kappas, run_backtest, BacktestConfig};
use superhedge::market::{load_prices, CalibrationSpec, PricePath};
use superhedge::oracle::{compare, grid_price, GridSpec};
use superhedge::recursion::{
    aip_check_mus, backward_step, backward_step_with, gamma_recursion, price_multi_step,
    PayoffSystem, Regime, StepCase, StepOptions,
};
use superhedge::strategy::{optimal_strategy, simulate_priced};
use superhedge::{ConvexPwl, MarketModel};

type Outcome = Result<String, String>;
type Criterion = (&'static str, Box<dyn Fn() -> Option<Outcome>>);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn frictionless_benchmark() -> Outcome {
    let model = MarketModel::constant(1, 0.9, 1.2, 0.0, 100.0).unwrap();
    let payoff = ConvexPwl::call(100.0);
    let start = Instant::now();
    let p0 = price_multi_step(&payoff, &model).unwrap().p0;
    let elapsed = start.elapsed();
    let grid = grid_price(
        &PayoffSystem::terminal(payoff),
        0.0,
        100.0,
        0.9,
        1.2,
        0.0,
        &GridSpec::default(),
    )
    .unwrap()
    .price;
    let want = 20.0 / 3.0;
    check(
        (p0 - want).abs() <= 1e-9 && (grid - want).abs() <= 5e-4 && elapsed < Duration::from_millis(10),
        format!("p0 = {p0:.12}, grid = {grid:.9}, closed-form time = {elapsed:?}"),
    )
}

fn one_step_with_costs() -> Outcome {
    let later = PayoffSystem::terminal(ConvexPwl::call(100.0));
    let mut worst = 0f64;
    let mut detail = Vec::new();
    for &(a, b, k, p_want, phi_want) in &[
        (0.9, 1.2, 0.01, 22.0 / 3.0, 2.0 / 3.0),
        (0.99, 1.1, 0.02, 30.0 / 11.0, 10.0 / 11.0),
    ] {
        let model = MarketModel::constant(1, a, b, k, 100.0).unwrap();
        let p0 = price_multi_step(&ConvexPwl::call(100.0), &model).unwrap().p0;
        let d = optimal_strategy(&later, 0.0, 100.0, a, b, k, p0).unwrap();
        worst = worst.max((p0 - p_want).abs()).max((d.phi_opt - phi_want).abs());
        detail.push(format!("{:?}: p0 = {p0:.12}, phi = {:.12}", d.regime, d.phi_opt));
    }
    check(worst <= 1e-9, format!("{}; max error {worst:.1e}", detail.join("; ")))
}

fn three_way_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20240501);
    let grid = GridSpec::fine();
    let start = Instant::now();
    let mut worst = (0f64, 0usize);
    let mut failures = 0;
    for i in 0..500 {
        let inst = one_step_instance(&mut rng, i);
        let c = compare(&inst.system, inst.phi_prev, inst.s, inst.alpha, inst.beta, inst.kappa, &grid);
        match c {
            Ok(c) => {
                let tol = 1e-8f64.max(5.0 * c.grid_step);
                let d = c.max_discrepancy();
                if d > worst.0 {
                    worst = (d, i);
                }
                if d > tol {
                    failures += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    let elapsed = start.elapsed();
    check(
        failures == 0 && elapsed < Duration::from_secs(60),
        format!(
            "500 instances, {failures} beyond tolerance, max discrepancy {:.2e} (instance {}), {elapsed:.1?}",
            worst.0, worst.1
        ),
    )
}

fn superhedging() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let start = Instant::now();
    let mut worst_short = f64::NEG_INFINITY;
    let mut paths = 0;
    let mut errors = 0;
    for _ in 0..200 {
        let steps = rng.gen_range(1..=4);
        let spot = rng.gen_range(50.0..150.0);
        let model = random_model(&mut rng, steps, spot);
        let payoff = random_nonneg_payoff(&mut rng, spot);
        let Ok(pricing) = price_multi_step(&payoff, &model) else {
            errors += 1;
            continue;
        };
        for _ in 0..100 {
            let path = PricePath::new(in_support_path(&mut rng, &model)).unwrap();
            match simulate_priced(&payoff, &model, &pricing, &path) {
                Ok(ep) => {
                    let short = (ep.payoff - ep.terminal_value()) / spot;
                    worst_short = worst_short.max(short);
                    paths += 1;
                }
                Err(_) => errors += 1,
            }
        }
    }

    // minimality: with the optimal position, some endpoint leaves no surplus
    let mut worst_bind = 0f64;
    let mut worst_one_step_short = f64::NEG_INFINITY;
    for i in 0..500 {
        let inst = one_step_instance(&mut rng, i);
        let earlier = backward_step(&inst.system, inst.alpha, inst.beta, inst.kappa).unwrap();
        let v = earlier.evaluate(inst.phi_prev, inst.s);
        let d = optimal_strategy(&inst.system, inst.phi_prev, inst.s, inst.alpha, inst.beta, inst.kappa, v)
            .unwrap();
        let wealth = |x: f64| {
            v + d.phi_opt * (x - inst.s) - inst.kappa * (d.phi_opt - inst.phi_prev).abs() * inst.s
                - inst.system.evaluate(d.phi_opt, x)
        };
        let surplus = wealth(inst.alpha * inst.s).min(wealth(inst.beta * inst.s));
        let scale = inst.s.max(v.abs());
        worst_bind = worst_bind.max(surplus.abs() / scale);
        worst_one_step_short = worst_one_step_short.max(-surplus / inst.s);
    }
    let elapsed = start.elapsed();
    check(
        errors == 0
            && worst_short <= 1e-8
            && worst_bind <= 1e-8
            && worst_one_step_short <= 1e-8
            && elapsed < Duration::from_secs(120),
        format!(
            "{paths} paths, worst shortfall/S0 {worst_short:.2e}; one-step binding gap {worst_bind:.2e}; {errors} errors; {elapsed:.1?}"
        ),
    )
}

fn slopes_increase(f: &ConvexPwl) -> bool {
    f.pieces().windows(2).all(|w| w[1].slope > w[0].slope)
}

fn structural_closure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut steps = 0;
    let mut bad = 0;
    while steps < 1000 {
        let mut sys = PayoffSystem::terminal(random_convex(&mut rng, 6));
        for _ in 0..rng.gen_range(1..=3) {
            let kappa = KAPPAS[rng.gen_range(0..KAPPAS.len())];
            let (a, b) = admissible_bounds(&mut rng, &sys.mus(), kappa);
            match backward_step(&sys, a, b, kappa) {
                Ok(next) => {
                    steps += 1;
                    let ok = next.validate().is_ok()
                        && next.components().iter().all(|c| 1.0 + c.mu > 0.0 && slopes_increase(&c.ghat));
                    if !ok {
                        bad += 1;
                    }
                    sys = next;
                }
                Err(_) => {
                    steps += 1;
                    bad += 1;
                    break;
                }
            }
        }
    }

    let mut worst = 0f64;
    for i in 0..100 {
        let kappa = [0.005, 0.01, 0.02, 0.05, 0.2][i % 5];
        let mut sys = PayoffSystem::terminal(random_convex(&mut rng, 6));
        if i % 2 == 1 {
            let (a, b) = admissible_bounds(&mut rng, &[0.0], kappa);
            sys = backward_step(&sys, a, b, kappa).unwrap();
        }
        let alpha = (1.0 - kappa) / (1.0 + sys.mus()[0]);
        let beta = alpha + rng.gen_range(0.05..0.4);
        let run = |r| {
            backward_step_with(
                &sys,
                alpha,
                beta,
                kappa,
                StepOptions {
                    force_regime: Some(r),
                    ..Default::default()
                },
            )
            .unwrap()
        };
        let (large, small) = (run(Regime::Large), run(Regime::Small));
        for _ in 0..10 {
            let phi = rng.gen_range(-2.0..2.0);
            let s = rng.gen_range(50.0..150.0);
            let (pl, ps) = (large.evaluate(phi, s), small.evaluate(phi, s));
            worst = worst.max((pl - ps).abs() / 1f64.max(pl.abs()));
        }
    }
    check(
        bad == 0 && worst <= 1e-9,
        format!("{steps} steps, {bad} invariant violations; boundary regime gap {worst:.2e}"),
    )
}

fn kappa_monotonicity() -> Outcome {
    let model = MarketModel::new(
        100.0,
        vec![0.975, 0.978, 0.972, 0.976],
        vec![1.021, 1.024, 1.019, 1.025],
        vec![0.0; 4],
    )
    .unwrap();
    let payoff = ConvexPwl::call(100.0);
    let prices: Vec<f64> = default_kappas()
        .iter()
        .map(|&k| price_multi_step(&payoff, &model.with_kappa(k).unwrap()).unwrap().p0 / 100.0)
        .collect();
    let ok = prices.windows(2).all(|w| w[1] >= w[0]);
    check(
        ok,
        format!(
            "p0/S0 over kappa 0.2%..2%: {}",
            prices.iter().map(|p| format!("{:.4}%", 100.0 * p)).collect::<Vec<_>>().join(" ")
        ),
    )
}

fn aip_detection() -> Outcome {
    let arb = MarketModel::constant(1, 1.05, 1.2, 0.0, 100.0).unwrap();
    let fixed = arb.with_kappa(0.06).unwrap();
    let (g_arb, g_fixed) = (gamma_recursion(&arb), gamma_recursion(&fixed));
    let step = aip_check_mus(&[0.0], 1.05, 1.2, 0.0).case;
    let priced = price_multi_step(&ConvexPwl::call(100.0), &fixed).is_ok();
    check(
        !g_arb.holds() && step == StepCase::Violated && g_fixed.holds() && priced,
        format!(
            "alpha = 1.05, kappa = 0: {:?}; kappa = 0.06: {:?}",
            g_arb.cases[0], g_fixed.cases[0]
        ),
    )
}

fn table_one_real_data() -> Option<Outcome> {
    let path = std::env::var("SUPERHEDGE_SPY_CSV").ok()?;
    let run = || -> Result<String, String> {
        let file = std::fs::File::open(&path).map_err(|e| e.to_string())?;
        let series = load_prices(file).map_err(|e| e.to_string())?;
        let cfg = BacktestConfig {
            max_weeks: Some(100),
            ..Default::default()
        };
        let out = run_backtest(&series, &cfg).map_err(|e| e.to_string())?;
        // published column: 2.07% at the lowest rate, 3.71% at the highest,
        // and the affine relation 0.9111 kappa + 0.0188 in between
        let mut worst = 0f64;
        for row in &out.report.rows {
            let want = if row.kappa <= 0.002 + 1e-12 {
                2.07
            } else if row.kappa >= 0.02 - 1e-12 {
                3.71
            } else {
                100.0 * (0.9111 * row.kappa + 0.0188)
            };
            worst = worst.max((100.0 * row.v0_over_s0 - want).abs());
        }
        let slope = out.report.fit.map_or(f64::NAN, |f| f.slope);
        let detail = format!("max |V0/S0 - table| = {worst:.3} pp, slope = {slope:.4}");
        if worst <= 0.4 && (slope / 0.9111 - 1.0).abs() <= 0.15 {
            Ok(detail)
        } else {
            Err(detail)
        }
    };
    Some(run())
}

fn table_one_synthetic() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let series = synthetic_series(&mut rng, 52 + 100);
    let cfg = BacktestConfig {
        spec: CalibrationSpec::default(),
        kappas: default_kappas(),
        max_weeks: Some(100),
        ..Default::default()
    };
    let start = Instant::now();
    let out = run_backtest(&series, &cfg).unwrap();
    let elapsed = start.elapsed();
    let min_p = out.report.rows.iter().map(|r| r.p_nonneg).fold(f64::INFINITY, f64::min);
    let min_mean = out.report.rows.iter().map(|r| r.mean_error).fold(f64::INFINITY, f64::min);
    let min_err = out.episodes.iter().map(|e| e.error).fold(f64::INFINITY, f64::min);
    check(
        out.episodes.len() == 1000
            && out.report.skipped.is_empty()
            && out.report.support_violations == 0
            && min_p == 1.0
            && min_mean >= 0.0
            && elapsed < Duration::from_secs(300),
        format!(
            "{} episodes, {} support violations, min P(err >= 0) = {min_p}, min mean err = {min_mean:.3e}, min err = {min_err:.3e}, {elapsed:.1?}",
            out.episodes.len(),
            out.report.support_violations
        ),
    )
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("frictionless one-step benchmark", Box::new(|| Some(frictionless_benchmark()))),
        ("one-step prices and positions with costs", Box::new(|| Some(one_step_with_costs()))),
        ("three-way oracle agreement", Box::new(|| Some(three_way_oracles()))),
        ("superhedging and minimality", Box::new(|| Some(superhedging()))),
        ("structural closure and regime boundary", Box::new(|| Some(structural_closure()))),
        ("price monotone in kappa", Box::new(|| Some(kappa_monotonicity()))),
        ("immediate-profit detection", Box::new(|| Some(aip_detection()))),
        ("backtest (a): real SPY data", Box::new(table_one_real_data)),
        ("backtest (b): synthetic in-support corpus", Box::new(|| Some(table_one_synthetic()))),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Some(Ok(d)) => println!("PASS  {name}: {d}"),
            Some(Err(d)) => {
                failed += 1;
                println!("FAIL  {name}: {d}");
            }
            None => println!("NOT RUN  {name}: no data (set SUPERHEDGE_SPY_CSV to a date,close file)"),
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
