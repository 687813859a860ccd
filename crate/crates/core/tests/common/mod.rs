#![allow(dead_code)]

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use superhedge::market::DatedPrice;
use superhedge::pwl::{AffineLine, ConvexPwl};
use superhedge::recursion::{aip_check_step, backward_step, gamma_recursion, PayoffSystem};
use superhedge::MarketModel;

pub const KAPPAS: [f64; 5] = [0.0, 0.005, 0.01, 0.05, 0.2];

/// Convex payoff on the real line with up to `max_kinks` kinks in [50, 200].
pub fn random_convex(rng: &mut ChaCha8Rng, max_kinks: usize) -> ConvexPwl {
    let k = rng.gen_range(0..=max_kinks);
    let mut kinks: Vec<f64> = (0..k).map(|_| rng.gen_range(50.0..200.0)).collect();
    kinks.sort_by(f64::total_cmp);
    kinks.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
    let mut slopes: Vec<f64> = (0..=kinks.len()).map(|_| rng.gen_range(-1.5..1.5)).collect();
    slopes.sort_by(f64::total_cmp);
    let mut pieces = Vec::with_capacity(slopes.len());
    let c0 = rng.gen_range(-20.0..40.0);
    pieces.push(AffineLine::new(slopes[0], c0));
    for (i, &x) in kinks.iter().enumerate() {
        let prev: AffineLine = pieces[i];
        let s = slopes[i + 1];
        pieces.push(AffineLine::new(s, prev.eval(x) - s * x));
    }
    ConvexPwl::from_pieces(f64::NEG_INFINITY, f64::INFINITY, kinks, pieces).unwrap()
}

/// Nonnegative convex payoff on [0, inf): a call, a put, a straddle-like max
/// or a positive part of a random convex function.
pub fn random_nonneg_payoff(rng: &mut ChaCha8Rng, spot: f64) -> ConvexPwl {
    let k = spot * rng.gen_range(0.9..1.1);
    match rng.gen_range(0..4) {
        0 => ConvexPwl::call(k),
        1 => ConvexPwl::put(k),
        2 => ConvexPwl::pointwise_max(&ConvexPwl::call(k), &ConvexPwl::put(k * 0.97)).unwrap(),
        _ => {
            let f = random_convex(rng, 6).scale_arg(100.0 / spot).unwrap();
            let zero = ConvexPwl::affine_on(0.0, f64::INFINITY, AffineLine::new(0.0, 0.0)).unwrap();
            ConvexPwl::pointwise_max(&f, &zero).unwrap()
        }
    }
}

/// Support bounds admissible for a system with coefficients `mus`.
pub fn admissible_bounds(rng: &mut ChaCha8Rng, mus: &[f64], kappa: f64) -> (f64, f64) {
    let lo_cap = (1.0 + kappa) / (1.0 + mus[0]);
    let hi_floor = (1.0 - kappa) / (1.0 + mus[mus.len() - 1]);
    loop {
        let alpha = rng.gen_range(0.6..lo_cap.min(1.15));
        let beta = alpha.max(hi_floor) + rng.gen_range(0.01..0.4);
        if alpha < beta && alpha * (1.0 + mus[0]) <= 1.0 + kappa {
            return (alpha, beta);
        }
    }
}

#[derive(Debug, Clone)]
pub struct OneStep {
    pub system: PayoffSystem,
    pub phi_prev: f64,
    pub s: f64,
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

/// A random admissible one-step instance. Every other instance starts from
/// a system that already went through one backward step, so it usually has
/// several components.
pub fn one_step_instance(rng: &mut ChaCha8Rng, idx: usize) -> OneStep {
    let payoff = random_convex(rng, 6);
    let mut system = PayoffSystem::terminal(payoff);
    if idx % 2 == 1 {
        let k0 = KAPPAS[rng.gen_range(0..KAPPAS.len())];
        let (a0, b0) = admissible_bounds(rng, &[0.0], k0);
        system = backward_step(&system, a0, b0, k0).unwrap();
    }
    let kappa = KAPPAS[idx % KAPPAS.len()];
    let (alpha, beta) = admissible_bounds(rng, &system.mus(), kappa);
    assert!(aip_check_step(&system, alpha, beta, kappa).holds());
    OneStep {
        system,
        phi_prev: rng.gen_range(-2.0..2.0),
        s: rng.gen_range(50.0..150.0),
        alpha,
        beta,
        kappa,
    }
}

/// Random model with `steps` steps satisfying the global AIP condition.
pub fn random_model(rng: &mut ChaCha8Rng, steps: usize, spot: f64) -> MarketModel {
    loop {
        let mut alpha = Vec::with_capacity(steps);
        let mut beta = Vec::with_capacity(steps);
        let mut kappa = Vec::with_capacity(steps);
        for _ in 0..steps {
            let k = [0.0, 0.002, 0.005, 0.01, 0.02, 0.05][rng.gen_range(0..6)];
            let a = rng.gen_range(0.9..1.0);
            let b = rng.gen_range(1.0f64..1.1).max(a + 0.005);
            alpha.push(a);
            beta.push(b);
            kappa.push(k);
        }
        let m = MarketModel::new(spot, alpha, beta, kappa).unwrap();
        if gamma_recursion(&m).holds() {
            return m;
        }
    }
}

/// Path with every ratio inside its support; a third of the steps sit on
/// each endpoint.
pub fn in_support_path(rng: &mut ChaCha8Rng, model: &MarketModel) -> Vec<f64> {
    let mut s = vec![model.spot];
    for t in 0..model.horizon() {
        let (a, b) = (model.alpha[t], model.beta[t]);
        let r = match rng.gen_range(0..3) {
            0 => a,
            1 => b,
            _ => rng.gen_range(a..=b),
        };
        let last = *s.last().unwrap();
        s.push(last * r);
    }
    s
}

/// Business-day series whose intraweek ratios never leave [0.98, 1.02].
/// Every sixth week is pinned: across three consecutive pinned weeks each of
/// the three Monday-to-Thursday steps hits both 0.98 and 1.02, so calibrated
/// windows always span exactly that interval. Each pinned week keeps one step
/// interior, so no week rides the support endpoints at every step (those
/// paths replicate exactly and leave a zero error up to rounding).
pub fn synthetic_series(rng: &mut ChaCha8Rng, weeks: usize) -> Vec<DatedPrice> {
    const PINS: [[f64; 3]; 3] = [[0.98, 1.02, 0.0], [0.0, 0.98, 1.02], [1.02, 0.0, 0.98]];
    let mut date = NaiveDate::from_ymd_opt(2013, 1, 7).unwrap();
    assert_eq!(date.weekday(), Weekday::Mon);
    let mut price = 150.0;
    let mut out = Vec::with_capacity(weeks * 5);
    for w in 0..weeks {
        for day in 0..5 {
            if day > 0 {
                let pinned = if w % 6 == 0 && day <= 3 {
                    PINS[(w / 6) % 3][day - 1]
                } else {
                    0.0
                };
                let r = if pinned > 0.0 {
                    pinned
                } else {
                    rng.gen_range(0.981..=1.019)
                };
                price *= r;
            }
            out.push(DatedPrice { date, close: price });
            date += Duration::days(1);
        }
        date += Duration::days(2);
    }
    out
}
