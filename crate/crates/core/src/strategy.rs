//! Optimal positions and self-financing portfolio simulation.

use crate::market::{MarketModel, PricePath};
use crate::pwl::{AffineLine, ConvexPwl, MaxAffineFamily};
use crate::recursion::{
    aip_check_step, price_multi_step, MultiStepPrice, PayoffSystem, PricingError, Regime,
    StepGeometry,
};
use serde::{Deserialize, Serialize};

/// Relative residual above which the candidate search gives way to a direct
/// minimization.
const CANDIDATE_RTOL: f64 = 1e-9;

/// The decreasing map `a(v) = max_j (b_j - p_j v)`: the smallest position
/// compatible with paying `v` above the cheapest endpoint payoff.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaLines {
    /// Sorted by increasing `p`.
    pub p: Vec<f64>,
    pub b: Vec<f64>,
}

impl DeltaLines {
    pub fn eval(&self, v: f64) -> f64 {
        self.p
            .iter()
            .zip(&self.b)
            .map(|(p, b)| b - p * v)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// Delta lines of `system` for a step from `s_prev` with support `[alpha, beta]`.
///
/// Bounds equal to the smallest one (only possible for `alpha = 0`) give no
/// line.
pub fn delta_lines(system: &PayoffSystem, alpha: f64, beta: f64, s_prev: f64) -> DeltaLines {
    // the regime does not affect bounds or rescaled payoffs
    let geo = StepGeometry::new(&system.mus(), alpha, beta, 0.0, Regime::Small);
    delta_lines_from(&geo, &geo.tilde_values(system, s_prev), s_prev)
}

fn delta_lines_from(geo: &StepGeometry, tilde: &[f64], s_prev: f64) -> DeltaLines {
    let a1 = geo.alpha1();
    let mut pb: Vec<(f64, f64)> = geo
        .bounds
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &c)| c > a1)
        .map(|(k, &c)| {
            let p = 1.0 / ((c - a1) * s_prev);
            (p, (tilde[k] - tilde[0]) * p)
        })
        .collect();
    pb.sort_by(|x, y| x.0.total_cmp(&y.0));
    DeltaLines {
        p: pb.iter().map(|x| x.0).collect(),
        b: pb.iter().map(|x| x.1).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HedgeDecision {
    pub phi_opt: f64,
    pub v_star: f64,
    pub regime: Regime,
    /// Number of crossing candidates examined.
    pub candidates: usize,
    /// `|A(v*) - target|` at the chosen point.
    pub residual: f64,
    /// Whether `v*` came from the direct minimization.
    pub fallback: bool,
}

/// Optimal position at a date with later system `system`, current price
/// `s_prev`, held position `phi_prev` and step parameters
/// `(alpha, beta, kappa)`. `price_prev` is the price of the earlier system at
/// `(phi_prev, s_prev)`.
pub fn optimal_strategy(
    system: &PayoffSystem,
    phi_prev: f64,
    s_prev: f64,
    alpha: f64,
    beta: f64,
    kappa: f64,
    price_prev: f64,
) -> Result<HedgeDecision, PricingError> {
    let check = aip_check_step(system, alpha, beta, kappa);
    let regime = check.regime().ok_or(PricingError::AipViolated {
        step: None,
        alpha1: check.alpha1,
        beta_n: check.beta_n,
        kappa,
    })?;
    let geo = StepGeometry::new(&system.mus(), alpha, beta, kappa, regime);
    let tilde = geo.tilde_values(system, s_prev);
    let lines = geo.affine_lines(&tilde, phi_prev, s_prev);
    let target = price_prev - tilde[0];
    let objective = |v: f64| {
        lines
            .iter()
            .map(|l| l.eval(v))
            .fold(f64::NEG_INFINITY, f64::max)
    };

    let mut candidates = 0usize;
    let mut best: Option<(f64, f64)> = None;
    for (i, li) in lines.iter().enumerate() {
        if li.slope > 0.0 {
            continue;
        }
        for (j, lj) in lines.iter().enumerate() {
            if i == j || lj.slope < 0.0 {
                continue;
            }
            let Some(x) = li.crossing(lj) else { continue };
            let e = x.max(0.0);
            candidates += 1;
            let r = (objective(e) - target).abs();
            let better = match best {
                None => true,
                Some((be, br)) => {
                    let tie = 1e-12 * 1f64.max(target.abs());
                    r < br - tie || (r <= br + tie && e < be)
                }
            };
            if better {
                best = Some((e, r));
            }
        }
    }
    let tol = CANDIDATE_RTOL * 1f64.max(target.abs());
    let (v_star, residual, fallback) = match best {
        Some((e, r)) if r <= tol => (e, r, false),
        _ => {
            let mm = minimize(&lines);
            log::debug!(
                "{candidates} crossing candidates, none within {tol:e} of the target; minimizing directly"
            );
            (mm, (objective(mm) - target).abs(), true)
        }
    };
    let a = delta_lines_from(&geo, &tilde, s_prev).eval(v_star);
    let phi_opt = match regime {
        Regime::Large => a.max(phi_prev),
        Regime::Small => a,
    };
    Ok(HedgeDecision {
        phi_opt,
        v_star,
        regime,
        candidates,
        residual,
        fallback,
    })
}

fn minimize(lines: &[AffineLine]) -> f64 {
    MaxAffineFamily::new(lines.to_vec(), 0.0, f64::INFINITY)
        .expect("nonempty line family")
        .minimize()
        .argmin
}

/// Wealth and risky position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortfolioState {
    pub value: f64,
    pub phi: f64,
}

/// Rebalances to `phi_new` at `s_prev`, paying `kappa |delta phi| s_prev`,
/// then marks to `s_new`.
pub fn step_portfolio(
    state: PortfolioState,
    phi_new: f64,
    s_prev: f64,
    s_new: f64,
    kappa: f64,
) -> PortfolioState {
    PortfolioState {
        value: state.value + phi_new * (s_new - s_prev) - kappa * (phi_new - state.phi).abs() * s_prev,
        phi: phi_new,
    }
}

/// One pricing and hedging run along a realized path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeEpisode {
    pub prices: Vec<f64>,
    /// Positions held over each step.
    pub phis: Vec<f64>,
    /// Wealth at each date, starting with the price.
    pub values: Vec<f64>,
    pub decisions: Vec<HedgeDecision>,
    pub p0: f64,
    pub payoff: f64,
    /// `(V_T - payoff) / S_0`.
    pub error: f64,
}

impl HedgeEpisode {
    pub fn terminal_value(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

pub fn simulate_hedge(
    terminal: &ConvexPwl,
    model: &MarketModel,
    path: &PricePath,
) -> Result<HedgeEpisode, PricingError> {
    let pricing = price_multi_step(terminal, model)?;
    simulate_priced(terminal, model, &pricing, path)
}

/// Forward pass over an already computed backward pass.
pub fn simulate_priced(
    terminal: &ConvexPwl,
    model: &MarketModel,
    pricing: &MultiStepPrice,
    path: &PricePath,
) -> Result<HedgeEpisode, PricingError> {
    let big_t = model.horizon();
    let s = path.prices();
    if s.len() != big_t + 1 {
        return Err(PricingError::PathLength {
            expected: big_t + 1,
            got: s.len(),
        });
    }
    let s0 = s[0];
    let mut state = PortfolioState {
        value: pricing.systems[0].evaluate(0.0, s0),
        phi: 0.0,
    };
    let p0 = state.value;
    let mut values = vec![state.value];
    let mut phis = Vec::with_capacity(big_t);
    let mut decisions = Vec::with_capacity(big_t);
    for t in 0..big_t {
        let price_prev = pricing.systems[t].evaluate(state.phi, s[t]);
        let d = optimal_strategy(
            &pricing.systems[t + 1],
            state.phi,
            s[t],
            model.alpha[t],
            model.beta[t],
            model.kappa[t],
            price_prev,
        )
        .map_err(|e| match e {
            PricingError::AipViolated {
                alpha1,
                beta_n,
                kappa,
                ..
            } => PricingError::AipViolated {
                step: Some(t),
                alpha1,
                beta_n,
                kappa,
            },
            other => other,
        })?;
        state = step_portfolio(state, d.phi_opt, s[t], s[t + 1], model.kappa[t]);
        phis.push(d.phi_opt);
        values.push(state.value);
        decisions.push(d);
    }
    let payoff = terminal.eval(s[big_t]);
    Ok(HedgeEpisode {
        prices: s.to_vec(),
        phis,
        error: (state.value - payoff) / s0,
        values,
        decisions,
        p0,
        payoff,
    })
}
