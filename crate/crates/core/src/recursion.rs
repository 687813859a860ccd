//! Payoff systems and the one-step backward pricing operator.
//!
//! A payoff system is `g(phi, x) = max_i (ghat_i(x) - mu_i * phi * x)` with
//! convex `ghat_i` and strictly increasing `mu_i > -1`. Pricing one step back
//! produces another system of the same form, so a multi-step price is a
//! finite backward recursion.
//!
//! # One-step reduction
//!
//! Write `c_k` for the `2N` scaled support bounds `alpha (1 + mu_i)` and
//! `beta (1 + mu_i)`, `tilde_k` for the matching rescaled payoffs
//! `x -> ghat_i(alpha x)` / `ghat_i(beta x)`, and `c_0 = alpha_1` for the
//! smallest bound. With `D_k = c_k - alpha_1`, the minimal price at
//! `(phi_prev, S)` equals
//!
//! ```text
//! tilde_0(S) + min_{v >= 0} max_L ( s_L v + theta_L (tilde_{k_L}(S) - tilde_0(S)) - mu_L phi_prev S )
//! ```
//!
//! where every line `L` has `theta_L = rho_L / D_{k_L}` and `s_L = 1 - theta_L`:
//!
//! * large costs (`alpha_1 > 1 - kappa`): `rho = 1 + kappa - alpha_1`,
//!   `mu_L = kappa` for each `k`, plus one line with `s = 1`, `theta = 0`,
//!   `mu = alpha_1 - 1`;
//! * small costs (`alpha_1 <= 1 - kappa`): for each `k` one line with
//!   `rho = 1 + kappa - alpha_1`, `mu = kappa` and one with
//!   `rho = 1 - kappa - alpha_1`, `mu = -kappa`.
//!
//! The min over `v` of a max of lines is attained at `v = 0` or at a crossing
//! of a non-increasing and an increasing line, and every such candidate is a
//! convex combination of lines whose `tilde_0` weights cancel. Each candidate
//! is therefore a new component `(sum_k w_k tilde_k, mu)` with nonnegative
//! weights, independent of `(phi_prev, S)`.

use crate::market::MarketModel;
use crate::pwl::{AffineLine, ConvexPwl, MaxAffineFamily, PwlError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance under which two output `mu` are merged.
pub const MU_MERGE_RTOL: f64 = 1e-12;
/// Relative slack allowed when certifying a component as redundant.
pub const PRUNE_RTOL: f64 = 1e-12;
/// Default cap on the number of components in a system.
pub const DEFAULT_COMPONENT_CAP: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PricingError {
    #[error(
        "no immediate profit condition fails{}: alpha_1 = {alpha1}, beta_N = {beta_n}, kappa = {kappa}",
        step.map(|t| format!(" at step {t}")).unwrap_or_default()
    )]
    AipViolated {
        step: Option<usize>,
        alpha1: f64,
        beta_n: f64,
        kappa: f64,
    },
    #[error("payoff system grew to {count} components (cap {cap})")]
    TooManyComponents { count: usize, cap: usize },
    #[error("invalid payoff system: {0}")]
    InvalidSystem(String),
    #[error("price path has {got} prices, model needs {expected}")]
    PathLength { expected: usize, got: usize },
    #[error(transparent)]
    Pwl(#[from] PwlError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffComponent {
    pub ghat: ConvexPwl,
    pub mu: f64,
}

/// `g(phi, x) = max_i (ghat_i(x) - mu_i phi x)`, components sorted by `mu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffSystem {
    components: Vec<PayoffComponent>,
}

impl PayoffSystem {
    /// The terminal system of a European payoff: one component with `mu = 0`.
    pub fn terminal(payoff: ConvexPwl) -> Self {
        Self {
            components: vec![PayoffComponent {
                ghat: payoff,
                mu: 0.0,
            }],
        }
    }

    pub fn new(components: Vec<PayoffComponent>) -> Result<Self, PricingError> {
        let s = Self { components };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), PricingError> {
        if self.components.is_empty() {
            return Err(PricingError::InvalidSystem("no components".into()));
        }
        for c in &self.components {
            if !(1.0 + c.mu > 0.0) {
                return Err(PricingError::InvalidSystem(format!(
                    "mu = {} does not exceed -1",
                    c.mu
                )));
            }
        }
        for w in self.components.windows(2) {
            if !(w[1].mu > w[0].mu) {
                return Err(PricingError::InvalidSystem(format!(
                    "mu not strictly increasing ({} then {})",
                    w[0].mu, w[1].mu
                )));
            }
        }
        Ok(())
    }

    pub fn components(&self) -> &[PayoffComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn mus(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.mu).collect()
    }

    /// `g(phi_prev, s)`.
    pub fn evaluate(&self, phi_prev: f64, s: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.ghat.eval(s) - c.mu * phi_prev * s)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Free-function form of [`PayoffSystem::evaluate`].
pub fn evaluate_price(system: &PayoffSystem, phi_prev: f64, s: f64) -> f64 {
    system.evaluate(phi_prev, s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Large,
    Small,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepCase {
    Large,
    Small,
    Violated,
}

impl From<Regime> for StepCase {
    fn from(r: Regime) -> Self {
        match r {
            Regime::Large => StepCase::Large,
            Regime::Small => StepCase::Small,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AipCheck {
    pub alpha1: f64,
    pub beta_n: f64,
    pub case: StepCase,
}

impl AipCheck {
    pub fn holds(&self) -> bool {
        self.case != StepCase::Violated
    }

    pub fn regime(&self) -> Option<Regime> {
        match self.case {
            StepCase::Large => Some(Regime::Large),
            StepCase::Small => Some(Regime::Small),
            StepCase::Violated => None,
        }
    }
}

/// Immediate-profit check for one step on a system with coefficients `mus`
/// (sorted increasing). On the boundary `alpha_1 = 1 - kappa` the small-cost
/// regime is chosen.
pub fn aip_check_mus(mus: &[f64], alpha: f64, beta: f64, kappa: f64) -> AipCheck {
    let alpha1 = alpha * (1.0 + mus[0]);
    let beta_n = beta * (1.0 + mus[mus.len() - 1]);
    let case = if alpha1 > 1.0 + kappa || beta_n < 1.0 - kappa {
        StepCase::Violated
    } else if alpha1 > 1.0 - kappa {
        StepCase::Large
    } else {
        StepCase::Small
    };
    AipCheck {
        alpha1,
        beta_n,
        case,
    }
}

pub fn aip_check_step(system: &PayoffSystem, alpha: f64, beta: f64, kappa: f64) -> AipCheck {
    aip_check_mus(&system.mus(), alpha, beta, kappa)
}

/// One line of the reduced one-step objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveLine {
    /// Slope in `v`.
    pub slope: f64,
    /// Weight on `tilde_k - tilde_0`; zero for the position-keeping line.
    pub theta: f64,
    /// Index into the rescaled payoffs, `None` for the position-keeping line.
    pub tilde: Option<usize>,
    pub mu: f64,
}

/// Everything about one backward step that depends only on the `mu` of the
/// later system and on `(alpha, beta, kappa)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGeometry {
    pub regime: Regime,
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    /// Scaled bounds, `alpha (1 + mu_i)` then `beta (1 + mu_i)`.
    pub bounds: Vec<f64>,
    pub lines: Vec<ObjectiveLine>,
}

impl StepGeometry {
    pub fn new(mus: &[f64], alpha: f64, beta: f64, kappa: f64, regime: Regime) -> Self {
        let n = mus.len();
        let mut bounds = Vec::with_capacity(2 * n);
        bounds.extend(mus.iter().map(|m| alpha * (1.0 + m)));
        bounds.extend(mus.iter().map(|m| beta * (1.0 + m)));
        let alpha1 = bounds[0];
        let rhos: &[(f64, f64)] = match regime {
            Regime::Large => &[(1.0 + kappa - alpha1, kappa)],
            Regime::Small => &[(1.0 + kappa - alpha1, kappa), (1.0 - kappa - alpha1, -kappa)],
        };
        let mut lines = Vec::with_capacity(rhos.len() * 2 * n + 1);
        if regime == Regime::Large {
            lines.push(ObjectiveLine {
                slope: 1.0,
                theta: 0.0,
                tilde: None,
                mu: alpha1 - 1.0,
            });
        }
        for &(rho, mu) in rhos {
            for (k, &c) in bounds.iter().enumerate().skip(1) {
                let d = c - alpha1;
                if d <= 0.0 {
                    // happens only for alpha = 0: the line never binds
                    continue;
                }
                let theta = rho / d;
                lines.push(ObjectiveLine {
                    slope: 1.0 - theta,
                    theta,
                    tilde: Some(k),
                    mu,
                });
            }
        }
        Self {
            regime,
            alpha,
            beta,
            kappa,
            bounds,
            lines,
        }
    }

    pub fn alpha1(&self) -> f64 {
        self.bounds[0]
    }

    pub fn n(&self) -> usize {
        self.bounds.len() / 2
    }

    /// `tilde_k(s)` for every `k`.
    pub fn tilde_values(&self, system: &PayoffSystem, s: f64) -> Vec<f64> {
        let n = self.n();
        (0..2 * n)
            .map(|k| {
                let scale = if k < n { self.alpha } else { self.beta };
                system.components[k % n].ghat.eval(scale * s)
            })
            .collect()
    }

    /// Objective lines in `v` at a concrete `(phi_prev, s)`, given
    /// `tilde_values(system, s)`.
    pub fn affine_lines(&self, tilde: &[f64], phi_prev: f64, s: f64) -> Vec<AffineLine> {
        self.lines
            .iter()
            .map(|l| {
                let spread = l.tilde.map_or(0.0, |k| l.theta * (tilde[k] - tilde[0]));
                AffineLine::new(l.slope, spread - l.mu * phi_prev * s)
            })
            .collect()
    }

    /// Output components as weighted sums of rescaled payoffs.
    pub fn recipes(&self) -> Vec<Recipe> {
        let lines = &self.lines;
        let up: Vec<&ObjectiveLine> = lines.iter().filter(|l| l.slope > 0.0).collect();
        let down: Vec<&ObjectiveLine> = lines.iter().filter(|l| l.slope <= 0.0).collect();
        let mut out = Vec::new();
        if up.is_empty() {
            // the infimum is approached as v grows; only flat lines survive
            for l in down.iter().filter(|l| l.slope == 0.0) {
                out.push(Recipe {
                    terms: vec![(l.tilde.unwrap(), 1.0)],
                    mu: l.mu,
                });
            }
            return out;
        }
        for j in &up {
            out.push(Recipe::single(j));
        }
        for i in &down {
            for j in &up {
                out.push(self.pair(i, j));
            }
        }
        out
    }

    fn pair(&self, i: &ObjectiveLine, j: &ObjectiveLine) -> Recipe {
        let (si, sj) = (i.slope, j.slope);
        let den = sj - si;
        let ki = i.tilde.expect("non-increasing lines carry a payoff index");
        match j.tilde {
            None => Recipe {
                terms: vec![(ki, 1.0)],
                mu: self.bounds[ki] - 1.0,
            },
            Some(kj) => {
                let li = sj / den;
                let lj = -si / den;
                let wi = (sj * i.theta / den).clamp(0.0, 1.0);
                Recipe {
                    terms: vec![(ki, wi), (kj, 1.0 - wi)],
                    mu: li * i.mu + lj * j.mu,
                }
            }
        }
    }

    /// Rescaled payoffs `tilde_k`. For `alpha = 0` the lower ones are the
    /// constants `ghat_i(0)`.
    pub fn tilde_functions(&self, system: &PayoffSystem) -> Result<Vec<ConvexPwl>, PricingError> {
        let n = self.n();
        (0..2 * n)
            .map(|k| {
                let scale = if k < n { self.alpha } else { self.beta };
                let g = &system.components[k % n].ghat;
                if scale == 0.0 {
                    let v = g.eval(0.0);
                    if !v.is_finite() {
                        return Err(PricingError::InvalidSystem(
                            "zero lower bound needs payoffs defined at 0".into(),
                        ));
                    }
                    Ok(ConvexPwl::affine(0.0, v))
                } else {
                    Ok(g.scale_arg(scale)?)
                }
            })
            .collect()
    }
}

/// A new component `(sum_k w_k tilde_k, mu)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Recipe {
    pub terms: Vec<(usize, f64)>,
    pub mu: f64,
}

impl Recipe {
    fn single(l: &ObjectiveLine) -> Self {
        let terms = match l.tilde {
            None => vec![(0, 1.0)],
            Some(k) => vec![(0, l.slope), (k, l.theta)],
        };
        Self { terms, mu: l.mu }
    }

    fn materialize(&self, tilde: &[ConvexPwl]) -> Result<ConvexPwl, PwlError> {
        let mut acc: Option<(ConvexPwl, f64)> = None;
        for &(k, w) in &self.terms {
            if w <= 0.0 {
                continue;
            }
            acc = Some(match acc {
                None => (tilde[k].clone(), w),
                Some((f, wf)) => {
                    let total = wf + w;
                    (ConvexPwl::convex_combine(wf / total, &f, &tilde[k])?, total)
                }
            });
        }
        let (f, _) = acc.expect("recipe has a positive weight");
        Ok(f)
    }
}

fn merge_by_mu(mut recipes: Vec<Recipe>) -> Vec<Vec<Recipe>> {
    recipes.sort_by(|a, b| a.mu.total_cmp(&b.mu));
    let mut groups: Vec<Vec<Recipe>> = Vec::new();
    for r in recipes {
        match groups.last_mut() {
            Some(g) if close_mu(g[0].mu, r.mu) => g.push(r),
            _ => groups.push(vec![r]),
        }
    }
    groups
}

fn close_mu(a: f64, b: f64) -> bool {
    (a - b).abs() <= MU_MERGE_RTOL * 1f64.max(a.abs()).max(b.abs())
}

/// Distinct output coefficients of one step, sorted.
pub fn output_mus(geometry: &StepGeometry) -> Vec<f64> {
    merge_by_mu(geometry.recipes())
        .into_iter()
        .map(|g| g[0].mu)
        .collect()
}

/// Options for [`backward_step_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    /// Use this regime instead of the one selected by the AIP check. Only
    /// meaningful on the boundary `alpha_1 = 1 - kappa`, where both apply.
    pub force_regime: Option<Regime>,
    pub component_cap: usize,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            force_regime: None,
            component_cap: DEFAULT_COMPONENT_CAP,
        }
    }
}

/// Prices `system` one step back under `(alpha, beta, kappa)`.
pub fn backward_step(
    system: &PayoffSystem,
    alpha: f64,
    beta: f64,
    kappa: f64,
) -> Result<PayoffSystem, PricingError> {
    backward_step_with(system, alpha, beta, kappa, StepOptions::default())
}

pub fn backward_step_with(
    system: &PayoffSystem,
    alpha: f64,
    beta: f64,
    kappa: f64,
    opts: StepOptions,
) -> Result<PayoffSystem, PricingError> {
    let check = aip_check_step(system, alpha, beta, kappa);
    let regime = match (check.regime(), opts.force_regime) {
        (None, _) => {
            return Err(PricingError::AipViolated {
                step: None,
                alpha1: check.alpha1,
                beta_n: check.beta_n,
                kappa,
            })
        }
        (Some(_), Some(forced)) => forced,
        (Some(r), None) => r,
    };
    let geometry = StepGeometry::new(&system.mus(), alpha, beta, kappa, regime);
    let tilde = geometry.tilde_functions(system)?;
    let groups = merge_by_mu(geometry.recipes());
    let mut components = Vec::with_capacity(groups.len());
    for group in groups {
        let mut ghat = group[0].materialize(&tilde)?;
        for r in &group[1..] {
            ghat = ConvexPwl::pointwise_max(&ghat, &r.materialize(&tilde)?)?;
        }
        components.push(PayoffComponent {
            ghat,
            mu: group[0].mu,
        });
    }
    let components = prune_redundant(components)?;
    if components.len() > opts.component_cap {
        return Err(PricingError::TooManyComponents {
            count: components.len(),
            cap: opts.component_cap,
        });
    }
    PayoffSystem::new(components)
}

/// Drops components that never attain the maximum in `max_i (ghat_i(x) - mu_i t)`.
///
/// For fixed `x` the components active for some `t` are the vertices of the
/// upper hull of the points `(mu_i, ghat_i(x))`. Hull vertices at sample
/// points are kept. Every other component is dropped only if it lies below
/// the maximum of the hull edges spanning it everywhere, which is checked
/// exactly on the piecewise-affine functions. The extreme components are
/// always kept.
fn prune_redundant(components: Vec<PayoffComponent>) -> Result<Vec<PayoffComponent>, PricingError> {
    let n = components.len();
    if n <= 2 {
        return Ok(components);
    }
    let domain = components[0].ghat.domain();
    if components.iter().any(|c| c.ghat.domain() != domain) {
        return Ok(components);
    }
    let mut xs: Vec<f64> = components
        .iter()
        .flat_map(|c| c.ghat.knots().into_iter().map(|k| k.0))
        .collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let (first, last) = match (xs.first(), xs.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => (0.0, 0.0),
    };
    if domain.0 == f64::NEG_INFINITY {
        xs.push(first - 1.0 - first.abs());
    }
    if domain.1 == f64::INFINITY {
        xs.push(last + 1.0 + last.abs());
    }
    if xs.is_empty() {
        xs.push(0.0);
    }

    let mus: Vec<f64> = components.iter().map(|c| c.mu).collect();
    let mut active = vec![false; n];
    active[0] = true;
    active[n - 1] = true;
    let mut spans: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut hull: Vec<usize> = Vec::with_capacity(n);
    for &x in &xs {
        let ys: Vec<f64> = components.iter().map(|c| c.ghat.eval(x)).collect();
        hull.clear();
        for i in 0..n {
            while hull.len() >= 2 {
                let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
                // drop b when it is not strictly above the chord a -> i
                let cross = (mus[b] - mus[a]) * (ys[i] - ys[a]) - (ys[b] - ys[a]) * (mus[i] - mus[a]);
                if cross >= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(i);
        }
        for &h in &hull {
            active[h] = true;
        }
        for w in hull.windows(2) {
            for span in &mut spans[w[0] + 1..w[1]] {
                if !span.contains(&(w[0], w[1])) {
                    span.push((w[0], w[1]));
                }
            }
        }
    }

    let mut keep = active.clone();
    for i in 0..n {
        if active[i] {
            continue;
        }
        let mut bound: Option<ConvexPwl> = None;
        for &(j, k) in &spans[i] {
            let lambda = (mus[k] - mus[i]) / (mus[k] - mus[j]);
            let chord = ConvexPwl::convex_combine(lambda, &components[j].ghat, &components[k].ghat)?;
            bound = Some(match bound {
                None => chord,
                Some(b) => ConvexPwl::pointwise_max(&b, &chord)?,
            });
        }
        let redundant = bound.is_some_and(|b| components[i].ghat.dominated_by(&b, PRUNE_RTOL));
        keep[i] = !redundant;
    }
    Ok(components
        .into_iter()
        .zip(keep)
        .filter_map(|(c, k)| k.then_some(c))
        .collect())
}

/// One-step price at `(phi_prev, s)` straight from the reduced objective,
/// without building the earlier system. Also returns the smallest minimizing
/// `v`.
pub fn one_step_price(
    system: &PayoffSystem,
    phi_prev: f64,
    s: f64,
    alpha: f64,
    beta: f64,
    kappa: f64,
) -> Result<(f64, f64), PricingError> {
    let check = aip_check_step(system, alpha, beta, kappa);
    let regime = check.regime().ok_or(PricingError::AipViolated {
        step: None,
        alpha1: check.alpha1,
        beta_n: check.beta_n,
        kappa,
    })?;
    let geometry = StepGeometry::new(&system.mus(), alpha, beta, kappa, regime);
    let tilde = geometry.tilde_values(system, s);
    let lines = geometry.affine_lines(&tilde, phi_prev, s);
    let mm = MaxAffineFamily::new(lines, 0.0, f64::INFINITY)?.minimize();
    Ok((tilde[0] + mm.value, mm.argmin))
}

/// Backward sequence of coefficient sets, one per date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSequence {
    /// `sets[t]` holds the coefficients of the date-`t` system; `sets[T] = {0}`.
    /// Dates before a failing step are left empty.
    pub sets: Vec<Vec<f64>>,
    /// Regime or violation at each step `t = 0..T`.
    pub cases: Vec<Option<StepCase>>,
    /// Latest step at which the check fails, if any.
    pub failed_step: Option<usize>,
}

impl GammaSequence {
    pub fn holds(&self) -> bool {
        self.failed_step.is_none()
    }
}

/// Propagates the coefficient sets backwards and checks every step.
pub fn gamma_recursion(model: &MarketModel) -> GammaSequence {
    let big_t = model.horizon();
    let mut sets = vec![Vec::new(); big_t + 1];
    let mut cases = vec![None; big_t];
    sets[big_t] = vec![0.0];
    let mut failed_step = None;
    for t in (0..big_t).rev() {
        let (a, b, k) = (model.alpha[t], model.beta[t], model.kappa[t]);
        let check = aip_check_mus(&sets[t + 1], a, b, k);
        cases[t] = Some(check.case);
        match check.regime() {
            None => {
                failed_step = Some(t);
                break;
            }
            Some(r) => {
                let g = StepGeometry::new(&sets[t + 1], a, b, k, r);
                sets[t] = output_mus(&g);
            }
        }
    }
    GammaSequence {
        sets,
        cases,
        failed_step,
    }
}

/// Result of a full backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiStepPrice {
    /// `systems[t]` is the date-`t` system; `systems[T]` is the payoff.
    pub systems: Vec<PayoffSystem>,
    pub regimes: Vec<Regime>,
    /// Price at date 0 with no initial position.
    pub p0: f64,
}

pub fn price_multi_step(
    terminal: &ConvexPwl,
    model: &MarketModel,
) -> Result<MultiStepPrice, PricingError> {
    price_multi_step_with(terminal, model, DEFAULT_COMPONENT_CAP)
}

pub fn price_multi_step_with(
    terminal: &ConvexPwl,
    model: &MarketModel,
    component_cap: usize,
) -> Result<MultiStepPrice, PricingError> {
    let big_t = model.horizon();
    let mut systems = vec![PayoffSystem::terminal(terminal.clone())];
    let mut regimes = Vec::with_capacity(big_t);
    for t in (0..big_t).rev() {
        let later = systems.last().unwrap();
        let (a, b, k) = (model.alpha[t], model.beta[t], model.kappa[t]);
        let check = aip_check_step(later, a, b, k);
        let regime = check.regime().ok_or(PricingError::AipViolated {
            step: Some(t),
            alpha1: check.alpha1,
            beta_n: check.beta_n,
            kappa: k,
        })?;
        let opts = StepOptions {
            force_regime: None,
            component_cap,
        };
        let earlier = backward_step_with(later, a, b, k, opts)?;
        regimes.push(regime);
        systems.push(earlier);
    }
    systems.reverse();
    regimes.reverse();
    let p0 = systems[0].evaluate(0.0, model.spot);
    Ok(MultiStepPrice {
        systems,
        regimes,
        p0,
    })
}
