//! Independent one-step pricers used to validate the recursion.
//!
//! * [`grid_price`] minimizes the super-replication cost over a grid of
//!   positions, checking the payoff only at support endpoints (each term is
//!   convex in the terminal price, so its sup over an interval sits at an
//!   end).
//! * [`dual_price`] goes through the cost-distorted conjugate: with
//!   `Phi(x) = x - kappa |x + phi_prev|` the price is
//!   `-((f* o Phi^-1)*)(S)`, where `f*` is the max over components and
//!   support endpoints of the lines `y -> x y + gbar(x)`.
//! * [`region_price`] evaluates the infimum of the reduced objective at a
//!   general abscissa, region by region, each region being a min-max of
//!   affine functions.

use crate::pwl::{AffineLine, ConvexPwl, MaxAffineFamily, PwlError};
use crate::recursion::{aip_check_step, one_step_price, PayoffSystem, PricingError};
use crate::strategy::delta_lines;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("grid search ran off [{lo}, {hi}]; the price is probably unbounded below")]
    RangeExhausted { lo: f64, hi: f64 },
    #[error("invalid grid: {0}")]
    BadGrid(String),
    #[error(transparent)]
    Pricing(#[from] PricingError),
    #[error(transparent)]
    Pwl(#[from] PwlError),
}

/// `Phi(x) = x - kappa |x + phi_prev|`, strictly increasing for `kappa < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionMap {
    pub kappa: f64,
    pub phi_prev: f64,
}

impl DistortionMap {
    pub fn new(kappa: f64, phi_prev: f64) -> Self {
        Self { kappa, phi_prev }
    }

    pub fn apply(&self, x: f64) -> f64 {
        x - self.kappa * (x + self.phi_prev).abs()
    }

    pub fn inverse(&self, y: f64) -> f64 {
        // kink at x0 = -phi_prev, where Phi(x0) = x0
        let x0 = -self.phi_prev;
        if y <= x0 {
            x0 + (y - x0) / (1.0 + self.kappa)
        } else {
            x0 + (y - x0) / (1.0 - self.kappa)
        }
    }

    /// `x -> -Phi(-x)`.
    pub fn hat(&self, x: f64) -> f64 {
        -self.apply(-x)
    }
}

pub fn phi_map(d: &DistortionMap, x: f64) -> f64 {
    d.apply(x)
}

pub fn phi_inverse(d: &DistortionMap, y: f64) -> f64 {
    d.inverse(y)
}

/// Support data of one step in the rescaled variable `x (1 + mu_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualWorkspace {
    /// `(m_i, M_i) = (1 + mu_i) (alpha S, beta S)`.
    pub supports: Vec<(f64, f64)>,
    /// `gbar_i` at both ends, that is `ghat_i(alpha S)` and `ghat_i(beta S)`.
    pub values: Vec<(f64, f64)>,
    pub kappa: f64,
}

impl DualWorkspace {
    pub fn new(system: &PayoffSystem, s: f64, alpha: f64, beta: f64, kappa: f64) -> Self {
        let mut supports = Vec::with_capacity(system.len());
        let mut values = Vec::with_capacity(system.len());
        for c in system.components() {
            let z = 1.0 + c.mu;
            let (m, big_m) = (z * alpha * s, z * beta * s);
            supports.push((m, big_m));
            // gbar(x) = ghat(x / z)
            values.push((c.ghat.eval(m / z), c.ghat.eval(big_m / z)));
        }
        Self {
            supports,
            values,
            kappa,
        }
    }

    fn m1(&self) -> f64 {
        self.supports[0].0
    }

    fn mn(&self) -> f64 {
        self.supports[self.supports.len() - 1].1
    }

    pub fn m1_plus(&self) -> f64 {
        self.m1() / (1.0 + self.kappa)
    }

    pub fn m1_minus(&self) -> f64 {
        self.m1() / (1.0 - self.kappa)
    }

    pub fn mn_plus(&self) -> f64 {
        self.mn() / (1.0 + self.kappa)
    }

    pub fn mn_minus(&self) -> f64 {
        self.mn() / (1.0 - self.kappa)
    }

    /// The conjugate `f*` as a max of one line per component endpoint.
    pub fn f_star(&self) -> ConvexPwl {
        let lines: Vec<AffineLine> = self
            .supports
            .iter()
            .zip(&self.values)
            .flat_map(|(&(m, big_m), &(gm, g_big))| {
                [AffineLine::new(m, gm), AffineLine::new(big_m, g_big)]
            })
            .collect();
        ConvexPwl::max_of_lines(&lines, f64::NEG_INFINITY, f64::INFINITY)
            .expect("finite lines on the real line")
    }

    /// Cost of holding `phi` after trading from `phi_prev` at price `s`.
    pub fn superhedge_cost(&self, phi: f64, phi_prev: f64, s: f64) -> f64 {
        let worst = self
            .supports
            .iter()
            .zip(&self.values)
            .map(|(&(m, big_m), &(gm, g_big))| (gm - phi * m).max(g_big - phi * big_m))
            .fold(f64::NEG_INFINITY, f64::max);
        worst + phi * s + self.kappa * s * (phi - phi_prev).abs()
    }
}

/// Position grid for [`grid_price`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Half-width of the initial range around 0; derived from the delta lines
    /// when `None`.
    pub half_width: Option<f64>,
    pub step: f64,
    pub rounds: usize,
    pub subdivisions: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            half_width: None,
            step: 1e-3,
            rounds: 3,
            subdivisions: 100,
        }
    }
}

impl GridSpec {
    /// Two more refinement rounds than the default, for 1e-8 agreement at
    /// desk-scale prices.
    pub fn fine() -> Self {
        Self {
            rounds: 5,
            ..Self::default()
        }
    }

    pub fn final_step(&self) -> f64 {
        self.step / (self.subdivisions as f64).powi(self.rounds as i32)
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if !(self.step > 0.0) || self.subdivisions < 2 {
            return Err(OracleError::BadGrid(
                "step must be positive and subdivisions at least 2".into(),
            ));
        }
        if let Some(h) = self.half_width {
            if !(h > 0.0) {
                return Err(OracleError::BadGrid("half width must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridResult {
    pub price: f64,
    pub phi: f64,
    pub final_step: f64,
}

const MAX_WIDENINGS: usize = 6;

pub fn grid_price(
    system: &PayoffSystem,
    phi_prev: f64,
    s: f64,
    alpha: f64,
    beta: f64,
    kappa: f64,
    grid: &GridSpec,
) -> Result<GridResult, OracleError> {
    grid.validate()?;
    let ws = DualWorkspace::new(system, s, alpha, beta, kappa);
    let cost = |phi: f64| ws.superhedge_cost(phi, phi_prev, s);
    let mut half = grid.half_width.unwrap_or_else(|| {
        let dl = delta_lines(system, alpha, beta, s);
        let b = dl.b.iter().fold(0f64, |m, b| m.max(b.abs()));
        10.0 * 1f64.max(b).max(phi_prev.abs())
    });

    let scan = |lo: f64, hi: f64, step: f64| {
        let n = ((hi - lo) / step).round() as usize;
        let mut best = (lo, f64::INFINITY, 0usize);
        for k in 0..=n {
            let phi = lo + k as f64 * step;
            let v = cost(phi);
            if v < best.1 {
                best = (phi, v, k);
            }
        }
        (best.0, best.1, best.2 == 0 || best.2 == n)
    };

    let (mut phi, mut price);
    let mut widenings = 0;
    loop {
        let (p, v, on_edge) = scan(-half, half, grid.step);
        phi = p;
        price = v;
        if !on_edge {
            break;
        }
        if widenings == MAX_WIDENINGS {
            return Err(OracleError::RangeExhausted { lo: -half, hi: half });
        }
        widenings += 1;
        half *= 4.0;
    }
    let mut step = grid.step;
    for _ in 0..grid.rounds {
        let fine = step / grid.subdivisions as f64;
        let (p, v, _) = scan(phi - step, phi + step, fine);
        if v <= price {
            phi = p;
            price = v;
        }
        step = fine;
    }
    Ok(GridResult {
        price,
        phi,
        final_step: step,
    })
}

/// Price through the distorted conjugate; `-inf` signals an immediate profit.
pub fn dual_price(
    system: &PayoffSystem,
    phi_prev: f64,
    s: f64,
    alpha: f64,
    beta: f64,
    kappa: f64,
) -> Result<f64, OracleError> {
    let ws = DualWorkspace::new(system, s, alpha, beta, kappa);
    let f_star = ws.f_star();
    let dist = DistortionMap::new(kappa, phi_prev);

    // knots of f* o Phi^-1: images of the knots of f* plus the kink of Phi^-1
    let mut ys: Vec<f64> = f_star
        .breakpoints()
        .iter()
        .map(|&u| dist.apply(u))
        .collect();
    ys.push(-phi_prev);
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let knots: Vec<(f64, f64)> = ys
        .iter()
        .map(|&y| (y, f_star.eval(dist.inverse(y))))
        .collect();
    let pieces = f_star.pieces();
    let left = pieces[0].slope / (1.0 + kappa);
    let right = pieces[pieces.len() - 1].slope / (1.0 - kappa);
    let Some(envelope) = ConvexPwl::envelope_of_knots(left, &knots, right)? else {
        return Ok(f64::NEG_INFINITY);
    };
    Ok(-envelope.conjugate().eval(s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Below,
    Middle,
    Upper,
    Above,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionValue {
    pub region: Region,
    /// Infimum of the reduced objective at `x`; `-inf` outside
    /// `[m1_plus, mn_minus]`. At `x = S` it is the price.
    pub value: f64,
    pub argmin: f64,
}

/// Region-wise infimum at abscissa `x` with the delta lines frozen at `s`.
pub fn region_price(
    system: &PayoffSystem,
    phi_prev: f64,
    s: f64,
    alpha: f64,
    beta: f64,
    kappa: f64,
    x: f64,
) -> Result<RegionValue, OracleError> {
    let check = aip_check_step(system, alpha, beta, kappa);
    if !check.holds() {
        return Err(PricingError::AipViolated {
            step: None,
            alpha1: check.alpha1,
            beta_n: check.beta_n,
            kappa,
        }
        .into());
    }
    let ws = DualWorkspace::new(system, s, alpha, beta, kappa);
    let outside = |region| RegionValue {
        region,
        value: f64::NEG_INFINITY,
        argmin: f64::NAN,
    };
    if x < ws.m1_plus() {
        return Ok(outside(Region::Below));
    }
    if x > ws.mn_minus() {
        return Ok(outside(Region::Above));
    }
    let m1 = ws.m1();
    let y1 = ws.values[0].0;
    let dl = delta_lines(system, alpha, beta, s);
    let mut lines = Vec::new();
    let region = if x <= ws.m1_minus() {
        // the position never decreases
        let c = (1.0 + kappa) * x - m1;
        let shift = y1 - kappa * x * phi_prev;
        lines.push(AffineLine::new(1.0, phi_prev * c + shift));
        for (p, b) in dl.p.iter().zip(&dl.b) {
            lines.push(AffineLine::new(1.0 - p * c, b * c + shift));
        }
        Region::Middle
    } else {
        for (sign, c) in [(1.0, (1.0 + kappa) * x - m1), (-1.0, (1.0 - kappa) * x - m1)] {
            let shift = y1 - sign * kappa * x * phi_prev;
            for (p, b) in dl.p.iter().zip(&dl.b) {
                lines.push(AffineLine::new(1.0 - p * c, b * c + shift));
            }
        }
        Region::Upper
    };
    let mm = MaxAffineFamily::new(lines, 0.0, f64::INFINITY)?.minimize();
    Ok(RegionValue {
        region,
        value: mm.value,
        argmin: mm.argmin,
    })
}

/// All four one-step prices of an instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub closed_form: f64,
    pub grid: f64,
    pub dual: f64,
    pub region: f64,
    pub grid_step: f64,
}

impl Comparison {
    pub fn max_discrepancy(&self) -> f64 {
        let v = [self.closed_form, self.grid, self.dual, self.region];
        let mut worst = 0f64;
        for i in 0..4 {
            for j in i + 1..4 {
                worst = worst.max((v[i] - v[j]).abs());
            }
        }
        worst
    }
}

pub fn compare(
    system: &PayoffSystem,
    phi_prev: f64,
    s: f64,
    alpha: f64,
    beta: f64,
    kappa: f64,
    grid: &GridSpec,
) -> Result<Comparison, OracleError> {
    let (closed_form, _) = one_step_price(system, phi_prev, s, alpha, beta, kappa)?;
    let g = grid_price(system, phi_prev, s, alpha, beta, kappa, grid)?;
    let dual = dual_price(system, phi_prev, s, alpha, beta, kappa)?;
    let region = region_price(system, phi_prev, s, alpha, beta, kappa, s)?.value;
    Ok(Comparison {
        closed_form,
        grid: g.price,
        dual,
        region,
        grid_step: g.final_step,
    })
}
