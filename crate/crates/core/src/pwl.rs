//! Convex piecewise-linear extended-real functions of one variable.
//!
//! A [`ConvexPwl`] is finite on a closed interval `[lo, hi]` (either end may be
//! infinite) and `+inf` outside of it. Inside the domain it is described by a
//! sorted list of breakpoints and one [`AffineLine`] per cell. Every
//! constructor normalizes its output: collinear neighbours are merged and
//! convexity and continuity are checked, so a value of this type always
//! satisfies those invariants.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use thiserror::Error;

/// Relative tolerance under which adjacent slopes are treated as equal.
pub const MERGE_RTOL: f64 = 1e-12;
/// Relative tolerance under which a crossing is snapped onto an existing breakpoint.
pub const SNAP_RTOL: f64 = 1e-12;
/// Relative tolerance for the continuity check at breakpoints.
const CONTINUITY_RTOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PwlError {
    #[error("invalid domain [{lo}, {hi}]")]
    InvalidDomain { lo: f64, hi: f64 },
    #[error("malformed function: {0}")]
    Malformed(String),
    #[error("slopes decrease at x = {at} ({left} then {right}); function is not convex")]
    NotConvex { at: f64, left: f64, right: f64 },
    #[error("pieces disagree at breakpoint x = {at} ({left} vs {right})")]
    Discontinuous { at: f64, left: f64, right: f64 },
    #[error("domains do not intersect")]
    EmptyIntersection,
    #[error("argument scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("weight must lie in [0, 1], got {0}")]
    InvalidWeight(f64),
}

/// The affine map `x -> slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineLine {
    pub slope: f64,
    pub intercept: f64,
}

impl AffineLine {
    pub const fn new(slope: f64, intercept: f64) -> Self {
        Self { slope, intercept }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }

    /// Abscissa where `self` and `other` meet, or `None` for parallel lines.
    pub fn crossing(&self, other: &AffineLine) -> Option<f64> {
        let ds = self.slope - other.slope;
        if ds == 0.0 {
            None
        } else {
            Some((other.intercept - self.intercept) / ds)
        }
    }

    fn scale(self, w: f64) -> Self {
        Self::new(w * self.slope, w * self.intercept)
    }

    fn plus(self, other: Self) -> Self {
        Self::new(self.slope + other.slope, self.intercept + other.intercept)
    }
}

fn rel_close(a: f64, b: f64, rtol: f64) -> bool {
    (a - b).abs() <= rtol * 1f64.max(a.abs()).max(b.abs())
}

/// A convex piecewise-linear function, `+inf` outside `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexPwl {
    lo: f64,
    hi: f64,
    breaks: Vec<f64>,
    pieces: Vec<AffineLine>,
}

impl ConvexPwl {
    /// Builds a function from explicit cells. `pieces[k]` is used between
    /// `breaks[k - 1]` and `breaks[k]`.
    pub fn from_pieces(
        lo: f64,
        hi: f64,
        breaks: Vec<f64>,
        pieces: Vec<AffineLine>,
    ) -> Result<Self, PwlError> {
        if lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY
        {
            return Err(PwlError::InvalidDomain { lo, hi });
        }
        if pieces.len() != breaks.len() + 1 {
            return Err(PwlError::Malformed(format!(
                "{} pieces for {} breakpoints",
                pieces.len(),
                breaks.len()
            )));
        }
        if pieces
            .iter()
            .any(|l| !l.slope.is_finite() || !l.intercept.is_finite())
        {
            return Err(PwlError::Malformed("non-finite piece".into()));
        }
        let mut prev = lo;
        for &b in &breaks {
            if !(b > prev) || !(b < hi) || !b.is_finite() {
                return Err(PwlError::Malformed(format!(
                    "breakpoint {b} is not strictly increasing inside ({lo}, {hi})"
                )));
            }
            prev = b;
        }
        Self::normalize(lo, hi, breaks, pieces)
    }

    fn normalize(
        lo: f64,
        hi: f64,
        breaks: Vec<f64>,
        pieces: Vec<AffineLine>,
    ) -> Result<Self, PwlError> {
        let mut out_breaks = Vec::with_capacity(breaks.len());
        let mut out_pieces = Vec::with_capacity(pieces.len());
        out_pieces.push(pieces[0]);
        for (k, &b) in breaks.iter().enumerate() {
            let next = pieces[k + 1];
            let prev = *out_pieces.last().unwrap();
            let (left, right) = (prev.eval(b), next.eval(b));
            if !rel_close(left, right, CONTINUITY_RTOL) {
                return Err(PwlError::Discontinuous { at: b, left, right });
            }
            if rel_close(prev.slope, next.slope, MERGE_RTOL) {
                continue;
            }
            if next.slope < prev.slope {
                return Err(PwlError::NotConvex {
                    at: b,
                    left: prev.slope,
                    right: next.slope,
                });
            }
            out_breaks.push(b);
            out_pieces.push(next);
        }
        Ok(Self {
            lo,
            hi,
            breaks: out_breaks,
            pieces: out_pieces,
        })
    }

    /// A single affine line on the whole real line.
    pub fn affine(slope: f64, intercept: f64) -> Self {
        Self::affine_on(f64::NEG_INFINITY, f64::INFINITY, AffineLine::new(slope, intercept))
            .expect("affine function on the real line")
    }

    pub fn affine_on(lo: f64, hi: f64, line: AffineLine) -> Result<Self, PwlError> {
        Self::from_pieces(lo, hi, vec![], vec![line])
    }

    pub fn zero() -> Self {
        Self::affine(0.0, 0.0)
    }

    /// `(x - strike)^+` on `[0, inf)`.
    pub fn call(strike: f64) -> Self {
        if strike <= 0.0 {
            return Self::affine_on(0.0, f64::INFINITY, AffineLine::new(1.0, -strike)).unwrap();
        }
        Self::from_pieces(
            0.0,
            f64::INFINITY,
            vec![strike],
            vec![AffineLine::new(0.0, 0.0), AffineLine::new(1.0, -strike)],
        )
        .expect("call payoff is convex")
    }

    /// `(strike - x)^+` on `[0, inf)`.
    pub fn put(strike: f64) -> Self {
        if strike <= 0.0 {
            return Self::affine_on(0.0, f64::INFINITY, AffineLine::new(0.0, 0.0)).unwrap();
        }
        Self::from_pieces(
            0.0,
            f64::INFINITY,
            vec![strike],
            vec![AffineLine::new(-1.0, strike), AffineLine::new(0.0, 0.0)],
        )
        .expect("put payoff is convex")
    }

    /// Linear interpolation through `points` (sorted by x, at least two),
    /// extended to the whole line with the first and last segment slopes.
    pub fn interpolate(points: &[(f64, f64)]) -> Result<Self, PwlError> {
        if points.len() < 2 {
            return Err(PwlError::Malformed("need at least two points".into()));
        }
        let mut pieces = Vec::with_capacity(points.len() - 1);
        for w in points.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if !(x1 > x0) {
                return Err(PwlError::Malformed(format!(
                    "abscissae must be strictly increasing ({x0} then {x1})"
                )));
            }
            let slope = (y1 - y0) / (x1 - x0);
            pieces.push(AffineLine::new(slope, y0 - slope * x0));
        }
        let breaks = points[1..points.len() - 1].iter().map(|p| p.0).collect();
        Self::from_pieces(f64::NEG_INFINITY, f64::INFINITY, breaks, pieces)
    }

    /// Pointwise maximum of `lines`, restricted to `[lo, hi]`.
    pub fn max_of_lines(lines: &[AffineLine], lo: f64, hi: f64) -> Result<Self, PwlError> {
        if lines.is_empty() {
            return Err(PwlError::Malformed("empty line family".into()));
        }
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(PwlError::InvalidDomain { lo, hi });
        }
        // hull[k] is active on [cut[k-1], cut[k]]. A line whose cuts come out
        // out of order is numerically inactive and is dropped, so the cuts
        // are strictly increasing even for nearly parallel lines.
        let mut hull: Vec<AffineLine> = Vec::new();
        let mut cuts: Vec<f64> = Vec::new();
        for line in upper_envelope(lines) {
            while let Some(top) = hull.last() {
                let x = top.crossing(&line).expect("hull slopes are distinct");
                if cuts.last().is_some_and(|&c| x <= c) {
                    hull.pop();
                    cuts.pop();
                } else {
                    cuts.push(x);
                    break;
                }
            }
            hull.push(line);
        }
        let mut breaks = Vec::new();
        let mut pieces = Vec::new();
        for (k, line) in hull.iter().enumerate() {
            let start = if k == 0 { f64::NEG_INFINITY } else { cuts[k - 1] };
            let end = if k == cuts.len() { f64::INFINITY } else { cuts[k] };
            if end < lo || start > hi {
                continue;
            }
            if (end == lo && lo != hi) || (start == hi && lo != hi) {
                continue;
            }
            if !pieces.is_empty() {
                breaks.push(start);
            }
            pieces.push(*line);
        }
        if pieces.is_empty() {
            // lo == hi sitting exactly on a cut
            let x = lo;
            let best = hull
                .iter()
                .copied()
                .max_by(|a, b| a.eval(x).partial_cmp(&b.eval(x)).unwrap_or(Ordering::Equal))
                .unwrap();
            pieces.push(best);
        }
        let breaks = snap_inside(breaks, lo, hi, &mut pieces);
        Self::from_pieces(lo, hi, breaks, pieces)
    }

    /// Lower convex envelope of the knots `(x, y)`, extended by rays of slope
    /// `left_slope` before the first knot and `right_slope` after the last
    /// one (infinite slopes close the domain at the extreme knots).
    ///
    /// Computed as a biconjugate: the conjugate of a piecewise-linear function
    /// is the max of one line per knot, restricted to the slopes of the rays.
    /// Returns `None` when the envelope is `-inf` (left ray steeper than the
    /// right one).
    pub fn envelope_of_knots(
        left_slope: f64,
        knots: &[(f64, f64)],
        right_slope: f64,
    ) -> Result<Option<Self>, PwlError> {
        if knots.is_empty() {
            return Err(PwlError::Malformed("no knots".into()));
        }
        if left_slope > right_slope {
            return Ok(None);
        }
        let lines: Vec<AffineLine> = knots.iter().map(|&(x, y)| AffineLine::new(x, -y)).collect();
        let conj = Self::max_of_lines(&lines, left_slope, right_slope)?;
        Ok(Some(conj.conjugate()))
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breaks
    }

    pub fn pieces(&self) -> &[AffineLine] {
        &self.pieces
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Value at `x`; `+inf` outside the domain.
    pub fn eval(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        if !self.contains(x) {
            return f64::INFINITY;
        }
        self.piece_at(x).eval(x)
    }

    fn piece_at(&self, x: f64) -> AffineLine {
        self.pieces[self.breaks.partition_point(|&b| b < x)]
    }

    /// Knots of the function: finite domain ends plus interior breakpoints, with values.
    pub fn knots(&self) -> Vec<(f64, f64)> {
        let mut xs = Vec::with_capacity(self.breaks.len() + 2);
        if self.lo.is_finite() {
            xs.push(self.lo);
        }
        xs.extend_from_slice(&self.breaks);
        if self.hi.is_finite() && self.hi != self.lo {
            xs.push(self.hi);
        }
        xs.into_iter().map(|x| (x, self.eval(x))).collect()
    }

    /// `x -> self(c * x)` for `c > 0`.
    pub fn scale_arg(&self, c: f64) -> Result<Self, PwlError> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(PwlError::NonPositiveScale(c));
        }
        if c == 1.0 {
            return Ok(self.clone());
        }
        let breaks: Vec<f64> = self.breaks.iter().map(|b| b / c).collect();
        let pieces = self
            .pieces
            .iter()
            .map(|l| AffineLine::new(l.slope * c, l.intercept))
            .collect();
        let (lo, hi) = (self.lo / c, self.hi / c);
        let breaks = dedupe_sorted(breaks, lo, hi);
        if breaks.len() != self.breaks.len() {
            // scaling collapsed two breakpoints; rebuild through the cell grid
            return combine_cells(self, self, |a, _| a);
        }
        Self::from_pieces(lo, hi, breaks, pieces)
    }

    /// `lambda * f + (1 - lambda) * g` on the intersection of the domains.
    pub fn convex_combine(lambda: f64, f: &Self, g: &Self) -> Result<Self, PwlError> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(PwlError::InvalidWeight(lambda));
        }
        combine_cells(f, g, |a, b| a.scale(lambda).plus(b.scale(1.0 - lambda)))
    }

    /// Pointwise maximum on the intersection of the domains. Each argument
    /// is the max of its own pieces, so the result is the upper envelope of
    /// both piece sets.
    pub fn pointwise_max(f: &Self, g: &Self) -> Result<Self, PwlError> {
        let lo = f.lo.max(g.lo);
        let hi = f.hi.min(g.hi);
        if lo > hi {
            return Err(PwlError::EmptyIntersection);
        }
        let lines: Vec<AffineLine> = f.pieces.iter().chain(&g.pieces).copied().collect();
        Self::max_of_lines(&lines, lo, hi)
    }

    /// Whether `self <= other + rtol * max(1, |other|)` on the whole domain.
    /// Both functions must share the domain; otherwise the answer is `false`.
    pub fn dominated_by(&self, other: &Self, rtol: f64) -> bool {
        if self.domain() != other.domain() {
            return false;
        }
        let below = |x: f64| {
            let (f, g) = (self.eval(x), other.eval(x));
            f <= g + rtol * g.abs().max(1.0)
        };
        let mut xs: Vec<f64> = self.knots().into_iter().map(|k| k.0).collect();
        xs.extend(other.knots().into_iter().map(|k| k.0));
        if xs.is_empty() {
            xs.push(0.0);
        }
        if !xs.iter().all(|&x| below(x)) {
            return false;
        }
        let slope_tol = |a: f64, b: f64| rtol * a.abs().max(b.abs()).max(1.0);
        if self.hi == f64::INFINITY {
            let (a, b) = (self.pieces.last().unwrap().slope, other.pieces.last().unwrap().slope);
            if a > b + slope_tol(a, b) {
                return false;
            }
        }
        if self.lo == f64::NEG_INFINITY {
            let (a, b) = (self.pieces[0].slope, other.pieces[0].slope);
            if a < b - slope_tol(a, b) {
                return false;
            }
        }
        true
    }

    /// Legendre-Fenchel conjugate `y -> sup_x (x y - f(x))`.
    ///
    /// The slopes of the result are the knots of `self`; its breakpoints are
    /// the slopes of `self`. A bounded domain yields a conjugate that is
    /// finite on the whole line.
    pub fn conjugate(&self) -> Self {
        let slopes: Vec<f64> = self.pieces.iter().map(|l| l.slope).collect();
        let n = self.breaks.len();
        let mut pieces = Vec::with_capacity(n + 2);
        let mut breaks = Vec::with_capacity(n + 1);
        if self.lo.is_finite() {
            pieces.push(AffineLine::new(self.lo, -self.eval(self.lo)));
        }
        for (k, &x) in self.breaks.iter().enumerate() {
            if !pieces.is_empty() {
                breaks.push(slopes[k]);
            }
            pieces.push(AffineLine::new(x, -self.eval(x)));
        }
        if self.hi.is_finite() {
            if !pieces.is_empty() {
                breaks.push(slopes[n]);
            }
            pieces.push(AffineLine::new(self.hi, -self.eval(self.hi)));
        }
        let lo = if self.lo.is_finite() { f64::NEG_INFINITY } else { slopes[0] };
        let hi = if self.hi.is_finite() { f64::INFINITY } else { slopes[n] };
        if pieces.is_empty() {
            // affine on the whole line: conjugate is finite at a single slope
            let l = self.pieces[0];
            return Self {
                lo: l.slope,
                hi: l.slope,
                breaks: vec![],
                pieces: vec![AffineLine::new(0.0, -l.intercept)],
            };
        }
        Self::normalize(lo, hi, breaks, pieces).expect("conjugate of a convex function is convex")
    }
}

fn near(x: f64, y: f64) -> bool {
    y.is_finite() && (x - y).abs() <= SNAP_RTOL * 1f64.max(x.abs())
}

fn dedupe_sorted(mut xs: Vec<f64>, lo: f64, hi: f64) -> Vec<f64> {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let mut out: Vec<f64> = Vec::with_capacity(xs.len());
    for x in xs {
        if x <= lo || x >= hi || near(x, lo) || near(x, hi) {
            continue;
        }
        if let Some(&last) = out.last() {
            if near(x, last) {
                continue;
            }
        }
        out.push(x);
    }
    out
}

/// Drops cuts that collapse onto the domain ends or onto each other, keeping
/// the pieces list aligned.
fn snap_inside(breaks: Vec<f64>, lo: f64, hi: f64, pieces: &mut Vec<AffineLine>) -> Vec<f64> {
    let mut kept_breaks = Vec::with_capacity(breaks.len());
    let mut kept_pieces = vec![pieces[0]];
    for (k, &b) in breaks.iter().enumerate() {
        let line = pieces[k + 1];
        let collapse_left = b <= lo || near(b, lo) || kept_breaks.last().is_some_and(|&l| near(b, l));
        let collapse_right = b >= hi || near(b, hi);
        if collapse_left {
            // the earlier piece is degenerate; replace it
            *kept_pieces.last_mut().unwrap() = line;
        } else if collapse_right {
            break;
        } else {
            kept_breaks.push(b);
            kept_pieces.push(line);
        }
    }
    *pieces = kept_pieces;
    kept_breaks
}

fn common_cells(f: &ConvexPwl, g: &ConvexPwl) -> Result<(f64, f64, Vec<f64>), PwlError> {
    let lo = f.lo.max(g.lo);
    let hi = f.hi.min(g.hi);
    if lo > hi {
        return Err(PwlError::EmptyIntersection);
    }
    let mut cuts: Vec<f64> = f.breaks.iter().chain(&g.breaks).copied().collect();
    cuts = dedupe_sorted(std::mem::take(&mut cuts), lo, hi);
    Ok((lo, hi, cuts))
}

fn cell_representatives(lo: f64, hi: f64, cuts: &[f64]) -> Vec<f64> {
    let mut reps = Vec::with_capacity(cuts.len() + 1);
    for k in 0..=cuts.len() {
        let a = if k == 0 { lo } else { cuts[k - 1] };
        let b = if k == cuts.len() { hi } else { cuts[k] };
        let rep = match (a.is_finite(), b.is_finite()) {
            (true, true) => 0.5 * (a + b),
            (true, false) => a + 1.0 + a.abs(),
            (false, true) => b - 1.0 - b.abs(),
            (false, false) => 0.0,
        };
        reps.push(rep);
    }
    reps
}

fn combine_cells(
    f: &ConvexPwl,
    g: &ConvexPwl,
    op: impl Fn(AffineLine, AffineLine) -> AffineLine,
) -> Result<ConvexPwl, PwlError> {
    let (lo, hi, cuts) = common_cells(f, g)?;
    let pieces = cell_representatives(lo, hi, &cuts)
        .into_iter()
        .map(|rep| op(f.piece_at(rep), g.piece_at(rep)))
        .collect();
    ConvexPwl::from_pieces(lo, hi, cuts, pieces)
}

/// Lines forming the upper envelope of `lines`, sorted by increasing slope.
fn upper_envelope(lines: &[AffineLine]) -> Vec<AffineLine> {
    let mut sorted: Vec<AffineLine> = lines.to_vec();
    sorted.sort_by(|a, b| {
        a.slope
            .partial_cmp(&b.slope)
            .unwrap_or(Ordering::Equal)
            .then(a.intercept.partial_cmp(&b.intercept).unwrap_or(Ordering::Equal))
    });
    let mut hull: Vec<AffineLine> = Vec::with_capacity(sorted.len());
    for line in sorted {
        if let Some(top) = hull.last() {
            if top.slope == line.slope {
                // sorted by intercept within equal slopes, the later one dominates
                hull.pop();
            }
        }
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let x_ab = a.crossing(&b).unwrap();
            let x_al = a.crossing(&line).unwrap();
            if x_al <= x_ab {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(line);
    }
    hull
}

/// Lower convex hull of points sorted by x (monotone chain).
pub fn lower_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for &p in points {
        if let Some(&(lx, ly)) = hull.last() {
            if lx == p.0 {
                if p.1 < ly {
                    hull.pop();
                } else {
                    continue;
                }
            }
        }
        while hull.len() >= 2 {
            let (ax, ay) = hull[hull.len() - 2];
            let (bx, by) = hull[hull.len() - 1];
            // pop b when it lies on or above the chord a -> p
            let cross = (bx - ax) * (p.1 - ay) - (by - ay) * (p.0 - ax);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

/// A finite family of affine lines over an interval of the real line.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxAffineFamily {
    lines: Vec<AffineLine>,
    lower: f64,
    upper: f64,
}

/// Infimum of a [`MaxAffineFamily`] together with its smallest minimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinMax {
    pub value: f64,
    pub argmin: f64,
}

impl MaxAffineFamily {
    pub fn new(lines: Vec<AffineLine>, lower: f64, upper: f64) -> Result<Self, PwlError> {
        if lines.is_empty() {
            return Err(PwlError::Malformed("empty line family".into()));
        }
        if lower.is_nan() || upper.is_nan() || lower > upper {
            return Err(PwlError::InvalidDomain {
                lo: lower,
                hi: upper,
            });
        }
        // equal slopes: only the largest intercept matters
        let mut lines = lines;
        lines.sort_by(|a, b| {
            a.slope
                .partial_cmp(&b.slope)
                .unwrap_or(Ordering::Equal)
                .then(b.intercept.partial_cmp(&a.intercept).unwrap_or(Ordering::Equal))
        });
        lines.dedup_by(|later, earlier| later.slope == earlier.slope);
        Ok(Self {
            lines,
            lower,
            upper,
        })
    }

    pub fn lines(&self) -> &[AffineLine] {
        &self.lines
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.lines
            .iter()
            .map(|l| l.eval(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Minimizes `max_j line_j` over `[lower, upper]`.
    ///
    /// The value is the largest of: the crossings of every (non-increasing,
    /// increasing) pair, the increasing lines at `lower` and the
    /// non-increasing lines at `upper`. An empty maximum is `-inf`. When no
    /// line increases and the interval is unbounded above, the infimum is the
    /// best horizontal line (or `-inf` with argmin `+inf`).
    pub fn minimize(&self) -> MinMax {
        let (down, up): (Vec<AffineLine>, Vec<AffineLine>) =
            self.lines.iter().partition(|l| l.slope <= 0.0);

        let value = if up.is_empty() && self.upper == f64::INFINITY {
            let flat = down
                .iter()
                .filter(|l| l.slope == 0.0)
                .map(|l| l.intercept)
                .fold(f64::NEG_INFINITY, f64::max);
            if flat == f64::NEG_INFINITY {
                return MinMax {
                    value: f64::NEG_INFINITY,
                    argmin: f64::INFINITY,
                };
            }
            flat
        } else {
            let mut v = f64::NEG_INFINITY;
            for i in &down {
                for j in &up {
                    let x = i.crossing(j).unwrap();
                    v = v.max(i.eval(x));
                }
            }
            if self.lower.is_finite() {
                for j in &up {
                    v = v.max(j.eval(self.lower));
                }
            }
            if self.upper.is_finite() {
                for i in &down {
                    v = v.max(i.eval(self.upper));
                }
            }
            v
        };
        if value == f64::NEG_INFINITY {
            return MinMax {
                value,
                argmin: f64::NEG_INFINITY,
            };
        }
        let argmin = down
            .iter()
            .filter(|l| l.slope < 0.0)
            .map(|l| (value - l.intercept) / l.slope)
            .fold(self.lower, f64::max)
            .min(self.upper);
        MinMax { value, argmin }
    }
}

pub fn min_max_affine(family: &MaxAffineFamily) -> MinMax {
    family.minimize()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domination() {
        let f = abs();
        let g = ConvexPwl::pointwise_max(&f, &ConvexPwl::affine(0.5, 0.1)).unwrap();
        assert!(f.dominated_by(&g, 0.0));
        assert!(!g.dominated_by(&f, 0.0));
        // equal on every knot but steeper in the right tail
        let h = ConvexPwl::from_pieces(
            f64::NEG_INFINITY,
            f64::INFINITY,
            vec![0.0],
            vec![AffineLine::new(-1.0, 0.0), AffineLine::new(1.5, 0.0)],
        )
        .unwrap();
        assert!(!h.dominated_by(&f, 1e-12));
        assert!(!ConvexPwl::call(1.0).dominated_by(&f, 1.0));
    }

    #[test]
    fn max_of_nearly_parallel_lines_stays_convex() {
        let lines = [
            AffineLine::new(1.0, 0.0),
            AffineLine::new(1.0 + 1e-9, -1e-7),
            AffineLine::new(1.0 + 2e-9, -2e-7 - 1e-16),
            AffineLine::new(2.0, -150.0),
        ];
        let f = ConvexPwl::max_of_lines(&lines, f64::NEG_INFINITY, f64::INFINITY).unwrap();
        assert!(f.pieces().windows(2).all(|w| w[1].slope > w[0].slope));
        for x in [-10.0, 0.0, 99.0, 100.0, 101.0, 200.0] {
            let want = lines.iter().map(|l| l.eval(x)).fold(f64::NEG_INFINITY, f64::max);
            assert!((f.eval(x) - want).abs() <= 1e-9);
        }
    }

    fn abs() -> ConvexPwl {
        ConvexPwl::from_pieces(
            f64::NEG_INFINITY,
            f64::INFINITY,
            vec![0.0],
            vec![AffineLine::new(-1.0, 0.0), AffineLine::new(1.0, 0.0)],
        )
        .unwrap()
    }

    #[test]
    fn eval_basics() {
        assert_eq!(abs().eval(-3.0), 3.0);
        assert_eq!(ConvexPwl::call(100.0).eval(120.0), 20.0);
        let unit = ConvexPwl::affine_on(0.0, 1.0, AffineLine::new(0.0, 0.0)).unwrap();
        assert_eq!(unit.eval(2.0), f64::INFINITY);
        assert_eq!(unit.eval(1.0), 0.0);
    }

    #[test]
    fn rejects_non_convex_and_jumps() {
        let err = ConvexPwl::from_pieces(
            f64::NEG_INFINITY,
            f64::INFINITY,
            vec![0.0],
            vec![AffineLine::new(1.0, 0.0), AffineLine::new(-1.0, 0.0)],
        )
        .unwrap_err();
        assert!(matches!(err, PwlError::NotConvex { .. }));
        let err = ConvexPwl::from_pieces(
            f64::NEG_INFINITY,
            f64::INFINITY,
            vec![0.0],
            vec![AffineLine::new(0.0, 0.0), AffineLine::new(1.0, 1.0)],
        )
        .unwrap_err();
        assert!(matches!(err, PwlError::Discontinuous { .. }));
        assert!(ConvexPwl::interpolate(&[(0.0, 0.0), (1.0, 1.0), (2.0, 1.0)]).is_err());
    }

    #[test]
    fn collinear_pieces_merge() {
        let f = ConvexPwl::from_pieces(
            f64::NEG_INFINITY,
            f64::INFINITY,
            vec![1.0, 2.0],
            vec![
                AffineLine::new(1.0, 0.0),
                AffineLine::new(1.0, 0.0),
                AffineLine::new(2.0, -2.0),
            ],
        )
        .unwrap();
        assert_eq!(f.breakpoints(), &[2.0]);
    }

    #[test]
    fn scale_arg_cases() {
        let g = ConvexPwl::call(100.0).scale_arg(1.2).unwrap();
        assert!((g.eval(100.0) - 20.0).abs() < 1e-12);
        assert!((g.breakpoints()[0] - 100.0 / 1.2).abs() < 1e-12);
        let f = ConvexPwl::interpolate(&[(-1.0, 3.0), (0.0, 0.0), (2.0, 1.0)]).unwrap();
        assert_eq!(f.scale_arg(1.0).unwrap(), f);
        assert!(matches!(f.scale_arg(0.0), Err(PwlError::NonPositiveScale(_))));
        assert!(f.scale_arg(-2.0).is_err());
    }

    #[test]
    fn combine_endpoint_weights() {
        let f = ConvexPwl::call(90.0);
        let g = ConvexPwl::call(120.0);
        assert_eq!(ConvexPwl::convex_combine(1.0, &f, &g).unwrap(), f);
        assert_eq!(ConvexPwl::convex_combine(0.0, &f, &g).unwrap(), g);
        assert!(ConvexPwl::convex_combine(1.5, &f, &g).is_err());
        let disjoint = ConvexPwl::affine_on(-2.0, -1.0, AffineLine::new(0.0, 0.0)).unwrap();
        assert_eq!(
            ConvexPwl::convex_combine(0.5, &f, &disjoint),
            Err(PwlError::EmptyIntersection)
        );
    }

    #[test]
    fn max_examples() {
        let lin = |s, c| ConvexPwl::affine(s, c);
        let m = ConvexPwl::pointwise_max(&lin(1.0, 0.0), &lin(-1.0, 0.0)).unwrap();
        assert_eq!(m, abs());
        let f = ConvexPwl::call(90.0);
        assert_eq!(ConvexPwl::pointwise_max(&f, &f).unwrap(), f);
        let h = ConvexPwl::pointwise_max(&f, &lin(0.5, -40.0)).unwrap();
        let bp = h.breakpoints();
        assert_eq!(bp.len(), 2);
        assert!((bp[0] - 80.0).abs() < 1e-12 && (bp[1] - 100.0).abs() < 1e-12);
        // restricted to [0, inf) because the call is
        assert_eq!(h.domain(), (0.0, f64::INFINITY));
    }

    #[test]
    fn conjugate_pairs() {
        let ind = abs().conjugate();
        assert_eq!(ind.domain(), (-1.0, 1.0));
        assert_eq!(ind.eval(0.3), 0.0);
        assert_eq!(ind.eval(1.5), f64::INFINITY);
        assert_eq!(ind.conjugate(), abs());

        let aff = ConvexPwl::affine(2.0, 5.0).conjugate();
        assert_eq!(aff.domain(), (2.0, 2.0));
        assert_eq!(aff.eval(2.0), -5.0);
        assert_eq!(aff.eval(2.1), f64::INFINITY);
    }

    #[test]
    fn conjugate_two_piece_compact_closed_form() {
        // (a x + b) on [m, t], (c x + d) on [t, M]
        let (m, t, big_m) = (-1.0, 0.5, 3.0);
        let (a, b, c) = (-2.0, 1.0, 4.0);
        let d = a * t + b - c * t;
        let f = ConvexPwl::from_pieces(
            m,
            big_m,
            vec![t],
            vec![AffineLine::new(a, b), AffineLine::new(c, d)],
        )
        .unwrap();
        let fs = f.conjugate();
        let closed = |x: f64| {
            if x <= a {
                (x - a) * m - b
            } else if x <= c {
                (x - a) * t - b
            } else {
                (x - c) * big_m - d
            }
        };
        for k in 0..=200 {
            let y = -10.0 + 0.1 * k as f64;
            assert!((fs.eval(y) - closed(y)).abs() < 1e-12, "y = {y}");
        }
        let (lo, hi) = fs.domain();
        assert!(lo == f64::NEG_INFINITY && hi == f64::INFINITY);
        assert_eq!(fs.pieces()[0].slope, m);
        assert_eq!(fs.pieces().last().unwrap().slope, big_m);
    }

    #[test]
    fn max_of_lines_clips_to_domain() {
        let lines = [
            AffineLine::new(-1.0, 0.0),
            AffineLine::new(0.0, -0.5),
            AffineLine::new(1.0, -2.0),
        ];
        let f = ConvexPwl::max_of_lines(&lines, 0.0, 1.0).unwrap();
        // on [0, 1]: -x until 0.5, then -0.5
        assert_eq!(f.breakpoints(), &[0.5]);
        assert_eq!(f.eval(1.0), -0.5);
        let point = ConvexPwl::max_of_lines(&lines, 0.5, 0.5).unwrap();
        assert_eq!(point.eval(0.5), -0.5);
    }

    #[test]
    fn envelope_of_knots_drops_concave_points() {
        let f = ConvexPwl::envelope_of_knots(
            -1.0,
            &[(0.0, 0.0), (1.0, 5.0), (2.0, 0.0)],
            2.0,
        )
        .unwrap()
        .unwrap();
        assert_eq!(f.breakpoints(), &[0.0, 2.0]);
        assert_eq!(f.eval(1.0), 0.0);
        assert_eq!(f.eval(-2.0), 2.0);
        assert_eq!(f.eval(3.0), 2.0);
    }

    #[test]
    fn min_max_affine_examples() {
        let fam = |lines: &[(f64, f64)], lo, hi| {
            MaxAffineFamily::new(
                lines.iter().map(|&(s, c)| AffineLine::new(s, c)).collect(),
                lo,
                hi,
            )
            .unwrap()
            .minimize()
        };
        let r = fam(&[(-1.0, 0.0), (1.0, -2.0)], f64::NEG_INFINITY, f64::INFINITY);
        assert_eq!((r.value, r.argmin), (-1.0, 1.0));
        let r = fam(&[(-1.0, 0.0), (1.0, -2.0)], 2.0, f64::INFINITY);
        assert_eq!((r.value, r.argmin), (0.0, 2.0));
        // all decreasing: unbounded below
        let r = fam(&[(-1.0, 0.0), (-2.0, 1.0)], 0.0, f64::INFINITY);
        assert_eq!((r.value, r.argmin), (f64::NEG_INFINITY, f64::INFINITY));
        // decreasing towards a flat line: infimum reached from the crossing on
        let r = fam(&[(-1.0, 0.0), (0.0, -3.0)], 0.0, f64::INFINITY);
        assert_eq!((r.value, r.argmin), (-3.0, 3.0));
        // bounded interval with only decreasing lines: right end
        let r = fam(&[(-1.0, 0.0)], 0.0, 4.0);
        assert_eq!((r.value, r.argmin), (-4.0, 4.0));
        // flat bottom: smallest minimizer
        let r = fam(&[(-1.0, 0.0), (0.0, -1.0), (1.0, -3.0)], f64::NEG_INFINITY, f64::INFINITY);
        assert_eq!((r.value, r.argmin), (-1.0, 1.0));
    }

    #[test]
    fn duplicate_slopes_keep_dominant_line() {
        let fam = MaxAffineFamily::new(
            vec![AffineLine::new(1.0, 0.0), AffineLine::new(1.0, 2.0)],
            0.0,
            1.0,
        )
        .unwrap();
        assert_eq!(fam.lines(), &[AffineLine::new(1.0, 2.0)]);
    }
}
