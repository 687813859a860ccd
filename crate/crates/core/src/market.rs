//! Market description, price containers and rolling-window calibration.

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use std::io::Read;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("model must have at least one step")]
    EmptyModel,
    #[error("alpha, beta and kappa must have the same length ({alpha}, {beta}, {kappa})")]
    LengthMismatch { alpha: usize, beta: usize, kappa: usize },
    #[error("step {t}: need 0 <= alpha < beta, got alpha = {alpha}, beta = {beta}")]
    BadSupport { t: usize, alpha: f64, beta: f64 },
    #[error("step {t}: kappa must lie in [0, 1), got {kappa}")]
    BadKappa { t: usize, kappa: f64 },
    #[error("spot must be positive, got {0}")]
    BadSpot(f64),
    #[error("price path must hold {expected} positive prices, got {got}")]
    BadPath { expected: usize, got: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv header must contain `date` and `close` columns")]
    MissingColumns,
    #[error("row {row}: {msg}")]
    BadRow { row: usize, msg: String },
    #[error("no data rows")]
    NoData,
    #[error("invalid calibration spec: {0}")]
    BadSpec(String),
    #[error("week {week}: need {window} complete weeks of history, only {available} available")]
    InsufficientHistory {
        week: usize,
        window: usize,
        available: usize,
    },
    #[error("week {week}, step {t}: every ratio in the window equals {ratio}")]
    DegenerateWindow { week: usize, t: usize, ratio: f64 },
}

/// Deterministic per-step support bounds and cost rates plus the spot.
///
/// Step `t` covers the move from `S_t` to `S_{t+1}`, whose ratio lies in
/// `[alpha[t], beta[t]]`; trading at date `t` costs `kappa[t]` per unit of
/// traded notional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketModel {
    pub spot: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub kappa: Vec<f64>,
}

impl MarketModel {
    pub fn new(
        spot: f64,
        alpha: Vec<f64>,
        beta: Vec<f64>,
        kappa: Vec<f64>,
    ) -> Result<Self, MarketError> {
        let m = Self {
            spot,
            alpha,
            beta,
            kappa,
        };
        m.validate()?;
        Ok(m)
    }

    /// The same `(alpha, beta, kappa)` at every one of `steps` steps.
    pub fn constant(
        steps: usize,
        alpha: f64,
        beta: f64,
        kappa: f64,
        spot: f64,
    ) -> Result<Self, MarketError> {
        Self::new(
            spot,
            vec![alpha; steps],
            vec![beta; steps],
            vec![kappa; steps],
        )
    }

    pub fn from_json(text: &str) -> Result<Self, Box<dyn std::error::Error + Send + Sync>> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        let (na, nb, nk) = (self.alpha.len(), self.beta.len(), self.kappa.len());
        if na != nb || na != nk {
            return Err(MarketError::LengthMismatch {
                alpha: na,
                beta: nb,
                kappa: nk,
            });
        }
        if na == 0 {
            return Err(MarketError::EmptyModel);
        }
        if !(self.spot > 0.0 && self.spot.is_finite()) {
            return Err(MarketError::BadSpot(self.spot));
        }
        for t in 0..na {
            let (a, b, k) = (self.alpha[t], self.beta[t], self.kappa[t]);
            if !(a >= 0.0 && a < b && b.is_finite()) {
                return Err(MarketError::BadSupport {
                    t,
                    alpha: a,
                    beta: b,
                });
            }
            if !(0.0..1.0).contains(&k) {
                return Err(MarketError::BadKappa { t, kappa: k });
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.alpha.len()
    }

    /// Same supports with every cost rate replaced by `kappa`.
    pub fn with_kappa(&self, kappa: f64) -> Result<Self, MarketError> {
        Self::new(
            self.spot,
            self.alpha.clone(),
            self.beta.clone(),
            vec![kappa; self.horizon()],
        )
    }
}

/// Realized prices `S_0, ..., S_T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricePath(Vec<f64>);

impl PricePath {
    pub fn new(prices: Vec<f64>) -> Result<Self, MarketError> {
        if prices.len() < 2 || prices.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(MarketError::BadPath {
                expected: prices.len().max(2),
                got: prices.iter().filter(|&&s| s > 0.0 && s.is_finite()).count(),
            });
        }
        Ok(Self(prices))
    }

    pub fn prices(&self) -> &[f64] {
        &self.0
    }

    pub fn steps(&self) -> usize {
        self.0.len() - 1
    }

    /// Whether each ratio lies in the model's support at its step.
    pub fn inside_support(&self, model: &MarketModel) -> Vec<bool> {
        self.0
            .windows(2)
            .enumerate()
            .map(|(t, w)| {
                let r = w[1] / w[0];
                r >= model.alpha[t] && r <= model.beta[t]
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatedPrice {
    pub date: NaiveDate,
    pub close: f64,
}

/// Reads a `date,close` CSV (header required, extra columns ignored).
pub fn load_prices<R: Read>(source: R) -> Result<Vec<DatedPrice>, MarketError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = rdr.headers()?.clone();
    if headers.iter().all(|h| h.is_empty()) {
        return Err(MarketError::NoData);
    }
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}').eq_ignore_ascii_case(name))
    };
    let (di, ci) = match (col("date"), col("close")) {
        (Some(d), Some(c)) => (d, c),
        _ => return Err(MarketError::MissingColumns),
    };
    let mut out: Vec<DatedPrice> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 1;
        let rec = rec?;
        let bad = |msg: String| MarketError::BadRow { row, msg };
        let date_s = rec.get(di).unwrap_or("");
        let close_s = rec.get(ci).unwrap_or("");
        let date = NaiveDate::parse_from_str(date_s, "%Y-%m-%d")
            .map_err(|e| bad(format!("unparseable date {date_s:?}: {e}")))?;
        if close_s.is_empty() {
            return Err(bad("missing close".into()));
        }
        let close: f64 = close_s
            .parse()
            .map_err(|_| bad(format!("unparseable close {close_s:?}")))?;
        if !(close > 0.0 && close.is_finite()) {
            return Err(bad(format!("close must be positive, got {close}")));
        }
        if let Some(prev) = out.last() {
            if date <= prev.date {
                return Err(bad(format!("date {date} does not follow {}", prev.date)));
            }
        }
        out.push(DatedPrice { date, close });
    }
    if out.is_empty() {
        return Err(MarketError::NoData);
    }
    Ok(out)
}

/// Rolling-window calibration parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    /// History length in complete weeks.
    pub window: usize,
    /// Leading weekdays kept per week (4 means Monday to Thursday).
    pub days_per_week: usize,
    /// Strike as a multiple of the week's first price (1 is at the money).
    pub strike_ratio: f64,
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        Self {
            window: 52,
            days_per_week: 4,
            strike_ratio: 1.0,
        }
    }
}

impl CalibrationSpec {
    pub fn validate(&self) -> Result<(), MarketError> {
        if self.window == 0 {
            return Err(MarketError::BadSpec("window must be at least 1".into()));
        }
        if !(2..=7).contains(&self.days_per_week) {
            return Err(MarketError::BadSpec(
                "days per week must be between 2 and 7".into(),
            ));
        }
        if !(self.strike_ratio > 0.0) {
            return Err(MarketError::BadSpec("strike ratio must be positive".into()));
        }
        Ok(())
    }
}

/// One calendar week reduced to its leading trading days.
#[derive(Debug, Clone, PartialEq)]
pub struct WeekBlock {
    pub iso_year: i32,
    pub iso_week: u32,
    pub dates: Vec<NaiveDate>,
    pub prices: Vec<f64>,
}

impl WeekBlock {
    pub fn ratios(&self) -> impl Iterator<Item = f64> + '_ {
        self.prices.windows(2).map(|w| w[1] / w[0])
    }
}

/// Groups a series by ISO week, keeping observations on the first
/// `days_per_week` weekdays. Weeks missing any of those days are dropped.
pub fn build_weeks(series: &[DatedPrice], spec: &CalibrationSpec) -> Vec<WeekBlock> {
    let d = spec.days_per_week;
    let mut out = Vec::new();
    let mut cur: Option<WeekBlock> = None;
    let flush = |blk: Option<WeekBlock>, out: &mut Vec<WeekBlock>| {
        if let Some(b) = blk {
            let complete = b.prices.len() == d
                && b.dates
                    .iter()
                    .enumerate()
                    .all(|(k, dt)| dt.weekday().num_days_from_monday() as usize == k);
            if complete {
                out.push(b);
            }
        }
    };
    for p in series {
        let iso = p.date.iso_week();
        let same = cur
            .as_ref()
            .is_some_and(|b| b.iso_year == iso.year() && b.iso_week == iso.week());
        if !same {
            flush(cur.take(), &mut out);
            cur = Some(WeekBlock {
                iso_year: iso.year(),
                iso_week: iso.week(),
                dates: vec![],
                prices: vec![],
            });
        }
        if (p.date.weekday().num_days_from_monday() as usize) < d {
            let b = cur.as_mut().unwrap();
            b.dates.push(p.date);
            b.prices.push(p.close);
        }
    }
    flush(cur, &mut out);
    out
}

/// Support bounds for week `j` from the `spec.window` weeks just before it.
///
/// Returns `(alpha, beta)` with one entry per intraweek step.
pub fn calibrate(
    weeks: &[WeekBlock],
    j: usize,
    spec: &CalibrationSpec,
) -> Result<(Vec<f64>, Vec<f64>), MarketError> {
    spec.validate()?;
    if j < spec.window || j > weeks.len() {
        return Err(MarketError::InsufficientHistory {
            week: j,
            window: spec.window,
            available: j.min(weeks.len()),
        });
    }
    let history = &weeks[j - spec.window..j];
    let steps = spec.days_per_week - 1;
    let mut alpha = vec![f64::INFINITY; steps];
    let mut beta = vec![f64::NEG_INFINITY; steps];
    for w in history {
        for (t, r) in w.ratios().enumerate() {
            alpha[t] = alpha[t].min(r);
            beta[t] = beta[t].max(r);
        }
    }
    for t in 0..steps {
        if alpha[t] >= beta[t] {
            return Err(MarketError::DegenerateWindow {
                week: j,
                t,
                ratio: alpha[t],
            });
        }
    }
    Ok((alpha, beta))
}
