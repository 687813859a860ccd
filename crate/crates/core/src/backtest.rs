//! Weekly at-the-money call backtest over a grid of cost rates.
//!
//! Each evaluation week is priced with supports calibrated on the preceding
//! window, hedged along its realized intraweek path, and scored by the
//! relative error `(V_T - payoff) / S_0`.

use crate::exec::Execution;
use crate::market::{build_weeks, calibrate, CalibrationSpec, DatedPrice, MarketError, MarketModel, PricePath};
use crate::pwl::ConvexPwl;
use crate::recursion::{price_multi_step, PricingError};
use crate::strategy::simulate_priced;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error("kappa grid must be nonempty with values in [0, 1)")]
    BadKappas,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// The cost grid 0.2%, 0.4%, ..., 2%.
pub fn default_kappas() -> Vec<f64> {
    (1..=10).map(|j| 0.002 * j as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestConfig {
    pub spec: CalibrationSpec,
    pub kappas: Vec<f64>,
    /// Evaluate at most this many weeks after the burn-in window.
    pub max_weeks: Option<usize>,
    pub execution: Execution,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            spec: CalibrationSpec::default(),
            kappas: default_kappas(),
            max_weeks: None,
            execution: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// Evaluation week counter, starting at 0 after the burn-in.
    pub week: usize,
    /// ISO week label such as `2014-W07`.
    pub label: String,
    pub kappa: f64,
    pub strike: f64,
    pub prices: Vec<f64>,
    pub v0: f64,
    pub phis: Vec<f64>,
    pub v_t: f64,
    pub payoff: f64,
    pub error: f64,
}

impl EpisodeRecord {
    pub fn v0_over_s0(&self) -> f64 {
        self.v0 / self.prices[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaRow {
    pub kappa: f64,
    pub episodes: usize,
    pub mean_error: f64,
    pub std_error: f64,
    pub v0_over_s0: f64,
    pub p_nonneg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineFit {
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedEpisode {
    pub week: usize,
    pub label: String,
    pub kappa: Option<f64>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub rows: Vec<KappaRow>,
    /// Least-squares fit of the mean `V_0 / S_0` against `kappa`.
    pub fit: Option<AffineFit>,
    pub evaluation_weeks: usize,
    pub day_steps: usize,
    pub support_violations: usize,
    pub support_violation_rate: f64,
    pub skipped: Vec<SkippedEpisode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestOutput {
    pub episodes: Vec<EpisodeRecord>,
    pub report: StatsReport,
}

struct WeekTask {
    week: usize,
    label: String,
    prices: Vec<f64>,
    bounds: Result<(Vec<f64>, Vec<f64>), String>,
}

pub fn run_backtest(series: &[DatedPrice], cfg: &BacktestConfig) -> Result<BacktestOutput, BacktestError> {
    cfg.spec.validate()?;
    if cfg.kappas.is_empty() || cfg.kappas.iter().any(|k| !(0.0..1.0).contains(k)) {
        return Err(BacktestError::BadKappas);
    }
    let weeks = build_weeks(series, &cfg.spec);
    let first = cfg.spec.window;
    let last = match cfg.max_weeks {
        Some(n) => weeks.len().min(first + n),
        None => weeks.len(),
    };
    let tasks: Vec<WeekTask> = (first.min(last)..last)
        .map(|j| WeekTask {
            week: j - first,
            label: format!("{}-W{:02}", weeks[j].iso_year, weeks[j].iso_week),
            prices: weeks[j].prices.clone(),
            bounds: calibrate(&weeks, j, &cfg.spec).map_err(|e| e.to_string()),
        })
        .collect();

    let mut day_steps = 0;
    let mut violations = 0;
    let mut skipped = Vec::new();
    let mut jobs = Vec::new();
    for task in &tasks {
        match &task.bounds {
            Err(reason) => skipped.push(SkippedEpisode {
                week: task.week,
                label: task.label.clone(),
                kappa: None,
                reason: reason.clone(),
            }),
            Ok((a, b)) => {
                for (t, w) in task.prices.windows(2).enumerate() {
                    let r = w[1] / w[0];
                    day_steps += 1;
                    if r < a[t] || r > b[t] {
                        violations += 1;
                    }
                }
                for &k in &cfg.kappas {
                    jobs.push((task, k));
                }
            }
        }
    }

    let results = cfg.execution.map(&jobs, |&(task, kappa)| {
        run_episode(task, kappa, cfg.spec.strike_ratio).map_err(|e| SkippedEpisode {
            week: task.week,
            label: task.label.clone(),
            kappa: Some(kappa),
            reason: e.to_string(),
        })
    });
    let mut episodes = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(ep) => episodes.push(ep),
            Err(s) => skipped.push(s),
        }
    }

    let report = summarize(&episodes, &cfg.kappas, tasks.len(), day_steps, violations, skipped);
    Ok(BacktestOutput { episodes, report })
}

fn run_episode(task: &WeekTask, kappa: f64, strike_ratio: f64) -> Result<EpisodeRecord, PricingError> {
    let (alpha, beta) = task.bounds.as_ref().expect("calibrated week");
    let s0 = task.prices[0];
    let strike = strike_ratio * s0;
    let model = MarketModel::new(s0, alpha.clone(), beta.clone(), vec![kappa; alpha.len()])
        .map_err(|e| PricingError::InvalidSystem(e.to_string()))?;
    let payoff = ConvexPwl::call(strike);
    let pricing = price_multi_step(&payoff, &model)?;
    let path = PricePath::new(task.prices.clone())
        .map_err(|e| PricingError::InvalidSystem(e.to_string()))?;
    let ep = simulate_priced(&payoff, &model, &pricing, &path)?;
    Ok(EpisodeRecord {
        week: task.week,
        label: task.label.clone(),
        kappa,
        strike,
        prices: ep.prices.clone(),
        v0: ep.p0,
        v_t: ep.terminal_value(),
        phis: ep.phis,
        payoff: ep.payoff,
        error: ep.error,
    })
}

fn summarize(
    episodes: &[EpisodeRecord],
    kappas: &[f64],
    evaluation_weeks: usize,
    day_steps: usize,
    support_violations: usize,
    skipped: Vec<SkippedEpisode>,
) -> StatsReport {
    let mut ks = kappas.to_vec();
    ks.sort_by(f64::total_cmp);
    ks.dedup();
    let rows: Vec<KappaRow> = ks
        .iter()
        .map(|&kappa| {
            let eps: Vec<&EpisodeRecord> = episodes.iter().filter(|e| e.kappa == kappa).collect();
            let n = eps.len();
            let errors: Vec<f64> = eps.iter().map(|e| e.error).collect();
            let mean_err = mean(&errors);
            let std = if n > 1 {
                (errors.iter().map(|e| (e - mean_err).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            KappaRow {
                kappa,
                episodes: n,
                mean_error: mean_err,
                std_error: std,
                v0_over_s0: mean(&eps.iter().map(|e| e.v0_over_s0()).collect::<Vec<_>>()),
                p_nonneg: if n == 0 {
                    f64::NAN
                } else {
                    errors.iter().filter(|&&e| e >= 0.0).count() as f64 / n as f64
                },
            }
        })
        .collect();
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.episodes > 0)
        .map(|r| (r.kappa, r.v0_over_s0))
        .collect();
    StatsReport {
        fit: ols(&pts),
        rows,
        evaluation_weeks,
        day_steps,
        support_violations,
        support_violation_rate: if day_steps == 0 {
            0.0
        } else {
            support_violations as f64 / day_steps as f64
        },
        skipped,
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Ordinary least squares `y = slope x + intercept`; `None` without two
/// distinct abscissae.
pub fn ols(points: &[(f64, f64)]) -> Option<AffineFit> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some(AffineFit {
        slope,
        intercept: my - slope * mx,
    })
}

fn num(x: f64) -> String {
    format!("{x:.9e}")
}

/// Writes `stats.json`, `table1.csv`, `errors_by_kappa.csv` and
/// `v0_vs_kappa.csv` into `dir` (created if missing).
pub fn emit_report(report: &StatsReport, episodes: &[EpisodeRecord], dir: &Path) -> Result<(), BacktestError> {
    std::fs::create_dir_all(dir)?;
    let mut json = BufWriter::new(File::create(dir.join("stats.json"))?);
    serde_json::to_writer_pretty(&mut json, report)?;
    json.write_all(b"\n")?;
    json.flush()?;

    let mut w = csv::Writer::from_path(dir.join("table1.csv"))?;
    w.write_record(["kappa", "episodes", "mean_error", "std_error", "v0_over_s0", "p_nonneg"])?;
    for r in &report.rows {
        w.write_record([
            num(r.kappa),
            r.episodes.to_string(),
            num(r.mean_error),
            num(r.std_error),
            num(r.v0_over_s0),
            num(r.p_nonneg),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("errors_by_kappa.csv"))?;
    w.write_record(["kappa", "week", "label", "error"])?;
    for e in episodes {
        w.write_record([num(e.kappa), e.week.to_string(), e.label.clone(), num(e.error)])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("v0_vs_kappa.csv"))?;
    w.write_record(["kappa", "week", "label", "v0_over_s0"])?;
    for e in episodes {
        w.write_record([num(e.kappa), e.week.to_string(), e.label.clone(), num(e.v0_over_s0())])?;
    }
    w.flush()?;
    Ok(())
}
