use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use superhedge::backtest::{default_kappas, emit_report, run_backtest, BacktestConfig, BacktestError};
use superhedge::exec::{init_threads, Execution};
use superhedge::market::{load_prices, CalibrationSpec, MarketError, PricePath};
use superhedge::oracle::{compare, GridSpec, OracleError};
use superhedge::pwl::{AffineLine, PwlError};
use superhedge::recursion::{
    aip_check_step, backward_step, gamma_recursion, price_multi_step, PayoffSystem, PricingError,
    StepCase,
};
use superhedge::strategy::simulate_priced;
use superhedge::{ConvexPwl, MarketModel};

/// `println!` that stops quietly when stdout is closed early.
macro_rules! say {
    ($($t:tt)*) => {
        emit(format_args!($($t)*))
    };
}

fn emit(args: std::fmt::Arguments) {
    use std::io::Write;
    if let Err(e) = writeln!(std::io::stdout().lock(), "{args}") {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "superhedge",
    version,
    about = "Minimal super-replication prices and hedges under proportional transaction costs"
)]
struct Cli {
    /// Worker threads for parallel loops.
    #[arg(long, env = "SUPERHEDGE_THREADS", global = true)]
    threads: Option<usize>,
    /// Seed for every random choice.
    #[arg(long, default_value_t = 0, global = true)]
    seed: u64,
    /// Directory for machine-readable output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Price a payoff and list the backward systems.
    Price {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        payoff: PayoffArgs,
    },
    /// Price, then hedge along a price path.
    Hedge {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        payoff: PayoffArgs,
        /// Comma-separated prices S_0,...,S_T.
        #[arg(long, value_delimiter = ',', required = true)]
        path: Vec<f64>,
    },
    /// Propagate the coefficient sets and check for immediate profits.
    CheckAip {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Compare the closed form with the grid, dual and region prices on
    /// random one-step instances.
    OracleCheck {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        /// Largest accepted pairwise discrepancy.
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        /// Initial grid step.
        #[arg(long)]
        grid_step: Option<f64>,
        /// Refinement rounds (each divides the step by 100).
        #[arg(long)]
        grid_rounds: Option<usize>,
    },
    /// Weekly calibrate-price-hedge backtest on a date,close CSV file.
    Backtest {
        #[arg(long)]
        data: PathBuf,
        /// Cost rates as fractions, e.g. 0.002,0.004.
        #[arg(long, value_delimiter = ',')]
        kappas: Option<Vec<f64>>,
        /// Evaluate at most this many weeks after the calibration window.
        #[arg(long)]
        max_weeks: Option<usize>,
        /// Calibration window in weeks.
        #[arg(long, default_value_t = 52)]
        window: usize,
        /// Trading days used per week (Monday first).
        #[arg(long, default_value_t = 4)]
        days: usize,
        /// Run the episodes on one thread.
        #[arg(long)]
        sequential: bool,
    },
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// JSON model file with spot, alpha, beta and kappa arrays.
    #[arg(long, conflicts_with_all = ["alpha", "beta", "kappa", "spot", "steps"])]
    model: Option<PathBuf>,
    /// Lower bound of every price ratio.
    #[arg(long)]
    alpha: Option<f64>,
    /// Upper bound of every price ratio.
    #[arg(long)]
    beta: Option<f64>,
    /// Proportional cost rate.
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    spot: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct PayoffArgs {
    /// Call with this strike.
    #[arg(long)]
    call: Option<f64>,
    /// Put with this strike.
    #[arg(long)]
    put: Option<f64>,
    /// Convex interpolation through "x0:y0,x1:y1,...".
    #[arg(long)]
    pwl: Option<String>,
    /// Named payoff; only "zero" is known.
    #[arg(long)]
    payoff: Option<String>,
}

/// Errors that map to the validation exit code.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Invalid(msg.into()))
}

impl ModelArgs {
    fn load(&self) -> Result<MarketModel> {
        if let Some(path) = &self.model {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let model: MarketModel =
                serde_json::from_str(&text).map_err(|e| invalid(format!("model file {}: {e}", path.display())))?;
            model.validate()?;
            return Ok(model);
        }
        let (Some(alpha), Some(beta)) = (self.alpha, self.beta) else {
            bail!("give either --model or both --alpha and --beta");
        };
        Ok(MarketModel::constant(
            self.steps.unwrap_or(1),
            alpha,
            beta,
            self.kappa.unwrap_or(0.0),
            self.spot.unwrap_or(100.0),
        )?)
    }
}

impl PayoffArgs {
    fn build(&self) -> Result<ConvexPwl> {
        if let Some(k) = self.call {
            return Ok(ConvexPwl::call(k));
        }
        if let Some(k) = self.put {
            return Ok(ConvexPwl::put(k));
        }
        if let Some(spec) = &self.pwl {
            return parse_pwl(spec);
        }
        match self.payoff.as_deref() {
            Some("zero") => Ok(ConvexPwl::zero()),
            Some(other) => bail!("unknown payoff {other:?}; use --call, --put, --pwl or --payoff zero"),
            None => bail!("no payoff given"),
        }
    }
}

fn parse_pwl(spec: &str) -> Result<ConvexPwl> {
    let points = spec
        .split(',')
        .map(|pair| {
            let (x, y) = pair
                .split_once(':')
                .ok_or_else(|| anyhow!("expected x:y, got {pair:?}"))?;
            Ok((x.trim().parse::<f64>()?, y.trim().parse::<f64>()?))
        })
        .collect::<Result<Vec<_>>>()
        .context("parsing --pwl")?;
    Ok(ConvexPwl::interpolate(&points)?)
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn fmt_set(xs: &[f64]) -> String {
    let items: Vec<String> = xs.iter().map(|x| format!("{:.6}", x + 0.0)).collect();
    format!("{{{}}}", items.join(", "))
}

fn cmd_price(cli: &Cli, model: &ModelArgs, payoff: &PayoffArgs) -> Result<()> {
    let model = model.load()?;
    let payoff = payoff.build()?;
    let pricing = price_multi_step(&payoff, &model)?;
    say!("p0 = {:.12}", pricing.p0);
    say!("p0/S0 = {:.6}%", 100.0 * pricing.p0 / model.spot);
    for (t, sys) in pricing.systems.iter().enumerate() {
        let regime = pricing
            .regimes
            .get(t)
            .map_or("-".to_string(), |r| format!("{r:?}").to_lowercase());
        say!("t = {t}  regime {regime:<5}  N = {:<3} mu = {}", sys.len(), fmt_set(&sys.mus()));
    }
    if let Some(dir) = &cli.out {
        let value = json!({
            "p0": pricing.p0,
            "model": model,
            "regimes": pricing.regimes,
            "systems": pricing.systems,
        });
        write_json(dir, "price.json", &value)?;
    }
    Ok(())
}

fn cmd_hedge(cli: &Cli, model: &ModelArgs, payoff: &PayoffArgs, path: &[f64]) -> Result<()> {
    let mut model = model.load()?;
    if let Some(&s0) = path.first() {
        if s0 != model.spot {
            log::info!("using path start {s0} as spot");
            model.spot = s0;
            model.validate()?;
        }
    }
    let payoff = payoff.build()?;
    let pricing = price_multi_step(&payoff, &model)?;
    let path = PricePath::new(path.to_vec())?;
    for (t, inside) in path.inside_support(&model).iter().enumerate() {
        if !inside {
            log::warn!("step {t} leaves the model support; the hedge may fall short");
        }
    }
    let ep = simulate_priced(&payoff, &model, &pricing, &path)?;
    say!("{:>4} {:>14} {:>14} {:>14}", "t", "S_t", "phi_t", "V_t");
    for t in 0..ep.prices.len() {
        let phi = ep.phis.get(t).map_or(String::from("-"), |p| format!("{p:.9}"));
        say!("{t:>4} {:>14.6} {phi:>14} {:>14.9}", ep.prices[t], ep.values[t]);
    }
    say!("payoff = {:.9}", ep.payoff);
    say!("error = {:.9e}", ep.error);
    if let Some(dir) = &cli.out {
        write_json(dir, "hedge.json", &serde_json::to_value(&ep)?)?;
    }
    Ok(())
}

fn cmd_check_aip(cli: &Cli, model: &ModelArgs) -> Result<()> {
    let model = model.load()?;
    let gamma = gamma_recursion(&model);
    for t in (0..=model.horizon()).rev() {
        let case = match gamma.cases.get(t).copied().flatten() {
            Some(StepCase::Violated) => "violated",
            Some(StepCase::Large) => "large",
            Some(StepCase::Small) => "small",
            None if t == model.horizon() => "terminal",
            None => "not reached",
        };
        say!("t = {t}  {case:<11} Gamma = {}", fmt_set(&gamma.sets[t]));
    }
    if let Some(dir) = &cli.out {
        let value = json!({
            "holds": gamma.holds(),
            "failed_step": gamma.failed_step,
            "sets": gamma.sets,
            "cases": gamma.cases,
        });
        write_json(dir, "aip.json", &value)?;
    }
    match gamma.failed_step {
        None => {
            say!("AIP holds");
            Ok(())
        }
        Some(t) => {
            let (a, b, k) = (model.alpha[t], model.beta[t], model.kappa[t]);
            let check = superhedge::recursion::aip_check_mus(&gamma.sets[t + 1], a, b, k);
            Err(PricingError::AipViolated {
                step: Some(t),
                alpha1: check.alpha1,
                beta_n: check.beta_n,
                kappa: k,
            }
            .into())
        }
    }
}

/// Random convex payoff with up to six kinks in [50, 200].
fn random_payoff(rng: &mut ChaCha8Rng) -> ConvexPwl {
    let n = rng.gen_range(0..=6);
    let mut kinks: Vec<f64> = (0..n).map(|_| rng.gen_range(50.0..200.0)).collect();
    kinks.sort_by(f64::total_cmp);
    kinks.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
    let mut slopes: Vec<f64> = (0..=kinks.len()).map(|_| rng.gen_range(-1.5..1.5)).collect();
    slopes.sort_by(f64::total_cmp);
    let mut pieces = vec![AffineLine::new(slopes[0], rng.gen_range(-20.0..40.0))];
    for (i, &x) in kinks.iter().enumerate() {
        let y = pieces[i].eval(x);
        pieces.push(AffineLine::new(slopes[i + 1], y - slopes[i + 1] * x));
    }
    ConvexPwl::from_pieces(f64::NEG_INFINITY, f64::INFINITY, kinks, pieces).expect("sorted slopes")
}

fn random_bounds(rng: &mut ChaCha8Rng, sys: &PayoffSystem, kappa: f64) -> (f64, f64) {
    let mus = sys.mus();
    let lo_cap = (1.0 + kappa) / (1.0 + mus[0]);
    let hi_floor = (1.0 - kappa) / (1.0 + mus[mus.len() - 1]);
    let alpha = rng.gen_range(0.6..lo_cap.min(1.15));
    let beta = alpha.max(hi_floor) + rng.gen_range(0.01..0.4);
    (alpha, beta)
}

fn cmd_oracle_check(
    cli: &Cli,
    instances: usize,
    tolerance: f64,
    grid_step: Option<f64>,
    grid_rounds: Option<usize>,
) -> Result<()> {
    let mut grid = GridSpec::fine();
    if let Some(s) = grid_step {
        grid.step = s;
    }
    if let Some(r) = grid_rounds {
        grid.rounds = r;
    }
    grid.validate()?;
    let kappas = [0.0, 0.005, 0.01, 0.05, 0.2];
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let mut rows = Vec::with_capacity(instances);
    let mut worst = 0f64;
    say!(
        "{:>5} {:>6} {:>3} {:>18} {:>18} {:>18} {:>18} {:>10}",
        "i", "kappa", "N", "closed", "grid", "dual", "region", "max diff"
    );
    for i in 0..instances {
        let mut sys = PayoffSystem::terminal(random_payoff(&mut rng));
        if i % 2 == 1 {
            let k0 = kappas[rng.gen_range(0..kappas.len())];
            let (a0, b0) = random_bounds(&mut rng, &sys, k0);
            sys = backward_step(&sys, a0, b0, k0)?;
        }
        let kappa = kappas[i % kappas.len()];
        let (alpha, beta) = random_bounds(&mut rng, &sys, kappa);
        debug_assert!(aip_check_step(&sys, alpha, beta, kappa).holds());
        let phi_prev = rng.gen_range(-2.0..2.0);
        let s = rng.gen_range(50.0..150.0);
        let c = compare(&sys, phi_prev, s, alpha, beta, kappa, &grid)?;
        let d = c.max_discrepancy();
        worst = worst.max(d);
        say!(
            "{i:>5} {kappa:>6} {:>3} {:>18.12} {:>18.12} {:>18.12} {:>18.12} {d:>10.2e}",
            sys.len(),
            c.closed_form,
            c.grid,
            c.dual,
            c.region
        );
        rows.push(json!({
            "kappa": kappa, "alpha": alpha, "beta": beta, "phi_prev": phi_prev, "s": s,
            "closed_form": c.closed_form, "grid": c.grid, "dual": c.dual, "region": c.region,
            "max_discrepancy": d,
        }));
    }
    say!("max discrepancy = {worst:.3e} (tolerance {tolerance:.1e})");
    if let Some(dir) = &cli.out {
        let value = json!({ "seed": cli.seed, "tolerance": tolerance, "max_discrepancy": worst, "instances": rows });
        write_json(dir, "oracle_check.json", &value)?;
    }
    if worst > tolerance {
        return Err(invalid(format!("discrepancy {worst:.3e} exceeds tolerance {tolerance:.1e}")));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_backtest(
    cli: &Cli,
    data: &Path,
    kappas: Option<&[f64]>,
    max_weeks: Option<usize>,
    window: usize,
    days: usize,
    sequential: bool,
) -> Result<()> {
    let file = std::fs::File::open(data).with_context(|| format!("opening {}", data.display()))?;
    let series = load_prices(file)?;
    let cfg = BacktestConfig {
        spec: CalibrationSpec {
            window,
            days_per_week: days,
            ..CalibrationSpec::default()
        },
        kappas: kappas.map_or_else(default_kappas, <[f64]>::to_vec),
        max_weeks,
        execution: if sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
    };
    let out = run_backtest(&series, &cfg)?;
    let r = &out.report;
    say!(
        "{:>8} {:>8} {:>10} {:>10} {:>10} {:>8}",
        "kappa%", "episodes", "mean err%", "std err%", "V0/S0%", "P(e>=0)"
    );
    for row in &r.rows {
        say!(
            "{:>8.2} {:>8} {:>10.4} {:>10.4} {:>10.4} {:>8.3}",
            100.0 * row.kappa,
            row.episodes,
            100.0 * row.mean_error,
            100.0 * row.std_error,
            100.0 * row.v0_over_s0,
            row.p_nonneg
        );
    }
    if let Some(fit) = r.fit {
        say!("V0/S0 ~ {:.4} kappa + {:.4}", fit.slope, fit.intercept);
    }
    say!(
        "{} weeks evaluated, {} skipped, support violations {}/{} ({:.2}%)",
        r.evaluation_weeks,
        r.skipped.len(),
        r.support_violations,
        r.day_steps,
        100.0 * r.support_violation_rate
    );
    if let Some(dir) = &cli.out {
        emit_report(r, &out.episodes, dir)?;
        say!("report written to {}", dir.display());
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        init_threads(n);
    }
    match &cli.command {
        Command::Price { model, payoff } => cmd_price(cli, model, payoff),
        Command::Hedge { model, payoff, path } => cmd_hedge(cli, model, payoff, path),
        Command::CheckAip { model } => cmd_check_aip(cli, model),
        Command::OracleCheck {
            instances,
            tolerance,
            grid_step,
            grid_rounds,
        } => cmd_oracle_check(cli, *instances, *tolerance, *grid_step, *grid_rounds),
        Command::Backtest {
            data,
            kappas,
            max_weeks,
            window,
            days,
            sequential,
        } => cmd_backtest(cli, data, kappas.as_deref(), *max_weeks, *window, *days, *sequential),
    }
}

/// 2 for an immediate profit, 3 for invalid input or a failed tolerance,
/// 1 for anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        let pricing = cause
            .downcast_ref::<PricingError>()
            .or_else(|| match cause.downcast_ref::<OracleError>() {
                Some(OracleError::Pricing(p)) => Some(p),
                _ => None,
            });
        if let Some(p) = pricing {
            return match p {
                PricingError::AipViolated { .. } => 2,
                _ => 3,
            };
        }
        if cause.is::<Invalid>() || cause.is::<MarketError>() || cause.is::<PwlError>() || cause.is::<OracleError>() {
            return 3;
        }
        if let Some(b) = cause.downcast_ref::<BacktestError>() {
            return match b {
                BacktestError::Market(_) | BacktestError::BadKappas => 3,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
