//! `kcrowd`: simulate quincunx judges, map fusion gaps, and backtest crowd
//! aggregation rules on survey panels.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kalman_crowd::aggregation::Rule;
use kalman_crowd::aq::{moments, sample_estimate};
use kalman_crowd::data::{load_panel, synth_panel, Panel, SynthConfig};
use kalman_crowd::eval::{
    run_backtest, subset_sweep, write_diagnostics_csv, write_dm_csv, write_rmse_csv,
    write_sweep_csv, BacktestConfig, Pooling, UpdateTiming,
};
use kalman_crowd::stats::SampleMoments;
use kalman_crowd::theory::{figure_grid, GapKind, GridConfig};
use kalman_crowd::{Environment, Error, JudgeParams, RandomStream};

#[derive(Parser)]
#[command(
    name = "kcrowd",
    version,
    about = "Kalman-filter fusion of crowd judgments"
)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    jobs: Option<u32>,

    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample one judge and compare sample moments with the closed forms.
    Simulate(SimulateArgs),
    /// Tabulate an expected MSE gap over a grid of judge reliabilities.
    Theory(TheoryArgs),
    /// Backtest aggregation rules on a survey panel.
    Backtest(BacktestArgs),
    /// RMSE as a function of the number of top forecasters kept.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    p: f64,
    /// Number of evidence elements.
    #[arg(long = "C")]
    elements: u32,
    /// Evidence magnitude per element.
    #[arg(long)]
    v: f64,
    /// Net element sign t, same parity as C.
    #[arg(long, allow_hyphen_values = true)]
    t: i64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    norm: f64,
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TheoryArgs {
    /// kfu-kfc, ew-kfu or sr-kfu.
    #[arg(long)]
    kind: GapKind,
    #[arg(long, default_value_t = 50)]
    resolution: usize,
    /// Monte Carlo trials where no closed form applies.
    #[arg(long, default_value_t = 1_000_000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Monte Carlo in every cell, not only the singular ones.
    #[arg(long)]
    mc_all: bool,
    /// Axes span raw variances instead of reliabilities.
    #[arg(long)]
    raw_variance: bool,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct PanelArgs {
    #[arg(long, requires_all = ["realizations", "vintages"], conflicts_with = "synthetic")]
    forecasts: Option<PathBuf>,
    #[arg(long)]
    realizations: Option<PathBuf>,
    #[arg(long)]
    vintages: Option<PathBuf>,
    /// Generate the panel from a key = value config file instead.
    #[arg(long)]
    synthetic: Option<PathBuf>,
    /// Comma-separated subset of ewm, kf, cwm, kfplus.
    #[arg(long, value_delimiter = ',', default_value = "ewm,kf,cwm,kfplus")]
    rules: Vec<Rule>,
    /// Harvey–Leybourne–Newbold correction for DM tests.
    #[arg(long)]
    hln: bool,
    /// Rolling window of past errors for each forecaster's MSE.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    window: Option<u64>,
    /// Score each survey straight away instead of when its target is released.
    #[arg(long)]
    immediate: bool,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct BacktestArgs {
    #[command(flatten)]
    panel: PanelArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    panel: PanelArgs,
    #[arg(long, default_value_t = 1)]
    n_min: usize,
    #[arg(long)]
    n_max: usize,
    /// Comma-separated horizons; all when omitted.
    #[arg(long, value_delimiter = ',')]
    horizons: Vec<u8>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_) | Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn check_writable(paths: &[&Path], force: bool) -> CliResult {
    for p in paths {
        if p.exists() && !force {
            return Err(Failure::Runtime(format!(
                "{} exists; pass --force to overwrite",
                p.display()
            )));
        }
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn simulate(args: &SimulateArgs) -> CliResult {
    check_writable(&[&args.out], args.force)?;
    if args.samples < 2 {
        return Err(Failure::Usage("--samples must be at least 2".into()));
    }
    let judge = JudgeParams::new(args.p)?;
    let env = Environment::new(args.norm, args.elements, args.v, args.t)?;
    let mut rng = RandomStream::from_seed(args.seed);
    let xs: Vec<f64> = (0..args.samples)
        .map(|_| sample_estimate(judge, &env, &mut rng))
        .collect();
    let s = SampleMoments::from_samples(&xs).expect("at least two samples");
    let m = moments(judge, &env);
    let span = f64::from(args.elements) * args.v;

    let mut out = String::from("statistic,analytic,sample,delta,tolerance,within\n");
    let mut row = |name: &str, analytic: Option<f64>, sample: f64, tol: Option<f64>| {
        let delta = analytic.map(|a| sample - a);
        let within = match (delta, tol) {
            (Some(d), Some(t)) => (d.abs() <= t).to_string(),
            _ => String::new(),
        };
        let _ = writeln!(
            out,
            "{name},{},{sample:.6},{},{},{within}",
            fmt_opt(analytic),
            fmt_opt(delta),
            fmt_opt(tol)
        );
    };
    row("mean", Some(m.mean()), s.mean, Some(4.0 * s.se_mean));
    row(
        "variance",
        Some(m.variance()),
        s.variance,
        Some(4.0 * s.se_variance),
    );
    let shape_tol = |a: f64, se: f64| (0.1 * a.abs()).max(4.0 * se);
    let skew = (m.variance() > 0.0).then(|| m.skewness());
    row(
        "skewness",
        skew,
        s.skewness,
        skew.map(|a| shape_tol(a, s.se_skewness)),
    );
    let kurt = m.kurtosis().ok();
    row(
        "kurtosis",
        kurt,
        s.kurtosis,
        kurt.map(|a| shape_tol(a, s.se_kurtosis)),
    );
    let lo = args.norm - span;
    let hi = args.norm + span;
    let _ = writeln!(
        out,
        "min,{lo:.6},{:.6},{:.6},,{}",
        s.min,
        s.min - lo,
        s.min >= lo
    );
    let _ = writeln!(
        out,
        "max,{hi:.6},{:.6},{:.6},,{}",
        s.max,
        s.max - hi,
        s.max <= hi
    );
    write_text(&args.out, &out)
}

fn theory(args: &TheoryArgs) -> CliResult {
    check_writable(&[&args.out], args.force)?;
    let cfg = GridConfig {
        substitute_p: !args.raw_variance,
        trials: args.trials,
        monte_carlo_everywhere: args.mc_all,
        seed: args.seed,
        ..GridConfig::new(args.kind, args.resolution)
    };
    let cells = figure_grid::<f64>(&cfg)?;
    let mut out = String::from("p1,p2,analytic,mc_mean,mc_stderr,trials\n");
    for c in &cells {
        let mc = c.monte_carlo.as_ref();
        let _ = writeln!(
            out,
            "{:.6},{:.6},{},{},{},{}",
            c.p1,
            c.p2,
            fmt_opt(c.analytic),
            fmt_opt(mc.map(|m| m.monte_carlo_mean)),
            fmt_opt(mc.map(|m| m.monte_carlo_stderr)),
            mc.map(|m| m.trials.to_string()).unwrap_or_default()
        );
    }
    write_text(&args.out, &out)
}

fn load(args: &PanelArgs) -> CliResult<Panel> {
    match (&args.forecasts, &args.synthetic) {
        (Some(f), None) => {
            let (r, v) = (
                args.realizations.as_ref().expect("required by clap"),
                args.vintages.as_ref().expect("required by clap"),
            );
            let loaded = load_panel(f, r, v)?;
            if !loaded.diagnostics.is_empty() {
                log::warn!("{} rows rejected", loaded.diagnostics.len());
            }
            Ok(loaded.panel)
        }
        (None, Some(cfg)) => {
            let text = fs::read_to_string(cfg)
                .map_err(|e| Failure::Runtime(format!("{}: {e}", cfg.display())))?;
            Ok(synth_panel(&SynthConfig::parse(&text)?)?)
        }
        _ => Err(Failure::Usage(
            "give either --forecasts/--realizations/--vintages or --synthetic".into(),
        )),
    }
}

fn backtest_config(args: &PanelArgs) -> BacktestConfig {
    let mut rules = args.rules.clone();
    rules.sort();
    rules.dedup();
    BacktestConfig {
        rules,
        hln: args.hln,
        window: args.window.map(|w| w as usize),
        timing: if args.immediate {
            UpdateTiming::Immediate
        } else {
            UpdateTiming::OnRelease
        },
        ..BacktestConfig::default()
    }
}

fn prepare_dir(dir: &Path, files: &[&str], force: bool) -> CliResult<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    let paths: Vec<PathBuf> = files.iter().map(|f| dir.join(f)).collect();
    let refs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
    check_writable(&refs, force)?;
    Ok(paths)
}

fn backtest(args: &BacktestArgs) -> CliResult {
    let a = &args.panel;
    let paths = prepare_dir(
        &a.out_dir,
        &["rmse.csv", "dm.csv", "diagnostics.csv"],
        a.force,
    )?;
    let panel = load(a)?;
    let calibration = panel.calibrate()?;
    let report = run_backtest(&panel, &calibration, &backtest_config(a))?;
    write_rmse_csv(&report, &paths[0])?;
    write_dm_csv(&report, &paths[1])?;
    write_diagnostics_csv(&report, &paths[2])?;
    log::info!(
        "{} cells written to {}",
        report.cells.len(),
        a.out_dir.display()
    );
    Ok(())
}

fn sweep(args: &SweepArgs) -> CliResult {
    let a = &args.panel;
    if args.n_min == 0 || args.n_min > args.n_max {
        return Err(Failure::Usage("need 1 <= --n-min <= --n-max".into()));
    }
    let paths = prepare_dir(&a.out_dir, &["sweep.csv", "sweep_pooled.csv"], a.force)?;
    let panel = load(a)?;
    let calibration = panel.calibrate()?;
    let report = subset_sweep(
        &panel,
        &calibration,
        &backtest_config(a),
        &args.horizons,
        args.n_min,
        args.n_max,
    )?;
    write_sweep_csv(&report, Pooling::MeanOfVariables, &paths[0])?;
    write_sweep_csv(&report, Pooling::Pooled, &paths[1])?;
    Ok(())
}

fn run(cli: &Cli) -> CliResult {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs as usize)
            .build_global()
            .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Theory(a) => theory(a),
        Command::Backtest(a) => backtest(a),
        Command::Sweep(a) => sweep(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
