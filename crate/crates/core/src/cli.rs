//! Command-line interface. Tables go to stdout or `--output`, logs to stderr.
//!
//! Exit codes: 0 on success or help, 2 on a usage error, 1 when the
//! computation itself fails.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dgp_mc::{mc_coverage_oracle, run_mc, IntervalKind, Ma1Conditioning, McConfig, OracleCase, PRESETS};
use crate::inference::{analytic_coverage_ar1, analytic_coverage_cs, analytic_coverage_ma1, lm_dependence_test, CsConvention};
use crate::io::{self, Cell, IoError, PanelConfig, ReportFormat, Table};
use crate::linpred::PlupMode;
use crate::manifest::RunManifest;
use crate::panel_impute::{
    factor_fit_controls, impute_pup, panel_blup_oracle, CorrectionMode, CorrectionSpec, PanelDataset,
    Selection, StackedCov,
};
use crate::PupError;

#[derive(Debug, Parser)]
#[command(name = "pupcast", version, about = "Counterfactual imputation with corrections for predictable errors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Impute untreated outcomes of the treated units in a panel.
    Impute(ImputeArgs),
    /// Run a named Monte Carlo design.
    Simulate(SimulateArgs),
    /// Conditional coverage of standard prediction intervals.
    Coverage(CoverageArgs),
    /// LM test for dependence in a unit's residuals.
    Lmtest(LmArgs),
    /// Dense best linear unbiased correction for small panels.
    Blup(BlupArgs),
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Output file; `.json` selects JSON, anything else CSV. Defaults to stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Overrides the format implied by the output path.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl OutputArgs {
    fn format(&self) -> ReportFormat {
        match (self.format, &self.output) {
            (Some(FormatArg::Csv), _) => ReportFormat::Csv,
            (Some(FormatArg::Json), _) => ReportFormat::Json,
            (None, Some(p)) => ReportFormat::from_path(p),
            (None, None) => ReportFormat::Csv,
        }
    }

    fn emit(&self, bytes: &[u8]) -> Result<(), CliError> {
        match &self.output {
            Some(p) => io::write_bytes(p, bytes)?,
            None => {
                use std::io::Write;
                let mut out = std::io::stdout().lock();
                out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| CliError::Runtime(e.to_string()))?;
            }
        }
        Ok(())
    }
}

/// Panel file plus treatment assignment, from a sidecar or flags.
#[derive(Debug, Args)]
struct PanelArgs {
    /// Wide CSV: one row per unit, first column the unit id, header the periods.
    #[arg(long)]
    panel: PathBuf,
    /// JSON sidecar with `treated`, `t0`, `factors` and `correction`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated treated unit ids.
    #[arg(long, value_delimiter = ',')]
    treated: Vec<String>,
    /// Number of untreated periods.
    #[arg(long)]
    t0: Option<usize>,
    /// Number of factors; 2 when neither flag nor sidecar sets it.
    #[arg(long)]
    factors: Option<usize>,
}

#[derive(Debug, Args)]
struct ImputeArgs {
    #[command(flatten)]
    panel: PanelArgs,
    /// none, ar1, arp:P (P own terms), cs or both.
    #[arg(long, value_parser = parse_correction)]
    correction: Option<CorrectionArg>,
    /// Control screen for cs: all, top:K or thr:X.
    #[arg(long, value_parser = parse_selection)]
    selection: Option<Selection>,
    /// Leads and lags of each control in the cs correction.
    #[arg(long)]
    cs_lag: Option<usize>,
    /// Extension of the own-residual correction beyond one period.
    #[arg(long, value_enum)]
    ts_mode: Option<TsModeArg>,
    /// Impute horizons 1..=H; all post periods by default.
    #[arg(long)]
    horizons: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TsModeArg {
    Direct,
    Iterated,
}

/// Parsed `--correction` value.
#[derive(Debug, Clone, Copy, PartialEq)]
struct CorrectionArg {
    mode: CorrectionMode,
    ar_order: usize,
}

fn parse_correction(s: &str) -> Result<CorrectionArg, String> {
    let ts = |p| CorrectionArg { mode: CorrectionMode::Ts, ar_order: p };
    match s {
        "none" => Ok(CorrectionArg { mode: CorrectionMode::None, ar_order: 1 }),
        "ar1" => Ok(ts(1)),
        "cs" => Ok(CorrectionArg { mode: CorrectionMode::Cs, ar_order: 1 }),
        "both" => Ok(CorrectionArg { mode: CorrectionMode::Both, ar_order: 1 }),
        _ => match s.strip_prefix("arp:").map(str::parse::<usize>) {
            Some(Ok(p)) if p >= 1 => Ok(ts(p)),
            _ => Err(format!("expected none, ar1, arp:P with P >= 1, cs or both; got '{s}'")),
        },
    }
}

fn parse_selection(s: &str) -> Result<Selection, String> {
    if s == "all" {
        return Ok(Selection::All);
    }
    if let Some(k) = s.strip_prefix("top:") {
        return match k.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(Selection::TopK(k)),
            _ => Err(format!("top:K needs K >= 1, got '{k}'")),
        };
    }
    if let Some(x) = s.strip_prefix("thr:") {
        return match x.parse::<f64>() {
            Ok(x) if (0.0..=1.0).contains(&x) => Ok(Selection::Threshold(x)),
            _ => Err(format!("thr:X needs 0 <= X <= 1, got '{x}'")),
        };
    }
    Err(format!("expected all, top:K or thr:X; got '{s}'"))
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
    preset: String,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Hold the pre-period errors at the preset's conditioning values.
    #[arg(long)]
    conditional: bool,
    /// Worker threads; results do not depend on it. Defaults to PUPCAST_THREADS.
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ProcessArg {
    Ar1,
    Ma1,
    Cs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ConventionArg {
    Simplified,
    Formula,
}

#[derive(Debug, Args, Serialize)]
struct CoverageArgs {
    #[arg(long, value_enum)]
    process: ProcessArg,
    /// AR coefficient (ar1).
    #[arg(long, allow_hyphen_values = true)]
    phi: Option<f64>,
    /// MA coefficient (ma1).
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<f64>,
    /// Innovation variance (ar1, ma1).
    #[arg(long)]
    sigmav2: Option<f64>,
    /// Last pre-period error (ar1, ma1).
    #[arg(long, allow_hyphen_values = true)]
    e0: Option<f64>,
    /// Loading of the treated error on the control error (cs).
    #[arg(long, allow_hyphen_values = true)]
    theta1: Option<f64>,
    /// Marginal variance of the treated error (cs).
    #[arg(long)]
    sigmae2: Option<f64>,
    /// Variance of the control error (cs).
    #[arg(long)]
    sigma00: Option<f64>,
    /// Comma-separated post-period control errors, one per horizon (cs).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    e2: Vec<f64>,
    #[arg(long, value_enum, default_value = "simplified")]
    convention: ConventionArg,
    /// Horizons 1..=H (ar1, ma1).
    #[arg(long, default_value_t = 5)]
    hmax: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Adds simulated coverage with this many replications.
    #[arg(long)]
    mc_reps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    threads: Option<usize>,
    #[command(flatten)]
    #[serde(skip)]
    out: OutputArgs,
}

#[derive(Debug, Args)]
struct LmArgs {
    /// Wide CSV of residual series, or of outcomes when `--factors` is set.
    #[arg(long)]
    panel: PathBuf,
    #[arg(long)]
    unit: String,
    #[arg(long, default_value_t = 1)]
    own_lags: usize,
    /// Include every other unit at leads and lags -Q..=Q.
    #[arg(long)]
    cross_lags: Option<usize>,
    /// Remove R principal-component factors first, fitted over the first t0 periods.
    #[arg(long, requires = "t0")]
    factors: Option<usize>,
    #[arg(long)]
    t0: Option<usize>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Debug, Args)]
struct BlupArgs {
    #[command(flatten)]
    panel: PanelArgs,
    /// Solve the full stacked system; required, as it is the only method.
    #[arg(long, required = true)]
    oracle: bool,
    /// JSON with `sigma` (N x N, units in file order) and `phi` (N). It is
    /// not estimated: residuals of the fitted controls are collinear, so
    /// their sample covariance is singular.
    #[arg(long)]
    cov: PathBuf,
    #[arg(long)]
    horizons: Option<usize>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<PupError> for CliError {
    fn from(e: PupError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn cli_dispatch(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Impute(a) => impute(a, argv),
        Command::Simulate(a) => simulate(a, argv),
        Command::Coverage(a) => coverage(a, argv),
        Command::Lmtest(a) => lmtest(a, argv),
        Command::Blup(a) => blup(a, argv),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

/// Effective settings of a panel command, echoed into the manifest.
#[derive(Debug, Serialize)]
struct PanelRun<'a> {
    command: &'a str,
    config: &'a PanelConfig,
    horizons: usize,
    alpha: Option<f64>,
}

fn resolve_panel(args: &PanelArgs) -> Result<(PanelConfig, PanelDataset), CliError> {
    let mut cfg = match &args.config {
        Some(p) => io::read_panel_config(p)?,
        None => PanelConfig { treated: Vec::new(), t0: 0, factors: 2, correction: CorrectionSpec::default() },
    };
    if !args.treated.is_empty() {
        cfg.treated = args.treated.clone();
    }
    if let Some(t0) = args.t0 {
        cfg.t0 = t0;
    }
    if let Some(r) = args.factors {
        cfg.factors = r;
    }
    if cfg.treated.is_empty() {
        return Err(CliError::Usage("treated units must be given by --treated or --config".into()));
    }
    if args.config.is_none() && args.t0.is_none() {
        return Err(CliError::Usage("t0 must be given by --t0 or --config".into()));
    }
    let panel = io::load_panel(&args.panel, &cfg.treated, cfg.t0)?;
    Ok((cfg, panel))
}

fn manifest_for<C: Serialize>(config: &C, seed: Option<u64>, argv: &[String], inputs: &[&Path]) -> Result<RunManifest, CliError> {
    let mut m = RunManifest::new(config, seed).with_command(argv);
    for p in inputs {
        m.add_input(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
    }
    Ok(m)
}

fn horizon_count(requested: Option<usize>, t1: usize) -> Result<usize, CliError> {
    match requested {
        Some(0) => Err(CliError::Usage("--horizons must be at least 1".into())),
        Some(h) if h > t1 => Err(CliError::Usage(format!("--horizons {h} exceeds the {t1} post periods"))),
        Some(h) => Ok(h),
        None => Ok(t1),
    }
}

fn impute(a: &ImputeArgs, argv: &[String]) -> Result<(), CliError> {
    let (mut cfg, panel) = resolve_panel(&a.panel)?;
    if let Some(c) = a.correction {
        cfg.correction.mode = c.mode;
        cfg.correction.ar_order = c.ar_order;
    }
    if let Some(s) = a.selection {
        cfg.correction.selection = Some(s);
    }
    if let Some(l) = a.cs_lag {
        cfg.correction.cs_lag = l;
    }
    if let Some(m) = a.ts_mode {
        cfg.correction.ts_mode = match m {
            TsModeArg::Direct => PlupMode::Direct,
            TsModeArg::Iterated => PlupMode::Iterated,
        };
    }
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(CliError::Usage(format!("--alpha must lie in (0, 1), got {}", a.alpha)));
    }
    let hmax = horizon_count(a.horizons, panel.t1())?;
    let fit = factor_fit_controls(&panel, cfg.factors)?;
    let z = crate::normal::two_sided_z(a.alpha)?;

    let run = PanelRun { command: "impute", config: &cfg, horizons: hmax, alpha: Some(a.alpha) };
    let manifest = manifest_for(&run, None, argv, &[&a.panel.panel])?;
    let mut t = Table::new(
        &["unit", "period", "horizon", "observed", "y0_standard", "correction", "y0_hat", "delta_hat", "variance", "lower", "upper"],
        manifest,
    );
    for unit in 0..panel.n_treated() {
        for h in 1..=hmax {
            let r = impute_pup(&fit, unit, h, &cfg.correction)?;
            let half = z * r.variance.sqrt();
            t.push(vec![
                panel.units()[unit].as_str().into(),
                panel.periods()[panel.t0() + h - 1].as_str().into(),
                h.into(),
                r.observed.into(),
                r.y0_standard.into(),
                r.correction.into(),
                r.y0_hat.into(),
                r.delta_hat.into(),
                r.variance.into(),
                (r.y0_hat - half).into(),
                (r.y0_hat + half).into(),
            ]);
        }
    }
    a.out.emit(&t.to_bytes(a.out.format())?)
}

fn simulate(a: &SimulateArgs, argv: &[String]) -> Result<(), CliError> {
    let mut config = McConfig::preset(&a.preset, a.seed, a.conditional)?;
    if let Some(r) = a.reps {
        if r == 0 {
            return Err(CliError::Usage("--reps must be at least 1".into()));
        }
        config.reps = r;
    }
    config.threads = a.threads;
    let start = Instant::now();
    let mut report = run_mc(&config)?;
    report.manifest = report.manifest.with_command(argv);
    eprintln!("{}: {} replications in {:.2?}", a.preset, config.reps, start.elapsed());
    a.out.emit(&io::report_bytes(&report, a.out.format())?)
}

fn need(v: Option<f64>, flag: &str, process: &str) -> Result<f64, CliError> {
    v.ok_or_else(|| CliError::Usage(format!("--process {process} needs --{flag}")))
}

fn coverage(a: &CoverageArgs, argv: &[String]) -> Result<(), CliError> {
    let convention = match a.convention {
        ConventionArg::Simplified => CsConvention::Simplified,
        ConventionArg::Formula => CsConvention::Formula,
    };
    if a.hmax == 0 && a.process != ProcessArg::Cs {
        return Err(CliError::Usage("--hmax must be at least 1".into()));
    }
    let (reports, cases) = match a.process {
        ProcessArg::Ar1 => {
            let (phi, s2, e0) = (need(a.phi, "phi", "ar1")?, need(a.sigmav2, "sigmav2", "ar1")?, need(a.e0, "e0", "ar1")?);
            let reports = (1..=a.hmax).map(|h| analytic_coverage_ar1(phi, s2, e0, h, a.alpha)).collect::<Result<Vec<_>, _>>()?;
            (reports, vec![OracleCase::Ar1 { phi, sigma_v2: s2, e_t0: e0 }; a.hmax])
        }
        ProcessArg::Ma1 => {
            let (theta, s2, e0) = (need(a.theta, "theta", "ma1")?, need(a.sigmav2, "sigmav2", "ma1")?, need(a.e0, "e0", "ma1")?);
            let reports = (1..=a.hmax).map(|h| analytic_coverage_ma1(theta, s2, e0, h, a.alpha)).collect::<Result<Vec<_>, _>>()?;
            let case = OracleCase::Ma1 { theta, sigma_v2: s2, e_t0: e0, conditioning: Ma1Conditioning::MeanShift };
            (reports, vec![case; a.hmax])
        }
        ProcessArg::Cs => {
            let (theta1, se2, s00) =
                (need(a.theta1, "theta1", "cs")?, need(a.sigmae2, "sigmae2", "cs")?, need(a.sigma00, "sigma00", "cs")?);
            if a.e2.is_empty() {
                return Err(CliError::Usage("--process cs needs --e2".into()));
            }
            let reports = analytic_coverage_cs(theta1, se2, s00, &a.e2, a.alpha, convention)?;
            let cases = a
                .e2
                .iter()
                .map(|&e2| OracleCase::CrossSection { theta1, sigma_e1_2: se2, sigma00: s00, e2, convention })
                .collect();
            (reports, cases)
        }
    };

    let manifest = manifest_for(a, a.mc_reps.map(|_| a.seed), argv, &[])?;
    let mut columns = vec!["h", "coverage", "standardized_bias", "convention"];
    if a.mc_reps.is_some() {
        columns.extend(["mc_coverage", "mc_se"]);
    }
    let mut t = Table::new(&columns, manifest);
    for (r, case) in reports.iter().zip(&cases) {
        let mut row: Vec<Cell> = vec![r.h.into(), r.coverage.into(), r.standardized_bias.into(), r.convention.as_str().into()];
        if let Some(reps) = a.mc_reps {
            // the cs case carries its own horizon in e2; simulate one step
            let h = if a.process == ProcessArg::Cs { 1 } else { r.h };
            let est = mc_coverage_oracle(case, h, IntervalKind::Standard, reps, a.alpha, a.seed, a.threads)?;
            row.extend([est.coverage.into(), est.se.into()]);
        }
        t.push(row);
    }
    a.out.emit(&t.to_bytes(a.out.format())?)
}

fn lmtest(a: &LmArgs, argv: &[String]) -> Result<(), CliError> {
    let wide = io::read_wide_csv(&a.panel)?;
    let residuals = match a.factors {
        None => wide.values.clone(),
        Some(r) => {
            let t0 = a.t0.expect("clap enforces --t0");
            let panel = wide.clone().into_dataset(std::slice::from_ref(&a.unit), t0)?;
            let fit = factor_fit_controls(&panel, r)?;
            // back to file order
            let order: Vec<usize> = wide.units.iter().map(|u| panel.unit_index(u).expect("same units")).collect();
            DMatrix::from_fn(order.len(), t0, |i, s| fit.residuals.pre[(order[i], s)])
        }
    };
    let unit = wide.unit_index(&a.unit).ok_or_else(|| IoError::UnknownUnit(a.unit.clone()))?;
    let rep = lm_dependence_test(&residuals, None, a.own_lags, a.cross_lags, unit)?;

    #[derive(Serialize)]
    struct LmRun<'a> {
        command: &'a str,
        unit: &'a str,
        own_lags: usize,
        cross_lags: Option<usize>,
        factors: Option<usize>,
        t0: Option<usize>,
    }
    let run = LmRun { command: "lmtest", unit: &a.unit, own_lags: a.own_lags, cross_lags: a.cross_lags, factors: a.factors, t0: a.t0 };
    let manifest = manifest_for(&run, None, argv, &[&a.panel])?;
    let mut t = Table::new(&["unit", "statistic", "df", "p_value", "n_obs", "r_squared"], manifest);
    t.push(vec![
        a.unit.as_str().into(),
        rep.statistic.into(),
        rep.df.into(),
        rep.p_value.into(),
        rep.n_obs.into(),
        rep.r_squared.into(),
    ]);
    a.out.emit(&t.to_bytes(a.out.format())?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CovFile {
    sigma: Vec<Vec<f64>>,
    phi: Vec<f64>,
}

fn blup(a: &BlupArgs, argv: &[String]) -> Result<(), CliError> {
    let (cfg, panel) = resolve_panel(&a.panel)?;
    let hmax = horizon_count(a.horizons, panel.t1())?;
    let fit = factor_fit_controls(&panel, cfg.factors)?;
    let text = std::fs::read_to_string(&a.cov).map_err(|e| CliError::Runtime(format!("{}: {e}", a.cov.display())))?;
    let c: CovFile = serde_json::from_str(&text)?;
    let wide = io::read_wide_csv(&a.panel.panel)?;
    let n = wide.units.len();
    if c.sigma.len() != n || c.sigma.iter().any(|r| r.len() != n) || c.phi.len() != n {
        return Err(CliError::Runtime(format!("covariance file must describe {n} units")));
    }
    // file order to dataset order
    let order: Vec<usize> = panel.units().iter().map(|u| wide.unit_index(u).expect("same units")).collect();
    let sigma = DMatrix::from_fn(n, n, |i, j| c.sigma[order[i]][order[j]]);
    let phi = order.iter().map(|&i| c.phi[i]).collect();
    let cov = StackedCov::new(sigma, phi, panel.n_treated(), panel.t0(), panel.n_periods())?;
    let stacked = cov.stack(&fit.residuals)?;

    let run = PanelRun { command: "blup", config: &cfg, horizons: hmax, alpha: None };
    let manifest = manifest_for(&run, None, argv, &[&a.panel.panel, &a.cov])?;
    let mut t = Table::new(&["unit", "period", "horizon", "observed", "y0_standard", "correction", "y0_hat", "delta_hat"], manifest);
    for unit in 0..panel.n_treated() {
        for h in 1..=hmax {
            let base = crate::panel_impute::impute_standard(&fit, unit, h)?;
            let corr = panel_blup_oracle(&cov, unit, h, &stacked)?;
            let observed = fit.observed_treated(unit, h)?;
            t.push(vec![
                panel.units()[unit].as_str().into(),
                panel.periods()[panel.t0() + h - 1].as_str().into(),
                h.into(),
                observed.into(),
                base.into(),
                corr.into(),
                (base + corr).into(),
                (observed - base - corr).into(),
            ]);
        }
    }
    a.out.emit(&t.to_bytes(a.out.format())?)
}
