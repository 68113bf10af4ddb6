//! Seeded data-generating processes and the Monte Carlo replication engine.
//!
//! Every replication draws from its own ChaCha8 stream, selected by
//! `set_stream(replication index)` on a generator seeded from the run seed.
//! Gaussian variates use the ziggurat sampler of `rand_distr`, which is
//! exact up to floating-point rounding. Replications may run on any number
//! of threads; their outcomes are collected in replication order and reduced
//! sequentially, so results do not depend on scheduling.

mod factor;
mod linear;
mod oracle;

pub use factor::{simulate_factor_dgp, FactorDgp, FactorDraw, FactorVariant};
pub use linear::{simulate_linear_dgp, LinearDgp, LinearDraw};
pub use oracle::{mc_coverage_oracle, IntervalKind, Ma1Conditioning, OracleCase, OracleEstimate};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, PupError, Result};
use crate::manifest::RunManifest;
use crate::panel_impute::{CorrectionSpec, Selection};
use crate::process::ErrorProcess;

/// Stream reserved for draws shared by all replications.
pub const SHARED_STREAM: u64 = u64::MAX;

/// Generator for replication `stream` of a run seeded with `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Stationary AR(1) path of length `n` after `burn_in` discarded draws.
pub(crate) fn ar1_path(rng: &mut ChaCha8Rng, phi: f64, innov_var: f64, burn_in: usize, n: usize) -> Vec<f64> {
    let sd = innov_var.sqrt();
    let mut x = 0.0;
    let mut out = Vec::with_capacity(n);
    for t in 0..burn_in + n {
        x = phi * x + sd * normal(rng);
        if t >= burn_in {
            out.push(x);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DgpSpec {
    Linear(LinearDgp),
    Factor(FactorDgp),
}

impl DgpSpec {
    /// `linear-ar1`, `linear-ar2`, `factor-ts`, `factor-cs` or `custom`.
    pub fn kind_name(&self) -> &'static str {
        match self {
            DgpSpec::Linear(d) => match d.errors {
                ErrorProcess::Ar1 { .. } => "linear-ar1",
                ErrorProcess::Ar2 { .. } => "linear-ar2",
                _ => "custom",
            },
            DgpSpec::Factor(d) => match d.variant {
                FactorVariant::Ts { .. } => "factor-ts",
                FactorVariant::Cs { .. } => "factor-cs",
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DgpSpec::Linear(d) => d.validate(),
            DgpSpec::Factor(d) => d.validate(),
        }
    }
}

/// Error values held fixed across replications.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Conditioning {
    #[default]
    None,
    /// `(e_{T0-1}, e_{T0})` in the linear designs.
    FixPreErrors { prev: f64, last: f64 },
    /// `e_{1,T0}` of the treated unit in the factor design.
    FixTreatedLast { value: f64 },
    /// Post-period errors of the second unit, drawn once and reused.
    FixControlPostPath,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum McMethod {
    /// Infeasible: true coefficients and true conditional mean of the error.
    Best,
    /// Infeasible: true coefficients, no error correction.
    Noadj,
    Ols,
    Plupi,
    Plupd,
    /// Factor-model imputation without correction.
    Pca,
    Pup(CorrectionSpec),
}

impl McMethod {
    pub fn name(&self) -> &'static str {
        match self {
            McMethod::Best => "best",
            McMethod::Noadj => "noadj",
            McMethod::Ols => "ols",
            McMethod::Plupi => "plupi",
            McMethod::Plupd => "plupd",
            McMethod::Pca => "pca",
            McMethod::Pup(_) => "pup",
        }
    }

    fn is_linear(&self) -> bool {
        !matches!(self, McMethod::Pca | McMethod::Pup(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub dgp: DgpSpec,
    pub reps: usize,
    pub seed: u64,
    pub conditioning: Conditioning,
    pub horizons: Vec<usize>,
    pub alpha: f64,
    pub methods: Vec<McMethod>,
    /// Worker threads; `None` reads `PUPCAST_THREADS`, where 0 means all
    /// cores. Never affects results.
    #[serde(skip)]
    pub threads: Option<usize>,
}

pub const PRESETS: [&str; 4] = ["table1-ar1", "table1-ar2", "table2-ts", "table2-cs"];

impl McConfig {
    /// One of the named simulation designs with 5000 replications.
    pub fn preset(name: &str, seed: u64, conditional: bool) -> Result<Self> {
        let linear_methods = vec![McMethod::Best, McMethod::Noadj, McMethod::Ols, McMethod::Plupi, McMethod::Plupd];
        let (dgp, conditioning, methods) = match name {
            "table1-ar1" | "table1-ar2" => {
                let errors = if name == "table1-ar1" {
                    ErrorProcess::Ar1 { phi: 0.8, sigma_v2: 0.05 }
                } else {
                    ErrorProcess::Ar2 { phi1: 1.3, phi2: -0.4, sigma_v2: 0.05 }
                };
                let cond = if conditional { Conditioning::FixPreErrors { prev: 0.5, last: 1.0 } } else { Conditioning::None };
                (DgpSpec::Linear(LinearDgp::new(errors)), cond, linear_methods)
            }
            "table2-ts" => {
                let dgp = FactorDgp::new(FactorVariant::Ts { phi1: 0.6 });
                let cond = if conditional { Conditioning::FixTreatedLast { value: 1.0 } } else { Conditioning::None };
                (DgpSpec::Factor(dgp), cond, vec![McMethod::Pca, McMethod::Pup(CorrectionSpec::ts())])
            }
            "table2-cs" => {
                let dgp = FactorDgp::new(FactorVariant::Cs { theta: 0.5 });
                let cond = if conditional { Conditioning::FixControlPostPath } else { Conditioning::None };
                // a single screened control: the residuals of the fitted
                // factor model are collinear across all 19 controls and
                // wider screens pick up spurious correlation
                let pup = CorrectionSpec::cs(Selection::TopK(1));
                (DgpSpec::Factor(dgp), cond, vec![McMethod::Pca, McMethod::Pup(pup)])
            }
            other => return domain(format!("unknown preset '{other}'; expected one of {}", PRESETS.join(", "))),
        };
        Ok(Self { dgp, reps: 5000, seed, conditioning, horizons: (1..=10).collect(), alpha: 0.05, methods, threads: None })
    }

    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.reps == 0 {
            return domain("reps must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return domain(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.horizons.is_empty() || self.methods.is_empty() {
            return domain("need at least one horizon and one method");
        }
        let (max_h, linear) = match &self.dgp {
            DgpSpec::Linear(d) => (d.n_future, true),
            DgpSpec::Factor(d) => (d.t - d.t0, false),
        };
        if let Some(&h) = self.horizons.iter().find(|&&h| h == 0 || h > max_h) {
            return domain(format!("horizon {h} outside 1..={max_h}"));
        }
        if let Some(m) = self.methods.iter().find(|m| m.is_linear() != linear) {
            return domain(format!("method '{}' does not apply to a {} design", m.name(), self.dgp.kind_name()));
        }
        let ok = match (&self.dgp, self.conditioning) {
            (_, Conditioning::None) => true,
            (DgpSpec::Linear(_), Conditioning::FixPreErrors { .. }) => true,
            (DgpSpec::Factor(d), Conditioning::FixTreatedLast { .. }) => matches!(d.variant, FactorVariant::Ts { .. }),
            (DgpSpec::Factor(d), Conditioning::FixControlPostPath) => matches!(d.variant, FactorVariant::Cs { .. }),
            _ => false,
        };
        if !ok {
            return domain(format!("conditioning {:?} does not apply to a {} design", self.conditioning, self.dgp.kind_name()));
        }
        Ok(())
    }
}

/// Bias, MSE and coverage of one method at one horizon, or averaged over
/// horizons when `horizon` is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub method: String,
    pub horizon: Option<usize>,
    pub bias: f64,
    pub mse: f64,
    pub coverage: f64,
    pub bias_se: f64,
    pub mse_se: f64,
    pub coverage_se: f64,
}

impl McRow {
    pub fn label(&self) -> String {
        self.horizon.map_or_else(|| "avg".to_string(), |h| h.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub design: String,
    pub reps: usize,
    pub rows: Vec<McRow>,
    pub manifest: RunManifest,
}

impl McReport {
    pub fn row(&self, method: &str, horizon: Option<usize>) -> Option<&McRow> {
        self.rows.iter().find(|r| r.method == method && r.horizon == horizon)
    }
}

/// Prediction errors (actual minus predicted) and interval hits of one
/// replication, indexed `[method][horizon]`.
pub(crate) struct RepOutcome {
    pub errors: Vec<Vec<f64>>,
    pub covered: Vec<Vec<bool>>,
}

pub(crate) fn thread_count(requested: Option<usize>) -> usize {
    let n = requested.or_else(|| std::env::var("PUPCAST_THREADS").ok().and_then(|v| v.trim().parse().ok()));
    match n {
        Some(n) if n > 0 => n,
        _ => std::thread::available_parallelism().map_or(1, |n| n.get()),
    }
}

/// Runs `rep` for every replication index and returns the outcomes in order.
pub(crate) fn replicate<T, F>(reps: usize, threads: Option<usize>, rep: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count(threads))
        .build()
        .map_err(|e| PupError::Domain(format!("thread pool: {e}")))?;
    pool.install(|| (0..reps as u64).into_par_iter().map(&rep).collect())
}

fn summarize(config: &McConfig, outcomes: &[RepOutcome]) -> Vec<McRow> {
    let r = outcomes.len() as f64;
    let mut rows = Vec::new();
    for (m, method) in config.methods.iter().enumerate() {
        for (k, &h) in config.horizons.iter().enumerate() {
            let errs: Vec<f64> = outcomes.iter().map(|o| o.errors[m][k]).collect();
            let hits = outcomes.iter().filter(|o| o.covered[m][k]).count() as f64;
            let (bias, bias_se) = mean_se(&errs);
            let sq: Vec<f64> = errs.iter().map(|e| e * e).collect();
            let (mse, mse_se) = mean_se(&sq);
            let coverage = hits / r;
            rows.push(McRow {
                method: method.name().to_string(),
                horizon: Some(h),
                bias,
                mse,
                coverage,
                bias_se,
                mse_se,
                coverage_se: (coverage * (1.0 - coverage) / r).sqrt(),
            });
        }
        // average error over horizons within each replication
        let nh = config.horizons.len() as f64;
        let avg: Vec<f64> = outcomes.iter().map(|o| o.errors[m].iter().sum::<f64>() / nh).collect();
        let (bias, bias_se) = mean_se(&avg);
        let sq: Vec<f64> = avg.iter().map(|e| e * e).collect();
        let (mse, mse_se) = mean_se(&sq);
        let per_h: Vec<f64> = (0..config.horizons.len())
            .map(|k| outcomes.iter().filter(|o| o.covered[m][k]).count() as f64 / r)
            .collect();
        let coverage = per_h.iter().sum::<f64>() / nh;
        let hits_any: Vec<f64> = outcomes
            .iter()
            .map(|o| o.covered[m].iter().filter(|&&c| c).count() as f64 / nh)
            .collect();
        rows.push(McRow {
            method: method.name().to_string(),
            horizon: None,
            bias,
            mse,
            coverage,
            bias_se,
            mse_se,
            coverage_se: mean_se(&hits_any).1,
        });
    }
    rows
}

/// Mean and its standard error.
fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (m, 0.0);
    }
    let ss = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    (m, (ss / (n - 1.0) / n).sqrt())
}

/// Replication-level prediction errors, `errors[rep][method][horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct McSamples {
    pub methods: Vec<String>,
    pub horizons: Vec<usize>,
    pub errors: Vec<Vec<Vec<f64>>>,
}

impl McSamples {
    /// Mean of `err_a^2 - err_b^2` at horizon `h` with its standard error.
    pub fn mse_difference(&self, a: &str, b: &str, h: usize) -> Result<(f64, f64)> {
        let find = |m: &str| {
            self.methods.iter().position(|x| x == m).ok_or_else(|| PupError::Domain(format!("no method '{m}'")))
        };
        let (ia, ib) = (find(a)?, find(b)?);
        let k = self.horizons.iter().position(|&x| x == h).ok_or_else(|| PupError::Domain(format!("no horizon {h}")))?;
        let d: Vec<f64> = self.errors.iter().map(|e| e[ia][k] * e[ia][k] - e[ib][k] * e[ib][k]).collect();
        Ok(mean_se(&d))
    }
}

fn finish(config: &McConfig, outcomes: Vec<RepOutcome>) -> (McReport, McSamples) {
    let report = McReport {
        design: config.dgp.kind_name().to_string(),
        reps: config.reps,
        rows: summarize(config, &outcomes),
        manifest: RunManifest::new(config, Some(config.seed)),
    };
    let samples = McSamples {
        methods: config.methods.iter().map(|m| m.name().to_string()).collect(),
        horizons: config.horizons.clone(),
        errors: outcomes.into_iter().map(|o| o.errors).collect(),
    };
    (report, samples)
}

/// Monte Carlo study of the regression predictors.
pub fn run_linear_mc(config: &McConfig) -> Result<McReport> {
    Ok(run_mc_with_samples(config)?.0)
}

/// Monte Carlo study of the factor-model imputations.
pub fn run_factor_mc(config: &McConfig) -> Result<McReport> {
    Ok(run_mc_with_samples(config)?.0)
}

/// Dispatches on the design kind.
pub fn run_mc(config: &McConfig) -> Result<McReport> {
    Ok(run_mc_with_samples(config)?.0)
}

/// Report plus the replication-level errors behind it.
pub fn run_mc_with_samples(config: &McConfig) -> Result<(McReport, McSamples)> {
    config.validate()?;
    let outcomes = match &config.dgp {
        DgpSpec::Linear(dgp) => replicate(config.reps, config.threads, |rep| linear::replication(dgp, config, rep))?,
        DgpSpec::Factor(dgp) => replicate(config.reps, config.threads, |rep| factor::replication(dgp, config, rep))?,
    };
    Ok(finish(config, outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substreams_differ_and_repeat() {
        let a: Vec<f64> = (0..4).map(|_| normal(&mut substream(7, 0))).collect();
        let mut r0 = substream(7, 0);
        let mut r1 = substream(7, 1);
        let x0: Vec<f64> = (0..4).map(|_| normal(&mut r0)).collect();
        let x1: Vec<f64> = (0..4).map(|_| normal(&mut r1)).collect();
        assert_ne!(x0, x1);
        assert_eq!(a[0], x0[0]);
    }

    #[test]
    fn presets_validate() {
        for name in PRESETS {
            for cond in [false, true] {
                McConfig::preset(name, 1, cond).unwrap().validate().unwrap();
            }
        }
        assert!(McConfig::preset("table3", 1, false).is_err());
    }

    #[test]
    fn mismatched_conditioning_rejected() {
        let mut c = McConfig::preset("table2-ts", 1, false).unwrap();
        c.conditioning = Conditioning::FixPreErrors { prev: 0.5, last: 1.0 };
        assert!(c.validate().is_err());
    }

    #[test]
    fn mean_se_small_cases() {
        assert_eq!(mean_se(&[2.0]), (2.0, 0.0));
        let (m, se) = mean_se(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - 1.0).abs() < 1e-15);
    }
}
