//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Monte Carlo criteria use 5000 replications with seed 42. Criterion 12
//! needs user-supplied data and is skipped unless `PUPCAST_GERMAN_PANEL`
//! and `PUPCAST_GERMAN_CONFIG` are set.

use std::path::PathBuf;
use std::process::Command;

use nalgebra::DMatrix;
use pupcast::dgp_mc::{
    mc_coverage_oracle, run_mc_with_samples, IntervalKind, Ma1Conditioning, McConfig, McReport, McSamples, OracleCase,
    PRESETS,
};
use pupcast::inference::{analytic_coverage_ar1, analytic_coverage_cs, analytic_coverage_ma1, CsConvention};
use pupcast::io;
use pupcast::linpred::{asymptotic_prediction_variance, residual_autocorr, PredictionMethod};
use pupcast::panel_impute::{
    case1_correction, case2_correction, factor_fit_controls, impute_pup, impute_standard, panel_blup_oracle,
    CorrectionSpec, ResidualPanel, StackedCov,
};
use pupcast::process::ErrorProcess;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 42;

enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    verdict: Verdict,
    detail: String,
}

/// Collects named checks; the criterion passes when all of them hold.
#[derive(Default)]
struct Checks {
    failed: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn check(&mut self, ok: bool, what: String) {
        if !ok {
            self.failed.push(what.clone());
        }
        self.notes.push(what);
    }

    fn within(&mut self, name: &str, got: f64, target: f64, tol: f64) {
        self.check((got - target).abs() <= tol, format!("{name}={got:.4} (want {target}±{tol})"));
    }

    fn in_range(&mut self, name: &str, got: f64, lo: f64, hi: f64) {
        self.check((lo..=hi).contains(&got), format!("{name}={got:.4} (want [{lo}, {hi}])"));
    }

    fn done(self) -> Outcome {
        if self.failed.is_empty() {
            Outcome { verdict: Verdict::Pass, detail: self.notes.join("; ") }
        } else {
            Outcome { verdict: Verdict::Fail, detail: format!("failed: {}", self.failed.join("; ")) }
        }
    }
}

struct Runs {
    table1: [[McReport; 2]; 2],
    ts: [(McReport, McSamples); 2],
    cs: (McReport, McSamples),
}

fn run(name: &str, conditional: bool) -> (McReport, McSamples) {
    let cfg = McConfig::preset(name, SEED, conditional).expect("preset");
    run_mc_with_samples(&cfg).expect("mc run")
}

impl Runs {
    fn new() -> Self {
        let t1 = |n: &str| [run(n, false).0, run(n, true).0];
        Self {
            table1: [t1("table1-ar1"), t1("table1-ar2")],
            ts: [run("table2-ts", false), run("table2-ts", true)],
            cs: run("table2-cs", false),
        }
    }
}

fn row<'a>(r: &'a McReport, method: &str, h: usize) -> &'a pupcast::dgp_mc::McRow {
    r.row(method, Some(h)).unwrap_or_else(|| panic!("missing row {method} h={h}"))
}

fn criterion_1() -> Outcome {
    let table = [(0.84, -2.26), (0.87, -1.41), (0.90, -1.01), (0.92, -0.76), (0.93, -0.59)];
    let mut c = Checks::default();
    for (h, (cov, bias)) in (1..).zip(table) {
        let r = analytic_coverage_ar1(0.8, 0.5, -2.0, h, 0.05).unwrap();
        c.within(&format!("cov h{h}"), r.coverage, cov, 0.005);
        c.within(&format!("bias h{h}"), r.standardized_bias, bias, 0.005);
    }
    c.done()
}

fn criterion_2() -> Outcome {
    let mut c = Checks::default();
    let r = analytic_coverage_ma1(0.8, 0.5, -2.0, 1, 0.05).unwrap();
    c.within("cov h1", r.coverage, 0.58, 0.01);
    c.within("bias h1", r.standardized_bias, -1.77, 0.01);
    for h in 2..=5 {
        let r = analytic_coverage_ma1(0.8, 0.5, -2.0, h, 0.05).unwrap();
        c.check(r.coverage == 0.95 && r.standardized_bias == 0.0, format!("h{h}=({}, {})", r.coverage, r.standardized_bias));
    }
    c.done()
}

fn criterion_3() -> Outcome {
    let e2 = [0.68, -0.83, -0.92, 0.09, 0.86];
    let table = [(0.89, -0.70), (0.86, 0.85), (0.84, 0.95), (0.95, -0.09), (0.86, -0.89)];
    let mut c = Checks::default();
    let reports = analytic_coverage_cs(-0.7289, 0.5, 0.841, &e2, 0.05, CsConvention::Simplified).unwrap();
    for (r, (cov, bias)) in reports.iter().zip(table) {
        c.within(&format!("cov h{}", r.h), r.coverage, cov, 0.01);
        c.within(&format!("bias h{}", r.h), r.standardized_bias, bias, 0.01);
    }
    // the positive column is only checked for self-consistency
    let pos = analytic_coverage_cs(0.7289, 0.5, 0.841, &e2[..1], 0.05, CsConvention::Simplified).unwrap();
    let case = OracleCase::CrossSection {
        theta1: 0.7289,
        sigma_e1_2: 0.5,
        sigma00: 0.841,
        e2: e2[0],
        convention: CsConvention::Simplified,
    };
    let mc = mc_coverage_oracle(&case, 1, IntervalKind::Standard, 100_000, 0.05, SEED, None).unwrap();
    c.check(
        (mc.coverage - pos[0].coverage).abs() <= 3.0 * mc.se,
        format!("positive column mc {:.4} vs analytic {:.4}", mc.coverage, pos[0].coverage),
    );
    c.done()
}

fn criterion_4(runs: &Runs) -> Outcome {
    let mut c = Checks::default();
    let ranges = [("ar1", (0.13, 0.15), (0.04, 0.06)), ("ar2", (0.41, 0.45), (0.05, 0.08))];
    let procs = [
        ErrorProcess::Ar1 { phi: 0.8, sigma_v2: 0.05 },
        ErrorProcess::Ar2 { phi1: 1.3, phi2: -0.4, sigma_v2: 0.05 },
    ];
    for (k, (name, ols, plup)) in ranges.iter().enumerate() {
        let r = &runs.table1[k][0];
        let (o, p) = (row(r, "ols", 1), row(r, "plupd", 1));
        c.in_range(&format!("{name} ols mse"), o.mse, ols.0, ols.1);
        c.in_range(&format!("{name} plup mse"), p.mse, plup.0, plup.1);
        let g0 = procs[k].gamma0();
        let rho1 = procs[k].autocorrelation(1);
        let v_ols = asymptotic_prediction_variance(g0, rho1, rho1, 1, PredictionMethod::Standard).unwrap();
        let v_plup = asymptotic_prediction_variance(g0, rho1, rho1, 1, PredictionMethod::Plupd).unwrap();
        c.check((o.mse - v_ols).abs() <= 3.0 * o.mse_se + 0.01, format!("{name} ols vs {v_ols:.4}"));
        c.check((p.mse - v_plup).abs() <= 3.0 * p.mse_se + 0.01, format!("{name} plup vs {v_plup:.4}"));
    }
    let g = [procs[0].gamma0(), procs[1].gamma0()];
    c.within("gamma0 ar1", g[0], 0.1389, 5e-5);
    c.within("gamma0 ar2", g[1], 0.4321, 5e-5);
    c.done()
}

fn criterion_5(runs: &Runs) -> Outcome {
    let mut c = Checks::default();
    let ar1 = &runs.table1[0][1];
    c.within("ar1 ols bias", row(ar1, "ols", 1).bias, 0.79, 0.04);
    c.in_range("ar1 plup |bias|", row(ar1, "plupd", 1).bias.abs(), 0.0, 0.04);
    let ar2 = &runs.table1[1][1];
    c.within("ar2 ols bias", row(ar2, "ols", 1).bias, 1.09, 0.05);
    c.within("ar2 ols mse", row(ar2, "ols", 1).mse, 1.26, 0.08);
    c.within("ar2 plup bias", row(ar2, "plupd", 1).bias, 0.18, 0.05);
    c.within("ar2 plup mse", row(ar2, "plupd", 1).mse, 0.09, 0.03);
    let p = ErrorProcess::Ar2 { phi1: 1.3, phi2: -0.4, sigma_v2: 0.05 };
    c.within("anchor 1.1 - rho1", 1.1 - p.autocorrelation(1), 0.171, 5e-4);
    c.done()
}

fn criterion_6(runs: &Runs) -> Outcome {
    let mut c = Checks::default();
    let (ar1, ar2) = (&runs.table1[0][1], &runs.table1[1][1]);
    c.in_range("ar1 ols cov", row(ar1, "ols", 1).coverage, 0.36, 0.44);
    c.in_range("ar1 pup cov", row(ar1, "plupd", 1).coverage, 0.93, 0.97);
    c.in_range("ar2 pup cov", row(ar2, "plupd", 1).coverage, 0.88, 0.94);
    c.in_range("ar2 ols cov", row(ar2, "ols", 1).coverage, 0.0, 0.85);
    c.done()
}

fn random_residuals(rng: &mut ChaCha8Rng, n: usize, n1: usize, t0: usize, t: usize) -> ResidualPanel {
    let pre = DMatrix::from_fn(n, t0, |_, _| rng.random_range(-2.0..2.0));
    let post = DMatrix::from_fn(n - n1, t - t0, |_, _| rng.random_range(-2.0..2.0));
    ResidualPanel::new(pre, post, n1).unwrap()
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(2..=4);
        let n1 = rng.random_range(1..n);
        let t = rng.random_range(3..=10);
        let t0 = rng.random_range(2..t);
        let h = rng.random_range(1..=t - t0);
        let unit = rng.random_range(0..n1);
        let res = random_residuals(&mut rng, n, n1, t0, t);

        let diag = DMatrix::from_fn(n, n, |i, j| if i == j { rng.random_range(0.2..2.0) } else { 0.0 });
        let phi: Vec<f64> = (0..n).map(|_| rng.random_range(-0.9..0.9)).collect();
        let cov = StackedCov::new(diag, phi, n1, t0, t).unwrap();
        let oracle = panel_blup_oracle(&cov, unit, h, &cov.stack(&res).unwrap()).unwrap();
        worst = worst.max((oracle - case1_correction(&cov, unit, h, &res).unwrap()).abs());

        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let sigma = &a * a.transpose() + DMatrix::identity(n, n) * 0.5;
        let cov = StackedCov::new(sigma, vec![0.0; n], n1, t0, t).unwrap();
        let oracle = panel_blup_oracle(&cov, unit, h, &cov.stack(&res).unwrap()).unwrap();
        worst = worst.max((oracle - case2_correction(&cov, unit, h, &res).unwrap()).abs());
    }
    let mut c = Checks::default();
    c.check(worst <= 1e-8, format!("100 instances, max |oracle - closed form| = {worst:.2e}"));
    c.done()
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let var = |r1, rh, h, m| asymptotic_prediction_variance(1.0, r1, rh, h, m).unwrap();
    let mut bad = 0;
    for _ in 0..10_000 {
        let r1: f64 = rng.random_range(-1.0..=1.0);
        let rh: f64 = rng.random_range(-1.0..=1.0);
        let h = rng.random_range(1..=20);
        let d = var(r1, rh, h, PredictionMethod::Plupd);
        if d > var(r1, rh, h, PredictionMethod::Plupi) || d > var(r1, rh, h, PredictionMethod::Standard) {
            bad += 1;
        }
    }
    let mut c = Checks::default();
    c.check(bad == 0, format!("{bad} ordering violations in 10000 draws"));
    let mut eq_bad = 0;
    for _ in 0..1000 {
        let r1: f64 = rng.random_range(-1.0..=1.0);
        let h = rng.random_range(1..=20);
        let rh = r1.powi(h as i32);
        if var(r1, rh, h, PredictionMethod::Plupd) != var(r1, rh, h, PredictionMethod::Plupi) {
            eq_bad += 1;
        }
        if var(r1, 0.0, h, PredictionMethod::Plupd) != var(r1, 0.0, h, PredictionMethod::Standard) {
            eq_bad += 1;
        }
    }
    c.check(eq_bad == 0, format!("{eq_bad} equality-case mismatches"));
    c.done()
}

fn criterion_9(runs: &Runs) -> Outcome {
    let mut c = Checks::default();
    let (_, ts) = &runs.ts[0];
    for h in [1, 2] {
        let (d, se) = ts.mse_difference("pup", "pca", h).unwrap();
        c.check(d + 3.0 * se < 0.0, format!("ts h{h} mse diff {d:.4} (se {se:.4})"));
    }
    let (_, cs) = &runs.cs;
    for h in [1, 2, 5, 10] {
        let (d, se) = cs.mse_difference("pup", "pca", h).unwrap();
        c.check(d + 3.0 * se < 0.0, format!("cs h{h} mse diff {d:.4} (se {se:.4})"));
    }
    let cond = &runs.ts[1].0;
    c.within("ts conditional pca bias", row(cond, "pca", 1).bias, 0.6, 0.1);
    c.in_range("ts conditional pup bias", row(cond, "pup", 1).bias, f64::NEG_INFINITY, 0.2);
    c.done()
}

fn criterion_10() -> Outcome {
    let mut c = Checks::default();
    let reps = 20_000;
    let se = (0.95 * 0.05 / reps as f64).sqrt();
    let mut seed = SEED;
    let mut check = |c: &mut Checks, name: String, case: OracleCase, h: usize| {
        seed += 1;
        let est = mc_coverage_oracle(&case, h, IntervalKind::Pup, reps, 0.05, seed, None).unwrap();
        c.check((est.coverage - 0.95).abs() <= 3.0 * se, format!("{name}={:.4}", est.coverage));
    };
    for e_t0 in [-2.0, 0.0, 1.5, 3.0] {
        for h in [1, 3] {
            check(&mut c, format!("ar1 e0={e_t0} h{h}"), OracleCase::Ar1 { phi: 0.8, sigma_v2: 0.5, e_t0 }, h);
        }
    }
    for conditioning in [Ma1Conditioning::MeanShift, Ma1Conditioning::Innovation] {
        for h in [2, 4] {
            let case = OracleCase::Ma1 { theta: 0.8, sigma_v2: 0.5, e_t0: -2.0, conditioning };
            check(&mut c, format!("ma1 {conditioning:?} h{h}"), case, h);
        }
    }
    for e2 in [0.68, -0.92] {
        let case = OracleCase::CrossSection {
            theta1: -0.7289,
            sigma_e1_2: 0.5,
            sigma00: 0.841,
            e2,
            convention: CsConvention::Formula,
        };
        check(&mut c, format!("cs e2={e2}"), case, 1);
    }
    c.done()
}

fn criterion_11() -> Outcome {
    let mut c = Checks::default();
    for name in PRESETS {
        for conditional in [false, true] {
            let mut cfg = McConfig::preset(name, 7, conditional).unwrap();
            cfg.reps = 300;
            let runs: Vec<_> = [1, 4, 8]
                .iter()
                .map(|&t| {
                    cfg.threads = Some(t);
                    run_mc_with_samples(&cfg).unwrap()
                })
                .collect();
            let same = runs.windows(2).all(|w| {
                w[0].1.errors.iter().flatten().flatten().map(|x| x.to_bits()).eq(w[1].1.errors.iter().flatten().flatten().map(|x| x.to_bits()))
                    && io::report_bytes(&w[0].0, io::ReportFormat::Json).unwrap()
                        == io::report_bytes(&w[1].0, io::ReportFormat::Json).unwrap()
            });
            c.check(same, format!("{name} conditional={conditional}"));
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let outputs: Vec<Vec<u8>> = (0..2)
        .map(|k| {
            let out = dir.path().join(format!("run{k}.json"));
            let status = Command::new(env!("CARGO_BIN_EXE_pupcast"))
                .args(["simulate", "--preset", "table1-ar1", "--seed", "7", "--reps", "500", "--threads"])
                .arg(if k == 0 { "1" } else { "8" })
                .arg("--output")
                .arg(&out)
                .status()
                .unwrap();
            assert!(status.success());
            let mut r = io::read_report_json(&out).unwrap();
            // the manifest echoes argv, which names the output file
            r.manifest.command.clear();
            io::report_bytes(&r, io::ReportFormat::Json).unwrap()
        })
        .collect();
    c.check(outputs[0] == outputs[1], "cli simulate twice".into());
    c.done()
}

fn criterion_12() -> Outcome {
    let (Some(panel), Some(config)) = (std::env::var_os("PUPCAST_GERMAN_PANEL"), std::env::var_os("PUPCAST_GERMAN_CONFIG"))
    else {
        return Outcome { verdict: Verdict::Skip, detail: "PUPCAST_GERMAN_PANEL / PUPCAST_GERMAN_CONFIG not set".into() };
    };
    let cfg = io::read_panel_config(&PathBuf::from(config)).unwrap();
    let data = io::load_panel(&PathBuf::from(panel), &cfg.treated, cfg.t0).unwrap();
    let fit = factor_fit_controls(&data, cfg.factors).unwrap();
    let mut c = Checks::default();
    match data.periods().iter().position(|p| p == "1991") {
        Some(idx) if idx >= data.t0() => {
            let h = idx - data.t0() + 1;
            c.within("standard 1991", impute_standard(&fit, 0, h).unwrap(), -1.722, 0.02);
            c.within("pup 1991", impute_pup(&fit, 0, h, &CorrectionSpec::ts()).unwrap().y0_hat, -1.537, 0.02);
        }
        _ => c.check(false, "no post-period column labelled 1991".into()),
    }
    if let Some(level) = std::env::var_os("PUPCAST_GERMAN_LEVEL") {
        let data = io::load_panel(&PathBuf::from(level), &cfg.treated, cfg.t0).unwrap();
        let fit = factor_fit_controls(&data, cfg.factors).unwrap();
        let rho = residual_autocorr(&fit.residuals.unit_pre(0), 1).unwrap();
        c.within("level rho1", rho, 0.72, 0.02);
    }
    c.done()
}

fn main() {
    let runs = Runs::new();
    let results = [
        ("1 analytic coverage, AR(1)", criterion_1()),
        ("2 analytic coverage, MA(1)", criterion_2()),
        ("3 analytic coverage, cross-section", criterion_3()),
        ("4 unconditional MSE, linear designs", criterion_4(&runs)),
        ("5 conditional bias and MSE, linear designs", criterion_5(&runs)),
        ("6 conditional coverage, linear designs", criterion_6(&runs)),
        ("7 stacked oracle equals closed forms", criterion_7()),
        ("8 direct correction ordering", criterion_8()),
        ("9 factor-panel improvement", criterion_9(&runs)),
        ("10 corrected interval validity", criterion_10()),
        ("11 determinism across thread counts", criterion_11()),
        ("12 German reunification example", criterion_12()),
    ];
    let mut failed = 0;
    for (name, out) in &results {
        let tag = match out.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                failed += 1;
                "FAIL"
            }
            Verdict::Skip => "SKIP",
        };
        println!("{tag} criterion {name}: {}", out.detail);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
