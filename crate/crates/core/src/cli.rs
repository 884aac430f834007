//! Experiment configuration, dispatch and report emission.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::discrete::{
    assemble_form, cone_comparability_check, measure_weights, nash_check, translation_estimate_check,
    AssemblyOptions, ConeComparabilityReport, Grid, GridSpec, NashReport, TestFunction, TranslationReport,
};
use crate::env::{
    birkhoff_average, covariance_report, maximal_tail_check, sample_field, BoxRegion, CovarianceReport, FieldSpec,
    MaximalTailReport, MeasureSpec, MixingSpec,
};
use crate::error::{config, Error, Result};
use crate::hash::derive_seed;
use crate::homogenize::{
    default_bump, estimate_effective_constant, moment_bound_report, mosco_form_check, run_sweep,
    truncation_tail_report, validate_eps_list, ConstantEstimate, ConvergenceReport, EpsSummary, MomentBoundReport,
    MoscoReport, MoscoThreshold, Scenario, SolverSettings, SweepConfig, TailReport, METRIC_NAMES,
};
use crate::kernel::{Angular, CoefficientForm, ConeSpec, KernelParams};
use crate::solver::{solve_resolvent, ResolventProblem};
use crate::stats;

pub const SCHEMA_VERSION: u32 = 1;
pub const OUT_DIR_ENV: &str = "NLHOM_OUT_DIR";
pub const THREADS_ENV: &str = "NLHOM_THREADS";

fn default_out_dir() -> PathBuf {
    PathBuf::from("nlhom-out")
}

fn default_report() -> String {
    "report.json".into()
}

fn default_csv() -> String {
    "metrics.csv".into()
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_report")]
    pub report: String,
    #[serde(default = "default_csv")]
    pub csv: String,
    /// Also write per-metric plot-data files.
    #[serde(default = "yes")]
    pub plotdata: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            report: default_report(),
            csv: default_csv(),
            plotdata: true,
        }
    }
}

fn default_tolerance() -> f64 {
    0.1
}

fn default_seeds() -> usize {
    10
}

fn default_steps() -> Vec<usize> {
    vec![1, 2, 4]
}

fn one() -> f64 {
    1.0
}

fn default_birkhoff_tol() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub grid: GridSpec,
    pub form: CoefficientForm,
    #[serde(default = "ConeSpec::full")]
    pub cone: ConeSpec,
    pub alpha: f64,
    pub eps: f64,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub test_functions: Vec<TestFunction>,
    /// Allowed `|Ĉ − target|` when the target is known.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoscoConfig {
    pub grid: GridSpec,
    pub form: CoefficientForm,
    #[serde(default = "ConeSpec::full")]
    pub cone: ConeSpec,
    pub alpha: f64,
    pub eps_list: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub test_functions: Vec<TestFunction>,
    #[serde(default)]
    pub threshold: MoscoThreshold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example17Config {
    pub grid: GridSpec,
    pub alpha: f64,
    pub lambda1: FieldSpec,
    pub lambda2: FieldSpec,
    pub eps: f64,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub test_functions: Vec<TestFunction>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiagnosticCheck {
    Nash {
        grid: GridSpec,
        #[serde(default = "ConeSpec::full")]
        cone: ConeSpec,
        alpha: f64,
        #[serde(default)]
        test_functions: Vec<TestFunction>,
    },
    Cone {
        grid: GridSpec,
        cone: ConeSpec,
        alpha: f64,
        #[serde(default)]
        test_functions: Vec<TestFunction>,
    },
    Translation {
        grid: GridSpec,
        form: CoefficientForm,
        #[serde(default = "ConeSpec::full")]
        cone: ConeSpec,
        alpha: f64,
        eps: f64,
        #[serde(default = "one")]
        lambda: f64,
        #[serde(default)]
        rhs: Option<TestFunction>,
        #[serde(default = "default_steps")]
        steps: Vec<usize>,
        #[serde(default = "one")]
        radius: f64,
    },
    Birkhoff {
        field: FieldSpec,
        dim: usize,
        eps: f64,
        #[serde(default = "default_seeds")]
        seeds: usize,
        #[serde(default)]
        region: Option<BoxRegion>,
        #[serde(default = "default_birkhoff_tol")]
        tolerance: f64,
    },
    Maximal {
        field: FieldSpec,
        dim: usize,
        eps_grid: Vec<f64>,
        #[serde(default = "one")]
        r0: f64,
        #[serde(default = "default_seeds")]
        seeds: usize,
    },
    Covariance {
        field: FieldSpec,
        dim: usize,
        #[serde(default)]
        angular: Angular,
        z1: Vec<f64>,
        z2: Vec<f64>,
        lags: Vec<Vec<f64>>,
        #[serde(default)]
        mixing: MixingSpec,
        trials: usize,
    },
    Tails {
        grid: GridSpec,
        form: CoefficientForm,
        #[serde(default = "ConeSpec::full")]
        cone: ConeSpec,
        alpha: f64,
        eps: f64,
        #[serde(default)]
        g: Option<TestFunction>,
        eta_list: Vec<f64>,
    },
    Moments {
        grid: GridSpec,
        form: CoefficientForm,
        eps_list: Vec<f64>,
        #[serde(default = "default_seeds")]
        seeds: usize,
        #[serde(default = "one")]
        radius: f64,
        /// Defaults to the form's declared moment exponent (2 otherwise).
        #[serde(default)]
        p: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    Sweep(SweepConfig),
    EstimateConstant(EstimateConfig),
    Mosco(MoscoConfig),
    Diagnostics { check: DiagnosticCheck },
    Example17(Example17Config),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub output: OutputSpec,
    pub experiment: Experiment,
}

fn default_tests(dim: usize, tests: &mut Vec<TestFunction>) {
    if tests.is_empty() {
        tests.push(default_bump(dim));
        let mut c = vec![0.0; dim];
        c[0] = 0.5;
        tests.push(TestFunction::bump(c, 1.5, 1.0));
    }
}

impl ExperimentConfig {
    /// Expands every optional setting to its default.
    pub fn resolve(&mut self) {
        match &mut self.experiment {
            Experiment::Sweep(s) => s.resolve(),
            Experiment::EstimateConstant(e) => default_tests(e.grid.dim, &mut e.test_functions),
            Experiment::Mosco(m) => default_tests(m.grid.dim, &mut m.test_functions),
            Experiment::Example17(e) => default_tests(e.grid.dim, &mut e.test_functions),
            Experiment::Diagnostics { check } => match check {
                DiagnosticCheck::Nash { grid, test_functions, .. } | DiagnosticCheck::Cone { grid, test_functions, .. } => {
                    default_tests(grid.dim, test_functions)
                }
                DiagnosticCheck::Translation { grid, rhs, .. } => {
                    rhs.get_or_insert_with(|| default_bump(grid.dim));
                }
                DiagnosticCheck::Birkhoff { dim, region, .. } => {
                    region.get_or_insert_with(|| BoxRegion::unit(*dim));
                }
                DiagnosticCheck::Tails { grid, g, .. } => {
                    g.get_or_insert_with(|| default_bump(grid.dim));
                }
                DiagnosticCheck::Moments { form, p, .. } => {
                    p.get_or_insert(match form {
                        CoefficientForm::Summation { moment_p, .. } => *moment_p,
                        _ => 2.0,
                    });
                }
                DiagnosticCheck::Maximal { .. } | DiagnosticCheck::Covariance { .. } => {}
            },
        }
    }

    /// Checks every nested invariant before any computation.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return config(format!(
                "unrecognized schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        let seeds_ok = |s: usize| if s == 0 { config("seeds must be >= 1") } else { Ok(()) };
        let scenario_on = |grid: &GridSpec, form: &CoefficientForm, eps_list: &[f64], alpha: f64| -> Result<()> {
            let g = Grid::from_spec(grid)?;
            KernelParams::new(alpha, g.dim)?;
            validate_eps_list(eps_list)?;
            let scn = Scenario::new(g.dim, form.clone(), MeasureSpec::Lebesgue)?;
            if !form.is_deterministic() {
                let eps_min = eps_list.iter().copied().fold(f64::INFINITY, f64::min);
                crate::discrete::check_resolution(&g, eps_min, scn.min_cell_size())?;
            }
            Ok(())
        };
        match &self.experiment {
            Experiment::Sweep(s) => s.validate(),
            Experiment::EstimateConstant(e) => {
                seeds_ok(e.seeds)?;
                e.cone.validate(e.grid.dim)?;
                scenario_on(&e.grid, &e.form, &[e.eps], e.alpha)
            }
            Experiment::Mosco(m) => {
                seeds_ok(m.seeds)?;
                m.cone.validate(m.grid.dim)?;
                scenario_on(&m.grid, &m.form, &m.eps_list, m.alpha)
            }
            Experiment::Example17(e) => {
                seeds_ok(e.seeds)?;
                let (scn, _) = Scenario::time_change(e.grid.dim, e.lambda1.clone(), e.lambda2.clone())?;
                let g = Grid::from_spec(&e.grid)?;
                KernelParams::new(e.alpha, g.dim)?;
                validate_eps_list(&[e.eps])?;
                crate::discrete::check_resolution(&g, e.eps, scn.min_cell_size())
            }
            Experiment::Diagnostics { check } => match check {
                DiagnosticCheck::Nash { grid, cone, alpha, .. } | DiagnosticCheck::Cone { grid, cone, alpha, .. } => {
                    let g = Grid::from_spec(grid)?;
                    KernelParams::new(*alpha, g.dim)?;
                    cone.validate(g.dim)
                }
                DiagnosticCheck::Translation {
                    grid,
                    form,
                    cone,
                    alpha,
                    eps,
                    lambda,
                    steps,
                    ..
                } => {
                    cone.validate(grid.dim)?;
                    if !(*lambda > 0.0) {
                        return config("lambda must be > 0");
                    }
                    if steps.is_empty() || steps.contains(&0) {
                        return config("translation steps must be positive grid multiples");
                    }
                    scenario_on(grid, form, &[*eps], *alpha)
                }
                DiagnosticCheck::Birkhoff {
                    field, dim, eps, seeds, ..
                } => {
                    seeds_ok(*seeds)?;
                    field.validate()?;
                    validate_eps_list(&[*eps])?;
                    if *dim == 0 || *dim > 8 {
                        return config("field dimension must lie in 1..=8");
                    }
                    Ok(())
                }
                DiagnosticCheck::Maximal { field, seeds, eps_grid, .. } => {
                    field.validate()?;
                    if *seeds < 2 {
                        return config("maximal tail check needs at least 2 seeds");
                    }
                    if eps_grid.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
                        return config("every eps in eps_grid must lie in (0, 1)");
                    }
                    Ok(())
                }
                DiagnosticCheck::Covariance { field, mixing, trials, .. } => {
                    field.validate()?;
                    mixing.validate()?;
                    if *trials < 100 {
                        return config("covariance trials must be >= 100");
                    }
                    Ok(())
                }
                DiagnosticCheck::Tails {
                    grid, form, cone, alpha, eps, ..
                } => {
                    cone.validate(grid.dim)?;
                    scenario_on(grid, form, &[*eps], *alpha)
                }
                DiagnosticCheck::Moments {
                    grid, form, eps_list, seeds, ..
                } => {
                    seeds_ok(*seeds)?;
                    scenario_on(grid, form, eps_list, 1.0)
                }
            },
        }
    }
}

/// Parses, resolves and validates a configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    cfg.resolve();
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: impl Into<String>) -> CheckOutcome {
    CheckOutcome {
        name: name.into(),
        passed,
        detail: detail.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BirkhoffResult {
    pub averages: Vec<f64>,
    pub median: f64,
    pub analytic_mean: f64,
    pub relative_deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example17Result {
    pub c0: f64,
    pub estimate: ConstantEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Results {
    Sweep(ConvergenceReport),
    EstimateConstant(ConstantEstimate),
    Mosco(MoscoReport),
    Nash(NashReport),
    Cone(ConeComparabilityReport),
    Translation(TranslationReport),
    Birkhoff(BirkhoffResult),
    Maximal(MaximalTailReport),
    Covariance(CovarianceReport),
    Tails(TailReport),
    Moments(MomentBoundReport),
    Example17(Example17Result),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub master_seed: u64,
    pub version: String,
    pub deterministic: bool,
    /// Omitted in deterministic mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_secs: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub results: Results,
    pub checks: Vec<CheckOutcome>,
    pub passed: bool,
    pub provenance: Provenance,
}

fn sweep_checks(cfg: &SweepConfig, r: &ConvergenceReport) -> Vec<CheckOutcome> {
    let mut out = vec![check(
        "cells_succeeded",
        r.failures == 0,
        format!("{} of {} cells failed", r.failures, r.cells.len()),
    )];
    if cfg.form.is_deterministic() && cfg.measure == MeasureSpec::Lebesgue {
        let worst = r
            .cells
            .iter()
            .filter_map(|c| c.metrics)
            .flat_map(|m| METRIC_NAMES.map(|n| m.get(n).unwrap()))
            .fold(0.0, f64::max);
        out.push(check(
            "environment_independence",
            worst <= 1e-6,
            format!("max metric {worst:e} (<= 1e-6)"),
        ));
    } else if r.eps_list.len() > 1 {
        let m = r.medians("err_L2_mu");
        let non_increasing = m.windows(2).all(|w| w[1] <= w[0]);
        out.push(check(
            "err_L2_mu_non_increasing",
            non_increasing,
            format!("medians {m:?}"),
        ));
        out.push(check(
            "err_L2_mu_strict_overall_decrease",
            m.last() < m.first(),
            format!("final/initial {}", r.decay_ratio("err_L2_mu")),
        ));
    }
    out
}

fn estimate_check(est: &ConstantEstimate, tolerance: f64) -> CheckOutcome {
    match est.target {
        Some(t) => check(
            "effective_constant",
            (est.estimate - t).abs() <= tolerance,
            format!("estimate {} vs target {t} (tolerance {tolerance})", est.estimate),
        ),
        None => check("effective_constant", true, "no closed-form target; estimate reported only"),
    }
}

fn run_diagnostic(check_cfg: &DiagnosticCheck, master: u64) -> Result<(Results, Vec<CheckOutcome>)> {
    let sample_all = |grid: &Grid, tfs: &[TestFunction]| -> Result<Vec<Vec<f64>>> { tfs.iter().map(|t| t.sample(grid)).collect() };
    Ok(match check_cfg {
        DiagnosticCheck::Nash {
            grid,
            cone,
            alpha,
            test_functions,
        } => {
            let g = Grid::from_spec(grid)?;
            let r = nash_check(&g, cone, &KernelParams::new(*alpha, g.dim)?, &sample_all(&g, test_functions)?)?;
            let c = check("nash_ratios_finite", r.passed, format!("empirical c0 {}", r.max_ratio));
            (Results::Nash(r), vec![c])
        }
        DiagnosticCheck::Cone {
            grid,
            cone,
            alpha,
            test_functions,
        } => {
            let g = Grid::from_spec(grid)?;
            let r = cone_comparability_check(&g, cone, &KernelParams::new(*alpha, g.dim)?, &sample_all(&g, test_functions)?)?;
            let c = check("cone_ratios_finite", r.passed, format!("empirical c1 {}", r.max_ratio));
            (Results::Cone(r), vec![c])
        }
        DiagnosticCheck::Translation {
            grid,
            form,
            cone,
            alpha,
            eps,
            lambda,
            rhs,
            steps,
            radius,
        } => {
            let g = Grid::from_spec(grid)?;
            let params = KernelParams::new(*alpha, g.dim)?;
            let medium = form.realize(g.dim, derive_seed(master, &[0, 0]))?;
            let a = assemble_form(&g, &medium, cone, &params, *eps, &AssemblyOptions::default())?;
            let m = measure_weights(&g, &crate::env::MeasureField::Lebesgue, *eps)?;
            let f = rhs.as_ref().expect("resolved").sample(&g)?;
            let sol = solve_resolvent(
                &ResolventProblem {
                    form: &a,
                    measure: &m,
                    lambda: *lambda,
                    rhs: &f,
                },
                1e-10,
                SolverSettings::default().max_iter,
            )?;
            let r = translation_estimate_check(&a, &sol.u, steps, *radius, *alpha)?;
            let exponent = r.fitted_exponent.unwrap_or(f64::NAN);
            let c = check(
                "translation_exponent",
                !r.violation && exponent >= alpha / 2.0 - 0.2,
                format!("fitted exponent {exponent} (>= {})", alpha / 2.0 - 0.2),
            );
            (Results::Translation(r), vec![c])
        }
        DiagnosticCheck::Birkhoff {
            field,
            dim,
            eps,
            seeds,
            region,
            tolerance,
        } => {
            let region = region.clone().unwrap_or_else(|| BoxRegion::unit(*dim));
            let vol = region.volume();
            let averages = crate::par::map_range(*seeds, |s| {
                let f = sample_field(field, *dim, derive_seed(master, &[0, s as u64]))?;
                Ok(birkhoff_average(&f, *eps, &region, |_| 1.0)? / vol)
            })
            .into_iter()
            .collect::<Result<Vec<f64>>>()?;
            let median = stats::median(&averages);
            let analytic_mean = field.mean();
            let relative_deviation = (median / analytic_mean - 1.0).abs();
            let c = check(
                "birkhoff_mean",
                relative_deviation <= *tolerance,
                format!("median {median} vs mean {analytic_mean}"),
            );
            (
                Results::Birkhoff(BirkhoffResult {
                    averages,
                    median,
                    analytic_mean,
                    relative_deviation,
                }),
                vec![c],
            )
        }
        DiagnosticCheck::Maximal {
            field,
            dim,
            eps_grid,
            r0,
            seeds,
        } => {
            let r = maximal_tail_check(field, *dim, eps_grid, *r0, *seeds, master)?;
            let c = check(
                "maximal_tail_scaling",
                r.passed,
                format!("P(>high) {} <= {}", r.exceed_high, r.predicted_high),
            );
            (Results::Maximal(r), vec![c])
        }
        DiagnosticCheck::Covariance {
            field,
            dim,
            angular,
            z1,
            z2,
            lags,
            mixing,
            trials,
        } => {
            let r = covariance_report(field, *dim, angular, z1, z2, lags, mixing, *trials, master)?;
            let mut worst: f64 = 0.0;
            if let Some(a) = &r.analytic {
                for ((e, s), t) in r.estimates.iter().zip(&r.std_errors).zip(a) {
                    if *s > 0.0 {
                        worst = worst.max((e - t).abs() / s);
                    }
                }
            }
            let c = check(
                "covariance_matches_analytic",
                worst <= 3.0,
                format!("max |estimate − analytic| / SE {worst}"),
            );
            (Results::Covariance(r), vec![c])
        }
        DiagnosticCheck::Tails {
            grid,
            form,
            cone,
            alpha,
            eps,
            g,
            eta_list,
        } => {
            let gr = Grid::from_spec(grid)?;
            let scn = Scenario::new(gr.dim, form.clone(), MeasureSpec::Lebesgue)?;
            let r = truncation_tail_report(
                &scn,
                &gr,
                cone,
                &KernelParams::new(*alpha, gr.dim)?,
                *eps,
                g.as_ref().expect("resolved"),
                eta_list,
                master,
            )?;
            let c = check("tails_decrease", r.passed, format!("small slope {:?}, large slope {:?}", r.small_slope, r.large_slope));
            (Results::Tails(r), vec![c])
        }
        DiagnosticCheck::Moments {
            grid,
            form,
            eps_list,
            seeds,
            radius,
            p,
        } => {
            let gr = Grid::from_spec(grid)?;
            let scn = Scenario::new(gr.dim, form.clone(), MeasureSpec::Lebesgue)?;
            let r = moment_bound_report(&scn, &gr, eps_list, *seeds, *radius, p.unwrap_or(2.0), master)?;
            let c = check("moment_bounded", r.passed, format!("growth slope {:?}", r.growth_slope));
            (Results::Moments(r), vec![c])
        }
    })
}

/// Executes a validated configuration.
pub fn run(cfg: &ExperimentConfig, deterministic: bool) -> Result<RunReport> {
    let start = Instant::now();
    let mut cfg = cfg.clone();
    cfg.resolve();
    cfg.validate()?;
    let master = cfg.master_seed;
    let (results, checks) = match &cfg.experiment {
        Experiment::Sweep(s) => {
            let r = run_sweep(s, master)?;
            let c = sweep_checks(s, &r);
            (Results::Sweep(r), c)
        }
        Experiment::EstimateConstant(e) => {
            let g = Grid::from_spec(&e.grid)?;
            let scn = Scenario::new(g.dim, e.form.clone(), MeasureSpec::Lebesgue)?;
            let est = estimate_effective_constant(
                &scn,
                &g,
                &e.cone,
                &KernelParams::new(e.alpha, g.dim)?,
                e.eps,
                e.seeds,
                &e.test_functions,
                master,
            )?;
            let c = estimate_check(&est, e.tolerance);
            (Results::EstimateConstant(est), vec![c])
        }
        Experiment::Mosco(m) => {
            let g = Grid::from_spec(&m.grid)?;
            let scn = Scenario::new(g.dim, m.form.clone(), MeasureSpec::Lebesgue)?;
            let r = mosco_form_check(
                &scn,
                &g,
                &m.cone,
                &KernelParams::new(m.alpha, g.dim)?,
                &m.eps_list,
                m.seeds,
                &m.test_functions,
                &m.threshold,
                master,
            )?;
            let c = check(
                "mosco_criterion",
                r.passed,
                format!("decreasing {}, final/initial {}", r.decreasing, r.final_ratio),
            );
            (Results::Mosco(r), vec![c])
        }
        Experiment::Example17(e) => {
            let g = Grid::from_spec(&e.grid)?;
            let (scn, c0) = Scenario::time_change(g.dim, e.lambda1.clone(), e.lambda2.clone())?;
            let est = estimate_effective_constant(
                &scn,
                &g,
                &ConeSpec::full(),
                &KernelParams::new(e.alpha, g.dim)?,
                e.eps,
                e.seeds,
                &e.test_functions,
                master,
            )?;
            let c = check(
                "example_constant",
                (est.estimate - c0).abs() <= e.tolerance,
                format!("estimate {} vs C0 {c0} (tolerance {})", est.estimate, e.tolerance),
            );
            (Results::Example17(Example17Result { c0, estimate: est }), vec![c])
        }
        Experiment::Diagnostics { check } => run_diagnostic(check, master)?,
    };
    let passed = checks.iter().all(|c| c.passed);
    Ok(RunReport {
        schema_version: SCHEMA_VERSION,
        config: cfg,
        results,
        checks,
        passed,
        provenance: Provenance {
            master_seed: master,
            version: env!("CARGO_PKG_VERSION").into(),
            deterministic,
            wall_time_secs: (!deterministic).then(|| start.elapsed().as_secs_f64()),
        },
    })
}

/// One CSV row per (eps, seed, metric) value.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub eps_index: Option<usize>,
    pub eps: Option<f64>,
    pub seed_index: Option<usize>,
    pub seed: Option<u64>,
    pub metric: String,
    pub value: f64,
}

fn row(eps: Option<(usize, f64)>, seed: Option<(usize, u64)>, metric: impl Into<String>, value: f64) -> CsvRow {
    CsvRow {
        eps_index: eps.map(|e| e.0),
        eps: eps.map(|e| e.1),
        seed_index: seed.map(|s| s.0),
        seed: seed.map(|s| s.1),
        metric: metric.into(),
        value,
    }
}

pub fn csv_rows(results: &Results) -> Vec<CsvRow> {
    let mut rows = Vec::new();
    match results {
        Results::Sweep(r) => {
            for c in &r.cells {
                if let Some(m) = &c.metrics {
                    for name in METRIC_NAMES {
                        rows.push(row(
                            Some((c.eps_index, c.eps)),
                            Some((c.seed_index, c.seed)),
                            name,
                            m.get(name).unwrap(),
                        ));
                    }
                }
            }
        }
        Results::EstimateConstant(e) | Results::Example17(Example17Result { estimate: e, .. }) => {
            for (i, v) in e.ratios.iter().enumerate() {
                rows.push(row(None, None, format!("energy_ratio_{i}"), *v));
            }
        }
        Results::Mosco(r) => {
            for (ei, per_seed) in r.errors.iter().enumerate() {
                for (si, per_test) in per_seed.iter().enumerate() {
                    for (t, v) in per_test.iter().enumerate() {
                        rows.push(row(Some((ei, r.eps_list[ei])), Some((si, 0)), format!("form_err_f{t}"), *v));
                    }
                }
            }
        }
        Results::Nash(r) => {
            for (i, v) in r.ratios.iter().enumerate() {
                if let Some(v) = v {
                    rows.push(row(None, None, format!("nash_ratio_{i}"), *v));
                }
            }
        }
        Results::Cone(r) => {
            for (i, v) in r.ratios.iter().enumerate() {
                if let Some(v) = v {
                    rows.push(row(None, None, format!("cone_ratio_{i}"), *v));
                }
            }
        }
        Results::Translation(r) => {
            for (h, t) in r.steps.iter().zip(&r.translations) {
                rows.push(row(None, None, format!("translation_h{h}"), *t));
            }
        }
        Results::Birkhoff(b) => {
            for (s, v) in b.averages.iter().enumerate() {
                rows.push(row(None, Some((s, 0)), "birkhoff_average", *v));
            }
        }
        Results::Maximal(m) => {
            rows.push(row(None, None, "exceed_low", m.exceed_low));
            rows.push(row(None, None, "exceed_high", m.exceed_high));
        }
        Results::Covariance(c) => {
            for (l, v) in c.lags.iter().zip(&c.estimates) {
                rows.push(row(None, None, format!("covariance_lag{l}"), *v));
            }
        }
        Results::Tails(t) => {
            for ((eta, s), l) in t.eta_list.iter().zip(&t.small_jump).zip(&t.large_jump) {
                rows.push(row(None, None, format!("small_jump_eta{eta}"), *s));
                rows.push(row(None, None, format!("large_jump_eta{eta}"), *l));
            }
        }
        Results::Moments(m) => {
            for (ei, per_seed) in m.values.iter().enumerate() {
                for (si, v) in per_seed.iter().enumerate() {
                    rows.push(row(Some((ei, m.eps_list[ei])), Some((si, 0)), "moment_functional", *v));
                }
            }
        }
    }
    rows
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Renders CSV text with `.` decimals and shortest round-trip floats.
pub fn render_csv(rows: &[CsvRow]) -> String {
    let mut s = String::from("eps_index,eps,seed_index,seed,metric,value\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            opt(r.eps_index),
            opt(r.eps),
            opt(r.seed_index),
            opt(r.seed),
            r.metric,
            r.value
        );
    }
    s
}

/// Per-metric `(eps, median, q25, q75)` series of a result.
pub fn plot_series(results: &Results) -> Vec<(String, Vec<EpsSummary>)> {
    match results {
        Results::Sweep(r) => METRIC_NAMES
            .iter()
            .map(|n| (n.to_string(), r.summaries.get(*n).cloned().unwrap_or_default()))
            .collect(),
        Results::Mosco(r) => vec![("mosco_form_err".into(), r.summaries.clone())],
        Results::Moments(m) => {
            let s = m
                .eps_list
                .iter()
                .zip(&m.values)
                .map(|(&eps, v)| {
                    let s = stats::Summary::of(v);
                    EpsSummary {
                        eps,
                        median: s.median,
                        q25: s.q25,
                        q75: s.q75,
                        iqr: s.iqr(),
                        count: s.count,
                    }
                })
                .collect();
            vec![("moment_functional".into(), s)]
        }
        _ => Vec::new(),
    }
}

/// Writes one whitespace-delimited file per metric, rows by decreasing eps.
pub fn emit_plotdata(results: &Results, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, mut series) in plot_series(results) {
        series.sort_by(|a, b| b.eps.total_cmp(&a.eps));
        let mut s = String::from("# eps median q25 q75\n");
        for e in &series {
            let _ = writeln!(s, "{} {} {} {}", e.eps, e.median, e.q25, e.q75);
        }
        let path = dir.join(format!("{name}.dat"));
        fs::write(&path, s)?;
        written.push(path);
    }
    Ok(written)
}

/// Writes the JSON report, the CSV and (optionally) the plot data into `dir`.
pub fn write_outputs(report: &RunReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let out = &report.config.output;
    fs::write(dir.join(&out.report), serde_json::to_string_pretty(report)? + "\n")?;
    fs::write(dir.join(&out.csv), render_csv(&csv_rows(&report.results)))?;
    if out.plotdata {
        emit_plotdata(&report.results, &dir.join("plotdata"))?;
    }
    Ok(())
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}
