//! ε-sweeps of the random resolvent problem against the homogenized one,
//! effective-constant estimation and the form-convergence diagnostics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::discrete::{
    self, assemble_effective_form, assemble_form, dirichlet_energy, measure_weights, AssemblyOptions, Grid, GridSpec,
    MeasureWeights, SparseSymmetricForm, TestFunction,
};
use crate::env::{sample_field, FieldSpec, MeasureField, MeasureSpec};
use crate::error::{config, Error, Result};
use crate::hash::{self, derive_seed};
use crate::kernel::{c0_formula, effective_kernel, CoefficientForm, ConeSpec, EffectiveKernel, Joint, KernelParams, Medium};
use crate::par;
use crate::solver::{solve_resolvent, ResolventProblem, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::stats::{self, Summary};

pub const METRIC_NAMES: [&str; 5] = ["err_L2_mu", "err_L1_ball", "pairing_err", "form_err", "norm_err"];

/// A random medium together with its reference measure.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub dim: usize,
    pub form: CoefficientForm,
    measure: ScenarioMeasure,
}

#[derive(Clone, Debug, PartialEq)]
enum ScenarioMeasure {
    Spec(MeasureSpec),
    /// `μ = λ₂ / (Z λ₁)` with `λ₂` shared with the form.
    TimeChange {
        lambda1: FieldSpec,
        lambda2: FieldSpec,
        z: f64,
    },
}

impl Scenario {
    pub fn new(dim: usize, form: CoefficientForm, measure: MeasureSpec) -> Result<Self> {
        form.validate(dim)?;
        measure.validate()?;
        Ok(Self {
            dim,
            form,
            measure: ScenarioMeasure::Spec(measure),
        })
    }

    /// Time-changed formulation of the two-field example: jump coefficient
    /// `λ₂(x)λ₂(y)/Z`, measure `λ₂/(Z λ₁)`, `Z = E[λ₂/λ₁]`, fields independent.
    /// Returns the scenario and `C₀`.
    pub fn time_change(dim: usize, lambda1: FieldSpec, lambda2: FieldSpec) -> Result<(Self, f64)> {
        lambda1.validate()?;
        lambda2.validate()?;
        if lambda1.scale != 1.0 || lambda2.scale != 1.0 {
            return config("time-change fields must not carry a scale factor");
        }
        let c0 = c0_formula(&lambda1.marginal, &lambda2.marginal, Joint::Independent)?;
        let inv = lambda1
            .moment(-1.0)
            .ok_or_else(|| Error::Config("E[1/λ₁] is infinite".into()))?;
        let z = lambda2.mean() * inv;
        let form = CoefficientForm::Product {
            nu1: lambda2.clone().scaled(1.0 / z.sqrt()),
            nu2: None,
        };
        form.validate(dim)?;
        Ok((
            Self {
                dim,
                form,
                measure: ScenarioMeasure::TimeChange { lambda1, lambda2, z },
            },
            c0,
        ))
    }

    pub fn min_cell_size(&self) -> f64 {
        let m = match &self.measure {
            ScenarioMeasure::Spec(MeasureSpec::Lebesgue) => f64::INFINITY,
            ScenarioMeasure::Spec(MeasureSpec::Field { field }) => field.cell_size,
            ScenarioMeasure::TimeChange { lambda1, lambda2, .. } => lambda1.cell_size.min(lambda2.cell_size),
        };
        m.min(self.form.min_cell_size())
    }

    pub fn effective_kernel(&self) -> Result<EffectiveKernel> {
        effective_kernel(&self.form)
    }

    pub fn realize(&self, seed: u64) -> Result<(Medium, MeasureField)> {
        let medium = self.form.realize(self.dim, seed)?;
        let measure = match &self.measure {
            ScenarioMeasure::Spec(spec) => spec.realize(self.dim, seed)?,
            ScenarioMeasure::TimeChange { lambda1, lambda2, z } => MeasureField::Ratio {
                // same substream as the form's first field
                num: sample_field(lambda2, self.dim, derive_seed(seed, &[2]))?,
                den: sample_field(lambda1, self.dim, derive_seed(seed, &[5]))?,
                factor: 1.0 / z,
            },
        };
        Ok((medium, measure))
    }
}

fn default_lambda() -> f64 {
    1.0
}

fn default_seeds() -> usize {
    10
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub grid: GridSpec,
    pub form: CoefficientForm,
    #[serde(default)]
    pub measure: MeasureSpec,
    #[serde(default = "ConeSpec::full")]
    pub cone: ConeSpec,
    pub alpha: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Resolvent right-hand side; a unit bump of radius 1 at the origin by default.
    #[serde(default)]
    pub rhs: Option<TestFunction>,
    pub eps_list: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    /// Radius of the `L¹` ball; `L/8` by default.
    #[serde(default)]
    pub radius: Option<f64>,
    /// Functions `g` entering the pairing and form metrics (the first is used).
    #[serde(default)]
    pub test_functions: Vec<TestFunction>,
    #[serde(default)]
    pub r_max: Option<f64>,
    #[serde(default)]
    pub solver: SolverSettings,
}

/// Unit bump of radius 1 at the origin.
pub fn default_bump(dim: usize) -> TestFunction {
    TestFunction::bump(vec![0.0; dim], 1.0, 1.0)
}

impl SweepConfig {
    /// Fills every optional field with its default.
    pub fn resolve(&mut self) {
        let d = self.grid.dim;
        self.rhs.get_or_insert_with(|| default_bump(d));
        self.radius.get_or_insert(self.grid.side / 8.0);
        if self.test_functions.is_empty() {
            self.test_functions.push(TestFunction::bump(vec![0.0; d], 1.5, 1.0));
        }
        self.r_max.get_or_insert(self.grid.side / 4.0);
    }

    pub fn validate(&self) -> Result<()> {
        let grid = Grid::from_spec(&self.grid)?;
        KernelParams::new(self.alpha, grid.dim)?;
        self.cone.validate(grid.dim)?;
        self.form.validate(grid.dim)?;
        self.measure.validate()?;
        validate_eps_list(&self.eps_list)?;
        if self.seeds == 0 {
            return config("seeds must be >= 1");
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return config("lambda must be > 0");
        }
        if let Some(r) = self.radius {
            if !(r > 0.0) {
                return config("radius must be > 0");
            }
        }
        if !(self.solver.tol > 0.0 && self.solver.tol <= 1e-2) {
            return config("solver tol must lie in (0, 1e-2]");
        }
        let scn = Scenario::new(grid.dim, self.form.clone(), self.measure.clone())?;
        check_grid_resolution(&grid, &self.eps_list, &scn)
    }

    pub fn scenario(&self) -> Result<Scenario> {
        Scenario::new(self.grid.dim, self.form.clone(), self.measure.clone())
    }
}

pub fn validate_eps_list(eps_list: &[f64]) -> Result<()> {
    if eps_list.is_empty() {
        return config("eps_list must be nonempty");
    }
    if eps_list.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return config("eps_list entries must be > 0");
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return config("eps_list must be strictly decreasing");
    }
    Ok(())
}

fn check_grid_resolution(grid: &Grid, eps_list: &[f64], scn: &Scenario) -> Result<()> {
    let cell = scn.min_cell_size();
    if scn.form.is_deterministic() && matches!(scn.measure, ScenarioMeasure::Spec(MeasureSpec::Lebesgue)) {
        return Ok(());
    }
    let eps_min = eps_list.iter().copied().fold(f64::INFINITY, f64::min);
    discrete::check_resolution(grid, eps_min, cell)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    #[serde(rename = "err_L2_mu")]
    pub err_l2_mu: f64,
    #[serde(rename = "err_L1_ball")]
    pub err_l1_ball: f64,
    pub pairing_err: f64,
    pub form_err: f64,
    pub norm_err: f64,
}

impl CellMetrics {
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "err_L2_mu" => self.err_l2_mu,
            "err_L1_ball" => self.err_l1_ball,
            "pairing_err" => self.pairing_err,
            "form_err" => self.form_err,
            "norm_err" => self.norm_err,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub eps_index: usize,
    pub eps: f64,
    pub seed_index: usize,
    pub seed: u64,
    pub metrics: Option<CellMetrics>,
    pub iterations: Option<usize>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsSummary {
    pub eps: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub iqr: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub eps_list: Vec<f64>,
    pub effective_kernel: EffectiveKernel,
    pub reference_iterations: usize,
    pub cells: Vec<CellRecord>,
    /// Per metric, one summary per eps in sweep order.
    pub summaries: BTreeMap<String, Vec<EpsSummary>>,
    pub failures: usize,
}

impl ConvergenceReport {
    pub fn medians(&self, metric: &str) -> Vec<f64> {
        self.summaries
            .get(metric)
            .map(|v| v.iter().map(|s| s.median).collect())
            .unwrap_or_default()
    }

    pub fn strictly_decreasing(&self, metric: &str) -> bool {
        let m = self.medians(metric);
        !m.is_empty() && m.windows(2).all(|w| w[1] < w[0])
    }

    /// Median at the smallest eps over median at the largest.
    pub fn decay_ratio(&self, metric: &str) -> f64 {
        let m = self.medians(metric);
        match (m.first(), m.last()) {
            (Some(a), Some(b)) => b / a,
            _ => f64::NAN,
        }
    }
}

fn summarize(eps_list: &[f64], values: &[Vec<f64>]) -> Vec<EpsSummary> {
    eps_list
        .iter()
        .zip(values)
        .map(|(&eps, v)| {
            let s = Summary::of(v);
            EpsSummary {
                eps,
                median: s.median,
                q25: s.q25,
                q75: s.q75,
                iqr: s.iqr(),
                count: s.count,
            }
        })
        .collect()
}

fn cell_seed(master: u64, eps_index: usize, seed_index: usize) -> u64 {
    derive_seed(master, &[eps_index as u64, seed_index as u64])
}

struct Reference {
    form: SparseSymmetricForm,
    u: Vec<f64>,
    iterations: usize,
}

#[allow(clippy::too_many_arguments)]
fn sweep_cell(
    scn: &Scenario,
    grid: &Grid,
    cfg: &SweepConfig,
    params: &KernelParams,
    opts: &AssemblyOptions,
    reference: &Reference,
    f: &[f64],
    g: &[f64],
    eps: f64,
    seed: u64,
) -> Result<(CellMetrics, usize)> {
    let (medium, mfield) = scn.realize(seed)?;
    let form = assemble_form(grid, &medium, &cfg.cone, params, eps, opts)?;
    let m = measure_weights(grid, &mfield, eps)?;
    let sol = solve_resolvent(
        &ResolventProblem {
            form: &form,
            measure: &m,
            lambda: cfg.lambda,
            rhs: f,
        },
        cfg.solver.tol,
        cfg.solver.max_iter,
    )?;
    let (u, uk) = (&sol.u, &reference.u);
    let hd = grid.cell_volume();
    let diff: Vec<f64> = u.iter().zip(uk).map(|(a, b)| a - b).collect();
    let r = cfg.radius.unwrap_or(grid.side / 8.0);
    let err_l1_ball = hd * par::sum_range(grid.len(), |i| {
        let x = grid.coords(i);
        if x.iter().map(|v| v * v).sum::<f64>() < r * r {
            diff[i].abs()
        } else {
            0.0
        }
    });
    let lebesgue = MeasureWeights::lebesgue(grid);
    let metrics = CellMetrics {
        err_l2_mu: m.norm(&diff),
        err_l1_ball,
        pairing_err: (m.inner(u, g) - lebesgue.inner(uk, g)).abs(),
        form_err: (dirichlet_energy(&form, u, g)? - dirichlet_energy(&reference.form, uk, g)?).abs(),
        norm_err: (m.norm(u) - lebesgue.norm(uk)).abs(),
    };
    Ok((metrics, sol.iterations))
}

/// Runs the resolvent ε-sweep for `cfg` with per-cell seeds derived from `master_seed`.
pub fn run_sweep(cfg: &SweepConfig, master_seed: u64) -> Result<ConvergenceReport> {
    let mut cfg = cfg.clone();
    cfg.resolve();
    cfg.validate()?;
    let scn = cfg.scenario()?;
    run_scenario_sweep(&scn, &cfg, master_seed)
}

/// Sweep over an explicit scenario; `cfg.form` and `cfg.measure` are ignored.
pub fn run_scenario_sweep(scn: &Scenario, cfg: &SweepConfig, master_seed: u64) -> Result<ConvergenceReport> {
    let mut cfg = cfg.clone();
    cfg.resolve();
    let grid = Grid::from_spec(&cfg.grid)?;
    let params = KernelParams::new(cfg.alpha, grid.dim)?;
    validate_eps_list(&cfg.eps_list)?;
    if cfg.seeds == 0 {
        return config("seeds must be >= 1");
    }
    check_grid_resolution(&grid, &cfg.eps_list, scn)?;
    let opts = AssemblyOptions {
        r_max: cfg.r_max,
        ..Default::default()
    };
    let f = cfg.rhs.as_ref().expect("resolved").sample(&grid)?;
    let g = cfg.test_functions[0].sample(&grid)?;
    let kernel = scn.effective_kernel()?;
    let ref_form = assemble_effective_form(&grid, &kernel, &cfg.cone, &params, &opts)?;
    let lebesgue = MeasureWeights::lebesgue(&grid);
    let ref_sol = solve_resolvent(
        &ResolventProblem {
            form: &ref_form,
            measure: &lebesgue,
            lambda: cfg.lambda,
            rhs: &f,
        },
        cfg.solver.tol,
        cfg.solver.max_iter,
    )?;
    let reference = Reference {
        form: ref_form,
        u: ref_sol.u,
        iterations: ref_sol.iterations,
    };
    let n_eps = cfg.eps_list.len();
    let cells = par::map_range(n_eps * cfg.seeds, |c| {
        let (ei, si) = (c / cfg.seeds, c % cfg.seeds);
        let eps = cfg.eps_list[ei];
        let seed = cell_seed(master_seed, ei, si);
        let out = sweep_cell(scn, &grid, &cfg, &params, &opts, &reference, &f, &g, eps, seed);
        let (metrics, iterations, error) = match out {
            Ok((m, it)) => (Some(m), Some(it), None),
            Err(e) => (None, None, Some(format!("eps = {eps}, seed index {si}: {e}"))),
        };
        CellRecord {
            eps_index: ei,
            eps,
            seed_index: si,
            seed,
            metrics,
            iterations,
            error,
        }
    });
    let failures = cells.iter().filter(|c| c.metrics.is_none()).count();
    if failures == cells.len() {
        return Err(Error::Numerical(format!(
            "every sweep cell failed; first: {}",
            cells[0].error.as_deref().unwrap_or("unknown")
        )));
    }
    let mut summaries = BTreeMap::new();
    for name in METRIC_NAMES {
        let mut per_eps = vec![Vec::new(); n_eps];
        for c in &cells {
            if let Some(v) = c.metrics.as_ref().and_then(|m| m.get(name)) {
                per_eps[c.eps_index].push(v);
            }
        }
        summaries.insert(name.to_string(), summarize(&cfg.eps_list, &per_eps));
    }
    Ok(ConvergenceReport {
        eps_list: cfg.eps_list.clone(),
        effective_kernel: kernel,
        reference_iterations: reference.iterations,
        cells,
        summaries,
        failures,
    })
}

/// Known value of `E^K(f,f)/E^{K≡1}(f,f)` when `K` is constant.
pub fn constant_target(k: &EffectiveKernel) -> Option<f64> {
    match k {
        EffectiveKernel::Flat { k0 } => Some(*k0),
        EffectiveKernel::AngularConstant {
            c,
            angular: crate::kernel::Angular::Uniform,
        } => Some(2.0 * c),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimate {
    /// `Ĉ`: median of the energy ratios.
    pub estimate: f64,
    pub q25: f64,
    pub q75: f64,
    pub iqr: f64,
    pub target: Option<f64>,
    /// One ratio per (seed, test function), seed-major.
    pub ratios: Vec<f64>,
    pub skipped_test_functions: Vec<usize>,
}

fn sampled_tests(grid: &Grid, test_fns: &[TestFunction]) -> Result<Vec<Vec<f64>>> {
    if test_fns.is_empty() {
        return config("at least one test function is required");
    }
    test_fns.iter().map(|t| t.sample(grid)).collect()
}

/// `Ĉ = median E^{ε,ω}(f,f) / E^{K≡1}(f,f)` over seeds and test functions.
#[allow(clippy::too_many_arguments)]
pub fn estimate_effective_constant(
    scn: &Scenario,
    grid: &Grid,
    cone: &ConeSpec,
    params: &KernelParams,
    eps: f64,
    seeds: usize,
    test_fns: &[TestFunction],
    master_seed: u64,
) -> Result<ConstantEstimate> {
    if seeds == 0 {
        return config("seeds must be >= 1");
    }
    check_grid_resolution(grid, &[eps], scn)?;
    let opts = AssemblyOptions::default();
    let fs = sampled_tests(grid, test_fns)?;
    let unit = assemble_effective_form(grid, &EffectiveKernel::Flat { k0: 1.0 }, cone, params, &opts)?;
    let mut reference = Vec::with_capacity(fs.len());
    let mut skipped = Vec::new();
    for (t, f) in fs.iter().enumerate() {
        let e = dirichlet_energy(&unit, f, f)?;
        if e == 0.0 {
            skipped.push(t);
        }
        reference.push(e);
    }
    if skipped.len() == fs.len() {
        return Err(Error::Domain("every test function has zero reference energy".into()));
    }
    let per_seed: Vec<Result<Vec<f64>>> = par::map_range(seeds, |s| {
        let (medium, _) = scn.realize(cell_seed(master_seed, 0, s))?;
        let form = assemble_form(grid, &medium, cone, params, eps, &opts)?;
        let mut out = Vec::new();
        for (f, &e1) in fs.iter().zip(&reference) {
            if e1 != 0.0 {
                out.push(dirichlet_energy(&form, f, f)? / e1);
            }
        }
        Ok(out)
    });
    let mut ratios = Vec::new();
    for r in per_seed {
        ratios.extend(r?);
    }
    let s = Summary::of(&ratios);
    Ok(ConstantEstimate {
        estimate: s.median,
        q25: s.q25,
        q75: s.q75,
        iqr: s.iqr(),
        target: constant_target(&scn.effective_kernel()?),
        ratios,
        skipped_test_functions: skipped,
    })
}

fn default_rel_threshold() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoscoThreshold {
    /// Final median must not exceed this fraction of the first.
    #[serde(default = "default_rel_threshold")]
    pub relative: f64,
    /// Medians at or below this value count as converged.
    #[serde(default)]
    pub absolute: Option<f64>,
}

impl Default for MoscoThreshold {
    fn default() -> Self {
        Self {
            relative: 0.1,
            absolute: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoscoReport {
    pub eps_list: Vec<f64>,
    /// `E^K(f,f)` per test function.
    pub limit_energies: Vec<f64>,
    /// Errors `|E^{ε,ω}(f,f) − E^K(f,f)|`: `errors[eps][seed][test]`.
    pub errors: Vec<Vec<Vec<f64>>>,
    pub summaries: Vec<EpsSummary>,
    pub decreasing: bool,
    /// Final median over first median.
    pub final_ratio: f64,
    pub threshold: MoscoThreshold,
    pub passed: bool,
}

/// Mosco criterion through `E^{ε,ω}(f,f) → E^K(f,f)` on smooth test functions.
#[allow(clippy::too_many_arguments)]
pub fn mosco_form_check(
    scn: &Scenario,
    grid: &Grid,
    cone: &ConeSpec,
    params: &KernelParams,
    eps_list: &[f64],
    seeds: usize,
    test_fns: &[TestFunction],
    threshold: &MoscoThreshold,
    master_seed: u64,
) -> Result<MoscoReport> {
    validate_eps_list(eps_list)?;
    if seeds == 0 {
        return config("seeds must be >= 1");
    }
    check_grid_resolution(grid, eps_list, scn)?;
    let opts = AssemblyOptions::default();
    let fs = sampled_tests(grid, test_fns)?;
    let limit = assemble_effective_form(grid, &scn.effective_kernel()?, cone, params, &opts)?;
    let limit_energies = fs
        .iter()
        .map(|f| dirichlet_energy(&limit, f, f))
        .collect::<Result<Vec<_>>>()?;
    let n_eps = eps_list.len();
    let flat: Vec<Result<Vec<f64>>> = par::map_range(n_eps * seeds, |c| {
        let (ei, si) = (c / seeds, c % seeds);
        let (medium, _) = scn.realize(cell_seed(master_seed, ei, si))?;
        let form = assemble_form(grid, &medium, cone, params, eps_list[ei], &opts)?;
        fs.iter()
            .zip(&limit_energies)
            .map(|(f, ek)| Ok((dirichlet_energy(&form, f, f)? - ek).abs()))
            .collect()
    });
    let mut errors = vec![Vec::with_capacity(seeds); n_eps];
    for (c, r) in flat.into_iter().enumerate() {
        errors[c / seeds].push(r?);
    }
    let pooled: Vec<Vec<f64>> = errors.iter().map(|e| e.iter().flatten().copied().collect()).collect();
    let summaries = summarize(eps_list, &pooled);
    let medians: Vec<f64> = summaries.iter().map(|s| s.median).collect();
    let floor = threshold.absolute.unwrap_or(0.0);
    let decreasing = medians.windows(2).all(|w| w[1] < w[0] || w[1] <= floor);
    let final_ratio = medians[n_eps - 1] / medians[0];
    let below = medians[n_eps - 1] <= floor || final_ratio <= threshold.relative;
    Ok(MoscoReport {
        eps_list: eps_list.to_vec(),
        limit_energies,
        errors,
        summaries,
        decreasing,
        final_ratio,
        threshold: threshold.clone(),
        passed: decreasing && below,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub eta_list: Vec<f64>,
    /// Energy of pairs with `|x − y| ≤ η`.
    pub small_jump: Vec<f64>,
    /// Energy of pairs with `|x − y| ≥ 1/η`.
    pub large_jump: Vec<f64>,
    /// Slope of `log small_jump` against `log η`.
    pub small_slope: Option<f64>,
    pub large_slope: Option<f64>,
    pub r_max: f64,
    pub passed: bool,
}

/// Small- and large-jump energies of `g` under one realisation of the ε-form.
#[allow(clippy::too_many_arguments)]
pub fn truncation_tail_report(
    scn: &Scenario,
    grid: &Grid,
    cone: &ConeSpec,
    params: &KernelParams,
    eps: f64,
    g: &TestFunction,
    eta_list: &[f64],
    master_seed: u64,
) -> Result<TailReport> {
    if eta_list.is_empty() || eta_list.iter().any(|e| !(*e > 0.0)) {
        return config("eta_list must contain positive values");
    }
    if eta_list.windows(2).any(|w| w[1] >= w[0]) {
        return config("eta_list must be strictly decreasing");
    }
    check_grid_resolution(grid, &[eps], scn)?;
    let (medium, _) = scn.realize(cell_seed(master_seed, 0, 0))?;
    let form = assemble_form(grid, &medium, cone, params, eps, &AssemblyOptions::default())?;
    let gv = g.sample(grid)?;
    let tol = 1e-9 * grid.h;
    let small: Vec<f64> = eta_list
        .iter()
        .map(|&eta| form.energy_where(&gv, &gv, |r| r <= eta + tol))
        .collect();
    let large: Vec<f64> = eta_list
        .iter()
        .map(|&eta| form.energy_where(&gv, &gv, |r| r >= 1.0 / eta - tol))
        .collect();
    let non_increasing = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0]);
    let passed = non_increasing(&small) && non_increasing(&large);
    Ok(TailReport {
        small_slope: stats::log_log_slope(eta_list, &small),
        large_slope: stats::log_log_slope(eta_list, &large),
        eta_list: eta_list.to_vec(),
        small_jump: small,
        large_jump: large,
        r_max: form.r_max,
        passed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentBoundReport {
    pub eps_list: Vec<f64>,
    pub p: f64,
    pub radius: f64,
    /// `∫_B (∫_B κ(x/ε, y/ε) dy)^p dx` per eps and seed.
    pub values: Vec<Vec<f64>>,
    pub medians: Vec<f64>,
    pub max_value: f64,
    /// Slope of `log median` against `log(1/ε)`.
    pub growth_slope: Option<f64>,
    pub growth_flagged: bool,
    pub passed: bool,
}

/// Growth threshold on the log-log slope of the moment functional.
pub const MOMENT_GROWTH_SLOPE: f64 = 0.1;

/// Grid quadrature of the local moment functional along an ε-sweep.
pub fn moment_bound_report(
    scn: &Scenario,
    grid: &Grid,
    eps_list: &[f64],
    seeds: usize,
    radius: f64,
    p: f64,
    master_seed: u64,
) -> Result<MomentBoundReport> {
    validate_eps_list(eps_list)?;
    if seeds == 0 {
        return config("seeds must be >= 1");
    }
    if !(radius > 0.0 && radius < 0.5 * grid.side) {
        return config("moment radius must lie in (0, L/2)");
    }
    if !(p >= 1.0) {
        return config("moment exponent p must be >= 1");
    }
    check_grid_resolution(grid, eps_list, scn)?;
    let ball: Vec<Vec<f64>> = (0..grid.len())
        .map(|i| grid.coords(i))
        .filter(|x| x.iter().map(|v| v * v).sum::<f64>() < radius * radius)
        .collect();
    let hd = grid.cell_volume();
    let n_eps = eps_list.len();
    let flat: Vec<Result<f64>> = par::map_range(n_eps * seeds, |c| {
        let (ei, si) = (c / seeds, c % seeds);
        let eps = eps_list[ei];
        let (medium, _) = scn.realize(cell_seed(master_seed, ei, si))?;
        let mut total = 0.0;
        for (a, x) in ball.iter().enumerate() {
            let mut inner = 0.0;
            for (b, y) in ball.iter().enumerate() {
                if a != b {
                    inner += medium.kappa(x, y, eps)?;
                }
            }
            total += (inner * hd).powf(p);
        }
        Ok(total * hd)
    });
    let mut values = vec![Vec::with_capacity(seeds); n_eps];
    for (c, v) in flat.into_iter().enumerate() {
        values[c / seeds].push(v?);
    }
    let medians: Vec<f64> = values.iter().map(|v| stats::median(v)).collect();
    let inv: Vec<f64> = eps_list.iter().map(|e| 1.0 / e).collect();
    let growth_slope = stats::log_log_slope(&inv, &medians);
    let growth_flagged = growth_slope.is_some_and(|s| s > MOMENT_GROWTH_SLOPE);
    let max_value = values.iter().flatten().copied().fold(0.0, f64::max);
    Ok(MomentBoundReport {
        eps_list: eps_list.to_vec(),
        p,
        radius,
        values,
        medians,
        max_value,
        growth_slope,
        growth_flagged,
        passed: !growth_flagged,
    })
}

/// A seed-reproducible random grid function with values in `[−½, ½)`.
pub fn random_grid_function(grid: &Grid, seed: u64) -> Vec<f64> {
    (0..grid.len()).map(|i| hash::uniform(seed, &[i as i64]) - 0.5).collect()
}
