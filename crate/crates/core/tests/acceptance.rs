//! Acceptance suite: one pass/fail line per criterion, non-zero exit on any failure.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use nlhomog::discrete::{
    assemble_form, cone_comparability_check, measure_weights, nash_check, translation_estimate_check,
    AssemblyOptions, Grid, GridSpec, TestFunction,
};
use nlhomog::env::{
    birkhoff_average, empirical_covariance, maximal_tail_check, sample_field, BoxRegion, Distribution, FieldSpec,
    MeasureSpec, Mixing, MixingSpec,
};
use nlhomog::hash::{derive_seed, uniform};
use nlhomog::homogenize::{
    estimate_effective_constant, moment_bound_report, mosco_form_check, run_sweep, MoscoThreshold, Scenario,
    SolverSettings, SweepConfig, METRIC_NAMES,
};
use nlhomog::kernel::{levy_exponent, Angular, CoefficientForm, ConeSpec, EffectiveKernel, KernelParams};
use nlhomog::solver::{dense_oracle_solve, resolvent_contraction_check, solve_resolvent, ResolventProblem};
use nlhomog::stats;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn uniform_half() -> FieldSpec {
    FieldSpec::iid(Distribution::Uniform { low: 0.5, high: 1.5 })
}

fn product_form() -> CoefficientForm {
    CoefficientForm::Product {
        nu1: uniform_half(),
        nu2: Some(uniform_half()),
    }
}

fn bumps(dim: usize) -> Vec<TestFunction> {
    let c = |v: f64| {
        let mut x = vec![0.0; dim];
        x[0] = v;
        x
    };
    vec![
        TestFunction::bump(c(0.0), 1.0, 1.0),
        TestFunction::bump(c(0.5), 1.5, 1.0),
        TestFunction::bump(c(-0.3), 0.8, 2.0),
    ]
}

fn sweep_config(form: CoefficientForm, n: usize, eps_list: Vec<f64>, seeds: usize, alpha: f64) -> SweepConfig {
    SweepConfig {
        grid: GridSpec { dim: 1, side: 8.0, n },
        form,
        measure: MeasureSpec::Lebesgue,
        cone: ConeSpec::full(),
        alpha,
        lambda: 1.0,
        rhs: None,
        eps_list,
        seeds,
        radius: None,
        test_functions: Vec::new(),
        r_max: None,
        solver: SolverSettings::default(),
    }
}

const SWEEP_EPS: [f64; 5] = [1.0, 0.5, 0.25, 0.125, 0.0625];

fn fmt_list(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn constant_identity() -> nlhomog::Result<Outcome> {
    let mut worst: f64 = 0.0;
    for alpha in [0.5, 1.0, 1.5] {
        let cfg = sweep_config(CoefficientForm::Constant { k0: 1.0 }, 128, SWEEP_EPS.to_vec(), 3, alpha);
        let r = run_sweep(&cfg, 1)?;
        for c in &r.cells {
            let m = c.metrics.ok_or_else(|| nlhomog::Error::Internal("cell failed".into()))?;
            for name in METRIC_NAMES {
                worst = worst.max(m.get(name).unwrap());
            }
        }
    }
    Ok(outcome(worst <= 1e-6, format!("max metric {worst:.3e} (<= 1e-6)")))
}

fn decay_criterion(form: CoefficientForm, threshold: f64) -> nlhomog::Result<Outcome> {
    let cfg = sweep_config(form, 512, SWEEP_EPS.to_vec(), 10, 1.0);
    let r = run_sweep(&cfg, 2024)?;
    let medians = r.medians("err_L2_mu");
    let decreasing = r.strictly_decreasing("err_L2_mu");
    let ratio = r.decay_ratio("err_L2_mu");
    Ok(outcome(
        decreasing && ratio <= threshold && r.failures == 0,
        format!(
            "medians {}; strictly decreasing: {decreasing}; final/initial {ratio:.3} (<= {threshold})",
            fmt_list(&medians)
        ),
    ))
}

fn product_reproduction() -> nlhomog::Result<Outcome> {
    decay_criterion(product_form(), 0.15)
}

fn summation_reproduction() -> nlhomog::Result<Outcome> {
    let form = CoefficientForm::Summation {
        lambda: FieldSpec::iid(Distribution::lognormal_mean_one(0.5)),
        angular: Angular::Uniform,
        moment_p: 2.0,
    };
    decay_criterion(form, 0.15)
}

fn example_constant() -> nlhomog::Result<Outcome> {
    // λ₁ = 1/W with W ~ U(1, 3), so E[1/λ₁] = 2 exactly; λ₂ ≡ 1
    let l1 = FieldSpec::iid(Distribution::ReciprocalUniform { low: 1.0, high: 3.0 });
    let l2 = FieldSpec::iid(Distribution::Constant { value: 1.0 });
    let (scn, c0) = Scenario::time_change(1, l1, l2)?;
    let grid = Grid::new(1, 8.0, 512)?;
    let params = KernelParams::new(1.0, 1)?;
    let est = estimate_effective_constant(&scn, &grid, &ConeSpec::full(), &params, 0.0625, 20, &bumps(1), 17)?;
    let dev = (est.estimate - 0.5).abs();
    Ok(outcome(
        dev <= 0.1 && (c0 - 0.5).abs() < 1e-15,
        format!("C0 = {c0}, estimate {:.6} (IQR {:.2e}), |dev| {dev:.2e} (<= 0.1)", est.estimate, est.iqr),
    ))
}

fn levy_oracle() -> nlhomog::Result<Outcome> {
    let k = EffectiveKernel::Flat { k0: 1.0 };
    let full = ConeSpec::full();
    let p1 = KernelParams::new(1.0, 1)?;
    let mut worst_oracle: f64 = 0.0;
    for i in 0..10 {
        let xi = -5.0 + 1.1 * i as f64 + 0.05;
        let phi = levy_exponent(&k, &full, &p1, &[xi])?;
        worst_oracle = worst_oracle.max((phi / (PI * xi.abs()) - 1.0).abs());
    }
    let mut worst_hom: f64 = 0.0;
    for alpha in [0.5, 1.5] {
        let p = KernelParams::new(alpha, 1)?;
        for (xi, t) in [(0.7, 2.0), (1.3, 0.25), (-2.0, 3.5)] {
            let a = levy_exponent(&k, &full, &p, &[t * xi])?;
            let b = levy_exponent(&k, &full, &p, &[xi])?;
            worst_hom = worst_hom.max((a / (t.powf(alpha) * b) - 1.0).abs());
        }
    }
    Ok(outcome(
        worst_oracle <= 1e-4 && worst_hom <= 1e-5,
        format!("max rel err vs π|ξ| {worst_oracle:.2e} (<= 1e-4); homogeneity {worst_hom:.2e} (<= 1e-5)"),
    ))
}

fn functional_inequalities() -> nlhomog::Result<Outcome> {
    // Nash: finite ratios, exact invariance under f -> 2f
    let g1 = Grid::new(1, 8.0, 256)?;
    let p1 = KernelParams::new(1.0, 1)?;
    let fs: Vec<Vec<f64>> = bumps(1).iter().map(|t| t.sample(&g1)).collect::<Result<_, _>>()?;
    let doubled: Vec<Vec<f64>> = fs.iter().map(|f| f.iter().map(|v| 2.0 * v).collect()).collect();
    let a = nash_check(&g1, &ConeSpec::full(), &p1, &fs)?;
    let b = nash_check(&g1, &ConeSpec::full(), &p1, &doubled)?;
    let nash_inv = a
        .ratios
        .iter()
        .zip(&b.ratios)
        .map(|(x, y)| (x.unwrap() / y.unwrap() - 1.0).abs())
        .fold(0.0, f64::max);
    let nash_ok = a.passed && b.passed && nash_inv <= 1e-12;

    // cone comparability, η = 0.5, d = 2
    let g2 = Grid::new(2, 4.0, 32)?;
    let p2 = KernelParams::new(1.0, 2)?;
    let f2: Vec<Vec<f64>> = bumps(2).iter().map(|t| t.sample(&g2)).collect::<Result<_, _>>()?;
    let cone = cone_comparability_check(&g2, &ConeSpec::double(&[1.0, 0.0], 0.5), &p2, &f2)?;

    // translation estimate on a resolvent solution of the random problem
    let alpha = 1.0;
    let grid = Grid::new(1, 8.0, 512)?;
    let medium = product_form().realize(1, 5)?;
    let form = assemble_form(&grid, &medium, &ConeSpec::full(), &p1, 0.25, &AssemblyOptions::default())?;
    let m = measure_weights(&grid, &nlhomog::env::MeasureField::Lebesgue, 0.25)?;
    let f = bumps(1)[0].sample(&grid)?;
    let sol = solve_resolvent(
        &ResolventProblem {
            form: &form,
            measure: &m,
            lambda: 1.0,
            rhs: &f,
        },
        1e-10,
        10_000,
    )?;
    let tr = translation_estimate_check(&form, &sol.u, &[1, 2, 4], 1.0, alpha)?;
    let exponent = tr.fitted_exponent.unwrap_or(f64::NAN);
    let tr_ok = exponent >= alpha / 2.0 - 0.2 && !tr.violation;
    Ok(outcome(
        nash_ok && cone.passed && tr_ok,
        format!(
            "nash max c0 {:.3e}, invariance {nash_inv:.1e}; cone max ratio {:.3}; translation exponent {exponent:.3} (>= {})",
            a.max_ratio,
            cone.max_ratio,
            alpha / 2.0 - 0.2
        ),
    ))
}

fn ergodic_suite() -> nlhomog::Result<Outcome> {
    let families = [
        ("iid uniform", uniform_half(), 1.0),
        (
            "moving-average lognormal",
            FieldSpec::iid(Distribution::lognormal_mean_one(0.5)).with_mixing(Mixing::MovingAverage { decay_exponent: 2.0 }),
            1.0,
        ),
    ];
    let region = BoxRegion::unit(2);
    let mut worst: f64 = 0.0;
    for (_, spec, mean) in &families {
        let avgs: Vec<f64> = (0..20)
            .map(|s| {
                let field = sample_field(spec, 2, derive_seed(99, &[s]))?;
                birkhoff_average(&field, 1.0 / 64.0, &region, |_| 1.0)
            })
            .collect::<Result<_, _>>()?;
        worst = worst.max((stats::median(&avgs) / mean - 1.0).abs());
    }
    let birkhoff_ok = worst <= 0.05;

    let spec = uniform_half();
    let mut cov_worst: f64 = 0.0;
    for lag in [1.5, 2.5, 4.0] {
        let c = empirical_covariance(
            &spec,
            1,
            &Angular::Uniform,
            &[1.0],
            &[1.0],
            &[lag],
            &MixingSpec::default(),
            4000,
            (lag * 10.0) as u64,
        )?;
        cov_worst = cov_worst.max(c.estimate.abs() / c.std_error);
    }
    let cov_ok = cov_worst <= 3.0;

    let tail = maximal_tail_check(&FieldSpec::iid(Distribution::lognormal_mean_one(1.0)), 1, &[0.5, 0.25, 0.125], 1.0, 400, 7)?;
    Ok(outcome(
        birkhoff_ok && cov_ok && tail.passed,
        format!(
            "birkhoff max rel dev {worst:.3e} (<= 0.05); covariance max |cov|/SE {cov_worst:.2} (<= 3); maximal tail P(>2)={:.3}, P(>8)={:.3} <= {:.3}",
            tail.exceed_low, tail.exceed_high, tail.predicted_high
        ),
    ))
}

fn solver_oracles() -> nlhomog::Result<Outcome> {
    let mut worst_agree: f64 = 0.0;
    let mut worst_energy: f64 = 0.0;
    let mut worst_row: f64 = 0.0;
    let mut contraction = true;
    for t in 0..20u64 {
        let u = |k: i64| uniform(0xACCE, &[t as i64, k]);
        let dim = if t % 4 == 3 { 2 } else { 1 };
        let alpha = 0.3 + 1.5 * u(0);
        let lambda = 0.2 + 2.0 * u(1);
        let (grid, eps) = if dim == 1 {
            (Grid::new(1, 8.0, [64, 128, 256][t as usize % 3])?, 1.0)
        } else {
            (Grid::new(2, 4.0, 24)?, 1.0)
        };
        let form_spec = match t % 3 {
            0 => product_form(),
            1 => CoefficientForm::Summation {
                lambda: FieldSpec::iid(Distribution::lognormal_mean_one(0.8)),
                angular: if dim == 2 {
                    Angular::half_cos_squared(&[1.0, 0.5])
                } else {
                    Angular::Uniform
                },
                moment_p: 2.0,
            },
            _ => CoefficientForm::Product {
                nu1: FieldSpec::iid(Distribution::ExpAbsGauss { s: 0.7 }),
                nu2: None,
            },
        };
        let cone = if dim == 2 && t % 2 == 1 {
            ConeSpec::double(&[1.0, 1.0], 0.5)
        } else {
            ConeSpec::full()
        };
        let params = KernelParams::new(alpha, dim)?;
        let medium = form_spec.realize(dim, t)?;
        let form = assemble_form(&grid, &medium, &cone, &params, eps, &AssemblyOptions::default())?;
        let mspec = MeasureSpec::Field {
            field: FieldSpec::iid(Distribution::lognormal_mean_one(1.0)),
        };
        let m = measure_weights(&grid, &mspec.realize(dim, t)?, eps)?;
        let f: Vec<f64> = (0..grid.len()).map(|i| uniform(t, &[i as i64]) - 0.3).collect();
        let problem = ResolventProblem {
            form: &form,
            measure: &m,
            lambda,
            rhs: &f,
        };
        let sol = solve_resolvent(&problem, 1e-13, 20_000)?;
        let dense = dense_oracle_solve(&problem)?;
        let diff: Vec<f64> = sol.u.iter().zip(&dense).map(|(a, b)| a - b).collect();
        worst_agree = worst_agree.max(m.norm(&diff) / m.norm(&dense));
        let report = resolvent_contraction_check(&problem, &sol)?;
        contraction &= report.passed;
        worst_energy = worst_energy.max(report.energy_identity_error);
        let a = form.to_dense_generator()?;
        for (i, row) in a.iter().enumerate() {
            let s: f64 = row.iter().sum();
            worst_row = worst_row.max(s.abs() / row[i].abs());
        }
    }
    Ok(outcome(
        worst_agree <= 1e-8 && worst_energy <= 1e-6 && worst_row <= 1e-12 && contraction,
        format!(
            "sparse vs dense {worst_agree:.2e} (<= 1e-8); energy identity {worst_energy:.2e} (<= 1e-6); row sums {worst_row:.2e} (<= 1e-12); contraction on all: {contraction}"
        ),
    ))
}

fn mosco_criterion() -> nlhomog::Result<Outcome> {
    let scn = Scenario::new(1, product_form(), MeasureSpec::Lebesgue)?;
    let grid = Grid::new(1, 8.0, 512)?;
    let params = KernelParams::new(1.0, 1)?;
    let r = mosco_form_check(
        &scn,
        &grid,
        &ConeSpec::full(),
        &params,
        &SWEEP_EPS,
        10,
        &bumps(1),
        &MoscoThreshold::default(),
        2024,
    )?;
    let medians: Vec<f64> = r.summaries.iter().map(|s| s.median).collect();
    Ok(outcome(
        r.passed,
        format!(
            "medians {}; decreasing: {}; final/initial {:.3} (<= 0.1)",
            fmt_list(&medians),
            r.decreasing,
            r.final_ratio
        ),
    ))
}

fn negative_control() -> nlhomog::Result<Outcome> {
    let grid = Grid::new(1, 8.0, 1024)?;
    let eps = [1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125];
    let summation = |marginal: Distribution| {
        Scenario::new(
            1,
            CoefficientForm::Summation {
                lambda: FieldSpec::iid(marginal),
                angular: Angular::Uniform,
                moment_p: 2.0,
            },
            MeasureSpec::Lebesgue,
        )
    };
    let pareto = summation(Distribution::ShiftedPareto {
        x_min: 1.0,
        tail_index: 1.2,
    })?;
    let lognormal = summation(Distribution::lognormal_mean_one(0.5))?;
    let bad = moment_bound_report(&pareto, &grid, &eps, 10, 1.0, 2.0, 31)?;
    let good = moment_bound_report(&lognormal, &grid, &eps, 10, 1.0, 2.0, 31)?;
    Ok(outcome(
        bad.growth_flagged && good.passed,
        format!(
            "pareto slope {:.3} flagged: {}; lognormal slope {:.3} passed: {}",
            bad.growth_slope.unwrap_or(f64::NAN),
            bad.growth_flagged,
            good.growth_slope.unwrap_or(f64::NAN),
            good.passed
        ),
    ))
}

type Criterion = (&'static str, Duration, fn() -> nlhomog::Result<Outcome>);

fn main() {
    let criteria: [Criterion; 10] = [
        ("1 constant-coefficient identity", Duration::from_secs(60), constant_identity),
        ("2 product-form reproduction", Duration::from_secs(600), product_reproduction),
        ("3 summation-form reproduction", Duration::from_secs(600), summation_reproduction),
        ("4 two-field example constant", Duration::from_secs(600), example_constant),
        ("5 Lévy exponent oracle", Duration::from_secs(10), levy_oracle),
        ("6 functional inequalities", Duration::from_secs(120), functional_inequalities),
        ("7 ergodic suite", Duration::from_secs(300), ergodic_suite),
        ("8 solver and assembly oracles", Duration::from_secs(120), solver_oracles),
        ("9 Mosco criterion", Duration::from_secs(300), mosco_criterion),
        ("10 moment negative control", Duration::from_secs(120), negative_control),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, budget, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let (passed, detail) = match result {
            Ok(o) => (o.passed && elapsed <= budget, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !passed {
            failed += 1;
        }
        println!(
            "criterion {name}: {} [{:.1}s / {}s] {detail}",
            if passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
