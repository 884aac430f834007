//! Resolvent solves `(λM − A)u = Mf` by Jacobi-preconditioned conjugate
//! gradients, plus a dense Cholesky oracle for small instances.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::discrete::{dirichlet_energy, MeasureWeights, SparseSymmetricForm};
use crate::error::{config, Error, Result};
use crate::par;

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 20_000;

#[derive(Clone, Copy, Debug)]
pub struct ResolventProblem<'a> {
    pub form: &'a SparseSymmetricForm,
    pub measure: &'a MeasureWeights,
    pub lambda: f64,
    pub rhs: &'a [f64],
}

impl ResolventProblem<'_> {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return config("resolvent parameter lambda must be > 0");
        }
        let n = self.form.len();
        if self.measure.0.len() != n || self.rhs.len() != n {
            return Err(Error::Domain("measure or rhs length does not match the form".into()));
        }
        if self.measure.0.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::Domain("measure weights must be strictly positive".into()));
        }
        Ok(())
    }

    /// `y = (λM − A)x`.
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.form.apply_neg_generator(x, y);
        let (m, l) = (&self.measure.0, self.lambda);
        par::fill_indexed_with(y, |i, yi| yi + l * m[i] * x[i]);
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ResolventSolution {
    pub u: Vec<f64>,
    pub iterations: usize,
    /// `‖Mf − (λM − A)u‖_{M⁻¹} / ‖Mf‖_{M⁻¹}`.
    pub residual: f64,
    pub wall_time: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    par::sum_range(a.len(), |i| a[i] * b[i])
}

fn dual_norm(r: &[f64], m: &[f64]) -> f64 {
    par::sum_range(r.len(), |i| r[i] * r[i] / m[i]).sqrt()
}

pub fn solve_resolvent(problem: &ResolventProblem, tol: f64, max_iter: usize) -> Result<ResolventSolution> {
    problem.validate()?;
    if !(tol > 0.0 && tol <= 1e-2) {
        return config("solver tolerance must lie in (0, 1e-2]");
    }
    let start = Instant::now();
    let n = problem.form.len();
    let m = &problem.measure.0;
    let lambda = problem.lambda;
    let b: Vec<f64> = par::map_range(n, |i| m[i] * problem.rhs[i]);
    let b_norm = dual_norm(&b, m);
    let mut u = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(ResolventSolution {
            u,
            iterations: 0,
            residual: 0.0,
            wall_time: start.elapsed().as_secs_f64(),
        });
    }
    let precond: Vec<f64> = par::map_range(n, |i| 1.0 / (lambda * m[i] + problem.form.diagonal()[i].abs()));
    let mut r = b;
    let mut z: Vec<f64> = par::map_range(n, |i| precond[i] * r[i]);
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut residual = 1.0;
    for it in 1..=max_iter {
        problem.apply(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            return Err(Error::Internal(format!("non-positive curvature {pq} in conjugate gradients")));
        }
        let alpha = rz / pq;
        par::fill_indexed_with(&mut u, |i, ui| ui + alpha * p[i]);
        par::fill_indexed_with(&mut r, |i, ri| ri - alpha * q[i]);
        residual = dual_norm(&r, m) / b_norm;
        if residual <= tol {
            return Ok(ResolventSolution {
                u,
                iterations: it,
                residual,
                wall_time: start.elapsed().as_secs_f64(),
            });
        }
        z = par::map_range(n, |i| precond[i] * r[i]);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        par::fill_indexed_with(&mut p, |i, pi| z[i] + beta * pi);
    }
    Err(Error::Convergence {
        iterations: max_iter,
        residual,
    })
}

/// Direct solve of `(λM − A)u = Mf` via a dense Cholesky factorisation.
pub fn dense_oracle_solve(problem: &ResolventProblem) -> Result<Vec<f64>> {
    problem.validate()?;
    let n = problem.form.len();
    if n > 4096 {
        return config("dense oracle refused for more than 4096 nodes");
    }
    let a = problem.form.to_dense_generator()?;
    let m = &problem.measure.0;
    let mat = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { problem.lambda * m[i] } else { 0.0 };
        diag - a[i][j]
    });
    let rhs = nalgebra::DVector::from_fn(n, |i, _| m[i] * problem.rhs[i]);
    let chol = mat
        .cholesky()
        .ok_or_else(|| Error::Numerical("λM − A is not positive definite".into()))?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ContractionReport {
    /// `λ‖u‖_{L²(m)} / ‖f‖_{L²(m)}`.
    pub l2_ratio: f64,
    /// `λ‖u‖_∞ / ‖f‖_∞`.
    pub sup_ratio: f64,
    /// `|λ‖u‖² + E(u,u) − ⟨f,u⟩| / |⟨f,u⟩|`.
    pub energy_identity_error: f64,
    /// `min u` when `f ≥ 0`, else `None`.
    pub min_u_for_nonnegative_f: Option<f64>,
    pub violations: Vec<String>,
    pub passed: bool,
}

/// Checks λ-contraction in `L²(m)` and sup norm, positivity and the energy identity.
pub fn resolvent_contraction_check(problem: &ResolventProblem, solution: &ResolventSolution) -> Result<ContractionReport> {
    problem.validate()?;
    let (f, u, m) = (problem.rhs, &solution.u, problem.measure);
    let lambda = problem.lambda;
    if u.len() != f.len() {
        return Err(Error::Domain("solution length does not match the problem".into()));
    }
    const SLACK: f64 = 1e-8;
    const ENERGY_TOL: f64 = 1e-6;
    let f_l2 = m.norm(f);
    let f_sup = f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let u_l2 = m.norm(u);
    let u_sup = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else if num > 0.0 { f64::INFINITY } else { 0.0 };
    let l2_ratio = ratio(lambda * u_l2, f_l2);
    let sup_ratio = ratio(lambda * u_sup, f_sup);
    let energy = dirichlet_energy(problem.form, u, u)?;
    let fu = m.inner(f, u);
    let lhs = lambda * m.inner(u, u) + energy;
    let energy_identity_error = if fu != 0.0 {
        (lhs - fu).abs() / fu.abs()
    } else {
        lhs.abs()
    };
    let mut violations = Vec::new();
    if l2_ratio > 1.0 + SLACK {
        violations.push(format!("L2(m) contraction violated: ratio {l2_ratio}"));
    }
    if sup_ratio > 1.0 + SLACK {
        violations.push(format!("sup-norm contraction violated: ratio {sup_ratio}"));
    }
    if energy_identity_error > ENERGY_TOL {
        violations.push(format!("energy identity violated: relative error {energy_identity_error}"));
    }
    let min_u_for_nonnegative_f = f.iter().all(|v| *v >= 0.0).then(|| u.iter().copied().fold(f64::INFINITY, f64::min));
    if let Some(mu) = min_u_for_nonnegative_f {
        if mu < -SLACK * f_sup {
            violations.push(format!("positivity violated: min u = {mu}"));
        }
    }
    Ok(ContractionReport {
        l2_ratio,
        sup_ratio,
        energy_identity_error,
        min_u_for_nonnegative_f,
        passed: violations.is_empty(),
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discrete::{assemble_constant, assemble_form, measure_weights, AssemblyOptions, Grid};
    use crate::env::{Distribution, FieldSpec, MeasureSpec};
    use crate::hash;
    use crate::kernel::{CoefficientForm, ConeSpec, KernelParams};

    fn m_norm_diff(a: &[f64], b: &[f64], m: &MeasureWeights) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        m.norm(&d)
    }

    #[test]
    fn zero_kernel_and_zero_rhs() {
        let g = Grid::new(1, 8.0, 32).unwrap();
        let form = assemble_constant(&g, 0.0, &ConeSpec::full(), &KernelParams::new(1.0, 1).unwrap(), &AssemblyOptions::default())
            .unwrap();
        let m = MeasureWeights::lebesgue(&g);
        let f: Vec<f64> = (0..32).map(|i| hash::uniform(1, &[i]) - 0.3).collect();
        let p = ResolventProblem {
            form: &form,
            measure: &m,
            lambda: 2.0,
            rhs: &f,
        };
        let s = solve_resolvent(&p, DEFAULT_TOL, 100).unwrap();
        for (u, f) in s.u.iter().zip(&f) {
            assert!((u - f / 2.0).abs() < 1e-14);
        }
        let d = dense_oracle_solve(&p).unwrap();
        for (u, f) in d.iter().zip(&f) {
            assert!((u - f / 2.0).abs() < 1e-14);
        }
        let r = resolvent_contraction_check(&p, &s).unwrap();
        assert!(r.passed, "{:?}", r.violations);
        let zero = vec![0.0; 32];
        let s0 = solve_resolvent(&ResolventProblem { rhs: &zero, ..p }, DEFAULT_TOL, 100).unwrap();
        assert!(s0.u.iter().all(|v| *v == 0.0) && s0.iterations == 0);
    }

    #[test]
    fn preconditions() {
        let g = Grid::new(1, 8.0, 32).unwrap();
        let form = assemble_constant(&g, 1.0, &ConeSpec::full(), &KernelParams::new(1.0, 1).unwrap(), &AssemblyOptions::default())
            .unwrap();
        let m = MeasureWeights::lebesgue(&g);
        let f = vec![1.0; 32];
        let p = ResolventProblem {
            form: &form,
            measure: &m,
            lambda: 0.0,
            rhs: &f,
        };
        assert!(solve_resolvent(&p, DEFAULT_TOL, 100).is_err());
        assert!(dense_oracle_solve(&p).is_err());
        let p = ResolventProblem { lambda: 1.0, ..p };
        assert!(solve_resolvent(&p, 0.1, 100).is_err());
        assert!(matches!(
            solve_resolvent(&p, 1e-12, 1),
            Err(Error::Convergence { iterations: 1, .. }) | Ok(_)
        ));
    }

    #[test]
    fn cg_matches_dense_oracle_on_random_medium() {
        let g = Grid::new(1, 8.0, 64).unwrap();
        let form_spec = CoefficientForm::Product {
            nu1: FieldSpec::iid(Distribution::Uniform { low: 0.5, high: 1.5 }),
            nu2: None,
        };
        let medium = form_spec.realize(1, 7).unwrap();
        let params = KernelParams::new(1.2, 1).unwrap();
        let form = assemble_form(&g, &medium, &ConeSpec::full(), &params, 0.5, &AssemblyOptions::default()).unwrap();
        let mspec = MeasureSpec::Field {
            field: FieldSpec::iid(Distribution::Lognormal { mu: 0.0, sigma: 1.0 }),
        };
        let m = measure_weights(&g, &mspec.realize(1, 7).unwrap(), 0.5).unwrap();
        let f: Vec<f64> = (0..64).map(|i| hash::uniform(3, &[i])).collect();
        let p = ResolventProblem {
            form: &form,
            measure: &m,
            lambda: 1.0,
            rhs: &f,
        };
        let s = solve_resolvent(&p, 1e-12, 1000).unwrap();
        let d = dense_oracle_solve(&p).unwrap();
        assert!(m_norm_diff(&s.u, &d, &m) <= 1e-8 * m.norm(&d));
        let r = resolvent_contraction_check(&p, &s).unwrap();
        assert!(r.passed, "{:?}", r.violations);
        assert!(r.min_u_for_nonnegative_f.unwrap() > 0.0);
        // deterministic iterates
        let s2 = solve_resolvent(&p, 1e-12, 1000).unwrap();
        assert_eq!(s.u, s2.u);
    }
}
