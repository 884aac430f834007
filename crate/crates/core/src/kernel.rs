//! Jump kernels: the cone of admissible directions, the random coefficient
//! `κ(x, y; ω)`, the homogenized kernel `K(z)` and the Lévy exponent of the
//! limit process.

use serde::{Deserialize, Serialize};

use crate::env::{sample_field, Distribution, FieldSpec, RandomField};
use crate::error::{config, Error, Result};
use crate::hash;
use crate::quad::{self, QuadOptions};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Symmetric cone `Γ = {z : |⟨z, z0⟩| ≥ η|z|}`, or all of `ℝ^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeSpec {
    #[serde(default)]
    pub full_space: bool,
    #[serde(default)]
    pub axis: Vec<f64>,
    #[serde(default)]
    pub aperture: f64,
}

impl ConeSpec {
    pub fn full() -> Self {
        Self {
            full_space: true,
            axis: Vec::new(),
            aperture: 0.0,
        }
    }

    /// Double cone around `axis` (normalised here).
    pub fn double(axis: &[f64], aperture: f64) -> Self {
        let n = norm(axis);
        Self {
            full_space: false,
            axis: axis.iter().map(|v| v / n).collect(),
            aperture,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.full_space {
            return Ok(());
        }
        if self.axis.len() != dim {
            return config(format!("cone axis has dimension {}, expected {dim}", self.axis.len()));
        }
        let n = norm(&self.axis);
        if !(n > 0.0) || !n.is_finite() {
            return config("cone axis must be a nonzero vector");
        }
        if !(0.0..1.0).contains(&self.aperture) {
            return config("cone aperture must lie in [0, 1)");
        }
        Ok(())
    }

    fn unit_axis(&self) -> Vec<f64> {
        let n = norm(&self.axis);
        self.axis.iter().map(|v| v / n).collect()
    }

    pub fn is_full(&self) -> bool {
        self.full_space || self.aperture == 0.0
    }

    pub fn in_cone(&self, z: &[f64]) -> Result<bool> {
        let r = norm(z);
        if r == 0.0 {
            return Err(Error::Domain("z = 0 is excluded from the cone test".into()));
        }
        if self.full_space {
            return Ok(true);
        }
        let a = self.unit_axis();
        Ok(dot(z, &a).abs() >= self.aperture * r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams {
    pub alpha: f64,
    pub dim: usize,
}

impl KernelParams {
    pub fn new(alpha: f64, dim: usize) -> Result<Self> {
        let p = Self { alpha, dim };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return config(format!("alpha must lie in (0, 2) (got {})", self.alpha));
        }
        if self.dim == 0 {
            return config("dimension must be >= 1");
        }
        Ok(())
    }
}

/// Even angular profile `ρ` on the unit sphere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Angular {
    /// `ρ ≡ 1`.
    #[default]
    Uniform,
    /// `ρ(θ) = 1 + amplitude·cos²∠(θ, axis)`.
    AxisModulated { axis: Vec<f64>, amplitude: f64 },
}

impl Angular {
    pub fn half_cos_squared(axis: &[f64]) -> Self {
        Angular::AxisModulated {
            axis: axis.to_vec(),
            amplitude: 0.5,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Angular::Uniform => Ok(()),
            Angular::AxisModulated { axis, amplitude } => {
                if axis.len() != dim || !(norm(axis) > 0.0) {
                    return config("angular axis must be a nonzero vector of the grid dimension");
                }
                if !(*amplitude >= 0.0 && amplitude.is_finite()) {
                    return config("angular amplitude must be >= 0");
                }
                Ok(())
            }
        }
    }

    pub fn value(&self, z: &[f64]) -> Result<f64> {
        let r2 = dot(z, z);
        if r2 == 0.0 {
            return Err(Error::Domain("angular profile is undefined at z = 0".into()));
        }
        Ok(match self {
            Angular::Uniform => 1.0,
            Angular::AxisModulated { axis, amplitude } => {
                let c = dot(z, axis);
                1.0 + amplitude * c * c / (r2 * dot(axis, axis))
            }
        })
    }

    pub fn min(&self) -> f64 {
        1.0
    }

    pub fn max(&self) -> f64 {
        match self {
            Angular::Uniform => 1.0,
            Angular::AxisModulated { amplitude, .. } => 1.0 + amplitude,
        }
    }
}

fn default_moment_p() -> f64 {
    2.0
}

/// Form of the random coefficient `κ(x, y; ω)` as configured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientForm {
    /// `κ(x,y) = Λ(τ_x ω)ρ(θ(y−x)) + Λ(τ_y ω)ρ(θ(x−y))`.
    Summation {
        lambda: FieldSpec,
        #[serde(default)]
        angular: Angular,
        /// Declared exponent `p > 1` with `E[Λ^p] < ∞`.
        #[serde(default = "default_moment_p")]
        moment_p: f64,
    },
    /// `κ(x,y) = ν₁(τ_x ω)ν₂(τ_y ω) + ν₁(τ_y ω)ν₂(τ_x ω)`.
    ///
    /// The Dirichlet form of a product coefficient is
    /// `½∬ (f(x)−f(y))² ν₁(τ_x ω)ν₂(τ_y ω) |x−y|^{−d−α} 1_Γ dx dy`, i.e. the
    /// symmetric jump coefficient entering the form is `κ/2`. This is the
    /// normalisation under which the homogenized kernel is `E[ν₁]E[ν₂]`.
    /// `nu2 = None` uses the same field for both factors.
    Product {
        nu1: FieldSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nu2: Option<FieldSpec>,
    },
    Constant { k0: f64 },
}

impl CoefficientForm {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            CoefficientForm::Summation { lambda, angular, .. } => {
                lambda.validate()?;
                angular.validate(dim)
            }
            CoefficientForm::Product { nu1, nu2 } => {
                nu1.validate()?;
                if let Some(n2) = nu2 {
                    n2.validate()?;
                }
                Ok(())
            }
            CoefficientForm::Constant { k0 } => {
                if !(*k0 >= 0.0 && k0.is_finite()) {
                    return config("constant kernel k0 must be finite and >= 0");
                }
                Ok(())
            }
        }
    }

    /// Smallest environment cell size among the fields (∞ for constant forms).
    pub fn min_cell_size(&self) -> f64 {
        match self {
            CoefficientForm::Summation { lambda, .. } => lambda.cell_size,
            CoefficientForm::Product { nu1, nu2 } => {
                nu2.as_ref().map_or(nu1.cell_size, |n| n.cell_size.min(nu1.cell_size))
            }
            CoefficientForm::Constant { .. } => f64::INFINITY,
        }
    }

    /// True when `κ` does not depend on the environment.
    pub fn is_deterministic(&self) -> bool {
        match self {
            CoefficientForm::Summation { lambda, .. } => lambda.is_constant(),
            CoefficientForm::Product { nu1, nu2 } => nu1.is_constant() && nu2.as_ref().is_none_or(|n| n.is_constant()),
            CoefficientForm::Constant { .. } => true,
        }
    }

    /// Realises the random fields of the form for one environment seed.
    pub fn realize(&self, dim: usize, seed: u64) -> Result<Medium> {
        self.validate(dim)?;
        Ok(match self {
            CoefficientForm::Summation { lambda, angular, .. } => Medium::Summation {
                lambda: sample_field(lambda, dim, hash::derive_seed(seed, &[1]))?,
                angular: angular.clone(),
            },
            CoefficientForm::Product { nu1, nu2 } => {
                let f1 = sample_field(nu1, dim, hash::derive_seed(seed, &[2]))?;
                let f2 = match nu2 {
                    Some(spec) => sample_field(spec, dim, hash::derive_seed(seed, &[3]))?,
                    None => f1.clone(),
                };
                Medium::Product { nu1: f1, nu2: f2 }
            }
            CoefficientForm::Constant { k0 } => Medium::Constant { k0: *k0 },
        })
    }
}

/// A coefficient form with its fields realised.
#[derive(Clone, Debug)]
pub enum Medium {
    Summation { lambda: RandomField, angular: Angular },
    Product { nu1: RandomField, nu2: RandomField },
    Constant { k0: f64 },
}

impl Medium {
    /// `κ(x/ε, y/ε; ω)`.
    pub fn kappa(&self, x: &[f64], y: &[f64], eps: f64) -> Result<f64> {
        if x == y {
            return Err(Error::Domain("κ is undefined on the diagonal x = y".into()));
        }
        let xs: Vec<f64> = x.iter().map(|v| v / eps).collect();
        let ys: Vec<f64> = y.iter().map(|v| v / eps).collect();
        Ok(match self {
            Medium::Summation { lambda, angular } => {
                let zxy: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
                let zyx: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
                lambda.field_at(&xs) * angular.value(&zxy)? + lambda.field_at(&ys) * angular.value(&zyx)?
            }
            Medium::Product { nu1, nu2 } => {
                nu1.field_at(&xs) * nu2.field_at(&ys) + nu1.field_at(&ys) * nu2.field_at(&xs)
            }
            Medium::Constant { k0 } => *k0,
        })
    }
}

/// Homogenized kernel `K(z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EffectiveKernel {
    /// `K(z) = 2c·ρ(z/|z|)`.
    AngularConstant { c: f64, angular: Angular },
    Flat { k0: f64 },
}

impl EffectiveKernel {
    pub fn value(&self, z: &[f64]) -> Result<f64> {
        match self {
            EffectiveKernel::AngularConstant { c, angular } => Ok(2.0 * c * angular.value(z)?),
            EffectiveKernel::Flat { k0 } => Ok(*k0),
        }
    }

    /// Value when `K` is constant.
    pub fn flat_value(&self) -> Option<f64> {
        match self {
            EffectiveKernel::Flat { k0 } => Some(*k0),
            EffectiveKernel::AngularConstant { c, angular: Angular::Uniform } => Some(2.0 * c),
            _ => None,
        }
    }
}

/// Homogenized kernel of a coefficient form, from analytic means.
pub fn effective_kernel(form: &CoefficientForm) -> Result<EffectiveKernel> {
    Ok(match form {
        CoefficientForm::Summation { lambda, angular, .. } => EffectiveKernel::AngularConstant {
            c: lambda.mean(),
            angular: angular.clone(),
        },
        CoefficientForm::Product { nu1, nu2 } => {
            let m1 = nu1.mean();
            let m2 = nu2.as_ref().map_or(m1, |n| n.mean());
            EffectiveKernel::Flat { k0: m1 * m2 }
        }
        CoefficientForm::Constant { k0 } => EffectiveKernel::Flat { k0: *k0 },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Joint {
    Independent,
    /// `λ₁` and `λ₂` are the same random variable.
    Identical,
}

/// `C₀ = (E[λ₂])² / E[λ₂/λ₁]`.
pub fn c0_formula(lambda1: &Distribution, lambda2: &Distribution, joint: Joint) -> Result<f64> {
    lambda1.validate()?;
    lambda2.validate()?;
    let m2 = lambda2.mean();
    let ratio = match joint {
        Joint::Independent => {
            let inv = lambda1
                .moment(-1.0)
                .ok_or_else(|| Error::Config("E[1/λ₁] is infinite".into()))?;
            m2 * inv
        }
        Joint::Identical => {
            if lambda1 != lambda2 {
                return config("identical joint law requires λ₁ and λ₂ to share a marginal");
            }
            1.0
        }
    };
    if !(ratio.is_finite() && ratio > 0.0) || !m2.is_finite() {
        return config("C₀ requires finite E[λ₂] and E[λ₂/λ₁]");
    }
    Ok(m2 * m2 / ratio)
}

/// `∫₀^∞ (1 − cos t) t^{−1−α} dt`, by a power series on `[0, 1]` and a
/// rotated contour `t = 1 + is` for the oscillatory tail.
pub fn radial_constant(alpha: f64) -> Result<f64> {
    // [0, 1]: Σ_k (−1)^{k+1} / ((2k)! (2k − α))
    let mut head = 0.0;
    let mut fact = 1.0;
    for k in 1..30 {
        let two_k = 2 * k;
        fact *= ((two_k - 1) * two_k) as f64;
        let term = 1.0 / (fact * (two_k as f64 - alpha));
        head += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    // [1, ∞): 1/α − Re[i e^{i} ∫₀^∞ e^{−s} (1 + is)^{−1−α} ds]
    let opts = QuadOptions {
        rel_tol: 1e-13,
        abs_tol: 1e-15,
        max_panels: 2000,
    };
    let pow = |s: f64| num_complex::Complex64::new(1.0, s).powf(-1.0 - alpha) * (-s).exp();
    let (re, _) = quad::integrate_to_infinity(|s| pow(s).re, 0.0, opts)?;
    let (im, _) = quad::integrate_to_infinity(|s| pow(s).im, 0.0, opts)?;
    let ie = num_complex::Complex64::new(0.0, 1.0) * num_complex::Complex64::new(1f64.cos(), 1f64.sin());
    let cos_tail = (ie * num_complex::Complex64::new(re, im)).re;
    Ok(head + 1.0 / alpha - cos_tail)
}

/// Relative tolerance of the Lévy-exponent quadrature.
pub const LEVY_REL_TOL: f64 = 1e-6;

fn wrap_angle(t: f64) -> f64 {
    t.rem_euclid(2.0 * std::f64::consts::PI)
}

/// `φ(ξ) = ∫_Γ (1 − cos⟨ξ, z⟩) K(z) |z|^{−d−α} dz`, computed as
/// `|ξ|^α · C_α · ∫_{S^{d−1}∩Γ} K(θ) |⟨ξ̂, θ⟩|^α dθ` for `d ∈ {1, 2, 3}`.
pub fn levy_exponent(k: &EffectiveKernel, cone: &ConeSpec, params: &KernelParams, xi: &[f64]) -> Result<f64> {
    params.validate()?;
    cone.validate(params.dim)?;
    if xi.len() != params.dim {
        return Err(Error::Domain("ξ has the wrong dimension".into()));
    }
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("ξ must be finite".into()));
    }
    let r = norm(xi);
    if r == 0.0 {
        return Ok(0.0);
    }
    let unit: Vec<f64> = xi.iter().map(|v| v / r).collect();
    let alpha = params.alpha;
    let angular = angular_integral(k, cone, alpha, &unit)?;
    Ok(r.powf(alpha) * radial_constant(alpha)? * angular)
}

fn angular_integral(k: &EffectiveKernel, cone: &ConeSpec, alpha: f64, xi: &[f64]) -> Result<f64> {
    use std::f64::consts::PI;
    let opts = QuadOptions {
        rel_tol: LEVY_REL_TOL * 1e-2,
        abs_tol: 1e-14,
        max_panels: 4000,
    };
    let fail = |e: Error| Error::Numerical(format!("Lévy exponent angular quadrature at ξ̂ = {xi:?}: {e}"));
    let member = |t: &[f64]| cone.in_cone(t).unwrap_or(false);
    match xi.len() {
        1 => {
            let mut s = 0.0;
            for sign in [1.0, -1.0] {
                let t = [sign];
                if member(&t) {
                    s += k.value(&t)? * (xi[0] * sign).abs().powf(alpha);
                }
            }
            Ok(s)
        }
        2 => {
            let phi_xi = xi[1].atan2(xi[0]);
            let mut breaks = vec![wrap_angle(phi_xi + PI / 2.0), wrap_angle(phi_xi - PI / 2.0)];
            if !cone.is_full() {
                let a = cone.unit_axis();
                let phi0 = a[1].atan2(a[0]);
                let w = cone.aperture.acos();
                for base in [phi0, phi0 + PI] {
                    breaks.push(wrap_angle(base + w));
                    breaks.push(wrap_angle(base - w));
                }
            }
            let f = |t: f64| {
                let th = [t.cos(), t.sin()];
                if !member(&th) {
                    return 0.0;
                }
                k.value(&th).unwrap_or(0.0) * dot(&th, xi).abs().powf(alpha)
            };
            quad::integrate(f, 0.0, 2.0 * PI, &breaks, opts).map(|v| v.0).map_err(fail)
        }
        3 => {
            // frame (z0, e1, e2) with z0 the cone axis (or e3)
            let z0 = if cone.full_space { vec![0.0, 0.0, 1.0] } else { cone.unit_axis() };
            let seed = if z0[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
            let proj = dot(&seed, &z0);
            let mut e1: Vec<f64> = seed.iter().zip(&z0).map(|(s, z)| s - proj * z).collect();
            let n1 = norm(&e1);
            e1.iter_mut().for_each(|v| *v /= n1);
            let e2 = vec![
                z0[1] * e1[2] - z0[2] * e1[1],
                z0[2] * e1[0] - z0[0] * e1[2],
                z0[0] * e1[1] - z0[1] * e1[0],
            ];
            let (a, b, c) = (dot(xi, &z0), dot(xi, &e1), dot(xi, &e2));
            let rb = (b * b + c * c).sqrt();
            let beta = c.atan2(b);
            let inner = |phi: f64| -> Result<f64> {
                let (sp, cp) = phi.sin_cos();
                let mut breaks = Vec::new();
                if rb > 0.0 && sp > 0.0 {
                    let rhs = -a * cp / (sp * rb);
                    if rhs.abs() <= 1.0 {
                        let w = rhs.acos();
                        breaks.push(wrap_angle(beta + w));
                        breaks.push(wrap_angle(beta - w));
                    }
                }
                let g = |psi: f64| {
                    let (s, c2) = psi.sin_cos();
                    let th: Vec<f64> = (0..3).map(|i| cp * z0[i] + sp * (c2 * e1[i] + s * e2[i])).collect();
                    k.value(&th).unwrap_or(0.0) * dot(&th, xi).abs().powf(alpha)
                };
                Ok(sp * quad::integrate(g, 0.0, 2.0 * PI, &breaks, opts)?.0)
            };
            let mut ranges = Vec::new();
            if cone.is_full() {
                ranges.push((0.0, PI));
            } else {
                let w = cone.aperture.acos();
                ranges.push((0.0, w));
                ranges.push((PI - w, PI));
            }
            let mut total = 0.0;
            for (lo, hi) in ranges {
                let err: std::cell::RefCell<Option<Error>> = std::cell::RefCell::new(None);
                let outer = |phi: f64| match inner(phi) {
                    Ok(v) => v,
                    Err(e) => {
                        err.borrow_mut().get_or_insert(e);
                        f64::NAN
                    }
                };
                // breakpoints where the inner zero set appears or disappears
                let mut breaks = Vec::new();
                if rb > 0.0 || a != 0.0 {
                    let crit = a.abs().atan2(rb);
                    breaks.push(crit);
                    breaks.push(PI - crit);
                    breaks.push(PI / 2.0);
                }
                let r = quad::integrate(outer, lo, hi, &breaks, opts);
                if let Some(e) = err.into_inner() {
                    return Err(fail(e));
                }
                total += r.map_err(fail)?.0;
            }
            Ok(total)
        }
        d => config(format!("Lévy exponent quadrature is implemented for d <= 3 (got {d})")),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LevyBoundReport {
    /// `φ(ξ)/|ξ|^α` per sample.
    pub ratios: Vec<f64>,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub passed: bool,
}

/// Checks `φ(ξ) ≥ c|ξ|^α` on the given samples and reports the empirical `c`.
pub fn levy_lower_bound_check(
    k: &EffectiveKernel,
    cone: &ConeSpec,
    params: &KernelParams,
    xi_samples: &[Vec<f64>],
) -> Result<LevyBoundReport> {
    if xi_samples.is_empty() {
        return config("xi_samples must be nonempty");
    }
    let mut ratios = Vec::with_capacity(xi_samples.len());
    for xi in xi_samples {
        let r = norm(xi);
        if r == 0.0 {
            return Err(Error::Domain("ξ samples must be nonzero".into()));
        }
        ratios.push(levy_exponent(k, cone, params, xi)? / r.powf(params.alpha));
    }
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let max_ratio = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(LevyBoundReport {
        ratios,
        min_ratio,
        max_ratio,
        passed: min_ratio > 0.0,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MomentEntry {
    pub name: String,
    /// `None` when the moment is infinite.
    pub value: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MomentReport {
    pub entries: Vec<MomentEntry>,
    pub passed: bool,
}

/// Analytic check of the moment conditions for the form's bounds.
pub fn moment_check(form: &CoefficientForm) -> MomentReport {
    let mut entries = Vec::new();
    let mut ok = true;
    let mut push = |name: String, value: Option<f64>| {
        ok &= value.is_some_and(f64::is_finite);
        entries.push(MomentEntry { name, value });
    };
    match form {
        CoefficientForm::Summation {
            lambda,
            angular,
            moment_p,
        } => {
            // Λ₁ = ρ_min Λ, Λ₂ = ρ_max Λ
            push("E[Λ₁^-1]".into(), lambda.moment(-1.0).map(|m| m / angular.min()));
            let p = *moment_p;
            if p > 1.0 {
                push(format!("E[Λ₂^{p}]"), lambda.moment(p).map(|m| m * angular.max().powf(p)));
            } else {
                push(format!("declared p = {p} must exceed 1"), None);
            }
        }
        CoefficientForm::Product { nu1, nu2 } => match nu2 {
            None => {
                push("E[(ν₁ν₂)^-1/2]".into(), nu1.moment(-1.0));
                push("E[(ν₁+ν₂)^2]".into(), nu1.moment(2.0).map(|m| 4.0 * m));
            }
            Some(n2) => {
                push(
                    "E[(ν₁ν₂)^-1/2]".into(),
                    nu1.moment(-0.5).zip(n2.moment(-0.5)).map(|(a, b)| a * b),
                );
                let sq = nu1
                    .moment(2.0)
                    .zip(n2.moment(2.0))
                    .map(|(a, b)| a + b + 2.0 * nu1.mean() * n2.mean());
                push("E[(ν₁+ν₂)^2]".into(), sq);
            }
        },
        CoefficientForm::Constant { k0 } => push("K0".into(), Some(*k0)),
    }
    MomentReport { entries, passed: ok }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Mixing;
    use std::f64::consts::PI;

    fn constant_field(v: f64) -> FieldSpec {
        FieldSpec::iid(Distribution::Constant { value: v })
    }

    #[test]
    fn cone_membership() {
        let e1 = ConeSpec::double(&[1.0, 0.0], 0.5);
        assert!(e1.in_cone(&[1.0, 0.0]).unwrap());
        assert!(!e1.in_cone(&[0.0, 1.0]).unwrap());
        assert!(e1.in_cone(&[-1.0, 0.2]).unwrap());
        let flat = ConeSpec::double(&[0.0, 1.0], 0.0);
        assert!(flat.in_cone(&[3.0, 0.0]).unwrap());
        assert!(matches!(e1.in_cone(&[0.0, 0.0]), Err(Error::Domain(_))));
        assert!(ConeSpec::double(&[1.0, 0.0], 1.0).validate(2).is_err());
    }

    #[test]
    fn kappa_examples() {
        let m = CoefficientForm::Summation {
            lambda: constant_field(1.0),
            angular: Angular::Uniform,
            moment_p: 2.0,
        }
        .realize(1, 0)
        .unwrap();
        assert_eq!(m.kappa(&[0.3], &[-1.0], 0.5).unwrap(), 2.0);
        let p = CoefficientForm::Product {
            nu1: constant_field(2.0),
            nu2: Some(constant_field(3.0)),
        }
        .realize(2, 0)
        .unwrap();
        assert_eq!(p.kappa(&[0.0, 0.0], &[1.0, 1.0], 1.0).unwrap(), 12.0);
        assert!(matches!(p.kappa(&[1.0, 1.0], &[1.0, 1.0], 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn effective_kernel_examples() {
        let p = CoefficientForm::Product {
            nu1: constant_field(2.0),
            nu2: Some(constant_field(3.0)),
        };
        assert_eq!(effective_kernel(&p).unwrap(), EffectiveKernel::Flat { k0: 6.0 });
        let s = CoefficientForm::Summation {
            lambda: constant_field(1.0),
            angular: Angular::Uniform,
            moment_p: 2.0,
        };
        assert_eq!(effective_kernel(&s).unwrap().value(&[0.4, -2.0]).unwrap(), 2.0);
        assert_eq!(
            effective_kernel(&CoefficientForm::Constant { k0: 5.0 }).unwrap(),
            EffectiveKernel::Flat { k0: 5.0 }
        );
    }

    #[test]
    fn effective_kernel_is_even_and_scale_free() {
        let k = EffectiveKernel::AngularConstant {
            c: 0.7,
            angular: Angular::half_cos_squared(&[1.0, 1.0]),
        };
        for z in [[0.3, -1.1], [2.0, 0.5], [-0.1, 0.0]] {
            let neg = [-z[0], -z[1]];
            let big = [3.5 * z[0], 3.5 * z[1]];
            assert_eq!(k.value(&z).unwrap(), k.value(&neg).unwrap());
            assert!((k.value(&z).unwrap() - k.value(&big).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn c0_examples() {
        let c = Distribution::Constant { value: 1.7 };
        assert!((c0_formula(&c, &c, Joint::Independent).unwrap() - 1.7 * 1.7).abs() < 1e-14);
        let one = Distribution::Constant { value: 1.0 };
        let l1 = Distribution::ReciprocalUniform { low: 1.0, high: 3.0 };
        assert!((c0_formula(&l1, &one, Joint::Independent).unwrap() - 0.5).abs() < 1e-15);
        let ln = Distribution::Lognormal { mu: 0.2, sigma: 0.9 };
        let m = ln.mean();
        assert!((c0_formula(&ln, &ln, Joint::Identical).unwrap() - m * m).abs() < 1e-14);
        let u0 = Distribution::Uniform { low: 0.0, high: 1.0 };
        assert!(c0_formula(&u0, &one, Joint::Independent).is_err());
    }

    #[test]
    fn radial_constant_matches_closed_form() {
        // π / (2 Γ(1+α) sin(πα/2))
        for alpha in [0.3, 0.5, 1.0, 1.5, 1.9] {
            let exact = PI / (2.0 * statrs::function::gamma::gamma(1.0 + alpha) * (PI * alpha / 2.0).sin());
            let v = radial_constant(alpha).unwrap();
            assert!((v / exact - 1.0).abs() < 1e-10, "alpha {alpha}: {v} vs {exact}");
        }
    }

    #[test]
    fn levy_exponent_one_dimensional() {
        let p = KernelParams::new(1.0, 1).unwrap();
        let k = EffectiveKernel::Flat { k0: 1.0 };
        for xi in [0.1, 1.0, -2.5] {
            let v = levy_exponent(&k, &ConeSpec::full(), &p, &[xi]).unwrap();
            assert!((v / (PI * xi.abs()) - 1.0).abs() < 1e-8);
        }
        assert_eq!(levy_exponent(&k, &ConeSpec::full(), &p, &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn levy_exponent_two_dimensional_full_space() {
        // ∫_{S¹} |cos θ|^α dθ = 2√π Γ((α+1)/2)/Γ(α/2+1)
        let g = statrs::function::gamma::gamma;
        for alpha in [0.5, 1.5] {
            let p = KernelParams::new(alpha, 2).unwrap();
            let v = levy_exponent(&EffectiveKernel::Flat { k0: 1.0 }, &ConeSpec::full(), &p, &[0.6, 0.8]).unwrap();
            let ang = 2.0 * PI.sqrt() * g((alpha + 1.0) / 2.0) / g(alpha / 2.0 + 1.0);
            let exact = ang * radial_constant(alpha).unwrap();
            assert!((v / exact - 1.0).abs() < 1e-7, "{v} {exact}");
        }
    }

    #[test]
    fn levy_exponent_three_dimensional_full_space() {
        // ∫_{S²} |cos θ|^α dσ = 4π/(α+1)
        let alpha = 1.2;
        let p = KernelParams::new(alpha, 3).unwrap();
        let v = levy_exponent(&EffectiveKernel::Flat { k0: 1.0 }, &ConeSpec::full(), &p, &[0.3, -0.4, 1.2]).unwrap();
        let r = (0.09f64 + 0.16 + 1.44).sqrt();
        let exact = r.powf(alpha) * 4.0 * PI / (alpha + 1.0) * radial_constant(alpha).unwrap();
        assert!((v / exact - 1.0).abs() < 1e-6, "{v} {exact}");
    }

    #[test]
    fn levy_exponent_is_homogeneous() {
        let k = EffectiveKernel::AngularConstant {
            c: 1.0,
            angular: Angular::half_cos_squared(&[0.0, 1.0]),
        };
        let cone = ConeSpec::double(&[1.0, 1.0], 0.4);
        let p = KernelParams::new(0.7, 2).unwrap();
        let a = levy_exponent(&k, &cone, &p, &[0.4, -1.3]).unwrap();
        let b = levy_exponent(&k, &cone, &p, &[0.8, -2.6]).unwrap();
        assert!((b / (2f64.powf(0.7) * a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lower_bound_shrinks_with_aperture() {
        let k = EffectiveKernel::Flat { k0: 1.0 };
        let p = KernelParams::new(1.0, 2).unwrap();
        let dirs: Vec<Vec<f64>> = (0..64)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / 64.0;
                vec![t.cos(), t.sin()]
            })
            .collect();
        let narrow = levy_lower_bound_check(&k, &ConeSpec::double(&[1.0, 0.0], 0.8), &p, &dirs).unwrap();
        let wide = levy_lower_bound_check(&k, &ConeSpec::double(&[1.0, 0.0], 0.5), &p, &dirs).unwrap();
        let full = levy_lower_bound_check(&k, &ConeSpec::full(), &p, &dirs).unwrap();
        assert!(wide.passed && narrow.passed);
        assert!(narrow.min_ratio < wide.min_ratio && wide.min_ratio < full.min_ratio);
        assert!((full.max_ratio / full.min_ratio - 1.0).abs() < 1e-8);
    }

    #[test]
    fn moment_examples() {
        let ln = CoefficientForm::Summation {
            lambda: FieldSpec::iid(Distribution::Lognormal { mu: 0.0, sigma: 1.0 }),
            angular: Angular::Uniform,
            moment_p: 2.0,
        };
        assert!(moment_check(&ln).passed);
        let u01 = FieldSpec::iid(Distribution::Uniform { low: 0.0, high: 1.0 });
        let prod = CoefficientForm::Product {
            nu1: u01.clone(),
            nu2: Some(u01),
        };
        let r = moment_check(&prod);
        assert!(r.passed);
        assert!((r.entries[0].value.unwrap() - 4.0).abs() < 1e-14);
        let pareto = CoefficientForm::Summation {
            lambda: FieldSpec::iid(Distribution::ShiftedPareto {
                x_min: 1.0,
                tail_index: 1.5,
            })
            .with_mixing(Mixing::IidCells),
            angular: Angular::Uniform,
            moment_p: 2.0,
        };
        assert!(!moment_check(&pareto).passed);
    }
}
