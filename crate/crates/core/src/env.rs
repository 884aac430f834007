//! Stationary ergodic random environments.
//!
//! A [`RandomField`] plays the role of `x ↦ F(τ_x ω)`: a scalar field on
//! `ℝ^d` that is a pure function of `(seed, x)`. Two constructions are built
//! in:
//!
//! * `iid_cells`: the space is tiled by cubes of side `cell_size`, shifted by
//!   a uniform offset `U` drawn from the seed; each cube carries an
//!   independent draw from the marginal.
//! * `moving_average`: each cube carries a standard Gaussian, the field is a
//!   weighted sum over a window of radius 8 cubes with weights
//!   `(1+|k|)^{-q}`, and the sum is mapped to the marginal through its
//!   Gaussian copula. Correlations decay polynomially up to the window edge.
//!
//! Neither is "the" probability space of the theory; both are stationary
//! (thanks to the uniform shift) and ergodic, which is all the homogenization
//! results require.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{config, Error, Result};
use crate::hash;
use crate::kernel::Angular;
use crate::par;
use crate::stats;

/// Window radius of the moving-average construction, in cells.
pub const MOVING_AVERAGE_RADIUS: i64 = 8;

/// Default truncation level `n` in `ν_n = ν ∧ n`.
pub const DEFAULT_TRUNCATION: f64 = 1e3;

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile.
pub fn normal_quantile(u: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
}

/// Marginal law of a random field. All built-in kinds are strictly positive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Distribution {
    Constant { value: f64 },
    Uniform { low: f64, high: f64 },
    /// `exp(mu + sigma·G)`, `G` standard normal.
    Lognormal { mu: f64, sigma: f64 },
    /// `exp(-s·|G|)`, `G` standard normal.
    ExpAbsGauss { s: f64 },
    /// Pareto type I on `[x_min, ∞)` with `P(V > v) = (x_min / v)^tail_index`.
    ShiftedPareto { x_min: f64, tail_index: f64 },
    /// `1 / W` with `W` uniform on `[low, high]`.
    ReciprocalUniform { low: f64, high: f64 },
}

/// Moment `E[W^p]` of `W ~ U(a, b)`, `0 ≤ a < b`; `None` when infinite.
fn uniform_moment(a: f64, b: f64, p: f64) -> Option<f64> {
    if a == 0.0 && p <= -1.0 {
        return None;
    }
    if p == 0.0 {
        return Some(1.0);
    }
    if p == -1.0 {
        return Some((b / a).ln() / (b - a));
    }
    Some((b.powf(p + 1.0) - a.powf(p + 1.0)) / ((p + 1.0) * (b - a)))
}

impl Distribution {
    /// Mean of a lognormal normalised to `E[V] = 1`.
    pub fn lognormal_mean_one(sigma: f64) -> Self {
        Distribution::Lognormal {
            mu: -0.5 * sigma * sigma,
            sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64, name: &str| -> Result<()> {
            if v.is_finite() {
                Ok(())
            } else {
                config(format!("{name} must be finite"))
            }
        };
        match *self {
            Distribution::Constant { value } => {
                finite(value, "constant value")?;
                if value <= 0.0 {
                    return config("constant value must be > 0");
                }
            }
            Distribution::Uniform { low, high } => {
                finite(low, "uniform low")?;
                finite(high, "uniform high")?;
                if low < 0.0 || low >= high {
                    return config(format!("uniform requires 0 <= low < high (got {low}, {high})"));
                }
            }
            Distribution::Lognormal { mu, sigma } => {
                finite(mu, "lognormal mu")?;
                finite(sigma, "lognormal sigma")?;
                if sigma < 0.0 {
                    return config("lognormal sigma must be >= 0");
                }
            }
            Distribution::ExpAbsGauss { s } => {
                finite(s, "exp_abs_gauss s")?;
                if s < 0.0 {
                    return config("exp_abs_gauss s must be >= 0");
                }
            }
            Distribution::ShiftedPareto { x_min, tail_index } => {
                finite(x_min, "pareto x_min")?;
                finite(tail_index, "pareto tail_index")?;
                if x_min <= 0.0 {
                    return config("pareto x_min must be > 0");
                }
                if tail_index <= 1.0 {
                    return config("pareto tail_index must be > 1 for a finite mean");
                }
            }
            Distribution::ReciprocalUniform { low, high } => {
                finite(low, "reciprocal_uniform low")?;
                finite(high, "reciprocal_uniform high")?;
                if low <= 0.0 || low >= high {
                    return config("reciprocal_uniform requires 0 < low < high");
                }
            }
        }
        Ok(())
    }

    /// `E[V^p]` for any real `p`; `None` when the moment is infinite.
    pub fn moment(&self, p: f64) -> Option<f64> {
        match *self {
            Distribution::Constant { value } => Some(value.powf(p)),
            Distribution::Uniform { low, high } => uniform_moment(low, high, p),
            Distribution::Lognormal { mu, sigma } => Some((p * mu + 0.5 * p * p * sigma * sigma).exp()),
            Distribution::ExpAbsGauss { s } => {
                // E[exp(-p s |G|)] = 2 exp(p²s²/2) Φ(-p s)
                let t = p * s;
                Some(2.0 * (0.5 * t * t).exp() * normal_cdf(-t))
            }
            Distribution::ShiftedPareto { x_min, tail_index } => {
                if p < tail_index {
                    Some(tail_index * x_min.powf(p) / (tail_index - p))
                } else {
                    None
                }
            }
            Distribution::ReciprocalUniform { low, high } => uniform_moment(low, high, -p),
        }
    }

    pub fn mean(&self) -> f64 {
        self.moment(1.0).expect("validated marginals have finite means")
    }

    pub fn variance(&self) -> Option<f64> {
        self.moment(2.0).map(|m2| m2 - self.mean().powi(2))
    }

    pub fn has_finite_inverse_moment(&self) -> bool {
        self.moment(-1.0).is_some()
    }

    /// Quantile function on (0, 1).
    pub fn inverse_cdf(&self, u: f64) -> f64 {
        match *self {
            Distribution::Constant { value } => value,
            Distribution::Uniform { low, high } => low + (high - low) * u,
            Distribution::Lognormal { mu, sigma } => (mu + sigma * normal_quantile(u)).exp(),
            Distribution::ExpAbsGauss { s } => {
                // |G| has quantile Φ^{-1}((1+u)/2); V is decreasing in |G|.
                let g = normal_quantile(0.5 * (1.0 + (1.0 - u)));
                (-s * g).exp()
            }
            Distribution::ShiftedPareto { x_min, tail_index } => x_min * (1.0 - u).powf(-1.0 / tail_index),
            Distribution::ReciprocalUniform { low, high } => 1.0 / (high - (high - low) * u),
        }
    }

    /// Image of a standard Gaussian under the Gaussian copula of this law.
    pub fn from_gaussian(&self, z: f64) -> f64 {
        match *self {
            Distribution::Constant { value } => value,
            Distribution::Lognormal { mu, sigma } => (mu + sigma * z).exp(),
            Distribution::ExpAbsGauss { s } => (-s * z.abs()).exp(),
            _ => {
                let u = normal_cdf(z).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
                self.inverse_cdf(u)
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Distribution::Constant { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mixing {
    #[default]
    IidCells,
    MovingAverage { decay_exponent: f64 },
}

fn one() -> f64 {
    1.0
}

fn is_one(v: &f64) -> bool {
    *v == 1.0
}

/// Parameters of a random field, independent of seed and dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    #[serde(default = "one")]
    pub cell_size: f64,
    pub marginal: Distribution,
    #[serde(default)]
    pub mixing: Mixing,
    /// Deterministic multiplier applied to every value.
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub scale: f64,
}

impl FieldSpec {
    pub fn iid(marginal: Distribution) -> Self {
        Self {
            cell_size: 1.0,
            marginal,
            mixing: Mixing::IidCells,
            scale: 1.0,
        }
    }

    pub fn with_mixing(mut self, mixing: Mixing) -> Self {
        self.mixing = mixing;
        self
    }

    pub fn scaled(mut self, scale: f64) -> Self {
        self.scale *= scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return config("cell_size must be > 0");
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return config("field scale must be > 0");
        }
        if let Mixing::MovingAverage { decay_exponent } = self.mixing {
            if !(decay_exponent > 0.0) {
                return config("moving_average decay_exponent must be > 0");
            }
        }
        self.marginal.validate()
    }

    /// `E[V^p]` including the scale factor.
    pub fn moment(&self, p: f64) -> Option<f64> {
        self.marginal.moment(p).map(|m| m * self.scale.powf(p))
    }

    pub fn mean(&self) -> f64 {
        self.scale * self.marginal.mean()
    }

    pub fn is_constant(&self) -> bool {
        self.marginal.is_constant()
    }
}

#[derive(Debug)]
struct Window {
    dim: usize,
    /// Flattened `dim`-vectors.
    offsets: Vec<i64>,
    weights: Vec<f64>,
}

impl Window {
    fn new(dim: usize, q: f64) -> Self {
        let r = MOVING_AVERAGE_RADIUS;
        let mut offsets = Vec::new();
        let mut weights = Vec::new();
        let side = (2 * r + 1) as usize;
        let total = side.pow(dim as u32);
        for lin in 0..total {
            let mut rem = lin;
            let mut k = Vec::with_capacity(dim);
            for _ in 0..dim {
                k.push((rem % side) as i64 - r);
                rem /= side;
            }
            let norm = k.iter().map(|&v| (v * v) as f64).sum::<f64>().sqrt();
            if norm <= r as f64 {
                offsets.extend_from_slice(&k);
                weights.push((1.0 + norm).powf(-q));
            }
        }
        let l2 = weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        weights.iter_mut().for_each(|w| *w /= l2);
        Self { dim, offsets, weights }
    }

    /// Correlation of the Gaussian sums at an integer cell lag.
    fn correlation(&self, lag: &[i64]) -> f64 {
        let n = self.weights.len();
        let mut acc = 0.0;
        for a in 0..n {
            let ka = &self.offsets[a * self.dim..(a + 1) * self.dim];
            for b in 0..n {
                let kb = &self.offsets[b * self.dim..(b + 1) * self.dim];
                if ka.iter().zip(kb).zip(lag).all(|((x, y), l)| y - x == *l) {
                    acc += self.weights[a] * self.weights[b];
                }
            }
        }
        acc
    }
}

/// A realised environment: seed-reproducible, evaluable anywhere in O(1).
#[derive(Clone, Debug)]
pub struct RandomField {
    pub dim: usize,
    pub spec: FieldSpec,
    pub seed: u64,
    /// Uniform shift in units of `cell_size`, in `[0, 1)^d`.
    pub shift: Vec<f64>,
    /// Integer offset added to every cell index.
    pub offset: Vec<i64>,
    window: Option<Arc<Window>>,
}

/// Realises `spec` in dimension `dim` with the given seed.
pub fn sample_field(spec: &FieldSpec, dim: usize, seed: u64) -> Result<RandomField> {
    if dim == 0 || dim > 8 {
        return config("field dimension must lie in 1..=8");
    }
    spec.validate()?;
    let shift = (0..dim)
        .map(|a| hash::uniform(hash::derive_seed(seed, &[0x5348_4946]), &[a as i64]))
        .collect();
    let window = match spec.mixing {
        Mixing::IidCells => None,
        Mixing::MovingAverage { decay_exponent } => Some(Arc::new(Window::new(dim, decay_exponent))),
    };
    Ok(RandomField {
        dim,
        spec: spec.clone(),
        seed,
        shift,
        offset: vec![0; dim],
        window,
    })
}

impl RandomField {
    /// Cell index of the point `x` (including the shift and offset).
    #[inline]
    pub fn cell_of(&self, x: &[f64], out: &mut [i64]) {
        for a in 0..self.dim {
            out[a] = (x[a] / self.spec.cell_size + self.shift[a]).floor() as i64 + self.offset[a];
        }
    }

    #[inline]
    fn gaussian(&self, cell: &[i64]) -> f64 {
        normal_quantile(hash::uniform(self.seed, cell))
    }

    /// Value at a cell index.
    pub fn cell_value(&self, cell: &[i64]) -> f64 {
        let m = &self.spec.marginal;
        if let Distribution::Constant { value } = *m {
            return value * self.spec.scale;
        }
        let raw = match &self.window {
            None => m.inverse_cdf(hash::uniform(self.seed, cell)),
            Some(w) => {
                let mut k = [0i64; 8];
                let mut s = 0.0;
                for (j, wt) in w.weights.iter().enumerate() {
                    for a in 0..self.dim {
                        k[a] = cell[a] + w.offsets[j * self.dim + a];
                    }
                    s += wt * self.gaussian(&k[..self.dim]);
                }
                m.from_gaussian(s)
            }
        };
        raw * self.spec.scale
    }

    /// `F(τ_x ω)`.
    pub fn field_at(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let mut cell = [0i64; 8];
        self.cell_of(x, &mut cell[..self.dim]);
        self.cell_value(&cell[..self.dim])
    }

    /// Same environment with cell indices shifted by `z`:
    /// `shifted_cells(z).field_at(x) == field_at(x + z·cell_size)`.
    pub fn shifted_cells(&self, z: &[i64]) -> Self {
        let mut out = self.clone();
        for (o, dz) in out.offset.iter_mut().zip(z) {
            *o += dz;
        }
        out
    }

    /// Analytic covariance `Cov(V(0), V(x))` for an integer cell lag, when known.
    ///
    /// Exact for constant marginals, for `iid_cells` (zero beyond the cell)
    /// and for lognormal moving averages; `None` otherwise.
    pub fn analytic_cell_covariance(&self, lag: &[i64]) -> Option<f64> {
        let s2 = self.spec.scale * self.spec.scale;
        match (&self.spec.marginal, &self.window) {
            (Distribution::Constant { .. }, _) => Some(0.0),
            (m, None) => {
                if lag.iter().all(|&l| l == 0) {
                    m.variance().map(|v| v * s2)
                } else {
                    Some(0.0)
                }
            }
            (Distribution::Lognormal { mu, sigma }, Some(w)) => {
                let rho = w.correlation(lag);
                Some(s2 * (2.0 * mu + sigma * sigma).exp() * ((sigma * sigma * rho).exp() - 1.0))
            }
            _ => None,
        }
    }

    /// Correlation of the underlying Gaussian sums at an integer cell lag.
    pub fn window_correlation(&self, lag: &[i64]) -> Option<f64> {
        self.window.as_ref().map(|w| w.correlation(lag))
    }
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxRegion {
    pub fn unit(dim: usize) -> Self {
        Self {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn cube(dim: usize, side: f64) -> Self {
        Self {
            lo: vec![0.0; dim],
            hi: vec![side; dim],
        }
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.lo.len() != dim || self.hi.len() != dim {
            return config("region dimension does not match the field");
        }
        if self.lo.iter().zip(&self.hi).any(|(a, b)| !(b > a)) {
            return config("region is empty (requires lo < hi on every axis)");
        }
        Ok(())
    }
}

/// Grid points per environment cell per axis used by the Birkhoff quadrature.
const BIRKHOFF_POINTS_PER_CELL: f64 = 4.0;
const BIRKHOFF_MAX_POINTS: usize = 100_000_000;

/// Midpoint quadrature of `∫_region weight(x)·F(τ_{x/ε} ω) dx`.
pub fn birkhoff_average<W>(field: &RandomField, eps: f64, region: &BoxRegion, weight: W) -> Result<f64>
where
    W: Fn(&[f64]) -> f64 + Sync + Send,
{
    if !(eps > 0.0) {
        return config("eps must be > 0");
    }
    region.validate(field.dim)?;
    let d = field.dim;
    let target = eps * field.spec.cell_size / BIRKHOFF_POINTS_PER_CELL;
    let counts: Vec<usize> = (0..d)
        .map(|a| (((region.hi[a] - region.lo[a]) / target).ceil() as usize).max(1))
        .collect();
    let total: usize = counts.iter().product();
    if total > BIRKHOFF_MAX_POINTS {
        return config(format!("birkhoff quadrature needs {total} points; reduce the region or raise eps"));
    }
    let steps: Vec<f64> = (0..d)
        .map(|a| (region.hi[a] - region.lo[a]) / counts[a] as f64)
        .collect();
    let cell_vol: f64 = steps.iter().product();
    let sum = par::sum_range(total, |lin| {
        let mut rem = lin;
        let mut x = [0.0; 8];
        let mut y = [0.0; 8];
        for a in 0..d {
            let i = rem % counts[a];
            rem /= counts[a];
            x[a] = region.lo[a] + (i as f64 + 0.5) * steps[a];
            y[a] = x[a] / eps;
        }
        let w = weight(&x[..d]);
        if w == 0.0 {
            0.0
        } else {
            w * field.field_at(&y[..d])
        }
    });
    Ok(sum * cell_vol)
}

/// `sup_{ε ∈ eps_grid} ∫_{[0,R0]^d} F(τ_{x/ε} ω) dx`.
pub fn maximal_functional(field: &RandomField, eps_grid: &[f64], r0: f64) -> Result<f64> {
    if eps_grid.is_empty() {
        return config("eps_grid must be nonempty");
    }
    if eps_grid.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return config("every eps in eps_grid must lie in (0, 1)");
    }
    if !(r0 > 0.0) {
        return config("R0 must be > 0");
    }
    let region = BoxRegion::cube(field.dim, r0);
    let mut sup = f64::NEG_INFINITY;
    for &eps in eps_grid {
        sup = sup.max(birkhoff_average(field, eps, &region, |_| 1.0)?);
    }
    Ok(sup)
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MaximalTailReport {
    pub seeds: usize,
    pub mean: f64,
    pub r0: f64,
    /// Thresholds `λ = factor · R0^d · E[F]`.
    pub low_factor: f64,
    pub high_factor: f64,
    pub exceed_low: f64,
    pub exceed_high: f64,
    /// `C` fitted so that `exceed_low = C / low_factor`.
    pub fitted_constant: f64,
    /// `C / high_factor`.
    pub predicted_high: f64,
    pub passed: bool,
}

/// Empirical tail of the maximal functional across independent seeds, compared
/// with the `C·R0^d·E[F]/λ` scaling at two thresholds.
pub fn maximal_tail_check(
    spec: &FieldSpec,
    dim: usize,
    eps_grid: &[f64],
    r0: f64,
    seeds: usize,
    master_seed: u64,
) -> Result<MaximalTailReport> {
    if seeds < 2 {
        return config("maximal tail check needs at least 2 seeds");
    }
    spec.validate()?;
    let values: Vec<f64> = par::map_range(seeds, |s| {
        let field = sample_field(spec, dim, hash::derive_seed(master_seed, &[0x4D41_5846, s as u64]))?;
        maximal_functional(&field, eps_grid, r0)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let mean = spec.mean();
    let base = r0.powi(dim as i32) * mean;
    let (low_factor, high_factor) = (2.0, 8.0);
    let freq = |factor: f64| values.iter().filter(|&&v| v > factor * base).count() as f64 / seeds as f64;
    let exceed_low = freq(low_factor);
    let exceed_high = freq(high_factor);
    let fitted_constant = exceed_low * low_factor;
    let predicted_high = fitted_constant / high_factor;
    Ok(MaximalTailReport {
        seeds,
        mean,
        r0,
        low_factor,
        high_factor,
        exceed_low,
        exceed_high,
        fitted_constant,
        predicted_high,
        passed: exceed_high <= predicted_high,
    })
}

/// Truncation and expected decay for the mixing diagnostic.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MixingSpec {
    /// Expected polynomial decay exponent `l` (informational).
    #[serde(default = "one")]
    pub decay_exponent: f64,
    #[serde(default = "default_truncation")]
    pub truncation_level: f64,
}

fn default_truncation() -> f64 {
    DEFAULT_TRUNCATION
}

impl Default for MixingSpec {
    fn default() -> Self {
        Self {
            decay_exponent: 1.0,
            truncation_level: DEFAULT_TRUNCATION,
        }
    }
}

impl MixingSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay_exponent > 0.0) {
            return config("mixing decay_exponent must be > 0");
        }
        if !(self.truncation_level > 0.0) {
            return config("truncation_level must be > 0");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CovarianceEntry {
    pub lag: f64,
    /// Signed sample covariance.
    pub estimate: f64,
    pub std_error: f64,
    pub trials: usize,
}

/// Monte Carlo estimate of `Cov(ν_n(z1; ·), ν_n(z2; τ_x ·))` for the
/// summation coefficient `ν(z; ω) = Λ(ω)·ρ(z/|z|)`, over independent seeds.
#[allow(clippy::too_many_arguments)]
pub fn empirical_covariance(
    spec: &FieldSpec,
    dim: usize,
    angular: &Angular,
    z1: &[f64],
    z2: &[f64],
    x: &[f64],
    mixing: &MixingSpec,
    trials: usize,
    master_seed: u64,
) -> Result<CovarianceEntry> {
    if trials < 100 {
        return config(format!("empirical covariance needs trials >= 100 (got {trials})"));
    }
    mixing.validate()?;
    spec.validate()?;
    if z1.len() != dim || z2.len() != dim || x.len() != dim {
        return Err(Error::Domain("point dimensions do not match the field".into()));
    }
    let r1 = angular.value(z1)?;
    let r2 = angular.value(z2)?;
    let n = mixing.truncation_level;
    let origin = vec![0.0; dim];
    let pairs: Vec<(f64, f64)> = par::map_range(trials, |t| {
        let field = sample_field(spec, dim, hash::derive_seed(master_seed, &[0x434F_5641, t as u64]))?;
        let a = (field.field_at(&origin) * r1).min(n);
        let b = (field.field_at(x) * r2).min(n);
        Ok((a, b))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let tn = trials as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / tn;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / tn;
    let prods: Vec<f64> = pairs.iter().map(|(a, b)| (a - ma) * (b - mb)).collect();
    let estimate = prods.iter().sum::<f64>() / (tn - 1.0);
    let std_error = (stats::variance(&prods) / tn).sqrt();
    Ok(CovarianceEntry {
        lag: x.iter().map(|v| v * v).sum::<f64>().sqrt(),
        estimate,
        std_error,
        trials,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CovarianceReport {
    pub lags: Vec<f64>,
    /// `|Cov|` per lag.
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Fit of `C1(n)·|x|^{-l}` over lags with positive estimates.
    pub fitted_constant: Option<f64>,
    pub fitted_exponent: Option<f64>,
    /// Same fit applied to the analytic covariance, when available.
    pub analytic: Option<Vec<f64>>,
    pub analytic_exponent: Option<f64>,
    pub trials: usize,
}

/// Covariance estimates along the lags `lags` (points `x`), with a power-law fit.
#[allow(clippy::too_many_arguments)]
pub fn covariance_report(
    spec: &FieldSpec,
    dim: usize,
    angular: &Angular,
    z1: &[f64],
    z2: &[f64],
    lags: &[Vec<f64>],
    mixing: &MixingSpec,
    trials: usize,
    master_seed: u64,
) -> Result<CovarianceReport> {
    let mut entries = Vec::with_capacity(lags.len());
    for (i, x) in lags.iter().enumerate() {
        entries.push(empirical_covariance(
            spec,
            dim,
            angular,
            z1,
            z2,
            x,
            mixing,
            trials,
            hash::derive_seed(master_seed, &[i as u64]),
        )?);
    }
    let lag_mag: Vec<f64> = entries.iter().map(|e| e.lag).collect();
    let estimates: Vec<f64> = entries.iter().map(|e| e.estimate.abs()).collect();
    let (fitted_constant, fitted_exponent) = fit_power_law(&lag_mag, &estimates);

    // analytic values only for lags that are whole numbers of cells
    let probe = sample_field(spec, dim, 0)?;
    let (r1, r2) = (angular.value(z1)?, angular.value(z2)?);
    let analytic: Option<Vec<f64>> = lags
        .iter()
        .map(|x| {
            let cells: Vec<f64> = x.iter().map(|v| v / spec.cell_size).collect();
            if cells.iter().any(|c| (c - c.round()).abs() > 1e-12) {
                return None;
            }
            let lag: Vec<i64> = cells.iter().map(|c| c.round() as i64).collect();
            probe.analytic_cell_covariance(&lag).map(|c| (c * r1 * r2).abs())
        })
        .collect();
    let analytic_exponent = analytic.as_ref().and_then(|a| fit_power_law(&lag_mag, a).1);
    Ok(CovarianceReport {
        lags: lag_mag,
        estimates,
        std_errors: entries.iter().map(|e| e.std_error).collect(),
        fitted_constant,
        fitted_exponent,
        analytic,
        analytic_exponent,
        trials,
    })
}

/// Fits `y ≈ C·x^{-l}`; returns `(C, l)`.
fn fit_power_law(x: &[f64], y: &[f64]) -> (Option<f64>, Option<f64>) {
    let (lx, ly): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .unzip();
    if lx.len() < 2 {
        return (None, None);
    }
    let (slope, intercept) = stats::linear_fit(&lx, &ly);
    (Some(intercept.exp()), Some(-slope))
}

/// Configured reference measure `μ(τ_x ω) dx`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    #[default]
    Lebesgue,
    Field { field: FieldSpec },
}

impl MeasureSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            MeasureSpec::Lebesgue => Ok(()),
            MeasureSpec::Field { field } => field.validate(),
        }
    }

    pub fn realize(&self, dim: usize, seed: u64) -> Result<MeasureField> {
        Ok(match self {
            MeasureSpec::Lebesgue => MeasureField::Lebesgue,
            MeasureSpec::Field { field } => MeasureField::Field(sample_field(field, dim, hash::derive_seed(seed, &[4]))?),
        })
    }
}

/// Realised density of the reference measure.
#[derive(Clone, Debug)]
pub enum MeasureField {
    Lebesgue,
    Field(RandomField),
    /// `factor · num(x) / den(x)`.
    Ratio {
        num: RandomField,
        den: RandomField,
        factor: f64,
    },
}

impl MeasureField {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            MeasureField::Lebesgue => 1.0,
            MeasureField::Field(f) => f.field_at(x),
            MeasureField::Ratio { num, den, factor } => factor * num.field_at(x) / den.field_at(x),
        }
    }

    /// Smallest cell size of the underlying fields; `None` for Lebesgue.
    pub fn min_cell_size(&self) -> Option<f64> {
        match self {
            MeasureField::Lebesgue => None,
            MeasureField::Field(f) => (!f.spec.is_constant()).then_some(f.spec.cell_size),
            MeasureField::Ratio { num, den, .. } => [num, den]
                .iter()
                .filter(|f| !f.spec.is_constant())
                .map(|f| f.spec.cell_size)
                .reduce(f64::min),
        }
    }
}
