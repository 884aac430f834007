//! Periodic-grid discretisation of the non-local Dirichlet forms and the
//! functional-inequality diagnostics built on it.
//!
//! The torus `[−L/2, L/2)^d` with `n` points per axis stands in for `ℝ^d`.
//! Jumps are truncated at `r_max ≤ L/4`, so every stencil offset reaches a
//! distinct node. For an offset `k ≠ 0` (in grid units) the pair weight is
//!
//! ```text
//! w(i, j) = h^{d−α} · Q(k) · c(k) · g(i, j)
//! ```
//!
//! where `Q(k) = ∫_{k+[−½,½]^d} |v|^{−d−α} dv` is the cell integral of the
//! singular kernel, `c(k)` the deterministic directional factor (`K(z)`,
//! `ρ(θ)` or `½`) and `g` the environment coupling (`1`, `Λ_i + Λ_j` or
//! `ν₁_i ν₂_j + ν₁_j ν₂_i`). `Q` is exact in one dimension, high-order in the
//! near field (`|k|_∞ ≤ 4`) otherwise, and midpoint with a Laplacian
//! correction in the far field. The excluded diagonal cell is accounted for
//! by a second-order correction on the axis neighbours.
//!
//! Every factor is computed once per ± offset pair and `g` is symmetric in
//! `(i, j)` as a floating-point expression, so `w(i, j) = w(j, i)` holds
//! bit-for-bit.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::env::MeasureField;
use crate::error::{config, Error, Result};
use crate::kernel::{CoefficientForm, ConeSpec, EffectiveKernel, KernelParams, Medium};
use crate::par;
use crate::quad::{self, QuadOptions};
use crate::stats;

/// Default memory budget for materialised weights.
pub const DEFAULT_MEMORY_BUDGET: usize = 2 << 30;

/// Maximum supported dimension of grids.
pub const MAX_DIM: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dim: usize,
    /// Side length `L` of the torus.
    pub side: f64,
    /// Points per axis.
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub dim: usize,
    pub side: f64,
    pub n: usize,
    pub h: f64,
    len: usize,
}

impl Grid {
    pub fn new(dim: usize, side: f64, n: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return config(format!("grid dimension must lie in 1..={MAX_DIM}"));
        }
        if n < 4 || !n.is_multiple_of(2) {
            return config(format!("points per axis must be even and >= 4 (got {n})"));
        }
        if !(side > 0.0 && side.is_finite()) {
            return config("grid side must be > 0");
        }
        let len = n
            .checked_pow(dim as u32)
            .filter(|&l| l <= u32::MAX as usize)
            .ok_or_else(|| Error::Config("grid has too many nodes".into()))?;
        Ok(Self {
            dim,
            side,
            n,
            h: side / n as f64,
            len,
        })
    }

    pub fn from_spec(spec: &GridSpec) -> Result<Self> {
        Self::new(spec.dim, spec.side, spec.n)
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            dim: self.dim,
            side: self.side,
            n: self.n,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    #[inline]
    pub fn multi_index(&self, mut i: usize, out: &mut [usize]) {
        for slot in out.iter_mut().take(self.dim) {
            *slot = i % self.n;
            i /= self.n;
        }
    }

    /// Coordinates of node `i`: `x_a = −L/2 + i_a h`.
    pub fn coords(&self, i: usize) -> Vec<f64> {
        let mut m = [0usize; MAX_DIM];
        self.multi_index(i, &mut m);
        (0..self.dim).map(|a| -0.5 * self.side + m[a] as f64 * self.h).collect()
    }

    /// Node reached from `i` by the periodic offset `k`.
    #[inline]
    pub fn shifted(&self, multi: &[usize], k: &[i64]) -> usize {
        let n = self.n as i64;
        let mut j = 0usize;
        let mut stride = 1usize;
        for a in 0..self.dim {
            j += ((multi[a] as i64 + k[a]).rem_euclid(n)) as usize * stride;
            stride *= self.n;
        }
        j
    }

    /// Samples a function at every node.
    pub fn sample<F: Fn(&[f64]) -> f64 + Sync + Send>(&self, f: F) -> Vec<f64> {
        par::map_range(self.len, |i| f(&self.coords(i)))
    }

    /// `∫ f g dx` by the nodal rule.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.cell_volume() * par::sum_range(self.len, |i| f[i] * g[i])
    }

    pub fn l1_norm(&self, f: &[f64]) -> f64 {
        self.cell_volume() * par::sum_range(self.len, |i| f[i].abs())
    }

    pub fn l2_norm(&self, f: &[f64]) -> f64 {
        self.inner(f, f).sqrt()
    }
}

/// Smooth compactly supported test functions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunction {
    /// `amplitude · exp(1 − 1/(1 − |x−c|²/R²))` on `|x − c| < R`.
    Bump {
        center: Vec<f64>,
        radius: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// Explicit nodal values.
    Values { values: Vec<f64> },
}

fn one() -> f64 {
    1.0
}

impl TestFunction {
    pub fn bump(center: Vec<f64>, radius: f64, amplitude: f64) -> Self {
        TestFunction::Bump {
            center,
            radius,
            amplitude,
        }
    }

    pub fn sample(&self, grid: &Grid) -> Result<Vec<f64>> {
        match self {
            TestFunction::Bump {
                center,
                radius,
                amplitude,
            } => {
                if center.len() != grid.dim {
                    return config("test function center has the wrong dimension");
                }
                if !(*radius > 0.0) {
                    return config("test function radius must be > 0");
                }
                let (r, a) = (*radius, *amplitude);
                Ok(grid.sample(|x| {
                    let s: f64 = x.iter().zip(center).map(|(p, c)| (p - c) * (p - c)).sum::<f64>() / (r * r);
                    if s < 1.0 {
                        a * (1.0 - 1.0 / (1.0 - s)).exp()
                    } else {
                        0.0
                    }
                }))
            }
            TestFunction::Values { values } => {
                if values.len() != grid.len() {
                    return config(format!(
                        "test function has {} values, grid has {} nodes",
                        values.len(),
                        grid.len()
                    ));
                }
                Ok(values.clone())
            }
        }
    }
}

/// Per-node environment data entering the pair coupling `g(i, j)`.
#[derive(Clone, Debug)]
enum Coupling {
    Uniform,
    Summation(Vec<f64>),
    Product(Vec<f64>, Vec<f64>),
}

impl Coupling {
    #[inline]
    fn pair(&self, i: usize, j: usize) -> f64 {
        match self {
            Coupling::Uniform => 1.0,
            Coupling::Summation(l) => l[i] + l[j],
            Coupling::Product(a, b) => a[i] * b[j] + a[j] * b[i],
        }
    }
}

#[derive(Clone, Debug)]
struct Materialized {
    neighbors: Vec<u32>,
    weights: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AssemblyOptions {
    /// Jump truncation radius; defaults to `L/4`.
    pub r_max: Option<f64>,
    /// Weights are materialised when `N · stencil · 12` bytes fit.
    pub memory_budget: usize,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self {
            r_max: None,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }
}

/// Assembled discrete Dirichlet form `E(f,g) = ½ Σ_{i≠j} (f_i−f_j)(g_i−g_j) w(i,j)`.
#[derive(Clone, Debug)]
pub struct SparseSymmetricForm {
    grid: Grid,
    /// Flattened stencil offsets (`stencil_len × dim`).
    offsets: Vec<i64>,
    /// `|k| h` per offset.
    radii: Vec<f64>,
    /// `h^{d−α} Q(k) c(k)` per offset.
    base: Vec<f64>,
    coupling: Coupling,
    diag: Vec<f64>,
    storage: Option<Materialized>,
    pub r_min: f64,
    pub r_max: f64,
}

/// `∫_{k+[−½,½]^d} |v|^{−d−α} dv` for `k ≠ 0`.
fn cell_integral(k: &[i64], alpha: f64, gl: &(Vec<f64>, Vec<f64>)) -> f64 {
    let d = k.len();
    let s = d as f64 + alpha;
    if d == 1 {
        let m = k[0].unsigned_abs() as f64;
        return ((m - 0.5).powf(-alpha) - (m + 0.5).powf(-alpha)) / alpha;
    }
    let inf = k.iter().map(|v| v.abs()).max().unwrap();
    let r2: f64 = k.iter().map(|&v| (v * v) as f64).sum();
    if inf > 4 {
        // midpoint plus (1/24)Δ correction: Δ r^{-s} = s(α+2) r^{-s-2}
        return r2.powf(-0.5 * s) * (1.0 + s * (alpha + 2.0) / (24.0 * r2));
    }
    // tensor Gauss–Legendre on SUB^d sub-cells
    const SUB: usize = 4;
    let (x, w) = gl;
    let q = x.len();
    let per_axis = SUB * q;
    let total = per_axis.pow(d as u32);
    let mut acc = 0.0;
    for lin in 0..total {
        let mut rem = lin;
        let mut weight = 1.0;
        let mut rr = 0.0;
        for &ka in k {
            let t = rem % per_axis;
            rem /= per_axis;
            let (sub, node) = (t / q, t % q);
            let lo = ka as f64 - 0.5 + sub as f64 / SUB as f64;
            let v = lo + (x[node] + 1.0) * 0.5 / SUB as f64;
            weight *= w[node] * 0.5 / SUB as f64;
            rr += v * v;
        }
        acc += weight * rr.powf(-0.5 * s);
    }
    acc
}

/// `∫_{[−½,½]^d ∩ Γ} v_a² |v|^{−d−α} dv`, the diagonal-cell second moment.
fn diagonal_moment(dim: usize, axis: usize, alpha: f64, cone: &ConeSpec) -> Result<f64> {
    use std::f64::consts::PI;
    match dim {
        1 => Ok(2.0 * 0.5f64.powf(2.0 - alpha) / (2.0 - alpha)),
        2 => {
            let mut breaks: Vec<f64> = (1..8).map(|j| j as f64 * PI / 4.0).collect();
            if !cone.is_full() {
                let phi0 = cone.axis[1].atan2(cone.axis[0]);
                let w = cone.aperture.acos();
                for b in [phi0 + w, phi0 - w, phi0 + PI + w, phi0 + PI - w] {
                    breaks.push(b.rem_euclid(2.0 * PI));
                }
            }
            let f = |t: f64| {
                let th = [t.cos(), t.sin()];
                if !cone.in_cone(&th).unwrap_or(false) {
                    return 0.0;
                }
                let r = 0.5 / th[0].abs().max(th[1].abs());
                th[axis] * th[axis] * r.powf(2.0 - alpha) / (2.0 - alpha)
            };
            Ok(quad::integrate(f, 0.0, 2.0 * PI, &breaks, QuadOptions::default())?.0)
        }
        _ => {
            // inner ball of radius ½ exactly (full-space symmetry), corners by
            // tensor Gauss–Legendre
            let d = dim as f64;
            let sphere = 2.0 * PI.powf(d / 2.0) / statrs::function::gamma::gamma(d / 2.0);
            let ball = sphere / d * 0.5f64.powf(2.0 - alpha) / (2.0 - alpha);
            let (x, w) = quad::gauss_legendre(8);
            const SUB: usize = 4;
            let per_axis = SUB * x.len();
            let mut corner = 0.0;
            for lin in 0..per_axis.pow(dim as u32) {
                let mut rem = lin;
                let mut weight = 1.0;
                let mut v = [0.0; MAX_DIM];
                for slot in v.iter_mut().take(dim) {
                    let t = rem % per_axis;
                    rem /= per_axis;
                    let (sub, node) = (t / x.len(), t % x.len());
                    *slot = -0.5 + (sub as f64 + (x[node] + 1.0) * 0.5) / SUB as f64;
                    weight *= w[node] * 0.5 / SUB as f64;
                }
                let r2: f64 = v[..dim].iter().map(|a| a * a).sum();
                if r2 > 0.25 && cone.in_cone(&v[..dim]).unwrap_or(false) {
                    corner += weight * v[axis] * v[axis] * r2.powf(-0.5 * (d + alpha));
                }
            }
            Ok(ball + corner)
        }
    }
}

struct Stencil {
    offsets: Vec<i64>,
    radii: Vec<f64>,
    /// `h^{d−α} Q(k)`, diagonal correction included.
    q: Vec<f64>,
    neg: Vec<usize>,
}

fn build_stencil(grid: &Grid, cone: &ConeSpec, params: &KernelParams, r_max: f64) -> Result<Stencil> {
    let d = grid.dim;
    let alpha = params.alpha;
    let kmax = (r_max / grid.h).floor() as i64;
    let side = (2 * kmax + 1) as usize;
    let gl = quad::gauss_legendre(6);
    // canonical half: first nonzero coordinate positive
    let mut half: Vec<Vec<i64>> = Vec::new();
    for lin in 0..side.pow(d as u32) {
        let mut rem = lin;
        let mut k = vec![0i64; d];
        for slot in k.iter_mut() {
            *slot = (rem % side) as i64 - kmax;
            rem /= side;
        }
        let first = k.iter().find(|&&v| v != 0);
        if first.is_none_or(|&v| v < 0) {
            continue;
        }
        let r = (k.iter().map(|&v| (v * v) as f64).sum::<f64>()).sqrt() * grid.h;
        if r > r_max * (1.0 + 1e-12) {
            continue;
        }
        let kf: Vec<f64> = k.iter().map(|&v| v as f64).collect();
        if !cone.in_cone(&kf)? {
            continue;
        }
        half.push(k);
    }
    let scale = grid.h.powf(d as f64 - alpha);
    let mut qs: Vec<f64> = par::map_slice(&half, |k| cell_integral(k, alpha, &gl));
    for a in 0..d {
        let mut e = vec![0i64; d];
        e[a] = 1;
        if let Some(pos) = half.iter().position(|k| *k == e) {
            qs[pos] += 0.5 * diagonal_moment(d, a, alpha, cone)?;
        }
    }
    let m = half.len();
    let mut offsets = Vec::with_capacity(2 * m * d);
    let mut radii = Vec::with_capacity(2 * m);
    let mut q = Vec::with_capacity(2 * m);
    let mut neg = Vec::with_capacity(2 * m);
    for sign in [1i64, -1] {
        for (s, k) in half.iter().enumerate() {
            offsets.extend(k.iter().map(|v| sign * v));
            radii.push((k.iter().map(|&v| (v * v) as f64).sum::<f64>()).sqrt() * grid.h);
            q.push(scale * qs[s]);
            neg.push(if sign == 1 { s + m } else { s });
        }
    }
    Ok(Stencil { offsets, radii, q, neg })
}

fn check_range(grid: &Grid, opts: &AssemblyOptions) -> Result<f64> {
    let r_max = opts.r_max.unwrap_or(0.25 * grid.side);
    if r_max > 0.25 * grid.side * (1.0 + 1e-12) {
        return config(format!("r_max = {r_max} exceeds L/4 = {}", 0.25 * grid.side));
    }
    if r_max < grid.h {
        return config("r_max must be at least one grid spacing");
    }
    Ok(r_max)
}

/// Checks the environment-resolution condition `h ≤ ε·cell_size/4`.
pub fn check_resolution(grid: &Grid, eps: f64, cell_size: f64) -> Result<()> {
    if !(eps > 0.0) {
        return config("eps must be > 0");
    }
    if cell_size.is_finite() && grid.h > eps * cell_size / 4.0 * (1.0 + 1e-12) {
        return config(format!(
            "h > eps·cell_size/4 (h = {}, eps = {eps}, cell_size = {cell_size})",
            grid.h
        ));
    }
    Ok(())
}

impl SparseSymmetricForm {
    fn build(
        grid: &Grid,
        stencil: Stencil,
        factor: impl Fn(&[i64]) -> Result<f64>,
        coupling: Coupling,
        r_max: f64,
        budget: usize,
    ) -> Result<Self> {
        let d = grid.dim;
        let mut base = Vec::with_capacity(stencil.q.len());
        let m = stencil.q.len() / 2;
        for s in 0..stencil.q.len() {
            // factor of the canonical half, so ± offsets agree bitwise
            let canon = if s < m { s } else { stencil.neg[s] };
            let k = &stencil.offsets[canon * d..(canon + 1) * d];
            base.push(stencil.q[canon] * factor(k)?);
        }
        for (s, &b) in base.iter().enumerate() {
            if !(b >= 0.0) || !b.is_finite() {
                return Err(Error::Internal(format!("negative or non-finite weight {b} at offset {s}")));
            }
        }
        let mut form = Self {
            grid: grid.clone(),
            offsets: stencil.offsets,
            radii: stencil.radii,
            base,
            coupling,
            diag: Vec::new(),
            storage: None,
            r_min: grid.h,
            r_max,
        };
        let s_len = form.stencil_len();
        let bytes = grid.len().saturating_mul(s_len).saturating_mul(12);
        if bytes <= budget {
            let rows: Vec<(Vec<u32>, Vec<f64>)> = par::map_range(grid.len(), |i| {
                let mut nb = Vec::with_capacity(s_len);
                let mut ws = Vec::with_capacity(s_len);
                form.visit_row_lazy(i, |j, w| {
                    nb.push(j as u32);
                    ws.push(w);
                });
                (nb, ws)
            });
            let mut neighbors = Vec::with_capacity(grid.len() * s_len);
            let mut weights = Vec::with_capacity(grid.len() * s_len);
            for (nb, ws) in rows {
                neighbors.extend(nb);
                weights.extend(ws);
            }
            form.storage = Some(Materialized { neighbors, weights });
        }
        form.diag = par::map_range(grid.len(), |i| {
            let mut s = 0.0;
            form.visit_row(i, |_, w| s += w);
            s
        });
        Ok(form)
    }

    #[inline]
    fn visit_row_lazy(&self, i: usize, mut f: impl FnMut(usize, f64)) {
        let d = self.grid.dim;
        let mut m = [0usize; MAX_DIM];
        self.grid.multi_index(i, &mut m);
        for (s, &b) in self.base.iter().enumerate() {
            let j = self.grid.shifted(&m[..d], &self.offsets[s * d..(s + 1) * d]);
            f(j, b * self.coupling.pair(i, j));
        }
    }

    /// Calls `f(j, w(i, j))` for every stencil neighbour of `i`.
    #[inline]
    pub fn visit_row(&self, i: usize, mut f: impl FnMut(usize, f64)) {
        match &self.storage {
            Some(st) => {
                let s = self.stencil_len();
                let range = i * s..(i + 1) * s;
                for (j, w) in st.neighbors[range.clone()].iter().zip(&st.weights[range]) {
                    f(*j as usize, *w);
                }
            }
            None => self.visit_row_lazy(i, f),
        }
    }

    /// Like [`visit_row`](Self::visit_row), with the jump length `|x_i − x_j|`.
    pub fn visit_row_with_radius(&self, i: usize, mut f: impl FnMut(usize, f64, f64)) {
        let mut s = 0;
        self.visit_row(i, |j, w| {
            f(j, w, self.radii[s]);
            s += 1;
        });
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn stencil_len(&self) -> usize {
        self.base.len()
    }

    pub fn is_materialized(&self) -> bool {
        self.storage.is_some()
    }

    /// `Σ_{j≠i} w(i, j) = −A_ii`.
    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// `y = −A x`, i.e. `y_i = Σ_j w(i,j)(x_i − x_j)`.
    pub fn apply_neg_generator(&self, x: &[f64], y: &mut [f64]) {
        par::fill_indexed(y, |i| {
            let xi = x[i];
            let mut acc = 0.0;
            self.visit_row(i, |j, w| acc += w * (xi - x[j]));
            acc
        });
    }

    /// `E(f, g)` over pairs whose jump length satisfies `keep`.
    pub fn energy_where(&self, f: &[f64], g: &[f64], keep: impl Fn(f64) -> bool + Sync + Send) -> f64 {
        0.5 * par::sum_range(self.len(), |i| {
            let mut acc = 0.0;
            let (fi, gi) = (f[i], g[i]);
            self.visit_row_with_radius(i, |j, w, r| {
                if keep(r) {
                    acc += w * (fi - f[j]) * (gi - g[j]);
                }
            });
            acc
        })
    }

    /// Dense generator `A` (`A_ij = w(i,j)`, `A_ii = −Σ_j w(i,j)`).
    pub fn to_dense_generator(&self) -> Result<Vec<Vec<f64>>> {
        if self.len() > 4096 {
            return config("dense generator refused for more than 4096 nodes");
        }
        let n = self.len();
        let mut a = vec![vec![0.0; n]; n];
        for (i, row) in a.iter_mut().enumerate() {
            self.visit_row(i, |j, w| row[j] += w);
            row[i] -= self.diag[i];
        }
        Ok(a)
    }

    /// Writes every ordered pair as `(i: u64, j: u64, w: f64)`, little-endian.
    pub fn write_triples<W: Write>(&self, mut out: W) -> Result<()> {
        for i in 0..self.len() {
            let mut err = None;
            self.visit_row(i, |j, w| {
                if err.is_none() {
                    let mut buf = [0u8; 24];
                    buf[..8].copy_from_slice(&(i as u64).to_le_bytes());
                    buf[8..16].copy_from_slice(&(j as u64).to_le_bytes());
                    buf[16..].copy_from_slice(&w.to_le_bytes());
                    if let Err(e) = out.write_all(&buf) {
                        err = Some(e);
                    }
                }
            });
            if let Some(e) = err {
                return Err(e.into());
            }
        }
        Ok(())
    }
}

/// Reads a triple dump written by [`SparseSymmetricForm::write_triples`].
pub fn read_triples<R: Read>(mut input: R) -> Result<Vec<(u64, u64, f64)>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() % 24 != 0 {
        return config("triple dump length is not a multiple of 24 bytes");
    }
    Ok(bytes
        .chunks_exact(24)
        .map(|c| {
            (
                u64::from_le_bytes(c[..8].try_into().unwrap()),
                u64::from_le_bytes(c[8..16].try_into().unwrap()),
                f64::from_le_bytes(c[16..].try_into().unwrap()),
            )
        })
        .collect())
}

/// `E(f, g) = ½ Σ_{i≠j} (f_i−f_j)(g_i−g_j) w(i,j)`.
pub fn dirichlet_energy(form: &SparseSymmetricForm, f: &[f64], g: &[f64]) -> Result<f64> {
    if f.len() != form.len() || g.len() != form.len() {
        return Err(Error::Domain(format!(
            "grid function length {} / {} does not match {} nodes",
            f.len(),
            g.len(),
            form.len()
        )));
    }
    Ok(form.energy_where(f, g, |_| true))
}

/// Assembles the `ε`-scaled random form of `medium` on `grid`.
pub fn assemble_form(
    grid: &Grid,
    medium: &Medium,
    cone: &ConeSpec,
    params: &KernelParams,
    eps: f64,
    opts: &AssemblyOptions,
) -> Result<SparseSymmetricForm> {
    params.validate()?;
    cone.validate(grid.dim)?;
    if params.dim != grid.dim {
        return config("kernel dimension does not match the grid");
    }
    let r_max = check_range(grid, opts)?;
    let sample = |field: &crate::env::RandomField| -> Result<Vec<f64>> {
        if !field.spec.is_constant() {
            check_resolution(grid, eps, field.spec.cell_size)?;
        }
        Ok(grid.sample(|x| {
            let y: Vec<f64> = x.iter().map(|v| v / eps).collect();
            field.field_at(&y)
        }))
    };
    let stencil = build_stencil(grid, cone, params, r_max)?;
    match medium {
        Medium::Constant { k0 } => {
            let k0 = *k0;
            SparseSymmetricForm::build(grid, stencil, |_| Ok(k0), Coupling::Uniform, r_max, opts.memory_budget)
        }
        Medium::Summation { lambda, angular } => {
            let values = sample(lambda)?;
            let h = grid.h;
            SparseSymmetricForm::build(
                grid,
                stencil,
                |k| {
                    let z: Vec<f64> = k.iter().map(|&v| v as f64 * h).collect();
                    angular.value(&z)
                },
                Coupling::Summation(values),
                r_max,
                opts.memory_budget,
            )
        }
        Medium::Product { nu1, nu2 } => {
            let a = sample(nu1)?;
            let b = sample(nu2)?;
            SparseSymmetricForm::build(
                grid,
                stencil,
                |_| Ok(0.5),
                Coupling::Product(a, b),
                r_max,
                opts.memory_budget,
            )
        }
    }
}

/// Assembles `E^K` for a deterministic kernel.
pub fn assemble_effective_form(
    grid: &Grid,
    k: &EffectiveKernel,
    cone: &ConeSpec,
    params: &KernelParams,
    opts: &AssemblyOptions,
) -> Result<SparseSymmetricForm> {
    params.validate()?;
    cone.validate(grid.dim)?;
    if params.dim != grid.dim {
        return config("kernel dimension does not match the grid");
    }
    let r_max = check_range(grid, opts)?;
    let stencil = build_stencil(grid, cone, params, r_max)?;
    let h = grid.h;
    SparseSymmetricForm::build(
        grid,
        stencil,
        |kk| {
            if let Some(v) = k.flat_value() {
                return Ok(v);
            }
            let z: Vec<f64> = kk.iter().map(|&v| v as f64 * h).collect();
            k.value(&z)
        },
        Coupling::Uniform,
        r_max,
        opts.memory_budget,
    )
}

/// Convenience: realises nothing, assembles a constant-coefficient form.
pub fn assemble_constant(
    grid: &Grid,
    k0: f64,
    cone: &ConeSpec,
    params: &KernelParams,
    opts: &AssemblyOptions,
) -> Result<SparseSymmetricForm> {
    assemble_form(grid, &Medium::Constant { k0 }, cone, params, 1.0, opts)
}

/// Diagonal measure weights `m_i = μ(τ_{x_i/ε} ω) h^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureWeights(pub Vec<f64>);

impl MeasureWeights {
    pub fn lebesgue(grid: &Grid) -> Self {
        MeasureWeights(vec![grid.cell_volume(); grid.len()])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        par::sum_range(self.0.len(), |i| self.0[i] * f[i] * g[i])
    }

    pub fn norm(&self, f: &[f64]) -> f64 {
        self.inner(f, f).sqrt()
    }
}

pub fn measure_weights(grid: &Grid, measure: &MeasureField, eps: f64) -> Result<MeasureWeights> {
    if let Some(cell) = measure.min_cell_size() {
        check_resolution(grid, eps, cell)?;
    }
    let hd = grid.cell_volume();
    let w = grid.sample(|x| {
        let y: Vec<f64> = x.iter().map(|v| v / eps).collect();
        measure.value(&y) * hd
    });
    if let Some(bad) = w.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::Internal(format!("nonpositive measure weight {bad}")));
    }
    Ok(MeasureWeights(w))
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct NashReport {
    /// `‖f‖₂² / (E₀(f,f)^{d/(d+α)} ‖f‖₁^{2α/(d+α)})` per test function; `None` if skipped.
    pub ratios: Vec<Option<f64>>,
    /// Empirical `c₀`.
    pub max_ratio: f64,
    pub notes: Vec<String>,
    pub passed: bool,
}

/// Nash-type inequality for the cone-restricted form with `κ ≡ 2`.
pub fn nash_check(grid: &Grid, cone: &ConeSpec, params: &KernelParams, test_fns: &[Vec<f64>]) -> Result<NashReport> {
    if test_fns.is_empty() {
        return config("nash_check needs at least one test function");
    }
    let e0 = assemble_constant(grid, 2.0, cone, params, &AssemblyOptions::default())?;
    let d = grid.dim as f64;
    let a = params.alpha;
    let mut ratios = Vec::new();
    let mut notes = Vec::new();
    for (t, f) in test_fns.iter().enumerate() {
        let l1 = grid.l1_norm(f);
        if l1 == 0.0 {
            notes.push(format!("test function {t} is zero; skipped"));
            ratios.push(None);
            continue;
        }
        let l2sq = grid.inner(f, f);
        let e = dirichlet_energy(&e0, f, f)?;
        ratios.push(Some(l2sq / (e.powf(d / (d + a)) * l1.powf(2.0 * a / (d + a)))));
    }
    let max_ratio = ratios.iter().flatten().copied().fold(0.0, f64::max);
    let passed = ratios.iter().flatten().all(|r| r.is_finite() && *r > 0.0) && ratios.iter().any(Option::is_some);
    Ok(NashReport {
        ratios,
        max_ratio,
        notes,
        passed,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ConeComparabilityReport {
    /// `E_full(f,f) / E_Γ(f,f)` per test function; `None` when both vanish.
    pub ratios: Vec<Option<f64>>,
    /// Empirical `c₁`.
    pub max_ratio: f64,
    pub violations: Vec<usize>,
    pub passed: bool,
}

/// Comparability of the full-space and cone-restricted constant forms.
pub fn cone_comparability_check(
    grid: &Grid,
    cone: &ConeSpec,
    params: &KernelParams,
    test_fns: &[Vec<f64>],
) -> Result<ConeComparabilityReport> {
    if test_fns.is_empty() {
        return config("cone_comparability_check needs at least one test function");
    }
    let opts = AssemblyOptions::default();
    let full = assemble_constant(grid, 1.0, &ConeSpec::full(), params, &opts)?;
    let restricted = assemble_constant(grid, 1.0, cone, params, &opts)?;
    let mut ratios = Vec::new();
    let mut violations = Vec::new();
    for (t, f) in test_fns.iter().enumerate() {
        let ef = dirichlet_energy(&full, f, f)?;
        let ec = dirichlet_energy(&restricted, f, f)?;
        if ef == 0.0 && ec == 0.0 {
            ratios.push(None);
        } else if ec == 0.0 {
            violations.push(t);
            ratios.push(Some(f64::INFINITY));
        } else {
            ratios.push(Some(ef / ec));
        }
    }
    let max_ratio = ratios.iter().flatten().copied().fold(0.0, f64::max);
    Ok(ConeComparabilityReport {
        passed: violations.is_empty() && max_ratio.is_finite(),
        ratios,
        max_ratio,
        violations,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TranslationReport {
    /// Translation lengths `h`.
    pub steps: Vec<f64>,
    /// `max_i T_i(h)` with `T_i(h) = ∫_{B(0,r)} |f(x + h e_i) − f(x)| dx`.
    pub translations: Vec<f64>,
    /// `T(h) / (h^{α/2} E(f,f)^{1/2})`.
    pub ratios: Vec<f64>,
    /// Empirical `c₀(r)`.
    pub max_ratio: f64,
    /// Slope of `log T(h)` against `log h`.
    pub fitted_exponent: Option<f64>,
    pub violation: bool,
}

/// Translation (equicontinuity) estimate on `B(0, r)` for grid-multiple shifts.
pub fn translation_estimate_check(
    form: &SparseSymmetricForm,
    f: &[f64],
    h_steps: &[usize],
    r: f64,
    alpha: f64,
) -> Result<TranslationReport> {
    let grid = form.grid();
    if f.len() != grid.len() {
        return Err(Error::Domain("grid function does not match the form".into()));
    }
    if h_steps.is_empty() || h_steps.contains(&0) {
        return config("h_steps must be nonempty positive grid multiples");
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("f must be bounded".into()));
    }
    let energy = dirichlet_energy(form, f, f)?;
    let d = grid.dim;
    let hd = grid.cell_volume();
    let mut steps = Vec::new();
    let mut translations = Vec::new();
    let mut ratios = Vec::new();
    let mut violation = false;
    for &m in h_steps {
        let hlen = m as f64 * grid.h;
        let mut tmax: f64 = 0.0;
        for a in 0..d {
            let mut k = vec![0i64; d];
            k[a] = m as i64;
            let t = hd * par::sum_range(grid.len(), |i| {
                let x = grid.coords(i);
                if x.iter().map(|v| v * v).sum::<f64>() >= r * r {
                    return 0.0;
                }
                let mut mi = [0usize; MAX_DIM];
                grid.multi_index(i, &mut mi);
                (f[grid.shifted(&mi[..d], &k)] - f[i]).abs()
            });
            tmax = tmax.max(t);
        }
        let ratio = if energy > 0.0 {
            tmax / (hlen.powf(alpha / 2.0) * energy.sqrt())
        } else if tmax > 0.0 {
            violation = true;
            f64::INFINITY
        } else {
            0.0
        };
        steps.push(hlen);
        translations.push(tmax);
        ratios.push(ratio);
    }
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    Ok(TranslationReport {
        fitted_exponent: stats::log_log_slope(&steps, &translations),
        steps,
        translations,
        ratios,
        max_ratio,
        violation,
    })
}

/// Builds the medium-independent constant-coefficient form for `form` when
/// it is deterministic; used to short-circuit environment sampling.
pub fn deterministic_kernel(form: &CoefficientForm) -> Option<f64> {
    match form {
        CoefficientForm::Constant { k0 } => Some(*k0),
        _ => None,
    }
}
