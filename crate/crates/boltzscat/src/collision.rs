//! Cutoff collision integral with a separated kernel `|z|^β b̂(ω·n)`.
//!
//! Velocity functions are carried as a relative density `h = F/M` against a
//! local Maxwellian `M = M[ρ, u, θ]`, sampled on a uniform grid in the scaled
//! variable `w = (v - u)/√θ`. Off-grid post-collision values use multilinear
//! interpolation of `h`; the Maxwellian factor is exact, and the identity
//! `M(v')M(v'_*) = M(v)M(v_*)` removes it from the gain term.

use crate::maxwellian::local_maxwellian;
use crate::quad::{adaptive, gamma, gauss_legendre, sphere_area};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Angular part `b̂` of the kernel as a function of the cosine `ω·n`.
#[derive(Clone, Debug, PartialEq)]
pub enum AngularWeight {
    Constant(f64),
    /// Piecewise linear in the cosine, constant beyond the table ends.
    Table { cosines: Vec<f64>, values: Vec<f64> },
}

impl AngularWeight {
    pub fn eval(&self, mu: f64) -> f64 {
        match self {
            AngularWeight::Constant(c) => *c,
            AngularWeight::Table { cosines, values } => {
                if mu <= cosines[0] {
                    return values[0];
                }
                let n = cosines.len();
                if mu >= cosines[n - 1] {
                    return values[n - 1];
                }
                let i = cosines.partition_point(|&c| c <= mu) - 1;
                let t = (mu - cosines[i]) / (cosines[i + 1] - cosines[i]);
                values[i] + t * (values[i + 1] - values[i])
            }
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        match self {
            AngularWeight::Constant(_) => vec![],
            AngularWeight::Table { cosines, .. } => cosines.clone(),
        }
    }
}

/// Which computation the kernel is about to feed; each has its own range of
/// admissible exponents.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelUse {
    General,
    Solver,
    SupNorm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelSpec {
    pub dim: usize,
    pub beta: f64,
    pub bhat: AngularWeight,
    pub bbar: f64,
}

impl KernelSpec {
    pub fn new(dim: usize, beta: f64, bhat: AngularWeight) -> Result<Self> {
        if !(dim == 2 || dim == 3) {
            return Err(Error::Invalid(format!("dimension {dim} not supported (2 or 3)")));
        }
        if let AngularWeight::Table { cosines, values } = &bhat {
            if cosines.len() < 2 || cosines.len() != values.len() {
                return Err(Error::Invalid("angular table needs matching cosines and values".into()));
            }
            if cosines.windows(2).any(|w| w[1] <= w[0]) || cosines[0] < -1.0 || cosines[cosines.len() - 1] > 1.0 {
                return Err(Error::Invalid("angular table cosines must increase within [-1, 1]".into()));
            }
        }
        let k = KernelSpec { dim, beta, bhat, bbar: 0.0 };
        k.check_range(KernelUse::General)?;
        let probe = [-1.0, -0.5, 0.0, 0.5, 1.0];
        if probe.iter().any(|&m| k.bhat.eval(m) < 0.0)
            || k.bhat.breakpoints().iter().any(|&m| k.bhat.eval(m) < 0.0)
        {
            return Err(Error::Invalid("angular weight must be nonnegative".into()));
        }
        let bbar = total_angular_weight(&k.bhat, dim)?;
        if !(bbar > 0.0 && bbar.is_finite()) {
            return Err(Error::Invalid(format!("total angular weight {bbar} must be finite and positive")));
        }
        Ok(KernelSpec { bbar, ..k })
    }

    /// Constant angular weight `b̂ ≡ value`.
    pub fn constant(dim: usize, beta: f64, value: f64) -> Result<Self> {
        Self::new(dim, beta, AngularWeight::Constant(value))
    }

    pub fn check_range(&self, usage: KernelUse) -> Result<()> {
        let lo = 1.0 - self.dim as f64;
        if !(self.beta > lo && self.beta <= 2.0) {
            return Err(Error::Unsupported(format!(
                "beta = {} outside ({lo}, 2] for D = {}",
                self.beta, self.dim
            )));
        }
        match usage {
            KernelUse::Solver if self.beta > 1.0 => Err(Error::Unsupported(format!(
                "beta = {} > 1: the solver and scattering paths need beta <= 1",
                self.beta
            ))),
            KernelUse::SupNorm if self.beta > 0.0 => Err(Error::Unsupported(format!(
                "beta = {} > 0: sup-norm constants need beta <= 0; use the time-integrated constant",
                self.beta
            ))),
            _ => Ok(()),
        }
    }

    pub fn to_json(&self) -> KernelJson {
        let bhat = match &self.bhat {
            AngularWeight::Constant(c) => BhatJson::Tag(format!("constant:{c}")),
            AngularWeight::Table { cosines, values } => {
                BhatJson::Table { cosines: cosines.clone(), weights: values.clone() }
            }
        };
        KernelJson { beta: self.beta, bhat, dim: self.dim, bbar: Some(self.bbar) }
    }

    /// Parses the JSON form; `bbar` is recomputed and, when present in the
    /// input, must agree with the recomputed value.
    pub fn from_json(j: &KernelJson) -> Result<Self> {
        let bhat = match &j.bhat {
            BhatJson::Tag(s) => {
                let v = s
                    .strip_prefix("constant:")
                    .ok_or_else(|| Error::Invalid(format!("unknown bhat form '{s}'")))?;
                AngularWeight::Constant(
                    v.trim().parse().map_err(|_| Error::Invalid(format!("bad constant in '{s}'")))?,
                )
            }
            BhatJson::Table { cosines, weights } => {
                AngularWeight::Table { cosines: cosines.clone(), values: weights.clone() }
            }
        };
        let k = Self::new(j.dim, j.beta, bhat)?;
        if let Some(stored) = j.bbar {
            if (stored - k.bbar).abs() > 1e-9 * k.bbar.max(1.0) {
                return Err(Error::Invalid(format!(
                    "stored bbar {stored} disagrees with recomputed {}",
                    k.bbar
                )));
            }
        }
        Ok(k)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum BhatJson {
    Tag(String),
    Table { cosines: Vec<f64>, weights: Vec<f64> },
}

/// JSON form `{beta, bhat, D}` with optional stored `bbar`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct KernelJson {
    pub beta: f64,
    pub bhat: BhatJson,
    #[serde(rename = "D")]
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbar: Option<f64>,
}

/// `∫_{S^{D-1}} b̂(ω·n) dω`.
pub fn total_angular_weight(bhat: &AngularWeight, dim: usize) -> Result<f64> {
    if let AngularWeight::Constant(c) = bhat {
        return Ok(c * sphere_area(dim));
    }
    let mut cuts: Vec<f64> = bhat.breakpoints();
    cuts.push(-1.0);
    cuts.push(1.0);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let mut total = 0.0;
    for w in cuts.windows(2) {
        total += if dim == 2 {
            // angle parametrization keeps the endpoint weight 1/√(1-μ²) smooth
            let (p0, p1) = (w[1].acos(), w[0].acos());
            2.0 * adaptive(|phi| bhat.eval(phi.cos()), p0, p1, 1e-13)?
        } else {
            2.0 * PI * adaptive(|mu| bhat.eval(mu), w[0], w[1], 1e-13)?
        };
    }
    Ok(total)
}

/// Post-collision velocities `v' = v - ((v - v*)·ω)ω`, `v'* = v* + ((v - v*)·ω)ω`.
pub fn post_collision(v: &[f64], v_star: &[f64], omega: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n2: f64 = omega.iter().map(|x| x * x).sum();
    if (n2.sqrt() - 1.0).abs() > 1e-12 {
        return Err(Error::Invalid(format!("omega has norm {} instead of 1", n2.sqrt())));
    }
    if v.len() != omega.len() || v_star.len() != omega.len() {
        return Err(Error::Invalid("dimension mismatch in post_collision".into()));
    }
    let proj: f64 = v.iter().zip(v_star).zip(omega).map(|((a, b), w)| (a - b) * w).sum();
    let vp = v.iter().zip(omega).map(|(a, w)| a - proj * w).collect();
    let vsp = v_star.iter().zip(omega).map(|(a, w)| a + proj * w).collect();
    Ok((vp, vsp))
}

/// `a_β(0) = 2^{β/2} Γ((D+β)/2) / Γ(D/2)`.
pub fn a_beta_zero(beta: f64, dim: usize) -> f64 {
    let d = dim as f64;
    2f64.powf(beta / 2.0) * gamma((d + beta) / 2.0) / gamma(d / 2.0)
}

/// `∫_{S^{D-1}} exp(z (ω·e - 1)) dω` for `z ≥ 0`.
fn spherical_mean_exp(z: f64, dim: usize) -> Result<f64> {
    if dim == 3 {
        return Ok(if z < 1e-8 {
            4.0 * PI * (1.0 - z)
        } else {
            2.0 * PI * (-(-2.0 * z).exp_m1()) / z
        });
    }
    if z == 0.0 {
        return Ok(2.0 * PI);
    }
    Ok(2.0 * adaptive(|phi| (z * (phi.cos() - 1.0)).exp(), 0.0, PI, 1e-14)?)
}

/// `a_β(w) = ∫ |w - w*|^β M[1, 0, 1](w*) dw*` by radial quadrature around `w`.
pub fn a_beta(w: &[f64], beta: f64, dim: usize) -> Result<f64> {
    if !(beta > -(dim as f64)) {
        return Err(Error::Domain(format!("beta = {beta} must exceed -D")));
    }
    let r0 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    let rmax = r0 + 14.0;
    let norm = (2.0 * PI).powf(-(dim as f64) / 2.0);
    let mut err = None;
    // r = s² keeps the integrand smooth at the origin for half-integer β
    let f = |s: f64| {
        let r = s * s;
        let ang = match spherical_mean_exp(r * r0, dim) {
            Ok(a) => a,
            Err(e) => {
                let _ = &e;
                f64::NAN
            }
        };
        2.0 * s * r.powf(beta + dim as f64 - 1.0) * (-(r - r0) * (r - r0) / 2.0).exp() * ang
    };
    let smax = rmax.sqrt();
    let split = if r0 > 0.0 { r0.sqrt() } else { smax / 4.0 };
    let mut total = 0.0;
    for (a, b) in [(0.0, split), (split, smax)] {
        match adaptive(f, a, b, 1e-12) {
            Ok(v) => total += v,
            Err(e) => err = Some(e),
        }
    }
    if let Some(e) = err {
        return Err(e);
    }
    if !total.is_finite() {
        return Err(Error::NotConverged { iters: 0, delta: total, ratio: f64::NAN });
    }
    Ok(norm * total)
}

/// `a_β` at `|w| = r` from the noncentral chi moment
/// `2^{β/2} Γ((D+β)/2)/Γ(D/2) e^{-x} ₁F₁((D+β)/2; D/2; x)`, `x = r²/2`.
/// The series has positive terms; for `x > 600` the asymptotic expansion
/// `r^β Σ (-β/2)_n (1 - (D+β)/2)_n / (n! x^n)` is used instead.
pub fn a_beta_series(r: f64, beta: f64, dim: usize) -> Option<f64> {
    let x = 0.5 * r * r;
    if !(beta > -(dim as f64)) {
        return None;
    }
    let (a, b) = ((dim as f64 + beta) / 2.0, dim as f64 / 2.0);
    if x > 600.0 {
        let (p, q) = (b - a, 1.0 - a);
        let mut term = 1.0;
        let mut sum = 1.0;
        for n in 0..40 {
            let n = n as f64;
            let next = term * (p + n) * (q + n) / ((n + 1.0) * x);
            if next.abs() >= term.abs() {
                break;
            }
            term = next;
            sum += term;
            if term.abs() <= 1e-17 * sum.abs() {
                break;
            }
        }
        return Some(r.powf(beta) * sum);
    }
    let mut term = (-x).exp();
    let mut sum = term;
    let mut n = 0.0;
    loop {
        term *= (a + n) / (b + n) * x / (n + 1.0);
        sum += term;
        n += 1.0;
        if n > x && term <= 1e-17 * sum {
            break;
        }
    }
    Some(2f64.powf(beta / 2.0) * crate::quad::gamma(a) / crate::quad::gamma(b) * sum)
}

/// Tabulated `a_β(|w|)` on a radial grid, cubic interpolation inside and
/// direct quadrature outside.
#[derive(Clone, Debug)]
pub struct ABetaTable {
    pub beta: f64,
    pub dim: usize,
    dr: f64,
    vals: Vec<f64>,
}

impl ABetaTable {
    pub fn new(beta: f64, dim: usize) -> Result<Self> {
        let n = 1201;
        let rmax = 12.0;
        let dr = rmax / (n - 1) as f64;
        let vals = if beta == 0.0 {
            vec![1.0; n]
        } else {
            (0..n)
                .map(|i| {
                    a_beta_series(i as f64 * dr, beta, dim)
                        .ok_or_else(|| Error::Domain(format!("beta = {beta} must exceed -D")))
                })
                .collect::<Result<Vec<_>>>()?
        };
        Ok(ABetaTable { beta, dim, dr, vals })
    }

    pub fn eval(&self, r: f64) -> f64 {
        if self.beta == 0.0 {
            return 1.0;
        }
        let n = self.vals.len();
        let pos = r / self.dr;
        if pos >= (n - 2) as f64 {
            return a_beta_series(r, self.beta, self.dim).unwrap_or(f64::NAN);
        }
        // even extension keeps the stencil symmetric at r = 0
        let i = pos.floor() as isize;
        let f = pos - i as f64;
        let wts = crate::quad::cubic_weights(f);
        let mut s = 0.0;
        for (o, wt) in wts.iter().enumerate() {
            let k = (i + o as isize - 1).unsigned_abs();
            s += wt * self.vals[k];
        }
        s
    }
}

/// Quadrature on the unit sphere in a frame whose first axis is the
/// collision direction `n`.
#[derive(Clone, Debug)]
pub struct SphereRule {
    pub dim: usize,
    /// Node directions in the aligned frame, flattened with stride `dim`.
    pub omegas: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SphereRule {
    /// D = 2: `n_omega` equispaced angles. D = 3: Gauss–Legendre in the polar
    /// cosine times equispaced azimuth, `n_omega = n_pol · n_az` with
    /// `n_pol = ⌊√n_omega⌋`.
    pub fn aligned(dim: usize, n_omega: usize) -> Result<Self> {
        match dim {
            2 => {
                if n_omega < 1 {
                    return Err(Error::Invalid("need at least one angle".into()));
                }
                let mut omegas = Vec::with_capacity(2 * n_omega);
                for k in 0..n_omega {
                    let phi = 2.0 * PI * k as f64 / n_omega as f64;
                    omegas.push(phi.cos());
                    omegas.push(phi.sin());
                }
                Ok(SphereRule { dim, omegas, weights: vec![2.0 * PI / n_omega as f64; n_omega] })
            }
            3 => {
                let n_pol = (n_omega as f64).sqrt().floor() as usize;
                if n_pol == 0 || n_omega % n_pol != 0 {
                    return Err(Error::Invalid(format!(
                        "n_omega = {n_omega} must factor as floor(sqrt(n)) times an azimuth count"
                    )));
                }
                let n_az = n_omega / n_pol;
                let (mu, wmu) = gauss_legendre(n_pol);
                let mut omegas = Vec::with_capacity(3 * n_omega);
                let mut weights = Vec::with_capacity(n_omega);
                for (m, wm) in mu.iter().zip(&wmu) {
                    let s = (1.0 - m * m).sqrt();
                    for k in 0..n_az {
                        let phi = 2.0 * PI * k as f64 / n_az as f64;
                        omegas.extend_from_slice(&[*m, s * phi.cos(), s * phi.sin()]);
                        weights.push(wm * 2.0 * PI / n_az as f64);
                    }
                }
                Ok(SphereRule { dim, omegas, weights })
            }
            _ => Err(Error::Invalid(format!("dimension {dim} not supported"))),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn omega(&self, i: usize) -> &[f64] {
        &self.omegas[i * self.dim..(i + 1) * self.dim]
    }
}

/// Orthonormal frame whose first column is the unit vector `n`.
fn frame_for(n: &[f64]) -> [[f64; 3]; 3] {
    let mut f = [[0.0; 3]; 3];
    if n.len() == 2 {
        f[0] = [n[0], n[1], 0.0];
        f[1] = [-n[1], n[0], 0.0];
        return f;
    }
    let e0 = [n[0], n[1], n[2]];
    let pick = if e0[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let d = pick[0] * e0[0] + pick[1] * e0[1] + pick[2] * e0[2];
    let mut e1 = [pick[0] - d * e0[0], pick[1] - d * e0[1], pick[2] - d * e0[2]];
    let l = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    e1.iter_mut().for_each(|x| *x /= l);
    let e2 = [
        e0[1] * e1[2] - e0[2] * e1[1],
        e0[2] * e1[0] - e0[0] * e1[2],
        e0[0] * e1[1] - e0[1] * e1[0],
    ];
    [e0, e1, e2]
}

/// Uniform isotropic grid `[-wmax, wmax]^D` with `n` nodes per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct VelGrid {
    pub dim: usize,
    pub n: usize,
    pub wmax: f64,
}

impl VelGrid {
    pub fn spacing(&self) -> f64 {
        2.0 * self.wmax / (self.n - 1) as f64
    }
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn axis(&self, i: usize) -> f64 {
        -self.wmax + i as f64 * self.spacing()
    }
    pub fn multi_index(&self, mut k: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for a in (0..self.dim).rev() {
            out[a] = k % self.n;
            k /= self.n;
        }
        out
    }
    pub fn node(&self, k: usize) -> [f64; 3] {
        let mi = self.multi_index(k);
        let mut out = [0.0; 3];
        for a in 0..self.dim {
            out[a] = self.axis(mi[a]);
        }
        out
    }
    /// Standard Gaussian density `(2π)^{-D/2} e^{-|w|²/2}` at every node.
    pub fn gaussian(&self) -> Vec<f64> {
        let norm = (2.0 * PI).powf(-(self.dim as f64) / 2.0);
        (0..self.len())
            .map(|k| {
                let w = self.node(k);
                norm * (-0.5 * (0..self.dim).map(|a| w[a] * w[a]).sum::<f64>()).exp()
            })
            .collect()
    }
}

/// Mean of `|z|^β` over the unit cell `[-½, ½]^D`.
pub fn cell_average_power(beta: f64, dim: usize) -> f64 {
    // pyramids from the centre to each of the 2D faces; the radial factor
    // integrates to 1/(β + D)
    let (x, w) = gauss_legendre(24);
    let face = if dim == 2 {
        x.iter().zip(&w).map(|(e, wt)| 0.5 * wt * (0.25 + 0.25 * e * e).powf(beta / 2.0)).sum::<f64>()
    } else {
        let mut s = 0.0;
        for (e1, w1) in x.iter().zip(&w) {
            for (e2, w2) in x.iter().zip(&w) {
                s += 0.25 * w1 * w2 * (0.25 + 0.25 * e1 * e1 + 0.25 * e2 * e2).powf(beta / 2.0);
            }
        }
        s
    };
    2.0 * dim as f64 * 0.5 / (beta + dim as f64) * face
}

/// Batch width of [`VelocityCollision::gain_loss_many`].
pub const LANES: usize = 16;

/// Interpolation of the relative density at off-grid velocities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    /// Multilinear; nonnegative weights, second order.
    Linear,
    /// Tensor cubic Lagrange; fourth order.
    #[default]
    Cubic,
}

/// Precomputed index-space collision stencils on a [`VelGrid`] shape.
///
/// Everything here depends only on the node count, the sphere rule and the
/// kernel; the physical spacing enters as the scalar `δ^{D+β}`. Stencils
/// address a copy of `h` padded by one replicated layer on every side.
#[derive(Clone, Debug)]
pub struct VelocityCollision {
    pub dim: usize,
    pub n: usize,
    pub beta: f64,
    pub n_groups: usize,
    pub interp: Interp,
    /// Discrete total angular weight used by both gain and loss.
    pub bbar_disc: f64,
    group_w_kj: Vec<f64>,
    group_w_jk: Vec<f64>,
    symmetric: bool,
    pair_k: Vec<u32>,
    pair_j: Vec<u32>,
    /// `|k - j|^β` in index units.
    pair_kern: Vec<f64>,
    kern_self: f64,
    tap_base: Vec<u32>,
    tap_frac: Vec<f64>,
    sphere: SphereRule,
    kernel: KernelSpec,
}

impl VelocityCollision {
    pub fn new(kernel: &KernelSpec, n: usize, n_omega: usize) -> Result<Self> {
        Self::with_interp(kernel, n, n_omega, Interp::default())
    }

    pub fn with_interp(kernel: &KernelSpec, n: usize, n_omega: usize, interp: Interp) -> Result<Self> {
        Self::build(kernel, n, n_omega, interp, true)
    }

    /// Same operator without the pair stencil tables; only the bilinear and
    /// rate paths are available. Used where the tables would not fit.
    pub fn lean(kernel: &KernelSpec, n: usize, n_omega: usize, interp: Interp) -> Result<Self> {
        Self::build(kernel, n, n_omega, interp, false)
    }

    fn build(kernel: &KernelSpec, n: usize, n_omega: usize, interp: Interp, tables: bool) -> Result<Self> {
        let dim = kernel.dim;
        if n < 4 {
            return Err(Error::Invalid("velocity grid needs at least 4 nodes per axis".into()));
        }
        let sphere = SphereRule::aligned(dim, n_omega)?;
        // group directions that produce the same unordered post-collision pair
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut reps: Vec<([f64; 3], [f64; 3])> = Vec::new();
        for i in 0..sphere.len() {
            let om = sphere.omega(i);
            let mut a = [0.0; 3];
            let mut b = [0.0; 3];
            for d in 0..dim {
                a[d] = if d == 0 { 1.0 } else { 0.0 } - om[0] * om[d];
                b[d] = om[0] * om[d];
            }
            let same = |p: &[f64; 3], q: &[f64; 3]| (0..dim).all(|d| (p[d] - q[d]).abs() < 1e-12);
            match reps.iter().position(|(ra, rb)| (same(ra, &a) && same(rb, &b)) || (same(ra, &b) && same(rb, &a))) {
                Some(g) => groups[g].push(i),
                None => {
                    reps.push((a, b));
                    groups.push(vec![i]);
                }
            }
        }
        let group_w_kj: Vec<f64> = groups
            .iter()
            .map(|g| g.iter().map(|&i| sphere.weights[i] * kernel.bhat.eval(sphere.omega(i)[0])).sum())
            .collect();
        let group_w_jk: Vec<f64> = groups
            .iter()
            .map(|g| g.iter().map(|&i| sphere.weights[i] * kernel.bhat.eval(-sphere.omega(i)[0])).sum())
            .collect();
        let bbar_disc = group_w_kj.iter().sum();
        let symmetric = group_w_kj.iter().zip(&group_w_jk).all(|(a, b)| (a - b).abs() <= 1e-15 * a.abs().max(1.0));
        let rep_omega: Vec<usize> = groups.iter().map(|g| g[0]).collect();

        let mut op = VelocityCollision {
            dim,
            n,
            beta: kernel.beta,
            n_groups: groups.len(),
            interp,
            bbar_disc,
            group_w_kj,
            group_w_jk,
            symmetric,
            pair_k: Vec::new(),
            pair_j: Vec::new(),
            pair_kern: Vec::new(),
            kern_self: cell_average_power(kernel.beta, dim),
            tap_base: Vec::new(),
            tap_frac: Vec::new(),
            sphere,
            kernel: kernel.clone(),
        };
        if !tables {
            return Ok(op);
        }
        let grid = VelGrid { dim, n, wmax: 1.0 };
        let nn = grid.len();
        let npairs = nn * (nn - 1) / 2;
        let ntaps = npairs * rep_omega.len() * 2;
        if ntaps > 400_000_000 {
            return Err(Error::Invalid(format!("{ntaps} collision stencils exceed the table limit")));
        }
        op.pair_k.reserve(npairs);
        op.pair_j.reserve(npairs);
        op.pair_kern.reserve(npairs);
        op.tap_base.reserve(ntaps);
        op.tap_frac.reserve(ntaps * dim);
        for k in 0..nn {
            let ik = grid.multi_index(k);
            for j in (k + 1)..nn {
                let ij = grid.multi_index(j);
                let (glen, om_list) = op.pair_geometry(&ik, &ij, &rep_omega);
                op.pair_k.push(k as u32);
                op.pair_j.push(j as u32);
                op.pair_kern.push(glen.powf(kernel.beta));
                for (vp, vsp) in om_list {
                    for p in [vp, vsp] {
                        let (b, fr) = op.locate(&p);
                        op.tap_base.push(b as u32);
                        op.tap_frac.extend_from_slice(&fr[..dim]);
                    }
                }
            }
        }
        Ok(op)
    }

    /// `|k - j|` and the post-collision index positions for each listed
    /// aligned direction.
    fn pair_geometry(&self, ik: &[usize; 3], ij: &[usize; 3], omegas: &[usize]) -> (f64, Vec<([f64; 3], [f64; 3])>) {
        let dim = self.dim;
        let mut g = [0.0; 3];
        let mut g2 = 0.0;
        for d in 0..dim {
            g[d] = ik[d] as f64 - ij[d] as f64;
            g2 += g[d] * g[d];
        }
        let glen = g2.sqrt();
        let nvec: Vec<f64> = (0..dim).map(|d| g[d] / glen).collect();
        let fr = frame_for(&nvec);
        let out = omegas
            .iter()
            .map(|&oi| {
                let al = self.sphere.omega(oi);
                let mut om = [0.0; 3];
                for d in 0..dim {
                    for (e, fe) in fr.iter().enumerate().take(dim) {
                        om[d] += al[e] * fe[d];
                    }
                }
                let proj = glen * al[0];
                let mut vp = [0.0; 3];
                let mut vsp = [0.0; 3];
                for d in 0..dim {
                    vp[d] = ik[d] as f64 - proj * om[d];
                    vsp[d] = ij[d] as f64 + proj * om[d];
                }
                (vp, vsp)
            })
            .collect();
        (glen, out)
    }

    fn padded_n(&self) -> usize {
        self.n + 2
    }

    /// Lower-corner index in the padded array and fractional offsets.
    fn locate(&self, p: &[f64; 3]) -> (usize, [f64; 3]) {
        let np = self.padded_n();
        let mut base = 0;
        let mut fr = [0.0; 3];
        for d in 0..self.dim {
            let (i0, f) = crate::quad::linear_stencil(p[d], self.n);
            base = base * np + i0 + 1;
            fr[d] = f;
        }
        (base, fr)
    }

    /// Copy of `h` with one replicated ghost layer per side.
    pub fn pad(&self, h: &[f64]) -> Vec<f64> {
        let n = self.n;
        let np = self.padded_n();
        let c = |i: usize| i.clamp(1, n) - 1;
        if self.dim == 2 {
            let mut out = vec![0.0; np * np];
            for i in 0..np {
                for j in 0..np {
                    out[i * np + j] = h[c(i) * n + c(j)];
                }
            }
            out
        } else {
            let mut out = vec![0.0; np * np * np];
            for i in 0..np {
                for j in 0..np {
                    for k in 0..np {
                        out[(i * np + j) * np + k] = h[(c(i) * n + c(j)) * n + c(k)];
                    }
                }
            }
            out
        }
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn sphere(&self) -> &SphereRule {
        &self.sphere
    }

    pub fn n_pairs(&self) -> usize {
        self.pair_k.len()
    }

    #[inline(always)]
    fn eval_at(&self, hp: &[f64], b: usize, fr: &[f64]) -> f64 {
        let np = self.padded_n();
        match (self.dim, self.interp) {
            (2, Interp::Linear) => {
                let (fx, fy) = (fr[0], fr[1]);
                let h00 = hp[b];
                let h01 = hp[b + 1];
                let h10 = hp[b + np];
                let h11 = hp[b + np + 1];
                let a0 = h00 + fy * (h01 - h00);
                let a1 = h10 + fy * (h11 - h10);
                a0 + fx * (a1 - a0)
            }
            (2, Interp::Cubic) => {
                let wx = crate::quad::cubic_weights(fr[0]);
                let wy = crate::quad::cubic_weights(fr[1]);
                let mut s = 0.0;
                let mut row = b - np - 1;
                for wxi in wx {
                    let r = &hp[row..row + 4];
                    s += wxi * (wy[0] * r[0] + wy[1] * r[1] + wy[2] * r[2] + wy[3] * r[3]);
                    row += np;
                }
                s
            }
            (_, Interp::Linear) => {
                let (f0, f1, f2) = (fr[0], fr[1], fr[2]);
                let s0 = np * np;
                let l = |o: usize| {
                    let a = hp[b + o];
                    a + f2 * (hp[b + o + 1] - a)
                };
                let c00 = l(0);
                let c01 = l(np);
                let c10 = l(s0);
                let c11 = l(s0 + np);
                let c0 = c00 + f1 * (c01 - c00);
                let c1 = c10 + f1 * (c11 - c10);
                c0 + f0 * (c1 - c0)
            }
            (_, Interp::Cubic) => {
                let w0 = crate::quad::cubic_weights(fr[0]);
                let w1 = crate::quad::cubic_weights(fr[1]);
                let w2 = crate::quad::cubic_weights(fr[2]);
                let s0 = np * np;
                let mut s = 0.0;
                for (a, wa) in w0.iter().enumerate() {
                    for (c, wc) in w1.iter().enumerate() {
                        let r = b + a * s0 + c * np - s0 - np - 1;
                        let r = &hp[r..r + 4];
                        s += wa * wc * (w2[0] * r[0] + w2[1] * r[1] + w2[2] * r[2] + w2[3] * r[3]);
                    }
                }
                s
            }
        }
    }

    #[inline(always)]
    fn tap(&self, hp: &[f64], t: usize) -> f64 {
        let d = self.dim;
        self.eval_at(hp, self.tap_base[t] as usize, &self.tap_frac[d * t..d * t + d])
    }

    /// Relative density interpolated at an index-space position.
    pub fn interpolate(&self, hp: &[f64], p: &[f64; 3]) -> f64 {
        let (b, fr) = self.locate(p);
        self.eval_at(hp, b, &fr)
    }

    /// Gain and loss of `Q(h, h)` in index units: the physical relative
    /// collision term is `ρ θ^{β/2} δ^{D+β} (gain - loss)`.
    ///
    /// `g` holds the Gaussian weights of the nodes; pairs whose both weights
    /// fall below `cut` are skipped.
    pub fn gain_loss(&self, h: &[f64], g: &[f64], cut: f64, gain: &mut [f64], loss: &mut [f64]) {
        assert!(!self.tap_base.is_empty(), "stencil tables were not built");
        let hp = self.pad(h);
        let nn = h.len();
        gain.iter_mut().for_each(|x| *x = 0.0);
        let mut a = vec![0.0; nn];
        for k in 0..nn {
            let s = g[k] * self.kern_self;
            a[k] = s * h[k];
            gain[k] = s * h[k] * h[k] * self.bbar_disc;
        }
        let ng = self.n_groups;
        for p in 0..self.pair_k.len() {
            let k = self.pair_k[p] as usize;
            let j = self.pair_j[p] as usize;
            let (gk, gj) = (g[k], g[j]);
            if gk < cut && gj < cut {
                continue;
            }
            let kk = self.pair_kern[p];
            let t0 = p * ng * 2;
            let mut s_kj = 0.0;
            let mut s_jk = 0.0;
            for gi in 0..ng {
                let prod = self.tap(&hp, t0 + 2 * gi) * self.tap(&hp, t0 + 2 * gi + 1);
                s_kj += self.group_w_kj[gi] * prod;
                if !self.symmetric {
                    s_jk += self.group_w_jk[gi] * prod;
                }
            }
            if self.symmetric {
                s_jk = s_kj;
            }
            gain[k] += kk * gj * s_kj;
            gain[j] += kk * gk * s_jk;
            a[k] += kk * gj * h[j];
            a[j] += kk * gk * h[k];
        }
        for k in 0..nn {
            loss[k] = self.bbar_disc * h[k] * a[k];
        }
    }

    /// [`gain_loss`](Self::gain_loss) for many relative densities sharing the
    /// same Gaussian weights; densities are processed in lanes of [`LANES`].
    pub fn gain_loss_many(&self, hs: &[Vec<f64>], g: &[f64], cut: f64) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut out = Vec::with_capacity(hs.len());
        for chunk in hs.chunks(LANES) {
            out.extend(self.gain_loss_lanes(chunk, g, cut));
        }
        out
    }

    fn gain_loss_lanes(&self, hs: &[Vec<f64>], g: &[f64], cut: f64) -> Vec<(Vec<f64>, Vec<f64>)> {
        #[cfg(target_arch = "x86_64")]
        {
            if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
                // SAFETY: the required CPU features were detected at runtime
                return unsafe { self.gain_loss_lanes_avx2(hs, g, cut) };
            }
        }
        self.gain_loss_lanes_generic(hs, g, cut)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn gain_loss_lanes_avx2(&self, hs: &[Vec<f64>], g: &[f64], cut: f64) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.gain_loss_lanes_generic(hs, g, cut)
    }

    #[inline(always)]
    fn gain_loss_lanes_generic(&self, hs: &[Vec<f64>], g: &[f64], cut: f64) -> Vec<(Vec<f64>, Vec<f64>)> {
        assert!(!self.tap_base.is_empty(), "stencil tables were not built");
        const L: usize = LANES;
        let nn = g.len();
        let pads: Vec<Vec<f64>> = hs.iter().map(|h| self.pad(h)).collect();
        let mut hp = vec![[0.0; L]; pads[0].len()];
        for (l, p) in pads.iter().enumerate() {
            for (i, v) in p.iter().enumerate() {
                hp[i][l] = *v;
            }
        }
        let mut h = vec![[0.0; L]; nn];
        for (l, hv) in hs.iter().enumerate() {
            for k in 0..nn {
                h[k][l] = hv[k];
            }
        }
        let np = self.padded_n();
        let d = self.dim;
        let (gain, a) = match (d, self.interp) {
            (2, Interp::Linear) => self.pair_loop(&h, g, cut, |t| {
                let b = self.tap_base[t] as usize;
                let (fx, fy) = (self.tap_frac[2 * t], self.tap_frac[2 * t + 1]);
                let w = [(1.0 - fx) * (1.0 - fy), (1.0 - fx) * fy, fx * (1.0 - fy), fx * fy];
                let rows = [&hp[b..b + 2], &hp[b + np..b + np + 2]];
                let mut out = [0.0; L];
                for l in 0..L {
                    out[l] = w[0] * rows[0][0][l] + w[1] * rows[0][1][l] + w[2] * rows[1][0][l] + w[3] * rows[1][1][l];
                }
                out
            }),
            (2, Interp::Cubic) => self.pair_loop(&h, g, cut, |t| {
                let b = self.tap_base[t] as usize;
                let wx = crate::quad::cubic_weights(self.tap_frac[2 * t]);
                let wy = crate::quad::cubic_weights(self.tap_frac[2 * t + 1]);
                let mut out = [0.0; L];
                let mut row = b - np - 1;
                for wxi in wx {
                    let r = &hp[row..row + 4];
                    let mut acc = [0.0; L];
                    for l in 0..L {
                        acc[l] = wy[0] * r[0][l] + wy[1] * r[1][l] + wy[2] * r[2][l] + wy[3] * r[3][l];
                    }
                    for l in 0..L {
                        out[l] += wxi * acc[l];
                    }
                    row += np;
                }
                out
            }),
            _ => self.pair_loop(&h, g, cut, |t| {
                let b = self.tap_base[t] as usize;
                let fr = &self.tap_frac[d * t..d * t + d];
                let lo = if self.interp == Interp::Linear { 0 } else { 1 };
                let m = if lo == 0 { 2 } else { 4 };
                let wts = |f: f64| if lo == 0 { [1.0 - f, f, 0.0, 0.0] } else { crate::quad::cubic_weights(f) };
                let (w0, w1, w2) = (wts(fr[0]), wts(fr[1]), wts(fr[2]));
                let s0 = np * np;
                let mut out = [0.0; L];
                for i0 in 0..m {
                    for i1 in 0..m {
                        let r = b + i0 * s0 + i1 * np - lo * (s0 + np + 1);
                        let w01 = w0[i0] * w1[i1];
                        for i2 in 0..m {
                            let wt = w01 * w2[i2];
                            let v = &hp[r + i2];
                            for l in 0..L {
                                out[l] += wt * v[l];
                            }
                        }
                    }
                }
                out
            }),
        };
        (0..hs.len())
            .map(|l| {
                let gl: Vec<f64> = (0..nn).map(|k| gain[k][l]).collect();
                let ll: Vec<f64> = (0..nn).map(|k| self.bbar_disc * h[k][l] * a[k][l]).collect();
                (gl, ll)
            })
            .collect()
    }

    /// Pair sweep shared by every interpolation kind; returns gain and the
    /// loss-rate sums per node and lane.
    #[inline(always)]
    #[allow(clippy::type_complexity)]
    fn pair_loop<E: Fn(usize) -> [f64; LANES]>(
        &self,
        h: &[[f64; LANES]],
        g: &[f64],
        cut: f64,
        eval: E,
    ) -> (Vec<[f64; LANES]>, Vec<[f64; LANES]>) {
        const L: usize = LANES;
        let nn = g.len();
        let mut gain = vec![[0.0; L]; nn];
        let mut a = vec![[0.0; L]; nn];
        for k in 0..nn {
            let s = g[k] * self.kern_self;
            for l in 0..L {
                a[k][l] = s * h[k][l];
                gain[k][l] = s * h[k][l] * h[k][l] * self.bbar_disc;
            }
        }
        let ng = self.n_groups;
        for p in 0..self.pair_k.len() {
            let k = self.pair_k[p] as usize;
            let j = self.pair_j[p] as usize;
            let (gk, gj) = (g[k], g[j]);
            if gk < cut && gj < cut {
                continue;
            }
            let kk = self.pair_kern[p];
            let t0 = p * ng * 2;
            let mut s_kj = [0.0; L];
            let mut s_jk = [0.0; L];
            for gi in 0..ng {
                let x = eval(t0 + 2 * gi);
                let y = eval(t0 + 2 * gi + 1);
                let (wa, wb) = (self.group_w_kj[gi], self.group_w_jk[gi]);
                for l in 0..L {
                    let prod = x[l] * y[l];
                    s_kj[l] += wa * prod;
                    s_jk[l] += wb * prod;
                }
            }
            let (ck, cj) = (kk * gj, kk * gk);
            for l in 0..L {
                gain[k][l] += ck * s_kj[l];
                gain[j][l] += cj * s_jk[l];
                a[k][l] += ck * h[j][l];
                a[j][l] += cj * h[k][l];
            }
        }
        (gain, a)
    }

    /// Loss-rate integral `Σ_j g_j |k - j|^β h_j` in index units.
    pub fn rate(&self, h: &[f64], g: &[f64]) -> Vec<f64> {
        let grid = VelGrid { dim: self.dim, n: self.n, wmax: 1.0 };
        let nn = h.len();
        let mut a = vec![0.0; nn];
        for k in 0..nn {
            let ik = grid.multi_index(k);
            let mut s = g[k] * self.kern_self * h[k];
            for j in 0..nn {
                if j == k {
                    continue;
                }
                let ij = grid.multi_index(j);
                let r2: f64 = (0..self.dim).map(|d| (ik[d] as f64 - ij[d] as f64).powi(2)).sum();
                s += r2.sqrt().powf(self.beta) * g[j] * h[j];
            }
            a[k] = s;
        }
        a
    }

    /// Gain and loss of the genuinely bilinear `Q(f, g)` without the pair
    /// symmetry shortcut. Slower; used for the pointwise diagnostics.
    pub fn gain_loss_bilinear(&self, hf: &[f64], hg: &[f64], gw: &[f64], gain: &mut [f64], loss: &mut [f64]) {
        let dim = self.dim;
        let grid = VelGrid { dim, n: self.n, wmax: 1.0 };
        let nn = grid.len();
        let fp = self.pad(hf);
        let gp = self.pad(hg);
        let all: Vec<usize> = (0..self.sphere.len()).collect();
        let bw: Vec<f64> = all
            .iter()
            .map(|&i| self.sphere.weights[i] * self.kernel.bhat.eval(self.sphere.omega(i)[0]))
            .collect();
        for k in 0..nn {
            let ik = grid.multi_index(k);
            let mut gsum = gw[k] * self.kern_self * self.bbar_disc * hf[k] * hg[k];
            let mut asum = gw[k] * self.kern_self * hg[k];
            for j in 0..nn {
                if j == k {
                    continue;
                }
                let ij = grid.multi_index(j);
                let (glen, posts) = self.pair_geometry(&ik, &ij, &all);
                let kk = glen.powf(self.beta);
                let mut s = 0.0;
                for (i, (vp, vsp)) in posts.iter().enumerate() {
                    s += bw[i] * self.interpolate(&fp, vp) * self.interpolate(&gp, vsp);
                }
                gsum += gw[j] * kk * s;
                asum += gw[j] * kk * hg[j];
            }
            gain[k] = gsum;
            loss[k] = self.bbar_disc * hf[k] * asum;
        }
    }
}

/// A velocity distribution at one point `(x, t)`, stored as `h = F/M[ρ,u,θ]`
/// on the scaled grid `v = u + √θ w`.
#[derive(Clone, Debug)]
pub struct VelocityField {
    pub grid: VelGrid,
    pub rho: f64,
    pub u: Vec<f64>,
    pub theta: f64,
    pub h: Vec<f64>,
}

/// Collision moments `∫ B(F, F) (1, v, ½|v|²) dv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeakForm {
    pub mass: f64,
    pub momentum: Vec<f64>,
    pub energy: f64,
    /// `b̄ ρ² θ^{β/2}`-type scale used to judge the residuals.
    pub scale: f64,
}

impl VelocityField {
    /// Samples `f` on the grid scaled to the reference `M[ρ, u, θ]`.
    pub fn sample<F: Fn(&[f64]) -> f64>(grid: VelGrid, rho: f64, u: Vec<f64>, theta: f64, f: F) -> Self {
        let d = grid.dim;
        let st = theta.sqrt();
        let h = (0..grid.len())
            .map(|k| {
                let w = grid.node(k);
                let v: Vec<f64> = (0..d).map(|a| u[a] + st * w[a]).collect();
                f(&v) / local_maxwellian(rho, &u, theta, &v)
            })
            .collect();
        VelocityField { grid, rho, u, theta, h }
    }

    /// Samples `f` against the local Maxwellian with the same mass, momentum
    /// and energy. The moments are computed on two successively adapted
    /// fine grids.
    pub fn sample_moment_matched<F: Fn(&[f64]) -> f64>(grid: VelGrid, f: F) -> Self {
        let d = grid.dim;
        let mut rho = 1.0;
        let mut u = vec![0.0; d];
        let mut theta: f64 = 1.0;
        for half in [16.0, 9.0] {
            let fine = VelGrid { dim: d, n: 129, wmax: half };
            let dv = fine.spacing() * theta.sqrt();
            let cell = dv.powi(d as i32);
            let mut m0 = 0.0;
            let mut m1 = vec![0.0; d];
            let mut m2 = 0.0;
            for k in 0..fine.len() {
                let w = fine.node(k);
                let v: Vec<f64> = (0..d).map(|a| u[a] + theta.sqrt() * w[a]).collect();
                let fv = f(&v) * cell;
                m0 += fv;
                for a in 0..d {
                    m1[a] += fv * v[a];
                }
                m2 += fv * v.iter().map(|x| x * x).sum::<f64>();
            }
            rho = m0;
            u = m1.iter().map(|x| x / m0).collect();
            let uu: f64 = u.iter().map(|x| x * x).sum();
            theta = (m2 / m0 - uu) / d as f64;
        }
        Self::sample(grid, rho, u, theta, f)
    }

    pub fn velocity(&self, k: usize) -> Vec<f64> {
        let w = self.grid.node(k);
        let st = self.theta.sqrt();
        (0..self.grid.dim).map(|a| self.u[a] + st * w[a]).collect()
    }

    pub fn density(&self, k: usize) -> f64 {
        self.h[k] * local_maxwellian(self.rho, &self.u, self.theta, &self.velocity(k))
    }

    fn prefactor(&self, op: &VelocityCollision) -> f64 {
        let delta = self.grid.spacing();
        self.rho * self.theta.powf(op.beta / 2.0) * delta.powf(self.grid.dim as f64 + op.beta)
    }

    /// `A(F)` at every node.
    pub fn loss_rate(&self, op: &VelocityCollision) -> Vec<f64> {
        let g = self.grid.gaussian();
        let pre = self.prefactor(op) * op.kernel.bbar;
        op.rate(&self.h, &g).into_iter().map(|a| pre * a).collect()
    }

    /// `B±(F, G)/M` at every node; `other` must share grid and reference.
    pub fn collision_bilinear(&self, other: &VelocityField, op: &VelocityCollision) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.grid != other.grid || self.rho != other.rho || self.u != other.u || self.theta != other.theta {
            return Err(Error::Invalid("fields must share grid and reference".into()));
        }
        let g = self.grid.gaussian();
        let nn = self.grid.len();
        let mut gain = vec![0.0; nn];
        let mut loss = vec![0.0; nn];
        op.gain_loss_bilinear(&self.h, &other.h, &g, &mut gain, &mut loss);
        let pre = self.prefactor(op);
        gain.iter_mut().for_each(|x| *x *= pre);
        loss.iter_mut().for_each(|x| *x *= pre);
        Ok((gain, loss))
    }

    /// `B±(F, F)/M` at every node with the symmetric fast path.
    pub fn collision(&self, op: &VelocityCollision) -> (Vec<f64>, Vec<f64>) {
        let g = self.grid.gaussian();
        let nn = self.grid.len();
        let mut gain = vec![0.0; nn];
        let mut loss = vec![0.0; nn];
        op.gain_loss(&self.h, &g, 0.0, &mut gain, &mut loss);
        let pre = self.prefactor(op);
        gain.iter_mut().for_each(|x| *x *= pre);
        loss.iter_mut().for_each(|x| *x *= pre);
        (gain, loss)
    }

    fn weights(&self) -> Vec<f64> {
        let g = self.grid.gaussian();
        let cell = self.grid.spacing().powi(self.grid.dim as i32);
        g.iter().map(|x| self.rho * x * cell).collect()
    }

    pub fn weak_form_moments(&self, op: &VelocityCollision) -> WeakForm {
        let (gain, loss) = self.collision(op);
        let wts = self.weights();
        let d = self.grid.dim;
        let mut mass = 0.0;
        let mut mom = vec![0.0; d];
        let mut en = 0.0;
        for k in 0..self.grid.len() {
            let b = (gain[k] - loss[k]) * wts[k];
            let v = self.velocity(k);
            mass += b;
            for a in 0..d {
                mom[a] += b * v[a];
            }
            en += 0.5 * b * v.iter().map(|x| x * x).sum::<f64>();
        }
        let scale = op.kernel.bbar * self.rho * self.rho * self.theta.powf(op.beta / 2.0);
        WeakForm { mass, momentum: mom, energy: en, scale }
    }

    /// `∫ B(F, F) ln F dv`; every sampled density must be positive.
    ///
    /// `ln M[ρ,u,θ]` is a collision invariant, so the integral is evaluated as
    /// `∫ B(F, F) ln h dv`; this keeps the discrete conservation residual out
    /// of the sign.
    pub fn entropy_production(&self, op: &VelocityCollision) -> Result<f64> {
        if let Some(k) = self.h.iter().position(|&x| !(x > 0.0)) {
            return Err(Error::Positivity(format!(
                "velocity node {k} (v = {:?}, h = {})",
                self.velocity(k),
                self.h[k]
            )));
        }
        let (gain, loss) = self.collision(op);
        let wts = self.weights();
        let mut s = 0.0;
        for k in 0..self.grid.len() {
            s += (gain[k] - loss[k]) * wts[k] * self.h[k].ln();
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn post_collision_examples() {
        let (a, b) = post_collision(&[1.0, 0.0], &[-1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!((a, b), (vec![1.0, 0.0], vec![-1.0, 0.0]));
        let (a, b) = post_collision(&[1.0, 0.0], &[-1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_eq!((a, b), (vec![-1.0, 0.0], vec![1.0, 0.0]));
        let s = 0.5f64.sqrt();
        let (a, b) = post_collision(&[1.0, 0.0], &[-1.0, 0.0], &[s, s]).unwrap();
        assert!((a[0]).abs() < 1e-15 && (a[1] + 1.0).abs() < 1e-15);
        assert!((b[0]).abs() < 1e-15 && (b[1] - 1.0).abs() < 1e-15);
        assert!(post_collision(&[1.0, 0.0], &[0.0, 0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn a_beta_closed_forms() {
        assert!((a_beta_zero(-1.0, 3) - (2.0 / PI).sqrt()).abs() < 1e-12);
        assert!((a_beta_zero(1.0, 2) - (PI / 2.0).sqrt()).abs() < 1e-12);
        assert!((a_beta_zero(0.0, 2) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cell_average_of_constant_is_one() {
        assert!((cell_average_power(0.0, 2) - 1.0).abs() < 1e-14);
        assert!((cell_average_power(0.0, 3) - 1.0).abs() < 1e-14);
        // mean of |z|^2 over the unit square is 1/6
        assert!((cell_average_power(2.0, 2) - 1.0 / 6.0).abs() < 1e-13);
        assert!((cell_average_power(2.0, 3) - 0.25).abs() < 1e-13);
    }

    #[test]
    fn bbar_for_constant_and_table() {
        let k = KernelSpec::constant(2, 0.0, 1.0).unwrap();
        assert!((k.bbar - 2.0 * PI).abs() < 1e-14);
        let t = AngularWeight::Table { cosines: vec![-1.0, 1.0], values: vec![0.0, 2.0] };
        let k3 = KernelSpec::new(3, 0.0, t).unwrap();
        assert!((k3.bbar - 4.0 * PI).abs() < 1e-10);
    }

    #[test]
    fn kernel_json_forms() {
        let j: KernelJson = serde_json::from_str(r#"{"beta": 0.0, "bhat": "constant:1", "D": 2}"#).unwrap();
        let k = KernelSpec::from_json(&j).unwrap();
        assert!((k.bbar - 2.0 * PI).abs() < 1e-14);
        let j2: KernelJson =
            serde_json::from_str(r#"{"beta": -0.5, "bhat": {"cosines": [-1, 1], "weights": [1, 1]}, "D": 2, "bbar": 1.0}"#)
                .unwrap();
        assert!(KernelSpec::from_json(&j2).is_err());
        let back = serde_json::to_string(&k.to_json()).unwrap();
        let k2 = KernelSpec::from_json(&serde_json::from_str(&back).unwrap()).unwrap();
        assert_eq!(k, k2);
    }

    #[test]
    fn beta_ranges() {
        assert!(KernelSpec::constant(2, -3.0, 1.0).is_err());
        assert!(KernelSpec::constant(2, -1.0, 1.0).is_err());
        let k = KernelSpec::constant(2, 1.5, 1.0).unwrap();
        assert!(k.check_range(KernelUse::Solver).is_err());
        let k = KernelSpec::constant(2, 0.5, 1.0).unwrap();
        assert!(k.check_range(KernelUse::SupNorm).is_err());
        assert!(k.check_range(KernelUse::Solver).is_ok());
    }

    #[test]
    fn d2_groups_fold_quarter_turns() {
        let k = KernelSpec::constant(2, 0.0, 1.0).unwrap();
        let op = VelocityCollision::new(&k, 6, 16).unwrap();
        assert_eq!(op.n_groups, 4);
        assert!((op.bbar_disc - 2.0 * PI).abs() < 1e-13);
        let k3 = KernelSpec::constant(3, 0.0, 1.0).unwrap();
        let op3 = VelocityCollision::new(&k3, 4, 16).unwrap();
        assert_eq!(op3.n_groups, 8);
        assert!((op3.bbar_disc - 4.0 * PI).abs() < 1e-12);
    }
}
