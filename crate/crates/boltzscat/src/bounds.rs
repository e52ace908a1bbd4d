//! Dispersion constants μ(M), ν(M), the solution-radius algebra and time
//! truncation.
//!
//! Time integrals against `θ(t)^p` use `t = b/a + (κ/a) tan φ` with
//! `κ² = ac - b²`, which turns `θ^p dt` into `a^{p-1} κ^{1-2p} cos^{2p-2} φ dφ`.
//! Near `φ = ±π/2` the substitution `ψ = u^{1/(2p-1)}` (with `ψ = π/2 - |φ|`)
//! removes the endpoint singularity for every `p > ½`.

use crate::collision::{a_beta_series, a_beta_zero, KernelSpec, KernelUse};
use crate::maxwellian::GlobalMaxwellianParams;
use crate::quad::{gamma, graded, normal_tail, sphere_area, Kronecker};
use crate::{Error, Result};
use serde::Serialize;
use std::f64::consts::{FRAC_PI_2, PI};

pub const DEFAULT_SAMPLES: usize = 4096;
const QUAD_TOL: f64 = 1e-10;
/// Half-width of the sampling boxes in thermal widths.
const SAMPLE_BOX: f64 = 5.0;

/// Constants of the compactified time variable.
#[derive(Clone, Copy, Debug)]
struct TimeMap {
    a: f64,
    kappa: f64,
    t_star: f64,
}

impl TimeMap {
    fn new(p: &GlobalMaxwellianParams) -> Self {
        TimeMap { a: p.a(), kappa: p.kappa2().sqrt(), t_star: p.b() / p.a() }
    }

    fn t_of_phi(&self, phi: f64) -> f64 {
        self.t_star + self.kappa / self.a * phi.tan()
    }

    fn phi_of_t(&self, t: f64) -> f64 {
        ((t - self.t_star) * self.a / self.kappa).atan()
    }

    fn prefactor(&self, pexp: f64) -> f64 {
        self.a.powf(pexp - 1.0) * self.kappa.powf(1.0 - 2.0 * pexp)
    }

    /// `∫ θ^pexp g dt` over the side `φ ∈ side·(π/2 - psi_max, π/2)`.
    fn side<G: Fn(f64) -> f64>(&self, pexp: f64, side: f64, psi_max: f64, g: &G, tol: f64) -> Result<f64> {
        if psi_max <= 0.0 {
            return Ok(0.0);
        }
        let e = 2.0 * pexp - 1.0;
        let f = |u: f64| {
            let psi = u.powf(1.0 / e);
            let sinc = if psi < 1e-8 { 1.0 - psi * psi / 6.0 } else { psi.sin() / psi };
            let t = self.t_of_phi(side * (FRAC_PI_2 - psi));
            sinc.powf(2.0 * pexp - 2.0) / e * g(t)
        };
        Ok(self.prefactor(pexp) * graded(f, psi_max.powf(e), tol)?)
    }

    /// `∫_ℝ θ^pexp g dt`.
    fn whole<G: Fn(f64) -> f64>(&self, pexp: f64, g: &G, tol: f64) -> Result<f64> {
        Ok(self.side(pexp, 1.0, FRAC_PI_2, g, tol)? + self.side(pexp, -1.0, FRAC_PI_2, g, tol)?)
    }

    /// `∫_{t>T} θ^pexp dt` (`side = 1`) or `∫_{t<-T}` (`side = -1`).
    fn tail(&self, pexp: f64, t_cut: f64, side: f64) -> Result<f64> {
        let one = |_: f64| 1.0;
        let phi = self.phi_of_t(side * t_cut) * side;
        // distance of the cut from the far end of this side
        let psi = FRAC_PI_2 - phi;
        if psi <= FRAC_PI_2 {
            self.side(pexp, side, psi, &one, 1e-13)
        } else {
            // the cut lies on the other half: full half plus a piece of the other
            let full = self.side(pexp, side, FRAC_PI_2, &one, 1e-13)?;
            let other_full = self.side(pexp, -side, FRAC_PI_2, &one, 1e-13)?;
            let rest = self.side(pexp, -side, PI - psi, &one, 1e-13)?;
            Ok(full + other_full - rest)
        }
    }
}

/// `∫_ℝ θ(t)^p dt = √(π/a) q0^{½-p} Γ(p-½)/Γ(p)` with `q0 = (ac - b²)/a`.
pub fn theta_power_integral(p: &GlobalMaxwellianParams, pexp: f64) -> Result<f64> {
    if !(pexp > 0.5) {
        return Err(Error::Domain(format!("∫θ^p dt diverges for p = {pexp} ≤ ½")));
    }
    let q0 = p.kappa2() / p.a();
    Ok((PI / p.a()).sqrt() * q0.powf(0.5 - pexp) * gamma(pexp - 0.5) / gamma(pexp))
}

/// The same integral by quadrature in the compactified variable.
pub fn theta_power_integral_quad(p: &GlobalMaxwellianParams, pexp: f64) -> Result<f64> {
    if !(pexp > 0.5) {
        return Err(Error::Domain(format!("∫θ^p dt diverges for p = {pexp} ≤ ½")));
    }
    TimeMap::new(p).whole(pexp, &|_| 1.0, 1e-13)
}

/// Sup-norm prefactor `m b̄ √det(Q/2π) a_β(0)`.
fn mu_prefactor(p: &GlobalMaxwellianParams, k: &KernelSpec) -> f64 {
    let d = p.dim() as f64;
    p.m() * k.bbar * p.sqrt_det_q() * (2.0 * PI).powf(-d / 2.0) * a_beta_zero(k.beta, p.dim())
}

fn check_dims(p: &GlobalMaxwellianParams, k: &KernelSpec) -> Result<()> {
    if p.dim() != k.dim {
        return Err(Error::Invalid(format!("Maxwellian has D = {}, kernel has D = {}", p.dim(), k.dim)));
    }
    Ok(())
}

/// `a_β(r)` from the analytic series; smooth, unlike an interpolated table.
fn a_beta_r(k: &KernelSpec, r: f64) -> f64 {
    if k.beta == 0.0 {
        1.0
    } else {
        a_beta_series(r, k.beta, k.dim).unwrap_or(f64::NAN)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MuReport {
    pub bound: f64,
    pub numeric: f64,
    /// `∫θ^{(D+β)/2} dt`, closed form and quadrature.
    pub time_integral: f64,
    pub time_integral_quad: f64,
    /// `max(∫_0^∞, ∫_{-∞}^0)` version of the bound; reported only.
    pub sharpened: f64,
}

/// Closed-form bound on `μ(M)`.
pub fn mu_bound(p: &GlobalMaxwellianParams, k: &KernelSpec) -> Result<f64> {
    check_dims(p, k)?;
    k.check_range(KernelUse::SupNorm)?;
    let pexp = (k.dim as f64 + k.beta) / 2.0;
    Ok(mu_prefactor(p, k) * theta_power_integral(p, pexp)?)
}

/// `μ(M)`: closed-form bound and the time quadrature of the sampled sup of
/// `A(M)(t)` over `(v, x)`.
pub fn mu_of_m(p: &GlobalMaxwellianParams, k: &KernelSpec, samples: usize) -> Result<MuReport> {
    check_dims(p, k)?;
    k.check_range(KernelUse::SupNorm)?;
    let d = p.dim();
    let pexp = (d as f64 + k.beta) / 2.0;
    let pref = mu_prefactor(p, k);
    let ti = theta_power_integral(p, pexp)?;
    let tm = TimeMap::new(p);
    let tq = tm.whole(pexp, &|_| 1.0, 1e-13)?;
    // the sharpened constant splits the time line at t = 0
    let pos = tm.tail(pexp, 0.0, 1.0)?;
    let neg = tq - pos;

    let lam_min = p.q().clone().symmetric_eigen().eigenvalues.min();
    let mut kr = Kronecker::new(2 * d);
    let pts: Vec<Vec<f64>> = (0..samples.max(1))
        .map(|_| kr.next_point().iter().map(|s| SAMPLE_BOX * (2.0 * s - 1.0)).collect())
        .collect();
    // velocities are sampled as v = u + √θ w, so |v - u| = √θ|w| is used
    // directly instead of differencing two large numbers at large |t|
    let sup_at = |t: f64| {
        let theta = p.theta(t);
        let sx = 1.0 / (theta * lam_min).sqrt();
        crate::par::max(pts.len(), |i| {
            let s = &pts[i];
            let mut x = [0.0; 3];
            for j in 0..d {
                x[j] = p.x0()[j] + t * p.v0()[j] + sx * s[d + j];
            }
            let (rho, _, _) = p.hydro_at(&x[..d], t);
            let w = s[..d].iter().map(|c| c * c).sum::<f64>().sqrt();
            k.bbar * rho * theta.powf(k.beta / 2.0) * a_beta_r(k, w)
        }) / theta.powf(pexp)
    };
    let numeric = tm.whole(pexp, &sup_at, QUAD_TOL)?;
    Ok(MuReport {
        bound: pref * ti,
        numeric,
        time_integral: ti,
        time_integral_quad: tq,
        sharpened: pref * pos.max(neg),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct NuReport {
    pub bound: f64,
    pub numeric: f64,
    /// Velocity and streamed position `x - tv` of the sampled maximizer.
    pub argmax_v: Vec<f64>,
    pub argmax_y: Vec<f64>,
}

/// Right-hand side of the closed-form bound on `ν(M)`.
pub fn nu_bound(p: &GlobalMaxwellianParams, k: &KernelSpec) -> Result<f64> {
    check_dims(p, k)?;
    k.check_range(KernelUse::Solver)?;
    let d = p.dim() as f64;
    let a = p.a();
    Ok(p.m() * k.bbar / ((2.0 * PI).powf(d - 0.5) * a.sqrt())
        * ((2.0 * PI * a).powf(d / 2.0) + sphere_area(p.dim()) * p.sqrt_det_q() / (k.beta + d - 1.0)))
}

/// `∫_ℝ A(M)(v, y + s v, s) ds` along one free characteristic.
pub fn line_integral(p: &GlobalMaxwellianParams, k: &KernelSpec, v: &[f64], y: &[f64]) -> Result<f64> {
    let d = p.dim();
    let pexp = (d as f64 + k.beta.min(0.0)) / 2.0;
    let tm = TimeMap::new(p);
    let (a, b, c) = (p.a(), p.b(), p.c());
    let (q, bm) = (p.q(), p.bmat());
    let mut vr = [0.0; 3];
    let mut yr = [0.0; 3];
    for j in 0..d {
        vr[j] = v[j] - p.v0()[j];
        yr[j] = y[j] - p.x0()[j];
    }
    let peak = p.m() * p.sqrt_det_q() * (2.0 * PI).powf(-(d as f64) / 2.0);
    // with z = Y + sV the relative velocity is
    // v - u = θ[(c - bs)V + sBV - ((as - b)I - B)Y], free of cancellation
    let g = |s: f64| {
        let theta = p.theta(s);
        let mut z = [0.0; 3];
        for j in 0..d {
            z[j] = yr[j] + s * vr[j];
        }
        let mut qf = 0.0;
        let mut w2 = 0.0;
        for i in 0..d {
            let mut qz = 0.0;
            let mut bv = 0.0;
            let mut by = 0.0;
            for j in 0..d {
                qz += q[(i, j)] * z[j];
                bv += bm[(i, j)] * vr[j];
                by += bm[(i, j)] * yr[j];
            }
            qf += z[i] * qz;
            let rel = (c - b * s) * vr[i] + s * bv - (a * s - b) * yr[i] + by;
            w2 += rel * rel;
        }
        // |v - u|/√θ = √θ |rel|
        let rho = peak * theta.powf(d as f64 / 2.0) * (-0.5 * theta * qf).exp();
        k.bbar * rho * theta.powf(k.beta / 2.0) * a_beta_r(k, (theta * w2).sqrt()) / theta.powf(pexp)
    };
    tm.whole(pexp, &g, QUAD_TOL)
}

/// `ν(M)`: closed-form bound and the maximum of the line integral over a
/// low-discrepancy sample of `(v, x - tv)` (the integral does not depend on
/// `t` separately).
pub fn nu_of_m(p: &GlobalMaxwellianParams, k: &KernelSpec, samples: usize) -> Result<NuReport> {
    let bound = nu_bound(p, k)?;
    let d = p.dim();
    let cov = p.covariance();
    let mut kr = Kronecker::new(2 * d);
    let pts: Vec<(Vec<f64>, Vec<f64>)> = (0..samples.max(1))
        .map(|_| {
            let s = kr.next_point();
            let v = (0..d).map(|j| p.v0()[j] + SAMPLE_BOX * (2.0 * s[j] - 1.0) * cov[(j, j)].sqrt()).collect();
            let y = (0..d)
                .map(|j| p.x0()[j] + SAMPLE_BOX * (2.0 * s[d + j] - 1.0) * cov[(d + j, d + j)].sqrt())
                .collect();
            (v, y)
        })
        .collect();
    let vals: Vec<Result<f64>> = {
        use rayon::prelude::*;
        pts.par_iter().map(|(v, y)| line_integral(p, k, v, y)).collect()
    };
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, r) in vals.into_iter().enumerate() {
        let v = r?;
        if v > best.1 {
            best = (i, v);
        }
    }
    Ok(NuReport { bound, numeric: best.1, argmax_v: pts[best.0].0.clone(), argmax_y: pts[best.0].1.clone() })
}

/// Largest mass `m*` with `nu_bound = margin/4`, for a parameter set with
/// any mass (only the shape is used).
pub fn admissible_mass(p: &GlobalMaxwellianParams, k: &KernelSpec, margin: f64) -> Result<f64> {
    if !(margin > 0.0 && margin <= 1.0) {
        return Err(Error::Domain(format!("margin {margin} outside (0, 1]")));
    }
    let unit = p.with_mass(1.0)?;
    Ok(margin * 0.25 / nu_bound(&unit, k)?)
}

fn check_nu(nu: f64) -> Result<()> {
    if !(nu > 0.0 && 4.0 * nu < 1.0) {
        return Err(Error::Domain(format!("need 0 < 4ν < 1, got ν = {nu}")));
    }
    Ok(())
}

/// `ε(M, r) = (1 - 4ν(1 + r/2)) r`.
pub fn eps_of_r(nu: f64, r: f64) -> Result<f64> {
    check_nu(nu)?;
    Ok((1.0 - 4.0 * nu * (1.0 + 0.5 * r)) * r)
}

/// `(1 - 4ν)²/(8ν)`.
pub fn eps_max(nu: f64) -> Result<f64> {
    check_nu(nu)?;
    Ok((1.0 - 4.0 * nu).powi(2) / (8.0 * nu))
}

/// `1/(4ν) - 1`.
pub fn r_max(nu: f64) -> Result<f64> {
    check_nu(nu)?;
    Ok(0.25 / nu - 1.0)
}

/// Smaller root of `ε(M, r) = eps`. The boundary value `eps = eps_max`
/// (vanishing discriminant) is accepted and gives `r = 1/(4ν) - 1`.
pub fn r_of_eps(nu: f64, eps: f64) -> Result<f64> {
    check_nu(nu)?;
    let lin = 1.0 - 4.0 * nu;
    let disc = lin * lin - 8.0 * nu * eps;
    if !(eps >= 0.0) || disc < 0.0 {
        return Err(Error::Domain(format!(
            "eps = {eps} outside [0, {}] for ν = {nu}",
            lin * lin / (8.0 * nu)
        )));
    }
    // 2ε/(lin + √disc) is the smaller root without cancellation
    Ok(2.0 * eps / (lin + disc.sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PositivityThreshold {
    /// Largest data distance for which `r ≤ 1` is certified.
    pub eps_pos: f64,
    /// `½ ≤ 4ν < 1`: `r ≤ 1` holds for every admissible datum.
    pub automatic: bool,
}

pub fn positivity_threshold(nu: f64) -> Result<PositivityThreshold> {
    check_nu(nu)?;
    if 4.0 * nu < 0.5 {
        Ok(PositivityThreshold { eps_pos: 1.0 - 6.0 * nu, automatic: false })
    } else {
        Ok(PositivityThreshold { eps_pos: eps_max(nu)?, automatic: true })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Truncation {
    pub t: f64,
    /// Estimated contribution of `|t| > T`.
    pub tail: f64,
}

/// Bound on the collision activity outside `[-T, T]`.
///
/// For `β ≤ 0` this is the sup-norm bound integrated over `|t| > T`. For
/// `β > 0`, where `A(M)` is unbounded, the line integral over `|s| > T` is
/// bounded with the same Gaussian-in-`s` estimate as `nu_bound`, keeping the
/// tail `2Φ̄(T√a|v - v*|)` of the `s`-integral and bounding
/// `exp(-(Qv*|v*)/2a) ≤ exp(-λ_min|v*|²/2a)`. Both factors are radially
/// nonincreasing, so the worst velocity is the center and the bound is a
/// one-dimensional radial integral; it decays like `T^{1-(D+β)}`.
pub fn tail_bound(p: &GlobalMaxwellianParams, k: &KernelSpec, t_cut: f64) -> Result<f64> {
    check_dims(p, k)?;
    let d = p.dim() as f64;
    if !(d + k.beta > 1.0) {
        return Err(Error::Domain("tail integrability needs D + β > 1".into()));
    }
    if k.beta <= 0.0 {
        let tm = TimeMap::new(p);
        let pexp = (d + k.beta) / 2.0;
        Ok(mu_prefactor(p, k) * (tm.tail(pexp, t_cut, 1.0)? + tm.tail(pexp, t_cut, -1.0)?))
    } else {
        k.check_range(KernelUse::Solver)?;
        let a = p.a();
        let lam = p.q().clone().symmetric_eigen().eigenvalues.min();
        let scale = 1.0 / (t_cut * t_cut * a + lam / a).sqrt();
        let ex = k.beta + d - 2.0;
        let f = |s: f64| {
            let r = s * scale;
            r.powf(ex) * 2.0 * normal_tail(t_cut * a.sqrt() * r) * (-lam * r * r / (2.0 * a)).exp()
        };
        let radial = scale * graded(f, 40.0, 1e-12)?;
        Ok(p.m() * k.bbar / (2.0 * PI).powf(d) * (2.0 * PI / a).sqrt() * p.sqrt_det_q() * sphere_area(p.dim()) * radial)
    }
}

/// Smallest `T` (up to bisection in `ln T`) with `tail_bound(T) < tol`.
pub fn time_truncation(p: &GlobalMaxwellianParams, k: &KernelSpec, tol: f64) -> Result<Truncation> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance {tol} must be positive")));
    }
    if tol.is_infinite() {
        return Ok(Truncation { t: 0.0, tail: tail_bound(p, k, 0.0)? });
    }
    let t0 = tail_bound(p, k, 0.0)?;
    if t0 < tol {
        return Ok(Truncation { t: 0.0, tail: t0 });
    }
    let mut hi = 1.0f64;
    while tail_bound(p, k, hi)? >= tol {
        hi *= 4.0;
        if hi > 1e150 {
            return Err(Error::Domain(format!("tolerance {tol} needs a window beyond float range")));
        }
    }
    let mut lo = if hi > 1.0 { hi / 4.0 } else { 0.0 };
    for _ in 0..200 {
        let mid = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * hi };
        if tail_bound(p, k, mid)? < tol {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    Ok(Truncation { t: hi, tail: tail_bound(p, k, hi)? })
}

/// Everything the `bounds` report needs in one place.
#[derive(Clone, Debug, Serialize)]
pub struct BoundsReport {
    pub mu_bound: Option<f64>,
    pub mu_numeric: Option<f64>,
    pub mu_sharpened: Option<f64>,
    pub nu_bound: f64,
    pub nu_numeric: f64,
    pub contraction_ok: bool,
    pub r_max: Option<f64>,
    pub eps_max: Option<f64>,
    pub positivity_eps: Option<f64>,
}

/// Computes the report; μ entries are absent for `β > 0`.
pub fn bounds_report(p: &GlobalMaxwellianParams, k: &KernelSpec, samples: usize) -> Result<BoundsReport> {
    let nu = nu_of_m(p, k, samples)?;
    let mu = if k.beta <= 0.0 { Some(mu_of_m(p, k, samples)?) } else { None };
    let ok = 4.0 * nu.bound < 1.0;
    Ok(BoundsReport {
        mu_bound: mu.as_ref().map(|m| m.bound),
        mu_numeric: mu.as_ref().map(|m| m.numeric),
        mu_sharpened: mu.as_ref().map(|m| m.sharpened),
        nu_bound: nu.bound,
        nu_numeric: nu.numeric,
        contraction_ok: ok,
        r_max: if ok { Some(r_max(nu.bound)?) } else { None },
        eps_max: if ok { Some(eps_max(nu.bound)?) } else { None },
        positivity_eps: if ok { Some(positivity_threshold(nu.bound)?.eps_pos) } else { None },
    })
}
