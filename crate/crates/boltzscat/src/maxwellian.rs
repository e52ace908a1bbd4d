//! The global-Maxwellian family over the whole space.
//!
//! A member is fixed by `(m, x0, v0, a, b, c, B)` with `a, c > 0`, `B` skew and
//! `Q = (ac - b^2) I + B^2` positive definite:
//!
//! ```text
//! M(v, x, t) = m (2π)^{-D} sqrt(det Q) exp(-q(v - v0, x - x0 - t v0, t))
//! q(w, z, t) = ½ (c|w|² + a|z - tw|² + 2b (z - tw)·w) + w·B(z - tw)
//! ```
//!
//! The skew coupling enters `q` with unit weight. This is the only weighting
//! for which the normalization, the density `ρ` and the marginal form `Q`
//! agree with each other.

use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const PD_TOL: f64 = 1e-12;

/// Parameters of one global Maxwellian together with the derived matrix `Q`.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalMaxwellianParams {
    dim: usize,
    m: f64,
    a: f64,
    b: f64,
    c: f64,
    bmat: DMatrix<f64>,
    x0: Vec<f64>,
    v0: Vec<f64>,
    q: DMatrix<f64>,
    ln_norm: f64,
    sqrt_det_q: f64,
}

/// Why a parameter set is outside the admissible family.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Rejection {
    NonFinite,
    DimensionMismatch,
    NonPositiveA,
    NonPositiveC,
    NonPositiveMass,
    NotSkew { max_asymmetry: f64 },
    NotPositiveDefinite,
}

/// Outcome of [`validate_params`].
#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub accepted: bool,
    pub reasons: Vec<Rejection>,
    pub q_min_eigenvalue: f64,
    /// `ac - b^2 > 0`. Always implied by `Q ≻ 0` because `B^2` is negative
    /// semidefinite; tracked separately so any disagreement is visible.
    pub ac_minus_b2_positive: bool,
    pub q_pd_without_ac_minus_b2: bool,
}

/// Density, bulk velocity and temperature of the local Maxwellian that
/// coincides with `M(·, x, t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HydroFields {
    pub rho: f64,
    pub u: Vec<f64>,
    pub theta: f64,
}

/// `M[ρ, u, θ](v)`.
pub fn local_maxwellian(rho: f64, u: &[f64], theta: f64, v: &[f64]) -> f64 {
    let d = v.len() as f64;
    let r2: f64 = v.iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum();
    rho / (2.0 * PI * theta).powf(d / 2.0) * (-r2 / (2.0 * theta)).exp()
}

fn compute_q(a: f64, b: f64, c: f64, bmat: &DMatrix<f64>) -> DMatrix<f64> {
    let d = bmat.nrows();
    DMatrix::<f64>::identity(d, d) * (a * c - b * b) + bmat * bmat
}

/// Checks membership of the admissible parameter set.
pub fn validate_params(p: &GlobalMaxwellianParams) -> Verdict {
    validate_raw(p.dim, p.m, p.a, p.b, p.c, &p.bmat, &p.x0, &p.v0)
}

/// [`validate_params`] for a JSON parameter set that may be inadmissible.
pub fn validate_json(j: &MaxwellianJson) -> Verdict {
    let d = j.dim;
    let rows_ok = j.bmat.len() == d && j.bmat.iter().all(|r| r.len() == d);
    let bm = if rows_ok { DMatrix::from_fn(d, d, |i, k| j.bmat[i][k]) } else { DMatrix::zeros(0, 0) };
    validate_raw(d, j.m, j.a, j.b, j.c, &bm, &j.x0, &j.v0)
}

#[allow(clippy::too_many_arguments)]
fn validate_raw(
    dim: usize,
    m: f64,
    a: f64,
    b: f64,
    c: f64,
    bmat: &DMatrix<f64>,
    x0: &[f64],
    v0: &[f64],
) -> Verdict {
    let mut reasons = Vec::new();
    let finite = [m, a, b, c].iter().all(|v| v.is_finite())
        && bmat.iter().all(|v| v.is_finite())
        && x0.iter().chain(v0).all(|v| v.is_finite());
    if !finite {
        reasons.push(Rejection::NonFinite);
    }
    if bmat.nrows() != dim || bmat.ncols() != dim || x0.len() != dim || v0.len() != dim {
        reasons.push(Rejection::DimensionMismatch);
        return Verdict {
            accepted: false,
            reasons,
            q_min_eigenvalue: f64::NAN,
            ac_minus_b2_positive: false,
            q_pd_without_ac_minus_b2: false,
        };
    }
    if !(m > 0.0) {
        reasons.push(Rejection::NonPositiveMass);
    }
    if !(a > 0.0) {
        reasons.push(Rejection::NonPositiveA);
    }
    if !(c > 0.0) {
        reasons.push(Rejection::NonPositiveC);
    }
    let asym = (bmat + bmat.transpose()).amax();
    if asym != 0.0 {
        reasons.push(Rejection::NotSkew { max_asymmetry: asym });
    }
    let mut min_eig = f64::NAN;
    if finite {
        let q = compute_q(a, b, c, bmat);
        let qs = (&q + q.transpose()) * 0.5;
        min_eig = qs.symmetric_eigenvalues().min();
        if !(min_eig > PD_TOL) {
            reasons.push(Rejection::NotPositiveDefinite);
        }
    }
    let ac_ok = a * c - b * b > 0.0;
    let pd = min_eig > PD_TOL;
    Verdict {
        accepted: reasons.is_empty(),
        reasons,
        q_min_eigenvalue: min_eig,
        ac_minus_b2_positive: ac_ok,
        q_pd_without_ac_minus_b2: pd && !ac_ok,
    }
}

impl GlobalMaxwellianParams {
    /// Builds and validates a parameter set.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dim: usize,
        m: f64,
        a: f64,
        b: f64,
        c: f64,
        bmat: DMatrix<f64>,
        x0: Vec<f64>,
        v0: Vec<f64>,
    ) -> Result<Self> {
        let verdict = validate_raw(dim, m, a, b, c, &bmat, &x0, &v0);
        if !verdict.accepted {
            return Err(Error::Params(format!(
                "{:?} (min eigenvalue of Q = {:e})",
                verdict.reasons, verdict.q_min_eigenvalue
            )));
        }
        let q = compute_q(a, b, c, &bmat);
        let det = q.determinant();
        let sqrt_det_q = det.sqrt();
        let ln_norm = m.ln() - dim as f64 * (2.0 * PI).ln() + 0.5 * det.ln();
        Ok(GlobalMaxwellianParams { dim, m, a, b, c, bmat, x0, v0, q, ln_norm, sqrt_det_q })
    }

    /// Centered member with `a = c = 1`, `b = 0`, `B = 0`.
    pub fn standard(dim: usize, m: f64) -> Self {
        Self::new(dim, m, 1.0, 0.0, 1.0, DMatrix::zeros(dim, dim), vec![0.0; dim], vec![0.0; dim])
            .expect("standard parameters are admissible")
    }

    /// Centered member with a planar rotation of strength `omega` (D = 2 or 3,
    /// rotation in the first two axes).
    pub fn centered(dim: usize, m: f64, a: f64, b: f64, c: f64, omega: f64) -> Result<Self> {
        let mut bm = DMatrix::zeros(dim, dim);
        bm[(0, 1)] = omega;
        bm[(1, 0)] = -omega;
        Self::new(dim, m, a, b, c, bm, vec![0.0; dim], vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn m(&self) -> f64 {
        self.m
    }
    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn b(&self) -> f64 {
        self.b
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn bmat(&self) -> &DMatrix<f64> {
        &self.bmat
    }
    pub fn x0(&self) -> &[f64] {
        &self.x0
    }
    pub fn v0(&self) -> &[f64] {
        &self.v0
    }
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn sqrt_det_q(&self) -> f64 {
        self.sqrt_det_q
    }
    /// `ac - b^2`.
    pub fn kappa2(&self) -> f64 {
        self.a * self.c - self.b * self.b
    }

    /// Same shape with a different mass.
    pub fn with_mass(&self, m: f64) -> Result<Self> {
        Self::new(self.dim, m, self.a, self.b, self.c, self.bmat.clone(), self.x0.clone(), self.v0.clone())
    }

    /// Same shape and mass, centered at the origin.
    pub fn centered_copy(&self) -> Self {
        let d = self.dim;
        Self::new(d, self.m, self.a, self.b, self.c, self.bmat.clone(), vec![0.0; d], vec![0.0; d])
            .expect("centering keeps admissibility")
    }

    /// Recomputes `Q` from `(a, b, c, B)` and returns the largest entry
    /// difference with the stored matrix.
    pub fn q_consistency(&self) -> f64 {
        (compute_q(self.a, self.b, self.c, &self.bmat) - &self.q).amax()
    }

    /// `θ(t) = 1/(at² - 2bt + c)`.
    pub fn theta(&self, t: f64) -> f64 {
        1.0 / (self.a * t * t - 2.0 * self.b * t + self.c)
    }

    /// Quadratic form of the centered member.
    pub fn q_form(&self, w: &[f64], z: &[f64], t: f64) -> f64 {
        let d = self.dim;
        let mut s = 0.0;
        let mut ww = 0.0;
        let mut ss = 0.0;
        let mut sw = 0.0;
        for i in 0..d {
            let si = z[i] - t * w[i];
            ww += w[i] * w[i];
            ss += si * si;
            sw += si * w[i];
            let mut bs = 0.0;
            for j in 0..d {
                bs += self.bmat[(i, j)] * (z[j] - t * w[j]);
            }
            s += w[i] * bs;
        }
        0.5 * (self.c * ww + self.a * ss + 2.0 * self.b * sw) + s
    }

    /// Natural logarithm of `M(v, x, t)`.
    pub fn ln_eval(&self, v: &[f64], x: &[f64], t: f64) -> f64 {
        let d = self.dim;
        let mut w = [0.0; 3];
        let mut z = [0.0; 3];
        for i in 0..d {
            w[i] = v[i] - self.v0[i];
            z[i] = x[i] - self.x0[i] - t * self.v0[i];
        }
        self.ln_norm - self.q_form(&w[..d], &z[..d], t)
    }

    /// `M(v, x, t)`.
    pub fn eval(&self, v: &[f64], x: &[f64], t: f64) -> f64 {
        self.ln_eval(v, x, t).exp()
    }

    /// `ln(m (2π)^{-D} sqrt(det Q))`, the log of the peak value.
    pub fn ln_norm(&self) -> f64 {
        self.ln_norm
    }

    /// Density, bulk velocity and temperature at `(x, t)`.
    pub fn hydro_fields(&self, x: &[f64], t: f64) -> HydroFields {
        let d = self.dim;
        let theta = self.theta(t);
        let z: Vec<f64> = (0..d).map(|i| x[i] - self.x0[i] - t * self.v0[i]).collect();
        let zq = DVector::from_column_slice(&z);
        let qform = zq.dot(&(&self.q * &zq));
        let rho = self.m * theta.powf(d as f64 / 2.0) * self.sqrt_det_q * (2.0 * PI).powf(-(d as f64) / 2.0)
            * (-0.5 * theta * qform).exp();
        let bz = &self.bmat * &zq;
        let k = self.a * t - self.b;
        let u = (0..d).map(|i| self.v0[i] + theta * (k * z[i] - bz[i])).collect();
        HydroFields { rho, u, theta }
    }

    /// Allocation-free [`hydro_fields`](Self::hydro_fields) for `D ≤ 3`;
    /// returns `(ρ, u, θ)` with `u` padded by zeros.
    #[inline]
    pub fn hydro_at(&self, x: &[f64], t: f64) -> (f64, [f64; 3], f64) {
        let d = self.dim;
        let theta = self.theta(t);
        let mut z = [0.0; 3];
        for i in 0..d {
            z[i] = x[i] - self.x0[i] - t * self.v0[i];
        }
        let mut qf = 0.0;
        let mut u = [0.0; 3];
        let k = self.a * t - self.b;
        for i in 0..d {
            let mut qz = 0.0;
            let mut bz = 0.0;
            for j in 0..d {
                qz += self.q[(i, j)] * z[j];
                bz += self.bmat[(i, j)] * z[j];
            }
            qf += z[i] * qz;
            u[i] = self.v0[i] + theta * (k * z[i] - bz);
        }
        let rho = self.m * theta.powf(d as f64 / 2.0) * self.sqrt_det_q * (2.0 * PI).powf(-(d as f64) / 2.0)
            * (-0.5 * theta * qf).exp();
        (rho, u, theta)
    }

    /// Total mass `∬ M dv dx`.
    pub fn total_mass(&self) -> f64 {
        self.m
    }

    /// `∬ M ln M dv dx = m (ln(m sqrt(det Q) / (2π)^D) - D)`.
    pub fn h_value(&self) -> f64 {
        self.m * (self.ln_norm - self.dim as f64)
    }

    /// Precision matrix of the Gaussian `M(·, ·, 0)` in the centered
    /// variables `(w, z)`.
    pub fn precision(&self) -> DMatrix<f64> {
        let d = self.dim;
        let mut p = DMatrix::zeros(2 * d, 2 * d);
        for i in 0..d {
            p[(i, i)] = self.c;
            p[(d + i, d + i)] = self.a;
            for j in 0..d {
                let id = if i == j { self.b } else { 0.0 };
                p[(i, d + j)] = id + self.bmat[(i, j)];
                p[(d + i, j)] = id - self.bmat[(i, j)];
            }
        }
        p
    }

    /// Covariance of `(w, z)` under `M(·, ·, 0)/m`.
    pub fn covariance(&self) -> DMatrix<f64> {
        self.precision().try_inverse().expect("precision of an admissible member is invertible")
    }

    /// Exact values of the conserved moments.
    pub fn analytic_moments(&self) -> MomentVector {
        let d = self.dim;
        let s = self.covariance();
        let m = self.m;
        let mut mv = MomentVector::zeros(d);
        mv.values[0] = m;
        let x0 = &self.x0;
        let v0 = &self.v0;
        let mut trw = 0.0;
        let mut trz = 0.0;
        let mut trzw = 0.0;
        for i in 0..d {
            trw += s[(i, i)];
            trz += s[(d + i, d + i)];
            trzw += s[(d + i, i)];
        }
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        for i in 0..d {
            mv.values[1 + i] = m * v0[i];
            mv.values[d + 2 + i] = m * x0[i];
        }
        mv.values[d + 1] = 0.5 * m * (dot(v0, v0) + trw);
        mv.values[2 * d + 2] = 0.5 * m * (dot(x0, x0) + trz);
        mv.values[2 * d + 3] = m * (dot(x0, v0) + trzw);
        let mut k = 2 * d + 4;
        for i in 0..d {
            for j in (i + 1)..d {
                mv.values[k] =
                    m * (x0[i] * v0[j] - v0[i] * x0[j] + s[(d + i, j)] - s[(i, d + j)]);
                k += 1;
            }
        }
        mv
    }

    pub fn to_json(&self) -> MaxwellianJson {
        MaxwellianJson {
            m: self.m,
            a: self.a,
            b: self.b,
            c: self.c,
            bmat: (0..self.dim).map(|i| (0..self.dim).map(|j| self.bmat[(i, j)]).collect()).collect(),
            x0: self.x0.clone(),
            v0: self.v0.clone(),
            dim: self.dim,
        }
    }

    pub fn from_json(j: &MaxwellianJson) -> Result<Self> {
        let d = j.dim;
        if j.bmat.len() != d || j.bmat.iter().any(|r| r.len() != d) {
            return Err(Error::Params(format!("B must be {d}x{d}")));
        }
        let bm = DMatrix::from_fn(d, d, |i, k| j.bmat[i][k]);
        Self::new(d, j.m, j.a, j.b, j.c, bm, j.x0.clone(), j.v0.clone())
    }
}

/// JSON form `{m, a, b, c, B, x0, v0, D}`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MaxwellianJson {
    pub m: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    #[serde(rename = "B")]
    pub bmat: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
    pub v0: Vec<f64>,
    #[serde(rename = "D")]
    pub dim: usize,
}

/// The conserved quantities, laid out as
/// `[mass, momentum (D), energy, x-tv (D), ½|x-tv|², (x-tv)·v, x∧v (D(D-1)/2)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentVector {
    pub dim: usize,
    pub values: Vec<f64>,
}

impl MomentVector {
    pub fn len_for(dim: usize) -> usize {
        2 * dim + 4 + dim * (dim - 1) / 2
    }

    pub fn zeros(dim: usize) -> Self {
        MomentVector { dim, values: vec![0.0; Self::len_for(dim)] }
    }

    pub fn labels(dim: usize) -> Vec<String> {
        let mut l = vec!["mass".to_string()];
        l.extend((0..dim).map(|i| format!("momentum_{i}")));
        l.push("energy".into());
        l.extend((0..dim).map(|i| format!("position_{i}")));
        l.push("position_sq".into());
        l.push("position_dot_velocity".into());
        for i in 0..dim {
            for j in (i + 1)..dim {
                l.push(format!("angular_{i}{j}"));
            }
        }
        l
    }

    pub fn mass(&self) -> f64 {
        self.values[0]
    }

    /// Adds the contribution of a point mass `weight` at velocity `v` and
    /// free-streamed position `y = x - tv`.
    #[inline]
    pub fn accumulate(acc: &mut [f64], v: &[f64], y: &[f64], weight: f64) {
        let d = v.len();
        acc[0] += weight;
        let mut vv = 0.0;
        let mut yy = 0.0;
        let mut yv = 0.0;
        for i in 0..d {
            acc[1 + i] += weight * v[i];
            acc[d + 2 + i] += weight * y[i];
            vv += v[i] * v[i];
            yy += y[i] * y[i];
            yv += y[i] * v[i];
        }
        acc[d + 1] += 0.5 * weight * vv;
        acc[2 * d + 2] += 0.5 * weight * yy;
        acc[2 * d + 3] += weight * yv;
        let mut k = 2 * d + 4;
        for i in 0..d {
            for j in (i + 1)..d {
                acc[k] += weight * (y[i] * v[j] - v[i] * y[j]);
                k += 1;
            }
        }
    }
}

/// Conserved moments of the Maxwellian itself at time `t`, by tensor
/// trapezoid quadrature on `[-vmax, vmax]^D × [-xmax, xmax]^D` (boxes
/// centered at `v0` and `x0 + t v0`).
pub fn conserved_moments(p: &GlobalMaxwellianParams, t: f64, n: usize, vmax: f64, xmax: f64) -> MomentVector {
    let d = p.dim;
    let hv = 2.0 * vmax / (n - 1) as f64;
    let hx = 2.0 * xmax / (n - 1) as f64;
    let nd = n.pow(d as u32);
    let total = nd * nd;
    let cell = (hv * hx).powi(d as i32);
    let coord = |mut idx: usize, h: f64, half: f64| {
        let mut out = [0.0; 3];
        for k in (0..d).rev() {
            out[k] = -half + (idx % n) as f64 * h;
            idx /= n;
        }
        out
    };
    let values = crate::par::sum_vec(total, MomentVector::len_for(d), |i, acc| {
        let dv = coord(i / nd, hv, vmax);
        let dx = coord(i % nd, hx, xmax);
        let mut v = [0.0; 3];
        let mut x = [0.0; 3];
        let mut y = [0.0; 3];
        for k in 0..d {
            v[k] = p.v0[k] + dv[k];
            x[k] = p.x0[k] + t * p.v0[k] + dx[k];
            y[k] = x[k] - t * v[k];
        }
        let f = p.eval(&v[..d], &x[..d], t);
        MomentVector::accumulate(acc, &v[..d], &y[..d], f * cell);
    });
    MomentVector { dim: d, values }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rot(d: usize, w: f64) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(d, d);
        b[(0, 1)] = w;
        b[(1, 0)] = -w;
        b
    }

    #[test]
    fn identity_case_is_accepted() {
        let p = GlobalMaxwellianParams::standard(2, 1.0);
        let v = validate_params(&p);
        assert!(v.accepted);
        assert_eq!(p.q(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn large_b_is_rejected_with_negative_eigenvalue() {
        let r = validate_raw(2, 1.0, 1.0, 2.0, 1.0, &DMatrix::zeros(2, 2), &[0.0; 2], &[0.0; 2]);
        assert!(!r.accepted);
        assert!(r.reasons.contains(&Rejection::NotPositiveDefinite));
        assert!((r.q_min_eigenvalue + 3.0).abs() < 1e-12);
    }

    #[test]
    fn rotating_case_has_q_three() {
        let p = GlobalMaxwellianParams::new(2, 1.0, 2.0, 0.0, 2.0, rot(2, 1.0), vec![0.0; 2], vec![0.0; 2]).unwrap();
        assert!((p.q() - DMatrix::identity(2, 2) * 3.0).amax() < 1e-15);
        assert_eq!(p.q_consistency(), 0.0);
    }

    #[test]
    fn non_skew_is_rejected() {
        let mut b = rot(2, 1.0);
        b[(1, 0)] = -0.5;
        let r = validate_raw(2, 1.0, 2.0, 0.0, 2.0, &b, &[0.0; 2], &[0.0; 2]);
        assert!(matches!(r.reasons[0], Rejection::NotSkew { .. }));
    }

    #[test]
    fn theta_examples() {
        let p = GlobalMaxwellianParams::standard(2, 1.0);
        assert_eq!(p.theta(0.0), 1.0);
        let q = GlobalMaxwellianParams::centered(2, 1.0, 2.0, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(q.theta(1.0), 1.0);
        assert_eq!(q.theta(0.5), 2.0);
    }

    #[test]
    fn peak_value_is_one() {
        let p = GlobalMaxwellianParams::standard(2, (2.0 * PI).powi(2));
        assert!((p.eval(&[0.0, 0.0], &[0.0, 0.0], 0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hydro_at_origin() {
        let p = GlobalMaxwellianParams::standard(2, 3.0);
        let h = p.hydro_fields(&[0.0, 0.0], 0.0);
        assert!((h.rho - 3.0 / (2.0 * PI)).abs() < 1e-15);
        assert_eq!(h.u, vec![0.0, 0.0]);
    }

    #[test]
    fn h_value_examples() {
        let p = GlobalMaxwellianParams::standard(2, 1.0);
        assert!((p.h_value() - (-(4.0 * PI * PI).ln() - 2.0)).abs() < 1e-13);
        assert!((p.h_value() + 5.675754).abs() < 1e-5);
        let q = GlobalMaxwellianParams::new(2, 1.0, 2.0, 0.0, 2.0, rot(2, 1.0), vec![0.0; 2], vec![0.0; 2]).unwrap();
        let peak = q.with_mass((2.0 * PI).powi(2) / q.sqrt_det_q()).unwrap();
        assert!((peak.h_value() + peak.m() * 2.0).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let p = GlobalMaxwellianParams::new(2, 0.5, 2.0, 0.3, 2.0, rot(2, 1.0), vec![0.1, -0.2], vec![0.3, 0.0]).unwrap();
        let s = serde_json::to_string(&p.to_json()).unwrap();
        let back: MaxwellianJson = serde_json::from_str(&s).unwrap();
        assert_eq!(GlobalMaxwellianParams::from_json(&back).unwrap(), p);
    }
}
