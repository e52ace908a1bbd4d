//! Mild solutions by Picard iteration in the comoving frame.
//!
//! The state is `g(v, y, t) = h(v, y + tv, t)`, the relative density pulled
//! back along free transport. Then `g(t) = g_in + ∫_0^t R(s) ds` with `R` the
//! relative collision term evaluated along the characteristic.
//!
//! Time is compactified by `t = (b + κ tan τ)/a`. In `τ` the collision weight
//! `θ^{(D+β)/2} dt` becomes `cos^{D+β-2} τ dτ` up to a constant, and the
//! collision term itself has a limit as `τ → ±π/2`. Each of the two halves
//! `[τ(-T), τ(0)]` and `[τ(0), τ(T)]` carries Chebyshev–Lobatto nodes and
//! product-quadrature weights for the integral of the interpolant.
//!
//! At a node `s` collisions are evaluated on a self-similar grid `(ξ, w)`:
//! `ξ = √θ (y - x0 + s(v - v0))` is the scaled distance from the bulk and `w`
//! the scaled peculiar velocity, so the reference is a fixed Gaussian there.

use crate::bounds;
use crate::collision::{Interp, KernelSpec, KernelUse, VelGrid, VelocityCollision, LANES};
use crate::maxwellian::{GlobalMaxwellianParams, MomentVector};
use crate::par;
use crate::phase_field::{DistributionField, Frame, PhaseGrid, Trajectory};
use crate::quad;
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Stop once successive iterates differ by less than this in sup norm.
    pub picard_tol: f64,
    pub max_iters: usize,
    /// Half-width `T` of the time window; taken from the truncation
    /// estimate (tail below `picard_tol / 10`) when absent.
    pub t_max: Option<f64>,
    /// Number of time nodes, odd; `(nt + 1)/2` per half-line.
    pub nt: usize,
    pub n_omega: usize,
    pub interp: Interp,
    pub positivity_check: bool,
    /// Evaluate `‖G - E(G)‖` once after convergence.
    pub final_residual: bool,
    /// Allowed excess of the measured contraction ratio over `4ν̄(1+r)`.
    pub ratio_slack: f64,
    /// Remove the discrete moments of the collision term at every node.
    pub conservative: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            picard_tol: 1e-8,
            max_iters: 60,
            t_max: None,
            nt: 17,
            n_omega: 16,
            interp: Interp::Cubic,
            positivity_check: true,
            final_residual: true,
            ratio_slack: 0.05,
            conservative: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.picard_tol > 0.0 && self.picard_tol.is_finite()) {
            return Err(Error::Invalid(format!("picard_tol = {} must be positive", self.picard_tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::Invalid("max_iters must be at least 1".into()));
        }
        if self.nt < 3 || self.nt % 2 == 0 {
            return Err(Error::Invalid(format!("nt = {} must be odd and at least 3", self.nt)));
        }
        if let Some(t) = self.t_max {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::Invalid(format!("t_max = {t} must be finite and nonnegative")));
            }
        }
        if self.n_omega < 2 {
            return Err(Error::Invalid("n_omega must be at least 2".into()));
        }
        Ok(())
    }

    /// Window half-width and the certified tail beyond it.
    pub fn window(&self, p: &GlobalMaxwellianParams, k: &KernelSpec) -> Result<(f64, f64)> {
        match self.t_max {
            Some(t) => Ok((t, bounds::tail_bound(p, k, t)?)),
            None => {
                let tr = bounds::time_truncation(p, k, self.picard_tol / 10.0)?;
                Ok((tr.t, tr.tail))
            }
        }
    }
}

/// Time nodes with cumulative product-quadrature weights.
#[derive(Clone, Debug)]
pub struct TimeGrid {
    pub nodes: Vec<f64>,
    pub tau: Vec<f64>,
    /// Index of `t = 0`.
    pub zero: usize,
    /// `∫_0^{t_j} R ds ≈ Σ_k cum[j][k] K_k`, where `R = θ^{(D+β)/2} K`.
    pub cum: Vec<Vec<f64>>,
}

impl TimeGrid {
    pub fn new(p: &GlobalMaxwellianParams, beta: f64, t_max: f64, nt: usize) -> Result<Self> {
        if nt < 3 || nt % 2 == 0 {
            return Err(Error::Invalid(format!("nt = {nt} must be odd and at least 3")));
        }
        if !(t_max >= 0.0 && t_max.is_finite()) {
            return Err(Error::Invalid(format!("window {t_max} must be finite and nonnegative")));
        }
        if t_max == 0.0 {
            return Ok(TimeGrid { nodes: vec![0.0], tau: vec![tau_of_t(p, 0.0)], zero: 0, cum: vec![vec![0.0]] });
        }
        let dim = p.dim() as f64;
        let kappa = p.kappa2().sqrt();
        let pexp = 0.5 * (dim + beta);
        let scale = (p.a() / p.kappa2()).powf(pexp) * kappa / p.a();
        let pw = dim + beta - 2.0;
        let half = nt.div_ceil(2);
        let t0 = tau_of_t(p, 0.0);
        let neg = quad::chebyshev_lobatto(half, tau_of_t(p, -t_max), t0);
        let pos = quad::chebyshev_lobatto(half, t0, tau_of_t(p, t_max));
        let mut tau: Vec<f64> = neg.clone();
        tau.extend_from_slice(&pos[1..]);
        let mut nodes: Vec<f64> = tau.iter().map(|&x| t_of_tau(p, x)).collect();
        let zero = half - 1;
        nodes[0] = -t_max;
        nodes[zero] = 0.0;
        nodes[nt - 1] = t_max;
        let wn = half_weights(&neg, half - 1, pw);
        let wp = half_weights(&pos, 0, pw);
        let mut cum = vec![vec![0.0; nt]; nt];
        for j in 0..half {
            for k in 0..half {
                cum[j][k] = scale * wn[j][k];
                cum[zero + j][zero + k] = scale * wp[j][k];
            }
        }
        Ok(TimeGrid { nodes, tau, zero, cum })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

fn tau_of_t(p: &GlobalMaxwellianParams, t: f64) -> f64 {
    ((p.a() * t - p.b()) / p.kappa2().sqrt()).atan()
}

fn t_of_tau(p: &GlobalMaxwellianParams, tau: f64) -> f64 {
    (p.b() + p.kappa2().sqrt() * tau.tan()) / p.a()
}

/// `W[j][k] = ∫_{τ_anchor}^{τ_j} cos^{pw} τ ℓ_k(τ) dτ` for the Lagrange basis
/// on the given Chebyshev–Lobatto nodes.
fn half_weights(tau: &[f64], anchor: usize, pw: f64) -> Vec<Vec<f64>> {
    let n = tau.len();
    let bw = quad::lobatto_bary_weights(n);
    let seg: Vec<Vec<f64>> = (0..n - 1).map(|i| segment_weights(tau, &bw, tau[i], tau[i + 1], pw)).collect();
    let mut w = vec![vec![0.0; n]; n];
    for j in (anchor + 1)..n {
        for k in 0..n {
            w[j][k] = w[j - 1][k] + seg[j - 1][k];
        }
    }
    for j in (0..anchor).rev() {
        for k in 0..n {
            w[j][k] = w[j + 1][k] - seg[j][k];
        }
    }
    w
}

/// `∫_lo^hi cos^{pw} τ ℓ_k(τ) dτ` for every `k`, with panels graded toward
/// the end closer to `±π/2`, where `cos^{pw}` may be singular.
fn segment_weights(tau: &[f64], bw: &[f64], lo: f64, hi: f64, pw: f64) -> Vec<f64> {
    let n = tau.len();
    let rule = quad::gauss_legendre(24);
    let mut acc = vec![0.0; n];
    let mut panel = |x1: f64, x2: f64| {
        let half = 0.5 * (x2 - x1);
        let mid = 0.5 * (x2 + x1);
        for (x, w) in rule.0.iter().zip(&rule.1) {
            let t = mid + half * x;
            // distance to the pole keeps cos accurate near ±π/2
            let c = (FRAC_PI_2 - t.abs()).sin();
            let f = w * half * c.powf(pw);
            for (a, l) in acc.iter_mut().zip(quad::bary_basis(tau, bw, t)) {
                *a += f * l;
            }
        }
    };
    let (edge, other) = if lo.abs() > hi.abs() { (lo, hi) } else { (hi, lo) };
    let gap = FRAC_PI_2 - edge.abs();
    let mut width = other - edge;
    for _ in 0..200 {
        if width.abs() <= 0.05 * gap || width.abs() < 1e-300 {
            break;
        }
        let mid = edge + 0.5 * width;
        let (a, b) = if mid < edge + width { (mid, edge + width) } else { (edge + width, mid) };
        panel(a, b);
        width *= 0.5;
    }
    let (a, b) = if edge < edge + width { (edge, edge + width) } else { (edge + width, edge) };
    panel(a, b);
    acc
}

/// Linear maps between comoving offsets `(V, Y) = (v - v0, y - x0)` and the
/// collision grid `(ξ, w)` at one time.
#[derive(Clone, Debug)]
struct NodeFrame {
    s: f64,
    sq: f64,
    a1: [[f64; 3]; 3],
    a2: [[f64; 3]; 3],
}

impl NodeFrame {
    fn new(p: &GlobalMaxwellianParams, s: f64) -> Self {
        let d = p.dim();
        let bm = p.bmat();
        let mut a1 = [[0.0; 3]; 3];
        let mut a2 = [[0.0; 3]; 3];
        for i in 0..d {
            for j in 0..d {
                a1[i][j] = s * bm[(i, j)];
                a2[i][j] = -bm[(i, j)];
            }
            a1[i][i] += p.c() - p.b() * s;
            a2[i][i] += p.a() * s - p.b();
        }
        NodeFrame { s, sq: p.theta(s).sqrt(), a1, a2 }
    }

    /// `(ξ, w) ↦ (V, Y) = √θ (A2 ξ + w, A1 ξ - s w)`.
    #[inline]
    fn inverse(&self, d: usize, xi: &[f64; 3], w: &[f64; 3]) -> ([f64; 3], [f64; 3]) {
        let mut v = [0.0; 3];
        let mut y = [0.0; 3];
        for i in 0..d {
            let mut a = w[i];
            let mut b = -self.s * w[i];
            for j in 0..d {
                a += self.a2[i][j] * xi[j];
                b += self.a1[i][j] * xi[j];
            }
            v[i] = self.sq * a;
            y[i] = self.sq * b;
        }
        (v, y)
    }

    /// `(V, Y) ↦ (ξ, w) = √θ (Y + sV, A1 V - A2 Y)`.
    #[inline]
    fn forward(&self, d: usize, v: &[f64; 3], y: &[f64; 3]) -> ([f64; 3], [f64; 3]) {
        let mut xi = [0.0; 3];
        let mut w = [0.0; 3];
        for i in 0..d {
            xi[i] = self.sq * (y[i] + self.s * v[i]);
            let mut a = 0.0;
            for j in 0..d {
                a += self.a1[i][j] * v[j] - self.a2[i][j] * y[j];
            }
            w[i] = self.sq * a;
        }
        (xi, w)
    }
}

/// Relative collision term of a comoving field at one time.
#[derive(Clone, Debug)]
pub struct CollisionSweep {
    p: GlobalMaxwellianParams,
    grid: PhaseGrid,
    op: VelocityCollision,
    gauss: Vec<f64>,
    /// `m √det(Q/2π)`.
    pref: f64,
    /// `δ^{D+β}` for the velocity spacing.
    cell_pow: f64,
    pexp: f64,
    conservative: bool,
}

struct SweepData {
    /// `g` at collision nodes, one velocity block per `ξ`.
    h: Vec<Vec<f64>>,
    /// `δ^{D+β}(gain - loss)`, velocity index outer.
    rel: Vec<f64>,
}

impl CollisionSweep {
    pub fn new(p: &GlobalMaxwellianParams, k: &KernelSpec, grid: &PhaseGrid, n_omega: usize, interp: Interp) -> Result<Self> {
        k.check_range(KernelUse::Solver)?;
        if k.dim != p.dim() || grid.dim != p.dim() {
            return Err(Error::Invalid("dimension mismatch between reference, kernel and grid".into()));
        }
        let op = VelocityCollision::with_interp(k, grid.nv, n_omega, interp)?;
        let vg = VelGrid { dim: grid.dim, n: grid.nv, wmax: grid.vmax };
        let d = p.dim() as f64;
        let pref = p.m() * p.sqrt_det_q() * (2.0 * PI).powf(-d / 2.0);
        Ok(CollisionSweep {
            p: p.clone(),
            grid: grid.clone(),
            gauss: vg.gaussian(),
            cell_pow: vg.spacing().powf(d + k.beta),
            pexp: 0.5 * (d + k.beta),
            op,
            pref,
            conservative: false,
        })
    }

    /// Switches the moment projection of [`evaluate`](Self::evaluate) on or off.
    pub fn with_projection(mut self, on: bool) -> Self {
        self.conservative = on;
        self
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    /// `θ(s)^{(D+β)/2}`: converts `K` into the relative collision term.
    pub fn theta_weight(&self, s: f64) -> f64 {
        self.p.theta(s).powf(self.pexp)
    }

    fn xi_w(&self, ix: usize, iw: usize) -> ([f64; 3], [f64; 3]) {
        let nxt = self.grid.n_x();
        let (_, xi) = self.grid.offsets(ix);
        let (w, _) = self.grid.offsets(iw * nxt);
        (xi, w)
    }

    fn index_pos(&self, v: &[f64; 3], y: &[f64; 3]) -> [f64; 6] {
        let g = &self.grid;
        let d = g.dim;
        let (dv, dx) = (g.dv(), g.dx());
        let mut pos = [0.0; 6];
        for j in 0..d {
            pos[j] = (v[j] + g.vmax) / dv;
            pos[d + j] = (y[j] + g.xmax) / dx;
        }
        pos
    }

    fn gaussian_xi(&self, xi: &[f64; 3]) -> f64 {
        let q = self.p.q();
        let d = self.grid.dim;
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                s += xi[i] * q[(i, j)] * xi[j];
            }
        }
        (-0.5 * s).exp()
    }

    fn sweep(&self, s: f64, g: &[f64]) -> SweepData {
        let d = self.grid.dim;
        let nxt = self.grid.n_x();
        let nvt = self.grid.n_v();
        let fr = NodeFrame::new(&self.p, s);
        let h: Vec<Vec<f64>> = (0..nxt)
            .into_par_iter()
            .map(|ix| {
                (0..nvt)
                    .map(|iw| {
                        let (xi, w) = self.xi_w(ix, iw);
                        let (v, y) = fr.inverse(d, &xi, &w);
                        self.grid.interpolate(g, &self.index_pos(&v, &y)[..2 * d])
                    })
                    .collect()
            })
            .collect();
        let gl: Vec<Vec<(Vec<f64>, Vec<f64>)>> =
            h.par_chunks(LANES).map(|c| self.op.gain_loss_many(c, &self.gauss, 0.0)).collect();
        let mut rel = vec![0.0; nxt * nvt];
        for (ix, (gain, loss)) in gl.iter().flatten().enumerate() {
            for iw in 0..nvt {
                rel[iw * nxt + ix] = self.cell_pow * (gain[iw] - loss[iw]);
            }
        }
        SweepData { h, rel }
    }

    /// `K(s)` at the comoving nodes, where `R = θ^{(D+β)/2} K` is the
    /// relative collision term `B(F, F)/M` along the characteristics.
    pub fn evaluate(&self, s: f64, g: &[f64]) -> Vec<f64> {
        let data = self.sweep(s, g);
        let d = self.grid.dim;
        let fr = NodeFrame::new(&self.p, s);
        let mut kv: Vec<f64> = (0..self.grid.len())
            .into_par_iter()
            .map(|k| {
                let (v, y) = self.grid.offsets(k);
                let (xi, w) = fr.forward(d, &v, &y);
                let r = self.grid.interpolate(&data.rel, &self.index_pos(&w, &xi)[..2 * d]);
                self.pref * self.gaussian_xi(&xi) * r
            })
            .collect();
        if self.conservative {
            self.project(&mut kv);
        }
        kv
    }

    /// Conserved densities at a comoving node, centered on the reference.
    fn invariants(&self, k: usize, out: &mut [f64]) {
        let d = self.grid.dim;
        let (v, y) = self.grid.offsets(k);
        out.iter_mut().for_each(|x| *x = 0.0);
        MomentVector::accumulate(out, &v[..d], &y[..d], 1.0);
    }

    /// Subtracts `|K| Σ λ_i φ_i` so that `Σ w M K φ_i = 0` for every
    /// conserved density. The multipliers are local to where `K` acts and
    /// vanish with the discrete conservation error.
    fn project(&self, kv: &mut [f64]) {
        let d = self.grid.dim;
        let n = MomentVector::len_for(d);
        let len = self.grid.len();
        let kmax = par::max(len, |k| kv[k].abs());
        if kmax == 0.0 {
            return;
        }
        let floor = 1e-8 * kmax;
        let mw: Vec<f64> = (0..len)
            .into_par_iter()
            .map(|k| {
                let (v, y) = self.grid.offsets(k);
                let (va, ya) = (self.abs_point(&v, self.p.v0()), self.abs_point(&y, self.p.x0()));
                self.grid.weight(k) * self.p.eval(&va[..d], &ya[..d], 0.0)
            })
            .collect();
        for _ in 0..2 {
            let acc = par::sum_vec(len, n * n + n, |k, acc| {
                let mut phi = [0.0; 13];
                self.invariants(k, &mut phi[..n]);
                let om = mw[k] * (kv[k].abs() + floor);
                for i in 0..n {
                    acc[n * n + i] += mw[k] * kv[k] * phi[i];
                    for j in 0..=i {
                        acc[i * n + j] += om * phi[i] * phi[j];
                    }
                }
            });
            let gram = nalgebra::DMatrix::from_fn(n, n, |i, j| if j <= i { acc[i * n + j] } else { acc[j * n + i] });
            let rhs = nalgebra::DVector::from_column_slice(&acc[n * n..]);
            let Some(ch) = gram.cholesky() else { return };
            let lam = ch.solve(&rhs);
            let snapshot: Vec<f64> = kv.iter().map(|x| x.abs() + floor).collect();
            kv.par_iter_mut().enumerate().for_each(|(k, x)| {
                let mut phi = [0.0; 13];
                self.invariants(k, &mut phi[..n]);
                let c: f64 = (0..n).map(|i| lam[i] * phi[i]).sum();
                *x -= snapshot[k] * c;
            });
        }
    }

    fn abs_point(&self, off: &[f64; 3], base: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (j, b) in base.iter().enumerate() {
            out[j] = b + off[j];
        }
        out
    }

    /// `∬ B(F, F) ln(F/M) dv dx` at time `s`. The collision-grid map has unit
    /// Jacobian, and `ln M` is a collision invariant.
    pub fn entropy_production(&self, s: f64, g: &[f64]) -> Result<f64> {
        let data = self.sweep(s, g);
        let nxt = self.grid.n_x();
        let nvt = self.grid.n_v();
        for (ix, row) in data.h.iter().enumerate() {
            if let Some(iw) = row.iter().position(|&x| !(x > 0.0)) {
                let (xi, w) = self.xi_w(ix, iw);
                return Err(Error::Positivity(format!(
                    "collision node xi = {:?}, w = {:?} at t = {s} (h = {})",
                    &xi[..self.grid.dim],
                    &w[..self.grid.dim],
                    row[iw]
                )));
            }
        }
        let tw = self.theta_weight(s);
        let total = par::sum(nxt * nvt, |k| {
            let (iw, ix) = (k / nxt, k % nxt);
            let (xi, _) = self.xi_w(ix, iw);
            let gx = self.gaussian_xi(&xi);
            let m = self.pref * gx * self.gauss[iw];
            let kk = self.pref * gx * data.rel[k];
            self.grid.weight(k) * kk * m * data.h[ix][iw].ln()
        });
        Ok(tw * total)
    }
}

/// Where the integral equation is anchored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    /// `G(t) = G(0) + ∫_0^t`.
    Initial,
    /// `G(t) = F^{+∞} - ∫_t^{+∞}`.
    PlusInfinity,
    /// `G(t) = F^{-∞} + ∫_{-∞}^t`.
    MinusInfinity,
}

/// Which nodes take part in the iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Span {
    Full,
    /// `t ≥ 0` only.
    Forward,
    /// `t ≤ 0` only.
    Backward,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub k: usize,
    pub delta: f64,
    pub ratio: Option<f64>,
}

/// Converged iterate on a set of time nodes.
#[derive(Clone, Debug)]
pub struct FixedPoint {
    pub nodes: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub log: Vec<IterRecord>,
    /// `‖G - E(G)‖` after convergence, when requested.
    pub residual: Option<f64>,
}

impl FixedPoint {
    /// Largest ratio of successive deltas while the deltas are above the
    /// rounding floor.
    pub fn measured_ratio(&self) -> Option<f64> {
        self.log
            .iter()
            .filter(|r| r.delta > 1e-13)
            .filter_map(|r| r.ratio)
            .fold(None, |m, x| Some(m.map_or(x, |y: f64| y.max(x))))
    }

    pub fn to_trajectory(&self, grid: &PhaseGrid, p: &GlobalMaxwellianParams) -> Result<Trajectory> {
        let fields = self
            .nodes
            .iter()
            .zip(&self.values)
            .map(|(&t, h)| DistributionField { grid: grid.clone(), t, frame: Frame::Comoving, h: h.clone(), reference: p.clone() })
            .collect();
        Trajectory::new(self.nodes.clone(), fields)
    }
}

/// Smallness data attached to a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub nu_bar: f64,
    /// `|data - M(0)|_{M(0)}`.
    pub eps: f64,
    pub eps_max: f64,
    pub r: f64,
    /// `4ν̄(1 + r)`.
    pub rate: f64,
    pub t_max: f64,
    pub tail: f64,
}

/// Picard solver for the mild equation on a fixed grid and window.
#[derive(Clone, Debug)]
pub struct Solver {
    pub p: GlobalMaxwellianParams,
    pub kernel: KernelSpec,
    pub cfg: SolverConfig,
    pub times: TimeGrid,
    pub sweep: CollisionSweep,
    pub nu_bar: f64,
    pub tail: f64,
}

impl Solver {
    pub fn new(p: &GlobalMaxwellianParams, k: &KernelSpec, grid: &PhaseGrid, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        k.check_range(KernelUse::Solver)?;
        let nu_bar = bounds::nu_bound(p, k)?;
        if !(nu_bar < 0.25) {
            let m_star = bounds::admissible_mass(p, k, 1.0)?;
            return Err(Error::Domain(format!(
                "certified nu = {nu_bar:.6} must be below 1/4; needs mass m < {m_star:.6e} (given {})",
                p.m()
            )));
        }
        let (t_max, tail) = cfg.window(p, k)?;
        Ok(Solver {
            p: p.clone(),
            kernel: k.clone(),
            cfg: cfg.clone(),
            times: TimeGrid::new(p, k.beta, t_max, cfg.nt)?,
            sweep: CollisionSweep::new(p, k, grid, cfg.n_omega, cfg.interp)?.with_projection(cfg.conservative),
            nu_bar,
            tail,
        })
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.sweep.grid
    }

    pub fn t_max(&self) -> f64 {
        self.times.nodes[self.times.len() - 1]
    }

    /// Radius certificate for data at distance `eps` from the reference.
    pub fn certificate(&self, eps: f64) -> Result<Certificate> {
        let emax = bounds::eps_max(self.nu_bar)?;
        if !(eps < emax) {
            return Err(Error::Domain(format!(
                "data at distance {eps:.6e} from the reference; the ball needs < (1-4nu)^2/(8nu) = {emax:.6e}"
            )));
        }
        let r = bounds::r_of_eps(self.nu_bar, eps)?;
        Ok(Certificate {
            nu_bar: self.nu_bar,
            eps,
            eps_max: emax,
            r,
            rate: 4.0 * self.nu_bar * (1.0 + r),
            t_max: self.t_max(),
            tail: self.tail,
        })
    }

    fn active(&self, span: Span) -> Vec<usize> {
        let z = self.times.zero;
        match span {
            Span::Full => (0..self.times.len()).collect(),
            Span::Forward => (z..self.times.len()).collect(),
            Span::Backward => (0..=z).collect(),
        }
    }

    /// The integral operator restricted to the active nodes.
    fn operator(&self, anchor: Anchor, idx: &[usize]) -> Vec<Vec<f64>> {
        let c = &self.times.cum;
        let last = self.times.len() - 1;
        idx.iter()
            .map(|&j| {
                idx.iter()
                    .map(|&l| match anchor {
                        Anchor::Initial => c[j][l],
                        Anchor::PlusInfinity => c[j][l] - c[last][l],
                        Anchor::MinusInfinity => c[j][l] - c[0][l],
                    })
                    .collect()
            })
            .collect()
    }

    fn apply(&self, base: &[f64], lmat: &[Vec<f64>], idx: &[usize], g: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let cols: Vec<usize> = (0..idx.len()).filter(|&l| lmat.iter().any(|row| row[l] != 0.0)).collect();
        let mut kv: Vec<Option<Vec<f64>>> = vec![None; idx.len()];
        for &l in &cols {
            kv[l] = Some(self.sweep.evaluate(self.times.nodes[idx[l]], &g[l]));
        }
        lmat.iter()
            .map(|row| {
                (0..base.len())
                    .into_par_iter()
                    .map(|i| {
                        let mut acc = base[i];
                        for &l in &cols {
                            if let Some(k) = &kv[l] {
                                acc += row[l] * k[i];
                            }
                        }
                        acc
                    })
                    .collect()
            })
            .collect()
    }

    /// Picard iteration `G ← data + L K(G)` from `G_0 = data`.
    pub fn fixed_point(&self, anchor: Anchor, span: Span, data: &[f64]) -> Result<FixedPoint> {
        self.fixed_point_from(anchor, span, data, data)
    }

    /// [`fixed_point`](Self::fixed_point) from the constant-in-time iterate `start`.
    pub fn fixed_point_from(&self, anchor: Anchor, span: Span, data: &[f64], start: &[f64]) -> Result<FixedPoint> {
        if data.len() != self.grid().len() || start.len() != data.len() {
            return Err(Error::Invalid("data does not match the solver grid".into()));
        }
        let idx = self.active(span);
        let lmat = self.operator(anchor, &idx);
        let mut g: Vec<Vec<f64>> = vec![start.to_vec(); idx.len()];
        let mut log = Vec::new();
        let mut prev: Option<f64> = None;
        let mut converged = false;
        for it in 1..=self.cfg.max_iters {
            let next = self.apply(data, &lmat, &idx, &g);
            let delta = sup_diff(&next, &g);
            let ratio = prev.filter(|&p| p > 0.0).map(|p| delta / p);
            log.push(IterRecord { k: it, delta, ratio });
            g = next;
            prev = Some(delta);
            if delta < self.cfg.picard_tol {
                converged = true;
                break;
            }
        }
        if !converged {
            let last = log.last().cloned().unwrap_or(IterRecord { k: 0, delta: f64::NAN, ratio: None });
            return Err(Error::NotConverged { iters: last.k, delta: last.delta, ratio: last.ratio.unwrap_or(f64::NAN) });
        }
        let residual = if self.cfg.final_residual && idx.len() > 1 {
            Some(sup_diff(&self.apply(data, &lmat, &idx, &g), &g))
        } else if idx.len() == 1 {
            Some(0.0)
        } else {
            None
        };
        Ok(FixedPoint { nodes: idx.iter().map(|&j| self.times.nodes[j]).collect(), values: g, log, residual })
    }

    /// `∫_0^{t_j} R` at every node for a given trajectory.
    pub fn collision_history(&self, traj: &Trajectory) -> Result<Trajectory> {
        if traj.nodes != self.times.nodes {
            return Err(Error::Invalid("trajectory nodes differ from the solver time grid".into()));
        }
        let zero = vec![0.0; self.grid().len()];
        let idx: Vec<usize> = (0..self.times.len()).collect();
        let g: Vec<Vec<f64>> = traj.fields.iter().map(|f| f.h.clone()).collect();
        let c = self.apply(&zero, &self.times.cum, &idx, &g);
        let fields = traj
            .fields
            .iter()
            .zip(c)
            .map(|(f, h)| DistributionField { h, ..f.clone() })
            .collect();
        Trajectory::new(traj.nodes.clone(), fields)
    }
}

fn sup_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| par::max(x.len(), |i| (x[i] - y[i]).abs()))
        .fold(0.0, f64::max)
}

pub(crate) fn check_data(f: &DistributionField, p: &GlobalMaxwellianParams) -> Result<()> {
    if f.reference != *p {
        return Err(Error::Invalid("data field is relative to a different reference".into()));
    }
    if f.t != 0.0 {
        return Err(Error::Invalid(format!("initial data must be given at t = 0 (got {})", f.t)));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct CauchyRun {
    pub trajectory: Trajectory,
    pub log: Vec<IterRecord>,
    pub residual: Option<f64>,
    pub certificate: Certificate,
    pub measured_ratio: Option<f64>,
    /// Largest `|h - 1|` over the trajectory.
    pub sup_dev: f64,
    pub positivity: Option<PositivityVerdict>,
}

impl CauchyRun {
    pub fn ratio_ok(&self, slack: f64) -> bool {
        self.measured_ratio.is_none_or(|r| r <= self.certificate.rate + slack)
    }

    pub fn within_radius(&self, tol: f64) -> bool {
        self.sup_dev <= self.certificate.r + tol
    }
}

/// Mild solution with data `f_in` at `t = 0` on `[-T, T]`.
pub fn solve_cauchy(f_in: &DistributionField, p: &GlobalMaxwellianParams, k: &KernelSpec, cfg: &SolverConfig) -> Result<CauchyRun> {
    let solver = Solver::new(p, k, &f_in.grid, cfg)?;
    solve_with(&solver, f_in)
}

/// [`solve_cauchy`] reusing a prepared solver.
pub fn solve_with(solver: &Solver, f_in: &DistributionField) -> Result<CauchyRun> {
    check_data(f_in, &solver.p)?;
    if f_in.grid != *solver.grid() {
        return Err(Error::Invalid("data grid differs from the solver grid".into()));
    }
    let cert = solver.certificate(f_in.sup_deviation(1.0))?;
    let fp = solver.fixed_point(Anchor::Initial, Span::Full, &f_in.h)?;
    let trajectory = fp.to_trajectory(solver.grid(), &solver.p)?;
    let sup_dev = trajectory.fields.iter().map(|f| f.sup_deviation(1.0)).fold(0.0, f64::max);
    let positivity = if solver.cfg.positivity_check && cert.r <= 1.0 {
        Some(check_positivity(&trajectory, cert.r, solver.cfg.picard_tol)?)
    } else {
        None
    };
    Ok(CauchyRun {
        measured_ratio: fp.measured_ratio(),
        log: fp.log,
        residual: fp.residual,
        certificate: cert,
        sup_dev,
        positivity,
        trajectory,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositivityVerdict {
    pub lower: f64,
    pub upper: f64,
    pub min_h: f64,
    pub max_h: f64,
    /// Time and node index of the value farthest outside (or closest to) the band.
    pub worst_t: f64,
    pub worst_node: usize,
}

/// Checks `(1 - r) ≤ h ≤ (1 + r)` up to `tol` at every stored node.
pub fn check_positivity(traj: &Trajectory, r: f64, tol: f64) -> Result<PositivityVerdict> {
    if !(r >= 0.0 && r <= 1.0) {
        return Err(Error::Domain(format!("positivity band needs 0 <= r <= 1 (got {r})")));
    }
    let (lower, upper) = (1.0 - r - tol, 1.0 + r + tol);
    let mut min_h = f64::INFINITY;
    let mut max_h = f64::NEG_INFINITY;
    let mut worst = (f64::NEG_INFINITY, 0.0, 0usize);
    for f in &traj.fields {
        for (k, &h) in f.h.iter().enumerate() {
            min_h = min_h.min(h);
            max_h = max_h.max(h);
            let excess = if h.is_nan() { f64::INFINITY } else { (lower - h).max(h - upper) };
            if excess > worst.0 {
                worst = (excess, f.t, k);
            }
        }
    }
    if worst.0 > 0.0 {
        let f = &traj.fields[traj.nodes.iter().position(|&t| t == worst.1).unwrap_or(0)];
        let (v, y) = f.phase_point(worst.2);
        let d = f.grid.dim;
        return Err(Error::Positivity(format!(
            "node {} (v = {:?}, y = {:?}) at t = {}: h = {} outside [{lower}, {upper}]",
            worst.2,
            &v[..d],
            &y[..d],
            worst.1,
            f.h[worst.2]
        )));
    }
    Ok(PositivityVerdict { lower, upper, min_h, max_h, worst_t: worst.1, worst_node: worst.2 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub input_distance: f64,
    pub measured: f64,
    pub eps: f64,
    /// `δ / √((1 - 4ν̄)² - 8ν̄ε)`.
    pub lipschitz_bound: f64,
    /// `δ e^{4μ̄}`, soft potentials only.
    pub gronwall_bound: Option<f64>,
    pub tol: f64,
    pub holds: bool,
}

/// `δ/√((1-4ν)² - 8νε)`.
pub fn lipschitz_bound(nu: f64, eps: f64, delta: f64) -> Result<f64> {
    let den = (1.0 - 4.0 * nu).powi(2) - 8.0 * nu * eps;
    if !(den > 0.0) {
        return Err(Error::Domain(format!("eps = {eps} outside the ball for nu = {nu}")));
    }
    Ok(delta / den.sqrt())
}

/// Solves both data and compares the distance of the solutions with the
/// stability bounds.
pub fn stability_pair(
    f1: &DistributionField,
    f2: &DistributionField,
    p: &GlobalMaxwellianParams,
    k: &KernelSpec,
    cfg: &SolverConfig,
) -> Result<StabilityReport> {
    let solver = Solver::new(p, k, &f1.grid, cfg)?;
    let a = solve_with(&solver, f1)?;
    let b = solve_with(&solver, f2)?;
    stability_of_runs(&solver, f1, f2, &a, &b)
}

pub fn stability_of_runs(
    solver: &Solver,
    f1: &DistributionField,
    f2: &DistributionField,
    a: &CauchyRun,
    b: &CauchyRun,
) -> Result<StabilityReport> {
    let delta = crate::phase_field::weighted_sup_norm(f1, f2)?;
    let eps = a.certificate.eps.max(b.certificate.eps);
    let measured = a.trajectory.distance(&b.trajectory)?;
    let lip = lipschitz_bound(solver.nu_bar, eps, delta)?;
    let gron = if solver.kernel.beta <= 0.0 {
        Some(delta * (4.0 * bounds::mu_bound(&solver.p, &solver.kernel)?).exp())
    } else {
        None
    };
    let tol = 10.0 * solver.cfg.picard_tol;
    let best = gron.map_or(lip, |g| g.min(lip));
    Ok(StabilityReport {
        input_distance: delta,
        measured,
        eps,
        lipschitz_bound: lip,
        gronwall_bound: gron,
        tol,
        holds: measured <= best + tol,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagRow {
    pub t: f64,
    pub moments: Vec<f64>,
    /// `|m_i(t) - m_i(0)| / ∫ F(0) |φ_i|`.
    pub drift: Vec<f64>,
    pub h: f64,
    pub entropy_production: f64,
    pub sup_dev: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub labels: Vec<String>,
    pub rows: Vec<DiagRow>,
    pub max_drift: f64,
    /// `max_j H(t_{j+1}) - H(t_j)`; nonpositive for a nonincreasing H.
    pub max_h_increase: f64,
    pub max_entropy_production: f64,
}

impl Diagnostics {
    pub fn h_nonincreasing(&self, slack: f64) -> bool {
        self.max_h_increase <= slack
    }
}

/// `∫ F |φ_i|` for the conserved densities.
pub fn absolute_moments(f: &DistributionField) -> Vec<f64> {
    let d = f.grid.dim;
    let len = MomentVector::len_for(d);
    par::sum_vec(f.len(), len, |k, acc| {
        let (v, y) = f.phase_point(k);
        let mut tmp = vec![0.0; len];
        MomentVector::accumulate(&mut tmp, &v[..d], &y[..d], 1.0);
        let w = f.grid.weight(k) * f.h[k].abs() * f.reference_value(k);
        for (a, t) in acc.iter_mut().zip(tmp) {
            *a += w * t.abs();
        }
    })
}

/// Conservation, H and entropy production at every node of a trajectory.
pub fn run_diagnostics(traj: &Trajectory, k: &KernelSpec, cfg: &SolverConfig) -> Result<Diagnostics> {
    let f0 = traj.first();
    let sweep = CollisionSweep::new(&f0.reference, k, &f0.grid, cfg.n_omega, cfg.interp)?.with_projection(cfg.conservative);
    let start = traj.zero_index().unwrap_or(0);
    let m0 = traj.fields[start].moments();
    let scale = absolute_moments(&traj.fields[start]);
    let mut rows = Vec::with_capacity(traj.nodes.len());
    for f in &traj.fields {
        let m = f.moments();
        let drift = m
            .values
            .iter()
            .zip(&m0.values)
            .zip(&scale)
            .map(|((a, b), s)| if *s > 0.0 { (a - b).abs() / s } else { (a - b).abs() })
            .collect();
        rows.push(DiagRow {
            t: f.t,
            moments: m.values,
            drift,
            h: f.h_functional()?,
            entropy_production: sweep.entropy_production(f.t, &f.h)?,
            sup_dev: f.sup_deviation(1.0),
        });
    }
    let max_drift = rows.iter().flat_map(|r| r.drift.iter().copied()).fold(0.0, f64::max);
    let max_h_increase = rows.windows(2).map(|w| w[1].h - w[0].h).fold(f64::NEG_INFINITY, f64::max);
    let max_entropy_production = rows.iter().map(|r| r.entropy_production).fold(f64::NEG_INFINITY, f64::max);
    Ok(Diagnostics {
        labels: MomentVector::labels(f0.grid.dim),
        rows,
        max_drift,
        max_h_increase: if max_h_increase.is_finite() { max_h_increase } else { 0.0 },
        max_entropy_production,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk(m: f64) -> GlobalMaxwellianParams {
        GlobalMaxwellianParams::standard(2, m)
    }

    #[test]
    fn time_weights_integrate_theta() {
        // with K ≡ 1 the cumulative weights give ∫_0^t θ^{(D+β)/2} ds
        for (p, beta) in [
            (desk(1.0), 0.0),
            (GlobalMaxwellianParams::centered(2, 1.0, 2.0, 0.7, 1.0, 0.3).unwrap(), -0.5),
            (GlobalMaxwellianParams::centered(3, 1.0, 1.5, -0.3, 0.8, 0.2).unwrap(), 0.5),
        ] {
            let tg = TimeGrid::new(&p, beta, 40.0, 17).unwrap();
            let pexp = 0.5 * (p.dim() as f64 + beta);
            for (j, &t) in tg.nodes.iter().enumerate() {
                let got: f64 = tg.cum[j].iter().sum();
                let f = |s: f64| p.theta(s).powf(pexp);
                let exact = if t >= 0.0 {
                    quad::adaptive(f, 0.0, t, 1e-13).unwrap()
                } else {
                    -quad::adaptive(f, t, 0.0, 1e-13).unwrap()
                };
                assert!((got - exact).abs() < 1e-11 * (1.0 + exact.abs()), "{j} {t} {got} {exact}");
            }
        }
    }

    #[test]
    fn time_grid_shape() {
        let p = desk(1.0);
        let tg = TimeGrid::new(&p, 0.0, 1e6, 9).unwrap();
        assert_eq!(tg.len(), 9);
        assert_eq!(tg.zero, 4);
        assert_eq!((tg.nodes[0], tg.nodes[4], tg.nodes[8]), (-1e6, 0.0, 1e6));
        assert!(tg.nodes.windows(2).all(|w| w[0] < w[1]));
        assert!(tg.cum[4].iter().all(|&x| x == 0.0));
        let one = TimeGrid::new(&p, 0.0, 0.0, 9).unwrap();
        assert_eq!(one.nodes, vec![0.0]);
        assert!(TimeGrid::new(&p, 0.0, 1.0, 4).is_err());
    }

    #[test]
    fn maps_are_inverse() {
        let p = GlobalMaxwellianParams::centered(3, 1.0, 1.5, 0.4, 1.2, 0.3).unwrap();
        for s in [-3.0, 0.0, 0.7, 25.0] {
            let fr = NodeFrame::new(&p, s);
            let xi = [0.3, -1.2, 0.8];
            let w = [1.1, 0.2, -0.5];
            let (v, y) = fr.inverse(3, &xi, &w);
            let (xi2, w2) = fr.forward(3, &v, &y);
            for j in 0..3 {
                assert!((xi[j] - xi2[j]).abs() < 1e-12 && (w[j] - w2[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reference_is_gaussian_on_collision_grid() {
        let p = GlobalMaxwellianParams::centered(2, 0.8, 1.3, 0.4, 0.9, 0.2).unwrap();
        let d = 2;
        let pref = p.m() * p.sqrt_det_q() / (2.0 * PI).powi(2);
        for s in [-2.0, 0.0, 1.5] {
            let fr = NodeFrame::new(&p, s);
            let xi = [0.4, -0.9, 0.0];
            let w = [-1.0, 0.6, 0.0];
            let (vv, yy) = fr.inverse(d, &xi, &w);
            let v: Vec<f64> = (0..d).map(|j| p.v0()[j] + vv[j]).collect();
            let x: Vec<f64> = (0..d).map(|j| p.x0()[j] + yy[j] + s * v[j]).collect();
            let mut qq = 0.0;
            for i in 0..d {
                for j in 0..d {
                    qq += xi[i] * p.q()[(i, j)] * xi[j];
                }
            }
            let expect = pref * (-0.5 * qq - 0.5 * (w[0] * w[0] + w[1] * w[1])).exp();
            let got = p.eval(&v, &x, s);
            assert!((got / expect - 1.0).abs() < 1e-12, "{s} {got} {expect}");
        }
    }
}
