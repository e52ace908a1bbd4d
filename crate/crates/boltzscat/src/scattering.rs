//! Asymptotic states, wave operators and the scattering operator.
//!
//! Every operator here is one anchored fixed point of [`Solver`] on its time
//! grid. Because the forward and inverse maps share the same discrete
//! trajectory, round trips close up to the Picard tolerance.

use crate::bounds;
use crate::collision::KernelSpec;
use crate::maxwellian::{GlobalMaxwellianParams, MomentVector};
use crate::phase_field::{weighted_sup_norm, DistributionField, Frame, Trajectory};
use crate::solver::{absolute_moments, check_data, Anchor, Certificate, IterRecord, Solver, SolverConfig, Span};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Plus,
    Minus,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Plus => 1.0,
            Direction::Minus => -1.0,
        }
    }
}

/// `F^{±∞}` read off a trajectory with its truncation error bar.
#[derive(Clone, Debug)]
pub struct Asymptote {
    /// Comoving field at the end node, relabelled as a `t = 0` field.
    pub field: DistributionField,
    pub direction: Direction,
    pub t_cut: f64,
    pub tail: f64,
    /// `2(1 + r)² · tail`: sup of `|h^{±∞} - h(±T)|`.
    pub error_bar: f64,
    /// The same bound in `L¹`, `error_bar · m`.
    pub l1_error_bar: f64,
    pub sup_dev: f64,
    /// `(1 - r) ≤ h^{±∞} ≤ (1 + r)` up to the error bar.
    pub in_band: bool,
}

fn end_node(traj: &Trajectory, dir: Direction) -> Result<usize> {
    let (k, t) = match dir {
        Direction::Plus => (traj.nodes.len() - 1, traj.nodes[traj.nodes.len() - 1]),
        Direction::Minus => (0, traj.nodes[0]),
    };
    // a single node is the zero-width window
    if traj.nodes.len() > 1 && !(t * dir.sign() > 0.0) {
        return Err(Error::Invalid(format!("trajectory does not reach the {dir:?} side (end node {t})")));
    }
    Ok(k)
}

fn as_initial(f: &DistributionField) -> DistributionField {
    DistributionField { t: 0.0, frame: Frame::Comoving, ..f.clone() }
}

/// Extracts `F^{±∞}` from the end node of `traj`. `r` is the radius that
/// bounds the trajectory; `tol`, when given, is the largest acceptable
/// error bar.
pub fn extract_asymptote(traj: &Trajectory, dir: Direction, k: &KernelSpec, r: f64, tol: Option<f64>) -> Result<Asymptote> {
    let idx = end_node(traj, dir)?;
    let f = &traj.fields[idx];
    let t_cut = traj.nodes[idx].abs();
    let tail = bounds::tail_bound(&f.reference, k, t_cut)?;
    let error_bar = 2.0 * (1.0 + r).powi(2) * tail;
    if let Some(tol) = tol {
        if error_bar > tol {
            return Err(Error::Domain(format!(
                "window T = {t_cut:e} leaves a tail error {error_bar:e} above the requested {tol:e}"
            )));
        }
    }
    let field = as_initial(f);
    let sup_dev = field.sup_deviation(1.0);
    Ok(Asymptote {
        in_band: sup_dev <= r + error_bar,
        sup_dev,
        l1_error_bar: error_bar * f.reference.m(),
        field,
        direction: dir,
        t_cut,
        tail,
        error_bar,
    })
}

/// Output of one wave or scattering map.
#[derive(Clone, Debug)]
pub struct ScatterRun {
    pub output: DistributionField,
    pub trajectory: Trajectory,
    pub log: Vec<IterRecord>,
    pub residual: Option<f64>,
    pub certificate: Certificate,
    pub measured_ratio: Option<f64>,
    /// Truncation error of the output, `2(1 + r)² · tail`.
    pub error_bar: f64,
}

impl ScatterRun {
    pub fn ratio_ok(&self, slack: f64) -> bool {
        self.measured_ratio.is_none_or(|r| r <= self.certificate.rate + slack)
    }

    pub fn output_deviation(&self) -> f64 {
        self.output.sup_deviation(1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    /// `F^{in} ↦ F^{+∞}`.
    WavePlus,
    /// `F^{in} ↦ F^{-∞}`.
    WaveMinus,
    WavePlusInverse,
    WaveMinusInverse,
    Scatter,
    ScatterInverse,
}

impl Operator {
    pub const ALL: [Operator; 6] = [
        Operator::WavePlus,
        Operator::WaveMinus,
        Operator::WavePlusInverse,
        Operator::WaveMinusInverse,
        Operator::Scatter,
        Operator::ScatterInverse,
    ];

    fn setup(self) -> (Anchor, Span, bool) {
        // (anchor, span, output at the last active node)
        match self {
            Operator::WavePlus => (Anchor::Initial, Span::Forward, true),
            Operator::WaveMinus => (Anchor::Initial, Span::Backward, false),
            Operator::WavePlusInverse => (Anchor::PlusInfinity, Span::Forward, false),
            Operator::WaveMinusInverse => (Anchor::MinusInfinity, Span::Backward, true),
            Operator::Scatter => (Anchor::MinusInfinity, Span::Full, true),
            Operator::ScatterInverse => (Anchor::PlusInfinity, Span::Full, false),
        }
    }
}

/// Applies `op` to `input` with a prepared solver.
pub fn apply_operator(solver: &Solver, op: Operator, input: &DistributionField) -> Result<ScatterRun> {
    check_data(input, &solver.p)?;
    if input.grid != *solver.grid() {
        return Err(Error::Invalid("input grid differs from the solver grid".into()));
    }
    let cert = solver.certificate(input.sup_deviation(1.0))?;
    let (anchor, span, last) = op.setup();
    let fp = solver.fixed_point(anchor, span, &input.h)?;
    let trajectory = fp.to_trajectory(solver.grid(), &solver.p)?;
    let out = if last { trajectory.last() } else { trajectory.first() };
    let error_bar = 2.0 * (1.0 + cert.r).powi(2) * solver.tail;
    Ok(ScatterRun {
        output: as_initial(out),
        measured_ratio: fp.measured_ratio(),
        log: fp.log,
        residual: fp.residual,
        certificate: cert,
        error_bar,
        trajectory,
    })
}

fn with_solver<T>(
    f: &DistributionField,
    p: &GlobalMaxwellianParams,
    k: &KernelSpec,
    cfg: &SolverConfig,
    run: impl FnOnce(&Solver) -> Result<T>,
) -> Result<T> {
    let solver = Solver::new(p, k, &f.grid, cfg)?;
    run(&solver)
}

/// `T^±`: the asymptotic state of the solution with data `f_in`.
pub fn wave_operator(f_in: &DistributionField, dir: Direction, p: &GlobalMaxwellianParams, k: &KernelSpec, cfg: &SolverConfig) -> Result<ScatterRun> {
    let op = if dir == Direction::Plus { Operator::WavePlus } else { Operator::WaveMinus };
    with_solver(f_in, p, k, cfg, |s| apply_operator(s, op, f_in))
}

/// `(T^±)^{-1}`: data at `t = 0` whose solution tends to `f_inf`. The
/// returned trajectory covers the half-line on the side of `dir`.
pub fn wave_inverse(f_inf: &DistributionField, dir: Direction, p: &GlobalMaxwellianParams, k: &KernelSpec, cfg: &SolverConfig) -> Result<ScatterRun> {
    let op = if dir == Direction::Plus { Operator::WavePlusInverse } else { Operator::WaveMinusInverse };
    with_solver(f_inf, p, k, cfg, |s| apply_operator(s, op, f_inf))
}

/// `S F^{-∞} = F^{+∞}`.
pub fn scatter(f_minus: &DistributionField, p: &GlobalMaxwellianParams, k: &KernelSpec, cfg: &SolverConfig) -> Result<ScatterRun> {
    with_solver(f_minus, p, k, cfg, |s| apply_operator(s, Operator::Scatter, f_minus))
}

/// `S^{-1} F^{+∞} = F^{-∞}`.
pub fn scatter_inverse(f_plus: &DistributionField, p: &GlobalMaxwellianParams, k: &KernelSpec, cfg: &SolverConfig) -> Result<ScatterRun> {
    with_solver(f_plus, p, k, cfg, |s| apply_operator(s, Operator::ScatterInverse, f_plus))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConservationReport {
    pub labels: Vec<String>,
    pub minus: Vec<f64>,
    pub plus: Vec<f64>,
    pub residual: Vec<f64>,
    /// Residual over `∫ F^{-∞} |φ_i|`.
    pub relative: Vec<f64>,
    pub max_relative: f64,
}

/// Compares the conserved moments of two asymptotic states.
pub fn check_scatter_conservation(f_minus: &DistributionField, f_plus: &DistributionField) -> Result<ConservationReport> {
    f_minus.check_compatible(f_plus)?;
    let a = f_minus.moments();
    let b = f_plus.moments();
    let scale = absolute_moments(f_minus);
    let residual: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| (y - x).abs()).collect();
    let relative: Vec<f64> =
        residual.iter().zip(&scale).map(|(r, s)| if *s > 0.0 { r / s } else { *r }).collect();
    Ok(ConservationReport {
        labels: MomentVector::labels(a.dim),
        max_relative: relative.iter().copied().fold(0.0, f64::max),
        minus: a.values,
        plus: b.values,
        residual,
        relative,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HReport {
    pub h_minus: f64,
    pub h_plus: f64,
    /// `H[F^{-∞}] - H[F^{+∞}]`.
    pub decrease: f64,
    pub slack: f64,
    pub holds: bool,
    /// Decrease within the slack.
    pub maxwellian_like: bool,
}

/// H ordering between two asymptotic states. `r` is the certified radius;
/// the H functional is only defined on the positive side, `r ≤ 1`.
pub fn check_h_decrease(f_minus: &DistributionField, f_plus: &DistributionField, r: f64, slack: f64) -> Result<HReport> {
    if !(r <= 1.0) {
        return Err(Error::Domain(format!("positivity is not certified: radius r = {r} exceeds 1")));
    }
    f_minus.check_compatible(f_plus)?;
    let h_minus = f_minus.h_functional()?;
    let h_plus = f_plus.h_functional()?;
    let decrease = h_minus - h_plus;
    Ok(HReport { h_minus, h_plus, decrease, slack, holds: decrease >= -slack, maxwellian_like: decrease.abs() <= slack })
}

#[derive(Clone, Debug)]
pub struct FitReport {
    pub params: GlobalMaxwellianParams,
    /// Largest scaled residual `|m_i(fit) - m_i| / (m + |m_i|)`.
    pub residual: f64,
    pub iterations: usize,
}

const FIT_TOL: f64 = 1e-10;

fn n_params(d: usize) -> usize {
    MomentVector::len_for(d)
}

// layout: m, x0 (D), v0 (D), a, b, c, B above the diagonal
fn unpack(d: usize, th: &[f64]) -> Result<GlobalMaxwellianParams> {
    let x0 = th[1..1 + d].to_vec();
    let v0 = th[1 + d..1 + 2 * d].to_vec();
    let (a, b, c) = (th[1 + 2 * d], th[2 + 2 * d], th[3 + 2 * d]);
    let mut bm = DMatrix::zeros(d, d);
    let mut k = 4 + 2 * d;
    for i in 0..d {
        for j in (i + 1)..d {
            bm[(i, j)] = th[k];
            bm[(j, i)] = -th[k];
            k += 1;
        }
    }
    GlobalMaxwellianParams::new(d, th[0], a, b, c, bm, x0, v0)
}

fn pack(p: &GlobalMaxwellianParams) -> Vec<f64> {
    let d = p.dim();
    let mut th = vec![p.m()];
    th.extend_from_slice(p.x0());
    th.extend_from_slice(p.v0());
    th.extend([p.a(), p.b(), p.c()]);
    for i in 0..d {
        for j in (i + 1)..d {
            th.push(p.bmat()[(i, j)]);
        }
    }
    th
}

fn scaled_residual(d: usize, th: &[f64], target: &MomentVector) -> Option<DVector<f64>> {
    let p = unpack(d, th).ok()?;
    let got = p.analytic_moments();
    let m = target.mass();
    Some(DVector::from_iterator(
        target.values.len(),
        got.values.iter().zip(&target.values).map(|(g, t)| (g - t) / (m + t.abs())),
    ))
}

/// Global Maxwellian with the given conserved moments, by damped Newton
/// from the closure `b = 0, B = 0`.
pub fn fit_global_maxwellian(target: &MomentVector) -> Result<FitReport> {
    let d = target.dim;
    let n = n_params(d);
    if target.values.len() != n {
        return Err(Error::Invalid(format!("moment vector has {} entries, D = {d} needs {n}", target.values.len())));
    }
    let m = target.mass();
    if !(m > 0.0) {
        return Err(Error::Domain(format!("moments are not realizable: mass {m} must be positive")));
    }
    let mv = &target.values;
    let vbar: Vec<f64> = (0..d).map(|i| mv[1 + i] / m).collect();
    let xbar: Vec<f64> = (0..d).map(|i| mv[d + 2 + i] / m).collect();
    let var_w = 2.0 * mv[d + 1] / m - vbar.iter().map(|x| x * x).sum::<f64>();
    let var_z = 2.0 * mv[2 * d + 2] / m - xbar.iter().map(|x| x * x).sum::<f64>();
    if !(var_w > 0.0 && var_z > 0.0) {
        return Err(Error::Domain(format!(
            "moments are not realizable: velocity spread {var_w:e} and position spread {var_z:e} must be positive"
        )));
    }
    let cross = mv[2 * d + 3] / m - xbar.iter().zip(&vbar).map(|(x, v)| x * v).sum::<f64>();
    if !(cross * cross < var_w * var_z) {
        return Err(Error::Domain("moments are not realizable: x·v correlation exceeds the spreads".into()));
    }
    let mut th = vec![m];
    th.extend_from_slice(&xbar);
    th.extend_from_slice(&vbar);
    th.extend([d as f64 / var_z, 0.0, d as f64 / var_w]);
    th.extend(std::iter::repeat_n(0.0, d * (d - 1) / 2));
    let mut res = scaled_residual(d, &th, target)
        .ok_or_else(|| Error::Domain("closure guess is not an admissible Maxwellian".into()))?;
    let mut norm = res.amax();
    let mut iters = 0;
    while norm > FIT_TOL {
        iters += 1;
        if iters > 100 {
            return Err(Error::NotConverged { iters, delta: norm, ratio: f64::NAN });
        }
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = 1e-6 * th[j].abs().max(1e-2);
            let mut tp = th.clone();
            let mut tm = th.clone();
            tp[j] += h;
            tm[j] -= h;
            let (rp, rm) = match (scaled_residual(d, &tp, target), scaled_residual(d, &tm, target)) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(Error::Domain("Newton iterate left the admissible set".into())),
            };
            jac.set_column(j, &((rp - rm) / (2.0 * h)));
        }
        let step = jac
            .lu()
            .solve(&(-&res))
            .ok_or_else(|| Error::Domain(format!("singular Jacobian after {iters} iterations (residual {norm:e})")))?;
        let mut lam = 1.0;
        loop {
            let trial: Vec<f64> = th.iter().zip(step.iter()).map(|(t, s)| t + lam * s).collect();
            if let Some(r) = scaled_residual(d, &trial, target) {
                if r.amax() < norm {
                    th = trial;
                    res = r;
                    norm = res.amax();
                    break;
                }
            }
            lam *= 0.5;
            if lam < 1e-12 {
                return Err(Error::NotConverged { iters, delta: norm, ratio: f64::NAN });
            }
        }
    }
    Ok(FitReport { params: unpack(d, &th)?, residual: norm, iterations: iters })
}

/// Parameter vector in the fit's layout, for comparisons.
pub fn fit_parameters(p: &GlobalMaxwellianParams) -> Vec<f64> {
    pack(p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectivityReport {
    pub asymptote_distance: f64,
    pub mu_bar: f64,
    /// `|ΔF^{+∞}| e^{4μ̄}`.
    pub bound: f64,
    pub tol: f64,
    pub nodes: Vec<f64>,
    pub measured: Vec<f64>,
    pub max_measured: f64,
    pub holds: bool,
}

/// Node-wise distance of two trajectories against the asymptote bound.
pub fn injectivity_bound(
    traj1: &Trajectory,
    traj2: &Trajectory,
    f1_inf: &DistributionField,
    f2_inf: &DistributionField,
    k: &KernelSpec,
    tol: f64,
) -> Result<InjectivityReport> {
    if k.beta > 0.0 {
        return Err(Error::Unsupported(format!(
            "the asymptote bound is only available for soft and Maxwell kernels (beta = {} > 0)",
            k.beta
        )));
    }
    let mu = bounds::mu_bound(&f1_inf.reference, k)?;
    injectivity_bound_with_mu(traj1, traj2, f1_inf, f2_inf, mu, tol)
}

/// [`injectivity_bound`] with an explicit `μ̄`.
pub fn injectivity_bound_with_mu(
    traj1: &Trajectory,
    traj2: &Trajectory,
    f1_inf: &DistributionField,
    f2_inf: &DistributionField,
    mu: f64,
    tol: f64,
) -> Result<InjectivityReport> {
    if traj1.nodes != traj2.nodes {
        return Err(Error::Invalid("trajectories on different nodes".into()));
    }
    let dist = weighted_sup_norm(f1_inf, f2_inf)?;
    let bound = dist * (4.0 * mu).exp();
    let measured = traj1
        .fields
        .iter()
        .zip(&traj2.fields)
        .map(|(a, b)| weighted_sup_norm(a, b))
        .collect::<Result<Vec<_>>>()?;
    let max_measured = measured.iter().copied().fold(0.0, f64::max);
    Ok(InjectivityReport {
        asymptote_distance: dist,
        mu_bar: mu,
        bound,
        tol,
        nodes: traj1.nodes.clone(),
        holds: max_measured <= bound + tol,
        measured,
        max_measured,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEntry {
    pub input_distance: f64,
    pub output_distance: f64,
    pub eps: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub operator: Operator,
    pub tol: f64,
    pub entries: Vec<LipschitzEntry>,
    pub all_hold: bool,
}

/// Applies `op` to both members of every pair and compares the output
/// distance with `δ / √((1 - 4ν̄)² - 8ν̄ε)`.
pub fn lipschitz_check(solver: &Solver, op: Operator, pairs: &[(DistributionField, DistributionField)]) -> Result<LipschitzReport> {
    let tol = 10.0 * solver.cfg.picard_tol;
    let mut entries = Vec::with_capacity(pairs.len());
    for (f1, f2) in pairs {
        let a = apply_operator(solver, op, f1)?;
        let b = apply_operator(solver, op, f2)?;
        let input_distance = weighted_sup_norm(f1, f2)?;
        let output_distance = weighted_sup_norm(&a.output, &b.output)?;
        let eps = a.certificate.eps.max(b.certificate.eps);
        let bound = crate::solver::lipschitz_bound(solver.nu_bar, eps, input_distance)?;
        entries.push(LipschitzEntry { input_distance, output_distance, eps, bound, holds: output_distance <= bound + tol });
    }
    Ok(LipschitzReport { operator: op, tol, all_hold: entries.iter().all(|e| e.holds), entries })
}
