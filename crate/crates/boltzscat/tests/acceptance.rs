//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Single-field checks use the desk grid (D = 2, Nv = Nx = 16, Nω = 16,
//! Nt = 17). Suites that solve many pairs use Nv = Nx = 12, Nt = 9.

use boltzscat::bounds::{self, eps_max, eps_of_r, mu_of_m, nu_of_m, r_max, r_of_eps};
use boltzscat::cli::random_field;
use boltzscat::collision::{a_beta, a_beta_zero, post_collision, KernelSpec, VelGrid, VelocityCollision, VelocityField};
use boltzscat::maxwellian::{local_maxwellian, GlobalMaxwellianParams};
use boltzscat::phase_field::{weighted_sup_norm, DistributionField, Frame, PhaseGrid};
use boltzscat::scattering::{
    apply_operator, check_h_decrease, check_scatter_conservation, fit_global_maxwellian, fit_parameters,
    injectivity_bound, lipschitz_check, Operator,
};
use boltzscat::solver::{run_diagnostics, solve_with, stability_of_runs, Solver, SolverConfig};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

type Res<T> = Result<T, Box<dyn std::error::Error>>;

struct Suite {
    lines: Vec<String>,
    ok: bool,
}

impl Suite {
    fn new() -> Self {
        Suite { lines: Vec::new(), ok: true }
    }

    fn check(&mut self, label: &str, ok: bool, detail: String) {
        self.ok &= ok;
        let line = format!("    [{}] {label}: {detail}", if ok { "ok" } else { "FAIL" });
        println!("{line}");
        self.lines.push(line);
    }
}

fn kernel() -> KernelSpec {
    KernelSpec::constant(2, 0.0, 1.0).unwrap()
}

/// ν̄ = 1/8 on the standard shape.
fn reference() -> GlobalMaxwellianParams {
    let p = GlobalMaxwellianParams::standard(2, 1.0);
    p.with_mass(bounds::admissible_mass(&p, &kernel(), 0.5).unwrap()).unwrap()
}

fn desk_grid(p: &GlobalMaxwellianParams) -> PhaseGrid {
    PhaseGrid::new(2, 16, 6.0, 16, 6.0, p).unwrap()
}

fn small_grid(p: &GlobalMaxwellianParams, n: usize) -> PhaseGrid {
    PhaseGrid::new(2, n, 6.0, n, 6.0, p).unwrap()
}

fn small_cfg() -> SolverConfig {
    SolverConfig { nt: 9, ..Default::default() }
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.2e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn random_params(rng: &mut ChaCha8Rng, dim: usize) -> GlobalMaxwellianParams {
    loop {
        let m = rng.random_range(0.05..3.0);
        let a = rng.random_range(0.4..2.5);
        let c = rng.random_range(0.4..2.5);
        let b = rng.random_range(-0.7..0.7) * (a * c as f64).sqrt();
        let mut bm = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in i + 1..dim {
                let w = rng.random_range(-0.4..0.4);
                bm[(i, j)] = w;
                bm[(j, i)] = -w;
            }
        }
        let x0 = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v0 = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if let Ok(p) = GlobalMaxwellianParams::new(dim, m, a, b, c, bm, x0, v0) {
            return p;
        }
    }
}

fn constants(s: &mut Suite) -> Res<()> {
    for dim in [2usize, 3] {
        for beta in [-0.5, 0.0, 1.0] {
            let closed = a_beta_zero(beta, dim);
            let quad = a_beta(&vec![0.0; dim], beta, dim)?;
            s.check(&format!("a_beta(0) D={dim} beta={beta}"), rel(quad, closed) <= 1e-6, format!("{:.2e}", rel(quad, closed)));
        }
    }
    let cases = [
        GlobalMaxwellianParams::standard(2, 1.0),
        GlobalMaxwellianParams::centered(2, 0.7, 1.2, 0.3, 1.1, 0.25)?,
        GlobalMaxwellianParams::new(2, 2.0, 1.5, -0.2, 0.8, DMatrix::from_row_slice(2, 2, &[0.0, 0.2, -0.2, 0.0]), vec![0.3, -0.2], vec![0.1, 0.2])?,
    ];
    for (i, p) in cases.iter().enumerate() {
        // Nv = Nx = 16 on a box of six marginal standard deviations (tail below 1e-8)
        let cov = p.covariance();
        let sv = cov[(0, 0)].max(cov[(1, 1)]).sqrt();
        let sx = cov[(2, 2)].max(cov[(3, 3)]).sqrt();
        let g = PhaseGrid::new(2, 16, 6.0 * sv, 16, 6.0 * sx, p)?;
        s.check(&format!("box tail, case {i}"), g.tail_mass(p) < 1e-8, format!("{:.2e}", g.tail_mass(p)));
        let f = DistributionField::constant(&g, p, 0.0, Frame::Comoving, 1.0);
        let mass = f.moments().mass();
        s.check(&format!("mass of M, case {i}"), rel(mass, p.m()) <= 1e-6, format!("{:.2e}", rel(mass, p.m())));
        let h = f.h_functional()?;
        s.check(&format!("H of M, case {i}"), rel(h, p.h_value()) <= 1e-6, format!("{:.2e}", rel(h, p.h_value())));
    }
    Ok(())
}

fn bound_consistency(s: &mut Suite) -> Res<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut nu_ok, mut mu_ok, mut mu_sets) = (0, 0, 0);
    let mut worst_nu: f64 = 0.0;
    let mut worst_mu: f64 = 0.0;
    for i in 0..100 {
        let dim = 2 + i % 2;
        let p = random_params(&mut rng, dim);
        let lo = 1.0 - dim as f64;
        let beta = rng.random_range(lo + 0.05..1.0);
        let k = KernelSpec::constant(dim, beta, rng.random_range(0.5..2.0))?;
        let nu = nu_of_m(&p, &k, 64)?;
        worst_nu = worst_nu.max(nu.numeric / nu.bound);
        nu_ok += (nu.numeric <= nu.bound) as usize;
        if beta <= 0.0 {
            let mu = mu_of_m(&p, &k, 64)?;
            mu_sets += 1;
            worst_mu = worst_mu.max(mu.numeric / mu.bound);
            mu_ok += (mu.numeric <= mu.bound) as usize;
        }
    }
    s.check("sampled nu <= bound", nu_ok == 100, format!("{nu_ok}/100, max ratio {worst_nu:.4}"));
    s.check("sampled mu <= bound", mu_ok == mu_sets, format!("{mu_ok}/{mu_sets}, max ratio {worst_mu:.4}"));

    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let nu = rng.random_range(1e-3..0.2499);
        let r = rng.random_range(0.0..0.999) * r_max(nu)?;
        let back = r_of_eps(nu, eps_of_r(nu, r)?)?;
        worst = worst.max((back - r).abs() / (1.0 + r));
    }
    s.check("r_of_eps(eps_of_r(r)) = r", worst <= 1e-12, format!("{worst:.2e}"));
    let r = r_of_eps(0.125, 7.0 / 64.0)?;
    s.check("nu = 1/8, eps = 7/64 gives r = 1/4", r == 0.25, format!("{r}"));
    for nu in [0.125, 0.05, 0.2] {
        let r = r_of_eps(nu, eps_max(nu)?)?;
        let expect = 1.0 / (4.0 * nu) - 1.0;
        s.check(&format!("boundary eps, nu = {nu}"), (r - expect).abs() <= 1e-12 * expect, format!("{r} vs {expect}"));
    }
    Ok(())
}

fn collision_suite(s: &mut Suite) -> Res<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let dim = rng.random_range(2..=3);
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
        let w: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut om: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = om.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-3 {
            continue;
        }
        om.iter_mut().for_each(|x| *x /= n);
        let (vp, wp) = post_collision(&v, &w, &om)?;
        for i in 0..dim {
            worst = worst.max((vp[i] + wp[i] - v[i] - w[i]).abs());
        }
        let e = |a: &[f64], b: &[f64]| a.iter().chain(b).map(|x| x * x).sum::<f64>();
        worst = worst.max((e(&vp, &wp) - e(&v, &w)).abs());
    }
    s.check("post-collision conservation", worst <= 1e-13, format!("{worst:.2e}"));

    let k = kernel();
    let desk = VelocityCollision::new(&k, 16, 16)?;
    let g16 = VelGrid { dim: 2, n: 16, wmax: 6.0 };
    let m = VelocityField::sample(g16.clone(), 1.0, vec![0.0, 0.0], 1.0, |v| local_maxwellian(1.0, &[0.0, 0.0], 1.0, v));
    let (gain, loss) = m.collision(&desk);
    let bmm = gain.iter().zip(&loss).map(|(a, b)| (a - b).abs() / b).fold(0.0, f64::max);
    s.check("B(M,M)/(A(M)M) at the desk grid", bmm <= 1e-3, format!("{bmm:.2e}"));

    // a local Maxwellian that does not match the grid scaling
    let off = |n: usize, nw: usize| -> Res<f64> {
        let op = VelocityCollision::new(&k, n, nw)?;
        let g = VelGrid { dim: 2, n, wmax: 6.0 };
        let f = VelocityField::sample(g.clone(), 1.0, vec![0.0, 0.0], 1.0, |v| local_maxwellian(1.0, &[0.3, -0.2], 0.8, v));
        let (gain, loss) = f.collision(&op);
        let scale = loss.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mut r: f64 = 0.0;
        for i in 0..gain.len() {
            let v = g.node(i);
            if v[0].hypot(v[1]) <= 3.0 {
                r = r.max((gain[i] - loss[i]).abs());
            }
        }
        Ok(r / scale)
    };
    let levels = [(12, 12), (16, 16), (24, 24), (32, 32)];
    let res: Vec<f64> = levels.iter().map(|&(n, nw)| off(n, nw)).collect::<Res<_>>()?;
    let falling = res.windows(2).all(|w| w[1] < w[0]);
    s.check("off-grid B(M,M) falls under refinement", falling, format!("{} at (Nv, Nw) = {levels:?}", sci(&res)));

    let pert = |v: &[f64]| local_maxwellian(1.0, &[0.0, 0.0], 1.0, v) * (1.0 + 0.3 * (0.7 * v[0] + 0.4).sin() * (0.5 * v[1]).cos());
    for (name, f) in [
        ("M", VelocityField::sample_moment_matched(g16.clone(), |v| local_maxwellian(1.0, &[0.0, 0.0], 1.0, v))),
        ("perturbed M", VelocityField::sample_moment_matched(g16.clone(), pert)),
    ] {
        let wf = f.weak_form_moments(&desk);
        let worst = [wf.mass, wf.momentum[0], wf.momentum[1], wf.energy].iter().fold(0.0f64, |m, x| m.max(x.abs())) / wf.scale;
        s.check(&format!("weak-form moments, {name}"), worst <= 1e-3, format!("{worst:.2e} of scale"));
    }
    let scale_of = |f: &VelocityField| desk.kernel().bbar * f.rho * f.rho;
    for (rho, u, th) in [(1.0, [0.0, 0.0], 1.0), (0.7, [0.5, 0.25], 1.4), (2.0, [-1.0, 0.3], 0.6)] {
        let f = VelocityField::sample_moment_matched(g16.clone(), |v| local_maxwellian(rho, &u, th, v));
        let ep = f.entropy_production(&desk)?;
        s.check(&format!("entropy production, M[{rho}, {u:?}, {th}]"), ep <= 1e-6 * scale_of(&f), format!("{ep:.2e}"));
    }
    let bi = VelocityField::sample_moment_matched(g16, |v| {
        0.5 * (local_maxwellian(1.0, &[2.0, 0.0], 1.0, v) + local_maxwellian(1.0, &[-2.0, 0.0], 1.0, v))
    });
    let ep = bi.entropy_production(&desk)?;
    s.check("entropy production, bimaxwellian < -tol", ep < -1e-6 * scale_of(&bi), format!("{ep:.3e}"));
    Ok(())
}

fn cauchy_suite(s: &mut Suite) -> Res<()> {
    let p = reference();
    let k = kernel();
    let g = desk_grid(&p);
    let cfg = SolverConfig::default();
    let t0 = Instant::now();
    let solver = Solver::new(&p, &k, &g, &cfg)?;
    let m0 = DistributionField::constant(&g, &p, 0.0, Frame::Comoving, 1.0);
    let mrun = solve_with(&solver, &m0)?;
    s.check("F_in = M(0) reproduces M", mrun.sup_dev <= cfg.picard_tol, format!("sup dev {:.2e}", mrun.sup_dev));

    let f = random_field(&g, &p, 0.2, 4, 101);
    let run = solve_with(&solver, &f)?;
    let c = &run.certificate;
    let iters = run.log.len();
    let bound = c.rate + 0.05;
    let ratio = run.measured_ratio.unwrap_or(f64::NAN);
    s.check(
        "geometric convergence",
        iters >= 3 && ratio <= bound,
        format!("{iters} iterations, ratio {ratio:.4} <= 4nu(1+r) + 0.05 = {bound:.4}"),
    );
    let sandwich = c.eps <= 1.0 - 6.0 * c.nu_bar;
    let pos = run.positivity.as_ref();
    s.check(
        "positivity sandwich",
        sandwich && pos.is_some_and(|v| v.min_h >= v.lower && v.max_h <= v.upper),
        format!("eps {:.3} <= {:.3}, h in [{:.4}, {:.4}] within [{:.4}, {:.4}]", c.eps, 1.0 - 6.0 * c.nu_bar,
            pos.map_or(f64::NAN, |v| v.min_h), pos.map_or(f64::NAN, |v| v.max_h), 1.0 - c.r, 1.0 + c.r),
    );
    let d = run_diagnostics(&run.trajectory, &k, &cfg)?;
    s.check("moment drift", d.max_drift <= 1e-3, format!("{:.2e}", d.max_drift));
    s.check("H nonincreasing", d.h_nonincreasing(1e-6), format!("max increase {:.2e}", d.max_h_increase));
    println!("    desk solves: {:.1} s", t0.elapsed().as_secs_f64());

    let t0 = Instant::now();
    let g = small_grid(&p, 12);
    let cfg = small_cfg();
    let solver = Solver::new(&p, &k, &g, &cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut lip_ok, mut gron_ok) = (0, 0);
    let mut tight: f64 = 0.0;
    for i in 0..10 {
        let a1 = rng.random_range(0.02..0.2);
        let a2 = rng.random_range(0.02..0.2);
        let f1 = random_field(&g, &p, a1, 4, 1000 + i);
        let f2 = random_field(&g, &p, a2, 4, 2000 + i);
        let r1 = solve_with(&solver, &f1)?;
        let r2 = solve_with(&solver, &f2)?;
        let rep = stability_of_runs(&solver, &f1, &f2, &r1, &r2)?;
        lip_ok += (rep.measured <= rep.lipschitz_bound + rep.tol) as usize;
        gron_ok += rep.gronwall_bound.is_some_and(|g| rep.measured <= g + rep.tol) as usize;
        tight = tight.max(rep.measured / rep.lipschitz_bound);
    }
    s.check("Lipschitz stability bound, 10 pairs", lip_ok == 10, format!("{lip_ok}/10, max measured/bound {tight:.3}"));
    s.check("Gronwall stability bound (beta <= 0), 10 pairs", gron_ok == 10, format!("{gron_ok}/10"));
    println!("    stability pairs: {:.1} s", t0.elapsed().as_secs_f64());
    Ok(())
}

fn scattering_suite(s: &mut Suite) -> Res<()> {
    let p = reference();
    let k = kernel();
    let g = desk_grid(&p);
    let cfg = SolverConfig::default();
    let t0 = Instant::now();
    let solver = Solver::new(&p, &k, &g, &cfg)?;
    let m0 = DistributionField::constant(&g, &p, 0.0, Frame::Comoving, 1.0);
    let sm = apply_operator(&solver, Operator::Scatter, &m0)?;
    let d = weighted_sup_norm(&sm.output, &m0)?;
    s.check("S(M(0)) = M(0)", d <= 1e-4, format!("{d:.2e}"));

    let f = random_field(&g, &p, 0.15, 4, 202);
    for (inv, fwd) in [(Operator::WavePlusInverse, Operator::WavePlus), (Operator::WaveMinusInverse, Operator::WaveMinus)] {
        let a = apply_operator(&solver, inv, &f)?;
        let b = apply_operator(&solver, fwd, &a.output)?;
        let d = weighted_sup_norm(&b.output, &f)?;
        s.check(&format!("{fwd:?} after {inv:?}"), d <= 1e-4, format!("{d:.2e}"));
    }
    let pre = apply_operator(&solver, Operator::ScatterInverse, &f)?;
    let again = apply_operator(&solver, Operator::Scatter, &pre.output)?;
    let d = weighted_sup_norm(&again.output, &f)?;
    s.check("S after S^-1", d <= 1e-4, format!("{d:.2e}"));

    // F^{-∞} = S^{-1}f and its image
    let (fm, fp) = (&pre.output, &again.output);
    let cons = check_scatter_conservation(fm, fp)?;
    s.check("conservation across S (desk)", cons.max_relative <= 1e-3, format!("{:.2e}", cons.max_relative));
    let r = again.certificate.r;
    let h = check_h_decrease(fm, fp, r, 1e-9)?;
    s.check("H[F-] >= H[SF-]", h.holds, format!("decrease {:.3e}, slack 1e-9", h.decrease));
    let fit = fit_global_maxwellian(&fm.moments())?;
    let mfit = DistributionField::from_density(&g, &p, 0.0, Frame::Comoving, |v, x| fit.params.eval(v, x, 0.0));
    let hf = mfit.h_functional()?;
    s.check("H[SF-] >= H[M_fit]", hf <= h.h_plus + 1e-9, format!("gap {:.3e}", h.h_plus - hf));
    println!("    desk solves: {:.1} s", t0.elapsed().as_secs_f64());

    // refinement study of the conservation residual
    let t0 = Instant::now();
    let study = |n: usize, t_max: Option<f64>, conservative: bool| -> Res<f64> {
        let g = small_grid(&p, n);
        let cfg = SolverConfig { t_max, conservative, ..small_cfg() };
        let solver = Solver::new(&p, &k, &g, &cfg)?;
        let f = random_field(&g, &p, 0.15, 4, 303);
        let out = apply_operator(&solver, Operator::Scatter, &f)?;
        Ok(check_scatter_conservation(&f, &out.output)?.max_relative)
    };
    let windows = [Some(1e1), Some(1e3), None];
    let grids = [8, 10, 12];
    let by_t: Vec<f64> = windows.iter().map(|&t| study(12, t, true)).collect::<Res<_>>()?;
    let by_n: Vec<f64> = grids.iter().map(|&n| study(n, None, true)).collect::<Res<_>>()?;
    let shrinking = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0] + 1e-12) && v.iter().all(|&x| x <= 1e-3);
    s.check("conservation residual vs T (T = 10, 1e3, default)", shrinking(&by_t), sci(&by_t));
    s.check("conservation residual vs grid (Nv = 8, 10, 12)", shrinking(&by_n), sci(&by_n));
    let raw_t: Vec<f64> = windows.iter().map(|&t| study(12, t, false)).collect::<Res<_>>()?;
    let raw_n: Vec<f64> = grids.iter().map(|&n| study(n, None, false)).collect::<Res<_>>()?;
    println!("    unprojected residual vs T: {}", sci(&raw_t));
    println!("    unprojected residual vs grid: {}", sci(&raw_n));
    println!("    conservation study: {:.1} s", t0.elapsed().as_secs_f64());

    let t0 = Instant::now();
    let g = small_grid(&p, 12);
    let cfg = small_cfg();
    let solver = Solver::new(&p, &k, &g, &cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut pair = |i: u64| {
        let a1 = rng.random_range(0.02..0.2);
        let a2 = rng.random_range(0.02..0.2);
        (random_field(&g, &p, a1, 4, 3000 + i), random_field(&g, &p, a2, 4, 4000 + i))
    };
    let pairs: Vec<_> = (0..3).map(&mut pair).collect();
    let mut inj_ok = 0;
    for (f1, f2) in &pairs {
        let i1 = apply_operator(&solver, Operator::WavePlusInverse, f1)?;
        let i2 = apply_operator(&solver, Operator::WavePlusInverse, f2)?;
        let rep = injectivity_bound(&i1.trajectory, &i2.trajectory, f1, f2, &k, 10.0 * cfg.picard_tol)?;
        inj_ok += rep.holds as usize;
    }
    s.check("injectivity bound, 3 pairs", inj_ok == 3, format!("{inj_ok}/3"));
    let pairs: Vec<_> = (3..5).map(&mut pair).collect();
    for op in Operator::ALL {
        let rep = lipschitz_check(&solver, op, &pairs)?;
        let worst = rep.entries.iter().map(|e| e.output_distance / e.bound).fold(0.0, f64::max);
        s.check(&format!("Lipschitz bound for {op:?}, 2 pairs"), rep.all_hold, format!("max distance/bound {worst:.3}"));
    }
    println!("    pair suites: {:.1} s", t0.elapsed().as_secs_f64());

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let q = random_params(&mut rng, 2 + i % 2);
        let fit = fit_global_maxwellian(&q.analytic_moments())?;
        for (x, y) in fit_parameters(&fit.params).iter().zip(fit_parameters(&q)) {
            worst = worst.max((x - y).abs() / (1.0 + y.abs()));
        }
    }
    s.check("Newton fit round trip, 20 parameter sets", worst <= 1e-8, format!("{worst:.2e}"));
    Ok(())
}

fn determinism(s: &mut Suite) -> Res<()> {
    let dir = tempfile::tempdir()?;
    let config = dir.path().join("scatter.json");
    std::fs::write(
        &config,
        r#"{
  "experiment": "scatter",
  "maxwellian": {"m": 1.0, "a": 1.0, "b": 0.0, "c": 1.0, "B": [[0, 0], [0, 0]], "x0": [0, 0], "v0": [0, 0], "D": 2},
  "mass_margin": 0.5,
  "grid": {"nv": 10, "vmax": 6.0, "nx": 10, "xmax": 6.0},
  "solver": {"nt": 7},
  "data": {"kind": "random", "amplitude": 0.1},
  "seed": 42
}"#,
    )?;
    let mut outputs = Vec::new();
    for threads in [1, 4, 8] {
        let out = dir.path().join(format!("run{threads}"));
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_boltzscat"))
            .args(["scatter", "--threads", &threads.to_string(), "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()?;
        s.check(&format!("scatter run with {threads} threads"), status.status.code() == Some(0), format!("exit {:?}", status.status.code()));
        outputs.push(std::fs::read(out.join("summary.json"))?);
    }
    let same = outputs.windows(2).all(|w| w[0] == w[1]);
    s.check("summary.json identical for 1, 4, 8 threads", same, format!("{} bytes", outputs[0].len()));
    Ok(())
}

fn main() {
    let criteria: [(&str, fn(&mut Suite) -> Res<()>); 6] = [
        ("constants", constants),
        ("bound consistency", bound_consistency),
        ("collision", collision_suite),
        ("cauchy", cauchy_suite),
        ("scattering", scattering_suite),
        ("determinism", determinism),
    ];
    let mut summary = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        println!("criterion {} ({name})", i + 1);
        let t0 = Instant::now();
        let mut s = Suite::new();
        if let Err(e) = run(&mut s) {
            s.check("completed", false, e.to_string());
        }
        let line = format!("{} criterion {} ({name}) in {:.1} s", if s.ok { "PASS" } else { "FAIL" }, i + 1, t0.elapsed().as_secs_f64());
        println!("{line}");
        summary.push((s.ok, line));
    }
    println!();
    for (_, line) in &summary {
        println!("{line}");
    }
    if summary.iter().any(|(ok, _)| !ok) {
        std::process::exit(1);
    }
}
