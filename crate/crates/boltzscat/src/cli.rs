//! Configuration, run orchestration and reports for the `boltzscat` binary.
//!
//! A run reads one JSON [`RunConfig`], executes one experiment and writes a
//! run directory with `summary.json`, and depending on the experiment
//! `timeseries.csv`, `iteration.log` and field dumps. Nothing that depends
//! on the thread count or the wall clock goes into the outputs.

use crate::bounds;
use crate::collision::{BhatJson, KernelJson, KernelSpec, KernelUse};
use crate::maxwellian::{validate_json, GlobalMaxwellianParams, MaxwellianJson, MomentVector};
use crate::phase_field::{write_dump, read_dump, weighted_sup_norm, DistributionField, Frame, PhaseGrid};
use crate::scattering::{
    apply_operator, check_h_decrease, check_scatter_conservation, extract_asymptote, fit_global_maxwellian, Direction,
    Operator,
};
use crate::solver::{run_diagnostics, solve_with, IterRecord, Solver, SolverConfig};
use crate::{Error, Result};
use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(name = "boltzscat", version, about = "Boltzmann dynamics near global Maxwellians")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Experiment,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; for `report`, the run directory to read.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for the parallel sweeps.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overrides the seed of the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Treat warnings as failed assertions.
    #[arg(long, global = true)]
    pub strict: bool,
}

#[derive(Subcommand, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    /// Check a parameter set and kernel.
    Validate,
    /// Dispersion constants and the derived radii.
    Bounds,
    /// Mild solution from data at t = 0.
    Simulate,
    /// Scattering operator and its inverse.
    Scatter,
    /// Inverse wave operator.
    WaveInverse,
    /// Global Maxwellian with given moments.
    Fit,
    /// Summarize an existing run directory.
    Report,
}

impl Experiment {
    fn name(self) -> &'static str {
        match self {
            Experiment::Validate => "validate",
            Experiment::Bounds => "bounds",
            Experiment::Simulate => "simulate",
            Experiment::Scatter => "scatter",
            Experiment::WaveInverse => "wave-inverse",
            Experiment::Fit => "fit",
            Experiment::Report => "report",
        }
    }

    fn uses_solver(self) -> bool {
        matches!(self, Experiment::Simulate | Experiment::Scatter | Experiment::WaveInverse)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub nv: usize,
    pub vmax: f64,
    pub nx: usize,
    pub xmax: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { nv: 16, vmax: 6.0, nx: 16, xmax: 6.0 }
    }
}

/// Field given to the experiment at `t = 0` (data, or an asymptotic state).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// `h ≡ scale`.
    Reference {
        #[serde(default = "one")]
        scale: f64,
    },
    /// Another global Maxwellian sampled on the grid.
    Maxwellian { params: MaxwellianJson },
    /// Smooth random perturbation with `sup |h - 1| = amplitude`, drawn
    /// from the run seed.
    Random {
        amplitude: f64,
        #[serde(default = "default_modes")]
        modes: usize,
    },
    /// A field dump (manifest path, relative to the config file).
    Dump { path: PathBuf },
}

fn one() -> f64 {
    1.0
}

fn default_modes() -> usize {
    4
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec::Reference { scale: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub round_trip: f64,
    pub drift: f64,
    /// H monotonicity along a trajectory.
    pub h_slack: f64,
    /// H ordering across the scattering map.
    pub scatter_h_slack: f64,
    pub conservation: f64,
    pub fit: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { round_trip: 1e-4, drift: 1e-3, h_slack: 1e-6, scatter_h_slack: 1e-9, conservation: 1e-3, fit: 1e-10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Must match the subcommand when present.
    #[serde(default)]
    pub experiment: Option<Experiment>,
    pub maxwellian: MaxwellianJson,
    /// When set, the mass is replaced by `mass_margin · m*` with `m*` the
    /// largest mass with `ν̄ ≤ 1/4`.
    #[serde(default)]
    pub mass_margin: Option<f64>,
    /// Defaults to `β = 0`, `b̂ ≡ 1` in the dimension of `maxwellian`.
    #[serde(default)]
    pub kernel: Option<KernelJson>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub data: DataSpec,
    /// Side of the inverse wave operator.
    #[serde(default)]
    pub direction: Option<Direction>,
    /// Explicit moment vector for `fit`; otherwise the moments of `data`.
    #[serde(default)]
    pub moments: Option<Vec<f64>>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "yes")]
    pub dumps: bool,
}

fn default_samples() -> usize {
    4096
}

fn yes() -> bool {
    true
}

/// Configuration with everything the experiment needs constructed.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: RunConfig,
    pub experiment: Experiment,
    /// Absent only for a `validate` run on inadmissible parameters.
    pub params: Option<GlobalMaxwellianParams>,
    pub kernel: KernelSpec,
    pub grid: Option<PhaseGrid>,
    pub base_dir: PathBuf,
    pub nu_bar: Option<f64>,
}

fn field_err(field: &str, e: Error) -> Error {
    match e {
        Error::Params(m) => Error::Params(format!("{field}: {m}")),
        Error::Invalid(m) => Error::Invalid(format!("{field}: {m}")),
        Error::Domain(m) => Error::Domain(format!("{field}: {m}")),
        Error::Unsupported(m) => Error::Unsupported(format!("{field}: {m}")),
        other => other,
    }
}

/// Parses and validates a configuration file.
pub fn load_config(path: &Path, experiment: Experiment) -> Result<Resolved> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Invalid(format!("cannot read config {}: {e}", path.display())))?;
    let config: RunConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Invalid(format!("config {}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    resolve(config, experiment, &base)
}

/// Validates a parsed configuration for one experiment.
pub fn resolve(config: RunConfig, experiment: Experiment, base_dir: &Path) -> Result<Resolved> {
    if let Some(e) = config.experiment {
        if e != experiment {
            return Err(Error::Invalid(format!(
                "experiment: config is for '{}' but the subcommand is '{}'",
                e.name(),
                experiment.name()
            )));
        }
    }
    let d = config.maxwellian.dim;
    if !(d == 2 || d == 3) {
        return Err(Error::Invalid(format!("maxwellian.D: dimension {d} must be 2 or 3")));
    }
    let kj = config.kernel.clone().unwrap_or(KernelJson { beta: 0.0, bhat: BhatJson::Tag("constant:1".into()), dim: d, bbar: None });
    if kj.dim != d {
        return Err(Error::Invalid(format!("kernel.D: {} does not match maxwellian.D = {d}", kj.dim)));
    }
    let kernel = KernelSpec::from_json(&kj).map_err(|e| field_err("kernel", e))?;
    let usage = if experiment.uses_solver() { KernelUse::Solver } else { KernelUse::General };
    kernel.check_range(usage).map_err(|e| field_err("kernel.beta", e))?;
    config.solver.validate().map_err(|e| field_err("solver", e))?;

    let verdict = validate_json(&config.maxwellian);
    let mut params = if verdict.accepted {
        Some(GlobalMaxwellianParams::from_json(&config.maxwellian).map_err(|e| field_err("maxwellian", e))?)
    } else if experiment == Experiment::Validate {
        None
    } else {
        return Err(Error::Params(format!("maxwellian: {:?}", verdict.reasons)));
    };
    if let (Some(margin), Some(p)) = (config.mass_margin, params.as_ref()) {
        if !(margin > 0.0 && margin <= 1.0) {
            return Err(Error::Invalid(format!("mass_margin: {margin} must lie in (0, 1]")));
        }
        let m = bounds::admissible_mass(p, &kernel, margin).map_err(|e| field_err("mass_margin", e))?;
        params = Some(p.with_mass(m).map_err(|e| field_err("mass_margin", e))?);
    }
    let mut nu_bar = None;
    if experiment.uses_solver() {
        let p = params.as_ref().expect("solver experiments have admissible parameters");
        let nu = bounds::nu_bound(p, &kernel).map_err(|e| field_err("kernel", e))?;
        if !(nu < 0.25) {
            let m_star = bounds::admissible_mass(p, &kernel, 1.0)?;
            return Err(Error::Domain(format!(
                "maxwellian.m: certified nu = {nu:.6} must be below 1/4 for '{}'; this needs m < {m_star:.6e} (given {})",
                experiment.name(),
                p.m()
            )));
        }
        nu_bar = Some(nu);
    }
    let needs_grid = !matches!(experiment, Experiment::Validate | Experiment::Bounds | Experiment::Report)
        && !(experiment == Experiment::Fit && config.moments.is_some());
    let grid = match (&params, needs_grid) {
        (Some(p), true) => {
            let g = &config.grid;
            Some(PhaseGrid::new(d, g.nv, g.vmax, g.nx, g.xmax, p).map_err(|e| field_err("grid", e))?)
        }
        _ => None,
    };
    if let DataSpec::Random { amplitude, modes } = config.data {
        if !(amplitude >= 0.0 && amplitude.is_finite()) || modes == 0 {
            return Err(Error::Invalid(format!("data: amplitude {amplitude} and modes {modes} must be nonnegative and positive")));
        }
    }
    if let Some(mv) = &config.moments {
        if mv.len() != MomentVector::len_for(d) {
            return Err(Error::Invalid(format!("moments: {} entries, D = {d} needs {}", mv.len(), MomentVector::len_for(d))));
        }
    }
    Ok(Resolved { config, experiment, params, kernel, grid, base_dir: base_dir.to_path_buf(), nu_bar })
}

/// Smooth perturbation `h = 1 + amplitude · S/max|S|` of the reference with
/// `S = Σ c_j cos(κ_j·(V, Y) + φ_j) e^{-(|V|² + |Y|²)/20}` in the centered
/// comoving variables, coefficients drawn from `seed`.
pub fn random_field(grid: &PhaseGrid, p: &GlobalMaxwellianParams, amplitude: f64, modes: usize, seed: u64) -> DistributionField {
    let d = grid.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terms: Vec<(f64, Vec<f64>, f64)> = (0..modes)
        .map(|_| {
            let c = rng.random_range(-1.0..1.0);
            let kv = (0..2 * d).map(|_| rng.random_range(-0.8..0.8)).collect();
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            (c, kv, phi)
        })
        .collect();
    let mut f = DistributionField::constant(grid, p, 0.0, Frame::Comoving, 1.0);
    let s: Vec<f64> = (0..grid.len())
        .map(|k| {
            let (v, y) = grid.offsets(k);
            let mut r2 = 0.0;
            let z: Vec<f64> = v[..d].iter().chain(&y[..d]).copied().collect();
            for x in &z {
                r2 += x * x;
            }
            let sum: f64 = terms
                .iter()
                .map(|(c, kv, phi)| c * (kv.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() + phi).cos())
                .sum();
            sum * (-r2 / 20.0).exp()
        })
        .collect();
    let smax = s.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if smax > 0.0 {
        for (h, x) in f.h.iter_mut().zip(&s) {
            *h = 1.0 + amplitude * x / smax;
        }
    }
    f
}

impl Resolved {
    pub fn reference(&self) -> Result<&GlobalMaxwellianParams> {
        self.params.as_ref().ok_or_else(|| Error::Params("maxwellian: parameters are not admissible".into()))
    }

    fn grid(&self) -> Result<&PhaseGrid> {
        self.grid.as_ref().ok_or_else(|| Error::Invalid("grid: this experiment needs a phase-space grid".into()))
    }

    /// The configured field at `t = 0` in the comoving frame.
    pub fn data_field(&self) -> Result<DistributionField> {
        let p = self.reference()?;
        let g = self.grid()?;
        Ok(match &self.config.data {
            DataSpec::Reference { scale } => DistributionField::constant(g, p, 0.0, Frame::Comoving, *scale),
            DataSpec::Maxwellian { params } => {
                let q = GlobalMaxwellianParams::from_json(params).map_err(|e| field_err("data.params", e))?;
                if q.dim() != p.dim() {
                    return Err(Error::Invalid("data.params: dimension differs from the reference".into()));
                }
                DistributionField::from_density(g, p, 0.0, Frame::Comoving, |v, x| q.eval(v, x, 0.0))
            }
            DataSpec::Random { amplitude, modes } => random_field(g, p, *amplitude, *modes, self.config.seed),
            DataSpec::Dump { path } => {
                let f = read_dump(&self.base_dir.join(path)).map_err(|e| field_err("data.path", e))?;
                if f.reference != *p || f.grid != *g {
                    return Err(Error::Invalid("data.path: dump uses a different reference or grid".into()));
                }
                let f = if f.frame == Frame::Lab { f.to_comoving() } else { f };
                DistributionField { t: 0.0, ..f }
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub limit: f64,
}

#[derive(Clone, Debug, Default)]
struct Outcome {
    results: serde_json::Map<String, Value>,
    assertions: Vec<Assertion>,
    warnings: Vec<String>,
    dumps: Vec<Value>,
    timeseries: Option<String>,
    log: String,
}

impl Outcome {
    /// Passes when `value ≤ limit`.
    fn check(&mut self, name: &str, value: f64, limit: f64) {
        self.assertions.push(Assertion { name: name.into(), passed: value <= limit, value, limit });
    }

    fn put(&mut self, key: &str, v: impl Serialize) -> Result<()> {
        self.results.insert(key.into(), serde_json::to_value(v)?);
        Ok(())
    }

    fn log_solve(&mut self, name: &str, log: &[IterRecord]) {
        let _ = writeln!(self.log, "# {name}");
        for r in log {
            let ratio = r.ratio.map_or("-".to_string(), |x| format!("{x:e}"));
            let _ = writeln!(self.log, "{} {:e} {}", r.k, r.delta, ratio);
        }
    }

    fn dump(&mut self, f: &DistributionField, dir: &Path, stem: &str, enabled: bool) -> Result<()> {
        if !enabled {
            return Ok(());
        }
        let path = write_dump(f, dir, stem)?;
        let manifest: Value = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
        self.dumps.push(json!({ "name": stem, "manifest": format!("{stem}.json"), "checksum": manifest["checksum"] }));
        Ok(())
    }
}

/// Exit status of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Passed,
    Failed,
    Error,
}

impl Status {
    pub fn code(self) -> i32 {
        match self {
            Status::Passed => 0,
            Status::Failed => 2,
            Status::Error => 1,
        }
    }
}

/// Runs one experiment and writes its outputs into `out`.
pub fn run(resolved: &Resolved, out: &Path, strict: bool) -> Result<Status> {
    std::fs::create_dir_all(out)?;
    let mut o = Outcome::default();
    let res = match resolved.experiment {
        Experiment::Validate => run_validate(resolved, &mut o),
        Experiment::Bounds => run_bounds(resolved, &mut o),
        Experiment::Simulate => run_simulate(resolved, &mut o, out),
        Experiment::Scatter => run_scatter(resolved, &mut o, out),
        Experiment::WaveInverse => run_wave_inverse(resolved, &mut o, out),
        Experiment::Fit => run_fit(resolved, &mut o),
        Experiment::Report => Err(Error::Invalid("report reads a run directory; it does not run".into())),
    };
    if strict {
        for w in &o.warnings {
            o.assertions.push(Assertion { name: format!("warning: {w}"), passed: false, value: 1.0, limit: 0.0 });
        }
    }
    let status = match &res {
        Err(_) => Status::Error,
        Ok(()) if o.assertions.iter().all(|a| a.passed) => Status::Passed,
        Ok(()) => Status::Failed,
    };
    let summary = json!({
        "version": VERSION,
        "experiment": resolved.experiment.name(),
        "config": resolved.config,
        "strict": strict,
        "status": match status { Status::Passed => "passed", Status::Failed => "failed", Status::Error => "error" },
        "complete": res.is_ok(),
        "error": res.as_ref().err().map(|e| e.to_string()),
        "results": Value::Object(o.results.clone()),
        "assertions": o.assertions,
        "warnings": o.warnings,
        "dumps": o.dumps,
    });
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    if let Some(ts) = &o.timeseries {
        std::fs::write(out.join("timeseries.csv"), ts)?;
    }
    if !o.log.is_empty() {
        std::fs::write(out.join("iteration.log"), &o.log)?;
    }
    res.map(|_| status)
}

fn run_validate(r: &Resolved, o: &mut Outcome) -> Result<()> {
    let verdict = validate_json(&r.config.maxwellian);
    o.put("verdict", &verdict)?;
    o.assertions.push(Assertion {
        name: "parameters admissible".into(),
        passed: verdict.accepted,
        value: verdict.reasons.len() as f64,
        limit: 0.0,
    });
    if let Some(p) = &r.params {
        o.put("params", p.to_json())?;
        o.put("kappa2", p.kappa2())?;
        o.put("sqrt_det_q", p.sqrt_det_q())?;
        o.put("kernel", r.kernel.to_json())?;
        match bounds::nu_bound(p, &r.kernel) {
            Ok(nu) => {
                o.put("nu_bound", nu)?;
                if !(nu < 0.25) {
                    o.warnings.push(format!("nu = {nu:.6} >= 1/4: solver runs need a smaller mass"));
                }
            }
            Err(e) => o.warnings.push(format!("nu bound unavailable: {e}")),
        }
    }
    Ok(())
}

fn run_bounds(r: &Resolved, o: &mut Outcome) -> Result<()> {
    let p = r.reference()?;
    let rep = bounds::bounds_report(p, &r.kernel, r.config.samples)?;
    o.put("params", p.to_json())?;
    o.put("report", &rep)?;
    o.put("admissible_mass", bounds::admissible_mass(p, &r.kernel, 1.0)?)?;
    o.check("sampled nu within bound", rep.nu_numeric, rep.nu_bound * (1.0 + 1e-9));
    if let (Some(num), Some(b)) = (rep.mu_numeric, rep.mu_bound) {
        o.check("sampled mu within bound", num, b * (1.0 + 1e-9));
    }
    if !rep.contraction_ok {
        o.warnings.push(format!("nu = {:.6} >= 1/4: no contraction certificate", rep.nu_bound));
    }
    Ok(())
}

fn solver_for(r: &Resolved) -> Result<Solver> {
    Solver::new(r.reference()?, &r.kernel, r.grid()?, &r.config.solver)
}

fn timeseries(diag: &crate::solver::Diagnostics) -> String {
    let mut s = String::from("t");
    for l in &diag.labels {
        s.push(',');
        s.push_str(l);
    }
    s.push_str(",H,entropy_production,sup_dev\n");
    for row in &diag.rows {
        let _ = write!(s, "{}", row.t);
        for m in &row.moments {
            let _ = write!(s, ",{m}");
        }
        let _ = writeln!(s, ",{},{},{}", row.h, row.entropy_production, row.sup_dev);
    }
    s
}

fn run_simulate(r: &Resolved, o: &mut Outcome, out: &Path) -> Result<()> {
    let solver = solver_for(r)?;
    let tol = &r.config.tolerances;
    let f_in = r.data_field()?;
    o.put("params", solver.p.to_json())?;
    o.put("t_max", solver.t_max())?;
    o.put("tail", solver.tail)?;
    o.dump(&f_in, out, "data", r.config.dumps)?;
    let run = solve_with(&solver, &f_in)?;
    o.log_solve("cauchy", &run.log);
    o.put("certificate", &run.certificate)?;
    o.put("iterations", run.log.len())?;
    o.put("residual", run.residual)?;
    o.put("measured_ratio", run.measured_ratio)?;
    o.put("sup_dev", run.sup_dev)?;
    o.put("positivity", &run.positivity)?;
    let cert = &run.certificate;
    o.check("contraction ratio", run.measured_ratio.unwrap_or(0.0), cert.rate + r.config.solver.ratio_slack);
    o.check("radius", run.sup_dev, cert.r + 10.0 * r.config.solver.picard_tol);
    if cert.r > 1.0 {
        o.warnings.push(format!("radius r = {} > 1: positivity is not certified", cert.r));
    }
    let diag = run_diagnostics(&run.trajectory, &r.kernel, &r.config.solver);
    match diag {
        Ok(diag) => {
            o.check("moment drift", diag.max_drift, tol.drift);
            o.check("H nonincreasing", diag.max_h_increase, tol.h_slack);
            o.check("entropy production", diag.max_entropy_production, tol.h_slack);
            o.timeseries = Some(timeseries(&diag));
            o.put("max_drift", diag.max_drift)?;
            o.put("max_h_increase", diag.max_h_increase)?;
            o.put("max_entropy_production", diag.max_entropy_production)?;
        }
        Err(e) => o.warnings.push(format!("diagnostics unavailable: {e}")),
    }
    for dir in [Direction::Plus, Direction::Minus] {
        let a = extract_asymptote(&run.trajectory, dir, &r.kernel, cert.r, None)?;
        let key = if dir == Direction::Plus { "plus" } else { "minus" };
        o.put(
            &format!("asymptote_{key}"),
            json!({ "t_cut": a.t_cut, "error_bar": a.error_bar, "l1_error_bar": a.l1_error_bar, "sup_dev": a.sup_dev }),
        )?;
        o.check(&format!("asymptote {key} in band"), a.sup_dev, cert.r + a.error_bar);
        o.dump(&a.field, out, &format!("asymptote_{key}"), r.config.dumps)?;
    }
    Ok(())
}

fn run_scatter(r: &Resolved, o: &mut Outcome, out: &Path) -> Result<()> {
    let solver = solver_for(r)?;
    let tol = &r.config.tolerances;
    let slack = r.config.solver.ratio_slack;
    let f = r.data_field()?;
    o.put("params", solver.p.to_json())?;
    o.put("t_max", solver.t_max())?;
    o.dump(&f, out, "f_minus", r.config.dumps)?;
    let s = apply_operator(&solver, Operator::Scatter, &f)?;
    o.log_solve("scatter", &s.log);
    let back = apply_operator(&solver, Operator::ScatterInverse, &s.output)?;
    o.log_solve("scatter_inverse", &back.log);
    o.dump(&s.output, out, "f_plus", r.config.dumps)?;
    let rt = weighted_sup_norm(&back.output, &f)?;
    o.put("certificate", &s.certificate)?;
    o.put("measured_ratio", s.measured_ratio)?;
    o.put("error_bar", s.error_bar)?;
    o.put("round_trip", rt)?;
    o.check("contraction ratio", s.measured_ratio.unwrap_or(0.0), s.certificate.rate + slack);
    o.check("inverse contraction ratio", back.measured_ratio.unwrap_or(0.0), back.certificate.rate + slack);
    o.check("output radius", s.output_deviation(), s.certificate.r + s.error_bar);
    o.check("round trip", rt, tol.round_trip);
    let cons = check_scatter_conservation(&f, &s.output)?;
    o.check("conservation", cons.max_relative, tol.conservation);
    o.put("conservation", &cons)?;
    if s.certificate.r <= 1.0 {
        let h = check_h_decrease(&f, &s.output, s.certificate.r, tol.scatter_h_slack)?;
        o.check("H decreases", -h.decrease, tol.scatter_h_slack);
        let fit = fit_global_maxwellian(&f.moments())?;
        let mf = DistributionField::from_density(&f.grid, &f.reference, 0.0, Frame::Comoving, |v, x| fit.params.eval(v, x, 0.0));
        let h_fit = mf.h_functional()?;
        o.check("H above the fitted Maxwellian", h_fit - h.h_plus, tol.scatter_h_slack);
        o.put("h", &h)?;
        o.put("h_fit", h_fit)?;
        o.put("fit", json!({ "params": fit.params.to_json(), "residual": fit.residual, "iterations": fit.iterations }))?;
    } else {
        o.warnings.push(format!("radius r = {} > 1: positivity is not certified, H checks skipped", s.certificate.r));
    }
    Ok(())
}

fn run_wave_inverse(r: &Resolved, o: &mut Outcome, out: &Path) -> Result<()> {
    let solver = solver_for(r)?;
    let tol = &r.config.tolerances;
    let dir = r.config.direction.unwrap_or(Direction::Plus);
    let (inv_op, fwd_op) = match dir {
        Direction::Plus => (Operator::WavePlusInverse, Operator::WavePlus),
        Direction::Minus => (Operator::WaveMinusInverse, Operator::WaveMinus),
    };
    let f_inf = r.data_field()?;
    o.put("params", solver.p.to_json())?;
    o.put("direction", dir)?;
    o.dump(&f_inf, out, "f_inf", r.config.dumps)?;
    let inv = apply_operator(&solver, inv_op, &f_inf)?;
    o.log_solve("wave_inverse", &inv.log);
    o.dump(&inv.output, out, "f_in", r.config.dumps)?;
    let fwd = apply_operator(&solver, fwd_op, &inv.output)?;
    o.log_solve("wave", &fwd.log);
    let rt = weighted_sup_norm(&fwd.output, &f_inf)?;
    o.put("certificate", &inv.certificate)?;
    o.put("measured_ratio", inv.measured_ratio)?;
    o.put("f_in_sup_dev", inv.output_deviation())?;
    o.put("round_trip", rt)?;
    o.check("contraction ratio", inv.measured_ratio.unwrap_or(0.0), inv.certificate.rate + r.config.solver.ratio_slack);
    o.check("data radius", inv.output_deviation(), inv.certificate.r + 10.0 * r.config.solver.picard_tol);
    o.check("round trip", rt, tol.round_trip);
    Ok(())
}

fn run_fit(r: &Resolved, o: &mut Outcome) -> Result<()> {
    let d = r.config.maxwellian.dim;
    let mv = match &r.config.moments {
        Some(v) => MomentVector { dim: d, values: v.clone() },
        None => r.data_field()?.moments(),
    };
    o.put("moments", &mv.values)?;
    o.put("labels", MomentVector::labels(d))?;
    let fit = fit_global_maxwellian(&mv)?;
    o.put("params", fit.params.to_json())?;
    o.put("residual", fit.residual)?;
    o.put("iterations", fit.iterations)?;
    o.put("h", fit.params.h_value())?;
    o.check("fit residual", fit.residual, r.config.tolerances.fit);
    Ok(())
}

/// Text summary of a run directory; returns the stored status.
pub fn report(dir: &Path) -> Result<(String, Status)> {
    let text = std::fs::read_to_string(dir.join("summary.json"))
        .map_err(|e| Error::Invalid(format!("cannot read {}/summary.json: {e}", dir.display())))?;
    let v: Value = serde_json::from_str(&text)?;
    let mut s = String::new();
    let _ = writeln!(s, "experiment: {}", v["experiment"].as_str().unwrap_or("?"));
    let _ = writeln!(s, "version: {}", v["version"].as_str().unwrap_or("?"));
    let _ = writeln!(s, "status: {}", v["status"].as_str().unwrap_or("?"));
    if let Some(e) = v["error"].as_str() {
        let _ = writeln!(s, "error: {e}");
    }
    for a in v["assertions"].as_array().into_iter().flatten() {
        let _ = writeln!(
            s,
            "{} {}: {} <= {}",
            if a["passed"].as_bool() == Some(true) { "PASS" } else { "FAIL" },
            a["name"].as_str().unwrap_or("?"),
            a["value"],
            a["limit"]
        );
    }
    for w in v["warnings"].as_array().into_iter().flatten() {
        let _ = writeln!(s, "warning: {}", w.as_str().unwrap_or("?"));
    }
    let status = match v["status"].as_str() {
        Some("passed") => Status::Passed,
        Some("failed") => Status::Failed,
        _ => Status::Error,
    };
    Ok((s, status))
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return 1;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return 1;
        }
    }
    if cli.command == Experiment::Report {
        let Some(dir) = cli.out.as_deref() else {
            eprintln!("error: report needs --out DIR pointing at a run directory");
            return 1;
        };
        return match report(dir) {
            Ok((text, status)) => {
                print!("{text}");
                status.code()
            }
            Err(e) => {
                eprintln!("error: {e}");
                1
            }
        };
    }
    let Some(path) = cli.config.as_deref() else {
        eprintln!("error: --config PATH is required");
        return 1;
    };
    let resolved = match load_config(path, cli.command) {
        Ok(mut r) => {
            if let Some(seed) = cli.seed {
                r.config.seed = seed;
            }
            r
        }
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(cli.command.name()));
    match run(&resolved, &out, cli.strict) {
        Ok(status) => {
            if let Ok((text, _)) = report(&out) {
                print!("{text}");
            }
            status.code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
