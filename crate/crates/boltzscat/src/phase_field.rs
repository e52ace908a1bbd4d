//! Phase-space grids, relative-density fields, free transport, norms,
//! moments and the H functional.
//!
//! Grid boxes are centered on the reference Maxwellian: velocity nodes are
//! `v0 + a`, comoving positions `x0 + a`, lab positions at time `t` are
//! `x0 + t v0 + a`, with `a` on the uniform axis `[-half, half]`.
//! Values are stored with the velocity axes outer and position axes inner.

use crate::maxwellian::{GlobalMaxwellianParams, MaxwellianJson, MomentVector};
use crate::quad::{cubic_stencil, normal_tail};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Largest allowed reference mass outside the box, relative to `m`.
pub const TAIL_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    #[serde(rename = "D")]
    pub dim: usize,
    pub nv: usize,
    pub vmax: f64,
    pub nx: usize,
    pub xmax: f64,
}

impl PhaseGrid {
    /// Builds the grid and checks that `reference` keeps less than
    /// [`TAIL_TOL`] of its mass outside the box at `t = 0`.
    pub fn new(dim: usize, nv: usize, vmax: f64, nx: usize, xmax: f64, reference: &GlobalMaxwellianParams) -> Result<Self> {
        let g = Self::unchecked(dim, nv, vmax, nx, xmax)?;
        if reference.dim() != dim {
            return Err(Error::Invalid(format!("grid has D = {dim}, reference has D = {}", reference.dim())));
        }
        let out = g.tail_mass(reference);
        if out >= TAIL_TOL {
            return Err(Error::Invalid(format!(
                "reference mass outside the box is {out:e} of m (limit {TAIL_TOL:e}); enlarge vmax/xmax"
            )));
        }
        Ok(g)
    }

    /// Shape checks only.
    pub fn unchecked(dim: usize, nv: usize, vmax: f64, nx: usize, xmax: f64) -> Result<Self> {
        if !(dim == 2 || dim == 3) {
            return Err(Error::Invalid(format!("D = {dim}; only 2 and 3 are supported")));
        }
        if nv < 4 || nx < 4 {
            return Err(Error::Invalid(format!("need at least 4 nodes per axis, got nv = {nv}, nx = {nx}")));
        }
        if !(vmax > 0.0 && xmax > 0.0) {
            return Err(Error::Invalid(format!("box half-widths must be positive, got {vmax}, {xmax}")));
        }
        Ok(PhaseGrid { dim, nv, vmax, nx, xmax })
    }

    /// Union bound on the reference mass outside the `t = 0` box, relative
    /// to `m`, from the marginal variances.
    pub fn tail_mass(&self, reference: &GlobalMaxwellianParams) -> f64 {
        let cov = reference.covariance();
        let d = self.dim;
        (0..d)
            .map(|i| {
                2.0 * normal_tail(self.vmax / cov[(i, i)].sqrt())
                    + 2.0 * normal_tail(self.xmax / cov[(d + i, d + i)].sqrt())
            })
            .sum()
    }

    pub fn dv(&self) -> f64 {
        2.0 * self.vmax / (self.nv - 1) as f64
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.xmax / (self.nx - 1) as f64
    }

    pub fn n_v(&self) -> usize {
        self.nv.pow(self.dim as u32)
    }

    pub fn n_x(&self) -> usize {
        self.nx.pow(self.dim as u32)
    }

    pub fn len(&self) -> usize {
        self.n_v() * self.n_x()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn v_axis(&self, i: usize) -> f64 {
        -self.vmax + i as f64 * self.dv()
    }

    pub fn x_axis(&self, i: usize) -> f64 {
        -self.xmax + i as f64 * self.dx()
    }

    /// Velocity and position offsets of node `k` relative to the box center.
    #[inline]
    pub fn offsets(&self, k: usize) -> ([f64; 3], [f64; 3]) {
        let d = self.dim;
        let (mut iv, mut ix) = (k / self.n_x(), k % self.n_x());
        let mut a = [0.0; 3];
        let mut b = [0.0; 3];
        for j in (0..d).rev() {
            a[j] = self.v_axis(iv % self.nv);
            b[j] = self.x_axis(ix % self.nx);
            iv /= self.nv;
            ix /= self.nx;
        }
        (a, b)
    }

    /// Trapezoid weight of node `k` (cell volume included).
    #[inline]
    pub fn weight(&self, k: usize) -> f64 {
        let d = self.dim;
        let (mut iv, mut ix) = (k / self.n_x(), k % self.n_x());
        let mut w = (self.dv() * self.dx()).powi(d as i32);
        for _ in 0..d {
            let a = iv % self.nv;
            let b = ix % self.nx;
            if a == 0 || a == self.nv - 1 {
                w *= 0.5;
            }
            if b == 0 || b == self.nx - 1 {
                w *= 0.5;
            }
            iv /= self.nv;
            ix /= self.nx;
        }
        w
    }

    /// Cubic interpolation of nodal data at fractional index positions
    /// (velocity axes first); out-of-box positions take the nearest in-box
    /// value.
    pub fn interpolate(&self, data: &[f64], pos: &[f64]) -> f64 {
        let d = self.dim;
        let mut idx = [[0usize; 4]; 6];
        let mut wts = [[0.0f64; 4]; 6];
        for j in 0..d {
            let (i, w) = cubic_stencil(pos[j], self.nv);
            idx[j] = i;
            wts[j] = w;
            let (i, w) = cubic_stencil(pos[d + j], self.nx);
            idx[d + j] = i;
            wts[d + j] = w;
        }
        let mut stride = [0usize; 6];
        let mut s = 1;
        for j in (0..2 * d).rev() {
            stride[j] = s;
            s *= if j < d { self.nv } else { self.nx };
        }
        if d == 2 {
            let mut acc = 0.0;
            for a in 0..4 {
                let oa = idx[0][a] * stride[0];
                for b in 0..4 {
                    let ob = oa + idx[1][b] * stride[1];
                    let wab = wts[0][a] * wts[1][b];
                    let mut inner = 0.0;
                    for c in 0..4 {
                        let oc = ob + idx[2][c] * stride[2];
                        let r = &data;
                        inner += wts[2][c]
                            * (wts[3][0] * r[oc + idx[3][0]]
                                + wts[3][1] * r[oc + idx[3][1]]
                                + wts[3][2] * r[oc + idx[3][2]]
                                + wts[3][3] * r[oc + idx[3][3]]);
                    }
                    acc += wab * inner;
                }
            }
            acc
        } else {
            let n = 2 * d;
            let mut acc = 0.0;
            for code in 0..(1usize << (2 * n)) {
                let mut off = 0;
                let mut w = 1.0;
                for j in 0..n {
                    let t = (code >> (2 * j)) & 3;
                    off += idx[j][t] * stride[j];
                    w *= wts[j][t];
                }
                acc += w * data[off];
            }
            acc
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Lab,
    Comoving,
}

/// Relative density `h = F/M` on a [`PhaseGrid`]. In the comoving frame the
/// stored values are `(e^{tA}F)/M(0)`, i.e. `h(v, x0 + a + t v, t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionField {
    pub grid: PhaseGrid,
    pub t: f64,
    pub frame: Frame,
    pub h: Vec<f64>,
    pub reference: GlobalMaxwellianParams,
}

impl DistributionField {
    pub fn constant(grid: &PhaseGrid, reference: &GlobalMaxwellianParams, t: f64, frame: Frame, value: f64) -> Self {
        DistributionField { grid: grid.clone(), t, frame, h: vec![value; grid.len()], reference: reference.clone() }
    }

    /// Samples `F(v, x)` given in lab coordinates at the field's time.
    pub fn from_density<F: Fn(&[f64], &[f64]) -> f64 + Sync>(
        grid: &PhaseGrid,
        reference: &GlobalMaxwellianParams,
        t: f64,
        frame: Frame,
        f: F,
    ) -> Self {
        use rayon::prelude::*;
        let mut field = Self::constant(grid, reference, t, frame, 1.0);
        let d = grid.dim;
        let h: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|k| {
                let (v, x) = field.lab_point(k);
                f(&v[..d], &x[..d]) / reference.eval(&v[..d], &x[..d], t)
            })
            .collect();
        field.h = h;
        field
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    /// Node velocity and its streamed position `x - tv` (comoving variable).
    #[inline]
    pub fn phase_point(&self, k: usize) -> ([f64; 3], [f64; 3]) {
        let (a, b) = self.grid.offsets(k);
        let p = &self.reference;
        let mut v = [0.0; 3];
        let mut y = [0.0; 3];
        for j in 0..self.grid.dim {
            v[j] = p.v0()[j] + a[j];
            y[j] = match self.frame {
                Frame::Comoving => p.x0()[j] + b[j],
                Frame::Lab => p.x0()[j] + b[j] - self.t * a[j],
            };
        }
        (v, y)
    }

    /// Node velocity and lab position at the field's time.
    #[inline]
    pub fn lab_point(&self, k: usize) -> ([f64; 3], [f64; 3]) {
        let (v, y) = self.phase_point(k);
        let mut x = [0.0; 3];
        for j in 0..self.grid.dim {
            x[j] = y[j] + self.t * v[j];
        }
        (v, x)
    }

    /// Value of `M` at node `k`: `M(v, x, t)`, equal to `M(v, x - tv, 0)`.
    #[inline]
    pub fn reference_value(&self, k: usize) -> f64 {
        let d = self.grid.dim;
        let (v, y) = self.phase_point(k);
        self.reference.eval(&v[..d], &y[..d], 0.0)
    }

    pub fn check_compatible(&self, other: &DistributionField) -> Result<()> {
        if self.grid != other.grid || self.reference != other.reference || self.frame != other.frame {
            return Err(Error::Invalid("fields differ in grid, reference or frame".into()));
        }
        if self.frame == Frame::Lab && self.t != other.t {
            return Err(Error::Invalid(format!("lab fields at different times {} and {}", self.t, other.t)));
        }
        Ok(())
    }

    /// `new(a_v, a_x) = old(a_v, a_x + lambda a_v)` with cubic interpolation
    /// along the position axes.
    fn shift_positions(&self, lambda: f64) -> Vec<f64> {
        use rayon::prelude::*;
        if lambda == 0.0 {
            return self.h.clone();
        }
        let g = &self.grid;
        let d = g.dim;
        let nx_tot = g.n_x();
        let dx = g.dx();
        let mut out = vec![0.0; self.h.len()];
        out.par_chunks_mut(nx_tot).enumerate().for_each(|(iv, block)| {
            let (a, _) = g.offsets(iv * nx_tot);
            let src = &self.h[iv * nx_tot..(iv + 1) * nx_tot];
            // shifts within rounding of a whole cell are snapped so node-to-node
            // transport is exact
            let shift: Vec<f64> = (0..d)
                .map(|j| {
                    let s = lambda * a[j] / dx;
                    if (s - s.round()).abs() < 1e-9 {
                        s.round()
                    } else {
                        s
                    }
                })
                .collect();
            for (ix, o) in block.iter_mut().enumerate() {
                let mut rem = ix;
                let mut pos = [0.0; 3];
                for j in (0..d).rev() {
                    pos[j] = (rem % g.nx) as f64 + shift[j];
                    rem /= g.nx;
                }
                *o = interp_positions(src, g.nx, d, &pos);
            }
        });
        out
    }

    /// Free transport of a lab field by `delta`: `h(v, x) ← h(v, x - δv)`.
    pub fn free_stream(&self, delta: f64) -> Result<DistributionField> {
        if self.frame != Frame::Lab {
            return Err(Error::Invalid("free_stream acts on lab-frame fields".into()));
        }
        Ok(DistributionField { h: self.shift_positions(-delta), t: self.t + delta, ..self.clone() })
    }

    /// `e^{tA}` to the comoving frame; identity for comoving fields.
    pub fn to_comoving(&self) -> DistributionField {
        match self.frame {
            Frame::Comoving => self.clone(),
            Frame::Lab => DistributionField { h: self.shift_positions(self.t), frame: Frame::Comoving, ..self.clone() },
        }
    }

    /// `e^{-tA}` back to the lab frame at the field's time.
    pub fn to_lab(&self) -> DistributionField {
        match self.frame {
            Frame::Lab => self.clone(),
            Frame::Comoving => DistributionField { h: self.shift_positions(-self.t), frame: Frame::Lab, ..self.clone() },
        }
    }

    /// Conserved moments of `F = hM` in the variables `(v, x - tv)`.
    pub fn moments(&self) -> MomentVector {
        let d = self.grid.dim;
        let len = MomentVector::len_for(d);
        let values = crate::par::sum_vec(self.len(), len, |k, acc| {
            let (v, y) = self.phase_point(k);
            let w = self.grid.weight(k) * self.h[k] * self.reference_value(k);
            MomentVector::accumulate(acc, &v[..d], &y[..d], w);
        });
        MomentVector { dim: d, values }
    }

    /// `∬ F ln F dv dx` with `0 ln 0 = 0`.
    pub fn h_functional(&self) -> Result<f64> {
        if let Some(k) = self.h.iter().position(|&x| !(x >= 0.0)) {
            return Err(Error::Positivity(format!("node {k} has h = {}", self.h[k])));
        }
        let d = self.grid.dim;
        Ok(crate::par::sum(self.len(), |k| {
            let h = self.h[k];
            if h == 0.0 {
                return 0.0;
            }
            let (v, y) = self.phase_point(k);
            let lnm = self.reference.ln_eval(&v[..d], &y[..d], 0.0);
            self.grid.weight(k) * h * lnm.exp() * (h.ln() + lnm)
        }))
    }

    /// `∬ |F - G| dv dx`.
    pub fn l1_distance(&self, other: &DistributionField) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(crate::par::sum(self.len(), |k| {
            self.grid.weight(k) * (self.h[k] - other.h[k]).abs() * self.reference_value(k)
        }))
    }

    /// Sup of `|h - value|`.
    pub fn sup_deviation(&self, value: f64) -> f64 {
        crate::par::max(self.len(), |k| (self.h[k] - value).abs())
    }
}

/// Cubic interpolation of a position block (`nx^D` values) at fractional
/// index positions, nearest-value extension outside.
fn interp_positions(src: &[f64], nx: usize, d: usize, pos: &[f64; 3]) -> f64 {
    let mut idx = [[0usize; 4]; 3];
    let mut wts = [[0.0f64; 4]; 3];
    for j in 0..d {
        let (i, w) = cubic_stencil(pos[j], nx);
        idx[j] = i;
        wts[j] = w;
    }
    let mut acc = 0.0;
    if d == 2 {
        for a in 0..4 {
            let r = idx[0][a] * nx;
            acc += wts[0][a]
                * (wts[1][0] * src[r + idx[1][0]]
                    + wts[1][1] * src[r + idx[1][1]]
                    + wts[1][2] * src[r + idx[1][2]]
                    + wts[1][3] * src[r + idx[1][3]]);
        }
    } else {
        for a in 0..4 {
            for b in 0..4 {
                let r = (idx[0][a] * nx + idx[1][b]) * nx;
                let w = wts[0][a] * wts[1][b];
                for c in 0..4 {
                    acc += w * wts[2][c] * src[r + idx[2][c]];
                }
            }
        }
    }
    acc
}

/// `max |h1 - h2|` over the nodes.
pub fn weighted_sup_norm(f1: &DistributionField, f2: &DistributionField) -> Result<f64> {
    f1.check_compatible(f2)?;
    Ok(crate::par::max(f1.len(), |k| (f1.h[k] - f2.h[k]).abs()))
}

/// Comoving fields on strictly increasing time nodes.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub nodes: Vec<f64>,
    pub fields: Vec<DistributionField>,
}

impl Trajectory {
    pub fn new(nodes: Vec<f64>, fields: Vec<DistributionField>) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != fields.len() {
            return Err(Error::Invalid("trajectory needs one field per node".into()));
        }
        if nodes.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Invalid("trajectory nodes must increase strictly".into()));
        }
        for (t, f) in nodes.iter().zip(&fields) {
            if f.frame != Frame::Comoving || f.t != *t {
                return Err(Error::Invalid(format!("field at node {t} is not a comoving field at that time")));
            }
            f.check_compatible(&fields[0])?;
        }
        Ok(Trajectory { nodes, fields })
    }

    /// Node-wise [`weighted_sup_norm`], maximized.
    pub fn distance(&self, other: &Trajectory) -> Result<f64> {
        if self.nodes != other.nodes {
            return Err(Error::Invalid("trajectories on different nodes".into()));
        }
        let mut m: f64 = 0.0;
        for (a, b) in self.fields.iter().zip(&other.fields) {
            m = m.max(weighted_sup_norm(a, b)?);
        }
        Ok(m)
    }

    pub fn first(&self) -> &DistributionField {
        &self.fields[0]
    }

    pub fn last(&self) -> &DistributionField {
        &self.fields[self.fields.len() - 1]
    }

    /// Index of the node at `t = 0`, when present.
    pub fn zero_index(&self) -> Option<usize> {
        self.nodes.iter().position(|&t| t == 0.0)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DumpManifest {
    pub grid: PhaseGrid,
    pub t: f64,
    pub frame: Frame,
    #[serde(rename = "ref")]
    pub reference: MaxwellianJson,
    /// SHA-256 of the `.bin` payload, hex.
    pub checksum: String,
    pub data: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `<stem>.bin` (little-endian f64, velocity axes outer) and
/// `<stem>.json`; returns the manifest path.
pub fn write_dump(field: &DistributionField, dir: &Path, stem: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let bytes: Vec<u8> = field.h.iter().flat_map(|x| x.to_le_bytes()).collect();
    let bin = format!("{stem}.bin");
    std::fs::write(dir.join(&bin), &bytes)?;
    let manifest = DumpManifest {
        grid: field.grid.clone(),
        t: field.t,
        frame: field.frame,
        reference: field.reference.to_json(),
        checksum: sha256_hex(&bytes),
        data: bin,
    };
    let path = dir.join(format!("{stem}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

/// Reads a dump through its manifest and verifies the checksum.
pub fn read_dump(manifest_path: &Path) -> Result<DistributionField> {
    let text = std::fs::read_to_string(manifest_path)?;
    let m: DumpManifest = serde_json::from_str(&text)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let bytes = std::fs::read(dir.join(&m.data))?;
    if sha256_hex(&bytes) != m.checksum {
        return Err(Error::Invalid(format!("checksum mismatch for {}", m.data)));
    }
    let grid = PhaseGrid::unchecked(m.grid.dim, m.grid.nv, m.grid.vmax, m.grid.nx, m.grid.xmax)?;
    if bytes.len() != 8 * grid.len() {
        return Err(Error::Invalid(format!("{} holds {} bytes, expected {}", m.data, bytes.len(), 8 * grid.len())));
    }
    let h = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    let reference = GlobalMaxwellianParams::from_json(&m.reference)?;
    Ok(DistributionField { grid, t: m.t, frame: m.frame, h, reference })
}
