//! Quadrature and interpolation primitives shared by the physics modules.

use crate::{Error, Result};
use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on [-1, 1], nodes increasing.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    if n == 1 {
        return (vec![0.0], vec![2.0]);
    }
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Fixed-order Gauss–Legendre rule on [a, b].
pub fn gl_fixed<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    rule.0
        .iter()
        .zip(&rule.1)
        .map(|(&x, &w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

/// Composite Gauss–Legendre on [a, b]; the panel count doubles until two
/// successive totals agree to `rel_tol`.
pub fn adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    adaptive_floor(f, a, b, rel_tol, 0.0)
}

/// [`adaptive`] that also stops once successive totals agree to `abs_tol`.
pub fn adaptive_floor<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let rule = gauss_legendre(16);
    let composite = |panels: usize| {
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|i| gl_fixed(&f, a + i as f64 * h, a + (i + 1) as f64 * h, &rule))
            .sum::<f64>()
    };
    let mut prev = composite(1);
    let mut panels = 1;
    while panels < 1 << 16 {
        panels *= 2;
        let next = composite(panels);
        if (next - prev).abs() <= (rel_tol * next.abs()).max(abs_tol) || (next - prev).abs() < 1e-300 {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::NotConverged { iters: panels, delta: prev, ratio: f64::NAN })
}

/// `∫_0^b f` for integrands with an algebraic endpoint behaviour at 0:
/// dyadic panels `[b 2^{-k-1}, b 2^{-k}]`, each integrated adaptively,
/// until a panel no longer changes the total.
pub fn graded<F: Fn(f64) -> f64>(f: F, b: f64, rel_tol: f64) -> Result<f64> {
    // coarse magnitude estimate; sets the absolute floor for tiny panels
    let rule = gauss_legendre(16);
    let coarse: f64 = (0..32)
        .map(|i| gl_fixed(&f, b * i as f64 / 32.0, b * (i + 1) as f64 / 32.0, &rule).abs())
        .sum();
    let mut total: f64 = 0.0;
    let mut hi = b;
    for _ in 0..1100 {
        let lo = 0.5 * hi;
        let floor = 1e-3 * rel_tol * total.abs().max(coarse);
        let part = adaptive_floor(&f, lo, hi, rel_tol, floor)?;
        total += part;
        // the rest of [0, lo] must be negligible too, not only this panel
        if (part.abs() <= floor && gl_fixed(&f, 0.0, lo, &rule).abs() <= floor) || hi < 1e-300 {
            return Ok(total);
        }
        hi = lo;
    }
    Err(Error::NotConverged { iters: 1100, delta: total, ratio: f64::NAN })
}

pub fn gamma(x: f64) -> f64 {
    statrs::function::gamma::gamma(x)
}

pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Surface area of the unit sphere in R^d.
pub fn sphere_area(d: usize) -> f64 {
    2.0 * PI.powf(d as f64 / 2.0) / gamma(d as f64 / 2.0)
}

/// Chebyshev–Lobatto points on [a, b], increasing, endpoints included.
pub fn chebyshev_lobatto(n: usize, a: f64, b: f64) -> Vec<f64> {
    assert!(n >= 2);
    (0..n)
        .map(|j| {
            // sine form is exactly antisymmetric about the midpoint
            let c = (PI * (2.0 * j as f64 - (n - 1) as f64) / (2.0 * (n - 1) as f64)).sin();
            if j == 0 {
                a
            } else if j == n - 1 {
                b
            } else {
                0.5 * (a + b) + 0.5 * (b - a) * c
            }
        })
        .collect()
}

/// Barycentric weights of the Chebyshev–Lobatto points.
pub fn lobatto_bary_weights(n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| {
            let s = if j % 2 == 0 { 1.0 } else { -1.0 };
            if j == 0 || j == n - 1 {
                0.5 * s
            } else {
                s
            }
        })
        .collect()
}

/// Values of the Lagrange basis polynomials at `x` in barycentric form.
pub fn bary_basis(nodes: &[f64], weights: &[f64], x: f64) -> Vec<f64> {
    let mut out = vec![0.0; nodes.len()];
    if let Some(k) = nodes.iter().position(|&t| t == x) {
        out[k] = 1.0;
        return out;
    }
    let mut denom = 0.0;
    for (j, (&t, &w)) in nodes.iter().zip(weights).enumerate() {
        let q = w / (x - t);
        out[j] = q;
        denom += q;
    }
    out.iter_mut().for_each(|v| *v /= denom);
    out
}

/// Four-point Lagrange weights for nodes at offsets -1, 0, 1, 2 and a
/// fractional position `f` in [0, 1).
#[inline]
pub fn cubic_weights(f: f64) -> [f64; 4] {
    let fm1 = f - 1.0;
    let fm2 = f - 2.0;
    let fp1 = f + 1.0;
    [
        -f * fm1 * fm2 / 6.0,
        fp1 * fm1 * fm2 / 2.0,
        -fp1 * f * fm2 / 2.0,
        fp1 * f * fm1 / 6.0,
    ]
}

/// Cubic stencil along one uniform axis with `n` nodes for a coordinate
/// already expressed in index units. Indices outside the axis are clamped,
/// which extends the data by its nearest in-box value.
#[inline]
pub fn cubic_stencil(pos: f64, n: usize) -> ([usize; 4], [f64; 4]) {
    let last = (n - 1) as f64;
    let p = pos.clamp(0.0, last);
    let mut i = p.floor();
    if i >= last {
        i = last - 1.0;
    }
    let f = p - i;
    let i = i as isize;
    let top = n as isize - 1;
    let idx = [
        (i - 1).clamp(0, top) as usize,
        i.clamp(0, top) as usize,
        (i + 1).clamp(0, top) as usize,
        (i + 2).clamp(0, top) as usize,
    ];
    (idx, cubic_weights(f))
}

/// Linear stencil along one axis, clamped to the box.
#[inline]
pub fn linear_stencil(pos: f64, n: usize) -> (usize, f64) {
    let last = (n - 1) as f64;
    let p = pos.clamp(0.0, last);
    let mut i = p.floor();
    if i >= last {
        i = last - 1.0;
    }
    (i as usize, p - i)
}

/// Additive recurrence (Kronecker) sequence in the unit cube, based on the
/// generalized golden ratio.
pub struct Kronecker {
    alpha: Vec<f64>,
    n: u64,
}

impl Kronecker {
    pub fn new(dim: usize) -> Self {
        let mut g = 2.0f64;
        for _ in 0..100 {
            g = (1.0 + g).powf(1.0 / (dim as f64 + 1.0));
        }
        let alpha = (1..=dim).map(|i| (1.0 / g.powi(i as i32)).fract()).collect();
        Kronecker { alpha, n: 0 }
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        self.n += 1;
        let n = self.n as f64;
        self.alpha.iter().map(|a| (0.5 + n * a).fract()).collect()
    }
}

/// Standard normal upper tail probability.
pub fn normal_tail(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(z / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in [1, 2, 5, 8, 16] {
            let rule = gauss_legendre(n);
            let wsum: f64 = rule.1.iter().sum();
            assert!((wsum - 2.0).abs() < 1e-14);
            let deg = 2 * n - 1;
            let f = |x: f64| x.powi(deg as i32 - 1);
            let exact = if (deg - 1) % 2 == 0 { 2.0 / deg as f64 } else { 0.0 };
            assert!((gl_fixed(&f, -1.0, 1.0, &rule) - exact).abs() < 1e-13, "n={n}");
        }
    }

    #[test]
    fn adaptive_matches_arctan() {
        let v = adaptive(|t| 1.0 / (1.0 + t * t), -50.0, 50.0, 1e-12).unwrap();
        assert!((v - 2.0 * 50f64.atan()).abs() < 1e-11);
    }

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(2) - 2.0 * PI).abs() < 1e-13);
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-13);
    }

    #[test]
    fn cubic_reproduces_cubics_and_nodes() {
        let f = |x: f64| 1.0 - 2.0 * x + 0.5 * x * x - 0.25 * x * x * x;
        let vals: Vec<f64> = (0..8).map(|i| f(i as f64)).collect();
        for &p in &[1.3, 2.0, 4.75, 5.5] {
            let (idx, w) = cubic_stencil(p, 8);
            let s: f64 = idx.iter().zip(&w).map(|(&i, &w)| w * vals[i]).sum();
            assert!((s - f(p)).abs() < 1e-12);
        }
        assert_eq!(cubic_weights(0.0), [0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn barycentric_interpolates_polynomial() {
        let nodes = chebyshev_lobatto(9, -1.0, 2.0);
        let w = lobatto_bary_weights(9);
        let f = |x: f64| x.powi(7) - 3.0 * x;
        let vals: Vec<f64> = nodes.iter().map(|&x| f(x)).collect();
        let b = bary_basis(&nodes, &w, 0.3);
        let s: f64 = b.iter().zip(&vals).map(|(a, b)| a * b).sum();
        assert!((s - f(0.3)).abs() < 1e-12);
    }

    #[test]
    fn kronecker_points_in_unit_cube() {
        let mut k = Kronecker::new(4);
        for _ in 0..100 {
            assert!(k.next_point().iter().all(|&x| (0.0..1.0).contains(&x)));
        }
    }
}
