//! Discrete fields and exterior calculus on the flat 4-torus (and on
//! non-periodic chart boxes): grids, derivative stencils, exterior
//! derivative, metric codifferential, integration and cohomology pairings.
//!
//! Storage is row-major with axis order (x0, x1, x2, x3), last axis fastest,
//! one contiguous array per form component.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::algebra::{Form2, MetricData, Sym4, FORM2_BASIS};
use crate::error::{HsError, Result};

/// Derivative backend for periodic grids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// FFT differentiation with 2/3-rule de-aliasing of differentiated output.
    Spectral,
    /// Centered 4th-order finite differences.
    Fd4,
}

impl std::str::FromStr for Backend {
    type Err = HsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(Backend::Spectral),
            "fd4" => Ok(Backend::Fd4),
            other => Err(HsError::Config(format!("unknown backend '{other}'"))),
        }
    }
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Backend::Spectral => write!(f, "spectral"),
            Backend::Fd4 => write!(f, "fd4"),
        }
    }
}

/// A structured 4D grid: the periodic torus or a non-periodic chart box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid4 {
    pub dims: [usize; 4],
    pub lens: [f64; 4],
    pub origin: [f64; 4],
    pub periodic: bool,
    pub backend: Backend,
}

impl Grid4 {
    /// Periodic torus grid with N points per axis and period L.
    pub fn torus(n: usize, l: f64, backend: Backend) -> Result<Grid4> {
        if n < 8 || n % 2 != 0 {
            return Err(HsError::Config(format!(
                "torus grid needs N >= 8 and even, got {n}"
            )));
        }
        if !(l > 0.0) {
            return Err(HsError::Config("period must be positive".into()));
        }
        Ok(Grid4 {
            dims: [n; 4],
            lens: [l; 4],
            origin: [0.0; 4],
            periodic: true,
            backend,
        })
    }

    /// Non-periodic chart box sampled inclusively at both ends; always FD.
    pub fn chart(dims: [usize; 4], origin: [f64; 4], lens: [f64; 4]) -> Result<Grid4> {
        for a in 0..4 {
            if dims[a] < 8 {
                return Err(HsError::Config(format!(
                    "chart grid needs >= 8 points per axis, got {}",
                    dims[a]
                )));
            }
            if !(lens[a] > 0.0) {
                return Err(HsError::Config("chart extent must be positive".into()));
            }
        }
        Ok(Grid4 {
            dims,
            lens,
            origin,
            periodic: false,
            backend: Backend::Fd4,
        })
    }

    pub fn num_points(&self) -> usize {
        self.dims.iter().product()
    }

    /// Grid spacing along an axis.
    pub fn spacing(&self, axis: usize) -> f64 {
        if self.periodic {
            self.lens[axis] / self.dims[axis] as f64
        } else {
            self.lens[axis] / (self.dims[axis] - 1) as f64
        }
    }

    pub fn strides(&self) -> [usize; 4] {
        let d = &self.dims;
        [d[1] * d[2] * d[3], d[2] * d[3], d[3], 1]
    }

    pub fn index(&self, c: [usize; 4]) -> usize {
        let s = self.strides();
        c[0] * s[0] + c[1] * s[1] + c[2] * s[2] + c[3] * s[3]
    }

    pub fn coords_of(&self, mut idx: usize) -> [usize; 4] {
        let s = self.strides();
        let mut out = [0usize; 4];
        for a in 0..4 {
            out[a] = idx / s[a];
            idx %= s[a];
        }
        out
    }

    /// Physical coordinates of a grid point.
    pub fn point(&self, c: [usize; 4]) -> [f64; 4] {
        std::array::from_fn(|a| self.origin[a] + c[a] as f64 * self.spacing(a))
    }

    /// Visit every grid point with its flat index and coordinates.
    pub fn for_each_point(&self, mut f: impl FnMut(usize, [f64; 4])) {
        let d = self.dims;
        let mut idx = 0;
        for i0 in 0..d[0] {
            for i1 in 0..d[1] {
                for i2 in 0..d[2] {
                    for i3 in 0..d[3] {
                        f(idx, self.point([i0, i1, i2, i3]));
                        idx += 1;
                    }
                }
            }
        }
    }
}

/// A differential form sampled on a grid, one array per component.
///
/// Component bases: degree 0 -> (1); degree 1 -> (dx0..dx3); degree 2 -> the
/// fixed basis of [`FORM2_BASIS`]; degree 3 -> (e012, e013, e023, e123);
/// degree 4 -> (e0123).
#[derive(Clone, Debug)]
pub struct FormField {
    pub grid: Grid4,
    pub degree: u8,
    pub comps: Vec<Vec<f64>>,
}

pub const fn num_components(degree: u8) -> usize {
    match degree {
        0 | 4 => 1,
        1 | 3 => 4,
        2 => 6,
        _ => 0,
    }
}

/// Sorted index triples of the 3-form basis.
pub const FORM3_BASIS: [(usize, usize, usize); 4] = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)];

impl FormField {
    pub fn zero(grid: Grid4, degree: u8) -> FormField {
        let n = grid.num_points();
        FormField {
            grid,
            degree,
            comps: vec![vec![0.0; n]; num_components(degree)],
        }
    }

    pub fn from_fn(grid: Grid4, degree: u8, f: impl Fn([f64; 4]) -> Vec<f64>) -> FormField {
        let mut out = FormField::zero(grid, degree);
        grid.for_each_point(|idx, x| {
            let v = f(x);
            for (c, comp) in out.comps.iter_mut().enumerate() {
                comp[idx] = v[c];
            }
        });
        out
    }

    pub fn two_form_at(&self, idx: usize) -> Form2 {
        debug_assert_eq!(self.degree, 2);
        Form2(std::array::from_fn(|c| self.comps[c][idx]))
    }

    pub fn set_two_form(&mut self, idx: usize, w: &Form2) {
        for c in 0..6 {
            self.comps[c][idx] = w.0[c];
        }
    }

    pub fn one_form_at(&self, idx: usize) -> [f64; 4] {
        debug_assert_eq!(self.degree, 1);
        std::array::from_fn(|c| self.comps[c][idx])
    }

    pub fn max_abs(&self) -> f64 {
        self.comps
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn scaled(&self, s: f64) -> FormField {
        let mut out = self.clone();
        for c in &mut out.comps {
            for x in c.iter_mut() {
                *x *= s;
            }
        }
        out
    }

    pub fn axpy(&mut self, a: f64, other: &FormField) {
        for (c, oc) in self.comps.iter_mut().zip(other.comps.iter()) {
            for (x, y) in c.iter_mut().zip(oc.iter()) {
                *x += a * y;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Derivative kernels
// ---------------------------------------------------------------------------

thread_local! {
    static FFT_CACHE: RefCell<HashMap<usize, (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>)>> =
        RefCell::new(HashMap::new());
}

fn with_fft<R>(n: usize, f: impl FnOnce(&Arc<dyn Fft<f64>>, &Arc<dyn Fft<f64>>) -> R) -> R {
    FFT_CACHE.with(|cache| {
        let mut cache = cache.borrow_mut();
        let (fwd, inv) = cache.entry(n).or_insert_with(|| {
            let mut planner = FftPlanner::new();
            (planner.plan_fft_forward(n), planner.plan_fft_inverse(n))
        });
        f(fwd, inv)
    })
}

/// Apply `kernel` to every 1D line of `data` along `axis`, writing `out`.
fn for_each_line(
    grid: &Grid4,
    data: &[f64],
    out: &mut [f64],
    axis: usize,
    kernel: impl Fn(&[f64], &mut [f64]),
) {
    let dims = grid.dims;
    let strides = grid.strides();
    let n = dims[axis];
    let stride = strides[axis];
    let mut buf = vec![0.0f64; n];
    let mut obuf = vec![0.0f64; n];
    // Iterate over the three transverse axes.
    let others: Vec<usize> = (0..4).filter(|&a| a != axis).collect();
    let (o0, o1, o2) = (others[0], others[1], others[2]);
    for j0 in 0..dims[o0] {
        for j1 in 0..dims[o1] {
            for j2 in 0..dims[o2] {
                let base = j0 * strides[o0] + j1 * strides[o1] + j2 * strides[o2];
                for i in 0..n {
                    buf[i] = data[base + i * stride];
                }
                kernel(&buf, &mut obuf);
                for i in 0..n {
                    out[base + i * stride] = obuf[i];
                }
            }
        }
    }
}

fn spectral_line_op(n: usize, mult: &[Complex<f64>], line: &[f64], out: &mut [f64]) {
    let mut buf: Vec<Complex<f64>> = line.iter().map(|&x| Complex::new(x, 0.0)).collect();
    with_fft(n, |fwd, inv| {
        fwd.process(&mut buf);
        for (b, m) in buf.iter_mut().zip(mult.iter()) {
            *b *= m;
        }
        inv.process(&mut buf);
    });
    let scale = 1.0 / n as f64;
    for (o, b) in out.iter_mut().zip(buf.iter()) {
        *o = b.re * scale;
    }
}

/// Signed wavenumber of mode index i on a length-n axis.
fn wavenumber(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

fn spectral_deriv_multiplier(n: usize, l: f64, dealias: bool) -> Vec<Complex<f64>> {
    let kmax = n as f64 / 3.0;
    (0..n)
        .map(|i| {
            let k = wavenumber(i, n) * std::f64::consts::TAU / l;
            let km = wavenumber(i, n).abs();
            if i == n / 2 || (dealias && km > kmax) {
                Complex::new(0.0, 0.0)
            } else {
                Complex::new(0.0, k)
            }
        })
        .collect()
}

fn fd4_periodic_line(h: f64, line: &[f64], out: &mut [f64]) {
    let n = line.len();
    let c = 1.0 / (12.0 * h);
    for i in 0..n {
        let m2 = line[(i + n - 2) % n];
        let m1 = line[(i + n - 1) % n];
        let p1 = line[(i + 1) % n];
        let p2 = line[(i + 2) % n];
        out[i] = c * (m2 - 8.0 * m1 + 8.0 * p1 - p2);
    }
}

fn fd4_chart_line(h: f64, line: &[f64], out: &mut [f64]) {
    let n = line.len();
    let c = 1.0 / (12.0 * h);
    // 4th-order one-sided and offset stencils at the boundary.
    out[0] = c * (-25.0 * line[0] + 48.0 * line[1] - 36.0 * line[2] + 16.0 * line[3]
        - 3.0 * line[4]);
    out[1] = c * (-3.0 * line[0] - 10.0 * line[1] + 18.0 * line[2] - 6.0 * line[3] + line[4]);
    for i in 2..(n - 2) {
        out[i] = c * (line[i - 2] - 8.0 * line[i - 1] + 8.0 * line[i + 1] - line[i + 2]);
    }
    out[n - 2] = -c
        * (-3.0 * line[n - 1] - 10.0 * line[n - 2] + 18.0 * line[n - 3] - 6.0 * line[n - 4]
            + line[n - 5]);
    out[n - 1] = -c
        * (-25.0 * line[n - 1] + 48.0 * line[n - 2] - 36.0 * line[n - 3] + 16.0 * line[n - 4]
            - 3.0 * line[n - 5]);
}

/// Partial derivative of a sampled function along one axis.
pub fn deriv(grid: &Grid4, data: &[f64], axis: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    let h = grid.spacing(axis);
    if !grid.periodic {
        for_each_line(grid, data, &mut out, axis, |l, o| fd4_chart_line(h, l, o));
    } else {
        match grid.backend {
            Backend::Spectral => {
                let n = grid.dims[axis];
                let mult = spectral_deriv_multiplier(n, grid.lens[axis], true);
                for_each_line(grid, data, &mut out, axis, |l, o| {
                    spectral_line_op(n, &mult, l, o)
                });
            }
            Backend::Fd4 => {
                for_each_line(grid, data, &mut out, axis, |l, o| fd4_periodic_line(h, l, o));
            }
        }
    }
    out
}

/// 2/3-rule truncation of a scalar array (spectral grids only); the zero mode
/// is untouched. On FD grids this is the identity.
pub fn dealias(grid: &Grid4, data: &[f64]) -> Vec<f64> {
    if !grid.periodic || grid.backend != Backend::Spectral {
        return data.to_vec();
    }
    let mut cur = data.to_vec();
    for axis in 0..4 {
        let n = grid.dims[axis];
        let kmax = n as f64 / 3.0;
        let mult: Vec<Complex<f64>> = (0..n)
            .map(|i| {
                if wavenumber(i, n).abs() > kmax {
                    Complex::new(0.0, 0.0)
                } else {
                    Complex::new(1.0, 0.0)
                }
            })
            .collect();
        let mut out = vec![0.0; cur.len()];
        for_each_line(grid, &cur, &mut out, axis, |l, o| {
            spectral_line_op(n, &mult, l, o)
        });
        cur = out;
    }
    cur
}

/// Lookup (component, sign) of the 2-form basis for an arbitrary ordered pair.
pub fn form2_component(a: usize, b: usize) -> (usize, f64) {
    for (c, &(x, y)) in FORM2_BASIS.iter().enumerate() {
        if (a, b) == (x, y) {
            return (c, 1.0);
        }
        if (b, a) == (x, y) {
            return (c, -1.0);
        }
    }
    unreachable!("form2_component called with equal indices");
}

/// Lookup (component, sign) of the 3-form basis for an ordered triple.
pub fn form3_component(a: usize, b: usize, c: usize) -> (usize, f64) {
    let mut v = [(a, 0), (b, 1), (c, 2)];
    v.sort_by_key(|p| p.0);
    let sorted = (v[0].0, v[1].0, v[2].0);
    let comp = FORM3_BASIS.iter().position(|&t| t == sorted).unwrap();
    // Parity of the sort permutation.
    let perm = [v[0].1, v[1].1, v[2].1];
    let mut sign = 1.0;
    for i in 0..3 {
        for j in (i + 1)..3 {
            if perm[i] > perm[j] {
                sign = -sign;
            }
        }
    }
    (comp, sign)
}

/// Discrete exterior derivative of a k-form field, k in {0, 1, 2, 3}.
pub fn ext_d(field: &FormField) -> FormField {
    let grid = field.grid;
    match field.degree {
        0 => {
            let mut out = FormField::zero(grid, 1);
            for a in 0..4 {
                out.comps[a] = deriv(&grid, &field.comps[0], a);
            }
            out
        }
        1 => {
            let mut out = FormField::zero(grid, 2);
            // d alpha has (a,b) component D_a alpha_b - D_b alpha_a.
            let mut d = vec![vec![Vec::new(); 4]; 4]; // d[a][b] = D_a alpha_b
            for a in 0..4 {
                for b in 0..4 {
                    if a != b {
                        d[a][b] = deriv(&grid, &field.comps[b], a);
                    }
                }
            }
            for (c, &(a, b)) in FORM2_BASIS.iter().enumerate() {
                let (da, db) = (&d[a][b], &d[b][a]);
                for (o, (x, y)) in out.comps[c].iter_mut().zip(da.iter().zip(db.iter())) {
                    *o = x - y;
                }
            }
            out
        }
        2 => {
            let mut out = FormField::zero(grid, 3);
            for (ci, &(a, b, c)) in FORM3_BASIS.iter().enumerate() {
                // D_a w_bc - D_b w_ac + D_c w_ab
                for (axis, pair, s0) in [(a, (b, c), 1.0), (b, (a, c), -1.0), (c, (a, b), 1.0)] {
                    let (comp, sign) = form2_component(pair.0, pair.1);
                    let d = deriv(&grid, &field.comps[comp], axis);
                    for (o, x) in out.comps[ci].iter_mut().zip(d.iter()) {
                        *o += s0 * sign * x;
                    }
                }
            }
            out
        }
        3 => {
            let mut out = FormField::zero(grid, 4);
            // (d rho)_{0123} = D_0 rho_123 - D_1 rho_023 + D_2 rho_013 - D_3 rho_012
            for (axis, comp, sign) in [(0, 3, 1.0), (1, 2, -1.0), (2, 1, 1.0), (3, 0, -1.0)] {
                let d = deriv(&grid, &field.comps[comp], axis);
                for (o, x) in out.comps[0].iter_mut().zip(d.iter()) {
                    *o += sign * x;
                }
            }
            out
        }
        _ => panic!("ext_d: unsupported degree {}", field.degree),
    }
}

// ---------------------------------------------------------------------------
// Metric fields and the codifferential
// ---------------------------------------------------------------------------

/// Per-point metric data over a grid: g, its inverse and sqrt(det g).
#[derive(Clone, Debug)]
pub struct MetricField {
    pub grid: Grid4,
    pub data: Vec<MetricData>,
}

impl MetricField {
    pub fn from_metrics(grid: Grid4, gs: Vec<Sym4>) -> Result<MetricField> {
        let mut data = Vec::with_capacity(gs.len());
        for (idx, g) in gs.into_iter().enumerate() {
            let md = MetricData::new(g).map_err(|_| HsError::DegenerateMetric { index: idx })?;
            data.push(md);
        }
        Ok(MetricField { grid, data })
    }

    pub fn euclidean(grid: Grid4) -> MetricField {
        let md = MetricData::new(Sym4::identity()).unwrap();
        MetricField {
            grid,
            data: vec![md; grid.num_points()],
        }
    }

    /// Extract one metric component as a flat array.
    pub fn component(&self, i: usize, j: usize) -> Vec<f64> {
        self.data.iter().map(|m| m.g.get(i, j)).collect()
    }
}

/// Pointwise Hodge star from 3-forms to 1-forms:
/// (*rho)_d = (1/6) sqrt(g) eps_{abcd} rho^{abc}.
///
/// Computed via the permutation-symbol identity
/// `eps_{abcd} rho^{abc} = det(g^-1) g_{de} eps^{abce} rho_{abc}`, which
/// avoids raising three indices: with `v^e = (1/6) eps^{abce} rho_{abc}`,
/// `(*rho)_d = g_{de} v^e / sqrt(g)`.
pub fn star3_point(g: &MetricData, rho: &[f64; 4]) -> [f64; 4] {
    // FORM3_BASIS = (e012, e013, e023, e123); the complementary index and
    // sign of eps(a, b, c, d) for each sorted triple give
    // v = (-rho_123, rho_023, -rho_013, rho_012).
    let v = [-rho[3], rho[2], -rho[1], rho[0]];
    let mut out = [0.0f64; 4];
    for e in 0..4 {
        let mut s = 0.0;
        for d in 0..4 {
            s += g.g.get(e, d) * v[d];
        }
        out[e] = s / g.sqrt_det;
    }
    out
}

/// Reference implementation of [`star3_point`] by raising all three indices;
/// kept as an oracle for the fast path.
#[cfg(test)]
pub(crate) fn star3_point_reference(g: &MetricData, rho: &[f64; 4]) -> [f64; 4] {
    // Full antisymmetric coefficients from the sorted basis.
    let mut t = [[[0.0f64; 4]; 4]; 4];
    for (ci, &(a, b, c)) in FORM3_BASIS.iter().enumerate() {
        let perms = [
            (a, b, c, 1.0),
            (b, c, a, 1.0),
            (c, a, b, 1.0),
            (a, c, b, -1.0),
            (c, b, a, -1.0),
            (b, a, c, -1.0),
        ];
        for (x, y, z, s) in perms {
            t[x][y][z] = s * rho[ci];
        }
    }
    // Raise all three indices.
    let gi = &g.ginv;
    let mut up = [[[0.0f64; 4]; 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                let mut s = 0.0;
                for x in 0..4 {
                    let gax = gi.get(a, x);
                    if gax == 0.0 {
                        continue;
                    }
                    for y in 0..4 {
                        let gby = gi.get(b, y);
                        if gby == 0.0 {
                            continue;
                        }
                        for z in 0..4 {
                            s += gax * gby * gi.get(c, z) * t[x][y][z];
                        }
                    }
                }
                up[a][b][c] = s;
            }
        }
    }
    let mut out = [0.0f64; 4];
    for d in 0..4 {
        let mut s = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    let e = crate::algebra::eps4(a, b, c, d);
                    if e != 0.0 {
                        s += e * up[a][b][c];
                    }
                }
            }
        }
        out[d] = g.sqrt_det * s / 6.0;
    }
    out
}

/// Codifferential on 2-forms, d* = -*d* with the fixed orientation.
pub fn codifferential_2(g: &MetricField, w: &FormField) -> FormField {
    assert_eq!(w.degree, 2);
    let grid = w.grid;
    // Pointwise star.
    let mut starred = FormField::zero(grid, 2);
    for idx in 0..grid.num_points() {
        let s = crate::algebra::hodge_star_2(&g.data[idx], &w.two_form_at(idx));
        starred.set_two_form(idx, &s);
    }
    let dstar = ext_d(&starred);
    let mut out = FormField::zero(grid, 1);
    for idx in 0..grid.num_points() {
        let rho: [f64; 4] = std::array::from_fn(|c| dstar.comps[c][idx]);
        let v = star3_point(&g.data[idx], &rho);
        for c in 0..4 {
            out.comps[c][idx] = -v[c];
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Integration, reductions, cohomology
// ---------------------------------------------------------------------------

/// Deterministic pairwise-tree sum in fixed chunk order, independent of any
/// worker configuration.
pub fn reduce_sum(data: &[f64]) -> f64 {
    const CHUNK: usize = 1024;
    if data.len() <= CHUNK {
        return data.iter().sum();
    }
    let partials: Vec<f64> = data.chunks(CHUNK).map(|c| c.iter().sum()).collect();
    reduce_sum(&partials)
}

pub fn reduce_max(data: &[f64]) -> f64 {
    data.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x))
}

pub fn reduce_min(data: &[f64]) -> f64 {
    data.iter().fold(f64::INFINITY, |m, &x| m.min(x))
}

/// Integral of a 4-form over the torus: h^4 times the coefficient sum.
pub fn integrate(field: &FormField) -> f64 {
    assert_eq!(field.degree, 4);
    let g = &field.grid;
    let cell: f64 = (0..4).map(|a| g.spacing(a)).product();
    cell * reduce_sum(&field.comps[0])
}

/// Integral of a sampled scalar density against the coordinate volume.
pub fn integrate_scalar(grid: &Grid4, data: &[f64]) -> f64 {
    let cell: f64 = (0..4).map(|a| grid.spacing(a)).product();
    cell * reduce_sum(data)
}

/// Laplace–Beltrami operator on a sampled scalar, in divergence form:
/// `lap f = (1/sqrt g) d_a (sqrt g g^{ab} d_b f)`. Derivatives use the
/// backend of `grid`; pass an FD4-forced copy of the grid for fields that are
/// not band-limited.
pub fn scalar_laplacian(grid: &Grid4, metric: &MetricField, f: &[f64]) -> Vec<f64> {
    let npts = grid.num_points();
    let df: [Vec<f64>; 4] = std::array::from_fn(|b| deriv(grid, f, b));
    let mut out = vec![0.0; npts];
    for a in 0..4 {
        let mut flux = vec![0.0; npts];
        for (idx, fx) in flux.iter_mut().enumerate() {
            let md = &metric.data[idx];
            let mut v = 0.0;
            for b in 0..4 {
                v += md.ginv.get(a, b) * df[b][idx];
            }
            *fx = md.sqrt_det * v;
        }
        let dflux = deriv(grid, &flux, a);
        for idx in 0..npts {
            out[idx] += dflux[idx] / metric.data[idx].sqrt_det;
        }
    }
    out
}

/// Pairings of a 2-form field with the six coordinate 2-tori: for each basis
/// pair (a, b), the average over the complementary directions of
/// int w_ab dx^a dx^b.
pub fn cohomology_pairings(w: &FormField) -> [f64; 6] {
    assert_eq!(w.degree, 2);
    let g = &w.grid;
    let mut out = [0.0f64; 6];
    for (c, &(a, b)) in FORM2_BASIS.iter().enumerate() {
        let plane = g.spacing(a) * g.spacing(b);
        let n_perp: usize = (0..4).filter(|x| *x != a && *x != b).map(|x| g.dims[x]).product();
        out[c] = plane * reduce_sum(&w.comps[c]) / n_perp as f64;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    fn torus(n: usize, backend: Backend) -> Grid4 {
        Grid4::torus(n, TAU, backend).unwrap()
    }

    /// Random band-limited trigonometric polynomial with modes up to 2.
    fn random_trig(grid: &Grid4, rng: &mut impl Rng) -> Vec<f64> {
        let mut terms = Vec::new();
        for _ in 0..6 {
            let k: [i32; 4] = std::array::from_fn(|_| rng.gen_range(-2..=2));
            let amp = rng.gen::<f64>() - 0.5;
            let phase = rng.gen::<f64>() * TAU;
            terms.push((k, amp, phase));
        }
        let mut data = vec![0.0; grid.num_points()];
        grid.for_each_point(|idx, x| {
            let mut s = 0.0;
            for (k, amp, phase) in &terms {
                let arg: f64 = (0..4).map(|a| k[a] as f64 * x[a]).sum();
                s += amp * (arg + phase).cos();
            }
            data[idx] = s;
        });
        data
    }

    #[test]
    fn star3_point_matches_reference() {
        use nalgebra::Matrix4;
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..100 {
            let a = Matrix4::from_fn(|_, _| rng.gen::<f64>() - 0.5);
            let g = Sym4::from_matrix(&(a.transpose() * a + Matrix4::identity() * 0.5));
            let md = MetricData::new(g).unwrap();
            let rho: [f64; 4] = std::array::from_fn(|_| rng.gen::<f64>() - 0.5);
            let fast = star3_point(&md, &rho);
            let slow = star3_point_reference(&md, &rho);
            for d in 0..4 {
                assert_abs_diff_eq!(fast[d], slow[d], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn deriv_of_constant_is_zero() {
        for backend in [Backend::Spectral, Backend::Fd4] {
            let g = torus(8, backend);
            let data = vec![3.5; g.num_points()];
            for a in 0..4 {
                let d = deriv(&g, &data, a);
                assert!(d.iter().all(|x| x.abs() < 1e-13));
            }
        }
    }

    #[test]
    fn single_mode_derivative() {
        let g = torus(16, Backend::Spectral);
        let mut f = vec![0.0; g.num_points()];
        g.for_each_point(|idx, x| f[idx] = (x[0]).sin());
        let d = deriv(&g, &f, 0);
        let mut err: f64 = 0.0;
        g.for_each_point(|idx, x| err = err.max((d[idx] - x[0].cos()).abs()));
        assert!(err < 1e-12, "spectral single-mode error {err}");
    }

    #[test]
    fn d_of_sin_one_form() {
        // d(sin(x0) dx1) = cos(x0) e01 within mode tolerance.
        for backend in [Backend::Spectral, Backend::Fd4] {
            let g = torus(16, backend);
            let alpha = FormField::from_fn(g, 1, |x| vec![0.0, x[0].sin(), 0.0, 0.0]);
            let d = ext_d(&alpha);
            let tol = if backend == Backend::Spectral { 1e-12 } else { 1e-3 };
            let mut err: f64 = 0.0;
            g.for_each_point(|idx, x| {
                err = err.max((d.comps[0][idx] - x[0].cos()).abs());
                for c in 1..6 {
                    err = err.max(d.comps[c][idx].abs());
                }
            });
            assert!(err < tol, "{backend}: {err}");
        }
    }

    #[test]
    fn dd_is_zero_spectral() {
        let g = torus(12, Backend::Spectral);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_trig(&g, &mut rng);
        let sup = f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let field = FormField {
            grid: g,
            degree: 0,
            comps: vec![f],
        };
        let ddf = ext_d(&ext_d(&field));
        assert!(ddf.max_abs() <= 1e-10 * sup, "{}", ddf.max_abs());

        // Also one degree up.
        let alpha = FormField {
            grid: g,
            degree: 1,
            comps: (0..4).map(|_| random_trig(&g, &mut rng)).collect(),
        };
        let sup = alpha.max_abs();
        let dda = ext_d(&ext_d(&alpha));
        assert!(dda.max_abs() <= 1e-10 * sup, "{}", dda.max_abs());
    }

    #[test]
    fn euclidean_codifferential_matches_divergence_oracle() {
        // Flat space oracle: (d* w)_b = -sum_a D_a w_ab.
        let g = torus(16, Backend::Spectral);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = FormField {
            grid: g,
            degree: 2,
            comps: (0..6).map(|_| random_trig(&g, &mut rng)).collect(),
        };
        let metric = MetricField::euclidean(g);
        let got = codifferential_2(&metric, &w);

        let mut expect = FormField::zero(g, 1);
        for b in 0..4 {
            for a in 0..4 {
                if a == b {
                    continue;
                }
                let (comp, sign) = form2_component(a, b);
                let d = deriv(&g, &w.comps[comp], a);
                for (o, x) in expect.comps[b].iter_mut().zip(d.iter()) {
                    *o -= sign * x;
                }
            }
        }
        for c in 0..4 {
            for i in 0..g.num_points() {
                assert_abs_diff_eq!(got.comps[c][i], expect.comps[c][i], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn constant_two_form_has_zero_codifferential() {
        let g = torus(8, Backend::Spectral);
        let w = FormField::from_fn(g, 2, |_| vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let metric = MetricField::euclidean(g);
        let out = codifferential_2(&metric, &w);
        assert!(out.max_abs() < 1e-13);
    }

    /// L2 pairing of two same-degree fields w.r.t. a metric field.
    fn l2_pair(g: &MetricField, u: &FormField, v: &FormField) -> f64 {
        let grid = u.grid;
        let mut dens = vec![0.0; grid.num_points()];
        for idx in 0..grid.num_points() {
            let md = &g.data[idx];
            let ip = match u.degree {
                1 => crate::algebra::inner_1form(md, &u.one_form_at(idx), &v.one_form_at(idx)),
                2 => crate::algebra::inner_2form(md, &u.two_form_at(idx), &v.two_form_at(idx)),
                _ => unreachable!(),
            };
            dens[idx] = ip * md.sqrt_det;
        }
        integrate_scalar(&grid, &dens)
    }

    /// Conformal metric e^{2f} delta with a smooth low-mode factor f.
    fn conformal_metric(g: Grid4) -> MetricField {
        let mut gs = vec![Sym4::identity(); g.num_points()];
        g.for_each_point(|idx, x| {
            let f = 0.2 * (x[0] + x[3]).sin() + 0.1 * (x[1]).cos();
            let c = (2.0 * f).exp();
            let mut m = Sym4([0.0; 10]);
            for a in 0..4 {
                m.set(a, a, c);
            }
            gs[idx] = m;
        });
        MetricField::from_metrics(g, gs).unwrap()
    }

    #[test]
    fn codifferential_is_adjoint_of_d() {
        // Discrete adjointness is exact for any metric: the metric enters
        // only pointwise inside the stars, the centered stencil is exactly
        // skew-adjoint under the periodic point sum, and the de-aliasing
        // projector is self-adjoint and commutes with differentiation. Both
        // backends therefore satisfy summation by parts to roundoff.
        for backend in [Backend::Fd4, Backend::Spectral] {
            for n in [8usize, 12] {
                let g = torus(n, backend);
                let mut rng = ChaCha8Rng::seed_from_u64(33);
                let alpha = FormField {
                    grid: g,
                    degree: 1,
                    comps: (0..4).map(|_| random_trig(&g, &mut rng)).collect(),
                };
                let w = FormField {
                    grid: g,
                    degree: 2,
                    comps: (0..6).map(|_| random_trig(&g, &mut rng)).collect(),
                };
                let metric = conformal_metric(g);
                let lhs = l2_pair(&metric, &ext_d(&alpha), &w);
                let rhs = l2_pair(&metric, &alpha, &codifferential_2(&metric, &w));
                assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-11 * (1.0 + lhs.abs()));
            }
        }
    }

    #[test]
    fn integrate_basics() {
        let g = torus(8, Backend::Spectral);
        let mu = FormField::from_fn(g, 4, |_| vec![1.0]);
        assert_abs_diff_eq!(integrate(&mu), TAU.powi(4), epsilon = 1e-8);

        let mu2 = FormField::from_fn(g, 4, |x| vec![1.0 + x[0].sin()]);
        assert_abs_diff_eq!(integrate(&mu2), TAU.powi(4), epsilon = 1e-8);

        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let a = FormField {
            grid: g,
            degree: 4,
            comps: vec![random_trig(&g, &mut rng)],
        };
        let b = FormField {
            grid: g,
            degree: 4,
            comps: vec![random_trig(&g, &mut rng)],
        };
        let mut sum = a.clone();
        sum.axpy(1.0, &b);
        assert_abs_diff_eq!(
            integrate(&sum),
            integrate(&a) + integrate(&b),
            epsilon = 1e-9
        );
    }

    #[test]
    fn cohomology_pairings_basics() {
        let g = torus(8, Backend::Spectral);
        // omega_1 = e01 + e23.
        let w = FormField::from_fn(g, 2, |_| vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let p = cohomology_pairings(&w);
        let l2 = TAU * TAU;
        let expect = [l2, 0.0, 0.0, l2, 0.0, 0.0];
        for c in 0..6 {
            assert_abs_diff_eq!(p[c], expect[c], epsilon = 1e-10);
        }

        // Exact forms pair to zero.
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let alpha = FormField {
            grid: g,
            degree: 1,
            comps: (0..4).map(|_| random_trig(&g, &mut rng)).collect(),
        };
        let da = ext_d(&alpha);
        for x in cohomology_pairings(&da) {
            assert_abs_diff_eq!(x, 0.0, epsilon = 1e-10);
        }

        // Additivity.
        let w2 = FormField {
            grid: g,
            degree: 2,
            comps: (0..6).map(|_| random_trig(&g, &mut rng)).collect(),
        };
        let mut sum = w.clone();
        sum.axpy(1.0, &w2);
        let pa = cohomology_pairings(&w);
        let pb = cohomology_pairings(&w2);
        let ps = cohomology_pairings(&sum);
        for c in 0..6 {
            assert_abs_diff_eq!(ps[c], pa[c] + pb[c], epsilon = 1e-10);
        }
    }

    #[test]
    fn flat_hodge_laplacian_on_divergence_free_one_form() {
        // alpha = sin(x2) dx1 is coclosed, so d* d alpha = -d^2/dx2^2 alpha.
        let g = torus(16, Backend::Spectral);
        let alpha = FormField::from_fn(g, 1, |x| vec![0.0, x[2].sin(), 0.0, 0.0]);
        let metric = MetricField::euclidean(g);
        let lap = codifferential_2(&metric, &ext_d(&alpha));
        let mut err: f64 = 0.0;
        g.for_each_point(|idx, x| {
            err = err.max((lap.comps[1][idx] - x[2].sin()).abs());
            for c in [0, 2, 3] {
                err = err.max(lap.comps[c][idx].abs());
            }
        });
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn spectral_and_fd_agree_at_h4() {
        let mut errs = Vec::new();
        for n in [8usize, 16] {
            let gs = torus(n, Backend::Spectral);
            let gf = torus(n, Backend::Fd4);
            let mut rng = ChaCha8Rng::seed_from_u64(47);
            let f = random_trig(&gs, &mut rng);
            let ds = deriv(&gs, &f, 1);
            let df = deriv(&gf, &f, 1);
            let err = ds
                .iter()
                .zip(df.iter())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            errs.push(err);
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order >= 3.5, "order {order}, errors {errs:?}");
    }

    #[test]
    fn dealias_keeps_low_modes() {
        let g = torus(12, Backend::Spectral);
        let mut f = vec![0.0; g.num_points()];
        g.for_each_point(|idx, x| f[idx] = 2.0 + (x[0] + 2.0 * x[3]).cos());
        let filtered = dealias(&g, &f);
        for i in 0..f.len() {
            assert_abs_diff_eq!(filtered[i], f[i], epsilon = 1e-11);
        }
        // A Nyquist-range mode is removed.
        let mut hi = vec![0.0; g.num_points()];
        g.for_each_point(|idx, x| hi[idx] = (5.0 * x[1]).cos());
        let filtered = dealias(&g, &hi);
        for x in &filtered {
            assert_abs_diff_eq!(*x, 0.0, epsilon = 1e-11);
        }
    }

    #[test]
    fn chart_derivative_converges_at_order_4() {
        let mut errs = Vec::new();
        for n in [12usize, 24] {
            let g = Grid4::chart([8, n, 8, 8], [0.3, -0.5, 0.0, 0.0], [1.0, 1.0, 1.0, 1.0])
                .unwrap();
            let mut f = vec![0.0; g.num_points()];
            let mut expect = vec![0.0; g.num_points()];
            g.for_each_point(|idx, x| {
                f[idx] = (1.7 * x[1]).sin() + x[1] * x[1] * x[1];
                expect[idx] = 1.7 * (1.7 * x[1]).cos() + 3.0 * x[1] * x[1];
            });
            let d = deriv(&g, &f, 1);
            let err = d
                .iter()
                .zip(expect.iter())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            errs.push(err);
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order >= 3.5, "chart order {order}, errors {errs:?}");
    }

    #[test]
    fn reduce_sum_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let data: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>() - 0.5).collect();
        let naive: f64 = data.iter().sum();
        assert_abs_diff_eq!(reduce_sum(&data), naive, epsilon = 1e-9);
    }
}
