//! Pointwise linear algebra of hypersymplectic triples: wedge pairings, the
//! Q-matrix, the normalized volume form, the induced metric and self-duality.
//!
//! The fixed basis of 2-forms is (e01, e02, e03, e23, e31, e12) with the
//! orientation e0123 > 0. Every sign convention downstream derives from this
//! ordering.

use nalgebra::{Matrix3, Matrix4, SMatrix};

use crate::error::{HsError, Result};

/// Index pairs of the fixed 2-form basis.
pub const FORM2_BASIS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (2, 3), (3, 1), (1, 2)];

/// Sign of the permutation (i, j, k) of (0, 1, 2); zero on repeats.
pub fn eps3(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

/// Sign of the permutation (a, b, c, d) of (0, 1, 2, 3); zero on repeats.
pub fn eps4(a: usize, b: usize, c: usize, d: usize) -> f64 {
    let v = [a as i32, b as i32, c as i32, d as i32];
    let mut sign = 1.0;
    for i in 0..4 {
        for j in (i + 1)..4 {
            match v[j] - v[i] {
                0 => return 0.0,
                x if x < 0 => sign = -sign,
                _ => {}
            }
        }
    }
    sign
}

/// A 2-form on R^4 in the fixed basis (e01, e02, e03, e23, e31, e12).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Form2(pub [f64; 6]);

impl Form2 {
    pub fn zero() -> Self {
        Form2([0.0; 6])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// Coefficient of e0123 in self ∧ other. In the fixed basis every
    /// component pairs positively with the component three places over.
    pub fn wedge(&self, other: &Form2) -> f64 {
        let a = &self.0;
        let b = &other.0;
        a[0] * b[3] + a[3] * b[0] + a[1] * b[4] + a[4] * b[1] + a[2] * b[5] + a[5] * b[2]
    }

    /// Antisymmetric coefficient matrix w_ab with w = sum_{a<b} w_ab e^a ∧ e^b.
    pub fn as_antisym(&self) -> [[f64; 4]; 4] {
        let mut m = [[0.0; 4]; 4];
        for (c, &(a, b)) in FORM2_BASIS.iter().enumerate() {
            m[a][b] = self.0[c];
            m[b][a] = -self.0[c];
        }
        m
    }

    pub fn from_antisym(m: &[[f64; 4]; 4]) -> Form2 {
        let mut c = [0.0; 6];
        for (i, &(a, b)) in FORM2_BASIS.iter().enumerate() {
            c[i] = m[a][b];
        }
        Form2(c)
    }

    /// Interior product with the coordinate vector e_axis; returns the
    /// components of the resulting 1-form.
    pub fn contract(&self, axis: usize) -> [f64; 4] {
        let m = self.as_antisym();
        m[axis]
    }

    pub fn scale(&self, s: f64) -> Form2 {
        let mut c = self.0;
        for x in &mut c {
            *x *= s;
        }
        Form2(c)
    }

    pub fn add(&self, o: &Form2) -> Form2 {
        let mut c = self.0;
        for (x, y) in c.iter_mut().zip(o.0.iter()) {
            *x += y;
        }
        Form2(c)
    }
}

/// Symmetric 3x3 matrix stored as (m11, m22, m33, m23, m13, m12).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Sym3(pub [f64; 6]);

/// A point of the positive-definite cone, same storage as [`Sym3`].
pub type Spd3 = Sym3;

impl Sym3 {
    pub fn identity() -> Self {
        Sym3([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
    }

    pub fn zero() -> Self {
        Sym3([0.0; 6])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let c = &self.0;
        match (i.min(j), i.max(j)) {
            (0, 0) => c[0],
            (1, 1) => c[1],
            (2, 2) => c[2],
            (1, 2) => c[3],
            (0, 2) => c[4],
            (0, 1) => c[5],
            _ => unreachable!(),
        }
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.get(i, j))
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Sym3([
            m[(0, 0)],
            m[(1, 1)],
            m[(2, 2)],
            0.5 * (m[(1, 2)] + m[(2, 1)]),
            0.5 * (m[(0, 2)] + m[(2, 0)]),
            0.5 * (m[(0, 1)] + m[(1, 0)]),
        ])
    }

    pub fn det(&self) -> f64 {
        let c = &self.0;
        c[0] * (c[1] * c[2] - c[3] * c[3]) - c[5] * (c[5] * c[2] - c[3] * c[4])
            + c[4] * (c[5] * c[3] - c[1] * c[4])
    }

    pub fn trace(&self) -> f64 {
        self.0[0] + self.0[1] + self.0[2]
    }

    pub fn scale(&self, s: f64) -> Sym3 {
        let mut c = self.0;
        for x in &mut c {
            *x *= s;
        }
        Sym3(c)
    }

    pub fn add(&self, o: &Sym3) -> Sym3 {
        let mut c = self.0;
        for (x, y) in c.iter_mut().zip(o.0.iter()) {
            *x += y;
        }
        Sym3(c)
    }

    /// Inverse via the adjugate; errors if the Cholesky pivots fall below
    /// 1e-13 * (1 + |self|_inf).
    pub fn inverse(&self) -> Result<Sym3> {
        if !self.cholesky_positive(1e-13) {
            return Err(HsError::SingularBase);
        }
        let d = self.det();
        let c = &self.0;
        let inv = Sym3([
            (c[1] * c[2] - c[3] * c[3]) / d,
            (c[0] * c[2] - c[4] * c[4]) / d,
            (c[0] * c[1] - c[5] * c[5]) / d,
            (c[5] * c[4] - c[0] * c[3]) / d,
            (c[5] * c[3] - c[1] * c[4]) / d,
            (c[4] * c[3] - c[5] * c[2]) / d,
        ]);
        Ok(inv)
    }

    /// Positive-definiteness via Cholesky with pivot tolerance
    /// rel_tol * (1 + |self|_inf).
    pub fn cholesky_positive(&self, rel_tol: f64) -> bool {
        let inf = self.0.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let tol = rel_tol * (1.0 + inf);
        let mut a = [[0.0f64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] = self.get(i, j);
            }
        }
        for k in 0..3 {
            let mut d = a[k][k];
            for p in 0..k {
                d -= a[k][p] * a[k][p];
            }
            if d <= tol * tol {
                return false;
            }
            let l = d.sqrt();
            a[k][k] = l;
            for i in (k + 1)..3 {
                let mut s = a[i][k];
                for p in 0..k {
                    s -= a[i][p] * a[k][p];
                }
                a[i][k] = s / l;
            }
        }
        true
    }

    /// Smallest eigenvalue from a symmetric eigensolver.
    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// Eigenvalues in ascending order, by the trigonometric closed form for
    /// symmetric 3x3 matrices.
    pub fn eigenvalues(&self) -> [f64; 3] {
        let c = &self.0;
        let p1 = c[3] * c[3] + c[4] * c[4] + c[5] * c[5];
        if p1 == 0.0 {
            let mut v = [c[0], c[1], c[2]];
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            return v;
        }
        let q = self.trace() / 3.0;
        let p2 = (c[0] - q).powi(2) + (c[1] - q).powi(2) + (c[2] - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        let b = Sym3([
            (c[0] - q) / p,
            (c[1] - q) / p,
            (c[2] - q) / p,
            c[3] / p,
            c[4] / p,
            c[5] / p,
        ]);
        let r = (b.det() / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let hi = q + 2.0 * p * phi.cos();
        let lo = q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos();
        [lo, 3.0 * q - hi - lo, hi]
    }
}

/// Symmetric 4x4 matrix stored row-major upper triangle:
/// (00, 01, 02, 03, 11, 12, 13, 22, 23, 33).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Sym4(pub [f64; 10]);

/// Index into the upper-triangle storage of [`Sym4`].
pub const fn sym4_index(i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    match (a, b) {
        (0, 0) => 0,
        (0, 1) => 1,
        (0, 2) => 2,
        (0, 3) => 3,
        (1, 1) => 4,
        (1, 2) => 5,
        (1, 3) => 6,
        (2, 2) => 7,
        (2, 3) => 8,
        _ => 9,
    }
}

impl Sym4 {
    pub fn identity() -> Self {
        Sym4([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[sym4_index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.0[sym4_index(i, j)] = v;
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        Matrix4::from_fn(|i, j| self.get(i, j))
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        let mut c = [0.0; 10];
        for i in 0..4 {
            for j in i..4 {
                c[sym4_index(i, j)] = 0.5 * (m[(i, j)] + m[(j, i)]);
            }
        }
        Sym4(c)
    }

    pub fn det(&self) -> f64 {
        self.to_matrix().determinant()
    }

    /// Inverse of a positive-definite matrix; errors on failed Cholesky.
    pub fn inverse(&self) -> Result<Sym4> {
        let m = self.to_matrix();
        let chol = m.cholesky().ok_or(HsError::SingularBase)?;
        Ok(Sym4::from_matrix(&chol.inverse()))
    }

    pub fn is_positive_definite(&self) -> bool {
        self.to_matrix().cholesky().is_some()
    }

    pub fn scale(&self, s: f64) -> Sym4 {
        let mut c = self.0;
        for x in &mut c {
            *x *= s;
        }
        Sym4(c)
    }

    pub fn add(&self, o: &Sym4) -> Sym4 {
        let mut c = self.0;
        for (x, y) in c.iter_mut().zip(o.0.iter()) {
            *x += y;
        }
        Sym4(c)
    }
}

/// Positive multiple of e0123.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Volume4 {
    pub m: f64,
}

/// The pointwise state of a triple of 2-forms.
#[derive(Clone, Copy, Debug, Default)]
pub struct Triple2FormPoint {
    pub omega: [Form2; 3],
}

impl Triple2FormPoint {
    pub fn new(o1: Form2, o2: Form2, o3: Form2) -> Self {
        Triple2FormPoint { omega: [o1, o2, o3] }
    }

    /// The standard orthonormal hyperkahler triple.
    pub fn standard() -> Self {
        Triple2FormPoint::new(
            Form2([1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
            Form2([0.0, 1.0, 0.0, 0.0, 1.0, 0.0]),
            Form2([0.0, 0.0, 1.0, 0.0, 0.0, 1.0]),
        )
    }
}

/// The wedge Gram matrix Q(mu)_ij = (omega_i ∧ omega_j) / (2 mu).
pub fn wedge_gram(triple: &Triple2FormPoint, mu: &Volume4) -> Sym3 {
    debug_assert!(mu.m > 0.0);
    let o = &triple.omega;
    let inv = 0.5 / mu.m;
    Sym3([
        o[0].wedge(&o[0]) * inv,
        o[1].wedge(&o[1]) * inv,
        o[2].wedge(&o[2]) * inv,
        o[1].wedge(&o[2]) * inv,
        o[0].wedge(&o[2]) * inv,
        o[0].wedge(&o[1]) * inv,
    ])
}

/// Hypersymplectic test at a point: positive definiteness of the wedge Gram
/// matrix with respect to e0123, and the smallest eigenvalue as a margin.
pub fn is_hypersymplectic(triple: &Triple2FormPoint) -> (bool, f64) {
    let q0 = wedge_gram(triple, &Volume4 { m: 1.0 });
    let margin = q0.min_eigenvalue();
    (q0.cholesky_positive(1e-12), margin)
}

/// The unique volume form with det Q = 1 and the corresponding Q.
///
/// Since det Q(m mu) = det Q(mu) / m^3, the closed-form rescale by the cube
/// root of det Q(e0123) is exact.
pub fn normalize_volume(triple: &Triple2FormPoint) -> Result<(Volume4, Spd3)> {
    let q0 = wedge_gram(triple, &Volume4 { m: 1.0 });
    if !q0.cholesky_positive(1e-12) {
        let margin = q0.min_eigenvalue();
        return Err(HsError::NotHypersymplectic { index: 0, margin });
    }
    let m = q0.det().cbrt();
    Ok((Volume4 { m }, q0.scale(1.0 / m)))
}

/// Coefficient of e0123 in alpha ∧ beta ∧ w for 1-forms alpha, beta and a
/// 2-form w.
fn quad(alpha: &[f64; 4], beta: &[f64; 4], w: &Form2) -> f64 {
    let mut ab = [0.0; 6];
    for (c, &(a, b)) in FORM2_BASIS.iter().enumerate() {
        ab[c] = alpha[a] * beta[b] - alpha[b] * beta[a];
    }
    Form2(ab).wedge(w)
}

/// The induced Riemannian metric
/// g(u, v) = (1/6) eps^{ijk} (i_u w_i ∧ i_v w_j ∧ w_k) / mu.
pub fn metric_from_triple(triple: &Triple2FormPoint) -> Result<Sym4> {
    let (mu, _) = normalize_volume(triple)?;
    Ok(metric_from_triple_with_mu(triple, &mu))
}

/// [`metric_from_triple`] with the normalizing volume already in hand, so the
/// wedge Gram matrix is not recomputed.
pub fn metric_from_triple_with_mu(triple: &Triple2FormPoint, mu: &Volume4) -> Sym4 {
    let o = &triple.omega;
    // Precompute all interior products.
    let mut iota = [[[0.0f64; 4]; 4]; 3]; // [form][axis][component]
    for i in 0..3 {
        for a in 0..4 {
            iota[i][a] = o[i].contract(a);
        }
    }
    let mut g = [0.0f64; 10];
    for a in 0..4 {
        for b in a..4 {
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        let e = eps3(i, j, k);
                        if e != 0.0 {
                            s += e * quad(&iota[i][a], &iota[j][b], &o[k]);
                        }
                    }
                }
            }
            g[sym4_index(a, b)] = s / (6.0 * mu.m);
        }
    }
    Sym4(g)
}

/// Inverse, sqrt(det) and det of a metric, bundled for pointwise kernels.
#[derive(Clone, Copy, Debug)]
pub struct MetricData {
    pub g: Sym4,
    pub ginv: Sym4,
    pub sqrt_det: f64,
}

impl MetricData {
    pub fn new(g: Sym4) -> Result<MetricData> {
        // Cholesky g = L L^T on the raw components; any non-positive pivot
        // means g is not positive definite.
        let mut l = [[0.0f64; 4]; 4];
        for i in 0..4 {
            for j in 0..=i {
                let mut s = g.get(i, j);
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(HsError::DegenerateMetric { index: 0 });
                    }
                    l[i][i] = s.sqrt();
                } else {
                    l[i][j] = s / l[j][j];
                }
            }
        }
        let sqrt_det = l[0][0] * l[1][1] * l[2][2] * l[3][3];
        // Invert L by forward substitution; then g^-1 = L^-T L^-1.
        let mut linv = [[0.0f64; 4]; 4];
        for i in 0..4 {
            linv[i][i] = 1.0 / l[i][i];
            for j in 0..i {
                let mut s = 0.0;
                for k in j..i {
                    s += l[i][k] * linv[k][j];
                }
                linv[i][j] = -s / l[i][i];
            }
        }
        let mut ginv = [0.0f64; 10];
        for i in 0..4 {
            for j in i..4 {
                let mut s = 0.0;
                for k in j..4 {
                    s += linv[k][i] * linv[k][j];
                }
                ginv[sym4_index(i, j)] = s;
            }
        }
        Ok(MetricData {
            g,
            ginv: Sym4(ginv),
            sqrt_det,
        })
    }
}

/// Hodge star on 2-forms for the metric g and orientation e0123.
///
/// Computed via the permutation-symbol identity
/// `(*w)_{cd} = (1/2) sqrt(g) eps_{abcd} w^{ab}
///            = g_{ce} g_{df} m^{ef} / sqrt(g)` with
/// `m^{ef} = (1/2) eps^{efab} w_{ab}`, which in the fixed component basis is
/// just the swap of the two index-pair triples.
pub fn hodge_star_2(g: &MetricData, w: &Form2) -> Form2 {
    let m = Form2([w.0[3], w.0[4], w.0[5], w.0[0], w.0[1], w.0[2]]).as_antisym();
    let mut out = [0.0f64; 6];
    for (ci, &(c, d)) in FORM2_BASIS.iter().enumerate() {
        let mut s = 0.0;
        for e in 0..4 {
            for f in 0..4 {
                s += g.g.get(c, e) * g.g.get(d, f) * m[e][f];
            }
        }
        out[ci] = s / g.sqrt_det;
    }
    Form2(out)
}

/// Reference implementation of [`hodge_star_2`] by raising both indices;
/// kept as an oracle for the fast path.
#[cfg(test)]
pub(crate) fn hodge_star_2_reference(g: &MetricData, w: &Form2) -> Form2 {
    let wm = w.as_antisym();
    // Raise both indices.
    let mut up = [[0.0f64; 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            let mut s = 0.0;
            for c in 0..4 {
                for d in 0..4 {
                    s += g.ginv.get(a, c) * g.ginv.get(b, d) * wm[c][d];
                }
            }
            up[a][b] = s;
        }
    }
    let mut out = [0.0f64; 6];
    for (ci, &(c, d)) in FORM2_BASIS.iter().enumerate() {
        let mut s = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                let e = eps4(a, b, c, d);
                if e != 0.0 {
                    s += e * up[a][b];
                }
            }
        }
        out[ci] = 0.5 * g.sqrt_det * s;
    }
    Form2(out)
}

/// Pointwise inner product of 2-forms: <u, v>_g = (1/2) u_ab v^ab.
pub fn inner_2form(g: &MetricData, u: &Form2, v: &Form2) -> f64 {
    let um = u.as_antisym();
    let vm = v.as_antisym();
    let mut s = 0.0;
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    s += g.ginv.get(a, c) * g.ginv.get(b, d) * um[a][b] * vm[c][d];
                }
            }
        }
    }
    0.5 * s
}

/// Pointwise inner product of 1-forms.
pub fn inner_1form(g: &MetricData, u: &[f64; 4], v: &[f64; 4]) -> f64 {
    let mut s = 0.0;
    for a in 0..4 {
        for b in 0..4 {
            s += g.ginv.get(a, b) * u[a] * v[b];
        }
    }
    s
}

/// Block-diagonal 7x7 matrix [g, Q], reported for the 7D volume density.
pub fn seven_metric(g: &Sym4, q: &Spd3) -> SMatrix<f64, 7, 7> {
    let mut m = SMatrix::<f64, 7, 7>::zeros();
    for i in 0..4 {
        for j in 0..4 {
            m[(i, j)] = g.get(i, j);
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            m[(4 + i, 4 + j)] = q.get(i, j);
        }
    }
    m
}
