//! Riemannian curvature of the evolving 4-metric by 4th-order finite
//! differences: Christoffel symbols, the Riemann tensor in the 2-form pair
//! basis, Ricci, scalar curvature, and the monitored norms.
//!
//! Curvature always differentiates with FD stencils, even on spectral grids:
//! the metric components are not band-limited after nonlinear assembly.

use crate::algebra::{sym4_index, Sym4, FORM2_BASIS};
use crate::error::Result;
use crate::fields::{deriv, form2_component, integrate_scalar, reduce_max, Backend, Grid4, MetricField};
use crate::spd::{trace4, Christoffel4};

/// Symmetric 6x6 upper-triangle index for the pair-basis Riemann tensor.
pub const fn rm_index(a: usize, b: usize) -> usize {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    a * 6 - a * (a + 1) / 2 + b
}

/// Curvature data of a metric field.
#[derive(Clone, Debug)]
pub struct CurvatureBundle {
    pub grid: Grid4,
    /// Christoffel symbols Gamma^c_{ab}, indexed [c][a][b], per point.
    pub christoffel: Vec<Christoffel4>,
    /// Lowered Riemann tensor in the pair basis: R_{AB} with A, B indexing
    /// [`FORM2_BASIS`], upper-triangle storage via [`rm_index`] (21 per point).
    pub riemann: Vec<[f64; 21]>,
    /// Ricci tensor (contraction of first and third indices).
    pub ricci: Vec<Sym4>,
    /// Scalar curvature.
    pub scalar: Vec<f64>,
}

impl CurvatureBundle {
    /// Full lowered Riemann component from the pair-basis storage.
    pub fn riemann_full(&self, idx: usize, a: usize, b: usize, c: usize, d: usize) -> f64 {
        if a == b || c == d {
            return 0.0;
        }
        let (ca, sa) = form2_component(a, b);
        let (cb, sb) = form2_component(c, d);
        sa * sb * self.riemann[idx][rm_index(ca, cb)]
    }
}

/// The same grid with the FD backend forced (curvature never differentiates
/// spectrally).
fn fd_grid(grid: &Grid4) -> Grid4 {
    let mut g = *grid;
    g.backend = Backend::Fd4;
    g
}

/// Compute Christoffels, Riemann, Ricci and scalar curvature of a metric
/// field by centered 4th-order finite differences of the metric components.
pub fn curvature_of(g: &MetricField) -> Result<CurvatureBundle> {
    let grid = fd_grid(&g.grid);
    let npts = grid.num_points();

    // First derivatives of the 10 metric components along the 4 axes.
    let mut dg: Vec<[Vec<f64>; 4]> = Vec::with_capacity(10);
    for c in 0..10 {
        let comp: Vec<f64> = g.data.iter().map(|m| m.g.0[c]).collect();
        dg.push(std::array::from_fn(|a| deriv(&grid, &comp, a)));
    }
    // Second derivatives d_a d_b of each component, upper triangle in (a, b).
    let mut d2g: Vec<[Vec<f64>; 10]> = Vec::with_capacity(10);
    for c in 0..10 {
        d2g.push(std::array::from_fn(|p| {
            // Invert sym4_index: find (a, b) with a <= b mapping to p.
            let (a, b) = SYM4_PAIRS[p];
            deriv(&grid, &dg[c][a], b)
        }));
    }

    let mut christoffel = Vec::with_capacity(npts);
    let mut riemann = Vec::with_capacity(npts);
    let mut ricci = Vec::with_capacity(npts);
    let mut scalar = Vec::with_capacity(npts);

    for idx in 0..npts {
        let md = &g.data[idx];
        let dg_at = |i: usize, j: usize, axis: usize| dg[sym4_index(i, j)][axis][idx];
        let d2g_at =
            |i: usize, j: usize, a: usize, b: usize| d2g[sym4_index(i, j)][sym4_index(a, b)][idx];

        // Gamma^c_{ab} = (1/2) g^{cd} (d_a g_{db} + d_b g_{da} - d_d g_{ab}).
        let mut gam: Christoffel4 = [[[0.0; 4]; 4]; 4];
        for c in 0..4 {
            for a in 0..4 {
                for b in a..4 {
                    let mut s = 0.0;
                    for d in 0..4 {
                        s += md.ginv.get(c, d)
                            * (dg_at(d, b, a) + dg_at(d, a, b) - dg_at(a, b, d));
                    }
                    gam[c][a][b] = 0.5 * s;
                    gam[c][b][a] = 0.5 * s;
                }
            }
        }

        // Lowered Riemann in the pair basis:
        // R_{abcd} = (1/2)(g_{ad,bc} + g_{bc,ad} - g_{ac,bd} - g_{bd,ac})
        //          + g_{ef} (Gamma^e_{bc} Gamma^f_{ad} - Gamma^e_{bd} Gamma^f_{ac}).
        let mut rm = [0.0f64; 21];
        for (ia, &(a, b)) in FORM2_BASIS.iter().enumerate() {
            for (ib, &(c, d)) in FORM2_BASIS.iter().enumerate() {
                if ib < ia {
                    continue;
                }
                let mut r = 0.5
                    * (d2g_at(a, d, b, c) + d2g_at(b, c, a, d)
                        - d2g_at(a, c, b, d)
                        - d2g_at(b, d, a, c));
                for e in 0..4 {
                    for f in 0..4 {
                        let gef = md.g.get(e, f);
                        if gef == 0.0 {
                            continue;
                        }
                        r += gef * (gam[e][b][c] * gam[f][a][d] - gam[e][b][d] * gam[f][a][c]);
                    }
                }
                rm[rm_index(ia, ib)] = r;
            }
        }

        // Ricci: R_{bd} = g^{ac} R_{abcd}.
        let full = |a: usize, b: usize, c: usize, d: usize| -> f64 {
            if a == b || c == d {
                return 0.0;
            }
            let (ca, sa) = form2_component(a, b);
            let (cb, sb) = form2_component(c, d);
            sa * sb * rm[rm_index(ca, cb)]
        };
        let mut ric = Sym4([0.0; 10]);
        for b in 0..4 {
            for d in b..4 {
                let mut s = 0.0;
                for a in 0..4 {
                    for c in 0..4 {
                        let gac = md.ginv.get(a, c);
                        if gac != 0.0 {
                            s += gac * full(a, b, c, d);
                        }
                    }
                }
                ric.set(b, d, s);
            }
        }
        let r = trace4(&ric, &md.ginv);

        christoffel.push(gam);
        riemann.push(rm);
        ricci.push(ric);
        scalar.push(r);
    }

    Ok(CurvatureBundle {
        grid,
        christoffel,
        riemann,
        ricci,
        scalar,
    })
}

/// (a, b) with a <= b for each upper-triangle slot of [`sym4_index`].
pub const SYM4_PAIRS: [(usize, usize); 10] = [
    (0, 0),
    (0, 1),
    (0, 2),
    (0, 3),
    (1, 1),
    (1, 2),
    (1, 3),
    (2, 2),
    (2, 3),
    (3, 3),
];

/// Pointwise |Rm|^2 = R_{abcd} R^{abcd} via the pair basis: with
/// P_{AB} = g^{aa'} g^{bb'} - g^{ab'} g^{a'b} at basis index pairs,
/// |Rm|^2 = 4 tr(R P R P).
pub fn rm_norm_sq_point(rm: &[f64; 21], ginv: &Sym4) -> f64 {
    let mut p = [[0.0f64; 6]; 6];
    for (ia, &(a, b)) in FORM2_BASIS.iter().enumerate() {
        for (ib, &(c, d)) in FORM2_BASIS.iter().enumerate() {
            p[ia][ib] = ginv.get(a, c) * ginv.get(b, d) - ginv.get(a, d) * ginv.get(b, c);
        }
    }
    let r = |a: usize, b: usize| rm[rm_index(a, b)];
    let mut s = 0.0;
    for ia in 0..6 {
        for ib in 0..6 {
            for ic in 0..6 {
                for id in 0..6 {
                    s += r(ia, ib) * r(ic, id) * p[ia][ic] * p[ib][id];
                }
            }
        }
    }
    4.0 * s
}

/// Pointwise |Ric|^2 = Ric_{ab} Ric^{ab}.
pub fn ric_norm_sq_point(ric: &Sym4, ginv: &Sym4) -> f64 {
    let m = ric.to_matrix();
    let gi = ginv.to_matrix();
    (gi * m * gi * m).trace()
}

/// Monitored curvature norms: (sup |Rm|, int |Rm|^2 dmu, sup |Ric|,
/// int |Ric|^4 dmu). `mu` holds the volume-form coefficient per point.
pub fn curvature_norms(
    bundle: &CurvatureBundle,
    g: &MetricField,
    mu: &[f64],
) -> (f64, f64, f64, f64) {
    let npts = bundle.grid.num_points();
    let mut rm2 = vec![0.0; npts];
    let mut ric2 = vec![0.0; npts];
    for idx in 0..npts {
        rm2[idx] = rm_norm_sq_point(&bundle.riemann[idx], &g.data[idx].ginv);
        ric2[idx] = ric_norm_sq_point(&bundle.ricci[idx], &g.data[idx].ginv);
    }
    let sup_rm = reduce_max(&rm2).max(0.0).sqrt();
    let sup_ric = reduce_max(&ric2).max(0.0).sqrt();
    let rm2_mu: Vec<f64> = rm2.iter().zip(mu.iter()).map(|(r, m)| r * m).collect();
    let ric4_mu: Vec<f64> = ric2.iter().zip(mu.iter()).map(|(r, m)| r * r * m).collect();
    (
        sup_rm,
        integrate_scalar(&bundle.grid, &rm2_mu),
        sup_ric,
        integrate_scalar(&bundle.grid, &ric4_mu),
    )
}

/// Max first-Bianchi residual sup |R_{a[bcd]}| over the grid.
pub fn bianchi_residual(bundle: &CurvatureBundle) -> f64 {
    let mut worst: f64 = 0.0;
    for idx in 0..bundle.grid.num_points() {
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    for d in 0..4 {
                        let r = bundle.riemann_full(idx, a, b, c, d)
                            + bundle.riemann_full(idx, a, c, d, b)
                            + bundle.riemann_full(idx, a, d, b, c);
                        worst = worst.max(r.abs());
                    }
                }
            }
        }
    }
    worst
}
