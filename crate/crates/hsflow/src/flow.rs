//! The hypersymplectic flow integrator: torsion, the flow right-hand side
//! d(Q d*(Q^-1 w)), RK4 time stepping, and the induced Q- and g-evolution
//! right-hand sides used for cross-validation.
//!
//! The evolved unknown is always the triple of 2-forms; Q, mu and g are
//! caches recomputed from the forms after every substep, so the state stays
//! on the constraint manifold (closed forms, det Q = 1) by construction.

use crate::algebra::{
    inner_1form, metric_from_triple_with_mu, sym4_index, wedge_gram, Form2, Spd3, Sym3, Sym4,
    Triple2FormPoint, Volume4,
};
use crate::curvature::CurvatureBundle;
use crate::error::{HsError, Result};
use crate::fields::{
    codifferential_2, deriv, ext_d, reduce_max, Backend, FormField, Grid4, MetricField,
};
use crate::spd::{dq_outer, harmonic_laplacian, Christoffel4, QJet};

/// The three torsion 1-forms tau_i = Q_ik d*(Q^{kl} w_l).
#[derive(Clone, Debug)]
pub struct OneFormTriple {
    pub tau: [FormField; 3],
}

impl OneFormTriple {
    pub fn at(&self, idx: usize) -> [[f64; 4]; 3] {
        std::array::from_fn(|i| self.tau[i].one_form_at(idx))
    }

    pub fn max_abs(&self) -> f64 {
        self.tau.iter().map(|t| t.max_abs()).fold(0.0, f64::max)
    }
}

/// Time-step control for [`step`].
#[derive(Clone, Copy, Debug)]
pub struct StepControl {
    pub dt: f64,
}

/// Default CFL safety factor for [`suggest_dt`].
pub const DEFAULT_SAFETY: f64 = 0.2;

/// A flow state: time, the evolved triple, and caches derived from it.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub t: f64,
    pub grid: Grid4,
    pub omega: [FormField; 3],
    /// Normalized wedge Gram matrix per point (det Q = 1).
    pub q: Vec<Spd3>,
    pub qinv: Vec<Spd3>,
    /// Volume-form coefficient per point.
    pub mu: Vec<f64>,
    pub metric: MetricField,
    /// Current minimum hypersymplectic margin over the grid.
    pub margin: f64,
    /// Margin at construction time of the run's initial state.
    pub initial_margin: f64,
}

impl FlowState {
    /// Build a state from a triple of sampled 2-forms, computing all caches.
    pub fn new(t: f64, omega: [FormField; 3]) -> Result<FlowState> {
        let grid = omega[0].grid;
        let npts = grid.num_points();
        let mut q = Vec::with_capacity(npts);
        let mut qinv = Vec::with_capacity(npts);
        let mut mu = Vec::with_capacity(npts);
        let mut gs = Vec::with_capacity(npts);
        let mut margin = f64::INFINITY;
        for idx in 0..npts {
            let triple = Triple2FormPoint::new(
                omega[0].two_form_at(idx),
                omega[1].two_form_at(idx),
                omega[2].two_form_at(idx),
            );
            // One wedge Gram evaluation feeds the margin, the volume
            // normalization and the induced metric.
            let q0 = wedge_gram(&triple, &Volume4 { m: 1.0 });
            let m = q0.min_eigenvalue();
            if !q0.cholesky_positive(1e-12) {
                return Err(HsError::NotHypersymplectic {
                    index: idx,
                    margin: m,
                });
            }
            margin = margin.min(m);
            let vol = Volume4 {
                m: q0.det().cbrt(),
            };
            let qn = q0.scale(1.0 / vol.m);
            mu.push(vol.m);
            qinv.push(qn.inverse()?);
            q.push(qn);
            gs.push(metric_from_triple_with_mu(&triple, &vol));
        }
        let metric = MetricField::from_metrics(grid, gs)?;
        Ok(FlowState {
            t,
            grid,
            omega,
            q,
            qinv,
            mu,
            metric,
            margin,
            initial_margin: margin,
        })
    }

    fn with_initial_margin(mut self, m0: f64) -> FlowState {
        self.initial_margin = m0;
        self
    }

    /// Pointwise 2-jets of Q, always by FD4 stencils (Q is not band-limited).
    pub fn q_jets(&self, with_second: bool) -> Vec<QJet> {
        let mut grid = self.grid;
        if grid.periodic {
            grid.backend = Backend::Fd4;
        }
        let npts = grid.num_points();
        let comps: Vec<Vec<f64>> = (0..6)
            .map(|c| self.q.iter().map(|m| m.0[c]).collect())
            .collect();
        let dq: Vec<[Vec<f64>; 4]> = comps
            .iter()
            .map(|comp| std::array::from_fn(|a| deriv(&grid, comp, a)))
            .collect();
        let d2q: Vec<[Vec<f64>; 10]> = if with_second {
            dq.iter()
                .map(|d| {
                    std::array::from_fn(|p| {
                        let (a, b) = crate::curvature::SYM4_PAIRS[p];
                        deriv(&grid, &d[a], b)
                    })
                })
                .collect()
        } else {
            Vec::new()
        };
        (0..npts)
            .map(|idx| QJet {
                q: self.q[idx],
                dq: std::array::from_fn(|a| Sym3(std::array::from_fn(|c| dq[c][a][idx]))),
                d2q: if with_second {
                    std::array::from_fn(|p| Sym3(std::array::from_fn(|c| d2q[c][p][idx])))
                } else {
                    [Sym3::zero(); 10]
                },
                ginv: self.metric.data[idx].ginv,
            })
            .collect()
    }
}

/// tau_i = Q_ik d*(Q^{kl} w_l) with d* the codifferential of the induced
/// metric.
pub fn compute_torsion(state: &FlowState) -> OneFormTriple {
    let grid = state.grid;
    let npts = grid.num_points();
    // s_k = Q^{kl} w_l, pointwise.
    let mut s: [FormField; 3] = std::array::from_fn(|_| FormField::zero(grid, 2));
    for idx in 0..npts {
        let w: [Form2; 3] = std::array::from_fn(|l| state.omega[l].two_form_at(idx));
        for k in 0..3 {
            let mut acc = Form2::zero();
            for l in 0..3 {
                acc = acc.add(&w[l].scale(state.qinv[idx].get(k, l)));
            }
            s[k].set_two_form(idx, &acc);
        }
    }
    let ds: [FormField; 3] = std::array::from_fn(|k| codifferential_2(&state.metric, &s[k]));
    let mut tau: [FormField; 3] = std::array::from_fn(|_| FormField::zero(grid, 1));
    for idx in 0..npts {
        let d: [[f64; 4]; 3] = std::array::from_fn(|k| ds[k].one_form_at(idx));
        for i in 0..3 {
            for c in 0..4 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += state.q[idx].get(i, k) * d[k][c];
                }
                tau[i].comps[c][idx] = acc;
            }
        }
    }
    OneFormTriple { tau }
}

/// The flow right-hand side dw_i/dt = d tau_i; exact 2-forms, so every
/// cohomology pairing of the output vanishes.
pub fn time_derivative(state: &FlowState) -> [FormField; 3] {
    let tau = compute_torsion(state);
    std::array::from_fn(|i| ext_d(&tau.tau[i]))
}

/// The 3x3 matrix of pointwise inner products <tau_i, tau_j>_g.
pub fn torsion_gram(state: &FlowState, tau: &OneFormTriple, idx: usize) -> Sym3 {
    let md = &state.metric.data[idx];
    let t = tau.at(idx);
    let mut m = [0.0f64; 6];
    m[0] = inner_1form(md, &t[0], &t[0]);
    m[1] = inner_1form(md, &t[1], &t[1]);
    m[2] = inner_1form(md, &t[2], &t[2]);
    m[3] = inner_1form(md, &t[1], &t[2]);
    m[4] = inner_1form(md, &t[0], &t[2]);
    m[5] = inner_1form(md, &t[0], &t[1]);
    Sym3(m)
}

/// Pointwise |T|^2 = tr(Q^-1 <tau, tau>).
pub fn torsion_norm_sq(state: &FlowState) -> Vec<f64> {
    let tau = compute_torsion(state);
    torsion_norm_sq_with(state, &tau)
}

/// Same as [`torsion_norm_sq`] with the torsion already computed.
pub fn torsion_norm_sq_with(state: &FlowState, tau: &OneFormTriple) -> Vec<f64> {
    (0..state.grid.num_points())
        .map(|idx| {
            let gram = torsion_gram(state, tau, idx);
            (state.qinv[idx].to_matrix() * gram.to_matrix()).trace()
        })
        .collect()
}

/// CFL time step: dt such that dt * sup(|T|^2 + |dQ|^2_Q + h^-2 tr Q) equals
/// the safety factor.
pub fn suggest_dt(state: &FlowState, safety: f64) -> Result<f64> {
    let t2 = torsion_norm_sq(state);
    let jets = state.q_jets(false);
    let h = state.grid.spacing(0);
    let mut speeds = Vec::with_capacity(t2.len());
    for (idx, jet) in jets.iter().enumerate() {
        let dq2 = crate::spd::dq_norm_sq(jet)?;
        speeds.push(t2[idx] + dq2 + state.q[idx].trace() / (h * h));
    }
    Ok(safety / reduce_max(&speeds))
}

/// One classical RK4 step. Caches are rebuilt from the forms at every stage;
/// a stage or result leaving the hypersymplectic region (margin below 1e-6 of
/// the run's initial margin) aborts with `StabilityLoss`.
pub fn step(state: &FlowState, ctl: StepControl) -> Result<FlowState> {
    let dt = ctl.dt;
    let m0 = state.initial_margin;
    let stage = |t: f64, base: &[FormField; 3], a: f64, k: &[FormField; 3]| -> Result<FlowState> {
        let mut omega = base.clone();
        for i in 0..3 {
            omega[i].axpy(a, &k[i]);
        }
        match FlowState::new(t, omega) {
            Ok(s) => Ok(s.with_initial_margin(m0)),
            Err(HsError::NotHypersymplectic { margin, .. }) => {
                Err(HsError::StabilityLoss { t, margin })
            }
            Err(e) => Err(e),
        }
    };

    let k1 = time_derivative(state);
    let s2 = stage(state.t + 0.5 * dt, &state.omega, 0.5 * dt, &k1)?;
    let k2 = time_derivative(&s2);
    let s3 = stage(state.t + 0.5 * dt, &state.omega, 0.5 * dt, &k2)?;
    let k3 = time_derivative(&s3);
    let s4 = stage(state.t + dt, &state.omega, dt, &k3)?;
    let k4 = time_derivative(&s4);

    let mut omega = state.omega.clone();
    for i in 0..3 {
        omega[i].axpy(dt / 6.0, &k1[i]);
        omega[i].axpy(dt / 3.0, &k2[i]);
        omega[i].axpy(dt / 3.0, &k3[i]);
        omega[i].axpy(dt / 6.0, &k4[i]);
    }
    let next = stage(state.t + dt, &omega, 0.0, &k1)?;
    if next.margin <= 1e-6 * m0 {
        return Err(HsError::StabilityLoss {
            t: next.t,
            margin: next.margin,
        });
    }
    Ok(next)
}

/// Right-hand side of the induced Q-evolution,
/// dQ/dt = Dhat Q + <tau, tau> - (1/3) tr(Q^-1 <tau, tau>) Q,
/// assembled with the supplied base Christoffels.
pub fn q_evolution_rhs(state: &FlowState, christoffel: &[Christoffel4]) -> Result<Vec<Sym3>> {
    let jets = state.q_jets(true);
    let tau = compute_torsion(state);
    let mut out = Vec::with_capacity(jets.len());
    for (idx, jet) in jets.iter().enumerate() {
        let lap = harmonic_laplacian(jet, &christoffel[idx])?;
        let gram = torsion_gram(state, &tau, idx);
        let t2 = (state.qinv[idx].to_matrix() * gram.to_matrix()).trace();
        let rhs = lap.add(&gram).add(&state.q[idx].scale(-t2 / 3.0));
        out.push(rhs);
    }
    Ok(out)
}

/// Right-hand side of the induced metric evolution,
/// dg/dt = -2 Ric + (1/2)<dQ (x) dQ>_Q + tr(Q^-1 tau (x) tau)
///         - (1/3) |T|^2 g,
/// where |T|^2 = tr(Q^-1 <tau, tau>) is the trace-normalized torsion norm
/// used throughout this crate.
pub fn metric_evolution_rhs(state: &FlowState, bundle: &CurvatureBundle) -> Result<Vec<Sym4>> {
    let jets = state.q_jets(false);
    let tau = compute_torsion(state);
    let npts = state.grid.num_points();
    let mut out = Vec::with_capacity(npts);
    for idx in 0..npts {
        let gram = torsion_gram(state, &tau, idx);
        let t2 = (state.qinv[idx].to_matrix() * gram.to_matrix()).trace();
        let dqdq = dq_outer(&jets[idx])?;
        // tr(Q^-1 tau (x) tau): the 2-tensor Q^{ij} tau_i (x) tau_j.
        let t = tau.at(idx);
        let mut tt = [0.0f64; 10];
        for a in 0..4 {
            for b in a..4 {
                let mut s = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        s += state.qinv[idx].get(i, j) * 0.5 * (t[i][a] * t[j][b] + t[i][b] * t[j][a]);
                    }
                }
                tt[sym4_index(a, b)] = s;
            }
        }
        let g = state.metric.data[idx].g;
        let rhs = bundle.ricci[idx]
            .scale(-2.0)
            .add(&dqdq.scale(0.5))
            .add(&Sym4(tt))
            .add(&g.scale(-t2 / 3.0));
        out.push(rhs);
    }
    Ok(out)
}

/// sup-norm helpers over Sym3 fields (used by the cross-validation tests).
pub fn max_sym3_diff(a: &[Sym3], b: &[Sym3]) -> f64 {
    a.iter()
        .zip(b.iter())
        .flat_map(|(x, y)| x.0.iter().zip(y.0.iter()))
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

pub fn max_sym4_diff(a: &[Sym4], b: &[Sym4]) -> f64 {
    a.iter()
        .zip(b.iter())
        .flat_map(|(x, y)| x.0.iter().zip(y.0.iter()))
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// The standard flat hyperkahler triple sampled on a grid.
pub fn flat_triple(grid: Grid4) -> [FormField; 3] {
    let base = Triple2FormPoint::standard();
    std::array::from_fn(|i| FormField::from_fn(grid, 2, |_| base.omega[i].0.to_vec()))
}

/// |dQ|^2_Q per point.
pub fn dq_norm_sq_field(state: &FlowState) -> Result<Vec<f64>> {
    let jets = state.q_jets(false);
    jets.iter().map(crate::spd::dq_norm_sq).collect()
}

/// Pointwise trace-free part check helper: tr(Q^-1 (<tau,tau> - (1/3)|T|^2 Q)).
pub fn torsion_tracefree_residual(state: &FlowState) -> Vec<f64> {
    let tau = compute_torsion(state);
    (0..state.grid.num_points())
        .map(|idx| {
            let gram = torsion_gram(state, &tau, idx);
            let qinv = state.qinv[idx].to_matrix();
            let t2 = (qinv * gram.to_matrix()).trace();
            let dev = gram.add(&state.q[idx].scale(-t2 / 3.0));
            (qinv * dev.to_matrix()).trace()
        })
        .collect()
}
