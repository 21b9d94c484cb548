//! Per-slice diagnostics for flow states: conserved quantities, monotone
//! quantities, inequality residuals, and run-level monitors (extension
//! integral, gap curve, trend tests).
//!
//! Every inequality here is exact for the continuous flow; discretization
//! noise is budgeted explicitly through tolerances of the form
//! `c1 * dt^2 + c2 * h^4`.

use serde::{Deserialize, Serialize};

use crate::algebra::{hodge_star_2, Sym3};
use crate::curvature::{curvature_norms, CurvatureBundle};
use crate::error::{HsError, Result};
use crate::fields::{
    cohomology_pairings, integrate_scalar, reduce_max, reduce_min, scalar_laplacian, Backend,
    Grid4, MetricField,
};
use crate::flow::{compute_torsion, torsion_gram, FlowState};
use crate::spd::{
    dq_norm_sq, harmonic_laplacian, hessian_hat, hessian_hat_norm_sq, p_inner_with_inv,
    pullback_connection, QJet,
};

/// The maximum-principle trace threshold 2^{5/3}.
pub const TRACE_THRESHOLD: f64 = 3.174_802_103_936_399;

/// One time slice of diagnostics. Field names are frozen: they are the NDJSON
/// keys and (flattened) the CSV columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub sup_tr_q: f64,
    pub inf_tr_q: f64,
    pub sup_dq_norm_sq: f64,
    pub sup_torsion_sq: f64,
    pub int_torsion_sq_mu: f64,
    pub int_torsion_4_mu: f64,
    pub volume: f64,
    /// (1/6) int (w1^2 + w2^2 + w3^2), a cohomological constant of the run.
    pub volume_bound_rhs: f64,
    /// Pairings of each of the three 2-forms with the six coordinate 2-tori.
    pub cohomology: [[f64; 6]; 3],
    /// sup(1 - lambda_min(Q)): proxy for the delta(eps) eigenvalue deviation.
    pub sup_one_minus_lambda_min: f64,
    /// sup(lambda_max(Q) - 1).
    pub sup_lambda_max_minus_one: f64,
    /// sup(tr Q + |dQ|^2_Q), the quantity driving the C0 criterion.
    pub sup_tr_q_plus_dq_norm_sq: f64,
    pub heat_tr_residual_min: f64,
    pub heat_tr_residual_max: f64,
    pub bochner_residual_min: f64,
    pub sup_rm: f64,
    pub int_rm_sq_mu: f64,
    pub max_det_q_drift: f64,
    pub self_duality_residual: f64,
    pub hypersymplectic_margin: f64,
}

impl DiagnosticsRecord {
    /// Frozen CSV header matching [`DiagnosticsRecord::to_csv_row`].
    pub const CSV_HEADER: &'static str = "t,sup_tr_q,inf_tr_q,sup_dq_norm_sq,sup_torsion_sq,\
int_torsion_sq_mu,int_torsion_4_mu,volume,volume_bound_rhs,\
coh1_01,coh1_02,coh1_03,coh1_23,coh1_31,coh1_12,\
coh2_01,coh2_02,coh2_03,coh2_23,coh2_31,coh2_12,\
coh3_01,coh3_02,coh3_03,coh3_23,coh3_31,coh3_12,\
sup_one_minus_lambda_min,sup_lambda_max_minus_one,sup_tr_q_plus_dq_norm_sq,\
heat_tr_residual_min,heat_tr_residual_max,bochner_residual_min,\
sup_rm,int_rm_sq_mu,max_det_q_drift,self_duality_residual,hypersymplectic_margin";

    pub fn to_ndjson(&self) -> String {
        serde_json::to_string(self).expect("diagnostics record serializes")
    }

    pub fn from_ndjson(line: &str) -> Result<DiagnosticsRecord> {
        serde_json::from_str(line)
            .map_err(|e| HsError::Checkpoint(format!("bad diagnostics line: {e}")))
    }

    pub fn to_csv_row(&self) -> String {
        let mut cols: Vec<String> = vec![
            self.t.to_string(),
            self.sup_tr_q.to_string(),
            self.inf_tr_q.to_string(),
            self.sup_dq_norm_sq.to_string(),
            self.sup_torsion_sq.to_string(),
            self.int_torsion_sq_mu.to_string(),
            self.int_torsion_4_mu.to_string(),
            self.volume.to_string(),
            self.volume_bound_rhs.to_string(),
        ];
        for i in 0..3 {
            for c in 0..6 {
                cols.push(self.cohomology[i][c].to_string());
            }
        }
        cols.extend([
            self.sup_one_minus_lambda_min.to_string(),
            self.sup_lambda_max_minus_one.to_string(),
            self.sup_tr_q_plus_dq_norm_sq.to_string(),
            self.heat_tr_residual_min.to_string(),
            self.heat_tr_residual_max.to_string(),
            self.bochner_residual_min.to_string(),
            self.sup_rm.to_string(),
            self.int_rm_sq_mu.to_string(),
            self.max_det_q_drift.to_string(),
            self.self_duality_residual.to_string(),
            self.hypersymplectic_margin.to_string(),
        ]);
        cols.join(",")
    }
}

fn fd_grid(grid: &Grid4) -> Grid4 {
    let mut g = *grid;
    if g.periodic {
        g.backend = Backend::Fd4;
    }
    g
}

/// The single-state heat-trace residual
/// `(5/3)|T|^2 tr Q - (d_t - Delta) tr Q`, with the time derivative taken
/// from the Q-evolution equation, which reduces pointwise to
/// `(d_t - Delta) tr Q = -g^{ab} tr(d_a Q Q^-1 d_b Q) + tr<tau,tau>
///  - (1/3)|T|^2 tr Q`.
pub fn heat_tr_residual_analytic(state: &FlowState) -> Result<Vec<f64>> {
    let jets = state.q_jets(false);
    let tau = compute_torsion(state);
    let npts = state.grid.num_points();
    let mut out = vec![0.0; npts];
    for idx in 0..npts {
        let qinv = state.qinv[idx].to_matrix();
        let gram = torsion_gram(state, &tau, idx);
        let t2 = (qinv * gram.to_matrix()).trace();
        let tr_gram = gram.trace();
        let trq = state.q[idx].trace();
        let jet = &jets[idx];
        let mut w = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                let gab = jet.ginv.get(a, b);
                if gab != 0.0 {
                    w += gab * (jet.dq[a].to_matrix() * qinv * jet.dq[b].to_matrix()).trace();
                }
            }
        }
        // residual = (5/3) t2 trq - (-w + tr_gram - t2 trq / 3)
        out[idx] = 2.0 * t2 * trq + w - tr_gram;
    }
    Ok(out)
}

/// Pair-of-states heat-trace residual. Uses a centered-in-time difference for
/// `d_t tr Q` and averages the spatial terms of the two slices, so the time
/// discretization error is O(dt^2) at the midpoint.
pub fn heat_tr_residual(prev: &FlowState, next: &FlowState) -> Result<Vec<f64>> {
    let dt = next.t - prev.t;
    if dt <= 0.0 {
        return Err(HsError::OutOfOrder);
    }
    let npts = prev.grid.num_points();
    let grid = fd_grid(&prev.grid);
    let mut out = vec![0.0; npts];
    let mut rhs_sum = vec![0.0; npts];
    let mut lap_sum = vec![0.0; npts];
    let mut tr_prev = vec![0.0; npts];
    let mut tr_next = vec![0.0; npts];
    for (state, trs) in [(prev, &mut tr_prev), (next, &mut tr_next)] {
        for idx in 0..npts {
            trs[idx] = state.q[idx].trace();
        }
        let lap = scalar_laplacian(&grid, &state.metric, trs);
        let tau = compute_torsion(state);
        for idx in 0..npts {
            let qinv = state.qinv[idx].to_matrix();
            let gram = torsion_gram(state, &tau, idx);
            let t2 = (qinv * gram.to_matrix()).trace();
            rhs_sum[idx] += 0.5 * (5.0 / 3.0) * t2 * trs[idx];
            lap_sum[idx] += 0.5 * lap[idx];
        }
    }
    for idx in 0..npts {
        let ddt = (tr_next[idx] - tr_prev[idx]) / dt;
        out[idx] = rhs_sum[idx] - (ddt - lap_sum[idx]);
    }
    Ok(out)
}

/// Maximum-principle margin for a raw trace supremum.
pub fn max_principle_margin(sup_tr_q: f64) -> f64 {
    TRACE_THRESHOLD - sup_tr_q
}

/// True iff `sup tr Q < 2^{5/3}`, together with the margin `2^{5/3} - sup`.
pub fn max_principle_region(state: &FlowState) -> (bool, f64) {
    let sup = state.q.iter().fold(f64::NEG_INFINITY, |m, q| m.max(q.trace()));
    let margin = max_principle_margin(sup);
    (margin > 0.0, margin)
}

/// C0 long-time-existence criterion: whether
/// `sup (tr Q + |dQ|^2_Q) <= 3 + eps0`; also returns the supremum itself.
pub fn c0_criterion(state: &FlowState, eps0: f64) -> Result<(bool, f64)> {
    let jets = state.q_jets(false);
    let mut sup = f64::NEG_INFINITY;
    for (idx, jet) in jets.iter().enumerate() {
        sup = sup.max(state.q[idx].trace() + dq_norm_sq(jet)?);
    }
    Ok((sup <= 3.0 + eps0, sup))
}

/// Bochner residual `-K_P` of the harmonic-map Bochner formula, computed as
/// `(1/2) Delta |dQ|^2_Q - |nabla-hat dQ|^2_Q
///  - g^{ab} <nabla-hat_a Delta-hat Q, d_b Q>_Q - Ric^{ab} <d_a Q, d_b Q>_Q`.
/// Expected `>= -tolerance` everywhere since the target has non-positive
/// curvature.
pub fn bochner_residual_q(
    grid: &Grid4,
    metric: &MetricField,
    q: &[Sym3],
    bundle: &CurvatureBundle,
) -> Result<Vec<f64>> {
    use crate::curvature::SYM4_PAIRS;
    use crate::fields::deriv;
    let grid = fd_grid(grid);
    let npts = grid.num_points();
    let comps: Vec<Vec<f64>> = (0..6).map(|c| q.iter().map(|m| m.0[c]).collect()).collect();
    let dq: Vec<[Vec<f64>; 4]> = comps
        .iter()
        .map(|comp| std::array::from_fn(|a| deriv(&grid, comp, a)))
        .collect();
    let d2q: Vec<[Vec<f64>; 10]> = dq
        .iter()
        .map(|d| {
            std::array::from_fn(|p| {
                let (a, b) = SYM4_PAIRS[p];
                deriv(&grid, &d[a], b)
            })
        })
        .collect();
    let jets: Vec<QJet> = (0..npts)
        .map(|idx| QJet {
            q: q[idx],
            dq: std::array::from_fn(|a| Sym3(std::array::from_fn(|c| dq[c][a][idx]))),
            d2q: std::array::from_fn(|p| Sym3(std::array::from_fn(|c| d2q[c][p][idx]))),
            ginv: metric.data[idx].ginv,
        })
        .collect();

    // |dQ|^2_Q field and its Laplace-Beltrami.
    let mut dqn = vec![0.0; npts];
    for (idx, jet) in jets.iter().enumerate() {
        dqn[idx] = dq_norm_sq(jet)?;
    }
    let lap_dqn = scalar_laplacian(&grid, metric, &dqn);

    // Tension field Delta-hat Q and its coordinate derivatives.
    let mut tension = vec![Sym3::zero(); npts];
    for (idx, jet) in jets.iter().enumerate() {
        tension[idx] = harmonic_laplacian(jet, &bundle.christoffel[idx])?;
    }
    let tension_comps: Vec<Vec<f64>> =
        (0..6).map(|c| tension.iter().map(|m| m.0[c]).collect()).collect();
    let dtension: Vec<[Vec<f64>; 4]> = tension_comps
        .iter()
        .map(|comp| std::array::from_fn(|a| deriv(&grid, comp, a)))
        .collect();

    let mut out = vec![0.0; npts];
    for (idx, jet) in jets.iter().enumerate() {
        let qinv = jet.q.inverse()?.to_matrix();
        let hess = hessian_hat(jet, &bundle.christoffel[idx])?;
        let h2 = hessian_hat_norm_sq(jet, &hess)?;
        let mut grad_tension = [Sym3::zero(); 4];
        for (a, gt) in grad_tension.iter_mut().enumerate() {
            let ds = Sym3(std::array::from_fn(|c| dtension[c][a][idx]));
            *gt = pullback_connection(&jet.q, &jet.dq[a], &tension[idx], &ds)?;
        }
        let mut cross = 0.0;
        let mut ric_term = 0.0;
        let ginv = &jet.ginv;
        let ric = &bundle.ricci[idx];
        for a in 0..4 {
            for b in 0..4 {
                let gab = ginv.get(a, b);
                if gab != 0.0 {
                    cross += gab * p_inner_with_inv(&qinv, &grad_tension[a], &jet.dq[b]);
                }
                // Ric^{ab} = g^{ac} g^{bd} Ric_{cd}
                let mut ric_up = 0.0;
                for c in 0..4 {
                    for d in 0..4 {
                        ric_up += ginv.get(a, c) * ginv.get(b, d) * ric.get(c, d);
                    }
                }
                if ric_up != 0.0 {
                    ric_term += ric_up * p_inner_with_inv(&qinv, &jet.dq[a], &jet.dq[b]);
                }
            }
        }
        out[idx] = 0.5 * lap_dqn[idx] - h2 - cross - ric_term;
    }
    Ok(out)
}

/// [`bochner_residual_q`] evaluated on a flow state's cached Q and metric.
pub fn bochner_residual(state: &FlowState, bundle: &CurvatureBundle) -> Result<Vec<f64>> {
    bochner_residual_q(&state.grid, &state.metric, &state.q, bundle)
}

/// Evaluate every per-slice quantity. Pure read of `state` and `bundle`.
pub fn record(state: &FlowState, bundle: &CurvatureBundle) -> Result<DiagnosticsRecord> {
    let grid = state.grid;
    let npts = grid.num_points();
    let jets = state.q_jets(false);
    let tau = compute_torsion(state);

    let mut tr_q = vec![0.0; npts];
    let mut dqn = vec![0.0; npts];
    let mut t2 = vec![0.0; npts];
    let mut one_minus_lmin = vec![0.0; npts];
    let mut lmax_minus_one = vec![0.0; npts];
    let mut c0 = vec![0.0; npts];
    let mut det_drift = vec![0.0; npts];
    let mut sd_res = vec![0.0; npts];
    let mut wedge_sq = vec![0.0; npts];
    for idx in 0..npts {
        tr_q[idx] = state.q[idx].trace();
        dqn[idx] = dq_norm_sq(&jets[idx])?;
        let qinv = state.qinv[idx].to_matrix();
        let gram = torsion_gram(state, &tau, idx);
        t2[idx] = (qinv * gram.to_matrix()).trace();
        let eigs = state.q[idx].eigenvalues();
        one_minus_lmin[idx] = 1.0 - eigs[0];
        lmax_minus_one[idx] = eigs[2] - 1.0;
        c0[idx] = tr_q[idx] + dqn[idx];
        det_drift[idx] = (state.q[idx].det() - 1.0).abs();
        let md = &state.metric.data[idx];
        let mut res = 0.0f64;
        let mut w2 = 0.0;
        for i in 0..3 {
            let w = state.omega[i].two_form_at(idx);
            let star = hodge_star_2(md, &w);
            for c in 0..6 {
                res = res.max((star.0[c] - w.0[c]).abs());
            }
            w2 += w.wedge(&w);
        }
        sd_res[idx] = res;
        wedge_sq[idx] = w2;
    }
    let t2_mu: Vec<f64> = t2.iter().zip(state.mu.iter()).map(|(a, m)| a * m).collect();
    let t4_mu: Vec<f64> = t2.iter().zip(state.mu.iter()).map(|(a, m)| a * a * m).collect();
    let heat = heat_tr_residual_analytic(state)?;
    let bochner = bochner_residual(state, bundle)?;
    let (sup_rm, int_rm_sq_mu, _sup_ric, _int_ric4) =
        curvature_norms(bundle, &state.metric, &state.mu);
    let cohomology: [[f64; 6]; 3] = std::array::from_fn(|i| cohomology_pairings(&state.omega[i]));

    Ok(DiagnosticsRecord {
        t: state.t,
        sup_tr_q: reduce_max(&tr_q),
        inf_tr_q: reduce_min(&tr_q),
        sup_dq_norm_sq: reduce_max(&dqn),
        sup_torsion_sq: reduce_max(&t2),
        int_torsion_sq_mu: integrate_scalar(&grid, &t2_mu),
        int_torsion_4_mu: integrate_scalar(&grid, &t4_mu),
        volume: integrate_scalar(&grid, &state.mu),
        volume_bound_rhs: integrate_scalar(&grid, &wedge_sq) / 6.0,
        cohomology,
        sup_one_minus_lambda_min: reduce_max(&one_minus_lmin),
        sup_lambda_max_minus_one: reduce_max(&lmax_minus_one),
        sup_tr_q_plus_dq_norm_sq: reduce_max(&c0),
        heat_tr_residual_min: reduce_min(&heat),
        heat_tr_residual_max: reduce_max(&heat),
        bochner_residual_min: reduce_min(&bochner),
        sup_rm,
        int_rm_sq_mu,
        max_det_q_drift: reduce_max(&det_drift),
        self_duality_residual: reduce_max(&sd_res),
        hypersymplectic_margin: state.margin,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct MonitorPoint {
    t: f64,
    sup_torsion_sq: f64,
    int_torsion_sq_mu: f64,
    volume: f64,
    sup_tr_q: f64,
    sup_c0: f64,
}

/// Run-level monitor. Consumes records strictly in time order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMonitor {
    /// Tolerance for the monotonicity checks (`c1 dt^2 + c2 h^4` budget).
    pub tolerance: f64,
    /// Configured C0 threshold `eps0`.
    pub eps0: f64,
    /// Trapezoid accumulation of `int_0^t sup|T|^2 ds`.
    pub torsion_time_integral: f64,
    /// Human-readable log of monotonicity/invariant violations.
    pub violations: Vec<String>,
    history: Vec<MonitorPoint>,
    baseline_cohomology: Option<[[f64; 6]; 3]>,
}

impl RunMonitor {
    pub fn new(tolerance: f64, eps0: f64) -> RunMonitor {
        RunMonitor {
            tolerance,
            eps0,
            torsion_time_integral: 0.0,
            violations: Vec::new(),
            history: Vec::new(),
            baseline_cohomology: None,
        }
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    /// Gap curve `(s_star - t) * sup|T|^2` against a candidate singular time,
    /// reported raw (the constant in the gap proposition is not computable).
    pub fn gap_curve(&self, s_star: f64) -> Vec<(f64, f64)> {
        self.history
            .iter()
            .map(|p| (p.t, (s_star - p.t) * p.sup_torsion_sq))
            .collect()
    }
}

/// Fold one record into the monitor: time-ordering check, extension-integral
/// accumulation, cohomology conservation, and the conditional monotonicity
/// assertions of the maximum principle and the C0 criterion.
pub fn extension_monitor(run: &mut RunMonitor, rec: &DiagnosticsRecord) -> Result<()> {
    if let Some(last) = run.history.last() {
        if rec.t <= last.t {
            return Err(HsError::OutOfOrder);
        }
    }
    match &run.baseline_cohomology {
        None => run.baseline_cohomology = Some(rec.cohomology),
        Some(base) => {
            for i in 0..3 {
                for c in 0..6 {
                    let drift = (rec.cohomology[i][c] - base[i][c]).abs();
                    if drift > 1e-8 {
                        run.violations.push(format!(
                            "t={}: cohomology pairing ({},{}) drifted by {drift:.3e}",
                            rec.t,
                            i + 1,
                            c
                        ));
                    }
                }
            }
        }
    }
    if rec.volume > rec.volume_bound_rhs + run.tolerance {
        run.violations.push(format!(
            "t={}: volume {} exceeds cohomological bound {}",
            rec.t, rec.volume, rec.volume_bound_rhs
        ));
    }
    if rec.inf_tr_q < 3.0 - 1e-10 {
        run.violations
            .push(format!("t={}: inf tr Q = {} below 3", rec.t, rec.inf_tr_q));
    }
    if let Some(last) = run.history.last() {
        let dt = rec.t - last.t;
        run.torsion_time_integral +=
            0.5 * dt * (last.sup_torsion_sq + rec.sup_torsion_sq);
        if rec.volume < last.volume - run.tolerance {
            run.violations.push(format!(
                "t={}: volume decreased from {} to {}",
                rec.t, last.volume, rec.volume
            ));
        }
        if last.sup_tr_q < TRACE_THRESHOLD && rec.sup_tr_q > last.sup_tr_q + run.tolerance {
            run.violations.push(format!(
                "t={}: sup tr Q increased ({} -> {}) inside the maximum-principle region",
                rec.t, last.sup_tr_q, rec.sup_tr_q
            ));
        }
        let rec_c0 = rec.sup_tr_q_plus_dq_norm_sq;
        if last.sup_c0 <= 3.0 + run.eps0 && rec_c0 > last.sup_c0 + run.tolerance {
            run.violations.push(format!(
                "t={}: sup(tr Q + |dQ|^2_Q) increased ({} -> {}) while the C0 criterion held",
                rec.t, last.sup_c0, rec_c0
            ));
        }
    }
    run.history.push(MonitorPoint {
        t: rec.t,
        sup_torsion_sq: rec.sup_torsion_sq,
        int_torsion_sq_mu: rec.int_torsion_sq_mu,
        volume: rec.volume,
        sup_tr_q: rec.sup_tr_q,
        sup_c0: rec.sup_tr_q_plus_dq_norm_sq,
    });
    Ok(())
}

/// Trend report for the decay of `int |T|^2 mu`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    /// Least-squares slope of `log int|T|^2 mu` over the trailing half.
    pub log_slope: f64,
    /// Whether the trailing value is below the initial value.
    pub decreasing: bool,
    pub initial_value: f64,
    pub final_value: f64,
    /// Max over trailing-half record pairs of
    /// `|dVol/dt - (1/3) int|T|^2 mu|` (midpoint rule on both sides).
    pub max_volume_rate_deviation: f64,
}

/// Least-squares decay trend of `int |T|^2 mu` over the trailing half of the
/// run, plus the volume-rate consistency `dVol/dt = (1/3) int |T|^2 mu`.
pub fn t_to_zero_trend(run: &RunMonitor) -> Result<TrendReport> {
    let n = run.history.len();
    if n < 50 {
        return Err(HsError::InsufficientData(n));
    }
    let tail = &run.history[n / 2..];
    // Least squares of log(max(v, floor)) against t.
    let floor = 1e-300;
    let m = tail.len() as f64;
    let (mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0);
    for p in tail {
        let y = p.int_torsion_sq_mu.max(floor).ln();
        st += p.t;
        sy += y;
        stt += p.t * p.t;
        sty += p.t * y;
    }
    let denom = m * stt - st * st;
    let log_slope = if denom.abs() > 0.0 {
        (m * sty - st * sy) / denom
    } else {
        0.0
    };
    let mut max_dev = 0.0f64;
    for pair in tail.windows(2) {
        let dt = pair[1].t - pair[0].t;
        if dt > 0.0 {
            let rate = (pair[1].volume - pair[0].volume) / dt;
            let mid = 0.5 * (pair[0].int_torsion_sq_mu + pair[1].int_torsion_sq_mu);
            max_dev = max_dev.max((rate - (1.0 / 3.0) * mid).abs());
        }
    }
    Ok(TrendReport {
        log_slope,
        decreasing: run.history[n - 1].int_torsion_sq_mu < run.history[0].int_torsion_sq_mu,
        initial_value: run.history[0].int_torsion_sq_mu,
        final_value: run.history[n - 1].int_torsion_sq_mu,
        max_volume_rate_deviation: max_dev,
    })
}
