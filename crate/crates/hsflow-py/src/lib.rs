//! Python bindings for the hypersymplectic flow laboratory.
//!
//! Exposes the flow state with its scenario constructors and RK4 stepping,
//! per-slice diagnostics, checkpoint persistence, the torsion-free reference
//! charts, and the Calabi comparison closed form.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use hsflow::curvature::curvature_of;
use hsflow::diagnostics::record;
use hsflow::donaldson::{
    build_chart_triple, calabi_comparison, calabi_pole, calabi_residual, solve_w_ode,
    verify_torsion_free, PotentialData,
};
use hsflow::fields::{integrate_scalar, Backend, Grid4};
use hsflow::flow::{flat_triple, step, suggest_dt, torsion_norm_sq, StepControl};
use hsflow::runner::{
    anisotropic_triple, perturbed_triple, read_checkpoint, run, write_checkpoint, RunConfig,
};
use hsflow::HsError;

fn err(e: HsError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_backend(name: &str) -> PyResult<Backend> {
    match name {
        "spectral" => Ok(Backend::Spectral),
        "fd4" => Ok(Backend::Fd4),
        other => Err(PyValueError::new_err(format!(
            "backend must be 'spectral' or 'fd4', got '{other}'"
        ))),
    }
}

/// A triple of closed 2-forms on the flat 4-torus together with its derived
/// caches (Q, inverse, volume density, induced metric).
#[pyclass]
struct FlowState {
    inner: hsflow::flow::FlowState,
}

#[pymethods]
impl FlowState {
    /// The standard flat hyperkahler triple (the flow's fixed point).
    #[staticmethod]
    #[pyo3(signature = (n=16, period=std::f64::consts::TAU, backend="spectral"))]
    fn flat(n: usize, period: f64, backend: &str) -> PyResult<FlowState> {
        let grid = Grid4::torus(n, period, parse_backend(backend)?).map_err(err)?;
        let inner = hsflow::flow::FlowState::new(0.0, flat_triple(grid)).map_err(err)?;
        Ok(FlowState { inner })
    }

    /// Exact cohomology-preserving perturbation of the flat triple.
    #[staticmethod]
    #[pyo3(signature = (epsilon, n=16, period=std::f64::consts::TAU, backend="spectral",
                        modes=3, seed=0))]
    fn perturbed(
        epsilon: f64,
        n: usize,
        period: f64,
        backend: &str,
        modes: usize,
        seed: u64,
    ) -> PyResult<FlowState> {
        let grid = Grid4::torus(n, period, parse_backend(backend)?).map_err(err)?;
        let omega = perturbed_triple(grid, epsilon, modes, seed);
        let inner = hsflow::flow::FlowState::new(0.0, omega).map_err(err)?;
        Ok(FlowState { inner })
    }

    /// Constant triple with Q = diag(lambda, lambda, lambda^-2).
    #[staticmethod]
    #[pyo3(signature = (lam, n=16, period=std::f64::consts::TAU, backend="spectral"))]
    fn anisotropic(lam: f64, n: usize, period: f64, backend: &str) -> PyResult<FlowState> {
        let grid = Grid4::torus(n, period, parse_backend(backend)?).map_err(err)?;
        let omega = anisotropic_triple(grid, lam);
        let inner = hsflow::flow::FlowState::new(0.0, omega).map_err(err)?;
        Ok(FlowState { inner })
    }

    /// Load a state from a checkpoint file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<FlowState> {
        let (inner, _) = read_checkpoint(&path).map_err(err)?;
        Ok(FlowState { inner })
    }

    /// Flow time of this slice.
    #[getter]
    fn t(&self) -> f64 {
        self.inner.t
    }

    /// Smallest eigenvalue of the wedge Gram matrix over the grid.
    #[getter]
    fn margin(&self) -> f64 {
        self.inner.margin
    }

    /// Grid points per axis.
    #[getter]
    fn n(&self) -> usize {
        self.inner.grid.dims[0]
    }

    /// CFL step suggestion `safety / sup(|T|^2 + |dQ|^2_Q + h^-2 tr Q)`.
    #[pyo3(signature = (safety=0.2))]
    fn suggest_dt(&self, safety: f64) -> PyResult<f64> {
        suggest_dt(&self.inner, safety).map_err(err)
    }

    /// Advance by `steps` classical RK4 steps of size `dt` (in place).
    #[pyo3(signature = (dt, steps=1))]
    fn step(&mut self, dt: f64, steps: usize) -> PyResult<()> {
        for _ in 0..steps {
            self.inner = step(&self.inner, StepControl { dt }).map_err(err)?;
        }
        Ok(())
    }

    /// Total volume of the induced metric.
    fn volume(&self) -> f64 {
        integrate_scalar(&self.inner.grid, &self.inner.mu)
    }

    /// Pointwise torsion norm `tr(Q^-1 <tau, tau>)` as a flat list.
    fn torsion_norm_sq(&self) -> Vec<f64> {
        torsion_norm_sq(&self.inner)
    }

    /// Q at a grid point (row-major 3x3 nested list).
    fn q_at(&self, idx: usize) -> PyResult<Vec<Vec<f64>>> {
        if idx >= self.inner.grid.num_points() {
            return Err(PyValueError::new_err("point index out of range"));
        }
        let q = &self.inner.q[idx];
        Ok((0..3)
            .map(|i| (0..3).map(|j| q.get(i, j)).collect())
            .collect())
    }

    /// Full per-slice diagnostics record as a dict (computes curvature).
    fn diagnostics(&self) -> PyResult<HashMap<String, f64>> {
        let bundle = curvature_of(&self.inner.metric).map_err(err)?;
        let r = record(&self.inner, &bundle).map_err(err)?;
        let mut out = HashMap::new();
        out.insert("t".into(), r.t);
        out.insert("sup_tr_q".into(), r.sup_tr_q);
        out.insert("inf_tr_q".into(), r.inf_tr_q);
        out.insert("sup_dq_norm_sq".into(), r.sup_dq_norm_sq);
        out.insert("sup_torsion_sq".into(), r.sup_torsion_sq);
        out.insert("int_torsion_sq_mu".into(), r.int_torsion_sq_mu);
        out.insert("volume".into(), r.volume);
        out.insert("volume_bound_rhs".into(), r.volume_bound_rhs);
        out.insert("sup_tr_q_plus_dq_norm_sq".into(), r.sup_tr_q_plus_dq_norm_sq);
        out.insert("heat_tr_residual_min".into(), r.heat_tr_residual_min);
        out.insert("bochner_residual_min".into(), r.bochner_residual_min);
        out.insert("sup_rm".into(), r.sup_rm);
        out.insert("max_det_q_drift".into(), r.max_det_q_drift);
        out.insert("self_duality_residual".into(), r.self_duality_residual);
        out.insert("hypersymplectic_margin".into(), r.hypersymplectic_margin);
        Ok(out)
    }

    /// Write this state as a checkpoint file.
    #[pyo3(signature = (path, dt=0.0, step=0))]
    fn save(&self, path: PathBuf, dt: f64, step: u64) -> PyResult<()> {
        write_checkpoint(&path, &self.inner, dt, step).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "FlowState(n={}, t={:.6}, margin={:.3e})",
            self.inner.grid.dims[0], self.inner.t, self.inner.margin
        )
    }
}

/// Execute a run from a flat key=value config string; returns a summary dict
/// with `exit_code`, `records`, and `violations`.
#[pyfunction]
fn run_config(py: Python<'_>, text: &str) -> PyResult<PyObject> {
    let cfg = RunConfig::parse(text).map_err(err)?;
    let rep = run(&cfg).map_err(err)?;
    let out = pyo3::types::PyDict::new_bound(py);
    out.set_item("exit_code", rep.exit_code)?;
    out.set_item("records", rep.records.len())?;
    out.set_item("violations", rep.violations.clone())?;
    out.set_item("outdir", rep.outdir.to_string_lossy().into_owned())?;
    if let Some((t, margin)) = rep.stability_loss {
        out.set_item("stability_loss_t", t)?;
        out.set_item("stability_loss_margin", margin)?;
    }
    Ok(out.into())
}

/// Residuals of the torsion-free S^1-invariant reference charts.
/// `kind` is "quadratic" (flat hyperkahler) or "ansatz" (separable, with the
/// reduced-ODE profile for the given `w0` and domain half-width `delta`).
#[pyfunction]
#[pyo3(signature = (kind, n=17, w0=1.0, delta=0.6))]
fn chart_report(
    py: Python<'_>,
    kind: &str,
    n: usize,
    w0: f64,
    delta: f64,
) -> PyResult<PyObject> {
    let pd = match kind {
        "quadratic" => PotentialData::quadratic(1.0),
        "ansatz" => {
            let sol = solve_w_ode(w0, delta, 1e-9).map_err(err)?;
            PotentialData::ansatz(sol, 1.0)
        }
        other => {
            return Err(PyValueError::new_err(format!(
                "kind must be 'quadratic' or 'ansatz', got '{other}'"
            )))
        }
    };
    let ct = build_chart_triple(&pd, n).map_err(err)?;
    let rep = verify_torsion_free(&ct).map_err(err)?;
    let out = pyo3::types::PyDict::new_bound(py);
    out.set_item("sup_tau", rep.sup_tau)?;
    out.set_item("sup_laplacian", rep.sup_laplacian)?;
    out.set_item("sup_ric_identity", rep.sup_ric_identity)?;
    out.set_item("sup_scalar_mismatch", rep.sup_scalar_mismatch)?;
    out.set_item("max_scalar", rep.max_scalar)?;
    out.set_item("sup_dq_norm_sq", rep.sup_dq_norm_sq)?;
    Ok(out.into())
}

/// Closed-form Calabi comparison function v_a(x) = 32 a / (32 - a^2 x^2).
#[pyfunction]
fn calabi(a: f64, x: f64) -> PyResult<f64> {
    calabi_comparison(a, x).map_err(err)
}

/// Pole location 4 sqrt(2) / a of the Calabi comparison function.
#[pyfunction]
#[pyo3(name = "calabi_pole")]
fn calabi_pole_py(a: f64) -> f64 {
    calabi_pole(a)
}

/// ODE residual of the closed-form Calabi comparison at (a, x).
#[pyfunction]
#[pyo3(name = "calabi_residual")]
fn calabi_residual_py(a: f64, x: f64) -> PyResult<f64> {
    calabi_residual(a, x).map_err(err)
}

#[pymodule]
fn hsflow_py(_py: Python, m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<FlowState>()?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(chart_report, m)?)?;
    m.add_function(wrap_pyfunction!(calabi, m)?)?;
    m.add_function(wrap_pyfunction!(calabi_pole_py, m)?)?;
    m.add_function(wrap_pyfunction!(calabi_residual_py, m)?)?;
    Ok(())
}
