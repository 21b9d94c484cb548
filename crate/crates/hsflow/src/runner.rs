//! Orchestration: run configuration, scenario construction, checkpointing,
//! and the main flow loop with diagnostics export.
//!
//! Configs are flat `key = value` UTF-8 text. Checkpoints are a single-line
//! JSON header followed by raw little-endian IEEE-754 float64 arrays in the
//! order declared by the header; the round-trip is byte-exact. Diagnostics
//! are written both as NDJSON (one record per line) and as CSV with a frozen
//! column order documented in a schema file next to the outputs.

use std::fmt::Write as _;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curvature::curvature_of;
use crate::diagnostics::{
    extension_monitor, record, t_to_zero_trend, DiagnosticsRecord, RunMonitor, TrendReport,
};
use crate::donaldson::{build_chart_triple, solve_w_ode, PotentialData};
use crate::error::{HsError, Result};
use crate::algebra::FORM2_BASIS;
use crate::fields::{ext_d, Backend, FormField, Grid4};
use crate::flow::{flat_triple, step, suggest_dt, FlowState, StepControl};

/// Name of the environment variable overriding the configured output
/// directory.
pub const OUTDIR_ENV: &str = "HSFLOW_OUTDIR";

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// A full run configuration with defaults for every key.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Grid points per axis (torus scenarios) or per spatial axis (chart).
    pub n: usize,
    /// Torus period L.
    pub period: f64,
    pub backend: Backend,
    /// One of: flat, perturbed, anisotropic, c0, donaldson-chart.
    pub scenario: String,
    /// Perturbation amplitude for the perturbed/c0 scenarios.
    pub epsilon: f64,
    /// Number of random low-frequency modes per perturbation potential.
    pub modes: usize,
    /// Anisotropy of the constant triple: Q = diag(lambda, lambda, lambda^-2).
    pub lambda: f64,
    /// Rescaling `omega -> K^2 omega` applied after construction.
    pub rescale_k: f64,
    /// C0-criterion threshold parameter.
    pub eps0: f64,
    /// Center value of the reduced-ODE solution (donaldson-chart).
    pub w0: f64,
    /// Requested half-width of the reduced-ODE domain (donaldson-chart).
    pub delta: f64,
    /// CFL safety factor for the fixed step size.
    pub safety: f64,
    pub t_end: f64,
    /// Steps between diagnostics records.
    pub record_stride: usize,
    /// Records between checkpoints.
    pub checkpoint_stride: usize,
    pub outdir: PathBuf,
    /// Worker count; reductions are fixed-order so results do not depend on
    /// it.
    pub workers: usize,
    pub seed: u64,
    /// Budget for the monotonicity checks of the run monitor.
    pub tolerance: f64,
    /// Optional checkpoint to resume from.
    pub resume: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            n: 16,
            period: std::f64::consts::TAU,
            backend: Backend::Spectral,
            scenario: "flat".into(),
            epsilon: 0.05,
            modes: 3,
            lambda: 1.0,
            rescale_k: 1.0,
            eps0: 0.05,
            w0: 1.0,
            delta: 0.6,
            safety: 0.2,
            t_end: 1.0,
            record_stride: 10,
            checkpoint_stride: 5,
            outdir: PathBuf::from("out"),
            workers: 1,
            seed: 0,
            tolerance: 1e-8,
            resume: None,
        }
    }
}

impl RunConfig {
    /// Parse a flat `key = value` config text; `#` starts a comment.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HsError::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| {
                HsError::Config(format!("line {}: bad {what} '{value}'", lineno + 1))
            };
            match key {
                "n" => cfg.n = value.parse().map_err(|_| bad("integer"))?,
                "period" => cfg.period = value.parse().map_err(|_| bad("number"))?,
                "backend" => cfg.backend = value.parse()?,
                "scenario" => cfg.scenario = value.to_string(),
                "epsilon" => cfg.epsilon = value.parse().map_err(|_| bad("number"))?,
                "modes" => cfg.modes = value.parse().map_err(|_| bad("integer"))?,
                "lambda" => cfg.lambda = value.parse().map_err(|_| bad("number"))?,
                "rescale_k" => cfg.rescale_k = value.parse().map_err(|_| bad("number"))?,
                "eps0" => cfg.eps0 = value.parse().map_err(|_| bad("number"))?,
                "w0" => cfg.w0 = value.parse().map_err(|_| bad("number"))?,
                "delta" => cfg.delta = value.parse().map_err(|_| bad("number"))?,
                "safety" => cfg.safety = value.parse().map_err(|_| bad("number"))?,
                "t_end" => cfg.t_end = value.parse().map_err(|_| bad("number"))?,
                "record_stride" => {
                    cfg.record_stride = value.parse().map_err(|_| bad("integer"))?
                }
                "checkpoint_stride" => {
                    cfg.checkpoint_stride = value.parse().map_err(|_| bad("integer"))?
                }
                "outdir" => cfg.outdir = PathBuf::from(value),
                "workers" => cfg.workers = value.parse().map_err(|_| bad("integer"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("integer"))?,
                "tolerance" => cfg.tolerance = value.parse().map_err(|_| bad("number"))?,
                "resume" => cfg.resume = Some(PathBuf::from(value)),
                other => {
                    return Err(HsError::Config(format!(
                        "line {}: unknown key '{other}'",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load and parse a config file.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(HsError::Config(msg.to_string()))
            }
        };
        check(
            matches!(
                self.scenario.as_str(),
                "flat" | "perturbed" | "anisotropic" | "c0" | "donaldson-chart"
            ),
            "scenario must be one of flat|perturbed|anisotropic|c0|donaldson-chart",
        )?;
        check(self.period > 0.0, "period must be positive")?;
        check(self.epsilon >= 0.0, "epsilon must be nonnegative")?;
        check(self.modes >= 1, "modes must be at least 1")?;
        check(self.lambda > 0.0, "lambda must be positive")?;
        check(self.rescale_k > 0.0, "rescale_k must be positive")?;
        check(self.eps0 > 0.0, "eps0 must be positive")?;
        check(self.w0 > 0.0, "w0 must be positive")?;
        check(self.delta > 0.0, "delta must be positive")?;
        check(
            self.safety > 0.0 && self.safety <= 1.0,
            "safety must lie in (0, 1]",
        )?;
        check(self.t_end > 0.0, "t_end must be positive")?;
        check(self.record_stride >= 1, "record_stride must be at least 1")?;
        check(
            self.checkpoint_stride >= 1,
            "checkpoint_stride must be at least 1",
        )?;
        check(self.workers >= 1, "workers must be at least 1")?;
        check(self.tolerance > 0.0, "tolerance must be positive")?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Scenarios
// ---------------------------------------------------------------------------

/// Exact perturbation of the flat triple: `w_i + eps * d(alpha_i)` with
/// random low-frequency 1-form potentials, so every cohomology pairing is
/// unchanged.
pub fn perturbed_triple(grid: Grid4, eps: f64, modes: usize, seed: u64) -> [FormField; 3] {
    let mut omega = flat_triple(grid);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for w in omega.iter_mut() {
        let mut terms = Vec::new();
        for _ in 0..modes {
            let k: [i32; 4] = std::array::from_fn(|_| rng.gen_range(-1..=1));
            let comp = rng.gen_range(0..4usize);
            let amp = rng.gen::<f64>() - 0.5;
            let phase = rng.gen::<f64>() * std::f64::consts::TAU;
            terms.push((k, comp, amp, phase));
        }
        let alpha = FormField::from_fn(grid, 1, |x| {
            let mut v = vec![0.0; 4];
            for (k, comp, amp, phase) in &terms {
                let arg: f64 = (0..4).map(|a| k[a] as f64 * x[a]).sum();
                v[*comp] += amp * (arg + phase).cos();
            }
            v
        });
        w.axpy(eps, &ext_d(&alpha));
    }
    omega
}

/// Constant triple with `Q = diag(lambda, lambda, lambda^-2)` exactly.
pub fn anisotropic_triple(grid: Grid4, lambda: f64) -> [FormField; 3] {
    let mut omega = flat_triple(grid);
    let scales = [lambda.sqrt(), lambda.sqrt(), 1.0 / lambda];
    for (w, s) in omega.iter_mut().zip(scales) {
        for comp in w.comps.iter_mut() {
            for v in comp.iter_mut() {
                *v *= s;
            }
        }
    }
    omega
}

/// Build the configured scenario's initial state, applying the rescaling
/// `omega -> K^2 omega` (which fixes Q and scales `|dQ|^2_Q` by `K^-2`).
pub fn scenario_build(cfg: &RunConfig) -> Result<FlowState> {
    let k2 = cfg.rescale_k * cfg.rescale_k;
    let mut omega = match cfg.scenario.as_str() {
        "donaldson-chart" => {
            let sol = solve_w_ode(cfg.w0, cfg.delta, 1e-8)?;
            let pd = PotentialData::ansatz(sol, 1.0);
            build_chart_triple(&pd, cfg.n)?.state.omega
        }
        torus_scenario => {
            let grid = Grid4::torus(cfg.n, cfg.period, cfg.backend)?;
            match torus_scenario {
                "flat" => flat_triple(grid),
                "perturbed" | "c0" => perturbed_triple(grid, cfg.epsilon, cfg.modes, cfg.seed),
                "anisotropic" => anisotropic_triple(grid, cfg.lambda),
                other => {
                    return Err(HsError::Config(format!("unknown scenario '{other}'")))
                }
            }
        }
    };
    if k2 != 1.0 {
        for w in omega.iter_mut() {
            for comp in w.comps.iter_mut() {
                for v in comp.iter_mut() {
                    *v *= k2;
                }
            }
        }
    }
    FlowState::new(0.0, omega)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// JSON header of a checkpoint file (one line, then raw arrays).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CheckpointHeader {
    pub format: String,
    pub grid: Grid4,
    pub t: f64,
    /// Fixed step size of the producing run, reused on resume.
    pub dt: f64,
    /// Step counter of the producing run at checkpoint time.
    pub step: u64,
    /// True for non-periodic chart data; consumers must respect the
    /// interior zone.
    pub chart: bool,
    pub components: Vec<String>,
}

/// Format tag of the current checkpoint layout.
pub const CHECKPOINT_FORMAT: &str = "hsflow-checkpoint-1";

fn component_names() -> Vec<String> {
    let mut names = Vec::with_capacity(18);
    for i in 1..=3 {
        for &(a, b) in FORM2_BASIS.iter() {
            names.push(format!("omega{i}_e{a}{b}"));
        }
    }
    names
}

/// Write a checkpoint: JSON header line plus the 18 form-component arrays as
/// raw little-endian f64, in header order.
pub fn write_checkpoint(
    path: &Path,
    state: &FlowState,
    dt: f64,
    stepno: u64,
) -> Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.to_string(),
        grid: state.grid,
        t: state.t,
        dt,
        step: stepno,
        chart: !state.grid.periodic,
        components: component_names(),
    };
    let mut bytes = serde_json::to_string(&header)
        .map_err(|e| HsError::Checkpoint(e.to_string()))?
        .into_bytes();
    bytes.push(b'\n');
    for i in 0..3 {
        for c in 0..6 {
            for v in &state.omega[i].comps[c] {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Read a checkpoint back into a state (caches are recomputed from the
/// forms) together with its header.
pub fn read_checkpoint(path: &Path) -> Result<(FlowState, CheckpointHeader)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| HsError::Checkpoint("missing header line".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| HsError::Checkpoint(e.to_string()))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(HsError::Checkpoint(format!(
            "unsupported format '{}'",
            header.format
        )));
    }
    if header.components != component_names() {
        return Err(HsError::Checkpoint("unexpected component list".into()));
    }
    let npts = header.grid.num_points();
    let expected = nl + 1 + 18 * npts * 8;
    if bytes.len() != expected {
        return Err(HsError::Checkpoint(format!(
            "payload length {} does not match header ({} expected)",
            bytes.len(),
            expected
        )));
    }
    let mut omega: [FormField; 3] = std::array::from_fn(|_| FormField::zero(header.grid, 2));
    let mut off = nl + 1;
    for i in 0..3 {
        for c in 0..6 {
            for p in 0..npts {
                let mut raw = [0u8; 8];
                raw.copy_from_slice(&bytes[off..off + 8]);
                omega[i].comps[c][p] = f64::from_le_bytes(raw);
                off += 8;
            }
        }
    }
    let state = FlowState::new(header.t, omega)?;
    Ok((state, header))
}

// ---------------------------------------------------------------------------
// The run loop
// ---------------------------------------------------------------------------

/// Outcome of a run; `exit_code` follows the CLI contract: 0 clean,
/// 1 invariant violation, 2 stability loss, 3 config error (the latter is
/// reported through `Err` instead).
#[derive(Debug)]
pub struct RunReport {
    pub exit_code: i32,
    pub records: Vec<DiagnosticsRecord>,
    pub violations: Vec<String>,
    pub stability_loss: Option<(f64, f64)>,
    pub trend: Option<TrendReport>,
    pub outdir: PathBuf,
}

/// Execute a configured run: build or resume a state, step with a fixed
/// RK4 step, record diagnostics, checkpoint periodically, and write the
/// NDJSON/CSV outputs plus a summary.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let outdir = match std::env::var(OUTDIR_ENV) {
        Ok(d) if !d.is_empty() => PathBuf::from(d),
        _ => cfg.outdir.clone(),
    };
    std::fs::create_dir_all(&outdir)?;
    let (mut state, dt, mut stepno) = match &cfg.resume {
        Some(path) => {
            let (state, header) = read_checkpoint(path)?;
            (state, header.dt, header.step)
        }
        None => {
            let state = scenario_build(cfg)?;
            let dt = suggest_dt(&state, cfg.safety)?;
            (state, dt, 0u64)
        }
    };
    let mut monitor = RunMonitor::new(cfg.tolerance, cfg.eps0);
    let mut records: Vec<DiagnosticsRecord> = Vec::new();
    let mut stability_loss = None;

    let observe = |state: &FlowState,
                       monitor: &mut RunMonitor,
                       records: &mut Vec<DiagnosticsRecord>,
                       stepno: u64|
     -> Result<()> {
        let bundle = curvature_of(&state.metric)?;
        let rec = record(state, &bundle)?;
        extension_monitor(monitor, &rec)?;
        if (records.len() as usize) % cfg.checkpoint_stride == 0 {
            write_checkpoint(
                &outdir.join(format!("checkpoint_{stepno:08}.hsc")),
                state,
                dt,
                stepno,
            )?;
        }
        records.push(rec);
        Ok(())
    };

    loop {
        if stepno % cfg.record_stride as u64 == 0 {
            observe(&state, &mut monitor, &mut records, stepno)?;
        }
        if state.t >= cfg.t_end - 1e-12 {
            break;
        }
        match step(&state, StepControl { dt }) {
            Ok(next) => {
                state = next;
                stepno += 1;
            }
            Err(HsError::StabilityLoss { t, margin }) => {
                stability_loss = Some((t, margin));
                write_checkpoint(&outdir.join("abort.hsc"), &state, dt, stepno)?;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    // Final record if the loop ended off-stride.
    if stepno % cfg.record_stride as u64 != 0 && stability_loss.is_none() {
        observe(&state, &mut monitor, &mut records, stepno)?;
    }

    // Diagnostics outputs.
    let mut ndjson = String::new();
    let mut csv = String::from(DiagnosticsRecord::CSV_HEADER);
    csv.push('\n');
    for rec in &records {
        let _ = writeln!(ndjson, "{}", rec.to_ndjson());
        let _ = writeln!(csv, "{}", rec.to_csv_row());
    }
    std::fs::write(outdir.join("diagnostics.ndjson"), ndjson)?;
    std::fs::write(outdir.join("diagnostics.csv"), csv)?;
    std::fs::write(
        outdir.join("diagnostics.schema.txt"),
        format!(
            "CSV column order (frozen):\n{}\n",
            DiagnosticsRecord::CSV_HEADER
        ),
    )?;

    let trend = t_to_zero_trend(&monitor).ok();
    let exit_code = if stability_loss.is_some() {
        2
    } else if monitor.violations.is_empty() {
        0
    } else {
        1
    };
    let mut summary = String::new();
    let _ = writeln!(summary, "scenario = {}", cfg.scenario);
    let _ = writeln!(summary, "records = {}", records.len());
    let _ = writeln!(summary, "dt = {dt}");
    let _ = writeln!(
        summary,
        "extension_integral = {}",
        monitor.torsion_time_integral
    );
    if let Some((t, margin)) = stability_loss {
        let _ = writeln!(summary, "STABILITY LOSS at t = {t} (margin {margin:.3e})");
    }
    for v in &monitor.violations {
        let _ = writeln!(summary, "VIOLATION: {v}");
    }
    let _ = writeln!(
        summary,
        "{}",
        if exit_code == 0 { "PASS" } else { "FAIL" }
    );
    std::fs::write(outdir.join("summary.txt"), summary)?;

    Ok(RunReport {
        exit_code,
        records,
        violations: monitor.violations.clone(),
        stability_loss,
        trend,
        outdir,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::TRACE_THRESHOLD;
    use crate::fields::cohomology_pairings;
    use crate::flow::dq_norm_sq_field;
    use tempfile::tempdir;

    #[test]
    fn config_parse_defaults_and_errors() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let cfg = RunConfig::parse(
            "n = 8\nscenario = perturbed # comment\nepsilon = 0.01\nseed = 42\n",
        )
        .unwrap();
        assert_eq!(cfg.n, 8);
        assert_eq!(cfg.scenario, "perturbed");
        assert_eq!(cfg.epsilon, 0.01);
        assert_eq!(cfg.seed, 42);
        assert!(matches!(
            RunConfig::parse("unknown_key = 1"),
            Err(HsError::Config(_))
        ));
        assert!(matches!(
            RunConfig::parse("epsilon = not-a-number"),
            Err(HsError::Config(_))
        ));
        assert!(matches!(
            RunConfig::parse("scenario = frisbee"),
            Err(HsError::Config(_))
        ));
        assert!(matches!(
            RunConfig::parse("safety = 2.0"),
            Err(HsError::Config(_))
        ));
    }

    #[test]
    fn scenario_properties() {
        // Flat: margin 1, tr Q = 3 everywhere.
        let cfg = RunConfig {
            n: 8,
            ..RunConfig::default()
        };
        let flat = scenario_build(&cfg).unwrap();
        assert!((flat.margin - 1.0).abs() < 1e-12);
        for q in &flat.q {
            assert!((q.trace() - 3.0).abs() < 1e-12);
        }
        // Anisotropic at the critical value: tr Q = 2 lambda + lambda^-2
        // equals the maximum-principle threshold for lambda = 2^{-1/3}.
        let cfg = RunConfig {
            n: 8,
            scenario: "anisotropic".into(),
            lambda: 2.0f64.powf(-1.0 / 3.0),
            ..RunConfig::default()
        };
        let aniso = scenario_build(&cfg).unwrap();
        for q in &aniso.q {
            assert!((q.trace() - TRACE_THRESHOLD).abs() < 1e-12);
        }
        // Perturbed: exact perturbation leaves all cohomology pairings at
        // their flat values.
        let cfg = RunConfig {
            n: 8,
            scenario: "perturbed".into(),
            epsilon: 0.05,
            ..RunConfig::default()
        };
        let pert = scenario_build(&cfg).unwrap();
        for i in 0..3 {
            let a = cohomology_pairings(&flat.omega[i]);
            let b = cohomology_pairings(&pert.omega[i]);
            for c in 0..6 {
                assert!((a[c] - b[c]).abs() < 1e-10, "pairing {i}/{c}");
            }
        }
    }

    #[test]
    fn rescale_law_on_construction() {
        let base = RunConfig {
            n: 8,
            scenario: "perturbed".into(),
            epsilon: 0.05,
            seed: 5,
            ..RunConfig::default()
        };
        let k = 2.5;
        let scaled_cfg = RunConfig {
            rescale_k: k,
            ..base.clone()
        };
        let s1 = scenario_build(&base).unwrap();
        let s2 = scenario_build(&scaled_cfg).unwrap();
        let d1 = dq_norm_sq_field(&s1).unwrap();
        let d2 = dq_norm_sq_field(&s2).unwrap();
        for idx in 0..s1.grid.num_points() {
            for c in 0..6 {
                assert!((s1.q[idx].0[c] - s2.q[idx].0[c]).abs() < 1e-12);
            }
            // |dQ|^2_Q scales by K^-2.
            let want = d1[idx] / (k * k);
            assert!(
                (d2[idx] - want).abs() <= 1e-12 * (1.0 + want.abs()),
                "dq2 {} vs {}",
                d2[idx],
                want
            );
        }
    }

    #[test]
    fn checkpoint_round_trip_is_byte_exact() {
        let dir = tempdir().unwrap();
        let cfg = RunConfig {
            n: 8,
            scenario: "perturbed".into(),
            epsilon: 0.03,
            seed: 11,
            ..RunConfig::default()
        };
        let state = scenario_build(&cfg).unwrap();
        let p1 = dir.path().join("a.hsc");
        let p2 = dir.path().join("b.hsc");
        write_checkpoint(&p1, &state, 0.0125, 7).unwrap();
        let (back, header) = read_checkpoint(&p1).unwrap();
        assert_eq!(header.step, 7);
        assert_eq!(header.dt, 0.0125);
        assert!(!header.chart);
        write_checkpoint(&p2, &back, header.dt, header.step).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2);
        // Truncated payloads are rejected.
        std::fs::write(dir.path().join("bad.hsc"), &b1[..b1.len() - 4]).unwrap();
        assert!(matches!(
            read_checkpoint(&dir.path().join("bad.hsc")),
            Err(HsError::Checkpoint(_))
        ));
    }

    #[test]
    fn flat_run_is_clean_and_deterministic() {
        let d1 = tempdir().unwrap();
        let d2 = tempdir().unwrap();
        let mk = |dir: &Path, workers: usize| RunConfig {
            n: 8,
            scenario: "flat".into(),
            t_end: 0.2,
            record_stride: 2,
            outdir: dir.to_path_buf(),
            workers,
            ..RunConfig::default()
        };
        let r1 = run(&mk(d1.path(), 1)).unwrap();
        let r2 = run(&mk(d2.path(), 4)).unwrap();
        assert_eq!(r2.exit_code, 0);
        assert_eq!(r1.exit_code, 0, "violations: {:?}", r1.violations);
        for rec in &r1.records {
            assert!(rec.sup_torsion_sq < 1e-11);
            assert!((rec.sup_tr_q - 3.0).abs() < 1e-11);
        }
        // Byte-identical NDJSON regardless of the worker count.
        let n1 = std::fs::read(d1.path().join("diagnostics.ndjson")).unwrap();
        let n2 = std::fs::read(d2.path().join("diagnostics.ndjson")).unwrap();
        assert!(!n1.is_empty());
        assert_eq!(n1, n2);
        // CSV and schema artifacts exist and agree on the header.
        let csv = std::fs::read_to_string(d1.path().join("diagnostics.csv")).unwrap();
        assert!(csv.starts_with(DiagnosticsRecord::CSV_HEADER));
        let schema =
            std::fs::read_to_string(d1.path().join("diagnostics.schema.txt")).unwrap();
        assert!(schema.contains(DiagnosticsRecord::CSV_HEADER));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let full_dir = tempdir().unwrap();
        let part_dir = tempdir().unwrap();
        let cfg = RunConfig {
            n: 8,
            scenario: "perturbed".into(),
            epsilon: 0.02,
            seed: 3,
            t_end: 0.3,
            record_stride: 2,
            checkpoint_stride: 2,
            outdir: full_dir.path().to_path_buf(),
            ..RunConfig::default()
        };
        let full = run(&cfg).unwrap();
        assert_eq!(full.exit_code, 0, "violations: {:?}", full.violations);
        // Pick a mid-run checkpoint and resume from it.
        let mut ckpts: Vec<_> = std::fs::read_dir(full_dir.path())
            .unwrap()
            .filter_map(|e| {
                let p = e.unwrap().path();
                let name = p.file_name().unwrap().to_string_lossy().into_owned();
                (name.starts_with("checkpoint_") && name.ends_with(".hsc")).then_some(p)
            })
            .collect();
        ckpts.sort();
        assert!(ckpts.len() >= 2, "want a mid-run checkpoint: {ckpts:?}");
        let resume_cfg = RunConfig {
            resume: Some(ckpts[1].clone()),
            outdir: part_dir.path().to_path_buf(),
            ..cfg.clone()
        };
        let resumed = run(&resume_cfg).unwrap();
        assert_eq!(resumed.exit_code, 0);
        // The resumed records must reproduce the tail of the full run.
        let tail = &full.records[full.records.len() - resumed.records.len()..];
        for (a, b) in tail.iter().zip(resumed.records.iter()) {
            assert!((a.t - b.t).abs() < 1e-13);
            assert!((a.sup_tr_q - b.sup_tr_q).abs() < 1e-13);
            assert!((a.sup_torsion_sq - b.sup_torsion_sq).abs() < 1e-13);
            assert!((a.volume - b.volume).abs() < 1e-13);
            assert!((a.sup_dq_norm_sq - b.sup_dq_norm_sq).abs() < 1e-13);
        }
    }

    #[test]
    fn donaldson_chart_scenario_builds() {
        let cfg = RunConfig {
            n: 10,
            scenario: "donaldson-chart".into(),
            ..RunConfig::default()
        };
        let state = scenario_build(&cfg).unwrap();
        assert!(!state.grid.periodic);
        assert!(state.margin > 0.0);
    }
}
