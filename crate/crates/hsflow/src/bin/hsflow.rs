//! Command-line front end: run configured flows, verify the torsion-free
//! reference structures, and inspect checkpoints.
//!
//! Exit codes: 0 clean, 1 invariant violation, 2 stability loss, 3 config
//! or I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hsflow::donaldson::{
    build_chart_triple, solve_w_ode, PotentialData, TorsionFreeReport,
};
use hsflow::runner::{read_checkpoint, run, RunConfig};
use hsflow::HsError;

#[derive(Parser)]
#[command(
    name = "hsflow",
    about = "Numerical laboratory for the hypersymplectic flow on the flat 4-torus"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a flow described by a flat key=value config file.
    Run {
        /// Path to the config file.
        config: PathBuf,
    },
    /// Verify the torsion-free reference structures (quadratic chart
    /// residuals and ansatz-chart convergence orders).
    VerifyDonaldson {
        /// Center value w(0) of the reduced ODE.
        #[arg(long, default_value_t = 1.0)]
        w0: f64,
        /// Requested half-width of the ODE domain.
        #[arg(long, default_value_t = 0.6)]
        delta: f64,
        /// Residual tolerance for the ODE solve and the quadratic chart.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Coarse chart resolution of the convergence study.
        #[arg(long, default_value_t = 17)]
        coarse: usize,
        /// Fine chart resolution (should double the coarse spacing).
        #[arg(long, default_value_t = 33)]
        fine: usize,
    },
    /// Print the header and summary statistics of a checkpoint.
    Inspect {
        /// Path to the checkpoint file.
        checkpoint: PathBuf,
    },
}

fn exit_code_of(e: &HsError) -> u8 {
    match e {
        HsError::StabilityLoss { .. } => 2,
        HsError::Config(_) | HsError::Checkpoint(_) | HsError::Io(_) => 3,
        _ => 1,
    }
}

fn cmd_run(config: &PathBuf) -> Result<u8, HsError> {
    let cfg = RunConfig::load(config)?;
    let report = run(&cfg)?;
    println!("scenario: {}", cfg.scenario);
    println!("records: {}", report.records.len());
    if let Some((t, margin)) = report.stability_loss {
        println!("stability loss at t = {t} (margin {margin:.3e})");
    }
    for v in &report.violations {
        println!("violation: {v}");
    }
    if let Some(trend) = &report.trend {
        println!(
            "torsion integral trend: log-slope {:.4}, decreasing: {}",
            trend.log_slope, trend.decreasing
        );
    }
    println!("outputs in {}", report.outdir.display());
    println!("{}", if report.exit_code == 0 { "PASS" } else { "FAIL" });
    Ok(report.exit_code as u8)
}

fn print_report(label: &str, rep: &TorsionFreeReport) {
    println!("[{label}]");
    println!("  sup |tau|                      = {:.6e}", rep.sup_tau);
    println!("  sup |hat-Laplacian Q|          = {:.6e}", rep.sup_laplacian);
    println!("  sup |Ric - (1/4)<dQ x dQ>_Q|   = {:.6e}", rep.sup_ric_identity);
    println!("  sup |R - closed form|          = {:.6e}", rep.sup_scalar_mismatch);
    println!("  max R (closed form)            = {:.6e}", rep.max_scalar);
    println!("  sup |dQ|^2_Q                   = {:.6e}", rep.sup_dq_norm_sq);
}

fn cmd_verify_donaldson(
    w0: f64,
    delta: f64,
    tol: f64,
    coarse: usize,
    fine: usize,
) -> Result<u8, HsError> {
    let mut ok = true;

    // Quadratic potential: the flat hyperkahler chart, exact to rounding.
    let quad = PotentialData::quadratic(1.0);
    quad.validate(9, 1e-12)?;
    let ct = build_chart_triple(&quad, coarse)?;
    let rep = hsflow::donaldson::verify_torsion_free(&ct)?;
    print_report("quadratic chart", &rep);
    for r in [rep.sup_tau, rep.sup_laplacian, rep.sup_ric_identity] {
        if r > tol {
            ok = false;
        }
    }

    // Separable ansatz: non-flat torsion-free chart with a convergence study.
    let sol = solve_w_ode(w0, delta, tol.max(1e-10))?;
    println!(
        "w-ODE: delta = {:.6} (requested {delta}), residual = {:.3e}",
        sol.delta, sol.max_residual
    );
    let pd = PotentialData::ansatz(sol, 1.0);
    pd.validate(9, 1e-8)?;
    let ct_c = build_chart_triple(&pd, coarse)?;
    let ct_f = build_chart_triple(&pd, fine)?;
    let rep_c = hsflow::donaldson::verify_torsion_free(&ct_c)?;
    let rep_f = hsflow::donaldson::verify_torsion_free(&ct_f)?;
    print_report(&format!("ansatz chart n = {coarse}"), &rep_c);
    print_report(&format!("ansatz chart n = {fine}"), &rep_f);
    println!("[convergence orders {coarse} -> {fine}]");
    for (name, a, b) in [
        ("tau", rep_c.sup_tau, rep_f.sup_tau),
        ("laplacian", rep_c.sup_laplacian, rep_f.sup_laplacian),
        ("ric", rep_c.sup_ric_identity, rep_f.sup_ric_identity),
        ("scalar", rep_c.sup_scalar_mismatch, rep_f.sup_scalar_mismatch),
    ] {
        let order = (a / b).log2();
        println!("  {name:<10} order {order:.3}");
        if order < 2.8 {
            ok = false;
        }
    }
    if rep_f.max_scalar <= 0.0 {
        println!("  no positive scalar curvature found");
        ok = false;
    }
    println!("{}", if ok { "PASS" } else { "FAIL" });
    Ok(if ok { 0 } else { 1 })
}

fn cmd_inspect(path: &PathBuf) -> Result<u8, HsError> {
    let (state, header) = read_checkpoint(path)?;
    println!("format:   {}", header.format);
    println!(
        "grid:     {:?} points, lens {:?}, origin {:?}, periodic {}, backend {}",
        header.grid.dims, header.grid.lens, header.grid.origin, header.grid.periodic,
        header.grid.backend
    );
    println!("t:        {}", header.t);
    println!("dt:       {}", header.dt);
    println!("step:     {}", header.step);
    println!("chart:    {}", header.chart);
    let (mut tr_lo, mut tr_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for q in &state.q {
        let tr = q.trace();
        tr_lo = tr_lo.min(tr);
        tr_hi = tr_hi.max(tr);
    }
    println!("margin:   {:.6e}", state.margin);
    println!("tr Q:     [{tr_lo:.12}, {tr_hi:.12}]");
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = match &cli.cmd {
        Cmd::Run { config } => cmd_run(config),
        Cmd::VerifyDonaldson {
            w0,
            delta,
            tol,
            coarse,
            fine,
        } => cmd_verify_donaldson(*w0, *delta, *tol, *coarse, *fine),
        Cmd::Inspect { checkpoint } => cmd_inspect(checkpoint),
    };
    match out {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_of(&e))
        }
    }
}
