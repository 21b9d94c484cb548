"""Smoke test for the Python bindings: exercises every exported entry point
at a small grid size and checks the headline invariants."""

import math
import tempfile
from pathlib import Path

import hsflow_lab as hs


def main() -> None:
    # Flat fixed point: zero torsion, tr Q = 3, margin 1.
    flat = hs.FlowState.flat(n=8)
    assert abs(flat.margin - 1.0) < 1e-12, flat.margin
    assert max(flat.torsion_norm_sq()) < 1e-20
    q = flat.q_at(0)
    assert all(abs(q[i][j] - (1.0 if i == j else 0.0)) < 1e-12 for i in range(3) for j in range(3))

    # Perturbed state: step a few times, volume must not decrease.
    s = hs.FlowState.perturbed(0.05, n=8, seed=1)
    dt = s.suggest_dt()
    v0 = s.volume()
    s.step(dt, steps=5)
    assert s.t > 0 and s.volume() >= v0 - 1e-12, (s.t, s.volume(), v0)
    d = s.diagnostics()
    assert abs(d["max_det_q_drift"]) < 1e-12
    assert d["volume"] <= d["volume_bound_rhs"] + 1e-10

    # Checkpoint round-trip.
    with tempfile.TemporaryDirectory() as tmp:
        ckpt = Path(tmp) / "state.hsc"
        s.save(ckpt, dt=dt, step=5)
        back = hs.FlowState.load(ckpt)
        assert abs(back.t - s.t) < 1e-15
        assert max(
            abs(a - b) for a, b in zip(back.torsion_norm_sq(), s.torsion_norm_sq())
        ) < 1e-15

        # Tiny flat run through the config front end.
        report = hs.run_config(
            f"n = 8\nscenario = flat\nt_end = 0.05\noutdir = {tmp}/out\n"
        )
        assert report["exit_code"] == 0 and report["records"] >= 1, report

    # Anisotropic construction: tr Q = 2 lambda + lambda^-2.
    lam = 0.9
    aniso = hs.FlowState.anisotropic(lam, n=8)
    tr = sum(aniso.q_at(0)[i][i] for i in range(3))
    assert abs(tr - (2 * lam + lam**-2)) < 1e-12, tr

    # Torsion-free quadratic chart is exact.
    rep = hs.chart_report("quadratic", n=9)
    assert rep["sup_tau"] < 1e-9 and rep["sup_laplacian"] < 1e-9, rep

    # Calabi comparison closed form and pole.
    a = 2.0
    assert abs(hs.calabi_pole(a) - 4 * math.sqrt(2) / a) < 1e-14
    x = 0.5 * hs.calabi_pole(a)
    assert hs.calabi(a, x) > a
    assert abs(hs.calabi_residual(a, x)) < 1e-10

    print("smoke test passed")


if __name__ == "__main__":
    main()
