"""Python interface to the hypersymplectic flow laboratory.

The native module exposes the flow state (scenario constructors, RK4
stepping, diagnostics, checkpoints), the run loop, the torsion-free
reference charts, and the Calabi comparison closed form.
"""

from .hsflow_py import (
    FlowState,
    calabi,
    calabi_pole,
    calabi_residual,
    chart_report,
    run_config,
)

__all__ = [
    "FlowState",
    "calabi",
    "calabi_pole",
    "calabi_residual",
    "chart_report",
    "run_config",
]
