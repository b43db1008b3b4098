from typing import Any, Dict, List, Literal, Optional

import numpy as np

from metamorphic_mhe.bench.experiments import noise_boxes, sweep_lambda
from metamorphic_mhe.bench.reports import sweep_csv
from metamorphic_mhe.config.config import ExperimentConfig
from metamorphic_mhe.core.app import mcp
from metamorphic_mhe.errors import RpiError
from metamorphic_mhe.estimation.mhe_init import analysis_table, decay_monotonicity_report
from metamorphic_mhe.estimation.riccati import phi_monotonicity_report
from metamorphic_mhe.estimation.setops import disturbance_box, rpi_box_outer
from metamorphic_mhe.models.estimation_types import (
    DecayReport,
    LambdaAnalysisRow,
    MonotonicityReport,
)
from metamorphic_mhe.utils.linalg import spectral_radius

DEFAULT_GRID = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]


def get_context(ctx):
    """Return the served experiment and its system from the MCP context."""
    lifespan = ctx.request_context.lifespan_context
    return lifespan.experiment, lifespan.system


@mcp.tool()
def phi_monotonicity(
    lambdas: Optional[List[float]] = None,
    k_max: int = 50,
    mode: Literal["theorem", "corollary"] = "theorem",
) -> MonotonicityReport:
    """
    Check that the arrival-cost matrix Phi_k grows with lambda.

    Iterates the augmented Riccati recursion for every lambda on the grid from
    Phi_0 = phi0_scale * I and reports the minimum eigenvalue of each adjacent
    difference Phi_k(lambda_high) - Phi_k(lambda_low).

    Args:
        lambdas: Lambda grid in (0, 1) (default: 0.1 .. 0.9)
        k_max: Number of Riccati steps
        mode: "theorem" compares iterates k = 0..k_max, "corollary" the steady states

    Returns:
        MonotonicityReport with one row per (lambda pair, k)
    """
    ctx = mcp.get_context()
    spec, system = get_context(ctx)
    n = system.plant.n
    return phi_monotonicity_report(
        system.plant,
        system.observer,
        system.M,
        system.Q,
        system.R,
        spec.phi0_scale * np.eye(2 * n),
        lambdas or DEFAULT_GRID,
        k_max,
        mode=mode,
    )


@mcp.tool()
def rpi_box(
    w_half_width: Optional[float] = None, v_half_width: Optional[float] = None
) -> Dict[str, Any]:
    """
    Compute an outer robust positively invariant box for the pre-estimator error.

    Args:
        w_half_width: Process noise half-width (default: from the experiment)
        v_half_width: Measurement noise half-width (default: from the experiment)

    Returns:
        Dictionary with the box bounds, or the reason no box exists
    """
    ctx = mcp.get_context()
    spec, system = get_context(ctx)
    updates = {}
    if w_half_width is not None:
        updates["w_half_width"] = w_half_width
    if v_half_width is not None:
        updates["v_half_width"] = v_half_width
    spec = spec.model_copy(update=updates)
    w_box, v_box = noise_boxes(spec, system.plant)
    A_L = system.observer.A_L
    Q_box = disturbance_box(system.plant.G, w_box, system.observer.L, v_box)
    result: Dict[str, Any] = {
        "spectral_radius": float(system.observer.spectral_radius),
        "abs_spectral_radius": spectral_radius(np.abs(A_L)),
    }
    try:
        box = rpi_box_outer(A_L, Q_box)
    except RpiError as e:
        result.update(exists=False, reason=str(e))
        return result
    result.update(exists=True, lower=box.lower.tolist(), upper=box.upper.tolist())
    return result


@mcp.tool()
def decay_monotonicity(
    lambdas: Optional[List[float]] = None,
    mu: Optional[float] = None,
    mu_bar: Optional[float] = None,
) -> DecayReport:
    """
    Check that the decay weight of the initial-state estimator grows with lambda.

    Args:
        lambdas: Lambda grid in [0, 1] (default: the experiment's lambdas)
        mu: Prior weight at lambda = 1 (default: from the experiment)
        mu_bar: Prior weight at lambda = 0 (default: from the experiment)

    Returns:
        DecayReport with minimum eigenvalues of adjacent differences
    """
    ctx = mcp.get_context()
    spec, system = get_context(ctx)
    return decay_monotonicity_report(
        system.plant,
        system.observer.L,
        spec.horizon,
        lambdas or spec.lambdas,
        spec.mu if mu is None else mu,
        spec.mu_bar if mu_bar is None else mu_bar,
    )


@mcp.tool()
def bound_report(
    lambdas: Optional[List[float]] = None,
    mu: Optional[float] = None,
    mu_bar: Optional[float] = None,
    z_w: Optional[float] = None,
    z_v: Optional[float] = None,
) -> List[LambdaAnalysisRow]:
    """
    Error-bound parameters of the initial-state estimator per lambda.

    Args:
        lambdas: Lambda grid in (0, 1) (default: 0.1 .. 0.9)
        mu: Prior weight at lambda = 1 (default: from the experiment)
        mu_bar: Prior weight at lambda = 0 (default: from the experiment)
        z_w: Bound on the process noise norm (default: from the noise box)
        z_v: Bound on the measurement noise norm (default: from the noise box)

    Returns:
        List of LambdaAnalysisRow objects
    """
    ctx = mcp.get_context()
    spec, system = get_context(ctx)
    m, p = system.plant.m, system.plant.p
    return analysis_table(
        system.plant,
        system.observer.L,
        spec.horizon,
        lambdas or DEFAULT_GRID,
        spec.mu if mu is None else mu,
        spec.mu_bar if mu_bar is None else mu_bar,
        spec.w_half_width * np.sqrt(m) if z_w is None else z_w,
        spec.v_half_width * np.sqrt(p) if z_v is None else z_v,
    )


@mcp.tool()
def lambda_sweep(scenarios: int = 20, lambdas: Optional[List[float]] = None) -> str:
    """
    Run a Monte Carlo lambda sweep and return the ARMSE table as CSV.

    Args:
        scenarios: Number of seeded scenarios
        lambdas: Lambda grid (default: the experiment's lambdas)

    Returns:
        CSV with one row per lambda and a FIR baseline row
    """
    ctx = mcp.get_context()
    spec, _ = get_context(ctx)
    spec = ExperimentConfig.model_validate({**spec.model_dump(), "scenarios": scenarios})
    return sweep_csv(sweep_lambda(spec, lambdas))
