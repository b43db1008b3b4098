"""Monte Carlo ARMSE experiments and lambda sweeps.

Scenario i uses seed base_seed + i. Each scenario draws, in order, the true
initial state, the estimator's initial guess, then the noise sequences.
Aggregation is ordered by scenario index, so reports are a pure function of
the experiment configuration.
"""

import hashlib
import logging
from typing import Dict, List, Optional, Sequence

import numpy as np

from metamorphic_mhe.bench.scenarios import ExperimentSystem, build_system
from metamorphic_mhe.bench.simulation import make_rng, simulate
from metamorphic_mhe.config.config import ExperimentConfig, Framework
from metamorphic_mhe.errors import (
    ConvergenceError,
    DivergenceError,
    InfeasibleError,
    NotSchurError,
    SingularMatrixError,
    WindowNotReadyError,
)
from metamorphic_mhe.estimation.fir_baseline import UfirEstimator
from metamorphic_mhe.estimation.linmodel import augment
from metamorphic_mhe.estimation.mhe_init import InitialStateMhe, InitMheConfig
from metamorphic_mhe.estimation.mmhe_full import MetamorphicMhe, MmheConfig
from metamorphic_mhe.estimation.riccati import qe_weights, steady_state_augmented
from metamorphic_mhe.models.bench_types import (
    ArmseEntry,
    ArmseReport,
    ComparisonRow,
    SweepRow,
    SweepTable,
    TrajectoryLog,
)
from metamorphic_mhe.models.system_types import Box, LinearPlant

logger = logging.getLogger(__name__)

FIR_LABEL = "fir"

# Failures that abort one estimator on one scenario; everything else propagates.
ESTIMATOR_FAILURES = (InfeasibleError, SingularMatrixError, ConvergenceError, NotSchurError)


def mhe_label(lam: float) -> str:
    return f"mhe(lambda={lam:g})"


def estimator_labels(spec: ExperimentConfig) -> List[str]:
    if spec.framework == Framework.FIR:
        return [FIR_LABEL]
    labels = [mhe_label(lam) for lam in spec.lambdas]
    if spec.include_fir:
        labels.append(FIR_LABEL)
    return labels


def spec_hash(spec: ExperimentConfig) -> str:
    return hashlib.sha256(spec.model_dump_json().encode("utf-8")).hexdigest()


def evaluation_rows(spec: ExperimentConfig) -> range:
    """Trajectory rows whose errors enter the RMSE.

    The initial-state estimator is scored on x_{t-N} for t in the evaluation
    window; the other frameworks on x_t.
    """
    start = spec.eval_start
    if spec.framework == Framework.SECTION3:
        start -= spec.horizon
    return range(start, start + spec.eval_length)


def scenario_rmse(log: TrajectoryLog, label: str, rows: range) -> float:
    """sqrt(mean ||e_t||^2) over the evaluation rows.

    Raises WindowNotReadyError when a row has no estimate and DivergenceError
    when an estimate is infinite.
    """
    err = log.error_norms(label)[rows.start : rows.stop]
    if np.any(np.isnan(err)):
        raise WindowNotReadyError(f"{label} has no estimate inside the evaluation window")
    if not np.all(np.isfinite(err)):
        raise DivergenceError(f"{label} diverged inside the evaluation window")
    return float(np.sqrt(np.mean(err**2)))


def noise_boxes(spec: ExperimentConfig, plant: LinearPlant) -> tuple[Box, Box]:
    return (
        Box.symmetric(spec.w_half_width * np.ones(plant.m)),
        Box.symmetric(spec.v_half_width * np.ones(plant.p)),
    )


def arrival_weights(spec: ExperimentConfig, system: ExperimentSystem) -> Dict[float, np.ndarray]:
    """Phi_0 per lambda for the augmented-state estimator."""
    out: Dict[float, np.ndarray] = {}
    n = system.plant.n
    aug = augment(system.plant, system.observer)
    for lam in spec.lambdas:
        if lam == 0.0:
            continue
        if spec.arrival == "fixed":
            out[lam] = spec.phi0_scale * np.eye(2 * n)
        else:
            weights = qe_weights(lam, system.M, system.Q)
            out[lam] = steady_state_augmented(aug, weights, system.R).value
    return out


def _fail(log: TrajectoryLog, label: str, index: int, err: Exception) -> None:
    logger.error(f"Scenario {index} (seed {log.seed}): {label} failed: {err}")
    log.failed.append(label)


def _run_initial_state(
    spec: ExperimentConfig, system: ExperimentSystem, log: TrajectoryLog, prior: np.ndarray, index: int
) -> None:
    plant, L, N = system.plant, system.observer.L, spec.horizon
    for lam in spec.lambdas:
        label = mhe_label(lam)
        config = InitMheConfig(
            plant=plant, L=L, horizon=N, lam=lam, mu=spec.mu, mu_bar=spec.mu_bar
        )
        est = InitialStateMhe(config, prior)
        out = np.full((log.length, plant.n), np.nan)
        try:
            for t, y in enumerate(log.outputs):
                xhat = est.step(y)
                if xhat is not None:
                    out[t - N] = xhat
        except ESTIMATOR_FAILURES as e:
            _fail(log, label, index, e)
            continue
        log.estimates[label] = out


def _run_fir(
    spec: ExperimentConfig, plant: LinearPlant, log: TrajectoryLog, index: int, current: bool
) -> None:
    fir = UfirEstimator(plant, spec.horizon)
    out = np.full((log.length, plant.n), np.nan)
    try:
        for t, y in enumerate(log.outputs):
            est = fir.step(y)
            if est is None:
                continue
            if current:
                out[t] = est.current
            else:
                out[t - spec.horizon] = est.start
    except ESTIMATOR_FAILURES as e:
        _fail(log, FIR_LABEL, index, e)
        return
    log.estimates[FIR_LABEL] = out


def _run_augmented(
    spec: ExperimentConfig,
    system: ExperimentSystem,
    log: TrajectoryLog,
    guess: np.ndarray,
    arrivals: Dict[float, np.ndarray],
    index: int,
) -> None:
    plant, n = system.plant, system.plant.n
    w_box, v_box = noise_boxes(spec, plant)
    ys = log.outputs[:-1]
    for lam in spec.lambdas:
        label = mhe_label(lam)
        config = MmheConfig(
            plant=plant,
            observer=system.observer,
            lam=lam,
            M=system.M,
            Q=system.Q,
            R=system.R,
            horizon=spec.horizon,
            state_box=Box.symmetric(spec.state_box_half_width * np.ones(n)),
            process_box=w_box,
            measurement_box=v_box,
            x0_prior=guess,
            Phi0=arrivals.get(lam),
        )
        try:
            xs = MetamorphicMhe(config).run(ys)
        except ESTIMATOR_FAILURES as e:
            _fail(log, label, index, e)
            continue
        log.estimates[label] = xs[:, :n] + xs[:, n:]

    if not spec.include_fir:
        return
    # UFIR over y_{T-N}..y_{T-1}, then one model step to T. The observer error
    # block is unobservable through C_e, so the plant model is used.
    fir = UfirEstimator(plant, spec.horizon - 1)
    out = np.full((log.length, n), np.nan)
    try:
        for k, y in enumerate(ys):
            est = fir.step(y)
            if est is not None:
                out[k + 1] = fir.predict(est)
    except ESTIMATOR_FAILURES as e:
        _fail(log, FIR_LABEL, index, e)
        return
    log.estimates[FIR_LABEL] = out


def run_scenario(
    spec: ExperimentConfig,
    index: int,
    system: Optional[ExperimentSystem] = None,
    arrivals: Optional[Dict[float, np.ndarray]] = None,
    exact_prior: bool = False,
) -> TrajectoryLog:
    """Simulate scenario ``index`` and run every configured estimator on it.

    With ``exact_prior`` the estimators start from the true (augmented) state.
    """
    system = system or build_system(spec)
    plant, n = system.plant, system.plant.n
    seed = spec.base_seed + index
    rng = make_rng(seed)
    w_box, v_box = noise_boxes(spec, plant)

    if spec.framework == Framework.SECTION2:
        truth = np.concatenate([5.0 * np.ones(n), 10.0 * np.ones(n)])
        guess = rng.standard_normal(2 * n)
        x0 = truth[:n] + truth[n:]
    else:
        x0 = rng.standard_normal(n)
        guess = rng.standard_normal(n)
        truth = x0
    if exact_prior:
        guess = truth.copy()

    log = simulate(plant, w_box, v_box, spec.t_sim, rng, x0)
    log.seed = seed

    if spec.framework == Framework.SECTION2:
        if arrivals is None:
            arrivals = arrival_weights(spec, system)
        _run_augmented(spec, system, log, guess, arrivals, index)
    elif spec.framework == Framework.SECTION3:
        _run_initial_state(spec, system, log, guess, index)
        if spec.include_fir:
            _run_fir(spec, plant, log, index, current=False)
    else:
        _run_fir(spec, plant, log, index, current=True)
    return log


def run_monte_carlo(spec: ExperimentConfig) -> ArmseReport:
    """ARMSE per estimator over ``spec.scenarios`` seeded scenarios."""
    system = build_system(spec)
    arrivals = arrival_weights(spec, system) if spec.framework == Framework.SECTION2 else None
    labels = estimator_labels(spec)
    rows = evaluation_rows(spec)
    rmse: Dict[str, List[float]] = {label: [] for label in labels}
    failures: Dict[str, int] = {label: 0 for label in labels}
    seeds = []

    logger.info(
        f"Running {spec.scenarios} scenarios ({spec.framework.value}, lambdas {spec.lambdas})"
    )
    for i in range(spec.scenarios):
        log = run_scenario(spec, i, system=system, arrivals=arrivals)
        seeds.append(log.seed)
        for label in labels:
            if label in log.failed:
                failures[label] += 1
                continue
            try:
                rmse[label].append(scenario_rmse(log, label, rows))
            except DivergenceError as e:
                _fail(log, label, i, e)
                failures[label] += 1
        if (i + 1) % 50 == 0:
            logger.info(f"Completed {i + 1}/{spec.scenarios} scenarios")

    entries = []
    for label in labels:
        lam = None if label == FIR_LABEL else spec.lambdas[labels.index(label)]
        values = rmse[label]
        armse = float(np.mean(values)) if values else float("nan")
        entries.append(
            ArmseEntry(estimator=label, lam=lam, armse=armse, rmse=values, failures=failures[label])
        )
        logger.info(f"{label}: ARMSE {armse:.4f} ({failures[label]} failed scenarios)")
    return ArmseReport(
        entries=entries, seeds=seeds, spec_hash=spec_hash(spec), framework=spec.framework.value
    )


def _with(spec: ExperimentConfig, **changes) -> ExperimentConfig:
    return ExperimentConfig.model_validate({**spec.model_dump(), **changes})


def sweep_lambda(spec: ExperimentConfig, lambdas: Optional[Sequence[float]] = None) -> SweepTable:
    """One ARMSE row per lambda plus the FIR row, with the monotonicity flag."""
    grid = sorted(float(v) for v in (lambdas if lambdas is not None else spec.lambdas))
    spec = _with(spec, lambdas=grid, include_fir=True)
    report = run_monte_carlo(spec)
    rows = [
        SweepRow(
            estimator=e.estimator,
            lam=e.lam,
            armse=e.armse,
            scenarios=len(e.rmse),
            failures=e.failures,
        )
        for e in report.entries
    ]
    mhe = [r.armse for r in rows if r.estimator != FIR_LABEL]
    monotone = all(a > b for a, b in zip(mhe, mhe[1:]))

    bracketed = None
    if FIR_LABEL in [r.estimator for r in rows] and 0.25 in grid and 0.5 in grid:
        fir = report.entry(FIR_LABEL).armse
        low, high = report.entry(mhe_label(0.5)).armse, report.entry(mhe_label(0.25)).armse
        bracketed = min(low, high) <= fir <= max(low, high)
        logger.info(f"FIR ARMSE {fir:.4f} between lambda=0.25 and 0.5: {bracketed}")
    logger.info(f"ARMSE strictly decreasing in lambda: {'PASS' if monotone else 'FAIL'}")
    return SweepTable(
        rows=rows, monotone_decreasing=monotone, fir_bracketed=bracketed, spec_hash=report.spec_hash
    )


def compare_fir(spec: ExperimentConfig) -> List[ComparisonRow]:
    """ARMSE of each estimator with its ratio to the FIR baseline."""
    report = run_monte_carlo(_with(spec, include_fir=True))
    fir = report.entry(FIR_LABEL).armse
    return [
        ComparisonRow(
            estimator=e.estimator,
            armse=e.armse,
            ratio_to_fir=e.armse / fir if fir > 0.0 else None,
        )
        for e in report.entries
    ]
