"""Dense convex QP solver.

Minimizes 1/2 z'Hz + g'z subject to A_in z <= b_in with a dual active-set
method: start from the unconstrained minimizer, repeatedly add the most
violated constraint, and drop active constraints whose multipliers would
turn negative. Infeasible problems end with a Farkas certificate.
"""

import logging
from typing import Optional

import numpy as np
from scipy import linalg

from metamorphic_mhe.errors import SingularMatrixError
from metamorphic_mhe.models.estimation_types import QpProblem, QpSolution, QpStatus

logger = logging.getLogger(__name__)


def kkt_residual(qp: QpProblem, z: np.ndarray, duals: np.ndarray) -> float:
    """Largest violation of stationarity, primal and dual feasibility and
    complementarity."""
    stationarity = qp.H @ z + qp.g + qp.A_in.T @ duals
    slack = qp.A_in @ z - qp.b_in
    parts = [
        np.max(np.abs(stationarity), initial=0.0),
        np.max(slack, initial=0.0),
        np.max(-duals, initial=0.0),
        abs(float(duals @ slack)) if duals.size else 0.0,
    ]
    return float(max(parts))


def objective(qp: QpProblem, z: np.ndarray) -> float:
    return float(0.5 * z @ qp.H @ z + qp.g @ z)


def _factor(H: np.ndarray):
    d = H.shape[0]
    floor = 1e-12 * max(float(np.trace(H)), 1e-300) / max(d, 1)
    if d and float(np.linalg.eigvalsh(H)[0]) < floor:
        raise SingularMatrixError("QP Hessian is not positive definite", float(np.linalg.cond(H)))
    try:
        return linalg.cho_factor(H, lower=True)
    except linalg.LinAlgError as e:
        raise SingularMatrixError(
            "QP Hessian is not positive definite", float(np.linalg.cond(H))
        ) from e


def solve(qp: QpProblem, tol: float = 1e-8, max_iter: Optional[int] = None) -> QpSolution:
    """Solve ``qp`` to KKT tolerance ``tol``.

    The result status is OPTIMAL, INFEASIBLE (with ``certificate`` y >= 0,
    A_in'y = 0, b_in'y < 0) or ITERATION_LIMIT (best iterate so far).
    """
    d, c = qp.dim, qp.n_constraints
    if max_iter is None:
        max_iter = 10 * (d + c) ** 2
    factor = _factor(np.asarray(qp.H))
    # constraints in the form N_i' z >= b_i
    N = -np.asarray(qp.A_in)
    b = -np.asarray(qp.b_in)

    priority = np.zeros(c, dtype=bool)
    if qp.warm_start is not None and c:
        # constraints active at the warm start are added first
        priority = np.abs(N @ qp.warm_start - b) <= tol * (1.0 + np.abs(b))

    z = -linalg.cho_solve(factor, qp.g)
    active: list[int] = []
    u = np.zeros(0)
    iterations = 0

    def result(status: QpStatus, certificate: Optional[np.ndarray] = None) -> QpSolution:
        duals = np.zeros(c)
        if active:
            duals[active] = np.maximum(u, 0.0)
        return QpSolution(
            z=z,
            duals=duals,
            status=status,
            kkt_residual=kkt_residual(qp, z, duals),
            objective=objective(qp, z),
            iterations=iterations,
            active_set=sorted(active),
            certificate=certificate,
        )

    while True:
        if c == 0:
            return result(QpStatus.OPTIMAL)
        slack = N @ z - b
        violated = slack < -tol
        if active:
            violated[active] = False
        if not np.any(violated):
            return result(QpStatus.OPTIMAL)
        pool = violated & priority if np.any(violated & priority) else violated
        candidates = np.flatnonzero(pool)
        p = int(candidates[np.argmin(slack[candidates])])
        n_p = N[p]
        u_p = 0.0

        while True:
            iterations += 1
            if iterations > max_iter:
                logger.warning(f"QP solver hit the iteration limit ({max_iter})")
                return result(QpStatus.ITERATION_LIMIT)

            Ginv_np = linalg.cho_solve(factor, n_p)
            if active:
                Na = N[active].T
                Ginv_Na = linalg.cho_solve(factor, Na)
                r = linalg.solve(Na.T @ Ginv_Na, Na.T @ Ginv_np, assume_a="pos")
                step_dir = Ginv_np - Ginv_Na @ r
            else:
                r = np.zeros(0)
                step_dir = Ginv_np
            curvature = float(step_dir @ n_p)
            scale = float(n_p @ Ginv_np)

            # largest dual step keeping active multipliers nonnegative
            t1, k_drop = np.inf, -1
            for j, rj in enumerate(r):
                if rj > 1e-12 * max(1.0, np.max(np.abs(r))):
                    ratio = u[j] / rj
                    if ratio < t1:
                        t1, k_drop = ratio, j

            s_p = float(n_p @ z - b[p])
            t2 = np.inf if curvature <= 1e-12 * scale else -s_p / curvature

            if not np.isfinite(t1) and not np.isfinite(t2):
                y = np.zeros(c)
                if active:
                    y[active] = np.maximum(-r, 0.0)
                y[p] = 1.0
                logger.warning(f"QP infeasible at constraint {p}")
                return result(QpStatus.INFEASIBLE, certificate=y)

            if not np.isfinite(t2):
                # n_p is dependent on the active normals: dual step only
                u = u - t1 * r
                u_p += t1
                del active[k_drop]
                u = np.delete(u, k_drop)
                continue

            t = min(t1, t2)
            z = z + t * step_dir
            u = u - t * r
            u_p += t
            if t2 <= t1:
                active.append(p)
                u = np.append(u, u_p)
                break
            del active[k_drop]
            u = np.delete(u, k_drop)


def dump_problem(qp: QpProblem, file_path: str) -> None:
    """Write a QP to JSON for reproducing solver issues."""
    with open(file_path, "w") as f:
        f.write(qp.model_dump_json(indent=2))
    logger.debug(f"QP problem written to {file_path}")
