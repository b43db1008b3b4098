"""Seeded simulation of x+ = A x + B u + G w, y = C x + v with uniform
bounded noise.

Random numbers come from numpy's Philox counter-based generator seeded with
the scenario seed. Draw order is fixed: caller draws (initial states), then
all process noise, then all measurement noise.
"""

from typing import Optional, Union

import numpy as np

from metamorphic_mhe.errors import DimensionError
from metamorphic_mhe.models.bench_types import TrajectoryLog
from metamorphic_mhe.models.system_types import Box, LinearPlant

Seed = Union[int, np.random.Generator]


def make_rng(seed: Seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(int(seed)))


def uniform_box(rng: np.random.Generator, box: Box, count: int) -> np.ndarray:
    """``count`` samples, componentwise uniform over the box."""
    if not box.is_bounded:
        raise ValueError("noise box must be bounded")
    return box.lower + (box.upper - box.lower) * rng.random((count, box.dim))


def simulate(
    plant: LinearPlant,
    w_box: Box,
    v_box: Box,
    t_sim: int,
    seed: Seed,
    x0: np.ndarray,
    inputs: Optional[np.ndarray] = None,
) -> TrajectoryLog:
    """Trajectory x_0..x_{t_sim-1} with outputs y_0..y_{t_sim-1}."""
    if w_box.dim != plant.m or v_box.dim != plant.p:
        raise DimensionError("noise boxes do not match the plant noise dimensions")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (plant.n,):
        raise DimensionError(f"initial state must have {plant.n} entries")
    if plant.q and (inputs is None or np.shape(inputs) != (t_sim, plant.q)):
        raise DimensionError(f"inputs must be a {t_sim}x{plant.q} array")
    rng = make_rng(seed)
    w = uniform_box(rng, w_box, t_sim)
    v = uniform_box(rng, v_box, t_sim)

    x = np.zeros((t_sim, plant.n))
    x[0] = x0
    for k in range(t_sim - 1):
        x[k + 1] = plant.A @ x[k] + plant.G @ w[k]
        if plant.q:
            x[k + 1] += plant.B @ inputs[k]
    y = x @ plant.C.T + v
    return TrajectoryLog(
        seed=seed if isinstance(seed, int) else -1,
        states=x,
        outputs=y,
        process_noise=w,
        measurement_noise=v,
        inputs=None if not plant.q else np.asarray(inputs, dtype=float),
    )
