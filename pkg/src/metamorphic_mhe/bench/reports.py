"""CSV rendering of reports and trajectories."""

import csv
import io
import logging
import sys
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel

from metamorphic_mhe.models.bench_types import SweepTable, TrajectoryLog

logger = logging.getLogger(__name__)


def _cell(value: Any) -> Any:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return value


def rows_csv(rows: Sequence[Dict[str, Any]], columns: Optional[List[str]] = None) -> str:
    if not rows and columns is None:
        return ""
    columns = columns or list(rows[0].keys())
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _cell(row.get(k)) for k in columns})
    return buf.getvalue()


def models_csv(rows: Sequence[BaseModel], exclude: Optional[set] = None) -> str:
    """One CSV line per model, columns from the serialized field names."""
    return rows_csv([r.model_dump(by_alias=True, exclude=exclude) for r in rows])


def sweep_csv(table: SweepTable) -> str:
    """Columns: estimator, lambda, armse, scenarios, failures, monotone_decreasing,
    fir_bracketed, spec_hash."""
    rows = []
    for r in table.rows:
        row = r.model_dump(by_alias=True)
        row.update(
            monotone_decreasing=table.monotone_decreasing,
            fir_bracketed=table.fir_bracketed,
            spec_hash=table.spec_hash,
        )
        rows.append(row)
    return rows_csv(rows)


def trajectory_csv(log: TrajectoryLog) -> str:
    """Columns: t, x_i, y_j, then per estimator est[label]_i and err[label]."""
    n, p = log.states.shape[1], log.outputs.shape[1]
    columns = ["t"] + [f"x{i}" for i in range(n)] + [f"y{j}" for j in range(p)]
    labels = list(log.estimates)
    for label in labels:
        columns += [f"{label}_x{i}" for i in range(n)] + [f"{label}_err"]

    errors = {label: log.error_norms(label) for label in labels}
    rows = []
    for t in range(log.length):
        row: Dict[str, Any] = {"t": t}
        row.update({f"x{i}": float(log.states[t, i]) for i in range(n)})
        row.update({f"y{j}": float(log.outputs[t, j]) for j in range(p)})
        for label in labels:
            est = log.estimates[label][t]
            if np.any(np.isnan(est)):
                continue
            row.update({f"{label}_x{i}": float(est[i]) for i in range(n)})
            row[f"{label}_err"] = float(errors[label][t])
        rows.append(row)
    return rows_csv(rows, columns)


def write_output(text: str, out: Optional[str] = None) -> None:
    """Write to ``out`` or, when not given, to standard output."""
    if out is None:
        sys.stdout.write(text)
        return
    with open(out, "w") as f:
        f.write(text)
    logger.info(f"Wrote {out}")
