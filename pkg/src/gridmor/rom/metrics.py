import logging
from dataclasses import dataclass, field
from typing import Dict

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)


class GridMismatchError(Exception):
    """Trajectories cannot be brought onto a common time grid"""


@dataclass(frozen=True, eq=False)
class ComparisonReport:
    t: np.ndarray
    rmse: float
    epsilon: Dict[str, float]
    state_errors: pd.DataFrame
    error_norm: np.ndarray
    runtimes: Dict[str, float] = field(default_factory=dict)

    @property
    def speedup(self):
        if self.runtimes.get("rom"):
            return self.runtimes.get("fom", np.nan) / self.runtimes["rom"]
        return np.nan

    def error_frame(self):
        return pd.DataFrame({"t": self.t, "error_norm": self.error_norm})

    def to_dict(self):
        return {
            "rmse": self.rmse,
            "epsilon": dict(self.epsilon),
            "runtimes": dict(self.runtimes),
            "speedup": None if np.isnan(self.speedup) else float(self.speedup),
            "max_error_norm": float(np.max(self.error_norm, initial=0.0)),
        }


def _on_grid(t, X, grid, tol=1e-9):
    if len(t) == len(grid) and np.allclose(t, grid, rtol=0.0, atol=tol):
        return X
    if len(t) < 2:
        raise GridMismatchError("recovered trajectory has fewer than two records")
    if grid[0] < t[0] - tol or grid[-1] > t[-1] + tol:
        raise GridMismatchError(
            f"recovered trajectory covers [{t[0]:g}, {t[-1]:g}], "
            f"reference needs [{grid[0]:g}, {grid[-1]:g}]"
        )
    return np.vstack([np.interp(grid, t, row) for row in X])


def _partition(groups, n):
    counts = np.zeros(n, dtype=int)
    for rows in groups.values():
        np.add.at(counts, np.asarray(rows, dtype=int), 1)
    if np.any(counts != 1):
        raise ValueError("state groups must cover every state exactly once")


def group_index(X_r, X_fom):
    """sqrt(sum_j sum_t (x_r - x_fom)^2 / (N t_f)) over N states and t_f samples."""
    N, t_f = X_fom.shape
    if N == 0 or t_f == 0:
        return 0.0
    return float(np.sqrt(np.sum((X_r - X_fom) ** 2) / (N * t_f)))


def compare(fom, recovered, groups=None, runtimes=None):
    """Accuracy of a recovered reduced trajectory against the full-order one.

    The recovered states are interpolated linearly onto the full-order time
    grid. `groups` maps a name to state rows and defaults to one group.
    """
    if fom.X.shape[0] != recovered.X.shape[0]:
        raise GridMismatchError(
            f"{recovered.X.shape[0]} recovered states against {fom.X.shape[0]} full-order states"
        )
    n = fom.X.shape[0]
    X_r = _on_grid(recovered.t, recovered.X, fom.t)
    error = X_r - fom.X

    groups = {"all": np.arange(n)} if not groups else groups
    _partition(groups, n)
    epsilon = {
        name: group_index(X_r[rows], fom.X[rows]) for name, rows in groups.items()
    }
    rmse = float(np.sqrt(np.mean(error**2))) if error.size else 0.0

    state_errors = pd.DataFrame(
        {
            "state": list(fom.state_names),
            "rms": np.sqrt(np.mean(error**2, axis=1)),
            "max_abs": np.max(np.abs(error), axis=1, initial=0.0),
        }
    )
    report = ComparisonReport(
        t=fom.t.copy(),
        rmse=rmse,
        epsilon=epsilon,
        state_errors=state_errors,
        error_norm=np.linalg.norm(error, axis=0),
        runtimes=dict(runtimes or {}),
    )
    logger.info(
        f"RMSE {rmse:.3e}, "
        + ", ".join(f"{name} {value:.3e}" for name, value in epsilon.items())
    )
    return report
