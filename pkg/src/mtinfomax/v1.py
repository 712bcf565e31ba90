"""Model V1 layer: von Mises direction tuning and the linear stimulus map."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .stimulus import DirectionGrid, Stimulus, circular_difference


def von_mises_response(theta_deg, c_deg, sigma=math.pi / 2):
    """Peak-normalized von Mises tuning, 1 at the preferred direction and 0 opposite.

    ``(exp((cos(d) - 1) / sigma**2) - b) / (1 - b)`` with ``b = exp(-2 / sigma**2)``.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    delta = np.deg2rad(circular_difference(theta_deg, c_deg))
    b = math.exp(-2.0 / sigma**2)
    out = (np.exp((np.cos(delta) - 1.0) / sigma**2) - b) / (1.0 - b)
    # roundoff can push the antipodal value a hair below zero
    out = np.clip(out, 0.0, 1.0)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class V1Params:
    """V1 population with ``m_cells`` preferred directions ``c_m = m * 360 / M``.

    With the default ``M = 24`` this is ``c_m = 15 deg * m``.
    """

    m_cells: int = 24
    sigma: float = math.pi / 2

    def __post_init__(self):
        if int(self.m_cells) != self.m_cells or self.m_cells < 1:
            raise ValueError("m_cells must be a positive integer")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def preferred_dirs_deg(self) -> np.ndarray:
        return (360.0 / self.m_cells) * np.arange(1, self.m_cells + 1)

    @cached_property
    def baseline_b(self) -> float:
        return math.exp(-2.0 / self.sigma**2)

    def tuning_matrix(self, grid: DirectionGrid) -> np.ndarray:
        """``V[m, i] = v_m(theta_i)``, shape (M, n_dirs)."""
        return von_mises_response(grid.directions_deg[None, :],
                                  self.preferred_dirs_deg[:, None], self.sigma)


def v1_encode(params: V1Params, stimulus, grid: DirectionGrid | None = None) -> np.ndarray:
    """V1 responses ``x_m = sum_i v_m(theta_i) s_i``.

    ``stimulus`` may be a :class:`Stimulus` or a raw intensity array of shape
    (n_dirs,) or (n, n_dirs); raw arrays need ``grid``.
    """
    if isinstance(stimulus, Stimulus):
        grid, s = stimulus.grid, stimulus.intensities
    else:
        if grid is None:
            raise ValueError("grid is required when encoding raw intensity arrays")
        s = np.asarray(stimulus, dtype=float)
    if s.shape[-1] != grid.n_dirs:
        raise ValueError(f"intensity vectors must have length {grid.n_dirs}")
    return s @ params.tuning_matrix(grid).T
