"""The assembled two-layer network and the subpopulation density vector."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .mt import MTParams, mt_normalized, mt_raw
from .stimulus import DirectionGrid, Stimulus
from .v1 import V1Params

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class DensityVector:
    """Subpopulation fractions ``rho_k >= 0`` with ``sum(rho) == 1``."""

    rho: np.ndarray

    def __post_init__(self):
        rho = np.array(self.rho, dtype=float).reshape(-1)
        if rho.size == 0 or not np.all(np.isfinite(rho)):
            raise ValueError("density must be a nonempty finite vector")
        if np.any(rho < 0) or abs(rho.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"density is not on the probability simplex (sum={rho.sum()!r}, "
                             f"min={rho.min()!r})")
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    @classmethod
    def uniform(cls, k: int) -> "DensityVector":
        return cls(np.full(k, 1.0 / k))

    def __len__(self):
        return self.rho.size

    def __eq__(self, other):
        if not isinstance(other, DensityVector):
            return NotImplemented
        return np.array_equal(self.rho, other.rho)


def as_density(density) -> DensityVector:
    return density if isinstance(density, DensityVector) else DensityVector(density)


@dataclass(frozen=True, eq=False)
class MotionModel:
    """Grid + V1 layer + MT layer. Stimuli map to MT rates deterministically."""

    grid: DirectionGrid
    v1: V1Params
    mt: MTParams

    def __post_init__(self):
        if self.mt.m_inputs != self.v1.m_cells:
            raise ValueError(f"MT weights expect {self.mt.m_inputs} inputs but V1 has "
                             f"{self.v1.m_cells} cells")

    @cached_property
    def tuning_matrix(self) -> np.ndarray:
        return self.v1.tuning_matrix(self.grid)

    def encode(self, stimuli) -> np.ndarray:
        """V1 responses for a :class:`Stimulus` or intensity array(s)."""
        if isinstance(stimuli, Stimulus):
            stimuli = stimuli.intensities
        s = np.asarray(stimuli, dtype=float)
        if s.shape[-1] != self.grid.n_dirs:
            raise ValueError(f"intensity vectors must have length {self.grid.n_dirs}")
        return s @ self.tuning_matrix.T

    def rates(self, stimuli) -> np.ndarray:
        """Normalized MT responses for stimuli (not V1 vectors)."""
        return mt_normalized(self.mt, mt_raw(self.mt, self.encode(stimuli)))

    def with_mt(self, mt: MTParams) -> "MotionModel":
        return MotionModel(self.grid, self.v1, mt)

    @property
    def k_cells(self) -> int:
        return self.mt.k_cells
