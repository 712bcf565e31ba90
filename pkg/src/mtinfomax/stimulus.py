"""Direction grid, single/bidirectional motion stimuli and training-set sampling.

Directions are measured in degrees and increase clockwise (heading
convention), so a positive angular offset means "clockwise of". Grid
directions are ``theta_i = i * spacing`` for ``i = 1..n_dirs`` and indices
passed to the constructors below are 1-based to match that labelling.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

# Separations used for bidirectional training stimuli: 15 deg * n, n = 1..12.
TRAINING_SEPARATIONS_DEG = tuple(15 * n for n in range(1, 13))
DEFAULT_INTENSITY = 1.0


def circular_difference(a_deg, b_deg):
    """Signed difference ``a - b`` wrapped to [-180, 180)."""
    return (np.asarray(a_deg, dtype=float) - b_deg + 180.0) % 360.0 - 180.0


@dataclass(frozen=True)
class DirectionGrid:
    n_dirs: int

    def __post_init__(self):
        if int(self.n_dirs) != self.n_dirs or self.n_dirs < 2:
            raise ValueError(f"n_dirs must be an integer >= 2, got {self.n_dirs!r}")
        if 360 % self.n_dirs:
            raise ValueError(f"n_dirs={self.n_dirs} does not evenly divide 360 degrees")

    @property
    def spacing_deg(self) -> int:
        return 360 // self.n_dirs

    @property
    def directions_deg(self) -> np.ndarray:
        return self.spacing_deg * np.arange(1, self.n_dirs + 1, dtype=float)

    def direction(self, index: int) -> float:
        self._check_index(index)
        return float(self.spacing_deg * index)

    def _check_index(self, index):
        if int(index) != index or not 1 <= index <= self.n_dirs:
            raise IndexError(f"direction index {index} outside 1..{self.n_dirs}")

    def representable_separations(self, candidates=TRAINING_SEPARATIONS_DEG) -> tuple:
        """Subset of ``candidates`` (degrees) that land on grid points."""
        return tuple(int(s) for s in candidates if s % self.spacing_deg == 0 and 0 < s <= 180)

    def separation_steps(self, separation_deg) -> int:
        if separation_deg <= 0 or separation_deg > 180:
            raise ValueError(f"separation must lie in (0, 180] degrees, got {separation_deg}")
        steps = separation_deg / self.spacing_deg
        if steps != int(steps):
            raise ValueError(
                f"separation {separation_deg} deg is not a multiple of the "
                f"{self.spacing_deg} deg grid spacing")
        return int(steps)


def make_grid(n_dirs: int = 24) -> DirectionGrid:
    return DirectionGrid(n_dirs)


def pair_geometry(dir_a_deg, dir_b_deg):
    """Separation and midline (both degrees) of a two-component stimulus.

    The midline is the circular mean of the two directions. For antipodal
    pairs the mean is undefined; we take the point 90 deg clockwise of
    ``dir_a``.
    """
    delta = circular_difference(dir_b_deg, dir_a_deg)
    delta = np.where(delta == -180.0, 180.0, delta)
    separation = np.abs(delta)
    midline = np.mod(np.asarray(dir_a_deg, dtype=float) + delta / 2.0, 360.0)
    if np.ndim(separation) == 0:
        return float(separation), float(midline)
    return separation, midline


@dataclass(frozen=True)
class Stimulus:
    """Intensity vector over the grid with one or two nonzero components."""

    grid: DirectionGrid
    intensities: np.ndarray = field(repr=False)
    component_indices: tuple

    def __post_init__(self):
        s = np.asarray(self.intensities, dtype=float)
        if s.shape != (self.grid.n_dirs,):
            raise ValueError(f"intensity vector must have length {self.grid.n_dirs}")
        if np.any(s < 0):
            raise ValueError("intensities must be nonnegative")
        nonzero = tuple(int(i) + 1 for i in np.flatnonzero(s))
        if len(nonzero) not in (1, 2) or set(nonzero) != set(self.component_indices):
            raise ValueError("a stimulus needs one or two distinct nonzero components")
        s.setflags(write=False)
        object.__setattr__(self, "intensities", s)

    @property
    def is_bidirectional(self) -> bool:
        return len(self.component_indices) == 2

    @property
    def directions_deg(self) -> tuple:
        return tuple(self.grid.direction(i) for i in self.component_indices)

    @property
    def separation_deg(self):
        if not self.is_bidirectional:
            return None
        return pair_geometry(*self.directions_deg)[0]

    @property
    def midline_deg(self):
        if not self.is_bidirectional:
            return None
        return pair_geometry(*self.directions_deg)[1]


def single_stimulus(grid: DirectionGrid, dir_index: int,
                    intensity: float = DEFAULT_INTENSITY) -> Stimulus:
    grid._check_index(dir_index)
    if not intensity > 0:
        raise ValueError("intensity must be positive")
    s = np.zeros(grid.n_dirs)
    s[dir_index - 1] = intensity
    return Stimulus(grid, s, (dir_index,))


def bidirectional_stimulus(grid: DirectionGrid, index_a: int, index_b: int,
                           intensity: float = DEFAULT_INTENSITY) -> Stimulus:
    grid._check_index(index_a)
    grid._check_index(index_b)
    if index_a == index_b:
        raise ValueError("the two motion components must have distinct directions")
    if not intensity > 0:
        raise ValueError("intensity must be positive")
    s = np.zeros(grid.n_dirs)
    s[[index_a - 1, index_b - 1]] = intensity
    return Stimulus(grid, s, (index_a, index_b))


@dataclass(frozen=True, eq=False)
class StimulusBatch:
    """An ordered set of stimuli stored column-wise.

    ``dir_a``/``dir_b`` hold 1-based grid indices; ``dir_b == 0`` marks a
    single-direction stimulus. Indexing and iteration yield
    :class:`Stimulus` objects.
    """

    grid: DirectionGrid
    dir_a: np.ndarray
    dir_b: np.ndarray
    intensity: float
    seed: int | None
    counts: tuple

    def __post_init__(self):
        for name in ("dir_a", "dir_b"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.dir_a.shape != self.dir_b.shape:
            raise ValueError("dir_a and dir_b must have equal length")
        if len(self.dir_a) != sum(self.counts):
            raise ValueError("batch length does not match counts")

    def __len__(self):
        return len(self.dir_a)

    def __getitem__(self, i) -> Stimulus:
        a, b = int(self.dir_a[i]), int(self.dir_b[i])
        if b == 0:
            return single_stimulus(self.grid, a, self.intensity)
        return bidirectional_stimulus(self.grid, a, b, self.intensity)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def intensity_matrix(self, rows=None) -> np.ndarray:
        """Dense (n, n_dirs) intensity matrix, optionally for a subset of rows."""
        a = self.dir_a if rows is None else self.dir_a[rows]
        b = self.dir_b if rows is None else self.dir_b[rows]
        S = np.zeros((len(a), self.grid.n_dirs))
        idx = np.arange(len(a))
        S[idx, a - 1] = self.intensity
        two = b > 0
        S[idx[two], b[two] - 1] = self.intensity
        return S

    @cached_property
    def _unique(self):
        lo = np.where(self.dir_b > 0, np.minimum(self.dir_a, self.dir_b), self.dir_a)
        hi = np.where(self.dir_b > 0, np.maximum(self.dir_a, self.dir_b), 0)
        keys = np.stack([lo, hi], axis=1)
        uniq, inverse, counts = np.unique(keys, axis=0, return_inverse=True,
                                          return_counts=True)
        for arr in (uniq, inverse, counts):
            arr.setflags(write=False)
        return uniq, counts, inverse.reshape(-1)

    def unique_stimuli(self):
        """Distinct stimuli as ``(intensity matrix, multiplicity)``.

        Batch averages only depend on the distinct stimuli and how often
        they occur, so objectives are evaluated on this compressed form.
        """
        uniq, counts, _ = self._unique
        S = np.zeros((len(uniq), self.grid.n_dirs))
        idx = np.arange(len(uniq))
        S[idx, uniq[:, 0] - 1] = self.intensity
        two = uniq[:, 1] > 0
        S[idx[two], uniq[two, 1] - 1] = self.intensity
        return S, counts.astype(float)

    def unique_index(self) -> np.ndarray:
        """Row of :meth:`unique_stimuli` that each batch entry maps to."""
        return self._unique[2]

    def empirical_entropy(self) -> float:
        """Shannon entropy (nats) of the empirical distribution over distinct stimuli."""
        if len(self) == 0:
            return 0.0
        _, counts, _ = self._unique
        p = counts / counts.sum()
        return float(-np.sum(p * np.log(p)))

    def geometry(self):
        """Per-stimulus ``(separation_deg, midline_deg)``, NaN for single stimuli."""
        two = self.dir_b > 0
        sep = np.full(len(self), np.nan)
        mid = np.full(len(self), np.nan)
        if two.any():
            da = self.grid.spacing_deg * self.dir_a[two].astype(float)
            db = self.grid.spacing_deg * self.dir_b[two].astype(float)
            sep[two], mid[two] = pair_geometry(da, db)
        return sep, mid

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["index", "kind", "dir_a_deg", "dir_b_deg", "intensity",
                         "separation_deg", "midline_deg"])
        sep, mid = self.geometry()
        step = self.grid.spacing_deg
        for i in range(len(self)):
            b = int(self.dir_b[i])
            if b == 0:
                writer.writerow([i, "single", f"{step * self.dir_a[i]:g}", "",
                                 repr(self.intensity), "", ""])
            else:
                writer.writerow([i, "bidir", f"{step * self.dir_a[i]:g}", f"{step * b:g}",
                                 repr(self.intensity), f"{sep[i]:g}", f"{mid[i]:g}"])
        return out.getvalue()


def sample_training_set(grid: DirectionGrid, n_single: int, n_bidir: int, seed: int,
                        intensity: float = DEFAULT_INTENSITY,
                        separations_deg=TRAINING_SEPARATIONS_DEG) -> StimulusBatch:
    """Random single- and two-direction stimuli.

    Single stimuli have a uniformly random direction. Bidirectional stimuli
    draw a separation uniformly from the grid-representable subset of
    ``separations_deg`` and a uniformly random first component; the second
    component sits that many degrees clockwise, which makes the midline
    uniform over its possible positions. Singles come first, then pairs.
    """
    if n_single < 0 or n_bidir < 0:
        raise ValueError("stimulus counts must be nonnegative")
    if not intensity > 0:
        raise ValueError("intensity must be positive")
    seps = grid.representable_separations(separations_deg)
    if n_bidir and not seps:
        raise ValueError(f"no separation in {separations_deg} is representable "
                         f"on a {grid.spacing_deg} deg grid")
    rng = np.random.default_rng(seed)
    n = grid.n_dirs
    single = rng.integers(1, n + 1, size=n_single)
    steps = np.asarray(seps, dtype=np.int64) // grid.spacing_deg
    pair_steps = steps[rng.integers(0, len(steps), size=n_bidir)] if n_bidir else np.zeros(0, np.int64)
    first = rng.integers(1, n + 1, size=n_bidir)
    second = (first - 1 + pair_steps) % n + 1
    return StimulusBatch(
        grid=grid,
        dir_a=np.concatenate([single, first]),
        dir_b=np.concatenate([np.zeros(n_single, np.int64), second]),
        intensity=float(intensity),
        seed=seed,
        counts=(int(n_single), int(n_bidir)),
    )


def batch_from_stimuli(grid: DirectionGrid, stimuli, seed=None) -> StimulusBatch:
    """Pack explicit :class:`Stimulus` objects (common intensity) into a batch."""
    stimuli = list(stimuli)
    levels = {float(s.intensities[s.component_indices[0] - 1]) for s in stimuli}
    if len(levels) > 1:
        raise ValueError("all stimuli in a batch must share one intensity")
    a = [s.component_indices[0] for s in stimuli]
    b = [s.component_indices[1] if s.is_bidirectional else 0 for s in stimuli]
    n_bi = sum(1 for x in b if x)
    return StimulusBatch(grid, np.array(a, np.int64), np.array(b, np.int64),
                         levels.pop() if levels else DEFAULT_INTENSITY, seed,
                         (len(stimuli) - n_bi, n_bi))
