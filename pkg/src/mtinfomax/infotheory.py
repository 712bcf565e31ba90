"""Poisson Fisher information of the MT population and the asymptotic MI estimate.

For independent Poisson neurons with mean counts ``fhat_k(x)`` the Fisher
matrix of a population of ``N`` neurons split over types with fractions
``rho_k`` is

    J(x) = N * sum_k rho_k * g_k g_k^T / fhat_k,    g_k = d fhat_k / dx,

and the mutual information is approximated by
``<0.5 * ln det(G(x) / (2 pi e))>_x + H`` with ``G = J + gamma * I``.

``InfoConfig.fisher_space`` picks the coordinates the derivative is taken in:

``"stimulus"`` (default)
    the intensity vector ``s`` (``x = V s``), i.e. ``g_k = V^T d fhat_k / dx``.
    The V1 map is numerically rank ~6, so only these directions are ones a
    stimulus can actually move along.
``"v1"``
    the M-dimensional V1 response ``x`` itself. Weight components in the
    near-null space of ``V`` then earn Fisher information without any
    stimulus ever exercising them, and training exploits that.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .model import DensityVector, MotionModel, as_density
from .mt import MTParams, _jacobian_from_raw, mt_normalized, mt_raw

LOG_2PIE = math.log(2.0 * math.pi * math.e)
FISHER_SPACES = ("stimulus", "v1")


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """``G(x)`` failed a Cholesky factorization."""

    def __init__(self, index, label=None):
        self.index = index
        self.label = label
        where = label if label is not None else f"stimulus #{index}"
        super().__init__(f"G(x) is not positive definite for {where}; "
                         "use gamma_reg > 0 when J is rank deficient")


@dataclass(frozen=True)
class InfoConfig:
    n_population: float = 1000.0
    gamma_reg: float = 1e-3
    rate_floor: float = 1e-9
    fisher_space: str = "stimulus"

    def __post_init__(self):
        if self.fisher_space not in FISHER_SPACES:
            raise ValueError(f"fisher_space must be one of {FISHER_SPACES}")
        if not self.n_population >= 1:
            raise ValueError("n_population must be >= 1")
        if not self.gamma_reg >= 0:
            raise ValueError("gamma_reg must be >= 0")
        if not self.rate_floor > 0:
            raise ValueError("rate_floor must be positive")


@dataclass(frozen=True, eq=False)
class FisherReport:
    J: np.ndarray
    G: np.ndarray
    logdet_term: float
    stimulus_id: str | None = None


@dataclass(frozen=True)
class InfoEstimate:
    mean_logdet_nats: float
    entropy_H_nats: float
    mi_nats: float
    n_stimuli: int


def _mt_of(model):
    return model.mt if isinstance(model, MotionModel) else model


def fisher_basis(model, config: InfoConfig):
    """Matrix mapping V1-space gradients to the Fisher coordinates (None = identity)."""
    if config.fisher_space == "v1":
        return None
    if not isinstance(model, MotionModel):
        raise TypeError("stimulus-space Fisher information needs a MotionModel (for the V1 map)")
    return model.tuning_matrix


def score_vectors(mt: MTParams, X, rate_floor=1e-9, basis=None):
    """Per-type score directions ``h_k = g_k / sqrt(fhat_k)``.

    Returns ``(f, fhat, H, mask)`` where ``H`` has shape (..., K, D) and rows
    of types with ``fhat_k < rate_floor`` are zeroed (``mask`` False).
    ``J = N * sum_k rho_k h_k h_k^T``. ``basis`` (M, D) maps V1-space
    gradients to other coordinates.
    """
    f = mt_raw(mt, X)
    fh = mt_normalized(mt, f)
    g = _jacobian_from_raw(mt, f)
    if basis is not None:
        g = g @ basis
    mask = fh >= rate_floor
    scale = np.where(mask, 1.0 / np.sqrt(np.where(mask, fh, 1.0)), 0.0)
    return f, fh, g * scale[..., None], mask


def fisher_from_scores(H, rho, n_population) -> np.ndarray:
    """``N * sum_k rho_k h_k h_k^T`` for H of shape (..., K, M)."""
    return n_population * np.einsum("...km,k,...kn->...mn", H, rho, H)


def spd_logdet(G, labels=None) -> np.ndarray:
    """``ln det`` of symmetric positive-definite matrices via Cholesky."""
    G = np.asarray(G, dtype=float)
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        stack = G.reshape((-1,) + G.shape[-2:])
        for i, Gi in enumerate(stack):
            try:
                np.linalg.cholesky(Gi)
            except np.linalg.LinAlgError:
                label = None if labels is None else labels[i]
                raise NotPositiveDefiniteError(i, label) from None
        raise
    diag = np.diagonal(L, axis1=-2, axis2=-1)
    if np.any(diag <= 0):
        bad = int(np.argwhere((diag <= 0).reshape(-1, diag.shape[-1]).any(axis=1))[0, 0])
        raise NotPositiveDefiniteError(bad, None if labels is None else labels[bad])
    return 2.0 * np.log(diag).sum(axis=-1)


def _check_density(density, k):
    density = as_density(density)
    if len(density) != k:
        raise ValueError(f"density has {len(density)} entries, model has {k} MT types")
    return density


def fisher_matrix(model, density, config: InfoConfig, x, stimulus_id=None) -> FisherReport:
    """Closed-form Poisson Fisher matrix ``J(x)`` and ``G(x) = J + gamma I``."""
    mt = _mt_of(model)
    density = _check_density(density, mt.k_cells)
    x = np.asarray(x, dtype=float)
    if x.shape != (mt.m_inputs,):
        raise ValueError(f"x must have shape ({mt.m_inputs},)")
    _, _, H, _ = score_vectors(mt, x, config.rate_floor, fisher_basis(model, config))
    J = fisher_from_scores(H, density.rho, config.n_population)
    J = 0.5 * (J + J.T)
    dim = J.shape[0]
    G = J + config.gamma_reg * np.eye(dim)
    logdet = float(spd_logdet(G, [stimulus_id]))
    return FisherReport(J, G, 0.5 * (logdet - dim * LOG_2PIE), stimulus_id)


def mc_fisher_validate(model, density, config: InfoConfig, x, n_trials: int, seed: int,
                       chunk: int = 200_000) -> np.ndarray:
    """Monte Carlo estimate of ``E[score score^T]`` under Poisson spike counts.

    The ``N * rho_k`` neurons of type k are pooled: their summed count is
    Poisson with mean ``N rho_k fhat_k`` and their summed score is
    ``(R_k / fhat_k - N rho_k) g_k``, which has the same second moment as
    summing the individual per-neuron scores ``(r / fhat_k - 1) g_k``.
    """
    if n_trials < 10_000:
        raise ValueError("n_trials must be at least 1e4")
    mt = _mt_of(model)
    density = _check_density(density, mt.k_cells)
    x = np.asarray(x, dtype=float)
    f = mt_raw(mt, x)
    fh = mt_normalized(mt, f)
    g = _jacobian_from_raw(mt, f)
    basis = fisher_basis(model, config)
    if basis is not None:
        g = g @ basis
    keep = fh >= config.rate_floor
    fh, g, n_k = fh[keep], g[keep], config.n_population * density.rho[keep]
    rng = np.random.default_rng(seed)
    acc = np.zeros((g.shape[1], g.shape[1]))
    done = 0
    while done < n_trials:
        n = min(chunk, n_trials - done)
        counts = rng.poisson(n_k * fh, size=(n, fh.size))
        score = (counts / fh - n_k) @ g
        acc += score.T @ score
        done += n
    return acc / n_trials


def evaluation_set(model: MotionModel, batch):
    """V1 responses and multiplicities of the distinct stimuli in ``batch``."""
    if len(batch) == 0:
        raise ValueError("evaluation batch is empty")
    S, counts = batch.unique_stimuli()
    return model.encode(S), counts


def stimulus_labels(batch):
    S, _ = batch.unique_stimuli()
    step = batch.grid.spacing_deg
    labels = []
    for row in S:
        idx = np.flatnonzero(row) + 1
        labels.append("+".join(f"{step * i:g}" for i in idx))
    return labels


def mean_logdet(model: MotionModel, density, config: InfoConfig, batch) -> float:
    """Batch mean of ``0.5 * ln det(G(x) / (2 pi e))`` in nats."""
    mt = model.mt
    density = _check_density(density, mt.k_cells)
    X, counts = evaluation_set(model, batch)
    _, _, H, _ = score_vectors(mt, X, config.rate_floor, fisher_basis(model, config))
    G = fisher_from_scores(H, density.rho, config.n_population)
    dim = G.shape[-1]
    G = G + config.gamma_reg * np.eye(dim)
    logdet = spd_logdet(G, stimulus_labels(batch))
    terms = 0.5 * (logdet - dim * LOG_2PIE)
    return float(np.dot(counts, terms) / counts.sum())


def mi_asymptotic(model: MotionModel, density, config: InfoConfig, batch) -> InfoEstimate:
    m = mean_logdet(model, density, config, batch)
    h = batch.empirical_entropy()
    return InfoEstimate(m, h, m + h, len(batch))


def fisher_reports(model: MotionModel, density, config: InfoConfig, batch) -> list:
    """One :class:`FisherReport` per distinct stimulus in ``batch``."""
    X, _ = evaluation_set(model, batch)
    return [fisher_matrix(model, density, config, x, label)
            for x, label in zip(X, stimulus_labels(batch))]


def fisher_reports_csv(reports) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["stimulus_id", "logdet_term", "min_eig_J", "max_eig_J"])
    for rep in reports:
        eig = np.linalg.eigvalsh(rep.J)
        writer.writerow([rep.stimulus_id, repr(rep.logdet_term), repr(float(eig[0])),
                         repr(float(eig[-1]))])
    return out.getvalue()
