"""Model snapshots (JSON, hex-float arrays) and atomic file output."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import DensityVector, MotionModel
from .mt import MTParams
from .stimulus import DirectionGrid
from .v1 import V1Params

FORMAT_VERSION = 1


def atomic_write_text(path, text: str) -> Path:
    """Write ``text`` to a temp file next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _hex_array(a) -> dict:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "hex": [float(v).hex() for v in a.reshape(-1)]}


def _from_hex(d) -> np.ndarray:
    flat = np.array([float.fromhex(v) for v in d["hex"]], dtype=float)
    return flat.reshape(d["shape"])


@dataclass(frozen=True, eq=False)
class ModelSnapshot:
    model: MotionModel
    density: DensityVector
    provenance: dict = field(default_factory=dict)

    def to_json(self) -> str:
        m = self.model
        doc = {
            "format_version": FORMAT_VERSION,
            "grid": {"n_dirs": m.grid.n_dirs},
            "v1": {"m_cells": m.v1.m_cells, "sigma": float(m.v1.sigma).hex()},
            "mt": {
                "gain_A": float(m.mt.gain_A).hex(),
                "norm_eps": float(m.mt.norm_eps).hex(),
                "weights": _hex_array(m.mt.weights),
                "thresholds": _hex_array(m.mt.thresholds),
            },
            "density": _hex_array(self.density.rho),
            "provenance": self.provenance,
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ModelSnapshot":
        doc = json.loads(text)
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported snapshot format_version {version!r}")
        grid = DirectionGrid(int(doc["grid"]["n_dirs"]))
        v1 = V1Params(int(doc["v1"]["m_cells"]), float.fromhex(doc["v1"]["sigma"]))
        mt = MTParams(
            weights=_from_hex(doc["mt"]["weights"]),
            thresholds=_from_hex(doc["mt"]["thresholds"]),
            gain_A=float.fromhex(doc["mt"]["gain_A"]),
            norm_eps=float.fromhex(doc["mt"]["norm_eps"]),
        )
        return cls(MotionModel(grid, v1, mt), DensityVector(_from_hex(doc["density"])),
                   doc.get("provenance", {}))

    def save(self, path) -> Path:
        return atomic_write_text(path, self.to_json())

    @classmethod
    def load(cls, path) -> "ModelSnapshot":
        return cls.from_json(Path(path).read_text())

    def __eq__(self, other):
        if not isinstance(other, ModelSnapshot):
            return NotImplemented
        return self.to_json() == other.to_json()
