"""Isotropic plane-strain elasticity in (t11, t22, t12) coordinates.

Symmetric 2x2 tensors are stored as 3-vectors ``(t11, t22, t12)``.  The
double contraction is ``s:t = s11 t11 + s22 t22 + 2 s12 t12``, i.e.
``s @ W @ t`` with ``W = diag(1, 1, 2)``.  A 3x3 matrix acting on such
vectors maps the tensor components directly (no engineering shear).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

INNER_WEIGHT = np.diag([1.0, 1.0, 2.0])


@dataclass(frozen=True)
class LameParameters:
    lam: float
    mu: float

    def __post_init__(self):
        if not (np.isfinite(self.lam) and np.isfinite(self.mu)):
            raise ValueError("Lame parameters must be finite")
        if self.mu <= 0 or self.lam + self.mu <= 0:
            raise ValueError(f"inadmissible Lame parameters lam={self.lam}, mu={self.mu}")


def to_vector(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return np.stack([t[..., 0, 0], t[..., 1, 1], t[..., 0, 1]], axis=-1)


def to_tensor(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    row0 = np.stack([v[..., 0], v[..., 2]], axis=-1)
    row1 = np.stack([v[..., 2], v[..., 1]], axis=-1)
    return np.stack([row0, row1], axis=-2)


def elasticity_apply(params: LameParameters, strain) -> np.ndarray:
    """sigma = 2 mu eps + lam tr(eps) I."""
    strain = np.asarray(strain, dtype=float)
    tr = np.trace(strain, axis1=-2, axis2=-1)
    return 2.0 * params.mu * strain + params.lam * tr[..., None, None] * np.eye(2)


def compliance_apply(params: LameParameters, stress) -> np.ndarray:
    """Inverse of :func:`elasticity_apply`."""
    stress = np.asarray(stress, dtype=float)
    tr = np.trace(stress, axis1=-2, axis2=-1)
    c = params.lam / (2.0 * params.lam + 2.0 * params.mu)
    return (stress - c * tr[..., None, None] * np.eye(2)) / (2.0 * params.mu)


def elasticity_matrix(lam, mu) -> np.ndarray:
    """3x3 matrix of C on tensor 3-vectors; broadcasts over array inputs."""
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    out = np.zeros(lam.shape + (3, 3))
    out[..., 0, 0] = out[..., 1, 1] = 2.0 * mu + lam
    out[..., 0, 1] = out[..., 1, 0] = lam
    out[..., 2, 2] = 2.0 * mu
    return out


def compliance_matrix(lam, mu) -> np.ndarray:
    """3x3 matrix of D = C^-1 on tensor 3-vectors; broadcasts over arrays."""
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    c = lam / (2.0 * lam + 2.0 * mu)
    out = np.zeros(lam.shape + (3, 3))
    out[..., 0, 0] = out[..., 1, 1] = (1.0 - c) / (2.0 * mu)
    out[..., 0, 1] = out[..., 1, 0] = -c / (2.0 * mu)
    out[..., 2, 2] = 1.0 / (2.0 * mu)
    return out


def kappa_E(params: LameParameters) -> float:
    """Stabilisation constant: half the trace of the compliance matrix."""
    return 0.5 * float(np.trace(compliance_matrix(params.lam, params.mu)))


@dataclass(frozen=True, eq=False)
class MaterialField:
    """Piecewise-constant Lame parameters, one pair per cell."""
    lam: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        mu = np.asarray(self.mu, dtype=float)
        if lam.shape != mu.shape or lam.ndim != 1:
            raise ValueError("lam and mu must be 1-D arrays of equal length")
        if np.any(mu <= 0) or np.any(lam + mu <= 0) or not np.all(np.isfinite(lam + mu)):
            raise ValueError("inadmissible Lame parameters in material field")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "mu", mu)

    @classmethod
    def uniform(cls, params: LameParameters, n_cells: int) -> "MaterialField":
        return cls(np.full(n_cells, params.lam), np.full(n_cells, params.mu))

    def __len__(self):
        return len(self.lam)

    def __getitem__(self, c) -> LameParameters:
        return LameParameters(float(self.lam[c]), float(self.mu[c]))

    def compliance(self, cells=slice(None)) -> np.ndarray:
        return compliance_matrix(self.lam[cells], self.mu[cells])

    def kappa(self, cells=slice(None)) -> np.ndarray:
        return 0.5 * np.trace(self.compliance(cells), axis1=-2, axis2=-1)

    @property
    def is_homogeneous(self) -> bool:
        return bool(np.all(self.lam == self.lam[0]) and np.all(self.mu == self.mu[0]))


def load_material_csv(path, n_cells: int) -> MaterialField:
    """Read ``cell_id,lambda,mu`` rows; every cell must appear exactly once."""
    lam = np.full(n_cells, np.nan)
    mu = np.full(n_cells, np.nan)
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            if row[0].strip() == "cell_id":
                continue
            if len(row) != 3:
                raise ValueError(f"{path}:{lineno}: expected cell_id,lambda,mu")
            c = int(row[0])
            if not 0 <= c < n_cells:
                raise ValueError(f"{path}:{lineno}: cell id {c} out of range")
            if not np.isnan(lam[c]):
                raise ValueError(f"{path}:{lineno}: cell {c} listed twice")
            lam[c], mu[c] = float(row[1]), float(row[2])
    missing = np.flatnonzero(np.isnan(lam))
    if len(missing):
        raise ValueError(f"{path}: no material for cells {missing[:10].tolist()}")
    return MaterialField(lam, mu)
