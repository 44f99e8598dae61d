"""Loss-matrix normalization, stylometric distance, row-correlation
dissimilarities, and metric MDS (classical initialization + SMACOF)."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSampleError, ShapeError

log = logging.getLogger(__name__)


@dataclass
class MdsEmbedding:
    coords: np.ndarray   # (n, dim), column means zero
    stress: float        # Kruskal stress-1
    raw_stress_history: list[float] | None = None


def _check_square(L: np.ndarray) -> np.ndarray:
    L = np.asarray(L, dtype=np.float64)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise ShapeError(f"expected a square matrix, got {L.shape}")
    return L


def normalize_loss(L) -> np.ndarray:
    """Subtract each model's native baseline: out[i, j] = L[i, j] - L[j, j]."""
    L = _check_square(L)
    return L - np.diag(L)[None, :]


def stylometric_distance(L_bar) -> np.ndarray:
    """Symmetrize the baseline-normalized losses: d[i, j] = (out[j, i] + out[i, j]) / 2."""
    L_bar = _check_square(L_bar)
    return 0.5 * (L_bar + L_bar.T)


def row_corr_dissimilarity(L) -> np.ndarray:
    """1 - Pearson correlation between rows i and j over columns k not in {i, j}."""
    L = _check_square(L)
    n = L.shape[0]
    if n < 4:
        raise ShapeError("need >= 4 authors so each row pair shares >= 2 columns")
    delta = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            cols = [k for k in range(n) if k not in (i, j)]
            xi = L[i, cols]
            xj = L[j, cols]
            sx = xi.std()
            sy = xj.std()
            if sx == 0.0 or sy == 0.0:
                raise DegenerateSampleError(
                    f"correlation undefined for rows ({i}, {j}): zero variance")
            r = float(np.mean((xi - xi.mean()) * (xj - xj.mean())) / (sx * sy))
            delta[i, j] = delta[j, i] = 1.0 - r
    return delta


def _classical_coords(D: np.ndarray, dim: int) -> np.ndarray:
    n = D.shape[0]
    J = np.eye(n) - np.ones((n, n)) / n
    B = -0.5 * J @ (D**2) @ J
    evals, evecs = np.linalg.eigh(B)
    order = np.argsort(evals)[::-1]
    evals = evals[order][:dim]
    evecs = evecs[:, order][:, :dim]
    coords = np.zeros((n, dim))
    pos = evals > 1e-12
    coords[:, pos] = evecs[:, pos] * np.sqrt(evals[pos])
    return coords


def _stress1(coords: np.ndarray, D: np.ndarray) -> float:
    dist = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=-1)
    iu = np.triu_indices(D.shape[0], k=1)
    num = float(np.sum((dist[iu] - D[iu]) ** 2))
    den = float(np.sum(dist[iu] ** 2))
    if den == 0.0:
        return 0.0 if num == 0.0 else float("inf")
    return float(np.sqrt(num / den))


def mds_embed(D, dim: int = 3, seed: int = 0, max_iter: int = 500,
              tol: float = 1e-9) -> MdsEmbedding:
    """Metric MDS: classical (double-centering) initialization refined by
    SMACOF stress majorization until the relative raw-stress change drops
    below ``tol`` or ``max_iter`` iterations. Reports Kruskal stress-1.

    ``seed`` only matters for the degenerate all-equal initialization case.
    """
    D = _check_square(D)
    if np.any(D < 0):
        raise ShapeError("distances must be nonnegative")
    if not np.allclose(D, D.T):
        raise ShapeError("distance matrix must be symmetric")
    n = D.shape[0]
    if n < dim + 1:
        log.warning("only %d points for a %d-D embedding; effective rank reduced", n, dim)
    if np.all(D == 0.0):
        return MdsEmbedding(coords=np.zeros((n, dim)), stress=0.0)

    X = _classical_coords(D, dim)
    if np.allclose(X, 0.0):
        X = np.random.default_rng(seed).normal(scale=1e-3, size=(n, dim))

    def raw_stress(coords):
        dist = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=-1)
        iu = np.triu_indices(n, k=1)
        return float(np.sum((dist[iu] - D[iu]) ** 2)), dist

    prev, dist = raw_stress(X)
    history = [prev]
    for _ in range(max_iter):
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(dist > 0, D / np.where(dist > 0, dist, 1.0), 0.0)
        B = -ratio
        np.fill_diagonal(B, 0.0)
        np.fill_diagonal(B, -B.sum(axis=1))
        X = (B @ X) / n
        cur, dist = raw_stress(X)
        history.append(cur)
        if prev == 0.0 or abs(prev - cur) / max(prev, 1e-300) < tol:
            prev = cur
            break
        prev = cur
    X = X - X.mean(axis=0, keepdims=True)
    return MdsEmbedding(coords=X, stress=_stress1(X, D), raw_stress_history=history)
