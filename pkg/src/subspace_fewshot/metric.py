"""Subspace distances and the distance-based softmax classifier."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import DimensionError, NumericalWarning
from .subspace import Subspace

RANGE_SLACK = 1e-9


class DistanceKind(str, Enum):
    WSD = "wsd"
    PROJECTION_FNORM = "projfn"


def _check_pair(a: Subspace, b: Subspace) -> None:
    if a.ambient_dim != b.ambient_dim:
        raise DimensionError(f"ambient dimensions differ: {a.ambient_dim} vs {b.ambient_dim}")
    if a.basis_size != b.basis_size:
        raise DimensionError(f"basis sizes differ: {a.basis_size} vs {b.basis_size}")


def _clamp_similarity(sim):
    lo, hi = np.min(sim), np.max(sim)
    if lo < -RANGE_SLACK or hi > 1 + RANGE_SLACK:
        warnings.warn(f"weighted similarity outside [0, 1]: [{lo!r}, {hi!r}]",
                      NumericalWarning, stacklevel=3)
    return np.clip(sim, 0.0, 1.0)


def wsd(a: Subspace, b: Subspace) -> float:
    """Weighted subspace distance.

    ``sqrt(1 - sum_ij sqrt(wa_i * wb_j) * (ua_i . ub_j)**2)``; lies in [0, 1],
    is 0 for identical subspaces and 1 for mutually orthogonal spans.
    """
    _check_pair(a, b)
    cross = (a.basis.T @ b.basis) ** 2
    sim = np.sqrt(a.weights) @ cross @ np.sqrt(b.weights)
    return float(np.sqrt(1.0 - _clamp_similarity(sim)))


def projection_fnorm(a: Subspace, b: Subspace) -> float:
    """``||Ua Ua^T - Ub Ub^T||_F^2 = 2s - 2 ||Ua^T Ub||_F^2``; ignores weights."""
    _check_pair(a, b)
    s = a.basis_size
    overlap = np.sum((a.basis.T @ b.basis) ** 2)
    return float(min(2.0 * s, max(0.0, 2.0 * s - 2.0 * overlap)))


def distance(a: Subspace, b: Subspace, kind: DistanceKind | str = DistanceKind.WSD) -> float:
    kind = DistanceKind(kind)
    return wsd(a, b) if kind is DistanceKind.WSD else projection_fnorm(a, b)


def pairwise_distances(bases_a, weights_a, bases_b, weights_b,
                       kind: DistanceKind | str = DistanceKind.WSD) -> np.ndarray:
    """Distances between two stacks, ``(n, d, s)`` against ``(m, d, s)`` -> ``(n, m)``."""
    kind = DistanceKind(kind)
    bases_a, bases_b = np.asarray(bases_a), np.asarray(bases_b)
    if bases_a.shape[1:] != bases_b.shape[1:]:
        raise DimensionError(f"stack shapes {bases_a.shape} and {bases_b.shape} are incompatible")
    cross = np.einsum("adi,bdj->abij", bases_a, bases_b) ** 2
    if kind is DistanceKind.PROJECTION_FNORM:
        s = bases_a.shape[-1]
        return np.clip(2.0 * s - 2.0 * cross.sum(axis=(-2, -1)), 0.0, 2.0 * s)
    sim = np.einsum("ai,abij,bj->ab", np.sqrt(weights_a), cross, np.sqrt(weights_b))
    return np.sqrt(1.0 - _clamp_similarity(sim))


def stack(subspaces: Sequence[Subspace]) -> tuple[np.ndarray, np.ndarray]:
    """``(bases, weights)`` arrays for a sequence of equally-shaped subspaces."""
    shapes = {sub.basis.shape for sub in subspaces}
    if len(shapes) > 1:
        raise DimensionError(f"subspaces have mixed shapes {sorted(shapes)}")
    return (np.stack([sub.basis for sub in subspaces]),
            np.stack([sub.weights for sub in subspaces]))


@dataclass(frozen=True)
class ClassScores:
    probabilities: np.ndarray
    distances: np.ndarray
    kind: DistanceKind = DistanceKind.WSD

    @property
    def prediction(self) -> int:
        return int(np.argmax(self.probabilities))


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_classify(query: Subspace, templates: Sequence[Subspace],
                     kind: DistanceKind | str = DistanceKind.WSD) -> ClassScores:
    """Class probabilities ``exp(-D_i) / sum_l exp(-D_l)`` in template order."""
    kind = DistanceKind(kind)
    templates = list(templates)
    if not templates:
        raise ValueError("empty template set")
    dists = np.array([distance(t, query, kind) for t in templates])
    return ClassScores(softmax(-dists), dists, kind)


def nll_loss(scores: ClassScores, label: int) -> float:
    """Negative log-likelihood ``-log p_label``."""
    n = len(scores.probabilities)
    if not 0 <= label < n:
        raise IndexError(f"label {label} out of range for {n} classes")
    return 0.0 - float(np.log(scores.probabilities[label]))
