"""Best-fit subspace representation of a feature matrix and activation maps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericalError
from .feature_io import FeatureGrid

RANK_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class Subspace:
    """Orthonormal basis ``(d, s)`` with normalized singular-value weights ``(s,)``.

    ``degenerate`` marks a subspace extracted from an all-zero matrix, whose
    weights are uniform by convention.
    """

    basis: np.ndarray
    weights: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        basis = np.array(self.basis, dtype=np.float64)
        weights = np.array(self.weights, dtype=np.float64).reshape(-1)
        if basis.ndim != 2 or basis.shape[1] != weights.shape[0]:
            raise DimensionError(
                f"basis shape {basis.shape} does not match {weights.shape[0]} weights")
        if not 1 <= basis.shape[1] <= basis.shape[0]:
            raise DimensionError(f"basis size must lie in [1, d], got shape {basis.shape}")
        basis.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "weights", weights)

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def basis_size(self) -> int:
        return self.basis.shape[1]

    def orthonormality_error(self) -> float:
        u = self.basis
        return float(np.max(np.abs(u.T @ u - np.eye(u.shape[1]))))

    def with_basis(self, basis: np.ndarray) -> "Subspace":
        return Subspace(basis, self.weights, self.degenerate)

    def __repr__(self):
        return f"Subspace(d={self.ambient_dim}, s={self.basis_size}, weights={np.round(self.weights, 4)})"


def canonical_signs(basis: np.ndarray) -> np.ndarray:
    """Flip columns so each has its largest-magnitude entry positive (first index wins ties)."""
    idx = np.argmax(np.abs(basis), axis=-2)
    pivot = np.take_along_axis(basis, idx[..., None, :], axis=-2)
    return basis * np.where(pivot < 0, -1.0, 1.0)


def _complete(u: np.ndarray, s: int) -> np.ndarray:
    """Extend the orthonormal columns of ``u`` to ``s`` columns deterministically."""
    d, r = u.shape
    if r >= s:
        return u[:, :s]
    q, _ = np.linalg.qr(np.concatenate([u, np.eye(d)], axis=1))
    return np.concatenate([u, q[:, r:s]], axis=1)


def extract_subspaces(matrices: np.ndarray, s: int) -> list[Subspace]:
    """Batched :func:`extract_subspace` over a ``(n, d, m)`` stack."""
    h = np.asarray(matrices, dtype=np.float64)
    if h.ndim != 3:
        raise DimensionError(f"expected a (n, d, m) stack, got shape {h.shape}")
    d = h.shape[1]
    if not 1 <= s <= d:
        raise DimensionError(f"basis size s={s} must lie in [1, d={d}]")
    if not np.all(np.isfinite(h)):
        raise NumericalError("feature matrix contains non-finite values")
    u_all, sig_all, _ = np.linalg.svd(h, full_matrices=False)
    out = []
    for u, sig in zip(u_all, sig_all):
        sig_max = sig[0] if sig.size else 0.0
        if sig_max == 0.0:
            basis = np.eye(d)[:, :s]
            out.append(Subspace(basis, np.full(s, 1.0 / s), degenerate=True))
            continue
        lam = np.zeros(s)
        k = min(s, sig.size)
        lam[:k] = sig[:k]
        lam[lam <= RANK_RTOL * sig_max] = 0.0
        basis = canonical_signs(_complete(u, s))
        out.append(Subspace(basis, lam / lam.sum()))
    return out


def extract_subspace(matrix: np.ndarray, s: int) -> Subspace:
    """Leading ``s`` left singular vectors of the ``d x m`` feature matrix.

    The basis minimizes ``||H - U U^T H||_F`` over orthonormal ``U``.  Weights
    are the leading singular values divided by their sum; singular values at or
    below ``1e-10 * sigma_max`` count as zero, and missing directions are
    filled with a deterministic orthonormal completion of weight 0.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise DimensionError(f"feature matrix must be 2-D, got shape {matrix.shape}")
    return extract_subspaces(matrix[None], s)[0]


def reconstruction_error(matrix: np.ndarray, basis: np.ndarray) -> float:
    """Squared Frobenius residual ``||H - U U^T H||_F^2``."""
    resid = matrix - basis @ (basis.T @ matrix)
    return float(np.sum(resid * resid))


@dataclass(frozen=True)
class ActivationMap:
    component: int
    values: np.ndarray  # (h, w) cosine similarities

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def to_csv(self) -> str:
        return "".join(",".join(repr(float(v)) for v in row) + "\n" for row in self.values)


def basis_activation_map(grid: FeatureGrid, sub: Subspace, component: int) -> ActivationMap:
    """Cosine similarity between every cell's feature and one basis column."""
    if not 0 <= component < sub.basis_size:
        raise DimensionError(f"component {component} out of range for s={sub.basis_size}")
    if grid.depth != sub.ambient_dim:
        raise DimensionError(f"grid depth {grid.depth} != subspace dimension {sub.ambient_dim}")
    feats = grid.values
    u = sub.basis[:, component]
    dots = feats @ u
    norms = np.linalg.norm(feats, axis=-1) * np.linalg.norm(u)
    cos = np.divide(dots, norms, out=np.zeros_like(dots), where=norms > 0)
    return ActivationMap(component, np.clip(cos, -1.0, 1.0))
