"""Gradients of subspace distances and Cayley-transform descent on the Stiefel manifold."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DimensionError, NumericalError
from .metric import _check_pair
from .subspace import Subspace

GRADIENT_FLOOR = 1e-8
# Pairs with a computed distance below this are re-checked for coincidence.
COINCIDENCE_PROBE = 1e-6


@dataclass(frozen=True)
class StiefelOptConfig:
    step_size: float = 0.1
    iterations: int = 50
    gradient_floor: float = GRADIENT_FLOOR

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if not self.gradient_floor > 0:
            raise ValueError("gradient_floor must be positive")


def wsd_sq_stable(u, wu, v, wv) -> float:
    """Squared weighted subspace distance evaluated without the ``1 - S`` cancellation.

    Uses ``D^2 = 1/2 sum_i wu_i |res_i|^2 + 1/2 sum_j wv_j |res_j|^2
    + 1/2 sum_ij c_ij^2 (sqrt(wu_i) - sqrt(wv_j))^2`` where ``res`` are the
    residuals of each basis vector off the other span.  Equal to the usual
    form for orthonormal bases with unit weight sums, but accurate near 0.
    """
    cross = u.T @ v
    ru = u - v @ cross.T
    rv = v - u @ cross
    gap = (np.sqrt(wu)[:, None] - np.sqrt(wv)[None, :]) ** 2
    return 0.5 * float(wu @ np.sum(ru**2, axis=0) + wv @ np.sum(rv**2, axis=0)
                       + np.sum(cross**2 * gap))


def coincident_mask(u, wu, v, wv, dist, eps: float = GRADIENT_FLOOR) -> np.ndarray:
    """Boolean ``(N, M)`` mask of pairs whose distance is below ``eps``.

    ``u`` is ``(N, d, s)``, ``v`` is ``(M, d, s)`` and ``dist`` the ``(N, M)``
    distances already computed; only pairs under ``COINCIDENCE_PROBE`` are
    re-evaluated with :func:`wsd_sq_stable`.
    """
    mask = np.zeros(dist.shape, dtype=bool)
    for n, m in zip(*np.nonzero(dist < max(COINCIDENCE_PROBE, eps))):
        mask[n, m] = wsd_sq_stable(u[n], wu[n], v[m], wv[m]) < eps * eps
    return mask


def wsd_grad_basis(temp: Subspace, other: Subspace, eps: float = GRADIENT_FLOOR) -> np.ndarray:
    """Euclidean gradient of ``wsd(temp, other)`` with respect to ``temp.basis``.

    Both weight vectors are held fixed.  The ``1 / (2 D)`` factor uses
    ``max(D, eps)``.  When the two subspaces coincide (distance below ``eps``
    in the cancellation-free form) the zero subgradient is returned: the
    distance has a cone-shaped minimum there and any other choice turns
    rounding noise into a finite step.
    """
    _check_pair(temp, other)
    u, v = temp.basis, other.basis
    cross = u.T @ v
    gain = np.sqrt(np.outer(temp.weights, other.weights))
    sim = np.sum(gain * cross**2)
    dist = np.sqrt(max(0.0, 1.0 - sim))
    if dist < COINCIDENCE_PROBE and wsd_sq_stable(u, temp.weights, v, other.weights) < eps * eps:
        return np.zeros_like(u)
    # column i: sum_j gain_ij * (u_i . v_j) * v_j
    return -(v @ (gain * cross).T) / max(dist, eps)


def projection_fnorm_grad_basis(temp: Subspace, other: Subspace) -> np.ndarray:
    """Euclidean gradient of ``projection_fnorm(temp, other)`` with respect to ``temp.basis``."""
    _check_pair(temp, other)
    u, v = temp.basis, other.basis
    return -4.0 * v @ (v.T @ u)


def cayley_generator(u: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Skew-symmetric ``W = What - What^T`` with ``What = Z U^T - 1/2 U (U^T Z) U^T``."""
    ut = np.swapaxes(u, -1, -2)
    w_hat = z @ ut - 0.5 * u @ (ut @ z) @ ut
    return w_hat - np.swapaxes(w_hat, -1, -2)


def cayley_step(u: np.ndarray, z: np.ndarray, step_size: float) -> np.ndarray:
    """One descent step ``(I + a/2 W)^-1 (I - a/2 W) U`` for the gradient ``Z``.

    The output has orthonormal columns whenever ``u`` does.  Leading axes of
    ``u`` and ``z`` are treated as a batch of independent iterates.
    """
    u = np.asarray(u, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if u.shape != z.shape:
        raise DimensionError(f"gradient shape {z.shape} does not match iterate {u.shape}")
    if not step_size > 0:
        raise ValueError("step_size must be positive")
    if not np.any(z):
        return u.copy()
    w = cayley_generator(u, z)
    half = 0.5 * step_size * w
    eye = np.eye(u.shape[-2])
    try:
        out = np.linalg.solve(eye + half, (eye - half) @ u)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"Cayley system is singular at step size {step_size}; reduce the step size") from exc
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"Cayley step produced non-finite values at step size {step_size}")
    return out


def optimize_on_stiefel(grad_fn: Callable[[np.ndarray], np.ndarray], u0: np.ndarray,
                        cfg: StiefelOptConfig,
                        objective: Callable[[np.ndarray], float] | None = None):
    """Run ``cfg.iterations`` fixed-step Cayley descent steps from ``u0``.

    Returns ``(u_final, trace)``.  With an ``objective`` the trace holds its
    value at the start and after every step (``iterations + 1`` entries);
    otherwise it is empty.
    """
    u = np.array(u0, dtype=np.float64)
    trace = [float(objective(u))] if objective is not None else []
    for it in range(cfg.iterations):
        z = np.asarray(grad_fn(u), dtype=np.float64)
        if not np.all(np.isfinite(z)):
            raise NumericalError(f"non-finite gradient at iteration {it}")
        u = cayley_step(u, z, cfg.step_size)
        if objective is not None:
            trace.append(float(objective(u)))
    return u, trace
