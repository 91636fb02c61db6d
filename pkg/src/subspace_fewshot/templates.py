"""Class template subspaces built from K-shot support sets.

Four strategies are available:

* ``union``: subspace of the concatenated local features of all K shots;
* ``ps`` (prototypical): minimizes the summed distance to the K shot subspaces;
* ``ds`` (discriminative): jointly minimizes the cross-entropy of the
  distance softmax classifier over the whole support set;
* ``nn``: no template, queries take the class of the nearest support subspace.

PS and DS start from the union subspace and keep its weights fixed while the
basis moves on the Stiefel manifold.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import DimensionError
from .metric import DistanceKind, pairwise_distances, softmax, stack
from .stiefel import GRADIENT_FLOOR, StiefelOptConfig, coincident_mask, optimize_on_stiefel
from .subspace import Subspace, extract_subspace

PS_CONFIG = StiefelOptConfig(step_size=0.1, iterations=50)
DS_CONFIG = StiefelOptConfig(step_size=0.01, iterations=50)


class Strategy(str, Enum):
    PS = "ps"
    DS = "ds"
    UNION = "union"
    NN = "nn"


@dataclass(frozen=True)
class SupportSet:
    """``N x K`` shot subspaces, optionally with their feature matrices."""

    subspaces: tuple[tuple[Subspace, ...], ...]
    matrices: tuple[tuple[np.ndarray, ...], ...] | None = None

    def __post_init__(self):
        subs = tuple(tuple(row) for row in self.subspaces)
        if not subs or any(len(row) == 0 for row in subs):
            raise ValueError("support set has an empty class")
        if len({len(row) for row in subs}) != 1:
            raise ValueError("support set is not rectangular")
        shapes = {s.basis.shape for row in subs for s in row}
        if len(shapes) != 1:
            raise DimensionError(f"support subspaces have mixed shapes {sorted(shapes)}")
        object.__setattr__(self, "subspaces", subs)
        if self.matrices is not None:
            mats = tuple(tuple(row) for row in self.matrices)
            if [len(r) for r in mats] != [len(r) for r in subs]:
                raise ValueError("matrices do not match the support layout")
            object.__setattr__(self, "matrices", mats)

    @classmethod
    def from_matrices(cls, matrices: Sequence[Sequence[np.ndarray]], s: int) -> "SupportSet":
        return cls(tuple(tuple(extract_subspace(m, s) for m in row) for row in matrices),
                   tuple(tuple(np.asarray(m, dtype=np.float64) for m in row) for row in matrices))

    @property
    def ways(self) -> int:
        return len(self.subspaces)

    @property
    def shots(self) -> int:
        return len(self.subspaces[0])

    @property
    def basis_size(self) -> int:
        return self.subspaces[0][0].basis_size

    def flat(self) -> list[Subspace]:
        return [s for row in self.subspaces for s in row]

    def labels(self) -> np.ndarray:
        return np.repeat(np.arange(self.ways), self.shots)


@dataclass(frozen=True)
class TemplateSet:
    """One template subspace per class, in class order."""

    templates: tuple[Subspace, ...]
    strategy: Strategy
    trace: tuple = field(default=(), compare=False)

    def __post_init__(self):
        templates = tuple(self.templates)
        if len(templates) < 2:
            raise ValueError("a template set needs at least two classes")
        if len({t.basis.shape for t in templates}) != 1:
            raise DimensionError("templates must share ambient dimension and basis size")
        object.__setattr__(self, "templates", templates)
        object.__setattr__(self, "strategy", Strategy(self.strategy))

    def __len__(self):
        return len(self.templates)

    def __iter__(self):
        return iter(self.templates)

    def __getitem__(self, i):
        return self.templates[i]


# --------------------------------------------------------------------------
# Union baseline
# --------------------------------------------------------------------------

def union_subspace(mats: Sequence[np.ndarray], s: int) -> Subspace:
    """Subspace of the column concatenation of the K feature matrices."""
    mats = [np.asarray(m, dtype=np.float64) for m in mats]
    if not mats:
        raise ValueError("union of zero matrices")
    if len({m.shape[0] for m in mats}) != 1:
        raise DimensionError(f"feature dimensions differ: {sorted({m.shape[0] for m in mats})}")
    return extract_subspace(np.concatenate(mats, axis=1), s)


def _weighted_bases(subs: Sequence[Subspace]) -> list[np.ndarray]:
    # Stand-in feature matrices when only subspaces are known.
    return [sub.basis * sub.weights for sub in subs]


# --------------------------------------------------------------------------
# Objectives on stacked arrays
# --------------------------------------------------------------------------

def _pair_terms(templates, t_weights, bases, b_weights, kind):
    """Distances ``(N, M)`` and per-pair gradient pieces for templates vs stacked subspaces."""
    cross = np.einsum("ndi,mdj->nmij", templates, bases)
    if kind is DistanceKind.PROJECTION_FNORM:
        s = templates.shape[-1]
        dist = np.clip(2.0 * s - 2.0 * np.sum(cross**2, axis=(-2, -1)), 0.0, 2.0 * s)
        return dist, cross, np.full(dist.shape, -4.0)
    gain = np.sqrt(t_weights[:, None, :, None] * b_weights[None, :, None, :])
    gc = gain * cross
    sim = np.sum(gc * cross, axis=(-2, -1))
    dist = np.sqrt(np.clip(1.0 - sim, 0.0, 1.0))
    scale = -1.0 / np.maximum(dist, GRADIENT_FLOOR)
    scale[coincident_mask(templates, t_weights, bases, b_weights, dist)] = 0.0
    return dist, gc, scale


def _assemble(dloss_ddist, scale, gc, bases):
    # grad[n][:, i] = sum_m dL/dD_nm * scale_nm * sum_j gc[n, m, i, j] * v_mj
    return np.einsum("nm,mdj,nmij->ndi", dloss_ddist * scale, bases, gc)


def ps_objective(template, t_weights, bases, b_weights, kind=DistanceKind.WSD):
    """Summed distance from one template ``(d, s)`` to a stack ``(K, d, s)``, with gradient."""
    kind = DistanceKind(kind)
    dist, gc, scale = _pair_terms(template[None], t_weights[None], bases, b_weights, kind)
    grad = _assemble(np.ones_like(dist), scale, gc, bases)[0]
    return float(dist.sum()), grad


def ds_objective(templates, t_weights, bases, b_weights, labels, kind=DistanceKind.WSD):
    """Cross-entropy of the distance softmax classifier over the support stack, with gradient.

    ``templates`` is ``(N, d, s)``; ``bases`` is ``(M, d, s)`` with integer
    ``labels`` in ``[0, N)``.  Returns ``(loss, grad)`` with ``grad`` shaped
    like ``templates``.
    """
    kind = DistanceKind(kind)
    dist, gc, scale = _pair_terms(templates, t_weights, bases, b_weights, kind)
    logits = -dist.T  # (M, N)
    shift = logits.max(axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(logits - shift), axis=1)) + shift[:, 0]
    m = np.arange(len(labels))
    loss = float(np.sum(lse - logits[m, labels]))
    onehot = np.zeros_like(logits)
    onehot[m, labels] = 1.0
    dloss = (onehot - softmax(logits, axis=1)).T  # dL/dD, (N, M)
    return loss, _assemble(dloss, scale, gc, bases)


# --------------------------------------------------------------------------
# Template estimation
# --------------------------------------------------------------------------

def prototypical_subspace(subs: Sequence[Subspace], s: int | None = None,
                          cfg: StiefelOptConfig | None = None, *,
                          mats: Sequence[np.ndarray] | None = None,
                          kind: DistanceKind | str = DistanceKind.WSD):
    """Template minimizing the summed distance to the K shot subspaces.

    Initialized from :func:`union_subspace` of ``mats`` (or of the weighted
    shot bases when no matrices are given).  Returns ``(template, trace)``.
    """
    subs = list(subs)
    if not subs:
        raise ValueError("prototypical subspace of zero shots")
    s = subs[0].basis_size if s is None else s
    if any(sub.basis_size != s for sub in subs):
        raise DimensionError("shot subspaces must have basis size s")
    cfg = cfg or PS_CONFIG
    init = union_subspace(mats if mats is not None else _weighted_bases(subs), s)
    bases, b_weights = stack(subs)
    if init.ambient_dim != bases.shape[1]:
        raise DimensionError("feature matrices and subspaces disagree on d")
    kind = DistanceKind(kind)
    lam = init.weights

    basis, trace = optimize_on_stiefel(
        lambda u: ps_objective(u, lam, bases, b_weights, kind)[1], init.basis, cfg,
        objective=lambda u: ps_objective(u, lam, bases, b_weights, kind)[0])
    return init.with_basis(basis), trace


def union_templates(support: SupportSet, s: int | None = None) -> TemplateSet:
    s = support.basis_size if s is None else s
    rows = support.matrices if support.matrices is not None else [
        _weighted_bases(row) for row in support.subspaces]
    return TemplateSet(tuple(union_subspace(row, s) for row in rows), Strategy.UNION)


def prototypical_templates(support: SupportSet, s: int | None = None,
                           cfg: StiefelOptConfig | None = None,
                           kind: DistanceKind | str = DistanceKind.WSD) -> TemplateSet:
    """PS for every class independently."""
    out, traces = [], []
    for i, row in enumerate(support.subspaces):
        mats = support.matrices[i] if support.matrices is not None else None
        t, tr = prototypical_subspace(row, s, cfg, mats=mats, kind=kind)
        out.append(t)
        traces.append(tuple(tr))
    return TemplateSet(tuple(out), Strategy.PS, tuple(traces))


def discriminative_subspaces(support: SupportSet, s: int | None = None,
                             cfg: StiefelOptConfig | None = None,
                             kind: DistanceKind | str = DistanceKind.WSD) -> TemplateSet:
    """Jointly optimized templates for all N classes of the support set.

    One iteration computes the full-batch cross-entropy gradient and updates
    every template simultaneously.
    """
    if support.ways < 2:
        raise ValueError("discriminative templates need at least two classes")
    cfg = cfg or DS_CONFIG
    kind = DistanceKind(kind)
    init = union_templates(support, s)
    t0, t_weights = stack(init.templates)
    bases, b_weights = stack(support.flat())
    if t0.shape[1:] != bases.shape[1:]:
        raise DimensionError("templates and support subspaces disagree in shape")
    labels = support.labels()

    final, trace = optimize_on_stiefel(
        lambda u: ds_objective(u, t_weights, bases, b_weights, labels, kind)[1], t0, cfg,
        objective=lambda u: ds_objective(u, t_weights, bases, b_weights, labels, kind)[0])
    templates = tuple(t.with_basis(b) for t, b in zip(init.templates, final))
    return TemplateSet(templates, Strategy.DS, tuple(trace))


def build_templates(support: SupportSet, strategy: Strategy | str, s: int | None = None,
                    cfg: StiefelOptConfig | None = None,
                    kind: DistanceKind | str = DistanceKind.WSD) -> TemplateSet:
    strategy = Strategy(strategy)
    if strategy is Strategy.UNION:
        return union_templates(support, s)
    if strategy is Strategy.PS:
        return prototypical_templates(support, s, cfg, kind)
    if strategy is Strategy.DS:
        return discriminative_subspaces(support, s, cfg, kind)
    raise ValueError("the nn strategy does not build templates; use nn_classify")


def nn_classify(query: Subspace, support: SupportSet,
                kind: DistanceKind | str = DistanceKind.WSD) -> int:
    """Class of the nearest support subspace; ties go to the lowest (class, shot)."""
    bases, weights = stack(support.flat())
    if query.basis.shape != bases.shape[1:]:
        raise DimensionError(f"query shape {query.basis.shape} != support shape {bases.shape[1:]}")
    dist = pairwise_distances(query.basis[None], query.weights[None], bases, weights, kind)[0]
    return int(np.argmin(dist)) // support.shots
