"""N-way K-shot episodic evaluation with 95% confidence intervals.

Every episode draws its randomness from ``(seed, episode index)`` alone and
results are aggregated in index order, so a report does not depend on how
many worker processes produced it.
"""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError
from .feature_io import Dataset, philox
from .metric import DistanceKind, pairwise_distances, softmax, stack
from .stiefel import StiefelOptConfig
from .subspace import Subspace, extract_subspaces
from .templates import DS_CONFIG, PS_CONFIG, Strategy, SupportSet, build_templates

REPORT_SCHEMA_VERSION = "1"
Z95 = 1.96

GridRef = tuple[int, int]  # (dataset class index, grid index within the class)


@dataclass(frozen=True)
class EvalConfig:
    ways: int = 5
    shots: int = 5
    queries: int = 15
    episodes: int = 1000
    basis_size: int = 5
    metric: DistanceKind = DistanceKind.WSD
    template: Strategy = Strategy.DS
    alpha: float | None = None  # None: 0.1 for PS, 0.01 for DS
    iterations: int = 50
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "metric", DistanceKind(self.metric))
        object.__setattr__(self, "template", Strategy(self.template))
        if self.ways < 2 or self.shots < 1 or self.queries < 1 or self.episodes < 1:
            raise ValueError("need ways >= 2, shots >= 1, queries >= 1, episodes >= 1")
        if self.basis_size < 1:
            raise ValueError("basis_size must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError("alpha must be positive")

    def optimizer(self) -> StiefelOptConfig | None:
        if self.template is Strategy.PS:
            base = PS_CONFIG
        elif self.template is Strategy.DS:
            base = DS_CONFIG
        else:
            return None
        return StiefelOptConfig(self.alpha if self.alpha is not None else base.step_size,
                                self.iterations)

    def check_dataset(self, dataset: Dataset) -> None:
        if self.ways > dataset.num_classes:
            raise ValueError(f"{self.ways}-way episodes need {self.ways} classes, "
                             f"dataset has {dataset.num_classes}")
        smallest = min(dataset.class_sizes)
        if self.shots + self.queries > smallest:
            raise ValueError(f"shots + queries = {self.shots + self.queries} exceeds the "
                             f"smallest class ({smallest} grids)")
        if self.basis_size > dataset.grid_shape[2]:
            raise DimensionError(f"basis size {self.basis_size} exceeds d = {dataset.grid_shape[2]}")

    def to_dict(self) -> dict:
        """Result-relevant fields; the worker count is left out since it cannot change results."""
        out = asdict(self)
        out.pop("workers")
        out["metric"] = self.metric.value
        out["template"] = self.template.value
        return out


@dataclass(frozen=True)
class Episode:
    index: int
    seed: int
    classes: tuple[int, ...]
    support: tuple[tuple[GridRef, ...], ...]
    queries: tuple[tuple[GridRef, int], ...]

    @property
    def ways(self) -> int:
        return len(self.classes)

    @property
    def shots(self) -> int:
        return len(self.support[0])


def sample_episode(dataset: Dataset, cfg: EvalConfig, index: int) -> Episode:
    """Draw N classes, then K support and Q query grids per class, without replacement."""
    cfg.check_dataset(dataset)
    rng = philox(cfg.seed, index)
    classes = rng.choice(dataset.num_classes, cfg.ways, replace=False)
    support, queries = [], []
    for label, c in enumerate(classes):
        pick = rng.permutation(dataset.class_sizes[c])[:cfg.shots + cfg.queries]
        support.append(tuple((int(c), int(g)) for g in pick[:cfg.shots]))
        queries.extend(((int(c), int(g)), label) for g in pick[cfg.shots:])
    return Episode(index, cfg.seed, tuple(int(c) for c in classes), tuple(support), tuple(queries))


class SubspaceCache:
    """Subspaces of every grid of a dataset at one basis size."""

    def __init__(self, dataset: Dataset, s: int):
        self.dataset = dataset
        self.s = s
        subs = extract_subspaces(dataset.matrices, s)
        self.subspaces = subs
        self.bases, self.weights = stack(subs)

    def flat(self, ref: GridRef) -> int:
        return self.dataset.flat_index(*ref)


@dataclass(frozen=True)
class EpisodeResult:
    index: int
    accuracy: float
    predictions: tuple[int, ...]
    labels: tuple[int, ...]


Predictor = Callable[[SupportSet, Sequence[Subspace]], Sequence[int]]


def run_episode(dataset: Dataset, episode: Episode, cfg: EvalConfig, *,
                cache: SubspaceCache | None = None,
                predictor: Predictor | None = None) -> EpisodeResult:
    """Classify every query of one episode using only that episode's support."""
    if cache is None or cache.s != cfg.basis_size or cache.dataset is not dataset:
        cache = SubspaceCache(dataset, cfg.basis_size)
    support = SupportSet(
        tuple(tuple(cache.subspaces[cache.flat(r)] for r in row) for row in episode.support),
        tuple(tuple(dataset.matrices[cache.flat(r)] for r in row) for row in episode.support))
    q_idx = np.array([cache.flat(ref) for ref, _ in episode.queries])
    labels = np.array([lab for _, lab in episode.queries])

    if predictor is not None:
        preds = np.asarray(predictor(support, [cache.subspaces[i] for i in q_idx]), dtype=int)
    elif cfg.template is Strategy.NN:
        s_idx = np.array([cache.flat(r) for row in episode.support for r in row])
        dist = pairwise_distances(cache.bases[q_idx], cache.weights[q_idx],
                                  cache.bases[s_idx], cache.weights[s_idx], cfg.metric)
        preds = np.argmin(dist, axis=1) // episode.shots
    else:
        temps = build_templates(support, cfg.template, cfg.basis_size, cfg.optimizer(), cfg.metric)
        t_bases, t_weights = stack(temps.templates)
        dist = pairwise_distances(cache.bases[q_idx], cache.weights[q_idx],
                                  t_bases, t_weights, cfg.metric)
        preds = np.argmax(softmax(-dist, axis=1), axis=1)
    correct = int(np.sum(preds == labels))
    return EpisodeResult(episode.index, correct / len(labels),
                         tuple(int(p) for p in preds), tuple(int(y) for y in labels))


@dataclass
class EvalReport:
    mean_accuracy: float
    ci_half_width: float
    episode_accuracies: list[float]
    config: dict
    dataset: dict = field(default_factory=dict)
    wall_clock_seconds: float = 0.0
    schema_version: str = REPORT_SCHEMA_VERSION

    def to_dict(self, include_timing: bool = True) -> dict:
        out = asdict(self)
        if not include_timing:
            out.pop("wall_clock_seconds")
        return out

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=1, sort_keys=True) + "\n"


def confidence_interval(accuracies: Sequence[float]) -> tuple[float, float]:
    """Mean and 95% half-width ``1.96 * std(ddof=1) / sqrt(n)``; one sample gives 0."""
    acc = np.asarray(accuracies, dtype=np.float64)
    n = acc.size
    if n == 0:
        raise ValueError("no accuracies")
    mean = float(np.mean(acc))
    if n == 1:
        return mean, 0.0
    return mean, float(Z95 * np.std(acc, ddof=1) / math.sqrt(n))


# worker-process state
_WORKER: dict = {}


def _init_worker(dataset: Dataset, cfg: EvalConfig) -> None:
    _WORKER["dataset"] = dataset
    _WORKER["cfg"] = cfg
    _WORKER["cache"] = SubspaceCache(dataset, cfg.basis_size)


def _run_indices(indices: Sequence[int]) -> list[float]:
    dataset, cfg, cache = _WORKER["dataset"], _WORKER["cfg"], _WORKER["cache"]
    return [run_episode(dataset, sample_episode(dataset, cfg, i), cfg, cache=cache).accuracy
            for i in indices]


def evaluate(dataset: Dataset, cfg: EvalConfig) -> EvalReport:
    """Mean episode accuracy and its 95% confidence half-width."""
    cfg.check_dataset(dataset)
    start = time.perf_counter()
    indices = list(range(cfg.episodes))
    if cfg.workers == 1:
        _init_worker(dataset, cfg)
        try:
            accs = _run_indices(indices)
        finally:
            _WORKER.clear()
    else:
        chunks = [indices[k::cfg.workers] for k in range(cfg.workers)]
        with ProcessPoolExecutor(cfg.workers, initializer=_init_worker,
                                 initargs=(dataset, cfg)) as pool:
            parts = list(pool.map(_run_indices, chunks))
        accs = [0.0] * cfg.episodes
        for chunk, part in zip(chunks, parts):
            for i, a in zip(chunk, part):
                accs[i] = a
    mean, half = confidence_interval(accs)
    return EvalReport(mean, half, accs, cfg.to_dict(), _json_safe(dataset.provenance),
                      time.perf_counter() - start)


def _json_safe(obj):
    return json.loads(json.dumps(obj, default=str))


@dataclass
class SweepReport:
    entries: list[tuple[int, EvalReport]]

    @property
    def sizes(self) -> list[int]:
        return [s for s, _ in self.entries]

    def accuracy(self, s: int) -> EvalReport:
        return dict(self.entries)[s]

    def to_csv(self) -> str:
        lines = ["s,mean_accuracy,ci_half_width,episodes,metric,template"]
        for s, rep in self.entries:
            lines.append(f"{s},{rep.mean_accuracy!r},{rep.ci_half_width!r},"
                         f"{len(rep.episode_accuracies)},{rep.config['metric']},{rep.config['template']}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        doc = {"entries": [{"s": s, "report": rep.to_dict(False)} for s, rep in self.entries]}
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def sweep_basis_size(dataset: Dataset, sizes: Sequence[int], cfg: EvalConfig) -> SweepReport:
    """One :func:`evaluate` per basis size, all sharing the master seed."""
    sizes = [int(s) for s in sizes]
    if not sizes:
        raise ValueError("no basis sizes given")
    if len(set(sizes)) != len(sizes):
        raise ValueError(f"duplicate basis sizes in {sizes}")
    d = dataset.grid_shape[2]
    if any(s < 1 or s > d for s in sizes):
        raise DimensionError(f"basis sizes must lie in [1, {d}], got {sizes}")
    return SweepReport([(s, evaluate(dataset, replace(cfg, basis_size=s))) for s in sorted(sizes)])
