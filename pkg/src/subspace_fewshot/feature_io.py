"""Feature grids, the SRLF binary format, datasets and the synthetic generator.

A feature grid is the ``h x w x d`` array of local descriptors produced for a
single image.  On disk a grid is stored as::

    offset  size  content
    0       4     magic b"SRLF"
    4       4     version, uint32 little-endian (== 1)
    8       12    h, w, d as uint32 little-endian
    20      4*hwd float32 little-endian values, row-major over (h, w), channel innermost

A dataset directory holds one file per grid plus ``manifest.json``::

    {"classes": [{"name": "c00", "grids": ["c00/0000.srlf", ...]}, ...]}
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DimensionError, FormatError

MAGIC = b"SRLF"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIIII")
MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class FeatureGrid:
    """``h x w x d`` grid of local feature vectors held as float64."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        if v.ndim != 3 or min(v.shape) < 1:
            raise DimensionError(f"feature grid must be a non-empty 3-D array, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise FormatError("feature grid contains non-finite values")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def depth(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    def __eq__(self, other):
        if not isinstance(other, FeatureGrid):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.values, other.values)

    __hash__ = None


def flatten(grid: FeatureGrid) -> np.ndarray:
    """Return the ``d x (h*w)`` feature matrix; column ``j`` is cell ``(j // w, j % w)``."""
    h, w, d = grid.shape
    return grid.values.reshape(h * w, d).T.copy()


def unflatten(matrix: np.ndarray, height: int, width: int) -> FeatureGrid:
    """Inverse of :func:`flatten`."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] != height * width:
        raise DimensionError(
            f"matrix of shape {matrix.shape} cannot be a {height}x{width} grid")
    return FeatureGrid(matrix.T.reshape(height, width, matrix.shape[0]))


# --------------------------------------------------------------------------
# SRLF files
# --------------------------------------------------------------------------

def save_feature_grid(grid: FeatureGrid, path) -> None:
    h, w, d = grid.shape
    with np.errstate(over="ignore"):
        payload = grid.values.astype("<f4")
    if not np.all(np.isfinite(payload)):
        raise FormatError(f"{path}: values overflow float32")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, FORMAT_VERSION, h, w, d))
        fh.write(payload.tobytes(order="C"))


def load_feature_grid(path) -> FeatureGrid:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{path}: no such feature file")
    raw = path.read_bytes()
    if len(raw) < HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(raw)} of {HEADER.size} bytes at offset 0)")
    magic, version, h, w, d = HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at offset 0, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at offset 4")
    if min(h, w, d) < 1:
        raise FormatError(f"{path}: zero dimension in header (h={h}, w={w}, d={d}) at offset 8")
    expected = HEADER.size + 4 * h * w * d
    if len(raw) < expected:
        raise FormatError(
            f"{path}: truncated payload, {len(raw) - HEADER.size} of {expected - HEADER.size} "
            f"bytes present after offset {HEADER.size}")
    if len(raw) > expected:
        raise FormatError(f"{path}: {len(raw) - expected} trailing bytes after offset {expected}")
    values = np.frombuffer(raw, dtype="<f4", offset=HEADER.size).astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise FormatError(
            f"{path}: non-finite value at offset {HEADER.size + 4 * int(bad[0])}")
    return FeatureGrid(values.reshape(h, w, d))


# --------------------------------------------------------------------------
# Datasets
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassRecord:
    name: str
    grids: tuple[FeatureGrid, ...]


@dataclass(frozen=True)
class Dataset:
    """Ordered labelled collection of equally-shaped feature grids."""

    classes: tuple[ClassRecord, ...]
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        classes = tuple(self.classes)
        if not classes:
            raise FormatError("dataset has no classes")
        names = [c.name for c in classes]
        if len(set(names)) != len(names):
            raise FormatError("class names must be unique")
        shape = None
        for c in classes:
            if not c.grids:
                raise FormatError(f"class {c.name!r} has no grids")
            for g in c.grids:
                if shape is None:
                    shape = g.shape
                elif g.shape != shape:
                    raise DimensionError(
                        f"class {c.name!r}: grid shape {g.shape} differs from {shape}")
        object.__setattr__(self, "classes", classes)

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        return self.classes[0].grids[0].shape

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def class_sizes(self) -> tuple[int, ...]:
        return tuple(len(c.grids) for c in self.classes)

    @cached_property
    def offsets(self) -> np.ndarray:
        """Flat index of the first grid of every class."""
        return np.concatenate([[0], np.cumsum(self.class_sizes)[:-1]]).astype(np.int64)

    @cached_property
    def matrices(self) -> np.ndarray:
        """All feature matrices stacked as ``(total_grids, d, h*w)`` in class order."""
        out = np.stack([flatten(g) for c in self.classes for g in c.grids])
        out.flags.writeable = False
        return out

    def flat_index(self, class_index: int, grid_index: int) -> int:
        return int(self.offsets[class_index]) + grid_index


def save_dataset(dataset: Dataset, directory) -> Path:
    """Write every grid as SRLF plus ``manifest.json``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"classes": []}
    for c in dataset.classes:
        sub = directory / c.name
        sub.mkdir(exist_ok=True)
        rels = []
        for i, g in enumerate(c.grids):
            rel = f"{c.name}/{i:04d}.srlf"
            save_feature_grid(g, directory / rel)
            rels.append(rel)
        manifest["classes"].append({"name": c.name, "grids": rels})
    out = directory / MANIFEST_NAME
    out.write_text(json.dumps(manifest, indent=1) + "\n")
    return out


def load_dataset(path) -> Dataset:
    """Load a dataset from a manifest file or a directory containing one."""
    path = Path(path)
    manifest_path = path / MANIFEST_NAME if path.is_dir() else path
    try:
        doc = json.loads(manifest_path.read_text())
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{manifest_path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("classes"), list):
        raise FormatError(f"{manifest_path}: expected an object with a 'classes' list")
    root = manifest_path.parent
    classes = []
    for entry in doc["classes"]:
        try:
            name, rels = entry["name"], entry["grids"]
        except (KeyError, TypeError) as exc:
            raise FormatError(f"{manifest_path}: malformed class entry {entry!r}") from exc
        classes.append(ClassRecord(str(name), tuple(load_feature_grid(root / r) for r in rels)))
    return Dataset(tuple(classes), {"source": "manifest", "path": str(manifest_path)})


# --------------------------------------------------------------------------
# Synthetic data
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters of the synthetic grid generator.

    Each class owns ``class_rank`` orthonormal directions; ``background_rank``
    directions are shared by every class and orthogonal to all class
    directions of any given class.  A ``foreground_fraction`` of the cells of
    each grid carries a random mixture of the class directions, the other cells
    a random mixture of the background directions, and every cell receives
    isotropic Gaussian noise of scale ``noise_sigma``.

    Two optional nuisance factors mimic image-to-image variation of CNN
    features: ``amplitude_spread`` is the log-normal spread of a per-grid
    scale applied to the whole grid (noise included), and ``clutter_rank``
    adds that many grid-specific random directions, with coefficients of
    standard deviation ``clutter_scale``, to the non-foreground cells.
    ``class_overlap`` in [0, 1) blends every class's directions with one
    shared set, ``sqrt(1 - o) * own + sqrt(o) * shared``, which makes classes
    mutually confusable.  ``spectrum_spread`` gives every class its own energy
    profile: the coefficient of each class direction is scaled by a fixed
    per-class factor ``exp(spectrum_spread * N(0, 1))``.  ``class_jitter``
    perturbs the class directions of every grid separately: each column gets
    Gaussian noise of expected norm ``class_jitter`` before
    re-orthonormalization, so grids of one class share their pattern only
    approximately.  The nuisance, overlap, spectrum and jitter factors default
    to off.
    """

    num_classes: int = 10
    grids_per_class: int = 30
    h: int = 5
    w: int = 5
    d: int = 64
    class_rank: int = 3
    background_rank: int = 1
    noise_sigma: float = 0.1
    foreground_fraction: float = 0.6
    seed: int = 0
    amplitude_spread: float = 0.0
    clutter_rank: int = 0
    clutter_scale: float = 1.0
    class_overlap: float = 0.0
    spectrum_spread: float = 0.0
    class_jitter: float = 0.0

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.grids_per_class < 1:
            raise ValueError("grids_per_class must be >= 1")
        if min(self.h, self.w, self.d) < 1:
            raise ValueError("h, w, d must be positive")
        if self.class_rank < 1 or self.background_rank < 0:
            raise ValueError("class_rank must be >= 1 and background_rank >= 0")
        if self.class_rank + self.background_rank > self.d:
            raise DimensionError(
                f"class_rank + background_rank = {self.class_rank + self.background_rank} "
                f"exceeds d = {self.d}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if not 0 < self.foreground_fraction <= 1:
            raise ValueError("foreground_fraction must lie in (0, 1]")
        if self.amplitude_spread < 0 or self.clutter_rank < 0 or self.clutter_scale < 0:
            raise ValueError("amplitude_spread, clutter_rank and clutter_scale must be nonnegative")
        if self.clutter_rank > self.d:
            raise DimensionError(f"clutter_rank {self.clutter_rank} exceeds d = {self.d}")
        if self.spectrum_spread < 0 or self.class_jitter < 0:
            raise ValueError("spectrum_spread and class_jitter must be nonnegative")
        if not 0 <= self.class_overlap < 1:
            raise ValueError("class_overlap must lie in [0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


# Stream tags used as the first spawn-key element.
_DIRECTIONS, _SIGNAL, _NOISE, _SHARED, _SPECTRUM, _JITTER = 0, 1, 2, 3, 4, 5


def philox(seed: int, *key: int) -> np.random.Generator:
    """Philox generator for the sub-stream ``key`` of a 64-bit master seed."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def _orthonormal(g: np.ndarray) -> np.ndarray:
    q, r = np.linalg.qr(g)
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def synthetic_directions(config: SyntheticConfig) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(class_dirs, background)`` of shapes ``(C, d, r)`` and ``(d, b)``."""
    config.validate()
    rng = philox(config.seed, _DIRECTIONS)
    d, r, b = config.d, config.class_rank, config.background_rank
    background = _orthonormal(rng.standard_normal((d, b))) if b else np.zeros((d, 0))
    dirs = np.empty((config.num_classes, d, r))
    for c in range(config.num_classes):
        g = rng.standard_normal((d, r))
        g -= background @ (background.T @ g)
        dirs[c] = _orthonormal(g)
    if config.class_overlap:
        g = philox(config.seed, _SHARED).standard_normal((d, r))
        shared = _orthonormal(g - background @ (background.T @ g))
        o = config.class_overlap
        for c in range(config.num_classes):
            dirs[c] = _orthonormal(np.sqrt(1 - o) * dirs[c] + np.sqrt(o) * shared)
    return dirs, background


def generate_synthetic_dataset(config: SyntheticConfig) -> Dataset:
    """Deterministically generate a labelled dataset of synthetic grids."""
    dirs, background = synthetic_directions(config)
    h, w, d = config.h, config.w, config.d
    cells = h * w
    n_fg = min(cells, max(1, int(round(config.foreground_fraction * cells))))
    spectra = np.ones((config.num_classes, config.class_rank))
    if config.spectrum_spread:
        spectra = np.exp(config.spectrum_spread * philox(config.seed, _SPECTRUM).standard_normal(
            spectra.shape))
    classes = []
    for c in range(config.num_classes):
        grids = []
        for g in range(config.grids_per_class):
            rng = philox(config.seed, _SIGNAL, c, g)
            fg = np.zeros(cells, dtype=bool)
            fg[rng.choice(cells, n_fg, replace=False)] = True
            feats = np.zeros((cells, d))
            own = dirs[c]
            if config.class_jitter:
                kick = philox(config.seed, _JITTER, c, g).standard_normal(own.shape)
                own = _orthonormal(own + config.class_jitter / np.sqrt(d) * kick)
            feats[fg] = (rng.standard_normal((n_fg, config.class_rank)) * spectra[c]) @ own.T
            n_bg = cells - n_fg
            if config.background_rank and n_bg:
                feats[~fg] = rng.standard_normal((n_bg, config.background_rank)) @ background.T
            if config.clutter_rank and n_bg:
                clutter = _orthonormal(rng.standard_normal((d, config.clutter_rank)))
                coef = config.clutter_scale * rng.standard_normal((n_bg, config.clutter_rank))
                feats[~fg] += coef @ clutter.T
            if config.noise_sigma > 0:
                feats += config.noise_sigma * philox(config.seed, _NOISE, c, g).standard_normal((cells, d))
            if config.amplitude_spread:
                feats *= np.exp(config.amplitude_spread * rng.standard_normal())
            grids.append(FeatureGrid(feats.reshape(h, w, d)))
        classes.append(ClassRecord(f"c{c:03d}", tuple(grids)))
    return Dataset(tuple(classes), {"source": "synthetic", "config": _config_dict(config)})


def _config_dict(config: SyntheticConfig) -> dict:
    return {k: getattr(config, k) for k in config.__dataclass_fields__}


def shuffle_labels(dataset: Dataset, num_classes: int, seed: int) -> Dataset:
    """Pool every grid, permute, and deal them into ``num_classes`` equal classes.

    When each pooled grid is drawn independently (for example a synthetic
    dataset with one grid per class) the new labels carry no information
    about the features.
    """
    pool = [g for c in dataset.classes for g in c.grids]
    per_class = len(pool) // num_classes
    if per_class < 1:
        raise ValueError(f"cannot deal {len(pool)} grids into {num_classes} classes")
    order = philox(seed, 0).permutation(len(pool))
    classes = tuple(
        ClassRecord(f"s{k:03d}", tuple(pool[i] for i in order[k * per_class:(k + 1) * per_class]))
        for k in range(num_classes))
    prov = {"source": "shuffled", "seed": seed, "parent": dataset.provenance}
    return Dataset(classes, prov)


def stack_grids(grids: Iterable[FeatureGrid]) -> np.ndarray:
    return np.stack([flatten(g) for g in grids])


__all__ = [
    "FeatureGrid", "flatten", "unflatten", "save_feature_grid", "load_feature_grid",
    "ClassRecord", "Dataset", "save_dataset", "load_dataset", "SyntheticConfig",
    "synthetic_directions", "generate_synthetic_dataset", "shuffle_labels", "philox",
    "stack_grids", "MAGIC", "FORMAT_VERSION",
]
