"""Shared data model for the classification pipeline.

Conventions used everywhere in the package:

* cubes are stored pixel-major, ``values[i, j, b]`` with shape (M, N, B);
* pixels are linearized row-major, so pixel (i, j) is column ``i * N + j``
  of any B x (M*N) or d x (M*N) matrix;
* class ids are 1-based and 0 marks background.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class ValidationError(ValueError):
    """Raised when inputs violate a data-model invariant."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    # private read-only copy; never freeze the caller's buffer
    arr = np.array(arr, order="C", copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class HsiCube:
    """M x N x B reflectance tensor (pixel-major)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ValidationError(f"cube must be 3-D (rows, cols, bands), got shape {v.shape}")
        if min(v.shape) < 1:
            raise ValidationError(f"cube dimensions must be >= 1, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("cube contains non-finite values")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    def as_matrix(self) -> np.ndarray:
        """B x (M*N) view with columns in row-major pixel order."""
        return self.values.reshape(-1, self.bands).T

    @classmethod
    def from_matrix(cls, mat: np.ndarray, rows: int, cols: int) -> "HsiCube":
        mat = np.asarray(mat)
        if mat.ndim != 2 or mat.shape[1] != rows * cols:
            raise ValidationError(f"matrix shape {mat.shape} incompatible with {rows}x{cols} image")
        return cls(mat.T.reshape(rows, cols, mat.shape[0]))

    def __eq__(self, other):
        return isinstance(other, HsiCube) and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class LabelRaster:
    """M x N class map; 0 is background, classes are 1..n_classes.

    ``n_classes`` defaults to the largest label present.
    """

    labels: np.ndarray
    n_classes: int | None = None

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2 or min(lab.shape) < 1:
            raise ValidationError(f"labels must be a non-empty 2-D array, got shape {lab.shape}")
        if lab.dtype.kind == "f":
            if not np.all(np.isfinite(lab)) or np.any(lab != np.round(lab)):
                raise ValidationError("labels must be integers")
        elif lab.dtype.kind not in "iu":
            raise ValidationError(f"labels must be integers, got dtype {lab.dtype}")
        lab = lab.astype(np.int64)
        if np.any(lab < 0):
            raise ValidationError("labels must be non-negative")
        c = int(lab.max()) if self.n_classes is None else int(self.n_classes)
        if c < 2:
            raise ValidationError(f"need at least 2 classes, got {c}")
        if lab.max() > c:
            raise ValidationError(f"label {int(lab.max())} outside 0..{c}")
        object.__setattr__(self, "labels", _frozen(lab))
        object.__setattr__(self, "n_classes", c)

    @property
    def rows(self) -> int:
        return self.labels.shape[0]

    @property
    def cols(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    @property
    def foreground(self) -> np.ndarray:
        return self.labels > 0

    def class_counts(self) -> np.ndarray:
        """Pixel count per class; index 0 is class 1."""
        return np.bincount(self.labels.ravel(), minlength=self.n_classes + 1)[1:]

    def __eq__(self, other):
        return (
            isinstance(other, LabelRaster)
            and self.n_classes == other.n_classes
            and np.array_equal(self.labels, other.labels)
        )

    __hash__ = None


@dataclass(frozen=True)
class TrainingSet:
    """Labeled pixels ``(row, col, class_id)`` plus the raster shape they live on.

    ``shortfall`` maps a class id to how many pixels it was short of the
    requested per-class count.
    """

    entries: tuple[tuple[int, int, int], ...]
    shape: tuple[int, int]
    shortfall: dict[int, int] = field(default_factory=dict, compare=True)

    def __post_init__(self):
        entries = tuple((int(i), int(j), int(k)) for i, j, k in self.entries)
        if len({(i, j) for i, j, _ in entries}) != len(entries):
            raise ValidationError("training set contains duplicate pixels")
        m, n = self.shape
        for i, j, k in entries:
            if not (0 <= i < m and 0 <= j < n):
                raise ValidationError(f"training pixel ({i}, {j}) outside {m}x{n} raster")
            if k < 1:
                raise ValidationError(f"training pixel ({i}, {j}) has background class")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "shape", (int(m), int(n)))
        object.__setattr__(self, "shortfall", {int(k): int(v) for k, v in self.shortfall.items()})

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def rows(self) -> np.ndarray:
        return np.array([e[0] for e in self.entries], dtype=np.int64)

    @property
    def cols(self) -> np.ndarray:
        return np.array([e[1] for e in self.entries], dtype=np.int64)

    @property
    def classes(self) -> np.ndarray:
        return np.array([e[2] for e in self.entries], dtype=np.int64)

    @property
    def flat_index(self) -> np.ndarray:
        """Row-major linear pixel indices."""
        return self.rows * self.shape[1] + self.cols

    def mask(self) -> np.ndarray:
        """Boolean raster of training pixels (the pinned set)."""
        m = np.zeros(self.shape, dtype=bool)
        if self.entries:
            m[self.rows, self.cols] = True
        return m

    def check_against(self, gt: LabelRaster) -> None:
        if gt.shape != self.shape:
            raise ValidationError(f"training set shape {self.shape} != ground truth {gt.shape}")
        for i, j, k in self.entries:
            if gt.labels[i, j] != k:
                raise ValidationError(
                    f"training pixel ({i}, {j}) claims class {k}, ground truth says {gt.labels[i, j]}"
                )

    def to_json(self) -> str:
        return json.dumps(
            {
                "shape": list(self.shape),
                "entries": [list(e) for e in self.entries],
                "shortfall": {str(k): v for k, v in sorted(self.shortfall.items())},
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "TrainingSet":
        d = json.loads(text)
        return cls(
            entries=tuple(tuple(e) for e in d["entries"]),
            shape=tuple(d["shape"]),
            shortfall={int(k): int(v) for k, v in d.get("shortfall", {}).items()},
        )


@dataclass(frozen=True, eq=False)
class ProbabilityTensor:
    """M x N x c per-class probability maps; channel k-1 holds class k.

    ``excluded`` marks pixels that were never classified (background).
    """

    values: np.ndarray
    excluded: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] < 2:
            raise ValidationError(f"probability tensor must be M x N x c with c >= 2, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("probability tensor contains non-finite values")
        ex = np.zeros(v.shape[:2], dtype=bool) if self.excluded is None else np.asarray(self.excluded, dtype=bool)
        if ex.shape != v.shape[:2]:
            raise ValidationError("excluded mask shape does not match tensor")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "excluded", _frozen(ex))

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def n_classes(self) -> int:
        return self.values.shape[2]

    def channel(self, k: int) -> np.ndarray:
        """Probability map of class ``k`` (1-based)."""
        return self.values[:, :, k - 1]

    def check_simplex(self, atol: float = 1e-9) -> None:
        v = self.values[~self.excluded]
        if v.size == 0:
            return
        if np.any(v < -atol) or np.any(v > 1 + atol):
            raise ValidationError("probabilities outside [0, 1]")
        err = np.abs(v.sum(axis=1) - 1.0).max()
        if err > atol:
            raise ValidationError(f"probability vectors do not sum to 1 (max error {err:.3g})")

    def __eq__(self, other):
        return (
            isinstance(other, ProbabilityTensor)
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.excluded, other.excluded)
        )

    __hash__ = None


def validate_pair(cube: HsiCube, gt: LabelRaster) -> tuple[HsiCube, LabelRaster]:
    if not isinstance(cube, HsiCube):
        cube = HsiCube(cube)
    if not isinstance(gt, LabelRaster):
        gt = LabelRaster(gt)
    if cube.values.shape[:2] != gt.shape:
        raise ValidationError(
            f"cube is {cube.rows}x{cube.cols} but labels are {gt.rows}x{gt.cols}"
        )
    return cube, gt


def sample_training_set(gt: LabelRaster, per_class: int, seed) -> TrainingSet:
    """Draw ``per_class`` pixels uniformly without replacement from every class.

    Classes with fewer pixels contribute all of them; the deficit is kept in
    ``TrainingSet.shortfall``. ``seed`` is anything ``np.random.default_rng``
    accepts.
    """
    if per_class < 1:
        raise ValidationError(f"per_class must be >= 1, got {per_class}")
    rng = np.random.default_rng(seed)
    flat = gt.labels.ravel()
    n = gt.cols
    entries: list[tuple[int, int, int]] = []
    shortfall: dict[int, int] = {}
    for k in range(1, gt.n_classes + 1):
        idx = np.flatnonzero(flat == k)
        if idx.size == 0:
            raise ValidationError(f"class {k} has no ground-truth pixels")
        if idx.size <= per_class:
            chosen = idx
            if idx.size < per_class:
                shortfall[k] = per_class - idx.size
                logger.info("class %d has only %d pixels; taking all", k, idx.size)
        else:
            chosen = np.sort(rng.choice(idx, size=per_class, replace=False))
        entries.extend((int(p // n), int(p % n), k) for p in chosen)
    return TrainingSet(tuple(entries), gt.shape, shortfall)


def one_hot(classes: Sequence[int] | Iterable[int], n_classes: int) -> np.ndarray:
    classes = np.asarray(list(classes), dtype=np.int64)
    out = np.zeros((classes.size, n_classes))
    out[np.arange(classes.size), classes - 1] = 1.0
    return out
