"""Binary containers, synthetic scenes and result export.

Cube container (``.hsic``)::

    HSIC v1 <rows> <cols> <bands> f32 le row-major\\n
    <rows*cols*bands little-endian float32, pixel-major: ((i*cols)+j)*bands+b>

Label container (``.hsil``)::

    HSIL v1 <rows> <cols> u16 le row-major\\n
    <rows*cols little-endian uint16, 0 = background>
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .core import HsiCube, LabelRaster, ProbabilityTensor, TrainingSet, ValidationError


class FormatError(ValueError):
    """Malformed or truncated container file."""


CUBE_MAGIC = "HSIC"
LABEL_MAGIC = "HSIL"
VERSION = "v1"
_MAX_HEADER = 256


@dataclass(frozen=True)
class CubeFileHeader:
    magic: str
    version: str
    rows: int
    cols: int
    bands: int = 1
    dtype: str = "f32"
    byte_order: str = "le"
    layout: str = "row-major"

    @property
    def itemsize(self) -> int:
        return {"f32": 4, "u16": 2}[self.dtype]

    @property
    def payload_bytes(self) -> int:
        return self.rows * self.cols * self.bands * self.itemsize

    def encode(self) -> bytes:
        if self.magic == CUBE_MAGIC:
            dims = f"{self.rows} {self.cols} {self.bands}"
        else:
            dims = f"{self.rows} {self.cols}"
        return f"{self.magic} {self.version} {dims} {self.dtype} {self.byte_order} {self.layout}\n".encode("ascii")

    @classmethod
    def decode(cls, line: bytes) -> "CubeFileHeader":
        try:
            parts = line.decode("ascii").split()
        except UnicodeDecodeError as exc:
            raise FormatError("header is not ASCII") from exc
        if not parts or parts[0] not in (CUBE_MAGIC, LABEL_MAGIC):
            raise FormatError(f"bad magic {parts[:1]!r}")
        magic = parts[0]
        want = 8 if magic == CUBE_MAGIC else 7
        if len(parts) != want:
            raise FormatError(f"{magic} header must have {want} fields, got {len(parts)}")
        if parts[1] != VERSION:
            raise FormatError(f"unsupported version {parts[1]!r}")
        try:
            dims = [int(p) for p in parts[2 : want - 3]]
        except ValueError as exc:
            raise FormatError("non-integer dimension in header") from exc
        if any(d < 1 for d in dims):
            raise FormatError(f"invalid dimensions {dims} in header")
        dtype, order, layout = parts[want - 3 :]
        expected = "f32" if magic == CUBE_MAGIC else "u16"
        if dtype != expected or order != "le" or layout != "row-major":
            raise FormatError(f"unsupported encoding {dtype} {order} {layout}")
        if magic == CUBE_MAGIC:
            return cls(magic, VERSION, dims[0], dims[1], dims[2], dtype)
        return cls(magic, VERSION, dims[0], dims[1], 1, dtype)


def _read_container(path, magic: str) -> tuple[CubeFileHeader, np.ndarray]:
    data = Path(path).read_bytes()
    nl = data.find(b"\n", 0, _MAX_HEADER)
    if nl < 0:
        raise FormatError(f"{path}: no header line")
    header = CubeFileHeader.decode(data[:nl])
    if header.magic != magic:
        raise FormatError(f"{path}: expected {magic}, found {header.magic}")
    payload = data[nl + 1 :]
    if len(payload) < header.payload_bytes:
        raise FormatError(
            f"{path}: truncated payload ({len(payload)} of {header.payload_bytes} bytes)"
        )
    if len(payload) > header.payload_bytes:
        raise FormatError(f"{path}: {len(payload) - header.payload_bytes} trailing bytes")
    dt = "<f4" if header.dtype == "f32" else "<u2"
    return header, np.frombuffer(payload, dtype=dt)


def write_cube(cube: HsiCube | np.ndarray, path) -> None:
    values = cube.values if isinstance(cube, HsiCube) else np.asarray(cube)
    m, n, b = values.shape
    header = CubeFileHeader(CUBE_MAGIC, VERSION, m, n, b, "f32")
    with open(path, "wb") as fh:
        fh.write(header.encode())
        fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def read_cube(path) -> HsiCube:
    header, flat = _read_container(path, CUBE_MAGIC)
    values = flat.astype(np.float64).reshape(header.rows, header.cols, header.bands)
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{path}: non-finite values in payload")
    return HsiCube(values)


def write_labels(gt: LabelRaster | np.ndarray, path) -> None:
    labels = gt.labels if isinstance(gt, LabelRaster) else np.asarray(gt)
    if labels.min() < 0 or labels.max() > 0xFFFF:
        raise ValidationError("labels do not fit in uint16")
    header = CubeFileHeader(LABEL_MAGIC, VERSION, labels.shape[0], labels.shape[1], 1, "u16")
    with open(path, "wb") as fh:
        fh.write(header.encode())
        fh.write(np.ascontiguousarray(labels, dtype="<u2").tobytes())


def read_labels(path, n_classes: int | None = None) -> LabelRaster:
    header, flat = _read_container(path, LABEL_MAGIC)
    return LabelRaster(flat.astype(np.int64).reshape(header.rows, header.cols), n_classes)


def convert_raw(src, dst, rows: int, cols: int, bands: int, dtype: str = "<f4",
                interleave: str = "bip") -> HsiCube:
    """Wrap a headerless raw dump (ENVI-style BSQ/BIL/BIP) into an HSIC file."""
    arr = np.fromfile(src, dtype=np.dtype(dtype))
    if arr.size != rows * cols * bands:
        raise FormatError(f"{src}: expected {rows * cols * bands} samples, found {arr.size}")
    interleave = interleave.lower()
    if interleave == "bip":
        cube = arr.reshape(rows, cols, bands)
    elif interleave == "bil":
        cube = arr.reshape(rows, bands, cols).transpose(0, 2, 1)
    elif interleave == "bsq":
        cube = arr.reshape(bands, rows, cols).transpose(1, 2, 0)
    else:
        raise ValueError(f"unknown interleave {interleave!r}")
    out = HsiCube(cube.astype(np.float64))
    write_cube(out, dst)
    return out


# -- synthetic scenes -------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Parameters of a piecewise-constant synthetic scene.

    ``class_means`` (classes x bands) is generated from the seed when omitted.
    ``covariance_scale`` adds band-correlated within-class variability on top
    of the white noise ``noise``.
    """

    rows: int = 64
    cols: int = 64
    bands: int = 20
    classes: int = 6
    patch_size: float = 12.0
    noise: float = 0.0
    covariance_scale: float = 0.0
    class_means: np.ndarray | None = field(default=None, compare=False)
    seed: int = 0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1 or self.bands < 1:
            raise ValidationError("rows, cols and bands must be >= 1")
        if self.classes < 2:
            raise ValidationError("need at least 2 classes")
        if self.patch_size <= 0 or self.noise < 0 or self.covariance_scale < 0:
            raise ValidationError("patch_size must be positive; noise and covariance_scale non-negative")
        if self.class_means is not None:
            cm = np.asarray(self.class_means, dtype=np.float64)
            if cm.shape != (self.classes, self.bands):
                raise ValidationError(f"class_means must be {self.classes}x{self.bands}, got {cm.shape}")


def _smooth_spectra(rng: np.random.Generator, k: int, bands: int) -> np.ndarray:
    # Sum of a few Gaussian bumps on a baseline; distinct shapes so Pearson
    # correlation separates classes.
    x = np.linspace(0.0, 1.0, bands)
    out = np.empty((k, bands))
    for c in range(k):
        s = np.full(bands, rng.uniform(0.1, 0.3))
        for _ in range(3):
            centre = rng.uniform(0.0, 1.0)
            width = rng.uniform(0.08, 0.3)
            s += rng.uniform(0.1, 0.5) * np.exp(-0.5 * ((x - centre) / width) ** 2)
        out[c] = s
    return out


def _voronoi_labels(rng: np.random.Generator, rows: int, cols: int, classes: int, side: float) -> np.ndarray:
    gy = max(1, math.ceil(rows / side))
    gx = max(1, math.ceil(cols / side))
    n_seeds = gy * gx
    if n_seeds < classes:
        raise ValidationError(
            f"patch_size {side} leaves only {n_seeds} patches for {classes} classes"
        )
    cy, cx = np.meshgrid(np.arange(gy), np.arange(gx), indexing="ij")
    sy = ((cy.ravel() + rng.uniform(0, 1, n_seeds)) * side).clip(0, rows - 1e-9)
    sx = ((cx.ravel() + rng.uniform(0, 1, n_seeds)) * side).clip(0, cols - 1e-9)
    seed_class = np.concatenate([np.arange(1, classes + 1), rng.integers(1, classes + 1, n_seeds - classes)])
    seed_class = rng.permutation(seed_class)
    yy, xx = np.meshgrid(np.arange(rows) + 0.5, np.arange(cols) + 0.5, indexing="ij")
    d2 = (yy[..., None] - sy) ** 2 + (xx[..., None] - sx) ** 2
    labels = seed_class[np.argmin(d2, axis=-1)]
    # A tiny patch can be swallowed by its neighbours; force presence.
    for k in range(1, classes + 1):
        if not np.any(labels == k):
            s = int(np.flatnonzero(seed_class == k)[0])
            i = min(int(sy[s]), rows - 1)
            j = min(int(sx[s]), cols - 1)
            labels[i, j] = k
    return labels


def generate_synthetic(spec: SyntheticSceneSpec) -> tuple[HsiCube, LabelRaster]:
    rng = np.random.default_rng(spec.seed)
    if spec.class_means is None:
        means = _smooth_spectra(rng, spec.classes, spec.bands)
    else:
        means = np.asarray(spec.class_means, dtype=np.float64)
    labels = _voronoi_labels(rng, spec.rows, spec.cols, spec.classes, spec.patch_size)
    cube = means[labels - 1]
    if spec.covariance_scale > 0:
        # Band-correlated variability: smooth random fields along the spectrum.
        x = np.arange(spec.bands)
        corr = np.exp(-0.5 * ((x[:, None] - x[None, :]) / max(spec.bands / 8, 1.0)) ** 2)
        chol = np.linalg.cholesky(corr + 1e-9 * np.eye(spec.bands))
        z = rng.standard_normal((spec.rows, spec.cols, spec.bands))
        cube = cube + spec.covariance_scale * z @ chol.T
    if spec.noise > 0:
        cube = cube + spec.noise * rng.standard_normal(cube.shape)
    return HsiCube(cube), LabelRaster(labels, spec.classes)


def neighbour_agreement(labels: np.ndarray) -> float:
    """Fraction of 4-connected pixel pairs that share a label."""
    labels = np.asarray(labels)
    same = np.count_nonzero(labels[1:, :] == labels[:-1, :]) + np.count_nonzero(labels[:, 1:] == labels[:, :-1])
    total = labels[1:, :].size + labels[:, 1:].size
    return same / total if total else 1.0


# -- result export ----------------------------------------------------------


def export_error_map(counts: np.ndarray, path, trials: int | None = None) -> None:
    """Write per-pixel misclassification counts as a binary PGM (P5).

    The PGM maxval is ``trials`` (or the largest count), so a pixel wrong in
    every run is white.
    """
    counts = np.asarray(counts)
    if counts.ndim != 2:
        raise ValidationError("error map must be 2-D")
    if counts.size and counts.min() < 0:
        raise ValidationError("negative misclassification count")
    top = int(counts.max()) if counts.size else 0
    maxval = max(int(trials) if trials is not None else top, 1)
    if top > maxval:
        raise ValidationError(f"count {top} exceeds number of trials {maxval}")
    if maxval > 0xFFFF:
        raise ValidationError("PGM maxval limited to 65535")
    dtype = ">u1" if maxval < 256 else ">u2"
    with open(path, "wb") as fh:
        fh.write(f"P5\n{counts.shape[1]} {counts.shape[0]}\n{maxval}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(counts, dtype=dtype).tobytes())


def read_error_map(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    width, height, maxval = (int(t) for t in tokens[1:])
    dtype = ">u1" if maxval < 256 else ">u2"
    payload = data[pos + 1 :]
    expected = width * height * np.dtype(dtype).itemsize
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(height, width).astype(np.int64)


def export_report(reports: Mapping[str, "TrialReport"], path) -> None:  # noqa: F821
    """Write the wide summary table: one column per method.

    Columns: ``row,<method>...``. Rows: ``class_1`` .. ``class_c`` (mean
    per-class accuracy), then ``OA``, ``AA``, ``kappa`` (means over trials).
    Values are fractions written with ``repr`` so they parse back exactly;
    empty cells mean the class was not evaluated.
    """
    names = list(reports)
    if not names:
        raise ValueError("no reports to export")
    c = max(r.n_classes for r in reports.values())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", *names])
        for k in range(1, c + 1):
            row = []
            for name in names:
                v = reports[name].class_accuracy_mean(k)
                row.append("" if v is None else repr(float(v)))
            w.writerow([f"class_{k}", *row])
        for metric in ("OA", "AA", "kappa"):
            w.writerow([metric, *(repr(float(reports[n].mean[metric])) for n in names)])


def read_report_table(path) -> dict[str, dict[str, float | None]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    names = rows[0][1:]
    out: dict[str, dict[str, float | None]] = {n: {} for n in names}
    for row in rows[1:]:
        for n, cell in zip(names, row[1:]):
            out[n][row[0]] = float(cell) if cell else None
    return out


def export_trials(report, path) -> None:
    """Lossless long-form dump: ``metric,trial,value`` rows.

    ``metric`` is OA, AA, kappa or class_<k>; ``trial`` is the 0-based trial
    index. Error counts travel separately via :func:`export_error_map`.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "trial", "value"])
        w.writerow(["n_classes", "", report.n_classes])
        w.writerow(["seed", "", report.seed])
        for t, trial in enumerate(report.trials):
            for metric in ("OA", "AA", "kappa"):
                w.writerow([metric, t, repr(float(trial[metric]))])
            for k, acc in enumerate(trial["class_accuracy"], start=1):
                w.writerow([f"class_{k}", t, "" if np.isnan(acc) else repr(float(acc))])


def read_trials(path, error_counts: np.ndarray):
    from .evaluation import TrialReport

    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    meta = {r[0]: r[2] for r in rows if r[1] == ""}
    c = int(meta["n_classes"])
    seed = None if meta.get("seed", "None") == "None" else int(meta["seed"])
    trials: dict[int, dict] = {}
    for metric, t, value in rows:
        if t == "":
            continue
        d = trials.setdefault(int(t), {"class_accuracy": np.full(c, np.nan)})
        v = float(value) if value else math.nan
        if metric.startswith("class_"):
            d["class_accuracy"][int(metric[6:]) - 1] = v
        else:
            d[metric] = v
    return TrialReport(
        trials=[trials[t] for t in sorted(trials)],
        error_counts=np.asarray(error_counts),
        n_classes=c,
        seed=seed,
    )


def save_training_set(ts: TrainingSet, path) -> None:
    Path(path).write_text(ts.to_json())


def load_training_set(path) -> TrainingSet:
    return TrainingSet.from_json(Path(path).read_text())


def save_probabilities(prob: ProbabilityTensor, path) -> None:
    with open(path, "wb") as fh:
        np.savez(fh, values=prob.values, excluded=prob.excluded)


def load_probabilities(path) -> ProbabilityTensor:
    with np.load(path) as z:
        return ProbabilityTensor(z["values"], z["excluded"])


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default))


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o)}")

