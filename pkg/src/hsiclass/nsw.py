"""Nested-sliding-window spatial reconstruction.

Every pixel is rebuilt as a correlation-weighted average of the pixels in
the (a+1) x (a+1) sub-window, among those containing it inside its
w x w neighbourhood, whose members correlate best with it on average.
Outside the image the cube is zero-padded; zero (or otherwise constant)
spectra have correlation 0 with everything.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import HsiCube, ValidationError

# Window means closer than this are treated as tied; the lexicographically
# first (p, q) wins.
TIE_TOL = 1e-12


@dataclass(frozen=True)
class NswParams:
    window: int = 21
    eps: float = 1e-12
    offset_min: int = 0

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValidationError(f"window size must be odd and >= 3, got {self.window}")
        if self.eps <= 0:
            raise ValidationError("eps must be positive")
        if self.offset_min not in (0, 1):
            raise ValidationError("offset_min must be 0 or 1")

    @property
    def half(self) -> int:
        return (self.window - 1) // 2

    @property
    def offsets(self) -> range:
        return range(self.offset_min, self.half + 1)


@dataclass(frozen=True, eq=False)
class WindowSelection:
    """Chosen sub-window for one target pixel.

    ``offset`` is (p, q): the window spans rows ``i-a+p .. i+p`` and columns
    ``j-a+q .. j+q``. ``members`` and ``correlations`` list the window pixels
    in row-major order; ``weights`` are the normalized correlations, or a
    one-hot on the target when ``fallback`` is set.
    """

    target: tuple[int, int]
    offset: tuple[int, int]
    members: np.ndarray
    correlations: np.ndarray
    weights: np.ndarray
    target_index: int
    fallback: bool
    scores: np.ndarray


def pearson(x, y, eps: float = 1e-12) -> float:
    """Population Pearson correlation; 0 when either variance is below ``eps``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError(f"length mismatch: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise ValidationError("need at least 2 bands")
    dx = x - x.mean()
    dy = y - y.mean()
    vx = np.mean(dx * dx)
    vy = np.mean(dy * dy)
    if vx < eps or vy < eps:
        return 0.0
    r = np.mean(dx * dy) / np.sqrt(vx * vy)
    return float(min(1.0, max(-1.0, r)))


def padded_neighborhood(cube: HsiCube | np.ndarray, i: int, j: int, window: int) -> np.ndarray:
    """w x w x B block centred on (i, j), zero outside the image."""
    values = cube.values if isinstance(cube, HsiCube) else np.asarray(cube)
    m, n, b = values.shape
    a = (window - 1) // 2
    out = np.zeros((window, window, b), dtype=values.dtype)
    r0, r1 = max(i - a, 0), min(i + a + 1, m)
    c0, c1 = max(j - a, 0), min(j + a + 1, n)
    out[r0 - (i - a) : r1 - (i - a), c0 - (j - a) : c1 - (j - a)] = values[r0:r1, c0:c1]
    return out


def select_best_window(cube: HsiCube, i: int, j: int, params: NswParams) -> WindowSelection:
    values = cube.values if isinstance(cube, HsiCube) else np.asarray(cube, dtype=np.float64)
    if not (0 <= i < values.shape[0] and 0 <= j < values.shape[1]):
        raise ValidationError(f"pixel ({i}, {j}) outside image")
    a = params.half
    block = padded_neighborhood(values, i, j, params.window)
    target = block[a, a]
    corr = np.empty((params.window, params.window))
    for u in range(params.window):
        for v in range(params.window):
            corr[u, v] = pearson(target, block[u, v], params.eps)

    offs = list(params.offsets)
    scores = np.empty((len(offs), len(offs)))
    for s, p in enumerate(offs):
        for t, q in enumerate(offs):
            scores[s, t] = corr[p : p + a + 1, q : q + a + 1].mean()
    best = scores.max()
    s, t = np.argwhere(scores >= best - TIE_TOL)[0]
    p, q = offs[s], offs[t]

    members = block[p : p + a + 1, q : q + a + 1].reshape(-1, block.shape[2])
    c = corr[p : p + a + 1, q : q + a + 1].ravel()
    # target sits at block (a, a) -> window-local (a - p, a - q)
    t_idx = (a - p) * (a + 1) + (a - q)
    total = c.sum()
    if total < params.eps:
        w = np.zeros_like(c)
        w[t_idx] = 1.0
        fallback = True
    else:
        w = c / total
        fallback = False
    return WindowSelection((i, j), (p, q), members, c, w, t_idx, fallback, scores)


def reconstruct_pixel(sel: WindowSelection) -> np.ndarray:
    if sel.fallback:
        return sel.members[sel.target_index].copy()
    return sel.members.T @ sel.weights


def _standardize(values: np.ndarray, eps: float) -> np.ndarray:
    centred = values - values.mean(axis=-1, keepdims=True)
    var = np.mean(centred * centred, axis=-1, keepdims=True)
    ok = var >= eps
    return np.where(ok, centred / np.sqrt(np.where(ok, var, 1.0)), 0.0)


def _reconstruct_rows(vp: np.ndarray, zp: np.ndarray, r0: int, r1: int, n: int,
                      params: NswParams) -> np.ndarray:
    a = params.half
    w = params.window
    nb = vp.shape[2]
    h = r1 - r0
    zt = zp[r0 + a : r1 + a, a : a + n]
    # corr[u, v] = correlation of each target with its neighbour at (u - a, v - a)
    corr = np.empty((w, w, h, n))
    for u in range(w):
        for v in range(w):
            np.einsum("ijb,ijb->ij", zt, zp[r0 + u : r0 + u + h, v : v + n], out=corr[u, v])
    corr /= nb
    np.clip(corr, -1.0, 1.0, out=corr)

    offs = np.array(list(params.offsets))
    csum = np.zeros((w + 1, w + 1, h, n))
    csum[1:, 1:] = corr.cumsum(0).cumsum(1)
    k = a + 1
    scores = np.empty((offs.size, offs.size, h, n))
    for s, p in enumerate(offs):
        for t, q in enumerate(offs):
            scores[s, t] = (csum[p + k, q + k] - csum[p, q + k] - csum[p + k, q] + csum[p, q]) / (k * k)
    flat = scores.reshape(-1, h, n)
    hit = flat >= flat.max(axis=0) - TIE_TOL
    choice = hit.argmax(axis=0)
    ps = offs[choice // offs.size]
    qs = offs[choice % offs.size]

    ii, jj = np.meshgrid(np.arange(h), np.arange(n), indexing="ij")
    total = np.zeros((h, n))
    acc = np.zeros((h, n, nb))
    for u in range(k):
        for v in range(k):
            cu = ps + u
            cv = qs + v
            c = corr[cu, cv, ii, jj]
            total += c
            acc += c[..., None] * vp[r0 + ii + cu, jj + cv]
    target = vp[r0 + a : r1 + a, a : a + n]
    ok = total >= params.eps
    safe = np.where(ok, total, 1.0)
    return np.where(ok[..., None], acc / safe[..., None], target)


def reconstruct_cube(cube: HsiCube, params: NswParams, max_block: int = 2_000_000) -> HsiCube:
    """Reconstruct every pixel; vectorized equivalent of the per-pixel path.

    Rows are processed in blocks so the w*w correlation stack stays below
    ``max_block`` elements per block.
    """
    values = cube.values
    m, n, _ = values.shape
    a = params.half
    vp = np.pad(values, ((a, a), (a, a), (0, 0)))
    zp = _standardize(vp, params.eps)
    rows_per = max(1, max_block // (params.window ** 2 * n))
    out = np.empty_like(values)
    for r0 in range(0, m, rows_per):
        r1 = min(m, r0 + rows_per)
        out[r0:r1] = _reconstruct_rows(vp, zp, r0, r1, n, params)
    return HsiCube(out)
