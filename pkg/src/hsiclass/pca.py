"""Principal component projection of band-by-pixel matrices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ValidationError


@dataclass(frozen=True, eq=False)
class PcaModel:
    """Projection onto the top-``d`` eigenvectors of the scatter matrix.

    ``eigenvalues`` are those of the scatter ``Rc @ Rc.T`` (not divided by
    the pixel count) so that the squared reconstruction residual equals the
    sum of the discarded ones. ``spectrum`` keeps all B of them.
    """

    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray
    spectrum: np.ndarray

    @property
    def n_components(self) -> int:
        return self.components.shape[1]

    @property
    def captured_fraction(self) -> float:
        total = self.spectrum.sum()
        return float(self.eigenvalues.sum() / total) if total > 0 else 1.0

    def back_project(self, features: np.ndarray) -> np.ndarray:
        return self.components @ features + self.mean[:, None]


def fit_pca(R: np.ndarray, d: int, center: bool = True) -> PcaModel:
    """Fit on a B x n matrix (columns are pixels).

    With ``center=False`` the literal trace objective tr(W^T R R^T W) is used
    and the stored mean is zero.
    """
    R = np.asarray(R, dtype=np.float64)
    if R.ndim != 2:
        raise ValidationError("R must be a B x n matrix")
    b, n = R.shape
    if not 1 <= d <= min(b, n):
        raise ValidationError(f"d must be in 1..{min(b, n)}, got {d}")
    mean = R.mean(axis=1) if center else np.zeros(b)
    rc = R - mean[:, None]
    scatter = rc @ rc.T
    try:
        evals, evecs = np.linalg.eigh(scatter)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("eigendecomposition did not converge") from exc
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    # Sign convention: largest-magnitude entry of each eigenvector positive.
    pivot = np.argmax(np.abs(evecs), axis=0)
    signs = np.sign(evecs[pivot, np.arange(b)])
    signs[signs == 0] = 1.0
    evecs = evecs * signs
    return PcaModel(mean, evecs[:, :d].copy(), evals[:d].copy(), evals)


def transform(model: PcaModel, R: np.ndarray) -> np.ndarray:
    """d x n reduced data ``W^T (R - mean)``."""
    R = np.asarray(R, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] != model.mean.size:
        raise ValidationError(f"expected {model.mean.size} bands, got shape {R.shape}")
    return model.components.T @ (R - model.mean[:, None])
