"""Smoothed-total-variation denoising of probability maps.

Each class map V is replaced by the minimizer of

    1/2 ||U - V||^2 + beta1 ||grad U||_1 + beta2/2 ||grad U||_2^2

subject to U = V on the training pixels, solved by ADMM on the splitting
Z = grad U with scaled dual variable L:

    U <- argmin 1/2||U - V||^2 + mu/2 ||grad U - Z + L||^2   (U fixed on the mask)
    Z <- shrink(mu (grad U + L) / (beta2 + mu), beta1 / (beta2 + mu))
    L <- L + grad U - Z

The U-step is (I + mu grad^T grad) U = V + mu grad^T (Z - L); grad^T grad is
diagonal in the DCT-II basis, which solves it directly when nothing is
pinned. With pinned pixels the constraint is eliminated through a small Schur
complement over the pinned set; very large pinned sets fall back to
DCT-preconditioned CG on the free pixels.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import fft

from .core import LabelRaster, ProbabilityTensor, ValidationError

logger = logging.getLogger(__name__)


class StvConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class StvParams:
    beta1: float = 0.2
    beta2: float = 4.0
    mu: float = 5.0
    max_iter: int = 500
    tol: float = 1e-5
    isotropic: bool = False

    def __post_init__(self):
        if self.beta1 < 0 or self.beta2 < 0:
            raise ValidationError("beta1 and beta2 must be non-negative")
        if self.mu <= 0:
            raise ValidationError("ADMM penalty mu must be positive")
        if self.max_iter < 1 or self.tol <= 0:
            raise ValidationError("max_iter must be >= 1 and tol positive")


@dataclass(frozen=True, eq=False)
class GradientField:
    """Forward differences; ``dx`` along columns, ``dy`` along rows."""

    dx: np.ndarray
    dy: np.ndarray

    def __add__(self, other: "GradientField") -> "GradientField":
        return GradientField(self.dx + other.dx, self.dy + other.dy)

    def __sub__(self, other: "GradientField") -> "GradientField":
        return GradientField(self.dx - other.dx, self.dy - other.dy)

    def __mul__(self, s: float) -> "GradientField":
        return GradientField(self.dx * s, self.dy * s)

    __rmul__ = __mul__

    def inner(self, other: "GradientField") -> float:
        return float(np.vdot(self.dx, other.dx) + np.vdot(self.dy, other.dy))

    def norm(self) -> float:
        return float(np.sqrt(self.inner(self)))


def gradient(U: np.ndarray) -> GradientField:
    U = np.asarray(U, dtype=np.float64)
    dx = np.zeros_like(U)
    dy = np.zeros_like(U)
    dx[:, :-1] = U[:, 1:] - U[:, :-1]
    dy[:-1, :] = U[1:, :] - U[:-1, :]
    return GradientField(dx, dy)


def divergence(G: GradientField) -> np.ndarray:
    """Negative adjoint of :func:`gradient`."""
    # last column/row of the field never enters the gradient
    px = G.dx.copy()
    py = G.dy.copy()
    px[:, -1] = 0.0
    py[-1, :] = 0.0
    out = px + py
    out[:, 1:] -= px[:, :-1]
    out[1:, :] -= py[:-1, :]
    return out


def laplacian_eigenvalues(shape: tuple[int, int]) -> np.ndarray:
    """Eigenvalues of grad^T grad in the orthonormal DCT-II basis."""
    m, n = shape
    ey = 2.0 - 2.0 * np.cos(np.pi * np.arange(m) / m)
    ex = 2.0 - 2.0 * np.cos(np.pi * np.arange(n) / n)
    return ey[:, None] + ex[None, :]


def stv_objective(U: np.ndarray, V: np.ndarray, beta1: float, beta2: float,
                  isotropic: bool = False) -> float:
    g = gradient(U)
    if isotropic:
        tv = np.sqrt(g.dx ** 2 + g.dy ** 2).sum()
    else:
        tv = np.abs(g.dx).sum() + np.abs(g.dy).sum()
    return float(0.5 * np.sum((U - V) ** 2) + beta1 * tv + 0.5 * beta2 * (g.dx ** 2 + g.dy ** 2).sum())


@dataclass(frozen=True, eq=False)
class StvResult:
    u: np.ndarray
    iterations: int
    converged: bool
    rel_change: float
    primal_residual: float
    dual_residual: float
    objective: float


def _shrink(field: GradientField, scale: float, thresh: float, isotropic: bool) -> GradientField:
    wx = field.dx * scale
    wy = field.dy * scale
    if isotropic:
        mag = np.sqrt(wx * wx + wy * wy)
        factor = np.maximum(mag - thresh, 0.0) / np.where(mag > 0, mag, 1.0)
        return GradientField(wx * factor, wy * factor)
    return GradientField(
        np.sign(wx) * np.maximum(np.abs(wx) - thresh, 0.0),
        np.sign(wy) * np.maximum(np.abs(wy) - thresh, 0.0),
    )


class _USolver:
    """Solves (I + mu grad^T grad) U = rhs with U fixed on a mask.

    With few pinned pixels the constraint is eliminated exactly through the
    Schur complement of A^{-1} on the mask (A^{-1} columns precomputed once);
    otherwise CG runs on the free pixels, preconditioned by the unconstrained
    DCT inverse.
    """

    def __init__(self, shape, mu: float, mask: np.ndarray | None, cg_tol: float = 1e-12,
                 cg_max: int = 200, schur_limit: int = 20_000_000):
        self.mu = mu
        self.denom = 1.0 + mu * laplacian_eigenvalues(shape)
        self.mask = mask if mask is not None and mask.any() else None
        self.cg_tol = cg_tol
        self.cg_max = cg_max
        self.cols = None
        if self.mask is not None:
            idx = np.flatnonzero(self.mask)
            if idx.size * self.mask.size <= schur_limit:
                e = np.zeros((idx.size,) + tuple(shape))
                e[np.arange(idx.size), idx // shape[1], idx % shape[1]] = 1.0
                cols = fft.idctn(fft.dctn(e, type=2, norm="ortho", axes=(1, 2)) / self.denom,
                                 type=2, norm="ortho", axes=(1, 2))
                self.idx = idx
                self.cols = cols.reshape(idx.size, -1)
                self.schur_inv = np.linalg.inv(self.cols[:, idx])

    def apply(self, U: np.ndarray) -> np.ndarray:
        return U - self.mu * divergence(gradient(U))

    def inverse(self, rhs: np.ndarray) -> np.ndarray:
        return fft.idctn(fft.dctn(rhs, type=2, norm="ortho") / self.denom, type=2, norm="ortho")

    def solve(self, rhs: np.ndarray, pinned: np.ndarray, x0: np.ndarray) -> np.ndarray:
        if self.mask is None:
            return self.inverse(rhs)
        if self.cols is not None:
            # A x = rhs + P lam with x[mask] = pinned[mask]
            x = self.inverse(rhs).ravel()
            lam = self.schur_inv @ (pinned.ravel()[self.idx] - x[self.idx])
            x = x + self.cols.T @ lam
            return np.where(self.mask, pinned, x.reshape(rhs.shape))
        free = ~self.mask
        base = np.where(self.mask, pinned, 0.0)
        b = np.where(free, rhs - self.apply(base), 0.0)
        x = np.where(free, x0, 0.0)
        r = b - np.where(free, self.apply(x), 0.0)
        bnorm = max(np.linalg.norm(b), 1e-300)
        z = np.where(free, self.inverse(r), 0.0)
        p = z.copy()
        rz = np.vdot(r, z)
        for _ in range(self.cg_max):
            if np.linalg.norm(r) <= self.cg_tol * bnorm:
                break
            ap = np.where(free, self.apply(p), 0.0)
            step = rz / np.vdot(p, ap)
            x += step * p
            r -= step * ap
            z = np.where(free, self.inverse(r), 0.0)
            rz_new = np.vdot(r, z)
            p = z + (rz_new / rz) * p
            rz = rz_new
        return np.where(free, x, pinned)


def stv_denoise(V: np.ndarray, mask: np.ndarray | None = None, params: StvParams = StvParams(),
                pinned: np.ndarray | None = None, solver: _USolver | None = None) -> StvResult:
    """Denoise one probability map.

    ``mask`` marks pinned pixels; they keep ``pinned`` (default: ``V``)
    exactly. Stops once the relative change of U, the primal residual
    ||grad U - Z|| and the dual residual mu ||grad^T (Z - Z_prev)|| all drop
    below ``params.tol``; both residuals are divided by the matching primal
    or dual scale (floored at 1) so the test does not tighten with image
    size. At the iteration cap the lowest-objective iterate is returned with
    ``converged=False``.
    """
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2:
        raise ValidationError("V must be a 2-D map")
    if not np.all(np.isfinite(V)):
        raise ValidationError("V contains non-finite values")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != V.shape:
            raise ValidationError("mask shape does not match V")
    fixed = V if pinned is None else np.asarray(pinned, dtype=np.float64)
    b1, b2, mu = params.beta1, params.beta2, params.mu

    def finish(U, it, conv, rc, pr, du):
        if mask is not None:
            U = np.where(mask, fixed, U)
        return StvResult(U, it, conv, rc, pr, du, stv_objective(U, V, b1, b2, params.isotropic))

    if b1 == 0 and b2 == 0:
        return finish(V.copy(), 0, True, 0.0, 0.0, 0.0)

    if solver is None:
        solver = _USolver(V.shape, mu, mask)
    U = np.where(mask, fixed, V) if mask is not None else V.copy()
    Z = gradient(U)
    L = GradientField(np.zeros_like(V), np.zeros_like(V))
    scale = mu / (b2 + mu)
    thresh = b1 / (b2 + mu)
    best_u, best_obj = U, np.inf
    rel = primal = dual = np.inf
    for it in range(1, params.max_iter + 1):
        rhs = V - mu * divergence(Z - L)
        U_new = solver.solve(rhs, fixed, U)
        gU = gradient(U_new)
        Z_new = _shrink(gU + L, scale, thresh, params.isotropic)
        L = L + gU - Z_new
        rel = np.linalg.norm(U_new - U) / max(np.linalg.norm(U), 1e-12)
        primal = (gU - Z_new).norm() / max(gU.norm(), Z_new.norm(), 1.0)
        dual = mu * np.linalg.norm(divergence(Z_new - Z)) / max(mu * np.linalg.norm(divergence(L)), 1.0)
        U, Z = U_new, Z_new
        if rel < params.tol and primal < params.tol and dual < params.tol:
            return finish(U, it, True, rel, primal, dual)
        obj = stv_objective(U, V, b1, b2, params.isotropic)
        if obj < best_obj:
            best_u, best_obj = U, obj
    warnings.warn(
        f"STV ADMM stopped at {params.max_iter} iterations (rel change {rel:.2e}, "
        f"primal {primal:.2e}, dual {dual:.2e})",
        StvConvergenceWarning,
        stacklevel=2,
    )
    return finish(best_u, params.max_iter, False, rel, primal, dual)


def smooth_tensor(prob: ProbabilityTensor, mask: np.ndarray | None, params: StvParams
                  ) -> tuple[ProbabilityTensor, list[StvResult]]:
    """Denoise every class channel, pinning ``mask`` pixels to their input values."""
    solver = None
    if params.beta1 != 0 or params.beta2 != 0:
        solver = _USolver((prob.rows, prob.cols), params.mu, None if mask is None else np.asarray(mask, dtype=bool))
    results = [stv_denoise(prob.values[:, :, k], mask, params, solver=solver)
               for k in range(prob.n_classes)]
    U = np.stack([r.u for r in results], axis=2)
    return ProbabilityTensor(U, prob.excluded), results


def classify(prob: ProbabilityTensor) -> LabelRaster:
    """Per-pixel argmax (ties to the smallest class id); excluded pixels get 0."""
    labels = prob.values.argmax(axis=2) + 1
    labels[prob.excluded] = 0
    return LabelRaster(labels, prob.n_classes)
