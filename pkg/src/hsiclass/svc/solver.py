"""nu-SVC binary training with an SMO working-set solver.

The dual is solved in the scaled form

    min_a  1/2 a^T Q a
    s.t.   0 <= a_i <= 1,  sum_{y=+1} a_i = sum_{y=-1} a_i = nu * l / 2

with Q_ij = y_i y_j K(x_i, x_j). Two-variable updates stay within one class
so both equality constraints hold throughout. Working pairs are chosen by
maximal violation plus second-order gain (Fan, Chen & Lin 2005). Dividing
by the margin r recovers the decision function
f(x) = sum_i coef_i K(x_i, x) - rho.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numba
import numpy as np

from ..core import ValidationError

TAU = 1e-12
INF = np.inf


class InfeasibleNuError(ValidationError):
    """nu exceeds 2 * min(l+, l-) / l, or one class is missing."""


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SvcParams:
    nu: float = 0.5
    gamma: float = 1.0
    tol: float = 1e-3
    max_kernel_evals: int = 10_000_000
    folds: int = 5

    def __post_init__(self):
        if not 0 < self.nu <= 1:
            raise ValidationError(f"nu must be in (0, 1], got {self.nu}")
        if self.gamma <= 0:
            raise ValidationError(f"gamma must be positive, got {self.gamma}")
        if self.tol <= 0:
            raise ValidationError("tol must be positive")


@dataclass(frozen=True, eq=False)
class BinaryModel:
    """Trained pairwise classifier; positive decision means label +1.

    ``support`` indexes the training rows passed to :func:`train_binary`;
    ``dual_coef`` is y_i * a_i / r for those rows. ``alpha`` keeps the full
    unscaled dual solution for diagnostics.
    """

    support: np.ndarray
    dual_coef: np.ndarray
    rho: float
    margin: float
    objective: float
    alpha: np.ndarray
    n_iter: int
    converged: bool
    prob_a: float = 0.0
    prob_b: float = 0.0

    @property
    def bias(self) -> float:
        return -self.rho

    def decision_from_kernel(self, k_rows: np.ndarray) -> np.ndarray:
        """Decision values given kernel rows against the training points."""
        return k_rows[..., self.support] @ self.dual_coef - self.rho


def rbf_kernel(u, v, gamma: float) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValidationError(f"dimension mismatch: {u.shape} vs {v.shape}")
    diff = u - v
    return float(np.exp(-gamma * np.dot(diff, diff)))


def rbf_matrix(X: np.ndarray, Y: np.ndarray, gamma: float) -> np.ndarray:
    """Kernel matrix between the rows of ``X`` and ``Y``."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    d2 = (X * X).sum(1)[:, None] + (Y * Y).sum(1)[None, :] - 2.0 * X @ Y.T
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-gamma * d2)


def nu_feasible_max(y: np.ndarray) -> float:
    y = np.asarray(y)
    pos = int(np.count_nonzero(y > 0))
    neg = y.size - pos
    return 2.0 * min(pos, neg) / y.size if y.size else 0.0


@numba.njit(cache=True)
def _select_working_set(G, alpha, y, K, eps):
    l = G.shape[0]
    gmaxp = -INF
    gmaxp_idx = -1
    gmaxn = -INF
    gmaxn_idx = -1
    for t in range(l):
        if y[t] > 0:
            if alpha[t] < 1.0 and -G[t] >= gmaxp:
                gmaxp = -G[t]
                gmaxp_idx = t
        else:
            if alpha[t] > 0.0 and G[t] >= gmaxn:
                gmaxn = G[t]
                gmaxn_idx = t
    ip = gmaxp_idx
    in_ = gmaxn_idx
    gmaxp2 = -INF
    gmaxn2 = -INF
    obj_min = INF
    gmin_idx = -1
    for j in range(l):
        if y[j] > 0:
            if alpha[j] > 0.0:
                grad_diff = gmaxp + G[j]
                if G[j] >= gmaxp2:
                    gmaxp2 = G[j]
                if grad_diff > 0 and ip != -1:
                    quad = K[ip, ip] + K[j, j] - 2.0 * K[ip, j]
                    if quad <= 0:
                        quad = TAU
                    obj = -(grad_diff * grad_diff) / quad
                    if obj <= obj_min:
                        gmin_idx = j
                        obj_min = obj
        else:
            if alpha[j] < 1.0:
                grad_diff = gmaxn - G[j]
                if -G[j] >= gmaxn2:
                    gmaxn2 = -G[j]
                if grad_diff > 0 and in_ != -1:
                    quad = K[in_, in_] + K[j, j] - 2.0 * K[in_, j]
                    if quad <= 0:
                        quad = TAU
                    obj = -(grad_diff * grad_diff) / quad
                    if obj <= obj_min:
                        gmin_idx = j
                        obj_min = obj
    gap = max(gmaxp + gmaxp2, gmaxn + gmaxn2)
    if gap < eps or gmin_idx == -1:
        return -1, -1, gap
    if y[gmin_idx] > 0:
        return gmaxp_idx, gmin_idx, gap
    return gmaxn_idx, gmin_idx, gap


@numba.njit(cache=True)
def _solve_nu(K, y, nu, eps, max_iter):
    l = y.shape[0]
    alpha = np.zeros(l)
    sum_pos = nu * l / 2.0
    sum_neg = nu * l / 2.0
    for i in range(l):
        if y[i] > 0:
            alpha[i] = min(1.0, sum_pos)
            sum_pos -= alpha[i]
        else:
            alpha[i] = min(1.0, sum_neg)
            sum_neg -= alpha[i]
    G = np.zeros(l)
    for i in range(l):
        if alpha[i] != 0.0:
            for k in range(l):
                G[k] += y[i] * y[k] * K[i, k] * alpha[i]

    n_iter = 0
    converged = False
    gap = INF
    while n_iter < max_iter:
        i, j, gap = _select_working_set(G, alpha, y, K, eps)
        if i == -1:
            converged = True
            break
        n_iter += 1
        # i and j share a label, so Q_ij = K_ij
        quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if quad <= 0:
            quad = TAU
        delta = (G[i] - G[j]) / quad
        old_i = alpha[i]
        old_j = alpha[j]
        s = old_i + old_j
        ai = old_i - delta
        aj = old_j + delta
        if s > 1.0:
            if ai > 1.0:
                ai = 1.0
                aj = s - 1.0
        else:
            if aj < 0.0:
                aj = 0.0
                ai = s
        if s > 1.0:
            if aj > 1.0:
                aj = 1.0
                ai = s - 1.0
        else:
            if ai < 0.0:
                ai = 0.0
                aj = s
        alpha[i] = ai
        alpha[j] = aj
        di = ai - old_i
        dj = aj - old_j
        for k in range(l):
            G[k] += y[i] * y[k] * K[i, k] * di + y[j] * y[k] * K[j, k] * dj

    # margin and bias from free variables of each class
    nf1 = 0
    nf2 = 0
    sf1 = 0.0
    sf2 = 0.0
    ub1 = INF
    ub2 = INF
    lb1 = -INF
    lb2 = -INF
    for i in range(l):
        if y[i] > 0:
            if alpha[i] >= 1.0:
                lb1 = max(lb1, G[i])
            elif alpha[i] <= 0.0:
                ub1 = min(ub1, G[i])
            else:
                nf1 += 1
                sf1 += G[i]
        else:
            if alpha[i] >= 1.0:
                lb2 = max(lb2, G[i])
            elif alpha[i] <= 0.0:
                ub2 = min(ub2, G[i])
            else:
                nf2 += 1
                sf2 += G[i]
    r1 = sf1 / nf1 if nf1 > 0 else (ub1 + lb1) / 2.0
    r2 = sf2 / nf2 if nf2 > 0 else (ub2 + lb2) / 2.0
    obj = 0.0
    for i in range(l):
        obj += alpha[i] * G[i]
    return alpha, (r1 - r2) / 2.0, (r1 + r2) / 2.0, obj / 2.0, n_iter, converged, gap


def solve_dual(K: np.ndarray, y: np.ndarray, nu: float, tol: float = 1e-3,
               max_iter: int | None = None):
    """Raw solver call; returns (alpha, rho, r, objective, n_iter, converged)."""
    K = np.ascontiguousarray(K, dtype=np.float64)
    y = np.ascontiguousarray(np.where(np.asarray(y) > 0, 1.0, -1.0))
    if max_iter is None:
        max_iter = 10_000_000 // max(2 * y.size, 1)
    alpha, rho, r, obj, n_iter, converged, _ = _solve_nu(K, y, float(nu), float(tol), int(max_iter))
    return alpha, rho, r, obj, n_iter, converged


def train_binary_kernel(K: np.ndarray, y: np.ndarray, params: SvcParams) -> BinaryModel:
    """Train from a precomputed l x l kernel matrix and +/-1 labels."""
    y = np.asarray(y)
    if not (np.any(y > 0) and np.any(y <= 0)):
        raise InfeasibleNuError("both classes must be present")
    nu_max = nu_feasible_max(y)
    if params.nu > nu_max + 1e-12:
        raise InfeasibleNuError(f"nu={params.nu} infeasible; maximum is {nu_max:.4g}")
    max_iter = max(1, params.max_kernel_evals // (2 * y.size))
    alpha, rho, r, obj, n_iter, converged = solve_dual(K, y, params.nu, params.tol, max_iter)
    if not converged:
        warnings.warn(
            f"nu-SVC solver hit the iteration cap ({max_iter}) before reaching tol={params.tol}",
            ConvergenceWarning,
            stacklevel=2,
        )
    if r <= 0:
        # Degenerate margin (e.g. coincident points of both classes); keep the
        # unscaled decision function rather than flipping its sign.
        r = 1.0
    ys = np.where(y > 0, 1.0, -1.0)
    support = np.flatnonzero(alpha > 0)
    return BinaryModel(
        support=support,
        dual_coef=alpha[support] * ys[support] / r,
        rho=rho / r,
        margin=r,
        objective=obj,
        alpha=alpha,
        n_iter=n_iter,
        converged=converged,
    )


def train_binary(features: np.ndarray, labels: np.ndarray, params: SvcParams) -> BinaryModel:
    """Train on an l x d feature matrix with labels in {+1, -1}."""
    X = np.asarray(features, dtype=np.float64)
    return train_binary_kernel(rbf_matrix(X, X, params.gamma), labels, params)


def dual_objective(alpha: np.ndarray, K: np.ndarray, y: np.ndarray) -> float:
    ys = np.where(np.asarray(y) > 0, 1.0, -1.0)
    ay = alpha * ys
    return 0.5 * float(ay @ K @ ay)
