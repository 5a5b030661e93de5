"""Pairwise probability calibration and multiclass coupling.

Platt scaling follows Lin, Lin & Weng (2007); coupling is the second method
of Wu, Lin & Weng (2004):

    min_p  1/2 p^T Q p   s.t.  sum(p) = 1,
    Q_tt = sum_{j != t} r_jt^2,   Q_tj = -r_jt r_tj,

where r_ij estimates P(class i | class i or j).
"""
from __future__ import annotations

import logging

import numpy as np

from ..core import ValidationError

logger = logging.getLogger(__name__)

# Pairwise probabilities are kept away from 0 and 1 before coupling.
R_CLIP = 1e-7


def _nll(dec, target, a, b):
    fapb = dec * a + b
    pos = fapb >= 0
    out = np.where(
        pos,
        target * fapb + np.log1p(np.exp(-np.abs(fapb))),
        (target - 1.0) * fapb + np.log1p(np.exp(-np.abs(fapb))),
    )
    return float(out.sum())


def platt_targets(labels) -> np.ndarray:
    labels = np.asarray(labels)
    n_pos = np.count_nonzero(labels > 0)
    n_neg = labels.size - n_pos
    hi = (n_pos + 1.0) / (n_pos + 2.0)
    lo = 1.0 / (n_neg + 2.0)
    return np.where(labels > 0, hi, lo)


def platt_nll(dec, labels, a: float, b: float) -> float:
    """Negative log-likelihood of sigmoid (a, b) against smoothed targets."""
    return _nll(np.asarray(dec, dtype=np.float64), platt_targets(labels), a, b)


def fit_platt(dec, labels, max_iter: int = 100, min_step: float = 1e-10,
              sigma: float = 1e-12, eps: float = 1e-5) -> tuple[float, float]:
    """Fit P(y=+1 | f) = 1 / (1 + exp(A f + B)) by regularized Newton.

    Returns (A, B). ``labels`` are +1 / -1 (anything <= 0 is negative).
    """
    dec = np.asarray(dec, dtype=np.float64)
    labels = np.asarray(labels)
    if dec.shape != labels.shape or dec.size < 2:
        raise ValidationError("need at least 2 decision values with matching labels")
    n_pos = np.count_nonzero(labels > 0)
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("Platt scaling needs both classes")
    t = platt_targets(labels)
    a = 0.0
    b = float(np.log((n_neg + 1.0) / (n_pos + 1.0)))
    fval = _nll(dec, t, a, b)
    for it in range(max_iter):
        fapb = dec * a + b
        e = np.exp(-np.abs(fapb))
        p = np.where(fapb >= 0, e / (1.0 + e), 1.0 / (1.0 + e))
        q = 1.0 - p
        d2 = p * q
        h11 = sigma + np.dot(dec * dec, d2)
        h22 = sigma + d2.sum()
        h21 = np.dot(dec, d2)
        d1 = t - p
        g1 = np.dot(dec, d1)
        g2 = d1.sum()
        if abs(g1) < eps and abs(g2) < eps:
            break
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * da + g2 * db
        step = 1.0
        while step >= min_step:
            na, nb = a + step * da, b + step * db
            nf = _nll(dec, t, na, nb)
            if nf < fval + 1e-4 * step * gd:
                a, b, fval = na, nb, nf
                break
            step /= 2.0
        if step < min_step:
            logger.debug("Platt line search failed at iteration %d", it)
            break
    else:
        logger.debug("Platt fit reached %d iterations", max_iter)
    return float(a), float(b)


def sigmoid_predict(dec, a: float, b: float) -> np.ndarray:
    fapb = np.asarray(dec, dtype=np.float64) * a + b
    e = np.exp(-np.abs(fapb))
    return np.where(fapb >= 0, e / (1.0 + e), 1.0 / (1.0 + e))


def coupling_matrix(r: np.ndarray) -> np.ndarray:
    """Q from pairwise matrices ``r`` of shape (..., c, c)."""
    r = np.asarray(r, dtype=np.float64)
    rt = np.swapaxes(r, -1, -2)
    c = r.shape[-1]
    off = ~np.eye(c, dtype=bool)
    Q = -(rt * r)
    diag = np.where(off, rt * rt, 0.0).sum(axis=-1)
    Q = np.where(off, Q, 0.0)
    idx = np.arange(c)
    Q[..., idx, idx] = diag
    return Q


def coupling_objective(p: np.ndarray, r: np.ndarray) -> float:
    Q = coupling_matrix(r)
    p = np.asarray(p, dtype=np.float64)
    return 0.5 * float(p @ Q @ p)


class CouplingError(RuntimeError):
    pass


def couple_batch(r: np.ndarray, max_iter: int = 200, tol: float = 1e-10) -> np.ndarray:
    """Couple pairwise estimates for many pixels at once.

    ``r`` has shape (n, c, c) with ``r[:, i, j] + r[:, j, i] == 1`` off the
    diagonal. Each pixel runs the fixed-point iteration until
    ``max_t |(Qp)_t - p^T Q p| < tol``; pixels that converge are frozen so the
    result does not depend on batch composition. Returns (n, c).
    """
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 3 or r.shape[1] != r.shape[2]:
        raise ValidationError("r must have shape (n, c, c)")
    n, c, _ = r.shape
    if c == 2:
        # closed form; the fixed point gives the same answer
        p = np.stack([r[:, 0, 1], r[:, 1, 0]], axis=1)
        return p / p.sum(axis=1, keepdims=True)
    Q = coupling_matrix(r)
    qdiag = np.diagonal(Q, axis1=1, axis2=2).copy()
    p = np.full((n, c), 1.0 / c)
    active = np.ones(n, dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        pa = p[idx]
        Qa = Q[idx]
        qp = np.einsum("nij,nj->ni", Qa, pa)
        pqp = np.einsum("ni,ni->n", pa, qp)
        err = np.abs(qp - pqp[:, None]).max(axis=1)
        done = err < tol
        active[idx[done]] = False
        keep = ~done
        idx, pa, Qa, qp, pqp = idx[keep], pa[keep], Qa[keep], qp[keep], pqp[keep]
        qd = qdiag[idx]
        for t in range(c):
            diff = (pqp - qp[:, t]) / qd[:, t]
            pa[:, t] += diff
            scale = 1.0 + diff
            pqp = (pqp + diff * (diff * qd[:, t] + 2.0 * qp[:, t])) / (scale * scale)
            qp = (qp + diff[:, None] * Qa[:, t, :]) / scale[:, None]
            pa /= scale[:, None]
        p[idx] = pa
    if active.any():
        raise CouplingError(
            f"pairwise coupling did not reach tol={tol} within {max_iter} iterations "
            f"for {int(active.sum())} pixel(s)"
        )
    np.clip(p, 0.0, None, out=p)
    p /= p.sum(axis=1, keepdims=True)
    return p


def pairwise_coupling(r: np.ndarray, max_iter: int = 200, tol: float = 1e-10) -> np.ndarray:
    """Class posterior (length c) from one c x c pairwise matrix."""
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ValidationError("r must be a square matrix")
    off = ~np.eye(r.shape[0], dtype=bool)
    if np.any(r[off] <= 0) or np.any(r[off] >= 1):
        raise ValidationError("pairwise probabilities must lie strictly inside (0, 1)")
    return couple_batch(r[None], max_iter, tol)[0]


def pairwise_matrix(pairs: list[tuple[int, int]], probs: np.ndarray, c: int) -> np.ndarray:
    """Assemble (n, c, c) matrices from per-pair P(first | first or second).

    ``pairs`` hold 0-based class indices; ``probs`` has shape (n, len(pairs)).
    """
    probs = np.clip(np.asarray(probs, dtype=np.float64), R_CLIP, 1.0 - R_CLIP)
    n = probs.shape[0]
    r = np.zeros((n, c, c))
    for m, (i, j) in enumerate(pairs):
        r[:, i, j] = probs[:, m]
        r[:, j, i] = 1.0 - probs[:, m]
    return r
