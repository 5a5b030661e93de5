"""One-against-one nu-SVC with calibrated pairwise probabilities."""
from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ..core import ProbabilityTensor, TrainingSet, ValidationError
from .probability import couple_batch, fit_platt, pairwise_matrix, sigmoid_predict
from .solver import (
    BinaryModel,
    InfeasibleNuError,
    SvcParams,
    nu_feasible_max,
    rbf_matrix,
    train_binary_kernel,
)

logger = logging.getLogger(__name__)

DEFAULT_NU_GRID = tuple(round(0.05 * k, 2) for k in range(1, 11))
DEFAULT_GAMMA_GRID = tuple(2.0 ** e for e in range(-8, 5))


class NoFeasibleParamsError(ValidationError):
    pass


@dataclass(frozen=True, eq=False)
class MulticlassModel:
    """c(c-1)/2 pairwise models over shared training features.

    ``pairs[m] = (i, j)`` are 0-based class positions with i < j; model m
    separates ``classes[i]`` (+1) from ``classes[j]`` (-1) and was trained on
    the training rows ``pair_rows[m]``.
    """

    classes: np.ndarray
    pairs: tuple[tuple[int, int], ...]
    models: tuple[BinaryModel, ...]
    pair_rows: tuple[np.ndarray, ...]
    train_features: np.ndarray
    params: SvcParams

    def __post_init__(self):
        c = len(self.classes)
        if len(self.models) != c * (c - 1) // 2:
            raise ValidationError("one binary model per unordered class pair required")

    @property
    def n_features(self) -> int:
        return self.train_features.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def decision_values(self, X: np.ndarray) -> np.ndarray:
        """(n, n_pairs) decision values for rows of ``X``."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValidationError(f"expected {self.n_features} features, got shape {X.shape}")
        K = rbf_matrix(X, self.train_features, self.params.gamma)
        out = np.empty((X.shape[0], len(self.models)))
        for m, (model, rows) in enumerate(zip(self.models, self.pair_rows)):
            out[:, m] = K[:, rows[model.support]] @ model.dual_coef - model.rho
        return out

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        dec = self.decision_values(X)
        probs = np.column_stack(
            [sigmoid_predict(dec[:, m], mdl.prob_a, mdl.prob_b) for m, mdl in enumerate(self.models)]
        )
        return couple_batch(pairwise_matrix(list(self.pairs), probs, self.n_classes))

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Majority vote over pairwise decisions; ties go to the lower class."""
        return self.classes[_vote(self.decision_values(X), self.pairs, self.n_classes)]

    def save(self, path) -> None:
        """Dump to ``.npz``: arrays ``classes``, ``pairs``, ``train_features``,
        ``params`` (nu, gamma, tol), and per pair ``rows_m``, ``support_m``,
        ``coef_m``, ``scalars_m`` (rho, margin, prob_a, prob_b, objective).
        """
        arrays = {
            "classes": self.classes,
            "pairs": np.array(self.pairs, dtype=np.int64).reshape(-1, 2),
            "train_features": self.train_features,
            "params": np.array([self.params.nu, self.params.gamma, self.params.tol]),
        }
        for m, (mdl, rows) in enumerate(zip(self.models, self.pair_rows)):
            arrays[f"rows_{m}"] = rows
            arrays[f"support_{m}"] = mdl.support
            arrays[f"coef_{m}"] = mdl.dual_coef
            arrays[f"alpha_{m}"] = mdl.alpha
            arrays[f"scalars_{m}"] = np.array([mdl.rho, mdl.margin, mdl.prob_a, mdl.prob_b, mdl.objective])
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "MulticlassModel":
        with np.load(path) as z:
            nu, gamma, tol = z["params"]
            pairs = tuple((int(i), int(j)) for i, j in z["pairs"])
            models, rows = [], []
            for m in range(len(pairs)):
                rho, margin, pa, pb, obj = z[f"scalars_{m}"]
                models.append(
                    BinaryModel(
                        support=z[f"support_{m}"],
                        dual_coef=z[f"coef_{m}"],
                        rho=float(rho),
                        margin=float(margin),
                        objective=float(obj),
                        alpha=z[f"alpha_{m}"],
                        n_iter=0,
                        converged=True,
                        prob_a=float(pa),
                        prob_b=float(pb),
                    )
                )
                rows.append(z[f"rows_{m}"])
            return cls(
                classes=z["classes"],
                pairs=pairs,
                models=tuple(models),
                pair_rows=tuple(rows),
                train_features=z["train_features"],
                params=SvcParams(nu=float(nu), gamma=float(gamma), tol=float(tol)),
            )


def _vote(dec: np.ndarray, pairs: Sequence[tuple[int, int]], c: int) -> np.ndarray:
    votes = np.zeros((dec.shape[0], c), dtype=np.int64)
    for m, (i, j) in enumerate(pairs):
        pos = dec[:, m] > 0
        votes[:, i] += pos
        votes[:, j] += ~pos
    return votes.argmax(axis=1)


def stratified_folds(labels: np.ndarray, folds: int, rng: np.random.Generator) -> np.ndarray:
    """Fold id per sample; each class is shuffled and dealt round-robin."""
    labels = np.asarray(labels)
    fold = np.empty(labels.size, dtype=np.int64)
    start = 0
    for k in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == k))
        fold[idx] = (start + np.arange(idx.size)) % folds
        start += idx.size
    return fold


def _train_pairs(K: np.ndarray, labels: np.ndarray, classes: np.ndarray, params: SvcParams,
                 rows_subset: np.ndarray | None = None):
    """Train every pairwise model on ``rows_subset`` of the Gram matrix ``K``."""
    if rows_subset is None:
        rows_subset = np.arange(labels.size)
    pairs, models, pair_rows = [], [], []
    sub_labels = labels[rows_subset]
    for i, j in itertools.combinations(range(len(classes)), 2):
        sel = (sub_labels == classes[i]) | (sub_labels == classes[j])
        rows = rows_subset[sel]
        y = np.where(labels[rows] == classes[i], 1, -1)
        models.append(train_binary_kernel(K[np.ix_(rows, rows)], y, params))
        pairs.append((i, j))
        pair_rows.append(rows)
    return tuple(pairs), models, pair_rows


def _platt_for_pair(K: np.ndarray, rows: np.ndarray, y: np.ndarray, params: SvcParams,
                    rng: np.random.Generator) -> tuple[float, float]:
    """Sigmoid fitted on cross-validated decision values of one pair."""
    n_folds = min(params.folds, rows.size)
    fold = stratified_folds(y, n_folds, rng)
    dec = np.empty(rows.size)
    for f in range(n_folds):
        te = fold == f
        tr = ~te
        ytr = y[tr]
        if np.all(ytr > 0):
            dec[te] = 1.0
            continue
        if np.all(ytr < 0):
            dec[te] = -1.0
            continue
        sub = replace(params, nu=min(params.nu, nu_feasible_max(ytr)))
        r_tr = rows[tr]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            mdl = train_binary_kernel(K[np.ix_(r_tr, r_tr)], ytr, sub)
        dec[te] = K[np.ix_(rows[te], r_tr[mdl.support])] @ mdl.dual_coef - mdl.rho
    return fit_platt(dec, y)


def train_multiclass(features: np.ndarray, labels: np.ndarray, params: SvcParams,
                     seed=0) -> MulticlassModel:
    """Train all pairwise models plus their probability sigmoids.

    ``features`` is t x d, ``labels`` holds class ids. ``seed`` drives the
    internal folds used for calibration.
    """
    X = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValidationError("need at least two classes to train")
    rng = np.random.default_rng(seed)
    K = rbf_matrix(X, X, params.gamma)
    pairs, models, pair_rows = _train_pairs(K, labels, classes, params)
    calibrated = []
    for (i, _), mdl, rows in zip(pairs, models, pair_rows):
        y = np.where(labels[rows] == classes[i], 1, -1)
        a, b = _platt_for_pair(K, rows, y, params, rng)
        calibrated.append(replace(mdl, prob_a=a, prob_b=b))
    return MulticlassModel(classes, pairs, tuple(calibrated), tuple(pair_rows), X, params)


def grid_scores(features: np.ndarray, labels: np.ndarray, nu_grid: Sequence[float],
                gamma_grid: Sequence[float], folds: int = 5, seed=0,
                tol: float = 1e-3) -> dict[tuple[float, float], float]:
    """Mean stratified k-fold accuracy for each (gamma, nu); NaN if infeasible.

    A grid point is infeasible when nu exceeds the feasible maximum of any
    pairwise problem in any fold.
    """
    X = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if labels.size < folds:
        raise ValidationError(f"need at least {folds} labeled samples for {folds}-fold validation")
    fold = stratified_folds(labels, folds, np.random.default_rng(seed))
    scores: dict[tuple[float, float], float] = {}
    for gamma in sorted(set(gamma_grid)):
        K = rbf_matrix(X, X, gamma)
        for nu in sorted(set(nu_grid)):
            params = SvcParams(nu=nu, gamma=gamma, tol=tol)
            correct = []
            try:
                for f in range(folds):
                    tr = np.flatnonzero(fold != f)
                    te = np.flatnonzero(fold == f)
                    pairs, models, pair_rows = _train_pairs(K, labels, classes, params, tr)
                    dec = np.column_stack(
                        [K[np.ix_(te, rows[m.support])] @ m.dual_coef - m.rho
                         for m, rows in zip(models, pair_rows)]
                    )
                    pred = classes[_vote(dec, pairs, classes.size)]
                    correct.append(np.mean(pred == labels[te]))
            except InfeasibleNuError:
                scores[(gamma, nu)] = np.nan
                continue
            scores[(gamma, nu)] = float(np.mean(correct))
    return scores


def cross_validate(features: np.ndarray, labels: np.ndarray,
                   nu_grid: Sequence[float] = DEFAULT_NU_GRID,
                   gamma_grid: Sequence[float] = DEFAULT_GAMMA_GRID,
                   folds: int = 5, seed=0, tol: float = 1e-3) -> SvcParams:
    """Pick (nu, gamma) with the best mean fold accuracy.

    Ties prefer the smaller gamma, then the smaller nu.
    """
    if not nu_grid or not gamma_grid:
        raise ValidationError("parameter grid is empty")
    scores = grid_scores(features, labels, nu_grid, gamma_grid, folds, seed, tol)
    best, best_score = None, -np.inf
    for (gamma, nu), s in sorted(scores.items()):
        if not np.isnan(s) and s > best_score:
            best, best_score = (gamma, nu), s
    if best is None:
        raise NoFeasibleParamsError("no grid point is feasible for these class sizes")
    logger.info("selected gamma=%g nu=%g (cv accuracy %.4f)", best[0], best[1], best_score)
    return SvcParams(nu=best[1], gamma=best[0], tol=tol, folds=folds)


def predict_probability_tensor(model: MulticlassModel, D: np.ndarray, training: TrainingSet,
                               background: np.ndarray | None = None,
                               chunk: int = 20_000) -> ProbabilityTensor:
    """Class probabilities for every pixel of a d x (M*N) feature matrix.

    Background pixels (``background`` mask) get all-zero vectors and are
    flagged excluded; training pixels are overwritten with their one-hot
    label. Channels follow class ids 1..c.
    """
    D = np.asarray(D, dtype=np.float64)
    m, n = training.shape
    if D.ndim != 2 or D.shape[1] != m * n:
        raise ValidationError(f"feature matrix shape {D.shape} does not match a {m}x{n} raster")
    if D.shape[0] != model.n_features:
        raise ValidationError(f"model expects {model.n_features} features, got {D.shape[0]}")
    c = int(model.classes.max())
    excluded = np.zeros(m * n, dtype=bool) if background is None else np.asarray(background, bool).ravel()
    out = np.zeros((m * n, c))
    idx = np.flatnonzero(~excluded)
    for s in range(0, idx.size, chunk):
        part = idx[s : s + chunk]
        out[np.ix_(part, model.classes - 1)] = model.predict_proba(D[:, part].T)
    if len(training):
        flat = training.flat_index
        out[flat] = 0.0
        out[flat, training.classes - 1] = 1.0
        excluded[flat] = False
    return ProbabilityTensor(out.reshape(m, n, c), excluded.reshape(m, n))


@dataclass(frozen=True)
class FeatureScaler:
    """Per-feature affine map onto [-1, 1] fitted on all pixels."""

    low: np.ndarray
    high: np.ndarray

    @classmethod
    def fit(cls, D: np.ndarray) -> "FeatureScaler":
        D = np.asarray(D, dtype=np.float64)
        return cls(D.min(axis=1), D.max(axis=1))

    def transform(self, D: np.ndarray) -> np.ndarray:
        span = self.high - self.low
        safe = np.where(span > 0, span, 1.0)
        out = 2.0 * (np.asarray(D) - self.low[:, None]) / safe[:, None] - 1.0
        out[span <= 0] = 0.0
        return out
