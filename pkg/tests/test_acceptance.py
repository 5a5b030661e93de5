"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline; they
are also repeated in the terminal summary.
"""
import itertools
import os
import time
import warnings

import numpy as np
import pytest
from scipy.stats import ortho_group

from conftest import ACCEPTANCE_LINES
from hsiclass.core import HsiCube, ProbabilityTensor, sample_training_set
from hsiclass.evaluation import ConfusionMatrix, aa, confusion, kappa, oa
from hsiclass.io import SyntheticSceneSpec, generate_synthetic, read_cube, read_labels
from hsiclass.nsw import NswParams, reconstruct_cube
from hsiclass.pca import fit_pca, transform
from hsiclass.pipeline import PipelineConfig, ablate, compute_features, svc_stage, trial_seeds
from hsiclass.stv import GradientField, StvParams, classify, divergence, gradient, smooth_tensor, stv_denoise
from hsiclass.svc import SvcParams, pairwise_coupling, rbf_matrix
from hsiclass.svc.solver import nu_feasible_max, train_binary_kernel
from oracles import coupling_grid_oracle, dense_pca_oracle, naive_nsw, nu_dual_oracle, stv_subgradient_oracle


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_criterion_1_nsw_oracle():
    rng = np.random.default_rng(1)
    worst = 0.0
    elapsed = 0.0
    for k in range(50):
        shape = (rng.integers(1, 9), rng.integers(1, 9), rng.integers(2, 7))
        v = rng.standard_normal(shape)
        w = (3, 5)[k % 2]
        t0 = time.perf_counter()
        out = reconstruct_cube(HsiCube(v), NswParams(w)).values
        elapsed += time.perf_counter() - t0
        worst = max(worst, float(np.abs(out - naive_nsw(v, w)).max()))
    record(1, worst <= 1e-10 and elapsed < 10.0,
           f"NSW max deviation {worst:.2e} (tol 1e-10), runtime {elapsed:.2f}s (< 10s)")


def test_criterion_2_pca_oracle():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(20):
        b = int(rng.integers(2, 11))
        n = int(rng.integers(b, 51))
        d = int(rng.integers(1, b + 1))
        R = rng.standard_normal((b, n)) * rng.uniform(0.5, 3, (b, 1))
        model = fit_pca(R, d)
        evals, W = dense_pca_oracle(R, d)
        frac_ref = evals[:d].sum() / evals.sum()
        rc = R - R.mean(1, keepdims=True)
        resid = np.linalg.norm(rc - model.components @ transform(model, R), axis=0)
        resid_ref = np.linalg.norm(rc - W @ (W.T @ rc), axis=0)
        worst = max(worst, abs(model.captured_fraction - frac_ref), float(np.abs(resid - resid_ref).max()))
    record(2, worst <= 1e-8, f"PCA max deviation {worst:.2e} (tol 1e-8)")


def test_criterion_3_svc_dual_and_coupling():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(10):
        l = int(rng.integers(3, 9))
        X = rng.standard_normal((l, 2))
        y = np.ones(l, dtype=int)
        y[rng.permutation(l)[: rng.integers(1, l)]] = -1
        nu = float(rng.uniform(0.1, 1.0) * nu_feasible_max(y))
        gamma = float(2.0 ** rng.integers(-2, 3))
        K = rbf_matrix(X, X, gamma)
        model = train_binary_kernel(K, y, SvcParams(nu=nu, gamma=gamma, tol=1e-6))
        ref, _ = nu_dual_oracle(K, y, nu)
        worst = max(worst, abs(model.objective - ref))
    r = np.array([[0, 0.8, 0.6], [0.2, 0, 0.3], [0.4, 0.7, 0]])
    r2 = np.array([[0, 0.55, 0.9], [0.45, 0, 0.75], [0.1, 0.25, 0]])
    cworst = max(float(np.abs(pairwise_coupling(m) - coupling_grid_oracle(m)).max()) for m in (r, r2))
    record(3, worst <= 1e-4 and cworst <= 1e-3,
           f"dual objective max deviation {worst:.2e} (tol 1e-4); coupling {cworst:.2e} (tol 1e-3)")


def test_criterion_4_stv_oracle():
    rng = np.random.default_rng(4)
    maps = [rng.random((8, 8)) for _ in range(10)]
    worst = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for b1, V in itertools.product((0.1, 0.2, 0.8), maps):
            res = stv_denoise(V, params=StvParams(beta1=b1, beta2=4.0))
            _, ref = stv_subgradient_oracle(V, b1, 4.0, iters=3_000_000)
            worst = max(worst, abs(res.objective - ref))
    record(4, worst <= 1e-4, f"STV objective max deviation {worst:.2e} over 30 maps (tol 1e-4)")


def test_criterion_5_invariants():
    rng = np.random.default_rng(5)
    checks = {}
    # adjoint identity
    adj = 0.0
    for _ in range(50):
        m, n = rng.integers(1, 12, 2)
        U = rng.standard_normal((m, n))
        G = GradientField(rng.standard_normal((m, n)), rng.standard_normal((m, n)))
        adj = max(adj, abs(gradient(U).inner(G) + np.vdot(U, divergence(G))))
    checks["adjoint"] = adj <= 1e-12
    # simplex of the stage-2 tensor, pinning, determinism
    cube, gt = generate_synthetic(SyntheticSceneSpec(24, 24, 8, 4, 8, noise=0.3, seed=5))
    cfg = PipelineConfig(nsw=NswParams(3), pca_dims=5, nu_grid=(0.2, 0.4), gamma_grid=(0.5, 2.0),
                         per_class=6, trials=2, seed=5)
    D = compute_features(cube, cfg)
    s_seed, f_seed = trial_seeds(cfg.seed, 1)[0]
    ts = sample_training_set(gt, cfg.per_class, s_seed)
    V, _ = svc_stage(D, gt, ts, cfg, f_seed)
    try:
        V.check_simplex(1e-9)
        checks["simplex"] = True
    except ValueError:
        checks["simplex"] = False
    mask = ts.mask()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        U, _ = smooth_tensor(V, mask, cfg.stv)
        checks["pinning"] = bool(np.array_equal(U.values[mask], V.values[mask]))
        V2, _ = svc_stage(D, gt, ts, cfg, f_seed)
        r1 = ablate(cube, gt, cfg, [cfg.stages])
        r2 = ablate(cube, gt, cfg, [cfg.stages])
        checks["determinism"] = V2 == V and all(r1[k].same_as(r2[k]) for k in r1)
        # channel permutation: smoothing + argmax commute with relabelling
        perm = rng.permutation(V.n_classes)
        lab = classify(U).labels
        Up, _ = smooth_tensor(ProbabilityTensor(V.values[..., perm], V.excluded), mask, cfg.stv)
        lab_p = classify(Up).labels
        checks["channel permutation"] = bool(np.array_equal(perm[lab_p - 1] + 1, lab))
    # label permutation leaves metrics unchanged
    pred = lab
    relabel = np.concatenate([[0], rng.permutation(gt.n_classes) + 1])
    cm1 = confusion(gt, pred, ts)
    from hsiclass.core import LabelRaster, TrainingSet

    gt2 = LabelRaster(relabel[gt.labels], gt.n_classes)
    ts2 = TrainingSet(tuple((i, j, int(relabel[k])) for i, j, k in ts.entries), ts.shape)
    cm2 = confusion(gt2, relabel[pred], ts2)
    checks["label permutation"] = all(
        abs(f(cm1) - f(cm2)) < 1e-12 for f in (oa, aa, kappa)
    )
    failed = [k for k, ok in checks.items() if not ok]
    record(5, not failed, f"{len(checks) - len(failed)}/{len(checks)} invariants hold"
           + (f"; failing: {', '.join(failed)}" if failed else f" (adjoint error {adj:.1e})"))


SYNTH_SPEC = SyntheticSceneSpec(rows=64, cols=64, bands=20, classes=6, patch_size=12, noise=0.4, seed=1)


def test_criterion_6_synthetic_end_to_end():
    cube, gt = generate_synthetic(SYNTH_SPEC)
    cfg = PipelineConfig(nsw=NswParams(5), pca_dims=10, stv=StvParams(beta1=0.2), trials=10, seed=0)
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        reps = ablate(cube, gt, cfg, [{"svc"}, {"svc", "stv"}, {"nsw", "pca", "svc"},
                                      {"nsw", "pca", "svc", "stv"}])
    elapsed = time.perf_counter() - t0
    base = reps["svc"].mean["OA"]
    stv_only = reps["svc+stv"].mean["OA"]
    mid = reps["nsw+pca+svc"].mean["OA"]
    full = reps["nsw+pca+svc+stv"].mean["OA"]
    ok = 0.60 <= base <= 0.85 and full - base >= 0.05 and stv_only - base >= 0.01 and elapsed < 300
    record(6, ok, f"OA svc {100 * base:.2f}% / svc+stv {100 * stv_only:.2f}% / nsw+pca+svc {100 * mid:.2f}% / "
                  f"full {100 * full:.2f}% over 10 trials, {elapsed:.0f}s")


def test_criterion_7_indian_pines():
    cube_path = os.environ.get("HSICLASS_INDIAN_PINES_CUBE")
    label_path = os.environ.get("HSICLASS_INDIAN_PINES_LABELS")
    if not (cube_path and label_path):
        line = ("criterion 7: SKIP - set HSICLASS_INDIAN_PINES_CUBE and HSICLASS_INDIAN_PINES_LABELS "
                "to converted files (non-blocking)")
        ACCEPTANCE_LINES.append(line)
        pytest.skip(line)
    cube, gt = read_cube(cube_path), read_labels(label_path)
    cfg = PipelineConfig(nsw=NswParams(21), pca_dims=25, stv=StvParams(beta1=0.2), per_class=10, trials=10, seed=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = ablate(cube, gt, cfg, [cfg.stages])["nsw+pca+svc+stv"]
    got = rep.mean["OA"]
    record(7, abs(got - 0.9157) <= 0.03, f"Indian Pines mean OA {100 * got:.2f}% (target 91.57% +/- 3)")


def test_criterion_8_metrics():
    cm = ConfusionMatrix(np.array([[25, 5], [10, 60]]))
    o, k, a = oa(cm), kappa(cm), aa(cm)
    a_ref = (25 / 30 + 60 / 70) / 2
    ok = abs(o - 0.85) <= 1e-4 and abs(k - 0.6591) <= 1e-4 and abs(a - a_ref) <= 1e-4
    record(8, ok, f"OA {o:.4f}, kappa {k:.4f}, AA {a:.4f}")
