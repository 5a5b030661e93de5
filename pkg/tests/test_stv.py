import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsiclass.core import ProbabilityTensor, ValidationError
from hsiclass.stv import (
    GradientField,
    StvConvergenceWarning,
    StvParams,
    classify,
    divergence,
    gradient,
    smooth_tensor,
    stv_denoise,
    stv_objective,
)
from oracles import stv_subgradient_oracle


def _cvx_stv(V, b1, b2, mask=None, isotropic=False):
    import cvxpy as cp

    m, n = V.shape
    U = cp.Variable((m, n))
    dx = U[:, 1:] - U[:, :-1]
    dy = U[1:, :] - U[:-1, :]
    if isotropic:
        # pad so both components live on the same grid
        gx = cp.hstack([dx, np.zeros((m, 1))])
        gy = cp.vstack([dy, np.zeros((1, n))])
        tv = cp.sum(cp.norm(cp.vstack([cp.vec(gx, order="C"), cp.vec(gy, order="C")]), 2, axis=0))
    else:
        tv = cp.sum(cp.abs(dx)) + cp.sum(cp.abs(dy))
    obj = 0.5 * cp.sum_squares(U - V) + b1 * tv + 0.5 * b2 * (cp.sum_squares(dx) + cp.sum_squares(dy))
    cons = [] if mask is None else [U[i, j] == V[i, j] for i, j in zip(*np.nonzero(mask))]
    prob = cp.Problem(cp.Minimize(obj), cons)
    prob.solve(solver="CLARABEL", tol_gap_abs=1e-11, tol_gap_rel=1e-11, tol_feas=1e-11)
    return U.value, prob.value


def test_gradient_examples():
    g = gradient(np.full((3, 4), 2.5))
    assert not g.dx.any() and not g.dy.any()
    U = np.tile(np.arange(5.0), (3, 1))
    g = gradient(U)
    np.testing.assert_array_equal(g.dx[:, :-1], 1.0)
    np.testing.assert_array_equal(g.dx[:, -1], 0.0)
    np.testing.assert_array_equal(g.dy, 0.0)


def test_adjoint_6x7():
    rng = np.random.default_rng(0)
    U = rng.standard_normal((6, 7))
    G = GradientField(rng.standard_normal((6, 7)), rng.standard_normal((6, 7)))
    assert abs(gradient(U).inner(G) + np.vdot(U, divergence(G))) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**31))
def test_adjoint_property(m, n, seed):
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((m, n))
    G = GradientField(rng.standard_normal((m, n)), rng.standard_normal((m, n)))
    lhs = gradient(U).inner(G)
    rhs = -np.vdot(U, divergence(G))
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_params_validation():
    for bad in (dict(beta1=-1.0), dict(beta2=-0.1), dict(mu=0.0), dict(max_iter=0), dict(tol=0.0)):
        with pytest.raises(ValidationError):
            StvParams(**bad)


def test_zero_weights_return_input_exactly():
    V = np.random.default_rng(1).random((5, 6))
    r = stv_denoise(V, params=StvParams(beta1=0.0, beta2=0.0))
    np.testing.assert_array_equal(r.u, V)


def test_constant_map_is_fixed_point():
    V = np.full((7, 5), 0.3)
    r = stv_denoise(V, params=StvParams(beta1=0.8))
    np.testing.assert_allclose(r.u, V, atol=1e-12)


def test_rejects_bad_input():
    with pytest.raises(ValidationError):
        stv_denoise(np.ones(4))
    with pytest.raises(ValidationError):
        stv_denoise(np.array([[1.0, np.nan]]))
    with pytest.raises(ValidationError):
        stv_denoise(np.ones((2, 2)), mask=np.ones((3, 2), bool))


@pytest.mark.parametrize("beta1", [0.2])
def test_objective_matches_subgradient_oracle(beta1):
    V = np.random.default_rng(2).random((8, 8))
    r = stv_denoise(V, params=StvParams(beta1=beta1))
    _, ref = stv_subgradient_oracle(V, beta1, 4.0, iters=1_000_000)
    assert abs(r.objective - ref) < 1e-4


@pytest.mark.parametrize("beta1", [0.1, 0.8])
def test_objective_matches_conic_solver(beta1):
    V = np.random.default_rng(3).random((8, 8))
    r = stv_denoise(V, params=StvParams(beta1=beta1))
    _, ref = _cvx_stv(V, beta1, 4.0)
    assert r.converged
    assert abs(r.objective - ref) < 1e-4


def test_isotropic_matches_conic_solver():
    V = np.random.default_rng(4).random((6, 7))
    params = StvParams(beta1=0.3, isotropic=True)
    r = stv_denoise(V, params=params)
    _, ref = _cvx_stv(V, 0.3, 4.0, isotropic=True)
    assert abs(r.objective - ref) < 1e-4


def test_pinned_solution_is_constrained_minimizer():
    rng = np.random.default_rng(5)
    V = rng.random((8, 8))
    mask = rng.random((8, 8)) < 0.15
    r = stv_denoise(V, mask=mask, params=StvParams(beta1=0.2))
    np.testing.assert_array_equal(r.u[mask], V[mask])
    U_ref, ref = _cvx_stv(V, 0.2, 4.0, mask=mask)
    assert abs(r.objective - ref) < 1e-4


def test_pinned_values_other_than_input():
    V = np.random.default_rng(6).random((6, 6))
    mask = np.zeros((6, 6), bool)
    mask[2, 3] = True
    pinned = np.full((6, 6), 5.0)
    r = stv_denoise(V, mask=mask, params=StvParams(beta1=0.2), pinned=pinned)
    assert r.u[2, 3] == 5.0


def test_cap_returns_best_iterate_with_warning():
    V = np.random.default_rng(7).random((10, 10))
    with pytest.warns(StvConvergenceWarning):
        r = stv_denoise(V, params=StvParams(beta1=0.8, max_iter=3))
    assert not r.converged and r.iterations == 3
    assert r.objective <= stv_objective(V, V, 0.8, 4.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 9), st.integers(2, 9), st.sampled_from([0.05, 0.2, 0.8]), st.integers(0, 2**31))
def test_unconstrained_invariants(m, n, beta1, seed):
    V = np.random.default_rng(seed).random((m, n))
    params = StvParams(beta1=beta1)
    r = stv_denoise(V, params=params)
    assert r.objective <= stv_objective(V, V, beta1, 4.0) + 1e-9
    assert V.min() - 1e-9 <= r.u.min() and r.u.max() <= V.max() + 1e-9
    if r.converged:
        assert r.primal_residual < params.tol and r.dual_residual < params.tol


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 9), st.integers(2, 9), st.integers(0, 2**31))
def test_pinning_exact(m, n, seed):
    rng = np.random.default_rng(seed)
    V = rng.random((m, n))
    mask = rng.random((m, n)) < 0.3
    r = stv_denoise(V, mask=mask, params=StvParams(beta1=0.3))
    np.testing.assert_array_equal(r.u[mask], V[mask])


def _one_hot_tensor(labels, c):
    return np.eye(c)[labels - 1]


def test_smooth_tensor_constant_channels():
    V = np.broadcast_to([0.2, 0.5, 0.3], (6, 6, 3)).copy()
    U, results = smooth_tensor(ProbabilityTensor(V), None, StvParams())
    np.testing.assert_allclose(U.values, V, atol=1e-12)
    assert len(results) == 3


def test_smooth_tensor_pins_training_pixels():
    rng = np.random.default_rng(8)
    V = rng.dirichlet(np.ones(3), size=(8, 8))
    mask = np.zeros((8, 8), bool)
    mask[1, 2] = mask[6, 6] = True
    V[1, 2] = [0, 0, 1]
    V[6, 6] = [1, 0, 0]
    U, _ = smooth_tensor(ProbabilityTensor(V), mask, StvParams(beta1=0.5))
    np.testing.assert_array_equal(U.values[1, 2], [0, 0, 1])
    np.testing.assert_array_equal(U.values[6, 6], [1, 0, 0])


def test_salt_and_pepper_pixels_move_toward_neighbours():
    labels = np.ones((10, 10), int)
    V = _one_hot_tensor(labels, 2) * 0.9 + 0.05
    flips = [(3, 3), (6, 7)]
    for i, j in flips:
        V[i, j] = [0.05, 0.95]
    params = StvParams(beta1=0.3)
    U, _ = smooth_tensor(ProbabilityTensor(V), None, params)
    for i, j in flips:
        assert U.values[i, j, 1] < V[i, j, 1]
        assert U.values[i, j, 0] > V[i, j, 0]
    for k in range(2):
        assert stv_objective(U.values[..., k], V[..., k], 0.3, 4.0) < stv_objective(V[..., k], V[..., k], 0.3, 4.0)
    assert np.all(classify(U).labels == 1)


def test_classify_rules():
    V = np.array([[[0.0, 1.0, 0.0], [0.5, 0.5, 0.0]], [[0.2, 0.3, 0.5], [1, 0, 0]]])
    ex = np.array([[False, False], [False, True]])
    lab = classify(ProbabilityTensor(V, ex))
    np.testing.assert_array_equal(lab.labels, [[2, 1], [3, 0]])


def test_channel_permutation_equivariance():
    rng = np.random.default_rng(9)
    V = rng.dirichlet(np.ones(4), size=(9, 9))
    mask = rng.random((9, 9)) < 0.1
    perm = np.array([2, 0, 3, 1])
    params = StvParams(beta1=0.2)
    lab = classify(smooth_tensor(ProbabilityTensor(V), mask, params)[0]).labels
    lab_p = classify(smooth_tensor(ProbabilityTensor(V[..., perm]), mask, params)[0]).labels
    # channel k of the permuted tensor is channel perm[k] of the original
    np.testing.assert_array_equal(perm[lab_p - 1] + 1, lab)


def test_no_smoothing_keeps_stage_two_labels():
    V = np.random.default_rng(10).dirichlet(np.ones(3), size=(5, 5))
    U, _ = smooth_tensor(ProbabilityTensor(V), None, StvParams(beta1=0.0, beta2=0.0))
    np.testing.assert_array_equal(classify(U).labels, V.argmax(2) + 1)


def test_large_mask_cg_path_agrees_with_direct_path():
    from hsiclass.stv import _USolver

    rng = np.random.default_rng(11)
    V = rng.random((12, 12))
    mask = rng.random((12, 12)) < 0.2
    params = StvParams(beta1=0.2)
    direct = stv_denoise(V, mask, params)
    cg = stv_denoise(V, mask, params, solver=_USolver(V.shape, params.mu, mask, schur_limit=0))
    assert cg.objective == pytest.approx(direct.objective, abs=1e-9)
    np.testing.assert_array_equal(cg.u[mask], V[mask])
