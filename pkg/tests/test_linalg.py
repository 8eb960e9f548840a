import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import sqrtm

from lazypsrl.linalg import (
    REFACTOR_EVERY,
    DimensionError,
    InfoMatrix,
    half_weighted_norm,
    increment_matrix,
    logdet_telescoping_bounds,
    psd_update,
    top_eigenvalue_psd,
    weighted_param_norm,
    whitened_norm_sq,
)

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def rand_pd(rng, m, floor=0.1):
    G = rng.standard_normal((m, m))
    return G @ G.T + floor * np.eye(m)


def test_from_matrix_rejects_bad_input():
    with pytest.raises(ValueError):
        InfoMatrix.from_matrix([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        InfoMatrix.from_matrix([[1.0, 0.0], [0.0, -1.0]])


def test_identity_caches():
    V = InfoMatrix.identity(3, 2.0)
    assert V.log_det == pytest.approx(3 * np.log(2.0))
    assert V.trace == pytest.approx(6.0)
    assert V.dim == 3


def test_update_identity_plus_unit_vector():
    V = psd_update(InfoMatrix.identity(2), [(1.0, [1.0, 0.0])])
    assert np.allclose(V.reconstruct(), np.diag([2.0, 1.0]))
    assert V.log_det == pytest.approx(np.log(2.0), abs=1e-14)


def test_zero_increment_is_noop():
    V0 = InfoMatrix.from_matrix(np.diag([1.0, 3.0]))
    V = psd_update(V0, [(1.0, np.zeros(2))])
    assert np.array_equal(V.matrix, V0.matrix)
    assert V.log_det == V0.log_det


def test_update_errors():
    V = InfoMatrix.identity(2)
    with pytest.raises(ValueError):
        psd_update(V, [(-1.0, [1.0, 0.0])])
    with pytest.raises(DimensionError):
        psd_update(V, [(1.0, [1.0, 0.0, 0.0])])


@settings(max_examples=40, deadline=None)
@given(seed=seeds, m=st.integers(1, 6), k=st.integers(1, 40))
def test_update_matches_batch_oracle(seed, m, k):
    rng = np.random.default_rng(seed)
    V0 = rand_pd(rng, m)
    V = InfoMatrix.from_matrix(V0)
    incs = [(float(rng.uniform(0, 3)), rng.standard_normal(m)) for _ in range(k)]
    for w, v in incs:
        V = psd_update(V, [(w, v)])
    batch = V0 + increment_matrix(incs, m)
    assert np.allclose(V.reconstruct(), batch, rtol=1e-9, atol=1e-9)
    assert V.log_det == pytest.approx(np.linalg.slogdet(batch)[1], abs=1e-8)
    assert V.trace == pytest.approx(np.trace(batch), rel=1e-12)


def test_periodic_refactorization_keeps_accuracy():
    rng = np.random.default_rng(3)
    V = InfoMatrix.identity(4)
    total = np.eye(4)
    for _ in range(REFACTOR_EVERY + 500):
        v = rng.standard_normal(4)
        V = psd_update(V, [(1.0, v)])
        total += np.outer(v, v)
    assert V.pending < REFACTOR_EVERY
    assert np.allclose(V.chol @ V.chol.T, total, rtol=1e-9)
    assert V.log_det == pytest.approx(np.linalg.slogdet(total)[1], abs=1e-8)


def test_power_iteration_with_start_orthogonal_to_top_eigenvector():
    # Top eigenvector (1, -1)/sqrt(2) is orthogonal to the all-ones start.
    S = np.array([[2.0, -1.0], [-1.0, 2.0]])
    assert float(top_eigenvalue_psd(S)) == pytest.approx(3.0, rel=1e-9)


@settings(max_examples=60, deadline=None)
@given(seed=seeds, m=st.integers(1, 6), n=st.integers(1, 5))
def test_weighted_param_norm_matches_eigvalsh(seed, m, n):
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal((m, n))
    M = rand_pd(rng, m, floor=0.0)
    expect = np.sqrt(np.linalg.eigvalsh(theta.T @ M @ theta).max())
    assert weighted_param_norm(theta, M) == pytest.approx(expect, rel=1e-6, abs=1e-12)


def test_weighted_param_norm_examples():
    assert weighted_param_norm(np.zeros((3, 2)), np.eye(3)) == 0.0
    theta = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert weighted_param_norm(theta, np.eye(2)) == pytest.approx(np.linalg.norm(theta, 2), rel=1e-9)
    with pytest.raises(DimensionError):
        weighted_param_norm(theta, np.eye(3))


@settings(max_examples=40, deadline=None)
@given(seed=seeds, m=st.integers(1, 5), n=st.integers(1, 4))
def test_half_weighted_norm_matches_sqrtm(seed, m, n):
    rng = np.random.default_rng(seed)
    Vm = rand_pd(rng, m)
    delta = rng.standard_normal((m, n))
    expect = np.linalg.norm(delta.T @ np.real(sqrtm(Vm)), 2)
    assert half_weighted_norm(delta, InfoMatrix.from_matrix(Vm)) == pytest.approx(expect, rel=1e-6)


def test_half_weighted_norm_batched():
    rng = np.random.default_rng(0)
    V = InfoMatrix.from_matrix(rand_pd(rng, 3))
    deltas = rng.standard_normal((7, 3, 2))
    out = half_weighted_norm(deltas, V)
    assert out.shape == (7,)
    assert np.allclose(out, [half_weighted_norm(d, V) for d in deltas])


@settings(max_examples=40, deadline=None)
@given(seed=seeds, m=st.integers(1, 5))
def test_whitened_norm_matches_symmetric_root(seed, m):
    rng = np.random.default_rng(seed)
    Vm = rand_pd(rng, m)
    v = rng.standard_normal(m)
    M = np.outer(v, v)
    root_inv = np.linalg.inv(np.real(sqrtm(Vm)))
    expect = np.linalg.eigvalsh(root_inv @ M @ root_inv).max()
    got = whitened_norm_sq(InfoMatrix.from_matrix(Vm), M)
    assert got == pytest.approx(expect, rel=1e-6)
    # rank one: equals v^T V^{-1} v
    assert got == pytest.approx(v @ np.linalg.solve(Vm, v), rel=1e-6)


@settings(max_examples=25, deadline=None)
@given(seed=seeds, m=st.integers(1, 5), L2=st.floats(0.1, 10.0))
def test_logdet_telescoping_property(seed, m, L2):
    rng = np.random.default_rng(seed)
    V0 = InfoMatrix.from_matrix(rand_pd(rng, m, floor=0.5))
    seq = []
    for _ in range(60):
        v = rng.standard_normal(m)
        v *= np.sqrt(L2 * rng.uniform()) / np.linalg.norm(v)
        seq.append([(1.0, v)])
    lhs, mid, right = logdet_telescoping_bounds(V0, seq, L2)
    assert lhs <= mid + 1e-8
    assert mid <= right + 1e-8


@settings(max_examples=60, deadline=None)
@given(seed=seeds, m=st.integers(1, 5), k=st.integers(1, 5))
def test_det_ratio_property(seed, m, k):
    rng = np.random.default_rng(seed)
    B = rand_pd(rng, m)
    H = rng.standard_normal((m, m))
    A = B + H @ H.T
    X = rng.standard_normal((m, k))
    lhs = np.linalg.norm(X.T @ A @ X, 2) / np.linalg.norm(X.T @ B @ X, 2)
    rhs = np.linalg.det(A) / np.linalg.det(B)
    assert lhs <= rhs * (1 + 1e-8)
