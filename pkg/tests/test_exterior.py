from itertools import combinations
from math import comb, log

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uexpand.errors import DegenerateVolumeError, ParameterError
from uexpand.exterior import (
    GrassmannPoint,
    batch_log_volume,
    compound,
    compound_dim,
    gram_log_volume,
    grassmann_coordinates,
    grassmann_move,
    log_expansion,
    plucker,
    random_grassmann,
    transport,
)


def minors_bruteforce(M, k):
    idx = list(combinations(range(M.shape[0]), k))
    return np.array([[np.linalg.det(M[np.ix_(r, c)]) for c in idx] for r in idx])


seeds = st.integers(0, 2**32 - 1)


def test_compound_matches_bruteforce_minors():
    rng = np.random.default_rng(1)
    M = rng.standard_normal((5, 5))
    for k in range(1, 6):
        assert np.allclose(compound(M, k), minors_bruteforce(M, k), rtol=1e-13, atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(seeds, st.integers(2, 7))
def test_compound_multiplicative(seed, d):
    rng = np.random.default_rng(seed)
    A, B = rng.standard_normal((2, d, d))
    for k in range(1, d + 1):
        lhs = compound(A @ B, k)
        rhs = compound(A, k) @ compound(B, k)
        assert np.abs(lhs - rhs).max() <= 1e-10 * np.abs(rhs).max()


def test_compound_multiplicative_10x10():
    rng = np.random.default_rng(2)
    A, B = rng.standard_normal((2, 10, 10))
    for k in (1, 3, 5, 9):
        rhs = compound(A, k) @ compound(B, k)
        assert np.abs(compound(A @ B, k) - rhs).max() <= 1e-10 * np.abs(rhs).max()


def test_compound_of_diagonal_and_identity():
    D = np.diag([2.0, 3.0, 5.0, 7.0])
    C2 = compound(D, 2)
    expected = [a * b for a, b in combinations([2.0, 3.0, 5.0, 7.0], 2)]
    assert np.allclose(C2, np.diag(expected))
    assert np.array_equal(compound(np.eye(4), 2), np.eye(6))


def test_compound_top_is_determinant():
    rng = np.random.default_rng(3)
    for d in range(2, 7):
        M = rng.standard_normal((d, d))
        C = compound(M, d)
        assert C.shape == (1, 1)
        assert abs(C[0, 0] - np.linalg.det(M)) <= 1e-10 * abs(np.linalg.det(M))


def test_compound_size_and_validation():
    assert compound(np.eye(6), 3).shape == (20, 20)
    assert compound_dim(6, 3) == comb(6, 3)
    with pytest.raises(ParameterError):
        compound(np.eye(3), 0)
    with pytest.raises(ParameterError):
        compound(np.ones((2, 3)), 1)


def test_gram_log_volume_matches_gram_determinant():
    rng = np.random.default_rng(4)
    for d, k in [(3, 1), (3, 2), (5, 3), (6, 6)]:
        V = rng.standard_normal((k, d))
        assert abs(gram_log_volume(V) - 0.5 * log(np.linalg.det(V @ V.T))) < 1e-10


def test_gram_agrees_with_cauchy_binet_minors():
    # |v_1 ^ ... ^ v_k|^2 = sum of squared k x k minors
    rng = np.random.default_rng(5)
    V = rng.standard_normal((6, 3))
    minors = [np.linalg.det(V[list(r)]) for r in combinations(range(6), 3)]
    assert abs(gram_log_volume(V.T) - 0.5 * log(np.sum(np.square(minors)))) < 1e-10


@settings(max_examples=25, deadline=None)
@given(seeds, st.floats(0.01, 100.0))
def test_gram_permutation_and_scaling(seed, c):
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((3, 5))
    base = gram_log_volume(V)
    assert abs(gram_log_volume(V[::-1]) - base) < 1e-10
    W = V.copy()
    W[0] *= -c
    assert abs(gram_log_volume(W) - base - log(c)) < 1e-10


def test_degenerate_volume_is_typed():
    v = np.array([1.0, 2.0, 3.0])
    with pytest.raises(DegenerateVolumeError):
        gram_log_volume([v, 2 * v])
    with pytest.raises(DegenerateVolumeError):
        gram_log_volume([v, np.zeros(3)])
    vals, ok = batch_log_volume(np.array([np.column_stack([v, 2 * v]), np.eye(3)[:, :2]]))
    assert ok.tolist() == [False, True]
    assert np.isnan(vals[0]) and vals[1] == 0.0


def test_grassmann_point_validation_and_projector_comparison():
    with pytest.raises(ParameterError):
        GrassmannPoint(np.eye(3))  # k = d
    with pytest.raises(ParameterError):
        GrassmannPoint(np.array([[1.0], [1.0]]))  # not orthonormal
    P = GrassmannPoint(np.eye(3)[:, :2])
    # same plane, other gauge
    c, s = np.cos(0.3), np.sin(0.3)
    Q = GrassmannPoint(np.eye(3)[:, :2] @ np.array([[c, -s], [s, c]]))
    assert P.same_subspace(Q)
    assert not P.same_subspace(GrassmannPoint(np.eye(3)[:, 1:]))


def test_plucker_coordinates_unit_and_gauge_invariant_up_to_sign():
    rng = np.random.default_rng(6)
    P = random_grassmann(rng, 5, 2)
    p = plucker(P)
    assert len(p) == 10
    assert abs(np.linalg.norm(p) - 1.0) < 1e-12
    R = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert np.allclose(plucker(GrassmannPoint(P.frame @ R)), -p)


@settings(max_examples=25, deadline=None)
@given(seeds, st.integers(2, 6), st.data())
def test_log_expansion_chain_rule(seed, d, data):
    k = data.draw(st.integers(1, d - 1))
    rng = np.random.default_rng(seed)
    A, B = rng.standard_normal((2, d, d))
    P = random_grassmann(rng, d, k)
    lhs = log_expansion(B @ A, P)
    rhs = log_expansion(A, P) + log_expansion(B, transport(A, P))
    assert abs(lhs - rhs) <= 1e-10


def test_log_expansion_equals_log_norm_of_compound_column():
    # unit k-vector e_I is a column of the compound in the lexicographic basis
    rng = np.random.default_rng(7)
    M = rng.standard_normal((4, 4))
    P = GrassmannPoint(np.eye(4)[:, [0, 2]])
    col = list(combinations(range(4), 2)).index((0, 2))
    assert abs(log_expansion(M, P) - log(np.linalg.norm(compound(M, 2)[:, col]))) < 1e-12


def test_log_expansion_identity_is_exactly_zero():
    rng = np.random.default_rng(8)
    for d, k in [(2, 1), (3, 2), (5, 3)]:
        assert log_expansion(np.eye(d), random_grassmann(rng, d, k)) == 0.0


def test_area_preservation_in_the_plane():
    # for det M = 1: |M v| * height of M v_perp over the image line = 1
    rng = np.random.default_rng(9)
    for _ in range(20):
        M = rng.standard_normal((2, 2))
        if np.linalg.det(M) < 0:
            M[0] *= -1
        M /= np.sqrt(np.linalg.det(M))
        P = random_grassmann(rng, 2, 1)
        n = transport(M, P).complement()[:, 0]
        height = abs(n @ M @ P.complement()[:, 0])
        assert abs(log_expansion(M, P) + log(height)) <= 1e-10


def test_log_expansion_hyperbolic_eigenline():
    M = np.array([[2.0, 1.0], [1.0, 1.0]])
    w, V = np.linalg.eigh(M)
    P = GrassmannPoint.from_vectors(V[:, 1])
    assert abs(log_expansion(M, P) - log(w[1])) < 1e-13


def test_transport_and_complement():
    rng = np.random.default_rng(10)
    M = rng.standard_normal((4, 4))
    P = random_grassmann(rng, 4, 2)
    Q = transport(M, P)
    assert np.allclose(Q.projector() @ (M @ P.frame), M @ P.frame)
    C = P.complement()
    assert np.allclose(C.T @ P.frame, 0.0, atol=1e-14)
    assert np.allclose(C.T @ C, np.eye(2))


def test_grassmann_chart_roundtrip():
    rng = np.random.default_rng(11)
    P = random_grassmann(rng, 5, 2)
    X = 0.1 * rng.standard_normal((3, 2))
    Q = grassmann_move(P, X)
    assert np.allclose(grassmann_coordinates(P, Q.frame), X, atol=1e-12)
    assert np.allclose(grassmann_coordinates(P, P.frame), 0.0, atol=1e-14)


def test_random_grassmann_is_roughly_uniform():
    # Haar lines in R^2: the angle is uniform on [0, pi)
    rng = np.random.default_rng(12)
    angles = np.array([np.arctan2(*random_grassmann(rng, 2, 1).frame[::-1, 0]) % np.pi for _ in range(4000)])
    hist, _ = np.histogram(angles, bins=8, range=(0, np.pi))
    assert np.all(np.abs(hist / 4000 - 1 / 8) < 0.03)
