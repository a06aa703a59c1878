from dataclasses import replace

import numpy as np
import pytest

from uexpand.errors import BudgetError, ParameterError
from uexpand.fields import torus_delta
from uexpand.flow import AffineTorusMap
from uexpand.seeding import derive_rng
from uexpand.walk import (
    build_cover,
    build_measure,
    containment_check,
    covering_radius,
    dirac,
    discretize,
    draw_words,
    push_forward,
    run_orbit,
    sample,
    sample_word,
    word_from_draws,
)

CAT = AffineTorusMap(np.array([[2, 1], [1, 1]]))


def test_cover_reaches_every_point_within_half_the_chart_scale():
    for d, s in [(2, 0.2), (3, 0.2), (2, 0.15)]:
        pts = build_cover(d, s)
        n = round(len(pts) ** (1 / d))
        assert covering_radius(d, n) <= s / 2
        probe = np.random.default_rng(0).random((2000, d))
        dist = np.min(np.linalg.norm(torus_delta(probe[:, None, :], pts[None, :, :]), axis=2), axis=1)
        assert dist.max() <= s / 2


def test_default_measure_layout():
    mu = build_measure(2)
    assert mu.n_charts == 64 and mu.n_params == 5
    assert mu.weights[0] == pytest.approx(1 / 65)
    assert np.allclose(mu.weights[1:], mu.weights[1])
    assert mu.weights.sum() == pytest.approx(1.0, abs=1e-15)
    assert mu.f0.is_identity and mu.steps == 64 and mu.epsilon == 0.4


@pytest.mark.parametrize("eps", [0.0, 0.5, 0.6, -0.1])
def test_epsilon_range_is_enforced(eps):
    with pytest.raises(ParameterError, match="1/2"):
        build_measure(2, epsilon=eps)


def test_other_validation():
    with pytest.raises(ParameterError):
        build_cover(1, 0.2)
    with pytest.raises(ParameterError):
        build_measure(2, chart_scale=0.3)
    with pytest.raises(ParameterError):
        build_measure(3, f0=CAT)


def test_discretization_grid_and_budget():
    mu = discretize(build_measure(2), 3)
    assert np.allclose(mu.grid_values(), [-0.8 / 3, 0.0, 0.8 / 3])
    assert mu.atom_count() == 64 * 3**5 + 1
    draws = draw_words(mu, np.random.default_rng(1), 50, 3)
    assert np.isin(draws.a, mu.grid_values()).all()
    assert np.abs(draws.a).max() <= mu.epsilon
    with pytest.raises(BudgetError):
        discretize(build_measure(2), 3, max_atoms=1000)
    with pytest.raises(BudgetError):
        discretize(build_measure(3), 3)  # 3^11 atoms per chart


def test_draws_are_reproducible_and_follow_the_weights():
    mu = build_measure(2, p0=0.5)
    a = draw_words(mu, derive_rng(3, "w", 1), 20000, 1)
    b = draw_words(mu, derive_rng(3, "w", 1), 20000, 1)
    assert np.array_equal(a.branch, b.branch) and np.array_equal(a.a, b.a)
    assert abs(np.mean(a.branch == 0) - 0.5) < 0.02
    assert np.abs(a.a).max() <= 0.4


def test_dirac_never_draws_a_flow():
    draws = draw_words(dirac(CAT), np.random.default_rng(0), 10, 5)
    assert not draws.branch.any()


def test_batched_push_forward_matches_object_composition():
    mu = build_measure(2)
    draws = draw_words(mu, np.random.default_rng(2), 12, 4)
    pts = np.random.default_rng(3).random((12, 2))
    frames = np.broadcast_to(np.eye(2), (12, 2, 2))
    out, tan = push_forward(mu, draws, pts, frames)
    for i in range(12):
        y, J = word_from_draws(mu, draws, i).composed.apply_with_jacobian(pts[i])
        assert np.abs(torus_delta(y, out[i])).max() < 1e-14
        assert np.abs(J - tan[i]).max() < 1e-12


def test_push_forward_independent_of_worker_count():
    mu = replace(build_measure(2), f0=CAT)
    draws = draw_words(mu, np.random.default_rng(4), 200, 3)
    pts = np.random.default_rng(5).random((200, 2))
    frames = np.broadcast_to(np.eye(2)[:, :1], (200, 2, 1))
    p1, t1 = push_forward(mu, draws, pts, frames, workers=1)
    p4, t4 = push_forward(mu, draws, pts, frames, workers=4)
    assert np.array_equal(p1, p4) and np.array_equal(t1, t4)


def test_orbit_matches_push_forward():
    mu = build_measure(2)
    draws = draw_words(mu, np.random.default_rng(6), 1, 50)
    x, _, pos = run_orbit(mu, [0.1, 0.2], draws, record=True)
    y, _ = push_forward(mu, draws, np.array([[0.1, 0.2]]))
    assert np.abs(torus_delta(x, y[0])).max() < 1e-13
    assert np.array_equal(pos[-1], x)


def test_sampled_factors_preserve_volume():
    mu = build_measure(2, steps=256)
    rng = np.random.default_rng(7)
    for _ in range(20):
        g = sample(mu, rng)
        _, J = g.apply_with_jacobian(rng.random(2))
        assert abs(np.linalg.det(J) - 1) < 1e-7
    w = sample_word(mu, 5, rng)
    assert len(w.factors) == 5


def test_containment_diagnostic():
    worst, frac = containment_check(build_measure(2, epsilon=0.05), np.random.default_rng(8))
    assert worst < 2.0 and frac == 0.0
    worst, frac = containment_check(build_measure(2, epsilon=0.4), np.random.default_rng(8))
    assert 0.0 <= frac < 0.1 and worst > 1.0
