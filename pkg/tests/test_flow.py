import numpy as np
import pytest
from scipy.integrate import solve_ivp

from uexpand.errors import IllConditionedGeneratorError, ParameterError
from uexpand.fields import BumpProfile, ChartSpec, build_generator, bumped_field, chart_back, chart_forward, n_params, torus_delta
from uexpand.flow import (
    AffineTorusMap,
    affine_exp,
    affine_exp_inverse_translation,
    compose,
    localized_diffeo,
    plateau_trajectory_radius,
    translation_logs,
)


def series_exp(M, terms=40):
    out = np.eye(len(M))
    term = np.eye(len(M))
    for m in range(1, terms):
        term = term @ M / m
        out = out + term
    return out


def random_diffeo(rng, d=2, eps=0.4, steps=64):
    chart = ChartSpec(rng.random(d))
    return localized_diffeo(chart, build_generator(d, rng.uniform(-eps, eps, n_params(d))), steps=steps)


def in_ball(rng, d, lo, hi):
    u = rng.standard_normal(d)
    return u / np.linalg.norm(u) * rng.uniform(lo, hi)


def test_affine_exp_matches_power_series():
    rng = np.random.default_rng(0)
    for d in (2, 3):
        gen = build_generator(d, rng.uniform(-0.4, 0.4, n_params(d)))
        bp = rng.uniform(-0.4, 0.4, d)
        X = np.zeros((d + 1, d + 1))
        X[:d, :d] = gen.A_prime
        X[:d, d] = bp
        E = series_exp(X)
        m = affine_exp(gen.A_prime, bp)
        assert np.allclose(m.A, E[:d, :d], atol=1e-14)
        assert np.allclose(m.b, E[:d, d], atol=1e-14)
        assert abs(np.linalg.det(m.A) - 1.0) < 1e-13  # trace free generator


def test_translation_log_inverts_exponential():
    rng = np.random.default_rng(1)
    for d in (2, 3, 4):
        gen = build_generator(d, rng.uniform(-0.45, 0.45, n_params(d)))
        bp = affine_exp_inverse_translation(gen.A_prime, gen.b)
        assert np.allclose(affine_exp(gen.A_prime, bp).b, gen.b, atol=1e-14)
    A = rng.uniform(-0.4, 0.4, (50, 3, 3))
    b = rng.uniform(-0.4, 0.4, (50, 3))
    batched = translation_logs(A, b)
    for i in range(50):
        assert np.allclose(batched[i], affine_exp_inverse_translation(A[i], b[i]), atol=1e-14)


def test_translation_log_rejects_singular_series():
    # V(Z) is singular when Z has eigenvalue 2 pi i
    Z = np.array([[0.0, -2 * np.pi], [2 * np.pi, 0.0]])
    with pytest.raises(IllConditionedGeneratorError):
        affine_exp_inverse_translation(Z, np.ones(2))


def test_toral_map_validation():
    with pytest.raises(ParameterError):
        AffineTorusMap(np.array([[2, 0], [0, 1]]))
    with pytest.raises(ParameterError):
        AffineTorusMap(np.array([[1.5, 0], [0, 1]]))
    cat = AffineTorusMap(np.array([[2, 1], [1, 1]]), np.array([0.5, 0.0]))
    y, J = cat.apply_with_jacobian(np.array([0.3, 0.4]))
    assert np.allclose(y, [0.5, 0.7])
    assert np.array_equal(J, [[2, 1], [1, 1]])
    assert AffineTorusMap.identity(3).is_identity


def test_support_is_untouched_exactly():
    rng = np.random.default_rng(2)
    for _ in range(30):
        g = random_diffeo(rng)
        for y in rng.random((30, 2)):
            if np.linalg.norm(chart_forward(g.chart, y)) >= g.bump.r_out:
                out, J = g.apply_with_jacobian(y)
                assert np.array_equal(out, y) and np.array_equal(J, np.eye(2))


def test_plateau_matches_closed_form_when_trajectory_stays_affine():
    rng = np.random.default_rng(3)
    checked = 0
    for _ in range(200):
        g = random_diffeo(rng)
        z = in_ball(rng, 2, 0.0, 1.0)
        if plateau_trajectory_radius(g.gen.A_prime, g.b_prime, z) > g.bump.r_in - 0.01:
            continue
        exact = affine_exp(g.gen.A_prime, g.b_prime)(z)
        # plateau map has translation b_a and matrix exp(A')
        assert np.allclose(exact, affine_exp(g.gen.A_prime, np.zeros(2)).A @ z + g.gen.b, atol=1e-14)
        got = chart_forward(g.chart, g.apply(chart_back(g.chart, z)))
        assert np.abs(got - exact).max() <= 1e-8
        checked += 1
    assert checked > 150


def test_trajectory_radius_oracle():
    # pure rotation field: the trajectory stays on its circle
    A = np.array([[0.0, -1.0], [1.0, 0.0]])
    assert abs(plateau_trajectory_radius(A, np.zeros(2), np.array([0.7, 0.0])) - 0.7) < 1e-12
    # pure translation: the radius grows to |z + b|
    r = plateau_trajectory_radius(np.zeros((2, 2)), np.array([0.5, 0.0]), np.array([0.2, 0.0]))
    assert abs(r - 0.7) < 1e-12


def test_jacobian_matches_central_differences():
    rng = np.random.default_rng(4)
    h = 1e-6
    for d in (2, 3):
        for _ in range(20):
            g = random_diffeo(rng, d)
            y = chart_back(g.chart, in_ball(rng, d, 0.0, 2.0))
            _, J = g.apply_with_jacobian(y)
            J_fd = np.column_stack([torus_delta(g.apply(y - h * e), g.apply(y + h * e)) / (2 * h) for e in np.eye(d)])
            assert np.abs(J - J_fd).max() <= 1e-5


def test_rk4_agrees_with_adaptive_reference():
    """The integrated map against a tight-tolerance adaptive solve of the same field."""
    rng = np.random.default_rng(5)
    for _ in range(10):
        g = random_diffeo(rng)
        z0 = in_ball(rng, 2, 1.0, 2.0)
        sol = solve_ivp(lambda t, z: bumped_field(g.gen, g.b_prime, g.bump, z)[0], (0, 1), z0,
                        method="DOP853", rtol=1e-12, atol=1e-13)
        got = chart_forward(g.chart, g.apply(chart_back(g.chart, z0)))
        assert np.abs(got - sol.y[:, -1]).max() < 1e-5


def test_volume_error_converges_at_fourth_order():
    rng = np.random.default_rng(6)
    a = rng.uniform(-0.4, 0.4, 5)
    chart = ChartSpec(np.array([0.5, 0.5]))
    pts = [chart_back(chart, in_ball(rng, 2, 1.25, 2.0)) for _ in range(200)]
    errs = []
    for steps in (64, 128, 256):
        g = localized_diffeo(chart, build_generator(2, a), steps=steps)
        errs.append(max(abs(np.linalg.det(g.apply_with_jacobian(y)[1]) - 1) for y in pts))
    assert errs[0] / errs[1] > 10 and errs[1] / errs[2] > 10
    assert errs[2] < 1e-7


def test_inverse_undoes_the_flow():
    rng = np.random.default_rng(7)
    g = random_diffeo(rng, steps=256)
    for y in rng.random((20, 2)):
        back = g.inverse().apply(g.apply(y))
        assert np.abs(torus_delta(y, back)).max() < 1e-7


def test_chain_rule_for_compositions():
    rng = np.random.default_rng(8)
    f0 = AffineTorusMap(np.array([[2, 1], [1, 1]]))
    for _ in range(10):
        g, k = random_diffeo(rng), random_diffeo(rng)
        y = rng.random(2)
        y1, J1 = f0.apply_with_jacobian(y)
        y2, J2 = g.apply_with_jacobian(y1)
        y3, J3 = k.apply_with_jacobian(y2)
        out, J = compose(f0, g, k).apply_with_jacobian(y)
        assert np.array_equal(out, y3)
        assert np.abs(J - J3 @ J2 @ J1).max() <= 1e-10 * np.abs(J).max()
    with pytest.raises(ParameterError):
        compose(random_diffeo(rng, 2), random_diffeo(rng, 3))


def test_bump_cutoff_beyond_chart_is_rejected():
    from uexpand.flow import LocalizedDiffeo

    gen = build_generator(2, np.zeros(5))
    with pytest.raises(ParameterError):
        LocalizedDiffeo(ChartSpec(np.zeros(2)), gen, np.zeros(2), BumpProfile(1.25, 2.1))
