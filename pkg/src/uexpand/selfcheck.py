"""Runtime invariant suite.

Each check draws from its own derived stream, so checks are independent of
each other and of their order.  ``steps`` and ``coeffs`` override the
integrator step count and the stream-matrix coefficients, which makes the
suite usable as a mutation harness: a wrong coefficient must trip the
divergence checks, a coarse integrator must trip the volume check.
"""
from dataclasses import asdict, dataclass, field, replace
from math import log, sqrt

import numpy as np

from .certify import CertifyBudget, certify_uniform_expansion, transitivity_rank_check
from .exterior import (
    compound,
    gram_log_volume,
    log_expansion,
    random_grassmann,
    transport,
)
from .fields import (
    affine_field,
    BumpProfile,
    ChartSpec,
    build_generator,
    bumped_field,
    chart_back,
    chart_forward,
    n_params,
    stream_matrix,
    torus_delta,
)
from .flow import (
    DEFAULT_STEPS,
    AffineTorusMap,
    LocalizedDiffeo,
    affine_exp,
    affine_exp_inverse_translation,
    compose,
    plateau_trajectory_radius,
)
from .lyapunov import lyapunov_spectrum
from .seeding import derive_rng
from .walk import build_measure, dirac, discretize, draw_words, push_forward

CAT = np.array([[2, 1], [1, 1]])
CAT_EXPONENT = log((3 + sqrt(5)) / 2)
PLATEAU_MARGIN = 0.01


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""


@dataclass
class SelfcheckSummary:
    seed: int
    steps: int
    checks: list = field(default_factory=list)

    @property
    def n_failed(self) -> int:
        return sum(not c.passed for c in self.checks)

    @property
    def passed(self) -> bool:
        return self.n_failed == 0

    def get(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "steps": self.steps, "n_failed": self.n_failed,
                "checks": [asdict(c) for c in self.checks]}


def _coeffs(coeffs, d):
    """coeffs is None, a fixed (c_lin, c_const) pair, or a function of d returning one."""
    return coeffs(d) if callable(coeffs) else coeffs


def _result(name, value, tol, detail=""):
    value = float(value)
    return CheckResult(name, bool(np.isfinite(value) and value <= tol), value, tol, detail)


def _rel(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-300)


def _random_sl(rng, d):
    M = rng.standard_normal((d, d))
    det = np.linalg.det(M)
    if det < 0:
        M[0] *= -1
    return M / abs(det) ** (1.0 / d)


# exterior ------------------------------------------------------------------

def check_compound_multiplicativity(rng):
    worst = 0.0
    for d in (6, 10):
        A, B = rng.standard_normal((2, d, d))
        for k in range(1, d):
            worst = max(worst, _rel(compound(A @ B, k), compound(A, k) @ compound(B, k)))
    return _result("compound_multiplicativity", worst, 1e-10)


def check_compound_determinant(rng):
    worst = 0.0
    for d in range(2, 7):
        M = rng.standard_normal((d, d))
        worst = max(worst, abs(compound(M, d)[0, 0] - np.linalg.det(M)) / abs(np.linalg.det(M)))
    return _result("compound_determinant", worst, 1e-10)


def check_gram_compound(rng):
    worst = 0.0
    for d in (3, 4, 6):
        for k in range(1, d):
            V = rng.standard_normal((d, k))
            # norm of the k-vector = norm of the column of the compound of [V | 0]
            W = np.zeros((d, d))
            W[:, :k] = V
            minors = compound(W, k)[:, 0]
            worst = max(worst, abs(gram_log_volume(V.T) - log(np.linalg.norm(minors))))
    return _result("gram_compound_agreement", worst, 1e-10)


def check_transport_additivity(rng):
    worst = 0.0
    for d in (2, 3, 5):
        for k in range(1, d):
            A, B = rng.standard_normal((2, d, d))
            P = random_grassmann(rng, d, k)
            lhs = log_expansion(B @ A, P)
            rhs = log_expansion(A, P) + log_expansion(B, transport(A, P))
            worst = max(worst, abs(lhs - rhs))
    return _result("transport_additivity", worst, 1e-10)


def check_area_preservation(rng):
    worst = 0.0
    for _ in range(20):
        M = _random_sl(rng, 2)
        P = random_grassmann(rng, 2, 1)
        image = transport(M, P)
        normal = image.complement()[:, 0]
        # ‖Mv‖ times the height of M v_perp over the image line is det M = 1
        height = abs(normal @ (M @ P.complement()[:, 0]))
        worst = max(worst, abs(log_expansion(M, P) + log(height)))
    return _result("area_preservation", worst, 1e-10)


def check_gram_symmetries(rng):
    worst = 0.0
    for _ in range(10):
        V = rng.standard_normal((3, 5))
        base = gram_log_volume(V)
        worst = max(worst, abs(gram_log_volume(V[rng.permutation(3)]) - base))
        c = rng.uniform(0.1, 10)
        W = V.copy()
        W[1] *= c
        worst = max(worst, abs(gram_log_volume(W) - base - log(c)))
    return _result("gram_permutation_scaling", worst, 1e-10)


# fields --------------------------------------------------------------------

def _generator(rng, d, eps=0.4):
    gen = build_generator(d, rng.uniform(-eps, eps, n_params(d)))
    return gen, affine_exp_inverse_translation(gen.A_prime, gen.b)


def _in_ball(rng, d, r_lo, r_hi, n):
    u = rng.standard_normal((n, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = (r_lo**d + (r_hi**d - r_lo**d) * rng.random(n)) ** (1.0 / d)
    return u * r[:, None]


def check_trace_zero(rng):
    worst = 0.0
    for d in (2, 3, 4):
        for _ in range(200):
            gen = build_generator(d, rng.uniform(-0.5, 0.5, n_params(d)))
            worst = max(worst, abs(np.trace(gen.A_prime)))
    return _result("trace_zero", worst, 0.0)


def check_stream_antisymmetry(rng, coeffs):
    worst = 0.0
    for d in (2, 3):
        for _ in range(50):
            gen, bp = _generator(rng, d)
            S = stream_matrix(gen, bp, rng.uniform(-2, 2, d), _coeffs(coeffs, d))
            worst = max(worst, np.abs(S + S.T).max())
    return _result("stream_antisymmetry", worst, 0.0)


def check_stream_divergence(rng, coeffs, h=1e-5):
    worst = 0.0
    for d in (2, 3):
        for _ in range(50):
            gen, bp = _generator(rng, d)
            co = _coeffs(coeffs, d)
            z = rng.uniform(-2, 2, d)
            div = np.zeros(d)
            for j in range(d):
                e = np.zeros(d)
                e[j] = h
                div += (stream_matrix(gen, bp, z + e, co)[:, j] - stream_matrix(gen, bp, z - e, co)[:, j]) / (2 * h)
            worst = max(worst, np.abs(div - (gen.A_prime @ z + bp)).max())
    return _result("stream_divergence", worst, 1e-6, "100 random sites, d in {2, 3}")


def check_field_plateau_cutoff(rng, coeffs):
    bump = BumpProfile()
    plateau = cutoff = 0.0
    for d in (2, 3):
        for _ in range(50):
            gen, bp = _generator(rng, d)
            z = _in_ball(rng, d, 0.0, bump.r_in, 1)[0]
            val, jac = bumped_field(gen, bp, bump, z, _coeffs(coeffs, d))
            plateau = max(plateau, np.abs(val - affine_field(gen, bp, z)).max(), np.abs(jac - gen.A_prime).max())
            z = _in_ball(rng, d, bump.r_out, 3.0, 1)[0]
            val, jac = bumped_field(gen, bp, bump, z, _coeffs(coeffs, d))
            cutoff = max(cutoff, np.abs(val).max(), np.abs(jac).max())
    return [_result("field_plateau", plateau, 0.0), _result("field_cutoff", cutoff, 0.0)]


def _fd_field_jacobian(gen, bp, bump, z, coeffs, h):
    d = len(z)
    J = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        J[:, j] = (bumped_field(gen, bp, bump, z + e, coeffs)[0] - bumped_field(gen, bp, bump, z - e, coeffs)[0]) / (2 * h)
    return J


def check_field_divergence_jacobian(rng, coeffs, h=1e-5):
    bump = BumpProfile()
    div_err = jac_err = 0.0
    for d in (2, 3):
        for _ in range(50):
            gen, bp = _generator(rng, d)
            z = _in_ball(rng, d, 0.0, bump.r_out, 1)[0]
            J_fd = _fd_field_jacobian(gen, bp, bump, z, _coeffs(coeffs, d), h)
            _, J = bumped_field(gen, bp, bump, z, _coeffs(coeffs, d))
            div_err = max(div_err, abs(np.trace(J_fd)))
            jac_err = max(jac_err, np.abs(J - J_fd).max())
    return [_result("field_divergence", div_err, 1e-6), _result("field_jacobian", jac_err, 1e-5)]


# flow ----------------------------------------------------------------------

def _diffeo(rng, d, steps, coeffs, eps=0.4):
    chart = ChartSpec(rng.random(d))
    gen, bp = _generator(rng, d, eps)
    return LocalizedDiffeo(chart, gen, bp, BumpProfile(), steps, False, _coeffs(coeffs, d))


def check_flow_volume(rng, steps, coeffs, n_gen=5, n_points=1000):
    """|det J - 1| over points of the support ball, where the flow actually acts."""
    worst = 0.0
    for _ in range(n_gen):
        g = _diffeo(rng, 2, steps, coeffs)
        for z in _in_ball(rng, 2, 0.0, g.bump.r_out, n_points):
            _, J = g.apply_with_jacobian(chart_back(g.chart, z))
            worst = max(worst, abs(np.linalg.det(J) - 1.0))
    return _result("flow_volume", worst, 1e-8, f"{n_gen} generators x {n_points} points, {steps} RK4 steps")


def check_flow_plateau(rng, steps, coeffs, n=1000):
    """Agreement with the closed-form map on B_1, for trajectories that stay on the plateau."""
    worst = 0.0
    excluded = 0
    for _ in range(n):
        g = _diffeo(rng, 2, steps, coeffs)
        z = _in_ball(rng, 2, 0.0, 1.0, 1)[0]
        if plateau_trajectory_radius(g.gen.A_prime, g.b_prime, z) > g.bump.r_in - PLATEAU_MARGIN:
            excluded += 1
            continue
        exact = affine_exp(g.gen.A_prime, g.b_prime)(z)
        got = chart_forward(g.chart, g.apply(chart_back(g.chart, z)))
        worst = max(worst, np.abs(got - exact).max())
    return _result("flow_plateau", worst, 1e-8,
                   f"{excluded} of {n} samples left the plateau along the affine trajectory and were skipped")


def check_flow_support(rng, steps, coeffs):
    worst = 0.0
    for _ in range(50):
        g = _diffeo(rng, 2, steps, coeffs)
        ys = rng.random((40, 2))
        for y in ys[np.linalg.norm(torus_delta(g.chart.center, ys), axis=1) >= g.chart.scale * g.bump.r_out]:
            worst = max(worst, np.abs(g.apply(y) - y).max())
    return _result("flow_support", worst, 0.0)


def check_flow_jacobian(rng, steps, coeffs, h=1e-6):
    worst = 0.0
    for _ in range(50):
        g = _diffeo(rng, 2, steps, coeffs)
        y = chart_back(g.chart, _in_ball(rng, 2, 0.0, g.bump.r_out, 1)[0])
        _, J = g.apply_with_jacobian(y)
        J_fd = np.empty((2, 2))
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            J_fd[:, j] = torus_delta(g.apply(y - e), g.apply(y + e)) / (2 * h)
        worst = max(worst, np.abs(J - J_fd).max())
    return _result("flow_jacobian", worst, 1e-5)


def check_chain_rule(rng, steps, coeffs):
    worst = 0.0
    for _ in range(20):
        g, k = _diffeo(rng, 2, steps, coeffs), _diffeo(rng, 2, steps, coeffs)
        y = rng.random(2)
        y1, Jg = g.apply_with_jacobian(y)
        _, Jk = k.apply_with_jacobian(y1)
        _, J = compose(g, k).apply_with_jacobian(y)
        worst = max(worst, _rel(J, Jk @ Jg))
    return _result("chain_rule", worst, 1e-10)


# walk ----------------------------------------------------------------------

def check_walk_reproducible(seed, steps, coeffs):
    mu = replace(build_measure(2, steps=steps), coeffs=_coeffs(coeffs, 2))
    a = draw_words(mu, derive_rng(seed, "selfcheck-walk", 3), 64, 2)
    b = draw_words(mu, derive_rng(seed, "selfcheck-walk", 3), 64, 2)
    pts = derive_rng(seed, "selfcheck-walk-points").random((64, 2))
    frames = np.broadcast_to(np.eye(2), (64, 2, 2))
    p1, t1 = push_forward(mu, a, pts, frames, workers=1)
    p2, t2 = push_forward(mu, b, pts, frames, workers=3)
    same = np.array_equal(a.a, b.a) and np.array_equal(p1, p2) and np.array_equal(t1, t2)
    return _result("walk_reproducible", 0.0 if same else 1.0, 0.0, "same stream, 1 vs 3 workers")


def check_discrete_support(seed):
    mu = discretize(build_measure(2), 3)
    draws = draw_words(mu, derive_rng(seed, "selfcheck-discrete"), 32, 4)
    excess = max(0.0, np.abs(draws.a).max() - mu.epsilon)
    grid_ok = np.isin(draws.a, mu.grid_values()).all()
    return _result("discrete_support", excess if grid_ok else np.inf, 0.0)


# lyapunov ------------------------------------------------------------------

def check_lyapunov(seed, steps, coeffs):
    cat = lyapunov_spectrum(dirac(AffineTorusMap(CAT)), [0.1, 0.2], 10_000, seed=seed)
    ident = lyapunov_spectrum(dirac(AffineTorusMap.identity(2)), [0.1, 0.2], 10_000, seed=seed)
    mu = replace(build_measure(2, steps=steps), coeffs=_coeffs(coeffs, 2))
    est = lyapunov_spectrum(mu, [0.1, 0.2], 10_000, rng=derive_rng(seed, "selfcheck-lyapunov"), seed=seed)
    return [
        _result("lyapunov_cat", np.abs(cat.spectrum - [CAT_EXPONENT, -CAT_EXPONENT]).max(), 1e-3),
        _result("lyapunov_identity", np.abs(ident.spectrum).max(), 0.0),
        _result("lyapunov_sum", abs(est.total), 2e-3, f"spectrum {est.spectrum.tolist()}"),
    ]


# certify -------------------------------------------------------------------

def check_rank(rng, steps, n=3):
    bad = 0
    total = 0
    for d in (2, 3):
        for k in range(1, d):
            for _ in range(n):
                chart = ChartSpec(rng.random(d))
                y = chart_back(chart, _in_ball(rng, d, 0.0, 0.45, 1)[0])
                rep = transitivity_rank_check(chart, y, random_grassmann(rng, d, k), steps=steps)
                bad += not rep.full_rank
                total += 1
    return _result("rank_check", bad, 0.0, f"{total} (y, P) pairs")


def check_identity_calibration(seed):
    budget = CertifyBudget(sweep_size=16, mc_samples=8, refine_iters=1)
    rep = certify_uniform_expansion(dirac(AffineTorusMap.identity(2)), 1, 2, budget, seed=seed)
    return _result("identity_calibration", max(abs(rep.C_estimate), abs(rep.std_error)), 0.0)


def selfcheck(seed: int = 7, steps: int = DEFAULT_STEPS, coeffs=None) -> SelfcheckSummary:
    """Run every invariant check; the summary passes only if all of them do."""
    summary = SelfcheckSummary(seed, steps)
    add = summary.checks.append
    ext = summary.checks.extend

    def rng(label):
        return derive_rng(seed, "selfcheck-" + label)

    add(check_compound_multiplicativity(rng("compound")))
    add(check_compound_determinant(rng("det")))
    add(check_gram_compound(rng("gram")))
    add(check_transport_additivity(rng("transport")))
    add(check_area_preservation(rng("area")))
    add(check_gram_symmetries(rng("gram-sym")))
    add(check_trace_zero(rng("trace")))
    add(check_stream_antisymmetry(rng("antisym"), coeffs))
    add(check_stream_divergence(rng("stream-div"), coeffs))
    ext(check_field_plateau_cutoff(rng("plateau"), coeffs))
    ext(check_field_divergence_jacobian(rng("field-fd"), coeffs))
    add(check_flow_volume(rng("volume"), steps, coeffs))
    add(check_flow_plateau(rng("flow-plateau"), steps, coeffs))
    add(check_flow_support(rng("support"), steps, coeffs))
    add(check_flow_jacobian(rng("flow-fd"), steps, coeffs))
    add(check_chain_rule(rng("chain"), steps, coeffs))
    add(check_walk_reproducible(seed, steps, coeffs))
    add(check_discrete_support(seed))
    ext(check_lyapunov(seed, steps, coeffs))
    add(check_rank(rng("rank"), steps))
    add(check_identity_calibration(seed))
    return summary

