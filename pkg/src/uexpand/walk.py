"""The random walk measure: covering charts, mixture sampling, words, discretization.

A draw from the measure is f0 with probability p0, otherwise g_{x_i}^a o f0
with probability p_i and a uniform on [-eps, eps]^{d'} (or uniform over the
centered grid of the discretized measure).  Draws are stored as plain arrays
(``WordDraws``) so whole batches of words can be pushed through the compiled
integrator at once; ``sample`` and ``sample_word`` wrap the same draws in
diffeomorphism objects.
"""
from dataclasses import dataclass, field, replace
from itertools import product
from math import ceil, sqrt

import numba
import numpy as np
from scipy.linalg import expm

from .errors import BudgetError, IntegratorFailure, ParameterError
from .fields import BumpProfile, ChartSpec, build_generator, generator_matrix, n_params
from .flow import (
    DEFAULT_STEPS,
    _flow_point,
    AffineTorusMap,
    ComposedDiffeo,
    LocalizedDiffeo,
    apply_localized_batch,
    compose,
    translation_logs,
)

DEFAULT_MAX_ATOMS = 10**7
ORBIT_CHUNK = 1 << 16


def build_cover(d: int, chart_scale: float, outer_radius: float = 2.0) -> np.ndarray:
    """Regular grid whose points are within s/2 of every torus point."""
    if d < 2:
        raise ParameterError("the construction needs d >= 2")
    if not (chart_scale > 0 and chart_scale * outer_radius < 0.5):
        raise ParameterError("chart scale s must satisfy 0 < s*R < 1/2")
    n = ceil(sqrt(d) / chart_scale - 1e-12)
    axis = np.arange(n) / n
    return np.array(list(product(axis, repeat=d)))


def covering_radius(d: int, n_per_axis: int) -> float:
    return sqrt(d) / (2 * n_per_axis)


@dataclass(frozen=True, eq=False)
class WalkMeasure:
    d: int
    f0: AffineTorusMap
    base_points: np.ndarray
    weights: np.ndarray
    epsilon: float = 0.4
    chart_scale: float = 0.2
    outer_radius: float = 2.0
    bump: BumpProfile = field(default_factory=BumpProfile)
    steps: int = DEFAULT_STEPS
    grid_per_axis: int = None
    coeffs: tuple = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        pts = np.asarray(self.base_points, dtype=float).reshape(-1, self.d)
        if self.d < 2:
            raise ParameterError("the construction needs d >= 2")
        if w.shape != (len(pts) + 1,):
            raise ParameterError("need one weight for f0 plus one per base point")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ParameterError("weights must be non-negative and sum to 1")
        if not 0 < self.epsilon < 0.5:
            raise ParameterError(f"epsilon = {self.epsilon} violates 0 < epsilon < 1/2")
        if not (self.chart_scale > 0 and self.chart_scale * self.outer_radius < 0.5):
            raise ParameterError("chart scale s must satisfy 0 < s*R < 1/2")
        if self.bump.r_out > self.outer_radius:
            raise ParameterError("bump cutoff exceeds the chart radius")
        if self.f0.d != self.d:
            raise ParameterError("f0 has the wrong dimension")
        if self.grid_per_axis is not None and self.grid_per_axis < 1:
            raise ParameterError("grid_per_axis must be >= 1")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "base_points", pts)

    @property
    def n_params(self) -> int:
        return n_params(self.d)

    @property
    def n_charts(self) -> int:
        return len(self.base_points)

    @property
    def is_discretized(self) -> bool:
        return self.grid_per_axis is not None

    def chart(self, i: int) -> ChartSpec:
        return ChartSpec(self.base_points[i], self.chart_scale, self.outer_radius)

    def grid_values(self) -> np.ndarray:
        m = self.grid_per_axis
        return -self.epsilon + (2 * np.arange(m) + 1) * self.epsilon / m

    def atom_count(self) -> int:
        if not self.is_discretized:
            raise ParameterError("continuous measure has no atoms")
        return self.n_charts * self.grid_per_axis ** self.n_params + 1


def build_measure(d: int = 2, *, epsilon: float = 0.4, chart_scale: float = 0.2, f0: AffineTorusMap = None,
                  p0: float = None, bump: BumpProfile = None, steps: int = DEFAULT_STEPS,
                  outer_radius: float = 2.0) -> WalkMeasure:
    """The walk measure on a regular covering grid.

    By default p0 = 1/(j+1) and the chart weights are equal; passing p0
    keeps the remaining mass uniform over the charts (p0 = 1 gives the point
    mass at f0).
    """
    pts = build_cover(d, chart_scale, outer_radius)
    j = len(pts)
    if p0 is None:
        p0 = 1.0 / (j + 1)
    if not 0 <= p0 <= 1:
        raise ParameterError("p0 must lie in [0, 1]")
    weights = np.concatenate([[p0], np.full(j, (1.0 - p0) / j)])
    weights /= weights.sum()
    return WalkMeasure(d, f0 or AffineTorusMap.identity(d), pts, weights, epsilon, chart_scale, outer_radius,
                       bump or BumpProfile(), steps)


def dirac(f0: AffineTorusMap, **kwargs) -> WalkMeasure:
    """Point mass at f0."""
    return build_measure(f0.d, f0=f0, p0=1.0, **kwargs)


def discretize(measure: WalkMeasure, grid_per_axis: int, max_atoms: int = DEFAULT_MAX_ATOMS) -> WalkMeasure:
    """Replace each parameter cube by its centered grid_per_axis^{d'} grid."""
    if grid_per_axis < 1:
        raise ParameterError("grid_per_axis must be >= 1")
    atoms = measure.n_charts * grid_per_axis ** measure.n_params + 1
    if atoms > max_atoms:
        raise BudgetError(f"discretized support has {atoms} atoms, above the cap of {max_atoms}")
    return replace(measure, grid_per_axis=grid_per_axis)


def containment_check(measure: WalkMeasure, rng: np.random.Generator, n_samples: int = 4096):
    """Sampled ‖A_a‖_op + |b_a| against the chart radius R.

    Below R guarantees that the affine map sends B_1 into B_R.  Returns
    ``(max_value, violating_fraction)``; this bound is sufficient, not
    necessary, and is reported rather than enforced.
    """
    d = measure.d
    a = rng.uniform(-measure.epsilon, measure.epsilon, size=(n_samples, measure.n_params))
    A = expm(generator_matrix(d, a))
    vals = np.linalg.norm(A, ord=2, axis=(1, 2)) + np.linalg.norm(a[:, :d], axis=1)
    return float(vals.max()), float(np.mean(vals >= measure.outer_radius))


@dataclass(frozen=True)
class WordDraws:
    """Random words: branch[b, n] (0 means f0 alone) and parameters a[b, n]."""

    branch: np.ndarray
    a: np.ndarray

    @property
    def n_words(self) -> int:
        return self.branch.shape[0]

    @property
    def length(self) -> int:
        return self.branch.shape[1]

    def take(self, rows) -> "WordDraws":
        return WordDraws(self.branch[rows], self.a[rows])


def draw_words(measure: WalkMeasure, rng: np.random.Generator, n_words: int, length: int) -> WordDraws:
    """Draw n_words independent words of the given length, row by row."""
    if length < 1:
        raise ParameterError("word length must be >= 1")
    branch = rng.choice(measure.n_charts + 1, size=(n_words, length), p=measure.weights)
    shape = (n_words, length, measure.n_params)
    if measure.is_discretized:
        a = measure.grid_values()[rng.integers(0, measure.grid_per_axis, size=shape)]
    else:
        a = rng.uniform(-measure.epsilon, measure.epsilon, size=shape)
    return WordDraws(branch, a)


def push_forward(measure: WalkMeasure, draws: WordDraws, points, tangents=None, workers: int = 1):
    """Apply each word to its own point and tangent block.

    ``points`` is (B, d), ``tangents`` (B, d, m) or None.  Returns new arrays;
    tangents are pushed by the chain rule along the word.
    """
    pts = np.array(points, dtype=float, copy=True).reshape(-1, measure.d)
    B = pts.shape[0]
    if tangents is None:
        tan = np.zeros((B, measure.d, 0))
    else:
        tan = np.array(tangents, dtype=float, copy=True).reshape(B, measure.d, -1)
    if draws.n_words != B:
        raise ParameterError("one word per point is required")
    f0 = measure.f0
    L = f0.L.astype(float)
    for n in range(draws.length):
        if not f0.is_identity:
            pts = np.mod(pts @ L.T + f0.t, 1.0)
            pts[pts >= 1.0] = 0.0
            tan = np.einsum("ij,bjc->bic", L, tan)
        br = draws.branch[:, n]
        active = br > 0
        if not np.any(active):
            continue
        A_primes = generator_matrix(measure.d, draws.a[:, n])
        b_primes = np.zeros((B, measure.d))
        b_primes[active] = translation_logs(A_primes[active], draws.a[active, n, :measure.d])
        centers = measure.base_points[np.maximum(br - 1, 0)]
        tan = np.ascontiguousarray(tan)
        apply_localized_batch(pts, tan, active, np.ascontiguousarray(centers), np.ascontiguousarray(A_primes),
                              b_primes, scale=measure.chart_scale, bump=measure.bump, steps=measure.steps,
                              coeffs=measure.coeffs, workers=workers)
    return pts, tan


def _factor(measure: WalkMeasure, branch: int, a) -> ComposedDiffeo:
    if branch == 0:
        return compose(measure.f0)
    gen = build_generator(measure.d, a)
    b_prime = translation_logs(gen.A_prime[None], gen.b[None])[0]
    b_prime.setflags(write=False)
    g = LocalizedDiffeo(measure.chart(branch - 1), gen, b_prime, measure.bump, measure.steps, False, measure.coeffs)
    return compose(measure.f0, g)


def sample(measure: WalkMeasure, rng: np.random.Generator) -> ComposedDiffeo:
    """One draw from the measure, as the composition (f0, then g)."""
    draws = draw_words(measure, rng, 1, 1)
    return _factor(measure, int(draws.branch[0, 0]), draws.a[0, 0])


@dataclass(frozen=True, eq=False)
class WordSample:
    factors: tuple
    composed: ComposedDiffeo


def word_from_draws(measure: WalkMeasure, draws: WordDraws, row: int = 0) -> WordSample:
    factors = tuple(_factor(measure, int(draws.branch[row, n]), draws.a[row, n]) for n in range(draws.length))
    return WordSample(factors, compose(*factors, d=measure.d))


def sample_word(measure: WalkMeasure, N: int, rng: np.random.Generator) -> WordSample:
    """N independent draws, composed so the first draw acts first."""
    return word_from_draws(measure, draw_words(measure, rng, 1, N))


@numba.njit(cache=True, nogil=True)
def _orbit(x, Q, L, t, f0_identity, active, centers, Aps, bps, scale, r_in, r_out, c_lin, c_const, steps, h,
           logs, positions):
    """Advance one orbit over len(active) steps, in place on x and Q.

    With m = Q.shape[1] > 0 the tangent frame is re-orthonormalized after
    every step and log R_ii is written to logs[n]; positions[n] receives the
    point after step n.  Returns the index of the first non-finite step, or -1.
    """
    d = x.shape[0]
    m = Q.shape[1]
    z = np.empty(d)
    tmp = np.empty(d)
    Vt = np.empty((d, m))
    for n in range(active.shape[0]):
        if not f0_identity:
            for i in range(d):
                acc = t[i]
                for j in range(d):
                    acc += L[i, j] * x[j]
                tmp[i] = acc - np.floor(acc)
                if tmp[i] >= 1.0:
                    tmp[i] = 0.0
            for c in range(m):
                for i in range(d):
                    acc = 0.0
                    for j in range(d):
                        acc += L[i, j] * Q[j, c]
                    Vt[i, c] = acc
            for i in range(d):
                x[i] = tmp[i]
                for c in range(m):
                    Q[i, c] = Vt[i, c]
        if active[n]:
            rr = 0.0
            for i in range(d):
                delta = x[i] - centers[n, i] + 0.5
                delta = delta - np.floor(delta) - 0.5
                z[i] = delta / scale
                rr += z[i] * z[i]
            if np.sqrt(rr) < r_out:
                _flow_point(z, Q, Aps[n], bps[n], r_in, r_out, c_lin, c_const, steps, h)
                for i in range(d):
                    y = centers[n, i] + scale * z[i]
                    y = y - np.floor(y)
                    if y >= 1.0:
                        y = 0.0
                    x[i] = y
        for i in range(d):
            if not np.isfinite(x[i]):
                return n
            positions[n, i] = x[i]
        if m > 0:
            for i in range(d):
                for c in range(m):
                    if not np.isfinite(Q[i, c]):
                        return n
            q, r = np.linalg.qr(Q)
            for c in range(m):
                sgn = 1.0 if r[c, c] >= 0.0 else -1.0
                logs[n, c] = np.log(abs(r[c, c]))
                for i in range(d):
                    Q[i, c] = q[i, c] * sgn
    return -1


def run_orbit(measure: WalkMeasure, x0, draws: WordDraws, n_frames: int = 0, record: bool = False):
    """Follow a single random orbit along the word in ``draws`` (one row).

    Returns ``(x, logs, positions)``: the final point, the per-step
    log-diagonal of the QR re-orthonormalization of an ``n_frames`` tangent
    frame (shape (n, n_frames)), and the visited points if ``record``.
    """
    d = measure.d
    if draws.n_words != 1:
        raise ParameterError("an orbit follows exactly one word")
    n_total = draws.length
    x = np.array(x0, dtype=float).reshape(d)
    Q = np.ascontiguousarray(np.eye(d)[:, :n_frames])
    logs = np.zeros((n_total, n_frames))
    positions = np.zeros((n_total if record else ORBIT_CHUNK, d))
    c_lin, c_const = measure.coeffs if measure.coeffs is not None else (1.0 / d, 1.0 / (d - 1))
    L = measure.f0.L.astype(float)
    for lo in range(0, n_total, ORBIT_CHUNK):
        hi = min(lo + ORBIT_CHUNK, n_total)
        br = draws.branch[0, lo:hi]
        active = br > 0
        A_primes = np.ascontiguousarray(generator_matrix(d, draws.a[0, lo:hi]))
        b_primes = np.zeros((hi - lo, d))
        if np.any(active):
            b_primes[active] = translation_logs(A_primes[active], draws.a[0, lo:hi][active, :d])
        centers = np.ascontiguousarray(measure.base_points[np.maximum(br - 1, 0)])
        pos = positions[lo:hi] if record else positions[: hi - lo]
        bad = _orbit(x, Q, L, measure.f0.t, measure.f0.is_identity, active, centers, A_primes, b_primes,
                     float(measure.chart_scale), float(measure.bump.r_in), float(measure.bump.r_out),
                     float(c_lin), float(c_const), int(measure.steps), 1.0 / measure.steps,
                     logs[lo:hi], pos)
        if bad >= 0:
            raise IntegratorFailure(f"orbit became non-finite at step {lo + bad}")
    return x, logs, (positions if record else None)
