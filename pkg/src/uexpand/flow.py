"""Diffeomorphisms of the torus: affine exponentials, localized flows, composition.

A localized diffeo g = chart^-1 o psi o chart, where psi is the time-one map
of the bumped field, integrated with classical RK4 together with its
variational equation.  Tangent blocks are pushed through the same RK4 stages,
so the returned Jacobian is the exact derivative of the discrete map.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import sqrt

import numba
import numpy as np
from scipy.linalg import expm

from .errors import IllConditionedGeneratorError, IntegratorFailure, ParameterError
from .fields import (
    AffineGenerator,
    BumpProfile,
    ChartSpec,
    _field,
    chart_forward,
    default_stream_coeffs,
    wrap,
)

DEFAULT_STEPS = 64
V_COND_MAX = 1e8


@dataclass(frozen=True, eq=False)
class AffineMap:
    """z -> A z + b on R^d."""

    A: np.ndarray
    b: np.ndarray

    def __call__(self, z):
        return self.A @ np.asarray(z, dtype=float) + self.b


def _phi_matrix(A_prime):
    """V(Z) = sum_m Z^m / (m+1)!, read off exp([[Z, I], [0, 0]])."""
    d = A_prime.shape[0]
    big = np.zeros((2 * d, 2 * d))
    big[:d, :d] = A_prime
    big[:d, d:] = np.eye(d)
    return expm(big)[:d, d:]


def affine_exp(A_prime, b_prime) -> AffineMap:
    """Time-one map of z' = A'z + b', i.e. the affine group exponential."""
    A_prime = np.asarray(A_prime, dtype=float)
    b_prime = np.asarray(b_prime, dtype=float)
    d = A_prime.shape[0]
    aug = np.zeros((d + 1, d + 1))
    aug[:d, :d] = A_prime
    aug[:d, d] = b_prime
    E = expm(aug)
    return AffineMap(E[:d, :d], E[:d, d])


def affine_exp_inverse_translation(A_prime, b) -> np.ndarray:
    """Solve V(A') b' = b, so that affine_exp(A', b') has translation b."""
    V = _phi_matrix(np.asarray(A_prime, dtype=float))
    sv = np.linalg.svd(V, compute_uv=False)
    # V(0) = I, so small singular values are small in absolute terms too
    if not sv[-1] * V_COND_MAX > max(1.0, sv[0]):
        raise IllConditionedGeneratorError("translation series V(A') is nearly singular")
    return np.linalg.solve(V, np.asarray(b, dtype=float))


def translation_logs(A_primes, bs, terms: int = 24) -> np.ndarray:
    """Batched affine_exp_inverse_translation by truncated series.

    Generators here have entries below 1, so 24 terms of V are far past
    double precision.
    """
    A_primes = np.asarray(A_primes, dtype=float)
    d = A_primes.shape[-1]
    V = np.broadcast_to(np.eye(d), A_primes.shape).copy()
    term = V.copy()
    for m in range(1, terms):
        term = term @ A_primes / (m + 1)
        V += term
    return np.linalg.solve(V, np.asarray(bs, dtype=float)[..., None])[..., 0]


@dataclass(frozen=True, eq=False)
class AffineTorusMap:
    """y -> L y + t (mod 1) with integer L, |det L| = 1."""

    L: np.ndarray
    t: np.ndarray = None

    def __post_init__(self):
        L = np.asarray(self.L)
        if L.ndim != 2 or L.shape[0] != L.shape[1]:
            raise ParameterError("toral map matrix must be square")
        if not np.all(np.round(L) == L):
            raise ParameterError("toral map matrix must be integer")
        L = np.round(L).astype(np.int64)
        if abs(round(np.linalg.det(L))) != 1:
            raise ParameterError("toral map matrix must have determinant +-1")
        t = np.zeros(L.shape[0]) if self.t is None else np.asarray(self.t, dtype=float)
        if t.shape != (L.shape[0],):
            raise ParameterError("translation has the wrong length")
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls, d: int) -> "AffineTorusMap":
        return cls(np.eye(d, dtype=np.int64))

    @property
    def d(self) -> int:
        return self.L.shape[0]

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.L, np.eye(self.d)) and not np.any(self.t))

    def apply(self, y):
        if self.is_identity:
            return np.asarray(y, dtype=float).copy()
        return wrap(self.L @ np.asarray(y, dtype=float) + self.t)

    def apply_with_jacobian(self, y):
        return self.apply(y), self.L.astype(float)


@numba.njit(cache=True, nogil=True)
def _flow_point(z, V, Ap, bp, r_in, r_out, c_lin, c_const, steps, h):
    """RK4 for z' = Y(z), V' = DY(z) V over `steps` steps of size h, in place."""
    d = z.shape[0]
    m = V.shape[1]
    val = np.empty(d)
    jac = np.empty((d, d))
    kz = np.empty((4, d))
    kV = np.empty((4, d, m))
    zs = np.empty(d)
    Vs = np.empty((d, m))
    coef = (0.5, 0.5, 1.0)
    for _ in range(steps):
        for stage in range(4):
            if stage == 0:
                for i in range(d):
                    zs[i] = z[i]
                    for c in range(m):
                        Vs[i, c] = V[i, c]
            else:
                a = coef[stage - 1] * h
                for i in range(d):
                    zs[i] = z[i] + a * kz[stage - 1, i]
                    for c in range(m):
                        Vs[i, c] = V[i, c] + a * kV[stage - 1, i, c]
            _field(zs, Ap, bp, r_in, r_out, c_lin, c_const, val, jac)
            for i in range(d):
                kz[stage, i] = val[i]
                for c in range(m):
                    acc = 0.0
                    for j in range(d):
                        acc += jac[i, j] * Vs[j, c]
                    kV[stage, i, c] = acc
        h6 = h / 6.0
        for i in range(d):
            z[i] += h6 * (kz[0, i] + 2.0 * kz[1, i] + 2.0 * kz[2, i] + kz[3, i])
            for c in range(m):
                V[i, c] += h6 * (kV[0, i, c] + 2.0 * kV[1, i, c] + 2.0 * kV[2, i, c] + kV[3, i, c])


@numba.njit(cache=True, nogil=True)
def _apply_localized(points, tangents, active, centers, Aps, bps, scale, r_in, r_out, c_lin, c_const, steps, h):
    """Apply a localized diffeo row by row; returns the number of non-finite rows.

    Rows with active[b] False, or lying outside the cutoff ball of their
    chart, are left untouched.
    """
    B, d = points.shape
    m = tangents.shape[2]
    z = np.empty(d)
    V = np.empty((d, m))
    bad = 0
    for b in range(B):
        if not active[b]:
            continue
        rr = 0.0
        for i in range(d):
            delta = points[b, i] - centers[b, i] + 0.5
            delta = delta - np.floor(delta) - 0.5
            z[i] = delta / scale
            rr += z[i] * z[i]
        if sqrt(rr) >= r_out:
            continue
        for i in range(d):
            for c in range(m):
                V[i, c] = tangents[b, i, c]
        _flow_point(z, V, Aps[b], bps[b], r_in, r_out, c_lin, c_const, steps, h)
        finite = True
        for i in range(d):
            if not np.isfinite(z[i]):
                finite = False
            y = centers[b, i] + scale * z[i]
            y = y - np.floor(y)
            if y >= 1.0:
                y = 0.0
            points[b, i] = y
            for c in range(m):
                tangents[b, i, c] = V[i, c]
                if not np.isfinite(V[i, c]):
                    finite = False
        if not finite:
            bad += 1
    return bad


def apply_localized_batch(points, tangents, active, centers, A_primes, b_primes, *, scale, bump, steps,
                          coeffs=None, reverse=False, workers: int = 1):
    """In-place batched application of localized diffeos (one per row).

    Rows are independent, so splitting them across threads does not change a
    single bit of the result.
    """
    d = points.shape[1]
    c_lin, c_const = coeffs if coeffs is not None else default_stream_coeffs(d)
    h = (-1.0 if reverse else 1.0) / steps
    args = (float(scale), float(bump.r_in), float(bump.r_out), float(c_lin), float(c_const), int(steps), h)
    B = points.shape[0]
    if workers <= 1 or B < 2 * workers:
        bad = _apply_localized(points, tangents, active, centers, A_primes, b_primes, *args)
    else:
        bounds = np.linspace(0, B, workers + 1).astype(int)

        def run(lo, hi):
            return _apply_localized(points[lo:hi], tangents[lo:hi], active[lo:hi], centers[lo:hi],
                                    A_primes[lo:hi], b_primes[lo:hi], *args)

        with ThreadPoolExecutor(workers) as pool:
            bad = sum(pool.map(run, bounds[:-1], bounds[1:]))
    if bad:
        raise IntegratorFailure(f"{bad} trajectories became non-finite")


@dataclass(frozen=True, eq=False)
class LocalizedDiffeo:
    """g_x^a: the flow of the bumped field, conjugated into the chart at x."""

    chart: ChartSpec
    gen: AffineGenerator
    b_prime: np.ndarray
    bump: BumpProfile = field(default_factory=BumpProfile)
    steps: int = DEFAULT_STEPS
    reverse: bool = False
    coeffs: tuple = None

    def __post_init__(self):
        if self.steps < 1:
            raise ParameterError("integrator needs at least one step")
        if self.bump.r_out > self.chart.outer_radius:
            raise ParameterError("bump cutoff exceeds the chart radius")

    @property
    def d(self) -> int:
        return self.gen.d

    def inverse(self) -> "LocalizedDiffeo":
        """Reverse-time flow of the same field (inverse up to integrator error)."""
        return LocalizedDiffeo(self.chart, self.gen, self.b_prime, self.bump, self.steps,
                               not self.reverse, self.coeffs)

    def _run(self, y, tangent):
        pts = np.array(y, dtype=float).reshape(1, self.d)
        tan = np.ascontiguousarray(np.asarray(tangent, dtype=float).reshape(1, self.d, -1))
        apply_localized_batch(
            pts, tan, np.ones(1, dtype=bool), self.chart.center.reshape(1, -1),
            np.ascontiguousarray(self.gen.A_prime).reshape(1, self.d, self.d), self.b_prime.reshape(1, -1),
            scale=self.chart.scale, bump=self.bump, steps=self.steps, coeffs=self.coeffs, reverse=self.reverse,
        )
        return pts[0], tan[0]

    def apply(self, y):
        return self._run(y, np.zeros((self.d, 0)))[0]

    def apply_with_jacobian(self, y):
        return self._run(y, np.eye(self.d))

    def in_support(self, y) -> bool:
        return bool(np.linalg.norm(chart_forward(self.chart, y)) < self.bump.r_out)


def localized_diffeo(chart: ChartSpec, gen: AffineGenerator, bump: BumpProfile = None,
                     steps: int = DEFAULT_STEPS, coeffs=None) -> LocalizedDiffeo:
    """Build g_x^a with b' chosen so the plateau map has translation b_a."""
    bump = bump or BumpProfile()
    b_prime = affine_exp_inverse_translation(gen.A_prime, gen.b)
    b_prime.setflags(write=False)
    return LocalizedDiffeo(chart, gen, b_prime, bump, steps, False, coeffs)


@dataclass(frozen=True, eq=False)
class ComposedDiffeo:
    """Factors applied left to right: factors[0] first."""

    factors: tuple = ()
    dim: int = None

    @property
    def d(self) -> int:
        if self.factors:
            return self.factors[0].d
        if self.dim is None:
            raise ParameterError("empty composition without a dimension")
        return self.dim

    def apply(self, y):
        y = np.asarray(y, dtype=float).copy()
        for f in self.factors:
            y = f.apply(y)
        return y

    def apply_with_jacobian(self, y):
        y = np.asarray(y, dtype=float).copy()
        J = np.eye(len(y))
        for f in self.factors:
            y, Jf = f.apply_with_jacobian(y)
            J = Jf @ J
        return y, J


def compose(*factors, d: int = None) -> ComposedDiffeo:
    flat = []
    for f in factors:
        flat.extend(f.factors if isinstance(f, ComposedDiffeo) else [f])
    dims = {f.d for f in flat}
    if len(dims) > 1:
        raise ParameterError(f"inconsistent dimensions in composition: {sorted(dims)}")
    return ComposedDiffeo(tuple(flat), d)


def plateau_trajectory_radius(A_prime, b_prime, z, samples: int = 256) -> float:
    """Largest |z(t)|, t in [0, 1], along the closed-form affine trajectory from z."""
    step = affine_exp(np.asarray(A_prime) / samples, np.asarray(b_prime) / samples)
    cur = np.asarray(z, dtype=float)
    rmax = float(np.linalg.norm(cur))
    for _ in range(samples):
        cur = step(cur)
        rmax = max(rmax, float(np.linalg.norm(cur)))
    return rmax
