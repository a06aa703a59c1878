"""Torus charts, the affine generator and its localized divergence-free field.

The manifold is the flat torus T^d = [0,1)^d.  A chart around a base point is
a translation followed by a scaling, so it carries divergence-free fields to
divergence-free fields.  Inside the chart the affine field X(z) = A'z + b' is
cut off with a radial bump f through the antisymmetric stream matrix S(z),
whose row divergences reproduce X:

    Y_i(z) = f(|z|) X_i(z) + sum_j S_ij(z) d_j f(|z|)

which is exactly divergence free, equals X where f == 1 and vanishes where
f == 0.
"""
from dataclasses import dataclass
from math import exp, sqrt

import numba
import numpy as np

from .errors import OutOfChartError, ParameterError


DIAG_QUANTUM = 2.0**-40


def n_params(d: int) -> int:
    """Number of generator parameters, (a_1..a_d, a_{d+2}..a_{d^2+d})."""
    return d * d + d - 1


def wrap(y):
    """Reduce coordinates into [0, 1)."""
    y = np.mod(np.asarray(y, dtype=float), 1.0)
    # np.mod can return exactly 1.0 for tiny negative input
    return np.where(y >= 1.0, 0.0, y)


def torus_delta(x, y):
    """Shortest signed displacement y - x on the torus, componentwise in [-1/2, 1/2)."""
    return np.mod(np.asarray(y, float) - np.asarray(x, float) + 0.5, 1.0) - 0.5


def torus_distance(x, y) -> float:
    return float(np.linalg.norm(torus_delta(x, y), axis=-1))


def torus_point(coords) -> np.ndarray:
    p = np.asarray(coords, dtype=float)
    if p.ndim != 1 or not np.all(np.isfinite(p)):
        raise ParameterError("a torus point is a finite 1-d coordinate vector")
    return wrap(p)


@dataclass(frozen=True, eq=False)
class ChartSpec:
    center: np.ndarray
    scale: float = 0.2
    outer_radius: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "center", torus_point(self.center))
        if self.outer_radius <= 1:
            raise ParameterError("chart outer radius must exceed 1")
        if not (self.scale > 0 and self.scale * self.outer_radius < 0.5):
            raise ParameterError("chart scale s must satisfy 0 < s*R < 1/2")

    @property
    def d(self) -> int:
        return self.center.shape[0]


def chart_forward(chart: ChartSpec, y) -> np.ndarray:
    return torus_delta(chart.center, y) / chart.scale


def chart_back(chart: ChartSpec, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if np.linalg.norm(z) >= chart.outer_radius:
        raise OutOfChartError(f"|z| = {np.linalg.norm(z):.4g} is not below R = {chart.outer_radius}")
    return wrap(chart.center + chart.scale * z)


@dataclass(frozen=True, eq=False)
class AffineGenerator:
    d: int
    a: np.ndarray
    A_prime: np.ndarray
    b: np.ndarray


def generator_matrix(d: int, a) -> np.ndarray:
    """Trace-free matrices A'_a for parameter vectors of shape (..., d^2+d-1).

    Row-major entries after the (1,1) slot are a_{d+2}, ..., a_{d^2+d}; the
    (1,1) slot is minus the sum of the remaining diagonal.  For d >= 3 the
    free diagonal entries are rounded to multiples of 2^-40 first, so the
    floating point trace is exactly zero in any summation order.
    """
    a = np.asarray(a, dtype=float)
    A = np.zeros(a.shape[:-1] + (d * d,))
    A[..., 1:] = a[..., d:]
    A = A.reshape(a.shape[:-1] + (d, d))
    diag = np.arange(1, d)
    if d >= 3:
        A[..., diag, diag] = np.round(A[..., diag, diag] / DIAG_QUANTUM) * DIAG_QUANTUM
    A[..., 0, 0] = -np.sum(A[..., diag, diag], axis=-1)
    return A


def build_generator(d: int, a) -> AffineGenerator:
    if d < 2:
        raise ParameterError("dimension must be at least 2")
    a = np.asarray(a, dtype=float)
    if a.shape != (n_params(d),):
        raise ParameterError(f"expected {n_params(d)} parameters for d={d}, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ParameterError("generator parameters must be finite")
    A = generator_matrix(d, a)
    b = a[:d].copy()
    for arr in (a, A, b):
        arr.setflags(write=False)
    return AffineGenerator(d, a, A, b)


def default_stream_coeffs(d: int):
    return 1.0 / d, 1.0 / (d - 1)


def stream_matrix(gen: AffineGenerator, b_prime, z, coeffs=None) -> np.ndarray:
    """Antisymmetric S(z) with sum_j d_j S_ij = (A'z + b')_i."""
    z = np.asarray(z, dtype=float)
    b_prime = np.asarray(b_prime, dtype=float)
    c_lin, c_const = coeffs if coeffs is not None else default_stream_coeffs(gen.d)
    w = gen.A_prime @ z
    return c_lin * (np.outer(w, z) - np.outer(z, w)) + c_const * (np.outer(b_prime, z) - np.outer(z, b_prime))


def affine_field(gen: AffineGenerator, b_prime, z) -> np.ndarray:
    """X(z) = A'z + b', summed in the same order as the compiled field."""
    out = np.empty(gen.d)
    for i in range(gen.d):
        acc = 0.0
        for j in range(gen.d):
            acc += float(gen.A_prime[i, j]) * float(z[j])
        out[i] = acc + float(b_prime[i])
    return out


@dataclass(frozen=True)
class BumpProfile:
    """Smooth radial cutoff, 1 on [0, r_in] and 0 on [r_out, inf)."""

    r_in: float = 1.25
    r_out: float = 2.0

    def __post_init__(self):
        if not 0 < self.r_in < self.r_out:
            raise ParameterError("bump needs 0 < r_in < r_out")

    def value(self, r):
        return np.vectorize(lambda t: _bump(t, self.r_in, self.r_out)[0])(r)

    def derivative(self, r):
        return np.vectorize(lambda t: _bump(t, self.r_in, self.r_out)[1])(r)


@numba.njit(cache=True, nogil=True)
def _bump(r, r_in, r_out):
    # f = u / (u + w), u = h(r_out - r), w = h(r - r_in), h(t) = exp(-1/t)
    if r <= r_in:
        return 1.0, 0.0, 0.0
    if r >= r_out:
        return 0.0, 0.0, 0.0
    s = r_out - r
    t = r - r_in
    u = exp(-1.0 / s)
    w = exp(-1.0 / t)
    if u == 0.0:
        u1 = 0.0
        u2 = 0.0
    else:
        u1 = -u / (s * s)
        u2 = u * (1.0 / s**4 - 2.0 / s**3)
    if w == 0.0:
        w1 = 0.0
        w2 = 0.0
    else:
        w1 = w / (t * t)
        w2 = w * (1.0 / t**4 - 2.0 / t**3)
    D = u + w
    num = u1 * w - u * w1
    f1 = num / (D * D)
    f2 = ((u2 * w - u * w2) * D - 2.0 * num * (u1 + w1)) / (D * D * D)
    return u / D, f1, f2


@numba.njit(cache=True, nogil=True)
def _field(z, Ap, bp, r_in, r_out, c_lin, c_const, val, jac):
    """Bumped field value and Jacobian at z, written into val and jac."""
    d = z.shape[0]
    rr = 0.0
    for i in range(d):
        rr += z[i] * z[i]
    r = sqrt(rr)
    if r >= r_out:
        for i in range(d):
            val[i] = 0.0
            for k in range(d):
                jac[i, k] = 0.0
        return
    if r <= r_in:
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc += Ap[i, j] * z[j]
                jac[i, j] = Ap[i, j]
            val[i] = acc + bp[i]
        return
    f, f1, f2 = _bump(r, r_in, r_out)
    w = np.empty(d)
    g = np.empty(d)
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc += Ap[i, j] * z[j]
        w[i] = acc
        g[i] = f1 * z[i] / r
    zg = 0.0
    wg = 0.0
    bg = 0.0
    for i in range(d):
        zg += z[i] * g[i]
        wg += w[i] * g[i]
        bg += bp[i] * g[i]
    # A'^T g
    atg = np.empty(d)
    for k in range(d):
        acc = 0.0
        for j in range(d):
            acc += Ap[j, k] * g[j]
        atg[k] = acc
    inv_r = 1.0 / r
    for i in range(d):
        Xi = w[i] + bp[i]
        # sum_j S_ij g_j
        sg = c_lin * (w[i] * zg - wg * z[i]) + c_const * (bp[i] * zg - bg * z[i])
        val[i] = f * Xi + sg
        for k in range(d):
            # sum_j (d_k S_ij) g_j
            dsg = c_lin * (Ap[i, k] * zg + w[i] * g[k] - atg[k] * z[i]) + c_const * bp[i] * g[k]
            if i == k:
                dsg -= c_lin * wg + c_const * bg
            # sum_j S_ij d_j d_k f
            shk = 0.0
            for j in range(d):
                Sij = c_lin * (w[i] * z[j] - w[j] * z[i]) + c_const * (bp[i] * z[j] - bp[j] * z[i])
                Hjk = (f2 - f1 * inv_r) * z[j] * z[k] * inv_r * inv_r
                if j == k:
                    Hjk += f1 * inv_r
                shk += Sij * Hjk
            jac[i, k] = g[k] * Xi + f * Ap[i, k] + dsg + shk


def bumped_field(gen: AffineGenerator, b_prime, bump: BumpProfile, z, coeffs=None):
    """Value and Jacobian of the cut-off field at chart coordinate z."""
    z = np.asarray(z, dtype=float)
    c_lin, c_const = coeffs if coeffs is not None else default_stream_coeffs(gen.d)
    val = np.empty(gen.d)
    jac = np.empty((gen.d, gen.d))
    _field(z, np.ascontiguousarray(gen.A_prime), np.asarray(b_prime, dtype=float), float(bump.r_in), float(bump.r_out), float(c_lin), float(c_const), val, jac)
    return val, jac
