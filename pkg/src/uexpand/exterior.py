"""Exterior powers and Grassmannian numerics.

A k-dimensional subspace of R^d is carried around as an orthonormal frame
(``GrassmannPoint``).  The norm of the decomposable k-vector spanned by a set
of vectors is the square root of their Gram determinant; everything here works
with its logarithm.
"""
from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np

from .errors import DegenerateVolumeError, ParameterError

ORTHONORMAL_TOL = 1e-12
SUBSPACE_TOL = 1e-9
# |R_ii| / |v_i| below this means v_i lies (numerically) in the span of v_1..v_{i-1}
DEGENERATE_RTOL = 1e-13


@dataclass(frozen=True, eq=False)
class GrassmannPoint:
    """A point of Gr^k(R^d) stored as a d x k frame with orthonormal columns."""

    frame: np.ndarray

    def __post_init__(self):
        F = np.array(self.frame, dtype=float)
        if F.ndim != 2:
            raise ParameterError("frame must be a d x k matrix")
        d, k = F.shape
        if not 1 <= k <= d - 1:
            raise ParameterError(f"subspace dimension k={k} outside 1..{d - 1}")
        err = np.abs(F.T @ F - np.eye(k)).max()
        if err > ORTHONORMAL_TOL:
            raise ParameterError(f"frame is not orthonormal (error {err:.2e})")
        F.setflags(write=False)
        object.__setattr__(self, "frame", F)

    @property
    def dim_ambient(self) -> int:
        return self.frame.shape[0]

    @property
    def dim_subspace(self) -> int:
        return self.frame.shape[1]

    def projector(self) -> np.ndarray:
        return self.frame @ self.frame.T

    def same_subspace(self, other: "GrassmannPoint", tol: float = SUBSPACE_TOL) -> bool:
        if other.frame.shape != self.frame.shape:
            return False
        return bool(np.linalg.norm(self.projector() - other.projector()) <= tol)

    def complement(self) -> np.ndarray:
        """Orthonormal d x (d-k) frame of the orthogonal complement."""
        d, k = self.frame.shape
        Q, _ = np.linalg.qr(self.frame, mode="complete")
        return Q[:, k:]

    @classmethod
    def from_vectors(cls, vectors) -> "GrassmannPoint":
        """Span of the columns of ``vectors`` (d x k)."""
        V = np.asarray(vectors, dtype=float)
        if V.ndim == 1:
            V = V[:, None]
        return cls(_orthonormalize(V))


def _positive_qr(V):
    Q, R = np.linalg.qr(V)
    signs = np.where(np.diag(R) < 0, -1.0, 1.0)
    return Q * signs, R * signs[:, None]


def _orthonormalize(V):
    Q, R = _positive_qr(V)
    norms = np.linalg.norm(V, axis=0)
    diag = np.abs(np.diag(R))
    if not np.all(np.isfinite(R)) or np.any(diag <= DEGENERATE_RTOL * norms) or np.any(norms == 0):
        raise DegenerateVolumeError("vectors are linearly dependent")
    return Q


def compound(M, k: int) -> np.ndarray:
    """k-th compound matrix: all k x k minors, index sets in lexicographic order."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ParameterError("compound needs a square matrix")
    d = M.shape[0]
    if not 1 <= k <= d:
        raise ParameterError(f"k={k} outside 1..{d}")
    idx = np.array(list(combinations(range(d), k)))
    blocks = M[idx[:, None, :, None], idx[None, :, None, :]]
    return np.linalg.det(blocks)


def plucker(P: GrassmannPoint) -> np.ndarray:
    """Plücker coordinates of the frame (k x k minors of the rows), unit norm."""
    F = P.frame
    d, k = F.shape
    idx = np.array(list(combinations(range(d), k)))
    return np.linalg.det(F[idx])


def gram_log_volume(vectors, rtol: float = DEGENERATE_RTOL) -> float:
    """Half the log of the Gram determinant of the given vectors.

    ``vectors`` is a sequence of k vectors in R^d (rows).  Raises
    ``DegenerateVolumeError`` when they are linearly dependent.
    """
    V = np.atleast_2d(np.asarray(vectors, dtype=float)).T
    d, k = V.shape
    if not 1 <= k <= d:
        raise ParameterError(f"need between 1 and {d} vectors, got {k}")
    return _log_volume_columns(V, rtol)


def _log_volume_columns(V, rtol=DEGENERATE_RTOL):
    if not np.all(np.isfinite(V)):
        raise DegenerateVolumeError("non-finite vectors")
    R = np.linalg.qr(V, mode="r")
    diag = np.abs(np.diag(R))
    norms = np.linalg.norm(V, axis=0)
    if np.any(norms == 0) or np.any(diag <= rtol * norms):
        raise DegenerateVolumeError("Gram determinant vanishes")
    return float(np.sum(np.log(diag)))


def batch_log_volume(V, rtol: float = DEGENERATE_RTOL):
    """Log k-volumes of a batch of d x k blocks ``V`` of shape (B, d, k).

    Returns ``(logvol, ok)``; rows with a degenerate or non-finite block get
    ``ok == False`` and ``logvol == nan``.
    """
    V = np.asarray(V, dtype=float)
    finite = np.all(np.isfinite(V), axis=(1, 2))
    Vs = np.where(finite[:, None, None], V, 0.0)
    R = np.linalg.qr(Vs, mode="r")
    diag = np.abs(np.diagonal(R, axis1=1, axis2=2))
    norms = np.linalg.norm(Vs, axis=1)
    ok = finite & np.all(norms > 0, axis=1) & np.all(diag > rtol * norms, axis=1)
    with np.errstate(divide="ignore"):
        out = np.where(ok, np.sum(np.log(np.where(ok[:, None], diag, 1.0)), axis=1), np.nan)
    return out, ok


def log_expansion(M, P: GrassmannPoint) -> float:
    """log of the k-volume of M applied to an orthonormal frame of P.

    Measured relative to the frame's own (unit, up to rounding) volume, so the
    identity gives exactly 0.
    """
    M = np.asarray(M, dtype=float)
    if M.shape != (P.dim_ambient, P.dim_ambient):
        raise ParameterError("matrix and subspace dimensions differ")
    return _log_volume_columns(M @ P.frame) - _log_volume_columns(P.frame)


def transport(M, P: GrassmannPoint) -> GrassmannPoint:
    """The image subspace M(P), re-orthonormalized."""
    M = np.asarray(M, dtype=float)
    if M.shape != (P.dim_ambient, P.dim_ambient):
        raise ParameterError("matrix and subspace dimensions differ")
    return GrassmannPoint(_orthonormalize(M @ P.frame))


def random_grassmann(rng: np.random.Generator, d: int, k: int) -> GrassmannPoint:
    """Haar-uniform k-plane in R^d."""
    if not 1 <= k <= d - 1:
        raise ParameterError(f"k={k} outside 1..{d - 1}")
    while True:
        G = rng.standard_normal((d, k))
        try:
            return GrassmannPoint(_orthonormalize(G))
        except DegenerateVolumeError:
            continue


def grassmann_coordinates(P: GrassmannPoint, W) -> np.ndarray:
    """Affine-chart coordinates of span(W) around P.

    Returns the (d-k) x k matrix X with span(W) = span(F + F_perp X), where F
    is P's frame and F_perp an orthonormal complement.  X = 0 at P.
    """
    W = np.asarray(W, dtype=float)
    F = P.frame
    C = P.complement()
    top = F.T @ W
    return (C.T @ W) @ np.linalg.inv(top)


def grassmann_move(P: GrassmannPoint, X) -> GrassmannPoint:
    """Point with chart coordinates X around P (inverse of grassmann_coordinates)."""
    X = np.asarray(X, dtype=float)
    return GrassmannPoint(_orthonormalize(P.frame + P.complement() @ X))


def compound_dim(d: int, k: int) -> int:
    return comb(d, k)
