"""Lyapunov spectra along random orbits and Monte-Carlo expansion integrals."""
from dataclasses import dataclass

import numpy as np

from .errors import NumericalCollapseError, ParameterError
from .exterior import GrassmannPoint, batch_log_volume
from .walk import WalkMeasure, WordDraws, draw_words, push_forward, run_orbit

COLLAPSE_LOG = -700.0


@dataclass(frozen=True, eq=False)
class LyapunovEstimate:
    spectrum: np.ndarray
    n_steps: int
    transient_discard: int
    seed: int
    x0: np.ndarray
    running: np.ndarray = None  # (checkpoint_step, lambda_1..lambda_d) rows

    @property
    def total(self) -> float:
        return float(np.sum(self.spectrum))


def lyapunov_spectrum(measure: WalkMeasure, x0, n_steps: int, discard: int = 100,
                      rng: np.random.Generator = None, seed: int = 0, checkpoints: int = 20) -> LyapunovEstimate:
    """Benettin/QR estimate of the full spectrum along one random orbit.

    The first ``discard`` steps only align the frame.  ``rng`` defaults to a
    generator seeded with ``seed``; the seed is echoed in the estimate.
    """
    if not n_steps > discard >= 0:
        raise ParameterError("need n_steps > discard >= 0")
    rng = rng if rng is not None else np.random.default_rng(seed)
    draws = draw_words(measure, rng, 1, n_steps)
    _, logs, _ = run_orbit(measure, x0, draws, n_frames=measure.d)
    if np.any(logs < COLLAPSE_LOG):
        raise NumericalCollapseError("QR diagonal collapsed to zero")
    kept = logs[discard:]
    spectrum = np.sort(kept.mean(axis=0))[::-1]
    n_kept = len(kept)
    marks = np.unique(np.linspace(1, n_kept, min(checkpoints, n_kept)).astype(int))
    partial = np.cumsum(kept, axis=0)[marks - 1] / marks[:, None]
    running = np.column_stack([marks + discard, -np.sort(-partial, axis=1)])
    return LyapunovEstimate(spectrum, n_steps, discard, seed, np.asarray(x0, dtype=float), running)


def top_exponent_k(estimate: LyapunovEstimate, k: int) -> float:
    """Top exponent on the k-th exterior power: sum of the k largest exponents."""
    d = len(estimate.spectrum)
    if not 1 <= k <= d - 1:
        raise ParameterError(f"k={k} outside 1..{d - 1}")
    return float(np.sum(estimate.spectrum[:k]))


@dataclass(frozen=True, eq=False)
class ExpansionEstimate:
    mean: float
    std_error: float
    n_samples: int
    N: int
    point: np.ndarray
    subspace: GrassmannPoint
    n_failed: int = 0


def log_expansion_samples(measure: WalkMeasure, points, frames, draws: WordDraws, workers: int = 1):
    """log k-volume growth of each frame under its word.

    ``points`` (B, d) and ``frames`` (B, d, k) are matched row by row with the
    words in ``draws``.  Returns ``(values, ok)``; degenerate rows are
    flagged, not raised.  The log-volume of the starting frame is subtracted,
    so a word that leaves the frame untouched scores exactly zero.
    """
    _, tan = push_forward(measure, draws, points, frames, workers=workers)
    after, ok = batch_log_volume(tan)
    before, ok0 = batch_log_volume(np.asarray(frames, dtype=float).reshape(tan.shape))
    return after - before, ok & ok0


def summarize(values, ok):
    """Mean, standard error and failure count over the usable samples."""
    good = np.asarray(values)[np.asarray(ok)]
    n = len(good)
    if n == 0:
        return float("nan"), float("nan"), len(ok)
    mean = float(np.mean(good))
    se = float(np.std(good, ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
    return mean, se, int(len(ok) - n)


def expected_log_expansion(measure: WalkMeasure, x, P: GrassmannPoint, N: int, n_samples: int,
                           rng: np.random.Generator, workers: int = 1) -> ExpansionEstimate:
    """Monte-Carlo estimate of the mean log-expansion of P at x after N random steps."""
    if N < 1 or n_samples < 2:
        raise ParameterError("need N >= 1 and n_samples >= 2")
    if P.dim_ambient != measure.d:
        raise ParameterError("subspace lives in the wrong dimension")
    draws = draw_words(measure, rng, n_samples, N)
    points = np.broadcast_to(np.asarray(x, dtype=float), (n_samples, measure.d))
    frames = np.broadcast_to(P.frame, (n_samples,) + P.frame.shape)
    values, ok = log_expansion_samples(measure, points, frames, draws, workers)
    mean, se, failed = summarize(values, ok)
    return ExpansionEstimate(mean, se, n_samples, N, np.asarray(x, dtype=float), P, failed)
