"""Approximately uniform sampling from a bounded polytope ``rows @ x <= offsets``.

Two strategies: rejection from the bounding box (exactly uniform, efficient
only in low dimension) and a hit-and-run Markov chain (scales to the state
dimensions used here).  Both are deterministic for a fixed seed.
"""
from __future__ import annotations

import numpy as np

from .lp import BatchLp
from .template import chebyshev_center

BURN_IN = 10_000
_REJECTION_MAX_DIM = 3
_REJECTION_TRIES = 500


class SamplingError(RuntimeError):
    pass


def _bounding_box(rows: np.ndarray, offsets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = rows.shape[1]
    batch = BatchLp(a_ub=rows, b_ub=offsets)
    eye = np.eye(n)
    sols = batch.solve_many(np.vstack([eye, eye]), ["max"] * n + ["min"] * n)
    for s in sols:
        if s.status != "optimal":
            raise SamplingError(f"polytope bounding box LP ended {s.status}")
    hi = np.array([s.objective for s in sols[:n]])
    lo = np.array([s.objective for s in sols[n:]])
    return lo, hi


def _rejection(rows, offsets, n_samples, rng, lo, hi) -> np.ndarray | None:
    """Uniform rejection from the box; None if the acceptance rate is hopeless."""
    out = np.empty((n_samples, rows.shape[1]))
    have = 0
    for _ in range(_REJECTION_TRIES):
        draw = rng.uniform(lo, hi, size=(max(4 * n_samples, 64), rows.shape[1]))
        ok = draw[np.all(draw @ rows.T <= offsets + 1e-12, axis=1)]
        take = min(len(ok), n_samples - have)
        out[have : have + take] = ok[:take]
        have += take
        if have == n_samples:
            return out
    return None


def _hit_and_run(rows, offsets, n_samples, rng, start, burn_in) -> np.ndarray:
    n = rows.shape[1]
    x = np.array(start, dtype=float)
    out = np.empty((n_samples, n))
    for k in range(burn_in + n_samples):
        d = rng.normal(size=n)
        d /= np.linalg.norm(d)
        proj = rows @ d
        slack = offsets - rows @ x
        t_hi = np.inf
        t_lo = -np.inf
        pos = proj > 1e-14
        neg = proj < -1e-14
        if np.any(pos):
            t_hi = np.min(slack[pos] / proj[pos])
        if np.any(neg):
            t_lo = np.max(slack[neg] / proj[neg])
        if not np.isfinite(t_lo) or not np.isfinite(t_hi):
            raise SamplingError("polytope is unbounded along a sampled direction")
        if t_hi > t_lo:
            x = x + rng.uniform(t_lo, t_hi) * d
        if k >= burn_in:
            out[k - burn_in] = x
    return out


def sample_polytope(
    rows,
    offsets,
    n_samples: int,
    seed: int = 0,
    burn_in: int = BURN_IN,
    method: str = "auto",
) -> np.ndarray:
    """Draw ``n_samples`` points from {x : rows @ x <= offsets}.

    ``method`` is one of ``auto`` (rejection in dimension <= 3, hit-and-run
    otherwise), ``rejection``, or ``hitandrun``.
    """
    rows = np.asarray(rows, dtype=float)
    offsets = np.asarray(offsets, dtype=float)
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    if method not in ("auto", "rejection", "hitandrun"):
        raise ValueError(f"unknown sampling method {method!r}")
    rng = np.random.default_rng(seed)
    n = rows.shape[1]
    if method in ("auto", "rejection") and (method == "rejection" or n <= _REJECTION_MAX_DIM):
        lo, hi = _bounding_box(rows, offsets)
        got = _rejection(rows, offsets, n_samples, rng, lo, hi)
        if got is not None:
            return got
        if method == "rejection":
            raise SamplingError(
                "rejection sampling acceptance rate too low; use hit-and-run"
            )
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms == 0.0):
        raise SamplingError("zero row in polytope description")
    center, radius = chebyshev_center(rows / norms[:, None], offsets / norms)
    if radius <= 0.0:
        raise SamplingError("polytope has empty interior")
    return _hit_and_run(rows, offsets, n_samples, rng, center, burn_in)
