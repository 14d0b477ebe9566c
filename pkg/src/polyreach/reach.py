"""Template-polytope reachability for semi-linear DAE systems.

The reachable set at each step is tracked as ``{x : rows @ x <= offsets}``
for a stack of fixed (spectral) and dynamically updated facet normals.  One
step of the loop:

1. bound every differential variable over the current polytope (LPs),
2. bound the algebraic variables through the constraint relaxation (LPs),
3. build affine envelopes for the nonlinear terms over those boxes,
4. maximize each next-step facet functional over the relaxed one-step
   transition set (LPs) to get the next offsets,

with exit tests for certified contraction into an invariant neighborhood of
the equilibrium, for loss of the angle-width assumption the envelopes rely
on, and for horizon exhaustion.  All bound programs relax conservatively, so
every true trajectory of the sampled dynamics stays inside every reported
polytope.
"""
from __future__ import annotations

import csv
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .envelope import EnvelopeWidthError, Interval, build_term_envelopes
from .lp import BatchLp, LpProblem, solve_all
from .template import chebyshev_center, dynamic_update

CONTAINMENT_TOL = 1e-7

_MODES = ("fixed", "dynamic", "both")
_CENTER_MODES = ("simulate", "chebyshev")


class ReachError(RuntimeError):
    pass


@dataclass(frozen=True)
class ReachConfig:
    """Settings for one reachability run."""

    dt: float = 0.1
    horizon: float = 25.0
    template_mode: str = "both"
    epsilon: float | None = None
    angle_width_limit: float = math.pi / 2.0
    mc_samples: int = 500
    center_mode: str = "simulate"
    workers: int | None = None

    def __post_init__(self):
        if not (self.dt > 0.0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive and finite")
        if self.horizon < self.dt:
            raise ValueError("horizon must cover at least one step")
        if self.template_mode not in _MODES:
            raise ValueError(f"template_mode must be one of {_MODES}")
        if self.center_mode not in _CENTER_MODES:
            raise ValueError(f"center_mode must be one of {_CENTER_MODES}")
        if self.epsilon is not None and not 0.0 < self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in (0, 1]")
        if self.angle_width_limit <= 0.0:
            raise ValueError("angle_width_limit must be positive")
        if self.mc_samples < 0:
            raise ValueError("mc_samples must be nonnegative")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(eq=False)
class StepRecord:
    """Everything known about the reachable set at one recorded time."""

    step: int
    t: float
    rows: np.ndarray
    offsets: np.ndarray
    x_intervals: tuple[Interval, ...]
    y_intervals: dict[int, Interval]
    center: np.ndarray
    angle_spread: float | None
    wall_time: float = 0.0


@dataclass(eq=False)
class ReachTrace:
    """Step records plus the single final verdict of a run."""

    fixed_rows: np.ndarray
    n_fixed: int
    records: list[StepRecord] = field(default_factory=list)
    verdict: str | None = None
    verdict_step: int | None = None
    epsilon_used: float | None = None
    notes: list[str] = field(default_factory=list)

    def set_verdict(self, verdict: str, step: int) -> None:
        if self.verdict is not None:
            raise ReachError(f"verdict already set to {self.verdict!r}")
        self.verdict = verdict
        self.verdict_step = step


# ---------------------------------------------------------------------------
# variable bounds over the current polytope


def _require_optimal(sols, what: str):
    for s in sols:
        if s.status == "infeasible":
            raise ReachError(f"{what}: polytope is empty (upstream inconsistency)")
        if s.status != "optimal":
            raise ReachError(
                f"{what}: LP ended {s.status}; the facet normals do not bound "
                "the variable in every direction"
            )


def bound_x(rows, offsets, workers: int | None = None) -> tuple[Interval, ...]:
    """Per-coordinate interval hull of {x : rows @ x <= offsets}."""
    rows = np.asarray(rows, dtype=float)
    n = rows.shape[1]
    eye = np.eye(n)
    sols = BatchLp(a_ub=rows, b_ub=np.asarray(offsets, dtype=float)).solve_many(
        np.vstack([eye, eye]), ["max"] * n + ["min"] * n, workers=workers
    )
    _require_optimal(sols, "differential-variable bound")
    return tuple(
        Interval(sols[n + i].objective, sols[i].objective) for i in range(n)
    )


def term_input_y_indices(dae) -> tuple[int, ...]:
    """Algebraic variables that enter some nonlinear term (need boxes)."""
    idx = {
        ref.index
        for term in dae.terms
        for ref in term.inputs
        if ref.space == "y"
    }
    return tuple(sorted(idx))


def _lifted(dae, rows, offsets, x_intervals, y_intervals=None, closure_only=False):
    """Constraint block shared by the relaxed programs.

    Variables are ``z = [x, y, w]`` where ``w`` holds the lifted outputs of
    the included nonlinear terms.  Rows: the current polytope, the variable
    boxes the envelopes were built over, the envelope inequalities, and the
    algebraic equality with its lifted contribution.
    """
    n_x, n_y = dae.n_x, dae.n_y
    if closure_only:
        included = sorted(dae.g_closure)
    else:
        included = list(range(dae.n_terms))
        needed = term_input_y_indices(dae)
        missing = [i for i in needed if y_intervals is None or i not in y_intervals]
        if missing:
            raise ReachError(
                f"algebraic bounds missing for term-input variables {missing}"
            )
    envs = build_term_envelopes(
        dae, x_intervals, y_intervals, g_closure_only=closure_only
    )
    w_col = {idx: n_x + n_y + pos for pos, idx in enumerate(included)}
    n_cols = n_x + n_y + len(included)

    def zcol(ref) -> int:
        if ref.space == "x":
            return ref.index
        if ref.space == "y":
            return n_x + ref.index
        return w_col[ref.index]

    rows = np.asarray(rows, dtype=float)
    poly = np.zeros((rows.shape[0], n_cols))
    poly[:, :n_x] = rows
    blocks = [poly]
    rhs = [np.asarray(offsets, dtype=float)]

    box = np.zeros((2 * n_x, n_cols))
    box_rhs = np.empty(2 * n_x)
    for i, iv in enumerate(x_intervals):
        box[2 * i, i] = 1.0
        box_rhs[2 * i] = iv.hi
        box[2 * i + 1, i] = -1.0
        box_rhs[2 * i + 1] = -iv.lo
    blocks.append(box)
    rhs.append(box_rhs)

    if y_intervals:
        ybox = np.zeros((2 * len(y_intervals), n_cols))
        ybox_rhs = np.empty(2 * len(y_intervals))
        for r, (j, iv) in enumerate(sorted(y_intervals.items())):
            ybox[2 * r, n_x + j] = 1.0
            ybox_rhs[2 * r] = iv.hi
            ybox[2 * r + 1, n_x + j] = -1.0
            ybox_rhs[2 * r + 1] = -iv.lo
        blocks.append(ybox)
        rhs.append(ybox_rhs)

    for idx in included:
        env = envs[idx]
        k = env.coeffs.shape[0]
        block = np.zeros((k + 2, n_cols))
        for j, ref in enumerate(env.input_refs):
            block[:k, zcol(ref)] += env.coeffs[:, j]
        block[:k, w_col[idx]] += env.coeffs[:, -1]
        block[k, w_col[idx]] = 1.0
        block[k + 1, w_col[idx]] = -1.0
        blocks.append(block)
        rhs.append(
            np.concatenate(
                [env.rhs, [env.output_bounds.hi, -env.output_bounds.lo]]
            )
        )

    a_eq = np.zeros((n_y, n_cols))
    a_eq[:, :n_x] = dae.g_x
    a_eq[:, n_x : n_x + n_y] = dae.g_y
    for pos, idx in enumerate(included):
        a_eq[:, n_x + n_y + pos] = dae.s_g[:, idx]
    return (
        np.vstack(blocks),
        np.concatenate(rhs),
        a_eq,
        -dae.c_g.copy(),
        w_col,
        n_cols,
    )


def bound_y(
    dae,
    rows,
    offsets,
    x_intervals,
    indices: tuple[int, ...] | None = None,
    workers: int | None = None,
) -> dict[int, Interval]:
    """Interval bounds on algebraic variables through the constraint relaxation.

    Solved after the differential bounds because the lifted terms that close
    the algebraic equations need those boxes first.
    """
    a_ub, b_ub, a_eq, b_eq, _, n_cols = _lifted(
        dae, rows, offsets, x_intervals, closure_only=True
    )
    if indices is None:
        indices = tuple(range(dae.n_y))
    costs = np.zeros((2 * len(indices), n_cols))
    senses = []
    for r, j in enumerate(indices):
        costs[2 * r, dae.n_x + j] = 1.0
        costs[2 * r + 1, dae.n_x + j] = 1.0
        senses += ["max", "min"]
    sols = BatchLp(a_ub=a_ub, b_ub=b_ub, a_eq=a_eq, b_eq=b_eq).solve_many(
        costs, senses, workers=workers
    )
    _require_optimal(sols, "algebraic-variable bound")
    return {
        j: Interval(sols[2 * r + 1].objective, sols[2 * r].objective)
        for r, j in enumerate(indices)
    }


def angle_spreads(rows, offsets, layout, workers: int | None = None) -> np.ndarray:
    """Width of each rotor angle relative to the inertia-weighted mean angle.

    Absolute angles are frame-dependent (a slack-free network admits a common
    rotation), so the width assumption is checked in the inertial frame.
    """
    rows = np.asarray(rows, dtype=float)
    n = rows.shape[1]
    weights = layout.inertia / np.sum(layout.inertia)
    n_gen = len(layout.angle_of_gen)
    costs = np.zeros((2 * n_gen, n))
    senses = []
    for g in range(n_gen):
        c = np.zeros(n)
        c[layout.angle_of_gen[g]] += 1.0
        c[layout.angle_of_gen] -= weights
        costs[2 * g] = c
        costs[2 * g + 1] = c
        senses += ["max", "min"]
    sols = BatchLp(a_ub=rows, b_ub=np.asarray(offsets, dtype=float)).solve_many(
        costs, senses, workers=workers
    )
    _require_optimal(sols, "angle-spread bound")
    return np.array(
        [sols[2 * g].objective - sols[2 * g + 1].objective for g in range(n_gen)]
    )


# ---------------------------------------------------------------------------
# one transition step


def step_offsets(
    dae,
    new_rows,
    rows,
    offsets,
    x_intervals,
    y_intervals,
    dt: float,
    workers: int | None = None,
) -> np.ndarray:
    """Support of the one-step image along each next-step facet normal.

    Maximizes ``a @ x_next`` with ``x_next = x + dt * (f_x x + f_y y + s_f w
    + c_f)`` over the relaxed transition set, one LP per facet.  The result
    contains the true image of every state in the current polytope because
    the envelopes contain the true term values.
    """
    a_ub, b_ub, a_eq, b_eq, w_col, n_cols = _lifted(
        dae, rows, offsets, x_intervals, y_intervals
    )
    new_rows = np.asarray(new_rows, dtype=float)
    k = new_rows.shape[0]
    costs = np.zeros((k, n_cols))
    costs[:, : dae.n_x] = new_rows @ (np.eye(dae.n_x) + dt * dae.f_x)
    costs[:, dae.n_x : dae.n_x + dae.n_y] = dt * (new_rows @ dae.f_y)
    for idx, col in w_col.items():
        costs[:, col] = dt * (new_rows @ dae.s_f[:, idx])
    sols = BatchLp(a_ub=a_ub, b_ub=b_ub, a_eq=a_eq, b_eq=b_eq).solve_many(
        costs, "max", workers=workers
    )
    _require_optimal(sols, "facet support step")
    const = dt * (new_rows @ dae.c_f)
    return np.array([s.objective for s in sols]) + const


# ---------------------------------------------------------------------------
# invariance certificate and the largest certifiable neighborhood


def invariance_certificate(
    dae, rows, rel_offsets, x_eq, epsilon: float, workers: int | None = None
) -> float:
    """Worst outward flow over all facets of the scaled polytope.

    The polytope is ``rows @ (x - x_eq) <= epsilon * rel_offsets``.  For each
    facet the program maximizes the outward component of the vector field
    over the facet slice of the relaxation; a negative return value proves
    the flow points strictly inward everywhere on the boundary, i.e. the
    scaled polytope is invariant.  Facets that the relaxation proves empty
    at this scale are redundant and are skipped with a warning.
    """
    rows = np.asarray(rows, dtype=float)
    rel_offsets = np.asarray(rel_offsets, dtype=float)
    x_eq = np.asarray(x_eq, dtype=float)
    if not 0.0 < epsilon <= 1.0:
        raise ValueError("epsilon must lie in (0, 1]")
    if np.any(rel_offsets <= 0.0):
        raise ReachError(
            "equilibrium must be strictly inside the polytope being scaled"
        )
    offsets = epsilon * rel_offsets + rows @ x_eq
    x_iv = bound_x(rows, offsets, workers=workers)
    y_iv = bound_y(
        dae, rows, offsets, x_iv, indices=term_input_y_indices(dae), workers=workers
    )
    a_ub, b_ub, a_eq, b_eq, w_col, n_cols = _lifted(
        dae, rows, offsets, x_iv, y_iv
    )
    n_x, n_y = dae.n_x, dae.n_y
    probs = []
    for i, a in enumerate(rows):
        c = np.zeros(n_cols)
        c[:n_x] = dae.f_x.T @ a
        c[n_x : n_x + n_y] = dae.f_y.T @ a
        for idx, col in w_col.items():
            c[col] = dae.s_f[:, idx] @ a
        facet = np.zeros(n_cols)
        facet[:n_x] = a
        probs.append(
            LpProblem(
                c=c,
                sense="max",
                a_ub=a_ub,
                b_ub=b_ub,
                a_eq=np.vstack([a_eq, facet]),
                b_eq=np.append(b_eq, offsets[i]),
                name=f"facet-flow {i}",
            )
        )
    sols = solve_all(probs)
    mu = -math.inf
    solved = 0
    for i, sol in enumerate(sols):
        if sol.status == "infeasible":
            warnings.warn(
                f"facet {i} is redundant at scale {epsilon}; skipped",
                stacklevel=2,
            )
            continue
        if sol.status != "optimal":
            raise ReachError(f"facet-flow LP {i} ended {sol.status}")
        mu = max(mu, sol.objective + float(rows[i] @ dae.c_f))
        solved += 1
    if solved == 0:
        raise ReachError("every facet was redundant; polytope scaling is broken")
    return mu


def bisect_epsilon(
    dae,
    rows,
    rel_offsets,
    x_eq,
    lo: float = 1e-3,
    hi: float = 1.0,
    tol: float = 1e-3,
    workers: int | None = None,
) -> tuple[float, list[tuple[float, float]]]:
    """Largest scale in [lo, hi] whose invariance certificate succeeds.

    Returns ``(eps, probes)`` where every probe is ``(scale, worst outward
    flow)``; a probe whose envelopes exceed their width limit is recorded
    with flow ``inf`` (uncertifiable at that scale).  The returned scale is
    always one that tested negative; contraction of the bracket stops at
    ``tol``.
    """
    probes: list[tuple[float, float]] = []

    def probe(eps: float) -> float:
        try:
            mu = invariance_certificate(dae, rows, rel_offsets, x_eq, eps, workers)
        except EnvelopeWidthError:
            mu = math.inf
        probes.append((eps, mu))
        return mu

    if probe(hi) < 0.0:
        return hi, probes
    if probe(lo) >= 0.0:
        raise ReachError(
            f"no certifiable neighborhood: outward flow is nonnegative even "
            f"at scale {lo}"
        )
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if probe(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return lo, probes


# ---------------------------------------------------------------------------
# the main loop


def run(
    dae,
    template_rows,
    b0,
    x_eq,
    cfg: ReachConfig,
    layout=None,
    center0=None,
) -> ReachTrace:
    """Propagate the template polytope and decide the verdict.

    ``template_rows`` are the fixed facet normals (unit rows); ``b0`` their
    initial offsets.  In dynamic or combined mode a second copy of the rows
    is updated each step by the inverse linearized flow at the tracked
    center.  Verdicts: ``certified_stable`` once every fixed offset has
    contracted into ``cfg.epsilon`` times its initial distance from the
    equilibrium, ``inconclusive_width`` when the rotor-angle spread outgrows
    the relaxation's validity assumption (or an envelope hits its width
    limit), ``horizon_exhausted`` otherwise.
    """
    rows_f = np.array(template_rows, dtype=float)
    b_fix = np.array(b0, dtype=float)
    x_eq = np.asarray(x_eq, dtype=float)
    if rows_f.ndim != 2 or rows_f.shape[1] != dae.n_x:
        raise ReachError("template rows shape disagrees with the model")
    if b_fix.shape != (rows_f.shape[0],):
        raise ReachError("one initial offset per template row required")
    use_fixed = cfg.template_mode in ("fixed", "both")
    use_dyn = cfg.template_mode in ("dynamic", "both")
    rel0 = b_fix - rows_f @ x_eq
    if cfg.epsilon is not None:
        if not use_fixed:
            raise ReachError(
                "the contraction exit needs the fixed rows; use template_mode "
                "'fixed' or 'both'"
            )
        if np.any(rel0 <= 0.0):
            raise ReachError(
                "initial polytope must strictly contain the equilibrium for "
                "the contraction exit"
            )
    dyn_rows = rows_f.copy() if use_dyn else None
    b_dyn = b_fix.copy() if use_dyn else None

    def stacked():
        parts_r, parts_b = [], []
        if use_fixed:
            parts_r.append(rows_f)
            parts_b.append(b_fix)
        if use_dyn:
            parts_r.append(dyn_rows)
            parts_b.append(b_dyn)
        return np.vstack(parts_r), np.concatenate(parts_b)

    trace = ReachTrace(
        fixed_rows=rows_f.copy(),
        n_fixed=rows_f.shape[0] if use_fixed else 0,
        epsilon_used=cfg.epsilon,
    )
    srows, sb = stacked()
    if center0 is None:
        center, _ = chebyshev_center(srows, sb)
    else:
        center = np.array(center0, dtype=float)
    y_need = term_input_y_indices(dae)

    for step in range(cfg.n_steps + 1):
        tic = time.perf_counter()
        srows, sb = stacked()
        x_iv = bound_x(srows, sb, workers=cfg.workers)
        spread = None
        if layout is not None:
            spread = float(
                np.max(angle_spreads(srows, sb, layout, workers=cfg.workers))
            )
        record = StepRecord(
            step=step,
            t=step * cfg.dt,
            rows=srows,
            offsets=sb.copy(),
            x_intervals=x_iv,
            y_intervals={},
            center=center.copy(),
            angle_spread=spread,
        )
        trace.records.append(record)

        if spread is not None and spread > cfg.angle_width_limit:
            trace.notes.append(
                f"step {step}: angle spread {spread:.4f} exceeds "
                f"{cfg.angle_width_limit:.4f}"
            )
            trace.set_verdict("inconclusive_width", step)
            record.wall_time = time.perf_counter() - tic
            break
        if use_fixed and cfg.epsilon is not None:
            rel_t = b_fix - rows_f @ x_eq
            if np.all(rel_t <= cfg.epsilon * rel0):
                trace.set_verdict("certified_stable", step)
                record.wall_time = time.perf_counter() - tic
                break
        if step == cfg.n_steps:
            trace.set_verdict("horizon_exhausted", step)
            record.wall_time = time.perf_counter() - tic
            break

        try:
            y_iv = bound_y(
                dae, srows, sb, x_iv, indices=y_need, workers=cfg.workers
            )
            record.y_intervals = y_iv
            y_c = dae.solve_algebraic(center)
            if use_dyn:
                jac = dae.reduced_jacobian(center, y_c)
                dyn_next = dynamic_update(dyn_rows, jac, cfg.dt)
            else:
                dyn_next = None
            parts = []
            if use_fixed:
                parts.append(rows_f)
            if use_dyn:
                parts.append(dyn_next)
            new_rows = np.vstack(parts)
            b_next = step_offsets(
                dae, new_rows, srows, sb, x_iv, y_iv, cfg.dt, workers=cfg.workers
            )
        except EnvelopeWidthError as exc:
            trace.notes.append(f"step {step}: {exc}")
            trace.set_verdict("inconclusive_width", step)
            record.wall_time = time.perf_counter() - tic
            break

        if use_fixed:
            b_fix = b_next[: rows_f.shape[0]]
            if use_dyn:
                b_dyn = b_next[rows_f.shape[0] :]
        else:
            b_dyn = b_next
        if use_dyn:
            dyn_rows = dyn_next
        if cfg.center_mode == "simulate":
            center = center + cfg.dt * dae.f(center, y_c)
        else:
            center, _ = chebyshev_center(new_rows, b_next)
        record.wall_time = time.perf_counter() - tic

    return trace


# ---------------------------------------------------------------------------
# harness helpers and result emission


def max_containment_violation(trace: ReachTrace, trajectories) -> float:
    """Worst ``rows @ x - offsets`` over all recorded steps and trajectories.

    ``trajectories`` has shape (n_records, n_samples, n_x), aligned with the
    recorded steps.  Nonpositive means every sample stayed inside every
    reported polytope.
    """
    trajectories = np.asarray(trajectories, dtype=float)
    if trajectories.shape[0] != len(trace.records):
        raise ValueError("one trajectory slice per recorded step required")
    worst = -math.inf
    for rec, states in zip(trace.records, trajectories):
        worst = max(worst, float(np.max(states @ rec.rows.T - rec.offsets)))
    return worst


def write_trace_csv(trace: ReachTrace, path, preamble: str | None = None) -> None:
    """One row per recorded step per facet: time, facet id, family, offset.

    ``preamble`` is written first as a ``#`` comment line for provenance.
    """
    with open(path, "w", encoding="ascii", newline="") as fh:
        if preamble:
            fh.write(f"# {preamble}\n")
        out = csv.writer(fh)
        out.writerow(["step", "t", "facet", "family", "offset"])
        for rec in trace.records:
            for i, b in enumerate(rec.offsets):
                family = "fixed" if i < trace.n_fixed else "dynamic"
                out.writerow([rec.step, f"{rec.t:.6f}", i, family, repr(float(b))])


def write_bounds_csv(trace: ReachTrace, path, preamble: str | None = None) -> None:
    """One row per recorded step per bounded variable: interval and spread.

    ``preamble`` is written first as a ``#`` comment line for provenance.
    """
    with open(path, "w", encoding="ascii", newline="") as fh:
        if preamble:
            fh.write(f"# {preamble}\n")
        out = csv.writer(fh)
        out.writerow(["step", "t", "kind", "index", "lo", "hi"])
        for rec in trace.records:
            for i, iv in enumerate(rec.x_intervals):
                out.writerow(
                    [rec.step, f"{rec.t:.6f}", "x", i, repr(iv.lo), repr(iv.hi)]
                )
            for j in sorted(rec.y_intervals):
                iv = rec.y_intervals[j]
                out.writerow(
                    [rec.step, f"{rec.t:.6f}", "y", j, repr(iv.lo), repr(iv.hi)]
                )


def summary(trace: ReachTrace) -> dict:
    """Plain-data digest of a run for JSON emission."""
    rec = trace.records[-1] if trace.records else None
    return {
        "verdict": trace.verdict,
        "verdict_step": trace.verdict_step,
        "verdict_time": None if rec is None else rec.t,
        "epsilon_used": trace.epsilon_used,
        "steps_recorded": len(trace.records),
        "total_wall_time": sum(r.wall_time for r in trace.records),
        "max_angle_spread": max(
            (r.angle_spread for r in trace.records if r.angle_spread is not None),
            default=None,
        ),
        "notes": list(trace.notes),
    }
