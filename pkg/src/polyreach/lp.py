"""Deterministic linear-programming layer.

Every quantity this package certifies (facet support values, variable
intervals, invariance margins) is the optimum of a linear program, so this
module is the trust anchor of the whole code base.  Problems are solved with
HiGHS through scipy; each optimal result is verified before it is returned
(primal residuals and a weak-duality spot check), and reported optima are
inflated outward by a small configurable margin so that floating-point
rounding can only ever make the outer approximation looser, never tighter.

Two solve paths exist with identical semantics:

* :func:`solve` builds one fresh model per problem (scipy ``linprog``).
* :class:`BatchLp` keeps a single warm-started model for a family of
  objectives over one shared constraint set, which is how the per-step facet
  programs are solved.  Chunks of a batch can be farmed out to worker
  processes; the ``POLYREACH_THREADS`` environment variable caps the worker
  count.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from multiprocessing import get_context

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

try:  # fast warm-started path; absent on exotic scipy builds
    from scipy.optimize._highspy import _core as _hscore
except Exception:  # pragma: no cover
    _hscore = None

FEASIBILITY_TOL = 1e-8
DUALITY_REL_TOL = 1e-6
DEFAULT_INFLATION = 1e-9
_SOLVER_FEAS_TOL = 1e-9

_LINPROG_OPTIONS = {
    "primal_feasibility_tolerance": _SOLVER_FEAS_TOL,
    "dual_feasibility_tolerance": _SOLVER_FEAS_TOL,
}


class LpError(RuntimeError):
    """Solver failure or a solution that failed post-solve verification."""


@dataclass(frozen=True)
class LpProblem:
    """min or max of ``c @ x`` subject to ``a_ub @ x <= b_ub`` and ``a_eq @ x == b_eq``.

    Variables are free; box constraints are expressed as inequality rows.
    """

    c: np.ndarray
    sense: str = "min"
    a_ub: object = None
    b_ub: np.ndarray | None = None
    a_eq: object = None
    b_eq: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        if c.ndim != 1:
            raise ValueError("objective must be a vector")
        if not np.all(np.isfinite(c)):
            raise ValueError("objective coefficients must be finite")
        object.__setattr__(self, "c", c)
        if self.sense not in ("min", "max"):
            raise ValueError(f"sense must be 'min' or 'max', got {self.sense!r}")
        for mat_name, vec_name in (("a_ub", "b_ub"), ("a_eq", "b_eq")):
            mat, vec = getattr(self, mat_name), getattr(self, vec_name)
            if (mat is None) != (vec is None):
                raise ValueError(f"{mat_name} and {vec_name} must be given together")
            if mat is None:
                continue
            vec = np.asarray(vec, dtype=float)
            if vec.ndim != 1 or not np.all(np.isfinite(vec)):
                raise ValueError(f"{vec_name} must be a finite vector")
            if not sp.issparse(mat):
                mat = np.asarray(mat, dtype=float)
            if mat.shape != (vec.size, c.size):
                raise ValueError(
                    f"{mat_name} has shape {mat.shape}, expected {(vec.size, c.size)}"
                )
            object.__setattr__(self, mat_name, mat)
            object.__setattr__(self, vec_name, vec)
        if self.a_ub is None and self.a_eq is None:
            raise ValueError("problem has no constraints")

    @property
    def n_vars(self) -> int:
        return self.c.size


@dataclass(frozen=True)
class LpSolution:
    """status is one of 'optimal', 'infeasible', 'unbounded'.

    ``objective`` and ``x`` are None unless optimal.  The objective already
    includes the outward inflation applied by the solver wrapper.
    """

    status: str
    objective: float | None = None
    x: np.ndarray | None = None


def effective_workers(requested: int | None = None) -> int:
    """Worker count after applying the POLYREACH_THREADS cap (>= 1)."""
    cap = os.environ.get("POLYREACH_THREADS")
    n = requested if requested is not None else 1
    if cap is not None:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise LpError(f"POLYREACH_THREADS is not an integer: {cap!r}")
    return max(1, n)


def _max_abs(mat) -> float:
    if sp.issparse(mat):
        return float(np.max(np.abs(mat.data), initial=0.0))
    return float(np.max(np.abs(mat), initial=0.0))


def _residual_check(prob: LpProblem, x: np.ndarray, context: str) -> None:
    # backward-error tolerance: the solver enforces its feasibility tolerance
    # in scaled space, so the raw residual must be judged relative to the
    # magnitude of the data and of the solution itself
    if not np.all(np.isfinite(x)):
        raise LpError(f"{context}: solution vector not finite")
    x_mag = float(np.max(np.abs(x), initial=0.0))
    if prob.a_ub is not None:
        scale = 1.0 + float(np.max(np.abs(prob.b_ub), initial=0.0)) + _max_abs(prob.a_ub) * x_mag
        tol = FEASIBILITY_TOL * scale
        viol = float(np.max(prob.a_ub @ x - prob.b_ub, initial=-np.inf))
        if viol > tol:
            raise LpError(f"{context}: inequality residual {viol:.3e} exceeds {tol:.3e}")
    if prob.a_eq is not None:
        scale = 1.0 + float(np.max(np.abs(prob.b_eq), initial=0.0)) + _max_abs(prob.a_eq) * x_mag
        tol = FEASIBILITY_TOL * scale
        viol = float(np.max(np.abs(prob.a_eq @ x - prob.b_eq), initial=0.0))
        if viol > tol:
            raise LpError(f"{context}: equality residual {viol:.3e} exceeds {tol:.3e}")


def _duality_check(primal: float, dual: float, context: str) -> None:
    gap = abs(primal - dual)
    if gap > DUALITY_REL_TOL * (1.0 + abs(primal)):
        raise LpError(
            f"{context}: duality gap {gap:.3e} too large (primal {primal:.9e}, dual {dual:.9e})"
        )


def solve(prob: LpProblem, inflation: float = DEFAULT_INFLATION) -> LpSolution:
    """Solve one problem and verify the result.

    Maxima are inflated by ``+inflation`` and minima by ``-inflation`` so that
    downstream bounds err outward.  Raises :class:`LpError` on solver failure
    or failed verification; infeasible/unbounded are legitimate statuses and
    are returned, not raised.
    """
    sign = -1.0 if prob.sense == "max" else 1.0
    res = linprog(
        sign * prob.c,
        A_ub=prob.a_ub,
        b_ub=prob.b_ub,
        A_eq=prob.a_eq,
        b_eq=prob.b_eq,
        bounds=(None, None),
        method="highs",
        options=dict(_LINPROG_OPTIONS),
    )
    if res.status == 2:
        return LpSolution("infeasible")
    if res.status == 3:
        return LpSolution("unbounded")
    if res.status != 0:
        raise LpError(f"LP '{prob.name}': solver failure ({res.message})")
    x = np.asarray(res.x, dtype=float)
    context = f"LP '{prob.name}'" if prob.name else "LP"
    _residual_check(prob, x, context)
    # weak duality from the HiGHS marginals; variables are free so rows are all
    dual = 0.0
    if res.ineqlin is not None and prob.b_ub is not None:
        dual += float(np.dot(res.ineqlin.marginals, prob.b_ub))
    if res.eqlin is not None and prob.b_eq is not None:
        dual += float(np.dot(res.eqlin.marginals, prob.b_eq))
    _duality_check(float(res.fun), dual, context)
    obj = float(prob.c @ x)
    obj += inflation if prob.sense == "max" else -inflation
    return LpSolution("optimal", obj, x)


def solve_all(probs: list[LpProblem], inflation: float = DEFAULT_INFLATION) -> list[LpSolution]:
    """Solve independent problems sequentially (convenience wrapper)."""
    return [solve(p, inflation=inflation) for p in probs]


# ---------------------------------------------------------------------------
# warm-started batch path


def _to_csc(mat) -> sp.csc_matrix:
    if sp.issparse(mat):
        return mat.tocsc()
    return sp.csc_matrix(np.asarray(mat, dtype=float))


class BatchLp:
    """Many objectives over one shared constraint set.

    The constraint matrix is loaded into a single HiGHS model once; each
    objective swap re-solves from the previous basis.  Results are verified
    exactly like :func:`solve`.  When the warm-start backend is unavailable
    the class degrades to per-objective ``linprog`` calls with identical
    semantics.
    """

    def __init__(self, a_ub=None, b_ub=None, a_eq=None, b_eq=None):
        if a_ub is None and a_eq is None:
            raise ValueError("batch has no constraints")
        self.a_ub = _to_csc(a_ub) if a_ub is not None else None
        self.b_ub = np.asarray(b_ub, dtype=float) if b_ub is not None else None
        self.a_eq = _to_csc(a_eq) if a_eq is not None else None
        self.b_eq = np.asarray(b_eq, dtype=float) if b_eq is not None else None
        mats = [m for m in (self.a_ub, self.a_eq) if m is not None]
        self.n_vars = mats[0].shape[1]
        for m in mats:
            if m.shape[1] != self.n_vars:
                raise ValueError("constraint blocks disagree on variable count")

    def _problem(self, c: np.ndarray, sense: str, name: str) -> LpProblem:
        return LpProblem(
            c=c, sense=sense, a_ub=self.a_ub, b_ub=self.b_ub,
            a_eq=self.a_eq, b_eq=self.b_eq, name=name,
        )

    def solve_many(
        self,
        costs: np.ndarray,
        senses: str | list[str] = "max",
        workers: int | None = None,
        inflation: float = DEFAULT_INFLATION,
    ) -> list[LpSolution]:
        """Solve ``costs[k] @ x`` for every row k; senses may be shared or per-row."""
        costs = np.atleast_2d(np.asarray(costs, dtype=float))
        k = costs.shape[0]
        if costs.shape[1] != self.n_vars:
            raise ValueError("cost rows disagree with variable count")
        if isinstance(senses, str):
            senses = [senses] * k
        if len(senses) != k:
            raise ValueError("one sense per cost row required")
        if k == 0:
            return []
        nw = effective_workers(workers)
        payload = (self.a_ub, self.b_ub, self.a_eq, self.b_eq)
        if nw <= 1 or k < 2 * nw:
            return _solve_chunk(payload, costs, senses, inflation)
        # contiguous chunks keep the result order deterministic
        bounds_idx = np.linspace(0, k, nw + 1).astype(int)
        chunks = [
            (payload, costs[lo:hi], senses[lo:hi], inflation)
            for lo, hi in zip(bounds_idx[:-1], bounds_idx[1:])
            if hi > lo
        ]
        ctx = get_context("fork")
        with ProcessPoolExecutor(max_workers=len(chunks), mp_context=ctx) as ex:
            parts = list(ex.map(_solve_chunk_star, chunks))
        out: list[LpSolution] = []
        for part in parts:
            out.extend(part)
        return out


def _solve_chunk_star(args):
    return _solve_chunk(*args)


def _solve_chunk(payload, costs, senses, inflation) -> list[LpSolution]:
    a_ub, b_ub, a_eq, b_eq = payload
    if _hscore is None:
        batch = BatchLp(a_ub, b_ub, a_eq, b_eq)
        return [
            solve(batch._problem(c, s, f"batch[{i}]"), inflation=inflation)
            for i, (c, s) in enumerate(zip(costs, senses))
        ]
    return _solve_chunk_highs(a_ub, b_ub, a_eq, b_eq, costs, senses, inflation)


def _solve_chunk_highs(a_ub, b_ub, a_eq, b_eq, costs, senses, inflation) -> list[LpSolution]:
    hs = _hscore
    blocks = [m for m in (a_ub, a_eq) if m is not None]
    a_all = sp.vstack(blocks).tocsc() if len(blocks) > 1 else blocks[0].tocsc()
    n = a_all.shape[1]
    m_ub = a_ub.shape[0] if a_ub is not None else 0
    m_eq = a_eq.shape[0] if a_eq is not None else 0
    row_lower = np.concatenate(
        [np.full(m_ub, -np.inf), b_eq if m_eq else np.empty(0)]
    )
    row_upper = np.concatenate(
        [b_ub if m_ub else np.empty(0), b_eq if m_eq else np.empty(0)]
    )
    lp = hs.HighsLp()
    lp.num_col_ = n
    lp.num_row_ = m_ub + m_eq
    lp.col_cost_ = np.zeros(n)
    lp.col_lower_ = np.full(n, -np.inf)
    lp.col_upper_ = np.full(n, np.inf)
    lp.row_lower_ = row_lower
    lp.row_upper_ = row_upper
    lp.a_matrix_.format_ = hs.MatrixFormat.kColwise
    lp.a_matrix_.start_ = a_all.indptr.astype(np.int64)
    lp.a_matrix_.index_ = a_all.indices.astype(np.int64)
    lp.a_matrix_.value_ = a_all.data.astype(float)
    lp.sense_ = hs.ObjSense.kMinimize
    solver = hs._Highs()
    solver.setOptionValue("output_flag", False)
    solver.setOptionValue("threads", 1)
    solver.setOptionValue("primal_feasibility_tolerance", _SOLVER_FEAS_TOL)
    solver.setOptionValue("dual_feasibility_tolerance", _SOLVER_FEAS_TOL)
    # kWarning covers sub-tolerance matrix entries the solver drops; the
    # residual check below still validates solutions against the exact data
    if solver.passModel(lp) not in (hs.HighsStatus.kOk, hs.HighsStatus.kWarning):
        raise LpError("could not load batch LP model")
    idx = np.arange(n, dtype=np.int64)
    helper = BatchLp(a_ub, b_ub, a_eq, b_eq)
    out: list[LpSolution] = []
    for i, (c, sense) in enumerate(zip(costs, senses)):
        sign = -1.0 if sense == "max" else 1.0
        solver.changeColsCost(n, idx, sign * c)
        solver.run()
        status = solver.getModelStatus()
        if status == hs.HighsModelStatus.kOptimal:
            sol = solver.getSolution()
            x = np.asarray(sol.col_value, dtype=float)
            prob = helper._problem(c, sense, f"batch[{i}]")
            try:
                _residual_check(prob, x, f"batch LP [{i}]")
                row_dual = np.asarray(sol.row_dual, dtype=float)
                dual = _row_form_dual(row_dual, row_lower, row_upper)
                _duality_check(float(sign * (c @ x)), dual, f"batch LP [{i}]")
            except LpError:
                # warm-started bases occasionally drift past the verification
                # tolerance; a cold solve of the same problem is verified from
                # scratch and raises if the problem is genuinely bad
                out.append(solve(prob, inflation=inflation))
                continue
            obj = float(c @ x)
            obj += inflation if sense == "max" else -inflation
            out.append(LpSolution("optimal", obj, x))
        elif status == hs.HighsModelStatus.kInfeasible:
            out.append(LpSolution("infeasible"))
        elif status == hs.HighsModelStatus.kUnbounded:
            out.append(LpSolution("unbounded"))
        else:
            # ambiguous classification: settle it with a fresh cold solve
            out.append(solve(helper._problem(c, sense, f"batch[{i}]"), inflation=inflation))
    return out


def _row_form_dual(row_dual: np.ndarray, row_lower: np.ndarray, row_upper: np.ndarray) -> float:
    """Dual objective for L <= Ax <= U rows of a minimization (free columns)."""
    pos = row_dual > 0
    neg = row_dual < 0
    val = 0.0
    if np.any(pos):
        lo = row_lower[pos]
        if not np.all(np.isfinite(lo)):
            bad = ~np.isfinite(lo)
            if np.max(np.abs(row_dual[pos][bad]), initial=0.0) > 1e-7:
                raise LpError("positive dual on a row without lower bound")
            lo = np.where(np.isfinite(lo), lo, 0.0)
        val += float(np.dot(row_dual[pos], lo))
    if np.any(neg):
        hi = row_upper[neg]
        if not np.all(np.isfinite(hi)):
            bad = ~np.isfinite(hi)
            if np.max(np.abs(row_dual[neg][bad]), initial=0.0) > 1e-7:
                raise LpError("negative dual on a row without upper bound")
            hi = np.where(np.isfinite(hi), hi, 0.0)
        val += float(np.dot(row_dual[neg], hi))
    return val


# ---------------------------------------------------------------------------
# text interchange


def dump_problem(prob: LpProblem, path) -> None:
    """Write the problem in CPLEX LP text format (debugging interchange)."""

    def _expr(row) -> str:
        row = np.asarray(row).ravel()
        parts = []
        for j, v in enumerate(row):
            if v == 0.0:
                continue
            op = "-" if v < 0 else ("+" if parts else "")
            parts.append(f"{op} {abs(v):.17g} x{j}".strip())
        return " ".join(parts) if parts else "0 x0"

    lines = [f"\\ {prob.name or 'polyreach LP'}"]
    lines.append("Minimize" if prob.sense == "min" else "Maximize")
    lines.append(f" obj: {_expr(prob.c)}")
    lines.append("Subject To")
    if prob.a_ub is not None:
        dense_ub = prob.a_ub.toarray() if sp.issparse(prob.a_ub) else np.asarray(prob.a_ub)
        for i, (row, b) in enumerate(zip(dense_ub, prob.b_ub)):
            lines.append(f" ub{i}: {_expr(row)} <= {b:.17g}")
    if prob.a_eq is not None:
        dense_eq = prob.a_eq.toarray() if sp.issparse(prob.a_eq) else np.asarray(prob.a_eq)
        for i, (row, b) in enumerate(zip(dense_eq, prob.b_eq)):
            lines.append(f" eq{i}: {_expr(row)} = {b:.17g}")
    lines.append("Bounds")
    for j in range(prob.n_vars):
        lines.append(f" x{j} free")
    lines.append("End")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
