"""Semi-linear differential-algebraic model and its power-system instance.

The dynamics handled by this package have the shape

    x' = f_x x + f_y y + S_f w + c_f
    0  = g_x x + g_y y + S_g w + c_g

where ``w`` collects the values of a finite list of scalar nonlinear terms,
each either a phase-shifted sinusoid of one variable or a product of two
variables.  Term inputs may be differential states, algebraic variables, or
the outputs of earlier terms, so composite expressions factor into a chain.

Every term with a nonzero column in ``S_g`` must depend on differential
states only (directly and through its term inputs).  That closure property
makes the algebraic constraint linear in ``y`` once ``x`` is fixed, which
both the simulator and the bound-propagation loop rely on.

The second half of the module builds this structure for a multi-machine
power system: third-order generator models behind a constant-admittance
network with constant-current loads, everything expressed in one global
rotating frame.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import lu_factor, lu_solve

X_SPACE, Y_SPACE, TERM_SPACE = "x", "y", "term"


class ModelError(ValueError):
    pass


def _req(obj, key, where, cast):
    """Fetch ``obj[key]`` and cast it, naming the offending key on failure."""
    try:
        raw = obj[key]
    except (KeyError, TypeError, IndexError):
        raise ModelError(f"{where}: missing field '{key}'") from None
    ok = (
        isinstance(raw, cast)
        if cast in (list, str)
        else isinstance(raw, (int, float))
        and not isinstance(raw, bool)
        and (cast is float or float(raw).is_integer())
    )
    if not ok:
        raise ModelError(
            f"{where}.{key}: expected {cast.__name__}, got {raw!r}"
        ) from None
    return raw if cast is list else cast(raw)


@dataclass(frozen=True)
class VarRef:
    space: str
    index: int

    def __post_init__(self):
        if self.space not in (X_SPACE, Y_SPACE, TERM_SPACE):
            raise ModelError(f"unknown variable space {self.space!r}")
        if self.index < 0:
            raise ModelError("negative variable index")


@dataclass(frozen=True)
class NonlinearTerm:
    """One lifted scalar: sin(input + phase), or the product of two inputs."""

    kind: str
    inputs: tuple[VarRef, ...]
    phase: float | None = None

    def __post_init__(self):
        if self.kind == "sinusoid":
            if len(self.inputs) != 1:
                raise ModelError("sinusoid takes exactly one input")
            if self.phase is None:
                object.__setattr__(self, "phase", 0.0)
        elif self.kind == "bilinear":
            if len(self.inputs) != 2:
                raise ModelError("bilinear takes exactly two inputs")
            if self.phase is not None:
                raise ModelError("bilinear has no phase")
        else:
            raise ModelError(f"unknown term kind {self.kind!r}")


@dataclass(frozen=True, eq=False)
class SemiLinearDae:
    f_x: np.ndarray
    f_y: np.ndarray
    c_f: np.ndarray
    s_f: np.ndarray
    g_x: np.ndarray
    g_y: np.ndarray
    c_g: np.ndarray
    s_g: np.ndarray
    terms: tuple[NonlinearTerm, ...]
    x_names: tuple[str, ...] = ()
    y_names: tuple[str, ...] = ()
    term_names: tuple[str, ...] = ()
    g_closure: frozenset[int] = field(init=False)
    _g_y_lu: tuple = field(init=False, repr=False)

    def __post_init__(self):
        for name in ("f_x", "f_y", "c_f", "s_f", "g_x", "g_y", "c_g", "s_g"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n_x = self.f_x.shape[0]
        n_y = self.g_y.shape[1]
        n_t = len(self.terms)
        shapes = {
            "f_x": (n_x, n_x),
            "f_y": (n_x, n_y),
            "c_f": (n_x,),
            "s_f": (n_x, n_t),
            "g_x": (n_y, n_x),
            "g_y": (n_y, n_y),
            "c_g": (n_y,),
            "s_g": (n_y, n_t),
        }
        for name, want in shapes.items():
            got = getattr(self, name).shape
            if got != want:
                raise ModelError(f"{name} has shape {got}, expected {want}")
        for i, term in enumerate(self.terms):
            for ref in term.inputs:
                limit = {X_SPACE: n_x, Y_SPACE: n_y, TERM_SPACE: i}[ref.space]
                if ref.index >= limit:
                    raise ModelError(
                        f"term {i} references {ref.space}[{ref.index}], "
                        f"which is out of range (terms may only use earlier terms)"
                    )
        closure = set(np.flatnonzero(np.any(self.s_g != 0.0, axis=0)).tolist())
        frontier = list(closure)
        while frontier:
            t = frontier.pop()
            for ref in self.terms[t].inputs:
                if ref.space == TERM_SPACE and ref.index not in closure:
                    closure.add(ref.index)
                    frontier.append(ref.index)
                elif ref.space == Y_SPACE:
                    raise ModelError(
                        f"term {t} feeds the algebraic constraint but depends on "
                        f"y[{ref.index}]; constraint-side terms must be functions "
                        "of the differential state only"
                    )
        object.__setattr__(self, "g_closure", frozenset(closure))
        if not np.all(np.isfinite(self.g_y)):
            raise ModelError("g_y contains non-finite entries")
        try:
            lu = lu_factor(self.g_y)
        except Exception as exc:  # singular or otherwise unusable
            raise ModelError(f"g_y is not invertible: {exc}") from None
        if np.min(np.abs(np.diag(lu[0]))) < 1e-12 * max(1.0, np.abs(self.g_y).max()):
            raise ModelError("g_y is numerically singular")
        object.__setattr__(self, "_g_y_lu", lu)
        if not self.x_names:
            object.__setattr__(self, "x_names", tuple(f"x{i}" for i in range(n_x)))
        if not self.y_names:
            object.__setattr__(self, "y_names", tuple(f"y{i}" for i in range(n_y)))
        if not self.term_names:
            object.__setattr__(self, "term_names", tuple(f"w{i}" for i in range(n_t)))

    # -- sizes ------------------------------------------------------------
    @property
    def n_x(self) -> int:
        return self.f_x.shape[0]

    @property
    def n_y(self) -> int:
        return self.g_y.shape[1]

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    # -- evaluation (batched over leading axes) ---------------------------
    def _ref_values(self, ref: VarRef, x, y, w):
        if ref.space == X_SPACE:
            return x[..., ref.index]
        if ref.space == Y_SPACE:
            if y is None:
                raise ModelError(f"term input y[{ref.index}] needs algebraic values")
            return y[..., ref.index]
        return w[ref.index]

    def term_values(self, x, y=None, closure_only=False):
        """Values of the lifted terms; stacked on the last axis."""
        x = np.asarray(x, dtype=float)
        y = None if y is None else np.asarray(y, dtype=float)
        if self.n_terms == 0:
            return np.zeros(x.shape[:-1] + (0,))
        w: list = [None] * self.n_terms
        for i, term in enumerate(self.terms):
            if closure_only and i not in self.g_closure:
                w[i] = np.zeros(x.shape[:-1])
                continue
            vals = [self._ref_values(r, x, y, w) for r in term.inputs]
            if term.kind == "sinusoid":
                w[i] = np.sin(vals[0] + term.phase)
            else:
                w[i] = vals[0] * vals[1]
        return np.stack(w, axis=-1)

    def solve_algebraic(self, x):
        """Algebraic solution for fixed x; exact because the constraint-side
        terms depend on x only."""
        x = np.asarray(x, dtype=float)
        w_g = self.term_values(x, closure_only=True)
        rhs = x @ self.g_x.T + w_g @ self.s_g.T + self.c_g
        if rhs.ndim == 1:
            return -lu_solve(self._g_y_lu, rhs)
        flat = rhs.reshape(-1, self.n_y)
        sol = -lu_solve(self._g_y_lu, flat.T).T
        return sol.reshape(rhs.shape)

    def f(self, x, y, w=None):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if w is None:
            w = self.term_values(x, y)
        return x @ self.f_x.T + y @ self.f_y.T + w @ self.s_f.T + self.c_f

    def g(self, x, y, w=None):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if w is None:
            w = self.term_values(x, y)
        return x @ self.g_x.T + y @ self.g_y.T + w @ self.s_g.T + self.c_g

    # -- derivatives (single point) ---------------------------------------
    def term_jacobians(self, x, y):
        """d w / d x and d w / d y at one point, chained through the terms."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        w = self.term_values(x, y)
        dx = np.zeros((self.n_terms, self.n_x))
        dy = np.zeros((self.n_terms, self.n_y))

        def input_grad(ref):
            gx = np.zeros(self.n_x)
            gy = np.zeros(self.n_y)
            if ref.space == X_SPACE:
                gx[ref.index] = 1.0
            elif ref.space == Y_SPACE:
                gy[ref.index] = 1.0
            else:
                gx, gy = dx[ref.index], dy[ref.index]
            return gx, gy

        def input_value(ref):
            if ref.space == X_SPACE:
                return x[ref.index]
            if ref.space == Y_SPACE:
                return y[ref.index]
            return w[ref.index]

        for i, term in enumerate(self.terms):
            if term.kind == "sinusoid":
                gx, gy = input_grad(term.inputs[0])
                slope = math.cos(input_value(term.inputs[0]) + term.phase)
                dx[i] = slope * gx
                dy[i] = slope * gy
            else:
                ax, ay = input_grad(term.inputs[0])
                bx, by = input_grad(term.inputs[1])
                va, vb = input_value(term.inputs[0]), input_value(term.inputs[1])
                dx[i] = vb * ax + va * bx
                dy[i] = vb * ay + va * by
        return w, dx, dy

    def full_jacobian(self, x, y):
        """Blocks (F_x, F_y, G_x, G_y) of the stacked system at one point."""
        _, dx, dy = self.term_jacobians(x, y)
        fx = self.f_x + self.s_f @ dx
        fy = self.f_y + self.s_f @ dy
        gx = self.g_x + self.s_g @ dx
        gy = self.g_y + self.s_g @ dy
        return fx, fy, gx, gy

    def reduced_jacobian(self, x, y) -> np.ndarray:
        """Jacobian of x' along the algebraic manifold: F_x - F_y G_y^-1 G_x."""
        fx, fy, gx, gy = self.full_jacobian(x, y)
        return fx - fy @ np.linalg.solve(gy, gx)


def solve_equilibrium(dae: SemiLinearDae, x0, y0=None, tol=1e-9, max_iter=100):
    """Damped Newton on the stacked residual [x'; constraint]."""
    x = np.array(x0, dtype=float)
    y = dae.solve_algebraic(x) if y0 is None else np.array(y0, dtype=float)

    def residual(xv, yv):
        return np.concatenate([dae.f(xv, yv), dae.g(xv, yv)])

    r = residual(x, y)
    for _ in range(max_iter):
        norm = np.max(np.abs(r))
        if norm <= tol:
            return x, y
        fx, fy, gx, gy = dae.full_jacobian(x, y)
        jac = np.block([[fx, fy], [gx, gy]])
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError as exc:
            raise ModelError(f"singular jacobian in equilibrium solve: {exc}") from None
        alpha = 1.0
        for _ in range(30):
            xn = x + alpha * step[: dae.n_x]
            yn = y + alpha * step[dae.n_x :]
            rn = residual(xn, yn)
            if np.max(np.abs(rn)) < norm:
                x, y, r = xn, yn, rn
                break
            alpha *= 0.5
        else:
            raise ModelError(
                f"equilibrium line search stalled at residual {norm:.3g}"
            )
    raise ModelError(f"equilibrium solve did not reach {tol:g} in {max_iter} iterations")


def simulate(dae: SemiLinearDae, x0, dt: float, steps: int, record_every: int = 1):
    """Explicit-Euler trajectories on the algebraic manifold.

    ``x0`` may be one state or a batch ``(B, n_x)``.  Returns an array of
    recorded states of shape ``(n_records, ..., n_x)`` with the initial state
    first; records every ``record_every`` steps plus the final state.
    """
    x = np.array(x0, dtype=float)
    out = [x.copy()]
    for k in range(steps):
        y = dae.solve_algebraic(x)
        x = x + dt * dae.f(x, y)
        if (k + 1) % record_every == 0 or k == steps - 1:
            out.append(x.copy())
    return np.array(out)


# ===========================================================================
# power-system instantiation


@dataclass(frozen=True)
class Generator:
    bus: int
    inertia: float  # M: acceleration time constant (s^2/rad scale)
    damping: float  # D
    xd: float  # synchronous reactance, d-axis
    xdp: float  # transient reactance, d-axis
    td0p: float  # open-circuit transient time constant
    pm: float  # mechanical power input
    ef: float  # excitation voltage

    def __post_init__(self):
        if self.inertia <= 0 or self.td0p <= 0:
            raise ModelError("generator time constants must be positive")
        if self.xdp <= 0 or self.xd < self.xdp:
            raise ModelError("need xd >= xdp > 0")
        if self.damping < 0:
            raise ModelError("negative damping")


@dataclass(frozen=True, eq=False)
class PowerCase:
    """Network + machine data in one global rotating dq frame.

    An optional slack bus holds its voltage phasor fixed (an external grid
    equivalent).  Without one, a uniform rotation of all machine angles and
    bus voltages is a near-symmetry of the model, which leaves an eigenvalue
    near zero and makes a decay-aligned template impossible.
    """

    name: str
    conductance: np.ndarray  # real part of the bus admittance matrix
    susceptance: np.ndarray  # imaginary part
    load_id: np.ndarray  # constant d-axis current drawn at each bus
    load_iq: np.ndarray
    generators: tuple[Generator, ...]
    slack_bus: int | None = None
    slack_vd: float = 1.0
    slack_vq: float = 0.0

    def __post_init__(self):
        g = np.asarray(self.conductance, dtype=float)
        b = np.asarray(self.susceptance, dtype=float)
        n = g.shape[0]
        if g.shape != (n, n) or b.shape != (n, n):
            raise ModelError("admittance blocks must be square and same size")
        object.__setattr__(self, "conductance", g)
        object.__setattr__(self, "susceptance", b)
        object.__setattr__(self, "load_id", np.asarray(self.load_id, dtype=float))
        object.__setattr__(self, "load_iq", np.asarray(self.load_iq, dtype=float))
        if self.load_id.shape != (n,) or self.load_iq.shape != (n,):
            raise ModelError("load current vectors must have one entry per bus")
        seen = set()
        for gen in self.generators:
            if not 0 <= gen.bus < n:
                raise ModelError(f"generator bus {gen.bus} out of range")
            if gen.bus in seen:
                raise ModelError(f"two generators on bus {gen.bus}")
            seen.add(gen.bus)
        if not self.generators:
            raise ModelError("case has no generators")
        if self.slack_bus is not None:
            if not 0 <= self.slack_bus < n:
                raise ModelError(f"slack bus {self.slack_bus} out of range")
            if self.slack_bus in seen:
                raise ModelError("slack bus cannot also carry a generator")

    @property
    def n_bus(self) -> int:
        return self.conductance.shape[0]

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    # -- serialization -----------------------------------------------------
    # Case files are JSON with top-level keys ``buses``, ``lines``,
    # ``generators`` and ``loads`` (optional ``shunts`` and ``slack``); all
    # quantities per-unit, angles in radians.  See docs/formats.md.
    def to_dict(self) -> dict:
        n = self.n_bus
        g_mat, b_mat = self.conductance, self.susceptance
        if not (
            np.allclose(g_mat, g_mat.T, atol=1e-12)
            and np.allclose(b_mat, b_mat.T, atol=1e-12)
        ):
            raise ModelError("cannot express an asymmetric admittance as lines")
        gen_buses = {g.bus for g in self.generators}
        lines = []
        diag_g = g_mat.diagonal().copy()
        diag_b = b_mat.diagonal().copy()
        for f in range(n):
            for t in range(f + 1, n):
                lg, lb = -g_mat[f, t], -b_mat[f, t]
                if lg == 0.0 and lb == 0.0:
                    continue
                lines.append(
                    {"from": f, "to": t, "g": float(lg), "b": float(lb)}
                )
                diag_g[f] -= lg
                diag_g[t] -= lg
                diag_b[f] -= lb
                diag_b[t] -= lb
        shunts = [
            {"bus": b, "g": float(diag_g[b]), "b": float(diag_b[b])}
            for b in range(n)
            if abs(diag_g[b]) > 1e-12 or abs(diag_b[b]) > 1e-12
        ]
        out = {
            "name": self.name,
            "buses": [
                {"id": b, "type": "generator" if b in gen_buses else "load"}
                for b in range(n)
            ],
            "lines": lines,
            "generators": [
                {
                    "bus": g.bus,
                    "inertia": g.inertia,
                    "damping": g.damping,
                    "xd": g.xd,
                    "xdp": g.xdp,
                    "td0p": g.td0p,
                    "pm": g.pm,
                    "ef": g.ef,
                }
                for g in self.generators
            ],
            "loads": [
                {"bus": b, "i_d": float(self.load_id[b]), "i_q": float(self.load_iq[b])}
                for b in range(n)
                if self.load_id[b] != 0.0 or self.load_iq[b] != 0.0
            ],
        }
        if shunts:
            out["shunts"] = shunts
        if self.slack_bus is not None:
            out["slack"] = {
                "bus": self.slack_bus,
                "vd": self.slack_vd,
                "vq": self.slack_vq,
            }
        return out

    @staticmethod
    def from_dict(data: dict) -> "PowerCase":
        buses = _req(data, "buses", "case", list)
        n = len(buses)
        if n == 0:
            raise ModelError("case: 'buses' is empty")
        ids = set()
        bus_type = {}
        for i, entry in enumerate(buses):
            where = f"buses[{i}]"
            bid = _req(entry, "id", where, int)
            btype = _req(entry, "type", where, str)
            if btype not in ("generator", "load"):
                raise ModelError(
                    f"{where}.type: expected 'generator' or 'load', got {btype!r}"
                )
            if bid in ids:
                raise ModelError(f"{where}.id: duplicate bus id {bid}")
            ids.add(bid)
            bus_type[bid] = btype
        if ids != set(range(n)):
            raise ModelError(
                f"case: bus ids must be exactly 0..{n - 1} (got {sorted(ids)})"
            )

        g_mat = np.zeros((n, n))
        b_mat = np.zeros((n, n))
        for i, entry in enumerate(_req(data, "lines", "case", list)):
            where = f"lines[{i}]"
            f = _req(entry, "from", where, int)
            t = _req(entry, "to", where, int)
            lg = _req(entry, "g", where, float)
            lb = _req(entry, "b", where, float)
            if not (0 <= f < n and 0 <= t < n) or f == t:
                raise ModelError(f"{where}: endpoints ({f}, {t}) invalid")
            for mat, val in ((g_mat, lg), (b_mat, lb)):
                mat[f, f] += val
                mat[t, t] += val
                mat[f, t] -= val
                mat[t, f] -= val
        for i, entry in enumerate(data.get("shunts", ())):
            where = f"shunts[{i}]"
            b = _req(entry, "bus", where, int)
            if not 0 <= b < n:
                raise ModelError(f"{where}.bus: {b} out of range")
            g_mat[b, b] += _req(entry, "g", where, float)
            b_mat[b, b] += _req(entry, "b", where, float)

        gens = []
        for i, entry in enumerate(_req(data, "generators", "case", list)):
            where = f"generators[{i}]"
            bus = _req(entry, "bus", where, int)
            if bus_type.get(bus) != "generator":
                raise ModelError(
                    f"{where}.bus: bus {bus} is not typed 'generator' in 'buses'"
                )
            try:
                gens.append(
                    Generator(
                        bus=bus,
                        inertia=_req(entry, "inertia", where, float),
                        damping=_req(entry, "damping", where, float),
                        xd=_req(entry, "xd", where, float),
                        xdp=_req(entry, "xdp", where, float),
                        td0p=_req(entry, "td0p", where, float),
                        pm=_req(entry, "pm", where, float),
                        ef=_req(entry, "ef", where, float),
                    )
                )
            except ModelError as exc:
                raise ModelError(f"{where}: {exc}") from None
        machine_buses = {g.bus for g in gens}
        for bid, btype in bus_type.items():
            if btype == "generator" and bid not in machine_buses:
                raise ModelError(
                    f"case: bus {bid} is typed 'generator' but no machine sits on it"
                )

        load_id = np.zeros(n)
        load_iq = np.zeros(n)
        for i, entry in enumerate(_req(data, "loads", "case", list)):
            where = f"loads[{i}]"
            b = _req(entry, "bus", where, int)
            if not 0 <= b < n:
                raise ModelError(f"{where}.bus: {b} out of range")
            load_id[b] += _req(entry, "i_d", where, float)
            load_iq[b] += _req(entry, "i_q", where, float)

        slack = data.get("slack")
        if slack is not None and not isinstance(slack, dict):
            raise ModelError("case.slack: expected an object")
        return PowerCase(
            name=str(data.get("name", "unnamed")),
            conductance=g_mat,
            susceptance=b_mat,
            load_id=load_id,
            load_iq=load_iq,
            generators=tuple(gens),
            slack_bus=None if slack is None else _req(slack, "bus", "slack", int),
            slack_vd=1.0 if slack is None else _req(slack, "vd", "slack", float),
            slack_vq=0.0 if slack is None else _req(slack, "vq", "slack", float),
        )

    @staticmethod
    def from_json(path) -> "PowerCase":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ModelError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ModelError(f"{path}: top level must be a JSON object")
        return PowerCase.from_dict(data)

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")


@dataclass(frozen=True, eq=False)
class PowerLayout:
    """Index map from case quantities into the generic model's vectors."""

    angle_of_gen: np.ndarray  # x index of each rotor angle
    speed_of_gen: np.ndarray
    emf_of_gen: np.ndarray
    gen_bus: np.ndarray
    inertia: np.ndarray
    x_names: tuple[str, ...]
    y_names: tuple[str, ...]


def build_power_dae(case: PowerCase) -> tuple[SemiLinearDae, PowerLayout]:
    """Third-order machines + algebraic network as a semi-linear model.

    Differential states per generator: rotor angle, speed deviation, and the
    transient EMF behind xdp.  Algebraic variables per bus: the dq voltage
    and the dq device injection current.  Constraint rows per bus: the two
    network current-balance equations and two device equations (the stator
    algebra on generator buses, zero injection elsewhere).
    """
    n_bus, n_gen = case.n_bus, case.n_gen
    n_x, n_y = 3 * n_gen, 4 * n_bus
    xi = lambda g, k: 3 * g + k  # angle, speed, emf
    vd = lambda b: 4 * b
    vq = lambda b: 4 * b + 1
    idx_id = lambda b: 4 * b + 2
    idx_iq = lambda b: 4 * b + 3

    terms: list[NonlinearTerm] = []
    term_names: list[str] = []

    def add_term(kind, inputs, name, phase=None):
        terms.append(NonlinearTerm(kind=kind, inputs=inputs, phase=phase))
        term_names.append(name)
        return len(terms) - 1

    f_x = np.zeros((n_x, n_x))
    f_y = np.zeros((n_x, n_y))
    c_f = np.zeros(n_x)
    g_x = np.zeros((n_y, n_x))
    g_y = np.zeros((n_y, n_y))
    c_g = np.zeros(n_y)

    s_f_cols: dict[tuple[int, int], float] = {}
    s_g_cols: dict[tuple[int, int], float] = {}

    for g, gen in enumerate(case.generators):
        b = gen.bus
        a_ref = VarRef(X_SPACE, xi(g, 0))
        # lifted terms for this machine
        t_sin = add_term("sinusoid", (a_ref,), f"gen{g}:sin", phase=0.0)
        t_cos = add_term("sinusoid", (a_ref,), f"gen{g}:cos", phase=math.pi / 2)
        t_emf_cos = add_term(
            "bilinear",
            (VarRef(X_SPACE, xi(g, 2)), VarRef(TERM_SPACE, t_cos)),
            f"gen{g}:emf_cos",
        )
        t_emf_sin = add_term(
            "bilinear",
            (VarRef(X_SPACE, xi(g, 2)), VarRef(TERM_SPACE, t_sin)),
            f"gen{g}:emf_sin",
        )
        t_id_sin = add_term(
            "bilinear",
            (VarRef(Y_SPACE, idx_id(b)), VarRef(TERM_SPACE, t_sin)),
            f"gen{g}:id_sin",
        )
        t_iq_cos = add_term(
            "bilinear",
            (VarRef(Y_SPACE, idx_iq(b)), VarRef(TERM_SPACE, t_cos)),
            f"gen{g}:iq_cos",
        )
        t_pd = add_term(
            "bilinear",
            (VarRef(Y_SPACE, vd(b)), VarRef(Y_SPACE, idx_id(b))),
            f"gen{g}:power_d",
        )
        t_pq = add_term(
            "bilinear",
            (VarRef(Y_SPACE, vq(b)), VarRef(Y_SPACE, idx_iq(b))),
            f"gen{g}:power_q",
        )

        # angle' = speed
        f_x[xi(g, 0), xi(g, 1)] = 1.0
        # speed' = (pm - D*speed - (vd*id + vq*iq)) / M
        f_x[xi(g, 1), xi(g, 1)] = -gen.damping / gen.inertia
        c_f[xi(g, 1)] = gen.pm / gen.inertia
        s_f_cols[(xi(g, 1), t_pd)] = -1.0 / gen.inertia
        s_f_cols[(xi(g, 1), t_pq)] = -1.0 / gen.inertia
        # emf' = (ef - emf - (xd - xdp)*(id*sin - iq*cos)) / td0p
        # (the demagnetizing component of the injected current in the rotor
        # frame whose q-axis carries the transient EMF phasor e*exp(j*angle))
        f_x[xi(g, 2), xi(g, 2)] = -1.0 / gen.td0p
        c_f[xi(g, 2)] = gen.ef / gen.td0p
        k_sal = (gen.xd - gen.xdp) / gen.td0p
        s_f_cols[(xi(g, 2), t_id_sin)] = -k_sal
        s_f_cols[(xi(g, 2), t_iq_cos)] = k_sal

        # stator algebra, from E' = V + j*xdp*I with E' = emf*exp(j*angle)
        # and I the injection into the network:
        #   vd - xdp*iq - emf*cos = 0 ; vq + xdp*id - emf*sin = 0
        g_y[vd(b) + 2, vd(b)] = 1.0  # device row d sits at index 4b+2
        g_y[vd(b) + 2, idx_iq(b)] = -gen.xdp
        s_g_cols[(vd(b) + 2, t_emf_cos)] = -1.0
        g_y[vq(b) + 2, vq(b)] = 1.0  # device row q sits at index 4b+3
        g_y[vq(b) + 2, idx_id(b)] = gen.xdp
        s_g_cols[(vq(b) + 2, t_emf_sin)] = -1.0

    gen_buses = {gen.bus for gen in case.generators}
    for b in range(n_bus):
        # network current balance: Y V = injected - load
        for j in range(n_bus):
            g_y[4 * b, vd(j)] += case.conductance[b, j]
            g_y[4 * b, vq(j)] += -case.susceptance[b, j]
            g_y[4 * b + 1, vd(j)] += case.susceptance[b, j]
            g_y[4 * b + 1, vq(j)] += case.conductance[b, j]
        g_y[4 * b, idx_id(b)] += -1.0
        g_y[4 * b + 1, idx_iq(b)] += -1.0
        c_g[4 * b] = case.load_id[b]
        c_g[4 * b + 1] = case.load_iq[b]
        if b == case.slack_bus:
            # external grid equivalent: voltage phasor pinned, current free
            g_y[4 * b + 2, vd(b)] = 1.0
            c_g[4 * b + 2] = -case.slack_vd
            g_y[4 * b + 3, vq(b)] = 1.0
            c_g[4 * b + 3] = -case.slack_vq
        elif b not in gen_buses:
            # no device: injection current pinned to zero
            g_y[4 * b + 2, idx_id(b)] = 1.0
            g_y[4 * b + 3, idx_iq(b)] = 1.0

    n_t = len(terms)
    s_f = np.zeros((n_x, n_t))
    for (r, t), v in s_f_cols.items():
        s_f[r, t] = v
    s_g = np.zeros((n_y, n_t))
    for (r, t), v in s_g_cols.items():
        s_g[r, t] = v

    x_names = []
    for g in range(n_gen):
        x_names += [f"gen{g}:angle", f"gen{g}:speed", f"gen{g}:emf"]
    y_names = []
    for b in range(n_bus):
        y_names += [f"bus{b}:vd", f"bus{b}:vq", f"bus{b}:id", f"bus{b}:iq"]

    dae = SemiLinearDae(
        f_x=f_x,
        f_y=f_y,
        c_f=c_f,
        s_f=s_f,
        g_x=g_x,
        g_y=g_y,
        c_g=c_g,
        s_g=s_g,
        terms=tuple(terms),
        x_names=tuple(x_names),
        y_names=tuple(y_names),
        term_names=tuple(term_names),
    )
    layout = PowerLayout(
        angle_of_gen=np.array([3 * g for g in range(n_gen)]),
        speed_of_gen=np.array([3 * g + 1 for g in range(n_gen)]),
        emf_of_gen=np.array([3 * g + 2 for g in range(n_gen)]),
        gen_bus=np.array([gen.bus for gen in case.generators]),
        inertia=np.array([gen.inertia for gen in case.generators]),
        x_names=tuple(x_names),
        y_names=tuple(y_names),
    )
    return dae, layout


def rated_case(
    name: str,
    conductance,
    susceptance,
    load_id,
    load_iq,
    machine_params: list[dict],
    angles,
    emfs,
    slack_bus: int | None = None,
    slack_vd: float = 1.0,
    slack_vq: float = 0.0,
) -> PowerCase:
    """Case whose mechanical power and excitation make the chosen operating
    point an exact equilibrium.

    ``machine_params`` carries bus/inertia/damping/xd/xdp/td0p per machine;
    the rotor angles and transient EMFs are prescribed, the matching pm/ef
    are computed from the resulting network solution.
    """
    provisional = PowerCase(
        name=name,
        conductance=conductance,
        susceptance=susceptance,
        load_id=load_id,
        load_iq=load_iq,
        generators=tuple(
            Generator(pm=0.0, ef=1.0, **params) for params in machine_params
        ),
        slack_bus=slack_bus,
        slack_vd=slack_vd,
        slack_vq=slack_vq,
    )
    dae, layout = build_power_dae(provisional)
    x = np.zeros(dae.n_x)
    x[layout.angle_of_gen] = np.asarray(angles, dtype=float)
    x[layout.emf_of_gen] = np.asarray(emfs, dtype=float)
    y = dae.solve_algebraic(x)
    gens = []
    for g, params in enumerate(machine_params):
        b = params["bus"]
        vd_v, vq_v = y[4 * b], y[4 * b + 1]
        id_v, iq_v = y[4 * b + 2], y[4 * b + 3]
        pe = vd_v * id_v + vq_v * iq_v
        delta = float(angles[g])
        emf = float(emfs[g])
        field_reaction = (params["xd"] - params["xdp"]) * (
            id_v * math.sin(delta) - iq_v * math.cos(delta)
        )
        gens.append(
            Generator(pm=float(pe), ef=float(emf + field_reaction), **params)
        )
    return PowerCase(
        name=name,
        conductance=conductance,
        susceptance=susceptance,
        load_id=load_id,
        load_iq=load_iq,
        generators=tuple(gens),
        slack_bus=slack_bus,
        slack_vd=slack_vd,
        slack_vq=slack_vq,
    )


def load_case(name_or_path) -> PowerCase:
    """Load a bundled case by name or any case file by path."""
    p = Path(name_or_path)
    if p.suffix == ".json" and p.exists():
        return PowerCase.from_json(p)
    bundled = Path(__file__).parent / "cases" / f"{name_or_path}.json"
    if bundled.exists():
        return PowerCase.from_json(bundled)
    raise ModelError(
        f"no case named {name_or_path!r}; expected a path to a .json file or "
        f"one of the bundled cases in {bundled.parent}"
    )
