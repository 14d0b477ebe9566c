"""Linear envelopes for the lifted nonlinear terms.

Each bilinear product and each phase-shifted sinusoid that appears in the
semi-linear model is replaced in the step programs by a fresh variable ``u``
tied to its inputs through a small set of affine inequalities.  The
inequalities are chosen so that the true graph of the nonlinearity over the
current input box always satisfies them (outer soundness), they are exact at
the box corners, and their gap to the graph shrinks quadratically with the
input width.

Bilinear products use the four McCormick planes.  Sinusoids use four lines
(two endpoint tangents, a chord, and a line through an endpoint that is
tangent to the curve) whose arrangement depends on whether the interval is
convex, concave, or straddles an inflection point; the branch is keyed to the
location of the inflection because endpoint-slope comparisons alone
misclassify straddling intervals and silently break outer soundness.  The
constant bound |u| <= 1 is always included for sinusoids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

TIE_TOL = 1e-12
MAX_SIN_WIDTH = math.pi / 2.0


class EnvelopeWidthError(ValueError):
    """A sinusoid input interval exceeds the half-period-quarter width limit."""

    def __init__(self, width: float, limit: float = MAX_SIN_WIDTH, detail: str = ""):
        self.width = width
        self.limit = limit
        msg = f"sinusoid input width {width:.6g} exceeds limit {limit:.6g}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if math.isnan(lo) or math.isnan(hi):
            raise ValueError("interval bound is NaN")
        if lo > hi + TIE_TOL:
            raise ValueError(f"empty interval [{lo}, {hi}]")
        if lo > hi:  # collapse rounding-level inversions
            lo = hi = 0.5 * (lo + hi)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, v: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= v <= self.hi + tol

    def encloses(self, other: "Interval", tol: float = 0.0) -> bool:
        return self.lo - tol <= other.lo and other.hi <= self.hi + tol


@dataclass(frozen=True, eq=False)
class EnvelopeSet:
    """Affine relaxation of one lifted term.

    ``coeffs`` has one column per input followed by one column for the lifted
    output; every row encodes ``coeffs @ (inputs..., u) <= rhs``.
    ``output_bounds`` is the interval implied for ``u`` by the rows over the
    input box, used when this term feeds another term downstream.
    """

    kind: str
    coeffs: np.ndarray
    rhs: np.ndarray
    input_bounds: tuple[Interval, ...]
    output_bounds: Interval
    term_index: int | None = None
    input_refs: tuple | None = None

    def bind(self, term_index: int, input_refs: tuple) -> "EnvelopeSet":
        return replace(self, term_index=term_index, input_refs=input_refs)

    def violation(self, *coords) -> np.ndarray:
        """Max inequality violation at the given input.../output coordinates."""
        pts = np.stack([np.asarray(c, dtype=float) for c in coords], axis=-1)
        resid = pts @ self.coeffs.T - self.rhs
        return np.max(resid, axis=-1)


# ---------------------------------------------------------------------------
# bilinear products


def mccormick(x: Interval, y: Interval) -> EnvelopeSet:
    """Four-plane envelope of u = x*y over a box, exact at the corners."""
    xl, xh, yl, yh = x.lo, x.hi, y.lo, y.hi
    coeffs = np.array(
        [
            [yl, xl, -1.0],
            [yh, xh, -1.0],
            [-yl, -xh, 1.0],
            [-yh, -xl, 1.0],
        ]
    )
    rhs = np.array([xl * yl, xh * yh, -xh * yl, -xl * yh])
    corners = (xl * yl, xl * yh, xh * yl, xh * yh)
    return EnvelopeSet(
        kind="bilinear",
        coeffs=coeffs,
        rhs=rhs,
        input_bounds=(x, y),
        output_bounds=Interval(min(corners), max(corners)),
    )


# ---------------------------------------------------------------------------
# sinusoids

# Internally a line (a, c) stands for the affine function a*delta + c. "uppers"
# bound u from above, "lowers" from below.


def _pwl_output_interval(uppers, lowers, dom: Interval) -> Interval:
    def candidates(lines):
        pts = [dom.lo, dom.hi]
        for i in range(len(lines)):
            for j in range(i + 1, len(lines)):
                a1, c1 = lines[i]
                a2, c2 = lines[j]
                if abs(a1 - a2) > 1e-14:
                    d = (c2 - c1) / (a1 - a2)
                    if dom.lo < d < dom.hi:
                        pts.append(d)
        return pts

    hi = max(min(a * d + c for a, c in uppers) for d in candidates(uppers))
    lo = min(max(a * d + c for a, c in lowers) for d in candidates(lowers))
    return Interval(lo, hi)


def _tangency_through(point: float, lo: float, hi: float, phase: float) -> float:
    """Root of the tangency condition for the line through (point, sin(point+phase))."""

    def g(eta):
        return math.cos(eta + phase) * (point - eta) - (
            math.sin(point + phase) - math.sin(eta + phase)
        )

    glo, ghi = g(lo), g(hi)
    if glo == 0.0:
        return lo
    if ghi == 0.0:
        return hi
    if glo * ghi > 0.0:
        # tie within rounding of the branch condition; collapse to the endpoint
        return lo if abs(glo) < abs(ghi) else hi
    return brentq(g, lo, hi, xtol=1e-14)


def _convex_lines(lo: float, hi: float, phase: float):
    """Envelope lines for a region where sin(delta+phase) is convex."""
    f = lambda d: math.sin(d + phase)
    fp = lambda d: math.cos(d + phase)
    m = (f(hi) - f(lo)) / (hi - lo)
    lowers = [(0.0, -1.0), (fp(lo), f(lo) - fp(lo) * lo), (fp(hi), f(hi) - fp(hi) * hi)]
    # line with the chord slope, tangent to the curve: fp is increasing here
    def h(c):
        return fp(c) - m

    hlo, hhi = h(lo), h(hi)
    if hlo * hhi < 0.0:
        cstar = brentq(h, lo, hi, xtol=1e-14)
    else:
        cstar = lo if abs(hlo) <= abs(hhi) else hi
    lowers.append((m, f(cstar) - m * cstar))
    uppers = [(0.0, 1.0), (m, f(hi) - m * hi)]
    return uppers, lowers


def _increasing_straddle_lines(lo: float, hi: float, phase: float, dp: float):
    """Envelope lines for an increasing region with an inflection at dp."""
    f = lambda d: math.sin(d + phase)
    fp = lambda d: math.cos(d + phase)
    m = (f(hi) - f(lo)) / (hi - lo)
    uppers = [(0.0, 1.0)]
    lowers = [(0.0, -1.0)]
    if fp(lo) <= m + TIE_TOL:
        # tangent at the convex-side endpoint stays below the curve, and so
        # does the line through the upper endpoint tangent on the convex side
        lowers.append((fp(lo), f(lo) - fp(lo) * lo))
        eta = _tangency_through(hi, lo, dp, phase)
        s = fp(eta)
        lowers.append((s, f(hi) - s * hi))
    else:
        lowers.append((m, f(lo) - m * lo))
    if fp(hi) <= m + TIE_TOL:
        uppers.append((fp(hi), f(hi) - fp(hi) * hi))
        eta = _tangency_through(lo, dp, hi, phase)
        s = fp(eta)
        uppers.append((s, f(lo) - s * lo))
    else:
        uppers.append((m, f(hi) - m * hi))
    return uppers, lowers


def _negate_lines(uppers, lowers):
    # mapping u -> -u swaps and negates the two families
    new_uppers = [(-a, -c) for a, c in lowers]
    new_lowers = [(-a, -c) for a, c in uppers]
    return new_uppers, new_lowers


def sin_envelope(delta: Interval, phase: float = 0.0) -> EnvelopeSet:
    """Envelope of u = sin(delta + phase) over an interval of width <= pi/2."""
    lo, hi = delta.lo, delta.hi
    width = hi - lo
    if width > MAX_SIN_WIDTH + TIE_TOL:
        raise EnvelopeWidthError(width)
    if width <= TIE_TOL:
        val = math.sin(delta.mid + phase)
        uppers, lowers = [(0.0, val)], [(0.0, val)]
    else:
        a, b = lo + phase, hi + phase
        k = math.ceil(a / math.pi)
        p = k * math.pi
        interior = (p - a) > TIE_TOL and (b - p) > TIE_TOL
        if not interior:
            # one-signed curvature on the whole interval
            if math.sin(0.5 * (a + b)) <= 0.0:
                uppers, lowers = _convex_lines(lo, hi, phase)
            else:
                uppers, lowers = _negate_lines(*_convex_lines(lo, hi, phase + math.pi))
        else:
            increasing = k % 2 == 0
            dp = p - phase
            if increasing:
                uppers, lowers = _increasing_straddle_lines(lo, hi, phase, dp)
            else:
                uppers, lowers = _negate_lines(
                    *_increasing_straddle_lines(lo, hi, phase + math.pi, dp)
                )
    rows = []
    rhs = []
    for aa, cc in uppers:  # u <= aa*delta + cc
        rows.append([-aa, 1.0])
        rhs.append(cc)
    for aa, cc in lowers:  # u >= aa*delta + cc
        rows.append([aa, -1.0])
        rhs.append(-cc)
    out = _pwl_output_interval(uppers, lowers, delta)
    out = Interval(max(out.lo, -1.0), min(out.hi, 1.0))
    return EnvelopeSet(
        kind="sinusoid",
        coeffs=np.array(rows),
        rhs=np.array(rhs),
        input_bounds=(delta,),
        output_bounds=out,
    )


# ---------------------------------------------------------------------------
# assembly over a model's term list


def build_term_envelopes(dae, x_bounds, y_bounds=None, g_closure_only=False):
    """Envelope per nonlinear term, in term order.

    Terms are processed in dependency order so that a trig output feeding a
    bilinear product contributes the interval implied by its own envelope.
    With ``g_closure_only`` the y-independent closure that constrains the
    algebraic residual is built, which is what the algebraic-variable bound
    programs need before any y interval exists.
    """
    x_bounds = list(x_bounds)
    envelopes: dict[int, EnvelopeSet] = {}
    for idx, term in enumerate(dae.terms):
        if g_closure_only and idx not in dae.g_closure:
            continue
        bounds = []
        for ref in term.inputs:
            if ref.space == "x":
                bounds.append(x_bounds[ref.index])
            elif ref.space == "y":
                if y_bounds is None:
                    raise ValueError(
                        f"term {idx} needs algebraic bounds that are not available yet"
                    )
                bounds.append(y_bounds[ref.index])
            else:
                bounds.append(envelopes[ref.index].output_bounds)
        if term.kind == "sinusoid":
            try:
                env = sin_envelope(bounds[0], term.phase)
            except EnvelopeWidthError as exc:
                raise EnvelopeWidthError(
                    exc.width, exc.limit, detail=f"term {idx}"
                ) from None
        else:
            env = mccormick(bounds[0], bounds[1])
        envelopes[idx] = env.bind(idx, term.inputs)
    return envelopes


def assemble_gamma(dae, x_bounds, y_bounds):
    """Split the term envelopes into the differential and algebraic families.

    Returns ``(gamma_f, gamma_g)``: the envelopes whose terms feed the
    algebraic residual (and their upstream trig factors, all functions of the
    differential state only) and everything else.
    """
    envelopes = build_term_envelopes(dae, x_bounds, y_bounds)
    gamma_f = [envelopes[i] for i in range(len(dae.terms)) if i not in dae.g_closure]
    gamma_g = [envelopes[i] for i in sorted(dae.g_closure)]
    return gamma_f, gamma_g


def envelopes_to_csv(envelopes, path) -> None:
    """Dump envelope rows for debugging (one inequality per line)."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("term,kind,row,coefficients,rhs\n")
        items = envelopes.items() if isinstance(envelopes, dict) else enumerate(envelopes)
        for key, env in items:
            for r, (row, rhs) in enumerate(zip(env.coeffs, env.rhs)):
                coefs = ";".join(f"{v:.17g}" for v in row)
                fh.write(f"{key},{env.kind},{r},{coefs},{rhs:.17g}\n")
