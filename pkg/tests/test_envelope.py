"""Envelope tests. Soundness oracle: the true graph of each nonlinearity,
sampled densely, must satisfy every envelope inequality; tightness oracles
are closed-form values frozen below and defining-property checks (a tangent
line touches the curve without crossing it)."""

import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polyreach.envelope import (
    EnvelopeSet,
    EnvelopeWidthError,
    Interval,
    assemble_gamma,
    build_term_envelopes,
    envelopes_to_csv,
    mccormick,
    sin_envelope,
)

# frozen closed-form values
CHORD_SLOPE_QUARTER = 0.9003163161571062  # 2*sqrt(2)/pi
COS_QUARTER = 0.7071067811865476
SIN_26 = 0.5155013718214642


def u_range_at(env: EnvelopeSet, delta: float):
    """Admissible output range at a fixed scalar input (sinusoid envelopes)."""
    lo_u, hi_u = -np.inf, np.inf
    for (cd, cu), r in zip(env.coeffs, env.rhs):
        if cu > 0:
            hi_u = min(hi_u, (r - cd * delta) / cu)
        else:
            lo_u = max(lo_u, (cd * delta - r) / (-cu))
    return lo_u, hi_u


def boundary_curves(env: EnvelopeSet, grid: np.ndarray):
    up = np.full_like(grid, np.inf)
    lo = np.full_like(grid, -np.inf)
    for (cd, cu), r in zip(env.coeffs, env.rhs):
        if cu > 0:
            up = np.minimum(up, (r - cd * grid) / cu)
        else:
            lo = np.maximum(lo, (cd * grid - r) / (-cu))
    return lo, up


# ---------------------------------------------------------------------------
# Interval basics


def test_interval_validation():
    with pytest.raises(ValueError):
        Interval(1.0, 0.0)
    with pytest.raises(ValueError):
        Interval(float("nan"), 1.0)
    iv = Interval(1.0, 1.0 - 1e-13)  # rounding-level inversion collapses
    assert iv.width == 0.0
    assert Interval(-1.0, 2.0).mid == 0.5
    assert Interval(0.0, 1.0).contains(0.5)
    assert Interval(0.0, 1.0).encloses(Interval(0.2, 0.8))
    assert not Interval(0.0, 1.0).encloses(Interval(0.2, 1.2))


# ---------------------------------------------------------------------------
# McCormick


def test_mccormick_sound_and_corner_exact():
    rng = np.random.default_rng(3)
    for _ in range(300):
        xl, yl = rng.uniform(-3, 3, 2)
        x = Interval(xl, xl + rng.uniform(0, 2.5))
        y = Interval(yl, yl + rng.uniform(0, 2.5))
        env = mccormick(x, y)
        xs = rng.uniform(x.lo, x.hi, 30)
        ys = rng.uniform(y.lo, y.hi, 30)
        assert env.violation(xs, ys, xs * ys).max() <= 1e-9
        corners = [x.lo * y.lo, x.lo * y.hi, x.hi * y.lo, x.hi * y.hi]
        assert env.output_bounds.lo == pytest.approx(min(corners), abs=1e-12)
        assert env.output_bounds.hi == pytest.approx(max(corners), abs=1e-12)
        for cx in (x.lo, x.hi):
            for cy in (y.lo, y.hi):
                # at a corner the planes pinch the product exactly
                lo_u, hi_u = -np.inf, np.inf
                for (a, b, cu), r in zip(env.coeffs, env.rhs):
                    v = (r - a * cx - b * cy) / abs(cu)
                    if cu > 0:
                        hi_u = min(hi_u, v)
                    else:
                        lo_u = max(lo_u, -v)
                assert hi_u - cx * cy == pytest.approx(0.0, abs=1e-9)
                assert cx * cy - lo_u == pytest.approx(0.0, abs=1e-9)


def test_mccormick_degenerate_input_is_exact():
    # pinned first factor: the relaxation collapses to the exact linear relation
    env = mccormick(Interval(2.0, 2.0), Interval(-1.0, 3.0))
    ys = np.linspace(-1.0, 3.0, 7)
    up = np.full_like(ys, np.inf)
    lo = np.full_like(ys, -np.inf)
    for (a, b, cu), r in zip(env.coeffs, env.rhs):
        if cu > 0:
            up = np.minimum(up, (r - a * 2.0 - b * ys) / cu)
        else:
            lo = np.maximum(lo, (a * 2.0 + b * ys - r) / (-cu))
    assert np.allclose(lo, 2.0 * ys, atol=1e-12)
    assert np.allclose(up, 2.0 * ys, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    xl=st.floats(-4, 4),
    xw=st.floats(0, 3),
    yl=st.floats(-4, 4),
    yw=st.floats(0, 3),
    data=st.data(),
)
def test_mccormick_soundness_property(xl, xw, yl, yw, data):
    x, y = Interval(xl, xl + xw), Interval(yl, yl + yw)
    env = mccormick(x, y)
    px = data.draw(st.floats(x.lo, x.hi))
    py = data.draw(st.floats(y.lo, y.hi))
    assert env.violation(px, py, px * py) <= 1e-9
    assert env.output_bounds.lo - 1e-9 <= px * py <= env.output_bounds.hi + 1e-9


# ---------------------------------------------------------------------------
# sinusoid: frozen worked examples


def test_sin_symmetric_straddle_quarter_pi():
    # [-pi/4, pi/4]: increasing through the inflection at 0, both tangent
    # pairs admissible, so no chord row and the output interval is exact.
    env = sin_envelope(Interval(-math.pi / 4, math.pi / 4), 0.0)
    slopes = set()
    for (cd, cu), _ in zip(env.coeffs, env.rhs):
        slopes.add(round(-cd / cu if cu > 0 else cd / (-cu), 9))
    # endpoint tangents on both sides
    assert round(COS_QUARTER, 9) in slopes
    # chord slope must NOT appear as a bounding line here
    assert round(CHORD_SLOPE_QUARTER, 9) not in slopes
    assert env.output_bounds.lo == pytest.approx(-COS_QUARTER, abs=1e-12)
    assert env.output_bounds.hi == pytest.approx(COS_QUARTER, abs=1e-12)
    # chord-slope sanity for the frozen constant
    w = math.pi / 2
    assert (math.sin(math.pi / 4) - math.sin(-math.pi / 4)) / w == pytest.approx(
        CHORD_SLOPE_QUARTER, abs=1e-15
    )


def test_sin_through_endpoint_lines_are_tangent():
    # the fourth line passes through one endpoint and touches the curve
    env = sin_envelope(Interval(-math.pi / 4, math.pi / 4), 0.0)
    grid = np.linspace(-math.pi / 4, math.pi / 4, 20001)
    f = np.sin(grid)
    lo_b, up_b = boundary_curves(env, grid)
    assert (up_b - f).min() >= -1e-9  # never crosses below
    assert (f - lo_b).min() >= -1e-9
    # upper boundary touches the curve somewhere strictly inside each half
    interior = (grid > -math.pi / 4 + 0.05) & (grid < -0.05)
    assert (up_b - f)[(grid > 0.05) & (grid < math.pi / 4 - 0.05)].min() < 1e-7
    assert (f - lo_b)[interior].min() < 1e-7


def test_sin_convex_interval_frozen():
    # [-2.6, -1.2]: curvature one-signed (convex), chord on top, the interior
    # dip is capped exactly at -1 because the true minimum sits inside.
    env = sin_envelope(Interval(-2.6, -1.2), 0.0)
    assert env.output_bounds.lo == pytest.approx(-1.0, abs=1e-12)
    assert env.output_bounds.hi == pytest.approx(-SIN_26, abs=1e-12)
    grid = np.linspace(-2.6, -1.2, 4001)
    f = np.sin(grid)
    lo_b, up_b = boundary_curves(env, grid)
    assert (up_b - f).min() >= -1e-9
    assert (f - lo_b).min() >= -1e-9
    # chord endpoints exact
    for end in (-2.6, -1.2):
        lo_u, hi_u = u_range_at(env, end)
        assert hi_u == pytest.approx(math.sin(end), abs=1e-9)
        assert lo_u == pytest.approx(math.sin(end), abs=1e-9)


def test_sin_concave_interval_frozen():
    env = sin_envelope(Interval(1.2, 2.6), 0.0)
    assert env.output_bounds.hi == pytest.approx(1.0, abs=1e-12)
    assert env.output_bounds.lo == pytest.approx(SIN_26, abs=1e-12)


def test_sin_decreasing_straddle():
    # mirror of the quarter-pi example around pi
    env = sin_envelope(Interval(math.pi - math.pi / 4, math.pi + math.pi / 4), 0.0)
    assert env.output_bounds.lo == pytest.approx(-COS_QUARTER, abs=1e-12)
    assert env.output_bounds.hi == pytest.approx(COS_QUARTER, abs=1e-12)
    grid = np.linspace(math.pi - math.pi / 4, math.pi + math.pi / 4, 2001)
    f = np.sin(grid)
    lo_b, up_b = boundary_curves(env, grid)
    assert (up_b - f).min() >= -1e-9
    assert (f - lo_b).min() >= -1e-9


def test_sin_one_sided_chord_fallback():
    # [-0.05, 1.5]: straddles 0 going up; the slope at the left endpoint
    # exceeds the chord slope, so the lower side must fall back to the chord
    # (an endpoint tangent would cut into the curve on the far side).
    lo, hi = -0.05, 1.5
    env = sin_envelope(Interval(lo, hi), 0.0)
    m = (math.sin(hi) - math.sin(lo)) / (hi - lo)
    assert math.cos(lo) > m  # the configuration under test
    grid = np.linspace(lo, hi, 8001)
    f = np.sin(grid)
    lo_b, up_b = boundary_curves(env, grid)
    assert (f - lo_b).min() >= -1e-9
    assert (up_b - f).min() >= -1e-9
    # the chord is the active lower bound at both endpoints
    for end in (lo, hi):
        l_u, h_u = u_range_at(env, end)
        assert l_u == pytest.approx(math.sin(end), abs=1e-9)
        assert h_u == pytest.approx(math.sin(end), abs=1e-9)
    # an endpoint tangent at the left end WOULD be unsound: demonstrate the
    # repaired construction does not include it
    bad = math.sin(lo) + math.cos(lo) * (grid - lo)
    assert (f - bad).min() < -1e-4  # the rejected line crosses the curve
    assert (f - lo_b).min() >= -1e-9


def test_sin_zero_width_collapses():
    env = sin_envelope(Interval(0.37, 0.37), 1.1)
    val = math.sin(0.37 + 1.1)
    lo_u, hi_u = u_range_at(env, 0.37)
    assert lo_u == pytest.approx(val, abs=1e-12)
    assert hi_u == pytest.approx(val, abs=1e-12)
    assert env.output_bounds.lo == pytest.approx(val, abs=1e-12)


def test_sin_width_limit():
    sin_envelope(Interval(0.0, math.pi / 2), 0.0)  # exactly at the limit: fine
    with pytest.raises(EnvelopeWidthError) as exc:
        sin_envelope(Interval(0.0, math.pi / 2 + 0.01), 0.0)
    assert exc.value.width == pytest.approx(math.pi / 2 + 0.01)


def test_sin_endpoint_tightness_random():
    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(500):
        lo = rng.uniform(-7, 7)
        iv = Interval(lo, lo + rng.uniform(0, math.pi / 2))
        ph = rng.uniform(-7, 7)
        env = sin_envelope(iv, ph)
        for end in (iv.lo, iv.hi):
            f = math.sin(end + ph)
            l_u, h_u = u_range_at(env, end)
            worst = max(worst, abs(h_u - f), abs(f - l_u))
    assert worst <= 1e-9


def test_sin_gap_shrinks_quadratically():
    # halving the width must cut the worst-case gap at least ~4x
    def gap(center, w):
        env = sin_envelope(Interval(center - w / 2, center + w / 2), 0.0)
        grid = np.linspace(center - w / 2, center + w / 2, 4001)
        f = np.sin(grid)
        lo_b, up_b = boundary_curves(env, grid)
        return max((up_b - f).max(), (f - lo_b).max())

    for center in (-1.9, 0.0, 1.3):
        g_wide, g_half = gap(center, 0.8), gap(center, 0.4)
        assert g_half <= 0.30 * g_wide


def test_sin_interval_nesting_random():
    # narrowing the input interval never loosens the implied output interval
    rng = np.random.default_rng(7)
    for _ in range(5000):
        lo = rng.uniform(-7, 7)
        w = rng.uniform(1e-6, math.pi / 2)
        ph = rng.uniform(-4, 4)
        a, b = sorted(rng.uniform(0, w, 2))
        big = sin_envelope(Interval(lo, lo + w), ph)
        small = sin_envelope(Interval(lo + a, lo + b), ph)
        assert big.output_bounds.encloses(small.output_bounds, tol=1e-12)


@settings(max_examples=150, deadline=None)
@given(
    lo=st.floats(-30.0, 30.0),
    w=st.floats(0.0, math.pi / 2),
    ph=st.floats(-30.0, 30.0),
    data=st.data(),
)
def test_sin_soundness_property(lo, w, ph, data):
    iv = Interval(lo, lo + w)
    env = sin_envelope(iv, ph)
    d = data.draw(st.floats(iv.lo, iv.hi))
    f = math.sin(d + ph)
    assert env.violation(d, f) <= 1e-9
    assert env.output_bounds.lo - 1e-9 <= f <= env.output_bounds.hi + 1e-9
    l_u, h_u = u_range_at(env, d)
    assert l_u - 1e-9 <= f <= h_u + 1e-9
    assert h_u <= 1.0 + 1e-9 and l_u >= -1.0 - 1e-9


# ---------------------------------------------------------------------------
# assembly over a term list (duck-typed model stub)


def _ref(space, index):
    return SimpleNamespace(space=space, index=index)


def _fake_dae():
    terms = [
        SimpleNamespace(kind="sinusoid", inputs=(_ref("x", 0),), phase=0.3),
        SimpleNamespace(kind="bilinear", inputs=(_ref("term", 0), _ref("y", 0)), phase=None),
        SimpleNamespace(kind="bilinear", inputs=(_ref("x", 1), _ref("term", 0)), phase=None),
    ]
    return SimpleNamespace(terms=terms, g_closure={0, 2})


def test_build_term_envelopes_chains_outputs():
    dae = _fake_dae()
    x_bounds = [Interval(-0.2, 0.4), Interval(1.0, 1.5)]
    y_bounds = [Interval(-2.0, 2.0)]
    envs = build_term_envelopes(dae, x_bounds, y_bounds)
    assert set(envs) == {0, 1, 2}
    assert envs[0].kind == "sinusoid"
    assert envs[1].input_bounds[0] == envs[0].output_bounds
    assert envs[1].input_bounds[1] == y_bounds[0]
    assert envs[2].input_bounds[1] == envs[0].output_bounds
    assert envs[1].term_index == 1


def test_build_term_envelopes_closure_only_needs_no_y():
    dae = _fake_dae()
    x_bounds = [Interval(-0.2, 0.4), Interval(1.0, 1.5)]
    envs = build_term_envelopes(dae, x_bounds, y_bounds=None, g_closure_only=True)
    assert set(envs) == {0, 2}
    with pytest.raises(ValueError):
        build_term_envelopes(dae, x_bounds, y_bounds=None)


def test_assemble_gamma_split():
    dae = _fake_dae()
    x_bounds = [Interval(-0.2, 0.4), Interval(1.0, 1.5)]
    y_bounds = [Interval(-2.0, 2.0)]
    gamma_f, gamma_g = assemble_gamma(dae, x_bounds, y_bounds)
    assert [e.term_index for e in gamma_g] == [0, 2]
    assert [e.term_index for e in gamma_f] == [1]


def test_envelope_width_error_names_term():
    dae = _fake_dae()
    x_bounds = [Interval(-2.0, 2.0), Interval(1.0, 1.5)]
    with pytest.raises(EnvelopeWidthError) as exc:
        build_term_envelopes(dae, x_bounds, [Interval(0, 1)])
    assert "term 0" in str(exc.value)


def test_envelopes_to_csv(tmp_path):
    dae = _fake_dae()
    envs = build_term_envelopes(
        dae, [Interval(-0.2, 0.4), Interval(1.0, 1.5)], [Interval(-2.0, 2.0)]
    )
    out = tmp_path / "envs.csv"
    envelopes_to_csv(envs, out)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "term,kind,row,coefficients,rhs"
    assert len(lines) == 1 + sum(e.coeffs.shape[0] for e in envs.values())
