"""Quality gates for the bundled cases.  Each case must expose a genuine
equilibrium reachable from a flat start, a strictly Hurwitz linearization
there, and explicit-Euler contraction at the default 0.1 step, because the
certification machinery is only meaningful under those conditions."""

import numpy as np
import pytest

from polyreach.model import ModelError, build_power_dae, load_case, solve_equilibrium
from polyreach.reach import bisect_epsilon
from polyreach.template import build_fixed_template, real_eigen_decompose

BUNDLED = ["two_bus", "ieee14_shaped", "ieee39_shaped"]
DT = 0.1


def equilibrium(dae, layout):
    flat = np.zeros(dae.n_x)
    flat[layout.emf_of_gen] = 1.0
    return solve_equilibrium(dae, flat, tol=1e-12)


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_case_is_certifiable_material(name):
    case = load_case(name)
    dae, layout = build_power_dae(case)
    x_eq, y_eq = equilibrium(dae, layout)
    assert np.max(np.abs(dae.f(x_eq, y_eq))) < 1e-10
    assert np.max(np.abs(dae.g(x_eq, y_eq))) < 1e-10

    jac = dae.reduced_jacobian(x_eq, y_eq)
    lam = np.linalg.eigvals(jac)
    assert np.max(lam.real) < -0.02
    assert np.max(np.abs(1.0 + DT * lam)) < 0.995

    # every mode fits a facet fan of reasonable size
    tpl = build_fixed_template(real_eigen_decompose(jac))
    assert tpl.k <= 8 * dae.n_x


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_case_sizes(name):
    case = load_case(name)
    expect = {"two_bus": (2, 1, 1), "ieee14_shaped": (14, 4, 0), "ieee39_shaped": (39, 10, 15)}
    assert (case.n_bus, case.n_gen, case.slack_bus) == expect[name]
    dae, _ = build_power_dae(case)
    assert dae.n_x == 3 * case.n_gen
    assert dae.n_y == 4 * case.n_bus


def test_two_bus_certificate_is_negative():
    case = load_case("two_bus")
    dae, layout = build_power_dae(case)
    x_eq, y_eq = equilibrium(dae, layout)
    tpl = build_fixed_template(real_eigen_decompose(dae.reduced_jacobian(x_eq, y_eq)))
    # at full scale the curvature slack outweighs the linear contraction, so
    # the bisection has to find a strictly smaller certified neighborhood
    eps, probes = bisect_epsilon(dae, tpl.rows, 0.05 * tpl.unit_offsets, x_eq)
    assert 0.0 < eps < 1.0
    assert dict(probes)[eps] < 0.0


def test_load_case_unknown_name():
    with pytest.raises(ModelError, match="no case named"):
        load_case("mystery_grid")
