#!/usr/bin/env python3
"""Generate the bundled example cases.

Every case is built so its listed operating point is an exact equilibrium:
rotor angles and transient EMFs are prescribed, and the matching mechanical
power and excitation are solved from the network equations.  The script then
verifies, for each case, that

  * the stated point really zeroes the full residual,
  * a damped Newton solve from a flat start recovers the same point,
  * the reduced Jacobian there is strictly Hurwitz,
  * an explicit Euler step at the default step size contracts every mode,
  * each oscillatory mode admits a polygonal fan within the facet budget.

The 14- and 39-bus cases reuse well-known transmission topologies, but the
machine parameters and line strengths are reconstructed for the slow,
heavily-damped regime this package targets; they are not calibrated to any
published system and should not be read as such.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from polyreach.model import build_power_dae, rated_case, solve_equilibrium
from polyreach.template import rays_for_ratio, real_eigen_decompose

DT = 0.1
OUT_DIR = Path(__file__).resolve().parents[1] / "src" / "polyreach" / "cases"


def ybus(n_bus, lines, x_scale=1.0):
    """Bus admittance from (from, to, r, x) series branches, reactance scaled."""
    y = np.zeros((n_bus, n_bus), dtype=complex)
    for f, t, r, x in lines:
        adm = 1.0 / complex(r * x_scale, x * x_scale)
        y[f, f] += adm
        y[t, t] += adm
        y[f, t] -= adm
        y[t, f] -= adm
    return y


def loads_vec(n_bus, entries):
    load_id = np.zeros(n_bus)
    load_iq = np.zeros(n_bus)
    for bus, i_d, i_q in entries:
        load_id[bus] = i_d
        load_iq[bus] = i_q
    return load_id, load_iq


def check_case(case, angles, emfs):
    """Verify the dynamic quality gates; return a mode report string."""
    dae, layout = build_power_dae(case)
    x_star = np.zeros(dae.n_x)
    x_star[layout.angle_of_gen] = angles
    x_star[layout.emf_of_gen] = emfs
    y_star = dae.solve_algebraic(x_star)
    f_res = np.max(np.abs(dae.f(x_star, y_star)))
    g_res = np.max(np.abs(dae.g(x_star, y_star)))
    assert f_res < 1e-10 and g_res < 1e-10, (
        f"{case.name}: constructed point is not an equilibrium "
        f"(|f|={f_res:.2e}, |g|={g_res:.2e})"
    )

    flat = np.zeros(dae.n_x)
    flat[layout.emf_of_gen] = 1.0
    x_eq, _ = solve_equilibrium(dae, flat, tol=1e-12)
    assert np.allclose(x_eq, x_star, atol=1e-7), (
        f"{case.name}: flat-start Newton found a different equilibrium "
        f"(max dev {np.max(np.abs(x_eq - x_star)):.2e})"
    )

    jac = dae.reduced_jacobian(x_star, y_star)
    lam = np.linalg.eigvals(jac)
    worst_re = float(np.max(lam.real))
    assert worst_re < -0.02, f"{case.name}: weakly damped mode (re={worst_re:.4f})"
    growth = np.abs(1.0 + DT * lam)
    assert growth.max() < 0.995, (
        f"{case.name}: explicit Euler at dt={DT} does not contract "
        f"(growth {growth.max():.4f})"
    )

    lines = [f"{case.name}: n_x={dae.n_x}  modes:"]
    for blk in real_eigen_decompose(jac).blocks:
        if blk.is_complex:
            m = rays_for_ratio(blk.decay_ratio)
            lines.append(
                f"  {blk.sigma:+.4f} ± {blk.omega:.4f}j   "
                f"ratio {blk.decay_ratio:.3f}  fan m={m}"
            )
        else:
            lines.append(f"  {blk.sigma:+.4f}")
    return "\n".join(lines)


def two_bus():
    y = ybus(2, [(0, 1, 0.02, 0.35)])
    case = rated_case(
        "two_bus",
        conductance=y.real,
        susceptance=y.imag,
        load_id=np.zeros(2),
        load_iq=np.zeros(2),
        machine_params=[
            dict(bus=0, inertia=12.0, damping=4.0, xd=1.2, xdp=0.3, td0p=8.0)
        ],
        angles=[0.25],
        emfs=[1.05],
        slack_bus=1,
    )
    return case, [0.25], [1.05]


# IEEE 14-bus branch list (0-indexed endpoints, series r and x per unit);
# topology only — strengths are rescaled below.
IEEE14_LINES = [
    (0, 1, 0.01938, 0.05917),
    (0, 4, 0.05403, 0.22304),
    (1, 2, 0.04699, 0.19797),
    (1, 3, 0.05811, 0.17632),
    (1, 4, 0.05695, 0.17388),
    (2, 3, 0.06701, 0.17103),
    (3, 4, 0.01335, 0.04211),
    (3, 6, 0.0, 0.20912),
    (3, 8, 0.0, 0.55618),
    (4, 5, 0.0, 0.25202),
    (5, 10, 0.09498, 0.19890),
    (5, 11, 0.12291, 0.25581),
    (5, 12, 0.06615, 0.13027),
    (6, 7, 0.0, 0.17615),
    (6, 8, 0.0, 0.11001),
    (8, 9, 0.03181, 0.08450),
    (8, 13, 0.12711, 0.27038),
    (9, 10, 0.08205, 0.19207),
    (11, 12, 0.22092, 0.19988),
    (12, 13, 0.17093, 0.34802),
]


def ieee14_shaped():
    y = ybus(14, IEEE14_LINES, x_scale=3.0)
    load_id, load_iq = loads_vec(
        14,
        [
            (3, 0.25, -0.08),
            (4, 0.20, -0.06),
            (8, 0.15, -0.05),
            (9, 0.10, -0.03),
            (10, 0.12, -0.04),
            (11, 0.10, -0.03),
            (12, 0.15, -0.05),
            (13, 0.18, -0.06),
        ],
    )
    angles = [0.22, 0.18, 0.12, 0.16]
    emfs = [1.06, 1.05, 1.04, 1.06]
    case = rated_case(
        "ieee14_shaped",
        conductance=y.real,
        susceptance=y.imag,
        load_id=load_id,
        load_iq=load_iq,
        machine_params=[
            dict(bus=1, inertia=13.0, damping=4.6, xd=1.10, xdp=0.28, td0p=8.0),
            dict(bus=2, inertia=12.0, damping=4.2, xd=1.15, xdp=0.30, td0p=8.0),
            dict(bus=5, inertia=11.0, damping=4.0, xd=1.20, xdp=0.30, td0p=8.5),
            dict(bus=7, inertia=12.5, damping=4.4, xd=1.10, xdp=0.26, td0p=8.0),
        ],
        angles=angles,
        emfs=emfs,
        slack_bus=0,
    )
    return case, angles, emfs


# New England 39-bus branch list (0-indexed endpoints, series r and x);
# topology only — strengths are rescaled below.
IEEE39_LINES = [
    (0, 1, 0.0035, 0.0411),
    (0, 38, 0.0010, 0.0250),
    (1, 2, 0.0013, 0.0151),
    (1, 24, 0.0070, 0.0086),
    (1, 29, 0.0000, 0.0181),
    (2, 3, 0.0013, 0.0213),
    (2, 17, 0.0011, 0.0133),
    (3, 4, 0.0008, 0.0128),
    (3, 13, 0.0008, 0.0129),
    (4, 5, 0.0002, 0.0026),
    (4, 7, 0.0008, 0.0112),
    (5, 6, 0.0006, 0.0092),
    (5, 10, 0.0007, 0.0082),
    (5, 30, 0.0000, 0.0250),
    (6, 7, 0.0004, 0.0046),
    (7, 8, 0.0023, 0.0363),
    (8, 38, 0.0010, 0.0250),
    (9, 10, 0.0004, 0.0043),
    (9, 12, 0.0004, 0.0043),
    (9, 31, 0.0000, 0.0200),
    (11, 10, 0.0016, 0.0435),
    (11, 12, 0.0016, 0.0435),
    (12, 13, 0.0009, 0.0101),
    (13, 14, 0.0018, 0.0217),
    (14, 15, 0.0009, 0.0094),
    (15, 16, 0.0007, 0.0089),
    (15, 18, 0.0016, 0.0195),
    (15, 20, 0.0008, 0.0135),
    (15, 23, 0.0003, 0.0059),
    (16, 17, 0.0007, 0.0082),
    (16, 26, 0.0013, 0.0173),
    (18, 19, 0.0007, 0.0138),
    (18, 32, 0.0007, 0.0142),
    (19, 33, 0.0009, 0.0180),
    (20, 21, 0.0008, 0.0140),
    (21, 22, 0.0006, 0.0096),
    (21, 34, 0.0000, 0.0143),
    (22, 23, 0.0022, 0.0350),
    (22, 35, 0.0005, 0.0272),
    (24, 25, 0.0032, 0.0323),
    (24, 36, 0.0006, 0.0232),
    (25, 26, 0.0014, 0.0147),
    (25, 27, 0.0043, 0.0474),
    (25, 28, 0.0057, 0.0625),
    (27, 28, 0.0014, 0.0151),
    (28, 37, 0.0008, 0.0156),
]


def ieee39_shaped():
    y = ybus(39, IEEE39_LINES, x_scale=3.0)
    load_mags = [
        (2, 0.20),
        (3, 0.25),
        (6, 0.15),
        (7, 0.20),
        (11, 0.05),
        (14, 0.20),
        (17, 0.10),
        (19, 0.30),
        (20, 0.15),
        (22, 0.15),
        (23, 0.18),
        (24, 0.15),
        (25, 0.10),
        (26, 0.15),
        (27, 0.12),
        (28, 0.14),
    ]
    angles = [0.20, 0.24, 0.22, 0.26, 0.18, 0.21, 0.16, 0.15, 0.12, 0.10]
    emfs = [1.05, 1.06, 1.05, 1.07, 1.04, 1.05, 1.04, 1.03, 1.05, 1.04]
    machine_params = [
        dict(bus=29, inertia=20.0, damping=8.0, xd=1.00, xdp=0.31, td0p=10.2),
        dict(bus=30, inertia=18.0, damping=7.2, xd=1.05, xdp=0.35, td0p=6.6),
        dict(bus=31, inertia=19.0, damping=7.6, xd=1.00, xdp=0.30, td0p=5.7),
        dict(bus=32, inertia=17.0, damping=6.8, xd=1.10, xdp=0.29, td0p=5.7),
        dict(bus=33, inertia=16.0, damping=6.4, xd=1.20, xdp=0.33, td0p=5.4),
        dict(bus=34, inertia=21.0, damping=8.4, xd=1.05, xdp=0.32, td0p=7.3),
        dict(bus=35, inertia=16.5, damping=6.6, xd=1.15, xdp=0.30, td0p=5.7),
        dict(bus=36, inertia=15.5, damping=6.2, xd=1.10, xdp=0.28, td0p=6.7),
        dict(bus=37, inertia=23.0, damping=9.2, xd=1.00, xdp=0.30, td0p=4.8),
        # aggregated external area behind a low reactance
        dict(bus=38, inertia=40.0, damping=16.0, xd=0.60, xdp=0.20, td0p=7.0),
    ]

    def build(load_id, load_iq):
        return rated_case(
            "ieee39_shaped",
            conductance=y.real,
            susceptance=y.imag,
            load_id=load_id,
            load_iq=load_iq,
            machine_params=machine_params,
            angles=angles,
            emfs=emfs,
            # the interconnection pin sits at the most meshed hub so the
            # collective rotor mode stays firmly anchored
            slack_bus=15,
        )

    # Two-pass load placement: draw each load current in phase with its own
    # bus voltage (unity power factor).  A current with a fixed phase in the
    # global frame feeds power back when the rotor group swings, which can
    # cancel the anchoring of the external bus; in-phase currents are
    # neutral to a collective angle shift to first order.
    load_id, load_iq = loads_vec(39, [(b, m, 0.0) for b, m in load_mags])
    probe = build(load_id, load_iq)
    dae, layout = build_power_dae(probe)
    x_star = np.zeros(dae.n_x)
    x_star[layout.angle_of_gen] = angles
    x_star[layout.emf_of_gen] = emfs
    y_star = dae.solve_algebraic(x_star)
    for b, mag in load_mags:
        v = complex(y_star[4 * b], y_star[4 * b + 1])
        u = v / abs(v)
        load_id[b] = mag * u.real
        load_iq[b] = mag * u.imag
    return build(load_id, load_iq), angles, emfs


def main():
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    for builder in (two_bus, ieee14_shaped, ieee39_shaped):
        case, angles, emfs = builder()
        print(check_case(case, angles, emfs))
        path = OUT_DIR / f"{case.name}.json"
        case.to_json(path)
        print(f"  wrote {path}")


if __name__ == "__main__":
    main()
