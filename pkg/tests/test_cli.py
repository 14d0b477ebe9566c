"""End-to-end command-line tests on the bundled two-bus case.

Oracles: the equilibrium and template rebuilt through the library API, a
from-scratch Euler recursion for the single-sample trajectory, and direct
set inclusion between the Monte-Carlo extremes and the reported bounds."""

import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from polyreach import __version__, cli
from polyreach.model import build_power_dae, load_case, solve_equilibrium
from polyreach.reach import ReachError
from polyreach.template import build_fixed_template, real_eigen_decompose


def read_rows(path):
    with open(path, encoding="ascii") as fh:
        first = fh.readline()
        assert first.startswith("# polyreach")
        return first, list(csv.DictReader(fh))


def two_bus_pieces():
    case = load_case("two_bus")
    dae, layout = build_power_dae(case)
    flat = np.zeros(dae.n_x)
    flat[layout.emf_of_gen] = 1.0
    x_eq, y_eq = solve_equilibrium(dae, flat, tol=1e-12)
    tpl = build_fixed_template(
        real_eigen_decompose(dae.reduced_jacobian(x_eq, y_eq))
    )
    return dae, layout, x_eq, tpl


def test_reach_certifies_and_contracts(tmp_path):
    out = tmp_path / "r"
    code = cli.main(
        ["reach", "--case", "two_bus", "--bisect", "--horizon", "15",
         "--out", str(out)]
    )
    assert code == 0
    digest = json.loads((out / "summary.json").read_text())
    assert digest["verdict"] == "certified_stable"
    assert digest["tool_version"] == __version__
    manifest = json.loads((out / "manifest.json").read_text())
    assert digest["manifest_sha256"] == manifest["manifest_sha256"]

    preamble, rows = read_rows(out / "trace.csv")
    assert manifest["manifest_sha256"] in preamble
    # late-stage contraction of the fixed family, measured about the
    # equilibrium: the largest relative offset must shrink monotonically
    _, _, x_eq, tpl = two_bus_pieces()
    anchor = tpl.rows @ x_eq
    per_step = {}
    for row in rows:
        if row["family"] == "fixed":
            k = int(row["step"])
            facet = int(row["facet"])
            rel = float(row["offset"]) - anchor[facet]
            per_step[k] = max(per_step.get(k, -math.inf), rel)
    series = [per_step[k] for k in sorted(per_step)]
    assert len(series) >= 4
    tail = series[len(series) // 2 :]
    assert all(b < a for a, b in zip(tail, tail[1:]))


def test_reach_short_horizon_exhausts(tmp_path):
    code = cli.main(
        ["reach", "--case", "two_bus", "--horizon", "0.1",
         "--out", str(tmp_path / "r")]
    )
    assert code == 3


def test_malformed_inputs_exit_one(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"buses": [,]}')
    assert cli.main(["reach", "--case", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "invalid JSON" in capsys.readouterr().err

    missing = tmp_path / "missing.json"
    missing.write_text(json.dumps({"buses": [{"id": 0, "type": "load"}]}))
    assert (
        cli.main(["reach", "--case", str(missing), "--out", str(tmp_path / "o")])
        == 1
    )
    assert "missing field 'lines'" in capsys.readouterr().err

    assert cli.main(["reach", "--no-such-flag"]) == 1
    assert cli.main(["reach", "--case", "two_bus", "--dt", "-1"]) == 1


def test_montecarlo_containment_dominance_determinism(tmp_path):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        code = cli.main(
            ["montecarlo", "--case", "two_bus", "--horizon", "5",
             "--mc", "40", "--out", str(out)]
        )
        assert code == 3  # no stability exit requested: runs to the horizon
        outs.append(out)

    report = json.loads((outs[0] / "containment.json").read_text())
    assert report["n_samples"] == 40
    assert report["max_violation"] <= 1e-7
    assert report["contained"] is True

    _, rows = read_rows(outs[0] / "envelope.csv")
    assert rows, "envelope must not be empty"
    for row in rows:
        assert float(row["bound_lo"]) <= float(row["mc_lo"]) + 1e-9
        assert float(row["mc_hi"]) <= float(row["bound_hi"]) + 1e-9

    for name in (
        "trace.csv",
        "bounds.csv",
        "summary.json",
        "envelope.csv",
        "containment.json",
        "trajectories/traj_0000.csv",
    ):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_montecarlo_single_sample_follows_the_center(tmp_path):
    out = tmp_path / "mc1"
    code = cli.main(
        ["montecarlo", "--case", "two_bus", "--horizon", "2", "--mc", "1",
         "--out", str(out)]
    )
    assert code == 3
    dae, layout, _, _ = two_bus_pieces()
    _, rows = read_rows(out / "trajectories" / "traj_0000.csv")
    states = np.array(
        [[float(r[name]) for name in layout.x_names] for r in rows]
    )
    x = states[0]
    for k in range(1, len(states)):
        x = x + 0.1 * dae.f(x, dae.solve_algebraic(x))
        np.testing.assert_allclose(states[k], x, atol=1e-12)


def test_epsilon_two_bus(tmp_path):
    out = tmp_path / "eps"
    code = cli.main(["epsilon", "--case", "two_bus", "--out", str(out)])
    assert code == 0
    payload = json.loads((out / "epsilon.json").read_text())
    assert payload["certified"] is True
    star = payload["epsilon_star"]
    assert 0.0 < star < 1.0
    winning = [p for p in payload["probes"] if p["scale"] == star]
    assert winning and winning[0]["certified"]
    assert winning[0]["outward_flow"] < 0.0


def test_epsilon_uncertifiable_exits_two(tmp_path, monkeypatch, capsys):
    def refuse(*args, **kwargs):
        raise ReachError("no certifiable neighborhood (forced)")

    monkeypatch.setattr(cli, "bisect_epsilon", refuse)
    out = tmp_path / "eps"
    code = cli.main(["epsilon", "--case", "two_bus", "--out", str(out)])
    assert code == 2
    payload = json.loads((out / "epsilon.json").read_text())
    assert payload["certified"] is False
    assert "no certifiable" in payload["reason"]


def test_offset_flags_place_the_initial_set(tmp_path):
    dae, layout, x_eq, _ = two_bus_pieces()
    angle = int(layout.angle_of_gen[0])

    out = tmp_path / "explicit"
    code = cli.main(
        ["reach", "--case", "two_bus", "--horizon", "0.1",
         "--offset", "0.02,0,0", "--out", str(out)]
    )
    assert code == 3
    _, rows = read_rows(out / "bounds.csv")
    first = [r for r in rows if r["step"] == "0" and r["kind"] == "x"]
    mid = 0.5 * (float(first[angle]["lo"]) + float(first[angle]["hi"]))
    assert mid == pytest.approx(x_eq[angle] + 0.02, abs=1e-7)

    out2 = tmp_path / "modal"
    code = cli.main(
        ["reach", "--case", "two_bus", "--horizon", "0.1",
         "--offset-scale", "0.05", "--out", str(out2)]
    )
    assert code == 3
    _, rows2 = read_rows(out2 / "bounds.csv")
    first2 = [r for r in rows2 if r["step"] == "0" and r["kind"] == "x"]
    mid2 = 0.5 * (float(first2[angle]["lo"]) + float(first2[angle]["hi"]))
    assert abs(mid2 - x_eq[angle]) == pytest.approx(0.05, abs=1e-7)

    assert (
        cli.main(
            ["reach", "--case", "two_bus", "--offset", "1,2",
             "--out", str(tmp_path / "bad")]
        )
        == 1
    )


def test_explicit_polytope_file(tmp_path):
    dae, layout, x_eq, _ = two_bus_pieces()
    half = np.array([0.04, 0.05, 0.03])
    lines = []
    for j in range(3):
        e = np.zeros(3)
        e[j] = 1.0
        lines.append(",".join(repr(float(v)) for v in [*e, x_eq[j] + half[j]]))
        lines.append(
            ",".join(repr(float(v)) for v in [*(-e), -(x_eq[j] - half[j])])
        )
    poly = tmp_path / "box.csv"
    poly.write_text("\n".join(lines) + "\n")

    out = tmp_path / "box_run"
    code = cli.main(
        ["reach", "--case", "two_bus", "--horizon", "0.5",
         "--polytope", str(poly), "--out", str(out)]
    )
    assert code == 3
    _, rows = read_rows(out / "bounds.csv")
    first = [r for r in rows if r["step"] == "0" and r["kind"] == "x"]
    for j in range(3):
        assert float(first[j]["lo"]) == pytest.approx(x_eq[j] - half[j], abs=1e-7)
        assert float(first[j]["hi"]) == pytest.approx(x_eq[j] + half[j], abs=1e-7)

    assert (
        cli.main(
            ["reach", "--case", "two_bus", "--polytope", str(poly),
             "--offset", "0.01,0,0", "--out", str(tmp_path / "clash")]
        )
        == 1
    )
    assert (
        cli.main(
            ["reach", "--case", "two_bus", "--polytope",
             str(tmp_path / "nowhere.csv"), "--out", str(tmp_path / "gone")]
        )
        == 1
    )
