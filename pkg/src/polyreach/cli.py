"""Command-line front end: case ingestion, run orchestration, result files.

Three subcommands share one pipeline (load case, solve the equilibrium,
build the decay-aligned template, place the initial polytope):

``reach``
    propagates the polytope and writes ``trace.csv``, ``bounds.csv``,
    ``summary.json`` plus a ``timings.json`` sidecar.  The exit code encodes
    the verdict: 0 certified stable, 2 inconclusive, 3 horizon exhausted,
    1 any error.
``montecarlo``
    additionally samples the initial polytope, simulates every sample, and
    writes per-trajectory CSVs, a per-state envelope comparison, and a
    containment report.
``epsilon``
    searches for the largest certifiable contraction scale and writes
    ``epsilon.json``; exit code 0 on success, 2 when nothing certifies.

All result files embed the tool version, the random seed, and a SHA-256
hash over the semantic manifest fields, so outputs are traceable to their
configuration; reruns with an identical manifest and seed produce
byte-identical files (``timings.json`` excepted — it reports wall time).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .envelope import EnvelopeWidthError
from .lp import LpError
from .model import (
    ModelError,
    build_power_dae,
    load_case,
    simulate,
    solve_equilibrium,
)
from .reach import (
    ReachConfig,
    ReachError,
    bisect_epsilon,
    bound_x,
    max_containment_violation,
    run,
    summary,
    write_bounds_csv,
    write_trace_csv,
)
from .sampling import SamplingError, sample_polytope
from .template import TemplateError, build_fixed_template, real_eigen_decompose

EXIT_BY_VERDICT = {
    "certified_stable": 0,
    "inconclusive_width": 2,
    "horizon_exhausted": 3,
}
_ERRORS = (
    ModelError,
    TemplateError,
    EnvelopeWidthError,
    LpError,
    ReachError,
    SamplingError,
    OSError,
    ValueError,
)


@dataclass(frozen=True)
class RunManifest:
    """Everything that determines a run's outputs, plus bookkeeping.

    ``manifest_sha256`` hashes the semantic fields only: the output
    directory and worker count influence where results land and how fast
    they arrive, never what they contain.
    """

    command: str
    case: str
    dt: float
    horizon: float
    template_mode: str
    epsilon: float | None
    bisect: bool
    offset: tuple[float, ...] | None
    offset_scale: float | None
    poly_scale: float
    polytope_file: str | None
    angle_limit: float
    center_mode: str
    mc_samples: int
    seed: int
    out_dir: str
    workers: int | None

    _NON_SEMANTIC = ("out_dir", "workers")

    def sha256(self) -> str:
        data = {
            k: v for k, v in asdict(self).items() if k not in self._NON_SEMANTIC
        }
        blob = json.dumps(data, sort_keys=True).encode("ascii")
        return hashlib.sha256(blob).hexdigest()


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="ascii") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _provenance(manifest: RunManifest) -> dict:
    return {
        "tool_version": __version__,
        "manifest_sha256": manifest.sha256(),
        "seed": manifest.seed,
    }


def _preamble(manifest: RunManifest) -> str:
    return (
        f"polyreach {__version__} manifest={manifest.sha256()} "
        f"seed={manifest.seed}"
    )


class _Setup:
    """Shared per-run state: model, equilibrium, template, initial polytope."""

    def __init__(self, manifest: RunManifest):
        self.manifest = manifest
        self.case = load_case(manifest.case)
        self.dae, self.layout = build_power_dae(self.case)
        flat = np.zeros(self.dae.n_x)
        flat[self.layout.emf_of_gen] = 1.0
        self.x_eq, self.y_eq = solve_equilibrium(self.dae, flat, tol=1e-12)
        jac = self.dae.reduced_jacobian(self.x_eq, self.y_eq)
        self.structure = real_eigen_decompose(jac)
        self.template = build_fixed_template(self.structure)
        self.rows, self.b0, self.center = self._initial_polytope()

    # -- initial set construction ------------------------------------------
    def _offset_vector(self) -> np.ndarray:
        m = self.manifest
        if m.offset is not None:
            vec = np.asarray(m.offset, dtype=float)
            if vec.shape != (self.dae.n_x,):
                raise ReachError(
                    f"--offset needs {self.dae.n_x} comma-separated values, "
                    f"got {vec.size}"
                )
            return vec
        if m.offset_scale is not None:
            # displace along the most persistent mode, normalized so the
            # largest rotor-angle component moves by exactly the given value
            blk = min(self.structure.blocks, key=lambda b: abs(b.sigma))
            direction = self.structure.basis[:, blk.cols[0]].copy()
            angle_part = np.max(np.abs(direction[self.layout.angle_of_gen]))
            if angle_part < 1e-12:
                raise ReachError(
                    "slowest mode does not move any rotor angle; "
                    "give --offset explicitly"
                )
            return direction * (m.offset_scale / angle_part)
        return np.zeros(self.dae.n_x)

    def _initial_polytope(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        m = self.manifest
        if m.polytope_file is not None:
            if m.offset is not None or m.offset_scale is not None:
                raise ReachError(
                    "--polytope fixes the initial set; offset flags do not apply"
                )
            return self._explicit_polytope(m.polytope_file)
        center = self.x_eq + self._offset_vector()
        tpl = self.template
        probe_b = tpl.rows @ center + tpl.unit_offsets
        widths = np.array(
            [iv.hi - iv.lo for iv in bound_x(tpl.rows, probe_b, m.workers)]
        )
        half = float(np.max(widths[self.layout.angle_of_gen])) / 2.0
        scale = m.poly_scale / half
        return tpl.rows, tpl.rows @ center + scale * tpl.unit_offsets, center

    def _explicit_polytope(self, path):
        raw = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
        if raw.shape[1] != self.dae.n_x + 1 or not np.all(np.isfinite(raw)):
            raise ReachError(
                f"polytope file must have {self.dae.n_x} facet coefficients "
                f"plus an offset per row, all finite; got shape {raw.shape}"
            )
        rows, offsets = raw[:, :-1], raw[:, -1]
        norms = np.linalg.norm(rows, axis=1)
        if np.any(norms <= 0.0):
            raise ReachError("polytope file contains a zero facet row")
        # rescaling each half-space by its norm leaves the set unchanged
        rows /= norms[:, None]
        offsets = offsets / norms
        center = None  # let the run pick the analytic center
        return rows, offsets, center

    # -- derived quantities -------------------------------------------------
    def rel_offsets(self) -> np.ndarray:
        rel = self.b0 - self.rows @ self.x_eq
        if np.any(rel <= 0.0):
            raise ReachError(
                "the equilibrium is not strictly inside the initial polytope; "
                "shrink the offset or grow the set"
            )
        return rel

    def config(self, epsilon: float | None) -> ReachConfig:
        m = self.manifest
        return ReachConfig(
            dt=m.dt,
            horizon=m.horizon,
            template_mode=m.template_mode,
            epsilon=epsilon,
            angle_width_limit=m.angle_limit,
            mc_samples=m.mc_samples,
            center_mode=m.center_mode,
            workers=m.workers,
        )


def _probe_rows(probes) -> list[dict]:
    return [
        {
            "scale": float(e),
            "outward_flow": float(mu) if math.isfinite(mu) else None,
            "certified": bool(mu < 0.0),
        }
        for e, mu in probes
    ]


def _resolve_epsilon(setup: _Setup) -> tuple[float | None, list | None]:
    """Explicit epsilon, bisected epsilon, or none (no stability exit)."""
    m = setup.manifest
    if m.epsilon is not None:
        return m.epsilon, None
    if not m.bisect:
        return None, None
    eps, probes = bisect_epsilon(
        setup.dae, setup.rows, setup.rel_offsets(), setup.x_eq,
        workers=m.workers,
    )
    return eps, _probe_rows(probes)


def _emit_trace(setup, trace, out, elapsed, epsilon_info) -> None:
    manifest = setup.manifest
    pre = _preamble(manifest)
    write_trace_csv(trace, out / "trace.csv", preamble=pre)
    write_bounds_csv(trace, out / "bounds.csv", preamble=pre)
    digest = summary(trace)
    digest.pop("total_wall_time")  # wall time goes to the sidecar only
    digest.update(_provenance(manifest))
    if epsilon_info is not None:
        digest["epsilon_probes"] = epsilon_info
    _write_json(out / "summary.json", digest)
    _write_json(
        out / "timings.json",
        {
            "total_wall_time": elapsed,
            "lp_wall_time": sum(r.wall_time for r in trace.records),
            **_provenance(manifest),
        },
    )


def _write_manifest(manifest: RunManifest, out: Path) -> None:
    _write_json(
        out / "manifest.json",
        {
            "tool_version": __version__,
            "manifest_sha256": manifest.sha256(),
            "manifest": asdict(manifest),
        },
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_reach(manifest: RunManifest) -> int:
    out = Path(manifest.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    setup = _Setup(manifest)
    _write_manifest(manifest, out)
    epsilon, epsilon_info = _resolve_epsilon(setup)
    trace = run(
        setup.dae,
        setup.rows,
        setup.b0,
        setup.x_eq,
        setup.config(epsilon),
        layout=setup.layout,
        center0=setup.center,
    )
    _emit_trace(setup, trace, out, time.perf_counter() - started, epsilon_info)
    print(f"{trace.verdict} after {len(trace.records)} steps -> {out}")
    return EXIT_BY_VERDICT[trace.verdict]


def cmd_montecarlo(manifest: RunManifest) -> int:
    out = Path(manifest.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    setup = _Setup(manifest)
    _write_manifest(manifest, out)
    epsilon, epsilon_info = _resolve_epsilon(setup)
    trace = run(
        setup.dae,
        setup.rows,
        setup.b0,
        setup.x_eq,
        setup.config(epsilon),
        layout=setup.layout,
        center0=setup.center,
    )

    if manifest.mc_samples == 1:
        # one sample means the tracked center itself: the trajectory then
        # reproduces the center simulation that steers the dynamic template
        points = trace.records[0].center[None, :]
    else:
        points = sample_polytope(
            trace.records[0].rows[: trace.n_fixed],
            trace.records[0].offsets[: trace.n_fixed],
            manifest.mc_samples,
            seed=manifest.seed,
        )
    states = simulate(setup.dae, points, manifest.dt, trace.records[-1].step)
    worst = max_containment_violation(trace, states)

    pre = _preamble(manifest)
    traj_dir = out / "trajectories"
    traj_dir.mkdir(exist_ok=True)
    times = [rec.t for rec in trace.records]
    for b in range(states.shape[1]):
        with open(traj_dir / f"traj_{b:04d}.csv", "w", encoding="ascii") as fh:
            fh.write(f"# {pre}\n")
            fh.write("step,t," + ",".join(setup.layout.x_names) + "\n")
            for k, t in enumerate(times):
                vals = ",".join(repr(float(v)) for v in states[k, b])
                fh.write(f"{k},{t:.6f},{vals}\n")

    with open(out / "envelope.csv", "w", encoding="ascii") as fh:
        fh.write(f"# {pre}\n")
        fh.write("step,t,index,name,mc_lo,mc_hi,bound_lo,bound_hi\n")
        for k, rec in enumerate(trace.records):
            lo = states[k].min(axis=0)
            hi = states[k].max(axis=0)
            for j, iv in enumerate(rec.x_intervals):
                cells = (float(lo[j]), float(hi[j]), iv.lo, iv.hi)
                fh.write(
                    f"{k},{rec.t:.6f},{j},{setup.layout.x_names[j]},"
                    + ",".join(repr(c) for c in cells)
                    + "\n"
                )

    _write_json(
        out / "containment.json",
        {
            "max_violation": worst,
            "contained": bool(worst <= 1e-7),
            "n_samples": int(states.shape[1]),
            "n_steps": len(trace.records),
            **_provenance(manifest),
        },
    )
    _emit_trace(setup, trace, out, time.perf_counter() - started, epsilon_info)
    print(
        f"{trace.verdict}; {states.shape[1]} trajectories, "
        f"worst containment violation {worst:.3e} -> {out}"
    )
    return EXIT_BY_VERDICT[trace.verdict]


def cmd_epsilon(manifest: RunManifest) -> int:
    out = Path(manifest.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    setup = _Setup(manifest)
    _write_manifest(manifest, out)
    payload = {**_provenance(manifest)}
    rel = setup.rel_offsets()
    try:
        eps, probes = bisect_epsilon(
            setup.dae,
            setup.rows,
            rel,
            setup.x_eq,
            workers=manifest.workers,
        )
    except ReachError as exc:
        payload.update(
            {"epsilon_star": None, "certified": False, "reason": str(exc)}
        )
        _write_json(out / "epsilon.json", payload)
        print(f"no certifiable scale -> {out}", file=sys.stderr)
        return 2
    payload.update(
        {
            "epsilon_star": eps,
            "certified": True,
            "probes": _probe_rows(probes),
        }
    )
    _write_json(out / "epsilon.json", payload)
    _write_json(
        out / "timings.json",
        {
            "total_wall_time": time.perf_counter() - started,
            **_provenance(manifest),
        },
    )
    print(f"largest certified scale {eps:.6g} -> {out}")
    return 0


# ---------------------------------------------------------------------------
# argument plumbing


def _parse_offset(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated numbers, got {text!r}"
        ) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polyreach",
        description=(
            "Guaranteed polytopic outer bounds and transient-stability "
            "certificates for power-system DAE trajectories."
        ),
    )
    parser.add_argument(
        "--version", action="version", version=f"polyreach {__version__}"
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--case",
        required=True,
        help="bundled case name (two_bus, ieee14_shaped, ieee39_shaped) "
        "or path to a case JSON file",
    )
    common.add_argument("--dt", type=float, default=0.1, help="step size [s]")
    common.add_argument(
        "--horizon", type=float, default=25.0, help="time horizon [s]"
    )
    common.add_argument(
        "--template",
        choices=("fixed", "dynamic", "both"),
        default="both",
        help="facet families to propagate",
    )
    where = common.add_mutually_exclusive_group()
    where.add_argument(
        "--offset",
        type=_parse_offset,
        default=None,
        metavar="V1,V2,...",
        help="explicit displacement of the polytope center from equilibrium",
    )
    where.add_argument(
        "--offset-scale",
        type=float,
        default=None,
        metavar="RAD",
        help="displace along the most persistent mode until the largest "
        "rotor-angle moves by this many radians",
    )
    common.add_argument(
        "--poly-scale",
        type=float,
        default=0.05,
        metavar="RAD",
        help="initial polytope size: largest rotor-angle half-width [rad]",
    )
    common.add_argument(
        "--polytope",
        default=None,
        metavar="CSV",
        help="explicit initial polytope: one facet per line, state-space "
        "coefficients then the offset",
    )
    eps = common.add_mutually_exclusive_group()
    eps.add_argument(
        "--epsilon",
        type=float,
        default=None,
        help="contraction scale for the stability exit (0 < eps <= 1)",
    )
    eps.add_argument(
        "--bisect",
        action="store_true",
        help="search the largest certifiable contraction scale first and "
        "use it for the stability exit",
    )
    common.add_argument(
        "--angle-limit",
        type=float,
        default=math.pi / 2,
        metavar="RAD",
        help="abort when the bound on any machine's angle spread (relative "
        "to the inertia-weighted mean) exceeds this",
    )
    common.add_argument(
        "--center",
        choices=("simulate", "chebyshev"),
        default="simulate",
        help="how the dynamic-template expansion point moves",
    )
    common.add_argument(
        "--mc", type=int, default=500, help="Monte-Carlo sample count"
    )
    common.add_argument("--seed", type=int, default=0, help="random seed")
    common.add_argument(
        "--out", default="polyreach_out", help="output directory"
    )
    common.add_argument(
        "--workers",
        type=int,
        default=None,
        help="concurrent LP workers (default: all cores; the "
        "POLYREACH_THREADS environment variable caps this)",
    )

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser(
        "reach",
        parents=[common],
        help="propagate the polytope and decide the verdict",
    ).set_defaults(runner=cmd_reach)
    sub.add_parser(
        "montecarlo",
        parents=[common],
        help="reach run plus sampled trajectories and containment report",
    ).set_defaults(runner=cmd_montecarlo)
    sub.add_parser(
        "epsilon",
        parents=[common],
        help="bisect the largest certifiable contraction scale",
    ).set_defaults(runner=cmd_epsilon)
    return parser


def _manifest_from_args(args: argparse.Namespace) -> RunManifest:
    if args.dt <= 0 or not math.isfinite(args.dt):
        raise ReachError(f"--dt must be a positive number, got {args.dt}")
    if args.mc < 1:
        raise ReachError(f"--mc must be at least 1, got {args.mc}")
    if args.polytope is not None and not Path(args.polytope).exists():
        raise ReachError(f"polytope file does not exist: {args.polytope}")
    return RunManifest(
        command=args.command,
        case=args.case,
        dt=args.dt,
        horizon=args.horizon,
        template_mode=args.template,
        epsilon=args.epsilon,
        bisect=args.bisect,
        offset=args.offset,
        offset_scale=args.offset_scale,
        poly_scale=args.poly_scale,
        polytope_file=args.polytope,
        angle_limit=args.angle_limit,
        center_mode=args.center,
        mc_samples=args.mc,
        seed=args.seed,
        out_dir=args.out,
        workers=args.workers,
    )


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # --help/--version exit 0; remap argparse's usage-error code 2 to the
        # generic failure code, 2 is reserved for the inconclusive verdict
        return 0 if exc.code in (0, None) else 1
    try:
        return args.runner(_manifest_from_args(args))
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
