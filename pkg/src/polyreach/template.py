"""Facet-normal templates aligned with the linearized dynamics.

The polytopes carried through the reachability loop are expressed as
``{x : A x <= b}`` with unit-norm rows of ``A`` fixed up front.  Rows are
derived from the real eigenstructure of the system Jacobian at the
equilibrium: each real mode contributes an opposing pair of half-spaces
along its left eigenvector, and each oscillatory mode contributes a regular
fan of half-spaces in its two-dimensional invariant plane.

The fan density per oscillatory mode is the smallest even count ``m >= 4``
with ``tan(pi/m) < |sigma|/omega``: with that density the decay of the mode
beats the rotation between adjacent facet normals, which is what makes an
invariance certificate possible at all.  For a pure two-dimensional spiral
the worst-case outward speed across a facet of the regular ``m``-gon is
``sigma + omega * tan(pi/m)`` exactly; that closed form is exposed here as
an oracle for diagnostics and tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lp import LpProblem, solve

STABILITY_MARGIN = 1e-6
MAX_CONDITION = 1e9
RECONSTRUCTION_RTOL = 1e-8


class TemplateError(RuntimeError):
    pass


@dataclass(frozen=True)
class EigenBlock:
    """One real mode (omega == 0, one column) or one oscillatory mode pair."""

    sigma: float
    omega: float
    cols: tuple[int, ...]

    @property
    def is_complex(self) -> bool:
        return self.omega != 0.0

    @property
    def decay_ratio(self) -> float:
        """|sigma|/omega; infinite for real modes."""
        if self.omega == 0.0:
            return math.inf
        return abs(self.sigma) / self.omega


@dataclass(frozen=True, eq=False)
class EigenStructure:
    basis: np.ndarray  # columns span the modal planes/lines (real form)
    basis_inv: np.ndarray
    blocks: tuple[EigenBlock, ...]

    @property
    def n(self) -> int:
        return self.basis.shape[0]

    def block_matrix(self) -> np.ndarray:
        lam = np.zeros_like(self.basis)
        for blk in self.blocks:
            if blk.is_complex:
                i, j = blk.cols
                lam[i, i] = blk.sigma
                lam[i, j] = blk.omega
                lam[j, i] = -blk.omega
                lam[j, j] = blk.sigma
            else:
                (i,) = blk.cols
                lam[i, i] = blk.sigma
        return lam


def _canonical_complex_vector(v: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(v)))
    pivot = v[k]
    v = v * (np.conj(pivot) / abs(pivot))
    return v / np.linalg.norm(v)


def real_eigen_decompose(
    jac: np.ndarray,
    stability_margin: float = STABILITY_MARGIN,
    max_condition: float = MAX_CONDITION,
) -> EigenStructure:
    """Real block eigendecomposition of a Hurwitz matrix.

    Raises TemplateError if any eigenvalue has real part above
    ``-stability_margin``, if the modal basis is ill-conditioned, or if the
    block form fails to reconstruct the matrix (defective matrix).
    """
    jac = np.asarray(jac, dtype=float)
    n = jac.shape[0]
    if jac.shape != (n, n):
        raise TemplateError(f"jacobian must be square, got {jac.shape}")
    vals, vecs = np.linalg.eig(jac)
    unstable = vals.real >= -stability_margin
    if np.any(unstable):
        worst = vals[unstable][np.argmax(vals[unstable].real)]
        raise TemplateError(
            f"linearization is not stable enough for a decay-aligned template: "
            f"eigenvalue {worst:.6g} has real part >= -{stability_margin:g}"
        )
    imag_tol = 1e-9 * max(1.0, float(np.max(np.abs(vals))))
    entries = []  # (sigma, omega, complex eigvec or real vec)
    for i in range(n):
        lam = vals[i]
        if lam.imag > imag_tol:
            entries.append((lam.real, lam.imag, _canonical_complex_vector(vecs[:, i])))
        elif abs(lam.imag) <= imag_tol:
            v = vecs[:, i].real
            k = int(np.argmax(np.abs(v)))
            v = v * np.sign(v[k]) / np.linalg.norm(v)
            entries.append((lam.real, 0.0, v))
        # negative-imag conjugates are represented by their partners
    entries.sort(key=lambda e: (e[0], e[1]))
    cols = []
    blocks = []
    pos = 0
    for sigma, omega, v in entries:
        if omega > 0.0:
            cols.append(v.real)
            cols.append(v.imag)
            blocks.append(EigenBlock(sigma=sigma, omega=omega, cols=(pos, pos + 1)))
            pos += 2
        else:
            cols.append(v)
            blocks.append(EigenBlock(sigma=sigma, omega=0.0, cols=(pos,)))
            pos += 1
    if pos != n:
        raise TemplateError(
            f"eigenvector pairing produced {pos} basis columns for dimension {n}"
        )
    basis = np.column_stack(cols)
    cond = np.linalg.cond(basis)
    if not np.isfinite(cond) or cond > max_condition:
        raise TemplateError(f"modal basis condition number {cond:.3g} exceeds limit")
    basis_inv = np.linalg.inv(basis)
    structure = EigenStructure(basis=basis, basis_inv=basis_inv, blocks=tuple(blocks))
    recon = basis @ structure.block_matrix() @ basis_inv
    err = np.linalg.norm(recon - jac) / max(1.0, np.linalg.norm(jac))
    if err > RECONSTRUCTION_RTOL:
        raise TemplateError(
            f"block form reconstructs the jacobian to {err:.3g} relative error; "
            "the matrix is likely defective"
        )
    return structure


def rays_for_ratio(ratio: float, min_rays: int = 4, max_rays: int = 256) -> int:
    """Smallest even m >= min_rays with tan(pi/m) < ratio."""
    if ratio <= 0.0:
        raise TemplateError("decay ratio must be positive for a fan template")
    m = max(4, min_rays + (min_rays % 2))
    # strict inequality with a tie guard: at tan(pi/m) == ratio the facet
    # flow of the pure mode is exactly zero, which certifies nothing
    while not math.tan(math.pi / m) < ratio - 1e-9:
        m += 2
        if m > max_rays:
            raise TemplateError(
                f"mode needs more than {max_rays} facets (decay ratio {ratio:.3g}); "
                "the mode decays too slowly relative to its rotation"
            )
    return m


def ray_budget(blocks) -> int:
    """Upper bound on facets per state dimension: max_l ceil(pi/atan(ratio_l))."""
    p = 2
    for blk in blocks:
        if blk.is_complex:
            p = max(p, math.ceil(math.pi / math.atan(blk.decay_ratio)))
    return p


def linear_facet_outflow(sigma: float, omega: float, m: int) -> float:
    """Worst facet-normal outward speed of a pure 2-D spiral on a regular m-gon.

    Negative means every facet of the m-gon template is strictly inward for
    the linear mode, i.e. the fan is dense enough.
    """
    return sigma + abs(omega) * math.tan(math.pi / m)


@dataclass(frozen=True, eq=False)
class Template:
    """Facet normals, stored unit-norm.

    ``unit_offsets`` are the offsets that reproduce the polytope the rows
    described BEFORE normalization with right-hand side one (a regular fan
    of radius one in each modal plane, for spectral templates).  Scaling a
    polytope uniformly must scale these, not a vector of ones: the rows'
    original norms differ, and equal offsets on unit rows would distort the
    fan geometry that makes every facet contract under the linear flow.
    """

    rows: np.ndarray  # (k, n), unit-norm rows
    block_of_row: np.ndarray = field(default=None)  # index into blocks, -1 if n/a
    unit_offsets: np.ndarray = field(default=None)

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        norms = np.linalg.norm(rows, axis=1)
        if np.any(norms <= 0):
            raise TemplateError("template contains a zero row")
        object.__setattr__(self, "rows", rows / norms[:, None])
        if self.block_of_row is None:
            object.__setattr__(self, "block_of_row", np.full(rows.shape[0], -1))
        if self.unit_offsets is None:
            object.__setattr__(self, "unit_offsets", 1.0 / norms)
        else:
            off = np.asarray(self.unit_offsets, dtype=float)
            if off.shape != (rows.shape[0],) or np.any(off <= 0):
                raise TemplateError("one positive unit offset per row required")
            object.__setattr__(self, "unit_offsets", off)

    @property
    def k(self) -> int:
        return self.rows.shape[0]

    @property
    def n(self) -> int:
        return self.rows.shape[1]


def build_fixed_template(structure: EigenStructure, min_rays: int = 4) -> Template:
    """Decay-aligned facet normals from the modal structure.

    Real modes get the opposing half-space pair along the corresponding row
    of the inverse modal basis; oscillatory modes get a regular fan of
    ``m_l`` normals mixing their two inverse-basis rows.
    """
    rows = []
    owner = []
    for bi, blk in enumerate(structure.blocks):
        if blk.is_complex:
            r1 = structure.basis_inv[blk.cols[0]]
            r2 = structure.basis_inv[blk.cols[1]]
            m = rays_for_ratio(blk.decay_ratio, min_rays=min_rays)
            for kk in range(m):
                psi = 2.0 * math.pi * kk / m
                rows.append(math.cos(psi) * r1 + math.sin(psi) * r2)
                owner.append(bi)
        else:
            r = structure.basis_inv[blk.cols[0]]
            rows.append(r)
            rows.append(-r)
            owner.extend([bi, bi])
    template = Template(rows=np.array(rows), block_of_row=np.array(owner))
    budget = ray_budget(structure.blocks) * structure.n
    if template.k > budget:
        raise TemplateError(
            f"template has {template.k} rows, exceeding the budget {budget}"
        )
    return template


def dynamic_update(rows: np.ndarray, jac: np.ndarray, dt: float) -> np.ndarray:
    """Co-rotate facet normals with the one-step linear flow.

    New normals are the old ones composed with the inverse of the explicit
    one-step map ``I + dt*J``, re-normalized.  For a purely linear system
    this keeps the polytope representation exact step over step.
    """
    n = rows.shape[1]
    step = np.eye(n) + dt * np.asarray(jac, dtype=float)
    try:
        updated = np.linalg.solve(step.T, np.asarray(rows, dtype=float).T).T
    except np.linalg.LinAlgError as exc:
        raise TemplateError(f"one-step map is singular at dt={dt}: {exc}") from None
    norms = np.linalg.norm(updated, axis=1)
    if np.any(norms <= 1e-300):
        raise TemplateError("dynamic update collapsed a facet normal")
    return updated / norms[:, None]


def concat_templates(*templates: Template) -> Template:
    rows = np.vstack([t.rows for t in templates])
    owner = np.concatenate([t.block_of_row for t in templates])
    offs = np.concatenate([t.unit_offsets for t in templates])
    return Template(rows=rows, block_of_row=owner, unit_offsets=offs)


def chebyshev_center(rows: np.ndarray, offsets: np.ndarray):
    """Center and radius of the largest ball inside {x : rows @ x <= offsets}.

    Rows must be unit-norm (Template guarantees this).  Returns (center,
    radius); raises TemplateError when the polytope is empty or unbounded in
    a way that prevents a center.
    """
    rows = np.asarray(rows, dtype=float)
    offsets = np.asarray(offsets, dtype=float)
    k, n = rows.shape
    a_ub = np.hstack([rows, np.ones((k, 1))])
    c = np.zeros(n + 1)
    c[-1] = 1.0
    sol = solve(
        LpProblem(c=c, sense="max", a_ub=a_ub, b_ub=offsets, name="chebyshev"),
        inflation=0.0,
    )
    if sol.status != "optimal":
        raise TemplateError(f"chebyshev center LP is {sol.status}")
    center, radius = sol.x[:n], sol.x[n]
    if radius < 0:
        raise TemplateError("polytope is empty (negative inscribed radius)")
    return center, radius


def template_to_csv(template: Template, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("row,block,unit_offset,coefficients\n")
        for i, row in enumerate(template.rows):
            coefs = ";".join(f"{v:.17g}" for v in row)
            fh.write(
                f"{i},{template.block_of_row[i]},"
                f"{template.unit_offsets[i]:.17g},{coefs}\n"
            )
