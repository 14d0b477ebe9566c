"""polyreach: guaranteed polytopic outer bounds for power-system DAE trajectories.

The package propagates a template polytope through the explicit-Euler
discretization of a semi-linear differential-algebraic model.  Nonlinear
terms (bilinear products and phase-shifted sinusoids) are replaced by linear
envelope constraints, so every per-facet bound is the optimum of a linear
program and the computed sets are certified outer approximations of the
discrete-time reachable sets.  A companion invariance certificate bounds the
outward flow over the facets of a scaled template polytope and is used to
decide transient stability.
"""

__version__ = "0.1.0"
