"""P1 finite elements for the weighted Phi-Laplacian.

Subpackages by task: ``nfunc`` (N-function calculus and vector fields),
``weights`` (Muckenhoupt-type weight diagnostics), ``mesh`` (2d simplicial
meshes), ``quadrature`` (triangle/segment/disk rules), ``fem`` (P1 spaces,
modulars, Luxemburg norms, assembly), ``interp`` (Scott-Zhang and
positivity-preserving interpolants plus ratio reports), ``solvers`` (damped
Newton and the obstacle active-set method), ``study`` (manufactured solutions
and convergence-rate reports), ``figures`` (PNG rendering for the CLI report
path) and ``cli``.
"""

__version__ = "0.1.0"
