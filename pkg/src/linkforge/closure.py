"""Damped Newton iteration for two-equation planar loop closures."""

from __future__ import annotations

import math

from .errors import NoConvergence, SingularJacobian

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 50


def newton2(fun, x0, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, mechanism=None,
            singular_tol=1e-14):
    """Solve ``fun(x) = 0`` for a 2-vector ``x``.

    ``fun`` returns ``(r0, r1, j00, j01, j10, j11)``. The step is halved while
    it increases the residual norm. Returns ``(x0, x1, residual_norm, iters)``.
    """
    a, b = float(x0[0]), float(x0[1])
    r0, r1, j00, j01, j10, j11 = fun(a, b)
    norm = math.hypot(r0, r1)
    for it in range(max_iter + 1):
        if norm <= tol:
            return a, b, norm, it
        if it == max_iter:
            break
        det = j00 * j11 - j01 * j10
        scale = max(abs(j00) + abs(j01), abs(j10) + abs(j11), 1e-300)
        if abs(det) <= singular_tol * scale * scale:
            raise SingularJacobian(
                f"closure Jacobian singular at iterate {it} (|det|={abs(det):.3e})", mechanism)
        da = -(j11 * r0 - j01 * r1) / det
        db = -(-j10 * r0 + j00 * r1) / det
        step = 1.0
        for _ in range(30):
            na, nb = a + step * da, b + step * db
            out = fun(na, nb)
            new_norm = math.hypot(out[0], out[1])
            if new_norm < norm or new_norm <= tol:
                break
            step *= 0.5
        else:
            raise NoConvergence(f"line search stalled at iterate {it} (residual {norm:.3e})",
                                mechanism)
        a, b = na, nb
        r0, r1, j00, j01, j10, j11 = out
        norm = new_norm
    raise NoConvergence(f"no convergence after {max_iter} iterations (residual {norm:.3e})",
                        mechanism)
