"""Ankle four-bar linkage: loop solve, transmission ratio and polynomial fit.

Labeling used throughout the package: the ground link L0 runs from pivot O
at the origin to pivot Q = (L0, 0). The actuated crank L1 turns about O with
absolute angle ``theta_in``, the coupler L2 has absolute angle ``theta_c`` and
the output link L3 turns about Q with absolute angle ``theta_out``. The loop
closes when

    L1 e(theta_in) + L2 e(theta_c) = L0 e(0) + L3 e(theta_out).

The velocity ratio d(theta_out)/d(theta_in) is evaluated with the classical
expression

    rho = L_a sin(t_1 - t_2) / (L_a sin(t_1 - t_2) - L_b sin(t_1 - t_b)),

with L_a = L1, L_b = L0, t_1 = theta_c, t_2 = theta_in and t_b = 0 (the
ground direction). Only angle differences enter, so the value does not
depend on which frame the angles are measured in.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .closure import DEFAULT_MAX_ITER, DEFAULT_TOL, newton2
from .errors import (NoConvergence, OutOfDomain, Singular, SingularJacobian,
                     SolverError, ValidationError)

POLE_TOL = 1e-12
# fit samples are solved well below the default tolerance so they do not bias the fit
SAMPLE_TOL = 1e-13


@dataclass(frozen=True)
class FourBarParams:
    L0: float
    L1: float
    L2: float
    L3: float
    input_limits: tuple[float, float] = (-math.pi, math.pi)
    branch: int = 1

    def __post_init__(self):
        for name in ("L0", "L1", "L2", "L3"):
            if not getattr(self, name) > 0:
                raise ValidationError(name, f"link length must be > 0, got {getattr(self, name)}")
        lo, hi = self.input_limits
        if not lo <= hi:
            raise ValidationError("input_limits", f"min {lo} > max {hi}")
        if self.branch not in (1, -1):
            raise ValidationError("branch", "must be +1 or -1")

    def is_parallelogram(self, tol=1e-12) -> bool:
        return abs(self.L1 - self.L3) <= tol and abs(self.L2 - self.L0) <= tol


@dataclass(frozen=True)
class FourBarConfig:
    theta_in: float
    theta_c: float
    theta_out: float


@dataclass(frozen=True)
class PolyRatioModel:
    a: tuple
    x0: float
    y0: float
    degree: int
    fit_domain: tuple[float, float]
    max_residual: float = 0.0

    def __call__(self, theta_in):
        return eval_poly_ratio(self, theta_in)

    def derivative(self, theta_in) -> float:
        dx = float(theta_in) - self.x0
        return sum(k * self.a[k] * dx ** (k - 1) for k in range(1, self.degree + 1))

    def second_derivative(self, theta_in) -> float:
        dx = float(theta_in) - self.x0
        return sum(k * (k - 1) * self.a[k] * dx ** (k - 2) for k in range(2, self.degree + 1))

    def to_dict(self) -> dict:
        return {"a": list(self.a), "x0_rad": self.x0, "y0_rad": self.y0, "degree": self.degree,
                "fit_domain_rad": list(self.fit_domain), "max_residual_rad": self.max_residual}

    @classmethod
    def from_dict(cls, d) -> "PolyRatioModel":
        return cls(tuple(float(v) for v in d["a"]), float(d["x0_rad"]), float(d["y0_rad"]),
                   int(d["degree"]), tuple(d["fit_domain_rad"]),
                   float(d.get("max_residual_rad", 0.0)))


def loop_residual(p: FourBarParams, c: FourBarConfig) -> tuple[float, float]:
    rx = (p.L1 * math.cos(c.theta_in) + p.L2 * math.cos(c.theta_c)
          - p.L0 - p.L3 * math.cos(c.theta_out))
    ry = (p.L1 * math.sin(c.theta_in) + p.L2 * math.sin(c.theta_c)
          - p.L3 * math.sin(c.theta_out))
    return rx, ry


def assemble(p: FourBarParams, theta_in, branch=None) -> FourBarConfig:
    """Closed-form assembly by circle intersection (used for initial guesses)."""
    branch = p.branch if branch is None else branch
    bx, by = p.L1 * math.cos(theta_in), p.L1 * math.sin(theta_in)
    dx, dy = p.L0 - bx, -by
    d = math.hypot(dx, dy)
    if d > p.L2 + p.L3 + 1e-12 or d < abs(p.L2 - p.L3) - 1e-12 or d == 0.0:
        raise NoConvergence(f"input angle {theta_in:.6g} cannot be assembled", "four_bar")
    # distance from B along B->Q to the chord of the two circles
    along = (d * d + p.L2 * p.L2 - p.L3 * p.L3) / (2 * d)
    h = math.sqrt(max(p.L2 * p.L2 - along * along, 0.0))
    ux, uy = dx / d, dy / d
    cx = bx + along * ux - branch * h * uy
    cy = by + along * uy + branch * h * ux
    return FourBarConfig(float(theta_in), math.atan2(cy - by, cx - bx),
                         math.atan2(cy, cx - p.L0))


def fourbar_solve_output(p: FourBarParams, theta_in, guess, tol=DEFAULT_TOL,
                         max_iter=DEFAULT_MAX_ITER) -> FourBarConfig:
    """Newton solve of the loop for (theta_c, theta_out) given theta_in.

    ``guess`` is either a FourBarConfig, a (theta_c, theta_out) pair, or a bare
    output angle (the coupler guess is then taken from the closed-form branch).
    """
    bx, by = p.L1 * math.cos(theta_in), p.L1 * math.sin(theta_in)
    d = math.hypot(p.L0 - bx, by)
    if d > p.L2 + p.L3 + 1e-12 or d < abs(p.L2 - p.L3) - 1e-12:
        raise NoConvergence(f"input angle {theta_in:.6g} outside the assembly range", "four_bar")
    if isinstance(guess, FourBarConfig):
        g = (guess.theta_c, guess.theta_out)
    elif np.ndim(guess) == 0:
        g = (assemble(p, theta_in).theta_c, float(guess))
    else:
        g = (float(guess[0]), float(guess[1]))

    def fun(tc, to):
        cc, sc = math.cos(tc), math.sin(tc)
        co, so = math.cos(to), math.sin(to)
        return (bx + p.L2 * cc - p.L0 - p.L3 * co, by + p.L2 * sc - p.L3 * so,
                -p.L2 * sc, p.L3 * so, p.L2 * cc, -p.L3 * co)

    try:
        tc, to, _, _ = newton2(fun, g, tol=tol, max_iter=max_iter, mechanism="four_bar")
    except SingularJacobian as exc:
        raise Singular(f"coupler and output link collinear: {exc}", "four_bar") from exc
    return FourBarConfig(float(theta_in), tc, to)


def transmission_ratio(p: FourBarParams, c: FourBarConfig) -> float:
    """Velocity ratio d(theta_out)/d(theta_in) at a closed configuration."""
    num = p.L1 * math.sin(c.theta_c - c.theta_in)
    den = num - p.L0 * math.sin(c.theta_c - 0.0)
    if abs(den) < POLE_TOL:
        raise Singular(f"transmission ratio pole at theta_in={c.theta_in:.6g}", "four_bar")
    return num / den


def torque_ratio(p: FourBarParams, c: FourBarConfig) -> float:
    rho = transmission_ratio(p, c)
    if abs(rho) < POLE_TOL:
        raise Singular("torque ratio undefined where the velocity ratio vanishes", "four_bar")
    return 1.0 / rho


def collinearity_metric(p: FourBarParams, c: FourBarConfig) -> float:
    """Smallest |sin| of the angle between adjacent links; 0 when folded flat."""
    return min(abs(math.sin(c.theta_in)), abs(math.sin(c.theta_c - c.theta_in)),
               abs(math.sin(c.theta_out - c.theta_c)), abs(math.sin(c.theta_out)))


def solve_path(p: FourBarParams, thetas, start: FourBarConfig | None = None, max_step=0.01,
               tol=DEFAULT_TOL):
    """Warm-started loop solves along increasing or decreasing input angles."""
    thetas = [float(t) for t in thetas]
    cfg = start if start is not None else assemble(p, thetas[0])
    out = []
    for t in thetas:
        n = max(1, int(math.ceil(abs(t - cfg.theta_in) / max_step)))
        for k in range(1, n + 1):
            tk = cfg.theta_in + (t - cfg.theta_in) * k / n if k < n else t
            cfg = fourbar_solve_output(p, tk, cfg, tol=tol)
        out.append(cfg)
    return out


def _sample(p, domain, n, x0):
    """Closed configurations at ``n`` evenly spaced inputs, continued from x0."""
    xs = np.linspace(domain[0], domain[1], n)
    home = assemble(p, x0)
    upper = [x for x in xs if x >= x0]
    lower = [x for x in xs if x < x0][::-1]
    cfgs = {}
    for part in (upper, lower):
        if part:
            for x, c in zip(part, solve_path(p, part, home, tol=SAMPLE_TOL)):
                cfgs[x] = c
    return xs, [cfgs[x] for x in xs]


def fit_poly_ratio(p: FourBarParams, degree=5, domain=None, n_samples=200, x0=None,
                   holdout_factor=10) -> PolyRatioModel:
    """Least-squares polynomial for theta_out as a function of theta_in.

    The expansion point defaults to the domain midpoint; y0 is the exact loop
    output there and the constant coefficient is pinned to zero, so the model
    reproduces y0 at x0. Every sample is checked for a transmission pole. The reported
    ``max_residual`` is the larger of the fit and held-out maxima.
    """
    if degree < 0:
        raise ValueError("degree must be >= 0")
    if n_samples <= degree + 1:
        raise ValueError("need more samples than coefficients")
    domain = tuple(p.input_limits if domain is None else domain)
    if not domain[0] < domain[1]:
        raise ValueError(f"empty domain {domain}")
    x0 = 0.5 * (domain[0] + domain[1]) if x0 is None else float(x0)
    try:
        xs, cfgs = _sample(p, domain, n_samples, x0)
        for c in cfgs:
            transmission_ratio(p, c)
        y0 = fourbar_solve_output(p, x0, assemble(p, x0), tol=SAMPLE_TOL).theta_out
    except SolverError as exc:
        raise Singular(f"fit domain {domain} is not singularity free: {exc}", "four_bar") from exc
    ys = np.array([c.theta_out for c in cfgs])
    dx = xs - x0
    vander = dx[:, None] ** np.arange(degree + 1)
    # a_0 stays zero so the model passes through (x0, y0) exactly
    a = np.zeros(degree + 1)
    if degree:
        a[1:], *_ = np.linalg.lstsq(vander[:, 1:], ys - y0, rcond=None)
    model = PolyRatioModel(tuple(float(v) for v in a), x0, float(y0), int(degree), domain)
    fit_res = float(np.max(np.abs(vander @ a + y0 - ys)))
    held = validate_poly_ratio(p, model, holdout_factor * n_samples)
    max_res = max(fit_res, float(np.max(np.abs(held[:, 3]))))
    return PolyRatioModel(model.a, x0, float(y0), int(degree), domain, max_res)


def eval_poly_ratio(m: PolyRatioModel, theta_in) -> float:
    lo, hi = m.fit_domain
    x = float(theta_in)
    if x < lo - 1e-12 or x > hi + 1e-12:
        raise OutOfDomain(f"theta_in={x:.6g} outside fit domain [{lo:.6g}, {hi:.6g}]")
    dx = x - m.x0
    acc = 0.0
    for coef in reversed(m.a):
        acc = acc * dx + coef
    return m.y0 + acc


def validate_poly_ratio(p: FourBarParams, m: PolyRatioModel, n=2000) -> np.ndarray:
    """Rows (theta_in, theta_out_loop, theta_out_poly, residual) on a fine grid."""
    xs, cfgs = _sample(p, m.fit_domain, n, m.x0)
    rows = np.empty((n, 4))
    for i, (x, c) in enumerate(zip(xs, cfgs)):
        yp = eval_poly_ratio(m, x)
        rows[i] = (x, c.theta_out, yp, yp - c.theta_out)
    return rows


def write_fit_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theta_in", "theta_out_loop", "theta_out_poly", "residual"])
        for r in rows:
            w.writerow([repr(float(v)) for v in r])
