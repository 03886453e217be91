"""Generalized exponential maps of a second-order field.

exp^eps_p(v) is the time-eps point of the geodesic with c(0) = p and
c'(0) = v.  At eps = 0 every map collapses to the bundle projection; for
eps != 0 inside the maximal interval it is a local diffeomorphism, probed
here through finite-difference Jacobians, conjugate-parameter scans, and
the two-parameter plume family (geodesic curves in eps, non-geodesic
a-curves in the radial scale a).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import SodeField, EXCLUDES_ZERO, _vec
from .errors import DomainError, OutsideDomainError
from .flow import (
    Bound,
    MaximalIntervalEstimate,
    CAUSE_BLOWUP,
    CAUSE_REACHED,
    CAUSE_UNDERFLOW,
    DEFAULT_BLOWUP,
    _refine_blowup,
    escape_time,
    integrate,
    integrate_variational,
)

__all__ = [
    "exp_map",
    "eps_domain",
    "exp_jacobian",
    "a_curve",
    "plume",
    "conjugate_scan",
    "ExpDomainEstimate",
    "ExpJacobian",
    "ACurve",
    "PlumeData",
]


def _early_stop_bound(tr) -> Bound:
    cause = tr.cause
    t_end = float(tr.t[-1])
    if cause == CAUSE_BLOWUP:
        return Bound(_refine_blowup(tr, DEFAULT_BLOWUP, 1e-3), "verified-finite", cause)
    if cause == CAUSE_UNDERFLOW:
        return Bound(t_end, "verified-finite", cause)
    return Bound(t_end, "left-chart-box", cause)


def exp_map(s: SodeField, p, v, eps: float, tol=None, *,
            blowup: float = DEFAULT_BLOWUP) -> np.ndarray:
    """The point c(eps) of the geodesic with c(0) = p, c'(0) = v.

    eps = 0 returns p exactly (the maps degenerate to the bundle
    projection).  A zero v on a zero-section-excluded field follows the
    convention exp_p(0) = p; regularity there is a per-case question, so
    callers probing smoothness should use one-sided difference quotients.
    """
    p = _vec(p, s.n)
    v = _vec(v, s.n)
    if eps == 0.0:
        return p.copy()
    if s.domain == EXCLUDES_ZERO and not np.any(v != 0.0):
        return p.copy()  # convention point
    tr = integrate(s, (p, v), 0.0, float(eps), tol, blowup=blowup)
    if tr.cause != CAUSE_REACHED:
        bound = _early_stop_bound(tr)
        raise OutsideDomainError(
            f"eps = {eps:g} lies outside the maximal interval; integration "
            f"stopped at t = {bound.t:g} ({bound.reason})",
            bound=bound,
        )
    _, x_end, _ = tr.endpoint()
    return x_end


@dataclass
class ExpDomainEstimate:
    """Two-sided parameter-interval estimate for the maps at (p, v)."""

    p: np.ndarray
    v: np.ndarray
    interval: MaximalIntervalEstimate
    _cache: dict = field(default_factory=dict)

    def contains(self, eps: float) -> bool:
        hit = self._cache.get(eps)
        if hit is None:
            hit = self.interval.lower.t < eps < self.interval.upper.t
            self._cache[eps] = hit
        return hit

    def to_dict(self) -> dict:
        return {
            "p": self.p.tolist(),
            "v": self.v.tolist(),
            "interval": self.interval.to_dict(),
        }


def eps_domain(s: SodeField, p, v, horizon: float = 50.0, *,
               blowup: float = DEFAULT_BLOWUP, tol=None) -> ExpDomainEstimate:
    p = _vec(p, s.n)
    v = _vec(v, s.n)
    est = MaximalIntervalEstimate(
        lower=escape_time(s, (p, v), "backward", horizon=horizon,
                          blowup=blowup, tol=tol),
        upper=escape_time(s, (p, v), "forward", horizon=horizon,
                          blowup=blowup, tol=tol),
    )
    return ExpDomainEstimate(p, v, est)


@dataclass(frozen=True)
class ExpJacobian:
    matrix: np.ndarray
    det: float
    cond: float
    step: float

    def to_dict(self) -> dict:
        return {
            "matrix": self.matrix.tolist(),
            "det": self.det,
            "cond": self.cond,
            "step": self.step,
        }


def exp_jacobian(s: SodeField, p, v, eps: float, h: float | None = None,
                 tol=None) -> ExpJacobian:
    """Central-difference Jacobian of v -> exp^eps_p(v)."""
    p = _vec(p, s.n)
    v = _vec(v, s.n)
    if h is None:
        h = 1e-5 * max(1.0, float(np.max(np.abs(v))))
    cols = []
    for j in range(s.n):
        dv = np.zeros(s.n)
        dv[j] = h
        try:
            plus = exp_map(s, p, v + dv, eps, tol)
            minus = exp_map(s, p, v - dv, eps, tol)
        except OutsideDomainError as exc:
            raise OutsideDomainError(
                f"Jacobian stencil point left the eps-domain at eps = {eps:g}; "
                f"try a smaller eps or step (h = {h:g})",
                bound=exc.bound,
            ) from exc
        cols.append((plus - minus) / (2.0 * h))
    J = np.column_stack(cols)
    return ExpJacobian(J, float(np.linalg.det(J)), float(np.linalg.cond(J)), h)


@dataclass(frozen=True)
class ACurve:
    """The non-geodesic radial slice a -> exp^eps_p(a v) on a grid."""

    a: np.ndarray
    points: np.ndarray  # (m, n), nan rows where the domain was left
    residual: float  # max |gamma'' - S(gamma, gamma')| over evaluable nodes
    failures: tuple

    def to_dict(self) -> dict:
        return {
            "a": self.a.tolist(),
            "points": self.points.tolist(),
            "residual": self.residual,
            "failures": list(self.failures),
        }


def a_curve(s: SodeField, p, v, eps: float, a_grid, tol=None) -> ACurve:
    """Evaluate a -> exp^eps_p(a v) and quantify how far it is from solving
    the field's geodesic equation in the parameter a.

    For expression-backed fields the residual rides on first and second
    variational integrations (exact to integrator tolerance); otherwise it
    falls back to finite differences on the grid.
    """
    p = _vec(p, s.n)
    v = _vec(v, s.n)
    a_grid = np.atleast_1d(np.asarray(a_grid, dtype=float))
    points = np.full((len(a_grid), s.n), np.nan)
    failures = []
    residual = 0.0
    variational = s.kernel_spec() is not None and s.kernel_spec()[0] == 0
    for i, a in enumerate(a_grid):
        av = a * v
        if s.domain == EXCLUDES_ZERO and not np.any(av != 0.0):
            points[i] = p
            continue
        try:
            if variational:
                z, dz, ddz = integrate_variational(s, (p, av), v, eps, tol)
                points[i] = z[: s.n]
                gamma, dgamma, ddgamma = z[: s.n], dz[: s.n], ddz[: s.n]
                res = float(np.max(np.abs(ddgamma - s.value(gamma, dgamma))))
                residual = max(residual, res)
            else:
                points[i] = exp_map(s, p, av, eps, tol)
        except (OutsideDomainError, DomainError) as exc:
            failures.append((float(a), str(exc)))
    if not variational and len(a_grid) >= 3:
        residual = _fd_residual(s, a_grid, points)
    return ACurve(a_grid, points, residual, tuple(failures))


def _fd_residual(s: SodeField, a_grid, points) -> float:
    # second-order finite differences on a uniform grid; accuracy is limited
    # to ~h^2, so this path only quantifies gross non-geodesy
    h = float(a_grid[1] - a_grid[0])
    worst = 0.0
    for i in range(1, len(a_grid) - 1):
        window = points[i - 1 : i + 2]
        if not np.all(np.isfinite(window)):
            continue
        d1 = (window[2] - window[0]) / (2 * h)
        d2 = (window[2] - 2 * window[1] + window[0]) / (h * h)
        try:
            worst = max(worst, float(np.max(np.abs(d2 - s.value(window[1], d1)))))
        except DomainError:
            continue
    return worst


@dataclass(frozen=True)
class PlumeData:
    """Both slicings of the two-parameter family exp^eps_p(a v).

    `geodesics[iv, ia]` samples the eps-parameter geodesic for direction iv
    and scale a_grid[ia]; `acurves[iv, ie]` samples the radial a-curve at
    eps_grid[ie].  The two arrays come from independent integrations, so
    `consistency` measures how well the family closes on itself.
    """

    p: np.ndarray
    directions: np.ndarray  # (n_dirs, n)
    a_grid: np.ndarray
    eps_grid: np.ndarray
    geodesics: np.ndarray  # (n_dirs, n_a, n_eps, n)
    acurves: np.ndarray  # (n_dirs, n_eps, n_a, n)
    consistency: float
    failures: tuple

    def to_dict(self) -> dict:
        return {
            "p": self.p.tolist(),
            "directions": self.directions.tolist(),
            "a_grid": self.a_grid.tolist(),
            "eps_grid": self.eps_grid.tolist(),
            "consistency": self.consistency,
            "failures": list(self.failures),
        }


def default_plume_grids() -> tuple[np.ndarray, np.ndarray]:
    """Figure-style defaults: eps on (0, 3] and a from 0.05 to 1 by 0.05."""
    eps = np.round(np.arange(0.05, 3.0 + 1e-9, 0.05), 10)
    a = np.round(np.arange(0.05, 1.0 + 1e-9, 0.05), 10)
    return eps, a


def plume(s: SodeField, p, directions, a_grid=None, eps_grid=None,
          tol=(1e-13, 1e-11)) -> PlumeData:
    """Compute the full two-parameter family and both slicings.

    Each geodesic curve is one integration densely sampled over the eps
    grid; each a-curve node is re-derived from a second, independently
    stepped integration, so the consistency figure is a real check rather
    than an identity.
    """
    p = _vec(p, s.n)
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    if eps_grid is None or a_grid is None:
        d_eps, d_a = default_plume_grids()
        eps_grid = d_eps if eps_grid is None else np.atleast_1d(eps_grid)
        a_grid = d_a if a_grid is None else np.atleast_1d(a_grid)
    eps_grid = np.asarray(eps_grid, dtype=float)
    a_grid = np.asarray(a_grid, dtype=float)
    n_dirs, n_a, n_eps = len(directions), len(a_grid), len(eps_grid)
    eps_max = float(np.max(eps_grid))

    geod = np.full((n_dirs, n_a, n_eps, s.n), np.nan)
    acur = np.full((n_dirs, n_eps, n_a, s.n), np.nan)
    failures = []

    def sample_curve(iv, ia, tolerances, out):
        v = a_grid[ia] * directions[iv]
        if s.domain == EXCLUDES_ZERO and not np.any(v != 0.0):
            out[:] = p
            return
        try:
            tr = integrate(s, (p, v), 0.0, eps_max, tolerances)
        except DomainError as exc:
            failures.append((iv, float(a_grid[ia]), str(exc)))
            return
        for ie, eps in enumerate(eps_grid):
            if tr.covers(eps):
                out[ie] = tr.eval(eps)[0]
            else:
                failures.append((iv, float(a_grid[ia]), f"eps={eps:g} not covered"))

    for iv in range(n_dirs):
        for ia in range(n_a):
            sample_curve(iv, ia, tol, geod[iv, ia])
            second = np.full((n_eps, s.n), np.nan)
            sample_curve(iv, ia, (tol[0] / 16.0, tol[1] / 16.0), second)
            acur[iv, :, ia] = second

    diffs = np.abs(geod - np.transpose(acur, (0, 2, 1, 3)))
    consistency = float(np.nanmax(diffs)) if np.any(np.isfinite(diffs)) else float("nan")
    return PlumeData(
        p=p,
        directions=directions,
        a_grid=a_grid,
        eps_grid=eps_grid,
        geodesics=geod,
        acurves=acur,
        consistency=consistency,
        failures=tuple(failures),
    )


def conjugate_scan(s: SodeField, p, v, eps_grid, *, det_tol: float = 1e-12,
                   refine: float = 1e-4, tol=None) -> list[float]:
    """Parameters where det(exp_jacobian) changes sign or (nearly) vanishes.

    Sign changes are bracketed on the grid and refined by bisection to the
    `refine` resolution; an empty list means no conjugate parameter was
    detected on the grid.
    """
    p = _vec(p, s.n)
    v = _vec(v, s.n)
    eps_grid = np.atleast_1d(np.asarray(eps_grid, dtype=float))
    dets = []
    for eps in eps_grid:
        dets.append(exp_jacobian(s, p, v, float(eps), tol=tol).det)
    hits = []
    for eps, det in zip(eps_grid, dets):
        if abs(det) < det_tol:
            hits.append(float(eps))

    def det_at(eps):
        return exp_jacobian(s, p, v, float(eps), tol=tol).det

    for i in range(len(eps_grid) - 1):
        d0, d1 = dets[i], dets[i + 1]
        if d0 == 0.0 or d1 == 0.0 or np.sign(d0) == np.sign(d1):
            continue
        lo, hi = float(eps_grid[i]), float(eps_grid[i + 1])
        flo = d0
        while hi - lo > refine:
            mid = 0.5 * (lo + hi)
            fmid = det_at(mid)
            if fmid == 0.0:
                lo = hi = mid
                break
            if np.sign(fmid) == np.sign(flo):
                lo = mid
                flo = fmid
            else:
                hi = mid
        hits.append(0.5 * (lo + hi))
    return sorted(hits)
