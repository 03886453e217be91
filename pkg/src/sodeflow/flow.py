"""Geodesic flows of second-order fields as first-order systems on TM.

The state is z = (x, y) with x' = y and y' = S(x, y); integration uses an
adaptive Dormand-Prince 5(4) pair whose stage derivatives are stored per
accepted step, so trajectories evaluate densely (values and derivatives)
anywhere inside their span.  Termination causes: reaching the requested
time, fiber blow-up past a sup-norm threshold, step underflow, or leaving
the declared chart box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import Box, SodeField, TangentPoint, _vec
from .errors import DomainError, NumericalError, OutsideDomainError

DEFAULT_ABS_TOL = 1e-10
DEFAULT_REL_TOL = 1e-8
DEFAULT_BLOWUP = 1e8

CAUSE_REACHED = "reached-requested-time"
CAUSE_BLOWUP = "blow-up"
CAUSE_UNDERFLOW = "step-underflow"
CAUSE_LEFT_BOX = "left-chart-box"
CAUSE_START = "start"

_STATUS_CAUSE = {
    kernels.STATUS_REACHED: CAUSE_REACHED,
    kernels.STATUS_BLOWUP: CAUSE_BLOWUP,
    kernels.STATUS_UNDERFLOW: CAUSE_UNDERFLOW,
    kernels.STATUS_LEFT_BOX: CAUSE_LEFT_BOX,
}


def _interp_weights(theta: float) -> np.ndarray:
    powers = np.array([theta, theta**2, theta**3, theta**4])
    return kernels.RK_P @ powers


def _interp_deriv_weights(theta: float) -> np.ndarray:
    powers = np.array([1.0, 2.0 * theta, 3.0 * theta**2, 4.0 * theta**3])
    return kernels.RK_P @ powers


@dataclass(frozen=True)
class Trajectory:
    """A densely evaluable integral curve (t, x(t), y(t)) of a field."""

    n: int
    t: np.ndarray  # (m+1,) monotone in integration order
    states: np.ndarray  # (m+1, 2n)
    stages: np.ndarray  # (m, 7, 2n)
    cause_lower: str
    cause_upper: str
    requested: tuple

    @property
    def forward(self) -> bool:
        return len(self.t) < 2 or self.t[-1] >= self.t[0]

    @property
    def t_min(self) -> float:
        return float(min(self.t[0], self.t[-1]))

    @property
    def t_max(self) -> float:
        return float(max(self.t[0], self.t[-1]))

    @property
    def cause(self) -> str:
        """Termination cause at the far (integration) end."""
        return self.cause_upper if self.forward else self.cause_lower

    def covers(self, t: float) -> bool:
        return self.t_min <= t <= self.t_max

    def _locate(self, t: float) -> tuple[int, float]:
        if not self.covers(t):
            raise OutsideDomainError(
                f"t = {t:g} outside the covered span [{self.t_min:g}, {self.t_max:g}]"
            )
        ts = self.t
        if self.forward:
            k = int(np.searchsorted(ts, t, side="right")) - 1
        else:
            k = int(np.searchsorted(-ts, -t, side="right")) - 1
        k = min(max(k, 0), len(ts) - 2)
        h = ts[k + 1] - ts[k]
        theta = 0.0 if h == 0.0 else (t - ts[k]) / h
        return k, float(theta)

    def eval(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Dense state (x(t), y(t)) from the stored stage interpolant."""
        if len(self.t) == 1:
            z = self.states[0]
            return z[: self.n].copy(), z[self.n :].copy()
        k, theta = self._locate(t)
        h = self.t[k + 1] - self.t[k]
        w = _interp_weights(theta)
        z = self.states[k] + h * (w @ self.stages[k])
        return z[: self.n], z[self.n :]

    def deriv(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Dense derivative (x'(t), y'(t)); y'(t) is the curve acceleration."""
        if len(self.t) == 1:
            raise OutsideDomainError("a single-point trajectory has no derivative")
        k, theta = self._locate(t)
        w = _interp_deriv_weights(theta)
        dz = w @ self.stages[k]
        return dz[: self.n], dz[self.n :]

    def eval_many(self, ts) -> np.ndarray:
        """Vectorized dense states at sorted-or-not query times: (m, 2n)."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        if np.any(ts < self.t_min) or np.any(ts > self.t_max):
            raise OutsideDomainError("query times outside the covered span")
        if len(self.t) == 1:
            return np.repeat(self.states, len(ts), axis=0)
        knots = self.t if self.forward else -self.t
        queries = ts if self.forward else -ts
        ks = np.clip(np.searchsorted(knots, queries, side="right") - 1, 0, len(self.t) - 2)
        hs = self.t[ks + 1] - self.t[ks]
        thetas = (ts - self.t[ks]) / hs
        powers = np.stack([thetas, thetas**2, thetas**3, thetas**4], axis=1)
        weights = powers @ kernels.RK_P.T  # (m, 7)
        out = self.states[ks] + hs[:, None] * np.einsum(
            "ms,msd->md", weights, self.stages[ks]
        )
        return out

    def samples(self) -> tuple[np.ndarray, np.ndarray]:
        """(t, states) with t strictly increasing, for emission."""
        if self.forward:
            return self.t.copy(), self.states.copy()
        return self.t[::-1].copy(), self.states[::-1].copy()

    def endpoint(self) -> tuple[float, np.ndarray, np.ndarray]:
        z = self.states[-1]
        return float(self.t[-1]), z[: self.n].copy(), z[self.n :].copy()


class CurveAdapter:
    """Wrap callables (x(t), y(t), y'(t)) so they quack like a trajectory.

    Lets the residual operators probe hand-built or reparametrized curves.
    """

    def __init__(self, x_fn, y_fn, ydot_fn, t_min: float, t_max: float):
        self.x_fn, self.y_fn, self.ydot_fn = x_fn, y_fn, ydot_fn
        self.t_min, self.t_max = float(t_min), float(t_max)

    def covers(self, t: float) -> bool:
        return self.t_min <= t <= self.t_max

    def eval(self, t: float):
        return np.asarray(self.x_fn(t), dtype=float), np.asarray(self.y_fn(t), dtype=float)

    def deriv(self, t: float):
        y = np.asarray(self.y_fn(t), dtype=float)
        return y, np.asarray(self.ydot_fn(t), dtype=float)


@dataclass(frozen=True)
class Bound:
    """One side of a maximal-interval estimate."""

    t: float
    tag: str  # "verified-finite" | "exceeded-horizon" | "left-chart-box"
    reason: str

    def to_dict(self) -> dict:
        return {"t": self.t, "tag": self.tag, "reason": self.reason}


@dataclass(frozen=True)
class MaximalIntervalEstimate:
    lower: Bound
    upper: Bound

    def __post_init__(self):
        if not (self.lower.t < 0.0 < self.upper.t):
            raise ValueError("the interval estimate must contain 0 in its interior")

    def to_dict(self) -> dict:
        return {"lower": self.lower.to_dict(), "upper": self.upper.to_dict()}


# ---------------------------------------------------------------------------
# Integration


def _as_point(init) -> TangentPoint:
    if isinstance(init, TangentPoint):
        return init
    x, y = init
    return TangentPoint(_vec(x), _vec(y))


def _box_arrays(box: Box | None, n: int):
    if box is None:
        return np.zeros(n), np.zeros(n), False
    return box.lo, box.hi, True


def integrate(s: SodeField, init, t0: float, t1: float, tol=None, *,
              blowup: float = DEFAULT_BLOWUP, box: Box | None = None,
              max_steps: int = 16384, max_step: float = math.inf) -> Trajectory:
    """Integrate x'' = S(x, x') from (x, y)(t0) = init toward t1.

    Stops early (recording the cause) on fiber blow-up, step underflow, or
    on leaving the chart box; the returned trajectory covers whatever span
    was actually integrated and evaluates densely inside it.  `max_step`
    caps the step length (use it when the field has compactly supported
    features an adaptive step could tunnel over).
    """
    p = _as_point(init)
    x0, y0 = s.check_point(p.x, p.y)
    f0 = s.value(x0, y0)
    if not np.all(np.isfinite(f0)):
        raise DomainError(f"field is non-finite at the initial point {p.flat.tolist()}")
    abs_tol, rel_tol = tol if tol is not None else (DEFAULT_ABS_TOL, DEFAULT_REL_TOL)
    box = box if box is not None else s.chart
    lo, hi, use_box = _box_arrays(box, s.n)
    z0 = p.flat

    spec = s.kernel_spec()
    steps = max_steps
    for _ in range(5):
        if spec is not None:
            kind, code, offs, consts, depth = spec
            ts, zs, stages, m, status = kernels.rk45(
                kind, code, offs, consts, depth, z0, float(t0), float(t1),
                rel_tol, abs_tol, steps, float(max_step), blowup, lo, hi, use_box,
            )
        else:
            ts, zs, stages, m, status = _rk45_python(
                s, z0, float(t0), float(t1), rel_tol, abs_tol, steps,
                float(max_step), blowup, lo, hi, use_box,
            )
        if status != kernels.STATUS_STEP_LIMIT:
            break
        steps *= 2
    else:
        raise NumericalError(
            f"integration did not finish within {steps} steps "
            f"(span [{t0:g}, {t1:g}])"
        )

    cause = _STATUS_CAUSE[status]
    forward = t1 >= t0
    return Trajectory(
        n=s.n,
        t=ts[: m + 1].copy(),
        states=zs[: m + 1].copy(),
        stages=stages[:m].copy(),
        cause_lower=CAUSE_START if forward else cause,
        cause_upper=cause if forward else CAUSE_START,
        requested=(float(t0), float(t1)),
    )


def _rk45_python(s: SodeField, z0, t0, t1, rtol, atol, max_steps, max_step,
                 blowup, lo, hi, use_box):
    """Generic-callable twin of kernels.rk45 for fields without a tape
    (derivative-backed coefficient families).  Same tableau, same control."""
    A, E = kernels.RK_A, kernels.RK_E
    dim = len(z0)
    n = dim // 2

    def rhs(z):
        out = np.empty(dim)
        out[:n] = z[n:]
        out[n:] = s.value_flat(z)
        return out

    ts = np.empty(max_steps + 1)
    zs = np.empty((max_steps + 1, dim))
    stages = np.empty((max_steps, 7, dim))
    ts[0] = t0
    zs[0] = z0
    f = rhs(z0)
    direction = 1.0 if t1 >= t0 else -1.0
    scale = atol + rtol * np.abs(z0)
    d0 = math.sqrt(float(np.mean((z0 / scale) ** 2)))
    d1 = math.sqrt(float(np.mean((f / scale) ** 2)))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    f1 = rhs(z0 + h0 * direction * f)
    d2 = math.sqrt(float(np.mean(((f1 - f) / scale) ** 2))) / h0
    if not math.isfinite(d2):
        h = h0
    elif max(d1, d2) <= 1e-15:
        h = max(1e-6, h0 * 1e-3)
    else:
        h = min(100.0 * h0, (0.01 / max(d1, d2)) ** 0.2)
    h = min(h, max_step)
    h *= direction

    t, z = t0, z0.copy()
    K = np.empty((7, dim))
    nsteps = 0
    status = kernels.STATUS_STEP_LIMIT
    while nsteps < max_steps:
        if (t - t1) * direction >= 0.0:
            status = kernels.STATUS_REACHED
            break
        if abs(h) < 1e-12 * max(1.0, abs(t)):
            status = kernels.STATUS_UNDERFLOW
            break
        if abs(h) > max_step:
            h = max_step * direction
        clipped = False
        if (t + h - t1) * direction > 0.0:
            h = t1 - t
            clipped = True
        K[0] = f
        for stage in range(1, 7):
            ztmp = z + h * (A[stage, :stage] @ K[:stage])
            if stage == 6:
                znew = ztmp
            K[stage] = rhs(ztmp)
        errv = h * (E @ K)
        sc = atol + rtol * np.maximum(np.abs(z), np.abs(znew))
        err = math.sqrt(float(np.mean((errv / sc) ** 2)))
        if not math.isfinite(err):
            h *= 0.2
            continue
        if err > 1.0:
            h *= max(0.2, 0.9 * err**-0.2)
            continue
        tnew = t1 if clipped else t + h
        nsteps += 1
        ts[nsteps] = tnew
        zs[nsteps] = znew
        stages[nsteps - 1] = K
        t, z, f = tnew, znew.copy(), K[6].copy()
        if float(np.max(np.abs(z[n:]))) > blowup:
            status = kernels.STATUS_BLOWUP
            break
        if use_box and (np.any(z[:n] < lo) or np.any(z[:n] > hi)):
            status = kernels.STATUS_LEFT_BOX
            break
        h *= 10.0 if err == 0.0 else min(10.0, max(0.2, 0.9 * err**-0.2))
    if status == kernels.STATUS_STEP_LIMIT and (t - t1) * direction >= 0.0:
        status = kernels.STATUS_REACHED
    return ts, zs, stages, nsteps, status


def integrate_variational(s: SodeField, init, dv, t_end: float, tol=None):
    """Integrate the geodesic together with its first and second variations
    in the initial-velocity direction dv; returns (z, dz, ddz) at t_end.

    Only available for expression-backed fields (the variations ride on
    exact directional derivatives of the fiber equations).
    """
    p = _as_point(init)
    s.check_point(p.x, p.y)
    spec = s.kernel_spec()
    if spec is None or spec[0] != 0:
        raise NumericalError(
            "variational integration needs an expression-backed field"
        )
    _, code, offs, consts, depth = spec
    abs_tol, rel_tol = tol if tol is not None else (1e-12, 1e-10)
    n = s.n
    Z0 = np.zeros(6 * n)
    Z0[: 2 * n] = p.flat
    Z0[2 * n + n : 4 * n] = _vec(dv, n)
    Z, status = kernels.rk45_variational(
        code, offs, consts, depth, Z0, 0.0, float(t_end), rel_tol, abs_tol, 200000
    )
    if status != kernels.STATUS_REACHED:
        raise OutsideDomainError(
            f"variational integration stopped early (status {status})"
        )
    return Z[: 2 * n], Z[2 * n : 4 * n], Z[4 * n :]


# ---------------------------------------------------------------------------
# Escape times / maximal intervals


def escape_time(s: SodeField, init, direction: str = "forward", *,
                horizon: float = 50.0, blowup: float = DEFAULT_BLOWUP,
                tol=None, box: Box | None = None, refine: float = 1e-3) -> Bound:
    """One-sided maximal-interval bound: integrate until blow-up, underflow,
    box exit, or the horizon; blow-up crossings are refined by bisection on
    the dense last step (well below the requested `refine` resolution)."""
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    t1 = horizon if direction == "forward" else -horizon
    tr = integrate(s, init, 0.0, t1, tol, blowup=blowup, box=box)
    cause = tr.cause
    t_end, _, y_end = tr.endpoint()
    if cause == CAUSE_REACHED:
        return Bound(t1, "exceeded-horizon", "reached the horizon without event")
    if cause == CAUSE_BLOWUP:
        t_cross = _refine_blowup(tr, blowup, refine)
        return Bound(t_cross, "verified-finite", CAUSE_BLOWUP)
    if cause == CAUSE_UNDERFLOW:
        return Bound(t_end, "verified-finite", CAUSE_UNDERFLOW)
    return Bound(t_end, "left-chart-box", CAUSE_LEFT_BOX)


def _refine_blowup(tr: Trajectory, blowup: float, refine: float) -> float:
    t_hi = float(tr.t[-1])
    t_lo = float(tr.t[-2]) if len(tr.t) > 1 else t_hi
    n = tr.n

    def over(t):
        _, y = tr.eval(t)
        return float(np.max(np.abs(y))) >= blowup

    if t_lo == t_hi or over(t_lo):
        return t_hi
    # bisect the threshold crossing inside the final step
    for _ in range(80):
        if abs(t_hi - t_lo) < 1e-6 * max(1.0, abs(t_hi)) and abs(t_hi - t_lo) < refine:
            break
        mid = 0.5 * (t_lo + t_hi)
        if over(mid):
            t_hi = mid
        else:
            t_lo = mid
    return 0.5 * (t_lo + t_hi)


def maximal_interval(s: SodeField, init, *, horizon: float = 50.0,
                     blowup: float = DEFAULT_BLOWUP, tol=None,
                     box: Box | None = None) -> MaximalIntervalEstimate:
    return MaximalIntervalEstimate(
        lower=escape_time(s, init, "backward", horizon=horizon, blowup=blowup,
                          tol=tol, box=box),
        upper=escape_time(s, init, "forward", horizon=horizon, blowup=blowup,
                          tol=tol, box=box),
    )


# ---------------------------------------------------------------------------
# Residuals


def geodesic_residual(s: SodeField, curve, times) -> float:
    """max over probe times of |c''(t) - S(c(t), c'(t))| in the sup norm.

    `curve` may be an integrated Trajectory or any adapter exposing
    covers/eval/deriv (hand-built curves, reparametrizations).
    """
    worst = 0.0
    for t in np.atleast_1d(np.asarray(times, dtype=float)):
        if not curve.covers(t):
            raise OutsideDomainError(f"probe time {t:g} outside the curve span")
        x, y = curve.eval(t)
        _, ydot = curve.deriv(t)
        res = float(np.max(np.abs(ydot - s.value(x, y))))
        worst = max(worst, res)
    return worst
