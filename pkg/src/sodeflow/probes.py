"""Empirical global probes: pseudoconvexity and disprisonment evidence,
geodesic-connectivity shooting, sup-norm field distance, and compactly
supported perturbations.

The probes generate evidence at desk scale, never proofs: these are open
conditions that finite sampling can only support or refute by exhibiting a
witness.  Verdicts are deterministic for a fixed seed and sampling spec,
counterexample witnesses replay, and every serialized report says all of
this explicitly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .core import Box, SodeField, _vec
from .errors import DomainError, NumericalError, OutsideDomainError
from .expr import Bin, Call, Expression, Num, Var, num as num_node
from .expmap import exp_jacobian, exp_map
from .flow import CAUSE_BLOWUP, CAUSE_REACHED, DEFAULT_BLOWUP, integrate

__all__ = [
    "ProbeSampling",
    "EvidenceReport",
    "BumpSpec",
    "probe_pseudoconvexity",
    "probe_disprisonment",
    "connect_geodesically",
    "c0_distance",
    "perturb",
    "replay",
    "transition_delta",
    "ShootingResult",
]

DISCLAIMER = (
    "empirical evidence from finite sampling, not a proof; replay with the "
    "recorded seed and sampling spec reproduces this report"
)


# ---------------------------------------------------------------------------
# Sampling


@dataclass(frozen=True)
class ProbeSampling:
    """Deterministic initial-condition grid: base points on a per-axis grid
    inside the probe box (endpoints included), unit directions, speeds.

    The defaults give a 32-per-axis base grid with 32 directions (a 32^3
    grid over base x base x angle for plane fields), subsampled at a fixed
    seed down to at most `cap` initial conditions.
    """

    base_per_axis: int = 32
    directions: int = 32
    speeds: tuple = (1.0,)
    cap: int = 5000
    seed: int = 7071
    dense: int = 400  # dense position samples per trajectory
    max_step: float | None = None  # step cap; default ties to the dense grid

    def step_cap(self, horizon: float) -> float:
        # keep steps comparable to the dense sampling so short-lived,
        # compactly supported features cannot be tunneled over
        if self.max_step is not None:
            return self.max_step
        return 2.0 * max(horizon / self.dense, 1e-3)

    def initial_conditions(self, box: Box, n: int) -> np.ndarray:
        axes = [np.linspace(box.lo[i], box.hi[i], self.base_per_axis) for i in range(n)]
        grids = np.meshgrid(*axes, indexing="ij")
        bases = np.stack([g.reshape(-1) for g in grids], axis=1)
        if n == 1:
            dirs = np.array([[1.0], [-1.0]])
        elif n == 2:
            angles = 2.0 * np.pi * np.arange(self.directions) / self.directions
            dirs = np.column_stack([np.cos(angles), np.sin(angles)])
        else:
            rng = np.random.default_rng(self.seed)
            raw = rng.normal(size=(self.directions, n))
            dirs = raw / np.linalg.norm(raw, axis=1, keepdims=True)
        speeds = np.asarray(self.speeds, dtype=float)
        velocities = (speeds[:, None, None] * dirs[None, :, :]).reshape(-1, n)
        nb, nv = len(bases), len(velocities)
        ics = np.hstack(
            [np.repeat(bases, nv, axis=0), np.tile(velocities, (nb, 1))]
        )
        if len(ics) > self.cap:
            rng = np.random.default_rng(self.seed)
            keep = np.sort(rng.choice(len(ics), size=self.cap, replace=False))
            ics = ics[keep]
        return ics

    def to_dict(self) -> dict:
        return {
            "base_per_axis": self.base_per_axis,
            "directions": self.directions,
            "speeds": list(self.speeds),
            "cap": self.cap,
            "seed": self.seed,
            "dense": self.dense,
            "max_step": self.max_step,
        }


@dataclass(frozen=True)
class EvidenceReport:
    property: str  # "pseudoconvexity" | "disprisonment"
    verdict: str  # "evidence-for" | "counterexample-found" | "inconclusive"
    witness: dict | None
    enclosure: Box | None  # the K' found (pseudoconvexity only)
    sampling: dict
    seed: int
    tallies: dict
    region: dict
    disclaimer: str = DISCLAIMER

    def to_dict(self) -> dict:
        return {
            "property": self.property,
            "verdict": self.verdict,
            "witness": self.witness,
            "enclosure": None if self.enclosure is None else self.enclosure.to_dict(),
            "sampling": self.sampling,
            "seed": self.seed,
            "tallies": dict(sorted(self.tallies.items())),
            "region": self.region,
            "disclaimer": self.disclaimer,
        }


def _dense_positions(tr, n: int, count: int) -> tuple[np.ndarray, np.ndarray]:
    ts = np.linspace(tr.t_min, tr.t_max, count)
    return ts, tr.eval_many(ts)[:, :n]


# ---------------------------------------------------------------------------
# Pseudoconvexity


def probe_pseudoconvexity(s: SodeField, K: Box, sampling: ProbeSampling | None = None,
                          horizon: float = 50.0, *,
                          ladder_factors=(1.0, 2.0, 4.0, 8.0),
                          blowup: float = DEFAULT_BLOWUP, tol=None) -> EvidenceReport:
    """Sample geodesic segments with both endpoints in K and report either
    the smallest axis-aligned box enclosing all of them, or a witness whose
    excursion escapes the whole escalating box ladder."""
    if s.chart is not None and not s.chart.contains_box(K):
        raise DomainError("probe region K must lie inside the chart box")
    sampling = sampling or ProbeSampling()
    ladder_top = K.scaled(max(ladder_factors))
    ics = sampling.initial_conditions(K, s.n)

    cap = sampling.step_cap(horizon)
    seg_lo = None
    seg_hi = None
    witness = None
    segments = 0
    trajectories = 0
    for ic in ics:
        x0, y0 = ic[: s.n], ic[s.n :]
        try:
            tr = integrate(s, (x0, y0), 0.0, horizon, tol, blowup=blowup,
                           max_step=cap)
        except DomainError:
            continue
        trajectories += 1
        ts, xs = _dense_positions(tr, s.n, sampling.dense)
        inside = np.all((xs >= K.lo) & (xs <= K.hi), axis=1)
        idx = np.flatnonzero(inside)
        if len(idx) < 2 or ts[idx[-1]] <= ts[idx[0]]:
            continue
        window = xs[idx[0] : idx[-1] + 1]
        w_lo = window.min(axis=0)
        w_hi = window.max(axis=0)
        segments += 1
        seg_lo = w_lo if seg_lo is None else np.minimum(seg_lo, w_lo)
        seg_hi = w_hi if seg_hi is None else np.maximum(seg_hi, w_hi)
        escapes = np.any(w_lo < ladder_top.lo) or np.any(w_hi > ladder_top.hi)
        if escapes and witness is None:
            witness = {
                "x0": x0.tolist(),
                "y0": y0.tolist(),
                "t_interval": [float(ts[idx[0]]), float(ts[idx[-1]])],
                "excursion": {"lo": w_lo.tolist(), "hi": w_hi.tolist()},
            }

    tallies = {"initial_conditions": len(ics), "trajectories": trajectories,
               "segments": segments}
    region = {"K": K.to_dict(), "ladder_factors": list(ladder_factors),
              "horizon": horizon}
    if segments == 0:
        return EvidenceReport("pseudoconvexity", "inconclusive", None, None,
                              sampling.to_dict(), sampling.seed, tallies, region)
    if witness is not None:
        return EvidenceReport("pseudoconvexity", "counterexample-found", witness,
                              None, sampling.to_dict(), sampling.seed, tallies, region)
    return EvidenceReport("pseudoconvexity", "evidence-for", None,
                          Box(seg_lo, seg_hi), sampling.to_dict(), sampling.seed,
                          tallies, region)


# ---------------------------------------------------------------------------
# Disprisonment


def probe_disprisonment(s: SodeField, sampling: ProbeSampling | None = None,
                        ladder: list[Box] | None = None, horizon: float = 50.0, *,
                        base_box: Box | None = None,
                        blowup: float = DEFAULT_BLOWUP, tol=None) -> EvidenceReport:
    """Integrate inextendible geodesics from sampled initial conditions; a
    curve that stays inside some ladder box over its whole integrated span
    without blowing up is an imprisonment candidate.

    Bounded curves that end in finite-time blow-up are tallied separately:
    their inextendibility is of a different nature and the definition does
    not adjudicate them.
    """
    if ladder is None:
        if base_box is None:
            raise ValueError("need either a ladder of boxes or a base box")
        ladder = [base_box.scaled(f) for f in (1.0, 2.0, 4.0, 8.0)]
    for small, big in zip(ladder, ladder[1:]):
        if not big.contains_box(small):
            raise ValueError("ladder boxes must be nested")
    if s.chart is not None and not s.chart.contains_box(ladder[-1]):
        raise DomainError("the ladder must lie inside the chart box")
    sampling = sampling or ProbeSampling()
    ics = sampling.initial_conditions(ladder[0], s.n)

    candidates = []
    blowup_bounded = 0
    escaped = 0
    other_bounded = 0
    cap = sampling.step_cap(horizon)
    for ic in ics:
        x0, y0 = ic[: s.n], ic[s.n :]
        try:
            fw = integrate(s, (x0, y0), 0.0, horizon, tol, blowup=blowup,
                           max_step=cap)
            bw = integrate(s, (x0, y0), 0.0, -horizon, tol, blowup=blowup,
                           max_step=cap)
        except DomainError:
            continue
        positions = np.vstack(
            [_dense_positions(fw, s.n, sampling.dense)[1],
             _dense_positions(bw, s.n, sampling.dense)[1]]
        )
        lo = positions.min(axis=0)
        hi = positions.max(axis=0)
        bounding = next(
            (i for i, box in enumerate(ladder)
             if box.contains(lo) and box.contains(hi)),
            None,
        )
        if bounding is None:
            escaped += 1
            continue
        causes = (fw.cause, bw.cause)
        if CAUSE_BLOWUP in causes:
            blowup_bounded += 1
            continue
        if causes == (CAUSE_REACHED, CAUSE_REACHED):
            candidates.append({
                "x0": x0.tolist(),
                "y0": y0.tolist(),
                "ladder_index": int(bounding),
                "span": [-horizon, horizon],
            })
        else:
            other_bounded += 1

    tallies = {
        "initial_conditions": len(ics),
        "imprisonment_candidates": len(candidates),
        "blowup_terminated_bounded": blowup_bounded,
        "escaped": escaped,
        "other_bounded": other_bounded,
    }
    region = {
        "ladder": [b.to_dict() for b in ladder],
        "horizon": horizon,
    }
    if candidates:
        return EvidenceReport("disprisonment", "counterexample-found",
                              candidates[0], None, sampling.to_dict(),
                              sampling.seed, tallies, region)
    return EvidenceReport("disprisonment", "evidence-for", None, None,
                          sampling.to_dict(), sampling.seed, tallies, region)


# ---------------------------------------------------------------------------
# Witness replay


def replay(s: SodeField, report: EvidenceReport, *, horizon: float = 50.0,
           tol=None, reproduce_tol: float = 1e-6) -> bool:
    """Re-integrate a counterexample witness and check it reproduces the
    reported violation within `reproduce_tol`."""
    if report.verdict != "counterexample-found" or report.witness is None:
        raise ValueError("only counterexample reports carry a replayable witness")
    w = report.witness
    x0 = np.asarray(w["x0"])
    y0 = np.asarray(w["y0"])
    cap = report.sampling.get("max_step") or 2.0 * max(
        report.region["horizon"] / report.sampling.get("dense", 400), 1e-3
    )
    if report.property == "pseudoconvexity":
        K = Box(np.asarray(report.region["K"]["lo"]), np.asarray(report.region["K"]["hi"]))
        top = K.scaled(max(report.region["ladder_factors"]))
        t1, t2 = w["t_interval"]
        tr = integrate(s, (x0, y0), 0.0, report.region["horizon"], tol,
                       max_step=cap)
        for t in (t1, t2):
            x, _ = tr.eval(t)
            if not K.contains(x, tol=reproduce_tol):
                return False
        ts = np.linspace(t1, t2, 400)
        xs = tr.eval_many(ts)[:, : s.n]
        return bool(
            np.any(xs < top.lo - reproduce_tol) or np.any(xs > top.hi + reproduce_tol)
        )
    if report.property == "disprisonment":
        ladder = report.region["ladder"]
        box = Box(np.asarray(ladder[w["ladder_index"]]["lo"]),
                  np.asarray(ladder[w["ladder_index"]]["hi"]))
        h = report.region["horizon"]
        fw = integrate(s, (x0, y0), 0.0, h, tol, max_step=cap)
        bw = integrate(s, (x0, y0), 0.0, -h, tol, max_step=cap)
        if fw.cause != CAUSE_REACHED or bw.cause != CAUSE_REACHED:
            return False
        for tr in (fw, bw):
            xs = _dense_positions(tr, s.n, 400)[1]
            if np.any(xs < box.lo - reproduce_tol) or np.any(xs > box.hi + reproduce_tol):
                return False
        return True
    raise ValueError(f"unknown report property {report.property!r}")


# ---------------------------------------------------------------------------
# Geodesic connectivity (shooting)


@dataclass(frozen=True)
class ShootingResult:
    v: np.ndarray
    residual: float
    iterations: int

    def to_dict(self) -> dict:
        return {
            "v": self.v.tolist(),
            "residual": self.residual,
            "iterations": self.iterations,
        }


def connect_geodesically(s: SodeField, p, q, eps: float, v0=None,
                         max_iter: int = 20, *, tol=None,
                         target_tol: float = 1e-8) -> ShootingResult:
    """Damped Newton on F(v) = exp^eps_p(v) - q using the finite-difference
    Jacobian; converged when |F| < 1e-8 in the sup norm."""
    if eps == 0.0:
        raise ValueError("shooting needs eps != 0 (exp^0 is the projection)")
    p = _vec(p, s.n)
    q = _vec(q, s.n)
    v = _vec(v0, s.n).copy() if v0 is not None else (q - p) / eps
    if s.domain == "nozero" and not np.any(v != 0.0):
        v = v + 1e-3

    def residual(vv):
        return exp_map(s, p, vv, eps, tol) - q

    try:
        F = residual(v)
    except OutsideDomainError as exc:
        raise NumericalError(f"initial guess left the eps-domain: {exc}") from exc
    for it in range(1, max_iter + 1):
        nrm = float(np.max(np.abs(F)))
        if nrm < target_tol:
            return ShootingResult(v, nrm, it - 1)
        J = exp_jacobian(s, p, v, eps, tol=tol)
        if not np.isfinite(J.cond) or J.cond > 1e12:
            raise NumericalError(
                f"shooting Jacobian is numerically singular (cond {J.cond:.3e}); "
                "a conjugate parameter may sit nearby - see conjugate_scan"
            )
        try:
            dv = np.linalg.solve(J.matrix, -F)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                "shooting Jacobian solve failed; see conjugate_scan"
            ) from exc
        lam = 1.0
        for _ in range(8):
            try:
                F_trial = residual(v + lam * dv)
            except (OutsideDomainError, DomainError):
                lam *= 0.5
                continue
            if float(np.max(np.abs(F_trial))) < nrm:
                break
            lam *= 0.5
        else:
            raise NumericalError(
                f"no descent after 8 step halvings (residual {nrm:.3e})"
            )
        v = v + lam * dv
        F = F_trial
    nrm = float(np.max(np.abs(F)))
    if nrm < target_tol:
        return ShootingResult(v, nrm, max_iter)
    raise NumericalError(
        f"shooting did not converge in {max_iter} iterations "
        f"(residual {nrm:.3e})"
    )


# ---------------------------------------------------------------------------
# Sup-norm distance and bump perturbations


def c0_distance(s1: SodeField, s2: SodeField, region: Box, *,
                samples: int = 4096, seed: int = 90210) -> float:
    """Sampled sup of |S1 - S2| over a (x, y)-region: a lower bound of the
    true sup-norm distance, reported as such."""
    if s1.n != s2.n:
        raise ValueError("fields live in different dimensions")
    if region.dim != 2 * s1.n:
        raise ValueError("the region must be a box in (x, y)")
    rng = np.random.default_rng(seed)
    pts = rng.uniform(region.lo, region.hi, size=(samples, region.dim))
    lattice_axes = [np.linspace(region.lo[i], region.hi[i], 5) for i in range(region.dim)]
    if region.dim <= 4:
        lattice = np.array(list(itertools.product(*lattice_axes)))
        pts = np.vstack([pts, lattice, region.center[None, :]])
    else:
        pts = np.vstack([pts, region.center[None, :]])
    worst = 0.0
    for xy in pts:
        try:
            d = float(np.max(np.abs(s1.value_flat(xy) - s2.value_flat(xy))))
        except DomainError:
            continue
        worst = max(worst, d)
    return worst


@dataclass(frozen=True)
class BumpSpec:
    """A smooth compactly supported additive perturbation of the fiber
    equations: amplitude[i] times a product of per-axis C^2 hinge bumps
    ((1-u^2) clipped at 0, cubed), which peaks at exactly 1 at the center."""

    center: np.ndarray  # (2n,) in (x, y)
    radii: np.ndarray  # (2n,) positive
    amplitude: np.ndarray  # (n,) per-equation sup amplitude

    def __post_init__(self):
        center = _vec(self.center)
        radii = _vec(self.radii, len(center))
        amplitude = _vec(self.amplitude)
        if len(center) != 2 * len(amplitude):
            raise ValueError("center/radii live in (x, y): twice the field dimension")
        if np.any(radii <= 0.0):
            raise ValueError("bump radii must be positive")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "amplitude", amplitude)

    @property
    def n(self) -> int:
        return len(self.amplitude)

    @property
    def delta(self) -> float:
        return float(np.max(np.abs(self.amplitude)))

    def support(self) -> Box:
        return Box(self.center - self.radii, self.center + self.radii)

    def profile_node(self):
        """AST of the product bump profile (equals 1 at the center)."""
        prod = None
        for slot in range(2 * self.n):
            axis = "x" if slot < self.n else "y"
            k = (slot % self.n) + 1
            u = Bin(
                "/",
                Bin("-", Var(axis, k), num_node(self.center[slot])),
                num_node(self.radii[slot]),
            )
            z = Bin("-", Num(1.0), Bin("^", u, Num(2.0)))
            hinge = Bin("/", Bin("+", z, Call("abs", z)), Num(2.0))
            cubed = Bin("^", hinge, Num(3.0))
            prod = cubed if prod is None else Bin("*", prod, cubed)
        return prod

    def scaled(self, delta: float) -> "BumpSpec":
        base = self.delta
        if base == 0.0:
            raise ValueError("cannot rescale a zero-amplitude bump")
        return BumpSpec(self.center, self.radii, self.amplitude * (delta / base))

    def to_dict(self) -> dict:
        return {
            "center": self.center.tolist(),
            "radii": self.radii.tolist(),
            "amplitude": self.amplitude.tolist(),
        }


def perturb(s: SodeField, bump: BumpSpec) -> SodeField:
    """The field with fiber equations S^i + amplitude[i] * bump profile,
    composed symbolically (the result is a plain expression field)."""
    if bump.n != s.n:
        raise ValueError("bump dimension does not match the field")
    if s.chart is not None:
        x_support = Box(bump.support().lo[: s.n], bump.support().hi[: s.n])
        if not s.chart.contains_box(x_support):
            raise DomainError("bump support must lie inside the chart box")
    profile = bump.profile_node()
    exprs = []
    for i, coef in enumerate(s.coeffs):
        if coef.node is None:
            raise NumericalError("perturb needs an expression-backed field")
        if bump.amplitude[i] == 0.0:
            exprs.append(Expression(coef.node))
        else:
            term = Bin("*", num_node(bump.amplitude[i]), profile)
            exprs.append(Expression(Bin("+", coef.node, term)))
    return SodeField.from_expressions(
        exprs, domain=s.domain, chart=s.chart, degree=None, kind=None
    )


def transition_delta(s: SodeField, bump: BumpSpec, probe, *, lo: float,
                     hi: float, iters: int = 10) -> float | None:
    """Bisect for the perturbation size at which a probe verdict flips.

    `probe` maps a field to an EvidenceReport; returns None when the verdict
    is the same at both endpoints (no transition bracketed).  Reported, not
    asserted: the flip point depends on the sampling spec.
    """

    def ok(delta: float) -> bool:
        return probe(perturb(s, bump.scaled(delta))).verdict == "evidence-for"

    lo_ok = ok(lo)
    hi_ok = ok(hi)
    if lo_ok == hi_ok:
        return None
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if ok(mid) == lo_ok:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
