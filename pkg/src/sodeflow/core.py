"""Chart-level geometric data: points of TM and TTM, second-order fields,
connection coefficient families, scenes, and the homogeneity classifiers.

Conventions.  A second-order field is stored through its fiber equations
S^k(x, y): as a section of TTM it sends (x, y) to (x, y, y, S(x, y)), which
satisfies the canonical-involution fixed-point condition by construction.
A (possibly nonlinear) connection is stored through coefficients G^k_i(x, y);
its horizontal space at (x, y) is spanned by (u, G(x, y) u).  Vertical
homogeneity is reported through the coefficient family: vh(m) means
G(x, a y) = a^m G(x, y), so a field of degree m corresponds to a vh(m-1)
connection.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import kernels
from .errors import DomainError, NotVerticalError
from .expr import as_expression

WHOLE_BUNDLE = "whole"
EXCLUDES_ZERO = "nozero"

_HOM_POS_SCALARS = (2.0, 1.5, 0.5, 0.1)
_HOM_NEG_SCALARS = (-2.0, -1.5, -0.5, -0.1)
_HOM_TOL = 1e-8


def _vec(v, n: int | None = None) -> np.ndarray:
    a = np.atleast_1d(np.asarray(v, dtype=np.float64))
    if n is not None and a.shape != (n,):
        raise ValueError(f"expected a length-{n} vector, got shape {a.shape}")
    return a


# ---------------------------------------------------------------------------
# Points


@dataclass(frozen=True)
class TangentPoint:
    """A point of TM in induced chart coordinates (base x, fiber y)."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = _vec(self.x)
        y = _vec(self.y, len(x))
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.x, self.y])


@dataclass(frozen=True)
class DoubleTangent:
    """A point of TTM: base (x, y) with velocity components (X, Y)."""

    x: np.ndarray
    y: np.ndarray
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        x = _vec(self.x)
        n = len(x)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", _vec(self.y, n))
        object.__setattr__(self, "X", _vec(self.X, n))
        object.__setattr__(self, "Y", _vec(self.Y, n))

    @property
    def n(self) -> int:
        return len(self.x)

    def project_T(self) -> TangentPoint:
        """Bundle projection TTM -> TM (forget the velocity slots)."""
        return TangentPoint(self.x, self.y)

    def project_star(self) -> TangentPoint:
        """The other projection (tangent map of TM -> M): keep (x, X)."""
        return TangentPoint(self.x, self.X)

    def is_vertical(self, tol: float = 1e-12) -> bool:
        return float(np.max(np.abs(self.X))) <= tol

    def in_fix_involution(self, tol: float = 1e-12) -> bool:
        return float(np.max(np.abs(self.X - self.y))) <= tol


def canonical_involution(z: DoubleTangent) -> DoubleTangent:
    """Swap the fiber and base-velocity slots: (x,y,X,Y) -> (x,X,y,Y)."""
    return DoubleTangent(z.x, z.X, z.y, z.Y)


def vertical_connector_K(z: DoubleTangent, tol: float = 1e-12) -> TangentPoint:
    """Identify a vertical vector (x,y,0,Y) with the tangent vector (x,Y)."""
    nrm = float(np.max(np.abs(z.X)))
    if nrm > tol:
        raise NotVerticalError(
            f"connector K needs a vertical argument; |X| = {nrm:.3e} > {tol:.0e}"
        )
    return TangentPoint(z.x, z.Y)


def vertical_lift(v: TangentPoint, w) -> DoubleTangent:
    """Lift w in T_x M to the vertical vector (x, y, 0, w) at v = (x, y)."""
    w = _vec(w, v.n)
    return DoubleTangent(v.x, v.y, np.zeros(v.n), w)


# ---------------------------------------------------------------------------
# Boxes (chart validity regions, probe regions)


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = _vec(self.lo)
        hi = _vec(self.hi, len(lo))
        if np.any(hi < lo):
            raise ValueError("box upper bounds must dominate lower bounds")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def contains(self, p, tol: float = 0.0) -> bool:
        p = np.asarray(p, dtype=np.float64)
        return bool(np.all(p >= self.lo - tol) and np.all(p <= self.hi + tol))

    def contains_box(self, other: "Box", tol: float = 1e-12) -> bool:
        return bool(
            np.all(other.lo >= self.lo - tol) and np.all(other.hi <= self.hi + tol)
        )

    def scaled(self, factor: float) -> "Box":
        c, half = self.center, 0.5 * (self.hi - self.lo)
        return Box(c - factor * half, c + factor * half)

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}


# ---------------------------------------------------------------------------
# Coefficient functions.  Every geometric field stores one Coefficient per
# scalar component; expression-backed ones compile to kernel tapes, derived
# ones ride on exact forward-mode derivatives of their base expressions.


class Coefficient:
    n: int

    def value(self, xy: np.ndarray) -> float:
        raise NotImplementedError

    def partial(self, slot: int, xy: np.ndarray) -> float:
        raise NotImplementedError

    def second(self, slot1: int, slot2: int, xy: np.ndarray) -> float:
        raise NotImplementedError(f"{type(self).__name__} has no second derivatives")

    @property
    def node(self):
        """The underlying expression tree, or None when not expression-backed."""
        return None

    def display(self) -> str:
        raise NotImplementedError


class ExprCoefficient(Coefficient):
    def __init__(self, e, n: int):
        self.expr = as_expression(e)
        if self.expr.max_index > n:
            raise ValueError(
                f"expression '{self.expr}' references index {self.expr.max_index} "
                f"beyond dimension {n}"
            )
        self.n = n
        self._tape = self.expr.tape(n)

    def value(self, xy):
        t = self._tape
        return float(kernels.eval_value(t.code, t.consts, xy, np.empty(t.stack_size)))

    def partial(self, slot, xy):
        t = self._tape
        seed = np.zeros(2 * self.n)
        seed[slot] = 1.0
        return float(
            kernels.eval_dual(t.code, t.consts, xy, seed, np.empty((t.stack_size, 2)))[1]
        )

    def second(self, slot1, slot2, xy):
        t = self._tape
        s1 = np.zeros(2 * self.n)
        s2 = np.zeros(2 * self.n)
        s1[slot1] = 1.0
        s2[slot2] = 1.0
        return float(
            kernels.eval_hyper(
                t.code, t.consts, xy, s1, s2, np.empty((t.stack_size, 4))
            )[3]
        )

    @property
    def node(self):
        return self.expr.node

    def display(self):
        return str(self.expr)


class DerivCoefficient(Coefficient):
    """scale * d(base)/d(slot), evaluated by one extra forward-mode level.

    The base may be any coefficient exposing partials (its own derivatives
    then carry the extra level: expression bases reach third order through
    the multidual walker).
    """

    def __init__(self, base: Coefficient, slot: int, scale: float = 1.0):
        self.base = base
        self.slot = slot
        self.scale = float(scale)
        self.n = base.n

    def value(self, xy):
        return self.scale * self.base.partial(self.slot, xy)

    def partial(self, slot, xy):
        return self.scale * self.base.second(slot, self.slot, xy)

    def second(self, slot1, slot2, xy):
        if not isinstance(self.base, ExprCoefficient):
            raise NotImplementedError(
                "third derivatives are only available over expression bases"
            )
        t = self.base._tape
        seeds = np.zeros((3, 2 * self.n))
        seeds[0, slot1] = 1.0
        seeds[1, slot2] = 1.0
        seeds[2, self.slot] = 1.0
        out = kernels.eval_triple(
            t.code, t.consts, xy, seeds[0], seeds[1], seeds[2],
            np.empty((t.stack_size, 8)),
        )
        return self.scale * float(out[7])

    def display(self):
        name = f"{'x' if self.slot < self.n else 'y'}{(self.slot % self.n) + 1}"
        s = f"d/d{name}[{self.base.display()}]"
        return s if self.scale == 1.0 else f"{self.scale:g}*{s}"


class SprayTermCoefficient(Coefficient):
    """S^k = sum_i G^k_i(x, y) * y^i for connection-induced fields whose
    coefficients are not plain expressions."""

    def __init__(self, terms, n: int):
        self.terms = tuple(terms)  # (Coefficient, fiber slot) pairs
        self.n = n

    def value(self, xy):
        return float(sum(c.value(xy) * xy[slot] for c, slot in self.terms))

    def partial(self, slot, xy):
        acc = 0.0
        for c, yslot in self.terms:
            acc += c.partial(slot, xy) * xy[yslot]
            if slot == yslot:
                acc += c.value(xy)
        return float(acc)

    def second(self, slot1, slot2, xy):
        acc = 0.0
        for c, yslot in self.terms:
            acc += c.second(slot1, slot2, xy) * xy[yslot]
            if slot1 == yslot:
                acc += c.partial(slot2, xy)
            if slot2 == yslot:
                acc += c.partial(slot1, xy)
        return float(acc)

    def display(self):
        return " + ".join(
            f"({c.display()})*y{slot - self.n + 1}" for c, slot in self.terms
        )


def pack_tapes(coeffs) -> tuple | None:
    """Concatenate expression tapes into one kernel program, or None if any
    coefficient is not expression-backed."""
    tapes = []
    for c in coeffs:
        if c.node is None:
            return None
        tapes.append(c if isinstance(c, ExprCoefficient) else None)
        if tapes[-1] is None:
            return None
    code_parts = []
    offs = [0]
    consts_parts = []
    const_base = 0
    depth = 1
    for c in tapes:
        t = c._tape
        code = t.code.copy()
        mask = code[:, 0] == kernels.OP_CONST
        code[mask, 1] += const_base
        code_parts.append(code)
        consts_parts.append(t.consts)
        const_base += len(t.consts)
        offs.append(offs[-1] + code.shape[0])
        depth = max(depth, t.stack_size)
    return (
        np.vstack(code_parts).astype(np.int64),
        np.array(offs, dtype=np.int64),
        (np.concatenate(consts_parts) if const_base else np.zeros(1)),
        depth,
    )


# ---------------------------------------------------------------------------
# Fields


@dataclass(frozen=True)
class SodeField:
    """A second-order field through its fiber equations S^1..S^n."""

    n: int
    coeffs: tuple
    domain: str = WHOLE_BUNDLE
    degree: float | None = None
    kind: str | None = None
    chart: Box | None = None

    def __post_init__(self):
        if self.domain not in (WHOLE_BUNDLE, EXCLUDES_ZERO):
            raise ValueError(f"unknown domain flag {self.domain!r}")
        if len(self.coeffs) != self.n:
            raise ValueError("need one coefficient per dimension")

    @staticmethod
    def from_expressions(exprs, *, domain=WHOLE_BUNDLE, chart=None,
                         degree=None, kind=None) -> "SodeField":
        exprs = [as_expression(e) for e in exprs]
        n = len(exprs)
        return SodeField(
            n=n,
            coeffs=tuple(ExprCoefficient(e, n) for e in exprs),
            domain=domain,
            degree=degree,
            kind=kind,
            chart=chart,
        )

    def check_point(self, x, y):
        x = _vec(x, self.n)
        y = _vec(y, self.n)
        if self.domain == EXCLUDES_ZERO and not np.any(y != 0.0):
            raise DomainError("the field excludes the zero section but y = 0")
        if self.chart is not None and not self.chart.contains(x):
            raise DomainError(f"base point {x.tolist()} outside the chart box")
        return x, y

    def value(self, x, y) -> np.ndarray:
        xy = np.concatenate([_vec(x, self.n), _vec(y, self.n)])
        return np.array([c.value(xy) for c in self.coeffs])

    def value_flat(self, xy: np.ndarray) -> np.ndarray:
        return np.array([c.value(xy) for c in self.coeffs])

    def section(self, x, y) -> DoubleTangent:
        x = _vec(x, self.n)
        y = _vec(y, self.n)
        return DoubleTangent(x, y, y, self.value(x, y))

    def kernel_spec(self):
        """(kind, code, offs, consts, stack_size) for the stepper, or None."""
        pack = self._pack
        if pack is None:
            return None
        return (0,) + pack

    @cached_property
    def _pack(self):
        return pack_tapes(self.coeffs)

    def display(self) -> list[str]:
        return [c.display() for c in self.coeffs]


@dataclass(frozen=True)
class ConnectionField:
    """Generalized connection coefficients G^k_i(x, y), k = row, i = column."""

    n: int
    gamma: tuple  # gamma[k][i] -> Coefficient
    domain: str = WHOLE_BUNDLE
    chart: Box | None = None

    def __post_init__(self):
        if self.domain not in (WHOLE_BUNDLE, EXCLUDES_ZERO):
            raise ValueError(f"unknown domain flag {self.domain!r}")
        if len(self.gamma) != self.n or any(len(row) != self.n for row in self.gamma):
            raise ValueError("gamma must be an n-by-n coefficient family")

    @staticmethod
    def from_expressions(rows, *, domain=WHOLE_BUNDLE, chart=None) -> "ConnectionField":
        rows = [[as_expression(e) for e in row] for row in rows]
        n = len(rows)
        return ConnectionField(
            n=n,
            gamma=tuple(tuple(ExprCoefficient(e, n) for e in row) for row in rows),
            domain=domain,
            chart=chart,
        )

    def check_point(self, x, y):
        x = _vec(x, self.n)
        y = _vec(y, self.n)
        if self.domain == EXCLUDES_ZERO and not np.any(y != 0.0):
            raise DomainError("the connection excludes the zero section but y = 0")
        return x, y

    def matrix(self, x, y) -> np.ndarray:
        xy = np.concatenate([_vec(x, self.n), _vec(y, self.n)])
        return self.matrix_flat(xy)

    def matrix_flat(self, xy: np.ndarray) -> np.ndarray:
        n = self.n
        out = np.empty((n, n))
        for k in range(n):
            for i in range(n):
                out[k, i] = self.gamma[k][i].value(xy)
        return out

    def value_flat(self, xy: np.ndarray) -> np.ndarray:
        """Flattened coefficient family (row-major), for the classifiers."""
        return self.matrix_flat(xy).reshape(-1)

    def horizontal_space_matrix(self, x, y) -> np.ndarray:
        """Basis of H_(x,y) as columns of a 2n-by-n matrix (u, G u)."""
        g = self.matrix(x, y)
        return np.vstack([np.eye(self.n), g])

    def display(self) -> list[list[str]]:
        return [[c.display() for c in row] for row in self.gamma]


# ---------------------------------------------------------------------------
# Scenes


@dataclass(frozen=True)
class SceneOptions:
    seed: int = 1234
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    blowup: float = 1e8
    horizon: float = 50.0

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "abs_tol": self.abs_tol,
            "rel_tol": self.rel_tol,
            "blowup": self.blowup,
            "horizon": self.horizon,
        }


@dataclass(frozen=True)
class Scene:
    n: int
    kind: str  # "sode" | "connection" | "finsler"
    field: object
    chart: Box | None = None
    options: SceneOptions = field(default_factory=SceneOptions)


# ---------------------------------------------------------------------------
# Sampling


@dataclass(frozen=True)
class SampleSpec:
    count: int = 64
    seed: int = 20240
    x_halfwidth: float = 2.0
    y_halfwidth: float = 2.0
    y_floor: float = 0.25

    def draw(self, n: int, domain: str, chart: Box | None) -> np.ndarray:
        """Fixed-seed (count, 2n) sample array of flattened (x, y) points."""
        rng = np.random.default_rng(self.seed)
        if chart is not None:
            lo, hi = chart.lo.copy(), chart.hi.copy()
            # keep a small margin so scaled fibers stay evaluable
            pad = 0.05 * (hi - lo)
            lo += pad
            hi -= pad
        else:
            lo = np.full(n, -self.x_halfwidth)
            hi = np.full(n, self.x_halfwidth)
        xs = rng.uniform(lo, hi, size=(self.count, n))
        ys = rng.uniform(-self.y_halfwidth, self.y_halfwidth, size=(self.count, n))
        small = np.max(np.abs(ys), axis=1) < self.y_floor
        ys[small] += np.sign(ys[small] + 0.5) * self.y_floor
        return np.hstack([xs, ys])


# ---------------------------------------------------------------------------
# Homogeneity classification


@dataclass(frozen=True)
class HomogeneityReport:
    verdict: str  # "homogeneous" | "inhomogeneous" | "zero-field"
    degree: float | None
    kind: str | None  # "complete" | "projective" | "positive"
    max_residual: float
    samples: int
    residuals: dict

    @property
    def is_homogeneous(self) -> bool:
        return self.verdict == "homogeneous"

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "degree": self.degree,
            "kind": self.kind,
            "max_residual": self.max_residual,
            "samples": self.samples,
            "residuals": dict(sorted(self.residuals.items())),
        }


def _field_eval(field_like):
    """(value_flat, n, domain, chart) for a SodeField or ConnectionField."""
    if isinstance(field_like, SodeField):
        return field_like.value_flat, field_like.n, field_like.domain, field_like.chart
    if isinstance(field_like, ConnectionField):
        return field_like.value_flat, field_like.n, field_like.domain, field_like.chart
    raise TypeError(f"cannot classify {type(field_like).__name__}")


def _scale_fiber(xy: np.ndarray, n: int, a: float) -> np.ndarray:
    out = xy.copy()
    out[n:] *= a
    return out


def _rel_residual(actual: np.ndarray, expected: np.ndarray) -> float:
    err = np.abs(actual - expected) / (1.0 + np.abs(expected))
    if not np.all(np.isfinite(err)):
        return float("inf")
    return float(np.max(err)) if err.size else float("inf")


def classify_homogeneity(field_like, sampling: SampleSpec | None = None,
                         tol: float = _HOM_TOL) -> HomogeneityReport:
    """Estimate the fiber-homogeneity degree and kind of a field.

    The degree comes from the least-squares slope of log|F(x, a y)| against
    log a over positive scalars; the exact relation F(x, a y) = a^m F(x, y)
    is then tested componentwise (relative tolerance) over positive, negative
    and zero scalars to assign the kind.  Fields on the reduced bundle are
    tested for positive scalars only.
    """
    sampling = sampling or SampleSpec()
    evaluate, n, domain, chart = _field_eval(field_like)
    pts = sampling.draw(n, domain, chart)
    m_samples = pts.shape[0]

    base = np.array([evaluate(xy) for xy in pts])  # (m, d)
    scaled = {
        a: np.array([evaluate(_scale_fiber(xy, n, a)) for xy in pts])
        for a in _HOM_POS_SCALARS + (_HOM_NEG_SCALARS if domain == WHOLE_BUNDLE else ())
    }

    sup = max(
        (float(np.max(np.abs(v))) for v in [base, *scaled.values()]), default=0.0
    )
    if sup < 1e-13:
        return HomogeneityReport(
            "zero-field", None, None, 0.0, m_samples,
            {"note": "identically zero on all samples (every degree fits)"},
        )

    # slope estimate over positive scalars
    logs_a = np.log(np.array(_HOM_POS_SCALARS))
    norms0 = np.linalg.norm(base, axis=1)
    slopes = []
    for i in range(m_samples):
        if norms0[i] == 0.0:
            continue
        num = den = 0.0
        usable = True
        for a, la in zip(_HOM_POS_SCALARS, logs_a):
            na = np.linalg.norm(scaled[a][i])
            if na == 0.0 or not np.isfinite(na):
                usable = False
                break
            num += la * (np.log(na) - np.log(norms0[i]))
            den += la * la
        if usable and den > 0.0:
            slopes.append(num / den)
    if not slopes:
        return HomogeneityReport(
            "inhomogeneous", None, None, float("inf"), m_samples,
            {"note": "no usable scaling samples"},
        )
    m_est = float(np.mean(slopes))
    m_snap = round(2.0 * m_est) / 2.0
    candidates = [m_snap, m_est] if abs(m_est - m_snap) < 1e-6 else [m_est]

    def residual_for(m: float, scalars) -> float:
        worst = 0.0
        for a in scalars:
            am = kernels._powf(float(a), float(m))
            if not np.isfinite(am):
                return float("inf")
            worst = max(worst, _rel_residual(scaled[a], am * base))
        return worst

    best = None
    for m in candidates:
        pos_res = residual_for(m, _HOM_POS_SCALARS)
        if best is None or pos_res < best[1]:
            best = (m, pos_res)
    m, pos_res = best
    residuals = {"positive": pos_res}

    if pos_res >= tol:
        return HomogeneityReport(
            "inhomogeneous", m, None, pos_res, m_samples, residuals
        )

    if domain != WHOLE_BUNDLE:
        return HomogeneityReport(
            "homogeneous", m, "positive", pos_res, m_samples, residuals
        )

    neg_res = residual_for(m, _HOM_NEG_SCALARS)
    residuals["negative"] = neg_res
    if neg_res >= tol:
        return HomogeneityReport(
            "homogeneous", m, "positive", pos_res, m_samples, residuals
        )

    # kind "complete" additionally requires the correct a = 0 limit
    zero_vals = np.array([evaluate(_scale_fiber(xy, n, 0.0)) for xy in pts])
    a0 = kernels._powf(0.0, float(m))
    if np.isfinite(a0):
        zero_res = _rel_residual(zero_vals, a0 * base)
    else:
        zero_res = float("inf")
    residuals["zero"] = zero_res
    kind = "complete" if zero_res < tol else "projective"
    return HomogeneityReport(
        "homogeneous", m, kind,
        max(pos_res, neg_res, zero_res if kind == "complete" else 0.0),
        m_samples, residuals,
    )


# ---------------------------------------------------------------------------
# Connection shape classification


@dataclass(frozen=True)
class ConnectionShapeReport:
    vh_degree: float | None
    vh_kind: str | None
    zero_preserving: bool | None  # None when the zero-section is excluded
    strongly_nonlinear: bool | None
    linear: bool
    involution_invariant: bool
    zero_limit: float
    residuals: dict
    samples: int

    def to_dict(self) -> dict:
        return {
            "vh_degree": self.vh_degree,
            "vh_kind": self.vh_kind,
            "zero_preserving": self.zero_preserving,
            "strongly_nonlinear": self.strongly_nonlinear,
            "linear": self.linear,
            "involution_invariant": self.involution_invariant,
            "zero_limit": self.zero_limit,
            "zero_section_tests": (
                "not applicable (zero section excluded)"
                if self.zero_preserving is None
                else "evaluated"
            ),
            "residuals": dict(sorted(self.residuals.items())),
            "samples": self.samples,
        }


def classify_connection_shape(c: ConnectionField,
                              sampling: SampleSpec | None = None,
                              tol: float = _HOM_TOL) -> ConnectionShapeReport:
    """Empirical shape of a connection: vertical homogeneity of the
    coefficient family, zero-section behavior, linearity, and invariance of
    the connector under the canonical involution."""
    sampling = sampling or SampleSpec()
    hom = classify_homogeneity(c, sampling, tol)
    pts = sampling.draw(c.n, c.domain, c.chart)
    rng = np.random.default_rng(sampling.seed + 1)
    n = c.n

    # zero-section behavior
    zero_limit = 0.0
    small = 1e-8
    for xy in pts:
        probe = xy.copy()
        probe[n:] *= small if c.domain == EXCLUDES_ZERO else 0.0
        zero_limit = max(zero_limit, float(np.max(np.abs(c.value_flat(probe)))))
    if c.domain == EXCLUDES_ZERO:
        zero_preserving = None
        strongly_nonlinear = None
    else:
        zero_preserving = zero_limit < tol
        strongly_nonlinear = not zero_preserving

    # linearity: G(x, a u + b v) = a G(x, u) + b G(x, v)
    lin_res = 0.0
    inv_res = 0.0
    for xy in pts[: min(24, len(pts))]:
        x = xy[:n]
        u = xy[n:]
        v = rng.uniform(-2.0, 2.0, size=n)
        if c.domain == EXCLUDES_ZERO and np.max(np.abs(v)) < 0.25:
            v = v + 0.5
        gu = c.matrix(x, u)
        gv = c.matrix(x, v)
        for a, b in ((2.0, 3.0), (-1.0, 0.5)):
            w = a * u + b * v
            if c.domain == EXCLUDES_ZERO and not np.any(w != 0.0):
                continue
            gw = c.matrix(x, w)
            lin_res = max(lin_res, _rel_residual(gw, a * gu + b * gv))
        # connector symmetric under the involution <=> G(x,u)·w == G(x,w)·u
        inv_res = max(inv_res, _rel_residual(gu @ v, gv @ u))

    return ConnectionShapeReport(
        vh_degree=hom.degree if hom.is_homogeneous else None,
        vh_kind=hom.kind,
        zero_preserving=zero_preserving,
        strongly_nonlinear=strongly_nonlinear,
        linear=lin_res < tol,
        involution_invariant=inv_res < tol,
        zero_limit=zero_limit,
        residuals={
            "homogeneity": hom.max_residual,
            "linearity": lin_res,
            "involution": inv_res,
        },
        samples=len(pts),
    )
