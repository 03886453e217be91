"""From a basic function L(x, y) to its vertical Hessian, geodesic
coefficients, semispray, and nonlinear connection.

L must be fiber-homogeneous of degree 2 but is allowed to change sign:
the vertical Hessian g_ij = (1/2) d2L/dy^i dy^j is only required to be
nondegenerate, so indefinite (pseudoFinsler) structures are admitted and
geodesics come in spacelike/timelike/null causal classes by the sign of L.
Geodesics are obtained from the semispray rather than a first-variation
route, which is what makes the null ones reachable at all; |L|^(1/2) is
exposed only as an arclength density for non-null curves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import (
    Box,
    Coefficient,
    ConnectionField,
    EXCLUDES_ZERO,
    SampleSpec,
    SodeField,
    WHOLE_BUNDLE,
    _vec,
)
from .errors import DomainError, NumericalError
from .expr import Binding, as_expression

__all__ = ["FinslerStructure", "FinslerSemispray", "CAUSAL_TYPES"]

CAUSAL_TYPES = ("timelike", "null", "spacelike")
_COND_LIMIT = 1e12
_H2_TOL = 1e-8


class FinslerStructure:
    """A basic function together with evaluators for its derived objects."""

    def __init__(self, L, n: int | None = None, *, domain: str = EXCLUDES_ZERO,
                 chart: Box | None = None, validate: bool = True,
                 sampling: SampleSpec | None = None):
        self.L = as_expression(L)
        self.n = n if n is not None else max(self.L.max_index, 1)
        if self.L.max_index > self.n:
            raise ValueError(
                f"L references index {self.L.max_index} beyond dimension {self.n}"
            )
        if domain not in (WHOLE_BUNDLE, EXCLUDES_ZERO):
            raise ValueError(f"unknown domain flag {domain!r}")
        self.domain = domain
        self.chart = chart
        self.nondegeneracy_log: list[tuple[np.ndarray, float]] = []
        self._tape = self.L.tape(self.n)
        if validate:
            self._check_quadratic_homogeneity(sampling or SampleSpec())

    def _check_quadratic_homogeneity(self, sampling: SampleSpec):
        pts = sampling.draw(self.n, self.domain, self.chart)
        worst = 0.0
        for xy in pts[: min(32, len(pts))]:
            base = self._value_flat(xy)
            for a in (2.0, -2.0, 0.5, -0.5):
                scaled = xy.copy()
                scaled[self.n :] *= a
                got = self._value_flat(scaled)
                worst = max(worst, abs(got - a * a * base) / (1.0 + abs(a * a * base)))
        if worst > _H2_TOL:
            raise ValueError(
                f"basic function is not degree-2 homogeneous in the fiber "
                f"(residual {worst:.3e}); construct with validate=False to bypass"
            )

    # -- scalar evaluators ---------------------------------------------------

    def _value_flat(self, xy: np.ndarray) -> float:
        t = self._tape
        return float(kernels.eval_value(t.code, t.consts, xy, np.empty(t.stack_size)))

    def lagrangian(self, x, y) -> float:
        xy = np.concatenate([_vec(x, self.n), _vec(y, self.n)])
        return self._value_flat(xy)

    def arclength_density(self, x, y) -> float:
        """|L|^(1/2); meaningful as a speed only away from the null cone."""
        return math.sqrt(abs(self.lagrangian(x, y)))

    def causal_type(self, x, y, tol: float = 1e-9) -> str:
        """Sign class of L: negative timelike, positive spacelike, |L|<=tol null."""
        val = self.lagrangian(x, y)
        if abs(val) <= tol:
            return "null"
        return "spacelike" if val > 0.0 else "timelike"

    # -- derived tensors -----------------------------------------------------

    def _check_fiber(self, y: np.ndarray):
        if self.domain == EXCLUDES_ZERO and not np.any(y != 0.0):
            raise DomainError("L is smooth only away from the zero section; y = 0")

    def vertical_hessian(self, x, y) -> np.ndarray:
        """g_ij = (1/2) d2L/dy^i dy^j, symmetrized, nondegeneracy-checked."""
        x = _vec(x, self.n)
        y = _vec(y, self.n)
        self._check_fiber(y)
        b = Binding(self.n, x, y)
        g = np.empty((self.n, self.n))
        for i in range(self.n):
            for j in range(i, self.n):
                v = 0.5 * self.L.second_partial(f"y{i+1}", f"y{j+1}", b)
                g[i, j] = v
                g[j, i] = v
        cond = float(np.linalg.cond(g))
        self.nondegeneracy_log.append((np.concatenate([x, y]), cond))
        if not np.isfinite(cond) or cond > _COND_LIMIT:
            raise NumericalError(
                f"vertical Hessian is degenerate at x={x.tolist()}, y={y.tolist()} "
                f"(condition {cond:.3e}); a nondegenerate Hessian is required"
            )
        return g

    def geodesic_coefficients(self, x, y) -> np.ndarray:
        """The fiber equations of the geodesic semispray: the negative of the
        traditional coefficients G^i = (1/2) g^{il} [d2L/dx^k dy^l y^k - dL/dx^l]."""
        x = _vec(x, self.n)
        y = _vec(y, self.n)
        g = self.vertical_hessian(x, y)
        b = Binding(self.n, x, y)
        rhs = np.empty(self.n)
        for l in range(self.n):
            acc = 0.0
            for k in range(self.n):
                acc += self.L.second_partial(f"x{k+1}", f"y{l+1}", b) * y[k]
            acc -= self.L.partial(f"x{l+1}", b)
            rhs[l] = acc
        try:
            G = 0.5 * np.linalg.solve(g, rhs)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"vertical Hessian solve failed: {exc}") from exc
        return -G

    def coefficient_gradient(self, x, y) -> np.ndarray:
        """d(geodesic coefficients)/d(x, y): an (n, 2n) array.

        Implicit differentiation of 2 g G = rhs; the Hessian derivative rides
        on third fiber derivatives of L (internal third-order forward mode).
        """
        x = _vec(x, self.n)
        y = _vec(y, self.n)
        n = self.n
        g = self.vertical_hessian(x, y)
        coeffs = self.geodesic_coefficients(x, y)
        G = -coeffs
        b = Binding(n, x, y)
        names = [f"x{k+1}" for k in range(n)] + [f"y{k+1}" for k in range(n)]
        out = np.empty((n, 2 * n))
        for slot, vname in enumerate(names):
            dg = np.empty((n, n))
            for i in range(n):
                for j in range(i, n):
                    v = 0.5 * self.L.third_partial(vname, f"y{i+1}", f"y{j+1}", b)
                    dg[i, j] = v
                    dg[j, i] = v
            drhs = np.empty(n)
            for l in range(n):
                acc = 0.0
                for k in range(n):
                    acc += self.L.third_partial(vname, f"x{k+1}", f"y{l+1}", b) * y[k]
                if slot >= n:
                    acc += self.L.second_partial(f"x{slot - n + 1}", f"y{l+1}", b)
                acc -= self.L.second_partial(vname, f"x{l+1}", b)
                drhs[l] = acc
            # d(-G) = -g^{-1} (0.5 drhs - dg G)
            rhs_col = 0.5 * drhs - dg @ G
            out[:, slot] = -np.linalg.solve(g, rhs_col)
        return out

    # -- derived fields -------------------------------------------------------

    def semispray(self) -> "FinslerSemispray":
        """The geodesic field (x, y) -> (x, y, y, coefficients(x, y)).

        Integral curves project to all Finsler geodesics, including the null
        ones an arclength first variation cannot see.
        """
        coeffs = tuple(_SprayComponent(self, k) for k in range(self.n))
        return FinslerSemispray(
            n=self.n,
            coeffs=coeffs,
            domain=self.domain,
            chart=self.chart,
            structure=self,
        )

    def connection(self) -> ConnectionField:
        """Nonlinear connection coefficients: the fiber derivative of the
        geodesic coefficients (the sign flip of the traditional N^i_j)."""
        gamma = tuple(
            tuple(_ConnectionComponent(self, k, j) for j in range(self.n))
            for k in range(self.n)
        )
        return ConnectionField(
            n=self.n, gamma=gamma, domain=self.domain, chart=self.chart
        )


class _SprayComponent(Coefficient):
    def __init__(self, structure: FinslerStructure, k: int):
        self.structure = structure
        self.k = k
        self.n = structure.n

    def value(self, xy):
        n = self.n
        return float(self.structure.geodesic_coefficients(xy[:n], xy[n:])[self.k])

    def partial(self, slot, xy):
        n = self.n
        return float(self.structure.coefficient_gradient(xy[:n], xy[n:])[self.k, slot])

    def display(self):
        return f"geodesic-coefficient[{self.k + 1}] of L = {self.structure.L}"


class _ConnectionComponent(Coefficient):
    def __init__(self, structure: FinslerStructure, k: int, j: int):
        self.structure = structure
        self.k = k
        self.j = j
        self.n = structure.n

    def value(self, xy):
        n = self.n
        grad = self.structure.coefficient_gradient(xy[:n], xy[n:])
        return float(grad[self.k, n + self.j])

    def display(self):
        return (
            f"d/dy{self.j + 1}[geodesic-coefficient[{self.k + 1}]] "
            f"of L = {self.structure.L}"
        )


@dataclass(frozen=True)
class FinslerSemispray(SodeField):
    """A SodeField whose fiber equations come from a Lagrangian tape; the
    stepper computes them in-kernel (Hessian assembly + solve per point)."""

    structure: FinslerStructure = None

    def kernel_spec(self):
        t = self.structure._tape
        offs = np.array([0, t.code.shape[0]], dtype=np.int64)
        return (1, t.code, offs, t.consts, t.stack_size)
