"""Hot numeric kernels: tape evaluation and the adaptive geodesic stepper.

Expressions are compiled (in :mod:`sodeflow.expr`) to flat instruction tapes
that a stack machine evaluates in plain float64, dual, hyper-dual, or
third-order multidual arithmetic.  The Dormand-Prince 5(4) stepper with dense
output lives here too, with its right-hand sides dispatched on a field kind:

* kind 0 - a second-order field given by one tape per fiber equation,
* kind 1 - a Finsler semispray driven by a single Lagrangian tape (the
  vertical Hessian and its solve happen inside the right-hand side).

Every function in this module is written in numba-compatible style.  At
import time the backend is selected by the environment variable
``SODEFLOW_BACKEND``:

* ``numba`` - wrap everything in ``@njit(cache=True)`` (the default when
  numba imports cleanly),
* ``numpy`` - leave the pure-Python/numpy implementations as they are,
* ``auto``  - same as ``numba`` when available, else ``numpy``.

Both paths execute the identical source, so results agree to the last bit;
``benchmarks/bench_backends.py`` compares their speed.
"""

from __future__ import annotations

import math
import os

import numpy as np

# --------------------------------------------------------------------------
# Opcodes

OP_CONST = 0
OP_VAR = 1
OP_ADD = 2
OP_SUB = 3
OP_MUL = 4
OP_DIV = 5
OP_POW = 6
OP_POWI = 7
OP_NEG = 8
OP_SIN = 9
OP_COS = 10
OP_TAN = 11
OP_EXP = 12
OP_LOG = 13
OP_SQRT = 14
OP_ABS = 15
OP_ATAN = 16
OP_TANH = 17

BIN_OPS = {"+": OP_ADD, "-": OP_SUB, "*": OP_MUL, "/": OP_DIV, "^": OP_POW}
FN_OPS = {
    "sin": OP_SIN,
    "cos": OP_COS,
    "tan": OP_TAN,
    "exp": OP_EXP,
    "log": OP_LOG,
    "sqrt": OP_SQRT,
    "abs": OP_ABS,
    "atan": OP_ATAN,
    "tanh": OP_TANH,
}

# Integrator termination codes
STATUS_REACHED = 0
STATUS_BLOWUP = 1
STATUS_UNDERFLOW = 2
STATUS_LEFT_BOX = 3
STATUS_STEP_LIMIT = 4

# --------------------------------------------------------------------------
# Dormand-Prince 5(4) tableau with the quartic dense-output interpolant.

RK_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])

RK_A = np.zeros((7, 7))
RK_A[1, 0] = 1 / 5
RK_A[2, :2] = (3 / 40, 9 / 40)
RK_A[3, :3] = (44 / 45, -56 / 15, 32 / 9)
RK_A[4, :4] = (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729)
RK_A[5, :5] = (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656)
RK_A[6, :6] = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84)

RK_B = RK_A[6].copy()  # FSAL: the 5th-order solution is the 7th stage point

RK_E = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)

# Interpolant weights: y(t0 + u*h) = y0 + h * K^T (P @ [u, u^2, u^3, u^4]).
RK_P = np.array(
    [
        [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)

_INF = math.inf
_NAN = math.nan


# --------------------------------------------------------------------------
# Guarded scalar primitives (identical IEEE-style semantics on both backends:
# never raise, propagate inf/nan).


def _div(a, b):
    if b == 0.0:
        if a == 0.0 or a != a:
            return _NAN
        return _INF if a > 0.0 else -_INF
    return a / b


def _log(x):
    if x > 0.0:
        return math.log(x)
    if x == 0.0:
        return -_INF
    return _NAN


def _sqrt(x):
    if x >= 0.0:
        return math.sqrt(x)
    return _NAN


def _exp(x):
    # CPython's math.exp raises OverflowError where compiled libm saturates;
    # keep both backends on the silent-inf convention
    if x > 709.782712893384:
        return _INF
    return math.exp(x)


def _powi(x, k):
    p = 1.0
    m = k if k >= 0 else -k
    for _ in range(m):
        p *= x
    return p if k >= 0 else _div(1.0, p)


def _powf(a, b):
    # General float power; small integral exponents take the exact product
    # path, negative bases with non-integer exponents -> nan.
    if b == math.floor(b) and abs(b) <= 64.0:
        return _powi(a, int(b))
    if a > 0.0:
        return _exp(b * math.log(a))
    if a == 0.0:
        if b > 0.0:
            return 0.0
        if b == 0.0:
            return 1.0
        return _INF
    if b == math.floor(b) and abs(b) < 1e18:
        r = _exp(b * math.log(-a))
        even = b / 2.0 == math.floor(b / 2.0)
        return r if even else -r
    return _NAN


def _sign(x):
    if x > 0.0:
        return 1.0
    if x < 0.0:
        return -1.0
    return 0.0


def _fn_derivs(op, x):
    """Value and first three derivatives of the builtin function `op` at x."""
    if op == OP_SIN:
        s = math.sin(x)
        c = math.cos(x)
        return s, c, -s, -c
    if op == OP_COS:
        s = math.sin(x)
        c = math.cos(x)
        return c, -s, -c, s
    if op == OP_TAN:
        t = math.tan(x)
        u = 1.0 + t * t
        return t, u, 2.0 * t * u, 2.0 * u * (u + 2.0 * t * t)
    if op == OP_EXP:
        g = _exp(x)
        return g, g, g, g
    if op == OP_LOG:
        if x > 0.0:
            w = 1.0 / x
            return math.log(x), w, -w * w, 2.0 * w * w * w
        return _log(x), _NAN, _NAN, _NAN
    if op == OP_SQRT:
        if x > 0.0:
            s = math.sqrt(x)
            return s, 0.5 / s, -0.25 / (x * s), 0.375 / (x * x * s)
        if x == 0.0:
            return 0.0, _INF, _NAN, _NAN
        return _NAN, _NAN, _NAN, _NAN
    if op == OP_ABS:
        return abs(x), _sign(x), 0.0, 0.0
    if op == OP_ATAN:
        w = 1.0 / (1.0 + x * x)
        return math.atan(x), w, -2.0 * x * w * w, (6.0 * x * x - 2.0) * w * w * w
    # OP_TANH
    u = math.tanh(x)
    v = 1.0 - u * u
    return u, v, -2.0 * u * v, v * (6.0 * u * u - 2.0)


# --------------------------------------------------------------------------
# Tape walkers.  `code` is an (m, 2) int64 array of [opcode, arg] rows,
# `consts` holds literals, `xy` the flat (2n,) variable values.  The caller
# supplies a scratch stack of the tape's compiled depth.


def eval_value(code, consts, xy, stack):
    sp = 0
    for i in range(code.shape[0]):
        op = code[i, 0]
        arg = code[i, 1]
        if op == OP_CONST:
            stack[sp] = consts[arg]
            sp += 1
        elif op == OP_VAR:
            stack[sp] = xy[arg]
            sp += 1
        elif op == OP_ADD:
            sp -= 1
            stack[sp - 1] = stack[sp - 1] + stack[sp]
        elif op == OP_SUB:
            sp -= 1
            stack[sp - 1] = stack[sp - 1] - stack[sp]
        elif op == OP_MUL:
            sp -= 1
            stack[sp - 1] = stack[sp - 1] * stack[sp]
        elif op == OP_DIV:
            sp -= 1
            stack[sp - 1] = _div(stack[sp - 1], stack[sp])
        elif op == OP_POW:
            sp -= 1
            stack[sp - 1] = _powf(stack[sp - 1], stack[sp])
        elif op == OP_POWI:
            stack[sp - 1] = _powi(stack[sp - 1], arg)
        elif op == OP_NEG:
            stack[sp - 1] = -stack[sp - 1]
        else:
            stack[sp - 1] = _fn_derivs(op, stack[sp - 1])[0]
    return stack[0]


def _powi_dual(a0, a1, k):
    m = k if k >= 0 else -k
    p0 = 1.0
    p1 = 0.0
    for _ in range(m):
        p1 = p1 * a0 + p0 * a1
        p0 = p0 * a0
    if k < 0:
        r0 = _div(1.0, p0)
        p1 = _div(-r0 * p1, p0)
        p0 = r0
    return p0, p1


def _powi_hyper(a0, a1, a2, a3, k):
    m = k if k >= 0 else -k
    p0 = 1.0
    p1 = 0.0
    p2 = 0.0
    p3 = 0.0
    for _ in range(m):
        p3 = p0 * a3 + p1 * a2 + p2 * a1 + p3 * a0
        p1 = p0 * a1 + p1 * a0
        p2 = p0 * a2 + p2 * a0
        p0 = p0 * a0
    if k < 0:
        r0 = _div(1.0, p0)
        r1 = _div(-r0 * p1, p0)
        r2 = _div(-r0 * p2, p0)
        r3 = _div(-r0 * p3 - r1 * p2 - r2 * p1, p0)
        return r0, r1, r2, r3
    return p0, p1, p2, p3


def eval_dual(code, consts, xy, seed, stack):
    """Forward dual pass; returns (value, directional derivative along seed)."""
    sp = 0
    for i in range(code.shape[0]):
        op = code[i, 0]
        arg = code[i, 1]
        if op == OP_CONST:
            stack[sp, 0] = consts[arg]
            stack[sp, 1] = 0.0
            sp += 1
        elif op == OP_VAR:
            stack[sp, 0] = xy[arg]
            stack[sp, 1] = seed[arg]
            sp += 1
        elif op == OP_ADD:
            sp -= 1
            stack[sp - 1, 0] += stack[sp, 0]
            stack[sp - 1, 1] += stack[sp, 1]
        elif op == OP_SUB:
            sp -= 1
            stack[sp - 1, 0] -= stack[sp, 0]
            stack[sp - 1, 1] -= stack[sp, 1]
        elif op == OP_MUL:
            sp -= 1
            a0 = stack[sp - 1, 0]
            a1 = stack[sp - 1, 1]
            b0 = stack[sp, 0]
            b1 = stack[sp, 1]
            stack[sp - 1, 0] = a0 * b0
            stack[sp - 1, 1] = a0 * b1 + a1 * b0
        elif op == OP_DIV:
            sp -= 1
            b0 = stack[sp, 0]
            b1 = stack[sp, 1]
            r0 = _div(stack[sp - 1, 0], b0)
            stack[sp - 1, 0] = r0
            stack[sp - 1, 1] = _div(stack[sp - 1, 1] - r0 * b1, b0)
        elif op == OP_POW:
            sp -= 1
            a0 = stack[sp - 1, 0]
            a1 = stack[sp - 1, 1]
            b0 = stack[sp, 0]
            b1 = stack[sp, 1]
            if b1 == 0.0 and b0 == math.floor(b0) and abs(b0) <= 64.0:
                p0, p1 = _powi_dual(a0, a1, int(b0))
                stack[sp - 1, 0] = p0
                stack[sp - 1, 1] = p1
            elif a0 > 0.0:
                la = math.log(a0)
                r0 = _exp(b0 * la)
                stack[sp - 1, 0] = r0
                stack[sp - 1, 1] = r0 * (b1 * la + b0 * a1 / a0)
            else:
                stack[sp - 1, 0] = _powf(a0, b0)
                stack[sp - 1, 1] = _NAN
        elif op == OP_POWI:
            p0, p1 = _powi_dual(stack[sp - 1, 0], stack[sp - 1, 1], arg)
            stack[sp - 1, 0] = p0
            stack[sp - 1, 1] = p1
        elif op == OP_NEG:
            stack[sp - 1, 0] = -stack[sp - 1, 0]
            stack[sp - 1, 1] = -stack[sp - 1, 1]
        else:
            f0, f1, f2, f3 = _fn_derivs(op, stack[sp - 1, 0])
            stack[sp - 1, 1] = f1 * stack[sp - 1, 1]
            stack[sp - 1, 0] = f0
    return stack[0, 0], stack[0, 1]


def eval_hyper(code, consts, xy, seed1, seed2, stack):
    """Hyper-dual pass; returns the 4-component jet (v, d1, d2, d12)."""
    sp = 0
    for i in range(code.shape[0]):
        op = code[i, 0]
        arg = code[i, 1]
        if op == OP_CONST:
            stack[sp, 0] = consts[arg]
            stack[sp, 1] = 0.0
            stack[sp, 2] = 0.0
            stack[sp, 3] = 0.0
            sp += 1
        elif op == OP_VAR:
            stack[sp, 0] = xy[arg]
            stack[sp, 1] = seed1[arg]
            stack[sp, 2] = seed2[arg]
            stack[sp, 3] = 0.0
            sp += 1
        elif op == OP_ADD:
            sp -= 1
            for c in range(4):
                stack[sp - 1, c] += stack[sp, c]
        elif op == OP_SUB:
            sp -= 1
            for c in range(4):
                stack[sp - 1, c] -= stack[sp, c]
        elif op == OP_MUL:
            sp -= 1
            a0 = stack[sp - 1, 0]
            a1 = stack[sp - 1, 1]
            a2 = stack[sp - 1, 2]
            a3 = stack[sp - 1, 3]
            b0 = stack[sp, 0]
            b1 = stack[sp, 1]
            b2 = stack[sp, 2]
            b3 = stack[sp, 3]
            stack[sp - 1, 0] = a0 * b0
            stack[sp - 1, 1] = a0 * b1 + a1 * b0
            stack[sp - 1, 2] = a0 * b2 + a2 * b0
            stack[sp - 1, 3] = a0 * b3 + a1 * b2 + a2 * b1 + a3 * b0
        elif op == OP_DIV:
            sp -= 1
            b0 = stack[sp, 0]
            b1 = stack[sp, 1]
            b2 = stack[sp, 2]
            b3 = stack[sp, 3]
            r0 = _div(stack[sp - 1, 0], b0)
            r1 = _div(stack[sp - 1, 1] - r0 * b1, b0)
            r2 = _div(stack[sp - 1, 2] - r0 * b2, b0)
            r3 = _div(stack[sp - 1, 3] - r0 * b3 - r1 * b2 - r2 * b1, b0)
            stack[sp - 1, 0] = r0
            stack[sp - 1, 1] = r1
            stack[sp - 1, 2] = r2
            stack[sp - 1, 3] = r3
        elif op == OP_POW:
            sp -= 1
            a0 = stack[sp - 1, 0]
            a1 = stack[sp - 1, 1]
            a2 = stack[sp - 1, 2]
            a3 = stack[sp - 1, 3]
            b0 = stack[sp, 0]
            b1 = stack[sp, 1]
            b2 = stack[sp, 2]
            b3 = stack[sp, 3]
            if (b1 == 0.0 and b2 == 0.0 and b3 == 0.0
                    and b0 == math.floor(b0) and abs(b0) <= 64.0):
                p0, p1, p2, p3 = _powi_hyper(a0, a1, a2, a3, int(b0))
                stack[sp - 1, 0] = p0
                stack[sp - 1, 1] = p1
                stack[sp - 1, 2] = p2
                stack[sp - 1, 3] = p3
            elif a0 > 0.0:
                # r = exp(b * log a), chained through both jets
                w = 1.0 / a0
                la0 = math.log(a0)
                la1 = a1 * w
                la2 = a2 * w
                la3 = a3 * w - a1 * a2 * w * w
                m0 = b0 * la0
                m1 = b0 * la1 + b1 * la0
                m2 = b0 * la2 + b2 * la0
                m3 = b0 * la3 + b1 * la2 + b2 * la1 + b3 * la0
                r0 = _exp(m0)
                stack[sp - 1, 0] = r0
                stack[sp - 1, 1] = r0 * m1
                stack[sp - 1, 2] = r0 * m2
                stack[sp - 1, 3] = r0 * (m3 + m1 * m2)
            else:
                stack[sp - 1, 0] = _powf(a0, b0)
                stack[sp - 1, 1] = _NAN
                stack[sp - 1, 2] = _NAN
                stack[sp - 1, 3] = _NAN
        elif op == OP_POWI:
            p0, p1, p2, p3 = _powi_hyper(
                stack[sp - 1, 0], stack[sp - 1, 1], stack[sp - 1, 2],
                stack[sp - 1, 3], arg,
            )
            stack[sp - 1, 0] = p0
            stack[sp - 1, 1] = p1
            stack[sp - 1, 2] = p2
            stack[sp - 1, 3] = p3
        elif op == OP_NEG:
            for c in range(4):
                stack[sp - 1, c] = -stack[sp - 1, c]
        else:
            f0, f1, f2, f3 = _fn_derivs(op, stack[sp - 1, 0])
            a1 = stack[sp - 1, 1]
            a2 = stack[sp - 1, 2]
            a3 = stack[sp - 1, 3]
            stack[sp - 1, 0] = f0
            stack[sp - 1, 1] = f1 * a1
            stack[sp - 1, 2] = f1 * a2
            stack[sp - 1, 3] = f1 * a3 + f2 * a1 * a2
    return stack[0, 0], stack[0, 1], stack[0, 2], stack[0, 3]


def eval_triple(code, consts, xy, seed1, seed2, seed3, stack):
    """Third-order multidual pass (8 components indexed by seed subsets).

    Component order: v, d1, d2, d3, d12, d13, d23, d123.  Internal use only:
    the public differentiation surface stops at second order.
    """
    sp = 0
    for i in range(code.shape[0]):
        op = code[i, 0]
        arg = code[i, 1]
        if op == OP_CONST:
            for c in range(8):
                stack[sp, c] = 0.0
            stack[sp, 0] = consts[arg]
            sp += 1
        elif op == OP_VAR:
            for c in range(8):
                stack[sp, c] = 0.0
            stack[sp, 0] = xy[arg]
            stack[sp, 1] = seed1[arg]
            stack[sp, 2] = seed2[arg]
            stack[sp, 3] = seed3[arg]
            sp += 1
        elif op == OP_ADD:
            sp -= 1
            for c in range(8):
                stack[sp - 1, c] += stack[sp, c]
        elif op == OP_SUB:
            sp -= 1
            for c in range(8):
                stack[sp - 1, c] -= stack[sp, c]
        elif op == OP_MUL:
            sp -= 1
            _mul8(stack, sp - 1, sp)
        elif op == OP_DIV:
            sp -= 1
            _div8(stack, sp - 1, sp)
        elif op == OP_POW:
            sp -= 1
            a0 = stack[sp - 1, 0]
            b0 = stack[sp, 0]
            b_const = True
            for c in range(1, 8):
                if stack[sp, c] != 0.0:
                    b_const = False
            if b_const and b0 == math.floor(b0) and abs(b0) <= 64.0:
                _powi8(stack, sp - 1, sp, int(b0))
            elif a0 > 0.0:
                # log, multiply, exp at the jet level
                _ln8(stack, sp - 1)
                _mul8(stack, sp - 1, sp)
                _exp8(stack, sp - 1)
            else:
                v = _powf(a0, b0)
                stack[sp - 1, 0] = v
                for c in range(1, 8):
                    stack[sp - 1, c] = _NAN
        elif op == OP_POWI:
            _powi8(stack, sp - 1, sp, arg)
        elif op == OP_NEG:
            for c in range(8):
                stack[sp - 1, c] = -stack[sp - 1, c]
        else:
            f0, f1, f2, f3 = _fn_derivs(op, stack[sp - 1, 0])
            _apply8(stack, sp - 1, f0, f1, f2, f3)
    out = np.empty(8)
    for c in range(8):
        out[c] = stack[0, c]
    return out


def _mul8(stack, ia, ib):
    """stack[ia] <- stack[ia] * stack[ib] in 8-component multidual algebra."""
    a0 = stack[ia, 0]
    a1 = stack[ia, 1]
    a2 = stack[ia, 2]
    a3 = stack[ia, 3]
    a12 = stack[ia, 4]
    a13 = stack[ia, 5]
    a23 = stack[ia, 6]
    a123 = stack[ia, 7]
    b0 = stack[ib, 0]
    b1 = stack[ib, 1]
    b2 = stack[ib, 2]
    b3 = stack[ib, 3]
    b12 = stack[ib, 4]
    b13 = stack[ib, 5]
    b23 = stack[ib, 6]
    b123 = stack[ib, 7]
    stack[ia, 0] = a0 * b0
    stack[ia, 1] = a0 * b1 + a1 * b0
    stack[ia, 2] = a0 * b2 + a2 * b0
    stack[ia, 3] = a0 * b3 + a3 * b0
    stack[ia, 4] = a0 * b12 + a1 * b2 + a2 * b1 + a12 * b0
    stack[ia, 5] = a0 * b13 + a1 * b3 + a3 * b1 + a13 * b0
    stack[ia, 6] = a0 * b23 + a2 * b3 + a3 * b2 + a23 * b0
    stack[ia, 7] = (
        a0 * b123
        + a1 * b23
        + a2 * b13
        + a3 * b12
        + a12 * b3
        + a13 * b2
        + a23 * b1
        + a123 * b0
    )


def _apply8(stack, ia, f0, f1, f2, f3):
    """stack[ia] <- f(stack[ia]) given f's derivatives at the value part."""
    a1 = stack[ia, 1]
    a2 = stack[ia, 2]
    a3 = stack[ia, 3]
    a12 = stack[ia, 4]
    a13 = stack[ia, 5]
    a23 = stack[ia, 6]
    a123 = stack[ia, 7]
    stack[ia, 0] = f0
    stack[ia, 1] = f1 * a1
    stack[ia, 2] = f1 * a2
    stack[ia, 3] = f1 * a3
    stack[ia, 4] = f1 * a12 + f2 * a1 * a2
    stack[ia, 5] = f1 * a13 + f2 * a1 * a3
    stack[ia, 6] = f1 * a23 + f2 * a2 * a3
    stack[ia, 7] = (
        f1 * a123
        + f2 * (a1 * a23 + a2 * a13 + a3 * a12)
        + f3 * a1 * a2 * a3
    )


def _ln8(stack, ia):
    x = stack[ia, 0]
    if x > 0.0:
        w = 1.0 / x
        _apply8(stack, ia, math.log(x), w, -w * w, 2.0 * w * w * w)
    else:
        stack[ia, 0] = _log(x)
        for c in range(1, 8):
            stack[ia, c] = _NAN


def _exp8(stack, ia):
    g = _exp(stack[ia, 0])
    _apply8(stack, ia, g, g, g, g)


def _inv8(stack, ia):
    x = stack[ia, 0]
    w = _div(1.0, x)
    _apply8(stack, ia, w, -w * w, 2.0 * w * w * w, -6.0 * w * w * w * w)


def _powi8(stack, ia, iscratch, k):
    """stack[ia] <- stack[ia]^k using iscratch as a work slot."""
    m = k if k >= 0 else -k
    for c in range(8):
        stack[iscratch, c] = stack[ia, c]
        stack[ia, c] = 0.0
    stack[ia, 0] = 1.0
    for _ in range(m):
        _mul8(stack, ia, iscratch)
    if k < 0:
        _inv8(stack, ia)


def _div8(stack, ia, ib):
    b0 = stack[ib, 0]
    r0 = _div(stack[ia, 0], b0)
    r1 = _div(stack[ia, 1] - r0 * stack[ib, 1], b0)
    r2 = _div(stack[ia, 2] - r0 * stack[ib, 2], b0)
    r3 = _div(stack[ia, 3] - r0 * stack[ib, 3], b0)
    r12 = _div(
        stack[ia, 4] - r0 * stack[ib, 4] - r1 * stack[ib, 2] - r2 * stack[ib, 1], b0
    )
    r13 = _div(
        stack[ia, 5] - r0 * stack[ib, 5] - r1 * stack[ib, 3] - r3 * stack[ib, 1], b0
    )
    r23 = _div(
        stack[ia, 6] - r0 * stack[ib, 6] - r2 * stack[ib, 3] - r3 * stack[ib, 2], b0
    )
    r123 = _div(
        stack[ia, 7]
        - r0 * stack[ib, 7]
        - r1 * stack[ib, 6]
        - r2 * stack[ib, 5]
        - r3 * stack[ib, 4]
        - r12 * stack[ib, 3]
        - r13 * stack[ib, 2]
        - r23 * stack[ib, 1],
        b0,
    )
    stack[ia, 0] = r0
    stack[ia, 1] = r1
    stack[ia, 2] = r2
    stack[ia, 3] = r3
    stack[ia, 4] = r12
    stack[ia, 5] = r13
    stack[ia, 6] = r23
    stack[ia, 7] = r123


# --------------------------------------------------------------------------
# Right-hand sides


def _solve_inplace(a, b):
    """Gaussian elimination with partial pivoting; a and b are destroyed.

    Returns False on a (numerically) singular matrix; b then holds garbage.
    """
    n = a.shape[0]
    for col in range(n):
        piv = col
        best = abs(a[col, col])
        for r in range(col + 1, n):
            v = abs(a[r, col])
            if v > best:
                best = v
                piv = r
        if best == 0.0 or best != best:
            return False
        if piv != col:
            for c in range(n):
                tmp = a[col, c]
                a[col, c] = a[piv, c]
                a[piv, c] = tmp
            tmp = b[col]
            b[col] = b[piv]
            b[piv] = tmp
        inv = 1.0 / a[col, col]
        for r in range(col + 1, n):
            f = a[r, col] * inv
            if f != 0.0:
                for c in range(col, n):
                    a[r, c] -= f * a[col, c]
                b[r] -= f * b[col]
    for r in range(n - 1, -1, -1):
        acc = b[r]
        for c in range(r + 1, n):
            acc -= a[r, c] * b[c]
        b[r] = acc / a[r, r]
    return True


def finsler_coefficients(code, consts, z, out, stack):
    """Geodesic coefficients of a Lagrangian tape at the point z = (x, y).

    out receives -G with G^i = (1/2) g^{il} [ d2L/dx^k dy^l y^k - dL/dx^l ]
    and g the vertical Hessian (1/2) d2L/dy dy.  Returns False when the
    Hessian solve breaks down (out is then filled with nan).
    """
    twon = z.shape[0]
    n = twon // 2
    g = np.empty((n, n))
    b = np.empty(n)
    s1 = np.zeros(twon)
    s2 = np.zeros(twon)
    for i in range(n):
        s1[n + i] = 1.0
        for l in range(i, n):
            s2[n + l] = 1.0
            r = eval_hyper(code, consts, z, s1, s2, stack)
            g[i, l] = 0.5 * r[3]
            g[l, i] = g[i, l]
            s2[n + l] = 0.0
        s1[n + i] = 0.0
    for l in range(n):
        s2[n + l] = 1.0
        acc = 0.0
        for k in range(n):
            s1[k] = 1.0
            r = eval_hyper(code, consts, z, s1, s2, stack)
            acc += r[3] * z[n + k]
            if k == l:
                acc -= r[1]  # dL/dx^l rides along in the same pass
            s1[k] = 0.0
        b[l] = acc
        s2[n + l] = 0.0
    ok = _solve_inplace(g, b)
    if not ok:
        for i in range(n):
            out[i] = _NAN
        return False
    for i in range(n):
        out[i] = -0.5 * b[i]
    return True


def rhs(kind, code, offs, consts, z, out, stack):
    """First-order right-hand side on TM: (x', y') = (y, S(x, y))."""
    twon = z.shape[0]
    n = twon // 2
    for i in range(n):
        out[i] = z[n + i]
    if kind == 0:
        for k in range(n):
            out[n + k] = eval_value(code[offs[k] : offs[k + 1]], consts, z, stack[:, 0])
    else:
        finsler_coefficients(code, consts, z, out[n:], stack)
    return out


def _rms_scaled(err, z0, z1, atol, rtol):
    acc = 0.0
    m = err.shape[0]
    for i in range(m):
        a = abs(z0[i])
        bb = abs(z1[i])
        big = a if a > bb else bb
        w = err[i] / (atol + rtol * big)
        acc += w * w
    return math.sqrt(acc / m)


def _initial_step(kind, code, offs, consts, z0, f0, direction, rtol, atol, stack):
    m = z0.shape[0]
    d0 = 0.0
    d1 = 0.0
    for i in range(m):
        sc = atol + rtol * abs(z0[i])
        d0 += (z0[i] / sc) ** 2
        d1 += (f0[i] / sc) ** 2
    d0 = math.sqrt(d0 / m)
    d1 = math.sqrt(d1 / m)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    z1 = np.empty(m)
    for i in range(m):
        z1[i] = z0[i] + h0 * direction * f0[i]
    f1 = np.empty(m)
    rhs(kind, code, offs, consts, z1, f1, stack)
    d2 = 0.0
    for i in range(m):
        sc = atol + rtol * abs(z0[i])
        d2 += ((f1[i] - f0[i]) / sc) ** 2
    d2 = math.sqrt(d2 / m) / h0
    if d2 != d2:  # nan guard
        return h0
    dm = d1 if d1 > d2 else d2
    if dm <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / dm) ** 0.2
    return min(100.0 * h0, h1)


def rk45(kind, code, offs, consts, stack_size, z0, t0, t1, rtol, atol,
         max_steps, max_step, blowup, box_lo, box_hi, use_box):
    """Adaptive Dormand-Prince 5(4) with stage storage for dense output.

    Returns (ts, zs, stages, nsteps, status).  `stages` holds the seven
    stage derivatives of each accepted step; the quartic interpolant RK_P
    reconstructs the solution and its derivative anywhere inside a step.
    `max_step` caps the step length so compactly supported features cannot
    be tunneled over (pass inf to disable).  Termination: STATUS_REACHED on
    hitting t1; STATUS_BLOWUP when the fiber sup-norm exceeds `blowup`;
    STATUS_UNDERFLOW when the step shrinks below 1e-12 * max(1, |t|);
    STATUS_LEFT_BOX when the base point leaves the chart box;
    STATUS_STEP_LIMIT when max_steps is exhausted.
    """
    dim = z0.shape[0]
    n = dim // 2
    ts = np.empty(max_steps + 1)
    zs = np.empty((max_steps + 1, dim))
    stages = np.empty((max_steps, 7, dim))
    stack = np.empty((stack_size, 4))
    K = np.empty((7, dim))
    ztmp = np.empty(dim)
    znew = np.empty(dim)
    errv = np.empty(dim)

    ts[0] = t0
    for i in range(dim):
        zs[0, i] = z0[i]
    f = np.empty(dim)
    rhs(kind, code, offs, consts, z0, f, stack)
    finite = True
    for i in range(dim):
        if not math.isfinite(f[i]):
            finite = False
    direction = 1.0 if t1 >= t0 else -1.0
    if not finite:
        return ts, zs, stages, 0, STATUS_UNDERFLOW
    h = _initial_step(kind, code, offs, consts, z0, f, direction, rtol, atol, stack)
    if not math.isfinite(h) or h <= 0.0:
        h = 1e-6
    if h > max_step:
        h = max_step
    h *= direction

    t = t0
    z = z0.copy()
    nsteps = 0
    status = STATUS_STEP_LIMIT
    while nsteps < max_steps:
        if (t - t1) * direction >= 0.0:
            status = STATUS_REACHED
            break
        if abs(h) < 1e-12 * max(1.0, abs(t)):
            status = STATUS_UNDERFLOW
            break
        if abs(h) > max_step:
            h = max_step * direction
        clipped = False
        if (t + h - t1) * direction > 0.0:
            h = t1 - t
            clipped = True

        for i in range(dim):
            K[0, i] = f[i]
        for s in range(1, 7):
            for i in range(dim):
                acc = 0.0
                for j in range(s):
                    acc += RK_A[s, j] * K[j, i]
                ztmp[i] = z[i] + h * acc
            if s == 6:
                for i in range(dim):
                    znew[i] = ztmp[i]
            rhs(kind, code, offs, consts, ztmp, K[s], stack)

        for i in range(dim):
            acc = 0.0
            for j in range(7):
                acc += RK_E[j] * K[j, i]
            errv[i] = h * acc
        err = _rms_scaled(errv, z, znew, atol, rtol)

        if not math.isfinite(err):
            h *= 0.2
            continue
        if err > 1.0:
            fac = 0.9 * err ** -0.2
            if fac < 0.2:
                fac = 0.2
            h *= fac
            continue

        # accepted
        tnew = t1 if clipped else t + h
        nsteps += 1
        ts[nsteps] = tnew
        for i in range(dim):
            zs[nsteps, i] = znew[i]
            for s in range(7):
                stages[nsteps - 1, s, i] = K[s, i]
        t = tnew
        for i in range(dim):
            z[i] = znew[i]
            f[i] = K[6, i]  # FSAL

        ymax = 0.0
        for i in range(n, dim):
            v = abs(z[i])
            if v > ymax:
                ymax = v
        if ymax > blowup:
            status = STATUS_BLOWUP
            break
        if use_box:
            outside = False
            for i in range(n):
                if z[i] < box_lo[i] or z[i] > box_hi[i]:
                    outside = True
            if outside:
                status = STATUS_LEFT_BOX
                break

        if err == 0.0:
            fac = 10.0
        else:
            fac = 0.9 * err ** -0.2
            if fac > 10.0:
                fac = 10.0
            if fac < 0.2:
                fac = 0.2
        h *= fac

    if status == STATUS_STEP_LIMIT and (t - t1) * direction >= 0.0:
        status = STATUS_REACHED
    return ts, zs, stages, nsteps, status


def variational_rhs(code, offs, consts, Z, out, stack, s_dz, s_ddz):
    """Right-hand side of the geodesic flow with first and second variations.

    Z = (z, dz, ddz), each of length 2n.  dz transports a tangent vector of
    the flow, ddz its second variation along the same direction; both ride
    on exact directional derivatives of the fiber equations.
    """
    six_n = Z.shape[0]
    twon = six_n // 3
    n = twon // 2
    for i in range(twon):
        s_dz[i] = Z[twon + i]
        s_ddz[i] = Z[2 * twon + i]
    for i in range(n):
        out[i] = Z[n + i]
        out[twon + i] = Z[twon + n + i]
        out[2 * twon + i] = Z[2 * twon + n + i]
    z = Z[:twon]
    for k in range(n):
        tape = code[offs[k] : offs[k + 1]]
        r = eval_hyper(tape, consts, z, s_dz, s_dz, stack)
        v2, dd = eval_dual(tape, consts, z, s_ddz, stack[:, :2])
        out[n + k] = r[0]
        out[twon + n + k] = r[1]
        out[2 * twon + n + k] = r[3] + dd
    return out


def rk45_variational(code, offs, consts, stack_size, Z0, t0, t1, rtol, atol, max_steps):
    """Integrate the variationally augmented geodesic system; endpoint only."""
    dim = Z0.shape[0]
    twon = dim // 3
    stack = np.empty((stack_size, 4))
    s_dz = np.empty(twon)
    s_ddz = np.empty(twon)
    K = np.empty((7, dim))
    ztmp = np.empty(dim)
    znew = np.empty(dim)
    errv = np.empty(dim)
    f = np.empty(dim)
    variational_rhs(code, offs, consts, Z0, f, stack, s_dz, s_ddz)
    direction = 1.0 if t1 >= t0 else -1.0
    h = 1e-4 * direction

    t = t0
    z = Z0.copy()
    nsteps = 0
    status = STATUS_STEP_LIMIT
    while nsteps < max_steps:
        if (t - t1) * direction >= 0.0:
            status = STATUS_REACHED
            break
        if abs(h) < 1e-12 * max(1.0, abs(t)):
            status = STATUS_UNDERFLOW
            break
        clipped = False
        if (t + h - t1) * direction > 0.0:
            h = t1 - t
            clipped = True
        for i in range(dim):
            K[0, i] = f[i]
        for s in range(1, 7):
            for i in range(dim):
                acc = 0.0
                for j in range(s):
                    acc += RK_A[s, j] * K[j, i]
                ztmp[i] = z[i] + h * acc
            if s == 6:
                for i in range(dim):
                    znew[i] = ztmp[i]
            variational_rhs(code, offs, consts, ztmp, K[s], stack, s_dz, s_ddz)
        for i in range(dim):
            acc = 0.0
            for j in range(7):
                acc += RK_E[j] * K[j, i]
            errv[i] = h * acc
        err = _rms_scaled(errv, z, znew, atol, rtol)
        if not math.isfinite(err):
            h *= 0.2
            continue
        if err > 1.0:
            fac = 0.9 * err ** -0.2
            if fac < 0.2:
                fac = 0.2
            h *= fac
            continue
        tnew = t1 if clipped else t + h
        nsteps += 1
        t = tnew
        for i in range(dim):
            z[i] = znew[i]
            f[i] = K[6, i]
        if err == 0.0:
            fac = 10.0
        else:
            fac = 0.9 * err ** -0.2
            if fac > 10.0:
                fac = 10.0
            if fac < 0.2:
                fac = 0.2
        h *= fac
    return z, status


# --------------------------------------------------------------------------
# Backend selection


def _pick_backend() -> str:
    choice = os.environ.get("SODEFLOW_BACKEND", "auto").lower()
    if choice not in ("auto", "numba", "numpy"):
        raise RuntimeError(
            f"SODEFLOW_BACKEND={choice!r} not understood (auto|numba|numpy)"
        )
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except Exception:
        if choice == "numba":
            raise
        return "numpy"
    return "numba"


BACKEND = _pick_backend()

if BACKEND == "numba":
    from numba import njit

    _jit = njit(cache=True)
    # Rebind in dependency order so intra-module calls resolve to the
    # compiled versions when numba first specializes each function.
    _div = _jit(_div)
    _log = _jit(_log)
    _sqrt = _jit(_sqrt)
    _exp = _jit(_exp)
    _powi = _jit(_powi)
    _powf = _jit(_powf)
    _sign = _jit(_sign)
    _fn_derivs = _jit(_fn_derivs)
    _powi_dual = _jit(_powi_dual)
    _powi_hyper = _jit(_powi_hyper)
    eval_value = _jit(eval_value)
    eval_dual = _jit(eval_dual)
    eval_hyper = _jit(eval_hyper)
    _mul8 = _jit(_mul8)
    _apply8 = _jit(_apply8)
    _ln8 = _jit(_ln8)
    _exp8 = _jit(_exp8)
    _inv8 = _jit(_inv8)
    _powi8 = _jit(_powi8)
    _div8 = _jit(_div8)
    eval_triple = _jit(eval_triple)
    _solve_inplace = _jit(_solve_inplace)
    finsler_coefficients = _jit(finsler_coefficients)
    rhs = _jit(rhs)
    _rms_scaled = _jit(_rms_scaled)
    _initial_step = _jit(_initial_step)
    rk45 = _jit(rk45)
    variational_rhs = _jit(variational_rhs)
    rk45_variational = _jit(rk45_variational)


def warmup(n: int = 2) -> None:
    """Force-compile the jitted kernels (fast no-op on the numpy backend)."""
    # tape for y1^2 + y2^2 (a flat Lagrangian doubles as a harmless field)
    lag = np.array(
        [[OP_VAR, n], [OP_POWI, 2], [OP_VAR, n + 1], [OP_POWI, 2], [OP_ADD, 0]],
        dtype=np.int64,
    )
    lag_offs = np.array([0, 5], dtype=np.int64)
    # n copies of a one-expression tape for the kind-0 field
    code = np.vstack([lag] * n)
    offs = np.arange(0, 5 * n + 1, 5, dtype=np.int64)
    consts = np.zeros(1)
    z0 = np.zeros(2 * n)
    z0[n] = 1.0
    z0[n + 1] = 0.5
    stack = np.empty((4, 4))
    seed = np.zeros(2 * n)
    eval_value(lag, consts, z0, stack[:, 0])
    eval_dual(lag, consts, z0, seed, stack[:, :2])
    eval_hyper(lag, consts, z0, seed, seed, stack)
    eval_triple(lag, consts, z0, seed, seed, seed, np.empty((4, 8)))
    rk45(0, code, offs, consts, 4, z0, 0.0, 0.1, 1e-8, 1e-10, 100,
         _INF, 1e8, np.zeros(n), np.zeros(n), False)
    rk45(1, lag, lag_offs, consts, 4, z0, 0.0, 0.01, 1e-8, 1e-10, 100,
         _INF, 1e8, np.zeros(n), np.zeros(n), False)
    Z0 = np.zeros(6 * n)
    Z0[: 2 * n] = z0
    Z0[2 * n + n] = 1.0
    rk45_variational(code, offs, consts, 4, Z0, 0.0, 0.1, 1e-8, 1e-10, 100)
