"""Stepper and backend checks: interpolant consistency, an independent
cross-validation against scipy's implementation of the same pair, and
bit-level parity of the numpy fallback backend (exercised in a subprocess
with SODEFLOW_BACKEND=numpy, since the backend is fixed at import)."""

import json
import os
import subprocess
import sys
import textwrap

import numpy as np
import pytest

import sodeflow as sf
from sodeflow import kernels


def test_interpolant_weights_close_the_step():
    # at theta = 1 the dense-output weights must reproduce the 5th-order step
    assert np.allclose(kernels.RK_P.sum(axis=1), kernels.RK_B, atol=1e-12)


def test_tableau_consistency():
    assert np.allclose(kernels.RK_A.sum(axis=1), kernels.RK_C, atol=1e-12)
    assert abs(kernels.RK_E.sum()) < 1e-12


def test_interpolant_derivative_closes_both_ends():
    # d/dtheta at 0 picks the first stage, at 1 the FSAL stage
    d0 = kernels.RK_P @ np.array([1.0, 0.0, 0.0, 0.0])
    d1 = kernels.RK_P @ np.array([1.0, 2.0, 3.0, 4.0])
    assert np.allclose(d0, np.eye(7)[0], atol=1e-9)
    assert np.allclose(d1, np.eye(7)[6], atol=1e-9)


def test_dense_output_matches_nodes(poincare):
    tr = sf.integrate(poincare, ([0, 1], [1, 0]), 0.0, 1.0)
    for k in range(len(tr.t)):
        x, y = tr.eval(tr.t[k])
        assert np.allclose(np.concatenate([x, y]), tr.states[k], atol=1e-12)


def test_dense_output_derivative_is_consistent(poincare):
    tr = sf.integrate(poincare, ([0, 1], [1, 0]), 0.0, 1.0, (1e-12, 1e-10))
    for t in np.linspace(0.05, 0.95, 7):
        dx, _ = tr.deriv(t)
        _, y = tr.eval(t)
        assert np.allclose(dx, y, atol=1e-9)


def test_against_scipy_rk45(poincare):
    solve_ivp = pytest.importorskip("scipy.integrate").solve_ivp

    def rhs(t, z):
        return np.concatenate([z[2:], poincare.value(z[:2], z[2:])])

    ours = sf.integrate(poincare, ([0, 1], [1, 0]), 0.0, 2.0, (1e-11, 1e-9))
    ref = solve_ivp(rhs, (0.0, 2.0), [0, 1, 1, 0], method="RK45",
                    rtol=1e-9, atol=1e-11, dense_output=True)
    for t in np.linspace(0.0, 2.0, 21):
        x, y = ours.eval(t)
        assert np.allclose(np.concatenate([x, y]), ref.sol(t), atol=1e-7)


def test_eval_many_matches_pointwise(poincare):
    tr = sf.integrate(poincare, ([0, 1], [1, 0]), 0.0, 1.5)
    ts = np.linspace(0.0, 1.5, 57)
    batch = tr.eval_many(ts)
    for t, row in zip(ts, batch):
        x, y = tr.eval(t)
        assert np.allclose(row, np.concatenate([x, y]), atol=1e-13)


def test_eval_many_backward(expgrowth):
    tr = sf.integrate(expgrowth, ([0, 0], [1, 2]), 0.0, -1.0)
    ts = np.linspace(-1.0, 0.0, 23)
    batch = tr.eval_many(ts)
    for t, row in zip(ts, batch):
        expected = np.exp(t) - 1.0
        assert np.allclose(row[:2], [expected, 2 * expected], atol=1e-8)


def test_numpy_backend_parity():
    """The env-selected fallback executes the same source: same results."""
    script = textwrap.dedent(
        """
        import json, sys
        import numpy as np
        import sodeflow as sf

        s = sf.SodeField.from_expressions(["2*y1*y2/x2", "(y2^2 - y1^2)/x2"])
        tr = sf.integrate(s, ([0, 1], [1, 0]), 0.0, 1.0)
        f = sf.FinslerStructure("(y1^2+y2^2)/x2^2", 2,
                                chart=sf.Box([-5, 0.1], [5, 10]))
        tr2 = sf.integrate(f.semispray(), ([0, 1], [1, 0.3]), 0.0, 0.7)
        e = sf.parse("sin(x1)*y1^3/(1+y2^2) + sqrt(1+x2^2)")
        b = sf.Binding.of([0.3, -0.8], [1.1, 0.4])
        out = {
            "backend": sf.kernels.BACKEND,
            "endpoint": tr.states[-1].tolist(),
            "steps": len(tr.t),
            "finsler_endpoint": tr2.states[-1].tolist(),
            "value": e.evaluate(b),
            "partial": e.partial("y1", b),
            "second": e.second_partial("x1", "y2", b),
        }
        json.dump(out, sys.stdout)
        """
    )

    def run(backend):
        env = dict(os.environ, SODEFLOW_BACKEND=backend)
        proc = subprocess.run(
            [sys.executable, "-c", script], env=env, capture_output=True, text=True
        )
        assert proc.returncode == 0, proc.stderr
        return json.loads(proc.stdout)

    a = run("numpy")
    assert a["backend"] == "numpy"
    b = run(kernels.BACKEND)
    assert b["backend"] == kernels.BACKEND
    assert a["steps"] == b["steps"]
    for key in ("endpoint", "finsler_endpoint"):
        assert np.allclose(a[key], b[key], rtol=0, atol=1e-12), key
    for key in ("value", "partial", "second"):
        assert a[key] == pytest.approx(b[key], abs=1e-14), key


def test_generic_python_stepper_matches_kernel(poincare):
    # route the same field through the non-tape stepper used for
    # derivative-backed coefficient families
    from sodeflow.flow import _rk45_python

    z0 = np.array([0.0, 1.0, 1.0, 0.0])
    ts, zs, stages, m, status = _rk45_python(
        poincare, z0, 0.0, 1.0, 1e-8, 1e-10, 4096, np.inf, 1e8,
        np.zeros(2), np.zeros(2), False,
    )
    assert status == kernels.STATUS_REACHED
    tr = sf.integrate(poincare, ([0, 1], [1, 0]), 0.0, 1.0)
    assert np.allclose(zs[m], tr.states[-1], atol=1e-9)


def test_left_chart_box_cause():
    s = sf.SodeField.from_expressions(["0", "0"], chart=sf.Box([-1, -1], [1, 1]))
    tr = sf.integrate(s, ([0, 0], [1, 0]), 0.0, 10.0)
    assert tr.cause == sf.flow.CAUSE_LEFT_BOX
    assert tr.t[-1] < 10.0


def test_step_underflow_on_hard_singularity():
    # velocity field 1/x1 towards x1 = 0: the stepper must give up cleanly
    s = sf.SodeField.from_expressions(["-1/x1"])
    tr = sf.integrate(s, ([1.0], [0.0]), 0.0, 10.0, blowup=1e30)
    assert tr.cause in (sf.flow.CAUSE_UNDERFLOW, sf.flow.CAUSE_BLOWUP)
