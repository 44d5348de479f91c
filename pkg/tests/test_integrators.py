import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isalt.exceptions import NonConvergence, SingularNewtonMatrix
from isalt.integrators import (OK, ImplicitSolverOptions, SchemeKind, em_step, flow_map,
                               hrk4_phi1, hrk4_step, ssbe_implicit_point, ssbe_solve_core,
                               ssbe_step, step)
from isalt.systems import SdeSystem, drift, make_benchmark

small = st.floats(-2, 2, allow_nan=False)
steps = st.floats(1e-4, 0.2)


def stages_by_hand(f, x, forcing, delta):
    """Independent stage-by-stage evaluation of the hybrid RK4 average."""
    g = forcing / delta
    k1 = f(x) + g
    k2 = f(x + 0.5 * delta * k1) + g
    k3 = f(x + 0.5 * delta * k2) + g
    k4 = f(x + delta * k3) + g
    return (k1 + 2 * k2 + 2 * k3 + k4) / 6


def test_em_zero_drift(free):
    np.testing.assert_allclose(em_step(free, [0.3], [0.2], 0.1), [0.3 + 0.7 * 0.2])


def test_em_double_well_example(dw):
    assert em_step(dw, [0.5], [0.0], 0.1)[0] == pytest.approx(0.575, abs=1e-15)


@given(small, small, small, small, steps)
def test_em_increment_is_affine_in_noise(x, b1, b2, a, delta):
    dw = make_benchmark("double-well-1d")
    base = em_step(dw, [x], [0.0], delta) - x
    lhs = em_step(dw, [x], [a * b1 + b2], delta) - x
    rhs = a * (em_step(dw, [x], [b1], delta) - x - base) + (em_step(dw, [x], [b2], delta) - x)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_hrk4_phi1_zero_drift(free):
    np.testing.assert_allclose(hrk4_phi1(free, [1.0], [0.35], 0.05), [0.35 / 0.05])


def test_hrk4_phi1_linear_drift_matches_stage_oracle(rng):
    A = np.array([[-1.0, 0.5], [0.0, -2.0]])
    lin = SdeSystem.from_expressions("lin2", ["x", "y"], ["-x + 0.5*y", "-2*y"], np.eye(2))
    for _ in range(20):
        x, delta = rng.normal(size=2), rng.uniform(0.01, 0.3)
        got = hrk4_phi1(lin, x, np.zeros(2), delta)
        np.testing.assert_allclose(got, stages_by_hand(lambda z: A @ z, x, np.zeros(2), delta),
                                   rtol=1e-14, atol=1e-14)
        series = (A + delta * A @ A / 2 + delta ** 2 * A @ A @ A / 6
                  + delta ** 3 * A @ A @ A @ A / 24) @ x
        np.testing.assert_allclose(got, series, rtol=1e-12, atol=1e-14)


@settings(max_examples=60)
@given(st.tuples(small, small, small), st.tuples(small, small), steps)
def test_hrk4_phi1_dual_implementation(x, db, delta):
    lorenz = make_benchmark("lorenz-3d")
    x = np.array(x) * 5
    forcing = lorenz.diffusion @ np.array(db)
    got = hrk4_phi1(lorenz, x, forcing, delta)
    want = stages_by_hand(lambda z: drift(lorenz, z), x, forcing, delta)
    np.testing.assert_allclose(got, want, rtol=1e-14, atol=1e-12)


def test_hrk4_step_adds_noise_twice(free):
    np.testing.assert_allclose(hrk4_step(free, [0.1], [0.3], 0.01), [0.1 + 2 * 0.7 * 0.3],
                               rtol=1e-14)


def test_hrk4_step_without_noise_is_classical_rk4(dw, rng):
    for _ in range(10):
        x, delta = rng.normal(size=1), rng.uniform(0.001, 0.1)
        want = x + delta * stages_by_hand(lambda z: drift(dw, z), x, np.zeros(1), delta)
        np.testing.assert_allclose(hrk4_step(dw, x, [0.0], delta), want, rtol=1e-14)


def test_hrk4_consistency(dw):
    x = np.array([0.7])
    errs = [abs((hrk4_step(dw, x, [0.0], h) - x)[0] / h - drift(dw, x)[0])
            for h in (1e-2, 1e-3, 1e-4)]
    assert errs[1] < errs[0] / 5 and errs[2] < errs[1] / 5


def test_ssbe_linear_closed_form(ou):
    a, x, delta, db = 1.0, 0.8, 0.25, 0.1
    assert ssbe_step(ou, [x], [db], delta)[0] == pytest.approx(x / (1 + a * delta) + db,
                                                                rel=1e-12)


def test_ssbe_zero_drift(free):
    np.testing.assert_allclose(ssbe_step(free, [0.4], [0.2], 0.5), [0.4 + 0.14])


def test_ssbe_implicit_residual(dw):
    x, delta = 0.5, 1e-3
    xs = ssbe_implicit_point(dw, [x], delta)
    assert abs(xs[0] - x - drift(dw, xs)[0] * delta) <= 1e-10


@pytest.mark.parametrize("name,dt,scale", [("double-well-1d", 1e-3, 1.5),
                                           ("gradient-2d", 2e-3, 1.5),
                                           ("lorenz-3d", 5e-4, 20.0)])
def test_newton_converges_quickly_at_fine_steps(name, dt, scale, rng):
    system = make_benchmark(name)
    for _ in range(200):
        x = rng.normal(0, scale, system.d)
        _, status, iters = ssbe_solve_core(system.drift, system.drift_jacobian, x, dt,
                                           1e-10, 100)
        assert status == OK and iters <= 10


def test_newton_iteration_cap_reports_nonconvergence(dw):
    with pytest.raises(NonConvergence):
        ssbe_implicit_point(dw, [3.0], 0.5, ImplicitSolverOptions(max_iterations=1))


def test_singular_newton_matrix():
    unstable = SdeSystem.from_expressions("growth", ["x"], ["x"], [[1.0]])
    with pytest.raises(SingularNewtonMatrix):
        ssbe_step(unstable, [1.0], [0.0], 1.0)


def test_solver_options_validation():
    with pytest.raises(ValueError):
        ImplicitSolverOptions(tolerance=0.0)
    with pytest.raises(ValueError):
        ImplicitSolverOptions(max_iterations=0)


def test_invalid_step_size(dw):
    with pytest.raises(ValueError):
        em_step(dw, [0.0], [0.0], 0.0)


@pytest.mark.parametrize("kind", list(SchemeKind))
def test_flow_map_reproduces_step(kind, lorenz, rng):
    for _ in range(10):
        x = rng.normal(0, 5, 3)
        db = rng.normal(0, 0.03, 2)
        delta = 1e-3
        fm = flow_map(kind, lorenz, x, db, delta)
        np.testing.assert_allclose(x + delta * fm, step(kind, lorenz, x, db, delta),
                                   rtol=1e-14, atol=1e-14 * np.abs(x).max())


def test_flow_map_closed_forms(ou, free):
    x, db, delta = 0.6, 0.05, 0.2
    assert flow_map("ssbe", ou, [x], [db], delta)[0] == pytest.approx(
        -x / (1 + delta) + db / delta, rel=1e-12)
    assert flow_map("hrk4", free, [x], [db], delta)[0] == pytest.approx(
        2 * 0.7 * db / delta, rel=1e-12)
    assert flow_map("em", ou, [x], [db], delta)[0] == pytest.approx(-x + db / delta, rel=1e-12)


def _fine_ssbe_reference(x0, dW, h):
    """Vectorized fine-step SSBE for the double well (Newton on the scalar cubic)."""
    x = x0.copy()
    s2 = math.sqrt(2.0)
    for j in range(dW.shape[1]):
        y = x.copy()
        for _ in range(50):
            g = y - x - h * (-2.0 * (y ** 3 - y))
            dg = 1.0 + h * 2.0 * (3 * y ** 2 - 1)
            y -= g / dg
        x = y + s2 * dW[:, j]
    return x


@pytest.mark.parametrize("kind", ["em", "ssbe"])
def test_global_strong_order_one(kind, dw):
    """RMS error at T=1 against a fine SSBE path driven by the same Brownian path."""
    rng = np.random.default_rng(7)
    K, fine = 200, 128 * 64
    x0 = rng.uniform(-1.2, 1.2, K)
    dW = rng.normal(0, math.sqrt(1.0 / fine), (K, fine))
    ref = _fine_ssbe_reference(x0, dW, 1.0 / fine)
    deltas, errs = [], []
    for n in (16, 32, 64, 128):
        blocks = dW.reshape(K, n, fine // n).sum(axis=2)
        end = np.empty(K)
        for i in range(K):
            x = np.array([x0[i]])
            for j in range(n):
                x = step(kind, dw, x, blocks[i, j:j + 1], 1.0 / n)
            end[i] = x[0]
        deltas.append(1.0 / n)
        errs.append(math.sqrt(np.mean((end - ref) ** 2)))
    slope = np.polyfit(np.log(deltas), np.log(errs), 1)[0]
    assert 0.8 <= slope <= 1.2, (slope, errs)
