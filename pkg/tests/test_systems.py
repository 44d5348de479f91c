import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isalt.systems import (BenchmarkId, SdeSystem, drift, drift_jacobian, make_benchmark,
                           potential, stationary_density_unnormalized)

finite = st.floats(-3, 3, allow_nan=False)


def fd_jacobian(system, x, h=1e-6):
    d = system.d
    J = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        J[:, j] = (drift(system, x + e) - drift(system, x - e)) / (2 * h)
    return J


def fd_gradient(system, x, h=1e-6):
    g = np.empty(system.d)
    for j in range(system.d):
        e = np.zeros(system.d)
        e[j] = h
        g[j] = (potential(system, x + e) - potential(system, x - e)) / (2 * h)
    return g


def test_benchmark_shapes(dw, grad2d, lorenz):
    assert (dw.d, dw.m) == (1, 1)
    assert (grad2d.d, grad2d.m) == (2, 2)
    assert (lorenz.d, lorenz.m) == (3, 2)
    assert dw.diffusion[0, 0] == pytest.approx(math.sqrt(2.0))
    np.testing.assert_allclose(grad2d.diffusion, np.eye(2))
    assert lorenz.diffusion[0, 0] == pytest.approx(math.sqrt(2.0))
    assert lorenz.diffusion[1, 1] == pytest.approx(math.sqrt(2.0))


def test_lorenz_noise_is_degenerate(lorenz):
    assert np.all(lorenz.diffusion[2] == 0.0)
    assert np.linalg.matrix_rank(lorenz.diffusion) == 2


def test_benchmark_ids_resolve_to_same_system():
    assert make_benchmark("double-well-1d") is make_benchmark(BenchmarkId.DOUBLE_WELL_1D)
    with pytest.raises(ValueError):
        make_benchmark("triple-well")


def test_drift_examples(dw, grad2d, lorenz):
    assert drift(dw, [0.0])[0] == 0.0
    assert drift(dw, [0.5])[0] == pytest.approx(0.75, abs=1e-15)
    np.testing.assert_array_equal(drift(lorenz, [0.0, 0.0, 0.0]), 0.0)
    np.testing.assert_allclose(drift(lorenz, [1.0, 1.0, 1.0]), [0.0, 26.0, 1 - 8 / 3],
                               rtol=0, atol=1e-14)
    np.testing.assert_array_equal(drift(grad2d, [0.0, 0.0]), 0.0)


@given(finite)
def test_double_well_drift_is_odd(x):
    dw = make_benchmark("double-well-1d")
    assert drift(dw, [-x])[0] == -drift(dw, [x])[0]


@pytest.mark.parametrize("name", ["double-well-1d", "gradient-2d"])
def test_drift_is_minus_grad_potential(name, rng):
    system = make_benchmark(name)
    for _ in range(100):
        x = rng.normal(0, 0.8, system.d)
        np.testing.assert_allclose(drift(system, x), -fd_gradient(system, x),
                                   rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("name", ["double-well-1d", "gradient-2d", "lorenz-3d"])
def test_jacobian_matches_finite_differences(name, rng):
    system = make_benchmark(name)
    scale = 5.0 if name == "lorenz-3d" else 0.8
    for _ in range(50):
        x = rng.normal(0, scale, system.d)
        J = drift_jacobian(system, x)
        np.testing.assert_allclose(J, fd_jacobian(system, x), rtol=1e-6,
                                   atol=1e-6 * max(1.0, np.abs(J).max()))


@settings(max_examples=50)
@given(st.tuples(finite, finite))
def test_gradient_jacobian_is_symmetric(x):
    J = drift_jacobian(make_benchmark("gradient-2d"), np.array(x))
    assert abs(J[0, 1] - J[1, 0]) <= 1e-10 * max(1.0, abs(J).max())


def test_stationary_density(dw, lorenz):
    assert stationary_density_unnormalized(dw, [1.0])[()] == pytest.approx(1.0)
    assert stationary_density_unnormalized(dw, [-1.0])[()] == pytest.approx(1.0)
    assert stationary_density_unnormalized(dw, [0.0])[()] == pytest.approx(math.exp(-0.5))
    with pytest.raises(ValueError, match="no analytic invariant density"):
        stationary_density_unnormalized(lorenz, [0.0, 0.0, 0.0])


def test_vectorized_evaluation(dw):
    xs = np.array([[0.0], [0.5], [-0.5]])
    np.testing.assert_allclose(drift(dw, xs)[:, 0], [0.0, 0.75, -0.75])


def test_rejects_state_dependent_diffusion():
    with pytest.raises((TypeError, ValueError)):
        SdeSystem.from_callables("bad", lambda x: -x, lambda x: x)


def test_rejects_rank_deficient_diffusion():
    with pytest.raises(ValueError):
        SdeSystem.from_expressions("bad", ["x", "y"], ["-x", "-y"], [[1.0, 2.0], [2.0, 4.0]])


def test_rejects_non_positive_beta():
    with pytest.raises(ValueError):
        SdeSystem.from_expressions("bad", ["x"], ["-x"], [[1.0]], beta=0.0)


def test_finite_difference_jacobian_is_flagged():
    s = SdeSystem.from_callables("cubic", lambda x: -x ** 3, np.array([[1.0]]))
    assert s.jacobian_is_fd
    assert drift_jacobian(s, [2.0])[0, 0] == pytest.approx(-12.0, rel=1e-6)


def test_expression_system_roundtrips_through_definition():
    s = SdeSystem.from_expressions("lin", ["x", "y"], ["-x + y", "-2*y"], [[1.0], [0.0]])
    s2 = SdeSystem.from_definition(s.definition)
    x = np.array([0.3, -1.2])
    np.testing.assert_array_equal(drift(s, x), drift(s2, x))
    np.testing.assert_array_equal(drift_jacobian(s2, x), [[-1.0, 1.0], [0.0, -2.0]])
    assert SdeSystem.from_definition("lorenz-3d") is make_benchmark("lorenz-3d")


def test_systems_are_immutable(dw):
    with pytest.raises(ValueError):
        dw.diffusion[0, 0] = 3.0
    with pytest.raises(AttributeError):
        dw.beta = 2.0
