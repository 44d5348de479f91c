"""One-step maps of the Euler-Maruyama, hybrid RK4 and split-step backward
Euler schemes, and the flow maps ``(step(x) - x) / delta`` they induce.

The ``*_core`` functions are numba kernels on single states and are reused by
the data generator and the simulators; the public functions wrap them with
argument checking and turn status codes into exceptions.
"""

import enum
from dataclasses import dataclass

import numpy as np
from numba import njit

from ._linalg import COND_LIMIT, solve_with_cond
from .exceptions import NonConvergence, SingularNewtonMatrix

# status codes returned by ssbe_solve_core
OK = 0
MAX_ITER = 1
SINGULAR = 2
NONFINITE = 3


class SchemeKind(str, enum.Enum):
    EM = "em"
    HRK4 = "hrk4"
    SSBE = "ssbe"


@dataclass(frozen=True)
class ImplicitSolverOptions:
    """Newton-Raphson settings for the implicit SSBE drift step.

    ``tolerance`` bounds the 2-norm of the last Newton step.
    """

    tolerance: float = 1e-10
    max_iterations: int = 100
    method: str = "newton-raphson"

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.method != "newton-raphson":
            raise ValueError(f"unsupported implicit solver {self.method!r}")


@njit(nogil=True)
def matvec(a, v):
    n, k = a.shape
    out = np.zeros(n)
    for i in range(n):
        for j in range(k):
            out[i] += a[i, j] * v[j]
    return out


@njit(nogil=True)
def em_core(drift, x, forcing, delta):
    return x + drift(x) * delta + forcing


@njit(nogil=True)
def hrk4_phi1_core(drift, x, forcing, delta):
    g = forcing / delta
    k1 = drift(x) + g
    k2 = drift(x + k1 * (0.5 * delta)) + g
    k3 = drift(x + k2 * (0.5 * delta)) + g
    k4 = drift(x + k3 * delta) + g
    return (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0


@njit(nogil=True)
def hrk4_core(drift, x, forcing, delta):
    return x + hrk4_phi1_core(drift, x, forcing, delta) * delta + forcing


@njit(nogil=True)
def ssbe_solve_core(drift, jac, x, delta, tol, max_iter):
    """Solve ``X = x + delta f(X)`` by Newton from ``X = x``.

    Returns ``(X, status, iterations)``.
    """
    d = x.shape[0]
    xs = x.copy()
    for it in range(max_iter):
        rhs = x + delta * drift(xs) - xs
        m = -delta * jac(xs)
        for i in range(d):
            m[i, i] += 1.0
        step, cond = solve_with_cond(m, rhs)
        if not cond <= COND_LIMIT:
            return xs, SINGULAR, it + 1
        norm = 0.0
        for i in range(d):
            xs[i] += step[i]
            norm += step[i] * step[i]
        if not np.isfinite(norm) or not np.all(np.isfinite(xs)):
            return xs, NONFINITE, it + 1
        if np.sqrt(norm) <= tol:
            return xs, OK, it + 1
    return xs, MAX_ITER, max_iter


def _vec(x, n, what):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape != (n,):
        raise ValueError(f"{what} must have shape ({n},), got {x.shape}")
    return np.ascontiguousarray(x)


def _check_delta(delta):
    if not delta > 0:
        raise ValueError(f"time step must be positive, got {delta}")
    return float(delta)


def em_step(system, x, db, delta):
    """``x + f(x) delta + sigma db``."""
    delta = _check_delta(delta)
    x = _vec(x, system.d, "x")
    forcing = system.diffusion @ _vec(db, system.m, "db")
    return em_core(system.drift, x, forcing, delta)


def hrk4_phi1(system, x, forcing, delta):
    """Four-stage RK4 average with the constant forcing ``forcing / delta``
    added to every stage. ``forcing`` is already ``sigma @ db``."""
    delta = _check_delta(delta)
    return hrk4_phi1_core(system.drift, _vec(x, system.d, "x"),
                          _vec(forcing, system.d, "forcing"), delta)


def hrk4_step(system, x, db, delta):
    """``x + phi1(x, sigma db) delta + sigma db``.

    The increment enters both through ``phi1`` and explicitly, so with zero
    drift the step moves by ``2 sigma db``.
    """
    delta = _check_delta(delta)
    x = _vec(x, system.d, "x")
    forcing = system.diffusion @ _vec(db, system.m, "db")
    return hrk4_core(system.drift, x, forcing, delta)


def ssbe_implicit_point(system, x, delta, opts=None):
    """The implicit drift point ``X*`` with ``X* = x + delta f(X*)``."""
    opts = opts or ImplicitSolverOptions()
    delta = _check_delta(delta)
    xs, status, iters = ssbe_solve_core(system.drift, system.drift_jacobian,
                                        _vec(x, system.d, "x"), delta,
                                        opts.tolerance, opts.max_iterations)
    if status == SINGULAR:
        raise SingularNewtonMatrix(f"I - delta*grad f singular near x={x} (delta={delta})")
    if status != OK:
        raise NonConvergence(f"Newton failed after {iters} iterations (delta={delta})")
    return xs


def ssbe_step(system, x, db, delta, opts=None):
    """Split-step backward Euler: ``X* + sigma db``."""
    xs = ssbe_implicit_point(system, x, delta, opts)
    return xs + system.diffusion @ _vec(db, system.m, "db")


_STEPS = {
    SchemeKind.EM: lambda system, x, db, delta, opts: em_step(system, x, db, delta),
    SchemeKind.HRK4: lambda system, x, db, delta, opts: hrk4_step(system, x, db, delta),
    SchemeKind.SSBE: ssbe_step,
}


def step(kind, system, x, db, delta, opts=None):
    return _STEPS[SchemeKind(kind)](system, x, db, delta, opts)


def flow_map(kind, system, x, db, delta, opts=None):
    """Scaled one-step increment ``(step(x, db) - x) / delta``."""
    x = _vec(x, system.d, "x")
    return (step(kind, system, x, db, delta, opts) - x) / delta
