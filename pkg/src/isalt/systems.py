"""SDE models ``dX = f(X) dt + sigma dB`` with additive noise.

Drift, Jacobian and potential are numba-compiled functions of a single state
vector; the compiled integrators receive them as first-class arguments.
"""

import enum
import functools
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from numba.core.registry import CPUDispatcher


class BenchmarkId(str, enum.Enum):
    DOUBLE_WELL_1D = "double-well-1d"
    GRADIENT_2D = "gradient-2d"
    LORENZ_3D = "lorenz-3d"


@dataclass(frozen=True, eq=False)
class SdeSystem:
    """An ergodic SDE with constant diffusion matrix.

    Parameters
    ----------
    name : str
    drift, drift_jacobian : numba dispatchers
        ``f(x) -> (d,)`` and ``grad f(x) -> (d, d)`` for a single state ``x``.
    diffusion : ndarray of shape (d, m)
        Constant noise matrix; columns must be linearly independent.
    potential : numba dispatcher, optional
        ``V(x) -> float`` with ``f = -grad V`` for gradient systems.
    beta : float
        Inverse temperature; the invariant density is ``exp(-beta V) / Z``.
    jacobian_is_fd : bool
        True when ``drift_jacobian`` is a finite-difference fallback.
    definition : dict, optional
        Serializable description (benchmark id or expressions) used to
        rebuild the system from scheme files and configs.
    """

    name: str
    drift: object
    drift_jacobian: object
    diffusion: np.ndarray
    potential: object = None
    beta: float = 1.0
    jacobian_is_fd: bool = False
    definition: dict = field(default=None, repr=False)
    default_x0: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if callable(self.diffusion):
            raise ValueError("diffusion must be a constant matrix (additive noise only)")
        sigma = np.array(self.diffusion, dtype=float, copy=True)
        if sigma.ndim != 2:
            raise ValueError(f"diffusion must be a (d, m) matrix, got shape {sigma.shape}")
        d, m = sigma.shape
        if m > d or m < 1:
            raise ValueError(f"need 1 <= m <= d, got d={d}, m={m}")
        if not np.all(np.isfinite(sigma)):
            raise ValueError("diffusion has non-finite entries")
        if np.linalg.matrix_rank(sigma) != m:
            raise ValueError("diffusion columns must be linearly independent")
        sigma.setflags(write=False)
        object.__setattr__(self, "diffusion", sigma)
        for attr in ("drift", "drift_jacobian"):
            if not isinstance(getattr(self, attr), CPUDispatcher):
                raise TypeError(f"{attr} must be a numba-compiled function")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        x0 = np.zeros(d) if self.default_x0 is None else np.asarray(self.default_x0, float)
        if x0.shape != (d,):
            raise ValueError("default_x0 must have shape (d,)")
        x0 = x0.copy()
        x0.setflags(write=False)
        object.__setattr__(self, "default_x0", x0)

    @property
    def d(self):
        return self.diffusion.shape[0]

    @property
    def m(self):
        return self.diffusion.shape[1]

    @classmethod
    def from_callables(cls, name, drift, diffusion, jacobian=None, potential=None,
                       beta=1.0, default_x0=None):
        """Build a system from plain Python functions of a 1-D state.

        The functions are compiled with numba. Without ``jacobian`` a
        central-difference Jacobian is used and ``jacobian_is_fd`` is set.
        """
        drift = _as_dispatcher(drift)
        fd = jacobian is None
        jac = _fd_jacobian(drift) if fd else _as_dispatcher(jacobian)
        pot = None if potential is None else _as_dispatcher(potential)
        return cls(name=name, drift=drift, drift_jacobian=jac, diffusion=diffusion,
                   potential=pot, beta=beta, jacobian_is_fd=fd, default_x0=default_x0)

    @classmethod
    def from_expressions(cls, name, variables, drift, diffusion, potential=None,
                         beta=1.0, default_x0=None):
        """Build a system from sympy-parsable expression strings.

        The Jacobian is derived symbolically, so no finite differences are
        involved.

        >>> ou = SdeSystem.from_expressions("ou", ["x"], ["-x"], [[1.0]])
        >>> float(ou.drift(np.array([2.0]))[0])
        -2.0
        """
        definition = {
            "name": name, "variables": list(variables), "drift": list(drift),
            "diffusion": np.asarray(diffusion, float).tolist(),
            "potential": potential, "beta": float(beta),
        }
        if default_x0 is not None:
            definition["default_x0"] = list(map(float, default_x0))
        f, jac, pot = _compile_expressions(tuple(variables), tuple(drift), potential)
        return cls(name=name, drift=f, drift_jacobian=jac, diffusion=diffusion,
                   potential=pot, beta=beta, definition=definition, default_x0=default_x0)

    @classmethod
    def from_definition(cls, definition):
        """Inverse of :attr:`definition` (benchmark id or expression dict)."""
        if isinstance(definition, str):
            return make_benchmark(definition)
        if "benchmark" in definition:
            return make_benchmark(definition["benchmark"])
        required = ("name", "variables", "drift", "diffusion")
        missing = [k for k in required if k not in definition]
        if missing:
            raise ValueError(f"system definition missing keys: {missing}")
        return cls.from_expressions(
            definition["name"], definition["variables"], definition["drift"],
            definition["diffusion"], potential=definition.get("potential"),
            beta=definition.get("beta", 1.0), default_x0=definition.get("default_x0"))


def _as_dispatcher(fn):
    return fn if isinstance(fn, CPUDispatcher) else njit(nogil=True)(fn)


def _fd_jacobian(drift):
    @njit(nogil=True)
    def jac(x):
        d = x.shape[0]
        out = np.empty((d, d))
        xp = x.copy()
        for j in range(d):
            h = 1e-6 * max(1.0, abs(x[j]))
            xp[j] = x[j] + h
            fp = drift(xp)
            xp[j] = x[j] - h
            fm = drift(xp)
            xp[j] = x[j]
            for i in range(d):
                out[i, j] = (fp[i] - fm[i]) / (2.0 * h)
        return out

    return jac


@functools.lru_cache(maxsize=None)
def _compile_expressions(variables, drift_exprs, potential_expr):
    import sympy
    from sympy.printing.pycode import pycode

    syms = sympy.symbols(variables, real=True)
    if not isinstance(syms, (tuple, list)):
        syms = (syms,)
    d = len(syms)
    if len(drift_exprs) != d:
        raise ValueError(f"drift has {len(drift_exprs)} components for {d} variables")
    local = {str(s): s for s in syms}
    f_exprs = [sympy.sympify(e, locals=local) for e in drift_exprs]
    j_exprs = [[sympy.diff(fe, s) for s in syms] for fe in f_exprs]
    placeholders = sympy.symbols([f"_x{i}" for i in range(d)], real=True)
    if not isinstance(placeholders, (tuple, list)):
        placeholders = (placeholders,)
    subs = dict(zip(syms, placeholders))

    def code(expr):
        return pycode(sympy.sympify(expr).xreplace(subs), fully_qualified_modules=True)

    head = "".join(f"    _x{i} = x[{i}]\n" for i in range(d))
    src = "def drift(x):\n" + head + f"    out = np.empty({d})\n"
    src += "".join(f"    out[{i}] = {code(e)}\n" for i, e in enumerate(f_exprs))
    src += "    return out\n"
    src += "def jac(x):\n" + head + f"    out = np.empty(({d}, {d}))\n"
    for i in range(d):
        for j in range(d):
            src += f"    out[{i}, {j}] = {code(j_exprs[i][j])}\n"
    src += "    return out\n"
    if potential_expr is not None:
        v_expr = sympy.sympify(potential_expr, locals=local)
        src += "def potential(x):\n" + head + f"    return float({code(v_expr)})\n"
    namespace = {"np": np, "math": math}
    exec(compile(src, f"<isalt-system {variables}>", "exec"), namespace)
    pot = None if potential_expr is None else njit(nogil=True)(namespace["potential"])
    return njit(nogil=True)(namespace["drift"]), njit(nogil=True)(namespace["jac"]), pot


# --- benchmark systems --------------------------------------------------------


def _double_well(mu, beta):
    @njit(nogil=True)
    def drift(x):
        out = np.empty(1)
        out[0] = -mu * x[0] * (x[0] * x[0] - 1.0)
        return out

    @njit(nogil=True)
    def jac(x):
        out = np.empty((1, 1))
        out[0, 0] = -mu * (3.0 * x[0] * x[0] - 1.0)
        return out

    @njit(nogil=True)
    def potential(x):
        return 0.25 * mu * (x[0] * x[0] - 1.0) ** 2

    return SdeSystem("double-well-1d", drift, jac, np.full((1, 1), math.sqrt(2.0 / beta)),
                     potential=potential, beta=beta,
                     definition={"benchmark": BenchmarkId.DOUBLE_WELL_1D.value},
                     default_x0=np.array([0.5]))


def _gradient_2d(mu1, mu2, beta):
    @njit(nogil=True)
    def drift(x):
        v = math.exp(0.5 * mu1 * x[0] * x[0] + 0.5 * mu2 * x[1] * x[1])
        out = np.empty(2)
        out[0] = -mu1 * x[0] * v
        out[1] = -mu2 * x[1] * v
        return out

    @njit(nogil=True)
    def jac(x):
        v = math.exp(0.5 * mu1 * x[0] * x[0] + 0.5 * mu2 * x[1] * x[1])
        out = np.empty((2, 2))
        out[0, 0] = -(mu1 + mu1 * mu1 * x[0] * x[0]) * v
        out[1, 1] = -(mu2 + mu2 * mu2 * x[1] * x[1]) * v
        out[0, 1] = -mu1 * mu2 * x[0] * x[1] * v
        out[1, 0] = out[0, 1]
        return out

    @njit(nogil=True)
    def potential(x):
        return math.exp(0.5 * mu1 * x[0] * x[0] + 0.5 * mu2 * x[1] * x[1])

    return SdeSystem("gradient-2d", drift, jac, math.sqrt(2.0 / beta) * np.eye(2),
                     potential=potential, beta=beta,
                     definition={"benchmark": BenchmarkId.GRADIENT_2D.value})


def _lorenz_3d(s, gamma, b, beta):
    @njit(nogil=True)
    def drift(x):
        out = np.empty(3)
        out[0] = s * (x[1] - x[0])
        out[1] = x[0] * (gamma - x[2]) - x[1]
        out[2] = x[0] * x[1] - b * x[2]
        return out

    @njit(nogil=True)
    def jac(x):
        out = np.empty((3, 3))
        out[0, 0] = -s
        out[0, 1] = s
        out[0, 2] = 0.0
        out[1, 0] = gamma - x[2]
        out[1, 1] = -1.0
        out[1, 2] = -x[0]
        out[2, 0] = x[1]
        out[2, 1] = x[0]
        out[2, 2] = -b
        return out

    c = math.sqrt(2.0 / beta)
    sigma = np.array([[c, 0.0], [0.0, c], [0.0, 0.0]])
    return SdeSystem("lorenz-3d", drift, jac, sigma, beta=beta,
                     definition={"benchmark": BenchmarkId.LORENZ_3D.value},
                     default_x0=np.array([1.0, 1.0, 25.0]))


def make_benchmark(id):
    """Return one of the three benchmark systems with its published parameters.

    Results are cached: systems are immutable and sharing them avoids
    recompiling the integrator kernels.
    """
    return _benchmark(BenchmarkId(id).value)


@functools.lru_cache(maxsize=None)
def _benchmark(id):
    bid = BenchmarkId(id)
    if bid is BenchmarkId.DOUBLE_WELL_1D:
        return _double_well(mu=2.0, beta=1.0)
    if bid is BenchmarkId.GRADIENT_2D:
        return _gradient_2d(mu1=0.1, mu2=1.0, beta=2.0)
    return _lorenz_3d(s=10.0, gamma=28.0, b=8.0 / 3.0, beta=1.0)


# --- vectorized Python-level evaluation ---------------------------------------


def _map_states(fn, x, d):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != d:
        raise ValueError(f"state has trailing dimension {x.shape[-1]}, expected {d}")
    flat = np.ascontiguousarray(x.reshape(-1, d))
    out = [fn(row) for row in flat]
    out = np.asarray(out, dtype=float)
    return out.reshape(x.shape[:-1] + out.shape[1:])


def drift(system, x):
    """Evaluate ``f`` on a state or a stack of states ``(..., d)``."""
    return _map_states(system.drift, x, system.d)


def drift_jacobian(system, x):
    return _map_states(system.drift_jacobian, x, system.d)


def potential(system, x):
    if system.potential is None:
        raise ValueError(f"{system.name} has no potential")
    return _map_states(system.potential, x, system.d)


def stationary_density_unnormalized(system, x):
    """``exp(-beta V(x))``; only defined for gradient systems."""
    if system.potential is None:
        raise ValueError(f"{system.name}: no analytic invariant density")
    return np.exp(-system.beta * potential(system, x))
