"""Informed basis functions for the parametric flow maps.

Each family evaluates ``(x, phi1(x, xi), sigma xi / delta)`` (the first
entry only when ``include_c0``) where ``phi1`` is the drift ``f(x)`` (IS-EM),
the hybrid RK4 stage average (IS-RK4) or the linearized backward Euler drift
``(I - delta grad f(x))^{-1} f(x)`` (IS-SSBE).
"""

import enum
from dataclasses import dataclass

import numpy as np
from numba import njit

from ._linalg import COND_LIMIT, solve_with_cond
from .exceptions import SingularLinearization
from .integrators import hrk4_phi1_core, matvec


class Family(str, enum.Enum):
    IS_EM = "em"
    IS_RK4 = "rk4"
    IS_SSBE = "ssbe"

    @property
    def code(self):
        return _CODES[self]


_CODES = {Family.IS_EM: 0, Family.IS_RK4: 1, Family.IS_SSBE: 2}


@dataclass(frozen=True)
class BasisFamily:
    family: Family
    include_c0: bool
    delta: float
    system: object

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "include_c0", bool(self.include_c0))
        if not self.delta > 0:
            raise ValueError("delta must be positive")

    @property
    def n_basis(self):
        return 3 if self.include_c0 else 2

    @property
    def label(self):
        return f"is-{self.family.value}{'-c0' if self.include_c0 else ''}"

    def plain_coefficients(self):
        """Coefficients that turn the family back into its plain scheme."""
        return np.array([0.0, 1.0, 1.0] if self.include_c0 else [1.0, 1.0])


@njit(nogil=True)
def ssbe_phi1_core(drift, jac, x, delta):
    d = x.shape[0]
    a = -delta * jac(x)
    for i in range(d):
        a[i, i] += 1.0
    y, cond = solve_with_cond(a, drift(x))
    return y, cond <= COND_LIMIT


@njit(nogil=True)
def basis_core(code, drift, jac, sigma, x, xi, delta, include_c0, out):
    """Write the basis vectors at ``(x, xi)`` into ``out[(p+1), d]``; False if singular."""
    forcing = matvec(sigma, xi)
    ok = True
    if code == 0:
        phi1 = drift(x)
    elif code == 1:
        phi1 = hrk4_phi1_core(drift, x, forcing, delta)
    else:
        phi1, ok = ssbe_phi1_core(drift, jac, x, delta)
    j = 0
    if include_c0:
        out[0] = x
        j = 1
    out[j] = phi1
    out[j + 1] = forcing / delta
    return ok


@njit(nogil=True)
def basis_batch(code, drift, jac, sigma, X, XI, delta, include_c0, out):
    """Evaluate the basis at every row; return index of the first singular row or -1."""
    bad = -1
    for n in range(X.shape[0]):
        if not basis_core(code, drift, jac, sigma, X[n], XI[n], delta, include_c0, out[n]):
            if bad < 0:
                bad = n
    return bad


def eval_basis(fam, x, xi):
    """Basis vectors at one state, shape ``(p + 1, d)``.

    >>> from isalt.systems import make_benchmark
    >>> fam = BasisFamily("em", True, 0.1, make_benchmark("double-well-1d"))
    >>> eval_basis(fam, [0.5], [0.0]).ravel().tolist()
    [0.5, 0.75, 0.0]
    """
    system = fam.system
    x = np.asarray(x, dtype=float).reshape(system.d)
    xi = np.asarray(xi, dtype=float).reshape(system.m)
    out = np.empty((fam.n_basis, system.d))
    ok = basis_core(fam.family.code, system.drift, system.drift_jacobian,
                    np.ascontiguousarray(system.diffusion), x, xi, float(fam.delta),
                    fam.include_c0, out)
    if not ok:
        raise SingularLinearization(f"I - delta*grad f singular at x={x}")
    return out


def eval_basis_batch(fam, X, XI):
    """Basis at many samples: ``X (K, d)``, ``XI (K, m)`` -> ``(K, p + 1, d)``."""
    system = fam.system
    X = np.ascontiguousarray(X, dtype=float).reshape(-1, system.d)
    XI = np.ascontiguousarray(XI, dtype=float).reshape(-1, system.m)
    out = np.empty((X.shape[0], fam.n_basis, system.d))
    bad = basis_batch(fam.family.code, system.drift, system.drift_jacobian,
                      np.ascontiguousarray(system.diffusion), X, XI, float(fam.delta),
                      fam.include_c0, out)
    if bad >= 0:
        raise SingularLinearization(f"I - delta*grad f singular at sample {bad}")
    return out


def phi1_ssbe(system, x, delta):
    """``(I - delta grad f(x))^{-1} f(x)`` by a pivoted dense solve."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    y, ok = ssbe_phi1_core(system.drift, system.drift_jacobian,
                           np.asarray(x, dtype=float).reshape(system.d), float(delta))
    if not ok:
        raise SingularLinearization(f"I - delta*grad f singular at x={x}")
    return y
