"""Simulation of inferred (and plain) schemes at the coarse step ``delta``.

The inferred update is

    X_{n+1} = X_n + delta * sum_i c_i phi_i(X_n, xi_n) + delta * sigma_eta * eta_n

with ``xi_n ~ N(0, delta I_m)`` and ``eta_n ~ N(0, I_d)`` drawn from two
disjoint substreams of the member's stream, so switching ``sigma_eta`` off
leaves the ``xi`` sequence untouched.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .basis import basis_core
from .datagen import TrajectoryDataset
from .inference import InferredScheme
from .integrators import OK, ImplicitSolverOptions, matvec, ssbe_solve_core
from .rng import ETA_STREAM, XI_STREAM, stream, worker_count

_CHUNK_STEPS = 1 << 15


@dataclass(frozen=True)
class PlainSsbeScheme:
    """The implicit SSBE scheme run directly at ``delta`` (Newton failure counts as blow-up)."""

    system: object
    delta: float
    solver: ImplicitSolverOptions = ImplicitSolverOptions()
    label: str = "plain-ssbe"


@dataclass(frozen=True)
class SimConfig:
    scheme: object
    x0: np.ndarray
    steps: int
    seed: int
    blowup_threshold: float = 1e10
    record_every: int = 1
    M: int = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")


@dataclass(eq=False)
class SimulationResult:
    """Recorded paths; rows after a member's blow-up are NaN.

    ``paths[:, i]`` sits at time ``i * record_every * delta``.
    """

    paths: np.ndarray
    dB: np.ndarray
    blown_up: np.ndarray
    blowup_step: np.ndarray
    delta: float
    record_every: int
    system_name: str
    seed: int

    @property
    def times(self):
        return np.arange(self.paths.shape[1]) * self.record_every * self.delta

    @property
    def any_blown_up(self):
        return bool(np.any(self.blown_up))

    def to_dataset(self, allow_blown=False):
        """Export as a trajectory dataset (``dt = delta``, ``gap = record_every``).

        Blown-up members carry NaN after their blow-up step, so exporting
        them needs ``allow_blown``.
        """
        if self.any_blown_up and not allow_blown:
            raise ValueError("cannot export blown-up trajectories")
        return TrajectoryDataset(self.paths, self.dB, self.delta, self.record_every,
                                 self.system_name, self.seed)


@njit(nogil=True)
def _inferred_chunk(code, drift, jac, sigma, coef, sig_eta, delta, include_c0, x, xi, eta,
                    record_every, threshold, alive, out, dB_out):
    B, S, m = xi.shape
    d = x.shape[1]
    P = coef.shape[1]
    phi = np.empty((P, d))
    where = np.full(B, -1, dtype=np.int64)
    for b in range(B):
        if not alive[b]:
            continue
        xb = x[b].copy()
        acc = np.zeros(m)
        for s in range(S):
            ok = basis_core(code, drift, jac, sigma, xb, xi[b, s], delta, include_c0, phi)
            forcing = matvec(sigma, xi[b, s])
            big = 0.0
            for k in range(d):
                fk = 0.0
                for i in range(P - 1):
                    fk += coef[k, i] * phi[i, k]
                # delta * c * (sigma xi / delta) is applied as c * sigma xi so that the
                # plain coefficients reproduce the plain scheme's arithmetic exactly
                xb[k] = (xb[k] + delta * fk + coef[k, P - 1] * forcing[k]
                         + delta * sig_eta[k] * eta[b, s, k])
                big = max(big, abs(xb[k]))
            for i in range(m):
                acc[i] += xi[b, s, i]
            if not ok or not big <= threshold:
                alive[b] = False
                where[b] = s
                break
            if (s + 1) % record_every == 0:
                r = (s + 1) // record_every - 1
                out[b, r] = xb
                dB_out[b, r] = acc
                acc[:] = 0.0
        x[b] = xb
    return where


@njit(nogil=True)
def _ssbe_chunk(drift, jac, sigma, delta, tol, max_iter, x, xi, record_every, threshold,
                alive, out, dB_out):
    B, S, m = xi.shape
    d = x.shape[1]
    where = np.full(B, -1, dtype=np.int64)
    for b in range(B):
        if not alive[b]:
            continue
        xb = x[b].copy()
        acc = np.zeros(m)
        for s in range(S):
            xs, st, _ = ssbe_solve_core(drift, jac, xb, delta, tol, max_iter)
            xb = xs + matvec(sigma, xi[b, s])
            big = 0.0
            for k in range(d):
                big = max(big, abs(xb[k]))
            for i in range(m):
                acc[i] += xi[b, s, i]
            if st != OK or not big <= threshold:
                alive[b] = False
                where[b] = s
                break
            if (s + 1) % record_every == 0:
                r = (s + 1) // record_every - 1
                out[b, r] = xb
                dB_out[b, r] = acc
                acc[:] = 0.0
        x[b] = xb
    return where


def step_inferred(scheme, x, xi, eta):
    """One inferred-scheme step from ``x`` with increments ``xi`` (m,) and ``eta`` (d,)."""
    from .basis import eval_basis

    x = np.asarray(x, dtype=float).reshape(scheme.system.d)
    eta = np.asarray(eta, dtype=float).reshape(scheme.system.d)
    phi = eval_basis(scheme.basis, x, xi)
    forcing = scheme.system.diffusion @ np.asarray(xi, dtype=float).reshape(scheme.system.m)
    F = np.einsum("ki,ik->k", scheme.coef[:, :-1], phi[:-1])
    return (x + scheme.delta * F + scheme.coef[:, -1] * forcing
            + scheme.delta * scheme.sigma_eta * eta)


def _initial_states(cfg, system):
    x0 = np.asarray(cfg.x0, dtype=float)
    if x0.ndim == 1:
        M = 1 if cfg.M is None else int(cfg.M)
        x0 = np.tile(x0.reshape(system.d), (M, 1))
    elif cfg.M is not None and x0.shape[0] != cfg.M:
        raise ValueError("x0 rows do not match M")
    if x0.shape[1:] != (system.d,):
        raise ValueError(f"x0 must have trailing dimension {system.d}")
    return np.ascontiguousarray(x0)


def simulate(cfg, n_jobs=None):
    """Run every member for ``cfg.steps`` steps, stopping members that blow up.

    Member ``i`` uses the streams ``(seed, i, 0)`` for ``xi`` and
    ``(seed, i, 1)`` for ``eta``. Blow-up means a non-finite value, a
    max-norm above ``blowup_threshold``, or a failed implicit solve.
    """
    scheme = cfg.scheme
    inferred = isinstance(scheme, InferredScheme)
    if not inferred and not isinstance(scheme, PlainSsbeScheme):
        raise TypeError(f"cannot simulate {type(scheme).__name__}")
    system = scheme.system
    delta = float(scheme.delta)
    x0 = _initial_states(cfg, system)
    M, d, m = x0.shape[0], system.d, system.m
    re = int(cfg.record_every)
    n_rec = cfg.steps // re
    paths = np.full((M, n_rec + 1, d), np.nan)
    dB = np.full((M, n_rec, m), np.nan)
    paths[:, 0] = x0
    blowup_step = np.full(M, -1, dtype=np.int64)
    sigma = np.ascontiguousarray(system.diffusion)
    if inferred:
        coef = np.ascontiguousarray(scheme.coef)
        sig_eta = np.ascontiguousarray(scheme.sigma_eta)
    chunk = max(re, (_CHUNK_STEPS // re) * re)
    sqd = math.sqrt(delta)

    def work(rows):
        gxi = [stream(cfg.seed, i, XI_STREAM) for i in rows]
        geta = [stream(cfg.seed, i, ETA_STREAM) for i in rows] if inferred else None
        x = x0[rows].copy()
        alive = np.ones(len(rows), dtype=np.bool_)
        for c0 in range(0, n_rec * re, chunk):
            c = min(chunk, n_rec * re - c0)
            xi = np.stack([g.standard_normal((c, m)) for g in gxi]) * sqd
            out = np.full((len(rows), c // re, d), np.nan)
            dbo = np.full((len(rows), c // re, m), np.nan)
            was_alive = alive.copy()
            if inferred:
                eta = np.stack([g.standard_normal((c, d)) for g in geta])
                where = _inferred_chunk(scheme.family.code, system.drift, system.drift_jacobian,
                                        sigma, coef, sig_eta, delta, scheme.include_c0, x, xi,
                                        eta, re, cfg.blowup_threshold, alive, out, dbo)
            else:
                opts = scheme.solver
                where = _ssbe_chunk(system.drift, system.drift_jacobian, sigma, delta,
                                    opts.tolerance, opts.max_iterations, x, xi, re,
                                    cfg.blowup_threshold, alive, out, dbo)
            died = was_alive & ~alive
            blowup_step[rows[died]] = c0 + where[died] + 1
            r0 = c0 // re
            paths[rows, r0 + 1:r0 + 1 + c // re] = out
            dB[rows, r0:r0 + c // re] = dbo
            if not alive.any():
                break

    blocks = [b for b in np.array_split(np.arange(M), worker_count(n_jobs)) if b.size]
    if len(blocks) <= 1:
        for rows in blocks:
            work(rows)
    else:
        with ThreadPoolExecutor(len(blocks)) as pool:
            for fut in [pool.submit(work, rows) for rows in blocks]:
                fut.result()
    return SimulationResult(paths, dB, blowup_step >= 0, blowup_step, delta, re,
                            system.name, int(cfg.seed))


__all__ = ["PlainSsbeScheme", "SimConfig", "SimulationResult", "simulate", "step_inferred"]
