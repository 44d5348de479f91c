"""Reference data from the split-step backward Euler scheme at a fine step.

Trajectories are advanced at ``dt`` and recorded every ``gap`` fine steps; the
Brownian increments over each recording interval are accumulated on the fly,
so the fine Brownian path is never stored (it can be replayed from the seed).
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .exceptions import BlowUp
from .integrators import (
    MAX_ITER, NONFINITE, OK, SINGULAR, ImplicitSolverOptions, matvec, ssbe_solve_core)
from .rng import stream, worker_count

logger = logging.getLogger(__name__)

THRESHOLD = 4
_REASONS = {MAX_ITER: "newton-nonconvergence", SINGULAR: "singular-newton-matrix",
            NONFINITE: "non-finite", THRESHOLD: "threshold"}
_CHUNK_FINE_STEPS = 1 << 16


@dataclass(eq=False)
class TrajectoryDataset:
    """``M`` trajectories sampled every ``delta = gap * dt``.

    Attributes
    ----------
    X : ndarray of shape (M, N + 1, d)
        States at ``t_i = i * delta``.
    dB : ndarray of shape (M, N, m)
        Brownian increments ``B(t_{n+1}) - B(t_n)`` (not multiplied by sigma).
    """

    X: np.ndarray
    dB: np.ndarray
    dt: float
    gap: int
    system_name: str
    seed: int = 0

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=float)
        self.dB = np.ascontiguousarray(self.dB, dtype=float)
        if self.X.ndim != 3 or self.dB.ndim != 3:
            raise ValueError("X must be (M, N+1, d) and dB must be (M, N, m)")
        M, n1, _ = self.X.shape
        if self.dB.shape[:2] != (M, n1 - 1):
            raise ValueError(f"dB shape {self.dB.shape} inconsistent with X shape {self.X.shape}")
        if n1 < 2:
            raise ValueError("need at least one observed increment per trajectory")
        if not self.dt > 0 or int(self.gap) < 1:
            raise ValueError("dt must be positive and gap >= 1")
        self.gap = int(self.gap)
        self.dt = float(self.dt)
        self.seed = int(self.seed)

    @property
    def delta(self):
        return self.gap * self.dt

    @property
    def M(self):
        return self.X.shape[0]

    @property
    def N(self):
        return self.X.shape[1] - 1

    @property
    def d(self):
        return self.X.shape[2]

    @property
    def m(self):
        return self.dB.shape[2]

    def subset(self, M=None, N=None, start=0):
        """Trajectories ``start:start+M`` truncated to their first ``N`` increments."""
        M = self.M - start if M is None else int(M)
        N = self.N if N is None else int(N)
        if not (1 <= M and start + M <= self.M and 1 <= N <= self.N):
            raise ValueError(f"subset ({start}+{M}, {N}) outside dataset ({self.M}, {self.N})")
        return TrajectoryDataset(self.X[start:start + M, :N + 1], self.dB[start:start + M, :N],
                                 self.dt, self.gap, self.system_name, self.seed)

    def coarsen(self, k):
        """Every ``k``-th state with summed increments, i.e. the same paths at gap ``k * gap``."""
        k = int(k)
        if k < 1:
            raise ValueError("k must be >= 1")
        n = self.N // k
        if n < 1:
            raise ValueError(f"cannot coarsen {self.N} increments by {k}")
        X = self.X[:, :n * k + 1:k]
        dB = self.dB[:, :n * k].reshape(self.M, n, k, self.m).sum(axis=2)
        return TrajectoryDataset(X, dB, self.dt, self.gap * k, self.system_name, self.seed)

    def identical(self, other):
        return (self.dt == other.dt and self.gap == other.gap and self.seed == other.seed
                and self.system_name == other.system_name
                and np.array_equal(self.X, other.X) and np.array_equal(self.dB, other.dB))


@dataclass(eq=False)
class LongTrajectory:
    """One fine-step SSBE path ``X`` of shape ``(K + 1, d)`` and its increments ``dB``."""

    X: np.ndarray
    dt: float
    seed: int
    system_name: str
    dB: np.ndarray = field(default=None, repr=False)

    @property
    def steps(self):
        return self.X.shape[0] - 1

    def as_dataset(self):
        dB = self.dB if self.dB is not None else np.zeros((self.steps, 0))
        return TrajectoryDataset(self.X[None], dB[None], self.dt, 1, self.system_name, self.seed)


@dataclass(frozen=True)
class GenerationConfig:
    """Settings for :func:`generate_dataset`.

    ``total_steps`` counts fine steps per trajectory and must be a multiple
    of ``gap``; the dataset then has ``N = total_steps // gap`` increments.
    """

    system: object
    dt: float
    total_steps: int
    gap: int
    M: int
    seed: int
    burn_in_steps: int = None
    blowup_threshold: float = 1e10
    solver: ImplicitSolverOptions = ImplicitSolverOptions()

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.gap < 1 or self.total_steps < self.gap:
            raise ValueError("need gap >= 1 and total_steps >= gap")
        if self.total_steps % self.gap:
            raise ValueError(f"total_steps={self.total_steps} not divisible by gap={self.gap}")
        if self.M < 0:
            raise ValueError("M must be non-negative")
        if self.burn_in_steps is None:
            object.__setattr__(self, "burn_in_steps", self.total_steps // 10)
        if not 0 <= self.burn_in_steps < self.total_steps:
            raise ValueError("burn_in_steps must be in [0, total_steps)")

    @property
    def delta(self):
        return self.gap * self.dt

    @property
    def N(self):
        return self.total_steps // self.gap


@njit(nogil=True)
def _advance(drift, jac, sigma, x, inc, dt, gap, tol, max_iter, threshold, X_out, dB_out):
    """Advance each row of ``x`` through ``inc.shape[1] // gap`` recordings.

    Returns per-row status and the fine-step index (within this chunk) of a failure.
    """
    B, n_rec, d = X_out.shape
    m = inc.shape[2]
    status = np.zeros(B, dtype=np.int64)
    where = np.full(B, -1, dtype=np.int64)
    for b in range(B):
        xb = x[b].copy()
        for r in range(n_rec):
            acc = np.zeros(m)
            for j in range(gap):
                k = r * gap + j
                xs, st, _ = ssbe_solve_core(drift, jac, xb, dt, tol, max_iter)
                if st != OK:
                    status[b] = st
                    where[b] = k
                    break
                xb = xs + matvec(sigma, inc[b, k])
                for i in range(m):
                    acc[i] += inc[b, k, i]
                big = 0.0
                for i in range(d):
                    big = max(big, abs(xb[i]))
                if not big <= threshold:
                    status[b] = NONFINITE if not np.isfinite(big) else THRESHOLD
                    where[b] = k
                    break
            if status[b] != OK:
                break
            X_out[b, r] = xb
            dB_out[b, r] = acc
        x[b] = xb
    return status, where


def _run_block(system, x0, gens, dt, gap, n_rec, opts, threshold, X, dB, rows):
    """Fill ``X[rows, 1:]`` / ``dB[rows]`` by chunks; raise BlowUp on failure."""
    sigma = np.ascontiguousarray(system.diffusion)
    x = np.array(x0, dtype=float)
    chunk = max(1, _CHUNK_FINE_STEPS // gap)
    sqdt = math.sqrt(dt)
    for c0 in range(0, n_rec, chunk):
        c = min(chunk, n_rec - c0)
        inc = np.stack([g.standard_normal((c * gap, system.m)) for g in gens]) * sqdt
        Xc = np.empty((len(rows), c, system.d))
        dBc = np.empty((len(rows), c, system.m))
        status, where = _advance(system.drift, system.drift_jacobian, sigma, x, inc, dt, gap,
                                 opts.tolerance, opts.max_iterations, threshold, Xc, dBc)
        bad = np.flatnonzero(status)
        if bad.size:
            b = bad[0]
            raise BlowUp(step=int(c0 * gap + where[b] + 1), trajectory=int(rows[b]),
                         reason=_REASONS[int(status[b])])
        X[rows, c0 + 1:c0 + 1 + c] = Xc
        dB[rows, c0:c0 + c] = dBc


def generate_long_trajectory(system, x0, dt, steps, seed, opts=None, blowup_threshold=1e10):
    """Fine-step SSBE path of ``steps`` steps from ``x0``; deterministic in ``seed``.

    Raises :class:`BlowUp` if the Newton solve fails or the state leaves the
    threshold ball.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    opts = opts or ImplicitSolverOptions()
    x0 = np.asarray(x0, dtype=float).reshape(system.d)
    X = np.empty((1, steps + 1, system.d))
    dB = np.empty((1, steps, system.m))
    X[0, 0] = x0
    _run_block(system, x0[None], [stream(seed)], float(dt), 1, steps, opts,
               blowup_threshold, X, dB, np.array([0]))
    return LongTrajectory(X[0], float(dt), int(seed), system.name, dB[0])


def sample_initial_conditions(long, M, burn_in_steps, seed):
    """Draw ``M`` states (with replacement) from ``long.X`` after the burn-in."""
    if not 0 <= burn_in_steps < long.steps:
        raise ValueError("burn_in_steps must be smaller than the trajectory length")
    if M == 0:
        return np.empty((0, long.X.shape[1]))
    idx = stream(seed).integers(burn_in_steps + 1, long.steps + 1, size=M)
    return long.X[idx].copy()


def generate_dataset(cfg, initials, n_jobs=None):
    """Run ``cfg.M`` SSBE trajectories from ``initials`` and downsample by ``cfg.gap``.

    Trajectory ``i`` draws its fine increments from the stream ``(seed, i)``,
    so the result is bit-identical for any ``n_jobs``. Any blow-up aborts the
    whole dataset: reference data must be clean.
    """
    system = cfg.system
    initials = np.asarray(initials, dtype=float)
    if initials.shape != (cfg.M, system.d):
        raise ValueError(f"initials must have shape ({cfg.M}, {system.d}), got {initials.shape}")
    if not np.all(np.isfinite(initials)):
        raise ValueError("initial conditions must be finite")
    n = cfg.N
    X = np.empty((cfg.M, n + 1, system.d))
    dB = np.empty((cfg.M, n, system.m))
    X[:, 0] = initials
    blocks = [b for b in np.array_split(np.arange(cfg.M), worker_count(n_jobs)) if b.size]

    def work(rows):
        gens = [stream(cfg.seed, i) for i in rows]
        _run_block(system, initials[rows], gens, cfg.dt, cfg.gap, n, cfg.solver,
                   cfg.blowup_threshold, X, dB, rows)

    if len(blocks) <= 1:
        for rows in blocks:
            work(rows)
    else:
        with ThreadPoolExecutor(len(blocks)) as pool:
            for fut in [pool.submit(work, rows) for rows in blocks]:
                fut.result()
    logger.debug("generated %d x %d samples at delta=%g", cfg.M, n, cfg.delta)
    return TrajectoryDataset(X, dB, cfg.dt, cfg.gap, system.name, cfg.seed)
