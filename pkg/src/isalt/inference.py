"""Least-squares estimation of the flow-map coefficients and residual scale.

For every coordinate ``k`` the normal matrix and vector

    A_k[i, j] = mean over (m, n) of phi_i^k phi_j^k
    b_k[i]    = mean over (m, n) of (X^k_{n+1} - X^k_n) / delta * phi_i^k

are accumulated per trajectory with compensated summation and combined with
``math.fsum``, so the result does not depend on how trajectories are batched.
"""

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .basis import BasisFamily, Family, basis_core
from .exceptions import SingularLinearization
from .systems import SdeSystem

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class NormalEquations:
    """Per-coordinate normal equations.

    ``A`` has shape ``(d, p+1, p+1)`` and ``b`` shape ``(d, p+1)``; the
    ``traj_*`` arrays hold the same quantities for each single trajectory.
    """

    A: np.ndarray
    b: np.ndarray
    sample_count: int
    traj_A: np.ndarray = field(repr=False)
    traj_b: np.ndarray = field(repr=False)


@njit(nogil=True)
def _accumulate(code, drift, jac, sigma, X, dB, delta, include_c0, P):
    M, n1, d = X.shape
    A = np.zeros((M, d, P, P))
    b = np.zeros((M, d, P))
    phi = np.empty((P, d))
    for mm in range(M):
        # Neumaier compensation terms
        cA = np.zeros((d, P, P))
        cb = np.zeros((d, P))
        for n in range(n1 - 1):
            if not basis_core(code, drift, jac, sigma, X[mm, n], dB[mm, n], delta,
                              include_c0, phi):
                return A, b, mm, n
            for k in range(d):
                y = (X[mm, n + 1, k] - X[mm, n, k]) / delta
                for i in range(P):
                    for j in range(P):
                        v = phi[i, k] * phi[j, k]
                        s = A[mm, k, i, j]
                        t = s + v
                        if abs(s) >= abs(v):
                            cA[k, i, j] += (s - t) + v
                        else:
                            cA[k, i, j] += (v - t) + s
                        A[mm, k, i, j] = t
                    v = y * phi[i, k]
                    s = b[mm, k, i]
                    t = s + v
                    if abs(s) >= abs(v):
                        cb[k, i] += (s - t) + v
                    else:
                        cb[k, i] += (v - t) + s
                    b[mm, k, i] = t
        A[mm] += cA
        b[mm] += cb
    return A, b, -1, -1


@njit(nogil=True)
def _residual_sums(code, drift, jac, sigma, X, dB, delta, include_c0, coef):
    M, n1, d = X.shape
    P = coef.shape[1]
    out = np.zeros((M, d))
    phi = np.empty((P, d))
    for mm in range(M):
        comp = np.zeros(d)
        for n in range(n1 - 1):
            if not basis_core(code, drift, jac, sigma, X[mm, n], dB[mm, n], delta,
                              include_c0, phi):
                return out, mm, n
            for k in range(d):
                fk = 0.0
                for i in range(P):
                    fk += coef[k, i] * phi[i, k]
                r = (X[mm, n + 1, k] - X[mm, n, k]) / delta - fk
                v = r * r
                s = out[mm, k]
                t = s + v
                if abs(s) >= abs(v):
                    comp[k] += (s - t) + v
                else:
                    comp[k] += (v - t) + s
                out[mm, k] = t
        out[mm] += comp
    return out, -1, -1


def _check_pair(dataset, fam):
    system = fam.system
    if (dataset.d, dataset.m) != (system.d, system.m):
        raise ValueError(f"dataset dims (d={dataset.d}, m={dataset.m}) do not match "
                         f"system {system.name} (d={system.d}, m={system.m})")
    if dataset.system_name != system.name:
        raise ValueError(f"dataset is for {dataset.system_name!r}, basis for {system.name!r}")
    if not math.isclose(dataset.delta, fam.delta, rel_tol=1e-12):
        raise ValueError(f"dataset delta {dataset.delta} != basis delta {fam.delta}")


def _kernel_args(fam):
    s = fam.system
    return (fam.family.code, s.drift, s.drift_jacobian, np.ascontiguousarray(s.diffusion))


def accumulate_normal_equations(dataset, fam):
    """Normal equations of the per-coordinate regression of ``dX / delta`` on the basis."""
    _check_pair(dataset, fam)
    P = fam.n_basis
    A, b, bad_m, bad_n = _accumulate(*_kernel_args(fam), dataset.X, dataset.dB,
                                     float(fam.delta), fam.include_c0, P)
    if bad_m >= 0:
        raise SingularLinearization(f"singular linearization at trajectory {bad_m}, step {bad_n}")
    M, N = dataset.M, dataset.N
    tot_A = np.array([[[math.fsum(A[:, k, i, j]) for j in range(P)] for i in range(P)]
                      for k in range(dataset.d)]) / (M * N)
    tot_b = np.array([[math.fsum(b[:, k, i]) for i in range(P)]
                      for k in range(dataset.d)]) / (M * N)
    # exact symmetry; the (i, j) and (j, i) sums are identical products anyway
    tot_A = 0.5 * (tot_A + np.swapaxes(tot_A, 1, 2))
    return NormalEquations(tot_A, tot_b, M * N, A / N, b / N)


def _pinv_solve(A, b, cutoff):
    """Minimum-norm solution of ``A c = b`` by thresholded SVD; returns ``(c, rank)``."""
    P = A.shape[0]
    c = np.zeros(P)
    live = np.flatnonzero(np.diag(A) != 0.0)
    if live.size == 0:
        return c, 0
    sub = A[np.ix_(live, live)]
    u, s, vt = np.linalg.svd(sub)
    keep = s > cutoff * s[0]
    if s[0] == 0 or not np.any(keep):
        return c, 0
    c[live] = vt[keep].T @ ((u[:, keep].T @ b[live]) / s[keep])
    return c, int(keep.sum())


def solve_with_rank(ne, svd_cutoff=1e-12):
    """Like :func:`solve` but also returns the numerical rank of each ``A_k``."""
    if not 0 < svd_cutoff < 1:
        raise ValueError("svd_cutoff must lie in (0, 1)")
    d, P = ne.b.shape
    coef = np.zeros((d, P))
    ranks = []
    for k in range(d):
        coef[k], r = _pinv_solve(ne.A[k], ne.b[k], svd_cutoff)
        ranks.append(r)
        if r < P:
            logger.info("coordinate %d: normal matrix has rank %d < %d; "
                        "using the minimum-norm solution", k, r, P)
    return coef, ranks


def solve(ne, svd_cutoff=1e-12):
    """Per-coordinate pseudo-inverse solution, shape ``(d, p+1)``."""
    return solve_with_rank(ne, svd_cutoff)[0]


def residual_mean_squares(dataset, fam, coef):
    """Per-coordinate mean of ``((X_{n+1} - X_n) / delta - F(coef; X_n, dB_n))**2``."""
    _check_pair(dataset, fam)
    coef = np.ascontiguousarray(coef, dtype=float)
    if coef.shape != (dataset.d, fam.n_basis):
        raise ValueError(f"coefficients must have shape ({dataset.d}, {fam.n_basis})")
    sums, bad_m, bad_n = _residual_sums(*_kernel_args(fam), dataset.X, dataset.dB,
                                        float(fam.delta), fam.include_c0, coef)
    if bad_m >= 0:
        raise SingularLinearization(f"singular linearization at trajectory {bad_m}, step {bad_n}")
    n = dataset.M * dataset.N
    return np.array([math.fsum(sums[:, k]) for k in range(dataset.d)]) / n


def residual_scale(dataset, fam, coef):
    """Residual noise scale: ``sqrt(sum |X_{n+1} - X_n - delta F|^2 / (delta^2 M N))``."""
    return np.sqrt(residual_mean_squares(dataset, fam, coef))


@dataclass(eq=False)
class InferredScheme:
    """Fitted coefficients ``coef[k, i]`` and residual scales for one ``(family, delta)``."""

    family: Family
    include_c0: bool
    delta: float
    system: SdeSystem
    coef: np.ndarray
    sigma_eta: np.ndarray
    gap: int = None
    dt: float = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.family = Family(self.family)
        self.coef = np.asarray(self.coef, dtype=float)
        self.sigma_eta = np.asarray(self.sigma_eta, dtype=float)
        P = 3 if self.include_c0 else 2
        if self.coef.shape != (self.system.d, P):
            raise ValueError(f"coef must have shape ({self.system.d}, {P}), got {self.coef.shape}")
        if self.sigma_eta.shape != (self.system.d,):
            raise ValueError("sigma_eta must have one entry per coordinate")
        if not np.all(np.isfinite(self.coef)):
            raise ValueError("coefficients must be finite")
        if np.any(self.sigma_eta < 0) or not np.all(np.isfinite(self.sigma_eta)):
            raise ValueError("sigma_eta must be finite and non-negative")

    @property
    def basis(self):
        return BasisFamily(self.family, self.include_c0, self.delta, self.system)

    @property
    def label(self):
        return self.basis.label

    def to_dict(self):
        return {
            "family": self.family.value, "include_c0": self.include_c0,
            "delta": self.delta, "gap": self.gap, "dt": self.dt,
            "system": self.system.definition or self.system.name,
            "coefficients": self.coef.tolist(), "sigma_eta": self.sigma_eta.tolist(),
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, doc, system=None):
        system = system or SdeSystem.from_definition(doc["system"])
        return cls(doc["family"], doc["include_c0"], doc["delta"], system,
                   np.array(doc["coefficients"]), np.array(doc["sigma_eta"]),
                   gap=doc.get("gap"), dt=doc.get("dt"), provenance=doc.get("provenance", {}))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path, system=None):
        with open(path) as fh:
            return cls.from_dict(json.load(fh), system)


def plain_scheme(family, include_c0, system, delta):
    """The plain explicit scheme written as an inferred scheme with zero residual noise."""
    fam = BasisFamily(family, include_c0, delta, system)
    if fam.family is Family.IS_SSBE:
        raise ValueError("SSBE is implicit and not a member of its parametric family")
    coef = np.tile(fam.plain_coefficients(), (system.d, 1))
    return InferredScheme(fam.family, include_c0, float(delta), system, coef,
                          np.zeros(system.d), provenance={"plain": True})


def infer(dataset, fam, svd_cutoff=1e-12, dataset_id=None):
    """Estimate coefficients and residual scales from ``dataset``."""
    ne = accumulate_normal_equations(dataset, fam)
    coef, ranks = solve_with_rank(ne, svd_cutoff)
    sigma = residual_scale(dataset, fam, coef)
    prov = {"M": dataset.M, "N": dataset.N, "samples": ne.sample_count,
            "dataset_seed": dataset.seed, "ranks": ranks, "svd_cutoff": svd_cutoff}
    if dataset_id is not None:
        prov["dataset"] = dataset_id
    return InferredScheme(fam.family, fam.include_c0, float(fam.delta), fam.system, coef,
                          sigma, gap=dataset.gap, dt=dataset.dt, provenance=prov)


def trajectory_spread(ne, coef, svd_cutoff=1e-12):
    """Root-mean-square deviation of single-trajectory estimates from ``coef``."""
    M, d, P = ne.traj_b.shape
    dev = np.zeros((d, P))
    for mm in range(M):
        for k in range(d):
            c, _ = _pinv_solve(ne.traj_A[mm, k], ne.traj_b[mm, k], svd_cutoff)
            dev[k] += (c - coef[k]) ** 2
    return np.sqrt(dev / M)


@dataclass
class ConvergenceReport:
    """Relative estimator error against ``reference`` as the sample size grows.

    ``rel_error[r]`` has shape ``(d, p+1)`` (per coefficient);
    ``total_error[r]`` is the Frobenius-norm relative error used for ``slope``.
    """

    sizes: np.ndarray
    shapes: list
    rel_error: np.ndarray
    total_error: np.ndarray
    slope: float
    reference: np.ndarray


def _log_slope(x, y):
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    ok = (x > 0) & (y > 0) & np.isfinite(y)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def convergence_study(dataset, fam, subset_grid, reference=None, svd_cutoff=1e-12,
                      replicate=False):
    """Estimator error on sub-datasets of shape ``(M', N')`` from ``subset_grid``.

    The reference defaults to the estimator from the whole dataset. With
    ``replicate`` every grid size is evaluated on all disjoint trajectory
    blocks of that size and the root-mean-square error is reported, which
    steadies the slope without changing its expectation.
    """
    grid = sorted((int(m), int(n)) for m, n in subset_grid)
    if len(grid) < 3:
        raise ValueError("convergence study needs at least 3 grid points")
    sizes = np.array([m * n for m, n in grid])
    if np.any(np.diff(sizes) <= 0):
        raise ValueError("grid sample sizes must be strictly increasing")
    if reference is None:
        reference = solve(accumulate_normal_equations(dataset, fam), svd_cutoff)
    reference = np.asarray(reference, float)
    scale = np.where(reference != 0, np.abs(reference), 1.0)
    rel, tot = [], []
    for m, n in grid:
        starts = range(0, dataset.M - m + 1, m) if replicate else [0]
        errs, totals = [], []
        for s in starts:
            c = solve(accumulate_normal_equations(dataset.subset(m, n, start=s), fam), svd_cutoff)
            errs.append((np.abs(c - reference) / scale) ** 2)
            totals.append(np.sum((c - reference) ** 2) / np.sum(reference ** 2))
        rel.append(np.sqrt(np.mean(errs, axis=0)))
        tot.append(math.sqrt(np.mean(totals)))
    return ConvergenceReport(sizes, grid, np.array(rel), np.array(tot),
                             _log_slope(sizes, tot), reference)


@dataclass
class ResidualOrderReport:
    deltas: np.ndarray
    sigma_eta: np.ndarray
    slopes: np.ndarray
    coefficients: np.ndarray


def residual_order_study(datasets, family, include_c0, system, svd_cutoff=1e-12):
    """Residual scale per gap and the fitted slope of ``log sigma_eta`` vs ``log delta``."""
    if len(datasets) < 3:
        raise ValueError("residual-order study needs at least 3 datasets")
    datasets = sorted(datasets, key=lambda ds: ds.delta)
    deltas = np.array([ds.delta for ds in datasets])
    if np.any(np.diff(deltas) <= 0):
        raise ValueError("dataset time steps must be distinct")
    sig, coefs = [], []
    for ds in datasets:
        sch = infer(ds, BasisFamily(family, include_c0, ds.delta, system), svd_cutoff)
        sig.append(sch.sigma_eta)
        coefs.append(sch.coef)
    sig = np.array(sig)
    slopes = np.array([_log_slope(deltas, sig[:, k]) for k in range(sig.shape[1])])
    return ResidualOrderReport(deltas, sig, slopes, np.array(coefs))
