"""Estimator-style front end to the inference pipeline."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .basis import BasisFamily, eval_basis_batch
from .datagen import TrajectoryDataset
from .inference import accumulate_normal_equations, residual_mean_squares, solve_with_rank
from .inference import InferredScheme, residual_scale, trajectory_spread
from .simulate import SimConfig, simulate


def check_dataset(data, system, delta=None, dB=None):
    """Coerce ``data`` (a dataset, or states ``(M, N+1, d)`` with ``dB``) to a dataset."""
    if isinstance(data, TrajectoryDataset):
        if dB is not None:
            raise ValueError("pass dB only together with a raw state array")
        return data
    if dB is None or delta is None:
        raise ValueError("raw state arrays need both dB and delta")
    X = np.asarray(data, dtype=float)
    if X.ndim == 2:
        X = X[None]
    dB = np.asarray(dB, dtype=float)
    if dB.ndim == 2:
        dB = dB[None]
    for a in (X, dB):
        check_array(a.reshape(-1, a.shape[-1]), ensure_all_finite=True)
    return TrajectoryDataset(X, dB, float(delta), 1, system.name)


class ISALTRegressor(BaseEstimator):
    """Least-squares fit of an informed-basis flow map.

    Parameters
    ----------
    system : SdeSystem
        The SDE whose drift and diffusion define the basis.
    family : {"em", "rk4", "ssbe"}
        Numerical scheme supplying ``phi1``.
    include_c0 : bool
        Whether the identity term ``c0 * x`` is part of the basis.
    svd_cutoff : float
        Relative singular-value cutoff for the pseudo-inverse.

    Attributes
    ----------
    coef_ : ndarray of shape (d, p+1)
    sigma_eta_ : ndarray of shape (d,)
    coef_spread_ : ndarray of shape (d, p+1)
        RMS deviation of the single-trajectory estimates from ``coef_``.
    scheme_ : InferredScheme
    """

    def __init__(self, system=None, family="rk4", include_c0=False, svd_cutoff=1e-12):
        self.system = system
        self.family = family
        self.include_c0 = include_c0
        self.svd_cutoff = svd_cutoff

    def _basis(self, delta):
        if self.system is None:
            raise ValueError("system must be set")
        return BasisFamily(self.family, self.include_c0, delta, self.system)

    def fit(self, X, dB=None, delta=None):
        ds = check_dataset(X, self.system, delta, dB)
        fam = self._basis(ds.delta)
        ne = accumulate_normal_equations(ds, fam)
        coef, ranks = solve_with_rank(ne, self.svd_cutoff)
        self.coef_ = coef
        self.sigma_eta_ = residual_scale(ds, fam, coef)
        self.coef_spread_ = trajectory_spread(ne, coef, self.svd_cutoff)
        self.rank_ = ranks
        self.delta_ = ds.delta
        self.normal_equations_ = ne
        self.scheme_ = InferredScheme(fam.family, fam.include_c0, ds.delta, self.system, coef,
                                      self.sigma_eta_, gap=ds.gap, dt=ds.dt,
                                      provenance={"M": ds.M, "N": ds.N, "ranks": ranks})
        self.n_features_in_ = ds.d
        return self

    def predict(self, X, xi):
        """Conditional mean of the next state given ``X (K, d)`` and increments ``xi (K, m)``."""
        check_is_fitted(self, "coef_")
        X = check_array(X, ensure_all_finite=True)
        xi = check_array(xi, ensure_all_finite=True, ensure_min_features=1)
        if X.shape[0] != xi.shape[0]:
            raise ValueError("X and xi must have the same number of rows")
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        phi = eval_basis_batch(self.scheme_.basis, X, xi)
        return X + self.delta_ * np.einsum("ki,nik->nk", self.coef_, phi)

    def score(self, X, dB=None, delta=None):
        """Negative mean squared residual of ``(X_{n+1} - X_n) / delta`` (higher is better)."""
        check_is_fitted(self, "coef_")
        ds = check_dataset(X, self.system, delta if delta is not None else self.delta_, dB)
        return -float(np.mean(residual_mean_squares(ds, self._basis(ds.delta), self.coef_)))

    def sample(self, x0, n_steps, seed=0, M=None, record_every=1):
        """Simulate the fitted scheme; returns a :class:`SimulationResult`."""
        check_is_fitted(self, "coef_")
        return simulate(SimConfig(self.scheme_, np.asarray(x0, dtype=float), int(n_steps),
                                  int(seed), record_every=record_every, M=M))
