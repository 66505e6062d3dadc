"""scikit-learn style wrappers around the small-ball pipeline.

``SmallBallProbabilityEstimator`` simulates ``p(eps, T)`` for the epsilon
values it is fitted on; ``SmallBallExponentRegressor`` fits
``log(-log p) = c - theta log eps`` to observed probabilities.
"""
import math

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import FitError
from .rng import RngSpec
from .smallball import (SimulationConfig, estimate_small_ball, fit_exponent, scaled_config,
                        splitting_small_ball, synthetic_results, theta_bracket)


class SmallBallProbabilityEstimator(BaseEstimator):
    """Estimate ``P(sup |u| <= eps)`` over ``[0, T]`` for a set of eps values.

    Parameters
    ----------
    gamma : float
    T : float
    trials : int
        Trials (direct) or total particles (splitting) per epsilon.
    method : {"splitting", "direct"}
    points_per_cell, steps_per_cell : int
        Lattice resolution per natural cell when ``dx`` is None.
    dx, dt, modes : optional
        Fixed lattice shared by every epsilon (overrides the scaled lattice).
    replicates : int
        Independent splitting runs.
    seed : int
    """

    def __init__(self, gamma=0.5, T=1.0, trials=20_000, method="splitting", points_per_cell=4,
                 steps_per_cell=8, dx=None, dt=None, modes=None, replicates=8, seed=0):
        self.gamma = gamma
        self.T = T
        self.trials = trials
        self.method = method
        self.points_per_cell = points_per_cell
        self.steps_per_cell = steps_per_cell
        self.dx = dx
        self.dt = dt
        self.modes = modes
        self.replicates = replicates
        self.seed = seed

    def _config(self, eps):
        if self.dx is not None:
            return SimulationConfig(self.gamma, self.dx, self.dt if self.dt is not None else 1e-3,
                                    self.modes)
        return scaled_config(eps, self.gamma, self.points_per_cell, self.steps_per_cell)

    def fit(self, X, y=None):
        """Run the simulation at every epsilon in ``X`` (shape ``(n, 1)``)."""
        X = check_array(X, ensure_2d=True)
        if X.shape[1] != 1:
            raise ValueError("X must have a single column of epsilon values")
        eps = X[:, 0]
        base = RngSpec(int(self.seed))
        results = []
        for i, e in enumerate(eps):
            cfg = self._config(e)
            rng = base.substream(i)
            if self.method == "splitting":
                results.append(splitting_small_ball(e, [self.T], self.trials, cfg, rng,
                                                    self.replicates)[0])
            elif self.method == "direct":
                results.append(estimate_small_ball(e, self.T, self.trials, cfg, rng))
            else:
                raise ValueError(f"unknown method {self.method!r}")
        self.results_ = results
        self.epsilons_ = eps
        self.log_p_ = np.array([r.log_p_hat for r in results])
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        """Estimated ``p`` at fitted epsilon values (NaN elsewhere)."""
        return np.exp(self.predict_log(X))

    def predict_log(self, X):
        check_is_fitted(self, "results_")
        X = check_array(X)
        out = np.full(X.shape[0], np.nan)
        for i, e in enumerate(X[:, 0]):
            hit = np.flatnonzero(np.isclose(self.epsilons_, e))
            if hit.size:
                out[i] = self.log_p_[hit[0]]
        return out

    def exponent(self):
        """Fitted :class:`ExponentFit` over the simulated epsilon values."""
        check_is_fitted(self, "results_")
        return fit_exponent(self.results_, self.gamma)


class SmallBallExponentRegressor(RegressorMixin, BaseEstimator):
    """Fit ``log(-log p) = c - theta log eps``.

    ``X`` holds epsilon values (one column) and ``y`` the probabilities.
    ``predict`` returns ``p``.  ``score`` is the R^2 of ``log(-log p)``.

    Parameters
    ----------
    gamma : float
        Used for the exponent bracket only.
    rel_se : float
        Relative error assumed for every probability (equal weights).
    """

    def __init__(self, gamma=0.5, rel_se=1e-3):
        self.gamma = gamma
        self.rel_se = rel_se

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        if np.any((y <= 0) | (y >= 1)):
            raise FitError("probabilities must lie strictly between 0 and 1")
        eps = X[:, 0]
        res = synthetic_results(eps, np.log(y), rel_se=self.rel_se)
        self.fit_ = fit_exponent(res, self.gamma)
        self.theta_ = self.fit_.theta_hat
        self.intercept_ = self.fit_.intercept
        self.bracket_ = theta_bracket(self.gamma)
        self.n_features_in_ = 1
        return self

    def _loglog(self, X):
        check_is_fitted(self, "fit_")
        X = check_array(X)
        return self.intercept_ - self.theta_ * np.log(X[:, 0])

    def predict(self, X):
        return np.exp(-np.exp(self._loglog(X)))

    def score(self, X, y, sample_weight=None):
        from sklearn.metrics import r2_score

        target = np.log(-np.log(np.asarray(y, dtype=float)))
        return r2_score(target, self._loglog(X), sample_weight=sample_weight)


def exponent_from_table(epsilons, probabilities, gamma=0.5):
    """Convenience: fitted theta and stderr from plain arrays."""
    reg = SmallBallExponentRegressor(gamma).fit(np.reshape(epsilons, (-1, 1)), probabilities)
    return reg.theta_, reg.fit_.stderr if math.isfinite(reg.fit_.stderr) else math.nan
