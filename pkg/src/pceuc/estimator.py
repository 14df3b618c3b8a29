"""Estimator-style wrapper around the bilevel trainer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import pce
from .bilevel import TrainConfig, train
from .instances import UcInstance, resolve_instance


def check_instance(X) -> UcInstance:
    """Accept an instance object, a bundled name or a path to an instance file."""
    if isinstance(X, UcInstance):
        return X
    if isinstance(X, str):
        return resolve_instance(X)
    raise TypeError(f"expected a UcInstance or an instance name/path, got {type(X).__name__}")


def check_schedule(y, inst: UcInstance, binary: bool = False) -> np.ndarray:
    """Validate an ``N x T`` schedule for ``inst``; soft values must lie in [0, 1]."""
    arr = np.asarray(y, dtype=float)
    if arr.shape != inst.shape:
        raise ValueError(f"schedule has shape {arr.shape}, expected {inst.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0 or arr.max() > 1:
        raise ValueError("schedule entries must lie in [0, 1]")
    if binary and not np.all((arr == 0) | (arr == 1)):
        raise ValueError("schedule must be binary")
    return arr


class PCEUnitCommitment(BaseEstimator):
    """Variational unit-commitment solver with an estimator interface.

    ``fit`` trains on one instance; ``transform`` returns the final soft
    schedule and ``predict`` the post-processed binary schedule.

    Attributes
    ----------
    theta_ : ndarray
        Trained circuit parameters.
    soft_schedule_, schedule_, dispatch_ : ndarray
        Soft schedule, hardened schedule and its dispatch.
    cost_ : float
        Total cost of ``schedule_``.
    feasible_ : bool
        Whether ``schedule_`` passed the strict checker.
    history_ : list
        Per-step training records.
    """

    def __init__(self, ansatz="brickwork", layers=6, steps=200, k=2, alpha=None,
                 rho_bal=1e4, rho_ramp=1e3, lambda_res=100.0, lr=0.05, subset=16,
                 thresholds=pce.DEFAULT_THRESHOLDS, random_state=0):
        self.ansatz = ansatz
        self.layers = layers
        self.steps = steps
        self.k = k
        self.alpha = alpha
        self.rho_bal = rho_bal
        self.rho_ramp = rho_ramp
        self.lambda_res = lambda_res
        self.lr = lr
        self.subset = subset
        self.thresholds = thresholds
        self.random_state = random_state

    def _config(self):
        return TrainConfig(
            ansatz=self.ansatz, layers=self.layers, steps=self.steps, k=self.k,
            alpha=self.alpha, rho_bal=self.rho_bal, rho_ramp=self.rho_ramp,
            lambda_res=self.lambda_res, lr=self.lr, subset=self.subset,
            seed=self.random_state, thresholds=tuple(self.thresholds),
        )

    def fit(self, X, y=None):
        inst = check_instance(X)
        res = train(inst, self._config())
        self.instance_ = inst
        self.result_ = res
        self.theta_ = res.theta
        self.soft_schedule_ = res.soft
        self.schedule_ = res.y
        self.dispatch_ = res.p
        self.cost_ = res.cost
        self.feasible_ = res.feasible
        self.history_ = res.history
        self.n_qubits_ = res.n_qubits
        return self

    def _check_same(self, X):
        check_is_fitted(self, "schedule_")
        if X is not None and check_instance(X) != self.instance_:
            raise ValueError("estimator was fitted on a different instance")

    def transform(self, X=None):
        self._check_same(X)
        return self.soft_schedule_.copy()

    def predict(self, X=None):
        self._check_same(X)
        return self.schedule_.copy()
