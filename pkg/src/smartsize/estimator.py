"""Weighted estimating equations for regimen mean trajectories.

Because the mean models are linear in ``gamma`` the estimating equations
have a closed-form weighted least squares solution for a fixed working
covariance.  :func:`fit` alternates that solve with moment estimates of the
working covariance until both settle, then forms the robust sandwich
covariance ``B^{-1} M B^{-1} / n``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.linalg as sla
from scipy import stats

from .covariance import (CorrelationStructure, Pooling, Structure, VarianceSpec, correlation_estimates,
                         pool_variances, regimen_variances, variance_table, working_covariance)
from .design import EmbeddedDtr, SmartDesign, enumerate_dtrs, weight_matrix
from .mean_model import ContrastVector, MeanModelSpec, design_matrix


class SingularFitError(np.linalg.LinAlgError):
    """The weighted Gram (or bread) matrix is not positive definite."""


@dataclass
class FitResult:
    theta_hat: np.ndarray
    variance: VarianceSpec
    correlation: dict
    covariance: np.ndarray
    bread: np.ndarray
    meat: np.ndarray
    n: int
    iterations: int
    converged: bool
    structure: Structure = Structure.EXCHANGEABLE
    spec: MeanModelSpec | None = field(default=None, repr=False)

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    @property
    def tau_hat(self):
        return self.variance, self.correlation


@dataclass(frozen=True)
class WaldResult:
    estimate: float
    std_error: float
    z: float
    p_value: float


class _Problem:
    """Weights, design matrices and outcomes laid out for vectorized sums."""

    def __init__(self, data, design: SmartDesign, spec: MeanModelSpec):
        if data.y.shape[1] != spec.T:
            raise ValueError(f"data have {data.y.shape[1]} timepoints but the model has {spec.T}")
        self.data, self.design, self.spec = data, design, spec
        self.dtrs = enumerate_dtrs(design)
        self.W = weight_matrix(design, self.dtrs, data.a1, data.r, data.a2)
        self.D = np.stack([design_matrix(spec, d) for d in self.dtrs])  # (K, T, p)
        self.Y = data.y
        self.wsum = self.W.sum(axis=0)
        self.wy = self.W.T @ self.Y  # (K, T)

    def precisions(self, V) -> np.ndarray:
        K, T = len(self.dtrs), self.spec.T
        if V is None:
            return np.broadcast_to(np.eye(T), (K, T, T))
        if isinstance(V, Mapping):
            mats = [np.asarray(V[d], dtype=float) for d in self.dtrs]
        else:
            mats = [np.asarray(V, dtype=float)] * K
        return np.stack([sla.cho_solve(sla.cho_factor(m), np.eye(T)) for m in mats])

    def _singular(self, what):
        missing = self.data.unobserved_sequences(self.design)
        hint = f"; unobserved treatment sequences (a1, r, a2): {missing}" if missing else ""
        return SingularFitError(f"{what}{hint}")

    def _chol(self, A, what):
        try:
            return sla.cho_factor(A)
        except np.linalg.LinAlgError:
            raise self._singular(f"{what} is not positive definite") from None

    def solve(self, P) -> np.ndarray:
        empty = [str(d) for d, w in zip(self.dtrs, self.wsum) if w <= 0]
        if empty:
            raise self._singular(f"no participant is consistent with regimen(s) {', '.join(empty)}")
        DtP = np.einsum("ktp,kts->kps", self.D, P)
        gram = np.einsum("k,kps,ksq->pq", self.wsum, DtP, self.D)
        rhs = np.einsum("kps,ks->p", DtP, self.wy)
        return sla.cho_solve(self._chol(gram, "weighted Gram matrix"), rhs)

    def residuals(self, theta) -> np.ndarray:
        return self.Y[None, :, :] - np.einsum("ktp,p->kt", self.D, theta)[:, None, :]

    def scores(self, theta, P) -> np.ndarray:
        """Per-subject estimating-function contributions, shape (n, p)."""
        E = self.residuals(theta)
        PD = np.einsum("kts,ksp->ktp", P, self.D)
        return np.einsum("nk,knt,ktp->np", self.W, E, PD)

    def bread(self, P) -> np.ndarray:
        n = self.data.n
        return np.einsum("k,ktp,kts,ksq->pq", self.wsum, self.D, P, self.D) / n


def solve_theta(data, design: SmartDesign, spec: MeanModelSpec, V=None) -> np.ndarray:
    """Solve the estimating equations for a fixed working covariance.

    ``V`` is None (identity), a single T x T matrix, or a mapping from
    regimen to matrix.
    """
    prob = _Problem(data, design, spec)
    return prob.solve(prob.precisions(V))


def estimating_function(data, design, spec, theta, V=None) -> np.ndarray:
    """Average estimating function at ``theta``; zero at the solution."""
    prob = _Problem(data, design, spec)
    return prob.scores(np.asarray(theta, float), prob.precisions(V)).mean(axis=0)


def _sandwich(prob: _Problem, theta, P):
    n = prob.data.n
    B = prob.bread(P)
    U = prob.scores(theta, P)
    M = U.T @ U / n
    try:
        Binv = sla.cho_solve(sla.cho_factor(B), np.eye(B.shape[0]))
    except np.linalg.LinAlgError:
        raise SingularFitError("bread matrix is not positive definite") from None
    cov = Binv @ M @ Binv / n
    return B, M, 0.5 * (cov + cov.T)


def sandwich(data, design: SmartDesign, spec: MeanModelSpec, theta, V=None):
    """Plug-in bread, meat and robust covariance of the estimates."""
    prob = _Problem(data, design, spec)
    return _sandwich(prob, np.asarray(theta, float), prob.precisions(V))


def _working(prob: _Problem, var: VarianceSpec, corr: Mapping) -> dict:
    T = prob.spec.T
    return {d: working_covariance(var, corr[d], d, T) for d in prob.dtrs}


def fit(data, design: SmartDesign, spec: MeanModelSpec, structure: Structure = Structure.EXCHANGEABLE,
        tol: float = 1e-8, max_iter: int = 100, pooling: Pooling = Pooling.ALL,
        common_rho: bool = True, start: tuple | None = None) -> FitResult:
    """Iterated fit of the mean parameters and working covariance.

    The first solve uses the identity working covariance, or
    ``start = (VarianceSpec, CorrelationStructure)`` when given.  Each
    further step re-estimates standard deviations and correlations from the
    current residuals and re-solves.  Iteration stops once the summed
    Euclidean change of (gamma, tau) is at most ``tol``.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    structure = Structure(structure)
    pooling = Pooling(pooling)
    prob = _Problem(data, design, spec)
    dtrs, T, p = prob.dtrs, spec.T, spec.n_params

    if start is None:
        P = prob.precisions(None)
    else:
        var0, corr0 = start
        P = prob.precisions(_working(prob, var0, {d: corr0 for d in dtrs}))
    theta = prob.solve(P)

    def update_tau(theta):
        E = prob.residuals(theta)
        v = pool_variances(variance_table(prob.W, E, p), pooling)
        if pooling is Pooling.ALL:
            var = VarianceSpec(float(np.sqrt(v[0, 0])), pooling)
        else:
            var = VarianceSpec({d: np.sqrt(v[k]) for k, d in enumerate(dtrs)}, pooling)
        corr = dict(zip(dtrs, correlation_estimates(structure, prob.W, E,
                                                    regimen_variances(var, dtrs, T), common_rho)))
        return var, corr

    def tau_vector(var, corr):
        return np.concatenate([var.params(dtrs, T)] + [corr[d].params() for d in dtrs])

    iterations, converged = 1, False
    if structure is Structure.IDENTITY:
        # the working covariance is fixed at I, so nothing is estimated
        var = VarianceSpec(1.0, pooling)
        corr = {d: CorrelationStructure(Structure.IDENTITY) for d in dtrs}
        converged = True
        P = prob.precisions(None)
    else:
        var, corr = update_tau(theta)
        tau = tau_vector(var, corr)
        while iterations < max_iter:
            P = prob.precisions(_working(prob, var, corr))
            theta_new = prob.solve(P)
            iterations += 1
            var_new, corr_new = update_tau(theta_new)
            tau_new = tau_vector(var_new, corr_new)
            step = np.linalg.norm(theta_new - theta) + np.linalg.norm(tau_new - tau)
            theta, var, corr, tau = theta_new, var_new, corr_new, tau_new
            if step <= tol:
                converged = True
                break
        P = prob.precisions(_working(prob, var, corr))

    B, M, cov = _sandwich(prob, theta, P)
    return FitResult(theta, var, corr, cov, B, M, data.n, iterations, converged, structure, spec)


def wald_test(result: FitResult, c) -> WaldResult:
    """Two-sided 1-df Wald test of c'gamma = 0 using the sandwich covariance."""
    cv = c.c if isinstance(c, ContrastVector) else np.asarray(c, dtype=float)
    if cv.shape != result.theta_hat.shape:
        raise ValueError(f"contrast has length {cv.size}, model has {result.theta_hat.size} parameters")
    est = float(cv @ result.theta_hat)
    var = float(cv @ result.covariance @ cv)
    if not var > 0:
        raise ZeroDivisionError("contrast has zero estimated variance")
    se = np.sqrt(var)
    z = est / se
    return WaldResult(est, se, z, float(2 * stats.norm.sf(abs(z))))
