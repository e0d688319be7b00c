"""Working covariance matrices and weighted moment estimators for them.

A working covariance is ``S^{1/2} R S^{1/2}`` with ``S^{1/2}`` the diagonal
of standard deviations and ``R`` a working correlation matrix.  Variances are
estimated by a weighted residual mean square with a ``-p`` degrees-of-freedom
correction; correlations by weighted residual cross-products divided by
``sigma^2 * n * (number of pairs)``.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .design import EmbeddedDtr, SmartDesign, enumerate_dtrs, weight_matrix
from .mean_model import MeanModelSpec, design_matrix

PD_MARGIN = 1e-6


class Structure(str, enum.Enum):
    IDENTITY = "identity"
    EXCHANGEABLE = "exchangeable"
    AR1 = "ar1"
    UNSTRUCTURED = "unstructured"


class Pooling(str, enum.Enum):
    ALL = "all"
    OVER_TIME = "time"
    OVER_DTR = "dtr"
    NONE = "none"


class CovarianceError(ValueError):
    """A covariance or correlation that is not positive definite."""


@dataclass(frozen=True)
class CorrelationStructure:
    """Working correlation. ``rho`` is a scalar, or a T x T matrix when unstructured."""

    kind: Structure
    rho: float | np.ndarray = 0.0
    clamped: bool = field(default=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", Structure(self.kind))
        if self.kind is Structure.UNSTRUCTURED:
            m = np.array(self.rho, dtype=float)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise CovarianceError("unstructured correlation must be a square matrix")
            if not np.allclose(m, m.T) or not np.allclose(np.diag(m), 1.0):
                raise CovarianceError("unstructured correlation must be symmetric with unit diagonal")
            object.__setattr__(self, "rho", m)
        elif self.kind is Structure.IDENTITY:
            object.__setattr__(self, "rho", 0.0)
        else:
            rho = float(self.rho)
            if self.kind is Structure.AR1 and not -1.0 < rho < 1.0:
                raise CovarianceError(f"AR(1) correlation must lie in (-1, 1), got {rho}")
            object.__setattr__(self, "rho", rho)

    def matrix(self, T: int) -> np.ndarray:
        k = self.kind
        if k is Structure.IDENTITY:
            return np.eye(T)
        if k is Structure.EXCHANGEABLE:
            if T > 1 and not -1.0 / (T - 1) < self.rho < 1.0:
                raise CovarianceError(f"exchangeable correlation {self.rho} is outside (-1/(T-1), 1) for T={T}")
            return (1 - self.rho) * np.eye(T) + self.rho * np.ones((T, T))
        if k is Structure.AR1:
            idx = np.arange(T)
            return self.rho ** np.abs(idx[:, None] - idx[None, :])
        if self.rho.shape != (T, T):
            raise CovarianceError(f"unstructured correlation is {self.rho.shape}, expected {(T, T)}")
        if np.linalg.eigvalsh(self.rho)[0] <= 0:
            raise CovarianceError("unstructured correlation matrix is not positive definite")
        return self.rho.copy()

    def params(self) -> np.ndarray:
        if self.kind is Structure.UNSTRUCTURED:
            return self.rho[np.triu_indices(self.rho.shape[0], 1)]
        if self.kind is Structure.IDENTITY:
            return np.zeros(0)
        return np.array([self.rho])


@dataclass(frozen=True)
class VarianceSpec:
    """Standard deviations for the working covariance.

    ``sigma`` is a positive scalar (pooled over everything) or a mapping from
    regimen to a length-T vector of standard deviations.
    """

    sigma: float | Mapping[EmbeddedDtr, np.ndarray] = 1.0
    pooling: Pooling = Pooling.ALL

    def __post_init__(self):
        object.__setattr__(self, "pooling", Pooling(self.pooling))
        if isinstance(self.sigma, Mapping):
            table = {EmbeddedDtr(*d): np.asarray(v, dtype=float) for d, v in self.sigma.items()}
            if any(np.any(v <= 0) for v in table.values()):
                raise CovarianceError("standard deviations must be positive")
            object.__setattr__(self, "sigma", table)
        elif not float(self.sigma) > 0:
            raise CovarianceError(f"standard deviation must be positive, got {self.sigma}")

    def sd(self, d: EmbeddedDtr, T: int) -> np.ndarray:
        if isinstance(self.sigma, dict):
            v = self.sigma[EmbeddedDtr(*d)]
            if v.shape != (T,):
                raise CovarianceError(f"sd vector for {d} has shape {v.shape}, expected {(T,)}")
            return v
        return np.full(T, float(self.sigma))

    def params(self, dtrs: Sequence[EmbeddedDtr], T: int) -> np.ndarray:
        return np.concatenate([self.sd(d, T) for d in dtrs])


def working_covariance(var: VarianceSpec, corr: CorrelationStructure, d: EmbeddedDtr, T: int) -> np.ndarray:
    """V = S^{1/2} R S^{1/2}; raises CovarianceError if the result is not PD."""
    s = var.sd(d, T)
    V = s[:, None] * corr.matrix(T) * s[None, :]
    V = 0.5 * (V + V.T)
    if T and np.linalg.eigvalsh(V)[0] <= 0:
        raise CovarianceError(f"working covariance for {d} is not positive definite")
    return V


# -- vectorized kernels ------------------------------------------------------
# W: (n, K) weights; E: (K, n, T) residuals for each regimen.

def variance_table(W: np.ndarray, E: np.ndarray, p: int) -> np.ndarray:
    """Weighted residual mean squares per (regimen, time), shape (K, T)."""
    num = np.einsum("nk,knt->kt", W, E ** 2)
    den = W.sum(axis=0) - p
    if np.any(den <= 0):
        raise CovarianceError("sum of weights does not exceed the number of mean parameters")
    return num / den[:, None]


def pool_variances(var_kt: np.ndarray, pooling: Pooling) -> np.ndarray:
    """Average variances as requested; returns an array broadcastable to (K, T)."""
    pooling = Pooling(pooling)
    if pooling is Pooling.ALL:
        return np.full_like(var_kt, var_kt.mean())
    if pooling is Pooling.OVER_TIME:
        return np.repeat(var_kt.mean(axis=1, keepdims=True), var_kt.shape[1], axis=1)
    if pooling is Pooling.OVER_DTR:
        return np.repeat(var_kt.mean(axis=0, keepdims=True), var_kt.shape[0], axis=0)
    return var_kt.copy()


def _pair_sums(kind: Structure, W, E):
    """Weighted cross-product sums per regimen, and the number of pairs per subject."""
    T = E.shape[2]
    if kind is Structure.EXCHANGEABLE:
        tot = E.sum(axis=2)
        cross = 0.5 * (tot ** 2 - (E ** 2).sum(axis=2))
        return np.einsum("nk,kn->k", W, cross), T * (T - 1) / 2
    if kind is Structure.AR1:
        cross = (E[:, :, :-1] * E[:, :, 1:]).sum(axis=2)
        return np.einsum("nk,kn->k", W, cross), T - 1
    # unstructured: full weighted cross-product matrix per regimen
    return np.einsum("nk,kns,knt->kst", W, E, E), 1


def correlation_estimates(kind: Structure, W: np.ndarray, E: np.ndarray, sigma2_k: np.ndarray,
                          common: bool = True) -> list[CorrelationStructure]:
    """Moment estimates of the working correlation, one per regimen.

    ``sigma2_k`` holds one variance per regimen.  With ``common=True`` the
    per-regimen estimates are averaged.  Estimates outside the positive
    definite region are pulled back to its boundary and flagged.
    """
    kind = Structure(kind)
    K, n, T = E.shape
    if kind is Structure.IDENTITY:
        return [CorrelationStructure(kind)] * K
    if np.any(sigma2_k <= 0):
        raise CovarianceError("variance estimate is not positive")
    num, npairs = _pair_sums(kind, W, E)
    if kind is Structure.UNSTRUCTURED:
        est = num / (sigma2_k[:, None, None] * n)
        if common:
            est = np.repeat(est.mean(axis=0, keepdims=True), K, axis=0)
        out = []
        for m in est:
            m = 0.5 * (m + m.T)
            np.fill_diagonal(m, 1.0)
            out.append(_project_unstructured(m))
        return out
    est = num / (sigma2_k * n * npairs)
    if common:
        est = np.full(K, est.mean())
    lo = -1.0 / (T - 1) if kind is Structure.EXCHANGEABLE else -1.0
    out = []
    for v in est:
        clipped = float(np.clip(v, lo + PD_MARGIN, 1.0 - PD_MARGIN))
        out.append(CorrelationStructure(kind, clipped, clamped=clipped != v))
    return out


def _project_unstructured(m: np.ndarray) -> CorrelationStructure:
    w, U = np.linalg.eigh(m)
    if w[0] > PD_MARGIN:
        return CorrelationStructure(Structure.UNSTRUCTURED, m)
    w = np.maximum(w, PD_MARGIN)
    m2 = (U * w) @ U.T
    d = np.sqrt(np.diag(m2))
    m2 = m2 / np.outer(d, d)
    np.fill_diagonal(m2, 1.0)
    return CorrelationStructure(Structure.UNSTRUCTURED, 0.5 * (m2 + m2.T), clamped=True)


# -- dataset-level wrappers --------------------------------------------------

def residual_stack(data, spec: MeanModelSpec, theta, dtrs) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return np.stack([data.y - design_matrix(spec, d) @ theta for d in dtrs])


def estimate_sigma(data, design: SmartDesign, spec: MeanModelSpec, theta, d: EmbeddedDtr, t) -> float:
    """Weighted residual standard deviation for regimen ``d`` at time ``t``.

    The weighted residual sum of squares is divided by (sum of weights - p).
    """
    d = EmbeddedDtr(*d)
    j = spec.timepoints.index(float(t))
    W = weight_matrix(design, [d], data.a1, data.r, data.a2)
    E = residual_stack(data, spec, theta, [d])
    return float(np.sqrt(variance_table(W, E, spec.n_params)[0, j]))


def estimate_variance_spec(data, design: SmartDesign, spec: MeanModelSpec, theta,
                           pooling: Pooling = Pooling.ALL) -> VarianceSpec:
    dtrs = enumerate_dtrs(design)
    W = weight_matrix(design, dtrs, data.a1, data.r, data.a2)
    E = residual_stack(data, spec, theta, dtrs)
    v = pool_variances(variance_table(W, E, spec.n_params), pooling)
    if Pooling(pooling) is Pooling.ALL:
        return VarianceSpec(float(np.sqrt(v[0, 0])), pooling)
    return VarianceSpec({d: np.sqrt(v[k]) for k, d in enumerate(dtrs)}, pooling)


def regimen_variances(var: VarianceSpec, dtrs, T: int) -> np.ndarray:
    """One variance per regimen (time-averaged) for correlation denominators."""
    return np.array([np.mean(var.sd(d, T) ** 2) for d in dtrs])


def estimate_rho(kind: Structure, data, design: SmartDesign, spec: MeanModelSpec, theta,
                 sigma: VarianceSpec, common: bool = True) -> dict[EmbeddedDtr, CorrelationStructure]:
    """Fitted working correlation per regimen."""
    dtrs = enumerate_dtrs(design)
    W = weight_matrix(design, dtrs, data.a1, data.r, data.a2)
    E = residual_stack(data, spec, theta, dtrs)
    fits = correlation_estimates(kind, W, E, regimen_variances(sigma, dtrs, spec.T), common)
    if any(f.clamped for f in fits):
        warnings.warn("correlation estimate fell outside the positive definite region and was clamped",
                      RuntimeWarning, stacklevel=2)
    return dict(zip(dtrs, fits))
