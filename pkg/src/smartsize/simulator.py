"""Generative model for simulated SMART data with a known marginal structure.

Data are drawn conditional on response.  Conditional means add a response
offset ``(t - t*) (R - r_{a1}) (lambda1 + lambda2 a1)`` after the second
randomization, and conditional covariances for non-responders are solved
from the responder values (laws of total variance and covariance) so that
mixing over response reproduces each regimen's marginal mean and
covariance.  Only three measurement occasions with the second
randomization after the second one are supported.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from typing import Mapping

import numpy as np
from scipy import special

from .data import TrialDataset
from .design import Design, EmbeddedDtr, SmartDesign, enumerate_dtrs
from .mean_model import MeanModelSpec, design_matrix, mean_trajectory

TOL = 1e-10


class InfeasibleSpecError(ValueError):
    """Generative parameters with no valid conditional distribution."""


def responder_arms(design: SmartDesign) -> list[tuple[int, int]]:
    """Keys (a1, a2) of responder cells; a2 is 0 unless responders are re-randomized."""
    if design.kind is Design.I:
        return [(a1, a2) for a1 in (1, -1) for a2 in (1, -1)]
    return [(1, 0), (-1, 0)]


def _arm_key(text) -> tuple[int, int]:
    if isinstance(text, str):
        a, b = (int(v) for v in text.split(","))
        return a, b
    return tuple(int(v) for v in text)


@dataclass(frozen=True)
class GenerativeSpec:
    """Parameters of the simulation model.

    ``responder_sd`` maps a responder arm ``(a1, a2)`` to the end-of-study
    conditional standard deviation; ``responder_rho`` to the conditional
    correlations of the end-of-study outcome with the two earlier outcomes.
    Missing entries default to the marginal values.  ``truth`` selects the
    marginal correlation structure (``exchangeable`` or ``ar1``).
    """

    design: SmartDesign
    mean: MeanModelSpec
    r_plus: float
    r_minus: float
    sigma: float = 1.0
    rho: float = 0.0
    lambda1: float = 0.0
    lambda2: float = 0.0
    responder_sd: Mapping = field(default_factory=dict)
    responder_rho: Mapping = field(default_factory=dict)
    truth: str = "exchangeable"
    notes: Mapping = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.mean.design != self.design:
            raise InfeasibleSpecError("mean model and generative spec refer to different designs")
        if self.mean.T != 3 or self.mean.t_star != self.mean.timepoints[1]:
            raise InfeasibleSpecError("the generative model needs three timepoints with t_star at the second")
        if self.truth not in ("exchangeable", "ar1"):
            raise InfeasibleSpecError(f"unknown marginal structure {self.truth!r}")
        arms = responder_arms(self.design)
        sd = {a: float(self.sigma) for a in arms}
        sd.update({_arm_key(k): float(v) for k, v in dict(self.responder_sd).items()})
        R = marginal_corr_matrix(self.truth, self.rho)
        rr = {a: (float(R[0, 2]), float(R[1, 2])) for a in arms}
        for k, v in dict(self.responder_rho).items():
            v = np.atleast_1d(np.asarray(v, dtype=float))
            rr[_arm_key(k)] = (float(v[0]), float(v[-1]))
        if set(sd) != set(arms) or set(rr) != set(arms):
            raise InfeasibleSpecError(f"responder arms must be a subset of {arms}")
        object.__setattr__(self, "responder_sd", sd)
        object.__setattr__(self, "responder_rho", rr)
        object.__setattr__(self, "notes", dict(self.notes))

    def rate(self, a1: int) -> float:
        return self.r_plus if a1 == 1 else self.r_minus

    @property
    def marginal_corr(self) -> np.ndarray:
        return marginal_corr_matrix(self.truth, self.rho)

    def to_dict(self) -> dict:
        return {
            "design": self.design.kind.value,
            "p1": self.design.p1,
            "p2": self.design.p2,
            "mean": {"timepoints": list(self.mean.timepoints), "t_star": self.mean.t_star,
                     "gamma": list(self.mean.gamma)},
            "r_plus": self.r_plus,
            "r_minus": self.r_minus,
            "sigma": self.sigma,
            "rho": self.rho,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "responder_sd": {f"{a},{b}": v for (a, b), v in self.responder_sd.items()},
            "responder_rho": {f"{a},{b}": list(v) for (a, b), v in self.responder_rho.items()},
            "truth": self.truth,
            "notes": dict(self.notes),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "GenerativeSpec":
        allowed = {f.name for f in fields(cls)} | {"p1", "p2"}
        unknown = set(doc) - allowed
        if unknown:
            raise ValueError(f"unknown keys in generative spec: {sorted(unknown)}")
        doc = dict(doc)
        design = SmartDesign(doc.pop("design"), doc.pop("p1", 0.5), doc.pop("p2", 0.5))
        m = dict(doc.pop("mean"))
        extra = set(m) - {"timepoints", "t_star", "gamma"}
        if extra:
            raise ValueError(f"unknown keys in mean model: {sorted(extra)}")
        mean = MeanModelSpec(design, m["timepoints"], m["t_star"], m.get("gamma"))
        return cls(design=design, mean=mean, **doc)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GenerativeSpec":
        return cls.from_dict(json.loads(text))


def marginal_corr_matrix(truth: str, rho: float) -> np.ndarray:
    if truth == "ar1":
        idx = np.arange(3)
        return rho ** np.abs(idx[:, None] - idx[None, :]).astype(float)
    return (1 - rho) * np.eye(3) + rho * np.ones((3, 3))


# -- conditional means -------------------------------------------------------

def _mean_parts(spec: GenerativeSpec, a1: int):
    """Split regimen trajectories into first-stage base and stage-two parts."""
    base = mean_trajectory(spec.mean, (a1, 0, 0))
    resp = {b: mean_trajectory(spec.mean, (a1, b, 0)) - base for b in (1, 0, -1)}
    nonresp = {c: mean_trajectory(spec.mean, (a1, 0, c)) - base for c in (1, 0, -1)}
    return base, resp, nonresp


def conditional_mean_vector(spec: GenerativeSpec, a1: int, r: int, a2: int) -> np.ndarray:
    """Mean of Y given (A1, R, A2).

    Responders carry the regimen's responder-side second-stage effect scaled
    by ``1/r``, non-responders the non-responder-side effect scaled by
    ``1/(1-r)``, so that the response-weighted mixture equals the marginal
    regimen mean.  With no non-responder second-stage effect this is the
    regimen mean plus the response offset.
    """
    rate = spec.rate(a1)
    tp = np.asarray(spec.mean.timepoints)
    post = np.maximum(tp - spec.mean.t_star, 0.0)
    offset = post * (r - rate) * (spec.lambda1 + spec.lambda2 * a1)
    base, resp, nonresp = _mean_parts(spec, a1)
    if r == 1:
        part = resp[a2] / rate if (a2 != 0 and rate > 0) else 0.0
    else:
        part = nonresp[a2] / (1 - rate) if (a2 != 0 and rate < 1) else 0.0
    return base + part + offset


def conditional_mean(spec: GenerativeSpec, a1: int, r: int, a2: int, t) -> float:
    j = spec.mean.timepoints.index(float(t))
    return float(conditional_mean_vector(spec, a1, r, a2)[j])


# -- conditional covariances -------------------------------------------------

def _resp_arms_for(spec: GenerativeSpec, a1: int) -> list[tuple[int, int]]:
    return [a for a in responder_arms(spec.design) if a[0] == a1]


def _resp_cell(spec, arm):
    a1, a2 = arm
    return (a1, 1, a2)


def _gap(spec, arm, a1, a2) -> float:
    """End-of-study responder minus non-responder conditional mean."""
    return float(conditional_mean_vector(spec, *_resp_cell(spec, arm))[-1]
                 - conditional_mean_vector(spec, a1, 0, a2)[-1])


def nonresponder_sigma2(spec: GenerativeSpec, a1: int, a2: int) -> float:
    """End-of-study conditional variance of non-responders, by total variance.

    In design I the value is averaged over the two responder arms sharing the
    first-stage treatment.
    """
    r = spec.rate(a1)
    s2 = spec.sigma ** 2
    if r >= 1:
        return s2
    vals = [(s2 - r * spec.responder_sd[arm] ** 2) / (1 - r) - r * _gap(spec, arm, a1, a2) ** 2
            for arm in _resp_arms_for(spec, a1)]
    return float(np.mean(vals))


def nonresponder_rho(spec: GenerativeSpec, a1: int, a2: int) -> tuple[float, float]:
    """Conditional correlations of Y_end with (Y_0, Y_1) among non-responders."""
    r = spec.rate(a1)
    R = spec.marginal_corr
    if r >= 1:
        return float(R[0, 2]), float(R[1, 2])
    s2nr = nonresponder_sigma2(spec, a1, a2)
    if s2nr <= 0:
        raise InfeasibleSpecError(
            f"non-responder variance for (a1={a1}, a2={a2}) is {s2nr:.4g} <= 0")
    snr = np.sqrt(s2nr)
    out = []
    for j in (0, 1):
        vals = [(R[j, 2] * spec.sigma - r * spec.responder_rho[arm][j] * spec.responder_sd[arm])
                / ((1 - r) * snr) for arm in _resp_arms_for(spec, a1)]
        out.append(float(np.mean(vals)))
    return tuple(out)


def conditional_cov(spec: GenerativeSpec, a1: int, r: int, a2: int) -> np.ndarray:
    """Covariance of Y given (A1, R, A2)."""
    R = spec.marginal_corr
    s = spec.sigma
    if r == 1:
        arm = (a1, a2)
        sd2, rho2 = spec.responder_sd[arm], spec.responder_rho[arm]
    else:
        s2nr = nonresponder_sigma2(spec, a1, a2)
        if s2nr <= 0:
            raise InfeasibleSpecError(
                f"non-responder variance for (a1={a1}, a2={a2}) is {s2nr:.4g} <= 0")
        sd2, rho2 = np.sqrt(s2nr), nonresponder_rho(spec, a1, a2)
    S = np.empty((3, 3))
    S[:2, :2] = s * s * R[:2, :2]
    S[0, 2] = S[2, 0] = s * rho2[0] * sd2
    S[1, 2] = S[2, 1] = s * rho2[1] * sd2
    S[2, 2] = sd2 ** 2
    return S


def cells(design: SmartDesign) -> list[tuple[int, int, int]]:
    """Treatment sequences (a1, r, a2) with a conditional distribution."""
    return design.sequences()


def dtr_cells(design: SmartDesign, d: EmbeddedDtr):
    """(responder cell, non-responder cell) whose mixture forms regimen d."""
    a1, b, c = d
    resp = (a1, 1, b if design.rerandomized(a1, 1) else 0)
    nonresp = (a1, 0, c if design.rerandomized(a1, 0) else 0)
    return resp, nonresp


def implied_marginal(spec: GenerativeSpec, d: EmbeddedDtr) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of Y under regimen d, from mixing over response."""
    r = spec.rate(d[0])
    rc, nc = dtr_cells(spec.design, d)
    m1, m0 = conditional_mean_vector(spec, *rc), conditional_mean_vector(spec, *nc)
    S1 = conditional_cov(spec, *rc) if r > 0 else np.zeros((3, 3))
    S0 = conditional_cov(spec, *nc) if r < 1 else np.zeros((3, 3))
    mean = r * m1 + (1 - r) * m0
    gap = m1 - m0
    cov = r * S1 + (1 - r) * S0 + r * (1 - r) * np.outer(gap, gap)
    return mean, cov


def marginalization_error(spec: GenerativeSpec) -> float:
    """Largest deviation of implied regimen moments from their targets."""
    target = spec.sigma ** 2 * spec.marginal_corr
    worst = 0.0
    for d in enumerate_dtrs(spec.design):
        mean, cov = implied_marginal(spec, d)
        worst = max(worst, np.max(np.abs(mean - mean_trajectory(spec.mean, d))),
                    np.max(np.abs(cov - target)))
    return float(worst)


def validate(spec: GenerativeSpec) -> None:
    """Raise InfeasibleSpecError naming the first violated constraint."""
    if not spec.sigma > 0:
        raise InfeasibleSpecError("sigma must be positive")
    for name in ("r_plus", "r_minus"):
        v = getattr(spec, name)
        if not 0.0 <= v <= 1.0:
            raise InfeasibleSpecError(f"{name}={v} is not a probability")
    if np.linalg.eigvalsh(spec.marginal_corr)[0] <= 0:
        raise InfeasibleSpecError(f"marginal correlation rho={spec.rho} is not positive definite")
    for a1 in (1, -1):
        base, resp, nonresp = _mean_parts(spec, a1)
        r = spec.rate(a1)
        for d in enumerate_dtrs(spec.design):
            if d.a1 != a1:
                continue
            extra = mean_trajectory(spec.mean, d) - base - resp[d.a2R] - nonresp[d.a2NR]
            if np.max(np.abs(extra)) > TOL:
                raise InfeasibleSpecError(
                    f"regimen {d}: mean is not additive in the responder and non-responder "
                    "second-stage treatments, so no conditional model reproduces it")
        if r == 0 and any(np.max(np.abs(v)) > TOL for v in resp.values()):
            raise InfeasibleSpecError(f"r={r} for a1={a1} but responder second-stage effects are non-zero")
        if r == 1 and any(np.max(np.abs(v)) > TOL for v in nonresp.values()):
            raise InfeasibleSpecError(f"r={r} for a1={a1} but non-responder second-stage effects are non-zero")
    for arm, sd in spec.responder_sd.items():
        if not sd > 0:
            raise InfeasibleSpecError(f"responder sd for arm {arm} must be positive")
    for cell in cells(spec.design):
        a1, r, a2 = cell
        rate = spec.rate(a1)
        if (r == 1 and rate == 0) or (r == 0 and rate == 1):
            continue
        S = conditional_cov(spec, *cell)
        if not np.all(np.isfinite(S)) or np.linalg.eigvalsh(S)[0] <= 0:
            raise InfeasibleSpecError(f"conditional covariance for sequence {cell} is not positive definite")


# -- generation --------------------------------------------------------------

_HALF_ULP = 2.0 ** -54


def generate(spec: GenerativeSpec, n: int, seed) -> TrialDataset:
    """Simulate ``n`` participants.

    Draws come from a Philox stream keyed by ``seed`` and are laid out one
    row of uniforms per participant, so participant i depends only on
    (seed, i): a dataset of size m is the first m rows of any larger one.
    """
    validate(spec)
    if n < 0:
        raise ValueError("n must be non-negative")
    design = spec.design
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    u = rng.random((n, 6)) + _HALF_ULP
    a1 = np.where(u[:, 0] < design.p1, 1, -1)
    rate = np.where(a1 == 1, spec.r_plus, spec.r_minus)
    r = (u[:, 1] < rate).astype(int)
    a2 = np.where(design.rerandomized(a1, r), np.where(u[:, 2] < design.p2, 1, -1), 0)
    z = special.ndtri(u[:, 3:])
    y = np.empty((n, 3))
    for cell in cells(design):
        mask = (a1 == cell[0]) & (r == cell[1]) & (a2 == cell[2])
        if not mask.any():
            continue
        L = np.linalg.cholesky(conditional_cov(spec, *cell))
        zc = z[mask]
        # elementwise products keep each row independent of the batch size
        y[mask] = conditional_mean_vector(spec, *cell) + sum(zc[:, [j]] * L[:, j] for j in range(3))
    return TrialDataset(a1, r, a2, y, spec.mean.timepoints, seed=seed,
                        provenance={"spec": spec.to_dict()})


# -- working assumptions -----------------------------------------------------

@dataclass(frozen=True)
class AssumptionReport:
    a1a: bool
    a1b: bool
    a2: bool
    details: dict = field(default_factory=dict, compare=False)


def check_assumptions(spec: GenerativeSpec, tol: float = 1e-9) -> AssumptionReport:
    """Evaluate the sizing working assumptions on the implied conditional moments.

    a1a: for every regimen, end-of-study variance of non-responders exceeds
    that of responders by at most (2 - r) times the squared mean gap.
    a1b: responder covariance of Y_end with each earlier outcome is at most
    the non-responder covariance.
    a2: every regimen's marginal covariance is sigma^2 times an exchangeable
    correlation matrix.
    """
    validate(spec)
    ok_a, ok_b = True, True
    details = {}
    for d in enumerate_dtrs(spec.design):
        r = spec.rate(d.a1)
        if r in (0.0, 1.0):
            continue
        rc, nc = dtr_cells(spec.design, d)
        S1, S0 = conditional_cov(spec, *rc), conditional_cov(spec, *nc)
        gap = conditional_mean_vector(spec, *rc)[-1] - conditional_mean_vector(spec, *nc)[-1]
        slack = (2 - r) * gap ** 2 - (S0[2, 2] - S1[2, 2])
        cov_slack = min(S0[0, 2] - S1[0, 2], S0[1, 2] - S1[1, 2])
        details[str(d)] = {"a1a_slack": float(slack), "a1b_slack": float(cov_slack)}
        ok_a &= slack >= -tol
        ok_b &= cov_slack >= -tol
    err = marginalization_error(spec)
    details["marginalization_error"] = err
    ok_2 = spec.truth == "exchangeable" and err <= 1e-8
    return AssumptionReport(bool(ok_a), bool(ok_b), bool(ok_2), details)


def make_violation_1a(spec: GenerativeSpec, reduction: float = 0.25) -> GenerativeSpec:
    """Shrink responder end-of-study variance so the variance assumption fails.

    For each responder arm the responder variance is set to
    ``(1 - reduction) * (nonresponder variance - (2 - r) * gap^2)``, with the
    non-responder variance re-solved so the marginal variance stays fixed.
    Where several regimens share a responder arm the smallest value is used.
    """
    new_sd = {}
    s2 = spec.sigma ** 2
    keep = 1.0 - reduction
    for arm in responder_arms(spec.design):
        a1 = arm[0]
        r = spec.rate(a1)
        if not 0 < r < 1:
            raise InfeasibleSpecError(f"no responder/non-responder contrast when r={r}")
        vals = []
        for d in enumerate_dtrs(spec.design):
            rc, nc = dtr_cells(spec.design, d)
            if rc != (a1, 1, arm[1]):
                continue
            gap = _gap(spec, arm, *nc[::2])
            K = (2 - r) * gap ** 2
            s2nr = (s2 - r * (1 - r) * gap ** 2 + keep * r * K) / (keep * r + 1 - r)
            vals.append(keep * (s2nr - K))
        v = min(vals)
        if v <= 0:
            raise InfeasibleSpecError(f"responder arm {arm}: no positive variance violates the assumption")
        new_sd[arm] = float(np.sqrt(v))
    notes = dict(spec.notes, violation="1a", reduction=reduction)
    out = replace(spec, responder_sd=new_sd, notes=notes)
    validate(out)
    return out


def make_violation_1b(spec: GenerativeSpec) -> GenerativeSpec:
    """Raise responder covariance of Y_end with earlier outcomes above the non-responder one.

    The responder covariance is the midpoint between the non-responder
    covariance (where the assumption starts to fail) and the largest value
    keeping the responder matrix positive definite and the non-responder
    covariance non-negative.  Variances are unchanged.
    """
    if spec.truth != "exchangeable":
        raise InfeasibleSpecError("covariance violation is defined for an exchangeable truth")
    s, rho = spec.sigma, spec.rho
    m = rho * s * s
    new_rho = {}
    for arm in responder_arms(spec.design):
        r = spec.rate(arm[0])
        if not 0 < r < 1:
            raise InfeasibleSpecError(f"no responder/non-responder contrast when r={r}")
        sR = spec.responder_sd[arm]
        c_max = min(m / r, s * sR * np.sqrt((1 + rho) / 2))
        if c_max <= m:
            raise InfeasibleSpecError(f"no feasible covariance violation at rho={rho}")
        c = 0.5 * (m + c_max)
        rr = c / (s * sR)
        new_rho[arm] = (rr, rr)
    notes = dict(spec.notes, violation="1b")
    out = replace(spec, responder_rho=new_rho, notes=notes)
    validate(out)
    return out


def make_ar1_truth(spec: GenerativeSpec) -> GenerativeSpec:
    """Same spec but with an AR(1) marginal correlation with parameter rho."""
    R = marginal_corr_matrix("ar1", spec.rho)
    new_rho = {arm: (float(R[0, 2]), float(R[1, 2])) for arm in responder_arms(spec.design)}
    notes = dict(spec.notes, violation="ar1")
    out = replace(spec, truth="ar1", responder_rho=new_rho, notes=notes)
    validate(out)
    return out


# -- canonical scenario ------------------------------------------------------

def canonical_gamma(design: SmartDesign, delta: float, sigma: float = 1.0) -> tuple:
    """Mean parameters giving an end-of-study gap of delta * sigma.

    Half of the gap accrues in each stage through the a1 slopes; all
    second-stage treatment effects are zero.
    """
    from .mean_model import N_PARAMS
    g = np.zeros(N_PARAMS[design.kind])
    g[2] = delta * sigma / 4
    g[4] = delta * sigma / 4
    return tuple(g)


def canonical_spec(design, delta: float, r_plus: float = 0.0, r_minus: float | None = None,
                   rho: float = 0.0, sigma: float = 1.0) -> GenerativeSpec:
    """Scenario used by the power harness: timepoints (0, 1, 2), t* = 1,
    lambda = (sigma / 2, 0), symmetric responder moments."""
    if not isinstance(design, SmartDesign):
        design = SmartDesign(design)
    r_minus = r_plus if r_minus is None else r_minus
    mean = MeanModelSpec(design, (0.0, 1.0, 2.0), 1.0, canonical_gamma(design, delta, sigma))
    spec = GenerativeSpec(design, mean, r_plus, r_minus, sigma=sigma, rho=rho,
                          lambda1=sigma / 2, lambda2=0.0,
                          notes={"gamma": "canonical: a1 slopes delta*sigma/4 in each stage"})
    validate(spec)
    return spec


__all__ = [
    "AssumptionReport", "GenerativeSpec", "InfeasibleSpecError", "canonical_gamma", "canonical_spec",
    "check_assumptions", "conditional_cov", "conditional_mean", "conditional_mean_vector", "generate",
    "implied_marginal", "make_ar1_truth", "make_violation_1a", "make_violation_1b", "marginalization_error",
    "nonresponder_rho", "nonresponder_sigma2", "responder_arms", "validate",
]
