"""Monte Carlo power for end-of-study regimen comparisons.

Each replicate simulates a trial, fits the marginal model with an
exchangeable working covariance (one sigma and one rho shared by all times
and regimens) and applies the Wald test to the contrast between the regimen
recommending only treatments coded 1 and the one recommending only -1.
Replicates in which some treatment sequence is never observed are counted
as degenerate and left out of the power denominator.

Replicate ``k`` of a run with seed ``s`` always uses the random stream keyed
by ``(s, k)``, so results do not depend on the number of worker processes.
"""
from __future__ import annotations

import csv
import enum
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy import stats

from . import __version__
from .covariance import CovarianceError, Pooling, Structure
from .design import SmartDesign, enumerate_dtrs, weight_matrix
from .estimator import SingularFitError, fit, wald_test
from .mean_model import design_matrix, eos_contrast, extreme_dtrs
from .sample_size import SizingInputs, normal_quantile, required_n
from .simulator import (GenerativeSpec, InfeasibleSpecError, canonical_spec, conditional_cov,
                        conditional_mean_vector, generate, implied_marginal, make_ar1_truth,
                        make_violation_1a, make_violation_1b)

CSV_COLUMNS = ("design", "delta", "r", "rho", "violation", "n", "reps", "power", "mc_se", "flag")


class Violation(str, enum.Enum):
    NONE = "none"
    V1A = "1a"
    V1B = "1b"
    AR1 = "ar1"


@dataclass(frozen=True)
class PowerScenario:
    """One simulation setting.

    ``n`` defaults to the conservative-formula sample size computed with
    ``rho_assumed`` (which defaults to ``rho_true``).
    """

    design: str
    delta: float
    r_plus: float
    r_minus: float | None = None
    rho_true: float = 0.0
    rho_assumed: float | None = None
    violation: Violation = Violation.NONE
    n: int | None = None
    alpha: float = 0.05
    beta: float = 0.2
    sigma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "design", SmartDesign(self.design).kind.value)
        object.__setattr__(self, "violation", Violation(self.violation))
        if self.r_minus is None:
            object.__setattr__(self, "r_minus", self.r_plus)
        if self.rho_assumed is None:
            object.__setattr__(self, "rho_assumed", self.rho_true)

    def sizing_inputs(self, delta: float | None = None) -> SizingInputs:
        return SizingInputs(SmartDesign(self.design), self.delta if delta is None else delta,
                            self.rho_assumed, self.alpha, self.beta, self.r_plus, self.r_minus)

    def resolved_n(self) -> int:
        if self.n is not None:
            return int(self.n)
        return required_n(self.sizing_inputs()).n

    def generative_spec(self) -> GenerativeSpec:
        spec = canonical_spec(self.design, self.delta, self.r_plus, self.r_minus, self.rho_true, self.sigma)
        if self.violation is Violation.V1A:
            spec = make_violation_1a(spec)
        elif self.violation is Violation.V1B:
            spec = make_violation_1b(spec)
        elif self.violation is Violation.AR1:
            spec = make_ar1_truth(spec)
        return spec

    def contrast(self):
        spec = self.generative_spec().mean
        return eos_contrast(spec, *extreme_dtrs(spec.design))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["violation"] = self.violation.value
        return d


@dataclass(frozen=True)
class PowerEstimate:
    power: float
    mc_se: float
    reps_completed: int
    reps_degenerate: int
    binomial_p: float
    reps_nonconverged: int = 0
    n: int = 0

    def significantly_below(self, target: float = 0.8, level: float = 0.05) -> bool:
        return self.binomial_p < level


def _replicate(spec: GenerativeSpec, c, n: int, seed: int, k: int, alpha: float):
    """Return 1/0 for reject/accept, or None when degenerate; plus a convergence flag."""
    data = generate(spec, n, (seed, k))
    if data.unobserved_sequences(spec.design):
        return None, True
    try:
        res = fit(data, spec.design, spec.mean, Structure.EXCHANGEABLE, pooling=Pooling.ALL)
    except (SingularFitError, CovarianceError):
        # too little information to fit; counted with the degenerate replicates
        return None, True
    return int(wald_test(res, c).p_value < alpha), res.converged


def _run_chunk(args):
    spec_doc, c, n, seed, ks, alpha = args
    spec = GenerativeSpec.from_dict(spec_doc)
    return [_replicate(spec, c, n, seed, k, alpha) for k in ks]


def _chunks(reps: int, threads: int):
    size = max(1, math.ceil(reps / (4 * threads)))
    return [range(i, min(i + size, reps)) for i in range(0, reps, size)]


def summarize(outcomes, target: float = 0.8, n: int = 0) -> PowerEstimate:
    valid = [o for o, _ in outcomes if o is not None]
    degenerate = len(outcomes) - len(valid)
    nonconv = sum(1 for o, conv in outcomes if o is not None and not conv)
    if not valid:
        raise RuntimeError("every replicate was degenerate")
    k, m = sum(valid), len(valid)
    p = k / m
    binom_p = stats.binomtest(k, m, target, alternative="less").pvalue
    return PowerEstimate(p, math.sqrt(p * (1 - p) / m), m, degenerate, float(binom_p), nonconv, n)


def run_power(scenario: PowerScenario, reps: int = 2000, alpha: float | None = None, seed: int = 0,
              threads: int = 1, target: float | None = None) -> PowerEstimate:
    if reps < 1:
        raise ValueError("reps must be at least 1")
    alpha = scenario.alpha if alpha is None else alpha
    target = 1 - scenario.beta if target is None else target
    spec = scenario.generative_spec()
    c = scenario.contrast().c
    n = scenario.resolved_n()
    if threads <= 1:
        outcomes = [_replicate(spec, c, n, seed, k, alpha) for k in range(reps)]
    else:
        jobs = [(spec.to_dict(), c, n, seed, ks, alpha) for ks in _chunks(reps, threads)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = [o for part in pool.map(_run_chunk, jobs) for o in part]
    return summarize(outcomes, target, n)


# -- large-sample variance of the contrast -------------------------------------

def _limit_working_cov(spec: GenerativeSpec, dtrs) -> np.ndarray:
    """Probability limit of the pooled exchangeable working covariance."""
    covs = [implied_marginal(spec, d)[1] for d in dtrs]
    T = covs[0].shape[0]
    s2 = np.mean([np.diag(S) for S in covs])
    iu = np.triu_indices(T, 1)
    rho = np.mean([S[iu].mean() for S in covs]) / s2
    return s2 * ((1 - rho) * np.eye(T) + rho * np.ones((T, T)))


def asymptotic_contrast_variance(spec: GenerativeSpec, c) -> float:
    """n * Var(c'gamma_hat) in large samples under the generative model.

    Bread and meat are evaluated exactly by summing over treatment sequences
    with their probabilities and conditional normal moments.
    """
    design, mean = spec.design, spec.mean
    dtrs = enumerate_dtrs(design)
    V = _limit_working_cov(spec, dtrs)
    P = np.linalg.inv(V)
    D = [design_matrix(mean, d) for d in dtrs]
    mu = [D[k] @ np.asarray(mean.gamma) for k in range(len(dtrs))]
    B = sum(Dk.T @ P @ Dk for Dk in D)
    M = np.zeros_like(B)
    for a1, r, a2 in design.sequences():
        rate = spec.rate(a1)
        pr = (design.p1 if a1 == 1 else 1 - design.p1) * (rate if r else 1 - rate)
        if design.rerandomized(a1, r):
            pr *= design.p2 if a2 == 1 else 1 - design.p2
        if pr == 0:
            continue
        w = weight_matrix(design, dtrs, [a1], [r], [a2])[0]
        nu = conditional_mean_vector(spec, a1, r, a2)
        S = conditional_cov(spec, a1, r, a2)
        A = sum(w[k] * D[k].T @ P for k in range(len(dtrs)))
        m = sum(w[k] * D[k].T @ P @ (nu - mu[k]) for k in range(len(dtrs)))
        M += pr * (A @ S @ A.T + np.outer(m, m))
    Binv = np.linalg.inv(B)
    c = np.asarray(c, dtype=float)
    return float(c @ Binv @ M @ Binv @ c)


def analytic_power(scenario: PowerScenario) -> float:
    """Normal-approximation power implied by the asymptotic contrast variance."""
    spec = scenario.generative_spec()
    c = scenario.contrast().c
    var = asymptotic_contrast_variance(spec, c)
    n = scenario.resolved_n()
    shift = abs(c @ np.asarray(spec.mean.gamma)) * math.sqrt(n / var)
    z = normal_quantile(1 - scenario.alpha / 2)
    return float(stats.norm.sf(z - shift) + stats.norm.cdf(-z - shift))


# -- reference grid ------------------------------------------------------------

# (design, delta, r, rho): (n, power with assumptions met, 1a violated, 1b violated, AR(1) truth)
REFERENCE_CELLS = {
    ("I", 0.3, 0.4, 0.0): (698, 0.797, 0.800, None, None),
    ("I", 0.3, 0.4, 0.3): (635, 0.807, 0.811, 0.820, 0.778),
    ("I", 0.3, 0.4, 0.6): (447, 0.842, 0.829, 0.830, 0.712),
    ("I", 0.3, 0.4, 0.8): (252, 0.848, 0.838, 0.844, 0.662),
    ("I", 0.3, 0.6, 0.0): (698, 0.816, 0.794, None, None),
    ("I", 0.3, 0.6, 0.3): (635, 0.825, 0.801, 0.813, 0.778),
    ("I", 0.3, 0.6, 0.6): (447, 0.829, 0.833, 0.833, 0.723),
    ("I", 0.3, 0.6, 0.8): (252, 0.851, 0.832, 0.838, 0.665),
    ("I", 0.5, 0.4, 0.0): (252, 0.804, 0.810, None, None),
    ("I", 0.5, 0.4, 0.3): (229, 0.818, 0.812, 0.820, 0.783),
    ("I", 0.5, 0.4, 0.6): (161, 0.843, 0.829, 0.837, 0.710),
    ("I", 0.5, 0.4, 0.8): (91, 0.845, 0.840, 0.840, 0.676),
    ("I", 0.5, 0.6, 0.0): (252, 0.809, 0.797, None, None),
    ("I", 0.5, 0.6, 0.3): (229, 0.816, 0.818, 0.812, 0.777),
    ("I", 0.5, 0.6, 0.6): (161, 0.838, 0.831, 0.831, 0.713),
    ("I", 0.5, 0.6, 0.8): (91, 0.853, 0.840, 0.846, 0.666),
    ("II", 0.3, 0.4, 0.0): (559, 0.800, 0.790, None, None),
    ("II", 0.3, 0.4, 0.3): (508, 0.803, 0.786, 0.785, 0.757),
    ("II", 0.3, 0.4, 0.6): (358, 0.824, 0.795, 0.779, 0.695),
    ("II", 0.3, 0.4, 0.8): (201, 0.825, 0.785, 0.803, 0.625),
    ("II", 0.3, 0.6, 0.0): (489, 0.796, 0.773, None, None),
    ("II", 0.3, 0.6, 0.3): (445, 0.797, 0.787, 0.786, 0.767),
    ("II", 0.3, 0.6, 0.6): (313, 0.812, 0.783, 0.766, 0.679),
    ("II", 0.3, 0.6, 0.8): (176, 0.827, 0.756, 0.774, 0.625),
    ("II", 0.5, 0.4, 0.0): (201, 0.794, 0.793, None, None),
    ("II", 0.5, 0.4, 0.3): (183, 0.815, 0.794, 0.789, 0.774),
    ("II", 0.5, 0.4, 0.6): (129, 0.830, 0.797, 0.793, 0.699),
    ("II", 0.5, 0.4, 0.8): (73, 0.839, 0.787, 0.807, 0.638),
    ("II", 0.5, 0.6, 0.0): (176, 0.806, 0.765, None, None),
    ("II", 0.5, 0.6, 0.3): (160, 0.815, 0.773, 0.802, 0.778),
    ("II", 0.5, 0.6, 0.6): (113, 0.816, 0.773, 0.763, 0.691),
    ("II", 0.5, 0.6, 0.8): (64, 0.831, 0.775, 0.787, 0.643),
    ("III", 0.3, 0.4, 0.0): (454, 0.798, 0.793, None, None),
    ("III", 0.3, 0.4, 0.3): (413, 0.805, 0.800, 0.800, 0.760),
    ("III", 0.3, 0.4, 0.6): (291, 0.808, 0.803, 0.797, 0.677),
    ("III", 0.3, 0.4, 0.8): (164, 0.825, 0.800, 0.802, 0.611),
    ("III", 0.3, 0.6, 0.0): (419, 0.798, 0.805, None, None),
    ("III", 0.3, 0.6, 0.3): (381, 0.802, 0.793, 0.795, 0.753),
    ("III", 0.3, 0.6, 0.6): (268, 0.814, 0.803, 0.786, 0.686),
    ("III", 0.3, 0.6, 0.8): (151, 0.824, 0.794, 0.784, 0.611),
    ("III", 0.5, 0.4, 0.0): (164, 0.802, 0.790, None, None),
    ("III", 0.5, 0.4, 0.3): (149, 0.814, 0.803, 0.805, 0.773),
    ("III", 0.5, 0.4, 0.6): (105, 0.815, 0.807, 0.796, 0.683),
    ("III", 0.5, 0.4, 0.8): (59, 0.811, 0.815, 0.817, 0.635),
    ("III", 0.5, 0.6, 0.0): (151, 0.792, 0.791, None, None),
    ("III", 0.5, 0.6, 0.3): (138, 0.813, 0.802, 0.799, 0.769),
    ("III", 0.5, 0.6, 0.6): (97, 0.818, 0.804, 0.796, 0.690),
    ("III", 0.5, 0.6, 0.8): (55, 0.824, 0.797, 0.797, 0.630),
}

_VIOLATION_COLUMN = {Violation.NONE: 1, Violation.V1A: 2, Violation.V1B: 3, Violation.AR1: 4}


def reference_power(design: str, delta: float, r: float, rho: float, violation=Violation.NONE):
    return REFERENCE_CELLS[(design, delta, r, rho)][_VIOLATION_COLUMN[Violation(violation)]]


def table4_scenarios(designs=("I", "II", "III"), violations=(Violation.NONE,)) -> list[PowerScenario]:
    """Scenarios for the reference grid, with formula sample sizes checked against it."""
    out = []
    for (design, delta, r, rho), row in REFERENCE_CELLS.items():
        if design not in designs:
            continue
        for v in violations:
            sc = PowerScenario(design, delta, r, r, rho, violation=v)
            if sc.resolved_n() != row[0]:
                raise AssertionError(f"formula n={sc.resolved_n()} differs from reference n={row[0]} "
                                     f"for {(design, delta, r, rho)}")
            out.append(sc)
    return out


def scenario_row(sc: PowerScenario, est: PowerEstimate | None, reps: int) -> dict:
    if est is None:
        return {"design": sc.design, "delta": sc.delta, "r": sc.r_plus, "rho": sc.rho_true,
                "violation": sc.violation.value, "n": sc.resolved_n(), "reps": 0, "power": "",
                "mc_se": "", "flag": "infeasible"}
    flags = []
    if est.significantly_below():
        flags.append("low")
    if est.reps_degenerate:
        flags.append("degenerate")
    return {"design": sc.design, "delta": sc.delta, "r": sc.r_plus, "rho": sc.rho_true,
            "violation": sc.violation.value, "n": est.n, "reps": est.reps_completed,
            "power": f"{est.power:.4f}", "mc_se": f"{est.mc_se:.4f}", "flag": ";".join(flags)}


def table4_suite(designs=("I", "II", "III"), reps: int = 2000, seed: int = 0,
                 violations=(Violation.NONE,), threads: int = 1) -> list[dict]:
    """Run every feasible grid cell; infeasible violation cells get an ``infeasible`` row."""
    rows = []
    for sc in table4_scenarios(designs, [Violation(v) for v in violations]):
        try:
            sc.generative_spec()
        except InfeasibleSpecError:
            rows.append(scenario_row(sc, None, reps))
            continue
        rows.append(scenario_row(sc, run_power(sc, reps, seed=seed, threads=threads), reps))
    return rows


def rho_misspec_sweep(design: str, delta: float, r: float, rho_true_grid, rho_guess_grid,
                      reps: int = 2000, seed: int = 0, threads: int = 1) -> list[dict]:
    """Power when the sample size uses rho_guess but data have rho_true."""
    rows = []
    for rt in rho_true_grid:
        for rg in rho_guess_grid:
            sc = PowerScenario(design, delta, r, r, rho_true=rt, rho_assumed=rg)
            try:
                est = run_power(sc, reps, seed=seed, threads=threads)
            except (InfeasibleSpecError, RuntimeError):
                rows.append({"rho_true": rt, "rho_guess": rg, "difference": rt - rg, "n": "",
                             "power": "", "mc_se": "", "flag": "infeasible"})
                continue
            rows.append({"rho_true": rt, "rho_guess": rg, "difference": round(rt - rg, 10), "n": est.n,
                         "power": f"{est.power:.4f}", "mc_se": f"{est.mc_se:.4f}",
                         "flag": "low" if est.significantly_below() else ""})
    return rows


def rows_to_csv(rows, columns=CSV_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def run_manifest(scenarios, seed: int, reps: int, **extra) -> str:
    doc = {"software": "smartsize", "version": __version__, "seed": seed, "reps": reps,
           "scenarios": [s.to_dict() for s in scenarios]}
    doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True)
