"""Closed-form sample sizes for end-of-study regimen comparisons.

The conservative formula is the two-arm z-test sample size, deflated by
``1 - rho^2`` for the repeated measures and inflated by a design effect::

    n >= 4 (z_{1-alpha/2} + z_{1-beta})^2 / delta^2 * (1 - rho^2) * DE

Design II also has a sharper bound on the contrast variance.  All formulae
assume three measurement occasions and randomization probabilities of 1/2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from scipy import special, stats

from .design import Design, SmartDesign


class SizingError(ValueError):
    pass


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF."""
    if not 0.0 < p < 1.0:
        raise SizingError(f"probability must lie in (0, 1), got {p}")
    return float(special.ndtri(p))


@dataclass(frozen=True)
class SizingInputs:
    design: SmartDesign
    delta: float
    rho: float = 0.0
    alpha: float = 0.05
    beta: float = 0.2
    r_plus: float = 0.0
    r_minus: float = 0.0

    def __post_init__(self):
        if not isinstance(self.design, SmartDesign):
            object.__setattr__(self, "design", SmartDesign(self.design))
        if self.design.p1 != 0.5 or self.design.p2 != 0.5:
            raise SizingError("the sizing formulae require randomization probabilities of 0.5")
        if not self.delta > 0:
            raise SizingError(f"delta must be positive, got {self.delta}")
        if not 0.0 <= self.rho < 1.0:
            raise SizingError(f"rho must lie in [0, 1), got {self.rho}")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise SizingError(f"{name} must lie in (0, 1), got {v}")
        for name in ("r_plus", "r_minus"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SizingError(f"{name} must lie in [0, 1], got {v}")

    @property
    def z_sum(self) -> float:
        return normal_quantile(1 - self.alpha / 2) + normal_quantile(1 - self.beta)


@dataclass(frozen=True)
class SizingResult:
    n: int
    n_exact: float
    design_effect: float
    variance_bound: float
    method: str
    two_arm_n: float = float("nan")
    correlation_factor: float = float("nan")


def design_effect(design, r_plus: float = 0.0, r_minus: float = 0.0, conservative: bool = False) -> float:
    kind = design.kind if isinstance(design, SmartDesign) else Design(design)
    if kind is Design.I:
        return 2.0
    if kind is Design.II:
        return 2.0 if conservative else 0.5 * (2 - r_plus) + 0.5 * (2 - r_minus)
    return 1.5 if conservative else 0.5 * (3 - r_plus)


def _ceil(x: float) -> int:
    return max(1, math.ceil(x))


def required_n(inputs: SizingInputs, conservative: bool = False) -> SizingResult:
    """Minimum total sample size from the design-effect formula."""
    de = design_effect(inputs.design, inputs.r_plus, inputs.r_minus, conservative)
    two_arm = 4 * inputs.z_sum ** 2 / inputs.delta ** 2
    corr = 1 - inputs.rho ** 2
    exact = two_arm * corr * de
    return SizingResult(_ceil(exact), exact, de, 4 * corr * de, "conservative", two_arm, corr)


def sharp_variance_bound_design2(rho: float, r_plus: float, r_minus: float) -> float:
    """Upper bound on Var(sqrt(n) c'gamma_hat) / sigma^2 for design II."""
    rbar = 0.5 * (r_plus + r_minus)
    return 4 * (1 - rho) * (rho ** 2 + 4 * rho - rbar * (2 * rho + 1) + 2) / (1 + rho)


def required_n_sharp_design2(inputs: SizingInputs) -> SizingResult:
    if inputs.design.kind is not Design.II:
        raise SizingError("the sharp formula is only available for design II")
    bound = sharp_variance_bound_design2(inputs.rho, inputs.r_plus, inputs.r_minus)
    exact = inputs.z_sum ** 2 * bound / inputs.delta ** 2
    de = design_effect(inputs.design, inputs.r_plus, inputs.r_minus)
    return SizingResult(_ceil(exact), exact, de, bound, "sharp-design-II")


def power_at_n(n: int, delta: float, variance_ratio: float, alpha: float = 0.05) -> float:
    """Normal-approximation power for a contrast with Var(sqrt(n) c'gamma)/sigma^2 = variance_ratio."""
    shift = math.sqrt(n) * delta / math.sqrt(variance_ratio)
    z = normal_quantile(1 - alpha / 2)
    return float(stats.norm.sf(z - shift) + stats.norm.cdf(-z - shift))
