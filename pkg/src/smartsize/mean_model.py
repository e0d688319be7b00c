"""Piecewise-linear marginal mean models for the three SMART designs.

All models share a first-stage block,

    gamma0 + gamma1 * s + gamma2 * a1 * s,   s = min(t, t*) - t_1,

and differ in the slope after the second randomization, which multiplies
``(t - t*)`` for ``t > t*``:

* design II:  gamma3 + gamma4 a1 + gamma5 a2NR + gamma6 a1 a2NR
* design I:   gamma3 + gamma4 a1 + gamma5 a2R + gamma6 a2NR + gamma7 a1 a2R
              + gamma8 a1 a2NR + gamma9 a2R a2NR + gamma10 a1 a2R a2NR
* design III: gamma3 + gamma4 a1 + gamma5 a2NR (1 + a1) / 2

Each model is saturated: it gives every embedded regimen its own
end-of-study mean.  The models are linear in ``gamma``, so the design matrix
does not depend on the parameters.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .design import Design, EmbeddedDtr, SmartDesign, check_dtr, enumerate_dtrs

N_PARAMS = {Design.I: 11, Design.II: 7, Design.III: 6}


@dataclass(frozen=True)
class MeanModelSpec:
    design: SmartDesign
    timepoints: tuple
    t_star: float
    gamma: tuple = None

    def __post_init__(self):
        tp = tuple(float(t) for t in self.timepoints)
        if len(tp) < 2 or any(b <= a for a, b in zip(tp, tp[1:])):
            raise ValueError("timepoints must be strictly increasing with at least two entries")
        if float(self.t_star) not in tp:
            raise ValueError(f"t_star={self.t_star} is not one of the timepoints {tp}")
        object.__setattr__(self, "timepoints", tp)
        object.__setattr__(self, "t_star", float(self.t_star))
        if self.gamma is None:
            object.__setattr__(self, "gamma", (0.0,) * self.n_params)
        else:
            g = tuple(float(v) for v in self.gamma)
            if len(g) != self.n_params:
                raise ValueError(f"design {self.design.kind.value} needs {self.n_params} parameters, got {len(g)}")
            object.__setattr__(self, "gamma", g)

    @property
    def n_params(self) -> int:
        return N_PARAMS[self.design.kind]

    @property
    def T(self) -> int:
        return len(self.timepoints)

    def with_gamma(self, gamma) -> "MeanModelSpec":
        return MeanModelSpec(self.design, self.timepoints, self.t_star, tuple(gamma))


@dataclass(frozen=True)
class ContrastVector:
    c: np.ndarray
    delta_label: str = field(default="", compare=False)

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        if not np.any(c):
            raise ValueError("contrast vector is identically zero")
        object.__setattr__(self, "c", c)

    def __matmul__(self, other):
        return self.c @ np.asarray(other, dtype=float)


def _stage2_terms(kind: Design, d: EmbeddedDtr) -> list[float]:
    a1, b, c = d
    if kind is Design.II:
        return [1.0, a1, c, a1 * c]
    if kind is Design.I:
        return [1.0, a1, b, c, a1 * b, a1 * c, b * c, a1 * b * c]
    return [1.0, a1, c * (1 + a1) / 2]


def _row(spec: MeanModelSpec, d: EmbeddedDtr, t: float) -> np.ndarray:
    t1 = spec.timepoints[0]
    s = min(t, spec.t_star) - t1
    post = max(t - spec.t_star, 0.0)
    first = [1.0, s, d.a1 * s]
    second = [post * v for v in _stage2_terms(spec.design.kind, d)]
    return np.array(first + second)


def design_matrix(spec: MeanModelSpec, d: EmbeddedDtr) -> np.ndarray:
    """T x p matrix of partial derivatives of the mean trajectory in gamma.

    ``d`` may also be a non-embedded coding such as ``(a1, 0, 0)``; this is
    used by the simulator to split regimen means into responder and
    non-responder parts.
    """
    d = EmbeddedDtr(*d)
    return np.vstack([_row(spec, d, t) for t in spec.timepoints])


def marginal_mean(spec: MeanModelSpec, d: EmbeddedDtr, t: float) -> float:
    d = check_dtr(spec.design, d)
    if float(t) not in spec.timepoints:
        raise ValueError(f"t={t} is not one of the timepoints")
    return float(_row(spec, d, float(t)) @ np.asarray(spec.gamma))


def mean_trajectory(spec: MeanModelSpec, d: EmbeddedDtr, gamma=None) -> np.ndarray:
    g = spec.gamma if gamma is None else gamma
    return design_matrix(spec, d) @ np.asarray(g, dtype=float)


def dtr_contrast(spec: MeanModelSpec, d: EmbeddedDtr, d_other: EmbeddedDtr, t=None) -> ContrastVector:
    """Contrast for mu_t(d) - mu_t(d_other); ``t`` defaults to the last timepoint."""
    d = check_dtr(spec.design, d)
    d_other = check_dtr(spec.design, d_other)
    if d == d_other:
        raise ValueError("cannot contrast a regimen with itself")
    t = spec.timepoints[-1] if t is None else float(t)
    c = _row(spec, d, t) - _row(spec, d_other, t)
    return ContrastVector(c, f"mu_{t:g}{d} - mu_{t:g}{d_other}")


def eos_contrast(spec: MeanModelSpec, d: EmbeddedDtr, d_other: EmbeddedDtr) -> ContrastVector:
    """End-of-study contrast between regimens with different first-stage treatments."""
    if EmbeddedDtr(*d) == EmbeddedDtr(*d_other):
        raise ValueError("cannot contrast a regimen with itself")
    if d[0] == d_other[0]:
        raise ValueError("end-of-study sizing contrasts need regimens with different first-stage treatments")
    return dtr_contrast(spec, d, d_other)


def first_stage_slope_contrast(spec: MeanModelSpec) -> ContrastVector:
    """Contrast returning 2 * gamma2, the first-stage slope difference between arms."""
    c = np.zeros(spec.n_params)
    c[2] = 2.0
    return ContrastVector(c, "first-stage slope difference (a1=+1 minus a1=-1)")


def extreme_dtrs(design: SmartDesign) -> tuple[EmbeddedDtr, EmbeddedDtr]:
    """The regimen recommending only treatments coded 1 and the one recommending only -1."""
    dtrs = enumerate_dtrs(design)
    return dtrs[0], dtrs[-1]
