"""SMART designs, embedded regimens, consistency indicators and IPW weights.

Three two-stage designs are supported:

* ``I``   -- every participant is re-randomized after stage one.
* ``II``  -- only non-responders are re-randomized.
* ``III`` -- only non-responders to the ``a1 = +1`` arm are re-randomized.

Treatments are contrast coded in ``{-1, 1}``; a second-stage code of ``0``
means "not re-randomized".
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np


class Design(str, enum.Enum):
    I = "I"
    II = "II"
    III = "III"


class DesignError(ValueError):
    """Raised for records or regimens that do not fit a design."""


@dataclass(frozen=True)
class SmartDesign:
    """A two-stage SMART and its randomization probabilities.

    Parameters
    ----------
    kind : Design or str
        One of ``"I"``, ``"II"``, ``"III"``.
    p1 : float
        P(A1 = 1).
    p2 : float
        P(A2 = 1) among re-randomized participants.
    """

    kind: Design
    p1: float = 0.5
    p2: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "kind", Design(self.kind))
        for name in ("p1", "p2"):
            p = getattr(self, name)
            if not 0.0 < p < 1.0:
                raise DesignError(f"{name} must lie strictly inside (0, 1), got {p}")

    def rerandomized(self, a1, r):
        """Whether a participant with (a1, r) gets a second randomization.

        Works elementwise on arrays.
        """
        a1 = np.asarray(a1)
        r = np.asarray(r)
        if self.kind is Design.I:
            out = np.ones(np.broadcast(a1, r).shape, dtype=bool)
        elif self.kind is Design.II:
            out = np.broadcast_to(r == 0, np.broadcast(a1, r).shape).copy()
        else:
            out = (r == 0) & (a1 == 1)
        return out if out.ndim else bool(out)

    def sequences(self) -> list[tuple[int, int, int]]:
        """All treatment sequences (a1, r, a2) that can occur under the design."""
        out = []
        for a1 in (1, -1):
            for r in (1, 0):
                if self.rerandomized(a1, r):
                    out.extend((a1, r, a2) for a2 in (1, -1))
                else:
                    out.append((a1, r, 0))
        return out


class EmbeddedDtr(NamedTuple):
    """An embedded regimen coded as (a1, a2R, a2NR)."""

    a1: int
    a2R: int
    a2NR: int

    def __str__(self):
        return f"({self.a1},{self.a2R},{self.a2NR})"

    @classmethod
    def parse(cls, text: str) -> "EmbeddedDtr":
        parts = [int(p) for p in text.strip().strip("()").split(",")]
        if len(parts) != 3:
            raise ValueError(f"expected three comma-separated codes, got {text!r}")
        return cls(*parts)


class SubjectRecord(NamedTuple):
    """Observed data for one participant (no baseline covariates)."""

    a1: int
    r: int
    a2: int
    y: tuple


def enumerate_dtrs(design: SmartDesign) -> list[EmbeddedDtr]:
    """Embedded regimens in lexicographically descending order."""
    kind = design.kind
    if kind is Design.I:
        dtrs = [EmbeddedDtr(a1, b, c) for a1 in (1, -1) for b in (1, -1) for c in (1, -1)]
    elif kind is Design.II:
        dtrs = [EmbeddedDtr(a1, 0, c) for a1 in (1, -1) for c in (1, -1)]
    else:
        dtrs = [EmbeddedDtr(1, 0, 1), EmbeddedDtr(1, 0, -1), EmbeddedDtr(-1, 0, 0)]
    return sorted(dtrs, reverse=True)


def check_dtr(design: SmartDesign, d: EmbeddedDtr) -> EmbeddedDtr:
    d = EmbeddedDtr(*d)
    if d not in enumerate_dtrs(design):
        raise DesignError(f"DTR {d} is not embedded in design {design.kind.value}")
    return d


def check_record(design: SmartDesign, rec: SubjectRecord) -> None:
    if rec.a1 not in (-1, 1):
        raise DesignError(f"a1 must be -1 or 1, got {rec.a1}")
    if rec.r not in (0, 1):
        raise DesignError(f"r must be 0 or 1, got {rec.r}")
    if design.rerandomized(rec.a1, rec.r):
        if rec.a2 not in (-1, 1):
            raise DesignError(f"re-randomized participant needs a2 in {{-1, 1}}, got {rec.a2}")
    elif rec.a2 != 0:
        raise DesignError(f"participant with a1={rec.a1}, r={rec.r} is not re-randomized; a2 must be 0")


def _indicator(kind: Design, d: EmbeddedDtr, a1, r, a2):
    same_a1 = a1 == d.a1
    if kind is Design.I:
        stage2 = np.where(r == 1, a2 == d.a2R, a2 == d.a2NR)
    elif kind is Design.II:
        stage2 = (r == 1) | (a2 == d.a2NR)
    elif d.a1 == -1:
        stage2 = np.ones_like(same_a1, dtype=bool)
    else:
        stage2 = (r == 1) | (a2 == d.a2NR)
    return same_a1 & stage2


def indicator_matrix(design: SmartDesign, dtrs: Sequence[EmbeddedDtr], a1, r, a2) -> np.ndarray:
    """Consistency indicators, shape (n, len(dtrs))."""
    a1, r, a2 = (np.asarray(v) for v in (a1, r, a2))
    return np.column_stack([_indicator(design.kind, d, a1, r, a2) for d in dtrs]).astype(float)


def weight_matrix(design: SmartDesign, dtrs: Sequence[EmbeddedDtr], a1, r, a2) -> np.ndarray:
    """Inverse-probability-of-treatment weights, shape (n, len(dtrs)).

    The weight is the consistency indicator divided by the probability of the
    observed treatment path; the second-stage factor is 1 for participants who
    were not re-randomized.
    """
    a1, r, a2 = (np.asarray(v) for v in (a1, r, a2))
    ind = indicator_matrix(design, dtrs, a1, r, a2)
    prob1 = np.where(a1 == 1, design.p1, 1.0 - design.p1)
    prob2 = np.where(design.rerandomized(a1, r),
                     np.where(a2 == 1, design.p2, 1.0 - design.p2), 1.0)
    return ind / (prob1 * prob2)[:, None]


def consistency_indicator(design: SmartDesign, d: EmbeddedDtr, rec: SubjectRecord) -> int:
    d = check_dtr(design, d)
    check_record(design, rec)
    return int(indicator_matrix(design, [d], [rec.a1], [rec.r], [rec.a2])[0, 0])


def weight(design: SmartDesign, d: EmbeddedDtr, rec: SubjectRecord) -> float:
    d = check_dtr(design, d)
    check_record(design, rec)
    return float(weight_matrix(design, [d], [rec.a1], [rec.r], [rec.a2])[0, 0])


def unobserved_sequences(design: SmartDesign, a1: Iterable, r: Iterable, a2: Iterable) -> list[tuple[int, int, int]]:
    """Treatment sequences possible under ``design`` with no participants."""
    seen = set(zip(np.asarray(a1).tolist(), np.asarray(r).tolist(), np.asarray(a2).tolist()))
    return [s for s in design.sequences() if s not in seen]
