import numpy as np
import pytest
from hypothesis import given, strategies as st

from smartsize.design import (Design, DesignError, EmbeddedDtr, SmartDesign, SubjectRecord, check_dtr,
                              check_record, consistency_indicator, enumerate_dtrs, indicator_matrix,
                              unobserved_sequences, weight, weight_matrix)


class TestEnumeration:
    @pytest.mark.parametrize("kind, count", [("I", 8), ("II", 4), ("III", 3)])
    def test_dtr_counts(self, kind, count):
        assert len(enumerate_dtrs(SmartDesign(kind))) == count

    @pytest.mark.parametrize("kind, count", [("I", 8), ("II", 6), ("III", 5)])
    def test_sequence_counts(self, kind, count):
        assert len(SmartDesign(kind).sequences()) == count

    def test_design_iii_regimens(self):
        dtrs = enumerate_dtrs(SmartDesign("III"))
        assert set(dtrs) == {EmbeddedDtr(1, 0, 1), EmbeddedDtr(1, 0, -1), EmbeddedDtr(-1, 0, 0)}

    def test_order_is_descending(self):
        dtrs = enumerate_dtrs(SmartDesign("I"))
        assert dtrs == sorted(dtrs, reverse=True)
        assert dtrs[0] == (1, 1, 1) and dtrs[-1] == (-1, -1, -1)


class TestValidation:
    @pytest.mark.parametrize("p", [0.0, 1.0, -0.2, 1.5])
    def test_probabilities_strictly_inside(self, p):
        with pytest.raises(DesignError):
            SmartDesign("II", p1=p)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            SmartDesign("IV")

    def test_dtr_not_embedded(self):
        with pytest.raises(DesignError):
            check_dtr(SmartDesign("II"), EmbeddedDtr(1, 1, 1))

    @pytest.mark.parametrize("kind, rec", [
        ("II", SubjectRecord(1, 1, 1, (0, 0, 0))),   # responder re-randomized
        ("II", SubjectRecord(1, 0, 0, (0, 0, 0))),   # non-responder not re-randomized
        ("III", SubjectRecord(-1, 0, 1, (0, 0, 0))),
        ("I", SubjectRecord(1, 2, 1, (0, 0, 0))),
        ("I", SubjectRecord(0, 1, 1, (0, 0, 0))),
    ])
    def test_bad_records(self, kind, rec):
        with pytest.raises(DesignError):
            check_record(SmartDesign(kind), rec)

    def test_parse(self):
        assert EmbeddedDtr.parse("1,0,-1") == (1, 0, -1)
        assert EmbeddedDtr.parse(" (-1, 1, 1) ") == (-1, 1, 1)
        with pytest.raises(ValueError):
            EmbeddedDtr.parse("1,2")


# Hand-tabulated weights: 1 / (P(A1) * P(A2 | history)) for consistent participants.
WEIGHT_TABLE = [
    ("I", (1, 1, -1), SubjectRecord(1, 1, 1, ()), 4.0),
    ("I", (1, 1, -1), SubjectRecord(1, 0, -1, ()), 4.0),
    ("I", (1, 1, -1), SubjectRecord(1, 0, 1, ()), 0.0),
    ("I", (1, 1, -1), SubjectRecord(1, 1, -1, ()), 0.0),
    ("II", (1, 0, 1), SubjectRecord(1, 1, 0, ()), 2.0),
    ("II", (1, 0, 1), SubjectRecord(1, 0, 1, ()), 4.0),
    ("II", (1, 0, 1), SubjectRecord(1, 0, -1, ()), 0.0),
    ("II", (-1, 0, 1), SubjectRecord(1, 1, 0, ()), 0.0),
    ("III", (-1, 0, 0), SubjectRecord(-1, 1, 0, ()), 2.0),
    ("III", (-1, 0, 0), SubjectRecord(-1, 0, 0, ()), 2.0),
    ("III", (1, 0, -1), SubjectRecord(1, 0, -1, ()), 4.0),
    ("III", (1, 0, -1), SubjectRecord(1, 1, 0, ()), 2.0),
]


class TestWeights:
    @pytest.mark.parametrize("kind, d, rec, w", WEIGHT_TABLE)
    def test_hand_table(self, kind, d, rec, w):
        design = SmartDesign(kind)
        assert weight(design, EmbeddedDtr(*d), rec) == w
        assert consistency_indicator(design, EmbeddedDtr(*d), rec) == int(w > 0)

    def test_unequal_probabilities(self):
        design = SmartDesign("II", p1=0.25, p2=0.8)
        rec = SubjectRecord(-1, 0, -1, ())
        assert weight(design, EmbeddedDtr(-1, 0, -1), rec) == pytest.approx(1 / (0.75 * 0.2))

    @given(p1=st.floats(0.05, 0.95), p2=st.floats(0.05, 0.95), kind=st.sampled_from(["I", "II", "III"]))
    def test_weights_have_unit_mean(self, p1, p2, kind):
        # E[W_d] = 1 for every regimen: average over sequences with their probabilities
        design = SmartDesign(kind, p1, p2)
        r_rate = 0.37
        dtrs = enumerate_dtrs(design)
        total = np.zeros(len(dtrs))
        for a1, r, a2 in design.sequences():
            pr = (p1 if a1 == 1 else 1 - p1) * (r_rate if r else 1 - r_rate)
            if design.rerandomized(a1, r):
                pr *= p2 if a2 == 1 else 1 - p2
            total += pr * weight_matrix(design, dtrs, [a1], [r], [a2])[0]
        np.testing.assert_allclose(total, 1.0, rtol=1e-12)

    def test_matrix_agrees_with_scalar(self, design, rng):
        seqs = np.array(design.sequences())[rng.integers(0, len(design.sequences()), 40)]
        dtrs = enumerate_dtrs(design)
        W = weight_matrix(design, dtrs, *seqs.T)
        I = indicator_matrix(design, dtrs, *seqs.T)
        for i, (a1, r, a2) in enumerate(seqs):
            rec = SubjectRecord(int(a1), int(r), int(a2), ())
            for k, d in enumerate(dtrs):
                assert W[i, k] == weight(design, d, rec)
                assert I[i, k] == consistency_indicator(design, d, rec)


def test_unobserved_sequences():
    design = SmartDesign("III")
    a1, r, a2 = np.array([(1, 1, 0), (1, 0, 1), (-1, 1, 0), (-1, 0, 0)]).T
    assert unobserved_sequences(design, a1, r, a2) == [(1, 0, -1)]
    assert Design("II") is Design.II
