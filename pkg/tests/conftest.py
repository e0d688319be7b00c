import numpy as np
import pytest

from smartsize.data import TrialDataset
from smartsize.design import SmartDesign, enumerate_dtrs, weight
from smartsize.mean_model import MeanModelSpec

TIMES = (0.0, 1.0, 2.0)
DESIGNS = ("I", "II", "III")


def random_trial(design, n, rng, times=TIMES, cover=True):
    """Random treatment paths and outcomes; with ``cover`` every sequence appears."""
    design = SmartDesign(design) if not isinstance(design, SmartDesign) else design
    seqs = design.sequences()
    if cover:
        assert n >= len(seqs)
        idx = np.concatenate([np.arange(len(seqs)), rng.integers(0, len(seqs), n - len(seqs))])
    else:
        idx = rng.integers(0, len(seqs), n)
    a1, r, a2 = np.array(seqs)[idx].T
    y = rng.normal(size=(n, len(times))) + 0.3 * a1[:, None]
    return TrialDataset(a1, r, a2, y, times)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=DESIGNS)
def design(request):
    return SmartDesign(request.param)


@pytest.fixture
def model(design):
    return MeanModelSpec(design, TIMES, 1.0)


def cell_means(design, data):
    """IPW ratio means of each model cell, written without the estimator.

    The model has one mean at baseline, one per first-stage arm at the
    second occasion and one per regimen at the last.
    """
    dtrs = enumerate_dtrs(design)
    out = {}
    for d in dtrs:
        for j in range(3):
            group = [e for e in dtrs if j == 0 or (j == 1 and e.a1 == d.a1) or (j == 2 and e == d)]
            num = den = 0.0
            for e in group:
                for rec in data.records:
                    w = weight(design, e, rec)
                    num += w * rec.y[j]
                    den += w
            out[d, j] = num / den
    return out


def random_generative_spec(rng, design=None, max_tries=200):
    """Random feasible generative spec (rejection sampling on feasibility)."""
    from smartsize.mean_model import N_PARAMS
    from smartsize.simulator import GenerativeSpec, InfeasibleSpecError, responder_arms, validate

    for _ in range(max_tries):
        kind = design or str(rng.choice(DESIGNS))
        d = SmartDesign(kind)
        p = N_PARAMS[d.kind]
        g = rng.normal(scale=0.5, size=p)
        if kind == "I":
            g[[5, 7, 9, 10]] = 0.0  # responder-side terms would break exchangeability
        sigma = rng.uniform(0.5, 3.0)
        truth = str(rng.choice(["exchangeable", "ar1"]))
        # design I: responder moments may depend on a1 only, since both
        # responder arms share one non-responder cell
        by_a1 = {a1: (sigma * rng.uniform(0.6, 1.0), tuple(rng.uniform(0.0, 0.5, 2))) for a1 in (1, -1)}
        arms = responder_arms(d)
        try:
            spec = GenerativeSpec(
                d, MeanModelSpec(d, TIMES, 1.0, tuple(g)), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95),
                sigma=sigma, rho=rng.uniform(0.0, 0.8), lambda1=rng.normal(scale=0.3),
                lambda2=rng.normal(scale=0.3), truth=truth,
                responder_sd={a: by_a1[a[0]][0] for a in arms},
                responder_rho={a: by_a1[a[0]][1] for a in arms})
            validate(spec)
            return spec
        except InfeasibleSpecError:
            continue
    raise RuntimeError("no feasible spec found")
