import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from satlens.diagnostics import (
    SaturationReport,
    detect_tails,
    min_delta_search,
    paired_t_test,
    relative_performance,
    spearman,
    sweep_row,
    width_advice,
)
from satlens.errors import (
    DegenerateBaseline,
    DomainError,
    NoQualifyingDelta,
    TooFewLayers,
    TooFewPairs,
    ZeroVariance,
)
from satlens.numeric import rng_from_seed


def brute_force_tails(s):
    """Enumerate every window, keep qualifying ones not contained in a larger one."""
    s = list(map(float, s))
    n = len(s)

    def qualifies(a, b):
        length = b - a + 1
        if length < 3 or length == n:
            return False
        inside = sum(s[a:b + 1])
        bound = 0.5 * (sum(s) - inside) / (n - length)
        return inside / length <= bound and s[a] <= bound and s[b] <= bound

    cands = [(a, b) for a in range(n) for b in range(a, n) if qualifies(a, b)]
    maximal = [w for w in cands if not any(o != w and o[0] <= w[0] and o[1] >= w[1] for o in cands)]
    chosen = []
    for a, b in sorted(maximal, key=lambda w: (-(w[1] - w[0]), w[0])):
        if all(b < c or a > d for c, d in chosen):
            chosen.append((a, b))
    return sorted(chosen)


def spans(tails):
    return [(t.start, t.end) for t in tails]


def test_hand_cases():
    tails = detect_tails([0.5, 0.5, 0.5, 0.1, 0.1, 0.1])
    assert spans(tails) == [(3, 5)]
    assert tails[0].tail_mean == pytest.approx(0.1)
    assert tails[0].rest_mean == pytest.approx(0.5)
    assert detect_tails([0.3] * 8) == []
    assert detect_tails([0.5, 0.5, 0.5, 0.5, 0.1, 0.1]) == []


def test_too_few_layers():
    with pytest.raises(TooFewLayers):
        detect_tails([0.1, 0.2, 0.3])


def test_tail_invariants():
    for t in detect_tails([0.9, 0.8, 0.05, 0.04, 0.06, 0.7, 0.9, 0.1, 0.1, 0.1]):
        assert t.length >= 3
        assert t.tail_mean <= 0.5 * t.rest_mean + 1e-12


def test_matches_brute_force_on_random_vectors():
    rng = rng_from_seed(0)
    for _ in range(300):
        n = int(rng.integers(4, 41))
        s = rng.random(n)
        if rng.random() < 0.5:
            s[rng.integers(0, n):] *= 0.1
        assert spans(detect_tails(s)) == brute_force_tails(s)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.001, 1.0), min_size=4, max_size=20), st.floats(0.01, 100))
def test_scale_invariance(s, c):
    assert spans(detect_tails(s)) == spans(detect_tails(np.asarray(s) * c))


def test_t_test_examples():
    r = paired_t_test([(0.25, 0.5), (0.75, 0.5), (0.5, 0.5)])
    assert r.t == 0 and r.p == pytest.approx(1.0)
    r = paired_t_test([(1, 0), (2, 0), (3, 0)])
    assert (r.mean_diff, r.std) == (2.0, 1.0)
    assert r.t == pytest.approx(2 * math.sqrt(3))
    assert r.p == pytest.approx(0.0742, abs=5e-5)
    assert r.p == pytest.approx(sps.ttest_rel([1, 2, 3], [0, 0, 0]).pvalue, abs=1e-12)


def test_t_test_from_rounded_summary():
    # rounded summary: mean difference -0.0005, sd 0.0009, 26 pairs, reference t = -2.81, p = 0.010
    t = -0.0005 / (0.0009 / math.sqrt(26))
    assert t == pytest.approx(-2.81, abs=0.15)
    rng = rng_from_seed(1)
    d = rng.standard_normal(26)
    d = (d - d.mean()) / d.std(ddof=1) * 0.0009 - 0.0005
    r = paired_t_test(np.stack([0.9 + d, np.full(26, 0.9)], axis=1))
    assert r.t == pytest.approx(t, abs=1e-6)
    # the inputs are rounded, so p is only as close as t allows
    assert r.p == pytest.approx(0.010, abs=2e-3)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**31))
def test_t_test_antisymmetric(n, seed):
    pairs = rng_from_seed(seed).random((n, 2))
    if np.ptp(pairs[:, 0] - pairs[:, 1]) == 0:
        return
    a, b = paired_t_test(pairs), paired_t_test(pairs[:, ::-1])
    assert a.t == pytest.approx(-b.t, rel=1e-12)
    assert abs(a.p - b.p) <= 1e-12


def test_t_test_errors():
    with pytest.raises(ZeroVariance):
        paired_t_test([(0.5, 0.4), (0.6, 0.5)])
    with pytest.raises(TooFewPairs):
        paired_t_test([(0.5, 0.4)])
    with pytest.raises(DomainError):
        paired_t_test([0.1, 0.2])


def test_relative_performance():
    assert relative_performance(0.7, 0.7) == 1.0
    assert relative_performance(0.45, 0.9) == 0.5
    assert relative_performance(0.95, 0.9) > 1.0
    with pytest.raises(DegenerateBaseline):
        relative_performance(0.5, 0.0)


@given(st.floats(1e-6, 1.0))
def test_relative_performance_self(x):
    assert relative_performance(x, x) == 1.0


def make_runs(ps, n=10):
    """Pairs whose paired t-test p-value equals each target."""
    runs = {}
    base = rng_from_seed(2).standard_normal(n)
    base = (base - base.mean()) / base.std(ddof=1)
    for i, p in enumerate(ps):
        t = sps.t.isf(p / 2, n - 1)
        d = base + t / math.sqrt(n)
        runs[0.9 + i * 0.01] = list(zip(0.5 + 0.01 * d, [0.5] * n))
    return runs


def test_min_delta_picks_first_non_significant():
    runs = make_runs([0.001, 0.003, 0.2, 0.4])
    delta, table = min_delta_search(runs)
    assert delta == pytest.approx(0.92)
    assert [round(r.p, 3) for r in table] == [0.001, 0.003, 0.2, 0.4]
    assert [r.significant for r in table] == [True, True, False, False]


def test_min_delta_identity_row_selected():
    runs = {0.5: [(0.4, 0.8), (0.3, 0.7), (0.35, 0.8)], 1.0: [(0.8, 0.8), (0.7, 0.7), (0.8, 0.8)]}
    delta, table = min_delta_search(runs)
    assert delta == 1.0 and table[1].status == "ZeroVariance"


def test_min_delta_errors():
    with pytest.raises(NoQualifyingDelta):
        min_delta_search(make_runs([0.001, 0.002]))
    with pytest.raises(TooFewPairs):
        min_delta_search({0.9: [(0.5, 0.5)]})


def test_sweep_row_flags():
    assert sweep_row(0.9, [(0.5, 0.6)]).status == "TooFewPairs"
    shifted = sweep_row(0.9, [(0.5, 0.6), (0.4, 0.5)])
    assert shifted.status == "ZeroVariance" and shifted.p == 0.0


def test_width_advice():
    assert width_advice(0.25).action == "keep"
    assert width_advice(0.30).action == "keep"
    assert width_advice(0.20).action == "keep"
    a = width_advice(0.06)
    assert (a.action, a.factor) == ("shrink", 0.25)
    assert width_advice(0.01).factor == 0.125
    assert width_advice(0.19).factor == 1.0
    g = width_advice(0.9)
    assert (g.action, g.factor) == ("grow", 4.0)
    for bad in (0.0, 1.5, -0.1):
        with pytest.raises(DomainError):
            width_advice(bad)


def test_saturation_report_invariants():
    class E:
        def __init__(self, k, w):
            self.k, self.width, self.explained = k, w, 0.99
    r = SaturationReport.from_eigenspaces(["a", "b", "c"], [E(1, 4), E(3, 8), E(8, 8)], 2, 0.99)
    assert r.saturations == [0.25, 0.375, 1.0]
    assert abs(r.mean_saturation - np.mean(r.saturations)) <= 1e-12
    assert r.sum_dims == 12
    assert SaturationReport.from_dict(r.to_dict()) == r


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=3, max_size=15), st.integers(0, 2**31))
def test_spearman_matches_scipy(a, seed):
    b = rng_from_seed(seed).integers(0, 5, len(a))
    ours = spearman(a, b)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        assert np.isnan(ours)
        return
    ref = sps.spearmanr(a, b).statistic
    if np.isnan(ref):
        assert np.isnan(ours)
    else:
        assert ours == pytest.approx(ref, abs=1e-12)
