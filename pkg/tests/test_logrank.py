import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtetrial.logrank import logrank, logrank_batch, min_sample_size, pw_logrank, rejections, risk_table
from dtetrial.posterior import ArmSnapshot
from dtetrial.simulation import simulate_batch


def naive_logrank(c, t, after=-np.inf):
    """Direct transcription of the observed-minus-expected sum over event times."""
    times = sorted({x for x, e in zip(c.times, c.events) if e} | {x for x, e in zip(t.times, t.events) if e})
    num = var = 0.0
    for x in times:
        if x <= after:
            continue
        n1 = np.sum(c.times >= x)
        n2 = np.sum(t.times >= x)
        d1 = np.sum(c.events & (c.times == x))
        d = d1 + np.sum(t.events & (t.times == x))
        n = n1 + n2
        num += d1 - n1 * d / n
        if n > 1:
            var += n1 * n2 * d * (n - d) / (n * n * (n - 1))
    return num / np.sqrt(var)


def random_arms(rng, ties=False):
    def arm(scale):
        n = rng.integers(5, 30)
        t = rng.exponential(scale, n)
        if ties:
            t = np.round(t * 2) / 2
        return ArmSnapshot(t, rng.integers(0, 2, n) | (rng.random(n) < 0.5))
    return arm(3.0), arm(4.0)


@pytest.mark.parametrize("ties", [False, True])
def test_matches_statsmodels(ties):
    survdiff = pytest.importorskip("statsmodels.duration.survfunc").survdiff
    rng = np.random.default_rng(1 + ties)
    for _ in range(30):
        c, t = random_arms(rng, ties)
        if c.n_events + t.n_events == 0:
            continue
        time = np.r_[c.times, t.times]
        status = np.r_[c.events, t.events].astype(int)
        group = np.r_[np.zeros(len(c)), np.ones(len(t))]
        chisq, p = survdiff(time, status, group)
        res = logrank(c, t)
        assert res.statistic**2 == pytest.approx(chisq, rel=1e-9)
        assert res.p_value == pytest.approx(p, rel=1e-7)


def test_pw_matches_naive_oracle():
    rng = np.random.default_rng(3)
    for _ in range(30):
        c, t = random_arms(rng, ties=True)
        s = rng.uniform(0.5, 2.5)
        try:
            got = pw_logrank(c, t, s).statistic
        except ValueError:
            continue
        assert got == pytest.approx(naive_logrank(c, t, s), rel=1e-12)


def test_antisymmetry_and_pw_reduction():
    rng = np.random.default_rng(4)
    c, t = random_arms(rng)
    a, b = logrank(c, t), logrank(t, c)
    assert a.statistic == pytest.approx(-b.statistic, rel=1e-12)
    assert a.p_value == pytest.approx(b.p_value, rel=1e-12)
    first = min(c.times[c.events].min(), t.times[t.events].min())
    assert pw_logrank(c, t, first / 2).statistic == logrank(c, t).statistic


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    c, t = random_arms(rng, ties=True)
    if c.n_events + t.n_events == 0:
        return
    p, q = rng.permutation(len(c)), rng.permutation(len(t))
    try:
        ref = logrank(c, t).statistic
    except ValueError:
        return
    got = logrank(ArmSnapshot(c.times[p], c.events[p]), ArmSnapshot(t.times[q], t.events[q])).statistic
    assert got == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_ties_aggregate_into_one_row():
    c = ArmSnapshot([1, 1, 2, 3], [1, 1, 0, 1])
    t = ArmSnapshot([1, 2, 2, 4], [1, 1, 1, 0])
    tab = risk_table(c, t)
    assert list(tab.times) == [1, 2, 3]
    assert list(tab.d1) == [2, 0, 1] and list(tab.d2) == [1, 2, 0]


def test_batch_matches_scalar(base_design):
    b = simulate_batch(base_design, "H1", 200, 5)
    from dtetrial.logrank import _final_snapshot

    z, ev, _ = _final_snapshot(base_design, b, 40)
    z = np.round(z, 1)  # force ties onto the exact fallback path
    stat = logrank_batch(z, ev)
    pw = logrank_batch(z, ev, after=b.s)
    for i in range(0, 200, 7):
        c, t = ArmSnapshot(z[i, 0], ev[i, 0]), ArmSnapshot(z[i, 1], ev[i, 1])
        assert stat[i] == pytest.approx(logrank(c, t).statistic, rel=1e-10)
        assert pw[i] == pytest.approx(pw_logrank(c, t, b.s[i]).statistic, rel=1e-10)


def test_null_size_close_to_alpha(base_design):
    b = simulate_batch(base_design, "H0", 4000, 2)
    rate = rejections("logrank", base_design, b, 40, alpha=0.10).mean()
    assert abs(rate - 0.10) < 3 * np.sqrt(0.09 / 4000)


def test_min_sample_size_trivial_target(base_design):
    null = base_design.replace(treatment_median=2.8)
    r = min_sample_size("logrank", null, 2.28, alpha=0.10, target_power=0.05, n_lo=5, n_hi=60,
                        nsim_search=500, nsim_final=500)
    assert r["n"] == 5


def test_errors():
    c = ArmSnapshot([1.0, 2.0], [0, 0])
    with pytest.raises(ValueError):
        logrank(c, c)
    with pytest.raises(ValueError):
        pw_logrank(ArmSnapshot([1.0], [1]), ArmSnapshot([0.5], [1]), 2.0)
