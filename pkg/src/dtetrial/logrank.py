"""Log-rank and piecewise weighted log-rank tests, plus simulated power.

Group 1 is the control arm, so a positive statistic means more control
events than expected under the null, i.e. evidence for the treatment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .posterior import ArmSnapshot, prob_worse_arrays
from .simulation import TrialConfig, batch_stats, simulate_batch

TESTS = ("logrank", "pw_logrank", "bayes")


@dataclass
class RiskTable:
    times: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    n1: np.ndarray
    n2: np.ndarray

    @property
    def d(self):
        return self.d1 + self.d2

    @property
    def n(self):
        return self.n1 + self.n2

    @property
    def e1(self):
        return self.n1 * self.d / self.n


@dataclass
class TestResult:
    statistic: float
    p_value: float


def risk_table(control: ArmSnapshot, treatment: ArmSnapshot, after: float | None = None) -> RiskTable:
    """Distinct event times with per-group events and numbers at risk.

    A subject is at risk at ``t`` if its observed time is ``>= t``.
    ``after`` keeps only event times strictly greater than it.
    """
    z1, e1 = control.times, control.events
    z2, e2 = treatment.times, treatment.events
    t = np.unique(np.concatenate([z1[e1], z2[e2]]))
    if after is not None:
        t = t[t > after]
    d1 = np.array([np.sum(e1 & (z1 == x)) for x in t], dtype=float)
    d2 = np.array([np.sum(e2 & (z2 == x)) for x in t], dtype=float)
    n1 = np.array([np.sum(z1 >= x) for x in t], dtype=float)
    n2 = np.array([np.sum(z2 >= x) for x in t], dtype=float)
    return RiskTable(t, d1, d2, n1, n2)


def _p_value(stat, two_sided):
    return 2 * norm.sf(abs(stat)) if two_sided else norm.sf(stat)


def _from_table(tab: RiskTable, two_sided: bool) -> TestResult:
    if tab.times.size == 0:
        raise ValueError("no events in the analysed range")
    n, d = tab.n, tab.d
    num = float(np.sum(tab.d1 - tab.e1))
    with np.errstate(invalid="ignore", divide="ignore"):
        v = np.where(n > 1, tab.n1 * tab.n2 * d * (n - d) / (n**2 * (n - 1)), 0.0)
    var = float(v.sum())
    if var <= 0:
        raise ValueError("zero variance: log-rank statistic undefined")
    stat = num / math.sqrt(var)
    return TestResult(stat, float(_p_value(stat, two_sided)))


def logrank(control: ArmSnapshot, treatment: ArmSnapshot, two_sided: bool = True) -> TestResult:
    return _from_table(risk_table(control, treatment), two_sided)


def pw_logrank(control: ArmSnapshot, treatment: ArmSnapshot, s: float, two_sided: bool = True) -> TestResult:
    """Log-rank sums restricted to event times after ``s``."""
    tab = risk_table(control, treatment, after=s)
    if tab.times.size == 0:
        raise ValueError("no post-separation events")
    return _from_table(tab, two_sided)


def logrank_batch(z, ev, after=None):
    """Vectorized log-rank statistics for many trials.

    ``z`` and ``ev`` have shape (nsim, 2, n) with arm 0 = control. Rows
    with tied event times are recomputed exactly; ``after`` (scalar or
    (nsim,)) restricts the sums to later event times. Returns NaN where
    the variance is zero.
    """
    nsim, _, n = z.shape
    zz = z.reshape(nsim, 2 * n)
    ee = ev.reshape(nsim, 2 * n)
    g1 = np.zeros((nsim, 2 * n), bool)
    g1[:, :n] = True
    order = np.argsort(zz, axis=1, kind="stable")
    zs = np.take_along_axis(zz, order, 1)
    es = np.take_along_axis(ee, order, 1)
    gs = np.take_along_axis(g1, order, 1)
    at_risk = (2 * n - np.arange(2 * n)).astype(float)
    ctrl_before = np.cumsum(gs, axis=1) - gs
    n1 = n - ctrl_before
    use = es.copy()
    if after is not None:
        use &= zs > np.asarray(after, dtype=float).reshape(-1, 1)
    frac = n1 / at_risk
    num = np.sum(np.where(use, gs - frac, 0.0), axis=1)
    var = np.sum(np.where(use, frac * (1 - frac), 0.0), axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        stat = np.where(var > 0, num / np.sqrt(var), np.nan)
    # ties among observed times break the one-event-per-row shortcut
    tied = np.any((np.diff(zs, axis=1) == 0) & (es[:, 1:] | es[:, :-1]), axis=1)
    for i in np.flatnonzero(tied):
        c = ArmSnapshot(z[i, 0], ev[i, 0])
        t = ArmSnapshot(z[i, 1], ev[i, 1])
        a = None if after is None else float(np.broadcast_to(after, (nsim,))[i])
        try:
            stat[i] = _from_table(risk_table(c, t, after=a), True).statistic
        except ValueError:
            stat[i] = np.nan
    return stat


def _final_snapshot(config: TrialConfig, batch, n):
    enr = batch.enroll[:, :, :n]
    ev = batch.event[:, :, :n]
    t = enr[:, :, n - 1].max(axis=1) + config.fup
    fu = t[:, None, None] - enr
    z = np.minimum(ev, fu)
    return z, ev <= fu, np.broadcast_to(t, (batch.nsim,))


def rejections(test: str, config: TrialConfig, batch, n: int, alpha: float = 0.10, two_sided: bool = True):
    """Reject flags for each simulated trial using its first ``n`` patients per arm.

    ``bayes`` is a single final look that rejects when the posterior
    probability of a worse treatment is at most ``1 - lambda``.
    """
    if test not in TESTS:
        raise ValueError(f"test must be one of {TESTS}")
    z, ev, t = _final_snapshot(config, batch, n)
    s = batch.s if config.s_analysis is None else np.full(batch.nsim, config.s_analysis)
    if test == "bayes":
        st = batch_stats(batch, n, t, s)
        p = prob_worse_arrays(prior=config.posterior_prior, **st)
        return p <= 1 - config.boundary.lam
    stat = logrank_batch(z, ev, after=s if test == "pw_logrank" else None)
    crit = norm.isf(alpha / 2) if two_sided else norm.isf(alpha)
    if two_sided:
        return np.nan_to_num(np.abs(stat)) > crit
    return np.nan_to_num(stat) > crit


def power_by_sim(
    test: str,
    config: TrialConfig,
    per_arm_n: int,
    s_truth: float | None,
    hypothesis: str = "H1",
    nsim: int = 10_000,
    seed: int = 0,
    alpha: float = 0.10,
    two_sided: bool = True,
    workers: int = 1,
) -> float:
    """Fraction of simulated single-analysis trials that reject H0.

    Every patient is followed until ``fup`` after the last enrollment.
    """
    cfg = config.replace(schedule=(per_arm_n,))
    batch = simulate_batch(cfg, hypothesis, nsim, seed, s_truth=s_truth, n=per_arm_n, workers=workers)
    return float(rejections(test, cfg, batch, per_arm_n, alpha, two_sided).mean())


def min_sample_size(
    test: str,
    config: TrialConfig,
    s_truth: float | None,
    alpha: float = 0.10,
    target_power: float = 0.85,
    seed: int = 0,
    n_lo: int = 5,
    n_hi: int = 400,
    nsim_search: int = 4_000,
    nsim_final: int = 10_000,
    two_sided: bool = True,
    workers: int = 1,
) -> dict:
    """Smallest per-arm N whose simulated power reaches ``target_power``.

    Bisection on a ``nsim_search`` pool, then a local walk on a
    ``nsim_final`` pool. Pools are prefix-stable in N, so every candidate
    shares the same patients.
    """
    if not 0 < target_power < 1:
        raise ValueError("target power must lie in (0, 1)")
    cfg = config.replace(schedule=(n_hi,))

    def pool(nsim):
        return simulate_batch(cfg, "H1", nsim, seed, s_truth=s_truth, n=n_hi, workers=workers)

    def power(batch, n):
        c = config.replace(schedule=(n,))
        return float(rejections(test, c, batch, n, alpha, two_sided).mean())

    b = pool(nsim_search)
    lo, hi = n_lo, n_hi
    if power(b, hi) < target_power:
        raise ValueError(f"target power not reached at N={n_hi}")
    if power(b, lo) >= target_power:
        hi = lo
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if power(b, mid) >= target_power:
            hi = mid
        else:
            lo = mid
    n = hi
    b = pool(nsim_final)
    p = power(b, n)
    while p < target_power and n < n_hi:
        n += 1
        p = power(b, n)
    while n > n_lo:
        q = power(b, n - 1)
        if q < target_power:
            break
        n, p = n - 1, q
    return {"n": n, "power": p, "nsim": nsim_final}
