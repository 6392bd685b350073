"""Conjugate posterior updates and the futility probability given S."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .stats import LN2, TruncGammaPrior, beta_cdf


@dataclass(frozen=True)
class ArmSnapshot:
    """Observed times ``z`` and event flags ``delta`` for one arm."""

    times: np.ndarray
    events: np.ndarray

    def __init__(self, times, events):
        t = np.asarray(times, dtype=float).ravel()
        e = np.asarray(events).ravel()
        if t.shape != e.shape:
            raise ValueError("times and events must have equal length")
        if np.any(t < 0):
            raise ValueError("observed times must be non-negative")
        if not np.all(np.isin(e, (0, 1))):
            raise ValueError("event flags must be 0 or 1")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "events", e.astype(bool))

    def __len__(self):
        return self.times.size

    @property
    def n_events(self) -> int:
        return int(self.events.sum())


@dataclass(frozen=True)
class SufficientStats:
    d0: float
    d01: float
    d11: float
    sum_z0: float
    ttot_01: float
    ttot_12: float


@dataclass(frozen=True)
class PriorSpec:
    """Inverse-Gamma hyperparameters, mean scale, plus the S prior."""

    a0: float
    b0: float
    a1: float
    b1: float
    s_prior: TruncGammaPrior | None = None

    def __post_init__(self):
        if min(self.a0, self.b0, self.a1, self.b1) <= 0:
            raise ValueError("inverse-Gamma hyperparameters must be positive")

    @classmethod
    def default(cls, null_median: float, s_prior: TruncGammaPrior | None = None):
        """a0 = a1 = 4, b0 = 3 * mu0, b1 = 2 * b0 with mu0 = null median / ln 2."""
        b0 = 3.0 * null_median / LN2
        return cls(4.0, b0, 4.0, 2.0 * b0, s_prior)


@dataclass(frozen=True)
class Boundary:
    """Futility threshold C(n_r) = 1 - lam * (n_r / N) ** gam."""

    lam: float
    gam: float

    def __post_init__(self):
        if not 0 <= self.lam <= 1:
            raise ValueError("lambda must lie in [0, 1]")
        if not self.gam > 0:
            raise ValueError("gamma must be positive")

    def threshold(self, n_r, N):
        return 1.0 - self.lam * (np.asarray(n_r, dtype=float) / N) ** self.gam

    def as_tuple(self):
        return (self.lam, self.gam)


@dataclass(frozen=True)
class InvGammaPosterior:
    shape: float
    scale: float

    def median_scale(self) -> "InvGammaPosterior":
        return InvGammaPosterior(self.shape, self.scale * LN2)


def ttot(times, t1: float, t2: float) -> float:
    """Total time on test within ``[t1, t2]``: sum of max(0, min(z, t2) - t1)."""
    if not 0 <= t1 <= t2:
        raise ValueError("need 0 <= t1 <= t2")
    z = times.times if isinstance(times, ArmSnapshot) else np.asarray(times, dtype=float)
    return float(np.maximum(0.0, np.minimum(z, t2) - t1).sum())


def sufficient_stats(control: ArmSnapshot, treatment: ArmSnapshot, s: float) -> SufficientStats:
    """Summarize both arms, splitting treatment events at ``s``.

    tau is the largest observed treatment time, censored or not, so the
    second TTOT covers all post-separation exposure.
    """
    if len(control) == 0 or len(treatment) == 0:
        raise ValueError("both arms need at least one subject")
    if s < 0:
        raise ValueError("s must be non-negative")
    z1 = treatment.times
    tau = max(float(z1.max()), s)
    ev = treatment.events
    return SufficientStats(
        d0=float(control.events.sum()),
        d01=float((ev & (z1 <= s)).sum()),
        d11=float((ev & (z1 > s)).sum()),
        sum_z0=float(control.times.sum()),
        ttot_01=ttot(z1, 0.0, s),
        ttot_12=ttot(z1, s, tau),
    )


def posterior_params(stats: SufficientStats, prior: PriorSpec) -> dict:
    """Inverse-Gamma posteriors for mu0 and mu1 on both scales."""
    p0 = InvGammaPosterior(prior.a0 + stats.d0 + stats.d01, prior.b0 + stats.ttot_01 + stats.sum_z0)
    p1 = InvGammaPosterior(prior.a1 + stats.d11, prior.b1 + stats.ttot_12)
    return {
        "mu0": p0,
        "mu1": p1,
        "median0": p0.median_scale(),
        "median1": p1.median_scale(),
    }


def beta_threshold(b0, b1, sum_z0, ttot_01, ttot_12):
    """Beta-CDF argument (b0 + ttot_01 + sum_z0) / (b0 + b1 + sum_z0 + ttot_01 + ttot_12)."""
    num = b0 + ttot_01 + sum_z0
    return num / (num + b1 + ttot_12)


def prob_worse_arrays(d0, d01, d11, sum_z0, ttot_01, ttot_12, prior: PriorSpec):
    """Vectorized P(median1 < median0 | data, S) for arrays of statistics."""
    x = beta_threshold(prior.b0, prior.b1, sum_z0, ttot_01, ttot_12)
    return beta_cdf(x, prior.a0 + d0 + d01, prior.a1 + d11)


def prob_treatment_worse(stats: SufficientStats, prior: PriorSpec) -> float:
    """Posterior probability that the treatment median is below control.

    With independent inverse-Gamma posteriors this reduces to a
    regularized incomplete beta function, so no sampling is needed.
    """
    return float(
        prob_worse_arrays(
            stats.d0, stats.d01, stats.d11, stats.sum_z0, stats.ttot_01, stats.ttot_12, prior
        )
    )


def futility_decision(prob: float, boundary: Boundary, n_r: int, N: int) -> bool:
    """True means stop. Ties at the threshold continue."""
    if not 0 < n_r <= N:
        raise ValueError("need 0 < n_r <= N")
    return bool(prob > boundary.threshold(n_r, N))
