"""How the futility probability moves with the pre-separation event count.

With every patient observed and no interim looks, the total time on
test pieces are Gamma distributed given the event counts. Sweeping the
number of treatment events before S (d01) from 0 to n_r mimics moving S
from 0 to the end of follow-up. Everything is computed in units of mu0,
so only the ratios mu1/mu0, b0/mu0 and b1/mu0 matter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from .stats import beta_cdf

WINDOWS = {"Q25-Q75": (0.25, 0.75), "Q10-Q90": (0.10, 0.90)}


@dataclass(frozen=True)
class TrendConfig:
    """Settings for the d01 sweep.

    ``mu0``/``mu1`` are mean-scale. Under H0 every piece uses
    ``null_mean`` (default ``mu0``). ``b0``/``b1`` default to 3*mu0 and
    6*mu0. ``metric`` picks the tracked quantity: ``continue`` is
    P(treatment median > control median), the chance the trial keeps
    going; ``worse`` is its complement.
    """

    n_r: int = 50
    B: float = 0.05
    hypothesis: str = "H1"
    mu0: float = 2.8 / np.log(2)
    mu1: float = 6.57 / np.log(2)
    a0: float = 4.0
    a1: float = 4.0
    b0: float | None = None
    b1: float | None = None
    null_mean: float | None = None
    grid: int = 100
    nsim: int = 10_000
    metric: str = "continue"

    def __post_init__(self):
        if not 0 < self.B < 1:
            raise ValueError("B must lie in (0, 1)")
        if self.hypothesis not in ("H0", "H1"):
            raise ValueError("hypothesis must be H0 or H1")
        if self.metric not in ("continue", "worse"):
            raise ValueError("metric must be 'continue' or 'worse'")
        if self.n_r < 1 or self.grid < 2:
            raise ValueError("need n_r >= 1 and grid >= 2")

    def ratios(self):
        """(pre-S, post-S, control) means and prior scales in units of mu0."""
        b0 = 3.0 if self.b0 is None else self.b0 / self.mu0
        b1 = 6.0 if self.b1 is None else self.b1 / self.mu0
        if self.hypothesis == "H1":
            return 1.0, self.mu1 / self.mu0, 1.0, b0, b1
        r = 1.0 if self.null_mean is None else self.null_mean / self.mu0
        return r, r, r, b0, b1


@dataclass
class TrendCurve:
    d01: np.ndarray
    quantile: np.ndarray
    config: TrendConfig


def probability_draws(config: TrendConfig, d01: float, rng: np.random.Generator) -> np.ndarray:
    """Draws of the tracked posterior probability at one d01 value."""
    pre, post, ctrl, b0, b1 = config.ratios()
    n = config.nsim
    d0 = float(config.n_r)
    d11 = config.n_r - d01
    x = rng.standard_gamma(d01, n) * pre if d01 > 0 else np.zeros(n)
    y = rng.standard_gamma(d11, n) * post if d11 > 0 else np.zeros(n)
    z = rng.standard_gamma(d0, n) * ctrl
    num = b0 + x + z
    p = beta_cdf(num / (num + b1 + y), config.a0 + d0 + d01, config.a1 + d11)
    return 1.0 - p if config.metric == "continue" else p


def quantile_trend(config: TrendConfig, seed: int = 0) -> TrendCurve:
    """B-quantile of the tracked probability over an evenly spaced d01 grid.

    Grid point ``i`` draws from its own stream, so points are independent
    of evaluation order.
    """
    grid = np.linspace(0.0, config.n_r, config.grid)
    q = np.empty(grid.size)
    for i, d in enumerate(grid):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(i,))))
        q[i] = np.quantile(probability_draws(config, float(d), rng), config.B)
    return TrendCurve(grid, q, config)


def window_slice(size: int, window: str) -> slice:
    """Grid positions between two quantile levels, e.g. 25..74 of 100."""
    lo, hi = WINDOWS[window]
    return slice(int(round(lo * size)), int(round(hi * size)))


def trend_summary(curve: TrendCurve, window: str = "Q25-Q75") -> dict:
    """Min, max, range and Spearman correlation with d01 inside a window."""
    if window not in WINDOWS:
        raise ValueError(f"window must be one of {sorted(WINDOWS)}")
    sl = window_slice(curve.d01.size, window)
    q = curve.quantile[sl]
    d = curve.d01[sl]
    if q.size == 0:
        raise ValueError("empty curve window")
    constant = bool(np.all(q == q[0]))
    rho = 0.0 if constant or q.size < 2 else float(spearmanr(d, q).statistic)
    return {
        "window": window,
        "min": float(q.min()),
        "max": float(q.max()),
        "range": float(q.max() - q.min()),
        "spearman_rho": rho,
        "constant": constant,
    }
