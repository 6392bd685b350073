"""Weighted least-squares fit of the truncated-Gamma prior for S."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .stats import MIN_TRUNCATION_MASS, TruncGammaPrior, trunc_gamma_summaries

STATISTICS = ("mean", "median", "sd", "q025", "q975")

# search box for (shape, scale); the fit never leaves it
SHAPE_BOUNDS = (0.1, 50.0)
SCALE_BOUNDS = (0.01, 5.0)

_PENALTY = 1e10
_FLAT_TOL = 1e-8


class ElicitationError(ValueError):
    pass


@dataclass(frozen=True)
class ExpertSummary:
    """One expert's answers. Any subset of the five statistics may be given."""

    mean: float | None = None
    median: float | None = None
    sd: float | None = None
    q025: float | None = None
    q975: float | None = None

    def provided(self) -> dict:
        return {k: getattr(self, k) for k in STATISTICS if getattr(self, k) is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "ExpertSummary":
        unknown = set(d) - set(STATISTICS)
        if unknown:
            raise ElicitationError(f"unknown expert field(s): {sorted(unknown)}")
        vals = {}
        for k, v in d.items():
            if v is None:
                continue
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ElicitationError(f"expert field {k!r} must be a number, got {v!r}")
            vals[k] = float(v)
        if not vals:
            raise ElicitationError("expert entry provides no statistic")
        return cls(**vals)


@dataclass(frozen=True)
class ElicitationWeights:
    """Weights for (mean, median, sd, q025, q975)."""

    w1: float = 4.0
    w2: float = 4.0
    w3: float = 2.0
    w4: float = 1.0
    w5: float = 1.0

    def __post_init__(self):
        if any(w < 0 for w in self.as_tuple()):
            raise ElicitationError("weights must be non-negative")

    def as_tuple(self):
        return (self.w1, self.w2, self.w3, self.w4, self.w5)

    def as_dict(self) -> dict:
        return dict(zip(STATISTICS, self.as_tuple()))

    @classmethod
    def from_sequence(cls, seq) -> "ElicitationWeights":
        seq = [float(x) for x in seq]
        if len(seq) != 5:
            raise ElicitationError("exactly five weights are required")
        return cls(*seq)


@dataclass
class ElicitationResult:
    prior: TruncGammaPrior
    objective: float
    summaries: dict
    weakly_identified: bool
    candidates: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "shape": self.prior.shape,
            "scale": self.prior.scale,
            "lower": self.prior.lower,
            "upper": self.prior.upper,
            "objective": self.objective,
            "summaries": self.summaries,
            "weakly_identified": self.weakly_identified,
        }


def _targets(experts, weights: ElicitationWeights, L, U):
    """Flatten expert inputs into (statistic, weight, value) terms.

    Terms whose weight is zero are dropped here, so they cannot influence
    the fit at all. Weights for statistics nobody supplied are ignored.
    """
    if not experts:
        raise ElicitationError("at least one expert is required")
    w = weights.as_dict()
    terms = []
    for e in experts:
        for k, v in e.provided().items():
            if k == "sd":
                if not v > 0:
                    raise ElicitationError("sd must be positive")
            elif not (L <= v <= U):
                raise ElicitationError(f"{k}={v} lies outside [{L}, {U}]")
            if w[k] > 0:
                terms.append((k, w[k], v))
    if not any(e.provided() for e in experts):
        raise ElicitationError("no statistic provided by any expert")
    if not terms:
        raise ElicitationError("every provided statistic has zero weight")
    # canonical order makes the objective independent of expert order
    terms.sort()
    return terms


def wls_objective(shape, scale, terms, L, U) -> float:
    """Weighted squared distance between prior summaries and expert values."""
    prior = TruncGammaPrior(shape, scale, L, U)
    if not prior.mass() >= MIN_TRUNCATION_MASS:
        return _PENALTY
    summ = trunc_gamma_summaries(prior, which={k for k, _, _ in terms})
    total = 0.0
    for k, w, v in terms:
        total += w * (summ[k] - v) ** 2
    return total if math.isfinite(total) else _PENALTY


def objective_for(experts, weights, L, U):
    """Objective as a function of (shape, scale), for diagnostics and tests."""
    terms = _targets(experts, weights, L, U)
    return lambda shape, scale: wls_objective(shape, scale, terms, L, U)


def fit_trunc_gamma(
    experts,
    weights: ElicitationWeights | None = None,
    L: float = 0.0,
    U: float = 1.0,
    screen: int = 25,
    maxiter: int = 2000,
) -> ElicitationResult:
    """Fit (shape, scale) of the truncated Gamma prior by weighted least squares.

    Nelder-Mead runs on (log shape, log scale) inside a fixed box. Starts
    are a 3x3 log-grid plus the best point of a ``screen`` x ``screen``
    log-grid scan, because the surface is nearly flat in the near-uniform
    regime.
    """
    if not L < U:
        raise ElicitationError("need L < U")
    weights = weights or ElicitationWeights()
    terms = _targets(list(experts), weights, L, U)
    lb = np.log([SHAPE_BOUNDS[0], SCALE_BOUNDS[0]])
    ub = np.log([SHAPE_BOUNDS[1], SCALE_BOUNDS[1]])

    def f(theta):
        theta = np.clip(theta, lb, ub)
        return wls_objective(math.exp(theta[0]), math.exp(theta[1]), terms, L, U)

    starts = [
        np.array([a, b])
        for a in np.linspace(lb[0], ub[0], 5)[1:-1]
        for b in np.linspace(lb[1], ub[1], 5)[1:-1]
    ]
    g0 = np.linspace(lb[0], ub[0], screen)
    g1 = np.linspace(lb[1], ub[1], screen)
    scan = [(f(np.array([a, b])), a, b) for a in g0 for b in g1]
    best_scan = min(scan)
    starts.append(np.array(best_scan[1:]))

    candidates = []
    for x0 in starts:
        res = optimize.minimize(
            f,
            x0,
            method="Nelder-Mead",
            bounds=list(zip(lb, ub)),
            options={"xatol": 1e-9, "fatol": 1e-14, "maxiter": maxiter},
        )
        x = np.clip(res.x, lb, ub)
        val = f(x)
        if val < _PENALTY:
            candidates.append((val, math.exp(x[0]), math.exp(x[1])))
    if not candidates:
        raise ElicitationError("optimizer did not find a valid truncation window")
    candidates.sort()
    top = candidates[:10]
    weak = (top[-1][0] - top[0][0]) < _FLAT_TOL and len(top) > 1
    if weak:
        val, shape, scale = min(top, key=lambda c: c[1])
    else:
        val, shape, scale = top[0]
    prior = TruncGammaPrior(shape, scale, L, U)
    return ElicitationResult(
        prior=prior,
        objective=float(val),
        summaries=trunc_gamma_summaries(prior),
        weakly_identified=weak,
        candidates=candidates,
    )


def density_table(prior: TruncGammaPrior, points: int = 201):
    """Grid of (s, density) pairs for the fitted prior."""
    xs = np.linspace(prior.lower, prior.upper, points)
    return xs, prior.pdf(xs)
