"""Grid calibration of the futility boundary (lambda, gamma).

Every candidate is scored on the same simulated trials (common random
numbers), so the grid search costs one simulation per hypothesis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


from .posterior import Boundary
from .simulation import (
    LookData,
    TrialConfig,
    apply_boundary,
    look_probabilities,
    simulate_batch,
    summarize,
)

DEFAULT_LAMBDAS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
DEFAULT_GAMMAS = (0.25, 0.5, 0.75, 1.0)
MODES = ("average", "boundary")


def default_grid(lambdas=DEFAULT_LAMBDAS, gammas=DEFAULT_GAMMAS) -> list:
    return [Boundary(lam, gam) for lam in lambdas for gam in gammas]


class InfeasibleError(RuntimeError):
    """No boundary on the grid satisfies the error constraints."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


def _rates(looks: LookData, boundary: Boundary):
    _, early, reject = apply_boundary(looks, boundary)
    return float(reject.mean()), float(early.mean())


@dataclass
class CalibrationData:
    """Cached look probabilities for H0 and H1, reused across boundaries.

    ``endpoints`` holds H0 looks simulated at S = L and S = U when
    boundary control is requested.
    """

    config: TrialConfig
    h0: LookData
    h1: LookData
    endpoints: dict = field(default_factory=dict)

    @property
    def nsim(self) -> int:
        return self.h0.prob.shape[1]

    def metrics(self, boundary: Boundary) -> dict:
        t1, ps0 = _rates(self.h0, boundary)
        pw, ps1 = _rates(self.h1, boundary)
        out = {
            "lambda": boundary.lam,
            "gamma": boundary.gam,
            "avg_type1": t1,
            "avg_power": pw,
            "pet_h0": ps0,
            "pet_h1": ps1,
            "se_type1": math.sqrt(t1 * (1 - t1) / self.nsim),
            "se_power": math.sqrt(pw * (1 - pw) / self.h1.prob.shape[1]),
        }
        for key, looks in self.endpoints.items():
            out[f"type1_{key}"] = _rates(looks, boundary)[0]
        return out


def prepare(
    config: TrialConfig,
    nsim: int = 10_000,
    seed: int = 0,
    mode: str = "average",
    workers: int = 1,
    schedule=None,
    batches=None,
) -> CalibrationData:
    """Simulate the calibration trials once.

    ``batches`` may carry pre-simulated (H0, H1) pools whose first
    patients are used, which lets sample-size searches share draws.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    sched = tuple(config.schedule if schedule is None else schedule)
    if batches is None:
        n = sched[-1]
        b0 = simulate_batch(config, "H0", nsim, seed, n=n, workers=workers)
        b1 = simulate_batch(config, "H1", nsim, seed, n=n, workers=workers)
    else:
        b0, b1 = batches
    data = CalibrationData(
        config,
        look_probabilities(config, b0, sched),
        look_probabilities(config, b1, sched),
    )
    if mode == "boundary":
        pr = config.s_prior
        for key, s in (("L", pr.lower), ("U", pr.upper)):
            b = simulate_batch(config, "H0", nsim, seed, s_truth=s, n=sched[-1], workers=workers, stream_offset=1)
            data.endpoints[key] = look_probabilities(config, b, sched)
    return data


@dataclass
class AverageMetrics:
    avg_type1: float
    avg_power: float
    se_type1: float
    se_power: float


def average_metrics(
    config: TrialConfig, boundary: Boundary, nsim: int = 10_000, seed: int = 0, workers: int = 1
) -> AverageMetrics:
    """Type I error and power averaged over the prior of S."""
    m = prepare(config, nsim, seed, workers=workers).metrics(boundary)
    return AverageMetrics(m["avg_type1"], m["avg_power"], m["se_type1"], m["se_power"])


@dataclass
class CalibrationReport:
    chosen: Boundary | None
    avg_type1: float | None
    avg_power: float | None
    alpha: float
    mode: str
    nsim: int
    grid: list
    boundary_type1: dict | None = None
    closest: list = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.chosen is not None

    def to_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "chosen": None if self.chosen is None else {"lambda": self.chosen.lam, "gamma": self.chosen.gam},
            "avg_type1": self.avg_type1,
            "avg_power": self.avg_power,
            "boundary_type1": self.boundary_type1,
            "alpha": self.alpha,
            "mode": self.mode,
            "nsim": self.nsim,
            "closest": self.closest,
            "grid": self.grid,
        }


def _is_feasible(row, alpha, mode):
    if row["avg_type1"] > alpha:
        return False
    if mode == "boundary":
        return row["type1_L"] <= alpha and row["type1_U"] <= alpha
    return True


def select(data: CalibrationData, alpha: float, grid=None, mode: str = "average") -> CalibrationReport:
    """Pick the most powerful feasible boundary from ``grid``.

    Candidates within one Monte Carlo standard error of the best power
    count as tied; among those the smaller lambda, then the smaller gamma
    wins.
    """
    grid = default_grid() if grid is None else list(grid)
    if not grid:
        raise ValueError("empty calibration grid")
    if mode == "boundary" and not data.endpoints:
        raise ValueError("boundary mode needs endpoint simulations")
    rows = [data.metrics(b) for b in grid]
    for r in rows:
        r["feasible"] = _is_feasible(r, alpha, mode)
    feas = [(b, r) for b, r in zip(grid, rows) if r["feasible"]]
    if not feas:
        excess = lambda r: max(r["avg_type1"], r.get("type1_L", 0), r.get("type1_U", 0)) - alpha  # noqa: E731
        closest = sorted(rows, key=excess)[:5]
        return CalibrationReport(None, None, None, alpha, mode, data.nsim, rows, None, closest)
    best = max(r["avg_power"] for _, r in feas)
    se = max(r["se_power"] for _, r in feas if r["avg_power"] == best)
    tied = [(b, r) for b, r in feas if r["avg_power"] >= best - se]
    b, r = min(tied, key=lambda br: (br[0].lam, br[0].gam))
    bt = {"L": r["type1_L"], "U": r["type1_U"]} if mode == "boundary" else None
    return CalibrationReport(b, r["avg_type1"], r["avg_power"], alpha, mode, data.nsim, rows, bt)


def calibrate(
    config: TrialConfig,
    alpha: float = 0.10,
    grid=None,
    mode: str = "average",
    nsim: int = 10_000,
    seed: int = 0,
    workers: int = 1,
) -> CalibrationReport:
    """Search ``grid`` for the boundary maximizing average power subject to
    average type I error <= alpha (and endpoint control in ``boundary`` mode).

    An infeasible search returns a report with ``chosen = None`` and the
    closest candidates.
    """
    data = prepare(config, nsim, seed, mode=mode, workers=workers)
    return select(data, alpha, grid, mode)


def error_power_curve(
    config: TrialConfig, boundary: Boundary, s_grid, nsim: int = 10_000, seed: int = 0, workers: int = 1
) -> list:
    """Type I error and power at each fixed true S, same seeds at every S."""
    cfg = config.replace(boundary=boundary)
    out = []
    for s in s_grid:
        r0 = summarize(look_probabilities(cfg, simulate_batch(cfg, "H0", nsim, seed, s_truth=s, workers=workers)), boundary)
        r1 = summarize(look_probabilities(cfg, simulate_batch(cfg, "H1", nsim, seed, s_truth=s, workers=workers)), boundary)
        out.append({
            "s": float(s),
            "type1": r0.prn,
            "power": r1.prn,
            "se_type1": r0.mc_se["prn"],
            "se_power": r1.mc_se["prn"],
        })
    return out


def pareto_optimal(rows, chosen: Boundary) -> bool:
    """True if no grid row has strictly lower type I and strictly higher power."""
    c = next(r for r in rows if (r["lambda"], r["gamma"]) == chosen.as_tuple())
    return not any(r["avg_type1"] < c["avg_type1"] and r["avg_power"] > c["avg_power"] for r in rows)

