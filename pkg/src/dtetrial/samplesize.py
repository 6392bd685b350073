"""Two-stage sample-size search.

Outline: a Schoenfeld start with a delay adjustment, a provisional
interim at 70% of n, boundary calibration, interim placement by the
weighted expected-sample-size objective, then escalation of n in fixed
steps until the simulated average power reaches the target.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from scipy import integrate
from scipy.stats import norm

from .calibration import CalibrationData, default_grid, prepare, select
from .posterior import Boundary
from .simulation import AccrualModel, TrialConfig, simulate_batch
from .stats import LN2, PiecewiseExpModel, TruncGammaPrior, overall_to_post

STRATEGIES = ("optimal", "pragmatic")


class SampleSizeError(RuntimeError):
    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


@dataclass
class SampleSizeRequest:
    control_median: float
    treatment_median: float
    lower: float
    upper: float
    s_likely: float
    shape: float
    scale: float
    alpha: float = 0.10
    beta: float = 0.15
    fup: float = 6.0
    rate: float = 6.0
    w: float = 0.5
    earlystop_prob: float | None = None
    strategy: str = "optimal"
    seed: int = 123
    nsim: int = 10_000
    accrual: str = "deterministic"
    one_sided: bool = False
    increment: int = 5
    nmax_ceiling: int = 500

    def __post_init__(self):
        if not self.treatment_median > self.control_median:
            raise ValueError("treatment median must exceed control median")
        if not (0 < self.alpha < 1 and 0 < self.beta < 1):
            raise ValueError("alpha and beta must lie in (0, 1)")
        if not 0 <= self.w <= 1:
            raise ValueError("w must lie in [0, 1]")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")

    def trial_config(self, schedule) -> TrialConfig:
        return TrialConfig(
            control_median=self.control_median,
            treatment_median=self.treatment_median,
            s_likely=self.s_likely,
            s_prior=TruncGammaPrior(self.shape, self.scale, self.lower, self.upper),
            schedule=tuple(schedule),
            accrual=AccrualModel(self.accrual, self.rate),
            fup=self.fup,
        )


def schoenfeld_events(control_median, treatment_median, alpha, beta, one_sided=False) -> float:
    """4 (z_a + z_b)^2 / log(ratio)^2 with a two-sided alpha by default."""
    if treatment_median == control_median:
        raise ValueError("zero effect size: medians are equal")
    za = norm.ppf(1 - alpha) if one_sided else norm.ppf(1 - alpha / 2)
    zb = norm.ppf(1 - beta)
    return 4 * (za + zb) ** 2 / math.log(control_median / treatment_median) ** 2


def event_probability(control_median, post_treatment_median, s, n, rate, fup) -> float:
    """Chance a patient has an event by the final analysis, averaged over arms.

    Accrual is uniform on [0, n / rate] and the final look is ``fup``
    after the last enrollment, so follow-up is uniform on
    [fup, fup + n / rate].
    """
    mu0 = control_median / LN2
    trt = PiecewiseExpModel(mu0, post_treatment_median / LN2, s)
    a = n / rate
    if a == 0:
        return 0.5 * ((1 - math.exp(-fup / mu0)) + float(trt.cdf(fup)))

    def f(u):
        return 0.5 * ((1 - math.exp(-u / mu0)) + float(trt.cdf(u)))

    val, _ = integrate.quad(f, fup, fup + a, points=[s] if fup < s < fup + a else None)
    return val / a


@dataclass
class InitialEstimate:
    events: float
    event_prob: float
    n_per_arm: int


def schoenfeld_initial(req: SampleSizeRequest, max_iter: int = 100) -> InitialEstimate:
    """Per-arm n from the delay-adjusted Schoenfeld count.

    The event count is converted to patients by dividing by the event
    probability P, which depends on n through the accrual period, so the
    pair is iterated to a fixed point.
    """
    med = overall_to_post(req.control_median, req.treatment_median, req.s_likely)
    m0, m1 = med.post_control, med.post_treatment
    if m1 == m0:
        raise ValueError("zero post-separation effect at s_likely")
    za = norm.ppf(1 - req.alpha) if req.one_sided else norm.ppf(1 - req.alpha / 2)
    zb = norm.ppf(1 - req.beta)
    events = 4 * (za + zb) ** 2 / math.log(m1 / m0) ** 2 * (m0 + m1) / (m0 + req.treatment_median)
    n, seen = 40, set()
    for _ in range(max_iter):
        P = event_probability(req.control_median, m1, req.s_likely, n, req.rate, req.fup)
        nn = max(2, math.ceil(events / P / 2))
        if nn == n or nn in seen:
            n = max(n, nn)
            break
        seen.add(n)
        n = nn
    P = event_probability(req.control_median, m1, req.s_likely, n, req.rate, req.fup)
    return InitialEstimate(events, P, n)


def en_objective(ps_h0, ps_h1, n1, n, w, form: str = "printed") -> float:
    """Weighted expected-sample-size objective.

    ``printed`` counts ``n - n1`` patients for a trial that continues;
    ``full`` counts the whole ``n``, which is the expected sample size
    proper and is what the search minimizes.
    """
    cont = (n - n1) if form == "printed" else n
    e0 = (ps_h0 * n1 + (1 - ps_h0) * cont) / n
    e1 = (ps_h1 * n1 + (1 - ps_h1) * cont) / n
    return w * e0 + (1 - w) * (1 - e1)


@dataclass
class SampleSizeResult:
    n1: int
    n: int
    boundary: Boundary
    avg_type1: float
    avg_power: float
    ps_h0: float
    ps_h1: float
    en: float
    initial: InitialEstimate
    trace: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n1": self.n1,
            "n": self.n,
            "lambda": self.boundary.lam,
            "gamma": self.boundary.gam,
            "avg_type1": self.avg_type1,
            "avg_power": self.avg_power,
            "ps_h0": self.ps_h0,
            "ps_h1": self.ps_h1,
            "en": self.en,
            "initial": asdict(self.initial),
            "trace": self.trace,
        }


class _Pool:
    """H0/H1 trial pools shared by every (n1, n) the search visits.

    Pools are prefix-stable, so growing them keeps earlier patients.
    """

    def __init__(self, req: SampleSizeRequest, workers: int = 1):
        self.req = req
        self.workers = workers
        self.size = 0
        self.batches = None
        self.cache = {}

    def ensure(self, n):
        if n <= self.size:
            return
        size = max(n, int(self.size * 1.5), 32)
        cfg = self.req.trial_config((size,))
        self.batches = tuple(
            simulate_batch(cfg, h, self.req.nsim, self.req.seed, n=size, workers=self.workers)
            for h in ("H0", "H1")
        )
        self.size = size
        self.cache.clear()

    def data(self, n1, n) -> CalibrationData:
        key = (n1, n)
        if key not in self.cache:
            self.ensure(n)
            cfg = self.req.trial_config((n1, n))
            self.cache[key] = prepare(cfg, schedule=(n1, n), batches=self.batches)
        return self.cache[key]


def _evaluate(data: CalibrationData, b: Boundary, n1, n, w) -> dict:
    m = data.metrics(b)
    m["en"] = en_objective(m["pet_h0"], m["pet_h1"], n1, n, w, form="full")
    m["n1"], m["n"] = n1, n
    return m


def two_stage_sample_size(
    req: SampleSizeRequest, grid=None, workers: int = 1
) -> SampleSizeResult:
    """Smallest two-stage design meeting the power target on the simulated pool.

    Under the ``optimal`` strategy the boundary is recalibrated at every
    step of n. Under ``pragmatic`` it is calibrated once, with a final
    recalibration at the accepted n.
    """
    grid = default_grid() if grid is None else list(grid)
    alpha, target = req.alpha, 1 - req.beta
    pool = _Pool(req, workers)
    init = schoenfeld_initial(req)
    n = init.n_per_arm
    if n > req.nmax_ceiling:
        raise SampleSizeError(f"initial estimate of {n} per arm exceeds the ceiling of {req.nmax_ceiling}")
    trace = []

    def calib(n1, n):
        rep = select(pool.data(n1, n), alpha, grid)
        return rep.chosen

    def interim_range(n):
        lo = max(1, math.ceil(0.3 * n))
        return range(lo, min(math.floor(0.75 * n), n - 1) + 1)

    n1 = max(1, min(round(0.7 * n), n - 1))
    b = calib(n1, n)
    if req.earlystop_prob is None and b is not None:
        scored = []
        for m in interim_range(n):
            e = _evaluate(pool.data(m, n), b, m, n, req.w)
            if e["avg_type1"] <= alpha:
                scored.append((e["en"], m))
        if scored:
            n1 = min(scored)[1]

    last = None
    while n <= req.nmax_ceiling:
        if req.earlystop_prob is not None:
            found = _earlystop_search(pool, req, n, grid, b)
            if found is not None:
                res, bb = found
                trace.append({k: res[k] for k in ("n1", "n", "avg_type1", "avg_power", "pet_h0")})
                return _result(res, bb, init, trace)
        else:
            bb = calib(n1, n) if req.strategy == "optimal" or b is None else b
            if bb is not None:
                last = _evaluate(pool.data(n1, n), bb, n1, n, req.w)
                trace.append({k: last[k] for k in ("n1", "n", "lambda", "gamma", "avg_type1", "avg_power")})
                if last["avg_power"] >= target and last["avg_type1"] <= alpha:
                    if req.strategy == "pragmatic":
                        bf = calib(n1, n)
                        if bf is not None:
                            fin = _evaluate(pool.data(n1, n), bf, n1, n, req.w)
                            if fin["avg_power"] >= target:
                                return _result(fin, bf, init, trace)
                    else:
                        return _result(last, bb, init, trace)
        n += req.increment
    raise SampleSizeError(
        f"power target not reached below the ceiling of {req.nmax_ceiling} per arm", last
    )


def _earlystop_search(pool: _Pool, req: SampleSizeRequest, n, grid, b_fixed):
    """Among interims with n1/n <= 0.75, keep those meeting the early-stop,
    type I and power constraints and return the one with the lowest EN."""
    best = None
    lo = max(1, math.ceil(0.3 * n))
    for m in range(lo, min(math.floor(0.75 * n), n - 1) + 1):
        data = pool.data(m, n)
        if req.strategy == "optimal" or b_fixed is None:
            b = select(data, req.alpha, grid).chosen
        else:
            b = b_fixed
        if b is None:
            continue
        e = _evaluate(data, b, m, n, req.w)
        ok = e["pet_h0"] >= req.earlystop_prob and e["avg_power"] >= 1 - req.beta and e["avg_type1"] <= req.alpha
        if ok and (best is None or e["en"] < best[0]["en"]):
            best = (e, b)
    return best


def _result(m, b, init, trace) -> SampleSizeResult:
    return SampleSizeResult(
        n1=m["n1"],
        n=m["n"],
        boundary=b,
        avg_type1=m["avg_type1"],
        avg_power=m["avg_power"],
        ps_h0=m["pet_h0"],
        ps_h1=m["pet_h1"],
        en=m["en"],
        initial=init,
        trace=trace,
    )


def events_needed_unadjusted(control_median, treatment_median, alpha, beta) -> int:
    """Schoenfeld event count with P = 1 and no delay factor, rounded up."""
    return math.ceil(schoenfeld_events(control_median, treatment_median, alpha, beta) - 1e-9)
