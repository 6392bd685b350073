"""Virtual trial generation, group-sequential execution and operating characteristics.

Random numbers
--------------
Trial ``i`` of a run draws from its own generator seeded by
``SeedSequence(master_seed, spawn_key=(stream, i))``. Its first draw is the
uniform used for S, followed by standard exponentials in blocks of
``BLOCK`` patients: control event, treatment event, control gap, treatment
gap. Results therefore do not depend on how trials are split between
workers, and a pool of ``n`` patients per arm is a prefix of any larger pool.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .posterior import (
    ArmSnapshot,
    Boundary,
    PriorSpec,
    futility_decision,
    prob_treatment_worse,
    prob_worse_arrays,
    sufficient_stats,
)
from .stats import LN2, MedianPair, TruncGammaPrior, overall_to_post, piecewise_from_exponential

BLOCK = 16
HYPOTHESES = ("H0", "H1")


@dataclass(frozen=True)
class AccrualModel:
    """Per-arm accrual: ``deterministic`` puts patient k at k/rate,
    ``poisson`` uses independent Poisson processes per arm."""

    kind: str = "deterministic"
    rate: float = 6.0

    def __post_init__(self):
        if self.kind not in ("deterministic", "poisson"):
            raise ValueError(f"unknown accrual kind {self.kind!r}")
        if not self.rate > 0:
            raise ValueError("accrual rate must be positive")

    def enrollment(self, gaps, n):
        """Enrollment times from standard exponential gaps of shape (..., 2, n)."""
        if self.kind == "deterministic":
            t = np.arange(1, n + 1) / self.rate
            return np.broadcast_to(t, (1, 2, n))
        return np.cumsum(gaps, axis=-1) / self.rate


@dataclass(frozen=True)
class TrialConfig:
    """Everything needed to simulate and analyze a two-arm trial.

    ``s_analysis`` fixes the separation time used by the analyses. When
    left as None each simulated trial is analyzed at its own S.
    """

    control_median: float
    treatment_median: float
    s_likely: float
    s_prior: TruncGammaPrior
    schedule: tuple
    boundary: Boundary = Boundary(0.95, 1.0)
    accrual: AccrualModel = AccrualModel()
    fup: float = 6.0
    prior: PriorSpec | None = None
    s_analysis: float | None = None

    def __post_init__(self):
        sched = tuple(int(x) for x in self.schedule)
        if not sched or sched[0] < 1 or any(b <= a for a, b in zip(sched, sched[1:])):
            raise ValueError(f"schedule must be strictly increasing positive sizes: {sched}")
        object.__setattr__(self, "schedule", sched)
        if self.fup < 0:
            raise ValueError("follow-up must be non-negative")
        if not self.treatment_median >= self.control_median > 0:
            raise ValueError("need treatment median >= control median > 0")

    @property
    def N(self) -> int:
        return self.schedule[-1]

    @property
    def posterior_prior(self) -> PriorSpec:
        if self.prior is not None:
            return self.prior
        return PriorSpec.default(self.control_median, self.s_prior)

    @property
    def medians(self) -> MedianPair:
        return overall_to_post(self.control_median, self.treatment_median, self.s_likely)

    @property
    def mu0(self) -> float:
        return self.control_median / LN2

    @property
    def mu1(self) -> float:
        return self.medians.post_treatment / LN2

    def replace(self, **kw) -> "TrialConfig":
        return replace(self, **kw)


@dataclass
class TrialDataset:
    """Latent per-patient records of one simulated trial.

    ``event_time`` is measured from enrollment. ``s`` is the separation
    time the treatment arm was generated with.
    """

    arm: np.ndarray
    enroll_time: np.ndarray
    event_time: np.ndarray
    s: float

    def __len__(self):
        return self.arm.size


@dataclass
class TrialBatch:
    """Many trials stored as arrays; arm 0 is control, arm 1 treatment.

    ``enroll`` has shape (nsim or 1, 2, n) and ``event`` (nsim, 2, n).
    """

    s: np.ndarray
    enroll: np.ndarray
    event: np.ndarray

    @property
    def nsim(self) -> int:
        return self.event.shape[0]

    @property
    def n(self) -> int:
        return self.event.shape[2]


def trial_rng(master_seed: int, stream: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(stream), int(index)))
    return np.random.Generator(np.random.PCG64(ss))


def _draw_one(rng, n, rows):
    nb = -(-n // BLOCK)
    u = rng.random()
    raw = rng.standard_exponential(nb * 4 * BLOCK).reshape(nb, 4, BLOCK)
    e = raw[:, :rows, :].transpose(1, 0, 2).reshape(rows, nb * BLOCK)[:, :n]
    return u, e


def _raw_chunk(args):
    seed, stream, start, stop, n, rows = args
    m = stop - start
    u = np.empty(m)
    e = np.empty((m, rows, n))
    for j in range(m):
        u[j], e[j] = _draw_one(trial_rng(seed, stream, start + j), n, rows)
    return u, e


def _raw_draws(seed, stream, nsim, n, rows, workers=1):
    if workers <= 1 or nsim < 2 * workers:
        return _raw_chunk((seed, stream, 0, nsim, n, rows))
    edges = np.linspace(0, nsim, workers + 1).astype(int)
    jobs = [(seed, stream, a, b, n, rows) for a, b in zip(edges[:-1], edges[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        parts = list(ex.map(_raw_chunk, jobs))
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def _check_hypothesis(h):
    if h not in HYPOTHESES:
        raise ValueError(f"hypothesis must be one of {HYPOTHESES}, got {h!r}")
    return HYPOTHESES.index(h)


def _materialize(config: TrialConfig, hypothesis, u, e, s_truth):
    """Turn raw uniforms/exponentials into S, enrollment and event times."""
    if s_truth is None:
        s = np.asarray(config.s_prior.ppf(u), dtype=float).reshape(-1)
    else:
        if s_truth < 0:
            raise ValueError("true S must be non-negative")
        s = np.full(u.shape[0], float(s_truth))
    mu0 = config.mu0
    mu1 = config.mu1 if hypothesis == "H1" else mu0
    n = e.shape[-1]
    event = np.empty((e.shape[0], 2, n))
    event[:, 0] = mu0 * e[:, 0]
    event[:, 1] = piecewise_from_exponential(e[:, 1], mu0, mu1, s[:, None])
    gaps = e[:, 2:4] if e.shape[1] == 4 else None
    enroll = config.accrual.enrollment(gaps, n)
    return TrialBatch(s=s, enroll=enroll, event=event)


def simulate_batch(
    config: TrialConfig,
    hypothesis: str,
    nsim: int,
    seed: int,
    s_truth: float | None = None,
    n: int | None = None,
    workers: int = 1,
    stream_offset: int = 0,
) -> TrialBatch:
    """Simulate ``nsim`` trials of ``n`` patients per arm (default N).

    With ``s_truth`` None each trial draws S from the prior.
    """
    code = _check_hypothesis(hypothesis)
    n = config.N if n is None else int(n)
    rows = 4 if config.accrual.kind == "poisson" else 2
    u, e = _raw_draws(seed, code + 2 * stream_offset, nsim, n, rows, workers)
    return _materialize(config, hypothesis, u, e, s_truth)


def generate_trial(
    config: TrialConfig,
    hypothesis: str,
    rng: np.random.Generator,
    s_truth: float | None = None,
    n: int | None = None,
) -> TrialDataset:
    """One virtual trial drawn from ``rng``; same layout as :func:`simulate_batch`."""
    _check_hypothesis(hypothesis)
    n = config.N if n is None else int(n)
    rows = 4 if config.accrual.kind == "poisson" else 2
    u, e = _draw_one(rng, n, rows)
    b = _materialize(config, hypothesis, np.array([u]), e[None], s_truth)
    enroll = np.broadcast_to(b.enroll, (1, 2, n))[0]
    return TrialDataset(
        arm=np.repeat([0, 1], n),
        enroll_time=enroll.reshape(-1).copy(),
        event_time=b.event[0].reshape(-1),
        s=float(b.s[0]),
    )


def snapshot_at(data: TrialDataset, calendar_time: float, max_per_arm: int | None = None):
    """Administratively censored view of ``data`` at ``calendar_time``.

    Patients enrolled after ``calendar_time`` are left out. With
    ``max_per_arm`` only the first that many enrollees of each arm count.
    """
    if calendar_time < 0:
        raise ValueError("calendar time must be non-negative")
    out = []
    for a in (0, 1):
        idx = np.flatnonzero(data.arm == a)
        idx = idx[np.argsort(data.enroll_time[idx], kind="stable")]
        if max_per_arm is not None:
            idx = idx[:max_per_arm]
        fu = calendar_time - data.enroll_time[idx]
        keep = fu >= 0
        ev = data.event_time[idx][keep]
        fu = fu[keep]
        out.append(ArmSnapshot(np.minimum(ev, fu), (ev <= fu).astype(int)))
    return out[0], out[1]


@dataclass
class TrialOutcome:
    decision: str
    stopped_stage: int | None
    n_used: int
    duration: float
    probs: list = field(default_factory=list)


def _arm_enrollments(data: TrialDataset):
    return [np.sort(data.enroll_time[data.arm == a]) for a in (0, 1)]


def analysis_times(config: TrialConfig, data: TrialDataset) -> list:
    """Calendar times of each look for a single dataset."""
    enr = _arm_enrollments(data)
    if min(e.size for e in enr) < config.N:
        raise ValueError("schedule exceeds dataset size")
    times = [max(e[n_r - 1] for e in enr) for n_r in config.schedule[:-1]]
    times.append(max(e[config.N - 1] for e in enr) + config.fup)
    return times


def run_trial(config: TrialConfig, data: TrialDataset, s_analysis: float | None = None) -> TrialOutcome:
    """Apply the futility rule at every look of a single trial.

    The trial rejects the null only if no look, the final one included,
    exceeds its threshold.
    """
    s = s_analysis if s_analysis is not None else config.s_analysis
    s = data.s if s is None else s
    prior = config.posterior_prior
    probs = []
    times = analysis_times(config, data)
    last = len(config.schedule) - 1
    for r, (n_r, t) in enumerate(zip(config.schedule, times)):
        ctrl, trt = snapshot_at(data, t, max_per_arm=config.N)
        p = prob_treatment_worse(sufficient_stats(ctrl, trt, s), prior)
        probs.append(p)
        if futility_decision(p, config.boundary, n_r, config.N):
            stage = r + 1 if r < last else None
            return TrialOutcome("accept", stage, n_r, t, probs)
    return TrialOutcome("reject", None, config.N, times[-1], probs)


@dataclass
class LookData:
    """Per-look arrays of shape (looks, nsim)."""

    schedule: tuple
    prob: np.ndarray
    time: np.ndarray
    events: np.ndarray


def batch_look_times(batch: TrialBatch, schedule, fup) -> np.ndarray:
    enr = batch.enroll
    times = [enr[:, :, n_r - 1].max(axis=1) for n_r in schedule[:-1]]
    times.append(enr[:, :, schedule[-1] - 1].max(axis=1) + fup)
    return np.stack([np.broadcast_to(t, (batch.nsim,)) for t in times])


def batch_stats(batch: TrialBatch, n_cap: int, t, s):
    """Vectorized sufficient statistics at calendar times ``t`` (nsim,).

    Only the first ``n_cap`` patients of each arm are eligible.
    """
    enr = batch.enroll[:, :, :n_cap]
    ev = batch.event[:, :, :n_cap]
    fu = np.asarray(t)[:, None, None] - enr
    inc = fu >= 0
    z = np.where(inc, np.minimum(ev, fu), 0.0)
    dlt = inc & (ev <= fu)
    s = np.asarray(s)[:, None]
    z1, d1 = z[:, 1], dlt[:, 1]
    return {
        "d0": dlt[:, 0].sum(axis=1),
        "d01": (d1 & (z1 <= s)).sum(axis=1),
        "d11": (d1 & (z1 > s)).sum(axis=1),
        "sum_z0": z[:, 0].sum(axis=1),
        "ttot_01": np.minimum(z1, s).sum(axis=1),
        "ttot_12": np.maximum(z1 - s, 0.0).sum(axis=1),
    }


def look_probabilities(
    config: TrialConfig, batch: TrialBatch, schedule=None, s_analysis: float | None = None
) -> LookData:
    """Posterior probability of 'treatment worse' at every look of every trial."""
    schedule = tuple(config.schedule if schedule is None else schedule)
    if schedule[-1] > batch.n:
        raise ValueError("schedule exceeds simulated pool size")
    s_an = s_analysis if s_analysis is not None else config.s_analysis
    s = batch.s if s_an is None else np.full(batch.nsim, float(s_an))
    times = batch_look_times(batch, schedule, config.fup)
    prior = config.posterior_prior
    probs, events = [], []
    for t in times:
        st = batch_stats(batch, schedule[-1], t, s)
        probs.append(prob_worse_arrays(prior=prior, **st))
        events.append(st["d0"] + st["d01"] + st["d11"])
    return LookData(schedule, np.stack(probs), times, np.stack(events))


def apply_boundary(looks: LookData, boundary: Boundary):
    """Return (stop index per trial, early-stop flags, reject flags).

    The stop index is the look at which the trial ended; trials that reach
    the final look get the final index whatever the decision.
    """
    sched = looks.schedule
    N = sched[-1]
    thr = boundary.threshold(np.array(sched), N)[:, None]
    futile = looks.prob > thr
    interim = futile[:-1]
    early = interim.any(axis=0) if interim.size else np.zeros(looks.prob.shape[1], bool)
    first = np.where(early, np.argmax(interim, axis=0) if interim.size else 0, len(sched) - 1)
    reject = ~early & ~futile[-1]
    return first, early, reject


@dataclass
class OCResult:
    prn: float
    pet: float
    avg_n: float
    avg_duration: float
    mc_se: dict
    nsim: int
    stop_by_look: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "prn": self.prn,
            "pet": self.pet,
            "avg_n": self.avg_n,
            "avg_duration": self.avg_duration,
            "mc_se": self.mc_se,
            "nsim": self.nsim,
            "stop_by_look": self.stop_by_look,
        }


def _se_prop(p, n):
    return math.sqrt(max(p * (1 - p), 0.0) / n)


def summarize(looks: LookData, boundary: Boundary) -> OCResult:
    first, early, reject = apply_boundary(looks, boundary)
    nsim = early.size
    sched = np.array(looks.schedule)
    n_used = sched[first]
    dur = looks.time[first, np.arange(nsim)]
    prn, pet = float(reject.mean()), float(early.mean())
    sd = lambda x: float(x.std(ddof=1) / math.sqrt(nsim)) if nsim > 1 else 0.0  # noqa: E731
    stops = [float((early & (first == r)).mean()) for r in range(len(sched) - 1)]
    return OCResult(
        prn=prn,
        pet=pet,
        avg_n=float(n_used.mean()),
        avg_duration=float(dur.mean()),
        mc_se={
            "prn": _se_prop(prn, nsim),
            "pet": _se_prop(pet, nsim),
            "avg_n": sd(n_used),
            "avg_duration": sd(dur),
        },
        nsim=nsim,
        stop_by_look=stops,
    )


def estimate_oc(
    config: TrialConfig,
    hypothesis: str,
    s_truth: float | None = None,
    nsim: int = 10_000,
    seed: int = 0,
    workers: int = 1,
) -> OCResult:
    """Monte Carlo operating characteristics of the configured design.

    ``avg_n`` counts the nominal per-arm size at the stopping look.
    """
    if nsim < 1:
        raise ValueError("nsim must be >= 1")
    batch = simulate_batch(config, hypothesis, nsim, seed, s_truth=s_truth, workers=workers)
    return summarize(look_probabilities(config, batch), config.boundary)


def expected_events(
    config: TrialConfig, nsim: int = 1000, seed: int = 0, s_truth: float | None = None, workers: int = 1
) -> list:
    """Mean number of observed events (both arms) at each look under H1.

    The true S defaults to the design's likely value.
    """
    s = config.s_likely if s_truth is None else s_truth
    batch = simulate_batch(config, "H1", nsim, seed, s_truth=s, workers=workers)
    looks = look_probabilities(config, batch)
    return [float(x) for x in looks.events.mean(axis=1)]
