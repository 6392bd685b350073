"""Command-line interface.

Usage::

    dtetrial elicit     configs/elicit.toml
    dtetrial samplesize configs/design.toml --strategy pragmatic
    dtetrial calibrate  configs/design.toml --nsim 10000
    dtetrial oc         configs/design.toml
    dtetrial curve      configs/design.toml
    dtetrial trend      configs/trend.toml
    dtetrial compare    configs/compare.toml
    dtetrial conduct    configs/design.toml --data patients.csv --stage 1

Each run writes ``result.json``, ``table.txt`` and ``manifest.json`` (plus
command-specific CSV files) to ``--out``. Settings are resolved as
built-in default < config file < ``--set section.key=value`` < flags.
The worker count comes from ``--workers``, then ``run.workers`` in the
config, then the ``DTETRIAL_WORKERS`` environment variable, then 1.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error,
3 infeasible calibration or non-convergent sample size.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import calibrate, default_grid, error_power_curve
from .config import (
    ConfigError,
    apply_overrides,
    load_config,
    resolve_path,
    section,
    trial_config_from,
)
from .elicitation import ElicitationError, ElicitationWeights, ExpertSummary, density_table, fit_trunc_gamma
from .logrank import TESTS, min_sample_size, power_by_sim
from .posterior import ArmSnapshot, futility_decision, posterior_params, prob_treatment_worse, sufficient_stats
from .report import markdown_table, text_table, write_csv, write_json
from .samplesize import SampleSizeError, SampleSizeRequest, en_objective, two_stage_sample_size
from .simulation import estimate_oc, expected_events
from .stats import LN2
from .trend import WINDOWS, TrendConfig, quantile_trend, trend_summary

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_INFEASIBLE = 0, 1, 2, 3
WORKERS_ENV = "DTETRIAL_WORKERS"
PATIENT_COLUMNS = ("arm", "enroll_time", "time", "event")
DEFAULT_NSIM = {"oc": 10_000, "calibrate": 10_000, "samplesize": 10_000, "curve": 10_000, "trend": 10_000, "compare": 2_000}


class Infeasible(Exception):
    """Raised by a command that produced a structured diagnostic instead of a result."""


@dataclasses.dataclass
class Run:
    command: str
    cfg: dict
    seed: int
    nsim: int
    workers: int
    out: Path
    args: argparse.Namespace

    @property
    def sec(self) -> dict:
        return section(self.cfg, self.command)

    def finish(self, result: dict, table: str, started: float, argv):
        write_json(self.out / "result.json", result)
        (self.out / "table.txt").write_text(table)
        cfg = {k: v for k, v in self.cfg.items() if not k.startswith("_")}
        write_json(self.out / "manifest.json", {
            "command": self.command,
            "argv": list(argv),
            "config_path": str(self.args.config),
            "config": cfg,
            "seed": self.seed,
            "nsim": self.nsim,
            "workers": self.workers,
            "version": __version__,
            "started_utc": datetime.fromtimestamp(started, timezone.utc).isoformat(timespec="seconds"),
            "wall_clock_seconds": round(time.time() - started, 3),
        })
        sys.stdout.write(table)


def _positive_int(text, what):
    try:
        v = int(text)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be an integer, got {text!r}") from None
    if v < 1:
        raise ConfigError(f"{what} must be >= 1")
    return v


def _setup(args) -> Run:
    cfg = apply_overrides(load_config(args.config), args.set)
    sec = section(cfg, args.command)
    run = section(cfg, "run")

    def pick(key, default):
        v = getattr(args, key, None)
        if v is not None:
            return v
        return sec.get(key, run.get(key, default))

    if args.workers is not None:
        workers = args.workers
    elif "workers" in run:
        workers = run["workers"]
    else:
        workers = os.environ.get(WORKERS_ENV, 1)
    seed = pick("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    out = Path(args.out or sec.get("out") or f"runs/{args.command}")
    out.mkdir(parents=True, exist_ok=True)
    return Run(
        command=args.command,
        cfg=cfg,
        seed=seed,
        nsim=_positive_int(pick("nsim", DEFAULT_NSIM.get(args.command, 10_000)), "nsim"),
        workers=_positive_int(workers, "workers"),
        out=out,
        args=args,
    )


def _design(run: Run, schedule=None):
    if "design" not in run.cfg:
        raise ConfigError("config has no [design] table")
    return trial_config_from(run.cfg, schedule)


def _grid(cfg):
    sec = section(cfg, "calibrate")
    kw = {}
    if "lambdas" in sec:
        kw["lambdas"] = tuple(float(x) for x in sec["lambdas"])
    if "gammas" in sec:
        kw["gammas"] = tuple(float(x) for x in sec["gammas"])
    try:
        return default_grid(**kw)
    except ValueError as exc:
        raise ConfigError(f"invalid calibration grid: {exc}") from exc


def _design_value(run: Run, key, default=None):
    v = run.sec.get(key, section(run.cfg, "design").get(key, default))
    if v is None:
        raise ConfigError(f"missing {key} in [{run.command}] or [design]")
    return v


# --------------------------------------------------------------------- elicit


def _load_experts(run: Run):
    sec = run.sec
    src = sec.get("experts")
    weights = sec.get("weights")
    if src is None:
        raise ConfigError("[elicit] needs an experts list or a path to an expert JSON file")
    if isinstance(src, str):
        path = resolve_path(run.cfg, src)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"expert file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed expert JSON {path}: {exc}") from None
        if isinstance(data, dict):
            weights = weights if weights is not None else data.get("weights")
            data = data.get("experts")
        src = data
    if not isinstance(src, list):
        raise ConfigError("experts must be a list of objects")
    experts = []
    for i, e in enumerate(src):
        if not isinstance(e, dict):
            raise ConfigError(f"experts[{i}] must be an object")
        try:
            experts.append(ExpertSummary.from_dict(e))
        except ElicitationError as exc:
            raise ConfigError(f"experts[{i}]: {exc}") from None
    if not experts:
        raise ConfigError("expert list is empty")
    w = ElicitationWeights() if weights is None else ElicitationWeights.from_sequence(weights)
    return experts, w


def cmd_elicit(run: Run) -> tuple:
    experts, weights = _load_experts(run)
    L = float(_design_value(run, "lower"))
    U = float(_design_value(run, "upper"))
    res = fit_trunc_gamma(experts, weights, L, U)
    xs, dens = density_table(res.prior, int(run.sec.get("points", 201)))
    write_csv(run.out / "density.csv", ["s", "density"], zip(xs, dens))
    result = res.to_dict()
    result["weights"] = weights.as_dict()
    result["experts"] = [e.provided() for e in experts]
    rows = [["shape", res.prior.shape], ["scale", res.prior.scale], ["objective", res.objective]]
    rows += [[k, v] for k, v in res.summaries.items()]
    rows.append(["weakly_identified", res.weakly_identified])
    return result, text_table(["quantity", "value"], rows, digits=6, title=f"Truncated Gamma prior on [{L}, {U}]")


# ----------------------------------------------------------------- samplesize

_REQUEST_FIELDS = {f.name: f for f in dataclasses.fields(SampleSizeRequest)}
_COMMON = {"seed", "nsim"}


def _request(run: Run) -> SampleSizeRequest:
    design = section(run.cfg, "design")
    kw = {k: v for k, v in design.items() if k in _REQUEST_FIELDS}
    unknown = set(run.sec) - set(_REQUEST_FIELDS) - {"out"}
    if unknown:
        raise ConfigError(f"unknown samplesize field(s): {sorted(unknown)}")
    kw.update(run.sec)
    kw.pop("out", None)
    for name in _REQUEST_FIELDS:
        v = getattr(run.args, f"req_{name}", None)
        if v is not None:
            kw[name] = v
    kw["seed"], kw["nsim"] = run.seed, run.nsim
    try:
        return SampleSizeRequest(**kw)
    except TypeError as exc:
        raise ConfigError(f"incomplete sample-size request: {exc}") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_samplesize(run: Run) -> tuple:
    req = _request(run)
    try:
        res = two_stage_sample_size(req, grid=_grid(run.cfg), workers=run.workers)
    except SampleSizeError as exc:
        raise Infeasible({"status": "not_converged", "message": str(exc), "last": exc.last,
                          "request": dataclasses.asdict(req)}) from None
    result = res.to_dict()
    result["en_printed"] = en_objective(res.ps_h0, res.ps_h1, res.n1, res.n, req.w, form="printed")
    result["request"] = dataclasses.asdict(req)
    rows = [[res.n1, res.n, res.boundary.lam, res.boundary.gam, res.avg_type1, res.avg_power, res.ps_h0, res.ps_h1, res.en]]
    head = ["n1", "n", "lambda", "gamma", "type1", "power", "PS_H0", "PS_H1", "EN"]
    table = text_table(head, rows, title=f"Two-stage design ({req.strategy})")
    trace = [[t["n1"], t["n"], t.get("lambda"), t.get("gamma"), t["avg_type1"], t["avg_power"]] for t in res.trace]
    table += "\n" + text_table(["n1", "n", "lambda", "gamma", "type1", "power"], trace, title="Search trace")
    return result, table


# ------------------------------------------------------------------ calibrate


def cmd_calibrate(run: Run) -> tuple:
    config = _design(run)
    alpha = float(_design_value(run, "alpha", 0.10))
    mode = run.sec.get("mode", "average")
    if mode not in ("average", "boundary"):
        raise ConfigError("calibrate.mode must be 'average' or 'boundary'")
    rep = calibrate(config, alpha, _grid(run.cfg), mode, run.nsim, run.seed, run.workers)
    result = rep.to_dict()
    head = ["lambda", "gamma", "type1", "power", "PS_H0", "PS_H1", "feasible"]
    rows = [[r["lambda"], r["gamma"], r["avg_type1"], r["avg_power"], r["pet_h0"], r["pet_h1"], r["feasible"]] for r in rep.grid]
    if not rep.feasible:
        result["status"] = "infeasible"
        raise Infeasible(result)
    title = f"Chosen boundary: lambda={rep.chosen.lam}, gamma={rep.chosen.gam} (type I {rep.avg_type1:.4f}, power {rep.avg_power:.4f})"
    return result, text_table(head, rows, title=title)


# ------------------------------------------------------------------------- oc


def cmd_oc(run: Run) -> tuple:
    config = _design(run)
    s_values = run.sec.get("s_values", [])
    hyps = run.sec.get("hypotheses", ["H0", "H1"])
    rows, records = [], []
    for s in list(s_values) or [None]:
        for h in hyps:
            oc = estimate_oc(config, h, s_truth=s, nsim=run.nsim, seed=run.seed, workers=run.workers)
            rec = {"s": s, "hypothesis": h, **oc.to_dict()}
            records.append(rec)
            rows.append(["prior" if s is None else s, h, oc.prn, oc.pet, oc.avg_n, oc.avg_duration, oc.mc_se["prn"]])
    head = ["S", "truth", "PRN", "PET", "avg_n", "duration", "se_PRN"]
    write_csv(run.out / "oc.csv", head, rows)
    result = {"boundary": config.boundary.as_tuple(), "schedule": config.schedule, "oc": records}
    table = text_table(head, rows, title=f"Operating characteristics, boundary {config.boundary.as_tuple()}")
    if run.sec.get("events", True):
        ev_nsim = int(run.sec.get("events_nsim", 1000))
        ev = expected_events(config, ev_nsim, run.seed, workers=run.workers)
        result["expected_events"] = {"nsim": ev_nsim, "s": config.s_likely, "per_look": ev}
        table += "\n" + text_table(["n_r", "events"], list(zip(config.schedule, ev)), digits=2,
                                   title=f"Expected events under H1 at S={config.s_likely}")
    return result, table


# ---------------------------------------------------------------------- curve


def cmd_curve(run: Run) -> tuple:
    config = _design(run)
    pr = config.s_prior
    grid = run.sec.get("s_grid")
    if grid is None:
        grid = [round(float(x), 6) for x in np.linspace(pr.lower, pr.upper, 6)]
    rows = error_power_curve(config, config.boundary, grid, run.nsim, run.seed, run.workers)
    write_csv(run.out / "curve.csv", ["s", "type1", "power"], [[r["s"], r["type1"], r["power"]] for r in rows])
    head = ["s", "type1", "power", "se_type1", "se_power"]
    table = text_table(head, [[r[k] for k in head] for r in rows], title="Type I error and power by true S")
    return {"boundary": config.boundary.as_tuple(), "curve": rows}, table


# ---------------------------------------------------------------------- trend

_TREND_KEYS = {"n_r", "B", "grid", "metric", "control_median", "post_treatment_median", "null_median",
               "a0", "a1", "b0", "b1", "hypotheses", "windows", "seed", "nsim", "out"}


def cmd_trend(run: Run) -> tuple:
    sec = run.sec
    unknown = set(sec) - _TREND_KEYS
    if unknown:
        raise ConfigError(f"unknown trend field(s): {sorted(unknown)}")
    m0 = sec.get("control_median")
    m1 = sec.get("post_treatment_median")
    if m0 is None or m1 is None:
        design = _design(run)
        m0 = design.control_median if m0 is None else m0
        m1 = design.medians.post_treatment if m1 is None else m1
    windows = sec.get("windows", list(WINDOWS))
    if set(windows) - set(WINDOWS):
        raise ConfigError(f"trend.windows must be drawn from {sorted(WINDOWS)}")
    base = {k: sec[k] for k in ("n_r", "B", "grid", "metric", "a0", "a1", "b0", "b1") if k in sec}
    if sec.get("null_median") is not None:
        base["null_mean"] = sec["null_median"] / LN2
    result, table, summary_rows = {}, "", []
    for h in sec.get("hypotheses", ["H1", "H0"]):
        try:
            tc = TrendConfig(hypothesis=h, mu0=m0 / LN2, mu1=m1 / LN2, nsim=run.nsim, **base)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid trend settings: {exc}") from None
        curve = quantile_trend(tc, run.seed)
        write_csv(run.out / f"trend_{h}.csv", ["d01", "quantile"], zip(curve.d01, curve.quantile))
        sums = {w: trend_summary(curve, w) for w in windows}
        result[h] = {"summaries": sums, "quantile": curve.quantile.tolist()}
        for w, s in sums.items():
            summary_rows.append([h, w, s["min"], s["max"], s["range"], s["spearman_rho"]])
    result["settings"] = {"control_median": m0, "post_treatment_median": m1, **base}
    table = text_table(["truth", "window", "min", "max", "range", "spearman"], summary_rows,
                       title="Lower quantile of the continuation probability across d01")
    return result, table


# -------------------------------------------------------------------- compare


def cmd_compare(run: Run) -> tuple:
    config = _design(run)
    sec = run.sec
    n = int(sec.get("n", config.N))
    s_values = [float(s) for s in sec.get("s_values", [2.0, 2.1, 2.2, 2.3, 2.4, 2.5])]
    tests = sec.get("tests", list(TESTS))
    if set(tests) - set(TESTS):
        raise ConfigError(f"compare.tests must be drawn from {list(TESTS)}")
    alpha = float(_design_value(run, "alpha", 0.10))
    two_sided = bool(sec.get("two_sided", True))
    power = {t: [power_by_sim(t, config, n, s, nsim=run.nsim, seed=run.seed, alpha=alpha,
                              two_sided=two_sided, workers=run.workers) for s in s_values] for t in tests}
    head = ["test"] + [f"S={s:g}" for s in s_values]
    prow = [[t] + power[t] for t in tests]
    write_csv(run.out / "power.csv", ["test"] + s_values, prow)
    (run.out / "power.md").write_text(markdown_table(head, prow))
    result = {"n_per_arm": n, "alpha": alpha, "two_sided": two_sided, "s_values": s_values, "power": power}
    table = text_table(head, prow, digits=3, title=f"Power at N={n} per arm")
    if sec.get("min_size", True):
        target = float(sec.get("target_power", 1 - float(_design_value(run, "beta", 0.15))))
        size_s = [float(s) for s in sec.get("size_s_values", [s_values[0], s_values[-1]])]
        sizes = {}
        srows = []
        for t in sec.get("size_tests", ["logrank"]):
            sizes[t] = {}
            for s in size_s:
                try:
                    r = min_sample_size(
                        t, config, s, alpha, target, run.seed,
                        n_hi=int(sec.get("n_max", 400)),
                        nsim_search=int(sec.get("size_nsim_search", 4000)),
                        nsim_final=int(sec.get("size_nsim_final", 10_000)),
                        two_sided=two_sided, workers=run.workers,
                    )
                except ValueError as exc:
                    r = {"n": None, "power": None, "error": str(exc)}
                sizes[t][f"{s:g}"] = r
                total = None if r["n"] is None else 2 * r["n"]
                srows.append([t, s, r["n"], total, r["power"]])
        shead = ["test", "S", "n_per_arm", "n_total", "power"]
        write_csv(run.out / "sizes.csv", shead, srows)
        (run.out / "sizes.md").write_text(markdown_table(shead, srows))
        result["sizes"] = sizes
        result["target_power"] = target
        table += "\n" + text_table(shead, srows, digits=3, title=f"Minimum sample size for power {target:g}")
    return result, table


# -------------------------------------------------------------------- conduct


def read_patients(path):
    """Read a patient CSV into (control, treatment) snapshots plus raw rows."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"data file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or sorted(reader.fieldnames) != sorted(PATIENT_COLUMNS):
            raise ConfigError(f"CSV header must be {','.join(PATIENT_COLUMNS)}, got {reader.fieldnames}")
        arms = {0: ([], []), 1: ([], [])}
        for i, row in enumerate(reader, start=2):
            try:
                arm = int(row["arm"])
                float(row["enroll_time"])
                t = float(row["time"])
                ev = int(row["event"])
            except (TypeError, ValueError):
                raise ConfigError(f"line {i}: non-numeric value in {row}") from None
            if arm not in (0, 1) or ev not in (0, 1):
                raise ConfigError(f"line {i}: arm and event must be 0 or 1")
            if not t >= 0:
                raise ConfigError(f"line {i}: time must be non-negative")
            arms[arm][0].append(t)
            arms[arm][1].append(ev)
    for a, name in ((0, "control"), (1, "treatment")):
        if not arms[a][0]:
            raise ConfigError(f"{name} arm is empty")
    return ArmSnapshot(*arms[0]), ArmSnapshot(*arms[1])


def cmd_conduct(run: Run) -> tuple:
    config = _design(run)
    stage = run.args.stage
    if not 1 <= stage <= len(config.schedule):
        raise ConfigError(f"stage must be between 1 and {len(config.schedule)}")
    ctrl, trt = read_patients(run.args.data)
    n_r, N = config.schedule[stage - 1], config.N
    warnings = []
    for name, arm in (("control", ctrl), ("treatment", trt)):
        if len(arm) != n_r:
            msg = f"{name} arm has {len(arm)} patients, design expects {n_r} at stage {stage}"
            warnings.append(msg)
            print(f"warning: {msg}", file=sys.stderr)
    s = config.s_analysis if config.s_analysis is not None else config.s_likely
    st = sufficient_stats(ctrl, trt, s)
    prior = config.posterior_prior
    prob = prob_treatment_worse(st, prior)
    thr = float(config.boundary.threshold(n_r, N))
    futile = futility_decision(prob, config.boundary, n_r, N)
    final = stage == len(config.schedule)
    if final:
        decision = "accept_null" if futile else "reject_null"
    else:
        decision = "stop" if futile else "continue"
    post = posterior_params(st, prior)
    result = {
        "stage": stage,
        "final": final,
        "s": s,
        "n_control": len(ctrl),
        "n_treatment": len(trt),
        "stats": dataclasses.asdict(st),
        "posterior": {k: dataclasses.asdict(v) for k, v in post.items()},
        "prob_treatment_worse": prob,
        "threshold": thr,
        "decision": decision,
        "warnings": warnings,
    }
    rows = [[k, v] for k, v in dataclasses.asdict(st).items()]
    rows += [["P(treatment worse)", prob], ["threshold", thr], ["decision", decision]]
    return result, text_table(["quantity", "value"], rows, digits=6, title=f"Stage {stage} analysis at S={s}")


COMMANDS = {
    "elicit": (cmd_elicit, "fit the truncated Gamma prior for S from expert summaries"),
    "samplesize": (cmd_samplesize, "two-stage sample-size search"),
    "calibrate": (cmd_calibrate, "grid search for the futility boundary"),
    "oc": (cmd_oc, "operating characteristics by simulation"),
    "curve": (cmd_curve, "type I error and power across true S"),
    "trend": (cmd_trend, "quantile trend of the decision probability across d01"),
    "compare": (cmd_compare, "power and sample size against log-rank baselines"),
    "conduct": (cmd_conduct, "interim or final analysis of real patient data"),
}


def _add_request_flags(p):
    g = p.add_argument_group("request fields (override the config)")
    for name, f in _REQUEST_FIELDS.items():
        if name in _COMMON:
            continue
        flag = "--" + name.replace("_", "-")
        if name == "one_sided":
            g.add_argument(flag, dest=f"req_{name}", action=argparse.BooleanOptionalAction, default=None)
        elif name == "strategy":
            g.add_argument(flag, dest=f"req_{name}", choices=["optimal", "pragmatic"])
        elif name == "accrual":
            g.add_argument(flag, dest=f"req_{name}", choices=["deterministic", "poisson"])
        elif name in ("increment", "nmax_ceiling"):
            g.add_argument(flag, dest=f"req_{name}", type=int)
        else:
            g.add_argument(flag, dest=f"req_{name}", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dtetrial", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="TOML or JSON config file")
    common.add_argument("--out", help="output directory (default runs/<command>)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--nsim", type=int, help="simulated trials per scenario")
    common.add_argument("--workers", type=int, help=f"worker processes (env {WORKERS_ENV})")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. design.fup=9 (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name == "samplesize":
            _add_request_flags(p)
        if name == "conduct":
            p.add_argument("--data", required=True, help="patient CSV: arm,enroll_time,time,event")
            p.add_argument("--stage", required=True, type=int, help="1-based analysis number")
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    started = time.time()
    run = None
    try:
        run = _setup(args)
        result, table = COMMANDS[args.command][0](run)
        run.finish(result, table, started, argv)
        return EXIT_OK
    except (ConfigError, ElicitationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Infeasible as exc:
        diag = exc.args[0]
        if run is not None:
            write_json(run.out / "result.json", diag)
        print(f"infeasible: {diag.get('message', diag.get('status'))}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
