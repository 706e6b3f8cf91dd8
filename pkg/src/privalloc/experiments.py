"""Seeded experiment harness: instance generators, single trials, sweeps, CSV.

Every trial derives its streams from the root seed: the instance from
``(seed, "instance", trial)`` and the mechanism from ``(seed, "mechanism",
trial)``.  Sweeps reuse the same trial seeds for every axis value, so the
values are compared on common random numbers.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from privalloc import oracles, palloc, pmatch
from privalloc.attacks import GadgetSpec, build_gadget_market, run_attack_experiment
from privalloc.core import Market, UnitDemandValuation, derive_rng, load_market
from privalloc.counter import CounterBank, accuracy_bound
from privalloc.errors import InstanceTooLargeError, ParameterError, UsageError

MODES = ("pmatch", "palloc", "multiplicative", "kelso", "attack", "counter-bench")
KINDS = ("uniform", "unweighted", "correlated", "gadget")
AXES = ("s", "epsilon", "alpha", "n")

SUMMARY_COLUMNS = [
    "value", "trial", "seed", "n", "k", "s", "alpha", "rho", "epsilon", "gamma", "T", "E", "m",
    "welfare", "opt", "gap", "satisfied_fraction", "measured_alpha", "measured_beta",
    "measured_rho", "max_counter_error", "halted_round", "runtime",
]


def _seed_of(root: int, tag: str, trial: int) -> int:
    return int(derive_rng(root, tag, trial).integers(2**63))


def generate_instance(kind: str, n: int, k: int, s, seed: int = 0) -> Market:
    """Random unit-demand market.

    ``uniform``: iid U[0, 1]; ``unweighted``: iid fair {0, 1};
    ``correlated``: per-type quality plus bidder noise, clipped; ``gadget``:
    the allocation gadget for ``n`` random bits (``k`` and ``s`` ignored).
    """
    if kind not in KINDS:
        raise UsageError(f"unknown instance kind {kind!r}; expected one of {KINDS}")
    if n < 1 or k < 1:
        raise ParameterError("n and k must be positive")
    rng = derive_rng(seed, "instance." + kind)
    if kind == "uniform":
        v = rng.random((n, k))
    elif kind == "unweighted":
        v = rng.integers(0, 2, size=(n, k)).astype(float)
    elif kind == "correlated":
        q = rng.random(k)
        v = np.clip(q[None, :] + 0.2 * rng.standard_normal((n, k)), 0.0, 1.0)
    else:
        D = tuple(rng.integers(0, 2, size=n))
        return build_gadget_market(GadgetSpec("allocation", D), seed)[0]
    return Market(n, k, s, UnitDemandValuation(v))


@dataclass
class ExperimentConfig:
    """One experiment: a mode, where instances come from, and the mode's parameters.

    ``instance`` is either ``{"path": ...}`` or ``{"kind", "n", "k", "s"}``.
    ``params`` holds the parameter record's fields (``noise``, ``T``, ``E``
    and ``m`` overrides included).
    """

    mode: str = "pmatch"
    instance: dict = field(default_factory=lambda: {"kind": "uniform", "n": 20, "k": 3, "s": 8})
    params: dict = field(default_factory=lambda: {"alpha": 0.2, "rho": 0.2, "epsilon": 1.0})
    trials: int = 1
    seed: int = 0
    output: Optional[str] = None

    def validate(self) -> None:
        if self.mode not in MODES:
            raise UsageError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.trials < 0:
            raise ParameterError("trials must be >= 0")
        if "path" not in self.instance and self.mode not in ("attack", "counter-bench"):
            kind = self.instance.get("kind", "uniform")
            if kind not in KINDS:
                raise UsageError(f"unknown instance kind {kind!r}")
        self.build_params()

    def build_params(self):
        p = dict(self.params)
        if self.mode == "pmatch":
            return pmatch.PMatchParams(**p)
        if self.mode == "palloc":
            p.pop("b", None)
            return palloc.PAllocParams(**p)
        if self.mode == "multiplicative":
            p.setdefault("opt_estimate", 1.0)  # replaced per trial unless fixed
            for key in ("opt", "epsilon_opt", "rho"):
                p.pop(key, None)
            return pmatch.MultiplicativeParams(**p)
        if self.mode == "kelso":
            alpha = p.get("alpha", 0.1)
            if not 0 < alpha < 1:
                raise ParameterError("alpha must lie in (0, 1)")
            return alpha
        if self.mode == "counter-bench":
            if not p.get("epsilon", 1.0) > 0 or int(p.get("horizon", 1024)) < 2:
                raise ParameterError("counter-bench needs epsilon > 0 and horizon >= 2")
            return p
        return p

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        unknown = set(doc) - {"mode", "instance", "params", "trials", "seed", "output"}
        if unknown:
            raise UsageError(f"unknown config fields {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())

    def with_axis(self, axis: str, value) -> "ExperimentConfig":
        if axis not in AXES:
            raise UsageError(f"unknown sweep axis {axis!r}; expected one of {AXES}")
        if axis in ("s", "n"):
            if "path" in self.instance:
                raise UsageError(f"cannot sweep {axis} over a fixed instance file")
            return replace(self, instance={**self.instance, axis: int(value)})
        return replace(self, params={**self.params, axis: float(value)})


def _instance(config: ExperimentConfig, trial: int) -> Market:
    inst = config.instance
    if "path" in inst:
        return load_market(inst["path"])
    return generate_instance(inst.get("kind", "uniform"), int(inst["n"]), int(inst["k"]),
                             inst["s"], _seed_of(config.seed, "instance", trial))


def _optimum(market: Market, b: Optional[int]) -> float:
    if market.unit_demand:
        return oracles.exact_max_matching(market)[1]
    try:
        return oracles.exact_max_allocation(market, b=b)[1]
    except InstanceTooLargeError:
        return math.nan


def run_trial(config: ExperimentConfig, trial: int) -> dict:
    """Run one trial of a market mode and return its summary row."""
    params = config.build_params()
    market = _instance(config, trial)
    seed = _seed_of(config.seed, "mechanism", trial)
    p = config.params
    b = p.get("b")
    row = {"trial": trial, "seed": seed, "n": market.n, "k": market.k, "s": market.s,
           "alpha": p.get("alpha", math.nan), "rho": p.get("rho", math.nan),
           "epsilon": p.get("epsilon", math.nan), "gamma": p.get("gamma", 0.1),
           "T": math.nan, "E": math.nan, "m": math.nan, "max_counter_error": 0.0,
           "halted_round": None}
    opt = _optimum(market, b)
    start = time.perf_counter()
    if config.mode == "pmatch":
        outcome, _, stats = pmatch.run(market, params, seed=seed, return_stats=True)
    elif config.mode == "multiplicative":
        if "opt_estimate" not in p:
            est = p.get("opt", "exact")
            value = opt if est == "exact" else pmatch.noisy_opt_estimate(market, float(p["epsilon_opt"]), seed)
            params = replace(params, opt_estimate=max(value, 1e-9))
        outcome, _, stats = pmatch.run_multiplicative(market, params, seed=seed, return_stats=True)
    elif config.mode == "palloc":
        outcome, _, stats = palloc.run(market, None, params, seed=seed, return_stats=True, b=b)
    elif config.mode == "kelso":
        T = p.get("T")
        outcome, _ = oracles.kelso_crawford(market, alpha=params, b=b,
                                            max_rounds=None if T is None else int(T))
        stats = None
    else:
        raise UsageError(f"mode {config.mode!r} has no market trial")
    runtime = time.perf_counter() - start
    if stats is not None:
        sched = stats.schedule
        row.update(T=sched.T, E=sched.E, m=sched.m, max_counter_error=stats.max_counter_error,
                   halted_round=stats.halted_round)
    alpha = params if config.mode == "kelso" else params.alpha
    if market.unit_demand and config.mode != "palloc":
        rep = oracles.verify_matching_equilibrium(market, outcome, alpha)
    else:
        rep = oracles.verify_allocation_equilibrium(market, None, outcome, b, alpha)
    row.update(welfare=outcome.welfare, opt=opt, gap=opt - outcome.welfare,
               satisfied_fraction=1.0 - (rep.rho_n if rep.rho_n is not None else rep.measured_rho),
               measured_alpha=rep.measured_alpha, measured_beta=rep.measured_beta,
               measured_rho=rep.measured_rho, runtime=runtime)
    return row


def counter_bench_trial(config: ExperimentConfig, trial: int) -> dict:
    p = config.params
    eps, horizon, beta = float(p.get("epsilon", 1.0)), int(p.get("horizon", 1024)), float(p.get("beta", 0.05))
    rng = derive_rng(config.seed, "bench.stream", trial)
    stream = rng.integers(0, 2, size=horizon)
    bank = CounterBank(1, eps, horizon, "laplace", bool(p.get("monotonize", False)),
                       seed=_seed_of(config.seed, "mechanism", trial), tag="bench")
    start = time.perf_counter()
    worst = 0.0
    for bit in stream:
        bank.feed((bit,))
        worst = max(worst, float(bank.error()[0]))
    return {"trial": trial, "epsilon": eps, "T": horizon, "max_counter_error": worst,
            "bound": accuracy_bound(eps, horizon, beta), "runtime": time.perf_counter() - start}


def _one(args):
    config, value, trial = args
    if config.mode == "counter-bench":
        row = counter_bench_trial(config, trial)
    else:
        row = run_trial(config, trial)
    row["value"] = value
    return row


def sweep(config: ExperimentConfig, axis: str, values: Sequence, workers: int = 1) -> list[dict]:
    """One summary row per ``(value, trial)``, ordered by value then trial."""
    config.validate()
    jobs = []
    for value in values:
        cfg = config.with_axis(axis, value)
        cfg.validate()
        jobs.extend((cfg, value, t) for t in range(config.trials))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_one, jobs))
    else:
        rows = [_one(job) for job in jobs]
    order = {v: x for x, v in enumerate(values)}
    rows.sort(key=lambda r: (order[r["value"]], r["trial"]))
    return rows


def run_config(config: ExperimentConfig) -> list[dict]:
    """All trials of ``config`` (no sweep axis)."""
    config.validate()
    if config.mode == "attack":
        p = dict(config.params)
        mech = p.pop("mechanism", "exact_max_matching")
        variant = p.pop("variant", "allocation")
        bits, s = int(p.pop("bits", 20)), int(p.pop("s", 1))
        mparams = None
        if mech == "pmatch":
            mparams = pmatch.PMatchParams(**p)
        elif mech == "kelso_crawford":
            mparams = p.get("alpha", 0.1)
        return run_attack_experiment(variant, mech, mparams, config.trials, config.seed, bits, s)
    return [_one((config, None, t)) for t in range(config.trials)]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.12g}"
    return str(x)


def write_rows_csv(path, rows: Sequence[dict], columns: Optional[Sequence[str]] = None,
                   runtime: bool = True) -> None:
    """Write rows with 12 significant digits; ``runtime=False`` drops the runtime column."""
    if columns is None:
        columns = list(rows[0].keys()) if rows else list(SUMMARY_COLUMNS)
    columns = [c for c in columns if runtime or c != "runtime"]
    fh = open(path, "w", newline="") if not hasattr(path, "write") else path
    try:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])
    finally:
        if fh is not path:
            fh.close()


def summary_columns(mode: str) -> list[str]:
    if mode == "counter-bench":
        return ["value", "trial", "epsilon", "T", "max_counter_error", "bound", "runtime"]
    if mode == "attack":
        return ["trial", "welfare_gap", "reconstructed_fraction", "runtime"]
    return list(SUMMARY_COLUMNS)
