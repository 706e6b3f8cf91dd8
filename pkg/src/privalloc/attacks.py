"""Reconstruction attacks on gadget markets.

Each gadget encodes one private bit ``D_i``.  A mechanism that is accurate
on the gadget market must reveal the bit through its prices, its
allocation, or (for joint privacy) the allocation of bidders whose
valuations do not depend on ``D``.  The attacks here turn those outputs back
into a guess ``D_hat``; :func:`reconstruction_bound` is the error level no
``(epsilon, delta)``-private map from ``D`` to ``D_hat`` can beat.

Good layout: gadget ``i`` owns types ``2i`` (good ``0_i``) and ``2i + 1``
(good ``1_i``).  The allocation variant has only the two types 0 and 1.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from privalloc.core import Market, Outcome, UnitDemandValuation, derive_rng, social_welfare
from privalloc.errors import ParameterError

VARIANTS = ("prices", "allocation", "joint")
MECHANISMS = ("pmatch", "kelso_crawford", "exact_max_matching")


def reconstruction_bound(epsilon: float, delta: float, beta: float) -> float:
    """``1 - (e^eps + delta) / ((1 + e^eps)(1 - beta))``.

    Any ``(epsilon, delta)``-private reconstruction errs on at least this
    fraction of bits with probability ``beta`` or more.
    """
    if beta >= 1:
        raise ParameterError("beta must be < 1")
    if epsilon < 0 or delta < 0:
        raise ParameterError("epsilon and delta must be nonnegative")
    e = math.exp(epsilon) if epsilon < 700 else math.inf
    if math.isinf(e):
        return 1.0 - 1.0 / (1.0 - beta)
    return 1.0 - (e + delta) / ((1.0 + e) * (1.0 - beta))


@dataclass(frozen=True)
class GadgetSpec:
    variant: str
    D: tuple
    s: int = 1
    eta: Optional[float] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ParameterError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        D = tuple(int(x) for x in self.D)
        if not D or any(x not in (0, 1) for x in D):
            raise ParameterError("D must be a nonempty bit vector")
        object.__setattr__(self, "D", D)
        if self.s < 1:
            raise ParameterError("s must be >= 1")
        if self.eta is None:
            object.__setattr__(self, "eta", 1.0 / (4 * self.s))

    @property
    def bits(self) -> int:
        return len(self.D)


@dataclass
class GadgetMetadata:
    variant: str
    D: list
    seed: int
    s: int
    eta: float
    spy_goods: list = field(default_factory=list)  # per gadget, the type all spies value

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


def build_gadget_market(spec: GadgetSpec, seed: int = 0) -> tuple[Market, GadgetMetadata]:
    D = np.array(spec.D)
    L = spec.bits
    meta = GadgetMetadata(spec.variant, list(spec.D), int(seed), spec.s, float(spec.eta))
    if spec.variant == "prices":
        v = np.zeros((2 * L, 2 * L))
        for i, bit in enumerate(D):
            for bidder in (2 * i, 2 * i + 1):
                v[bidder, 2 * i] = 1 - bit
                v[bidder, 2 * i + 1] = bit
        return Market(2 * L, 2 * L, 1, UnitDemandValuation(v)), meta
    if spec.variant == "allocation":
        v = np.column_stack([1 - D, D]).astype(float)
        return Market(L, 2, L, UnitDemandValuation(v)), meta
    s = spec.s
    rng = derive_rng(seed, "gadget.spies")
    spy_side = rng.integers(0, 2, size=L)
    v = np.zeros((L * (s + 1), 2 * L))
    for i, bit in enumerate(D):
        real = i * (s + 1)
        v[real, 2 * i] = 1 - bit
        v[real, 2 * i + 1] = bit
        v[real + 1: real + 1 + s, 2 * i + spy_side[i]] = spec.eta
        meta.spy_goods.append(int(2 * i + spy_side[i]))
    return Market(L * (s + 1), 2 * L, s, UnitDemandValuation(v)), meta


def attack_prices(prices, spec: GadgetSpec) -> np.ndarray:
    """Guess ``D_i = 1`` exactly when good ``1_i`` is priced above 1/2."""
    p = np.asarray(prices, dtype=float)
    return (p[1::2][: spec.bits] > 0.5).astype(np.int64)


def attack_allocation(outcome: Outcome, spec: GadgetSpec, seed: int = 0) -> np.ndarray:
    """Read each bidder's good as the bit; unassigned bidders get a seeded coin."""
    coins = derive_rng(seed, "attack.allocation").integers(0, 2, size=spec.bits)
    out = np.empty(spec.bits, dtype=np.int64)
    for i, a in enumerate(outcome.assignment[: spec.bits]):
        out[i] = coins[i] if a is None else int(a)
    return out


def spy_view(outcome: Outcome, spec: GadgetSpec) -> list:
    """The assignments of the spy bidders only, gadget by gadget."""
    s = spec.s
    return [list(outcome.assignment[i * (s + 1) + 1: (i + 1) * (s + 1)]) for i in range(spec.bits)]


def attack_joint(spy_assignments: Sequence, spec: GadgetSpec, seed: int = 0) -> np.ndarray:
    """Guess from the spies alone: all on ``0_i`` -> 1, all on ``1_i`` -> 0, else a coin.

    ``spy_assignments`` is either one list per gadget or a flat list of
    ``bits * s`` assignments in bidder order.
    """
    s = spec.s
    groups = list(spy_assignments)
    if len(groups) == spec.bits * s and (not groups or not isinstance(groups[0], (list, tuple))):
        groups = [groups[i * s: (i + 1) * s] for i in range(spec.bits)]
    coins = derive_rng(seed, "attack.joint").integers(0, 2, size=spec.bits)
    out = np.empty(spec.bits, dtype=np.int64)
    for i, spies in enumerate(groups):
        if all(a == 2 * i for a in spies):
            out[i] = 1
        elif all(a == 2 * i + 1 for a in spies):
            out[i] = 0
        else:
            out[i] = coins[i]
    return out


def corrupted_solver(alpha: float) -> Callable[[Market, int], Outcome]:
    """Exact optimum with ``floor(alpha n)`` seeded bidders moved to their other good.

    Only meaningful on allocation gadgets, where supply is unlimited.
    """

    def solve(market: Market, seed: int) -> Outcome:
        from privalloc.oracles import exact_max_matching

        opt, _ = exact_max_matching(market)
        wrong = int(math.floor(alpha * market.n + 1e-9))
        pick = derive_rng(seed, "corrupt").choice(market.n, size=wrong, replace=False)
        assignment = list(opt.assignment)
        for i in pick:
            assignment[i] = 1 - assignment[i]
        return Outcome(opt.prices, assignment, social_welfare(market, assignment))

    return solve


def all_bottom_solver(market: Market, seed: int) -> Outcome:
    """A mechanism that never assigns anything."""
    return Outcome(np.zeros(market.k), [None] * market.n, 0.0)


Mechanism = Union[str, Callable[[Market, int], Outcome]]


def _mechanism(mechanism: Mechanism, params) -> Callable[[Market, int], Outcome]:
    if callable(mechanism):
        return mechanism
    if mechanism == "exact_max_matching":
        from privalloc.oracles import exact_max_matching
        return lambda market, seed: exact_max_matching(market)[0]
    if mechanism == "kelso_crawford":
        from privalloc.oracles import kelso_crawford
        alpha = 0.1 if params is None else getattr(params, "alpha", params)
        return lambda market, seed: kelso_crawford(market, alpha=alpha)[0]
    if mechanism == "pmatch":
        from privalloc import pmatch
        if params is None:
            raise ParameterError("pmatch needs PMatchParams")
        return lambda market, seed: pmatch.run(market, params, seed=seed)[0]
    raise ParameterError(f"mechanism must be one of {MECHANISMS} or a callable")


def run_attack_experiment(variant: str, mechanism: Mechanism, params=None, trials: int = 10,
                          seed: int = 0, bits: int = 20, s: int = 1) -> list[dict]:
    """Per trial: draw ``D``, build the gadget, run the mechanism, attack it.

    Returns rows ``{trial, welfare_gap, reconstructed_fraction, runtime}``.
    """
    from privalloc.oracles import exact_max_matching

    solve = _mechanism(mechanism, params)
    rows = []
    for trial in range(trials):
        D = derive_rng(seed, "attack.D", trial).integers(0, 2, size=bits)
        spec = GadgetSpec(variant, tuple(D), s=s)
        trial_seed = int(derive_rng(seed, "attack.trial", trial).integers(2**63))
        market, _ = build_gadget_market(spec, trial_seed)
        start = time.perf_counter()
        outcome = solve(market, trial_seed)
        runtime = time.perf_counter() - start
        opt = exact_max_matching(market)[1]
        if variant == "prices":
            guess = attack_prices(outcome.prices, spec)
        elif variant == "allocation":
            guess = attack_allocation(outcome, spec, trial_seed)
        else:
            guess = attack_joint(spy_view(outcome, spec), spec, trial_seed)
        rows.append({
            "trial": trial,
            "welfare_gap": opt - outcome.welfare,
            "reconstructed_fraction": float(np.mean(guess == D)),
            "runtime": runtime,
        })
    return rows


def write_attack_csv(path: str | Path, rows: Sequence[dict], runtime: bool = True) -> None:
    cols = ["trial", "welfare_gap", "reconstructed_fraction"] + (["runtime"] if runtime else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([r["trial"]] + [f"{r[c]:.12g}" for c in cols[1:]])
