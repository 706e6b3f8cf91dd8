"""Private max-weight matching by simulated ascending auctions.

Every bidder step feeds one bit to each good's counter (1 on the good bid
on, 0 elsewhere).  Prices are a deterministic function of the released
counts, so the billboard (all releases) together with a bidder's own row of
values determines that bidder's assignment; :func:`derive_allocation`
replays it.

Two halting rules are supported: the unsatisfied-bidder count (additive
welfare guarantee) and the per-round bid count (multiplicative guarantee
for valuations bounded below by ``lam``).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from privalloc.core import Market, Outcome, derive_rng, social_welfare
from privalloc.counter import NOISE_MODES, CounterBank
from privalloc.errors import (
    ConfigurationError,
    InstanceError,
    MalformedBillboardError,
    ParameterError,
)

log = logging.getLogger(__name__)

UNASSIGNED = -1  # tentatively unmatched, will bid at next turn
BOTTOM = -2  # left the auction


def counter_error_bound(epsilon_prime: float, horizon: int, k: int, gamma: float) -> float:
    """``(2 sqrt 2 / eps') * log2(horizon) ** 2.5 * ln(4k / gamma)``."""
    return (
        2.0 * math.sqrt(2.0) / epsilon_prime
        * math.log2(max(horizon, 2)) ** 2.5
        * math.log(4.0 * k / gamma)
    )


@dataclass(frozen=True)
class Schedule:
    """Derived auction constants."""

    T: int
    epsilon_prime: float
    E: int
    m: int

    def horizon(self, n: int) -> int:
        return n * self.T


def _check_unit(name: str, x: float, closed_right: bool = False) -> None:
    ok = 0 < x <= 1 if closed_right else 0 < x < 1
    if not ok:
        rng = "(0, 1]" if closed_right else "(0, 1)"
        raise ParameterError(f"{name}={x!r} must lie in {rng}")


def _schedule(T: int, epsilon: float, gamma: float, n: int, k: int,
              E: Optional[float], m: Optional[int], extra: float = 0.0) -> Schedule:
    eps_prime = epsilon / (2.0 * T)
    if E is None:
        E = math.ceil(counter_error_bound(eps_prime, n * T, k, gamma) + extra)
    E = int(math.ceil(E))
    if m is None:
        m = 2 * E + 1
    if E < 0 or m < 0:
        raise ParameterError("E and m overrides must be nonnegative")
    return Schedule(T=int(T), epsilon_prime=eps_prime, E=E, m=int(m))


@dataclass(frozen=True)
class PMatchParams:
    """Parameters of the matching auction.

    ``T``, ``E`` and ``m`` are derived unless overridden.  ``noise="off"``
    runs exact counters (oracle mode).
    """

    alpha: float
    rho: float
    epsilon: float
    gamma: float = 0.1
    noise: str = "laplace"
    monotonize: bool = True
    T: Optional[int] = None
    E: Optional[float] = None
    m: Optional[int] = None

    def __post_init__(self):
        _check_unit("alpha", self.alpha)
        _check_unit("rho", self.rho)
        _check_unit("gamma", self.gamma)
        if not self.epsilon > 0:
            raise ParameterError("epsilon must be positive")
        if self.noise not in NOISE_MODES:
            raise ParameterError(f"noise must be one of {NOISE_MODES}")
        if self.T is not None and self.T < 1:
            raise ParameterError("T override must be >= 1")

    @classmethod
    def for_welfare(cls, alpha: float, epsilon: float, gamma: float = 0.1, **kw) -> "PMatchParams":
        """Run with increment and unsatisfied fraction ``alpha / 3``; targets welfare ``OPT - alpha n``."""
        return cls(alpha=alpha / 3.0, rho=alpha / 3.0, epsilon=epsilon, gamma=gamma, **kw)

    def schedule(self, n: int, k: int) -> Schedule:
        T = self.T if self.T is not None else math.ceil(8.0 / (self.alpha * self.rho))
        return _schedule(T, self.epsilon, self.gamma, n, k, self.E, self.m)

    def halt_threshold(self, n: int, sched: Schedule) -> float:
        return _clamp_threshold(self.rho * n - 2 * sched.E)


@dataclass(frozen=True)
class MultiplicativeParams:
    """Parameters of the bid-counting variant; ``opt_estimate`` is supplied by the caller."""

    alpha: float
    lam: float
    opt_estimate: float
    epsilon: float
    gamma: float = 0.1
    noise: str = "laplace"
    monotonize: bool = True
    T: Optional[int] = None
    E: Optional[float] = None
    m: Optional[int] = None

    def __post_init__(self):
        _check_unit("alpha", self.alpha)
        _check_unit("gamma", self.gamma)
        if not 0 < self.lam <= 1:
            raise ParameterError(f"lam={self.lam!r} must lie in (0, 1]")
        if not self.opt_estimate > 0:
            raise ParameterError("opt_estimate must be positive")
        if not self.epsilon > 0:
            raise ParameterError("epsilon must be positive")
        if self.noise not in NOISE_MODES:
            raise ParameterError(f"noise must be one of {NOISE_MODES}")

    def schedule(self, n: int, k: int) -> Schedule:
        T = self.T if self.T is not None else math.ceil(24.0 / self.alpha**2)
        return _schedule(T, self.epsilon, self.gamma, n, k, self.E, self.m)

    def halt_threshold(self, sched: Schedule) -> float:
        return _clamp_threshold(self.alpha * self.opt_estimate / (2.0 * self.lam) - 2 * sched.E)


def _clamp_threshold(raw: float) -> float:
    if raw < 1.0:
        log.info("halting threshold %.6g clamped to 1", raw)
        return 1.0
    return float(raw)


@dataclass
class Billboard:
    """Everything the auction publishes.

    ``good_releases[r][i]`` holds the k released good counts right after
    bidder slot ``i`` of round ``r``; ``halt_releases[r][i]`` the halting
    counter release after bidder ``i``'s report in round ``r``.
    """

    n: int
    k: int
    alpha: float
    effective_supply: tuple
    halt_threshold: float
    T: int
    price_rule: str = "threshold"  # "threshold" (one step per release) or "multiple"
    good_releases: list = field(default_factory=list)
    halt_releases: list = field(default_factory=list)
    halted_at: Optional[int] = None
    supply: Optional[tuple] = None  # public per-type supply; the bundle replay needs it

    @property
    def rounds(self) -> int:
        return len(self.good_releases)

    def validate(self) -> None:
        if self.price_rule not in ("threshold", "multiple"):
            raise MalformedBillboardError(f"unknown price rule {self.price_rule!r}")
        if len(self.effective_supply) != self.k:
            raise MalformedBillboardError("effective supply does not have k entries")
        if len(self.halt_releases) != self.rounds:
            raise MalformedBillboardError("halting releases and good releases cover different rounds")
        if self.rounds == 0:
            raise MalformedBillboardError("billboard has no rounds")
        for r in range(self.rounds):
            if np.shape(self.good_releases[r]) != (self.n, self.k):
                raise MalformedBillboardError(f"round {r} good releases have the wrong shape")
            if np.shape(self.halt_releases[r]) != (self.n,):
                raise MalformedBillboardError(f"round {r} halting releases have the wrong shape")
        halted = halting_round(self.halt_releases, self.halt_threshold)
        if halted != self.halted_at:
            raise MalformedBillboardError(
                f"billboard says halted_at={self.halted_at} but releases imply {halted}"
            )
        if halted is None and self.rounds != self.T:
            raise MalformedBillboardError(f"billboard is truncated: {self.rounds} of {self.T} rounds")
        if halted is not None and halted != self.rounds - 1:
            raise MalformedBillboardError("rounds recorded after the halting round")

    def price_levels(self) -> np.ndarray:
        """Price levels after every bidder step, shape ``(rounds, n, k)``; price = level * alpha."""
        cached = getattr(self, "_levels", None)
        if cached is not None and cached.shape[0] == self.rounds:
            return cached
        s_eff = np.asarray(self.effective_supply, dtype=float)
        levels = np.zeros(self.k, dtype=np.int64)
        out = np.empty((self.rounds, self.n, self.k), dtype=np.int64)
        for r in range(self.rounds):
            rel = np.asarray(self.good_releases[r], dtype=float)
            for i in range(self.n):
                levels = update_levels(levels, rel[i], s_eff, self.price_rule)
                out[r, i] = levels
        self._levels = out
        return out

    def final_prices(self) -> np.ndarray:
        return self.price_levels()[-1, -1] * self.alpha

    def to_dict(self) -> dict:
        return {
            "n": self.n, "k": self.k, "alpha": self.alpha,
            "effective_supply": list(self.effective_supply),
            "halt_threshold": self.halt_threshold, "T": self.T,
            "price_rule": self.price_rule, "halted_at": self.halted_at,
            "supply": None if self.supply is None else list(self.supply),
            "good_releases": [np.asarray(g).tolist() for g in self.good_releases],
            "halt_releases": [np.asarray(h).tolist() for h in self.halt_releases],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Billboard":
        return cls(
            n=doc["n"], k=doc["k"], alpha=doc["alpha"],
            effective_supply=tuple(doc["effective_supply"]),
            halt_threshold=doc["halt_threshold"], T=doc["T"],
            price_rule=doc.get("price_rule", "threshold"),
            good_releases=[np.asarray(g, dtype=float) for g in doc["good_releases"]],
            halt_releases=[np.asarray(h, dtype=float) for h in doc["halt_releases"]],
            halted_at=doc["halted_at"],
            supply=None if doc.get("supply") is None else tuple(doc["supply"]),
        )

    def write_csv(self, path: str | Path) -> None:
        """Rows ``(round, step, good_type, released_count, price_after, halt_counter_release)``."""
        levels = self.price_levels()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["round", "step", "good_type", "released_count", "price_after",
                        "halt_counter_release"])
            for r in range(self.rounds):
                rel = self.good_releases[r]
                halt = self.halt_releases[r]
                for i in range(self.n):
                    for j in range(self.k):
                        w.writerow([r, i, j, f"{rel[i][j]:.12g}",
                                    f"{levels[r, i, j] * self.alpha:.12g}", f"{halt[i]:.12g}"])


def update_levels(levels: np.ndarray, released: np.ndarray, s_eff: np.ndarray, rule: str) -> np.ndarray:
    """Apply the price-update rule to integer price levels after one release."""
    if rule == "threshold":
        return levels + (released >= (levels + 1) * s_eff)
    crossed = np.floor(released / s_eff).astype(np.int64)
    return np.maximum(levels, crossed)


def halting_round(halt_releases, threshold: float) -> Optional[int]:
    prev = 0.0
    for r, rel in enumerate(halt_releases):
        last = float(rel[-1])
        if last - prev < threshold:
            return r
        prev = last
    return None


def favorite(vrow: np.ndarray, levels: np.ndarray, alpha: float) -> tuple[int, float]:
    """Lowest-index argmax of ``v - p`` and its utility."""
    util = vrow - levels * alpha
    j = int(np.argmax(util))
    return j, float(util[j])


@dataclass
class RunStats:
    schedule: Schedule
    halt_threshold: float
    rounds_run: int
    halted_round: Optional[int]
    bids_per_bidder: np.ndarray
    max_counter_error: float
    exact_bid_counts: np.ndarray


def _run_matching(market: Market, sched: Schedule, alpha: float, threshold: float,
                  halt_mode: str, noise: str, monotonize: bool, seed: int, tag: str):
    n, k = market.n, market.k
    supply = np.asarray(market.supply)
    if market.s <= sched.m:
        raise ConfigurationError(
            f"supply s={market.s} must exceed the reserved supply m={sched.m}"
        )
    v = market.v
    s_eff = (supply - sched.m).astype(float)
    horizon = sched.horizon(n)
    goods = CounterBank(k, sched.epsilon_prime, horizon, noise, monotonize, seed=seed, tag=tag + ".goods")
    halt = CounterBank(1, sched.epsilon_prime, horizon, noise, monotonize, seed=seed, tag=tag + ".halt")

    board = Billboard(n=n, k=k, alpha=alpha, effective_supply=tuple(s_eff.tolist()),
                      halt_threshold=threshold, T=sched.T, price_rule="threshold",
                      supply=tuple(market.supply))
    mu = np.full(n, UNASSIGNED, dtype=np.int64)
    d = np.zeros(n)
    bids = np.zeros(n, dtype=np.int64)
    levels = np.zeros(k, dtype=np.int64)
    c = np.zeros(k)
    zero = np.zeros(k)
    unit = np.eye(k)
    max_err = 0.0
    prev_halt = 0.0

    for r in range(sched.T):
        rel = np.empty((n, k))
        bid_this_round = np.zeros(n, dtype=bool)
        for i in range(n):
            bits = zero
            j = -1
            if mu[i] == UNASSIGNED:
                j, u = favorite(v[i], levels, alpha)
                if u <= 0:
                    mu[i] = BOTTOM
                    j = -1
                else:
                    mu[i] = j
                    bits = unit[j]
            c = goods.feed(bits)
            levels = update_levels(levels, c, s_eff, "threshold")
            rel[i] = c
            if j >= 0:
                d[i] = c[j]
                bids[i] += 1
                bid_this_round[i] = True
            if noise != "off":
                max_err = max(max_err, float(goods.error().max()))
        board.good_releases.append(rel)

        hrel = np.empty(n)
        for i in range(n):
            outbid = mu[i] >= 0 and c[mu[i]] - d[i] >= s_eff[mu[i]]
            if outbid:
                mu[i] = UNASSIGNED
            bit = outbid if halt_mode == "unsatisfied" else bid_this_round[i]
            hrel[i] = halt.feed((float(bit),))[0]
            if noise != "off":
                max_err = max(max_err, float(halt.error()[0]))
        board.halt_releases.append(hrel)
        last = float(hrel[-1])
        increase, prev_halt = last - prev_halt, last
        if increase < threshold:
            board.halted_at = r
            break

    mu[mu == UNASSIGNED] = BOTTOM
    assignment = tuple(None if a < 0 else int(a) for a in mu)
    outcome = Outcome(prices=levels * alpha, assignment=assignment,
                      welfare=social_welfare(market, assignment))
    stats = RunStats(schedule=sched, halt_threshold=threshold, rounds_run=board.rounds,
                     halted_round=board.halted_at, bids_per_bidder=bids,
                     max_counter_error=max_err, exact_bid_counts=goods.exact.copy())
    return outcome, board, stats


def _require_unit_demand(market: Market) -> None:
    if not market.unit_demand:
        raise InstanceError("the matching auction needs unit-demand valuations")


def run(market: Market, params: PMatchParams, seed: int = 0, return_stats: bool = False):
    """Run the matching auction; returns ``(Outcome, Billboard)`` (plus :class:`RunStats`)."""
    _require_unit_demand(market)
    sched = params.schedule(market.n, market.k)
    threshold = params.halt_threshold(market.n, sched)
    out = _run_matching(market, sched, params.alpha, threshold, "unsatisfied",
                        params.noise, params.monotonize, seed, "pmatch")
    return out if return_stats else out[:2]


def run_multiplicative(market: Market, mp: MultiplicativeParams, seed: int = 0, return_stats: bool = False):
    """Same auction halted by the per-round bid count instead of the unsatisfied count."""
    _require_unit_demand(market)
    v = market.v
    nonzero = v[v > 0]
    if nonzero.size and nonzero.min() < mp.lam:
        raise InstanceError(
            f"smallest nonzero value {nonzero.min():.6g} is below lam={mp.lam}"
        )
    sched = mp.schedule(market.n, market.k)
    threshold = mp.halt_threshold(sched)
    out = _run_matching(market, sched, mp.alpha, threshold, "bids",
                        mp.noise, mp.monotonize, seed, "pmatch-mult")
    return out if return_stats else out[:2]


def noisy_opt_estimate(market: Market, epsilon_opt: float, seed: int = 0) -> float:
    """Exact OPT plus Laplace(1 / epsilon_opt) noise (one bidder moves OPT by at most 1)."""
    from privalloc.oracles import exact_max_matching

    if not epsilon_opt > 0:
        raise ParameterError("epsilon_opt must be positive")
    _, opt = exact_max_matching(market)
    rng = derive_rng(seed, "opt-estimate")
    return float(opt + rng.laplace(0.0, 1.0 / epsilon_opt))


def derive_allocation(v_i, billboard: Billboard, index: int) -> Optional[int]:
    """Replay bidder ``index`` with value row ``v_i`` against the billboard alone."""
    billboard.validate()
    n, k = billboard.n, billboard.k
    vrow = np.asarray(v_i, dtype=float)
    if vrow.shape != (k,):
        raise MalformedBillboardError(f"value row has shape {vrow.shape}, billboard has k={k}")
    if not 0 <= index < n:
        raise MalformedBillboardError(f"bidder slot {index} outside 0..{n - 1}")
    levels = billboard.price_levels()
    s_eff = billboard.effective_supply
    alpha = billboard.alpha
    mu, d = UNASSIGNED, 0.0
    zero = np.zeros(k, dtype=np.int64)
    for r in range(billboard.rounds):
        rel = billboard.good_releases[r]
        if mu == UNASSIGNED:
            if index > 0:
                before = levels[r, index - 1]
            else:
                before = levels[r - 1, n - 1] if r > 0 else zero
            j, u = favorite(vrow, before, alpha)
            if u <= 0:
                mu = BOTTOM
            else:
                mu = j
                d = rel[index][j]
        end = rel[n - 1]
        if mu >= 0 and end[mu] - d >= s_eff[mu]:
            mu = UNASSIGNED
        if billboard.halted_at == r:
            break
    return None if mu < 0 else int(mu)
