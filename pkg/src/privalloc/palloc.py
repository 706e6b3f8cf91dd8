"""Private allocation for gross-substitutes bidders by simulated ascending auctions.

Bidders hold bundles and add one copy per turn.  Each held copy keeps the
counter reading and price at which it was acquired; a copy is lost once its
type's released count moves ``s - m`` past that reading.  Demand is computed
at *effective* prices: held copies at their acquisition price, everything
else at the current price.  Because the held part's cost is the same on both
sides of the comparison, only the marginal price of new copies matters.

The same engine with exact counts, no reserve and halting at quiescence is
the non-private Kelso-Crawford auction (:func:`privalloc.oracles.kelso_crawford`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from privalloc.core import (
    BundleValuationOracle,
    Market,
    Outcome,
    enumerate_bundles,
    social_welfare,
)
from privalloc.counter import NOISE_MODES, CounterBank
from privalloc.errors import (
    BundleCapError,
    ConfigurationError,
    MalformedBillboardError,
    NonTerminationError,
    ParameterError,
)
from privalloc.pmatch import (
    Billboard,
    Schedule,
    _check_unit,
    _clamp_threshold,
    _schedule,
    update_levels,
)


@dataclass(frozen=True)
class PAllocParams:
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

    @classmethod
    def for_welfare(cls, alpha: float, epsilon: float, gamma: float = 0.1, **kw) -> "PAllocParams":
        """Run with ``alpha / 3`` increment and unsatisfied fraction; targets welfare ``OPT - alpha d``."""
        return cls(alpha=alpha / 3.0, rho=alpha / 3.0, epsilon=epsilon, gamma=gamma, **kw)

    def schedule(self, n: int, k: int) -> Schedule:
        T = self.T if self.T is not None else math.ceil(10.0 / (self.alpha * self.rho))
        # E carries an extra +1 relative to the matching auction
        return _schedule(T, self.epsilon, self.gamma, n, k, self.E, self.m, extra=1.0)

    def halt_threshold(self, d: int, sched: Schedule) -> float:
        return _clamp_threshold(self.rho * d - 2 * sched.E)


@dataclass
class BundleState:
    """Copies a bidder holds: one ``[type, saved_count, acquisition_price]`` per copy."""

    k: int
    copies: list = field(default_factory=list)

    @property
    def counts(self) -> tuple:
        out = [0] * self.k
        for j, _, _ in self.copies:
            out[j] += 1
        return tuple(out)

    @property
    def original_cost(self) -> float:
        return float(sum(p for _, _, p in self.copies))

    def outbid(self, released: np.ndarray, s_eff: np.ndarray) -> list:
        return [c for c in self.copies if released[c[0]] - c[1] >= s_eff[c[0]]]

    def drop_outbid(self, released: np.ndarray, s_eff: np.ndarray) -> int:
        keep = [c for c in self.copies if released[c[0]] - c[1] < s_eff[c[0]]]
        dropped = len(self.copies) - len(keep)
        self.copies = keep
        return dropped


class DemandSearch:
    """Exhaustive demand over bundles of size ``<= b`` with per-type counts ``<= supply``.

    Bidder values for every candidate bundle are queried once and cached.
    """

    def __init__(self, oracle: BundleValuationOracle, supply, b: Optional[int] = None):
        self.oracle = oracle
        self.b = int(b if b is not None else oracle.max_bundle_size)
        self.bundles = enumerate_bundles(supply, self.b)
        self.matrix = np.array(self.bundles, dtype=np.int64).reshape(len(self.bundles), oracle.k)
        self.index = {bd: x for x, bd in enumerate(self.bundles)}
        self._values = {}

    def values(self, i: int) -> np.ndarray:
        vals = self._values.get(i)
        if vals is None:
            vals = np.array([self.oracle.value(i, bd) for bd in self.bundles])
            self._values[i] = vals
        return vals

    def value(self, i: int, bundle) -> float:
        x = self.index.get(tuple(bundle))
        if x is None:
            return self.oracle.value(i, tuple(bundle))
        return float(self.values(i)[x])

    def step(self, i: int, held, prices: np.ndarray) -> Optional[int]:
        """Type of one new copy to bid on, or ``None`` if no strict superset beats ``held``."""
        g = np.asarray(held, dtype=np.int64)
        if g.sum() > self.b:
            raise BundleCapError(f"bidder {i} holds {int(g.sum())} copies, cap is {self.b}")
        extra = self.matrix - g
        mask = (extra >= 0).all(axis=1) & (extra.sum(axis=1) > 0)
        if not mask.any():
            return None
        vals = self.values(i)
        scores = np.where(mask, vals - extra @ prices, -np.inf)
        x = int(np.argmax(scores))
        if not scores[x] > self.value(i, held):
            return None
        return int(np.nonzero(extra[x] > 0)[0][0])

    def favorite_utility(self, i: int, prices: np.ndarray) -> float:
        return float(np.max(self.values(i) - self.matrix @ prices))


def demand_step(oracle: BundleValuationOracle, bidder: int, state, prices, supply=None) -> Optional[int]:
    """One demand query: the type to add to ``state`` at effective prices, or ``None``.

    ``state`` is a :class:`BundleState` or a count vector.  ``supply``
    defaults to ``b`` copies of every type.
    """
    counts = state.counts if isinstance(state, BundleState) else tuple(state)
    prices = np.asarray(prices, dtype=float)
    if supply is None:
        supply = (oracle.max_bundle_size,) * oracle.k
    return DemandSearch(oracle, supply).step(bidder, counts, prices)


@dataclass
class BundleRunStats:
    schedule: Schedule
    halt_threshold: float
    rounds_run: int
    halted_round: Optional[int]
    bids_per_bidder: np.ndarray
    max_counter_error: float
    drops: list  # (round, bidder, type, released, saved) for every lost copy


def _run_bundles(market: Market, oracle: BundleValuationOracle, sched: Schedule, alpha: float,
                 threshold: float, noise: str, monotonize: bool, seed: int, tag: str,
                 b: Optional[int] = None):
    n, k = market.n, market.k
    supply = np.asarray(market.supply)
    if market.s <= sched.m:
        raise ConfigurationError(
            f"supply s={market.s} must exceed the reserved supply m={sched.m}"
        )
    search = DemandSearch(oracle, market.supply, b)
    s_eff = (supply - sched.m).astype(float)
    horizon = sched.horizon(n)
    goods = CounterBank(k, sched.epsilon_prime, horizon, noise, monotonize, seed=seed, tag=tag + ".goods")
    halt = CounterBank(1, sched.epsilon_prime, horizon, noise, monotonize, seed=seed, tag=tag + ".halt")
    board = Billboard(n=n, k=k, alpha=alpha, effective_supply=tuple(s_eff.tolist()),
                      halt_threshold=threshold, T=sched.T, price_rule="multiple",
                      supply=tuple(market.supply))
    states = [BundleState(k) for _ in range(n)]
    bids = np.zeros(n, dtype=np.int64)
    levels = np.zeros(k, dtype=np.int64)
    c = np.zeros(k)
    zero = np.zeros(k)
    unit = np.eye(k)
    drops = []
    max_err = 0.0
    prev_halt = 0.0

    for r in range(sched.T):
        rel = np.empty((n, k))
        for i in range(n):
            st = states[i]
            for j, saved, _ in st.outbid(c, s_eff):
                drops.append((r, i, j, float(c[j]), float(saved)))
            st.drop_outbid(c, s_eff)
            prices = levels * alpha
            j = search.step(i, st.counts, prices)
            c = goods.feed(zero if j is None else unit[j])
            levels = update_levels(levels, c, s_eff, "multiple")
            rel[i] = c
            if j is not None:
                st.copies.append([j, float(c[j]), float(prices[j])])
                bids[i] += 1
            if noise != "off":
                max_err = max(max_err, float(goods.error().max()))
        board.good_releases.append(rel)

        prices = levels * alpha
        hrel = np.empty(n)
        for i in range(n):
            st = states[i]
            lost = st.outbid(c, s_eff)
            held = st.counts
            if lost:
                held = list(held)
                for j, _, _ in lost:
                    held[j] -= 1
            wants = search.step(i, held, prices) is not None
            hrel[i] = halt.feed((float(wants),))[0]
            if noise != "off":
                max_err = max(max_err, float(halt.error()[0]))
        board.halt_releases.append(hrel)
        last = float(hrel[-1])
        increase, prev_halt = last - prev_halt, last
        if increase < threshold:
            board.halted_at = r
            break

    for i, st in enumerate(states):
        for j, saved, _ in st.outbid(c, s_eff):
            drops.append((board.rounds, i, j, float(c[j]), float(saved)))
        st.drop_outbid(c, s_eff)
    assignment = tuple(st.counts for st in states)
    outcome = Outcome(prices=levels * alpha, assignment=assignment,
                      welfare=social_welfare(market, assignment))
    stats = BundleRunStats(schedule=sched, halt_threshold=threshold, rounds_run=board.rounds,
                           halted_round=board.halted_at, bids_per_bidder=bids,
                           max_counter_error=max_err, drops=drops)
    return outcome, board, stats


def run(market: Market, oracles: Optional[BundleValuationOracle], params: PAllocParams,
        seed: int = 0, return_stats: bool = False, b: Optional[int] = None):
    """Run the bundle auction; returns ``(Outcome, Billboard)`` (plus stats).

    ``oracles`` defaults to the market's own valuations.  Requires ``d >= n``.
    """
    oracle = oracles if oracles is not None else market.oracle()
    if market.d < market.n:
        raise ConfigurationError(f"market size d={market.d} is smaller than n={market.n}")
    sched = params.schedule(market.n, market.k)
    threshold = params.halt_threshold(market.d, sched)
    out = _run_bundles(market, oracle, sched, params.alpha, threshold, params.noise,
                       params.monotonize, seed, "palloc", b=b)
    return out if return_stats else out[:2]


def kelso_crawford_rounds_guard(market: Market, alpha: float) -> int:
    levels = math.ceil(1.0 / alpha) + 2
    return int(market.d * levels + 2 * market.n + 10)


def run_exact(market: Market, oracle: BundleValuationOracle, alpha: float,
              b: Optional[int] = None, max_rounds: Optional[int] = None):
    """Exact counts, no reserve, run until no bidder wants to bid."""
    _check_unit("alpha", alpha)
    T = max_rounds or kelso_crawford_rounds_guard(market, alpha)
    sched = Schedule(T=T, epsilon_prime=1.0, E=0, m=0)
    outcome, board, stats = _run_bundles(market, oracle, sched, alpha, 1.0, "off", False, 0,
                                         "kelso", b=b)
    if board.halted_at is None:
        raise NonTerminationError(f"no quiescence within {T} rounds")
    return outcome, board, stats


def derive_bundle(oracle: BundleValuationOracle, index: int, billboard: Billboard,
                  b: Optional[int] = None) -> tuple:
    """Replay bidder ``index``'s bundle from the billboard and their own oracle."""
    billboard.validate()
    supply = billboard.supply
    if supply is None or billboard.price_rule != "multiple":
        raise MalformedBillboardError("billboard was not produced by the bundle auction")
    n, k = billboard.n, billboard.k
    search = DemandSearch(oracle, supply, b)
    s_eff = np.asarray(billboard.effective_supply)
    levels = billboard.price_levels()
    alpha = billboard.alpha
    st = BundleState(k)
    c = np.zeros(k)
    zero = np.zeros(k, dtype=np.int64)
    for r in range(billboard.rounds):
        rel = billboard.good_releases[r]
        if index > 0:
            c = rel[index - 1]
            before = levels[r, index - 1]
        else:
            c = billboard.good_releases[r - 1][n - 1] if r > 0 else np.zeros(k)
            before = levels[r - 1, n - 1] if r > 0 else zero
        st.drop_outbid(c, s_eff)
        prices = before * alpha
        j = search.step(index, st.counts, prices)
        if j is not None:
            st.copies.append([j, float(rel[index][j]), float(prices[j])])
        if billboard.halted_at == r:
            break
    st.drop_outbid(billboard.good_releases[-1][n - 1], s_eff)
    return st.counts
