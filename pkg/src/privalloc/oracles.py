"""Exact non-private baselines and outcome verifiers.

* :func:`exact_max_matching` solves the unit-demand problem as an assignment
  problem with each type expanded into copies.
* :func:`exact_max_allocation` is an exact dynamic program over remaining
  supply vectors, one bidder at a time.
* :func:`kelso_crawford` runs the ascending auction with exact counts.
* :func:`verify_matching_equilibrium` / :func:`verify_allocation_equilibrium`
  measure how far an outcome is from an approximate equilibrium.
* :func:`check_gross_substitutes` brute-forces the gross substitutes
  condition on a price grid.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from privalloc.core import (
    BundleValuationOracle,
    Market,
    Outcome,
    as_bundle,
    assignment_counts,
    bidder_value,
    enumerate_bundles,
    is_feasible,
    social_welfare,
)
from privalloc.errors import BundleCapError, InstanceError, InstanceTooLargeError

MAX_STATES = 10**7
_TOL = 1e-9


@dataclass(frozen=True)
class EquilibriumReport:
    """Measured slack of an outcome.

    ``measured_alpha`` is the largest regret among satisfied bidders (per
    copy held, for bundles), ``measured_beta`` the largest unsold supply of
    a positively priced type, ``measured_rho`` the unsatisfied fraction.
    For bundle markets ``measured_rho`` is normalized by the market size
    ``d`` and ``rho_n`` by the bidder count.
    """

    measured_alpha: float
    measured_beta: int
    measured_rho: float
    feasible: bool
    rho_n: Optional[float] = None

    def satisfies(self, alpha: float, beta: float, rho: float) -> bool:
        return (self.feasible and self.measured_alpha <= alpha + _TOL
                and self.measured_beta <= beta and self.measured_rho <= rho + _TOL)


# --------------------------------------------------------------------------
# exact optima


def exact_max_matching(market: Market) -> tuple[Outcome, float]:
    """Maximum-weight assignment of bidders to copies; zero-value matches become ⊥."""
    v = market.v
    n, k = v.shape
    owners = np.repeat(np.arange(k), [min(s, n) for s in market.supply])
    rows, cols = linear_sum_assignment(v[:, owners], maximize=True)
    assignment: list = [None] * n
    for i, c in zip(rows, cols):
        j = int(owners[c])
        if v[i, j] > 0:
            assignment[i] = j
    welfare = social_welfare(market, assignment)
    return Outcome(prices=np.zeros(k), assignment=assignment, welfare=welfare), welfare


def exact_max_allocation(market: Market, oracles: Optional[BundleValuationOracle] = None,
                         b: Optional[int] = None, max_states: int = MAX_STATES) -> tuple[Outcome, float]:
    """Optimal feasible bundle allocation with per-bidder size cap ``b``.

    Processes bidders in order; the table after bidder ``i`` holds the best
    welfare of bidders ``i..n-1`` for every vector of remaining supply.
    """
    oracle = oracles if oracles is not None else market.oracle()
    b = int(b if b is not None else oracle.max_bundle_size)
    n, k = market.n, market.k
    caps = tuple(min(s, n * b) for s in market.supply)
    shape = tuple(c + 1 for c in caps)
    n_states = int(np.prod(shape))
    if n_states * n > max_states:
        raise InstanceTooLargeError(
            f"{n} bidders x {n_states} supply vectors exceeds the {max_states} state guard"
        )
    bundles = [bd for bd in enumerate_bundles(caps, b)]
    best = np.zeros(shape)
    choices = []
    for i in range(n - 1, -1, -1):
        vals = [oracle.value(i, bd) for bd in bundles]
        new = np.full(shape, -np.inf)
        pick = np.zeros(shape, dtype=np.int32)
        for x, bd in enumerate(bundles):
            dst = tuple(slice(c, None) for c in bd)
            src = tuple(slice(0, sh - c) for sh, c in zip(shape, bd))
            cand = vals[x] + best[src]
            better = cand > new[dst] + _TOL
            new[dst] = np.where(better, cand, new[dst])
            pick[dst] = np.where(better, x, pick[dst])
        best = new
        choices.append(pick)
    choices.reverse()
    rem = np.array(caps)
    assignment = []
    for i in range(n):
        bd = bundles[int(choices[i][tuple(rem)])]
        assignment.append(bd)
        rem = rem - np.asarray(bd)
    welfare = social_welfare(Market(n, k, market.supply, oracle), assignment)
    return Outcome(prices=np.zeros(k), assignment=assignment, welfare=welfare), welfare


# --------------------------------------------------------------------------
# exact auction


def _bundle_to_unit(bundle) -> Optional[int]:
    held = [j for j, c in enumerate(bundle) if c]
    if not held:
        return None
    if len(held) > 1 or bundle[held[0]] > 1:
        raise InstanceError(f"unit-demand bidder ended with bundle {bundle}")
    return held[0]


def kelso_crawford(market: Market, oracles: Optional[BundleValuationOracle] = None,
                   alpha: float = 0.1, b: Optional[int] = None,
                   max_rounds: Optional[int] = None) -> tuple[Outcome, np.ndarray]:
    """Ascending auction with exact counts and no reserve, run to quiescence.

    Unit-demand markets without an explicit oracle get good indices (or
    ``None``) back; otherwise assignments are count vectors.
    """
    from privalloc.palloc import run_exact

    unit = oracles is None and market.unit_demand
    oracle = oracles if oracles is not None else market.oracle()
    if unit and b is None:
        b = 1  # a unit-demand bidder never strictly gains from a second good
    outcome, _, _ = run_exact(market, oracle, alpha, b=b, max_rounds=max_rounds)
    if unit:
        assignment = [_bundle_to_unit(bd) for bd in outcome.assignment]
        outcome = Outcome(prices=outcome.prices, assignment=assignment,
                          welfare=social_welfare(market, assignment))
    return outcome, outcome.prices


# --------------------------------------------------------------------------
# verifiers


def _beta(market: Market, prices: np.ndarray, counts: np.ndarray) -> int:
    over = np.asarray(prices) > 0
    if not over.any():
        return 0
    unsold = np.asarray(market.supply)[over] - counts[over]
    return int(max(unsold.max(), 0))


def matching_regret(market: Market, outcome: Outcome) -> np.ndarray:
    """Per-bidder ``max_j(v_ij - p_j) - (v_i,mu(i) - p_mu(i))``, floored at 0."""
    v, p = market.v, np.asarray(outcome.prices)
    best = (v - p).max(axis=1)
    held = np.array([0.0 if a is None else v[i, a] - p[a] for i, a in enumerate(outcome.assignment)])
    return np.maximum(best - held, 0.0)


def verify_matching_equilibrium(market: Market, outcome: Outcome, alpha: float) -> EquilibriumReport:
    """A bidder is satisfied when their regret is at most ``alpha``."""
    feasible = is_feasible(market, outcome.assignment)
    regret = matching_regret(market, outcome)
    ok = regret <= alpha + _TOL
    counts = assignment_counts(market.k, outcome.assignment)
    return EquilibriumReport(
        measured_alpha=float(regret[ok].max()) if ok.any() else 0.0,
        measured_beta=_beta(market, outcome.prices, counts),
        measured_rho=float((~ok).sum()) / market.n,
        feasible=feasible,
    )


def verify_allocation_equilibrium(market: Market, oracles: Optional[BundleValuationOracle],
                                  outcome: Outcome, b: Optional[int] = None,
                                  alpha: float = 0.1) -> EquilibriumReport:
    """Regret against exhaustive bundle search; satisfied means regret ``<= alpha * |g(i)|``."""
    oracle = oracles if oracles is not None else market.oracle()
    b = int(b if b is not None else oracle.max_bundle_size)
    k = market.k
    p = np.asarray(outcome.prices)
    bundles = enumerate_bundles(market.supply, b)
    mat = np.array(bundles, dtype=float).reshape(len(bundles), k)
    feasible = is_feasible(market, outcome.assignment)
    worst = 0.0
    unsatisfied = 0
    for i, a in enumerate(outcome.assignment):
        g = as_bundle(k, a)
        size = sum(g)
        if size > b:
            raise BundleCapError(f"bidder {i} holds {size} copies, cap is {b}")
        vals = np.array([oracle.value(i, bd) for bd in bundles])
        best = float((vals - mat @ p).max())
        regret = max(best - (oracle.value(i, g) - float(np.dot(g, p))), 0.0)
        if regret <= alpha * size + _TOL:
            if size:
                worst = max(worst, regret / size)
        else:
            unsatisfied += 1
    counts = assignment_counts(k, outcome.assignment)
    return EquilibriumReport(
        measured_alpha=worst,
        measured_beta=_beta(market, p, counts),
        measured_rho=unsatisfied / market.d,
        feasible=feasible,
        rho_n=unsatisfied / market.n,
    )


def write_reports_csv(path: str | Path, reports: Iterable[tuple[str, EquilibriumReport]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instance_id", "measured_alpha", "measured_beta", "measured_rho", "feasible"])
        for name, rep in reports:
            w.writerow([name, f"{rep.measured_alpha:.12g}", rep.measured_beta,
                        f"{rep.measured_rho:.12g}", str(rep.feasible).lower()])


# --------------------------------------------------------------------------
# gross substitutes


@dataclass(frozen=True)
class GSWitness:
    p: tuple
    p_prime: tuple
    bundle: tuple  # demanded at p; its fixed-price part is in no demanded bundle at p_prime


def check_gross_substitutes(oracle: BundleValuationOracle, bidder: int, k: int, s,
                            b: Optional[int] = None, price_grid_step: float = 0.25):
    """Brute-force the gross substitutes condition on a price grid.

    For every grid pair ``p <= p'`` and every demanded ``S`` at ``p``, some
    bundle demanded at ``p'`` must contain the part of ``S`` whose prices
    did not change.  Returns ``(True, None)`` or ``(False, GSWitness)``.
    """
    b = int(b if b is not None else oracle.max_bundle_size)
    supply = (s,) * k if np.isscalar(s) else tuple(s)
    bundles = enumerate_bundles(supply, b)
    index = {bd: x for x, bd in enumerate(bundles)}
    mat = np.array(bundles, dtype=np.int64).reshape(len(bundles), k)
    vals = np.array([oracle.value(bidder, bd) for bd in bundles])
    steps = int(round(1.0 / price_grid_step))
    grid = np.round(np.arange(steps + 1) * price_grid_step, 12)
    grid = grid[grid <= 1.0 + 1e-12]
    points = np.array(list(itertools.product(grid, repeat=k))).reshape(-1, k)
    util = vals[None, :] - points @ mat.T
    demand = util >= util.max(axis=1, keepdims=True) - _TOL  # (prices, bundles)
    # contains[x, y]: bundle y holds at least bundle x's copies
    contains = (mat[None, :, :] >= mat[:, None, :]).all(axis=2)
    covered = (demand.astype(np.int64) @ contains.T.astype(np.int64)) > 0
    # restrict[code][x]: bundle x with the types outside mask ``code`` removed
    weights = 1 << np.arange(k)
    restrict = np.empty((1 << k, len(bundles)), dtype=np.int64)
    for code in range(1 << k):
        keep = (code >> np.arange(k)) & 1
        restrict[code] = [index[tuple(int(c) for c in row * keep)] for row in mat]
    for a in range(len(points)):
        qs = np.nonzero((points >= points[a]).all(axis=1))[0]
        qs = qs[qs != a]
        if not qs.size:
            continue
        S = np.nonzero(demand[a])[0]
        codes = (points[qs] == points[a]) @ weights
        parts = restrict[codes][:, S]  # (pairs, demanded bundles)
        ok = covered[qs[:, None], parts]
        bad = np.nonzero(~ok.all(axis=1))[0]
        if bad.size:
            q = qs[bad[0]]
            x = S[int(np.argmin(ok[bad[0]]))]
            return False, GSWitness(tuple(points[a].tolist()), tuple(points[q].tolist()),
                                    tuple(int(c) for c in mat[x]))
    return True, None


def complements_oracle(k: int = 2) -> BundleValuationOracle:
    """One bidder who values only the pair of types 0 and 1 together (not GS)."""
    from privalloc.core import FunctionOracle

    def fn(i, counts):
        return 1.0 if counts[0] >= 1 and counts[1] >= 1 else 0.0

    return FunctionOracle(fn, 1, k, 2)


def welfare_of(market: Market, outcome: Outcome) -> float:
    return float(sum(bidder_value(market, i, a) for i, a in enumerate(outcome.assignment)))
