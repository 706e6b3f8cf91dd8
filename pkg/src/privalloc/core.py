"""Problem instances, valuations, outcomes and social welfare.

Goods of one type are interchangeable, so a bundle is always a vector of
per-type multiplicities and never a set of individual good IDs.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Mapping, Sequence, Union

import numpy as np

from privalloc.errors import (
    FeasibilityError,
    InstanceError,
    OracleContractError,
    ParameterError,
)

Bundle = tuple  # tuple[int, ...] of length k, copies held per type
Assignment = Union[int, None, Bundle]  # good type, unassigned (None), or bundle

_VALUE_TOL = 1e-12


def derive_rng(root: int, tag: str, *indices: int) -> np.random.Generator:
    """Return an independent PCG64 stream for ``(root, tag, *indices)``.

    The splitting rule is ``SeedSequence(entropy=root,
    spawn_key=(crc32(tag), *indices))``; every stochastic component of an
    experiment derives its stream this way from the single root seed.
    """
    key = (zlib.crc32(tag.encode("utf-8")),) + tuple(int(i) for i in indices)
    seq = np.random.SeedSequence(entropy=int(root) & (2**64 - 1), spawn_key=key)
    return np.random.Generator(np.random.PCG64(seq))


# --------------------------------------------------------------------------
# bundles


def empty_bundle(k: int) -> Bundle:
    return (0,) * k


def bundle_size(bundle: Bundle) -> int:
    return int(sum(bundle))


def enumerate_bundles(supply: Sequence[int], max_size: int) -> list[Bundle]:
    """All multiplicity vectors with ``counts[j] <= supply[j]`` and total ``<= max_size``.

    Ordered by total size, then so lower type indices come first: among
    equal-score candidates the earliest one wins every tie.
    """
    caps = [min(int(s), max_size) for s in supply]
    out: list[Bundle] = []

    def extend(prefix: tuple, room: int) -> None:
        j = len(prefix)
        if j == len(caps):
            out.append(prefix)
            return
        for c in range(min(caps[j], room) + 1):
            extend(prefix + (c,), room - c)

    extend((), max_size)
    out.sort(key=lambda c: (sum(c), tuple(-x for x in c)))
    return out


# --------------------------------------------------------------------------
# valuations


@dataclass(frozen=True, eq=False)
class UnitDemandValuation:
    """Per-bidder, per-type values ``v[i, j]`` in [0, 1]."""

    v: np.ndarray

    def __post_init__(self):
        v = np.array(self.v, dtype=float)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise InstanceError(f"valuation matrix must be n x k, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0:
            raise InstanceError("unit-demand values must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "v", v)

    @property
    def n(self) -> int:
        return self.v.shape[0]

    @property
    def k(self) -> int:
        return self.v.shape[1]


class BundleValuationOracle:
    """Value queries ``v_i(bundle)`` on type-multiplicity vectors.

    Subclasses implement :meth:`_value`; :meth:`value` enforces the oracle
    contract (empty bundle is worth 0, every answer lies in [0, 1]).
    ``max_bundle_size`` caps exhaustive demand search.
    """

    def __init__(self, n: int, k: int, max_bundle_size: int):
        if max_bundle_size < 1:
            raise ParameterError("max_bundle_size must be a positive integer")
        self.n = int(n)
        self.k = int(k)
        self.max_bundle_size = int(max_bundle_size)

    def _value(self, i: int, counts: Bundle) -> float:
        raise NotImplementedError

    def value(self, i: int, counts: Bundle) -> float:
        counts = tuple(int(c) for c in counts)
        if not any(counts):
            return 0.0
        val = float(self._value(i, counts))
        if not (-_VALUE_TOL <= val <= 1.0 + _VALUE_TOL) or not np.isfinite(val):
            raise OracleContractError(
                f"oracle value {val!r} for bidder {i}, bundle {counts} is outside [0, 1]"
            )
        return min(max(val, 0.0), 1.0)

    @property
    def b(self) -> int:
        return self.max_bundle_size


class UnitDemandOracle(BundleValuationOracle):
    """``v_i(S) = max_{j in S} v_ij``; larger bundles are allowed, they are worth the max."""

    def __init__(self, valuation: UnitDemandValuation, max_bundle_size: int = 1):
        super().__init__(valuation.n, valuation.k, max_bundle_size)
        self.valuation = valuation

    def _value(self, i, counts):
        row = self.valuation.v[i]
        return max(row[j] for j, c in enumerate(counts) if c > 0)


class AdditiveOracle(BundleValuationOracle):
    """``v_i(S) = min(cap, sum_j w_ij * counts_j)``.

    With ``cap`` never binding inside the size cap this is additive, hence
    gross substitutes; a binding cap may break the property.
    """

    def __init__(self, weights, cap: float = 1.0, max_bundle_size: int = 2):
        w = np.array(weights, dtype=float)
        if w.ndim != 2 or w.min() < 0:
            raise InstanceError("additive weights must be a nonnegative n x k matrix")
        super().__init__(w.shape[0], w.shape[1], max_bundle_size)
        if not 0 < cap <= 1:
            raise ParameterError("cap must lie in (0, 1]")
        self.weights = w
        self.cap = float(cap)

    def _value(self, i, counts):
        return min(self.cap, float(np.dot(self.weights[i], counts)))


class FunctionOracle(BundleValuationOracle):
    """Wraps a plain callable ``fn(i, counts) -> float``."""

    def __init__(self, fn: Callable[[int, Bundle], float], n: int, k: int, max_bundle_size: int):
        super().__init__(n, k, max_bundle_size)
        self.fn = fn

    def _value(self, i, counts):
        return self.fn(i, counts)


class TableOracle(BundleValuationOracle):
    """Explicit ``(bidder, counts) -> value`` table; bundles missing from the table are worth 0."""

    def __init__(self, table: Mapping[tuple[int, Bundle], float], n: int, k: int, max_bundle_size: int):
        super().__init__(n, k, max_bundle_size)
        self.table = {}
        for (i, counts), val in table.items():
            counts = tuple(int(c) for c in counts)
            if len(counts) != k:
                raise InstanceError(f"bundle {counts} does not have {k} entries")
            if sum(counts) > max_bundle_size:
                raise InstanceError(f"bundle {counts} exceeds the size cap {max_bundle_size}")
            self.table[(int(i), counts)] = float(val)

    def _value(self, i, counts):
        return self.table.get((i, counts), 0.0)


def unit_demand_as_bundle_oracle(v: UnitDemandValuation, max_bundle_size: int = 1) -> UnitDemandOracle:
    return UnitDemandOracle(v, max_bundle_size=max_bundle_size)


# --------------------------------------------------------------------------
# market and outcome


@dataclass(frozen=True, eq=False)
class Market:
    """``n`` bidders, ``k`` good types with per-type supply, and their valuations.

    ``supply`` may be an int (uniform) or a length-k sequence.  ``s`` is the
    minimum supply, which is what every parameter formula uses.
    """

    n: int
    k: int
    supply: tuple
    valuations: Union[UnitDemandValuation, BundleValuationOracle]

    def __post_init__(self):
        if self.n < 1 or self.k < 1:
            raise InstanceError("market needs n >= 1 and k >= 1")
        sup = self.supply
        if isinstance(sup, (int, np.integer)):
            sup = (int(sup),) * self.k
        sup = tuple(int(x) for x in sup)
        if len(sup) != self.k or min(sup) < 1:
            raise InstanceError(f"supply must be k={self.k} positive integers, got {sup}")
        object.__setattr__(self, "supply", sup)
        val = self.valuations
        if isinstance(val, np.ndarray):
            val = UnitDemandValuation(val)
            object.__setattr__(self, "valuations", val)
        if (val.n, val.k) != (self.n, self.k):
            raise InstanceError(
                f"valuations are {val.n} x {val.k}, market is {self.n} x {self.k}"
            )

    @property
    def s(self) -> int:
        return min(self.supply)

    @property
    def d(self) -> int:
        """Market size: total number of goods."""
        return sum(self.supply)

    @property
    def unit_demand(self) -> bool:
        return isinstance(self.valuations, UnitDemandValuation)

    @property
    def v(self) -> np.ndarray:
        if not self.unit_demand:
            raise InstanceError("market has bundle valuations, not a unit-demand matrix")
        return self.valuations.v

    def oracle(self, max_bundle_size: int | None = None) -> BundleValuationOracle:
        if self.unit_demand:
            return unit_demand_as_bundle_oracle(self.valuations, max_bundle_size or 1)
        return self.valuations


@dataclass(frozen=True, eq=False)
class Outcome:
    prices: np.ndarray
    assignment: tuple
    welfare: float

    def __post_init__(self):
        p = np.array(self.prices, dtype=float)
        p.setflags(write=False)
        object.__setattr__(self, "prices", p)
        object.__setattr__(self, "assignment", tuple(self.assignment))


def assignment_counts(k: int, assignment: Sequence[Assignment]) -> np.ndarray:
    """Copies of each type handed out by ``assignment``."""
    counts = np.zeros(k, dtype=np.int64)
    for a in assignment:
        if a is None:
            continue
        if isinstance(a, (int, np.integer)):
            if not 0 <= a < k:
                raise InstanceError(f"good type {a} out of range")
            counts[a] += 1
        else:
            if len(a) != k or min(a) < 0:
                raise InstanceError(f"bundle {a} is not a length-{k} count vector")
            counts += np.asarray(a, dtype=np.int64)
    return counts


def as_bundle(k: int, a: Assignment) -> Bundle:
    if a is None:
        return empty_bundle(k)
    if isinstance(a, (int, np.integer)):
        out = [0] * k
        out[int(a)] = 1
        return tuple(out)
    return tuple(int(c) for c in a)


def bidder_value(market: Market, i: int, a: Assignment) -> float:
    if a is None:
        return 0.0
    if market.unit_demand and isinstance(a, (int, np.integer)):
        return float(market.v[i, a])
    return market.oracle().value(i, as_bundle(market.k, a))


def check_feasible(market: Market, assignment: Sequence[Assignment]) -> None:
    if len(assignment) != market.n:
        raise InstanceError(f"assignment has {len(assignment)} entries for {market.n} bidders")
    counts = assignment_counts(market.k, assignment)
    over = np.nonzero(counts > np.asarray(market.supply))[0]
    if over.size:
        j = int(over[0])
        raise FeasibilityError(
            f"type {j} assigned {int(counts[j])} copies but supply is {market.supply[j]}"
        )


def social_welfare(market: Market, assignment: Sequence[Assignment]) -> float:
    """Sum of bidders' values for their assignments; raises on infeasible assignments."""
    check_feasible(market, assignment)
    return float(sum(bidder_value(market, i, a) for i, a in enumerate(assignment)))


def is_feasible(market: Market, assignment: Sequence[Assignment]) -> bool:
    try:
        check_feasible(market, assignment)
    except FeasibilityError:
        return False
    return True


# --------------------------------------------------------------------------
# instance files


def market_to_dict(market: Market) -> dict:
    sup = market.supply
    s = sup[0] if len(set(sup)) == 1 else list(sup)
    out = {"n": market.n, "k": market.k, "s": s}
    if market.unit_demand:
        out["valuations"] = market.v.tolist()
        return out
    oracle = market.valuations
    b = oracle.max_bundle_size
    rows = []
    for i in range(market.n):
        for bundle in enumerate_bundles(sup, b):
            if any(bundle):
                val = oracle.value(i, bundle)
                if val != 0.0:
                    rows.append({"bidder": i, "counts": list(bundle), "value": val})
    out["b"] = b
    out["bundles"] = rows
    return out


def market_from_dict(doc: Mapping) -> Market:
    try:
        n, k, s = int(doc["n"]), int(doc["k"]), doc["s"]
    except KeyError as exc:
        raise InstanceError(f"instance is missing field {exc}") from None
    supply = s if isinstance(s, int) else tuple(s)
    if "valuations" in doc:
        return Market(n, k, supply, UnitDemandValuation(np.asarray(doc["valuations"], dtype=float)))
    if "bundles" in doc:
        table = {(int(r["bidder"]), tuple(r["counts"])): float(r["value"]) for r in doc["bundles"]}
        b = int(doc.get("b", max((sum(c) for _, c in table), default=1)))
        return Market(n, k, supply, TableOracle(table, n, k, b))
    raise InstanceError("instance needs either 'valuations' or 'bundles'")


def load_market(path: str | Path) -> Market:
    with open(path) as fh:
        return market_from_dict(json.load(fh))


def save_market(market: Market, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(market_to_dict(market), fh, indent=1)


def iter_assignment_json(assignment: Sequence[Assignment]) -> Iterator:
    for a in assignment:
        if a is None or isinstance(a, (int, np.integer)):
            yield None if a is None else int(a)
        else:
            yield [int(c) for c in a]
