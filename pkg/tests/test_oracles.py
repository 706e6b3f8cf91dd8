import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from privalloc import palloc
from privalloc.core import (
    AdditiveOracle,
    FunctionOracle,
    Market,
    Outcome,
    UnitDemandOracle,
    UnitDemandValuation,
    enumerate_bundles,
)
from privalloc.errors import BundleCapError, InstanceTooLargeError
from privalloc.oracles import (
    check_gross_substitutes,
    complements_oracle,
    exact_max_allocation,
    exact_max_matching,
    kelso_crawford,
    verify_allocation_equilibrium,
    verify_matching_equilibrium,
    write_reports_csv,
)


def brute_force_matching(v, s):
    """Best welfare over every assignment of bidders to types or nothing."""
    n, k = v.shape
    best = 0.0
    for choice in itertools.product(range(k + 1), repeat=n):
        counts = np.bincount([c for c in choice if c < k], minlength=k)
        if (counts <= s).all():
            best = max(best, sum(v[i, c] for i, c in enumerate(choice) if c < k))
    return best


def brute_force_allocation(oracle, n, k, s, b):
    bundles = enumerate_bundles((s,) * k, b)
    best = 0.0
    for combo in itertools.product(range(len(bundles)), repeat=n):
        total = np.sum([bundles[x] for x in combo], axis=0)
        if (total <= s).all():
            best = max(best, sum(oracle.value(i, bundles[x]) for i, x in enumerate(combo)))
    return best


def _ud(v, s):
    v = np.asarray(v, dtype=float)
    return Market(v.shape[0], v.shape[1], s, UnitDemandValuation(v))


def test_matching_examples():
    assert exact_max_matching(_ud([[1, 0], [0, 1]], 1))[1] == 2.0
    out, opt = exact_max_matching(_ud([[1, 1], [1, 1]], 1))
    assert opt == 2.0 and sorted(out.assignment) == [0, 1]


def test_matching_agrees_with_enumeration():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        n, k, s = int(rng.integers(1, 7)), int(rng.integers(1, 5)), int(rng.integers(1, 3))
        v = rng.random((n, k))
        v[rng.random((n, k)) < 0.2] = 0.0
        assert exact_max_matching(_ud(v, s))[1] == pytest.approx(brute_force_matching(v, s), abs=1e-9)


def test_allocation_examples():
    zero = FunctionOracle(lambda i, c: 0.0, 2, 2, 2)
    assert exact_max_allocation(Market(2, 2, 2, zero))[1] == 0.0
    add = AdditiveOracle([[0.4]], cap=1.0, max_bundle_size=2)
    assert exact_max_allocation(Market(1, 1, 2, add), b=2)[1] == pytest.approx(0.8)


def test_allocation_reduces_to_matching():
    rng = np.random.default_rng(7)
    for _ in range(150):
        n, k, s = int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(1, 3))
        market = _ud(rng.random((n, k)), s)
        got = exact_max_allocation(market, UnitDemandOracle(market.valuations, max_bundle_size=1), b=1)[1]
        assert got == pytest.approx(exact_max_matching(market)[1])


def test_allocation_agrees_with_enumeration():
    rng = np.random.default_rng(8)
    for _ in range(60):
        n, k, s, b = int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(1, 3))
        orc = AdditiveOracle(0.8 * rng.random((n, k)), cap=1.0, max_bundle_size=b)
        out, opt = exact_max_allocation(Market(n, k, s, orc), b=b)
        assert opt == pytest.approx(brute_force_allocation(orc, n, k, s, b))
        assert out.welfare == pytest.approx(opt)


def test_allocation_guard():
    orc = AdditiveOracle(np.full((6, 6), 0.1), max_bundle_size=3)
    with pytest.raises(InstanceTooLargeError):
        exact_max_allocation(Market(6, 6, 20, orc), b=3, max_states=10**4)


def test_kelso_crawford_uncontested():
    market = _ud([[0.3, 0.9], [0.8, 0.1], [0.5, 0.6]], 3)
    out, prices = kelso_crawford(market, alpha=0.1)
    assert out.assignment == (1, 0, 1)
    assert not prices.any()


def test_kelso_crawford_contested():
    market = _ud([[1.0], [1.0]], 1)
    out, prices = kelso_crawford(market, alpha=0.1)
    assert sorted(out.assignment, key=lambda a: a is None) == [0, None]
    assert prices[0] >= 1 - 0.1


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_kelso_crawford_is_approximate_equilibrium(seed):
    rng = np.random.default_rng(seed)
    n, k, s = int(rng.integers(1, 10)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
    market = _ud(rng.random((n, k)), s)
    alpha = 0.1
    out, _ = kelso_crawford(market, alpha=alpha)
    rep = verify_matching_equilibrium(market, out, alpha)
    assert rep.feasible and rep.measured_alpha <= alpha + 1e-9
    assert rep.measured_beta == 0 and rep.measured_rho == 0


def test_kelso_crawford_welfare():
    alpha = 0.2
    for seed in range(40):
        rng = np.random.default_rng(seed)
        n, k = int(rng.integers(2, 20)), int(rng.integers(1, 4))
        market = _ud(rng.random((n, k)), math.ceil(4 / alpha + 1))
        out, _ = kelso_crawford(market, alpha=alpha)
        assert out.welfare >= exact_max_matching(market)[1] - alpha * n


def test_verify_exact_equilibrium_is_zero():
    market = _ud([[1, 0], [0, 1]], 1)
    rep = verify_matching_equilibrium(market, Outcome([0.0, 0.0], [0, 1], 2.0), 0.1)
    assert (rep.measured_alpha, rep.measured_beta, rep.measured_rho, rep.feasible) == (0.0, 0, 0.0, True)


def test_verify_detects_swap():
    market = _ud([[0.9, 0.1], [0.2, 0.8]], 1)
    rep = verify_matching_equilibrium(market, Outcome([0.0, 0.0], [1, 0], 0.3), 0.1)
    assert rep.measured_rho == 1.0
    rep = verify_matching_equilibrium(market, Outcome([0.0, 0.0], [1, 0], 0.3), 1.0)
    assert rep.measured_alpha > 0


def test_verify_is_pure():
    market = _ud([[0.9, 0.1], [0.2, 0.8], [0.5, 0.5]], 1)
    out = Outcome([0.2, 0.0], [0, 1, None], 1.7)
    assert verify_matching_equilibrium(market, out, 0.1) == verify_matching_equilibrium(market, out, 0.1)


def test_verify_allocation():
    orc = AdditiveOracle([[0.3, 0.4], [0.4, 0.3]], max_bundle_size=2)
    market = Market(2, 2, 1, orc)
    # at zero prices both bidders would rather hold both goods: regret 0.3 each
    free = verify_allocation_equilibrium(market, orc, Outcome([0.0, 0.0], [(0, 1), (1, 0)], 0), 2, 0.1)
    assert free.feasible and free.measured_rho == 1.0 and free.rho_n == 1.0
    good = verify_allocation_equilibrium(market, orc, Outcome([0.35, 0.35], [(0, 1), (1, 0)], 0), 2, 0.1)
    assert good.measured_alpha == 0.0 and good.measured_rho == 0.0
    corrupted = verify_allocation_equilibrium(market, orc, Outcome([0.35, 0.35], [(1, 0), (0, 1)], 0), 2, 0.01)
    assert corrupted.measured_rho > 0 and corrupted.rho_n == 1.0
    with pytest.raises(BundleCapError):
        verify_allocation_equilibrium(market, orc, Outcome([0.0, 0.0], [(1, 1), (0, 0)], 0), 1, 0.1)


def test_noise_off_palloc_satisfies_alpha():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n, k, b = int(rng.integers(1, 5)), int(rng.integers(1, 3)), 2
        orc = AdditiveOracle(rng.random((n, k)) / 4, cap=1.0, max_bundle_size=b)
        market = Market(n, k, 4, orc)
        out, _ = palloc.run(market, None, palloc.PAllocParams(0.2, 0.2, 1.0, noise="off", E=0, m=1), b=b)
        rep = verify_allocation_equilibrium(market, orc, out, b, 0.2)
        assert rep.feasible and rep.measured_alpha <= 0.2 + 1e-9


def test_gs_unit_demand_and_additive_pass():
    rng = np.random.default_rng(5)
    for k in (1, 2, 3):
        for _ in range(5):
            ud = UnitDemandOracle(UnitDemandValuation(rng.random((1, k))), max_bundle_size=k)
            assert check_gross_substitutes(ud, 0, k, 1, k, 0.25)[0]
            add = AdditiveOracle(rng.random((1, k)) / k, max_bundle_size=k)
            assert check_gross_substitutes(add, 0, k, 1, k, 0.25)[0]


def test_gs_complements_fail_with_witness():
    ok, w = check_gross_substitutes(complements_oracle(), 0, 2, 1, 2, 0.25)
    assert not ok
    assert all(a <= b for a, b in zip(w.p, w.p_prime))
    assert w.bundle == (1, 1)


def _naive_gs(oracle, k, s, b, step):
    bundles = enumerate_bundles((s,) * k, b)
    grid = [round(x * step, 12) for x in range(int(round(1 / step)) + 1)]

    def demand(p):
        u = [oracle.value(0, bd) - sum(c * q for c, q in zip(bd, p)) for bd in bundles]
        top = max(u)
        return [bd for bd, x in zip(bundles, u) if x >= top - 1e-9]

    for p in itertools.product(grid, repeat=k):
        for q in itertools.product(grid, repeat=k):
            if p == q or any(a > b for a, b in zip(p, q)):
                continue
            dq = demand(q)
            for S in demand(p):
                kept = [c if a == b else 0 for c, a, b in zip(S, p, q)]
                if not any(all(x >= y for x, y in zip(T, kept)) for T in dq):
                    return False
    return True


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=3, max_size=3), st.sampled_from(["unit", "capped"]))
def test_gs_check_matches_naive(weights, kind):
    k = 2
    if kind == "unit":
        orc = UnitDemandOracle(UnitDemandValuation(np.array([weights[:k]])), max_bundle_size=2)
    else:
        orc = AdditiveOracle(np.array([weights[:k]]), cap=max(weights[2], 1e-3), max_bundle_size=2)
    assert check_gross_substitutes(orc, 0, k, 2, 2, 0.25)[0] == _naive_gs(orc, k, 2, 2, 0.25)


def test_reports_csv(tmp_path):
    market = _ud([[1, 0], [0, 1]], 1)
    rep = verify_matching_equilibrium(market, Outcome([0.0, 0.0], [0, 1], 2.0), 0.1)
    write_reports_csv(tmp_path / "r.csv", [("a", rep)])
    assert (tmp_path / "r.csv").read_text().splitlines() == [
        "instance_id,measured_alpha,measured_beta,measured_rho,feasible", "a,0,0,0,true"]
