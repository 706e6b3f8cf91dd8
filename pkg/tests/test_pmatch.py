import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from privalloc import pmatch
from privalloc.core import Market, UnitDemandValuation
from privalloc.errors import ConfigurationError, InstanceError, MalformedBillboardError, ParameterError
from privalloc.oracles import exact_max_matching, matching_regret
from privalloc.pmatch import (
    Billboard,
    MultiplicativeParams,
    PMatchParams,
    counter_error_bound,
    derive_allocation,
    run,
    run_multiplicative,
)

OFF = dict(noise="off", E=0, m=1)


def _market(v, s):
    v = np.asarray(v, dtype=float)
    return Market(v.shape[0], v.shape[1], s, UnitDemandValuation(v))


def test_schedule_derivation():
    p = PMatchParams(alpha=0.2, rho=0.25, epsilon=2.0, gamma=0.1)
    sched = p.schedule(n=30, k=3)
    assert sched.T == math.ceil(8 / (0.2 * 0.25))
    assert sched.epsilon_prime == pytest.approx(2.0 / (2 * sched.T))
    raw = (2 * math.sqrt(2) / sched.epsilon_prime) * math.log2(30 * sched.T) ** 2.5 * math.log(4 * 3 / 0.1)
    assert sched.E == math.ceil(raw)
    assert sched.m == 2 * sched.E + 1
    assert counter_error_bound(sched.epsilon_prime, 30 * sched.T, 3, 0.1) == pytest.approx(raw)


def test_threshold_clamped():
    p = PMatchParams(alpha=0.2, rho=0.1, epsilon=1.0, **OFF)
    assert p.halt_threshold(5, p.schedule(5, 2)) == 1.0


def test_all_zero_values():
    outcome, board = run(_market(np.zeros((3, 2)), 3), PMatchParams(0.1, 0.1, 1.0, **OFF))
    assert outcome.assignment == (None, None, None)
    assert outcome.welfare == 0.0
    assert not outcome.prices.any()


def test_two_by_two_example():
    market = _market([[1, 0], [0, 1]], 2)
    outcome, board = run(market, PMatchParams(0.1, 0.1, 1.0, **OFF))
    assert outcome.assignment == (0, 1)
    assert outcome.welfare == 2.0 == exact_max_matching(market)[1]
    assert derive_allocation([1, 0], board, 0) == 0
    assert derive_allocation([0, 0], board, 0) is None


def test_supply_below_reserve():
    with pytest.raises(ConfigurationError, match="supply"):
        run(_market(np.ones((3, 1)), 1), PMatchParams(0.1, 0.1, 1.0, **OFF))


def test_parameter_ranges():
    with pytest.raises(ParameterError):
        PMatchParams(alpha=1.0, rho=0.1, epsilon=1.0)
    with pytest.raises(ParameterError):
        PMatchParams(alpha=0.1, rho=0.1, epsilon=0.0)
    with pytest.raises(ParameterError):
        MultiplicativeParams(alpha=0.1, lam=0.0, opt_estimate=1.0, epsilon=1.0)
    with pytest.raises(ParameterError):
        MultiplicativeParams(alpha=0.1, lam=1.0, opt_estimate=0.0, epsilon=1.0)


def test_multiplicative_examples():
    v = [[1, 0], [1, 0], [0, 1], [0, 1]]
    mp = MultiplicativeParams(alpha=0.25, lam=1.0, opt_estimate=4.0, epsilon=1.0, noise="off", E=0, m=1, T=50)
    outcome, _ = run_multiplicative(_market(v, 3), mp)
    assert outcome.welfare == exact_max_matching(_market(v, 3))[1] == 4.0
    # with s = 2 the reserve leaves one sellable copy per type
    tight, _ = run_multiplicative(_market(v, 2), mp)
    assert tight.welfare == exact_max_matching(_market(v, 1))[1] == 2.0
    single, _ = run_multiplicative(_market([[1, 0]], 3), mp)
    assert single.assignment == (0,) and not single.prices.any()
    with pytest.raises(InstanceError):
        run_multiplicative(_market([[0.5, 0]], 3), mp)


def test_noisy_opt_estimate_is_seeded():
    market = _market([[1, 0], [0, 1]], 2)
    a = pmatch.noisy_opt_estimate(market, 1.0, seed=3)
    assert a == pmatch.noisy_opt_estimate(market, 1.0, seed=3)
    with pytest.raises(ParameterError):
        pmatch.noisy_opt_estimate(market, 0.0)


def test_billboard_round_trip_and_validation(tmp_path):
    rng = np.random.default_rng(0)
    market = _market(rng.random((8, 3)), 6)
    params = PMatchParams(0.2, 0.2, 20.0, T=6, E=1, m=3)
    outcome, board = run(market, params, seed=1)
    again = Billboard.from_dict(board.to_dict())
    for i in range(market.n):
        assert derive_allocation(market.v[i], again, i) == outcome.assignment[i]
    np.testing.assert_allclose(again.final_prices(), outcome.prices)
    board.write_csv(tmp_path / "b.csv")
    header = (tmp_path / "b.csv").read_text().splitlines()[0]
    assert header == "round,step,good_type,released_count,price_after,halt_counter_release"
    truncated = Billboard.from_dict(board.to_dict())
    if truncated.halted_at is None:
        truncated.good_releases.pop()
        truncated.halt_releases.pop()
    else:
        truncated.halted_at = None
    with pytest.raises(MalformedBillboardError):
        derive_allocation(market.v[0], truncated, 0)


def _random_market(seed, n_max=12, k_max=4):
    rng = np.random.default_rng(seed)
    n, k = int(rng.integers(1, n_max + 1)), int(rng.integers(1, k_max + 1))
    s = int(rng.integers(2, 8))
    return _market(rng.random((n, k)), s), rng


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.1, 0.2, 0.3]))
def test_noise_off_invariants(seed, alpha):
    market, _ = _random_market(seed)
    params = PMatchParams(alpha, alpha, 1.0, **OFF)
    outcome, board, stats = run(market, params, seed=seed, return_stats=True)
    # bid budget and monotone, capped prices
    assert stats.bids_per_bidder.max(initial=0) <= stats.schedule.T
    levels = board.price_levels().reshape(-1, market.k)
    assert (np.diff(levels, axis=0) >= 0).all()
    assert (outcome.prices <= 1 + alpha + 1e-12).all()
    # feasibility and approximate favorite for matched bidders
    counts = np.bincount([a for a in outcome.assignment if a is not None], minlength=market.k)
    assert (counts <= market.s).all()
    regret = matching_regret(market, outcome)
    for i, a in enumerate(outcome.assignment):
        if a is not None:
            assert regret[i] <= alpha + 1e-9
    for i in range(market.n):
        assert derive_allocation(market.v[i], board, i) == outcome.assignment[i]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_noisy_feasibility_and_replay(seed):
    market, _ = _random_market(seed)
    params = PMatchParams(0.2, 0.2, 30.0, T=10, E=2, m=5)
    market = Market(market.n, market.k, 8, market.valuations)
    outcome, board, stats = run(market, params, seed=seed, return_stats=True)
    if stats.max_counter_error <= stats.schedule.E:
        counts = np.bincount([a for a in outcome.assignment if a is not None], minlength=market.k)
        assert (counts <= market.s).all()
    for i in range(market.n):
        assert derive_allocation(market.v[i], board, i) == outcome.assignment[i]


def test_noise_off_welfare_large_supply():
    for seed in range(30):
        rng = np.random.default_rng(seed)
        n, k, alpha = int(rng.integers(5, 25)), int(rng.integers(2, 5)), 0.2
        market = _market(rng.random((n, k)), math.ceil(4 / alpha) + 1)
        outcome, _ = run(market, PMatchParams.for_welfare(alpha, 1.0, **OFF), seed=seed)
        assert outcome.welfare >= exact_max_matching(market)[1] - alpha * n
