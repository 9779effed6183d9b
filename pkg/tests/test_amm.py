"""Pool math: swap outputs, rates, cycle coefficients, and their invariants."""

import random
from fractions import Fraction

import pytest

from arbtrace import (
    ArbRoute,
    PoolState,
    RouteHop,
    cycle_coefficient,
    spot_rate,
    swap_exact_in,
)
from arbtrace.errors import BrokenCycle, EmptyPool, MissingPool, UnknownToken

from conftest import make_pool, make_world

M = 10**6


def oracle_amount_out(r_in, r_out, amount_in, fee_ppm):
    """Independent oracle: the largest out preserving the product invariant,
    found by bisection on the invariant predicate rather than by division."""
    a_eff = amount_in * (M - fee_ppm) // M
    k = r_in * r_out
    lo, hi = 0, r_out - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if (r_in + a_eff) * (r_out - mid) >= k:
            lo = mid
        else:
            hi = mid - 1
    return lo


class TestSwapExactIn:
    def test_balanced_no_fee(self):
        pool = make_pool("P", 100 * M, 100 * M)
        res = swap_exact_in(pool, "X", 10 * M)
        assert res.amount_out == 9_090_909  # 100*100/110 floored
        assert res.new_pool.reserve0 == 110 * M
        assert res.new_pool.reserve1 == 100 * M - 9_090_909

    def test_with_fee(self):
        # frozen from the invariant-bisection oracle; a_eff = 9_970_000
        pool = make_pool("P", 100 * M, 100 * M, fee_ppm=3000)
        res = swap_exact_in(pool, "X", 10 * M)
        assert res.amount_out == 9_066_108
        assert res.amount_out == oracle_amount_out(100 * M, 100 * M, 10 * M, 3000)

    def test_dust_floors_to_zero(self):
        pool = make_pool("P", 10**12, 10**12)
        assert swap_exact_in(pool, "X", 1).amount_out == 0

    def test_input_pool_unmodified(self):
        pool = make_pool("P", 100, 100)
        swap_exact_in(pool, "X", 10)
        assert (pool.reserve0, pool.reserve1) == (100, 100)

    def test_token1_side(self):
        pool = make_pool("P", 50, 200)
        res = swap_exact_in(pool, "Y", 100)
        assert res.new_pool.reserve1 == 300
        assert res.new_pool.reserve0 == 50 - res.amount_out

    def test_oracle_agreement_randomized(self):
        rng = random.Random(11)
        for _ in range(300):
            r0 = rng.randint(2, 10**9)
            r1 = rng.randint(2, 10**9)
            fee = rng.choice([0, 500, 3000, 30000])
            amount = rng.randint(1, 2 * r0)
            pool = make_pool("P", r0, r1, fee)
            assert swap_exact_in(pool, "X", amount).amount_out == oracle_amount_out(
                r0, r1, amount, fee
            )

    def test_errors(self):
        pool = make_pool("P", 100, 100)
        with pytest.raises(UnknownToken):
            swap_exact_in(pool, "Z", 10)
        with pytest.raises(EmptyPool):
            swap_exact_in(make_pool("P", 0, 100), "X", 10)
        with pytest.raises(ValueError):
            swap_exact_in(pool, "X", 0)


class TestSwapInvariants:
    def test_product_never_decreases(self):
        rng = random.Random(5)
        for _ in range(300):
            r0, r1 = rng.randint(1, 10**8), rng.randint(1, 10**8)
            fee = rng.choice([0, 3000, 50000])
            pool = make_pool("P", r0, r1, fee)
            amount = rng.randint(1, r0 * 2)
            new = swap_exact_in(pool, "X", amount).new_pool
            assert new.reserve0 * new.reserve1 >= r0 * r1
            if fee > 0:
                assert new.reserve0 * new.reserve1 > r0 * r1

    def test_product_equality_without_fee_or_floor_loss(self):
        # divisible case: out = r1*a/(r0+a) exact, so the product is preserved
        pool = make_pool("P", 100, 100)
        new = swap_exact_in(pool, "X", 100).new_pool  # out = 50 exactly
        assert new.reserve0 * new.reserve1 == 100 * 100

    def test_amount_out_monotone_in_amount_in(self):
        rng = random.Random(6)
        for _ in range(50):
            pool = make_pool("P", rng.randint(10, 10**6), rng.randint(10, 10**6), 3000)
            prev = 0
            for amount in range(1, 400, 7):
                out = swap_exact_in(pool, "X", amount).amount_out
                assert out >= prev
                prev = out

    def test_round_trip_loses(self):
        rng = random.Random(7)
        for _ in range(100):
            r0, r1 = rng.randint(10**3, 10**7), rng.randint(10**3, 10**7)
            fee = rng.choice([0, 3000])
            pool = make_pool("P", r0, r1, fee)
            a = rng.randint(10, r0)
            first = swap_exact_in(pool, "X", a)
            if first.amount_out == 0:
                continue
            back = swap_exact_in(first.new_pool, "Y", first.amount_out)
            assert back.amount_out <= a
            if fee > 0 and a > 1000:
                assert back.amount_out < a


class TestSpotRate:
    def test_ratio(self):
        assert spot_rate(make_pool("P", 100, 121), "X") == Fraction(121, 100)

    def test_with_fee(self):
        pool = make_pool("P", 100, 121, fee_ppm=3000)
        assert spot_rate(pool, "X", include_fee=True) == Fraction(121, 100) * Fraction(997, 1000)

    def test_symmetric_pool(self):
        assert spot_rate(make_pool("P", 100, 100), "X") == 1

    def test_empty_pool(self):
        with pytest.raises(EmptyPool):
            spot_rate(make_pool("P", 100, 0), "X")


def two_pool_route():
    return ArbRoute((RouteHop("P2", "X", "Y"), RouteHop("P1", "Y", "X")))


class TestCycleCoefficient:
    def test_balanced_cycle(self):
        state = make_world(make_pool("P1", 100, 100), make_pool("P2", 100, 100))
        assert cycle_coefficient(state, two_pool_route()) == 1

    def test_imbalanced_cycle(self):
        state = make_world(make_pool("P1", 100, 100), make_pool("P2", 100, 121))
        # X->Y on P2 at 121/100, Y->X on P1 at 1
        assert cycle_coefficient(state, two_pool_route()) == Fraction(121, 100)

    def test_rebalancing_swap_restores_parity(self):
        p2 = make_pool("P2", 100, 121)
        p2 = swap_exact_in(p2, "X", 10).new_pool  # out = floor(121*10/110) = 11
        assert (p2.reserve0, p2.reserve1) == (110, 110)
        state = make_world(make_pool("P1", 100, 100), p2)
        assert cycle_coefficient(state, two_pool_route()) == 1

    def test_fee_inclusive(self):
        state = make_world(make_pool("P1", 100, 100, 3000), make_pool("P2", 100, 121, 3000))
        k = cycle_coefficient(state, two_pool_route(), include_fee=True)
        assert k == Fraction(121, 100) * Fraction(997, 1000) ** 2

    def test_scale_invariance(self):
        rng = random.Random(8)
        route = two_pool_route()
        for _ in range(50):
            r = [rng.randint(10, 10**6) for _ in range(4)]
            state = make_world(make_pool("P1", r[0], r[1]), make_pool("P2", r[2], r[3]))
            scaled = make_world(
                make_pool("P1", r[0] * 7, r[1] * 7), make_pool("P2", r[2] * 7, r[3] * 7)
            )
            assert cycle_coefficient(state, route) == cycle_coefficient(scaled, route)

    def test_missing_pool(self):
        state = make_world(make_pool("P1", 100, 100))
        with pytest.raises(MissingPool):
            cycle_coefficient(state, two_pool_route())

    def test_broken_cycle_rejected(self):
        with pytest.raises(BrokenCycle):
            ArbRoute((RouteHop("P1", "X", "Y"), RouteHop("P2", "Z", "X")))
        with pytest.raises(BrokenCycle):
            ArbRoute((RouteHop("P1", "X", "Y"), RouteHop("P2", "Y", "Z")))
        with pytest.raises(BrokenCycle):
            ArbRoute((RouteHop("P1", "X", "Y"),))


class TestPoolState:
    def test_validation(self):
        with pytest.raises(ValueError):
            PoolState("P", "X", "X", 10, 10)
        with pytest.raises(ValueError):
            PoolState("P", "X", "Y", -1, 10)
        with pytest.raises(ValueError):
            PoolState("P", "X", "Y", 10, 10, fee_ppm=10**6)

    def test_oriented(self):
        pool = make_pool("P", 3, 7)
        assert pool.oriented("X") == (3, 7)
        assert pool.oriented("Y") == (7, 3)
        assert pool.other("X") == "Y"
