from fractions import Fraction

import pytest

from arbtrace import PoolState, PriceTable, WorldState


@pytest.fixture
def unit_prices():
    return PriceTable(
        "X", {"X": Fraction(1), "Y": Fraction(1), "Z": Fraction(1), "BASE": Fraction(1)}
    )


def make_pool(pool_id, r0, r1, fee_ppm=0, token0="X", token1="Y"):
    return PoolState(pool_id, token0, token1, r0, r1, fee_ppm)


def make_world(*pools):
    return WorldState({p.pool_id: p for p in pools})
