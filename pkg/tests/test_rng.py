import numpy as np
import pytest
from hypothesis import given, strategies as st

from latentleak.rng import SeededRng

u64 = st.integers(0, 2**64 - 1)


@given(u64, st.lists(st.integers(0, 2**64 - 1), max_size=3))
def test_same_seed_and_stream_repeat(seed, stream):
    a = SeededRng(seed, tuple(stream)).generator().random(8)
    b = SeededRng(seed, tuple(stream)).generator().random(8)
    assert np.array_equal(a, b)


def test_distinct_streams_differ_and_look_independent():
    a = SeededRng(7, (1,)).generator().standard_normal(20000)
    b = SeededRng(7, (2,)).generator().standard_normal(20000)
    assert not np.array_equal(a, b)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.03


def test_child_appends_ids():
    r = SeededRng(3).child(4, 5)
    assert r.stream == (4, 5)
    assert np.array_equal(r.child(6).generator().random(3), SeededRng(3, (4, 5, 6)).generator().random(3))


def test_int_stream_accepted():
    assert SeededRng(1, 9).stream == (9,)


@pytest.mark.parametrize("bad", [-1, 2**64])
def test_out_of_range_rejected(bad):
    with pytest.raises(ValueError):
        SeededRng(bad)
    with pytest.raises(ValueError):
        SeededRng(0, (bad,))
