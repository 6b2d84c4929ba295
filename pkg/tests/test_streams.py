import numpy as np

from app.streams import StormStreams, stream


def test_same_seed_and_keys_repeat():
    a = stream(42, "arrivals", 0).random(5)
    b = stream(42, "arrivals", 0).random(5)
    assert np.array_equal(a, b)


def test_keys_and_seeds_separate_streams():
    base = stream(42, "arrivals", 0).random(5)
    assert not np.array_equal(base, stream(42, "marks", 0).random(5))
    assert not np.array_equal(base, stream(43, "arrivals", 0).random(5))
    assert not np.array_equal(base, stream(42, "arrivals", 1).random(5))


def test_stream_does_not_depend_on_creation_order():
    first = stream(7, "marks", 0, 3).random(3)
    for edge in range(5):
        stream(7, "marks", 0, edge).random(10)
    assert np.array_equal(first, stream(7, "marks", 0, 3).random(3))


def test_storm_streams_replicates():
    streams = StormStreams(seed=11)
    assert np.array_equal(streams.arrivals().random(3), StormStreams(seed=11).arrivals().random(3))
    spawned = streams.spawn(2)
    assert spawned.replicate == 2 and spawned.seed == 11
    assert not np.array_equal(spawned.marks().random(3), streams.marks().random(3))
    assert not np.array_equal(streams.marks(0).random(3), streams.marks(1).random(3))
