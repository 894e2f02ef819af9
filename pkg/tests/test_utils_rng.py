import numpy as np
import pytest

from cooling_pipeline.errors import ArgumentError
from cooling_pipeline.utils.utils_rng import (
    RngStream,
    StreamPurpose,
    sample_complex_gaussian,
    streams_for,
    wiener_increment,
)


def test_same_key_gives_same_sequence():
    a = RngStream(42, 7, StreamPurpose.LIGHT)
    b = RngStream(42, 7, StreamPurpose.LIGHT)
    assert np.array_equal(a.raw(16), b.raw(16))


def test_any_key_field_changes_the_stream():
    base = RngStream(42, 7, StreamPurpose.LIGHT).raw(4)
    assert not np.array_equal(base, RngStream(43, 7, StreamPurpose.LIGHT).raw(4))
    assert not np.array_equal(base, RngStream(42, 8, StreamPurpose.LIGHT).raw(4))
    assert not np.array_equal(base, RngStream(42, 7, StreamPurpose.RECORD).raw(4))


def test_no_collisions_across_many_streams():
    first = np.concatenate([s.raw(4) for s in streams_for(3, range(2000), StreamPurpose.INIT)])
    assert len(np.unique(first)) == len(first)


def test_stream_does_not_depend_on_sibling_draws():
    lone = RngStream(5, 1, StreamPurpose.INIT).raw(8)
    sibling = RngStream(5, 0, StreamPurpose.INIT)
    sibling.raw(10_000)
    assert np.array_equal(RngStream(5, 1, StreamPurpose.INIT).raw(8), lone)


def test_negative_stream_id_rejected():
    with pytest.raises(ArgumentError):
        RngStream(0, -1)


def test_complex_gaussian_variance_split():
    z = sample_complex_gaussian(RngStream(11, 0), 0.5, size=200_000)
    assert abs(np.mean(np.abs(z) ** 2) - 0.5) < 0.01
    assert abs(np.var(z.real) - 0.25) < 0.005
    assert abs(np.var(z.imag) - 0.25) < 0.005
    assert abs(np.mean(z)) < 0.01


def test_complex_gaussian_scalar_and_errors():
    assert isinstance(sample_complex_gaussian(RngStream(1, 0), 1.0), complex)
    with pytest.raises(ArgumentError):
        sample_complex_gaussian(RngStream(1, 0), -1.0)


def test_wiener_increment_variance():
    dw = wiener_increment(RngStream(2, 0), 0.01, size=100_000)
    assert abs(np.var(dw) - 0.01) < 0.0005
    with pytest.raises(ArgumentError):
        wiener_increment(RngStream(2, 0), 0.0)
