"""
Stream-based random number generation.

A stream is fully determined by (master_seed, stream_id, purpose): the three
numbers key a counter-based Philox generator through a SeedSequence, so no
stream depends on how many draws any other stream has made. Trajectory i
always owns stream i, whatever the thread count.
"""

from enum import IntEnum

import numpy as np

from cooling_pipeline.errors import ArgumentError


class StreamPurpose(IntEnum):
    INIT = 0
    LIGHT = 1
    RECORD = 2
    PARTICLE = 3
    BOOTSTRAP = 4
    SPGPE = 5
    FIELD_LIGHT = 6


class RngStream:
    """One independent random stream.

    Two instances built from the same (master_seed, stream_id, purpose) yield
    identical sequences; any field differing gives an independent stream.
    """

    def __init__(self, master_seed, stream_id, purpose=StreamPurpose.INIT):
        if stream_id < 0:
            raise ArgumentError("stream_id must be non-negative", stream_id=stream_id)
        self.master_seed = int(master_seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = int(stream_id)
        self.purpose = int(purpose)
        seq = np.random.SeedSequence(
            entropy=self.master_seed, spawn_key=(self.purpose, self.stream_id)
        )
        self.generator = np.random.Generator(np.random.Philox(seq))

    def __repr__(self):
        return (
            f"RngStream(master_seed={self.master_seed}, stream_id={self.stream_id}, "
            f"purpose={StreamPurpose(self.purpose).name})"
        )

    def raw(self, n):
        """First n raw 64-bit outputs (used by the collision smoke test)."""
        return self.generator.bit_generator.random_raw(n)


def streams_for(master_seed, indices, purpose):
    """One stream per trajectory index."""
    return [RngStream(master_seed, int(i), purpose) for i in indices]


def sample_complex_gaussian(stream, variance, size=None):
    """Complex Gaussian with E|z|^2 = variance (real and imaginary parts each variance/2)."""
    if variance < 0:
        raise ArgumentError("variance must be non-negative", variance=variance)
    gen = stream.generator if isinstance(stream, RngStream) else stream
    shape = (2,) if size is None else (2,) + tuple(np.atleast_1d(size))
    parts = gen.standard_normal(shape) * np.sqrt(variance / 2.0)
    z = parts[0] + 1j * parts[1]
    return complex(z) if size is None else z


def wiener_increment(stream, dt, size=None):
    """Zero-mean Gaussian increment with variance dt."""
    if not dt > 0:
        raise ArgumentError("dt must be positive", dt=dt)
    gen = stream.generator if isinstance(stream, RngStream) else stream
    dw = gen.standard_normal(size) * np.sqrt(dt)
    return float(dw) if size is None else dw
