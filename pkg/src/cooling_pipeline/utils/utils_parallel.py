"""
Trajectory-parallel execution.

Work is cut into fixed-size index chunks that do not depend on the number of
threads, each chunk runs on a worker thread, and results come back in chunk
order. Combined with per-index random streams this makes every run
bit-identical for any thread count.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor, as_completed

from tqdm import tqdm

from cooling_pipeline.errors import ArgumentError
from cooling_pipeline.utils.utils_log import getLogger

log = getLogger("parallel")

THREADS_ENV = "FBCOOL_THREADS"
DEFAULT_CHUNK = 256


def resolve_threads(threads=None):
    """Explicit value, else $FBCOOL_THREADS, else the CPU count."""
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise ArgumentError(f"{THREADS_ENV} must be an integer", value=env)
        else:
            threads = os.cpu_count() or 1
    if threads < 1:
        raise ArgumentError("thread count must be >= 1", threads=threads)
    return int(threads)


def chunk_ranges(n_items, chunk_size=DEFAULT_CHUNK):
    if chunk_size < 1:
        raise ArgumentError("chunk_size must be >= 1", chunk_size=chunk_size)
    return [(start, min(start + chunk_size, n_items)) for start in range(0, n_items, chunk_size)]


class TrajectoryPool:
    """Runs ``fn(start, stop)`` over index chunks on a thread pool."""

    def __init__(self, threads=None, desc=None, progress=None):
        self.threads = resolve_threads(threads)
        self.desc = desc
        # progress bars only when someone is watching
        self.progress = progress if progress is not None else log.isEnabledFor(logging.INFO)

    def map_chunks(self, fn, n_items, chunk_size=DEFAULT_CHUNK):
        chunks = chunk_ranges(n_items, chunk_size)
        results = [None] * len(chunks)
        log.debug("%s: %d items in %d chunks on %d threads", self.desc, n_items, len(chunks), self.threads)

        if self.threads == 1 or len(chunks) == 1:
            for i, (start, stop) in enumerate(
                tqdm(chunks, desc=self.desc, disable=not self.progress, leave=False)
            ):
                results[i] = fn(start, stop)
            return results

        with ThreadPoolExecutor(max_workers=self.threads) as ex:
            futures = {ex.submit(fn, start, stop): i for i, (start, stop) in enumerate(chunks)}
            for fut in tqdm(
                as_completed(futures),
                total=len(futures),
                desc=self.desc,
                disable=not self.progress,
                leave=False,
            ):
                results[futures[fut]] = fut.result()
        return results
