"""
Stratonovich stepping for SDEs written as dy = f(y) dt + g(y) o dW.

The caller supplies the full increment f(y) dt + g(y) dW for a fixed noise
draw, so multiplicative and vector noise need no special casing here.
"""

import numpy as np

from cooling_pipeline.errors import DivergenceError


def midpoint_step(y, increment):
    """One explicit midpoint step.

    y_half = y + increment(y) / 2
    y_new  = y + increment(y_half)

    Returns (y_new, y_half); y_half is the Stratonovich evaluation point and
    is reused by callers that need coupled quantities (e.g. filter weights).
    """
    y_half = y + 0.5 * increment(y)
    return y + increment(y_half), y_half


def check_finite(y, time, offset=0):
    """Raise DivergenceError naming the first non-finite row (trajectory)."""
    if np.ndim(y) > 1:
        bad = ~np.isfinite(y).reshape(np.shape(y)[0], -1).all(axis=1)
    else:
        bad = ~np.isfinite(y)
    if np.any(bad):
        index = int(np.argmax(bad)) + offset
        raise DivergenceError(
            "non-finite amplitudes", trajectory=index, time=float(time)
        )
