"""Half-maximum width of a uniformly sampled curve."""

import numpy as np


def half_max_width(samples, t_res, require_left_crossing=False):
    """Full width at half maximum of a sampled curve, in seconds.

    The width is measured on the magnitude of ``samples`` between the first
    crossing of half the peak (scanning from the start) and the last crossing
    (scanning from the end), with linear interpolation between the two samples
    straddling each crossing.

    If the curve already starts at or above half maximum, the left edge is
    taken at the first sample unless ``require_left_crossing`` is set, in
    which case that situation is an error.  The curve must fall below half
    maximum before its end; otherwise the width is undefined.
    """
    y = np.abs(np.asarray(samples, dtype=float))
    if y.size < 2:
        raise ValueError("need at least 2 samples to measure a width")
    peak = float(y.max())
    if peak <= 0.0:
        raise ValueError("curve is identically zero; no half-maximum level")
    half = 0.5 * peak

    above = y > half
    idx = np.flatnonzero(above)
    first, last = int(idx[0]), int(idx[-1])

    if first == 0:
        if require_left_crossing:
            raise ValueError("curve never crosses half maximum before the peak")
        t_left = 0.0
    else:
        frac = (half - y[first - 1]) / (y[first] - y[first - 1])
        t_left = (first - 1 + frac) * t_res

    if last == y.size - 1:
        raise ValueError("curve never falls below half maximum after the peak")
    frac = (y[last] - half) / (y[last] - y[last + 1])
    t_right = (last + frac) * t_res

    return t_right - t_left
