"""Maximum-likelihood refinement of regressed anatomical labels."""

from __future__ import annotations

import math

N_LABELS = 24


def regression_to_distribution(value: float) -> dict[int, float]:
    """Split a regressed label value between its two neighbouring integers.

    ``22.8`` becomes ``{22: 0.2, 23: 0.8}``. Mass on labels outside 1..24 is
    dropped without renormalising.
    """
    if value < 0:
        raise ValueError(f"label value must be non-negative, got {value}")
    low = math.floor(value)
    frac = value - low
    dist = {}
    for label, mass in ((low, 1.0 - frac), (low + 1, frac)):
        if mass > 0 and 1 <= label <= N_LABELS:
            dist[label] = mass
    return dist


def sequence_likelihood(values, start: int) -> float:
    """Mean probability of assigning ``start, start+1, ...`` to ``values`` in order."""
    dists = [regression_to_distribution(v) for v in values]
    return sum(d.get(start + i, 0.0) for i, d in enumerate(dists)) / len(dists)


def refine_labels(values) -> list[int]:
    """Most likely contiguous ascending labelling of bottom-to-top label values.

    Ties go to the smallest starting label.
    """
    values = list(values)
    k = len(values)
    if not 1 <= k <= N_LABELS:
        raise ValueError(f"need between 1 and {N_LABELS} values, got {k}")
    dists = [regression_to_distribution(v) for v in values]
    best_start, best = 1, -1.0
    for start in range(1, N_LABELS - k + 2):
        score = sum(d.get(start + i, 0.0) for i, d in enumerate(dists)) / k
        if score > best:
            best_start, best = start, score
    return list(range(best_start, best_start + k))
