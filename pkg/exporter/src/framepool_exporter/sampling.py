"""Uniform frame-index selection.

This mirrors the retrieval engine's subsampling rule exactly (shared wire
spec): index i -> floor(i * (F-1) / (target-1) + 0.5), index 0 when
target == 1, and all indices when target >= F.
"""

import numpy as np


def uniform_indices(total, target):
    if total < 1 or target < 1:
        raise ValueError("frame counts must be >= 1")
    if target >= total:
        return list(range(total))
    if target == 1:
        return [0]
    idx = np.floor(np.arange(target) * (total - 1) / (target - 1) + 0.5)
    return [int(i) for i in idx]
