"""Task-based fork-join helpers.

Work is split into tasks (one row of selection cells per task inside a
pass; one directed keyframe-pair pass at the outer level of bundle
adjustment). Each task owns a private accumulator; results are merged in
submission order, so output is identical run-to-run regardless of thread
count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np


def row_chunks(n_items: int, boundaries: np.ndarray | None, n_tasks: int) -> list[slice]:
    """Split [0, n_items) into slices.

    ``boundaries`` are allowed cut positions (e.g. starts of cell rows); when
    None, even splits are used.
    """
    if n_items == 0:
        return []
    if boundaries is None:
        cuts = np.linspace(0, n_items, min(n_tasks, n_items) + 1).astype(int)
    else:
        b = np.unique(np.clip(np.asarray(boundaries, int), 0, n_items))
        if len(b) <= n_tasks:
            cuts = np.unique(np.concatenate([[0], b, [n_items]]))
        else:
            pick = b[np.linspace(0, len(b) - 1, n_tasks + 1).astype(int)]
            cuts = np.unique(np.concatenate([[0], pick, [n_items]]))
    return [slice(a, b) for a, b in zip(cuts[:-1], cuts[1:]) if b > a]


def map_ordered(fn, tasks, n_threads: int = 1) -> list:
    """Apply fn to each task; results returned in task order (fork-join)."""
    tasks = list(tasks)
    if n_threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        return list(pool.map(fn, tasks))
