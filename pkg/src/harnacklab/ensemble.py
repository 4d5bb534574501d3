"""Reproducible trajectory ensembles.

Trajectory ``i`` of a run seeded with ``seed`` always draws its Brownian
increments from the Philox stream keyed by ``seed`` with counter word ``i``,
so results do not depend on how trajectories are batched or on the number of
worker threads.  Per-path outputs are concatenated in ascending path order
before any reduction.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

DEFAULT_BATCH = 4096


def path_generator(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, int(index), 0, 0]))


def brownian_increments(seed: int, first: int, count: int, n_steps: int, dim: int,
                        step: float, refine: int = 1) -> np.ndarray:
    """Increments of shape ``(count, n_steps, dim)`` with variance ``step``.

    With ``refine > 1`` each increment is the sum of ``refine`` finer ones drawn
    from the same stream, so runs at ``step`` and ``step / refine`` share one
    Brownian path.
    """
    out = np.empty((count, n_steps, dim))
    fine = step / refine
    for k in range(count):
        z = path_generator(seed, first + k).standard_normal((n_steps * refine, dim))
        if refine > 1:
            z = z.reshape(n_steps, refine, dim).sum(axis=1)
        out[k] = z
    out *= np.sqrt(fine)
    return out


def batches(n_paths: int, batch: int = DEFAULT_BATCH):
    for first in range(0, n_paths, batch):
        yield first, min(batch, n_paths - first)


def map_batches(fn, n_paths: int, jobs: int = 1, batch: int = DEFAULT_BATCH) -> dict:
    """Run ``fn(first, count) -> dict[str, ndarray]`` over fixed batches.

    Arrays are concatenated along axis 0 in path order, independent of ``jobs``.
    """
    spans = list(batches(n_paths, batch))
    if jobs > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(lambda s: fn(*s), spans))
    else:
        parts = [fn(*s) for s in spans]
    return {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}
