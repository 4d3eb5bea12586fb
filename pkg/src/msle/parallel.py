"""Chunked Monte Carlo over path indices, serial or across processes.

Chunks are cut from the path range independently of the worker count, and
every path is keyed by its own index, so results do not depend on how many
workers ran them.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Optional

import numpy as np

DEFAULT_CHUNK = 50


def worker_count(workers: Optional[int] = None) -> int:
    """Explicit count, else MSLE_WORKERS, else 1."""
    if workers is None:
        env = os.environ.get("MSLE_WORKERS", "").strip()
        workers = int(env) if env else 1
    return max(1, int(workers))


def chunk_bounds(n: int, chunk: int = DEFAULT_CHUNK):
    return [(s, min(s + chunk, n)) for s in range(0, n, chunk)]


def _concat(parts):
    if not parts:
        return {}
    keys = parts[0].keys()
    return {k: np.concatenate([np.atleast_1d(p[k]) for p in parts]) for k in keys}


def map_paths(
    fn: Callable,
    n_paths: int,
    args: tuple = (),
    workers: Optional[int] = None,
    chunk: int = DEFAULT_CHUNK,
) -> dict:
    """Run ``fn(*args, start, stop)`` over chunks and concatenate the per-path arrays.

    ``fn`` must be a module-level function returning a dict of arrays whose
    first axis is the path.
    """
    bounds = chunk_bounds(n_paths, chunk)
    w = min(worker_count(workers), max(len(bounds), 1))
    if w == 1:
        parts = [fn(*args, s, e) for s, e in bounds]
    else:
        with ProcessPoolExecutor(max_workers=w) as ex:
            futs = [ex.submit(fn, *args, s, e) for s, e in bounds]
            parts = [f.result() for f in futs]
    return _concat(parts)
