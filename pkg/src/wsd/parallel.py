"""Order-preserving worker pool.

Results come back indexed by input position, so a run with N workers is
identical to the serial run whatever order the tasks finish in.
"""
import os
from concurrent.futures import ProcessPoolExecutor


def resolve_workers(workers):
    if workers is None or workers == 0:
        return os.cpu_count() or 1
    if workers < 0:
        raise ValueError("workers must be >= 0")
    return int(workers)


def ordered_map(fn, items, workers=1, chunksize=None):
    """``[fn(item) for item in items]`` spread over a process pool.

    ``fn`` must be picklable (a module-level function or a partial of one).
    """
    items = list(items)
    workers = min(resolve_workers(workers), max(len(items), 1))
    if workers <= 1:
        return [fn(item) for item in items]
    if chunksize is None:
        chunksize = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunksize))
