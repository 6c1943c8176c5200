"""Optional worker-pool mapping, capped by the KSEQ_THREADS env var.

Results always come back in input order, so pipelines stay deterministic
regardless of the worker count.
"""

import multiprocessing
import os


def thread_cap():
    try:
        return max(1, int(os.environ.get("KSEQ_THREADS", "1")))
    except ValueError:
        return 1


def pmap(fn, items):
    items = list(items)
    workers = min(thread_cap(), len(items)) if items else 1
    if workers <= 1:
        return [fn(x) for x in items]
    with multiprocessing.Pool(workers) as pool:
        return pool.map(fn, items)
