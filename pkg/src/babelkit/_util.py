"""Small shared helpers: thread pool sizing, deterministic seeding, JSON output."""
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

THREADS_ENV = "BABELKIT_THREADS"


def worker_count():
    """Thread cap from BABELKIT_THREADS; defaults to min(4, cpu count)."""
    raw = os.environ.get(THREADS_ENV, "")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}")
        if n < 1:
            raise ValueError(f"{THREADS_ENV} must be >= 1, got {n}")
        return n
    return min(4, os.cpu_count() or 1)


def pmap(fn, items, threads=None):
    """Order-preserving parallel map over items.

    Results are independent of the worker count: fn must be a pure
    per-item function, and the output list follows the input order.
    """
    items = list(items)
    if threads is None:
        threads = worker_count()
    threads = min(threads, len(items)) or 1
    if threads == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def stable_hash64(text, salt=b""):
    """Deterministic 64-bit hash of a string (process-independent)."""
    digest = hashlib.blake2b(salt + text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def seeded_rng(*key_parts):
    """numpy Generator seeded from a tuple of ints/strings.

    Strings are folded in via blake2b so the stream depends on the full
    key, not on iteration order or interning.
    """
    entropy = []
    for part in key_parts:
        if isinstance(part, str):
            entropy.append(stable_hash64(part))
        else:
            entropy.append(int(part) & 0xFFFFFFFFFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def dump_json(obj, path):
    """Write deterministic JSON (sorted keys, fixed separators) plus newline."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        fh.write("\n")


def json_line(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
