"""Exact and near-duplicate removal: hash, pair, cluster, record.

Exact duplicates share a 128-bit digest of NFC-normalized, whitespace-
collapsed text. Near duplicates go through word-shingle MinHash
signatures, banded LSH candidate pairing, and connected components over
the retained pair graph; the lexicographically smallest id survives per
cluster. Near-dup runs per language so cross-language hash collisions
cannot pair documents.

The signature inner loop dispatches to the compiled babelkit._minhash
kernel when available (BABELKIT_NO_EXT=1 forces the numpy fallback);
both paths produce bit-identical signatures.
"""
import hashlib
import os
import unicodedata
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import ValidationError
from ._util import pmap, seeded_rng

try:
    from . import _minhash as _ext
except ImportError:  # extension not built; numpy fallback below
    _ext = None

_FULL64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_MIX_M1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX_M2 = np.uint64(0x94D049BB133111EB)


@dataclass(frozen=True)
class MinHashParams:
    shingle_k: int = 5
    num_perm: int = 256
    bands: int = 32
    rows: int = 8
    jaccard_threshold: float = 0.8
    seed: int = 0

    def validate(self):
        errs = []
        if self.shingle_k < 1:
            errs.append(f"shingle_k must be positive, got {self.shingle_k}")
        if self.num_perm < 1:
            errs.append(f"num_perm must be positive, got {self.num_perm}")
        if self.bands < 1 or self.rows < 1:
            errs.append(f"bands and rows must be positive, got {self.bands}x{self.rows}")
        elif self.bands * self.rows != self.num_perm:
            errs.append(
                f"bands*rows must equal num_perm: {self.bands}*{self.rows} != {self.num_perm}"
            )
        if not 0.0 < self.jaccard_threshold <= 1.0:
            errs.append(f"jaccard_threshold must be in (0, 1], got {self.jaccard_threshold}")
        if errs:
            raise ValidationError(errs)
        return self

    def to_dict(self):
        return {
            "shingle_k": self.shingle_k,
            "num_perm": self.num_perm,
            "bands": self.bands,
            "rows": self.rows,
            "jaccard_threshold": self.jaccard_threshold,
            "seed": self.seed,
        }


@dataclass
class DedupReport:
    params: MinHashParams
    input_count: int
    exact_groups: list
    candidate_pairs: list
    clusters: list
    kept: list
    removed: list  # (removed id, kept representative id)

    def to_dict(self):
        return {
            "params": self.params.to_dict(),
            "input_count": self.input_count,
            "kept_count": len(self.kept),
            "removed_count": len(self.removed),
            "exact_groups": self.exact_groups,
            "candidate_pairs": [[a, b, est] for a, b, est in self.candidate_pairs],
            "clusters": self.clusters,
            "kept": self.kept,
            "removed": [[rid, rep] for rid, rep in self.removed],
        }


class UnionFind:
    """Disjoint sets with path compression; roots are the smallest member."""

    def __init__(self):
        self.parent = {}

    def find(self, x):
        if x not in self.parent:
            self.parent[x] = x
            return x
        if self.parent[x] != x:
            self.parent[x] = self.find(self.parent[x])
        return self.parent[x]

    def union(self, x, y):
        px, py = self.find(x), self.find(y)
        self.parent[px] = self.parent[py] = min(px, py)


def normalize_text(text):
    """NFC normalization with runs of whitespace collapsed to single spaces."""
    return " ".join(unicodedata.normalize("NFC", text).split())


def content_digest(text):
    """128-bit digest of the normalized text."""
    return hashlib.blake2b(normalize_text(text).encode("utf-8"), digest_size=16).digest()


def _check_unique_ids(docs):
    seen = set()
    for doc in docs:
        if doc.id in seen:
            raise ValidationError(f"duplicate id {doc.id!r} in input")
        seen.add(doc.id)


def exact_dedup(docs):
    """Group byte-identical (post-normalization) texts; first in order survives."""
    _check_unique_ids(docs)
    groups = {}
    order = []
    for doc in docs:
        digest = content_digest(doc.text)
        if digest not in groups:
            groups[digest] = []
            order.append(digest)
        groups[digest].append(doc.id)
    survivor_ids = {groups[d][0] for d in order}
    survivors = [doc for doc in docs if doc.id in survivor_ids]
    exact_groups = [groups[d] for d in order if len(groups[d]) > 1]
    return survivors, exact_groups


def tokenize(text):
    return unicodedata.normalize("NFC", text).split()


def shingle_hashes(text, k):
    """64-bit hashes of the word-level k-shingles; None if under k tokens."""
    tokens = tokenize(text)
    if len(tokens) < k:
        return None
    hashes = np.empty(len(tokens) - k + 1, dtype=np.uint64)
    for i in range(len(tokens) - k + 1):
        blob = " ".join(tokens[i : i + k]).encode("utf-8")
        digest = hashlib.blake2b(blob, digest_size=8).digest()
        hashes[i] = int.from_bytes(digest, "little")
    return hashes


def permutation_keys(params):
    rng = seeded_rng(params.seed, "minhash-keys")
    return rng.integers(0, 2**64, size=params.num_perm, dtype=np.uint64)


def signature_kernel_numpy(hashes, keys, chunk=2048):
    """Pure-numpy reference path, chunked to bound the (perm x shingle) temp."""
    if hashes.size == 0:
        raise ValueError("signature kernel needs at least one shingle hash")
    out = np.full(keys.size, _FULL64, dtype=np.uint64)
    keys = keys[:, None]
    for start in range(0, hashes.size, chunk):
        x = hashes[None, start : start + chunk] ^ keys
        x ^= x >> np.uint64(30)
        x *= _MIX_M1
        x ^= x >> np.uint64(27)
        x *= _MIX_M2
        x ^= x >> np.uint64(31)
        np.minimum(out, x.min(axis=1), out=out)
    return out


def using_compiled_kernel():
    return _ext is not None and os.environ.get("BABELKIT_NO_EXT", "") != "1"


def signature_kernel(hashes, keys):
    if using_compiled_kernel():
        return np.asarray(_ext.signature_kernel(hashes, keys))
    return signature_kernel_numpy(hashes, keys)


def minhash_signature(doc, params):
    """num_perm 64-bit minima; None when the text is too short to shingle."""
    params.validate()
    hashes = shingle_hashes(doc.text, params.shingle_k)
    if hashes is None:
        return None
    return signature_kernel(hashes, permutation_keys(params))


def estimate_jaccard(sig_a, sig_b):
    if sig_a.shape != sig_b.shape:
        raise ValidationError(
            f"signature length mismatch: {sig_a.shape[0]} vs {sig_b.shape[0]}"
        )
    return float(np.count_nonzero(sig_a == sig_b)) / sig_a.shape[0]


def lsh_pairs(signatures, params):
    """Candidate pairs from banded LSH, annotated and thresholded by the
    signature match-fraction estimate. `signatures` maps id -> signature."""
    params.validate()
    ids = list(signatures)
    for doc_id in ids:
        if signatures[doc_id].shape[0] != params.num_perm:
            raise ValidationError(
                f"signature length mismatch for {doc_id!r}: "
                f"{signatures[doc_id].shape[0]} != {params.num_perm}"
            )
    candidates = set()
    for band in range(params.bands):
        lo, hi = band * params.rows, (band + 1) * params.rows
        buckets = {}
        for doc_id in ids:
            key = signatures[doc_id][lo:hi].tobytes()
            buckets.setdefault(key, []).append(doc_id)
        for members in buckets.values():
            for a, b in combinations(members, 2):
                candidates.add((a, b) if a < b else (b, a))
    pairs = []
    for a, b in sorted(candidates):
        est = estimate_jaccard(signatures[a], signatures[b])
        if est >= params.jaccard_threshold:
            pairs.append((a, b, est))
    return pairs


def build_clusters(pairs):
    """Connected components of the pair graph; singletons omitted."""
    uf = UnionFind()
    for a, b, *_ in pairs:
        uf.union(a, b)
    members = {}
    for node in uf.parent:
        members.setdefault(uf.find(node), []).append(node)
    clusters = [sorted(ids) for ids in members.values() if len(ids) > 1]
    clusters.sort(key=lambda c: c[0])
    return clusters


def dedup(docs, params=MinHashParams()):
    """Full pipeline: exact dedup, signatures, LSH pairing, clustering, removal."""
    params.validate()
    docs = list(docs)
    survivors, exact_groups = exact_dedup(docs)

    keys = permutation_keys(params)

    def _sig(doc):
        hashes = shingle_hashes(doc.text, params.shingle_k)
        if hashes is None:
            return None
        return signature_kernel(hashes, keys)

    sig_list = pmap(_sig, survivors)
    by_lang = {}
    for doc, sig in zip(survivors, sig_list):
        if sig is not None:
            by_lang.setdefault(doc.lang, {})[doc.id] = sig

    all_pairs = []
    for lang in sorted(by_lang):
        all_pairs.extend(lsh_pairs(by_lang[lang], params))
    all_pairs.sort(key=lambda p: (p[0], p[1]))

    clusters = build_clusters(all_pairs)

    removed_to_rep = {}
    for digest_group in exact_groups:
        rep = digest_group[0]
        for loser in digest_group[1:]:
            removed_to_rep[loser] = rep
    for cluster in clusters:
        rep = cluster[0]
        for loser in cluster[1:]:
            removed_to_rep[loser] = rep
    # exact-group representatives may themselves lose a near-dup cluster;
    # chase the chain so every record points at a genuinely kept id
    def _resolve(doc_id):
        while doc_id in removed_to_rep:
            doc_id = removed_to_rep[doc_id]
        return doc_id

    removed = sorted((rid, _resolve(rid)) for rid in removed_to_rep)
    kept_docs = [doc for doc in docs if doc.id not in removed_to_rep]
    report = DedupReport(
        params=params,
        input_count=len(docs),
        exact_groups=exact_groups,
        candidate_pairs=all_pairs,
        clusters=clusters,
        kept=[doc.id for doc in kept_docs],
        removed=removed,
    )
    return kept_docs, report
