"""String distances and the recursive best-match alignment.

Alignment pairs each predicted finding with at most one reference finding by
repeatedly taking the globally closest (reference, predicted) pair, removing
both, and recursing until one side is exhausted. Equal distances are broken
by the smaller reference index, then the smaller predicted index, which makes
the procedure fully deterministic.

Distances: normalized Levenshtein over lightly normalized text, or cosine
distance between sentence embeddings. Embeddings come from an HTTP provider
(POST /embed) or from a deterministic char-trigram hashing fallback that
needs no model or network.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
import requests

from .annotations import Annotation
from .errors import TransportError, UndefinedMetricError, ZeroVectorError

FALLBACK_EMBED_DIM = 256
MIN_EMBED_DIM = 8


def levenshtein(a: str, b: str) -> int:
    """Edit distance (insert/delete/substitute, unit costs), two-row DP.

    The insertion carry cur[j] = min(cur[j], cur[j-1] + 1) is a running
    minimum of cur[i] - i, so it vectorizes with minimum.accumulate.
    """
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    bx = np.frombuffer(b.encode("utf-32-le"), dtype=np.uint32)
    idx = np.arange(len(b) + 1, dtype=np.int64)
    prev = idx.copy()
    for i, ca in enumerate(a, start=1):
        cur = np.empty_like(prev)
        cur[0] = i
        np.minimum(prev[1:] + 1, prev[:-1] + (bx != ord(ca)), out=cur[1:])
        cur = np.minimum.accumulate(cur - idx) + idx
        prev = cur
    return int(prev[-1])


def normalize_text(s: str) -> str:
    """Trim, collapse internal whitespace, casefold. Used before Levenshtein."""
    return " ".join(s.split()).casefold()


def normalized_levenshtein(a: str, b: str) -> float:
    """Levenshtein divided by the longer length; two empty strings are 0.0."""
    na, nb = normalize_text(a), normalize_text(b)
    longest = max(len(na), len(nb))
    if longest == 0:
        return 0.0
    return levenshtein(na, nb) / longest


def cosine_distance(u: Sequence[float] | np.ndarray, v: Sequence[float] | np.ndarray) -> float:
    """1 - cos(u, v), in [0, 2]. Zero-norm input means the embedder misbehaved."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ZeroVectorError("cosine distance undefined for zero-norm vector")
    sim = float(np.dot(u, v)) / (nu * nv)
    # guard fp drift out of [-1, 1]
    sim = max(-1.0, min(1.0, sim))
    return 1.0 - sim


def _char_trigrams(text: str) -> list[str]:
    s = text.strip()
    if len(s) < 3:
        return [s] if s else []
    return [s[i : i + 3] for i in range(len(s) - 2)]


def fallback_embed(text: str, dim: int = FALLBACK_EMBED_DIM) -> np.ndarray:
    """Deterministic char-trigram hashing embedding, L2-normalized.

    Signed feature hashing: each trigram is md5-hashed to a bucket and a sign,
    so distinct texts decorrelate reasonably well for a model-free fallback.
    Identical text gives an identical vector on every platform and run.
    """
    if dim < MIN_EMBED_DIM:
        raise ValueError(f"dim must be >= {MIN_EMBED_DIM}")
    vec = np.zeros(dim, dtype=np.float64)
    grams = _char_trigrams(text)
    if not grams:
        raise ValueError("cannot embed empty text")
    for g in grams:
        digest = hashlib.md5(g.encode("utf-8")).digest()
        bucket = int.from_bytes(digest[:8], "little") % dim
        sign = 1.0 if digest[8] % 2 == 0 else -1.0
        vec[bucket] += sign
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        # signs cancelled exactly; nudge the first gram's bucket so the
        # vector stays usable and deterministic
        g = grams[0]
        digest = hashlib.md5(g.encode("utf-8")).digest()
        vec[int.from_bytes(digest[:8], "little") % dim] = 1.0
        norm = 1.0
    return vec / norm


class Embedder(Protocol):
    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


class HashingEmbedder:
    """Embedder over fallback_embed; no model, no network, fully deterministic."""

    def __init__(self, dim: int = FALLBACK_EMBED_DIM):
        self.dim = dim

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        return np.stack([fallback_embed(t, self.dim) for t in texts])


class HttpEmbedder:
    """Client for an embedding provider speaking POST /embed.

    Request {"texts": [...]} answers {"vectors": [[...], ...], "dim": n} with
    row i embedding text i.
    """

    def __init__(self, base_url: str, timeout_s: float = 60.0):
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        try:
            resp = requests.post(
                self.base_url + "/embed", json={"texts": list(texts)}, timeout=self.timeout_s
            )
        except requests.RequestException as e:
            raise TransportError(f"embedding provider unreachable: {e}") from e
        if resp.status_code != 200:
            raise TransportError(
                f"embedding provider returned {resp.status_code}: {resp.text[:200]}"
            )
        payload = resp.json()
        vectors = np.asarray(payload["vectors"], dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(texts):
            raise TransportError("embedding provider returned misshapen vectors")
        return vectors


@dataclass(frozen=True)
class DistanceSpec:
    """Which string distance alignment uses.

    kind "levenshtein" needs nothing else; kind "cosine" requires an embedder.
    """

    kind: str = "levenshtein"
    embedder: Embedder | None = None

    def __post_init__(self):
        if self.kind not in ("levenshtein", "cosine"):
            raise ValueError(f"unknown distance kind {self.kind!r}")
        if self.kind == "cosine" and self.embedder is None:
            raise ValueError("cosine distance requires an embedder")


def distance_matrix(
    ref_texts: Sequence[str], pred_texts: Sequence[str], spec: DistanceSpec
) -> np.ndarray:
    """Pairwise distances, rows = reference findings, cols = predicted."""
    n, m = len(ref_texts), len(pred_texts)
    out = np.zeros((n, m), dtype=np.float64)
    if n == 0 or m == 0:
        return out
    if spec.kind == "levenshtein":
        for i, r in enumerate(ref_texts):
            for j, p in enumerate(pred_texts):
                out[i, j] = normalized_levenshtein(r, p)
        return out
    texts = [t.strip() for t in ref_texts] + [t.strip() for t in pred_texts]
    vectors = spec.embedder.embed(texts)
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(norms == 0.0):
        raise ZeroVectorError("embedder produced a zero-norm vector")
    unit = vectors / norms[:, None]
    sims = unit[:n] @ unit[n:].T
    np.clip(sims, -1.0, 1.0, out=sims)
    return 1.0 - sims


@dataclass(frozen=True)
class MatchedPair:
    """One aligned (reference, predicted) finding pair.

    Indices refer to positions in the original findings lists; distance is the
    value at selection time.
    """

    ref_index: int
    pred_index: int
    distance: float
    t_ref: float
    t_pred: float
    ref_text: str = ""
    pred_text: str = ""


@dataclass
class AlignmentResult:
    """Outcome of matching one predicted annotation against its reference.

    pairs are in selection order (closest first). Exactly min(n_ref, n_pred)
    pairs exist and no index appears twice.
    """

    doc_id: str
    pairs: list[MatchedPair]
    unmatched_ref: list[int]
    unmatched_pred: list[int]
    n_ref: int
    n_pred: int

    def __post_init__(self):
        ref_idx = [p.ref_index for p in self.pairs]
        pred_idx = [p.pred_index for p in self.pairs]
        if len(set(ref_idx)) != len(ref_idx) or len(set(pred_idx)) != len(pred_idx):
            raise ValueError("an index was matched twice")
        if len(self.pairs) != min(self.n_ref, self.n_pred):
            raise ValueError("pair count must be min(n_ref, n_pred)")
        if sorted(ref_idx + self.unmatched_ref) != list(range(self.n_ref)):
            raise ValueError("reference indices must partition 0..n_ref-1")
        if sorted(pred_idx + self.unmatched_pred) != list(range(self.n_pred)):
            raise ValueError("predicted indices must partition 0..n_pred-1")


def greedy_select(dist: np.ndarray) -> list[tuple[int, int]]:
    """Matrix form of the recursive procedure: selection order of (row, col).

    Repeatedly takes the minimum entry and retires its row and column until
    one side is exhausted. np.argmin returns the first minimum in row-major
    order, which is exactly the tie policy: smallest reference index first,
    then smallest predicted index.
    """
    n, m = dist.shape
    selected: list[tuple[int, int]] = []
    masked = np.array(dist, dtype=np.float64, copy=True)
    for _ in range(min(n, m)):
        flat = int(np.argmin(masked))
        i, j = divmod(flat, m)
        selected.append((i, j))
        masked[i, :] = np.inf
        masked[:, j] = np.inf
    return selected


def best_match(
    reference: Annotation, predicted: Annotation, spec: DistanceSpec | None = None
) -> AlignmentResult:
    """Greedy globally-closest-first matching between two annotations.

    Computes all pairwise distances once, then selects greedily; equal
    distances resolve to the smaller reference index, then the smaller
    predicted index, so results are deterministic.
    """
    spec = spec or DistanceSpec()
    ref_texts = [f.text for f in reference.findings]
    pred_texts = [f.text for f in predicted.findings]
    dist = distance_matrix(ref_texts, pred_texts, spec)
    n, m = dist.shape

    pairs: list[MatchedPair] = []
    for i, j in greedy_select(dist):
        pairs.append(
            MatchedPair(
                ref_index=i,
                pred_index=j,
                distance=float(dist[i, j]),
                t_ref=reference.findings[i].time_hours,
                t_pred=predicted.findings[j].time_hours,
                ref_text=ref_texts[i],
                pred_text=pred_texts[j],
            )
        )

    matched_ref = {p.ref_index for p in pairs}
    matched_pred = {p.pred_index for p in pairs}
    return AlignmentResult(
        doc_id=reference.doc_id,
        pairs=pairs,
        unmatched_ref=sorted(set(range(n)) - matched_ref),
        unmatched_pred=sorted(set(range(m)) - matched_pred),
        n_ref=n,
        n_pred=m,
    )


def match_rate_curve(
    alignment: AlignmentResult, thresholds: Sequence[float]
) -> list[tuple[float, float]]:
    """Fraction of reference findings matched within each distance threshold.

    thresholds must be non-decreasing; the curve is then non-decreasing too.
    """
    if alignment.n_ref == 0:
        raise UndefinedMetricError("match rate undefined with no reference findings")
    ts = list(thresholds)
    if any(b < a for a, b in zip(ts, ts[1:])):
        raise ValueError("thresholds must be non-decreasing")
    dists = sorted(p.distance for p in alignment.pairs)
    out = []
    for t in ts:
        matched = sum(1 for d in dists if d <= t)
        out.append((t, matched / alignment.n_ref))
    return out
