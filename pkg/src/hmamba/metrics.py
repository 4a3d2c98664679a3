"""Top-K ranking metrics: hit ratio, NDCG and reciprocal rank."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ProtocolError


@dataclass(frozen=True)
class Metrics:
    hr: float
    ndcg: float
    mrr: float
    k: int
    n_users: int

    def as_rows(self) -> list[tuple[str, int, float, int]]:
        return [(name, self.k, getattr(self, name), self.n_users) for name in ("hr", "ndcg", "mrr")]


def target_rank(ranking, target: int) -> int:
    """1-based position of ``target`` in ``ranking``."""
    hits = np.flatnonzero(np.asarray(ranking) == target)
    if hits.size == 0:
        raise ProtocolError(f"target item {target} absent from the candidate ranking")
    return int(hits[0]) + 1


def metrics_from_ranks(ranks, K: int = 10) -> Metrics:
    """Average the per-user metrics given 1-based target ranks."""
    if K < 1:
        raise ValueError("K must be >= 1")
    ranks = np.asarray(ranks, dtype=np.int64)
    if ranks.size == 0:
        return Metrics(0.0, 0.0, 0.0, K, 0)
    if np.any(ranks < 1):
        raise ProtocolError("ranks are 1-based")
    hit = ranks <= K
    # sorted summation keeps the mean independent of the user order
    hr = math.fsum(hit.astype(np.float64)) / ranks.size
    ndcg = math.fsum(np.where(hit, 1.0 / np.log2(ranks + 1.0), 0.0)) / ranks.size
    mrr = math.fsum(np.where(hit, 1.0 / ranks, 0.0)) / ranks.size
    return Metrics(hr, ndcg, mrr, K, int(ranks.size))


def compute_metrics(rankings, targets, K: int = 10) -> Metrics:
    """Metrics over per-user ranked candidate lists and held-out targets."""
    if len(rankings) != len(targets):
        raise ProtocolError(f"{len(rankings)} rankings but {len(targets)} targets")
    ranks = [target_rank(r, t) for r, t in zip(rankings, targets)]
    return metrics_from_ranks(ranks, K)


def format_report(results, buckets=None, table: bool = False) -> str:
    """Key-value report lines ``metric<TAB>K<TAB>value<TAB>n_users``, optionally bucketed."""
    lines = []
    for m in results:
        for name, k, value, n in m.as_rows():
            lines.append(f"{name}\t{k}\t{value:.6f}\t{n}")
    for label, bucket_results in (buckets or {}).items():
        for m in bucket_results:
            for name, k, value, n in m.as_rows():
                lines.append(f"{name}[{label}]\t{k}\t{value:.6f}\t{n}")
    if table:
        lines.append("")
        lines.append(f"{'metric':<8}{'K':>4}{'value':>10}{'users':>8}")
        for m in results:
            for name, k, value, n in m.as_rows():
                lines.append(f"{name:<8}{k:>4}{value:>10.4f}{n:>8}")
    return "\n".join(lines) + "\n"
