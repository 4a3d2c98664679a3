"""Full-catalog leave-one-out evaluation of a trained model."""

from __future__ import annotations

import numpy as np

from .data import SequenceDataset
from .errors import CompatibilityError, ProtocolError
from .metrics import Metrics, metrics_from_ranks
from .model import ModelState, left_pad, score_sequences

DEFAULT_BUCKETS = (100, 200, 300)


def check_compatible(state: ModelState, dataset: SequenceDataset) -> None:
    if state.config.vocab_size != dataset.vocab_size:
        raise CompatibilityError(
            f"checkpoint vocabulary has {state.config.n_items} items, dataset has {dataset.n_items}"
        )


def _rank_of_target(scores: np.ndarray, target: int, excluded) -> int:
    """1-based rank of ``target`` among non-excluded items; ties go to the smaller id."""
    s = scores.copy()
    ids = np.arange(1, s.size + 1)
    if excluded:
        ex = np.asarray(sorted(excluded), dtype=np.int64)
        if target in excluded:
            raise ProtocolError(f"target {target} is excluded from its own candidate set")
        s[ex - 1] = -np.inf
    t = s[target - 1]
    better = (s > t) | ((s == t) & (ids < target))
    return int(np.sum(better)) + 1


def target_ranks(state: ModelState, dataset: SequenceDataset, split: str = "test",
                 exclude_history: bool = False, batch_size: int = 256,
                 backend: str | None = None) -> np.ndarray:
    """Rank of each user's held-out target in a full-catalog ranking, in user order."""
    check_compatible(state, dataset)
    L = state.config.max_seq_len
    ranks = np.zeros(len(dataset.users), dtype=np.int64)
    for lo in range(0, len(dataset.users), batch_size):
        users = range(lo, min(lo + batch_size, len(dataset.users)))
        ids = np.stack([left_pad(dataset.history(u, split), L) for u in users])
        scores = score_sequences(state, ids, backend)
        for row, u in enumerate(users):
            target = dataset.target(u, split)
            excluded = set(dataset.history(u, split)) - {target} if exclude_history else ()
            ranks[u] = _rank_of_target(scores[row], target, excluded)
    return ranks


def evaluate(state: ModelState, dataset: SequenceDataset, ks=(10,), split: str = "test",
             exclude_history: bool = False, buckets=None, backend: str | None = None):
    """Metrics at each K, plus an optional breakdown by train-prefix length.

    ``buckets`` is a sorted list of upper bounds; a user falls in the first bucket
    whose bound exceeds their train-prefix length (the last bucket is open).
    """
    ranks = target_ranks(state, dataset, split, exclude_history, backend=backend)
    results: list[Metrics] = [metrics_from_ranks(ranks, k) for k in ks]
    by_bucket = {}
    if buckets:
        lengths = np.array([len(dataset.train_prefix(u)) for u in range(len(dataset.users))])
        edges = sorted(buckets)
        lower = 0
        for upper in list(edges) + [None]:
            sel = lengths >= lower if upper is None else (lengths >= lower) & (lengths < upper)
            label = f">={lower}" if upper is None else f"<{upper}"
            by_bucket[label] = [metrics_from_ranks(ranks[sel], k) for k in ks]
            lower = upper if upper is not None else lower
    return results, by_bucket
