"""Interaction logs, chronological leave-one-out sequences, and a synthetic hierarchy generator."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyDatasetError, FormatError

log = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("user_id", "item_id", "timestamp")
DATASET_FORMAT_VERSION = 1
STAY_PROBABILITY = 0.9


@dataclass
class InteractionLog:
    records: list[tuple[int, int, int]] = field(default_factory=list)
    malformed: int = 0

    def __len__(self):
        return len(self.records)


def load_interactions(path, format: str = "csv") -> InteractionLog:
    """Read ``user_id,item_id,timestamp`` rows from headed CSV; bad rows are counted and skipped."""
    if format != "csv":
        raise FormatError(f"unsupported interaction format {format!r}")
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read interactions from {path}: {exc}") from exc
    records, malformed = [], 0
    with fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise FormatError(f"{path}: missing required column(s) {', '.join(missing)}")
        reader.fieldnames = header
        for row in reader:
            try:
                # int() on the stripped text is locale-independent
                rec = tuple(int(row[c].strip()) for c in REQUIRED_COLUMNS)
            except (TypeError, ValueError, AttributeError):
                malformed += 1
                continue
            records.append(rec)
    if malformed:
        log.warning("%s: skipped %d malformed row(s)", path, malformed)
    return InteractionLog(records, malformed)


def write_interactions(log_: InteractionLog, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REQUIRED_COLUMNS)
        writer.writerows(log_.records)


@dataclass
class SequenceDataset:
    """Per-user chronological item sequences over contiguous 1-based item ids.

    ``sequences[u]`` holds the full (truncated) history; the last item is the
    test target and the second-to-last the validation target.
    """

    item_ids: list[int]  # original id of remapped item i + 1
    users: list[int]
    sequences: list[list[int]]
    max_seq_len: int

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def vocab_size(self) -> int:
        return self.n_items + 1

    def train_prefix(self, u: int) -> list[int]:
        return self.sequences[u][:-2]

    def valid_target(self, u: int) -> int:
        return self.sequences[u][-2]

    def test_target(self, u: int) -> int:
        return self.sequences[u][-1]

    def history(self, u: int, split: str = "test") -> list[int]:
        """Model input for predicting the ``split`` target; never contains that target."""
        if split == "test":
            return self.sequences[u][:-1]
        if split == "valid":
            return self.sequences[u][:-2]
        raise ValueError("split must be 'test' or 'valid'")

    def target(self, u: int, split: str = "test") -> int:
        return self.test_target(u) if split == "test" else self.valid_target(u)

    def to_json(self) -> str:
        payload = {
            "format": "hmamba-dataset",
            "version": DATASET_FORMAT_VERSION,
            "max_seq_len": self.max_seq_len,
            "item_ids": self.item_ids,
            "users": self.users,
            "sequences": self.sequences,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SequenceDataset":
        payload = json.loads(text)
        if payload.get("format") != "hmamba-dataset" or payload.get("version") != DATASET_FORMAT_VERSION:
            raise FormatError("not a version-1 hmamba dataset")
        return cls(payload["item_ids"], payload["users"], payload["sequences"], payload["max_seq_len"])


def build_sequences(log_: InteractionLog, min_user_len: int = 3, min_item_count: int = 1,
                    max_seq_len: int = 50) -> SequenceDataset:
    """Group by user, sort by timestamp (stable on input order), filter, remap, truncate."""
    item_counts: dict[int, int] = {}
    for _, item, _ in log_.records:
        item_counts[item] = item_counts.get(item, 0) + 1
    by_user: dict[int, list[tuple[int, int, int]]] = {}
    for pos, (user, item, ts) in enumerate(log_.records):
        if item_counts[item] >= min_item_count:
            by_user.setdefault(user, []).append((ts, pos, item))
    kept_users, raw_seqs = [], []
    for user in sorted(by_user):
        events = sorted(by_user[user])
        if len(events) < max(min_user_len, 3):
            continue
        kept_users.append(user)
        raw_seqs.append([item for _, _, item in events][-(max_seq_len + 2):])
    if not kept_users:
        raise EmptyDatasetError("no users survive filtering")
    item_ids = sorted({item for seq in raw_seqs for item in seq})
    remap = {item: i + 1 for i, item in enumerate(item_ids)}
    sequences = [[remap[item] for item in seq] for seq in raw_seqs]
    return SequenceDataset(item_ids, kept_users, sequences, max_seq_len)


@dataclass
class HierarchyTree:
    """Complete ``branching``-ary tree whose leaves are items ``1..branching**depth``."""

    depth: int
    branching: int
    home: list[int]  # home subtree index per user (a child of the root)

    @property
    def n_leaves(self) -> int:
        return self.branching**self.depth

    @property
    def subtree_size(self) -> int:
        return self.branching ** (self.depth - 1)

    def subtree_of(self, item: int) -> int:
        return (item - 1) // self.subtree_size

    def leaf_path(self, item: int) -> tuple[int, ...]:
        idx, path = item - 1, []
        for _ in range(self.depth):
            path.append(idx % self.branching)
            idx //= self.branching
        return tuple(reversed(path))

    def tree_distance(self, a: int, b: int) -> int:
        pa, pb = self.leaf_path(a), self.leaf_path(b)
        common = 0
        while common < self.depth and pa[common] == pb[common]:
            common += 1
        return 2 * (self.depth - common)

    def to_dict(self) -> dict:
        return {"depth": self.depth, "branching": self.branching, "home": self.home}


def synth_hierarchical_dataset(seed: int = 7, depth: int = 3, branching: int = 3, n_users: int = 500,
                               seq_len: int = 20):
    """Users walking within a home subtree of a complete tree of items.

    Each user draws a home subtree (a child of the root). Every step stays in
    it with probability 0.9 (uniform leaf of the subtree) and otherwise jumps to a
    uniformly chosen leaf of the whole tree. Returns ``(InteractionLog, HierarchyTree)``.
    """
    if depth < 1 or branching < 2:
        raise ValueError("need depth >= 1 and branching >= 2")
    rng = np.random.default_rng(seed)
    tree = HierarchyTree(depth, branching, [])
    size, n_leaves = tree.subtree_size, tree.n_leaves
    records = []
    for user in range(1, n_users + 1):
        home = int(rng.integers(branching))
        tree.home.append(home)
        base = home * size + 1
        for step in range(seq_len):
            if step == 0 or rng.random() < STAY_PROBABILITY:
                item = base + int(rng.integers(size))
            else:
                item = 1 + int(rng.integers(n_leaves))
            records.append((user, item, step))
    return InteractionLog(records), tree


@dataclass
class TrainingExamples:
    """Left-padded next-item training pairs built from the train prefixes."""

    inputs: np.ndarray  # (U, L)
    targets: np.ndarray  # (U, L); 0 marks padding

    def __len__(self):
        return self.inputs.shape[0]


def training_examples(dataset: SequenceDataset, max_seq_len: int | None = None) -> TrainingExamples:
    L = max_seq_len or dataset.max_seq_len
    inputs, targets = [], []
    for u in range(len(dataset.users)):
        prefix = dataset.train_prefix(u)[-(L + 1):]
        if len(prefix) < 2:
            continue
        x, y = prefix[:-1], prefix[1:]
        inputs.append([0] * (L - len(x)) + x)
        targets.append([0] * (L - len(y)) + y)
    if not inputs:
        raise EmptyDatasetError("no user has a train prefix of length >= 2")
    return TrainingExamples(np.array(inputs, dtype=np.int64), np.array(targets, dtype=np.int64))
