import numpy as np
import pytest

from hmamba.data import (
    STAY_PROBABILITY, InteractionLog, SequenceDataset, build_sequences, load_interactions,
    synth_hierarchical_dataset, training_examples, write_interactions,
)
from hmamba.errors import EmptyDatasetError, FormatError


def write(tmp_path, text, name="log.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_load_three_rows(tmp_path):
    p = write(tmp_path, "user_id,item_id,timestamp\n1,10,100\n1,11,101\n2,10,99\n")
    log_ = load_interactions(p)
    assert log_.records == [(1, 10, 100), (1, 11, 101), (2, 10, 99)]
    assert log_.malformed == 0


def test_load_skips_malformed(tmp_path):
    p = write(tmp_path, "user_id,item_id,timestamp,rating\n1,10,100,5\n1,11,1.5e3,4\n2,10,99,3\n")
    log_ = load_interactions(p)
    assert len(log_) == 2 and log_.malformed == 1


def test_load_empty_with_header(tmp_path):
    log_ = load_interactions(write(tmp_path, "timestamp,user_id,item_id\n"))
    assert len(log_) == 0 and log_.malformed == 0


def test_load_errors(tmp_path):
    with pytest.raises(FormatError, match="timestamp"):
        load_interactions(write(tmp_path, "user_id,item_id\n1,2\n"))
    with pytest.raises(OSError):
        load_interactions(tmp_path / "missing.csv")


def test_leave_one_out_split():
    log_ = InteractionLog([(1, 50 + t, t) for t in range(5)] + [(2, 60, 0), (2, 61, 1)])
    ds = build_sequences(log_)
    assert ds.users == [1]
    orig = lambda ids: [ds.item_ids[i - 1] for i in ids]
    assert orig(ds.train_prefix(0)) == [50, 51, 52]
    assert orig([ds.valid_target(0), ds.test_target(0)]) == [53, 54]


def test_chronological_with_stable_ties():
    log_ = InteractionLog([(1, 30, 5), (1, 10, 1), (1, 20, 5), (1, 40, 0)])
    ds = build_sequences(log_)
    orig = [ds.item_ids[i - 1] for i in ds.sequences[0]]
    assert orig == [40, 10, 30, 20]


def test_remap_contiguous_and_truncation():
    log_ = InteractionLog([(1, 1000 + t, t) for t in range(30)] + [(2, 5, t) for t in range(4)])
    ds = build_sequences(log_, max_seq_len=10)
    assert len(ds.sequences[0]) == 12
    flat = {i for s in ds.sequences for i in s}
    assert flat == set(range(1, ds.n_items + 1))


def test_min_item_count_and_empty():
    log_ = InteractionLog([(1, 1, 0), (1, 2, 1), (1, 3, 2)])
    with pytest.raises(EmptyDatasetError):
        build_sequences(log_, min_item_count=2)
    with pytest.raises(EmptyDatasetError):
        build_sequences(InteractionLog([(1, 1, 0), (1, 2, 1)]))


def test_dataset_serialization_byte_stable(tmp_path):
    log_, _ = synth_hierarchical_dataset(seed=1, n_users=30)
    p = tmp_path / "a.csv"
    write_interactions(log_, p)
    a = build_sequences(load_interactions(p), max_seq_len=15).to_json()
    b = build_sequences(load_interactions(p), max_seq_len=15).to_json()
    assert a == b
    assert SequenceDataset.from_json(a).to_json() == a
    with pytest.raises(FormatError):
        SequenceDataset.from_json('{"format": "other"}')


def test_synth_leaf_count_and_determinism():
    log_, tree = synth_hierarchical_dataset(seed=4, depth=2, branching=3, n_users=40, seq_len=8)
    assert tree.n_leaves == 9
    assert {item for _, item, _ in log_.records} <= set(range(1, 10))
    again, tree2 = synth_hierarchical_dataset(seed=4, depth=2, branching=3, n_users=40, seq_len=8)
    assert again.records == log_.records and tree2.to_dict() == tree.to_dict()
    with pytest.raises(ValueError):
        synth_hierarchical_dataset(branching=1)


def test_synth_within_subtree_frequency():
    log_, tree = synth_hierarchical_dataset(seed=9, depth=3, branching=3, n_users=500, seq_len=21)
    stays = total = 0
    for user, item, step in log_.records:
        if step == 0:
            continue
        total += 1
        stays += tree.subtree_of(item) == tree.home[user - 1]
    assert total == 10_000
    assert 0.85 <= stays / total <= 0.95
    # a uniform jump still lands home one time in b
    assert stays / total == pytest.approx(STAY_PROBABILITY + (1 - STAY_PROBABILITY) / 3, abs=0.01)


def test_tree_distance():
    _, tree = synth_hierarchical_dataset(seed=0, depth=3, branching=3, n_users=1, seq_len=3)
    assert tree.leaf_path(1) == (0, 0, 0) and tree.leaf_path(27) == (2, 2, 2)
    assert tree.tree_distance(1, 1) == 0
    assert tree.tree_distance(1, 2) == 2
    assert tree.tree_distance(1, 27) == 6


def test_training_examples_never_see_held_out_items():
    ds = SequenceDataset([1, 2, 3, 4, 5, 6], [7], [[1, 2, 3, 4, 5, 6]], 6)
    ex = training_examples(ds)
    assert ex.inputs.tolist() == [[0, 0, 0, 1, 2, 3]]
    assert ex.targets.tolist() == [[0, 0, 0, 2, 3, 4]]
    assert ds.history(0, "test") == [1, 2, 3, 4, 5]
    assert ds.history(0, "valid") == [1, 2, 3, 4]
    assert 6 not in ds.history(0, "test")
