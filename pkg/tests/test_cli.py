import csv
import math

import numpy as np
import pytest

from hmamba.checkpoint import load_checkpoint
from hmamba.cli import main


@pytest.fixture
def toy_csv(tmp_path):
    path = tmp_path / "toy.csv"
    assert main(["synth", "--out", str(path), "--users", "40", "--depth", "2", "--seq-len", "8"]) == 0
    return path


def train(data, out, *extra):
    return main(["train", "--variant", "full", "--data", str(data), "--epochs", "2", "--seed", "7",
                 "--out", str(out), "--set", "model.d=6", "--set", "model.d_state=4",
                 "--set", "model.max_seq_len=8", *extra])


def test_synth_writes_tree(toy_csv):
    assert (toy_csv.parent / "toy.csv.tree.json").exists()
    assert toy_csv.read_text().startswith("user_id,item_id,timestamp\n")


def test_train_outputs_and_determinism(toy_csv, tmp_path):
    assert train(toy_csv, tmp_path / "a") == 0
    assert train(toy_csv, tmp_path / "b") == 0
    for name in ("checkpoint.hmb", "train_log.jsonl", "dataset.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    snaps = [[line for line in (tmp_path / run / "config.toml").read_text().splitlines()
              if not line.startswith("output.dir")] for run in "ab"]
    assert snaps[0] == snaps[1]
    assert len((tmp_path / "a" / "train_log.jsonl").read_text().splitlines()) == 2


def test_snapshot_reruns(toy_csv, tmp_path):
    assert train(toy_csv, tmp_path / "a") == 0
    snap = tmp_path / "a" / "config.toml"
    assert main(["train", "--config", str(snap), "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "a" / "checkpoint.hmb").read_bytes() == (tmp_path / "c" / "checkpoint.hmb").read_bytes()


def test_eval_report_is_stable(toy_csv, tmp_path, capsys):
    assert train(toy_csv, tmp_path / "a") == 0
    ck = str(tmp_path / "a" / "checkpoint.hmb")
    capsys.readouterr()
    assert main(["eval", "--checkpoint", ck, "--k", "5", "--k", "10", "--buckets", "5"]) == 0
    first = capsys.readouterr().out
    assert main(["eval", "--checkpoint", ck, "--k", "5", "--k", "10", "--buckets", "5", "--out", str(tmp_path / "e")]) == 0
    assert capsys.readouterr().out == first
    assert (tmp_path / "e" / "metrics.txt").read_text() == first
    assert first.splitlines()[0].startswith("hr\t5\t")


def test_export(toy_csv, tmp_path):
    assert train(toy_csv, tmp_path / "a") == 0
    ck = tmp_path / "a" / "checkpoint.hmb"
    out = tmp_path / "emb.csv"
    assert main(["export", "--checkpoint", str(ck), "--out", str(out)]) == 0
    state, _ = load_checkpoint(ck)
    rows = list(csv.reader(out.open()))
    body = rows[1:]
    assert len(body) == state.config.vocab_size - 1
    assert [int(r[0]) for r in body] == list(range(1, state.config.vocab_size))
    coords = np.array([[float(v) for v in r[1:]] for r in body])
    assert np.all(np.linalg.norm(coords, axis=1) < math.sqrt(state.config.k))


def test_usage_errors(toy_csv, tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["train", "--variant", "bogus", "--data", str(toy_csv)])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main(["train", "--data", str(toy_csv), "--set", "model.nope=1", "--out", str(tmp_path / "x")])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main(["gradcheck", "--variants", "full,sideways"])
    assert info.value.code == 2


def test_data_errors(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.hmb")]) == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("user,item\n1,2\n")
    assert main(["train", "--data", str(bad), "--out", str(tmp_path / "o")]) == 3


def test_eval_compatibility_error(toy_csv, tmp_path):
    assert train(toy_csv, tmp_path / "a") == 0
    other = tmp_path / "other.csv"
    assert main(["synth", "--out", str(other), "--users", "20", "--depth", "3"]) == 0
    assert main(["eval", "--checkpoint", str(tmp_path / "a" / "checkpoint.hmb"), "--data", str(other)]) == 3


def test_training_abort_exit_code(toy_csv, tmp_path):
    assert train(toy_csv, tmp_path / "a", "--lr", "1e308", "--set", "train.clip_norm=0",
                 "--set", "train.optimizer=sgd") == 1


def test_gradcheck_exit_codes(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    groups = [line.split()[1] for line in out.splitlines() if line.startswith("full")]
    assert len(groups) == len(set(groups)) > 0
    assert main(["gradcheck", "--variants", "half", "--corrupt", "silu"]) == 1
    out = capsys.readouterr().out
    assert "FAIL" in out and "half:" in out
    with pytest.raises(SystemExit) as info:
        main(["gradcheck", "--d", "9"])
    assert info.value.code == 2


def test_bench_rows(tmp_path, capsys):
    assert main(["bench", "--lengths", "16,32", "--variants", "half,euclidean", "--reps", "1",
                 "--warmup", "0", "--out", str(tmp_path / "b"), "--kernels"]) == 0
    rows = (tmp_path / "b" / "bench.csv").read_text().splitlines()
    assert rows[0] == "variant,L,mean_ms,std_ms,reps"
    assert len(rows) - 1 == 2 * 2 + 2
    assert (tmp_path / "b" / "kernel_bench.csv").exists()
