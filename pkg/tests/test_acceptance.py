"""Acceptance criteria 1-8, each at its stated tolerance and runtime bound.

Every test records one PASS/FAIL line (shown in the terminal summary) with the
measured quantities, then asserts the same verdict.
"""

import math
import time

import numpy as np
import pytest
from conftest import random_points, tangent_at

from hmamba import autodiff as ad
from hmamba import bench, lorentz, ssm
from hmamba.cli import main
from hmamba.data import build_sequences, synth_hierarchical_dataset, training_examples
from hmamba.evaluate import evaluate
from hmamba.gradcheck import REL_TOL, check_variant
from hmamba.metrics import compute_metrics, metrics_from_ranks
from hmamba.model import ModelConfig, ModelState, encode, item_table, training_loss
from hmamba.optim import OptimizerState, optimizer_step
from hmamba.ssm import SsmParams
from hmamba.train import epoch_rng, fit, sample_negatives

CURVATURES = (0.25, 1.0, 4.0)


class Checks:
    """Named sub-checks with the measured value and the bound it must meet."""

    def __init__(self):
        self.items = []

    def le(self, name, value, bound):
        self.items.append((name, float(value) <= bound, f"{name}={float(value):.3g}<={bound:g}"))

    def ge(self, name, value, bound):
        self.items.append((name, float(value) >= bound, f"{name}={float(value):.3g}>={bound:g}"))

    def true(self, name, ok):
        self.items.append((name, bool(ok), f"{name}={'ok' if ok else 'violated'}"))

    @property
    def ok(self):
        return all(ok for _, ok, _ in self.items)

    def detail(self):
        failed = [d for _, ok, d in self.items if not ok]
        shown = failed if failed else [d for _, _, d in self.items]
        prefix = "failed: " if failed else ""
        return prefix + "; ".join(shown)


def finish(acceptance, number, checks, start, budget_s):
    checks.le("runtime_s", time.perf_counter() - start, budget_s)
    acceptance(number, checks.ok, checks.detail())
    assert checks.ok, checks.detail()


def synthetic_dataset():
    log_, _ = synth_hierarchical_dataset(seed=7, depth=3, branching=3, n_users=500, seq_len=20)
    return build_sequences(log_, max_seq_len=20)


# -- 1. geometry -------------------------------------------------------------


def test_criterion_1_geometry(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    c = Checks()
    for k in CURVATURES:
        v = rng.normal(size=(10_000, 4))
        v *= (rng.uniform(0, 5, size=10_000) / np.linalg.norm(v, axis=1))[:, None]
        t = lorentz.lift(v)
        x = lorentz.exp_map_origin(t, k)
        c.le(f"round_trip[k={k}]", np.max(np.abs(lorentz.log_map_origin(x, k) - t)), 1e-8)
        c.le(f"closure/k[k={k}]", np.max(np.abs(lorentz.lorentz_inner(x, x) + k)) / k, 1e-9)

        p, q = random_points(rng, 2000, 4, k), random_points(rng, 2000, 4, k)
        u, w = tangent_at(rng, p, k), tangent_at(rng, p, k)
        pu, pw = lorentz.parallel_transport(p, q, u, k), lorentz.parallel_transport(p, q, w, k)
        c.le(f"pt_isometry[k={k}]",
             np.max(np.abs(lorentz.lorentz_inner(pu, pw) - lorentz.lorentz_inner(u, w))), 1e-8)
        c.le(f"pt_tangency[k={k}]", np.max(np.abs(lorentz.lorentz_inner(q, pw))), 1e-8)

        d_pq, d_qp = lorentz.hyperbolic_distance(p, q, k), lorentz.hyperbolic_distance(q, p, k)
        c.le(f"symmetry[k={k}]", np.max(np.abs(d_pq - d_qp)), 1e-12)
        c.true(f"identity[k={k}]", np.all(lorentz.hyperbolic_distance(p, p, k) == 0.0))

        E = rng.normal(scale=0.5 * math.sqrt(k), size=(2000, 4))
        step = rng.normal(size=(2000, 4))
        step *= (rng.uniform(1e-3, 0.05, size=2000) * math.sqrt(k) / np.linalg.norm(step, axis=1))[:, None]
        xi = lorentz.exp_map_origin(lorentz.lift(E), k)
        xj = lorentz.exp_map_origin(lorentz.lift(E + step), k)
        actual = lorentz.hyperbolic_distance(xi, xj, k)
        approx = math.sqrt(k) * np.log1p(2 * np.sum(step**2, axis=1) / k)
        c.le(f"expansion_rel_err[k={k}]", np.max(np.abs(approx - actual) / actual), 0.05)

        n = 10_000
        a = random_points(rng, n, 3, k)
        noise = np.concatenate([np.zeros((n, 1)), rng.normal(size=(n, 3))], axis=1)
        b = lorentz.reproject(a + noise * (0.09 * math.sqrt(k / 3)) * rng.uniform(size=(n, 1)), k)
        de = np.linalg.norm(a - b, axis=1)
        bound = math.sqrt(k) * de * (1 + de**2 / (4 * k)) * (1 + 1e-6)
        violations = int(np.sum(lorentz.hyperbolic_distance(a, b, k) > bound))
        c.le(f"stability_violations[k={k}]", violations, 0)
    finish(acceptance, 1, c, start, 10.0)


# -- 2. SSM oracles ----------------------------------------------------------


def _rk4(a, b, delta, substeps=1000):
    h, dt = 0.0, delta / substeps
    for _ in range(substeps):
        k1 = a * h + b
        k2 = a * (h + 0.5 * dt * k1) + b
        k3 = a * (h + 0.5 * dt * k2) + b
        k4 = a * (h + dt * k3) + b
        h += dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return h


def test_criterion_2_ssm_oracles(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    c = Checks()
    worst = 0.0
    for _ in range(100):
        L, n = int(rng.integers(1, 65)), int(rng.integers(1, 17))
        p = SsmParams(-rng.uniform(0.1, 3.0, size=n), rng.normal(size=(n, 2)), rng.normal(size=(3, n)))
        a_bar, B_bar = p.discretize(rng.uniform(0.01, 0.5))
        x = rng.normal(size=(L, 2))
        y = ssm.ssm_scan_mimo(a_bar, B_bar, p.C, x)
        worst = max(worst, float(np.max(np.abs(y - ssm.ssm_conv(a_bar, B_bar, p.C, x)))))
    c.le("scan_vs_conv", worst, 1e-10)

    worst = 0.0
    for _ in range(100):
        a, b, delta = -rng.uniform(1e-3, 10.0), rng.uniform(-3, 3), rng.uniform(1e-3, 1.0)
        delta = min(delta, 1.0 / abs(a))
        worst = max(worst, abs(ssm.zoh_discretize(a, b, delta)[1] - _rk4(a, b, delta)))
    c.le("zoh_vs_rk4", worst, 1e-8)

    L, n = 24, 4
    a = -np.arange(1.0, n + 1)
    x = rng.normal(size=L)
    B_t, C_t = rng.normal(size=(L, n)), rng.normal(size=(L, 1, n))
    delta = rng.uniform(0.01, 0.3, size=L)
    y = ssm.ssm_scan(ssm.discretize_selective(a, delta, B_t, x), C_t)
    causal = True
    for t in range(L):
        x2 = x.copy()
        x2[t] += 1.0
        y2 = ssm.ssm_scan(ssm.discretize_selective(a, delta, B_t, x2), C_t)
        causal &= bool(np.array_equal(y2[:t], y[:t]))
    c.true("causality_exact", causal)
    finish(acceptance, 2, c, start, 30.0)


# -- 3. gradients ------------------------------------------------------------


def test_criterion_3_gradcheck(acceptance):
    start = time.perf_counter()
    c = Checks()
    for variant in ("full", "half"):
        results = check_variant(variant, d=4, L=6, vocab_size=20)
        worst = max(results, key=lambda r: r.max_rel_error)
        c.le(f"{variant}_max_rel[{worst.group}]", worst.max_rel_error, REL_TOL)
    finish(acceptance, 3, c, start, 60.0)


# -- 4. manifold preservation under training ---------------------------------


@pytest.mark.slow
def test_criterion_4_manifold_preservation(acceptance):
    start = time.perf_counter()
    ds = synthetic_dataset()
    ex = training_examples(ds, 20)
    cfg = ModelConfig(variant="full", d=16, d_state=16, vocab_size=ds.vocab_size, max_seq_len=20)
    state = ModelState.initialize(cfg, 7)
    opt = OptimizerState("adam", lr=1e-3)
    k = cfg.k
    worst, non_finite, steps, epoch = 0.0, 0, 0, 0
    while steps < 200:
        epoch += 1
        rng = epoch_rng(7, epoch)
        order = rng.permutation(len(ex))
        for lo in range(0, len(order), 128):
            if steps == 200:
                break
            idx = order[lo:lo + 128]
            inputs, targets = ex.inputs[idx], ex.targets[idx]
            trace = []
            with ad.no_grad():
                vars_ = state.variables(False)
                encode(state, inputs, vars_, trace=trace)
                trace.append(item_table(state, vars_).value)
            for H in trace:
                non_finite += int(np.sum(~np.isfinite(H)))
                worst = max(worst, float(np.max(np.abs(lorentz.lorentz_inner(H, H) + k))))
            vars_ = state.variables()
            loss = training_loss(state, vars_, inputs, targets, rng=rng)
            grads = ad.backward(loss, vars_)
            grads["embedding"][0] = 0.0
            non_finite += int(not np.isfinite(float(loss.value)))
            non_finite += sum(int(np.sum(~np.isfinite(g))) for g in grads.values())
            if non_finite:
                break
            optimizer_step(opt, state.params, grads)
            non_finite += sum(int(np.sum(~np.isfinite(p))) for p in state.params.values())
            steps += 1
        if non_finite:
            break
    c = Checks()
    c.ge("steps", steps, 200)
    c.le("max_residual/k", worst / k, 1e-6)
    c.le("non_finite_events", non_finite, 0)
    finish(acceptance, 4, c, start, 300.0)


# -- 5. desk-scale learning --------------------------------------------------


@pytest.mark.slow
def test_criterion_5_learning(acceptance):
    start = time.perf_counter()
    ds = synthetic_dataset()
    ex = training_examples(ds, 20)
    threshold = 2 * 10 / 26
    c = Checks()
    ndcg = {"full": [], "euclidean": []}
    for seed in (1, 2, 3):
        for variant in ("full", "half", "euclidean"):
            cfg = ModelConfig(variant=variant, d=16, d_state=16, vocab_size=ds.vocab_size, max_seq_len=20)
            state = ModelState.initialize(cfg, seed)
            fit(state, ex, OptimizerState("adam", lr=1e-3), epochs=50, seed=seed, batch_size=128)
            m = evaluate(state, ds, ks=(10,))[0][0]
            c.ge(f"hr@10[{variant},s{seed}]", m.hr, threshold)
            if variant in ndcg:
                ndcg[variant].append(m.ndcg)
    full, eucl = float(np.mean(ndcg["full"])), float(np.mean(ndcg["euclidean"]))
    c.ge(f"ndcg@10_full({full:.4f})-euclidean({eucl:.4f})", full - eucl, -0.005)
    finish(acceptance, 5, c, start, 900.0)


# -- 6. complexity -----------------------------------------------------------


@pytest.mark.slow
def test_criterion_6_complexity(acceptance):
    start = time.perf_counter()
    lengths = [256, 512, 1024, 2048, 4096, 8192]
    rows = bench.benchmark_encoders(["full", "half", "euclidean"], lengths, d=16, d_state=16,
                                    vocab_size=1001, warmup=3, reps=10)
    c = Checks()
    for variant in ("full", "half", "euclidean"):
        slope = bench.loglog_slope(rows, variant)
        c.ge(f"slope_{variant}", slope, 0.8)
        c.le(f"slope_{variant}", slope, 1.3)
    c.ge("slope_attention", bench.loglog_slope(rows, bench.ATTENTION), 1.6)
    finish(acceptance, 6, c, start, 600.0)


# -- 7. metrics --------------------------------------------------------------


def test_criterion_7_metrics(acceptance):
    start = time.perf_counter()
    c = Checks()
    m = compute_metrics([[4, 9, 1, 2]], [9], K=10)
    c.le("hr_err", abs(m.hr - 1.0), 0.0)
    c.le("ndcg_err", abs(m.ndcg - 1 / math.log2(3)), 1e-15)
    c.le("mrr_err", abs(m.mrr - 0.5), 0.0)
    rng = np.random.default_rng(7)
    ordered = True
    for _ in range(500):
        n_items = int(rng.integers(2, 60))
        users = int(rng.integers(1, 40))
        rankings = [list(rng.permutation(n_items) + 1) for _ in range(users)]
        targets = [int(t) for t in rng.integers(1, n_items + 1, size=users)]
        for K in (1, 5, 10, 20):
            r = compute_metrics(rankings, targets, K)
            ordered &= r.mrr <= r.ndcg <= r.hr
    c.true("mrr<=ndcg<=hr", ordered)
    c.true("user_order_invariant",
           metrics_from_ranks([3, 1, 12, 7]) == metrics_from_ranks([12, 7, 1, 3]))
    finish(acceptance, 7, c, start, 5.0)


# -- 8. determinism ----------------------------------------------------------


def test_criterion_8_determinism(acceptance, tmp_path, capsys):
    start = time.perf_counter()
    data = tmp_path / "synth.csv"
    assert main(["synth", "--out", str(data)]) == 0
    c = Checks()
    for variant in ("full", "half", "euclidean"):
        artifacts = []
        for run in ("a", "b"):
            out = tmp_path / f"{variant}_{run}"
            assert main(["train", "--variant", variant, "--data", str(data), "--epochs", "2", "--seed", "7",
                         "--out", str(out), "--set", "model.d=16", "--set", "model.d_state=16",
                         "--set", "model.max_seq_len=20"]) == 0
            capsys.readouterr()
            assert main(["eval", "--checkpoint", str(out / "checkpoint.hmb"), "--out", str(out)]) == 0
            capsys.readouterr()
            artifacts.append([(out / name).read_bytes()
                              for name in ("checkpoint.hmb", "train_log.jsonl", "metrics.txt")])
        c.true(f"identical_bytes[{variant}]", artifacts[0] == artifacts[1])
    finish(acceptance, 8, c, start, 900.0)
