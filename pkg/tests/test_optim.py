import numpy as np
import pytest

from hmamba.errors import NonFiniteError, ShapeError
from hmamba.optim import OptimizerState, clip_by_global_norm, global_norm, optimizer_step


def test_sgd_step_on_square():
    params = {"x": np.array(1.0)}
    opt = OptimizerState("sgd", lr=0.1, clip_norm=None)
    optimizer_step(opt, params, {"x": 2.0 * params["x"]})
    assert params["x"] == pytest.approx(0.8, abs=1e-15)
    assert opt.t == 1


def test_sgd_inverse_t_second_step():
    params = {"x": np.array(1.0)}
    opt = OptimizerState("sgd_inv_t", lr=1.0, clip_norm=None, t=1)
    optimizer_step(opt, params, {"x": np.array(2.0)})
    assert opt.t == 2 and opt.effective_lr == 0.5
    assert params["x"] == 0.0


def test_sgd_inverse_t_bowl_decays():
    def run(T):
        x = {"x": np.array([3.0, -2.0])}
        opt = OptimizerState("sgd_inv_t", lr=0.4, clip_norm=None)
        values = []
        for _ in range(T):
            values.append(float(np.sum(x["x"] ** 2)))
            optimizer_step(opt, x, {"x": 2.0 * x["x"] + 0.05})
        return values

    v = run(1000)
    # minimiser of sum(x^2 + 0.05 x) is -0.025 per coordinate
    sub = [val - 0.00125 for val in v]
    assert np.mean(sub[:1000]) < np.mean(sub[:10])
    assert sub[999] < sub[9]


def test_adam_first_step_is_lr_sign():
    params = {"w": np.array([1.0, -1.0, 2.0])}
    opt = OptimizerState("adam", lr=0.01, clip_norm=None)
    optimizer_step(opt, params, {"w": np.array([3.0, -0.5, 1e-3])})
    # bias-corrected first step is lr * g / (|g| + eps)
    expect = np.array([1.0, -1.0, 2.0]) - 0.01 * np.array([3.0, -0.5, 1e-3]) / (np.abs([3.0, -0.5, 1e-3]) + 1e-8)
    assert np.allclose(params["w"], expect, rtol=0, atol=1e-15)


def test_non_finite_gradient_aborts_without_update():
    params = {"w": np.ones(3)}
    opt = OptimizerState("sgd", lr=0.1)
    with pytest.raises(NonFiniteError, match="w"):
        optimizer_step(opt, params, {"w": np.array([1.0, np.nan, 0.0])})
    assert np.array_equal(params["w"], np.ones(3)) and opt.t == 0


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        optimizer_step(OptimizerState(), {"w": np.ones(3)}, {"w": np.ones(2)})


def test_clipping():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped, norm = clip_by_global_norm(grads, 1.0)
    assert norm == 5.0
    assert global_norm(clipped) == pytest.approx(1.0, rel=1e-15)
    same, _ = clip_by_global_norm(grads, None)
    assert same is grads


def test_unknown_kind():
    with pytest.raises(ValueError):
        OptimizerState("rmsprop")
    assert OptimizerState("sgd-1/t").kind == "sgd_inv_t"
