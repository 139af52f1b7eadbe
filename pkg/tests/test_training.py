import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from locustbreed.features import FeatureSet
from locustbreed.models import Checkpoint, ModelConfig, build_model
from locustbreed.training import (
    DivergenceError,
    EarlyStopping,
    TrainConfig,
    TrainReport,
    adam_step,
    adamw_step,
    batch_indices,
    stopping_epoch,
    train,
)


def _closed_form(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8, wd=0.0):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        theta = theta * (1 - lr * wd)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    return theta


@pytest.mark.parametrize("optimizer,wd", [("adam", 0.0), ("adamw", 0.1)])
def test_adam_matches_scalar_recurrence(optimizer, wd):
    cfg = TrainConfig(learning_rate=1e-3, optimizer=optimizer, weight_decay=0.1)
    grads = [0.3, -1.2, 0.05, 2.0, -0.7]
    params, state = [np.array(1.5)], {}
    step = adamw_step if optimizer == "adamw" else adam_step
    for g in grads:
        params, state = step(params, [np.array(g)], state, cfg)
    assert abs(float(params[0]) - _closed_form(1.5, grads, 1e-3, wd=wd)) < 1e-12
    assert state["t"] == len(grads)


def test_first_step_is_lr_times_sign():
    cfg = TrainConfig(learning_rate=0.01)
    (p,), _ = adam_step([np.array([1.0, 1.0])], [np.array([[3.0, -1e-3]])[0]], {}, cfg)
    np.testing.assert_allclose(p, [0.99, 1.01], atol=1e-7)


def test_zero_gradient():
    p0 = np.array([2.0, -4.0])
    (p,), _ = adam_step([p0], [np.zeros(2)], {}, TrainConfig(learning_rate=0.1))
    np.testing.assert_array_equal(p, p0)
    cfg = TrainConfig(learning_rate=0.1, optimizer="adamw", weight_decay=0.1)
    (p,), _ = adamw_step([p0], [np.zeros(2)], {}, cfg)
    np.testing.assert_allclose(p, p0 * (1 - 0.01), rtol=0, atol=1e-15)


def test_adam_minimises_quadratic():
    cfg = TrainConfig(learning_rate=1e-2)
    params, state = [np.array(3.0)], {}
    for _ in range(2000):
        params, state = adam_step(params, [2 * params[0]], state, cfg)
    assert abs(float(params[0])) < 1e-2


def test_patience_arithmetic():
    trace = [0.1, 0.2, 0.3, 0.4, 0.5] + [0.5] * 30
    assert stopping_epoch(trace, patience=10, max_epochs=200) == 15
    es = EarlyStopping(3)
    assert es.update(1, float("nan"))  # first epoch always counts
    assert es.update(2, 0.1)  # a NaN best is beaten by any number
    assert not es.update(3, 0.1)  # ties are not improvements
    assert stopping_epoch([0.5] * 3, patience=10) == 3


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=60), st.integers(1, 12))
def test_stopping_epoch_properties(trace, patience):
    stop = stopping_epoch(trace, patience)
    best = max(range(stop), key=lambda i: (trace[i], -i))
    assert stop == len(trace) or stop - (best + 1) == patience


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 200), st.integers(1, 64), st.integers(0, 9))
def test_batch_rule(n, size, seed):
    batches = batch_indices(np.random.default_rng(seed), n, size)
    flat = np.concatenate(batches)
    assert len(set(flat.tolist())) == len(flat)
    dropped = n - len(flat)
    assert dropped in (0, 1)
    assert dropped == int(size > 1 and n > size and n % size == 1)


def _blobs(n=48, seed=0, d=4, sep=3.0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = rng.normal(size=(n, d)) + np.where(y[:, None] == 1, sep / 2, -sep / 2)
    return FeatureSet("flat", [f"s{i:03d}" for i in range(n)], y, {"flat": x})


def _quiet(_line):
    pass


def test_separable_data_reaches_f1_one():
    model = build_model(ModelConfig("logreg", {"flat": (4,)}))
    cfg = TrainConfig(batch_size=8, max_epochs=30, patience=30, learning_rate=0.05)
    ckpt, report = train(model, _blobs(), _blobs(seed=1), cfg, log=_quiet)
    assert report.epochs[report.selected_epoch - 1]["validation"]["binary"]["f1"] == 1.0
    assert ckpt.training_state["selected_epoch"] == report.selected_epoch


def test_training_is_deterministic():
    cfg = TrainConfig(batch_size=8, max_epochs=6, patience=6, learning_rate=0.01)
    runs = []
    for _ in range(2):
        model = build_model(ModelConfig("logreg", {"flat": (4,)}))
        ckpt, report = train(model, _blobs(sep=0.5), _blobs(seed=2, sep=0.5), cfg, log=_quiet)
        runs.append((ckpt.to_bytes(), report.to_json()))
    assert runs[0] == runs[1]
    assert "wall_clock_seconds" not in runs[0][1]


def test_progress_lines():
    lines = []
    cfg = TrainConfig(batch_size=8, max_epochs=3, patience=3, learning_rate=0.01)
    train(build_model(ModelConfig("logreg", {"flat": (4,)})), _blobs(), _blobs(seed=1), cfg, log=lines.append)
    assert len(lines) == 3 and all("loss" in ln and "val_f1" in ln for ln in lines)


@pytest.mark.parametrize("arch", ["logreg", "plan_lb"])
def test_resume_is_bit_exact(arch, tmp_path):
    rng = np.random.default_rng(0)
    shapes = {"temporal": (4, 3, 3, 2), "static": (3, 3, 2)}
    hyper = {"encoder_channels": [2], "feature_dim": 4, "lstm_hidden": 3} if arch == "plan_lb" else {}

    def data(n, seed):
        r = np.random.default_rng(seed)
        y = np.arange(n) % 2
        t = r.normal(size=(n, 4, 3, 3, 2)) + y[:, None, None, None, None]
        return FeatureSet("rs", [f"{seed}-{i}" for i in range(n)], y, {"temporal": t, "static": r.normal(size=(n, 3, 3, 2))})

    tr, va = data(20, 1), data(10, 2)
    cfg = TrainConfig(batch_size=6, max_epochs=6, patience=6, learning_rate=0.01, rng_seed=int(rng.integers(99)))
    full, rep_full = train(build_model(ModelConfig(arch, shapes, hyper)), tr, va, cfg, log=_quiet)

    state = tmp_path / "state.lbck"
    short = TrainConfig(**{**cfg.__dict__, "max_epochs": 3, "patience": 3})
    train(build_model(ModelConfig(arch, shapes, hyper)), tr, va, short, log=_quiet, state_path=state)
    resumed, rep_res = train(build_model(ModelConfig(arch, shapes, hyper)), tr, va, cfg, log=_quiet,
                             resume=Checkpoint.load(state))
    assert rep_res.to_json() == rep_full.to_json()
    assert resumed.to_bytes() == full.to_bytes()


def test_divergence_is_reported():
    model = build_model(ModelConfig("logreg", {"flat": (4,)}))
    bad = _blobs()
    bad.arrays["flat"][5, 0] = np.nan
    with pytest.raises(DivergenceError) as err:
        train(model, bad, _blobs(seed=1), TrainConfig(batch_size=8, max_epochs=2, patience=2), log=_quiet)
    assert err.value.epoch == 1 and 1 <= err.value.batch <= 6


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(patience=20, max_epochs=10)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="sgd")
    chips = TrainConfig.for_architecture("prithvi_lb")
    assert chips.max_epochs == 10 and chips.optimizer == "adamw" and chips.effective_weight_decay == 0.1
    assert TrainConfig.for_architecture("conv3d").effective_weight_decay == 0.0


def test_report_round_trip():
    rep = TrainReport("logreg", "f1", [{"epoch": 1}], 1, False, 2.5)
    assert TrainReport.from_json(rep.to_json()).epochs == rep.epochs
    assert rep.to_json(include_timing=True)["wall_clock_seconds"] == 2.5
