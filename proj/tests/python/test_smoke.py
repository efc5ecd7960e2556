"""Smoke tests for the fedsim python bindings."""

import math
import os
import subprocess
from pathlib import Path

import numpy as np
import pytest

import fedsim


def test_init_params_is_deterministic():
    a = fedsim.init_params(42)
    b = fedsim.init_params(42)
    assert a == b
    assert fedsim.encode_params(a, "f64") == fedsim.encode_params(b, "f64")
    assert a != fedsim.init_params(43)
    assert a.architecture_id == "cnn16-v1"
    assert set(fedsim.feature_names()) | set(fedsim.classifier_names()) == set(
        a.names()
    )


def test_zero_params_give_uniform_loss():
    zero = fedsim.zero_params()
    images = np.random.default_rng(0).random((6, 16, 16))
    labels = np.array([0, 1, 2, 3, 0, 1])
    logits = fedsim.forward(zero, images)
    assert logits.shape == (6, 4)
    assert np.all(logits == 0.0)
    loss, grads = fedsim.loss_and_grad(zero, images, labels)
    assert loss == pytest.approx(math.log(4.0), rel=1e-12)
    assert grads.names() == zero.names()


def test_codec_round_trip():
    params = fedsim.init_params(7)
    blob = fedsim.encode_params(params, "f64")
    assert fedsim.decode_params(blob) == params
    with pytest.raises(Exception):
        fedsim.decode_params(blob[:10])


def test_sgd_and_aggregate():
    params = fedsim.init_params(1)
    images = np.random.default_rng(1).random((8, 16, 16))
    labels = np.random.default_rng(2).integers(0, 4, size=8)
    _, grads = fedsim.loss_and_grad(params, images, labels)
    stepped = fedsim.sgd_apply(params, grads, 0.1)
    assert stepped != params

    merged = fedsim.aggregate([(1, 10, params), (2, 30, params)], round=1)
    assert merged == params


def test_shard_generation_and_training():
    shard = fedsim.generate_client_shard(1, seed=5)
    assert shard["train_images"].shape == (320, 16, 16)
    assert shard["test_images"].shape == (80, 16, 16)
    assert set(np.unique(shard["train_labels"])) <= {0, 1, 2, 3}

    update, n_k = fedsim.local_train(
        shard["train_images"][:40],
        shard["train_labels"][:40],
        fedsim.init_params(5),
        epochs=1,
        batch_size=8,
    )
    assert n_k == 40
    assert len(update.names()) == 8

    acc, confusion, loss = fedsim.evaluate(
        fedsim.init_params(5), shard["test_images"], shard["test_labels"]
    )
    assert 0.0 <= acc <= 1.0
    assert confusion.sum() == 80
    assert loss >= 0.0

    ext_images, ext_labels = fedsim.generate_external_testset(9)
    assert ext_images.shape == (300, 16, 16)
    assert set(np.unique(ext_labels)) == {0, 2}  # OKAY and HIDDEN only
    assert [fedsim.label_name(i) for i in range(4)] == [
        "OKAY",
        "NOT_OKAY",
        "HIDDEN",
        "EMPTY",
    ]


def test_simulate_runs_and_is_deterministic(tmp_path):
    out_dir = tmp_path / "run"
    config = tmp_path / "run.cfg"
    config.write_text(
        "clients = 2\n"
        "rounds = 2\n"
        "local_epochs = 1\n"
        "seed = 3\n"
        f"out_dir = {out_dir}\n"
    )
    summary = fedsim.simulate(str(config))
    assert 1 <= summary["best_round"] <= 2
    assert len(summary["rounds"]) == 2
    first = (out_dir / "rounds.csv").read_bytes()

    summary2 = fedsim.simulate(str(config))
    assert summary2["best_round"] == summary["best_round"]
    assert (out_dir / "rounds.csv").read_bytes() == first


@pytest.mark.skipif("FEDSIM_BIN" not in os.environ, reason="CLI not built")
def test_cli_binary_help():
    result = subprocess.run(
        [os.environ["FEDSIM_BIN"], "--help"], capture_output=True, text=True
    )
    assert result.returncode == 0
    assert "simulate" in result.stdout
