# SPDX-License-Identifier: Apache-2.0
import math

import numpy as np
import pytest

import tandkit

TINY = """
experiment.seed = 5
experiment.data_count = 10
experiment.tissue_scenes = 2
data.image_size = 64
data.nuclei_min = 4
data.nuclei_max = 8
data.tissue_blob_scale = 20
model.encoder_widths = 4,6,8,8
model.tissue_widths = 4,4,6,6
model.film_hidden = 4
train.epochs_stage1 = 1
train.epochs_stage2 = 1
train.epochs_stage3 = 1
"""


def test_parse_config_fills_defaults():
    kv = tandkit.parse_config("experiment.seed = 3\n")
    assert kv["experiment.seed"] == "3"
    assert float(kv["eval.radius"]) == 15.0


def test_unknown_key_raises():
    with pytest.raises(tandkit.ConfigError, match="train.learning_rate"):
        tandkit.parse_config("experiment.seed = 1\ntrain.learning_rate = 0.1\n")


def test_generate_scene_is_deterministic():
    a = tandkit.generate_scene(TINY, 2)
    b = tandkit.generate_scene(TINY, 2)
    assert a["image"].shape == (3, 64, 64)
    assert a["mask"].shape == (64, 64)
    assert a["mask"].dtype == np.uint8
    assert np.array_equal(a["image"], b["image"])
    assert a["points"] == b["points"]
    assert 4 <= len(a["points"]) <= 8


def test_heatmap_round_trip():
    heat = tandkit.encode_center_map([(21.0, 9.0, 0)], 16, 16, stride=4, sigma=2.0)
    assert heat.shape == (1, 16, 16)
    assert heat.max() == 1.0
    dets = tandkit.decode_peaks(heat, threshold=0.3)
    assert len(dets) == 1
    assert abs(dets[0]["x"] - 21.0) <= 2.0 and abs(dets[0]["y"] - 9.0) <= 2.0


def test_matching_hand_example():
    r = tandkit.match_centers([(40, 40, 0)], [(0, 0, 0.9, None), (30, 30, 0.8, None)])
    assert (r["tp"], r["fp"], r["fn"]) == (1, 1, 0)
    assert r["precision"] == 0.5
    assert math.isclose(r["f1"], 2 / 3)


def test_dice_one_pixel_overlap():
    gt = np.array([[1, 1], [0, 0]], dtype=np.uint8)
    pred = np.array([[0, 1], [1, 0]], dtype=np.uint8)
    assert tandkit.dice_per_class(pred, gt, 2)[1] == 0.5


def test_run_and_predict(tmp_path):
    record = tandkit.run_experiment(TINY, tmp_path / "run")
    assert set(record["metrics"]) >= {"film_report", "ablation_report", "macro_f1_delta"}
    assert record["metrics"]["stage3"]["identity_at_step0"] is True
    model = tandkit.Model.load(tmp_path / "run" / "stage3.ckpt")
    assert model.config()["image_size"] == 64
    image = tandkit.generate_scene(TINY, 0)["image"]
    dets = model.predict(image, threshold=0.05)
    scores = [d["score"] for d in dets]
    assert scores == sorted(scores, reverse=True)
    assert all(d["class_id"] in (0, 1, 2) for d in dets)
