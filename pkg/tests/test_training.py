from dataclasses import replace

import numpy as np
import pytest

from iterseg.loss import LossConfig, make_targets
from iterseg.network import Adam, SegmentorConfig, TinyFCN
from iterseg.phantom import PhantomConfig, generate
from iterseg.training import (TrainerConfig, TrainingError, TrainingSample, augment,
                              sample_training_patch, train, train_step, write_history_csv)

PATCH = (16, 16, 16)


@pytest.fixture(scope="module")
def dataset():
    return [generate(PhantomConfig(dims=(32, 32, 48), n_instances=4, instance_half_axes=(6, 5, 3),
                                   seed=s, crop_policy=p))
            for s, p in [(0, "none"), (1, "crop_first"), (2, "crop_last")]]


def test_random_fraction(dataset):
    rng = np.random.default_rng(0)
    cfg = TrainerConfig()
    # the statistic only needs the draw type; keep patches tiny to stay fast
    draws = [sample_training_patch(dataset, rng, (2, 2, 2), cfg).random_draw for _ in range(10_000)]
    assert abs(np.mean(draws) - 0.25) <= 0.02


def test_instance_draw_contains_target_and_memory_precedes(dataset):
    rng = np.random.default_rng(1)
    for _ in range(200):
        s = sample_training_patch(dataset, rng, PATCH, TrainerConfig(random_patch_fraction=0.0))
        assert not s.random_draw and s.targets.t.any()
        assert s.targets.label >= 1
        assert not np.any(s.memory.astype(bool) & s.targets.t.astype(bool))


def test_random_draw_has_empty_target(dataset):
    rng = np.random.default_rng(2)
    for _ in range(50):
        s = sample_training_patch(dataset, rng, PATCH, TrainerConfig(random_patch_fraction=1.0))
        assert s.random_draw and not s.targets.t.any()
        assert s.targets.label == 0 and s.targets.complete == 0


def test_empty_dataset():
    with pytest.raises(ValueError):
        sample_training_patch([], np.random.default_rng(0), PATCH)


def _sample():
    t = np.zeros((8, 8, 8), bool)
    t[2:6, 2:6, 1:7] = True
    image = np.random.default_rng(0).normal(size=t.shape)
    return TrainingSample(image, np.zeros(t.shape), make_targets(t, 7, True), False, 1, int(t.sum()))


def test_augment_identities():
    s = _sample()
    off = TrainerConfig(noise=False, smoothing=False, zcrop=False, augment_probability=1.0)
    out = augment(s, np.random.default_rng(0), off)
    assert out.image is s.image and out.targets is s.targets
    zero_noise = replace(off, noise=True, noise_sigma_range=(0.0, 0.0))
    out = augment(s, np.random.default_rng(0), zero_noise)
    np.testing.assert_array_equal(out.image, s.image)


def test_zcrop_flips_completeness():
    s = _sample()
    cfg = TrainerConfig(noise=False, smoothing=False, zcrop=True, zcrop_range=(2, 2),
                        augment_probability=1.0, pad_value=-5.0)
    out = augment(s, np.random.default_rng(0), cfg)
    cropped = np.all(out.image == -5.0, axis=(0, 1))
    assert cropped.sum() == 2 and (cropped[:2].all() or cropped[-2:].all())
    assert not out.targets.t[:, :, cropped].any()
    # one of the six target slices removed: far more than 2 % of the volume
    assert out.targets.complete == 0 and out.targets.label == 7
    assert s.targets.t.sum() == 96


def test_smoothing_changes_only_image():
    s = _sample()
    cfg = TrainerConfig(noise=False, smoothing=True, smoothing_sigma_range=(1.0, 1.0),
                        zcrop=False, augment_probability=1.0)
    out = augment(s, np.random.default_rng(0), cfg)
    assert out.image.std() < s.image.std()
    assert out.targets is s.targets and out.memory is s.memory


def test_train_history_and_csv(dataset, tmp_path):
    net_cfg = SegmentorConfig(channels=2, depth=1, patch_size=(8, 8, 8), head_width=2)
    net, history = train(dataset, net_cfg, TrainerConfig(n_max=10))
    assert [r.iteration for r in history] == list(range(10))
    lams = [r.lam for r in history]
    assert all(b > a for a, b in zip(lams, lams[1:]))
    path = tmp_path / "curve.csv"
    write_history_csv(history, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,lambda,fp_soft,fn_soft,label_loss,completeness_loss,total"
    assert len(lines) == 11


def test_non_finite_loss_aborts():
    net = TinyFCN(SegmentorConfig(channels=2, depth=1, patch_size=(8, 8, 8), head_width=2))
    s = _sample()
    s.image[0, 0, 0] = np.nan
    with pytest.raises(TrainingError):
        train_step(net, Adam(), s, 0, LossConfig(n_max=5))


@pytest.mark.parametrize("kwargs", [{"learning_rate": 0}, {"random_patch_fraction": 1.5},
                                    {"direction": "left"}, {"n_max": 0},
                                    {"zcrop_range": (3, 1)}])
def test_invalid_trainer_config(kwargs):
    with pytest.raises(ValueError):
        TrainerConfig(**kwargs)
