import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iterseg.benchmark import oracle_phantom_config
from iterseg.network import Prediction
from iterseg.phantom import generate
from iterseg.segmentor import OracleSegmentor
from iterseg.traversal import (TraversalConfig, fragment_bbox_center, round_half_away, run,
                               scaled_v_min, sliding_positions, surface_refine_ct, write_trace)
from iterseg.volume import InstanceMask, PatchSpec, VoxelGrid

CFG = TraversalConfig(patch_size=(32, 32, 32), v_min=20)


def test_round_half_away():
    np.testing.assert_array_equal(round_half_away([11.5, -11.5, 2.4, -2.6, 0.5]),
                                  [12, -12, 2, -3, 1])


def test_sliding_positions_examples():
    assert sliding_positions((32, 32, 32), (32, 32, 32), (16, 16, 16)) == [(16, 16, 16)]
    up = sliding_positions((32, 32, 64), (32, 32, 32), (16, 16, 16), "up")
    assert [p[2] for p in up] == [16, 32, 48]
    down = sliding_positions((32, 32, 64), (32, 32, 32), (16, 16, 16), "down")
    assert [p[2] for p in down] == [48, 32, 16]


def _covered(dims, patch, positions):
    cov = np.zeros(dims, bool)
    for c in positions:
        lo = np.asarray(c) - np.asarray(patch) // 2
        sl = tuple(slice(max(l, 0), l + s) for l, s in zip(lo, patch))
        cov[sl] = True
    return cov


@settings(max_examples=60, deadline=None)
@given(st.tuples(*[st.integers(1, 40)] * 3), st.tuples(*[st.integers(1, 16)] * 3),
       st.tuples(*[st.integers(1, 16)] * 3))
def test_sliding_positions_cover_and_order(dims, patch, step):
    up = sliding_positions(dims, patch, step, "up")
    assert _covered(dims, patch, up).all()
    keys = [(p[2], p[1], p[0]) for p in up]
    assert keys == sorted(keys)
    down = sliding_positions(dims, patch, step, "down")
    assert sorted(down) == sorted(up)
    assert [p[2] for p in down] == sorted((p[2] for p in down), reverse=True)


def test_fragment_bbox_center_examples():
    spec = PatchSpec((16, 16, 16), (8, 8, 8))
    patch = np.zeros((8, 8, 8), bool)
    patch[2, 3, 4] = True
    assert fragment_bbox_center(patch, spec) == (14, 15, 16)
    patch = np.zeros((8, 8, 8), bool)
    patch[1, 1, [0, 3]] = True
    assert fragment_bbox_center(patch, spec)[2] == 14  # 12 + 1.5 -> 13.5 -> 14
    with pytest.raises(ValueError):
        fragment_bbox_center(np.zeros((8, 8, 8)), spec)
    # clamping
    far = PatchSpec((0, 0, 0), (8, 8, 8))
    patch = np.zeros((8, 8, 8), bool)
    patch[0, 0, 0] = True
    assert fragment_bbox_center(patch, far, dims=(10, 10, 10)) == (0, 0, 0)


def test_fragment_bbox_center_random_blobs():
    rng = np.random.default_rng(0)
    for _ in range(100):
        patch = rng.random((6, 7, 5)) < 0.1
        if not patch.any():
            continue
        spec = PatchSpec(tuple(rng.integers(-5, 30, 3)), (6, 7, 5))
        lo = [min(i for i in range(patch.shape[a]) if np.take(patch, i, axis=a).any())
              for a in range(3)]
        hi = [max(i for i in range(patch.shape[a]) if np.take(patch, i, axis=a).any())
              for a in range(3)]
        expected = tuple(int(np.sign(v) * np.floor(abs(v) + 0.5))
                         for v in (np.add(lo, hi) / 2 + spec.lower))
        assert fragment_bbox_center(patch, spec) == expected


def naive_refine(mask, image, threshold):
    mask = mask.copy()
    changed = True
    while changed:
        changed = False
        drop = []
        for i, j, k in np.argwhere(mask):
            if image[i, j, k] >= threshold:
                continue
            for d in [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]:
                n = (i + d[0], j + d[1], k + d[2])
                if not all(0 <= n[a] < mask.shape[a] for a in range(3)) or not mask[n]:
                    drop.append((i, j, k))
                    break
        for v in drop:
            mask[v] = False
            changed = True
    return mask


def test_surface_refine_ct():
    rng = np.random.default_rng(1)
    img = np.full((9, 9, 9), 300.0)
    assert surface_refine_ct(np.ones((9, 9, 9)), img, 200).all()
    shell = np.zeros((9, 9, 9), bool)
    shell[2:7, 2:7, 2:7] = True
    img = np.full((9, 9, 9), 100.0)
    img[3:6, 3:6, 3:6] = 400.0
    out = surface_refine_ct(shell, img, 200)
    np.testing.assert_array_equal(out, img > 200)
    for _ in range(30):
        m = rng.random((6, 6, 6)) < 0.6
        im = rng.uniform(0, 400, (6, 6, 6))
        np.testing.assert_array_equal(surface_refine_ct(m, im, 200), naive_refine(m, im, 200))


def test_scaled_v_min():
    assert scaled_v_min(1000, 1.0) == 1000
    assert scaled_v_min(1000, 2.0) == 125


def test_empty_image_scans_every_position():
    image = VoxelGrid(np.zeros((64, 64, 64), np.float32))
    blank = InstanceMask(np.zeros((64, 64, 64), np.int32), {})
    result = run(image, OracleSegmentor(blank), CFG)
    assert result.iterations == len(sliding_positions((64, 64, 64), (32, 32, 32), (16, 16, 16)))
    assert result.records == [] and not result.mask.ids.any()


def _oracle_run(cfg_kwargs, phantom):
    image, ref = generate(phantom)
    cfg = TraversalConfig(**{"patch_size": (32, 32, 32), "v_min": 20, **cfg_kwargs})
    return ref, run(image, OracleSegmentor(ref), cfg)


def test_five_instances_up():
    ref, result = _oracle_run({}, oracle_phantom_config(5, "none", seed=3, label_start=7))
    assert len(result.records) == 5
    for rec in result.records:
        ref_id = np.bincount(ref.ids[result.mask.ids == rec.instance_id]).argmax()
        np.testing.assert_array_equal(result.mask.ids == rec.instance_id, ref.ids == ref_id)
    assert [r.raw_label_value for r in result.records] == [7, 8, 9, 10, 11]
    mem = [e["memory_voxels"] for e in result.trace]
    assert all(b >= a for a, b in zip(mem, mem[1:]))
    assert all(r.n_iterations <= CFG.max_iter_per_vertebra + 1 for r in result.records)


def test_cropped_bottom_gated_but_in_memory():
    ref, result = _oracle_run({}, oracle_phantom_config(4, "crop_first", seed=2))
    assert not ref.records[1].complete
    assert len(result.records) == 4
    first = result.records[0]
    assert not first.complete and not first.in_output
    assert first.instance_id not in result.mask.records
    assert (result.detections.ids == first.instance_id).sum() == (ref.ids == 1).sum()
    assert sorted(result.mask.records) == [r.instance_id for r in result.records[1:]]


def test_keep_incomplete_in_output():
    _, result = _oracle_run({"keep_incomplete_in_output": True},
                            oracle_phantom_config(4, "crop_first", seed=2))
    assert len(result.mask.records) == 4


def test_direction_symmetry():
    phantom = oracle_phantom_config(6, "none", seed=5)
    _, up = _oracle_run({"direction": "up"}, phantom)
    _, down = _oracle_run({"direction": "down"}, phantom)
    up_labels = [r.raw_label_value for r in up.records]
    down_labels = [r.raw_label_value for r in down.records]
    assert up_labels == down_labels[::-1]
    # same partition of the voxels, ids assigned in traversal order
    remap = {u.instance_id: d.instance_id for u, d in zip(up.records, down.records[::-1])}
    mapped = np.vectorize(lambda i: remap.get(i, 0))(up.mask.ids)
    np.testing.assert_array_equal(mapped, down.mask.ids)


class _Flicker:
    """Always reports a fresh fragment at a position that alternates between two places."""

    def __init__(self):
        self.calls = 0

    def predict(self, image_patch, memory_patch, spec, direction):
        self.calls += 1
        s = np.zeros(spec.size)
        z = 2 if self.calls % 2 else spec.size[2] - 3
        s[:, :, z] = 1
        s[memory_patch.astype(bool)] = 0
        return Prediction(s, 3.0, 1.0)


def test_oscillation_forces_midpoint_and_terminates():
    image = VoxelGrid(np.zeros((32, 32, 96), np.float32))
    cfg = TraversalConfig(patch_size=(32, 32, 32), v_min=20, max_iter_per_vertebra=4)
    result = run(image, _Flicker(), cfg)
    cap = len(sliding_positions(image.dims, cfg.patch_size, cfg.step)) + 25 * 4
    assert result.iterations <= cap
    assert any(r.forced_midpoint for r in result.records)
    assert all(r.n_iterations <= 5 for r in result.records)


class _Endless:
    """Reports one not-yet-remembered voxel next to the patch centre for as long as any is left."""

    def predict(self, image_patch, memory_patch, spec, direction):
        s = np.zeros(spec.size)
        c = np.asarray(spec.size) // 2
        block = memory_patch[c[0] - 1:c[0] + 2, c[1] - 1:c[1] + 2, c[2] - 1:c[2] + 2]
        free = np.argwhere(block == 0)
        if len(free):
            s[tuple(free[0] + c - 1)] = 1
        return Prediction(s, 1.0, 1.0)


def test_hard_cap_returns_diagnostic():
    image = VoxelGrid(np.zeros((32, 32, 64), np.float32))
    cfg = TraversalConfig(patch_size=(32, 32, 32), v_min=1, max_iter_per_vertebra=3)
    result = run(image, _Endless(), cfg)
    cap = len(sliding_positions(image.dims, cfg.patch_size, cfg.step)) + 25 * 3
    assert result.iterations == cap
    assert "cap" in result.diagnostic


@pytest.mark.parametrize("seed", range(5))
def test_noise_volumes_terminate(seed):
    rng = np.random.default_rng(seed)
    image = VoxelGrid(rng.normal(size=(40, 40, 40)).astype(np.float32))

    class Noise:
        def predict(self, image_patch, memory_patch, spec, direction):
            return Prediction((image_patch > 1.0).astype(float), 5.0, 0.7)

    cfg = TraversalConfig(patch_size=(16, 16, 16), v_min=50)
    result = run(image, Noise(), cfg)
    cap = len(sliding_positions(image.dims, cfg.patch_size, cfg.step)) + 25 * 10
    assert result.iterations <= cap
    mem = [e["memory_voxels"] for e in result.trace]
    assert all(b >= a for a, b in zip(mem, mem[1:]))


def test_trace_jsonl(tmp_path):
    _, result = _oracle_run({}, oracle_phantom_config(3, "none", seed=1))
    path = tmp_path / "trace.jsonl"
    write_trace(result.trace, path)
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(rows) == result.iterations
    assert {"t", "x", "v_t", "phase", "converged", "forced_midpoint"} <= rows[0].keys()
    assert sum(r["converged"] for r in rows) == 3


@pytest.mark.parametrize("kwargs", [{"v_min": 0}, {"delta_max": -1},
                                    {"max_iter_per_vertebra": 1}, {"step": (0, 1, 1)},
                                    {"direction": "sideways"}])
def test_invalid_traversal_config(kwargs):
    with pytest.raises(ValueError):
        TraversalConfig(**kwargs)
