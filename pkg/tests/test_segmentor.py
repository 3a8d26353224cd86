import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iterseg.network import SegmentorConfig, TinyFCN
from iterseg.phantom import PhantomConfig, generate
from iterseg.segmentor import NetworkSegmentor, OracleSegmentor, first_unsegmented
from iterseg.volume import InstanceMask, InstanceRecord, PatchSpec, extract_array


def _column():
    ids = np.zeros((4, 4, 12), np.int32)
    ids[:, :, 1:3] = 1
    ids[:, :, 5:7] = 2
    ids[:, :, 9:11] = 3
    return ids


def test_first_unsegmented_directions():
    ids = _column()
    mem = np.zeros(ids.shape, bool)
    assert first_unsegmented(ids, mem, "up") == 1
    assert first_unsegmented(ids, mem, "down") == 3
    mem |= ids == 1
    assert first_unsegmented(ids, mem, "up") == 2
    mem |= (ids == 2) & (np.arange(4)[:, None, None] < 2)  # exactly half flagged: not in memory
    assert first_unsegmented(ids, mem, "up") == 2
    mem[2, 0, 5] = True
    assert first_unsegmented(ids, mem, "up") == 3
    assert first_unsegmented(ids, np.ones(ids.shape, bool), "up") is None


def test_tie_goes_to_smaller_id():
    ids = np.zeros((4, 1, 4), np.int32)
    ids[:2, 0, 1:3] = 7
    ids[2:, 0, 1:3] = 4
    assert first_unsegmented(ids, np.zeros(ids.shape, bool), "up") == 4
    assert first_unsegmented(ids, np.zeros(ids.shape, bool), "down") == 4


def test_oracle_prediction():
    ids = _column()
    ref = InstanceMask(ids, {1: InstanceRecord(3), 2: InstanceRecord(4),
                             3: InstanceRecord(5, False)})
    seg = OracleSegmentor(ref)
    spec = PatchSpec((2, 2, 8), (4, 4, 8))
    image = np.zeros(spec.size)
    pred = seg.predict(image, np.zeros(spec.size), spec, "up")
    np.testing.assert_array_equal(pred.S, extract_array(ids, spec) == 2)
    assert pred.L == 4.0 and pred.C == 1.0
    pred = seg.predict(image, np.zeros(spec.size), spec, "down")
    assert pred.L == 5.0 and pred.C == 0.0
    with pytest.raises(ValueError):
        seg.predict(image, np.full(spec.size, 0.5), spec, "up")
    with pytest.raises(ValueError):
        seg.predict(image, np.zeros(spec.size), spec, "sideways")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["up", "down"]))
def test_oracle_output_is_one_reference_instance_outside_memory(seed, direction):
    rng = np.random.default_rng(seed)
    _, ref = generate(PhantomConfig(dims=(32, 32, 48), n_instances=4,
                                    instance_half_axes=(6, 5, 3), seed=seed % 100))
    spec = PatchSpec(tuple(rng.integers(0, 48, 3).clip(0, (31, 31, 47))), (16, 16, 16))
    ids = extract_array(ref.ids, spec)
    chosen = [i for i in np.unique(ids) if i and rng.random() < 0.5]
    mem = np.isin(ids, chosen).astype(float)
    seg = OracleSegmentor(ref)
    pred = seg.predict(np.zeros(spec.size), mem, spec, direction)
    out = pred.S.astype(bool)
    if out.any():
        present = np.unique(ids[out])
        assert len(present) == 1 and present[0] not in chosen
        # adding the output to memory moves on to a different instance
        nxt = seg.predict(np.zeros(spec.size), np.maximum(mem, out), spec, direction)
        assert not (nxt.S.astype(bool) & out).any()
    else:
        assert set(np.unique(ids)) - {0} <= set(chosen)


def test_network_segmentor_direction_checked():
    net = TinyFCN(SegmentorConfig(channels=2, depth=1, patch_size=(8, 8, 8), head_width=2))
    seg = NetworkSegmentor(net, "down")
    spec = PatchSpec((4, 4, 4), (8, 8, 8))
    with pytest.raises(ValueError):
        seg.predict(np.zeros((8, 8, 8)), np.zeros((8, 8, 8)), spec, "up")
    pred = seg.predict(np.zeros((8, 8, 8)), np.zeros((8, 8, 8)), spec, "down")
    assert pred.S.shape == (8, 8, 8) and 0 <= pred.C <= 1 and pred.L >= 0
