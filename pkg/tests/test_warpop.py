import numpy as np
import pytest

from futureseg.errors import ShapeError
from futureseg.fields import FlowField, InstanceMask
from futureseg.warpop import (
    compose_flows, copy_last, round_half_away, shift_mask, translate, warp_iterated, warp_mask,
)


def uniform(u, v, shape=(16, 16)):
    return FlowField(np.full(shape, u, np.float32), np.full(shape, v, np.float32))


def blob(rng, shape=(16, 16), p=0.5):
    m = np.zeros(shape, bool)
    y0, x0 = rng.integers(1, shape[0] - 5), rng.integers(1, shape[1] - 5)
    m[y0:y0 + 5, x0:x0 + 5] = rng.random((5, 5)) < p + 0.3
    return InstanceMask(1, 1, 0.9, m)


def test_copy_last_identity():
    rng = np.random.default_rng(0)
    inst = blob(rng)
    out = inst
    for _ in range(3):
        out = copy_last(out)
    assert np.array_equal(out.mask, inst.mask)
    empty = InstanceMask(1, 1, 0.5, np.zeros((4, 4)))
    assert not copy_last(empty).mask.any()


def test_round_half_away():
    assert [round_half_away(x) for x in (2.6, 2.5, -2.5, -0.4, 0.5)] == [3, 3, -3, 0, 1]


def test_shift_examples():
    rng = np.random.default_rng(1)
    inst = blob(rng)
    assert np.array_equal(shift_mask(inst, uniform(0, 0)).mask, inst.mask)
    assert np.array_equal(shift_mask(inst, uniform(3, -1)).mask, translate(inst.mask, 3, -1))
    assert np.array_equal(shift_mask(inst, uniform(2.6, 0)).mask, translate(inst.mask, 3, 0))


def test_warp_examples():
    rng = np.random.default_rng(2)
    inst = blob(rng)
    assert np.array_equal(warp_mask(inst, uniform(0, 0)).mask, inst.mask)
    assert np.array_equal(warp_mask(inst, uniform(2, 0)).mask, shift_mask(inst, uniform(2, 0)).mask)
    one = np.zeros((5, 5), bool)
    one[2, 2] = True
    out = warp_mask(InstanceMask(1, 1, 0.5, one), uniform(0.5, 0, (5, 5))).mask
    assert out[2, 2] and out[2, 3] and out.sum() == 2


def test_out_of_frame_dropped():
    m = np.zeros((4, 4), bool)
    m[:, 3] = True
    inst = InstanceMask(1, 1, 0.5, m)
    assert not warp_mask(inst, uniform(1, 0, (4, 4))).mask.any()
    assert not shift_mask(inst, uniform(1, 0, (4, 4))).mask.any()


def test_warp_iterated():
    rng = np.random.default_rng(3)
    inst = InstanceMask(1, 1, 0.5, np.pad(blob(rng, (8, 8)).mask, 12))
    shape = inst.mask.shape
    f = uniform(1.3, -0.7, shape)
    assert np.array_equal(warp_iterated(inst, [f]).mask, warp_mask(inst, f).mask)
    z = uniform(0, 0, shape)
    assert np.array_equal(warp_iterated(inst, [z, z]).mask, inst.mask)
    one = uniform(1, 0, shape)
    assert np.array_equal(warp_iterated(inst, [one] * 3).mask,
                          warp_mask(inst, uniform(3, 0, shape)).mask)
    with pytest.raises(ShapeError):
        warp_iterated(inst, [])


def test_shape_errors():
    inst = InstanceMask(1, 1, 0.5, np.ones((4, 4)))
    with pytest.raises(ShapeError):
        warp_mask(inst, uniform(0, 0, (4, 5)))
    with pytest.raises(ShapeError):
        shift_mask(inst, uniform(0, 0, (5, 4)))


def _random_masks(n, seed):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        m = rng.random((20, 24)) < rng.uniform(0.05, 0.6)
        yield InstanceMask(1, 1, 0.5, m), rng


def test_zero_flow_identity_bit_exact_random():
    z = uniform(0, 0, (20, 24))
    for inst, _ in _random_masks(100, 4):
        assert np.array_equal(warp_mask(inst, z).mask, inst.mask)
        assert np.array_equal(shift_mask(inst, z).mask, inst.mask)


def test_integer_uniform_shift_equals_warp_random():
    for inst, rng in _random_masks(100, 5):
        f = uniform(int(rng.integers(-4, 5)), int(rng.integers(-4, 5)), (20, 24))
        assert np.array_equal(warp_mask(inst, f).mask, shift_mask(inst, f).mask)


def _boundary_length(m):
    p = np.pad(m, 1).astype(int)
    return int(np.abs(np.diff(p, axis=0)).sum() + np.abs(np.diff(p, axis=1)).sum())


def test_mass_bound_random_blobs():
    for inst, rng in _random_masks(60, 6):
        f = uniform(rng.uniform(-3, 3), rng.uniform(-3, 3), (20, 24))
        out = warp_mask(inst, f)
        assert out.area <= inst.area + _boundary_length(inst.mask)


def test_compose_uniform_flows():
    f = compose_flows([uniform(1, 0), uniform(0.5, 2)])
    assert np.allclose(f.u, 1.5) and np.allclose(f.v, 2)
