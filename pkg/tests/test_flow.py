import struct

import numpy as np
import pytest

from promotion.errors import DataError
from promotion.flow import (FLO_MAGIC, FlowField, attention_map,
                            estimate_flow_coarse, flow_to_color,
                            make_colorwheel, read_flo, write_flo)


def _uniform(h, w, u, v):
    return FlowField(np.full((h, w), float(u)), np.full((h, w), float(v)))


def _two_level(h, w, u, v, box):
    """Zero flow with a (u, v) rectangle at rows/cols box = (r0,r1,c0,c1)."""
    uu = np.zeros((h, w))
    vv = np.zeros((h, w))
    r0, r1, c0, c1 = box
    uu[r0:r1, c0:c1] = u
    vv[r0:r1, c0:c1] = v
    return FlowField(uu, vv)


# ------------------------------------------------------------------ types

def test_flow_field_validation():
    with pytest.raises(DataError, match="matching 2D"):
        FlowField(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(DataError, match="matching 2D"):
        FlowField(np.zeros(4), np.zeros(4))
    with pytest.raises(DataError, match="non-finite"):
        FlowField(np.full((2, 2), np.nan), np.zeros((2, 2)))
    f = _uniform(2, 2, 3.0, 4.0)
    assert np.array_equal(f.magnitude(), np.full((2, 2), 5.0))


# ------------------------------------------------------------------- .flo

def test_flo_round_trip_exact(tmp_path):
    u = np.array([[0.0, 1.0, -2.5], [0.25, 100.0, -0.125]])
    v = np.array([[3.0, -4.0, 0.5], [7.75, -100.0, 0.0]])
    path = tmp_path / "field.flo"
    write_flo(path, FlowField(u, v))
    back = read_flo(path)
    assert np.array_equal(back.u, u)
    assert np.array_equal(back.v, v)
    raw = path.read_bytes()
    assert raw[:4] == struct.pack("<f", FLO_MAGIC)
    assert struct.unpack("<ii", raw[4:12]) == (3, 2)  # width, height


def test_flo_write_is_deterministic(tmp_path):
    f = _uniform(4, 6, 1.5, -2.0)
    write_flo(tmp_path / "a.flo", f)
    write_flo(tmp_path / "b.flo", f)
    assert (tmp_path / "a.flo").read_bytes() == (tmp_path / "b.flo").read_bytes()


def test_read_flo_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.flo"
    path.write_bytes(struct.pack("<fii", 123.0, 2, 2) + b"\0" * 32)
    with pytest.raises(DataError, match="bad magic"):
        read_flo(path)


def test_read_flo_rejects_bad_dims(tmp_path):
    path = tmp_path / "bad.flo"
    path.write_bytes(struct.pack("<fii", FLO_MAGIC, -1, 2))
    with pytest.raises(DataError, match="invalid dimensions"):
        read_flo(path)


def test_read_flo_rejects_truncation(tmp_path):
    short = tmp_path / "short.flo"
    short.write_bytes(struct.pack("<f", FLO_MAGIC))
    with pytest.raises(DataError, match="truncated header"):
        read_flo(short)
    partial = tmp_path / "partial.flo"
    partial.write_bytes(struct.pack("<fii", FLO_MAGIC, 4, 4) + b"\0" * 10)
    with pytest.raises(DataError, match="truncated payload"):
        read_flo(partial)
    with pytest.raises(DataError, match="not found"):
        read_flo(tmp_path / "absent.flo")


# ------------------------------------------------------------ color wheel

def test_colorwheel_layout():
    wheel = make_colorwheel()
    assert wheel.shape == (55, 3)
    assert wheel.min() >= 0.0 and wheel.max() <= 1.0
    # every entry is fully saturated toward at least one channel
    assert np.array_equal(wheel.max(axis=1), np.ones(55))
    # arc starts: red, yellow, green, blue, magenta
    assert wheel[0].tolist() == [1.0, 0.0, 0.0]
    assert wheel[15].tolist() == [1.0, 1.0, 0.0]
    assert wheel[21].tolist() == [0.0, 1.0, 0.0]
    assert wheel[36].tolist() == [0.0, 0.0, 1.0]
    assert wheel[49].tolist() == [1.0, 0.0, 1.0]
    # ramps quantize through 8-bit
    assert wheel[1, 1] == np.floor(255.0 / 15.0) / 255.0


def test_flow_to_color_zero_is_white():
    img = flow_to_color(_uniform(5, 7, 0.0, 0.0))
    assert img.shape == (5, 7, 3)
    assert np.array_equal(img, np.ones((5, 7, 3)))


def test_flow_to_color_saturates_at_peak_magnitude():
    wheel = make_colorwheel()
    img = flow_to_color(_uniform(3, 3, 1.0, 0.0))
    # rightward motion at the field's peak magnitude renders pure red
    assert np.allclose(img, np.broadcast_to(wheel[0], (3, 3, 3)), atol=1e-12)
    mixed = flow_to_color(_two_level(8, 8, 3.0, -2.0, (2, 5, 3, 7)))
    assert mixed.min() >= 0.0 and mixed.max() <= 1.0


# -------------------------------------------------------------- attention

def test_attention_constant_fields_are_zero():
    assert np.array_equal(attention_map(_uniform(6, 6, 0.0, 0.0)),
                          np.zeros((6, 6)))
    # nothing moves relative to anything: still an all-zero map
    assert np.array_equal(attention_map(_uniform(6, 6, 2.0, 1.0)),
                          np.zeros((6, 6)))


def test_attention_two_level_is_exact_indicator():
    box = (2, 6, 3, 9)
    att = attention_map(_two_level(10, 12, 4.0, 1.0, box))
    inside = np.zeros((10, 12), dtype=bool)
    inside[box[0]:box[1], box[2]:box[3]] = True
    assert np.array_equal(att[inside], np.ones(inside.sum()))
    assert np.array_equal(att[~inside], np.zeros((~inside).sum()))


def test_attention_scale_invariance():
    rng = np.random.default_rng(8)
    f = FlowField(rng.uniform(-3, 3, (9, 9)), rng.uniform(-3, 3, (9, 9)))
    base = attention_map(f)
    assert base.min() == 0.0 and base.max() == 1.0
    doubled = attention_map(FlowField(2.0 * f.u, 2.0 * f.v))
    assert np.array_equal(doubled, base)
    tripled = attention_map(FlowField(3.0 * f.u, 3.0 * f.v))
    assert np.abs(tripled - base).max() < 1e-12


# -------------------------------------------------------------- estimator

def test_block_matching_recovers_integer_shift():
    rng = np.random.default_rng(5)
    base = rng.uniform(0, 1, (32, 32))
    for _ in range(2):
        base = 0.5 * base + 0.25 * np.roll(base, 1, 0) + 0.25 * np.roll(base, 1, 1)
    dy, dx = -3, 2
    moved = np.roll(base, (dy, dx), axis=(0, 1))
    field = estimate_flow_coarse(base, moved, block=8, radius=4)
    assert field.shape == (32, 32)
    assert np.array_equal(field.u, np.full((32, 32), float(dx)))
    assert np.array_equal(field.v, np.full((32, 32), float(dy)))


def test_block_matching_identical_frames_zero():
    rng = np.random.default_rng(6)
    img = rng.uniform(0, 1, (16, 16))
    field = estimate_flow_coarse(img, img.copy(), block=4, radius=3)
    assert np.array_equal(field.u, np.zeros((16, 16)))
    assert np.array_equal(field.v, np.zeros((16, 16)))
    # flat frames tie everywhere; smallest displacement wins
    flat = np.full((16, 16), 0.5)
    field = estimate_flow_coarse(flat, flat, block=4, radius=3)
    assert np.array_equal(field.magnitude(), np.zeros((16, 16)))


def test_block_matching_covers_partial_blocks():
    rng = np.random.default_rng(7)
    a = rng.uniform(0, 1, (10, 14))
    field = estimate_flow_coarse(a, a, block=4, radius=2)
    assert field.shape == (10, 14)


def test_block_matching_validation():
    g = np.zeros((8, 8))
    with pytest.raises(DataError, match="block must be >= 4"):
        estimate_flow_coarse(g, g, block=3, radius=2)
    with pytest.raises(DataError, match="radius"):
        estimate_flow_coarse(g, g, block=4, radius=0)
    with pytest.raises(DataError, match="matching"):
        estimate_flow_coarse(g, np.zeros((8, 9)), block=4, radius=2)
