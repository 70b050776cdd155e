import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from privfan.errors import FormatError, ValidationError
from privfan.quant import (
    Mosaic,
    QuantParams,
    dequantize_group,
    grid_shape,
    quantize_group,
    quantize_values,
    round_half_away,
    tile,
    untile,
)
from privfan.tensor import FeatureTensor


def bound(params, deq):
    # half a code step plus float32 rounding of the dequantized value
    return (params.max - params.min) / 510 + np.spacing(np.abs(deq).astype(np.float32)).astype(np.float64)


def test_round_half_away():
    assert round_half_away([0.5, 1.5, 2.5, -0.5, -2.5, 0.49]).tolist() == [1, 2, 3, -1, -3, 0]


def test_codes_hit_both_ends(rng):
    t = FeatureTensor(rng.standard_normal((4, 8, 8)).astype(np.float32))
    codes, p = quantize_group(t, [0, 2, 3])
    assert codes.dtype == np.uint8 and codes.shape == (3, 8, 8)
    assert codes.min() == 0 and codes.max() == 255
    assert p.min == t.data[[0, 2, 3]].min() and p.max == t.data[[0, 2, 3]].max()


def test_constant_group():
    t = FeatureTensor(np.full((2, 3, 3), 1.25, np.float32))
    codes, p = quantize_group(t, [0, 1])
    assert not codes.any()
    assert np.all(dequantize_group(codes, p) == np.float32(1.25))


def test_bad_indices(rng):
    t = FeatureTensor(rng.standard_normal((3, 2, 2)).astype(np.float32))
    with pytest.raises(ValueError):
        quantize_group(t, [])
    with pytest.raises(ValidationError):
        quantize_group(t, [1, 1])
    with pytest.raises(IndexError):
        quantize_group(t, [3])


def test_quant_params_validation():
    with pytest.raises(ValidationError):
        QuantParams(1.0, 0.0)
    with pytest.raises(ValidationError):
        QuantParams(0.0, float("nan"))
    with pytest.raises(ValidationError):
        QuantParams(0.0, 1.0, bits=4)


def test_per_channel_mode(rng):
    data = rng.standard_normal((3, 5, 5)).astype(np.float32)
    data[1] *= 100
    t = FeatureTensor(data)
    codes, params = quantize_group(t, [0, 1, 2], per_channel=True)
    assert len(params) == 3
    deq = dequantize_group(codes, params)
    for c in range(3):
        assert np.all(np.abs(deq[c] - data[c]) <= bound(params[c], deq[c]))


@settings(max_examples=200, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 5), st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(-1e4, 1e4, allow_nan=False, width=32)))
def test_error_bound_property(data):
    t = FeatureTensor(data)
    codes, p = quantize_group(t, range(t.channels))
    deq = dequantize_group(codes, p)
    assert np.all(np.abs(deq.astype(np.float64) - data) <= bound(p, deq))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=50))
def test_quantization_monotone(values):
    v = np.sort(np.asarray(values))
    p = QuantParams(float(np.float32(v.min())), float(np.float32(v.max())))
    codes = quantize_values(np.clip(v, p.min, p.max), p)
    assert np.all(np.diff(codes.astype(int)) >= 0)


@pytest.mark.parametrize("n, expected", [(1, (1, 1)), (2, (1, 2)), (3, (2, 2)), (4, (2, 2)), (5, (2, 3)),
                                         (10, (3, 4)), (16, (4, 4)), (179, (13, 14)), (256, (16, 16))])
def test_grid_shape(n, expected):
    assert grid_shape(n) == expected


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 40), st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**32 - 1))
def test_tile_untile_roundtrip(n, h, w, seed):
    codes = np.random.default_rng(seed).integers(0, 256, (n, h, w), dtype=np.uint8)
    m = tile(codes)
    rows, cols = grid_shape(n)
    assert m.shape == (rows * h, cols * w)
    assert np.array_equal(untile(m), codes)
    # padding tiles are zero
    assert m.pixels.sum() == codes.astype(np.int64).sum()


def test_tile_layout_row_major():
    codes = np.stack([np.full((2, 3), k, np.uint8) for k in range(5)])
    m = tile(codes)
    assert (m.grid_rows, m.grid_cols) == (2, 3)
    assert m.pixels[0, 0] == 0 and m.pixels[0, 3] == 1 and m.pixels[0, 6] == 2 and m.pixels[2, 0] == 3
    assert m.pixels[2, 6] == 0  # padding


def test_tile_errors():
    with pytest.raises(ValueError):
        tile(np.zeros((0, 2, 2), np.uint8))
    with pytest.raises(FormatError):
        Mosaic(2, 2, 3, 3, np.zeros((6, 5), np.uint8), 4)
    bad = Mosaic(2, 2, 1, 1, np.zeros((2, 2), np.uint8), 1)
    with pytest.raises(FormatError):
        untile(bad)
