import numpy as np

from splatfill.images import (decode_depth_png, decode_rgb_png,
                              encode_depth_png, encode_rgb_png)


def test_rgb_round_trip_quantizes_to_8_bit():
    rng = np.random.default_rng(1)
    img = rng.random((17, 23, 3))
    back = decode_rgb_png(encode_rgb_png(img))
    assert back.shape == img.shape
    assert np.abs(back - np.round(img * 255) / 255).max() < 1e-12
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12


def test_rgb_exact_at_representable_values():
    img = np.zeros((4, 4, 3))
    img[0] = 1.0
    img[1] = 128 / 255
    back = decode_rgb_png(encode_rgb_png(img))
    assert np.array_equal(back, img)


def test_rgb_encoding_clips_out_of_range():
    img = np.array([[[-0.5, 0.5, 1.5]]])
    back = decode_rgb_png(encode_rgb_png(img))
    assert np.allclose(back[0, 0], [0.0, 0.5, 1.0], atol=1 / 255)


def test_depth_round_trip_is_16_bit():
    rng = np.random.default_rng(2)
    depth = rng.random((12, 9)) * 4.0
    back = decode_depth_png(encode_depth_png(depth, 5.0), 5.0)
    assert back.shape == depth.shape
    assert np.abs(back - depth).max() <= 0.5 * 5.0 / 65535 + 1e-12


def test_depth_clips_beyond_far():
    depth = np.array([[10.0, 0.0]])
    back = decode_depth_png(encode_depth_png(depth, 2.0), 2.0)
    assert np.allclose(back, [[2.0, 0.0]])


def test_encoding_is_deterministic():
    rng = np.random.default_rng(3)
    img = rng.random((8, 8, 3))
    assert encode_rgb_png(img) == encode_rgb_png(img)
    d = rng.random((8, 8))
    assert encode_depth_png(d, 1.0) == encode_depth_png(d, 1.0)
