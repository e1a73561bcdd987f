import numpy as np
import pytest

from visadesk.core.errors import PgmFormatError
from visadesk.services.imagefeat import (
    N_FEATURES,
    PageImage,
    decode_pgm,
    encode_pgm,
    image_features,
    load_pgm,
)


def _page(pixels) -> PageImage:
    a = np.asarray(pixels, dtype=np.uint8)
    return PageImage(a.shape[1], a.shape[0], a)


def test_decode_p2():
    img = decode_pgm(b"P2\n2 2\n255\n0 0 255 255\n")
    assert (img.width, img.height) == (2, 2)
    assert img.pixels.ravel().tolist() == [0, 0, 255, 255]


def test_decode_p2_with_comments_and_maxval_rescale():
    img = decode_pgm(b"P2\n# scanner\n2 1\n# max\n15\n0 15\n")
    assert img.pixels.ravel().tolist() == [0, 255]


def test_decode_p5_matches_encode():
    a = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20
    img = decode_pgm(encode_pgm(_page(a)))
    assert np.array_equal(img.pixels, a)


@pytest.mark.parametrize(
    "data",
    [
        b"P6\n2 2\n255\n" + bytes(12),
        b"P2\n2 2\n255\n0 0 255\n",
        b"P5\n2 2\n255\n" + bytes(3),
        b"P2\n2\n",
        b"P2\n2 2\n300\n0 0 0 0\n",
        b"P2\n2 x\n255\n0 0 0 0\n",
    ],
)
def test_decode_rejects_bad_files(data):
    with pytest.raises(PgmFormatError):
        decode_pgm(data)


def test_uniform_pages():
    white = image_features(_page(np.full((64, 48), 255)))
    black = image_features(_page(np.zeros((64, 48))))
    assert white.shape == (N_FEATURES,)
    assert np.all(white == 1.0)
    assert np.all(black == 0.0)


def test_half_and_half():
    a = np.zeros((64, 64))
    a[:32] = 255
    f = image_features(_page(a))
    assert np.all(f[:512] == 1.0)
    assert np.all(f[512:] == 0.0)


def test_features_stay_in_unit_range():
    rng = np.random.default_rng(3)
    f = image_features(_page(rng.integers(0, 256, size=(97, 61))))
    assert f.min() >= 0.0 and f.max() <= 1.0


def test_small_image_fills_empty_cells():
    f = image_features(_page([[0, 255], [255, 0]]))
    assert f.shape == (N_FEATURES,)
    assert set(np.unique(f).tolist()) <= {0.0, 1.0}
    assert f[0] == 0.0


def test_scale_invariance_on_grid_multiples():
    rng = np.random.default_rng(11)
    base = rng.integers(0, 256, size=(32, 32))
    big = np.kron(base, np.ones((3, 2), dtype=np.int64))  # 96 x 64
    assert np.allclose(image_features(_page(base)), image_features(_page(big)), atol=1e-12)


def test_brightening_never_decreases_features():
    rng = np.random.default_rng(19)
    for _ in range(50):
        h, w = (int(n) for n in rng.integers(1, 120, size=2))
        base = rng.integers(0, 256, size=(h, w))
        k = int(rng.integers(1, 80))
        f0 = image_features(_page(base))
        f1 = image_features(_page(np.minimum(base + k, 255)))
        assert np.all(f1 >= f0)


def test_load_pgm(tmp_path):
    p = tmp_path / "page-01.pgm"
    p.write_bytes(b"P2\n1 1\n255\n128\n")
    assert load_pgm(p).pixels.tolist() == [[128]]
