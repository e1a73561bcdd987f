# visadesk/services/imagefeat.py
"""Page images (PGM) and the frozen page featurizer.

The featurizer is a 32x32 grid of box means: cell boundaries sit at
floor(k*H/32) and floor(k*W/32), each feature is the cell mean / 255,
row-major. It plays the role of a frozen feature extractor; only the linear
head on top of it is trained.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from visadesk.core.errors import PgmFormatError
from visadesk.utils.files import sha256_hex

GRID = 32
N_FEATURES = GRID * GRID
FEATURIZER_VERSION = "grid32-boxmean-v1"

DenseFeatures = NDArray[np.float64]

_HEADER_TOKEN = re.compile(rb"\S+")


@dataclass(frozen=True, eq=False)
class PageImage:
    width: int
    height: int
    pixels: NDArray[np.uint8]  # shape (height, width), row-major

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise PgmFormatError(f"invalid image size {self.width}x{self.height}")
        px = np.asarray(self.pixels)
        if px.size != self.width * self.height:
            raise PgmFormatError(
                f"pixel count {px.size} != {self.width}x{self.height}"
            )
        if px.dtype != np.uint8:
            if px.size and (px.min() < 0 or px.max() > 255):
                raise PgmFormatError("pixel intensities must lie in [0, 255]")
            px = px.astype(np.uint8)
        px = px.reshape(self.height, self.width)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)


def featurizer_hash() -> str:
    return sha256_hex(FEATURIZER_VERSION)


# ---- PGM ----
def _read_header(data: bytes) -> tuple[bytes, list[int], int]:
    """Return (magic, [width, height, maxval], offset just past the header)."""
    if len(data) < 2:
        raise PgmFormatError("malformed header: file too short")
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise PgmFormatError(f"unsupported format {magic!r} (expected P2 or P5)")
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        # espaces + commentaires entre les champs
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise PgmFormatError("malformed header: missing width/height/maxval")
        if data[pos : pos + 1] == b"#":
            nl = data.find(b"\n", pos)
            pos = len(data) if nl < 0 else nl + 1
            continue
        m = _HEADER_TOKEN.match(data, pos)
        token = m.group(0)
        if not token.isdigit():
            raise PgmFormatError(f"malformed header field {token!r}")
        fields.append(int(token))
        pos = m.end()
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        if magic == b"P5" or pos < len(data):
            raise PgmFormatError("malformed header: no whitespace after maxval")
    return magic, fields, pos + 1


def decode_pgm(data: bytes) -> PageImage:
    magic, (width, height, maxval), offset = _read_header(data)
    if width < 1 or height < 1:
        raise PgmFormatError(f"malformed header: size {width}x{height}")
    if maxval < 1 or maxval > 255:
        raise PgmFormatError(f"unsupported maxval {maxval} (must be 1..255)")
    n = width * height
    if magic == b"P5":
        payload = data[offset : offset + n]
        if len(payload) < n:
            raise PgmFormatError(f"truncated payload: {len(payload)} of {n} pixels")
        values = np.frombuffer(payload, dtype=np.uint8).astype(np.int64)
    else:
        tokens = data[offset:].split()
        if len(tokens) < n:
            raise PgmFormatError(f"truncated payload: {len(tokens)} of {n} pixels")
        try:
            values = np.array([int(t) for t in tokens[:n]], dtype=np.int64)
        except ValueError as e:
            raise PgmFormatError(f"malformed pixel value: {e}") from e
    if values.size and (values.min() < 0 or values.max() > maxval):
        raise PgmFormatError(f"pixel value outside [0, {maxval}]")
    if maxval != 255:
        values = np.rint(values * (255.0 / maxval)).astype(np.int64)
    return PageImage(width, height, values.astype(np.uint8).reshape(height, width))


def encode_pgm(img: PageImage) -> bytes:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels.tobytes(order="C")


def load_pgm(path: Path) -> PageImage:
    return decode_pgm(Path(path).read_bytes())


# ---- Features ----
def _bounds(size: int) -> NDArray[np.int64]:
    return (np.arange(GRID + 1, dtype=np.int64) * size) // GRID


def image_features(img: PageImage) -> DenseFeatures:
    rb = _bounds(img.height)
    cb = _bounds(img.width)

    # image intégrale: somme d'une cellule en 4 lectures
    integral = np.zeros((img.height + 1, img.width + 1), dtype=np.float64)
    integral[1:, 1:] = np.cumsum(np.cumsum(img.pixels, axis=0, dtype=np.float64), axis=1)

    r0, r1 = rb[:-1, None], rb[1:, None]
    c0, c1 = cb[None, :-1], cb[None, 1:]
    sums = integral[r1, c1] - integral[r0, c1] - integral[r1, c0] + integral[r0, c0]
    counts = (r1 - r0) * (c1 - c0)

    sums = sums.ravel()
    counts = counts.ravel()
    valid = counts > 0
    means = np.zeros(N_FEATURES, dtype=np.float64)
    means[valid] = sums[valid] / counts[valid] / 255.0

    if not valid.all():
        # cellule vide (image < 32 px): on recopie la cellule non vide précédente
        # dans l'ordre de balayage, ou la première non vide s'il n'y en a pas
        src = np.where(valid, np.arange(N_FEATURES), 0)
        src = np.maximum.accumulate(src)
        first = int(np.argmax(valid))
        src[:first] = first
        means = means[src]
    return np.clip(means, 0.0, 1.0)
