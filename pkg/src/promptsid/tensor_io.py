"""Image containers, the seeded generator, file codecs and patch cropping.

Images are plain ``numpy`` arrays of shape ``(h, w, c)`` (row-major,
channel-last) with nominal range ``[0, 1]``.  Noise may push values outside
that range; nothing here clamps except the 8-bit PNG writer.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

PSID_MAGIC = b"PSID"
_PSID_HEADER = struct.Struct("<4sIII")


class ImageFormatError(ValueError):
    """Raised for unreadable or unsupported image files."""


class Rng:
    """Seeded pseudorandom source backed by numpy's PCG64 bit generator.

    PCG64 (O'Neill's permuted congruential generator, 128-bit state, XSL-RR
    output) is seeded through ``numpy.random.SeedSequence`` so the raw 64-bit
    stream is identical on every platform for a given seed.  Derived streams
    come from :meth:`spawn`, which hashes ``(seed, *keys)`` instead of
    advancing this instance.

    Not thread-safe: give each worker its own instance.
    """

    def __init__(self, seed: int | tuple[int, ...]):
        self.seed = seed
        entropy = list(seed) if isinstance(seed, tuple) else int(seed)
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def spawn(self, *keys: int) -> "Rng":
        base = self.seed if isinstance(self.seed, tuple) else (int(self.seed),)
        return Rng(base + tuple(int(k) for k in keys))

    def next_u64(self, n: int | None = None):
        """Raw 64-bit outputs of the underlying generator."""
        return self._gen.bit_generator.random_raw(n)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size=size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size=size)

    def poisson(self, lam, size=None):
        return self._gen.poisson(lam, size=size)


def as_image(arr) -> np.ndarray:
    """Validate and return ``arr`` as an ``(h, w, c)`` float array."""
    a = np.asarray(arr)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3:
        raise ValueError(f"image must be (h, w, c), got shape {a.shape}")
    if not np.issubdtype(a.dtype, np.floating):
        a = a.astype(np.float64)
    return a


def encode_psid(img) -> bytes:
    img = as_image(img)
    h, w, c = img.shape
    body = np.ascontiguousarray(img, dtype="<f4").tobytes()
    return _PSID_HEADER.pack(PSID_MAGIC, h, w, c) + body


def decode_psid(blob: bytes) -> np.ndarray:
    if len(blob) < _PSID_HEADER.size:
        raise ImageFormatError("PSID file truncated in header")
    magic, h, w, c = _PSID_HEADER.unpack_from(blob)
    if magic != PSID_MAGIC:
        raise ImageFormatError(f"bad PSID magic {magic!r}")
    expected = h * w * c * 4
    payload = blob[_PSID_HEADER.size:]
    if len(payload) != expected:
        raise ImageFormatError(
            f"PSID payload is {len(payload)} bytes, header {h}x{w}x{c} needs {expected}")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w, c).astype(np.float32)


def quantize_8bit(img) -> np.ndarray:
    """Round-half-up of ``clamp(v, 0, 1) * 255`` to uint8."""
    v = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(v + 0.5).astype(np.uint8)


def load_image(path) -> np.ndarray:
    """Read a PNG (8-bit gray/RGB) or PSID file.

    PNG data comes back as float64 ``v / 255``; PSID data as float32 with the
    stored bit patterns untouched.
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise ImageFormatError(f"cannot read {path}: {exc}") from exc
    if blob[:4] == PSID_MAGIC:
        return decode_psid(blob)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode not in ("L", "RGB"):
                raise ImageFormatError(
                    f"{path}: unsupported image mode {mode!r}; need 8-bit gray (L) or RGB")
            if im.format != "PNG":
                raise ImageFormatError(f"{path}: unsupported format {im.format}")
            data = np.asarray(im, dtype=np.uint8)
    except ImageFormatError:
        raise
    except Exception as exc:
        raise ImageFormatError(f"cannot decode {path}: {exc}") from exc
    return as_image(data.astype(np.float64) / 255.0)


def save_image(img, path) -> None:
    """Write ``img`` as PNG (8-bit) or PSID (lossless f32), chosen by suffix."""
    img = as_image(img)
    path = Path(path)
    if path.suffix.lower() == ".psid":
        path.write_bytes(encode_psid(img))
        return
    if img.shape[2] not in (1, 3):
        raise ValueError(f"PNG needs 1 or 3 channels, got {img.shape[2]}")
    q = quantize_8bit(img)
    im = Image.fromarray(q[:, :, 0] if q.shape[2] == 1 else q)
    im.save(path, format="PNG")


def crop_patch(img, size: int, rng: Rng) -> np.ndarray:
    """Square crop at a uniformly drawn even (row, col) offset."""
    img = as_image(img)
    h, w, _ = img.shape
    if size % 2 or size <= 0:
        raise ValueError(f"patch size must be a positive even number, got {size}")
    if size > min(h, w):
        raise ValueError(f"patch size {size} exceeds image extent {h}x{w}")
    oy = 2 * int(rng.integers(0, (h - size) // 2 + 1))
    ox = 2 * int(rng.integers(0, (w - size) // 2 + 1))
    return img[oy:oy + size, ox:ox + size].copy()
