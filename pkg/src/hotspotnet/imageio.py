"""Binary PPM (P6) / PGM (P5) codec, bit-exact at 8-bit depth, plus box
outline drawing for annotated output images."""

from __future__ import annotations

import numpy as np

from .ops import FLOAT
from .postprocess import Detection


class ImageDecodeError(ValueError):
    pass


def _read_header_token(data: bytes, pos: int) -> tuple[bytes, int]:
    # skip whitespace and '#' comments, then collect one token
    n = len(data)
    while pos < n:
        ch = data[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            while pos < n and data[pos:pos + 1] != b"\n":
                pos += 1
        else:
            break
    if pos >= n:
        raise ImageDecodeError("malformed header: unexpected end of file")
    start = pos
    while pos < n and not data[pos:pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def decode_pnm(data: bytes) -> np.ndarray:
    """Decodes P6/P5 bytes to a float32 (H, W, 3) array in [0, 1].

    Grayscale (P5) is replicated to three channels.  Only maxval 255 is
    supported; malformed headers, unsupported maxvals, and truncated payloads
    each raise a distinct diagnostic.
    """
    magic = data[:2]
    if magic not in (b"P6", b"P5"):
        raise ImageDecodeError(
            f"malformed header: expected P6 or P5 magic, got {magic!r}")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_header_token(data, pos)
        if not tok.isdigit():
            raise ImageDecodeError(f"malformed header: non-numeric field {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ImageDecodeError(f"malformed header: bad dimensions {width}x{height}")
    if maxval != 255:
        raise ImageDecodeError(f"unsupported maxval {maxval}: only 8-bit depth (255)")
    pos += 1  # single whitespace byte after maxval
    channels = 3 if magic == b"P6" else 1
    expected = width * height * channels
    payload = data[pos:pos + expected]
    if len(payload) != expected:
        raise ImageDecodeError(
            f"truncated payload: expected {expected} bytes, got {len(payload)}")
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    pixels = raw.astype(FLOAT) / FLOAT(255.0)
    if channels == 1:
        pixels = np.repeat(pixels, 3, axis=2)
    return pixels


def load_image(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    try:
        return decode_pnm(data)
    except ImageDecodeError as exc:
        raise ImageDecodeError(f"{path}: {exc}") from None


def encode_ppm(pixels: np.ndarray) -> bytes:
    """Encodes float [0,1] (H, W, 3) or uint8 pixels as canonical binary P6."""
    arr = _to_u8(pixels, 3)
    h, w, _ = arr.shape
    return b"P6\n%d %d\n255\n" % (w, h) + arr.tobytes()


def encode_pgm(pixels: np.ndarray) -> bytes:
    """Encodes a single-channel float [0,1] (H, W) image as binary P5."""
    arr = _to_u8(pixels[..., None] if pixels.ndim == 2 else pixels, 1)
    h, w, _ = arr.shape
    return b"P5\n%d %d\n255\n" % (w, h) + arr[..., 0].tobytes()


def _to_u8(pixels: np.ndarray, channels: int) -> np.ndarray:
    if pixels.dtype == np.uint8:
        arr = pixels
    else:
        arr = np.rint(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    if arr.ndim != 3 or arr.shape[2] != channels:
        raise ValueError(f"expected (H,W,{channels}) pixels, got shape {pixels.shape}")
    return arr


def save_ppm(path: str, pixels: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(encode_ppm(pixels))


def save_pgm(path: str, pixels: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(encode_pgm(pixels))


# outline colors by confidence band: low / medium / high
CONFIDENCE_BANDS = (
    (0.8, (255, 48, 48)),
    (0.5, (255, 200, 0)),
    (0.0, (80, 160, 255)),
)


def band_color(confidence: float) -> tuple[int, int, int]:
    for lo, color in CONFIDENCE_BANDS:
        if confidence >= lo:
            return color
    return CONFIDENCE_BANDS[-1][1]


def draw_detections(pixels: np.ndarray, dets: list[Detection],
                    thickness: int = 2) -> np.ndarray:
    """Returns a copy of the image with axis-aligned box outlines drawn.

    Pixels outside the outlines are untouched.  Outline color encodes the
    detection's confidence band; no text is rasterized.
    """
    out = _to_u8(pixels, 3).copy()
    h, w, _ = out.shape
    for det in dets:
        x1, y1, x2, y2 = det.corners()
        c0 = max(int(round(x1 * w)), 0)
        r0 = max(int(round(y1 * h)), 0)
        c1 = min(int(round(x2 * w)), w - 1)
        r1 = min(int(round(y2 * h)), h - 1)
        if c1 <= c0 or r1 <= r0:
            continue
        color = np.array(band_color(det.confidence), dtype=np.uint8)
        t = thickness
        out[r0:min(r0 + t, r1 + 1), c0:c1 + 1] = color
        out[max(r1 - t + 1, r0):r1 + 1, c0:c1 + 1] = color
        out[r0:r1 + 1, c0:min(c0 + t, c1 + 1)] = color
        out[r0:r1 + 1, max(c1 - t + 1, c0):c1 + 1] = color
    return out
