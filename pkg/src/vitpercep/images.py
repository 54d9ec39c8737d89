"""Raster I/O: PNG (8/16-bit, gray/RGB, non-interlaced) and binary PPM/PGM.

Decodes to (H, W, C) float64 in [0, 1] by dividing by the sample-type
maximum, encodes by the inverse mapping with round-half-away clamping.
The PNG side implements the subset the artifact needs: color types 0 and 2,
bit depths 8 and 16, all five scanline filters on read, filter 0 on write.
Every malformed input maps to ImageDecodeError; nothing here crashes on
arbitrary bytes.
"""

import struct
import zlib

import numpy as np

from .errors import DimensionError, ImageDecodeError

_PNG_SIG = b"\x89PNG\r\n\x1a\n"


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def _unfilter(raw: bytes, height: int, stride: int, bpp: int) -> bytearray:
    if len(raw) != height * (stride + 1):
        raise ImageDecodeError(
            f"decompressed size {len(raw)}, expected {height * (stride + 1)}"
        )
    out = bytearray(height * stride)
    prev_off = -stride
    pos = 0
    for y in range(height):
        ftype = raw[pos]
        pos += 1
        row_off = y * stride
        out[row_off: row_off + stride] = raw[pos: pos + stride]
        pos += stride
        if ftype == 0:
            pass
        elif ftype == 1:
            for i in range(bpp, stride):
                out[row_off + i] = (out[row_off + i] + out[row_off + i - bpp]) & 0xFF
        elif ftype == 2:
            if y > 0:
                for i in range(stride):
                    out[row_off + i] = (out[row_off + i] + out[prev_off + i]) & 0xFF
        elif ftype == 3:
            for i in range(stride):
                left = out[row_off + i - bpp] if i >= bpp else 0
                up = out[prev_off + i] if y > 0 else 0
                out[row_off + i] = (out[row_off + i] + ((left + up) >> 1)) & 0xFF
        elif ftype == 4:
            for i in range(stride):
                left = out[row_off + i - bpp] if i >= bpp else 0
                up = out[prev_off + i] if y > 0 else 0
                ul = out[prev_off + i - bpp] if (y > 0 and i >= bpp) else 0
                out[row_off + i] = (out[row_off + i] + _paeth(left, up, ul)) & 0xFF
        else:
            raise ImageDecodeError(f"unknown PNG filter type {ftype} in row {y}")
        prev_off = row_off
    return out


def _decode_png(blob: bytes) -> np.ndarray:
    pos = len(_PNG_SIG)
    chunks = []
    while pos < len(blob):
        if pos + 8 > len(blob):
            raise ImageDecodeError("truncated PNG chunk header")
        length, ctype = struct.unpack(">I4s", blob[pos: pos + 8])
        data = blob[pos + 8: pos + 8 + length]
        if len(data) != length or pos + 12 + length > len(blob):
            raise ImageDecodeError(f"truncated PNG chunk {ctype!r}")
        crc = struct.unpack(">I", blob[pos + 8 + length: pos + 12 + length])[0]
        if zlib.crc32(ctype + data) != crc:
            raise ImageDecodeError(f"PNG chunk {ctype!r} fails CRC")
        chunks.append((ctype, data))
        pos += 12 + length
        if ctype == b"IEND":
            break
    if not chunks or chunks[0][0] != b"IHDR":
        raise ImageDecodeError("PNG missing IHDR")
    w, h, depth, ctype_code, comp, filt, interlace = struct.unpack(
        ">IIBBBBB", chunks[0][1]
    )
    if comp != 0 or filt != 0:
        raise ImageDecodeError("unsupported PNG compression/filter method")
    if interlace != 0:
        raise ImageDecodeError("interlaced PNG not supported")
    if depth not in (8, 16):
        raise ImageDecodeError(f"unsupported PNG bit depth {depth}")
    if ctype_code not in (0, 2):
        raise ImageDecodeError(f"unsupported PNG color type {ctype_code}")
    if w == 0 or h == 0:
        raise ImageDecodeError("zero-size PNG")
    channels = 1 if ctype_code == 0 else 3
    idat = b"".join(d for t, d in chunks if t == b"IDAT")
    if not idat:
        raise ImageDecodeError("PNG has no IDAT data")
    try:
        raw = zlib.decompress(idat)
    except zlib.error as e:
        raise ImageDecodeError(f"PNG IDAT does not decompress: {e}") from e
    bytes_per_sample = depth // 8
    bpp = channels * bytes_per_sample
    stride = w * bpp
    flat = _unfilter(raw, h, stride, bpp)
    dtype = np.dtype(">u2") if depth == 16 else np.uint8
    arr = np.frombuffer(bytes(flat), dtype=dtype).reshape(h, w, channels)
    maxval = 65535.0 if depth == 16 else 255.0
    return arr.astype(np.float64) / maxval


def _decode_pnm(blob: bytes) -> np.ndarray:
    # P5 = binary graymap, P6 = binary pixmap; header tokens may be separated
    # by whitespace and # comments
    magic = blob[:2]
    channels = 1 if magic == b"P5" else 3
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(blob):
            raise ImageDecodeError("truncated PNM header")
        c = blob[pos: pos + 1]
        if c == b"#":
            while pos < len(blob) and blob[pos: pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        elif c.isdigit():
            start = pos
            while pos < len(blob) and blob[pos: pos + 1].isdigit():
                pos += 1
            fields.append(int(blob[start:pos]))
        else:
            raise ImageDecodeError(f"unexpected byte {c!r} in PNM header")
    if pos >= len(blob) or not blob[pos: pos + 1].isspace():
        raise ImageDecodeError("PNM header not terminated by whitespace")
    pos += 1
    w, h, maxval = fields
    if w <= 0 or h <= 0:
        raise ImageDecodeError(f"bad PNM dimensions {w}x{h}")
    if not 0 < maxval < 65536:
        raise ImageDecodeError(f"bad PNM maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    count = w * h * channels
    need = count * dtype.itemsize
    data = blob[pos: pos + need]
    if len(data) != need:
        raise ImageDecodeError(f"PNM payload has {len(data)} bytes, expected {need}")
    arr = np.frombuffer(data, dtype=dtype).reshape(h, w, channels)
    return arr.astype(np.float64) / float(maxval)


def load_image(path) -> np.ndarray:
    """Decode a PNG/PPM/PGM file to (H, W, C) float64 in [0, 1]."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[: len(_PNG_SIG)] == _PNG_SIG:
        return _decode_png(blob)
    if blob[:2] in (b"P5", b"P6"):
        return _decode_pnm(blob)
    raise ImageDecodeError(f"{path}: not a PNG or binary PPM/PGM file")


def _quantize(arr: np.ndarray, maxval: int) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise DimensionError(f"image must be (H, W, 1|3), got {arr.shape}")
    clipped = np.clip(arr, 0.0, 1.0)
    return np.floor(clipped * maxval + 0.5).astype(np.uint32)


def _png_chunk(ctype: bytes, data: bytes) -> bytes:
    return (
        struct.pack(">I", len(data))
        + ctype
        + data
        + struct.pack(">I", zlib.crc32(ctype + data))
    )


def save_png(path, arr, bitdepth: int = 16) -> None:
    """Write (H, W, 1|3) floats in [0, 1] as a gray/RGB PNG."""
    if bitdepth not in (8, 16):
        raise DimensionError(f"PNG bit depth must be 8 or 16, got {bitdepth}")
    maxval = (1 << bitdepth) - 1
    q = _quantize(arr, maxval)
    h, w, channels = q.shape
    sample_dtype = np.dtype(">u2") if bitdepth == 16 else np.dtype(np.uint8)
    samples = q.astype(sample_dtype).tobytes()
    stride = w * channels * sample_dtype.itemsize
    rows = b"".join(
        b"\x00" + samples[y * stride: (y + 1) * stride] for y in range(h)
    )
    ctype_code = 0 if channels == 1 else 2
    ihdr = struct.pack(">IIBBBBB", w, h, bitdepth, ctype_code, 0, 0, 0)
    with open(path, "wb") as f:
        f.write(_PNG_SIG)
        f.write(_png_chunk(b"IHDR", ihdr))
        f.write(_png_chunk(b"IDAT", zlib.compress(rows, 9)))
        f.write(_png_chunk(b"IEND", b""))


def save_pnm(path, arr, maxval: int = 255) -> None:
    """Write (H, W, 1|3) floats in [0, 1] as binary PGM (1ch) or PPM (3ch)."""
    if not 0 < maxval < 65536:
        raise DimensionError(f"PNM maxval must be in [1, 65535], got {maxval}")
    q = _quantize(arr, maxval)
    h, w, channels = q.shape
    magic = b"P5" if channels == 1 else b"P6"
    dtype = np.dtype(">u2") if maxval > 255 else np.uint8
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n%d\n" % (w, h, maxval))
        f.write(q.astype(dtype).tobytes())


def save_image(path, arr, bitdepth: int = 16) -> None:
    """Dispatch on extension: .png, .ppm (RGB), .pgm (gray)."""
    name = str(path).lower()
    if name.endswith(".png"):
        save_png(path, arr, bitdepth=bitdepth)
    elif name.endswith((".ppm", ".pgm")):
        save_pnm(path, arr, maxval=(1 << bitdepth) - 1)
    else:
        raise DimensionError(f"{path}: unknown image extension (use .png/.ppm/.pgm)")


def center_crop(arr: np.ndarray, size: int) -> np.ndarray:
    """Crop the centered size x size window; refuses to grow the image."""
    h, w = arr.shape[0], arr.shape[1]
    if h < size or w < size:
        raise DimensionError(f"image {h}x{w} smaller than crop size {size}")
    r0 = (h - size) // 2
    c0 = (w - size) // 2
    return np.ascontiguousarray(arr[r0: r0 + size, c0: c0 + size])
