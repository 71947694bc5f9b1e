"""
Image codecs: PFM (portable float map), Radiance RGBE (.hdr) and PNG.

Float maps are returned top-down as (H, W, C) float32 arrays.
"""

import os
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from matplotlib import image as mpimg

from src.utils.errors import InvalidArgumentError, ParseError

PathLike = Union[str, os.PathLike]

RGBE_MIN_RLE_WIDTH = 8
RGBE_MAX_RLE_WIDTH = 0x7FFF


def _next_line(data: bytes, pos: int) -> Tuple[bytes, int]:
    """Return the line starting at `pos` (without newline) and the next position"""
    end = data.find(b"\n", pos)
    if end < 0:
        raise ParseError("unterminated header line", pos)
    return data[pos:end], end + 1


# =============================================================================
# PFM

def read_pfm(path: PathLike) -> np.ndarray:
    """Decode a colour (PF) or greyscale (Pf) PFM file"""
    data = Path(path).read_bytes()

    ident, pos = _next_line(data, 0)
    ident = ident.strip()
    if ident == b"PF":
        channels = 3
    elif ident == b"Pf":
        channels = 1
    else:
        raise ParseError(f"unrecognized PFM identifier {ident[:8]!r}", 0)

    line_start = pos
    dims, pos = _next_line(data, pos)
    tokens = dims.split()
    if len(tokens) != 2:
        raise ParseError(f"could not read PFM dimensions from {dims[:32]!r}", line_start)
    try:
        width, height = int(tokens[0]), int(tokens[1])
    except ValueError:
        raise ParseError(f"non-integer PFM dimensions {dims[:32]!r}", line_start)
    if width <= 0 or height <= 0:
        raise ParseError(f"invalid PFM dimensions {width}x{height}", line_start)

    line_start = pos
    scale_line, pos = _next_line(data, pos)
    try:
        scale = float(scale_line.strip())
    except ValueError:
        raise ParseError(f"invalid PFM scale {scale_line[:32]!r}", line_start)
    if scale == 0.0:
        raise ParseError("PFM scale must be non-zero", line_start)
    dtype = "<f4" if scale < 0 else ">f4"

    count = width * height * channels
    available = len(data) - pos
    if available < count * 4:
        raise ParseError(
            f"truncated PFM payload: expected {count * 4} bytes, found {available}", len(data)
        )
    pixels = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    pixels = pixels.reshape(height, width, channels)[::-1]
    return pixels.astype(np.float32)


def write_pfm(path: PathLike, image: np.ndarray) -> None:
    """Write (H, W), (H, W, 1) or (H, W, 3) floats as a little-endian PFM"""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        image = image[..., None]
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise InvalidArgumentError(f"PFM needs 1 or 3 channels, got shape {image.shape}")

    height, width, channels = image.shape
    ident = "PF" if channels == 3 else "Pf"
    header = f"{ident}\n{width} {height}\n-1.0\n".encode("ascii")
    payload = np.ascontiguousarray(image[::-1]).astype("<f4").tobytes()

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


# =============================================================================
# Radiance RGBE

def rgbe_to_float(rgbe: np.ndarray) -> np.ndarray:
    """Decode RGBE bytes: value = mantissa / 256 * 2^(exponent - 128)"""
    rgbe = np.asarray(rgbe, dtype=np.uint8)
    mantissa = rgbe[..., :3].astype(np.float32)
    exponent = rgbe[..., 3].astype(np.int32)
    rgb = np.ldexp(mantissa, (exponent - 136)[..., None])
    rgb[exponent == 0] = 0.0
    return rgb.astype(np.float32)


def float_to_rgbe(rgb: np.ndarray) -> np.ndarray:
    rgb = np.maximum(np.asarray(rgb, dtype=np.float64), 0.0)
    brightest = rgb.max(axis=-1)
    mant, exp = np.frexp(brightest)
    out = np.zeros(rgb.shape[:-1] + (4,), dtype=np.uint8)
    lit = brightest > 1e-32
    scale = np.where(lit, mant * 256.0 / np.where(lit, brightest, 1.0), 0.0)
    out[..., :3] = np.clip(np.floor(rgb * scale[..., None]), 0, 255).astype(np.uint8)
    out[..., 3] = np.where(lit, exp + 128, 0).astype(np.uint8)
    return out


def _read_rgbe_scanline(data: bytes, pos: int, width: int) -> Tuple[np.ndarray, int]:
    n = len(data)
    new_rle = (
        RGBE_MIN_RLE_WIDTH <= width <= RGBE_MAX_RLE_WIDTH
        and pos + 4 <= n
        and data[pos] == 2
        and data[pos + 1] == 2
        and (data[pos + 2] & 0x80) == 0
    )
    if not new_rle:
        return _read_flat_scanline(data, pos, width)

    line_width = (data[pos + 2] << 8) | data[pos + 3]
    if line_width != width:
        raise ParseError(f"scanline width {line_width} does not match image width {width}", pos)
    pos += 4

    scan = np.empty((4, width), dtype=np.uint8)
    for channel in range(4):
        x = 0
        while x < width:
            if pos >= n:
                raise ParseError("truncated RLE scanline", pos)
            count = data[pos]
            pos += 1
            if count > 128:
                run = count - 128
                if x + run > width:
                    raise ParseError("RLE run overflows scanline", pos - 1)
                if pos >= n:
                    raise ParseError("truncated RLE run", pos)
                scan[channel, x:x + run] = data[pos]
                pos += 1
                x += run
            else:
                if count == 0 or x + count > width:
                    raise ParseError("bad RLE literal length", pos - 1)
                if pos + count > n:
                    raise ParseError("truncated RLE literal", n)
                scan[channel, x:x + count] = np.frombuffer(data, np.uint8, count, pos)
                pos += count
                x += count
    return scan.T, pos


def _read_flat_scanline(data: bytes, pos: int, width: int) -> Tuple[np.ndarray, int]:
    """Uncompressed pixels, honouring old-style (1, 1, 1, n) repeat markers"""
    scan = np.empty((width, 4), dtype=np.uint8)
    x = 0
    shift = 0
    while x < width:
        if pos + 4 > len(data):
            raise ParseError("truncated RGBE scanline", len(data))
        px = data[pos:pos + 4]
        pos += 4
        if px[0] == 1 and px[1] == 1 and px[2] == 1:
            if x == 0:
                raise ParseError("repeat marker at scanline start", pos - 4)
            repeat = px[3] << shift
            if x + repeat > width:
                raise ParseError("repeat marker overflows scanline", pos - 4)
            scan[x:x + repeat] = scan[x - 1]
            x += repeat
            shift += 8
        else:
            scan[x] = np.frombuffer(px, np.uint8)
            x += 1
            shift = 0
    return scan, pos


def read_rgbe(path: PathLike) -> np.ndarray:
    """Decode a Radiance .hdr file (new-style RLE, flat or old-style repeat)"""
    data = Path(path).read_bytes()

    magic, pos = _next_line(data, 0)
    if not magic.startswith(b"#?"):
        raise ParseError("missing #?RADIANCE magic", 0)

    while True:
        line_start = pos
        line, pos = _next_line(data, pos)
        if not line.strip():
            break
        if line.startswith(b"FORMAT=") and line.strip() != b"FORMAT=32-bit_rle_rgbe":
            raise ParseError(f"unsupported pixel format {line[7:].decode(errors='replace')}", line_start)

    line_start = pos
    res_line, pos = _next_line(data, pos)
    tokens = res_line.split()
    if len(tokens) != 4 or tokens[0] not in (b"-Y", b"+Y") or tokens[2] != b"+X":
        raise ParseError(f"unsupported resolution line {res_line[:40]!r}", line_start)
    try:
        height, width = int(tokens[1]), int(tokens[3])
    except ValueError:
        raise ParseError(f"non-integer resolution {res_line[:40]!r}", line_start)

    rows = np.empty((height, width, 4), dtype=np.uint8)
    for y in range(height):
        rows[y], pos = _read_rgbe_scanline(data, pos, width)

    if tokens[0] == b"+Y":
        rows = rows[::-1]
    return rgbe_to_float(rows)


def write_rgbe(path: PathLike, image: np.ndarray) -> None:
    """Write an (H, W, 3) radiance map; scanlines are RLE-coded as literal runs"""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvalidArgumentError(f"RGBE needs (H, W, 3), got {image.shape}")
    height, width, _ = image.shape
    rgbe = float_to_rgbe(image)

    chunks = [f"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y {height} +X {width}\n".encode("ascii")]
    rle = RGBE_MIN_RLE_WIDTH <= width <= RGBE_MAX_RLE_WIDTH
    for y in range(height):
        if not rle:
            chunks.append(rgbe[y].tobytes())
            continue
        line = bytearray([2, 2, width >> 8, width & 0xFF])
        for channel in range(4):
            values = rgbe[y, :, channel]
            for start in range(0, width, 128):
                block = values[start:start + 128]
                line.append(len(block))
                line.extend(block.tobytes())
        chunks.append(bytes(line))

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


# =============================================================================
# LDR

def write_png(path: PathLike, image: np.ndarray) -> None:
    """Write an 8-bit (H, W, 3) or (H, W) image"""
    image = np.asarray(image)
    if image.dtype != np.uint8:
        raise InvalidArgumentError(f"PNG output expects uint8, got {image.dtype}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if image.ndim == 2:
        mpimg.imsave(path, image, cmap="gray", vmin=0, vmax=255)
    else:
        mpimg.imsave(path, image)


def read_image(path: PathLike) -> np.ndarray:
    """Load a PNG (scaled to [0, 1]) or PFM as float32 (H, W, 3)"""
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        image = read_pfm(path)
    elif suffix == ".png":
        image = np.asarray(mpimg.imread(path), dtype=np.float32)
        if image.ndim == 2:
            image = image[..., None]
        if image.max() > 1.0:
            image = image / 255.0
    else:
        raise InvalidArgumentError(f"unsupported image type '{suffix}' for {path}")

    if image.shape[2] == 1:
        image = np.repeat(image, 3, axis=2)
    return np.ascontiguousarray(image[..., :3], dtype=np.float32)
