"""Image and dense-map I/O.

Every in-memory plane is a ``float32`` numpy array laid out row-major and
top-down: ``(H, W)`` for single-channel data, ``(H, W, 3)`` for color.
PFM files store scanlines bottom-up; the conversion happens here and nowhere
else.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from typing import Optional

import numpy as np

from otstereo.errors import FormatError, ValidationError

_PFM_DIMS = re.compile(rb"^\s*(\d+)\s+(\d+)\s*$")


def _check_finite(data: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(data)):
        raise ValidationError(f"{what} contains non-finite values")


def as_plane(data, channels: Optional[int] = None) -> np.ndarray:
    """Coerce ``data`` to the canonical float32 plane layout and validate it."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim not in (2, 3):
        raise ValidationError(f"plane must be 2-D or 3-D, got shape {arr.shape}")
    if arr.ndim == 3 and arr.shape[2] != 3:
        raise ValidationError(f"color planes need 3 channels, got {arr.shape[2]}")
    nch = 1 if arr.ndim == 2 else 3
    if channels is not None and nch != channels:
        raise ValidationError(f"expected {channels} channel(s), got {nch}")
    _check_finite(arr, "plane")
    return np.ascontiguousarray(arr)


@dataclass(frozen=True)
class StereoPair:
    """Rectified grayscale pair with optional ground truth.

    ``gt_occlusion`` uses 1 for pixels visible in both views and 0 otherwise.
    ``gt_disparity`` is expressed in full-resolution pixels.
    """

    left: np.ndarray
    right: np.ndarray
    gt_disparity: Optional[np.ndarray] = None
    gt_occlusion: Optional[np.ndarray] = None

    def __post_init__(self):
        left = as_plane(self.left, channels=1)
        right = as_plane(self.right, channels=1)
        if left.shape != right.shape:
            raise ValidationError(
                f"left {left.shape} and right {right.shape} differ in size"
            )
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)
        occ = None
        if self.gt_occlusion is not None:
            occ = as_plane(self.gt_occlusion, channels=1)
            if occ.shape != left.shape:
                raise ValidationError("gt_occlusion does not match image size")
            if not np.all((occ == 0) | (occ == 1)):
                raise ValidationError("gt_occlusion must be binary")
            object.__setattr__(self, "gt_occlusion", occ)
        if self.gt_disparity is not None:
            disp = as_plane(self.gt_disparity, channels=1)
            if disp.shape != left.shape:
                raise ValidationError("gt_disparity does not match image size")
            visible = occ == 1 if occ is not None else np.ones(disp.shape, bool)
            if np.any(disp[visible] < 0):
                raise ValidationError("negative gt disparity on a visible pixel")
            object.__setattr__(self, "gt_disparity", disp)

    @property
    def shape(self):
        return self.left.shape


def _read_line(f) -> bytes:
    line = f.readline()
    if not line:
        raise FormatError("unexpected end of PFM header")
    return line


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into a top-down float32 plane.

    The sign of the scale field selects the byte order (negative means
    little-endian). Raises :class:`FormatError` on a malformed header,
    :class:`OSError` on a truncated payload and :class:`ValidationError`
    if the payload holds NaN or Inf.
    """
    with open(path, "rb") as f:
        tag = _read_line(f).strip()
        if tag == b"Pf":
            channels = 1
        elif tag == b"PF":
            channels = 3
        else:
            raise FormatError(f"bad PFM tag {tag[:8]!r}")
        m = _PFM_DIMS.match(_read_line(f))
        if m is None:
            raise FormatError("bad PFM dimension line")
        width, height = int(m.group(1)), int(m.group(2))
        if width <= 0 or height <= 0:
            raise FormatError("PFM dimensions must be positive")
        try:
            scale = float(_read_line(f).strip())
        except ValueError as exc:
            raise FormatError("bad PFM scale line") from exc
        if scale == 0 or not np.isfinite(scale):
            raise FormatError("PFM scale must be finite and nonzero")
        count = width * height * channels
        payload = f.read(4 * count)
    if len(payload) < 4 * count:
        raise OSError(
            f"truncated PFM payload: {len(payload)} of {4 * count} bytes in {path}"
        )
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    data = np.frombuffer(payload, dtype=dtype).astype(np.float32)
    shape = (height, width) if channels == 1 else (height, width, 3)
    data = np.flipud(data.reshape(shape))
    _check_finite(data, f"PFM {path}")
    return np.ascontiguousarray(data)


def write_pfm(plane, path) -> None:
    """Write a 1- or 3-channel plane as little-endian PFM (scale -1)."""
    arr = as_plane(plane)
    height, width = arr.shape[:2]
    tag = b"Pf" if arr.ndim == 2 else b"PF"
    header = tag + b"\n" + f"{width} {height}\n".encode() + b"-1.0\n"
    body = np.ascontiguousarray(np.flipud(arr), dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(header)
        f.write(body)


def _pgm_tokens(buf: bytes, count: int):
    """Return ``count`` header tokens of a binary PGM and the payload offset."""
    tokens = []
    pos = 0
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("unexpected end of PGM header")
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_pgm(path) -> np.ndarray:
    """Read an 8- or 16-bit binary (P5) PGM, scaled to [0, 1]."""
    with open(path, "rb") as f:
        buf = f.read()
    tokens, offset = _pgm_tokens(buf, 4)
    if tokens[0] != b"P5":
        raise FormatError(f"not a binary PGM: {tokens[0][:8]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError("bad PGM header") from exc
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise FormatError("PGM header values out of range")
    dtype = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
    need = width * height * dtype.itemsize
    raster = buf[offset : offset + need]
    if len(raster) < need:
        raise OSError(f"truncated PGM raster in {path}")
    img = np.frombuffer(raster, dtype=dtype).reshape(height, width)
    return (img.astype(np.float32) / np.float32(maxval)).astype(np.float32)


def write_pgm(plane, path, bits: int = 8) -> None:
    """Write a single-channel plane in [0, 1] as a binary PGM."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    arr = as_plane(plane, channels=1)
    maxval = 255 if bits == 8 else 65535
    q = np.rint(np.clip(arr, 0.0, 1.0) * maxval)
    raster = q.astype("u1" if bits == 8 else ">u2").tobytes()
    height, width = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n{maxval}\n".encode())
        f.write(raster)


def read_image(path) -> np.ndarray:
    """Load an input image by extension: PGM becomes [0, 1] intensities, PFM as-is."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".pfm":
        img = read_pfm(path)
        if img.ndim == 3:
            img = img.mean(axis=2).astype(np.float32)
        return img
    return read_pgm(path)


def write_png_visualization(plane, path, colormap: str = "gray", vmin: float = 0.0,
                            vmax: float = 1.0) -> None:
    """Save a single-channel plane as an 8-bit PNG after clamping to [vmin, vmax]."""
    if not vmin < vmax:
        raise ValueError(f"vmin ({vmin}) must be smaller than vmax ({vmax})")
    from PIL import Image

    arr = as_plane(plane, channels=1).astype(np.float64)
    t = (np.clip(arr, vmin, vmax) - vmin) / (vmax - vmin)
    if colormap == "gray":
        img = Image.fromarray(np.rint(t * 255).astype(np.uint8))
    elif colormap == "turbo":
        from matplotlib import colormaps

        rgb = colormaps["turbo"](t)[..., :3]
        img = Image.fromarray(np.rint(rgb * 255).astype(np.uint8))
    else:
        raise ValueError(f"unknown colormap {colormap!r}")
    img.save(path, format="PNG")
