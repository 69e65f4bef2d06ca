"""Gridded grayscale images with continuous evaluation and exact gradients.

A ``ScalarField`` stores an (height, width) array of intensities sampled at
pixel centers; the physical location of pixel (column i, row j) is
``origin + spacing * (i, j)``.  Point queries use bilinear interpolation on a
zero-padded grid: pixels outside the stored array are treated as 0, so the
interpolant is continuous everywhere, fades to 0 across a one-pixel margin
and is exactly 0 beyond it (images vanish at infinity).

``grad`` differentiates that same interpolant analytically.  Inside a cell
the surface is bilinear, so the gradient is exact; on cell boundaries the
cell containing the point in the floor convention is used (right/up
continuous), which finite-difference tests must avoid.

I/O: binary 8-bit PGM (P5) is the bit-exact reference format and is parsed
and written directly; PNG grayscale goes through Pillow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

__all__ = [
    "ScalarField",
    "ImageFormatError",
    "load",
    "save",
    "eval",
    "grad",
    "smooth",
    "sample_grid",
    "resample",
    "upsample",
]


class ImageFormatError(ValueError):
    """Raised for unsupported or corrupt image files."""


@dataclass
class ScalarField:
    """Grayscale image with pixel spacing and physical origin."""

    values: np.ndarray
    spacing: float = 1.0
    origin: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.origin = np.zeros(2) if self.origin is None else np.asarray(self.origin, dtype=float)
        if self.values.ndim != 2 or self.values.size == 0:
            raise ValueError(f"field values must be a non-empty 2-D array, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")
        if not (np.isfinite(self.spacing) and self.spacing > 0):
            raise ValueError(f"spacing must be positive, got {self.spacing}")

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def height(self):
        return self.values.shape[0]

    def eval(self, p):
        return eval(self, p)

    def grad(self, p):
        return grad(self, p)


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------


def _read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise ImageFormatError(f"{path}: not a binary PGM (P5) file")
    # header: magic, width, height, maxval as whitespace-separated tokens,
    # comments (# ... newline) allowed anywhere in between
    pos = 2
    tokens = []
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ImageFormatError(f"{path}: malformed PGM header") from exc
    if width < 1 or height < 1:
        raise ImageFormatError(f"{path}: bad PGM dimensions {width}x{height}")
    if not 0 < maxval < 256:
        raise ImageFormatError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    raster = data[pos : pos + width * height]
    if len(raster) != width * height:
        raise ImageFormatError(f"{path}: truncated PGM raster")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return arr.astype(float) / maxval


def _write_pgm(values01, path):
    arr = _quantize(values01)
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes())


def _read_png(path):
    from PIL import Image

    with Image.open(path) as img:
        if img.mode != "L":
            img = img.convert("L")
        return np.asarray(img, dtype=float) / 255.0


def _write_png(values01, path):
    from PIL import Image

    Image.fromarray(_quantize(values01), mode="L").save(path, format="PNG")


def _quantize(values01):
    return np.round(np.clip(values01, 0.0, 1.0) * 255.0).astype(np.uint8)


def load(path, normalize=False) -> ScalarField:
    """Load a grayscale PGM/PNG; optionally min-max normalize to [0, 1]."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
    if magic.startswith(b"P5"):
        values = _read_pgm(path)
    elif magic.startswith(b"\x89PNG"):
        values = _read_png(path)
    else:
        raise ImageFormatError(f"{path}: unsupported image format (need PGM P5 or PNG)")
    if normalize:
        lo, hi = values.min(), values.max()
        values = (values - lo) / (hi - lo) if hi > lo else np.zeros_like(values)
    return ScalarField(values)


def save(field: ScalarField, path):
    """Write the field as 8-bit PGM or PNG, clamping values to [0, 1]."""
    path = str(path)
    if path.endswith(".pgm"):
        _write_pgm(field.values, path)
    elif path.endswith(".png"):
        _write_png(field.values, path)
    else:
        raise ImageFormatError(f"{path}: unsupported output format (use .pgm or .png)")


# ---------------------------------------------------------------------------
# point queries
# ---------------------------------------------------------------------------


def _corners(field, p):
    """Cell indices, local coordinates and the four zero-padded corner values."""
    p = np.asarray(p, dtype=float)
    q = (p - field.origin) / field.spacing
    i0 = np.floor(q[..., 0]).astype(int)
    j0 = np.floor(q[..., 1]).astype(int)
    fx = q[..., 0] - i0
    fy = q[..., 1] - j0

    h, w = field.values.shape

    def at(jj, ii):
        valid = (ii >= 0) & (ii < w) & (jj >= 0) & (jj < h)
        vals = field.values[np.clip(jj, 0, h - 1), np.clip(ii, 0, w - 1)]
        return np.where(valid, vals, 0.0)

    f00 = at(j0, i0)
    f10 = at(j0, i0 + 1)
    f01 = at(j0 + 1, i0)
    f11 = at(j0 + 1, i0 + 1)
    return fx, fy, f00, f10, f01, f11


def eval(field: ScalarField, p):
    """Bilinear interpolation at physical point(s) ``p`` (..., 2); 0 outside."""
    fx, fy, f00, f10, f01, f11 = _corners(field, p)
    top = f00 * (1.0 - fx) + f10 * fx
    bot = f01 * (1.0 - fx) + f11 * fx
    out = top * (1.0 - fy) + bot * fy
    return out if out.ndim else float(out)


def grad(field: ScalarField, p):
    """Exact spatial gradient of the bilinear interpolant at ``p`` (..., 2)."""
    fx, fy, f00, f10, f01, f11 = _corners(field, p)
    gx = ((f10 - f00) * (1.0 - fy) + (f11 - f01) * fy) / field.spacing
    gy = ((f01 - f00) * (1.0 - fx) + (f11 - f10) * fx) / field.spacing
    return np.stack([gx, gy], axis=-1)


# ---------------------------------------------------------------------------
# whole-field operations
# ---------------------------------------------------------------------------


def smooth(field: ScalarField, radius) -> ScalarField:
    """Gaussian blur with std ``radius`` pixels, truncated at 4 radii.

    The kernel is renormalized against the image support (classic normalized
    convolution), so constant images stay constant up to the border and the
    total mass of interior-supported images is preserved.
    """
    if radius < 0:
        raise ValueError(f"smoothing radius must be >= 0, got {radius}")
    if radius == 0:
        return ScalarField(field.values.copy(), field.spacing, field.origin.copy())
    blurred = ndimage.gaussian_filter(field.values, sigma=radius, mode="constant", truncate=4.0)
    weight = ndimage.gaussian_filter(
        np.ones_like(field.values), sigma=radius, mode="constant", truncate=4.0
    )
    return ScalarField(blurred / weight, field.spacing, field.origin.copy())


def sample_grid(field: ScalarField, stride):
    """Positions and values of every ``stride``-th pixel center, row-major."""
    if int(stride) != stride or stride < 1:
        raise ValueError(f"stride must be a positive integer, got {stride}")
    stride = int(stride)
    cols = np.arange(0, field.width, stride)
    rows = np.arange(0, field.height, stride)
    ii, jj = np.meshgrid(cols, rows)  # row-major: rows outer, cols inner
    positions = np.stack(
        [
            field.origin[0] + field.spacing * ii.ravel(),
            field.origin[1] + field.spacing * jj.ravel(),
        ],
        axis=1,
    ).astype(float)
    values = field.values[jj.ravel(), ii.ravel()].astype(float)
    return positions, values


def grid_points(field: ScalarField):
    """Physical centers of all pixels, row-major (N, 2)."""
    return sample_grid(field, 1)[0]


def resample(field: ScalarField, width, height) -> ScalarField:
    """Bilinear rescale of the image content onto a width x height grid.

    The output keeps the source spacing and origin, so resizing changes the
    physical extent of the image (a 28x28 digit resampled to 72x72 covers a
    72-pixel square).
    """
    if width < 1 or height < 1:
        raise ValueError("output size must be at least 1x1")
    sx = (field.width - 1) / max(width - 1, 1)
    sy = (field.height - 1) / max(height - 1, 1)
    ii, jj = np.meshgrid(np.arange(width), np.arange(height))
    pts = np.stack(
        [
            field.origin[0] + field.spacing * sx * ii.ravel(),
            field.origin[1] + field.spacing * sy * jj.ravel(),
        ],
        axis=1,
    )
    vals = eval(field, pts).reshape(height, width)
    return ScalarField(vals, field.spacing, field.origin.copy())


def upsample(field: ScalarField, width, height, smooth_radius=1.0) -> ScalarField:
    """Bilinear resize followed by a light blur; for coarse source images."""
    return smooth(resample(field, width, height), smooth_radius)
