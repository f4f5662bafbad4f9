"""Hyperspectral cube data model, value-range scaling, and container I/O.

A cube holds ``height x width x bands`` reflectance values as one flat
float32 vector. Element ``(i, j, k)`` sits at flat index
``k*height*width + j*height + i``: column-major within each band, bands
outermost. Every consumer in this package indexes through that order.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ContractError, CubeFormatError

RANGE_UNIT01 = "unit01"
RANGE_SIGNED11 = "signed11"
_RANGE_TAGS = (RANGE_UNIT01, RANGE_SIGNED11)

_MAGIC = "HSICUBE"
_VERSION = "v1"


@dataclass(frozen=True)
class CubeHeader:
    """Container metadata: dimensions, payload dtype, and value-range tag."""

    height: int
    width: int
    bands: int
    range_tag: str = RANGE_UNIT01
    dtype: str = "f32"
    provenance: str | None = None

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0 or self.bands <= 0:
            raise ContractError(
                f"dimensions must be positive, got {self.height}x{self.width}x{self.bands}"
            )
        if self.range_tag not in _RANGE_TAGS:
            raise ContractError(f"unknown range tag {self.range_tag!r}")
        if self.dtype != "f32":
            raise ContractError(f"unsupported dtype {self.dtype!r}")


@dataclass(frozen=True)
class HSICube:
    """Immutable reflectance cube.

    ``values`` is the flat float32 vector in the package-wide
    linearization order. ``range_tag`` declares which scaling convention
    the values follow; it is a bookkeeping tag for the two coordinate
    systems (restoration math runs in signed11, metrics in unit01), not a
    hard bound, so noisy observations may carry values slightly outside
    the nominal interval.
    """

    height: int
    width: int
    bands: int
    values: np.ndarray
    range_tag: str = RANGE_UNIT01

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0 or self.bands <= 0:
            raise ContractError(
                f"dimensions must be positive, got {self.height}x{self.width}x{self.bands}"
            )
        if self.range_tag not in _RANGE_TAGS:
            raise ContractError(f"unknown range tag {self.range_tag!r}")
        vals = np.ascontiguousarray(self.values, dtype=np.float32)
        if vals.ndim != 1 or vals.size != self.size:
            raise ContractError(
                f"values length {vals.size} does not match {self.height}x{self.width}x{self.bands}={self.size}"
            )
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def size(self) -> int:
        return self.height * self.width * self.bands

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.bands)

    @classmethod
    def from_array(cls, arr: np.ndarray, range_tag: str = RANGE_UNIT01) -> "HSICube":
        """Build a cube from a (height, width, bands) array."""
        arr = np.asarray(arr)
        if arr.ndim != 3:
            raise ContractError(f"expected a 3-d array, got shape {arr.shape}")
        h, w, b = arr.shape
        return cls(h, w, b, arr.astype(np.float32).ravel(order="F"), range_tag)

    def array(self) -> np.ndarray:
        """View of the values as a (height, width, bands) array."""
        return self.values.reshape(self.shape, order="F")

    def band(self, k: int) -> np.ndarray:
        if not 0 <= k < self.bands:
            raise ContractError(f"band {k} out of range [0, {self.bands})")
        return self.array()[:, :, k]


def vec_index(i: int, j: int, k: int, shape: tuple[int, int, int]) -> int:
    """Flat index of element (i, j, k) under the cube linearization order."""
    h, w, b = shape
    if not (0 <= i < h and 0 <= j < w and 0 <= k < b):
        raise ContractError(f"index ({i}, {j}, {k}) out of bounds for shape {shape}")
    return k * h * w + j * h + i


def scale_to_signed(cube: HSICube) -> HSICube:
    """Map values v -> 2v - 1, retagging unit01 as signed11."""
    if cube.range_tag != RANGE_UNIT01:
        raise ContractError(f"expected a unit01 cube, got {cube.range_tag}")
    vals = (2.0 * cube.values.astype(np.float64) - 1.0).astype(np.float32)
    return HSICube(cube.height, cube.width, cube.bands, vals, RANGE_SIGNED11)


def scale_to_unit(cube: HSICube) -> HSICube:
    """Map values v -> (v + 1) / 2, the inverse of scale_to_signed."""
    if cube.range_tag != RANGE_SIGNED11:
        raise ContractError(f"expected a signed11 cube, got {cube.range_tag}")
    vals = ((cube.values.astype(np.float64) + 1.0) / 2.0).astype(np.float32)
    return HSICube(cube.height, cube.width, cube.bands, vals, RANGE_UNIT01)


def format_header(header: CubeHeader) -> str:
    return (
        f"{_MAGIC} {_VERSION} I={header.height} J={header.width} K={header.bands} "
        f"dtype={header.dtype} range={header.range_tag}\n"
    )


def parse_header(raw: bytes) -> CubeHeader:
    """Decode one container header line; errors name the offending field."""
    if not raw.endswith(b"\n"):
        raise CubeFormatError("header: missing newline terminator")
    try:
        line = raw.decode("ascii").strip()
    except UnicodeDecodeError as exc:
        raise CubeFormatError("header: not ASCII") from exc
    parts = line.split()
    if len(parts) != 7 or parts[0] != _MAGIC or parts[1] != _VERSION:
        raise CubeFormatError(f"header: expected '{_MAGIC} {_VERSION} ...', got {line!r}")
    fields = {}
    for token in parts[2:]:
        key, _, value = token.partition("=")
        if not value:
            raise CubeFormatError(f"header: malformed token {token!r}")
        fields[key] = value
    for key in ("I", "J", "K", "dtype", "range"):
        if key not in fields:
            raise CubeFormatError(f"header: missing field {key}")
    try:
        h, w, b = int(fields["I"]), int(fields["J"]), int(fields["K"])
    except ValueError as exc:
        raise CubeFormatError(f"header: non-integer dimension ({exc})") from exc
    if h <= 0 or w <= 0 or b <= 0:
        raise CubeFormatError(f"header: non-positive dimensions {h}x{w}x{b}")
    if fields["dtype"] != "f32":
        raise CubeFormatError(f"header: unknown dtype {fields['dtype']!r}")
    if fields["range"] not in _RANGE_TAGS:
        raise CubeFormatError(f"header: unknown range {fields['range']!r}")
    return CubeHeader(h, w, b, fields["range"], fields["dtype"])


def save_cube(cube: HSICube, path: str | Path) -> None:
    """Write a cube: one ASCII header line, then raw little-endian float32."""
    header = CubeHeader(cube.height, cube.width, cube.bands, cube.range_tag)
    with open(path, "wb") as fh:
        fh.write(format_header(header).encode("ascii"))
        fh.write(cube.values.astype("<f4").tobytes())


def load_cube(path: str | Path) -> HSICube:
    """Read a cube container, validating header fields and payload length."""
    with open(path, "rb") as fh:
        header = parse_header(fh.readline(1024))
        expected = header.height * header.width * header.bands * 4
        payload = fh.read(expected + 1)
        if len(payload) < expected:
            raise CubeFormatError(
                f"payload: truncated, expected {expected} bytes for "
                f"K={header.bands}, got {len(payload)}"
            )
        if len(payload) > expected:
            raise CubeFormatError(f"payload: {len(payload) - expected}+ trailing bytes")
    values = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    return HSICube(header.height, header.width, header.bands, values, header.range_tag)


def export_band_png(cube: HSICube, k: int, path: str | Path) -> None:
    """Write band k as an 8-bit grayscale PNG, v -> round-half-up(255*clamp(v))."""
    if cube.range_tag != RANGE_UNIT01:
        raise ContractError("PNG export expects a unit01 cube")
    band = cube.band(k).astype(np.float64)
    pixels = np.floor(255.0 * np.clip(band, 0.0, 1.0) + 0.5).astype(np.uint8)
    Image.fromarray(pixels, mode="L").save(path)
