"""Planar YUV frame I/O and byte/float conversions.

Frames are stored as 8-bit planar arrays. 4:2:0 chroma is exactly half
resolution in both axes, which forces even luma dimensions. All rounding
from float back to bytes is half away from zero so the same input always
produces the same byte, independent of platform rounding mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError, TruncatedError

__all__ = [
    "Frame420",
    "Frame444",
    "read_yuv420",
    "read_yuv420_file",
    "write_yuv420",
    "upsample_420_to_444",
    "downsample_444_to_420",
    "frame_to_tensor",
    "tensor_to_frame",
    "round_half_away",
]


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, halves away from zero (0.5 -> 1, -0.5 -> -1)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _check_plane(name: str, plane: np.ndarray, h: int, w: int) -> None:
    if plane.dtype != np.uint8:
        raise DomainError(f"{name} plane must be uint8, got {plane.dtype}")
    if plane.shape != (h, w):
        raise ShapeError(f"{name} plane expected {(h, w)}, got {plane.shape}")


@dataclass
class Frame420:
    """One 4:2:0 frame: full-size luma, half-size chroma planes."""

    y: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self) -> None:
        if self.y.ndim != 2:
            raise ShapeError(f"luma must be 2-d, got shape {self.y.shape}")
        h, w = self.y.shape
        if h % 2 or w % 2:
            raise ShapeError(f"4:2:0 frames need even dimensions, got {w}x{h}")
        _check_plane("y", self.y, h, w)
        _check_plane("u", self.u, h // 2, w // 2)
        _check_plane("v", self.v, h // 2, w // 2)

    @property
    def width(self) -> int:
        return self.y.shape[1]

    @property
    def height(self) -> int:
        return self.y.shape[0]


@dataclass
class Frame444:
    """One 4:4:4 frame: three planes of equal size."""

    y: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self) -> None:
        if self.y.ndim != 2:
            raise ShapeError(f"luma must be 2-d, got shape {self.y.shape}")
        h, w = self.y.shape
        _check_plane("y", self.y, h, w)
        _check_plane("u", self.u, h, w)
        _check_plane("v", self.v, h, w)

    @property
    def width(self) -> int:
        return self.y.shape[1]

    @property
    def height(self) -> int:
        return self.y.shape[0]


def read_yuv420(data: bytes, width: int, height: int) -> Frame420:
    """Parse one raw planar 4:2:0 frame (Y then U then V) from bytes."""
    if width <= 0 or height <= 0:
        raise DomainError(f"dimensions must be positive, got {width}x{height}")
    if width % 2 or height % 2:
        raise ShapeError(f"4:2:0 frames need even dimensions, got {width}x{height}")
    expected = width * height * 3 // 2
    if len(data) != expected:
        raise TruncatedError(
            f"need {expected} bytes for {width}x{height} 4:2:0, got {len(data)}"
        )
    ysize = width * height
    csize = ysize // 4
    buf = np.frombuffer(data, dtype=np.uint8)
    y = buf[:ysize].reshape(height, width).copy()
    u = buf[ysize : ysize + csize].reshape(height // 2, width // 2).copy()
    v = buf[ysize + csize :].reshape(height // 2, width // 2).copy()
    return Frame420(y, u, v)


def read_yuv420_file(path: str, width: int, height: int, index: int = 0) -> Frame420:
    """Read frame `index` from a raw .yuv file of concatenated 4:2:0 frames."""
    frame_size = width * height * 3 // 2
    with open(path, "rb") as fh:
        fh.seek(frame_size * index)
        data = fh.read(frame_size)
    if len(data) != frame_size:
        raise TruncatedError(
            f"{path}: frame {index} needs {frame_size} bytes, got {len(data)}"
        )
    return read_yuv420(data, width, height)


def write_yuv420(frame: Frame420) -> bytes:
    """Serialize a frame back to raw planar bytes (inverse of read_yuv420)."""
    return frame.y.tobytes() + frame.u.tobytes() + frame.v.tobytes()


def upsample_420_to_444(frame: Frame420) -> Frame444:
    """Nearest-neighbour chroma upsampling: each chroma sample covers a 2x2 block."""
    u = np.repeat(np.repeat(frame.u, 2, axis=0), 2, axis=1)
    v = np.repeat(np.repeat(frame.v, 2, axis=0), 2, axis=1)
    return Frame444(frame.y.copy(), u, v)


def _mean_2x2(plane: np.ndarray) -> np.ndarray:
    # Integer mean of each 2x2 block, rounded half up. uint16 is enough
    # for the sum of four bytes.
    p = plane.astype(np.uint16)
    s = p[0::2, 0::2] + p[0::2, 1::2] + p[1::2, 0::2] + p[1::2, 1::2]
    return ((s + 2) // 4).astype(np.uint8)


def downsample_444_to_420(frame: Frame444) -> Frame420:
    """2x2 mean chroma downsampling, rounding half up.

    Exact inverse of upsample_420_to_444 on frames produced by it: the
    mean of four equal values is that value.
    """
    h, w = frame.y.shape
    if h % 2 or w % 2:
        raise ShapeError(f"need even dimensions to subsample chroma, got {w}x{h}")
    return Frame420(frame.y.copy(), _mean_2x2(frame.u), _mean_2x2(frame.v))


def frame_to_tensor(frame: Frame444) -> np.ndarray:
    """Stack planes into a float32 (3, H, W) tensor scaled to [0, 1]."""
    planes = np.stack([frame.y, frame.u, frame.v]).astype(np.float32)
    return planes / np.float32(255.0)


def tensor_to_frame(tensor: np.ndarray) -> Frame444:
    """Clamp a (3, H, W) tensor to [0, 1] and convert back to bytes.

    Byte production is round half away from zero; together with
    frame_to_tensor this roundtrips every byte value exactly.
    """
    if tensor.ndim != 3 or tensor.shape[0] != 3:
        raise ShapeError(f"expected (3, H, W) tensor, got {tensor.shape}")
    scaled = np.clip(tensor.astype(np.float64), 0.0, 1.0) * 255.0
    planes = round_half_away(scaled).astype(np.uint8)
    return Frame444(planes[0], planes[1], planes[2])
