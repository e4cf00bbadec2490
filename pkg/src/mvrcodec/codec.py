"""Single P-frame bitstream: container framing plus the coding pipeline.

A coded frame is a standalone file:

    magic "MVRC" | u16 version | u32 width | u32 height | u8 q | u8 flags
    | u32 len + bottleneck payload | u32 len + latent payload
    | u32 CRC-32 of both payloads

Width and height are the true pre-padding dimensions; the pipeline pads
frames to multiples of 64 and the decoder crops back. All integers are
little-endian. Encoding and decoding share every deterministic step, so
the decoder reproduces the encoder's local reconstruction bit for bit.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from dataclasses import dataclass

import numpy as np

from .entropy import (
    LATENT_MAX,
    LatentGrid,
    factorized_pmf,
    laplace_pmf,
    quantize_round,
    rate_bits,
)
from .errors import (
    ChecksumError,
    DomainError,
    FormatError,
    ShapeError,
    TruncatedError,
    VersionError,
)
from .frames import (
    Frame420,
    Frame444,
    downsample_444_to_420,
    frame_to_tensor,
    round_half_away,
    tensor_to_frame,
    upsample_420_to_444,
)
from .model import (
    ArchitectureConfig,
    decode_motion_residual,
    default_config,
    encode_latent,
    hyper_decode,
    hyper_encode,
)
from .motion import block_matching_flow, sdc_warp
from .nn import ModelWeights
from .postproc import ms_ssim, postprocess, psnr
from .rangecoder import RangeDecoder, RangeEncoder, build_cdf

__all__ = [
    "MAGIC",
    "VERSION",
    "PAD_MULTIPLE",
    "FrameStats",
    "EncodeResult",
    "DecodeResult",
    "encode_pframe",
    "decode_pframe",
    "build_container",
    "parse_container",
    "write_bytes_atomic",
]

MAGIC = b"MVRC"
VERSION = 1
PAD_MULTIPLE = 64
FLAG_F16_WEIGHTS = 0x01

_HEADER = struct.Struct("<4sHIIBB")
_U32 = struct.Struct("<I")

# Latent symbols are coded in a fixed window around the rounded mean, so
# both sides derive the same alphabet from the decoded bottleneck. The
# window is wide enough that clipping is vanishingly rare, and the base
# is kept away from the latent bounds so the window stays in range.
Y_WINDOW_HALF = 40
_Y_BASE_LIMIT = LATENT_MAX - Y_WINDOW_HALF
_Y_CHUNK = 8192


def _pad_axis(size: int, multiple: int) -> int:
    return (-size) % multiple


def _pad_tensor(x: np.ndarray, multiple: int = PAD_MULTIPLE) -> np.ndarray:
    """Pad (C, H, W) on the bottom/right to the next multiple.

    Reflective when the pad fits inside the image, edge replication for
    inputs smaller than the pad amount.
    """
    _, h, w = x.shape
    ph, pw = _pad_axis(h, multiple), _pad_axis(w, multiple)
    if ph == 0 and pw == 0:
        return x
    mode = "reflect" if ph < h and pw < w else "edge"
    return np.pad(x, ((0, 0), (0, ph), (0, pw)), mode=mode)


def _pad_plane(p: np.ndarray, multiple: int = PAD_MULTIPLE) -> np.ndarray:
    return _pad_tensor(p[None], multiple)[0]


@dataclass
class FrameStats:
    """Numbers the encoder reports for one coded frame."""

    q: int
    width: int
    height: int
    estimate_y_bits: float
    estimate_z_bits: float
    payload_y_bytes: int
    payload_z_bytes: int
    container_bytes: int
    msssim: float | None = None
    psnr: float | None = None

    def to_dict(self) -> dict:
        return {
            "q": self.q,
            "width": self.width,
            "height": self.height,
            "estimate_y_bits": self.estimate_y_bits,
            "estimate_z_bits": self.estimate_z_bits,
            "payload_y_bytes": self.payload_y_bytes,
            "payload_z_bytes": self.payload_z_bytes,
            "container_bytes": self.container_bytes,
            "msssim": self.msssim,
            "psnr": self.psnr,
        }


@dataclass
class EncodeResult:
    blob: bytes
    stats: FrameStats
    recon: Frame420
    recon_444: Frame444
    y_hat: LatentGrid
    z_hat: LatentGrid
    flow: np.ndarray


@dataclass
class DecodeResult:
    frame: Frame420
    frame_444: Frame444
    q: int
    y_hat: LatentGrid
    z_hat: LatentGrid


def _z_supports(weights: ModelWeights) -> list[tuple[int, np.ndarray]]:
    """Per-channel (minimum symbol value, coding table) for the bottleneck."""
    tables = []
    for c in range(weights.z_prior.channels):
        values, pmf = weights.z_prior.bin_pmf(c)
        pmf = pmf / pmf.sum()
        tables.append((int(values[0]), build_cdf(pmf)))
    return tables


def _clip_z(z_hat: LatentGrid, tables: list[tuple[int, np.ndarray]]) -> LatentGrid:
    vals = z_hat.values.copy()
    for c, (lo, cum) in enumerate(tables):
        hi = lo + len(cum) - 2
        np.clip(vals[c], lo, hi, out=vals[c])
    return LatentGrid(vals)


def _code_z(z_hat: LatentGrid, tables: list[tuple[int, np.ndarray]]) -> bytes:
    enc = RangeEncoder()
    for c, (lo, cum) in enumerate(tables):
        enc.encode(z_hat.values[c].reshape(-1) - lo, cum)
    return enc.finish()


def _decode_z(data: bytes, channels: int, zh: int, zw: int,
              tables: list[tuple[int, np.ndarray]]) -> LatentGrid:
    dec = RangeDecoder(data)
    out = np.empty((channels, zh, zw), dtype=np.int64)
    for c, (lo, cum) in enumerate(tables):
        out[c] = (dec.decode(zh * zw, cum) + lo).reshape(zh, zw)
    return LatentGrid(out)


def _y_base(mu: np.ndarray) -> np.ndarray:
    """Alphabet centre per latent element, derived only from mu."""
    base = round_half_away(mu.astype(np.float64)).astype(np.int64)
    return np.clip(base, -_Y_BASE_LIMIT, _Y_BASE_LIMIT)


def _y_chunk_tables(mu: np.ndarray, sigma: np.ndarray, base: np.ndarray) -> np.ndarray:
    offsets = np.arange(-Y_WINDOW_HALF, Y_WINDOW_HALF + 1, dtype=np.float64)
    ks = base[:, None] + offsets[None, :]
    pmf = laplace_pmf(ks, mu[:, None].astype(np.float64), sigma[:, None].astype(np.float64))
    pmf /= pmf.sum(axis=1, keepdims=True)
    return build_cdf(pmf)


def _code_y(y_hat: LatentGrid, mu: np.ndarray, sigma: np.ndarray,
            base: np.ndarray) -> bytes:
    vals = y_hat.values.reshape(-1)
    mu_f, sig_f, base_f = mu.reshape(-1), sigma.reshape(-1), base.reshape(-1)
    enc = RangeEncoder()
    for start in range(0, vals.size, _Y_CHUNK):
        end = min(start + _Y_CHUNK, vals.size)
        cum = _y_chunk_tables(mu_f[start:end], sig_f[start:end], base_f[start:end])
        enc.encode(vals[start:end] - (base_f[start:end] - Y_WINDOW_HALF), cum)
    return enc.finish()


def _decode_y(data: bytes, mu: np.ndarray, sigma: np.ndarray,
              base: np.ndarray) -> LatentGrid:
    mu_f, sig_f, base_f = mu.reshape(-1), sigma.reshape(-1), base.reshape(-1)
    dec = RangeDecoder(data)
    out = np.empty(mu_f.size, dtype=np.int64)
    for start in range(0, mu_f.size, _Y_CHUNK):
        end = min(start + _Y_CHUNK, mu_f.size)
        cum = _y_chunk_tables(mu_f[start:end], sig_f[start:end], base_f[start:end])
        out[start:end] = dec.decode(end - start, cum) + (base_f[start:end] - Y_WINDOW_HALF)
    return LatentGrid(out.reshape(mu.shape))


def _reconstruct(config: ArchitectureConfig, weights: ModelWeights,
                 y_hat: LatentGrid, ref_pad: np.ndarray,
                 height: int, width: int) -> tuple[Frame420, Frame444]:
    heads = decode_motion_residual(config, weights, y_hat)
    warped = sdc_warp(ref_pad, heads.flow, heads.kernels_u, heads.kernels_v)
    enhanced = postprocess(config, weights, warped + heads.residual)
    frame_444 = tensor_to_frame(enhanced[:, :height, :width])
    return downsample_444_to_420(frame_444), frame_444


def build_container(width: int, height: int, q: int, flags: int,
                    z_bytes: bytes, y_bytes: bytes) -> bytes:
    header = _HEADER.pack(MAGIC, VERSION, width, height, q, flags)
    crc = zlib.crc32(y_bytes, zlib.crc32(z_bytes))
    return b"".join(
        [
            header,
            _U32.pack(len(z_bytes)),
            z_bytes,
            _U32.pack(len(y_bytes)),
            y_bytes,
            _U32.pack(crc),
        ]
    )


def parse_container(blob: bytes) -> tuple[int, int, int, int, bytes, bytes]:
    """Split a container into (width, height, q, flags, z bytes, y bytes)."""
    if len(blob) < _HEADER.size:
        raise TruncatedError(f"container is {len(blob)} bytes, shorter than the header")
    magic, version, width, height, q, flags = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionError(f"unsupported container version {version}")
    if width == 0 or height == 0:
        raise FormatError(f"degenerate dimensions {width}x{height}")
    if q > 4:
        raise FormatError(f"quality index {q} out of range")

    pos = _HEADER.size
    payloads = []
    for name in ("bottleneck", "latent"):
        if pos + 4 > len(blob):
            raise TruncatedError(f"container ends inside the {name} length field")
        (length,) = _U32.unpack_from(blob, pos)
        pos += 4
        if pos + length > len(blob):
            raise TruncatedError(
                f"{name} payload claims {length} bytes, only {len(blob) - pos} left"
            )
        payloads.append(blob[pos : pos + length])
        pos += length
    if pos + 4 > len(blob):
        raise TruncatedError("container ends inside the checksum field")
    (crc_stored,) = _U32.unpack_from(blob, pos)
    pos += 4
    if pos != len(blob):
        raise FormatError(f"{len(blob) - pos} trailing bytes after the checksum")
    crc = zlib.crc32(payloads[1], zlib.crc32(payloads[0]))
    if crc != crc_stored:
        raise ChecksumError(
            f"payload CRC-32 {crc:#010x} does not match stored {crc_stored:#010x}"
        )
    return width, height, q, flags, payloads[0], payloads[1]


def encode_pframe(target: Frame420, ref: Frame420, weights: ModelWeights,
                  config: ArchitectureConfig | None = None,
                  flow: np.ndarray | None = None,
                  compute_metrics: bool = True) -> EncodeResult:
    """Code `target` as a P-frame against `ref`.

    `flow` overrides block-matching motion search and must be (2, H, W)
    at the true frame size. Setting compute_metrics=False skips the
    MS-SSIM/PSNR evaluation of the local reconstruction; all coded bytes
    are identical either way.
    """
    config = config or default_config()
    if target.width != ref.width or target.height != ref.height:
        raise ShapeError(
            f"target {target.width}x{target.height} vs "
            f"reference {ref.width}x{ref.height}"
        )
    height, width = target.height, target.width

    target_444 = upsample_420_to_444(target)
    ref_444 = upsample_420_to_444(ref)
    t_pad = _pad_tensor(frame_to_tensor(target_444))
    r_pad = _pad_tensor(frame_to_tensor(ref_444))

    if flow is None:
        flow_pad = block_matching_flow(_pad_plane(ref.y), _pad_plane(target.y))
    else:
        flow = np.asarray(flow, dtype=np.float32)
        if flow.shape != (2, height, width):
            raise ShapeError(f"flow must be (2, {height}, {width}), got {flow.shape}")
        flow_pad = _pad_tensor(flow)

    y = encode_latent(config, weights, r_pad, t_pad, flow_pad)
    z = hyper_encode(config, weights, y)

    z_tables = _z_supports(weights)
    z_hat = _clip_z(quantize_round(z), z_tables)
    z_bytes = _code_z(z_hat, z_tables)

    field = hyper_decode(config, weights, z_hat)
    base = _y_base(field.mu)
    y_vals = np.clip(
        quantize_round(y).values, base - Y_WINDOW_HALF, base + Y_WINDOW_HALF
    )
    y_hat = LatentGrid(y_vals)
    y_bytes = _code_y(y_hat, field.mu, field.sigma, base)

    blob = build_container(
        width, height, weights.quality,
        FLAG_F16_WEIGHTS if weights.precision == "f16" else 0,
        z_bytes, y_bytes,
    )

    recon, recon_444 = _reconstruct(config, weights, y_hat, r_pad, height, width)

    channel_ix = np.repeat(
        np.arange(z_hat.values.shape[0]), z_hat.values[0].size
    )
    est_z = rate_bits(
        z_hat.values, lambda v: factorized_pmf(weights.z_prior, v, channel_ix)
    )
    mu_f = field.mu.reshape(-1).astype(np.float64)
    sig_f = field.sigma.reshape(-1).astype(np.float64)
    est_y = rate_bits(y_hat.values, lambda v: laplace_pmf(v, mu_f, sig_f))

    stats = FrameStats(
        q=weights.quality,
        width=width,
        height=height,
        estimate_y_bits=est_y,
        estimate_z_bits=est_z,
        payload_y_bytes=len(y_bytes),
        payload_z_bytes=len(z_bytes),
        container_bytes=len(blob),
    )
    if compute_metrics:
        stats.msssim = ms_ssim(recon_444, target_444)
        stats.psnr = psnr(recon_444, target_444)

    return EncodeResult(blob, stats, recon, recon_444, y_hat, z_hat, flow_pad)


def decode_pframe(blob: bytes, ref: Frame420, weights: ModelWeights,
                  config: ArchitectureConfig | None = None) -> DecodeResult:
    """Decode a container against its reference frame."""
    config = config or default_config()
    width, height, q, _flags, z_bytes, y_bytes = parse_container(blob)
    if weights.quality != q:
        raise DomainError(
            f"container was coded at quality {q}, weight set is quality "
            f"{weights.quality}"
        )
    if ref.width != width or ref.height != height:
        raise ShapeError(
            f"reference is {ref.width}x{ref.height}, container says {width}x{height}"
        )

    pad_h = height + _pad_axis(height, PAD_MULTIPLE)
    pad_w = width + _pad_axis(width, PAD_MULTIPLE)
    factor = config.downsample_factor("mv_encoder") * config.downsample_factor(
        "hyper_encoder"
    )
    zh, zw = pad_h // factor, pad_w // factor

    z_tables = _z_supports(weights)
    z_hat = _decode_z(z_bytes, config.hyper_channels, zh, zw, z_tables)
    field = hyper_decode(config, weights, z_hat)
    base = _y_base(field.mu)
    y_hat = _decode_y(y_bytes, field.mu, field.sigma, base)

    r_pad = _pad_tensor(frame_to_tensor(upsample_420_to_444(ref)))
    frame, frame_444 = _reconstruct(config, weights, y_hat, r_pad, height, width)
    return DecodeResult(frame, frame_444, q, y_hat, z_hat)


def write_bytes_atomic(path: str, data: bytes) -> None:
    """Write via a sibling temp file and rename, so readers never see a
    partial file."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".mvrc-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
