"""Byte-oriented 32-bit range coder and 16-bit frequency tables.

Tables always total 65536, which doubles as the 1/65536 probability
floor: every symbol keeps frequency >= 1 so anything the quantizer can
emit stays decodable. build_cdf quantizes the cumulative distribution by
rounding each boundary half away from zero, then restores missing unit
frequencies by stealing, one unit at a time, from whichever bin is
currently largest (ties go to the lower symbol index).

The coder itself is the classic carry-less low/range construction with
byte renormalization: emit the top byte once it is settled, and when the
range underflows below 2^16 truncate it to the next 2^16 boundary. Both
sides renormalize identically, so streams are byte-reproducible across
platforms.
"""

from __future__ import annotations

import numpy as np

from .errors import CapacityError, DomainError, ShapeError, TruncatedError

__all__ = [
    "TOTAL_FREQ",
    "build_cdf",
    "RangeEncoder",
    "RangeDecoder",
    "encode_symbols",
    "decode_symbols",
]

TOTAL_FREQ = 1 << 16
_TOP = 1 << 24
_BOT = 1 << 16
_MASK = 0xFFFFFFFF

# Waterfill window for the vectorized steal. Rows needing to dig deeper
# than this many distinct top bins fall back to the literal loop.
_STEAL_WINDOW = 24


def _steal_loop(freqs: np.ndarray, deficit: int) -> np.ndarray:
    """Literal one-unit-at-a-time steal from the current largest bin."""
    out = freqs.copy()
    for _ in range(deficit):
        out[int(np.argmax(out))] -= 1
    return out


def _steal_vectorized(freqs: np.ndarray, deficits: np.ndarray) -> np.ndarray:
    """Equivalent of _steal_loop applied row-wise without the per-unit loop.

    Stealing one unit at a time from the running maximum levels the top
    bins down to a common height T, with the first r (by index) of the
    bins at that height one unit lower. We solve for T inside a fixed
    window of the largest bins and fall back to the loop when a row's
    deficit would reach past the window.
    """
    n, a = freqs.shape
    m = min(_STEAL_WINDOW, a)
    if m == a:
        part = np.argsort(-freqs, axis=1, kind="stable")
    else:
        part = np.argpartition(-freqs, m - 1, axis=1)[:, :m]
    vals = np.take_along_axis(freqs, part, axis=1)
    # Order window slots by value descending, then original index ascending.
    order = np.lexsort((part, -vals), axis=1)
    idx = np.take_along_axis(part, order, axis=1)
    w = np.take_along_axis(vals, order, axis=1)

    prefix = np.cumsum(w, axis=1)
    js = np.arange(1, m + 1)
    # Smallest integer level T with removal cost prefix_j - j*T <= deficit.
    t_cand = -((deficits[:, None] - prefix) // js)
    lower = np.empty_like(w)
    lower[:, :-1] = w[:, 1:]
    # When the window spans the whole row the last segment is open below;
    # otherwise levelling all m window bins means the answer may involve
    # bins outside the window, which only the fallback handles.
    lower[:, -1] = 0 if m == a else w[:, -1]
    valid = (t_cand >= 1) & (t_cand <= w) & (t_cand > lower)

    rows = np.flatnonzero(deficits > 0)
    out = freqs.copy()
    solved = valid.any(axis=1)
    j0 = np.argmax(valid, axis=1)
    for row in rows[~solved[rows]]:
        out[row] = _steal_loop(freqs[row], int(deficits[row]))
    good = rows[solved[rows]]
    if good.size == 0:
        return out

    jg = j0[good]
    tg = t_cand[good, jg]
    residual = deficits[good] - (prefix[good, jg] - (jg + 1) * tg)
    slot = np.arange(m)
    cut = slot[None, :] <= jg[:, None]
    key = np.where(cut, idx[good], a + 1)
    rank = np.empty_like(key)
    np.put_along_axis(rank, np.argsort(key, axis=1, kind="stable"),
                      np.broadcast_to(slot, key.shape).copy(), axis=1)
    extra = cut & (rank < residual[:, None])
    new_vals = np.where(cut, tg[:, None], w[good]) - extra
    sub = out[good]
    np.put_along_axis(sub, idx[good], new_vals, axis=1)
    out[good] = sub
    return out


def build_cdf(pmf: np.ndarray) -> np.ndarray:
    """Quantize pmf rows into cumulative frequency tables totalling 65536.

    Accepts one pmf of shape (A,) or a batch (N, A); returns uint32
    cumulative boundaries of shape (A + 1,) or (N, A + 1), starting at 0
    and ending at 65536. Every symbol gets frequency >= 1. Each row must
    sum to 1 within 1e-6.
    """
    pmf = np.asarray(pmf, dtype=np.float64)
    single = pmf.ndim == 1
    if single:
        pmf = pmf[None, :]
    if pmf.ndim != 2:
        raise ShapeError(f"pmf must be 1-d or 2-d, got shape {pmf.shape}")
    n, a = pmf.shape
    if a < 1:
        raise ShapeError("empty alphabet")
    if a > TOTAL_FREQ:
        raise CapacityError(f"alphabet of {a} symbols exceeds the 16-bit total")
    if np.any(~np.isfinite(pmf)) or np.any(pmf < 0):
        raise DomainError("pmf entries must be finite and non-negative")
    sums = pmf.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        bad = int(np.argmax(np.abs(sums - 1.0)))
        raise DomainError(f"pmf row {bad} sums to {sums[bad]!r}, expected 1")

    cum = np.floor(np.cumsum(pmf, axis=1) * TOTAL_FREQ + 0.5)
    cum[:, -1] = TOTAL_FREQ
    freqs = np.empty((n, a), dtype=np.int64)
    freqs[:, 0] = cum[:, 0]
    freqs[:, 1:] = np.diff(cum, axis=1)

    deficits = (freqs == 0).sum(axis=1)
    if deficits.any():
        freqs[freqs == 0] = 1
        freqs = _steal_vectorized(freqs, deficits)

    out = np.zeros((n, a + 1), dtype=np.uint32)
    out[:, 1:] = np.cumsum(freqs, axis=1)
    return out[0] if single else out


class RangeEncoder:
    """Streaming encoder; call encode() any number of times, then finish()."""

    def __init__(self) -> None:
        self.low = 0
        self.range = _MASK
        self.out = bytearray()
        self._finished = False

    def encode(self, symbols: np.ndarray, cum: np.ndarray) -> None:
        """Encode alphabet indices against cum tables.

        cum is either one shared table of shape (A + 1,) or one row per
        symbol, shape (len(symbols), A + 1).
        """
        if self._finished:
            raise DomainError("encoder already finished")
        symbols = np.asarray(symbols, dtype=np.int64)
        if symbols.ndim != 1:
            raise ShapeError(f"symbols must be 1-d, got shape {symbols.shape}")
        if symbols.size == 0:
            return
        if cum.ndim == 1:
            alpha = cum.shape[0] - 1
            if symbols.min() < 0 or symbols.max() >= alpha:
                raise DomainError("symbol index outside the table alphabet")
            los = cum[symbols]
            his = cum[symbols + 1]
        elif cum.ndim == 2:
            if cum.shape[0] != symbols.shape[0]:
                raise ShapeError(
                    f"{symbols.shape[0]} symbols but {cum.shape[0]} table rows"
                )
            alpha = cum.shape[1] - 1
            if symbols.min() < 0 or symbols.max() >= alpha:
                raise DomainError("symbol index outside the table alphabet")
            pos = np.arange(symbols.shape[0])
            los = cum[pos, symbols]
            his = cum[pos, symbols + 1]
        else:
            raise ShapeError(f"cum table must be 1-d or 2-d, got {cum.shape}")

        low = self.low
        rng = self.range
        out = self.out
        for lo, hi in zip(los.tolist(), his.tolist()):
            r = rng >> 16
            low += r * lo
            rng = r * (hi - lo)
            while True:
                if (low ^ (low + rng)) < _TOP:
                    pass
                elif rng < _BOT:
                    rng = (-low) & (_BOT - 1)
                else:
                    break
                out.append((low >> 24) & 0xFF)
                low = (low << 8) & _MASK
                rng = rng << 8
        self.low = low
        self.range = rng

    def finish(self) -> bytes:
        if not self._finished:
            low = self.low
            for _ in range(4):
                self.out.append((low >> 24) & 0xFF)
                low = (low << 8) & _MASK
            self._finished = True
        return bytes(self.out)


class RangeDecoder:
    """Mirror of RangeEncoder; decode() in the same chunking order."""

    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0
        self.low = 0
        self.range = _MASK
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._byte()

    def _byte(self) -> int:
        if self.pos < len(self.data):
            b = self.data[self.pos]
            self.pos += 1
            return b
        return 0

    def decode(self, count: int, cum: np.ndarray) -> np.ndarray:
        """Decode `count` alphabet indices against cum tables (shared or per-symbol)."""
        if count == 0:
            return np.empty(0, dtype=np.int32)
        shared = cum.ndim == 1
        if not shared:
            if cum.ndim != 2:
                raise ShapeError(f"cum table must be 1-d or 2-d, got {cum.shape}")
            if cum.shape[0] != count:
                raise ShapeError(f"decoding {count} symbols but {cum.shape[0]} table rows")
        out = np.empty(count, dtype=np.int32)
        low = self.low
        rng = self.range
        code = self.code
        for i in range(count):
            row = cum if shared else cum[i]
            r = rng >> 16
            val = (code - low) // r
            if val > 0xFFFF:
                val = 0xFFFF
            s = int(np.searchsorted(row, val, side="right")) - 1
            lo = int(row[s])
            hi = int(row[s + 1])
            out[i] = s
            low += r * lo
            rng = r * (hi - lo)
            while True:
                if (low ^ (low + rng)) < _TOP:
                    pass
                elif rng < _BOT:
                    rng = (-low) & (_BOT - 1)
                else:
                    break
                code = ((code << 8) | self._byte()) & _MASK
                low = (low << 8) & _MASK
                rng = rng << 8
        self.low = low
        self.range = rng
        self.code = code
        return out


def encode_symbols(symbols: np.ndarray, cum: np.ndarray) -> bytes:
    """One-shot encode. An empty symbol array yields a valid 4-byte stream."""
    enc = RangeEncoder()
    enc.encode(np.asarray(symbols), cum)
    return enc.finish()


def decode_symbols(data: bytes, count: int, cum: np.ndarray) -> np.ndarray:
    """One-shot decode of `count` symbols from a stream made by encode_symbols."""
    if count < 0:
        raise DomainError(f"count must be non-negative, got {count}")
    if count == 0:
        return np.empty(0, dtype=np.int32)
    if len(data) < 4:
        raise TruncatedError(f"stream of {len(data)} bytes is shorter than the 4-byte tail")
    return RangeDecoder(data).decode(count, cum)
