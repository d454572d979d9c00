"""Universal N-block coder: tree part, raw prefix, KT arithmetic-coded payload.

Each N-block is coded on its own.  The encoder builds the block's selected
context set (floor 1/N', N' = floor(N^(1-delta)), depth t), writes it as m1,
writes the first t symbols raw as m2, and codes the rest as m3 with an
arithmetic coder driven by per-context KT estimates.  Every symbol uses the
deepest selected context matching its history, or a root estimator when none
matches.  The length function is L = L1 + L2 + L3.

Wire format (big-endian)::

    "ZCTC" | version u8 | A u16 | N u32 | t u32 | M u32
    per block: L1 u32 | L3 u32 | m1 bytes | m2 bytes | m3 bytes
    tail: count u32 | raw symbols, one byte each

m1 and m3 are bit-packed and zero-padded to a byte; m2 packs t symbols of
ceil(log2 A) bits and is padded likewise.  The tail holds the len % N symbols
that do not fill a block.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
import heapq
import math
import os
import struct

import numpy as np

from . import _kernels
from .errors import (DecodeError, FormatError, KraftViolationError,
                     ParameterError, SequenceTooShortError)
from .stats import EmpiricalModel, as_symbols, block_depth, block_entropy_full, symbol_bits
from .tree import block_anchors, block_selection, build_trie

MAGIC = b"ZCTC"
VERSION = 1
DEFAULT_DELTA = 0.25
_HEADER = struct.Struct(">4sBHIII")
_BLOCK = struct.Struct(">II")
_COUNT_BITS = 32


def _uint_bits(v: int, width: int) -> list:
    return [(v >> (width - 1 - k)) & 1 for k in range(width)]


def _read_uint(bits, pos: int, width: int) -> int:
    v = 0
    for k in range(width):
        v = (v << 1) | int(bits[pos + k])
    return v


def length_bits(t: int) -> int:
    """Bits for a context length 0..t."""
    return max(1, t.bit_length())


def reduced_block(N: int, delta) -> int:
    """N' = floor(N^(1-delta))."""
    if not 0 <= delta < 1:
        raise ParameterError("delta must be in [0, 1)")
    v = int(math.floor(N ** (1 - float(delta)) + 1e-9))
    return max(1, v)


# m1: the selected context set

def serialize_tree(contexts, t: int, A: int) -> np.ndarray:
    """Count (32 bits), then per context its length and symbols."""
    contexts = sorted(tuple(c) for c in contexts)
    lb, sb = length_bits(t), symbol_bits(A)
    out = _uint_bits(len(contexts), _COUNT_BITS)
    for c in contexts:
        if len(c) > t:
            raise ParameterError(f"context longer than t={t}")
        out += _uint_bits(len(c), lb)
        for s in c:
            out += _uint_bits(s, sb)
    return np.asarray(out, np.uint8)


def tree_bits(contexts, t: int, A: int) -> int:
    lb, sb = length_bits(t), symbol_bits(A)
    return _COUNT_BITS + sum(lb + len(c) * sb for c in contexts)


def tree_bound(n_contexts: int, t: int, A: int) -> int:
    """Worst-case m1 size for ``n_contexts`` contexts of depth <= t."""
    return _COUNT_BITS + n_contexts * (length_bits(t) + t * symbol_bits(A))


def deserialize_tree(bits, t: int, A: int, pos: int = 0):
    """Inverse of :func:`serialize_tree`; returns ``(contexts, end_pos)``."""
    lb, sb = length_bits(t), symbol_bits(A)
    n = len(bits)
    if pos + _COUNT_BITS > n:
        raise DecodeError("truncated tree header", pos)
    count = _read_uint(bits, pos, _COUNT_BITS)
    pos += _COUNT_BITS
    if count > (n - pos) // lb + 1:
        raise DecodeError("context count exceeds tree part", pos)
    contexts = []
    for _ in range(count):
        if pos + lb > n:
            raise DecodeError("truncated context length", pos)
        d = _read_uint(bits, pos, lb)
        pos += lb
        if d > t:
            raise DecodeError(f"context length {d} exceeds t={t}", pos)
        if pos + d * sb > n:
            raise DecodeError("truncated context symbols", pos)
        c = []
        for _ in range(d):
            s = _read_uint(bits, pos, sb)
            pos += sb
            if s >= A:
                raise DecodeError(f"context symbol {s} outside alphabet", pos)
            c.append(s)
        c = tuple(c)
        if contexts and c <= contexts[-1]:
            raise DecodeError("contexts not in canonical order", pos)
        contexts.append(c)
    return tuple(contexts), pos


# single block

@dataclass
class EncodedBlock:
    m1: np.ndarray
    m2: np.ndarray
    m3: np.ndarray
    contexts: tuple
    hu: float
    sb: int

    @property
    def L1(self) -> int:
        return int(self.m1.shape[0])

    @property
    def L2(self) -> int:
        return int(self.m2.shape[0]) * self.sb

    @property
    def L3(self) -> int:
        return int(self.m3.shape[0])

    @property
    def length(self) -> int:
        return self.L1 + self.L2 + self.L3


def _payload_buffer(n: int, A: int) -> np.ndarray:
    return np.empty(max(0, n) * ((2 * n + A).bit_length() + 4) + 64, np.uint8)


def encode_payload(X: np.ndarray, contexts, t: int, A: int) -> np.ndarray:
    rchild, rctx, maxd, n_ctx = build_trie(contexts, A)
    out = _payload_buffer(X.shape[0] - t, A)
    nbits = _kernels.kt_encode(X, t, A, rchild, rctx, maxd, n_ctx, out)
    return out[:nbits].copy()


def decode_payload(bits: np.ndarray, prefix: np.ndarray, n: int, contexts, A: int):
    rchild, rctx, maxd, n_ctx = build_trie(contexts, A)
    x, bad = _kernels.kt_decode(np.ascontiguousarray(bits, np.uint8),
                                np.ascontiguousarray(prefix, np.uint8),
                                n, A, rchild, rctx, maxd, n_ctx)
    if bad >= 0:
        raise DecodeError("payload decodes outside the alphabet", int(bad))
    return x


def encode_block(X_block, N_prime, t: int, A: int) -> EncodedBlock:
    """Code one block with floor 1/N' and depth t."""
    X = as_symbols(X_block, A)
    try:
        block_anchors(X.shape[0], t)
    except SequenceTooShortError as exc:
        raise ParameterError(str(exc)) from None
    pruned = block_selection(X, N_prime, t, A)
    m1 = serialize_tree(pruned.contexts, t, A)
    m3 = encode_payload(X, pruned.contexts, t, A)
    return EncodedBlock(m1, X[:t].copy(), m3, pruned.contexts, pruned.hu, symbol_bits(A))


def decode_block(block: EncodedBlock, N: int, t: int, A: int) -> np.ndarray:
    contexts, end = deserialize_tree(block.m1, t, A)
    if block.m2.shape[0] != t:
        raise DecodeError("prefix length mismatch")
    return decode_payload(block.m3, block.m2, N, contexts, A)


# stream container

@dataclass(frozen=True)
class CodecConfig:
    A: int
    N: int
    delta: float = DEFAULT_DELTA
    t: int | None = None

    @property
    def depth(self) -> int:
        return block_depth(self.N) if self.t is None else self.t

    @property
    def N_prime(self) -> int:
        return reduced_block(self.N, self.delta)

    def validate(self):
        if not 2 <= self.A <= 256:
            raise ParameterError("alphabet size must be in 2..256")
        if self.N < 2 or self.N >= 1 << 28:
            raise ParameterError("block length must be in 2..2^28")
        reduced_block(self.N, self.delta)
        t = self.depth
        if t < 1 or self.N // t < 2:
            raise ParameterError(f"depth {t} leaves fewer than two sub-blocks in N={self.N}")


def _threads() -> int:
    env = os.environ.get("CTZ_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ParameterError(f"bad CTZ_THREADS={env!r}") from None
    return os.cpu_count() or 1


def _pack(bits: np.ndarray) -> bytes:
    return np.packbits(bits).tobytes()


def _pack_symbols(sym: np.ndarray, sb: int) -> bytes:
    if sb == 8:
        return sym.tobytes()
    bits = np.unpackbits(sym.astype(np.uint8)[:, None], axis=1)[:, 8 - sb:]
    return _pack(bits.reshape(-1))


def _unpack_symbols(data: bytes, n: int, sb: int) -> np.ndarray:
    if sb == 8:
        return np.frombuffer(data, np.uint8)[:n].copy()
    bits = np.unpackbits(np.frombuffer(data, np.uint8))[: n * sb].reshape(n, sb)
    padded = np.zeros((n, 8), np.uint8)
    padded[:, 8 - sb:] = bits
    return np.packbits(padded, axis=1).reshape(-1)


def _map_blocks(fn, items):
    workers = min(_threads(), len(items))
    if workers <= 1:
        return [fn(b) for b in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def encode(x, config: CodecConfig, with_report=False):
    """Compress ``x``; returns bytes (and per-block records if requested)."""
    config.validate()
    A, N, t = config.A, config.N, config.depth
    x = as_symbols(x, A)
    M = x.shape[0] // N
    if M < 1:
        raise ParameterError(f"input has {x.shape[0]} symbols, fewer than N={N}")
    Np = config.N_prime
    blocks = _map_blocks(lambda j: encode_block(x[j * N:(j + 1) * N], Np, t, A), list(range(M)))
    sb = symbol_bits(A)
    parts = [_HEADER.pack(MAGIC, VERSION, A, N, t, M)]
    for b in blocks:
        parts.append(_BLOCK.pack(b.L1, b.L3))
        parts.append(_pack(b.m1))
        parts.append(_pack_symbols(b.m2, sb))
        parts.append(_pack(b.m3))
    tail = x[M * N:]
    parts.append(struct.pack(">I", tail.shape[0]))
    parts.append(tail.tobytes())
    data = b"".join(parts)
    if with_report:
        return data, blocks
    return data


def read_header(data: bytes):
    if len(data) < _HEADER.size:
        raise FormatError("stream shorter than header")
    magic, version, A, N, t, M = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if not 2 <= A <= 256 or N < 2 or t < 1 or N // t < 2:
        raise FormatError("inconsistent header parameters")
    return A, N, t, M


def decode(data: bytes) -> np.ndarray:
    data = bytes(data)
    A, N, t, M = read_header(data)
    sb = symbol_bits(A)
    n2 = (t * sb + 7) // 8
    pos = _HEADER.size
    jobs = []
    for j in range(M):
        if pos + _BLOCK.size > len(data):
            raise DecodeError(f"truncated block {j} header", pos)
        L1, L3 = _BLOCK.unpack_from(data, pos)
        pos += _BLOCK.size
        n1, n3 = (L1 + 7) // 8, (L3 + 7) // 8
        end = pos + n1 + n2 + n3
        if end > len(data):
            raise DecodeError(f"truncated block {j}", len(data))
        jobs.append((pos, L1, L3))
        pos = end
    if pos + 4 > len(data):
        raise DecodeError("missing tail", pos)
    (ntail,) = struct.unpack_from(">I", data, pos)
    pos += 4
    if ntail >= N or pos + ntail != len(data):
        raise DecodeError("bad tail length", pos)
    tail = np.frombuffer(data, np.uint8, count=ntail, offset=pos)
    if ntail and int(tail.max()) >= A:
        raise DecodeError("tail symbol outside alphabet", pos)

    def one(job):
        p, L1, L3 = job
        n1, n3 = (L1 + 7) // 8, (L3 + 7) // 8
        m1 = np.unpackbits(np.frombuffer(data, np.uint8, count=n1, offset=p))[:L1]
        contexts, used = deserialize_tree(m1, t, A)
        if used != L1:
            raise DecodeError("tree part length mismatch", p)
        prefix = _unpack_symbols(data[p + n1:p + n1 + n2], t, sb)
        if int(prefix.max()) >= A:
            raise DecodeError("prefix symbol outside alphabet", p + n1)
        m3 = np.unpackbits(np.frombuffer(data, np.uint8, count=n3, offset=p + n1 + n2))[:L3]
        return decode_payload(m3, prefix, N, contexts, A)

    out = _map_blocks(one, jobs)
    return np.concatenate(out + [tail]).astype(np.uint8)


# length functions and the worst-phase measure

class LengthFunction:
    """Codeword length in bits of an N-vector."""

    N: int
    A: int

    def __call__(self, block) -> int:
        raise NotImplementedError

    def kraft_sum(self):
        """Exact Kraft sum when it can be computed, else None."""
        return None


class RawLength(LengthFunction):
    """Fixed-rate code, ceil(log2 A) bits per symbol."""

    def __init__(self, N: int, A: int):
        self.N, self.A = N, A

    def __call__(self, block) -> int:
        return symbol_bits(self.A) * len(block)

    def kraft_sum(self):
        return Fraction(self.A ** self.N, 2 ** (symbol_bits(self.A) * self.N))


class TableLength(LengthFunction):
    """Lengths from an explicit table of N-vectors."""

    def __init__(self, N: int, A: int, table: dict):
        self.N, self.A = N, A
        self.table = {tuple(int(s) for s in k): int(v) for k, v in table.items()}

    def __call__(self, block) -> int:
        key = tuple(int(s) for s in block)
        try:
            return self.table[key]
        except KeyError:
            raise ParameterError(f"vector {key} has no codeword") from None

    def kraft_sum(self):
        return sum((Fraction(1, 2 ** v) for v in self.table.values()), Fraction(0))


def huffman_lengths(weights: dict) -> dict:
    """Huffman code lengths for ``{symbol: weight}``; a single symbol gets 1 bit."""
    items = sorted(weights.items())
    if len(items) == 1:
        return {items[0][0]: 1}
    heap = [(w, k, [sym]) for k, (sym, w) in enumerate(items)]
    heapq.heapify(heap)
    depth = {sym: 0 for sym, _ in items}
    tick = len(heap)
    while len(heap) > 1:
        w1, _, s1 = heapq.heappop(heap)
        w2, _, s2 = heapq.heappop(heap)
        for s in s1 + s2:
            depth[s] += 1
        heapq.heappush(heap, (w1 + w2, tick, s1 + s2))
        tick += 1
    return depth


def huffman_length_function(model: EmpiricalModel) -> TableLength:
    """Huffman code for the N-vector measure of ``model``."""
    from .stats import window_table
    tab = window_table(model.x, model.N, model.denominator)
    return TableLength(model.N, model.A, huffman_lengths(tab))


class CodecLength(LengthFunction):
    """L = L1 + L2 + L3 of the block coder."""

    def __init__(self, N: int, A: int, delta=DEFAULT_DELTA, t: int | None = None):
        self.config = CodecConfig(A, N, delta, t)
        self.config.validate()
        self.N, self.A = N, A
        self._cached = lru_cache(maxsize=1 << 16)(self._length)

    def _length(self, key: bytes) -> int:
        X = np.frombuffer(key, np.uint8)
        return encode_block(X, self.config.N_prime, self.config.depth, self.A).length

    def __call__(self, block) -> int:
        return self._cached(np.asarray(block, np.uint8).tobytes())


def boundary_length(n: int, A: int) -> int:
    """Raw code for a short vector, with one extra bit."""
    return symbol_bits(A) * n + 1


def rho(X, N: int, M: int, L: LengthFunction, A: int | None = None) -> float:
    """Worst-phase compression of ``X[:N*M]`` under ``L`` in bits per letter."""
    X = np.asarray(X, np.uint8)
    A = L.A if A is None else A
    if N < 2:
        raise ParameterError("N must be at least 2")
    if M < 2 or X.shape[0] < N * M:
        raise SequenceTooShortError(f"need N*M={N * M} symbols with M >= 2")
    worst = None
    for i in range(1, N):
        total = boundary_length(i, A) + boundary_length(N - i, A)
        for j in range(M - 1):
            total += L(X[i + j * N:i + (j + 1) * N])
        if worst is None or total > worst:
            worst = total
    return worst / (N * M)


@dataclass
class RateBoundReport:
    rho: float
    block_entropy: float
    margin: float
    kraft: Fraction | None

    @property
    def holds(self) -> bool:
        return self.margin >= 0


def check_rate_bound(X, N: int, M: int, L: LengthFunction) -> RateBoundReport:
    """Compare the worst-phase rate with H_MN(N); rejects non-Kraft L first."""
    kraft = L.kraft_sum()
    if kraft is not None and kraft > 1:
        raise KraftViolationError(f"Kraft sum {float(kraft)} exceeds 1")
    model = EmpiricalModel(np.asarray(X, np.uint8)[:N * M], N, L.A, t=0)
    H = block_entropy_full(model)
    r = rho(X, N, M, L)
    return RateBoundReport(r, H, r - H, kraft)


def accounting_bound(block: EncodedBlock, N: int, t: int, A: int) -> float:
    """N*H_u + m1 format bound + t*ceil(log2 A) + 64 bits."""
    return (N * block.hu + tree_bound(len(block.contexts), t, A)
            + t * symbol_bits(A) + 64)
