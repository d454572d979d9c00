"""Phase-averaged empirical measures and entropies of individual sequences.

A sequence ``x`` of length at least ``M*N`` is cut to ``x[:M*N]``.  For an
l-vector ``Z`` the phase-``i`` measure counts the windows starting at the
0-based offsets ``(i-1) + j*N`` for ``j = 0..M-2``, and the averaged measure
``P_MN(Z, N)`` is the mean of the N phase measures.  Equivalently it is the
count of ``Z`` over the starts ``0 .. (M-1)*N - 1`` divided by ``(M-1)*N``,
which is how it is computed here.
"""

from dataclasses import dataclass
from fractions import Fraction
import math

import numpy as np

from ._kernels import entropy_bits
from .errors import (DepthExceededError, InsufficientBlocksError,
                     ParameterError, SequenceTooShortError,
                     UnseenContextError)


@dataclass(frozen=True)
class Alphabet:
    size: int

    def __post_init__(self):
        if not 2 <= self.size <= 256:
            raise ParameterError(f"alphabet size must be in 2..256, got {self.size}")

    @property
    def bits(self) -> int:
        """Bits per raw symbol, ceil(log2 A)."""
        return symbol_bits(self.size)


def symbol_bits(A: int) -> int:
    return (A - 1).bit_length()


def as_symbols(seq, A: int) -> np.ndarray:
    """Validate ``seq`` as symbols ``0..A-1`` and return a uint8 array."""
    Alphabet(A)
    if isinstance(seq, (bytes, bytearray, memoryview)):
        arr = np.frombuffer(bytes(seq), dtype=np.uint8)
    else:
        arr = np.asarray(seq)
        if arr.dtype.kind not in "iub":
            raise ParameterError("symbols must be integers")
        if arr.size and (arr.min() < 0 or arr.max() >= A):
            raise ParameterError(f"symbol outside 0..{A - 1}")
        arr = arr.astype(np.uint8)
    if arr.ndim != 1:
        raise ParameterError("sequence must be one-dimensional")
    if arr.size and int(arr.max()) >= A:
        raise ParameterError(f"symbol {int(arr.max())} outside 0..{A - 1}")
    return np.ascontiguousarray(arr)


def letters(text: str) -> np.ndarray:
    """'abba' -> [0, 1, 1, 0]; convenience for small examples."""
    return np.frombuffer(text.encode("ascii"), dtype=np.uint8) - ord("a")


def default_depth(N: int) -> int:
    """Context depth ceil((log2 N)^2), capped at N."""
    if N < 2:
        return 0
    return min(math.ceil(math.log2(N) ** 2), N)


def block_depth(N: int) -> int:
    """Depth used inside a single N-block: at least two stride-t sub-blocks."""
    if N < 2:
        return 0
    return max(1, min(math.ceil(math.log2(N) ** 2), N // 2))


def window_ranks(x: np.ndarray, ell: int) -> np.ndarray:
    """Lexicographic rank of every length-``ell`` window of ``x``.

    Equal windows get equal ranks.  Uses prefix doubling so the comparison is
    exact for any window length.
    """
    n = x.shape[0] - ell + 1
    if ell < 1 or n < 1:
        return np.zeros(0, np.int64)
    _, rank = np.unique(x, return_inverse=True)
    rank = rank.astype(np.int64)
    span = 1
    while span < ell:
        step = min(span, ell - span)
        # windows of length span+step from (rank at i, rank at i+step)
        m = rank.shape[0] - step
        key = rank[:m] * (int(rank.max()) + 1) + rank[step:step + m]
        _, rank = np.unique(key, return_inverse=True)
        rank = rank.astype(np.int64)
        span += step
    return rank[:n]


def _entropy(counts) -> float:
    return float(entropy_bits(np.asarray(counts, dtype=np.int64)))


class EmpiricalModel:
    """Phase-averaged window statistics of ``x[:M*N]`` up to depth ``t``.

    Instances are immutable after construction; per-length window tables are
    computed on first use and cached.
    """

    def __init__(self, x, N: int, A: int, t: int | None = None):
        x = as_symbols(x, A)
        if N < 1:
            raise ParameterError("N must be positive")
        M = x.shape[0] // N
        if M < 1:
            raise SequenceTooShortError(f"need at least N={N} symbols, got {x.shape[0]}")
        self.A = A
        self.N = N
        self.M = M
        self.t = default_depth(N) if t is None else t
        if not 0 <= self.t <= N:
            raise ParameterError(f"depth must be in 0..N, got {self.t}")
        self.x = x[: M * N].copy()
        self.x.setflags(write=False)
        self._tables = {}

    @property
    def length(self) -> int:
        return self.M * self.N

    @property
    def denominator(self) -> int:
        """Number of window starts contributing to P_MN, (M-1)*N."""
        return (self.M - 1) * self.N

    def _check(self, ell: int, allow_block=False):
        if self.M < 2:
            raise InsufficientBlocksError(f"need M >= 2 blocks, have {self.M}")
        if ell < 0 or (ell > self.t and not (allow_block and ell == self.N)):
            raise DepthExceededError(f"length {ell} outside 0..{self.t}")

    def table(self, ell: int) -> dict:
        """``{window tuple: count}`` over the starts ``0..(M-1)N-1``."""
        self._check(ell, allow_block=True)
        tab = self._tables.get(ell)
        if tab is None:
            tab = window_table(self.x, ell, self.denominator)
            self._tables[ell] = tab
        return tab

    def count(self, Z) -> int:
        Z = tuple(int(s) for s in Z)
        if len(Z) == 0:
            self._check(0)
            return self.denominator
        return self.table(len(Z)).get(Z, 0)

    def probability(self, Z) -> Fraction:
        return Fraction(self.count(Z), self.denominator)

    def phase_probability(self, Z, i: int) -> Fraction:
        Z = np.asarray(Z, dtype=np.uint8)
        ell = Z.shape[0]
        self._check(ell)
        if not 1 <= i <= self.N:
            raise ParameterError(f"phase must be in 1..N, got {i}")
        hits = 0
        for j in range(self.M - 1):
            s = i - 1 + j * self.N
            if np.array_equal(self.x[s:s + ell], Z):
                hits += 1
        return Fraction(hits, self.M - 1)

    def successor_counts(self, z) -> np.ndarray:
        """Counts of ``z.a`` for each symbol ``a`` (window starts as in P_MN)."""
        z = tuple(int(s) for s in z)
        k = len(z)
        self._check(k + 1)
        out = np.zeros(self.A, np.int64)
        for key, c in self.table(k + 1).items():
            if key[:k] == z:
                out[key[k]] += c
        return out

    def block_entropy(self, ell: int) -> float:
        tab = self.table(ell)
        return _entropy(list(tab.values())) / ell

    def conditional_entropy(self, z) -> float:
        succ = self.successor_counts(z)
        if succ.sum() == 0:
            raise UnseenContextError(f"context {tuple(z)} never occurs")
        return _entropy(succ)


def window_table(x: np.ndarray, ell: int, starts: int) -> dict:
    """Counts of the length-``ell`` windows of ``x`` starting below ``starts``."""
    if ell == 0:
        return {(): starts}
    ranks = window_ranks(x, ell)[:starts]
    counts = np.bincount(ranks)
    first = np.full(counts.shape[0], -1, np.int64)
    # first occurrence of every rank, for recovering the window content
    order = np.argsort(ranks, kind="stable")
    r_sorted = ranks[order]
    head = np.r_[True, r_sorted[1:] != r_sorted[:-1]]
    first[r_sorted[head]] = order[head]
    out = {}
    for r in np.nonzero(counts)[0]:
        s = first[r]
        out[tuple(int(v) for v in x[s:s + ell])] = int(counts[r])
    return out


def window_counts(x: np.ndarray, ell: int, starts: int) -> np.ndarray:
    """Multiset of window counts only (no contents), for long windows."""
    ranks = window_ranks(x, ell)[:starts]
    counts = np.bincount(ranks)
    return counts[counts > 0]


def block_entropy_full(model: EmpiricalModel) -> float:
    """H_MN(N): entropy of the N-vector measure, per letter."""
    model._check(model.N, allow_block=True)
    counts = window_counts(model.x, model.N, model.denominator)
    return _entropy(counts) / model.N


# Function-style API mirroring the documented operations.

def phase_empirical_probability(model: EmpiricalModel, Z, ell: int, i: int) -> Fraction:
    if len(Z) != ell:
        raise ParameterError("len(Z) must equal ell")
    return model.phase_probability(Z, i)


def empirical_probability(model: EmpiricalModel, Z, ell: int) -> Fraction:
    if len(Z) != ell:
        raise ParameterError("len(Z) must equal ell")
    model._check(ell)
    return model.probability(Z)


def block_entropy(model: EmpiricalModel, ell: int) -> float:
    if ell == model.N and ell > model.t:
        return block_entropy_full(model)
    return model.block_entropy(ell)


def conditional_entropy(model: EmpiricalModel, z) -> float:
    return model.conditional_entropy(z)
