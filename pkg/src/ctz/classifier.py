"""Context-tree classifier for N-vectors with an O(N) signature.

Training reduces a long sequence to the selected context set of its model
tree, the successor counts of those contexts, H_min and a threshold eps'.
A test vector Z is scored by

    Delta = h_u(Z) - min(H_u(Z), H_min)

where h_u is the cross-entropy of Z's symbols under the stored conditionals
(each symbol uses the deepest stored context matching its history) and
H_u(Z) is Z's own weighted minimum entropy with floor 1/N', N' = N^(1-eps).
Z is accepted when Delta <= eps'.  Training windows and test vectors go
through the same compiled routine, so the calibrated acceptance rate on the
training windows is exact.
"""

from dataclasses import dataclass, field
from fractions import Fraction
import itertools
import math
import struct

import numpy as np

from . import _kernels
from .errors import (DecodeError, FormatError, InsufficientTrainingError,
                     ParameterError, RadiusTooLargeError)
from .stats import EmpiricalModel, as_symbols, block_depth, window_counts
from .tree import block_anchors, build_trie, fast_tree

MAGIC = b"ZSIG"
VERSION = 1
DEFAULT_EPSILON = Fraction(1, 10)
DEFAULT_PENALTY = 64.0
MAX_BALL_N = 20
_HEADER = struct.Struct(">4sBHIIIdd")
_Q32 = 1 << 32


def _fraction(eps) -> Fraction:
    if isinstance(eps, float):
        eps = Fraction(str(eps))
    return Fraction(eps)


def power_floor(N: int, exponent) -> int:
    """floor(N ** exponent), at least 1."""
    return max(1, int(math.floor(N ** float(exponent) + 1e-9)))


def analytic_threshold(N: int, eps) -> float:
    """eps^2 / 2 + N^(-eps)."""
    eps = float(eps)
    return 0.5 * eps * eps + N ** (-eps)


def h_min(X, N: int, tolerance, A: int | None = None) -> float:
    """(1/N) log2 of the smallest set of most probable N-vectors of mass >= 1 - tolerance."""
    X = np.asarray(X)
    if A is None:
        A = max(2, int(X.max()) + 1)
    X = as_symbols(X, A)
    if X.shape[0] < 2 * N:
        raise InsufficientTrainingError(f"need at least 2N={2 * N} training symbols")
    tol = _fraction(tolerance)
    if not 0 < tol < 1:
        raise ParameterError("tolerance must be in (0, 1)")
    model = EmpiricalModel(X, N, A, t=0)
    W = model.denominator
    counts = np.sort(window_counts(model.x, N, W))[::-1]
    cum = np.cumsum(counts)
    need = (tol.denominator - tol.numerator) * W
    k = int(np.searchsorted(cum * tol.denominator >= need, True)) + 1
    return math.log2(k) / N


@dataclass(eq=False)
class Signature:
    A: int
    N: int
    t: int
    eps: Fraction
    contexts: tuple
    counts: np.ndarray
    h_min: float
    eps_prime: float
    smoothing: str = "kt"
    penalty: float = DEFAULT_PENALTY
    train_hu: float | None = field(default=None, compare=False)
    # fraction of training windows accepted, recorded by calibration
    train_acceptance: float | None = field(default=None, compare=False)

    def __eq__(self, other):
        if not isinstance(other, Signature):
            return NotImplemented
        return ((self.A, self.N, self.t, self.eps, tuple(self.contexts), self.h_min,
                 self.eps_prime, self.smoothing, self.penalty)
                == (other.A, other.N, other.t, other.eps, tuple(other.contexts), other.h_min,
                    other.eps_prime, other.smoothing, other.penalty)
                and np.array_equal(self.counts, other.counts))

    @property
    def N_dprime(self) -> int:
        return power_floor(self.N, 1 - 2 * self.eps)

    @property
    def N_prime(self) -> int:
        """Floor inverse for the test vector's own tree, N^(1-eps)."""
        return power_floor(self.N, 1 - self.eps)

    @property
    def size(self) -> int:
        """Stored integers: A counts plus the symbols of every context."""
        return sum(self.A + len(c) for c in self.contexts)

    def conditional(self, k: int) -> np.ndarray:
        row = self.counts[k]
        return row / row.sum()

    def cost_table(self) -> np.ndarray:
        """-log2 q(a | context) for every stored context, flattened."""
        c = self.counts.astype(np.float64)
        tot = c.sum(axis=1, keepdims=True)
        if self.smoothing == "kt":
            q = (c + 0.5) / (tot + self.A / 2)
            cost = -np.log2(q)
        elif self.smoothing == "none":
            with np.errstate(divide="ignore", invalid="ignore"):
                cost = -np.log2(c / tot)
            cost[~np.isfinite(cost)] = self.penalty
        else:
            raise ParameterError(f"unknown smoothing {self.smoothing!r}")
        return np.ascontiguousarray(cost.reshape(-1))

    def _scorer(self):
        cached = getattr(self, "_cache", None)
        if cached is None or cached[0] != self.smoothing:
            rchild, rctx, maxd, n_ctx = build_trie(self.contexts, self.A)
            if n_ctx != len(self.contexts):
                raise ParameterError("signature must store the root context")
            cached = (self.smoothing, rchild, rctx, maxd, self.cost_table())
            self._cache = cached
        return cached[1:]

    def window_scores(self, x, starts) -> tuple[np.ndarray, np.ndarray]:
        """(h_u, H_u) of the N-windows of ``x`` starting at ``starts``."""
        rchild, rctx, maxd, cost = self._scorer()
        x = np.ascontiguousarray(x, np.uint8)
        starts = np.ascontiguousarray(starts, np.int64)
        return _kernels.window_scores(x, starts, self.N, self.t, self.A, self.N_prime, 1,
                                      rchild, rctx, maxd, cost)

    def deltas(self, x, starts) -> np.ndarray:
        hx, hs = self.window_scores(x, starts)
        return hx - np.minimum(hs, self.h_min)

    @property
    def escape(self) -> bool:
        """Accept everything when the rate bound already exceeds log2 A."""
        return self.h_min + self.eps_prime > math.log2(self.A)

    # binary form

    def to_bytes(self) -> bytes:
        q = int(self.eps * _Q32)
        parts = [_HEADER.pack(MAGIC, VERSION, self.A, self.N, self.t, q,
                              float(self.h_min), float(self.eps_prime)),
                 struct.pack(">I", len(self.contexts))]
        for c, row in zip(self.contexts, self.counts):
            parts.append(struct.pack(">H", len(c)))
            parts.append(bytes(c))
            parts.append(np.asarray(row, ">u8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Signature":
        if len(data) < _HEADER.size + 4:
            raise FormatError("signature shorter than header")
        magic, version, A, N, t, q, hm, ep = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"unsupported version {version}")
        if not 2 <= A <= 256 or N < 2 or t < 1:
            raise FormatError("inconsistent header parameters")
        # the file keeps eps in Q0.32; recover the small fraction it encodes
        eps = Fraction(q, _Q32).limit_denominator(10000)
        pos = _HEADER.size
        (n,) = struct.unpack_from(">I", data, pos)
        pos += 4
        contexts, rows = [], []
        for _ in range(n):
            if pos + 2 > len(data):
                raise DecodeError("truncated context record", pos)
            (d,) = struct.unpack_from(">H", data, pos)
            pos += 2
            end = pos + d + 8 * A
            if d > t or end > len(data):
                raise DecodeError("bad context record", pos)
            c = tuple(data[pos:pos + d])
            if any(s >= A for s in c):
                raise DecodeError("context symbol outside alphabet", pos)
            contexts.append(c)
            rows.append(np.frombuffer(data, ">u8", count=A, offset=pos + d).astype(np.int64))
            pos = end
        if pos != len(data):
            raise DecodeError("trailing bytes after signature", pos)
        counts = np.array(rows, np.int64).reshape(n, A)
        return cls(A, N, t, eps, tuple(contexts), counts, hm, ep)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Signature":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def build_signature(X, N: int, eps=DEFAULT_EPSILON, A: int | None = None,
                    t: int | None = None, smoothing: str = "kt",
                    calibrate: bool = True) -> Signature:
    """Signature of a training sequence for N-vectors."""
    X = np.asarray(X)
    if A is None:
        A = max(2, int(X.max()) + 1)
    X = as_symbols(X, A)
    eps = _fraction(eps)
    if not 0 < eps < Fraction(1, 2):
        raise ParameterError("epsilon must be in (0, 1/2)")
    m = X.shape[0]
    if m < 2 * N:
        raise InsufficientTrainingError(f"need at least 2N={2 * N} training symbols, got {m}")
    t = block_depth(N) if t is None else t
    if t < 1 or N // t < 2:
        raise ParameterError(f"depth {t} leaves fewer than two sub-blocks in N={N}")
    M = m // N
    Ndd = power_floor(N, 1 - 2 * eps)
    x = X[:M * N]
    lo, hi = t, M * N
    W = hi - lo
    # first pass: contexts occurring at least M*N'' times; second pass: selection
    tree = fast_tree(x, lo, hi, Ndd, t, A, member=(W, M * Ndd), occurrences=True)
    ids = set(int(v) for v in tree.chosen_ids()) | {0}
    pairs = sorted((tree.context(v), v) for v in ids)
    contexts = tuple(c for c, _ in pairs)
    counts = np.array([tree.succ[v] for _, v in pairs], np.int64)
    sig = Signature(A, N, t, eps, contexts, counts, h_min(X, N, eps / 2, A),
                    analytic_threshold(N, eps), smoothing, train_hu=float(tree.hu))
    if calibrate:
        sig.eps_prime = calibrate_epsilon_prime(X, sig, eps)
    return sig


def _training_deltas(X, sig: Signature) -> np.ndarray:
    return sig.deltas(X, np.arange(X.shape[0] - sig.N + 1))


def calibrate_epsilon_prime(X_train, sig: Signature, eps=None) -> float:
    """(1-eps)-quantile of Delta over all training windows, floored analytically.

    Also records the resulting training acceptance on ``sig``.
    """
    eps = sig.eps if eps is None else _fraction(eps)
    X = as_symbols(X_train, sig.A)
    raw = _training_deltas(X, sig)
    d = np.sort(raw)
    n = d.shape[0]
    k = math.ceil((1 - eps) * n)
    thr = max(float(d[k - 1]), analytic_threshold(sig.N, eps))
    sig.train_acceptance = float(np.mean(raw <= thr))
    return thr


def training_acceptance(X_train, sig: Signature) -> float:
    X = as_symbols(X_train, sig.A)
    if sig.escape:
        return 1.0
    return float(np.mean(_training_deltas(X, sig) <= sig.eps_prime))


@dataclass
class ClassificationResult:
    delta: float
    accept: bool
    h_u: float
    self_hu: float
    escape: bool = False
    eps2: float = 0.0


def _check_vector(Z, sig: Signature) -> np.ndarray:
    Z = as_symbols(Z, sig.A)
    if Z.shape[0] != sig.N:
        raise ParameterError(f"test vector has {Z.shape[0]} symbols, expected N={sig.N}")
    return Z


def cross_entropy_h_u(Z, sig: Signature) -> float:
    Z = _check_vector(Z, sig)
    return float(sig.window_scores(Z, [0])[0][0])


def hamming_ball(Z: np.ndarray, mu: int, A: int) -> np.ndarray:
    """All vectors within Hamming distance ``mu`` of ``Z``, one per row."""
    N = Z.shape[0]
    rows = [Z.copy()]
    for k in range(1, min(mu, N) + 1):
        for pos in itertools.combinations(range(N), k):
            alts = [[a for a in range(A) if a != Z[p]] for p in pos]
            for sym in itertools.product(*alts):
                r = Z.copy()
                r[list(pos)] = sym
                rows.append(r)
    return np.array(rows, np.uint8)


def delta(Z, sig: Signature, mu: int = 0) -> ClassificationResult:
    """Score ``Z`` (or the best vector within Hamming distance mu)."""
    Z = _check_vector(Z, sig)
    if mu < 0:
        raise ParameterError("mu must be non-negative")
    if mu > 0 and sig.N > MAX_BALL_N:
        raise RadiusTooLargeError(f"exhaustive search needs N <= {MAX_BALL_N}")
    ball = hamming_ball(Z, mu, sig.A) if mu > 0 else Z[None, :]
    hx, hs = sig.window_scores(ball.reshape(-1), np.arange(ball.shape[0]) * sig.N)
    d = hx - np.minimum(hs, sig.h_min)
    k = int(np.argmin(d))
    escape = sig.escape
    accept = bool(escape or d[k] <= sig.eps_prime)
    eps2 = math.log2(ball.shape[0]) / sig.N
    return ClassificationResult(float(d[k]), accept, float(hx[k]), float(hs[k]), escape, eps2)


classify = delta


def classify_many(Zs: np.ndarray, sig: Signature) -> np.ndarray:
    """Accept flags for the rows of ``Zs`` (mu = 0)."""
    Zs = np.ascontiguousarray(Zs, np.uint8)
    if Zs.ndim != 2 or Zs.shape[1] != sig.N:
        raise ParameterError("expected an array of N-vectors")
    if sig.escape:
        return np.ones(Zs.shape[0], bool)
    d = sig.deltas(Zs.reshape(-1), np.arange(Zs.shape[0]) * sig.N)
    return d <= sig.eps_prime


def resolved_counts(Z, sig: Signature) -> np.ndarray:
    """Successor counts of Z's anchors grouped by resolved stored context."""
    Z = _check_vector(Z, sig)
    index = {c: k for k, c in enumerate(sig.contexts)}
    lo, hi = block_anchors(sig.N, sig.t)
    out = np.zeros((len(sig.contexts), sig.A), np.int64)
    maxd = max(len(c) for c in sig.contexts)
    for e in range(lo, hi):
        best = index[()]
        for d in range(1, maxd + 1):
            k = index.get(tuple(int(s) for s in Z[e - d:e]))
            if k is not None:
                best = k
        out[best, Z[e]] += 1
    return out


def self_entropy(Z, sig: Signature) -> float:
    """Z's own conditional entropy over the signature's resolved contexts."""
    rc = resolved_counts(Z, sig)
    W = rc.sum()
    return float(sum(row.sum() * _kernels.entropy_bits(row) for row in rc) / W)


# common-ancestor test

def kl_bits(p: np.ndarray, q: np.ndarray) -> float:
    """D(p || q) in bits; infinite when p puts mass where q has none."""
    nz = p > 0
    if np.any(q[nz] <= 0):
        return math.inf
    return float(np.sum(p[nz] * np.log2(p[nz] / q[nz])))


_GOLDEN = (math.sqrt(5) - 1) / 2


def minmax_divergence(p, q, iterations: int = 200) -> tuple[float, float]:
    """min over lambda of max(D(p||P), D(q||P)) with P = (1-lambda) p + lambda q.

    The minimiser of the max over all P lies on this segment, so the line
    search is exact up to its tolerance.  Returns (value, lambda).
    """
    p = np.asarray(p, float)
    q = np.asarray(q, float)

    def f(lam):
        m = (1 - lam) * p + lam * q
        return max(kl_bits(p, m), kl_bits(q, m))

    a, b = 0.0, 1.0
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iterations):
        if b - a < 1e-15:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    best = min(((f(lam), lam) for lam in (0.0, a, (a + b) / 2, b, 1.0)), key=lambda r: r[0])
    return best


def simplex_grid(A: int, steps: int) -> np.ndarray:
    """All distributions on A symbols with probabilities in multiples of 1/steps."""
    pts = [c for c in itertools.product(range(steps + 1), repeat=A - 1) if sum(c) <= steps]
    arr = np.array([list(c) + [steps - sum(c)] for c in pts], float)
    return arr / steps


def grid_minmax_divergence(p, q, steps: int | None = None) -> float:
    """Exhaustive min over a simplex grid of max(D(p||P), D(q||P)); A <= 4."""
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    A = p.shape[0]
    if A > 4:
        raise ParameterError("grid search supports A <= 4")
    steps = steps or {2: 4000, 3: 300, 4: 60}[A]
    P = simplex_grid(A, steps)

    def div(r):
        nz = r > 0
        with np.errstate(divide="ignore"):
            logs = np.log2(r[nz] / P[:, nz])
        return np.sum(r[nz] * logs, axis=1)

    return float(np.min(np.maximum(div(p), div(q))))


@dataclass
class AncestorResult:
    accept: bool
    witness: tuple | None
    divergence: float
    laws: dict
    tested: int
    grid_gap: float = 0.0


def _context_laws(x: np.ndarray, eps: Fraction, t: int, A: int) -> dict:
    N = x.shape[0]
    lo, hi = block_anchors(N, t)
    K = Fraction(N ** (1 - float(eps))).limit_denominator(1000)
    tree = fast_tree(x, lo, hi, K, t, A)
    return {tree.context(v): tree.succ[v] for v in range(1, tree.count.shape[0])}


def common_ancestor_test(Y, Z, eps, A: int | None = None, t: int | None = None,
                         cross_check: bool = True) -> AncestorResult:
    """Is there one conditional law within eps (bits) of both sequences on every context?

    Contexts are those of length 1..t with probability >= 1/N^(1-eps) in
    either sequence.  A context seen on one side only is feasible with that
    side's own law.  The witness is the first infeasible context in canonical
    order.
    """
    Y, Z = np.asarray(Y), np.asarray(Z)
    if A is None:
        A = max(2, int(max(Y.max(), Z.max())) + 1)
    Y, Z = as_symbols(Y, A), as_symbols(Z, A)
    if Y.shape[0] != Z.shape[0]:
        raise ParameterError("sequences must have equal length")
    eps = _fraction(eps)
    N = Y.shape[0]
    t = block_depth(N) if t is None else t
    ly, lz = _context_laws(Y, eps, t, A), _context_laws(Z, eps, t, A)
    laws = {}
    gap = 0.0
    worst = 0.0
    for ctx in sorted(set(ly) | set(lz)):
        cy, cz = ly.get(ctx), lz.get(ctx)
        if cy is None or cz is None:
            row = cy if cz is None else cz
            laws[ctx] = row / row.sum()
            continue
        p, q = cy / cy.sum(), cz / cz.sum()
        if np.array_equal(p, q):
            laws[ctx] = p
            continue
        # fixed argument order keeps the test exactly symmetric
        if tuple(cz) < tuple(cy):
            p, q = q, p
        value, lam = minmax_divergence(p, q)
        if cross_check and A <= 4:
            gap = min(gap, grid_minmax_divergence(p, q) - value)
        worst = max(worst, value)
        if value > float(eps):
            return AncestorResult(False, ctx, value, {}, len(laws) + 1, gap)
        laws[ctx] = (1 - lam) * p + lam * q
    return AncestorResult(True, None, worst, laws, len(laws), gap)
