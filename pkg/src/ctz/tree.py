"""Context trees, the K1 depth rule and the minimum-entropy context selection.

Conventions.  A context is a tuple of symbols in chronological order, so the
context of depth ``d`` for the symbol ``x[e]`` is ``tuple(x[e-d:e])``.  Its
parent is the context with the oldest symbol dropped.  Statistics are taken
over an "anchor" range of predicted positions ``lo..hi-1`` with ``lo >= t``,
which makes successor counts sum to the context count and child counts sum
to the parent count exactly.

Two anchor ranges are used:

* inside one block of length N with depth t, the stride-t measure with
  ``M' = N // t`` sub-blocks uses anchors ``t .. M'*t - 1``;
* over a whole ``M*N`` sequence the model measure uses anchors
  ``t .. t + (M-1)*N - 1`` (``(M-1)*N`` positions, the same number of window
  starts as the phase-averaged measure).

A context is in the candidate tree when its probability is at least 1/K.
Selection walks each path from the root and keeps the lowest conditional
entropy seen so far; a path stops descending below a context whose
probability is at most 1/K, or at depth t.
"""

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import _kernels
from .errors import ParameterError, SequenceTooShortError
from .stats import EmpiricalModel, as_symbols, default_depth


def _ratio(K) -> tuple[int, int]:
    """K as (numerator, denominator); probability floor is den/num."""
    K = Fraction(K)
    if K <= 0:
        raise ParameterError("K must be positive")
    return K.numerator, K.denominator


@dataclass
class ContextNode:
    context: tuple
    count: int
    succ: np.ndarray
    entropy: float
    probability: Fraction


@dataclass
class ContextTree:
    """Candidate tree: root plus every context of length <= t with P >= 1/K."""
    nodes: dict
    K: Fraction
    t: int
    A: int
    total: int

    @property
    def root(self) -> ContextNode:
        return self.nodes[()]

    def children(self, ctx):
        return [self.nodes[ctx_c] for ctx_c in
                ((a,) + ctx for a in range(self.A)) if ctx_c in self.nodes]

    def descends(self, ctx) -> bool:
        """Whether selection may look below ``ctx`` (P > 1/K and depth < t)."""
        node = self.nodes[ctx]
        return len(ctx) < self.t and node.probability > 1 / self.K

    def leaves(self):
        return [c for c in self.nodes if not self.children(c)]


@dataclass
class PrunedTree:
    """Selected contexts and the achieved weighted minimum entropy.

    ``contexts`` is in canonical (lexicographic) order.  A symbol is
    assigned to the deepest selected context matching its history; the
    selection guarantees this is the minimum-entropy context on its path.
    """
    contexts: tuple
    hu: float
    t: int
    weights: dict = field(default_factory=dict)

    def resolve(self, history) -> tuple:
        """Deepest selected context that is a suffix of ``history``."""
        chosen = set(self.contexts)
        best = ()
        for d in range(1, min(self.t, len(history)) + 1):
            c = tuple(int(s) for s in history[len(history) - d:])
            if c in chosen:
                best = c
        return best


def k1_depth(model: EmpiricalModel, z, K) -> int:
    """min(j-1, t) for the smallest j with P_MN(last j symbols of z) <= 1/K.

    Returns -1 when even the whole of ``z`` has probability above 1/K.
    """
    kn, kd = _ratio(K)
    z = tuple(int(s) for s in z)
    W = model.denominator
    from .stats import window_table
    for j in range(1, len(z) + 1):
        suffix = z[len(z) - j:]
        if j <= model.t or j == model.N:
            c = model.count(suffix)
        else:
            c = window_table(model.x, j, W).get(suffix, 0)
        if c * kn <= W * kd:
            return min(j - 1, model.t)
    return -1


def anchor_tree(x, lo: int, hi: int, K, t: int, A: int) -> ContextTree:
    """Reference candidate tree over the anchors ``lo..hi-1`` of ``x``."""
    x = np.asarray(x)
    if lo < t:
        raise ParameterError("anchors need t symbols of history")
    kn, kd = _ratio(K)
    W = hi - lo
    if W <= 0:
        raise SequenceTooShortError("empty anchor range")
    nodes = {}
    view = np.lib.stride_tricks.sliding_window_view
    for d in range(0, t + 1):
        win = view(x, d + 1)[lo - d:hi - d]
        keys, counts = np.unique(win, axis=0, return_counts=True)
        grouped = {}
        for row, c in zip(keys, counts):
            ctx = tuple(int(s) for s in row[:d])
            succ = grouped.setdefault(ctx, np.zeros(A, np.int64))
            succ[int(row[d])] += int(c)
        added = False
        for ctx, succ in grouped.items():
            n = int(succ.sum())
            if n * kn >= W * kd:
                nodes[ctx] = ContextNode(ctx, n, succ, float(_kernels.entropy_bits(succ)),
                                         Fraction(n, W))
                added = True
        if not added and d > 0:
            break
    if () not in nodes:
        succ = np.bincount(x[lo:hi], minlength=A).astype(np.int64)
        nodes[()] = ContextNode((), W, succ, float(_kernels.entropy_bits(succ)), Fraction(1))
    return ContextTree(nodes, Fraction(kn, kd), t, A, W)


def block_anchors(n: int, t: int) -> tuple[int, int]:
    """Anchor range of the stride-t measure inside an n-block."""
    Mp = n // t if t > 0 else 0
    if Mp < 2:
        raise SequenceTooShortError(f"block of {n} symbols has fewer than two depth-{t} sub-blocks")
    return t, Mp * t


def build_candidate_tree(X, K, t: int, A: int | None = None) -> ContextTree:
    """Candidate tree of a single block under its stride-t measure."""
    X = np.asarray(X)
    if A is None:
        A = max(2, int(X.max()) + 1 if X.size else 2)
    X = as_symbols(X, A)
    if X.shape[0] < t or t < 1:
        raise SequenceTooShortError(f"block shorter than depth {t}")
    lo, hi = block_anchors(X.shape[0], t)
    return anchor_tree(X, lo, hi, K, t, A)


def select_optimal_contexts(tree: ContextTree, model=None) -> PrunedTree:
    """Reference selection: greedy minimum along every admissible path."""
    best = {(): ()}
    leafw = {}
    order = sorted(tree.nodes, key=len)
    for ctx in order:
        node = tree.nodes[ctx]
        if ctx != ():
            parent = ctx[1:]
            if parent not in best or not tree.descends(parent):
                continue
            b = best[parent]
            best[ctx] = ctx if node.entropy < tree.nodes[b].entropy - _kernels.TIE_TOL else b
        leafw[ctx] = node.count
    for ctx in leafw:
        if ctx != ():
            leafw[ctx[1:]] -= tree.nodes[ctx].count
    hu = 0.0
    weights = {}
    for ctx in sorted(leafw, key=lambda c: (len(c), c)):
        w = leafw[ctx]
        if w > 0:
            b = best[ctx]
            weights[b] = weights.get(b, 0) + w
    # summation order differs from the compiled kernel; compare with a tolerance
    for b, w in weights.items():
        hu += w * tree.nodes[b].entropy
    hu /= tree.total
    return PrunedTree(tuple(sorted(weights)), hu, tree.t, weights)


@dataclass
class KernelTree:
    """Output of the compiled builder, indexable by node id."""
    parent: np.ndarray
    sym: np.ndarray
    depth: np.ndarray
    count: np.ndarray
    ent: np.ndarray
    best: np.ndarray
    leafw: np.ndarray
    succ: np.ndarray
    hu: float
    total: int

    def context(self, v: int) -> tuple:
        out = []
        while v > 0:
            out.append(int(self.sym[v]))
            v = int(self.parent[v])
        # node symbols run from the oldest (deepest) to the most recent
        return tuple(out)

    def chosen_ids(self) -> np.ndarray:
        return np.unique(self.best[self.leafw > 0])

    def pruned(self, t: int) -> PrunedTree:
        weights = {}
        for v in np.nonzero(self.leafw > 0)[0]:
            c = self.context(int(self.best[v]))
            weights[c] = weights.get(c, 0) + int(self.leafw[v])
        return PrunedTree(tuple(sorted(weights)), float(self.hu), t, weights)


def fast_tree(x, lo: int, hi: int, K, t: int, A: int, member=None,
              occurrences=False) -> KernelTree:
    """Compiled tree over anchors ``lo..hi-1`` with floor 1/K.

    ``member = (mn, md)`` overrides the membership test ``count*mn >= W*md``
    (default: the floor itself); ``occurrences`` counts every occurrence of a
    context in ``x[:hi]`` for that test.
    """
    kn, kd = _ratio(K)
    mn, md = (kn, kd) if member is None else member
    out = _kernels.context_stats(np.ascontiguousarray(x, dtype=np.uint8), lo, hi, t, A,
                                 kn, kd, mn, md, occurrences)
    tree = KernelTree(*out, total=hi - lo)
    tree.succ = tree.succ.reshape(-1, A)
    return tree


def block_selection(X, K, t: int, A: int) -> PrunedTree:
    """Selected contexts of one block (compiled path)."""
    X = as_symbols(X, A)
    lo, hi = block_anchors(X.shape[0], t)
    return fast_tree(X, lo, hi, K, t, A).pruned(t)


def block_hu(X, K, t: int, A: int) -> float:
    lo, hi = block_anchors(len(X), t)
    return fast_tree(X, lo, hi, K, t, A).hu


def model_anchors(model: EmpiricalModel) -> tuple[int, int]:
    lo = model.t
    return lo, lo + model.denominator


def model_tree(model: EmpiricalModel, K) -> KernelTree:
    lo, hi = model_anchors(model)
    if hi <= lo:
        raise SequenceTooShortError("need M >= 2 blocks")
    return fast_tree(model.x, lo, hi, K, model.t, model.A)


def h_u(X, N: int, K, M: int, A: int | None = None, t: int | None = None) -> float:
    """Weighted minimum conditional entropy of ``X`` (length M*N) with floor 1/K."""
    X = np.asarray(X)
    if A is None:
        A = max(2, int(X.max()) + 1)
    if X.shape[0] != M * N:
        raise ParameterError(f"expected {M * N} symbols, got {X.shape[0]}")
    model = EmpiricalModel(X, N, A, t if t is not None else default_depth(N))
    return model_tree(model, K).hu


def build_trie(contexts, A: int):
    """Resolution trie for deepest-suffix lookup in the compiled kernels.

    Returns ``(rchild, rctx, maxd, n_ctx)``.  Context ``k`` of ``contexts``
    gets index ``k``; when the root is absent an extra fallback index is
    appended for it.
    """
    contexts = list(contexts)
    rchild = [np.full(A, -1, np.int64)]
    rctx = [-1]
    maxd = 0
    for k, c in enumerate(contexts):
        node = 0
        for s in reversed(c):
            nxt = rchild[node][s]
            if nxt < 0:
                nxt = len(rctx)
                rchild[node][s] = nxt
                rchild.append(np.full(A, -1, np.int64))
                rctx.append(-1)
            node = nxt
        rctx[node] = k
        maxd = max(maxd, len(c))
    n_ctx = len(contexts)
    if rctx[0] < 0:
        rctx[0] = n_ctx
        n_ctx += 1
    return np.concatenate(rchild), np.asarray(rctx, np.int64), maxd, n_ctx
