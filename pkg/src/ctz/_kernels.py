"""Compiled inner loops.

Everything here works on flat numpy arrays so that numba can compile it.
The readable reference versions live in :mod:`ctz.tree` and the tests check
the two against each other.
"""

import numpy as np
from numba import njit

# A deeper context replaces the current best one only if it lowers the
# conditional entropy by more than this many bits.
TIE_TOL = 1e-12

_PRECISION = 32
_FULL = 1 << _PRECISION
_HALF = _FULL >> 1
_QUARTER = _HALF >> 1
_MASK = _FULL - 1


@njit(cache=True, nogil=True)
def _entropy_row(counts, lo, hi, buf):
    """Entropy of ``counts[lo:hi]`` using ``buf`` as scratch space.

    Terms are summed in ascending count order so proportional count vectors
    give bit-identical results.
    """
    n = 0
    k = 0
    for i in range(lo, hi):
        c = counts[i]
        if c > 0:
            n += c
            # insertion into the sorted prefix of buf
            j = k
            while j > 0 and buf[j - 1] > c:
                buf[j] = buf[j - 1]
                j -= 1
            buf[j] = c
            k += 1
    if k <= 1:
        return 0.0
    h = 0.0
    for j in range(k):
        c = buf[j]
        h += (c / n) * np.log2(n / c)
    return h


@njit(cache=True, nogil=True)
def entropy_bits(counts):
    """Shannon entropy (bits) of a count vector."""
    buf = np.empty(counts.shape[0], np.int64)
    return _entropy_row(counts, 0, counts.shape[0], buf)


@njit(cache=True, nogil=True)
def _grow(a, size):
    out = np.empty(max(size, 2 * a.shape[0]), a.dtype)
    out[: a.shape[0]] = a
    return out


@njit(cache=True, nogil=True)
def _same(x, e1, e2, d):
    for k in range(1, d + 1):
        if x[e1 - k] != x[e2 - k]:
            return False
    return True


@njit(cache=True, nogil=True)
def _group(perm, s, e, x, d, A, cnt, tmp):
    """Reorder ``perm[s:e]`` so anchors with equal ``x[a-d]`` are contiguous."""
    size = e - s
    if A == 2:
        i = s
        j = e - 1
        while True:
            while i <= j and x[perm[i] - d] == 0:
                i += 1
            while i <= j and x[perm[j] - d] != 0:
                j -= 1
            if i >= j:
                return
            a = perm[i]
            perm[i] = perm[j]
            perm[j] = a
    if size <= 24:
        for i in range(s + 1, e):
            a = perm[i]
            key = x[a - d]
            j = i
            while j > s and x[perm[j - 1] - d] > key:
                perm[j] = perm[j - 1]
                j -= 1
            perm[j] = a
        return
    for k in range(A):
        cnt[k] = 0
    for i in range(s, e):
        cnt[x[perm[i] - d]] += 1
    acc = 0
    for k in range(A):
        c = cnt[k]
        cnt[k] = acc
        acc += c
    for i in range(s, e):
        a = perm[i]
        key = x[a - d]
        tmp[cnt[key]] = a
        cnt[key] += 1
    for i in range(size):
        perm[s + i] = tmp[i]


@njit(cache=True, nogil=True)
def context_stats(x, lo, hi, t, A, kn, kd, mn, md, occ):
    """Admissible context tree over the anchor positions ``lo..hi-1``.

    The context of anchor ``e`` at depth ``d`` is ``x[e-d:e]`` and the
    predicted symbol is ``x[e]``; ``lo >= t`` is required.  With ``W`` anchors
    and ``count`` of them matching a context:

    * the context enters the tree when ``count * mn >= W * md``; with ``occ``
      set, ``count`` is replaced by the number of occurrences of the context
      anywhere in ``x[:hi]`` for this test;
    * paths stop descending below a context with ``count * kn <= W * kd``
      (probability at most ``kd/kn``) or at depth ``t``.

    Anchors are refined level by level like an MSD radix sort on their
    reversed histories, so every node owns a contiguous range of ``perm``.

    Returns ``(parent, sym, depth, count, ent, best, leafw, succ, hu)`` where
    ``best[v]`` is the minimum-entropy context on the chain root..v (shortest
    wins ties), ``leafw[v]`` is the number of anchors whose path ends at
    ``v``, ``succ`` holds the successor counts row by row and ``hu`` is the
    weighted minimum entropy.
    """
    W = hi - lo
    cap = 256
    parent = np.empty(cap, np.int64)
    sym = np.empty(cap, np.int64)
    depth = np.empty(cap, np.int64)
    count = np.empty(cap, np.int64)
    ent = np.empty(cap, np.float64)
    best = np.empty(cap, np.int64)
    leafw = np.empty(cap, np.int64)
    succ = np.zeros(cap * A, np.int64)
    ebuf = np.empty(A, np.int64)
    cnt = np.empty(A, np.int64)

    for e in range(lo, hi):
        succ[x[e]] += 1
    parent[0] = -1
    sym[0] = -1
    depth[0] = 0
    count[0] = W
    ent[0] = _entropy_row(succ, 0, A, ebuf)
    best[0] = 0
    leafw[0] = W
    n = 1

    perm = np.arange(lo, hi)
    tmp = np.empty(W, np.int64)
    rs = np.empty(W + 1, np.int64)
    re = np.empty(W + 1, np.int64)
    rv = np.empty(W + 1, np.int64)
    qs = np.empty(W + 1, np.int64)
    qe = np.empty(W + 1, np.int64)
    qv = np.empty(W + 1, np.int64)
    nr = 0
    if W > 0 and t > 0 and W * kn > W * kd:
        rs[0] = 0
        re[0] = W
        rv[0] = 0
        nr = 1

    for d in range(1, t + 1):
        if nr == 0:
            break
        nq = 0
        for r in range(nr):
            s = rs[r]
            e = re[r]
            v = rv[r]
            _group(perm, s, e, x, d, A, cnt, tmp)
            g = s
            while g < e:
                key = x[perm[g] - d]
                h = g + 1
                while h < e and x[perm[h] - d] == key:
                    h += 1
                c = h - g
                m = c
                if occ and m * mn < W * md:
                    # occurrences ending before the first anchor or at hi
                    for f in range(d, lo):
                        if _same(x, f, perm[g], d):
                            m += 1
                    if hi <= x.shape[0] and _same(x, hi, perm[g], d):
                        m += 1
                if m * mn >= W * md:
                    if n >= parent.shape[0]:
                        parent = _grow(parent, n + 1)
                        sym = _grow(sym, n + 1)
                        depth = _grow(depth, n + 1)
                        count = _grow(count, n + 1)
                        ent = _grow(ent, n + 1)
                        best = _grow(best, n + 1)
                        leafw = _grow(leafw, n + 1)
                    if succ.shape[0] < (n + 1) * A:
                        succ = _grow(succ, (n + 1) * A)
                    base = n * A
                    for k in range(A):
                        succ[base + k] = 0
                    for k in range(g, h):
                        succ[base + x[perm[k]]] += 1
                    parent[n] = v
                    sym[n] = key
                    depth[n] = d
                    count[n] = c
                    ent[n] = _entropy_row(succ, base, base + A, ebuf)
                    b = best[v]
                    if ent[n] < ent[b] - TIE_TOL:
                        best[n] = n
                    else:
                        best[n] = b
                    leafw[n] = c
                    leafw[v] -= c
                    if d < t and c * kn > W * kd:
                        qs[nq] = g
                        qe[nq] = h
                        qv[nq] = n
                        nq += 1
                    n += 1
                g = h
        rs, qs = qs, rs
        re, qe = qe, re
        rv, qv = qv, rv
        nr = nq

    hu = 0.0
    if W > 0:
        for v in range(n):
            if leafw[v] > 0:
                hu += leafw[v] * ent[best[v]]
        hu /= W
    return (parent[:n], sym[:n], depth[:n], count[:n], ent[:n], best[:n],
            leafw[:n], succ[:n * A], hu)


@njit(cache=True, nogil=True)
def resolve(x, e, rchild, rctx, maxd, A):
    """Index of the deepest stored context matching the history of ``x[e]``.

    ``rchild`` is a flattened (nodes x A) trie walked from the most recent
    symbol backwards; ``rctx[node]`` is the stored-context index or -1.
    Node 0 is the root and must carry a context.
    """
    node = 0
    found = rctx[0]
    for d in range(1, maxd + 1):
        if e - d < 0:
            break
        node = rchild[node * A + x[e - d]]
        if node < 0:
            break
        if rctx[node] >= 0:
            found = rctx[node]
    return found


@njit(cache=True, nogil=True)
def _trie_node(child, cnt, succ, dirty, free, state, A):
    if state[1] > 0:
        state[1] -= 1
        v = free[state[1]]
    else:
        v = state[0]
        state[0] += 1
    for k in range(A):
        child[v * A + k] = -1
        succ[v * A + k] = 0
    cnt[v] = 0
    dirty[v] = 1
    return v


@njit(cache=True, nogil=True)
def _trie_add(x, e, t, A, child, cnt, succ, dirty, free, state):
    """Count anchor ``e`` on every node of its history path."""
    a = x[e]
    v = 0
    cnt[0] += 1
    succ[a] += 1
    dirty[0] = 1
    for d in range(1, t + 1):
        s = x[e - d]
        c = child[v * A + s]
        if c < 0:
            c = _trie_node(child, cnt, succ, dirty, free, state, A)
            child[v * A + s] = c
        v = c
        cnt[v] += 1
        succ[v * A + a] += 1
        dirty[v] = 1


@njit(cache=True, nogil=True)
def _trie_remove(x, e, t, A, child, cnt, succ, dirty, free, state):
    """Inverse of ``_trie_add``; nodes whose count drops to zero are recycled."""
    a = x[e]
    v = 0
    cnt[0] -= 1
    succ[a] -= 1
    dirty[0] = 1
    cut = False
    for d in range(1, t + 1):
        s = x[e - d]
        c = child[v * A + s]
        if not cut and cnt[c] == 1:
            child[v * A + s] = -1
            cut = True
        v = c
        cnt[v] -= 1
        succ[v * A + a] -= 1
        dirty[v] = 1
        if cut:
            free[state[1]] = v
            state[1] += 1


@njit(cache=True, nogil=True)
def _trie_hu(t, A, W, kn, kd, child, cnt, succ, dirty, ent, ebuf, stack, sbest, sdep):
    """Weighted minimum entropy of the admissible part of the count trie.

    Same rules as ``context_stats`` with ``occ`` off and membership equal
    to the floor; only the summation order differs.
    """
    if W <= 0:
        return 0.0
    if dirty[0]:
        ent[0] = _entropy_row(succ, 0, A, ebuf)
        dirty[0] = 0
    hu = 0.0
    stack[0] = 0
    sbest[0] = ent[0]
    sdep[0] = 0
    top = 1
    while top > 0:
        top -= 1
        v = stack[top]
        bv = sbest[top]
        d = sdep[top]
        lw = cnt[v]
        if d < t and cnt[v] * kn > W * kd:
            for k in range(A):
                c = child[v * A + k]
                if c >= 0 and cnt[c] * kn >= W * kd:
                    lw -= cnt[c]
                    if dirty[c]:
                        ent[c] = _entropy_row(succ, c * A, c * A + A, ebuf)
                        dirty[c] = 0
                    stack[top] = c
                    sbest[top] = ent[c] if ent[c] < bv - TIE_TOL else bv
                    sdep[top] = d + 1
                    top += 1
        if lw > 0:
            hu += lw * bv
    return hu / W


@njit(cache=True, nogil=True)
def window_scores(x, starts, N, t, A, kn, kd, rchild, rctx, maxd, cost):
    """Cross-entropy and self minimum-entropy of each N-window of ``x``.

    For window ``x[j:j+N]`` the anchors are ``j+t .. j+(N//t)*t-1``.  The
    cross-entropy averages ``cost[ctx*A + symbol]`` over anchors with ``ctx``
    resolved in the stored-context trie; the self term is the weighted
    minimum entropy of the window's own context tree with floor ``kd/kn``.
    Consecutive starts slide a count trie by one anchor instead of
    rebuilding it.
    """
    m = starts.shape[0]
    hx = np.empty(m)
    hs = np.empty(m)
    span = (N // t) * t
    W = span - t
    cap = W * t + 2
    child = np.empty(cap * A, np.int64)
    cnt = np.empty(cap, np.int64)
    succ = np.empty(cap * A, np.int64)
    dirty = np.empty(cap, np.uint8)
    ent = np.empty(cap, np.float64)
    free = np.empty(cap, np.int64)
    state = np.zeros(2, np.int64)
    ebuf = np.empty(A, np.int64)
    stack = np.empty(cap, np.int64)
    sbest = np.empty(cap, np.float64)
    sdep = np.empty(cap, np.int64)
    for i in range(m):
        j = starts[i]
        lo = j + t
        hi = j + span
        acc = 0.0
        for e in range(lo, hi):
            c = resolve(x, e, rchild, rctx, maxd, A)
            acc += cost[c * A + x[e]]
        hx[i] = acc / (hi - lo)
        if i > 0 and j == starts[i - 1] + 1:
            _trie_remove(x, lo - 1, t, A, child, cnt, succ, dirty, free, state)
            _trie_add(x, hi - 1, t, A, child, cnt, succ, dirty, free, state)
        else:
            state[0] = 0
            state[1] = 0
            _trie_node(child, cnt, succ, dirty, free, state, A)
            for e in range(lo, hi):
                _trie_add(x, e, t, A, child, cnt, succ, dirty, free, state)
        hs[i] = _trie_hu(t, A, W, kn, kd, child, cnt, succ, dirty, ent, ebuf,
                         stack, sbest, sdep)
    return hx, hs


@njit(cache=True, nogil=True)
def _emit(out, nbits, bit, pending):
    out[nbits] = bit
    nbits += 1
    for _ in range(pending):
        out[nbits] = 1 - bit
        nbits += 1
    return nbits


@njit(cache=True, nogil=True)
def kt_encode(x, t, A, rchild, rctx, maxd, n_ctx, out):
    """Arithmetic-code ``x[t:]`` with per-context KT estimates.

    Writes one bit per byte into ``out`` and returns the number of bits.
    Symbol ``a`` in a context with counts ``n_a`` (total ``n``) gets
    frequency ``2 n_a + 1`` out of ``2 n + A``.
    """
    kt = np.zeros(n_ctx * A, np.int64)
    tot = np.zeros(n_ctx, np.int64)
    low = 0
    high = _MASK
    pending = 0
    nbits = 0
    for e in range(t, x.shape[0]):
        c = resolve(x, e, rchild, rctx, maxd, A)
        s = x[e]
        base = c * A
        total = 2 * tot[c] + A
        cum = 0
        for a in range(s):
            cum += 2 * kt[base + a] + 1
        freq = 2 * kt[base + s] + 1
        rng = high - low + 1
        high = low + (rng * (cum + freq)) // total - 1
        low = low + (rng * cum) // total
        while True:
            if high < _HALF:
                nbits = _emit(out, nbits, 0, pending)
                pending = 0
            elif low >= _HALF:
                nbits = _emit(out, nbits, 1, pending)
                pending = 0
                low -= _HALF
                high -= _HALF
            elif low >= _QUARTER and high < _HALF + _QUARTER:
                pending += 1
                low -= _QUARTER
                high -= _QUARTER
            else:
                break
            low = low << 1
            high = (high << 1) | 1
        kt[base + s] += 1
        tot[c] += 1
    pending += 1
    if low < _QUARTER:
        nbits = _emit(out, nbits, 0, pending)
    else:
        nbits = _emit(out, nbits, 1, pending)
    return nbits


@njit(cache=True, nogil=True)
def kt_decode(bits, prefix, n, A, rchild, rctx, maxd, n_ctx):
    """Inverse of :func:`kt_encode`; ``prefix`` holds the first t symbols.

    Bits past the end of ``bits`` read as zero.
    """
    t = prefix.shape[0]
    x = np.empty(n, np.uint8)
    x[:t] = prefix
    kt = np.zeros(n_ctx * A, np.int64)
    tot = np.zeros(n_ctx, np.int64)
    nb = bits.shape[0]
    low = 0
    high = _MASK
    value = 0
    pos = 0
    for _ in range(_PRECISION):
        b = 0
        if pos < nb:
            b = bits[pos]
        pos += 1
        value = (value << 1) | b
    for e in range(t, n):
        c = resolve(x, e, rchild, rctx, maxd, A)
        base = c * A
        total = 2 * tot[c] + A
        rng = high - low + 1
        scaled = ((value - low + 1) * total - 1) // rng
        cum = 0
        s = 0
        while s < A:
            f = 2 * kt[base + s] + 1
            if cum + f > scaled:
                break
            cum += f
            s += 1
        if s >= A:
            return x, e
        freq = 2 * kt[base + s] + 1
        high = low + (rng * (cum + freq)) // total - 1
        low = low + (rng * cum) // total
        while True:
            if high < _HALF:
                pass
            elif low >= _HALF:
                low -= _HALF
                high -= _HALF
                value -= _HALF
            elif low >= _QUARTER and high < _HALF + _QUARTER:
                low -= _QUARTER
                high -= _QUARTER
                value -= _QUARTER
            else:
                break
            low = low << 1
            high = (high << 1) | 1
            b = 0
            if pos < nb:
                b = bits[pos]
            pos += 1
            value = (value << 1) | b
        x[e] = s
        kt[base + s] += 1
        tot[c] += 1
    return x, -1
