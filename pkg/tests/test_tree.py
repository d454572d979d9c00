from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctz.errors import ParameterError, SequenceTooShortError
from ctz.stats import EmpiricalModel, letters
from ctz.tree import (anchor_tree, block_anchors, block_selection, build_candidate_tree,
                      build_trie, fast_tree, h_u, k1_depth, model_tree,
                      select_optimal_contexts)
from ctz import _kernels

import _oracle

DEBRUIJN = "aaababbb"


class TestK1:
    def test_constant(self):
        m = EmpiricalModel(letters("a" * 64), 8, 2)
        assert k1_depth(m, letters("aaaa"), 2) == -1

    def test_de_bruijn(self):
        m = EmpiricalModel(letters(DEBRUIJN * 8), 8, 2)
        assert k1_depth(m, letters("ab"), 4) == 1
        assert k1_depth(m, letters("bab"), 4) == 1

    def test_zero_depth_cap(self):
        m = EmpiricalModel(letters(DEBRUIJN * 8), 8, 2, t=0)
        assert k1_depth(m, letters("ab"), 4) in (-1, 0)
        assert k1_depth(m, letters("ab"), 4) == 0


class TestCandidateTree:
    def test_alternating(self):
        tree = build_candidate_tree(letters("ab" * 32), 8, 4)
        ctx = set(tree.nodes)
        for c in ["a", "b", "ab", "ba", "aba", "bab", "abab", "baba"]:
            assert tuple(letters(c)) in ctx
        assert tuple(letters("aa")) not in ctx and tuple(letters("bb")) not in ctx
        assert tree.nodes[(0,)].probability == Fraction(1, 2)
        assert tree.nodes[(0, 1)].probability == Fraction(1, 2)

    def test_constant_chain(self):
        tree = build_candidate_tree(letters("a" * 64), 8, 6)
        assert set(tree.nodes) == {(0,) * d for d in range(7)}
        assert all(n.probability == 1 for n in tree.nodes.values())

    def test_floor_one(self):
        tree = build_candidate_tree(letters("ab" * 32), 1, 4)
        assert set(tree.nodes) == {()}
        tree = build_candidate_tree(letters("a" * 64), 1, 4)
        assert len(tree.nodes) == 5

    def test_too_short(self):
        with pytest.raises(SequenceTooShortError):
            build_candidate_tree(letters("ab"), 4, 4)
        with pytest.raises(SequenceTooShortError):
            block_anchors(7, 4)

    def test_bad_floor(self):
        with pytest.raises(ParameterError):
            build_candidate_tree(letters("ab" * 8), 0, 2)

    def test_node_invariants(self):
        rng = np.random.default_rng(1)
        x = _oracle.markov(400, 0.7, rng)
        tree = build_candidate_tree(x, 20, 8)
        for c, node in tree.nodes.items():
            assert node.succ.sum() == node.count
            if c:
                assert node.probability <= tree.nodes[c[1:]].probability
            assert len(c) <= 8


class TestSelection:
    def test_alternating(self):
        tree = build_candidate_tree(letters("ab" * 32), 8, 4)
        sel = select_optimal_contexts(tree)
        assert set(sel.contexts) == {(0,), (1,)}
        assert sel.hu == 0

    def test_de_bruijn_tie_keeps_root(self):
        # 64 anchors starting at offset 2 cover whole periods, so every
        # context of depth <= 2 has a balanced successor split
        tree = build_candidate_tree(letters((DEBRUIJN * 9)[:66]), 8, 2)
        assert all(n.entropy == 1.0 for n in tree.nodes.values())
        sel = select_optimal_contexts(tree)
        assert sel.contexts == ((),)
        assert sel.hu == pytest.approx(1.0)

    def test_constant(self):
        assert select_optimal_contexts(build_candidate_tree(letters("a" * 64), 8, 4)).hu == 0

    def test_resolution_finds_choice(self):
        tree = build_candidate_tree(letters("ab" * 32), 8, 4)
        sel = select_optimal_contexts(tree)
        assert sel.resolve(letters("abab")) == (1,)
        assert sel.resolve(letters("ba")) == (0,)


class TestHu:
    def test_constant(self):
        assert h_u(np.zeros(64 * 4, np.uint8), 64, 64, 4) == 0

    def test_alternating(self):
        assert h_u(letters("ab" * 128), 64, 64, 4) == 0

    def test_length_check(self):
        with pytest.raises(ParameterError):
            h_u(np.zeros(100, np.uint8), 64, 64, 2)

    def test_monotone_in_floor(self):
        rng = np.random.default_rng(2)
        x = _oracle.markov(64 * 16, 0.8, rng)
        vals = [h_u(x, 64, K, 16, 2) for K in (1, 2, 4, 16, 64, 256, 1024)]
        assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))

    def test_below_order_zero(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            x = rng.integers(0, 3, 32 * 8).astype(np.uint8)
            m = EmpiricalModel(x, 32, 3)
            assert model_tree(m, 32).hu <= m.block_entropy(1) + 1e-12


def test_kernel_matches_reference_tree():
    rng = np.random.default_rng(5)
    for _ in range(100):
        A = int(rng.integers(2, 5))
        n = int(rng.integers(20, 300))
        t = int(rng.integers(1, 8))
        x = (_oracle.markov(n, 0.8, rng) if A == 2 else rng.integers(0, A, n)).astype(np.uint8)
        if n // t < 2:
            continue
        K = Fraction(int(rng.integers(1, 40)), int(rng.integers(1, 4)))
        lo, hi = block_anchors(n, t)
        ref = anchor_tree(x, lo, hi, K, t, A)
        kt = fast_tree(x, lo, hi, K, t, A)
        got = {kt.context(v): (int(kt.count[v]), tuple(kt.succ[v])) for v in range(len(kt.count))}
        for c, (cnt, succ) in got.items():
            assert ref.nodes[c].count == cnt and tuple(ref.nodes[c].succ) == succ
        # the kernel only expands admissible paths; those nodes must all be present
        for c in ref.nodes:
            if c and ref.descends(c[1:]) and all(ref.descends(c[k:]) for k in range(1, len(c))):
                assert c in got
        sel = select_optimal_contexts(ref)
        assert kt.hu == pytest.approx(sel.hu, abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 3), st.integers(16, 200), st.integers(1, 6), st.integers(1, 30),
       st.integers(0, 2 ** 32 - 1))
def test_hu_matches_oracle(A, n, t, K, seed):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, A, n).astype(np.uint8) if seed % 2 else _oracle.markov(n, 0.85, rng)
    if n // t < 2:
        return
    lo, hi = block_anchors(n, t)
    hu, picks = _oracle.hu_oracle(x, lo, hi, K, t)
    sel = block_selection(x, K, t, A)
    assert sel.hu == pytest.approx(hu, abs=1e-12)
    assert set(sel.contexts) == set(picks)
    # deepest-match resolution recovers each anchor's own choice
    for e, want in zip(range(lo, hi), picks):
        assert sel.resolve(x[:e]) == want


def test_cover_property():
    rng = np.random.default_rng(9)
    x = _oracle.markov(512, 0.9, rng)
    lo, hi = block_anchors(512, 16)
    kt = fast_tree(x, lo, hi, 40, 16, 2)
    sel = kt.pruned(16)
    leafw = {}
    for e in range(lo, hi):
        c = sel.resolve(x[:e])
        leafw[c] = leafw.get(c, 0) + 1
    assert leafw == sel.weights


def test_determinism():
    rng = np.random.default_rng(10)
    x = rng.integers(0, 4, 2000).astype(np.uint8)
    a = block_selection(x, 50, 10, 4)
    b = block_selection(x.copy(), 50, 10, 4)
    assert a.contexts == b.contexts and a.hu == b.hu


def test_trie_resolution():
    contexts = [(), (0,), (1, 0), (0, 1, 0)]
    rchild, rctx, maxd, n_ctx = build_trie(contexts, 2)
    assert n_ctx == 4 and maxd == 3
    x = letters("abbaba")
    # history "abbab" ends in b, which no stored context does
    idx = _kernels.resolve(x, 5, rchild, rctx, maxd, 2)
    assert contexts[idx] == ()
    idx = _kernels.resolve(x, 4, rchild, rctx, maxd, 2)
    assert contexts[idx] == (1, 0)
    rchild, rctx, maxd, n_ctx = build_trie([(1,)], 2)
    assert n_ctx == 2
    assert _kernels.resolve(x, 3, rchild, rctx, maxd, 2) == 0
    assert _kernels.resolve(x, 4, rchild, rctx, maxd, 2) == 1
