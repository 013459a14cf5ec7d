import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import ks_2samp

from kcore_lab import graphs as G
from kcore_lab.errors import ValidationError
from kcore_lab.kernels import StepKernel


def exhaustive_core(n, edges, k):
    """Largest vertex set inducing minimum degree >= k, by enumerating every subset."""
    adj = [set() for _ in range(n)]
    for u, v in edges:
        adj[u].add(v)
        adj[v].add(u)
    best = set()
    for r in range(n, 0, -1):
        for sub in itertools.combinations(range(n), r):
            s = set(sub)
            if all(len(adj[v] & s) >= k for v in s) and len(s) > len(best):
                best = s
        if best:
            break
    return best


def random_simple(rng, n, p):
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    return G.SimpleGraph.from_edge_list(n, pairs), pairs


def test_paley_13():
    g = G.generate(G.GraphGenSpec.paley(13))
    assert g.residue_set() == [1, 3, 4, 9, 10, 12]
    a = g.dense()
    assert a[0, 1] == 1 and a[0, 2] == 0
    assert np.array_equal(a, a.T) and np.all(a.sum(axis=1) == 6)


@pytest.mark.parametrize("q", [5, 13, 17, 29, 101])
def test_paley_regular(q):
    a = G.PaleyGraph(q).dense()
    assert np.array_equal(a, a.T) and not a.diagonal().any()
    assert np.all(a.sum(axis=1) == (q - 1) // 2)


@pytest.mark.parametrize("q", [15, 7, 2, 1, 21])
def test_paley_rejects(q):
    with pytest.raises(ValidationError):
        G.PaleyGraph(q)


def test_is_prime():
    primes = [p for p in range(200) if G.is_prime(p)]
    assert primes[:10] == [2, 3, 5, 7, 11, 13, 17, 19, 23, 29] and len(primes) == 46
    assert G.is_prime(9973) and not G.is_prime(9971)


def test_paley_matvec_matches_dense():
    g = G.PaleyGraph(101)
    v = np.random.default_rng(0).normal(size=101)
    assert np.allclose(g.matvec(v), g.dense() @ v, atol=1e-12)


def test_generators():
    k5 = G.generate(G.GraphGenSpec.constant(5, 1.0))
    assert k5.bound == 1 and np.array_equal(k5.dense(), np.ones((5, 5)) - np.eye(5))
    grid = G.generate(G.GraphGenSpec.kernel_grid(4, StepKernel.constant(0.5))).dense()
    assert np.all(grid[~np.eye(4, dtype=bool)] == 0.5) and not grid.diagonal().any()
    blk = G.generate(G.GraphGenSpec.block(4, StepKernel.uniform([[2, 0], [0, 1]]))).dense()
    assert np.array_equal(blk, [[0, 2, 0, 0], [2, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]])
    for g in (k5, G.generate(G.GraphGenSpec.block(7, StepKernel.uniform([[2, 0.3], [0.3, 1]])))):
        v = np.arange(g.n, dtype=float)
        assert np.allclose(g.matvec(v), g.dense() @ v)


def test_simple_graph_validation(tmp_path):
    g = G.SimpleGraph.from_edge_list(4, [(2, 0), (1, 2), (3, 2)])
    assert list(g.neighbors(2)) == [0, 1, 3]
    assert list(g.degrees()) == [1, 1, 3, 1] and g.n_edges == 3
    u, v = g.edges()
    assert list(zip(u.tolist(), v.tolist())) == [(0, 2), (1, 2), (2, 3)]
    g.write_edgelist(tmp_path / "e.txt")
    assert (tmp_path / "e.txt").read_text() == "0 2\n1 2\n2 3\n"
    with pytest.raises(ValidationError):
        G.SimpleGraph.from_edge_list(3, [(1, 1)])
    with pytest.raises(ValidationError):
        G.SimpleGraph.from_edge_list(3, [(0, 1), (1, 0)])
    with pytest.raises(ValidationError):
        G.SimpleGraph.from_edge_list(3, [(0, 3)])


def test_percolate_edge_cases():
    g = G.ConstantGraph(50, 1.0)
    for strategy in ("naive", "fast"):
        assert G.percolate(g, 0, seed=1, strategy=strategy).n_edges == 0
        full = G.percolate(g, 50, seed=1, strategy=strategy)
        assert full.n_edges == 50 * 49 // 2
    mixed = G.BlockGraph(40, StepKernel.uniform([[100, 0], [0, 0.5]]))
    h = G.percolate(mixed, 1.0, seed=3)
    # the first half has c * a / n = 2.5, clamped to 1
    assert all(len(set(h.neighbors(i)) & set(range(20))) == 19 for i in range(20))
    assert all(j >= 20 for i in range(20, 40) for j in h.neighbors(i))
    with pytest.raises(ValidationError):
        G.percolate(g, -1, seed=0)
    with pytest.raises(ValidationError):
        G.percolate(g, 1, seed=0, strategy="quick")


def test_percolate_deterministic():
    g = G.ConstantGraph(500, 1.0)
    a, b = G.percolate(g, 4, seed=9, trial=2), G.percolate(g, 4, seed=9, trial=2)
    assert np.array_equal(a.indices, b.indices) and np.array_equal(a.indptr, b.indptr)
    c = G.percolate(g, 4, seed=9, trial=3)
    assert not np.array_equal(a.indices, c.indices)


def test_percolate_edge_count_mean():
    n, c = 10_000, 5.0
    g = G.ConstantGraph(n, 1.0)
    counts = np.array([G.percolate(g, c, seed=s).n_edges for s in range(200)])
    pairs, p = n * (n - 1) / 2, c / n
    sigma = np.sqrt(pairs * p * (1 - p) / len(counts))
    assert abs(counts.mean() - c * (n - 1) / 2) <= 3 * sigma


def test_strategies_agree_in_distribution():
    g = G.BlockGraph(300, StepKernel.uniform([[2, 0.5], [0.5, 1]]))
    stats = {}
    for strategy in ("naive", "fast"):
        edges, cores = [], []
        for s in range(200):
            h = G.percolate(g, 4.0, seed=s, strategy=strategy)
            edges.append(h.n_edges)
            cores.append(G.k_core(h, 3).size)
        stats[strategy] = (edges, cores)
    assert ks_2samp(stats["naive"][0], stats["fast"][0]).pvalue > 0.01
    assert ks_2samp(stats["naive"][1], stats["fast"][1]).pvalue > 0.01


def test_k_core_examples():
    tri = G.SimpleGraph.from_edge_list(3, [(0, 1), (1, 2), (0, 2)])
    assert G.k_core(tri, 2).size == 3
    path = G.SimpleGraph.from_edge_list(3, [(0, 1), (1, 2)])
    assert G.k_core(path, 2).size == 0
    k5 = G.SimpleGraph.from_edge_list(5, list(itertools.combinations(range(5), 2)))
    assert G.k_core(k5, 4).size == 5 and G.k_core(k5, 5).size == 0
    with pytest.raises(ValidationError):
        G.k_core(k5, 1)


def test_k_core_exhaustive_small():
    rng = np.random.default_rng(2024)
    for _ in range(60):
        n = int(rng.integers(1, 9))
        g, pairs = random_simple(rng, n, rng.uniform(0.2, 0.9))
        for k in (2, 3, 4):
            assert set(G.k_core(g, k).members.tolist()) == exhaustive_core(n, pairs, k)


def test_core_numbers_known():
    # a 4-clique with a pendant path attached
    edges = list(itertools.combinations(range(4), 2)) + [(3, 4), (4, 5)]
    g = G.SimpleGraph.from_edge_list(6, edges)
    assert list(G.core_numbers(g)) == [3, 3, 3, 3, 1, 1]


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 40), st.floats(0.05, 0.5), st.integers(0, 2**32 - 1))
def test_k_core_properties(n, p, seed):
    rng = np.random.default_rng(seed)
    g, _ = random_simple(rng, n, p)
    perm = rng.permutation(n)
    inv = np.argsort(perm)
    u, v = g.edges()
    relabeled = G.SimpleGraph.from_edges(n, perm[u], perm[v])
    prev = None
    for k in range(2, 7):
        core = set(G.k_core(g, k).members.tolist())
        sub = g.induced(sorted(core))
        assert sub.n == 0 or sub.degrees().min() >= k
        shuffled = set(G.k_core(g, k, rng=np.random.default_rng(seed + 1)).members.tolist())
        assert shuffled == core
        assert set(inv[G.k_core(relabeled, k).members].tolist()) == core
        if prev is not None:
            assert core <= prev
        prev = core


def test_short_cycles_examples():
    tri = G.SimpleGraph.from_edge_list(3, [(0, 1), (1, 2), (0, 2)])
    assert G.vertices_on_short_cycles(tri, 3) == 3
    tree = G.SimpleGraph.from_edge_list(6, [(0, 1), (0, 2), (1, 3), (1, 4), (2, 5)])
    assert all(G.vertices_on_short_cycles(tree, m) == 0 for m in range(3, 13))
    c5 = G.SimpleGraph.from_edge_list(5, [(i, (i + 1) % 5) for i in range(5)])
    assert G.vertices_on_short_cycles(c5, 4) == 0
    assert G.vertices_on_short_cycles(c5, 5) == 5
    for bad in (2, 13):
        with pytest.raises(ValidationError):
            G.vertices_on_short_cycles(tri, bad)


def brute_short_cycle_vertices(n, pairs, max_len):
    adj = [set() for _ in range(n)]
    for u, v in pairs:
        adj[u].add(v)
        adj[v].add(u)
    on = set()

    def dfs(start, cur, path):
        for w in adj[cur]:
            if w == start and len(path) >= 3:
                on.update(path)
            elif w not in path and len(path) < max_len:
                dfs(start, w, path + [w])

    for s in range(n):
        dfs(s, s, [s])
    return len(on)


def test_short_cycles_vs_brute_force():
    rng = np.random.default_rng(77)
    for _ in range(40):
        n = int(rng.integers(3, 11))
        g, pairs = random_simple(rng, n, rng.uniform(0.1, 0.4))
        for m in (3, 4, 5, 6, 7):
            assert G.vertices_on_short_cycles(g, m) == brute_short_cycle_vertices(n, pairs, m)


def test_short_cycle_fraction_vanishes():
    c, n = 2.0, 4000
    g = G.ConstantGraph(n, 1.0)
    fractions = [G.vertices_on_short_cycles(G.percolate(g, c, seed=s), 8) / n for s in range(5)]
    expected = sum(c**l for l in range(3, 9)) / n
    assert np.mean(fractions) <= expected + 3 * np.sqrt(expected / (n * len(fractions)))
