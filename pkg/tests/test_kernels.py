import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kcore_lab import kernels as K
from kcore_lab.branching import BranchingSpec, prob_A
from kcore_lab.errors import CapabilityError, ValidationError
from kcore_lab.graphs import GraphGenSpec, PaleyGraph, WeightedDenseGraph, generate


def brute_cut(u):
    """Max over all pairs of block subsets, both enumerated."""
    area = u.values * np.outer(u.lengths, u.lengths)
    m = u.n_blocks
    best = 0.0
    subsets = np.array(list(itertools.product([0, 1], repeat=m)), dtype=float)
    cols = area @ subsets.T
    for s in range(0, len(subsets), 512):
        best = max(best, float(np.abs(subsets[s:s + 512] @ cols).max()))
    return best


def random_signed(rng, m):
    cuts = np.sort(rng.choice(np.arange(1, 100), size=m - 1, replace=False)) / 100
    breaks = np.concatenate([[0.0], cuts, [1.0]])
    a = rng.normal(size=(m, m))
    return K.SignedStepKernel(breaks, a + a.T)


def test_construct_and_invariants():
    w = K.StepKernel([0, 0.25, 1], [[1, 2], [2, 0]])
    assert w.bound == 2
    assert np.allclose(w.lengths, [0.25, 0.75])
    with pytest.raises(ValidationError):
        K.StepKernel([0, 0.5, 1], [[1, 2], [3, 0]])
    with pytest.raises(ValidationError):
        K.StepKernel([0, 0.5, 1], [[1, -1], [-1, 0]])
    with pytest.raises(ValidationError):
        K.StepKernel([0, 0.6, 0.5, 1], np.ones((3, 3)))
    with pytest.raises(ValidationError):
        K.StepKernel([0, 1], [[2.0]], bound=1.0)
    with pytest.raises(AttributeError):
        w.bound = 3


def test_block_of_and_pointwise():
    w = K.StepKernel([0, 0.5, 1], [[2, 0], [0, 1]])
    assert list(w.block_of([0, 0.49, 0.5, 1.0])) == [0, 0, 1, 1]
    assert w(0.1, 0.2) == 2 and w(0.7, 0.2) == 0 and w(1.0, 1.0) == 1


def test_json_roundtrip(tmp_path):
    w = K.StepKernel([0, 0.3, 1], [[1, 0.5], [0.5, 2]])
    path = tmp_path / "w.json"
    K.save_kernel(w, path)
    data = json.loads(path.read_text())
    assert set(data) >= {"breaks", "values"}
    back = K.load_kernel(path)
    assert np.array_equal(back.values, w.values) and np.array_equal(back.breaks, w.breaks)
    path.write_text('{"breaks": [0, 1], "values": [[-1]]}')
    with pytest.raises(ValidationError):
        K.load_kernel(path)


def test_embed_graph_examples():
    g = WeightedDenseGraph(np.array([[0.0, 1.0], [1.0, 0.0]]))
    w = K.embed_graph(g)
    assert np.allclose(w.breaks, [0, 0.5, 1])
    assert np.array_equal(w.values, [[0, 1], [1, 0]])
    z = K.embed_graph(WeightedDenseGraph(np.zeros((3, 3))))
    assert z.n_blocks == 3 and not z.values.any()
    with pytest.raises(ValidationError):
        WeightedDenseGraph(np.array([[0.0, 1.0], [0.5, 0.0]]))


@pytest.mark.parametrize("spec", [
    GraphGenSpec.constant(7, 0.3),
    GraphGenSpec.block(9, K.StepKernel.uniform([[2, 0], [0, 1]])),
    GraphGenSpec.paley(13),
    GraphGenSpec.kernel_grid(6, lambda x, y: x * y, 1.0),
])
def test_embed_integral_roundtrip(spec):
    g = generate(spec)
    a = g.dense()
    assert K.embed_graph(g).integral() == pytest.approx(a.sum() / g.n**2, abs=1e-12)


def test_embedded_kernel_matches_dense():
    g = PaleyGraph(29)
    lazy, dense = K.EmbeddedKernel(g), K.embed_graph(g)
    v = np.random.default_rng(1).random(29)
    assert np.allclose(lazy.apply(v), dense.apply(v), atol=1e-13)
    assert np.allclose(lazy.degree(), dense.degree(), atol=1e-13)


def test_scale():
    w = K.StepKernel.uniform([[2, 0.5], [0.5, 1]])
    assert np.array_equal(K.scale(w, 1).values, w.values)
    s = K.scale(K.StepKernel.constant(1), 2.5)
    assert s.values[0, 0] == 2.5 and s.bound == 2.5
    with pytest.raises(ValidationError):
        K.scale(w, -1)
    a = prob_A(BranchingSpec(K.scale(w, 3.7)), 3).value
    b = prob_A(BranchingSpec(w, scale=3.7), 3).value
    assert a == pytest.approx(b, abs=1e-12)


def test_degree_function():
    assert np.allclose(K.degree_function(K.StepKernel.constant(1)), [1])
    assert np.allclose(K.degree_function(K.parse_preset("remark-b").step()), [1.0, 0.5])
    rng = np.random.default_rng(5)
    w = K.StepKernel([0, 0.2, 0.45, 1], (lambda a: a + a.T)(rng.random((3, 3))))
    # midpoint quadrature on a grid aligned with the breaks
    ys = (np.arange(2000) + 0.5) / 2000
    for h, x in enumerate([0.1, 0.3, 0.7]):
        assert K.degree_function(w)[h] == pytest.approx(w(np.full_like(ys, x), ys).mean(), abs=1e-12)
    d = K.degree_function(w)
    assert np.all((d >= 0) & (d <= w.bound))


def test_cut_norm_examples():
    assert K.cut_norm(K.SignedStepKernel.uniform(np.zeros((3, 3)))) == 0
    cb = K.SignedStepKernel.uniform([[0.5, -0.5], [-0.5, 0.5]])
    assert K.cut_norm(cb) == 0.125
    assert brute_cut(cb) == 0.125
    u = K.StepKernel([0, 0.2, 1], [[1, 3], [3, 0.5]])
    assert K.cut_norm(u) == pytest.approx(u.integral(), abs=1e-15)
    with pytest.raises(CapabilityError):
        K.cut_norm(K.SignedStepKernel.uniform(np.eye(25)))


def test_exact_matches_brute_force():
    rng = np.random.default_rng(11)
    for _ in range(40):
        u = random_signed(rng, int(rng.integers(1, 7)))
        assert K.cut_norm(u) == pytest.approx(brute_cut(u), abs=1e-12)


def test_exact_chunked_enumeration():
    # more than 16 blocks exercises the high-bit chunk loop
    rng = np.random.default_rng(3)
    a = rng.normal(size=(18, 18))
    u = K.SignedStepKernel.uniform(a + a.T)
    assert K.cut_norm(u, "heuristic") <= K.cut_norm(u) + 1e-12
    # a rank-one kernel x x^T is maximized by the positive (or negative) support of x
    x = rng.normal(size=18)
    r1 = K.SignedStepKernel.uniform(np.outer(x, x))
    pos = np.clip(x, 0, None).sum() / 18
    neg = np.clip(-x, 0, None).sum() / 18
    assert K.cut_norm(r1) == pytest.approx(max(pos, neg) ** 2, abs=1e-14)


def test_cut_distance_examples():
    w = K.StepKernel.uniform([[1, 0.2], [0.2, 0.7]])
    assert K.cut_distance(w, w).value == 0
    d = K.cut_distance(K.StepKernel.constant(0.3), K.StepKernel.constant(1.1))
    assert d.value == pytest.approx(0.8) and d.status == "exact"
    a = K.StepKernel([0, 0.3, 1], [[1, 0], [0, 1]])
    b = K.StepKernel([0, 0.6, 1], [[0, 1], [1, 2]])
    assert K.cut_distance(a, b).value == pytest.approx(K.cut_distance(b, a).value, abs=1e-15)


def test_cut_distance_paley_13():
    w = K.embed_graph(PaleyGraph(13))
    d = K.cut_distance(w, K.StepKernel.constant(0.5))
    assert d.status == "exact"
    assert d.value == pytest.approx(brute_cut(K.difference(w, K.StepKernel.constant(0.5))), abs=1e-14)


def test_cut_distance_falls_back_to_lower_bound():
    w = K.embed_graph(PaleyGraph(29))
    d = K.cut_distance(w, K.StepKernel.constant(0.5))
    assert d.status == "lower-bound" and d.value > 0


def test_common_refinement_tolerance():
    merged, ia, ib = K.common_refinement(np.array([0, 0.5, 1]), np.array([0, 0.5 + 1e-13, 1]))
    assert len(merged) == 3
    merged, ia, ib = K.common_refinement(np.array([0, 0.5, 1]), np.array([0, 0.25, 1]))
    assert np.allclose(merged, [0, 0.25, 0.5, 1]) and list(ia) == [0, 0, 1] and list(ib) == [0, 1, 1]


signed_kernels = st.integers(1, 6).flatmap(
    lambda m: st.lists(st.floats(-3, 3), min_size=m * m, max_size=m * m).map(
        lambda xs: K.SignedStepKernel.uniform((lambda a: a + a.T)(np.reshape(xs, (m, m))))
    )
)


@settings(max_examples=60, deadline=None)
@given(signed_kernels, signed_kernels, st.floats(-4, 4))
def test_cut_norm_axioms(u, v, lam):
    n = K.cut_norm(u)
    assert K.cut_norm(-u) == pytest.approx(n, abs=1e-12)
    assert K.cut_norm(u * lam) == pytest.approx(abs(lam) * n, abs=1e-10)
    if u.n_blocks == v.n_blocks:
        assert K.cut_norm(u + v) <= n + K.cut_norm(v) + 1e-12
    l1 = float((np.abs(u.values) * np.outer(u.lengths, u.lengths)).sum())
    assert n <= l1 + 1e-12 <= np.abs(u.values).max() + 2e-12


def test_finitary_examples():
    f = K.finitary_lower_approx(K.parse_preset("constant:2.5"), 3)
    assert np.all(f.values == 2.5) and f.n_blocks == 8
    aligned = K.StepKernel([0, 0.25, 0.5, 0.75, 1], np.arange(16).reshape(4, 4) + np.arange(16).reshape(4, 4).T)
    assert np.array_equal(K.finitary_lower_approx(aligned, 2).values, aligned.values)
    prod = K.finitary_lower_approx(K.parse_preset("product"), 1, g=2)
    # grid of left endpoints i/8; cell minima sit at the first grid point of each cell
    assert np.allclose(prod.values, [[0, 0], [0, 0.25]])
    with pytest.raises(CapabilityError):
        K.finitary_lower_approx(object(), 2)


def test_finitary_below_and_converging():
    f = lambda x, y: np.sin(3 * x) ** 2 + np.sin(3 * y) ** 2 + x * y
    level = 9
    pts = np.arange(2**level) / 2**level
    grid = f(pts[:, None], pts[None, :])
    errs = []
    for m in range(0, 7):
        w = K.finitary_lower_approx(f, m, grid_level=level)
        vals = w(pts[:, None] * np.ones_like(pts)[None, :], pts[None, :] * np.ones_like(pts)[:, None])
        assert np.all(vals <= grid + 1e-15)
        errs.append(float((grid - vals).mean()))
    assert all(a >= b - 1e-15 for a, b in zip(errs, errs[1:]))


def test_irreducible_components():
    assert K.irreducible_components(K.StepKernel.constant(1)) == [[0]]
    assert K.irreducible_components(K.parse_preset("remark-b").step()) == [[0], [1]]
    bd = np.kron(np.eye(3), np.ones((2, 2)))
    w = K.StepKernel.uniform(bd)
    comps = K.irreducible_components(w)
    assert comps == [[0, 1], [2, 3], [4, 5]]
    r = K.restrict(w, comps[1])
    assert r.values[2:4, 2:4].all() and r.values.sum() == 4


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 7).flatmap(lambda m: st.lists(st.sampled_from([0.0, 0.0, 1.0]), min_size=m * m, max_size=m * m)))
def test_components_separate_zero_blocks(xs):
    m = int(round(len(xs) ** 0.5))
    a = np.reshape(xs, (m, m))
    w = K.StepKernel.uniform(np.maximum(a, a.T))
    comps = K.irreducible_components(w)
    assert sorted(i for c in comps for i in c) == list(range(m))
    label = {i: j for j, c in enumerate(comps) for i in c}
    for h in range(m):
        for k in range(m):
            if label[h] != label[k]:
                assert w.values[h, k] == 0


def test_presets():
    assert np.array_equal(K.parse_preset("remark-a").step().values, [[2000, 0.01], [0.01, 2]])
    assert np.array_equal(K.parse_preset("checkerboard").step().values, [[0, 1], [1, 0]])
    assert K.parse_preset("checkerboard:4").step().n_blocks == 4
    assert K.parse_preset("product:2").step() is None
    assert K.parse_preset("product:2").bound == 2
    assert K.parse_preset("constant:0.5").label() == "constant:0.5"
    with pytest.raises(ValidationError):
        K.parse_preset("bogus")
    with pytest.raises(ValidationError):
        K.parse_preset("constant:-1")
