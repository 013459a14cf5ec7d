"""Dense weighted graphs, bond percolation, k-cores and short-cycle counts."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ._rng import stream
from .errors import ValidationError
from .kernels import StepKernel

PALEY_MAX_Q = 10**7
SHORT_CYCLE_MAX = 12


# --------------------------------------------------------------------------
# Weighted dense graphs


class WeightedDenseGraph:
    """Symmetric nonnegative edge weights ``a[i, j]`` with zero diagonal, bounded by ``bound``.

    This base class is the explicit variant, backed by a dense matrix. The
    generator-backed subclasses compute weights on demand and override
    :meth:`matvec` with a structured product.
    """

    kind = "explicit"

    def __init__(self, weights, bound: float | None = None):
        w = np.array(weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValidationError("weights must be a square matrix")
        if not np.array_equal(w, w.T):
            raise ValidationError("weights must be symmetric")
        if np.any(np.diag(w) != 0):
            raise ValidationError("weights must have a zero diagonal")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValidationError("weights must be finite and nonnegative")
        top = float(w.max()) if w.size else 0.0
        self.n = w.shape[0]
        self.bound = top if bound is None else float(bound)
        if self.bound < top:
            raise ValidationError("bound is below the largest weight")
        w.flags.writeable = False
        self._w = w

    def weight(self, i, j) -> np.ndarray:
        return self._w[i, j]

    def dense(self) -> np.ndarray:
        return self._w

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self._w @ v

    def total_weight(self) -> float:
        """``sum_{i,j} a[i, j]`` over ordered pairs."""
        return float(self.matvec(np.ones(self.n)).sum())

    def __repr__(self):
        return f"{type(self).__name__}(n={self.n}, bound={self.bound:g})"


class _RuleGraph(WeightedDenseGraph):
    def dense(self) -> np.ndarray:
        idx = np.arange(self.n)
        return self.weight(idx[:, None], idx[None, :])

    def matvec(self, v):
        out = np.empty(self.n)
        step = max(1, 2**22 // max(self.n, 1))
        idx = np.arange(self.n)
        for s in range(0, self.n, step):
            rows = idx[s : s + step]
            out[rows] = self.weight(rows[:, None], idx[None, :]) @ v
        return out


class ConstantGraph(_RuleGraph):
    kind = "constant"

    def __init__(self, n: int, a: float):
        if n < 1 or a < 0:
            raise ValidationError("constant graph needs n >= 1 and a >= 0")
        self.n, self.a, self.bound = int(n), float(a), float(a)

    def weight(self, i, j):
        i, j = np.broadcast_arrays(np.asarray(i), np.asarray(j))
        return np.where(i == j, 0.0, self.a)

    def matvec(self, v):
        return self.a * (v.sum() - v)


class BlockGraph(_RuleGraph):
    """Vertex ``i`` takes the block of the kernel containing the cell midpoint ``(i + 1/2) / n``."""

    kind = "block"

    def __init__(self, n: int, kernel: StepKernel):
        if n < 1:
            raise ValidationError("block graph needs n >= 1")
        self.n, self.kernel, self.bound = int(n), kernel, kernel.bound
        self.labels = kernel.block_of((np.arange(n) + 0.5) / n)

    def weight(self, i, j):
        i, j = np.broadcast_arrays(np.asarray(i), np.asarray(j))
        return np.where(i == j, 0.0, self.kernel.values[self.labels[i], self.labels[j]])

    def matvec(self, v):
        m = self.kernel.n_blocks
        sums = np.bincount(self.labels, weights=v, minlength=m)
        vals = self.kernel.values
        return (vals @ sums)[self.labels] - vals[self.labels, self.labels] * v


class GridGraph(_RuleGraph):
    """``a[i, j] = f((i+1)/n, (j+1)/n)`` for a pointwise-evaluable kernel ``f`` (1-based grid)."""

    kind = "kernel-grid"

    def __init__(self, n: int, f, bound: float):
        if n < 1:
            raise ValidationError("kernel-grid graph needs n >= 1")
        self.n, self.f, self.bound = int(n), f, float(bound)

    def weight(self, i, j):
        i, j = np.broadcast_arrays(np.asarray(i), np.asarray(j))
        vals = np.asarray(self.f((i + 1) / self.n, (j + 1) / self.n), dtype=float)
        return np.where(i == j, 0.0, vals)


def is_prime(q: int) -> bool:
    if q < 2:
        return False
    if q % 2 == 0:
        return q == 2
    for d in range(3, math.isqrt(q) + 1, 2):
        if q % d == 0:
            return False
    return True


class PaleyGraph(_RuleGraph):
    """Vertices ``Z_q``; ``i ~ j`` iff ``i - j`` is a nonzero square mod ``q``."""

    kind = "paley"

    def __init__(self, q: int):
        q = int(q)
        if q > PALEY_MAX_Q:
            raise ValidationError(f"Paley order {q} exceeds the cap {PALEY_MAX_Q}")
        if not is_prime(q):
            raise ValidationError(f"Paley order {q} is not prime")
        if q % 4 != 1:
            raise ValidationError(f"Paley order {q} is not 1 mod 4")
        self.n, self.q, self.bound = q, q, 1.0
        res = np.zeros(q, dtype=bool)
        x = np.arange(1, q, dtype=np.int64)
        res[(x * x) % q] = True
        self.residues = res
        self._spectrum = None

    def residue_set(self) -> list[int]:
        return np.flatnonzero(self.residues).tolist()

    def weight(self, i, j):
        return self.residues[(np.asarray(i) - np.asarray(j)) % self.q].astype(float)

    def matvec(self, v):
        # Circulant with a symmetric first row, so the spectrum is real.
        if self._spectrum is None:
            self._spectrum = np.fft.rfft(self.residues.astype(float))
        v = np.asarray(v, dtype=float)
        out = np.fft.irfft(self._spectrum * np.fft.rfft(v), n=self.q)
        # FFT rounding can dip below zero where the exact product of nonnegatives is zero
        return np.maximum(out, 0.0) if v.min(initial=0.0) >= 0 else out


@dataclass(frozen=True)
class GraphGenSpec:
    """Generator recipe: ``constant(n, a)``, ``block(n, kernel)``, ``paley(q)`` or ``kernel-grid(n, f)``."""

    kind: str
    n: int | None = None
    a: float | None = None
    kernel: object = None
    q: int | None = None
    bound: float | None = None

    @classmethod
    def constant(cls, n, a=1.0):
        return cls("constant", n=n, a=a)

    @classmethod
    def block(cls, n, kernel):
        return cls("block", n=n, kernel=kernel)

    @classmethod
    def paley(cls, q):
        return cls("paley", q=q)

    @classmethod
    def kernel_grid(cls, n, f, bound=None):
        return cls("kernel-grid", n=n, kernel=f, bound=bound)


def generate(spec: GraphGenSpec) -> WeightedDenseGraph:
    if spec.kind == "constant":
        return ConstantGraph(spec.n, spec.a)
    if spec.kind == "block":
        return BlockGraph(spec.n, spec.kernel)
    if spec.kind == "paley":
        return PaleyGraph(spec.q)
    if spec.kind == "kernel-grid":
        f = spec.kernel
        bound = spec.bound if spec.bound is not None else getattr(f, "bound", None)
        if bound is None:
            raise ValidationError("kernel-grid needs a bound for a bare callable")
        return GridGraph(spec.n, f, bound)
    raise ValidationError(f"unknown graph kind {spec.kind!r}")


# --------------------------------------------------------------------------
# Simple graphs


class SimpleGraph:
    """Undirected simple graph in CSR form with sorted neighbor lists."""

    def __init__(self, n: int, indptr: np.ndarray, indices: np.ndarray):
        self.n = int(n)
        self.indptr = indptr
        self.indices = indices
        indptr.flags.writeable = False
        indices.flags.writeable = False

    @classmethod
    def from_edges(cls, n: int, u, v) -> "SimpleGraph":
        u = np.asarray(u, dtype=np.int64)
        v = np.asarray(v, dtype=np.int64)
        if u.shape != v.shape:
            raise ValidationError("edge endpoint arrays differ in length")
        if u.size and (min(u.min(), v.min()) < 0 or max(u.max(), v.max()) >= n):
            raise ValidationError("edge endpoint out of range")
        if np.any(u == v):
            raise ValidationError("self-loops are not allowed")
        src = np.concatenate([u, v])
        dst = np.concatenate([v, u])
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        if src.size and np.any((src[1:] == src[:-1]) & (dst[1:] == dst[:-1])):
            raise ValidationError("duplicate edges are not allowed")
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
        return cls(n, indptr, dst)

    @classmethod
    def from_edge_list(cls, n: int, edges) -> "SimpleGraph":
        arr = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        return cls.from_edges(n, arr[:, 0], arr[:, 1])

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v] : self.indptr[v + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def n_edges(self) -> int:
        return int(self.indices.size // 2)

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Edges ``(u, v)`` with ``u < v`` in ascending order."""
        src = np.repeat(np.arange(self.n), self.degrees())
        keep = src < self.indices
        return src[keep], self.indices[keep]

    def induced(self, members) -> "SimpleGraph":
        """Induced subgraph, relabelled to ``0..len(members)-1`` in sorted order."""
        members = np.unique(np.asarray(members, dtype=np.int64))
        relabel = np.full(self.n, -1, dtype=np.int64)
        relabel[members] = np.arange(members.size)
        u, v = self.edges()
        keep = (relabel[u] >= 0) & (relabel[v] >= 0)
        return SimpleGraph.from_edges(members.size, relabel[u[keep]], relabel[v[keep]])

    def write_edgelist(self, path) -> None:
        u, v = self.edges()
        lines = "".join(f"{a} {b}\n" for a, b in zip(u.tolist(), v.tolist()))
        Path(path).write_text(lines, encoding="utf-8")

    def __repr__(self):
        return f"SimpleGraph(n={self.n}, edges={self.n_edges})"


# --------------------------------------------------------------------------
# Percolation

_STRATEGIES = ("naive", "fast")


def _row_starts(n: int) -> np.ndarray:
    i = np.arange(n, dtype=np.int64)
    return i * (n - 1) - i * (i - 1) // 2


def _pairs_from_index(n: int, lin: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    starts = _row_starts(n)
    i = np.searchsorted(starts, lin, side="right") - 1
    j = i + 1 + (lin - starts[i])
    return i, j


def percolate(g: WeightedDenseGraph, c: float, seed: int, strategy: str = "fast", trial: int = 0) -> SimpleGraph:
    """Keep each pair ``i < j`` independently with probability ``min(c * a[i, j] / n, 1)``.

    ``naive`` draws one uniform per pair in row-major order. ``fast`` jumps
    between candidate pairs along the row-major pair index with geometric gaps
    at rate ``p* = min(c * bound / n, 1)`` and thins each candidate to its
    true probability; expected work is ``O(n * c * bound)``. The two
    strategies have the same law but consume different streams.
    """
    c = float(c)
    if not c >= 0:
        raise ValidationError(f"c must be nonnegative, got {c}")
    if strategy not in _STRATEGIES:
        raise ValidationError(f"unknown percolation strategy {strategy!r}")
    n = g.n
    empty = np.empty(0, dtype=np.int64)
    if c == 0 or n < 2 or g.bound == 0:
        return SimpleGraph.from_edges(n, empty, empty)
    rng = stream(seed, trial, _STRATEGIES.index(strategy))
    if strategy == "naive":
        us, vs = [], []
        for i in range(n - 1):
            js = np.arange(i + 1, n)
            p = np.minimum(c * g.weight(i, js) / n, 1.0)
            keep = rng.random(js.size) < p
            us.append(np.full(int(keep.sum()), i, dtype=np.int64))
            vs.append(js[keep])
        return SimpleGraph.from_edges(n, np.concatenate(us), np.concatenate(vs))

    total = n * (n - 1) // 2
    p_star = min(c * g.bound / n, 1.0)
    batch = int(total * p_star + 6 * math.sqrt(total * p_star) + 64)
    positions = []
    last = -1
    while True:
        if p_star >= 1.0:
            gaps = np.ones(batch, dtype=np.int64)
        else:
            gaps = rng.geometric(p_star, size=batch)
        pos = last + np.cumsum(gaps)
        done = pos[-1] >= total
        pos = pos[pos < total]
        positions.append(pos)
        if done:
            break
        last = int(pos[-1])
    lin = np.concatenate(positions)
    i, j = _pairs_from_index(n, lin)
    p = np.minimum(c * g.weight(i, j) / n, 1.0)
    keep = rng.random(lin.size) * p_star < p
    return SimpleGraph.from_edges(n, i[keep], j[keep])


# --------------------------------------------------------------------------
# k-core


class KCore(NamedTuple):
    members: np.ndarray
    size: int


def core_numbers(g: SimpleGraph, rng: np.random.Generator | None = None) -> np.ndarray:
    """Core number of every vertex by bucket-queue peeling (Batagelj-Zaversnik).

    ``rng`` shuffles the order of vertices inside each degree bucket; the
    result does not depend on it.
    """
    n = g.n
    deg = g.degrees().tolist()
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    indptr = g.indptr.tolist()
    nbrs = g.indices.tolist()
    md = max(deg)
    order = list(range(n)) if rng is None else rng.permutation(n).tolist()
    buckets: list[list[int]] = [[] for _ in range(md + 1)]
    for v in order:
        buckets[deg[v]].append(v)
    vert: list[int] = []
    bin_start = [0] * (md + 1)
    for d in range(md + 1):
        bin_start[d] = len(vert)
        vert.extend(buckets[d])
    pos = [0] * n
    for idx, v in enumerate(vert):
        pos[v] = idx
    for idx in range(n):
        v = vert[idx]
        dv = deg[v]
        for p in range(indptr[v], indptr[v + 1]):
            u = nbrs[p]
            du = deg[u]
            if du > dv:
                pu = pos[u]
                pw = bin_start[du]
                w = vert[pw]
                if u != w:
                    vert[pu], vert[pw] = w, u
                    pos[u], pos[w] = pw, pu
                bin_start[du] += 1
                deg[u] = du - 1
    return np.asarray(deg, dtype=np.int64)


def k_core(g: SimpleGraph, k: int, rng: np.random.Generator | None = None) -> KCore:
    """Vertices of the maximal induced subgraph with minimum degree at least ``k``."""
    if int(k) != k or k < 2:
        raise ValidationError(f"k must be an integer >= 2, got {k}")
    members = np.flatnonzero(core_numbers(g, rng) >= k)
    return KCore(members, int(members.size))


# --------------------------------------------------------------------------
# Short cycles


def vertices_on_short_cycles(g: SimpleGraph, max_len: int) -> int:
    """Number of vertices lying on some cycle of length at most ``max_len``.

    From each vertex ``v`` a breadth-first search to depth ``max_len // 2``
    labels every reached vertex with the neighbor of ``v`` it descends from.
    The shortest cycle through ``v`` is ``min d(a) + d(b) + 1`` over edges
    ``ab`` whose endpoints carry different labels.
    """
    if int(max_len) != max_len or not 3 <= max_len <= SHORT_CYCLE_MAX:
        raise ValidationError(f"max_len must be an integer in [3, {SHORT_CYCLE_MAX}], got {max_len}")
    indptr = g.indptr.tolist()
    nbrs = g.indices.tolist()
    limit = max_len // 2
    count = 0
    for v in range(g.n):
        dist = {v: 0}
        branch = {v: -1}
        queue = deque()
        for u in nbrs[indptr[v] : indptr[v + 1]]:
            dist[u] = 1
            branch[u] = u
            queue.append(u)
        found = False
        while queue and not found:
            a = queue.popleft()
            da = dist[a]
            for b in nbrs[indptr[a] : indptr[a + 1]]:
                if b == v:
                    continue
                db = dist.get(b)
                if db is None:
                    if da < limit:
                        dist[b] = da + 1
                        branch[b] = branch[a]
                        queue.append(b)
                elif branch[b] != branch[a] and da + db + 1 <= max_len:
                    found = True
                    break
        count += found
    return count
