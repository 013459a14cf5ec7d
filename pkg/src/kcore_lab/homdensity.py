"""Offspring-configuration probabilities and their tree-density expansions.

``g(x, K)`` is the probability that the first generations of the branching
process started at type ``x`` have the nested offspring counts ``K``. It obeys

    g(x, K) = exp(-deg(x)) / k0! * prod_j  int W(x, y) g(y, K_j) dy,

and expanding the exponential writes it as a signed series of
root-prescribed tree homomorphism densities ``sum_m lam_m t^x(T_m, W)``.
"""

from __future__ import annotations

import itertools
import math
import sys
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from ._rng import stream
from .branching import MC_CHUNK, BranchingSpec, sample_generations
from .errors import CapabilityError, ValidationError

MAX_SERIES_DEPTH = 3
MAX_SERIES_ARITY = 6
MAX_SERIES_TERMS = 2_000_000


@dataclass(frozen=True, eq=False)
class RootedTree:
    """Finite rooted tree; ``children`` are the subtrees hanging off the root."""

    children: tuple["RootedTree", ...] = ()

    @classmethod
    def star(cls, leaves: int) -> "RootedTree":
        return cls((LEAF,) * leaves)

    @classmethod
    def path(cls, edges: int) -> "RootedTree":
        t = LEAF
        for _ in range(edges):
            t = cls((t,))
        return t

    @classmethod
    def join(cls, *trees: "RootedTree") -> "RootedTree":
        """Identify the roots of ``trees``."""
        return cls(tuple(ch for t in trees for ch in t.children))

    @property
    def n_edges(self) -> int:
        return sum(1 + ch.n_edges for ch in self.children)

    @property
    def height(self) -> int:
        return 1 + max((ch.height for ch in self.children), default=-1)

    def canonical(self) -> str:
        """Isomorphism-invariant bracket string (children sorted)."""
        return "(" + "".join(sorted(ch.canonical() for ch in self.children)) + ")"

    def __repr__(self):
        return f"RootedTree{self.canonical()}"


LEAF = RootedTree()


def _density_vector(t: RootedTree, w, cache: dict) -> np.ndarray:
    key = id(t)
    hit = cache.get(key)
    if hit is not None:
        return hit[1]
    vec = np.ones(w.n_blocks)
    for ch in t.children:
        vec = vec * w.apply(_density_vector(ch, w, cache))
    cache[key] = (t, vec)  # hold t so its id stays unique for the cache's lifetime
    return vec


def tree_density(t: RootedTree, w, root_block: int | None = None) -> float:
    """``t^x(T, W)`` for ``x`` in block ``root_block``, or ``t(T, W)`` when it is ``None``."""
    vec = _density_vector(t, w, {})
    if root_block is None:
        return float(np.asarray(w.lengths) @ vec)
    return float(vec[root_block])


@dataclass(frozen=True)
class OffspringConfig:
    """Nested offspring counts ``K^d`` of the first ``depth`` generations.

    At ``depth == 0`` only the root's count is specified. Otherwise there is
    one child configuration of depth ``depth - 1`` per counted child.
    """

    count: int
    children: tuple["OffspringConfig", ...] = ()
    depth: int = 0

    def __post_init__(self):
        if int(self.count) != self.count or self.count < 0:
            raise ValidationError("offspring counts must be nonnegative integers")
        if self.depth < 0:
            raise ValidationError("depth must be nonnegative")
        if self.depth == 0 and self.children:
            raise ValidationError("a depth-0 configuration has no child configurations")
        if self.depth > 0:
            if len(self.children) != self.count:
                raise ValidationError("need exactly one child configuration per counted child")
            if any(ch.depth != self.depth - 1 for ch in self.children):
                raise ValidationError("child configurations must have depth one less than the parent")

    @classmethod
    def build(cls, spec) -> "OffspringConfig":
        """From nested tuples: ``3`` is a depth-0 count, ``(k0, [child, ...])`` a deeper level.

        ``(0, [])`` is ambiguous about depth and is resolved to match its siblings.
        """
        if isinstance(spec, OffspringConfig):
            return spec
        if isinstance(spec, int):
            return cls(spec)
        k0, kids = spec
        built = [cls.build(k) for k in kids]
        depth = 1 + max((b.depth for b in built), default=0)
        built = [b if b.depth == depth - 1 else _lift(b, depth - 1) for b in built]
        return cls(k0, tuple(built), depth)

    def max_count(self) -> int:
        return max([self.count] + [ch.max_count() for ch in self.children])

    def n_nodes(self) -> int:
        return 1 + sum(ch.n_nodes() for ch in self.children)


def _lift(cfg: OffspringConfig, depth: int) -> OffspringConfig:
    if cfg.count != 0:
        raise ValidationError("sibling configurations have inconsistent depths")
    return OffspringConfig(0, (), depth)


def _config_vector(cfg: OffspringConfig, w, deg: np.ndarray) -> np.ndarray:
    if cfg.depth == 0:
        with np.errstate(divide="ignore"):
            log_pmf = cfg.count * np.log(deg) - deg - math.lgamma(cfg.count + 1)
        out = np.exp(log_pmf)
        if cfg.count == 0:
            out = np.exp(-deg)
        return out
    vec = np.exp(-deg) / math.factorial(cfg.count)
    for ch in cfg.children:
        vec = vec * w.apply(_config_vector(ch, w, deg))
    return vec


def config_prob(config, w, root_block: int | None = None) -> float:
    """``g(x, K)`` for ``x`` in ``root_block``; with no block, ``P(N^d = K) = int g``."""
    cfg = OffspringConfig.build(config)
    vec = _config_vector(cfg, w, w.degree())
    if root_block is None:
        return float(np.asarray(w.lengths) @ vec)
    return float(vec[root_block])


# --------------------------------------------------------------------------
# Tree series


def _exp_partial(a: float, m_max: int) -> tuple[float, float]:
    """``(sum_{m<=M} a^m/m!, sum_{m>M} a^m/m!)``, the tail summed directly."""
    head, term = 0.0, 1.0
    terms = []
    for m in range(m_max + 1):
        if m:
            term *= a / m
        terms.append(term)
    head = math.fsum(terms)
    tail_terms, m = [], m_max
    term = terms[-1]
    while True:
        m += 1
        term *= a / m
        tail_terms.append(term)
        if term <= sys.float_info.epsilon * 1e-3 * math.fsum(tail_terms) or term == 0.0:
            break
    return head, math.fsum(tail_terms)


def _prod_tail(included: Sequence[float], tails: Sequence[float]) -> float:
    """``prod(a_i + t_i) - prod(a_i)`` without cancellation."""
    d, q = 0.0, 1.0
    for a, t in zip(included, tails):
        d = d * (a + t) + q * t
        q *= a
    return d


class TreeSeries(NamedTuple):
    terms: list  # (coefficient, RootedTree)
    abar: float
    m_max: int
    tail_bound: float
    included_mass: float  # sum over kept terms of |coef| * abar^|E|


def _term_count(cfg: OffspringConfig, m_max: int) -> int:
    n = m_max + 1
    for ch in cfg.children:
        n *= _term_count(ch, m_max)
    return n


def _series(cfg: OffspringConfig, abar: float, m_max: int):
    k0 = cfg.count
    fact = math.factorial(k0)
    head, tail = _exp_partial(abar, m_max)
    if cfg.depth == 0:
        terms = [((-1) ** m / (fact * math.factorial(m)), RootedTree.star(m + k0)) for m in range(m_max + 1)]
        scale = abar**k0 / fact
        return terms, scale * head, scale * tail
    child = [_series(ch, abar, m_max) for ch in cfg.children]
    included = [head / fact] + [abar * inc for _, inc, _ in child]
    tails = [tail / fact] + [abar * t for _, _, t in child]
    terms = []
    for m0 in range(m_max + 1):
        lead = (-1) ** m0 / (fact * math.factorial(m0))
        bare = (LEAF,) * m0
        for combo in itertools.product(*(c[0] for c in child)):
            coef = lead
            for cf, _ in combo:
                coef *= cf
            terms.append((coef, RootedTree(bare + tuple(t for _, t in combo))))
    return terms, math.prod(included), _prod_tail(included, tails)


def tree_series(config, abar: float, m_max: int) -> TreeSeries:
    """Trees and coefficients of the inductive expansion of ``g(x, K)``, truncated per index at ``m_max``.

    Depth-0 configurations with count ``k`` expand into ``(m + k)``-stars with
    ``(-1)^m / (k! m!)``. Deeper ones combine ``m0`` bare leaves with one
    grafted term from each child's series, with coefficient
    ``(-1)^m0 / (k0! m0!)`` times the children's coefficients. ``tail_bound``
    bounds ``sum |coef| abar^|E|`` over all omitted terms.
    """
    cfg = OffspringConfig.build(config)
    if not abar >= 0 or m_max < 0:
        raise ValidationError("need abar >= 0 and m_max >= 0")
    if cfg.depth > MAX_SERIES_DEPTH or cfg.max_count() > MAX_SERIES_ARITY:
        raise CapabilityError(
            f"series expansion is limited to depth <= {MAX_SERIES_DEPTH} and counts <= {MAX_SERIES_ARITY}"
        )
    if _term_count(cfg, m_max) > MAX_SERIES_TERMS:
        raise CapabilityError(f"series would have more than {MAX_SERIES_TERMS} terms; lower m_max")
    terms, inc, tail = _series(cfg, float(abar), int(m_max))
    return TreeSeries(terms, float(abar), int(m_max), tail, inc)


class SeriesValue(NamedTuple):
    value: float
    error_bound: float  # truncation tail plus a floating-point allowance


def eval_series(series: TreeSeries, w, root_block: int | None = None) -> SeriesValue:
    if w.bound > series.abar * (1 + 1e-12):
        raise ValidationError(f"kernel bound {w.bound} exceeds the series bound {series.abar}")
    cache: dict = {}
    lengths = np.asarray(w.lengths)
    parts = []
    for coef, tree in series.terms:
        vec = _density_vector(tree, w, cache)
        dens = float(lengths @ vec) if root_block is None else float(vec[root_block])
        parts.append(coef * dens)
    value = math.fsum(parts)
    magnitude = math.fsum(abs(p) for p in parts)
    max_edges = max((t.n_edges for _, t in series.terms), default=0)
    rounding = 4 * (max_edges + 2) * sys.float_info.epsilon * magnitude
    return SeriesValue(value, series.tail_bound + rounding)


# --------------------------------------------------------------------------
# Monte Carlo oracle


class ConfigFrequency(NamedTuple):
    estimate: float
    stderr: float
    cap_hits: int
    trials: int


def _matches(cfg: OffspringConfig, gens) -> np.ndarray:
    levels = gens.levels
    starts = []
    for t in range(len(levels) - 1):
        n_kids = np.bincount(levels[t + 1].parent, minlength=levels[t].count.size)
        starts.append(np.cumsum(n_kids) - n_kids)
    ok = ~gens.truncated.copy()

    def walk(c: OffspringConfig, t: int, idx: np.ndarray):
        nonlocal ok
        ok &= levels[t].count[idx] == c.count
        for j, ch in enumerate(c.children):
            size = levels[t + 1].parent.size
            child = np.where(ok, starts[t][idx] + j, 0)
            child = np.minimum(child, max(size - 1, 0))
            if size == 0:
                ok[:] = False
                return
            walk(ch, t + 1, child)

    walk(cfg, 0, np.arange(gens.trials))
    return ok


def config_frequency(config, spec: BranchingSpec | object, trials: int, seed: int = 0,
                     pop_cap: int = 10**6) -> ConfigFrequency:
    """Empirical frequency of the ordered configuration ``config`` in the branching process.

    Siblings are uniformly ordered, matching the exchangeable ordering implicit in ``g``.
    ``spec`` may be a kernel, in which case the process starts from a uniform root type.
    """
    cfg = OffspringConfig.build(config)
    if not isinstance(spec, BranchingSpec):
        spec = BranchingSpec(spec)
    if trials < 1:
        raise ValidationError("trials must be positive")
    hits = caps = 0
    for chunk, start in enumerate(range(0, trials, MC_CHUNK)):
        size = min(MC_CHUNK, trials - start)
        gens = sample_generations(spec, cfg.depth, size, stream(seed, chunk, 0xC), pop_cap, ordered=True)
        hits += int(_matches(cfg, gens).sum())
        caps += int(gens.truncated.sum())
    p = hits / trials
    return ConfigFrequency(p, math.sqrt(p * (1 - p) / trials), caps, trials)
