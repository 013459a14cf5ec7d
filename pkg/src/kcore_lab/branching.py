"""Multi-type Poisson branching processes driven by a kernel.

Exact side: the property-B probabilities ``beta`` satisfy
``beta_d = Psi_{k-1}(W beta_{d-1})`` from ``beta_0 = 1``, and
``P(A_d) = sum_h root(h) Psi_k((W beta_{d-1})(h))``. Iterating down from the
all-ones profile converges to the maximal fixed point, which is ``P(B | type)``.

Simulation side: :func:`simulate_and_check` grows the process generation by
generation and scores event ``A_d`` on each sampled tree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._rng import stream
from .errors import ValidationError

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 100_000
DEFAULT_POP_CAP = 10**6
DEFAULT_EPS_PA = 1e-8
MC_CHUNK = 4096
_TAIL_RTOL = 1e-17


# --------------------------------------------------------------------------
# Poisson tails


def _log_pmf(l: int, lam: np.ndarray) -> np.ndarray:
    return l * np.log(lam) - lam - math.lgamma(l + 1)


def _kahan_add(s, comp, term):
    t = s + term
    comp += np.where(np.abs(s) >= np.abs(term), (s - t) + term, (term - t) + s)
    return t, comp


_EXP_SAFE = 700.0  # below this, exp(-lam) and every pmf term stay normal floats


def _pmf_terms(lam: np.ndarray, stop: int):
    """Yield ``(l, P(Poisson(lam) = l))`` for ``l = 0, 1, ..., stop - 1``.

    The recurrence ``p_l = p_{l-1} lam / l`` keeps the relative error near
    ``sqrt(l)`` ulps; the log-space formula would lose ``l log(lam)`` ulps.
    """
    big = lam > _EXP_SAFE
    safe = np.where(big, 0.0, lam)
    term = np.exp(-safe)
    for l in range(stop):
        if l:
            term = term * safe / l
        yield l, np.where(big, np.exp(_log_pmf(l, lam)), term) if big.any() else term


def _upper_sum(k: int, lam: np.ndarray) -> np.ndarray:
    # lam < k here, so terms decrease from l = k onwards.
    for _, term in _pmf_terms(lam, k + 1):
        pass
    s, comp = term.copy(), np.zeros_like(term)
    l = k
    while True:
        l += 1
        term = term * lam / l
        s, comp = _kahan_add(s, comp, term)
        if not np.any(term > _TAIL_RTOL * s):
            break
    return s + comp


def _lower_sum(k: int, lam: np.ndarray) -> np.ndarray:
    s, comp = np.zeros_like(lam), np.zeros_like(lam)
    for _, term in _pmf_terms(lam, k):
        s, comp = _kahan_add(s, comp, term)
    return s + comp


def psi(k: int, lam):
    """``P(Poisson(lam) >= k)``, summing whichever side of the pmf is better conditioned."""
    k = int(k)
    arr = np.asarray(lam, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0):
        raise ValidationError("Poisson mean must be nonnegative")
    out = np.ones_like(arr) if k <= 0 else np.zeros_like(arr)
    if k > 0:
        pos = arr > 0
        small = pos & (arr < k)
        big = arr >= k
        if np.any(small):
            out[small] = _upper_sum(k, arr[small])
        if np.any(big):
            out[big] = 1.0 - _lower_sum(k, arr[big])
        np.clip(out, 0.0, 1.0, out=out)
    return float(out) if np.ndim(lam) == 0 else out


def psi_tail(k: int, c):
    """``sum_{l > k} e^{-c} c^l / l!``, i.e. ``psi(k + 1, c)``."""
    return psi(k + 1, c)


def tightness_k0(alpha: float, abar: float, k_max: int = 400) -> int | None:
    """Smallest ``K0`` with ``psi_tail(K, abar) < K**-alpha`` for every ``K0 <= K <= k_max``."""
    k0 = None
    for kk in range(k_max, 0, -1):
        if psi_tail(kk, abar) < kk ** (-alpha):
            k0 = kk
        else:
            break
    return k0


# --------------------------------------------------------------------------
# Exact recursion


@dataclass(frozen=True)
class BranchingSpec:
    """Kernel plus intensity; the effective kernel is ``kernel * scale * rate_adjustment``.

    ``kernel`` is any object with ``lengths``, ``apply`` and ``n_blocks``
    (a :class:`~kcore_lab.kernels.StepKernel` or an
    :class:`~kcore_lab.kernels.EmbeddedKernel`). ``rate_adjustment`` holds
    ``n / (n - bound)`` when emulating the dominating Poisson process of a
    finite graph. ``root_distribution`` defaults to the block lengths.
    """

    kernel: object
    scale: float = 1.0
    rate_adjustment: float = 1.0
    root_distribution: np.ndarray | None = None
    roots: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.scale >= 0:
            raise ValidationError(f"scale must be nonnegative, got {self.scale}")
        if not self.rate_adjustment >= 1:
            raise ValidationError(f"rate_adjustment must be >= 1, got {self.rate_adjustment}")
        if self.root_distribution is None:
            roots = np.asarray(self.kernel.lengths, dtype=float)
        else:
            roots = np.asarray(self.root_distribution, dtype=float)
            if roots.shape != (self.kernel.n_blocks,):
                raise ValidationError("root distribution must have one mass per block")
            if np.any(roots < 0) or abs(roots.sum() - 1.0) > 1e-9:
                raise ValidationError("root masses must be nonnegative and sum to 1")
        object.__setattr__(self, "roots", roots)

    @property
    def factor(self) -> float:
        return float(self.scale) * float(self.rate_adjustment)

    @property
    def n_blocks(self) -> int:
        return self.kernel.n_blocks

    def apply(self, v) -> np.ndarray:
        return self.factor * self.kernel.apply(v)

    def rates(self) -> np.ndarray:
        """Per-block child rates ``eff[h, j] * len(j)`` (dense step kernels only)."""
        values = getattr(self.kernel, "values", None)
        if values is None:
            raise ValidationError("simulation needs a dense step kernel")
        return self.factor * values * np.asarray(self.kernel.lengths)[None, :]

    @classmethod
    def dominating(cls, kernel, n: int, scale: float = 1.0) -> "BranchingSpec":
        """Poisson process with ``rho_n = 1 / (n - bound)`` dominating the Bernoulli exploration."""
        bound = kernel.bound * scale
        if n <= 3 * bound:
            raise ValidationError("domination needs n > 3 * bound")
        return cls(kernel, scale=scale, rate_adjustment=n / (n - bound))


@dataclass
class BetaProfile:
    beta: np.ndarray
    depth: int | None  # None for the limit
    converged: bool = True
    iterations: int = 0
    residual: float = 0.0
    tolerance: float | None = None

    @property
    def status(self) -> str:
        return "converged" if self.converged else "unconverged"


def beta(spec: BranchingSpec, k: int, depth: int | None = None, *, tol: float = DEFAULT_TOL,
         max_iter: int = DEFAULT_MAX_ITER) -> BetaProfile:
    """Per-block ``P(B_d | root type)`` at ``depth`` or, with ``depth=None``, its limit.

    The limit is the maximal fixed point of ``a = Psi_{k-1}(W a)``. If the
    max-norm change has not dropped below ``tol`` after ``max_iter`` steps
    the profile is returned with ``converged=False``.
    """
    if int(k) != k or k < 2:
        raise ValidationError(f"k must be an integer >= 2, got {k}")
    b = np.ones(spec.n_blocks)
    if depth is not None:
        if depth < 0:
            raise ValidationError("depth must be nonnegative")
        for _ in range(depth):
            b = np.minimum(psi(k - 1, spec.apply(b)), b)
        return BetaProfile(b, depth)
    residual = math.inf
    for it in range(1, max_iter + 1):
        # Exact iterates are nonincreasing; the minimum only strips rounding jitter.
        nb = np.minimum(psi(k - 1, spec.apply(b)), b)
        residual = float(np.max(b - nb)) if nb.size else 0.0
        b = nb
        if residual < tol:
            return BetaProfile(b, None, True, it, residual, tol)
    return BetaProfile(b, None, False, max_iter, residual, tol)


class ProbA(NamedTuple):
    value: float
    converged: bool
    iterations: int
    residual: float
    beta: np.ndarray

    @property
    def status(self) -> str:
        return "converged" if self.converged else "unconverged"

    def __float__(self):
        return self.value


def prob_A(spec: BranchingSpec, k: int, depth: int | None = None, *, tol: float = DEFAULT_TOL,
           max_iter: int = DEFAULT_MAX_ITER) -> ProbA:
    """``P(A_depth)`` or, with ``depth=None``, ``P(A)`` for the process of ``spec``."""
    if depth is not None and depth < 1:
        raise ValidationError("depth must be at least 1")
    prof = beta(spec, k, None if depth is None else depth - 1, tol=tol, max_iter=max_iter)
    per_root = psi(k, spec.apply(prof.beta))
    value = float(spec.roots @ per_root)
    return ProbA(value, prof.converged, prof.iterations, prof.residual, prof.beta)


# --------------------------------------------------------------------------
# Simulation


@dataclass
class BranchingSample:
    """A sampled rooted typed tree; ``children`` is in birth order.

    ``count`` is the number of children drawn. On the deepest sampled
    generation the children are not materialized, so ``count`` may exceed
    ``len(children)``; the root's ``depth_capped`` flag records this.
    """

    block: int
    count: int = 0
    children: list["BranchingSample"] = field(default_factory=list)
    depth_capped: bool = False
    population_capped: bool = False

    def size(self) -> int:
        return 1 + sum(c.size() for c in self.children)


@dataclass
class Generation:
    trial: np.ndarray   # chunk-local trial index
    parent: np.ndarray  # index into the previous generation (-1 at the root)
    block: np.ndarray
    count: np.ndarray   # number of children (materialized in the next generation, if any)
    rank: np.ndarray    # position among siblings


class Generations(NamedTuple):
    levels: list
    truncated: np.ndarray  # per trial
    trials: int


def sample_generations(spec: BranchingSpec, depth: int, trials: int, rng: np.random.Generator,
                       pop_cap: int = DEFAULT_POP_CAP, ordered: bool = False) -> Generations:
    """Grow ``trials`` independent trees through generations ``0..depth``.

    Each node of block ``h`` gets ``Poisson(eff[h, j] * len(j))`` children of
    block ``j``, independently over ``j``. Children of the last generation are
    counted but not materialized. With ``ordered=True`` siblings are put in
    uniformly random order (the birth order of an exchangeable brood).
    Trials whose node count exceeds ``pop_cap`` stop growing and are flagged.
    """
    rates = spec.rates()
    m = rates.shape[0]
    block = rng.choice(m, size=trials, p=spec.roots / spec.roots.sum())
    trial = np.arange(trials)
    parent = np.full(trials, -1)
    rank = np.zeros(trials, dtype=np.int64)
    population = np.ones(trials, dtype=np.int64)
    truncated = np.zeros(trials, dtype=bool)
    levels = []
    for t in range(depth + 1):
        per_block = rng.poisson(rates[block]) if block.size else np.zeros((0, m), dtype=np.int64)
        count = per_block.sum(axis=1)
        population += np.bincount(trial, weights=count, minlength=trials).astype(np.int64)
        truncated |= population > pop_cap
        levels.append(Generation(trial, parent, block, count, rank))
        if t == depth:
            break
        alive = ~truncated[trial]
        reps = np.where(alive[:, None], per_block, 0)
        flat = reps.ravel()
        node_of = np.repeat(np.arange(block.size), reps.sum(axis=1))
        child_block = np.repeat(np.tile(np.arange(m), block.size), flat)
        if ordered and node_of.size:
            order = np.lexsort((rng.random(node_of.size), node_of))
            child_block = child_block[order]
        starts = np.concatenate([[0], np.cumsum(reps.sum(axis=1))[:-1]]) if block.size else np.zeros(0, np.int64)
        rank = np.arange(node_of.size) - starts[node_of] if node_of.size else np.zeros(0, np.int64)
        trial, parent, block = trial[node_of], node_of, child_block
    return Generations(levels, truncated, trials)


def event_A(gens: Generations, k: int) -> np.ndarray:
    """Per-trial indicator of ``A_d`` for trees grown to ``depth = d - 1``."""
    levels = gens.levels
    last = len(levels) - 1
    need = lambda t: k if t == 0 else k - 1  # noqa: E731
    ok = levels[last].count >= need(last)
    for t in range(last - 1, -1, -1):
        good_children = np.bincount(levels[t + 1].parent, weights=ok.astype(float), minlength=levels[t].block.size)
        ok = good_children >= need(t)
    return ok & ~gens.truncated


def to_samples(gens: Generations) -> list[BranchingSample]:
    """Convert vectorized generations into explicit trees (for inspection and tests)."""
    nodes_prev = None
    roots = []
    for t, lev in enumerate(gens.levels):
        nodes = [BranchingSample(int(b), int(c)) for b, c in zip(lev.block, lev.count)]
        if t == 0:
            roots = nodes
        else:
            for node, par in zip(nodes, lev.parent):
                nodes_prev[par].children.append(node)
        nodes_prev = nodes
    frontier = np.bincount(gens.levels[-1].trial, weights=gens.levels[-1].count, minlength=gens.trials)
    for r, tr, fc in zip(roots, gens.truncated, frontier):
        r.population_capped = bool(tr)
        r.depth_capped = bool(fc > 0)
    return roots


def has_A(sample: BranchingSample, k: int, d: int) -> bool:
    """Evaluate ``A_d`` recursively on an explicit tree sampled to generation ``d - 1``."""

    def qualifies(node, level, need):
        if level == d - 1:
            return node.count >= need
        return sum(qualifies(ch, level + 1, k - 1) for ch in node.children) >= need

    return qualifies(sample, 0, k) and not sample.population_capped


class MCResult(NamedTuple):
    estimate: float
    stderr: float
    cap_hits: int
    trials: int
    status: str


def simulate_and_check(spec: BranchingSpec, k: int, d: int, trials: int, pop_cap: int = DEFAULT_POP_CAP,
                       seed: int = 0) -> MCResult:
    """Monte Carlo estimate of ``P(A_d)``.

    Trials that hit ``pop_cap`` count as failures; if more than 1% of trials
    do, the status is ``"cap-warning"``.
    """
    if int(k) != k or k < 2:
        raise ValidationError(f"k must be an integer >= 2, got {k}")
    if d < 1 or trials < 1 or pop_cap < 1:
        raise ValidationError("need d >= 1, trials >= 1 and pop_cap >= 1")
    hits = 0
    caps = 0
    for chunk, start in enumerate(range(0, trials, MC_CHUNK)):
        size = min(MC_CHUNK, trials - start)
        gens = sample_generations(spec, d - 1, size, stream(seed, chunk, 0xA), pop_cap)
        hits += int(event_A(gens, k).sum())
        caps += int(gens.truncated.sum())
    p = hits / trials
    stderr = math.sqrt(p * (1 - p) / trials)
    status = "cap-warning" if caps > 0.01 * trials else "ok"
    return MCResult(p, stderr, caps, trials, status)


# --------------------------------------------------------------------------
# Threshold scan


class ThresholdScan(NamedTuple):
    c_star: float | None
    status: str  # "found", "below-range" or "no threshold in range"
    curve: np.ndarray  # rows (c, P(A))
    unconverged: int


def _pa_at(kernel, k, c, tol, max_iter):
    res = prob_A(BranchingSpec(kernel, scale=c), k, tol=tol, max_iter=max_iter)
    return res.value, res.converged


def threshold_scan(kernel, k: int, c_lo: float, c_hi: float, eps_pa: float = DEFAULT_EPS_PA,
                   tol_c: float = 1e-4, grid: int = 101, *, tol: float = DEFAULT_TOL,
                   max_iter: int = DEFAULT_MAX_ITER) -> ThresholdScan:
    """Smallest ``c`` in ``[c_lo, c_hi]`` with ``P_{X^{cW}}(A) > eps_pa``, to width ``tol_c``.

    Bisection relies on ``P(A)`` being nondecreasing in ``c``. The returned
    curve samples ``P(A)`` on a uniform grid of ``grid`` points for jump
    inspection.
    """
    if not c_lo < c_hi or c_lo < 0:
        raise ValidationError("need 0 <= c_lo < c_hi")
    if not eps_pa > 0 or not tol_c > 0:
        raise ValidationError("eps_pa and tol_c must be positive")
    unconverged = 0
    cs = np.linspace(c_lo, c_hi, grid)
    vals = []
    for c in cs:
        v, ok = _pa_at(kernel, k, c, tol, max_iter)
        unconverged += not ok
        vals.append(v)
    curve = np.column_stack([cs, vals])
    hi_val, ok = _pa_at(kernel, k, c_hi, tol, max_iter)
    if hi_val <= eps_pa:
        return ThresholdScan(None, "no threshold in range", curve, unconverged)
    lo_val, _ = _pa_at(kernel, k, c_lo, tol, max_iter)
    if lo_val > eps_pa:
        return ThresholdScan(c_lo, "below-range", curve, unconverged)
    lo, hi = c_lo, c_hi
    while hi - lo > tol_c:
        mid = 0.5 * (lo + hi)
        v, ok = _pa_at(kernel, k, mid, tol, max_iter)
        unconverged += not ok
        if v > eps_pa:
            hi = mid
        else:
            lo = mid
    return ThresholdScan(0.5 * (lo + hi), "found", curve, unconverged)


def find_jumps(kernel, k: int, curve: np.ndarray, jump_tol: float = 0.01, tol_c: float = 1e-4, *,
               tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> list[tuple[float, float]]:
    """Locate discontinuities of ``c -> P(A)`` suggested by a sampled curve.

    Every grid interval whose increase exceeds ``jump_tol`` is bisected,
    following the half with the larger increase, down to width ``tol_c``. A
    steep but continuous rise loses its increase under refinement; a jump
    keeps it. Returns ``(location, jump size)`` pairs.
    """
    jumps = []
    cs, ps = curve[:, 0], curve[:, 1]
    for i in range(len(cs) - 1):
        if ps[i + 1] - ps[i] <= jump_tol:
            continue
        lo, hi, plo, phi = cs[i], cs[i + 1], ps[i], ps[i + 1]
        while hi - lo > tol_c:
            mid = 0.5 * (lo + hi)
            pm, _ = _pa_at(kernel, k, mid, tol, max_iter)
            if pm - plo >= phi - pm:
                hi, phi = mid, pm
            else:
                lo, plo = mid, pm
        if phi - plo > jump_tol:
            jumps.append((0.5 * (lo + hi), phi - plo))
    return jumps


__all__ = [
    "BranchingSample", "BranchingSpec", "BetaProfile", "MCResult", "ProbA", "ThresholdScan",
    "beta", "event_A", "find_jumps", "has_A", "prob_A", "psi", "psi_tail",
    "sample_generations", "simulate_and_check", "threshold_scan", "tightness_k0", "to_samples",
]
