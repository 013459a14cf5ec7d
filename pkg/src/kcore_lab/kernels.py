"""Bounded graphons represented as step kernels.

A step kernel is a symmetric block matrix on an interval partition of [0, 1].
Every kernel used by the package (a target graphon, its finitary
approximations, the embedding of a finite weighted graph, or a rescaled
copy) is one of these, so the branching and homomorphism code only ever
needs block sums.

The objects consumed by the rest of the package follow a small protocol:

``lengths``
    block lengths (sum to 1)
``apply(v)``
    the integral operator, ``(Wv)(h) = sum_j W[h, j] * len(j) * v[j]``
``degree()``
    ``apply(1)``
``bound``
    an upper bound on the kernel values

:class:`StepKernel` implements it densely; :class:`EmbeddedKernel` implements
it lazily for large generated graphs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from ._rng import stream
from .errors import CapabilityError, ValidationError

BREAK_TOL = 1e-12
EXACT_CUT_MAX_BLOCKS = 24
DEFAULT_RESTARTS = 32
DEFAULT_GRID_BITS = 4
MAX_GRID_LEVEL = 12


def _validate_breaks(breaks) -> np.ndarray:
    b = np.array(breaks, dtype=float).ravel()
    if b.size < 2:
        raise ValidationError("breaks need at least two entries")
    if abs(b[0]) > BREAK_TOL or abs(b[-1] - 1.0) > BREAK_TOL:
        raise ValidationError("breaks must start at 0 and end at 1")
    b[0], b[-1] = 0.0, 1.0
    if not np.all(np.diff(b) > 0):
        raise ValidationError("breaks must be strictly increasing")
    return b


class _StepBase:
    """Shared storage and block arithmetic for signed and unsigned step kernels."""

    __slots__ = ("breaks", "values", "bound", "lengths")

    def __init__(self, breaks, values, bound=None, *, _adopt=False):
        b = _validate_breaks(breaks)
        # _adopt: take ownership of a freshly built float array instead of copying it
        v = np.asarray(values, dtype=float) if _adopt else np.array(values, dtype=float)
        m = b.size - 1
        if v.shape != (m, m):
            raise ValidationError(f"values must be {m}x{m} to match breaks, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("kernel values must be finite")
        if not np.array_equal(v, v.T):
            raise ValidationError("kernel values must be symmetric")
        self._check_values(v)
        top = float(np.abs(v).max()) if v.size else 0.0
        if bound is None:
            bound = top
        bound = float(bound)
        if bound < top:
            raise ValidationError(f"bound {bound} is below the largest entry {top}")
        b.flags.writeable = False
        v.flags.writeable = False
        lengths = np.diff(b)
        lengths.flags.writeable = False
        object.__setattr__(self, "breaks", b)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "bound", bound)
        object.__setattr__(self, "lengths", lengths)

    def __setattr__(self, name, value):
        raise AttributeError(f"{type(self).__name__} is immutable")

    def __reduce__(self):
        return (type(self), (self.breaks, self.values, self.bound))

    def _check_values(self, v: np.ndarray) -> None:
        pass

    @property
    def n_blocks(self) -> int:
        return self.values.shape[0]

    def apply(self, v) -> np.ndarray:
        return self.values @ (self.lengths * np.asarray(v, dtype=float))

    def degree(self) -> np.ndarray:
        return self.apply(np.ones(self.n_blocks))

    def integral(self) -> float:
        return float(self.lengths @ self.values @ self.lengths)

    def block_of(self, x) -> np.ndarray:
        """Index of the block containing each point; the final break belongs to the last block."""
        idx = np.searchsorted(self.breaks, np.asarray(x, dtype=float), side="right") - 1
        return np.clip(idx, 0, self.n_blocks - 1)

    def __call__(self, x, y) -> np.ndarray:
        return self.values[self.block_of(x), self.block_of(y)]

    def __repr__(self):
        return f"{type(self).__name__}(n_blocks={self.n_blocks}, bound={self.bound:g})"


class StepKernel(_StepBase):
    """Finitary graphon: nonnegative symmetric block values on an interval partition.

    Parameters
    ----------
    breaks : sequence of float
        ``0 = b_0 < b_1 < ... < b_M = 1``.
    values : (M, M) array_like
        Block heights. Must be symmetric and nonnegative.
    bound : float, optional
        Upper bound on the values (defaults to the maximum entry).
    """

    __slots__ = ()

    def _check_values(self, v):
        if np.any(v < 0):
            raise ValidationError("step kernel values must be nonnegative")

    @classmethod
    def constant(cls, a: float) -> "StepKernel":
        return cls([0.0, 1.0], [[a]])

    @classmethod
    def uniform(cls, values) -> "StepKernel":
        """Kernel on ``M`` equal-length blocks."""
        v = np.asarray(values, dtype=float)
        return cls(np.arange(v.shape[0] + 1) / v.shape[0], v)

    def __sub__(self, other: "StepKernel") -> "SignedStepKernel":
        return difference(self, other)

    def to_json(self) -> str:
        return json.dumps({"breaks": self.breaks.tolist(), "values": self.values.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "StepKernel":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"kernel file is not valid JSON: {exc}") from None
        if not isinstance(obj, dict) or "breaks" not in obj or "values" not in obj:
            raise ValidationError('kernel file needs "breaks" and "values" fields')
        return cls(obj["breaks"], obj["values"])


class SignedStepKernel(_StepBase):
    """Step kernel whose entries may be negative; the integrand of the cut metric."""

    __slots__ = ()

    def __neg__(self):
        return SignedStepKernel(self.breaks, -self.values, self.bound)

    def __mul__(self, lam: float):
        return SignedStepKernel(self.breaks, lam * self.values, abs(lam) * self.bound)

    __rmul__ = __mul__

    def __add__(self, other: "SignedStepKernel"):
        breaks, ia, ib = common_refinement(self.breaks, other.breaks)
        vals = self.values[np.ix_(ia, ia)] + other.values[np.ix_(ib, ib)]
        return SignedStepKernel(breaks, vals, self.bound + other.bound)

    @classmethod
    def uniform(cls, values) -> "SignedStepKernel":
        v = np.asarray(values, dtype=float)
        return cls(np.arange(v.shape[0] + 1) / v.shape[0], v)


def load_kernel(path) -> StepKernel:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read kernel file {path}: {exc.strerror}") from exc
    return StepKernel.from_json(text)


def save_kernel(kernel: StepKernel, path) -> None:
    Path(path).write_text(kernel.to_json() + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# Constructions


def embed_graph(g) -> StepKernel:
    """Embed an ``n``-vertex weighted graph as the ``n``-block kernel with breaks ``i/n``.

    Materializes the dense ``n x n`` value matrix; see :class:`EmbeddedKernel`
    for the lazy equivalent used at large ``n``.
    """
    n = g.n
    if n < 1:
        raise ValidationError("graph must have at least one vertex")
    values = np.array(g.dense(), dtype=float)
    return StepKernel(np.arange(n + 1) / n, values, g.bound, _adopt=True)


class EmbeddedKernel:
    """The embedding of a weighted graph, evaluated through the graph's own matvec.

    Equal (as an operator) to ``embed_graph(g)`` but never forms the dense
    matrix, so generator-backed graphs with tens of thousands of vertices are
    cheap to use as branching-process kernels.
    """

    def __init__(self, g):
        self.graph = g
        self.n_blocks = g.n
        self.bound = float(g.bound)
        self.lengths = np.full(g.n, 1.0 / g.n)
        self.lengths.flags.writeable = False

    def apply(self, v) -> np.ndarray:
        return self.graph.matvec(np.asarray(v, dtype=float)) / self.n_blocks

    def degree(self) -> np.ndarray:
        return self.apply(np.ones(self.n_blocks))

    def dense(self) -> StepKernel:
        return embed_graph(self.graph)

    def __repr__(self):
        return f"EmbeddedKernel({self.graph!r})"


def scale(w: StepKernel, lam: float) -> StepKernel:
    lam = float(lam)
    if not lam >= 0:
        raise ValidationError(f"scale factor must be nonnegative, got {lam}")
    return StepKernel(w.breaks, lam * w.values, lam * w.bound)


def degree_function(w) -> np.ndarray:
    """Per-block row integrals ``int W(x, y) dy``."""
    return w.degree()


def common_refinement(a_breaks, b_breaks, tol: float = BREAK_TOL):
    """Merge two break sets; returns the merged breaks and, for each new cell,
    the index of the cell of ``a`` and of ``b`` containing it."""
    merged = np.concatenate([a_breaks, b_breaks])
    merged.sort(kind="mergesort")
    keep = np.concatenate([[True], np.diff(merged) > tol])
    merged = merged[keep]
    merged[-1] = 1.0
    mids = 0.5 * (merged[:-1] + merged[1:])
    ia = np.clip(np.searchsorted(a_breaks, mids, side="right") - 1, 0, len(a_breaks) - 2)
    ib = np.clip(np.searchsorted(b_breaks, mids, side="right") - 1, 0, len(b_breaks) - 2)
    return merged, ia, ib


def difference(a: _StepBase, b: _StepBase) -> SignedStepKernel:
    """``a - b`` on the common refinement of their partitions."""
    breaks, ia, ib = common_refinement(a.breaks, b.breaks)
    m = len(breaks) - 1
    vals = np.empty((m, m))
    # Row chunks keep peak memory near one copy for ~10^4-block kernels.
    step = max(1, 2**22 // max(m, 1))
    for s in range(0, m, step):
        rows = slice(s, min(m, s + step))
        vals[rows] = a.values[ia[rows]][:, ia] - b.values[ib[rows]][:, ib]
    return SignedStepKernel(breaks, vals, a.bound + b.bound, _adopt=True)


# --------------------------------------------------------------------------
# Cut norm


class CutValue(NamedTuple):
    value: float
    status: str  # "exact" or "lower-bound"


def _exact_cut(values: np.ndarray, lengths: np.ndarray) -> float:
    m = values.shape[0]
    area = values * np.outer(lengths, lengths)
    best = 0.0
    chunk_bits = min(m, 16)
    low = ((np.arange(2**chunk_bits)[:, None] >> np.arange(chunk_bits)) & 1).astype(float)
    low_rows = low @ area[:chunk_bits]
    for hi in range(2 ** (m - chunk_bits)):
        hi_bits = (hi >> np.arange(m - chunk_bits)) & 1
        r = low_rows + hi_bits @ area[chunk_bits:]
        pos = np.where(r > 0, r, 0.0).sum(axis=1)
        neg = np.where(r < 0, -r, 0.0).sum(axis=1)
        best = max(best, float(pos.max()), float(neg.max()))
    return best


def _heuristic_cut(values: np.ndarray, lengths: np.ndarray, restarts: int, seed: int) -> float:
    m = values.shape[0]
    rng = stream(seed, m, 0xC07)
    work = values.astype(np.float32) if m > 2048 else values
    w = lengths.astype(work.dtype)
    # Columns [0, restarts) maximize the signed sum, the rest maximize its negation.
    sign = np.concatenate([np.ones(restarts), -np.ones(restarts)]).astype(work.dtype)
    s = (rng.random((m, restarts)) < 0.5).astype(work.dtype)
    s[:, ~s.any(axis=0)] = 1
    s = np.concatenate([s, s], axis=1)
    t = np.zeros_like(s)
    for _ in range(200):
        col = (work @ (w[:, None] * s)) * sign
        t_new = (col > 0).astype(work.dtype)
        row = (work @ (w[:, None] * t_new)) * sign
        s_new = (row > 0).astype(work.dtype)
        if np.array_equal(s_new, s) and np.array_equal(t_new, t):
            break
        s, t = s_new, t_new
    # Rescore the best few candidates in double precision.
    approx = sign * np.einsum("ir,ir->r", w[:, None] * s, work @ (w[:, None] * t))
    best = 0.0
    for r in np.argsort(-approx)[:4]:
        x = lengths * s[:, r].astype(float)
        y = lengths * t[:, r].astype(float)
        best = max(best, abs(float(x @ (values @ y))))
    return best


def cut_norm(u: _StepBase, mode: str = "exact", restarts: int = DEFAULT_RESTARTS, seed: int = 0) -> float:
    """Cut norm of a (signed) step kernel.

    ``exact`` enumerates every union of row blocks and picks the best column
    set greedily, which is exact because the objective is bilinear in the
    block memberships. ``heuristic`` runs alternating maximization from
    ``restarts`` random starts and returns a lower bound.
    """
    if mode == "exact":
        if u.n_blocks > EXACT_CUT_MAX_BLOCKS:
            raise CapabilityError(
                f"exact cut norm supports at most {EXACT_CUT_MAX_BLOCKS} blocks "
                f"(got {u.n_blocks}); use mode='heuristic'"
            )
        return _exact_cut(u.values, u.lengths)
    if mode == "heuristic":
        if restarts < 1:
            raise ValidationError("restarts must be positive")
        return _heuristic_cut(u.values, u.lengths, restarts, seed)
    raise ValidationError(f"unknown cut norm mode {mode!r}")


def cut_distance(a: _StepBase, b: _StepBase, restarts: int = DEFAULT_RESTARTS, seed: int = 0) -> CutValue:
    """Unaligned cut distance; exact when the common refinement is small enough."""
    diff = difference(a, b)
    if diff.n_blocks <= EXACT_CUT_MAX_BLOCKS:
        return CutValue(cut_norm(diff, "exact"), "exact")
    return CutValue(cut_norm(diff, "heuristic", restarts=restarts, seed=seed), "lower-bound")


# --------------------------------------------------------------------------
# Finitary approximation and irreducibility


def finitary_lower_approx(f, m: int, g: int = DEFAULT_GRID_BITS, grid_level: int | None = None) -> StepKernel:
    """Step kernel on ``2**m`` equal intervals lying below ``f`` on an evaluation grid.

    Each cell value is the minimum of ``f`` over the lattice of left endpoints
    ``i / 2**grid_level`` inside the cell; ``grid_level`` defaults to ``m + g``
    (``(2**g)**2`` points per cell). Pass one fixed ``grid_level`` for a family
    of levels to make the approximations nondecreasing in ``m``.
    """
    if isinstance(f, KernelPreset):
        f = f.evaluator()
    if not callable(f):
        raise CapabilityError("kernel is not pointwise evaluable")
    if m < 0:
        raise ValidationError("m must be nonnegative")
    level = m + g if grid_level is None else grid_level
    if level < m:
        raise ValidationError("grid_level must be at least m")
    if level > MAX_GRID_LEVEL:
        raise CapabilityError(f"evaluation grid 2^{level} per axis exceeds 2^{MAX_GRID_LEVEL}")
    pts = np.arange(2**level) / 2**level
    grid = np.asarray(f(pts[:, None], pts[None, :]), dtype=float)
    grid = np.broadcast_to(grid, (pts.size, pts.size))
    cells, per = 2**m, 2 ** (level - m)
    mins = grid.reshape(cells, per, cells, per).min(axis=(1, 3))
    return StepKernel(np.arange(cells + 1) / cells, mins)


def irreducible_components(w) -> list[list[int]]:
    """Blocks grouped by connectivity of the positive-value block graph."""
    adj = csr_matrix(np.asarray(w.values) > 0)
    n_comp, labels = connected_components(adj, directed=False)
    comps: dict[int, list[int]] = {}
    for h, lab in enumerate(labels):
        comps.setdefault(int(lab), []).append(h)
    return sorted(comps.values(), key=lambda c: c[0])


def restrict(w: StepKernel, blocks: Sequence[int]) -> StepKernel:
    """Copy of ``w`` that is zero outside ``blocks x blocks`` (same partition)."""
    mask = np.zeros(w.n_blocks, dtype=bool)
    mask[list(blocks)] = True
    return StepKernel(w.breaks, np.where(np.outer(mask, mask), w.values, 0.0), w.bound)


# --------------------------------------------------------------------------
# Presets

_REMARK_A = ((2000.0, 0.01), (0.01, 2.0))
_REMARK_B = ((2.0, 0.0), (0.0, 1.0))


@dataclass(frozen=True)
class KernelPreset:
    """Named kernel family.

    ``tag`` is one of ``constant``, ``remark-a``, ``remark-b``,
    ``checkerboard``, ``product`` or ``file``.
    """

    tag: str
    params: tuple = ()
    path: str | None = None
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def step(self) -> StepKernel | None:
        """The exact step kernel, or ``None`` for pointwise-only presets."""
        if "step" not in self._cache:
            self._cache["step"] = self._build_step()
        return self._cache["step"]

    def _build_step(self) -> StepKernel | None:
        if self.tag == "constant":
            return StepKernel.constant(self.params[0] if self.params else 1.0)
        if self.tag == "remark-a":
            return StepKernel.uniform(_REMARK_A)
        if self.tag == "remark-b":
            return StepKernel.uniform(_REMARK_B)
        if self.tag == "checkerboard":
            m = int(self.params[0]) if self.params else 2
            if m < 1:
                raise ValidationError("checkerboard needs at least one block")
            h = np.arange(m)
            return StepKernel.uniform(((h[:, None] + h[None, :]) % 2).astype(float))
        if self.tag == "file":
            return load_kernel(self.path)
        if self.tag == "product":
            return None
        raise ValidationError(f"unknown kernel preset {self.tag!r}")

    def evaluator(self) -> Callable:
        if self.tag == "product":
            a = self.params[0] if self.params else 1.0
            return lambda x, y: a * np.asarray(x) * np.asarray(y)
        return self.step()

    @property
    def bound(self) -> float:
        if self.tag == "product":
            return self.params[0] if self.params else 1.0
        return self.step().bound

    def label(self) -> str:
        if self.tag == "file":
            return f"file:{self.path}"
        return self.tag + (":" + ",".join(f"{p:g}" for p in self.params) if self.params else "")


PRESET_TAGS = ("constant", "remark-a", "remark-b", "checkerboard", "product")


def parse_preset(text: str) -> KernelPreset:
    """Parse ``name[:p1[,p2...]]`` or a path to a step-kernel JSON file."""
    name, _, rest = text.partition(":")
    name = name.strip().lower()
    if name in PRESET_TAGS:
        try:
            params = tuple(float(p) for p in rest.split(",") if p.strip())
        except ValueError:
            raise ValidationError(f"bad preset parameters in {text!r}") from None
        if any(p < 0 or not math.isfinite(p) for p in params):
            raise ValidationError(f"preset parameters must be finite and nonnegative: {text!r}")
        return KernelPreset(name, params)
    if Path(text).suffix == ".json" or Path(text).exists():
        return KernelPreset("file", path=text)
    raise ValidationError(f"unknown kernel {text!r}; expected one of {', '.join(PRESET_TAGS)} or a .json file")
