"""
Best k-subtree selection on rooted forests.

Nodes are 0-based internally; ``parent[i] == -1`` marks a root.  The CSV
format uses 1-based nodes with parent 0 for roots.

The search descends into the tree and merges every node into its parent by
a max-plus convolution over subtree sizes, keeping for each size the split
``l`` (nodes kept on the parent side) that maximises the accumulated mass.
Several roots are hung below a massless superroot that does not count
towards the size.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .criteria import Selection

__all__ = [
    "Forest",
    "MassSpec",
    "SubtreePath",
    "CycleError",
    "best_subtrees",
    "brute_force_subtrees",
    "tree_selector",
    "subtree_masses",
]


class CycleError(ValueError):
    pass


class Forest:
    """Parent-array hierarchy over ``m`` nodes."""

    def __init__(self, parent):
        parent = np.asarray(parent, dtype=np.int64)
        if parent.ndim != 1 or parent.size == 0:
            raise ValueError("parent must be a nonempty 1-d array")
        m = parent.size
        if np.any((parent < -1) | (parent >= m)):
            raise ValueError("parent entries must lie in -1..m-1")
        if np.any(parent == np.arange(m)):
            raise CycleError("a node cannot be its own parent")
        self.parent = parent
        self.m = m
        self.roots = np.flatnonzero(parent == -1)
        if self.roots.size == 0:
            raise CycleError("forest has no root")
        children = [[] for _ in range(m)]
        for i in range(m):
            p = parent[i]
            if p >= 0:
                children[p].append(i)
        self.children = children
        self.postorder = self._postorder()

    @classmethod
    def from_one_based(cls, parent):
        """Build from 1-based parents where 0 marks a root."""
        return cls(np.asarray(parent, dtype=np.int64) - 1)

    @classmethod
    def binary(cls, m):
        """Complete binary tree, node i (1-based) has parent floor(i/2)."""
        return cls.from_one_based(np.arange(1, m + 1) // 2)

    def _postorder(self):
        order = []
        seen = np.zeros(self.m, dtype=bool)
        for r in self.roots:
            stack = [(int(r), False)]
            while stack:
                node, done = stack.pop()
                if done:
                    order.append(node)
                    continue
                seen[node] = True
                stack.append((node, True))
                for c in reversed(self.children[node]):
                    stack.append((c, False))
        if not seen.all():
            bad = np.flatnonzero(~seen)
            raise CycleError(f"parent array has a cycle through nodes {bad.tolist()[:10]}")
        return np.array(order, dtype=np.int64)

    def is_admissible(self, selection) -> bool:
        """True when every selected non-root node has its parent selected."""
        s = np.zeros(self.m, dtype=bool)
        s[np.asarray(selection, dtype=int)] = True
        p = self.parent[s]
        return bool(np.all((p == -1) | s[np.maximum(p, 0)]))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "parent"])
            for i, p in enumerate(self.parent):
                w.writerow([i + 1, int(p) + 1])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if rows and not rows[0][0].strip().lstrip("-").isdigit():
            rows = rows[1:]
        pairs = sorted((int(r[0]), int(r[1])) for r in rows if r)
        nodes = [a for a, _ in pairs]
        if nodes != list(range(1, len(nodes) + 1)):
            raise ValueError("forest CSV must list nodes 1..m exactly once")
        return cls.from_one_based([b for _, b in pairs])


@dataclass(frozen=True)
class MassSpec:
    """Elementary masses ``M_i(x) = w_i |x|^power``, or a custom vectorised function.

    ``func`` receives the full value vector and returns per-node masses; it must
    be zero at zero and convex in each coordinate.
    """

    power: float = 2.0
    weights: Optional[np.ndarray] = None
    func: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.power < 1:
            raise ValueError("power below 1 gives a non-convex mass")
        if self.weights is not None and np.any(np.asarray(self.weights) < 0):
            raise ValueError("mass weights must be nonnegative")

    @property
    def is_energy(self) -> bool:
        """Masses coincide with squared values, so subtree mass is projection energy."""
        return self.func is None and self.weights is None and self.power == 2.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.func is not None:
            return np.asarray(self.func(x), dtype=float)
        out = x * x if self.power == 2.0 else np.abs(x) ** self.power
        if self.weights is not None:
            out = out * np.asarray(self.weights, dtype=float)
        return out


DEFAULT_MASS = MassSpec()


@dataclass
class SubtreePath:
    """Best selections for ``kappa = 0..kappa_max``.

    ``selections[k]`` is a sorted index array (0-based), ``masses[k]`` its mass.
    """

    selections: list
    masses: np.ndarray

    @property
    def kappa_max(self):
        return len(self.masses) - 1

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kappa", "mass", "selection"])
            for k, (s, mval) in enumerate(zip(self.selections, self.masses)):
                w.writerow([k, repr(float(mval)), ";".join(str(int(i) + 1) for i in s)])


def _merge(T, C, cap):
    """Max-plus convolution of a parent table with a child table.

    ``T[l]`` is the best mass with ``l`` nodes on the parent side, ``C[j]`` the
    child's with ``j`` nodes (``C[0] = 0``: child left out).  Returns the merged
    table and, per size, the parent share ``l``; ties go to the smallest ``l``.
    """
    a, c = len(T), len(C)
    L = min(a + c - 1, cap + 1)
    out = np.full(L, -np.inf)
    split = np.zeros(L, dtype=np.int32)
    if a <= c:
        for l in range(min(a, L)):
            if T[l] == -np.inf:
                continue
            w = min(c, L - l)
            cand = T[l] + C[:w]
            seg = out[l:l + w]
            better = cand > seg
            seg[better] = cand[better]
            split[l:l + w][better] = l
    else:
        ks = np.arange(L)
        for j in range(min(c, L) - 1, -1, -1):
            w = min(a, L - j)
            cand = T[:w] + C[j]
            seg = out[j:j + w]
            better = cand > seg
            seg[better] = cand[better]
            split[j:j + w][better] = ks[:w][better]
    return out, split


def _run_dp(forest, mass, kappa_max, keep_splits):
    tables = [None] * forest.m
    splits = [[] for _ in range(forest.m)] if keep_splits else None
    for i in forest.postorder:
        T = np.array([-np.inf, mass[i]])
        for ch in forest.children[i]:
            C = tables[ch]
            C[0] = 0.0
            T, sp = _merge(T, C, kappa_max)
            tables[ch] = None
            if keep_splits:
                splits[i].append((ch, sp))
        tables[i] = T[: kappa_max + 1]
    if forest.roots.size == 1:
        top = tables[forest.roots[0]].copy()
        top[0] = 0.0
        return top, splits, None
    # superroot: massless, not counted, may keep zero nodes
    T = np.array([0.0])
    super_splits = []
    for r in forest.roots:
        C = tables[r]
        C[0] = 0.0
        T, sp = _merge(T, C, kappa_max)
        super_splits.append((int(r), sp))
    return T, splits, super_splits


def _collect(k, forest, splits, super_splits):
    """Backtrack the merge decisions into the node set of size ``k``."""
    out = []
    stack = []
    if super_splits is None:
        if k > 0:
            stack.append((int(forest.roots[0]), k))
    else:
        for ch, sp in reversed(super_splits):
            l = int(sp[k])
            if k - l > 0:
                stack.append((ch, k - l))
            k = l
    while stack:
        node, k = stack.pop()
        out.append(node)
        for ch, sp in reversed(splits[node]):
            l = int(sp[k])
            if k - l > 0:
                stack.append((ch, k - l))
            k = l
    return np.array(sorted(out), dtype=np.int64)


def _check_input(forest, x, kappa_max):
    x = np.asarray(x, dtype=float)
    if x.shape != (forest.m,):
        raise ValueError(f"value vector has shape {x.shape}, expected ({forest.m},)")
    if np.isnan(x).any():
        raise ValueError("NaN in node values")
    if not 0 <= kappa_max <= forest.m:
        raise ValueError(f"kappa_max must lie in 0..{forest.m}")
    return x


def subtree_masses(forest: Forest, x, kappa_max: int, mass: MassSpec = DEFAULT_MASS):
    """Best accumulated mass per size, without recovering the selections."""
    x = _check_input(forest, x, kappa_max)
    top, _, _ = _run_dp(forest, mass(x), kappa_max, keep_splits=False)
    return top[: kappa_max + 1]


def best_subtrees(forest: Forest, x, mass: MassSpec = DEFAULT_MASS,
                  kappa_max: Optional[int] = None) -> SubtreePath:
    """Hierarchy-respecting selection of maximal mass for every size up to ``kappa_max``."""
    kappa_max = forest.m if kappa_max is None else kappa_max
    x = _check_input(forest, x, kappa_max)
    mv = mass(x)
    _, splits, super_splits = _run_dp(forest, mv, kappa_max, keep_splits=True)
    sels = [_collect(k, forest, splits, super_splits) for k in range(kappa_max + 1)]
    masses = np.array([math.fsum(mv[s]) for s in sels])
    return SubtreePath(sels, masses)


def brute_force_subtrees(forest: Forest, x, mass: MassSpec = DEFAULT_MASS,
                         kappa_max: Optional[int] = None) -> SubtreePath:
    """Exhaustive search over admissible subsets (``m <= 20``).

    Ties are broken by the lexicographically smallest sorted index set.
    """
    m = forest.m
    if m > 20:
        raise ValueError(f"exhaustive search refused for m={m} > 20")
    kappa_max = m if kappa_max is None else kappa_max
    x = _check_input(forest, x, kappa_max)
    mv = mass(x)
    masks = np.arange(1 << m, dtype=np.int64)
    ok = np.ones(masks.size, dtype=bool)
    total = np.zeros(masks.size)
    size = np.zeros(masks.size, dtype=np.int64)
    for i in range(m):
        bit = (masks >> i) & 1
        total += bit * mv[i]
        size += bit
        p = forest.parent[i]
        if p >= 0:
            ok &= (bit == 0) | (((masks >> p) & 1) == 1)
    sels, best_mass = [], []
    for k in range(kappa_max + 1):
        pick = ok & (size == k)
        cand, vals = masks[pick], total[pick]
        top = vals.max()
        # summation order differs between sets; treat ulp-level gaps as ties
        tied = cand[vals >= top - 1e-12 * max(1.0, abs(top))]
        winners = [tuple(i for i in range(m) if c >> i & 1) for c in tied]
        sels.append(np.array(min(winners), dtype=np.int64))
        best_mass.append(math.fsum(mv[sels[-1]]))
    return SubtreePath(sels, np.array(best_mass))


def tree_selector(forest: Forest, mass: MassSpec = DEFAULT_MASS,
                  kappa_max: Optional[int] = None):
    """Wrap :func:`best_subtrees` as a selector for :func:`criteria.mc_dof`.

    With squared-value masses the best subtree mass *is* the projection energy,
    so selections are not reconstructed.
    """
    kmax = forest.m if kappa_max is None else kappa_max

    def select(z):
        if mass.is_energy:
            return Selection(energy=subtree_masses(forest, z, kmax, mass))
        return Selection(sets=best_subtrees(forest, z, mass, kmax).selections)

    return select
