"""
Seeded generators for the two benchmark experiments, and scoring against truth.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np
from scipy import stats

from .treeselect import Forest, best_subtrees

log = logging.getLogger(__name__)

# Donoho & Johnstone (1994) "blocks": jump locations on [0, 1] and jump heights
BLOCKS_POSITIONS = (0.10, 0.13, 0.15, 0.23, 0.25, 0.40, 0.44, 0.65, 0.76, 0.78, 0.81)
BLOCKS_HEIGHTS = (4.0, -5.0, 3.0, -4.0, 5.0, -4.2, 2.1, 4.3, -3.1, 2.1, -4.2)


@dataclass(frozen=True)
class BlocksSpec:
    n: int = 4000
    offset: float = 3.5


@dataclass(frozen=True)
class GeoGraphSpec:
    m: int = 1000
    n: int = 600
    max_degree: int = 4
    edge_value: float = 0.245
    seed: int = 0
    eps: float = 0.05


def blocks_intensity(spec: BlocksSpec = BlocksSpec()):
    """Shifted blocks function on the midpoint grid ``(i + 1/2)/n``.

    Returns the intensity and the 11 change-point positions ``t`` (boundary
    between samples ``t-1`` and ``t``).
    """
    if spec.n < 100:
        raise ValueError("blocks needs n >= 100")
    t = (np.arange(spec.n) + 0.5) / spec.n
    f = np.zeros(spec.n)
    for pos, h in zip(BLOCKS_POSITIONS, BLOCKS_HEIGHTS):
        f += h * (t > pos)
    mu = f + spec.offset
    cps = np.flatnonzero(np.diff(mu) != 0) + 1
    return mu, cps


def poisson_counts(mu, rng: np.random.Generator):
    """Poisson draws by inversion of one uniform per sample."""
    u = rng.random(len(mu))
    return stats.poisson.ppf(u, mu).astype(np.int64)


def blocks_poisson(spec: BlocksSpec = BlocksSpec(), seed: Optional[int] = 0):
    """Blocks intensity, Poisson counts and the true change points."""
    mu, cps = blocks_intensity(spec)
    y = poisson_counts(mu, np.random.default_rng(seed))
    return mu, y, cps


def _sample_edges(pos, max_degree, eps, rng):
    m = len(pos)
    dist = np.sqrt(((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1))
    weight = 1.0 / (eps + dist)
    np.fill_diagonal(weight, 0.0)
    deg = np.zeros(m, dtype=int)
    adj = np.zeros((m, m), dtype=bool)
    for i in rng.permutation(m):
        while deg[i] < max_degree:
            w = weight[i] * (deg < max_degree) * ~adj[i]
            w[i] = 0.0
            tot = w.sum()
            if tot <= 0:
                break
            j = rng.choice(m, p=w / tot)
            adj[i, j] = adj[j, i] = True
            deg[i] += 1
            deg[j] += 1
    return adj


def geo_graph(spec: GeoGraphSpec = GeoGraphSpec()):
    """Sparse precision matrix on random planar points and a Gaussian sample.

    Returns ``(K, Sigma, X, positions)`` with unit-variance ``Sigma = K^{-1}``
    and ``X`` an ``n x m`` sample.
    """
    if spec.m < 10:
        raise ValueError("geo_graph needs m >= 10")
    ss = np.random.SeedSequence(spec.seed)
    for attempt in range(20):
        rng = np.random.default_rng(ss.spawn(1)[0] if attempt else spec.seed)
        pos = rng.random((spec.m, 2))
        adj = _sample_edges(pos, spec.max_degree, spec.eps, rng)
        K0 = np.eye(spec.m) + spec.edge_value * adj
        try:
            np.linalg.cholesky(K0)
        except np.linalg.LinAlgError:
            log.info("geo_graph: precision not positive definite, regenerating (%d)", attempt + 1)
            continue
        S0 = np.linalg.inv(K0)
        S0 = (S0 + S0.T) / 2
        d = 1.0 / np.sqrt(np.diag(S0))
        Sigma = S0 * np.outer(d, d)
        np.fill_diagonal(Sigma, 1.0)
        K = K0 / np.outer(d, d)
        L = np.linalg.cholesky(Sigma)
        X = rng.standard_normal((spec.n, spec.m)) @ L.T
        return K, Sigma, X, pos
    raise RuntimeError("could not generate a positive definite precision matrix")


def edges_of(K, tol=0.0):
    """Off-diagonal support of ``K`` as a set of pairs ``(i, j)``, ``i < j``."""
    i, j = np.nonzero(np.triu(np.abs(K) > tol, 1))
    return set(zip(i.tolist(), j.tolist()))


@dataclass
class CPScore:
    tp: int
    fp: int
    fn: int
    pairs: list


def evaluate_changepoints(estimated, truth, tol=10) -> CPScore:
    """Greedy nearest matching of estimated to true change points within ``tol``."""
    if tol < 0:
        raise ValueError("tolerance must be nonnegative")
    est = np.asarray(sorted(estimated), dtype=int)
    tru = np.asarray(sorted(truth), dtype=int)
    cand = [(abs(int(e) - int(t)), int(e), int(t)) for e in est for t in tru
            if abs(int(e) - int(t)) <= tol]
    cand.sort()
    used_e, used_t, pairs = set(), set(), []
    for _, e, t in cand:
        if e in used_e or t in used_t:
            continue
        used_e.add(e)
        used_t.add(t)
        pairs.append((e, t))
    tp = len(pairs)
    return CPScore(tp, len(est) - tp, len(tru) - tp, sorted(pairs, key=lambda p: p[1]))


@dataclass
class EdgeScore:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float

    def as_dict(self):
        return asdict(self)


def evaluate_edges(estimated, truth, m: Optional[int] = None) -> EdgeScore:
    """Precision/recall of an undirected edge set against the true one."""
    est = {tuple(sorted(e)) for e in _pairs(estimated, m)}
    tru = {tuple(sorted(e)) for e in _pairs(truth, m)}
    tp = len(est & tru)
    fp = len(est - tru)
    fn = len(tru - est)
    precision = tp / len(est) if est else 0.0
    recall = tp / len(tru) if tru else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return EdgeScore(tp, fp, fn, precision, recall, f1)


def _pairs(sel, m):
    if hasattr(sel, "edges"):
        if m is not None and sel.m != m:
            raise ValueError(f"edge selection over {sel.m} variables, expected {m}")
        return sel.edges
    return set(sel)


def oracle_pe_curve(v, forest: Forest, kappa_max: int, sigma2: float = 1.0, n: Optional[int] = None):
    """Prediction error of the oracle subtree chosen on noise-free coefficients.

    ``PE(k) = (sum_{not in O_k} v^2 + k sigma2) / n`` with ``O_k`` the best
    ``k``-subtree of ``v`` itself.
    """
    v = np.asarray(v, dtype=float)
    n = v.size if n is None else n
    path = best_subtrees(forest, v, kappa_max=kappa_max)
    bias = np.maximum(float(np.sum(v * v)) - path.masses, 0.0) / n
    var = np.arange(kappa_max + 1) * sigma2 / n
    return bias + var, bias, var


def true_pe_curve(v, u, selections, n: Optional[int] = None):
    """Realised standardised prediction error of the hard selections ``selections[k]``."""
    v = np.asarray(v, dtype=float)
    u = np.asarray(u, dtype=float)
    n = v.size if n is None else n
    out = np.empty(len(selections))
    for k, s in enumerate(selections):
        est = np.zeros_like(v)
        est[s] = u[s]
        out[k] = float(np.sum((est - v) ** 2)) / n
    return out
