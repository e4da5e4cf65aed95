"""
Sparse Gaussian graphical models: nodewise lasso selection with the
mirror-corrected criterion, AND-rule symmetrisation, and maximum likelihood
under a fixed zero pattern.

The log-likelihood (up to constants and a factor n/2) is
``log det K - Tr(K S)``.  Its gradient is ``K^{-1} - S``; projecting onto
the pattern (zeroing off-pattern entries) keeps the iterate feasible, and
the step length along a direction ``D`` solves the scalar equation
``sum gamma_i / (1 + w gamma_i) = Tr(S D)`` with ``gamma`` the eigenvalues
of ``K^{-1} D``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg, optimize

from .criteria import DofTable, mc_dof, refined_cp_curve
from .lasso import lasso_path, lasso_selector, pilot_sigma2

log = logging.getLogger(__name__)

__all__ = [
    "EdgeSelection",
    "PrecisionEstimate",
    "SampleCov",
    "DofConfig",
    "NodewiseFit",
    "NotAscentError",
    "standardize_data",
    "nodewise_fit",
    "nodewise_select",
    "symmetrize",
    "nodewise_coefficients",
    "constrained_ml",
    "line_search",
    "loglik",
]


class NotAscentError(ValueError):
    """The search direction does not increase the log-likelihood."""


@dataclass
class EdgeSelection:
    """Undirected edge set over ``m`` variables, pairs stored as ``(i, j)`` with ``i < j``."""

    m: int
    edges: set
    directed: Optional[list] = None

    def __post_init__(self):
        clean = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not (0 <= i < self.m and 0 <= j < self.m):
                raise ValueError(f"edge ({i}, {j}) outside 0..{self.m - 1}")
            clean.add((min(i, j), max(i, j)))
        self.edges = clean

    def __len__(self):
        return len(self.edges)

    def mask(self, diagonal=True):
        """Boolean ``m x m`` pattern, symmetric, with the diagonal when asked."""
        M = np.zeros((self.m, self.m), dtype=bool)
        if self.edges:
            e = np.array(sorted(self.edges))
            M[e[:, 0], e[:, 1]] = True
            M[e[:, 1], e[:, 0]] = True
        if diagonal:
            np.fill_diagonal(M, True)
        return M

    def neighbors(self):
        nb = [[] for _ in range(self.m)]
        for i, j in sorted(self.edges):
            nb[i].append(j)
            nb[j].append(i)
        return [np.array(sorted(x), dtype=np.int64) for x in nb]

    @classmethod
    def full(cls, m):
        return cls(m, {(i, j) for i in range(m) for j in range(i + 1, m)})


@dataclass
class SampleCov:
    """Uncentred sample covariance ``X^T X / n`` (the mean is known to be zero)."""

    sigma_hat: np.ndarray
    n: int

    def __post_init__(self):
        S = np.asarray(self.sigma_hat, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ValueError("sample covariance must be square")
        if not np.allclose(S, S.T, atol=1e-12 * max(1.0, np.abs(S).max())):
            raise ValueError("sample covariance must be symmetric")
        self.sigma_hat = (S + S.T) / 2

    @property
    def m(self):
        return self.sigma_hat.shape[0]

    @classmethod
    def from_data(cls, X):
        X = np.asarray(X, dtype=float)
        return cls(X.T @ X / X.shape[0], X.shape[0])


@dataclass
class PrecisionEstimate:
    K: np.ndarray
    pattern: EdgeSelection
    loglik: float
    iterations: int
    converged: bool
    grad_norm: float = np.nan
    trace: list = field(default_factory=list)
    min_eig: list = field(default_factory=list)

    def edge_list(self):
        """Rows ``(i, j, K_ij)`` over the pattern, ``i < j``."""
        return [(i, j, float(self.K[i, j])) for i, j in sorted(self.pattern.edges)]


@dataclass(frozen=True)
class DofConfig:
    """Shared mirror table: ``nodes`` random nodes, ``reps`` noise replicates each."""

    nodes: int = 5
    reps: int = 20
    seed: int = 0


def standardize_data(X):
    """Unit second moment per column; rejects constant columns and ``n < 3``."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("data must be an n x m matrix")
    n = X.shape[0]
    if n < 3:
        raise ValueError(f"need at least 3 observations, got {n}")
    if not np.all(np.isfinite(X)):
        raise ValueError("data contain NaN or inf")
    if np.any(np.ptp(X, axis=0) == 0):
        bad = np.flatnonzero(np.ptp(X, axis=0) == 0)
        raise ValueError(f"constant column(s) {bad.tolist()[:10]}")
    return X / np.sqrt(np.mean(X * X, axis=0))


# ---------------------------------------------------------------------------
# nodewise selection


@dataclass
class NodewiseFit:
    """Per-node lasso paths, pilot variances and the shared mirror table.

    Selections for different criteria can be read off without refitting.
    """

    n: int
    m: int
    kappa_max: int
    sse_refit: np.ndarray
    selections: list
    sigma2: np.ndarray
    dof: DofTable

    def kappa_star(self, criterion="refined", max_degree=None):
        kmax = self.kappa_max if max_degree is None else min(self.kappa_max, max_degree)
        if criterion == "refined":
            nu = self.dof.nu[: kmax + 1]
        elif criterion == "naive":
            nu = np.arange(kmax + 1, dtype=float)
        else:
            raise ValueError(f"unknown criterion {criterion!r}")
        out = np.zeros(self.m, dtype=np.int64)
        for c in range(self.m):
            curve = refined_cp_curve(self.sse_refit[c, : kmax + 1], nu, self.n, self.sigma2[c])
            out[c] = curve.kappa_star
        return out

    def select(self, criterion="refined", max_degree=None) -> EdgeSelection:
        ks = self.kappa_star(criterion, max_degree)
        directed = [self.selections[c][ks[c]] for c in range(self.m)]
        return symmetrize(directed, self.m)


def _others(m, c):
    return np.concatenate([np.arange(c), np.arange(c + 1, m)])


def _design(Xs, c):
    # columns of the standardised data have norm sqrt(n)
    return Xs[:, _others(Xs.shape[1], c)] / np.sqrt(Xs.shape[0]), Xs[:, c]


def shared_dof(Xs, kappa_max, config: DofConfig = DofConfig(), n_jobs=1) -> DofTable:
    """Mirror table averaged over a few nodes, pure-noise responses on the real design."""
    n, m = Xs.shape
    rng = np.random.default_rng(config.seed)
    nodes = rng.choice(m, size=min(config.nodes, m), replace=False)
    tables = []
    for r, c in enumerate(nodes):
        D, _ = _design(Xs, int(c))
        tables.append(mc_dof(lasso_selector(D, kappa_max), n, kappa_max, reps=config.reps,
                             seed=config.seed * 1000 + r + 1, n=n, n_jobs=n_jobs))
    nu = np.nanmean(np.vstack([t.nu for t in tables]), axis=0)
    se = np.sqrt(np.nanmean(np.vstack([t.se ** 2 for t in tables]), axis=0) / len(tables))
    return DofTable(nu=nu, se=se, replicates=config.reps * len(tables), seed=config.seed, n=n)


def nodewise_fit(X, dof_config: DofConfig = DofConfig(), sigma_mode="residual-df",
                 kappa_max: Optional[int] = None, dof: Optional[DofTable] = None,
                 n_jobs: int = 1) -> NodewiseFit:
    """Lasso path of every variable on all others, plus pilot variances and mirror table."""
    Xs = standardize_data(X)
    n, m = Xs.shape
    if m < 2:
        raise ValueError("need at least two variables")
    if kappa_max is None:
        kappa_max = min(m - 1, n - 2, 50)
    kappa_max = min(kappa_max, m - 1, n - 2)

    def one(c):
        D, y = _design(Xs, c)
        path = lasso_path(D, y, kappa_max)
        others = _others(m, c)
        sels = [None if s is None else others[s] for s in path.selections]
        return path.sse_refit, sels, pilot_sigma2(path, n, sigma_mode)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            res = list(pool.map(one, range(m)))
    else:
        res = [one(c) for c in range(m)]
    if dof is None:
        dof = shared_dof(Xs, kappa_max, dof_config, n_jobs=n_jobs)
    sse = np.vstack([r[0] for r in res])
    return NodewiseFit(n, m, kappa_max, sse, [r[1] for r in res],
                       np.array([r[2] for r in res]), dof)


def nodewise_select(X, dof_config: DofConfig = DofConfig(), sigma_mode="residual-df",
                    criterion="refined", kappa_max: Optional[int] = None,
                    max_degree: Optional[int] = None, n_jobs: int = 1) -> EdgeSelection:
    """Select each variable's neighbourhood by Cp over lasso-path refits, then keep
    an edge only when both of its endpoints selected each other."""
    fit = nodewise_fit(X, dof_config, sigma_mode, kappa_max, n_jobs=n_jobs)
    return fit.select(criterion, max_degree)


def symmetrize(directed, m) -> EdgeSelection:
    """AND rule: ``(i, j)`` is an edge when ``j`` is in ``directed[i]`` and ``i`` in ``directed[j]``."""
    sets = [set(int(j) for j in d) for d in directed]
    edges = {(i, j) for i in range(m) for j in sets[i] if i < j and i in sets[j]}
    return EdgeSelection(m, edges, directed=[np.array(sorted(s), dtype=np.int64) for s in sets])


def nodewise_coefficients(data, selection: EdgeSelection):
    """Row-wise precision estimate from regressions on the selected neighbours.

    ``data`` is an ``n x m`` sample or a :class:`SampleCov`.  Row ``c`` gets
    ``K_cc = 1/s_c^2`` (residual variance with ``n - |N(c)|`` degrees of
    freedom) and ``K_cj = -beta_cj K_cc``.  The result is generally asymmetric.
    """
    cov = data if isinstance(data, SampleCov) else SampleCov.from_data(data)
    S, n, m = cov.sigma_hat, cov.n, cov.m
    if selection.m != m:
        raise ValueError(f"selection over {selection.m} variables, data has {m}")
    K = np.zeros((m, m))
    for c, N in enumerate(selection.neighbors()):
        if N.size:
            A = S[np.ix_(N, N)]
            b = S[N, c]
            beta, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
            if rank < N.size:
                log.warning("nodewise_coefficients: neighbour block of node %d is rank %d < %d, "
                            "using the minimum-norm solution", c, rank, N.size)
            rss = S[c, c] - b @ beta
        else:
            beta, rss = np.zeros(0), S[c, c]
        s2 = max(rss, 1e-300) * n / max(n - N.size, 1)
        K[c, c] = 1.0 / s2
        K[c, N] = -beta / s2
    return K


# ---------------------------------------------------------------------------
# constrained maximum likelihood


def loglik(K, sigma_hat):
    """``log det K - Tr(K S)``; ``-inf`` when ``K`` is not positive definite."""
    try:
        C = linalg.cholesky(K, lower=True)
    except linalg.LinAlgError:
        return -np.inf
    return 2.0 * float(np.sum(np.log(np.diag(C)))) - float(np.sum(K * sigma_hat))


def _gammas(K, D):
    # K^{-1} D is similar to C^{-1} D C^{-T} for K = C C^T, hence real eigenvalues
    C = linalg.cholesky(K, lower=True)
    W = linalg.solve_triangular(C, D, lower=True)
    W = linalg.solve_triangular(C, W.T, lower=True)
    return linalg.eigvalsh((W + W.T) / 2)


def step_objective(gam, tr):
    """``g(w) = sum log(1 + w gamma) - w tr`` and its derivative, as callables."""

    def g(w):
        a = 1.0 + w * gam
        if np.any(a <= 0):
            return -np.inf
        return float(np.sum(np.log(a)) - w * tr)

    def gp(w):
        return float(np.sum(gam / (1.0 + w * gam)) - tr)

    return g, gp


def line_search(K, D, sigma_hat, xtol=1e-14):
    """Exact maximiser of ``loglik(K + w D)`` over the positive-definite interval.

    Returns ``(w, gamma)``.  Raises :class:`NotAscentError` when the slope at
    ``w = 0`` is not positive.
    """
    D = np.asarray(D, dtype=float)
    if not np.any(D):
        raise ValueError("search direction is zero")
    gam = _gammas(K, D)
    tr = float(np.sum(sigma_hat * D))
    g, gp = step_objective(gam, tr)
    slope = gp(0.0)
    if not slope > 0:
        raise NotAscentError(f"g'(0) = {slope:.3e} is not positive")
    # feasibility: 1 + w gamma > 0; g' falls to -inf at a finite boundary
    hi_lim = -1.0 / gam.min() if gam.min() < 0 else np.inf
    if not np.isfinite(hi_lim) and tr <= 0:
        raise ValueError("likelihood unbounded along the direction (singular sample covariance?)")
    lo, hi = 0.0, min(1.0 / np.abs(gam).max(), hi_lim / 2)
    while gp(hi) > 0:
        lo = hi
        hi = 2 * hi if 2 * hi < hi_lim else hi + (hi_lim - hi) / 2
        if np.isfinite(hi_lim) and hi_lim - hi <= 1e-15 * hi_lim:
            return hi, gam
    w = optimize.brentq(gp, lo, hi, xtol=xtol * hi, rtol=4 * np.finfo(float).eps, maxiter=500)
    return w, gam


def _initial(cov, selection, init):
    m = cov.m
    if isinstance(init, str):
        if init != "auto":
            raise ValueError(f"unknown init {init!r}")
        K = nodewise_coefficients(cov, selection)
        K = (K + K.T) / 2
        lam = linalg.eigvalsh(K)[0]
        if lam <= 0:
            K = K + (abs(lam) + 1e-3) * np.eye(m)
        return K
    K = np.array(init, dtype=float)
    if K.shape != (m, m) or not np.allclose(K, K.T):
        raise ValueError("initial precision must be a symmetric m x m matrix")
    if np.any(K[~selection.mask()] != 0):
        raise ValueError("initial precision violates the zero pattern")
    try:
        linalg.cholesky(K, lower=True)
    except linalg.LinAlgError as exc:
        raise ValueError("initial precision is not positive definite") from exc
    return K


def constrained_ml(sigma_hat, selection: EdgeSelection, init="auto", tol=1e-6, max_iter=500,
                   method="cg", record=False) -> PrecisionEstimate:
    """Maximise ``log det K - Tr(K S)`` over positive definite ``K`` supported on the pattern.

    Ascent along the projected gradient with exact line search.  With
    ``method="cg"`` successive directions are made conjugate (Polak-Ribiere,
    restarted at the plain projected gradient whenever that is steeper);
    ``method="gradient"`` uses the projected gradient itself.  Both keep the
    pattern exactly and increase the likelihood at every step.  ``record``
    keeps the log-likelihood and smallest eigenvalue of every iterate.
    """
    if method not in ("cg", "gradient"):
        raise ValueError(f"unknown method {method!r}")
    cov = sigma_hat if isinstance(sigma_hat, SampleCov) else SampleCov(sigma_hat, 0)
    S = cov.sigma_hat
    if selection.m != cov.m:
        raise ValueError(f"selection over {selection.m} variables, covariance is {cov.m} x {cov.m}")
    mask = selection.mask()
    K = _initial(cov, selection, init)
    K[~mask] = 0.0
    ll = loglik(K, S)
    trace = [ll]
    eigs = [float(linalg.eigvalsh(K)[0])] if record else []
    gnorm = np.inf
    it = 0
    converged = False
    G_old = D = None
    for it in range(1, max_iter + 1):
        Kinv = linalg.cho_solve(linalg.cho_factor(K, lower=True), np.eye(cov.m))
        G = (Kinv + Kinv.T) / 2 - S
        G[~mask] = 0.0
        gnorm = float(np.abs(G).max())
        if gnorm <= tol:
            converged = True
            it -= 1
            break
        if method == "cg" and G_old is not None:
            beta = max(0.0, float(np.sum(G * (G - G_old))) / float(np.sum(G_old * G_old)))
            D = G + beta * D
            if np.sum(D * G) <= 0:
                D = G
        else:
            D = G
        G_old = G
        try:
            w, _ = line_search(K, D, S)
        except NotAscentError:
            D = G
            w, _ = line_search(K, D, S)
        Knew = K + w * D
        Knew = (Knew + Knew.T) / 2
        ll_new = loglik(Knew, S)
        if not np.isfinite(ll_new) or ll_new < ll - 1e-12 * max(1.0, abs(ll)):
            # rounding at the boundary; shrink the step
            while w > 1e-300 and (not np.isfinite(ll_new) or ll_new < ll):
                w /= 2
                Knew = K + w * D
                ll_new = loglik(Knew, S)
            if not np.isfinite(ll_new) or ll_new < ll:
                break
        K, ll = Knew, ll_new
        trace.append(ll)
        if record:
            eigs.append(float(linalg.eigvalsh(K)[0]))
    else:
        Kinv = linalg.cho_solve(linalg.cho_factor(K, lower=True), np.eye(cov.m))
        G = (Kinv + Kinv.T) / 2 - S
        G[~mask] = 0.0
        gnorm = float(np.abs(G).max())
        converged = gnorm <= tol
        it = max_iter
    if not converged:
        log.warning("constrained_ml: stopped after %d iterations, gradient %.2e > %.1e",
                    it, gnorm, tol)
    K[~mask] = 0.0
    return PrecisionEstimate(K, selection, ll, it, converged, gnorm, trace, eigs)
