"""
Lasso path indexed by model size, least-squares refits, and the pilot
variance estimate.

The path solves ``min ||y - X b||^2 / (2n) + lam ||b||_1`` by the exact
homotopy (LARS with the lasso drop rule), so every knot satisfies the KKT
conditions up to rounding and the first attainment of each active-set size
is located exactly.  :func:`lasso_cd` is an independent coordinate-descent
solver at a single ``lam``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .criteria import Selection

log = logging.getLogger(__name__)

__all__ = [
    "LassoPath",
    "SingularDesignError",
    "lasso_path",
    "lasso_cd",
    "ols_refit",
    "pilot_sigma2",
    "sigma2_from_sse",
    "lasso_selector",
    "standardize_columns",
]


class SingularDesignError(np.linalg.LinAlgError):
    pass


@dataclass
class LassoPath:
    """Knots of the lasso path and the selection of each size.

    ``actives[t]`` is the active set on the stretch of the path just below
    ``knots[t]``; ``betas[t]`` the coefficients at ``knots[t]`` (zero at the
    first knot).  ``selections[k]`` is the active set at the largest ``lam``
    where the set has ``k`` elements (None when the path never reaches ``k``).
    ``sse_shrink[k]`` is the residual sum of squares of the shrunken fit at
    the end of that stretch of the path; ``sse_refit[k]`` that of the
    least-squares refit on ``selections[k]``.
    """

    knots: np.ndarray
    betas: np.ndarray
    actives: list
    selections: list
    sse_refit: np.ndarray
    sse_shrink: np.ndarray
    n: int
    truncated: bool = False
    tied_sizes: list = field(default_factory=list)

    @property
    def kappa_max(self):
        return len(self.selections) - 1

    def reached(self):
        return np.array([s is not None for s in self.selections])


def standardize_columns(X):
    """Scale columns to unit Euclidean norm; returns the scaled matrix and the norms."""
    X = np.asarray(X, dtype=float)
    norms = np.linalg.norm(X, axis=0)
    if np.any(norms == 0):
        raise ValueError("design has a zero column")
    return X / norms, norms


def _check_design(X, tol=1e-6):
    norms = np.linalg.norm(X, axis=0)
    if np.any(np.abs(norms - 1.0) > tol):
        raise ValueError("design columns must have unit Euclidean norm; call standardize_columns")


def lasso_path(X, y, kappa_max: Optional[int] = None, *, max_steps: Optional[int] = None,
               eps: float = 1e-12) -> LassoPath:
    """Homotopy path from ``lam_max = max|X^T y|/n`` down to the first of
    ``|A| > kappa_max``, ``lam = 0`` or a saturated design."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    _check_design(X)
    kappa_max = min(n - 1, p) if kappa_max is None else kappa_max
    if kappa_max > min(n - 1, p):
        raise ValueError(f"kappa_max={kappa_max} exceeds min(n-1, p)={min(n - 1, p)}")
    max_steps = max_steps or 8 * (kappa_max + 2)

    beta = np.zeros(p)
    r = y.copy()
    c = X.T @ r / n
    lam = float(np.max(np.abs(c))) if p else 0.0
    # actives[t] is the active set on the stretch just below knots[t]
    knots, betas, sse_at = [lam], [beta.copy()], [float(r @ r)]
    if lam <= eps * max(1.0, np.linalg.norm(y)):
        return _finish(X, y, knots, betas, [np.array([], dtype=np.int64)], sse_at,
                       kappa_max, n, truncated=False)

    scale = max(1.0, lam)
    active = [int(j) for j in np.flatnonzero(np.abs(np.abs(c) - lam) <= 1e-12 * scale)]
    actives = [np.array(sorted(active), dtype=np.int64)]
    truncated = True
    for _ in range(max_steps):
        if len(active) > kappa_max:
            truncated = False
            break
        A = np.array(active, dtype=np.int64)
        s = np.sign(c[A])
        XA = X[:, A]
        try:
            delta = np.linalg.solve(XA.T @ XA, s) * n
        except np.linalg.LinAlgError:
            log.warning("lasso_path: singular active Gram at |A|=%d, stopping", len(A))
            break
        a = X.T @ (XA @ delta) / n
        # gamma = decrease of lam before the next join or drop
        gam, event, join = lam, None, True
        inactive = np.setdiff1d(np.arange(p), A)
        for sgn in (1.0, -1.0):
            num = lam - sgn * c[inactive]
            den = 1.0 - sgn * a[inactive]
            with np.errstate(divide="ignore", invalid="ignore"):
                g = np.where(den > 1e-14, num / den, np.inf)
            g = np.where(g > 1e-14 * scale, g, np.inf)
            if g.size and g.min() < gam:
                i = int(np.argmin(g))
                gam, event, join = float(g[i]), int(inactive[i]), True
        with np.errstate(divide="ignore", invalid="ignore"):
            gd = np.where(delta != 0, -beta[A] / delta, np.inf)
        gd = np.where(gd > 1e-14 * scale, gd, np.inf)
        if gd.size and gd.min() < gam:
            i = int(np.argmin(gd))
            gam, event, join = float(gd[i]), int(A[i]), False

        beta[A] += gam * delta
        lam -= gam
        if event is not None and not join:
            beta[event] = 0.0
            active.remove(event)
        elif event is not None:
            active.append(event)
        r = y - X @ beta
        c = X.T @ r / n
        knots.append(lam)
        betas.append(beta.copy())
        sse_at.append(float(r @ r))
        actives.append(np.array(sorted(active), dtype=np.int64))
        if event is None or lam <= eps * scale or len(active) >= min(n - 1, p) + 1:
            truncated = False
            break
    return _finish(X, y, knots, betas, actives, sse_at, kappa_max, n, truncated)


def _finish(X, y, knots, betas, actives, sse_at, kappa_max, n, truncated):
    selections = [None] * (kappa_max + 1)
    sse_shrink = np.full(kappa_max + 1, np.nan)
    selections[0] = np.array([], dtype=np.int64)
    sse_shrink[0] = sse_at[0]
    tied = []
    prev = np.array([], dtype=np.int64)
    for t, A in enumerate(actives):
        # the shrunken fit with active set A is best where its stretch ends
        end_sse = sse_at[t + 1] if t + 1 < len(sse_at) else sse_at[t]
        k = len(A)
        if k <= kappa_max and selections[k] is None:
            selections[k] = A
            sse_shrink[k] = end_sse
        if k - len(prev) > 1:
            # several variables entered at one knot: fill skipped sizes by |beta| rank
            ref = betas[min(t + 1, len(betas) - 1)]
            order = sorted(set(A.tolist()) - set(prev.tolist()), key=lambda j: (-abs(ref[j]), j))
            for kk in range(len(prev) + 1, min(k, kappa_max + 1)):
                if selections[kk] is None:
                    extra = order[: kk - len(prev)]
                    selections[kk] = np.array(sorted(set(prev.tolist()) | set(extra)), dtype=np.int64)
                    sse_shrink[kk] = sse_at[t]
                    tied.append(kk)
        prev = A
    sse_refit = np.full(kappa_max + 1, np.nan)
    for k, S in enumerate(selections):
        if S is not None:
            sse_refit[k] = ols_refit(X, y, S)[1]
    if tied:
        log.info("lasso_path: simultaneous entries, sizes %s filled by coefficient rank", tied)
    return LassoPath(np.array(knots), np.array(betas), actives, selections, sse_refit,
                     sse_shrink, n, truncated=truncated, tied_sizes=tied)


def lasso_cd(X, y, lam, beta0=None, tol=1e-9, max_sweeps=100000):
    """Cyclic coordinate descent for ``||y - X b||^2/(2n) + lam ||b||_1`` at one ``lam``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    col2 = np.einsum("ij,ij->j", X, X)
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=float)
    r = y - X @ beta
    for _ in range(max_sweeps):
        biggest = 0.0
        for j in range(p):
            old = beta[j]
            rho = X[:, j] @ r + col2[j] * old
            new = np.sign(rho) * max(abs(rho) - n * lam, 0.0) / col2[j]
            if new != old:
                r -= X[:, j] * (new - old)
                beta[j] = new
                biggest = max(biggest, abs(new - old))
        if biggest < tol:
            break
    return beta


def ols_refit(X, y, S):
    """Least-squares coefficients on the columns ``S`` (zero elsewhere) and the SSE."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    S = np.asarray(S, dtype=np.int64)
    beta = np.zeros(X.shape[1])
    if S.size == 0:
        return beta, float(y @ y)
    if S.size > X.shape[0]:
        raise SingularDesignError(f"{S.size} columns exceed {X.shape[0]} observations")
    XS = X[:, S]
    Q, R = np.linalg.qr(XS)
    d = np.abs(np.diag(R))
    if d.min() <= 1e-10 * max(d.max(), 1e-300):
        raise SingularDesignError("selected columns are linearly dependent")
    b = np.linalg.solve(R, Q.T @ y)
    beta[S] = b
    res = y - XS @ b
    return beta, float(res @ res)


def sigma2_from_sse(sse, n, kappa, mode="residual-df"):
    """Variance estimate from a shrinkage fit of size ``kappa``.

    ``residual-df`` divides by ``n - kappa``; ``model-size`` divides by ``kappa``.
    """
    if mode == "residual-df":
        if kappa >= n:
            raise ValueError("no residual degrees of freedom left")
        return sse / (n - kappa)
    if mode == "model-size":
        if kappa == 0:
            raise ValueError("model-size variance undefined for an empty model")
        return sse / kappa
    raise ValueError(f"unknown variance mode {mode!r}")


def pilot_sigma2(path: LassoPath, n: Optional[int] = None, mode: str = "residual-df") -> float:
    """Noise variance from the GCV-optimal shrinkage fit (``nu = kappa``)."""
    n = path.n if n is None else n
    k = np.arange(len(path.sse_shrink))
    ok = np.isfinite(path.sse_shrink) & (k < n)
    if not ok.any():
        raise ValueError("lasso path has no usable knot")
    score = np.full(k.size, np.inf)
    score[ok] = (path.sse_shrink[ok] / n) / (1.0 - k[ok] / n) ** 2
    ks = int(np.argmin(score))
    return sigma2_from_sse(float(path.sse_shrink[ks]), n, ks, mode)


def lasso_selector(X, kappa_max: int):
    """Selector returning ``||P_{S_k} z||^2`` along the lasso path of ``z`` on ``X``."""
    X = np.asarray(X, dtype=float)

    def select(z):
        path = lasso_path(X, z, kappa_max)
        e = np.full(kappa_max + 1, np.nan)
        zz = float(z @ z)
        for k, S in enumerate(path.selections):
            if S is not None:
                e[k] = zz - path.sse_refit[k]
        return Selection(sets=None, energy=e)

    return select
