"""
Information criteria for selection without shrinkage.

Mallows's Cp (non-studentised), generalized cross validation, and the
Monte Carlo estimate of the generalized degrees of freedom that turns a
fixed-model Cp into a selection-aware one.

A *selector* is any callable taking a pseudo-observation vector ``z`` and
returning a :class:`Selection`: the selected index set for every model size
``kappa = 0..kappa_max`` and/or the energy ``z . fit_kappa(z)``.  For an
orthogonal projection onto ``S_kappa`` the energy is ``||P_S z||^2``.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "FitSummary",
    "DofTable",
    "Selection",
    "CriterionCurve",
    "ReplicateError",
    "mallows_cp",
    "gcv",
    "soft_threshold",
    "mc_dof",
    "refined_cp_curve",
    "naive_cp_curve",
    "threshold_selector",
    "fixed_selector",
]


class ReplicateError(RuntimeError):
    """A selector failed on one Monte Carlo replicate."""

    def __init__(self, replicate, cause):
        super().__init__(f"selector failed on replicate {replicate}: {cause!r}")
        self.replicate = replicate


@dataclass(frozen=True)
class FitSummary:
    """Residual summary of one fitted model of size ``kappa``."""

    n: int
    kappa: int
    sse: float
    sigma2: Optional[float] = None

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("n must be positive")
        if self.sse < 0:
            raise ValueError("sse must be nonnegative")
        if not 0 <= self.kappa <= self.n:
            raise ValueError("kappa must lie in [0, n]")
        if self.sigma2 is not None and not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive when given")


def mallows_cp(fit: FitSummary, nu_kappa: float) -> float:
    """Non-studentised Mallows's Cp, an unbiased estimate of the prediction error.

    ``sse/n + 2 nu sigma2 / n - sigma2``.  Pass ``nu_kappa = kappa`` for the
    classical fixed-model criterion.
    """
    if fit.sigma2 is None:
        raise ValueError("Mallows's Cp needs a noise variance; use gcv() when sigma2 is unknown")
    n = fit.n
    return fit.sse / n + 2.0 * nu_kappa * fit.sigma2 / n - fit.sigma2


def gcv(fit: FitSummary, nu_kappa: float) -> float:
    """Generalized cross validation ``(sse/n) / (1 - nu/n)^2``."""
    if nu_kappa >= fit.n:
        raise ValueError(f"GCV denominator vanishes: nu={nu_kappa} >= n={fit.n}")
    return (fit.sse / fit.n) / (1.0 - nu_kappa / fit.n) ** 2


def soft_threshold(x, lam):
    """``sign(x) * (|x| - lam)`` where ``|x| > lam``, zero elsewhere."""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


@dataclass
class Selection:
    """Output of a selector on one vector.

    sets : list of index arrays, ``sets[k]`` has ``k`` elements, or None
    energy : array of length ``kappa_max + 1`` with ``z . fit_k(z)``, or None
        When None it is computed as ``sum(z[sets[k]]**2)`` (diagonal projection).
    """

    sets: Optional[list] = None
    energy: Optional[np.ndarray] = None

    def energies(self, z):
        if self.energy is not None:
            return np.asarray(self.energy, dtype=float)
        if self.sets is None:
            raise ValueError("selection carries neither sets nor energies")
        z2 = np.asarray(z, dtype=float) ** 2
        return np.array([math.fsum(z2[np.asarray(s, dtype=int)]) for s in self.sets])


Selector = Callable[[np.ndarray], Selection]
NoiseModel = Callable[[np.random.Generator, int], np.ndarray]


def standard_normal(rng: np.random.Generator, m: int) -> np.ndarray:
    return rng.standard_normal(m)


@dataclass
class DofTable:
    """Monte Carlo generalized degrees of freedom indexed by model size.

    ``nu[k]`` is the replicate mean of the selector energy at size ``k`` and
    ``se[k]`` its standard error.  ``mirror[k] = (nu[k] - k) * sigma2 / n``.
    """

    nu: np.ndarray
    se: np.ndarray
    replicates: int
    seed: Optional[int]
    n: int
    sigma2: float = 1.0
    mirror: np.ndarray = field(init=False)

    def __post_init__(self):
        self.nu = np.asarray(self.nu, dtype=float)
        self.se = np.asarray(self.se, dtype=float)
        self.nu[0] = 0.0
        self.se[0] = 0.0
        self.mirror = self.mirror_for(self.sigma2, self.n)

    @property
    def kappa(self) -> np.ndarray:
        return np.arange(len(self.nu))

    @property
    def kappa_max(self) -> int:
        return len(self.nu) - 1

    def mirror_for(self, sigma2: float, n: int) -> np.ndarray:
        """Mirror offsets for another noise level or sample size."""
        return (self.nu - self.kappa) * sigma2 / n

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kappa", "nu", "se", "mirror"])
            for k in range(len(self.nu)):
                w.writerow([k, repr(float(self.nu[k])), repr(float(self.se[k])),
                            repr(float(self.mirror[k]))])

    @classmethod
    def from_csv(cls, path, n, sigma2=1.0, replicates=0, seed=None):
        data = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))
        order = np.argsort(data[:, 0])
        data = data[order]
        if not np.array_equal(data[:, 0], np.arange(len(data))):
            raise ValueError("DofTable CSV must list kappa = 0, 1, ..., kappa_max")
        return cls(nu=data[:, 1], se=data[:, 2], replicates=replicates, seed=seed,
                   n=n, sigma2=sigma2)

    @classmethod
    def naive(cls, kappa_max: int, n: int, sigma2: float = 1.0) -> "DofTable":
        """Table with ``nu[k] = k``, i.e. the classical fixed-model penalty."""
        k = np.arange(kappa_max + 1, dtype=float)
        return cls(nu=k, se=np.zeros_like(k), replicates=0, seed=None, n=n, sigma2=sigma2)


def mc_dof(
    selector: Selector,
    m: int,
    kappa_max: int,
    reps: int = 100,
    seed: Optional[int] = 0,
    noise: Optional[NoiseModel] = None,
    n: Optional[int] = None,
    n_jobs: int = 1,
) -> DofTable:
    """Estimate generalized degrees of freedom by simulation on pure noise.

    Each replicate ``r`` draws ``z`` from ``noise(rng_r, m)`` where ``rng_r`` is
    seeded from ``(seed, r)``, so the table does not depend on ``n_jobs``.
    ``n`` (for the mirror offsets) defaults to ``m``.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    if kappa_max < 0:
        raise ValueError("kappa_max must be nonnegative")
    noise = noise or standard_normal
    base = 0 if seed is None else int(seed)

    def run(r):
        rng = np.random.default_rng([base, r])
        z = noise(rng, m)
        try:
            e = selector(z).energies(z)
        except Exception as exc:  # noqa: BLE001 - rewrapped with replicate index
            raise ReplicateError(r, exc) from exc
        out = np.full(kappa_max + 1, np.nan)
        k = min(len(e), kappa_max + 1)
        out[:k] = e[:k]
        return out

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            rows = list(pool.map(run, range(reps)))
    else:
        rows = [run(r) for r in range(reps)]
    # sizes a selector cannot reach on some replicate are NaN there
    E = np.vstack(rows)
    counts = np.sum(np.isfinite(E), axis=0)
    safe = np.where(np.isfinite(E), E, 0.0)
    c = np.maximum(counts, 1)
    nu = safe.sum(axis=0) / c
    dev = np.where(np.isfinite(E), E - nu, 0.0)
    sd = np.sqrt((dev ** 2).sum(axis=0) / np.maximum(counts - 1, 1))
    nu = np.where(counts > 0, nu, np.nan)
    se = np.where(counts > 1, sd / np.sqrt(c), 0.0)
    return DofTable(nu=nu, se=se, replicates=reps, seed=seed, n=m if n is None else n)


@dataclass
class CriterionCurve:
    kappa: np.ndarray
    values: np.ndarray
    kappa_star: int

    def __getitem__(self, k):
        idx = np.searchsorted(self.kappa, k)
        if idx >= len(self.kappa) or self.kappa[idx] != k:
            raise KeyError(k)
        return self.values[idx]


def _overlap(sse_by_kappa, nu):
    if isinstance(sse_by_kappa, dict):
        ks = np.array(sorted(sse_by_kappa), dtype=int)
        sse = np.array([sse_by_kappa[k] for k in ks], dtype=float)
    else:
        sse = np.asarray(sse_by_kappa, dtype=float)
        ks = np.arange(len(sse))
    keep = (ks >= 0) & (ks < len(nu)) & np.isfinite(sse)
    keep[keep] &= np.isfinite(nu[ks[keep]])
    if not keep.any():
        raise ValueError("no model size is common to the SSE table and the dof table")
    return ks[keep], sse[keep]


def refined_cp_curve(sse_by_kappa, dof, n: int, sigma2: float) -> CriterionCurve:
    """Mirror-corrected Cp over model sizes.

    ``Lambda(k) = sse[k]/n + 2 nu[k] sigma2 / n - sigma2``.  ``dof`` is a
    :class:`DofTable` or any array/mapping of ``nu`` indexed by ``k``.
    """
    nu = _nu_array(dof)
    ks, sse = _overlap(sse_by_kappa, nu)
    vals = sse / n + 2.0 * nu[ks] * sigma2 / n - sigma2
    return CriterionCurve(ks, vals, int(ks[np.argmin(vals)]))


def naive_cp_curve(sse_by_kappa, n: int, sigma2: float) -> CriterionCurve:
    """Classical fixed-model Cp, ``nu[k] = k``."""
    ks = np.array(sorted(sse_by_kappa), dtype=int) if isinstance(sse_by_kappa, dict) \
        else np.arange(len(sse_by_kappa))
    return refined_cp_curve(sse_by_kappa, np.arange(ks.max() + 1, dtype=float), n, sigma2)


def gcv_curve(sse_by_kappa, dof, n: int) -> CriterionCurve:
    nu = _nu_array(dof)
    ks, sse = _overlap(sse_by_kappa, nu)
    keep = nu[ks] < n
    ks, sse = ks[keep], sse[keep]
    vals = (sse / n) / (1.0 - nu[ks] / n) ** 2
    return CriterionCurve(ks, vals, int(ks[np.argmin(vals)]))


def _nu_array(dof) -> np.ndarray:
    if isinstance(dof, DofTable):
        return dof.nu
    if isinstance(dof, dict):
        kmax = max(dof)
        nu = np.full(kmax + 1, np.nan)
        for k, v in dof.items():
            nu[k] = v
        return nu
    return np.asarray(dof, dtype=float)


# ---------------------------------------------------------------------------
# simple selectors, mainly for calibration and tests


def threshold_selector(kappa_max: int) -> Selector:
    """Keep the ``k`` largest ``|z_i|``; no structural constraint."""

    def select(z):
        z2 = np.sort(np.asarray(z, dtype=float) ** 2)[::-1]
        e = np.concatenate([[0.0], np.cumsum(z2[:kappa_max])])
        return Selection(energy=e)

    return select


def fixed_selector(sets: Sequence) -> Selector:
    """Predetermined selection per size, independent of the data."""
    sets = [np.asarray(s, dtype=int) for s in sets]

    def select(z):
        return Selection(sets=sets)

    return select
