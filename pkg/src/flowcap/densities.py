"""Probability densities with log-density, score, 1D CDF/quantile and samplers.

Shape conventions
-----------------
A ``Density`` of dimension ``d`` evaluates arrays of shape ``(..., d)`` and
returns arrays of shape ``(...)``.  One-dimensional densities additionally
accept plain arrays of scalars of any shape (the trailing length-1 axis is
optional).  ``sample`` always returns an ``(n, d)`` matrix.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, optimize, special

from .errors import (
    ContractViolation,
    DomainError,
    NonSmoothPointError,
    UnsupportedOperation,
)

DIST_SCHEMA = "flowcap-dist-1"
LOG_2PI = float(np.log(2.0 * np.pi))
SMOOTH_MARGIN = 1e-8
# levels this close to a cumulative-mass boundary resolve to the boundary itself
PLATEAU_TOL = 1e-13

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def gauss_interval_mass(a, b):
    """P(a <= Z < b) for standard normal Z, without cancellation in either tail."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    left = special.ndtr(b) - special.ndtr(a)
    right = special.ndtr(-a) - special.ndtr(-b)
    middle = 1.0 - special.ndtr(a) - special.ndtr(-b)
    out = np.where(b <= 0.0, left, np.where(a >= 0.0, right, middle))
    return np.maximum(out, 0.0)


def _as_float_array(x):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr[~np.isinf(arr)])):
        raise ContractViolation("NaN in input")
    return arr


class Density(ABC):
    """Abstract density on R^d."""

    dim: int

    # -- internal batch API: Z has shape (n, d) ---------------------------------
    @abstractmethod
    def _log_density(self, Z: np.ndarray) -> np.ndarray: ...

    def _grad_log_density(self, Z: np.ndarray) -> np.ndarray:
        raise UnsupportedOperation(f"{type(self).__name__} has no analytic score")

    def _sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise UnsupportedOperation(f"{type(self).__name__} does not support sampling")

    def nonsmooth_distance(self, Z: np.ndarray) -> np.ndarray:
        """Distance from each row of Z to the set where the score is undefined."""
        return np.full(np.asarray(Z).shape[0], np.inf)

    # -- public API -------------------------------------------------------------
    def _points(self, z):
        z = _as_float_array(z)
        if self.dim == 1:
            if z.ndim >= 2 and z.shape[-1] == 1:
                return z.reshape(-1, 1), z.shape[:-1], True
            return z.reshape(-1, 1), z.shape, False
        if z.ndim == 0 or z.shape[-1] != self.dim:
            raise ContractViolation(
                f"expected points of dimension {self.dim}, got shape {z.shape}"
            )
        return z.reshape(-1, self.dim), z.shape[:-1], True

    def log_density(self, z):
        Z, lead, _ = self._points(z)
        out = self._log_density(Z)
        return out.reshape(lead) if lead else float(out[0])

    def density(self, z):
        return np.exp(self.log_density(z))

    def grad_log_density(self, z):
        Z, lead, keep_axis = self._points(z)
        G = self._grad_log_density(Z)
        if self.dim == 1 and not keep_axis:
            return G[:, 0].reshape(lead) if lead else float(G[0, 0])
        return G.reshape(lead + (self.dim,))

    def sample(self, seed, n: int) -> np.ndarray:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return self._sample(rng, int(n)).reshape(int(n), self.dim)

    # 1D-only API; overridden by one-dimensional densities.
    def cdf(self, x):
        raise UnsupportedOperation("CDF is only defined for one-dimensional densities")

    def quantile(self, u):
        raise UnsupportedOperation("quantile is only defined for one-dimensional densities")

    def to_dict(self) -> dict:
        raise UnsupportedOperation(f"{type(self).__name__} is not serializable")


class Density1D(Density):
    """One-dimensional density; subclasses work on flat arrays of scalars."""

    dim = 1

    @abstractmethod
    def _logpdf1(self, x: np.ndarray) -> np.ndarray: ...

    def _dlogpdf1(self, x: np.ndarray) -> np.ndarray:
        raise UnsupportedOperation(f"{type(self).__name__} has no analytic score")

    @abstractmethod
    def _cdf1(self, x: np.ndarray) -> np.ndarray: ...

    def _sf1(self, x: np.ndarray) -> np.ndarray:
        return 1.0 - self._cdf1(x)

    @abstractmethod
    def _quantile1(self, u: np.ndarray) -> np.ndarray: ...

    def support_intervals(self) -> list[tuple[float, float]]:
        return [(-np.inf, np.inf)]

    def kinks(self) -> np.ndarray:
        """Points where the density or its derivative may jump."""
        return np.empty(0)

    def _log_density(self, Z):
        return self._logpdf1(Z[:, 0])

    def _grad_log_density(self, Z):
        x = Z[:, 0]
        k = self.kinks()
        if k.size:
            near = np.min(np.abs(x[:, None] - k[None, :]), axis=1)
            bad = near <= SMOOTH_MARGIN * (1.0 + np.abs(x))
            if np.any(bad):
                raise NonSmoothPointError(
                    f"score undefined at x={x[bad][0]!r} (breakpoint of {type(self).__name__})"
                )
        return self._dlogpdf1(x)[:, None]

    def nonsmooth_distance(self, Z):
        x = np.asarray(Z, dtype=float).reshape(-1)
        k = self.kinks()
        if k.size == 0:
            return np.full(x.shape, np.inf)
        return np.min(np.abs(x[:, None] - k[None, :]), axis=1)

    def _sample(self, rng, n):
        return self._quantile1(rng.uniform(size=n))[:, None]

    def pdf(self, x):
        x = _as_float_array(x)
        return np.exp(self._logpdf1(x.reshape(-1))).reshape(x.shape)

    def cdf(self, x):
        x = _as_float_array(x)
        return np.clip(self._cdf1(x.reshape(-1)), 0.0, 1.0).reshape(x.shape)

    def sf(self, x):
        x = _as_float_array(x)
        return np.clip(self._sf1(x.reshape(-1)), 0.0, 1.0).reshape(x.shape)

    def quantile(self, u):
        u = _as_float_array(u)
        if np.any((u <= 0.0) | (u >= 1.0)):
            raise ContractViolation("quantile level must lie strictly inside (0, 1)")
        return self._quantile1(u.reshape(-1)).reshape(u.shape)


# ---------------------------------------------------------------------------
# Gaussians
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Gaussian1D(Density1D):
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.mu) and np.isfinite(self.sigma) and self.sigma > 0):
            raise ContractViolation(f"Gaussian1D needs finite mu and sigma > 0, got {self.sigma}")

    def _logpdf1(self, x):
        s = (x - self.mu) / self.sigma
        return -0.5 * s * s - np.log(self.sigma) - 0.5 * LOG_2PI

    def _dlogpdf1(self, x):
        return -(x - self.mu) / self.sigma**2

    def _cdf1(self, x):
        return special.ndtr((x - self.mu) / self.sigma)

    def _sf1(self, x):
        return special.ndtr(-(x - self.mu) / self.sigma)

    def _quantile1(self, u):
        return self.mu + self.sigma * special.ndtri(u)

    def _sample(self, rng, n):
        return (self.mu + self.sigma * rng.standard_normal(n))[:, None]

    def to_dict(self):
        return {"schema": DIST_SCHEMA, "kind": "gaussian1d", "mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True, eq=False)
class GaussianD(Density):
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        d = mean.shape[0]
        if mean.ndim != 1 or cov.shape != (d, d):
            raise ContractViolation(f"mean {mean.shape} and cov {cov.shape} disagree")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise ContractViolation("covariance is not symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ContractViolation("covariance is not positive definite") from exc
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self):
        return self.mean.shape[0]

    @cached_property
    def precision(self):
        return np.linalg.inv(self.cov)

    @cached_property
    def log_det_cov(self):
        return 2.0 * float(np.sum(np.log(np.diag(self._chol))))

    def _whiten(self, Z):
        from scipy.linalg import solve_triangular

        return solve_triangular(self._chol, (Z - self.mean).T, lower=True).T

    def _log_density(self, Z):
        W = self._whiten(Z)
        return -0.5 * np.sum(W * W, axis=1) - 0.5 * self.log_det_cov - 0.5 * self.dim * LOG_2PI

    def _grad_log_density(self, Z):
        return -(Z - self.mean) @ self.precision

    def _sample(self, rng, n):
        return self.mean + rng.standard_normal((n, self.dim)) @ self._chol.T

    def cdf(self, x):
        return self._as_1d().cdf(x)

    def quantile(self, u):
        return self._as_1d().quantile(u)

    def _as_1d(self):
        if self.dim != 1:
            raise UnsupportedOperation("CDF is only defined for one-dimensional densities")
        return Gaussian1D(float(self.mean[0]), float(np.sqrt(self.cov[0, 0])))

    def to_dict(self):
        return {
            "schema": DIST_SCHEMA,
            "kind": "gaussian",
            "mean": self.mean.tolist(),
            "cov": self.cov.tolist(),
        }


def standard_gaussian(d: int) -> GaussianD:
    return GaussianD(np.zeros(d), np.eye(d))


@dataclass(frozen=True, eq=False)
class MixtureGaussianD(Density):
    """Finite Gaussian mixture; duplicate components are kept as given."""

    weights: np.ndarray
    components: tuple

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        comps = tuple(
            c if isinstance(c, GaussianD) else GaussianD(np.atleast_1d(c.mu), [[c.sigma**2]])
            for c in self.components
        )
        if len(comps) == 0 or w.shape != (len(comps),):
            raise ContractViolation("mixture needs one weight per component and >= 1 component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ContractViolation(f"mixture weights must lie on the simplex (sum={w.sum()!r})")
        dims = {c.dim for c in comps}
        if len(dims) != 1:
            raise ContractViolation("mixture components have different dimensions")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", comps)

    @property
    def dim(self):
        return self.components[0].dim

    @property
    def shared_covariance(self) -> np.ndarray | None:
        first = self.components[0].cov
        if all(np.array_equal(c.cov, first) for c in self.components[1:]):
            return first
        return None

    def _component_logs(self, Z):
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return np.stack([lw + c._log_density(Z) for lw, c in zip(logw, self.components)], axis=1)

    def _log_density(self, Z):
        return special.logsumexp(self._component_logs(Z), axis=1)

    def responsibilities(self, Z):
        L = self._component_logs(Z)
        return np.exp(L - special.logsumexp(L, axis=1, keepdims=True))

    def _grad_log_density(self, Z):
        R = self.responsibilities(Z)
        G = np.stack([c._grad_log_density(Z) for c in self.components], axis=1)
        return np.einsum("nk,nkd->nd", R, G)

    def _sample(self, rng, n):
        counts = rng.multinomial(n, self.weights)
        parts = [c._sample(rng, k) for c, k in zip(self.components, counts) if k > 0]
        X = np.concatenate(parts, axis=0)
        return X[rng.permutation(n)]

    # 1D mixtures get a numeric CDF and quantile.
    def _check_1d(self):
        if self.dim != 1:
            raise UnsupportedOperation("CDF is only defined for one-dimensional densities")

    def _cdf_flat(self, x):
        mus = np.array([c.mean[0] for c in self.components])
        sds = np.array([np.sqrt(c.cov[0, 0]) for c in self.components])
        return special.ndtr((x[:, None] - mus) / sds) @ self.weights

    def cdf(self, x):
        self._check_1d()
        x = _as_float_array(x)
        return self._cdf_flat(x.reshape(-1)).reshape(x.shape)

    def sf(self, x):
        self._check_1d()
        x = _as_float_array(x)
        mus = np.array([c.mean[0] for c in self.components])
        sds = np.array([np.sqrt(c.cov[0, 0]) for c in self.components])
        flat = special.ndtr(-(x.reshape(-1)[:, None] - mus) / sds) @ self.weights
        return flat.reshape(x.shape)

    def quantile(self, u):
        self._check_1d()
        u = _as_float_array(u)
        if np.any((u <= 0.0) | (u >= 1.0)):
            raise ContractViolation("quantile level must lie strictly inside (0, 1)")
        mus = np.array([c.mean[0] for c in self.components])
        sds = np.array([np.sqrt(c.cov[0, 0]) for c in self.components])
        flat = u.reshape(-1)
        z = special.ndtri(flat)
        lo = np.min(mus) + np.max(sds) * np.minimum(z, 0.0) - 1.0
        hi = np.max(mus) + np.max(sds) * np.maximum(z, 0.0) + 1.0
        x = invert_monotone(self._cdf_flat, flat, lo, hi)
        return x.reshape(u.shape)

    def support_intervals(self):
        return [(-np.inf, np.inf)]

    def kinks(self):
        return np.empty(0)

    def to_dict(self):
        return {
            "schema": DIST_SCHEMA,
            "kind": "mixture",
            "weights": self.weights.tolist(),
            "components": [c.to_dict() for c in self.components],
        }


def invert_monotone(F: Callable, targets, lo, hi, iters: int = 200, xtol: float = 0.0):
    """Smallest x in [lo, hi] with F(x) >= target, by vectorized bisection.

    ``F`` must be nondecreasing.  The result sits on the left end of any
    plateau, which is the generalized-inverse convention.
    """
    targets = np.asarray(targets, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), targets.shape).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), targets.shape).copy()
    # widen brackets until they contain the target
    for _ in range(200):
        bad = F(lo) >= targets
        if not np.any(bad):
            break
        lo[bad] -= 2.0 * (hi[bad] - lo[bad]) + 1.0
    for _ in range(200):
        bad = F(hi) < targets
        if not np.any(bad):
            break
        hi[bad] += 2.0 * (hi[bad] - lo[bad]) + 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        done = (mid <= lo) | (mid >= hi) | ((hi - lo) <= xtol)
        if np.all(done):
            break
        up = F(mid) >= targets
        hi = np.where(up & ~done, mid, hi)
        lo = np.where(~up & ~done, mid, lo)
    return hi


# ---------------------------------------------------------------------------
# Piecewise Gaussian and piecewise constant
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PiecewiseGaussian1D(Density1D):
    """Density equal to the i-th Gaussian on the i-th interval.

    Intervals are ``(-inf, t_1), [t_1, t_2), ..., [t_{n-1}, inf)``; a point
    on a breakpoint belongs to the piece on its right.  The object is not
    required to integrate to one; ``tail_consistent`` decides whether it does
    so in the structured way that the ReLU synthesis needs.
    """

    breakpoints: np.ndarray
    mus: np.ndarray
    sigmas: np.ndarray

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.breakpoints, dtype=float)).reshape(-1)
        mu = np.atleast_1d(np.asarray(self.mus, dtype=float)).reshape(-1)
        sd = np.atleast_1d(np.asarray(self.sigmas, dtype=float)).reshape(-1)
        if mu.shape != sd.shape or t.shape[0] != mu.shape[0] - 1:
            raise ContractViolation("need n pieces and n-1 breakpoints")
        if np.any(np.diff(t) <= 0) or not np.all(np.isfinite(t)):
            raise ContractViolation("breakpoints must be finite and strictly increasing")
        if np.any(sd <= 0) or not np.all(np.isfinite(mu)):
            raise ContractViolation("piece scales must be positive")
        object.__setattr__(self, "breakpoints", t)
        object.__setattr__(self, "mus", mu)
        object.__setattr__(self, "sigmas", sd)

    @classmethod
    def from_pieces(cls, breakpoints, pieces: Sequence[Gaussian1D]):
        return cls(breakpoints, [p.mu for p in pieces], [p.sigma for p in pieces])

    @property
    def n_pieces(self) -> int:
        return self.mus.shape[0]

    def piece(self, i: int) -> Gaussian1D:
        return Gaussian1D(float(self.mus[i]), float(self.sigmas[i]))

    @cached_property
    def _edges(self):
        return np.concatenate([[-np.inf], self.breakpoints, [np.inf]])

    def piece_index(self, x):
        return np.searchsorted(self.breakpoints, np.asarray(x, dtype=float), side="right")

    @cached_property
    def piece_masses(self) -> np.ndarray:
        e = self._edges
        a = (e[:-1] - self.mus) / self.sigmas
        b = (e[1:] - self.mus) / self.sigmas
        return gauss_interval_mass(a, b)

    @cached_property
    def _cum(self):
        return np.concatenate([[0.0], np.cumsum(self.piece_masses)])

    def total_mass(self) -> float:
        return float(self._cum[-1])

    def tail_consistency_residuals(self) -> np.ndarray:
        """Left-of-t_k mass plus the right tail of piece k beyond t_k, minus one."""
        k = np.arange(1, self.n_pieces)
        t = self.breakpoints
        tails = special.ndtr(-(t - self.mus[k]) / self.sigmas[k])
        return self._cum[k] + tails - 1.0

    def tail_consistent(self, tol: float = 1e-10) -> bool:
        if self.n_pieces == 1:
            return True
        return bool(np.all(np.abs(self.tail_consistency_residuals()) <= tol))

    def _logpdf1(self, x):
        i = self.piece_index(x)
        s = (x - self.mus[i]) / self.sigmas[i]
        return -0.5 * s * s - np.log(self.sigmas[i]) - 0.5 * LOG_2PI

    def _dlogpdf1(self, x):
        i = self.piece_index(x)
        return -(x - self.mus[i]) / self.sigmas[i] ** 2

    def _local_mass(self, i, x):
        a = (self._edges[i] - self.mus[i]) / self.sigmas[i]
        b = (x - self.mus[i]) / self.sigmas[i]
        return gauss_interval_mass(a, b)

    def _cdf1(self, x):
        i = self.piece_index(x)
        return self._cum[i] + self._local_mass(i, x)

    def _sf1(self, x):
        i = self.piece_index(x)
        local_rest = gauss_interval_mass(
            (x - self.mus[i]) / self.sigmas[i], (self._edges[i + 1] - self.mus[i]) / self.sigmas[i]
        )
        return (self._cum[-1] - self._cum[i + 1]) + local_rest

    def _quantile1(self, u):
        n = self.n_pieces
        i = np.minimum(np.searchsorted(self._cum[1:], u - PLATEAU_TOL, side="left"), n - 1)
        rem = np.clip(u - self._cum[i], 0.0, self._cum[i + 1] - self._cum[i])
        mu, sd = self.mus[i], self.sigmas[i]
        a = (self._edges[i] - mu) / sd
        # Solve mass(a, b) = rem from whichever tail keeps precision.
        with np.errstate(invalid="ignore", divide="ignore"):
            b_left = special.ndtri(np.clip(special.ndtr(a) + rem, 0.0, 1.0))
            b_right = -special.ndtri(np.clip(special.ndtr(-a) - rem, 0.0, 1.0))
        b = np.where(a < 0.0, b_left, b_right)
        x = mu + sd * b
        return np.clip(x, self._edges[i], self._edges[i + 1])

    def kinks(self):
        return self.breakpoints.copy()

    def to_dict(self):
        return {
            "schema": DIST_SCHEMA,
            "kind": "piecewise_gaussian",
            "breakpoints": self.breakpoints.tolist(),
            "mus": self.mus.tolist(),
            "sigmas": self.sigmas.tolist(),
        }


@dataclass(frozen=True, eq=False)
class PiecewiseConstant1D(Density1D):
    """Step density on [t_0, t_m) with value ``values[i]`` on [t_i, t_{i+1})."""

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.breakpoints, dtype=float).reshape(-1)
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if t.shape[0] != v.shape[0] + 1 or v.shape[0] == 0:
            raise ContractViolation("need m+1 breakpoints for m values")
        if np.any(np.diff(t) <= 0) or not np.all(np.isfinite(t)):
            raise ContractViolation("breakpoints must be finite and strictly increasing")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ContractViolation("values must be finite and nonnegative")
        total = float(np.sum(v * np.diff(t)))
        if abs(total - 1.0) > 1e-12:
            raise ContractViolation(f"step density integrates to {total!r}, not 1")
        object.__setattr__(self, "breakpoints", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def normalized(cls, breakpoints, values):
        t = np.asarray(breakpoints, dtype=float)
        v = np.asarray(values, dtype=float)
        return cls(t, v / np.sum(v * np.diff(t)))

    @property
    def widths(self):
        return np.diff(self.breakpoints)

    @property
    def sup(self) -> float:
        return float(self.values.max())

    @cached_property
    def _cum(self):
        return np.concatenate([[0.0], np.cumsum(self.values * self.widths)])

    def _index(self, x):
        return np.searchsorted(self.breakpoints, x, side="right") - 1

    def _pdf_flat(self, x):
        i = self._index(x)
        inside = (i >= 0) & (i < self.values.shape[0])
        return np.where(inside, self.values[np.clip(i, 0, self.values.shape[0] - 1)], 0.0)

    def _logpdf1(self, x):
        with np.errstate(divide="ignore"):
            return np.log(self._pdf_flat(x))

    def _dlogpdf1(self, x):
        if np.any(self._pdf_flat(x) <= 0):
            raise NonSmoothPointError("score undefined where the step density vanishes")
        return np.zeros_like(x)

    def _cdf1(self, x):
        i = np.clip(self._index(x), 0, self.values.shape[0] - 1)
        local = self.values[i] * np.clip(x - self.breakpoints[i], 0.0, self.widths[i])
        return np.where(x < self.breakpoints[0], 0.0, self._cum[i] + local)

    def _quantile1(self, u):
        m = self.values.shape[0]
        # skip zero-width steps in the cumulative table: first bin whose end reaches u
        i = np.minimum(np.searchsorted(self._cum[1:], u - PLATEAU_TOL, side="left"), m - 1)
        rem = np.clip(u - self._cum[i], 0.0, self._cum[i + 1] - self._cum[i])
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(self.values[i] > 0, rem / self.values[i], 0.0)
        return self.breakpoints[i] + np.clip(step, 0.0, self.widths[i])

    def support_intervals(self):
        out = []
        for lo, hi, v in zip(self.breakpoints[:-1], self.breakpoints[1:], self.values):
            if v <= 0:
                continue
            if out and out[-1][1] == lo:
                out[-1] = (out[-1][0], hi)
            else:
                out.append((lo, hi))
        return out

    def kinks(self):
        return self.breakpoints.copy()

    def to_dict(self):
        return {
            "schema": DIST_SCHEMA,
            "kind": "piecewise_constant",
            "breakpoints": self.breakpoints.tolist(),
            "values": self.values.tolist(),
        }


# ---------------------------------------------------------------------------
# General piecewise densities built from segments
# ---------------------------------------------------------------------------


class _Segment:
    lo: float
    hi: float

    def mass(self) -> float: ...
    def cdf_local(self, x): ...
    def inv_local(self, m): ...
    def logpdf(self, x): ...
    def dlogpdf(self, x): ...


class GaussianSegment(_Segment):
    """``scale * N(x; mu, sigma)`` restricted to [lo, hi)."""

    def __init__(self, lo, hi, mu, sigma, scale=1.0):
        self.lo, self.hi, self.mu, self.sigma, self.scale = lo, hi, mu, sigma, scale
        self._a = (lo - mu) / sigma

    def mass(self):
        return self.scale * float(gauss_interval_mass(self._a, (self.hi - self.mu) / self.sigma))

    def cdf_local(self, x):
        return self.scale * gauss_interval_mass(self._a, (x - self.mu) / self.sigma)

    def inv_local(self, m):
        r = np.asarray(m, dtype=float) / self.scale
        with np.errstate(invalid="ignore", divide="ignore"):
            if self._a < 0:
                b = special.ndtri(np.clip(special.ndtr(self._a) + r, 0.0, 1.0))
            else:
                b = -special.ndtri(np.clip(special.ndtr(-self._a) - r, 0.0, 1.0))
        return np.clip(self.mu + self.sigma * b, self.lo, self.hi)

    def logpdf(self, x):
        s = (x - self.mu) / self.sigma
        return np.log(self.scale) - 0.5 * s * s - np.log(self.sigma) - 0.5 * LOG_2PI

    def dlogpdf(self, x):
        return -(x - self.mu) / self.sigma**2


class ConstantSegment(_Segment):
    def __init__(self, lo, hi, value):
        self.lo, self.hi, self.value = lo, hi, value

    def mass(self):
        return self.value * (self.hi - self.lo)

    def cdf_local(self, x):
        return self.value * np.clip(x - self.lo, 0.0, self.hi - self.lo)

    def inv_local(self, m):
        if self.value <= 0:
            return np.full(np.shape(m), self.lo)
        return np.clip(self.lo + np.asarray(m) / self.value, self.lo, self.hi)

    def logpdf(self, x):
        with np.errstate(divide="ignore"):
            return np.full(np.shape(x), np.log(self.value))

    def dlogpdf(self, x):
        return np.zeros(np.shape(x))


class FunctionSegment(_Segment):
    """``scale * pdf(x)`` on a bounded [lo, hi), integrated by panel Gauss-Legendre."""

    def __init__(self, lo, hi, pdf, dlogpdf=None, scale=1.0, panels=32):
        if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
            raise ContractViolation("function segments must be bounded and nonempty")
        self.lo, self.hi, self.pdf, self._dlog, self.scale = lo, hi, pdf, dlogpdf, scale
        self.edges = np.linspace(lo, hi, panels + 1)
        masses = self._gl(self.edges[:-1], self.edges[1:])
        self.cum = np.concatenate([[0.0], np.cumsum(masses)])

    def _gl(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        half = 0.5 * (b - a)
        nodes = (0.5 * (a + b))[..., None] + half[..., None] * _GL_NODES
        vals = self.pdf(nodes.reshape(-1)).reshape(nodes.shape)
        return half * (vals @ _GL_WEIGHTS)

    def mass(self):
        return self.scale * float(self.cum[-1])

    def cdf_local(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.lo, self.hi)
        j = np.clip(np.searchsorted(self.edges, x, side="right") - 1, 0, self.edges.size - 2)
        return self.scale * (self.cum[j] + self._gl(self.edges[j], x))

    def inv_local(self, m):
        target = np.asarray(m, dtype=float) / self.scale
        j = np.clip(np.searchsorted(self.cum, target, side="left") - 1, 0, self.edges.size - 2)
        rem = target - self.cum[j]
        a = self.edges[j]
        lo, hi = a.copy(), self.edges[j + 1].copy()
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if np.all((mid <= lo) | (mid >= hi)):
                break
            up = self._gl(a, mid) >= rem
            hi = np.where(up, mid, hi)
            lo = np.where(up, lo, mid)
        return hi

    def logpdf(self, x):
        with np.errstate(divide="ignore"):
            return np.log(self.scale) + np.log(self.pdf(x))

    def dlogpdf(self, x):
        if self._dlog is None:
            raise UnsupportedOperation("segment has no analytic score")
        return self._dlog(x)


class Piecewise1D(Density1D):
    """Density assembled from non-overlapping segments; zero between them."""

    def __init__(self, segments: Sequence[_Segment], recipe: dict | None = None, info=None):
        segs = sorted(segments, key=lambda s: s.lo)
        for s0, s1 in zip(segs, segs[1:]):
            if s1.lo < s0.hi:
                raise ContractViolation("segments overlap")
        self.segments = tuple(segs)
        self._lo = np.array([s.lo for s in segs])
        self._hi = np.array([s.hi for s in segs])
        self._cum = np.concatenate([[0.0], np.cumsum([s.mass() for s in segs])])
        self.recipe = recipe
        self.info = info or {}

    def total_mass(self):
        return float(self._cum[-1])

    def _locate(self, x):
        k = np.searchsorted(self._lo, x, side="right") - 1
        inside = (k >= 0) & (x < self._hi[np.clip(k, 0, None)])
        return k, inside

    def _apply(self, x, fn, fill):
        out = np.full(x.shape, fill, dtype=float)
        k, inside = self._locate(x)
        for j in np.unique(k[inside]):
            sel = inside & (k == j)
            out[sel] = fn(self.segments[j], x[sel])
        return out

    def _logpdf1(self, x):
        return self._apply(x, lambda s, v: s.logpdf(v), -np.inf)

    def _dlogpdf1(self, x):
        k, inside = self._locate(x)
        if not np.all(inside):
            raise NonSmoothPointError("score undefined outside the support")
        return self._apply(x, lambda s, v: s.dlogpdf(v), np.nan)

    def _cdf1(self, x):
        k = np.searchsorted(self._lo, x, side="right") - 1
        out = np.zeros(x.shape)
        for j in np.unique(k[k >= 0]):
            sel = k == j
            s = self.segments[j]
            out[sel] = self._cum[j] + s.cdf_local(np.minimum(x[sel], s.hi))
        return out

    def _sf1(self, x):
        k = np.searchsorted(self._lo, x, side="right") - 1
        out = np.full(x.shape, self._cum[-1])
        for j in np.unique(k[k >= 0]):
            sel = k == j
            s = self.segments[j]
            if isinstance(s, GaussianSegment) and np.isinf(s.hi):
                out[sel] = s.scale * gauss_interval_mass((x[sel] - s.mu) / s.sigma, np.inf)
            else:
                out[sel] = self._cum[-1] - self._cum[j] - s.cdf_local(np.minimum(x[sel], s.hi))
        return out

    def _quantile1(self, u):
        m = len(self.segments)
        k = np.minimum(np.searchsorted(self._cum[1:], u - PLATEAU_TOL, side="left"), m - 1)
        out = np.empty(u.shape)
        for j in np.unique(k):
            sel = k == j
            seg = self.segments[j]
            rem = np.clip(u[sel] - self._cum[j], 0.0, self._cum[j + 1] - self._cum[j])
            at_end = np.abs(u[sel] - self._cum[j + 1]) <= PLATEAU_TOL
            out[sel] = np.where(at_end & np.isfinite(seg.hi), seg.hi, seg.inv_local(rem))
        return out

    def support_intervals(self):
        out = []
        for s in self.segments:
            if s.mass() <= 0:
                continue
            if out and out[-1][1] == s.lo:
                out[-1] = (out[-1][0], s.hi)
            else:
                out.append((s.lo, s.hi))
        return out

    def kinks(self):
        pts = np.unique(np.concatenate([self._lo, self._hi]))
        pts = pts[np.isfinite(pts)]
        extra = np.asarray(self.info.get("kinks", []), dtype=float)
        return np.unique(np.concatenate([pts, extra]))

    def to_dict(self):
        if self.recipe is None:
            raise UnsupportedOperation("this piecewise density has no serializable recipe")
        return {"schema": DIST_SCHEMA, **self.recipe}


def twin_bump_target() -> Piecewise1D:
    """Density 3/4 * min((|x|-1)^2, (|x|-3)^2) on 1 <= |x| <= 3.

    Two symmetric bumps peaking at |x| = 2, vanishing at |x| in {1, 3},
    separated by the gap (-1, 1).
    """

    def rising(c):
        return lambda x: 0.75 * (x - c) ** 2

    def score(c):
        return lambda x: 2.0 / (x - c)

    segs = [
        FunctionSegment(-3.0, -2.0, rising(-3.0), score(-3.0), panels=1),
        FunctionSegment(-2.0, -1.0, rising(-1.0), score(-1.0), panels=1),
        FunctionSegment(1.0, 2.0, rising(1.0), score(1.0), panels=1),
        FunctionSegment(2.0, 3.0, rising(3.0), score(3.0), panels=1),
    ]
    return Piecewise1D(segs, recipe={"kind": "twin_bump"})


@dataclass(frozen=True, eq=False)
class Truncated1D(Density1D):
    """A 1D density restricted to [lo, hi) and renormalized."""

    base: Density1D
    lo: float
    hi: float

    def __post_init__(self):
        if not (self.hi > self.lo):
            raise ContractViolation("truncation interval is empty")
        mass = float(self.base.cdf(self.hi) - self.base.cdf(self.lo))
        if mass <= 0:
            raise ContractViolation("truncation interval carries no mass")
        object.__setattr__(self, "_mass", mass)
        object.__setattr__(self, "_flo", float(self.base.cdf(self.lo)))

    def _inside(self, x):
        return (x >= self.lo) & (x < self.hi)

    def _logpdf1(self, x):
        out = self.base.log_density(x) - np.log(self._mass)
        return np.where(self._inside(x), out, -np.inf)

    def _dlogpdf1(self, x):
        if not np.all(self._inside(x)):
            raise NonSmoothPointError("score undefined outside the truncation interval")
        return np.asarray(self.base.grad_log_density(x), dtype=float)

    def _cdf1(self, x):
        y = np.clip(x, self.lo, self.hi)
        return (self.base.cdf(y) - self._flo) / self._mass

    def _quantile1(self, u):
        return np.clip(self.base.quantile(self._flo + u * self._mass), self.lo, self.hi)

    def support_intervals(self):
        return [(self.lo, self.hi)]

    def kinks(self):
        return np.array([self.lo, self.hi])

    def to_dict(self):
        return {
            "schema": DIST_SCHEMA,
            "kind": "truncated",
            "base": self.base.to_dict(),
            "lo": self.lo,
            "hi": self.hi,
        }


def bimodal_target(lo: float = -4.0, hi: float = 4.0) -> Truncated1D:
    """Asymmetric two-mode benchmark on a compact interval."""
    mix = MixtureGaussianD(
        [0.4, 0.6],
        [GaussianD([-1.6], [[0.55**2]]), GaussianD([1.4], [[0.8**2]])],
    )
    return Truncated1D(mix, lo, hi)


# ---------------------------------------------------------------------------
# Radial, product and auxiliary densities
# ---------------------------------------------------------------------------


def _log_sphere_area(d: int) -> float:
    """log of the surface area of the unit sphere in R^d."""
    return float(np.log(2.0) + 0.5 * d * np.log(np.pi) - special.gammaln(0.5 * d))


@dataclass(frozen=True, eq=False)
class RadialDensity(Density):
    """Density proportional to exp(-|z|^tau), optionally with a flat core.

    ``kind="flat_core"`` replaces the density inside radius d^(1/tau) by the
    constant exp(-d), which is the value on the boundary sphere.
    """

    d: int
    tau: float
    kind: str = "pure"

    def __post_init__(self):
        if int(self.d) < 1 or not (0.0 < self.tau < 1.0):
            raise ContractViolation("need d >= 1 and tau in (0, 1)")
        if self.kind not in ("pure", "flat_core"):
            raise ContractViolation(f"unknown radial kind {self.kind!r}")
        object.__setattr__(self, "d", int(self.d))

    @property
    def dim(self):
        return self.d

    @property
    def core_radius(self) -> float:
        return float(self.d ** (1.0 / self.tau))

    @cached_property
    def _log_radial_parts(self):
        """(log core mass, log tail mass) of the unnormalized radial integral."""
        d, tau = self.d, self.tau
        a = d / tau
        if self.kind == "pure":
            return -np.inf, float(special.gammaln(a) - np.log(tau))
        # substitution s = r^tau turns the tail into an upper incomplete gamma
        log_core = -d + (d / tau) * np.log(d) - np.log(d)
        log_tail = float(special.gammaln(a) + np.log(special.gammaincc(a, d)) - np.log(tau))
        return float(log_core), log_tail

    @cached_property
    def log_norm(self) -> float:
        core, tail = self._log_radial_parts
        return _log_sphere_area(self.d) + float(np.logaddexp(core, tail))

    def log_unnormalized(self, r):
        r = np.asarray(r, dtype=float)
        val = -(r**self.tau)
        if self.kind == "flat_core":
            val = np.where(r <= self.core_radius, -float(self.d), val)
        return val

    def _log_density(self, Z):
        r = np.linalg.norm(Z, axis=1)
        return self.log_unnormalized(r) - self.log_norm

    def nonsmooth_distance(self, Z):
        r = np.linalg.norm(np.asarray(Z, dtype=float), axis=1)
        if self.kind == "pure":
            return r
        return np.abs(r - self.core_radius)

    def _grad_log_density(self, Z):
        r = np.linalg.norm(Z, axis=1)
        if np.any(self.nonsmooth_distance(Z) <= SMOOTH_MARGIN * (1.0 + r)):
            raise NonSmoothPointError("score undefined at the origin or the core boundary")
        G = -self.tau * (r ** (self.tau - 2.0))[:, None] * Z
        if self.kind == "flat_core":
            G[r < self.core_radius] = 0.0
        return G

    def radial_cdf(self, r):
        """P(|Z| <= r)."""
        r = np.asarray(r, dtype=float)
        a = self.d / self.tau
        core, tail = self._log_radial_parts
        total = np.logaddexp(core, tail)
        s = r**self.tau
        if self.kind == "pure":
            return special.gammainc(a, s)
        R = self.core_radius
        inside = np.exp(core - total) * np.minimum(r / R, 1.0) ** self.d
        outside_mass = np.exp(tail - total)
        tail_frac = np.where(
            r > R,
            1.0 - special.gammaincc(a, np.maximum(s, self.d)) / special.gammaincc(a, self.d),
            0.0,
        )
        return inside + outside_mass * tail_frac

    def _sample_radius(self, rng, n):
        a = self.d / self.tau
        U = rng.uniform(size=n)
        if self.kind == "pure":
            return special.gammaincinv(a, U) ** (1.0 / self.tau)
        core, tail = self._log_radial_parts
        p_core = float(np.exp(core - np.logaddexp(core, tail)))
        in_core = rng.uniform(size=n) < p_core
        r_core = self.core_radius * U ** (1.0 / self.d)
        s_tail = special.gammainccinv(a, U * special.gammaincc(a, self.d))
        return np.where(in_core, r_core, s_tail ** (1.0 / self.tau))

    def _sample(self, rng, n):
        r = self._sample_radius(rng, n)
        G = rng.standard_normal((n, self.d))
        G /= np.linalg.norm(G, axis=1, keepdims=True)
        return G * r[:, None]

    def to_dict(self):
        return {"schema": DIST_SCHEMA, "kind": "radial", "d": self.d, "tau": self.tau, "variant": self.kind}


@dataclass(frozen=True, eq=False)
class PositiveFunction1D(Density1D):
    """Unnormalized positive function given by its log and log-derivative.

    Used as the coordinate factor ``g`` of product densities when ``g`` need
    not integrate to one.  Evaluation outside the open ``domain`` raises
    ``DomainError``.
    """

    log_fn: Callable
    dlog_fn: Callable
    domain: tuple = (-np.inf, np.inf)
    name: str = "custom"

    def _check(self, x):
        lo, hi = self.domain
        if np.any((x <= lo) | (x >= hi)):
            raise DomainError(f"{self.name} is not positive at {x[(x <= lo) | (x >= hi)][0]!r}")

    def _logpdf1(self, x):
        self._check(x)
        return np.asarray(self.log_fn(x), dtype=float)

    def _dlogpdf1(self, x):
        self._check(x)
        return np.asarray(self.dlog_fn(x), dtype=float)

    def _cdf1(self, x):
        raise UnsupportedOperation("positive functions carry no CDF")

    def _quantile1(self, u):
        raise UnsupportedOperation("positive functions carry no quantile")

    def support_intervals(self):
        return [tuple(self.domain)]


def identity_function() -> PositiveFunction1D:
    """g(x) = x on (0, inf)."""
    return PositiveFunction1D(np.log, lambda x: 1.0 / x, (0.0, np.inf), "identity")


@dataclass(frozen=True, eq=False)
class ProductDensity1DPow(Density):
    """Density on R^d proportional to prod_i g(z_i)^r."""

    g: Density1D
    r: float
    d: int

    def __post_init__(self):
        if self.r <= 0 or int(self.d) < 1:
            raise ContractViolation("need r > 0 and d >= 1")
        object.__setattr__(self, "d", int(self.d))

    @property
    def dim(self):
        return self.d

    @cached_property
    def log_norm(self) -> float:
        """d * log of the integral of g^r over its support."""
        total = 0.0
        for lo, hi in self.g.support_intervals():
            val, _ = integrate.quad(
                lambda x: float(np.exp(self.r * self.g.log_density(x))), lo, hi, limit=200
            )
            total += val
        if not np.isfinite(total) or total <= 0:
            raise DomainError("g^r is not integrable")
        return self.d * float(np.log(total))

    def coordinate_score(self, X):
        """Elementwise g'(x)/g(x)."""
        X = np.asarray(X, dtype=float)
        return np.asarray(self.g.grad_log_density(X.reshape(-1)), dtype=float).reshape(X.shape)

    def _log_density(self, Z):
        vals = np.asarray(self.g.log_density(Z.reshape(-1)), dtype=float).reshape(Z.shape)
        return self.r * vals.sum(axis=1) - self.log_norm

    def _grad_log_density(self, Z):
        return self.r * self.coordinate_score(Z)

    def _sample(self, rng, n):
        if self.r != 1.0:
            raise UnsupportedOperation("sampling only implemented for r = 1")
        return self.g._sample(rng, n * self.d).reshape(n, self.d)

    def to_dict(self):
        return {
            "schema": DIST_SCHEMA,
            "kind": "product_pow",
            "g": self.g.to_dict(),
            "r": self.r,
            "d": self.d,
        }


@dataclass(frozen=True, eq=False)
class StudentT(Density):
    """Multivariate Student-t with location ``loc``, scale matrix and ``df``."""

    loc: np.ndarray
    scale: np.ndarray
    df: float = 5.0

    def __post_init__(self):
        loc = np.atleast_1d(np.asarray(self.loc, dtype=float))
        S = np.atleast_2d(np.asarray(self.scale, dtype=float))
        if S.shape != (loc.size, loc.size) or self.df <= 0:
            raise ContractViolation("bad Student-t parameters")
        object.__setattr__(self, "loc", loc)
        object.__setattr__(self, "scale", S)
        object.__setattr__(self, "_chol", np.linalg.cholesky(S))

    @property
    def dim(self):
        return self.loc.size

    def _log_density(self, Z):
        from scipy.linalg import solve_triangular

        d, nu = self.dim, self.df
        W = solve_triangular(self._chol, (Z - self.loc).T, lower=True).T
        q = np.sum(W * W, axis=1)
        logdet = 2.0 * np.sum(np.log(np.diag(self._chol)))
        return (
            special.gammaln(0.5 * (nu + d))
            - special.gammaln(0.5 * nu)
            - 0.5 * d * np.log(nu * np.pi)
            - 0.5 * logdet
            - 0.5 * (nu + d) * np.log1p(q / nu)
        )

    def _grad_log_density(self, Z):
        d, nu = self.dim, self.df
        P = np.linalg.inv(self.scale)
        D = Z - self.loc
        q = np.einsum("ni,ij,nj->n", D, P, D)
        return -((nu + d) / (nu + q))[:, None] * (D @ P)

    def _sample(self, rng, n):
        g = rng.standard_normal((n, self.dim)) @ self._chol.T
        w = rng.chisquare(self.df, size=n) / self.df
        return self.loc + g / np.sqrt(w)[:, None]

    def to_dict(self):
        return {
            "schema": DIST_SCHEMA,
            "kind": "student_t",
            "loc": self.loc.tolist(),
            "scale": self.scale.tolist(),
            "df": self.df,
        }


# ---------------------------------------------------------------------------
# Functional API
# ---------------------------------------------------------------------------


def log_density(dist: Density, z):
    return dist.log_density(z)


def grad_log_density(dist: Density, z):
    return dist.grad_log_density(z)


def cdf_1d(dist: Density, z):
    return dist.cdf(z)


def quantile_1d(dist: Density, u):
    return dist.quantile(u)


def sample(dist: Density, rng_seed, n: int):
    return dist.sample(rng_seed, n)


# ---------------------------------------------------------------------------
# Full-support relaxation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RelaxationInfo:
    level: float  # density threshold 2 / (total support length)
    low_mass: float  # mass of the region where 0 < p < level
    n_intervals: int
    gap_values: tuple
    tail_mass: float
    tail_edge_value: float
    continuity_kept: bool
    l1_to_original: float  # eps * low_mass by construction


def _level_crossings(pdf, lo, hi, level, probes=4097):
    x = np.linspace(lo, hi, probes)
    v = pdf(x) - level
    roots = []
    for i in np.nonzero(np.sign(v[:-1]) * np.sign(v[1:]) < 0)[0]:
        roots.append(optimize.brentq(lambda t: float(pdf(np.array([t]))[0] - level), x[i], x[i + 1], xtol=1e-15))
    return roots


def full_support_relaxation(p: Density1D, eps: float) -> Piecewise1D:
    """Perturb a density with bounded interval-union support into one with full support.

    Mass where ``p`` is below the level ``2/L`` (``L`` the total support
    length) is shrunk by the factor ``1 - eps/2``; the freed mass ``eps*gamma/2``
    is spread evenly over the ``n-1`` gaps and two Gaussian tails.  The
    result differs from ``p`` by exactly ``eps*gamma`` in l1.

    Each tail is a Gaussian restricted to the half-line beyond the support.
    Its scale is chosen so that its value at the support edge equals the
    gap filling level (capped at ``eps/2``), and its location so that it
    carries the required mass.
    """
    if not (0.0 < eps < 1.0):
        raise ContractViolation("eps must lie in (0, 1)")
    intervals = p.support_intervals()
    if any(not (np.isfinite(lo) and np.isfinite(hi)) for lo, hi in intervals):
        raise ContractViolation("full_support_relaxation needs bounded support intervals")
    n = len(intervals)
    length = sum(hi - lo for lo, hi in intervals)
    level = 2.0 / length
    pdf = lambda x: p.pdf(x)  # noqa: E731
    score = None
    try:
        p._dlogpdf1(np.array([0.5 * (intervals[0][0] + intervals[0][1])]))
        score = p._dlogpdf1
    except Exception:  # noqa: BLE001 - score is optional
        score = None

    kinks = p.kinks()
    segments: list[_Segment] = []
    low_mass = 0.0
    for lo, hi in intervals:
        cuts = [lo, hi] + [k for k in kinks if lo < k < hi]
        cuts = sorted(set(cuts))
        pieces = []
        for a, b in zip(cuts[:-1], cuts[1:]):
            sub = [a] + _level_crossings(pdf, a, b, level) + [b]
            pieces.extend(zip(sub[:-1], sub[1:]))
        for a, b in pieces:
            mid = 0.5 * (a + b)
            below = float(pdf(np.array([mid]))[0]) < level
            seg = FunctionSegment(a, b, pdf, score, scale=1.0)
            if below:
                low_mass += seg.mass()
                seg = FunctionSegment(a, b, pdf, score, scale=1.0 - 0.5 * eps)
            segments.append(seg)

    gap_values = []
    for (l0, r0), (l1, _r1) in zip(intervals, intervals[1:]):
        value = eps * low_mass / (2.0 * n * (l1 - r0))
        gap_values.append(value)
        segments.append(ConstantSegment(r0, l1, value))

    tail_mass = eps * low_mass / (4.0 * n)
    edge = min(gap_values) if gap_values else eps * low_mass / (2.0 * n * length)
    edge_value = min(edge, 0.5 * eps)
    c = float(special.ndtri(tail_mass))  # standardized edge position, negative
    sigma = float(np.exp(-0.5 * c * c) / np.sqrt(2.0 * np.pi) / edge_value)
    left_edge, right_edge = intervals[0][0], intervals[-1][1]
    segments.append(GaussianSegment(-np.inf, left_edge, left_edge - c * sigma, sigma))
    segments.append(GaussianSegment(right_edge, np.inf, right_edge + c * sigma, sigma))

    info = RelaxationInfo(
        level=level,
        low_mass=low_mass,
        n_intervals=n,
        gap_values=tuple(gap_values),
        tail_mass=tail_mass,
        tail_edge_value=edge_value,
        continuity_kept=edge_value == edge,
        l1_to_original=eps * low_mass,
    )
    recipe = None
    try:
        recipe = {"kind": "relaxed", "base": p.to_dict(), "eps": eps}
    except UnsupportedOperation:
        recipe = None
    out = Piecewise1D(segments, recipe=recipe, info={"kinks": list(kinks)})
    out.relaxation = info
    return out
