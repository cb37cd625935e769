"""l1 / total-variation estimators and numerical sanity checks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .densities import Density, StudentT
from .errors import CoverageError, FlowcapError
from .flows import FlowStack, Pushforward, as_stack

DEFAULT_GRID = 2**14 + 1
COVERAGE_TOL = 1e-6


@dataclass(frozen=True)
class L1Estimate:
    value: float
    method: str
    stderr: float | None = None
    grid_spec: tuple | None = None
    tail_remainder: float = 0.0
    refinement_delta: float | None = None

    @property
    def tv(self) -> float:
        return 0.5 * self.value

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "tv": self.tv,
            "method": self.method,
            "stderr": self.stderr,
            "grid_spec": list(self.grid_spec) if self.grid_spec else None,
            "tail_remainder": self.tail_remainder,
            "refinement_delta": self.refinement_delta,
        }


def _kinks(dist) -> np.ndarray:
    k = getattr(dist, "kinks", None)
    if k is None:
        return np.empty(0)
    k = np.asarray(k(), dtype=float).reshape(-1)
    return k[np.isfinite(k)]


def _window(dist, level=1e-10):
    u = np.array([level, 1.0 - level])
    lo, hi = np.asarray(dist.quantile(u), dtype=float)
    return float(lo), float(hi)


def _grid_with_kinks(lo, hi, n, kinks):
    x = np.linspace(lo, hi, n)
    k = kinks[(kinks > lo) & (kinks < hi)]
    # bracket every jump tightly; a kink reported a few ulps off then costs ~1e-12
    pad = 1e-12 * (1.0 + np.abs(k))
    return np.unique(np.concatenate([x, k, k - pad, k + pad]))


def _tail_mass(dist, lo, hi) -> float:
    return float(dist.cdf(lo)) + float(dist.sf(hi))


def l1_grid_1d(p: Density, q: Density, lo=None, hi=None, n: int = DEFAULT_GRID) -> L1Estimate:
    """Trapezoid estimate of the l1 distance between two 1D densities.

    Breakpoints of both densities are inserted into the grid (together
    with their left neighbours) so jumps do not smear.  Mass outside the
    window is added as a remainder: exactly when one density has none
    there, as the upper bound ``tail_p + tail_q`` otherwise.
    """
    if n < 1001:
        raise ValueError("grid needs at least 1001 points")
    if lo is None or hi is None:
        wp, wq = _window(p), _window(q)
        lo = min(wp[0], wq[0]) if lo is None else lo
        hi = max(wp[1], wq[1]) if hi is None else hi
    tp, tq = _tail_mass(p, lo, hi), _tail_mass(q, lo, hi)
    exact_tail = min(tp, tq) <= 1e-14
    if not exact_tail and max(tp, tq) > COVERAGE_TOL:
        raise CoverageError(
            f"window [{lo}, {hi}] leaves mass {max(tp, tq):.3g} outside", tail_mass=max(tp, tq)
        )
    remainder = max(tp, tq) if exact_tail else tp + tq
    kinks = np.concatenate([_kinks(p), _kinks(q)])

    def integrate_on(m):
        x = _grid_with_kinks(lo, hi, m, kinks)
        diff = np.abs(np.asarray(p.density(x)) - np.asarray(q.density(x)))
        return float(np.trapezoid(diff, x))

    fine = integrate_on(n)
    coarse = integrate_on((n + 1) // 2)
    return L1Estimate(
        value=fine + remainder,
        method="grid",
        grid_spec=(float(lo), float(hi), int(n)),
        tail_remainder=remainder,
        refinement_delta=abs(fine - coarse),
    )


def tv_grid_1d(p, q, **kw) -> float:
    return l1_grid_1d(p, q, **kw).tv


def l1_pushforward_mc(f, q: Density, p: Density, n: int = 100_000, seed=0) -> L1Estimate:
    """Monte Carlo estimate of ||f#q - p||_1 = E_q |det J_f p(f(z)) / q(z) - 1|."""
    stack = as_stack(f) if f is not None else FlowStack((), q.dim)
    rng = np.random.default_rng(seed)
    Z = q._sample(rng, int(n)).reshape(int(n), q.dim)
    Y, logdet = stack._forward(Z)
    log_ratio = p._log_density(Y) + logdet - q._log_density(Z)
    vals = np.abs(np.expm1(log_ratio))
    return L1Estimate(
        value=float(vals.mean()),
        method="monte_carlo",
        stderr=float(vals.std(ddof=1) / np.sqrt(n)),
    )


def l1_mc(p: Density, q: Density, n: int = 100_000, seed=0) -> L1Estimate:
    return l1_pushforward_mc(None, q, p, n, seed)


# ---------------------------------------------------------------------------
# Check harness
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    threshold: float
    detail: str = ""


@dataclass
class CheckReport:
    results: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def __getitem__(self, name) -> CheckResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self):
        return {
            "passed": self.passed,
            "checks": [r.__dict__ for r in self.results],
        }


def _normalization_1d(dist) -> float:
    intervals = dist.support_intervals() if hasattr(dist, "support_intervals") else [(-np.inf, np.inf)]
    kinks = _kinks(dist)
    total = 0.0
    for lo, hi in intervals:
        if np.isfinite(lo) and np.isfinite(hi):
            pts = [k for k in kinks if lo < k < hi]
            val, _ = integrate.quad(lambda x: float(dist.density(x)), lo, hi, points=pts or None, limit=500)
        else:
            # split an unbounded range at kinks and at the median
            cuts = sorted({*kinks.tolist(), float(dist.quantile(0.5))})
            cuts = [c for c in cuts if lo < c < hi]
            edges = [lo, *cuts, hi]
            val = 0.0
            for a, b in zip(edges[:-1], edges[1:]):
                v, _ = integrate.quad(lambda x: float(dist.density(x)), a, b, limit=500)
                val += v
        total += val
    return total


def _normalization_mc(dist, rng, n=200_000):
    try:
        pilot = dist._sample(rng, 4000)
        loc = pilot.mean(axis=0)
        cov = np.cov(pilot.T).reshape(dist.dim, dist.dim) * 2.0 + 1e-6 * np.eye(dist.dim)
    except FlowcapError:
        loc, cov = np.zeros(dist.dim), 4.0 * np.eye(dist.dim)
    prop = StudentT(loc, cov, df=5.0)
    Z = prop._sample(rng, n)
    w = np.exp(dist._log_density(Z) - prop._log_density(Z))
    return float(w.mean()), float(w.std(ddof=1) / np.sqrt(n))


def gradient_relative_errors(dist: Density, Z: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Per-point ||analytic - central difference|| / max(1, ||analytic||)."""
    Z = np.asarray(Z, dtype=float).reshape(-1, dist.dim)
    G = dist._grad_log_density(Z)
    fd = np.empty_like(G)
    for i in range(dist.dim):
        e = np.zeros(dist.dim)
        e[i] = h
        fd[:, i] = (dist._log_density(Z + e) - dist._log_density(Z - e)) / (2 * h)
    return np.linalg.norm(G - fd, axis=1) / np.maximum(1.0, np.linalg.norm(G, axis=1))


def _smooth_points(dist, rng, n, margin=1e-3):
    Z = dist._sample(rng, 4 * n)
    keep = dist.nonsmooth_distance(Z) > margin * (1.0 + np.linalg.norm(Z, axis=1))
    return Z[keep][:n]


def check_suite(dist: Density, f=None, seed=0, grad_tol=1e-5, norm_tol=1e-6, roundtrip_tol=1e-9) -> CheckReport:
    """Normalization, score, round-trip and pushforward-normalization checks."""
    rng = np.random.default_rng(seed)
    report = CheckReport()

    def record(name, fn, threshold):
        try:
            passed, measured, detail = fn()
        except FlowcapError as exc:
            report.results.append(CheckResult(name, False, float("nan"), threshold, f"{type(exc).__name__}: {exc}"))
            return
        report.results.append(CheckResult(name, bool(passed), float(measured), threshold, detail))

    def normalization(target, tol):
        def run():
            if target.dim == 1:
                total = _normalization_1d(target)
                return abs(total - 1.0) <= tol, total, "quadrature"
            est, se = _normalization_mc(target, rng)
            return abs(est - 1.0) <= 3.0 * se + 1e-3, est, f"monte carlo, stderr {se:.2e}"

        return run

    record("normalization", normalization(dist, norm_tol), norm_tol)

    def gradient():
        Z = _smooth_points(dist, rng, 100)
        err = gradient_relative_errors(dist, Z)
        return float(err.max()) < grad_tol, float(err.max()), f"{len(Z)} points"

    record("gradient", gradient, grad_tol)

    if f is not None:
        stack = as_stack(f)

        def roundtrip():
            Z = dist._sample(rng, 1000)
            back = stack._inverse(stack._forward(Z)[0])
            err = np.linalg.norm(back - Z, axis=1) / (1.0 + np.linalg.norm(Z, axis=1))
            return float(err.max()) < roundtrip_tol, float(err.max()), ""

        record("roundtrip", roundtrip, roundtrip_tol)
        push = Pushforward(dist, stack)
        record("pushforward_normalization", normalization(push, 1e-4), 1e-4)

        def push_gradient():
            Z = _smooth_points(dist, rng, 400)
            far = stack.kink_distance(Z) > 1e-3
            Y = stack._forward(Z[far][:100])[0]
            err = gradient_relative_errors(push, Y)
            return float(err.max()) < grad_tol, float(err.max()), f"{len(Y)} points"

        record("pushforward_gradient", push_gradient, grad_tol)
    return report


__all__ = [
    "L1Estimate",
    "l1_grid_1d",
    "tv_grid_1d",
    "l1_pushforward_mc",
    "l1_mc",
    "check_suite",
    "CheckReport",
    "gradient_relative_errors",
]
