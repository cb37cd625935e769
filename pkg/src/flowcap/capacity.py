"""How much can one flow layer reduce the l1 distance to a target?

``lhat(p, f) = int | |det J_f(z)| p(f(z)) - p(z) | dz`` bounds the progress
any single layer ``f`` makes towards ``p``, whatever the current input.
Dividing the initial gap by a uniform bound on ``lhat`` over a family gives
a lower bound on the depth needed from that family.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, special

from .densities import Density, StudentT
from .errors import ContractViolation, NumericRangeError, ProposalCoverageError, UnboundedDepthError
from .flows import FlowStack, as_stack

MC_CHUNK = 50_000


@dataclass(frozen=True)
class LhatEstimate:
    value: float
    stderr: float
    n: int

    def __iter__(self):
        return iter((self.value, self.stderr))


def _is_identity(stack: FlowStack) -> bool:
    return len(stack) == 0


def default_proposal(p: Density, stack: FlowStack, rng, n_pilot: int = 4000, df: float = 5.0) -> StudentT:
    """Student-t fitted to samples of p and of f^{-1}(p), with inflated scale.

    ``|det J_f| p(f(z))`` is the density of ``f^{-1}(X)`` for ``X ~ p``, so
    the pooled cloud covers both halves of the integrand.
    """
    X = p._sample(rng, n_pilot).reshape(n_pilot, p.dim)
    pooled = np.concatenate([X, stack._inverse(X)], axis=0)
    loc = pooled.mean(axis=0)
    cov = np.atleast_2d(np.cov(pooled.T)) * 1.5
    cov += 1e-9 * max(1.0, np.trace(cov) / p.dim) * np.eye(p.dim)
    return StudentT(loc, cov, df=df)


def lhat_monte_carlo(p: Density, f, proposal: Density | None = None, n: int = 200_000, seed=0) -> LhatEstimate:
    """Importance-sampling estimate of lhat(p, f) with its standard error.

    The sample is drawn in fixed chunks from independently spawned streams,
    so results depend only on ``seed`` and ``n``.
    """
    stack = as_stack(f) if f is not None else FlowStack((), p.dim)
    if _is_identity(stack):
        return LhatEstimate(0.0, 0.0, int(n))
    root = np.random.SeedSequence(seed)
    pilot_seq, sample_seq = root.spawn(2)
    if proposal is None:
        proposal = default_proposal(p, stack, np.random.default_rng(pilot_seq))
    n = int(n)
    n_chunks = -(-n // MC_CHUNK)
    values = []
    for k, child in enumerate(sample_seq.spawn(n_chunks)):
        m = min(MC_CHUNK, n - k * MC_CHUNK)
        rng = np.random.default_rng(child)
        Z = proposal._sample(rng, m).reshape(m, p.dim)
        Y, logdet = stack._forward(Z)
        log_a = p._log_density(Y) + logdet
        log_b = p._log_density(Z)
        hi = np.maximum(log_a, log_b)
        lo = np.minimum(log_a, log_b)
        with np.errstate(invalid="ignore", divide="ignore"):
            # |a - b| = e^hi (1 - e^(lo - hi)); zero where both vanish
            log_diff = hi + np.log(-np.expm1(lo - hi))
        log_diff = np.where(np.isneginf(hi), -np.inf, log_diff)
        log_prop = proposal._log_density(Z)
        if np.any(np.isneginf(log_prop) & np.isfinite(log_diff)):
            raise ProposalCoverageError("proposal density vanishes where the integrand does not")
        w = np.exp(log_diff - log_prop)
        if not np.all(np.isfinite(w)):
            raise ProposalCoverageError("importance weights overflow; the proposal tails are too light")
        values.append(w)
    w = np.concatenate(values)
    return LhatEstimate(float(w.mean()), float(w.std(ddof=1) / np.sqrt(n)), n)


# ---------------------------------------------------------------------------
# Householder flows near a standard Gaussian
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HouseholderBound:
    bound: float  # (lmax / lmin)^(d/2) - 1
    tight: float  # (lmax^(d/2) - lmin^(d/2)) / sqrt(det)


def householder_lhat_bound(cov) -> HouseholderBound:
    """Bound on lhat(N(0, cov), f) valid for every reflection f."""
    S = np.atleast_2d(np.asarray(cov, dtype=float))
    if S.shape[0] != S.shape[1] or np.abs(S - S.T).max() > 1e-12 * max(1.0, np.abs(S).max()):
        raise ContractViolation("covariance must be a symmetric square matrix")
    lam = np.linalg.eigvalsh(0.5 * (S + S.T))
    if lam[0] <= 0:
        raise ContractViolation("covariance must be positive definite")
    d = S.shape[0]
    log_max, log_min = np.log(lam[-1]), np.log(lam[0])
    half = 0.5 * d
    bound = float(np.expm1(half * (log_max - log_min)))
    log_sqrt_det = 0.5 * np.sum(np.log(lam))
    tight = float(np.exp(half * log_max - log_sqrt_det) * -np.expm1(half * (log_min - log_max)))
    return HouseholderBound(bound, tight)


def householder_perturbation(d: int, kappa: float) -> np.ndarray:
    """Covariance I + S with every |S_ij| = d^-(2 + kappa), the extreme allowed case."""
    return np.eye(d) + d ** -(2.0 + kappa) * np.ones((d, d))


# ---------------------------------------------------------------------------
# Local planar flows against the flat-core target
# ---------------------------------------------------------------------------


def _log_lower_gamma_regularized(a: float, x: float) -> float:
    """log P(a, x) that stays finite when P underflows (series for x < a + 1)."""
    if x <= 0:
        return -np.inf
    if x >= a + 1.0:
        return float(np.log(special.gammainc(a, x)))
    # P(a, x) = x^a e^-x / Gamma(a + 1) * sum_k x^k / ((a + 1) ... (a + k))
    term, total = 1.0, 1.0
    for k in range(1, 10_000):
        term *= x / (a + k)
        total += term
        if term < 1e-17 * total:
            break
    return float(a * np.log(x) - x - special.gammaln(a + 1.0) + np.log(total))


def _log_tail_ratio(d: int, tau: float) -> float:
    """log of int_d^inf e^(-r^tau) r^(d-2) log(1+r) dr / int_0^inf e^(-r^tau) r^(d-1) dr.

    With s = r^tau both integrals become gamma-type; the numerator is
    integrated after dividing out its peak value.
    """
    a = (d - 1) / tau
    lo = float(d) ** tau
    log_norm = special.gammaln(d / tau)

    def log_integrand(s):
        return -s + (a - 1.0) * np.log(s) + np.log(np.log1p(s ** (1.0 / tau)))

    peak = max(lo, a - 1.0)
    res = optimize.minimize_scalar(lambda s: -log_integrand(s), bounds=(lo, 2.0 * peak + 10.0), method="bounded")
    s_star = float(res.x)
    g_max = max(log_integrand(s_star), log_integrand(lo))
    width = np.sqrt(max(a, 1.0))
    hi = s_star + 60.0 * width + 60.0
    pts = [s for s in (s_star - 5 * width, s_star, s_star + 5 * width) if lo < s < hi]
    val, _ = integrate.quad(lambda s: np.exp(log_integrand(s) - g_max), lo, hi, points=pts or None, limit=500)
    tail, _ = integrate.quad(lambda s: np.exp(log_integrand(s) - g_max), hi, np.inf, limit=200)
    total = val + tail
    if not (np.isfinite(total) and total > 0):
        raise NumericRangeError(f"tail integral not representable at d={d}, tau={tau}")
    return float(g_max + np.log(total) - log_norm)


def sphere_slice_factor(d: int) -> float:
    """Gamma(d/2) / (sqrt(pi) Gamma((d-1)/2)), the reciprocal of int_0^pi sin^(d-2)."""
    return float(np.exp(special.gammaln(0.5 * d) - special.gammaln(0.5 * (d - 1)) - 0.5 * np.log(np.pi)))


@dataclass(frozen=True)
class LocalPlanarTerms:
    term1: float
    term2: float

    def __iter__(self):
        return iter((self.term1, self.term2))


def local_planar_terms(d: int, tau: float) -> LocalPlanarTerms:
    """The two pieces of int ||w|| p1(z) / (1 + |w.z|) dz for p1 ~ exp(-|z|^tau), at b = 0.

    ``term1`` is the mass of p1 inside radius d.  ``term2`` bounds the
    rest: the angular integral outside radius d is at most
    2 log(1 + r) / r, and the sphere slice factor is kept exact.
    """
    if int(d) != d or d <= 2:
        raise ContractViolation("local planar terms need an integer d > 2")
    if not 0.0 < tau < 1.0:
        raise ContractViolation("tau must lie in (0, 1)")
    d = int(d)
    term1 = float(np.exp(_log_lower_gamma_regularized(d / tau, float(d) ** tau)))
    log_term2 = np.log(2.0 * sphere_slice_factor(d)) + _log_tail_ratio(d, tau)
    term2 = float(np.exp(log_term2))
    if not np.isfinite(term2):
        raise NumericRangeError(f"term2 overflows at d={d}")
    return LocalPlanarTerms(term1, term2)


def local_planar_smoothness_term(d: int, tau: float, c_h: float) -> float:
    """(1 + c_h) c_h tau d^-(1/tau - 1): the shift term for the flat-core target."""
    return float((1.0 + c_h) * c_h * tau * float(d) ** -(1.0 / tau - 1.0))


def local_planar_lhat_bound(d: int, tau: float, c_h: float) -> float:
    """Flow-independent bound on lhat for every c_h-local planar layer (symmetric case, b = 0)."""
    if c_h < 0:
        raise ContractViolation("c_h must be nonnegative")
    if c_h == 0:
        return 0.0
    t1, t2 = local_planar_terms(d, tau)
    return float(c_h * (t1 + t2) + local_planar_smoothness_term(d, tau, c_h))


# ---------------------------------------------------------------------------
# Depth bounds
# ---------------------------------------------------------------------------


def depth_lower_bound(l1_pq: float, eps: float, lhat_sup: float) -> float:
    """max(0, (||p - q||_1 - eps) / lhat_sup)."""
    if eps < 0 or l1_pq < 0:
        raise ContractViolation("distances must be nonnegative")
    if not lhat_sup > 0:
        raise UnboundedDepthError(f"lhat bound {lhat_sup!r} is not positive; no finite depth suffices")
    return max(0.0, (l1_pq - eps) / lhat_sup)


@dataclass(frozen=True)
class CapacityReport:
    lhat_estimate: float | None
    lhat_stderr: float | None
    lhat_bound: float | None
    l1_pq: float
    epsilon: float
    depth_lower_bound: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def capacity_report(
    l1_pq: float,
    eps: float | None = None,
    lhat_estimate: LhatEstimate | None = None,
    lhat_bound: float | None = None,
) -> CapacityReport:
    """Depth bound from every available lhat value; eps defaults to half the gap."""
    eps = 0.5 * l1_pq if eps is None else float(eps)
    available = [v for v in (lhat_bound, lhat_estimate.value if lhat_estimate else None) if v is not None]
    if not available:
        raise ContractViolation("need an lhat estimate or bound")
    depth = depth_lower_bound(l1_pq, eps, min(available))
    return CapacityReport(
        lhat_estimate.value if lhat_estimate else None,
        lhat_estimate.stderr if lhat_estimate else None,
        lhat_bound,
        float(l1_pq),
        eps,
        depth,
    )


@dataclass
class ScalingTable:
    family: str
    rows: list = field(default_factory=list)
    slope: float = float("nan")

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)


def loglog_slope(x, y) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def scaling_study(family: str, dims, gap: float = 1.0, kappa: float = 1.0, tau: float = 0.5, c_h: float = 2.0, lhat=1.0):
    """Depth lower bound versus dimension and its log-log slope.

    ``gap`` is ``||p - q||_1 - eps``, held fixed across dimensions as the
    Theta(1) assumption allows.  For local planar flows both branches of the
    bound are tabulated.
    """
    dims = [int(d) for d in dims]
    if len(dims) < 3 or any(b <= a for a, b in zip(dims, dims[1:])):
        raise ContractViolation("dims must be strictly ascending with at least 3 entries")
    table = ScalingTable(family)
    for d in dims:
        if family == "householder":
            b = householder_lhat_bound(householder_perturbation(d, kappa))
            row = {"d": d, "lhat_bound": b.bound, "lhat_tight": b.tight}
        elif family == "local_planar":
            t1, t2 = local_planar_terms(d, tau)
            smooth = local_planar_smoothness_term(d, tau, c_h)
            row = {
                "d": d,
                "lhat_bound": c_h * (t1 + t2) + smooth,
                "term1": t1,
                "term2": t2,
                "decay_branch": c_h * (t1 + t2),
                "smoothness_branch": smooth,
            }
        elif family == "constant":
            row = {"d": d, "lhat_bound": float(lhat)}
        else:
            raise ContractViolation(f"unknown family {family!r}")
        row["depth_lb"] = depth_lower_bound(gap, 0.0, row["lhat_bound"])
        table.rows.append(row)
    table.slope = loglog_slope(table.column("d"), table.column("depth_lb"))
    return table


__all__ = [
    "LhatEstimate",
    "lhat_monte_carlo",
    "default_proposal",
    "HouseholderBound",
    "householder_lhat_bound",
    "householder_perturbation",
    "LocalPlanarTerms",
    "local_planar_terms",
    "local_planar_smoothness_term",
    "local_planar_lhat_bound",
    "sphere_slice_factor",
    "depth_lower_bound",
    "CapacityReport",
    "capacity_report",
    "ScalingTable",
    "scaling_study",
    "loglog_slope",
]
