"""One-dimensional constructions: exact CDF transport, ReLU synthesis of
piecewise-Gaussian densities, and the step-density approximation pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .densities import (
    Density1D,
    Gaussian1D,
    PiecewiseConstant1D,
    PiecewiseGaussian1D,
    gauss_interval_mass,
)
from .errors import CapacityError, ContractViolation, HypothesisViolation
from .flows import FlowStack, Nonlinearity, Planar, Pushforward
from .metrics import l1_grid_1d

MASS_MATCH_TOL = 1e-8
ZERO_SIGMA_FACTOR = 1e6
MAX_PIECES = 100_000


# ---------------------------------------------------------------------------
# Exact transport by CDF matching
# ---------------------------------------------------------------------------


def _match_quantiles(src: Density1D, dst: Density1D, x: np.ndarray) -> np.ndarray:
    """dst^{-1}(src(x)), matching survival functions in the upper half for precision."""
    out = np.empty_like(x)
    F = src.cdf(x)
    lower = F <= 0.5
    if lower.any():
        u = np.clip(F[lower], np.finfo(float).tiny, None)
        out[lower] = _polish(dst.cdf, dst, dst.quantile(u), u, sign=1.0)
    if (~lower).any():
        S = np.clip(src.sf(x[~lower]), np.finfo(float).tiny, None)
        start = dst.quantile(np.minimum(1.0 - S, 1.0 - 2**-53))
        out[~lower] = _polish(dst.sf, dst, start, S, sign=-1.0)
    return out


def _polish(fn, dist, x, target, sign, steps=3):
    """Newton steps on fn(x) = target, kept only where they reduce the residual."""
    x = np.asarray(x, dtype=float).copy()
    for _ in range(steps):
        res = fn(x) - target
        dens = dist.pdf(x)
        ok = dens > 0
        cand = np.where(ok, x - sign * res / np.where(ok, dens, 1.0), x)
        better = np.abs(fn(cand) - target) < np.abs(res)
        x = np.where(better, cand, x)
    return x


@dataclass(frozen=True)
class TransportSegment:
    kind: str  # "cdf", "affine" or "shift"
    lo: float
    hi: float
    image_lo: float
    image_hi: float


@dataclass(frozen=True, eq=False)
class TransportMap1D:
    """Increasing map sending ``q`` to ``p`` interval by interval.

    On each matched support interval the map is ``F_p^{-1} o F_q``; gaps
    between intervals are mapped affinely onto the corresponding gaps, and
    beyond finite outer endpoints the map is a unit-slope shift.
    """

    q: Density1D
    p: Density1D
    segments: tuple

    def _pieces(self, x, image: bool):
        lo = np.array([s.image_lo if image else s.lo for s in self.segments])
        return np.clip(np.searchsorted(lo, x, side="right") - 1, 0, len(self.segments) - 1)

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        flat = z.reshape(-1)
        out = np.empty_like(flat)
        idx = self._pieces(flat, image=False)
        for j in np.unique(idx):
            sel = idx == j
            out[sel] = self._apply(self.segments[j], flat[sel], inverse=False)
        return out.reshape(z.shape)

    def inverse(self, y):
        y = np.asarray(y, dtype=float)
        flat = y.reshape(-1)
        out = np.empty_like(flat)
        idx = self._pieces(flat, image=True)
        for j in np.unique(idx):
            sel = idx == j
            out[sel] = self._apply(self.segments[j], flat[sel], inverse=True)
        return out.reshape(y.shape)

    def _apply(self, seg: TransportSegment, x, inverse):
        a, b = (seg.image_lo, seg.image_hi) if inverse else (seg.lo, seg.hi)
        c, d = (seg.lo, seg.hi) if inverse else (seg.image_lo, seg.image_hi)
        if seg.kind == "cdf":
            src, dst = (self.p, self.q) if inverse else (self.q, self.p)
            return _match_quantiles(src, dst, x)
        if seg.kind == "affine":
            return c + (x - a) * (d - c) / (b - a)
        anchor_src, anchor_dst = (a, c) if np.isfinite(a) else (b, d)
        return x - anchor_src + anchor_dst

    def derivative(self, z):
        z = np.asarray(z, dtype=float)
        flat = z.reshape(-1)
        out = np.ones_like(flat)
        idx = self._pieces(flat, image=False)
        for j in np.unique(idx):
            seg = self.segments[j]
            sel = idx == j
            if seg.kind == "cdf":
                out[sel] = self.q.pdf(flat[sel]) / self.p.pdf(self(flat[sel]))
            elif seg.kind == "affine":
                out[sel] = (seg.image_hi - seg.image_lo) / (seg.hi - seg.lo)
        return out.reshape(z.shape)

    def as_planar(self, u: float = 1.0, w: float = 1.0, b: float = 0.0) -> Planar:
        """The same map written as a planar layer with a tabulated nonlinearity.

        With ``h(x) = f((x - b)/w)/u - (x - b)/(u w)`` the planar layer
        ``z + u h(w z + b)`` equals ``f``.
        """
        if u == 0 or w <= 0 or u * w <= 0:
            raise ContractViolation("need u w > 0 for the planar rewrite")

        def h(x):
            s = (np.asarray(x, dtype=float) - b) / w
            return self(s) / u - s / u

        def dh(x):
            s = (np.asarray(x, dtype=float) - b) / w
            return (self.derivative(s) - 1.0) / (u * w)

        def d2h(x, step=1e-5):
            return (dh(np.asarray(x) + step) - dh(np.asarray(x) - step)) / (2 * step)

        # h' >= -1/(u w) always; the guard only needs u w > 0
        return Planar([u], [w], b, Nonlinearity.custom(h, dh, d2h, sup_slope=1.0))


def _matched_intervals(q: Density1D, p: Density1D):
    iq, ip = q.support_intervals(), p.support_intervals()
    if len(iq) != len(ip):
        raise HypothesisViolation(
            f"supports have {len(iq)} and {len(ip)} intervals; transport needs equal counts"
        )
    for (_, rq), (_, rp) in zip(iq[:-1], ip[:-1]):
        mq, mp = float(q.cdf(rq)), float(p.cdf(rp))
        if abs(mq - mp) > MASS_MATCH_TOL:
            raise HypothesisViolation(
                f"cumulative masses differ at matched interval ends: {mq!r} vs {mp!r}"
            )
    return iq, ip


def cdf_transport(q: Density1D, p: Density1D) -> TransportMap1D:
    iq, ip = _matched_intervals(q, p)
    segs = []
    (lq, _), (lp, _) = iq[0], ip[0]
    if np.isfinite(lq):
        if not np.isfinite(lp):
            raise HypothesisViolation("source support bounded below but target is not")
        segs.append(TransportSegment("shift", -np.inf, lq, -np.inf, lp))
    for i, ((a, b), (c, d)) in enumerate(zip(iq, ip)):
        segs.append(TransportSegment("cdf", a, b, c, d))
        if i + 1 < len(iq):
            segs.append(TransportSegment("affine", b, iq[i + 1][0], d, ip[i + 1][0]))
    (_, rq), (_, rp) = iq[-1], ip[-1]
    if np.isfinite(rq):
        if not np.isfinite(rp):
            raise HypothesisViolation("source support bounded above but target is not")
        segs.append(TransportSegment("shift", rq, np.inf, rp, np.inf))
    return TransportMap1D(q, p, tuple(segs))


class TransportPushforward(Density1D):
    """Density of f(Z) for an explicit increasing map f and Z ~ q."""

    def __init__(self, transport: TransportMap1D, derivative=None):
        self.transport = transport
        self._derivative = derivative or transport.derivative

    def _logpdf1(self, y):
        z = self.transport.inverse(y)
        with np.errstate(divide="ignore"):
            return np.log(self.transport.q.pdf(z)) - np.log(self._derivative(z))

    def _cdf1(self, y):
        return self.transport.q.cdf(self.transport.inverse(y))

    def _sf1(self, y):
        return self.transport.q.sf(self.transport.inverse(y))

    def _quantile1(self, u):
        return self.transport(self.transport.q.quantile(u))

    def kinks(self):
        return self.transport.p.kinks()


# ---------------------------------------------------------------------------
# ReLU synthesis of tail-consistent piecewise Gaussians
# ---------------------------------------------------------------------------


def _right_tail(mu, sigma, t):
    return float(special.ndtr(-(t - mu) / sigma))


def relu_piece_fix(q: PiecewiseGaussian1D, target_last: Gaussian1D) -> Planar:
    """ReLU layer that swaps the last Gaussian piece of ``q`` for ``target_last``."""
    if q.n_pieces < 2:
        raise ContractViolation("need at least one breakpoint")
    t = float(q.breakpoints[-1])
    mu_n, sigma_n = float(q.mus[-1]), float(q.sigmas[-1])
    have = _right_tail(mu_n, sigma_n, t)
    want = _right_tail(target_last.mu, target_last.sigma, t)
    if abs(have - want) > MASS_MATCH_TOL:
        raise HypothesisViolation(
            f"last pieces carry different mass beyond t={t!r}: {have!r} vs {want!r}"
        )
    ratio = target_last.sigma / sigma_n
    u = float(np.sign(ratio - 1.0))
    w = abs(1.0 - ratio)
    return Planar([u], [w], -w * t, "relu")


@dataclass(frozen=True)
class Synthesis:
    base: Gaussian1D
    stack: FlowStack
    identity_layers: int = 0
    elided_identity_layers: int = 0

    def __iter__(self):
        yield self.base
        yield self.stack


def pwg_synthesize(target: PiecewiseGaussian1D, elide_identity: bool = False, tol: float = 1e-10) -> Synthesis:
    """Base Gaussian plus n-1 ReLU layers whose pushforward is ``target``.

    Layer k rewrites everything right of ``t_k`` (currently the Gaussian of
    piece k-1) into piece k; the pieces to its left are untouched.
    """
    if not target.tail_consistent(tol):
        worst = float(np.max(np.abs(target.tail_consistency_residuals())))
        raise HypothesisViolation(f"target is not tail-consistent (worst residual {worst:.3g})")
    layers = []
    identities = 0
    for k in range(1, target.n_pieces):
        t = float(target.breakpoints[k - 1])
        ratio = target.sigmas[k] / target.sigmas[k - 1]
        w = abs(1.0 - ratio)
        if w == 0.0:
            identities += 1
            if elide_identity:
                continue
        layers.append(Planar([float(np.sign(ratio - 1.0))], [w], -w * t, "relu"))
    return Synthesis(
        base=target.piece(0),
        stack=FlowStack(tuple(layers), 1),
        identity_layers=identities,
        elided_identity_layers=identities if elide_identity else 0,
    )


def random_tail_consistent_pwg(n: int, seed=None, span=2.5, sigma_range=(0.5, 2.0)) -> PiecewiseGaussian1D:
    """Random tail-consistent piecewise Gaussian with ``n`` pieces.

    Each new piece shares the standardized position of the breakpoint with
    its left neighbour, which is exactly the tail-consistency condition.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    t = np.sort(rng.uniform(-span, span, size=n - 1))
    while n > 2 and np.min(np.diff(t)) < 1e-3:
        t = np.sort(rng.uniform(-span, span, size=n - 1))
    sigmas = rng.uniform(*sigma_range, size=n)
    mus = np.empty(n)
    mus[0] = rng.uniform(-1.0, 1.0)
    for k in range(1, n):
        c = (t[k - 1] - mus[k - 1]) / sigmas[k - 1]
        mus[k] = t[k - 1] - sigmas[k] * c
    return PiecewiseGaussian1D(t, mus, sigmas)


# ---------------------------------------------------------------------------
# Step density -> tail-consistent piecewise Gaussian
# ---------------------------------------------------------------------------


def uniform_refinement_width(eps: float, sup_value: float) -> float:
    """Single piece width that keeps the Lipschitz interior error below eps/3
    for every bin, taking eps/3 of tail mass per side.  Much finer than the
    per-bin widths used by ``pwc_to_pwg``."""
    c = special.ndtri(eps / 3.0)
    return float(eps / (3.0 * np.sqrt(2.0 * np.pi) * sup_value**2 * np.exp(c * c - 0.5)))


def _interior_error_rate(alpha, c):
    """l1 error per unit width squared of a Gaussian piece started at value alpha."""
    return np.sqrt(np.pi / 2.0) * alpha**2 * np.exp(c * c - 0.5)


def _refine_bins(pwc: PiecewiseConstant1D, tau: float, budget: float, max_pieces: int):
    """Split bins so the summed Lipschitz bound stays below ``budget``."""
    t, v = pwc.breakpoints, pwc.values
    widths = np.diff(t)
    cum = np.concatenate([[0.0], np.cumsum(v * widths)])
    scale = 1.0 - 2.0 * tau
    # standardized breakpoint positions bracket |c| over each bin
    m_lo = np.clip(tau + scale * cum[:-1], tau, 1 - tau)
    m_hi = np.clip(tau + scale * cum[1:], tau, 1 - tau)
    c_max = np.maximum(np.abs(special.ndtri(m_lo)), np.abs(special.ndtri(m_hi)))
    rate = _interior_error_rate(scale * v, c_max)
    length = float(np.sum(widths[v > 0]))
    # per-bin error <= rate * width * delta_i; ask for rate * delta_i <= budget / length
    with np.errstate(divide="ignore"):
        delta = np.where(rate > 0, 0.9 * budget / (length * rate), np.inf)
    counts = np.where(v > 0, np.ceil(widths / delta), 1).astype(np.int64)
    required = int(counts.sum())
    if required > max_pieces:
        raise CapacityError(
            f"piece-count cap {max_pieces} exceeded: refinement needs {required} pieces",
            required=required,
        )
    edges = [t[:1]]
    values = []
    for i, k in enumerate(counts):
        edges.append(np.linspace(t[i], t[i + 1], k + 1)[1:])
        values.append(np.full(k, v[i]))
    return np.concatenate(edges), np.concatenate(values)


def _trim_zero_ends(pwc: PiecewiseConstant1D):
    t, v = pwc.breakpoints, pwc.values
    pos = np.nonzero(v > 0)[0]
    first, last = pos[0], pos[-1]
    return t[first : last + 2], v[first : last + 1]


def pwc_to_pwg(
    q_pwc: PiecewiseConstant1D,
    eps: float,
    tail_mass: float | None = None,
    refine: bool = True,
    max_pieces: int = MAX_PIECES,
    zero_sigma_factor: float = ZERO_SIGMA_FACTOR,
) -> PiecewiseGaussian1D:
    """Tail-consistent piecewise Gaussian within l1 distance ``eps`` of a step density.

    Two outer Gaussian tails carry ``tail_mass`` each (default ``eps/6``).
    Interior pieces are built left to right: each Gaussian's right tail
    beyond its breakpoint equals one minus the mass already placed (which
    is tail-consistency), and its value at the breakpoint equals the step
    value scaled by ``1 - 2*tail_mass``.  With ``refine`` the bins are
    split until the Lipschitz error bound of the interior is at most eps/3.
    """
    if not 0.0 < eps < 1.0:
        raise ContractViolation("eps must lie in (0, 1)")
    tau = eps / 6.0 if tail_mass is None else float(tail_mass)
    if not 0.0 < tau < 0.5:
        raise ContractViolation("tail mass must lie in (0, 1/2)")
    t, v = _trim_zero_ends(q_pwc)
    if refine:
        t, v = _refine_bins(PiecewiseConstant1D(t, v), tau, eps / 3.0, max_pieces)
    elif len(v) > max_pieces:
        raise CapacityError(f"{len(v)} pieces exceed the cap {max_pieces}", required=len(v))
    scale = 1.0 - 2.0 * tau
    widths = np.diff(t)
    n = len(v)
    mus = np.empty(n + 2)
    sigmas = np.empty(n + 2)

    # left tail: mass tau, continuous with the first interior piece
    c_left = float(special.ndtri(tau))
    sigmas[0] = np.exp(-0.5 * c_left**2) / np.sqrt(2 * np.pi) / (scale * v[0])
    mus[0] = t[0] - c_left * sigmas[0]
    placed = float(special.ndtr(c_left))
    remaining = 1.0 - placed
    for i in range(n):
        # standardized position whose left mass is what has been placed so far
        c = float(special.ndtri(placed)) if placed < 0.5 else -float(special.ndtri(remaining))
        if v[i] > 0:
            sigma = np.exp(-0.5 * c * c) / np.sqrt(2 * np.pi) / (scale * v[i])
        else:
            sigma = zero_sigma_factor * widths[i]
        sigmas[i + 1] = sigma
        mus[i + 1] = t[i] - c * sigma
        mass = float(gauss_interval_mass(c, c + widths[i] / sigma))
        placed += mass
        remaining -= mass
        if remaining <= 0.0:
            raise HypothesisViolation("interior pieces exhausted the unit mass; lower eps or refine")
    # right tail: whatever mass is left, continuous with the last interior piece
    c_right = float(special.ndtri(placed)) if placed < 0.5 else -float(special.ndtri(remaining))
    edge_value = np.exp(-0.5 * ((t[-1] - mus[n]) / sigmas[n]) ** 2) / (np.sqrt(2 * np.pi) * sigmas[n])
    sigmas[n + 1] = np.exp(-0.5 * c_right**2) / np.sqrt(2 * np.pi) / edge_value
    mus[n + 1] = t[-1] - c_right * sigmas[n + 1]
    return PiecewiseGaussian1D(t, mus, sigmas)


# ---------------------------------------------------------------------------
# End-to-end pipeline
# ---------------------------------------------------------------------------


def discretize(p: Density1D, n_pieces: int, lo=None, hi=None, hull_level: float = 1e-7) -> PiecewiseConstant1D:
    """Equal-width step density whose bin values are the exact bin averages of ``p``."""
    if lo is None or hi is None:
        intervals = p.support_intervals()
        a, b = intervals[0][0], intervals[-1][1]
        lo = a if lo is None and np.isfinite(a) else (float(p.quantile(hull_level)) if lo is None else lo)
        hi = b if hi is None and np.isfinite(b) else (float(p.quantile(1 - hull_level)) if hi is None else hi)
    t = np.linspace(lo, hi, int(n_pieces) + 1)
    masses = np.diff(p.cdf(t))
    return PiecewiseConstant1D.normalized(t, np.maximum(masses, 0.0) / np.diff(t))


@dataclass(frozen=True)
class Approximation:
    base: Gaussian1D
    stack: FlowStack
    pwc: PiecewiseConstant1D | None
    pwg: PiecewiseGaussian1D | None
    achieved_l1: float
    identity_layers: int = 0
    elided_identity_layers: int = 0
    extra: dict = field(default_factory=dict)

    def __iter__(self):
        yield self.base
        yield self.stack

    @property
    def pushforward(self):
        return Pushforward(self.base, self.stack)

    def report(self) -> dict:
        return {
            "pieces": 0 if self.pwg is None else int(self.pwg.n_pieces),
            "layers": len(self.stack),
            "achieved_l1": self.achieved_l1,
            "elided_identity_layers": self.elided_identity_layers,
            "identity_layers": self.identity_layers,
            **self.extra,
        }


def approximate_target_1d(
    p: Density1D, eps: float, n_pieces: int, elide_identity: bool = False, grid: int = 2**14 + 1
) -> Approximation:
    """Step-density discretization, Gaussian-piece approximation and ReLU synthesis.

    ``achieved_l1`` compares the synthesized pushforward against ``p``.
    """
    if isinstance(p, Gaussian1D):
        return Approximation(p, FlowStack((), 1), None, None, 0.0)
    pwc = discretize(p, n_pieces)
    pwg = pwc_to_pwg(pwc, eps, refine=False)
    synth = pwg_synthesize(pwg, elide_identity=elide_identity)
    push = Pushforward(synth.base, synth.stack)
    lo, hi = float(pwc.breakpoints[0]), float(pwc.breakpoints[-1])
    s_lo, s_hi = p.support_intervals()[0][0], p.support_intervals()[-1][1]
    if np.isfinite(s_lo) and np.isfinite(s_hi):
        # p vanishes off its hull, so the pushforward's outside mass is the exact remainder
        est = l1_grid_1d(p, push, lo, hi, grid)
    else:
        est = l1_grid_1d(p, push, n=grid)
    return Approximation(
        synth.base,
        synth.stack,
        pwc,
        pwg,
        est.value,
        synth.identity_layers,
        synth.elided_identity_layers,
        {"eps": eps, "n_bins": int(n_pieces)},
    )


def scaling_as_relu_layers(sigma: float, shift: float = 0.0):
    """z -> sigma z + shift as two ReLU planar layers followed by a shift.

    The first layer scales the positive half-line, the second the negative one.
    """
    if sigma <= 0:
        raise ContractViolation("scale must be positive")
    first = Planar([sigma - 1.0], [1.0], 0.0, "relu")
    second = Planar([1.0 - sigma], [-1.0], 0.0, "relu")
    return FlowStack((first, second), 1), float(shift)
