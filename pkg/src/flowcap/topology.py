"""Necessary conditions that an exact pushforward must satisfy.

Every check here evaluates a residual that vanishes identically when the
target density really is the pushforward of the base by the given flow (or
by a flow of the given family).  A nonzero residual is evidence that no flow
of that family can do the job; a zero residual proves nothing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .densities import Density, MixtureGaussianD
from .errors import ContractViolation, WrongFamilyError
from .flows import (
    EXCLUSION_MARGIN,
    FlowStack,
    Householder,
    Planar,
    Pushforward,
    Radial,
    Sylvester,
    _pushforward_score,
    as_stack,
)

RANK_TOL = 1e-9


@dataclass
class ResidualReport:
    """Per-point residuals; excluded points carry NaN and a reason."""

    points: np.ndarray
    residuals: np.ndarray
    excluded_mask: np.ndarray
    reasons: list
    vacuous: bool = False
    check: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def residual_norms(self) -> np.ndarray:
        return self.residuals[~self.excluded_mask]

    @property
    def excluded(self) -> int:
        return int(self.excluded_mask.sum())

    @property
    def max_residual(self) -> float:
        r = self.residual_norms
        return float(r.max()) if r.size else 0.0

    def fraction_below(self, tol: float) -> float:
        r = self.residual_norms
        return float((r <= tol).mean()) if r.size else 1.0

    def summary(self) -> dict:
        return {
            "check": self.check,
            "n_points": int(self.points.shape[0]),
            "excluded": self.excluded,
            "max_residual": self.max_residual,
            "vacuous": self.vacuous,
        }

    def write_csv(self, path) -> None:
        d = self.points.shape[1]
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow([f"z{i}" for i in range(d)] + ["residual", "excluded", "reason"])
            for z, r, ex, why in zip(self.points, self.residuals, self.excluded_mask, self.reasons):
                out.writerow([*(repr(float(x)) for x in z), "" if ex else repr(float(r)), int(ex), why])


def _points(q: Density, points, n, seed) -> np.ndarray:
    if points is None:
        return q._sample(np.random.default_rng(seed), int(n)).reshape(int(n), q.dim)
    Z = np.atleast_2d(np.asarray(points, dtype=float))
    if q.dim == 1 and Z.shape[0] == 1 and Z.shape[1] != 1:
        Z = Z.T
    if Z.shape[1] != q.dim:
        raise ContractViolation(f"points have dimension {Z.shape[1]}, base has {q.dim}")
    return Z


def _exclusion(stack: FlowStack, Z: np.ndarray, margin: float):
    """Mask of points near a non-smooth set of some layer, with the reason.

    Layer 0 sees the raw activation hyperplanes; deeper layers see their
    preimages, which are bent seams.
    """
    mask = np.zeros(Z.shape[0], dtype=bool)
    reasons = [""] * Z.shape[0]
    Zt = Z
    for i, layer in enumerate(stack.layers):
        near = layer.kink_distance(Zt) < margin * (1.0 + np.linalg.norm(Zt, axis=1))
        for k in np.flatnonzero(near & ~mask):
            reasons[k] = f"{'hyperplane' if i == 0 else 'seam'}:layer={i}"
        mask |= near
        Zt = layer.forward(Zt)[0]
    return mask, reasons


def residual_relu(stack, q: Density, points=None, n: int = 500, seed=0, margin=EXCLUSION_MARGIN) -> ResidualReport:
    """Residual of J_f(z)^T score_p(f(z)) = score_q(z) for p the pushforward of q."""
    stack = as_stack(stack)
    for i, layer in enumerate(stack.layers):
        relu = isinstance(layer, (Planar, Sylvester)) and layer.piecewise_linear
        if not (relu or isinstance(layer, Householder)):
            raise WrongFamilyError(f"layer {i} ({layer.variant}) is not piecewise linear")
    Z = _points(q, points, n, seed)
    mask, reasons = _exclusion(stack, Z, margin)
    res = np.full(Z.shape[0], np.nan)
    keep = ~mask
    if keep.any():
        Zk = Z[keep]
        # score of p at y = f(z), recovered through the inverse
        score_p = Pushforward(q, stack, margin=0.0)._grad_log_density(stack._forward(Zk)[0])
        J = stack._jacobian(Zk)
        lhs = np.einsum("nji,nj->ni", J, score_p)
        res[keep] = np.linalg.norm(lhs - q._grad_log_density(Zk), axis=1)
    return ResidualReport(Z, res, mask, reasons, check="relu")


def _tangent_matrix(layer) -> np.ndarray:
    if isinstance(layer, Planar):
        return layer.w[:, None]
    if isinstance(layer, Sylvester):
        return layer.B
    if isinstance(layer, Householder):
        # z - 2 v v^T z is a Sylvester flow with tangent v and identity activation
        return layer.v[:, None]
    raise WrongFamilyError(f"{layer.variant} layers have no fixed tangent subspace")


def complement_basis(B: np.ndarray, rtol: float = RANK_TOL) -> np.ndarray:
    """Orthonormal basis (columns) of the orthogonal complement of span(B)."""
    d = B.shape[0]
    if B.shape[1] == 0:
        return np.eye(d)
    Q, R, _ = linalg.qr(B, pivoting=True, mode="economic")
    diag = np.abs(np.diag(R)) if R.size else np.empty(0)
    rank = int((diag > rtol * max(diag.max(initial=0.0), 1e-300)).sum())
    Qfull, _ = np.linalg.qr(np.hstack([Q[:, :rank], np.eye(d)]), mode="complete")
    return Qfull[:, rank:]


def residual_span(stack, q: Density, points=None, n: int = 500, seed=0) -> ResidualReport:
    """Projection of score_p(f(z)) - score_q(z) onto the complement of span{B_1..B_n}."""
    stack = as_stack(stack)
    tangents = [_tangent_matrix(layer) for layer in stack.layers]
    for i, layer in enumerate(stack.layers):
        if getattr(layer, "piecewise_linear", False) and not isinstance(layer, Householder):
            raise WrongFamilyError(f"layer {i} is piecewise linear; use residual_relu")
    d = q.dim
    Z = _points(q, points, n, seed)
    B = np.hstack(tangents) if tangents else np.zeros((d, 0))
    total_m = B.shape[1]
    mask = np.zeros(Z.shape[0], dtype=bool)
    reasons = [""] * Z.shape[0]
    if total_m >= d:
        return ResidualReport(
            Z, np.zeros(Z.shape[0]), mask, reasons, vacuous=True, check="span", extra={"flow_dims": total_m}
        )
    comp = complement_basis(B)
    diff = _pushforward_score(stack, q, Z, 0.0) - q._grad_log_density(Z)
    res = np.linalg.norm(diff @ comp, axis=1)
    return ResidualReport(Z, res, mask, reasons, check="span", extra={"flow_dims": total_m})


def radial_combination(layer: Radial, q: Density, Z: np.ndarray) -> np.ndarray:
    """(1 + b/(a + r)) score_p(f(z)) - score_q(z), which must be parallel to z - z0."""
    r = np.linalg.norm(Z - layer.z0, axis=1)
    score_p = _pushforward_score(FlowStack((layer,)), q, Z, 0.0)
    return (1.0 + layer.b / (layer.a + r))[:, None] * score_p - q._grad_log_density(Z)


def residual_radial(layer: Radial, q: Density, points=None, n: int = 500, seed=0, margin=EXCLUSION_MARGIN):
    if not isinstance(layer, Radial):
        raise WrongFamilyError("residual_radial needs a single radial layer")
    Z = _points(q, points, n, seed)
    D = Z - layer.z0
    r = np.linalg.norm(D, axis=1)
    mask = r <= margin * (1.0 + np.linalg.norm(layer.z0))
    reasons = ["center" if m else "" for m in mask]
    res = np.full(Z.shape[0], np.nan)
    cos = np.full(Z.shape[0], np.nan)
    keep = ~mask
    if keep.any():
        C = radial_combination(layer, q, Z[keep])
        unit = D[keep] / r[keep, None]
        along = np.einsum("ni,ni->n", C, unit)
        res[keep] = np.linalg.norm(C - along[:, None] * unit, axis=1)
        norm_c = np.linalg.norm(C, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            cos[keep] = np.where(norm_c > 0, np.abs(along) / norm_c, 1.0)
    return ResidualReport(Z, res, mask, reasons, check="radial", extra={"abs_cosine": cos})


# ---------------------------------------------------------------------------
# Closed-form conditions for affine pieces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstancyReport:
    points: np.ndarray
    values: np.ndarray  # (n, d, d)
    mean: np.ndarray
    deviation: float

    @property
    def constant(self) -> bool:
        return self.deviation <= 1e-9 * max(1.0, float(np.abs(self.mean).max()))


def _mean_spread(mix: MixtureGaussianD, X: np.ndarray) -> np.ndarray:
    """Covariance of the component means under the responsibilities at X."""
    R = mix.responsibilities(X)
    mus = np.stack([c.mean for c in mix.components])
    m = R @ mus
    second = np.einsum("nk,ki,kj->nij", R, mus, mus)
    return second - np.einsum("ni,nj->nij", m, m)


def _shared_precision(mix, name):
    if not isinstance(mix, MixtureGaussianD):
        raise WrongFamilyError(f"{name} must be a Gaussian mixture")
    cov = mix.shared_covariance
    if cov is None:
        raise WrongFamilyError(f"{name} components do not share one covariance")
    return np.linalg.inv(cov)


def mog_rhs_jacobian(p: MixtureGaussianD, q: MixtureGaussianD, A, b, Z) -> np.ndarray:
    """z-derivative of A^T P_p m_p(Az+b) - P_q m_q(z), with m the responsibility-weighted mean."""
    Pp, Pq = _shared_precision(p, "p"), _shared_precision(q, "q")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    X = Z @ A.T + b
    left = A.T @ Pp
    term_p = left[None] @ _mean_spread(p, X) @ left.T[None]
    term_q = Pq[None] @ _mean_spread(q, Z) @ Pq[None]
    return term_p - term_q


def mog_condition(p, q, A, b, center=None, radius: float = 1.0, n: int = 100, seed=0) -> ConstancyReport:
    """Is the mixture condition's matrix constant over a ball?  Reports max entrywise deviation."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = A.shape[0]
    if A.shape != (d, d) or np.linalg.matrix_rank(A) < d:
        raise ContractViolation("A must be an invertible square matrix")
    if p.dim != d or q.dim != d:
        raise ContractViolation("A and the mixtures disagree on dimension")
    center = np.zeros(d) if center is None else np.asarray(center, dtype=float).reshape(d)
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    Z = center + radius * rng.random(n)[:, None] ** (1.0 / d) * dirs
    vals = mog_rhs_jacobian(p, q, A, b, Z)
    mean = vals.mean(axis=0)
    return ConstancyReport(Z, vals, mean, float(np.abs(vals - mean).max()))


def prod_condition(g, r_p: float, r_q: float, A, b, points) -> ResidualReport:
    """Residual of r_q (log g)'(z) = r_p A^T (log g)'(Az + b), coordinatewise derivatives."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    Z = np.atleast_2d(np.asarray(points, dtype=float))
    if r_p <= 0 or r_q <= 0:
        raise ContractViolation("exponents must be positive")
    X = Z @ A.T + b
    s_z = np.asarray(g._dlogpdf1(Z.reshape(-1)), dtype=float).reshape(Z.shape)
    s_x = np.asarray(g._dlogpdf1(X.reshape(-1)), dtype=float).reshape(X.shape)
    res = np.linalg.norm(r_q * s_z - r_p * s_x @ A, axis=1)
    n = Z.shape[0]
    return ResidualReport(Z, res, np.zeros(n, dtype=bool), [""] * n, check="prod")


# ---------------------------------------------------------------------------
# Gaussian pairs
# ---------------------------------------------------------------------------

FAMILIES = ("planar-smooth", "sylvester-smooth", "radial", "relu-sylvester")


@dataclass(frozen=True)
class FeasibilityVerdict:
    family: str
    verdict: str  # "ruled_out" or "not_ruled_out"
    witness: str
    details: dict = field(default_factory=dict)

    @property
    def ruled_out(self) -> bool:
        return self.verdict == "ruled_out"


def _spd(S, name):
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ContractViolation(f"{name} must be a square matrix")
    if np.abs(S - S.T).max() > 1e-12 * max(1.0, np.abs(S).max()):
        raise ContractViolation(f"{name} must be symmetric")
    S = 0.5 * (S + S.T)
    if np.linalg.eigvalsh(S)[0] <= 0:
        raise ContractViolation(f"{name} must be positive definite")
    return S


def gaussian_feasibility(sigma_q, sigma_p, family: str, m: int | None = None, rank_tol: float = RANK_TOL):
    """Can a flow of ``family`` send N(0, sigma_q) to N(0, sigma_p)?  Necessary conditions only.

    Rank and sign decisions are made relative to the larger covariance (or
    precision) norm, so scaling both inputs by the same factor never changes
    the verdict.
    """
    Sq, Sp = _spd(sigma_q, "sigma_q"), _spd(sigma_p, "sigma_p")
    if Sq.shape != Sp.shape:
        raise ContractViolation("covariances differ in dimension")
    d = Sq.shape[0]
    if family not in FAMILIES:
        raise ContractViolation(f"unknown family {family!r}; expected one of {FAMILIES}")

    def verdict(bad, witness, **details):
        return FeasibilityVerdict(family, "ruled_out" if bad else "not_ruled_out", witness, details)

    if family == "relu-sylvester":
        return verdict(False, "a linear map compiled into ReLU planar and Householder layers transports any pair")

    if family == "planar-smooth":
        scale = max(np.linalg.norm(Sq, 2), np.linalg.norm(Sp, 2))
        sv = np.linalg.svd(Sq - Sp, compute_uv=False)
        rank = int((sv > rank_tol * scale).sum())
        return verdict(rank > 1, f"rank(sigma_q - sigma_p) = {rank}", rank=rank, singular_values=sv.tolist())

    if family == "radial":
        scale = max(np.linalg.norm(Sq, 2), np.linalg.norm(Sp, 2))
        gap = float(np.linalg.norm(Sq - Sp, 2))
        return verdict(gap > rank_tol * scale, f"|sigma_q - sigma_p| = {gap:.3g}", gap=gap)

    if m is None or not 1 <= int(m) < d:
        raise ContractViolation(f"sylvester-smooth needs a total flow dimension 1 <= m < d = {d}")
    m = int(m)
    Pq, Pp = np.linalg.inv(Sq), np.linalg.inv(Sp)
    scale = max(np.linalg.norm(Pq, 2), np.linalg.norm(Pp, 2))
    tol = rank_tol * scale
    lam = np.linalg.eigvalsh(0.5 * ((Pq - Pp) + (Pq - Pp).T))  # ascending
    rank = int((np.abs(lam) > tol).sum())
    low, high = float(lam[m]), float(lam[d - m - 1])
    bad = low < -tol or high > tol or rank > 2 * m
    witness = f"eigenvalue #{m + 1} = {low:.3g}, eigenvalue #{d - m} = {high:.3g}, rank = {rank} (m = {m})"
    return verdict(bad, witness, eigenvalues=lam.tolist(), rank=rank, m=m)


__all__ = [
    "ResidualReport",
    "residual_relu",
    "residual_span",
    "residual_radial",
    "radial_combination",
    "complement_basis",
    "ConstancyReport",
    "mog_rhs_jacobian",
    "mog_condition",
    "prod_condition",
    "FeasibilityVerdict",
    "gaussian_feasibility",
]
