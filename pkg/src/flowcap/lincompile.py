"""Compile linear maps into ReLU planar layers plus Householder reflections.

Every rank-one update ``I + u w^T`` with ``1 + u.w > 0`` is exactly two ReLU
planar layers.  An invertible matrix with positive leading pivots splits
into ``2d - 2`` such updates (``d - 1`` column factors from each triangular
factor, with the pivots folded into them), hence ``4d - 4`` layers.  Other
matrices are first multiplied on the right by a signed permutation, which
is realized by reflections.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ContractViolation, HypothesisViolation, SingularMatrixError
from .flows import FlowStack, Householder, Planar

PIVOT_TOL = 1e-8
SINGULAR_TOL = 1e-12
IDENTITY_TOL = 1e-14


def rank_one_gadget(u, w) -> FlowStack:
    """Two ReLU planar layers composing to ``z -> (I + u w^T) z``.

    ``z + u relu(w.z)`` handles the half-space ``w.z >= 0``;
    ``z - u relu(-w.z)`` handles the other one and leaves the image of the
    first half-space alone because ``1 + u.w > 0`` preserves the sign of ``w.z``.
    """
    u = np.asarray(u, dtype=float).reshape(-1)
    w = np.asarray(w, dtype=float).reshape(-1)
    if 1.0 + u @ w <= 0.0:
        raise HypothesisViolation(f"rank-one update has 1 + u.w = {1.0 + u @ w!r} <= 0")
    return FlowStack((Planar(u, w, 0.0, "relu"), Planar(-u, -w, 0.0, "relu")))


@dataclass(frozen=True)
class LinearCompileResult:
    stack: FlowStack
    planar_count: int
    householder_count: int
    shift: np.ndarray
    path: str  # "identity", "lu", "pivoted" or "scalar"
    orthogonal: np.ndarray  # the signed permutation realized by the reflections
    split_count: int = 0

    def apply(self, z):
        return self.stack.forward(z)[0] + self.shift

    def matrix(self) -> np.ndarray:
        d = self.shift.shape[0]
        return self.stack.forward(np.eye(d))[0].T

    def report(self) -> dict:
        return {
            "planar_count": self.planar_count,
            "householder_count": self.householder_count,
            "split_count": self.split_count,
            "path": self.path,
            "layers": len(self.stack),
        }


def lu_no_pivot(A: np.ndarray):
    """Doolittle factorization A = L U without row exchanges.

    Returns ``None`` when a pivot is not comfortably positive relative to
    the scale of ``A``.
    """
    A = np.array(A, dtype=float)
    d = A.shape[0]
    scale = np.abs(A).max()
    L = np.eye(d)
    U = A.copy()
    for k in range(d - 1):
        pivot = U[k, k]
        if pivot <= PIVOT_TOL * scale:
            return None
        L[k + 1 :, k] = U[k + 1 :, k] / pivot
        U[k + 1 :, k:] -= np.outer(L[k + 1 :, k], U[k, k:])
        U[k + 1 :, k] = 0.0
    if U[-1, -1] <= PIVOT_TOL * scale:
        return None
    if np.abs(L @ U - A).max() > 1e-12 * scale * d:
        return None
    return L, U


def _column_factors(L: np.ndarray, U: np.ndarray):
    """Rank-one updates (u, w) whose product, leftmost first, is L U.

    The pivots diag(U) = delta are folded in: lower factor k has column
    delta_k (e_k + l_k), the last upper factor carries delta_d.
    """
    d = L.shape[0]
    delta = np.diag(U).copy()
    unit_upper = U / delta[:, None]
    eye = np.eye(d)
    factors = []
    for k in range(d - 1):
        u = (delta[k] - 1.0) * eye[k] + delta[k] * np.concatenate([np.zeros(k + 1), L[k + 1 :, k]])
        factors.append((u, eye[k]))
    for k in range(d - 1, 0, -1):
        u = np.concatenate([unit_upper[:k, k], np.zeros(d - k)])
        if k == d - 1:
            u[k] += delta[k] - 1.0
        factors.append((u, eye[k]))
    return factors


def _reflections_for(Q: np.ndarray) -> list:
    """Unit vectors v_1..v_k with Q = H(v_1) ... H(v_k)."""
    d = Q.shape[0]
    M = Q.copy()
    vs = []
    for i in range(d):
        x = M[:, i]
        diff = x.copy()
        diff[i] -= 1.0
        nrm = np.linalg.norm(diff)
        if nrm <= 1e-14:
            continue
        v = diff / nrm
        M = M - 2.0 * np.outer(v, v @ M)
        vs.append(v)
    return vs


def compile_linear(A, shift=None, pad_reflections: bool = True) -> LinearCompileResult:
    """Stack realizing ``z -> A z`` (plus ``shift`` outside the stack)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = A.shape[0]
    if A.shape != (d, d) or not np.all(np.isfinite(A)):
        raise ContractViolation("A must be a finite square matrix")
    shift = np.zeros(d) if shift is None else np.asarray(shift, dtype=float).reshape(d)
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[-1] <= SINGULAR_TOL * sv[0]:
        raise SingularMatrixError(f"matrix is singular (condition {sv[0] / max(sv[-1], 1e-300):.3g})")

    if np.abs(A - np.eye(d)).max() <= IDENTITY_TOL:
        return LinearCompileResult(FlowStack((), d), 0, 0, shift, "identity", np.eye(d))

    if d == 1:
        a = float(A[0, 0])
        layers = []
        orth = np.eye(1)
        if a < 0:
            layers.append(Householder([1.0]))
            orth = -orth
        if abs(a) != 1.0:
            layers.extend(rank_one_gadget([abs(a) - 1.0], [1.0]).layers)
        n_h = int(a < 0)
        return LinearCompileResult(FlowStack(tuple(layers), 1), len(layers) - n_h, n_h, shift, "scalar", orth)

    factors = lu_no_pivot(A)
    if factors is not None:
        L, U = factors
        orth = np.eye(d)
        path = "lu"
    else:
        # A^T = P L_s U_s  =>  A = U_s^T L_s^T P^T; flip signs so the pivots are positive
        P, Ls, Us = linalg.lu(A.T)
        lower = Us.T
        signs = np.sign(np.diag(lower))
        S = np.diag(signs)
        lower = lower @ S
        unit_upper = S @ Ls.T @ S
        orth = S @ P.T
        pivots = np.diag(lower).copy()
        L = lower / pivots[None, :]
        U = pivots[:, None] * unit_upper
        path = "pivoted"

    layers = []
    vs = _reflections_for(orth) if path == "pivoted" else []
    if pad_reflections and vs:
        while len(vs) + 2 <= d:
            vs.extend([vs[-1], vs[-1]])
    for v in reversed(vs):
        layers.append(Householder(v))
    planar = 0
    for u, w in reversed(_column_factors(L, U)):
        if np.abs(u).max() <= IDENTITY_TOL:
            continue
        layers.extend(rank_one_gadget(u, w).layers)
        planar += 2
    return LinearCompileResult(FlowStack(tuple(layers), d), planar, len(vs), shift, path, orth)


# ---------------------------------------------------------------------------
# Gaussian to Gaussian
# ---------------------------------------------------------------------------


def _check_spd(S, name):
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape[0] != S.shape[1] or np.abs(S - S.T).max() > 1e-12 * max(1.0, np.abs(S).max()):
        raise ContractViolation(f"{name} must be symmetric")
    if np.linalg.eigvalsh(S)[0] <= 0:
        raise ContractViolation(f"{name} must be positive definite")
    return 0.5 * (S + S.T)


def aligned_eigh(S: np.ndarray):
    """Eigendecomposition with eigenvectors ordered and signed to resemble the identity."""
    lam, V = np.linalg.eigh(S)
    lead = np.argmax(np.abs(V), axis=0)
    if len(set(lead.tolist())) == len(lead):
        order = np.argsort(lead)
        lam, V = lam[order], V[:, order]
    signs = np.sign(V[np.argmax(np.abs(V), axis=0), np.arange(V.shape[1])])
    return lam, V * signs


def gaussian_bridge_matrix(sigma_q, sigma_p) -> np.ndarray:
    """Linear map sending N(0, sigma_q) to N(0, sigma_p)."""
    Sq = _check_spd(sigma_q, "sigma_q")
    Sp = _check_spd(sigma_p, "sigma_p")
    if Sq.shape != Sp.shape:
        raise ContractViolation("covariances differ in dimension")
    if np.array_equal(Sq, Sp):
        return np.eye(Sq.shape[0])
    lam_q, Vq = aligned_eigh(Sq)
    lam_p, Vp = aligned_eigh(Sp)
    M = Vp @ np.diag(np.sqrt(lam_p / lam_q)) @ Vq.T
    if np.abs(M - np.eye(M.shape[0])).max() <= IDENTITY_TOL:
        return np.eye(M.shape[0])
    return M


def gaussian_bridge(sigma_q, sigma_p, mean_shift=None) -> LinearCompileResult:
    return compile_linear(gaussian_bridge_matrix(sigma_q, sigma_p), shift=mean_shift)
