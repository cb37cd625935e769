"""Invertible layers, stacks of layers, and pushforward densities.

Every layer works on batches ``Z`` of shape ``(n, d)`` and reports the log
absolute Jacobian determinant per row.  ``FlowStack`` adds the public
shape conventions of :mod:`flowcap.densities` (for ``d = 1`` the trailing
axis is optional).
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .densities import Density, _as_float_array
from .errors import (
    ContractViolation,
    InvertibilityError,
    NonSmoothPointError,
    NumericInversionError,
)

FLOW_SCHEMA = "flowcap-flow-1"
GUARD_SLACK = 1e-9
EXCLUSION_MARGIN = 1e-8
MAX_NEWTON = 100


# ---------------------------------------------------------------------------
# Nonlinearities
# ---------------------------------------------------------------------------


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_d(x):
    return (x >= 0.0).astype(float)


def _zero(x):
    return np.zeros_like(np.asarray(x, dtype=float))


def _tanh_d(x):
    t = np.tanh(x)
    return 1.0 - t * t


def _tanh_d2(x):
    t = np.tanh(x)
    return -2.0 * t * (1.0 - t * t)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def _sigmoid_d(x):
    s = _sigmoid(x)
    return s * (1.0 - s)


def _sigmoid_d2(x):
    s = _sigmoid(x)
    return s * (1.0 - s) * (1.0 - 2.0 * s)


def _arctan_d(x):
    return 1.0 / (1.0 + np.asarray(x, dtype=float) ** 2)


def _arctan_d2(x):
    x = np.asarray(x, dtype=float)
    return -2.0 * x / (1.0 + x * x) ** 2


@dataclass(frozen=True)
class Nonlinearity:
    """Scalar activation ``h`` with first and second derivatives.

    ``sup_slope`` bounds h' from above (h' >= 0 is assumed for every kind),
    ``bound`` bounds |h| when finite, and ``c_h`` is the decay constant in
    |h'(x)| <= c_h / (1 + |x|) for the smooth saturating kinds.
    """

    kind: str
    fn: Callable = field(repr=False)
    d1: Callable = field(repr=False)
    d2: Callable = field(repr=False)
    sup_slope: float = 1.0
    bound: float = np.inf
    c_h: float | None = None

    def __call__(self, x):
        return self.fn(x)

    @property
    def is_relu(self) -> bool:
        return self.kind == "relu"

    def to_json(self) -> str:
        if self.kind == "custom":
            raise ContractViolation("custom nonlinearities cannot be serialized")
        return self.kind

    @classmethod
    def custom(cls, fn, d1, d2, sup_slope, bound=np.inf, c_h=None):
        return cls("custom", fn, d1, d2, float(sup_slope), float(bound), c_h)


_NONLINEARITIES = {
    "relu": Nonlinearity("relu", _relu, _relu_d, _zero, 1.0, np.inf, None),
    "tanh": Nonlinearity("tanh", np.tanh, _tanh_d, _tanh_d2, 1.0, 1.0, 2.0),
    "sigmoid": Nonlinearity("sigmoid", _sigmoid, _sigmoid_d, _sigmoid_d2, 0.25, 1.0, 1.0),
    "arctan": Nonlinearity("arctan", np.arctan, _arctan_d, _arctan_d2, 1.0, np.pi / 2, np.pi / 2),
}


def nonlinearity(kind) -> Nonlinearity:
    if isinstance(kind, Nonlinearity):
        return kind
    try:
        return _NONLINEARITIES[kind]
    except KeyError as exc:
        raise ContractViolation(f"unknown nonlinearity {kind!r}") from exc


RELU = _NONLINEARITIES["relu"]
TANH = _NONLINEARITIES["tanh"]


def _solve_monotone_scalar(g, dg, c, lo, hi):
    """Solve g(s) = c for increasing g, Newton steps kept inside a bracket."""
    c = np.asarray(c, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), c.shape).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), c.shape).copy()
    for _ in range(60):
        bad = g(lo) > c
        if not bad.any():
            break
        lo[bad] -= 2.0 * (hi[bad] - lo[bad]) + 1.0
    for _ in range(60):
        bad = g(hi) < c
        if not bad.any():
            break
        hi[bad] += 2.0 * (hi[bad] - lo[bad]) + 1.0
    s = np.clip(c, lo, hi)
    done = np.zeros(c.shape, dtype=bool)
    for _ in range(MAX_NEWTON):
        val = g(s) - c
        lo = np.where(val < 0, s, lo)
        hi = np.where(val > 0, s, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            s_new = s - val / dg(s)
        outside = ~np.isfinite(s_new) | (s_new <= lo) | (s_new >= hi)
        s_new = np.where(outside, 0.5 * (lo + hi), s_new)
        tiny = np.abs(s_new - s) <= 4e-16 * (1.0 + np.abs(s))
        done |= (val == 0) | tiny | (hi - lo <= 4e-16 * (1.0 + np.abs(s)))
        s = np.where(done, s, s_new)
        if done.all():
            return s
    raise NumericInversionError(
        f"scalar inversion did not converge in {MAX_NEWTON} iterations"
    )


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


class FlowLayer(ABC):
    dim: int
    variant: str

    @abstractmethod
    def forward(self, Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (Y, log|det J|) for a batch of rows."""

    @abstractmethod
    def inverse(self, Y: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def jacobian(self, Z: np.ndarray) -> np.ndarray:
        """Batch of Jacobians, shape (n, d, d)."""

    @abstractmethod
    def grad_logdet(self, Z: np.ndarray) -> np.ndarray:
        """Gradient of log|det J| with respect to the layer input."""

    def kink_distance(self, Z: np.ndarray) -> np.ndarray:
        """Distance to the nearest point where the layer is not smooth."""
        return np.full(Z.shape[0], np.inf)

    @property
    def piecewise_linear(self) -> bool:
        return False

    @abstractmethod
    def to_dict(self) -> dict: ...


def _vec(x, name):
    v = np.atleast_1d(np.asarray(x, dtype=float)).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise ContractViolation(f"{name} must be finite")
    return v


@dataclass(frozen=True, eq=False)
class Planar(FlowLayer):
    """z -> z + u * h(w.z + b)."""

    u: np.ndarray
    w: np.ndarray
    b: float = 0.0
    h: Nonlinearity = RELU

    variant = "planar"

    def __post_init__(self):
        u, w = _vec(self.u, "u"), _vec(self.w, "w")
        if u.shape != w.shape:
            raise ContractViolation("u and w must have the same length")
        h = nonlinearity(self.h)
        uw = float(u @ w)
        if uw * h.sup_slope <= -1.0 + GUARD_SLACK and uw < 0:
            raise InvertibilityError(
                f"planar layer not invertible: u.w * sup h' = {uw * h.sup_slope:.6g} <= -1"
            )
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "_uw", uw)

    @property
    def dim(self):
        return self.u.shape[0]

    @property
    def piecewise_linear(self):
        return self.h.is_relu

    def _pre(self, Z):
        return Z @ self.w + self.b

    def forward(self, Z):
        s = self._pre(Z)
        det = 1.0 + self._uw * self.h.d1(s)
        if np.any(det <= 0):
            raise InvertibilityError("planar determinant factor is not positive")
        return Z + self.h(s)[:, None] * self.u, np.log(det)

    def inverse(self, Y):
        c = self._pre(Y)
        if self.h.is_relu:
            s = np.where(c >= 0.0, c / (1.0 + self._uw), c)
        elif self._uw == 0.0:
            s = c
        else:
            span = abs(self._uw) * min(self.h.bound, 1e6) + 1.0
            s = _solve_monotone_scalar(
                lambda t: t + self._uw * self.h(t),
                lambda t: 1.0 + self._uw * self.h.d1(t),
                c,
                c - span,
                c + span,
            )
        return Y - self.h(s)[:, None] * self.u

    def jacobian(self, Z):
        s = self._pre(Z)
        eye = np.eye(self.dim)
        return eye + self.h.d1(s)[:, None, None] * np.outer(self.u, self.w)[None]

    def grad_logdet(self, Z):
        s = self._pre(Z)
        det = 1.0 + self._uw * self.h.d1(s)
        return (self._uw * self.h.d2(s) / det)[:, None] * self.w

    def kink_distance(self, Z):
        if not self.h.is_relu:
            return super().kink_distance(Z)
        nw = np.linalg.norm(self.w)
        if nw == 0.0:
            return np.full(Z.shape[0], np.inf)
        return np.abs(self._pre(Z)) / nw

    def to_dict(self):
        return {
            "variant": "planar",
            "u": self.u.tolist(),
            "w": self.w.tolist(),
            "b": self.b,
            "h": self.h.to_json(),
        }


def _triangle(M, rtol=1e-12):
    """'upper', 'lower' or None, ignoring entries below rtol * max|M|."""
    tol = rtol * max(np.abs(M).max(), 1e-300)
    if np.all(np.abs(np.tril(M, -1)) <= tol):
        return "upper"
    if np.all(np.abs(np.triu(M, 1)) <= tol):
        return "lower"
    return None


@dataclass(frozen=True, eq=False)
class Sylvester(FlowLayer):
    """z -> z + A h(B^T z + b) with d x m matrices A, B and m < d.

    Accepted when ``B^T A`` is triangular with diagonal entries above
    ``-1/sup h'`` (coordinatewise monotone inner map), or when
    ``sup h' * ||B^T A||_2 < 1`` (contractive inner map).
    """

    A: np.ndarray
    B: np.ndarray
    b: np.ndarray
    h: Nonlinearity = RELU

    variant = "sylvester"

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        b = _vec(self.b, "b")
        d, m = A.shape
        if B.shape != (d, m) or b.shape != (m,):
            raise ContractViolation("A and B must be d x m and b of length m")
        if m >= d:
            raise ContractViolation(f"Sylvester flows need m < d (got m={m}, d={d})")
        h = nonlinearity(self.h)
        M = B.T @ A
        tri = _triangle(M)
        if tri:
            ok = bool(np.all(1.0 + h.sup_slope * np.minimum(np.diag(M), 0.0) > GUARD_SLACK))
        else:
            ok = h.sup_slope * np.linalg.norm(M, 2) < 1.0 - GUARD_SLACK
        if not ok:
            raise InvertibilityError("Sylvester layer fails the invertibility guard")
        for name, val in (("A", A), ("B", B), ("b", b), ("h", h), ("_M", M), ("_tri", tri)):
            object.__setattr__(self, name, val)

    @property
    def dim(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.A.shape[1]

    @property
    def piecewise_linear(self):
        return self.h.is_relu

    def _pre(self, Z):
        return Z @ self.B + self.b

    def _inner_jac(self, T):
        return np.eye(self.m)[None] + self.h.d1(T)[:, :, None] * self._M[None]

    def forward(self, Z):
        T = self._pre(Z)
        sign, logdet = np.linalg.slogdet(self._inner_jac(T))
        if np.any(sign <= 0):
            raise InvertibilityError("Sylvester determinant is not positive")
        return Z + self.h(T) @ self.A.T, logdet

    def _solve_inner(self, C):
        """Solve t + M h(t) = c row by row."""
        M, h = self._M, self.h
        m = self.m
        if self._tri:
            upper = self._tri == "upper"
            order = range(m - 1, -1, -1) if upper else range(m)
            M = np.triu(M) if upper else np.tril(M)
            T = np.zeros_like(C)
            for i in order:
                others = np.delete(np.arange(m), i)
                rest = h(T[:, others]) @ M[i, others] if m > 1 else 0.0
                target = C[:, i] - rest
                mii = M[i, i]
                if h.is_relu:
                    T[:, i] = np.where(target >= 0, target / (1.0 + mii), target)
                elif mii == 0:
                    T[:, i] = target
                else:
                    span = abs(mii) * min(h.bound, 1e6) + 1.0
                    T[:, i] = _solve_monotone_scalar(
                        lambda t: t + mii * h(t),
                        lambda t: 1.0 + mii * h.d1(t),
                        target,
                        target - span,
                        target + span,
                    )
            return self._polish(T, C)
        # contractive case: damped Newton, every row independently
        T = C.copy()
        for _ in range(MAX_NEWTON):
            R = T + h(T) @ M.T - C
            err = np.linalg.norm(R, axis=1)
            if np.all(err <= 1e-15 * (1.0 + np.linalg.norm(C, axis=1))):
                return T
            J = np.eye(m)[None] + M[None] * h.d1(T)[:, None, :]
            step = np.linalg.solve(J, R[..., None])[..., 0]
            alpha = np.ones(T.shape[0])
            for _ in range(30):
                T_new = T - alpha[:, None] * step
                err_new = np.linalg.norm(T_new + h(T_new) @ M.T - C, axis=1)
                worse = err_new > err
                if not worse.any():
                    break
                alpha = np.where(worse, 0.5 * alpha, alpha)
            T = T - alpha[:, None] * step
        R = T + h(T) @ M.T - C
        if np.all(np.linalg.norm(R, axis=1) <= 1e-12 * (1.0 + np.linalg.norm(C, axis=1))):
            return T
        raise NumericInversionError(f"Sylvester inversion did not converge in {MAX_NEWTON} iterations")

    def _polish(self, T, C):
        """One full Newton step to absorb the entries dropped from a near-triangular M."""
        R = T + self.h(T) @ self._M.T - C
        J = np.eye(self.m)[None] + self._M[None] * self.h.d1(T)[:, None, :]
        return T - np.linalg.solve(J, R[..., None])[..., 0]

    def inverse(self, Y):
        T = self._solve_inner(self._pre(Y))
        return Y - self.h(T) @ self.A.T

    def jacobian(self, Z):
        D = self.h.d1(self._pre(Z))
        return np.eye(self.dim)[None] + np.einsum("ik,nk,jk->nij", self.A, D, self.B)

    def grad_logdet(self, Z):
        T = self._pre(Z)
        K = self._inner_jac(T)
        MK = self._M[None] @ np.linalg.inv(K)
        v = self.h.d2(T) * np.diagonal(MK, axis1=1, axis2=2)
        return v @ self.B.T

    def kink_distance(self, Z):
        if not self.h.is_relu:
            return super().kink_distance(Z)
        norms = np.linalg.norm(self.B, axis=0)
        with np.errstate(divide="ignore"):
            dist = np.abs(self._pre(Z)) / norms
        dist[:, norms == 0] = np.inf
        return dist.min(axis=1)

    def to_dict(self):
        return {
            "variant": "sylvester",
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "b": self.b.tolist(),
            "h": self.h.to_json(),
        }


@dataclass(frozen=True, eq=False)
class Radial(FlowLayer):
    """z -> z + b/(a + r) (z - z0) with r = |z - z0|, a > 0, b > -a."""

    a: float
    b: float
    z0: np.ndarray

    variant = "radial"

    def __post_init__(self):
        z0 = _vec(self.z0, "z0")
        a, b = float(self.a), float(self.b)
        if not a > 0:
            raise ContractViolation("radial flow needs a > 0")
        if not 1.0 + b / a > GUARD_SLACK:
            raise InvertibilityError("radial flow needs 1 + b/a > 0")
        object.__setattr__(self, "z0", z0)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def dim(self):
        return self.z0.shape[0]

    def _log_det_from_r(self, r):
        a, b, d = self.a, self.b, self.dim
        beta = b / (a + r)
        return (d - 1) * np.log1p(beta) + np.log1p(a * b / (a + r) ** 2)

    def forward(self, Z):
        D = Z - self.z0
        r = np.linalg.norm(D, axis=1)
        beta = self.b / (self.a + r)
        return Z + beta[:, None] * D, self._log_det_from_r(r)

    def inverse(self, Y):
        a, b = self.a, self.b
        E = Y - self.z0
        rho = np.linalg.norm(E, axis=1)
        # rho = r + b r/(a + r)  <=>  r^2 + (a + b - rho) r - a rho = 0
        B = a + b - rho
        disc = np.sqrt(B * B + 4.0 * a * rho)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(B >= 0, 2.0 * a * rho / (B + disc), 0.5 * (disc - B))
            # one Newton polish on rho(r) = r + b r/(a + r)
            g = r + b * r / (a + r) - rho
            r = r - g / (1.0 + a * b / (a + r) ** 2)
            scale = np.where(rho > 0, r / rho, 0.0)
        return self.z0 + scale[:, None] * E

    def jacobian(self, Z):
        a, b = self.a, self.b
        D = Z - self.z0
        r = np.linalg.norm(D, axis=1)
        beta = b / (a + r)
        dbeta = -b / (a + r) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(r > 0, dbeta / r, 0.0)
        eye = np.eye(self.dim)[None]
        return (1.0 + beta)[:, None, None] * eye + coef[:, None, None] * np.einsum("ni,nj->nij", D, D)

    def grad_logdet(self, Z):
        a, b, d = self.a, self.b, self.dim
        D = Z - self.z0
        r = np.linalg.norm(D, axis=1)
        beta = b / (a + r)
        dbeta = -b / (a + r) ** 2
        inner = 1.0 + a * b / (a + r) ** 2
        dL = (d - 1) * dbeta / (1.0 + beta) + (-2.0 * a * b / (a + r) ** 3) / inner
        with np.errstate(divide="ignore", invalid="ignore"):
            unit = np.where(r[:, None] > 0, D / r[:, None], 0.0)
        return dL[:, None] * unit

    def kink_distance(self, Z):
        if self.b == 0:
            return np.full(Z.shape[0], np.inf)
        return np.linalg.norm(Z - self.z0, axis=1)

    def to_dict(self):
        return {"variant": "radial", "a": self.a, "b": self.b, "z0": self.z0.tolist()}


@dataclass(frozen=True, eq=False)
class Householder(FlowLayer):
    """Reflection z -> z - 2 v (v.z) for a unit vector v."""

    v: np.ndarray

    variant = "householder"

    def __post_init__(self):
        v = _vec(self.v, "v")
        if abs(np.linalg.norm(v) - 1.0) > 1e-12:
            raise ContractViolation(f"Householder vector must have unit norm (got {np.linalg.norm(v)!r})")
        object.__setattr__(self, "v", v)

    @classmethod
    def from_direction(cls, x):
        x = _vec(x, "v")
        return cls(x / np.linalg.norm(x))

    @property
    def dim(self):
        return self.v.shape[0]

    @property
    def piecewise_linear(self):
        return True

    def forward(self, Z):
        return Z - 2.0 * (Z @ self.v)[:, None] * self.v, np.zeros(Z.shape[0])

    def inverse(self, Y):
        return self.forward(Y)[0]

    def jacobian(self, Z):
        H = np.eye(self.dim) - 2.0 * np.outer(self.v, self.v)
        return np.broadcast_to(H, (Z.shape[0],) + H.shape).copy()

    def grad_logdet(self, Z):
        return np.zeros_like(Z)

    def to_dict(self):
        return {"variant": "householder", "v": self.v.tolist()}


# ---------------------------------------------------------------------------
# Stacks
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FlowStack:
    """Layers applied first to last; the empty stack is the identity."""

    layers: tuple = ()
    dim: int | None = None

    def __post_init__(self):
        layers = tuple(self.layers)
        dims = {layer.dim for layer in layers}
        if self.dim is not None:
            dims.add(int(self.dim))
        if len(dims) > 1:
            raise ContractViolation(f"layers disagree on dimension: {sorted(dims)}")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "dim", dims.pop() if dims else None)

    def __len__(self):
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    def then(self, other: "FlowStack | FlowLayer") -> "FlowStack":
        more = other.layers if isinstance(other, FlowStack) else (other,)
        return FlowStack(self.layers + tuple(more), self.dim)

    # batch API ---------------------------------------------------------------
    def _forward(self, Z):
        logdet = np.zeros(Z.shape[0])
        for i, layer in enumerate(self.layers):
            try:
                Z, ld = layer.forward(Z)
            except InvertibilityError as exc:
                raise InvertibilityError(f"layer {i}: {exc}", layer_index=i) from exc
            logdet = logdet + ld
        return Z, logdet

    def _inverse(self, Y):
        for layer in reversed(self.layers):
            Y = layer.inverse(Y)
        return Y

    def _trajectory(self, Z):
        """Inputs to each layer, plus the final output."""
        out = [Z]
        for layer in self.layers:
            Z = layer.forward(Z)[0]
            out.append(Z)
        return out

    def _jacobian(self, Z):
        J = np.broadcast_to(np.eye(Z.shape[1]), (Z.shape[0], Z.shape[1], Z.shape[1])).copy()
        for layer, Zt in zip(self.layers, self._trajectory(Z)):
            J = layer.jacobian(Zt) @ J
        return J

    def kink_distance(self, Z, relative=True):
        """Smallest scaled distance to a layer kink along the trajectory of each row."""
        best = np.full(Z.shape[0], np.inf)
        for layer, Zt in zip(self.layers, self._trajectory(Z)):
            dist = layer.kink_distance(Zt)
            if relative:
                dist = dist / (1.0 + np.linalg.norm(Zt, axis=1))
            best = np.minimum(best, dist)
        return best

    # public API --------------------------------------------------------------
    def _points(self, z):
        z = _as_float_array(z)
        d = self.dim
        if d is None:
            d = z.shape[-1] if z.ndim else 1
        if d == 1 and not (z.ndim >= 2 and z.shape[-1] == 1):
            return z.reshape(-1, 1), z.shape, False
        if z.ndim == 0 or z.shape[-1] != d:
            raise ContractViolation(f"expected points of dimension {d}, got shape {z.shape}")
        return z.reshape(-1, d), z.shape[:-1], True

    @staticmethod
    def _restore(X, lead, keep_axis):
        if not keep_axis:
            return X[:, 0].reshape(lead) if lead else float(X[0, 0])
        return X.reshape(lead + (X.shape[1],))

    def forward(self, z):
        Z, lead, keep = self._points(z)
        Y, ld = self._forward(Z)
        return self._restore(Y, lead, keep), (ld.reshape(lead) if lead else float(ld[0]))

    def inverse(self, y):
        Y, lead, keep = self._points(y)
        return self._restore(self._inverse(Y), lead, keep)

    def log_abs_det(self, z):
        return self.forward(z)[1]

    def jacobian(self, z):
        Z, lead, _ = self._points(z)
        J = self._jacobian(Z)
        return J.reshape(lead + J.shape[1:]) if lead else J[0]

    def to_dict(self):
        return {"schema": FLOW_SCHEMA, "layers": [layer.to_dict() for layer in self.layers]}


def as_stack(f) -> FlowStack:
    if isinstance(f, FlowStack):
        return f
    if isinstance(f, FlowLayer):
        return FlowStack((f,))
    if isinstance(f, Sequence):
        return FlowStack(tuple(f))
    raise ContractViolation(f"cannot interpret {type(f).__name__} as a flow")


def forward(stack, z):
    return as_stack(stack).forward(z)


def inverse(stack, y):
    return as_stack(stack).inverse(y)


# ---------------------------------------------------------------------------
# Pushforward densities
# ---------------------------------------------------------------------------


def _pushforward_score(stack: FlowStack, base: Density, Z: np.ndarray, margin: float) -> np.ndarray:
    """Score of the pushforward at f(Z), propagated layer by layer."""
    G = base._grad_log_density(Z)
    Zt = Z
    for i, layer in enumerate(stack.layers):
        dist = layer.kink_distance(Zt)
        bad = dist < margin * (1.0 + np.linalg.norm(Zt, axis=1))
        if np.any(bad):
            raise NonSmoothPointError(f"point within the exclusion band of layer {i}")
        J = layer.jacobian(Zt)
        rhs = G - layer.grad_logdet(Zt)
        G = np.linalg.solve(np.swapaxes(J, 1, 2), rhs[..., None])[..., 0]
        Zt = layer.forward(Zt)[0]
    return G


class Pushforward(Density):
    """Density of f(Z) for Z ~ base."""

    def __init__(self, base: Density, stack, margin: float = EXCLUSION_MARGIN):
        self.base = base
        self.stack = as_stack(stack)
        self.margin = margin
        if self.stack.dim is not None and self.stack.dim != base.dim:
            raise ContractViolation("flow and base density disagree on dimension")

    @property
    def dim(self):
        return self.base.dim

    def _log_density(self, Y):
        Z = self.stack._inverse(Y)
        _, logdet = self.stack._forward(Z)
        return self.base._log_density(Z) - logdet

    def _grad_log_density(self, Y):
        Z = self.stack._inverse(Y)
        return _pushforward_score(self.stack, self.base, Z, self.margin)

    def score_at_preimage(self, Z):
        """Score of the pushforward evaluated at f(z), given z directly."""
        Z = np.asarray(Z, dtype=float).reshape(-1, self.dim)
        return _pushforward_score(self.stack, self.base, Z, self.margin)

    def nonsmooth_distance(self, Y):
        Z = self.stack._inverse(np.asarray(Y, dtype=float).reshape(-1, self.dim))
        return np.minimum(self.stack.kink_distance(Z, relative=False), self.base.nonsmooth_distance(Z))

    def _sample(self, rng, n):
        return self.stack._forward(self.base._sample(rng, n))[0]

    # one-dimensional pushforwards inherit a CDF from the base
    def _orientation(self):
        flips = sum(isinstance(layer, Householder) for layer in self.stack.layers)
        return -1 if flips % 2 else 1

    def cdf(self, x):
        if self.dim != 1:
            return super().cdf(x)
        x = _as_float_array(x)
        z = self.stack._inverse(x.reshape(-1, 1))[:, 0]
        out = self.base.cdf(z) if self._orientation() > 0 else self.base.sf(z)
        return np.asarray(out).reshape(x.shape)

    def sf(self, x):
        if self.dim != 1:
            return super().cdf(x)  # raises: no CDF in several dimensions
        x = _as_float_array(x)
        z = self.stack._inverse(x.reshape(-1, 1))[:, 0]
        out = self.base.sf(z) if self._orientation() > 0 else self.base.cdf(z)
        return np.asarray(out).reshape(x.shape)

    def quantile(self, u):
        if self.dim != 1:
            return super().quantile(u)
        u = _as_float_array(u)
        level = u if self._orientation() > 0 else 1.0 - u
        z = np.asarray(self.base.quantile(level)).reshape(-1, 1)
        return self.stack._forward(z)[0][:, 0].reshape(u.shape)

    def kinks(self):
        pts = [np.asarray(self.base.kinks(), dtype=float)] if hasattr(self.base, "kinks") else []
        if pts and pts[0].size:
            pts = [self.stack._forward(pts[0].reshape(-1, 1))[0][:, 0]]
        # images of the activation points of 1D ReLU layers
        for i, layer in enumerate(self.stack.layers):
            if isinstance(layer, Planar) and layer.h.is_relu and layer.w[0] != 0:
                hinge = np.array([[-layer.b / layer.w[0]]])
                tail = FlowStack(self.stack.layers[i:])
                pts.append(tail._forward(hinge)[0][:, 0])
        return np.unique(np.concatenate(pts)) if pts else np.empty(0)


def pushforward_log_density(stack, base: Density, y):
    return Pushforward(base, stack).log_density(y)


def pushforward_grad_log_density(stack, base: Density, y, margin: float = EXCLUSION_MARGIN):
    return Pushforward(base, stack, margin).grad_log_density(y)
