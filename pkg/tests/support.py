"""Random flow and density generators plus independent numerical oracles."""

from __future__ import annotations

import numpy as np

from flowcap.densities import GaussianD, MixtureGaussianD
from flowcap.flows import FlowStack, Householder, Planar, Radial, Sylvester

ACTIVATIONS = ("relu", "tanh", "sigmoid", "arctan")
SUP_SLOPE = {"relu": 1.0, "tanh": 1.0, "sigmoid": 0.25, "arctan": 1.0}


def random_planar(d, h, rng, scale=1.0):
    u = scale * rng.normal(size=d)
    w = rng.normal(size=d)
    # keep u.w * sup h' comfortably above -1
    uw = float(u @ w)
    floor = -0.8 / SUP_SLOPE[h]
    if uw < floor:
        u = u + (floor - uw) * w / float(w @ w)
    return Planar(u, w, float(rng.normal()), h)


def random_sylvester(d, m, h, rng):
    B = rng.normal(size=(d, m))
    M = np.triu(rng.normal(scale=0.5, size=(m, m)), 1)
    M[np.diag_indices(m)] = rng.uniform(-0.7, 1.5, size=m) / SUP_SLOPE[h]
    # A chosen so that B^T A = M exactly
    A = B @ np.linalg.solve(B.T @ B, M)
    return Sylvester(A, B, rng.normal(size=m), h)


def random_radial(d, rng):
    a = rng.uniform(0.5, 2.0)
    b = rng.uniform(-0.7 * a, 2.0)
    return Radial(a, b, rng.normal(size=d))


def random_householder(d, rng):
    return Householder.from_direction(rng.normal(size=d))


def random_layer(variant, d, rng, h="tanh"):
    if variant == "planar":
        return random_planar(d, h, rng)
    if variant == "sylvester":
        return random_sylvester(d, max(1, d // 2) if d > 1 else 0, h, rng)
    if variant == "radial":
        return random_radial(d, rng)
    if variant == "householder":
        return random_householder(d, rng)
    raise ValueError(variant)


def random_relu_stack(d, n_layers, rng):
    layers = []
    for _ in range(n_layers):
        kind = rng.choice(["planar", "sylvester", "householder"] if d > 1 else ["planar", "householder"])
        if kind == "planar":
            layers.append(random_planar(d, "relu", rng))
        elif kind == "sylvester":
            layers.append(random_sylvester(d, int(rng.integers(1, d)), "relu", rng))
        else:
            layers.append(random_householder(d, rng))
    return FlowStack(tuple(layers), d)


def random_spd(d, rng, cond=10.0):
    Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    lam = np.exp(rng.uniform(0.0, np.log(cond), size=d))
    return Q @ np.diag(lam) @ Q.T


def random_mog(d, k, rng, shared=False):
    cov = random_spd(d, rng, 4.0)
    comps = []
    for _ in range(k):
        c = cov if shared else random_spd(d, rng, 4.0)
        comps.append(GaussianD(rng.normal(scale=2.0, size=d), c))
    w = rng.dirichlet(np.ones(k) * 2.0)
    w = w / w.sum()
    return MixtureGaussianD(w, tuple(comps))


def central_gradient(fn, Z, h=1e-5):
    """Central differences of a scalar batch function fn: (n, d) -> (n,)."""
    Z = np.asarray(Z, dtype=float)
    G = np.empty_like(Z)
    for i in range(Z.shape[1]):
        e = np.zeros(Z.shape[1])
        e[i] = h
        G[:, i] = (fn(Z + e) - fn(Z - e)) / (2 * h)
    return G


def relative_error(analytic, numeric):
    scale = np.maximum(np.linalg.norm(numeric, axis=-1), 1.0)
    return np.linalg.norm(np.atleast_2d(analytic - numeric), axis=-1) / scale


def grid_l1_2d(logpdf_a, logpdf_b, lo, hi, n=801):
    """Midpoint-rule l1 distance between two 2D densities on a box."""
    xs = np.linspace(lo[0], hi[0], n + 1)
    ys = np.linspace(lo[1], hi[1], n + 1)
    cx, cy = 0.5 * (xs[1:] + xs[:-1]), 0.5 * (ys[1:] + ys[:-1])
    X, Y = np.meshgrid(cx, cy, indexing="ij")
    P = np.column_stack([X.ravel(), Y.ravel()])
    cell = (xs[1] - xs[0]) * (ys[1] - ys[0])
    return float(np.sum(np.abs(np.exp(logpdf_a(P)) - np.exp(logpdf_b(P)))) * cell)


def trapezoid_l1_1d(pdf_a, pdf_b, lo, hi, n=200_001):
    x = np.linspace(lo, hi, n)
    return float(np.trapezoid(np.abs(pdf_a(x) - pdf_b(x)), x))
