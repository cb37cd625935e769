"""Reproducible experiment runners that write CSV tables plus a JSON manifest."""

from __future__ import annotations

import contextlib
import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from . import __version__
from .capacity import scaling_study
from .construct1d import TransportPushforward, approximate_target_1d, cdf_transport
from .densities import (
    Gaussian1D,
    GaussianD,
    MixtureGaussianD,
    bimodal_target,
    full_support_relaxation,
    twin_bump_target,
)
from .errors import ContractViolation, FlowcapError
from .flows import FlowStack, Planar, Pushforward
from .metrics import l1_grid_1d

GRID_2D = 201

# name -> default parameters; anything else in a config is rejected
DEFAULTS = {
    "fig1": {"eps": 0.1, "points": 2001},
    "fig3": {"pieces": [50, 300], "eps": 0.05, "points": 2001},
    "topo_relu_2d": {"grid": GRID_2D, "spread": 2.5, "component_scale": 0.6},
    "topo_tanh_2d": {"grid": GRID_2D},
    "scaling_householder": {"kappa": 1.0, "dims": [64, 128, 256, 512], "gap": 1.0},
    "scaling_local_planar": {"tau": 0.5, "c_h": 2.0, "dims": [16, 32, 64, 128, 256], "gap": 1.0},
}


@dataclass
class ExperimentConfig:
    name: str
    parameters: dict = field(default_factory=dict)
    seed: int = 0
    output_dir: str = "out"

    def resolved(self) -> dict:
        if self.name not in DEFAULTS:
            raise ContractViolation(f"unknown experiment {self.name!r}; choose from {sorted(DEFAULTS)}")
        defaults = DEFAULTS[self.name]
        unknown = set(self.parameters) - set(defaults)
        if unknown:
            raise ContractViolation(f"{self.name} does not take parameters {sorted(unknown)}")
        params = {**defaults, **self.parameters}
        for key, default in defaults.items():
            value = params[key]
            if isinstance(default, list):
                if not isinstance(value, (list, tuple)) or not all(isinstance(v, (int, float)) for v in value):
                    raise ContractViolation(f"{self.name}.{key} must be a list of numbers")
                params[key] = [type(default[0])(v) for v in value]
            elif not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ContractViolation(f"{self.name}.{key} must be a number")
            else:
                params[key] = type(default)(value)
        return params

    def hash(self) -> str:
        blob = json.dumps({"name": self.name, "parameters": self.resolved(), "seed": self.seed}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


@contextlib.contextmanager
def _stage(name):
    try:
        yield
    except FlowcapError as exc:
        exc.args = (f"stage {name}: {exc.args[0] if exc.args else ''}",) + exc.args[1:]
        raise


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path: Path, header, rows) -> str:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path.name


def _write_grid(path: Path, X, Y, V) -> str:
    return _write_csv(path, ["x", "y", "value"], zip(X.ravel(), Y.ravel(), V.ravel()))


# ---------------------------------------------------------------------------
# Individual experiments
# ---------------------------------------------------------------------------


def _fig1(params, rng, out: Path):
    with _stage("relaxation"):
        p = twin_bump_target()
        relaxed = full_support_relaxation(p, params["eps"])
    with _stage("transport"):
        push = TransportPushforward(cdf_transport(Gaussian1D(0.0, 1.0), relaxed))
    with _stage("l1"):
        est = l1_grid_1d(p, push)
    x = np.linspace(-4.5, 4.5, params["points"])
    files = [_write_csv(out / "fig1_curves.csv", ["x", "p", "p_relaxed", "p_tilde"],
                        zip(x, p.density(x), relaxed.density(x), push.density(x)))]
    return files, {"l1": est.value, "eps": params["eps"]}


def _fig3(params, rng, out: Path):
    p = bimodal_target()
    x = np.linspace(p.lo - 0.5, p.hi + 0.5, params["points"])
    files, summary = [], {"l1": {}}
    for n in params["pieces"]:
        with _stage(f"approximate[{n}]"):
            approx = approximate_target_1d(p, params["eps"], int(n))
        files.append(_write_csv(out / f"fig3_{n}.csv", ["x", "p", "q_pwc", "q_pwg"],
                                zip(x, p.density(x), approx.pwc.density(x), approx.pwg.density(x))))
        summary["l1"][str(n)] = approx.achieved_l1
        summary.setdefault("layers", {})[str(n)] = len(approx.stack)
    return files, summary


def four_peak_mixture(spread: float, scale: float) -> MixtureGaussianD:
    corners = spread * np.array([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]])
    cov = scale**2 * np.eye(2)
    return MixtureGaussianD([0.25, 0.2, 0.3, 0.25], tuple(GaussianD(c, cov) for c in corners))


def _window(Z, k=6.0):
    m, s = Z.mean(axis=0), Z.std(axis=0)
    return m - k * s, m + k * s


def _grid(lo, hi, n):
    xs, ys = np.linspace(lo[0], hi[0], n), np.linspace(lo[1], hi[1], n)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    return X, Y, np.column_stack([X.ravel(), Y.ravel()])


def _local_maxima(V):
    """(row, col) of strict interior local maxima on a grid."""
    core = V[1:-1, 1:-1]
    is_max = np.ones_like(core, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di or dj:
                is_max &= core > V[1 + di : V.shape[0] - 1 + di, 1 + dj : V.shape[1] - 1 + dj]
    rows, cols = np.nonzero(is_max)
    return rows + 1, cols + 1


def _refine_peak(dist, z0):
    res = optimize.minimize(lambda z: -dist._log_density(z[None])[0], z0,
                            jac=lambda z: -dist._grad_log_density(z[None])[0], method="BFGS")
    return res.x


def _topo_relu_2d(params, rng, out: Path):
    q = four_peak_mixture(params["spread"], params["component_scale"])
    # a ReLU planar layer whose hinge passes between the peaks
    f = FlowStack((Planar([0.9, -0.4], [0.8, 0.6], 0.3, "relu"),))
    push = Pushforward(q, f)
    n = params["grid"]
    with _stage("grids"):
        Zs = q._sample(rng, 20_000)
        X, Y, P = _grid(*_window(Zs), n)
        qv = np.exp(q._log_density(P)).reshape(n, n)
        FX, FY, FP = _grid(*_window(f._forward(Zs)[0]), n)
        pv = np.exp(push._log_density(FP)).reshape(n, n)
    with _stage("peaks"):
        r, c = _local_maxima(qv)
        order = np.argsort(-qv[r, c])[:4]
        peaks = np.array([_refine_peak(q, [X[i, j], Y[i, j]]) for i, j in zip(r[order], c[order])])
        images = f._forward(peaks)[0]
        pr, pc = _local_maxima(pv)
        cells = np.column_stack([FX[pr, pc], FY[pr, pc]])
        step = np.array([FX[0, 1] - FX[0, 0], FY[1, 0] - FY[0, 0]])
        offsets = np.abs(images[:, None, :] - cells[None, :, :]) / step
        nearest = np.argmin(offsets.max(axis=2), axis=1)
        cell_dist = offsets[np.arange(len(images)), nearest].max(axis=1)
    files = [
        _write_grid(out / "topo_relu_q.csv", X, Y, qv),
        _write_grid(out / "topo_relu_push.csv", FX, FY, pv),
        _write_csv(
            out / "topo_relu_peaks.csv",
            ["q_peak_x", "q_peak_y", "image_x", "image_y", "push_peak_x", "push_peak_y", "cell_distance"],
            [(*pk, *im, *cells[k], cd) for pk, im, k, cd in zip(peaks, images, nearest, cell_dist)],
        ),
    ]
    return files, {"max_cell_distance": float(cell_dist.max()), "n_peaks": int(len(peaks))}


def _topo_tanh_2d(params, rng, out: Path):
    q = GaussianD([0.0, 0.0], [[1.0, 0.3], [0.3, 0.8]])
    w = np.array([0.7, -0.5])
    f = FlowStack((Planar([1.2, 0.6], w, 0.2, "tanh"),))
    push = Pushforward(q, f)
    n = params["grid"]
    with _stage("grids"):
        Zs = q._sample(rng, 20_000)
        X, Y, P = _grid(*_window(Zs), n)
        qv = q._log_density(P)
        FX, FY, FP = _grid(*_window(f._forward(Zs)[0]), n)
        pv = np.exp(push._log_density(FP)).reshape(n, n)
        def log_ratio(Z):
            return push._log_density(f._forward(Z)[0]) - q._log_density(Z)

        diff = log_ratio(P).reshape(n, n)
    with _stage("direction"):
        # central differences at every grid point; the gradient must stay parallel to w
        h = 1e-5
        G = np.column_stack([(log_ratio(P + h * e) - log_ratio(P - h * e)) / (2 * h) for e in np.eye(2)])
        norm = np.linalg.norm(G, axis=1)
        strong = norm > 1e-4 * norm.max()
        cos = np.abs(G[strong] @ w) / (norm[strong] * np.linalg.norm(w))
    files = [
        _write_grid(out / "topo_tanh_q.csv", X, Y, np.exp(qv).reshape(n, n)),
        _write_grid(out / "topo_tanh_push.csv", FX, FY, pv),
        _write_grid(out / "topo_tanh_logratio.csv", X, Y, diff),
    ]
    return files, {"min_abs_cosine_to_w": float(cos.min()), "cells_checked": int(strong.sum())}


def _scaling(family):
    def run(params, rng, out: Path):
        if family == "householder":
            table = scaling_study("householder", params["dims"], gap=params["gap"], kappa=params["kappa"])
        else:
            table = scaling_study("local_planar", params["dims"], gap=params["gap"], tau=params["tau"], c_h=params["c_h"])
        rows = [(r["d"], r["lhat_bound"], r["depth_lb"], table.slope) for r in table.rows]
        files = [_write_csv(out / f"scaling_{family}.csv", ["d", "lhat_bound", "depth_lb", "slope_estimate"], rows)]
        return files, {"slope": table.slope}

    return run


RUNNERS = {
    "fig1": _fig1,
    "fig3": _fig3,
    "topo_relu_2d": _topo_relu_2d,
    "topo_tanh_2d": _topo_tanh_2d,
    "scaling_householder": _scaling("householder"),
    "scaling_local_planar": _scaling("local_planar"),
}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_experiment(config: ExperimentConfig) -> dict:
    """Run one experiment and return its manifest (also written to manifest_<name>.json)."""
    params = config.resolved()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    files, summary = RUNNERS[config.name](params, rng, out)
    manifest = {
        "experiment": config.name,
        "parameters": params,
        "seed": config.seed,
        "config_hash": config.hash(),
        "version": __version__,
        "files": {name: _sha256(out / name) for name in files},
        "summary": summary,
    }
    with open(out / f"manifest_{config.name}.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


__all__ = ["ExperimentConfig", "run_experiment", "DEFAULTS", "four_peak_mixture"]
