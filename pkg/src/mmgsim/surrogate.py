"""Curve surrogates: fitting a Mixed-Attention or plain MLP regressor to device
curve samples, fit metrics and report/checkpoint I/O."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, ParamStore, Tensor, adam_step, backward, no_grad
from .devices import DeviceCurve
from .nets import build_net

NOISE_SIGMA = 0.002


@dataclass
class FitReport:
    rmse: float
    mae: float
    r2: float
    n: int

    def __post_init__(self):
        if self.rmse < 0 or self.mae < 0 or self.r2 > 1 + 1e-12:
            raise ValueError(f"inconsistent fit metrics {self}")


def metrics(y_true, y_pred) -> FitReport:
    y = np.asarray(y_true, dtype=float).ravel()
    f = np.asarray(y_pred, dtype=float).ravel()
    if y.shape != f.shape or y.size < 2:
        raise ValueError("metrics need two equal-length arrays with at least 2 entries")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("R2 is undefined when y_true has zero variance")
    err = y - f
    ss_res = float(np.sum(err ** 2))
    return FitReport(rmse=float(np.sqrt(ss_res / y.size)), mae=float(np.mean(np.abs(err))),
                     r2=1.0 - ss_res / ss_tot, n=int(y.size))


class CurveSurrogate:
    """A trained net with the input/target scaling it was fitted under."""

    def __init__(self, kind: str, seed: int = 0, hidden: int = 64, depth: int = 2):
        self.kind, self.seed, self.hidden, self.depth = kind, seed, hidden, depth
        self.store = ParamStore()
        self.net = build_net(kind, self.store, kind, 1, 1, np.random.default_rng(seed),
                             hidden=hidden, depth=depth)
        self.x_shift, self.x_scale = 0.0, 1.0
        self.y_shift, self.y_scale = 0.0, 1.0

    def forward(self, x: np.ndarray) -> Tensor:
        xs = (np.asarray(x, dtype=float).reshape(-1, 1) - self.x_shift) / self.x_scale
        return self.net(Tensor(xs))

    def predict(self, x) -> np.ndarray:
        with no_grad():
            out = self.forward(x).data.ravel()
        return out * self.y_scale + self.y_shift

    def to_dict(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, "hidden": self.hidden, "depth": self.depth,
                "x_shift": self.x_shift, "x_scale": self.x_scale,
                "y_shift": self.y_shift, "y_scale": self.y_scale,
                "params": self.store.to_dict()}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def from_dict(cls, d: dict) -> "CurveSurrogate":
        s = cls(d["kind"], d["seed"], d["hidden"], d["depth"])
        s.x_shift, s.x_scale = d["x_shift"], d["x_scale"]
        s.y_shift, s.y_scale = d["y_shift"], d["y_scale"]
        s.store.assign_from(d["params"])
        return s


def load_surrogate(path) -> CurveSurrogate:
    return CurveSurrogate.from_dict(json.loads(Path(path).read_text()))


@dataclass
class FitConfig:
    epochs: int = 3000
    lr: float = 3e-3
    lr_final: float = 3e-5
    batch_size: int = 64
    test_fraction: float = 0.2


@dataclass
class FitResult:
    model: CurveSurrogate
    report: FitReport
    train_report: FitReport
    loss_history: list = field(default_factory=list)
    split: dict = field(default_factory=dict)


def fit_curve(x, y, net_kind: str = "mixed", seed: int = 0, config: Optional[FitConfig] = None) -> FitResult:
    """Train on MSE with Adam and report metrics on a seeded 80/20 hold-out split."""
    cfg = config or FitConfig()
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError("x and y must have equal length")
    if x.size < 20:
        raise ValueError(f"need at least 20 samples, got {x.size}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("training data contains NaN or Inf")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(x.size)
    n_test = max(1, int(round(cfg.test_fraction * x.size)))
    test, train = perm[:n_test], perm[n_test:]

    model = CurveSurrogate(net_kind, seed)
    model.x_shift = float(x[train].min())
    model.x_scale = float(max(x[train].max() - x[train].min(), 1e-12))
    model.y_shift = float(y[train].mean())
    model.y_scale = float(max(y[train].std(), 1e-12))
    xt = x[train]
    yt = ((y[train] - model.y_shift) / model.y_scale).reshape(-1, 1)
    opt = AdamState(model.store, lr=cfg.lr)
    n = xt.size
    bs = min(cfg.batch_size, n)
    history = []
    decay = (cfg.lr_final / cfg.lr) ** (1.0 / max(cfg.epochs - 1, 1))
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            pred = model.forward(xt[idx])
            diff = ad.sub(pred, Tensor(yt[idx]))
            loss = ad.mean(ad.mul(diff, diff))
            backward(loss)
            adam_step(model.store, opt)
            total += loss.item() * idx.size
        history.append(total / n)
        opt.lr *= decay
    report = metrics(y[test], model.predict(x[test]))
    train_report = metrics(y[train], model.predict(x[train]))
    return FitResult(model, report, train_report, history,
                     {"train": train.tolist(), "test": test.tolist()})


def synthetic_samples(curve: DeviceCurve, n: int = 400, seed: int = 0, noise: float = NOISE_SIGMA) -> tuple:
    """Uniform inputs over the curve domain; targets are the relative curve value plus noise."""
    rng = np.random.default_rng(seed)
    lo, hi = curve.domain
    if curve.domain[0] == 0.0 and curve.origin == 1.0:
        lo = 0.1 * hi  # part-load curves are only characterized above 10% load
    x = rng.uniform(lo, hi, size=n)
    y = curve.relative_array(x) + noise * rng.standard_normal(n)
    return x, y


def fit_report_dict(curve_name: str, net_kind: str, seed: int, report: FitReport) -> dict:
    return {"curve_name": curve_name, "net_kind": net_kind, "seed": seed,
            "rmse": report.rmse, "mae": report.mae, "r2": report.r2, "n": report.n}
