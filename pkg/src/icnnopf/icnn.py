"""Fully connected input-convex networks with input skip connections.

Layer 1 is ``relu(H1 u + d1)``; layer ``k > 1`` is
``relu(Wk x_{k-1} + Hk u + dk)``; the head is linear,
``w_out . x_last + h_out . u + d_out``. Here ``u`` is the standardized input.
With every ``W`` (including ``w_out``) nonnegative the output is convex in
``u``: relu is convex and nondecreasing, and nonnegative combinations of
convex functions plus affine terms stay convex. The affine input scaler and
the positive output scale keep that property in the raw coordinates.

Setting ``convex=False`` gives the unconstrained baseline with the same
architecture. Gradients are hand-written reverse mode, with ``relu'(0) = 0``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._jsonio import dumps
from .losses import SQUARED

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class NetConfig:
    input_dim: int
    widths: tuple[int, ...]
    convex: bool = True
    seed: int = 0
    output_skip: bool = True

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if not self.widths or min(self.widths) < 1:
            raise ValueError("widths must be a nonempty list of positive integers")

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "widths": list(self.widths),
            "convex": self.convex,
            "seed": self.seed,
            "output_skip": self.output_skip,
        }

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        """Ordered parameter names and shapes."""
        n = self.input_dim
        shapes: dict[str, tuple[int, ...]] = {"H0": (self.widths[0], n), "d0": (self.widths[0],)}
        for k in range(1, len(self.widths)):
            shapes[f"W{k}"] = (self.widths[k], self.widths[k - 1])
            shapes[f"H{k}"] = (self.widths[k], n)
            shapes[f"d{k}"] = (self.widths[k],)
        shapes["W_out"] = (self.widths[-1],)
        if self.output_skip:
            shapes["H_out"] = (n,)
        shapes["d_out"] = ()
        return shapes


def is_monotone_weight(name: str) -> bool:
    """Hidden-to-hidden weights, which must be nonnegative in a convex network."""
    return name.startswith("W")


@dataclass(frozen=True)
class Scaler:
    """``x_std = (x - shift) / scale``; ``scale`` is strictly positive."""

    shift: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        shift = np.array(self.shift, dtype=float)
        scale = np.array(self.scale, dtype=float)
        if shift.shape != scale.shape:
            raise ValueError("scaler shift and scale differ in shape")
        if not (np.all(np.isfinite(shift)) and np.all(np.isfinite(scale)) and np.all(scale > 0)):
            raise ValueError("scaler entries must be finite with positive scale")
        shift.setflags(write=False)
        scale.setflags(write=False)
        object.__setattr__(self, "shift", shift)
        object.__setattr__(self, "scale", scale)

    @classmethod
    def identity(cls, dim: int | None = None) -> "Scaler":
        if dim is None:
            return cls(0.0, 1.0)
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def fit(cls, data: np.ndarray, axis=0) -> "Scaler":
        """Mean and std of ``data``; constant columns get scale 1."""
        data = np.asarray(data, dtype=float)
        mean = data.mean(axis=axis)
        std = data.std(axis=axis)
        std = np.where(std > 1e-12 * np.maximum(1.0, np.abs(mean)), std, 1.0)
        return cls(mean, std)

    def to_dict(self) -> dict:
        return {"shift": self.shift.tolist(), "scale": self.scale.tolist()}


@dataclass(frozen=True)
class IcnnModel:
    cfg: NetConfig
    params: dict[str, np.ndarray]
    x_scaler: Scaler = field(default=None)
    y_scaler: Scaler = field(default=None)

    def __post_init__(self):
        shapes = self.cfg.param_shapes()
        if list(self.params) != list(shapes):
            raise ValueError(f"parameter names {list(self.params)} do not match {list(shapes)}")
        frozen = {}
        for name, shape in shapes.items():
            arr = np.array(self.params[name], dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            arr.setflags(write=False)
            frozen[name] = arr
        object.__setattr__(self, "params", frozen)
        if self.x_scaler is None:
            object.__setattr__(self, "x_scaler", Scaler.identity(self.cfg.input_dim))
        if self.y_scaler is None:
            object.__setattr__(self, "y_scaler", Scaler.identity())
        if self.x_scaler.shift.shape != (self.cfg.input_dim,):
            raise ValueError("input scaler dimension mismatch")
        if self.y_scaler.shift.shape != ():
            raise ValueError("output scaler must be scalar")
        if self.cfg.convex:
            bad = self.convexity_violations()
            if bad:
                raise ValueError(f"convex model has negative entries in {bad}")

    @property
    def convex(self) -> bool:
        return self.cfg.convex

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    @property
    def depth(self) -> int:
        return len(self.cfg.widths)

    def convexity_violations(self) -> list[str]:
        return [n for n, p in self.params.items() if is_monotone_weight(n) and p.size and p.min() < 0]

    def min_monotone_weight(self) -> float:
        return min(float(p.min()) for n, p in self.params.items() if is_monotone_weight(n))

    def with_params(self, params: dict[str, np.ndarray]) -> "IcnnModel":
        return IcnnModel(self.cfg, params, self.x_scaler, self.y_scaler)

    def with_scalers(self, x_scaler: Scaler, y_scaler: Scaler) -> "IcnnModel":
        return IcnnModel(self.cfg, dict(self.params), x_scaler, y_scaler)

    def _inputs(self, x) -> tuple[np.ndarray, bool]:
        X = np.asarray(x, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.ndim != 2 or X.shape[1] != self.cfg.input_dim:
            raise ValueError(f"expected input dimension {self.cfg.input_dim}, got shape {np.shape(x)}")
        return X, single

    def _forward(self, U: np.ndarray):
        """Normalized output and the pre-activations of every hidden layer."""
        p = self.params
        pre = [U @ p["H0"].T + p["d0"]]
        z = np.maximum(pre[0], 0.0)
        for k in range(1, self.depth):
            pre.append(z @ p[f"W{k}"].T + U @ p[f"H{k}"].T + p[f"d{k}"])
            z = np.maximum(pre[-1], 0.0)
        out = z @ p["W_out"] + p["d_out"]
        if "H_out" in p:
            out = out + U @ p["H_out"]
        return out, pre

    def normalized(self, x) -> np.ndarray:
        """Output before de-normalization, on standardized inputs ``u``."""
        U, single = self._inputs(x)
        out, _ = self._forward(U)
        return out[0] if single else out

    def __call__(self, x):
        return forward(self, x)


def init(cfg: NetConfig) -> IcnnModel:
    """Uniform fan-in initialization; monotone weights take absolute values when convex."""
    rng = np.random.default_rng(cfg.seed)
    shapes = cfg.param_shapes()
    fan_in = {"H0": cfg.input_dim, "d0": cfg.input_dim}
    for k in range(1, len(cfg.widths)):
        for key in ("W", "H", "d"):
            fan_in[f"{key}{k}"] = cfg.widths[k - 1] + cfg.input_dim
    head = cfg.widths[-1] + (cfg.input_dim if cfg.output_skip else 0)
    for key in ("W_out", "H_out", "d_out"):
        fan_in[key] = head
    params = {}
    for name, shape in shapes.items():
        bound = 1.0 / math.sqrt(fan_in[name])
        w = rng.uniform(-bound, bound, size=shape)
        if cfg.convex and is_monotone_weight(name):
            w = np.abs(w)
        params[name] = w
    return IcnnModel(cfg, params)


def forward(model: IcnnModel, x):
    """Model value at ``x`` (one input vector or a batch of rows)."""
    X, single = model._inputs(x)
    U = (X - model.x_scaler.shift) / model.x_scaler.scale
    out, _ = model._forward(U)
    y = model.y_scaler.shift + model.y_scaler.scale * out
    return float(y[0]) if single else y


def _backward_hidden(model: IcnnModel, pre: list[np.ndarray], g_last: np.ndarray, grads: dict | None):
    """Push ``d out / d x_last`` through the hidden layers; returns ``d out / d u``.

    When ``grads`` is given, parameter gradients are accumulated into it and
    ``inputs`` must be stored under ``grads['_U']`` and ``grads['_Z']``.
    """
    p = model.params
    g_u = 0.0
    g_z = g_last
    for k in range(model.depth - 1, -1, -1):
        g_a = g_z * (pre[k] > 0)
        g_u = g_u + g_a @ p[f"H{k}"]
        if grads is not None:
            grads[f"H{k}"] = g_a.T @ grads["_U"]
            grads[f"d{k}"] = g_a.sum(axis=0)
        if k > 0:
            if grads is not None:
                grads[f"W{k}"] = g_a.T @ grads["_Z"][k - 1]
            g_z = g_a @ p[f"W{k}"]
    return g_u


def input_gradient(model: IcnnModel, x) -> np.ndarray:
    """Gradient of :func:`forward` with respect to the raw input (rows for a batch)."""
    X, single = model._inputs(x)
    U = (X - model.x_scaler.shift) / model.x_scaler.scale
    _, pre = model._forward(U)
    g_last = np.broadcast_to(model.params["W_out"], pre[-1].shape)
    g_u = _backward_hidden(model, pre, g_last, None)
    if "H_out" in model.params:
        g_u = g_u + model.params["H_out"]
    g = model.y_scaler.scale * g_u / model.x_scaler.scale
    return g[0] if single else g


def param_gradients(model: IcnnModel, x, z, loss=SQUARED) -> tuple[float, dict[str, np.ndarray]]:
    """Mean batch loss on normalized outputs and its gradient for every parameter.

    The residual is ``(forward(x) - z) / y_scale``, the error measured in
    units of the output standardization.
    """
    X, _ = model._inputs(x)
    t = (np.atleast_1d(np.asarray(z, dtype=float)) - model.y_scaler.shift) / model.y_scaler.scale
    if t.shape != (X.shape[0],):
        raise ValueError("one target per input row is required")
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    U = (X - model.x_scaler.shift) / model.x_scaler.scale
    out, pre = model._forward(U)
    values, dvalues = loss(out - t)
    n = X.shape[0]
    g_out = dvalues / n
    z_hidden = [np.maximum(a, 0.0) for a in pre]
    grads: dict = {"_U": U, "_Z": z_hidden}
    _backward_hidden(model, pre, np.outer(g_out, model.params["W_out"]), grads)
    del grads["_U"], grads["_Z"]
    grads["W_out"] = z_hidden[-1].T @ g_out
    if "H_out" in model.params:
        grads["H_out"] = U.T @ g_out
    grads["d_out"] = np.array(g_out.sum())
    ordered = {name: grads[name] for name in model.params}
    return float(values.mean()), ordered


def midpoint_violation(model: IcnnModel, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``f((a+b)/2) - (f(a)+f(b))/2`` on the normalized output, row-wise.

    Positive entries break convexity. Inputs are raw; the normalized output
    keeps the comparison free of the output scale.
    """
    ua = (np.atleast_2d(a) - model.x_scaler.shift) / model.x_scaler.scale
    ub = (np.atleast_2d(b) - model.x_scaler.shift) / model.x_scaler.scale
    fa, _ = model._forward(ua)
    fb, _ = model._forward(ub)
    fm, _ = model._forward(0.5 * (ua + ub))
    return fm - 0.5 * (fa + fb)


def to_dict(model: IcnnModel) -> dict:
    return {
        "schema_version": CHECKPOINT_VERSION,
        "cfg": model.cfg.to_dict(),
        "x_scaler": model.x_scaler.to_dict(),
        "y_scaler": model.y_scaler.to_dict(),
        "params": {name: {"shape": list(p.shape), "values": p.ravel().tolist()} for name, p in model.params.items()},
        "convex": model.convex,
    }


def from_dict(data: dict) -> IcnnModel:
    if not isinstance(data, dict):
        raise CheckpointError("checkpoint must be an object")
    version = data.get("schema_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version!r}")
    try:
        c = data["cfg"]
        cfg = NetConfig(c["input_dim"], tuple(c["widths"]), bool(c["convex"]), int(c["seed"]), bool(c["output_skip"]))
        params = {}
        for name, entry in data["params"].items():
            params[name] = np.array(entry["values"], dtype=float).reshape(entry["shape"])
        xs = Scaler(data["x_scaler"]["shift"], data["x_scaler"]["scale"])
        ys = Scaler(data["y_scaler"]["shift"], data["y_scaler"]["scale"])
        if bool(data["convex"]) != cfg.convex:
            raise CheckpointError("convexity attestation disagrees with the configuration")
        return IcnnModel(cfg, params, xs, ys)
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"invalid checkpoint: {exc}") from None


def dumps_model(model: IcnnModel) -> str:
    return dumps(to_dict(model)) + "\n"


def loads_model(text: str) -> IcnnModel:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"invalid JSON ({exc.msg})") from None
    return from_dict(data)


def save(model: IcnnModel, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(dumps_model(model), encoding="utf-8")
    return path


def load(path: str | Path) -> IcnnModel:
    return loads_model(Path(path).read_text(encoding="utf-8"))
