"""Mini-batch training of convex and unconstrained networks.

Convex models keep their hidden-to-hidden weights nonnegative by projecting
onto the nonnegative orthant after every update (``constraint="project"``).
``constraint="mask"`` additionally zeroes gradient components that would push
a weight already at zero below it. Training runs on standardized outputs, and
the best-validation snapshot is returned.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .datagen import Dataset
from .icnn import IcnnModel, NetConfig, Scaler, forward, init, is_monotone_weight, param_gradients
from .losses import SQUARED, AsymmetricLoss, asymmetric_loss

__all__ = [
    "EpochRecord",
    "SearchSpace",
    "TrainConfig",
    "TrainReport",
    "TrainingDiverged",
    "asymmetric_loss",
    "fit_scalers",
    "hyper_search",
    "load_train_config",
    "train",
    "train_arrays",
]

OPTIMIZERS = ("sgd-momentum", "adam")
CONSTRAINT_MODES = ("project", "mask")
LOSSES = ("squared", "asymmetric")


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-2
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 500
    decay: float = 0.99
    plateau_patience: int = 20
    plateau_factor: float = 0.5
    early_stop_patience: int = 60
    loss: str = "squared"
    kappa_under: float = 1.0
    kappa_over: float = 1.0
    constraint: str = "project"
    seed: int = 0

    def __post_init__(self):
        if self.optimizer == "adaptive-moments":
            object.__setattr__(self, "optimizer", "adam")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.constraint not in CONSTRAINT_MODES:
            raise ValueError(f"constraint must be one of {CONSTRAINT_MODES}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if not (self.lr > 0 and 0 < self.decay <= 1 and 0 < self.plateau_factor <= 1):
            raise ValueError("lr must be positive; decay and plateau_factor must lie in (0, 1]")
        if not (0 <= self.momentum < 1 and 0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("momentum terms must lie in [0, 1) and eps must be positive")
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise ValueError("patience values must be at least 1")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("batch_size must be positive and max_epochs nonnegative")
        if self.kappa_under < 0 or self.kappa_over < 0:
            raise ValueError("asymmetry weights must be nonnegative")

    def loss_fn(self):
        if self.loss == "asymmetric":
            return AsymmetricLoss(self.kappa_under, self.kappa_over)
        return SQUARED

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())


def loads_train_config(text: str) -> TrainConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    values = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"line {n}: unknown key {key!r}")
        kind = types[key]
        try:
            values[key] = int(value) if kind == "int" else float(value) if kind == "float" else value
        except ValueError:
            raise ValueError(f"line {n}: {key} expects {kind}, got {value!r}") from None
    return TrainConfig(**values)


def load_train_config(path: str | Path) -> TrainConfig:
    return loads_train_config(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    valid_loss: float
    lr: float
    seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_valid_loss: float = math.inf
    initial_valid_loss: float = math.inf
    stopped_early: bool = False
    model: IcnnModel | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "valid_loss", "lr", "seconds"])
        for r in self.epochs:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.valid_loss), repr(r.lr), f"{r.seconds:.6f}"])
        return buf.getvalue()


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, report: TrainReport):
        super().__init__(message)
        self.report = report


def fit_scalers(model: IcnnModel, b: np.ndarray, z: np.ndarray) -> IcnnModel:
    """Standardize inputs and outputs with statistics of the training data."""
    return model.with_scalers(Scaler.fit(b), Scaler.fit(np.asarray(z, dtype=float)))


def _mean_loss(model: IcnnModel, X: np.ndarray, z: np.ndarray, loss) -> float:
    r = (forward(model, X) - z) / model.y_scaler.scale
    return float(loss(r)[0].mean())


class _Optimizer:
    def __init__(self, cfg: TrainConfig, params: dict[str, np.ndarray]):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()} if cfg.optimizer == "adam" else None
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        cfg = self.cfg
        self.t += 1
        for k, g in grads.items():
            if self.v is None:
                self.m[k] = cfg.momentum * self.m[k] + g
                params[k] = params[k] - lr * self.m[k]
            else:
                self.m[k] = cfg.beta1 * self.m[k] + (1 - cfg.beta1) * g
                self.v[k] = cfg.beta2 * self.v[k] + (1 - cfg.beta2) * g * g
                m_hat = self.m[k] / (1 - cfg.beta1**self.t)
                v_hat = self.v[k] / (1 - cfg.beta2**self.t)
                params[k] = params[k] - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


def train_arrays(
    model: IcnnModel,
    x_train: np.ndarray,
    z_train: np.ndarray,
    x_valid: np.ndarray,
    z_valid: np.ndarray,
    cfg: TrainConfig,
) -> tuple[IcnnModel, TrainReport]:
    """Train on explicit arrays; see :func:`train`."""
    x_train, z_train = np.asarray(x_train, dtype=float), np.asarray(z_train, dtype=float)
    x_valid, z_valid = np.asarray(x_valid, dtype=float), np.asarray(z_valid, dtype=float)
    if len(x_train) == 0:
        raise ValueError("empty training split")
    if len(x_valid) == 0:
        raise ValueError("empty validation split")
    loss = cfg.loss_fn()
    report = TrainReport(model=model)
    report.initial_valid_loss = report.best_valid_loss = _mean_loss(model, x_valid, z_valid, loss)
    if cfg.max_epochs == 0:
        return model, report

    rng = np.random.default_rng(cfg.seed)
    params = {k: v.copy() for k, v in model.params.items()}
    monotone = [k for k in params if model.convex and is_monotone_weight(k)]
    opt = _Optimizer(cfg, params)
    lr = cfg.lr
    best_model, since_best, since_plateau = model, 0, 0
    current = model
    n = len(x_train)
    for epoch in range(1, cfg.max_epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            batch_loss, grads = param_gradients(current, x_train[idx], z_train[idx], loss)
            total += batch_loss * len(idx)
            if cfg.constraint == "mask":
                for k in monotone:
                    grads[k] = np.where((params[k] <= 0) & (grads[k] > 0), 0.0, grads[k])
            opt.step(params, grads, lr)
            for k in monotone:
                np.maximum(params[k], 0.0, out=params[k])
            if not all(np.all(np.isfinite(p)) for p in params.values()):
                raise TrainingDiverged(f"non-finite weights in epoch {epoch}", report)
            current = model.with_params(params)
        valid_loss = _mean_loss(current, x_valid, z_valid, loss)
        report.epochs.append(EpochRecord(epoch, total / n, valid_loss, lr, time.perf_counter() - start))
        if not math.isfinite(valid_loss):
            raise TrainingDiverged(f"validation loss became {valid_loss} in epoch {epoch}", report)
        if valid_loss < report.best_valid_loss:
            report.best_valid_loss, report.best_epoch = valid_loss, epoch
            best_model, since_best, since_plateau = current, 0, 0
        else:
            since_best += 1
            since_plateau += 1
        if since_best >= cfg.early_stop_patience:
            report.stopped_early = True
            break
        lr *= cfg.decay
        if since_plateau >= cfg.plateau_patience:
            lr *= cfg.plateau_factor
            since_plateau = 0
    report.model = best_model
    return best_model, report


def train(model: IcnnModel, dataset: Dataset, cfg: TrainConfig) -> tuple[IcnnModel, TrainReport]:
    """Train on the dataset's train split, selecting on its valid split.

    Mini-batches follow a seeded shuffle; the learning rate decays
    exponentially per epoch and is cut further after ``plateau_patience``
    epochs without validation improvement. Training stops after
    ``early_stop_patience`` such epochs or at ``max_epochs``; the snapshot with
    the lowest validation loss is returned. Scalers are left as given; see
    :func:`fit_scalers`.
    """
    b_tr, z_tr, _ = dataset.arrays("train")
    b_va, z_va, _ = dataset.arrays("valid")
    if len(b_tr) and b_tr.shape[1] != model.cfg.input_dim:
        raise ValueError(f"model expects {model.cfg.input_dim} inputs, dataset has {b_tr.shape[1]}")
    return train_arrays(model, b_tr, z_tr, b_va, z_va, cfg)


@dataclass(frozen=True)
class SearchSpace:
    lr: tuple[float, float] = (1e-3, 3e-2)
    decay: tuple[float, float] = (0.95, 1.0)
    widths: tuple[int, ...] = (16, 32, 64)
    depths: tuple[int, ...] = (1, 2, 3)
    batch_sizes: tuple[int, ...] = (16, 32, 64)


@dataclass(frozen=True)
class Trial:
    rank: int
    train_cfg: TrainConfig
    widths: tuple[int, ...]
    valid_gap: float
    best_epoch: int


def _validation_gap(model: IcnnModel, b: np.ndarray, z: np.ndarray) -> float:
    from .evalkit import geo_mean

    pred = forward(model, b)
    return geo_mean(np.abs(pred - z) / np.abs(z))


def hyper_search(
    dataset: Dataset,
    space: SearchSpace = SearchSpace(),
    budget: int = 8,
    seed: int = 0,
    base: TrainConfig = TrainConfig(),
    convex: bool = True,
) -> tuple[TrainConfig, tuple[int, ...], list[Trial]]:
    """Seeded random search scored by validation geometric-mean gap.

    Returns the best training config, its hidden widths, and the leaderboard
    sorted from best to worst (ties broken by trial order).
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    b_tr, z_tr, _ = dataset.arrays("train")
    b_va, z_va, _ = dataset.arrays("valid")
    rng = np.random.default_rng(seed)
    results = []
    for trial in range(budget):
        lr = float(math.exp(rng.uniform(math.log(space.lr[0]), math.log(space.lr[1]))))
        decay = float(rng.uniform(*space.decay))
        width = int(rng.choice(space.widths))
        depth = int(rng.choice(space.depths))
        batch = int(rng.choice(space.batch_sizes))
        tcfg = replace(base, lr=lr, decay=decay, batch_size=batch, seed=seed + trial)
        widths = (width,) * depth
        model = init(NetConfig(b_tr.shape[1], widths, convex, seed + trial))
        model = fit_scalers(model, b_tr, z_tr)
        try:
            trained, report = train_arrays(model, b_tr, z_tr, b_va, z_va, tcfg)
            gap = _validation_gap(trained, b_va, z_va)
            best_epoch = report.best_epoch
        except TrainingDiverged:
            gap, best_epoch = math.inf, 0
        results.append((gap, trial, tcfg, widths, best_epoch))
    results.sort(key=lambda r: (r[0], r[1]))
    board = [Trial(rank, t, w, g, e) for rank, (g, _, t, w, e) in enumerate(results, start=1)]
    return board[0].train_cfg, board[0].widths, board
