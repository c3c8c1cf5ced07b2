"""Seeded load perturbation, DC labeling, splitting and JSON-Lines persistence.

Loads are drawn as ``pd = alpha * eta * pd_ref`` with one uniform scale
``alpha`` per instance and one log-normal factor ``eta`` per bus, shared by the
active and reactive demand so the power factor is preserved. Every instance
owns an RNG derived from ``(seed, index)``, so any subset can be regenerated
without the others.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from ._jsonio import dumps, sha256_hex
from .grid import PowerNetwork
from .lp import OPTIMAL
from .opf import value_and_gradient

SCHEMA_VERSION = 1
SPLITS = ("train", "valid", "test")
FORMULATIONS = ("dc", "soc", "ac")
DEFAULT_FRACTIONS = (0.4, 0.3, 0.3)


class DatasetError(ValueError):
    """Malformed dataset file; ``where`` names the offending line and field."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


class NoFeasibleSamples(RuntimeError):
    pass


@dataclass(frozen=True)
class PerturbationConfig:
    alpha_range: tuple[float, float] = (0.8, 1.065)
    eta_std: float = 0.05
    seed: int = 0
    count: int = 2000
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS

    def __post_init__(self):
        lo, hi = self.alpha_range
        if not (0 < lo <= hi and math.isfinite(hi)):
            raise ValueError(f"alpha_range must satisfy 0 < min <= max, got {self.alpha_range}")
        if not (self.eta_std >= 0 and math.isfinite(self.eta_std)):
            raise ValueError("eta_std must be a finite nonnegative number")
        if self.count < 0:
            raise ValueError("count must be nonnegative")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        _check_fractions(self.fractions)

    def to_dict(self) -> dict:
        return {
            "alpha_range": [float(v) for v in self.alpha_range],
            "eta_std": float(self.eta_std),
            "seed": int(self.seed),
            "count": int(self.count),
            "fractions": [float(v) for v in self.fractions],
        }

    def lognormal_params(self) -> tuple[float, float]:
        """(mu, sigma) of the underlying normal giving mean 1 and std ``eta_std``."""
        sigma = math.sqrt(math.log1p(self.eta_std**2))
        return -0.5 * sigma**2, sigma


def config_hash(net: PowerNetwork, cfg: PerturbationConfig) -> str:
    return sha256_hex(repr(net), dumps(cfg.to_dict()))


def instance_seed(seed: int, index: int) -> int:
    """63-bit seed for instance ``index``; independent of generation order."""
    hi, lo = np.random.SeedSequence((seed, index)).generate_state(2, np.uint32)
    return (int(hi) << 31) ^ int(lo)


def draw_perturbation(cfg: PerturbationConfig, seed: int, n_bus: int) -> tuple[float, np.ndarray]:
    rng = np.random.default_rng(seed)
    alpha = float(rng.uniform(*cfg.alpha_range)) if cfg.alpha_range[0] < cfg.alpha_range[1] else float(cfg.alpha_range[0])
    mu, sigma = cfg.lognormal_params()
    eta = rng.lognormal(mu, sigma, n_bus) if sigma > 0 else np.ones(n_bus)
    return alpha, eta


def sample_loads(net: PowerNetwork, cfg: PerturbationConfig, index: int) -> tuple[np.ndarray, np.ndarray]:
    """Perturbed ``(pd, qd)`` of instance ``index``."""
    if not 0 <= index < cfg.count:
        raise IndexError(f"index {index} outside [0, {cfg.count})")
    alpha, eta = draw_perturbation(cfg, instance_seed(cfg.seed, index), net.n_bus)
    return alpha * eta * net.pd, alpha * eta * net.qd


@dataclass
class LabeledSample:
    id: int
    seed: int
    alpha: float
    formulation: str
    pd: np.ndarray
    qd: np.ndarray | None
    z: float | None
    y: np.ndarray | None
    status: str
    split: str | None = None

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    @property
    def b(self) -> np.ndarray:
        """Model input: active loads for DC, active then reactive otherwise."""
        return self.pd if self.formulation == "dc" else np.concatenate([self.pd, self.qd])

    @property
    def total_load(self) -> float:
        return float(np.sum(self.pd))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "seed": self.seed,
            "alpha": self.alpha,
            "formulation": self.formulation,
            "pd": self.pd,
            "qd": self.qd,
            "z": self.z,
            "y": self.y,
            "status": self.status,
            "split": self.split,
        }

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabeledSample):
            return NotImplemented
        return dumps(self.to_dict()) == dumps(other.to_dict())


@dataclass
class Dataset:
    case: str
    config_hash: str
    samples: list[LabeledSample]
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def formulation(self) -> str:
        kinds = {s.formulation for s in self.samples}
        if len(kinds) != 1:
            raise ValueError(f"dataset mixes formulations {sorted(kinds)}")
        return kinds.pop()

    @property
    def feasible(self) -> list[LabeledSample]:
        return [s for s in self.samples if s.optimal]

    def subset(self, split: str) -> list[LabeledSample]:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return [s for s in self.samples if s.split == split]

    def arrays(self, split: str | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Stacked ``(b, z, y)`` of the optimal samples in ``split`` (all if None)."""
        rows = self.feasible if split is None else self.subset(split)
        if not rows:
            return np.zeros((0, 0)), np.zeros(0), np.zeros((0, 0))
        return (
            np.array([s.b for s in rows]),
            np.array([s.z for s in rows]),
            np.array([s.y for s in rows]),
        )

    def counts(self) -> dict[str, int]:
        out = {name: len(self.subset(name)) for name in SPLITS}
        out["infeasible"] = len(self.samples) - len(self.feasible)
        return out

    def header(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "case": self.case, "config_hash": self.config_hash}


def _check_fractions(fractions: Iterable[float]) -> tuple[float, ...]:
    fr = tuple(float(f) for f in fractions)
    if len(fr) != len(SPLITS) or any(f < 0 or not math.isfinite(f) for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be {len(SPLITS)} nonnegative numbers summing to 1, got {fr}")
    return fr


def split_counts(n: int, fractions) -> list[int]:
    """Largest-remainder rounding: each count is within one of ``n * fraction``."""
    fr = _check_fractions(fractions)
    exact = [n * f for f in fr]
    counts = [math.floor(e) for e in exact]
    order = sorted(range(len(fr)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split(dataset: Dataset, fractions=DEFAULT_FRACTIONS, seed: int = 0) -> Dataset:
    """Assign optimal samples to train/valid/test by a seeded shuffle.

    Infeasible samples get no split. Returns a new dataset.
    """
    feasible = [i for i, s in enumerate(dataset.samples) if s.optimal]
    n_nonzero = sum(1 for f in _check_fractions(fractions) if f > 0)
    if len(feasible) < n_nonzero:
        raise ValueError(f"{len(feasible)} feasible samples cannot fill {n_nonzero} splits")
    counts = split_counts(len(feasible), fractions)
    perm = np.random.default_rng(np.random.SeedSequence((seed, len(feasible)))).permutation(len(feasible))
    labels = np.repeat(np.arange(len(SPLITS)), counts)
    assign = {feasible[p]: SPLITS[lab] for p, lab in zip(perm, labels)}
    samples = [replace(s, split=assign.get(i)) for i, s in enumerate(dataset.samples)]
    return Dataset(dataset.case, dataset.config_hash, samples, dict(dataset.meta))


def label_dc(net: PowerNetwork, cfg: PerturbationConfig, index: int) -> tuple[LabeledSample, np.ndarray]:
    """Solve instance ``index``; returns the sample and its ``eta`` draw."""
    seed = instance_seed(cfg.seed, index)
    alpha, eta = draw_perturbation(cfg, seed, net.n_bus)
    pd = alpha * eta * net.pd
    value = value_and_gradient(net, pd)
    sample = LabeledSample(
        id=index,
        seed=seed,
        alpha=alpha,
        formulation="dc",
        pd=pd,
        qd=None,
        z=value.z,
        y=value.y,
        status=value.status,
    )
    return sample, eta


def generate(
    net: PowerNetwork,
    cfg: PerturbationConfig,
    case: str | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> Dataset:
    """Sample, solve and split ``cfg.count`` DC-OPF instances.

    Infeasible instances stay in the dataset with their status and no split.
    ``meta`` records the feasible fraction and the extreme ``eta`` draws.
    """
    samples = []
    eta_lo, eta_hi = math.inf, -math.inf
    for index in range(cfg.count):
        sample, eta = label_dc(net, cfg, index)
        samples.append(sample)
        if eta.size:
            eta_lo, eta_hi = min(eta_lo, float(eta.min())), max(eta_hi, float(eta.max()))
        if progress is not None:
            progress(index + 1, cfg.count)
    n_ok = sum(s.optimal for s in samples)
    if n_ok == 0:
        raise NoFeasibleSamples(f"none of {cfg.count} instances is feasible")
    ds = Dataset(case or net.name, config_hash(net, cfg), samples)
    ds = split(ds, cfg.fractions, cfg.seed)
    ds.meta.update(
        feasible=n_ok,
        infeasible=cfg.count - n_ok,
        feasible_fraction=n_ok / cfg.count,
        eta_min=eta_lo,
        eta_max=eta_hi,
    )
    return ds


def dumps_dataset(ds: Dataset) -> str:
    lines = [dumps(ds.header())] + [dumps(s.to_dict()) for s in ds.samples]
    return "\n".join(lines) + "\n"


def save_dataset(ds: Dataset, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(dumps_dataset(ds), encoding="utf-8")
    return path


_SAMPLE_FIELDS = ("id", "seed", "alpha", "formulation", "pd", "qd", "z", "y", "status", "split")


def _vector(value, where: str, name: str) -> np.ndarray:
    if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        raise DatasetError(where, f"{name} must be a list of numbers")
    arr = np.array(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DatasetError(where, f"{name} has non-finite entries")
    return arr


def _number(value, where: str, name: str) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value):
        raise DatasetError(where, f"{name} must be a finite number")
    return float(value)


def _parse_sample(obj, where: str) -> LabeledSample:
    if not isinstance(obj, dict):
        raise DatasetError(where, "sample must be an object")
    missing = [k for k in _SAMPLE_FIELDS if k not in obj]
    extra = [k for k in obj if k not in _SAMPLE_FIELDS]
    if missing:
        raise DatasetError(f"{where}.{missing[0]}", "missing field")
    if extra:
        raise DatasetError(f"{where}.{extra[0]}", "unknown field")
    for key in ("id", "seed"):
        if not isinstance(obj[key], int) or isinstance(obj[key], bool):
            raise DatasetError(f"{where}.{key}", "must be an integer")
    form = obj["formulation"]
    if form not in FORMULATIONS:
        raise DatasetError(f"{where}.formulation", f"must be one of {FORMULATIONS}")
    if not isinstance(obj["status"], str):
        raise DatasetError(f"{where}.status", "must be a string")
    pd = _vector(obj["pd"], f"{where}.pd", "pd")
    qd = None
    if form == "dc":
        if obj["qd"] is not None:
            qd = _vector(obj["qd"], f"{where}.qd", "qd")
    else:
        if obj["qd"] is None:
            raise DatasetError(f"{where}.qd", f"required for {form} samples")
        qd = _vector(obj["qd"], f"{where}.qd", "qd")
    if qd is not None and qd.shape != pd.shape:
        raise DatasetError(f"{where}.qd", "length differs from pd")
    optimal = obj["status"] == OPTIMAL
    z = y = None
    if optimal:
        for key in ("z", "y"):
            if obj[key] is None:
                raise DatasetError(f"{where}.{key}", "required on optimal samples")
        z = _number(obj["z"], f"{where}.z", "z")
        y = _vector(obj["y"], f"{where}.y", "y")
        n_in = pd.size if form == "dc" else 2 * pd.size
        if y.size != n_in:
            raise DatasetError(f"{where}.y", f"expected {n_in} entries, got {y.size}")
    else:
        if obj["y"] is not None:
            raise DatasetError(f"{where}.y", "must be null on non-optimal samples")
        if obj["z"] is not None:
            raise DatasetError(f"{where}.z", "must be null on non-optimal samples")
    sp = obj["split"]
    if sp is not None and (sp not in SPLITS or not optimal):
        raise DatasetError(f"{where}.split", "must be train/valid/test on optimal samples, null otherwise")
    return LabeledSample(
        id=obj["id"],
        seed=obj["seed"],
        alpha=_number(obj["alpha"], f"{where}.alpha", "alpha"),
        formulation=form,
        pd=pd,
        qd=qd,
        z=z,
        y=y,
        status=obj["status"],
        split=sp,
    )


def loads_dataset(text: str) -> Dataset:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DatasetError("line 1", "empty dataset file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetError("line 1", f"invalid JSON ({exc.msg})") from None
    if not isinstance(header, dict) or set(header) != {"schema_version", "case", "config_hash"}:
        raise DatasetError("line 1", "header must have exactly schema_version, case, config_hash")
    if header["schema_version"] != SCHEMA_VERSION:
        raise DatasetError("line 1.schema_version", f"unsupported version {header['schema_version']!r}")
    samples = []
    for n, line in enumerate(lines[1:], start=2):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"line {n}", f"invalid JSON ({exc.msg})") from None
        samples.append(_parse_sample(obj, f"line {n}"))
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise DatasetError("samples", "duplicate sample ids")
    sizes = {s.pd.size for s in samples}
    if len(sizes) > 1:
        raise DatasetError("samples", f"inconsistent load vector lengths {sorted(sizes)}")
    return Dataset(str(header["case"]), str(header["config_hash"]), samples)


def load_dataset(path: str | Path) -> Dataset:
    return loads_dataset(Path(path).read_text(encoding="utf-8"))


def import_labeled(path: str | Path) -> Dataset:
    """Load an externally labeled dataset and require a single formulation.

    For SOC and AC samples ``y`` is the sensitivity of the optimal cost to the
    stacked ``(pd, qd)`` input.
    """
    ds = load_dataset(path)
    if ds.samples:
        try:
            ds.formulation
        except ValueError as exc:
            raise DatasetError("samples.formulation", str(exc)) from None
    return ds
