"""Command-line entry point.

Exit codes: 0 success, 2 bad input, 3 empty result, 4 numerical failure,
64 usage error. Every command that writes a file also writes
``<output>.manifest.json`` describing how it was produced.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from ._jsonio import dumps
from .certify import EnvelopePair, theorem1_bound, theorem1_exact_1d, theorem2_bound
from .datagen import DatasetError, NoFeasibleSamples, PerturbationConfig, generate, load_dataset, save_dataset
from .evalkit import evaluate, render_report
from .grid import CaseParseError, PowerNetwork, bundled_case_path, load_case
from .icnn import CheckpointError, NetConfig, init, load, save
from .opf import build_ac, build_dc, build_soc, dc_formulation, export_formulation
from .trainer import TrainConfig, TrainingDiverged, fit_scalers, load_train_config, train

EXIT_OK, EXIT_INPUT, EXIT_EMPTY, EXIT_NUMERICAL, EXIT_USAGE = 0, 2, 3, 4, 64


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


@dataclass
class RunManifest:
    command: str
    arguments: dict
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    seeds: dict[str, int] = field(default_factory=dict)
    tool_version: str = __version__
    wall_time: float = 0.0

    def config_hash(self) -> str:
        """Digest of the command, its arguments and the contents of every input file."""
        payload = {"command": self.command, "arguments": self.arguments, "inputs": self.inputs, "version": self.tool_version}
        return hashlib.sha256(dumps(payload).encode()).hexdigest()

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config_hash": self.config_hash(),
            "arguments": self.arguments,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "tool_version": self.tool_version,
            "wall_time": self.wall_time,
        }

    def write(self, beside: Path) -> Path:
        path = beside.with_name(beside.name + ".manifest.json")
        path.write_text(dumps(self.to_dict()) + "\n", encoding="utf-8")
        return path


def _digest(path: Path) -> str:
    h = hashlib.sha256()
    if path.is_dir():
        for p in sorted(path.rglob("*")):
            if p.is_file():
                h.update(str(p.relative_to(path)).encode())
                h.update(p.read_bytes())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


def _existing(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise InputError(f"{what} {path!r} does not exist")
    return p


def _case_path(spec: str) -> Path:
    """A case file path, or the name of a bundled case."""
    p = Path(spec)
    if p.exists():
        return p
    try:
        return bundled_case_path(spec)
    except FileNotFoundError:
        raise InputError(f"case {spec!r} is neither a file nor a bundled case") from None


def _load_network(spec: str) -> tuple[PowerNetwork, Path]:
    path = _case_path(spec)
    try:
        return load_case(path), path
    except CaseParseError as exc:
        raise InputError(f"cannot parse {path}: {exc}") from None
    except (OSError, UnicodeDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from None


def _load_dataset(path: str):
    p = _existing(path, "dataset")
    try:
        return load_dataset(p), p
    except DatasetError as exc:
        raise InputError(f"invalid dataset {p}: {exc}") from None


def _load_model(path: str):
    p = _existing(path, "model")
    try:
        return load(p), p
    except CheckpointError as exc:
        raise InputError(f"invalid checkpoint {p}: {exc}") from None


def _widths(text: str) -> tuple[int, ...]:
    try:
        widths = tuple(int(w) for w in text.split(",") if w.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"widths must be comma-separated integers, got {text!r}") from None
    if not widths or min(widths) < 1:
        raise argparse.ArgumentTypeError("widths must be positive")
    return widths


def cmd_case_inspect(args) -> int:
    net, path = _load_network(args.case_file)
    total_p = float(net.pd.sum()) * net.base_mva
    total_q = float(net.qd.sum()) * net.base_mva
    print(f"case          {net.name or path.stem}")
    print(f"buses         {net.n_bus}")
    print(f"branches      {len(net.branches)}")
    print(f"generators    {len(net.generators)}")
    print(f"load (MW)     {total_p:.2f}")
    print(f"load (MVAr)   {total_q:.2f}")
    return EXIT_OK


def cmd_dataset_generate(args, manifest: RunManifest) -> int:
    if args.count < 1:
        raise UsageError("--count must be positive")
    if not (0 < args.alpha_min <= args.alpha_max):
        raise UsageError("--alpha-min must be positive and not above --alpha-max")
    if args.eta_std < 0:
        raise UsageError("--eta-std must be nonnegative")
    if args.seed < 0:
        raise UsageError("--seed must be nonnegative")
    net, path = _load_network(args.case)
    manifest.inputs["case"] = _digest(path)
    cfg = PerturbationConfig((args.alpha_min, args.alpha_max), args.eta_std, args.seed, args.count)
    manifest.seeds["seed"] = args.seed
    try:
        ds = generate(net, cfg, case=net.name or path.stem)
    except NoFeasibleSamples as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    manifest.outputs.append(str(out))
    manifest.arguments["dataset_meta"] = ds.meta
    counts = ds.counts()
    print(f"feasible {ds.meta['feasible']}  infeasible {ds.meta['infeasible']}")
    print(f"train {counts['train']}  valid {counts['valid']}  test {counts['test']}")
    return EXIT_OK


def cmd_train(args, manifest: RunManifest) -> int:
    ds, dpath = _load_dataset(args.dataset)
    manifest.inputs["dataset"] = _digest(dpath)
    if args.config:
        cpath = _existing(args.config, "config")
        try:
            tcfg = load_train_config(cpath)
        except ValueError as exc:
            raise InputError(f"invalid config {cpath}: {exc}") from None
        manifest.inputs["config"] = _digest(cpath)
    else:
        tcfg = TrainConfig()
    if args.epochs is not None:
        if args.epochs < 0:
            raise UsageError("--epochs must be nonnegative")
        tcfg = replace(tcfg, max_epochs=args.epochs)
    b, z, _ = ds.arrays("train")
    if len(b) == 0:
        print("error: dataset has no training samples", file=sys.stderr)
        return EXIT_EMPTY
    model = init(NetConfig(b.shape[1], args.widths, args.arch == "icnn", args.seed))
    model = fit_scalers(model, b, z)
    manifest.seeds.update(init=args.seed, shuffle=tcfg.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    log = out.with_name(out.name + ".log.csv")
    try:
        model, report = train(model, ds, tcfg)
    except TrainingDiverged as exc:
        log.write_text(exc.report.to_csv(), encoding="utf-8")
        print(f"error: training diverged: {exc}; log in {log}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        raise InputError(str(exc)) from None
    save(model, out)
    log.write_text(report.to_csv(), encoding="utf-8")
    manifest.outputs += [str(out), str(log)]
    manifest.arguments["train_config"] = asdict(tcfg)
    print(f"best epoch {report.best_epoch}  valid loss {report.best_valid_loss:.6g}  epochs run {len(report.epochs)}")
    if model.convex:
        print(f"convexity attested: min hidden weight {model.min_monotone_weight():.3g}")
    return EXIT_OK


def cmd_eval(args, manifest: RunManifest) -> int:
    ds, dpath = _load_dataset(args.dataset)
    manifest.inputs["dataset"] = _digest(dpath)
    models = []
    for flag, path in (("model", args.model), ("baseline", args.baseline)):
        if path is None:
            continue
        model, mpath = _load_model(path)
        manifest.inputs[flag] = _digest(mpath)
        models.append((model, mpath))
    labels = ["ICNN" if m.convex else "DNN" for m, _ in models]
    if len(set(labels)) < len(labels):
        labels = [f"{lab}-{p.stem}" for lab, (_, p) in zip(labels, models)]
    summaries, records = [], {}
    for (model, _), label in zip(models, labels):
        try:
            summary, recs = evaluate(model, ds, args.split, label)
        except ValueError as exc:
            if "empty" in str(exc):
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_EMPTY
            raise InputError(str(exc)) from None
        summaries.append(summary)
        records[label] = recs
    out = Path(args.out)
    files = render_report(summaries, records, out)
    manifest.outputs += [str(p) for p in files.values()]
    for s in summaries:
        print(f"{s.model}: mean gap {s.mean_pct:.2f}%  worst gap {s.worst_pct:.2f}%  ({s.count} samples)")
    return EXIT_OK


def cmd_certify(args, manifest: RunManifest) -> int:
    if args.samples is not None and args.samples < 1:
        raise UsageError("--samples must be positive")
    ds, dpath = _load_dataset(args.dataset)
    model, mpath = _load_model(args.model)
    manifest.inputs.update(dataset=_digest(dpath), model=_digest(mpath))
    b, z, y = ds.arrays(args.split)
    if len(b) == 0:
        print(f"error: split {args.split!r} has no samples", file=sys.stderr)
        return EXIT_EMPTY
    if b.shape[1] != model.cfg.input_dim:
        raise InputError(f"model expects {model.cfg.input_dim} inputs, dataset has {b.shape[1]}")
    phi = EnvelopePair(b, z, y)
    if args.theorem == 1:
        f = EnvelopePair.from_model(model, b)
        if args.exact_1d:
            if phi.dim != 1:
                raise UsageError("--exact-1d needs one-dimensional inputs")
            cert = theorem1_exact_1d(f, phi)
        else:
            cert = theorem1_bound(f, phi, samples=args.samples or 200, seed=args.seed)
            manifest.seeds["samples"] = args.seed
    else:
        cert = theorem2_bound(phi, model, args.fit_tol)
    cert.provenance.update(dataset=str(dpath), model=str(mpath), split=args.split)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cert.save(out)
    manifest.outputs.append(str(out))
    print(f"{cert.kind}: bound {cert.bound:.10g}")
    print(f"fit residuals: value {cert.value_residual:.3g}  gradient {cert.gradient_residual:.3g}")
    if not cert.binding:
        print(f"WARNING: NON-BINDING certificate; the model is not a perfect fit (tolerance {cert.fit_tol:g})")
    return EXIT_OK


def _loads(spec: str, net: PowerNetwork) -> tuple[np.ndarray, np.ndarray]:
    if spec == "reference":
        return net.pd, net.qd
    try:
        scale = float(spec)
    except ValueError:
        scale = None
    if scale is not None:
        if not (scale >= 0 and math.isfinite(scale)):
            raise UsageError("--loads scale must be a nonnegative number")
        return scale * net.pd, scale * net.qd
    path = _existing(spec, "loads file")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        pd = np.array(data["pd"], dtype=float)
        qd = np.array(data.get("qd", net.qd), dtype=float)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise InputError(f"invalid loads file {path}: {exc}") from None
    return pd, qd


def cmd_export(args, manifest: RunManifest) -> int:
    net, path = _load_network(args.case)
    manifest.inputs["case"] = _digest(path)
    pd, qd = _loads(args.loads, net)
    try:
        if args.kind == "dc":
            form = dc_formulation(build_dc(net, pd))
        elif args.kind == "soc":
            form = build_soc(net, pd, qd)
        else:
            form = build_ac(net, pd, qd)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    export_formulation(form, out)
    manifest.outputs.append(str(out))
    print(f"{args.kind} formulation: {sum(v.size for v in form.variables)} variables, {len(form.constraints)} constraints")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="icnnopf", description="Learn and certify convex surrogates of OPF value functions.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS threads (1 for byte-reproducible runs)")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    case = sub.add_parser("case", help="inspect case files")
    case_sub = case.add_subparsers(dest="action", parser_class=_Parser)
    insp = case_sub.add_parser("inspect", help="print bus, branch, generator and load totals")
    insp.add_argument("case_file")

    ds = sub.add_parser("dataset", help="dataset tools")
    ds_sub = ds.add_subparsers(dest="action", parser_class=_Parser)
    gen = ds_sub.add_parser("generate", help="sample, solve and split DC-OPF instances")
    gen.add_argument("--case", required=True)
    gen.add_argument("--count", type=int, required=True)
    gen.add_argument("--alpha-min", type=float, default=0.8)
    gen.add_argument("--alpha-max", type=float, default=1.065)
    gen.add_argument("--eta-std", type=float, default=0.05)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)

    tr = sub.add_parser("train", help="train an ICNN or unconstrained baseline")
    tr.add_argument("--dataset", required=True)
    tr.add_argument("--arch", choices=("icnn", "dnn"), default="icnn")
    tr.add_argument("--widths", type=_widths, default=(32, 32))
    tr.add_argument("--config", default=None, help="key = value file with training settings")
    tr.add_argument("--epochs", type=int, default=None, help="override max_epochs")
    tr.add_argument("--seed", type=int, default=0, help="initialization seed")
    tr.add_argument("--out", required=True)

    ev = sub.add_parser("eval", help="gap report on a dataset split")
    ev.add_argument("--model", required=True)
    ev.add_argument("--baseline", default=None)
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--split", choices=("train", "valid", "test"), default="test")
    ev.add_argument("--out", required=True)

    ce = sub.add_parser("certify", help="generalization bound over the training hull")
    ce.add_argument("--model", required=True)
    ce.add_argument("--dataset", required=True)
    ce.add_argument("--theorem", type=int, choices=(1, 2), required=True)
    ce.add_argument("--samples", type=int, default=None)
    ce.add_argument("--exact-1d", action="store_true")
    ce.add_argument("--seed", type=int, default=0)
    ce.add_argument("--fit-tol", type=float, default=1e-6)
    ce.add_argument("--split", choices=("train", "valid", "test"), default="train")
    ce.add_argument("--out", required=True)

    ex = sub.add_parser("export-formulation", help="write a solver-neutral OPF description")
    ex.add_argument("--case", required=True)
    ex.add_argument("--kind", choices=("dc", "soc", "ac"), required=True)
    ex.add_argument("--loads", default="reference", help="'reference', a scale factor, or a JSON file with pd/qd")
    ex.add_argument("--out", required=True)
    return p


_COMMANDS = {
    ("dataset", "generate"): cmd_dataset_generate,
    ("train", None): cmd_train,
    ("eval", None): cmd_eval,
    ("certify", None): cmd_certify,
    ("export-formulation", None): cmd_export,
}


def _dispatch(args, parser) -> int:
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    action = getattr(args, "action", None)
    if args.command in ("case", "dataset") and action is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    if (args.command, action) == ("case", "inspect"):
        return cmd_case_inspect(args)
    handler = _COMMANDS[(args.command, action)]
    recorded = {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(vars(args).items())}
    manifest = RunManifest(" ".join(filter(None, [args.command, action])), recorded)
    start = time.perf_counter()
    code = handler(args, manifest)
    manifest.wall_time = time.perf_counter() - start
    if code == EXIT_OK and manifest.outputs:
        manifest.write(Path(args.out))
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_USAGE
    if args.threads is not None:
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(limits=args.threads)
    else:
        limiter = nullcontext()
    try:
        with limiter:
            return _dispatch(args, parser)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FloatingPointError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    raise SystemExit(main())
