"""Command-line benchmark surface.

Subcommands:

* ``synth``        generate a synthetic dataset into a directory
* ``validate``     check a manifest and its referenced matrix files
* ``eval``         evaluate one method on a dataset
* ``tune``         grid-search hyperparameters per method
* ``ablate``       run the four head-space/kernel-space configurations
* ``shots-curve``  sweep the number of shots

Exit codes: 0 success, 1 validation error (bad arguments, malformed
inputs), 2 I/O error, 3 numerical failure. Reports are written atomically
and contain no timestamps, so identical invocations produce byte-identical
files. Hyperparameters can come from a JSON config file (``--config``),
either one flat parameter object or a method-to-parameters map such as the
transfer file ``tune`` writes; inline flags override config file values.
``--jobs`` (or the MUKA_JOBS environment variable) caps parallel
evaluation units.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Mapping

from .adapters import METHODS
from .errors import MukaError, NumericalError, SchemaError
from .protocol import (
    DEFAULT_SEEDS,
    HyperGrid,
    ablate,
    grid_table,
    run_protocol,
    shots_curve,
    tune,
)
from .store import Dataset, atomic_write_text, manifest_checks, parse_manifest
from .synth import PRESETS, SynthPreset, generate
from .version import __version__


def _parse_seeds(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(part) for part in text.split(",") if part.strip() != "")
    except ValueError:
        raise SchemaError(f"--seeds expects comma-separated integers, got {text!r}") from None
    if not seeds:
        raise SchemaError("--seeds must name at least one seed")
    return seeds


def _parse_ints(text: str, flag: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip() != "")
    except ValueError:
        raise SchemaError(f"{flag} expects comma-separated integers, got {text!r}") from None


def _parse_beta(text: str):
    """``2.0`` -> float; ``fine=2,coarse=5`` -> per-space mapping."""
    if "=" not in text:
        try:
            return float(text)
        except ValueError:
            raise SchemaError(f"--beta expects a number or space=value pairs, got {text!r}") from None
    out: dict[str, float] = {}
    for part in text.split(","):
        if not part.strip():
            continue
        name, _, value = part.partition("=")
        if not name or not value:
            raise SchemaError(f"--beta entry {part!r} is not space=value")
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise SchemaError(f"--beta value for {name.strip()!r} is not a number: {value!r}") from None
    if not out:
        raise SchemaError(f"--beta parsed to nothing: {text!r}")
    return out


def _load_json(path: str, what: str) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{what} {path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise SchemaError(f"{what} {path}: expected a JSON object")
    return raw


def _gather_params(args) -> dict:
    """Merge config-file parameters with inline flags (inline wins)."""
    params: dict = {}
    if getattr(args, "config", None):
        raw = _load_json(args.config, "config file")
        is_method_map = raw and all(
            key in METHODS and isinstance(val, Mapping) for key, val in raw.items()
        )
        if is_method_map:
            params.update(raw.get(args.method, {}))
        else:
            params.update(raw)
    inline = {
        "space": getattr(args, "space", None),
        "head_space": getattr(args, "head_space", None),
        "alpha": getattr(args, "alpha", None),
        "lam": getattr(args, "lam", None),
        "tau": getattr(args, "tau", None),
        "learning_rate": getattr(args, "learning_rate", None),
        "epochs": getattr(args, "epochs", None),
        "weight_decay": getattr(args, "weight_decay", None),
    }
    if getattr(args, "beta", None) is not None:
        inline["beta"] = _parse_beta(args.beta)
    params.update({k: v for k, v in inline.items() if v is not None})
    return params


def _add_eval_flags(p: argparse.ArgumentParser, with_method: bool = True) -> None:
    p.add_argument("--manifest", required=True, help="dataset manifest path")
    if with_method:
        p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--shots", type=int, default=16, help="supports per class (default 16)")
    p.add_argument("--seeds", default=",".join(str(s) for s in DEFAULT_SEEDS),
                   help="comma-separated seeds (default 0,1,2)")
    p.add_argument("--folds", choices=("all", "none"), default="all",
                   help="use the manifest's folds, if any (default all)")
    p.add_argument("--jobs", type=int, default=None,
                   help="parallel evaluation units (default: MUKA_JOBS or CPU count)")


def _add_param_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--space", help="feature space for single-space methods")
    p.add_argument("--head-space", dest="head_space", help="space providing the zero-shot head")
    p.add_argument("--alpha", type=float, help="residual scale (tip)")
    p.add_argument("--beta", help="bandwidth: a number, or space=value pairs")
    p.add_argument("--lambda", dest="lam", type=float, help="ridge regularization (proker/muka)")
    p.add_argument("--tau", type=float, help="zero-shot temperature")
    p.add_argument("--learning-rate", dest="learning_rate", type=float, help="probe learning rate")
    p.add_argument("--epochs", type=int, help="probe epochs")
    p.add_argument("--weight-decay", dest="weight_decay", type=float, help="probe weight decay")
    p.add_argument("--config", help="JSON config file (flat params or method map)")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="muka", description="Few-shot adapter benchmark over cached embeddings"
    )
    parser.add_argument("--version", action="version", version=f"muka {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--preset", required=True, choices=PRESETS)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--dims", default="16,12", help="per-space dims, e.g. 16,12")
    p.add_argument("--samples", type=int, default=64, help="samples per class (even)")
    p.add_argument("--sigma", type=float, default=0.25, help="cluster noise before renormalizing")
    p.add_argument("--synth-folds", dest="synth_folds", type=int, default=0,
                   help="emit this many cross-validation folds (0 = none)")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("validate", help="check a manifest and its files")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("eval", help="evaluate one method")
    _add_eval_flags(p)
    _add_param_flags(p)
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--verbose", action="store_true", help="print per-(seed, fold) entries")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("tune", help="grid-search hyperparameters per method")
    _add_eval_flags(p, with_method=False)
    p.add_argument("--methods", default=",".join(METHODS),
                   help="comma-separated methods (default: all)")
    p.add_argument("--grid", help="JSON grid file overriding the default axes")
    p.add_argument("--out-table", dest="out_table", help="write the grid CSV here")
    p.add_argument("--out-config", dest="out_config",
                   help="write the winning configs (transfer file) here")
    p.set_defaults(func=_cmd_tune)

    p = sub.add_parser("ablate", help="run the four space configurations")
    _add_eval_flags(p, with_method=False)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0, help="shared bandwidth for all rows")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--out", help="write the JSON reports (one object, rows a-d) here")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("shots-curve", help="sweep the number of shots")
    _add_eval_flags(p)
    _add_param_flags(p)
    p.add_argument("--shots-list", dest="shots_list", default="1,2,4,8,16",
                   help="ascending shot counts (default 1,2,4,8,16)")
    p.add_argument("--out", help="write the CSV curve here")
    p.set_defaults(func=_cmd_shots_curve)
    return parser


def _cmd_synth(args) -> int:
    dims = _parse_ints(args.dims, "--dims")
    if len(dims) != 2:
        raise SchemaError(f"--dims expects two integers, got {args.dims!r}")
    preset = SynthPreset(
        name=args.preset,
        num_classes=args.classes,
        dims=(dims[0], dims[1]),
        samples_per_class=args.samples,
        sigma=args.sigma,
        seed=args.seed,
        folds=args.synth_folds,
    )
    manifest = generate(preset, args.out)
    print(
        f"wrote {manifest.name}: {manifest.num_classes} classes, "
        f"spaces {list(manifest.space_names)}, manifest {manifest.path}"
    )
    return 0


def _cmd_validate(args) -> int:
    try:
        manifest = parse_manifest(args.manifest)
    except MukaError as exc:
        print(f"[fail] manifest parses: {exc}")
        return 1
    print("[pass] manifest parses")
    failures = 0
    for name, err in manifest_checks(manifest):
        if err is None:
            print(f"[pass] {name}")
        else:
            failures += 1
            print(f"[fail] {name}: {err}")
    return 0 if failures == 0 else 1


def _summary(report) -> str:
    return (
        f"dataset={report.dataset} method={report.method} shots={report.shots} "
        f"seeds={','.join(str(s) for s in report.seeds)} "
        f"mean_accuracy={report.mean_accuracy:.4f}"
    )


def _cmd_eval(args) -> int:
    dataset = Dataset.load(args.manifest)
    report = run_protocol(
        dataset,
        args.method,
        _gather_params(args),
        shots=args.shots,
        seeds=_parse_seeds(args.seeds),
        folds=args.folds,
        jobs=args.jobs,
    )
    if args.verbose:
        for e in report.entries:
            fold = "-" if e.fold is None else e.fold
            print(f"seed={e.seed} fold={fold} accuracy={e.accuracy:.4f}")
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if args.out:
        report.write(args.out)
    print(_summary(report))
    return 0


def _cmd_tune(args) -> int:
    dataset = Dataset.load(args.manifest)
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    if args.grid:
        grid = _grid_from_file(args.grid, methods, dataset.space_names)
    else:
        grid = HyperGrid.default(dataset.space_names, methods=methods)
    result = tune(
        dataset,
        grid,
        shots=args.shots,
        seeds=_parse_seeds(args.seeds),
        folds=args.folds,
        jobs=args.jobs,
    )
    if args.out_table:
        atomic_write_text(args.out_table, grid_table(result, dataset.space_names))
    if args.out_config:
        atomic_write_text(
            args.out_config, json.dumps(result.transfer_dict(), sort_keys=True, indent=2) + "\n"
        )
    by_method = {row["method"]: 0 for row in result.rows}
    for row in result.rows:
        by_method[row["method"]] += 1
    for method in methods:
        acc = max(r["mean_accuracy"] for r in result.rows if r["method"] == method)
        print(
            f"dataset={dataset.name} method={method} shots={args.shots} "
            f"cells={by_method[method]} best_mean_accuracy={acc:.4f} "
            f"best_config={json.dumps(result.transfer_dict()[method], sort_keys=True)}"
        )
    return 0


def _grid_from_file(path: str, methods, spaces) -> HyperGrid:
    raw = _load_json(path, "grid file")
    known = {"alpha", "lambda", "tau", "beta", "methods"}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise SchemaError(f"grid file has unknown keys {unknown}; expected {sorted(known)}")
    if "methods" in raw:
        methods = tuple(raw["methods"])
    defaults = HyperGrid.default(spaces)
    beta = raw.get("beta")
    if beta is None:
        beta_values = defaults.beta_values
    elif isinstance(beta, Mapping):
        beta_values = tuple((s, tuple(v)) for s, v in beta.items())
    elif isinstance(beta, list):
        beta_values = tuple((s, tuple(beta)) for s in spaces)
    else:
        raise SchemaError("grid beta must be a list or a space-to-list object")
    return HyperGrid(
        methods=methods,
        alpha_values=tuple(raw.get("alpha", defaults.alpha_values)),
        lambda_values=tuple(raw.get("lambda", defaults.lambda_values)),
        tau_values=tuple(raw.get("tau", defaults.tau_values)),
        beta_values=beta_values,
    )


def _cmd_ablate(args) -> int:
    dataset = Dataset.load(args.manifest)
    reports = ablate(
        dataset,
        shots=args.shots,
        seeds=_parse_seeds(args.seeds),
        lam=args.lam,
        beta=args.beta,
        tau=args.tau,
        folds=args.folds,
        jobs=args.jobs,
    )
    if args.out:
        body = {row: report.to_dict() for row, report in reports.items()}
        atomic_write_text(args.out, json.dumps(body, sort_keys=True, indent=2) + "\n")
    for row, report in reports.items():
        cfg = report.config
        head = cfg.get("head_space") or cfg.get("space")
        kernel = cfg.get("spaces") or (cfg.get("space"),)
        print(f"row={row} head={head} kernel={' x '.join(kernel)} {_summary(report)}")
    return 0


def _cmd_shots_curve(args) -> int:
    dataset = Dataset.load(args.manifest)
    reports = shots_curve(
        dataset,
        args.method,
        _gather_params(args),
        shots_list=_parse_ints(args.shots_list, "--shots-list"),
        seeds=_parse_seeds(args.seeds),
        folds=args.folds,
        jobs=args.jobs,
    )
    lines = ["shots,mean_accuracy"]
    for report in reports:
        lines.append(f"{report.shots},{report.mean_accuracy!r}")
        print(_summary(report))
    if args.out:
        atomic_write_text(args.out, "\n".join(lines) + "\n")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 for --help/--version;
        # fold usage errors into the validation exit code.
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except MukaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
