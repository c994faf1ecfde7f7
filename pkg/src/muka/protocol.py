"""Few-shot evaluation protocol: sampling, multi-seed runs, tuning.

The unit of work is one (seed, fold) evaluation: sample K supports per
class from the train split, fit an adapter, score the full test split.
``run_protocol`` fans these units out over seeds (and folds when the
dataset defines them) and aggregates a report; ``tune`` grid-searches
hyperparameters per method; ``shots_curve`` sweeps K; ``ablate`` runs the
four head-space/kernel-space configurations of a two-space dataset.

Everything is deterministic: each unit derives its RNG from (seed, fold)
alone, so thread scheduling cannot change what is sampled, and reports
serialize with sorted keys and no timestamps, so identical inputs yield
byte-identical report files.
"""
from __future__ import annotations

import itertools
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .adapters import METHODS, make_adapter
from .errors import EmptyClass, InvalidShots, MissingSpace, SchemaError
from .store import Dataset, DatasetManifest, atomic_write_text
from .version import __version__

DEFAULT_ALPHA_GRID = (0.1, 0.5, 1.0, 2.0, 4.0, 8.0)
DEFAULT_INV_LAMBDA_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)
DEFAULT_BETA_GRID = (0.5, 1.0, 2.0, 5.0, 10.0, 20.0)
DEFAULT_TAU_GRID = (1.0, 5.0, 10.0, 30.0)
DEFAULT_SEEDS = (0, 1, 2)


def _axis(values: Sequence[float], name: str, positive: bool) -> tuple[float, ...]:
    out = tuple(sorted({float(v) for v in values}))
    if not out:
        raise SchemaError(f"{name} grid must be nonempty")
    low = 0.0 if positive else -np.inf
    bad = [v for v in out if not np.isfinite(v) or (positive and v <= low) or v < 0]
    if bad:
        raise SchemaError(f"{name} grid holds out-of-domain values {bad}")
    return out


@dataclass(frozen=True)
class HyperGrid:
    """Axis values for the grid search, deduplicated and sorted.

    ``beta_values`` maps each space to its bandwidth axis. Methods ignore
    the axes they have no use for: the zero-shot and linear-probe rows
    collapse to a single cell, the cache adapter drops lambda, the
    single-space ridge adapters drop alpha.
    """

    methods: tuple[str, ...]
    alpha_values: tuple[float, ...]
    lambda_values: tuple[float, ...]
    tau_values: tuple[float, ...]
    beta_values: tuple[tuple[str, tuple[float, ...]], ...]

    def __post_init__(self):
        if not self.methods:
            raise SchemaError("grid must name at least one method")
        unknown = sorted(set(self.methods) - set(METHODS))
        if unknown:
            raise SchemaError(f"grid names unknown methods {unknown}")
        object.__setattr__(self, "alpha_values", _axis(self.alpha_values, "alpha", False))
        object.__setattr__(self, "lambda_values", _axis(self.lambda_values, "lambda", True))
        object.__setattr__(self, "tau_values", _axis(self.tau_values, "tau", True))
        if not self.beta_values:
            raise SchemaError("grid must carry a beta axis for at least one space")
        object.__setattr__(
            self,
            "beta_values",
            tuple(
                (space, _axis(vals, f"beta[{space}]", True))
                for space, vals in self.beta_values
            ),
        )

    @classmethod
    def default(cls, spaces: Sequence[str], methods: Sequence[str] = METHODS) -> "HyperGrid":
        return cls(
            methods=tuple(methods),
            alpha_values=DEFAULT_ALPHA_GRID,
            lambda_values=tuple(1.0 / v for v in DEFAULT_INV_LAMBDA_GRID),
            tau_values=DEFAULT_TAU_GRID,
            beta_values=tuple((s, DEFAULT_BETA_GRID) for s in spaces),
        )

    def betas_for(self, space: str) -> tuple[float, ...]:
        for name, vals in self.beta_values:
            if name == space:
                return vals
        raise SchemaError(f"grid has no beta axis for space {space!r}")

    @property
    def beta_spaces(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.beta_values)


@dataclass(frozen=True)
class FewShotTask:
    """One sampled episode: support indices per class plus the query set."""

    manifest: DatasetManifest
    shots: int
    seed: int
    fold: int | None
    support_indices: tuple[int, ...]
    query_indices: tuple[int, ...]
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        overlap = set(self.support_indices) & set(self.query_indices)
        if overlap:
            raise SchemaError(
                f"support and query sets overlap on samples {sorted(overlap)[:5]}"
            )


def sample_task(
    manifest: DatasetManifest, shots: int, seed: int, fold: int | None = None
) -> FewShotTask:
    """Draw K supports per class from the train split, deterministically.

    The RNG is seeded from (seed, fold) alone. Classes are visited in
    order; within a class, candidate rows are taken in ascending sample
    index and sampled without replacement. A class with fewer than K
    training samples contributes everything it has, with a warning.
    Queries are the entire test split (or the fold's test part).
    """
    if shots < 1:
        raise InvalidShots(f"shots must be >= 1, got {shots}")
    if fold is not None:
        if not manifest.folds:
            raise SchemaError("manifest defines no folds")
        if not 0 <= fold < len(manifest.folds):
            raise SchemaError(
                f"fold {fold} out of range for {len(manifest.folds)} folds"
            )
    labels = manifest.labels_by_sample()
    if fold is None:
        train = [idx for idx, _ in manifest.split_train]
        query = tuple(idx for idx, _ in manifest.split_test)
    else:
        train = list(manifest.folds[fold].train)
        query = tuple(manifest.folds[fold].test)

    fold_code = 0 if fold is None else fold + 1
    rng = np.random.default_rng([seed % 2**63, fold_code])

    by_class: dict[int, list[int]] = {c: [] for c in range(manifest.num_classes)}
    for idx in train:
        by_class[labels[idx]].append(idx)

    support: list[int] = []
    warnings: list[str] = []
    for c in range(manifest.num_classes):
        candidates = sorted(by_class[c])
        if not candidates:
            raise EmptyClass(c)
        if len(candidates) <= shots:
            if len(candidates) < shots:
                warnings.append(
                    f"class {c} has only {len(candidates)} training samples "
                    f"for {shots} requested shots; using all of them"
                )
            chosen = candidates
        else:
            picks = rng.choice(len(candidates), size=shots, replace=False)
            chosen = sorted(candidates[i] for i in picks)
        support.extend(chosen)

    return FewShotTask(
        manifest=manifest,
        shots=shots,
        seed=seed,
        fold=fold,
        support_indices=tuple(support),
        query_indices=query,
        warnings=tuple(warnings),
    )


def _take(dataset: Dataset, indices: Sequence[int]) -> dict[str, np.ndarray]:
    rows = np.asarray(indices, dtype=np.intp)
    return {s: dataset.embeddings[s][rows] for s in dataset.space_names}


def evaluate(
    dataset: Dataset,
    task: FewShotTask,
    method: str,
    params: Mapping[str, object] | None = None,
) -> float:
    """Fit one adapter on the task's supports and score its queries."""
    labels = dataset.manifest.labels_by_sample()
    y_support = np.array([labels[i] for i in task.support_indices])
    y_query = np.array([labels[i] for i in task.query_indices])
    adapter = make_adapter(method, params)
    adapter.fit(_take(dataset, task.support_indices), y_support, heads=dataset.heads)
    predicted = adapter.predict(_take(dataset, task.query_indices))
    return float(np.sum(predicted == y_query)) / len(y_query)


@dataclass(frozen=True)
class EvalEntry:
    seed: int
    fold: int | None
    accuracy: float


@dataclass(frozen=True)
class EvalReport:
    """One protocol run: per-(seed, fold) accuracies and their mean."""

    dataset: str
    method: str
    config: Mapping[str, object]
    shots: int
    seeds: tuple[int, ...]
    entries: tuple[EvalEntry, ...]
    mean_accuracy: float
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "method": self.method,
            "config": _jsonable(self.config),
            "shots": self.shots,
            "seeds": list(self.seeds),
            "entries": [
                {"seed": e.seed, "fold": e.fold, "accuracy": e.accuracy}
                for e in self.entries
            ],
            "mean_accuracy": self.mean_accuracy,
            "warnings": list(self.warnings),
            "normalization": "l2",
            "engine_version": __version__,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def write(self, path: Path | str) -> None:
        atomic_write_text(path, self.to_json())


def _jsonable(value):
    if isinstance(value, Mapping):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return value


def default_jobs() -> int:
    env = os.environ.get("MUKA_JOBS", "").strip()
    if env:
        try:
            jobs = int(env)
        except ValueError:
            raise SchemaError(f"MUKA_JOBS must be an integer, got {env!r}") from None
        if jobs < 1:
            raise SchemaError(f"MUKA_JOBS must be >= 1, got {jobs}")
        return jobs
    return os.cpu_count() or 1


def _run_units(units, fn, jobs: int | None):
    jobs = default_jobs() if jobs is None else jobs
    if jobs <= 1 or len(units) <= 1:
        return [fn(u) for u in units]
    with ThreadPoolExecutor(max_workers=min(jobs, len(units))) as pool:
        return list(pool.map(fn, units))


def run_protocol(
    dataset: Dataset,
    method: str,
    params: Mapping[str, object] | None = None,
    shots: int = 16,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    folds: str = "all",
    jobs: int | None = None,
) -> EvalReport:
    """Evaluate one configuration over every (seed, fold) pair.

    ``folds="all"`` uses the manifest's folds when it defines any;
    ``folds="none"`` evaluates the plain train/test split either way.
    Results do not depend on ``jobs``: sampling is seeded per unit.
    """
    if folds not in ("all", "none"):
        raise SchemaError(f'folds must be "all" or "none", got {folds!r}')
    if not seeds:
        raise SchemaError("seeds must be nonempty")
    fold_ids: tuple[int | None, ...]
    if folds == "all" and dataset.manifest.folds:
        fold_ids = tuple(range(len(dataset.manifest.folds)))
    else:
        fold_ids = (None,)
    units = [(seed, fold) for seed in seeds for fold in fold_ids]

    def run_unit(unit):
        seed, fold = unit
        task = sample_task(dataset.manifest, shots, seed, fold)
        return evaluate(dataset, task, method, params), task.warnings

    results = _run_units(units, run_unit, jobs)
    entries = tuple(
        EvalEntry(seed=seed, fold=fold, accuracy=acc)
        for (seed, fold), (acc, _) in zip(units, results)
    )
    warnings: list[str] = []
    for _, unit_warnings in results:
        for w in unit_warnings:
            if w not in warnings:
                warnings.append(w)
    mean = sum(e.accuracy for e in entries) / len(entries)
    config = dict(make_adapter(method, params).get_params())
    return EvalReport(
        dataset=dataset.name,
        method=method,
        config=config,
        shots=shots,
        seeds=tuple(int(s) for s in seeds),
        entries=entries,
        mean_accuracy=mean,
        warnings=tuple(warnings),
    )


def _method_cells(method: str, grid: HyperGrid, spaces: tuple[str, ...]):
    """Grid cells for one method, in canonical tie-break order.

    Cells iterate lambda ascending, then alpha, then the per-space beta
    tuple lexicographically, then tau, with irrelevant axes collapsed.
    Scanning in this order and keeping only strict improvements makes the
    winner the smallest (lambda, alpha, beta, tau) among the tied best.
    """
    lams = grid.lambda_values
    alphas = grid.alpha_values
    taus = grid.tau_values
    if method in ("zeroshot", "linearprobe"):
        yield {}
        return
    if method == "tip":
        space = spaces[0]
        for alpha, beta, tau in itertools.product(alphas, grid.betas_for(space), taus):
            yield {"alpha": alpha, "beta": beta, "tau": tau}
        return
    if method == "proker":
        space = spaces[0]
        for lam, beta, tau in itertools.product(lams, grid.betas_for(space), taus):
            yield {"lam": lam, "beta": beta, "tau": tau}
        return
    if method == "muka":
        kernel_spaces = tuple(s for s in grid.beta_spaces if s in spaces)
        if not kernel_spaces:
            raise SchemaError("grid has no beta axis for any dataset space")
        axes = [grid.betas_for(s) for s in kernel_spaces]
        for lam in lams:
            for betas in itertools.product(*axes):
                for tau in taus:
                    yield {"lam": lam, "beta": dict(zip(kernel_spaces, betas)), "tau": tau}
        return
    raise SchemaError(f"unknown method {method!r}")


@dataclass(frozen=True)
class TuneResult:
    """Winning configuration per method plus the full grid table."""

    best: Mapping[str, Mapping[str, object]]
    rows: tuple[Mapping[str, object], ...]

    def transfer_dict(self) -> dict:
        """Per-method configs in the shape `eval --config` consumes."""
        return {m: _jsonable(dict(cfg)) for m, cfg in self.best.items()}


def tune(
    dataset: Dataset,
    grid: HyperGrid,
    shots: int = 16,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    folds: str = "all",
    jobs: int | None = None,
) -> TuneResult:
    """Exhaustive grid search on the tuning dataset, one winner per method.

    Every cell is scored with ``run_protocol``; the emitted rows hold one
    line per cell. Tuning optimizes the tuning dataset's own evaluation
    accuracy (the transfer workflow then reuses the winners elsewhere).
    """
    spaces = dataset.space_names
    best: dict[str, dict] = {}
    rows: list[dict] = []
    for method in grid.methods:
        best_acc = -1.0
        best_params: dict | None = None
        for cell in _method_cells(method, grid, spaces):
            report = run_protocol(
                dataset, method, cell, shots=shots, seeds=seeds, folds=folds, jobs=jobs
            )
            rows.append(
                {
                    "method": method,
                    "alpha": cell.get("alpha"),
                    "lam": cell.get("lam"),
                    "tau": cell.get("tau"),
                    "beta": cell.get("beta"),
                    "mean_accuracy": report.mean_accuracy,
                }
            )
            if report.mean_accuracy > best_acc:
                best_acc = report.mean_accuracy
                best_params = dict(cell)
        assert best_params is not None
        best[method] = best_params
    return TuneResult(best=best, rows=tuple(rows))


def grid_table(result: TuneResult, spaces: Sequence[str]) -> str:
    """Render tune rows as a comma-separated table with a header row."""
    header = ["method", "alpha", "lambda", "tau"]
    header += [f"beta_{s}" for s in spaces] + ["mean_accuracy"]
    lines = [",".join(header)]
    for row in result.rows:
        beta = row.get("beta")
        if isinstance(beta, Mapping):
            beta_cols = [_fmt(beta.get(s)) for s in spaces]
        else:
            beta_cols = [_fmt(beta)] + [""] * (len(spaces) - 1)
        cells = [
            str(row["method"]),
            _fmt(row.get("alpha")),
            _fmt(row.get("lam")),
            _fmt(row.get("tau")),
            *beta_cols,
            repr(float(row["mean_accuracy"])),
        ]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _fmt(value) -> str:
    return "" if value is None else repr(float(value))


def shots_curve(
    dataset: Dataset,
    method: str,
    params: Mapping[str, object] | None = None,
    shots_list: Sequence[int] = (1, 2, 4, 8, 16),
    seeds: Sequence[int] = DEFAULT_SEEDS,
    folds: str = "all",
    jobs: int | None = None,
) -> tuple[EvalReport, ...]:
    """One ``run_protocol`` per K, for plot-ready accuracy-vs-shots data."""
    if not shots_list:
        raise InvalidShots("shots_list must be nonempty")
    shots_list = [int(k) for k in shots_list]
    if any(k < 1 for k in shots_list):
        raise InvalidShots(f"shot counts must be >= 1, got {shots_list}")
    if any(b <= a for a, b in zip(shots_list, shots_list[1:])):
        raise InvalidShots(f"shot counts must be strictly ascending, got {shots_list}")
    return tuple(
        run_protocol(dataset, method, params, shots=k, seeds=seeds, folds=folds, jobs=jobs)
        for k in shots_list
    )


ABLATION_ROWS = ("a", "b", "c", "d")


def ablate(
    dataset: Dataset,
    shots: int = 16,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    lam: float = 1.0,
    beta: float = 1.0,
    tau: float = 1.0,
    folds: str = "all",
    jobs: int | None = None,
) -> dict[str, EvalReport]:
    """The four head-space x kernel-space configurations, same hyperparameters.

    With spaces (A, B):
      a: head A, residual kernel on A        (single-space ridge)
      b: head B, residual kernel on B
      c: head A, residual kernel on B        (mixed spaces)
      d: head A, product kernel on A x B     (multi-space)
    """
    spaces = dataset.space_names
    if len(spaces) < 2:
        raise MissingSpace(spaces[0] if spaces else "second")
    s0, s1 = spaces[0], spaces[1]
    configs = {
        "a": ("proker", {"space": s0, "lam": lam, "beta": beta, "tau": tau}),
        "b": ("proker", {"space": s1, "lam": lam, "beta": beta, "tau": tau}),
        "c": ("proker", {"space": s1, "head_space": s0, "lam": lam, "beta": beta, "tau": tau}),
        "d": (
            "muka",
            {
                "spaces": (s0, s1),
                "head_space": s0,
                "lam": lam,
                "beta": {s0: beta, s1: beta},
                "tau": tau,
            },
        ),
    }
    return {
        row: run_protocol(
            dataset, method, params, shots=shots, seeds=seeds, folds=folds, jobs=jobs
        )
        for row, (method, params) in configs.items()
    }
