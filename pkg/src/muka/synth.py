"""Synthetic two-space benchmark datasets, plus brute-force oracles.

Real embedding extractions need pretrained audio/text encoders; these
generators produce small datasets with the same geometry (unit-norm
embeddings, unit-norm text heads, shared sample indexing across spaces) so
every adapter property can be exercised on a laptop. Three presets:

* ``aligned``        class clusters sit exactly on the head directions in
                     both spaces; zero-shot alone solves the task as noise
                     shrinks.
* ``complementary``  classes come in pairs; each pair shares a cluster
                     center in one space (ambiguous there) and is split in
                     the other. Even pairs are ambiguous in the first
                     space, odd pairs in the second, so neither space
                     separates everything but the pair of spaces does.
* ``redundant``      the second space is a verbatim copy of the first,
                     embeddings and head alike; single-space and mixed
                     configurations must then collapse to the same answer.

Generation is deterministic: a named PCG64 stream seeded from the preset,
hand-rolled modified Gram-Schmidt for the heads (no LAPACK dependence in
the output bits), and float32 storage. The preset parameters, including
the RNG name, are recorded in the manifest's ``synth`` block.

The oracles at the bottom re-derive adapter quantities by the slowest,
most-direct route (per-pair kernel loops, plain gradient descent) and are
used only by tests.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adapters import SupportSet, zero_shot_logits
from .errors import NoConvergence, NumericalError, SchemaError
from .kernels import KernelSpec, kernel_value
from .store import (
    DatasetManifest,
    EmbeddingMatrix,
    ZeroShotHead,
    atomic_write_text,
    l2_normalize,
    load_manifest,
    write_matrix,
)

PRESETS = ("aligned", "complementary", "redundant")
SPACE_NAMES = ("fine", "coarse")


@dataclass(frozen=True)
class SynthPreset:
    """Parameters pinning one synthetic dataset, bit for bit."""

    name: str
    num_classes: int = 4
    dims: tuple[int, int] = (16, 12)
    samples_per_class: int = 64
    sigma: float = 0.25
    seed: int = 0
    folds: int = 0

    def __post_init__(self):
        if self.name not in PRESETS:
            raise SchemaError(f"unknown preset {self.name!r}; choose from {list(PRESETS)}")
        if self.num_classes < 2:
            raise SchemaError(f"num_classes must be >= 2, got {self.num_classes}")
        if len(self.dims) != 2 or any(d < 1 for d in self.dims):
            raise SchemaError(f"dims must be two positive integers, got {self.dims}")
        if min(self.dims) < self.num_classes:
            raise SchemaError(
                f"dims {self.dims} too small for {self.num_classes} orthonormal heads"
            )
        if self.name == "redundant" and self.dims[0] != self.dims[1]:
            raise SchemaError("the redundant preset copies space 0 into space 1; dims must match")
        if self.samples_per_class < 2 or self.samples_per_class % 2:
            raise SchemaError(
                f"samples_per_class must be even and >= 2, got {self.samples_per_class}"
            )
        if not self.sigma > 0:
            raise SchemaError(f"sigma must be > 0, got {self.sigma}")
        if self.folds < 0 or self.folds == 1:
            raise SchemaError(f"folds must be 0 (none) or >= 2, got {self.folds}")


def _orthonormal_columns(rng: np.random.Generator, dim: int, n: int) -> np.ndarray:
    """Random orthonormal (dim, n) basis by modified Gram-Schmidt.

    Two projection passes keep orthogonality near machine precision; the
    arithmetic is plain numpy so the bits do not depend on the local
    LAPACK build.
    """
    g = rng.standard_normal((dim, n))
    q = np.zeros((dim, n))
    for j in range(n):
        v = g[:, j].copy()
        for _ in range(2):
            for i in range(j):
                v -= (q[:, i] @ v) * q[:, i]
        norm = np.linalg.norm(v)
        if norm < 1e-8:
            raise NumericalError("degenerate Gaussian draw during orthonormalization")
        q[:, j] = v / norm
    return q


def _cluster_centers(preset: SynthPreset, heads: list[np.ndarray]) -> list[np.ndarray]:
    """Per-space (N, dim) center matrix for each class's cluster."""
    n = preset.num_classes
    centers = [h.T.copy() for h in heads]  # start at the head directions
    if preset.name != "complementary":
        return centers
    for pair in range(n // 2):
        a, b = 2 * pair, 2 * pair + 1
        ambiguous_space = pair % 2
        h = heads[ambiguous_space]
        shared = h[:, a] + h[:, b]
        shared /= np.linalg.norm(shared)
        centers[ambiguous_space][a] = shared
        centers[ambiguous_space][b] = shared
    return centers


def _make_folds(preset: SynthPreset) -> list[dict] | None:
    if not preset.folds:
        return None
    n, spc, k = preset.num_classes, preset.samples_per_class, preset.folds
    folds = []
    for f in range(k):
        test = [c * spc + j for c in range(n) for j in range(spc) if j % k == f]
        train = [c * spc + j for c in range(n) for j in range(spc) if j % k != f]
        folds.append({"train": train, "test": test})
    return folds


def generate(preset: SynthPreset, out_dir: Path | str) -> DatasetManifest:
    """Write a complete dataset (matrices, heads, manifest) to ``out_dir``.

    Returns the parsed manifest of what was written. Identical presets
    produce bit-identical files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(preset.seed)
    n, spc = preset.num_classes, preset.samples_per_class

    heads = [_orthonormal_columns(rng, dim, n) for dim in preset.dims]
    if preset.name == "redundant":
        heads[1] = heads[0].copy()
    centers = _cluster_centers(preset, heads)

    samples: list[np.ndarray] = []
    for space in range(2):
        if preset.name == "redundant" and space == 1:
            samples.append(samples[0].copy())
            continue
        dim = preset.dims[space]
        rows = np.empty((n * spc, dim))
        for c in range(n):
            noise = rng.standard_normal((spc, dim))
            rows[c * spc : (c + 1) * spc] = centers[space][c] + preset.sigma * noise
        norms = np.linalg.norm(rows, axis=1, keepdims=True)
        samples.append(rows / norms)

    spaces_meta = []
    for i, space_name in enumerate(SPACE_NAMES):
        audio_name = f"{space_name}_audio.mkm"
        head_name = f"{space_name}_head.mkm"
        write_matrix(EmbeddingMatrix(space_name, samples[i]), out_dir / audio_name)
        write_matrix(EmbeddingMatrix(space_name, heads[i].T), out_dir / head_name)
        spaces_meta.append(
            {
                "space_name": space_name,
                "dim": preset.dims[i],
                "audio_matrix_path": audio_name,
                "text_head_path": head_name,
            }
        )

    half = spc // 2
    split_train = [[c * spc + j, c] for c in range(n) for j in range(half)]
    split_test = [[c * spc + j, c] for c in range(n) for j in range(half, spc)]

    manifest = {
        "name": f"synth-{preset.name}-s{preset.seed}",
        "class_names": [f"class_{c:02d}" for c in range(n)],
        "spaces": spaces_meta,
        "split_train": split_train,
        "split_test": split_test,
        "folds": _make_folds(preset),
        "synth": {
            "preset": preset.name,
            "num_classes": n,
            "dims": list(preset.dims),
            "samples_per_class": spc,
            "sigma": preset.sigma,
            "seed": preset.seed,
            "folds": preset.folds,
            "rng": "PCG64",
            "note": "synthetic engineering construction, not a model of real encoders",
        },
    }
    if manifest["folds"] is None:
        del manifest["folds"]
    atomic_write_text(
        out_dir / "manifest.json", json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    )
    return load_manifest(out_dir / "manifest.json")


# ---------------------------------------------------------------------------
# brute-force oracles (test utilities)

def oracle_kernel_ridge(
    support: SupportSet,
    head: ZeroShotHead,
    kernel: KernelSpec,
    lam: float,
    tau: float = 1.0,
    max_steps: int = 500_000,
    tol: float = 1e-10,
) -> np.ndarray:
    """Residual coefficients by gradient descent, for small instances.

    Minimizes the quadratic G(c) = 1/2 c' (I + K/lam) c - <L - tau zs(S), c>
    whose unique stationary point solves (I + K/lam) c = L - tau zs(S). The
    Gram matrix comes from per-pair kernel evaluations, the step size from
    the Gershgorin bound on the system's largest eigenvalue; convergence is
    declared at max-abs gradient <= tol.
    """
    nk = support.size
    k = np.empty((nk, nk))
    rows = {s: np.asarray(m) for s, m in support.embeddings.items()}
    for i in range(nk):
        for j in range(nk):
            k[i, j] = kernel_value(
                {s: rows[s][i] for s in rows}, {s: rows[s][j] for s in rows}, kernel
            )
    zs = np.empty((nk, support.num_classes))
    for i in range(nk):
        zs[i] = zero_shot_logits(rows[head.space_name][i], head)
    residual = support.onehot() - tau * zs

    k_over_lam = k / lam
    lipschitz = 1.0 + float(np.abs(k_over_lam).sum(axis=1).max())
    step = 1.0 / lipschitz
    gamma = np.zeros_like(residual)
    for it in range(max_steps):
        grad = gamma + k_over_lam @ gamma - residual
        if it % 25 == 0 and float(np.abs(grad).max()) <= tol:
            return gamma
        gamma -= step * grad
    grad = gamma + k_over_lam @ gamma - residual
    if float(np.abs(grad).max()) <= tol:
        return gamma
    raise NoConvergence(
        f"gradient descent did not reach {tol:g} within {max_steps} steps"
    )


def oracle_nadaraya_watson(x, support: SupportSet, kernel: KernelSpec) -> np.ndarray:
    """Kernel-weighted label average sum_i k(S_i, x) L_i / sum_i k(S_i, x).

    The unnormalized numerator is the shape of the residual vote summed by
    the cache adapter; this normalized form is the classical regression
    estimate. The denominator is always positive since every kernel value
    is.
    """
    rows = {s: np.asarray(m) for s, m in support.embeddings.items()}
    onehot = support.onehot()
    numerator = np.zeros(support.num_classes)
    denominator = 0.0
    for i in range(support.size):
        w = kernel_value({s: rows[s][i] for s in rows}, x, kernel)
        numerator += w * onehot[i]
        denominator += w
    return numerator / denominator
