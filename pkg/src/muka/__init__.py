"""Training-free few-shot adaptation over cached multimodal embeddings.

The package turns precomputed audio/text embedding matrices into few-shot
classifiers without touching an encoder: zero-shot cosine scoring, a
cache-based residual adapter, single-space kernel ridge residuals, their
multi-space product-kernel generalization, and a linear-probe baseline,
plus the sampling/evaluation/tuning protocol and a benchmark CLI.
"""
from . import errors
from .adapters import (
    METHODS,
    MUKA,
    LinearProbe,
    ProKeR,
    SupportSet,
    TipAdapter,
    ZeroShot,
    make_adapter,
    one_hot,
    predict_labels,
    probe_loss_and_grad,
    solve_spd,
    zero_shot_logits,
)
from .kernels import KernelSpec, cross_kernel, gram, kernel_value, sq_dists, weighted_sq_dists
from .protocol import (
    DEFAULT_SEEDS,
    EvalEntry,
    EvalReport,
    FewShotTask,
    HyperGrid,
    TuneResult,
    ablate,
    default_jobs,
    evaluate,
    grid_table,
    run_protocol,
    sample_task,
    shots_curve,
    tune,
)
from .store import (
    Dataset,
    DatasetManifest,
    EmbeddingMatrix,
    ZeroShotHead,
    l2_normalize,
    load_manifest,
    load_matrix,
    read_header,
    write_matrix,
)
from .synth import PRESETS, SynthPreset, generate, oracle_kernel_ridge, oracle_nadaraya_watson
from .version import __version__

__all__ = [
    "__version__",
    "errors",
    # adapters
    "METHODS",
    "MUKA",
    "LinearProbe",
    "ProKeR",
    "SupportSet",
    "TipAdapter",
    "ZeroShot",
    "make_adapter",
    "one_hot",
    "predict_labels",
    "probe_loss_and_grad",
    "solve_spd",
    "zero_shot_logits",
    # kernels
    "KernelSpec",
    "cross_kernel",
    "gram",
    "kernel_value",
    "sq_dists",
    "weighted_sq_dists",
    # protocol
    "DEFAULT_SEEDS",
    "EvalEntry",
    "EvalReport",
    "FewShotTask",
    "HyperGrid",
    "TuneResult",
    "ablate",
    "default_jobs",
    "evaluate",
    "grid_table",
    "run_protocol",
    "sample_task",
    "shots_curve",
    "tune",
    # store
    "Dataset",
    "DatasetManifest",
    "EmbeddingMatrix",
    "ZeroShotHead",
    "l2_normalize",
    "load_manifest",
    "load_matrix",
    "read_header",
    "write_matrix",
    # synth
    "PRESETS",
    "SynthPreset",
    "generate",
    "oracle_kernel_ridge",
    "oracle_nadaraya_watson",
]
