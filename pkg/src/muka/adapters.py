"""Training-free classifiers over cached embeddings.

All five methods share one shape: a query embedding is scored against N
classes, and the score is (up to the linear probe) a zero-shot cosine term
plus an optional correction built from a small labeled support set.

* ``ZeroShot``          logits = x . W, the text head alone
* ``TipAdapter``        tau * zero-shot + alpha * RBF-weighted label votes
* ``ProKeR``            tau * zero-shot + kernel ridge residual, one space
* ``MUKA``              ProKeR with a product kernel over several spaces
* ``LinearProbe``       softmax regression trained on the supports

The residual methods never iterate: the coefficient matrix gamma solves
the symmetric positive-definite system

    (I + K / lam) gamma = L - tau * zs(S)

where K is the support Gram matrix, L the one-hot labels, and zs(S) the
zero-shot logits at the supports. Predictions are then

    tau * zs(x) + k(x, S) gamma.

Large lam lets gamma absorb the full residual L - tau * zs(S); lam -> 0
shrinks gamma to zero and recovers the zero-shot classifier.

Estimators follow the scikit-learn protocol: hyperparameters are set in
``__init__`` and stored verbatim, ``fit(X, y, heads=...)`` learns state
into trailing-underscore attributes, and ``predict``/``decision_function``
score new queries. ``X`` is a mapping from space name to an (n, dim) array
of unit-norm rows; fitted adapters are immutable in practice and safe to
share across threads for prediction.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .errors import (
    DimensionMismatch,
    EmptyClass,
    NonFiniteLoss,
    SchemaError,
    SingularSystem,
    SpaceMismatch,
)
from .kernels import KernelSpec, cross_kernel, gram
from .store import ZeroShotHead
from .validation import check_embedding_map, check_labels, check_row_norms

__all__ = [
    "SupportSet",
    "one_hot",
    "zero_shot_logits",
    "predict_labels",
    "solve_spd",
    "probe_loss_and_grad",
    "ZeroShot",
    "TipAdapter",
    "ProKeR",
    "MUKA",
    "LinearProbe",
    "METHODS",
    "make_adapter",
]


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """(m, N) float64 indicator matrix with exactly one 1 per row."""
    labels = check_labels(labels, num_classes=num_classes)
    out = np.zeros((labels.shape[0], num_classes), dtype=np.float64)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


@dataclass(frozen=True, eq=False)
class SupportSet:
    """The few-shot cache: per-space support embeddings plus labels.

    Row order is shared across spaces. Every class must contribute at
    least one support and at most ``shots_per_class`` (classes with fewer
    training samples than requested contribute all they have).
    """

    embeddings: Mapping[str, np.ndarray]
    labels: np.ndarray
    num_classes: int
    shots_per_class: int

    def __post_init__(self):
        emb = check_embedding_map(self.embeddings, name="support embeddings")
        labels = check_labels(self.labels, num_classes=self.num_classes, name="support labels")
        if self.shots_per_class < 1:
            raise SchemaError(f"shots_per_class must be >= 1, got {self.shots_per_class}")
        for space, arr in emb.items():
            if arr.shape[0] != labels.shape[0]:
                raise DimensionMismatch(
                    f"space {space!r} holds {arr.shape[0]} supports for "
                    f"{labels.shape[0]} labels"
                )
            check_row_norms(arr, name=f"support embeddings[{space!r}]")
            arr.setflags(write=False)
        counts = np.bincount(labels, minlength=self.num_classes)
        missing = np.flatnonzero(counts == 0)
        if missing.size:
            raise EmptyClass(int(missing[0]))
        if counts.max() > self.shots_per_class:
            c = int(np.argmax(counts))
            raise SchemaError(
                f"class {c} has {counts[c]} supports, more than the "
                f"{self.shots_per_class} shots requested"
            )
        labels.setflags(write=False)
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return self.labels.shape[0]

    @property
    def spaces(self) -> tuple[str, ...]:
        return tuple(self.embeddings)

    def onehot(self) -> np.ndarray:
        return one_hot(self.labels, self.num_classes)


def _space_matrix(x, space: str, name: str = "X") -> np.ndarray:
    """Pull one space's (m, dim) float64 matrix out of ``x``.

    ``x`` may be a mapping of spaces or a bare array already in the
    wanted space.
    """
    if isinstance(x, Mapping):
        if space not in x:
            raise SpaceMismatch(
                f"{name} carries spaces {sorted(x)} but space {space!r} is needed"
            )
        arr = x[space]
    else:
        arr = x
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be 1-D or 2-D, got ndim={arr.ndim}")
    return arr


def _single_query(x) -> bool:
    """True when ``x`` is one bare vector rather than a batch or a mapping."""
    return not isinstance(x, Mapping) and np.asarray(x).ndim == 1


def zero_shot_logits(x, head: ZeroShotHead) -> np.ndarray:
    """Cosine logits of queries against a text head: x @ W.

    ``x`` is a space mapping, an (m, dim) matrix, or a single vector; the
    result is (m, N), or (N,) for a single vector. On unit-norm inputs
    every logit lies in [-1, 1].
    """
    single = _single_query(x)
    arr = _space_matrix(x, head.space_name, name="query")
    if arr.shape[1] != head.dim:
        raise DimensionMismatch(
            f"query dim {arr.shape[1]} does not match head dim {head.dim}"
        )
    logits = arr @ head.weights
    return logits[0] if single else logits


def predict_labels(logits: np.ndarray) -> np.ndarray:
    """Argmax per row; ties go to the lowest class index."""
    arr = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DimensionMismatch("logits must be finite")
    if arr.ndim == 1:
        return int(np.argmax(arr))
    return np.argmax(arr, axis=1)


def solve_spd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a x = b for symmetric positive-definite ``a`` by Cholesky.

    The ridge systems solved here have eigenvalues >= 1, so factorization
    failure indicates corrupt input. A diagonal jitter of 1e-10, escalated
    tenfold at most three times, is kept as a safety net before giving up
    with SingularSystem.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise SingularSystem("system holds non-finite values")
    jitter = 0.0
    for attempt in range(5):
        try:
            system = a if jitter == 0.0 else a + jitter * np.eye(a.shape[0])
            factor = cho_factor(system, lower=True, check_finite=False)
            return cho_solve(factor, b, check_finite=False)
        except np.linalg.LinAlgError:
            jitter = 1e-10 if jitter == 0.0 else jitter * 10.0
    raise SingularSystem(
        f"factorization failed even with diagonal jitter {jitter / 10.0:g}"
    )


def _as_heads_map(heads) -> dict[str, ZeroShotHead]:
    if heads is None:
        raise SchemaError("fit requires heads (pass heads=... to fit)")
    if isinstance(heads, ZeroShotHead):
        return {heads.space_name: heads}
    if isinstance(heads, Mapping):
        out = {}
        for space, head in heads.items():
            if not isinstance(head, ZeroShotHead):
                raise SchemaError(f"heads[{space!r}] is not a ZeroShotHead")
            if head.space_name != space:
                raise SpaceMismatch(
                    f"head for space {space!r} names itself {head.space_name!r}"
                )
            out[space] = head
        if not out:
            raise SchemaError("heads mapping is empty")
        return out
    raise SchemaError("heads must be a ZeroShotHead or a mapping of them")


def _resolve_space(requested: str | None, available: tuple[str, ...], what: str) -> str:
    if requested is None:
        return available[0]
    if requested not in available:
        raise SpaceMismatch(
            f"{what} space {requested!r} not among available spaces {list(available)}"
        )
    return requested


class ZeroShot(BaseEstimator, ClassifierMixin):
    """Classify by cosine similarity against a text head.

    No support data is used; ``fit`` only selects the head. ``space``
    defaults to the first space of the heads mapping.
    """

    def __init__(self, space: str | None = None):
        self.space = space

    def fit(self, X, y=None, heads=None):
        heads = _as_heads_map(heads)
        space = _resolve_space(self.space, tuple(heads), "zero-shot")
        self.head_ = heads[space]
        self.classes_ = np.arange(self.head_.num_classes)
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "head_")
        return zero_shot_logits(X, self.head_)

    def predict(self, X) -> np.ndarray:
        return predict_labels(self.decision_function(X))


class TipAdapter(BaseEstimator, ClassifierMixin):
    """Zero-shot logits plus an RBF-weighted vote of support labels.

    logits(x) = tau * (x . W) + alpha * sum_i exp(-beta/2 ||S_i - x||^2) L_i

    Training-free: ``fit`` caches the supports, nothing is optimized.
    """

    def __init__(
        self,
        space: str | None = None,
        alpha: float = 1.0,
        beta: float = 1.0,
        tau: float = 1.0,
    ):
        self.space = space
        self.alpha = alpha
        self.beta = beta
        self.tau = tau

    def fit(self, X, y, heads=None):
        if self.alpha < 0:
            raise SchemaError(f"alpha must be nonnegative, got {self.alpha}")
        heads = _as_heads_map(heads)
        X = check_embedding_map(X)
        space = _resolve_space(self.space, tuple(X), "support")
        if space not in heads:
            raise SpaceMismatch(f"no head for space {space!r}")
        head = heads[space]
        y = check_labels(y, num_classes=head.num_classes)
        self.support_ = SupportSet(
            embeddings={space: X[space]},
            labels=y,
            num_classes=head.num_classes,
            shots_per_class=int(np.bincount(y).max()),
        )
        self.head_ = head
        self.kernel_ = KernelSpec.single(space, self.beta)
        self.classes_ = np.arange(head.num_classes)
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "support_")
        space = self.head_.space_name
        queries = {space: _space_matrix(X, space, name="X")}
        zs = zero_shot_logits(queries[space], self.head_)
        k = cross_kernel(queries, self.support_.embeddings, self.kernel_)
        logits = self.tau * zs + self.alpha * (k @ self.support_.onehot())
        return logits[0] if _single_query(X) else logits

    def predict(self, X) -> np.ndarray:
        return predict_labels(self.decision_function(X))


def _fit_kernel_ridge(
    support: SupportSet, head: ZeroShotHead, spec: KernelSpec, lam: float, tau: float
) -> np.ndarray:
    """Solve (I + K/lam) gamma = L - tau * zs(S) for the residual coefficients."""
    k = gram(support.embeddings, spec)
    residual = support.onehot() - tau * zero_shot_logits(support.embeddings, head)
    system = np.eye(k.shape[0]) + k / lam
    return solve_spd(system, residual)


def _kernel_ridge_logits(
    X, support: SupportSet, head: ZeroShotHead, spec: KernelSpec, gamma: np.ndarray, tau: float
) -> np.ndarray:
    needed = dict.fromkeys((*spec.spaces, head.space_name))
    if isinstance(X, Mapping):
        queries = {space: _space_matrix(X, space, name="X") for space in needed}
    else:
        if len(needed) > 1:
            raise SpaceMismatch(
                "a bare array cannot feed a multi-space adapter; pass a mapping"
            )
        queries = {next(iter(needed)): _space_matrix(X, head.space_name, name="X")}
    zs = zero_shot_logits(queries[head.space_name], head)
    k = cross_kernel(queries, support.embeddings, spec)
    logits = tau * zs + k @ gamma
    return logits[0] if _single_query(X) else logits


class ProKeR(BaseEstimator, ClassifierMixin):
    """Kernel ridge residual on top of the zero-shot classifier, one space.

    ``fit`` solves (I + K/lam) gamma = L - tau * zs(S) in closed form;
    prediction adds k(x, S) gamma to the scaled zero-shot logits. Large
    ``lam`` interpolates the supports' residuals, small ``lam`` falls back
    to zero-shot.

    ``head_space`` lets the zero-shot term come from a different space
    than the residual kernel (it defaults to the kernel's space).
    """

    def __init__(
        self,
        space: str | None = None,
        lam: float = 1.0,
        beta: float = 1.0,
        tau: float = 1.0,
        head_space: str | None = None,
    ):
        self.space = space
        self.lam = lam
        self.beta = beta
        self.tau = tau
        self.head_space = head_space

    def fit(self, X, y, heads=None):
        if not self.lam > 0:
            raise SchemaError(f"lam must be > 0, got {self.lam}")
        heads = _as_heads_map(heads)
        X = check_embedding_map(X)
        space = _resolve_space(self.space, tuple(X), "support")
        head_space = space if self.head_space is None else self.head_space
        if head_space not in X:
            raise SpaceMismatch(f"inputs carry no space {head_space!r} for the zero-shot head")
        if head_space not in heads:
            raise SpaceMismatch(f"no head for space {head_space!r}")
        head = heads[head_space]
        y = check_labels(y, num_classes=head.num_classes)
        self.support_ = SupportSet(
            embeddings={s: X[s] for s in dict.fromkeys((space, head_space))},
            labels=y,
            num_classes=head.num_classes,
            shots_per_class=int(np.bincount(y).max()),
        )
        self.head_ = head
        self.kernel_ = KernelSpec.single(space, self.beta)
        self.gamma_ = _fit_kernel_ridge(self.support_, head, self.kernel_, self.lam, self.tau)
        self.classes_ = np.arange(head.num_classes)
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "gamma_")
        return _kernel_ridge_logits(
            X, self.support_, self.head_, self.kernel_, self.gamma_, self.tau
        )

    def predict(self, X) -> np.ndarray:
        return predict_labels(self.decision_function(X))


class MUKA(BaseEstimator, ClassifierMixin):
    """ProKeR with a product kernel across every available space.

    Each space contributes an RBF factor with its own bandwidth; the
    product is again a valid kernel, so the same closed-form ridge solve
    applies. ``beta`` is a single float shared by all spaces or a mapping
    of per-space bandwidths. The zero-shot term uses ``head_space``
    (default: the first space of the support mapping).
    """

    def __init__(
        self,
        beta: float | Mapping[str, float] = 1.0,
        lam: float = 1.0,
        tau: float = 1.0,
        head_space: str | None = None,
        spaces: tuple[str, ...] | None = None,
    ):
        self.beta = beta
        self.lam = lam
        self.tau = tau
        self.head_space = head_space
        self.spaces = spaces

    def _kernel_spec(self, available: tuple[str, ...]) -> KernelSpec:
        spaces = tuple(self.spaces) if self.spaces is not None else available
        for space in spaces:
            if space not in available:
                raise SpaceMismatch(f"kernel space {space!r} not in inputs {list(available)}")
        if isinstance(self.beta, Mapping):
            missing = set(spaces) - set(self.beta)
            if missing:
                raise SchemaError(f"beta mapping lacks bandwidths for {sorted(missing)}")
            return KernelSpec.product({s: float(self.beta[s]) for s in spaces})
        return KernelSpec.product({s: float(self.beta) for s in spaces})

    def fit(self, X, y, heads=None):
        if not self.lam > 0:
            raise SchemaError(f"lam must be > 0, got {self.lam}")
        heads = _as_heads_map(heads)
        X = check_embedding_map(X)
        spec = self._kernel_spec(tuple(X))
        head_space = spec.spaces[0] if self.head_space is None else self.head_space
        if head_space not in X:
            raise SpaceMismatch(f"inputs carry no space {head_space!r} for the zero-shot head")
        if head_space not in heads:
            raise SpaceMismatch(f"no head for space {head_space!r}")
        head = heads[head_space]
        y = check_labels(y, num_classes=head.num_classes)
        self.support_ = SupportSet(
            embeddings={s: X[s] for s in dict.fromkeys((*spec.spaces, head_space))},
            labels=y,
            num_classes=head.num_classes,
            shots_per_class=int(np.bincount(y).max()),
        )
        self.head_ = head
        self.kernel_ = spec
        self.gamma_ = _fit_kernel_ridge(self.support_, head, spec, self.lam, self.tau)
        self.classes_ = np.arange(head.num_classes)
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "gamma_")
        return _kernel_ridge_logits(
            X, self.support_, self.head_, self.kernel_, self.gamma_, self.tau
        )

    def predict(self, X) -> np.ndarray:
        return predict_labels(self.decision_function(X))


def probe_loss_and_grad(
    weights: np.ndarray, x: np.ndarray, labels_onehot: np.ndarray, weight_decay: float
) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient for a linear model.

    ``weights`` is (dim+1, N) with the bias in the last row; ``x`` is
    (m, dim+1) with a trailing column of ones already appended. The L2
    penalty (weight_decay/2) ||W||^2 excludes the bias row.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        z = x @ weights
        zmax = z.max(axis=1, keepdims=True)
        log_norm = zmax[:, 0] + np.log(np.sum(np.exp(z - zmax), axis=1))
        m = x.shape[0]
        ce = float(np.mean(log_norm - np.sum(z * labels_onehot, axis=1)))
        loss = ce + 0.5 * weight_decay * float(np.sum(weights[:-1] ** 2))
        probs = np.exp(z - log_norm[:, None])
        grad = x.T @ (probs - labels_onehot) / m
        grad[:-1] += weight_decay * weights[:-1]
    return loss, grad


class LinearProbe(BaseEstimator, ClassifierMixin):
    """Softmax regression on the support embeddings of one space.

    Full-batch gradient descent from zero weights, so the fit is exactly
    reproducible. Weights and bias live in ``coef_`` with the bias as the
    last row.
    """

    def __init__(
        self,
        space: str | None = None,
        learning_rate: float = 0.1,
        epochs: int = 500,
        weight_decay: float = 1e-4,
    ):
        self.space = space
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.weight_decay = weight_decay

    def fit(self, X, y, heads=None):
        if self.epochs < 0:
            raise SchemaError(f"epochs must be >= 0, got {self.epochs}")
        X = check_embedding_map(X)
        space = _resolve_space(self.space, tuple(X), "probe")
        if heads is not None:
            heads = _as_heads_map(heads)
            head = heads.get(space, next(iter(heads.values())))
            num_classes = head.num_classes
        else:
            num_classes = int(np.max(np.asarray(y))) + 1
        y = check_labels(y, num_classes=num_classes)
        features = X[space]
        check_row_norms(features, name="probe features")
        design = np.hstack([features, np.ones((features.shape[0], 1))])
        targets = one_hot(y, num_classes)

        weights = np.zeros((design.shape[1], num_classes))
        loss, grad = probe_loss_and_grad(weights, design, targets, self.weight_decay)
        self.initial_loss_ = loss
        for _ in range(self.epochs):
            weights = weights - self.learning_rate * grad
            loss, grad = probe_loss_and_grad(weights, design, targets, self.weight_decay)
            if not np.isfinite(loss):
                raise NonFiniteLoss(
                    f"training loss diverged at learning_rate={self.learning_rate}"
                )
        self.final_loss_ = loss
        self.coef_ = weights
        self.space_ = space
        self.classes_ = np.arange(num_classes)
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        arr = _space_matrix(X, self.space_, name="X")
        if arr.shape[1] + 1 != self.coef_.shape[0]:
            raise DimensionMismatch(
                f"query dim {arr.shape[1]} does not match probe dim {self.coef_.shape[0] - 1}"
            )
        logits = arr @ self.coef_[:-1] + self.coef_[-1]
        return logits[0] if _single_query(X) else logits

    def predict(self, X) -> np.ndarray:
        return predict_labels(self.decision_function(X))


METHODS: tuple[str, ...] = ("zeroshot", "tip", "proker", "muka", "linearprobe")

_METHOD_CLASSES = {
    "zeroshot": ZeroShot,
    "tip": TipAdapter,
    "proker": ProKeR,
    "muka": MUKA,
    "linearprobe": LinearProbe,
}


def make_adapter(method: str, params: Mapping[str, object] | None = None):
    """Instantiate an adapter by method name with hyperparameter overrides.

    Unknown method names and unknown parameter keys are rejected rather
    than silently ignored.
    """
    if method not in _METHOD_CLASSES:
        raise SchemaError(
            f"unknown method {method!r}; choose one of {list(METHODS)}"
        )
    cls = _METHOD_CLASSES[method]
    params = dict(params or {})
    valid = cls().get_params()
    unknown = sorted(set(params) - set(valid))
    if unknown:
        raise SchemaError(f"{method} does not accept parameters {unknown}")
    return cls(**params)
